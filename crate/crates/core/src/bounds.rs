//! Explicit constants of the ℓ1 oracle inequality for mixtures of Gaussian
//! regressions: the design scale `‖x‖_{max,n}`, the truncation level `M_n`,
//! the score bound `C_{M_n}`, the tail probability bound, the penalty
//! threshold and the right-hand side of the inequality.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParameterBox;

pub const DEFAULT_KAPPA: f64 = 36.0;
pub const DEFAULT_KAPPA_PRIME: f64 = 332.0;

fn ln_n(n: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::Argument(format!("n = {n}: need n >= 2 so that log n > 0")));
    }
    Ok((n as f64).ln())
}

/// `√((1/n) Σ_i max_j x_ij²)`.
pub fn x_max_n(design: &DMatrix<f64>) -> Result<f64> {
    if design.nrows() == 0 || design.ncols() == 0 {
        return Err(Error::Argument("design is empty".into()));
    }
    let total: f64 = design
        .row_iter()
        .map(|row| {
            let m = row.amax();
            m * m
        })
        .sum();
    Ok((total / design.nrows() as f64).sqrt())
}

/// `M_n = A_β + √(A_β² + 4 log n / a_Σ)`.
pub fn m_n(bx: &ParameterBox, n: usize) -> Result<f64> {
    Ok(m_n_at(bx, ln_n(n)?))
}

/// [`m_n`] with `log n` supplied directly.
pub fn m_n_at(bx: &ParameterBox, log_n: f64) -> f64 {
    let a = bx.mean_max;
    a + (a * a + 4.0 * log_n / bx.precision_min).sqrt()
}

/// `C_{M_n} = max(1/a_π, A_Σ + ½(M_n+A_β)²A_Σ², q(M_n+A_β)A_Σ/2)`.
pub fn c_mn(bx: &ParameterBox, m_n: f64, q: usize) -> f64 {
    bx.score_bound(q, m_n)
}

/// Closed-form majorant `(A_Σ ∨ 1/a_π)(1 + 4(q+1)A_Σ(A_β² + log n/a_Σ))`.
pub fn c_mn_majorant(bx: &ParameterBox, n: usize, q: usize) -> Result<f64> {
    Ok(majorant_at(bx, ln_n(n)?, q, 4.0))
}

fn majorant_at(bx: &ParameterBox, log_n: f64, q: usize, factor: f64) -> f64 {
    let a = bx.mean_max;
    bx.scale_factor()
        * (1.0 + factor * (q as f64 + 1.0) * bx.precision_max * (a * a + log_n / bx.precision_min))
}

/// `R_n = 2 C_{M_n} (1 + k(A_β + Ã_Σ))`.
pub fn r_n(bx: &ParameterBox, k: usize, c_mn: f64) -> f64 {
    2.0 * c_mn * (1.0 + k as f64 * (bx.mean_max + bx.cov_max))
}

/// `Δ_m = m ‖x‖_{max,n} log n √(k log(2p+1)) + 6(1 + k(A_β + Ã_Σ))`.
pub fn delta_m(
    m: f64,
    x_max_n: f64,
    n: usize,
    k: usize,
    p: usize,
    bx: &ParameterBox,
) -> Result<f64> {
    Ok(delta_m_at(m, x_max_n, ln_n(n)?, k, p, bx))
}

/// [`delta_m`] with `log n` supplied directly.
pub fn delta_m_at(m: f64, x_max_n: f64, log_n: f64, k: usize, p: usize, bx: &ParameterBox) -> f64 {
    m * x_max_n * log_n * entropy_factor(k, p) + 6.0 * (1.0 + k as f64 * (bx.mean_max + bx.cov_max))
}

/// `√(k log(2p+1))`.
fn entropy_factor(k: usize, p: usize) -> f64 {
    (k as f64 * (2.0 * p as f64 + 1.0).ln()).sqrt()
}

/// Natural log of the δ-packing bound
/// `(2p+1)^{4C²k²q²m²‖x‖²/δ²} (1 + 8Cq²kA_Σ/δ)^k (1 + 8C/δ)^k`.
#[allow(clippy::too_many_arguments)]
pub fn packing_bound(
    delta: f64,
    m: f64,
    c_mn: f64,
    k: usize,
    p: usize,
    q: usize,
    x_max_n: f64,
    precision_max: f64,
) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::Argument(format!("delta = {delta} must be positive")));
    }
    let (kf, qf) = (k as f64, q as f64);
    let exponent = 4.0 * c_mn * c_mn * kf * kf * qf * qf * m * m * x_max_n * x_max_n / (delta * delta);
    Ok(exponent * (2.0 * p as f64 + 1.0).ln()
        + kf * (8.0 * c_mn * qf * qf * kf * precision_max / delta).ln_1p()
        + kf * (8.0 * c_mn / delta).ln_1p())
}

/// Smallest penalty allowed by the oracle inequality:
/// `κ (A_Σ ∨ 1/a_π)(1 + 4(q+1)A_Σ(A_β² + log n/a_Σ)) √(k/n) (1 + q‖x‖ log n √(k log(2p+1)))`.
pub fn lambda_threshold(
    bx: &ParameterBox,
    n: usize,
    p: usize,
    q: usize,
    k: usize,
    x_max_n: f64,
    kappa: f64,
) -> Result<f64> {
    let log_n = ln_n(n)?;
    Ok(kappa
        * majorant_at(bx, log_n, q, 4.0)
        * (k as f64 / n as f64).sqrt()
        * (1.0 + q as f64 * x_max_n * log_n * entropy_factor(k, p)))
}

/// Threshold derived directly from `C_{M_n}`:
/// `(4C_{M_n}/√n) √k (1 + 9q‖x‖ log n √(k log(2p+1)))`.
pub fn internal_threshold(
    c_mn: f64,
    n: usize,
    p: usize,
    q: usize,
    k: usize,
    x_max_n: f64,
) -> Result<f64> {
    let log_n = ln_n(n)?;
    Ok(4.0 * c_mn / (n as f64).sqrt()
        * (k as f64).sqrt()
        * (1.0 + 9.0 * q as f64 * x_max_n * log_n * entropy_factor(k, p)))
}

fn tail_exponent(bx: &ParameterBox, m_n: f64) -> f64 {
    (m_n * m_n - 2.0 * m_n * bx.mean_max + bx.mean_min * bx.mean_min) * bx.precision_min
}

/// `(π/(qA_Σ))^{q/2}`.
fn gaussian_volume(bx: &ParameterBox, q: usize) -> f64 {
    (PI / (q as f64 * bx.precision_max)).powf(q as f64 / 2.0)
}

/// Tail bound as stated:
/// `e^{-1/2} π^{q/2} (qA_Σ)^{-q/2} √(2knqa_π) e^{-¼(M_n² − 2M_nA_β + a_β²)a_Σ}`.
pub fn tail_bound(bx: &ParameterBox, n: usize, k: usize, q: usize, m_n: f64) -> f64 {
    (-0.5f64).exp()
        * gaussian_volume(bx, q)
        * (2.0 * (k * n * q) as f64 * bx.weight_min).sqrt()
        * (-0.25 * tail_exponent(bx, m_n)).exp()
}

/// Bound on `P(T^c)` reached at the end of the tail argument:
/// `2knqa_π e^{-½(M_n² − 2M_nA_β + a_β²)a_Σ}`.
pub fn tail_bound_proof(bx: &ParameterBox, n: usize, k: usize, q: usize, m_n: f64) -> f64 {
    2.0 * (k * n * q) as f64 * bx.weight_min * (-0.5 * tail_exponent(bx, m_n)).exp()
}

/// Which statement the remainder term of the right-hand side follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemainderForm {
    /// Penalized-estimator statement (default).
    #[default]
    Lasso,
    /// ℓ1-ball model-selection statement.
    ModelSelection,
}

/// Inputs to [`oracle_rhs`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleQuery {
    #[serde(rename = "box")]
    pub bx: ParameterBox,
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub k: usize,
    pub x_max_n: f64,
    pub lambda: f64,
    pub kl_ref: f64,
    pub l1_ref: f64,
    pub kappa: f64,
    pub kappa_prime: f64,
    #[serde(default)]
    pub form: RemainderForm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RhsTerms {
    /// `(1 + 1/κ)(KL_n(s_0, s_ref) + λ|s_ref|₁)`.
    pub approximation_term: f64,
    /// `λ`.
    pub lambda_term: f64,
    /// `√(k/n) κ′ [...]`.
    pub remainder_term: f64,
}

/// Every constant entering the oracle inequality for one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub k: usize,
    pub x_max_n: f64,
    pub m_n: f64,
    pub c_mn: f64,
    pub r_n: f64,
    pub lambda: f64,
    pub lambda_min: f64,
    pub below_threshold: bool,
    pub kappa: f64,
    pub kappa_prime: f64,
    pub form: RemainderForm,
    pub oracle_rhs_terms: RhsTerms,
    pub oracle_rhs_total: f64,
    pub tail_bound: f64,
    pub tail_bound_proof: f64,
}

impl BoundReport {
    /// Two-column text table of every entry.
    pub fn to_table(&self) -> String {
        let rows: [(&str, String); 18] = [
            ("n", self.n.to_string()),
            ("p", self.p.to_string()),
            ("q", self.q.to_string()),
            ("k", self.k.to_string()),
            ("x_max_n", fmt(self.x_max_n)),
            ("M_n", fmt(self.m_n)),
            ("C_Mn", fmt(self.c_mn)),
            ("R_n", fmt(self.r_n)),
            ("kappa", fmt(self.kappa)),
            ("kappa_prime", fmt(self.kappa_prime)),
            ("lambda", fmt(self.lambda)),
            ("lambda_min", fmt(self.lambda_min)),
            ("approximation_term", fmt(self.oracle_rhs_terms.approximation_term)),
            ("lambda_term", fmt(self.oracle_rhs_terms.lambda_term)),
            ("remainder_term", fmt(self.oracle_rhs_terms.remainder_term)),
            ("oracle_rhs_total", fmt(self.oracle_rhs_total)),
            ("tail_bound", fmt(self.tail_bound)),
            ("tail_bound_proof", fmt(self.tail_bound_proof)),
        ];
        let mut out = String::new();
        for (name, value) in rows {
            out.push_str(&format!("{name:<20} {value}\n"));
        }
        if self.below_threshold {
            out.push_str("warning: lambda is below lambda_min\n");
        }
        out
    }
}

fn fmt(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e6 || v.abs() < 1e-3) {
        format!("{v:.6e}")
    } else {
        format!("{v:.6}")
    }
}

/// Assemble the right-hand side of the oracle inequality,
///
/// ```text
/// (1 + 1/κ)(kl_ref + λ·l1_ref) + λ
///   + √(k/n) κ′ [ e^{-½-¼a_β²a_Σ} π^{q/2} a_π (qA_Σ)^{-q/2} √(2q)
///                 + (A_Σ ∨ 1/a_π)(1 + 4(q+1)A_Σ(A_β² + log n/a_Σ)) k (1 + A_β + Ã_Σ)² ]
/// ```
///
/// together with `M_n`, `C_{M_n}`, `R_n`, the penalty threshold and both tail
/// bounds. With [`RemainderForm::ModelSelection`] the remainder is
///
/// ```text
/// κ′√(k/n) e^{-½-¼a_β²a_Σ} π^{q/2} (qA_Σ)^{-q/2} √(2qa_π)
///   + κ′√(k/n) κ′ k (A_Σ ∨ 1/a_π)(1 + 2(q+1)A_Σ(A_β² + log n/a_Σ))(1 + A_β + Ã_Σ)²
/// ```
pub fn oracle_rhs(query: &OracleQuery) -> Result<BoundReport> {
    let OracleQuery {
        bx,
        n,
        p,
        q,
        k,
        x_max_n,
        lambda,
        kl_ref,
        l1_ref,
        kappa,
        kappa_prime,
        form,
    } = *query;
    bx.validate()?;
    if k == 0 || p == 0 || q == 0 {
        return Err(Error::Argument("k, p and q must be at least 1".into()));
    }
    for (name, v) in [("lambda", lambda), ("kl_ref", kl_ref), ("l1_ref", l1_ref)] {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(Error::Argument(format!("{name} = {v} must be finite and non-negative")));
        }
    }
    if !(kappa > 0.0) || !(kappa_prime > 0.0) {
        return Err(Error::Argument("kappa and kappa_prime must be positive".into()));
    }
    let log_n = ln_n(n)?;
    let mn = m_n_at(&bx, log_n);
    let c = c_mn(&bx, mn, q);
    let lambda_min = lambda_threshold(&bx, n, p, q, k, x_max_n, kappa)?;
    if lambda < lambda_min {
        log::warn!("lambda = {lambda} is below the threshold {lambda_min}");
    }

    let root = (k as f64 / n as f64).sqrt();
    let gauss = (-0.5 - 0.25 * bx.mean_min * bx.mean_min * bx.precision_min).exp()
        * gaussian_volume(&bx, q);
    let spread = (1.0 + bx.mean_max + bx.cov_max).powi(2);
    let remainder = match form {
        RemainderForm::Lasso => {
            root * kappa_prime
                * (gauss * bx.weight_min * (2.0 * q as f64).sqrt()
                    + majorant_at(&bx, log_n, q, 4.0) * k as f64 * spread)
        }
        RemainderForm::ModelSelection => {
            kappa_prime * root * gauss * (2.0 * q as f64 * bx.weight_min).sqrt()
                + kappa_prime * root * kappa_prime * k as f64 * majorant_at(&bx, log_n, q, 2.0) * spread
        }
    };
    let terms = RhsTerms {
        approximation_term: (1.0 + 1.0 / kappa) * (kl_ref + lambda * l1_ref),
        lambda_term: lambda,
        remainder_term: remainder,
    };
    Ok(BoundReport {
        n,
        p,
        q,
        k,
        x_max_n,
        m_n: mn,
        c_mn: c,
        r_n: r_n(&bx, k, c),
        lambda,
        lambda_min,
        below_threshold: lambda < lambda_min,
        kappa,
        kappa_prime,
        form,
        oracle_rhs_terms: terms,
        oracle_rhs_total: terms.approximation_term + terms.lambda_term + terms.remainder_term,
        tail_bound: tail_bound(&bx, n, k, q, mn),
        tail_bound_proof: tail_bound_proof(&bx, n, k, q, mn),
    })
}
