//! Mixture-of-Gaussian-regressions parameters, conditional density and the
//! bounded parameter box.
//!
//! A model with `k` components maps a covariate vector `x ∈ R^p` to the
//! conditional density
//!
//! ```text
//! s(y | x) = Σ_r π_r N_q(y; β_r x, Σ_r)
//! ```
//!
//! where each `β_r` is a `q × p` coefficient matrix and each `Σ_r` a `q × q`
//! SPD covariance.

mod density;
mod gradient;
mod projection;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub(crate) use density::log_sum_exp_in_place;
pub(crate) use projection::{clip_coefficients, clip_covariance};
pub use density::{log_sum_exp, mixture_log_density, MixtureDensity};
pub use gradient::{gradient_bound_constant, log_density_gradient, LogDensityGradient};
pub use projection::{
    check_box_membership, mean_lower_bound_shortfalls, project_to_box, project_weights,
    BoxViolation, Constraint,
};

/// Relative slack used when deciding whether a value sits inside a box bound.
pub const BOX_TOL: f64 = 1e-9;
const WEIGHT_SUM_TOL: f64 = 1e-12;
const SYMMETRY_TOL: f64 = 1e-10;

/// Full parameter vector of a `k`-component mixture regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ParamsDocument", into = "ParamsDocument")]
pub struct ModelParams {
    p: usize,
    q: usize,
    weights: Vec<f64>,
    coefficients: Vec<DMatrix<f64>>,
    covariances: Vec<DMatrix<f64>>,
}

impl ModelParams {
    /// Build and validate a parameter set.
    ///
    /// Weights must be positive and sum to one, coefficient matrices must all be
    /// `q × p`, and covariances must be symmetric positive definite `q × q`.
    pub fn new(
        weights: Vec<f64>,
        coefficients: Vec<DMatrix<f64>>,
        covariances: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return Err(Error::Shape("mixture needs at least one component".into()));
        }
        if coefficients.len() != k || covariances.len() != k {
            return Err(Error::Shape(format!(
                "{k} weights but {} coefficient matrices and {} covariances",
                coefficients.len(),
                covariances.len()
            )));
        }
        let (q, p) = coefficients[0].shape();
        if p == 0 || q == 0 {
            return Err(Error::Shape("p and q must be at least 1".into()));
        }
        for (r, b) in coefficients.iter().enumerate() {
            if b.shape() != (q, p) {
                return Err(Error::Shape(format!(
                    "coefficients of component {r} are {:?}, expected ({q}, {p})",
                    b.shape()
                )));
            }
            if b.iter().any(|v| !v.is_finite()) {
                return Err(Error::Domain(format!(
                    "non-finite coefficient in component {r}"
                )));
            }
        }
        for (r, s) in covariances.iter().enumerate() {
            if s.shape() != (q, q) {
                return Err(Error::Shape(format!(
                    "covariance of component {r} is {:?}, expected ({q}, {q})",
                    s.shape()
                )));
            }
            check_spd(s).map_err(|msg| Error::Domain(format!("covariance {r}: {msg}")))?;
        }
        if let Some(r) = weights.iter().position(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::Domain(format!(
                "weight {r} = {} is not strictly positive",
                weights[r]
            )));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::Domain(format!("weights sum to {total}, not 1")));
        }
        Ok(Self {
            p,
            q,
            weights,
            coefficients,
            covariances,
        })
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn coefficients(&self) -> &[DMatrix<f64>] {
        &self.coefficients
    }

    pub fn covariances(&self) -> &[DMatrix<f64>] {
        &self.covariances
    }

    /// Mean `β_r x` of component `r`.
    pub fn component_mean(&self, r: usize, x: &DVector<f64>) -> DVector<f64> {
        &self.coefficients[r] * x
    }

    /// ℓ1 norm of all regression coefficients (weights and covariances excluded).
    pub fn l1_norm(&self) -> f64 {
        let mut per_component: Vec<f64> = self
            .coefficients
            .iter()
            .map(|b| b.iter().map(|v| v.abs()).sum())
            .collect();
        sorted_sum(&mut per_component)
    }

    /// Same model with components reordered: component `i` of the result is
    /// component `order[i]` of `self`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.k()];
        if order.len() != self.k() {
            return Err(Error::Argument("permutation has wrong length".into()));
        }
        for &i in order {
            if i >= self.k() || seen[i] {
                return Err(Error::Argument(format!("{order:?} is not a permutation")));
            }
            seen[i] = true;
        }
        Ok(Self {
            p: self.p,
            q: self.q,
            weights: order.iter().map(|&i| self.weights[i]).collect(),
            coefficients: order.iter().map(|&i| self.coefficients[i].clone()).collect(),
            covariances: order.iter().map(|&i| self.covariances[i].clone()).collect(),
        })
    }

    /// Copy with every coefficient multiplied by `c`.
    pub fn with_scaled_coefficients(&self, c: f64) -> Self {
        Self {
            coefficients: self.coefficients.iter().map(|b| b * c).collect(),
            ..self.clone()
        }
    }

    pub(crate) fn check_dims(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<()> {
        if x.len() != self.p || y.len() != self.q {
            return Err(Error::Shape(format!(
                "x has length {}, y has length {}; model expects p = {}, q = {}",
                x.len(),
                y.len(),
                self.p,
                self.q
            )));
        }
        Ok(())
    }
}

/// Sum after sorting, so that reductions over components do not depend on
/// component order.
pub(crate) fn sorted_sum(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(|a, b| a.total_cmp(b));
    values.iter().sum()
}

fn check_spd(s: &DMatrix<f64>) -> std::result::Result<(), String> {
    if s.iter().any(|v| !v.is_finite()) {
        return Err("non-finite entry".into());
    }
    let asym = (s - s.transpose()).amax();
    if asym > SYMMETRY_TOL {
        return Err(format!("asymmetry {asym:.3e} exceeds {SYMMETRY_TOL:.0e}"));
    }
    let eig = s.clone().symmetric_eigenvalues();
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(min > 0.0) || s.clone().cholesky().is_none() {
        return Err(format!("not positive definite (smallest eigenvalue {min:.3e})"));
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct ParamsDocument {
    k: usize,
    p: usize,
    q: usize,
    weights: Vec<f64>,
    coefficients: Vec<Vec<f64>>,
    covariances: Vec<Vec<f64>>,
}

impl From<ModelParams> for ParamsDocument {
    fn from(m: ModelParams) -> Self {
        let row_major = |a: &DMatrix<f64>| a.transpose().as_slice().to_vec();
        Self {
            k: m.k(),
            p: m.p,
            q: m.q,
            weights: m.weights.clone(),
            coefficients: m.coefficients.iter().map(row_major).collect(),
            covariances: m.covariances.iter().map(row_major).collect(),
        }
    }
}

impl TryFrom<ParamsDocument> for ModelParams {
    type Error = Error;

    fn try_from(d: ParamsDocument) -> Result<Self> {
        if d.weights.len() != d.k || d.coefficients.len() != d.k || d.covariances.len() != d.k {
            return Err(Error::Shape(format!(
                "document declares k = {} but lists {} weights, {} coefficient blocks, {} covariances",
                d.k,
                d.weights.len(),
                d.coefficients.len(),
                d.covariances.len()
            )));
        }
        if d.p == 0 || d.q == 0 {
            return Err(Error::Shape("p and q must be at least 1".into()));
        }
        let mut coefficients = Vec::with_capacity(d.k);
        for (r, c) in d.coefficients.iter().enumerate() {
            if c.len() != d.q * d.p {
                return Err(Error::Shape(format!(
                    "coefficient block {r} has {} entries, expected q*p = {}",
                    c.len(),
                    d.q * d.p
                )));
            }
            coefficients.push(DMatrix::from_row_slice(d.q, d.p, c));
        }
        let mut covariances = Vec::with_capacity(d.k);
        for (r, c) in d.covariances.iter().enumerate() {
            if c.len() != d.q * d.q {
                return Err(Error::Shape(format!(
                    "covariance block {r} has {} entries, expected q*q = {}",
                    c.len(),
                    d.q * d.q
                )));
            }
            covariances.push(DMatrix::from_row_slice(d.q, d.q, c));
        }
        ModelParams::new(d.weights, coefficients, covariances)
    }
}

/// The seven constants bounding the admissible parameter set.
///
/// Covariances are constrained through their spectrum: every eigenvalue of
/// `Σ_r` must lie in [`ParameterBox::eigen_interval`], the intersection of
/// `[1/A_Σ, 1/a_Σ]` (bounds on `Σ_r^{-1}`) and `[ã_Σ, Ã_Σ]` (bounds on `Σ_r`).
/// Component means are bounded over the rows of the design in use.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BoxDocument", into = "BoxDocument")]
pub struct ParameterBox {
    /// `a_β`: lower bound on |β_{r,z}·x|.
    pub mean_min: f64,
    /// `A_β`: upper bound on |β_{r,z}·x|.
    pub mean_max: f64,
    /// `a_Σ`: lower bound on the precision `Σ^{-1}`.
    pub precision_min: f64,
    /// `A_Σ`: upper bound on the precision `Σ^{-1}`.
    pub precision_max: f64,
    /// `ã_Σ`: lower bound on the covariance.
    pub cov_min: f64,
    /// `Ã_Σ`: upper bound on the covariance.
    pub cov_max: f64,
    /// `a_π`: lower bound on every mixture weight.
    pub weight_min: f64,
}

impl ParameterBox {
    pub fn new(
        mean_min: f64,
        mean_max: f64,
        precision_min: f64,
        precision_max: f64,
        cov_min: f64,
        cov_max: f64,
        weight_min: f64,
    ) -> Result<Self> {
        let b = Self {
            mean_min,
            mean_max,
            precision_min,
            precision_max,
            cov_min,
            cov_max,
            weight_min,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let named = [
            ("a_beta", self.mean_min),
            ("A_beta", self.mean_max),
            ("a_sigma", self.precision_min),
            ("A_sigma", self.precision_max),
            ("a_sigma_tilde", self.cov_min),
            ("A_sigma_tilde", self.cov_max),
            ("a_pi", self.weight_min),
        ];
        for (name, v) in named {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} = {v} must be positive and finite")));
            }
        }
        for (lo, hi, what) in [
            (self.mean_min, self.mean_max, "a_beta <= A_beta"),
            (self.precision_min, self.precision_max, "a_sigma <= A_sigma"),
            (self.cov_min, self.cov_max, "a_sigma_tilde <= A_sigma_tilde"),
        ] {
            if lo > hi {
                return Err(Error::Config(format!("box requires {what} ({lo} > {hi})")));
            }
        }
        if self.weight_min > 1.0 {
            return Err(Error::Config(format!("a_pi = {} exceeds 1", self.weight_min)));
        }
        let (lo, hi) = self.eigen_interval();
        if lo > hi {
            return Err(Error::Config(format!(
                "covariance eigenvalue interval [{lo}, {hi}] is empty"
            )));
        }
        Ok(())
    }

    /// Check that `k` weights can all sit at or above `a_π`.
    pub fn check_components(&self, k: usize) -> Result<()> {
        if k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.weight_min * k as f64 > 1.0 + BOX_TOL {
            return Err(Error::Config(format!(
                "infeasible box: k * a_pi = {} * {} > 1",
                k, self.weight_min
            )));
        }
        Ok(())
    }

    /// Admissible interval for covariance eigenvalues.
    pub fn eigen_interval(&self) -> (f64, f64) {
        (
            (1.0 / self.precision_max).max(self.cov_min),
            self.cov_max.min(1.0 / self.precision_min),
        )
    }

    /// `A_Σ ∨ 1/a_π`.
    pub fn scale_factor(&self) -> f64 {
        self.precision_max.max(1.0 / self.weight_min)
    }

    /// Score bound `max(1/a_π, A_Σ + ½(y+A_β)²A_Σ², q(y+A_β)A_Σ/2)` at response level `level`.
    pub fn score_bound(&self, q: usize, level: f64) -> f64 {
        let reach = level.abs() + self.mean_max;
        let a = self.precision_max;
        (1.0 / self.weight_min)
            .max(a + 0.5 * reach * reach * a * a)
            .max(q as f64 * reach * a / 2.0)
    }
}

#[derive(Serialize, Deserialize)]
struct BoxDocument {
    a_beta: f64,
    #[serde(rename = "A_beta")]
    big_a_beta: f64,
    a_sigma: f64,
    #[serde(rename = "A_sigma")]
    big_a_sigma: f64,
    a_sigma_tilde: f64,
    #[serde(rename = "A_sigma_tilde")]
    big_a_sigma_tilde: f64,
    a_pi: f64,
}

impl From<ParameterBox> for BoxDocument {
    fn from(b: ParameterBox) -> Self {
        Self {
            a_beta: b.mean_min,
            big_a_beta: b.mean_max,
            a_sigma: b.precision_min,
            big_a_sigma: b.precision_max,
            a_sigma_tilde: b.cov_min,
            big_a_sigma_tilde: b.cov_max,
            a_pi: b.weight_min,
        }
    }
}

impl TryFrom<BoxDocument> for ParameterBox {
    type Error = Error;

    fn try_from(d: BoxDocument) -> Result<Self> {
        ParameterBox::new(
            d.a_beta,
            d.big_a_beta,
            d.a_sigma,
            d.big_a_sigma,
            d.a_sigma_tilde,
            d.big_a_sigma_tilde,
            d.a_pi,
        )
    }
}

/// Fixed design plus responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DatasetDocument", into = "DatasetDocument")]
pub struct Dataset {
    design: DMatrix<f64>,
    responses: DMatrix<f64>,
}

impl Dataset {
    pub fn new(design: DMatrix<f64>, responses: DMatrix<f64>) -> Result<Self> {
        if design.nrows() == 0 {
            return Err(Error::Shape("dataset needs at least one row".into()));
        }
        if design.nrows() != responses.nrows() {
            return Err(Error::Shape(format!(
                "design has {} rows, responses have {}",
                design.nrows(),
                responses.nrows()
            )));
        }
        if design.ncols() == 0 || responses.ncols() == 0 {
            return Err(Error::Shape("p and q must be at least 1".into()));
        }
        if design.iter().chain(responses.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Domain("dataset contains non-finite entries".into()));
        }
        Ok(Self { design, responses })
    }

    pub fn n(&self) -> usize {
        self.design.nrows()
    }

    pub fn p(&self) -> usize {
        self.design.ncols()
    }

    pub fn q(&self) -> usize {
        self.responses.ncols()
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn responses(&self) -> &DMatrix<f64> {
        &self.responses
    }

    pub fn x(&self, i: usize) -> DVector<f64> {
        self.design.row(i).transpose()
    }

    pub fn y(&self, i: usize) -> DVector<f64> {
        self.responses.row(i).transpose()
    }
}

#[derive(Serialize, Deserialize)]
struct DatasetDocument {
    n: usize,
    p: usize,
    q: usize,
    design: Vec<Vec<f64>>,
    responses: Vec<Vec<f64>>,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub(crate) fn matrix_from_rows(rows: &[Vec<f64>], ncols: usize, what: &str) -> Result<DMatrix<f64>> {
    if let Some(i) = rows.iter().position(|r| r.len() != ncols) {
        return Err(Error::Shape(format!(
            "{what} row {i} has {} entries, expected {ncols}",
            rows[i].len()
        )));
    }
    Ok(DMatrix::from_row_iterator(
        rows.len(),
        ncols,
        rows.iter().flatten().copied(),
    ))
}

impl From<Dataset> for DatasetDocument {
    fn from(d: Dataset) -> Self {
        Self {
            n: d.n(),
            p: d.p(),
            q: d.q(),
            design: rows_of(&d.design),
            responses: rows_of(&d.responses),
        }
    }
}

impl TryFrom<DatasetDocument> for Dataset {
    type Error = Error;

    fn try_from(d: DatasetDocument) -> Result<Self> {
        if d.design.len() != d.n || d.responses.len() != d.n {
            return Err(Error::Shape(format!(
                "dataset declares n = {} but has {} design rows and {} response rows",
                d.n,
                d.design.len(),
                d.responses.len()
            )));
        }
        Dataset::new(
            matrix_from_rows(&d.design, d.p, "design")?,
            matrix_from_rows(&d.responses, d.q, "responses")?,
        )
    }
}
