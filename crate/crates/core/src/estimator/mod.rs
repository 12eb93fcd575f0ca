//! ℓ1-penalized maximum likelihood by EM with proximal-gradient coefficient
//! updates.
//!
//! The objective is
//!
//! ```text
//! F(ξ) = −(1/n) Σ_i log s_ξ(y_i | x_i) + λ Σ_r Σ_{z,j} |β_r[z, j]|
//! ```
//!
//! over the parameter box. Each EM iteration computes responsibilities, then
//! updates weights, coefficients and covariances in turn; every block update
//! minimizes (or at least does not increase) the EM surrogate, so `F` never
//! increases.

mod fit;
mod init;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    log_sum_exp_in_place, project_weights, Dataset, MixtureDensity, ModelParams, ParameterBox,
};

pub use fit::{align_labels, fit_from_init, fit_lasso, lambda_max, lambda_path, PathResult};

/// Components whose total responsibility falls below this are degenerate.
pub const MIN_COMPONENT_MASS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// Step `1/L` with `L = λ_max(Σ^{-1}) λ_max(G)`.
    Fixed,
    /// Start from a smaller Lipschitz estimate and double it until the
    /// sufficient-decrease condition holds, never exceeding the fixed `L`.
    #[default]
    Backtracking,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitStrategy {
    RandomInBox,
    /// Fit one component, then split along the leading residual direction.
    #[default]
    ResponsibilitySplit,
}

/// Solver settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub lambda: f64,
    #[serde(default = "defaults::max_em_iters")]
    pub max_em_iters: usize,
    #[serde(default = "defaults::em_tol")]
    pub em_tol: f64,
    #[serde(default = "defaults::inner_prox_iters")]
    pub inner_prox_iters: usize,
    #[serde(default)]
    pub prox_step_rule: StepRule,
    #[serde(default = "defaults::n_restarts")]
    pub n_restarts: usize,
    #[serde(default)]
    pub init_strategy: InitStrategy,
    #[serde(default)]
    pub seed: u64,
    #[serde(rename = "box")]
    pub bx: ParameterBox,
}

mod defaults {
    pub fn max_em_iters() -> usize {
        500
    }
    pub fn em_tol() -> f64 {
        1e-8
    }
    pub fn inner_prox_iters() -> usize {
        200
    }
    pub fn n_restarts() -> usize {
        3
    }
}

impl FitConfig {
    pub fn new(bx: ParameterBox, lambda: f64) -> Self {
        Self {
            lambda,
            max_em_iters: defaults::max_em_iters(),
            em_tol: defaults::em_tol(),
            inner_prox_iters: defaults::inner_prox_iters(),
            prox_step_rule: StepRule::default(),
            n_restarts: defaults::n_restarts(),
            init_strategy: InitStrategy::default(),
            seed: 0,
            bx,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda = {} must be >= 0", self.lambda)));
        }
        if !(self.em_tol > 0.0) {
            return Err(Error::Config("em_tol must be positive".into()));
        }
        if self.max_em_iters == 0 || self.inner_prox_iters == 0 || self.n_restarts == 0 {
            return Err(Error::Config(
                "max_em_iters, inner_prox_iters and n_restarts must be at least 1".into(),
            ));
        }
        self.bx.validate()
    }
}

/// Outcome of a fit at one penalty level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: ModelParams,
    pub lambda: f64,
    /// Penalized negative log-likelihood after initialization and after every
    /// accepted EM iteration.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    pub n_iters: usize,
    /// Median restart objective minus the best one.
    pub slack_eta: f64,
    pub restart_index: usize,
    /// Degenerate components re-seeded during the winning run.
    pub reinitializations: usize,
    /// Penalty above which the zero-coefficient fit is stationary, when computed.
    #[serde(default)]
    pub lambda_max: Option<f64>,
}

impl FitResult {
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace is never empty")
    }
}

/// `λ · |β|₁`, taken as 0 when `|β|₁ = 0` even for infinite `λ`.
pub(crate) fn penalty(lambda: f64, l1: f64) -> f64 {
    if l1 == 0.0 {
        0.0
    } else {
        lambda * l1
    }
}

/// Dataset with transposed copies laid out for column access.
pub(crate) struct Prepared<'a> {
    pub data: &'a Dataset,
    /// `p × n`.
    pub xt: DMatrix<f64>,
    /// `q × n`.
    pub yt: DMatrix<f64>,
}

impl<'a> Prepared<'a> {
    pub fn new(data: &'a Dataset) -> Self {
        Self {
            data,
            xt: data.design().transpose(),
            yt: data.responses().transpose(),
        }
    }

    pub fn n(&self) -> usize {
        self.data.n()
    }
}

fn check_shapes(params: &ModelParams, data: &Dataset) -> Result<()> {
    if params.p() != data.p() || params.q() != data.q() {
        return Err(Error::Shape(format!(
            "model is (p = {}, q = {}), data is (p = {}, q = {})",
            params.p(),
            params.q(),
            data.p(),
            data.q()
        )));
    }
    Ok(())
}

/// Responsibilities and total log-likelihood.
pub(crate) fn expectation(params: &ModelParams, prep: &Prepared) -> Result<(DMatrix<f64>, f64)> {
    let density = MixtureDensity::new(params)?;
    let (n, k, q) = (prep.n(), params.k(), params.q());
    let means = density.means_for(&prep.xt);
    let ys = prep.yt.as_slice();
    let mut resp = DMatrix::zeros(n, k);
    let mut logs = vec![0.0; k];
    let mut scratch = vec![0.0; k];
    let mut total = 0.0;
    for i in 0..n {
        let y = &ys[i * q..(i + 1) * q];
        for l in 0..k {
            let m = &means[l].as_slice()[i * q..(i + 1) * q];
            logs[l] = density.weighted_component_log_density(l, m, y);
        }
        scratch.copy_from_slice(&logs);
        let lse = log_sum_exp_in_place(&mut scratch);
        if !lse.is_finite() {
            return Err(Error::Domain(format!("density vanishes at row {i}")));
        }
        for l in 0..k {
            resp[(i, l)] = (logs[l] - lse).exp();
        }
        total += lse;
    }
    Ok((resp, total))
}

/// `−(1/n) Σ_i log s_ξ(y_i | x_i) + λ |β|₁`.
pub fn penalized_nll(params: &ModelParams, data: &Dataset, lambda: f64) -> Result<f64> {
    check_shapes(params, data)?;
    let (_, ll) = expectation(params, &Prepared::new(data))?;
    Ok(-ll / data.n() as f64 + penalty(lambda, params.l1_norm()))
}

/// Posterior component probabilities, one row per observation.
pub fn e_step(params: &ModelParams, data: &Dataset) -> Result<DMatrix<f64>> {
    check_shapes(params, data)?;
    Ok(expectation(params, &Prepared::new(data))?.0)
}

/// Responsibility-weighted sufficient statistics of one component.
struct ComponentStats {
    /// `XᵀDX / n_r`, `p × p`.
    g: DMatrix<f64>,
    /// `YᵀDX / n_r`, `q × p`.
    h: DMatrix<f64>,
    /// `YᵀDY / n_r`, `q × q`.
    c: DMatrix<f64>,
}

impl ComponentStats {
    fn new(prep: &Prepared, tau: &[f64], mass: f64) -> Self {
        let x = prep.data.design();
        let y = prep.data.responses();
        let mut wx = x.clone();
        for (i, mut row) in wx.row_iter_mut().enumerate() {
            row *= tau[i] / mass;
        }
        Self {
            g: x.transpose() * &wx,
            h: y.transpose() * &wx,
            c: {
                let mut wy = y.clone();
                for (i, mut row) in wy.row_iter_mut().enumerate() {
                    row *= tau[i] / mass;
                }
                y.transpose() * wy
            },
        }
    }

    /// `½ tr(S (C − 2 H Bᵀ + B G Bᵀ))`, the weighted Gaussian loss up to constants.
    fn loss(&self, s: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        let sb = s * b;
        let bg = b * &self.g;
        0.5 * ((s * &self.c).trace() - 2.0 * sb.dot(&self.h) + sb.dot(&bg))
    }

    fn grad(&self, s: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        s * (b * &self.g - &self.h)
    }

    /// Weighted residual scatter `C − HBᵀ − BHᵀ + BGBᵀ`.
    fn scatter(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let hb = &self.h * b.transpose();
        let w = &self.c - &hb - hb.transpose() + b * &self.g * b.transpose();
        (&w + w.transpose()) * 0.5
    }
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v.abs() <= t {
        0.0
    } else {
        v - t * v.signum()
    }
}

fn l1(b: &DMatrix<f64>) -> f64 {
    b.iter().map(|v| v.abs()).sum()
}

fn largest_eigenvalue(a: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(a.clone())
        .eigenvalues
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

/// Proximal gradient on `loss(B) + thr |B|₁` started from `start`.
fn prox_coefficients(
    stats: &ComponentStats,
    s: &DMatrix<f64>,
    start: &DMatrix<f64>,
    thr: f64,
    iters: usize,
    rule: StepRule,
) -> DMatrix<f64> {
    let lip = (largest_eigenvalue(s) * largest_eigenvalue(&stats.g)).max(f64::MIN_POSITIVE);
    let mut estimate = match rule {
        StepRule::Fixed => lip,
        StepRule::Backtracking => lip / 16.0,
    };
    let mut b = start.clone();
    for _ in 0..iters {
        let grad = stats.grad(s, &b);
        let base = stats.loss(s, &b);
        let cand = loop {
            let step = 1.0 / estimate;
            let t = if thr == 0.0 { 0.0 } else { thr * step };
            let cand = (&b - &grad * step).map(|v| soft_threshold(v, t));
            if estimate >= lip {
                break cand;
            }
            let d = &cand - &b;
            let model = base + grad.dot(&d) + 0.5 * estimate * d.norm_squared();
            if stats.loss(s, &cand) <= model {
                break cand;
            }
            estimate = (2.0 * estimate).min(lip);
        };
        let change = (&cand - &b).amax();
        b = cand;
        if change <= 1e-13 * (1.0 + b.amax()) {
            break;
        }
    }
    b
}

/// One penalized M-step.
///
/// Weights are the column means of `resp` projected onto the weight floor;
/// each coefficient block takes proximal-gradient steps on its
/// responsibility-weighted Gaussian loss with threshold `λ n / n_r` and is
/// kept only if the surrogate does not increase; each covariance is the
/// weighted residual scatter with its spectrum clipped into the box.
pub fn m_step(
    resp: &DMatrix<f64>,
    data: &Dataset,
    lambda: f64,
    bx: &ParameterBox,
    prev: &ModelParams,
    config: &FitConfig,
) -> Result<ModelParams> {
    check_shapes(prev, data)?;
    if resp.shape() != (data.n(), prev.k()) {
        return Err(Error::Shape(format!(
            "responsibilities are {:?}, expected ({}, {})",
            resp.shape(),
            data.n(),
            prev.k()
        )));
    }
    maximize(resp, &Prepared::new(data), lambda, bx, prev, config)
}

pub(crate) fn maximize(
    resp: &DMatrix<f64>,
    prep: &Prepared,
    lambda: f64,
    bx: &ParameterBox,
    prev: &ModelParams,
    config: &FitConfig,
) -> Result<ModelParams> {
    let n = prep.n() as f64;
    let k = prev.k();
    let masses: Vec<f64> = (0..k).map(|l| resp.column(l).sum()).collect();
    if let Some(l) = masses.iter().position(|&m| !(m >= MIN_COMPONENT_MASS)) {
        return Err(Error::DegenerateComponent {
            component: l,
            mass: masses[l],
        });
    }
    let weights = project_weights(
        &masses.iter().map(|m| m / n).collect::<Vec<_>>(),
        bx.weight_min,
    )?;
    let (lo, hi) = bx.eigen_interval();
    let mut coefficients = Vec::with_capacity(k);
    let mut covariances = Vec::with_capacity(k);
    for l in 0..k {
        let stats = ComponentStats::new(prep, resp.column(l).as_slice(), masses[l]);
        let s = prev.covariances()[l]
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Domain(format!("covariance {l} is not positive definite")))?
            .inverse();
        let thr = if lambda == 0.0 { 0.0 } else { lambda * n / masses[l] };
        let old = &prev.coefficients()[l];
        let cand = prox_coefficients(&stats, &s, old, thr, config.inner_prox_iters, config.prox_step_rule);
        let cand = crate::model::clip_coefficients(&cand, prep.data.design(), bx.mean_max);
        let surrogate = |b: &DMatrix<f64>| stats.loss(&s, b) + penalty(thr, l1(b));
        let beta = if surrogate(&cand) <= surrogate(old) {
            cand
        } else {
            old.clone()
        };
        let sigma = crate::model::clip_covariance(&stats.scatter(&beta), lo, hi);
        coefficients.push(beta);
        covariances.push(sigma);
    }
    ModelParams::new(weights, coefficients, covariances)
}
