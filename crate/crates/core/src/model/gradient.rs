use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::density::log_sum_exp;
use super::{ModelParams, ParameterBox};
use crate::error::{Error, Result};

/// Partial derivatives of `log s_ξ(y | x)`.
///
/// Component means `μ_r = β_r x` are treated as free parameters, and every
/// covariance entry `Σ_r[a, b]` as an independent variable.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogDensityGradient {
    /// `∂/∂μ_r = τ_r Σ_r^{-1} (y − μ_r)`.
    pub means: Vec<DVector<f64>>,
    /// `∂/∂Σ_r = ½ τ_r (Σ_r^{-1} e eᵀ Σ_r^{-1} − Σ_r^{-1})`, `e = y − μ_r`.
    pub covariances: Vec<DMatrix<f64>>,
    /// `∂/∂π_r = τ_r / π_r`.
    pub weights: Vec<f64>,
}

impl LogDensityGradient {
    /// Largest absolute partial derivative.
    pub fn max_abs(&self) -> f64 {
        let m = self.means.iter().map(|v| v.amax()).fold(0.0, f64::max);
        let s = self.covariances.iter().map(|v| v.amax()).fold(0.0, f64::max);
        let w = self.weights.iter().map(|v| v.abs()).fold(0.0, f64::max);
        m.max(s).max(w)
    }
}

pub fn log_density_gradient(
    params: &ModelParams,
    x: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<LogDensityGradient> {
    params.check_dims(x, y)?;
    let k = params.k();
    let mut logs = Vec::with_capacity(k);
    let mut precisions = Vec::with_capacity(k);
    let mut residuals = Vec::with_capacity(k);
    for r in 0..k {
        let sigma = &params.covariances()[r];
        let chol = sigma.clone().cholesky().ok_or_else(|| {
            Error::Domain(format!("covariance {r} is not positive definite"))
        })?;
        let res = y - params.component_mean(r, x);
        let sres = chol.solve(&res);
        let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        logs.push(
            params.weights()[r].ln()
                - 0.5 * params.q() as f64 * (2.0 * std::f64::consts::PI).ln()
                - 0.5 * log_det
                - 0.5 * res.dot(&sres),
        );
        precisions.push(chol.inverse());
        residuals.push(sres);
    }
    let total = log_sum_exp(&logs);
    if total == f64::NEG_INFINITY {
        return Err(Error::Domain("density is zero at this point".into()));
    }
    let mut grad = LogDensityGradient {
        means: Vec::with_capacity(k),
        covariances: Vec::with_capacity(k),
        weights: Vec::with_capacity(k),
    };
    for r in 0..k {
        let tau = (logs[r] - total).exp();
        let s = &precisions[r];
        let sr = &residuals[r];
        let mut dsig = sr * sr.transpose() - s;
        dsig *= 0.5 * tau;
        grad.means.push(sr * tau);
        grad.covariances.push(dsig);
        grad.weights.push(tau / params.weights()[r]);
    }
    Ok(grad)
}

/// Bound `C_y = max(1/a_π, A_Σ + ½(y+A_β)²A_Σ², q(y+A_β)A_Σ/2)` on the partial
/// derivatives of the log-density at responses with `‖y‖_∞ ≤ y_sup`.
pub fn gradient_bound_constant(bx: &ParameterBox, q: usize, y_sup: f64) -> f64 {
    bx.score_bound(q, y_sup)
}
