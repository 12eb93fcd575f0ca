use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use super::ModelParams;
use crate::error::{Error, Result};

/// Terms further than this below the maximum are dropped from a log-sum-exp.
const LSE_CUTOFF: f64 = 700.0;

/// Numerically stable `log Σ exp(v_i)`.
///
/// Terms are summed in sorted order, so the result does not depend on the
/// order of `values`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let mut buf = values.to_vec();
    log_sum_exp_in_place(&mut buf)
}

/// Same as [`log_sum_exp`] but sorts `values` in place instead of copying.
pub(crate) fn log_sum_exp_in_place(values: &mut [f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    values.sort_unstable_by(|a, b| a.total_cmp(b));
    let mut sum = 0.0;
    for &v in values.iter() {
        if v >= max - LSE_CUTOFF {
            sum += (v - max).exp();
        }
    }
    max + sum.ln()
}

#[derive(Debug, Clone)]
struct Factor {
    coef: DMatrix<f64>,
    /// Lower Cholesky factor of Σ_r, row-major.
    chol: Vec<f64>,
    /// log π_r − (q/2) log 2π − ½ log det Σ_r.
    log_const: f64,
}

/// Cached factorization of a mixture for repeated density evaluations.
#[derive(Debug, Clone)]
pub struct MixtureDensity {
    p: usize,
    q: usize,
    factors: Vec<Factor>,
}

impl MixtureDensity {
    pub fn new(params: &ModelParams) -> Result<Self> {
        let q = params.q();
        let mut factors = Vec::with_capacity(params.k());
        for r in 0..params.k() {
            let sigma = &params.covariances()[r];
            let chol = sigma.clone().cholesky().ok_or_else(|| {
                Error::Domain(format!("covariance {r} is not positive definite"))
            })?;
            let l = chol.l();
            let log_det: f64 = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
            factors.push(Factor {
                coef: params.coefficients()[r].clone(),
                chol: l.transpose().as_slice().to_vec(),
                log_const: params.weights()[r].ln()
                    - 0.5 * q as f64 * (2.0 * PI).ln()
                    - 0.5 * log_det,
            });
        }
        Ok(Self {
            p: params.p(),
            q,
            factors,
        })
    }

    pub fn k(&self) -> usize {
        self.factors.len()
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Component means `β_r x_i` for every design row, as one `q × n` matrix
    /// per component (column `i` holds the mean at row `i`).
    pub fn means_for(&self, design_t: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        self.factors.iter().map(|f| &f.coef * design_t).collect()
    }

    /// Write `mean + L_r z` into `out`, where `L_r` is the lower Cholesky factor
    /// of `Σ_r`; with `z` standard normal this is a draw from component `r`.
    pub(crate) fn transform_standard(&self, r: usize, mean: &[f64], z: &[f64], out: &mut [f64]) {
        let l = &self.factors[r].chol;
        let q = self.q;
        for a in 0..q {
            let mut s = mean[a];
            for b in 0..=a {
                s += l[a * q + b] * z[b];
            }
            out[a] = s;
        }
    }

    /// `β_r x` for every component.
    pub fn component_means(&self, x: &DVector<f64>) -> Vec<DVector<f64>> {
        self.factors.iter().map(|f| &f.coef * x).collect()
    }

    /// `log π_r + log N(y; mean, Σ_r)`.
    pub fn weighted_component_log_density(&self, r: usize, mean: &[f64], y: &[f64]) -> f64 {
        let f = &self.factors[r];
        let q = self.q;
        // forward substitution L z = y − mean
        let mut z = [0.0f64; 8];
        let mut heap;
        let z: &mut [f64] = if q <= 8 {
            &mut z[..q]
        } else {
            heap = vec![0.0; q];
            &mut heap
        };
        let mut quad = 0.0;
        for a in 0..q {
            let mut s = y[a] - mean[a];
            for b in 0..a {
                s -= f.chol[a * q + b] * z[b];
            }
            z[a] = s / f.chol[a * q + a];
            quad += z[a] * z[a];
        }
        f.log_const - 0.5 * quad
    }

    /// Fill `out` with the weighted component log-densities at `(x, y)`.
    pub fn component_log_densities(&self, x: &DVector<f64>, y: &DVector<f64>, out: &mut [f64]) {
        for (r, f) in self.factors.iter().enumerate() {
            let mean = &f.coef * x;
            out[r] = self.weighted_component_log_density(r, mean.as_slice(), y.as_slice());
        }
    }

    /// `log s(y | x)`.
    pub fn log_density(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        let mut buf = vec![0.0; self.k()];
        self.component_log_densities(x, y, &mut buf);
        log_sum_exp_in_place(&mut buf)
    }
}

/// `log s_ξ(y | x)` for a single point.
pub fn mixture_log_density(params: &ModelParams, x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
    params.check_dims(x, y)?;
    Ok(MixtureDensity::new(params)?.log_density(x, y))
}
