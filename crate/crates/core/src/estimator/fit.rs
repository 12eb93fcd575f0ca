use std::cmp::Ordering;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::init::initial_params;
use super::{expectation, maximize, penalty, FitConfig, FitResult, Prepared};
use crate::error::{Error, Result};
use crate::model::{clip_coefficients, project_weights, Dataset, ModelParams};
use crate::seeding::{child_rng, derive_seed, stream};

/// Re-seeded degenerate components allowed per run before giving up.
const MAX_REINITS: usize = 5;

pub(super) struct EmRun {
    pub params: ModelParams,
    pub trace: Vec<f64>,
    pub converged: bool,
    pub n_iters: usize,
    pub reinits: usize,
}

fn objective(ll: f64, n: usize, lambda: f64, params: &ModelParams) -> f64 {
    -ll / n as f64 + penalty(lambda, params.l1_norm())
}

/// Replace component `c` by a jittered copy of the heaviest component.
fn reseed_component(
    params: &ModelParams,
    c: usize,
    prep: &Prepared,
    config: &FitConfig,
    rng: &mut impl Rng,
) -> Result<ModelParams> {
    let mut donor = 0;
    for (r, &w) in params.weights().iter().enumerate() {
        if r != c && (donor == c || w > params.weights()[donor]) {
            donor = r;
        }
    }
    let mut weights = params.weights().to_vec();
    let shared = (weights[donor] + weights[c]) / 2.0;
    weights[donor] = shared;
    weights[c] = shared;
    let weights = project_weights(&weights, config.bx.weight_min)?;
    let mut coefficients = params.coefficients().to_vec();
    let base = &coefficients[donor];
    let scale = 0.1 * (base.amax() + 0.1);
    let jittered = base.map(|v| v + scale * rng.sample::<f64, _>(StandardNormal));
    coefficients[c] = clip_coefficients(&jittered, prep.data.design(), config.bx.mean_max);
    let mut covariances = params.covariances().to_vec();
    covariances[c] = covariances[donor].clone();
    ModelParams::new(weights, coefficients, covariances)
}

/// EM from `init` until the relative decrease drops below `em_tol`.
pub(super) fn run_em(
    prep: &Prepared,
    init: ModelParams,
    config: &FitConfig,
    lambda: f64,
    seed: u64,
) -> Result<EmRun> {
    let n = prep.n();
    let mut rng = child_rng(seed, &[stream::REINIT]);
    let mut params = init;
    let (mut resp, ll) = expectation(&params, prep)?;
    let mut current = objective(ll, n, lambda, &params);
    let mut trace = vec![current];
    let mut reinits = 0;
    let mut converged = false;
    let mut n_iters = 0;
    let mut iter = 0;
    while iter < config.max_em_iters {
        iter += 1;
        let next = match maximize(&resp, prep, lambda, &config.bx, &params, config) {
            Ok(p) => p,
            Err(Error::DegenerateComponent { component, mass }) => {
                if reinits >= MAX_REINITS {
                    return Err(Error::DegenerateComponent { component, mass });
                }
                reinits += 1;
                log::warn!(
                    "component {component} collapsed (mass {mass:.3e}); re-seeding ({reinits}/{MAX_REINITS})"
                );
                params = reseed_component(&params, component, prep, config, &mut rng)?;
                let (r, ll) = expectation(&params, prep)?;
                resp = r;
                current = objective(ll, n, lambda, &params);
                trace = vec![current];
                n_iters = 0;
                continue;
            }
            Err(e) => return Err(e),
        };
        let (next_resp, ll) = expectation(&next, prep)?;
        let value = objective(ll, n, lambda, &next);
        let scale = current.abs().max(1.0);
        if value > current {
            // rounding-level increases mean the iteration has stalled
            if value - current > 1e-12 * scale {
                log::warn!("EM objective rose from {current} to {value}; stopping");
            } else {
                converged = true;
            }
            break;
        }
        let decrease = (current - value) / scale;
        params = next;
        resp = next_resp;
        current = value;
        trace.push(value);
        n_iters += 1;
        if decrease < config.em_tol {
            converged = true;
            break;
        }
    }
    Ok(EmRun {
        params,
        trace,
        converged,
        n_iters,
        reinits,
    })
}

fn into_result(run: EmRun, lambda: f64, restart_index: usize, slack_eta: f64, lambda_max: Option<f64>) -> FitResult {
    FitResult {
        params: run.params,
        lambda,
        objective_trace: run.trace,
        converged: run.converged,
        n_iters: run.n_iters,
        slack_eta,
        restart_index,
        reinitializations: run.reinits,
        lambda_max,
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    }
}

/// Independent restarts; the lowest final objective wins, ties going to the
/// lower restart index.
fn best_of_restarts(prep: &Prepared, k: usize, config: &FitConfig, lambda: f64) -> Result<FitResult> {
    let runs: Vec<Result<EmRun>> = (0..config.n_restarts)
        .into_par_iter()
        .map(|r| {
            let seed = derive_seed(config.seed, &[stream::RESTART, r as u64]);
            let init = initial_params(prep, k, config, lambda, r, seed)?;
            run_em(prep, init, config, lambda, seed)
        })
        .collect();
    let runs: Vec<EmRun> = runs.into_iter().collect::<Result<_>>()?;
    let finals: Vec<f64> = runs.iter().map(|r| *r.trace.last().unwrap()).collect();
    let mut best = 0;
    for (i, &v) in finals.iter().enumerate() {
        if v.total_cmp(&finals[best]) == Ordering::Less {
            best = i;
        }
    }
    let slack = (median(&mut finals.clone()) - finals[best]).max(0.0);
    let run = runs.into_iter().nth(best).unwrap();
    Ok(into_result(run, lambda, best, slack, None))
}

fn check_inputs(data: &Dataset, k: usize, config: &FitConfig) -> Result<()> {
    config.validate()?;
    config.bx.check_components(k)?;
    if data.n() < k {
        return Err(Error::Argument(format!("n = {} is smaller than k = {k}", data.n())));
    }
    Ok(())
}

/// Smallest `λ` at which the all-zero coefficient fit is stationary, together
/// with that fit.
///
/// The zero-coefficient model is fitted by EM over weights and covariances
/// only; `λ_max` is then the largest entry of
/// `|(1/n) Σ_i τ_ir Σ_r^{-1} y_i x_iᵀ|` over components, the coefficient
/// gradient of the log-likelihood at `β = 0`.
pub fn lambda_max(data: &Dataset, k: usize, config: &FitConfig) -> Result<(f64, FitResult)> {
    check_inputs(data, k, config)?;
    null_fit(&Prepared::new(data), k, config)
}

fn null_fit(prep: &Prepared, k: usize, config: &FitConfig) -> Result<(f64, FitResult)> {
    let mut cfg = config.clone();
    cfg.lambda = f64::INFINITY;
    cfg.em_tol = config.em_tol.min(1e-12);
    cfg.max_em_iters = config.max_em_iters.max(2000);
    let fit = best_of_restarts(prep, k, &cfg, f64::INFINITY)?;
    let (resp, _) = expectation(&fit.params, prep)?;
    let x = prep.data.design();
    let y = prep.data.responses();
    let n = prep.n() as f64;
    let mut lmax: f64 = 0.0;
    for l in 0..k {
        let prec = fit.params.covariances()[l]
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Domain(format!("covariance {l} is not positive definite")))?
            .inverse();
        let mut wx = x.clone();
        for (i, mut row) in wx.row_iter_mut().enumerate() {
            row *= resp[(i, l)];
        }
        let g: DMatrix<f64> = prec * (y.transpose() * wx) / n;
        lmax = lmax.max(g.amax());
    }
    // guard against the last-bit rounding of the gradient
    let lmax = lmax * (1.0 + 8.0 * f64::EPSILON) + f64::MIN_POSITIVE;
    Ok((lmax, fit))
}

fn screened(null: &FitResult, lambda: f64, lmax: f64) -> FitResult {
    FitResult {
        lambda,
        lambda_max: Some(lmax),
        ..null.clone()
    }
}

/// Lasso fit at `config.lambda` with `k` components.
///
/// For `λ ≥ λ_max` (see [`lambda_max`]) the zero-coefficient fit is returned
/// directly; otherwise the best of `n_restarts` EM runs. Components of the
/// result are ordered by [`align_labels`].
pub fn fit_lasso(data: &Dataset, k: usize, config: &FitConfig) -> Result<FitResult> {
    check_inputs(data, k, config)?;
    let prep = Prepared::new(data);
    let (lmax, null) = null_fit(&prep, k, config)?;
    let mut fit = if config.lambda >= lmax {
        screened(&null, config.lambda, lmax)
    } else {
        let mut f = best_of_restarts(&prep, k, config, config.lambda)?;
        f.lambda_max = Some(lmax);
        f
    };
    fit.params = align_labels(&fit.params);
    Ok(fit)
}

/// Single EM run from the given starting point, at `config.lambda`.
///
/// Components keep the order of `init`.
pub fn fit_from_init(data: &Dataset, init: &ModelParams, config: &FitConfig) -> Result<FitResult> {
    check_inputs(data, init.k(), config)?;
    if init.p() != data.p() || init.q() != data.q() {
        return Err(Error::Shape("initial parameters do not match the data".into()));
    }
    let prep = Prepared::new(data);
    let run = run_em(&prep, init.clone(), config, config.lambda, config.seed)?;
    Ok(into_result(run, config.lambda, 0, 0.0, None))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathResult {
    pub lambda_max: f64,
    pub fits: Vec<FitResult>,
}

/// Fits along a strictly decreasing `grid`, each warm-started from the
/// previous solution. The first point is fitted exactly as [`fit_lasso`].
pub fn lambda_path(data: &Dataset, k: usize, grid: &[f64], config: &FitConfig) -> Result<PathResult> {
    if grid.is_empty() {
        return Err(Error::Argument("lambda grid is empty".into()));
    }
    if grid.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
        return Err(Error::Argument("lambda grid entries must be finite and >= 0".into()));
    }
    if grid.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Argument("lambda grid must be strictly decreasing".into()));
    }
    check_inputs(data, k, config)?;
    let prep = Prepared::new(data);
    let (lmax, null) = null_fit(&prep, k, config)?;
    let mut fits: Vec<FitResult> = Vec::with_capacity(grid.len());
    for (j, &lambda) in grid.iter().enumerate() {
        let fit = if lambda >= lmax {
            screened(&null, lambda, lmax)
        } else if j == 0 {
            let mut cfg = config.clone();
            cfg.lambda = lambda;
            let mut f = best_of_restarts(&prep, k, &cfg, lambda)?;
            f.lambda_max = Some(lmax);
            f
        } else {
            let warm = fits[j - 1].params.clone();
            let seed = derive_seed(config.seed, &[stream::FIT, j as u64]);
            let run = run_em(&prep, warm, config, lambda, seed)?;
            into_result(run, lambda, 0, 0.0, Some(lmax))
        };
        let mut fit = fit;
        fit.params = align_labels(&fit.params);
        fits.push(fit);
    }
    Ok(PathResult {
        lambda_max: lmax,
        fits,
    })
}

/// Deterministic component order for reporting: decreasing ℓ1 norm of the
/// first coefficient row, then decreasing weight, then covariance and
/// coefficient entries.
pub fn align_labels(params: &ModelParams) -> ModelParams {
    let key = |r: usize| -> Vec<f64> {
        let b = &params.coefficients()[r];
        let mut k = vec![-b.row(0).iter().map(|v| v.abs()).sum::<f64>(), -params.weights()[r]];
        k.extend(params.covariances()[r].iter());
        k.extend(b.iter());
        k
    };
    let keys: Vec<Vec<f64>> = (0..params.k()).map(key).collect();
    let mut order: Vec<usize> = (0..params.k()).collect();
    order.sort_by(|&a, &b| {
        keys[a]
            .iter()
            .zip(&keys[b])
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
    });
    params.permuted(&order).expect("sorted indices form a permutation")
}
