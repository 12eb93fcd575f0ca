use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::Exp1;

use super::fit::run_em;
use super::{maximize, FitConfig, InitStrategy, Prepared};
use crate::error::Result;
use crate::model::{clip_covariance, ModelParams};
use crate::seeding::rng_from;

/// One-component fit used as the common starting point of every restart.
pub(super) fn single_component(prep: &Prepared, config: &FitConfig, lambda: f64, seed: u64) -> Result<ModelParams> {
    let (n, p, q) = (prep.n(), prep.data.p(), prep.data.q());
    let y = prep.data.responses();
    let (lo, hi) = config.bx.eigen_interval();
    let scatter = y.transpose() * y / n as f64;
    let start = ModelParams::new(
        vec![1.0],
        vec![DMatrix::zeros(q, p)],
        vec![clip_covariance(&((&scatter + scatter.transpose()) * 0.5), lo, hi)],
    )?;
    let mut cfg = config.clone();
    cfg.max_em_iters = config.max_em_iters.min(200);
    Ok(run_em(prep, start, &cfg, lambda, seed)?.params)
}

fn random_responsibilities(n: usize, k: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let mut t = DMatrix::from_fn(n, k, |_, _| rng.sample::<f64, _>(Exp1) + 1e-3);
    for mut row in t.row_iter_mut() {
        let s = row.sum();
        row /= s;
    }
    t
}

/// Soft split of the one-component residuals along their leading direction.
fn split_responsibilities(prep: &Prepared, single: &ModelParams, k: usize) -> DMatrix<f64> {
    let n = prep.n();
    let x = prep.data.design();
    let y = prep.data.responses();
    let resid = y - x * single.coefficients()[0].transpose();
    let cov = resid.transpose() * &resid / n as f64;
    let eig = SymmetricEigen::new((&cov + cov.transpose()) * 0.5);
    let top = eig.eigenvalues.imax();
    let mut dir = eig.eigenvectors.column(top).clone_owned();
    if dir[dir.iamax()] < 0.0 {
        dir = -dir;
    }
    let proj = &resid * &dir;
    let mean = proj.mean();
    let mut sd = (proj.map(|v| (v - mean) * (v - mean)).sum() / n as f64).sqrt();
    if !(sd > 0.0) {
        sd = 1.0;
    }
    let centre = (k as f64 - 1.0) / 2.0;
    let mut t = DMatrix::from_fn(n, k, |i, l| {
        let c = mean + (l as f64 - centre) * sd;
        -((proj[i] - c) / sd).powi(2) / 2.0
    });
    for mut row in t.row_iter_mut() {
        let m = row.max();
        row.iter_mut().for_each(|v| *v = (*v - m).exp());
        let s = row.sum();
        row /= s;
    }
    t
}

/// Starting parameters for restart `restart`.
pub(super) fn initial_params(
    prep: &Prepared,
    k: usize,
    config: &FitConfig,
    lambda: f64,
    restart: usize,
    seed: u64,
) -> Result<ModelParams> {
    let single = single_component(prep, config, lambda, seed)?;
    if k == 1 {
        return Ok(single);
    }
    let mut rng = rng_from(seed);
    let n = prep.n();
    let resp = match config.init_strategy {
        InitStrategy::ResponsibilitySplit => {
            let split = split_responsibilities(prep, &single, k);
            if restart == 0 {
                split
            } else {
                (split + random_responsibilities(n, k, &mut rng)) * 0.5
            }
        }
        InitStrategy::RandomInBox => random_responsibilities(n, k, &mut rng),
    };
    let prev = ModelParams::new(
        vec![1.0 / k as f64; k],
        vec![single.coefficients()[0].clone(); k],
        vec![single.covariances()[0].clone(); k],
    )?;
    match maximize(&resp, prep, lambda, &config.bx, &prev, config) {
        Ok(p) => Ok(p),
        Err(_) => maximize(&random_responsibilities(n, k, &mut rng), prep, lambda, &config.bx, &prev, config),
    }
}
