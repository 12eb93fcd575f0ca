//! Kullback–Leibler divergences between Gaussians and between conditional
//! mixture densities.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{log_sum_exp_in_place, MixtureDensity, ModelParams};
use crate::seeding::{derive_seed, rng_from};

/// Monte-Carlo estimate of a divergence, in nats.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_samples: usize,
    pub seed: u64,
}

/// `KL(N(μ_a, Σ_a) ‖ N(μ_b, Σ_b))`.
pub fn kl_gaussian(
    mean_a: &DVector<f64>,
    cov_a: &DMatrix<f64>,
    mean_b: &DVector<f64>,
    cov_b: &DMatrix<f64>,
) -> Result<f64> {
    let q = mean_a.len();
    if mean_b.len() != q || cov_a.shape() != (q, q) || cov_b.shape() != (q, q) {
        return Err(Error::Shape("Gaussian parameters have inconsistent dimensions".into()));
    }
    let chol_a = cov_a
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Domain("first covariance is not positive definite".into()))?;
    let chol_b = cov_b
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Domain("second covariance is not positive definite".into()))?;
    let log_det = |l: &DMatrix<f64>| 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let trace = chol_b.solve(cov_a).trace();
    let diff = mean_b - mean_a;
    let quad = diff.dot(&chol_b.solve(&diff));
    let kl = 0.5 * (trace + quad - q as f64 + log_det(&chol_b.l()) - log_det(&chol_a.l()));
    Ok(kl.max(0.0))
}

/// Shared state for repeated per-row estimates.
struct KlSampler {
    truth: MixtureDensity,
    candidate: MixtureDensity,
    cumulative: Vec<f64>,
}

impl KlSampler {
    fn new(truth: &ModelParams, candidate: &ModelParams) -> Result<Self> {
        if truth.q() != candidate.q() || truth.p() != candidate.p() {
            return Err(Error::Shape(format!(
                "truth is (p = {}, q = {}), candidate is (p = {}, q = {})",
                truth.p(),
                truth.q(),
                candidate.p(),
                candidate.q()
            )));
        }
        let mut acc = 0.0;
        let cumulative = truth
            .weights()
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        Ok(Self {
            truth: MixtureDensity::new(truth)?,
            candidate: MixtureDensity::new(candidate)?,
            cumulative,
        })
    }

    fn estimate(&self, x: &DVector<f64>, n_samples: usize, seed: u64) -> KlEstimate {
        let q = self.truth.q();
        let kt = self.truth.k();
        let kc = self.candidate.k();
        let truth_means = self.truth.component_means(x);
        let cand_means = self.candidate.component_means(x);
        let mut rng = rng_from(seed);
        let mut z = vec![0.0; q];
        let mut y = vec![0.0; q];
        let mut lt = vec![0.0; kt];
        let mut lc = vec![0.0; kc];
        // Welford accumulation
        let mut mean = 0.0;
        let mut m2 = 0.0;
        for t in 0..n_samples {
            let u: f64 = rng.random();
            let r = self
                .cumulative
                .iter()
                .position(|&c| u < c)
                .unwrap_or(kt - 1);
            for v in z.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            self.truth
                .transform_standard(r, truth_means[r].as_slice(), &z, &mut y);
            for (l, m) in truth_means.iter().enumerate() {
                lt[l] = self.truth.weighted_component_log_density(l, m.as_slice(), &y);
            }
            for (l, m) in cand_means.iter().enumerate() {
                lc[l] = self.candidate.weighted_component_log_density(l, m.as_slice(), &y);
            }
            let d = log_sum_exp_buf(&mut lt) - log_sum_exp_buf(&mut lc);
            let delta = d - mean;
            mean += delta / (t + 1) as f64;
            m2 += delta * (d - mean);
        }
        let std_error = if n_samples > 1 {
            (m2 / (n_samples - 1) as f64).sqrt() / (n_samples as f64).sqrt()
        } else {
            0.0
        };
        KlEstimate {
            value: mean,
            std_error,
            n_samples,
            seed,
        }
    }
}

fn log_sum_exp_buf(buf: &mut [f64]) -> f64 {
    if buf.len() == 1 {
        buf[0]
    } else {
        log_sum_exp_in_place(buf)
    }
}

/// Monte-Carlo estimate of `KL(s_truth(·|x) ‖ s_candidate(·|x))`.
pub fn kl_conditional_mc(
    truth: &ModelParams,
    candidate: &ModelParams,
    x: &DVector<f64>,
    n_samples: usize,
    seed: u64,
) -> Result<KlEstimate> {
    if n_samples < 1 {
        return Err(Error::Argument("n_samples must be at least 1".into()));
    }
    if x.len() != truth.p() {
        return Err(Error::Shape(format!(
            "x has length {}, model expects p = {}",
            x.len(),
            truth.p()
        )));
    }
    Ok(KlSampler::new(truth, candidate)?.estimate(x, n_samples, seed))
}

/// Fixed-design average `KL_n = (1/n) Σ_i KL(s_truth(·|x_i) ‖ s_candidate(·|x_i))`.
///
/// Row `i` uses the seed `derive_seed(seed, [i])`, so the result is the same
/// however rows are scheduled across threads.
pub fn kl_n(
    truth: &ModelParams,
    candidate: &ModelParams,
    design: &DMatrix<f64>,
    n_samples: usize,
    seed: u64,
) -> Result<KlEstimate> {
    if design.nrows() == 0 {
        return Err(Error::Argument("design has no rows".into()));
    }
    if n_samples < 1 {
        return Err(Error::Argument("n_samples must be at least 1".into()));
    }
    if design.ncols() != truth.p() {
        return Err(Error::Shape(format!(
            "design has {} columns, model expects p = {}",
            design.ncols(),
            truth.p()
        )));
    }
    let sampler = KlSampler::new(truth, candidate)?;
    let rows: Vec<KlEstimate> = (0..design.nrows())
        .into_par_iter()
        .map(|i| {
            let x = design.row(i).transpose();
            sampler.estimate(&x, n_samples, derive_seed(seed, &[i as u64]))
        })
        .collect();
    let n = rows.len() as f64;
    let value = rows.iter().map(|e| e.value).sum::<f64>() / n;
    let var = rows.iter().map(|e| e.std_error * e.std_error).sum::<f64>();
    Ok(KlEstimate {
        value,
        std_error: var.sqrt() / n,
        n_samples,
        seed,
    })
}
