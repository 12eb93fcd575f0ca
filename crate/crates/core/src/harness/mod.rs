//! End-to-end oracle-inequality experiments: simulate, fit along a penalty
//! grid, estimate the Kullback–Leibler risk and compare it with the bound.

mod report;

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{self, oracle_rhs, BoundReport, OracleQuery, RemainderForm};
use crate::divergence::kl_n;
use crate::error::{Error, Result};
use crate::estimator::{lambda_path, FitConfig, InitStrategy, StepRule};
use crate::model::{Dataset, ModelParams};
use crate::seeding::{derive_seed, stream};
use crate::simulator::{event_t_indicator, make_ground_truth, sample_design, sample_responses, SimSpec};

pub use report::{emit_report, read_rows_csv, CSV_FILE, JSON_FILE, SVG_FILE};

/// How the penalty levels of an experiment are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LambdaPolicy {
    /// Multiples of the penalty threshold of the oracle inequality.
    ThresholdMultiples { multiples: Vec<f64> },
    /// Explicit penalty values.
    Grid { values: Vec<f64> },
}

impl Default for LambdaPolicy {
    fn default() -> Self {
        LambdaPolicy::ThresholdMultiples {
            multiples: vec![0.5, 1.0, 2.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
    Svg,
}

/// Solver settings shared by every fit of an experiment. The box comes from
/// the simulation and the seed from the replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitTemplate {
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
}

impl Default for FitTemplate {
    fn default() -> Self {
        Self {
            max_em_iters: defaults::max_em_iters(),
            em_tol: defaults::em_tol(),
            inner_prox_iters: defaults::inner_prox_iters(),
            prox_step_rule: StepRule::default(),
            n_restarts: defaults::n_restarts(),
            init_strategy: InitStrategy::default(),
        }
    }
}

impl FitTemplate {
    fn config(&self, sim: &SimSpec, lambda: f64, seed: u64) -> FitConfig {
        FitConfig {
            lambda,
            max_em_iters: self.max_em_iters,
            em_tol: self.em_tol,
            inner_prox_iters: self.inner_prox_iters,
            prox_step_rule: self.prox_step_rule,
            n_restarts: self.n_restarts,
            init_strategy: self.init_strategy,
            seed,
            bx: sim.bx,
        }
    }
}

mod defaults {
    use super::OutputFormat;

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
    pub fn kl_samples() -> usize {
        20_000
    }
    pub fn kappa() -> f64 {
        crate::bounds::DEFAULT_KAPPA
    }
    pub fn kappa_prime() -> f64 {
        crate::bounds::DEFAULT_KAPPA_PRIME
    }
    pub fn output_dir() -> std::path::PathBuf {
        "results".into()
    }
    pub fn formats() -> Vec<OutputFormat> {
        vec![OutputFormat::Csv, OutputFormat::Json, OutputFormat::Svg]
    }
    pub fn yes() -> bool {
        true
    }
}

/// Everything needed to reproduce an experiment. The master seed is
/// `sim.seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub sim: SimSpec,
    #[serde(default)]
    pub fit: FitTemplate,
    #[serde(default)]
    pub lambda_policy: LambdaPolicy,
    pub n_replicates: usize,
    #[serde(default = "defaults::kl_samples")]
    pub kl_samples: usize,
    #[serde(default = "defaults::kappa")]
    pub kappa: f64,
    #[serde(default = "defaults::kappa_prime")]
    pub kappa_prime: f64,
    #[serde(default)]
    pub form: RemainderForm,
    #[serde(default = "defaults::output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "defaults::formats")]
    pub formats: Vec<OutputFormat>,
    /// One ground truth for the whole experiment; otherwise one per replicate.
    #[serde(default = "defaults::yes")]
    pub shared_truth: bool,
    /// Draw a fresh design for every replicate instead of keeping it fixed.
    #[serde(default)]
    pub resample_design: bool,
}

impl ExperimentConfig {
    /// Defaults for everything but the simulation and the replicate count.
    pub fn new(sim: SimSpec, n_replicates: usize) -> Self {
        Self {
            sim,
            fit: FitTemplate::default(),
            lambda_policy: LambdaPolicy::default(),
            n_replicates,
            kl_samples: defaults::kl_samples(),
            kappa: defaults::kappa(),
            kappa_prime: defaults::kappa_prime(),
            form: RemainderForm::default(),
            output_dir: defaults::output_dir(),
            formats: defaults::formats(),
            shared_truth: true,
            resample_design: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        if self.sim.n < 2 {
            return Err(Error::Config("n must be at least 2".into()));
        }
        if self.n_replicates == 0 {
            return Err(Error::Config("n_replicates must be at least 1".into()));
        }
        if self.kl_samples == 0 {
            return Err(Error::Config("kl_samples must be at least 1".into()));
        }
        if self.formats.is_empty() {
            return Err(Error::Config("at least one output format is required".into()));
        }
        if !(self.kappa > 0.0) || !(self.kappa_prime > 0.0) || !self.kappa.is_finite() || !self.kappa_prime.is_finite()
        {
            return Err(Error::Config("kappa and kappa_prime must be positive and finite".into()));
        }
        let values = match &self.lambda_policy {
            LambdaPolicy::ThresholdMultiples { multiples } => multiples,
            LambdaPolicy::Grid { values } => values,
        };
        if values.is_empty() {
            return Err(Error::Config("the lambda policy lists no values".into()));
        }
        if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Config("lambda values must be finite and >= 0".into()));
        }
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("lambda values must be distinct".into()));
        }
        self.fit.config(&self.sim, 0.0, 0).validate()
    }
}

/// One fit of one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRow {
    pub replicate: usize,
    pub lambda: f64,
    pub kl_n_estimate: f64,
    pub kl_std_error: f64,
    pub l1_fitted: f64,
    #[serde(rename = "event_T")]
    pub event_t: bool,
    pub n_iters: usize,
    pub converged: bool,
}

/// Summary over replicates at one penalty level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaAggregate {
    pub lambda: f64,
    /// Multiple of the threshold, under a threshold policy.
    pub multiple: Option<f64>,
    pub mean_kl: f64,
    /// Monte-Carlo standard error of `mean_kl`.
    pub pooled_se: f64,
    /// Between-replicate standard error of `mean_kl`.
    pub replicate_se: f64,
    pub event_t_rate: f64,
    pub bound_report: BoundReport,
    /// `mean_kl + 2 pooled_se ≤ oracle_rhs_total`.
    pub inequality_satisfied: bool,
    /// `oracle_rhs_total − mean_kl`.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub master_seed: u64,
    pub n_replicates: usize,
    pub kl_samples: usize,
    /// Penalty threshold at the reference design.
    pub lambda_threshold: f64,
    /// Mean ℓ1 norm of the ground truth over replicates.
    pub l1_truth: f64,
    pub rows: Vec<ReplicateRow>,
    pub aggregates: Vec<LambdaAggregate>,
}

/// Seed of replicate `r` under `master`.
pub fn replicate_seed(master: u64, r: usize) -> u64 {
    derive_seed(master, &[stream::REPLICATE, r as u64])
}

struct Replicate {
    rows: Vec<ReplicateRow>,
    l1_truth: f64,
}

fn reseeded(sim: &SimSpec, seed: u64) -> SimSpec {
    SimSpec { seed, ..sim.clone() }
}

fn run_replicate(
    config: &ExperimentConfig,
    shared: Option<&ModelParams>,
    base_design: &nalgebra::DMatrix<f64>,
    lambdas: &[f64],
    r: usize,
    seed: u64,
) -> Result<Replicate> {
    let sim = &config.sim;
    let own_truth;
    let truth = match shared {
        Some(t) => t,
        None => {
            own_truth = make_ground_truth(&reseeded(sim, derive_seed(seed, &[stream::TRUTH])))?;
            &own_truth
        }
    };
    let design = if config.resample_design {
        sample_design(&reseeded(sim, derive_seed(seed, &[stream::DESIGN])))?
    } else {
        base_design.clone()
    };
    let (y, _) = sample_responses(truth, &design, derive_seed(seed, &[stream::RESPONSES]))?;
    let data = Dataset::new(design, y)?;
    let event_t = event_t_indicator(data.responses(), bounds::m_n(&sim.bx, sim.n)?);

    let mut order: Vec<usize> = (0..lambdas.len()).collect();
    order.sort_by(|&a, &b| lambdas[b].total_cmp(&lambdas[a]));
    let grid: Vec<f64> = order.iter().map(|&j| lambdas[j]).collect();
    let cfg = config.fit.config(sim, grid[0], derive_seed(seed, &[stream::FIT]));
    let path = lambda_path(&data, sim.k, &grid, &cfg)?;

    let mut rows = vec![None; lambdas.len()];
    for (fit, &j) in path.fits.iter().zip(&order) {
        let kl = kl_n(
            truth,
            &fit.params,
            data.design(),
            config.kl_samples,
            derive_seed(seed, &[stream::KL]),
        )?;
        rows[j] = Some(ReplicateRow {
            replicate: r,
            lambda: lambdas[j],
            kl_n_estimate: kl.value,
            kl_std_error: kl.std_error,
            l1_fitted: fit.params.l1_norm(),
            event_t,
            n_iters: fit.n_iters,
            converged: fit.converged,
        });
    }
    Ok(Replicate {
        rows: rows.into_iter().map(|r| r.expect("every lambda fitted")).collect(),
        l1_truth: truth.l1_norm(),
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Run every replicate and compare the averaged risk with the bound.
///
/// Replicate `r` draws everything from [`replicate_seed`]`(sim.seed, r)`, so
/// the report does not depend on scheduling. The first failing replicate (by
/// index) aborts the run with [`Error::Replicate`].
pub fn run_oracle_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let sim = &config.sim;
    let master = sim.seed;
    let base_design = sample_design(sim)?;
    let x_max = bounds::x_max_n(&base_design)?;
    let threshold = bounds::lambda_threshold(&sim.bx, sim.n, sim.p, sim.q, sim.k, x_max, config.kappa)?;
    let (lambdas, multiples): (Vec<f64>, Vec<Option<f64>>) = match &config.lambda_policy {
        LambdaPolicy::ThresholdMultiples { multiples } => {
            multiples.iter().map(|m| (m * threshold, Some(*m))).unzip()
        }
        LambdaPolicy::Grid { values } => values.iter().map(|v| (*v, None)).unzip(),
    };
    let shared = if config.shared_truth {
        Some(make_ground_truth(sim)?)
    } else {
        None
    };

    let outcomes: Vec<Result<Replicate>> = (0..config.n_replicates)
        .into_par_iter()
        .map(|r| {
            let seed = replicate_seed(master, r);
            run_replicate(config, shared.as_ref(), &base_design, &lambdas, r, seed).map_err(|e| {
                Error::Replicate {
                    replicate: r,
                    seed,
                    source: Box::new(e),
                }
            })
        })
        .collect();
    let mut replicates = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        replicates.push(o?);
    }

    let l1_truth = mean(&replicates.iter().map(|r| r.l1_truth).collect::<Vec<_>>());
    let rows: Vec<ReplicateRow> = replicates.into_iter().flat_map(|r| r.rows).collect();
    let reps = config.n_replicates as f64;
    let mut aggregates = Vec::with_capacity(lambdas.len());
    for (j, (&lambda, &multiple)) in lambdas.iter().zip(&multiples).enumerate() {
        let at: Vec<&ReplicateRow> = rows.iter().skip(j).step_by(lambdas.len()).collect();
        let kls: Vec<f64> = at.iter().map(|r| r.kl_n_estimate).collect();
        let mean_kl = mean(&kls);
        let pooled_se = at.iter().map(|r| r.kl_std_error * r.kl_std_error).sum::<f64>().sqrt() / reps;
        let replicate_se = if at.len() > 1 {
            let var = kls.iter().map(|v| (v - mean_kl).powi(2)).sum::<f64>() / (reps - 1.0);
            (var / reps).sqrt()
        } else {
            0.0
        };
        let event_t_rate = at.iter().filter(|r| r.event_t).count() as f64 / reps;
        let report = oracle_rhs(&OracleQuery {
            bx: sim.bx,
            n: sim.n,
            p: sim.p,
            q: sim.q,
            k: sim.k,
            x_max_n: x_max,
            lambda,
            kl_ref: 0.0,
            l1_ref: l1_truth,
            kappa: config.kappa,
            kappa_prime: config.kappa_prime,
            form: config.form,
        })?;
        let rhs = report.oracle_rhs_total;
        aggregates.push(LambdaAggregate {
            lambda,
            multiple,
            mean_kl,
            pooled_se,
            replicate_se,
            event_t_rate,
            inequality_satisfied: mean_kl + 2.0 * pooled_se <= rhs,
            margin: rhs - mean_kl,
            bound_report: report,
        });
    }
    Ok(ExperimentReport {
        master_seed: master,
        n_replicates: config.n_replicates,
        kl_samples: config.kl_samples,
        lambda_threshold: threshold,
        l1_truth,
        rows,
        aggregates,
    })
}
