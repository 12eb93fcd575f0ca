//! Ground-truth mixtures, fixed designs and simulated responses.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, MixtureDensity, ModelParams, ParameterBox};
use crate::seeding::{child_rng, derive_seed, rng_from, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DesignKind {
    /// Independent U[−1, 1] entries.
    #[default]
    IidUniform,
    /// Independent N(0, 1/4) entries clipped to [−1, 1].
    IidGaussianClipped,
    /// Orthonormal rows when `n ≤ p`, orthonormal columns otherwise.
    OrthogonalRows,
}

/// Description of a simulated experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub k: usize,
    /// Fraction of zero slope coefficients.
    pub sparsity: f64,
    #[serde(default)]
    pub design_kind: DesignKind,
    /// Eigenvalue of every ground-truth covariance.
    pub noise_scale: f64,
    /// Spacing between component offsets on covariate 0.
    #[serde(default)]
    pub separation: f64,
    /// Replace design column 0 by ones.
    #[serde(default)]
    pub intercept: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(rename = "box")]
    pub bx: ParameterBox,
}

impl SimSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 || self.q == 0 || self.k == 0 {
            return Err(Error::Config("n, p, q and k must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.sparsity) {
            return Err(Error::Config(format!("sparsity = {} is outside [0, 1]", self.sparsity)));
        }
        self.bx.validate()?;
        self.bx.check_components(self.k)?;
        if self.bx.weight_min > 1.0 / self.k as f64 {
            return Err(Error::Config(format!(
                "uniform weights 1/{} fall below a_pi = {}",
                self.k, self.bx.weight_min
            )));
        }
        let (lo, hi) = self.bx.eigen_interval();
        if !(self.noise_scale >= lo && self.noise_scale <= hi) {
            return Err(Error::Config(format!(
                "noise_scale = {} is outside the covariance interval [{lo}, {hi}]",
                self.noise_scale
            )));
        }
        if !self.separation.is_finite() || self.separation < 0.0 {
            return Err(Error::Config("separation must be finite and >= 0".into()));
        }
        let reach = self.separation * (self.k as f64 - 1.0) / 2.0;
        if reach > self.bx.mean_max {
            return Err(Error::Config(format!(
                "separation {} puts component offsets beyond A_beta = {}",
                self.separation, self.bx.mean_max
            )));
        }
        Ok(())
    }

    fn offsets_column0(&self) -> bool {
        self.intercept || self.separation > 0.0
    }
}

/// Ground truth with uniform weights, covariances `noise_scale · I`, and
/// sparse coefficients.
///
/// Each coefficient row gets `round((1 − sparsity) · p')` nonzero slopes on a
/// uniformly drawn support (`p'` counts the covariates not reserved for the
/// offset), magnitudes uniform on [0.5, 1] with random signs. Component `r`
/// has offset `(r − (k−1)/2) · separation` on covariate 0 when an intercept
/// or a separation is requested. Each row is then scaled so its ℓ1 norm is at
/// most `A_β`, which keeps every mean within `A_β` on designs bounded by 1.
pub fn make_ground_truth(spec: &SimSpec) -> Result<ModelParams> {
    spec.validate()?;
    let mut rng = child_rng(spec.seed, &[stream::TRUTH]);
    let (p, q, k) = (spec.p, spec.q, spec.k);
    let first = usize::from(spec.offsets_column0());
    let free = p - first.min(p);
    let nonzero = ((1.0 - spec.sparsity) * free as f64).round() as usize;
    let cap = spec.bx.mean_max;
    let mut coefficients = Vec::with_capacity(k);
    for r in 0..k {
        let offset = (r as f64 - (k as f64 - 1.0) / 2.0) * spec.separation;
        let mut b = DMatrix::zeros(q, p);
        for z in 0..q {
            if first == 1 {
                b[(z, 0)] = offset;
            }
            for j in sample(&mut rng, free, nonzero.min(free)).into_iter() {
                let mag: f64 = rng.random_range(0.5..=1.0);
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                b[(z, first + j)] = sign * mag;
            }
            let budget = cap - offset.abs();
            let slopes: f64 = (first..p).map(|j| b[(z, j)].abs()).sum();
            if slopes > budget {
                let s = budget / slopes;
                for j in first..p {
                    b[(z, j)] *= s;
                }
            }
        }
        coefficients.push(b);
    }
    ModelParams::new(
        vec![1.0 / k as f64; k],
        coefficients,
        vec![DMatrix::identity(q, q) * spec.noise_scale; k],
    )
}

/// Fixed design for `spec`; every entry lies in [−1, 1].
pub fn sample_design(spec: &SimSpec) -> Result<DMatrix<f64>> {
    if spec.n == 0 || spec.p == 0 {
        return Err(Error::Config("n and p must be at least 1".into()));
    }
    let mut rng = child_rng(spec.seed, &[stream::DESIGN]);
    let (n, p) = (spec.n, spec.p);
    let mut x = match spec.design_kind {
        DesignKind::IidUniform => DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.0..=1.0)),
        DesignKind::IidGaussianClipped => {
            let normal = Normal::<f64>::new(0.0, 0.5).expect("valid normal");
            DMatrix::from_fn(n, p, |_, _| rng.sample(normal).clamp(-1.0, 1.0))
        }
        DesignKind::OrthogonalRows => {
            if n <= p {
                let g = DMatrix::from_fn(p, n, |_, _| rng.sample::<f64, _>(StandardNormal));
                g.qr().q().transpose()
            } else {
                let g = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
                g.qr().q()
            }
        }
    };
    if spec.intercept {
        x.column_mut(0).fill(1.0);
    }
    Ok(x)
}

/// Draw one response per design row, returning the responses and the latent
/// component labels.
pub fn sample_responses(
    truth: &ModelParams,
    design: &DMatrix<f64>,
    seed: u64,
) -> Result<(DMatrix<f64>, Vec<usize>)> {
    if design.ncols() != truth.p() {
        return Err(Error::Shape(format!(
            "design has {} columns, model expects p = {}",
            design.ncols(),
            truth.p()
        )));
    }
    let density = MixtureDensity::new(truth)?;
    let (n, q, k) = (design.nrows(), truth.q(), truth.k());
    let mut rng = rng_from(seed);
    let mut cumulative = Vec::with_capacity(k);
    let mut acc = 0.0;
    for w in truth.weights() {
        acc += w;
        cumulative.push(acc);
    }
    let mut y = DMatrix::zeros(n, q);
    let mut labels = Vec::with_capacity(n);
    let mut z = vec![0.0; q];
    let mut out = vec![0.0; q];
    for i in 0..n {
        let u: f64 = rng.random();
        let r = cumulative.iter().position(|&c| u < c).unwrap_or(k - 1);
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let mean = &truth.coefficients()[r] * design.row(i).transpose();
        density.transform_standard(r, mean.as_slice(), &z, &mut out);
        for (a, v) in out.iter().enumerate() {
            y[(i, a)] = *v;
        }
        labels.push(r);
    }
    Ok((y, labels))
}

/// Whether every response coordinate satisfies `|Y_iz| ≤ m_n`.
pub fn event_t_indicator(responses: &DMatrix<f64>, m_n: f64) -> bool {
    responses.iter().all(|v| v.abs() <= m_n)
}

/// A complete simulated data set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Simulation {
    pub spec: SimSpec,
    pub truth: ModelParams,
    pub data: Dataset,
    pub labels: Vec<usize>,
}

/// Truth, design and responses for `spec`, each from its own seed stream.
pub fn simulate(spec: &SimSpec) -> Result<Simulation> {
    let truth = make_ground_truth(spec)?;
    let design = sample_design(spec)?;
    let (y, labels) = sample_responses(&truth, &design, derive_seed(spec.seed, &[stream::RESPONSES]))?;
    Ok(Simulation {
        spec: spec.clone(),
        truth,
        data: Dataset::new(design, y)?,
        labels,
    })
}

fn write_matrix_csv(path: &Path, m: &DMatrix<f64>, prefix: &str) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record((0..m.ncols()).map(|j| format!("{prefix}{j}")))?;
    for row in m.row_iter() {
        w.write_record(row.iter().map(|v| format!("{v:?}")))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Read a numeric CSV file with a header row.
pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let mut r = csv::Reader::from_path(path)?;
    let ncols = r.headers()?.len();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Domain(format!("{}: bad number {s:?}: {e}", path.display())))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    crate::model::matrix_from_rows(&rows, ncols, &path.display().to_string())
}

impl Simulation {
    /// Write `design.csv`, `responses.csv` and `simulation.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let design = dir.join("design.csv");
        let responses = dir.join("responses.csv");
        let bundle = dir.join("simulation.json");
        write_matrix_csv(&design, self.data.design(), "x")?;
        write_matrix_csv(&responses, self.data.responses(), "y")?;
        let text = serde_json::to_string_pretty(self)?;
        fs::write(&bundle, text + "\n").map_err(|e| Error::io(&bundle, e))?;
        Ok(vec![design, responses, bundle])
    }
}

/// Read a dataset written by [`Simulation::write`] (or any pair of CSV files
/// with a header row).
pub fn read_dataset(design: &Path, responses: &Path) -> Result<Dataset> {
    Dataset::new(read_matrix_csv(design)?, read_matrix_csv(responses)?)
}
