#![allow(dead_code)]

use mixlasso::model::{ModelParams, ParameterBox};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A valid box with an eigenvalue interval of positive width.
pub fn random_box(rng: &mut impl Rng, k: usize, min_precision_max: f64) -> ParameterBox {
    loop {
        let a_beta = rng.random_range(0.05..1.0);
        let big_a_beta = a_beta + rng.random_range(0.1..2.0);
        let a_sigma: f64 = rng.random_range(0.1..1.0);
        let big_a_sigma = (a_sigma + rng.random_range(0.2..4.0)).max(min_precision_max);
        let cov_min = rng.random_range(0.05..0.5);
        let cov_max = cov_min + rng.random_range(0.5..5.0);
        let a_pi = rng.random_range(0.01..1.0) / k as f64;
        if let Ok(b) = ParameterBox::new(a_beta, big_a_beta, a_sigma, big_a_sigma, cov_min, cov_max, a_pi) {
            let (lo, hi) = b.eigen_interval();
            if hi - lo > 1e-3 {
                return b;
            }
        }
    }
}

pub fn random_orthogonal(rng: &mut impl Rng, q: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(q, q, |_, _| rng.sample::<f64, _>(StandardNormal));
    g.qr().q()
}

/// Random parameters inside `bx`; coefficient rows have ℓ1 norm at most
/// `A_β`, so every mean is bounded by `A_β` on designs in [−1, 1].
pub fn random_params(
    rng: &mut impl Rng,
    bx: &ParameterBox,
    k: usize,
    p: usize,
    q: usize,
    diagonal: bool,
) -> ModelParams {
    let mut w: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = w.iter().sum();
    let free = 1.0 - bx.weight_min * k as f64;
    w.iter_mut().for_each(|v| *v = bx.weight_min + free * *v / s);
    let (lo, hi) = bx.eigen_interval();
    let covs = (0..k)
        .map(|_| {
            let d = DMatrix::from_diagonal(&DVector::from_fn(q, |_, _| rng.random_range(lo..=hi)));
            if diagonal {
                d
            } else {
                let u = random_orthogonal(rng, q);
                let m = &u * d * u.transpose();
                (&m + m.transpose()) * 0.5
            }
        })
        .collect();
    let coefs = (0..k)
        .map(|_| {
            let mut b = DMatrix::from_fn(q, p, |_, _| rng.random_range(-1.0f64..1.0));
            for mut row in b.row_iter_mut() {
                let l1: f64 = row.iter().map(|v| v.abs()).sum();
                let target = rng.random_range(0.0..bx.mean_max);
                if l1 > 0.0 {
                    row *= target / l1;
                }
            }
            b
        })
        .collect();
    ModelParams::new(w, coefs, covs).expect("valid random parameters")
}

pub fn uniform_vector(rng: &mut impl Rng, len: usize, half_width: f64) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.random_range(-half_width..=half_width))
}

/// Mixture log-density from LU decompositions of general (not necessarily
/// symmetric) covariance matrices.
pub fn lu_log_density(
    weights: &[f64],
    coefs: &[DMatrix<f64>],
    covs: &[DMatrix<f64>],
    x: &DVector<f64>,
    y: &DVector<f64>,
) -> f64 {
    let q = y.len() as f64;
    let terms: Vec<f64> = (0..weights.len())
        .map(|r| {
            let e = y - &coefs[r] * x;
            let lu = covs[r].clone().lu();
            let det = lu.determinant();
            let sol = lu.solve(&e).expect("invertible covariance");
            weights[r].ln() - 0.5 * q * (2.0 * std::f64::consts::PI).ln() - 0.5 * det.ln() - 0.5 * e.dot(&sol)
        })
        .collect();
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

pub fn lu_log_density_params(params: &ModelParams, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    lu_log_density(params.weights(), params.coefficients(), params.covariances(), x, y)
}

/// Largest absolute deviation between the analytic score and central finite
/// differences of [`lu_log_density`] with respect to means, covariance
/// entries and weights.
pub fn finite_difference_error(params: &ModelParams, x: &DVector<f64>, y: &DVector<f64>, h: f64) -> f64 {
    let grad = mixlasso::model::log_density_gradient(params, x, y).unwrap();
    let (k, q) = (params.k(), params.q());
    let w = params.weights().to_vec();
    let covs = params.covariances().to_vec();
    let coefs = params.coefficients().to_vec();
    let mut worst: f64 = 0.0;

    // mean of component r perturbed through an extra intercept column
    for r in 0..k {
        for z in 0..q {
            let eval = |d: f64| {
                let x2 = x.clone().insert_row(x.len(), 1.0);
                let c2: Vec<DMatrix<f64>> = coefs
                    .iter()
                    .enumerate()
                    .map(|(l, b)| {
                        let mut b2 = b.clone().insert_column(b.ncols(), 0.0);
                        if l == r {
                            b2[(z, b.ncols())] = d;
                        }
                        b2
                    })
                    .collect();
                lu_log_density(&w, &c2, &covs, &x2, y)
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            worst = worst.max((fd - grad.means[r][z]).abs());
        }
        for a in 0..q {
            for b in 0..q {
                let eval = |d: f64| {
                    let mut c2 = covs.clone();
                    c2[r][(a, b)] += d;
                    lu_log_density(&w, &coefs, &c2, x, y)
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                worst = worst.max((fd - grad.covariances[r][(a, b)]).abs());
            }
        }
        let eval = |d: f64| {
            let mut w2 = w.clone();
            w2[r] += d;
            lu_log_density(&w2, &coefs, &covs, x, y)
        };
        let fd = (eval(h) - eval(-h)) / (2.0 * h);
        worst = worst.max((fd - grad.weights[r]).abs());
    }
    worst
}

pub fn relative_error(got: f64, want: f64) -> f64 {
    if want == 0.0 {
        got.abs()
    } else {
        ((got - want) / want).abs()
    }
}

/// Adjusted Rand index between two labelings.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0u64; kb]; ka];
    for (&i, &j) in a.iter().zip(b) {
        table[i][j] += 1;
    }
    let c2 = |v: u64| (v * v.saturating_sub(1)) as f64 / 2.0;
    let index: f64 = table.iter().flatten().map(|&v| c2(v)).sum();
    let rows: f64 = table.iter().map(|r| c2(r.iter().sum())).sum();
    let cols: f64 = (0..kb).map(|j| c2(table.iter().map(|r| r[j]).sum())).sum();
    let total = c2(a.len() as u64);
    let expected = rows * cols / total;
    let max = (rows + cols) / 2.0;
    if max == expected {
        1.0
    } else {
        (index - expected) / (max - expected)
    }
}
