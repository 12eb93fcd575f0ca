use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use super::{sorted_sum, ModelParams, ParameterBox, BOX_TOL};
use crate::error::{Error, Result};

/// Which box constraint a parameter violates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    WeightLowerBound,
    CovarianceLowerBound,
    CovarianceUpperBound,
    /// `max_i |β_{r,z}·x_i| > A_β` for response coordinate `response`.
    MeanUpperBound { response: usize },
    /// `max_i |β_{r,z}·x_i| < a_β` for response coordinate `response`.
    MeanLowerBound { response: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoxViolation {
    pub constraint: Constraint,
    pub component: usize,
    pub value: f64,
    pub bound: f64,
}

fn below(value: f64, bound: f64) -> bool {
    value < bound * (1.0 - BOX_TOL)
}

fn above(value: f64, bound: f64) -> bool {
    value > bound * (1.0 + BOX_TOL)
}

/// Largest `|β_{r,z}·x_i|` over the design rows, per response coordinate `z`.
fn mean_envelope(coef: &DMatrix<f64>, design: &DMatrix<f64>) -> Vec<f64> {
    let means = design * coef.transpose();
    (0..coef.nrows()).map(|z| means.column(z).amax()).collect()
}

fn check_design(params: &ModelParams, design: &DMatrix<f64>) -> Result<()> {
    if design.ncols() != params.p() {
        return Err(Error::Shape(format!(
            "design has {} columns, model has p = {}",
            design.ncols(),
            params.p()
        )));
    }
    Ok(())
}

/// Every violated box constraint, one entry per (constraint, component).
///
/// Mean bounds are checked over the rows of `design` only. The lower mean
/// bound `a_β` is not part of the feasible set enforced by
/// [`project_to_box`]; use [`mean_lower_bound_shortfalls`] to inspect it.
pub fn check_box_membership(
    params: &ModelParams,
    bx: &ParameterBox,
    design: &DMatrix<f64>,
) -> Vec<BoxViolation> {
    let mut out = Vec::new();
    for (r, &w) in params.weights().iter().enumerate() {
        if below(w, bx.weight_min) {
            out.push(BoxViolation {
                constraint: Constraint::WeightLowerBound,
                component: r,
                value: w,
                bound: bx.weight_min,
            });
        }
    }
    let (lo, hi) = bx.eigen_interval();
    for (r, s) in params.covariances().iter().enumerate() {
        let eig = s.clone().symmetric_eigenvalues();
        let min = eig.min();
        let max = eig.max();
        if below(min, lo) {
            out.push(BoxViolation {
                constraint: Constraint::CovarianceLowerBound,
                component: r,
                value: min,
                bound: lo,
            });
        }
        if above(max, hi) {
            out.push(BoxViolation {
                constraint: Constraint::CovarianceUpperBound,
                component: r,
                value: max,
                bound: hi,
            });
        }
    }
    if design.ncols() == params.p() {
        for (r, b) in params.coefficients().iter().enumerate() {
            for (z, m) in mean_envelope(b, design).into_iter().enumerate() {
                if above(m, bx.mean_max) {
                    out.push(BoxViolation {
                        constraint: Constraint::MeanUpperBound { response: z },
                        component: r,
                        value: m,
                        bound: bx.mean_max,
                    });
                }
            }
        }
    }
    out
}

/// Coefficient rows whose design-row envelope falls short of `a_β`.
pub fn mean_lower_bound_shortfalls(
    params: &ModelParams,
    bx: &ParameterBox,
    design: &DMatrix<f64>,
) -> Result<Vec<BoxViolation>> {
    check_design(params, design)?;
    let mut out = Vec::new();
    for (r, b) in params.coefficients().iter().enumerate() {
        for (z, m) in mean_envelope(b, design).into_iter().enumerate() {
            if below(m, bx.mean_min) {
                out.push(BoxViolation {
                    constraint: Constraint::MeanLowerBound { response: z },
                    component: r,
                    value: m,
                    bound: bx.mean_min,
                });
            }
        }
    }
    Ok(out)
}

/// Euclidean projection of `weights` onto `{w : Σw = 1, w ≥ floor}`.
///
/// Weights below the floor are pinned to it and the remaining mass is shared
/// proportionally among the rest, repeating until no free weight drops below
/// the floor. Weights already feasible are returned unchanged.
pub fn project_weights(weights: &[f64], floor: f64) -> Result<Vec<f64>> {
    let k = weights.len();
    if floor * k as f64 > 1.0 + BOX_TOL {
        return Err(Error::Config(format!(
            "infeasible box: k * a_pi = {k} * {floor} > 1"
        )));
    }
    let total = sorted_sum(&mut weights.to_vec());
    let feasible = weights.iter().all(|&w| !below(w, floor));
    if feasible && (total - 1.0).abs() <= 1e-12 {
        return Ok(weights.to_vec());
    }
    let mut pinned = vec![false; k];
    loop {
        let n_pinned = pinned.iter().filter(|&&p| p).count();
        if n_pinned == k {
            return Ok(vec![1.0 / k as f64; k]);
        }
        let free_mass = 1.0 - floor * n_pinned as f64;
        let mut free: Vec<f64> = (0..k).filter(|&r| !pinned[r]).map(|r| weights[r]).collect();
        let free_total = sorted_sum(&mut free);
        let scale = free_mass / free_total;
        let mut changed = false;
        for r in 0..k {
            if !pinned[r] && weights[r] * scale < floor {
                pinned[r] = true;
                changed = true;
            }
        }
        if !changed {
            return Ok((0..k)
                .map(|r| if pinned[r] { floor } else { weights[r] * scale })
                .collect());
        }
    }
}

/// Clip the spectrum of `sigma` into `[lo, hi]`. Matrices already inside the
/// interval are returned unchanged.
pub(crate) fn clip_covariance(sigma: &DMatrix<f64>, lo: f64, hi: f64) -> DMatrix<f64> {
    let sym = (sigma + sigma.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    if eig.eigenvalues.iter().all(|&e| !below(e, lo) && !above(e, hi)) {
        return sigma.clone();
    }
    let clipped = eig.eigenvalues.map(|e| e.clamp(lo, hi));
    let v = &eig.eigenvectors;
    let out = v * DMatrix::from_diagonal(&clipped) * v.transpose();
    (&out + out.transpose()) * 0.5
}

/// Scale each coefficient row so that `max_i |β_{r,z}·x_i| ≤ A_β`.
pub(crate) fn clip_coefficients(coef: &DMatrix<f64>, design: &DMatrix<f64>, cap: f64) -> DMatrix<f64> {
    let env = mean_envelope(coef, design);
    let mut out = coef.clone();
    for (z, m) in env.into_iter().enumerate() {
        if above(m, cap) {
            let s = cap / m;
            out.row_mut(z).iter_mut().for_each(|v| *v *= s);
        }
    }
    out
}

/// Nearest feasible parameters under the box convention.
///
/// Weights are projected onto the truncated simplex, covariance spectra are
/// clipped into [`ParameterBox::eigen_interval`], and each coefficient row is
/// scaled so its means over the rows of `design` stay within `A_β`. Feasible
/// pieces are left untouched, so the map is idempotent.
pub fn project_to_box(
    params: &ModelParams,
    bx: &ParameterBox,
    design: &DMatrix<f64>,
) -> Result<ModelParams> {
    bx.check_components(params.k())?;
    check_design(params, design)?;
    let weights = project_weights(params.weights(), bx.weight_min)?;
    let (lo, hi) = bx.eigen_interval();
    let covariances = params
        .covariances()
        .iter()
        .map(|s| clip_covariance(s, lo, hi))
        .collect();
    let coefficients = params
        .coefficients()
        .iter()
        .map(|b| clip_coefficients(b, design, bx.mean_max))
        .collect();
    ModelParams::new(weights, coefficients, covariances)
}
