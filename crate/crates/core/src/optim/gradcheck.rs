//! Finite-difference verification of the analytic objective gradient.

use serde::Serialize;

use super::{FitConfig, FitState, ObjectModel, Problem};
use crate::error::{Error, Result};

/// Comparison at one coordinate of the flattened parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradCheckEntry {
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
    /// False when the analytic gradient at the centre is not the mean of its
    /// values at the stencil ends, which means the interval straddles a
    /// sampling kink or a validity change.
    pub smooth: bool,
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Central differences of the loss at `coords` with step `h`, next to the
/// analytic gradient. The motion labels in `model` are held fixed.
pub fn gradient_check(
    problem: &Problem,
    state: &FitState,
    model: &ObjectModel,
    cfg: &FitConfig,
    coords: &[usize],
    h: f64,
    floor: f64,
) -> Result<Vec<GradCheckEntry>> {
    if !(h > 0.0) {
        return Err(Error::Domain(format!("step {h} must be positive")));
    }
    let x = state.to_vec();
    if let Some(&c) = coords.iter().find(|&&c| c >= x.len()) {
        return Err(Error::Contract(format!("coordinate {c} outside {} parameters", x.len())));
    }
    let grad = |v: &[f64]| -> Result<Vec<f64>> {
        let st = state.with_vec(v)?;
        let e = problem.evaluate(&st, model, cfg, true)?;
        Ok(e.gradients.expect("requested").to_vec())
    };
    let g0 = grad(&x)?;
    let mut out = Vec::with_capacity(coords.len());
    for &c in coords {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[c] += h;
        xm[c] -= h;
        let fp = problem.loss_at(state, model, cfg, &xp)?;
        let fm = problem.loss_at(state, model, cfg, &xm)?;
        let numeric = (fp - fm) / (2.0 * h);
        let (gp, gm) = (grad(&xp)?[c], grad(&xm)?[c]);
        out.push(GradCheckEntry {
            coord: c,
            analytic: g0[c],
            numeric,
            rel_error: relative_error(g0[c], numeric, floor),
            smooth: relative_error(g0[c], 0.5 * (gp + gm), floor) < 1e-6,
        });
    }
    Ok(out)
}
