use std::time::Instant;

use super::{
    depth_to_disp, disp_to_depth, disp_to_depth_derivative, FitConfig, FitState, Gradients, ObjectModel, Problem,
    RAW_LIMIT,
};
use crate::error::{Error, Result};
use crate::eval::{crop_region, scale_ratio, CropSpec};
use crate::geometry::SE3Pose;
use crate::imaging::{BinaryMask, DepthMap};
use crate::losses::LossBreakdown;

/// One row of the loss curve: the state after `iteration` accepted steps.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRow {
    pub iteration: usize,
    pub loss: LossBreakdown,
    /// Fraction of the configured learning rates used by the step that led
    /// here (0 for the initial row).
    pub step_scale: f64,
    pub grad_depth_norm: f64,
    pub grad_pose_norm: f64,
    pub static_objects: usize,
    /// Target pixels held out of the appearance term so far.
    pub held_out: usize,
    /// Mean norm of the camera translations.
    pub translation_norm: f64,
    /// `median(gt) / median(pred)` over the evaluation crop, when ground
    /// truth is known.
    pub scale_ratio: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Budget,
    /// No step within the halving budget reduced the loss.
    Stalled,
}

#[derive(Debug, Clone)]
pub struct FitReport {
    /// Row 0 is the initial state; one more row per accepted iteration.
    pub rows: Vec<IterationRow>,
    pub final_state: FitState,
    pub final_depth: DepthMap,
    pub final_poses: Vec<SE3Pose>,
    pub stop: StopReason,
    pub seconds: f64,
}

impl FitReport {
    pub fn final_row(&self) -> &IterationRow {
        self.rows.last().expect("report has the initial row")
    }

    /// Iterations run, excluding the initial evaluation.
    pub fn iterations(&self) -> usize {
        self.rows.len() - 1
    }
}

/// A fit that diverged, with everything recorded up to that point.
#[derive(Debug)]
pub struct FitError {
    pub error: Error,
    pub partial: Option<Box<FitReport>>,
}

impl std::fmt::Display for FitError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.error)
    }
}

impl std::error::Error for FitError {}

impl From<Error> for FitError {
    fn from(error: Error) -> Self {
        Self { error, partial: None }
    }
}

fn apply_step(state: &FitState, g: &Gradients, cfg: &FitConfig, scale: f64) -> FitState {
    let lr = &cfg.learning_rate;
    let mut next = state.clone();
    if cfg.free.depth() {
        for (r, gd) in next.depth.raw_mut().iter_mut().zip(&g.depth) {
            *r -= scale * lr.depth * gd;
        }
    }
    if cfg.free.pose() {
        for (p, gp) in next.poses.iter_mut().zip(&g.poses) {
            for a in 0..3 {
                p.omega[a] -= scale * lr.rotation * gp[a];
                p.translation[a] -= scale * lr.translation * gp[3 + a];
            }
            p.rewrap();
        }
    }
    if cfg.optimize_object_translation {
        for (o, go) in next.object_offsets.iter_mut().zip(&g.objects) {
            *o -= go * (scale * lr.object);
        }
    }
    next
}

fn ratio_for(problem: &Problem, state: &FitState) -> Result<Option<f64>> {
    let Some(gt) = problem.gt_depth() else {
        return Ok(None);
    };
    let region = crop_region(problem.width(), problem.height(), &CropSpec::EIGEN)?;
    Ok(Some(scale_ratio(&state.depth.depth(), gt, &region)?))
}

struct Current {
    model: ObjectModel,
    loss: LossBreakdown,
    grad: Gradients,
    valid: Vec<BinaryMask>,
}

fn evaluate_at(problem: &Problem, state: &FitState, cfg: &FitConfig, held_out: &BinaryMask) -> Result<Current> {
    let mut model = problem.classify(state, cfg)?;
    model.held_out = (held_out.count() > 0).then(|| held_out.clone());
    let e = problem.evaluate(state, &model, cfg, true)?;
    Ok(Current {
        model,
        loss: e.breakdown,
        grad: e.gradients.expect("gradient requested"),
        valid: e.valid,
    })
}

fn row(problem: &Problem, state: &FitState, cur: &Current, iteration: usize, step_scale: f64) -> Result<IterationRow> {
    let held_out = cur.model.held_out.as_ref().map_or(0, BinaryMask::count);
    Ok(IterationRow {
        iteration,
        loss: cur.loss.clone(),
        step_scale,
        grad_depth_norm: cur.grad.depth_norm(),
        grad_pose_norm: cur.grad.pose_norm(),
        static_objects: cur.model.static_count(),
        held_out,
        translation_norm: state.poses.iter().map(|p| p.translation.norm()).sum::<f64>() / state.poses.len() as f64,
        scale_ratio: ratio_for(problem, state)?,
    })
}

fn diverged(error: Error, rows: Vec<IterationRow>, state: FitState, stop: StopReason, start: Instant) -> FitError {
    let error = match error {
        Error::Divergence(m) => Error::Divergence(m),
        other => Error::Divergence(other.to_string()),
    };
    FitError {
        error,
        partial: Some(Box::new(FitReport {
            final_depth: state.depth.depth(),
            final_poses: state.camera_poses(),
            final_state: state,
            rows,
            stop,
            seconds: start.elapsed().as_secs_f64(),
        })),
    }
}

enum Search {
    Accepted(FitState, f64),
    /// No trial lowered the loss; carries the validity masks of the
    /// smallest trial step when it could be evaluated.
    Rejected(Option<Vec<BinaryMask>>),
    Failed(Error),
}

/// Rounds of freezing or holding out pixels tried before an iteration counts
/// as stalled.
const MAX_FREEZE_ROUNDS: usize = 4;

fn line_search(problem: &Problem, state: &FitState, cur: &Current, grad: &Gradients, cfg: &FitConfig) -> Search {
    let mut scale = 1.0;
    let mut last_error = None;
    let mut smallest = None;
    for _ in 0..=cfg.max_halvings {
        let trial = apply_step(state, grad, cfg, scale);
        match problem.evaluate(&trial, &cur.model, cfg, false) {
            Ok(e) if !cfg.step_halving || e.breakdown.total <= cur.loss.total => return Search::Accepted(trial, scale),
            Ok(e) => smallest = Some(e.valid),
            Err(e) if !cfg.step_halving => return Search::Failed(e),
            Err(e) => {
                smallest = None;
                last_error = Some(e);
            }
        }
        if !cfg.step_halving {
            break;
        }
        scale *= 0.5;
    }
    match (smallest, last_error) {
        // Every halved step failed to evaluate: the step sizes are unusable,
        // not merely past the minimum.
        (None, Some(e)) => Search::Failed(e),
        (smallest, _) => Search::Rejected(smallest),
    }
}

/// Depth and camera translations multiplied by `c`, which leaves the
/// appearance of every pixel warped by the camera motion unchanged.
pub(super) fn scaled_state(state: &FitState, c: f64) -> Result<FitState> {
    let (lo, hi) = (disp_to_depth(RAW_LIMIT), disp_to_depth(-RAW_LIMIT));
    let mut next = state.clone();
    for r in next.depth.raw_mut() {
        *r = depth_to_disp((disp_to_depth(*r) * c).clamp(lo, hi))?;
    }
    for p in &mut next.poses {
        p.translation *= c;
    }
    Ok(next)
}

/// Derivative of the loss with respect to `ln c` in [`scaled_state`].
pub(super) fn scale_derivative(state: &FitState, grad: &Gradients) -> f64 {
    let depth: f64 = state
        .depth
        .raw()
        .iter()
        .zip(&grad.depth)
        .map(|(&r, g)| {
            let dd = disp_to_depth_derivative(r);
            if dd == 0.0 {
                0.0
            } else {
                g * disp_to_depth(r) / dd
            }
        })
        .sum();
    let trans: f64 = state
        .poses
        .iter()
        .zip(&grad.poses)
        .map(|(p, g)| (0..3).map(|a| g[3 + a] * p.translation[a]).sum::<f64>())
        .sum();
    depth + trans
}

/// The appearance valley along the joint scale is kinked, so plain steps
/// cross it only by tiny amounts; this takes a separate halving step along it.
fn scale_search(problem: &Problem, state: &FitState, cur: &Current, cfg: &FitConfig) -> Option<FitState> {
    let lr = cfg.learning_rate.scale;
    if lr == 0.0 || !(cfg.free.depth() && cfg.free.pose()) {
        return None;
    }
    let dir = scale_derivative(state, &cur.grad);
    if !(dir.is_finite() && dir != 0.0) {
        return None;
    }
    let mut step = -lr * dir;
    for _ in 0..=cfg.max_halvings {
        let trial = scaled_state(state, step.exp()).ok()?;
        match problem.evaluate(&trial, &cur.model, cfg, false) {
            Ok(e) if !cfg.step_halving || e.breakdown.total < cur.loss.total => return Some(trial),
            _ if !cfg.step_halving => return None,
            _ => step *= 0.5,
        }
    }
    None
}

/// Gradient descent on the free parameters. Every iteration re-labels the
/// associated objects, evaluates the final loss with its gradient and takes
/// one step; with halving on, the step is halved until the loss does not
/// increase. A non-finite loss or a state leaving no valid pixels is
/// divergence, as is a halving search in which no trial could be evaluated.
///
/// When every halved step is rejected because some pixels flip validity,
/// those pixels stop moving: their depth is frozen if it is free, otherwise
/// they are held out of the appearance term for the rest of the fit. Holding
/// out redefines the objective, so recorded losses are monotone only between
/// such events.
pub fn fit(problem: &Problem, state0: FitState, cfg: &FitConfig) -> std::result::Result<FitReport, FitError> {
    let start = Instant::now();
    cfg.validate()?;
    problem.check_state(&state0)?;
    let mut state = state0;
    let mut rows = Vec::with_capacity(cfg.iterations + 1);
    let mut held_out = BinaryMask::new(problem.width(), problem.height(), false);
    let mut cur = match evaluate_at(problem, &state, cfg, &held_out) {
        Ok(c) => c,
        Err(e) => return Err(diverged(e, rows, state, StopReason::Budget, start)),
    };
    rows.push(row(problem, &state, &cur, 0, 0.0)?);
    let mut stop = StopReason::Budget;
    // Depth pixels pinned at a validity boundary: moving them in any
    // direction the gradient suggests flips them in or out of the loss.
    let mut frozen = vec![false; problem.width() * problem.height()];
    for it in 1..=cfg.iterations {
        let mut accepted = None;
        let mut scale = 1.0;
        for _ in 0..=MAX_FREEZE_ROUNDS {
            let mut grad = cur.grad.clone();
            for (g, &f) in grad.depth.iter_mut().zip(&frozen) {
                if f {
                    *g = 0.0;
                }
            }
            let search = line_search(problem, &state, &cur, &grad, cfg);
            match search {
                Search::Accepted(next, s) => {
                    accepted = Some(next);
                    scale = s;
                    break;
                }
                Search::Failed(e) => return Err(diverged(e, rows, state, stop, start)),
                Search::Rejected(None) => break,
                Search::Rejected(Some(valid)) => {
                    let w = problem.width();
                    let flips: Vec<usize> = (0..frozen.len())
                        .filter(|&i| valid.iter().zip(&cur.valid).any(|(a, b)| a.data()[i] != b.data()[i]))
                        .collect();
                    let mut newly = 0;
                    if cfg.free.depth() {
                        for &i in &flips {
                            if !frozen[i] {
                                frozen[i] = true;
                                newly += 1;
                            }
                        }
                    }
                    if newly == 0 && cfg.free.pose() {
                        for &i in &flips {
                            if !held_out.get(i % w, i / w) {
                                held_out.set(i % w, i / w, true);
                                newly += 1;
                            }
                        }
                        if newly > 0 {
                            cur = match evaluate_at(problem, &state, cfg, &held_out) {
                                Ok(c) => c,
                                Err(e) => return Err(diverged(e, rows, state, stop, start)),
                            };
                        }
                    }
                    if newly == 0 {
                        break;
                    }
                }
            }
        }
        let Some(next) = accepted else {
            stop = StopReason::Stalled;
            break;
        };
        state = next;
        cur = match evaluate_at(problem, &state, cfg, &held_out) {
            Ok(c) => c,
            Err(e) => return Err(diverged(e, rows, state, stop, start)),
        };
        if let Some(next) = scale_search(problem, &state, &cur, cfg) {
            state = next;
            cur = match evaluate_at(problem, &state, cfg, &held_out) {
                Ok(c) => c,
                Err(e) => return Err(diverged(e, rows, state, stop, start)),
            };
        }
        rows.push(row(problem, &state, &cur, it, scale)?);
    }
    Ok(FitReport {
        final_depth: state.depth.depth(),
        final_poses: state.camera_poses(),
        final_state: state,
        rows,
        stop,
        seconds: start.elapsed().as_secs_f64(),
    })
}
