//! Direct gradient-based fitting of depth and camera pose: the parameter
//! maps, the objective with analytic gradients, a finite-difference oracle
//! and the descent loop.

mod fit;
pub mod gradcheck;
mod objective;
pub mod report;
pub mod setup;

pub use fit::{fit, FitError, FitReport, IterationRow, StopReason};
pub use objective::{Evaluation, FrameData, Gradients, ObjectLink, ObjectModel, Problem};
pub use setup::{jitter_depth, SceneProblem};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{so3, SE3Pose};
use crate::imaging::DepthMap;
use crate::losses::LossWeights;
use crate::objects::{DEFAULT_ALPHA_ASSOC, DEFAULT_EPS_STATIC, DEFAULT_SCORE_THRESHOLD};

/// `1 / a + b` is the nearest depth, `1 / b` the farthest.
pub const DISP_A: f64 = 1.0 / DepthMap::MIN_DEPTH - 1.0 / DepthMap::MAX_DEPTH;
pub const DISP_B: f64 = 1.0 / DepthMap::MAX_DEPTH;
/// Raw values are clamped to this magnitude so depth stays strictly inside
/// the open range.
pub const RAW_LIMIT: f64 = 30.0;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `D = 1 / (a sigmoid(raw) + b)`; strictly inside `(0.1, 80)`, decreasing.
pub fn disp_to_depth(raw: f64) -> f64 {
    1.0 / (DISP_A * sigmoid(raw.clamp(-RAW_LIMIT, RAW_LIMIT)) + DISP_B)
}

/// `dD / draw`; zero where the raw value is clamped.
pub fn disp_to_depth_derivative(raw: f64) -> f64 {
    if raw.abs() > RAW_LIMIT {
        return 0.0;
    }
    let s = sigmoid(raw);
    let d = 1.0 / (DISP_A * s + DISP_B);
    -d * d * DISP_A * s * (1.0 - s)
}

/// Inverse of [`disp_to_depth`] on the open range.
pub fn depth_to_disp(depth: f64) -> Result<f64> {
    if !(depth > DepthMap::MIN_DEPTH && depth < DepthMap::MAX_DEPTH) {
        return Err(Error::Domain(format!("depth {depth} outside (0.1, 80)")));
    }
    let s = (1.0 / depth - DISP_B) / DISP_A;
    Ok((s / (1.0 - s)).ln().clamp(-RAW_LIMIT, RAW_LIMIT))
}

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn numeric_gradient(mut f: impl FnMut(&[f64]) -> Result<f64>, x: &[f64], h: f64) -> Result<Vec<f64>> {
    numeric_gradient_at(&mut f, x, h, 0..x.len())
}

/// Central differences for the listed coordinates only.
pub fn numeric_gradient_at(
    f: &mut impl FnMut(&[f64]) -> Result<f64>,
    x: &[f64],
    h: f64,
    coords: impl IntoIterator<Item = usize>,
) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::Domain(format!("step {h} must be positive")));
    }
    let mut probe = x.to_vec();
    let mut out = Vec::new();
    for i in coords {
        probe[i] = x[i] + h;
        let fp = f(&probe)?;
        probe[i] = x[i] - h;
        let fm = f(&probe)?;
        probe[i] = x[i];
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::Divergence(format!("non-finite evaluation at coordinate {i}")));
        }
        out.push((fp - fm) / (2.0 * h));
    }
    Ok(out)
}

/// Per-pixel raw disparities.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthParams {
    width: usize,
    height: usize,
    raw: Vec<f64>,
}

impl DepthParams {
    pub fn from_depth(depth: &DepthMap) -> Result<Self> {
        let raw = depth
            .data()
            .iter()
            .map(|&d| depth_to_disp(d))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            width: depth.width(),
            height: depth.height(),
            raw,
        })
    }

    pub fn constant(width: usize, height: usize, depth: f64) -> Result<Self> {
        Self::from_depth(&DepthMap::filled(width, height, depth))
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn raw(&self) -> &[f64] {
        &self.raw
    }

    pub fn raw_mut(&mut self) -> &mut [f64] {
        &mut self.raw
    }

    pub fn depth(&self) -> DepthMap {
        DepthMap::from_fn(self.width, self.height, |x, y| disp_to_depth(self.raw[y * self.width + x]))
    }
}

/// Axis-angle rotation and translation of one `T_{t->s}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseParams {
    pub omega: Vector3<f64>,
    pub translation: Vector3<f64>,
}

impl PoseParams {
    pub fn from_pose(p: &SE3Pose) -> Self {
        Self {
            omega: p.axis_angle(),
            translation: *p.translation(),
        }
    }

    pub fn pose(&self) -> SE3Pose {
        SE3Pose::from_axis_angle(self.omega, self.translation)
    }

    /// Keeps the rotation vector norm below pi.
    pub fn rewrap(&mut self) {
        self.omega = so3::wrap(&self.omega);
    }

    pub fn to_array(&self) -> [f64; 6] {
        let (w, t) = (self.omega, self.translation);
        [w.x, w.y, w.z, t.x, t.y, t.z]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self {
            omega: Vector3::new(v[0], v[1], v[2]),
            translation: Vector3::new(v[3], v[4], v[5]),
        }
    }
}

/// The optimisation variables.
#[derive(Debug, Clone, PartialEq)]
pub struct FitState {
    pub depth: DepthParams,
    /// One pose per source frame.
    pub poses: Vec<PoseParams>,
    /// Translation offsets added to the target-frame pose of each target
    /// detection, in detection order. Only moved when object optimisation is on.
    pub object_offsets: Vec<Vector3<f64>>,
}

impl FitState {
    pub fn new(depth: DepthParams, poses: Vec<PoseParams>, num_objects: usize) -> Self {
        Self {
            depth,
            poses,
            object_offsets: vec![Vector3::zeros(); num_objects],
        }
    }

    /// Flattened layout: raw depth, then six numbers per pose, then three per
    /// object offset.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.depth.raw.clone();
        for p in &self.poses {
            v.extend(p.to_array());
        }
        for o in &self.object_offsets {
            v.extend(o.iter());
        }
        v
    }

    pub fn len(&self) -> usize {
        self.depth.raw.len() + 6 * self.poses.len() + 3 * self.object_offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn with_vec(&self, v: &[f64]) -> Result<Self> {
        if v.len() != self.len() {
            return Err(Error::Contract("parameter vector has the wrong length".into()));
        }
        let n = self.depth.raw.len();
        let mut out = self.clone();
        out.depth.raw.copy_from_slice(&v[..n]);
        for (i, p) in out.poses.iter_mut().enumerate() {
            *p = PoseParams::from_slice(&v[n + 6 * i..n + 6 * i + 6]);
        }
        let m = n + 6 * self.poses.len();
        for (i, o) in out.object_offsets.iter_mut().enumerate() {
            *o = Vector3::new(v[m + 3 * i], v[m + 3 * i + 1], v[m + 3 * i + 2]);
        }
        Ok(out)
    }

    pub fn camera_poses(&self) -> Vec<SE3Pose> {
        self.poses.iter().map(PoseParams::pose).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FreeParams {
    Depth,
    Pose,
    Both,
}

impl FreeParams {
    pub fn depth(self) -> bool {
        matches!(self, FreeParams::Depth | FreeParams::Both)
    }

    pub fn pose(self) -> bool {
        matches!(self, FreeParams::Pose | FreeParams::Both)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearningRates {
    pub depth: f64,
    pub rotation: f64,
    pub translation: f64,
    pub object: f64,
    /// Step on the log of a joint depth and translation scale taken once per
    /// iteration when both are free; zero disables it.
    pub scale: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            depth: 2000.0,
            rotation: 0.05,
            translation: 0.5,
            object: 0.5,
            scale: 1.0,
        }
    }
}

/// How the coarser appearance levels are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PyramidMode {
    /// Warp every level with the box-downsampled depth and source images.
    Warp,
    /// Warp once at full resolution and box-downsample the reconstruction.
    /// Unlike `Warp`, the ground-truth depth reproduces every level.
    #[default]
    Reconstruction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub iterations: usize,
    pub learning_rate: LearningRates,
    pub weights: LossWeights,
    pub free: FreeParams,
    /// Pixel threshold below which an associated object counts as static.
    pub eps_static: f64,
    pub alpha_assoc: f64,
    pub score_threshold: f64,
    /// Multiplier on detected object translations.
    pub object_scale: f64,
    /// Warp associated objects with their pose change; off warps every pixel
    /// with the camera motion.
    pub dynamic_warp: bool,
    /// Halve the step until the loss does not increase.
    pub step_halving: bool,
    pub max_halvings: usize,
    /// Also optimise translation offsets of the target-frame object poses.
    pub optimize_object_translation: bool,
    pub pyramid: PyramidMode,
    /// Seed of the random initial-state perturbation; the descent itself is
    /// deterministic.
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            iterations: 500,
            learning_rate: LearningRates::default(),
            weights: LossWeights::default(),
            free: FreeParams::Both,
            eps_static: DEFAULT_EPS_STATIC,
            alpha_assoc: DEFAULT_ALPHA_ASSOC,
            score_threshold: DEFAULT_SCORE_THRESHOLD,
            object_scale: 1.0,
            dynamic_warp: true,
            step_halving: true,
            max_halvings: 30,
            optimize_object_translation: false,
            pyramid: PyramidMode::default(),
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        let lr = &self.learning_rate;
        if ![lr.depth, lr.rotation, lr.translation, lr.object]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0)
        {
            return Err(Error::Config("learning rates must be positive and finite".into()));
        }
        if !(lr.scale >= 0.0 && lr.scale.is_finite()) {
            return Err(Error::Config("scale learning rate must be non-negative and finite".into()));
        }
        if !(self.eps_static > 0.0) {
            return Err(Error::Config("eps_static must be positive".into()));
        }
        if !(self.object_scale > 0.0 && self.object_scale.is_finite()) {
            return Err(Error::Config("object_scale must be positive".into()));
        }
        if !self.alpha_assoc.is_finite() || !self.score_threshold.is_finite() {
            return Err(Error::Config("association parameters must be finite".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
