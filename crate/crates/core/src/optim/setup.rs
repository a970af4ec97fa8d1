//! Builds fitting problems from rendered synthetic scenes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{depth_to_disp, disp_to_depth, DepthParams, FitConfig, FitState, FrameData, PoseParams, Problem, RAW_LIMIT};
use crate::error::{Error, Result};
use crate::geometry::SE3Pose;
use crate::scene::{render_frame, RenderedFrame, SceneConfig};

/// A problem together with the ground truth that generated it.
pub struct SceneProblem {
    pub problem: Problem,
    pub target: RenderedFrame,
    pub sources: Vec<RenderedFrame>,
    /// True `T_{t->s}` per source.
    pub gt_poses: Vec<SE3Pose>,
}

impl SceneProblem {
    pub fn new(scene: &SceneConfig, target: usize, sources: &[usize], cfg: &FitConfig) -> Result<Self> {
        if sources.is_empty() || sources.contains(&target) {
            return Err(Error::Config("sources must be non-empty and exclude the target".into()));
        }
        let t = render_frame(scene, target)?;
        let srcs = sources
            .iter()
            .map(|&s| render_frame(scene, s))
            .collect::<Result<Vec<_>>>()?;
        Self::from_frames(scene, t, srcs, cfg)
    }

    /// Like [`new`](Self::new) with frames rendered beforehand, for example
    /// to perturb their detections.
    pub fn from_frames(
        scene: &SceneConfig,
        target: RenderedFrame,
        sources: Vec<RenderedFrame>,
        cfg: &FitConfig,
    ) -> Result<Self> {
        if sources.is_empty() || sources.iter().any(|s| s.time == target.time) {
            return Err(Error::Config("sources must be non-empty and exclude the target".into()));
        }
        let gt_poses = sources
            .iter()
            .map(|s| scene.relative_pose(target.time, s.time))
            .collect::<Result<Vec<_>>>()?;
        let problem = Problem::new(
            scene.intrinsics,
            FrameData::from(&target),
            sources.iter().map(FrameData::from).collect(),
            Some(target.depth.clone()),
            cfg,
        )?;
        Ok(Self {
            problem,
            target,
            sources,
            gt_poses,
        })
    }

    /// Ground-truth depth and poses.
    pub fn gt_state(&self) -> Result<FitState> {
        Ok(FitState::new(
            DepthParams::from_depth(&self.target.depth)?,
            self.gt_poses.iter().map(PoseParams::from_pose).collect(),
            self.problem.num_target_objects(),
        ))
    }

    /// Constant depth with the given poses.
    pub fn constant_depth_state(&self, depth: f64, poses: &[SE3Pose]) -> Result<FitState> {
        Ok(FitState::new(
            DepthParams::constant(self.problem.width(), self.problem.height(), depth)?,
            poses.iter().map(PoseParams::from_pose).collect(),
            self.problem.num_target_objects(),
        ))
    }

    /// Ground truth with depth and camera translation scaled by `c`.
    pub fn scaled_gt_state(&self, c: f64) -> Result<FitState> {
        let depth = self.target.depth.scaled(c);
        Ok(FitState::new(
            DepthParams::from_depth(&depth)?,
            self.gt_poses
                .iter()
                .map(|p| PoseParams::from_pose(&p.scaled_translation(c)))
                .collect(),
            self.problem.num_target_objects(),
        ))
    }
}

/// Multiplies every depth by `exp(n)` with `n ~ N(0, sigma)` drawn from a
/// stream seeded by `seed`, staying inside the representable range.
pub fn jitter_depth(state: &FitState, sigma: f64, seed: u64) -> Result<FitState> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Domain(format!("jitter sigma {sigma} must be finite and non-negative")));
    }
    let mut next = state.clone();
    if sigma == 0.0 {
        return Ok(next);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("sigma checked");
    let (lo, hi) = (disp_to_depth(RAW_LIMIT), disp_to_depth(-RAW_LIMIT));
    for r in next.depth.raw_mut() {
        let d = disp_to_depth(*r) * normal.sample(&mut rng).exp();
        *r = depth_to_disp(d.clamp(lo, hi))?;
    }
    Ok(next)
}
