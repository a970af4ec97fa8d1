//! Training objectives: SSIM, `pe`, per-pixel minimum appearance loss,
//! edge-aware smoothness, the multi-scale photometric combination, the scale
//! loss and the final weighted sum.
//!
//! Reductions run sequentially in row-major order so every value is
//! bit-reproducible.

mod photometric;
mod scale;
mod smoothness;
pub mod ssim;

pub use photometric::{appearance_loss, appearance_term, pe, pe_vjp, AppearanceTerm};
pub use scale::{scale_loss, ScaleLoss};
pub use smoothness::{smoothness_loss, smoothness_with_grad};
pub use ssim::ssim_map;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{DepthMap, ImagePyramid, SynthesizedView};

/// Sign with `sign(0) = 0`, the subgradient used for every `|.|` term.
#[inline]
pub(crate) fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    /// SSIM / L1 balance in `pe`.
    pub alpha_ssim: f64,
    /// Smoothness weight.
    pub lambda_smooth: f64,
    /// Scale-loss weight.
    pub beta_scale: f64,
    pub num_scales: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha_ssim: 0.85,
            lambda_smooth: 1e-3,
            beta_scale: 0.05,
            num_scales: 4,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha_ssim) {
            return Err(Error::Config(format!("alpha_ssim {} outside [0, 1]", self.alpha_ssim)));
        }
        if !(self.lambda_smooth >= 0.0) || !(self.beta_scale >= 0.0) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if self.num_scales == 0 {
            return Err(Error::Config("num_scales must be at least 1".into()));
        }
        Ok(())
    }
}

/// Individual loss terms; `total = lambda * smoothness + sum(appearance) + beta * scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub appearance_per_scale: Vec<f64>,
    pub smoothness: f64,
    pub scale: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// `lambda * smoothness + sum(appearance)`.
    pub fn photometric(&self, w: &LossWeights) -> f64 {
        w.lambda_smooth * self.smoothness + self.appearance_per_scale.iter().sum::<f64>()
    }

    pub fn csv_header(num_scales: usize) -> Vec<String> {
        let mut h = vec!["iteration".to_string()];
        h.extend((0..num_scales).map(|l| format!("ap_{l}")));
        h.extend(["smooth", "scale", "total"].map(String::from));
        h
    }

    pub fn csv_record(&self, iteration: usize) -> Vec<String> {
        let mut r = vec![iteration.to_string()];
        r.extend(self.appearance_per_scale.iter().map(|v| v.to_string()));
        r.push(self.smoothness.to_string());
        r.push(self.scale.to_string());
        r.push(self.total.to_string());
        r
    }
}

/// Combines per-scale appearance losses with the smoothness term.
pub fn combine_photometric(appearance_per_scale: Vec<f64>, smoothness: f64, w: &LossWeights) -> LossBreakdown {
    let mut b = LossBreakdown {
        appearance_per_scale,
        smoothness,
        scale: 0.0,
        total: 0.0,
    };
    b.total = b.photometric(w);
    b
}

/// Multi-scale photometric loss. `views[l]` holds the reconstructions of
/// the target at pyramid level `l`, one per source; smoothness is evaluated
/// on the full-resolution depth against the level-0 target.
pub fn photometric_loss(
    target: &ImagePyramid,
    views: &[Vec<SynthesizedView>],
    depth: &DepthMap,
    w: &LossWeights,
) -> Result<LossBreakdown> {
    if target.len() != w.num_scales || views.len() != w.num_scales {
        return Err(Error::Contract(format!(
            "expected {} scales, got target {} and views {}",
            w.num_scales,
            target.len(),
            views.len()
        )));
    }
    let mut ap = Vec::with_capacity(w.num_scales);
    for (l, level_views) in views.iter().enumerate() {
        let recons: Vec<_> = level_views.iter().map(|v| v.image.clone()).collect();
        let valid: Vec<_> = level_views.iter().map(|v| v.valid.clone()).collect();
        ap.push(appearance_loss(target.level(l), &recons, &valid, w)?);
    }
    let sm = smoothness_loss(depth, target.level(0))?;
    Ok(combine_photometric(ap, sm, w))
}

/// Adds the weighted scale loss to a photometric breakdown.
pub fn final_loss(photo: &LossBreakdown, scale: f64, w: &LossWeights) -> LossBreakdown {
    let mut b = photo.clone();
    b.scale = scale;
    b.total = photo.photometric(w) + w.beta_scale * scale;
    b
}
