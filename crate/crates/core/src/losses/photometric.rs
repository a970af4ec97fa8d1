//! Photometric error `pe` and the per-pixel minimum appearance loss.

use super::ssim::{ssim_map, ssim_vjp};
use super::LossWeights;
use crate::error::{Error, Result};
use crate::imaging::{BinaryMask, Image};

/// `pe = mean_c[(alpha / 2)(1 - SSIM_c) + (1 - alpha)|t_c - r_c|]`, per pixel.
pub fn pe(target: &Image, recon: &Image, w: &LossWeights) -> Result<Image> {
    let ssim = ssim_map(target, recon)?;
    let ch = target.channels();
    let inv_c = 1.0 / ch as f64;
    let a = w.alpha_ssim;
    Ok(Image::from_fn(target.width(), target.height(), 1, |x, y, _| {
        let mut acc = 0.0;
        for c in 0..ch {
            let l1 = (target.get(x, y, c) - recon.get(x, y, c)).abs();
            acc += 0.5 * a * (1.0 - ssim.get(x, y, c)) + (1.0 - a) * l1;
        }
        acc * inv_c
    }))
}

/// Given `upstream[p] = dL/dpe(p)`, returns `dL/drecon`.
pub fn pe_vjp(target: &Image, recon: &Image, w: &LossWeights, upstream: &[f64]) -> Result<Image> {
    let (wd, ht, ch) = (target.width(), target.height(), target.channels());
    if upstream.len() != wd * ht {
        return Err(Error::Contract("upstream gradient has the wrong length".into()));
    }
    let inv_c = 1.0 / ch as f64;
    let a = w.alpha_ssim;
    let ssim_up = Image::from_fn(wd, ht, ch, |x, y, _| -0.5 * a * inv_c * upstream[y * wd + x]);
    let mut grad = if a != 0.0 {
        ssim_vjp(target, recon, &ssim_up)?
    } else {
        Image::zeros(wd, ht, ch)
    };
    for y in 0..ht {
        for x in 0..wd {
            let g = upstream[y * wd + x];
            if g == 0.0 {
                continue;
            }
            for c in 0..ch {
                let d = recon.get(x, y, c) - target.get(x, y, c);
                let v = grad.get(x, y, c) + g * (1.0 - a) * inv_c * super::sign(d);
                grad.set(x, y, c, v);
            }
        }
    }
    Ok(grad)
}

/// Value of the appearance loss plus the bookkeeping needed to back-propagate it.
#[derive(Debug, Clone)]
pub struct AppearanceTerm {
    pub value: f64,
    /// Per pixel, the index of the reconstruction attaining the minimum, or
    /// `None` when the pixel is invalid in every view.
    pub argmin: Vec<Option<usize>>,
    pub valid_pixels: usize,
    pub pe_maps: Vec<Image>,
}

impl AppearanceTerm {
    /// `dL/dpe` for reconstruction `view`.
    pub fn upstream(&self, view: usize) -> Vec<f64> {
        let g = 1.0 / self.valid_pixels as f64;
        self.argmin
            .iter()
            .map(|a| if *a == Some(view) { g } else { 0.0 })
            .collect()
    }
}

/// Per-pixel minimum of `pe` over reconstructions, averaged over pixels with
/// at least one valid candidate. `valid[s]` marks the usable pixels of view `s`.
pub fn appearance_term(
    target: &Image,
    recons: &[Image],
    valid: &[BinaryMask],
    w: &LossWeights,
) -> Result<AppearanceTerm> {
    if recons.is_empty() {
        return Err(Error::Contract("at least one reconstruction is required".into()));
    }
    if recons.len() != valid.len() {
        return Err(Error::Contract("one validity mask per reconstruction".into()));
    }
    for (r, m) in recons.iter().zip(valid) {
        if !r.same_shape(target) || m.width() != target.width() || m.height() != target.height() {
            return Err(Error::Contract("reconstruction size differs from target".into()));
        }
    }
    let pe_maps = recons
        .iter()
        .map(|r| pe(target, r, w))
        .collect::<Result<Vec<_>>>()?;
    let n = target.len_pixels();
    let mut argmin = vec![None; n];
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, slot) in argmin.iter_mut().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (s, (map, mask)) in pe_maps.iter().zip(valid).enumerate() {
            if !mask.data()[i] {
                continue;
            }
            let v = map.data()[i];
            if best.is_none_or(|(_, b)| v < b) {
                best = Some((s, v));
            }
        }
        if let Some((s, v)) = best {
            *slot = Some(s);
            sum += v;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::NoValidPixels("every pixel is invalid in every view".into()));
    }
    Ok(AppearanceTerm {
        value: sum / count as f64,
        argmin,
        valid_pixels: count,
        pe_maps,
    })
}

pub fn appearance_loss(target: &Image, recons: &[Image], valid: &[BinaryMask], w: &LossWeights) -> Result<f64> {
    Ok(appearance_term(target, recons, valid, w)?.value)
}
