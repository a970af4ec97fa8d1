use super::{bilinear_sample, BinaryMask, Image, Partition};
use crate::error::{Error, Result};
use crate::geometry::PixelCoord;

/// Per-pixel source coordinates for one region's motion model. `None` marks
/// pixels whose warp failed (point behind the source camera).
#[derive(Debug, Clone, PartialEq)]
pub struct WarpField {
    width: usize,
    height: usize,
    coords: Vec<Option<PixelCoord>>,
}

impl WarpField {
    pub fn identity(width: usize, height: usize) -> Self {
        Self::from_fn(width, height, |x, y| Some(PixelCoord::new(x as f64, y as f64)))
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> Option<PixelCoord>,
    ) -> Self {
        let mut coords = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                coords.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            coords,
        }
    }

    pub fn get(&self, x: usize, y: usize) -> Option<PixelCoord> {
        self.coords[y * self.width + x]
    }
}

#[derive(Debug, Clone)]
pub struct SynthesizedView {
    pub image: Image,
    pub valid: BinaryMask,
}

/// Reconstructs the target frame from one source image.
///
/// `masks[i]` selects the target pixels explained by `warps[i]`; mask 0 is
/// the rigid background. Pixels whose warp failed or left the source frame
/// are marked invalid.
pub fn synthesize_view(source: &Image, warps: &[WarpField], masks: &[BinaryMask]) -> Result<SynthesizedView> {
    if warps.len() != masks.len() {
        return Err(Error::Contract(format!(
            "{} warp fields for {} masks",
            warps.len(),
            masks.len()
        )));
    }
    let partition = Partition::from_masks(masks)?;
    let (w, h) = (partition.width(), partition.height());
    if warps.iter().any(|f| f.width != w || f.height != h) {
        return Err(Error::Contract("warp field size differs from mask size".into()));
    }
    let mut image = Image::zeros(w, h, source.channels());
    let mut valid = BinaryMask::new(w, h, false);
    for y in 0..h {
        for x in 0..w {
            let region = partition.label(x, y) as usize;
            let Some(p) = warps[region].get(x, y) else {
                continue;
            };
            let s = bilinear_sample(source, p);
            for c in 0..source.channels() {
                image.set(x, y, c, s.value[c]);
            }
            valid.set(x, y, s.in_bounds);
        }
    }
    Ok(SynthesizedView { image, valid })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texture(w: usize, h: usize) -> Image {
        Image::from_fn(w, h, 3, |x, y, c| {
            0.5 + 0.4 * ((x as f64 * 0.7 + c as f64).sin() * (y as f64 * 0.3).cos())
        })
    }

    #[test]
    fn identity_reproduces_source() {
        let src = texture(16, 12);
        let bg = BinaryMask::new(16, 12, true);
        let out = synthesize_view(&src, &[WarpField::identity(16, 12)], &[bg]).unwrap();
        assert_eq!(out.image, src);
        assert_eq!(out.valid.count(), 16 * 12);
    }

    #[test]
    fn object_block_shifted() {
        let (w, h) = (24, 20);
        let src = texture(w, h);
        let obj = BinaryMask::from_fn(w, h, |x, y| (5..15).contains(&x) && (4..14).contains(&y));
        let bg = BinaryMask::from_fn(w, h, |x, y| !obj.get(x, y));
        let shifted = WarpField::from_fn(w, h, |x, y| Some(PixelCoord::new(x as f64 + 2.0, y as f64)));
        let out = synthesize_view(&src, &[WarpField::identity(w, h), shifted], &[bg, obj.clone()]).unwrap();
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    let expected = if obj.get(x, y) { src.get(x + 2, y, c) } else { src.get(x, y, c) };
                    assert!((out.image.get(x, y, c) - expected).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn out_of_frame_is_invalid() {
        let src = texture(8, 8);
        let field = WarpField::from_fn(8, 8, |x, y| {
            if x == 0 && y == 0 {
                Some(PixelCoord::new(-3.0, 0.0))
            } else if x == 1 && y == 0 {
                None
            } else {
                Some(PixelCoord::new(x as f64, y as f64))
            }
        });
        let out = synthesize_view(&src, &[field], &[BinaryMask::new(8, 8, true)]).unwrap();
        assert!(!out.valid.get(0, 0));
        assert!(!out.valid.get(1, 0));
        assert!(out.valid.get(2, 0));
    }

    #[test]
    fn broken_partition_is_rejected() {
        let src = texture(8, 8);
        let m = BinaryMask::new(8, 8, true);
        let f = WarpField::identity(8, 8);
        assert!(synthesize_view(&src, &[f.clone(), f], &[m.clone(), m]).is_err());
    }
}
