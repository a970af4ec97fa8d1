use super::Image;
use crate::geometry::PixelCoord;

pub const MAX_CHANNELS: usize = 3;

/// Coordinates this close outside the image still count as inside, so points
/// that land on the border up to round-off do not flip validity.
pub const BORDER_TOLERANCE: f64 = 1e-9;

/// Result of a bilinear lookup: the interpolated value per channel and its
/// partial derivatives with respect to the sample coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub value: [f64; MAX_CHANNELS],
    pub d_u: [f64; MAX_CHANNELS],
    pub d_v: [f64; MAX_CHANNELS],
    /// False when the coordinate fell outside `[0, W-1] x [0, H-1]` (beyond
    /// [`BORDER_TOLERANCE`]) and was clamped to the border.
    pub in_bounds: bool,
}

#[inline]
fn clamp_axis(x: f64, n: usize) -> (usize, usize, f64, bool) {
    let max = (n - 1) as f64;
    let inside = (-BORDER_TOLERANCE..=max + BORDER_TOLERANCE).contains(&x);
    let xc = x.clamp(0.0, max);
    if n == 1 {
        return (0, 0, 0.0, inside);
    }
    let x0 = (xc.floor() as usize).min(n - 2);
    (x0, x0 + 1, xc - x0 as f64, inside)
}

/// Bilinear interpolation with clamp-to-edge borders.
///
/// Derivatives are the one-sided slopes of the interpolant; along an axis
/// whose coordinate was clamped they are zero.
pub fn bilinear_sample(img: &Image, p: PixelCoord) -> Sample {
    let mut out = Sample {
        value: [0.0; MAX_CHANNELS],
        d_u: [0.0; MAX_CHANNELS],
        d_v: [0.0; MAX_CHANNELS],
        in_bounds: false,
    };
    if !(p.u.is_finite() && p.v.is_finite()) {
        return out;
    }
    let (x0, x1, fx, in_x) = clamp_axis(p.u, img.width());
    let (y0, y1, fy, in_y) = clamp_axis(p.v, img.height());
    out.in_bounds = in_x && in_y;
    for c in 0..img.channels() {
        let a = img.get(x0, y0, c);
        let b = img.get(x1, y0, c);
        let d = img.get(x0, y1, c);
        let e = img.get(x1, y1, c);
        let top = a + fx * (b - a);
        let bottom = d + fx * (e - d);
        out.value[c] = top + fy * (bottom - top);
        if in_x {
            out.d_u[c] = (1.0 - fy) * (b - a) + fy * (e - d);
        }
        if in_y {
            out.d_v[c] = bottom - top;
        }
    }
    out
}
