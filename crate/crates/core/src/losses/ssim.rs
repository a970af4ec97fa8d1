//! Per-pixel SSIM over 3x3 uniform windows with reflect padding, and its
//! vector-Jacobian product with respect to the second image.

use crate::error::{Error, Result};
use crate::imaging::Image;

pub const C1: f64 = 0.01 * 0.01;
pub const C2: f64 = 0.03 * 0.03;

#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * n - 2 - i
    } else {
        i
    };
    r as usize
}

/// Single-channel 3x3 box filter with reflect padding.
pub(crate) struct BoxFilter3 {
    width: usize,
    height: usize,
}

impl BoxFilter3 {
    pub(crate) fn new(width: usize, height: usize) -> Self {
        Self { width, height }
    }

    pub(crate) fn apply(&self, src: &[f64]) -> Vec<f64> {
        let (w, h) = (self.width, self.height);
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for dy in -1isize..=1 {
                    let yy = reflect(y as isize + dy, h);
                    for dx in -1isize..=1 {
                        let xx = reflect(x as isize + dx, w);
                        acc += src[yy * w + xx];
                    }
                }
                out[y * w + x] = acc / 9.0;
            }
        }
        out
    }

    /// Transpose of [`apply`](Self::apply).
    pub(crate) fn adjoint(&self, grad: &[f64]) -> Vec<f64> {
        let (w, h) = (self.width, self.height);
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let g = grad[y * w + x] / 9.0;
                if g == 0.0 {
                    continue;
                }
                for dy in -1isize..=1 {
                    let yy = reflect(y as isize + dy, h);
                    for dx in -1isize..=1 {
                        let xx = reflect(x as isize + dx, w);
                        out[yy * w + xx] += g;
                    }
                }
            }
        }
        out
    }
}

/// Local statistics of one channel pair.
struct Moments {
    mu_a: Vec<f64>,
    mu_b: Vec<f64>,
    var_a: Vec<f64>,
    var_b: Vec<f64>,
    cov: Vec<f64>,
}

fn moments(filter: &BoxFilter3, a: &[f64], b: &[f64]) -> Moments {
    let sq = |v: &[f64]| v.iter().map(|x| x * x).collect::<Vec<_>>();
    let mu_a = filter.apply(a);
    let mu_b = filter.apply(b);
    let e_aa = filter.apply(&sq(a));
    let e_bb = filter.apply(&sq(b));
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let e_ab = filter.apply(&ab);
    let n = a.len();
    let mut var_a = vec![0.0; n];
    let mut var_b = vec![0.0; n];
    let mut cov = vec![0.0; n];
    for i in 0..n {
        var_a[i] = e_aa[i] - mu_a[i] * mu_a[i];
        var_b[i] = e_bb[i] - mu_b[i] * mu_b[i];
        cov[i] = e_ab[i] - mu_a[i] * mu_b[i];
    }
    Moments {
        mu_a,
        mu_b,
        var_a,
        var_b,
        cov,
    }
}

#[inline]
fn ssim_value(mu_a: f64, mu_b: f64, var_a: f64, var_b: f64, cov: f64) -> f64 {
    let num = (2.0 * mu_a * mu_b + C1) * (2.0 * cov + C2);
    let den = (mu_a * mu_a + mu_b * mu_b + C1) * (var_a + var_b + C2);
    num / den
}

fn check_shapes(a: &Image, b: &Image) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::Contract(format!(
            "image shapes differ: {}x{}x{} vs {}x{}x{}",
            a.width(),
            a.height(),
            a.channels(),
            b.width(),
            b.height(),
            b.channels()
        )));
    }
    Ok(())
}

/// Per-pixel, per-channel SSIM.
pub fn ssim_map(a: &Image, b: &Image) -> Result<Image> {
    check_shapes(a, b)?;
    let filter = BoxFilter3::new(a.width(), a.height());
    let mut out = Image::zeros(a.width(), a.height(), a.channels());
    for c in 0..a.channels() {
        let ca = a.channel(c);
        let cb = b.channel(c);
        let m = moments(&filter, ca.data(), cb.data());
        for i in 0..a.len_pixels() {
            let v = ssim_value(m.mu_a[i], m.mu_b[i], m.var_a[i], m.var_b[i], m.cov[i]);
            out.data_mut()[i * a.channels() + c] = v;
        }
    }
    Ok(out)
}

/// Given `upstream[p, c] = dL/dSSIM(p, c)`, returns `dL/db`.
pub fn ssim_vjp(a: &Image, b: &Image, upstream: &Image) -> Result<Image> {
    check_shapes(a, b)?;
    check_shapes(a, upstream)?;
    let (w, h, ch) = (a.width(), a.height(), a.channels());
    let filter = BoxFilter3::new(w, h);
    let n = w * h;
    let mut grad = Image::zeros(w, h, ch);
    for c in 0..ch {
        let ca = a.channel(c);
        let cb = b.channel(c);
        let m = moments(&filter, ca.data(), cb.data());
        let mut g_mu = vec![0.0; n];
        let mut g_ebb = vec![0.0; n];
        let mut g_eab = vec![0.0; n];
        for i in 0..n {
            let g = upstream.data()[i * ch + c];
            if g == 0.0 {
                continue;
            }
            let (ma, mb) = (m.mu_a[i], m.mu_b[i]);
            let a1 = 2.0 * ma * mb + C1;
            let a2 = 2.0 * m.cov[i] + C2;
            let b1 = ma * ma + mb * mb + C1;
            let b2 = m.var_a[i] + m.var_b[i] + C2;
            let s = a1 * a2 / (b1 * b2);
            let ds_dmu = 2.0 * ma * a2 / (b1 * b2) - s * 2.0 * mb / b1;
            let ds_dvar = -s / b2;
            let ds_dcov = 2.0 * a1 / (b1 * b2);
            // var_b = E[b^2] - mu_b^2 and cov = E[ab] - mu_a mu_b.
            g_mu[i] = g * (ds_dmu - 2.0 * mb * ds_dvar - ma * ds_dcov);
            g_ebb[i] = g * ds_dvar;
            g_eab[i] = g * ds_dcov;
        }
        let t_mu = filter.adjoint(&g_mu);
        let t_ebb = filter.adjoint(&g_ebb);
        let t_eab = filter.adjoint(&g_eab);
        for i in 0..n {
            let bv = cb.data()[i];
            let av = ca.data()[i];
            grad.data_mut()[i * ch + c] = t_mu[i] + 2.0 * bv * t_ebb[i] + av * t_eab[i];
        }
    }
    Ok(grad)
}
