//! Edge-aware smoothness of mean-normalized depth.

use crate::error::{Error, Result};
use crate::imaging::{gradient_x, gradient_y, DepthMap, Image};

/// `exp(-mean_c |dI_c|)` along x and y.
fn edge_weights(img: &Image) -> (Vec<f64>, Vec<f64>) {
    let gx = gradient_x(img);
    let gy = gradient_y(img);
    let ch = img.channels() as f64;
    let n = img.len_pixels();
    let c = img.channels();
    let wx = (0..n)
        .map(|i| (-(0..c).map(|k| gx.data()[i * c + k].abs()).sum::<f64>() / ch).exp())
        .collect();
    let wy = (0..n)
        .map(|i| (-(0..c).map(|k| gy.data()[i * c + k].abs()).sum::<f64>() / ch).exp())
        .collect();
    (wx, wy)
}

fn check(depth: &DepthMap, img: &Image) -> Result<()> {
    if depth.width() != img.width() || depth.height() != img.height() {
        return Err(Error::Contract("depth and image sizes differ".into()));
    }
    if !(depth.mean() > 0.0) {
        return Err(Error::Domain("depth mean must be positive".into()));
    }
    Ok(())
}

pub fn smoothness_loss(depth: &DepthMap, img: &Image) -> Result<f64> {
    Ok(smoothness_with_grad(depth, img, false)?.0)
}

/// Loss and, when requested, `dL/ddepth`.
pub fn smoothness_with_grad(depth: &DepthMap, img: &Image, want_grad: bool) -> Result<(f64, Vec<f64>)> {
    check(depth, img)?;
    let (w, h) = (depth.width(), depth.height());
    let n = w * h;
    let (wx, wy) = edge_weights(img);
    let mean = depth.mean();
    let d: Vec<f64> = depth.data().iter().map(|v| v / mean).collect();
    let inv_n = 1.0 / n as f64;
    let mut sum = 0.0;
    let mut g_norm = if want_grad { vec![0.0; n] } else { Vec::new() };
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if x + 1 < w {
                let dx = d[i + 1] - d[i];
                sum += dx.abs() * wx[i];
                if want_grad {
                    let g = super::sign(dx) * wx[i] * inv_n;
                    g_norm[i + 1] += g;
                    g_norm[i] -= g;
                }
            }
            if y + 1 < h {
                let dy = d[i + w] - d[i];
                sum += dy.abs() * wy[i];
                if want_grad {
                    let g = super::sign(dy) * wy[i] * inv_n;
                    g_norm[i + w] += g;
                    g_norm[i] -= g;
                }
            }
        }
    }
    if !want_grad {
        return Ok((sum * inv_n, Vec::new()));
    }
    // d*_r = D_r / mean(D): dd*_r/dD_q = delta_rq / mean - D_r / (mean^2 n).
    let proj: f64 = g_norm.iter().zip(&d).map(|(g, v)| g * v).sum::<f64>() * inv_n;
    let grad = g_norm.iter().map(|g| (g - proj) / mean).collect();
    Ok((sum * inv_n, grad))
}
