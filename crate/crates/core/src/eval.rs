//! Depth metrics, the evaluation crop and the scale-ratio diagnostic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{gradient_x, gradient_y, BinaryMask, DepthMap, Image};

/// Predictions are clamped to at least this depth before evaluation.
pub const MIN_EVAL_DEPTH: f64 = 1e-3;
pub const DEFAULT_CAP: f64 = 80.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthMetrics {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
}

impl DepthMetrics {
    pub const CSV_HEADER: &'static str = "abs_rel,sq_rel,rmse,rmse_log,a1,a2,a3";

    pub fn to_array(&self) -> [f64; 7] {
        [
            self.abs_rel,
            self.sq_rel,
            self.rmse,
            self.rmse_log,
            self.a1,
            self.a2,
            self.a3,
        ]
    }

    pub fn csv_row(&self) -> String {
        self.to_array()
            .iter()
            .map(|v| format!("{v:.6}"))
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// Normalised crop bounds, open intervals per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CropSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl CropSpec {
    /// The standard evaluation crop for driving-scene depth maps.
    pub const EIGEN: CropSpec = CropSpec {
        x_min: 0.035_947_71,
        x_max: 0.964_052_29,
        y_min: 0.408_108_11,
        y_max: 0.991_891_89,
    };

    pub const FULL: CropSpec = CropSpec {
        x_min: 0.0,
        x_max: 1.0,
        y_min: 0.0,
        y_max: 1.0,
    };

    pub fn validate(&self) -> Result<()> {
        let ok = |lo: f64, hi: f64| (0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi) && lo < hi;
        if ok(self.x_min, self.x_max) && ok(self.y_min, self.y_max) {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid crop {self:?}")))
        }
    }
}

impl Default for CropSpec {
    fn default() -> Self {
        Self::EIGEN
    }
}

/// Half-open pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Region {
    pub x0: usize,
    pub x1: usize,
    pub y0: usize,
    pub y1: usize,
}

impl Region {
    pub fn full(w: usize, h: usize) -> Self {
        Self {
            x0: 0,
            x1: w,
            y0: 0,
            y1: h,
        }
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x0..self.x1).contains(&x) && (self.y0..self.y1).contains(&y)
    }

    pub fn area(&self) -> usize {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.y0..self.y1).flat_map(move |y| (self.x0..self.x1).map(move |x| (x, y)))
    }

    fn check_fits(&self, depth: &DepthMap) -> Result<()> {
        if self.x0 >= self.x1 || self.y0 >= self.y1 || self.x1 > depth.width() || self.y1 > depth.height() {
            return Err(Error::Contract(format!("region {self:?} does not fit the map")));
        }
        Ok(())
    }
}

/// Pixels whose normalised coordinates fall inside `spec`, using
/// `floor(min * dim)` and `ceil(max * dim)` as the bounds.
pub fn crop_region(w: usize, h: usize, spec: &CropSpec) -> Result<Region> {
    spec.validate()?;
    let bound = |lo: f64, hi: f64, dim: usize| {
        let a = (lo * dim as f64).floor() as usize;
        let b = ((hi * dim as f64).ceil() as usize).min(dim);
        (a, b)
    };
    let (x0, x1) = bound(spec.x_min, spec.x_max, w);
    let (y0, y1) = bound(spec.y_min, spec.y_max, h);
    let r = Region { x0, x1, y0, y1 };
    // A proper crop that rounds out to the whole frame means the image is too
    // small to crop at all.
    let swallowed = *spec != CropSpec::FULL && r == Region::full(w, h);
    if x0 >= x1 || y0 >= y1 || swallowed {
        return Err(Error::Domain(format!("crop of {w}x{h} image is empty")));
    }
    Ok(r)
}

fn valid_gt(g: f64) -> bool {
    g.is_finite() && g > 0.0
}

/// Median with the lower-middle convention for even counts.
pub fn lower_median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let k = (values.len() - 1) / 2;
    let (_, m, _) = values.select_nth_unstable_by(k, f64::total_cmp);
    Some(*m)
}

fn valid_pairs(
    pred: &DepthMap,
    gt: &DepthMap,
    region: &Region,
    mask: Option<&BinaryMask>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if pred.width() != gt.width() || pred.height() != gt.height() {
        return Err(Error::Contract("prediction and ground truth sizes differ".into()));
    }
    region.check_fits(gt)?;
    let mut p = Vec::new();
    let mut g = Vec::new();
    for (x, y) in region.pixels() {
        if mask.is_some_and(|m| !m.get(x, y)) {
            continue;
        }
        let gv = gt.get(x, y);
        let pv = pred.get(x, y);
        if valid_gt(gv) && pv.is_finite() {
            p.push(pv);
            g.push(gv);
        }
    }
    if g.is_empty() {
        return Err(Error::NoValidPixels("no valid ground-truth pixels in region".into()));
    }
    Ok((p, g))
}

pub fn compute_metrics(
    pred: &DepthMap,
    gt: &DepthMap,
    cap: f64,
    region: &Region,
    median_scale: bool,
) -> Result<DepthMetrics> {
    check_cap(cap)?;
    let (p, g) = valid_pairs(pred, gt, region, None)?;
    metrics_from_pairs(p, g, cap, median_scale)
}

/// Like [`compute_metrics`] but restricted to the set pixels of `mask`.
pub fn compute_metrics_masked(
    pred: &DepthMap,
    gt: &DepthMap,
    cap: f64,
    mask: &BinaryMask,
    median_scale: bool,
) -> Result<DepthMetrics> {
    check_cap(cap)?;
    if mask.width() != gt.width() || mask.height() != gt.height() {
        return Err(Error::Contract("mask and ground truth sizes differ".into()));
    }
    let (p, g) = valid_pairs(pred, gt, &Region::full(gt.width(), gt.height()), Some(mask))?;
    metrics_from_pairs(p, g, cap, median_scale)
}

fn check_cap(cap: f64) -> Result<()> {
    if !(cap > MIN_EVAL_DEPTH) {
        return Err(Error::Domain(format!("cap {cap} must exceed {MIN_EVAL_DEPTH}")));
    }
    Ok(())
}

fn metrics_from_pairs(mut p: Vec<f64>, g: Vec<f64>, cap: f64, median_scale: bool) -> Result<DepthMetrics> {
    if median_scale {
        let mg = lower_median(&mut g.clone()).expect("non-empty");
        let mp = lower_median(&mut p.clone()).expect("non-empty");
        if !(mp > 0.0) {
            return Err(Error::Domain("prediction median is not positive".into()));
        }
        let ratio = mg / mp;
        p.iter_mut().for_each(|v| *v *= ratio);
    }
    let n = g.len() as f64;
    let mut m = DepthMetrics {
        abs_rel: 0.0,
        sq_rel: 0.0,
        rmse: 0.0,
        rmse_log: 0.0,
        a1: 0.0,
        a2: 0.0,
        a3: 0.0,
    };
    for (&pv, &gv) in p.iter().zip(&g) {
        let pv = pv.clamp(MIN_EVAL_DEPTH, cap);
        let d = pv - gv;
        m.abs_rel += d.abs() / gv;
        m.sq_rel += d * d / gv;
        m.rmse += d * d;
        let dl = pv.ln() - gv.ln();
        m.rmse_log += dl * dl;
        let delta = (pv / gv).max(gv / pv);
        m.a1 += f64::from(u8::from(delta < 1.25));
        m.a2 += f64::from(u8::from(delta < 1.25 * 1.25));
        m.a3 += f64::from(u8::from(delta < 1.25 * 1.25 * 1.25));
    }
    m.abs_rel /= n;
    m.sq_rel /= n;
    m.rmse = (m.rmse / n).sqrt();
    m.rmse_log = (m.rmse_log / n).sqrt();
    m.a1 /= n;
    m.a2 /= n;
    m.a3 /= n;
    Ok(m)
}

/// Per-pixel magnitude of the channel-averaged forward-difference gradient.
pub fn gradient_magnitude(img: &Image) -> Vec<f64> {
    let (gx, gy) = (gradient_x(img), gradient_y(img));
    let ch = img.channels() as f64;
    (0..img.height())
        .flat_map(|y| (0..img.width()).map(move |x| (x, y)))
        .map(|(x, y)| {
            let ax = gx.pixel(x, y).iter().sum::<f64>() / ch;
            let ay = gy.pixel(x, y).iter().sum::<f64>() / ch;
            ax.hypot(ay)
        })
        .collect()
}

/// Pixels of `region` whose gradient magnitude is strictly above the
/// `q`-quantile of the magnitudes inside the region.
pub fn high_gradient_mask(img: &Image, region: &Region, q: f64) -> Result<BinaryMask> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Domain(format!("quantile {q} outside [0, 1]")));
    }
    if region.x1 > img.width() || region.y1 > img.height() || region.area() == 0 {
        return Err(Error::Contract("region does not fit the image".into()));
    }
    let g = gradient_magnitude(img);
    let w = img.width();
    let mut vals: Vec<f64> = region.pixels().map(|(x, y)| g[y * w + x]).collect();
    vals.sort_by(f64::total_cmp);
    let thr = vals[((vals.len() - 1) as f64 * q).floor() as usize];
    Ok(BinaryMask::from_fn(w, img.height(), |x, y| region.contains(x, y) && g[y * w + x] > thr))
}

/// `median(gt) / median(pred)` over the region.
pub fn scale_ratio(pred: &DepthMap, gt: &DepthMap, region: &Region) -> Result<f64> {
    let (mut p, mut g) = valid_pairs(pred, gt, region, None)?;
    let mp = lower_median(&mut p).expect("non-empty");
    let mg = lower_median(&mut g).expect("non-empty");
    if !(mp > 0.0) {
        return Err(Error::Domain("prediction median is not positive".into()));
    }
    Ok(mg / mp)
}
