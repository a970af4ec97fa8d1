//! Cuboid detections, their association across views and static/dynamic
//! classification.

use std::collections::BTreeSet;
use std::io::{Read, Write};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{warp_dynamic, warp_static, Intrinsics, PixelCoord, SE3Pose};
use crate::imaging::{BinaryMask, DepthMap};

/// Default weight of the shape term in the association score.
pub const DEFAULT_ALPHA_ASSOC: f64 = 0.5;
pub const DEFAULT_SCORE_THRESHOLD: f64 = 0.5;
pub const DEFAULT_EPS_STATIC: f64 = 1.0;

/// Axis-aligned image rectangle; `(x, y)` is the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box2d {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl Box2d {
    pub fn area(&self) -> f64 {
        self.w * self.h
    }
}

/// Box extents along the object's x (width), y (height) and z (length) axes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dims3 {
    pub w: f64,
    pub h: f64,
    pub l: f64,
}

impl Dims3 {
    pub fn as_array(&self) -> [f64; 3] {
        [self.w, self.h, self.l]
    }
}

/// A detected 3D object. `center` is the box centre in the camera frame and
/// `yaw` the rotation about the camera y axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cuboid {
    pub box2d: Box2d,
    pub dims: Dims3,
    pub center: Vector3<f64>,
    pub yaw: f64,
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

impl Cuboid {
    pub fn validate(&self) -> Result<()> {
        let ok = self.box2d.w > 0.0
            && self.box2d.h > 0.0
            && self.dims.w > 0.0
            && self.dims.h > 0.0
            && self.dims.l > 0.0
            && self.center.z > 0.0
            && self.yaw > -std::f64::consts::PI
            && self.yaw <= std::f64::consts::PI;
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("invalid cuboid {self:?}")))
        }
    }

    /// The eight box corners in the camera frame.
    pub fn corners(&self) -> [Vector3<f64>; 8] {
        let pose = pose_from_cuboid(self);
        let (hw, hh, hl) = (self.dims.w / 2.0, self.dims.h / 2.0, self.dims.l / 2.0);
        let mut out = [Vector3::zeros(); 8];
        for (i, c) in out.iter_mut().enumerate() {
            let sx = if i & 1 == 0 { -hw } else { hw };
            let sy = if i & 2 == 0 { -hh } else { hh };
            let sz = if i & 4 == 0 { -hl } else { hl };
            *c = pose.transform_point(&Vector3::new(sx, sy, sz));
        }
        out
    }
}

/// Object-to-camera pose: rotation about y by `yaw`, translation `center`.
pub fn pose_from_cuboid(c: &Cuboid) -> SE3Pose {
    SE3Pose::from_yaw(c.yaw, c.center)
}

/// Yaw of a rotation about the y axis.
pub fn yaw_from_pose(pose: &SE3Pose) -> f64 {
    let r = pose.rotation();
    r[(0, 2)].atan2(r[(0, 0)])
}

pub fn iou_2d(a: &Cuboid, b: &Cuboid) -> f64 {
    let (a, b) = (&a.box2d, &b.box2d);
    let iw = ((a.x + a.w).min(b.x + b.w) - a.x.max(b.x)).max(0.0);
    let ih = ((a.y + a.h).min(b.y + b.h) - a.y.max(b.y)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// `exp(-||c_a - c_b||_2)`.
pub fn centroid_score(a: &Cuboid, b: &Cuboid) -> f64 {
    (-(a.center - b.center).norm()).exp()
}

/// `sum over w, h, l of exp(-|dim_a - dim_b|)`.
pub fn shape_score(a: &Cuboid, b: &Cuboid) -> f64 {
    a.dims
        .as_array()
        .iter()
        .zip(b.dims.as_array())
        .map(|(x, y)| (-(x - y).abs()).exp())
        .sum()
}

pub fn association_score(a: &Cuboid, b: &Cuboid, alpha_assoc: f64) -> f64 {
    iou_2d(a, b) + centroid_score(a, b) + alpha_assoc * shape_score(a, b)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub index: usize,
    pub cuboid: Cuboid,
}

/// Detections of one frame, keyed by stable indices.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionSet {
    pub frame: usize,
    detections: Vec<Detection>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DetectionRow {
    frame: usize,
    index: usize,
    x2d: f64,
    y2d: f64,
    w2d: f64,
    h2d: f64,
    w3d: f64,
    h3d: f64,
    l3d: f64,
    xc: f64,
    yc: f64,
    zc: f64,
    yaw: f64,
}

impl DetectionSet {
    pub fn new(frame: usize, detections: Vec<Detection>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for d in &detections {
            if !seen.insert(d.index) {
                return Err(Error::Contract(format!("duplicate detection index {}", d.index)));
            }
        }
        Ok(Self { frame, detections })
    }

    pub fn empty(frame: usize) -> Self {
        Self {
            frame,
            detections: Vec::new(),
        }
    }

    pub fn detections(&self) -> &[Detection] {
        &self.detections
    }

    pub fn get(&self, index: usize) -> Option<&Cuboid> {
        self.detections.iter().find(|d| d.index == index).map(|d| &d.cuboid)
    }

    pub fn len(&self) -> usize {
        self.detections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        if self.detections.is_empty() {
            w.write_record([
                "frame", "index", "x2d", "y2d", "w2d", "h2d", "w3d", "h3d", "l3d", "xc", "yc", "zc", "yaw",
            ])?;
        }
        for d in &self.detections {
            let c = &d.cuboid;
            w.serialize(DetectionRow {
                frame: self.frame,
                index: d.index,
                x2d: c.box2d.x,
                y2d: c.box2d.y,
                w2d: c.box2d.w,
                h2d: c.box2d.h,
                w3d: c.dims.w,
                h3d: c.dims.h,
                l3d: c.dims.l,
                xc: c.center.x,
                yc: c.center.y,
                zc: c.center.z,
                yaw: c.yaw,
            })?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a CSV with the header written by [`write_csv`](Self::write_csv).
    /// All rows must share one frame id; an empty body yields an empty set.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let mut frame = None;
        let mut detections = Vec::new();
        for row in r.deserialize::<DetectionRow>() {
            let row = row?;
            if *frame.get_or_insert(row.frame) != row.frame {
                return Err(Error::Format("detection CSV mixes frames".into()));
            }
            let cuboid = Cuboid {
                box2d: Box2d {
                    x: row.x2d,
                    y: row.y2d,
                    w: row.w2d,
                    h: row.h2d,
                },
                dims: Dims3 {
                    w: row.w3d,
                    h: row.h3d,
                    l: row.l3d,
                },
                center: Vector3::new(row.xc, row.yc, row.zc),
                yaw: row.yaw,
            };
            cuboid.validate()?;
            detections.push(Detection {
                index: row.index,
                cuboid,
            });
        }
        DetectionSet::new(frame.unwrap_or(0), detections)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub target: usize,
    pub source: usize,
    pub score: f64,
}

/// One-to-one matching of target detections to source detections.
#[derive(Debug, Clone, PartialEq)]
pub struct Association {
    pub pairs: Vec<Match>,
    pub unmatched_targets: Vec<usize>,
    pub unmatched_sources: Vec<usize>,
}

/// Greedy global-best matching: repeatedly accept the highest-scoring
/// remaining pair whose score is at least `score_threshold`. Equal scores are
/// resolved by the smaller `(target, source)` index pair.
pub fn associate(
    targets: &DetectionSet,
    sources: &DetectionSet,
    alpha_assoc: f64,
    score_threshold: f64,
) -> Association {
    let mut candidates = Vec::new();
    for t in targets.detections() {
        for s in sources.detections() {
            let score = association_score(&t.cuboid, &s.cuboid, alpha_assoc);
            if score >= score_threshold {
                candidates.push(Match {
                    target: t.index,
                    source: s.index,
                    score,
                });
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.target.cmp(&b.target))
            .then(a.source.cmp(&b.source))
    });
    let mut used_t = BTreeSet::new();
    let mut used_s = BTreeSet::new();
    let mut pairs = Vec::new();
    for m in candidates {
        if used_t.contains(&m.target) || used_s.contains(&m.source) {
            continue;
        }
        used_t.insert(m.target);
        used_s.insert(m.source);
        pairs.push(m);
    }
    pairs.sort_by_key(|m| m.target);
    let unmatched = |set: &DetectionSet, used: &BTreeSet<usize>| {
        let mut v: Vec<usize> = set
            .detections()
            .iter()
            .map(|d| d.index)
            .filter(|i| !used.contains(i))
            .collect();
        v.sort_unstable();
        v
    };
    Association {
        unmatched_targets: unmatched(targets, &used_t),
        unmatched_sources: unmatched(sources, &used_s),
        pairs,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Motion {
    Static,
    Dynamic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionLabel {
    pub object: usize,
    pub label: Motion,
    /// Mean `||warp_static - warp_dynamic||` over the object mask, pixels.
    pub discrepancy: f64,
    /// Mean displacement of the object pixels under the ego-motion model.
    pub mean_flow_static: f64,
    /// Mean displacement of the object pixels under the object-pose model.
    pub mean_flow_dynamic: f64,
}

/// Labels an associated object static when ego-motion explains its
/// reprojection as well as the object pose change does: the mean pixel
/// distance between the two warps over the object mask must be below
/// `eps_static`.
#[allow(clippy::too_many_arguments)]
pub fn classify_motion(
    object: usize,
    l_s: &SE3Pose,
    l_t: &SE3Pose,
    t_ts: &SE3Pose,
    depth: &DepthMap,
    k: &Intrinsics,
    mask: &BinaryMask,
    eps_static: f64,
) -> Result<MotionLabel> {
    if mask.width() != depth.width() || mask.height() != depth.height() {
        return Err(Error::Contract("mask and depth sizes differ".into()));
    }
    let (mut sum, mut flow_s, mut flow_d, mut n) = (0.0, 0.0, 0.0, 0usize);
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if !mask.get(x, y) {
                continue;
            }
            let p = PixelCoord::new(x as f64, y as f64);
            let d = depth.get(x, y);
            let (Ok(a), Ok(b)) = (warp_static(p, d, k, t_ts), warp_dynamic(p, d, k, l_s, l_t)) else {
                continue;
            };
            sum += a.distance(&b);
            flow_s += a.distance(&p);
            flow_d += b.distance(&p);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::NoValidPixels(format!("object {object} has an empty mask")));
    }
    let nf = n as f64;
    let discrepancy = sum / nf;
    Ok(MotionLabel {
        object,
        label: if discrepancy < eps_static {
            Motion::Static
        } else {
            Motion::Dynamic
        },
        discrepancy,
        mean_flow_static: flow_s / nf,
        mean_flow_dynamic: flow_d / nf,
    })
}
