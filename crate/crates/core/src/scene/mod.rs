//! Synthetic world: textured planes and moving boxes, ray cast into images
//! with exact depth, region masks and cuboid detections.

mod texture;
pub mod presets;

pub use texture::{procedural_texture, TEXTURE_MAX, TEXTURE_MIN};

use std::collections::BTreeSet;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{project, Intrinsics, PixelCoord, Point3, SE3Pose};
use crate::imaging::{DepthMap, Image, Partition};
use crate::objects::{pose_from_cuboid, wrap_angle, yaw_from_pose, Box2d, Cuboid, Detection, DetectionSet, Dims3};

pub const SCHEMA_VERSION: u32 = 1;

/// Derives an independent seed for a named random stream.
pub fn derive_seed(root: u64, stream: &str, index: u64) -> u64 {
    let mut h = texture::splitmix(root);
    for b in stream.bytes() {
        h = texture::splitmix(h ^ u64::from(b));
    }
    texture::splitmix(h ^ index)
}

fn default_texture_scale() -> [f64; 2] {
    [2.0, 2.0]
}

/// Infinite plane `normal . x = offset` in world coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlaneConfig {
    pub normal: [f64; 3],
    pub offset: f64,
    pub texture_seed: u64,
    /// Lattice cells per metre along the two in-plane axes.
    #[serde(default = "default_texture_scale")]
    pub texture_scale: [f64; 2],
}

/// Rigid step applied in the object's own frame once per time step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionConfig {
    #[serde(default)]
    pub translation: [f64; 3],
    #[serde(default)]
    pub yaw: f64,
}

impl MotionConfig {
    pub fn pose(&self) -> SE3Pose {
        SE3Pose::from_yaw(self.yaw, Vector3::from(self.translation))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectConfig {
    /// Width, height and length along the object x, y and z axes.
    pub dims: [f64; 3],
    /// Box centre in the world frame at time 0.
    pub position: [f64; 3],
    #[serde(default)]
    pub yaw: f64,
    #[serde(default)]
    pub motion: MotionConfig,
    pub texture_seed: u64,
    #[serde(default = "default_texture_scale")]
    pub texture_scale: [f64; 2],
}

/// Camera-to-world pose. Rotation is restricted to the y axis so that object
/// poses seen from the camera stay pure yaw rotations.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraConfig {
    #[serde(default)]
    pub translation: [f64; 3],
    #[serde(default)]
    pub yaw: f64,
}

impl CameraConfig {
    pub fn pose(&self) -> SE3Pose {
        SE3Pose::from_yaw(self.yaw, Vector3::from(self.translation))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub schema_version: u32,
    pub width: usize,
    pub height: usize,
    pub intrinsics: Intrinsics,
    pub seed: u64,
    pub planes: Vec<PlaneConfig>,
    #[serde(default)]
    pub objects: Vec<ObjectConfig>,
    pub camera_trajectory: Vec<CameraConfig>,
}

/// Ground-truth render of one time step.
#[derive(Debug, Clone)]
pub struct RenderedFrame {
    pub time: usize,
    pub image: Image,
    pub depth: DepthMap,
    /// Label 0 is the background; object `j` owns label `j + 1`.
    pub partition: Partition,
    /// Cuboids of visible objects in this camera's frame, indexed by object.
    pub detections: DetectionSet,
    /// Camera-to-world pose.
    pub camera: SE3Pose,
}

fn finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

impl SceneConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SceneConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.width == 0 || self.height == 0 {
            return bad("image size must be positive".into());
        }
        self.intrinsics
            .validate_for(self.width, self.height)
            .map_err(|e| Error::Config(e.to_string()))?;
        if self.planes.is_empty() {
            return bad("at least one background plane is required".into());
        }
        if self.camera_trajectory.is_empty() {
            return bad("camera trajectory is empty".into());
        }
        for c in &self.camera_trajectory {
            if !finite(&c.translation) || !c.yaw.is_finite() {
                return bad("camera pose is not finite".into());
            }
        }
        for (i, p) in self.planes.iter().enumerate() {
            let n = Vector3::from(p.normal);
            if !finite(&p.normal) || !p.offset.is_finite() || n.norm() < 1e-12 {
                return bad(format!("plane {i} has an invalid normal"));
            }
            if !p.texture_scale.iter().all(|s| s.is_finite() && *s > 0.0) {
                return bad(format!("plane {i} has an invalid texture scale"));
            }
            for (k, c) in self.camera_trajectory.iter().enumerate() {
                let dist = (n.dot(&Vector3::from(c.translation)) - p.offset) / n.norm();
                if dist.abs() < 1e-6 {
                    return bad(format!("plane {i} passes through camera {k}"));
                }
            }
        }
        let cam0 = self.camera_pose(0)?;
        for (j, o) in self.objects.iter().enumerate() {
            if !o.dims.iter().all(|d| d.is_finite() && *d > 0.0) {
                return bad(format!("object {j} has invalid dims"));
            }
            if !finite(&o.position) || !o.yaw.is_finite() || !finite(&o.motion.translation) || !o.motion.yaw.is_finite() {
                return bad(format!("object {j} pose is not finite"));
            }
            if !o.texture_scale.iter().all(|s| s.is_finite() && *s > 0.0) {
                return bad(format!("object {j} has an invalid texture scale"));
            }
            let z = cam0.invert().transform_point(&Vector3::from(o.position)).z;
            if !(z > 0.5 && z < 79.0) {
                return bad(format!("object {j} initial depth {z} outside (0.5, 79)"));
            }
        }
        Ok(())
    }

    pub fn num_frames(&self) -> usize {
        self.camera_trajectory.len()
    }

    /// Camera-to-world pose at `time`.
    pub fn camera_pose(&self, time: usize) -> Result<SE3Pose> {
        self.camera_trajectory
            .get(time)
            .map(CameraConfig::pose)
            .ok_or_else(|| Error::Domain(format!("time {time} outside trajectory of {}", self.num_frames())))
    }

    /// `T_{t->s}`: maps target-camera coordinates to source-camera ones.
    pub fn relative_pose(&self, target: usize, source: usize) -> Result<SE3Pose> {
        Ok(self.camera_pose(source)?.invert().compose(&self.camera_pose(target)?))
    }

    /// Object-to-world pose of object `j` after `time` motion steps.
    pub fn object_world_pose(&self, j: usize, time: usize) -> Result<SE3Pose> {
        let o = self
            .objects
            .get(j)
            .ok_or_else(|| Error::Domain(format!("no object {j}")))?;
        let mut w = SE3Pose::from_yaw(o.yaw, Vector3::from(o.position));
        let step = o.motion.pose();
        for _ in 0..time {
            w = w.compose(&step);
        }
        Ok(w)
    }

    /// Object-to-camera pose `L` of object `j` at `time`.
    pub fn object_camera_pose(&self, j: usize, time: usize) -> Result<SE3Pose> {
        Ok(self.camera_pose(time)?.invert().compose(&self.object_world_pose(j, time)?))
    }
}

struct PlaneGeom {
    normal: Vector3<f64>,
    offset: f64,
    e1: Vector3<f64>,
    e2: Vector3<f64>,
    scale: [f64; 2],
    seed: u64,
}

impl PlaneGeom {
    fn new(p: &PlaneConfig, root: u64) -> Self {
        let n = Vector3::from(p.normal);
        let len = n.norm();
        let normal = n / len;
        let axis = (0..3)
            .min_by(|&a, &b| normal[a].abs().total_cmp(&normal[b].abs()))
            .expect("three axes");
        let a = Vector3::ith(axis, 1.0);
        let e1 = (a - normal * a.dot(&normal)).normalize();
        let e2 = normal.cross(&e1);
        Self {
            normal,
            offset: p.offset / len,
            e1,
            e2,
            scale: p.texture_scale,
            seed: derive_seed(root, "texture", p.texture_seed),
        }
    }
}

/// Ray parameter where `o + s d` meets an axis-aligned box of half extents
/// `half` centred at the origin, with the entry axis. The origin must lie
/// outside the box.
pub fn ray_box(o: &Vector3<f64>, d: &Vector3<f64>, half: &Vector3<f64>) -> Option<(f64, usize)> {
    let (mut t0, mut t1, mut axis) = (f64::NEG_INFINITY, f64::INFINITY, 0);
    for a in 0..3 {
        if d[a].abs() < 1e-300 {
            if o[a].abs() > half[a] {
                return None;
            }
            continue;
        }
        let (mut lo, mut hi) = ((-half[a] - o[a]) / d[a], (half[a] - o[a]) / d[a]);
        if lo > hi {
            std::mem::swap(&mut lo, &mut hi);
        }
        if lo > t0 {
            t0 = lo;
            axis = a;
        }
        t1 = t1.min(hi);
    }
    (t0 <= t1 && t0 > 0.0).then_some((t0, axis))
}

/// Ray parameter where `o + s d` meets the plane, if in front.
fn ray_plane(o: &Vector3<f64>, d: &Vector3<f64>, p: &PlaneGeom) -> Option<f64> {
    let denom = p.normal.dot(d);
    if denom.abs() < 1e-15 {
        return None;
    }
    let s = (p.offset - p.normal.dot(o)) / denom;
    (s > 0.0).then_some(s)
}

struct Hit {
    depth: f64,
    color: [f64; 3],
    label: u32,
}

struct ObjectGeom {
    world_to_obj: SE3Pose,
    half: Vector3<f64>,
    scale: [f64; 2],
    seed: u64,
}

fn box_texture_coords(q: &Vector3<f64>, axis: usize, scale: [f64; 2]) -> [f64; 2] {
    let (b, c) = ((axis + 1) % 3, (axis + 2) % 3);
    let side = if q[axis] >= 0.0 { 1.0 } else { 0.0 };
    // Offset each face so opposite faces do not repeat the same pattern.
    let shift = 37.0 * (2 * axis) as f64 + 37.0 * side;
    [q[b] * scale[0] + shift, q[c] * scale[1]]
}

fn cast(
    o: &Vector3<f64>,
    d: &Vector3<f64>,
    planes: &[PlaneGeom],
    objects: &[ObjectGeom],
) -> Option<Hit> {
    let mut best: Option<Hit> = None;
    for p in planes {
        if let Some(s) = ray_plane(o, d, p) {
            if best.as_ref().is_none_or(|b| s < b.depth) {
                let x = o + d * s;
                let uv = [x.dot(&p.e1) * p.scale[0], x.dot(&p.e2) * p.scale[1]];
                best = Some(Hit {
                    depth: s,
                    color: procedural_texture(p.seed, uv),
                    label: 0,
                });
            }
        }
    }
    for (j, ob) in objects.iter().enumerate() {
        let oo = ob.world_to_obj.transform_point(o);
        let dd = ob.world_to_obj.rotation() * d;
        if let Some((s, axis)) = ray_box(&oo, &dd, &ob.half) {
            if best.as_ref().is_none_or(|b| s < b.depth) {
                let q = oo + dd * s;
                best = Some(Hit {
                    depth: s,
                    color: procedural_texture(ob.seed, box_texture_coords(&q, axis, ob.scale)),
                    label: j as u32 + 1,
                });
            }
        }
    }
    best
}

/// Tight image bounds of the projected box corners, clamped to the frame.
/// Falls back to the region's pixel bounds when a corner is behind the camera.
fn box2d_for(c: &Cuboid, k: &Intrinsics, w: usize, h: usize, partition: &Partition, label: u32) -> Option<Box2d> {
    let (fx0, fy0, fx1, fy1) = (-0.5, -0.5, w as f64 - 0.5, h as f64 - 0.5);
    let projected: Option<Vec<PixelCoord>> = c
        .corners()
        .iter()
        .map(|q| project(&Point3::from(*q), k).ok())
        .collect();
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    match projected {
        Some(px) => {
            for p in px {
                x0 = x0.min(p.u);
                y0 = y0.min(p.v);
                x1 = x1.max(p.u);
                y1 = y1.max(p.v);
            }
        }
        None => {
            for y in 0..h {
                for x in 0..w {
                    if partition.label(x, y) == label {
                        x0 = x0.min(x as f64 - 0.5);
                        y0 = y0.min(y as f64 - 0.5);
                        x1 = x1.max(x as f64 + 0.5);
                        y1 = y1.max(y as f64 + 0.5);
                    }
                }
            }
        }
    }
    let (x0, y0, x1, y1) = (x0.max(fx0), y0.max(fy0), x1.min(fx1), y1.min(fy1));
    (x1 > x0 && y1 > y0).then_some(Box2d {
        x: x0,
        y: y0,
        w: x1 - x0,
        h: y1 - y0,
    })
}

/// Ray casts every pixel centre; the nearest surface owns the pixel.
pub fn render_frame(scene: &SceneConfig, time: usize) -> Result<RenderedFrame> {
    scene.validate()?;
    let (w, h) = (scene.width, scene.height);
    let k = &scene.intrinsics;
    let camera = scene.camera_pose(time)?;
    let planes: Vec<PlaneGeom> = scene.planes.iter().map(|p| PlaneGeom::new(p, scene.seed)).collect();
    let mut objects = Vec::with_capacity(scene.objects.len());
    for (j, o) in scene.objects.iter().enumerate() {
        objects.push(ObjectGeom {
            world_to_obj: scene.object_world_pose(j, time)?.invert(),
            half: Vector3::from(o.dims) / 2.0,
            scale: o.texture_scale,
            seed: derive_seed(scene.seed, "texture", o.texture_seed),
        });
    }
    let origin = *camera.translation();
    let mut image = Image::zeros(w, h, 3);
    let mut depth = DepthMap::filled(w, h, 1.0);
    let mut labels = vec![0u32; w * h];
    for y in 0..h {
        for x in 0..w {
            let dir = camera.rotation() * k.ray(PixelCoord::new(x as f64, y as f64));
            let hit = cast(&origin, &dir, &planes, &objects)
                .ok_or_else(|| Error::Config(format!("ray through pixel ({x}, {y}) hits nothing at time {time}")))?;
            if !(DepthMap::MIN_DEPTH..=DepthMap::MAX_DEPTH).contains(&hit.depth) {
                return Err(Error::Config(format!(
                    "depth {} at pixel ({x}, {y}) outside [0.1, 80]",
                    hit.depth
                )));
            }
            depth.set(x, y, hit.depth);
            for (c, v) in hit.color.iter().enumerate() {
                image.set(x, y, c, *v);
            }
            labels[y * w + x] = hit.label;
        }
    }
    let partition = Partition::from_labels(w, h, scene.objects.len() + 1, labels)?;
    let visible: BTreeSet<u32> = partition.labels().iter().copied().filter(|&l| l > 0).collect();
    let mut detections = Vec::new();
    for (j, o) in scene.objects.iter().enumerate() {
        let label = j as u32 + 1;
        if !visible.contains(&label) {
            continue;
        }
        let l = scene.object_camera_pose(j, time)?;
        let mut cuboid = Cuboid {
            box2d: Box2d {
                x: 0.0,
                y: 0.0,
                w: 1.0,
                h: 1.0,
            },
            dims: Dims3 {
                w: o.dims[0],
                h: o.dims[1],
                l: o.dims[2],
            },
            center: *l.translation(),
            yaw: wrap_angle(yaw_from_pose(&l)),
        };
        if cuboid.center.z <= 0.0 {
            continue;
        }
        if let Some(b) = box2d_for(&cuboid, k, w, h, &partition, label) {
            cuboid.box2d = b;
            detections.push(Detection { index: j, cuboid });
        }
    }
    Ok(RenderedFrame {
        time,
        image,
        depth,
        partition,
        detections: DetectionSet::new(time, detections)?,
        camera,
    })
}

/// Adds seeded Gaussian noise to centres, dimensions and yaw. Dimensions and
/// centre depth are clamped to stay positive and yaw is re-wrapped; 2D boxes
/// are left untouched.
pub fn perturb_detections(
    set: &DetectionSet,
    center_sigma: f64,
    dims_sigma: f64,
    yaw_sigma: f64,
    seed: u64,
) -> Result<DetectionSet> {
    for s in [center_sigma, dims_sigma, yaw_sigma] {
        if !(s >= 0.0 && s.is_finite()) {
            return Err(Error::Domain(format!("noise sigma {s} must be finite and non-negative")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = |s: f64| Normal::new(0.0, s).expect("sigma checked");
    let (nc, nd, ny) = (normal(center_sigma), normal(dims_sigma), normal(yaw_sigma));
    let mut out = Vec::with_capacity(set.len());
    for d in set.detections() {
        let mut c = d.cuboid;
        for i in 0..3 {
            c.center[i] += nc.sample(&mut rng);
        }
        c.center.z = c.center.z.max(1e-3);
        c.dims.w = (c.dims.w + nd.sample(&mut rng)).max(1e-3);
        c.dims.h = (c.dims.h + nd.sample(&mut rng)).max(1e-3);
        c.dims.l = (c.dims.l + nd.sample(&mut rng)).max(1e-3);
        c.yaw = wrap_angle(c.yaw + ny.sample(&mut rng));
        out.push(Detection {
            index: d.index,
            cuboid: c,
        });
    }
    DetectionSet::new(set.frame, out)
}

/// Object-to-camera poses of the detections, keyed by index.
pub fn detection_poses(set: &DetectionSet) -> Vec<(usize, SE3Pose)> {
    set.detections()
        .iter()
        .map(|d| (d.index, pose_from_cuboid(&d.cuboid)))
        .collect()
}
