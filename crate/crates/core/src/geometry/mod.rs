//! Rigid transforms, the pinhole camera and pixel warping.
//!
//! Pixel convention: integer coordinates address pixel centres, so pixel
//! `(i, j)` covers `[i - 0.5, i + 0.5) x [j - 0.5, j + 0.5)`.

pub mod so3;

use nalgebra::{Matrix2x3, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point3 = nalgebra::Point3<f64>;

const ORTHO_TOL: f64 = 1e-9;
const DRIFT_TOL: f64 = 1e-12;

/// Rigid transform `x -> R x + t` (metres).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SE3Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

fn orthonormal_error(r: &Matrix3<f64>) -> f64 {
    (r.transpose() * r - Matrix3::identity()).norm()
}

fn orthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = r.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut out = u * v_t;
    if out.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        out = u * v_t;
    }
    out
}

impl SE3Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a pose, rejecting rotations that are not proper orthonormal.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !rotation.iter().chain(translation.iter()).all(|x| x.is_finite()) {
            return Err(Error::Domain("pose has non-finite entries".into()));
        }
        if orthonormal_error(&rotation) > ORTHO_TOL || rotation.determinant() <= 0.0 {
            return Err(Error::Domain("rotation is not orthonormal with det +1".into()));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    pub fn from_axis_angle(omega: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: so3::exp(&omega),
            translation,
        }
    }

    /// Rotation about the y axis by `yaw`, followed by `translation`.
    pub fn from_yaw(yaw: f64, translation: Vector3<f64>) -> Self {
        let (s, c) = yaw.sin_cos();
        let rotation = Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c);
        Self {
            rotation,
            translation,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn axis_angle(&self) -> Vector3<f64> {
        so3::log(&self.rotation)
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `self * other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &SE3Pose) -> SE3Pose {
        let mut rotation = self.rotation * other.rotation;
        if orthonormal_error(&rotation) > DRIFT_TOL {
            rotation = orthonormalize(&rotation);
        }
        SE3Pose {
            rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn invert(&self) -> SE3Pose {
        let rt = self.rotation.transpose();
        SE3Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn scaled_translation(&self, c: f64) -> SE3Pose {
        SE3Pose {
            rotation: self.rotation,
            translation: self.translation * c,
        }
    }

    /// Largest absolute entry difference of the 3x4 matrices.
    pub fn max_abs_diff(&self, other: &SE3Pose) -> f64 {
        let dr = (self.rotation - other.rotation).abs().max();
        let dt = (self.translation - other.translation).abs().max();
        dr.max(dt)
    }

    pub fn is_valid(&self) -> bool {
        orthonormal_error(&self.rotation) < ORTHO_TOL && self.rotation.determinant() > 0.0
    }

    /// Row-major 3x4 `[R | t]`.
    pub fn to_row_major_3x4(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        for r in 0..3 {
            for c in 0..3 {
                out[r * 4 + c] = self.rotation[(r, c)];
            }
            out[r * 4 + 3] = self.translation[r];
        }
        out
    }

    pub fn from_row_major_3x4(v: &[f64; 12]) -> Result<SE3Pose> {
        let rotation = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
        SE3Pose::new(rotation, Vector3::new(v[3], v[7], v[11]))
    }
}

impl std::ops::Mul for SE3Pose {
    type Output = SE3Pose;
    fn mul(self, rhs: SE3Pose) -> SE3Pose {
        self.compose(&rhs)
    }
}

/// Applies `b` then `a`.
pub fn compose(a: &SE3Pose, b: &SE3Pose) -> SE3Pose {
    a.compose(b)
}

pub fn invert(t: &SE3Pose) -> SE3Pose {
    t.invert()
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let k = Self { fx, fy, cx, cy };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.cx.is_finite() || !self.cy.is_finite() {
            return Err(Error::Domain(format!("invalid intrinsics {self:?}")));
        }
        Ok(())
    }

    /// Checks that the principal point lies inside a `width x height` frame.
    pub fn validate_for(&self, width: usize, height: usize) -> Result<()> {
        self.validate()?;
        let inside = |c: f64, n: usize| c >= -0.5 && c <= n as f64 - 0.5;
        if !inside(self.cx, width) || !inside(self.cy, height) {
            return Err(Error::Domain(format!(
                "principal point ({}, {}) outside {width}x{height} frame",
                self.cx, self.cy
            )));
        }
        Ok(())
    }

    /// Intrinsics of pyramid level `level`, where each level averages 2x2
    /// blocks of the previous one.
    pub fn at_level(&self, level: usize) -> Intrinsics {
        let s = (1u64 << level) as f64;
        Intrinsics {
            fx: self.fx / s,
            fy: self.fy / s,
            cx: (self.cx + 0.5) / s - 0.5,
            cy: (self.cy + 0.5) / s - 0.5,
        }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Ray `K^-1 [u, v, 1]^T`, with unit z component.
    pub fn ray(&self, p: PixelCoord) -> Vector3<f64> {
        Vector3::new((p.u - self.cx) / self.fx, (p.v - self.cy) / self.fy, 1.0)
    }
}

/// Continuous pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelCoord {
    pub u: f64,
    pub v: f64,
}

impl PixelCoord {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn distance(&self, other: &PixelCoord) -> f64 {
        (self.u - other.u).hypot(self.v - other.v)
    }
}

pub fn backproject(p: PixelCoord, depth: f64, k: &Intrinsics) -> Result<Point3> {
    if !(depth > 0.0) || !depth.is_finite() {
        return Err(Error::Domain(format!("depth must be positive, got {depth}")));
    }
    Ok(Point3::from(k.ray(p) * depth))
}

pub fn project(pt: &Point3, k: &Intrinsics) -> Result<PixelCoord> {
    project_vec(&pt.coords, k)
}

fn project_vec(q: &Vector3<f64>, k: &Intrinsics) -> Result<PixelCoord> {
    if !(q.z > 0.0) {
        return Err(Error::BehindCamera { z: q.z });
    }
    Ok(PixelCoord::new(
        k.fx * q.x / q.z + k.cx,
        k.fy * q.y / q.z + k.cy,
    ))
}

/// Reprojects `p` at `depth` through the rigid motion `pose`.
pub fn warp_with_pose(p: PixelCoord, depth: f64, k: &Intrinsics, pose: &SE3Pose) -> Result<PixelCoord> {
    let pt = backproject(p, depth, k)?;
    project_vec(&pose.transform_point(&pt.coords), k)
}

/// Static-world warp: `K T D(p) K^-1 p`.
pub fn warp_static(p: PixelCoord, depth: f64, k: &Intrinsics, t: &SE3Pose) -> Result<PixelCoord> {
    warp_with_pose(p, depth, k, t)
}

/// Object warp: `K L_s L_t^-1 D(p) K^-1 p`; independent of ego-motion.
pub fn warp_dynamic(
    p: PixelCoord,
    depth: f64,
    k: &Intrinsics,
    l_s: &SE3Pose,
    l_t: &SE3Pose,
) -> Result<PixelCoord> {
    warp_with_pose(p, depth, k, &object_pose_change(l_s, l_t))
}

/// `L_s L_t^-1`, the transform carrying target-frame object points into the
/// source camera frame.
pub fn object_pose_change(l_s: &SE3Pose, l_t: &SE3Pose) -> SE3Pose {
    l_s.compose(&l_t.invert())
}

/// Object motion `V = L_s^-1 T L_t`, so that `L_t = T^-1 L_s V`.
pub fn object_motion(t_ts: &SE3Pose, l_s: &SE3Pose, l_t: &SE3Pose) -> SE3Pose {
    l_s.invert().compose(t_ts).compose(l_t)
}

/// A warped pixel together with its first derivatives.
#[derive(Debug, Clone, Copy)]
pub struct WarpDerivatives {
    pub pixel: PixelCoord,
    /// `d(u, v) / d depth`.
    pub d_depth: Vector2<f64>,
    /// `d(u, v) / dQ`, where `Q = R P + t` is the transformed point.
    pub d_point: Matrix2x3<f64>,
    /// Back-projected point `P` in the target camera frame.
    pub point: Vector3<f64>,
}

pub fn warp_with_derivatives(
    p: PixelCoord,
    depth: f64,
    k: &Intrinsics,
    pose: &SE3Pose,
) -> Result<WarpDerivatives> {
    let point = backproject(p, depth, k)?.coords;
    let q = pose.transform_point(&point);
    let pixel = project_vec(&q, k)?;
    let iz = 1.0 / q.z;
    let d_point = Matrix2x3::new(
        k.fx * iz,
        0.0,
        -k.fx * q.x * iz * iz,
        0.0,
        k.fy * iz,
        -k.fy * q.y * iz * iz,
    );
    let dq_dd = pose.rotation() * k.ray(p);
    Ok(WarpDerivatives {
        pixel,
        d_depth: d_point * dq_dd,
        d_point,
        point,
    })
}
