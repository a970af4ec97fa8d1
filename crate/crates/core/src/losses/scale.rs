//! Scale loss tying camera translation to the pose change of static objects.

use nalgebra::Vector3;

use crate::geometry::{object_pose_change, SE3Pose};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleLoss {
    pub value: f64,
    /// False when no static pairs were available (the loss is then zero).
    pub present: bool,
    /// `sign(t_T - mean_i t_i)`, the gradient of the value with respect to
    /// the camera translation.
    pub sign: Vector3<f64>,
    pub pairs: usize,
}

/// `|| tran(T) - (1/N) sum_i tran(L_s^i (L_t^i)^-1) ||_1`.
pub fn scale_loss(t_ts: &SE3Pose, static_pairs: &[(SE3Pose, SE3Pose)]) -> ScaleLoss {
    if static_pairs.is_empty() {
        return ScaleLoss {
            value: 0.0,
            present: false,
            sign: Vector3::zeros(),
            pairs: 0,
        };
    }
    let mean = static_pairs
        .iter()
        .map(|(l_s, l_t)| *object_pose_change(l_s, l_t).translation())
        .fold(Vector3::zeros(), |acc, t| acc + t)
        / static_pairs.len() as f64;
    let diff = t_ts.translation() - mean;
    ScaleLoss {
        value: diff.abs().sum(),
        present: true,
        sign: diff.map(super::sign),
        pairs: static_pairs.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::object_motion;

    #[test]
    fn exact_static_pairs_give_zero() {
        let t = SE3Pose::from_axis_angle(Vector3::new(0.0, 0.02, 0.0), Vector3::new(0.5, 0.0, 0.1));
        let l_s = SE3Pose::from_yaw(0.3, Vector3::new(2.0, 1.0, 9.0));
        let l_t = t.invert().compose(&l_s);
        assert!(object_motion(&t, &l_s, &l_t).max_abs_diff(&SE3Pose::identity()) < 1e-12);
        let s = scale_loss(&t, &[(l_s, l_t)]);
        assert!(s.value < 1e-12 && s.present);
    }

    #[test]
    fn single_pair_arithmetic() {
        let t = SE3Pose::from_translation(Vector3::new(1.0, 0.0, 0.0));
        let l_t = SE3Pose::from_translation(Vector3::new(0.0, 0.0, 10.0));
        let l_s = SE3Pose::from_translation(Vector3::new(0.8, 0.0, 10.0));
        let s = scale_loss(&t, &[(l_s, l_t)]);
        assert!((s.value - 0.2).abs() < 1e-12);
    }

    #[test]
    fn averaging_then_l1() {
        let t = SE3Pose::from_translation(Vector3::new(0.9, 0.0, 0.0));
        let l_t = SE3Pose::identity();
        let a = SE3Pose::from_translation(Vector3::new(1.0, 0.0, 0.0));
        let b = SE3Pose::from_translation(Vector3::new(0.6, 0.0, 0.0));
        let s = scale_loss(&t, &[(a, l_t), (b, l_t)]);
        assert!((s.value - 0.1).abs() < 1e-12);
    }

    #[test]
    fn no_pairs_flags_absence() {
        let s = scale_loss(&SE3Pose::identity(), &[]);
        assert_eq!(s.value, 0.0);
        assert!(!s.present);
    }
}
