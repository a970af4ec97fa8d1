//! Geometric self-supervision machinery for monocular depth estimation in
//! scenes with independently moving rigid objects.
//!
//! Pixels on the rigid background are warped into source views with the
//! camera ego-motion; pixels on detected objects are warped with the pose
//! change of the associated cuboid. Photometric, smoothness and scale
//! losses drive a direct gradient-based fit of depth and pose against a
//! deterministic ray-cast scene with exact ground truth.

// `!(x > 0.0)` is the NaN-rejecting form used throughout for input checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod eval;
pub mod geometry;
pub mod imaging;
pub mod losses;
pub mod objects;
pub mod optim;
pub mod scene;

pub use error::{Error, Result};
pub use geometry::{Intrinsics, PixelCoord, Point3, SE3Pose};
pub use imaging::{BinaryMask, DepthMap, Image, ImagePyramid, Partition};
