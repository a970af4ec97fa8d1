//! Ready-made scenes used by the experiments and the CLI.

use super::{CameraConfig, MotionConfig, ObjectConfig, PlaneConfig, SceneConfig, SCHEMA_VERSION};
use crate::geometry::Intrinsics;

pub const SIZE: usize = 64;
pub const CAMERA_HEIGHT: f64 = 1.5;
pub const WALL_DISTANCE: f64 = 8.0;
pub const BASELINE: f64 = 0.3;

fn intrinsics() -> Intrinsics {
    Intrinsics {
        fx: 64.0,
        fy: 64.0,
        cx: 31.5,
        cy: 31.5,
    }
}

// Texture scales keep the finest noise octave above about 1.5 pixels so the
// warped reconstructions are not dominated by aliasing.
fn ground_and_wall() -> Vec<PlaneConfig> {
    vec![
        PlaneConfig {
            normal: [0.0, 1.0, 0.0],
            offset: CAMERA_HEIGHT,
            texture_seed: 0,
            texture_scale: [0.6, 0.2],
        },
        PlaneConfig {
            normal: [0.0, 0.0, 1.0],
            offset: WALL_DISTANCE,
            texture_seed: 1,
            texture_scale: [0.5, 0.5],
        },
    ]
}

/// Three frames from a camera sliding sideways; the middle one is the target.
fn lateral_trajectory(baseline: f64) -> Vec<CameraConfig> {
    [-baseline, 0.0, baseline]
        .iter()
        .map(|&x| CameraConfig {
            translation: [x, 0.0, 0.0],
            yaw: 0.0,
        })
        .collect()
}

/// Ground plane and back wall, no objects.
pub fn static_scene(seed: u64) -> SceneConfig {
    SceneConfig {
        schema_version: SCHEMA_VERSION,
        width: SIZE,
        height: SIZE,
        intrinsics: intrinsics(),
        seed,
        planes: ground_and_wall(),
        objects: Vec::new(),
        camera_trajectory: lateral_trajectory(BASELINE),
    }
}

/// One box driving along its length axis at `speed` metres per frame.
pub fn dynamic_scene(seed: u64, speed: f64) -> SceneConfig {
    let mut s = static_scene(seed);
    s.objects.push(ObjectConfig {
        dims: [1.6, 1.4, 1.6],
        position: [0.0, CAMERA_HEIGHT - 0.7, 5.0],
        // A small yaw keeps the side face narrow; wider grazing faces alias
        // and leave a few pixels unconstrained.
        yaw: 0.15,
        motion: MotionConfig {
            translation: [0.0, 0.0, speed],
            yaw: 0.0,
        },
        texture_seed: 10,
        texture_scale: [0.7, 0.7],
    });
    s
}

/// Parked boxes that anchor the metric scale of the camera translation.
pub fn scale_scene(seed: u64) -> SceneConfig {
    let mut s = static_scene(seed);
    for (i, &(x, z, yaw)) in [(-1.6, 5.5, 0.2), (1.7, 6.0, -0.4)].iter().enumerate() {
        s.objects.push(ObjectConfig {
            dims: [1.2, 1.2, 1.6],
            position: [x, CAMERA_HEIGHT - 0.6, z],
            yaw,
            motion: MotionConfig::default(),
            texture_seed: 20 + i as u64,
            texture_scale: [1.0, 1.0],
        });
    }
    s
}

/// A single fronto-parallel textured wall at `distance` metres.
pub fn wall_scene(seed: u64, distance: f64) -> SceneConfig {
    let mut s = static_scene(seed);
    s.planes = vec![PlaneConfig {
        normal: [0.0, 0.0, 1.0],
        offset: distance,
        texture_seed: 1,
        texture_scale: [0.5, 0.5],
    }];
    s
}
