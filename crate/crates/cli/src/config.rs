//! Experiment configuration files.

use std::path::{Path, PathBuf};

use dyndepth::optim::{FitConfig, FreeParams};
use dyndepth::scene::{derive_seed, presets, SceneConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const SCHEMA_VERSION: u32 = 1;

/// A ready-made scene, selected by `name`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase", deny_unknown_fields)]
pub enum Preset {
    Static,
    Dynamic { speed: f64 },
    Scale,
    Wall { distance: f64 },
}

impl Preset {
    pub fn build(&self, texture_seed: u64) -> SceneConfig {
        match *self {
            Preset::Static => presets::static_scene(texture_seed),
            Preset::Dynamic { speed } => presets::dynamic_scene(texture_seed, speed),
            Preset::Scale => presets::scale_scene(texture_seed),
            Preset::Wall { distance } => presets::wall_scene(texture_seed, distance),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum SceneSource {
    /// Scene JSON file, relative to the experiment config.
    Path(PathBuf),
    Preset(Preset),
}

/// Initial depth and camera poses of a fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum InitKind {
    /// Ground-truth depth and poses.
    Gt,
    /// Constant depth with ground-truth poses.
    Constant { depth: f64 },
    /// Ground-truth depth and camera translations scaled by `factor`.
    Scaled { factor: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitConfig {
    pub start: InitKind,
    /// Standard deviation of the per-pixel log-depth jitter.
    pub jitter: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            start: InitKind::Constant { depth: 5.0 },
            jitter: 0.0,
        }
    }
}

/// Gaussian noise added to the simulated 3D detections.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectionNoise {
    pub center_sigma: f64,
    pub dims_sigma: f64,
    pub yaw_sigma: f64,
}

impl DetectionNoise {
    pub fn is_zero(&self) -> bool {
        self.center_sigma == 0.0 && self.dims_sigma == 0.0 && self.yaw_sigma == 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// Root of every random stream: scene textures, detection noise and the
    /// initial-state jitter.
    pub seed: u64,
    pub scene: SceneSource,
    #[serde(default = "default_target")]
    pub target: usize,
    #[serde(default = "default_sources")]
    pub sources: Vec<usize>,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub init: InitConfig,
    #[serde(default)]
    pub detection_noise: DetectionNoise,
    /// Used when the command line gives no output directory; relative to
    /// the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

fn default_target() -> usize {
    1
}

fn default_sources() -> Vec<usize> {
    vec![0, 2]
}

impl ExperimentConfig {
    /// Reads and validates a config. Relative paths inside it are resolved
    /// against the file's directory.
    pub fn load(path: &Path) -> CliResult<(Self, SceneConfig)> {
        let fail = |reason: String| CliError::Config {
            path: path.display().to_string(),
            reason,
        };
        let text = std::fs::read_to_string(path).map_err(|e| fail(e.to_string()))?;
        let mut cfg: ExperimentConfig = serde_json::from_str(&text).map_err(|e| fail(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let SceneSource::Path(p) = &mut cfg.scene {
            *p = base.join(&*p);
        }
        if let Some(out) = &mut cfg.output_dir {
            *out = base.join(&*out);
        }
        let scene = cfg.resolve().map_err(|e| fail(e.to_string()))?;
        Ok((cfg, scene))
    }

    /// Validates the config and builds its scene with the derived texture
    /// seed.
    pub fn resolve(&self) -> CliResult<SceneConfig> {
        let bad = |m: &str| CliError::Usage(m.to_string());
        if self.schema_version != SCHEMA_VERSION {
            return Err(CliError::Usage(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.fit.validate()?;
        let n = &self.detection_noise;
        if ![n.center_sigma, n.dims_sigma, n.yaw_sigma, self.init.jitter]
            .iter()
            .all(|s| *s >= 0.0 && s.is_finite())
        {
            return Err(bad("noise and jitter sigmas must be finite and non-negative"));
        }
        match self.init.start {
            InitKind::Constant { depth } if !(depth > 0.0 && depth.is_finite()) => {
                return Err(bad("initial depth must be positive"))
            }
            InitKind::Scaled { factor } if !(factor > 0.0 && factor.is_finite()) => {
                return Err(bad("initial scale factor must be positive"))
            }
            _ => {}
        }
        let mut scene = match &self.scene {
            SceneSource::Preset(p) => p.build(0),
            SceneSource::Path(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
                SceneConfig::from_json(&text)?
            }
        };
        scene.seed = self.texture_seed();
        scene.validate()?;
        Ok(scene)
    }

    /// Checks the frame indices against a scene.
    pub fn check_frames(&self, scene: &SceneConfig) -> CliResult<()> {
        let n = scene.num_frames();
        if self.target >= n || self.sources.iter().any(|&s| s >= n) {
            return Err(CliError::Usage(format!("frame index outside the {n} scene frames")));
        }
        if self.sources.is_empty() || self.sources.contains(&self.target) {
            return Err(CliError::Usage("sources must be non-empty and exclude the target".into()));
        }
        Ok(())
    }

    pub fn texture_seed(&self) -> u64 {
        derive_seed(self.seed, "texture", 0)
    }

    pub fn noise_seed(&self, frame: usize) -> u64 {
        derive_seed(self.seed, "noise", frame as u64)
    }

    pub fn init_seed(&self) -> u64 {
        derive_seed(self.seed, "init", 0)
    }

    /// The built-in experiment behind `demo-scale`: parked boxes, joint
    /// depth and pose fit from 0.6 times the true scale.
    pub fn demo_scale() -> Self {
        let mut fit = FitConfig {
            iterations: 160,
            free: FreeParams::Both,
            eps_static: 3.0,
            ..FitConfig::default()
        };
        fit.weights.beta_scale = 0.05;
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 3,
            scene: SceneSource::Preset(Preset::Scale),
            target: default_target(),
            sources: default_sources(),
            fit,
            init: InitConfig {
                start: InitKind::Scaled { factor: 0.6 },
                jitter: 0.0,
            },
            detection_noise: DetectionNoise::default(),
            output_dir: None,
        }
    }
}
