//! Reproducible experiments on rendered scenes: rendering, fitting,
//! association and evaluation, each writing plain files.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use dyndepth::eval::DEFAULT_CAP;
use dyndepth::objects::{DEFAULT_ALPHA_ASSOC, DEFAULT_SCORE_THRESHOLD};

use commands::Crop;
use config::ExperimentConfig;
use error::CliResult;

#[derive(Debug, Parser)]
#[command(name = "dyndepth", version, about = "Depth and ego-motion fitting on rendered scenes with moving objects")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render every frame of the scene: image, depth, labels and detections.
    Render {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit depth and poses, writing loss and scale curves, depth, poses and metrics.
    Fit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the iteration budget of the config.
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Print the depth metrics of a predicted PFM against a ground-truth PFM.
    Eval {
        pred: PathBuf,
        gt: PathBuf,
        #[arg(long, default_value_t = DEFAULT_CAP)]
        cap: f64,
        /// Scale the prediction by the ratio of medians first.
        #[arg(long)]
        median_scale: bool,
        #[arg(long, value_enum, default_value_t = Crop::Eigen)]
        crop: Crop,
    },
    /// Match the detections of two frames and print the pairs with scores.
    Associate {
        target: PathBuf,
        source: PathBuf,
        #[arg(long, default_value_t = DEFAULT_ALPHA_ASSOC)]
        alpha: f64,
        #[arg(long, default_value_t = DEFAULT_SCORE_THRESHOLD)]
        threshold: f64,
    },
    /// Fit from a wrong initial scale with and without the scale loss and
    /// write both scale-ratio curves.
    DemoScale {
        /// Defaults to the built-in parked-boxes experiment.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        iterations: Option<usize>,
    },
}

fn with_iterations(mut cfg: ExperimentConfig, iterations: Option<usize>) -> ExperimentConfig {
    if let Some(n) = iterations {
        cfg.fit.iterations = n;
    }
    cfg
}

pub fn execute(cli: Cli) -> CliResult<()> {
    let mut stdout = std::io::stdout().lock();
    match cli.command {
        Command::Render { config, out } => {
            let (cfg, scene) = ExperimentConfig::load(&config)?;
            commands::render(&cfg, &scene, out.as_deref())
        }
        Command::Fit { config, out, iterations } => {
            let (cfg, scene) = ExperimentConfig::load(&config)?;
            let cfg = with_iterations(cfg, iterations);
            commands::fit_cmd(&cfg, &scene, out.as_deref()).map(|_| ())
        }
        Command::Eval {
            pred,
            gt,
            cap,
            median_scale,
            crop,
        } => commands::eval(&pred, &gt, cap, median_scale, crop, &mut stdout),
        Command::Associate {
            target,
            source,
            alpha,
            threshold,
        } => commands::associate_cmd(&target, &source, alpha, threshold, &mut stdout),
        Command::DemoScale { config, out, iterations } => {
            let (cfg, scene) = match config {
                Some(path) => ExperimentConfig::load(&path)?,
                None => {
                    let cfg = ExperimentConfig::demo_scale();
                    let scene = cfg.resolve()?;
                    (cfg, scene)
                }
            };
            let cfg = with_iterations(cfg, iterations);
            commands::demo_scale(&cfg, &scene, out.as_deref())
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Diagnostics go to standard error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
