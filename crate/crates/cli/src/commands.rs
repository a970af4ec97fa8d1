//! Subcommand implementations. Every artifact is a pure function of the
//! config, so repeated runs write identical bytes.

use std::io::Write;
use std::path::{Path, PathBuf};

use dyndepth::eval::{compute_metrics, crop_region, CropSpec, DepthMetrics, DEFAULT_CAP};
use dyndepth::imaging::io::{encode_pfm, encode_pgm, encode_ppm, read_depth};
use dyndepth::objects::{associate, DetectionSet};
use dyndepth::optim::{fit, jitter_depth, report, FitReport, FitState, IterationRow, SceneProblem};
use dyndepth::scene::{perturb_detections, render_frame, RenderedFrame, SceneConfig};
use dyndepth::Image;
use serde::Serialize;

use crate::config::{ExperimentConfig, InitKind};
use crate::error::{CliError, CliResult};

#[derive(Debug, Serialize)]
struct FileEntry {
    name: String,
    bytes: usize,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    status: &'a str,
    config: &'a ExperimentConfig,
    files: Vec<FileEntry>,
}

/// Writes files into one directory and remembers them for the manifest.
struct OutDir {
    dir: PathBuf,
    files: Vec<FileEntry>,
}

impl OutDir {
    fn create(dir: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(dir).map_err(|source| CliError::Write {
            path: dir.display().to_string(),
            source,
        })?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn put(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes).map_err(|source| CliError::Write {
            path: path.display().to_string(),
            source,
        })?;
        self.files.push(FileEntry {
            name: name.to_string(),
            bytes: bytes.len(),
        });
        Ok(())
    }

    fn finish(mut self, command: &str, status: &str, config: &ExperimentConfig) -> CliResult<()> {
        let files = std::mem::take(&mut self.files);
        let manifest = Manifest {
            command,
            status,
            config,
            files,
        };
        let mut text = serde_json::to_string_pretty(&manifest).map_err(dyndepth::Error::from)?;
        text.push('\n');
        self.put("manifest.json", text.as_bytes())
    }
}

fn output_dir(cli: Option<&Path>, cfg: &ExperimentConfig) -> CliResult<PathBuf> {
    cli.map(Path::to_path_buf)
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| CliError::Usage("no output directory: pass --out or set output_dir".into()))
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> dyndepth::Result<()>) -> CliResult<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

/// Renders a frame with its detections perturbed by the config noise.
fn noisy_frame(cfg: &ExperimentConfig, scene: &SceneConfig, t: usize) -> CliResult<RenderedFrame> {
    let mut frame = render_frame(scene, t)?;
    let n = &cfg.detection_noise;
    if !n.is_zero() {
        frame.detections = perturb_detections(
            &frame.detections,
            n.center_sigma,
            n.dims_sigma,
            n.yaw_sigma,
            cfg.noise_seed(t),
        )?;
    }
    Ok(frame)
}

fn labels_image(frame: &RenderedFrame) -> Image {
    let p = &frame.partition;
    Image::from_fn(p.width(), p.height(), 1, |x, y, _| f64::from(p.label(x, y)) / 255.0)
}

pub fn render(cfg: &ExperimentConfig, scene: &SceneConfig, out: Option<&Path>) -> CliResult<()> {
    if scene.objects.len() > 254 {
        return Err(CliError::Usage("label images hold at most 254 objects".into()));
    }
    let mut dir = OutDir::create(&output_dir(out, cfg)?)?;
    for t in 0..scene.num_frames() {
        let frame = noisy_frame(cfg, scene, t)?;
        dir.put(&format!("frame_{t:03}.ppm"), &encode_ppm(&frame.image)?)?;
        dir.put(&format!("depth_{t:03}.pfm"), &encode_pfm(&frame.depth.to_image())?)?;
        dir.put(&format!("labels_{t:03}.pgm"), &encode_pgm(&labels_image(&frame))?)?;
        if !scene.objects.is_empty() {
            let csv = csv_bytes(|b| frame.detections.write_csv(b))?;
            dir.put(&format!("detections_{t:03}.csv"), &csv)?;
        }
    }
    dir.finish("render", "ok", cfg)
}

/// The fit problem and its initial state as described by the config.
pub fn setup(cfg: &ExperimentConfig, scene: &SceneConfig) -> CliResult<(SceneProblem, FitState)> {
    cfg.check_frames(scene)?;
    let target = noisy_frame(cfg, scene, cfg.target)?;
    let sources = cfg
        .sources
        .iter()
        .map(|&s| noisy_frame(cfg, scene, s))
        .collect::<CliResult<Vec<_>>>()?;
    let fit_cfg = fit_config(cfg);
    let sp = SceneProblem::from_frames(scene, target, sources, &fit_cfg)?;
    let state = match cfg.init.start {
        InitKind::Gt => sp.gt_state()?,
        InitKind::Constant { depth } => sp.constant_depth_state(depth, &sp.gt_poses)?,
        InitKind::Scaled { factor } => sp.scaled_gt_state(factor)?,
    };
    let state = if cfg.init.jitter > 0.0 {
        jitter_depth(&state, cfg.init.jitter, fit_cfg.seed)?
    } else {
        state
    };
    Ok((sp, state))
}

fn fit_config(cfg: &ExperimentConfig) -> dyndepth::optim::FitConfig {
    let mut f = cfg.fit.clone();
    f.seed = cfg.init_seed();
    f
}

fn metrics_csv(report: &FitReport, gt: &RenderedFrame) -> CliResult<Vec<u8>> {
    let d = &report.final_depth;
    let region = crop_region(d.width(), d.height(), &CropSpec::EIGEN)?;
    let mut text = format!("median_scaled,{}\n", DepthMetrics::CSV_HEADER);
    for median in [false, true] {
        let m = compute_metrics(d, &gt.depth, DEFAULT_CAP, &region, median)?;
        text.push_str(&format!("{median},{}\n", m.csv_row()));
    }
    Ok(text.into_bytes())
}

fn curves(dir: &mut OutDir, rows: &[IterationRow], num_scales: usize) -> CliResult<()> {
    dir.put("loss.csv", &csv_bytes(|b| report::write_loss_csv(b, rows, num_scales))?)?;
    dir.put("scale.csv", &csv_bytes(|b| report::write_scale_csv(b, rows))?)
}

/// Runs the fit. On divergence the curves recorded so far are still
/// written before the error is returned.
pub fn fit_cmd(cfg: &ExperimentConfig, scene: &SceneConfig, out: Option<&Path>) -> CliResult<FitReport> {
    let mut dir = OutDir::create(&output_dir(out, cfg)?)?;
    let (sp, state) = setup(cfg, scene)?;
    let fit_cfg = fit_config(cfg);
    let num_scales = fit_cfg.weights.num_scales;
    match fit(&sp.problem, state, &fit_cfg) {
        Ok(report) => {
            curves(&mut dir, &report.rows, num_scales)?;
            dir.put("depth.pfm", &encode_pfm(&report.final_depth.to_image())?)?;
            let mut poses = Vec::new();
            report::write_poses(&mut poses, &report.final_poses)?;
            dir.put("poses.txt", &poses)?;
            dir.put("metrics.csv", &metrics_csv(&report, &sp.target)?)?;
            dir.finish("fit", "ok", cfg)?;
            eprintln!("{}", report::summary(&report));
            Ok(report)
        }
        Err(e) => {
            if let Some(partial) = &e.partial {
                curves(&mut dir, &partial.rows, num_scales)?;
            }
            dir.finish("fit", "diverged", cfg)?;
            Err(CliError::Core(e.error))
        }
    }
}

/// Fits the config twice, with its scale weight and without, and writes
/// both scale-ratio curves side by side.
pub fn demo_scale(cfg: &ExperimentConfig, scene: &SceneConfig, out: Option<&Path>) -> CliResult<()> {
    if !(cfg.fit.weights.beta_scale > 0.0) {
        return Err(CliError::Usage("demo-scale needs a positive beta_scale".into()));
    }
    let mut dir = OutDir::create(&output_dir(out, cfg)?)?;
    let (sp, state) = setup(cfg, scene)?;
    let mut curves = Vec::new();
    for beta in [cfg.fit.weights.beta_scale, 0.0] {
        let mut f = fit_config(cfg);
        f.weights.beta_scale = beta;
        let report = fit(&sp.problem, state.clone(), &f).map_err(|e| CliError::Core(e.error))?;
        eprintln!("beta {beta}: {}", report::summary(&report));
        curves.push(report.rows);
    }
    let n = curves.iter().map(Vec::len).max().unwrap_or(0);
    let cell = |rows: &[IterationRow], i: usize| {
        rows.get(i)
            .and_then(|r| r.scale_ratio)
            .map(|v| v.to_string())
            .unwrap_or_default()
    };
    let mut text = String::from("iteration,scale_ratio,scale_ratio_unconstrained\n");
    for i in 0..n {
        text.push_str(&format!("{i},{},{}\n", cell(&curves[0], i), cell(&curves[1], i)));
    }
    dir.put("scale.csv", text.as_bytes())?;
    dir.finish("demo-scale", "ok", cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Crop {
    Eigen,
    None,
}

pub fn eval(pred: &Path, gt: &Path, cap: f64, median: bool, crop: Crop, out: &mut impl Write) -> CliResult<()> {
    let pred = read_depth(pred)?;
    let gt = read_depth(gt)?;
    if pred.width() != gt.width() || pred.height() != gt.height() {
        return Err(CliError::Usage(format!(
            "prediction is {}x{} but ground truth is {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    let spec = match crop {
        Crop::Eigen => CropSpec::EIGEN,
        Crop::None => CropSpec::FULL,
    };
    let region = crop_region(gt.width(), gt.height(), &spec)?;
    let m = compute_metrics(&pred, &gt, cap, &region, median)?;
    writeln!(out, "{}\n{}", DepthMetrics::CSV_HEADER, m.csv_row()).map_err(dyndepth::Error::from)?;
    Ok(())
}

fn read_detections(path: &Path) -> CliResult<DetectionSet> {
    let file = std::fs::File::open(path).map_err(dyndepth::Error::from)?;
    Ok(DetectionSet::read_csv(file)?)
}

pub fn associate_cmd(target: &Path, source: &Path, alpha: f64, threshold: f64, out: &mut impl Write) -> CliResult<()> {
    if !alpha.is_finite() || !threshold.is_finite() {
        return Err(CliError::Usage("alpha and threshold must be finite".into()));
    }
    let a = associate(&read_detections(target)?, &read_detections(source)?, alpha, threshold);
    let mut text = String::from("target,source,score\n");
    for m in &a.pairs {
        text.push_str(&format!("{},{},{:.6}\n", m.target, m.source, m.score));
    }
    out.write_all(text.as_bytes()).map_err(dyndepth::Error::from)?;
    Ok(())
}
