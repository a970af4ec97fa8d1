//! Writers for fit artifacts: loss and scale curves, poses.

use std::io::Write;

use super::{FitReport, IterationRow};
use crate::error::Result;
use crate::geometry::SE3Pose;
use crate::losses::LossBreakdown;

pub fn write_loss_csv<W: Write>(out: W, rows: &[IterationRow], num_scales: usize) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = LossBreakdown::csv_header(num_scales);
    header.extend(["step_scale", "grad_depth_norm", "grad_pose_norm", "static_objects", "held_out"].map(String::from));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = r.loss.csv_record(r.iteration);
        rec.push(r.step_scale.to_string());
        rec.push(r.grad_depth_norm.to_string());
        rec.push(r.grad_pose_norm.to_string());
        rec.push(r.static_objects.to_string());
        rec.push(r.held_out.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Scale ratio and mean camera translation norm per iteration.
pub fn write_scale_csv<W: Write>(out: W, rows: &[IterationRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "scale_ratio", "translation_norm"])?;
    for r in rows {
        let ratio = r.scale_ratio.map(|v| v.to_string()).unwrap_or_default();
        w.write_record([r.iteration.to_string(), ratio, r.translation_norm.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// One line per pose: the 12 numbers of the row-major 3x4 matrix.
pub fn write_poses<W: Write>(mut out: W, poses: &[SE3Pose]) -> Result<()> {
    for p in poses {
        let line: Vec<String> = p.to_row_major_3x4().iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    Ok(())
}

pub fn read_poses(text: &str) -> Result<Vec<SE3Pose>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| crate::Error::Format(format!("pose line {}: {e}", n + 1)))?;
        let arr: [f64; 12] = vals
            .try_into()
            .map_err(|_| crate::Error::Format(format!("pose line {} needs 12 numbers", n + 1)))?;
        out.push(SE3Pose::from_row_major_3x4(&arr)?);
    }
    Ok(out)
}

pub fn summary(report: &FitReport) -> String {
    let r = report.final_row();
    format!(
        "iterations {} total {:.6e} scale_ratio {}",
        report.iterations(),
        r.loss.total,
        r.scale_ratio.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into())
    )
}
