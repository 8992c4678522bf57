//! Trajectory alignment, absolute trajectory error and SVG overlays.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::pipeline::Trajectory;

#[derive(Debug, Clone, PartialEq)]
pub struct AteReport {
    pub max: f64,
    pub mean: f64,
    pub median: f64,
    pub n: usize,
    pub per_pose_errors: Vec<f64>,
}

impl AteReport {
    pub fn from_errors(errors: Vec<f64>) -> Result<Self> {
        if errors.is_empty() {
            return Err(Error::Association("no associated poses".into()));
        }
        let n = errors.len();
        let mut sorted = errors.clone();
        sorted.sort_by(f64::total_cmp);
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        let report = AteReport {
            max: sorted[n - 1],
            mean: errors.iter().sum::<f64>() / n as f64,
            median,
            n,
            per_pose_errors: errors,
        };
        assert!(report.max >= report.mean && report.max >= report.median && report.median >= 0.0);
        Ok(report)
    }

    pub fn to_csv(&self) -> String {
        format!("n,max,mean,median\n{},{},{},{}\n", self.n, self.max, self.mean, self.median)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

fn gt_index(gt: &Trajectory) -> HashMap<usize, (f64, f64)> {
    gt.entries().iter().map(|e| (e.frame, (e.pose.x, e.pose.y))).collect()
}

/// Ground-truth positions at the frames of `traj`.
fn associate(traj: &Trajectory, gt: &Trajectory) -> Result<Vec<(f64, f64)>> {
    let index = gt_index(gt);
    traj.entries()
        .iter()
        .map(|e| {
            index
                .get(&e.frame)
                .copied()
                .ok_or_else(|| Error::Association(format!("frame {} has no ground truth", e.frame)))
        })
        .collect()
}

/// Aligns `traj` to `gt`: first poses coincide, XY scaled by the ratio of
/// polyline lengths (and by the pose-count ratio when `traj` is sparser),
/// then shifted by the mean residual offset. No rotation is applied.
pub fn align_and_scale(traj: &Trajectory, gt: &Trajectory) -> Result<Trajectory> {
    if traj.len() < 2 {
        return Err(Error::DegenerateTrajectory(format!("{} poses", traj.len())));
    }
    let gt_xy = associate(traj, gt)?;
    let l_traj = traj.length();
    let l_gt = gt.length();
    if !(l_traj > 0.0) || !(l_gt > 0.0) {
        return Err(Error::DegenerateTrajectory(format!(
            "zero length (trajectory {l_traj}, ground truth {l_gt})"
        )));
    }
    let mut k = l_gt / l_traj;
    if traj.len() < gt.len() {
        k *= traj.len() as f64 / gt.len() as f64;
    }
    let p = traj.positions();
    let (p0, g0) = (p[0], gt_xy[0]);
    let scaled: Vec<(f64, f64)> = p
        .iter()
        .map(|&(x, y)| (g0.0 + k * (x - p0.0), g0.1 + k * (y - p0.1)))
        .collect();
    let n = scaled.len() as f64;
    let (mut ox, mut oy) = (0.0, 0.0);
    for (s, g) in scaled.iter().zip(&gt_xy) {
        ox += g.0 - s.0;
        oy += g.1 - s.1;
    }
    let (ox, oy) = (ox / n, oy / n);
    let out: Vec<(f64, f64)> = scaled.iter().map(|&(x, y)| (x + ox, y + oy)).collect();
    Ok(traj.with_positions(&out))
}

/// Per-pose XY distances to ground truth, associated by frame index.
pub fn ate(traj_aligned: &Trajectory, gt: &Trajectory) -> Result<AteReport> {
    let gt_xy = associate(traj_aligned, gt)?;
    let errors = traj_aligned
        .positions()
        .iter()
        .zip(&gt_xy)
        .map(|(p, g)| (p.0 - g.0).hypot(p.1 - g.1))
        .collect();
    AteReport::from_errors(errors)
}

const PALETTE: [&str; 8] = [
    "#d62728", "#17becf", "#2ca02c", "#1f77b4", "#9467bd", "#ff7f0e", "#8c564b", "#7f7f7f",
];

/// SVG overlay of named XY polylines with a legend.
pub fn render_svg(series: &[(&str, &Trajectory)]) -> Result<String> {
    if series.is_empty() {
        return Err(Error::InputDomain("nothing to plot".into()));
    }
    let (size, margin, legend_h) = (600.0, 40.0, 20.0 * series.len() as f64 + 10.0);
    let pts: Vec<(f64, f64)> = series.iter().flat_map(|(_, t)| t.positions()).collect();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in &pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let span = (x1 - x0).max(y1 - y0).max(1e-9);
    let scale = (size - 2.0 * margin) / span;
    // world y up, SVG y down
    let map = |x: f64, y: f64| (margin + (x - x0) * scale, margin + (y1 - y) * scale);

    let height = size + legend_h;
    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{height}" viewBox="0 0 {size} {height}">"#
    )
    .unwrap();
    writeln!(svg, r#"<rect width="{size}" height="{height}" fill="white"/>"#).unwrap();
    for (i, (_, t)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = t
            .positions()
            .iter()
            .map(|&(x, y)| {
                let (u, v) = map(x, y);
                format!("{u:.3},{v:.3}")
            })
            .collect();
        writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            points.join(" ")
        )
        .unwrap();
    }
    for (i, (name, _)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let y = size + 20.0 * i as f64;
        writeln!(
            svg,
            r#"<line x1="{margin}" y1="{y}" x2="{}" y2="{y}" stroke="{color}" stroke-width="3"/>"#,
            margin + 24.0
        )
        .unwrap();
        writeln!(
            svg,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="13">{}</text>"#,
            margin + 32.0,
            y + 4.0,
            xml_escape(name)
        )
        .unwrap();
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Line plot of a matching error curve over its candidate factors, with the
/// selected candidate marked. Infinite errors are skipped.
pub fn render_curve_svg(candidates: &[f64], errors: &[f64], selected: usize) -> Result<String> {
    let pts: Vec<(f64, f64)> = candidates
        .iter()
        .zip(errors)
        .filter(|(_, e)| e.is_finite())
        .map(|(&c, &e)| (c, e))
        .collect();
    if candidates.len() != errors.len() || pts.is_empty() {
        return Err(Error::InputDomain("error curve has no finite points".into()));
    }
    let (w, h, margin) = (600.0, 300.0, 40.0);
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in &pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let sx = (w - 2.0 * margin) / (x1 - x0).max(1e-12);
    let sy = (h - 2.0 * margin) / (y1 - y0).max(1e-12);
    let map = |x: f64, y: f64| (margin + (x - x0) * sx, h - margin - (y - y0) * sy);
    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    )
    .unwrap();
    writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#).unwrap();
    let line: Vec<String> = pts
        .iter()
        .map(|&(x, y)| {
            let (u, v) = map(x, y);
            format!("{u:.3},{v:.3}")
        })
        .collect();
    writeln!(
        svg,
        r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
        PALETTE[3],
        line.join(" ")
    )
    .unwrap();
    if let (Some(&c), Some(&e)) = (candidates.get(selected), errors.get(selected)) {
        if e.is_finite() {
            let (u, v) = map(c, e);
            writeln!(svg, r#"<circle cx="{u:.3}" cy="{v:.3}" r="4" fill="{}"/>"#, PALETTE[0]).unwrap();
            writeln!(
                svg,
                r#"<text x="{:.3}" y="{:.3}" font-family="sans-serif" font-size="13">{c:.4}</text>"#,
                u + 6.0,
                v - 6.0
            )
            .unwrap();
        }
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Writes the SVG overlay to `out`. With ground truth, also writes
/// per-pose errors of every series to `<out>.errors.csv`; series are
/// expected to be aligned already.
pub fn emit_plots(
    series: &[(&str, &Trajectory)],
    gt: Option<&Trajectory>,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    let svg = render_svg(series)?;
    fs::write(out, svg).map_err(|e| Error::io(out, e))?;
    let mut written = vec![out.to_path_buf()];
    if let Some(gt) = gt {
        let path = out.with_extension("errors.csv");
        let mut csv = String::from("series,frame,error\n");
        for (name, t) in series {
            let report = ate(t, gt)?;
            for (e, err) in t.entries().iter().zip(&report.per_pose_errors) {
                writeln!(csv, "{},{},{}", name, e.frame, err).unwrap();
            }
        }
        fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
