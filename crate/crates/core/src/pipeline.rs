//! Frame-sequence odometry: registrations, scale chaining, optional loop
//! refinement and dead-reckoning into a 4-DOF trajectory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::energy::{smooth_vector, Axis, EnergyVector};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::matching::{match_scale, match_translation, MatchConfig, MotionState};
use crate::optimizer::{
    optimize_triplet, wrap_degrees, LoopResiduals, OptimizerConfig, TripletProblem, TripletSigmas,
    TripletState,
};
use crate::registration::{register_pair, PairRegistration, RegistrationConfig};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    /// Accumulated `ln(s)`.
    pub log_zoom: f64,
    /// Heading in degrees, `[0, 360)`.
    pub yaw: f64,
}

impl Pose {
    pub const ORIGIN: Pose = Pose { x: 0.0, y: 0.0, log_zoom: 0.0, yaw: 0.0 };
}

fn wrap_yaw(a: f64) -> f64 {
    let w = a.rem_euclid(360.0);
    if w >= 360.0 {
        0.0
    } else {
        w
    }
}

/// Dead-reckoning step: turn by `theta`, move `rho` along `prev.yaw + phi`,
/// zoom by `s`. Angles in degrees.
pub fn accumulate_pose(prev: &Pose, theta: f64, phi: f64, rho: f64, s: f64) -> Pose {
    let (sin, cos) = (prev.yaw + phi).to_radians().sin_cos();
    Pose {
        x: prev.x + rho * cos,
        y: prev.y + rho * sin,
        log_zoom: prev.log_zoom + s.ln(),
        yaw: wrap_yaw(prev.yaw + theta),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Strongest correlation peak only; speed taken from pixel displacement.
    Fmt,
    /// Energy vectors with pattern matching.
    Efmt,
    /// Pattern matching plus three-frame loop refinement.
    #[default]
    Oefmt,
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fmt" => Ok(Mode::Fmt),
            "efmt" => Ok(Mode::Efmt),
            "oefmt" | "o-efmt" => Ok(Mode::Oefmt),
            other => Err(Error::InputDomain(format!("unknown mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Fmt => "fmt",
            Mode::Efmt => "efmt",
            Mode::Oefmt => "oefmt",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct PipelineConfig {
    pub mode: Mode,
    /// Abort on the first failing frame instead of carrying motion forward.
    pub strict: bool,
    pub registration: RegistrationConfig,
    pub matching: MatchConfig,
    pub optimizer: OptimizerConfig,
}

impl PipelineConfig {
    pub fn with_mode(mode: Mode) -> Self {
        Self { mode, ..Self::default() }
    }

    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::parse(path, e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Diagnostics of the motion applied between two consecutive frames.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepReport {
    /// Index of the destination frame.
    pub frame: usize,
    pub theta: f64,
    /// Motion heading relative to the previous yaw, degrees.
    pub phi: f64,
    pub rho: f64,
    pub s: f64,
    pub lambda_t: f64,
    pub lambda_s: f64,
    pub is_static: bool,
    pub flagged: bool,
    pub optimized: bool,
    pub residual_before: LoopResiduals,
    pub residual_after: LoopResiduals,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryEntry {
    pub frame: usize,
    pub pose: Pose,
    /// Set when the motion into this pose was carried forward after a
    /// registration or matching failure.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    entries: Vec<TrajectoryEntry>,
    steps: Vec<StepReport>,
    config: Option<PipelineConfig>,
}

pub const TRAJECTORY_HEADER: &str = "frame,x,y,log_zoom,yaw";

impl Trajectory {
    /// Builds a trajectory; frame indices must strictly increase.
    pub fn new(entries: Vec<TrajectoryEntry>) -> Result<Self> {
        if entries.windows(2).any(|w| w[1].frame <= w[0].frame) {
            return Err(Error::InputDomain("trajectory frame indices must strictly increase".into()));
        }
        for e in &entries {
            let p = e.pose;
            if ![p.x, p.y, p.log_zoom, p.yaw].iter().all(|v| v.is_finite()) {
                return Err(Error::InputDomain(format!("non-finite pose at frame {}", e.frame)));
            }
        }
        Ok(Self { entries, steps: Vec::new(), config: None })
    }

    pub fn from_poses(poses: impl IntoIterator<Item = (usize, Pose)>) -> Result<Self> {
        Self::new(
            poses
                .into_iter()
                .map(|(frame, pose)| TrajectoryEntry { frame, pose, flagged: false })
                .collect(),
        )
    }

    pub fn entries(&self) -> &[TrajectoryEntry] {
        &self.entries
    }

    pub fn steps(&self) -> &[StepReport] {
        &self.steps
    }

    pub fn config(&self) -> Option<&PipelineConfig> {
        self.config.as_ref()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn frames(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.frame).collect()
    }

    pub fn positions(&self) -> Vec<(f64, f64)> {
        self.entries.iter().map(|e| (e.pose.x, e.pose.y)).collect()
    }

    /// Sum of XY distances between consecutive poses.
    pub fn length(&self) -> f64 {
        self.entries
            .windows(2)
            .map(|w| (w[1].pose.x - w[0].pose.x).hypot(w[1].pose.y - w[0].pose.y))
            .sum()
    }

    /// Distances between consecutive poses.
    pub fn spacings(&self) -> Vec<f64> {
        self.entries
            .windows(2)
            .map(|w| (w[1].pose.x - w[0].pose.x).hypot(w[1].pose.y - w[0].pose.y))
            .collect()
    }

    /// Same frames with positions replaced.
    pub fn with_positions(&self, xy: &[(f64, f64)]) -> Trajectory {
        let entries = self
            .entries
            .iter()
            .zip(xy)
            .map(|(e, &(x, y))| TrajectoryEntry { pose: Pose { x, y, ..e.pose }, ..*e })
            .collect();
        Trajectory { entries, ..self.clone() }
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{TRAJECTORY_HEADER}\n");
        for e in &self.entries {
            let p = e.pose;
            writeln!(out, "{},{},{},{},{}", e.frame, p.x, p.y, p.log_zoom, p.yaw).unwrap();
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Reads any CSV with `frame`, `x` and `y` columns (`log_zoom` and `yaw`
    /// optional), e.g. trajectories and ground-truth files.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::parse(path, e.to_string()))?;
        let headers = rdr.headers().map_err(|e| Error::parse(path, e.to_string()))?.clone();
        let col = |name: &str| headers.iter().position(|h| h.trim() == name);
        let (Some(fi), Some(xi), Some(yi)) = (col("frame"), col("x"), col("y")) else {
            return Err(Error::parse(path, "missing frame/x/y columns"));
        };
        let (zi, wi) = (col("log_zoom"), col("yaw"));
        let mut entries = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::parse(path, e.to_string()))?;
            let num = |i: usize| -> Result<f64> {
                rec.get(i)
                    .and_then(|v| v.trim().parse::<f64>().ok())
                    .ok_or_else(|| Error::parse(path, format!("bad value on data row {}", line + 1)))
            };
            let frame = rec
                .get(fi)
                .and_then(|v| v.trim().parse::<usize>().ok())
                .ok_or_else(|| Error::parse(path, format!("bad frame on data row {}", line + 1)))?;
            let pose = Pose {
                x: num(xi)?,
                y: num(yi)?,
                log_zoom: zi.map(num).transpose()?.unwrap_or(0.0),
                yaw: wi.map(num).transpose()?.unwrap_or(0.0),
            };
            entries.push(TrajectoryEntry { frame, pose, flagged: false });
        }
        Self::new(entries).map_err(|e| Error::parse(path, e.to_string()))
    }

    /// Per-step diagnostics including loop residuals before and after
    /// refinement.
    pub fn steps_csv(&self) -> String {
        let mut out = String::from(
            "frame,theta,phi,rho,s,lambda_t,lambda_s,static,flagged,optimized,\
             mu_before,nu_before,s_before,theta_before,mu_after,nu_after,s_after,theta_after\n",
        );
        for s in &self.steps {
            let (b, a) = (s.residual_before, s.residual_after);
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                s.frame,
                s.theta,
                s.phi,
                s.rho,
                s.s,
                s.lambda_t,
                s.lambda_s,
                s.is_static as u8,
                s.flagged as u8,
                s.optimized as u8,
                b.mu,
                b.nu,
                b.s,
                b.theta,
                a.mu,
                a.nu,
                a.s,
                a.theta
            )
            .unwrap();
        }
        out
    }
}

/// Lexicographically ordered PNG/PGM/PPM files of a directory.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if matches!(ext.as_deref(), Some("png" | "pgm" | "ppm" | "pnm")) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Supplies frames by index; lets long sequences stream from disk.
pub trait FrameSource {
    fn len(&self) -> usize;
    fn frame(&self, i: usize) -> Result<Image>;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl FrameSource for [Image] {
    fn len(&self) -> usize {
        <[Image]>::len(self)
    }
    fn frame(&self, i: usize) -> Result<Image> {
        Ok(self[i].clone())
    }
}

impl FrameSource for Vec<Image> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }
    fn frame(&self, i: usize) -> Result<Image> {
        Ok(self[i].clone())
    }
}

/// Frames loaded lazily from files.
pub struct FrameFiles(pub Vec<PathBuf>);

impl FrameFiles {
    pub fn from_dir(dir: &Path) -> Result<Self> {
        Ok(Self(list_frames(dir)?))
    }
}

impl FrameSource for FrameFiles {
    fn len(&self) -> usize {
        self.0.len()
    }
    fn frame(&self, i: usize) -> Result<Image> {
        Image::load(&self.0[i])
    }
}

/// One registered edge converted to camera-frame quantities.
#[derive(Debug, Clone)]
struct Edge {
    reg: PairRegistration,
    /// Yaw change, degrees in `(-180, 180]`.
    theta: f64,
    /// Motion heading in the destination camera frame, degrees.
    heading: f64,
    t_vec: EnergyVector,
    s_vec: EnergyVector,
    epsilon: f64,
}

impl Edge {
    fn new(reg: PairRegistration, sigma_g: f64) -> Edge {
        let smooth = |v: &EnergyVector| if sigma_g > 0.0 { smooth_vector(v, sigma_g) } else { v.clone() };
        let epsilon = match reg.zoom_vector.axis() {
            Axis::LogScale { epsilon } => epsilon,
            Axis::Radius { .. } => unreachable!("zoom vectors use a log-scale axis"),
        };
        Edge {
            theta: wrap_degrees(reg.theta),
            // content moves opposite to the camera; image y points down
            heading: wrap_degrees(180.0 - reg.phi),
            t_vec: smooth(&reg.translation_vector),
            s_vec: smooth(&reg.zoom_vector),
            epsilon,
            reg,
        }
    }

    fn peak_length(&self) -> f64 {
        let (x, y) = self.reg.peak_translation;
        x.hypot(y)
    }

    fn peak_heading(&self) -> f64 {
        let (x, y) = self.reg.peak_translation;
        wrap_degrees(180.0 - y.atan2(x).to_degrees())
    }
}

/// Last moving edge; later edges are scaled against it.
#[derive(Debug, Clone)]
struct Reference {
    edge: Edge,
    /// Destination frame of the edge.
    frame: usize,
    motion: MotionState,
    theta: f64,
    heading: f64,
}

/// Motion applied for one step.
#[derive(Debug, Clone, Copy)]
struct Step {
    theta: f64,
    heading: f64,
    rho: f64,
    s: f64,
}

fn flag_frame(frame: usize, e: Error) -> Error {
    Error::Frame { frame, source: Box::new(e) }
}

struct Runner<'a> {
    cfg: &'a PipelineConfig,
    pose: Pose,
    entries: Vec<TrajectoryEntry>,
    steps: Vec<StepReport>,
    reference: Option<Reference>,
    /// Pixel length of the unit edge (single-peak mode).
    unit_pixels: Option<f64>,
    last_step: Step,
}

impl Runner<'_> {
    fn push(&mut self, frame: usize, step: Step, mut report: StepReport) {
        // the heading is relative to the new yaw: prev.yaw + theta + heading
        self.pose = accumulate_pose(&self.pose, step.theta, step.theta + step.heading, step.rho, step.s);
        self.last_step = step;
        report.frame = frame;
        report.theta = step.theta;
        report.phi = step.theta + step.heading;
        report.rho = step.rho;
        report.s = step.s;
        self.entries.push(TrajectoryEntry { frame, pose: self.pose, flagged: report.flagged });
        self.steps.push(report);
    }

    /// Motion of a single-peak edge.
    fn fmt_step(&mut self, edge: &Edge) -> Step {
        let len = edge.peak_length();
        let moving = len >= self.cfg.registration.static_radius;
        if moving && self.unit_pixels.is_none() {
            self.unit_pixels = Some(len);
        }
        let rho = match (moving, self.unit_pixels) {
            (true, Some(unit)) => len / unit,
            _ => 0.0,
        };
        Step {
            theta: wrap_degrees(edge.reg.peak_theta),
            heading: edge.peak_heading(),
            rho,
            s: edge.reg.dominant_zoom,
        }
    }

    /// Motion of an energy-vector edge `b -> c`, with `ac` the long edge.
    fn efmt_step(
        &mut self,
        c: usize,
        edge: Edge,
        long: Option<Result<Edge>>,
        report: &mut StepReport,
    ) -> Result<Step> {
        if edge.reg.is_static {
            report.is_static = true;
            return Ok(Step { theta: edge.theta, heading: edge.heading, rho: 0.0, s: 1.0 });
        }
        let Some(reference) = self.reference.as_ref() else {
            let step = Step { theta: edge.theta, heading: edge.heading, rho: 1.0, s: 1.0 };
            self.reference = Some(Reference {
                theta: edge.theta,
                heading: edge.heading,
                edge,
                frame: c,
                motion: MotionState::UNIT,
            });
            return Ok(step);
        };
        let mc = &self.cfg.matching;
        let lt = match_translation(&reference.edge.t_vec, &edge.t_vec, mc)?;
        // zoom vectors grow with zoom; the update expects the opposite axis
        let ls = match_scale(&reference.edge.s_vec, &edge.s_vec, mc, edge.epsilon)?;
        let (mut theta, mut heading) = (edge.theta, edge.heading);
        let (mut lambda_t, mut lambda_s) = (lt.lambda, -ls.lambda);

        let adjacent = reference.frame + 1 == c;
        if let (Mode::Oefmt, true, Some(long)) = (self.cfg.mode, adjacent, long) {
            let long = long?;
            let lt02 = match_translation(&reference.edge.t_vec, &long.t_vec, mc)?;
            let ls02 = match_scale(&reference.edge.s_vec, &long.s_vec, mc, edge.epsilon)?;
            let measured = TripletState {
                theta01: reference.theta,
                phi01: reference.heading,
                theta12: theta,
                phi12: heading,
                theta02: long.theta,
                phi02: long.heading,
                lambda_t12: lambda_t,
                lambda_t02: lt02.lambda,
                lambda_s12: lambda_s,
                lambda_s02: -ls02.lambda,
                rho01: 1.0,
            };
            let sigmas = TripletSigmas {
                theta12: edge.reg.sigma_theta,
                phi12: edge.reg.sigma_phi,
                theta02: long.reg.sigma_theta,
                phi02: long.reg.sigma_phi,
                lambda_t12: lt.sigma_lambda,
                lambda_t02: lt02.sigma_lambda,
                lambda_s12: ls.sigma_lambda,
                lambda_s02: ls02.sigma_lambda,
            };
            let problem = TripletProblem { measured, sigmas, epsilon: edge.epsilon };
            match optimize_triplet(&problem, &self.cfg.optimizer) {
                // a loop closed by reversing an edge is not a usable refinement
                Ok(est) if est.state.lambda_t12 <= 0.0 || est.state.lambda_t02 <= 0.0 => {
                    log::warn!("frame {c}: refined translation ratio not positive; keeping unrefined factors")
                }
                Ok(est) => {
                    theta = wrap_degrees(est.state.theta12);
                    heading = wrap_degrees(est.state.phi12);
                    lambda_t = est.state.lambda_t12;
                    lambda_s = est.state.lambda_s12;
                    report.optimized = true;
                    report.residual_before = est.residual_before;
                    report.residual_after = est.residual_after;
                }
                Err(e) => log::warn!("frame {c}: {e}; keeping unrefined factors"),
            }
        }
        report.lambda_t = lambda_t;
        report.lambda_s = lambda_s;
        let motion = reference.motion.advance(lambda_t, lambda_s, edge.epsilon);
        let step = Step { theta, heading, rho: motion.rho, s: motion.s };
        self.reference = Some(Reference { edge, frame: c, motion, theta, heading });
        Ok(step)
    }
}

/// Runs the odometry over all frames of `frames`.
pub fn process_sequence<S: FrameSource + ?Sized>(frames: &S, cfg: &PipelineConfig) -> Result<Trajectory> {
    let n = frames.len();
    if n < 3 {
        return Err(Error::InputDomain(format!("need at least 3 frames, got {n}")));
    }
    let mut runner = Runner {
        cfg,
        pose: Pose::ORIGIN,
        entries: vec![TrajectoryEntry { frame: 0, pose: Pose::ORIGIN, flagged: false }],
        steps: Vec::new(),
        reference: None,
        unit_pixels: None,
        last_step: Step { theta: 0.0, heading: 0.0, rho: 0.0, s: 1.0 },
    };
    let sigma_g = cfg.matching.smoothing_sigma;
    let register = |a: &Image, b: &Image| -> Result<Edge> {
        Ok(Edge::new(register_pair(a, b, &cfg.registration)?, sigma_g))
    };

    // frames i-2, i-1 kept for the short and long edges
    let mut window: Vec<Image> = vec![frames.frame(0).map_err(|e| flag_frame(0, e))?];
    let dims = window[0].dims();
    for c in 1..n {
        let img = frames.frame(c).map_err(|e| flag_frame(c, e))?;
        if img.dims() != dims {
            return Err(flag_frame(
                c,
                Error::InputDomain(format!("frame size {:?} differs from {:?}", img.dims(), dims)),
            ));
        }
        let prev = window.last().expect("window holds the previous frame");
        let want_long = cfg.mode == Mode::Oefmt && window.len() == 2;
        let (short, long) = if want_long {
            let first = &window[0];
            std::thread::scope(|s| {
                let h = s.spawn(|| register(first, &img));
                let short = register(prev, &img);
                (short, Some(h.join().expect("registration thread")))
            })
        } else {
            (register(prev, &img), None)
        };

        let mut report = StepReport::default();
        let outcome = short.and_then(|edge| match cfg.mode {
            Mode::Fmt => Ok(runner.fmt_step(&edge)),
            _ => runner.efmt_step(c, edge, long, &mut report),
        });
        match outcome {
            Ok(step) => runner.push(c, step, report),
            Err(e) if cfg.strict => return Err(flag_frame(c, e)),
            Err(e) => {
                log::warn!("frame {c}: {e}; carrying the previous motion forward");
                report.flagged = true;
                let step = runner.last_step;
                runner.push(c, step, report);
            }
        }

        window.push(img);
        if window.len() > 2 {
            window.remove(0);
        }
    }
    Ok(Trajectory { entries: runner.entries, steps: runner.steps, config: Some(*cfg) })
}

/// Writes the trajectory CSV and, next to it, the run manifest.
pub fn write_run(traj: &Trajectory, out: &Path) -> Result<PathBuf> {
    traj.write_csv(out)?;
    let manifest = out.with_extension("manifest");
    let cfg = traj.config.unwrap_or_default();
    fs::write(&manifest, cfg.to_toml()).map_err(|e| Error::io(&manifest, e))?;
    Ok(manifest)
}
