use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use spectral_vo::energy::{smooth_vector, Axis, EnergyVector};
use spectral_vo::eval::{render_curve_svg, AteReport};
use spectral_vo::matching::{match_scale, match_translation};
use spectral_vo::pipeline::{write_run, FrameFiles, FrameSource};
use spectral_vo::synth::{self, CameraIntrinsics, DatasetSpec, SceneSpec, TrackKind, TrackSpec};
use spectral_vo::{align_and_scale, ate, emit_plots, process_sequence, register_pair, Mode, PipelineConfig, Trajectory};

#[derive(Parser)]
#[command(name = "svo", version, about = "Spectral visual odometry for down-looking cameras")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset: frames, ground truth and manifest.
    Generate {
        /// `desk`, `large`, a scene TOML file or a dataset manifest.
        #[arg(long, default_value = "desk")]
        scene: String,
        #[arg(long, value_enum)]
        track: Option<Track>,
        #[arg(long)]
        frames: Option<usize>,
        /// Resolution as `WxH`.
        #[arg(long)]
        res: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate a trajectory from a directory of frames.
    Run {
        #[arg(long)]
        frames: PathBuf,
        /// Overrides the mode of the config file.
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Abort on the first failing frame instead of carrying motion forward.
        #[arg(long)]
        strict: bool,
        /// Also write per-step diagnostics (factors, loop residuals).
        #[arg(long)]
        steps: Option<PathBuf>,
    },
    /// Align a trajectory to ground truth and report the absolute trajectory error.
    Eval {
        #[arg(long)]
        traj: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Overlay trajectories in an SVG.
    Plot {
        #[arg(long, value_delimiter = ',', required = true)]
        traj: Vec<PathBuf>,
        /// Aligns every trajectory to it and adds it to the plot.
        #[arg(long)]
        gt: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export the matching error curve of the edge into `--frame`.
    Curve {
        #[arg(long)]
        frames: PathBuf,
        /// Destination frame; the edges (i-2, i-1) and (i-1, i) are matched.
        #[arg(long)]
        frame: usize,
        #[arg(long, value_enum, default_value = "translation")]
        factor: Factor,
        #[arg(long)]
        config: Option<PathBuf>,
        /// CSV output; an SVG is written next to it.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Track {
    Circle,
    Analemma,
    Line,
}

impl From<Track> for TrackKind {
    fn from(t: Track) -> Self {
        match t {
            Track::Circle => TrackKind::Circle,
            Track::Analemma => TrackKind::Analemma,
            Track::Line => TrackKind::Line,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Fmt,
    Efmt,
    Oefmt,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Fmt => Mode::Fmt,
            ModeArg::Efmt => Mode::Efmt,
            ModeArg::Oefmt => Mode::Oefmt,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Factor {
    Translation,
    Scale,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Generate { scene, track, frames, res, seed, out } => {
            let spec = dataset_spec(&scene, track, frames, res.as_deref(), seed)?;
            let m = synth::generate_dataset(&spec, &out)?;
            println!("wrote {} frames to {}", m.frames.len(), out.display());
        }
        Command::Run { frames, mode, config, out, strict, steps } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(m) = mode {
                cfg.mode = m.into();
            }
            cfg.strict |= strict;
            let source = FrameFiles::from_dir(&frames)?;
            let traj = process_sequence(&source, &cfg)?;
            let manifest = write_run(&traj, &out)?;
            if let Some(path) = steps {
                fs::write(&path, traj.steps_csv()).with_context(|| format!("writing {}", path.display()))?;
            }
            let flagged = traj.entries().iter().filter(|e| e.flagged).count();
            println!(
                "{}: {} poses ({} flagged), length {:.4}; manifest {}",
                cfg.mode,
                traj.len(),
                flagged,
                traj.length(),
                manifest.display()
            );
        }
        Command::Eval { traj, gt, out } => {
            let gt = Trajectory::read_csv(&gt)?;
            let report = evaluate(&Trajectory::read_csv(&traj)?, &gt)?;
            report.write_csv(&out)?;
            println!(
                "ATE over {} poses: max {:.6} mean {:.6} median {:.6} ({:.3}% of length)",
                report.n,
                report.max,
                report.mean,
                report.median,
                100.0 * report.mean / gt.length()
            );
        }
        Command::Plot { traj, gt, out } => {
            let gt = gt.map(|p| Trajectory::read_csv(&p)).transpose()?;
            let mut series = Vec::new();
            if let Some(g) = &gt {
                series.push(("ground truth".to_string(), g.clone()));
            }
            for path in &traj {
                let t = Trajectory::read_csv(path)?;
                let t = match &gt {
                    Some(g) => align_and_scale(&t, g)?,
                    None => t,
                };
                series.push((series_name(path), t));
            }
            let named: Vec<(&str, &Trajectory)> = series.iter().map(|(n, t)| (n.as_str(), t)).collect();
            let files = emit_plots(&named, gt.as_ref(), &out)?;
            for f in files {
                println!("wrote {}", f.display());
            }
        }
        Command::Curve { frames, frame, factor, config, out } => {
            let cfg = load_config(config.as_deref())?;
            let source = FrameFiles::from_dir(&frames)?;
            if frame < 2 || frame >= source.len() {
                bail!("--frame must lie in 2..{}", source.len());
            }
            let imgs = [frame - 2, frame - 1, frame]
                .map(|i| source.frame(i).with_context(|| format!("loading frame {i}")));
            let [a, b, c] = imgs;
            let (a, b, c) = (a?, b?, c?);
            let ab = register_pair(&a, &b, &cfg.registration)?;
            let bc = register_pair(&b, &c, &cfg.registration)?;
            let smooth = |v: &EnergyVector| match cfg.matching.smoothing_sigma {
                s if s > 0.0 => smooth_vector(v, s),
                _ => v.clone(),
            };
            let result = match factor {
                Factor::Translation => match_translation(
                    &smooth(&ab.translation_vector),
                    &smooth(&bc.translation_vector),
                    &cfg.matching,
                )?,
                Factor::Scale => {
                    let Axis::LogScale { epsilon } = bc.zoom_vector.axis() else {
                        bail!("zoom vector without a log-scale axis");
                    };
                    match_scale(&smooth(&ab.zoom_vector), &smooth(&bc.zoom_vector), &cfg.matching, epsilon)?
                }
            };
            fs::write(&out, result.to_csv()).with_context(|| format!("writing {}", out.display()))?;
            let svg = out.with_extension("svg");
            let curve = render_curve_svg(&result.candidates, &result.error_curve, result.index)?;
            fs::write(&svg, curve).with_context(|| format!("writing {}", svg.display()))?;
            println!("lambda {:.6} +- {:.6}; wrote {} and {}", result.lambda, result.sigma_lambda, out.display(), svg.display());
        }
    }
    Ok(())
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    Ok(match path {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    })
}

fn evaluate(traj: &Trajectory, gt: &Trajectory) -> Result<AteReport> {
    Ok(ate(&align_and_scale(traj, gt)?, gt)?)
}

fn series_name(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| path.display().to_string())
}

fn parse_res(s: &str) -> Result<(usize, usize)> {
    let (w, h) = s.split_once(['x', 'X']).context("resolution must look like 256x256")?;
    Ok((w.trim().parse().context("bad width")?, h.trim().parse().context("bad height")?))
}

fn preset(scene: &str, kind: TrackKind) -> Option<DatasetSpec> {
    let large = match scene {
        "desk" => false,
        "large" => true,
        _ => return None,
    };
    Some(match (kind, large) {
        (TrackKind::Circle, false) => DatasetSpec::desk_circle(),
        (TrackKind::Analemma, false) => DatasetSpec::desk_analemma(),
        (TrackKind::Line, false) => DatasetSpec::desk_depth_crossing(),
        (TrackKind::Circle, true) => DatasetSpec::large_circle(),
        (TrackKind::Analemma, true) => DatasetSpec::large_analemma(),
        (TrackKind::Line, true) => {
            let desk = TrackSpec::desk_depth_crossing();
            let k = synth::LARGE_SCALE;
            DatasetSpec {
                scene: SceneSpec::large(),
                track: TrackSpec {
                    length: desk.length * k,
                    center_x: desk.center_x * k,
                    center_y: desk.center_y * k,
                    height: desk.height * k,
                    ..desk
                },
                camera: CameraIntrinsics::large(),
            }
        }
    })
}

fn dataset_spec(
    scene: &str,
    track: Option<Track>,
    frames: Option<usize>,
    res: Option<&str>,
    seed: Option<u64>,
) -> Result<DatasetSpec> {
    let kind = track.map(TrackKind::from);
    let mut spec = match preset(scene, kind.unwrap_or(TrackKind::Circle)) {
        Some(spec) => spec,
        None => {
            let path = Path::new(scene);
            let text = fs::read_to_string(path).with_context(|| format!("reading scene {scene:?}"))?;
            match DatasetSpec::from_manifest(&text, path) {
                Ok(mut spec) => {
                    if let Some(k) = kind {
                        spec.track.kind = k;
                    }
                    spec
                }
                Err(_) => {
                    let planes: SceneSpec = toml::from_str(&text)
                        .with_context(|| format!("{scene:?} is neither a preset, a scene file nor a manifest"))?;
                    DatasetSpec { scene: planes, ..preset("desk", kind.unwrap_or(TrackKind::Circle)).expect("desk preset") }
                }
            }
        }
    };
    if let Some(n) = frames {
        spec.track.frame_count = n;
    }
    if let Some(r) = res {
        let (w, h) = parse_res(r)?;
        spec.camera = CameraIntrinsics::with_fov(w, h, synth::DEFAULT_FOV);
    }
    if let Some(s) = seed {
        spec.scene.seed = s;
    }
    Ok(spec)
}
