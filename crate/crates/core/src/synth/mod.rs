//! Procedural multi-depth scenes rendered by a down-looking pinhole camera.
//!
//! World frame: `+x` east, `+y` north, `+z` up. Planes lie below the camera
//! track plane `z = 0`; a plane with depth `d` sits at `z = -d` (at its
//! reference point, for inclined planes). The camera looks along `-z`; at
//! yaw 0 the image `x` axis points to `+x` and the image `y` axis (rows,
//! downwards) points to `-y`.

pub mod texture;

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Grid, Image};
use texture::TextureParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }

    fn center_x(&self) -> f64 {
        0.5 * (self.x_min + self.x_max)
    }
}

/// One textured depth layer, made of one or more rectangular blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub name: String,
    /// Distance below the camera plane at `reference_x`, meters.
    pub depth: f64,
    /// Blocks making up the plane; empty means unbounded.
    #[serde(default)]
    pub blocks: Vec<Rect>,
    /// Tilt about the `y` axis, degrees; the surface rises towards `+x`.
    #[serde(default)]
    pub inclination: f64,
    /// `x` coordinate where the surface sits exactly at `depth`.
    #[serde(default)]
    pub reference_x: f64,
    pub texture: TextureParams,
    pub seed: u64,
}

impl Plane {
    fn slope(&self) -> f64 {
        self.inclination.to_radians().tan()
    }

    /// Surface height at `x`.
    pub fn z_at(&self, x: f64) -> f64 {
        -self.depth + self.slope() * (x - self.reference_x)
    }

    /// Ray parameter of the hit, if the ray meets this plane inside a block.
    fn intersect(&self, origin: [f64; 3], dir: [f64; 3]) -> Option<(f64, f64, f64)> {
        let m = self.slope();
        let denom = dir[2] - m * dir[0];
        if denom.abs() < 1e-12 {
            return None;
        }
        let t = (-self.depth + m * (origin[0] - self.reference_x) - origin[2]) / denom;
        if t <= 0.0 {
            return None;
        }
        let x = origin[0] + t * dir[0];
        let y = origin[1] + t * dir[1];
        if self.blocks.is_empty() || self.blocks.iter().any(|b| b.contains(x, y)) {
            Some((t, x, y))
        } else {
            None
        }
    }

    fn shade(&self, x: f64, y: f64, seed_offset: u64) -> f64 {
        let cos = self.inclination.to_radians().cos();
        let u = self.reference_x + (x - self.reference_x) / cos;
        self.texture.sample(u, y, self.seed.wrapping_add(seed_offset))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub planes: Vec<Plane>,
    /// Added to every plane seed; lets one layout produce distinct textures.
    #[serde(default)]
    pub seed: u64,
}

pub const NEAR_PLANE_INCLINATION: f64 = 6.0;

impl SceneSpec {
    /// Background, a far plane of two blocks and an inclined near plane.
    /// Sized for the desk-scale tracks below.
    pub fn desk() -> Self {
        let background = Plane {
            name: "background".into(),
            depth: 30.0,
            blocks: Vec::new(),
            inclination: 0.0,
            reference_x: 0.0,
            texture: TextureParams {
                cell: 0.9,
                octaves: 3,
                persistence: 0.55,
                block: 6.0,
                block_weight: 0.3,
                seam: 0.05,
                aspect: 1.7,
                angle: 17.0,
            },
            seed: 11,
        };
        let far = Plane {
            name: "far".into(),
            depth: 24.0,
            blocks: vec![
                Rect {
                    x_min: -45.0,
                    x_max: -4.0,
                    y_min: -8.0,
                    y_max: 45.0,
                },
                Rect {
                    x_min: 8.0,
                    x_max: 45.0,
                    y_min: 10.0,
                    y_max: 45.0,
                },
            ],
            inclination: 0.0,
            reference_x: 0.0,
            texture: TextureParams {
                cell: 0.7,
                octaves: 3,
                persistence: 0.5,
                block: 4.0,
                block_weight: 0.4,
                seam: 0.07,
                aspect: 0.6,
                angle: -28.0,
            },
            seed: 23,
        };
        let near_blocks = Rect {
            x_min: 0.0,
            x_max: 26.0,
            y_min: -34.0,
            y_max: -2.0,
        };
        let near = Plane {
            name: "near".into(),
            depth: 17.0,
            reference_x: near_blocks.center_x(),
            blocks: vec![near_blocks],
            inclination: NEAR_PLANE_INCLINATION,
            texture: TextureParams {
                cell: 0.5,
                octaves: 3,
                persistence: 0.45,
                block: 3.0,
                block_weight: 0.35,
                seam: 0.08,
                aspect: 1.45,
                angle: 41.0,
            },
            seed: 37,
        };
        SceneSpec {
            planes: vec![background, far, near],
            seed: 0,
        }
    }

    /// Same layout with every length multiplied by `k` (depths included).
    pub fn scaled(&self, k: f64) -> Self {
        let mut out = self.clone();
        for p in &mut out.planes {
            p.depth *= k;
            p.reference_x *= k;
            for b in &mut p.blocks {
                b.x_min *= k;
                b.x_max *= k;
                b.y_min *= k;
                b.y_max *= k;
            }
            p.texture.cell *= k;
            p.texture.block *= k;
        }
        out
    }

    /// Desk layout scaled up for the long (hundreds of meters) tracks.
    pub fn large() -> Self {
        Self::desk().scaled(LARGE_SCALE)
    }

    pub fn single_plane(depth: f64, seed: u64) -> Self {
        let mut bg = Self::desk().planes.remove(0);
        bg.depth = depth;
        bg.seed = seed;
        SceneSpec {
            planes: vec![bg],
            seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.planes.is_empty() {
            return Err(Error::SceneCoverage("scene has no planes".into()));
        }
        for p in &self.planes {
            if !(p.depth > 0.0) || !p.inclination.is_finite() || p.inclination.abs() >= 80.0 {
                return Err(Error::Contract(format!(
                    "plane {}: depth {} inclination {}",
                    p.name, p.depth, p.inclination
                )));
            }
        }
        Ok(())
    }
}

/// Ratio between the large and desk-scale scene layouts.
pub const LARGE_SCALE: f64 = 5.48;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackKind {
    Circle,
    Analemma,
    Line,
}

impl std::str::FromStr for TrackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "circle" => Ok(TrackKind::Circle),
            "analemma" => Ok(TrackKind::Analemma),
            "line" => Ok(TrackKind::Line),
            other => Err(Error::InputDomain(format!("unknown track kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackSpec {
    pub kind: TrackKind,
    /// Total path length in meters.
    pub length: f64,
    pub frame_count: usize,
    /// Camera `z`, meters; planes are measured from `z = 0`.
    #[serde(default)]
    pub height: f64,
    pub center_x: f64,
    pub center_y: f64,
    /// Direction of travel for line tracks, degrees from `+x`.
    #[serde(default)]
    pub direction: f64,
    #[serde(default = "default_true")]
    pub constant_speed: bool,
    /// Turn the camera to face along the track instead of holding yaw 0.
    #[serde(default)]
    pub heading_along_track: bool,
}

fn default_true() -> bool {
    true
}

impl TrackSpec {
    fn base(kind: TrackKind, length: f64, frame_count: usize) -> Self {
        TrackSpec {
            kind,
            length,
            frame_count,
            height: 0.0,
            center_x: 0.0,
            center_y: 0.0,
            direction: 0.0,
            constant_speed: true,
            heading_along_track: false,
        }
    }

    pub fn desk_circle() -> Self {
        Self::base(TrackKind::Circle, 89.6, 64)
    }

    pub fn desk_analemma() -> Self {
        Self::base(TrackKind::Analemma, 160.0, 96)
    }

    /// Straight run from open background onto the inclined near plane.
    pub fn desk_depth_crossing() -> Self {
        TrackSpec {
            center_x: -14.0,
            center_y: -20.0,
            ..Self::base(TrackKind::Line, 50.0, 48)
        }
    }

    pub fn large_circle() -> Self {
        Self::base(TrackKind::Circle, 491.0, 200)
    }

    pub fn large_analemma() -> Self {
        Self::base(TrackKind::Analemma, 880.0, 300)
    }

    fn validate(&self) -> Result<()> {
        if self.frame_count < 3 {
            return Err(Error::Contract(format!(
                "track needs at least 3 frames, got {}",
                self.frame_count
            )));
        }
        if !(self.length > 0.0) {
            return Err(Error::Contract(format!("track length {}", self.length)));
        }
        Ok(())
    }

    /// Arc-length distance covered at frame `i`.
    fn arc_at(&self, i: usize) -> f64 {
        match self.kind {
            TrackKind::Line => self.length * i as f64 / (self.frame_count - 1) as f64,
            TrackKind::Circle | TrackKind::Analemma => {
                self.length * i as f64 / self.frame_count as f64
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// Degrees, counter-clockwise from `+x`.
    pub yaw: f64,
}

/// Gerono lemniscate `x = a sin t, y = a sin t cos t` with `a = 1`.
fn gerono(t: f64) -> (f64, f64) {
    (t.sin(), t.sin() * t.cos())
}

fn gerono_tangent(t: f64) -> (f64, f64) {
    (t.cos(), (2.0 * t).cos())
}

/// Cumulative arc length table of the unit lemniscate over `[0, 2π]`.
struct ArcTable {
    t: Vec<f64>,
    s: Vec<f64>,
}

impl ArcTable {
    const SAMPLES: usize = 20_000;

    fn gerono() -> Self {
        let n = Self::SAMPLES;
        let mut t = Vec::with_capacity(n + 1);
        let mut s = Vec::with_capacity(n + 1);
        let mut acc = 0.0;
        let speed = |t: f64| {
            let (dx, dy) = gerono_tangent(t);
            (dx * dx + dy * dy).sqrt()
        };
        let h = 2.0 * PI / n as f64;
        for i in 0..=n {
            let ti = i as f64 * h;
            if i > 0 {
                // cumulative trapezoid on |c'(t)|
                acc += 0.5 * h * (speed(ti - h) + speed(ti));
            }
            t.push(ti);
            s.push(acc);
        }
        ArcTable { t, s }
    }

    fn total(&self) -> f64 {
        *self.s.last().unwrap()
    }

    fn param_at(&self, arc: f64) -> f64 {
        let arc = arc.clamp(0.0, self.total());
        let idx = self.s.partition_point(|&v| v < arc).clamp(1, self.s.len() - 1);
        let (s0, s1) = (self.s[idx - 1], self.s[idx]);
        let f = if s1 > s0 { (arc - s0) / (s1 - s0) } else { 0.0 };
        self.t[idx - 1] + f * (self.t[idx] - self.t[idx - 1])
    }
}

/// Camera pose at arc fraction `f` of the track (`f = 1` is the end point;
/// for closed tracks it coincides with `f = 0`).
pub fn track_pose_at_fraction(track: &TrackSpec, f: f64) -> CameraPose {
    let (x, y, heading) = match track.kind {
        TrackKind::Circle => {
            let r = track.length / (2.0 * PI);
            let a = 2.0 * PI * f - PI / 2.0;
            (r * a.cos(), r * a.sin(), a.to_degrees() + 90.0)
        }
        TrackKind::Analemma => {
            let table = ArcTable::gerono();
            let a = track.length / table.total();
            let t = if track.constant_speed {
                table.param_at(f * table.total())
            } else {
                2.0 * PI * f
            };
            let (x, y) = gerono(t);
            let (dx, dy) = gerono_tangent(t);
            (a * x, a * y, dy.atan2(dx).to_degrees())
        }
        TrackKind::Line => {
            let (sin, cos) = track.direction.to_radians().sin_cos();
            let s = track.length * (f - 0.5);
            (s * cos, s * sin, track.direction)
        }
    };
    let yaw = if track.heading_along_track {
        heading.rem_euclid(360.0)
    } else {
        0.0
    };
    CameraPose {
        x: track.center_x + x,
        y: track.center_y + y,
        z: track.height,
        yaw,
    }
}

pub fn track_pose(track: &TrackSpec, i: usize) -> Result<CameraPose> {
    track.validate()?;
    if i >= track.frame_count {
        return Err(Error::Contract(format!(
            "frame {i} outside track of {} frames",
            track.frame_count
        )));
    }
    Ok(track_pose_at_fraction(track, track.arc_at(i) / track.length))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    /// Principal point on the pixel-grid center; `fov` is the horizontal field of view in degrees.
    pub fn with_fov(width: usize, height: usize, fov: f64) -> Self {
        let focal = 0.5 * width as f64 / (0.5 * fov.to_radians()).tan();
        CameraIntrinsics {
            focal,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            width,
            height,
        }
    }

    pub fn desk() -> Self {
        Self::with_fov(256, 256, DEFAULT_FOV)
    }

    pub fn large() -> Self {
        Self::with_fov(512, 512, DEFAULT_FOV)
    }

    fn validate(&self) -> Result<()> {
        if !(self.focal > 0.0) || self.width == 0 || self.height == 0 {
            return Err(Error::Contract(format!("bad intrinsics {self:?}")));
        }
        Ok(())
    }
}

/// Horizontal field of view of the presets, degrees.
pub const DEFAULT_FOV: f64 = 60.4;

const SUPERSAMPLE: [(f64, f64); 4] = [(-0.25, -0.25), (0.25, -0.25), (-0.25, 0.25), (0.25, 0.25)];

pub fn render_frame(scene: &SceneSpec, pose: &CameraPose, k: &CameraIntrinsics) -> Result<Image> {
    scene.validate()?;
    k.validate()?;
    let (sin, cos) = pose.yaw.to_radians().sin_cos();
    let x_axis = [cos, sin, 0.0];
    let y_axis = [sin, -cos, 0.0];
    let origin = [pose.x, pose.y, pose.z];
    let mut grid = Grid::zeros(k.width, k.height);
    for py in 0..k.height {
        for px in 0..k.width {
            let mut acc = 0.0;
            for (ox, oy) in SUPERSAMPLE {
                let a = (px as f64 + ox - k.cx) / k.focal;
                let b = (py as f64 + oy - k.cy) / k.focal;
                let dir = [
                    a * x_axis[0] + b * y_axis[0],
                    a * x_axis[1] + b * y_axis[1],
                    -1.0,
                ];
                let hit = scene
                    .planes
                    .iter()
                    .filter_map(|p| p.intersect(origin, dir).map(|h| (h, p)))
                    .min_by(|a, b| a.0 .0.total_cmp(&b.0 .0));
                match hit {
                    Some(((_, x, y), plane)) => acc += plane.shade(x, y, scene.seed),
                    None => {
                        return Err(Error::SceneCoverage(format!(
                            "pixel ({px}, {py}) at pose ({:.3}, {:.3}, {:.3}) sees no plane",
                            pose.x, pose.y, pose.z
                        )))
                    }
                }
            }
            grid.set(px, py, acc / SUPERSAMPLE.len() as f64);
        }
    }
    Image::from_grid(grid)
}

/// Everything needed to regenerate a dataset bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub scene: SceneSpec,
    pub track: TrackSpec,
    pub camera: CameraIntrinsics,
}

impl DatasetSpec {
    pub fn desk_circle() -> Self {
        DatasetSpec {
            scene: SceneSpec::desk(),
            track: TrackSpec::desk_circle(),
            camera: CameraIntrinsics::desk(),
        }
    }

    pub fn desk_analemma() -> Self {
        DatasetSpec {
            track: TrackSpec::desk_analemma(),
            ..Self::desk_circle()
        }
    }

    pub fn desk_depth_crossing() -> Self {
        DatasetSpec {
            track: TrackSpec::desk_depth_crossing(),
            ..Self::desk_circle()
        }
    }

    pub fn large_circle() -> Self {
        DatasetSpec {
            scene: SceneSpec::large(),
            track: TrackSpec::large_circle(),
            camera: CameraIntrinsics::large(),
        }
    }

    pub fn large_analemma() -> Self {
        DatasetSpec {
            track: TrackSpec::large_analemma(),
            ..Self::large_circle()
        }
    }

    /// Named presets accepted by the `generate` command.
    pub fn preset(name: &str) -> Option<Self> {
        Some(match name {
            "desk" | "desk-circle" => Self::desk_circle(),
            "desk-analemma" => Self::desk_analemma(),
            "desk-crossing" => Self::desk_depth_crossing(),
            "large" | "large-circle" => Self::large_circle(),
            "large-analemma" => Self::large_analemma(),
            _ => return None,
        })
    }

    pub fn to_manifest(&self) -> String {
        toml::to_string(self).expect("dataset spec serializes")
    }

    pub fn from_manifest(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::parse(path, e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_manifest(&text, path)
    }

    pub fn render(&self, i: usize) -> Result<Image> {
        let pose = track_pose(&self.track, i)?;
        render_frame(&self.scene, &pose, &self.camera)
    }

    pub fn poses(&self) -> Result<Vec<CameraPose>> {
        (0..self.track.frame_count)
            .map(|i| track_pose(&self.track, i))
            .collect()
    }
}

pub const FRAMES_DIR: &str = "frames";
pub const GROUNDTRUTH_FILE: &str = "groundtruth.csv";
pub const MANIFEST_FILE: &str = "manifest";

/// Files written by [`generate_dataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub spec: DatasetSpec,
    pub frames: Vec<PathBuf>,
    pub groundtruth: PathBuf,
    pub manifest: PathBuf,
}

pub fn frame_file_name(i: usize) -> String {
    format!("{i:06}.png")
}

pub fn groundtruth_csv(poses: &[CameraPose]) -> String {
    let mut out = String::from("frame,x,y,z,yaw\n");
    for (i, p) in poses.iter().enumerate() {
        writeln!(out, "{i},{},{},{},{}", p.x, p.y, p.z, p.yaw).unwrap();
    }
    out
}

pub fn generate_dataset(spec: &DatasetSpec, out_dir: &Path) -> Result<DatasetManifest> {
    spec.track.validate()?;
    let frames_dir = out_dir.join(FRAMES_DIR);
    fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;
    let poses = spec.poses()?;
    let mut frames = Vec::with_capacity(poses.len());
    for (i, pose) in poses.iter().enumerate() {
        let img = render_frame(&spec.scene, pose, &spec.camera)?;
        let path = frames_dir.join(frame_file_name(i));
        img.save(&path)?;
        frames.push(path);
    }
    let groundtruth = out_dir.join(GROUNDTRUTH_FILE);
    fs::write(&groundtruth, groundtruth_csv(&poses)).map_err(|e| Error::io(&groundtruth, e))?;
    let manifest = out_dir.join(MANIFEST_FILE);
    fs::write(&manifest, spec.to_manifest()).map_err(|e| Error::io(&manifest, e))?;
    Ok(DatasetManifest {
        spec: spec.clone(),
        frames,
        groundtruth,
        manifest,
    })
}
