//! Two-image registration: rotation, zoom energy vector, translation
//! direction and translation energy vector.
//!
//! Rotation and zoom come from phase correlation of the log-polar
//! magnitude spectra. The first image is then re-rotated and re-zoomed at
//! the dominant zoom only, phase correlated against the second, and the
//! translation PSD is read along polar rays to obtain the direction and a
//! radius profile with one peak per visible depth.

use serde::{Deserialize, Serialize};

use crate::energy::{fuse_energy_vector, Axis, EnergyVector, RowTopology, DEFAULT_BLOCK_RADIUS};
use crate::error::{Error, Result, Stage};
use crate::fft::{self, Direction, C64};
use crate::image::{Grid, Image};
use crate::spectral::{
    self, apply_window, hann_window, parabolic_offset, phase_correlate, preprocess_spectrum,
    remap_translation_psd_with, to_log_polar, PhaseShiftDiagram, CROSS_POWER_FLOOR,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegistrationConfig {
    /// Half-height of the row block fused into an energy vector.
    pub block_radius: usize,
    /// Direction bins of the polar translation grid.
    pub translation_angles: usize,
    /// Subtract the median correlation level of the translation PSD before
    /// reading it along rays.
    pub remove_psd_floor: bool,
    /// Gaussian blur (pixels) applied to the translation PSD before the
    /// polar remap; 0 disables.
    pub psd_blur: f64,
    /// Translations whose dominant radius is below this many pixels are
    /// treated as no motion; their direction gets a flat uncertainty.
    pub static_radius: f64,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            block_radius: DEFAULT_BLOCK_RADIUS,
            translation_angles: spectral::DEFAULT_TRANSLATION_ANGLES,
            remove_psd_floor: true,
            psd_blur: 0.0,
            static_radius: 1.5,
        }
    }
}

/// Direction uncertainty reported for (near) zero translation, degrees.
pub const STATIC_SIGMA_PHI: f64 = 180.0;

#[derive(Debug, Clone, PartialEq)]
pub struct PairRegistration {
    /// Rotation of the second image relative to the first, degrees in `[0, 360)`.
    pub theta: f64,
    pub sigma_theta: f64,
    /// Direction of the content displacement in image axes (`+x` towards
    /// `+y`, rows down), degrees in `[0, 360)`.
    pub phi: f64,
    pub sigma_phi: f64,
    /// Zoom energy vector; column `len/2` is zoom 1.
    pub zoom_vector: EnergyVector,
    /// Translation energy vector; column `j` is a displacement of `j` pixels.
    pub translation_vector: EnergyVector,
    /// Peak energy over total energy of the translation PSD.
    pub quality: f64,
    pub dominant_zoom: f64,
    /// Single-peak rotation estimate (strongest bin), degrees in `[0, 360)`.
    pub peak_theta: f64,
    /// Single-peak translation estimate (strongest PSD bin, sub-pixel), pixels.
    pub peak_translation: (f64, f64),
    /// True when the translation is below the static radius.
    pub is_static: bool,
}

impl PairRegistration {
    /// Radius (pixels) of the strongest bin of the translation vector.
    pub fn dominant_radius(&self) -> f64 {
        peak_position(self.translation_vector.values())
    }
}

/// Argmax refined by a 3-point parabola.
pub(crate) fn peak_position(values: &[f64]) -> f64 {
    let j = crate::energy::argmax(values);
    if j == 0 || j + 1 >= values.len() {
        return j as f64;
    }
    j as f64 + parabolic_offset(values[j - 1], values[j], values[j + 1])
}

/// Zoom at the strongest column of a log-scale energy vector.
pub fn dominant_zoom(s: &EnergyVector) -> Result<f64> {
    let Axis::LogScale { epsilon } = s.axis() else {
        return Err(Error::Contract("dominant_zoom needs a log-scale vector".into()));
    };
    let center = (s.len() / 2) as f64;
    Ok(epsilon.powf(peak_position(s.values()) - center))
}

/// Intermediate surfaces of one registration, for debugging dumps.
#[derive(Debug, Clone)]
pub struct RegistrationTrace {
    pub rotation_scale_psd: PhaseShiftDiagram,
    pub translation_psd: PhaseShiftDiagram,
    pub polar_translation: Grid,
}

pub fn register_pair(a: &Image, b: &Image, cfg: &RegistrationConfig) -> Result<PairRegistration> {
    register_pair_traced(a, b, cfg).map(|(r, _)| r)
}

fn wrap360(deg: f64) -> f64 {
    let w = deg.rem_euclid(360.0);
    if w >= 360.0 {
        0.0
    } else {
        w
    }
}

/// Intensity spread below which an image carries no usable spectrum.
const MIN_TEXTURE_STD: f64 = 1e-6;

fn is_featureless(img: &Image) -> bool {
    let d = img.grid().data();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    var.sqrt() < MIN_TEXTURE_STD
}

fn angle_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

fn mirror_about_center(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let c = n / 2;
    (0..n).map(|j| values[(2 * c + n - j) % n]).collect()
}

fn gaussian_blur(grid: &Grid, sigma: f64) -> Grid {
    let k = crate::energy::gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (w, h) = grid.dims();
    let horiz = Grid::from_fn(w, h, |x, y| {
        k.iter()
            .enumerate()
            .map(|(t, kv)| kv * grid.get((x as isize + t as isize - r).rem_euclid(w as isize) as usize, y))
            .sum()
    });
    Grid::from_fn(w, h, |x, y| {
        k.iter()
            .enumerate()
            .map(|(t, kv)| kv * horiz.get(x, (y as isize + t as isize - r).rem_euclid(h as isize) as usize))
            .sum()
    })
}

fn remove_floor(grid: &Grid) -> Grid {
    let mut v = grid.data().to_vec();
    let mid = v.len() / 2;
    let (_, median, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    let floor = *median;
    grid.map(|x| (x - floor).max(0.0))
}

/// Phase correlation against a precomputed spectrum of the second input.
fn correlate_with(fa: &[C64], fb: &[C64], w: usize, h: usize) -> PhaseShiftDiagram {
    let mut cross: Vec<C64> = fb
        .iter()
        .zip(fa)
        .map(|(pb, pa)| {
            let c = pb * pa.conj();
            c / c.norm().max(CROSS_POWER_FLOOR)
        })
        .collect();
    fft::fft2(&mut cross, w, h, Direction::Inverse);
    let mag = Grid::from_vec(w, h, cross.iter().map(|c| c.norm()).collect()).expect("dims");
    PhaseShiftDiagram::from_grid(fft::fftshift(&mag))
}

pub fn register_pair_traced(
    a: &Image,
    b: &Image,
    cfg: &RegistrationConfig,
) -> Result<(PairRegistration, RegistrationTrace)> {
    if a.dims() != b.dims() {
        return Err(Error::Contract(format!(
            "register_pair: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    for img in [a, b] {
        if is_featureless(img) {
            return Err(Error::Registration {
                stage: Stage::RotationScale,
                source: Box::new(Error::InputDomain("image has no texture".into())),
            });
        }
    }
    let (w, h) = a.dims();

    // rotation and zoom
    let lp_a = to_log_polar(&preprocess_spectrum(a));
    let lp_b = to_log_polar(&preprocess_spectrum(b));
    let rs_psd = phase_correlate(lp_a.grid(), lp_b.grid())?;
    let epsilon = lp_a.epsilon();
    let rs = fuse_energy_vector(
        rs_psd.grid(),
        cfg.block_radius,
        RowTopology::Circular,
        Axis::LogScale { epsilon },
    )
    .map_err(|e| Error::Registration {
        stage: Stage::RotationScale,
        source: Box::new(e),
    })?;
    let deg_per_row = lp_a.degrees_per_row();
    let center_row = (lp_a.n_angle() / 2) as f64;
    let theta0 = ((rs.peak_row_mu - center_row) * deg_per_row).rem_euclid(180.0);
    let sigma_theta = rs.sigma * deg_per_row;
    let zoom_vector = rs
        .vector
        .with_values(mirror_about_center(rs.vector.values()));
    let zoom = dominant_zoom(&zoom_vector)?.clamp(spectral::MIN_ZOOM, spectral::MAX_ZOOM);
    let (_, peak_row, _) = rs_psd.grid().argmax();
    let peak_theta0 = ((peak_row as f64 - center_row) * deg_per_row).rem_euclid(180.0);

    // translation, resolving the 180 degree ambiguity by peak strength
    let window = hann_window(w, h);
    let fb = fft::forward_real(&apply_window(b.grid(), &window));
    let mut best: Option<(f64, PhaseShiftDiagram)> = None;
    for candidate in [theta0, theta0 + 180.0] {
        let warped = spectral::warp_grid(a.grid(), candidate, zoom);
        let fa = fft::forward_real(&apply_window(&warped, &window));
        let psd = correlate_with(&fa, &fb, w, h);
        let better = match &best {
            Some((_, prev)) => psd.peak().2 > prev.peak().2,
            None => true,
        };
        if better {
            best = Some((candidate, psd));
        }
    }
    let (theta, t_psd) = best.expect("two candidates evaluated");
    // the strongest row carries the same 180 degree ambiguity
    let peak_theta = [peak_theta0, peak_theta0 + 180.0]
        .into_iter()
        .map(wrap360)
        .min_by(|a, b| angle_gap(*a, theta).total_cmp(&angle_gap(*b, theta)))
        .expect("two candidates");

    let mut ray_source = t_psd.grid().clone();
    if cfg.remove_psd_floor {
        ray_source = remove_floor(&ray_source);
    }
    if cfg.psd_blur > 0.0 {
        ray_source = gaussian_blur(&ray_source, cfg.psd_blur);
    }
    let polar = remap_translation_psd_with(
        &PhaseShiftDiagram::from_grid(ray_source),
        cfg.translation_angles,
        w.min(h) / 2,
    );
    let tr = fuse_energy_vector(
        polar.grid(),
        cfg.block_radius,
        RowTopology::Circular,
        Axis::Radius { pixels_per_bin: 1.0 },
    )
    .map_err(|e| Error::Registration {
        stage: Stage::Translation,
        source: Box::new(e),
    })?;
    let phi = wrap360(tr.peak_row_mu * polar.degrees_per_row());
    let translation_vector = tr.vector;
    let radius = peak_position(translation_vector.values());
    let is_static = radius < cfg.static_radius;
    let sigma_phi = if is_static {
        STATIC_SIGMA_PHI
    } else {
        tr.sigma * polar.degrees_per_row()
    };
    let (px, py, _) = t_psd.peak_subpixel();

    let reg = PairRegistration {
        theta: wrap360(theta),
        sigma_theta,
        phi,
        sigma_phi,
        zoom_vector,
        translation_vector,
        quality: t_psd.peak_ratio(),
        dominant_zoom: zoom,
        peak_theta,
        peak_translation: (px, py),
        is_static,
    };
    let trace = RegistrationTrace {
        rotation_scale_psd: rs_psd,
        translation_psd: t_psd,
        polar_translation: polar.grid().clone(),
    };
    Ok((reg, trace))
}
