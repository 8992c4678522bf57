//! Frequency-domain front end and geometric resampling.
//!
//! Everything here is a pure function of its inputs. Correlation surfaces
//! and spectra are kept center-shifted: the zero frequency, or the zero
//! displacement, sits at `(width / 2, height / 2)`.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::fft::{self, Direction, C64};
use crate::image::{Grid, Image};

/// Guard for zero bins of the cross-power spectrum.
pub const CROSS_POWER_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpectrumOptions {
    pub window: bool,
    pub highpass: bool,
}

impl Default for SpectrumOptions {
    fn default() -> Self {
        Self {
            window: true,
            highpass: true,
        }
    }
}

/// Separable periodic Hann window.
pub fn hann_window(width: usize, height: usize) -> Grid {
    let wx: Vec<f64> = (0..width)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / width as f64).cos())
        .collect();
    let wy: Vec<f64> = (0..height)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / height as f64).cos())
        .collect();
    Grid::from_fn(width, height, |x, y| wx[x] * wy[y])
}

pub fn apply_window(grid: &Grid, window: &Grid) -> Grid {
    debug_assert_eq!(grid.dims(), window.dims());
    let data = grid
        .data()
        .iter()
        .zip(window.data())
        .map(|(a, b)| a * b)
        .collect();
    Grid::from_vec(grid.width(), grid.height(), data).expect("same dims")
}

/// `(1 - cos πu cos πv)(2 - cos πu cos πv)` on a center-shifted frequency grid,
/// with `u, v` the normalized frequencies in `[-0.5, 0.5)`.
pub fn highpass_filter(width: usize, height: usize) -> Grid {
    let cu: Vec<f64> = (0..width)
        .map(|x| (PI * (x as f64 - (width / 2) as f64) / width as f64).cos())
        .collect();
    let cv: Vec<f64> = (0..height)
        .map(|y| (PI * (y as f64 - (height / 2) as f64) / height as f64).cos())
        .collect();
    Grid::from_fn(width, height, |x, y| {
        let c = cu[x] * cv[y];
        (1.0 - c) * (2.0 - c)
    })
}

/// Windowed, high-passed, center-shifted FFT magnitude of an image.
pub fn preprocess_spectrum(img: &Image) -> Grid {
    preprocess_spectrum_with(img, SpectrumOptions::default())
}

pub fn preprocess_spectrum_with(img: &Image, opts: SpectrumOptions) -> Grid {
    let (w, h) = img.dims();
    let input = if opts.window {
        apply_window(img.grid(), &hann_window(w, h))
    } else {
        img.grid().clone()
    };
    let spectrum = fft::forward_real(&input);
    let mag = Grid::from_vec(w, h, spectrum.iter().map(|c| c.norm()).collect())
        .expect("same dims");
    let mag = fft::fftshift(&mag);
    if opts.highpass {
        apply_window(&mag, &highpass_filter(w, h))
    } else {
        mag
    }
}

/// Correlation surface produced by [`phase_correlate`].
///
/// Center-shifted: bin `(w/2 + dx, h/2 + dy)` holds the energy for a
/// displacement of `(dx, dy)` of the second input relative to the first.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseShiftDiagram(Grid);

impl PhaseShiftDiagram {
    /// Wraps a center-shifted, non-negative surface.
    pub fn from_grid(grid: Grid) -> Self {
        PhaseShiftDiagram(grid)
    }

    pub fn grid(&self) -> &Grid {
        &self.0
    }

    pub fn into_grid(self) -> Grid {
        self.0
    }

    pub fn center(&self) -> (usize, usize) {
        (self.0.width() / 2, self.0.height() / 2)
    }

    pub fn displacement_of(&self, x: usize, y: usize) -> (isize, isize) {
        let (cx, cy) = self.center();
        (x as isize - cx as isize, y as isize - cy as isize)
    }

    /// Integer displacement of the strongest bin and its energy.
    pub fn peak(&self) -> (isize, isize, f64) {
        let (x, y, v) = self.0.argmax();
        let (dx, dy) = self.displacement_of(x, y);
        (dx, dy, v)
    }

    /// Peak displacement refined by a separable 3-point parabola fit.
    pub fn peak_subpixel(&self) -> (f64, f64, f64) {
        let (x, y, v) = self.0.argmax();
        let (w, h) = self.0.dims();
        let at = |xx: isize, yy: isize| {
            self.0.get(
                xx.rem_euclid(w as isize) as usize,
                yy.rem_euclid(h as isize) as usize,
            )
        };
        let (xi, yi) = (x as isize, y as isize);
        let ox = parabolic_offset(at(xi - 1, yi), v, at(xi + 1, yi));
        let oy = parabolic_offset(at(xi, yi - 1), v, at(xi, yi + 1));
        let (dx, dy) = self.displacement_of(x, y);
        (dx as f64 + ox, dy as f64 + oy, v)
    }

    pub fn total_energy(&self) -> f64 {
        self.0.sum()
    }

    /// Peak energy over total energy, in `(0, 1]` for a non-empty surface.
    pub fn peak_ratio(&self) -> f64 {
        let total = self.total_energy();
        if total > 0.0 {
            self.0.argmax().2 / total
        } else {
            0.0
        }
    }
}

/// Vertex offset of the parabola through three equally spaced samples,
/// clamped to `[-0.5, 0.5]`.
pub fn parabolic_offset(left: f64, center: f64, right: f64) -> f64 {
    let denom = left - 2.0 * center + right;
    if denom.abs() < 1e-300 {
        return 0.0;
    }
    (0.5 * (left - right) / denom).clamp(-0.5, 0.5)
}

/// Normalized cross-power phase correlation of two equally sized grids.
pub fn phase_correlate(a: &Grid, b: &Grid) -> Result<PhaseShiftDiagram> {
    if a.dims() != b.dims() {
        return Err(Error::Contract(format!(
            "phase_correlate: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    let (w, h) = a.dims();
    let fa = fft::forward_real(a);
    let fb = fft::forward_real(b);
    let mut cross: Vec<C64> = fb
        .iter()
        .zip(&fa)
        .map(|(pb, pa)| {
            let c = pb * pa.conj();
            c / c.norm().max(CROSS_POWER_FLOOR)
        })
        .collect();
    fft::fft2(&mut cross, w, h, Direction::Inverse);
    let mag = Grid::from_vec(w, h, cross.iter().map(|c| c.norm()).collect())?;
    Ok(PhaseShiftDiagram(fft::fftshift(&mag)))
}

/// Magnitude spectrum resampled onto (angle, log-radius) axes.
#[derive(Debug, Clone, PartialEq)]
pub struct LogPolarGrid {
    grid: Grid,
    epsilon: f64,
}

impl LogPolarGrid {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Per-column radial growth factor.
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn n_angle(&self) -> usize {
        self.grid.height()
    }

    pub fn n_scale(&self) -> usize {
        self.grid.width()
    }

    /// Angular extent of one row, in degrees.
    pub fn degrees_per_row(&self) -> f64 {
        180.0 / self.n_angle() as f64
    }
}

/// `exp(ln(r_max) / n_scale)` with `r_max = min(w, h) / 2`.
pub fn log_polar_epsilon(width: usize, height: usize, n_scale: usize) -> f64 {
    let r_max = (width.min(height) / 2) as f64;
    (r_max.ln() / n_scale as f64).exp()
}

pub fn to_log_polar(mag: &Grid) -> LogPolarGrid {
    to_log_polar_with(mag, mag.height(), mag.width())
}

/// Row `i` samples angle `i · 180° / n_angle`, column `j` radius `ε^j`, around
/// the center bin. Samples falling off the grid are zero.
pub fn to_log_polar_with(mag: &Grid, n_angle: usize, n_scale: usize) -> LogPolarGrid {
    let epsilon = log_polar_epsilon(mag.width(), mag.height(), n_scale);
    let cx = (mag.width() / 2) as f64;
    let cy = (mag.height() / 2) as f64;
    let radii: Vec<f64> = (0..n_scale).map(|j| epsilon.powi(j as i32)).collect();
    let mut grid = Grid::zeros(n_scale, n_angle);
    for i in 0..n_angle {
        let (sin, cos) = (PI * i as f64 / n_angle as f64).sin_cos();
        for (j, &r) in radii.iter().enumerate() {
            grid.set(j, i, mag.bilinear(cx + r * cos, cy + r * sin).max(0.0));
        }
    }
    LogPolarGrid { grid, epsilon }
}

pub const MIN_ZOOM: f64 = 0.25;
pub const MAX_ZOOM: f64 = 4.0;

/// Rotates by `theta` degrees and zooms by `s` about the image center.
///
/// Positive angles turn `+x` towards `+y` (row-down image axes). Inverse
/// mapped with bilinear sampling; pixels mapping outside the source are 0.
pub fn warp_rotate_zoom(img: &Image, theta: f64, s: f64) -> Result<Image> {
    if !(MIN_ZOOM..=MAX_ZOOM).contains(&s) {
        return Err(Error::Contract(format!(
            "zoom {s} outside [{MIN_ZOOM}, {MAX_ZOOM}]"
        )));
    }
    if !theta.is_finite() {
        return Err(Error::Contract(format!("rotation {theta} is not finite")));
    }
    let grid = warp_grid(img.grid(), theta, s);
    Image::from_grid(grid)
}

pub(crate) fn warp_grid(src: &Grid, theta: f64, s: f64) -> Grid {
    let (w, h) = src.dims();
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let (sin, cos) = theta.to_radians().sin_cos();
    let max_x = (w - 1) as f64;
    let max_y = (h - 1) as f64;
    let snap = |v: f64, max: f64| {
        const TOL: f64 = 1e-9;
        if v < 0.0 && v > -TOL {
            0.0
        } else if v > max && v < max + TOL {
            max
        } else {
            v
        }
    };
    Grid::from_fn(w, h, |x, y| {
        let dx = x as f64 - cx;
        let dy = y as f64 - cy;
        // inverse of p = c + s R(theta) (q - c)
        let sx = cx + (cos * dx + sin * dy) / s;
        let sy = cy + (-sin * dx + cos * dy) / s;
        src.bilinear(snap(sx, max_x), snap(sy, max_y)).clamp(0.0, 1.0)
    })
}

/// Translation PSD resampled onto (direction, radius) axes.
///
/// Row `i` is direction `i · 360° / n_angle` measured from `+x` towards `+y`;
/// column `j` is a displacement of `j` PSD pixels, so column 0 is the
/// zero-translation bin.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarTranslationGrid(Grid);

impl PolarTranslationGrid {
    pub fn grid(&self) -> &Grid {
        &self.0
    }

    pub fn n_angle(&self) -> usize {
        self.0.height()
    }

    pub fn n_radius(&self) -> usize {
        self.0.width()
    }

    pub fn degrees_per_row(&self) -> f64 {
        360.0 / self.n_angle() as f64
    }
}

pub const DEFAULT_TRANSLATION_ANGLES: usize = 360;

pub fn remap_translation_psd(psd: &PhaseShiftDiagram) -> PolarTranslationGrid {
    let g = psd.grid();
    remap_translation_psd_with(psd, DEFAULT_TRANSLATION_ANGLES, g.width().min(g.height()) / 2)
}

pub fn remap_translation_psd_with(
    psd: &PhaseShiftDiagram,
    n_angle: usize,
    n_radius: usize,
) -> PolarTranslationGrid {
    let g = psd.grid();
    let (cx, cy) = psd.center();
    let (cx, cy) = (cx as f64, cy as f64);
    let mut out = Grid::zeros(n_radius, n_angle);
    for i in 0..n_angle {
        let (sin, cos) = (2.0 * PI * i as f64 / n_angle as f64).sin_cos();
        for j in 0..n_radius {
            let r = j as f64;
            out.set(j, i, g.bilinear(cx + r * cos, cy + r * sin).max(0.0));
        }
    }
    PolarTranslationGrid(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texture(w: usize, h: usize, seed: u64) -> Image {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data = (0..w * h).map(|_| rng.random::<f64>()).collect();
        Image::new(w, h, data).unwrap()
    }

    /// Direct double-sum DFT magnitude at one frequency bin (unshifted index).
    fn naive_dft_mag(g: &Grid, u: usize, v: usize) -> f64 {
        let (w, h) = g.dims();
        let mut acc = C64::new(0.0, 0.0);
        for y in 0..h {
            for x in 0..w {
                let phase = -2.0 * PI * ((u * x) as f64 / w as f64 + (v * y) as f64 / h as f64);
                acc += C64::from_polar(g.get(x, y), phase);
            }
        }
        acc.norm()
    }

    fn oracle_spectrum(img: &Image, u: usize, v: usize) -> f64 {
        // (u, v) index the center-shifted output
        let (w, h) = img.dims();
        let windowed = apply_window(img.grid(), &hann_window(w, h));
        let fu = (u + w - w / 2) % w;
        let fv = (v + h - h / 2) % h;
        let un = (u as f64 - (w / 2) as f64) / w as f64;
        let vn = (v as f64 - (h / 2) as f64) / h as f64;
        let c = (PI * un).cos() * (PI * vn).cos();
        naive_dft_mag(&windowed, fu, fv) * (1.0 - c) * (2.0 - c)
    }

    #[test]
    fn spectrum_matches_naive_dft_64() {
        let img = texture(64, 64, 3);
        let fast = preprocess_spectrum(&img);
        let scale = fast.data().iter().cloned().fold(0.0, f64::max);
        for v in 0..64 {
            for u in 0..64 {
                let want = oracle_spectrum(&img, u, v);
                let got = fast.get(u, v);
                assert!(
                    (got - want).abs() <= 1e-6 * want.max(1e-3 * scale),
                    "bin ({u},{v}): {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn spectrum_matches_naive_dft_128_sampled_bins() {
        let img = texture(128, 128, 4);
        let fast = preprocess_spectrum(&img);
        let scale = fast.data().iter().cloned().fold(0.0, f64::max);
        for k in 0..200 {
            let u = (k * 37 + 5) % 128;
            let v = (k * 53 + 11) % 128;
            let want = oracle_spectrum(&img, u, v);
            let got = fast.get(u, v);
            assert!((got - want).abs() <= 1e-6 * want.max(1e-3 * scale));
        }
    }

    #[test]
    fn constant_image_energy_only_at_dc() {
        let img = Image::new(64, 64, vec![0.7; 64 * 64]).unwrap();
        let raw = preprocess_spectrum_with(
            &img,
            SpectrumOptions {
                window: false,
                highpass: false,
            },
        );
        let dc = raw.get(32, 32);
        assert!((dc - 0.7 * 4096.0).abs() < 1e-9);
        let off_dc: f64 = raw.sum() - dc;
        assert!(off_dc.abs() < 1e-9);
        let filtered = preprocess_spectrum(&img);
        let max = filtered.data().iter().cloned().fold(0.0, f64::max);
        assert!(max < 1e-3 * dc, "max after high-pass {max}");
    }

    #[test]
    fn magnitude_is_shift_invariant_without_window() {
        let img = texture(64, 64, 9);
        let shifted = Image::from_grid(img.grid().roll(7, -3)).unwrap();
        let opts = SpectrumOptions {
            window: false,
            highpass: true,
        };
        let a = preprocess_spectrum_with(&img, opts);
        let b = preprocess_spectrum_with(&shifted, opts);
        let diff = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-9, "max diff {diff}");
    }

    #[test]
    fn self_correlation_peaks_at_center() {
        let img = texture(64, 64, 1);
        let psd = phase_correlate(img.grid(), img.grid()).unwrap();
        let (dx, dy, v) = psd.peak();
        assert_eq!((dx, dy), (0, 0));
        assert!(v / psd.total_energy() > 0.9);
    }

    #[test]
    fn integer_shift_lands_on_expected_bin() {
        let img = texture(64, 64, 2);
        let shifted = img.grid().roll(5, 3);
        let psd = phase_correlate(img.grid(), &shifted).unwrap();
        let (dx, dy, _) = psd.peak();
        assert_eq!((dx, dy), (5, 3));
        let (x, y, _) = psd.grid().argmax();
        assert_eq!((x, y), (32 + 5, 32 + 3));
    }

    #[test]
    fn mismatched_dims_is_contract_error() {
        let a = Grid::zeros(64, 64);
        let b = Grid::zeros(64, 32);
        assert!(matches!(phase_correlate(&a, &b), Err(Error::Contract(_))));
    }

    /// Shift by half a pixel using the Fourier shift theorem (band-limited oracle).
    fn fourier_shift(g: &Grid, sx: f64) -> Grid {
        let (w, h) = g.dims();
        let mut f = fft::forward_real(g);
        for v in 0..h {
            for u in 0..w {
                let k = if u <= w / 2 { u as f64 } else { u as f64 - w as f64 };
                let k = if u == w / 2 { 0.0 } else { k };
                f[v * w + u] *= C64::from_polar(1.0, -2.0 * PI * k * sx / w as f64);
            }
        }
        fft::fft2(&mut f, w, h, Direction::Inverse);
        Grid::from_vec(w, h, f.iter().map(|c| c.re).collect()).unwrap()
    }

    #[test]
    fn subpixel_shift_splits_between_neighbours() {
        let img = texture(64, 64, 5);
        let shifted = fourier_shift(img.grid(), 2.5);
        // brute-force circular cross-correlation oracle along x
        let brute = |d: isize| -> f64 {
            let (w, h) = img.dims();
            let mut acc = 0.0;
            for y in 0..h {
                for x in 0..w {
                    let sx = (x as isize + d).rem_euclid(w as isize) as usize;
                    acc += (img.get(x, y) - 0.5) * (shifted.get(sx, y) - 0.5);
                }
            }
            acc
        };
        let c2 = brute(2);
        let c3 = brute(3);
        assert!(c2 > brute(1) && c3 > brute(4));

        let psd = phase_correlate(img.grid(), &shifted).unwrap();
        let g = psd.grid();
        let mut bins: Vec<(usize, usize, f64)> = (0..g.height())
            .flat_map(|y| (0..g.width()).map(move |x| (x, y)))
            .map(|(x, y)| (x, y, g.get(x, y)))
            .collect();
        bins.sort_by(|a, b| b.2.total_cmp(&a.2));
        let mut top: Vec<isize> = bins[..2]
            .iter()
            .map(|&(x, y, _)| {
                let (dx, dy) = psd.displacement_of(x, y);
                assert_eq!(dy, 0);
                dx
            })
            .collect();
        top.sort();
        assert_eq!(top, vec![2, 3]);
        let ratio = bins[0].2 / bins[1].2;
        assert!(ratio < 1.2, "peak ratio {ratio}");
    }

    fn rings(w: usize, h: usize) -> Grid {
        let (cx, cy) = ((w / 2) as f64, (h / 2) as f64);
        Grid::from_fn(w, h, |x, y| {
            let r = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
            0.5 + 0.5 * (r * 0.4).cos()
        })
    }

    #[test]
    fn log_polar_of_rings_has_identical_rows() {
        let lp = to_log_polar(&rings(128, 128));
        let g = lp.grid();
        for i in 1..g.height() {
            for j in 0..g.width() {
                let radius = lp.epsilon().powi(j as i32);
                // bilinear error grows with ring frequency; compare where sampling is fine
                if radius < 1.5 {
                    continue;
                }
                assert!(
                    (g.get(j, i) - g.get(j, 0)).abs() < 5e-2,
                    "row {i} col {j}"
                );
            }
        }
        // smooth radial profile: rows identical to the stated tolerance
        let smooth = {
            let (cx, cy) = (64.0, 64.0);
            Grid::from_fn(128, 128, |x, y| {
                let r2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                (-r2 / 2000.0).exp()
            })
        };
        let lp = to_log_polar(&smooth);
        let g = lp.grid();
        for i in 1..g.height() {
            for j in 0..g.width() {
                assert!((g.get(j, i) - g.get(j, 0)).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn epsilon_definition() {
        let lp = to_log_polar(&Grid::zeros(256, 256));
        assert!((lp.epsilon() - (128f64.ln() / 256.0).exp()).abs() < 1e-15);
        assert!(lp.epsilon() > 1.0);
        assert_eq!(lp.n_angle(), 256);
        assert_eq!(lp.n_scale(), 256);
    }

    /// Broadband, point-symmetric field: the preprocessed spectrum of noise.
    fn spectrum_field(w: usize, h: usize) -> Grid {
        preprocess_spectrum(&texture(w, h, 31))
    }

    #[test]
    fn rotation_becomes_row_shift() {
        let base = spectrum_field(256, 256);
        let lp0 = to_log_polar(&base);
        for &deg in &[10.0f64, 33.0, 71.0] {
            // warp oracle: rotate the magnitude field about the center bin
            let rot = {
                let (sin, cos) = deg.to_radians().sin_cos();
                Grid::from_fn(256, 256, |x, y| {
                    let dx = x as f64 - 128.0;
                    let dy = y as f64 - 128.0;
                    base.bilinear(128.0 + cos * dx + sin * dy, 128.0 - sin * dx + cos * dy)
                })
            };
            let lp1 = to_log_polar(&rot);
            let psd = phase_correlate(lp0.grid(), lp1.grid()).unwrap();
            let (dx, dy, _) = psd.peak();
            let expected = deg / lp0.degrees_per_row();
            assert!((dy as f64 - expected).abs() <= 1.0, "{deg}: {dy} vs {expected}");
            assert!(dx.abs() <= 1);
        }
    }

    #[test]
    fn zoom_becomes_column_shift() {
        let base = spectrum_field(256, 256);
        let lp0 = to_log_polar(&base);
        for &k in &[-6i32, 5, 12] {
            let s = lp0.epsilon().powi(k);
            // magnitude zoomed by s: m1(r) = m0(r / s)
            let zoomed = Grid::from_fn(256, 256, |x, y| {
                base.bilinear(128.0 + (x as f64 - 128.0) / s, 128.0 + (y as f64 - 128.0) / s)
            });
            let lp1 = to_log_polar(&zoomed);
            let psd = phase_correlate(lp0.grid(), lp1.grid()).unwrap();
            let (dx, dy, _) = psd.peak();
            assert!((dx - k as isize).abs() <= 1, "k={k}: got {dx}");
            assert!(dy.abs() <= 1);
        }
    }

    #[test]
    fn warp_identity_is_exact() {
        let img = texture(64, 64, 6);
        assert_eq!(warp_rotate_zoom(&img, 0.0, 1.0).unwrap(), img);
    }

    #[test]
    fn warp_quarter_turn_matches_array_rotation() {
        let img = texture(64, 64, 7);
        let out = warp_rotate_zoom(&img, 90.0, 1.0).unwrap();
        for y in 0..64 {
            for x in 0..64 {
                let want = img.get(y, 63 - x);
                assert!((out.get(x, y) - want).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn warp_round_trip_psnr() {
        // smooth texture so bilinear resampling is near-lossless
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let base = Grid::from_fn(32, 32, |_, _| rng.random::<f64>());
        let img = Image::from_fn(128, 128, |x, y| {
            base.bilinear_wrapped(x as f64 / 4.0, y as f64 / 4.0)
        })
        .unwrap();
        let fwd = warp_rotate_zoom(&img, 23.0, 1.15).unwrap();
        let back = warp_rotate_zoom(&fwd, -23.0, 1.0 / 1.15).unwrap();
        let mut mse = 0.0;
        let mut n = 0.0;
        for y in 32..96 {
            for x in 32..96 {
                mse += (img.get(x, y) - back.get(x, y)).powi(2);
                n += 1.0;
            }
        }
        let psnr = 10.0 * (1.0 / (mse / n)).log10();
        assert!(psnr > 30.0, "psnr {psnr}");
    }

    #[test]
    fn warp_rejects_degenerate_zoom() {
        let img = texture(64, 64, 1);
        assert!(matches!(
            warp_rotate_zoom(&img, 0.0, 0.1),
            Err(Error::Contract(_))
        ));
        assert!(warp_rotate_zoom(&img, 0.0, 4.5).is_err());
    }

    fn psd_with_peaks(peaks: &[(isize, isize, f64)]) -> PhaseShiftDiagram {
        let mut g = Grid::zeros(128, 128);
        for &(dx, dy, v) in peaks {
            g.set((64 + dx) as usize, (64 + dy) as usize, v);
        }
        PhaseShiftDiagram(g)
    }

    #[test]
    fn polar_remap_axis_aligned_peak() {
        let polar = remap_translation_psd(&psd_with_peaks(&[(10, 0, 1.0)]));
        assert_eq!(polar.n_angle(), 360);
        assert_eq!(polar.n_radius(), 64);
        let (x, y, _) = polar.grid().argmax();
        assert_eq!((x, y), (10, 0));
    }

    #[test]
    fn polar_remap_two_depths_share_a_row() {
        let polar = remap_translation_psd(&psd_with_peaks(&[(10, 0, 1.0), (20, 0, 0.8)]));
        let row = polar.grid().row(0);
        assert_eq!(row[10], 1.0);
        assert_eq!(row[20], 0.8);
        let peaks: Vec<usize> = (1..row.len() - 1)
            .filter(|&j| row[j] > row[j - 1] && row[j] > row[j + 1])
            .collect();
        assert_eq!(peaks, vec![10, 20]);
    }

    #[test]
    fn polar_remap_of_centered_energy() {
        let polar = remap_translation_psd(&psd_with_peaks(&[(0, 0, 1.0)]));
        for i in 0..polar.n_angle() {
            let row = polar.grid().row(i);
            assert_eq!(row[0], 1.0);
            assert!(row[2..].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn resampling_preserves_non_negativity() {
        let img = texture(64, 64, 11);
        let mag = preprocess_spectrum(&img);
        assert!(mag.data().iter().all(|v| v.is_finite() && *v >= 0.0));
        let lp = to_log_polar(&mag);
        assert!(lp.grid().data().iter().all(|v| v.is_finite() && *v >= 0.0));
        let psd = phase_correlate(img.grid(), img.grid()).unwrap();
        let polar = remap_translation_psd(&psd);
        assert!(polar.grid().data().iter().all(|v| v.is_finite() && *v >= 0.0));
    }
}
