//! Seeded value noise with an overlaid block pattern.

use serde::{Deserialize, Serialize};

use crate::image::Image;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Uniform value in `[0, 1)` for an integer lattice point.
#[inline]
fn lattice(ix: i64, iy: i64, seed: u64) -> f64 {
    let h = mix64(
        seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
            ^ mix64((ix as u64).wrapping_add(0x632b_e59b_d9b4_e019))
            ^ mix64((iy as u64).wrapping_mul(0xd6e8_feb8_6659_fd93)),
    );
    (h >> 11) as f64 / (1u64 << 53) as f64
}

#[inline]
fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Single-octave value noise in `[0, 1)`; lattice spacing of one unit.
pub fn value_noise(x: f64, y: f64, seed: u64) -> f64 {
    let x0 = x.floor();
    let y0 = y.floor();
    let (ix, iy) = (x0 as i64, y0 as i64);
    let tx = smoothstep(x - x0);
    let ty = smoothstep(y - y0);
    let a = lattice(ix, iy, seed);
    let b = lattice(ix + 1, iy, seed);
    let c = lattice(ix, iy + 1, seed);
    let d = lattice(ix + 1, iy + 1, seed);
    let top = a + (b - a) * tx;
    let bottom = c + (d - c) * tx;
    top + (bottom - top) * ty
}

/// Parameters of one plane's surface pattern. Lengths are in plane units
/// (meters for scene planes, pixels for [`TextureParams::render_image`]).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TextureParams {
    /// Lattice spacing of the first noise octave.
    pub cell: f64,
    pub octaves: u32,
    /// Amplitude ratio between successive octaves.
    pub persistence: f64,
    /// Side of the square blocks; each block gets its own brightness.
    pub block: f64,
    /// Weight of the block brightness against the noise, in `[0, 1]`.
    pub block_weight: f64,
    /// Width of the dark seams between blocks, as a fraction of `block`.
    pub seam: f64,
    /// Block height over block width.
    #[serde(default = "unit_aspect")]
    pub aspect: f64,
    /// Rotation of the whole pattern, degrees.
    #[serde(default)]
    pub angle: f64,
}

fn unit_aspect() -> f64 {
    1.0
}

impl Default for TextureParams {
    fn default() -> Self {
        Self {
            cell: 4.0,
            octaves: 3,
            persistence: 0.5,
            block: 24.0,
            block_weight: 0.35,
            seam: 0.06,
            aspect: 1.0,
            angle: 0.0,
        }
    }
}

impl TextureParams {
    /// Intensity in `[0, 1]` at plane coordinates `(u, v)`.
    pub fn sample(&self, u: f64, v: f64, seed: u64) -> f64 {
        let (sin, cos) = self.angle.to_radians().sin_cos();
        let (u, v) = (cos * u + sin * v, cos * v - sin * u);
        let mut amp = 1.0;
        let mut freq = 1.0 / self.cell;
        let mut acc = 0.0;
        let mut norm = 0.0;
        for o in 0..self.octaves.max(1) {
            acc += amp * value_noise(u * freq, v * freq, seed.wrapping_add(o as u64 * 7919));
            norm += amp;
            amp *= self.persistence;
            freq *= 2.0;
        }
        let noise = acc / norm;

        let bu = u / self.block;
        let bv = v / (self.block * self.aspect);
        let block_val = lattice(
            bu.floor() as i64,
            bv.floor() as i64,
            seed ^ 0x5bd1_e995_1234_5678,
        );
        let mut val = (1.0 - self.block_weight) * noise + self.block_weight * block_val;
        let fu = bu - bu.floor();
        let fv = bv - bv.floor();
        if fu < self.seam || fv < self.seam {
            val *= 0.35;
        }
        val.clamp(0.0, 1.0)
    }

    /// Renders the pattern directly in pixel units, for tests and demos.
    pub fn render_image(&self, width: usize, height: usize, seed: u64) -> Image {
        Image::from_fn(width, height, |x, y| {
            self.sample(x as f64 + 0.5, y as f64 + 0.5, seed)
        })
        .expect("texture values are in [0, 1]")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_bounded() {
        let t = TextureParams::default();
        for i in 0..500 {
            let (u, v) = (i as f64 * 0.731 - 40.0, i as f64 * 1.37 - 90.0);
            let a = t.sample(u, v, 42);
            assert_eq!(a, t.sample(u, v, 42));
            assert!((0.0..=1.0).contains(&a));
        }
        assert_ne!(t.sample(3.3, 4.4, 1), t.sample(3.3, 4.4, 2));
    }

    #[test]
    fn value_noise_is_continuous() {
        for i in 0..100 {
            let x = i as f64 * 0.173;
            let d = (value_noise(x, 2.5, 9) - value_noise(x + 1e-6, 2.5, 9)).abs();
            assert!(d < 1e-5);
        }
    }
}
