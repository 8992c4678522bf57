//! Dense single-channel grids and the validated [`Image`] type.

use std::path::Path;

use crate::error::{Error, Result};

/// Row-major 2-D array of `f64` samples.
///
/// Used for spectra, correlation surfaces and resampled grids. No value
/// constraints beyond what the producing operation guarantees.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Contract(format!(
                "grid of {width}x{height} needs {} samples, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn row(&self, y: usize) -> &[f64] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.height).map(|y| self.row(y).iter().sum()).collect()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Index and value of the largest sample (first one on ties).
    pub fn argmax(&self) -> (usize, usize, f64) {
        let mut best = (0, f64::NEG_INFINITY);
        for (i, &v) in self.data.iter().enumerate() {
            if v > best.1 {
                best = (i, v);
            }
        }
        (best.0 % self.width, best.0 / self.width, best.1)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Grid {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Bilinear sample at fractional coordinates; zero outside the grid.
    #[inline]
    pub fn bilinear(&self, x: f64, y: f64) -> f64 {
        if !(x >= 0.0 && y >= 0.0) {
            return 0.0;
        }
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        if x > max_x || y > max_y {
            return 0.0;
        }
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let top = self.get(x0, y0) * (1.0 - fx) + self.get(x1, y0) * fx;
        let bottom = self.get(x0, y1) * (1.0 - fx) + self.get(x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Bilinear sample treating both axes as periodic.
    #[inline]
    pub fn bilinear_wrapped(&self, x: f64, y: f64) -> f64 {
        let w = self.width as f64;
        let h = self.height as f64;
        let x = x.rem_euclid(w);
        let y = y.rem_euclid(h);
        let x0 = x.floor() as usize % self.width;
        let y0 = y.floor() as usize % self.height;
        let fx = x - x.floor();
        let fy = y - y.floor();
        let x1 = (x0 + 1) % self.width;
        let y1 = (y0 + 1) % self.height;
        let top = self.get(x0, y0) * (1.0 - fx) + self.get(x1, y0) * fx;
        let bottom = self.get(x0, y1) * (1.0 - fx) + self.get(x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Circular shift so that sample `(x, y)` moves to `(x + dx, y + dy)`.
    pub fn roll(&self, dx: isize, dy: isize) -> Grid {
        let w = self.width as isize;
        let h = self.height as isize;
        Grid::from_fn(self.width, self.height, |x, y| {
            let sx = (x as isize - dx).rem_euclid(w) as usize;
            let sy = (y as isize - dy).rem_euclid(h) as usize;
            self.get(sx, sy)
        })
    }
}

/// Single-channel intensity image with samples in `[0, 1]`.
///
/// Dimensions are even and at least 64 so that FFT-shift symmetry holds and
/// the log-polar stage has enough radial range.
#[derive(Debug, Clone, PartialEq)]
pub struct Image(Grid);

pub const MIN_IMAGE_SIDE: usize = 64;

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        let grid = Grid::from_vec(width, height, data)?;
        Self::from_grid(grid)
    }

    pub fn from_grid(grid: Grid) -> Result<Self> {
        let (w, h) = grid.dims();
        if w < MIN_IMAGE_SIDE || h < MIN_IMAGE_SIDE {
            return Err(Error::InputDomain(format!(
                "image {w}x{h} is smaller than {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE}"
            )));
        }
        if w % 2 != 0 || h % 2 != 0 {
            return Err(Error::InputDomain(format!(
                "image {w}x{h} must have even dimensions"
            )));
        }
        if let Some(bad) = grid.data().iter().find(|v| !v.is_finite()) {
            return Err(Error::InputDomain(format!("non-finite sample {bad}")));
        }
        if let Some(bad) = grid.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InputDomain(format!("sample {bad} outside [0, 1]")));
        }
        Ok(Image(grid))
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        Self::from_grid(Grid::from_fn(width, height, f))
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.0
    }

    pub fn into_grid(self) -> Grid {
        self.0
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.0.width()
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.0.height()
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        self.0.dims()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.0.get(x, y)
    }

    /// Reads an 8-bit grayscale PNG or PGM (other formats are converted to luma).
    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        let luma = img.to_luma8();
        let (w, h) = luma.dimensions();
        let data = luma.as_raw().iter().map(|&v| v as f64 / 255.0).collect();
        Image::new(w as usize, h as usize, data).map_err(|e| Error::parse(path, e.to_string()))
    }

    /// Quantizes to 8 bits and writes a grayscale image; format follows the extension.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_u8();
        let buf = image::GrayImage::from_raw(self.width() as u32, self.height() as u32, bytes)
            .expect("buffer length matches dimensions");
        buf.save(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.0
            .data()
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }
}

/// Writes an arbitrary non-negative grid as an 8-bit PGM, scaled to its maximum.
pub fn save_grid_pgm(grid: &Grid, path: &Path) -> Result<()> {
    let max = grid.data().iter().cloned().fold(0.0f64, f64::max);
    let scale = if max > 0.0 { 255.0 / max } else { 0.0 };
    let bytes: Vec<u8> = grid
        .data()
        .iter()
        .map(|&v| (v.max(0.0) * scale).round().min(255.0) as u8)
        .collect();
    let buf = image::GrayImage::from_raw(grid.width() as u32, grid.height() as u32, bytes)
        .expect("buffer length matches dimensions");
    buf.save_with_format(path, image::ImageFormat::Pnm)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}
