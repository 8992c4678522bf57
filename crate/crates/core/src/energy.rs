//! Energy vectors: Gaussian-weighted fusion of a block of correlation rows.
//!
//! A correlation grid (rot-scale PSD or polar translation PSD) is reduced to
//! a single 1-D profile by locating the row with the largest summed energy,
//! fitting a Gaussian over the `2r + 1` rows around it and blending those
//! rows with the fitted weights. The fit's mean gives a fractional row (the
//! rotation or direction estimate) and its spread the uncertainty.

use crate::error::{Error, Result};
use crate::image::Grid;

pub const MIN_VECTOR_LEN: usize = 8;
pub const MIN_SIGMA_BINS: f64 = 0.25;
pub const DEFAULT_BLOCK_RADIUS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Axis {
    /// Column `j` corresponds to a zoom of `epsilon^(j - len/2)`.
    LogScale { epsilon: f64 },
    /// Column `j` corresponds to a displacement of `j * pixels_per_bin`.
    Radius { pixels_per_bin: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyVector {
    values: Vec<f64>,
    axis: Axis,
}

impl EnergyVector {
    pub fn new(values: Vec<f64>, axis: Axis) -> Result<Self> {
        if values.len() < MIN_VECTOR_LEN {
            return Err(Error::Contract(format!(
                "energy vector needs at least {MIN_VECTOR_LEN} bins, got {}",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InputDomain(format!("energy value {v}")));
        }
        Ok(Self { values, axis })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn axis(&self) -> Axis {
        self.axis
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.values)
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn l2_normalized(&self) -> EnergyVector {
        let norm = self.values.iter().map(|v| v * v).sum::<f64>().sqrt();
        let values = if norm > 0.0 {
            self.values.iter().map(|v| v / norm).collect()
        } else {
            self.values.clone()
        };
        EnergyVector {
            values,
            axis: self.axis,
        }
    }

    pub(crate) fn with_values(&self, values: Vec<f64>) -> EnergyVector {
        EnergyVector {
            values,
            axis: self.axis,
        }
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// How row indices beyond the grid are resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowTopology {
    /// Rows form a ring (angle axes).
    Circular,
    /// Out-of-range rows clamp to the first/last row.
    Clamped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionResult {
    pub vector: EnergyVector,
    /// Fractional row of the fitted mean, wrapped into `[0, rows)` for
    /// circular grids.
    pub peak_row_mu: f64,
    /// Fitted spread in rows.
    pub sigma: f64,
    pub block_center: usize,
    pub block_radius: usize,
}

/// Moment fit of a Gaussian to `2r + 1` row energies centered on row `k`.
///
/// Returns `(mu, sigma)` in row units; `mu` is not wrapped. `sigma` is
/// clamped to at least a quarter bin.
pub fn fit_row_gaussian(row_sums: &[f64], k: isize) -> Result<(f64, f64)> {
    if row_sums.len() < 3 || row_sums.len().is_multiple_of(2) {
        return Err(Error::Contract(format!(
            "expected 2r+1 >= 3 row sums, got {}",
            row_sums.len()
        )));
    }
    if row_sums.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InputDomain("row sums must be non-negative".into()));
    }
    let r = (row_sums.len() / 2) as isize;
    let total: f64 = row_sums.iter().sum();
    if total <= 0.0 {
        return Err(Error::DegenerateBlock);
    }
    let index = |n: usize| (k - r + n as isize) as f64;
    let mu = row_sums
        .iter()
        .enumerate()
        .map(|(n, w)| index(n) * w)
        .sum::<f64>()
        / total;
    let var = row_sums
        .iter()
        .enumerate()
        .map(|(n, w)| w * (index(n) - mu).powi(2))
        .sum::<f64>()
        / total;
    Ok((mu, var.sqrt().max(MIN_SIGMA_BINS)))
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Gaussian-weighted fusion of the `2r + 1` rows around the strongest row.
///
/// Row energies entering the fit are taken above the median row sum, which
/// removes the broadband floor of a whitened correlation surface; a block
/// with nothing above the floor falls back to the raw sums.
pub fn fuse_energy_vector(
    grid: &Grid,
    r: usize,
    topology: RowTopology,
    axis: Axis,
) -> Result<FusionResult> {
    let rows = grid.height();
    if rows < 2 * r + 1 {
        return Err(Error::Contract(format!(
            "grid has {rows} rows, block of radius {r} needs {}",
            2 * r + 1
        )));
    }
    let sums = grid.row_sums();
    let k = argmax(&sums);
    let resolve = |i: isize| -> usize {
        match topology {
            RowTopology::Circular => i.rem_euclid(rows as isize) as usize,
            RowTopology::Clamped => i.clamp(0, rows as isize - 1) as usize,
        }
    };
    let block: Vec<usize> = (-(r as isize)..=r as isize)
        .map(|o| resolve(k as isize + o))
        .collect();
    let floor = median(&sums);
    let above: Vec<f64> = block.iter().map(|&i| (sums[i] - floor).max(0.0)).collect();
    let weights = if above.iter().sum::<f64>() > 0.0 {
        above
    } else {
        block.iter().map(|&i| sums[i]).collect()
    };
    let (mu, sigma) = fit_row_gaussian(&weights, k as isize)?;

    let mut fused = vec![0.0; grid.width()];
    let mut norm = 0.0;
    for (n, &row) in block.iter().enumerate() {
        let i = (k as isize - r as isize + n as isize) as f64;
        let g = (-0.5 * ((i - mu) / sigma).powi(2)).exp();
        norm += g;
        for (f, v) in fused.iter_mut().zip(grid.row(row)) {
            *f += g * v;
        }
    }
    fused.iter_mut().for_each(|f| *f /= norm);

    let peak_row_mu = match topology {
        RowTopology::Circular => mu.rem_euclid(rows as f64),
        RowTopology::Clamped => mu,
    };
    Ok(FusionResult {
        vector: EnergyVector::new(fused, axis)?,
        peak_row_mu,
        sigma,
        block_center: k,
        block_radius: r,
    })
}

pub const DEFAULT_SMOOTHING_SIGMA: f64 = 1.0;

/// Discrete Gaussian kernel truncated at `3 sigma`, normalized to unit sum.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-0.5 * (i as f64 / sigma).powi(2)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Gaussian smoothing with half-sample reflective boundaries.
///
/// `sigma_g` is clamped into `[0.5, 5]` bins. Mass-preserving and linear.
pub fn smooth_vector(v: &EnergyVector, sigma_g: f64) -> EnergyVector {
    let sigma = sigma_g.clamp(0.5, 5.0);
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as isize;
    let n = v.len() as isize;
    let reflect = |mut i: isize| -> usize {
        loop {
            if i < 0 {
                i = -1 - i;
            } else if i >= n {
                i = 2 * n - 1 - i;
            } else {
                return i as usize;
            }
        }
    };
    let src = v.values();
    let out = (0..n)
        .map(|j| {
            kernel
                .iter()
                .enumerate()
                .map(|(t, kv)| kv * src[reflect(j + t as isize - radius)])
                .sum::<f64>()
                .max(0.0)
        })
        .collect();
    v.with_values(out)
}
