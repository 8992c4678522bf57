//! 2-D FFT helpers over row-major complex buffers.

use std::cell::RefCell;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::image::Grid;

pub type C64 = Complex<f64>;

thread_local! {
    // Plans are cached per thread; the planner itself is not shareable.
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

fn fft_rows(buf: &mut [C64], width: usize, dir: Direction) {
    let fft = PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        match dir {
            Direction::Forward => p.plan_fft_forward(width),
            Direction::Inverse => p.plan_fft_inverse(width),
        }
    });
    let mut scratch = vec![C64::default(); fft.get_inplace_scratch_len()];
    fft.process_with_scratch(buf, &mut scratch);
}

fn transpose(src: &[C64], width: usize, height: usize) -> Vec<C64> {
    let mut out = vec![C64::default(); src.len()];
    const BLOCK: usize = 32;
    for by in (0..height).step_by(BLOCK) {
        for bx in (0..width).step_by(BLOCK) {
            for y in by..(by + BLOCK).min(height) {
                for x in bx..(bx + BLOCK).min(width) {
                    out[x * height + y] = src[y * width + x];
                }
            }
        }
    }
    out
}

/// Unnormalized 2-D transform; the inverse is scaled by `1/(w·h)`.
pub fn fft2(buf: &mut Vec<C64>, width: usize, height: usize, dir: Direction) {
    debug_assert_eq!(buf.len(), width * height);
    fft_rows(buf, width, dir);
    let mut t = transpose(buf, width, height);
    fft_rows(&mut t, height, dir);
    *buf = transpose(&t, height, width);
    if dir == Direction::Inverse {
        let norm = 1.0 / (width * height) as f64;
        buf.iter_mut().for_each(|c| *c *= norm);
    }
}

pub fn forward_real(grid: &Grid) -> Vec<C64> {
    let mut buf: Vec<C64> = grid.data().iter().map(|&v| C64::new(v, 0.0)).collect();
    fft2(&mut buf, grid.width(), grid.height(), Direction::Forward);
    buf
}

/// Moves the zero-frequency (or zero-displacement) bin to `(w/2, h/2)`.
pub fn fftshift(grid: &Grid) -> Grid {
    grid.roll((grid.width() / 2) as isize, (grid.height() / 2) as isize)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_undoes_forward() {
        let (w, h) = (12, 8);
        let orig: Vec<C64> = (0..w * h)
            .map(|i| C64::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()))
            .collect();
        let mut buf = orig.clone();
        fft2(&mut buf, w, h, Direction::Forward);
        fft2(&mut buf, w, h, Direction::Inverse);
        for (a, b) in buf.iter().zip(&orig) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn shift_puts_dc_at_center() {
        let g = Grid::from_fn(8, 6, |x, y| if x == 0 && y == 0 { 1.0 } else { 0.0 });
        let s = fftshift(&g);
        assert_eq!(s.get(4, 3), 1.0);
    }
}
