//! Unnormalized 1-D/2-D DFT helpers over column-major `M x N` grids.
//!
//! Grid entry `(p, q)` lives at index `q * m + p` (delay index fastest),
//! matching the vectorization used throughout the crate. All transforms here
//! are unnormalized; callers apply their own scaling.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

pub(crate) struct Dft2 {
    pub m: usize,
    pub n: usize,
    fwd_m: Arc<dyn Fft<f64>>,
    inv_m: Arc<dyn Fft<f64>>,
    fwd_n: Arc<dyn Fft<f64>>,
    inv_n: Arc<dyn Fft<f64>>,
}

impl Dft2 {
    pub fn new(m: usize, n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            m,
            n,
            fwd_m: planner.plan_fft_forward(m),
            inv_m: planner.plan_fft_inverse(m),
            fwd_n: planner.plan_fft_forward(n),
            inv_n: planner.plan_fft_inverse(n),
        }
    }

    fn over_cols(&self, grid: &mut [Complex64], fft: &Arc<dyn Fft<f64>>) {
        debug_assert_eq!(grid.len(), self.m * self.n);
        for chunk in grid.chunks_exact_mut(self.m) {
            fft.process(chunk);
        }
    }

    fn over_rows(&self, grid: &mut [Complex64], fft: &Arc<dyn Fft<f64>>) {
        debug_assert_eq!(grid.len(), self.m * self.n);
        let mut row = vec![Complex64::ZERO; self.n];
        for p in 0..self.m {
            for q in 0..self.n {
                row[q] = grid[q * self.m + p];
            }
            fft.process(&mut row);
            for q in 0..self.n {
                grid[q * self.m + p] = row[q];
            }
        }
    }

    /// Length-`m` forward DFT down each column (the delay axis).
    pub fn fft_cols(&self, grid: &mut [Complex64]) {
        self.over_cols(grid, &self.fwd_m);
    }

    #[allow(dead_code)] // test-support: dense BCCB reconstruction oracles
    pub fn ifft_cols(&self, grid: &mut [Complex64]) {
        self.over_cols(grid, &self.inv_m);
    }

    /// Length-`n` forward DFT along each row (the Doppler axis).
    pub fn fft_rows(&self, grid: &mut [Complex64]) {
        self.over_rows(grid, &self.fwd_n);
    }

    pub fn ifft_rows(&self, grid: &mut [Complex64]) {
        self.over_rows(grid, &self.inv_n);
    }

    /// Forward DFT of a single gathered row (length `n`).
    pub fn fft_row(&self, row: &mut [Complex64]) {
        debug_assert_eq!(row.len(), self.n);
        self.fwd_n.process(row);
    }

    /// Inverse DFT of a single gathered row (length `n`).
    pub fn ifft_row(&self, row: &mut [Complex64]) {
        debug_assert_eq!(row.len(), self.n);
        self.inv_n.process(row);
    }

    /// Unnormalized 2-D forward DFT (columns then rows).
    pub fn fft2(&self, grid: &mut [Complex64]) {
        self.fft_cols(grid);
        self.fft_rows(grid);
    }

    /// Unnormalized 2-D inverse DFT.
    #[allow(dead_code)] // test-support: dense BCCB reconstruction oracles
    pub fn ifft2(&self, grid: &mut [Complex64]) {
        self.ifft_cols(grid);
        self.ifft_rows(grid);
    }
}
