//! Small dense complex linear-algebra toolbox.
//!
//! Row-major `Complex64` matrices with the handful of operations the solver
//! oracles and the MMSE baseline need: products, adjoints, and a blocked
//! Hermitian Cholesky factorization. Sized for desk-scale systems (MN up to
//! a few thousand); not a general-purpose BLAS.

use num_complex::Complex64;

use crate::{Error, Result};

/// Dense row-major complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CMat {
    nrows: usize,
    ncols: usize,
    data: Vec<Complex64>,
}

impl CMat {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self { nrows, ncols, data: vec![Complex64::ZERO; nrows * ncols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Complex64::ONE;
        }
        m
    }

    pub fn from_fn(nrows: usize, ncols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut m = Self::zeros(nrows, ncols);
        for i in 0..nrows {
            for j in 0..ncols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn row(&self, i: usize) -> &[Complex64] {
        &self.data[i * self.ncols..(i + 1) * self.ncols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [Complex64] {
        &mut self.data[i * self.ncols..(i + 1) * self.ncols]
    }

    /// Writes `col` into column `j`.
    pub fn set_col(&mut self, j: usize, col: &[Complex64]) {
        assert_eq!(col.len(), self.nrows);
        for (i, &v) in col.iter().enumerate() {
            self[(i, j)] = v;
        }
    }

    pub fn col(&self, j: usize) -> Vec<Complex64> {
        (0..self.nrows).map(|i| self[(i, j)]).collect()
    }

    pub fn adjoint(&self) -> CMat {
        CMat::from_fn(self.ncols, self.nrows, |i, j| self[(j, i)].conj())
    }

    /// Splits the backing storage at the start of row `i`: the rows above
    /// (shared) and the rest (mutable). For in-place factorizations.
    pub fn split_rows(&mut self, i: usize) -> (&[Complex64], &mut [Complex64]) {
        let (head, tail) = self.data.split_at_mut(i * self.ncols);
        (head, tail)
    }

    pub fn matvec(&self, x: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `self * other`, straightforward i-k-j product.
    pub fn matmul(&self, other: &CMat) -> CMat {
        assert_eq!(self.ncols, other.nrows);
        let mut out = CMat::zeros(self.nrows, other.ncols);
        for i in 0..self.nrows {
            for k in 0..self.ncols {
                let a = self[(i, k)];
                if a == Complex64::ZERO {
                    continue;
                }
                let brow = other.row(k);
                let orow = out.row_mut(i);
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self^H * self`.
    pub fn gram(&self) -> CMat {
        self.adjoint().matmul(self)
    }

    pub fn add_scaled_identity(&mut self, s: f64) {
        assert_eq!(self.nrows, self.ncols);
        for i in 0..self.nrows {
            self[(i, i)] += Complex64::new(s, 0.0);
        }
    }

    pub fn scale(&mut self, s: Complex64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn sub(&self, other: &CMat) -> CMat {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut out = self.clone();
        for (o, &b) in out.data.iter_mut().zip(&other.data) {
            *o -= b;
        }
        out
    }

    pub fn frob_norm(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }
}

impl std::ops::Index<(usize, usize)> for CMat {
    type Output = Complex64;
    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        &self.data[i * self.ncols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for CMat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        &mut self.data[i * self.ncols + j]
    }
}

/// Plain complex dot product `sum_k a[k] b[k]` with split accumulators.
pub fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    debug_assert_eq!(a.len(), b.len());
    let mut re = 0.0;
    let mut im = 0.0;
    for (x, y) in a.iter().zip(b) {
        re += x.re * y.re - x.im * y.im;
        im += x.re * y.im + x.im * y.re;
    }
    Complex64::new(re, im)
}

/// Hermitian inner product `sum_k a[k] conj(b[k])`.
pub fn dot_conj(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    debug_assert_eq!(a.len(), b.len());
    // Two independent accumulator pairs keep the fp dependency chains short
    // enough for the autovectorizer.
    let (mut re0, mut im0, mut re1, mut im1) = (0.0, 0.0, 0.0, 0.0);
    let mut ai = a.chunks_exact(2);
    let mut bi = b.chunks_exact(2);
    for (xa, xb) in ai.by_ref().zip(bi.by_ref()) {
        re0 += xa[0].re * xb[0].re + xa[0].im * xb[0].im;
        im0 += xa[0].im * xb[0].re - xa[0].re * xb[0].im;
        re1 += xa[1].re * xb[1].re + xa[1].im * xb[1].im;
        im1 += xa[1].im * xb[1].re - xa[1].re * xb[1].im;
    }
    for (x, y) in ai.remainder().iter().zip(bi.remainder()) {
        re0 += x.re * y.re + x.im * y.im;
        im0 += x.im * y.re - x.re * y.im;
    }
    Complex64::new(re0 + re1, im0 + im1)
}

pub fn norm2(x: &[Complex64]) -> f64 {
    x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

/// Lower-triangular Cholesky factor of a Hermitian positive-definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    /// Full row-major storage; only the lower triangle is meaningful.
    l: Vec<Complex64>,
}

const CHOL_BLOCK: usize = 64;

impl Cholesky {
    /// Factors `a` (Hermitian positive definite, only the lower triangle is
    /// read) as `L L^H`. Blocked right-looking algorithm.
    pub fn factor(a: &CMat) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::Dimension(format!(
                "cholesky needs a square matrix, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        let n = a.nrows();
        let mut l = a.data.clone();

        let mut k0 = 0;
        while k0 < n {
            let kb = CHOL_BLOCK.min(n - k0);

            // Unblocked factorization of the diagonal block. Columns before
            // k0 were already folded in by earlier trailing updates.
            for j in k0..k0 + kb {
                let (_, tail) = l.split_at_mut(j * n);
                let rj = &mut tail[..n];
                let mut diag = rj[j].re;
                diag -= rj[k0..j].iter().map(|v| v.norm_sqr()).sum::<f64>();
                if !(diag > 0.0) || !diag.is_finite() {
                    return Err(Error::Factorization(format!(
                        "matrix not positive definite at pivot {j} (value {diag})"
                    )));
                }
                let ljj = diag.sqrt();
                rj[j] = Complex64::new(ljj, 0.0);
                // Update column j of the rows below within the block.
                for i in j + 1..k0 + kb {
                    let (above, below) = l.split_at_mut(i * n);
                    let rowj = &above[j * n..j * n + n];
                    let rowi = &mut below[..n];
                    let s = dot_conj(&rowi[k0..j], &rowj[k0..j]);
                    rowi[j] = (rowi[j] - s) / ljj;
                }
            }

            // Panel: rows below the block solve against the diagonal block,
            // L21 = A21 L11^{-H}.
            for i in k0 + kb..n {
                let (above, below) = l.split_at_mut(i * n);
                let rowi = &mut below[..n];
                for c in k0..k0 + kb {
                    let rowc = &above[c * n..c * n + n];
                    let s = dot_conj(&rowi[k0..c], &rowc[k0..c]);
                    rowi[c] = (rowi[c] - s) / rowc[c].re;
                }
            }

            // Trailing update: A22 -= L21 L21^H (lower triangle only).
            let end = k0 + kb;
            for i in end..n {
                let (above, below) = l.split_at_mut(i * n);
                let rowi = &mut below[..n];
                let panel_i: Vec<Complex64> = rowi[k0..end].to_vec();
                for j in end..=i {
                    let panel_j = if j == i { &panel_i[..] } else { &above[j * n + k0..j * n + end] };
                    let s = dot_conj(&panel_i, panel_j);
                    rowi[j] -= s;
                }
            }

            k0 += kb;
        }

        // Zero the strictly upper part so the factor is clean to inspect.
        for i in 0..n {
            for j in i + 1..n {
                l[i * n + j] = Complex64::ZERO;
            }
        }
        Ok(Self { n, l })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn row(&self, i: usize) -> &[Complex64] {
        &self.l[i * self.n..(i + 1) * self.n]
    }

    /// Solves `L L^H x = b`.
    pub fn solve_vec(&self, b: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(b.len(), self.n);
        let n = self.n;
        let mut x = b.to_vec();
        // Forward: L y = b.
        for i in 0..n {
            let row = self.row(i);
            let s = dot(&row[..i], &x[..i]);
            x[i] = (x[i] - s) / row[i].re;
        }
        // Backward: L^H x = y.
        for i in (0..n).rev() {
            let mut s = Complex64::ZERO;
            for j in i + 1..n {
                s += self.l[j * n + i].conj() * x[j];
            }
            x[i] = (x[i] - s) / self.l[i * n + i].re;
        }
        x
    }

    /// Solves `L L^H X = B` column by column.
    pub fn solve_mat(&self, b: &CMat) -> CMat {
        assert_eq!(b.nrows(), self.n);
        let mut out = CMat::zeros(b.nrows(), b.ncols());
        for j in 0..b.ncols() {
            let col = self.solve_vec(&b.col(j));
            out.set_col(j, &col);
        }
        out
    }
}
