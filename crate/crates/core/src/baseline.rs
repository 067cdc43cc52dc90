//! MMSE equalization with packet-level SIC, the comparison baseline.
//!
//! User 1 equalizes and detects its own symbols treating User 2 as noise.
//! User 2 first detects the User 1 symbols, reconstructs and subtracts their
//! contribution, then re-equalizes and detects its own. Dense solves are the
//! point here -- this module reproduces the expensive benchmark at desk
//! scale, so the normal matrix is factored directly (capped at
//! `MMSE_SIZE_CAP` symbols).

use num_complex::Complex64;

use crate::grid::{quantize, QamConstellation};
use crate::linalg::{dot_conj, CMat, Cholesky};
use crate::mlsqr::LinOp;
use crate::thresholds::User;
use crate::waveform::EffectiveChannelOp;
use crate::{Error, Result};

/// Largest `MN` the dense baseline accepts.
pub const MMSE_SIZE_CAP: usize = 4096;

/// MMSE equalization context: `W = (G^H G + sigma^2 I)^{-1} G^H`, held as a
/// factorization of the regularized normal matrix plus (for the dense
/// construction) `G^H`. No explicit inverse is ever formed.
pub struct MmseContext {
    solver: NormalSolver,
    gh: Option<CMat>,
    pub sigma2: f64,
}

enum NormalSolver {
    Dense(Cholesky),
    CyclicBand(Box<CyclicBandSolver>),
}

impl MmseContext {
    /// Solves `(G^H G + sigma^2 I) x = rhs`.
    pub fn solve_normal(&self, rhs: &[Complex64]) -> Vec<Complex64> {
        match &self.solver {
            NormalSolver::Dense(chol) => chol.solve_vec(rhs),
            NormalSolver::CyclicBand(band) => band.solve(rhs),
        }
    }

    /// `W y` for one received vector; available on densely built contexts.
    pub fn equalize(&self, y: &[Complex64]) -> Vec<Complex64> {
        let gh = self.gh.as_ref().expect("equalize needs the dense G^H");
        self.solve_normal(&gh.matvec(y))
    }

    /// Materializes `W`; intended for small instances and tests.
    pub fn w_matrix(&self) -> CMat {
        let gh = self.gh.as_ref().expect("w_matrix needs the dense G^H");
        let mut out = CMat::zeros(gh.nrows(), gh.ncols());
        for j in 0..gh.ncols() {
            let col = self.solve_normal(&gh.col(j));
            out.set_col(j, &col);
        }
        out
    }
}

/// Solver for the delay-Doppler normal matrix, which is cyclically banded in
/// the delay index (Doppler-dense): after a delay-major reordering with the
/// last `l_max` delay rows moved to a border, the leading block is plain
/// banded and the cyclic wrap lives in a small Schur complement.
struct CyclicBandSolver {
    m: usize,
    n: usize,
    l: usize,
    /// Leading banded block size `(m - l) n` and border size `l n`.
    n1: usize,
    n2: usize,
    /// Band half-width of the leading block, `l n + n - 1`.
    w: usize,
    /// Permuted storage: leading `n1 x n1` holds the banded factor `L`,
    /// `[0..n1) x [n1..)` holds `E = L^{-1} C`.
    lp: CMat,
    /// Dense factor of the Schur complement `D - E^H E`.
    ls: Cholesky,
}

impl CyclicBandSolver {
    /// New (permuted) index of grid point `(p, q)`.
    fn new_index(&self, p: usize, q: usize) -> usize {
        if p < self.m - self.l {
            p * self.n + q
        } else {
            self.n1 + (p - (self.m - self.l)) * self.n + q
        }
    }

    fn build(b: &CMat, m: usize, n: usize, l: usize) -> Result<Self> {
        let mn = m * n;
        let n2 = l * n;
        let n1 = mn - n2;
        let w = (l * n + n - 1).min(n1.saturating_sub(1));
        let mut solver = Self { m, n, l, n1, n2, w, lp: CMat::zeros(mn, mn), ls: Cholesky::factor(&CMat::zeros(0, 0))? };

        // Permute into delay-major order with the wrap rows at the border.
        for p in 0..m {
            for q in 0..n {
                let i_new = solver.new_index(p, q);
                for pp in 0..m {
                    for qq in 0..n {
                        let j_new = solver.new_index(pp, qq);
                        solver.lp[(i_new, j_new)] = b[(q * m + p, qq * m + pp)];
                    }
                }
            }
        }

        // Banded Cholesky of the leading block, in place.
        for j in 0..n1 {
            let lo = j.saturating_sub(w);
            let ljj = {
                let rowj = solver.lp.row_mut(j);
                let mut diag = rowj[j].re;
                diag -= rowj[lo..j].iter().map(|v| v.norm_sqr()).sum::<f64>();
                if !(diag > 0.0) || !diag.is_finite() {
                    return Err(Error::Factorization(format!(
                        "normal matrix not positive definite at pivot {j} (value {diag})"
                    )));
                }
                let ljj = diag.sqrt();
                rowj[j] = Complex64::new(ljj, 0.0);
                ljj
            };
            for i in j + 1..(j + w + 1).min(n1) {
                let (head, tail) = solver.lp.split_rows(i);
                let rowj = &head[j * mn..j * mn + mn];
                let rowi = &mut tail[..mn];
                let t_lo = i.saturating_sub(w).max(lo);
                let s = dot_conj(&rowi[t_lo..j], &rowj[t_lo..j]);
                rowi[j] = (rowi[j] - s) / ljj;
            }
        }

        // E = L^{-1} C, column by column into the border block.
        for c in n1..mn {
            for i in 0..n1 {
                let (head, tail) = solver.lp.split_rows(i);
                let rowi = &mut tail[..mn];
                let lo = i.saturating_sub(w);
                let mut s = Complex64::ZERO;
                for t in lo..i {
                    s += rowi[t] * head[t * mn + c];
                }
                rowi[c] = (rowi[c] - s) / rowi[i].re;
            }
        }

        // Schur complement S = D - E^H E.
        let mut s_mat = CMat::zeros(n2, n2);
        for a in 0..n2 {
            for bidx in 0..n2 {
                let mut acc = solver.lp[(n1 + a, n1 + bidx)];
                for i in 0..n1 {
                    acc -= solver.lp[(i, n1 + a)].conj() * solver.lp[(i, n1 + bidx)];
                }
                s_mat[(a, bidx)] = acc;
            }
        }
        solver.ls = Cholesky::factor(&s_mat)?;
        Ok(solver)
    }

    fn solve(&self, rhs: &[Complex64]) -> Vec<Complex64> {
        let (m, n, n1, n2, w) = (self.m, self.n, self.n1, self.n2, self.w);
        let mn = m * n;
        let mut b = vec![Complex64::ZERO; mn];
        for p in 0..m {
            for q in 0..n {
                b[self.new_index(p, q)] = rhs[q * m + p];
            }
        }

        // Forward: L z1 = b1.
        let mut z1 = vec![Complex64::ZERO; n1];
        for i in 0..n1 {
            let row = self.lp.row(i);
            let lo = i.saturating_sub(w);
            let s = crate::linalg::dot(&row[lo..i], &z1[lo..i]);
            z1[i] = (b[i] - s) / row[i].re;
        }
        // Schur: L_S L_S^H x2 = b2 - E^H z1.
        let mut t2 = vec![Complex64::ZERO; n2];
        for a in 0..n2 {
            let mut acc = b[n1 + a];
            for i in 0..n1 {
                acc -= self.lp[(i, n1 + a)].conj() * z1[i];
            }
            t2[a] = acc;
        }
        let x2 = self.ls.solve_vec(&t2);
        // Backward: L^H x1 = z1 - E x2.
        let mut x1 = z1;
        for i in 0..n1 {
            let row = self.lp.row(i);
            let mut acc = Complex64::ZERO;
            for (a, x) in x2.iter().enumerate() {
                acc += row[n1 + a] * x;
            }
            x1[i] -= acc;
        }
        for i in (0..n1).rev() {
            let hi = (i + w + 1).min(n1);
            let mut acc = Complex64::ZERO;
            for j in i + 1..hi {
                acc += self.lp[(j, i)].conj() * x1[j];
            }
            x1[i] = (x1[i] - acc) / self.lp[(i, i)].re;
        }

        let mut out = vec![Complex64::ZERO; mn];
        for p in 0..m {
            for q in 0..n {
                let i_new = self.new_index(p, q);
                out[q * m + p] = if i_new < n1 { x1[i_new] } else { x2[i_new - n1] };
            }
        }
        out
    }
}

/// Builds the MMSE context from a dense effective channel.
pub fn mmse_matrix(g: &CMat, sigma2: f64) -> Result<MmseContext> {
    if g.nrows() != g.ncols() {
        return Err(Error::Dimension(format!(
            "effective channel must be square, got {}x{}",
            g.nrows(),
            g.ncols()
        )));
    }
    if g.nrows() > MMSE_SIZE_CAP {
        return Err(Error::SizeCap(format!(
            "dense MMSE on {} symbols exceeds the cap of {MMSE_SIZE_CAP}",
            g.nrows()
        )));
    }
    if !(sigma2 > 0.0) {
        return Err(Error::Config(format!("MMSE needs sigma2 > 0, got {sigma2}")));
    }
    let mut aha = g.gram();
    aha.add_scaled_identity(sigma2);
    let chol = Cholesky::factor(&aha)?;
    Ok(MmseContext { solver: NormalSolver::Dense(chol), gh: Some(g.adjoint()), sigma2 })
}

/// Builds the same context from a matrix-free operator: the normal matrix is
/// assembled column by column with chained `G^H (G e_j)` applications, which
/// is far cheaper than a dense product at simulation scale.
pub fn mmse_context_from_operator(g: &dyn LinOp, sigma2: f64) -> Result<MmseContext> {
    let mn = g.cols();
    if g.rows() != mn {
        return Err(Error::Dimension(format!(
            "effective channel must be square, got {}x{}",
            g.rows(),
            mn
        )));
    }
    if mn > MMSE_SIZE_CAP {
        return Err(Error::SizeCap(format!(
            "dense MMSE on {mn} symbols exceeds the cap of {MMSE_SIZE_CAP}"
        )));
    }
    if !(sigma2 > 0.0) {
        return Err(Error::Config(format!("MMSE needs sigma2 > 0, got {sigma2}")));
    }
    let mut aha = CMat::zeros(mn, mn);
    let mut e = vec![Complex64::ZERO; mn];
    let mut ge = vec![Complex64::ZERO; mn];
    let mut col = vec![Complex64::ZERO; mn];
    let mut gh = CMat::zeros(mn, mn);
    for j in 0..mn {
        e[j] = Complex64::ONE;
        g.apply(&e, &mut ge);
        g.apply_adjoint(&ge, &mut col);
        aha.set_col(j, &col);
        g.apply_adjoint(&e, &mut ge);
        gh.set_col(j, &ge);
        e[j] = Complex64::ZERO;
    }
    aha.add_scaled_identity(sigma2);
    let chol = Cholesky::factor(&aha)?;
    Ok(MmseContext { solver: NormalSolver::Dense(chol), gh: Some(gh), sigma2 })
}

/// Builds the context for an OTFS effective channel, exploiting both the
/// sparse column structure of the normal matrix and its cyclic delay band.
/// Falls back to the dense factorization when the delay spread is too large
/// relative to the grid for the bordered-band split.
pub fn mmse_context_for_channel(op: &EffectiveChannelOp, sigma2: f64) -> Result<MmseContext> {
    let cfg = *op.cfg();
    let mn = cfg.grid_len();
    if mn > MMSE_SIZE_CAP {
        return Err(Error::SizeCap(format!(
            "dense MMSE on {mn} symbols exceeds the cap of {MMSE_SIZE_CAP}"
        )));
    }
    if !(sigma2 > 0.0) {
        return Err(Error::Config(format!("MMSE needs sigma2 > 0, got {sigma2}")));
    }
    let b = op.normal_matrix(sigma2);
    let l = op.max_delay_tap();
    let solver = if 2 * l + 1 < cfg.m && cfg.m > l {
        NormalSolver::CyclicBand(Box::new(CyclicBandSolver::build(&b, cfg.m, cfg.n, l)?))
    } else {
        NormalSolver::Dense(Cholesky::factor(&b)?)
    };
    Ok(MmseContext { solver, gh: None, sigma2 })
}

/// MMSE-SIC detection of `user`'s symbols at that user's receiver.
///
/// User 1 treats the User 2 signal as noise. User 2 detects the User 1
/// symbols first, subtracts `sqrt(rho1) G x_hat_1` from the received vector,
/// and re-equalizes with the same context.
pub fn mmse_sic_detect(
    ctx: &MmseContext,
    g: &dyn LinOp,
    y: &[Complex64],
    user: User,
    rho: (f64, f64),
    c1: &QamConstellation,
    c2: &QamConstellation,
) -> Result<Vec<Complex64>> {
    let (rho1, rho2) = rho;
    if !(rho1 > rho2 && rho2 > 0.0) {
        return Err(Error::Config(format!(
            "power fractions must satisfy rho1 > rho2 > 0, got ({rho1}, {rho2})"
        )));
    }
    let (a1, a2) = (rho1.sqrt(), rho2.sqrt());
    let mut ghy = vec![Complex64::ZERO; g.cols()];
    g.apply_adjoint(y, &mut ghy);
    let eq = ctx.solve_normal(&ghy);
    let x1_hat: Vec<Complex64> = eq.iter().map(|v| quantize(v / a1, c1)).collect();
    match user {
        User::One => Ok(x1_hat),
        User::Two => {
            // Reconstruct and subtract the detected User 1 signal.
            let mut gx1 = vec![Complex64::ZERO; g.rows()];
            g.apply(&x1_hat, &mut gx1);
            let y2: Vec<Complex64> = y.iter().zip(&gx1).map(|(yv, gv)| yv - a1 * gv).collect();
            g.apply_adjoint(&y2, &mut ghy);
            let eq2 = ctx.solve_normal(&ghy);
            Ok(eq2.iter().map(|v| quantize(v / a2, c2)).collect())
        }
    }
}
