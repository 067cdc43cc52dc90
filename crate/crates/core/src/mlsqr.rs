//! Modified LSQR: a damped Golub-Kahan/LSQR core that additionally computes
//! the post-equalization MSE of the equalized symbols.
//!
//! The solver runs plain LSQR on the augmented system `A = [G; sigma I]`,
//! `b = [y; 0]`. Two MSE paths are provided on top of the same scalar
//! history:
//!
//! * an exact path that reconstructs the equivalent equalization matrix
//!   `L_u` (so that `x_u = L_u G^H y`) through a three-term matrix recursion
//!   and reads per-symbol gain/interference/noise off `B = L_u G^H G` -- cost
//!   `O((MN)^2)` per iteration, so it is capped to small instances;
//! * a low-complexity path that runs the same recursion on eigenvalue
//!   vectors after diagonalizing the (approximately) block-circulant
//!   effective channel with a 2-D DFT, yielding one scalar MSE for all
//!   symbols.

use num_complex::Complex64;

use crate::dft::Dft2;
use crate::linalg::{norm2, CMat};
use crate::{Error, Result};

/// Matrix-free linear operator: `apply` is `v -> A v`, `apply_adjoint` is
/// `u -> A^H u`. Implementations must be re-entrant.
pub trait LinOp: Sync {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    fn apply(&self, x: &[Complex64], out: &mut [Complex64]);
    fn apply_adjoint(&self, y: &[Complex64], out: &mut [Complex64]);
}

/// Dense-matrix operator, mostly for tests and oracles.
pub struct DenseOp<'a>(pub &'a CMat);

impl LinOp for DenseOp<'_> {
    fn rows(&self) -> usize {
        self.0.nrows()
    }
    fn cols(&self) -> usize {
        self.0.ncols()
    }
    fn apply(&self, x: &[Complex64], out: &mut [Complex64]) {
        out.copy_from_slice(&self.0.matvec(x));
    }
    fn apply_adjoint(&self, y: &[Complex64], out: &mut [Complex64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = Complex64::ZERO;
            for (k, &yv) in y.iter().enumerate() {
                acc += self.0[(k, i)].conj() * yv;
            }
            *o = acc;
        }
    }
}

/// Materializes the dense matrix of an operator column by column.
pub fn materialize(g: &dyn LinOp) -> CMat {
    let mut out = CMat::zeros(g.rows(), g.cols());
    let mut e = vec![Complex64::ZERO; g.cols()];
    let mut col = vec![Complex64::ZERO; g.rows()];
    for j in 0..g.cols() {
        e[j] = Complex64::ONE;
        g.apply(&e, &mut col);
        out.set_col(j, &col);
        e[j] = Complex64::ZERO;
    }
    out
}

/// Per-iteration scalars of the LSQR recursion.
#[derive(Debug, Clone, Copy)]
pub struct LsqrScalars {
    pub alpha: f64,
    pub beta: f64,
    pub rho: f64,
    pub rho_bar: f64,
    pub phi: f64,
    pub phi_bar: f64,
    pub tau: f64,
    pub mu: f64,
    pub c: f64,
    pub s: f64,
}

/// Scalar history of one solve; everything the MSE recursions need.
#[derive(Debug, Clone, Default)]
pub struct LsqrHistory {
    /// `alpha_0 = ||A^H u_0||` from the initialization.
    pub alpha0: f64,
    /// `beta_0 = ||b||` from the initialization.
    pub beta0: f64,
    pub iters: Vec<LsqrScalars>,
    /// Set when `beta_u = 0` or `alpha_u = 0` ended the solve early (the
    /// Krylov space is exhausted; the iterate is exact).
    pub breakdown: bool,
}

impl LsqrHistory {
    /// `tau_u` with the convention `tau_0 = 1`.
    fn tau(&self, u: isize) -> f64 {
        match u {
            0 => 1.0,
            u if u >= 1 => self.iters[u as usize - 1].tau,
            _ => panic!("tau index {u} out of range"),
        }
    }

    /// `mu_u` with `mu_u = 0` for `u <= 0` (only ever multiplied by a zero
    /// matrix difference there).
    fn mu(&self, u: isize) -> f64 {
        if u >= 1 {
            self.iters[u as usize - 1].mu
        } else {
            0.0
        }
    }

    /// The product `rho_bar_u * phi_bar_u`, with the initialization values at
    /// `u = 0` and the convention `rho_bar_u = phi_bar_u = 1` for `u < 0`.
    fn rb_pb(&self, u: isize) -> f64 {
        match u {
            u if u < 0 => 1.0,
            0 => self.alpha0 * self.beta0,
            _ => {
                let it = &self.iters[u as usize - 1];
                it.rho_bar * it.phi_bar
            }
        }
    }
}

/// LSQR solution plus its recursion history.
#[derive(Debug, Clone)]
pub struct LsqrSolution {
    pub x: Vec<Complex64>,
    pub history: LsqrHistory,
    /// `||y - G x||` at exit, recomputed directly.
    pub residual_norm: f64,
    pub iterations_used: usize,
    /// True when the stop came from the residual tolerance.
    pub converged: bool,
}

/// Golub-Kahan vectors whose norm falls below this fraction of the
/// pre-subtraction magnitude are treated as exhausted (breakdown).
const BREAKDOWN_REL: f64 = 1e-12;

/// Damped LSQR on `A = [G; sigma I]`, `b = [y; 0]`.
///
/// Stops when the unaugmented residual `||y - G x_u||` drops to `tol`, after
/// `max_iter` iterations, or on a Golub-Kahan breakdown (exact solution
/// reached). The per-iteration residual uses the identity
/// `||y - G x_u||^2 = phi_bar_u^2 - sigma^2 ||x_u||^2`, which holds because
/// `|phi_bar_u|` is the augmented residual norm.
pub fn lsqr_solve(
    g: &dyn LinOp,
    y: &[Complex64],
    sigma2: f64,
    max_iter: usize,
    tol: f64,
) -> Result<LsqrSolution> {
    let rows = g.rows();
    let cols = g.cols();
    if y.len() != rows {
        return Err(Error::Dimension(format!("y has length {}, operator has {rows} rows", y.len())));
    }
    if max_iter < 1 {
        return Err(Error::Config("max_iter must be >= 1".into()));
    }
    if sigma2 < 0.0 {
        return Err(Error::Config(format!("damping variance must be >= 0, got {sigma2}")));
    }
    let sigma = sigma2.sqrt();

    let mut history = LsqrHistory::default();
    let mut x = vec![Complex64::ZERO; cols];

    let beta0 = norm2(y);
    history.beta0 = beta0;
    if beta0 == 0.0 {
        return Ok(LsqrSolution { x, history, residual_norm: 0.0, iterations_used: 0, converged: true });
    }

    // Augmented vectors are kept as (top, bottom) pairs.
    let mut u_top: Vec<Complex64> = y.iter().map(|v| v / beta0).collect();
    let mut u_bot = vec![Complex64::ZERO; cols];

    let mut v = vec![Complex64::ZERO; cols];
    g.apply_adjoint(&u_top, &mut v);
    for (vi, ub) in v.iter_mut().zip(&u_bot) {
        *vi += sigma * ub;
    }
    let alpha0 = norm2(&v);
    history.alpha0 = alpha0;
    if alpha0 == 0.0 {
        // A^H b = 0: x = 0 is the least-squares solution.
        history.breakdown = true;
        return Ok(LsqrSolution { x, history, residual_norm: beta0, iterations_used: 0, converged: false });
    }
    for vi in &mut v {
        *vi /= alpha0;
    }
    let mut w = v.clone();

    let mut phi_bar = beta0;
    let mut rho_bar = alpha0;
    let mut alpha_prev = alpha0;

    let mut scratch_top = vec![Complex64::ZERO; rows];
    let mut scratch_cols = vec![Complex64::ZERO; cols];

    let mut converged = false;
    let mut breakdown = false;
    for _ in 1..=max_iter {
        // beta_u u_u = A v_{u-1} - alpha_{u-1} u_{u-1}
        g.apply(&v, &mut scratch_top);
        let av_norm2 = norm2(&scratch_top).powi(2) + sigma2;
        for (ut, av) in u_top.iter_mut().zip(&scratch_top) {
            *ut = av - alpha_prev * *ut;
        }
        for (ub, vi) in u_bot.iter_mut().zip(&v) {
            *ub = sigma * vi - alpha_prev * *ub;
        }
        let mut beta = (norm2(&u_top).powi(2) + norm2(&u_bot).powi(2)).sqrt();
        // Relative breakdown test: a remainder this far below ||A v|| is
        // cancellation noise, i.e. the Krylov space is exhausted.
        if beta > BREAKDOWN_REL * av_norm2.sqrt() {
            for t in u_top.iter_mut().chain(u_bot.iter_mut()) {
                *t /= beta;
            }
        } else {
            breakdown = true;
            beta = 0.0;
            u_top.fill(Complex64::ZERO);
            u_bot.fill(Complex64::ZERO);
        }

        // alpha_u v_u = A^H u_u - beta_u v_{u-1}
        g.apply_adjoint(&u_top, &mut scratch_cols);
        let mut alpha = 0.0;
        {
            let mut acc = 0.0;
            let mut ahu_acc = 0.0;
            for i in 0..cols {
                let ahu = scratch_cols[i] + sigma * u_bot[i];
                ahu_acc += ahu.norm_sqr();
                let raw = ahu - beta * v[i];
                scratch_cols[i] = raw;
                acc += raw.norm_sqr();
            }
            let norm = acc.sqrt();
            if norm > BREAKDOWN_REL * ahu_acc.sqrt() {
                for i in 0..cols {
                    v[i] = scratch_cols[i] / norm;
                }
                alpha = norm;
            } else {
                breakdown = true;
                v.fill(Complex64::ZERO);
            }
        }

        // Givens rotation on the bidiagonal system.
        let rho = rho_bar.hypot(beta);
        let c = rho_bar / rho;
        let s = beta / rho;
        let theta = s * alpha;
        let phi = c * phi_bar;
        let tau = phi / rho;
        let mu = theta / rho;
        phi_bar = -s * phi_bar;
        rho_bar = c * alpha;

        for i in 0..cols {
            x[i] += tau * w[i];
            w[i] = v[i] - mu * w[i];
        }

        history.iters.push(LsqrScalars {
            alpha,
            beta,
            rho,
            rho_bar,
            phi,
            phi_bar,
            tau,
            mu,
            c,
            s,
        });
        alpha_prev = alpha;

        let xnorm2: f64 = x.iter().map(|v| v.norm_sqr()).sum();
        let res = (phi_bar * phi_bar - sigma2 * xnorm2).max(0.0).sqrt();
        if res <= tol {
            converged = true;
            break;
        }
        if breakdown {
            break;
        }
    }
    history.breakdown = breakdown;

    // Report the true residual, not the recursion estimate.
    g.apply(&x, &mut scratch_top);
    let residual_norm = y
        .iter()
        .zip(&scratch_top)
        .map(|(yi, gx)| (yi - gx).norm_sqr())
        .sum::<f64>()
        .sqrt();

    let iterations_used = history.iters.len();
    Ok(LsqrSolution { x, history, residual_norm, iterations_used, converged })
}

/// Coefficients of the three-term `L_u` recursion at iteration `u >= 2`.
///
/// Derived by eliminating the direction vectors from the normal-equation
/// residual identity `xi_u = phibar_u rhobar_u w_u - mu_u^2 phibar_{u-1}
/// rhobar_{u-1} w_{u-1}`; the sign of the third coefficient is fixed by that
/// identity (checked against the solver iterates in the tests).
fn recursion_coefs(history: &LsqrHistory, u: isize) -> (f64, f64, f64) {
    let c1 = history.tau(u) * history.rb_pb(u - 2) * (1.0 + history.mu(u - 1).powi(2))
        / (history.tau(u - 1) * history.rb_pb(u - 1));
    let c2 = history.tau(u) / history.rb_pb(u - 1);
    let c3 = -history.mu(u - 2).powi(2) * history.tau(u) * history.rb_pb(u - 3)
        / (history.tau(u - 2) * history.rb_pb(u - 1));
    (c1, c2, c3)
}

/// Runs the dense equalization-matrix recursion and returns `L` at iteration
/// `iters`, so that `x_iters = L G^H y`.
///
/// Needs the dense normal matrix `aha = G^H G + sigma^2 I`; cost is
/// `O((MN)^2)` per iteration, so instances above `cap` are refused.
pub fn exact_equalizer_recursion(
    history: &LsqrHistory,
    aha: &CMat,
    iters: usize,
    cap: usize,
) -> Result<CMat> {
    let n = aha.nrows();
    if n != aha.ncols() {
        return Err(Error::Dimension("A^H A must be square".into()));
    }
    if n > cap {
        return Err(Error::SizeCap(format!(
            "exact equalizer recursion on {n} symbols exceeds the cap of {cap}"
        )));
    }
    if iters < 1 || iters > history.iters.len() {
        return Err(Error::Config(format!(
            "iteration count {iters} outside recorded history ({} iterations)",
            history.iters.len()
        )));
    }

    // L_1 = tau_1 / (rho_bar_0 phi_bar_0) I; L_u = 0 for u <= 0.
    let mut l1 = CMat::identity(n);
    l1.scale(Complex64::new(history.tau(1) / history.rb_pb(0), 0.0));
    if iters == 1 {
        return Ok(l1);
    }
    let mut l_m3 = CMat::zeros(n, n); // L_{u-3}
    let mut l_m2 = CMat::zeros(n, n); // L_{u-2}
    let mut l_m1 = l1; // L_{u-1}

    for u in 2..=iters as isize {
        let (c1, c2, c3) = recursion_coefs(history, u);
        let diff = l_m1.sub(&l_m2);
        let mut next = l_m1.clone();
        // next += (c1 I - c2 aha) diff
        let a_diff = aha.matmul(&diff);
        for i in 0..n {
            let nrow = next.row_mut(i);
            let drow = diff.row(i);
            let arow = a_diff.row(i);
            for j in 0..n {
                nrow[j] += c1 * drow[j] - c2 * arow[j];
            }
        }
        if c3 != 0.0 {
            let diff2 = l_m2.sub(&l_m3);
            for i in 0..n {
                let nrow = next.row_mut(i);
                let drow = diff2.row(i);
                for j in 0..n {
                    nrow[j] += c3 * drow[j];
                }
            }
        }
        l_m3 = std::mem::replace(&mut l_m2, std::mem::replace(&mut l_m1, next));
    }
    Ok(l_m1)
}

/// Per-symbol post-equalization MSE from the dense equalization matrix.
#[derive(Debug, Clone)]
pub struct ExactMse {
    /// Post-equalization channel gain per symbol.
    pub psi: Vec<f64>,
    /// Interference-plus-noise variance per symbol.
    pub nu2: Vec<f64>,
    /// MSE per symbol, `nu2 / psi^2` (infinite where `psi = 0`).
    pub gamma: Vec<f64>,
}

/// Computes `B = L G^H G`, `C = B L^H` and reads off per-symbol
/// `psi[n] = B[n,n]`, `nu[n]^2 = sum_{m != n} |B[n,m]|^2 + C[n,n] sigma^2`,
/// `gamma[n] = nu[n]^2 / psi[n]^2`.
pub fn exact_mse(l: &CMat, g: &CMat, sigma2: f64) -> ExactMse {
    let z = g.gram();
    let b = l.matmul(&z);
    let c = b.matmul(&l.adjoint());
    let n = b.nrows();
    let mut psi = Vec::with_capacity(n);
    let mut nu2 = Vec::with_capacity(n);
    let mut gamma = Vec::with_capacity(n);
    for i in 0..n {
        let p = b[(i, i)].re;
        let mut interference = 0.0;
        for j in 0..n {
            if j != i {
                interference += b[(i, j)].norm_sqr();
            }
        }
        let v = interference + c[(i, i)].re * sigma2;
        psi.push(p);
        nu2.push(v);
        gamma.push(if p == 0.0 { f64::INFINITY } else { v / (p * p) });
    }
    ExactMse { psi, nu2, gamma }
}

/// Eigenvalues of a BCCB matrix from its first column: the unnormalized 2-D
/// DFT of the column reshaped to the `M x N` grid (delay index fastest).
/// Entry `q M + p` matches the diagonal of
/// `(F_N (x) F_M) G (F_N (x) F_M)^H`.
pub fn bccb_eigenvalues(first_col: &[Complex64], m: usize, n: usize) -> Vec<Complex64> {
    assert_eq!(first_col.len(), m * n, "first column must have M N entries");
    let mut grid = first_col.to_vec();
    Dft2::new(m, n).fft2(&mut grid);
    grid
}

/// Scalar post-equalization MSE from the diagonalized recursion.
#[derive(Debug, Clone, Copy)]
pub struct ApproxMse {
    /// Post-equalization channel gain (same for every symbol).
    pub psi: f64,
    /// Interference-plus-noise variance.
    pub nu2: f64,
    /// MSE, `nu2 / psi^2`.
    pub gamma: f64,
    /// The residual-interference part `sum_{m >= 2} |B~[1, m]|^2`.
    pub interference_sum: f64,
    /// The noise part `C~[1, 1] sigma^2`.
    pub noise_term: f64,
}

/// Runs the `L_u` recursion on eigenvalue vectors and recovers the first row
/// of `B~` (and the diagonal mean of `C~`) with one 2-D DFT.
///
/// `C = B L^H` diagonalizes to `|Lambda_L|^2 |Lambda_G|^2`; row 1 of
/// `(F (x) F)^H Lambda (F (x) F)` is the 2-D DFT of the eigenvalue grid
/// scaled by `1/MN`, so `B~[1,1]` is the eigenvalue mean.
pub fn approx_mse(
    history: &LsqrHistory,
    lambda_g: &[Complex64],
    sigma2: f64,
    m: usize,
    n: usize,
    iters: usize,
) -> Result<ApproxMse> {
    let mn = m * n;
    if lambda_g.len() != mn {
        return Err(Error::Dimension(format!(
            "expected {mn} eigenvalues, got {}",
            lambda_g.len()
        )));
    }
    if iters < 1 || iters > history.iters.len() {
        return Err(Error::Config(format!(
            "iteration count {iters} outside recorded history ({} iterations)",
            history.iters.len()
        )));
    }

    let g2: Vec<f64> = lambda_g.iter().map(|l| l.norm_sqr()).collect();
    let lambda_a: Vec<f64> = g2.iter().map(|v| v + sigma2).collect();

    // Diagonal three-term recursion; the eigenvalues of L_u stay real because
    // every coefficient and Lambda_A are real.
    let l1 = history.tau(1) / history.rb_pb(0);
    let mut lam_m3 = vec![0.0f64; mn];
    let mut lam_m2 = vec![0.0f64; mn];
    let mut lam_m1 = vec![l1; mn];
    for u in 2..=iters as isize {
        let (c1, c2, c3) = recursion_coefs(history, u);
        let mut next = lam_m1.clone();
        for i in 0..mn {
            let diff = lam_m1[i] - lam_m2[i];
            next[i] += (c1 - c2 * lambda_a[i]) * diff + c3 * (lam_m2[i] - lam_m3[i]);
        }
        lam_m3 = std::mem::replace(&mut lam_m2, std::mem::replace(&mut lam_m1, next));
    }
    let lambda_l = lam_m1;

    let lambda_b: Vec<f64> = lambda_l.iter().zip(&g2).map(|(l, g)| l * g).collect();
    let lambda_c: Vec<f64> = lambda_l.iter().zip(&g2).map(|(l, g)| l * l * g).collect();

    // First row of B~ = (F (x) F)^H Lambda_B (F (x) F).
    let mut brow: Vec<Complex64> =
        lambda_b.iter().map(|&v| Complex64::new(v / mn as f64, 0.0)).collect();
    Dft2::new(m, n).fft2(&mut brow);

    let psi = brow[0].re;
    let interference_sum: f64 = brow[1..].iter().map(|v| v.norm_sqr()).sum();
    let noise_term = lambda_c.iter().sum::<f64>() / mn as f64 * sigma2;
    let nu2 = interference_sum + noise_term;
    let gamma = if psi == 0.0 { f64::INFINITY } else { nu2 / (psi * psi) };
    Ok(ApproxMse { psi, nu2, gamma, interference_sum, noise_term })
}

/// Which MSE computation `mlsqr` runs on top of the solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MseMode {
    /// Dense per-symbol MSE; refused above `exact_cap`.
    Exact,
    /// Diagonalized scalar MSE (the production path).
    Approx,
}

/// Parameters of one `mlsqr` invocation.
#[derive(Debug, Clone, Copy)]
pub struct MlsqrParams {
    pub sigma2: f64,
    /// Power fractions `(rho_1, rho_2)`; enables the per-user MSE split.
    pub rho: Option<(f64, f64)>,
    pub max_iter: usize,
    pub tol: f64,
    pub mode: MseMode,
    /// Size cap for the exact path.
    pub exact_cap: usize,
}

impl Default for MlsqrParams {
    fn default() -> Self {
        Self {
            sigma2: 0.0,
            rho: None,
            max_iter: 15,
            tol: 1e-2,
            mode: MseMode::Approx,
            exact_cap: 256,
        }
    }
}

/// The MSE block of a [`SolverReport`].
#[derive(Debug, Clone)]
pub enum MseReport {
    Exact(ExactMse),
    Approx(ApproxMse),
}

/// Equalized vector plus post-equalization MSE.
#[derive(Debug, Clone)]
pub struct SolverReport {
    pub x_hat: Vec<Complex64>,
    pub iterations_used: usize,
    pub residual_norm: f64,
    pub converged: bool,
    pub breakdown: bool,
    pub mse: MseReport,
    /// `(gamma_1, gamma_2)` with `gamma_j = nu2 / (rho_j psi^2)`, when power
    /// fractions were supplied in approximate mode.
    pub per_user_gamma: Option<(f64, f64)>,
}

impl SolverReport {
    /// The approximate-mode block, when present.
    pub fn approx(&self) -> Option<&ApproxMse> {
        match &self.mse {
            MseReport::Approx(a) => Some(a),
            MseReport::Exact(_) => None,
        }
    }
}

/// Equalizes `y` and computes the post-equalization MSE.
///
/// `first_col`, when supplied, skips the extra operator application that
/// would otherwise extract the first column of `G` for the BCCB
/// diagonalization.
pub fn mlsqr(
    g: &dyn LinOp,
    m: usize,
    n: usize,
    y: &[Complex64],
    first_col: Option<&[Complex64]>,
    params: &MlsqrParams,
) -> Result<SolverReport> {
    let mn = m * n;
    if g.cols() != mn {
        return Err(Error::Dimension(format!(
            "operator has {} columns but the grid has {mn} symbols",
            g.cols()
        )));
    }
    if let Some((r1, r2)) = params.rho {
        if !(r1 > 0.0) || !(r2 > 0.0) {
            return Err(Error::Config(format!("power fractions must be positive, got ({r1}, {r2})")));
        }
    }
    let sol = lsqr_solve(g, y, params.sigma2, params.max_iter, params.tol)?;
    let iters = sol.iterations_used.max(1);
    if sol.iterations_used == 0 {
        // Degenerate inputs (y = 0 or A^H y = 0): no recursion history to run
        // the MSE on; report an infinite-MSE sentinel.
        let mse = ApproxMse {
            psi: 0.0,
            nu2: 0.0,
            gamma: f64::INFINITY,
            interference_sum: 0.0,
            noise_term: 0.0,
        };
        return Ok(SolverReport {
            x_hat: sol.x,
            iterations_used: 0,
            residual_norm: sol.residual_norm,
            converged: sol.converged,
            breakdown: sol.history.breakdown,
            mse: MseReport::Approx(mse),
            per_user_gamma: None,
        });
    }

    let (mse, per_user_gamma) = match params.mode {
        MseMode::Approx => {
            let lambda_g = match first_col {
                Some(col) => bccb_eigenvalues(col, m, n),
                None => {
                    let mut e0 = vec![Complex64::ZERO; mn];
                    e0[0] = Complex64::ONE;
                    let mut col = vec![Complex64::ZERO; g.rows()];
                    g.apply(&e0, &mut col);
                    bccb_eigenvalues(&col[..mn], m, n)
                }
            };
            let a = approx_mse(&sol.history, &lambda_g, params.sigma2, m, n, iters)?;
            let per_user = params.rho.map(|(r1, r2)| {
                (a.nu2 / (r1 * a.psi * a.psi), a.nu2 / (r2 * a.psi * a.psi))
            });
            (MseReport::Approx(a), per_user)
        }
        MseMode::Exact => {
            if mn > params.exact_cap {
                return Err(Error::SizeCap(format!(
                    "exact MSE on {mn} symbols exceeds the cap of {}",
                    params.exact_cap
                )));
            }
            let g_dense = materialize(g);
            let mut aha = g_dense.gram();
            aha.add_scaled_identity(params.sigma2);
            let l = exact_equalizer_recursion(&sol.history, &aha, iters, params.exact_cap)?;
            (MseReport::Exact(exact_mse(&l, &g_dense, params.sigma2)), None)
        }
    };

    Ok(SolverReport {
        x_hat: sol.x,
        iterations_used: sol.iterations_used,
        residual_norm: sol.residual_norm,
        converged: sol.converged,
        breakdown: sol.history.breakdown,
        mse,
        per_user_gamma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_vec(n: usize, rng: &mut impl Rng) -> Vec<Complex64> {
        (0..n)
            .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect()
    }

    fn random_cmat(r: usize, c: usize, rng: &mut impl Rng) -> CMat {
        CMat::from_fn(r, c, |_, _| {
            Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        })
    }

    /// Dense damped least-squares oracle: solves (G^H G + s2 I) x = G^H y.
    fn ridge_solve(g: &CMat, y: &[Complex64], sigma2: f64) -> Vec<Complex64> {
        let mut aha = g.gram();
        aha.add_scaled_identity(sigma2);
        let rhs = g.adjoint().matvec(y);
        crate::linalg::Cholesky::factor(&aha).unwrap().solve_vec(&rhs)
    }

    /// Dense BCCB matrix with the given eigenvalue grid:
    /// G = (F (x) F)^H diag(lambda) (F (x) F).
    fn bccb_from_eigenvalues(lambda: &[Complex64], m: usize, n: usize) -> CMat {
        let mn = m * n;
        let d = Dft2::new(m, n);
        let mut g = CMat::zeros(mn, mn);
        for j in 0..mn {
            let mut col = vec![Complex64::ZERO; mn];
            col[j] = Complex64::ONE;
            d.fft2(&mut col);
            for (c, l) in col.iter_mut().zip(lambda) {
                *c *= l / mn as f64;
            }
            d.ifft2(&mut col);
            g.set_col(j, &col);
        }
        g
    }

    #[test]
    fn adjoint_consistency_of_dense_op() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let g = random_cmat(7, 5, &mut rng);
        let op = DenseOp(&g);
        for _ in 0..10 {
            let v = random_vec(5, &mut rng);
            let u = random_vec(7, &mut rng);
            let mut gv = vec![Complex64::ZERO; 7];
            let mut ghu = vec![Complex64::ZERO; 5];
            op.apply(&v, &mut gv);
            op.apply_adjoint(&u, &mut ghu);
            let lhs: Complex64 = gv.iter().zip(&u).map(|(a, b)| a * b.conj()).sum();
            let rhs: Complex64 = v.iter().zip(&ghu).map(|(a, b)| a * b.conj()).sum();
            assert!((lhs - rhs).norm() < 1e-10);
        }
    }

    #[test]
    fn identity_system_solves_in_two_iterations() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let g = CMat::identity(6);
        let y = random_vec(6, &mut rng);
        let sol = lsqr_solve(&DenseOp(&g), &y, 0.0, 10, 1e-12).unwrap();
        assert!(sol.iterations_used <= 2);
        for (a, b) in sol.x.iter().zip(&y) {
            assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn damped_identity_gives_ridge_shrinkage() {
        // G = I, sigma^2 = 1: x = y / (1 + sigma^2).
        let g = CMat::identity(2);
        let y = vec![Complex64::new(2.0, 0.0), Complex64::ZERO];
        let sol = lsqr_solve(&DenseOp(&g), &y, 1.0, 20, 1e-14).unwrap();
        assert!((sol.x[0] - Complex64::ONE).norm() < 1e-10, "got {:?}", sol.x);
        assert!(sol.x[1].norm() < 1e-12);
    }

    #[test]
    fn matches_dense_ridge_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..10 {
            let g = random_cmat(16, 16, &mut rng);
            let y = random_vec(16, &mut rng);
            let sol = lsqr_solve(&DenseOp(&g), &y, 0.1, 200, 1e-13).unwrap();
            let oracle = ridge_solve(&g, &y, 0.1);
            let err: f64 = sol
                .x
                .iter()
                .zip(&oracle)
                .map(|(a, b)| (a - b).norm_sqr())
                .sum::<f64>()
                .sqrt();
            assert!(err < 1e-6, "err = {err:e}");
        }
    }

    #[test]
    fn augmented_residual_is_monotone_and_matches_phi_bar() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let g = random_cmat(12, 12, &mut rng);
        let y = random_vec(12, &mut rng);
        let sigma2 = 0.3;
        let sol = lsqr_solve(&DenseOp(&g), &y, sigma2, 12, 0.0).unwrap();

        let mut prev = f64::INFINITY;
        for it in &sol.history.iters {
            let aug = it.phi_bar.abs();
            assert!(aug <= prev + 1e-12, "augmented residual grew: {aug} > {prev}");
            prev = aug;
        }

        // |phi_bar| at exit equals the augmented residual computed directly.
        let gx = g.matvec(&sol.x);
        let top: f64 = y.iter().zip(&gx).map(|(a, b)| (a - b).norm_sqr()).sum();
        let bot: f64 = sigma2 * sol.x.iter().map(|v| v.norm_sqr()).sum::<f64>();
        let direct = (top + bot).sqrt();
        let phi_bar = sol.history.iters.last().unwrap().phi_bar.abs();
        assert!((direct - phi_bar).abs() < 1e-9 * direct.max(1.0));
    }

    #[test]
    fn breakdown_flagged_and_solution_exact() {
        // Identity system hits beta = 0 at the first bidiagonalization step.
        let g = CMat::identity(4);
        let y = vec![Complex64::ONE; 4];
        let sol = lsqr_solve(&DenseOp(&g), &y, 0.0, 10, 0.0).unwrap();
        assert!(sol.history.breakdown);
        assert!(sol.residual_norm < 1e-12);
    }

    #[test]
    fn recursion_after_one_iteration_is_the_initialization() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let g = random_cmat(5, 5, &mut rng);
        let y = random_vec(5, &mut rng);
        let sol = lsqr_solve(&DenseOp(&g), &y, 0.2, 1, 0.0).unwrap();
        let mut aha = g.gram();
        aha.add_scaled_identity(0.2);
        let l = exact_equalizer_recursion(&sol.history, &aha, 1, 256).unwrap();
        let h = &sol.history;
        let expect = h.tau(1) / h.rb_pb(0);
        for i in 0..5 {
            for j in 0..5 {
                let want = if i == j { expect } else { 0.0 };
                assert!((l[(i, j)] - Complex64::new(want, 0.0)).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn equalizer_matrix_reproduces_iterate() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        for sigma2 in [0.0, 0.15] {
            for iters in [2usize, 3, 5, 8] {
                let g = random_cmat(8, 8, &mut rng);
                let y = random_vec(8, &mut rng);
                let sol = lsqr_solve(&DenseOp(&g), &y, sigma2, iters, 0.0).unwrap();
                let mut aha = g.gram();
                aha.add_scaled_identity(sigma2);
                let l =
                    exact_equalizer_recursion(&sol.history, &aha, sol.iterations_used, 256).unwrap();
                let x_via_l = l.matmul(&g.adjoint()).matvec(&y);
                let err: f64 = x_via_l
                    .iter()
                    .zip(&sol.x)
                    .map(|(a, b)| (a - b).norm_sqr())
                    .sum::<f64>()
                    .sqrt();
                assert!(err < 1e-8, "sigma2 = {sigma2}, iters = {iters}, err = {err:e}");
            }
        }
    }

    #[test]
    fn scaled_identity_converges_to_damped_inverse() {
        let c = Complex64::new(0.8, 0.3);
        let sigma2 = 0.25;
        let mut g = CMat::identity(4);
        g.scale(c);
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let y = random_vec(4, &mut rng);
        let sol = lsqr_solve(&DenseOp(&g), &y, sigma2, 30, 0.0).unwrap();
        let mut aha = g.gram();
        aha.add_scaled_identity(sigma2);
        let l = exact_equalizer_recursion(&sol.history, &aha, sol.iterations_used, 256).unwrap();
        let expect = 1.0 / (c.norm_sqr() + sigma2);
        for i in 0..4 {
            assert!((l[(i, i)] - Complex64::new(expect, 0.0)).norm() < 1e-8);
        }
    }

    #[test]
    fn exact_mse_identity_noiseless() {
        let g = CMat::identity(4);
        let y = vec![Complex64::ONE; 4];
        let sol = lsqr_solve(&DenseOp(&g), &y, 0.0, 10, 0.0).unwrap();
        let aha = g.gram();
        let l = exact_equalizer_recursion(&sol.history, &aha, sol.iterations_used, 256).unwrap();
        let mse = exact_mse(&l, &g, 0.0);
        for i in 0..4 {
            assert!((mse.psi[i] - 1.0).abs() < 1e-10);
            assert!(mse.nu2[i].abs() < 1e-12);
            assert!(mse.gamma[i].abs() < 1e-12);
        }
    }

    #[test]
    fn exact_mse_scaled_identity_closed_form() {
        let c = Complex64::new(0.6, -0.4);
        let sigma2 = 0.1;
        let mut g = CMat::identity(3);
        g.scale(c);
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let y = random_vec(3, &mut rng);
        let sol = lsqr_solve(&DenseOp(&g), &y, sigma2, 30, 0.0).unwrap();
        let mut aha = g.gram();
        aha.add_scaled_identity(sigma2);
        let l = exact_equalizer_recursion(&sol.history, &aha, sol.iterations_used, 256).unwrap();
        let mse = exact_mse(&l, &g, sigma2);
        let expect = sigma2 / c.norm_sqr();
        for i in 0..3 {
            assert!((mse.gamma[i] - expect).abs() < 1e-8, "gamma {} vs {expect}", mse.gamma[i]);
        }
    }

    #[test]
    fn exact_mse_matches_brute_force_decomposition() {
        // Independent oracle: W = L G^H explicitly, then signal gain,
        // interference power and noise power by direct matrix algebra.
        let mut rng = ChaCha8Rng::seed_from_u64(28);
        for (m, n) in [(2usize, 2usize), (4, 4)] {
            let mn = m * n;
            let g = random_cmat(mn, mn, &mut rng);
            let y = random_vec(mn, &mut rng);
            let sigma2 = 0.2;
            let sol = lsqr_solve(&DenseOp(&g), &y, sigma2, 6, 0.0).unwrap();
            let mut aha = g.gram();
            aha.add_scaled_identity(sigma2);
            let l = exact_equalizer_recursion(&sol.history, &aha, sol.iterations_used, 256).unwrap();
            let mse = exact_mse(&l, &g, sigma2);

            let w = l.matmul(&g.adjoint());
            let wg = w.matmul(&g);
            let wwh = w.matmul(&w.adjoint());
            for i in 0..mn {
                let psi = wg[(i, i)].re;
                let interference: f64 = (0..mn)
                    .filter(|&j| j != i)
                    .map(|j| wg[(i, j)].norm_sqr())
                    .sum();
                let noise = wwh[(i, i)].re * sigma2;
                let nu2 = interference + noise;
                assert!((mse.psi[i] - psi).abs() < 1e-8);
                assert!((mse.nu2[i] - nu2).abs() < 1e-8);
                assert!((mse.gamma[i] - nu2 / (psi * psi)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn bccb_eigenvalues_of_identity_are_ones() {
        let mut col = vec![Complex64::ZERO; 12];
        col[0] = Complex64::ONE;
        for l in bccb_eigenvalues(&col, 4, 3) {
            assert!((l - Complex64::ONE).norm() < 1e-12);
        }
    }

    #[test]
    fn bccb_eigenvalues_of_cyclic_shift() {
        // Single unit tap at delay 1, N = 1: eigenvalues e^{-j 2 pi k / M}.
        let m = 8;
        let mut col = vec![Complex64::ZERO; m];
        col[1] = Complex64::ONE;
        let lam = bccb_eigenvalues(&col, m, 1);
        for (k, l) in lam.iter().enumerate() {
            let expect = Complex64::from_polar(1.0, -std::f64::consts::TAU * k as f64 / m as f64);
            assert!((l - expect).norm() < 1e-12);
        }
    }

    #[test]
    fn bccb_eigenvalues_match_dense_diagonalization() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let (m, n) = (4usize, 4usize);
        let lambda = random_vec(m * n, &mut rng);
        let g = bccb_from_eigenvalues(&lambda, m, n);
        let from_col = bccb_eigenvalues(&g.col(0), m, n);
        for (a, b) in from_col.iter().zip(&lambda) {
            assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn diagonal_recursion_reproduces_dense_recursion_on_bccb() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let (m, n) = (4usize, 4usize);
        let mn = m * n;
        // Hermitian-ish eigenvalues keep the system well-conditioned.
        let lambda: Vec<Complex64> = (0..mn)
            .map(|_| Complex64::new(0.5 + rng.random::<f64>(), rng.random::<f64>() - 0.5))
            .collect();
        let g = bccb_from_eigenvalues(&lambda, m, n);
        let y = random_vec(mn, &mut rng);
        let sigma2 = 0.1;
        let sol = lsqr_solve(&DenseOp(&g), &y, sigma2, 8, 0.0).unwrap();

        let mut aha = g.gram();
        aha.add_scaled_identity(sigma2);
        let l_dense = exact_equalizer_recursion(&sol.history, &aha, sol.iterations_used, 256).unwrap();

        // Diagonalize the dense L and compare with the diagonal recursion.
        let lam_g = bccb_eigenvalues(&g.col(0), m, n);
        let g2: Vec<f64> = lam_g.iter().map(|v| v.norm_sqr()).collect();
        let lambda_a: Vec<f64> = g2.iter().map(|v| v + sigma2).collect();
        let h = &sol.history;
        let mut lam_m3 = vec![0.0f64; mn];
        let mut lam_m2 = vec![0.0f64; mn];
        let mut lam_m1 = vec![h.tau(1) / h.rb_pb(0); mn];
        for u in 2..=sol.iterations_used as isize {
            let (c1, c2, c3) = recursion_coefs(h, u);
            let mut next = lam_m1.clone();
            for i in 0..mn {
                next[i] += (c1 - c2 * lambda_a[i]) * (lam_m1[i] - lam_m2[i])
                    + c3 * (lam_m2[i] - lam_m3[i]);
            }
            lam_m3 = std::mem::replace(&mut lam_m2, std::mem::replace(&mut lam_m1, next));
        }

        let d = Dft2::new(m, n);
        // diag((F (x) F) L (F (x) F)^H) via applying to transformed basis.
        for idx in 0..mn {
            let mut e = vec![Complex64::ZERO; mn];
            e[idx] = Complex64::ONE;
            d.ifft2(&mut e);
            let le = l_dense.matvec(&e);
            let mut fle = le;
            d.fft2(&mut fle);
            let diag = fle[idx] / mn as f64;
            assert!(
                (diag - Complex64::new(lam_m1[idx], 0.0)).norm() < 1e-8,
                "eigen {idx}: dense {diag}, diagonal {}",
                lam_m1[idx]
            );
        }
    }

    #[test]
    fn approx_gamma_scalar_channel_closed_form() {
        let c = Complex64::new(1.2, -0.5);
        let sigma2 = 0.08;
        let (m, n) = (4usize, 2usize);
        let mn = m * n;
        let mut g = CMat::identity(mn);
        g.scale(c);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let y = random_vec(mn, &mut rng);
        let sol = lsqr_solve(&DenseOp(&g), &y, sigma2, 40, 0.0).unwrap();
        let lam = bccb_eigenvalues(&g.col(0), m, n);
        let a = approx_mse(&sol.history, &lam, sigma2, m, n, sol.iterations_used).unwrap();
        let expect = sigma2 / c.norm_sqr();
        assert!((a.gamma - expect).abs() < 1e-8, "gamma {} vs {expect}", a.gamma);
        assert!((a.gamma - a.nu2 / (a.psi * a.psi)).abs() < 1e-12);
    }

    #[test]
    fn approx_equals_exact_on_bccb_systems() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        for _ in 0..5 {
            let (m, n) = (4usize, 4usize);
            let mn = m * n;
            let lambda: Vec<Complex64> = (0..mn)
                .map(|_| Complex64::new(0.6 + rng.random::<f64>(), rng.random::<f64>() - 0.5))
                .collect();
            let g = bccb_from_eigenvalues(&lambda, m, n);
            let y = random_vec(mn, &mut rng);
            let sigma2 = 0.12;
            let sol = lsqr_solve(&DenseOp(&g), &y, sigma2, 10, 0.0).unwrap();

            let mut aha = g.gram();
            aha.add_scaled_identity(sigma2);
            let l = exact_equalizer_recursion(&sol.history, &aha, sol.iterations_used, 256).unwrap();
            let exact = exact_mse(&l, &g, sigma2);
            let lam_g = bccb_eigenvalues(&g.col(0), m, n);
            let approx =
                approx_mse(&sol.history, &lam_g, sigma2, m, n, sol.iterations_used).unwrap();

            for i in 0..mn {
                assert!(
                    (exact.psi[i] - approx.psi).abs() / approx.psi.abs() < 1e-6,
                    "psi[{i}] = {} vs {}",
                    exact.psi[i],
                    approx.psi
                );
                assert!(
                    (exact.nu2[i] - approx.nu2).abs() / approx.nu2.max(1e-30) < 1e-6,
                    "nu2[{i}] = {} vs {}",
                    exact.nu2[i],
                    approx.nu2
                );
                assert!(
                    (exact.gamma[i] - approx.gamma).abs() / approx.gamma.max(1e-30) < 1e-6,
                    "gamma[{i}] = {} vs {}",
                    exact.gamma[i],
                    approx.gamma
                );
            }
        }
    }

    #[test]
    fn mlsqr_per_user_split() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let (m, n) = (4usize, 2usize);
        let g = random_cmat(m * n, m * n, &mut rng);
        let y = random_vec(m * n, &mut rng);
        let params = MlsqrParams {
            sigma2: 0.1,
            rho: Some((0.5, 0.5)),
            max_iter: 15,
            tol: 0.0,
            ..Default::default()
        };
        let report = mlsqr(&DenseOp(&g), m, n, &y, None, &params).unwrap();
        let a = report.approx().unwrap();
        let (g1, g2) = report.per_user_gamma.unwrap();
        assert!((g1 - 2.0 * a.gamma).abs() < 1e-12);
        assert!((g2 - 2.0 * a.gamma).abs() < 1e-12);

        // 15 dB power gap: gamma_2 / gamma_1 = rho_1 / rho_2.
        let params = MlsqrParams { rho: Some((0.969, 0.031)), ..params };
        let report = mlsqr(&DenseOp(&g), m, n, &y, None, &params).unwrap();
        let (g1, g2) = report.per_user_gamma.unwrap();
        assert!((g2 / g1 - 0.969 / 0.031).abs() < 1e-9);
    }

    #[test]
    fn mlsqr_identity_noiseless() {
        let (m, n) = (2usize, 2usize);
        let g = CMat::identity(m * n);
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let y = random_vec(m * n, &mut rng);
        let params = MlsqrParams { sigma2: 0.0, max_iter: 10, tol: 1e-13, ..Default::default() };
        let report = mlsqr(&DenseOp(&g), m, n, &y, None, &params).unwrap();
        for (a, b) in report.x_hat.iter().zip(&y) {
            assert!((a - b).norm() < 1e-10);
        }
        assert!(report.approx().unwrap().gamma.abs() < 1e-10);
    }

    #[test]
    fn mlsqr_does_not_perturb_the_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let (m, n) = (4usize, 2usize);
        let g = random_cmat(m * n, m * n, &mut rng);
        let y = random_vec(m * n, &mut rng);
        let params = MlsqrParams { sigma2: 0.07, max_iter: 9, tol: 0.0, ..Default::default() };
        let report = mlsqr(&DenseOp(&g), m, n, &y, None, &params).unwrap();
        let plain = lsqr_solve(&DenseOp(&g), &y, 0.07, 9, 0.0).unwrap();
        assert_eq!(report.x_hat, plain.x, "x_hat must be bit-identical");
    }

    #[test]
    fn exact_mode_size_cap() {
        let g = CMat::identity(8);
        let y = vec![Complex64::ONE; 8];
        let params = MlsqrParams {
            mode: MseMode::Exact,
            exact_cap: 4,
            max_iter: 5,
            tol: 0.0,
            ..Default::default()
        };
        let err = mlsqr(&DenseOp(&g), 4, 2, &y, None, &params).unwrap_err();
        assert!(matches!(err, Error::SizeCap(_)));
    }
}
