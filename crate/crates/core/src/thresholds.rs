//! Detection-probability model and RZ threshold selection.
//!
//! Per-dimension PAM detection probabilities for the superimposed (User 1)
//! and interference-free (User 2) decisions, their QAM-level combination,
//! the tracked evolution of both users' post-equalization MSE across the
//! detector iterations, and the two threshold rules: the own-user threshold
//! solves `P_e(gamma, T) = P_e(W, 0)`, the cross-user threshold minimizes the
//! receiver's next-iteration tracked MSE via the closed-form derivative and
//! Brent-Dekker root finding.

use crate::grid::QamConstellation;
use crate::mlsqr::ApproxMse;
use crate::{Error, Result};

/// Which NOMA user; User 1 holds the larger power fraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum User {
    One,
    Two,
}

impl User {
    pub fn index(self) -> usize {
        match self {
            User::One => 0,
            User::Two => 1,
        }
    }

    pub fn other(self) -> User {
        match self {
            User::One => User::Two,
            User::Two => User::One,
        }
    }
}

/// Gaussian tail probability `Q(x) = erfc(x / sqrt(2)) / 2`.
pub fn gaussian_q(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// Standard normal density.
fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn check_prob_args(t: f64, gamma: f64) -> Result<()> {
    if t < 0.0 {
        return Err(Error::Domain(format!("threshold must be >= 0, got {t}")));
    }
    if !(gamma >= 0.0) {
        return Err(Error::Domain(format!("MSE must be >= 0, got {gamma}")));
    }
    Ok(())
}

/// Per-dimension noise deviation `sqrt(gamma / 2)`, floored at a tiny value
/// so the `gamma -> 0` limits come out of the Q-function evaluations instead
/// of NaNs.
fn sigma_dim(gamma: f64) -> f64 {
    (gamma / 2.0).sqrt().max(1e-160)
}

/// Per-dimension PAM detection probabilities for User 1, whose decisions are
/// made on the superimposed constellation.
///
/// `rho_ratio = sqrt(rho2 / rho1)` scales the interfering User 2 levels. The
/// correct-detection term is exact; the error term uses the nearest-neighbor
/// approximation. Both are clamped to [0, 1].
pub fn pam_probs_user1(
    t1: f64,
    gamma1: f64,
    c1: &QamConstellation,
    rho_ratio: f64,
) -> Result<(f64, f64)> {
    check_prob_args(t1, gamma1)?;
    let d = c1.half_distance;
    let side = c1.side() as f64;
    let a = c1.order as f64;
    let s = sigma_dim(gamma1);
    let half = c1.side() / 2;

    let q_a = |j: f64, l: f64| gaussian_q((d * ((2.0 * j - 1.0) - (2.0 * l - 1.0) * rho_ratio) - t1 / 2.0) / s);
    let q_b = |j: f64, l: f64| gaussian_q((d * ((2.0 * j - 1.0) + (2.0 * l - 1.0) * rho_ratio) - t1 / 2.0) / s);
    let q_c = |l: f64| gaussian_q((d * (1.0 - (2.0 * l - 1.0) * rho_ratio) + t1 / 2.0) / s);
    let q_d = |l: f64| gaussian_q((d * (1.0 + (2.0 * l - 1.0) * rho_ratio) + t1 / 2.0) / s);

    let mut sum_c = 0.0;
    let mut sum_e = 0.0;
    for li in 1..=half {
        let l = li as f64;
        sum_c += q_a(1.0, l) + q_b(1.0, l);
        sum_e += (side - 1.0) * (q_c(l) + q_d(l)) - (side - 2.0) * (q_a(2.0, l) + q_b(2.0, l));
    }
    let p_c = 1.0 - 2.0 * (side - 1.0) / a * sum_c;
    let p_e = 2.0 / a * sum_e;
    Ok((p_c.clamp(0.0, 1.0), p_e.clamp(0.0, 1.0)))
}

/// Per-dimension PAM detection probabilities for User 2 (decisions made
/// after the overlapping User 1 symbol has been cancelled).
pub fn pam_probs_user2(t2: f64, gamma2: f64, c2: &QamConstellation) -> Result<(f64, f64)> {
    check_prob_args(t2, gamma2)?;
    let d = c2.half_distance;
    let side = c2.side() as f64;
    let s = sigma_dim(gamma2);
    let p_c = 1.0 - 2.0 * (side - 1.0) / side * gaussian_q((d - t2 / 2.0) / s);
    let p_e = 2.0 / side
        * ((side - 1.0) * gaussian_q((d + t2 / 2.0) / s)
            - (side - 2.0) * gaussian_q((3.0 * d - t2 / 2.0) / s));
    Ok((p_c.clamp(0.0, 1.0), p_e.clamp(0.0, 1.0)))
}

/// Derivatives of the QAM-level `(P_c1, P_e1)` with respect to `T_1`.
///
/// These differentiate the implemented probability expressions directly (the
/// chain rule through every Q argument), so the optimizer's stationary
/// points are stationary points of the evaluated objective.
pub fn qam_prob_derivatives_user1(
    t1: f64,
    gamma1: f64,
    c1: &QamConstellation,
    rho_ratio: f64,
) -> Result<(f64, f64)> {
    check_prob_args(t1, gamma1)?;
    let d = c1.half_distance;
    let side = c1.side() as f64;
    let a = c1.order as f64;
    let s = sigma_dim(gamma1);
    let half = c1.side() / 2;

    let arg_a = |j: f64, l: f64| (d * ((2.0 * j - 1.0) - (2.0 * l - 1.0) * rho_ratio) - t1 / 2.0) / s;
    let arg_b = |j: f64, l: f64| (d * ((2.0 * j - 1.0) + (2.0 * l - 1.0) * rho_ratio) - t1 / 2.0) / s;
    let arg_c = |l: f64| (d * (1.0 - (2.0 * l - 1.0) * rho_ratio) + t1 / 2.0) / s;
    let arg_d = |l: f64| (d * (1.0 + (2.0 * l - 1.0) * rho_ratio) + t1 / 2.0) / s;

    let mut sum_pc = 0.0; // d/dT of sum [q_a(1,l) + q_b(1,l)]
    let mut dsum_e = 0.0;
    for li in 1..=half {
        let l = li as f64;
        // -T/2 inside the argument: dQ/dT = +pdf/(2s).
        sum_pc += (normal_pdf(arg_a(1.0, l)) + normal_pdf(arg_b(1.0, l))) / (2.0 * s);
        // q_c, q_d carry +T/2: dQ/dT = -pdf/(2s); q_a(2,l), q_b(2,l) carry -T/2.
        dsum_e += -(side - 1.0) * (normal_pdf(arg_c(l)) + normal_pdf(arg_d(l))) / (2.0 * s)
            - (side - 2.0) * (normal_pdf(arg_a(2.0, l)) + normal_pdf(arg_b(2.0, l))) / (2.0 * s);
    }
    let (pc_pam, _) = pam_probs_user1(t1, gamma1, c1, rho_ratio)?;
    let dpc_pam = -2.0 * (side - 1.0) / a * sum_pc;
    let dpe_pam = 2.0 / a * dsum_e;
    Ok((2.0 * pc_pam * dpc_pam, 2.0 * dpe_pam))
}

/// Derivatives of the QAM-level `(P_c2, P_e2)` with respect to `T_2`.
pub fn qam_prob_derivatives_user2(
    t2: f64,
    gamma2: f64,
    c2: &QamConstellation,
) -> Result<(f64, f64)> {
    check_prob_args(t2, gamma2)?;
    let d = c2.half_distance;
    let side = c2.side() as f64;
    let s = sigma_dim(gamma2);
    let dpc_pam = -(side - 1.0) / side * normal_pdf((d - t2 / 2.0) / s) / s;
    let dpe_pam = -((side - 1.0) * normal_pdf((d + t2 / 2.0) / s)
        + (side - 2.0) * normal_pdf((3.0 * d - t2 / 2.0) / s))
        / (side * s);
    let (pc_pam, _) = pam_probs_user2(t2, gamma2, c2)?;
    Ok((2.0 * pc_pam * dpc_pam, 2.0 * dpe_pam))
}

/// QAM-level outcome probabilities of one RZ decision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbTriple {
    pub p_correct: f64,
    pub p_error: f64,
    pub p_undetected: f64,
    /// Set when a clamp fired while forming the triple.
    pub clamped: bool,
}

impl ProbTriple {
    /// The all-undetected triple; also the convention for iterations `k <= 0`.
    pub fn undetected() -> Self {
        Self { p_correct: 0.0, p_error: 0.0, p_undetected: 1.0, clamped: false }
    }

    pub fn p_detected(&self) -> f64 {
        self.p_correct + self.p_error
    }
}

/// Combines per-dimension PAM probabilities into the QAM triple:
/// `P_c = P_C_PAM^2`, `P_e = 2 P_E_PAM`, `P_u = 1 - P_c - P_e`.
///
/// The nearest-neighbor error term can push the remainder slightly negative
/// at extreme arguments; the triple is clamped back onto the simplex and the
/// event is flagged.
pub fn to_qam(pc_pam: f64, pe_pam: f64) -> ProbTriple {
    let p_correct = (pc_pam * pc_pam).clamp(0.0, 1.0);
    let mut p_error = (2.0 * pe_pam).clamp(0.0, 1.0);
    let mut clamped = false;
    if p_correct + p_error > 1.0 {
        p_error = 1.0 - p_correct;
        clamped = true;
    }
    let mut p_undetected = 1.0 - p_correct - p_error;
    if p_undetected < 0.0 {
        p_undetected = 0.0;
        clamped = true;
    }
    ProbTriple { p_correct, p_error, p_undetected, clamped }
}

/// Tracked MSE components of one user.
#[derive(Debug, Clone, Copy)]
pub struct UserMse {
    /// MSE from undetected User 1 symbols.
    pub omega: f64,
    /// MSE from undetected User 2 symbols (whose User 1 partner is undetected).
    pub psi_u: f64,
    /// MSE from undetected User 2 symbols whose User 1 partner is detected.
    pub psi_d: f64,
    /// AWGN floor; constant across iterations.
    pub w: f64,
    /// Tracked MSE at the current iteration.
    pub gamma: f64,
}

/// Evolution of both users' tracked MSE across detector iterations.
///
/// Both users are tracked regardless of which receiver runs the detector:
/// the cross-threshold objective at either receiver needs the other user's
/// MSE to evaluate that user's detection probabilities.
#[derive(Debug, Clone)]
pub struct MseTracker {
    users: [UserMse; 2],
    /// Mean interferer energies `E_i = 4 d_i^2`.
    e: [f64; 2],
    rho: (f64, f64),
    /// Probability triples `(user 1, user 2)` recorded per iteration.
    hist: Vec<(ProbTriple, ProbTriple)>,
}

impl MseTracker {
    /// Initializes the tracker from the first mLSQR report:
    /// `Omega_i = rho_1 S / (rho_i psi^2)`, `Psi_{i,u} = rho_2 S / (rho_i psi^2)`,
    /// `W_i = noise / (rho_i psi^2)`, `gamma_i = Omega_i + Psi_{i,u} + W_i`.
    pub fn from_report(
        report: &ApproxMse,
        rho1: f64,
        rho2: f64,
        c1: &QamConstellation,
        c2: &QamConstellation,
    ) -> Result<Self> {
        if !(rho1 > 0.0 && rho2 > 0.0) {
            return Err(Error::Config(format!("power fractions must be positive, got ({rho1}, {rho2})")));
        }
        let psi2 = report.psi * report.psi;
        if !(psi2 > 0.0) || !psi2.is_finite() {
            return Err(Error::Domain(format!(
                "post-equalization gain is degenerate (psi = {})",
                report.psi
            )));
        }
        let s = report.interference_sum;
        let noise = report.noise_term;
        let mk = |rho_i: f64| {
            let omega = rho1 * s / (rho_i * psi2);
            let psi_u = rho2 * s / (rho_i * psi2);
            let w = noise / (rho_i * psi2);
            UserMse { omega, psi_u, psi_d: 0.0, w, gamma: omega + psi_u + w }
        };
        Ok(Self {
            users: [mk(rho1), mk(rho2)],
            e: [
                4.0 * c1.half_distance * c1.half_distance,
                4.0 * c2.half_distance * c2.half_distance,
            ],
            rho: (rho1, rho2),
            hist: Vec::new(),
        })
    }

    /// Current iteration index (1-based); the next `advance` records this
    /// iteration's probabilities.
    pub fn k(&self) -> usize {
        self.hist.len() + 1
    }

    pub fn user(&self, u: User) -> &UserMse {
        &self.users[u.index()]
    }

    pub fn gamma(&self, u: User) -> f64 {
        self.users[u.index()].gamma
    }

    pub fn w_floor(&self, u: User) -> f64 {
        self.users[u.index()].w
    }

    /// Overrides the tracked MSE values (the `refresh_gamma_from_solver`
    /// detector option); the floor clamp still applies.
    pub fn refresh_gammas(&mut self, gamma1: f64, gamma2: f64) {
        self.users[0].gamma = gamma1.max(self.users[0].w);
        self.users[1].gamma = gamma2.max(self.users[1].w);
    }

    /// Probability triple of user `u` at iteration `k` (1-based), with the
    /// all-undetected convention for `k <= 0`.
    fn triple_at(&self, u: User, k: isize) -> ProbTriple {
        if k >= 1 && (k as usize) <= self.hist.len() {
            let pair = self.hist[k as usize - 1];
            match u {
                User::One => pair.0,
                User::Two => pair.1,
            }
        } else {
            ProbTriple::undetected()
        }
    }

    /// `P_{u,1}^{(1)}`: iteration 1's value, live when evolving iteration 1.
    fn pu1_first(&self, p1_current: &ProbTriple) -> f64 {
        if self.hist.is_empty() {
            p1_current.p_undetected
        } else {
            self.hist[0].0.p_undetected
        }
    }

    /// Next-iteration tracked MSE of both users, given this iteration's
    /// probability triples, without mutating the tracker. Both values are
    /// clamped at their AWGN floor.
    pub fn preview_next_gammas(&self, p1: &ProbTriple, p2: &ProbTriple) -> (f64, f64) {
        let k = self.k() as isize;
        let pd1_prev = self.triple_at(User::One, k - 1).p_detected();
        let (e1, e2) = (self.e[0], self.e[1]);

        let u1 = &self.users[0];
        let bracket1 = u1.psi_u * pd1_prev + u1.psi_d;
        let g1 = u1.gamma - u1.omega * p1.p_correct + (e1 - 1.0) * u1.omega * p1.p_error
            - bracket1 * p2.p_correct
            + (e2 - 1.0) * bracket1 * p2.p_error;

        let u2 = &self.users[1];
        let bracket2 = u2.psi_u * pd1_prev + u2.psi_d;
        // Overlap-error inflation: a wrongly cancelled User 1 symbol leaves
        // residual power rho_1 E_1 at the co-located position, which is
        // rho_1/rho_2 E_1 in User 2 units. (The printed recursion carries the
        // inverted fraction, which would make User 1 errors look free and
        // collapses the T_1 selection at the User 2 receiver.)
        let overlap = self.rho.0 / self.rho.1 * e1 * self.pu1_first(p1);
        let g2 = u2.gamma - u2.omega * p1.p_correct
            + ((e1 - 1.0) * u2.omega + overlap) * p1.p_error
            - bracket2 * p2.p_correct
            + (e2 - 1.0) * bracket2 * p2.p_error;

        (g1.max(u1.w), g2.max(u2.w))
    }

    /// Records this iteration's probability triples and advances every
    /// tracked component one iteration.
    pub fn advance(&mut self, p1: ProbTriple, p2: ProbTriple) {
        let (g1, g2) = self.preview_next_gammas(&p1, &p2);
        let k = self.k() as isize;
        // Lagged gates: Psi_u shrinks by P_{u,2}^{(k-1)}, the detected-partner
        // pool grows from decisions one iteration behind.
        let pu2_lag = self.triple_at(User::Two, k - 1).p_undetected;
        let pd1_lag = self.triple_at(User::One, k - 1).p_detected();
        for u in &mut self.users {
            u.psi_d = u.psi_d + u.psi_u * pd1_lag * p2.p_undetected - u.psi_d * p2.p_detected();
            u.psi_u *= pu2_lag;
            u.omega *= p1.p_undetected;
        }
        self.users[0].gamma = g1;
        self.users[1].gamma = g2;
        self.hist.push((p1, p2));
    }

    pub fn history(&self) -> &[(ProbTriple, ProbTriple)] {
        &self.hist
    }
}

/// Standard Brent-Dekker root finding on a bracketing interval.
pub fn brent_root(f: impl Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> Result<f64> {
    let (mut a, mut b) = (lo, hi);
    let (mut fa, mut fb) = (f(a), f(b));
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa * fb > 0.0 {
        return Err(Error::Bracket { lo, hi });
    }
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = b - a;
    for _ in 0..200 {
        if fb.abs() > fc.abs() {
            // b is the best estimate; keep it that way.
            (a, b, c) = (b, c, b);
            (fa, fb, fc) = (fb, fc, fb);
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * tol;
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol1 || fb == 0.0 {
            return Ok(b);
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            // Inverse quadratic interpolation (secant when a == c).
            let s = fb / fa;
            let (mut p, mut q) = if a == c {
                (2.0 * xm * s, 1.0 - s)
            } else {
                let q = fa / fc;
                let r = fb / fc;
                (
                    s * (2.0 * xm * q * (q - r) - (b - a) * (r - 1.0)),
                    (q - 1.0) * (r - 1.0) * (s - 1.0),
                )
            };
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            if 2.0 * p < (3.0 * xm * q - (tol1 * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol1 { d } else { tol1.copysign(xm) };
        fb = f(b);
        if (fb > 0.0) == (fc > 0.0) {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
    }
    Ok(b)
}

/// QAM-level error probability of user `u` at `(gamma, t)`: `2 P_E_PAM`,
/// without the simplex clamp of [`to_qam`] so it stays strictly monotone.
fn p_error_qam(
    u: User,
    t: f64,
    gamma: f64,
    c: &QamConstellation,
    rho_ratio: f64,
) -> Result<f64> {
    let (_, pe) = match u {
        User::One => pam_probs_user1(t, gamma, c, rho_ratio)?,
        User::Two => pam_probs_user2(t, gamma, c)?,
    };
    Ok((2.0 * pe).min(1.0))
}

/// Chooses the own-user threshold: the `T` at which the error probability
/// under the current MSE matches the noise-floor error probability at zero
/// threshold, `P_e(gamma_k, T) = P_e(W, 0)`.
///
/// `P_e` is strictly decreasing in `T`, so the root is unique when it exists.
/// Returns 0 when the MSE has already reached the floor, and the full-cell
/// width `2 d` when even the widest zone cannot shrink the error enough.
pub fn solve_own_threshold(
    gamma_k: f64,
    w_floor: f64,
    c: &QamConstellation,
    user: User,
    rho_ratio: f64,
) -> Result<f64> {
    if !(w_floor >= 0.0) || gamma_k < w_floor {
        return Err(Error::Domain(format!(
            "need gamma_k >= w_floor >= 0, got gamma_k = {gamma_k}, w_floor = {w_floor}"
        )));
    }
    let target = p_error_qam(user, 0.0, w_floor, c, rho_ratio)?;
    let f = |t: f64| -> f64 {
        p_error_qam(user, t, gamma_k, c, rho_ratio).unwrap_or(f64::NAN) - target
    };
    if f(0.0) <= 0.0 {
        return Ok(0.0);
    }
    let t_max = 2.0 * c.half_distance;
    if f(t_max) > 0.0 {
        return Ok(t_max);
    }
    brent_root(f, 0.0, t_max, 1e-10)
}

/// Minimizes the receiver's next-iteration tracked MSE over the *other*
/// user's threshold.
///
/// At User 1 the variable is `T_2`; at User 2 it is `T_1`. Stationary points
/// of the closed-form derivative are located by scanning for sign changes
/// and polishing each with Brent-Dekker; the returned threshold is the
/// candidate (including both endpoints) with the smallest objective value.
/// When the objective does not depend on the threshold at all, 0 is returned.
pub fn optimize_cross_threshold(
    tracker: &MseTracker,
    at_user: User,
    own_probs: &ProbTriple,
    c1: &QamConstellation,
    c2: &QamConstellation,
    rho_ratio: f64,
) -> Result<f64> {
    let k = tracker.k();
    let (e1, e2) = (tracker.e[0], tracker.e[1]);
    let overlap_ratio = tracker.rho.0 / tracker.rho.1;

    match at_user {
        User::One => {
            // Objective: next gamma_1 as a function of T_2.
            let gamma2 = tracker.gamma(User::Two);
            let pd1_prev = tracker.triple_at(User::One, k as isize - 1).p_detected();
            let u1 = tracker.user(User::One);
            let bracket = u1.psi_u * pd1_prev + u1.psi_d;
            let t_max = 2.0 * c2.half_distance;
            if bracket == 0.0 {
                return Ok(0.0);
            }
            let objective = |t: f64| -> Result<f64> {
                let (pc, pe) = pam_probs_user2(t, gamma2, c2)?;
                Ok(tracker.preview_next_gammas(own_probs, &to_qam(pc, pe)).0)
            };
            let derivative = |t: f64| -> Result<f64> {
                let (dpc, dpe) = qam_prob_derivatives_user2(t, gamma2, c2)?;
                Ok(bracket * ((e2 - 1.0) * dpe - dpc))
            };
            minimize_scan(objective, derivative, t_max)
        }
        User::Two => {
            // Objective: next gamma_2 as a function of T_1.
            let gamma1 = tracker.gamma(User::One);
            let u2 = tracker.user(User::Two);
            let t_max = 2.0 * c1.half_distance;
            let placeholder = ProbTriple::undetected();
            let objective = |t: f64| -> Result<f64> {
                let (pc, pe) = pam_probs_user1(t, gamma1, c1, rho_ratio)?;
                Ok(tracker.preview_next_gammas(&to_qam(pc, pe), &placeholder).1)
            };
            let first_iteration = k == 1;
            let derivative = |t: f64| -> Result<f64> {
                let (dpc, dpe) = qam_prob_derivatives_user1(t, gamma1, c1, rho_ratio)?;
                let (pc, pe) = pam_probs_user1(t, gamma1, c1, rho_ratio)?;
                let triple = to_qam(pc, pe);
                let pu1_first = tracker.pu1_first(&triple);
                let coef_e = (e1 - 1.0) * u2.omega + overlap_ratio * e1 * pu1_first;
                let mut g = coef_e * dpe - u2.omega * dpc;
                if first_iteration {
                    // P_{u,1}^{(1)} is this iteration's own value, so the
                    // overlap-error term needs the product rule.
                    let dpu = -(dpc + dpe);
                    g += overlap_ratio * e1 * dpu * triple.p_error;
                }
                Ok(g)
            };
            if u2.omega == 0.0 && overlap_ratio * e1 == 0.0 {
                return Ok(0.0);
            }
            minimize_scan(objective, derivative, t_max)
        }
    }
}

/// Scans `[0, t_max]` for sign changes of the derivative, polishes each root
/// with Brent-Dekker, and returns the candidate with the smallest objective.
fn minimize_scan(
    objective: impl Fn(f64) -> Result<f64>,
    derivative: impl Fn(f64) -> Result<f64>,
    t_max: f64,
) -> Result<f64> {
    const SCAN: usize = 256;
    let mut candidates = vec![0.0, t_max];
    let mut prev_t = 0.0;
    let mut prev_g = derivative(0.0)?;
    for i in 1..=SCAN {
        let t = t_max * i as f64 / SCAN as f64;
        let g = derivative(t)?;
        if prev_g == 0.0 {
            candidates.push(prev_t);
        } else if prev_g * g < 0.0 {
            candidates.push(brent_root(|x| derivative(x).unwrap_or(f64::NAN), prev_t, t, 1e-10)?);
        }
        prev_t = t;
        prev_g = g;
    }
    let mut best_t = 0.0;
    let mut best_val = f64::INFINITY;
    for t in candidates {
        let val = objective(t)?;
        if val < best_val {
            best_val = val;
            best_t = t;
        }
    }
    Ok(best_t)
}
