//! Iterative reliability-zone detection with symbol-level interference
//! cancellation at one user's receiver.
//!
//! Each outer iteration equalizes the running received vector with mLSQR,
//! selects the two RZ thresholds (own user via the noise-floor error match,
//! other user via the tracked-MSE minimization, or both via the naive
//! geometric schedule), quantizes the estimates that fall outside the
//! unreliable zone, and cancels their contribution from the received vector.
//! User 2 symbols only become candidates once the overlapping User 1 symbol
//! has been detected on an earlier iteration.

use num_complex::Complex64;

use crate::grid::{is_unreliable, quantize, QamConstellation, ZoneRule};
use crate::mlsqr::{mlsqr, LinOp, MlsqrParams, MseMode};
use crate::thresholds::{
    optimize_cross_threshold, pam_probs_user1, pam_probs_user2, solve_own_threshold, to_qam,
    MseTracker, ProbTriple, User,
};
use crate::{Error, Result};

/// How the RZ thresholds are chosen each iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdPolicy {
    /// Own threshold from the noise-floor error match, cross threshold from
    /// the tracked-MSE minimization.
    Optimized,
    /// Pre-determined geometric schedule `T^(k) = factor * d * (1 - k/K)`.
    Naive,
}

#[derive(Debug, Clone, Copy)]
pub struct DetectorConfig {
    /// Which user's receiver runs the detection.
    pub user: User,
    /// Maximum outer iterations `K`.
    pub max_outer: usize,
    pub policy: ThresholdPolicy,
    /// Naive-schedule starting scale; 2.0 gives `T^(1)` one full decision cell.
    pub naive_start_factor: f64,
    pub zone_rule: ZoneRule,
    /// mLSQR iteration budget `U`.
    pub solver_max_iter: usize,
    /// mLSQR residual tolerance.
    pub solver_tol: f64,
    /// Replace the tracked MSE with the solver's per-iteration estimate
    /// instead of evolving it analytically.
    pub refresh_gamma_from_solver: bool,
    /// Track observed detected fractions instead of the analytic triples
    /// (diagnostics only).
    pub empirical_probabilities: bool,
}

impl DetectorConfig {
    pub fn new(user: User) -> Self {
        Self {
            user,
            max_outer: 10,
            policy: ThresholdPolicy::Optimized,
            naive_start_factor: 2.0,
            zone_rule: ZoneRule::Or,
            solver_max_iter: 15,
            solver_tol: 1e-2,
            refresh_gamma_from_solver: false,
            empirical_probabilities: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.max_outer < 1 {
            return Err(Error::Config("detector needs at least one iteration".into()));
        }
        if !(self.naive_start_factor > 0.0) {
            return Err(Error::Config(format!(
                "naive start factor must be positive, got {}",
                self.naive_start_factor
            )));
        }
        Ok(())
    }
}

/// Per-iteration detector diagnostics.
#[derive(Debug, Clone)]
pub struct IterationDiag {
    pub t1: f64,
    pub t2: f64,
    /// Indices newly detected this iteration, per user.
    pub newly_reliable_1: Vec<usize>,
    pub newly_reliable_2: Vec<usize>,
    /// Tracked MSE values used for this iteration's thresholds.
    pub gamma1: f64,
    pub gamma2: f64,
}

/// Output of one detection run.
#[derive(Debug, Clone)]
pub struct DetectionResult {
    /// Hard decisions for the receiver's own user; every entry is a
    /// constellation point.
    pub x_hat: Vec<Complex64>,
    pub iterations_used: usize,
    pub diagnostics: Vec<IterationDiag>,
    /// Symbols force-quantized after the loop because they never left the
    /// unreliable zone.
    pub undetected_at_exit: usize,
}

/// Naive threshold schedule `T = factor * d * (1 - k / k_max)`.
pub fn naive_threshold(k: usize, k_max: usize, d: f64, start_factor: f64) -> f64 {
    start_factor * d * (1.0 - k as f64 / k_max as f64)
}

/// Splits `candidates` into the reliable ones (outside the unreliable zone at
/// threshold `t`) and their quantized values.
pub fn rz_partition(
    x_tilde: &[Complex64],
    candidates: &[usize],
    t: f64,
    c: &QamConstellation,
    rule: ZoneRule,
) -> (Vec<usize>, Vec<Complex64>) {
    let mut reliable = Vec::new();
    let mut values = Vec::new();
    for &idx in candidates {
        if !is_unreliable(x_tilde[idx], t, c, rule) {
            reliable.push(idx);
            values.push(quantize(x_tilde[idx], c));
        }
    }
    (reliable, values)
}

/// `y_next = y_k - G (sqrt(rho1) xq1 + sqrt(rho2) xq2)`.
///
/// `xq1`/`xq2` are zero except at the newly quantized positions.
pub fn cancel_interference(
    y_k: &[Complex64],
    g: &dyn LinOp,
    xq1: &[Complex64],
    xq2: &[Complex64],
    rho1: f64,
    rho2: f64,
) -> Vec<Complex64> {
    let (a1, a2) = (rho1.sqrt(), rho2.sqrt());
    let combined: Vec<Complex64> =
        xq1.iter().zip(xq2).map(|(q1, q2)| a1 * q1 + a2 * q2).collect();
    if combined.iter().all(|v| *v == Complex64::ZERO) {
        return y_k.to_vec();
    }
    let mut gx = vec![Complex64::ZERO; g.rows()];
    g.apply(&combined, &mut gx);
    y_k.iter().zip(&gx).map(|(y, g)| y - g).collect()
}

/// Scales the analytic `(P_c, P_e)` so the detected mass matches the
/// observed reliable fraction; used only when `empirical_probabilities` is on.
fn empirical_triple(analytic: ProbTriple, reliable: usize, candidates: usize) -> ProbTriple {
    if candidates == 0 {
        return analytic;
    }
    let observed = reliable as f64 / candidates as f64;
    let model = analytic.p_detected();
    if model <= 0.0 {
        return ProbTriple {
            p_correct: observed,
            p_error: 0.0,
            p_undetected: 1.0 - observed,
            clamped: analytic.clamped,
        };
    }
    let scale = observed / model;
    ProbTriple {
        p_correct: analytic.p_correct * scale,
        p_error: analytic.p_error * scale,
        p_undetected: 1.0 - observed,
        clamped: analytic.clamped,
    }
}

/// Runs the full iterative RZ detection loop at the configured user's
/// receiver and returns that user's hard decisions.
pub fn detect(
    g: &dyn LinOp,
    m: usize,
    n: usize,
    y: &[Complex64],
    rho: (f64, f64),
    sigma2: f64,
    cfg: &DetectorConfig,
    c1: &QamConstellation,
    c2: &QamConstellation,
) -> Result<DetectionResult> {
    cfg.validate()?;
    let mn = m * n;
    if g.cols() != mn || g.rows() != mn {
        return Err(Error::Dimension(format!(
            "effective channel must be {mn}x{mn}, got {}x{}",
            g.rows(),
            g.cols()
        )));
    }
    if y.len() != mn {
        return Err(Error::Dimension(format!("y has length {}, expected {mn}", y.len())));
    }
    let (rho1, rho2) = rho;
    if !(rho1 > rho2 && rho2 > 0.0) || (rho1 + rho2 - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "power fractions must satisfy rho1 > rho2 > 0 and sum to 1, got ({rho1}, {rho2})"
        )));
    }
    let rho_ratio = (rho2 / rho1).sqrt();
    let (s1, s2) = (rho1.sqrt(), rho2.sqrt());

    let mut first_col = vec![Complex64::ZERO; mn];
    {
        let mut e0 = vec![Complex64::ZERO; mn];
        e0[0] = Complex64::ONE;
        g.apply(&e0, &mut first_col);
    }
    let solver_params = MlsqrParams {
        sigma2,
        rho: Some(rho),
        max_iter: cfg.solver_max_iter,
        tol: cfg.solver_tol,
        mode: MseMode::Approx,
        exact_cap: usize::MAX,
    };

    let mut undetected1 = vec![true; mn];
    let mut undetected2 = vec![true; mn];
    let mut detected1 = vec![false; mn];
    let mut x_hat1 = vec![Complex64::ZERO; mn];
    let mut x_hat2 = vec![Complex64::ZERO; mn];
    let mut y_k = y.to_vec();
    let mut last_x_sup = vec![Complex64::ZERO; mn];
    let mut tracker: Option<MseTracker> = None;
    let mut diagnostics = Vec::new();
    let mut iterations_used = 0;

    for k in 1..=cfg.max_outer {
        let report = mlsqr(g, m, n, &y_k, Some(&first_col), &solver_params)?;
        let approx = *report.approx().expect("detector runs the approximate MSE path");
        last_x_sup.copy_from_slice(&report.x_hat);

        match &mut tracker {
            None => tracker = Some(MseTracker::from_report(&approx, rho1, rho2, c1, c2)?),
            Some(tr) if cfg.refresh_gamma_from_solver => {
                let (g1, g2) = report
                    .per_user_gamma
                    .expect("per-user MSE is available with power fractions");
                tr.refresh_gammas(g1, g2);
            }
            Some(_) => {}
        }
        let tr = tracker.as_mut().expect("tracker initialized at k = 1");
        let (gamma1, gamma2) = (tr.gamma(User::One), tr.gamma(User::Two));

        let (t1, t2) = match cfg.policy {
            ThresholdPolicy::Naive => (
                naive_threshold(k, cfg.max_outer, c1.half_distance, cfg.naive_start_factor),
                naive_threshold(k, cfg.max_outer, c2.half_distance, cfg.naive_start_factor),
            ),
            ThresholdPolicy::Optimized => match cfg.user {
                User::One => {
                    let t1 =
                        solve_own_threshold(gamma1, tr.w_floor(User::One), c1, User::One, rho_ratio)?;
                    let (pc, pe) = pam_probs_user1(t1, gamma1, c1, rho_ratio)?;
                    let own = to_qam(pc, pe);
                    let t2 = optimize_cross_threshold(tr, User::One, &own, c1, c2, rho_ratio)?;
                    (t1, t2)
                }
                User::Two => {
                    let t1 = optimize_cross_threshold(
                        tr,
                        User::Two,
                        &ProbTriple::undetected(),
                        c1,
                        c2,
                        rho_ratio,
                    )?;
                    let t2 =
                        solve_own_threshold(gamma2, tr.w_floor(User::Two), c2, User::Two, rho_ratio)?;
                    (t1, t2)
                }
            },
        };

        // Candidate sub-vectors: undetected User 1 symbols, and undetected
        // User 2 symbols whose User 1 partner is already detected.
        let cand1: Vec<usize> = (0..mn).filter(|&i| undetected1[i]).collect();
        let cand2: Vec<usize> = (0..mn).filter(|&i| undetected2[i] && detected1[i]).collect();
        let x_tilde1: Vec<Complex64> = last_x_sup.iter().map(|v| v / s1).collect();
        let x_tilde2: Vec<Complex64> = last_x_sup.iter().map(|v| v / s2).collect();

        let (rel1, q1) = rz_partition(&x_tilde1, &cand1, t1, c1, cfg.zone_rule);
        let (rel2, q2) = rz_partition(&x_tilde2, &cand2, t2, c2, cfg.zone_rule);

        // Probability bookkeeping at the chosen thresholds.
        let (pc1, pe1) = pam_probs_user1(t1, gamma1, c1, rho_ratio)?;
        let (pc2, pe2) = pam_probs_user2(t2, gamma2, c2)?;
        let mut probs1 = to_qam(pc1, pe1);
        let mut probs2 = to_qam(pc2, pe2);
        if cfg.empirical_probabilities {
            probs1 = empirical_triple(probs1, rel1.len(), cand1.len());
            probs2 = empirical_triple(probs2, rel2.len(), cand2.len());
        }

        // Interference cancellation with the freshly quantized symbols only.
        let mut xq1 = vec![Complex64::ZERO; mn];
        let mut xq2 = vec![Complex64::ZERO; mn];
        for (&idx, &q) in rel1.iter().zip(&q1) {
            xq1[idx] = q;
        }
        for (&idx, &q) in rel2.iter().zip(&q2) {
            xq2[idx] = q;
        }
        y_k = cancel_interference(&y_k, g, &xq1, &xq2, rho1, rho2);

        for (&idx, &q) in rel1.iter().zip(&q1) {
            x_hat1[idx] = q;
            undetected1[idx] = false;
        }
        for (&idx, &q) in rel2.iter().zip(&q2) {
            x_hat2[idx] = q;
            undetected2[idx] = false;
        }
        for i in 0..mn {
            detected1[i] = !undetected1[i];
        }

        diagnostics.push(IterationDiag {
            t1,
            t2,
            newly_reliable_1: rel1,
            newly_reliable_2: rel2,
            gamma1,
            gamma2,
        });
        tr.advance(probs1, probs2);
        iterations_used = k;

        let own_done = match cfg.user {
            User::One => undetected1.iter().all(|u| !u),
            User::Two => undetected2.iter().all(|u| !u),
        };
        if own_done {
            break;
        }
    }

    // Force-quantize whatever never became reliable so every symbol has a
    // decision.
    let (undetected, x_hat, c_user, scale) = match cfg.user {
        User::One => (&undetected1, &mut x_hat1, c1, s1),
        User::Two => (&undetected2, &mut x_hat2, c2, s2),
    };
    let mut undetected_at_exit = 0;
    for i in 0..mn {
        if undetected[i] {
            x_hat[i] = quantize(last_x_sup[i] / scale, c_user);
            undetected_at_exit += 1;
        }
    }

    Ok(DetectionResult {
        x_hat: match cfg.user {
            User::One => x_hat1,
            User::Two => x_hat2,
        },
        iterations_used,
        diagnostics,
        undetected_at_exit,
    })
}
