//! Monte Carlo experiment runner for the OTFS-NOMA detector.
//!
//! One trial draws both users' symbols, modulates and superimposes them,
//! pushes the signal through an independent TDL-C channel per user, and runs
//! every configured scheme at both receivers. Trials are deterministic under
//! the master seed: each gets its own ChaCha stream whose seed is derived
//! from `(master, SNR point, Doppler point, trial index)` with a SplitMix64
//! chain, so results do not depend on execution order or thread count.

pub mod config;

use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use otfs_noma::baseline::{mmse_context_for_channel, mmse_sic_detect};
use otfs_noma::channel::{add_awgn, apply_ltv_channel, sample_tdlc, snr_to_sigma2};
use otfs_noma::detector::{detect, DetectorConfig, ThresholdPolicy};
use otfs_noma::grid::QamConstellation;
use otfs_noma::mlsqr::{
    approx_mse, bccb_eigenvalues, exact_equalizer_recursion, exact_mse, lsqr_solve, materialize,
    DenseOp,
};
use otfs_noma::thresholds::User;
use otfs_noma::waveform::{otfs_demodulate, otfs_modulate, superimpose, EffectiveChannelOp};
use otfs_noma::{Error, Result};

pub use config::{Scheme, SimConfig};

/// Fractional transmit power allocation from the users' average SNRs.
///
/// The weaker user receives the larger fraction: with linear SNRs `g1, g2`,
/// `rho1 = g2 / (g1 + g2)` and `rho2 = g1 / (g1 + g2)`, preserving the
/// `rho1 > rho2` ordering when user 2 has the higher SNR.
pub fn ftpa_allocate(snr1_db: f64, snr2_db: f64) -> (f64, f64) {
    let g1 = 10f64.powf(snr1_db / 10.0);
    let g2 = 10f64.powf(snr2_db / 10.0);
    (g2 / (g1 + g2), g1 / (g1 + g2))
}

/// One aggregated simulation result.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRecord {
    pub snr_db: f64,
    pub v_max_hz: f64,
    pub scheme: Scheme,
    /// 1 or 2.
    pub user: u8,
    pub symbol_errors: u64,
    pub symbols: u64,
    pub ser: f64,
    pub trials: u64,
    pub wall_time_s: f64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Per-trial seed: a SplitMix64 chain over the master seed, the SNR point
/// (milli-dB), the Doppler point (milli-Hz), and the trial index. Stable and
/// independent of evaluation order.
pub fn derive_trial_seed(master: u64, snr_db: f64, v_max_hz: f64, trial: u64) -> u64 {
    let snr_key = (snr_db * 1000.0).round() as i64 as u64;
    let v_key = (v_max_hz * 1000.0).round() as i64 as u64;
    let mut s = splitmix64(master);
    s = splitmix64(s ^ snr_key);
    s = splitmix64(s ^ v_key);
    splitmix64(s ^ trial)
}

/// Everything one sweep point needs, resolved once.
struct PointSetup {
    frame: otfs_noma::grid::FrameConfig,
    c1: QamConstellation,
    c2: QamConstellation,
    rho: (f64, f64),
    sigma2: [f64; 2],
    snr_db: f64,
    v_max_hz: f64,
    delay_spread_s: f64,
    mode: otfs_noma::channel::ChannelMode,
    schemes: Vec<Scheme>,
    detector_iterations: usize,
    mlsqr_iterations: usize,
    mlsqr_tolerance: f64,
    zone_rule: otfs_noma::grid::ZoneRule,
    seed: u64,
}

impl PointSetup {
    fn new(cfg: &SimConfig, snr_db: f64, v_max_hz: f64) -> Result<Self> {
        let frame = cfg.frame()?;
        let (c1, c2) = cfg.constellations()?;
        let snr2_db = snr_db + cfg.snr_gap_db;
        let rho = ftpa_allocate(snr_db, snr2_db);
        Ok(Self {
            frame,
            c1,
            c2,
            rho,
            sigma2: [snr_to_sigma2(snr_db), snr_to_sigma2(snr2_db)],
            snr_db,
            v_max_hz,
            delay_spread_s: cfg.delay_spread_s(),
            mode: cfg.channel_mode,
            schemes: cfg.schemes.clone(),
            detector_iterations: cfg.detector_iterations,
            mlsqr_iterations: cfg.mlsqr_iterations,
            mlsqr_tolerance: cfg.mlsqr_tolerance,
            zone_rule: cfg.zone_rule,
            seed: cfg.seed,
        })
    }

    fn detector_config(&self, user: User, policy: ThresholdPolicy) -> DetectorConfig {
        let mut dc = DetectorConfig::new(user);
        dc.max_outer = self.detector_iterations;
        dc.policy = policy;
        dc.solver_max_iter = self.mlsqr_iterations;
        dc.solver_tol = self.mlsqr_tolerance;
        dc.zone_rule = self.zone_rule;
        dc
    }
}

fn draw_symbols(c: &QamConstellation, mn: usize, rng: &mut impl Rng) -> Vec<Complex64> {
    (0..mn).map(|_| c.points[rng.random_range(0..c.order)]).collect()
}

fn count_errors(decisions: &[Complex64], truth: &[Complex64]) -> u64 {
    decisions.iter().zip(truth).filter(|(a, b)| (*a - *b).norm() > 1e-9).count() as u64
}

/// Symbol-error counts of one trial, indexed `[scheme][user]`.
type TrialErrors = Vec<[u64; 2]>;

/// Runs every configured scheme at both receivers on one drawn frame.
fn run_trial(p: &PointSetup, trial: u64) -> Result<TrialErrors> {
    let mut rng =
        ChaCha8Rng::seed_from_u64(derive_trial_seed(p.seed, p.snr_db, p.v_max_hz, trial));
    let mn = p.frame.grid_len();
    let x1 = draw_symbols(&p.c1, mn, &mut rng);
    let x2 = draw_symbols(&p.c2, mn, &mut rng);
    let s = superimpose(
        &otfs_modulate(&x1, &p.frame)?,
        &otfs_modulate(&x2, &p.frame)?,
        p.rho.0,
        p.rho.1,
    )?;

    // Independent channel per user; noise at each user's own SNR.
    let mut ys = Vec::with_capacity(2);
    let mut ops = Vec::with_capacity(2);
    for user_idx in 0..2 {
        let ch = sample_tdlc(p.delay_spread_s, p.v_max_hz, &p.frame, &mut rng)?;
        let r = apply_ltv_channel(&s, &ch, &p.frame, p.mode);
        let r = add_awgn(&r, p.sigma2[user_idx], &mut rng)?;
        ys.push(otfs_demodulate(&r, &p.frame)?);
        ops.push(EffectiveChannelOp::new(&ch, &p.frame, p.mode));
    }

    let truth = [&x1, &x2];
    let mut out = Vec::with_capacity(p.schemes.len());
    for &scheme in &p.schemes {
        let mut errs = [0u64; 2];
        match scheme {
            Scheme::ProposedOptimized | Scheme::ProposedNaive => {
                let policy = if scheme == Scheme::ProposedOptimized {
                    ThresholdPolicy::Optimized
                } else {
                    ThresholdPolicy::Naive
                };
                for (user_idx, user) in [User::One, User::Two].into_iter().enumerate() {
                    let cfg = p.detector_config(user, policy);
                    let res = detect(
                        &ops[user_idx],
                        p.frame.m,
                        p.frame.n,
                        &ys[user_idx],
                        p.rho,
                        p.sigma2[user_idx],
                        &cfg,
                        &p.c1,
                        &p.c2,
                    )?;
                    errs[user_idx] = count_errors(&res.x_hat, truth[user_idx]);
                }
            }
            Scheme::MmseSic => {
                for (user_idx, user) in [User::One, User::Two].into_iter().enumerate() {
                    let ctx = mmse_context_for_channel(&ops[user_idx], p.sigma2[user_idx])?;
                    let dec = mmse_sic_detect(
                        &ctx,
                        &ops[user_idx],
                        &ys[user_idx],
                        user,
                        p.rho,
                        &p.c1,
                        &p.c2,
                    )?;
                    errs[user_idx] = count_errors(&dec, truth[user_idx]);
                }
            }
        }
        out.push(errs);
    }
    Ok(out)
}

/// Runs one sweep point (all trials, all schemes, both users).
fn run_point(cfg: &SimConfig, snr_db: f64, v_max_hz: f64) -> Result<Vec<ResultRecord>> {
    let setup = PointSetup::new(cfg, snr_db, v_max_hz)?;
    let started = Instant::now();
    let totals: Result<Vec<TrialErrors>> =
        (0..cfg.trials as u64).into_par_iter().map(|t| run_trial(&setup, t)).collect();
    let totals = totals?;
    let wall = started.elapsed().as_secs_f64();

    let mn = setup.frame.grid_len() as u64;
    let symbols = mn * cfg.trials as u64;
    let mut records = Vec::new();
    for (si, &scheme) in cfg.schemes.iter().enumerate() {
        for user in 0..2usize {
            let errors: u64 = totals.iter().map(|t| t[si][user]).sum();
            records.push(ResultRecord {
                snr_db,
                v_max_hz,
                scheme,
                user: user as u8 + 1,
                symbol_errors: errors,
                symbols,
                ser: errors as f64 / symbols as f64,
                trials: cfg.trials as u64,
                wall_time_s: wall,
            });
        }
    }
    Ok(records)
}

/// Runs the Cartesian product of the SNR and Doppler sweeps.
pub fn run_sweep(cfg: &SimConfig) -> Result<Vec<ResultRecord>> {
    cfg.validate()?;
    let mut records = Vec::new();
    for &v in &cfg.doppler_sweep_hz() {
        for &snr in &cfg.snr_db_user1 {
            records.extend(run_point(cfg, snr, v)?);
        }
    }
    Ok(records)
}

/// Normalized approximation error of the low-complexity MSE at one velocity:
/// `e_gamma = (1/MN) E[ sum_n |gamma_n - gamma~|^2 ]` over channel draws.
///
/// Exact and approximate MSE are computed from the *same* LSQR solve. The
/// exact path is dense, so the grid is capped.
pub fn approx_error_experiment(cfg: &SimConfig) -> Result<Vec<(f64, f64)>> {
    cfg.validate()?;
    let frame = cfg.frame()?;
    let mn = frame.grid_len();
    if mn > 256 {
        return Err(Error::SizeCap(format!(
            "approximation-error experiment needs the exact MSE path; {mn} symbols exceed 256"
        )));
    }
    let (c1, c2) = cfg.constellations()?;
    let snr_db = cfg.snr_db_user1[0];
    let snr2_db = snr_db + cfg.snr_gap_db;
    let rho = ftpa_allocate(snr_db, snr2_db);
    let sigma2 = snr_to_sigma2(snr_db);

    let mut out = Vec::new();
    for &v_max in &cfg.doppler_sweep_hz() {
        let acc: Result<Vec<f64>> = (0..cfg.trials as u64)
            .into_par_iter()
            .map(|trial| -> Result<f64> {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(derive_trial_seed(cfg.seed, snr_db, v_max, trial));
                let x1 = draw_symbols(&c1, mn, &mut rng);
                let x2 = draw_symbols(&c2, mn, &mut rng);
                let s = superimpose(
                    &otfs_modulate(&x1, &frame)?,
                    &otfs_modulate(&x2, &frame)?,
                    rho.0,
                    rho.1,
                )?;
                let ch = sample_tdlc(cfg.delay_spread_s(), v_max, &frame, &mut rng)?;
                let r = apply_ltv_channel(&s, &ch, &frame, cfg.channel_mode);
                let r = add_awgn(&r, sigma2, &mut rng)?;
                let y = otfs_demodulate(&r, &frame)?;

                let op = EffectiveChannelOp::new(&ch, &frame, cfg.channel_mode);
                let sol = lsqr_solve(&op, &y, sigma2, cfg.mlsqr_iterations, cfg.mlsqr_tolerance)?;
                let iters = sol.iterations_used.max(1);

                // Exact per-symbol MSE from the dense recursion.
                let g_dense = materialize(&op);
                let mut aha = g_dense.gram();
                aha.add_scaled_identity(sigma2);
                let l = exact_equalizer_recursion(&sol.history, &aha, iters, 256)?;
                let exact = exact_mse(&l, &g_dense, sigma2);

                // Approximate scalar MSE from the same solve.
                let lam = bccb_eigenvalues(&op.first_column(), frame.m, frame.n);
                let approx = approx_mse(&sol.history, &lam, sigma2, frame.m, frame.n, iters)?;

                let sum: f64 =
                    exact.gamma.iter().map(|g| (g - approx.gamma).powi(2)).sum();
                Ok(sum / mn as f64)
            })
            .collect();
        let acc = acc?;
        out.push((v_max, acc.iter().sum::<f64>() / acc.len() as f64));
    }
    Ok(out)
}

/// CSV header written by [`write_csv`].
pub const CSV_HEADER: &str = "snr_db,v_max_hz,scheme,user,symbol_errors,symbols,ser,trials,wall_time_s";

/// Renders records in the stable CSV schema (SER in scientific notation with
/// six significant digits).
pub fn records_to_csv(records: &[ResultRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{:.5e},{},{:.3}\n",
            r.snr_db,
            r.v_max_hz,
            r.scheme.name(),
            r.user,
            r.symbol_errors,
            r.symbols,
            r.ser,
            r.trials,
            r.wall_time_s
        ));
    }
    out
}

pub fn write_csv(records: &[ResultRecord], path: &std::path::Path) -> Result<()> {
    std::fs::write(path, records_to_csv(records))
        .map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))
}

/// Parses the CSV produced by [`records_to_csv`] (round-trip support).
pub fn parse_csv(text: &str) -> Result<Vec<ResultRecord>> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    if header != CSV_HEADER {
        return Err(Error::Config(format!("unexpected CSV header '{header}'")));
    }
    let mut out = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            return Err(Error::Config(format!("bad CSV row '{line}'")));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::Config(format!("bad number '{s}'")))
        };
        out.push(ResultRecord {
            snr_db: num(f[0])?,
            v_max_hz: num(f[1])?,
            scheme: Scheme::parse(f[2])?,
            user: f[3].parse().map_err(|_| Error::Config(format!("bad user '{}'", f[3])))?,
            symbol_errors: f[4]
                .parse()
                .map_err(|_| Error::Config(format!("bad count '{}'", f[4])))?,
            symbols: f[5].parse().map_err(|_| Error::Config(format!("bad count '{}'", f[5])))?,
            ser: num(f[6])?,
            trials: f[7].parse().map_err(|_| Error::Config(format!("bad count '{}'", f[7])))?,
            wall_time_s: num(f[8])?,
        });
    }
    Ok(out)
}

/// Quick self-checks for the `validate` CLI subcommand: a few fast oracles
/// over the numerical core. Returns the failures.
pub fn quick_validation(seed: u64) -> Vec<String> {
    use otfs_noma::channel::ChannelMode;
    use otfs_noma::grid::FrameConfig;
    use otfs_noma::linalg::Cholesky;

    let mut failures = Vec::new();
    let mut check = |name: &str, ok: bool| {
        println!("{}: {}", name, if ok { "PASS" } else { "FAIL" });
        if !ok {
            failures.push(name.to_string());
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Modulation round trip.
    {
        let frame = FrameConfig::new(16, 8, 4, 15e3, 5.9e9).unwrap();
        let x: Vec<Complex64> = (0..frame.grid_len())
            .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect();
        let y = otfs_demodulate(&otfs_modulate(&x, &frame).unwrap(), &frame).unwrap();
        let err = y.iter().zip(&x).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        check("modulation round trip", err < 1e-12);
    }

    // Operator adjoint consistency.
    {
        let frame = FrameConfig::new(8, 4, 2, 15e3, 5.9e9).unwrap();
        let ch = sample_tdlc(2e-6, 800.0, &frame, &mut rng).unwrap();
        let op = EffectiveChannelOp::new(&ch, &frame, ChannelMode::Continuous);
        let v: Vec<Complex64> = (0..frame.grid_len())
            .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect();
        let u: Vec<Complex64> = (0..frame.grid_len())
            .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect();
        let mut gv = vec![Complex64::ZERO; frame.grid_len()];
        let mut ghu = vec![Complex64::ZERO; frame.grid_len()];
        use otfs_noma::mlsqr::LinOp;
        op.apply(&v, &mut gv);
        op.apply_adjoint(&u, &mut ghu);
        let lhs: Complex64 = gv.iter().zip(&u).map(|(a, b)| a * b.conj()).sum();
        let rhs: Complex64 = v.iter().zip(&ghu).map(|(a, b)| a * b.conj()).sum();
        check("operator adjoint consistency", (lhs - rhs).norm() < 1e-10);
    }

    // LSQR against a dense ridge solve.
    {
        let n = 16;
        let g = otfs_noma::linalg::CMat::from_fn(n, n, |_, _| {
            Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        });
        let y: Vec<Complex64> = (0..n)
            .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect();
        let sol = lsqr_solve(&DenseOp(&g), &y, 0.1, 200, 1e-13).unwrap();
        let mut aha = g.gram();
        aha.add_scaled_identity(0.1);
        let oracle = Cholesky::factor(&aha).unwrap().solve_vec(&g.adjoint().matvec(&y));
        let err =
            sol.x.iter().zip(&oracle).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        check("lsqr matches dense ridge solve", err < 1e-6);
    }

    // Approximate MSE is exact on a block-fading channel.
    {
        let frame = FrameConfig::new(4, 4, 1, 15e3, 5.9e9).unwrap();
        let ch = sample_tdlc(1e-6, 1000.0, &frame, &mut rng).unwrap();
        let op = EffectiveChannelOp::new(&ch, &frame, ChannelMode::BlockFading);
        let y: Vec<Complex64> = (0..frame.grid_len())
            .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect();
        let sigma2 = 0.05;
        let sol = lsqr_solve(&op, &y, sigma2, 12, 0.0).unwrap();
        let g = materialize(&op);
        let mut aha = g.gram();
        aha.add_scaled_identity(sigma2);
        let l = exact_equalizer_recursion(&sol.history, &aha, sol.iterations_used, 256).unwrap();
        let exact = exact_mse(&l, &g, sigma2);
        let lam = bccb_eigenvalues(&op.first_column(), frame.m, frame.n);
        let approx =
            approx_mse(&sol.history, &lam, sigma2, frame.m, frame.n, sol.iterations_used).unwrap();
        let ok = exact
            .gamma
            .iter()
            .all(|g| (g - approx.gamma).abs() / approx.gamma.max(1e-30) < 1e-6);
        check("approximate MSE exact on BCCB channel", ok);
    }

    // Probability model against a quick Monte Carlo.
    {
        use otfs_noma::grid::build_constellation;
        use otfs_noma::thresholds::pam_probs_user2;
        let c = build_constellation(4).unwrap();
        let (t, gamma) = (0.2, 0.05);
        let (pc, _) = pam_probs_user2(t, gamma, &c).unwrap();
        let draws = 100_000;
        let mut hits = 0usize;
        for _ in 0..draws {
            let lvl = c.pam_levels[rng.random_range(0..2)];
            let noise: f64 = {
                // Box-Muller on the ChaCha stream.
                let u1: f64 = rng.random::<f64>().max(1e-12);
                let u2: f64 = rng.random();
                (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
            };
            let v = lvl + noise * (gamma / 2.0).sqrt();
            if !otfs_noma::grid::in_unreliable_strip(v, t, &c)
                && (c.quantize_level(v) - lvl).abs() < 1e-12
            {
                hits += 1;
            }
        }
        let mc = hits as f64 / draws as f64;
        let sigma = (pc * (1.0 - pc) / draws as f64).sqrt();
        check("PAM probability model vs Monte Carlo", (pc - mc).abs() < 4.0 * sigma);
    }

    failures
}
