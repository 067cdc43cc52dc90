//! Linear time-varying channel generation and application.
//!
//! Channels are drawn from the 3GPP TDL-C power-delay profile with per-path
//! Doppler shifts from Jakes' angle-of-arrival model: each path gets
//! `nu_p = v_max * cos(theta_p)` with an independent uniform angle. Path
//! delays are quantized to the nearest sample tap.

use std::f64::consts::TAU;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::grid::FrameConfig;
use crate::linalg::CMat;
use crate::{Error, Result};

/// TDL-C tap table from 3GPP TR 38.901, Table 7.7.2-3: normalized delay
/// (scaled by the desired delay spread) and tap power in dB.
#[allow(clippy::approx_constant)] // tap 6's 0.6366 is a model constant, not 2/pi
pub const TDLC_TAPS: [(f64, f64); 24] = [
    (0.0000, -4.4),
    (0.2099, -1.2),
    (0.2219, -3.5),
    (0.2329, -5.2),
    (0.2176, -2.5),
    (0.6366, 0.0),
    (0.6448, -2.2),
    (0.6560, -3.9),
    (0.6584, -7.4),
    (0.7935, -7.1),
    (0.8213, -10.7),
    (0.9336, -11.1),
    (1.2285, -5.1),
    (1.3083, -6.8),
    (2.1704, -8.7),
    (2.7105, -13.2),
    (4.2589, -13.9),
    (4.6003, -13.9),
    (5.4902, -15.8),
    (5.6077, -17.1),
    (6.3065, -16.0),
    (6.6374, -15.7),
    (7.0427, -21.6),
    (8.6523, -22.8),
];

/// Largest normalized TDL-C delay; `max_delay = TDLC_MAX_NORM_DELAY * delay_spread`.
pub const TDLC_MAX_NORM_DELAY: f64 = 8.6523;

/// One propagation path after delay quantization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathTap {
    /// Complex gain, drawn circular Gaussian with variance `pdp[p]`.
    pub gain: Complex64,
    /// Delay in samples.
    pub delay_tap: usize,
    /// Doppler shift in Hz.
    pub doppler_hz: f64,
}

/// A drawn channel: taps plus the profile they were drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub paths: Vec<PathTap>,
    /// Normalized power-delay profile (sums to 1).
    pub pdp: Vec<f64>,
    pub v_max_hz: f64,
}

impl ChannelRealization {
    /// Largest delay tap over all paths.
    pub fn max_delay_tap(&self) -> usize {
        self.paths.iter().map(|p| p.delay_tap).max().unwrap_or(0)
    }

    /// A single unit-gain path with no delay and no Doppler (identity channel).
    pub fn identity() -> Self {
        Self {
            paths: vec![PathTap { gain: Complex64::ONE, delay_tap: 0, doppler_hz: 0.0 }],
            pdp: vec![1.0],
            v_max_hz: 0.0,
        }
    }
}

/// How the channel evolves inside one frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ChannelMode {
    /// Per-sample phase evolution (the physical model).
    #[default]
    Continuous,
    /// CIR frozen over each OFDM symbol; makes the effective channel exactly
    /// block circulant and is used to validate the approximate-MSE path.
    BlockFading,
}

/// Smallest cyclic prefix that covers the TDL-C delay spread at this sampling
/// rate: `ceil(max path delay / t_s)`.
pub fn required_cp_len(delay_spread_s: f64, cfg: &FrameConfig) -> usize {
    (TDLC_MAX_NORM_DELAY * delay_spread_s / cfg.t_s()).ceil() as usize
}

/// Draws a TDL-C channel realization with Jakes per-path Doppler.
pub fn sample_tdlc(
    delay_spread_s: f64,
    v_max_hz: f64,
    cfg: &FrameConfig,
    rng: &mut impl Rng,
) -> Result<ChannelRealization> {
    if !(delay_spread_s > 0.0) {
        return Err(Error::Config(format!("delay spread must be positive, got {delay_spread_s}")));
    }
    if v_max_hz < 0.0 {
        return Err(Error::Config(format!("max Doppler must be >= 0, got {v_max_hz}")));
    }
    let t_s = cfg.t_s();
    let total: f64 = TDLC_TAPS.iter().map(|&(_, p_db)| 10f64.powf(p_db / 10.0)).sum();
    let mut paths = Vec::with_capacity(TDLC_TAPS.len());
    let mut pdp = Vec::with_capacity(TDLC_TAPS.len());
    for &(norm_delay, p_db) in &TDLC_TAPS {
        let lambda = 10f64.powf(p_db / 10.0) / total;
        let tap = (norm_delay * delay_spread_s / t_s).round() as usize;
        if tap > cfg.n_cp {
            return Err(Error::CpTooShort(format!(
                "path delay {:.3e} s needs tap {} but n_cp = {} (n_cp * t_s = {:.3e} s)",
                norm_delay * delay_spread_s,
                tap,
                cfg.n_cp,
                cfg.n_cp as f64 * t_s
            )));
        }
        let comp = Normal::new(0.0, (lambda / 2.0).sqrt())
            .map_err(|e| Error::Config(format!("gain distribution: {e}")))?;
        let gain = Complex64::new(comp.sample(rng), comp.sample(rng));
        let doppler_hz = v_max_hz * (rng.random::<f64>() * TAU).cos();
        paths.push(PathTap { gain, delay_tap: tap, doppler_hz });
        pdp.push(lambda);
    }
    Ok(ChannelRealization { paths, pdp, v_max_hz })
}

/// Phase of path `p` at output sample `n`, matching `exp(j 2 pi nu (t - tau))`:
/// the rotation is evaluated at `n - l_p` samples.
fn path_phase(path: &PathTap, n: usize, cfg: &FrameConfig, mode: ChannelMode) -> f64 {
    let at = match mode {
        ChannelMode::Continuous => n as f64 - path.delay_tap as f64,
        ChannelMode::BlockFading => {
            let block = n / cfg.block_len();
            (block * cfg.block_len()) as f64 - path.delay_tap as f64
        }
    };
    TAU * path.doppler_hz * at * cfg.t_s()
}

/// Applies the LTV channel: `r[n] = sum_p h_p exp(j 2 pi nu_p (n - l_p) t_s) s[n - l_p]`,
/// with `s[m] = 0` for `m < 0` (causal, zero initial state).
pub fn apply_ltv_channel(
    s: &[Complex64],
    ch: &ChannelRealization,
    cfg: &FrameConfig,
    mode: ChannelMode,
) -> Vec<Complex64> {
    let mut r = vec![Complex64::ZERO; s.len()];
    for path in &ch.paths {
        let l = path.delay_tap;
        for n in l..s.len() {
            let rot = Complex64::from_polar(1.0, path_phase(path, n, cfg, mode));
            r[n] += path.gain * rot * s[n - l];
        }
    }
    r
}

/// Dense time-domain channel matrix of side `N (M + n_cp)`;
/// `H * s == apply_ltv_channel(s)`.
pub fn build_time_domain_matrix(
    ch: &ChannelRealization,
    cfg: &FrameConfig,
    mode: ChannelMode,
) -> CMat {
    let len = cfg.frame_len();
    let mut h = CMat::zeros(len, len);
    for path in &ch.paths {
        let l = path.delay_tap;
        for n in l..len {
            let rot = Complex64::from_polar(1.0, path_phase(path, n, cfg, mode));
            h[(n, n - l)] += path.gain * rot;
        }
    }
    h
}

/// Adds i.i.d. circular complex Gaussian noise with total variance `sigma2`
/// per sample (`sigma2 / 2` per real dimension).
pub fn add_awgn(r: &[Complex64], sigma2: f64, rng: &mut impl Rng) -> Result<Vec<Complex64>> {
    if sigma2 < 0.0 {
        return Err(Error::Config(format!("noise variance must be >= 0, got {sigma2}")));
    }
    if sigma2 == 0.0 {
        return Ok(r.to_vec());
    }
    let comp = Normal::new(0.0, (sigma2 / 2.0).sqrt())
        .map_err(|e| Error::Config(format!("noise distribution: {e}")))?;
    Ok(r.iter().map(|&v| v + Complex64::new(comp.sample(rng), comp.sample(rng))).collect())
}

/// Noise variance for a given average received SNR, with unit total transmit
/// power: `sigma2 = 10^(-snr_db / 10)`.
pub fn snr_to_sigma2(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}
