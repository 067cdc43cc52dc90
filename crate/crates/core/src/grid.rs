//! OTFS frame geometry and QAM constellation definitions.
//!
//! A frame is an `M x N` delay-Doppler grid (`M` delay bins, `N` Doppler
//! bins) vectorized column-major, so the delay index runs fastest. The
//! constellations are normalized (unit-energy) square QAM alphabets; `d` is
//! half the distance between adjacent symbols.

use num_complex::Complex64;

use crate::{Error, Result};

/// OTFS grid geometry plus the sampling parameters derived from it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameConfig {
    /// Delay bins per OFDM symbol.
    pub m: usize,
    /// Doppler bins (OFDM symbols per frame).
    pub n: usize,
    /// Cyclic-prefix length in samples, `0 <= n_cp < m`.
    pub n_cp: usize,
    /// Subcarrier spacing in Hz.
    pub delta_f: f64,
    /// Carrier frequency in Hz.
    pub f_c: f64,
}

impl FrameConfig {
    pub fn new(m: usize, n: usize, n_cp: usize, delta_f: f64, f_c: f64) -> Result<Self> {
        if m < 1 || n < 1 {
            return Err(Error::Config(format!("grid must be at least 1x1, got {m}x{n}")));
        }
        if n_cp >= m {
            return Err(Error::Config(format!("n_cp = {n_cp} must be < M = {m}")));
        }
        if !(delta_f > 0.0) || !(f_c > 0.0) {
            return Err(Error::Config(format!(
                "delta_f = {delta_f} and f_c = {f_c} must be positive"
            )));
        }
        Ok(Self { m, n, n_cp, delta_f, f_c })
    }

    /// Sampling period, `t_s = 1 / (M * delta_f)`.
    pub fn t_s(&self) -> f64 {
        1.0 / (self.m as f64 * self.delta_f)
    }

    /// Number of delay-Doppler symbols per frame.
    pub fn grid_len(&self) -> usize {
        self.m * self.n
    }

    /// Number of time-domain samples per frame including cyclic prefixes.
    pub fn frame_len(&self) -> usize {
        self.n * (self.m + self.n_cp)
    }

    /// Samples per OFDM symbol including its cyclic prefix.
    pub fn block_len(&self) -> usize {
        self.m + self.n_cp
    }
}

/// Normalized square QAM alphabet.
#[derive(Debug, Clone, PartialEq)]
pub struct QamConstellation {
    /// Symbol count `A` (a perfect square, >= 4).
    pub order: usize,
    /// Half the distance between adjacent symbols.
    pub half_distance: f64,
    /// All `A` constellation points.
    pub points: Vec<Complex64>,
    /// The `sqrt(A)` per-dimension PAM levels `(2a - 1) d`.
    pub pam_levels: Vec<f64>,
}

/// Builds the unit-energy square QAM constellation of the given order.
///
/// Unit energy forces `d = sqrt(3 / (2 (A - 1)))`.
pub fn build_constellation(order: usize) -> Result<QamConstellation> {
    let side = (order as f64).sqrt().round() as usize;
    if order < 4 || side * side != order {
        return Err(Error::InvalidQamOrder(order));
    }
    let d = (3.0 / (2.0 * (order as f64 - 1.0))).sqrt();
    let half = side as isize / 2;
    // a runs -sqrt(A)/2 + 1 ..= sqrt(A)/2, giving levels symmetric about 0.
    let pam_levels: Vec<f64> = (1 - half..=half).map(|a| (2 * a - 1) as f64 * d).collect();
    let mut points = Vec::with_capacity(order);
    for &v in &pam_levels {
        for &u in &pam_levels {
            points.push(Complex64::new(u, v));
        }
    }
    Ok(QamConstellation { order, half_distance: d, points, pam_levels })
}

impl QamConstellation {
    /// Number of PAM levels per dimension, `sqrt(A)`.
    pub fn side(&self) -> usize {
        self.pam_levels.len()
    }

    /// Mean squared magnitude over the alphabet (should be 1).
    pub fn energy(&self) -> f64 {
        self.points.iter().map(|p| p.norm_sqr()).sum::<f64>() / self.order as f64
    }

    /// Index of the PAM level nearest to `u`; exact ties go to the larger level.
    pub fn quantize_level_index(&self, u: f64) -> usize {
        let d = self.half_distance;
        let half = self.side() as isize / 2;
        // Level a has value (2a - 1) d; round half-up so ties take the larger level.
        let a = (u / (2.0 * d) + 1.0).floor() as isize;
        let a = a.clamp(1 - half, half);
        (a - (1 - half)) as usize
    }

    /// Nearest PAM level to `u` (ties toward the larger level).
    pub fn quantize_level(&self, u: f64) -> f64 {
        self.pam_levels[self.quantize_level_index(u)]
    }

    /// Index into `points` of the nearest constellation point.
    pub fn quantize_index(&self, value: Complex64) -> usize {
        let iu = self.quantize_level_index(value.re);
        let iv = self.quantize_level_index(value.im);
        iv * self.side() + iu
    }
}

/// Quantizes `value` to the nearest constellation point.
///
/// The square grid makes the decision separable per dimension. Ties are
/// broken toward the point with larger real part, then larger imaginary
/// part, so the decision is deterministic.
pub fn quantize(value: Complex64, c: &QamConstellation) -> Complex64 {
    c.points[c.quantize_index(value)]
}

/// True iff `u` lies strictly inside one of the unreliable strips
/// `(2 a d - T/2, 2 a d + T/2)` around the PAM decision boundaries.
pub fn in_unreliable_strip(u: f64, threshold: f64, c: &QamConstellation) -> bool {
    if threshold <= 0.0 {
        return false;
    }
    let d = c.half_distance;
    let half = c.side() as isize / 2;
    // Boundaries sit at 2 a d for a in [-sqrt(A)/2 + 1, sqrt(A)/2 - 1].
    let a = (u / (2.0 * d)).round() as isize;
    let a = a.clamp(1 - half, half - 1);
    (u - 2.0 * a as f64 * d).abs() < threshold / 2.0
}

/// Which strip test marks a symbol estimate unreliable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ZoneRule {
    /// Unreliable iff either coordinate falls in a strip. This is the
    /// per-dimension reading and the detector default.
    #[default]
    Or,
    /// Unreliable iff both coordinates fall in strips, the literal set
    /// product of the per-dimension strip union.
    And,
}

/// Membership in the unreliable zone with both coordinates required inside,
/// the literal product-set definition.
pub fn unreliable_zone_contains(value: Complex64, threshold: f64, c: &QamConstellation) -> bool {
    in_unreliable_strip(value.re, threshold, c) && in_unreliable_strip(value.im, threshold, c)
}

/// Zone membership under the configured rule.
pub fn is_unreliable(
    value: Complex64,
    threshold: f64,
    c: &QamConstellation,
    rule: ZoneRule,
) -> bool {
    let re_in = in_unreliable_strip(value.re, threshold, c);
    let im_in = in_unreliable_strip(value.im, threshold, c);
    match rule {
        ZoneRule::Or => re_in || im_in,
        ZoneRule::And => re_in && im_in,
    }
}
