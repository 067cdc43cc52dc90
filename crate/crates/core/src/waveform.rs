//! OTFS modulation, demodulation, and the effective delay-Doppler channel.
//!
//! CP-OFDM based OTFS: modulation is an `N`-point unitary IDFT across the
//! Doppler axis of the `M x N` grid followed by per-symbol cyclic-prefix
//! insertion, `s = (F_N^H (x) A_cp) x`. Demodulation strips the prefixes and
//! applies the forward DFT, `y = (F_N (x) R_cp) r`. The effective channel is
//! `G = (F_N (x) R_cp) H (F_N^H (x) A_cp)`; it is available both as a dense
//! matrix (oracles, MMSE baseline) and as a matrix-free operator whose
//! application costs `O(MN log MN + P MN)`.

use num_complex::Complex64;

use crate::channel::{ChannelMode, ChannelRealization};
use crate::dft::Dft2;
use crate::grid::FrameConfig;
use crate::linalg::CMat;
use crate::mlsqr::LinOp;
use crate::{Error, Result};

fn check_grid_len(x: &[Complex64], cfg: &FrameConfig) -> Result<()> {
    if x.len() != cfg.grid_len() {
        return Err(Error::Dimension(format!(
            "expected {} delay-Doppler symbols, got {}",
            cfg.grid_len(),
            x.len()
        )));
    }
    Ok(())
}

fn check_frame_len(s: &[Complex64], cfg: &FrameConfig) -> Result<()> {
    if s.len() != cfg.frame_len() {
        return Err(Error::Dimension(format!(
            "expected {} time-domain samples, got {}",
            cfg.frame_len(),
            s.len()
        )));
    }
    Ok(())
}

/// IDFT across the Doppler axis then per-symbol CP insertion (serialization
/// is column-major, so the output is the concatenated OFDM symbols).
fn modulate_grid(grid: &mut Vec<Complex64>, cfg: &FrameConfig, dft: &Dft2) -> Vec<Complex64> {
    let (m, n_cp) = (cfg.m, cfg.n_cp);
    dft.ifft_rows(grid);
    let scale = 1.0 / (cfg.n as f64).sqrt();
    let mut s = Vec::with_capacity(cfg.frame_len());
    for q in 0..cfg.n {
        let col = &grid[q * m..(q + 1) * m];
        for p in m - n_cp..m {
            s.push(col[p] * scale);
        }
        for p in 0..m {
            s.push(col[p] * scale);
        }
    }
    s
}

/// Maps the `M x N` grid to time domain: `s = (F_N^H (x) A_cp) x`.
pub fn otfs_modulate(x: &[Complex64], cfg: &FrameConfig) -> Result<Vec<Complex64>> {
    check_grid_len(x, cfg)?;
    let mut grid = x.to_vec();
    Ok(modulate_grid(&mut grid, cfg, &Dft2::new(cfg.m, cfg.n)))
}

fn demodulate_frame(r: &[Complex64], cfg: &FrameConfig, dft: &Dft2) -> Vec<Complex64> {
    let n_cp = cfg.n_cp;
    let block = cfg.block_len();
    let mut grid = Vec::with_capacity(cfg.grid_len());
    for q in 0..cfg.n {
        grid.extend_from_slice(&r[q * block + n_cp..(q + 1) * block]);
    }
    dft.fft_rows(&mut grid);
    let scale = 1.0 / (cfg.n as f64).sqrt();
    for v in &mut grid {
        *v *= scale;
    }
    grid
}

/// Strips the cyclic prefixes and returns to delay-Doppler:
/// `y = (F_N (x) R_cp) r`.
pub fn otfs_demodulate(r: &[Complex64], cfg: &FrameConfig) -> Result<Vec<Complex64>> {
    check_frame_len(r, cfg)?;
    Ok(demodulate_frame(r, cfg, &Dft2::new(cfg.m, cfg.n)))
}

/// Adjoint of [`otfs_modulate`]: `(F_N (x) A_cp^H) u`.
fn modulate_adjoint(u: &[Complex64], cfg: &FrameConfig, dft: &Dft2) -> Vec<Complex64> {
    let (m, n_cp) = (cfg.m, cfg.n_cp);
    let block = cfg.block_len();
    let mut grid = Vec::with_capacity(cfg.grid_len());
    for q in 0..cfg.n {
        let b = &u[q * block..(q + 1) * block];
        for p in 0..m {
            let mut v = b[n_cp + p];
            // A_cp^H folds the prefix samples back onto the symbol tail.
            if p >= m - n_cp {
                v += b[p - (m - n_cp)];
            }
            grid.push(v);
        }
    }
    dft.fft_rows(&mut grid);
    let scale = 1.0 / (cfg.n as f64).sqrt();
    for v in &mut grid {
        *v *= scale;
    }
    grid
}

/// Adjoint of [`otfs_demodulate`]: `(F_N^H (x) R_cp^T) y` (zero-fill at the
/// prefix positions).
fn demodulate_adjoint(y: &[Complex64], cfg: &FrameConfig, dft: &Dft2) -> Vec<Complex64> {
    let (m, n_cp) = (cfg.m, cfg.n_cp);
    let mut grid = y.to_vec();
    dft.ifft_rows(&mut grid);
    let scale = 1.0 / (cfg.n as f64).sqrt();
    let mut r = Vec::with_capacity(cfg.frame_len());
    for q in 0..cfg.n {
        for _ in 0..n_cp {
            r.push(Complex64::ZERO);
        }
        for p in 0..m {
            r.push(grid[q * m + p] * scale);
        }
    }
    r
}

/// Power-domain superposition `s = sqrt(rho1) s1 + sqrt(rho2) s2`.
///
/// Requires `rho1 + rho2 = 1` and the NOMA ordering `rho1 > rho2 > 0`.
pub fn superimpose(
    s1: &[Complex64],
    s2: &[Complex64],
    rho1: f64,
    rho2: f64,
) -> Result<Vec<Complex64>> {
    if s1.len() != s2.len() {
        return Err(Error::Dimension(format!(
            "signals differ in length: {} vs {}",
            s1.len(),
            s2.len()
        )));
    }
    if (rho1 + rho2 - 1.0).abs() > 1e-12 {
        return Err(Error::Config(format!("power fractions must sum to 1, got {}", rho1 + rho2)));
    }
    if !(rho1 > rho2 && rho2 > 0.0) {
        return Err(Error::Config(format!(
            "power fractions must satisfy rho1 > rho2 > 0, got ({rho1}, {rho2})"
        )));
    }
    let (a1, a2) = (rho1.sqrt(), rho2.sqrt());
    Ok(s1.iter().zip(s2).map(|(a, b)| a1 * a + a2 * b).collect())
}

/// Dense effective channel `G = (F_N (x) R_cp) H (F_N^H (x) A_cp)` for an
/// arbitrary time-domain matrix `H`. Oracle/baseline scale.
pub fn build_effective_channel(h: &CMat, cfg: &FrameConfig) -> Result<CMat> {
    let frame = cfg.frame_len();
    if h.nrows() != frame || h.ncols() != frame {
        return Err(Error::Dimension(format!(
            "H must be {frame}x{frame}, got {}x{}",
            h.nrows(),
            h.ncols()
        )));
    }
    let mn = cfg.grid_len();
    let dft = Dft2::new(cfg.m, cfg.n);
    let mut g = CMat::zeros(mn, mn);
    let mut e = vec![Complex64::ZERO; mn];
    for j in 0..mn {
        e[j] = Complex64::ONE;
        let mut grid = e.clone();
        let s = modulate_grid(&mut grid, cfg, &dft);
        let col = demodulate_frame(&h.matvec(&s), cfg, &dft);
        g.set_col(j, &col);
        e[j] = Complex64::ZERO;
    }
    Ok(g)
}

/// Matrix-free effective channel for one channel realization.
///
/// Caches per-path gain/phase tables so each application is a couple of FFT
/// passes plus one shifted multiply-accumulate per path.
pub struct EffectiveChannelOp {
    cfg: FrameConfig,
    dft: Dft2,
    /// `(delay_tap, g[n])` with `g[n] = h_p * exp(j phase at output sample n)`.
    taps: Vec<(usize, Vec<Complex64>)>,
}

impl EffectiveChannelOp {
    pub fn new(ch: &ChannelRealization, cfg: &FrameConfig, mode: ChannelMode) -> Self {
        let frame = cfg.frame_len();
        let t_s = cfg.t_s();
        let block = cfg.block_len();
        let taps = ch
            .paths
            .iter()
            .map(|p| {
                let table: Vec<Complex64> = (0..frame)
                    .map(|n| {
                        let at = match mode {
                            ChannelMode::Continuous => n as f64 - p.delay_tap as f64,
                            ChannelMode::BlockFading => {
                                ((n / block) * block) as f64 - p.delay_tap as f64
                            }
                        };
                        p.gain
                            * Complex64::from_polar(
                                1.0,
                                std::f64::consts::TAU * p.doppler_hz * at * t_s,
                            )
                    })
                    .collect();
                (p.delay_tap, table)
            })
            .collect();
        Self { cfg: *cfg, dft: Dft2::new(cfg.m, cfg.n), taps }
    }

    pub fn cfg(&self) -> &FrameConfig {
        &self.cfg
    }

    fn channel_forward(&self, s: &[Complex64]) -> Vec<Complex64> {
        let mut r = vec![Complex64::ZERO; s.len()];
        for (delay, table) in &self.taps {
            let l = *delay;
            for n in l..s.len() {
                r[n] += table[n] * s[n - l];
            }
        }
        r
    }

    fn channel_adjoint(&self, x: &[Complex64]) -> Vec<Complex64> {
        let mut r = vec![Complex64::ZERO; x.len()];
        for (delay, table) in &self.taps {
            let l = *delay;
            for n in l..x.len() {
                r[n - l] += table[n].conj() * x[n];
            }
        }
        r
    }

    /// First column of `G`, used for the BCCB diagonalization.
    pub fn first_column(&self) -> Vec<Complex64> {
        let mut e0 = vec![Complex64::ZERO; self.cols()];
        e0[0] = Complex64::ONE;
        let mut col = vec![Complex64::ZERO; self.rows()];
        self.apply(&e0, &mut col);
        col
    }

    /// Largest delay tap of the underlying channel.
    pub fn max_delay_tap(&self) -> usize {
        self.taps.iter().map(|(l, _)| *l).max().unwrap_or(0)
    }

    /// Dense normal matrix `G^H G + sigma2 I`, assembled column by column.
    ///
    /// A basis vector occupies one delay row, the channel spreads it over at
    /// most `l_max` further rows (cyclically, through the prefix), and the
    /// adjoint spreads it back, so each column touches only a handful of
    /// delay rows. Exploiting that keeps the whole assembly near
    /// `O(MN * P N)` instead of `MN` full operator applications. The result
    /// is delay-banded (cyclically): entries vanish whenever the delay
    /// indices are more than `l_max` apart mod `M`.
    pub fn normal_matrix(&self, sigma2: f64) -> CMat {
        let (m, n, n_cp) = (self.cfg.m, self.cfg.n, self.cfg.n_cp);
        let mn = m * n;
        let frame = self.cfg.frame_len();
        let block = self.cfg.block_len();
        let inv_sqrt_n = 1.0 / (n as f64).sqrt();

        let mut b = CMat::zeros(mn, mn);
        let mut time1 = vec![Complex64::ZERO; frame];
        let mut touched1: Vec<usize> = Vec::new();
        let mut grid1 = vec![Complex64::ZERO; mn];
        let mut rows1 = vec![false; m];
        let mut time2 = vec![Complex64::ZERO; frame];
        let mut touched2: Vec<usize> = Vec::new();
        let mut grid2 = vec![Complex64::ZERO; mn];
        let mut rows2 = vec![false; m];
        let mut row_buf = vec![Complex64::ZERO; n];

        for j in 0..mn {
            let (p0, q0) = (j % m, j / m);

            // Modulated basis column: value exp(j 2 pi q q0 / N)/sqrt(N) at
            // the data offset of delay p0 in every block, plus the prefix
            // copy when p0 lands in the CP window.
            for q in 0..n {
                let val = Complex64::from_polar(
                    inv_sqrt_n,
                    std::f64::consts::TAU * (q * q0) as f64 / n as f64,
                );
                let base = q * block;
                let positions = [
                    Some(base + n_cp + p0),
                    (p0 >= m - n_cp).then(|| base + (p0 - (m - n_cp))),
                ];
                for t in positions.into_iter().flatten() {
                    for (l, table) in &self.taps {
                        let tt = t + l;
                        if tt < frame {
                            if time1[tt] == Complex64::ZERO {
                                touched1.push(tt);
                            }
                            time1[tt] += table[tt] * val;
                        }
                    }
                }
            }

            // Demodulate onto the touched delay rows only.
            for &tt in &touched1 {
                let o = tt % block;
                if o >= n_cp {
                    let p = o - n_cp;
                    grid1[(tt / block) * m + p] += time1[tt];
                    rows1[p] = true;
                }
            }
            for p in 0..m {
                if !rows1[p] {
                    continue;
                }
                for q in 0..n {
                    row_buf[q] = grid1[q * m + p];
                }
                self.dft.fft_row(&mut row_buf);
                for q in 0..n {
                    grid1[q * m + p] = row_buf[q] * inv_sqrt_n;
                }
            }

            // Adjoint pass: demodulate_adjoint restricted to active rows.
            for p in 0..m {
                if !rows1[p] {
                    continue;
                }
                for q in 0..n {
                    row_buf[q] = grid1[q * m + p];
                }
                self.dft.ifft_row(&mut row_buf);
                for q in 0..n {
                    let x = row_buf[q] * inv_sqrt_n;
                    if x == Complex64::ZERO {
                        continue;
                    }
                    let t = q * block + n_cp + p;
                    for (l, table) in &self.taps {
                        if t >= *l {
                            let mt = t - l;
                            if time2[mt] == Complex64::ZERO {
                                touched2.push(mt);
                            }
                            time2[mt] += table[t].conj() * x;
                        }
                    }
                }
            }

            // Modulate adjoint: fold prefix positions back, then row DFTs.
            for &mt in &touched2 {
                let o = mt % block;
                let p = if o >= n_cp { o - n_cp } else { o + (m - n_cp) };
                grid2[(mt / block) * m + p] += time2[mt];
                rows2[p] = true;
            }
            for p in 0..m {
                if !rows2[p] {
                    continue;
                }
                for q in 0..n {
                    row_buf[q] = grid2[q * m + p];
                }
                self.dft.fft_row(&mut row_buf);
                for q in 0..n {
                    b[(q * m + p, j)] = row_buf[q] * inv_sqrt_n;
                }
            }
            b[(j, j)] += Complex64::new(sigma2, 0.0);

            // Reset scratch through the touch lists.
            for &t in &touched1 {
                time1[t] = Complex64::ZERO;
            }
            touched1.clear();
            for &t in &touched2 {
                time2[t] = Complex64::ZERO;
            }
            touched2.clear();
            for p in 0..m {
                if rows1[p] {
                    for q in 0..n {
                        grid1[q * m + p] = Complex64::ZERO;
                    }
                    rows1[p] = false;
                }
                if rows2[p] {
                    for q in 0..n {
                        grid2[q * m + p] = Complex64::ZERO;
                    }
                    rows2[p] = false;
                }
            }
        }
        b
    }
}

impl LinOp for EffectiveChannelOp {
    fn rows(&self) -> usize {
        self.cfg.grid_len()
    }
    fn cols(&self) -> usize {
        self.cfg.grid_len()
    }
    fn apply(&self, x: &[Complex64], out: &mut [Complex64]) {
        let mut grid = x.to_vec();
        let s = modulate_grid(&mut grid, &self.cfg, &self.dft);
        let r = self.channel_forward(&s);
        out.copy_from_slice(&demodulate_frame(&r, &self.cfg, &self.dft));
    }
    fn apply_adjoint(&self, y: &[Complex64], out: &mut [Complex64]) {
        let r = demodulate_adjoint(y, &self.cfg, &self.dft);
        let s = self.channel_adjoint(&r);
        out.copy_from_slice(&modulate_adjoint(&s, &self.cfg, &self.dft));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{
        apply_ltv_channel, build_time_domain_matrix, sample_tdlc, ChannelMode, PathTap,
    };
    use crate::linalg::norm2;
    use crate::mlsqr::{bccb_eigenvalues, materialize, DenseOp};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_vec(n: usize, rng: &mut impl Rng) -> Vec<Complex64> {
        (0..n)
            .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect()
    }

    #[test]
    fn one_point_idft_without_cp_is_identity() {
        let cfg = FrameConfig::new(5, 1, 0, 15e3, 5.9e9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let x = random_vec(5, &mut rng);
        let s = otfs_modulate(&x, &cfg).unwrap();
        for (a, b) in s.iter().zip(&x) {
            assert!((a - b).norm() < 1e-14);
        }
    }

    #[test]
    fn modulation_without_cp_is_unitary() {
        let cfg = FrameConfig::new(4, 8, 0, 15e3, 5.9e9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let x = random_vec(cfg.grid_len(), &mut rng);
        let s = otfs_modulate(&x, &cfg).unwrap();
        assert!((norm2(&s) - norm2(&x)).abs() < 1e-12);
    }

    #[test]
    fn hand_evaluated_2x2_with_cp() {
        // x = e_1, M = 2, N = 2, n_cp = 1: s = (1/sqrt(2)) (0,1,0, 0,1,0).
        let cfg = FrameConfig::new(2, 2, 1, 15e3, 5.9e9).unwrap();
        let x = vec![Complex64::ONE, Complex64::ZERO, Complex64::ZERO, Complex64::ZERO];
        let s = otfs_modulate(&x, &cfg).unwrap();
        let r = 1.0 / 2.0f64.sqrt();
        let expect = [0.0, r, 0.0, 0.0, r, 0.0];
        for (a, b) in s.iter().zip(expect) {
            assert!((a - Complex64::new(b, 0.0)).norm() < 1e-14, "{s:?}");
        }
    }

    #[test]
    fn modulate_rejects_wrong_length() {
        let cfg = FrameConfig::new(4, 4, 1, 15e3, 5.9e9).unwrap();
        assert!(otfs_modulate(&vec![Complex64::ZERO; 15], &cfg).is_err());
        assert!(otfs_demodulate(&vec![Complex64::ZERO; 19], &cfg).is_err());
    }

    #[test]
    fn roundtrip_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for (m, n, n_cp) in [(2usize, 4usize, 1usize), (8, 2, 3), (16, 8, 5)] {
            let cfg = FrameConfig::new(m, n, n_cp, 15e3, 5.9e9).unwrap();
            let x = random_vec(cfg.grid_len(), &mut rng);
            let y = otfs_demodulate(&otfs_modulate(&x, &cfg).unwrap(), &cfg).unwrap();
            for (a, b) in y.iter().zip(&x) {
                assert!((a - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn demodulate_constant_input() {
        // N = 2, M = 1, n_cp = 0, r = (1, 1): y = (sqrt(2), 0).
        let cfg = FrameConfig::new(1, 2, 0, 15e3, 5.9e9).unwrap();
        let y = otfs_demodulate(&[Complex64::ONE, Complex64::ONE], &cfg).unwrap();
        assert!((y[0] - Complex64::new(2.0f64.sqrt(), 0.0)).norm() < 1e-14);
        assert!(y[1].norm() < 1e-14);
    }

    #[test]
    fn white_noise_stays_white_through_demodulation() {
        let cfg = FrameConfig::new(2, 2, 1, 15e3, 5.9e9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let sigma2 = 0.5;
        let draws = 10_000;
        let mn = cfg.grid_len();
        let mut cov = CMat::zeros(mn, mn);
        for _ in 0..draws {
            let noise =
                crate::channel::add_awgn(&vec![Complex64::ZERO; cfg.frame_len()], sigma2, &mut rng)
                    .unwrap();
            let y = otfs_demodulate(&noise, &cfg).unwrap();
            for i in 0..mn {
                for j in 0..mn {
                    cov[(i, j)] += y[i] * y[j].conj();
                }
            }
        }
        cov.scale(Complex64::new(1.0 / draws as f64, 0.0));
        for i in 0..mn {
            for j in 0..mn {
                let expect = if i == j { sigma2 } else { 0.0 };
                assert!(
                    (cov[(i, j)] - Complex64::new(expect, 0.0)).norm() < 0.05 * sigma2,
                    "cov[{i}][{j}] = {}",
                    cov[(i, j)]
                );
            }
        }
    }

    #[test]
    fn superimpose_validates_fractions() {
        let s1 = vec![Complex64::ONE; 4];
        let s2 = vec![Complex64::ZERO; 4];
        assert!(superimpose(&s1, &s2, 0.9, 0.2).is_err());
        assert!(superimpose(&s1, &s2, 0.3, 0.7).is_err());
        assert!(superimpose(&s1, &s2, 1.0, 0.0).is_err());
        let s = superimpose(&s1, &s2, 0.8, 0.2).unwrap();
        for v in &s {
            assert!((v - Complex64::new(0.8f64.sqrt(), 0.0)).norm() < 1e-14);
        }
    }

    #[test]
    fn superimpose_conserves_power_on_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let len = 64;
        let draws = 1000;
        let mut acc = 0.0;
        for _ in 0..draws {
            let s1 = random_vec(len, &mut rng);
            let s2 = random_vec(len, &mut rng);
            let s = superimpose(&s1, &s2, 0.7, 0.3).unwrap();
            let p1 = norm2(&s1).powi(2);
            let p2 = norm2(&s2).powi(2);
            acc += norm2(&s).powi(2) / (0.7 * p1 + 0.3 * p2);
        }
        let mean = acc / draws as f64;
        assert!((mean - 1.0).abs() < 0.02, "power ratio {mean}");
    }

    #[test]
    fn effective_channel_of_identity_is_identity() {
        let cfg = FrameConfig::new(4, 3, 2, 15e3, 5.9e9).unwrap();
        let h = CMat::identity(cfg.frame_len());
        let g = build_effective_channel(&h, &cfg).unwrap();
        assert!(g.sub(&CMat::identity(cfg.grid_len())).frob_norm() < 1e-12);

        let mut hc = CMat::identity(cfg.frame_len());
        hc.scale(Complex64::new(0.3, -1.1));
        let gc = build_effective_channel(&hc, &cfg).unwrap();
        let mut expect = CMat::identity(cfg.grid_len());
        expect.scale(Complex64::new(0.3, -1.1));
        assert!(gc.sub(&expect).frob_norm() < 1e-12);
    }

    #[test]
    fn modulation_energy_with_cp_matches_dense_evaluation() {
        let cfg = FrameConfig::new(4, 4, 2, 15e3, 5.9e9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let x = random_vec(cfg.grid_len(), &mut rng);
        let s = otfs_modulate(&x, &cfg).unwrap();

        // Dense route: A_cp (X F_N^H), built elementwise.
        let (m, n, n_cp) = (cfg.m, cfg.n, cfg.n_cp);
        let mut xf = CMat::zeros(m, n);
        for p in 0..m {
            for q in 0..n {
                let mut acc = Complex64::ZERO;
                for k in 0..n {
                    let ph = std::f64::consts::TAU * (q * k) as f64 / n as f64;
                    acc += x[k * m + p] * Complex64::from_polar(1.0 / (n as f64).sqrt(), ph);
                }
                xf[(p, q)] = acc;
            }
        }
        let mut energy = 0.0;
        for q in 0..n {
            for p in m - n_cp..m {
                energy += xf[(p, q)].norm_sqr();
            }
            for p in 0..m {
                energy += xf[(p, q)].norm_sqr();
            }
        }
        assert!((norm2(&s).powi(2) - energy).abs() < 1e-10);
    }

    #[test]
    fn operator_matches_dense_effective_channel() {
        let cfg = FrameConfig::new(8, 4, 2, 15e3, 5.9e9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(46);
        for mode in [ChannelMode::Continuous, ChannelMode::BlockFading] {
            let ch = sample_tdlc(2e-6, 900.0, &cfg, &mut rng).unwrap();
            let h = build_time_domain_matrix(&ch, &cfg, mode);
            let g_dense = build_effective_channel(&h, &cfg).unwrap();
            let op = EffectiveChannelOp::new(&ch, &cfg, mode);
            let x = random_vec(cfg.grid_len(), &mut rng);
            let mut via_op = vec![Complex64::ZERO; cfg.grid_len()];
            op.apply(&x, &mut via_op);
            let via_dense = g_dense.matvec(&x);
            for (a, b) in via_op.iter().zip(&via_dense) {
                assert!((a - b).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn operator_channel_stage_matches_channel_module() {
        let cfg = FrameConfig::new(8, 4, 2, 15e3, 5.9e9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        for mode in [ChannelMode::Continuous, ChannelMode::BlockFading] {
            let ch = sample_tdlc(2e-6, 1200.0, &cfg, &mut rng).unwrap();
            let op = EffectiveChannelOp::new(&ch, &cfg, mode);
            let s = random_vec(cfg.frame_len(), &mut rng);
            let expect = apply_ltv_channel(&s, &ch, &cfg, mode);
            let got = op.channel_forward(&s);
            for (a, b) in got.iter().zip(&expect) {
                assert!((a - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn operator_adjoint_is_consistent() {
        let cfg = FrameConfig::new(8, 4, 2, 15e3, 5.9e9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(48);
        let ch = sample_tdlc(2e-6, 600.0, &cfg, &mut rng).unwrap();
        let op = EffectiveChannelOp::new(&ch, &cfg, ChannelMode::Continuous);
        for _ in 0..10 {
            let v = random_vec(op.cols(), &mut rng);
            let u = random_vec(op.rows(), &mut rng);
            let mut gv = vec![Complex64::ZERO; op.rows()];
            let mut ghu = vec![Complex64::ZERO; op.cols()];
            op.apply(&v, &mut gv);
            op.apply_adjoint(&u, &mut ghu);
            let lhs: Complex64 = gv.iter().zip(&u).map(|(a, b)| a * b.conj()).sum();
            let rhs: Complex64 = v.iter().zip(&ghu).map(|(a, b)| a * b.conj()).sum();
            assert!((lhs - rhs).norm() < 1e-10);
        }
    }

    #[test]
    fn operator_adjoint_matches_dense_adjoint() {
        let cfg = FrameConfig::new(4, 4, 1, 15e3, 5.9e9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(49);
        let ch = sample_tdlc(1e-6, 500.0, &cfg, &mut rng).unwrap();
        let op = EffectiveChannelOp::new(&ch, &cfg, ChannelMode::Continuous);
        let g = materialize(&op);
        let gh = g.adjoint();
        let y = random_vec(op.rows(), &mut rng);
        let mut got = vec![Complex64::ZERO; op.cols()];
        op.apply_adjoint(&y, &mut got);
        let expect = gh.matvec(&y);
        for (a, b) in got.iter().zip(&expect) {
            assert!((a - b).norm() < 1e-10);
        }
        // The dense op wrapper agrees with itself too.
        let dop = DenseOp(&g);
        let mut got2 = vec![Complex64::ZERO; op.cols()];
        dop.apply_adjoint(&y, &mut got2);
        for (a, b) in got2.iter().zip(&expect) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    /// Reconstructs a BCCB matrix from its first-column eigenvalues and
    /// checks it reproduces `g`.
    fn assert_bccb(g: &CMat, m: usize, n: usize, tol: f64) {
        let mn = m * n;
        let lam = bccb_eigenvalues(&g.col(0), m, n);
        let d = crate::dft::Dft2::new(m, n);
        let mut rec = CMat::zeros(mn, mn);
        for j in 0..mn {
            let mut col = vec![Complex64::ZERO; mn];
            col[j] = Complex64::ONE;
            d.fft2(&mut col);
            for (c, l) in col.iter_mut().zip(&lam) {
                *c *= l / mn as f64;
            }
            d.ifft2(&mut col);
            rec.set_col(j, &col);
        }
        let rel = rec.sub(g).frob_norm() / g.frob_norm();
        assert!(rel < tol, "BCCB reconstruction error {rel:e}");
    }

    #[test]
    fn time_invariant_two_tap_channel_gives_bccb_effective_matrix() {
        let cfg = FrameConfig::new(4, 4, 1, 15e3, 5.9e9).unwrap();
        let ch = ChannelRealization {
            paths: vec![
                PathTap { gain: Complex64::ONE, delay_tap: 0, doppler_hz: 0.0 },
                PathTap { gain: Complex64::new(0.5, 0.0), delay_tap: 1, doppler_hz: 0.0 },
            ],
            pdp: vec![0.8, 0.2],
            v_max_hz: 0.0,
        };
        let h = build_time_domain_matrix(&ch, &cfg, ChannelMode::Continuous);
        let g = build_effective_channel(&h, &cfg).unwrap();
        assert_bccb(&g, cfg.m, cfg.n, 1e-10);
    }

    #[test]
    fn normal_matrix_matches_chained_applies() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        for (m, n, n_cp, ds, v) in
            [(8usize, 4usize, 2usize, 2e-6, 900.0), (4, 4, 1, 1e-6, 1500.0), (16, 8, 3, 1.4e-6, 700.0)]
        {
            let cfg = FrameConfig::new(m, n, n_cp, 15e3, 5.9e9).unwrap();
            let ch = sample_tdlc(ds, v, &cfg, &mut rng).unwrap();
            for mode in [ChannelMode::Continuous, ChannelMode::BlockFading] {
                let op = EffectiveChannelOp::new(&ch, &cfg, mode);
                let sigma2 = 0.07;
                let fast = op.normal_matrix(sigma2);
                // Oracle: chained full applies per basis vector.
                let mn = cfg.grid_len();
                let mut slow = CMat::zeros(mn, mn);
                let mut e = vec![Complex64::ZERO; mn];
                let mut ge = vec![Complex64::ZERO; mn];
                let mut col = vec![Complex64::ZERO; mn];
                for j in 0..mn {
                    e[j] = Complex64::ONE;
                    op.apply(&e, &mut ge);
                    op.apply_adjoint(&ge, &mut col);
                    slow.set_col(j, &col);
                    e[j] = Complex64::ZERO;
                }
                slow.add_scaled_identity(sigma2);
                let rel = fast.sub(&slow).frob_norm() / slow.frob_norm();
                assert!(rel < 1e-12, "m={m} n={n} mode {mode:?}: rel err {rel:e}");

                // Cyclic delay band: entries vanish beyond l_max.
                let l_max = op.max_delay_tap();
                for i in 0..mn {
                    for j in 0..mn {
                        let (pi, pj) = (i % m, j % m);
                        let dist = (pi as isize - pj as isize).rem_euclid(m as isize) as usize;
                        let circ = dist.min(m - dist);
                        if circ > l_max {
                            assert!(
                                fast[(i, j)].norm() < 1e-14,
                                "band violation at ({i},{j}), circ distance {circ}"
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn block_fading_effective_matrix_is_exactly_bccb() {
        let cfg = FrameConfig::new(8, 4, 2, 15e3, 5.9e9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let ch = sample_tdlc(2e-6, 1500.0, &cfg, &mut rng).unwrap();
        let h = build_time_domain_matrix(&ch, &cfg, ChannelMode::BlockFading);
        let g = build_effective_channel(&h, &cfg).unwrap();
        assert_bccb(&g, cfg.m, cfg.n, 1e-10);
    }
}
