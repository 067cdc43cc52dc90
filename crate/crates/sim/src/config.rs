//! Simulation configuration: defaults, key=value file parsing, resolution.

use otfs_noma::channel::{required_cp_len, ChannelMode};
use otfs_noma::grid::{build_constellation, FrameConfig, QamConstellation, ZoneRule};
use otfs_noma::{Error, Result};

/// Speed of light used for the velocity-to-Doppler conversion.
pub const SPEED_OF_LIGHT: f64 = 2.998e8;

/// Detection scheme under test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    ProposedOptimized,
    ProposedNaive,
    MmseSic,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::ProposedOptimized, Scheme::ProposedNaive, Scheme::MmseSic];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::ProposedOptimized => "proposed_optimized",
            Scheme::ProposedNaive => "proposed_naive",
            Scheme::MmseSic => "mmse_sic",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "proposed_optimized" => Ok(Scheme::ProposedOptimized),
            "proposed_naive" => Ok(Scheme::ProposedNaive),
            "mmse_sic" => Ok(Scheme::MmseSic),
            other => Err(Error::Config(format!(
                "unknown scheme '{other}' (expected proposed_optimized, proposed_naive or mmse_sic)"
            ))),
        }
    }
}

/// Full experiment description; field defaults follow the reference
/// simulation setup (64x16 grid at 5.9 GHz, 15 kHz spacing, TDL-C 300 ns,
/// 15 dB user SNR gap, K = 10, U = 15, eps = 1e-2).
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub delay_bins: usize,
    pub doppler_bins: usize,
    /// Cyclic-prefix length; `None` picks the smallest CP covering the
    /// delay spread.
    pub cp_len: Option<usize>,
    pub subcarrier_spacing_hz: f64,
    pub carrier_frequency_hz: f64,
    pub qam_order_1: usize,
    pub qam_order_2: usize,
    /// User 1 SNR sweep (dB); User 2 runs `snr_gap_db` above each point.
    pub snr_db_user1: Vec<f64>,
    pub snr_gap_db: f64,
    pub delay_spread_ns: f64,
    /// Velocity sweep (km/h), converted through the carrier frequency.
    pub velocity_kmh: Vec<f64>,
    /// Direct maximum-Doppler sweep (Hz); overrides `velocity_kmh` when set.
    pub v_max_hz: Option<Vec<f64>>,
    pub channel_mode: ChannelMode,
    pub trials: usize,
    pub seed: u64,
    pub schemes: Vec<Scheme>,
    /// Outer detector iterations `K`.
    pub detector_iterations: usize,
    /// mLSQR iterations `U`.
    pub mlsqr_iterations: usize,
    /// mLSQR tolerance.
    pub mlsqr_tolerance: f64,
    pub zone_rule: ZoneRule,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            delay_bins: 64,
            doppler_bins: 16,
            cp_len: None,
            subcarrier_spacing_hz: 15e3,
            carrier_frequency_hz: 5.9e9,
            qam_order_1: 4,
            qam_order_2: 4,
            snr_db_user1: vec![10.0, 14.0, 18.0, 22.0],
            snr_gap_db: 15.0,
            delay_spread_ns: 300.0,
            velocity_kmh: vec![200.0],
            v_max_hz: None,
            channel_mode: ChannelMode::Continuous,
            trials: 1000,
            seed: 1,
            schemes: Scheme::ALL.to_vec(),
            detector_iterations: 10,
            mlsqr_iterations: 15,
            mlsqr_tolerance: 1e-2,
            zone_rule: ZoneRule::Or,
        }
    }
}

fn parse_list<T: std::str::FromStr>(value: &str, key: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<T>()
                .map_err(|_| Error::Config(format!("cannot parse '{v}' in key '{key}'")))
        })
        .collect()
}

fn parse_scalar<T: std::str::FromStr>(value: &str, key: &str) -> Result<T> {
    value
        .trim()
        .parse::<T>()
        .map_err(|_| Error::Config(format!("cannot parse '{value}' for key '{key}'")))
}

impl SimConfig {
    /// Parses a flat `key = value` configuration ('#' starts a comment).
    /// Unknown keys are errors.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = SimConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got '{line}'", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "delay_bins" => cfg.delay_bins = parse_scalar(value, key)?,
                "doppler_bins" => cfg.doppler_bins = parse_scalar(value, key)?,
                "cp_len" => cfg.cp_len = Some(parse_scalar(value, key)?),
                "subcarrier_spacing_hz" => cfg.subcarrier_spacing_hz = parse_scalar(value, key)?,
                "carrier_frequency_hz" => cfg.carrier_frequency_hz = parse_scalar(value, key)?,
                "qam_order_1" => cfg.qam_order_1 = parse_scalar(value, key)?,
                "qam_order_2" => cfg.qam_order_2 = parse_scalar(value, key)?,
                "snr_db_user1" => cfg.snr_db_user1 = parse_list(value, key)?,
                "snr_gap_db" => cfg.snr_gap_db = parse_scalar(value, key)?,
                "delay_spread_ns" => cfg.delay_spread_ns = parse_scalar(value, key)?,
                "velocity_kmh" => cfg.velocity_kmh = parse_list(value, key)?,
                "v_max_hz" => cfg.v_max_hz = Some(parse_list(value, key)?),
                "channel_mode" => {
                    cfg.channel_mode = match value {
                        "continuous" => ChannelMode::Continuous,
                        "block_fading" => ChannelMode::BlockFading,
                        other => {
                            return Err(Error::Config(format!("unknown channel_mode '{other}'")))
                        }
                    }
                }
                "trials" => cfg.trials = parse_scalar(value, key)?,
                "seed" => cfg.seed = parse_scalar(value, key)?,
                "schemes" => {
                    cfg.schemes =
                        value.split(',').map(Scheme::parse).collect::<Result<Vec<_>>>()?
                }
                "detector_iterations" => cfg.detector_iterations = parse_scalar(value, key)?,
                "mlsqr_iterations" => cfg.mlsqr_iterations = parse_scalar(value, key)?,
                "mlsqr_tolerance" => cfg.mlsqr_tolerance = parse_scalar(value, key)?,
                "zone_rule" => {
                    cfg.zone_rule = match value {
                        "or" => ZoneRule::Or,
                        "and" => ZoneRule::And,
                        other => return Err(Error::Config(format!("unknown zone_rule '{other}'"))),
                    }
                }
                other => return Err(Error::Config(format!("unknown configuration key '{other}'"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials < 1 {
            return Err(Error::Config("trials must be >= 1".into()));
        }
        if self.snr_db_user1.is_empty() {
            return Err(Error::Config("snr_db_user1 sweep must not be empty".into()));
        }
        if self.v_max_hz.as_ref().map_or(self.velocity_kmh.is_empty(), |v| v.is_empty()) {
            return Err(Error::Config("velocity sweep must not be empty".into()));
        }
        if self.schemes.is_empty() {
            return Err(Error::Config("at least one scheme must be enabled".into()));
        }
        Ok(())
    }

    /// Maximum-Doppler sweep in Hz.
    pub fn doppler_sweep_hz(&self) -> Vec<f64> {
        match &self.v_max_hz {
            Some(list) => list.clone(),
            None => self
                .velocity_kmh
                .iter()
                .map(|v| v / 3.6 * self.carrier_frequency_hz / SPEED_OF_LIGHT)
                .collect(),
        }
    }

    pub fn delay_spread_s(&self) -> f64 {
        self.delay_spread_ns * 1e-9
    }

    /// Frame geometry with the CP auto-sizing rule applied.
    pub fn frame(&self) -> Result<FrameConfig> {
        // t_s depends only on M and delta_f, so a zero-CP probe is enough to
        // size the prefix.
        let probe = FrameConfig::new(
            self.delay_bins,
            self.doppler_bins,
            0,
            self.subcarrier_spacing_hz,
            self.carrier_frequency_hz,
        )?;
        let n_cp = match self.cp_len {
            Some(v) => v,
            None => required_cp_len(self.delay_spread_s(), &probe),
        };
        FrameConfig::new(
            self.delay_bins,
            self.doppler_bins,
            n_cp,
            self.subcarrier_spacing_hz,
            self.carrier_frequency_hz,
        )
    }

    pub fn constellations(&self) -> Result<(QamConstellation, QamConstellation)> {
        Ok((build_constellation(self.qam_order_1)?, build_constellation(self.qam_order_2)?))
    }

    /// Renders the resolved configuration in the same key=value format the
    /// parser accepts.
    pub fn render(&self) -> String {
        let list = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let mut out = String::new();
        out.push_str(&format!("delay_bins = {}\n", self.delay_bins));
        out.push_str(&format!("doppler_bins = {}\n", self.doppler_bins));
        match self.cp_len {
            Some(v) => out.push_str(&format!("cp_len = {v}\n")),
            None => out.push_str(&format!(
                "# cp_len auto-sized to {} from the delay spread\n",
                self.frame().map(|f| f.n_cp).unwrap_or(0)
            )),
        }
        out.push_str(&format!("subcarrier_spacing_hz = {}\n", self.subcarrier_spacing_hz));
        out.push_str(&format!("carrier_frequency_hz = {}\n", self.carrier_frequency_hz));
        out.push_str(&format!("qam_order_1 = {}\n", self.qam_order_1));
        out.push_str(&format!("qam_order_2 = {}\n", self.qam_order_2));
        out.push_str(&format!("snr_db_user1 = {}\n", list(&self.snr_db_user1)));
        out.push_str(&format!("snr_gap_db = {}\n", self.snr_gap_db));
        out.push_str(&format!("delay_spread_ns = {}\n", self.delay_spread_ns));
        match &self.v_max_hz {
            Some(v) => out.push_str(&format!("v_max_hz = {}\n", list(v))),
            None => out.push_str(&format!("velocity_kmh = {}\n", list(&self.velocity_kmh))),
        }
        out.push_str(&format!(
            "channel_mode = {}\n",
            match self.channel_mode {
                ChannelMode::Continuous => "continuous",
                ChannelMode::BlockFading => "block_fading",
            }
        ));
        out.push_str(&format!("trials = {}\n", self.trials));
        out.push_str(&format!("seed = {}\n", self.seed));
        out.push_str(&format!(
            "schemes = {}\n",
            self.schemes.iter().map(|s| s.name()).collect::<Vec<_>>().join(",")
        ));
        out.push_str(&format!("detector_iterations = {}\n", self.detector_iterations));
        out.push_str(&format!("mlsqr_iterations = {}\n", self.mlsqr_iterations));
        out.push_str(&format!("mlsqr_tolerance = {}\n", self.mlsqr_tolerance));
        out.push_str(&format!(
            "zone_rule = {}\n",
            match self.zone_rule {
                ZoneRule::Or => "or",
                ZoneRule::And => "and",
            }
        ));
        out
    }
}
