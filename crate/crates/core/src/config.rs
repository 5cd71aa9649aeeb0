//! TOML run configuration shared by every subcommand.
//!
//! Frequencies are given in Hz (`*_hz` keys) and converted to rad/s with a
//! factor `2π`; times carry their unit in the key name. Complex amplitudes
//! are either a number or an `[re, im]` pair. Every section and key is
//! optional and falls back to the library defaults.
//!
//! ```toml
//! [physics]
//! g_hz = 1.5e6
//! drive_photons = 0.55      # or drive_amplitude = [re, im]
//! lo_mix = 0.0
//!
//! [simulation]
//! n_traj = 64
//! duration_us = 50
//! seed = 7
//!
//! [feedback]
//! enabled = true
//! window_us = 2.5
//! attenuation = 0.0
//!
//! [analysis]
//! bin_ns = 10
//! tau_max_us = 6
//! filter = "jump-count:13"
//!
//! [compare]
//! freq_tolerance = 0.1
//! ```

use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::analytic::Pair;
use crate::correlation::{Conditioning, CorrelationOptions};
use crate::error::{Error, Result};
use crate::model::Frame;
use crate::params::{hz, PhysicalParams};
use crate::records::{parse_channel_set, ps, DetectorModel};
use crate::trajectory::{AtomModel, FeedbackProtocol, InitialGroundState, TrajectoryConfig};

/// A complex number written as `x` or `[re, im]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ComplexValue {
    Real(f64),
    Pair([f64; 2]),
}

impl ComplexValue {
    pub fn value(self) -> Complex64 {
        match self {
            ComplexValue::Real(x) => Complex64::new(x, 0.0),
            ComplexValue::Pair([re, im]) => Complex64::new(re, im),
        }
    }
}

impl From<Complex64> for ComplexValue {
    fn from(c: Complex64) -> Self {
        if c.im == 0.0 {
            ComplexValue::Real(c.re)
        } else {
            ComplexValue::Pair([c.re, c.im])
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicsSection {
    pub g_hz: f64,
    pub kappa_hz: f64,
    pub gamma_hz: f64,
    pub delta_g_hz: f64,
    pub delta_e_hz: f64,
    /// Overrides `drive_amplitude` with a real amplitude `sqrt(n)`.
    pub drive_photons: Option<f64>,
    pub drive_amplitude: ComplexValue,
    pub drive_detuning_hz: f64,
    pub lo_mix: ComplexValue,
    pub pi_branch: f64,
    pub sigma_branch: f64,
}

impl Default for PhysicsSection {
    fn default() -> Self {
        let p = PhysicalParams::default();
        let f = |w: f64| crate::params::to_hz(w);
        Self {
            g_hz: f(p.g),
            kappa_hz: f(p.kappa),
            gamma_hz: f(p.gamma),
            delta_g_hz: f(p.delta_g),
            delta_e_hz: f(p.delta_e),
            drive_photons: None,
            drive_amplitude: p.drive_amplitude.into(),
            drive_detuning_hz: f(p.drive_detuning),
            lo_mix: p.lo_mix.into(),
            pi_branch: p.pi_branch,
            sigma_branch: p.sigma_branch,
        }
    }
}

impl PhysicsSection {
    pub fn params(&self) -> Result<PhysicalParams> {
        let mut p = PhysicalParams {
            g: hz(self.g_hz),
            kappa: hz(self.kappa_hz),
            gamma: hz(self.gamma_hz),
            delta_g: hz(self.delta_g_hz),
            delta_e: hz(self.delta_e_hz),
            drive_amplitude: self.drive_amplitude.value(),
            drive_detuning: hz(self.drive_detuning_hz),
            lo_mix: self.lo_mix.value(),
            pi_branch: self.pi_branch,
            sigma_branch: self.sigma_branch,
            weights: Default::default(),
        };
        if let Some(n) = self.drive_photons {
            if !(n >= 0.0) {
                return Err(Error::Config(format!("drive_photons must be non-negative, got {n}")));
            }
            p = p.with_drive_photons(n);
        }
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AtomSection {
    FixedMaxCoupled,
    Transit { mean_transit_us: f64, arrival_rate_hz: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSection {
    pub n_traj: usize,
    pub duration_us: f64,
    pub warmup_us: f64,
    pub dt_ns: f64,
    pub seed: u64,
    pub frame: Frame,
    pub n_max_v: usize,
    pub n_max_h: usize,
    pub initial_atom_state: [f64; 3],
    pub atom: AtomSection,
    /// Write records as text instead of binary.
    pub text_records: bool,
    pub detector_efficiency: f64,
    pub detector_dead_time_ns: f64,
    pub detector_dark_rate_hz: f64,
}

impl Default for SimulationSection {
    fn default() -> Self {
        let t = TrajectoryConfig::default();
        let d = DetectorModel::default();
        Self {
            n_traj: 16,
            duration_us: t.duration * 1e6,
            warmup_us: t.warmup * 1e6,
            dt_ns: t.dt_max * 1e9,
            seed: t.seed,
            frame: t.frame,
            n_max_v: t.n_max_v,
            n_max_h: t.n_max_h,
            initial_atom_state: t.initial_atom_state.0,
            atom: AtomSection::FixedMaxCoupled,
            text_records: false,
            detector_efficiency: d.efficiency,
            detector_dead_time_ns: d.dead_time * 1e9,
            detector_dark_rate_hz: d.dark_rate,
        }
    }
}

impl SimulationSection {
    pub fn detector(&self) -> DetectorModel {
        DetectorModel {
            efficiency: self.detector_efficiency,
            dead_time: self.detector_dead_time_ns * 1e-9,
            dark_rate: self.detector_dark_rate_hz,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeedbackSection {
    pub enabled: bool,
    /// Channel set, e.g. `"H"` or `"H_det_A"`.
    pub trigger_channels: String,
    pub latency_ns: f64,
    pub delay_ns: f64,
    pub window_us: f64,
    pub attenuation: f64,
}

impl Default for FeedbackSection {
    fn default() -> Self {
        let f = FeedbackProtocol::default();
        Self {
            enabled: f.enabled,
            trigger_channels: "H".into(),
            latency_ns: f.electronic_latency * 1e9,
            delay_ns: f.delay_after_detection * 1e9,
            window_us: f.window_duration * 1e6,
            attenuation: f.attenuation_factor,
        }
    }
}

impl FeedbackSection {
    pub fn protocol(&self) -> Result<FeedbackProtocol> {
        let p = FeedbackProtocol {
            enabled: self.enabled,
            trigger_channels: parse_channel_set(&self.trigger_channels)?,
            electronic_latency: self.latency_ns * 1e-9,
            delay_after_detection: self.delay_ns * 1e-9,
            window_duration: self.window_us * 1e-6,
            attenuation_factor: self.attenuation,
        };
        p.validate()?;
        Ok(p)
    }
}

/// Post-selection applied before correlating.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FilterSpec {
    None,
    /// Keep segments with at most `max_jumps` side emissions in `window_s`
    /// after the conditioning detection (`None` = `300/γ`).
    JumpCount { max_jumps: usize, window_s: Option<f64> },
    /// Coincidence window and skip duration, seconds.
    Time { window_s: f64, skip_s: f64 },
}

impl FilterSpec {
    /// Parses `none`, `jump-count:N[,window_us]` or `time:window_ns,skip_us`.
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("malformed filter '{s}'"));
        let num = |x: &str| x.trim().parse::<f64>().map_err(|_| bad());
        let s = s.trim();
        if s.is_empty() || s == "none" {
            return Ok(FilterSpec::None);
        }
        let (kind, args) = s.split_once(':').ok_or_else(bad)?;
        let args: Vec<&str> = args.split(',').collect();
        match (kind, args.as_slice()) {
            ("jump-count", [n]) => Ok(FilterSpec::JumpCount {
                max_jumps: n.trim().parse().map_err(|_| bad())?,
                window_s: None,
            }),
            ("jump-count", [n, w]) => Ok(FilterSpec::JumpCount {
                max_jumps: n.trim().parse().map_err(|_| bad())?,
                window_s: Some(num(w)? * 1e-6),
            }),
            ("time", [w, k]) => {
                let (window_s, skip_s) = (num(w)? * 1e-9, num(k)? * 1e-6);
                if !(window_s > 0.0 && skip_s > 0.0) {
                    return Err(Error::Config("time filter needs positive window and skip".into()));
                }
                Ok(FilterSpec::Time { window_s, skip_s })
            }
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    pub bin_ns: f64,
    pub tau_max_us: f64,
    pub start_channels: String,
    pub stop_channels: String,
    pub conditioning: Conditioning,
    pub filter: String,
    pub fit_t_min_us: f64,
    /// Defaults to `tau_max_us`.
    pub fit_t_max_us: Option<f64>,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        let c = CorrelationOptions::default();
        Self {
            bin_ns: c.bin_width_ps as f64 / 1e3,
            tau_max_us: c.tau_max_ps as f64 / 1e6,
            start_channels: "H_det_A".into(),
            stop_channels: "H_det_B".into(),
            conditioning: c.conditioning,
            filter: "none".into(),
            fit_t_min_us: 0.0,
            fit_t_max_us: None,
        }
    }
}

impl AnalysisSection {
    pub fn correlation_options(&self) -> Result<CorrelationOptions> {
        let o = CorrelationOptions {
            start_channels: parse_channel_set(&self.start_channels)?,
            stop_channels: parse_channel_set(&self.stop_channels)?,
            bin_width_ps: ps(self.bin_ns * 1e-9),
            tau_max_ps: ps(self.tau_max_us * 1e-6),
            conditioning: self.conditioning,
        };
        o.validate()?;
        Ok(o)
    }

    pub fn filter(&self) -> Result<FilterSpec> {
        FilterSpec::parse(&self.filter)
    }
}

/// Which coherence the fitted beat is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairChoice {
    /// The expected component closest to the fitted frequency.
    #[default]
    Auto,
    PlusMinus,
    PlusMinusZero,
}

impl PairChoice {
    pub fn fixed(self) -> Option<Pair> {
        match self {
            PairChoice::Auto => None,
            PairChoice::PlusMinus => Some(Pair::PlusMinus),
            PairChoice::PlusMinusZero => Some(Pair::PlusMinusZero),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareSection {
    pub freq_tolerance: f64,
    /// Omit to skip the decay comparison.
    pub decay_tolerance: Option<f64>,
    pub pair: PairChoice,
}

impl Default for CompareSection {
    fn default() -> Self {
        Self {
            freq_tolerance: 0.10,
            decay_tolerance: None,
            pair: PairChoice::Auto,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub physics: PhysicsSection,
    pub simulation: SimulationSection,
    pub feedback: FeedbackSection,
    pub analysis: AnalysisSection,
    pub compare: CompareSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn params(&self) -> Result<PhysicalParams> {
        self.physics.params()
    }

    pub fn trajectory_config(&self) -> Result<TrajectoryConfig> {
        let s = &self.simulation;
        let atom_model = match s.atom {
            AtomSection::FixedMaxCoupled => AtomModel::FixedMaxCoupled,
            AtomSection::Transit {
                mean_transit_us,
                arrival_rate_hz,
            } => AtomModel::Transit {
                mean_transit: mean_transit_us * 1e-6,
                arrival_rate: arrival_rate_hz,
            },
        };
        let cfg = TrajectoryConfig {
            duration: s.duration_us * 1e-6,
            warmup: s.warmup_us * 1e-6,
            dt_max: s.dt_ns * 1e-9,
            seed: s.seed,
            atom_model,
            initial_atom_state: InitialGroundState(s.initial_atom_state),
            feedback: self.feedback.protocol()?,
            frame: s.frame,
            n_max_v: s.n_max_v,
            n_max_h: s.n_max_h,
        };
        cfg.validate(&self.params()?)?;
        Ok(cfg)
    }

    /// Everything except the trajectory engine checked up front.
    pub fn validate(&self) -> Result<()> {
        self.trajectory_config()?;
        self.analysis.correlation_options()?;
        self.analysis.filter()?;
        if self.simulation.n_traj == 0 {
            return Err(Error::Config("n_traj must be at least 1".into()));
        }
        Ok(())
    }
}
