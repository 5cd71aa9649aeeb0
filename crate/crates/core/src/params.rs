//! Physical parameters of the two-mode cavity QED model.
//!
//! All rates and shifts are angular frequencies in rad/s. Configuration files
//! carry frequencies in Hz; [`hz`] performs the documented `2π` conversion.

use std::f64::consts::TAU;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Converts a frequency in Hz to an angular frequency in rad/s.
pub fn hz(f: f64) -> f64 {
    TAU * f
}

/// Converts an angular frequency in rad/s to Hz.
pub fn to_hz(w: f64) -> f64 {
    w / TAU
}

/// Relative dipole weights of the individual transitions.
///
/// The reduced model uses uniform couplings (all ones). Clebsch-Gordan
/// coefficients can be injected here; they scale both the cavity coupling and
/// the side-emission operator of the corresponding transition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionWeights {
    /// π transitions `e_m -> g_m` for m = -1, 0, +1.
    pub pi: [f64; 3],
    /// σ+ transitions `e_0 -> g_-` and `e_+ -> g_0`.
    pub sigma_plus: [f64; 2],
    /// σ- transitions `e_- -> g_0` and `e_0 -> g_+`.
    pub sigma_minus: [f64; 2],
}

impl Default for TransitionWeights {
    fn default() -> Self {
        Self {
            pi: [1.0; 3],
            sigma_plus: [1.0; 2],
            sigma_minus: [1.0; 2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    /// Single-atom coupling to either cavity mode.
    pub g: f64,
    /// Cavity field decay rate (photon loss rate is `2 kappa`).
    pub kappa: f64,
    /// Excited-state population decay rate.
    pub gamma: f64,
    /// Ground-state Zeeman shift per unit m.
    pub delta_g: f64,
    /// Excited-state Zeeman shift per unit m.
    pub delta_e: f64,
    /// Coherent drive injected into the V mode; equals the empty-cavity
    /// steady-state amplitude.
    pub drive_amplitude: Complex64,
    /// Drive frequency minus the `g_0 -> e_0` transition frequency.
    pub drive_detuning: f64,
    /// Amplitude of V-mode output mixed into the H detection path.
    pub lo_mix: Complex64,
    pub pi_branch: f64,
    pub sigma_branch: f64,
    #[serde(default)]
    pub weights: TransitionWeights,
}

impl Default for PhysicalParams {
    fn default() -> Self {
        Self {
            g: hz(1.5e6),
            kappa: hz(3.0e6),
            gamma: hz(6.07e6),
            delta_g: hz(1.0e6),
            delta_e: hz(1.3e6),
            drive_amplitude: Complex64::new(0.55f64.sqrt(), 0.0),
            drive_detuning: 0.0,
            lo_mix: Complex64::new(0.0, 0.0),
            pi_branch: 1.0,
            sigma_branch: 0.0,
            weights: TransitionWeights::default(),
        }
    }
}

impl PhysicalParams {
    /// Difference of excited and ground Zeeman shifts, `delta_e - delta_g`.
    pub fn delta(&self) -> f64 {
        self.delta_e - self.delta_g
    }

    /// Mean photon number of the empty driven cavity.
    pub fn drive_photons(&self) -> f64 {
        self.drive_amplitude.norm_sqr()
    }

    pub fn with_drive_photons(mut self, n: f64) -> Self {
        self.drive_amplitude = Complex64::new(n.max(0.0).sqrt(), 0.0);
        self
    }

    /// Sets `delta_e` so that `delta()` equals `delta`.
    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta_e = self.delta_g + delta;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("g", self.g), ("kappa", self.kappa), ("gamma", self.gamma)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        for (name, v) in [
            ("delta_g", self.delta_g),
            ("delta_e", self.delta_e),
            ("drive_detuning", self.drive_detuning),
        ] {
            if !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite")));
            }
        }
        if !(self.drive_amplitude.re.is_finite() && self.drive_amplitude.im.is_finite()) {
            return Err(Error::Config("drive_amplitude must be finite".into()));
        }
        if self.pi_branch < 0.0 || self.sigma_branch < 0.0 {
            return Err(Error::Config("branching weights must be non-negative".into()));
        }
        if (self.pi_branch + self.sigma_branch - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "pi_branch + sigma_branch must equal 1, got {}",
                self.pi_branch + self.sigma_branch
            )));
        }
        if self.lo_mix.norm() > 1.0 {
            return Err(Error::Config("|lo_mix| must not exceed 1".into()));
        }
        let w = &self.weights;
        if w.pi.iter().chain(&w.sigma_plus).chain(&w.sigma_minus).any(|x| !x.is_finite()) {
            return Err(Error::Config("transition weights must be finite".into()));
        }
        Ok(())
    }

    /// Largest rate scale of the model, used for the integration step bound.
    pub fn max_rate(&self) -> f64 {
        [
            self.g,
            self.kappa,
            self.gamma,
            self.delta_g.abs(),
            self.delta_e.abs(),
            self.drive_detuning.abs(),
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let p = PhysicalParams::default();
        p.validate().unwrap();
        assert!((to_hz(p.g) - 1.5e6).abs() < 1e-6);
        assert!((p.delta() - hz(0.3e6)).abs() < 1e-6);
    }

    #[test]
    fn branching_must_sum_to_one() {
        let p = PhysicalParams {
            pi_branch: 0.5,
            sigma_branch: 0.4,
            ..Default::default()
        };
        assert!(matches!(p.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn rejects_non_positive_rates() {
        let p = PhysicalParams {
            gamma: 0.0,
            ..Default::default()
        };
        assert!(p.validate().is_err());
    }
}
