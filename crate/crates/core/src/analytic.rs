//! Closed-form results for the conditional ground-state superposition:
//! Larmor evolution, AC Stark shift, Rayleigh jump rate, per-jump phase
//! kicks and their Poisson average, and the damped-cosine beat model.
//!
//! `alpha` is the steady V-mode amplitude (see [`crate::model::steady_alpha`]).
//! Ground amplitudes are ordered `[g-, g0, g+]`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::PhysicalParams;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Ground-state superposition `C0 (|g-⟩ + |g+⟩)/√2 + C1 |g0⟩` after `n_jumps`
/// Rayleigh jumps and time `time`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionalState {
    /// Normalized `(C0, C1)`.
    pub c0: Complex64,
    pub c1: Complex64,
    pub n_jumps: u64,
    pub time: f64,
    /// Normalized amplitudes `[g-, g0, g+]`.
    pub amplitudes: [Complex64; 3],
}

impl ConditionalState {
    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    /// `arg(amp(g-)) - arg(amp(g+))`, wrapped to `(-π, π]`.
    pub fn pair_phase(&self) -> f64 {
        (self.amplitudes[0] * self.amplitudes[2].conj()).arg()
    }
}

/// Which ground-state coherence a quantity refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pair {
    /// `(g±, g0)`: beats at the single Larmor frequency (needs `C1 ≠ 0`).
    PlusMinusZero,
    /// `(g+, g-)`: beats at twice the Larmor frequency.
    PlusMinus,
}

/// All shifts and rates for one drive level (angular frequencies in rad/s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftReport {
    pub delta_ac: f64,
    pub gamma_jump: f64,
    pub delta_jump: f64,
    pub delta_light: f64,
    pub gamma_decoh: f64,
    pub phi_per_jump: f64,
    pub r_per_jump: f64,
}

fn normalize_pair(c0: Complex64, c1: Complex64) -> Result<(Complex64, Complex64)> {
    let n = (c0.norm_sqr() + c1.norm_sqr()).sqrt();
    if !(n > 0.0 && n.is_finite()) {
        return Err(Error::Domain("C0 and C1 must not both vanish".into()));
    }
    Ok((c0 / n, c1 / n))
}

fn half_gamma(params: &PhysicalParams) -> Result<f64> {
    if !(params.gamma > 0.0) {
        return Err(Error::Domain(format!("gamma must be positive, got {}", params.gamma)));
    }
    Ok(params.gamma / 2.0)
}

/// Larmor-plus-Stark precession angle `(Δ_g + Δ_AC) t`.
fn precession(t: f64, params: &PhysicalParams, alpha: Complex64) -> f64 {
    (params.delta_g + ac_stark_shift(params, alpha)) * t
}

/// Ground state at time `t` without jumps.
pub fn ground_state_at(
    c0: Complex64,
    c1: Complex64,
    t: f64,
    params: &PhysicalParams,
) -> Result<ConditionalState> {
    n_jump_state(c0, c1, 0, t, params)
}

/// Excited amplitudes `[e-, e0, e+]` driven by the ground superposition at
/// time `t` in the weak-drive limit.
pub fn excited_state_at(
    c0: Complex64,
    c1: Complex64,
    t: f64,
    params: &PhysicalParams,
) -> Result<[Complex64; 3]> {
    let hg = half_gamma(params)?;
    let (c0, c1) = normalize_pair(c0, c1)?;
    let alpha = crate::model::steady_alpha(params);
    let ga = alpha * params.g;
    let th = precession(t, params, alpha);
    let d = params.delta();
    let side = c0 * ga * std::f64::consts::FRAC_1_SQRT_2;
    Ok([
        side * Complex64::from_polar(1.0, th) / Complex64::new(hg, -d),
        c1 * ga / hg,
        side * Complex64::from_polar(1.0, -th) / Complex64::new(hg, d),
    ])
}

/// Ground-state AC Stark shift on `g+` (the shift on `g-` has opposite sign).
pub fn ac_stark_shift(params: &PhysicalParams, alpha: Complex64) -> f64 {
    let d = params.delta();
    let num = params.g * params.g * alpha.norm_sqr() * d;
    if num == 0.0 {
        return 0.0;
    }
    let hg = params.gamma / 2.0;
    -num / (hg * hg + d * d)
}

/// Rayleigh scattering (quantum jump) rate `Γ = 2 g² |α|² / (γ/2)`.
pub fn jump_rate(params: &PhysicalParams, alpha: Complex64) -> Result<f64> {
    let hg = half_gamma(params)?;
    Ok(2.0 * params.g * params.g * alpha.norm_sqr() / hg)
}

/// Per-jump phase `φ = atan(2Δ/γ)` and contraction `r = (γ/2)/√((γ/2)² + Δ²)`
/// of the `g∓` amplitudes relative to `g0`.
pub fn per_jump_factor(params: &PhysicalParams) -> Result<(f64, f64)> {
    let hg = half_gamma(params)?;
    let d = params.delta();
    Ok((d.atan2(hg), hg / hg.hypot(d)))
}

/// State after `n` Rayleigh jumps at time `t`: each jump multiplies `g-` by
/// `r e^{iφ}` and `g+` by `r e^{-iφ}` relative to `g0`.
pub fn n_jump_state(
    c0: Complex64,
    c1: Complex64,
    n: i64,
    t: f64,
    params: &PhysicalParams,
) -> Result<ConditionalState> {
    if n < 0 {
        return Err(Error::Domain(format!("jump count must be non-negative, got {n}")));
    }
    let (c0, c1) = normalize_pair(c0, c1)?;
    let (phi, r) = per_jump_factor(params)?;
    let alpha = crate::model::steady_alpha(params);
    let th = precession(t, params, alpha);
    let nf = n as f64;
    // r^n underflows for large n; scale both parts by the larger magnitude.
    let log_r = nf * r.ln();
    let log_side = if c0 == ZERO { f64::NEG_INFINITY } else { log_r + c0.norm().ln() };
    let log_zero = if c1 == ZERO { f64::NEG_INFINITY } else { c1.norm().ln() };
    let m = log_side.max(log_zero);
    let (side_scale, zero_scale) = ((log_r - m).exp(), (-m).exp());
    let side = c0 * std::f64::consts::FRAC_1_SQRT_2 * side_scale;
    let mut amps = [
        side * Complex64::from_polar(1.0, th + nf * phi),
        c1 * zero_scale,
        side * Complex64::from_polar(1.0, -(th + nf * phi)),
    ];
    let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::Numerical {
            time_s: t,
            reason: format!("normalization failed after {n} jumps"),
        });
    }
    for a in &mut amps {
        *a /= norm;
    }
    Ok(ConditionalState {
        c0,
        c1,
        n_jumps: n as u64,
        time: t,
        amplitudes: amps,
    })
}

/// Applies one more jump to an existing state (no time evolution).
pub fn apply_jump(state: &ConditionalState, params: &PhysicalParams) -> Result<ConditionalState> {
    let (phi, r) = per_jump_factor(params)?;
    let k = Complex64::from_polar(r, phi);
    let mut amps = [state.amplitudes[0] * k, state.amplitudes[1], state.amplitudes[2] * k.conj()];
    let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    for a in &mut amps {
        *a /= norm;
    }
    Ok(ConditionalState {
        n_jumps: state.n_jumps + 1,
        amplitudes: amps,
        ..*state
    })
}

/// Per-jump multiplier of a pair coherence: `r e^{iφ}` or `e^{2iφ}`.
fn pair_factor(params: &PhysicalParams, pair: Pair) -> Result<Complex64> {
    let (phi, r) = per_jump_factor(params)?;
    Ok(match pair {
        Pair::PlusMinusZero => Complex64::from_polar(r, phi),
        Pair::PlusMinus => Complex64::from_polar(1.0, 2.0 * phi),
    })
}

/// Poisson average of the per-jump coherence factor over `n ~ Poisson(Γt)`.
pub fn poisson_coherence(t: f64, params: &PhysicalParams, alpha: Complex64, pair: Pair) -> Result<Complex64> {
    let mean = jump_rate(params, alpha)? * t;
    let factor = pair_factor(params, pair)?;
    Ok(((factor - 1.0) * mean).exp())
}

/// Exact shift and decay rates of [`poisson_coherence`] for a pair:
/// `(phase rate, magnitude decay rate)`, i.e. `Γ·(z - 1)` split into its
/// imaginary part and negated real part.
pub fn poisson_rates(params: &PhysicalParams, alpha: Complex64, pair: Pair) -> Result<(f64, f64)> {
    let rate = jump_rate(params, alpha)?;
    let z = pair_factor(params, pair)?;
    Ok((rate * z.im, rate * (1.0 - z.re)))
}

/// Mean jump-induced shift `Δ_jump = Γ·2Δ/γ = 8 g² |α|² Δ / γ²`.
pub fn jump_shift(params: &PhysicalParams, alpha: Complex64) -> Result<f64> {
    Ok(jump_rate(params, alpha)? * 2.0 * params.delta() / params.gamma)
}

/// Net differential shift `Δ_light = Δ_AC + Δ_jump`.
pub fn light_shift(params: &PhysicalParams, alpha: Complex64) -> Result<f64> {
    Ok(ac_stark_shift(params, alpha) + jump_shift(params, alpha)?)
}

/// Jump-induced decoherence `Γ_decoh = Γ Δ² / (γ/2)²`.
pub fn decoherence_rate(params: &PhysicalParams, alpha: Complex64) -> Result<f64> {
    let hg = half_gamma(params)?;
    let d = params.delta();
    Ok(jump_rate(params, alpha)? * d * d / (hg * hg))
}

pub fn shift_report(params: &PhysicalParams, alpha: Complex64) -> Result<ShiftReport> {
    let (phi, r) = per_jump_factor(params)?;
    Ok(ShiftReport {
        delta_ac: ac_stark_shift(params, alpha),
        gamma_jump: jump_rate(params, alpha)?,
        delta_jump: jump_shift(params, alpha)?,
        delta_light: light_shift(params, alpha)?,
        gamma_decoh: decoherence_rate(params, alpha)?,
        phi_per_jump: phi,
        r_per_jump: r,
    })
}

/// Predicted beat angular frequency of a coherence: `2(Δ_g + Δ_light)` for
/// `(g+, g-)` and `Δ_g + Δ_light` for `(g±, g0)`.
pub fn beat_frequency(params: &PhysicalParams, report: &ShiftReport, pair: Pair) -> f64 {
    let base = params.delta_g + report.delta_light;
    match pair {
        Pair::PlusMinus => 2.0 * base,
        Pair::PlusMinusZero => base,
    }
}

/// Beat components expected in the H-conditioned correlation: the `(g+, g-)`
/// beat always, plus the `(g±, g0)` beat when LO light is mixed in.
pub fn expected_pairs(params: &PhysicalParams) -> Vec<Pair> {
    if params.lo_mix.norm() > 0.0 {
        vec![Pair::PlusMinus, Pair::PlusMinusZero]
    } else {
        vec![Pair::PlusMinus]
    }
}

/// Conditional amplitudes prepared by an H detection with LO mixing:
/// `C0 = 1`, `C1 = calibration · ε`, normalized. The proportionality
/// constant is not fixed by the model and is treated as a calibration input.
pub fn lo_amplitudes(params: &PhysicalParams, calibration: f64) -> (Complex64, Complex64) {
    let c1 = params.lo_mix * calibration;
    normalize_pair(Complex64::new(1.0, 0.0), c1).unwrap_or((Complex64::new(1.0, 0.0), ZERO))
}

/// Parameters of the damped-cosine beat model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeatParams {
    pub amplitude: f64,
    /// Angular frequency, rad/s.
    pub freq: f64,
    pub phase: f64,
    /// Amplitude decay rate, 1/s.
    pub decay: f64,
    pub offset: f64,
}

impl BeatParams {
    pub fn to_array(self) -> [f64; 5] {
        [self.amplitude, self.freq, self.phase, self.decay, self.offset]
    }

    pub fn from_array(p: [f64; 5]) -> Self {
        Self {
            amplitude: p[0],
            freq: p[1],
            phase: p[2],
            decay: p[3],
            offset: p[4],
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        beat_model(t, self.amplitude, self.freq, self.phase, self.decay, self.offset)
    }
}

/// `offset + amplitude · e^{-decay·t} · cos(freq·t + phase)`.
pub fn beat_model(t: f64, amplitude: f64, freq: f64, phase: f64, decay: f64, offset: f64) -> f64 {
    offset + amplitude * (-decay * t).exp() * (freq * t + phase).cos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    fn c(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    /// Parameters in units of γ with g|α| and Δ given as fractions of γ.
    fn scaled(g_alpha: f64, delta: f64) -> (PhysicalParams, Complex64) {
        let gamma = 1.0e7;
        let p = PhysicalParams {
            g: gamma,
            gamma,
            delta_g: 0.37 * gamma,
            ..Default::default()
        }
        .with_delta(delta * gamma);
        (p, c(g_alpha))
    }

    #[test]
    fn frozen_example_values() {
        let (p, a) = scaled(0.1, 0.1);
        let gamma = p.gamma;
        assert!((ac_stark_shift(&p, a) / gamma + 3.846_153_846e-3).abs() < 1e-11);
        assert!((jump_rate(&p, a).unwrap() / gamma - 0.04).abs() < 1e-14);
        assert!((jump_shift(&p, a).unwrap() / gamma - 8e-3).abs() < 1e-14);
        assert!((decoherence_rate(&p, a).unwrap() / gamma - 1.6e-3).abs() < 1e-15);
    }

    #[test]
    fn zero_drive_gives_zero_shifts() {
        let p = PhysicalParams::default();
        let r = shift_report(&p, c(0.0)).unwrap();
        assert_eq!((r.delta_ac, r.gamma_jump, r.delta_jump, r.delta_light, r.gamma_decoh), (0.0, 0.0, 0.0, 0.0, 0.0));
        let p0 = p.clone().with_delta(0.0);
        assert_eq!(ac_stark_shift(&p0, c(0.7)), 0.0);
    }

    #[test]
    fn jump_rate_is_gamma_times_excited_population() {
        let (p, a) = scaled(0.13, 0.0);
        let pe = (p.g * a.norm() / (p.gamma / 2.0)).powi(2);
        let lhs = jump_rate(&p, a).unwrap();
        assert!((lhs - p.gamma * pe).abs() <= 1e-14 * lhs);
    }

    #[test]
    fn gamma_zero_is_domain_error() {
        let p = PhysicalParams {
            gamma: 0.0,
            ..Default::default()
        };
        assert!(matches!(jump_rate(&p, c(0.1)), Err(Error::Domain(_))));
        assert!(matches!(excited_state_at(c(1.0), c(0.0), 0.0, &p), Err(Error::Domain(_))));
    }

    #[test]
    fn ground_state_at_origin() {
        let p = PhysicalParams::default();
        let s = ground_state_at(c(1.0), c(1.0), 0.0, &p).unwrap();
        assert!((s.amplitudes[0] - c(0.5)).norm() < 1e-15);
        assert!((s.amplitudes[1] - c(std::f64::consts::FRAC_1_SQRT_2)).norm() < 1e-15);
        assert!((s.norm_sqr() - 1.0).abs() < 1e-12);
        assert!(ground_state_at(c(0.0), c(0.0), 0.0, &p).is_err());
    }

    #[test]
    fn quarter_period_phases() {
        let p = PhysicalParams::default();
        let w = p.delta_g + ac_stark_shift(&p, crate::model::steady_alpha(&p));
        let s = ground_state_at(c(1.0), c(0.0), FRAC_PI_2 / w, &p).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((s.amplitudes[0] - Complex64::new(0.0, h)).norm() < 1e-12);
        assert!((s.amplitudes[2] - Complex64::new(0.0, -h)).norm() < 1e-12);
    }

    #[test]
    fn excited_amplitudes_at_delta_half_gamma() {
        let (p0, _) = scaled(0.0, 0.0);
        let p = p0.clone().with_delta(p0.gamma / 2.0);
        let e = excited_state_at(c(1.0), c(0.0), 0.0, &p).unwrap();
        let e0 = excited_state_at(c(1.0), c(0.0), 0.0, &p0).unwrap();
        let ga = p.g * crate::model::steady_alpha(&p).norm();
        let expected = ga / (p.gamma / 2.0 * 2f64.sqrt()) * std::f64::consts::FRAC_1_SQRT_2;
        assert!((e[0].norm() - expected).abs() < 1e-12 * expected);
        assert!(((e[0] / e0[0]).arg() - FRAC_PI_4).abs() < 1e-12);
        // Δ = 0: e- and e+ identical at t = 0.
        assert!((e0[0] - e0[2]).norm() < 1e-15 * e0[0].norm());
    }

    #[test]
    fn one_jump_at_delta_half_gamma() {
        let (p0, _) = scaled(0.1, 0.0);
        let p = p0.with_delta(0.5e7);
        let (phi, r) = per_jump_factor(&p).unwrap();
        assert!((phi - FRAC_PI_4).abs() < 1e-15);
        assert!((r - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
    }

    /// Unsimplified n-jump state: numerator amplitudes and normalization
    /// written term by term, then divided out.
    fn raw_n_jump(c0: Complex64, c1: Complex64, n: i32, t: f64, p: &PhysicalParams) -> [Complex64; 3] {
        let hg = p.gamma / 2.0;
        let d = p.delta();
        let th = (p.delta_g + ac_stark_shift(p, crate::model::steady_alpha(p))) * t;
        let mag2 = hg * hg + d * d;
        let pref = c0 * hg.powi(n) / 2f64.sqrt();
        let gm = pref * Complex64::new(hg, d).powi(n) / mag2.powf(n as f64 / 2.0) * Complex64::from_polar(1.0, th);
        let gp = pref * Complex64::new(hg, -d).powi(n) / mag2.powf(n as f64 / 2.0) * Complex64::from_polar(1.0, -th);
        let g0 = c1 * mag2.powf(n as f64 / 2.0);
        let norm = (c0.norm_sqr() * hg.powi(2 * n) + c1.norm_sqr() * mag2.powi(n)).sqrt();
        [gm / norm, g0 / norm, gp / norm]
    }

    #[test]
    fn factored_form_matches_raw_expression() {
        let (p, _) = scaled(0.1, 0.23);
        let (c0, c1) = normalize_pair(Complex64::new(0.8, 0.1), Complex64::new(0.3, -0.4)).unwrap();
        for n in 0..8 {
            let t = 1e-7 * n as f64;
            let a = n_jump_state(c0, c1, n as i64, t, &p).unwrap();
            let b = raw_n_jump(c0, c1, n, t, &p);
            for k in 0..3 {
                assert!((a.amplitudes[k] - b[k]).norm() < 1e-12, "n={n} k={k}");
            }
        }
    }

    #[test]
    fn n_jumps_equal_sequential_single_jumps() {
        let (p, _) = scaled(0.1, 0.31);
        let base = n_jump_state(c(0.6), c(0.8), 0, 2e-7, &p).unwrap();
        let mut s = base;
        for n in 1..20 {
            s = apply_jump(&s, &p).unwrap();
            let direct = n_jump_state(c(0.6), c(0.8), n, 2e-7, &p).unwrap();
            for k in 0..3 {
                assert!((s.amplitudes[k] - direct.amplitudes[k]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn pure_pair_norm_independent_of_jumps() {
        let (p, _) = scaled(0.1, 0.2);
        let (phi, _) = per_jump_factor(&p).unwrap();
        let s0 = n_jump_state(c(1.0), c(0.0), 0, 1e-7, &p).unwrap();
        for n in [1, 5, 40, 5000] {
            let s = n_jump_state(c(1.0), c(0.0), n, 1e-7, &p).unwrap();
            assert!((s.norm_sqr() - 1.0).abs() < 1e-12);
            let adv = Complex64::from_polar(1.0, s.pair_phase() - s0.pair_phase());
            let want = Complex64::from_polar(1.0, 2.0 * n as f64 * phi);
            assert!((adv - want).norm() < 1e-9);
        }
        assert!(n_jump_state(c(1.0), c(0.0), -1, 0.0, &p).is_err());
    }

    #[test]
    fn poisson_coherence_values() {
        let (p0, a) = scaled(0.1, 0.0);
        assert_eq!(poisson_coherence(0.0, &p0, a, Pair::PlusMinusZero).unwrap(), c(1.0));
        assert!((poisson_coherence(3e-6, &p0, a, Pair::PlusMinus).unwrap() - c(1.0)).norm() < 1e-15);
        let p = p0.with_delta(0.5e7);
        let t = 1.0 / jump_rate(&p, a).unwrap();
        let z = poisson_coherence(t, &p, a, Pair::PlusMinusZero).unwrap();
        let want = Complex64::new(-0.5, 0.5).exp();
        assert!((z - want).norm() < 1e-14);
    }

    #[test]
    fn jump_shift_is_minus_twice_stark_to_first_order() {
        for i in 1..=20 {
            let x = 0.01 * i as f64;
            let (p, a) = scaled(0.1, x);
            let dj = jump_shift(&p, a).unwrap();
            let dac = ac_stark_shift(&p, a);
            assert!((dj + 2.0 * dac).abs() <= (2.0 * x).powi(2) * dj.abs() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn beat_model_basics() {
        assert_eq!(beat_model(3.0, 0.0, 2.0, 0.1, 0.5, 1.2), 1.2);
        let f = 3.0e6;
        let v0 = beat_model(0.0, 0.4, f, 0.3, 0.0, 1.0);
        let v1 = beat_model(std::f64::consts::TAU / f, 0.4, f, 0.3, 0.0, 1.0);
        assert!((v0 - v1).abs() < 1e-12);
    }

    #[test]
    fn lo_mapping() {
        let p = PhysicalParams::default();
        assert_eq!(lo_amplitudes(&p, 3.0), (c(1.0), c(0.0)));
        let q = PhysicalParams {
            lo_mix: c(0.1),
            ..p
        };
        let (c0, c1) = lo_amplitudes(&q, 2.0);
        assert!((c1 / c0 - c(0.2)).norm() < 1e-15);
        assert_eq!(expected_pairs(&q).len(), 2);
    }
}
