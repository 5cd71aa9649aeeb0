//! Photon correlation estimators, spectra, damped-cosine fits and the two
//! post-selection filters.
//!
//! `g2_estimate` histograms stop detections at lag `τ ≥ 0` after each start
//! detection (the start event itself is never its own stop) and normalizes
//! bin `k` by `exposure_k · stop_rate · bin_width`. `exposure_k` counts the
//! fraction of bin `k` that lies inside the observed part of the record for
//! each start, so record ends and excluded spans do not bias the estimate;
//! for starts far from any edge it equals the number of starts.

use levenberg_marquardt::{LeastSquaresProblem, LevenbergMarquardt};
use nalgebra::{DMatrix, DVector, Dyn, Owned};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::analytic::BeatParams;
use crate::error::{Error, Result};
use crate::records::{seconds, Channel, DetectionRecord, JumpEvent};
use crate::trajectory::{epoch_starts, FeedbackProtocol};

/// How stops are paired with starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conditioning {
    /// Multi-stop: every stop within `tau_max` after a start counts.
    #[default]
    AllPairs,
    /// Only the first stop after each start counts.
    StartStop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationOptions {
    pub start_channels: Vec<Channel>,
    pub stop_channels: Vec<Channel>,
    pub bin_width_ps: u64,
    pub tau_max_ps: u64,
    pub conditioning: Conditioning,
}

impl Default for CorrelationOptions {
    /// Cross-correlation of the two H detectors, 10 ns bins up to 6 μs.
    fn default() -> Self {
        Self {
            start_channels: vec![Channel::HDetA],
            stop_channels: vec![Channel::HDetB],
            bin_width_ps: 10_000,
            tau_max_ps: 6_000_000,
            conditioning: Conditioning::AllPairs,
        }
    }
}

impl CorrelationOptions {
    /// Both H detectors as starts and stops.
    pub fn h_autocorrelation(bin_width_ps: u64, tau_max_ps: u64) -> Self {
        let h = vec![Channel::HDetA, Channel::HDetB];
        Self {
            start_channels: h.clone(),
            stop_channels: h,
            bin_width_ps,
            tau_max_ps,
            conditioning: Conditioning::AllPairs,
        }
    }

    pub fn n_bins(&self) -> usize {
        (self.tau_max_ps / self.bin_width_ps) as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.bin_width_ps == 0 {
            return Err(Error::Config("bin width must be positive".into()));
        }
        if self.tau_max_ps < self.bin_width_ps {
            return Err(Error::Config("tau_max must be at least one bin width".into()));
        }
        if self.start_channels.is_empty() || self.stop_channels.is_empty() {
            return Err(Error::Config("start and stop channel sets must be non-empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    /// Bin edges in seconds (`n_bins + 1` values).
    pub tau_bins: Vec<f64>,
    pub counts: Vec<u64>,
    pub g2: Vec<f64>,
    pub stderr: Vec<f64>,
    pub n_starts: u64,
    /// Start-weighted observed fraction of each bin.
    pub exposure: Vec<f64>,
    /// Stops per second of observed time.
    pub stop_rate: f64,
}

impl CorrelationResult {
    pub fn bin_width(&self) -> f64 {
        self.tau_bins[1] - self.tau_bins[0]
    }

    pub fn centers(&self) -> Vec<f64> {
        self.tau_bins.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    /// Mean and standard error of `g2` over bins with centers in `[t0, t1)`.
    pub fn mean_over(&self, t0: f64, t1: f64) -> (f64, f64) {
        let mut counts = 0u64;
        let mut expected = 0.0;
        for (k, c) in self.centers().iter().enumerate() {
            if *c >= t0 && *c < t1 {
                counts += self.counts[k];
                expected += self.exposure[k] * self.stop_rate * self.bin_width();
            }
        }
        if expected <= 0.0 {
            return (f64::NAN, f64::NAN);
        }
        (counts as f64 / expected, (counts.max(1) as f64).sqrt() / expected)
    }

    /// Bins with centers inside `[t0, t1)`.
    pub fn restrict(&self, t0: f64, t1: f64) -> CorrelationResult {
        let keep: Vec<usize> = self
            .centers()
            .iter()
            .enumerate()
            .filter(|(_, c)| **c >= t0 && **c < t1)
            .map(|(k, _)| k)
            .collect();
        let pick = |v: &Vec<f64>| keep.iter().map(|&k| v[k]).collect::<Vec<_>>();
        let mut edges: Vec<f64> = keep.iter().map(|&k| self.tau_bins[k]).collect();
        if let Some(&last) = keep.last() {
            edges.push(self.tau_bins[last + 1]);
        }
        CorrelationResult {
            tau_bins: edges,
            counts: keep.iter().map(|&k| self.counts[k]).collect(),
            g2: pick(&self.g2),
            stderr: pick(&self.stderr),
            n_starts: self.n_starts,
            exposure: pick(&self.exposure),
            stop_rate: self.stop_rate,
        }
    }

    /// `g2` minus its centered running mean over `period` (rounded to an odd
    /// number of bins), plus one. Removes slow baseline drifts before fitting
    /// a beat of that period. Bins without a full window get an infinite
    /// standard error, so fits skip them.
    pub fn detrended(&self, period: f64) -> CorrelationResult {
        let half = ((period / self.bin_width()) / 2.0).round().max(0.0) as usize;
        let w = self.bin_width();
        let n = self.g2.len();
        let mut out = self.clone();
        for k in 0..n {
            if k < half || k + half >= n {
                out.stderr[k] = f64::INFINITY;
                continue;
            }
            let r = k - half..=k + half;
            let counts: f64 = r.clone().map(|i| self.counts[i] as f64).sum();
            let expected: f64 = r.map(|i| self.exposure[i]).sum::<f64>() * self.stop_rate * w;
            if expected > 0.0 {
                out.g2[k] = self.g2[k] - counts / expected + 1.0;
            } else {
                out.stderr[k] = f64::INFINITY;
            }
        }
        out
    }

    /// CSV with columns `tau_s,g2,stderr,counts`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("tau_s,g2,stderr,counts\n");
        for (k, c) in self.centers().iter().enumerate() {
            s.push_str(&format!("{:e},{:e},{:e},{}\n", c, self.g2[k], self.stderr[k], self.counts[k]));
        }
        s
    }
}

/// Order-independent histogram accumulator over many records.
#[derive(Debug, Clone)]
pub struct G2Accumulator {
    opts: CorrelationOptions,
    counts: Vec<u64>,
    /// Starts whose whole window is observed.
    full_starts: u64,
    /// Exposure of starts whose window touches an edge or excluded span.
    partial: Vec<f64>,
    n_starts: u64,
    stops: u64,
    live_ps: u128,
}

/// Length of `[a, b)` inside `[0, duration)` and outside `spans`.
fn observed(a: u64, b: u64, duration: u64, spans: &[(u64, u64)]) -> u64 {
    let b = b.min(duration);
    if a >= b {
        return 0;
    }
    let mut len = b - a;
    for &(s, e) in spans {
        let (lo, hi) = (s.max(a), e.min(b));
        if lo < hi {
            len -= hi - lo;
        }
    }
    len
}

impl G2Accumulator {
    pub fn new(opts: CorrelationOptions) -> Result<Self> {
        opts.validate()?;
        let n = opts.n_bins();
        Ok(Self {
            counts: vec![0; n],
            partial: vec![0.0; n],
            full_starts: 0,
            n_starts: 0,
            stops: 0,
            live_ps: 0,
            opts,
        })
    }

    pub fn options(&self) -> &CorrelationOptions {
        &self.opts
    }

    /// Adds a record using every start-channel event as a start.
    pub fn add_record(&mut self, record: &DetectionRecord) {
        let starts: Vec<usize> = record
            .events
            .iter()
            .enumerate()
            .filter(|(_, e)| self.opts.start_channels.contains(&e.channel))
            .map(|(i, _)| i)
            .collect();
        self.add_with_start_indices(record, &starts);
    }

    /// Adds a record conditioning only on the start-channel events at the
    /// given times (for example, feedback epoch triggers).
    pub fn add_record_with_starts(&mut self, record: &DetectionRecord, start_times_ps: &[u64]) {
        let mut idx = Vec::with_capacity(start_times_ps.len());
        let mut j = 0;
        for (i, e) in record.events.iter().enumerate() {
            while j < start_times_ps.len() && start_times_ps[j] < e.t_ps {
                j += 1;
            }
            if j < start_times_ps.len()
                && start_times_ps[j] == e.t_ps
                && self.opts.start_channels.contains(&e.channel)
            {
                idx.push(i);
                j += 1;
            }
        }
        self.add_with_start_indices(record, &idx);
    }

    fn add_with_start_indices(&mut self, record: &DetectionRecord, starts: &[usize]) {
        let w = self.opts.bin_width_ps;
        let n_bins = self.counts.len();
        let span = w * n_bins as u64;
        let ev: &[JumpEvent] = &record.events;
        let is_stop = |e: &JumpEvent| self.opts.stop_channels.contains(&e.channel);
        self.stops += ev.iter().filter(|e| is_stop(e)).count() as u64;
        self.live_ps += record.live_ps() as u128;
        for &i in starts {
            let t0 = ev[i].t_ps;
            self.n_starts += 1;
            // Stops at the same timestamp before index i are valid zero lags.
            let mut j = i;
            while j > 0 && ev[j - 1].t_ps == t0 {
                j -= 1;
            }
            for (k, e) in ev.iter().enumerate().skip(j) {
                if e.t_ps >= t0 + span {
                    break;
                }
                if k == i || !is_stop(e) {
                    continue;
                }
                self.counts[((e.t_ps - t0) / w) as usize] += 1;
                if self.opts.conditioning == Conditioning::StartStop {
                    break;
                }
            }
            let clean = t0 + span <= record.duration_ps
                && !record.excluded_ps.iter().any(|&(s, e)| s < t0 + span && e > t0);
            if clean {
                self.full_starts += 1;
            } else {
                for (k, p) in self.partial.iter_mut().enumerate() {
                    let a = t0 + k as u64 * w;
                    *p += observed(a, a + w, record.duration_ps, &record.excluded_ps) as f64 / w as f64;
                }
            }
        }
    }

    /// Adds another accumulator with identical options.
    pub fn merge(&mut self, other: &G2Accumulator) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        for (a, b) in self.partial.iter_mut().zip(&other.partial) {
            *a += b;
        }
        self.full_starts += other.full_starts;
        self.n_starts += other.n_starts;
        self.stops += other.stops;
        self.live_ps += other.live_ps;
    }

    pub fn finish(&self) -> Result<CorrelationResult> {
        if self.n_starts == 0 {
            return Err(Error::DegenerateInput("no start events on the start channels".into()));
        }
        if self.stops == 0 || self.live_ps == 0 {
            return Err(Error::DegenerateInput("no stop events on the stop channels".into()));
        }
        let w = seconds(self.opts.bin_width_ps);
        let stop_rate = self.stops as f64 / (self.live_ps as f64 / 1e12);
        let exposure: Vec<f64> = self.partial.iter().map(|p| p + self.full_starts as f64).collect();
        let mut g2 = Vec::with_capacity(self.counts.len());
        let mut stderr = Vec::with_capacity(self.counts.len());
        for (c, e) in self.counts.iter().zip(&exposure) {
            let norm = e * stop_rate * w;
            if norm > 0.0 {
                g2.push(*c as f64 / norm);
                stderr.push((*c.max(&1) as f64).sqrt() / norm);
            } else {
                g2.push(0.0);
                stderr.push(f64::INFINITY);
            }
        }
        Ok(CorrelationResult {
            tau_bins: (0..=self.counts.len()).map(|k| seconds(k as u64 * self.opts.bin_width_ps)).collect(),
            counts: self.counts.clone(),
            g2,
            stderr,
            n_starts: self.n_starts,
            exposure,
            stop_rate,
        })
    }
}

/// Correlation of one record.
pub fn g2_estimate(record: &DetectionRecord, opts: &CorrelationOptions) -> Result<CorrelationResult> {
    let mut acc = G2Accumulator::new(opts.clone())?;
    acc.add_record(record);
    acc.finish()
}

/// Feedback epoch triggers of a record: trigger-channel detections that
/// arrive while no attenuation window is pending or active.
pub fn feedback_epoch_starts(record: &DetectionRecord, protocol: &FeedbackProtocol) -> Vec<u64> {
    epoch_starts(protocol, &record.times(&protocol.trigger_channels))
}

/// One-sided power spectrum of a correlation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub freq_hz: Vec<f64>,
    pub power: Vec<f64>,
    /// Peak frequency from parabolic interpolation of log power.
    pub peak_hz: f64,
    /// Difference between log-power and linear-power parabolic peak
    /// estimates, a measure of the interpolation error.
    pub peak_interp_error_hz: f64,
}

impl Spectrum {
    /// Half width at half maximum of the main peak (linear interpolation
    /// between bins).
    pub fn peak_half_width_hz(&self) -> f64 {
        let k = argmax(&self.power);
        let half = self.power[k] / 2.0;
        let cross = |range: &mut dyn Iterator<Item = usize>| -> Option<f64> {
            let mut prev = k;
            for i in range {
                if self.power[i] < half {
                    let (p0, p1) = (self.power[prev], self.power[i]);
                    let x = (p0 - half) / (p0 - p1);
                    return Some(self.freq_hz[prev] + x * (self.freq_hz[i] - self.freq_hz[prev]));
                }
                prev = i;
            }
            None
        };
        let hi = cross(&mut (k + 1..self.power.len()));
        let lo = cross(&mut (0..k).rev());
        match (lo, hi) {
            (Some(l), Some(h)) => 0.5 * (h - l),
            (None, Some(h)) => h - self.freq_hz[k],
            (Some(l), None) => self.freq_hz[k] - l,
            (None, None) => f64::NAN,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("freq_hz,power\n");
        for (f, p) in self.freq_hz.iter().zip(&self.power) {
            s.push_str(&format!("{f:e},{p:e}\n"));
        }
        s
    }
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}

fn check_uniform(tau_bins: &[f64]) -> Result<f64> {
    if tau_bins.len() < 3 {
        return Err(Error::Domain("need at least two bins".into()));
    }
    let w = tau_bins[1] - tau_bins[0];
    let uniform = tau_bins
        .windows(2)
        .all(|p| ((p[1] - p[0]) - w).abs() <= 1e-9 * w.abs());
    if !(w > 0.0) || !uniform {
        return Err(Error::Domain("bins are not uniform".into()));
    }
    Ok(w)
}

/// Power spectrum of `g2 - mean(g2)`.
///
/// The lag axis is one-sided, so the taper is the falling half of a Hann
/// window, `w(τ) = cos²(π τ / (2 τ_max))`: it leaves the start of the
/// decaying beat untouched and removes the truncation edge at `τ_max`. The
/// series is zero-padded to four times its length; the DC bin is excluded.
pub fn fft_spectrum(corr: &CorrelationResult) -> Result<Spectrum> {
    spectrum_of(&corr.tau_bins, &corr.g2)
}

/// [`fft_spectrum`] on raw uniform samples given by bin edges and values.
pub fn spectrum_of(tau_bins: &[f64], values: &[f64]) -> Result<Spectrum> {
    let w = check_uniform(tau_bins)?;
    let n = values.len();
    if n + 1 != tau_bins.len() {
        return Err(Error::Domain("values and bins disagree in length".into()));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let padded = 4 * n;
    let mut buf: Vec<rustfft::num_complex::Complex<f64>> = (0..padded)
        .map(|i| {
            let v = if i < n {
                let x = std::f64::consts::FRAC_PI_2 * i as f64 / n as f64;
                (values[i] - mean) * x.cos().powi(2)
            } else {
                0.0
            };
            rustfft::num_complex::Complex::new(v, 0.0)
        })
        .collect();
    FftPlanner::new().plan_fft_forward(padded).process(&mut buf);
    let df = 1.0 / (padded as f64 * w);
    let half = padded / 2;
    let freq_hz: Vec<f64> = (1..=half).map(|k| k as f64 * df).collect();
    let power: Vec<f64> = (1..=half).map(|k| buf[k].norm_sqr() * w * w).collect();
    let k = argmax(&power);
    let (peak_hz, err) = if k == 0 || k + 1 >= power.len() || power[k] <= 0.0 {
        (freq_hz[k], df / 2.0)
    } else {
        let vertex = |a: f64, b: f64, c: f64| {
            let d = a - 2.0 * b + c;
            if d == 0.0 {
                0.0
            } else {
                0.5 * (a - c) / d
            }
        };
        let tiny = f64::MIN_POSITIVE;
        let lg = vertex(power[k - 1].max(tiny).ln(), power[k].ln(), power[k + 1].max(tiny).ln());
        let lin = vertex(power[k - 1], power[k], power[k + 1]);
        (freq_hz[k] + lg * df, (lg - lin).abs() * df)
    };
    Ok(Spectrum {
        freq_hz,
        power,
        peak_hz,
        peak_interp_error_hz: err,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub amplitude: f64,
    /// Angular frequency, rad/s.
    pub freq: f64,
    pub phase: f64,
    pub decay: f64,
    pub offset: f64,
    /// Covariance in the order (amplitude, freq, phase, decay, offset); rows
    /// of fixed parameters are zero.
    pub covariance: Vec<Vec<f64>>,
    /// `sqrt(Σ ((y - f)/σ)²)`.
    pub residual_norm: f64,
    pub reduced_chi2: f64,
    pub n_points: usize,
    pub evaluations: usize,
}

impl FitResult {
    pub fn params(&self) -> BeatParams {
        BeatParams {
            amplitude: self.amplitude,
            freq: self.freq,
            phase: self.phase,
            decay: self.decay,
            offset: self.offset,
        }
    }

    pub fn sigma(&self, k: usize) -> f64 {
        self.covariance[k][k].max(0.0).sqrt()
    }

    /// Instantaneous beat phase `freq·τ + phase` at `tau`.
    pub fn phase_at(&self, tau: f64) -> f64 {
        self.freq * tau + self.phase
    }

    /// Envelope `amplitude·e^{-decay·τ}` at `tau`.
    pub fn envelope_at(&self, tau: f64) -> f64 {
        self.amplitude * (-self.decay * tau).exp()
    }
}

/// Restrictions of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Lag window `[t_min, t_max)`, seconds.
    pub t_min: f64,
    pub t_max: f64,
    /// Lag spans left out of the fit (for example the feedback window).
    pub exclude: Vec<(f64, f64)>,
    /// Holds the decay rate at this value.
    pub fixed_decay: Option<f64>,
    /// Iteration cap, in units of function evaluations per parameter.
    pub max_iterations: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            t_min: 0.0,
            t_max: f64::INFINITY,
            exclude: Vec::new(),
            fixed_decay: None,
            max_iterations: 200,
        }
    }
}

struct BeatProblem {
    t: Vec<f64>,
    y: Vec<f64>,
    inv_sigma: Vec<f64>,
    p: DVector<f64>,
    fixed_decay: Option<f64>,
}

impl BeatProblem {
    fn full(&self) -> [f64; 5] {
        match self.fixed_decay {
            None => [self.p[0], self.p[1], self.p[2], self.p[3], self.p[4]],
            Some(d) => [self.p[0], self.p[1], self.p[2], d, self.p[3]],
        }
    }
}

impl LeastSquaresProblem<f64, Dyn, Dyn> for BeatProblem {
    type ResidualStorage = Owned<f64, Dyn>;
    type JacobianStorage = Owned<f64, Dyn, Dyn>;
    type ParameterStorage = Owned<f64, Dyn>;

    fn set_params(&mut self, x: &DVector<f64>) {
        self.p.copy_from(x);
    }

    fn params(&self) -> DVector<f64> {
        self.p.clone()
    }

    fn residuals(&self) -> Option<DVector<f64>> {
        let [a, w, ph, d, off] = self.full();
        Some(DVector::from_iterator(
            self.t.len(),
            self.t
                .iter()
                .zip(&self.y)
                .zip(&self.inv_sigma)
                .map(|((&t, &y), &s)| (off + a * (-d * t).exp() * (w * t + ph).cos() - y) * s),
        ))
    }

    fn jacobian(&self) -> Option<DMatrix<f64>> {
        let [a, w, ph, d, _] = self.full();
        let free_decay = self.fixed_decay.is_none();
        let np = self.p.len();
        let mut j = DMatrix::zeros(self.t.len(), np);
        for (i, (&t, &s)) in self.t.iter().zip(&self.inv_sigma).enumerate() {
            let e = (-d * t).exp();
            let (sn, cs) = (w * t + ph).sin_cos();
            j[(i, 0)] = e * cs * s;
            j[(i, 1)] = -a * e * sn * t * s;
            j[(i, 2)] = -a * e * sn * s;
            if free_decay {
                j[(i, 3)] = -a * t * e * cs * s;
                j[(i, 4)] = s;
            } else {
                j[(i, 3)] = s;
            }
        }
        Some(j)
    }
}

fn wrap(phase: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let p = phase.rem_euclid(tau);
    if p > std::f64::consts::PI {
        p - tau
    } else {
        p
    }
}

/// Data points `(τ, g2, σ)` selected by the fit options.
fn fit_points(corr: &CorrelationResult, opts: &FitOptions) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut t = Vec::new();
    let mut y = Vec::new();
    let mut s = Vec::new();
    for (k, c) in corr.centers().into_iter().enumerate() {
        let excluded = opts.exclude.iter().any(|&(a, b)| c >= a && c < b);
        if c < opts.t_min || c >= opts.t_max || excluded || !corr.stderr[k].is_finite() {
            continue;
        }
        t.push(c);
        y.push(corr.g2[k]);
        s.push(corr.stderr[k]);
    }
    (t, y, s)
}

/// Starting point from the data: FFT peak of the fit range for the
/// frequency, then linear least squares for offset, amplitude and phase at
/// a decay of `1/span`.
pub fn initial_guess(corr: &CorrelationResult, opts: &FitOptions) -> Result<BeatParams> {
    let (t, y, _) = fit_points(corr, opts);
    if t.len() < 5 {
        return Err(Error::DegenerateInput("fewer than 5 points in the fit window".into()));
    }
    let hi = opts.t_max.min(*corr.tau_bins.last().unwrap_or(&0.0));
    let spec = fft_spectrum(&corr.restrict(opts.t_min, hi))?;
    let freq = std::f64::consts::TAU * spec.peak_hz;
    let span = t[t.len() - 1] - t[0];
    let decay = opts.fixed_decay.unwrap_or(if span > 0.0 { 1.0 / span } else { 0.0 });
    let t0 = t[0];
    let mut ata = nalgebra::Matrix3::<f64>::zeros();
    let mut atb = nalgebra::Vector3::<f64>::zeros();
    for (&ti, &yi) in t.iter().zip(&y) {
        let e = (-decay * (ti - t0)).exp();
        let row = nalgebra::Vector3::new(1.0, e * (freq * ti).cos(), e * (freq * ti).sin());
        ata += row * row.transpose();
        atb += row * yi;
    }
    let sol = ata.lu().solve(&atb).unwrap_or(nalgebra::Vector3::new(y.iter().sum::<f64>() / y.len() as f64, 0.1, 0.0));
    let amp = sol[1].hypot(sol[2]) * (decay * t0).exp();
    Ok(BeatParams {
        amplitude: amp.max(1e-6),
        freq,
        phase: (-sol[2]).atan2(sol[1]),
        decay,
        offset: sol[0],
    })
}

/// Weighted least-squares fit of the damped-cosine beat model.
///
/// The returned frequency is positive and the amplitude non-negative (signs
/// folded into the phase). A fit that settles on a negative decay is redone
/// with the decay held at zero. The covariance is `(JᵀWJ)⁻¹` scaled by the
/// reduced chi-square.
pub fn fit_damped_cosine(corr: &CorrelationResult, guess: Option<BeatParams>, opts: &FitOptions) -> Result<FitResult> {
    check_uniform(&corr.tau_bins)?;
    let guess = match guess {
        Some(g) => g,
        None => initial_guess(corr, opts)?,
    };
    if guess.to_array().iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("initial guess must be finite".into()));
    }
    let first = fit_once(corr, guess, opts)?;
    if first.decay < 0.0 && opts.fixed_decay.is_none() {
        let mut o = opts.clone();
        o.fixed_decay = Some(0.0);
        let mut g = first.params();
        g.decay = 0.0;
        return fit_once(corr, g, &o);
    }
    Ok(first)
}

fn fit_once(corr: &CorrelationResult, guess: BeatParams, opts: &FitOptions) -> Result<FitResult> {
    let (t, y, s) = fit_points(corr, opts);
    let np = if opts.fixed_decay.is_some() { 4 } else { 5 };
    if t.len() < np + 1 || t.len() < 5 {
        return Err(Error::DegenerateInput(format!("only {} points in the fit window", t.len())));
    }
    let g = guess.to_array();
    let p = match opts.fixed_decay {
        None => DVector::from_row_slice(&g),
        Some(_) => DVector::from_row_slice(&[g[0], g[1], g[2], g[4]]),
    };
    let problem = BeatProblem {
        inv_sigma: s.iter().map(|v| 1.0 / v).collect(),
        t,
        y,
        p,
        fixed_decay: opts.fixed_decay,
    };
    let (problem, report) = LevenbergMarquardt::new()
        .with_patience(opts.max_iterations.max(1))
        .minimize(problem);
    let residuals = problem.residuals().unwrap_or_else(|| DVector::zeros(0));
    let rnorm = residuals.norm();
    if !report.termination.was_successful() {
        return Err(Error::FitNonConvergence {
            iterations: report.number_of_evaluations,
            best_residual: rnorm,
        });
    }
    let n = problem.t.len();
    let dof = (n - np).max(1) as f64;
    let chi2_red = rnorm * rnorm / dof;
    let jac = problem.jacobian().expect("jacobian");
    let jtj = jac.transpose() * &jac;
    let cov_free = jtj
        .try_inverse()
        .map(|m| m * chi2_red.max(f64::MIN_POSITIVE))
        .unwrap_or_else(|| DMatrix::from_element(np, np, f64::NAN));
    let map: Vec<usize> = if opts.fixed_decay.is_some() { vec![0, 1, 2, 4] } else { vec![0, 1, 2, 3, 4] };
    let mut cov = vec![vec![0.0; 5]; 5];
    for (a, &i) in map.iter().enumerate() {
        for (b, &j) in map.iter().enumerate() {
            cov[i][j] = cov_free[(a, b)];
        }
    }
    let [mut amp, mut freq, mut phase, decay, offset] = problem.full();
    // Fold signs: cos(-ωt + φ) = cos(ωt - φ); -A cos(x) = A cos(x + π).
    if freq < 0.0 {
        freq = -freq;
        phase = -phase;
        for k in 0..5 {
            if k != 1 && k != 2 {
                cov[1][k] = -cov[1][k];
                cov[k][1] = -cov[k][1];
                cov[2][k] = -cov[2][k];
                cov[k][2] = -cov[k][2];
            }
        }
    }
    if amp < 0.0 {
        amp = -amp;
        phase += std::f64::consts::PI;
        for k in 0..5 {
            if k != 0 {
                cov[0][k] = -cov[0][k];
                cov[k][0] = -cov[k][0];
            }
        }
    }
    Ok(FitResult {
        amplitude: amp,
        freq,
        phase: wrap(phase),
        decay,
        offset,
        covariance: cov,
        residual_norm: rnorm,
        reduced_chi2: chi2_red,
        n_points: n,
        evaluations: report.number_of_evaluations,
    })
}

/// Splits records into conditioning segments, one per start-channel
/// detection, each cropped to `[t_start, t_start + window)` so that the start
/// sits at `τ = 0`. With `max_jumps = Some(n)`, segments with more than `n`
/// side-channel truth events in `(t_start, t_start + window)` are dropped
/// (`n = 13` keeps "fewer than 14"). Segments whose window runs past the
/// record end are kept with their shorter duration.
pub fn filter_by_jump_count(
    records: &[DetectionRecord],
    start_channels: &[Channel],
    max_jumps: Option<usize>,
    window_ps: u64,
) -> Result<Vec<DetectionRecord>> {
    let mut out = Vec::new();
    for (ri, r) in records.iter().enumerate() {
        if !r.has_truth {
            return Err(Error::UnsupportedInput(format!(
                "record {ri} carries no truth tags; jump-count selection needs simulated side-channel events"
            )));
        }
        let ev = &r.events;
        let mut side_times: Vec<u64> = ev.iter().filter(|e| e.channel.is_side() && e.truth).map(|e| e.t_ps).collect();
        side_times.sort_unstable();
        for e in ev.iter().filter(|e| start_channels.contains(&e.channel)) {
            let t0 = e.t_ps;
            let end = t0.saturating_add(window_ps);
            let lo = side_times.partition_point(|&t| t <= t0);
            let hi = side_times.partition_point(|&t| t < end);
            if max_jumps.is_some_and(|m| hi - lo > m) {
                continue;
            }
            let mut seg = r.crop(t0, end.min(r.duration_ps));
            seg.metadata.insert("segment_start_ns".into(), format!("{}", seconds(t0) * 1e9));
            seg.metadata.insert("segment_source".into(), ri.to_string());
            seg.metadata.insert("segment_side_events".into(), (hi - lo).to_string());
            out.push(seg);
        }
    }
    Ok(out)
}

/// Correlation over conditioning segments, each conditioned on its first
/// start-channel event (at `τ = 0`).
pub fn g2_over_segments(segments: &[DetectionRecord], opts: &CorrelationOptions) -> Result<CorrelationResult> {
    let mut acc = G2Accumulator::new(opts.clone())?;
    for s in segments {
        acc.add_record_with_starts(s, &[0]);
    }
    acc.finish()
}

/// High-pass time filter: scanning in time order, whenever two successive
/// events are closer than `window_ps`, both are discarded together with all
/// events up to `skip_ps` after the second; scanning resumes after the
/// skipped span, which is recorded in `excluded_ps`. Applies to all events
/// of the record, so select the detection channels first.
pub fn time_filter(record: &DetectionRecord, window_ps: u64, skip_ps: u64) -> DetectionRecord {
    let ev = &record.events;
    let mut out = record.clone_header();
    let mut spans = record.excluded_ps.clone();
    let mut i = 0;
    while i < ev.len() {
        if i + 1 < ev.len() && ev[i + 1].t_ps - ev[i].t_ps < window_ps {
            let start = ev[i].t_ps;
            let end = (ev[i + 1].t_ps + skip_ps + 1).min(record.duration_ps);
            let mut j = i + 2;
            while j < ev.len() && ev[j].t_ps < end {
                j += 1;
            }
            spans.push((start, end));
            i = j;
        } else {
            out.events.push(ev[i]);
            i += 1;
        }
    }
    out.excluded_ps = crate::records::union_spans(&mut spans);
    out
}
