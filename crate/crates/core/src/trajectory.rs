//! Quantum-jump trajectory engine.
//!
//! Evolution between jumps uses exact propagators `exp(-i H dt)` of the
//! effective Hamiltonian. `H` depends on time only through the drive level
//! (feedback envelope) and the atom coupling (transit), both held piecewise
//! constant and quantized to 1/1024, so propagators are cached per quantized
//! pair and shared by all trajectories of an ensemble. The Hamiltonian is
//! block diagonal in a basis permutation (for example, `m + n_H` parity),
//! and only blocks carrying amplitude are propagated.
//!
//! Jumps follow the norm-threshold rule: a uniform `r` is drawn, the state is
//! evolved unnormalized until `‖ψ‖² < r`, the jump time is located by
//! bisection to `dt_max/100`, a channel is chosen with probability
//! proportional to `‖C_k ψ‖²`, and the state is renormalized.
//!
//! Times are integer picoseconds. Steps are `dt_max` while `H` varies and up
//! to `4096 · dt_max/100` while it is constant; with exact propagators the
//! step length only matters for how often the time-dependent parts are
//! resampled.

use std::collections::HashMap;
use std::ops::Range;
use std::sync::{Arc, RwLock};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ChannelKind, Frame, FrameModel};
use crate::operator::OperatorMatrix;
use crate::params::PhysicalParams;
use crate::records::{ps, seconds, Channel, DetectionRecord, JumpEvent};
use crate::space::{HilbertSpace, Level};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
/// Quantization of drive level and coupling scale.
const LEVELS: f64 = 1024.0;
/// Largest ladder exponent: constant-H steps span up to 2^12 substeps.
const K_MAX: usize = 12;

/// Drive-gating feedback: a detection on a trigger channel at `t_d`
/// attenuates the drive over `[t_d + latency + delay, … + window_duration)`.
/// Overlapping intervals merge, so a retrigger inside an open window
/// restarts (extends) it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeedbackProtocol {
    pub enabled: bool,
    pub trigger_channels: Vec<Channel>,
    /// Seconds.
    pub electronic_latency: f64,
    /// Seconds, measured from detection plus latency.
    pub delay_after_detection: f64,
    /// Seconds.
    pub window_duration: f64,
    /// Drive amplitude multiplier inside windows.
    pub attenuation_factor: f64,
}

impl Default for FeedbackProtocol {
    fn default() -> Self {
        Self {
            enabled: false,
            trigger_channels: vec![Channel::HDetA, Channel::HDetB],
            electronic_latency: 50e-9,
            delay_after_detection: 0.0,
            window_duration: 3e-6,
            attenuation_factor: 0.05,
        }
    }
}

impl FeedbackProtocol {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.attenuation_factor) {
            return Err(Error::Config(format!(
                "attenuation_factor must lie in [0, 1], got {}",
                self.attenuation_factor
            )));
        }
        for (n, v) in [
            ("electronic_latency", self.electronic_latency),
            ("delay_after_detection", self.delay_after_detection),
            ("window_duration", self.window_duration),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{n} must be a non-negative duration, got {v}")));
            }
        }
        if self.enabled && self.trigger_channels.is_empty() {
            return Err(Error::Config("feedback needs at least one trigger channel".into()));
        }
        Ok(())
    }

    /// Offset from detection to window start.
    pub fn lead(&self) -> f64 {
        self.electronic_latency + self.delay_after_detection
    }

    /// Attenuation intervals `[start, end)` in seconds for sorted trigger
    /// times, merged where they overlap.
    pub fn intervals(&self, detection_times: &[f64]) -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, f64)> = Vec::new();
        if !self.enabled || self.window_duration <= 0.0 {
            return out;
        }
        for &t in detection_times {
            let (s, e) = (t + self.lead(), t + self.lead() + self.window_duration);
            match out.last_mut() {
                Some(last) if s <= last.1 => last.1 = last.1.max(e),
                _ => out.push((s, e)),
            }
        }
        out
    }
}

/// Drive multiplier at time `t` given sorted trigger detection times.
pub fn feedback_envelope(protocol: &FeedbackProtocol, detection_times: &[f64], t: f64) -> f64 {
    let inside = protocol
        .intervals(detection_times)
        .iter()
        .any(|&(s, e)| t >= s && t < e);
    if inside {
        protocol.attenuation_factor
    } else {
        1.0
    }
}

/// Trigger detections that open a new feedback epoch: those arriving while no
/// attenuation interval is pending or active. Times in ps, sorted.
pub fn epoch_starts(protocol: &FeedbackProtocol, trigger_times_ps: &[u64]) -> Vec<u64> {
    let lead = ps(protocol.lead());
    let window = ps(protocol.window_duration);
    let mut busy_until: Option<u64> = None;
    let mut out = Vec::new();
    for &t in trigger_times_ps {
        if busy_until.is_none_or(|b| t >= b) {
            out.push(t);
        }
        let end = t + lead + window;
        busy_until = Some(busy_until.map_or(end, |b| b.max(end)));
    }
    out
}

/// How the atom couples to the cavity over a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AtomModel {
    /// One atom at maximum coupling for the whole trajectory.
    FixedMaxCoupled,
    /// One atom crossing the mode with a Gaussian coupling profile centered
    /// in the trajectory window; `arrival_rate = 0` means an empty cavity.
    /// The arrival rate is otherwise used when overlaying trajectories into
    /// multi-atom records.
    Transit { mean_transit: f64, arrival_rate: f64 },
}

/// Gaussian transit coupling `g_max exp(-(t - t_c)²/(2σ²))` with
/// `t_c = atom_arrival + mean_transit/2` and `σ = mean_transit/4`.
pub fn transit_coupling(t: f64, atom_arrival: f64, mean_transit: f64, g_max: f64) -> Result<f64> {
    if !(mean_transit > 0.0) {
        return Err(Error::Domain(format!("mean_transit must be positive, got {mean_transit}")));
    }
    let sigma = mean_transit / 4.0;
    let x = (t - atom_arrival - mean_transit / 2.0) / sigma;
    Ok(g_max * (-0.5 * x * x).exp())
}

/// `∫ (g(t)/g_max)² dt = σ √π` for the transit profile.
pub fn effective_interaction_time(mean_transit: f64) -> f64 {
    mean_transit / 4.0 * std::f64::consts::PI.sqrt()
}

/// Probabilities of starting in `g-`, `g0`, `g+`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialGroundState(pub [f64; 3]);

impl Default for InitialGroundState {
    fn default() -> Self {
        Self([0.0, 1.0, 0.0])
    }
}

impl InitialGroundState {
    fn sample(&self, rng: &mut impl Rng) -> Level {
        let total: f64 = self.0.iter().sum();
        let mut x = rng.gen::<f64>() * total;
        for (k, &p) in self.0.iter().enumerate() {
            if x < p {
                return Level::ALL[k];
            }
            x -= p;
        }
        Level::ALL[self.0.iter().rposition(|&p| p > 0.0).unwrap_or(1)]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrajectoryConfig {
    /// Recorded duration, seconds.
    pub duration: f64,
    /// Simulated but unrecorded lead-in, seconds.
    pub warmup: f64,
    pub dt_max: f64,
    pub seed: u64,
    pub atom_model: AtomModel,
    pub initial_atom_state: InitialGroundState,
    pub feedback: FeedbackProtocol,
    pub frame: Frame,
    pub n_max_v: usize,
    pub n_max_h: usize,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self {
            duration: 10e-6,
            warmup: 0.0,
            dt_max: 1e-9,
            seed: 0,
            atom_model: AtomModel::FixedMaxCoupled,
            initial_atom_state: InitialGroundState::default(),
            feedback: FeedbackProtocol::default(),
            frame: Frame::Displaced,
            n_max_v: 2,
            n_max_h: 2,
        }
    }
}

impl TrajectoryConfig {
    pub fn validate(&self, params: &PhysicalParams) -> Result<()> {
        params.validate()?;
        self.feedback.validate()?;
        if !(self.duration > 0.0 && self.duration.is_finite()) || !(self.warmup >= 0.0) {
            return Err(Error::Config("duration must be positive and warmup non-negative".into()));
        }
        let dt_ps = ps(self.dt_max);
        if dt_ps < 100 || dt_ps % 100 != 0 {
            return Err(Error::Config(format!(
                "dt_max must be a positive multiple of 100 ps, got {} ps",
                dt_ps
            )));
        }
        let bound = self.dt_max * params.max_rate();
        if bound >= 0.05 {
            return Err(Error::Config(format!(
                "dt_max · max rate = {bound:.3} violates the 0.05 integration bound"
            )));
        }
        if let AtomModel::Transit { mean_transit, arrival_rate } = self.atom_model {
            if !(mean_transit > 0.0) || !(arrival_rate >= 0.0) {
                return Err(Error::Config("transit needs mean_transit > 0 and arrival_rate ≥ 0".into()));
            }
        }
        let p = &self.initial_atom_state.0;
        if p.iter().any(|&x| !(x >= 0.0)) || p.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config("initial_atom_state must be non-negative weights".into()));
        }
        HilbertSpace::new(self.n_max_v, self.n_max_h)?;
        Ok(())
    }
}

/// Row-major dense block.
#[derive(Debug, Clone)]
struct Dense {
    n: usize,
    m: Vec<Complex64>,
}

impl Dense {
    fn from_matrix(m: &DMatrix<Complex64>) -> Self {
        let n = m.nrows();
        let mut v = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                v.push(m[(i, j)]);
            }
        }
        Self { n, m: v }
    }

    fn apply(&self, x: &[Complex64], out: &mut [Complex64]) {
        for (row, o) in self.m.chunks_exact(self.n).zip(out.iter_mut()) {
            let mut acc = ZERO;
            for (a, b) in row.iter().zip(x) {
                acc += a * b;
            }
            *o = acc;
        }
    }
}

/// Per-block propagators for one quantized (field, coupling) pair.
struct Propagators {
    /// `ladder[k][block] = exp(-i H 2^k q)`.
    ladder: Vec<Vec<Dense>>,
    /// `exp(-i H dt_max)`.
    full: Vec<Dense>,
}

/// Immutable engine state shared by all trajectories of an ensemble.
pub struct Engine {
    params: PhysicalParams,
    config: TrajectoryConfig,
    model: FrameModel,
    /// `perm[new] = old` basis index; blocks are contiguous in the new order.
    perm: Vec<usize>,
    blocks: Vec<Range<usize>>,
    channels: Vec<(ChannelKind, OperatorMatrix, Complex64)>,
    q_ps: u64,
    dt_steps: u64,
    cache: RwLock<HashMap<(i32, i32), Arc<Propagators>>>,
}

fn union_find_blocks(dim: usize, ops: &[&OperatorMatrix]) -> Vec<Vec<usize>> {
    let mut parent: Vec<usize> = (0..dim).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for op in ops {
        for (i, j, _) in op.entries() {
            let (a, b) = (find(&mut parent, i), find(&mut parent, j));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot: HashMap<usize, usize> = HashMap::new();
    for i in 0..dim {
        let r = find(&mut parent, i);
        let k = *slot.entry(r).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[k].push(i);
    }
    groups
}

fn permute(op: &OperatorMatrix, inv: &[usize]) -> OperatorMatrix {
    OperatorMatrix::from_triplets(op.dim(), op.entries().map(|(i, j, v)| (inv[i], inv[j], v)), op.label.clone())
}

fn quantize(x: f64) -> i32 {
    (x * LEVELS).round() as i32
}

fn level_value(q: i32) -> f64 {
    q as f64 / LEVELS
}

/// Time-integrated expectations collected alongside a trajectory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStats {
    /// `∫ ⟨C_k† C_k⟩ dt` per collapse channel (H output not split).
    pub expected_counts: Vec<(String, f64)>,
    /// `∫ P_excited dt`.
    pub excited_time: f64,
    /// Realized jump counts per collapse channel, same order.
    pub jump_counts: Vec<(String, u64)>,
}

fn kind_name(k: ChannelKind) -> &'static str {
    match k {
        ChannelKind::SidePi => "side_pi",
        ChannelKind::SideSigmaPlus => "side_sigma_plus",
        ChannelKind::SideSigmaMinus => "side_sigma_minus",
        ChannelKind::VOut => "V_out",
        ChannelKind::HOut => "H_out",
    }
}

/// Attenuation intervals scheduled during a running trajectory (ps).
#[derive(Default)]
struct FeedbackState {
    intervals: Vec<(u64, u64)>,
}

impl FeedbackState {
    fn trigger(&mut self, t: u64, lead: u64, window: u64) {
        if window == 0 {
            return;
        }
        let (s, e) = (t + lead, t + lead + window);
        match self.intervals.last_mut() {
            Some(last) if s <= last.1 => last.1 = last.1.max(e),
            _ => self.intervals.push((s, e)),
        }
    }

    fn prune(&mut self, t: u64) {
        self.intervals.retain(|&(_, e)| e > t);
    }

    fn attenuated(&self, t: u64) -> bool {
        self.intervals.iter().any(|&(s, e)| t >= s && t < e)
    }

    fn next_edge(&self, t: u64) -> u64 {
        self.intervals
            .iter()
            .flat_map(|&(s, e)| [s, e])
            .filter(|&x| x > t)
            .min()
            .unwrap_or(u64::MAX)
    }
}

impl Engine {
    pub fn new(config: &TrajectoryConfig, params: &PhysicalParams) -> Result<Self> {
        config.validate(params)?;
        let space = HilbertSpace::new(config.n_max_v, config.n_max_h)?;
        let model = FrameModel::build(&space, params, config.frame);
        let dim = space.dim();
        let mut structure: Vec<&OperatorMatrix> =
            vec![&model.static_part, &model.coupling, &model.atom_drive, &model.field_linear];
        let ident = OperatorMatrix::identity(dim);
        structure.push(&ident);
        let groups = union_find_blocks(dim, &structure);
        let mut perm = Vec::with_capacity(dim);
        let mut blocks = Vec::new();
        for g in &groups {
            blocks.push(perm.len()..perm.len() + g.len());
            perm.extend_from_slice(g);
        }
        let mut inv = vec![0; dim];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let channels = model
            .channels
            .iter()
            .map(|c| (c.kind, permute(&c.op, &inv), c.offset))
            .collect();
        let dt_ps = ps(config.dt_max);
        Ok(Self {
            params: params.clone(),
            config: config.clone(),
            perm,
            blocks,
            channels,
            q_ps: dt_ps / 100,
            dt_steps: 100,
            cache: RwLock::new(HashMap::new()),
            model,
        })
    }

    pub fn config(&self) -> &TrajectoryConfig {
        &self.config
    }

    pub fn params(&self) -> &PhysicalParams {
        &self.params
    }

    /// Sizes of the invariant blocks of the effective Hamiltonian.
    pub fn block_sizes(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.len()).collect()
    }

    /// Number of cached propagator sets.
    pub fn cached_keys(&self) -> usize {
        self.cache.read().map(|c| c.len()).unwrap_or(0)
    }

    fn propagators(&self, key: (i32, i32)) -> Arc<Propagators> {
        if let Some(p) = self.cache.read().expect("cache poisoned").get(&key) {
            return p.clone();
        }
        let props = Arc::new(self.compute_propagators(key));
        let mut w = self.cache.write().expect("cache poisoned");
        w.entry(key).or_insert(props).clone()
    }

    fn compute_propagators(&self, key: (i32, i32)) -> Propagators {
        let h = self.model.hamiltonian(level_value(key.0), level_value(key.1));
        let dense = h.to_dense();
        let q = seconds(self.q_ps);
        let mut ladder: Vec<Vec<Dense>> = Vec::with_capacity(K_MAX + 1);
        let mut full = Vec::with_capacity(self.blocks.len());
        let mut base = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let idx = &self.perm[b.clone()];
            let n = idx.len();
            let hb = DMatrix::from_fn(n, n, |i, j| dense[(idx[i], idx[j])]);
            let minus_i = Complex64::new(0.0, -1.0);
            let uq = (&hb * (minus_i * q)).exp();
            let ufull = (&hb * (minus_i * q * self.dt_steps as f64)).exp();
            full.push(Dense::from_matrix(&ufull));
            base.push(uq);
        }
        let mut cur = base;
        for _ in 0..=K_MAX {
            ladder.push(cur.iter().map(Dense::from_matrix).collect());
            cur = cur.iter().map(|m| m * m).collect();
        }
        Propagators { ladder, full }
    }

    fn apply_blocks(&self, mats: &[Dense], active: &[bool], psi: &mut [Complex64], scratch: &mut [Complex64]) {
        for ((b, m), &on) in self.blocks.iter().zip(mats).zip(active) {
            if on {
                m.apply(&psi[b.clone()], &mut scratch[b.clone()]);
                psi[b.clone()].copy_from_slice(&scratch[b.clone()]);
            }
        }
    }

    /// Evolves over `n` substeps with constant propagators.
    fn evolve(&self, p: &Propagators, n: u64, active: &[bool], psi: &mut [Complex64], scratch: &mut [Complex64]) {
        if n == self.dt_steps {
            self.apply_blocks(&p.full, active, psi, scratch);
            return;
        }
        for k in 0..=K_MAX {
            if n >> k & 1 == 1 {
                self.apply_blocks(&p.ladder[k], active, psi, scratch);
            }
        }
    }

    fn active_blocks(&self, psi: &[Complex64]) -> Vec<bool> {
        self.blocks
            .iter()
            .map(|b| psi[b.clone()].iter().any(|a| *a != ZERO))
            .collect()
    }

    fn coupling_at(&self, t_rec: f64) -> f64 {
        match self.config.atom_model {
            AtomModel::FixedMaxCoupled => 1.0,
            AtomModel::Transit { arrival_rate, .. } if arrival_rate == 0.0 => 0.0,
            AtomModel::Transit { mean_transit, .. } => {
                let arrival = self.config.duration / 2.0 - mean_transit / 2.0;
                transit_coupling(t_rec, arrival, mean_transit, 1.0).unwrap_or(0.0)
            }
        }
    }

    fn coupling_varies(&self) -> bool {
        matches!(self.config.atom_model, AtomModel::Transit { arrival_rate, .. } if arrival_rate > 0.0)
    }

    fn initial_state(&self, rng: &mut impl Rng) -> Vec<Complex64> {
        let space = self.model.space;
        let level = self.config.initial_atom_state.sample(rng);
        let mut psi_old = vec![ZERO; space.dim()];
        match self.config.frame {
            Frame::Displaced => psi_old[space.index_of(level, 0, 0)] = Complex64::new(1.0, 0.0),
            Frame::Lab => {
                // Truncated coherent state of the steady empty-cavity field.
                let a = self.params.drive_amplitude;
                let mut amp = Complex64::new(1.0, 0.0);
                for n in 0..=space.n_max_v() {
                    if n > 0 {
                        amp = amp * a / (n as f64).sqrt();
                    }
                    psi_old[space.index_of(level, n, 0)] = amp;
                }
            }
        }
        let norm = psi_old.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        let mut psi = vec![ZERO; space.dim()];
        for (new, &old) in self.perm.iter().enumerate() {
            psi[new] = psi_old[old] / norm;
        }
        psi
    }

    fn channel_weights(&self, field: f64, psi: &[Complex64], buf: &mut [Complex64]) -> Vec<f64> {
        self.channels
            .iter()
            .map(|(_, op, off)| {
                op.apply_into(psi, buf);
                let c = off * field;
                buf.iter().zip(psi).map(|(b, x)| (b + c * x).norm_sqr()).sum()
            })
            .collect()
    }

    /// Runs one trajectory with an explicit random stream.
    pub fn run(&self, rng: &mut ChaCha8Rng, collect_stats: bool) -> Result<(DetectionRecord, Option<TrajectoryStats>)> {
        let cfg = &self.config;
        let q = self.q_ps;
        let round_q = |x: f64| (ps(x) + q / 2) / q * q;
        let warm = round_q(cfg.warmup);
        let total = warm + round_q(cfg.duration);
        let lead = round_q(cfg.feedback.lead());
        let window = round_q(cfg.feedback.window_duration);
        let att = cfg.feedback.attenuation_factor;
        let kappa = self.params.kappa;
        let displaced = cfg.frame == Frame::Displaced;
        let varying_coupling = self.coupling_varies();
        let max_const = if collect_stats { self.dt_steps } else { 1 << K_MAX };

        let mut psi = self.initial_state(rng);
        let dim = psi.len();
        let mut scratch = vec![ZERO; dim];
        let mut trial = vec![ZERO; dim];
        let mut buf = vec![ZERO; dim];
        let mut active = self.active_blocks(&psi);
        let mut threshold: f64 = 1.0 - rng.gen::<f64>();
        let mut u = 1.0f64;
        let mut fb = FeedbackState::default();
        let mut events = Vec::new();
        let mut stats = collect_stats.then(|| {
            (vec![0.0; self.channels.len()], 0.0f64, vec![0u64; self.channels.len()])
        });
        let p_exc = permute(&self.model.ops.p_excited, &{
            let mut inv = vec![0; dim];
            for (new, &old) in self.perm.iter().enumerate() {
                inv[old] = new;
            }
            inv
        });

        let mut t = 0u64;
        while t < total {
            fb.prune(t);
            let s = if cfg.feedback.enabled && fb.attenuated(t) { att } else { 1.0 };
            if displaced && (u - s).abs() < 0.25 / LEVELS {
                u = s;
            }
            let field_varies = displaced && u != s;
            let varies = field_varies || varying_coupling;
            let boundary = total.min(fb.next_edge(t));
            let room = (boundary - t) / q;
            let n = room.min(if varies { self.dt_steps } else { max_const }).max(1);
            let mid = seconds(t + n * q / 2);
            let field_at = |tau: u64, u0: f64| s + (u0 - s) * (-kappa * seconds(tau)).exp();
            let field = if displaced { field_at(n * q / 2, u) } else { s };
            let t_rec = mid - seconds(warm);
            let key = (quantize(field), quantize(self.coupling_at(t_rec)));
            let props = self.propagators(key);
            let fkey = level_value(key.0);

            let norm_before = if stats.is_some() { norm_sqr(&psi) } else { 0.0 };
            let rates_before = stats
                .as_ref()
                .map(|_| (self.channel_weights(fkey, &psi, &mut buf), p_exc.expectation(&psi).re));

            trial.copy_from_slice(&psi);
            self.evolve(&props, n, &active, &mut trial, &mut scratch);
            let nrm = norm_sqr(&trial);
            if !nrm.is_finite() {
                return Err(Error::Numerical {
                    time_s: seconds(t),
                    reason: "non-finite state amplitudes".into(),
                });
            }
            let (advance, jumped) = if nrm >= threshold {
                psi.copy_from_slice(&trial);
                (n, false)
            } else {
                // Largest substep count that stays above the threshold.
                let mut adv = 0u64;
                for k in (0..=K_MAX).rev() {
                    let step = 1u64 << k;
                    if adv + step < n {
                        trial.copy_from_slice(&psi);
                        self.apply_blocks(&props.ladder[k], &active, &mut trial, &mut scratch);
                        if norm_sqr(&trial) >= threshold {
                            psi.copy_from_slice(&trial);
                            adv += step;
                        }
                    }
                }
                self.apply_blocks(&props.ladder[0], &active, &mut psi, &mut scratch);
                (adv + 1, true)
            };
            let norm_after = norm_sqr(&psi);
            if let (Some((counts, exc, _)), Some((w0, e0))) = (stats.as_mut(), rates_before) {
                let w1 = self.channel_weights(fkey, &psi, &mut buf);
                let e1 = p_exc.expectation(&psi).re;
                let dt = seconds(advance * q);
                for (c, (a, b)) in counts.iter_mut().zip(w0.iter().zip(&w1)) {
                    *c += 0.5 * dt * (a / norm_before + b / norm_after);
                }
                *exc += 0.5 * dt * (e0 / norm_before + e1 / norm_after);
            }
            if displaced {
                u = field_at(advance * q, u);
            }
            t += advance * q;
            if !jumped {
                continue;
            }
            if !(norm_after > 1e-300) {
                return Err(Error::IntegrationStep {
                    time_s: seconds(t),
                    reason: format!("state norm underflow ({norm_after:e}) without a resolved jump"),
                });
            }
            let weights = self.channel_weights(fkey, &psi, &mut buf);
            let total_w: f64 = weights.iter().sum();
            if !(total_w > 0.0) {
                return Err(Error::IntegrationStep {
                    time_s: seconds(t),
                    reason: "jump triggered with vanishing channel rates".into(),
                });
            }
            let mut x = rng.gen::<f64>() * total_w;
            let mut pick = weights.len() - 1;
            for (k, w) in weights.iter().enumerate() {
                if x < *w {
                    pick = k;
                    break;
                }
                x -= w;
            }
            let (kind, op, off) = &self.channels[pick];
            op.apply_into(&psi, &mut buf);
            let c = off * fkey;
            for (b, p) in buf.iter_mut().zip(&psi) {
                *b += c * p;
            }
            let n2 = norm_sqr(&buf).sqrt();
            for (p, b) in psi.iter_mut().zip(&buf) {
                *p = b / n2;
            }
            active = self.active_blocks(&psi);
            threshold = 1.0 - rng.gen::<f64>();
            if let Some((_, _, jc)) = stats.as_mut() {
                jc[pick] += 1;
            }
            let channel = match kind {
                ChannelKind::SidePi => Channel::SidePi,
                ChannelKind::SideSigmaPlus => Channel::SideSigmaPlus,
                ChannelKind::SideSigmaMinus => Channel::SideSigmaMinus,
                ChannelKind::VOut => Channel::VOut,
                ChannelKind::HOut => {
                    if rng.gen::<bool>() {
                        Channel::HDetA
                    } else {
                        Channel::HDetB
                    }
                }
            };
            if cfg.feedback.enabled && cfg.feedback.trigger_channels.contains(&channel) {
                fb.trigger(t, lead, window);
            }
            if t >= warm {
                events.push(JumpEvent::new(t - warm, channel));
            }
        }

        let mut record = DetectionRecord::new(total - warm, true);
        record.events = events;
        let stats = stats.map(|(counts, exc, jumps)| TrajectoryStats {
            expected_counts: self
                .channels
                .iter()
                .zip(counts)
                .map(|((k, _, _), c)| (kind_name(*k).to_string(), c))
                .collect(),
            excited_time: exc,
            jump_counts: self
                .channels
                .iter()
                .zip(jumps)
                .map(|((k, _, _), c)| (kind_name(*k).to_string(), c))
                .collect(),
        });
        Ok((record, stats))
    }

    /// Trajectory `k` of the ensemble seeded by the configuration.
    pub fn trajectory(&self, k: u64) -> Result<DetectionRecord> {
        let mut rng = trajectory_rng(self.config.seed, k);
        let (mut r, _) = self.run(&mut rng, false)?;
        r.metadata.insert("seed".into(), self.config.seed.to_string());
        r.metadata.insert("trajectory".into(), k.to_string());
        Ok(r)
    }

    pub fn trajectory_with_stats(&self, k: u64) -> Result<(DetectionRecord, TrajectoryStats)> {
        let mut rng = trajectory_rng(self.config.seed, k);
        let (r, s) = self.run(&mut rng, true)?;
        Ok((r, s.expect("stats requested")))
    }
}

fn norm_sqr(x: &[Complex64]) -> f64 {
    x.iter().map(|a| a.norm_sqr()).sum()
}

/// Independent deterministic stream for trajectory `k`.
pub fn trajectory_rng(seed: u64, k: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    rng
}

/// Single trajectory (index 0 of the configured seed).
pub fn evolve_trajectory(config: &TrajectoryConfig, params: &PhysicalParams) -> Result<DetectionRecord> {
    Engine::new(config, params)?.trajectory(0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMetadata {
    pub seed: u64,
    pub n_traj: usize,
    pub duration_s: f64,
    /// Event totals per channel name.
    pub channel_counts: Vec<(String, usize)>,
}

#[derive(Debug, Clone)]
pub struct Ensemble {
    pub records: Vec<DetectionRecord>,
    pub metadata: EnsembleMetadata,
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Internal(format!("thread pool: {e}")))
}

/// Runs trajectories `0..n_traj` in parallel and maps each record through
/// `f`; results are returned in trajectory order regardless of scheduling.
pub fn map_ensemble<T, F>(engine: &Engine, n_traj: usize, jobs: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64, DetectionRecord) -> T + Sync + Send,
{
    if n_traj == 0 {
        return Err(Error::Config("n_traj must be at least 1".into()));
    }
    pool(jobs)?.install(|| {
        (0..n_traj as u64)
            .into_par_iter()
            .map(|k| engine.trajectory(k).map(|r| f(k, r)))
            .collect()
    })
}

/// Runs `n_traj` seeded trajectories on `jobs` worker threads.
pub fn run_ensemble(config: &TrajectoryConfig, params: &PhysicalParams, n_traj: usize, jobs: usize) -> Result<Ensemble> {
    let engine = Engine::new(config, params)?;
    let records = map_ensemble(&engine, n_traj, jobs, |_, r| r)?;
    let channel_counts = Channel::ALL
        .iter()
        .map(|&c| (c.name().to_string(), records.iter().map(|r| r.count(c)).sum()))
        .collect();
    Ok(Ensemble {
        metadata: EnsembleMetadata {
            seed: config.seed,
            n_traj,
            duration_s: config.duration,
            channel_counts,
        },
        records,
    })
}

/// Default worker count: `CAVITY_BEATS_JOBS` if set, else available cores.
pub fn default_jobs() -> usize {
    std::env::var("CAVITY_BEATS_JOBS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n: &usize| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}
