//! Workflow layer behind the `cavity-beats` command.
//!
//! Each `cmd_*` function runs one stage from a [`RunConfig`] and writes its
//! artifacts under an output directory; [`run`] parses command-line
//! arguments and maps results to exit codes. Flags override config keys,
//! which override library defaults.
//!
//! Exit codes: 0 success, 1 a requested comparison or validation failed,
//! 2 bad usage, configuration or I/O, 3 numerical failure.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analytic::{beat_frequency, expected_pairs, poisson_rates, shift_report, Pair, ShiftReport};
use crate::config::{FilterSpec, RunConfig};
use crate::correlation::{
    feedback_epoch_starts, fft_spectrum, filter_by_jump_count, fit_damped_cosine, g2_over_segments, time_filter,
    CorrelationResult, FitOptions, FitResult, G2Accumulator, Spectrum,
};
use crate::error::{Error, Result};
use crate::params::to_hz;
use crate::records::{apply_detector, merge_records, ps, read_record, write_record, DetectionRecord};
use crate::trajectory::{default_jobs, map_ensemble, Engine};

pub const TOOL_VERSION: &str = concat!("cavity-beats ", env!("CARGO_PKG_VERSION"));

/// Reproducibility record of one command invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    /// Effective configuration after flag overrides, as TOML.
    pub config: String,
    pub seed_lineage: SeedLineage,
    /// Input paths with the SHA-256 of their contents.
    pub inputs: Vec<(String, String)>,
    /// Output paths relative to the output directory.
    pub outputs: Vec<String>,
    pub started_unix_s: f64,
    pub wall_clock_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedLineage {
    pub master_seed: u64,
    /// Trajectory `k` draws from ChaCha8 stream `k` of the master seed.
    pub trajectory_streams: String,
    /// Detector noise for trajectory `k` is seeded with `detector_seed + k`.
    pub detector_seed: u64,
}

impl SeedLineage {
    pub fn new(master_seed: u64, n_traj: usize) -> Self {
        Self {
            master_seed,
            trajectory_streams: format!("0..{n_traj}"),
            detector_seed: master_seed ^ 0x5DEE_CE66_D1CE_4E5B,
        }
    }
}

impl RunManifest {
    fn new(command: &str, config: &RunConfig, inputs: &[PathBuf], outputs: Vec<String>) -> Result<Self> {
        let inputs = inputs
            .iter()
            .map(|p| {
                let bytes = fs::read(p).map_err(|e| Error::io(p, e))?;
                Ok((p.display().to_string(), hex::encode(Sha256::digest(&bytes))))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            tool_version: TOOL_VERSION.into(),
            command: command.into(),
            config: config.to_toml(),
            seed_lineage: SeedLineage::new(config.simulation.seed, config.simulation.n_traj),
            inputs,
            outputs,
            started_unix_s: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0),
            wall_clock_s: 0.0,
        })
    }

    /// SHA-256 over the tool version, command, configuration, seeds, input
    /// contents and output names. Timing and input locations are left out,
    /// so rerunning on the same data embeds the same hash.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        let contents: Vec<&str> = self.inputs.iter().map(|(_, sha)| sha.as_str()).collect();
        let stable = serde_json::json!({
            "tool_version": self.tool_version,
            "command": self.command,
            "config": self.config,
            "seed_lineage": self.seed_lineage,
            "inputs": contents,
            "outputs": self.outputs,
        });
        h.update(stable.to_string().as_bytes());
        hex::encode(h.finalize())
    }

    fn write(&mut self, out_dir: &Path, started: Instant) -> Result<PathBuf> {
        self.wall_clock_s = started.elapsed().as_secs_f64();
        let path = out_dir.join(format!("manifest_{}.json", self.command));
        let mut v = serde_json::to_value(&*self)?;
        v["manifest_sha256"] = serde_json::Value::String(self.hash());
        write_text(&path, &(serde_json::to_string_pretty(&v)? + "\n"))?;
        Ok(path)
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateSummary {
    pub manifest_sha256: String,
    pub n_traj: usize,
    pub record_files: Vec<String>,
    pub channel_counts: Vec<(String, usize)>,
}

fn record_name(k: usize, text: bool) -> String {
    format!("records/traj_{k:06}.{}", if text { "txt" } else { "bin" })
}

/// Runs the configured ensemble and writes one record file per trajectory
/// to `out_dir/records/`.
pub fn cmd_simulate(config: &RunConfig, out_dir: &Path, jobs: usize) -> Result<SimulateSummary> {
    let started = Instant::now();
    config.validate()?;
    let params = config.params()?;
    let tcfg = config.trajectory_config()?;
    let sim = &config.simulation;
    let detector = sim.detector();
    let lineage = SeedLineage::new(sim.seed, sim.n_traj);
    let names: Vec<String> = (0..sim.n_traj).map(|k| record_name(k, sim.text_records)).collect();
    let mut outputs = names.clone();
    outputs.push("simulate_summary.json".into());
    let mut manifest = RunManifest::new("simulate", config, &[], outputs)?;
    let hash = manifest.hash();
    ensure_dir(&out_dir.join("records"))?;
    let engine = Engine::new(&tcfg, &params)?;
    let counts = map_ensemble(&engine, sim.n_traj, jobs, |k, rec| -> Result<Vec<usize>> {
        let mut rec = apply_detector(&rec, &detector, lineage.detector_seed.wrapping_add(k))?;
        rec.metadata.insert("manifest_sha256".into(), hash.clone());
        rec.metadata.insert("seed".into(), sim.seed.to_string());
        rec.metadata.insert("trajectory".into(), k.to_string());
        write_record(&rec, out_dir.join(&names[k as usize]))?;
        Ok(crate::records::Channel::ALL.iter().map(|&c| rec.count(c)).collect())
    })?
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let channel_counts = crate::records::Channel::ALL
        .iter()
        .enumerate()
        .map(|(i, c)| (c.name().to_string(), counts.iter().map(|v| v[i]).sum()))
        .collect();
    let summary = SimulateSummary {
        manifest_sha256: hash,
        n_traj: sim.n_traj,
        record_files: names,
        channel_counts,
    };
    write_json(&out_dir.join("simulate_summary.json"), &summary)?;
    manifest.write(out_dir, started)?;
    Ok(summary)
}

/// Record files named by `inputs`; directories contribute their `.bin` and
/// `.txt` files in name order.
pub fn expand_inputs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut files: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|e| Error::io(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| matches!(f.extension().and_then(|x| x.to_str()), Some("bin" | "txt")))
                .collect();
            files.sort();
            out.extend(files);
        } else {
            out.push(p.clone());
        }
    }
    if out.is_empty() {
        return Err(Error::Config("no record files found in the inputs".into()));
    }
    Ok(out)
}

/// Correlation of a set of records with the configured filter and, when
/// feedback is enabled, conditioning on feedback epoch triggers only.
pub fn correlate(config: &RunConfig, records: &[DetectionRecord]) -> Result<CorrelationResult> {
    let opts = config.analysis.correlation_options()?;
    let protocol = config.feedback.protocol()?;
    match config.analysis.filter()? {
        FilterSpec::JumpCount { max_jumps, window_s } => {
            let window = window_s.unwrap_or(300.0 / config.params()?.gamma);
            let segments = filter_by_jump_count(records, &opts.start_channels, Some(max_jumps), ps(window))?;
            g2_over_segments(&segments, &opts)
        }
        spec => {
            let mut acc = G2Accumulator::new(opts.clone())?;
            let mut chans = opts.start_channels.clone();
            chans.extend(&opts.stop_channels);
            for r in records {
                let r = match spec {
                    FilterSpec::Time { window_s, skip_s } => time_filter(&r.select(&chans), ps(window_s), ps(skip_s)),
                    _ => r.clone(),
                };
                if protocol.enabled {
                    acc.add_record_with_starts(&r, &feedback_epoch_starts(&r, &protocol));
                } else {
                    acc.add_record(&r);
                }
            }
            acc.finish()
        }
    }
}

/// Fit restrictions implied by the configuration: the lag window and, with
/// feedback enabled, the attenuated interval.
pub fn fit_options(config: &RunConfig) -> Result<FitOptions> {
    let a = &config.analysis;
    let protocol = config.feedback.protocol()?;
    let mut exclude = Vec::new();
    if protocol.enabled {
        exclude.push((protocol.lead(), protocol.lead() + protocol.window_duration));
    }
    Ok(FitOptions {
        t_min: a.fit_t_min_us * 1e-6,
        t_max: a.fit_t_max_us.unwrap_or(a.tau_max_us) * 1e-6,
        exclude,
        ..FitOptions::default()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub manifest_sha256: String,
    pub status: String,
    pub error: Option<String>,
    pub fit: Option<FitResult>,
    pub freq_hz: Option<f64>,
    pub spectrum_peak_hz: f64,
    pub spectrum_peak_error_hz: f64,
    pub n_starts: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyzeOutput {
    pub correlation: CorrelationResult,
    pub spectrum: Spectrum,
    pub fit: FitResult,
    pub manifest_sha256: String,
}

/// Correlates, transforms and fits the input records; writes `g2.csv`,
/// `spectrum.csv` and `fit.json`. A failed fit is recorded in `fit.json`
/// and returned as an error after all files are written.
pub fn cmd_analyze(config: &RunConfig, inputs: &[PathBuf], out_dir: &Path) -> Result<AnalyzeOutput> {
    let started = Instant::now();
    let files = expand_inputs(inputs)?;
    let outputs = vec!["g2.csv".to_string(), "spectrum.csv".into(), "fit.json".into()];
    let mut manifest = RunManifest::new("analyze", config, &files, outputs)?;
    let hash = manifest.hash();
    let records = files.iter().map(read_record).collect::<Result<Vec<_>>>()?;
    let corr = correlate(config, &records)?;
    let spectrum = fft_spectrum(&corr)?;
    let fit = fit_damped_cosine(&corr, None, &fit_options(config)?);
    ensure_dir(out_dir)?;
    let header = format!("# manifest_sha256={hash}\n");
    write_text(&out_dir.join("g2.csv"), &(header.clone() + &corr.to_csv()))?;
    write_text(&out_dir.join("spectrum.csv"), &(header + &spectrum.to_csv()))?;
    let report = FitReport {
        manifest_sha256: hash.clone(),
        status: if fit.is_ok() { "ok" } else { "error" }.into(),
        error: fit.as_ref().err().map(|e| e.to_string()),
        freq_hz: fit.as_ref().ok().map(|f| to_hz(f.freq)),
        fit: fit.as_ref().ok().cloned(),
        spectrum_peak_hz: spectrum.peak_hz,
        spectrum_peak_error_hz: spectrum.peak_interp_error_hz,
        n_starts: corr.n_starts,
    };
    write_json(&out_dir.join("fit.json"), &report)?;
    manifest.write(out_dir, started)?;
    Ok(AnalyzeOutput {
        correlation: corr,
        spectrum,
        fit: fit?,
        manifest_sha256: hash,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeatComponent {
    pub pair: Pair,
    /// rad/s.
    pub beat_freq: f64,
    pub beat_freq_hz: f64,
    /// Magnitude decay rate of the Poisson-averaged coherence, 1/s.
    pub poisson_decay: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub manifest_sha256: String,
    pub drive_photons: f64,
    pub report: ShiftReport,
    pub components: Vec<BeatComponent>,
}

impl Prediction {
    /// `key = value` lines, rates in rad/s.
    pub fn to_text(&self) -> String {
        let r = &self.report;
        let mut s = format!("manifest_sha256 = {}\n", self.manifest_sha256);
        for (k, v) in [
            ("drive_photons", self.drive_photons),
            ("delta_ac", r.delta_ac),
            ("gamma_jump", r.gamma_jump),
            ("delta_jump", r.delta_jump),
            ("delta_light", r.delta_light),
            ("gamma_decoh", r.gamma_decoh),
            ("phi_per_jump", r.phi_per_jump),
            ("r_per_jump", r.r_per_jump),
        ] {
            s.push_str(&format!("{k} = {v:e}\n"));
        }
        for c in &self.components {
            let name = serde_json::to_value(c.pair).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
            s.push_str(&format!("beat_freq.{name} = {:e}\n", c.beat_freq));
            s.push_str(&format!("beat_freq_hz.{name} = {:e}\n", c.beat_freq_hz));
            s.push_str(&format!("poisson_decay.{name} = {:e}\n", c.poisson_decay));
        }
        s
    }
}

/// Analytic predictions for the configured drive.
pub fn predict(config: &RunConfig) -> Result<Prediction> {
    let params = config.params()?;
    let alpha = params.drive_amplitude;
    let report = shift_report(&params, alpha)?;
    let components = expected_pairs(&params)
        .into_iter()
        .map(|pair| {
            let w = beat_frequency(&params, &report, pair);
            Ok(BeatComponent {
                pair,
                beat_freq: w,
                beat_freq_hz: to_hz(w),
                poisson_decay: poisson_rates(&params, alpha, pair)?.1,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Prediction {
        manifest_sha256: String::new(),
        drive_photons: params.drive_photons(),
        report,
        components,
    })
}

/// Writes `prediction.txt` and `prediction.json`.
pub fn cmd_predict(config: &RunConfig, out_dir: &Path) -> Result<Prediction> {
    let started = Instant::now();
    let mut manifest = RunManifest::new(
        "predict",
        config,
        &[],
        vec!["prediction.txt".into(), "prediction.json".into()],
    )?;
    let mut p = predict(config)?;
    p.manifest_sha256 = manifest.hash();
    ensure_dir(out_dir)?;
    write_text(&out_dir.join("prediction.txt"), &p.to_text())?;
    write_json(&out_dir.join("prediction.json"), &p)?;
    manifest.write(out_dir, started)?;
    Ok(p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub manifest_sha256: String,
    pub pair: Pair,
    pub fitted_freq: f64,
    pub predicted_freq: f64,
    pub freq_rel_dev: f64,
    pub freq_tolerance: f64,
    pub freq_pass: bool,
    pub fitted_decay: f64,
    pub predicted_decay: f64,
    pub decay_rel_dev: f64,
    pub decay_tolerance: Option<f64>,
    pub decay_pass: Option<bool>,
    pub pass: bool,
}

/// Compares a fit with a prediction under the configured tolerances.
pub fn compare(config: &RunConfig, fit: &FitResult, prediction: &Prediction) -> Result<CompareReport> {
    let c = &config.compare;
    let comp = match c.pair.fixed() {
        Some(pair) => prediction.components.iter().find(|x| x.pair == pair),
        None => prediction.components.iter().min_by(|a, b| {
            (a.beat_freq - fit.freq).abs().total_cmp(&(b.beat_freq - fit.freq).abs())
        }),
    }
    .ok_or_else(|| Error::Config("prediction has no component for the requested pair".into()))?;
    let rel = |got: f64, want: f64| if want == 0.0 { got.abs() } else { (got - want).abs() / want.abs() };
    let freq_rel_dev = rel(fit.freq, comp.beat_freq);
    let decay_rel_dev = rel(fit.decay, comp.poisson_decay);
    let freq_pass = freq_rel_dev <= c.freq_tolerance;
    let decay_pass = c.decay_tolerance.map(|t| decay_rel_dev <= t);
    Ok(CompareReport {
        manifest_sha256: String::new(),
        pair: comp.pair,
        fitted_freq: fit.freq,
        predicted_freq: comp.beat_freq,
        freq_rel_dev,
        freq_tolerance: c.freq_tolerance,
        freq_pass,
        fitted_decay: fit.decay,
        predicted_decay: comp.poisson_decay,
        decay_rel_dev,
        decay_tolerance: c.decay_tolerance,
        decay_pass,
        pass: freq_pass && decay_pass.unwrap_or(true),
    })
}

/// Reads `fit.json` (as written by analyze) and an optional
/// `prediction.json`; without one the prediction is computed from the
/// configuration. Writes `compare.json`.
pub fn cmd_compare(config: &RunConfig, fit_path: &Path, prediction_path: Option<&Path>, out_dir: &Path) -> Result<CompareReport> {
    let started = Instant::now();
    let mut inputs = vec![fit_path.to_path_buf()];
    inputs.extend(prediction_path.map(Path::to_path_buf));
    let mut manifest = RunManifest::new("compare", config, &inputs, vec!["compare.json".into()])?;
    let read = |p: &Path| fs::read_to_string(p).map_err(|e| Error::io(p, e));
    let fit_report: FitReport = serde_json::from_str(&read(fit_path)?)?;
    let fit = fit_report.fit.ok_or_else(|| {
        Error::DegenerateInput(format!(
            "{} holds no fit: {}",
            fit_path.display(),
            fit_report.error.unwrap_or_default()
        ))
    })?;
    let prediction = match prediction_path {
        Some(p) => serde_json::from_str(&read(p)?)?,
        None => predict(config)?,
    };
    let mut report = compare(config, &fit, &prediction)?;
    report.manifest_sha256 = manifest.hash();
    ensure_dir(out_dir)?;
    write_json(&out_dir.join("compare.json"), &report)?;
    manifest.write(out_dir, started)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationEntry {
    pub path: String,
    pub ok: bool,
    pub events: usize,
    pub duration_s: f64,
    pub error: Option<String>,
}

/// Parses and validates each record file.
pub fn cmd_records_validate(paths: &[PathBuf]) -> Vec<ValidationEntry> {
    paths
        .iter()
        .map(|p| match read_record(p) {
            Ok(r) => ValidationEntry {
                path: p.display().to_string(),
                ok: true,
                events: r.len(),
                duration_s: r.duration(),
                error: None,
            },
            Err(e) => ValidationEntry {
                path: p.display().to_string(),
                ok: false,
                events: 0,
                duration_s: 0.0,
                error: Some(e.to_string()),
            },
        })
        .collect()
}

/// Merges record files with per-input time offsets (nanoseconds; missing
/// offsets are zero) into `output`.
pub fn cmd_records_merge(inputs: &[PathBuf], offsets_ns: &[f64], output: &Path) -> Result<DetectionRecord> {
    let files = expand_inputs(inputs)?;
    if offsets_ns.len() > files.len() {
        return Err(Error::Config("more offsets than inputs".into()));
    }
    let records = files.iter().map(read_record).collect::<Result<Vec<_>>>()?;
    let mut offsets: Vec<u64> = offsets_ns.iter().map(|o| ps(o * 1e-9)).collect();
    offsets.resize(files.len(), 0);
    let merged = merge_records(&records, &offsets)?;
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    write_record(&merged, output)?;
    Ok(merged)
}

#[derive(Debug, Parser)]
#[command(name = "cavity-beats", version, about = "Conditional ground-state quantum beats in two-mode cavity QED")]
pub struct Cli {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides `simulation.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for the trajectory ensemble.
    #[arg(long, global = true, env = "CAVITY_BEATS_JOBS")]
    pub jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the trajectory ensemble and write record files.
    Simulate(SimulateArgs),
    /// Correlate records, compute the spectrum and fit the beat.
    Analyze(AnalyzeArgs),
    /// Write analytic shift and decoherence predictions.
    Predict,
    /// Compare a fit with the analytic prediction.
    Compare(CompareArgs),
    /// Record file utilities.
    #[command(subcommand)]
    Records(RecordsCommand),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub n_traj: Option<usize>,
    /// Drive photon number `|α|²`.
    #[arg(long)]
    pub drive_photons: Option<f64>,
    /// Enables feedback.
    #[arg(long)]
    pub feedback: bool,
    /// Delay after detection plus latency, ns (enables feedback).
    #[arg(long)]
    pub fb_delay: Option<f64>,
    /// Attenuation window, μs (enables feedback).
    #[arg(long)]
    pub fb_window: Option<f64>,
    /// Drive multiplier inside the window (enables feedback).
    #[arg(long)]
    pub fb_atten: Option<f64>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Record files or directories; defaults to `<out>/records`.
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub bin_ns: Option<f64>,
    #[arg(long)]
    pub tau_max_us: Option<f64>,
    /// Channel set: `H`, `side` or comma-separated names.
    #[arg(long)]
    pub start_channel: Option<String>,
    #[arg(long)]
    pub stop_channel: Option<String>,
    /// `none`, `jump-count:N[,window_us]` or `time:window_ns,skip_us`.
    #[arg(long)]
    pub filter: Option<String>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Defaults to `<out>/fit.json`.
    #[arg(long)]
    pub fit: Option<PathBuf>,
    /// Computed from the configuration when omitted.
    #[arg(long)]
    pub prediction: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum RecordsCommand {
    /// Parse and validate record files.
    Validate { paths: Vec<PathBuf> },
    /// Merge record files into one.
    Merge {
        inputs: Vec<PathBuf>,
        /// Output file (`.bin` for binary, otherwise text).
        #[arg(long)]
        output: PathBuf,
        /// Comma-separated per-input offsets, ns.
        #[arg(long, value_delimiter = ',')]
        offsets_ns: Vec<f64>,
    },
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::IntegrationStep { .. } | Error::Numerical { .. } | Error::FitNonConvergence { .. } => 3,
        _ => 2,
    }
}

fn error_json(e: &Error) -> String {
    serde_json::json!({ "status": "error", "kind": e.kind(), "message": e.to_string() }).to_string()
}

/// Effective configuration: file (or defaults) with flag overrides.
pub fn effective_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.simulation.seed = s;
    }
    match &cli.command {
        Command::Simulate(a) => {
            if let Some(n) = a.n_traj {
                cfg.simulation.n_traj = n;
            }
            if let Some(n) = a.drive_photons {
                cfg.physics.drive_photons = Some(n);
            }
            let fb = &mut cfg.feedback;
            fb.enabled |= a.feedback || a.fb_delay.is_some() || a.fb_window.is_some() || a.fb_atten.is_some();
            if let Some(v) = a.fb_delay {
                fb.delay_ns = v;
            }
            if let Some(v) = a.fb_window {
                fb.window_us = v;
            }
            if let Some(v) = a.fb_atten {
                fb.attenuation = v;
            }
        }
        Command::Analyze(a) => {
            let an = &mut cfg.analysis;
            if let Some(v) = a.bin_ns {
                an.bin_ns = v;
            }
            if let Some(v) = a.tau_max_us {
                an.tau_max_us = v;
            }
            if let Some(v) = &a.start_channel {
                an.start_channels = v.clone();
            }
            if let Some(v) = &a.stop_channel {
                an.stop_channels = v.clone();
            }
            if let Some(v) = &a.filter {
                an.filter = v.clone();
            }
        }
        _ => {}
    }
    Ok(cfg)
}

fn dispatch(cli: &Cli) -> Result<i32> {
    let cfg = effective_config(cli)?;
    let out = &cli.out;
    let summary = match &cli.command {
        Command::Simulate(_) => {
            let jobs = cli.jobs.unwrap_or_else(default_jobs);
            serde_json::to_value(cmd_simulate(&cfg, out, jobs)?)?
        }
        Command::Analyze(a) => {
            let inputs = if a.inputs.is_empty() { vec![out.join("records")] } else { a.inputs.clone() };
            let r = cmd_analyze(&cfg, &inputs, out)?;
            let fit = r.fit;
            serde_json::json!({
                "status": "ok",
                "manifest_sha256": r.manifest_sha256,
                "n_starts": r.correlation.n_starts,
                "freq_hz": to_hz(fit.freq),
                "decay": fit.decay,
                "spectrum_peak_hz": r.spectrum.peak_hz,
            })
        }
        Command::Predict => serde_json::to_value(cmd_predict(&cfg, out)?)?,
        Command::Compare(a) => {
            let fit = a.fit.clone().unwrap_or_else(|| out.join("fit.json"));
            let r = cmd_compare(&cfg, &fit, a.prediction.as_deref(), out)?;
            println!("{}", serde_json::to_string_pretty(&r)?);
            return Ok(if r.pass { 0 } else { 1 });
        }
        Command::Records(RecordsCommand::Validate { paths }) => {
            let entries = cmd_records_validate(&expand_inputs(paths)?);
            println!("{}", serde_json::to_string_pretty(&entries)?);
            return Ok(if entries.iter().all(|e| e.ok) { 0 } else { 1 });
        }
        Command::Records(RecordsCommand::Merge {
            inputs,
            output,
            offsets_ns,
        }) => {
            let m = cmd_records_merge(inputs, offsets_ns, output)?;
            serde_json::json!({ "status": "ok", "output": output.display().to_string(), "events": m.len(), "duration_s": m.duration() })
        }
    };
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(0)
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code. Errors are printed to stderr as JSON.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            exit_code(&e)
        }
    }
}
