//! Simulator and analysis checks against independent expectations.

use cavity_beats::analytic::BeatParams;
use cavity_beats::correlation::{
    fft_spectrum, fit_damped_cosine, spectrum_of, CorrelationOptions, CorrelationResult, FitOptions,
    G2Accumulator,
};
use cavity_beats::model::Frame;
use cavity_beats::records::{ps, Channel, DetectionRecord};
use cavity_beats::trajectory::{default_jobs, map_ensemble, AtomModel, Engine, TrajectoryConfig};
use cavity_beats::PhysicalParams;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const H: [Channel; 2] = [Channel::HDetA, Channel::HDetB];

fn ensemble(cfg: &TrajectoryConfig, p: &PhysicalParams, n: usize) -> Vec<DetectionRecord> {
    let engine = Engine::new(cfg, p).unwrap();
    map_ensemble(&engine, n, default_jobs(), |_, r| r).unwrap()
}

/// Rate and its Poisson standard error over a set of records.
fn rate(records: &[DetectionRecord], channels: &[Channel]) -> (f64, f64) {
    let n: usize = records.iter().map(|r| channels.iter().map(|&c| r.count(c)).sum::<usize>()).sum();
    let t: f64 = records.iter().map(|r| r.duration()).sum();
    (n as f64 / t, (n as f64).sqrt() / t)
}

fn consistent(a: (f64, f64), b: (f64, f64), sigmas: f64) -> bool {
    (a.0 - b.0).abs() <= sigmas * a.1.hypot(b.1)
}

fn waiting_times(records: &[DetectionRecord]) -> Vec<f64> {
    records
        .iter()
        .flat_map(|r| {
            let t = r.times(&H);
            t.windows(2).map(|w| (w[1] - w[0]) as f64).collect::<Vec<_>>()
        })
        .collect()
}

/// Two-sample Kolmogorov-Smirnov statistic.
fn ks_statistic(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

#[test]
fn lab_and_displaced_frames_agree() {
    let p = PhysicalParams::default().with_drive_photons(0.2);
    let base = TrajectoryConfig {
        duration: 20e-6,
        warmup: 1e-6,
        seed: 21,
        ..Default::default()
    };
    let displaced = ensemble(&base, &p, 150);
    let lab_cfg = TrajectoryConfig {
        frame: Frame::Lab,
        n_max_v: 4,
        seed: 22,
        ..base
    };
    let lab = ensemble(&lab_cfg, &p, 150);
    for ch in [&H[..], &[Channel::SidePi]] {
        let (a, b) = (rate(&displaced, ch), rate(&lab, ch));
        assert!(consistent(a, b, 4.0), "{ch:?}: displaced {a:?} vs lab {b:?}");
    }
    let (wa, wb) = (waiting_times(&displaced), waiting_times(&lab));
    let (n, m) = (wa.len() as f64, wb.len() as f64);
    assert!(n > 50.0 && m > 50.0);
    let d = ks_statistic(wa, wb);
    // Critical value at the 0.1% level.
    let crit = 1.95 * ((n + m) / (n * m)).sqrt();
    assert!(d < crit, "KS statistic {d} exceeds {crit}");
}

#[test]
fn truncation_is_converged() {
    let p = PhysicalParams::default().with_drive_photons(0.55);
    let cfg = TrajectoryConfig {
        duration: 20e-6,
        warmup: 1e-6,
        seed: 23,
        ..Default::default()
    };
    let small = ensemble(&cfg, &p, 100);
    let big = ensemble(&TrajectoryConfig { n_max_h: 3, n_max_v: 3, seed: 24, ..cfg }, &p, 100);
    for ch in [&H[..], &[Channel::SidePi]] {
        let (a, b) = (rate(&small, ch), rate(&big, ch));
        assert!(consistent(a, b, 4.0), "{ch:?}: {a:?} vs {b:?}");
    }
}

#[test]
fn empty_cavity_transmits_the_drive() {
    let p = PhysicalParams::default().with_drive_photons(0.55);
    let cfg = TrajectoryConfig {
        duration: 20e-6,
        seed: 25,
        atom_model: AtomModel::Transit { mean_transit: 1e-6, arrival_rate: 0.0 },
        ..Default::default()
    };
    let recs = ensemble(&cfg, &p, 50);
    let (r, e) = rate(&recs, &[Channel::VOut]);
    let want = 2.0 * p.kappa * p.drive_photons();
    assert!((r - want).abs() <= 4.0 * e, "{r} ± {e} vs {want}");
    assert!(recs.iter().all(|r| r.count(Channel::SidePi) == 0 && r.times(&H).is_empty()));
}

#[test]
fn jump_counts_match_expected_counts() {
    let p = PhysicalParams::default().with_drive_photons(0.55);
    let cfg = TrajectoryConfig {
        duration: 10e-6,
        warmup: 1e-6,
        seed: 26,
        ..Default::default()
    };
    let engine = Engine::new(&cfg, &p).unwrap();
    let mut expected = std::collections::BTreeMap::<String, f64>::new();
    let mut realized = std::collections::BTreeMap::<String, u64>::new();
    for k in 0..100 {
        let (_, stats) = engine.trajectory_with_stats(k).unwrap();
        for (name, x) in stats.expected_counts {
            *expected.entry(name).or_default() += x;
        }
        for (name, n) in stats.jump_counts {
            *realized.entry(name).or_default() += n;
        }
    }
    assert_eq!(expected.len(), realized.len());
    for (name, e) in &expected {
        let n = realized[name] as f64;
        assert!((n - e).abs() <= 4.0 * e.sqrt().max(1.0), "{name}: {n} vs {e}");
    }
}

#[test]
fn no_zeeman_splitting_gives_no_beat() {
    let mut p = PhysicalParams::default().with_drive_photons(0.2);
    let beat = 2.0 * p.delta_g;
    p.delta_g = 0.0;
    p.delta_e = 0.0;
    let cfg = TrajectoryConfig {
        duration: 100e-6,
        warmup: 2e-6,
        seed: 27,
        ..Default::default()
    };
    let recs = ensemble(&cfg, &p, 200);
    let mut acc = G2Accumulator::new(CorrelationOptions::h_autocorrelation(10_000, ps(10e-6))).unwrap();
    for r in &recs {
        acc.add_record(r);
    }
    let c = acc.finish().unwrap();
    // Fourier components of g2 - 1 at the beat frequency and their errors.
    let (mut re, mut im, mut var) = (0.0, 0.0, 0.0);
    for ((t, g), s) in c.centers().iter().zip(&c.g2).zip(&c.stderr) {
        if *t < 0.2e-6 || !s.is_finite() {
            continue;
        }
        re += (g - 1.0) * (beat * t).cos();
        im += (g - 1.0) * (beat * t).sin();
        var += s * s / 2.0;
    }
    let amp = re.hypot(im);
    assert!(amp <= 4.0 * var.sqrt(), "component {amp} vs sigma {}", var.sqrt());
}

fn synthetic(truth: BeatParams, n: usize, noise: f64, seed: u64) -> CorrelationResult {
    let w = 10e-9;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, noise).unwrap();
    CorrelationResult {
        tau_bins: (0..=n).map(|k| k as f64 * w).collect(),
        counts: vec![0; n],
        g2: (0..n).map(|k| truth.eval((k as f64 + 0.5) * w) + normal.sample(&mut rng)).collect(),
        stderr: vec![noise.max(1e-12); n],
        n_starts: 1,
        exposure: vec![1.0; n],
        stop_rate: 1.0,
    }
}

#[test]
fn fit_uncertainty_is_calibrated() {
    let truth = BeatParams {
        amplitude: 0.3,
        freq: 1.28e7,
        phase: 0.4,
        decay: 2.5e5,
        offset: 1.0,
    };
    let opts = FitOptions { t_min: 0.2e-6, ..Default::default() };
    let pulls: Vec<f64> = (0..100)
        .map(|s| {
            let f = fit_damped_cosine(&synthetic(truth, 800, 0.01, s), None, &opts).unwrap();
            (f.freq - truth.freq) / f.sigma(1)
        })
        .collect();
    let inside = pulls.iter().filter(|p| p.abs() <= 3.0).count();
    assert!(inside >= 95, "{inside}/100 within 3 sigma");
    let rms = (pulls.iter().map(|p| p * p).sum::<f64>() / pulls.len() as f64).sqrt();
    assert!((0.7..1.3).contains(&rms), "pull rms {rms}");
}

#[test]
fn spectrum_peak_and_width() {
    let w = 10e-9;
    let n = 20_000;
    let tau: Vec<f64> = (0..=n).map(|k| k as f64 * w).collect();
    let f0 = 2.03e6;
    let cosine: Vec<f64> = (0..n).map(|k| (std::f64::consts::TAU * f0 * k as f64 * w).cos()).collect();
    let s = spectrum_of(&tau, &cosine).unwrap();
    let df = s.freq_hz[1] - s.freq_hz[0];
    assert!((s.peak_hz - f0).abs() < df, "{} vs {f0}", s.peak_hz);

    let decay = 3e5;
    let truth = BeatParams { amplitude: 0.5, freq: std::f64::consts::TAU * f0, phase: 0.0, decay, offset: 1.0 };
    let s = fft_spectrum(&synthetic(truth, n, 0.0, 0)).unwrap();
    let want = decay / std::f64::consts::TAU;
    let hw = s.peak_half_width_hz();
    assert!((hw - want).abs() <= 0.2 * want, "half width {hw} vs {want}");
    assert!((s.peak_hz - f0).abs() < df);
}
