//! Gates the drive off for 2.5 us after each H detection and looks at the
//! correlation conditioned on the feedback epochs.

use cavity_beats::correlation::{feedback_epoch_starts, CorrelationOptions, G2Accumulator};
use cavity_beats::records::{ps, Channel};
use cavity_beats::trajectory::{feedback_envelope, map_ensemble, Engine, FeedbackProtocol, TrajectoryConfig};
use cavity_beats::PhysicalParams;

pub fn run_example() -> cavity_beats::Result<()> {
    let protocol = FeedbackProtocol {
        enabled: true,
        window_duration: 2.5e-6,
        attenuation_factor: 0.0,
        ..Default::default()
    };
    for (det, t) in [(0.0, 1e-6), (0.0, 3e-6)] {
        println!("drive multiplier at {t:.1e} s after a click at {det}: {}", feedback_envelope(&protocol, &[det], t));
    }

    let params = PhysicalParams::default().with_drive_photons(0.55);
    let config = TrajectoryConfig {
        duration: 50e-6,
        warmup: 2e-6,
        seed: 5,
        feedback: protocol.clone(),
        ..Default::default()
    };
    let engine = Engine::new(&config, &params)?;
    let records = map_ensemble(&engine, 8, 1, |_, r| r)?;
    let mut acc = G2Accumulator::new(CorrelationOptions::h_autocorrelation(50_000, ps(10e-6)))?;
    let mut epochs = 0;
    for r in &records {
        let starts = feedback_epoch_starts(r, &protocol);
        epochs += starts.len();
        acc.add_record_with_starts(r, &starts);
    }
    let corr = acc.finish()?;
    let (dark, err) = corr.mean_over(0.2e-6, 2.5e-6);
    let (after, err2) = corr.mean_over(3e-6, 10e-6);
    println!("{epochs} epochs; g2 inside window {dark:.3} ± {err:.3}, after {after:.3} ± {err2:.3}");
    let side: usize = records.iter().map(|r| r.count(Channel::SidePi)).sum();
    println!("side-pi emissions: {side}");
    Ok(())
}

#[allow(dead_code)]
fn main() -> cavity_beats::Result<()> {
    run_example()
}
