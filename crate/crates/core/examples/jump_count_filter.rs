//! Post-selects correlation segments by the number of side emissions that
//! follow each start detection.

use cavity_beats::correlation::{filter_by_jump_count, g2_over_segments, CorrelationOptions};
use cavity_beats::records::{ps, Channel};
use cavity_beats::trajectory::{map_ensemble, Engine, TrajectoryConfig};
use cavity_beats::PhysicalParams;

pub fn run_example() -> cavity_beats::Result<()> {
    let params = PhysicalParams::default().with_drive_photons(0.55);
    let config = TrajectoryConfig {
        duration: 50e-6,
        warmup: 2e-6,
        seed: 7,
        ..Default::default()
    };
    let engine = Engine::new(&config, &params)?;
    let records = map_ensemble(&engine, 8, 1, |_, r| r)?;
    let window = ps(300.0 / params.gamma);
    let h = [Channel::HDetA, Channel::HDetB];
    let opts = CorrelationOptions::h_autocorrelation(20_000, window / 20_000 * 20_000);
    for max in [None, Some(20), Some(13)] {
        let segments = filter_by_jump_count(&records, &h, max, window)?;
        match g2_over_segments(&segments, &opts) {
            Ok(c) => println!("max {max:?}: {} segments, mean g2 over 0.2-2 us {:.3}", segments.len(), c.mean_over(0.2e-6, 2e-6).0),
            Err(e) => println!("max {max:?}: {} segments ({e})", segments.len()),
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> cavity_beats::Result<()> {
    run_example()
}
