//! Runs a small seeded trajectory ensemble and compares realized jump counts
//! with the integrated channel intensities.

use cavity_beats::records::Channel;
use cavity_beats::trajectory::{run_ensemble, Engine, TrajectoryConfig};
use cavity_beats::PhysicalParams;

pub fn run_example() -> cavity_beats::Result<()> {
    let params = PhysicalParams::default().with_drive_photons(0.2);
    let config = TrajectoryConfig {
        duration: 20e-6,
        warmup: 1e-6,
        seed: 42,
        ..Default::default()
    };
    let ens = run_ensemble(&config, &params, 8, 2)?;
    for (name, n) in &ens.metadata.channel_counts {
        println!("{name:>16}: {n}");
    }
    let h: usize = ens.records.iter().map(|r| r.count(Channel::HDetA) + r.count(Channel::HDetB)).sum();
    println!("H detection rate {:.3e} /s", h as f64 / (8.0 * config.duration));

    let engine = Engine::new(&config, &params)?;
    let (record, stats) = engine.trajectory_with_stats(0)?;
    assert_eq!(record.events, ens.records[0].events);
    for ((name, expected), (_, got)) in stats.expected_counts.iter().zip(&stats.jump_counts) {
        println!("{name:>16}: expected {expected:8.2}, realized {got}");
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> cavity_beats::Result<()> {
    run_example()
}
