//! Overlays single-atom transits into a multi-atom record and applies the
//! close-pair time filter.

use cavity_beats::correlation::{g2_estimate, time_filter, CorrelationOptions};
use cavity_beats::records::{ps, synthesize_multi_atom, Channel};
use cavity_beats::trajectory::{map_ensemble, AtomModel, Engine, TrajectoryConfig};
use cavity_beats::PhysicalParams;

pub fn run_example() -> cavity_beats::Result<()> {
    let params = PhysicalParams::default().with_drive_photons(0.55);
    let mean_transit = 10e-6;
    let arrival_rate = 1.5 / mean_transit;
    let config = TrajectoryConfig {
        duration: mean_transit,
        seed: 8,
        atom_model: AtomModel::Transit { mean_transit, arrival_rate },
        ..Default::default()
    };
    let engine = Engine::new(&config, &params)?;
    let h = [Channel::HDetA, Channel::HDetB];
    let pool = map_ensemble(&engine, 50, 1, |_, r| r.select(&h))?;
    let multi = synthesize_multi_atom(&pool, arrival_rate, mean_transit, ps(20e-3), 1)?;
    println!("{} atoms, N_eff = {}, {} H events", multi.n_atoms, multi.mean_atom_number, multi.record.len());

    let opts = CorrelationOptions::h_autocorrelation(20_000, ps(1e-6));
    let filtered = time_filter(&multi.record, ps(100e-9), ps(5e-6));
    for (name, r) in [("raw", &multi.record), ("filtered", &filtered)] {
        let c = g2_estimate(r, &opts)?;
        let (g0, err) = c.mean_over(0.0, 40e-9);
        println!("{name:>8}: {} events, g2(0) = {g0:.3} ± {err:.3}", r.len());
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> cavity_beats::Result<()> {
    run_example()
}
