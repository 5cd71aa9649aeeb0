//! Closed-form shifts, rates and conditional states for a drive sweep.

use cavity_beats::analytic::{beat_frequency, n_jump_state, poisson_coherence, shift_report, Pair};
use cavity_beats::{steady_alpha, to_hz, PhysicalParams};
use num_complex::Complex64;

pub fn run_example() -> cavity_beats::Result<()> {
    println!("{:>6} {:>12} {:>12} {:>12} {:>12} {:>14}", "|a|^2", "D_AC/2pi", "Gamma", "D_light/2pi", "G_decoh", "beat/2pi (Hz)");
    for n in [0.0, 0.2, 0.375, 0.55] {
        let p = PhysicalParams::default().with_drive_photons(n);
        let r = shift_report(&p, steady_alpha(&p))?;
        println!(
            "{n:>6} {:>12.1} {:>12.4e} {:>12.1} {:>12.4e} {:>14.1}",
            to_hz(r.delta_ac),
            r.gamma_jump,
            to_hz(r.delta_light),
            r.gamma_decoh,
            to_hz(beat_frequency(&p, &r, Pair::PlusMinus))
        );
    }

    // Phase kicks accumulate with each Rayleigh jump.
    let p = PhysicalParams::default();
    let (c0, c1) = (Complex64::new(1.0, 0.0), Complex64::new(0.3, 0.0));
    for n in [0, 1, 5, 20] {
        let s = n_jump_state(c0, c1, n, 0.0, &p)?;
        println!("n = {n:>2}: pair phase {:+.4} rad, |g0|^2 = {:.4}", s.pair_phase(), s.amplitudes[1].norm_sqr());
    }

    let z = poisson_coherence(5e-6, &p, steady_alpha(&p), Pair::PlusMinus)?;
    println!("Poisson-averaged (g+, g-) factor after 5 us: |z| = {:.4}, arg z = {:.4}", z.norm(), z.arg());
    Ok(())
}

#[allow(dead_code)]
fn main() -> cavity_beats::Result<()> {
    run_example()
}
