//! Simulates a weak-drive ensemble, correlates H detections, and compares
//! the FFT peak and fitted beat with the analytic prediction.

use cavity_beats::analytic::{beat_frequency, poisson_rates, shift_report, Pair};
use cavity_beats::correlation::{fft_spectrum, fit_damped_cosine, CorrelationOptions, FitOptions, G2Accumulator};
use cavity_beats::records::ps;
use cavity_beats::trajectory::{map_ensemble, Engine, TrajectoryConfig};
use cavity_beats::{steady_alpha, to_hz, PhysicalParams};

pub fn run_example() -> cavity_beats::Result<()> {
    let params = PhysicalParams::default().with_drive_photons(0.2);
    let config = TrajectoryConfig {
        duration: 200e-6,
        warmup: 2e-6,
        seed: 3,
        ..Default::default()
    };
    let engine = Engine::new(&config, &params)?;
    let opts = CorrelationOptions::h_autocorrelation(10_000, ps(8e-6));
    let parts = map_ensemble(&engine, 32, 1, |_, r| {
        let mut acc = G2Accumulator::new(opts.clone()).expect("valid options");
        acc.add_record(&r);
        acc
    })?;
    let mut acc = G2Accumulator::new(opts)?;
    for p in &parts {
        acc.merge(p);
    }
    let corr = acc.finish()?;
    println!("{} starts; g2(0) = {:.3}", corr.n_starts, corr.g2[0]);

    let spectrum = fft_spectrum(&corr)?;
    let fit = fit_damped_cosine(&corr, None, &FitOptions { t_min: 0.2e-6, ..Default::default() })?;
    let report = shift_report(&params, steady_alpha(&params))?;
    let predicted = beat_frequency(&params, &report, Pair::PlusMinus);
    let decay = poisson_rates(&params, steady_alpha(&params), Pair::PlusMinus)?.1;
    println!("FFT peak      {:.4e} Hz (± {:.1e})", spectrum.peak_hz, spectrum.peak_interp_error_hz);
    println!("fitted beat   {:.4e} Hz ± {:.1e}", to_hz(fit.freq), to_hz(fit.sigma(1)));
    println!("predicted     {:.4e} Hz", to_hz(predicted));
    println!("fitted decay  {:.3e} /s, Poisson prediction {decay:.3e} /s", fit.decay);
    Ok(())
}

#[allow(dead_code)]
fn main() -> cavity_beats::Result<()> {
    run_example()
}
