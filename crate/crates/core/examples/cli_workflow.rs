//! The simulate, analyze, predict, compare workflow driven from a TOML
//! configuration, as the command-line tool runs it.

use cavity_beats::cli::{cmd_analyze, cmd_compare, cmd_predict, cmd_simulate};
use cavity_beats::config::RunConfig;

const CONFIG: &str = r#"
[physics]
drive_photons = 0.2

[simulation]
n_traj = 16
duration_us = 200.0
warmup_us = 2.0
seed = 1

[analysis]
start_channels = "H"
stop_channels = "H"
tau_max_us = 6.0
fit_t_min_us = 0.2
"#;

pub fn run_example() -> cavity_beats::Result<()> {
    let cfg = RunConfig::from_toml(CONFIG)?;
    let out = std::env::temp_dir().join(format!("cavity-beats-example-{}", std::process::id()));
    let summary = cmd_simulate(&cfg, &out, 1)?;
    println!("simulated {} records, manifest {}", summary.n_traj, &summary.manifest_sha256[..12]);
    let analysis = cmd_analyze(&cfg, &[out.join("records")], &out);
    let prediction = cmd_predict(&cfg, &out)?;
    println!("{}", prediction.to_text());
    match analysis {
        Ok(a) => {
            println!("fitted {:.4e} rad/s from {} starts", a.fit.freq, a.correlation.n_starts);
            let r = cmd_compare(&cfg, &out.join("fit.json"), None, &out)?;
            println!("relative deviation {:.3} (pass: {})", r.freq_rel_dev, r.pass);
        }
        Err(e) => println!("fit failed: {e}"),
    }
    println!("outputs in {}", out.display());
    let _ = std::fs::remove_dir_all(&out);
    Ok(())
}

#[allow(dead_code)]
fn main() -> cavity_beats::Result<()> {
    run_example()
}
