use std::path::Path;
use std::process::{Command, Output};

use cavity_beats::cli::predict;
use cavity_beats::config::RunConfig;
use cavity_beats::records::{read_record, write_record, Channel, DetectionRecord, JumpEvent};

fn bin(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cavity-beats"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn json(path: impl AsRef<Path>) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn zero_drive_predicts_no_shifts() {
    let mut cfg = RunConfig::default();
    cfg.physics.drive_photons = Some(0.0);
    let p = predict(&cfg).unwrap();
    let r = p.report;
    for x in [r.delta_ac, r.gamma_jump, r.delta_jump, r.delta_light, r.gamma_decoh] {
        assert_eq!(x, 0.0);
    }
    let delta_g = cfg.params().unwrap().delta_g;
    assert_eq!(p.components[0].beat_freq, 2.0 * delta_g);
    assert_eq!(p.components[0].poisson_decay, 0.0);
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[physics]\ng_mhz = 1.5\n").unwrap();
    let o = bin(&["--config", cfg.to_str().unwrap(), "predict"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["status"], "error");
    assert_eq!(err["kind"], "config");
}

#[test]
fn predict_writes_text_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin(&["predict"], dir.path());
    assert!(o.status.success());
    let text = std::fs::read_to_string(dir.path().join("prediction.txt")).unwrap();
    assert!(text.lines().any(|l| l.starts_with("delta_light")));
    let p = json(dir.path().join("prediction.json"));
    assert!(p["manifest_sha256"].as_str().unwrap().len() == 64);
    assert!(dir.path().join("manifest_predict.json").exists());
}

#[test]
fn records_validate_and_merge() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = DetectionRecord::new(5_000_000, true);
    r.events = vec![JumpEvent::new(1_000, Channel::HDetA), JumpEvent::new(2_000_000, Channel::SidePi)];
    let a = dir.path().join("a.bin");
    let b = dir.path().join("b.txt");
    write_record(&r, &a).unwrap();
    write_record(&r, &b).unwrap();
    let merged = dir.path().join("m.bin");
    let o = bin(
        &["records", "merge", a.to_str().unwrap(), b.to_str().unwrap(), "--output", merged.to_str().unwrap(), "--offsets-ns", "0,100"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = read_record(&merged).unwrap();
    assert_eq!(m.len(), 4);
    assert_eq!(m.events[1].t_ps, 101_000);

    let o = bin(&["records", "validate", dir.path().to_str().unwrap()], dir.path());
    assert!(o.status.success());
    std::fs::write(dir.path().join("broken.txt"), "not a record\n").unwrap();
    let o = bin(&["records", "validate", dir.path().to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn simulate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[simulation]\nn_traj = 4\nduration_us = 10.0\nseed = 3\n").unwrap();
    let run = |sub: &str, jobs: &str| {
        let out = dir.path().join(sub);
        let o = bin(&["--config", cfg.to_str().unwrap(), "--jobs", jobs, "simulate"], &out);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        (0..4)
            .map(|k| std::fs::read(out.join(format!("records/traj_{k:06}.bin"))).unwrap())
            .collect::<Vec<_>>()
    };
    assert_eq!(run("a", "1"), run("b", "2"));
}

#[test]
fn weak_drive_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "[physics]\ndrive_photons = 0.2\n\n\
         [simulation]\nn_traj = 64\nduration_us = 1000.0\nwarmup_us = 2.0\nseed = 7\n\n\
         [analysis]\nstart_channels = \"H\"\nstop_channels = \"H\"\ntau_max_us = 6.0\nfit_t_min_us = 0.2\n",
    )
    .unwrap();
    let c = cfg.to_str().unwrap();
    for cmd in [&["simulate"][..], &["analyze"], &["predict"]] {
        let mut args = vec!["--config", c];
        args.extend_from_slice(cmd);
        let o = bin(&args, dir.path());
        assert!(o.status.success(), "{cmd:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let o = bin(&["--config", c, "compare", "--prediction", dir.path().join("prediction.json").to_str().unwrap()], dir.path());
    let report = json(dir.path().join("compare.json"));
    assert_eq!(o.status.code(), Some(0), "{report}");
    assert!(report["freq_rel_dev"].as_f64().unwrap() <= 0.10);
    let g2 = std::fs::read_to_string(dir.path().join("g2.csv")).unwrap();
    let fit = json(dir.path().join("fit.json"));
    assert!(g2.starts_with(&format!("# manifest_sha256={}", fit["manifest_sha256"].as_str().unwrap())));
}
