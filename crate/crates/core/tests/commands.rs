use std::fs;
use std::path::{Path as FsPath, PathBuf};
use std::process::Command;

use mpisac::config::{ExperimentConfig, Overrides};
use mpisac::detector::map::{delay_doppler_map, MapMode};
use mpisac::experiment::{run_optimize, run_rcs_sweep, run_roc, Scenario};
use mpisac::optimizer::{path_energies, update_weights, DesignVariant};
use mpisac::waveform::{compensate_symbols, echo_signal, read_frame_dump};
use num_complex::Complex64;

fn root() -> PathBuf {
    FsPath::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn smoke() -> ExperimentConfig {
    ExperimentConfig::load(&root().join("configs/smoke.toml"), &Overrides::default()).unwrap()
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mpisac"))
}

const ONE_PATH: &str = r#"
[grid]
[scene]
[[scene.path]]
delay_tap = 2
doppler_tap = 5
path_loss = 1.0
[rcs]
echo_snr_db = 0
[comm]
[run]
seed = 4
n_trials = 300
p_fa = [0.2, 1.0]
"#;

#[test]
fn config_errors_carry_positions() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, ONE_PATH.replace("doppler_tap = 5", "doppler_tap = -5")).unwrap();
    let out = bin()
        .args(["roc", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("o"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.toml:6:15:"), "{err}");
    assert!(!dir.path().join("o/manifest.json").exists());
}

#[test]
fn manifest_precedes_and_describes_results() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let status = bin()
        .args(["ddmap", "--config"])
        .arg(root().join("configs/smoke.toml"))
        .arg("--out")
        .arg(&out)
        .args(["--seed", "5"])
        .status()
        .unwrap();
    assert!(status.success());
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "ddmap");
    assert_eq!(m["seed"], 5);
    assert_eq!(m["outputs"], serde_json::json!(["ddmap.csv", "ddmap_frame.bin"]));
    let cfg = ExperimentConfig::load(
        &root().join("configs/smoke.toml"),
        &Overrides {
            seed: Some(5),
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(m["config_hash"], cfg.hash());

    let csv = fs::read_to_string(out.join("ddmap.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("frame,mode,k,r,value,threshold,above"));
    assert_eq!(lines.count(), 2 * 2 * 16 * 16);

    let frames = read_frame_dump(&mut fs::File::open(out.join("ddmap_frame.bin")).unwrap()).unwrap();
    assert_eq!(frames.len(), 2);
    assert_eq!(frames[0].0, 6);
    assert_eq!(frames[0].1.dim(), (16, 16));
}

#[test]
fn trial_flag_and_profile_reach_the_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let status = bin()
        .args(["roc", "--config"])
        .arg(root().join("configs/smoke.toml"))
        .arg("--out")
        .arg(&out)
        .args(["--trials", "700", "--workers", "2"])
        .status()
        .unwrap();
    assert!(status.success());
    let csv = fs::read_to_string(out.join("roc.csv")).unwrap();
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",700")));
    assert!(!bin().args(["roc", "--config", "x", "--profile", "huge"]).status().unwrap().success());
}

#[test]
fn roc_at_unit_false_alarm_detects_everything() {
    let rows = run_roc(&smoke()).unwrap();
    assert_eq!(rows.len(), 15);
    for r in rows.iter().filter(|r| r.p_fa == 1.0) {
        assert_eq!(r.p_d, 1.0);
        assert_eq!(r.threshold, 1.0);
    }
    for r in &rows {
        assert!(r.threshold >= 1.0 && (0.0..=1.0).contains(&r.p_d));
    }
}

#[test]
fn sweep_without_nlos_energy_matches_los_only() {
    let mut cfg = smoke();
    cfg.run.sweep = vec![0.0, 0.25, 0.5, 0.75, 1.0];
    cfg.run.variants = vec![DesignVariant::Joint, DesignVariant::LosOnly];
    cfg.run.n_trials = 2000;
    cfg.run.calibration_trials = 2000;
    let rows = run_rcs_sweep(&cfg).unwrap();
    let (j, l) = (&rows[0], &rows[1]);
    assert!((j.p_d - l.p_d).abs() <= 2.0 * (j.halfwidth + l.halfwidth), "{j:?} {l:?}");
    let los: Vec<f64> = rows.iter().filter(|r| r.variant == DesignVariant::LosOnly).map(|r| r.p_d).collect();
    for w in los.windows(2) {
        assert!(w[1] <= w[0] + 0.02, "{los:?}");
    }
}

#[test]
fn optimize_is_a_fixed_point() {
    let cfg = smoke();
    let run = run_optimize(&cfg).unwrap();
    let trace = &run.solution.objective_trace;
    assert!(trace.windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-12)));
    let scn = Scenario::new(&cfg).unwrap();
    let w = update_weights(&scn.problem, &run.solution.alloc).unwrap();
    for (a, b) in w.as_slice().iter().zip(run.solution.w.as_slice()) {
        assert!((a - b).abs() < 1e-9);
    }
    assert!(path_energies(&scn.problem, &run.solution.alloc).iter().all(|d| *d > 0.0));
}

#[test]
fn one_path_scene_keeps_unit_weight() {
    let cfg = ExperimentConfig::parse(ONE_PATH, "one", FsPath::new("."), &Overrides::default()).unwrap();
    let run = run_optimize(&cfg).unwrap();
    assert_eq!(run.solution.w.as_slice(), &[1.0]);
}

#[test]
fn noiseless_single_path_peaks_at_its_bin() {
    let cfg = ExperimentConfig::parse(ONE_PATH, "one", FsPath::new("."), &Overrides::default()).unwrap();
    let scn = Scenario::new(&cfg).unwrap();
    let y = echo_signal(&scn.channels, &scn.initial, &scn.symbols, &[vec![Complex64::new(1.0, 0.0); 16]]).unwrap();
    let z = compensate_symbols(y.view(), &scn.symbols);
    let all: Vec<usize> = (0..16).collect();
    let noisy = ndarray::Array2::from_shape_fn(z.dim(), |(i, j)| {
        let t = (7 * i + 3 * j) as f64;
        z[[i, j]] + Complex64::new(t.sin(), t.cos()) * 1e-6
    });
    for mode in [
        MapMode::SinglePath,
        MapMode::Combined {
            offsets: vec![(0, 0)],
            weights: mpisac::detector::WeightVector::equal(1),
        },
    ] {
        let map = delay_doppler_map(noisy.view(), &scn.grid, &mode, &all, &all).unwrap();
        let (best, (_, r)) = map.max();
        assert_eq!(r, 5);
        assert_eq!(map.exceedances_at_delay(2, 0.5 * (best + 1.0)), vec![5]);
    }
}
