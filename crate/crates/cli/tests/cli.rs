//! Black-box tests of the `nmor` binary: exit codes, machine-readable
//! errors, and the run/preset/sweep surfaces.

use std::path::Path;
use std::process::{Command, Output};

fn nmor(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nmor"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

const TINY_CONFIG: &str = r#"
id = "cli_tiny"
seed = 99

[medium]
kind = "single_lambda"
ground_decoherence_hz = 250.0
susceptibility_scale = 1e7

[probe]
rabi_plus_hz = 5e5
detuning_hz = -5e9

[waveform]
kind = "square"
amplitude_nt = 100.0
frequency_or_rate_hz = 40.0
duration_seconds = 0.025
sample_rate_hz = 4000.0

[noise]
white_psd_v2_per_hz = 1e-11
scope_noise_rms_volts = 1e-3

[instrument]
path = "scope"
n_scans = 4

[dynamics]
mode = "quasi_static"
"#;

#[test]
fn run_executes_a_config_and_writes_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("tiny.toml"), TINY_CONFIG).unwrap();
    let out = nmor(&["run", "tiny.toml", "--out-dir", "out"], tmp.path());
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(tmp.path().join("out/manifest.json").exists());
    assert!(tmp.path().join("out/trace_single.csv").exists());
    assert!(tmp.path().join("out/waveform.csv").exists());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("manifest.json"));
}

#[test]
fn run_accepts_a_manifest_for_byte_identical_reruns() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("tiny.toml"), TINY_CONFIG).unwrap();
    let first = nmor(&["run", "tiny.toml", "--out-dir", "a"], tmp.path());
    assert!(first.status.success());
    let second = nmor(&["run", "a/manifest.json", "--out-dir", "b"], tmp.path());
    assert!(
        second.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&second.stderr)
    );
    let a = std::fs::read(tmp.path().join("a/trace_single.csv")).unwrap();
    let b = std::fs::read(tmp.path().join("b/trace_single.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn validation_failure_exits_2_with_json_error() {
    let tmp = tempfile::tempdir().unwrap();
    let broken = TINY_CONFIG.replace("seed = 99", "");
    std::fs::write(tmp.path().join("broken.toml"), broken).unwrap();
    let out = nmor(&["run", "broken.toml"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let err: serde_json::Value =
        serde_json::from_str(String::from_utf8_lossy(&out.stderr).trim()).unwrap();
    assert_eq!(err["error"]["kind"], "validation");
    assert_eq!(err["error"]["path"], "seed");
}

#[test]
fn missing_file_exits_nonzero_with_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = nmor(&["run", "nope.toml"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    let err: serde_json::Value =
        serde_json::from_str(String::from_utf8_lossy(&out.stderr).trim()).unwrap();
    assert_eq!(err["error"]["kind"], "io");
}

#[test]
fn preset_emit_config_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let out = nmor(&["preset", "s3", "--emit-config"], tmp.path());
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("id = \"s3\""));
    // the emitted config is itself runnable
    std::fs::write(tmp.path().join("s3.toml"), &text).unwrap();
    let rerun = nmor(&["run", "s3.toml", "--out-dir", "s3_out"], tmp.path());
    assert!(
        rerun.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&rerun.stderr)
    );
    assert!(tmp.path().join("s3_out/linewidths.csv").exists());
}

#[test]
fn unknown_preset_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = nmor(&["preset", "fig9"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let err: serde_json::Value =
        serde_json::from_str(String::from_utf8_lossy(&out.stderr).trim()).unwrap();
    assert!(err["error"]["message"]
        .as_str()
        .unwrap()
        .contains("unknown preset"));
}

#[test]
fn sweep_runs_each_value_into_its_own_directory() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("tiny.toml"), TINY_CONFIG).unwrap();
    let out = nmor(
        &[
            "sweep",
            "tiny.toml",
            "--param",
            "waveform.amplitude_nt",
            "--values",
            "50,100,200",
            "--out-dir",
            "sweep_out",
        ],
        tmp.path(),
    );
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    for idx in 0..3 {
        let manifest = tmp
            .path()
            .join(format!("sweep_out/point_{idx:03}/manifest.json"));
        assert!(manifest.exists());
    }
    let index = std::fs::read_to_string(tmp.path().join("sweep_out/sweep_index.csv")).unwrap();
    assert!(index.starts_with("value,out_dir"));
    assert_eq!(index.lines().count(), 4);

    // the patched value landed in the manifest
    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(tmp.path().join("sweep_out/point_002/manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["scenario"]["waveform"]["amplitude_nt"], 200.0);
}

#[test]
fn sweep_rejects_unknown_param_path() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("tiny.toml"), TINY_CONFIG).unwrap();
    let out = nmor(
        &[
            "sweep",
            "tiny.toml",
            "--param",
            "waveform.bogus_knob",
            "--values",
            "1",
        ],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    let err: serde_json::Value =
        serde_json::from_str(String::from_utf8_lossy(&out.stderr).trim()).unwrap();
    assert_eq!(err["error"]["path"], "waveform.bogus_knob");
}

#[test]
fn format_flag_switches_artifacts_to_jsonl() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("tiny.toml"), TINY_CONFIG).unwrap();
    let out = nmor(
        &["run", "tiny.toml", "--out-dir", "j", "--format", "jsonl"],
        tmp.path(),
    );
    assert!(out.status.success());
    assert!(tmp.path().join("j/trace_single.jsonl").exists());
    assert!(!tmp.path().join("j/trace_single.csv").exists());
}
