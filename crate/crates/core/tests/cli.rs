use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use chirp_excitation::config::{preset, Preset};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_chirp-excite"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn data_rows(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().filter(|l| !l.starts_with('#')).map(str::to_owned).collect()
}

#[test]
fn simulate_output_independent_of_thread_count() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for (dir, threads) in [(&a, "1"), (&b, "8")] {
        let o = run(&["simulate", "--preset", "fig5", "--threads", threads, "--out", dir.path().to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for name in ["fig5_profile.txt", "fig5_profile_corrected.txt"] {
        let x = fs::read(a.path().join(name)).unwrap();
        let y = fs::read(b.path().join(name)).unwrap();
        assert!(x == y, "{name} differs between 1 and 8 threads");
    }
    let rows = data_rows(&a.path().join("fig5_profile.txt"));
    assert_eq!(rows.len(), 51);
    assert_eq!(rows[0].split(", ").count(), 6);
    assert!(rows[25].starts_with("0, "), "grid center row: {}", rows[25]);
}

#[test]
fn output_header_carries_reproduction_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["simulate", "--preset", "fig5", "--grid-step-hz", "30000", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("fig5_profile_corrected.txt")).unwrap();
    let mut cfg = preset(Preset::Fig5);
    cfg.grid.step_hz = 30000.0;
    assert!(text.contains(&format!("# config_hash: {}", cfg.hash())));
    assert!(text.contains(&format!("# config: {}", cfg.to_json())));
    assert!(text.contains("# version: "));
    assert!(text.contains("# dt_s: "));
    assert!(text.contains("# zero_order_phase_rad: "));
    assert!(!text.contains("wall"));
    assert_eq!(data_rows(&dir.path().join("fig5_profile.txt")).len(), 11);
}

#[test]
fn config_file_with_band_above_sweep_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = preset(Preset::Fig4b);
    cfg.band_hz = 200e3;
    let path = dir.path().join("bad.json");
    fs::write(&path, serde_json::to_string(&cfg).unwrap()).unwrap();
    let o = run(&["simulate", "--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("must be below sweep half-width"), "{}", stderr(&o));
}

#[test]
fn config_errors_exit_one_and_io_errors_exit_three() {
    assert_eq!(run(&["simulate", "--preset", "fig9"]).status.code(), Some(1));
    assert_eq!(run(&["simulate", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(run(&["simulate", "--preset", "fig5", "--taper", "0.7"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.json");
    assert_eq!(run(&["simulate", "--config", missing.to_str().unwrap()]).status.code(), Some(3));
    let blocker = dir.path().join("file");
    fs::write(&blocker, "").unwrap();
    let o = run(&["waveform", "--preset", "fig5", "--out", blocker.join("sub").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn predict_marks_out_of_range_delays() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = run(&["predict", "--preset", "fig4b", "--delta", "0.001", "--delta", "0.5", "--out", out]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = data_rows(&dir.path().join("fig4b_predictions.txt"));
    assert_eq!(rows.len(), 2);
    assert!(rows[0].ends_with(", ok"));
    assert!(rows[1].ends_with("nan, out_of_range"));
    assert_eq!(rows[0].split(", ").count(), 8);

    let o = run(&["predict", "--preset", "fig4a", "--points", "7", "--out", out]);
    assert!(o.status.success());
    assert_eq!(data_rows(&dir.path().join("fig4a_predictions.txt")).len(), 7);
}

#[test]
fn waveform_export_matches_segment_layout() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["waveform", "--preset", "fig5", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let path = dir.path().join("fig5_waveform.txt");
    let text = fs::read_to_string(&path).unwrap();
    let bounds: Vec<usize> = text
        .lines()
        .find_map(|l| l.strip_prefix("# segment_boundaries: "))
        .unwrap()
        .split(',')
        .map(|s| s.parse().unwrap())
        .collect();
    assert_eq!(bounds.len(), 5);
    let rows = data_rows(&path);
    assert_eq!(rows.len(), *bounds.last().unwrap());
    // The delay segment is silent.
    let delay_row: Vec<f64> = rows[bounds[2] + 1].split(", ").map(|s| s.parse().unwrap()).collect();
    assert_eq!(delay_row[1], 0.0);
    assert!(text.contains("# t_seconds, amplitude_hz, phase_rad"));
}

#[test]
fn custom_config_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("custom.json");
    fs::write(
        &path,
        r#"{"label":"single_pi","sequence":"custom","amplitude_hz":1000,"pi_amplitude_hz":5000,
            "band_hz":10000,"sweep_hz":60000,"rate_factor":2.7,
            "grid":{"half_width_hz":10000,"step_hz":5000},
            "custom":[{"chirp":{"amplitude_hz":5000,"sweep_hz":60000,"rate":1e8,"role":"invert_pi"}}]}"#,
    )
    .unwrap();
    let o = run(&["simulate", "--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    for row in data_rows(&dir.path().join("single_pi_profile.txt")) {
        let mz: f64 = row.split(", ").nth(3).unwrap().parse().unwrap();
        assert!(mz < -0.98, "row {row}");
    }
}
