use std::path::Path;
use std::process::{Command, Output};

use brainfit::io::{self, VoxelGrid};
use brainfit::voxelsel::VoxelSet;

fn brainfit(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_brainfit"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

#[test]
fn unknown_flag_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = brainfit(&["fit", "--manifest", "m.json", "--out", "o", "--bogus"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn unknown_subcommand_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(brainfit(&["frobnicate"], dir.path()).status.code(), Some(1));
}

#[test]
fn help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = brainfit(&["--help"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in ["synth", "build-design", "fit", "group", "select", "overlap", "score", "report", "render"] {
        assert!(text.contains(sub), "help lists {sub}");
    }
}

#[test]
fn invalid_override_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = brainfit(&["group", "--maps", "a.npy", "--alpha", "1.5", "--out", "g"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(!dir.path().join("g").exists());
}

#[test]
fn missing_input_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = brainfit(&["fit", "--manifest", "nope.json", "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn non_finite_map_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let grid = VoxelGrid::full([2, 2, 2], [3.0; 3]).unwrap();
    let mut map = vec![0.5; 8];
    map[3] = f64::INFINITY;
    io::write_map(&map, &grid, dir.path().join("m.npy")).unwrap();
    let out = brainfit(&["select", "--map", "m.npy", "--pct", "50", "--out", "s"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn overlap_prints_table() {
    let dir = tempfile::tempdir().unwrap();
    for (name, idx) in [("a", vec![0, 1, 2, 3]), ("b", vec![0, 1, 2, 4]), ("c", vec![0, 1, 5, 3])] {
        let label = match name {
            "a" => "LSTM",
            "b" => "GPT-2",
            _ => "BERT",
        };
        VoxelSet::new(idx, 10, label)
            .unwrap()
            .write_json(dir.path().join(format!("{name}.json")))
            .unwrap();
    }
    let out = brainfit(&["overlap", "--sets", "a.json", "b.json", "c.json"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(
        String::from_utf8(out.stdout).unwrap(),
        "Model,GPT-2,BERT\nLSTM,75.00%,75.00%\nGPT-2,.,50.00%\nall,50.00%,.\n"
    );
}

#[test]
fn fit_writes_one_map_per_subject() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("spec.json"),
        r#"{"n_subjects": 3, "n_runs": 3, "n_scans_per_run": 40, "d": 5, "n_voxels": 30, "n_signal_voxels": 5, "n_tokens_per_run": 60}"#,
    )
    .unwrap();
    let ok = |args: &[&str]| {
        let out = brainfit(args, dir.path());
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        serde_json::from_slice::<serde_json::Value>(&out.stdout).expect("json summary")
    };
    ok(&["synth", "--spec", "spec.json", "--seed", "3", "--out", "study"]);
    let summary = ok(&["fit", "--manifest", "study/manifest.json", "--out", "fit", "--threads", "2"]);
    assert_eq!(summary["subjects"].as_array().unwrap().len(), 3);
    for s in 1..=3 {
        let (map, grid) = io::read_map(dir.path().join(format!("fit/rmaps/sub-{s:02}_rmap.npy"))).unwrap();
        assert_eq!(map.len(), 30);
        assert_eq!(grid.n_voxels(), 30);
    }
    let hist = summary["subjects"][0]["lambda_histogram"].as_array().unwrap();
    let total: u64 = hist.iter().map(|e| e[1].as_u64().unwrap()).sum();
    assert_eq!(total, 3 * 30);
}
