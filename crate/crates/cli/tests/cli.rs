use std::path::Path;
use std::process::{Command, Output};

use neuroloop::dqn::{DqnConfig, QNetwork, StateLayout};
use neuroloop::nn::{CnnModel, CnnShape, LodConfig};
use neuroloop::session::{NormStats, CHANNELS};
use neuroloop::store::{save_agent, save_cnn};

const REFERENCE_FRAME: [u8; 35] = [
    0xAA, 0x20, 0x02, 0x00, 0x83, 0x18, 0x00, 0x00, 0x94, 0x00, 0x00, 0x42, 0x00, 0x00, 0x0B, 0x00,
    0x00, 0x64, 0x00, 0x00, 0x4D, 0x00, 0x00, 0x3D, 0x00, 0x00, 0x07, 0x00, 0x00, 0x05, 0x04, 0x0D,
    0x05, 0x3D, 0x34,
];

fn neuroloop(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_neuroloop"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

#[test]
fn decodes_the_reference_frame() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("frame.bin");
    let mut bytes = vec![0x00, 0x13];
    bytes.extend_from_slice(&REFERENCE_FRAME);
    std::fs::write(&file, &bytes).unwrap();
    let out = neuroloop(&["decode", path(&file)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let lines: Vec<serde_json::Value> = stdout(&out)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 1);
    let rec = &lines[0];
    assert_eq!(rec["offset"], 2);
    assert_eq!(rec["poor_signal"], 0);
    assert_eq!(rec["attention"], 13);
    assert_eq!(rec["meditation"], 61);
    assert_eq!(rec["bands"]["delta"], 0x94);
    assert_eq!(rec["bands"]["mid_gamma"], 0x05);
    assert!(
        stderr(&out).contains("offset 0: skipped 2 bytes"),
        "{}",
        stderr(&out)
    );
}

#[test]
fn decode_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.bin");
    std::fs::write(&empty, b"").unwrap();
    assert_eq!(neuroloop(&["decode", path(&empty)]).status.code(), Some(2));
    let mut bad = REFERENCE_FRAME;
    bad[34] ^= 1;
    let corrupt = dir.path().join("bad.bin");
    std::fs::write(&corrupt, bad).unwrap();
    let out = neuroloop(&["decode", path(&corrupt)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("corrupt"), "{}", stderr(&out));
    let missing = dir.path().join("nope.bin");
    assert_eq!(
        neuroloop(&["decode", path(&missing)]).status.code(),
        Some(3)
    );
}

#[test]
fn unknown_config_key_is_rejected_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"cnn": {"learning_rate": 0.1}}"#).unwrap();
    let out = neuroloop(&[
        "simulate-session",
        "--config",
        path(&cfg),
        "--out",
        path(&dir.path().join("s.jsonl")),
    ]);
    assert_eq!(out.status.code(), Some(4));
    assert!(stderr(&out).contains("learning_rate"), "{}", stderr(&out));
}

#[test]
fn simulation_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, seed: &str| {
        let file = dir.path().join(name);
        let out = neuroloop(&[
            "simulate-session",
            "--initial",
            "autumn",
            "--target",
            "summer",
            "--transition-loop",
            "40",
            "--seed",
            seed,
            "--out",
            path(&file),
        ]);
        assert!(out.status.success(), "{}", stderr(&out));
        std::fs::read(file).unwrap()
    };
    let a = run("a.jsonl", "9");
    assert_eq!(a, run("b.jsonl", "9"));
    assert_ne!(a, run("c.jsonl", "10"));
    // header plus one record per loop
    assert_eq!(a.iter().filter(|&&b| b == b'\n').count(), 201);
}

#[test]
fn training_needs_sessions() {
    let dir = tempfile::tempdir().unwrap();
    let sessions = dir.path().join("sessions");
    std::fs::create_dir(&sessions).unwrap();
    let out = neuroloop(&[
        "train-cnn",
        "--sessions",
        path(&sessions),
        "--out",
        path(&dir.path().join("cnn")),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

/// Untrained checkpoints with matching shapes.
fn checkpoints(dir: &Path) -> (String, String) {
    let model = CnnModel::new(CnnShape::default(), LodConfig::default(), 0);
    let cnn = dir.join("cnn.ckpt");
    let norm = NormStats {
        mean: [0.0; CHANNELS],
        std: [1.0; CHANNELS],
    };
    save_cnn(&cnn, &model, &norm).unwrap();
    let layout = StateLayout {
        features: model.feature_len(),
        styles: 3,
        min_density: 1,
        max_density: 9,
    };
    let cfg = DqnConfig {
        hidden: 16,
        ..DqnConfig::default()
    };
    let agent = dir.join("agent.ckpt");
    save_agent(&agent, &QNetwork::new(layout.dim(), 16, 0), &layout, &cfg).unwrap();
    (path(&cnn).to_string(), path(&agent).to_string())
}

#[test]
fn guide_with_no_episodes_reports_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let (cnn, agent) = checkpoints(dir.path());
    let out_dir = dir.path().join("guide");
    let out = neuroloop(&[
        "guide",
        "--cnn",
        &cnn,
        "--agent",
        &agent,
        "--episodes",
        "0",
        "--out",
        path(&out_dir),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(report["episodes"], 0);
    assert_eq!(report["successes"], 0);
    assert!(report["mean_cycles_to_target"].is_null());
    assert!(out_dir.join("report.json").exists());
}

#[test]
fn guide_runs_short_episodes() {
    let dir = tempfile::tempdir().unwrap();
    let (cnn, agent) = checkpoints(dir.path());
    let out_dir = dir.path().join("guide");
    let out = neuroloop(&[
        "guide",
        "--cnn",
        &cnn,
        "--agent",
        &agent,
        "--episodes",
        "3",
        "--max-cycles",
        "4",
        "--out",
        path(&out_dir),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(report["episodes"], 3);
    let episodes = std::fs::read_to_string(out_dir.join("guide_episodes.csv")).unwrap();
    assert_eq!(episodes.lines().count(), 4);
}

#[test]
fn mismatched_agent_is_invalid() {
    let dir = tempfile::tempdir().unwrap();
    let (cnn, _) = checkpoints(dir.path());
    let layout = StateLayout {
        features: 5,
        styles: 3,
        min_density: 1,
        max_density: 9,
    };
    let agent = dir.path().join("other.ckpt");
    save_agent(
        &agent,
        &QNetwork::new(layout.dim(), 8, 0),
        &layout,
        &DqnConfig::default(),
    )
    .unwrap();
    let out = neuroloop(&[
        "guide",
        "--cnn",
        &cnn,
        "--agent",
        path(&agent),
        "--out",
        path(&dir.path().join("g")),
    ]);
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
}
