use std::fmt::Write as _;
use std::path::Path;

use neuroloop::config::ExperimentConfig;
use neuroloop::dqn::{DqnConfig, QNetwork, StateLayout};
use neuroloop::env::{simulate_session, SubjectProfile};
use neuroloop::labels::SeasonState;
use neuroloop::nn::{CnnModel, CnnShape, LodConfig, Parameters};
use neuroloop::session::{NormStats, SessionHeader, CHANNELS};
use neuroloop::store::{
    import_csv, load_agent, load_cnn, read_session, save_agent, save_cnn, write_session,
    Checkpoint, RunManifest, StoreError, CSV_COLUMNS,
};

fn values<P: Parameters>(p: &P) -> Vec<u64> {
    p.params()
        .iter()
        .flat_map(|p| p.value.iter().map(|v| v.to_bits()))
        .collect()
}

fn header() -> SessionHeader {
    SessionHeader {
        initial_state: SeasonState::Autumn,
        final_state: SeasonState::Winter,
        transition_loop: Some(80),
        seed: Some(3),
        operations: Vec::new(),
    }
}

#[test]
fn cnn_checkpoint_round_trips_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cnn.ckpt");
    let lod = LodConfig {
        k: 3,
        ..LodConfig::default()
    };
    let model = CnnModel::new(CnnShape::default(), lod, 7);
    let norm = NormStats {
        mean: [0.25; CHANNELS],
        std: [1.5; CHANNELS],
    };
    save_cnn(&path, &model, &norm).unwrap();
    let (back, norm_back) = load_cnn(&path).unwrap();
    assert_eq!(values(&back), values(&model));
    assert_eq!(back.lod, model.lod);
    assert_eq!(norm_back, norm);
}

#[test]
fn agent_checkpoint_round_trips_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("agent.ckpt");
    let layout = StateLayout {
        features: 32,
        styles: 3,
        min_density: 1,
        max_density: 9,
    };
    let q = QNetwork::new(layout.dim(), 64, 1);
    let cfg = DqnConfig {
        gamma: 0.95,
        ..DqnConfig::default()
    };
    save_agent(&path, &q, &layout, &cfg).unwrap();
    let (q2, layout2, cfg2) = load_agent(&path).unwrap();
    assert_eq!(values(&q2), values(&q));
    assert_eq!((layout2, cfg2), (layout, cfg));
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let q = QNetwork::new(10, 8, 0);
    let bytes = Checkpoint::from_params(serde_json::json!({}), &q).to_bytes();
    for cut in [0, 4, bytes.len() / 2, bytes.len() - 1] {
        assert!(
            Checkpoint::read_from(&mut &bytes[..cut]).is_err(),
            "cut {cut}"
        );
    }
    let mut bad = bytes.clone();
    bad[0] ^= 0xFF;
    assert!(Checkpoint::read_from(&mut &bad[..]).is_err());
    // a checkpoint of a different shape does not load
    let ck = Checkpoint::read_from(&mut &bytes[..]).unwrap();
    let mut other = QNetwork::new(11, 8, 0);
    assert!(ck.load_into(&mut other).is_err());
}

#[test]
fn session_file_round_trips() {
    let session = simulate_session(
        &SubjectProfile::default(),
        SeasonState::Autumn,
        SeasonState::Winter,
        Some(80),
        3,
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.jsonl");
    write_session(&path, &session).unwrap();
    assert_eq!(read_session(&path).unwrap(), session);
}

#[test]
fn manifest_detects_tampering() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("a.csv"), "x\n1\n").unwrap();
    let mut m = RunManifest::new("test", serde_json::json!({"seed": 1}));
    m.add_output(dir.path(), "a.csv").unwrap();
    m.write(dir.path()).unwrap();
    let back = RunManifest::read(dir.path()).unwrap();
    back.verify(dir.path()).unwrap();
    std::fs::write(dir.path().join("a.csv"), "x\n2\n").unwrap();
    assert!(matches!(back.verify(dir.path()), Err(StoreError::DigestMismatch(f)) if f == "a.csv"));
}

fn csv_text(columns: &[&str], rows: usize) -> String {
    let mut s = columns.join(",");
    s.push('\n');
    for i in 0..rows {
        let cells: Vec<String> = columns
            .iter()
            .map(|&c| match c {
                "attention" | "meditation" => "50".into(),
                "audio" => "0.5".into(),
                "bpm" => "115".into(),
                "density" => "5".into(),
                "style" => "jazz".into(),
                _ => format!("{}", 1000 + i),
            })
            .collect();
        writeln!(s, "{}", cells.join(",")).unwrap();
    }
    s
}

#[test]
fn csv_import_builds_a_session() {
    let session = import_csv(csv_text(&CSV_COLUMNS, 200).as_bytes(), header(), 0).unwrap();
    assert_eq!(session.loops.len(), 200);
    assert!(session.loops.iter().all(|l| l.validate().is_ok()));
    assert_eq!(session.loops[7].packet.bands.delta, 1007);
    // column order does not matter
    let mut shuffled = CSV_COLUMNS.to_vec();
    shuffled.reverse();
    let again = import_csv(csv_text(&shuffled, 200).as_bytes(), header(), 0).unwrap();
    assert_eq!(again, session);
}

#[test]
fn csv_import_names_the_missing_column() {
    let cols: Vec<&str> = CSV_COLUMNS
        .iter()
        .copied()
        .filter(|&c| c != "meditation")
        .collect();
    let err = import_csv(csv_text(&cols, 8).as_bytes(), header(), 0).unwrap_err();
    assert!(err.to_string().contains("meditation"), "{err}");
}

#[test]
fn csv_import_rejects_ragged_and_bad_rows() {
    let err = import_csv(csv_text(&CSV_COLUMNS, 6).as_bytes(), header(), 0).unwrap_err();
    assert!(matches!(err, StoreError::RaggedData(6)), "{err}");
    let text = csv_text(&CSV_COLUMNS, 8).replacen("115", "117", 1);
    let err = import_csv(text.as_bytes(), header(), 0).unwrap_err();
    assert!(matches!(err, StoreError::BadRow { row: 1, .. }), "{err}");
}

#[test]
fn shipped_profile_is_the_default() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../profiles/default.json");
    let text = std::fs::read_to_string(path).unwrap();
    let profile: SubjectProfile = serde_json::from_str(&text).unwrap();
    assert_eq!(profile, SubjectProfile::default());
}

#[test]
fn unknown_config_key_is_named() {
    let err = ExperimentConfig::from_json(r#"{"dqn": {"gama": 0.9}}"#).unwrap_err();
    assert!(err.to_string().contains("gama"), "{err}");
}
