//! One test per acceptance criterion. Each prints a `PASS` or `FAIL` line
//! with the measured values, then asserts.
//!
//! The tests share one CPU-heavy classifier and take a lock so their timings
//! do not overlap.

mod common;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use neuroloop::codec::{compute_checksum, decode_frame, encode_packet, BandPowers, TgamPacket};
use neuroloop::commands::{
    cmd_guide, cmd_simulate_corpus, cmd_train_cnn, cmd_train_dqn, CnnRun, AGENT_CHECKPOINT,
    CNN_CHECKPOINT,
};
use neuroloop::config::ExperimentConfig;
use neuroloop::dqn::reward::{
    reward_adjustment_effect, reward_state_match, reward_state_transition,
};
use neuroloop::dqn::{
    bellman_target, epsilon, replay_update, sync_target, Action, AgentState, DqnConfig, EvalPolicy,
    QNetwork, ReplayBuffer, StateLayout, Transition,
};
use neuroloop::labels::SeasonState;
use neuroloop::lod::{pool_time, pooling_fidelity, screen_space_error, FeatureBlock, PoolMode};
use neuroloop::nn::{Adam, AdamConfig, Parameters};
use neuroloop::session::{assign_labels, SessionHeader, CYCLES_PER_SESSION};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

static LOCK: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

/// Print the verdict line outside the test harness's capture, then assert.
fn report(n: u32, ok: bool, detail: String) {
    let verdict = if ok { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    writeln!(out, "criterion {n}: {verdict} {detail}").unwrap();
    out.flush().unwrap();
    assert!(ok, "criterion {n}: {detail}");
}

fn work_dir(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR"))
        .join("acceptance")
        .join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn config(json: &str) -> ExperimentConfig {
    ExperimentConfig::from_json(json).unwrap()
}

const REFERENCE_FRAME: [u8; 35] = [
    0xAA, 0x20, 0x02, 0x00, 0x83, 0x18, 0x00, 0x00, 0x94, 0x00, 0x00, 0x42, 0x00, 0x00, 0x0B, 0x00,
    0x00, 0x64, 0x00, 0x00, 0x4D, 0x00, 0x00, 0x3D, 0x00, 0x00, 0x07, 0x00, 0x00, 0x05, 0x04, 0x0D,
    0x05, 0x3D, 0x34,
];

#[test]
fn criterion_1_codec() {
    let _g = serial();
    let start = Instant::now();
    let frame = decode_frame(&REFERENCE_FRAME).unwrap();
    let want = TgamPacket {
        poor_signal: 0,
        bands: BandPowers::from_array([0x94, 0x42, 0x0B, 0x64, 0x4D, 0x3D, 0x07, 0x05]),
        attention: 0x0D,
        meditation: 0x3D,
    };
    let table_ok = frame.packet == want && frame.len == 35 && frame.unknown_codes.is_empty();
    let payload = &REFERENCE_FRAME[2..34];
    let low = payload.iter().fold(0u8, |a, &b| a.wrapping_add(b));
    let checksum_ok = low == 0xCB && compute_checksum(payload) == 0x34;

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut round_trips = 0;
    for _ in 0..10_000 {
        let p = TgamPacket {
            poor_signal: rng.random_range(0..=200),
            bands: BandPowers::from_array(std::array::from_fn(|_| rng.random_range(0..1 << 24))),
            attention: rng.random_range(0..=100),
            meditation: rng.random_range(0..=100),
        };
        if decode_frame(&encode_packet(&p).unwrap()).map(|f| f.packet) == Ok(p) {
            round_trips += 1;
        }
    }
    let t = start.elapsed();
    report(
        1,
        table_ok && checksum_ok && round_trips == 10_000 && t < Duration::from_secs(5),
        format!(
            "table decode {table_ok}, checksum {low:#04X} -> {:#04X}, round trips {round_trips}/10000, {t:.2?}",
            compute_checksum(payload)
        ),
    );
}

#[test]
fn criterion_2_gradcheck() {
    let _g = serial();
    let start = Instant::now();
    let mut worst = (String::new(), 0.0f64);
    for lod in common::lod_variants() {
        for seed in common::SEEDS {
            let (name, err) = common::model_grad_error(lod, seed);
            if err > worst.1 {
                worst = (format!("{name} k={} seed {seed}", lod.k), err);
            }
        }
    }
    let t = start.elapsed();
    report(
        2,
        worst.1 < common::TOL && t < Duration::from_secs(120),
        format!(
            "max relative error {:.2e} ({}), {} seeds, {t:.2?}",
            worst.1,
            worst.0,
            common::SEEDS.len()
        ),
    );
}

struct Classifier {
    dir: PathBuf,
    run: CnnRun,
    elapsed: Duration,
}

/// The default 40-session corpus and the classifier trained on it.
/// Callers hold the lock.
fn classifier() -> &'static Classifier {
    static CELL: OnceLock<Classifier> = OnceLock::new();
    CELL.get_or_init(|| {
        let dir = work_dir("classifier");
        let cfg = ExperimentConfig::default();
        let start = Instant::now();
        cmd_simulate_corpus(&cfg, &dir.join("sessions")).unwrap();
        let run = cmd_train_cnn(&cfg, &dir.join("sessions"), &dir.join("cnn")).unwrap();
        Classifier {
            dir,
            run,
            elapsed: start.elapsed(),
        }
    })
}

#[test]
fn criterion_3_classifier() {
    let _g = serial();
    let c = classifier();
    let m = &c.run.metrics;
    let h = &c.run.history;
    let ok = m.accuracy >= 0.90
        && m.f1 >= 0.88
        && m.macro_auc >= 0.95
        && h.epochs.len() <= 200
        && c.elapsed < Duration::from_secs(600);
    report(
        3,
        ok,
        format!(
            "accuracy {:.4}, macro F1 {:.4}, macro AUC {:.4}, {} epochs (best {}), {:.1?}",
            m.accuracy,
            m.f1,
            m.macro_auc,
            h.epochs.len(),
            h.best_epoch,
            c.elapsed
        ),
    );
}

#[test]
fn criterion_4_gradient_labels() {
    let _g = serial();
    let labels = assign_labels(&SessionHeader {
        initial_state: SeasonState::Autumn,
        final_state: SeasonState::Summer,
        transition_loop: None,
        seed: None,
        operations: Vec::new(),
    });
    let last = CYCLES_PER_SESSION - 1;
    let ends = labels[0].weight(SeasonState::Autumn) == 1.0
        && labels[last].weight(SeasonState::Summer) == 1.0;
    let mut linear_err: f64 = 0.0;
    let mut sum_err: f64 = 0.0;
    for (c, l) in labels.iter().enumerate() {
        let t = c as f64 / last as f64;
        linear_err = linear_err
            .max((l.weight(SeasonState::Summer) - t).abs())
            .max((l.weight(SeasonState::Autumn) - (1.0 - t)).abs());
        sum_err = sum_err.max((l.weights().iter().sum::<f64>() - 1.0).abs());
    }
    report(
        4,
        labels.len() == 50 && ends && linear_err <= 1e-12 && sum_err <= 1e-9,
        format!("endpoints {ends}, max ramp error {linear_err:.1e}, max sum error {sum_err:.1e}"),
    );
}

#[test]
fn criterion_5_guidance() {
    let _g = serial();
    let c = classifier();
    let cfg = config(include_str!("../../../configs/guidance.json"));
    let dir = work_dir("guidance");
    let cnn = c.dir.join("cnn").join(CNN_CHECKPOINT);
    let start = Instant::now();
    let log = cmd_train_dqn(&cfg, &cnn, &dir.join("dqn")).unwrap();
    let agent = dir.join("dqn").join(AGENT_CHECKPOINT);
    let greedy = cmd_guide(&cfg, &cnn, &agent, EvalPolicy::Greedy, &dir.join("greedy")).unwrap();
    let t = start.elapsed();
    let random = cmd_guide(&cfg, &cnn, &agent, EvalPolicy::Random, &dir.join("random")).unwrap();
    let (g, r) = (&greedy.report, &random.report);
    let steps = log.steps.len();
    let ok = steps <= 50_000
        && g.episodes == 100
        && g.success_rate >= 0.80
        && r.success_rate <= 0.30
        && t < Duration::from_secs(900);
    report(
        5,
        ok,
        format!(
            "{steps} steps, greedy {}/{} mean cycles {:.2}, random {}/{} mean cycles {:.2}, {t:.1?}",
            g.successes,
            g.episodes,
            g.mean_cycles_to_target.unwrap_or(f64::NAN),
            r.successes,
            r.episodes,
            r.mean_cycles_to_target.unwrap_or(f64::NAN),
        ),
    );
}

#[test]
fn criterion_6_unit_tables() {
    let _g = serial();
    let one = [0.0, 0.0, 1.0, 0.0];
    let rows = [
        (
            "bellman",
            bellman_target(1.0, 0.99, &[0.0, 2.0, -1.0, 1.5, 0.5], false),
            2.98,
        ),
        (
            "state match",
            reward_state_match(&one, &one, 0.0, 1.0, 0.0),
            1.0,
        ),
        (
            "state transition",
            reward_state_transition(0.1, true, 1.0, 0.5),
            -0.4,
        ),
        (
            "adjustment",
            reward_adjustment_effect(10.0, 5.0, 0.01),
            0.15,
        ),
        ("epsilon start", epsilon(0, 1.0, 0.01, 100_000), 1.0),
        ("epsilon end", epsilon(100_000, 1.0, 0.01, 100_000), 0.01),
    ];
    let bad: Vec<String> = rows
        .iter()
        .filter(|(_, got, want)| got != want)
        .map(|(name, got, want)| format!("{name} {got} != {want}"))
        .collect();
    report(
        6,
        bad.is_empty(),
        format!("{} rows exact {bad:?}", rows.len()),
    );
}

#[test]
fn criterion_7_replay_and_target() {
    let _g = serial();
    let layout = StateLayout {
        features: 2,
        styles: 1,
        min_density: 1,
        max_density: 9,
    };
    let state = |x: f64| AgentState {
        cnn_features: vec![x, -x],
        attention: 50.0,
        meditation: 50.0,
        bpm: 115,
        density: 5,
        style: 0,
        target: SeasonState::Winter,
    };
    let mut buf = ReplayBuffer::new(10_000);
    for i in 0..11_000 {
        let x = i as f64 / 11_000.0;
        buf.push(Transition {
            s: state(x),
            a: Action::from_index(i % 5).unwrap(),
            r: i as f64,
            s_next: state(x + 0.01),
            done: i % 7 == 0,
        });
    }
    let fifo = buf.len() == 10_000 && buf.iter().map(|t| t.r).eq((1_000..11_000).map(f64::from));

    let interval = DqnConfig::default().target_interval;
    let bits = |q: &QNetwork| -> Vec<u64> {
        q.params()
            .iter()
            .flat_map(|p| p.value.iter().map(|v| v.to_bits()))
            .collect()
    };
    let mut q = QNetwork::new(layout.dim(), 8, 0);
    let mut target = q.clone();
    let mut adam = Adam::new(&q, AdamConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut frozen = bits(&target);
    let (mut syncs, mut synced_equal, mut held) = (0, true, true);
    for step in 1..=2 * interval + 10 {
        replay_update(&mut q, &target, &mut adam, &buf, &layout, 4, 0.99, &mut rng).unwrap();
        if sync_target(&q, &mut target, step, interval) {
            syncs += 1;
            synced_equal &= bits(&target) == bits(&q);
            frozen = bits(&target);
        } else {
            held &= bits(&target) == frozen;
        }
    }
    report(
        7,
        fifo && syncs == 2 && synced_equal && held,
        format!("fifo {fifo}, {syncs} syncs every {interval} steps, equal after sync {synced_equal}, unchanged between {held}"),
    );
}

#[test]
fn criterion_8_lod() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut identity, mut zero, mut monotone, mut linear) = (true, true, true, 0.0f64);
    for _ in 0..100 {
        let mut block = || {
            let data = (0..2 * 64).map(|_| rng.random_range(-3.0..3.0)).collect();
            FeatureBlock::new(vec![2, 64], data, 1).unwrap()
        };
        let (x, y) = (block(), block());
        for mode in [PoolMode::Max, PoolMode::Mean] {
            identity &= pool_time(&x, 1, mode).unwrap() == x;
            let sse: Vec<f64> = [1, 2, 4, 8, 16, 32, 64]
                .iter()
                .map(|&k| pooling_fidelity(&x, k, mode).unwrap())
                .collect();
            monotone &= sse.windows(2).all(|w| w[0] <= w[1]);
        }
        zero &= screen_space_error(&x, &x).unwrap() == 0.0;
        let (a, b) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let mix = FeatureBlock::new(
            x.shape.clone(),
            x.data
                .iter()
                .zip(&y.data)
                .map(|(u, v)| a * u + b * v)
                .collect(),
            1,
        )
        .unwrap();
        let k = rng.random_range(1..9);
        let lhs = pool_time(&mix, k, PoolMode::Mean).unwrap();
        let (px, py) = (
            pool_time(&x, k, PoolMode::Mean).unwrap(),
            pool_time(&y, k, PoolMode::Mean).unwrap(),
        );
        for i in 0..lhs.data.len() {
            linear = linear.max((lhs.data[i] - (a * px.data[i] + b * py.data[i])).abs());
        }
    }
    report(
        8,
        identity && zero && monotone && linear <= 1e-12,
        format!("identity {identity}, SSE(x, x) = 0 {zero}, monotone over 100 inputs {monotone}, linearity error {linear:.1e}"),
    );
}

/// simulate, train-cnn, train-dqn and guide into `dir`.
fn pipeline(cfg: &ExperimentConfig, dir: &Path) -> Vec<(String, Vec<u8>)> {
    cmd_simulate_corpus(cfg, &dir.join("sessions")).unwrap();
    cmd_train_cnn(cfg, &dir.join("sessions"), &dir.join("cnn")).unwrap();
    let cnn = dir.join("cnn").join(CNN_CHECKPOINT);
    cmd_train_dqn(cfg, &cnn, &dir.join("dqn")).unwrap();
    let agent = dir.join("dqn").join(AGENT_CHECKPOINT);
    cmd_guide(cfg, &cnn, &agent, EvalPolicy::Greedy, &dir.join("guide")).unwrap();
    let mut files = Vec::new();
    for stage in ["cnn", "dqn", "guide"] {
        let mut names: Vec<PathBuf> = std::fs::read_dir(dir.join(stage))
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.extension().is_some_and(|e| e == "csv"))
            .collect();
        names.sort();
        for p in names {
            let rel = format!("{stage}/{}", p.file_name().unwrap().to_string_lossy());
            files.push((rel, std::fs::read(&p).unwrap()));
        }
    }
    files
}

#[test]
fn criterion_9_reproducible_pipeline() {
    let _g = serial();
    let cfg = config(include_str!("../../../configs/smoke.json"));
    let a = pipeline(&cfg, &work_dir("repro_a"));
    let b = pipeline(&cfg, &work_dir("repro_b"));
    let differing: Vec<&str> = a
        .iter()
        .zip(&b)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    let ok = a.len() == b.len() && a.len() >= 8 && differing.is_empty();
    report(
        9,
        ok,
        format!("{} CSV files compared, differing {differing:?}", a.len()),
    );
}
