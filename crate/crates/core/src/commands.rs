//! The command implementations behind the `neuroloop` binary.
//!
//! Each command reads an [`ExperimentConfig`], writes its outputs into a run
//! directory and lists every output with its digest in `manifest.json`.
//! Failures carry a process exit code: 2 for empty or degenerate input, 3 for
//! I/O, 4 for validation.

use std::fs::{self, File};
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use crate::codec::{FrameReader, SkipReason};
use crate::config::{ConfigError, ExperimentConfig};
use crate::dqn::{
    evaluate_policy, DqnAgent, DqnError, EvalPolicy, GuideEpisode, GuideReport, Perceiver,
    TrainingLog,
};
use crate::env::{simulate_session, EnvError, SubjectEnv};
use crate::experiment::{prepare_dataset, synthetic_corpus, train_classifier};
use crate::labels::{SeasonState, NUM_STATES};
use crate::nn::{History, Metrics, TrainError};
use crate::session::{PipelineError, SessionHeader, MIN_SESSIONS};
use crate::store::manifest::{RunManifest, MANIFEST_FILE};
use crate::store::{
    import_csv, load_agent, load_cnn, read_sessions_dir, save_agent, save_cnn, write_session,
    StoreError,
};

pub const EXIT_EMPTY: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_INVALID: i32 = 4;

pub const CNN_CHECKPOINT: &str = "cnn.ckpt";
pub const AGENT_CHECKPOINT: &str = "agent.ckpt";

#[derive(Debug, Error)]
pub enum CommandError {
    #[error("{0}")]
    Empty(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{0}")]
    Invalid(String),
}

impl CommandError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CommandError::Empty(_) => EXIT_EMPTY,
            CommandError::Io { .. } => EXIT_IO,
            CommandError::Config(ConfigError::Io { .. }) => EXIT_IO,
            CommandError::Store(e) if e.is_io() => EXIT_IO,
            _ => EXIT_INVALID,
        }
    }

    fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        CommandError::Io {
            path: path.into(),
            source,
        }
    }
}

macro_rules! invalid_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CommandError {
            fn from(e: $t) -> Self {
                CommandError::Invalid(e.to_string())
            }
        }
    )*};
}

invalid_from!(EnvError, TrainError);

impl From<PipelineError> for CommandError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::EmptyDataset => CommandError::Empty(e.to_string()),
            e => CommandError::Invalid(e.to_string()),
        }
    }
}

impl From<DqnError> for CommandError {
    fn from(e: DqnError) -> Self {
        CommandError::Invalid(e.to_string())
    }
}

fn create_dir(dir: &Path) -> Result<(), CommandError> {
    fs::create_dir_all(dir).map_err(|e| CommandError::io(dir, e))
}

fn write_csv<T: Serialize>(
    dir: &Path,
    name: &str,
    rows: impl IntoIterator<Item = T>,
) -> Result<(), CommandError> {
    let path = dir.join(name);
    let io_err = |e: csv::Error, path: &Path| match e.into_kind() {
        csv::ErrorKind::Io(e) => CommandError::io(path, e),
        k => CommandError::Invalid(format!("{}: {k:?}", path.display())),
    };
    let mut w = csv::Writer::from_path(&path).map_err(|e| io_err(e, &path))?;
    for row in rows {
        w.serialize(row).map_err(|e| io_err(e, &path))?;
    }
    w.flush().map_err(|e| CommandError::io(&path, e))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), CommandError> {
    let path = dir.join(name);
    let text = serde_json::to_string_pretty(value).expect("serializable") + "\n";
    fs::write(&path, text).map_err(|e| CommandError::io(path, e))
}

fn manifest(command: &str, cfg: &ExperimentConfig) -> RunManifest {
    let mut m = RunManifest::new(command, serde_json::to_value(cfg).expect("serializable"));
    m.seeds.insert("master".into(), cfg.seed);
    m
}

fn finish(mut m: RunManifest, dir: &Path, outputs: &[&str]) -> Result<(), CommandError> {
    for o in outputs {
        m.add_output(dir, o)?;
    }
    m.write(dir)?;
    Ok(())
}

/// Frames found by [`cmd_decode`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecodeSummary {
    pub valid: usize,
    pub corrupt: usize,
    /// Bytes discarded while resynchronizing.
    pub skipped_bytes: usize,
}

/// One JSON line per valid frame on `out`; each skipped region is reported
/// on `err` with its byte offset.
pub fn cmd_decode<R: Read>(
    input: R,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<DecodeSummary, CommandError> {
    let mut summary = DecodeSummary {
        valid: 0,
        corrupt: 0,
        skipped_bytes: 0,
    };
    let mut reader = FrameReader::new(input);
    let stdout_err = |e| CommandError::io("<output>", e);
    for item in reader.by_ref() {
        match item {
            Ok(f) => {
                summary.valid += 1;
                let p = &f.frame.packet;
                let rec = json!({
                    "offset": f.offset,
                    "poor_signal": p.poor_signal,
                    "attention": p.attention,
                    "meditation": p.meditation,
                    "bands": p.bands,
                    "unknown_codes": f.frame.unknown_codes,
                });
                writeln!(out, "{rec}").map_err(stdout_err)?;
            }
            Err(skip) => {
                summary.skipped_bytes += skip.skipped;
                let what = match &skip.reason {
                    SkipReason::Garbage => "garbage".to_string(),
                    SkipReason::InvalidLength(l) => format!("invalid length {l}"),
                    SkipReason::Corrupt(e) => {
                        summary.corrupt += 1;
                        format!("corrupt frame: {e}")
                    }
                    SkipReason::Truncated => "truncated frame".to_string(),
                };
                writeln!(
                    err,
                    "offset {}: skipped {} bytes ({what})",
                    skip.offset, skip.skipped
                )
                .map_err(stdout_err)?;
            }
        }
    }
    if let Some(e) = reader.take_io_error() {
        return Err(CommandError::io("<input>", e));
    }
    if summary.valid == 0 {
        return Err(CommandError::Empty("no valid frames".into()));
    }
    Ok(summary)
}

/// Write one simulated session to `out`. The session seed is `cfg.seed`.
pub fn cmd_simulate_session(
    cfg: &ExperimentConfig,
    initial: SeasonState,
    target: SeasonState,
    transition_loop: Option<usize>,
    out: &Path,
) -> Result<(), CommandError> {
    let profile = cfg.profile()?;
    let session = simulate_session(&profile, initial, target, transition_loop, cfg.seed)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_session(out, &session)?;
    info!("wrote {} loops to {}", session.loops.len(), out.display());
    Ok(())
}

/// Write the configured synthetic corpus into `out_dir` as
/// `session_000.jsonl`, `session_001.jsonl`, ...
pub fn cmd_simulate_corpus(cfg: &ExperimentConfig, out_dir: &Path) -> Result<usize, CommandError> {
    let profile = cfg.profile()?;
    let sessions = synthetic_corpus(&profile, &cfg.dataset, cfg.seed)?;
    create_dir(out_dir)?;
    let names: Vec<String> = (0..sessions.len())
        .map(|i| format!("session_{i:03}.jsonl"))
        .collect();
    for (s, name) in sessions.iter().zip(&names) {
        write_session(&out_dir.join(name), s)?;
    }
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    finish(manifest("simulate-session", cfg), out_dir, &refs)?;
    info!("wrote {} sessions to {}", sessions.len(), out_dir.display());
    Ok(sessions.len())
}

/// Convert a per-loop CSV export into a session file.
pub fn cmd_import_csv(
    input: &Path,
    header: SessionHeader,
    seed: u64,
    out: &Path,
) -> Result<usize, CommandError> {
    let file = File::open(input).map_err(|e| CommandError::io(input, e))?;
    let session = import_csv(io::BufReader::new(file), header, seed)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_session(out, &session)?;
    Ok(session.loops.len())
}

#[derive(Serialize)]
struct MetricRow<'a> {
    metric: &'a str,
    value: String,
}

fn metric_rows(m: &Metrics) -> Vec<MetricRow<'static>> {
    let mut rows = vec![
        MetricRow {
            metric: "samples",
            value: m.samples.to_string(),
        },
        MetricRow {
            metric: "accuracy",
            value: m.accuracy.to_string(),
        },
        MetricRow {
            metric: "precision",
            value: m.precision.to_string(),
        },
        MetricRow {
            metric: "recall",
            value: m.recall.to_string(),
        },
        MetricRow {
            metric: "f1",
            value: m.f1.to_string(),
        },
        MetricRow {
            metric: "macro_auc",
            value: m.macro_auc.to_string(),
        },
    ];
    const AUC_NAMES: [&str; NUM_STATES] = ["auc_spring", "auc_summer", "auc_autumn", "auc_winter"];
    for (name, auc) in AUC_NAMES.iter().zip(m.auc) {
        rows.push(MetricRow {
            metric: name,
            value: auc.map(|a| a.to_string()).unwrap_or_default(),
        });
    }
    rows
}

#[derive(Serialize)]
struct ConfusionRow {
    truth: SeasonState,
    spring: usize,
    summer: usize,
    autumn: usize,
    winter: usize,
}

#[derive(Serialize)]
struct RocRow {
    class: SeasonState,
    threshold: f64,
    fpr: f64,
    tpr: f64,
}

fn write_metrics(dir: &Path, m: &Metrics, history: &History) -> Result<(), CommandError> {
    write_csv(dir, "metrics.csv", metric_rows(m))?;
    write_csv(
        dir,
        "confusion.csv",
        SeasonState::ALL.iter().map(|&s| {
            let r = m.confusion[s.index()];
            ConfusionRow {
                truth: s,
                spring: r[0],
                summer: r[1],
                autumn: r[2],
                winter: r[3],
            }
        }),
    )?;
    write_csv(
        dir,
        "roc.csv",
        m.roc
            .iter()
            .zip(SeasonState::ALL)
            .flat_map(|(curve, class)| {
                curve.iter().map(move |p| RocRow {
                    class,
                    threshold: p.threshold,
                    fpr: p.fpr,
                    tpr: p.tpr,
                })
            }),
    )?;
    write_csv(dir, "history.csv", &history.epochs)
}

/// Everything `train-cnn` produced.
#[derive(Debug, Clone)]
pub struct CnnRun {
    pub metrics: Metrics,
    pub history: History,
    pub sessions: usize,
}

/// Train the classifier on every `*.jsonl` session in `sessions_dir`.
pub fn cmd_train_cnn(
    cfg: &ExperimentConfig,
    sessions_dir: &Path,
    out_dir: &Path,
) -> Result<CnnRun, CommandError> {
    let sessions: Vec<_> = read_sessions_dir(sessions_dir)?
        .into_iter()
        .map(|(_, s)| s)
        .collect();
    if sessions.is_empty() {
        return Err(CommandError::Empty(format!(
            "no sessions in {} (need at least {MIN_SESSIONS})",
            sessions_dir.display()
        )));
    }
    for s in &sessions {
        s.validate()?;
    }
    let ds = prepare_dataset(&sessions, &cfg.pipeline.split)?;
    info!(
        "{} sessions: {} train / {} val / {} test cycles",
        sessions.len(),
        ds.train.len(),
        ds.val.len(),
        ds.test.len()
    );
    let (model, history, metrics) = train_classifier(cfg, &ds)?;
    info!(
        "test accuracy {:.4} macro f1 {:.4} macro auc {:.4}",
        metrics.accuracy, metrics.f1, metrics.macro_auc
    );

    create_dir(out_dir)?;
    save_cnn(&out_dir.join(CNN_CHECKPOINT), &model, &ds.stats)?;
    write_metrics(out_dir, &metrics, &history)?;
    write_json(out_dir, "split.json", &ds.split)?;
    let mut m = manifest("train-cnn", cfg);
    m.seeds.insert("split".into(), cfg.pipeline.split.seed);
    m.seeds.insert("cnn".into(), cfg.cnn.seed);
    finish(
        m,
        out_dir,
        &[
            CNN_CHECKPOINT,
            "metrics.csv",
            "confusion.csv",
            "roc.csv",
            "history.csv",
            "split.json",
        ],
    )?;
    Ok(CnnRun {
        metrics,
        history,
        sessions: sessions.len(),
    })
}

fn load_perceiver(path: &Path) -> Result<Perceiver, CommandError> {
    let (model, stats) = load_cnn(path)?;
    Ok(Perceiver { model, stats })
}

#[derive(Serialize)]
struct StepRow {
    step: u64,
    episode: usize,
    epsilon: f64,
    loss: Option<f64>,
    reward: f64,
}

#[derive(Serialize)]
struct EpisodeRow {
    episode: usize,
    initial: SeasonState,
    target: SeasonState,
    cycles: usize,
    success: bool,
    total_reward: f64,
    final_spring: f64,
    final_summer: f64,
    final_autumn: f64,
    final_winter: f64,
}

/// Train the guidance agent against the configured subject, sensing through
/// the classifier in `cnn_checkpoint`.
pub fn cmd_train_dqn(
    cfg: &ExperimentConfig,
    cnn_checkpoint: &Path,
    out_dir: &Path,
) -> Result<TrainingLog, CommandError> {
    let perceiver = load_perceiver(cnn_checkpoint)?;
    let mut env = SubjectEnv::new(cfg.profile()?)?;
    let layout = perceiver.layout(&env);
    let mut agent = DqnAgent::new(cfg.dqn, layout);
    let log = agent.train(&mut env, &perceiver)?;
    let wins = log.episodes.iter().filter(|e| e.success).count();
    info!(
        "{} steps over {} episodes, {wins} successful",
        agent.steps,
        log.episodes.len()
    );

    create_dir(out_dir)?;
    save_agent(&out_dir.join(AGENT_CHECKPOINT), &agent.q, &layout, &cfg.dqn)?;
    write_csv(
        out_dir,
        "steps.csv",
        log.steps.iter().map(|s| StepRow {
            step: s.step,
            episode: s.episode,
            epsilon: s.epsilon,
            loss: s.loss,
            reward: s.reward,
        }),
    )?;
    write_csv(
        out_dir,
        "episodes.csv",
        log.episodes.iter().map(|e| EpisodeRow {
            episode: e.episode,
            initial: e.initial,
            target: e.target,
            cycles: e.cycles,
            success: e.success,
            total_reward: e.total_reward,
            final_spring: e.final_label[0],
            final_summer: e.final_label[1],
            final_autumn: e.final_label[2],
            final_winter: e.final_label[3],
        }),
    )?;
    let mut m = manifest("train-dqn", cfg);
    m.seeds.insert("dqn".into(), cfg.dqn.seed);
    finish(m, out_dir, &[AGENT_CHECKPOINT, "steps.csv", "episodes.csv"])?;
    Ok(log)
}

/// Seed of the evaluation task stream for a master seed.
pub fn eval_seed(cfg: &ExperimentConfig) -> u64 {
    cfg.seed.wrapping_add(3)
}

#[derive(Serialize)]
struct GuideEpisodeRow {
    episode: usize,
    initial: SeasonState,
    target: SeasonState,
    seed: u64,
    success: bool,
    cycles: usize,
    loops: usize,
}

#[derive(Serialize)]
struct GuideStepRow {
    episode: usize,
    cycle: usize,
    action: &'static str,
    bpm: u32,
    density: u32,
    style: usize,
    reward: f64,
    spring: f64,
    summer: f64,
    autumn: f64,
    winter: f64,
}

/// What `guide` evaluated.
#[derive(Debug, Clone)]
pub struct GuideRun {
    pub report: GuideReport,
    pub episodes: Vec<GuideEpisode>,
}

/// Evaluate a policy for `cfg.eval.episodes` episodes of at most
/// `cfg.eval.max_cycles` cycles each.
pub fn cmd_guide(
    cfg: &ExperimentConfig,
    cnn_checkpoint: &Path,
    agent_checkpoint: &Path,
    policy: EvalPolicy,
    out_dir: &Path,
) -> Result<GuideRun, CommandError> {
    let perceiver = load_perceiver(cnn_checkpoint)?;
    let (q, layout, _) = load_agent(agent_checkpoint)?;
    let mut env = SubjectEnv::new(cfg.profile()?)?;
    if perceiver.layout(&env) != layout {
        return Err(CommandError::Invalid(
            "agent checkpoint does not match the classifier and subject profile".into(),
        ));
    }
    let episodes = evaluate_policy(
        &q,
        &mut env,
        &perceiver,
        &cfg.dqn.rewards,
        cfg.eval.episodes,
        cfg.eval.max_cycles,
        policy,
        eval_seed(cfg),
    )?;
    let report = GuideReport::from_episodes(&episodes);
    if episodes.is_empty() {
        warn!("no evaluation episodes requested");
    } else {
        info!(
            "success {}/{} ({:.1}%), mean cycles to target {:?}",
            report.successes,
            report.episodes,
            100.0 * report.success_rate,
            report.mean_cycles_to_target
        );
    }

    create_dir(out_dir)?;
    write_json(out_dir, "report.json", &report)?;
    write_csv(
        out_dir,
        "guide_episodes.csv",
        episodes.iter().enumerate().map(|(i, e)| GuideEpisodeRow {
            episode: i,
            initial: e.initial,
            target: e.target,
            seed: e.seed,
            success: e.success,
            cycles: e.cycles,
            loops: e.cycles * crate::session::LOOPS_PER_CYCLE,
        }),
    )?;
    write_csv(
        out_dir,
        "guide_steps.csv",
        episodes.iter().enumerate().flat_map(|(i, e)| {
            e.log.iter().map(move |s| GuideStepRow {
                episode: i,
                cycle: s.cycle,
                action: s.action.name(),
                bpm: s.bpm,
                density: s.density,
                style: s.style,
                reward: s.reward,
                spring: s.label[0],
                summer: s.label[1],
                autumn: s.label[2],
                winter: s.label[3],
            })
        }),
    )?;
    let mut m = manifest("guide", cfg);
    m.seeds.insert("eval".into(), eval_seed(cfg));
    finish(
        m,
        out_dir,
        &["report.json", "guide_episodes.csv", "guide_steps.csv"],
    )?;
    Ok(GuideRun { report, episodes })
}

/// Whether `dir` holds a manifest whose digests all verify.
pub fn verify_run(dir: &Path) -> Result<(), CommandError> {
    if !dir.join(MANIFEST_FILE).exists() {
        return Err(CommandError::Invalid(format!(
            "{} has no manifest",
            dir.display()
        )));
    }
    RunManifest::read(dir)?.verify(dir)?;
    Ok(())
}

pub fn open_input(path: Option<&Path>) -> Result<Box<dyn Read>, CommandError> {
    match path {
        Some(p) => Ok(Box::new(io::BufReader::new(
            File::open(p).map_err(|e| CommandError::io(p, e))?,
        ))),
        None => Ok(Box::new(io::stdin().lock())),
    }
}

pub fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>, CommandError> {
    match path {
        Some(p) => Ok(Box::new(BufWriter::new(
            File::create(p).map_err(|e| CommandError::io(p, e))?,
        ))),
        None => Ok(Box::new(io::stdout().lock())),
    }
}
