//! `neuroloop` command-line interface.
//!
//! Settings resolve in three layers: built-in defaults, then the `--config`
//! JSON file, then command-line flags. `--seed` replaces the master seed and
//! every component seed derived from it.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use neuroloop::commands::{self, CommandError};
use neuroloop::config::ExperimentConfig;
use neuroloop::dqn::EvalPolicy;
use neuroloop::labels::SeasonState;
use neuroloop::session::SessionHeader;

#[derive(Parser)]
#[command(
    name = "neuroloop",
    version,
    about = "Closed-loop EEG rhythm biofeedback toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON experiment configuration; unknown keys are rejected.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overriding the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// List the packets in a raw TGAM byte stream as JSON lines.
    Decode {
        #[command(flatten)]
        common: Common,
        /// Byte stream to read; standard input when absent.
        input: Option<PathBuf>,
        /// Output file; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Record simulated sessions from a subject profile.
    SimulateSession {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "spring")]
        initial: SeasonState,
        /// Final state; the initial state when absent.
        #[arg(long)]
        target: Option<SeasonState>,
        /// Loop at which the label ramp starts.
        #[arg(long)]
        transition_loop: Option<usize>,
        /// Subject profile JSON, overriding the configuration.
        #[arg(long)]
        profile: Option<PathBuf>,
        /// Write the synthetic corpus of this many sessions into the `--out`
        /// directory instead of a single session file.
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert a per-loop CSV export into a session file.
    ImportCsv {
        #[command(flatten)]
        common: Common,
        input: PathBuf,
        #[arg(long)]
        initial: SeasonState,
        #[arg(long)]
        target: Option<SeasonState>,
        #[arg(long)]
        transition_loop: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the state classifier on a directory of sessions.
    TrainCnn {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        sessions: PathBuf,
        #[arg(long)]
        max_epochs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the guidance agent against the simulated subject.
    TrainDqn {
        #[command(flatten)]
        common: Common,
        /// Classifier checkpoint from `train-cnn`.
        #[arg(long)]
        cnn: PathBuf,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate guidance episodes.
    Guide {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        cnn: PathBuf,
        /// Agent checkpoint from `train-dqn`.
        #[arg(long)]
        agent: PathBuf,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        max_cycles: Option<usize>,
        #[arg(long, value_enum, default_value = "greedy")]
        policy: Policy,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Policy {
    Greedy,
    Random,
}

fn load_config(common: &Common) -> Result<ExperimentConfig, CommandError> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.reseed(seed);
    }
    Ok(cfg)
}

fn checked(
    mut cfg: ExperimentConfig,
    edit: impl FnOnce(&mut ExperimentConfig),
) -> Result<ExperimentConfig, CommandError> {
    edit(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn header(
    initial: SeasonState,
    target: Option<SeasonState>,
    transition_loop: Option<usize>,
    seed: u64,
) -> SessionHeader {
    SessionHeader {
        initial_state: initial,
        final_state: target.unwrap_or(initial),
        transition_loop,
        seed: Some(seed),
        operations: Vec::new(),
    }
}

fn run(cmd: Command) -> Result<(), CommandError> {
    match cmd {
        Command::Decode { common, input, out } => {
            load_config(&common)?;
            let src = commands::open_input(input.as_deref())?;
            let mut dst = commands::open_output(out.as_deref())?;
            let s = commands::cmd_decode(src, &mut dst, &mut std::io::stderr())?;
            dst.flush().map_err(|e| CommandError::Io {
                path: out.unwrap_or_else(|| Path::new("<stdout>").into()),
                source: e,
            })?;
            eprintln!(
                "{} frames, {} corrupt, {} bytes skipped",
                s.valid, s.corrupt, s.skipped_bytes
            );
        }
        Command::SimulateSession {
            common,
            initial,
            target,
            transition_loop,
            profile,
            count,
            out,
        } => {
            let cfg = checked(load_config(&common)?, |c| {
                if profile.is_some() {
                    c.env.profile = profile;
                }
                if let Some(n) = count {
                    c.dataset.sessions = n;
                }
            })?;
            if count.is_some() {
                commands::cmd_simulate_corpus(&cfg, &out)?;
            } else {
                commands::cmd_simulate_session(
                    &cfg,
                    initial,
                    target.unwrap_or(initial),
                    transition_loop,
                    &out,
                )?;
            }
        }
        Command::ImportCsv {
            common,
            input,
            initial,
            target,
            transition_loop,
            out,
        } => {
            let cfg = load_config(&common)?;
            let n = commands::cmd_import_csv(
                &input,
                header(initial, target, transition_loop, cfg.seed),
                cfg.seed,
                &out,
            )?;
            eprintln!("imported {n} loops");
        }
        Command::TrainCnn {
            common,
            sessions,
            max_epochs,
            out,
        } => {
            let cfg = checked(load_config(&common)?, |c| {
                if let Some(n) = max_epochs {
                    c.cnn.max_epochs = n;
                }
            })?;
            let run = commands::cmd_train_cnn(&cfg, &sessions, &out)?;
            eprintln!(
                "accuracy {:.4} macro f1 {:.4} macro auc {:.4} ({} epochs)",
                run.metrics.accuracy,
                run.metrics.f1,
                run.metrics.macro_auc,
                run.history.epochs.len()
            );
        }
        Command::TrainDqn {
            common,
            cnn,
            steps,
            out,
        } => {
            let cfg = checked(load_config(&common)?, |c| {
                if let Some(n) = steps {
                    c.dqn.train_steps = n;
                }
            })?;
            let log = commands::cmd_train_dqn(&cfg, &cnn, &out)?;
            let wins = log.episodes.iter().filter(|e| e.success).count();
            eprintln!(
                "{} steps, {} episodes, {wins} successful",
                log.steps.len(),
                log.episodes.len()
            );
        }
        Command::Guide {
            common,
            cnn,
            agent,
            episodes,
            max_cycles,
            policy,
            out,
        } => {
            let cfg = checked(load_config(&common)?, |c| {
                if let Some(n) = episodes {
                    c.eval.episodes = n;
                }
                if let Some(n) = max_cycles {
                    c.eval.max_cycles = n;
                }
            })?;
            let policy = match policy {
                Policy::Greedy => EvalPolicy::Greedy,
                Policy::Random => EvalPolicy::Random,
            };
            let r = commands::cmd_guide(&cfg, &cnn, &agent, policy, &out)?.report;
            println!(
                "{}",
                serde_json::to_string_pretty(&r).expect("serializable")
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("NEUROLOOP_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
