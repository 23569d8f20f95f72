//! Dataset assembly and classifier training shared by the commands and the
//! acceptance suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{DatasetConfig, ExperimentConfig};
use crate::dqn::Perceiver;
use crate::env::{simulate_session, EnvError, SubjectProfile};
use crate::labels::{SeasonState, NUM_STATES};
use crate::nn::{self, CnnModel, CnnShape, History, Metrics, TrainError};
use crate::session::{
    assemble_cycles, normalize, split, CycleTensor, NormStats, PipelineError, Session, Split,
    SplitConfig,
};

/// Normalized cycle tensors per partition. Sessions never straddle partitions.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Vec<CycleTensor>,
    pub val: Vec<CycleTensor>,
    pub test: Vec<CycleTensor>,
    pub stats: NormStats,
    pub split: Split,
}

pub fn prepare_dataset(sessions: &[Session], cfg: &SplitConfig) -> Result<Dataset, PipelineError> {
    let split = split(sessions.len(), cfg)?;
    let cycles = |ids: &[usize]| -> Result<Vec<CycleTensor>, PipelineError> {
        let mut out = Vec::new();
        for &i in ids {
            out.extend(assemble_cycles(&sessions[i])?);
        }
        Ok(out)
    };
    let mut train = cycles(&split.train)?;
    let mut val = cycles(&split.val)?;
    let mut test = cycles(&split.test)?;
    let stats = normalize(&mut train, &mut [&mut val[..], &mut test[..]])?;
    Ok(Dataset {
        train,
        val,
        test,
        stats,
        split,
    })
}

/// The `(initial, target)` pair of corpus session `i`.
pub fn corpus_task(cfg: &DatasetConfig, i: usize) -> (SeasonState, SeasonState) {
    let initial = SeasonState::ALL[i % NUM_STATES];
    let moves = cfg.transition_every > 0 && (i + 1) % cfg.transition_every == 0;
    let target = if moves {
        SeasonState::ALL[(i + 1) % NUM_STATES]
    } else {
        initial
    };
    (initial, target)
}

/// Simulated sessions cycling through the four states. Session seeds are
/// drawn from `seed`.
pub fn synthetic_corpus(
    profile: &SubjectProfile,
    cfg: &DatasetConfig,
    seed: u64,
) -> Result<Vec<Session>, EnvError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..cfg.sessions)
        .map(|i| {
            let (initial, target) = corpus_task(cfg, i);
            simulate_session(profile, initial, target, None, rng.random())
        })
        .collect()
}

/// Train a fresh model on `ds` and score it on the test partition.
pub fn train_classifier(
    cfg: &ExperimentConfig,
    ds: &Dataset,
) -> Result<(CnnModel, History, Metrics), TrainError> {
    let mut model = CnnModel::new(CnnShape::default(), cfg.lod, cfg.cnn.seed);
    let aug = cfg.pipeline.augment.then_some(&cfg.pipeline.augmentation);
    let history = nn::train(&mut model, &ds.train, &ds.val, &cfg.cnn, aug)?;
    let metrics = nn::evaluate(&model, &ds.test)?;
    Ok((model, history, metrics))
}

impl Dataset {
    pub fn perceiver(&self, model: CnnModel) -> Perceiver {
        Perceiver {
            model,
            stats: self.stats,
        }
    }
}
