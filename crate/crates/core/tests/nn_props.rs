use neuroloop::labels::{LabelDistribution, SeasonState};
use neuroloop::lod::{pool_time, screen_space_error, ContextVector, FeatureBlock, PoolMode};
use neuroloop::nn::layers::softmax;
use neuroloop::nn::metrics::{auc, evaluate, roc_curve};
use neuroloop::nn::train::loss_and_accuracy;
use neuroloop::nn::{cycle_to_chw, train, CnnModel, CnnShape, LodConfig, TrainConfig};
use neuroloop::session::{CycleTensor, Rhythm, CYCLE_LEN};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn block(mut data: Vec<f64>, channels: usize) -> FeatureBlock {
    let len = data.len() / channels;
    data.truncate(channels * len);
    FeatureBlock::new(vec![channels, len], data, 1).unwrap()
}

fn random_tensor(rng: &mut ChaCha8Rng, scale: f64, season: SeasonState) -> CycleTensor {
    CycleTensor {
        data: (0..CYCLE_LEN)
            .map(|_| rng.random_range(-scale..scale))
            .collect(),
        label: LabelDistribution::one_hot(season),
        attention: rng.random_range(0.0..=100.0),
        meditation: rng.random_range(0.0..=100.0),
        rhythm: Rhythm {
            bpm: 115,
            density: 5,
            style: "jazz".into(),
        },
    }
}

proptest! {
    #[test]
    fn softmax_is_a_distribution(logits in prop::collection::vec(-700.0f64..700.0, 1..10)) {
        let p = softmax(&logits);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|x| (0.0..=1.0).contains(x)));
    }

    #[test]
    fn mean_pool_keeps_the_mean(chunks in 1usize..20, k in 1usize..6, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..chunks * k).map(|_| rng.random_range(-5.0..5.0)).collect();
        let y = pool_time(&block(x.clone(), 1), k, PoolMode::Mean).unwrap();
        let (mx, my) = (x.iter().sum::<f64>() / x.len() as f64, y.data.iter().sum::<f64>() / y.data.len() as f64);
        prop_assert!((mx - my).abs() < 1e-12);
    }

    #[test]
    fn pool_of_one_is_identity(x in prop::collection::vec(-1e6f64..1e6, 2..64)) {
        for mode in [PoolMode::Max, PoolMode::Mean] {
            prop_assert_eq!(&pool_time(&block(x.clone(), 2), 1, mode).unwrap().data, &x[..x.len() / 2 * 2]);
        }
    }

    #[test]
    fn pooling_is_linear_in_mean_mode(
        x in prop::collection::vec(-10.0f64..10.0, 24),
        y in prop::collection::vec(-10.0f64..10.0, 24),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
        k in 1usize..7,
    ) {
        let mix: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
        let lhs = pool_time(&block(mix, 1), k, PoolMode::Mean).unwrap();
        let px = pool_time(&block(x, 1), k, PoolMode::Mean).unwrap();
        let py = pool_time(&block(y, 1), k, PoolMode::Mean).unwrap();
        for i in 0..lhs.data.len() {
            prop_assert!((lhs.data[i] - (a * px.data[i] + b * py.data[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn sse_is_a_nonnegative_distance(x in prop::collection::vec(-10.0f64..10.0, 1..40), shift in -1.0f64..1.0) {
        let bx = block(x.clone(), 1);
        prop_assert_eq!(screen_space_error(&bx, &bx).unwrap(), 0.0);
        let moved = block(x.iter().map(|v| v + shift).collect(), 1);
        prop_assert!((screen_space_error(&bx, &moved).unwrap() - shift * shift).abs() < 1e-12);
    }

    #[test]
    fn confusion_counts_every_sample(
        rows in prop::collection::vec((prop::array::uniform4(0.0f64..1.0), 0usize..4), 1..80),
    ) {
        let probs: Vec<Vec<f64>> = rows.iter().map(|(p, _)| p.to_vec()).collect();
        let truth: Vec<usize> = rows.iter().map(|(_, t)| *t).collect();
        let m = evaluate(&probs, &truth).unwrap();
        let total: usize = m.confusion.iter().flatten().sum();
        prop_assert_eq!(total, rows.len());
        prop_assert_eq!(m.samples, rows.len());
        for v in [m.accuracy, m.precision, m.recall, m.f1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        for a in m.auc.iter().flatten() {
            prop_assert!((0.0..=1.0).contains(a));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn forward_stays_finite(seed in any::<u64>(), scale in prop::sample::select(vec![1e-6, 1.0, 1e3, 1e6])) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lod = LodConfig { k: rng.random_range(1..4), ..LodConfig::default() };
        let model = CnnModel::new(CnnShape::default(), lod, seed);
        let t = random_tensor(&mut rng, scale, SeasonState::Spring);
        let p = model.predict_cycle(&t);
        prop_assert!(p.probs.iter().all(|x| x.is_finite()));
        prop_assert!((p.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let cache = model.forward(&cycle_to_chw(&t), &ContextVector { attention: t.attention, meditation: t.meditation });
        prop_assert!(model.pooling_sse(&cache).is_finite());
    }
}

#[test]
fn roc_of_perfect_scores_has_unit_area() {
    let curve = roc_curve(&[0.9, 0.8, 0.3, 0.1], &[true, true, false, false]);
    assert_eq!(auc(&curve), 1.0);
    let curve = roc_curve(&[0.5; 4], &[true, false, true, false]);
    assert_eq!(auc(&curve), 0.5);
}

#[test]
fn early_stopping_restores_best_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    // pure noise labels: validation loss turns upward once training overfits
    let mut make = |n: usize| -> Vec<CycleTensor> {
        (0..n)
            .map(|i| random_tensor(&mut rng, 1.0, SeasonState::ALL[i % 4]))
            .collect()
    };
    let (train_set, val_set) = (make(24), make(12));
    let cfg = TrainConfig {
        lr: 3e-3,
        batch_size: 8,
        max_epochs: 30,
        patience: 3,
        seed: 0,
    };
    let mut model = CnnModel::new(CnnShape::default(), LodConfig::default(), 0);
    let history = train(&mut model, &train_set, &val_set, &cfg, None).unwrap();
    let best = history
        .epochs
        .iter()
        .map(|e| e.val_loss)
        .fold(f64::INFINITY, f64::min);
    assert_eq!(history.best_val_loss, best);
    assert_eq!(history.epochs[history.best_epoch - 1].val_loss, best);
    assert!(history.stopped_early, "{:?}", history.epochs);
    assert_eq!(history.epochs.len(), history.best_epoch + cfg.patience);
    let (val_loss, _) = loss_and_accuracy(&model, &val_set);
    assert!((val_loss - best).abs() < 1e-12, "{val_loss} vs {best}");
}
