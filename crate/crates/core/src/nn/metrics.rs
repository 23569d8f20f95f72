//! Hard-label classification metrics with one-vs-rest ROC curves.

use serde::{Deserialize, Serialize};

use crate::labels::NUM_STATES;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub samples: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `confusion[true][predicted]`
    pub confusion: [[usize; NUM_STATES]; NUM_STATES],
    /// `None` for a class with no positives or no negatives.
    pub auc: [Option<f64>; NUM_STATES],
    pub macro_auc: f64,
    pub roc: Vec<Vec<RocPoint>>,
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

/// One-vs-rest ROC over all distinct score thresholds, highest first.
pub fn roc_curve(scores: &[f64], positive: &[bool]) -> Vec<RocPoint> {
    let p = positive.iter().filter(|&&b| b).count() as f64;
    let n = positive.len() as f64 - p;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));

    let mut pts = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if positive[order[i]] {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        pts.push(RocPoint {
            threshold: s,
            fpr: if n > 0.0 { fp / n } else { 0.0 },
            tpr: if p > 0.0 { tp / p } else { 0.0 },
        });
    }
    pts
}

/// Trapezoid-rule area under an ROC curve.
pub fn auc(curve: &[RocPoint]) -> f64 {
    curve
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

/// Compute metrics from per-sample class probabilities and true classes.
///
/// Macro averages run over the classes that occur among either the true or
/// the predicted labels; an undefined ratio counts as 0.
pub fn evaluate(probs: &[Vec<f64>], truth: &[usize]) -> Option<Metrics> {
    if probs.is_empty() {
        return None;
    }
    let mut confusion = [[0usize; NUM_STATES]; NUM_STATES];
    for (p, &t) in probs.iter().zip(truth) {
        confusion[t][argmax(p)] += 1;
    }
    let total = probs.len();
    let correct: usize = (0..NUM_STATES).map(|c| confusion[c][c]).sum();

    let mut present = 0usize;
    let (mut sp, mut sr, mut sf) = (0.0, 0.0, 0.0);
    for c in 0..NUM_STATES {
        let actual: usize = confusion[c].iter().sum();
        let predicted: usize = (0..NUM_STATES).map(|r| confusion[r][c]).sum();
        if actual == 0 && predicted == 0 {
            continue;
        }
        present += 1;
        let tp = confusion[c][c] as f64;
        let prec = if predicted > 0 {
            tp / predicted as f64
        } else {
            0.0
        };
        let rec = if actual > 0 { tp / actual as f64 } else { 0.0 };
        let f1 = if prec + rec > 0.0 {
            2.0 * prec * rec / (prec + rec)
        } else {
            0.0
        };
        sp += prec;
        sr += rec;
        sf += f1;
    }
    let k = present.max(1) as f64;

    let mut roc = Vec::with_capacity(NUM_STATES);
    let mut aucs = [None; NUM_STATES];
    for c in 0..NUM_STATES {
        let scores: Vec<f64> = probs.iter().map(|p| p[c]).collect();
        let pos: Vec<bool> = truth.iter().map(|&t| t == c).collect();
        let curve = roc_curve(&scores, &pos);
        let npos = pos.iter().filter(|&&b| b).count();
        if npos > 0 && npos < pos.len() {
            aucs[c] = Some(auc(&curve));
        }
        roc.push(curve);
    }
    let defined: Vec<f64> = aucs.iter().flatten().copied().collect();
    let macro_auc = if defined.is_empty() {
        f64::NAN
    } else {
        defined.iter().sum::<f64>() / defined.len() as f64
    };

    Some(Metrics {
        samples: total,
        accuracy: correct as f64 / total as f64,
        precision: sp / k,
        recall: sr / k,
        f1: sf / k,
        confusion,
        auc: aucs,
        macro_auc,
        roc,
    })
}
