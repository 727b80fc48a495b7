//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

use failsafe_core::matrix::Matrix;
use failsafe_core::scores::{Prediction, ScoreSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random score set with up to `max_n` rows and `max_k` classes. Logits are
/// rounded to a coarse grid on odd seeds so that tied confidences occur.
pub fn random_scores(seed: u64, max_n: usize, max_k: usize) -> ScoreSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=max_n);
    let k = rng.random_range(2..=max_k);
    let coarse = seed % 2 == 1;
    let data = (0..n * k)
        .map(|_| {
            let z: f64 = rng.random_range(-3.0..3.0);
            if coarse {
                (z * 2.0).round() / 2.0
            } else {
                z
            }
        })
        .collect();
    let labels = (0..n).map(|_| rng.random_range(0..k)).collect();
    ScoreSet::new(Matrix::from_vec(n, k, data).unwrap(), labels, None).unwrap()
}

/// Fraction of (correct, error) pairs ordered correctly; ties count half.
pub fn pairwise_auroc(preds: &[Prediction]) -> Option<f64> {
    let pos: Vec<f64> = preds.iter().filter(|p| p.is_correct).map(|p| p.confidence).collect();
    let neg: Vec<f64> = preds.iter().filter(|p| !p.is_correct).map(|p| p.confidence).collect();
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut wins = 0.0;
    for a in &pos {
        for b in &neg {
            wins += if a > b {
                1.0
            } else if a == b {
                0.5
            } else {
                0.0
            };
        }
    }
    Some(wins / (pos.len() * neg.len()) as f64)
}

/// Step-sum AUPR from every distinct threshold, each evaluated from scratch.
pub fn threshold_aupr(scored: &[(f64, bool)]) -> Option<f64> {
    let total = scored.iter().filter(|s| s.1).count();
    if total == 0 {
        return None;
    }
    let mut thresholds: Vec<f64> = scored.iter().map(|s| s.0).collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for t in thresholds {
        let tp = scored.iter().filter(|s| s.0 >= t && s.1).count() as f64;
        let accepted = scored.iter().filter(|s| s.0 >= t).count() as f64;
        let recall = tp / total as f64;
        area += (recall - prev_recall) * (tp / accepted);
        prev_recall = recall;
    }
    Some(area)
}

/// AURC and E-AURC straight from the definition: the mean over k of the
/// error rate among the k most confident predictions, minus the same mean
/// for the ordering with all correct predictions first.
pub fn definitional_aurc(preds: &[Prediction]) -> (f64, f64) {
    let n = preds.len();
    let key = |p: &Prediction| (-p.confidence, p.sample);
    let mut aurc = 0.0;
    let mut best = 0.0;
    let correct = preds.iter().filter(|p| p.is_correct).count();
    for k in 1..=n {
        let mut top: Vec<&Prediction> = preds.iter().collect();
        top.sort_by(|a, b| key(a).partial_cmp(&key(b)).unwrap());
        let errors = top[..k].iter().filter(|p| !p.is_correct).count();
        aurc += errors as f64 / k as f64;
        best += k.saturating_sub(correct) as f64 / k as f64;
    }
    (aurc / n as f64, (aurc - best) / n as f64)
}

/// Confidence (max softmax) computed directly with exp, for cross-checks.
pub fn plain_confidence(logits: &[f64]) -> f64 {
    let m = logits.iter().cloned().fold(f64::MIN, f64::max);
    let s: f64 = logits.iter().map(|z| (z - m).exp()).sum();
    1.0 / s
}
