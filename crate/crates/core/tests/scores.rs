mod common;

use common::random_scores;
use failsafe_core::matrix::Matrix;
use failsafe_core::scores::{load_scores, save_scores, split, ScoreSet, ScoresError, SplitSpec};
use proptest::prelude::*;

fn with_ids(scores: &ScoreSet) -> ScoreSet {
    let ids = (0..scores.len()).map(|i| format!("img-{i:04}")).collect();
    ScoreSet::new(scores.logits().clone(), scores.labels().to_vec(), Some(ids)).unwrap()
}

#[test]
fn csv_and_jsonl_round_trips_are_lossless() {
    let dir = tempfile::tempdir().unwrap();
    for seed in 0..20 {
        let scores = random_scores(seed, 60, 9)
            .map_logits(|z| z * std::f64::consts::PI / 7.0)
            .unwrap();
        for s in [scores.clone(), with_ids(&scores)] {
            for ext in ["csv", "jsonl"] {
                let path = dir.path().join(format!("s{seed}.{ext}"));
                save_scores(&s, &path).unwrap();
                assert_eq!(load_scores(&path).unwrap(), s, "seed {seed} {ext}");
            }
        }
    }
}

#[test]
fn probability_columns_become_log_probabilities() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.csv");
    std::fs::write(&path, "id,label,prob_0,prob_1\na,0,0.25,0.75\nb,1,1,0\n").unwrap();
    let s = load_scores(&path).unwrap();
    assert_eq!(s.logits().row(0), [0.25f64.ln(), 0.75f64.ln()]);
    assert!(s.logits().row(1)[1] < -690.0);
    assert_eq!(s.ids().unwrap(), ["a", "b"]);
}

#[test]
fn malformed_files_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, "id,label,logit_0,logit_1\na,0,1.0,2.0\nb,7,1.0,2.0\n").unwrap();
    assert!(matches!(load_scores(&path), Err(ScoresError::Parse { line: 3, .. })));
    std::fs::write(&path, "id,label,logit_0,logit_1\na,0,1.0,x\n").unwrap();
    assert!(matches!(load_scores(&path), Err(ScoresError::Parse { line: 2, .. })));
}

#[test]
fn nonfinite_logits_are_rejected() {
    let m = Matrix::from_rows(&[[0.0, f64::NAN]]).unwrap();
    assert!(matches!(
        ScoreSet::new(m, vec![0], None),
        Err(ScoresError::NonFiniteLogit { row: 0 })
    ));
}

proptest! {
    #[test]
    fn split_partitions_every_index(n in 10usize..500, seed in 0u64..100) {
        let spec = SplitSpec { train_fraction: 0.6, val_fraction: 0.2, test_fraction: 0.2, seed };
        let parts = split(n, &spec).unwrap();
        let mut all: Vec<usize> = parts.train.iter().chain(&parts.val).chain(&parts.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(split(n, &spec).unwrap(), parts);
    }
}
