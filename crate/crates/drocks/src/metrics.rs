//! Evaluation metrics, cross-method rank summaries, communication
//! accounting, and kernel-survival tracking.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rocket::KernelSeed;

/// Classification quality on one evaluation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class_f1: Vec<f64>,
    /// True-label counts per class.
    pub support: Vec<usize>,
}

fn check_labels(y: &[usize], class_count: usize) -> Result<()> {
    if let Some(&l) = y.iter().find(|&&l| l >= class_count) {
        return Err(Error::InvalidInput(format!(
            "label {l} out of range for {class_count} classes"
        )));
    }
    Ok(())
}

/// Accuracy, macro-F1 and per-class F1 in one pass.
///
/// Per class, `F1 = 2*prec*rec / (prec + rec)` with the value 0 whenever
/// the denominator is 0; macro-F1 averages over all `C` classes, so
/// classes absent from both truth and prediction contribute 0.
pub fn evaluate(y_true: &[usize], y_pred: &[usize], class_count: usize) -> Result<MetricReport> {
    if y_true.is_empty() || y_true.len() != y_pred.len() {
        return Err(Error::InvalidInput(
            "evaluation requires equal-length non-empty label vectors".into(),
        ));
    }
    if class_count == 0 {
        return Err(Error::InvalidInput("class count must be positive".into()));
    }
    check_labels(y_true, class_count)?;
    check_labels(y_pred, class_count)?;

    let mut tp = vec![0usize; class_count];
    let mut fp = vec![0usize; class_count];
    let mut fn_ = vec![0usize; class_count];
    let mut support = vec![0usize; class_count];
    let mut correct = 0usize;
    for (&t, &p) in y_true.iter().zip(y_pred) {
        support[t] += 1;
        if t == p {
            tp[t] += 1;
            correct += 1;
        } else {
            fp[p] += 1;
            fn_[t] += 1;
        }
    }

    let per_class_f1: Vec<f64> = (0..class_count)
        .map(|c| {
            let denom = 2 * tp[c] + fp[c] + fn_[c];
            if denom == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .collect();
    let macro_f1 = per_class_f1.iter().sum::<f64>() / class_count as f64;
    Ok(MetricReport {
        accuracy: correct as f64 / y_true.len() as f64,
        macro_f1,
        per_class_f1,
        support,
    })
}

/// Macro-averaged F1 over all `class_count` classes.
pub fn macro_f1(y_true: &[usize], y_pred: &[usize], class_count: usize) -> Result<f64> {
    Ok(evaluate(y_true, y_pred, class_count)?.macro_f1)
}

/// Fraction of exactly-matching predictions.
pub fn accuracy(y_true: &[usize], y_pred: &[usize]) -> Result<f64> {
    if y_true.is_empty() || y_true.len() != y_pred.len() {
        return Err(Error::InvalidInput(
            "accuracy requires equal-length non-empty label vectors".into(),
        ));
    }
    let correct = y_true.iter().zip(y_pred).filter(|(t, p)| t == p).count();
    Ok(correct as f64 / y_true.len() as f64)
}

/// Per-method mean rank across datasets.
///
/// `method_scores[m][d]` is method `m`'s score on dataset `d`. Within a
/// dataset, methods rank by descending score and ties receive the average
/// of the ranks they span.
pub fn mean_ranks(method_scores: &[Vec<f64>]) -> Result<Vec<f64>> {
    if method_scores.is_empty() {
        return Err(Error::InvalidInput("no methods to rank".into()));
    }
    let datasets = method_scores[0].len();
    if datasets == 0 {
        return Err(Error::InvalidInput("no datasets to rank over".into()));
    }
    if method_scores.iter().any(|s| s.len() != datasets) {
        return Err(Error::InvalidInput(
            "every method must be scored on every dataset".into(),
        ));
    }
    if method_scores.iter().flatten().any(|s| s.is_nan()) {
        return Err(Error::InvalidInput("missing (NaN) score".into()));
    }

    let methods = method_scores.len();
    let mut totals = vec![0.0; methods];
    for d in 0..datasets {
        let mut order: Vec<usize> = (0..methods).collect();
        order.sort_by(|&a, &b| {
            method_scores[b][d].partial_cmp(&method_scores[a][d]).unwrap()
        });
        // Walk tie groups; each member gets the mean of the ranks spanned.
        let mut i = 0;
        while i < methods {
            let mut j = i;
            while j + 1 < methods
                && method_scores[order[j + 1]][d] == method_scores[order[i]][d]
            {
                j += 1;
            }
            let rank = (i + 1 + j + 1) as f64 / 2.0;
            for &m in &order[i..=j] {
                totals[m] += rank;
            }
            i = j + 1;
        }
    }
    Ok(totals.into_iter().map(|t| t / datasets as f64).collect())
}

/// Which earlier round a handoff's seeds are compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurvivalBaseline {
    FirstRound,
    PreviousRound,
}

/// Per-round fraction of handoff seeds already present in the baseline
/// round's handoff. Round 1 is 1.0 by definition.
pub fn survival_fraction(
    seeds_per_round: &[Vec<KernelSeed>],
    baseline: SurvivalBaseline,
) -> Result<Vec<f64>> {
    if seeds_per_round.is_empty() {
        return Err(Error::InvalidInput("no rounds to track".into()));
    }
    let mut out = Vec::with_capacity(seeds_per_round.len());
    for (i, seeds) in seeds_per_round.iter().enumerate() {
        if i == 0 {
            out.push(1.0);
            continue;
        }
        let reference: HashSet<KernelSeed> = match baseline {
            SurvivalBaseline::FirstRound => seeds_per_round[0].iter().copied().collect(),
            SurvivalBaseline::PreviousRound => seeds_per_round[i - 1].iter().copied().collect(),
        };
        if seeds.is_empty() {
            return Err(Error::InvalidInput(format!("round {} has no seeds", i + 1)));
        }
        let kept = seeds.iter().filter(|s| reference.contains(s)).count();
        out.push(kept as f64 / seeds.len() as f64);
    }
    Ok(out)
}

/// Per-round message and byte accounting for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommReport {
    pub method: String,
    pub rounds: usize,
    pub messages_per_round: Vec<usize>,
    pub bytes_per_round: Vec<usize>,
    pub total_messages: usize,
    pub total_bytes: usize,
}

impl CommReport {
    pub fn new(method: &str, messages_per_round: Vec<usize>, bytes_per_round: Vec<usize>) -> Self {
        let total_messages = messages_per_round.iter().sum();
        let total_bytes = bytes_per_round.iter().sum();
        Self {
            method: method.to_string(),
            rounds: messages_per_round.len(),
            messages_per_round,
            bytes_per_round,
            total_messages,
            total_bytes,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let y = vec![0, 1, 2, 1, 0];
        let r = evaluate(&y, &y, 3).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.macro_f1, 1.0);
        assert_eq!(r.support, vec![2, 2, 1]);
    }

    #[test]
    fn all_predicted_one_class() {
        // Balanced binary truth, everything predicted 0: class 0 has
        // prec 1/2, rec 1 -> F1 2/3; class 1 has no predictions -> 0.
        let y_true = vec![0, 0, 1, 1];
        let y_pred = vec![0, 0, 0, 0];
        let f1 = macro_f1(&y_true, &y_pred, 2).unwrap();
        assert!((f1 - 0.3333).abs() < 1e-4, "{f1}");
    }

    #[test]
    fn absent_class_contributes_zero() {
        // 3 classes but class 2 never appears: mean still divides by 3.
        let y_true = vec![0, 1];
        let y_pred = vec![0, 1];
        let f1 = macro_f1(&y_true, &y_pred, 3).unwrap();
        assert!((f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_input_rejected() {
        assert!(matches!(macro_f1(&[], &[], 2), Err(Error::InvalidInput(_))));
        assert!(matches!(accuracy(&[], &[]), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn out_of_range_label_rejected() {
        assert!(matches!(
            macro_f1(&[0, 3], &[0, 0], 2),
            Err(Error::InvalidInput(_))
        ));
    }

    /// Independent oracle: build the full confusion matrix, then apply
    /// the definitions literally.
    fn f1_oracle(y_true: &[usize], y_pred: &[usize], c: usize) -> (f64, f64) {
        let mut cm = vec![vec![0usize; c]; c];
        for (&t, &p) in y_true.iter().zip(y_pred) {
            cm[t][p] += 1;
        }
        let mut f1_sum = 0.0;
        for k in 0..c {
            let tp = cm[k][k] as f64;
            let pred_k: f64 = (0..c).map(|t| cm[t][k] as f64).sum();
            let true_k: f64 = (0..c).map(|p| cm[k][p] as f64).sum();
            let prec = if pred_k > 0.0 { tp / pred_k } else { 0.0 };
            let rec = if true_k > 0.0 { tp / true_k } else { 0.0 };
            if prec + rec > 0.0 {
                f1_sum += 2.0 * prec * rec / (prec + rec);
            }
        }
        let correct: usize = (0..c).map(|k| cm[k][k]).sum();
        (correct as f64 / y_true.len() as f64, f1_sum / c as f64)
    }

    #[test]
    fn random_cases_match_confusion_matrix_oracle() {
        use rand::Rng;
        let mut r = crate::rng::stream(1, &[80]);
        for case in 0..500 {
            let c = r.random_range(2..6usize);
            let n = r.random_range(1..40usize);
            let y_true: Vec<usize> = (0..n).map(|_| r.random_range(0..c)).collect();
            let y_pred: Vec<usize> = (0..n).map(|_| r.random_range(0..c)).collect();
            let rep = evaluate(&y_true, &y_pred, c).unwrap();
            let (acc_o, f1_o) = f1_oracle(&y_true, &y_pred, c);
            assert!((rep.accuracy - acc_o).abs() < 1e-12, "case {case}");
            assert!((rep.macro_f1 - f1_o).abs() < 1e-12, "case {case}");
        }
    }

    #[test]
    fn macro_f1_equals_accuracy_on_diagonal_confusion() {
        let y = vec![0, 0, 1, 1, 2, 2, 2];
        let r = evaluate(&y, &y, 3).unwrap();
        assert_eq!(r.accuracy, r.macro_f1);
    }

    #[test]
    fn ranks_dominating_method() {
        let scores = vec![vec![0.9, 0.8, 0.7], vec![0.5, 0.4, 0.3]];
        assert_eq!(mean_ranks(&scores).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn ranks_tie_averages() {
        let scores = vec![vec![0.5, 0.9], vec![0.5, 0.1]];
        let ranks = mean_ranks(&scores).unwrap();
        assert_eq!(ranks, vec![(1.5 + 1.0) / 2.0, (1.5 + 2.0) / 2.0]);
    }

    #[test]
    fn ranks_match_brute_force_oracle() {
        use rand::Rng;
        let mut r = crate::rng::stream(2, &[81]);
        for _ in 0..200 {
            let methods = 3;
            let datasets = 5;
            let scores: Vec<Vec<f64>> = (0..methods)
                .map(|_| (0..datasets).map(|_| (r.random_range(0..5) as f64) / 4.0).collect())
                .collect();
            let got = mean_ranks(&scores).unwrap();

            let mut want = vec![0.0; methods];
            for d in 0..datasets {
                for m in 0..methods {
                    let better = (0..methods)
                        .filter(|&o| scores[o][d] > scores[m][d])
                        .count() as f64;
                    let equal = (0..methods)
                        .filter(|&o| scores[o][d] == scores[m][d])
                        .count() as f64;
                    // rank = 1 + #better + (#equal-including-self - 1)/2
                    want[m] += better + (equal + 1.0) / 2.0;
                }
            }
            for w in &mut want {
                *w /= datasets as f64;
            }
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rank_conservation() {
        use rand::Rng;
        let mut r = crate::rng::stream(3, &[82]);
        let methods = 4;
        let scores: Vec<Vec<f64>> = (0..methods)
            .map(|_| (0..6).map(|_| r.random_range(0.0..1.0)).collect())
            .collect();
        let ranks = mean_ranks(&scores).unwrap();
        let sum: f64 = ranks.iter().sum();
        let want = (methods * (methods + 1)) as f64 / 2.0;
        assert!((sum - want).abs() < 1e-12);
    }

    #[test]
    fn ranks_reject_missing_scores() {
        assert!(mean_ranks(&[vec![0.5], vec![f64::NAN]]).is_err());
        assert!(mean_ranks(&[vec![0.5, 0.6], vec![0.4]]).is_err());
    }

    fn seeds(v: &[u64]) -> Vec<KernelSeed> {
        v.iter().map(|&s| KernelSeed(s)).collect()
    }

    #[test]
    fn survival_first_round_is_one() {
        let rounds = vec![seeds(&[1, 2, 3])];
        assert_eq!(
            survival_fraction(&rounds, SurvivalBaseline::FirstRound).unwrap(),
            vec![1.0]
        );
    }

    #[test]
    fn survival_full_replacement_drops_to_zero() {
        let rounds = vec![seeds(&[1, 2]), seeds(&[3, 4]), seeds(&[5, 6])];
        assert_eq!(
            survival_fraction(&rounds, SurvivalBaseline::FirstRound).unwrap(),
            vec![1.0, 0.0, 0.0]
        );
        assert_eq!(
            survival_fraction(&rounds, SurvivalBaseline::PreviousRound).unwrap(),
            vec![1.0, 0.0, 0.0]
        );
    }

    #[test]
    fn survival_frozen_selection_stays_one() {
        let rounds = vec![seeds(&[1, 2, 3]); 5];
        assert_eq!(
            survival_fraction(&rounds, SurvivalBaseline::FirstRound).unwrap(),
            vec![1.0; 5]
        );
    }

    #[test]
    fn survival_partial_and_baseline_flag() {
        let rounds = vec![seeds(&[1, 2, 3, 4]), seeds(&[1, 2, 9, 10]), seeds(&[1, 9, 11, 12])];
        assert_eq!(
            survival_fraction(&rounds, SurvivalBaseline::FirstRound).unwrap(),
            vec![1.0, 0.5, 0.25]
        );
        assert_eq!(
            survival_fraction(&rounds, SurvivalBaseline::PreviousRound).unwrap(),
            vec![1.0, 0.5, 0.5]
        );
    }

    #[test]
    fn comm_report_totals() {
        let r = CommReport::new("drocks", vec![4, 4, 3], vec![400, 400, 300]);
        assert_eq!(r.rounds, 3);
        assert_eq!(r.total_messages, 11);
        assert_eq!(r.total_bytes, 1100);
    }
}
