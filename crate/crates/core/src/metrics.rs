//! Per-label confusion-matrix rates and ROC-AUC.

use serde::{Deserialize, Serialize};

use crate::classifier::ClassifierModel;
use crate::error::{Error, Result};
use crate::label_stream::Boundary;
use crate::model::{LabelCombination, Sample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn record(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total()).unwrap_or(0.0)
    }

    /// `None` when there are no actual positives.
    pub fn sensitivity(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// `None` when there are no actual negatives.
    pub fn specificity(&self) -> Option<f64> {
        ratio(self.tn, self.tn + self.fp)
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Area under the ROC curve by the pairwise definition: the share of
/// (positive, negative) pairs where the positive scores higher, ties
/// counting one half. O(P * N).
pub fn roc_auc_pairwise(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_binary(scores, labels)?;
    let mut wins = 0.0;
    let mut pairs = 0usize;
    for (sp, _) in scores.iter().zip(labels).filter(|(_, &l)| l) {
        for (sn, _) in scores.iter().zip(labels).filter(|(_, &l)| !l) {
            pairs += 1;
            if sp > sn {
                wins += 1.0;
            } else if sp == sn {
                wins += 0.5;
            }
        }
    }
    Ok(wins / pairs as f64)
}

fn check_binary(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            got: labels.len(),
        });
    }
    if let Some(bad) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::InvalidConfig(format!("score {bad} is not a number")));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::Undefined {
            what: "ROC-AUC",
            reason: "needs at least one positive and one negative",
        });
    }
    Ok(())
}

/// `(false positive rate, true positive rate)` at every distinct score
/// threshold, from `(0, 0)` to `(1, 1)`.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, f64)>> {
    check_binary(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let neg = labels.len() as f64 - pos;
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut points = vec![(0.0, 0.0)];
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        points.push((fp / neg, tp / pos));
    }
    Ok(points)
}

/// Trapezoidal area under [`roc_curve`]. Grouping tied scores into one curve
/// step makes this equal to [`roc_auc_pairwise`].
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let curve = roc_curve(scores, labels)?;
    Ok(curve
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMetrics {
    pub label: String,
    pub counts: ConfusionCounts,
    pub accuracy: f64,
    /// Reported as 0 when undefined; see `sensitivity_defined`.
    pub sensitivity: f64,
    pub sensitivity_defined: bool,
    pub specificity: f64,
    pub specificity_defined: bool,
    pub auc: Option<f64>,
}

impl LabelMetrics {
    fn from_counts(label: &str, counts: ConfusionCounts, auc: Option<f64>) -> Self {
        Self {
            label: label.to_string(),
            accuracy: counts.accuracy(),
            sensitivity: counts.sensitivity().unwrap_or(0.0),
            sensitivity_defined: counts.sensitivity().is_some(),
            specificity: counts.specificity().unwrap_or(0.0),
            specificity_defined: counts.specificity().is_some(),
            auc,
            counts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub per_label: Vec<LabelMetrics>,
    pub macro_accuracy: f64,
    pub exact_match: f64,
}

/// Thresholds predictions on `test` and scores each label against the truth.
pub fn evaluate(
    model: &ClassifierModel,
    test: &[&Sample],
    threshold: f64,
    boundary: Boundary,
) -> Result<Evaluation> {
    if test.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let m = model.num_labels();
    let mut scores = vec![Vec::with_capacity(test.len()); m];
    let mut truths = vec![Vec::with_capacity(test.len()); m];
    let mut counts = vec![ConfusionCounts::default(); m];
    let mut exact = 0usize;
    for s in test {
        let truth = s
            .truth
            .as_ref()
            .ok_or_else(|| Error::MissingTruth(s.id.clone()))?;
        truth.check_len(m)?;
        let p = model.predict_one(&s.features)?;
        let mut all = true;
        for (j, &pj) in p.as_slice().iter().enumerate() {
            let predicted = boundary.is_positive(pj, threshold);
            counts[j].record(predicted, truth.get(j));
            all &= predicted == truth.get(j);
            scores[j].push(pj);
            truths[j].push(truth.get(j));
        }
        exact += usize::from(all);
    }
    let per_label: Vec<LabelMetrics> = model
        .schema()
        .labels()
        .iter()
        .enumerate()
        .map(|(j, name)| {
            LabelMetrics::from_counts(name, counts[j], roc_auc(&scores[j], &truths[j]).ok())
        })
        .collect();
    let macro_accuracy = per_label.iter().map(|l| l.accuracy).sum::<f64>() / m as f64;
    Ok(Evaluation {
        per_label,
        macro_accuracy,
        exact_match: exact as f64 / test.len() as f64,
    })
}

/// Combinations predicted for `test`, in order.
pub fn predict_combinations(
    model: &ClassifierModel,
    test: &[&Sample],
    threshold: f64,
    boundary: Boundary,
) -> Result<Vec<LabelCombination>> {
    test.iter()
        .map(|s| {
            let p = model.predict_one(&s.features)?;
            crate::label_stream::assign_pseudo_with(&p, threshold, boundary)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{init_model, TrainConfig};
    use crate::model::LabelSchema;

    #[test]
    fn confusion_worked_example() {
        let c = ConfusionCounts {
            tp: 3,
            fn_: 1,
            tn: 5,
            fp: 1,
        };
        assert_eq!(c.sensitivity(), Some(0.75));
        assert!((c.specificity().unwrap() - 0.833333).abs() < 1e-6);
        assert_eq!(c.accuracy(), 0.8);
    }

    #[test]
    fn no_positives_is_flagged() {
        let c = ConfusionCounts {
            tn: 4,
            fp: 1,
            ..Default::default()
        };
        let m = LabelMetrics::from_counts("P-effusion", c, None);
        assert_eq!(m.sensitivity, 0.0);
        assert!(!m.sensitivity_defined);
        assert!(m.specificity_defined);
    }

    #[test]
    fn auc_worked_example() {
        let s = [0.1, 0.4, 0.35, 0.8];
        let l = [false, false, true, true];
        assert!((roc_auc(&s, &l).unwrap() - 0.75).abs() < 1e-12);
        assert!((roc_auc_pairwise(&s, &l).unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn auc_separated_and_tied() {
        assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.3; 4], &[false, true, false, true]).unwrap(), 0.5);
        assert!(matches!(
            roc_auc(&[0.3, 0.4], &[true, true]),
            Err(Error::Undefined { .. })
        ));
    }

    #[test]
    fn curve_endpoints() {
        let curve = roc_curve(&[0.2, 0.6, 0.6, 0.9], &[false, true, false, true]).unwrap();
        assert_eq!(curve.first(), Some(&(0.0, 0.0)));
        assert_eq!(curve.last(), Some(&(1.0, 1.0)));
        assert_eq!(curve.len(), 4);
    }

    #[test]
    fn evaluate_perfect_predictions() {
        let schema = LabelSchema::new(["a", "b"], 0).unwrap();
        let mut model = init_model(&schema, 2, &TrainConfig::default()).unwrap();
        // label j positive iff x_j > 0
        model.set_head_params(&[50.0, 0.0, 0.0, 50.0, 0.0, 0.0]).unwrap();
        let samples: Vec<Sample> = [(1.0, -1.0), (-1.0, 1.0), (1.0, 1.0), (-1.0, -1.0)]
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| {
                Sample::new(format!("s{i}"), vec![x, y])
                    .with_truth(LabelCombination::new(vec![x > 0.0, y > 0.0]))
            })
            .collect();
        let refs: Vec<&Sample> = samples.iter().collect();
        let eval = evaluate(&model, &refs, 0.5, Boundary::Inclusive).unwrap();
        for l in &eval.per_label {
            assert_eq!((l.accuracy, l.sensitivity, l.specificity), (1.0, 1.0, 1.0));
            assert_eq!(l.counts.tp + l.counts.tn, l.counts.total());
            assert_eq!(l.auc, Some(1.0));
        }
        assert_eq!(eval.macro_accuracy, 1.0);
        assert_eq!(eval.exact_match, 1.0);
        assert!(evaluate(&model, &[], 0.5, Boundary::Inclusive).is_err());
    }
}
