//! Confusion matrices, classification metrics and the Monte Carlo harness.

mod benchmark;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use benchmark::{
    run_benchmark, BenchmarkConfig, BenchmarkResults, BenchmarkRow, CorpusSource, MeanCurvePoint, RESULTS_HEADER,
};

/// `k × k` counts, rows indexed by actual class and columns by prediction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        ConfusionMatrix {
            k,
            counts: vec![0; k * k],
        }
    }

    /// Position-aligned actual and predicted classes.
    pub fn from_labels(actual: &[usize], predicted: &[usize], k: usize) -> Result<Self> {
        if actual.len() != predicted.len() {
            return Err(Error::IdMismatch(format!(
                "{} actual labels vs {} predictions",
                actual.len(),
                predicted.len()
            )));
        }
        let mut m = ConfusionMatrix::new(k);
        for (&a, &p) in actual.iter().zip(predicted) {
            m.record(a, p)?;
        }
        Ok(m)
    }

    pub fn record(&mut self, actual: usize, predicted: usize) -> Result<()> {
        if actual >= self.k || predicted >= self.k {
            return Err(Error::invalid("class", format!("({actual}, {predicted}) out of range for {} classes", self.k)));
        }
        self.counts[actual * self.k + predicted] += 1;
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, actual: usize, predicted: usize) -> u64 {
        self.counts[actual * self.k + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn diagonal(&self) -> u64 {
        (0..self.k).map(|c| self.get(c, c)).sum()
    }
}

/// Builds a confusion matrix from id-keyed labels; both maps must cover
/// exactly the same documents.
pub fn confusion(actual: &BTreeMap<String, usize>, predicted: &BTreeMap<String, usize>, k: usize) -> Result<ConfusionMatrix> {
    if let Some(id) = actual.keys().find(|id| !predicted.contains_key(*id)) {
        return Err(Error::IdMismatch(format!("`{id}` has no prediction")));
    }
    if let Some(id) = predicted.keys().find(|id| !actual.contains_key(*id)) {
        return Err(Error::IdMismatch(format!("`{id}` has no ground truth")));
    }
    let mut m = ConfusionMatrix::new(k);
    for (id, &a) in actual {
        m.record(a, predicted[id])?;
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Some denominator was zero and the affected value was set to 0.
    pub undefined: bool,
}

/// Metrics for one evaluation of the model, plus the loop bookkeeping that
/// goes with it.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricRecord {
    pub iteration: usize,
    pub n_labeled: usize,
    pub per_class: Vec<ClassMetrics>,
    pub accuracy: f64,
    pub macro_f1: f64,
    /// Class whose precision/recall/F1 are the headline numbers; macro
    /// averages are reported when `None`.
    pub positive_class: Option<usize>,
    /// Documents that were scored; 0 when no held-out truth exists.
    pub n_evaluated: u64,
    /// Set when the matrix was empty or a denominator was zero.
    pub undefined: bool,
    pub objective: Option<f64>,
    /// Share of unlabeled documents whose predicted class changed since the
    /// previous fit.
    pub prediction_change: Option<f64>,
    pub wall_clock_seconds: f64,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Accuracy, per-class precision/recall/F1 and macro-F1. Zero denominators
/// yield 0 and set the `undefined` flags.
pub fn metrics_from_confusion(m: &ConfusionMatrix, positive_class: Option<usize>) -> MetricRecord {
    let k = m.k();
    let total = m.total();
    let per_class: Vec<ClassMetrics> = (0..k)
        .map(|c| {
            let tp = m.get(c, c);
            let predicted: u64 = (0..k).map(|a| m.get(a, c)).sum();
            let actual: u64 = (0..k).map(|p| m.get(c, p)).sum();
            let (precision, pu) = ratio(tp, predicted);
            let (recall, ru) = ratio(tp, actual);
            ClassMetrics {
                precision,
                recall,
                f1: harmonic(precision, recall),
                undefined: pu || ru,
            }
        })
        .collect();
    let (accuracy, au) = ratio(m.diagonal(), total);
    let macro_f1 = if k == 0 {
        0.0
    } else {
        per_class.iter().map(|c| c.f1).sum::<f64>() / k as f64
    };
    let undefined = au || per_class.iter().any(|c| c.undefined);
    MetricRecord {
        per_class,
        accuracy,
        macro_f1,
        positive_class,
        n_evaluated: total,
        undefined,
        ..MetricRecord::default()
    }
}

impl MetricRecord {
    /// `(precision, recall, f1)` of the positive class, or macro averages.
    pub fn headline(&self) -> (f64, f64, f64) {
        match self.positive_class.and_then(|c| self.per_class.get(c)) {
            Some(c) => (c.precision, c.recall, c.f1),
            None if self.per_class.is_empty() => (0.0, 0.0, 0.0),
            None => {
                let n = self.per_class.len() as f64;
                (
                    self.per_class.iter().map(|c| c.precision).sum::<f64>() / n,
                    self.per_class.iter().map(|c| c.recall).sum::<f64>() / n,
                    self.macro_f1,
                )
            }
        }
    }

    pub fn f1(&self) -> f64 {
        self.headline().2
    }

    pub fn has_evaluation(&self) -> bool {
        self.n_evaluated > 0
    }

    /// `iteration,n_labeled,precision,recall,f1,objective`; quality columns
    /// are empty when nothing was evaluated.
    pub fn csv_row(&self) -> String {
        let objective = self.objective.map(|o| o.to_string()).unwrap_or_default();
        if self.has_evaluation() {
            let (p, r, f) = self.headline();
            format!("{},{},{p},{r},{f},{objective}", self.iteration, self.n_labeled)
        } else {
            format!("{},{},,,,{objective}", self.iteration, self.n_labeled)
        }
    }
}

pub const METRICS_HEADER: &str = "iteration,n_labeled,precision,recall,f1,objective";

pub fn metrics_csv(history: &[MetricRecord]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in history {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn binary(tp: u64, fp: u64, fn_: u64, tn: u64) -> ConfusionMatrix {
        let mut m = ConfusionMatrix::new(2);
        m.counts = vec![tn, fp, fn_, tp];
        m
    }

    #[test]
    fn perfect_predictions_are_diagonal() {
        let m = ConfusionMatrix::from_labels(&[0, 1, 2, 1], &[0, 1, 2, 1], 3).unwrap();
        assert_eq!(m.diagonal(), 4);
        let r = metrics_from_confusion(&m, None);
        assert_eq!(r.accuracy, 1.0);
        assert!(r.per_class.iter().all(|c| c.precision == 1.0 && c.recall == 1.0 && c.f1 == 1.0));
    }

    #[test]
    fn all_negative_predictor_on_rare_class() {
        let actual: Vec<usize> = (0..100).map(|i| usize::from(i == 0)).collect();
        let m = ConfusionMatrix::from_labels(&actual, &[0; 100], 2).unwrap();
        let r = metrics_from_confusion(&m, Some(1));
        assert_relative_eq!(r.accuracy, 0.99);
        assert_eq!(r.headline(), (0.0, 0.0, 0.0));
        assert!(r.per_class[1].undefined);
    }

    #[test]
    fn balanced_errors_give_half() {
        let r = metrics_from_confusion(&binary(1, 1, 1, 1), Some(1));
        assert_eq!(r.headline(), (0.5, 0.5, 0.5));
    }

    #[test]
    fn hand_evaluated_f1() {
        let r = metrics_from_confusion(&binary(8, 2, 4, 0), Some(1));
        let (p, rec, f1) = r.headline();
        assert_relative_eq!(p, 0.8, epsilon = 1e-15);
        assert_relative_eq!(rec, 2.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(f1, 0.727_272_727_272_727_3, epsilon = 1e-12);
    }

    #[test]
    fn empty_matrix_is_flagged() {
        let r = metrics_from_confusion(&ConfusionMatrix::new(2), Some(1));
        assert!(r.undefined);
        assert_eq!((r.accuracy, r.macro_f1), (0.0, 0.0));
        assert_eq!(r.csv_row(), "0,0,,,,");
    }

    #[test]
    fn id_sets_must_match() {
        let a: BTreeMap<String, usize> = [("a".into(), 1), ("b".into(), 0)].into();
        let p: BTreeMap<String, usize> = [("a".into(), 1), ("c".into(), 0)].into();
        assert!(matches!(confusion(&a, &p, 2), Err(Error::IdMismatch(_))));
        let m = confusion(&a, &a, 2).unwrap();
        assert_eq!(m.total(), 2);
    }

    proptest! {
        #[test]
        fn self_comparison_is_perfect(x in prop::collection::vec(0usize..4, 1..60)) {
            let m = ConfusionMatrix::from_labels(&x, &x, 4).unwrap();
            prop_assert_eq!(metrics_from_confusion(&m, None).accuracy, 1.0);
        }

        #[test]
        fn macro_f1_ignores_class_order(
            pairs in prop::collection::vec((0usize..3, 0usize..3), 1..80),
            perm in Just([2usize, 0, 1]).prop_shuffle(),
        ) {
            let (a, p): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
            let base = metrics_from_confusion(&ConfusionMatrix::from_labels(&a, &p, 3).unwrap(), None);
            let pa: Vec<usize> = a.iter().map(|&c| perm[c]).collect();
            let pp: Vec<usize> = p.iter().map(|&c| perm[c]).collect();
            let moved = metrics_from_confusion(&ConfusionMatrix::from_labels(&pa, &pp, 3).unwrap(), None);
            prop_assert!((base.macro_f1 - moved.macro_f1).abs() < 1e-12);
        }
    }
}
