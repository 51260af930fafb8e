//! The query, label and refit loop.

mod oracle;
mod session;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{predict, LabelStore, PosteriorMatrix};

pub use oracle::{reference_keyword_sets, Oracle, OracleResponse, SimulatedOracle};
pub use session::{
    export_predictions, load_oracle, read_events, run_active_loop, session_oracle, simulate, write_predictions, SessionEvent, Simulation, KeywordConfig, LoopOptions, LoopStatus,
    ModeKind, PendingQuery, Phase, Pool, PredictionRow, SessionConfig, SessionState, PREDICTIONS_HEADER,
};

pub const DEFAULT_BATCH_SIZE: usize = 20;
pub const DEFAULT_STOP_DELTA: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    Uncertainty,
    Random,
}

impl Strategy {
    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::Uncertainty => "uncertainty",
            Strategy::Random => "random",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uncertainty" => Ok(Strategy::Uncertainty),
            "random" => Ok(Strategy::Random),
            _ => Err(Error::invalid("strategy", format!("`{s}` is not one of uncertainty, random"))),
        }
    }
}

/// Up to `n` unlabeled documents to query next.
///
/// `Uncertainty` ranks by descending entropy of the class probabilities
/// (clusters collapsed to classes), ties by ascending index. `Random` draws
/// uniformly without replacement from a generator seeded with `seed`.
pub fn select_batch(post: &PosteriorMatrix, labels: &LabelStore, n: usize, strategy: Strategy, seed: u64) -> Vec<usize> {
    match strategy {
        Strategy::Random => random_batch(labels, n, seed),
        Strategy::Uncertainty => {
            let preds = predict(post, labels);
            let mut pool: Vec<(usize, f64)> = labels.unlabeled().map(|i| (i, preds.entropy(i))).collect();
            pool.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            pool.into_iter().take(n).map(|(i, _)| i).collect()
        }
    }
}

pub(crate) fn random_batch(labels: &LabelStore, n: usize, seed: u64) -> Vec<usize> {
    let pool: Vec<usize> = labels.unlabeled().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample(&mut rng, pool.len(), n.min(pool.len()))
        .into_iter()
        .map(|j| pool[j])
        .collect()
}

/// Mixes a base seed with a stream tag and an index so that each random
/// decision in a run draws from its own reproducible generator.
pub(crate) fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    mix(base ^ mix(stream ^ mix(index)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopKind {
    /// Run until `budget` documents are labeled or the pool is exhausted.
    #[default]
    FixedBudget,
    /// Stop once held-out F1 stops improving by at least `delta`.
    F1Delta,
    /// Stop once fewer than a `delta` share of unlabeled predictions change
    /// between fits.
    Stability,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StoppingRule {
    pub kind: StopKind,
    /// Maximum number of labeled documents; applies to every kind.
    pub budget: Option<usize>,
    pub delta: f64,
    /// Consecutive sub-threshold checks required before stopping.
    pub patience: usize,
}

impl Default for StoppingRule {
    fn default() -> Self {
        StoppingRule {
            kind: StopKind::FixedBudget,
            budget: None,
            delta: DEFAULT_STOP_DELTA,
            patience: 1,
        }
    }
}

impl StoppingRule {
    pub fn budget(budget: usize) -> Self {
        StoppingRule {
            budget: Some(budget),
            ..StoppingRule::default()
        }
    }

    pub fn f1_delta(delta: f64, patience: usize) -> Self {
        StoppingRule {
            kind: StopKind::F1Delta,
            delta,
            patience,
            ..StoppingRule::default()
        }
    }

    pub fn stability(delta: f64, patience: usize) -> Self {
        StoppingRule {
            kind: StopKind::Stability,
            delta,
            patience,
            ..StoppingRule::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind != StopKind::FixedBudget && !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::invalid("stop.delta", "must be positive"));
        }
        if self.patience == 0 {
            return Err(Error::invalid("stop.patience", "must be at least 1"));
        }
        if self.budget == Some(0) {
            return Err(Error::invalid("stop.budget", "must be positive"));
        }
        Ok(())
    }
}

/// Parses `budget:N`, `f1:DELTA[:PATIENCE]` or `stability:DELTA[:PATIENCE]`.
impl std::str::FromStr for StoppingRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid("stop", format!("`{s}` is not budget:N, f1:DELTA[:PATIENCE] or stability:DELTA[:PATIENCE]"));
        let parts: Vec<&str> = s.split(':').collect();
        let number = |i: usize| parts.get(i).map(|p| p.parse::<f64>().map_err(|_| bad())).transpose();
        let patience = || -> Result<usize> {
            match parts.get(2) {
                Some(p) => p.parse().map_err(|_| bad()),
                None => Ok(1),
            }
        };
        let rule = match parts.first().copied() {
            Some("budget") if parts.len() == 2 => StoppingRule::budget(parts[1].parse().map_err(|_| bad())?),
            Some("f1" | "f1_delta") if (2..=3).contains(&parts.len()) => {
                StoppingRule::f1_delta(number(1)?.ok_or_else(bad)?, patience()?)
            }
            Some("stability") if (2..=3).contains(&parts.len()) => {
                StoppingRule::stability(number(1)?.ok_or_else(bad)?, patience()?)
            }
            _ => return Err(bad()),
        };
        rule.validate()?;
        Ok(rule)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    BudgetReached,
    F1Converged,
    Stable,
    PoolExhausted,
    Manual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop(StopReason),
}

/// Applies `rule` to the state after a fit.
///
/// `history` holds one held-out F1 per fit (`None` when nothing was
/// evaluated) and `changes` the share of predictions that moved at each fit.
pub fn check_stopping(
    rule: &StoppingRule,
    n_labeled: usize,
    f1_history: &[Option<f64>],
    changes: &[Option<f64>],
) -> Result<StopDecision> {
    if rule.budget.is_some_and(|b| n_labeled >= b) {
        return Ok(StopDecision::Stop(StopReason::BudgetReached));
    }
    let below = |values: &[f64]| {
        values.len() >= rule.patience && values[values.len() - rule.patience..].iter().all(|&d| d < rule.delta)
    };
    match rule.kind {
        StopKind::FixedBudget => Ok(StopDecision::Continue),
        StopKind::F1Delta => {
            let f1: Vec<f64> = f1_history
                .iter()
                .map(|f| f.ok_or_else(|| Error::invalid("stop", "f1_delta stopping needs held-out ground truth")))
                .collect::<Result<_>>()?;
            let gains: Vec<f64> = f1.windows(2).map(|w| w[1] - w[0]).collect();
            Ok(if below(&gains) {
                StopDecision::Stop(StopReason::F1Converged)
            } else {
                StopDecision::Continue
            })
        }
        StopKind::Stability => {
            let observed: Vec<f64> = changes.iter().flatten().copied().collect();
            Ok(if below(&observed) {
                StopDecision::Stop(StopReason::Stable)
            } else {
                StopDecision::Continue
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Mode;

    fn binary_post(p1: &[f64]) -> (PosteriorMatrix, LabelStore) {
        let probs = p1.iter().flat_map(|&p| [1.0 - p, p]).collect();
        (
            PosteriorMatrix::from_rows(2, probs).unwrap(),
            LabelStore::new(p1.len(), LabelStore::binary_names(), Mode::Binary.cluster_to_class(2)).unwrap(),
        )
    }

    #[test]
    fn uncertainty_picks_most_uncertain_with_index_ties() {
        let (post, labels) = binary_post(&[0.5, 0.9, 0.1]);
        assert_eq!(select_batch(&post, &labels, 1, Strategy::Uncertainty, 0), vec![0]);
        assert_eq!(select_batch(&post, &labels, 3, Strategy::Uncertainty, 0), vec![0, 1, 2]);
        assert_eq!(select_batch(&post, &labels, 10, Strategy::Uncertainty, 0).len(), 3);
    }

    #[test]
    fn labeled_documents_are_never_selected() {
        let (post, mut labels) = binary_post(&[0.5, 0.9, 0.1, 0.45]);
        labels.set(0, 1).unwrap();
        assert_eq!(select_batch(&post, &labels, 2, Strategy::Uncertainty, 0), vec![3, 1]);
        let r = select_batch(&post, &labels, 3, Strategy::Random, 5);
        assert!(!r.contains(&0));
        assert_eq!(r.len(), 3);
    }

    #[test]
    fn random_batches_replay() {
        let (post, labels) = binary_post(&[0.5; 50]);
        let a = select_batch(&post, &labels, 2, Strategy::Random, 11);
        assert_eq!(a, select_batch(&post, &labels, 2, Strategy::Random, 11));
        assert_ne!(a, select_batch(&post, &labels, 2, Strategy::Random, 12));
    }

    #[test]
    fn f1_delta_stops_on_small_gain() {
        let rule = StoppingRule::f1_delta(0.01, 1);
        let h = [Some(0.50), Some(0.52)];
        assert_eq!(check_stopping(&rule, 40, &h, &[]).unwrap(), StopDecision::Continue);
        let h = [Some(0.50), Some(0.52), Some(0.525)];
        assert_eq!(
            check_stopping(&rule, 60, &h, &[]).unwrap(),
            StopDecision::Stop(StopReason::F1Converged)
        );
        let patient = StoppingRule::f1_delta(0.01, 2);
        assert_eq!(check_stopping(&patient, 60, &h, &[]).unwrap(), StopDecision::Continue);
        assert!(check_stopping(&rule, 60, &[Some(0.5), None], &[]).is_err());
    }

    #[test]
    fn budget_and_stability() {
        let rule = StoppingRule::budget(620);
        assert_eq!(check_stopping(&rule, 600, &[], &[]).unwrap(), StopDecision::Continue);
        assert_eq!(
            check_stopping(&rule, 620, &[], &[]).unwrap(),
            StopDecision::Stop(StopReason::BudgetReached)
        );
        let rule = StoppingRule::stability(0.01, 1);
        assert_eq!(check_stopping(&rule, 20, &[], &[None]).unwrap(), StopDecision::Continue);
        assert_eq!(
            check_stopping(&rule, 40, &[], &[None, Some(0.0)]).unwrap(),
            StopDecision::Stop(StopReason::Stable)
        );
        assert_eq!(check_stopping(&rule, 40, &[], &[None, Some(0.2)]).unwrap(), StopDecision::Continue);
    }

    #[test]
    fn parses_stop_flags() {
        assert_eq!("budget:620".parse::<StoppingRule>().unwrap(), StoppingRule::budget(620));
        assert_eq!("f1:0.01".parse::<StoppingRule>().unwrap(), StoppingRule::f1_delta(0.01, 1));
        assert_eq!("stability:0.05:3".parse::<StoppingRule>().unwrap(), StoppingRule::stability(0.05, 3));
        assert!("f1:0".parse::<StoppingRule>().is_err());
        assert!("budget".parse::<StoppingRule>().is_err());
        assert!("often".parse::<StoppingRule>().is_err());
    }

    #[test]
    fn derived_seeds_differ_by_stream_and_index() {
        assert_ne!(derive_seed(1, 0, 0), derive_seed(1, 1, 0));
        assert_ne!(derive_seed(1, 0, 0), derive_seed(1, 0, 1));
        assert_eq!(derive_seed(7, 2, 3), derive_seed(7, 2, 3));
    }
}
