use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Vocabulary};
use crate::error::{Error, Result};
use crate::keywords::{reference_keywords, KeywordDecision, Verdict};
use crate::model::{fit_em, init_from_labels, EmOptions, Hyperparams, LabelStore};

/// Quantile of the class log ratios above which a term counts as a true
/// keyword for the simulated oracle.
pub const REFERENCE_KEYWORD_QUANTILE: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OracleResponse<T> {
    Ready(T),
    /// A human has not answered yet; the session waits.
    Awaiting,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Oracle {
    /// Answers arrive through the session API.
    Human,
    Simulated(SimulatedOracle),
}

impl Oracle {
    pub fn label(&mut self, docs: &[usize]) -> Result<OracleResponse<Vec<(usize, usize)>>> {
        match self {
            Oracle::Human => Ok(OracleResponse::Awaiting),
            Oracle::Simulated(s) => s.label(docs).map(OracleResponse::Ready),
        }
    }

    pub fn judge_keywords(
        &mut self,
        candidates: &[(usize, Vec<String>)],
        vocab: &Vocabulary,
    ) -> Result<OracleResponse<Vec<KeywordDecision>>> {
        match self {
            Oracle::Human => Ok(OracleResponse::Awaiting),
            Oracle::Simulated(s) => s.judge_keywords(candidates, vocab).map(OracleResponse::Ready),
        }
    }
}

/// Answers from ground truth, corrupting each document label with
/// probability `doc_error_p` and each keyword verdict with probability
/// `keyword_error_p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedOracle {
    truth: Vec<Option<usize>>,
    n_classes: usize,
    doc_error_p: f64,
    keyword_error_p: f64,
    keyword_truth: Option<Vec<BTreeSet<usize>>>,
    #[serde(with = "rng_state")]
    rng: ChaCha8Rng,
    corrupted: usize,
}

/// Stores the generator as seed, stream and position. The position is a
/// `u128`, which JSON numbers cannot hold, so it is written as a string.
mod rng_state {
    use rand_chacha::ChaCha8Rng;
    use rand::SeedableRng;
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct State {
        seed: String,
        stream: u64,
        word_pos: String,
    }

    pub fn serialize<S: Serializer>(rng: &ChaCha8Rng, s: S) -> Result<S::Ok, S::Error> {
        State {
            seed: hex::encode(rng.get_seed()),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<ChaCha8Rng, D::Error> {
        let st = State::deserialize(d)?;
        let bytes = hex::decode(&st.seed).map_err(D::Error::custom)?;
        let seed: [u8; 32] = bytes.try_into().map_err(|_| D::Error::custom("seed must be 32 bytes"))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(st.stream);
        rng.set_word_pos(st.word_pos.parse().map_err(D::Error::custom)?);
        Ok(rng)
    }
}

impl SimulatedOracle {
    /// `truth` is aligned with the rows of the pool being labeled.
    pub fn new(truth: Vec<Option<usize>>, n_classes: usize, doc_error_p: f64, keyword_error_p: f64, seed: u64) -> Result<Self> {
        for (field, p) in [("doc_error_p", doc_error_p), ("keyword_error_p", keyword_error_p)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(field, "must lie in [0, 1]"));
            }
        }
        if n_classes < 2 {
            return Err(Error::invalid("n_classes", "at least two classes are required"));
        }
        if let Some(c) = truth.iter().flatten().find(|&&c| c >= n_classes) {
            return Err(Error::invalid("truth", format!("class {c} out of range")));
        }
        Ok(SimulatedOracle {
            truth,
            n_classes,
            doc_error_p,
            keyword_error_p,
            keyword_truth: None,
            rng: ChaCha8Rng::seed_from_u64(seed),
            corrupted: 0,
        })
    }

    /// Term indices (per class) that count as correct keywords.
    pub fn with_keyword_truth(mut self, sets: Vec<BTreeSet<usize>>) -> Self {
        self.keyword_truth = Some(sets);
        self
    }

    /// Derives the reference keyword sets from a fit on the full truth.
    pub fn fit_keyword_truth(&mut self, c: &Corpus, h: &Hyperparams, opts: &EmOptions, seed: u64) -> Result<()> {
        self.keyword_truth = Some(reference_keyword_sets(c, &self.truth, h, opts, seed)?);
        Ok(())
    }

    pub fn has_keyword_truth(&self) -> bool {
        self.keyword_truth.is_some()
    }

    pub fn keyword_truth(&self) -> Option<&[BTreeSet<usize>]> {
        self.keyword_truth.as_deref()
    }

    /// Labels handed out that differ from the truth so far.
    pub fn corrupted(&self) -> usize {
        self.corrupted
    }

    pub fn label(&mut self, docs: &[usize]) -> Result<Vec<(usize, usize)>> {
        let mut out = Vec::with_capacity(docs.len());
        for &d in docs {
            let truth = self
                .truth
                .get(d)
                .copied()
                .flatten()
                .ok_or_else(|| Error::invalid("truth", format!("no ground truth for document {d}")))?;
            let mut class = truth;
            if self.rng.random::<f64>() < self.doc_error_p {
                let j = self.rng.random_range(0..self.n_classes - 1);
                class = if j < truth { j } else { j + 1 };
                self.corrupted += 1;
            }
            out.push((d, class));
        }
        Ok(out)
    }

    pub fn judge_keywords(&mut self, candidates: &[(usize, Vec<String>)], vocab: &Vocabulary) -> Result<Vec<KeywordDecision>> {
        let sets = self
            .keyword_truth
            .as_ref()
            .ok_or_else(|| Error::invalid("oracle", "simulated oracle has no reference keywords"))?;
        let mut out = Vec::new();
        for (class, terms) in candidates {
            let set = sets
                .get(*class)
                .ok_or_else(|| Error::invalid("class", format!("class {class} out of range")))?;
            for term in terms {
                let v = vocab.get(term).ok_or_else(|| Error::UnknownTerm(term.clone()))?;
                let mut correct = set.contains(&v);
                if self.rng.random::<f64>() < self.keyword_error_p {
                    correct = !correct;
                }
                out.push(KeywordDecision {
                    term: term.clone(),
                    class: *class,
                    verdict: if correct { Verdict::Accept } else { Verdict::Reject },
                });
            }
        }
        Ok(out)
    }
}

/// Fits the model on the fully labeled pool and returns, per class, the
/// terms whose class log ratio exceeds the 90% quantile.
pub fn reference_keyword_sets(
    c: &Corpus,
    truth: &[Option<usize>],
    h: &Hyperparams,
    opts: &EmOptions,
    seed: u64,
) -> Result<Vec<BTreeSet<usize>>> {
    let labels = LabelStore::from_assignments(
        truth.to_vec(),
        LabelStore::default_names(h.mode(), h.k()),
        h.cluster_to_class(),
    )?;
    let init = init_from_labels(c, &labels, h, seed)?;
    let fit = fit_em(c, &labels, h, init, opts)?;
    Ok(reference_keywords(&fit.params, labels.cluster_to_class(), labels.n_classes(), REFERENCE_KEYWORD_QUANTILE)
        .into_iter()
        .map(|s| s.into_iter().collect())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_oracle_returns_truth() {
        let truth: Vec<Option<usize>> = (0..50).map(|i| Some(i % 3)).collect();
        let mut o = SimulatedOracle::new(truth.clone(), 3, 0.0, 0.0, 1).unwrap();
        let docs: Vec<usize> = (0..50).collect();
        let got = o.label(&docs).unwrap();
        assert!(got.iter().all(|&(d, c)| truth[d] == Some(c)));
        assert_eq!(o.corrupted(), 0);
    }

    #[test]
    fn certain_error_flips_binary_and_avoids_truth_in_multiclass() {
        let truth: Vec<Option<usize>> = (0..40).map(|i| Some(i % 2)).collect();
        let mut o = SimulatedOracle::new(truth.clone(), 2, 1.0, 0.0, 1).unwrap();
        let docs: Vec<usize> = (0..40).collect();
        assert!(o.label(&docs).unwrap().iter().all(|&(d, c)| c == 1 - truth[d].unwrap()));

        let truth: Vec<Option<usize>> = (0..300).map(|i| Some(i % 4)).collect();
        let mut o = SimulatedOracle::new(truth.clone(), 4, 1.0, 0.0, 2).unwrap();
        let docs: Vec<usize> = (0..300).collect();
        let got = o.label(&docs).unwrap();
        assert!(got.iter().all(|&(d, c)| Some(c) != truth[d] && c < 4));
        for wrong in 1..4 {
            assert!(got.iter().any(|&(d, c)| truth[d] == Some(0) && c == wrong));
        }
    }

    #[test]
    fn missing_truth_is_an_error() {
        let mut o = SimulatedOracle::new(vec![Some(0), None], 2, 0.0, 0.0, 0).unwrap();
        assert!(o.label(&[1]).is_err());
        assert!(SimulatedOracle::new(vec![Some(0)], 2, 1.5, 0.0, 0).is_err());
    }

    #[test]
    fn human_oracle_waits() {
        let mut o = Oracle::Human;
        assert_eq!(o.label(&[0, 1]).unwrap(), OracleResponse::Awaiting);
    }

    #[test]
    fn keyword_judgements_follow_reference_sets() {
        let vocab = Vocabulary::from(vec!["a".to_string(), "b".to_string(), "c".to_string()]);
        let sets = vec![BTreeSet::from([0]), BTreeSet::from([2])];
        let mut o = SimulatedOracle::new(vec![], 2, 0.0, 0.0, 0).unwrap().with_keyword_truth(sets.clone());
        let d = o
            .judge_keywords(&[(1, vec!["c".into(), "a".into()])], &vocab)
            .unwrap();
        assert_eq!(d, vec![KeywordDecision::accept("c", 1), KeywordDecision::reject("a", 1)]);
        let mut flipped = SimulatedOracle::new(vec![], 2, 0.0, 1.0, 0).unwrap().with_keyword_truth(sets);
        let d = flipped.judge_keywords(&[(0, vec!["a".into()])], &vocab).unwrap();
        assert_eq!(d, vec![KeywordDecision::reject("a", 0)]);
    }

    #[test]
    fn state_survives_serialization() {
        let truth: Vec<Option<usize>> = (0..100).map(|i| Some(i % 2)).collect();
        let mut a = SimulatedOracle::new(truth, 2, 0.3, 0.0, 9).unwrap();
        a.label(&[0, 1, 2]).unwrap();
        let mut b: SimulatedOracle = serde_json::from_str(&serde_json::to_string(&a).unwrap()).unwrap();
        let docs: Vec<usize> = (3..100).collect();
        assert_eq!(a.label(&docs).unwrap(), b.label(&docs).unwrap());
    }
}
