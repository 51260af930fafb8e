//! Keyword decisions and the prior boost they induce.
//!
//! Accepted keywords raise `beta_vk` by `gamma` for every cluster of their
//! class. The boost is always applied to the pristine priors, never to an
//! already boosted copy.

use std::collections::{BTreeSet, HashSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::math::logsumexp;
use crate::model::{Hyperparams, ModelParams};

pub const DEFAULT_GAMMA: f64 = 10.0;
pub const DEFAULT_CANDIDATES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Accept,
    Reject,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Accept => "accept",
            Verdict::Reject => "reject",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "accept" => Some(Verdict::Accept),
            "reject" => Some(Verdict::Reject),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordDecision {
    pub term: String,
    /// Class the term was proposed for (and joins, when accepted).
    pub class: usize,
    pub verdict: Verdict,
}

impl KeywordDecision {
    pub fn accept(term: impl Into<String>, class: usize) -> Self {
        KeywordDecision {
            term: term.into(),
            class,
            verdict: Verdict::Accept,
        }
    }

    pub fn reject(term: impl Into<String>, class: usize) -> Self {
        KeywordDecision {
            term: term.into(),
            class,
            verdict: Verdict::Reject,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordLedger {
    accepted: Vec<BTreeSet<String>>,
    rejected: BTreeSet<String>,
    gamma: f64,
    m: usize,
    history: Vec<KeywordDecision>,
}

impl KeywordLedger {
    pub fn new(n_classes: usize, gamma: f64, m: usize) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::invalid("gamma", "must be a positive finite number"));
        }
        Ok(KeywordLedger {
            accepted: vec![BTreeSet::new(); n_classes],
            rejected: BTreeSet::new(),
            gamma,
            m,
            history: Vec::new(),
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n_classes(&self) -> usize {
        self.accepted.len()
    }

    pub fn accepted(&self, class: usize) -> &BTreeSet<String> {
        &self.accepted[class]
    }

    pub fn rejected(&self) -> &BTreeSet<String> {
        &self.rejected
    }

    /// Every decision in the order it was recorded.
    pub fn history(&self) -> &[KeywordDecision] {
        &self.history
    }

    pub fn is_empty(&self) -> bool {
        self.history.is_empty()
    }

    pub fn is_decided(&self, term: &str) -> bool {
        self.rejected.contains(term) || self.accepted.iter().any(|s| s.contains(term))
    }

    fn prior_decision(&self, term: &str) -> Option<(Option<usize>, Verdict)> {
        if self.rejected.contains(term) {
            return Some((None, Verdict::Reject));
        }
        self.accepted
            .iter()
            .position(|s| s.contains(term))
            .map(|c| (Some(c), Verdict::Accept))
    }

    /// Records a batch of decisions atomically: either every decision is
    /// valid and applied, or the ledger is left untouched.
    ///
    /// Repeating an identical earlier decision is a no-op; contradicting one
    /// (accept vs reject, or accepting for a different class) is an error.
    pub fn record_decisions(&mut self, decisions: &[KeywordDecision], vocab: &Vocabulary) -> Result<()> {
        let mut seen = HashSet::new();
        for d in decisions {
            if vocab.get(&d.term).is_none() {
                return Err(Error::UnknownTerm(d.term.clone()));
            }
            if d.class >= self.n_classes() {
                return Err(Error::invalid("class", format!("class {} out of range", d.class)));
            }
            if !seen.insert(d.term.as_str()) {
                return Err(Error::KeywordConflict(format!("`{}` decided twice in one submission", d.term)));
            }
            match self.prior_decision(&d.term) {
                None => {}
                Some((_, Verdict::Reject)) if d.verdict == Verdict::Reject => {}
                Some((Some(c), Verdict::Accept)) if d.verdict == Verdict::Accept && c == d.class => {}
                Some((class, verdict)) => {
                    let what = match (class, verdict) {
                        (Some(c), _) => format!("accepted for class {c}"),
                        (None, _) => "rejected".to_string(),
                    };
                    return Err(Error::KeywordConflict(format!("`{}` was already {what}", d.term)));
                }
            }
        }
        for d in decisions {
            if self.is_decided(&d.term) {
                continue;
            }
            match d.verdict {
                Verdict::Accept => {
                    self.accepted[d.class].insert(d.term.clone());
                }
                Verdict::Reject => {
                    self.rejected.insert(d.term.clone());
                }
            }
            self.history.push(d.clone());
        }
        Ok(())
    }

    /// Writes `term<TAB>class_name<TAB>accept|reject` records.
    pub fn write<W: Write>(&self, mut w: W, class_names: &[String]) -> std::io::Result<()> {
        for d in &self.history {
            writeln!(w, "{}\t{}\t{}", d.term, class_names[d.class], d.verdict.as_str())?;
        }
        Ok(())
    }

    /// Reconstructs a ledger by replaying a file written by [`Self::write`].
    pub fn read<R: BufRead>(
        reader: R,
        source: &str,
        class_names: &[String],
        vocab: &Vocabulary,
        gamma: f64,
        m: usize,
    ) -> Result<Self> {
        let mut ledger = KeywordLedger::new(class_names.len(), gamma, m)?;
        for (i, line) in reader.lines().enumerate() {
            let perr = |message: String| Error::Parse {
                path: source.to_owned(),
                line: i + 1,
                message,
            };
            let line = line.map_err(|e| perr(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [term, class, verdict] = fields.as_slice() else {
                return Err(perr("expected `term<TAB>class_name<TAB>accept|reject`".into()));
            };
            let class = class_names
                .iter()
                .position(|n| n == class)
                .ok_or_else(|| perr(format!("unknown class `{class}`")))?;
            let verdict = Verdict::parse(verdict).ok_or_else(|| perr(format!("unknown verdict `{verdict}`")))?;
            ledger
                .record_decisions(
                    &[KeywordDecision {
                        term: (*term).to_owned(),
                        class,
                        verdict,
                    }],
                    vocab,
                )
                .map_err(|e| perr(e.to_string()))?;
        }
        Ok(ledger)
    }
}

/// Copy of `h` with `gamma` added to `beta_vk` for each accepted keyword `v`
/// and every cluster `k` of the keyword's class.
pub fn apply_keywords(h: &Hyperparams, ledger: &KeywordLedger, vocab: &Vocabulary) -> Result<Hyperparams> {
    let map = h.cluster_to_class();
    if ledger.n_classes() != h.n_classes() {
        return Err(Error::invalid("keywords", "ledger and model disagree on the number of classes"));
    }
    let mut out = h.clone();
    for (class, terms) in ledger.accepted.iter().enumerate() {
        for term in terms {
            let v = vocab.get(term).ok_or_else(|| Error::UnknownTerm(term.clone()))?;
            for (k, &c) in map.iter().enumerate() {
                if c == class {
                    out.add_beta(v, k, ledger.gamma);
                }
            }
        }
    }
    Ok(out)
}

/// `log p(v | class) - log p(v | other classes)` for every term, where each
/// side is the pi-weighted mixture of its clusters' word distributions. With
/// one cluster per side this is `log(eta_vk / eta_vk')`.
pub fn class_log_ratios(params: &ModelParams, cluster_to_class: &[usize], class: usize) -> Vec<f64> {
    let k = params.k();
    let inside: Vec<usize> = (0..k).filter(|&c| cluster_to_class[c] == class).collect();
    let outside: Vec<usize> = (0..k).filter(|&c| cluster_to_class[c] != class).collect();
    let side = |clusters: &[usize], v: usize| -> f64 {
        if let [only] = clusters {
            return params.log_eta_at(v, *only);
        }
        let num: Vec<f64> = clusters.iter().map(|&c| params.log_pi()[c] + params.log_eta_at(v, c)).collect();
        let den: Vec<f64> = clusters.iter().map(|&c| params.log_pi()[c]).collect();
        logsumexp(&num) - logsumexp(&den)
    };
    (0..params.n_terms())
        .map(|v| side(&inside, v) - side(&outside, v))
        .collect()
}

/// Up to `ledger.m()` undecided terms with the highest log ratio for
/// `target_class`, ties broken by vocabulary order.
pub fn propose_candidates(
    params: &ModelParams,
    ledger: &KeywordLedger,
    vocab: &Vocabulary,
    cluster_to_class: &[usize],
    target_class: usize,
) -> Vec<String> {
    top_terms(params, ledger, vocab, cluster_to_class, target_class, &HashSet::new())
        .into_iter()
        .map(|v| vocab.term(v).to_owned())
        .collect()
}

/// Candidates for every class in turn. A term offered for one class is not
/// offered again for a later class in the same round.
pub fn propose_round(
    params: &ModelParams,
    ledger: &KeywordLedger,
    vocab: &Vocabulary,
    cluster_to_class: &[usize],
) -> Vec<(usize, Vec<String>)> {
    let mut offered = HashSet::new();
    (0..ledger.n_classes())
        .map(|class| {
            let terms = top_terms(params, ledger, vocab, cluster_to_class, class, &offered);
            offered.extend(terms.iter().copied());
            (class, terms.into_iter().map(|v| vocab.term(v).to_owned()).collect())
        })
        .collect()
}

fn top_terms(
    params: &ModelParams,
    ledger: &KeywordLedger,
    vocab: &Vocabulary,
    cluster_to_class: &[usize],
    class: usize,
    exclude: &HashSet<usize>,
) -> Vec<usize> {
    let ratios = class_log_ratios(params, cluster_to_class, class);
    let mut order: Vec<usize> = (0..ratios.len())
        .filter(|v| !exclude.contains(v) && !ledger.is_decided(vocab.term(*v)))
        .collect();
    order.sort_by(|&a, &b| ratios[b].total_cmp(&ratios[a]).then(a.cmp(&b)));
    order.truncate(ledger.m());
    order
}

/// Terms whose log ratio for each class lies strictly above the given
/// quantile (linear interpolation between order statistics) of that
/// class's ratios. Used as ground truth by the simulated keyword oracle.
pub fn reference_keywords(params: &ModelParams, cluster_to_class: &[usize], n_classes: usize, quantile: f64) -> Vec<HashSet<usize>> {
    (0..n_classes)
        .map(|class| {
            let ratios = class_log_ratios(params, cluster_to_class, class);
            let mut sorted = ratios.clone();
            sorted.sort_by(f64::total_cmp);
            let cut = quantile_sorted(&sorted, quantile);
            ratios
                .iter()
                .enumerate()
                .filter_map(|(v, &r)| (r > cut).then_some(v))
                .collect()
        })
        .collect()
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::INFINITY;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}
