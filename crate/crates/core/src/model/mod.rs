//! Multinomial mixture over `K` clusters fit by EM on labeled documents plus
//! λ-weighted unlabeled documents.
//!
//! Three modes share one implementation. Every cluster maps to a class:
//!
//! * `Binary`: two clusters, identity map, class 1 is positive.
//! * `MultiClusterBinary { k_star }`: `K` clusters, cluster `k_star` is the
//!   positive class and every other cluster collapses into the negative one.
//! * `Multiclass`: `K` clusters, identity map.
//!
//! A labeled document's responsibilities are restricted to the clusters of
//! its class and renormalized there, so in the identity modes they are
//! one-hot and in multi-cluster mode negatives spread over the `K - 1`
//! negative clusters. All probability arithmetic is in log space.

mod checkpoint;
mod em;

use std::collections::HashSet;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use em::{
    cluster_scores, e_step, e_step_with, fit_em, init_from_labels, init_naive_bayes, log_posterior_objective,
    m_step, m_step_with, predict, EmOptions, FitResult, Predictions,
};

pub const DEFAULT_ALPHA: f64 = 2.0;
pub const DEFAULT_BETA: f64 = 2.0;
pub const DEFAULT_LAMBDA: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mode {
    Binary,
    MultiClusterBinary { k_star: usize },
    Multiclass,
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::Binary => "binary",
            Mode::MultiClusterBinary { .. } => "multi_cluster_binary",
            Mode::Multiclass => "multiclass",
        }
    }

    /// Number of output classes for `k` clusters.
    pub fn n_classes(&self, k: usize) -> usize {
        match self {
            Mode::Multiclass => k,
            _ => 2,
        }
    }

    pub fn cluster_to_class(&self, k: usize) -> Vec<usize> {
        match *self {
            Mode::MultiClusterBinary { k_star } => (0..k).map(|c| usize::from(c == k_star)).collect(),
            _ => (0..k).collect(),
        }
    }

    /// Index of the class reported as "positive" in summaries.
    pub fn positive_class(&self) -> Option<usize> {
        match self {
            Mode::Multiclass => None,
            _ => Some(1),
        }
    }
}

/// Priors, unlabeled weight and cluster structure.
///
/// `beta` is stored term-major: entry `(v, k)` lives at `v * k_clusters + k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "HyperparamsRepr", into = "HyperparamsRepr")]
pub struct Hyperparams {
    alpha: Vec<f64>,
    beta: Vec<f64>,
    lambda: f64,
    k: usize,
    n_terms: usize,
    mode: Mode,
}

#[derive(Serialize, Deserialize)]
struct HyperparamsRepr {
    alpha: Vec<f64>,
    beta: Vec<f64>,
    lambda: f64,
    k: usize,
    n_terms: usize,
    mode: Mode,
}

impl TryFrom<HyperparamsRepr> for Hyperparams {
    type Error = Error;

    fn try_from(r: HyperparamsRepr) -> Result<Self> {
        let h = Hyperparams {
            alpha: r.alpha,
            beta: r.beta,
            lambda: r.lambda,
            k: r.k,
            n_terms: r.n_terms,
            mode: r.mode,
        };
        h.validate()?;
        Ok(h)
    }
}

impl From<Hyperparams> for HyperparamsRepr {
    fn from(h: Hyperparams) -> Self {
        HyperparamsRepr {
            alpha: h.alpha,
            beta: h.beta,
            lambda: h.lambda,
            k: h.k,
            n_terms: h.n_terms,
            mode: h.mode,
        }
    }
}

impl Hyperparams {
    /// Defaults: every `alpha = 2`, every `beta = 2`, `lambda = 0.001`.
    pub fn new(n_terms: usize, k: usize, mode: Mode) -> Result<Self> {
        let h = Hyperparams {
            alpha: vec![DEFAULT_ALPHA; k],
            beta: vec![DEFAULT_BETA; n_terms * k],
            lambda: DEFAULT_LAMBDA,
            k,
            n_terms,
            mode,
        };
        h.validate()?;
        Ok(h)
    }

    pub fn binary(n_terms: usize) -> Self {
        Self::new(n_terms, 2, Mode::Binary).expect("binary defaults are valid")
    }

    pub fn with_lambda(mut self, lambda: f64) -> Result<Self> {
        self.lambda = lambda;
        self.validate()?;
        Ok(self)
    }

    pub fn with_alpha(mut self, alpha: Vec<f64>) -> Result<Self> {
        self.alpha = alpha;
        self.validate()?;
        Ok(self)
    }

    /// Sets every `beta_vk` to `value`.
    pub fn with_uniform_beta(mut self, value: f64) -> Result<Self> {
        self.beta.iter_mut().for_each(|b| *b = value);
        self.validate()?;
        Ok(self)
    }

    /// Replaces the whole term-major `V × K` prior matrix.
    pub fn with_beta(mut self, beta: Vec<f64>) -> Result<Self> {
        self.beta = beta;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::invalid("k", "at least two clusters are required"));
        }
        match self.mode {
            Mode::Binary if self.k != 2 => {
                return Err(Error::invalid("k", "binary mode uses exactly two clusters"));
            }
            Mode::MultiClusterBinary { k_star } if k_star >= self.k => {
                return Err(Error::invalid("k_star", format!("must be below k = {}", self.k)));
            }
            _ => {}
        }
        if self.alpha.len() != self.k {
            return Err(Error::invalid("alpha", format!("expected {} entries, got {}", self.k, self.alpha.len())));
        }
        if let Some(a) = self.alpha.iter().find(|a| !(a.is_finite() && **a > 0.0)) {
            return Err(Error::invalid("alpha", format!("entries must be finite and > 0, got {a}")));
        }
        if self.beta.len() != self.n_terms * self.k {
            return Err(Error::invalid("beta", "shape does not match V × K"));
        }
        if let Some(b) = self.beta.iter().find(|b| !(b.is_finite() && **b >= 1.0)) {
            return Err(Error::invalid("beta", format!("entries must be finite and >= 1, got {b}")));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::invalid("lambda", format!("must lie in [0, 1], got {}", self.lambda)));
        }
        Ok(())
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    #[inline]
    pub fn beta_at(&self, v: usize, k: usize) -> f64 {
        self.beta[v * self.k + k]
    }

    /// Adds `amount` to `beta_vk`. Only the keyword boost uses this.
    pub(crate) fn add_beta(&mut self, v: usize, k: usize, amount: f64) {
        self.beta[v * self.k + k] += amount;
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_terms(&self) -> usize {
        self.n_terms
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn n_classes(&self) -> usize {
        self.mode.n_classes(self.k)
    }

    pub fn cluster_to_class(&self) -> Vec<usize> {
        self.mode.cluster_to_class(self.k)
    }
}

/// Log mixing proportions and log word-cluster probabilities.
///
/// `log_eta` is term-major: entry `(v, k)` lives at `v * k + k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    k: usize,
    log_pi: Vec<f64>,
    log_eta: Vec<f64>,
}

impl ModelParams {
    pub fn from_log_parts(k: usize, log_pi: Vec<f64>, log_eta: Vec<f64>) -> Result<Self> {
        let p = ModelParams { k, log_pi, log_eta };
        p.validate(1e-10)?;
        Ok(p)
    }

    /// Builds parameters from probabilities. `eta` is term-major `V × K`.
    pub fn from_probs(pi: &[f64], eta: &[f64]) -> Result<Self> {
        Self::from_log_parts(
            pi.len(),
            pi.iter().map(|p| p.ln()).collect(),
            eta.iter().map(|p| p.ln()).collect(),
        )
    }

    /// Equal proportions and uniform word distributions.
    pub fn uniform(n_terms: usize, k: usize) -> Self {
        ModelParams {
            k,
            log_pi: vec![-(k as f64).ln(); k],
            log_eta: vec![-(n_terms as f64).ln(); n_terms * k],
        }
    }

    pub fn validate(&self, tol: f64) -> Result<()> {
        if self.log_pi.len() != self.k || self.k == 0 || !self.log_eta.len().is_multiple_of(self.k) {
            return Err(Error::invalid("params", "shape mismatch"));
        }
        if self.log_pi.iter().chain(&self.log_eta).any(|x| !x.is_finite()) {
            return Err(Error::invalid("params", "non-finite log probability"));
        }
        let s: f64 = self.log_pi.iter().map(|x| x.exp()).sum();
        if (s - 1.0).abs() > tol {
            return Err(Error::invalid("params", format!("proportions sum to {s}")));
        }
        let v = self.n_terms();
        for k in 0..self.k {
            let s: f64 = (0..v).map(|t| self.log_eta[t * self.k + k].exp()).sum();
            if v > 0 && (s - 1.0).abs() > tol {
                return Err(Error::invalid("params", format!("column {k} sums to {s}")));
            }
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_terms(&self) -> usize {
        self.log_eta.len() / self.k
    }

    pub fn log_pi(&self) -> &[f64] {
        &self.log_pi
    }

    pub fn log_eta(&self) -> &[f64] {
        &self.log_eta
    }

    #[inline]
    pub fn log_eta_at(&self, v: usize, k: usize) -> f64 {
        self.log_eta[v * self.k + k]
    }

    /// `log eta_{v, .}` for one term, one entry per cluster.
    #[inline]
    pub fn log_eta_row(&self, v: usize) -> &[f64] {
        &self.log_eta[v * self.k..(v + 1) * self.k]
    }

    pub fn pi(&self) -> Vec<f64> {
        self.log_pi.iter().map(|x| x.exp()).collect()
    }

    /// Column `k` of eta as probabilities.
    pub fn eta_column(&self, k: usize) -> Vec<f64> {
        (0..self.n_terms()).map(|v| self.log_eta_at(v, k).exp()).collect()
    }
}

/// Per-document label state aligned with a corpus' rows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelStore {
    assignments: Vec<Option<usize>>,
    class_names: Vec<String>,
    cluster_to_class: Vec<usize>,
}

impl LabelStore {
    pub fn binary_names() -> Vec<String> {
        vec!["negative".into(), "positive".into()]
    }

    /// `class0`, `class1`, ... for multiclass mode, else negative/positive.
    pub fn default_names(mode: Mode, k: usize) -> Vec<String> {
        match mode {
            Mode::Multiclass => (0..k).map(|i| format!("class{i}")).collect(),
            _ => Self::binary_names(),
        }
    }

    pub fn new(n_docs: usize, class_names: Vec<String>, cluster_to_class: Vec<usize>) -> Result<Self> {
        Self::from_assignments(vec![None; n_docs], class_names, cluster_to_class)
    }

    /// An empty store whose cluster map follows the hyperparameters.
    pub fn for_hyperparams(n_docs: usize, h: &Hyperparams, class_names: Option<Vec<String>>) -> Result<Self> {
        let names = class_names.unwrap_or_else(|| Self::default_names(h.mode(), h.k()));
        if names.len() != h.n_classes() {
            return Err(Error::invalid(
                "class_names",
                format!("{} names given for {} classes", names.len(), h.n_classes()),
            ));
        }
        Self::new(n_docs, names, h.cluster_to_class())
    }

    pub fn from_assignments(
        assignments: Vec<Option<usize>>,
        class_names: Vec<String>,
        cluster_to_class: Vec<usize>,
    ) -> Result<Self> {
        let n_classes = class_names.len();
        if n_classes < 2 {
            return Err(Error::invalid("class_names", "at least two classes are required"));
        }
        if cluster_to_class.iter().any(|&c| c >= n_classes) {
            return Err(Error::invalid("cluster_to_class", "maps to a class that does not exist"));
        }
        if (0..n_classes).any(|c| !cluster_to_class.contains(&c)) {
            return Err(Error::invalid("cluster_to_class", "every class needs at least one cluster"));
        }
        if let Some(c) = assignments.iter().flatten().find(|&&c| c >= n_classes) {
            return Err(Error::invalid("label", format!("class {c} out of range")));
        }
        Ok(LabelStore {
            assignments,
            class_names,
            cluster_to_class,
        })
    }

    pub fn n_docs(&self) -> usize {
        self.assignments.len()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn n_clusters(&self) -> usize {
        self.cluster_to_class.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|n| n == name)
    }

    pub fn cluster_to_class(&self) -> &[usize] {
        &self.cluster_to_class
    }

    #[inline]
    pub fn get(&self, doc: usize) -> Option<usize> {
        self.assignments[doc]
    }

    pub fn assignments(&self) -> &[Option<usize>] {
        &self.assignments
    }

    pub fn set(&mut self, doc: usize, class: usize) -> Result<()> {
        if class >= self.n_classes() {
            return Err(Error::invalid("label", format!("class {class} out of range")));
        }
        self.assignments[doc] = Some(class);
        Ok(())
    }

    pub fn clear(&mut self, doc: usize) {
        self.assignments[doc] = None;
    }

    pub fn n_labeled(&self) -> usize {
        self.assignments.iter().filter(|a| a.is_some()).count()
    }

    /// Labeled-document count per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut out = vec![0; self.n_classes()];
        for c in self.assignments.iter().flatten() {
            out[*c] += 1;
        }
        out
    }

    pub fn unlabeled(&self) -> impl Iterator<Item = usize> + '_ {
        self.assignments
            .iter()
            .enumerate()
            .filter_map(|(i, a)| a.is_none().then_some(i))
    }

    /// The same labels restricted to (and reordered by) `docs`.
    pub fn subset(&self, docs: &[usize]) -> LabelStore {
        LabelStore {
            assignments: docs.iter().map(|&d| self.assignments[d]).collect(),
            class_names: self.class_names.clone(),
            cluster_to_class: self.cluster_to_class.clone(),
        }
    }

    /// Applies `(doc_index, class)` pairs from a labels file.
    pub fn apply(&mut self, labels: &[(usize, usize)]) -> Result<()> {
        for &(d, c) in labels {
            self.set(d, c)?;
        }
        Ok(())
    }
}

/// N × K responsibilities, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMatrix {
    k: usize,
    probs: Vec<f64>,
}

impl PosteriorMatrix {
    pub fn from_rows(k: usize, probs: Vec<f64>) -> Result<Self> {
        if k == 0 || !probs.len().is_multiple_of(k) {
            return Err(Error::invalid("posterior", "length is not a multiple of K"));
        }
        Ok(PosteriorMatrix { k, probs })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_docs(&self) -> usize {
        self.probs.len() / self.k
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.probs[i * self.k..(i + 1) * self.k]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }
}

/// Parses `doc_id<TAB>class_index` lines against `corpus`.
pub fn read_labels<R: BufRead>(reader: R, source: &str, corpus: &Corpus, n_classes: usize) -> Result<Vec<(usize, usize)>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let perr = |message: String| Error::Parse {
            path: source.to_owned(),
            line: lineno,
            message,
        };
        let line = line.map_err(|e| perr(e.to_string()))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let Some((id, class)) = line.split_once('\t') else {
            return Err(perr("expected `doc_id<TAB>class_index`".into()));
        };
        let class: usize = class
            .trim()
            .parse()
            .map_err(|_| perr(format!("class `{class}` is not a non-negative integer")))?;
        if class >= n_classes {
            return Err(perr(format!("class {class} out of range for {n_classes} classes")));
        }
        let doc = corpus
            .doc_index(id)
            .ok_or_else(|| perr(format!("unknown document `{id}`")))?;
        if !seen.insert(doc) {
            return Err(perr(format!("document `{id}` labeled twice")));
        }
        out.push((doc, class));
    }
    Ok(out)
}

pub fn load_labels(path: &Path, corpus: &Corpus, n_classes: usize) -> Result<Vec<(usize, usize)>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_labels(std::io::BufReader::new(file), &path.display().to_string(), corpus, n_classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hyperparams_validation() {
        assert!(Hyperparams::new(3, 1, Mode::Multiclass).is_err());
        assert!(Hyperparams::new(3, 3, Mode::Binary).is_err());
        assert!(Hyperparams::new(3, 3, Mode::MultiClusterBinary { k_star: 3 }).is_err());
        let h = Hyperparams::binary(3);
        assert!(h.clone().with_lambda(1.5).is_err());
        assert!(h.clone().with_uniform_beta(0.5).is_err());
        assert!(h.clone().with_alpha(vec![0.0, 1.0]).is_err());
        assert_eq!(h.lambda(), DEFAULT_LAMBDA);
        let json = serde_json::to_string(&h).unwrap();
        assert_eq!(serde_json::from_str::<Hyperparams>(&json).unwrap(), h);
        let bad = json.replace("\"lambda\":0.001", "\"lambda\":2.0");
        assert!(serde_json::from_str::<Hyperparams>(&bad).is_err());
    }

    #[test]
    fn cluster_maps() {
        assert_eq!(Mode::MultiClusterBinary { k_star: 2 }.cluster_to_class(4), vec![0, 0, 1, 0]);
        assert_eq!(Mode::Multiclass.cluster_to_class(3), vec![0, 1, 2]);
        assert!(LabelStore::new(2, vec!["a".into(), "b".into()], vec![0, 0]).is_err());
    }

    #[test]
    fn labels_file_parsing() {
        let c = crate::corpus::read_dfm("2 1\nd1\tw\t1\nd2\tw\t1\n".as_bytes(), "c").unwrap();
        let l = read_labels("d2\t1\nd1\t0\n".as_bytes(), "l", &c, 2).unwrap();
        assert_eq!(l, vec![(1, 1), (0, 0)]);
        assert!(read_labels("d3\t1\n".as_bytes(), "l", &c, 2).is_err());
        assert!(read_labels("d1\t2\n".as_bytes(), "l", &c, 2).is_err());
        assert!(read_labels("d1\t1\nd1\t0\n".as_bytes(), "l", &c, 2).is_err());
    }
}
