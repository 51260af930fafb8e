//! Corpora sampled from a known mixture, for tests and benchmarks.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Gamma, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, CorpusBuilder, Vocabulary};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_docs: usize,
    pub n_terms: usize,
    /// Mixing proportions; one entry per cluster.
    pub pi: Vec<f64>,
    /// Mean tokens per document.
    pub mean_doc_len: f64,
    /// Concentration of the shared background word distribution.
    pub background_concentration: f64,
    /// Standard deviation of per-cluster log-multiplicative deviations from
    /// the background; larger values separate clusters more.
    pub signal: f64,
    /// Distinctive terms per cluster; each cluster gets its own disjoint set.
    pub signature_terms: usize,
    /// Multiplier applied to a cluster's signature terms before
    /// normalization.
    pub signature_boost: f64,
    /// Emit raw texts (space-separated tokens) alongside counts.
    pub with_texts: bool,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_docs: 2000,
            n_terms: 50,
            pi: vec![0.95, 0.05],
            mean_doc_len: 40.0,
            background_concentration: 1.0,
            signal: 0.6,
            signature_terms: 0,
            signature_boost: 1.0,
            with_texts: false,
            seed: 0,
        }
    }
}

/// A sampled corpus together with the parameters that generated it.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub corpus: Corpus,
    /// Generating cluster of every document.
    pub clusters: Vec<usize>,
    pub pi: Vec<f64>,
    /// Term-major `V × K` word probabilities.
    pub eta: Vec<f64>,
}

impl SyntheticCorpus {
    pub fn eta_column(&self, k: usize) -> Vec<f64> {
        let kk = self.pi.len();
        (0..self.corpus.n_terms()).map(|v| self.eta[v * kk + k]).collect()
    }
}

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    let k = spec.pi.len();
    if k < 2 || spec.pi.iter().any(|p| !(*p > 0.0)) {
        return Err(Error::invalid("pi", "need at least two positive proportions"));
    }
    if spec.n_terms == 0 || !(spec.mean_doc_len > 0.0) {
        return Err(Error::invalid("synthetic", "n_terms and mean_doc_len must be positive"));
    }
    let total: f64 = spec.pi.iter().sum();
    let pi: Vec<f64> = spec.pi.iter().map(|p| p / total).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let gamma = Gamma::new(spec.background_concentration, 1.0)
        .map_err(|e| Error::invalid("background_concentration", e.to_string()))?;
    let background: Vec<f64> = (0..spec.n_terms).map(|_| gamma.sample(&mut rng) + 1e-12).collect();
    let normal = Normal::new(0.0, spec.signal).map_err(|e| Error::invalid("signal", e.to_string()))?;
    if spec.signature_terms * k > spec.n_terms || !(spec.signature_boost > 0.0) {
        return Err(Error::invalid("signature_terms", "signature sets must fit in the vocabulary with a positive boost"));
    }
    let signatures = sample(&mut rng, spec.n_terms, spec.signature_terms * k).into_vec();
    let mut eta = vec![0.0; spec.n_terms * k];
    for kk in 0..k {
        let mut col: Vec<f64> = background.iter().map(|b| b * normal.sample(&mut rng).exp()).collect();
        for &v in &signatures[kk * spec.signature_terms..(kk + 1) * spec.signature_terms] {
            col[v] *= spec.signature_boost;
        }
        let s: f64 = col.iter().sum();
        for (v, x) in col.iter().enumerate() {
            eta[v * k + kk] = x / s;
        }
    }

    let vocab = Vocabulary::from((0..spec.n_terms).map(|v| format!("w{v:03}")).collect::<Vec<_>>());
    let mut b = CorpusBuilder::with_vocabulary(vocab);
    let cluster_dist = WeightedIndex::new(&pi).map_err(|e| Error::invalid("pi", e.to_string()))?;
    let word_dists: Vec<WeightedIndex<f64>> = (0..k)
        .map(|kk| WeightedIndex::new((0..spec.n_terms).map(|v| eta[v * k + kk])).expect("positive weights"))
        .collect();
    let len_dist = Poisson::new(spec.mean_doc_len).map_err(|e| Error::invalid("mean_doc_len", e.to_string()))?;
    let width = (spec.n_docs.max(1) as f64).log10().floor() as usize + 1;
    let mut clusters = Vec::with_capacity(spec.n_docs);
    let mut texts = std::collections::BTreeMap::new();
    let mut counts = vec![0u32; spec.n_terms];
    for i in 0..spec.n_docs {
        let id = format!("doc{i:0width$}");
        let z = cluster_dist.sample(&mut rng);
        let len = (len_dist.sample(&mut rng) as usize).max(1);
        counts.iter_mut().for_each(|c| *c = 0);
        let mut tokens = Vec::new();
        for _ in 0..len {
            let v = word_dists[z].sample(&mut rng);
            counts[v] += 1;
            if spec.with_texts {
                tokens.push(v);
            }
        }
        b.document(&id);
        for (v, &n) in counts.iter().enumerate() {
            if n > 0 {
                let term = format!("w{v:03}");
                b.insert(&id, &term, n);
            }
        }
        if spec.with_texts {
            let text: Vec<String> = tokens.iter().map(|v| format!("w{v:03}")).collect();
            texts.insert(id, text.join(" "));
        }
        clusters.push(z);
    }
    let mut corpus = b.build();
    if spec.with_texts {
        corpus.set_raw_texts(texts)?;
    }
    Ok(SyntheticCorpus {
        corpus,
        clusters,
        pi,
        eta,
    })
}
