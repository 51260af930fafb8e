use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::{Hyperparams, LabelStore, ModelParams, PosteriorMatrix};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::math::{entropy, logsumexp, softmax_in_place};

/// Shape of the Dirichlet used to split negative seed documents across the
/// negative clusters in multi-cluster mode.
const NEGATIVE_JITTER_CONCENTRATION: f64 = 5.0;

/// Unnormalized log posterior of each cluster for document `i`:
/// `log pi_k + Σ_v D_iv log eta_vk`. Clusters outside the document's labeled
/// class are set to `-inf`.
pub fn cluster_scores(c: &Corpus, labels: &LabelStore, params: &ModelParams, i: usize, out: &mut [f64]) {
    out.copy_from_slice(params.log_pi());
    let (terms, counts) = c.row(i);
    for (&t, &n) in terms.iter().zip(counts) {
        let n = f64::from(n);
        for (o, le) in out.iter_mut().zip(params.log_eta_row(t as usize)) {
            *o += n * le;
        }
    }
    if let Some(class) = labels.get(i) {
        for (o, &cls) in out.iter_mut().zip(labels.cluster_to_class()) {
            if cls != class {
                *o = f64::NEG_INFINITY;
            }
        }
    }
}

pub fn e_step(c: &Corpus, labels: &LabelStore, params: &ModelParams) -> PosteriorMatrix {
    e_step_with(c, labels, params, Execution::default())
}

/// Responsibilities for every document. Rows are independent, so the
/// parallel and sequential paths produce identical bits.
pub fn e_step_with(c: &Corpus, labels: &LabelStore, params: &ModelParams, exec: Execution) -> PosteriorMatrix {
    let k = params.k();
    let mut probs = vec![0.0; c.n_docs() * k];
    exec.for_each_chunk(&mut probs, k, |i, row| {
        cluster_scores(c, labels, params, i, row);
        softmax_in_place(row);
    });
    PosteriorMatrix { k, probs }
}

pub fn m_step(c: &Corpus, labels: &LabelStore, post: &PosteriorMatrix, h: &Hyperparams) -> Result<ModelParams> {
    m_step_with(c, labels, post, h, h.lambda(), Execution::default())
}

/// MAP update of `pi` and `eta` given responsibilities.
///
/// Labeled documents enter with weight 1 and their (restricted)
/// responsibilities; unlabeled ones with weight `lambda`:
///
/// ```text
/// pi_k   ∝ alpha_k - 1 + Σ_i w_i p_ik
/// eta_vk ∝ beta_vk - 1 + Σ_i w_i p_ik D_iv
/// ```
///
/// Each cluster's sums run over documents in index order regardless of
/// `exec`, which only spreads clusters across threads.
pub fn m_step_with(
    c: &Corpus,
    labels: &LabelStore,
    post: &PosteriorMatrix,
    h: &Hyperparams,
    lambda: f64,
    exec: Execution,
) -> Result<ModelParams> {
    let k = h.k();
    let v = h.n_terms();
    if post.k() != k || post.n_docs() != c.n_docs() || c.n_terms() != v {
        return Err(Error::invalid("m_step", "corpus, posterior and hyperparameters disagree in shape"));
    }
    let weight = |i: usize| if labels.get(i).is_some() { 1.0 } else { lambda };

    let columns: Vec<(f64, Vec<f64>)> = exec.map_collect(k, |kk| {
        let mut pi_mass = h.alpha()[kk] - 1.0;
        let mut eta_mass: Vec<f64> = (0..v).map(|t| h.beta_at(t, kk) - 1.0).collect();
        for i in 0..c.n_docs() {
            let w = weight(i);
            let p = post.row(i)[kk];
            if w == 0.0 || p == 0.0 {
                continue;
            }
            let wp = w * p;
            pi_mass += wp;
            let (terms, counts) = c.row(i);
            for (&t, &n) in terms.iter().zip(counts) {
                eta_mass[t as usize] += wp * f64::from(n);
            }
        }
        (pi_mass, eta_mass)
    });

    let pi_masses: Vec<f64> = columns.iter().map(|(p, _)| *p).collect();
    let log_pi = normalize_log(&pi_masses, || "pi".to_string())?;
    let mut log_eta = vec![0.0; v * k];
    for (kk, (_, masses)) in columns.iter().enumerate() {
        let col = normalize_log(masses, || format!("eta column {kk}"))?;
        for (t, x) in col.into_iter().enumerate() {
            log_eta[t * k + kk] = x;
        }
    }
    Ok(ModelParams { k, log_pi, log_eta })
}

fn normalize_log(masses: &[f64], what: impl Fn() -> String) -> Result<Vec<f64>> {
    if masses.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
        return Err(Error::NonPositiveMass { what: what() });
    }
    let log_total = masses.iter().sum::<f64>().ln();
    Ok(masses.iter().map(|m| m.ln() - log_total).collect())
}

/// Log posterior of the parameters up to an additive constant:
///
/// ```text
/// Σ_k (alpha_k - 1) log pi_k + Σ_vk (beta_vk - 1) log eta_vk
///   + Σ_labeled log Σ_{k in class(i)} exp(score_ik)
///   + lambda Σ_unlabeled log Σ_k exp(score_ik)
/// ```
///
/// Multinomial coefficients are dropped, so values only compare within one
/// corpus and label set.
pub fn log_posterior_objective(c: &Corpus, labels: &LabelStore, params: &ModelParams, h: &Hyperparams) -> f64 {
    objective_with(c, labels, params, h, Execution::default())
}

pub(crate) fn objective_with(
    c: &Corpus,
    labels: &LabelStore,
    params: &ModelParams,
    h: &Hyperparams,
    exec: Execution,
) -> f64 {
    let k = params.k();
    let mut prior = 0.0;
    for (a, lp) in h.alpha().iter().zip(params.log_pi()) {
        prior += (a - 1.0) * lp;
    }
    for (b, le) in h.beta().iter().zip(params.log_eta()) {
        prior += (b - 1.0) * le;
    }
    let lambda = h.lambda();
    let per_doc = exec.map_collect(c.n_docs(), |i| {
        let labeled = labels.get(i).is_some();
        if !labeled && lambda == 0.0 {
            return 0.0;
        }
        let mut s = vec![0.0; k];
        cluster_scores(c, labels, params, i, &mut s);
        let lse = logsumexp(&s);
        if labeled {
            lse
        } else {
            lambda * lse
        }
    });
    prior + per_doc.iter().sum::<f64>()
}

fn check_coverage(labels: &LabelStore) -> Result<()> {
    let counts = labels.class_counts();
    match counts.iter().position(|&n| n == 0) {
        Some(class) => Err(Error::MissingClass { class }),
        None => Ok(()),
    }
}

/// Supervised starting point: the M-step on labeled documents alone.
///
/// Requires at least one labeled document per class. In multi-cluster mode
/// negative documents are spread over the negative clusters by a seeded
/// symmetric Dirichlet draw so those clusters do not start identical.
pub fn init_naive_bayes(c: &Corpus, labels: &LabelStore, h: &Hyperparams, seed: u64) -> Result<ModelParams> {
    check_coverage(labels)?;
    init_from_labels(c, labels, h, seed)
}

/// [`init_naive_bayes`] without the per-class coverage check: clusters with
/// no labeled documents start at their prior mode.
pub fn init_from_labels(c: &Corpus, labels: &LabelStore, h: &Hyperparams, seed: u64) -> Result<ModelParams> {
    let k = h.k();
    let map = labels.cluster_to_class();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gamma = Gamma::new(NEGATIVE_JITTER_CONCENTRATION, 1.0).expect("valid gamma shape");
    let mut probs = vec![0.0; c.n_docs() * k];
    for (i, row) in probs.chunks_mut(k).enumerate() {
        let Some(class) = labels.get(i) else {
            continue;
        };
        let members: Vec<usize> = (0..k).filter(|&kk| map[kk] == class).collect();
        if members.len() == 1 {
            row[members[0]] = 1.0;
        } else {
            let draws: Vec<f64> = members.iter().map(|_| gamma.sample(&mut rng)).collect();
            let total: f64 = draws.iter().sum();
            for (&kk, d) in members.iter().zip(&draws) {
                row[kk] = d / total;
            }
        }
    }
    let post = PosteriorMatrix { k, probs };
    m_step_with(c, labels, &post, h, 0.0, Execution::default())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmOptions {
    /// Stop once `|f_t - f_{t-1}| / |f_{t-1}|` falls below this.
    pub tol: f64,
    pub max_iter: usize,
    pub execution: Execution,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions {
            tol: 1e-8,
            max_iter: 500,
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: ModelParams,
    pub posterior: PosteriorMatrix,
    /// Objective before the first EM pair and after each one.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl FitResult {
    pub fn objective(&self) -> f64 {
        *self.trace.last().expect("trace holds the initial objective")
    }
}

/// Alternates E- and M-steps from `init` until the relative objective change
/// drops below `opts.tol` or `opts.max_iter` pairs have run.
pub fn fit_em(
    c: &Corpus,
    labels: &LabelStore,
    h: &Hyperparams,
    init: ModelParams,
    opts: &EmOptions,
) -> Result<FitResult> {
    if init.k() != h.k() || init.n_terms() != h.n_terms() || c.n_terms() != h.n_terms() {
        return Err(Error::invalid("init", "parameter shape does not match hyperparameters"));
    }
    let exec = opts.execution;
    let mut params = init;
    let mut obj = objective_with(c, labels, &params, h, exec);
    if !obj.is_finite() {
        return Err(Error::NonFiniteObjective { iteration: 0 });
    }
    let mut trace = vec![obj];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let post = e_step_with(c, labels, &params, exec);
        params = m_step_with(c, labels, &post, h, h.lambda(), exec)?;
        let next = objective_with(c, labels, &params, h, exec);
        if !next.is_finite() {
            return Err(Error::NonFiniteObjective { iteration: iterations });
        }
        trace.push(next);
        let rel = (next - obj).abs() / obj.abs().max(f64::MIN_POSITIVE);
        obj = next;
        if rel < opts.tol {
            converged = true;
            break;
        }
    }
    let posterior = e_step_with(c, labels, &params, exec);
    Ok(FitResult {
        params,
        posterior,
        trace,
        iterations,
        converged,
    })
}

/// Class-level view of a posterior matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    n_classes: usize,
    /// N × C, row-major.
    class_probs: Vec<f64>,
    pub labels: Vec<usize>,
}

impl Predictions {
    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_docs(&self) -> usize {
        self.labels.len()
    }

    pub fn probs(&self, i: usize) -> &[f64] {
        &self.class_probs[i * self.n_classes..(i + 1) * self.n_classes]
    }

    /// Shannon entropy (nats) of document `i`'s class probabilities.
    pub fn entropy(&self, i: usize) -> f64 {
        entropy(self.probs(i))
    }
}

/// Sums responsibilities of clusters mapped to the same class and takes the
/// argmax; ties go to the lowest class index (the negative class in binary
/// modes).
pub fn predict(post: &PosteriorMatrix, labels: &LabelStore) -> Predictions {
    let nc = labels.n_classes();
    let map = labels.cluster_to_class();
    let mut class_probs = vec![0.0; post.n_docs() * nc];
    let mut hard = Vec::with_capacity(post.n_docs());
    for (i, out) in class_probs.chunks_mut(nc).enumerate() {
        for (p, &cls) in post.row(i).iter().zip(map) {
            out[cls] += p;
        }
        let mut best = 0;
        for (c, &p) in out.iter().enumerate().skip(1) {
            if p > out[best] {
                best = c;
            }
        }
        hard.push(best);
    }
    Predictions {
        n_classes: nc,
        class_probs,
        labels: hard,
    }
}
