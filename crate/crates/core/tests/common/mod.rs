//! Random model instances and independently coded reference computations.
#![allow(dead_code)]

use activemix::corpus::{Corpus, CorpusBuilder, Vocabulary};
use activemix::model::{Hyperparams, LabelStore, Mode, ModelParams, PosteriorMatrix};
use rand::Rng;

/// Dense `N × V` counts of a corpus.
pub fn dense(c: &Corpus) -> Vec<Vec<f64>> {
    (0..c.n_docs())
        .map(|i| {
            let mut row = vec![0.0; c.n_terms()];
            let (terms, counts) = c.row(i);
            for (&t, &n) in terms.iter().zip(counts) {
                row[t as usize] = f64::from(n);
            }
            row
        })
        .collect()
}

pub fn corpus_from_dense(rows: &[Vec<u32>], n_terms: usize) -> Corpus {
    let vocab = Vocabulary::from((0..n_terms).map(|v| format!("t{v}")).collect::<Vec<_>>());
    let mut b = CorpusBuilder::with_vocabulary(vocab);
    for (i, row) in rows.iter().enumerate() {
        let id = format!("d{i}");
        b.document(&id);
        for (v, &n) in row.iter().enumerate() {
            b.insert(&id, &format!("t{v}"), n);
        }
    }
    b.build()
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub corpus: Corpus,
    pub labels: LabelStore,
    pub hyper: Hyperparams,
    pub params: ModelParams,
}

pub fn mode_for(kind: usize, k: usize, rng: &mut impl Rng) -> Mode {
    match kind {
        0 => Mode::Binary,
        1 => Mode::MultiClusterBinary {
            k_star: rng.random_range(0..k),
        },
        _ => Mode::Multiclass,
    }
}

/// A random corpus, label set, prior and parameter point.
///
/// `alpha` and `beta` lie in `[1.05, 3]` so that every MAP update has
/// positive mass.
pub fn random_instance(rng: &mut impl Rng, mode: Mode, k: usize, max_docs: usize, max_terms: usize, lambda: f64) -> Instance {
    let n = rng.random_range(1..=max_docs);
    let v = rng.random_range(1..=max_terms);
    let rows: Vec<Vec<u32>> = (0..n)
        .map(|_| (0..v).map(|_| if rng.random_bool(0.6) { rng.random_range(0..5) } else { 0 }).collect())
        .collect();
    let corpus = corpus_from_dense(&rows, v);
    let alpha: Vec<f64> = (0..k).map(|_| rng.random_range(1.05..3.0)).collect();
    let beta: Vec<f64> = (0..v * k).map(|_| rng.random_range(1.05..3.0)).collect();
    let hyper = Hyperparams::new(v, k, mode)
        .unwrap()
        .with_alpha(alpha)
        .unwrap()
        .with_beta(beta)
        .unwrap()
        .with_lambda(lambda)
        .unwrap();
    let n_classes = mode.n_classes(k);
    let assignments = (0..n)
        .map(|_| rng.random_bool(0.5).then(|| rng.random_range(0..n_classes)))
        .collect();
    let labels = LabelStore::from_assignments(assignments, LabelStore::default_names(mode, k), mode.cluster_to_class(k)).unwrap();
    Instance {
        params: random_params(rng, k, v),
        corpus,
        labels,
        hyper,
    }
}

pub fn random_simplex(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

pub fn random_params(rng: &mut impl Rng, k: usize, v: usize) -> ModelParams {
    let pi = random_simplex(rng, k);
    let cols: Vec<Vec<f64>> = (0..k).map(|_| random_simplex(rng, v)).collect();
    let eta: Vec<f64> = (0..v).flat_map(|t| cols.iter().map(move |c| c[t])).collect();
    ModelParams::from_probs(&pi, &eta).unwrap()
}

/// Responsibilities by direct evaluation of
/// `p_ik = pi_k Π_v eta_vk^D_iv / Σ_j pi_j Π_v eta_vj^D_iv`,
/// with the sum restricted to the clusters of a labeled document's class.
pub fn brute_e_step(inst: &Instance) -> Vec<Vec<f64>> {
    let d = dense(&inst.corpus);
    let k = inst.params.k();
    let pi = inst.params.pi();
    let eta: Vec<Vec<f64>> = (0..k).map(|kk| inst.params.eta_column(kk)).collect();
    let map = inst.labels.cluster_to_class();
    d.iter()
        .enumerate()
        .map(|(i, row)| {
            let allowed = |kk: usize| inst.labels.get(i).is_none_or(|c| map[kk] == c);
            let joint: Vec<f64> = (0..k)
                .map(|kk| {
                    if !allowed(kk) {
                        return 0.0;
                    }
                    let mut p = pi[kk];
                    for (t, &n) in row.iter().enumerate() {
                        p *= eta[kk][t].powf(n);
                    }
                    p
                })
                .collect();
            let total: f64 = joint.iter().sum();
            joint.iter().map(|j| j / total).collect()
        })
        .collect()
}

/// The MAP updates written out term by term:
/// `pi_k = (alpha_k - 1 + Σ_l p_ik + λ Σ_u p_ik) / Σ_j (...)` and
/// `eta_vk = (beta_vk - 1 + Σ_l p_ik D_iv + λ Σ_u p_ik D_iv) / Σ_w (...)`.
pub fn hand_m_step(inst: &Instance, post: &PosteriorMatrix) -> (Vec<f64>, Vec<Vec<f64>>) {
    let d = dense(&inst.corpus);
    let h = &inst.hyper;
    let k = h.k();
    let v = h.n_terms();
    let lambda = h.lambda();
    let mut pi_num = vec![0.0; k];
    let mut eta_num = vec![vec![0.0; v]; k];
    for kk in 0..k {
        pi_num[kk] = h.alpha()[kk] - 1.0;
        for t in 0..v {
            eta_num[kk][t] = h.beta_at(t, kk) - 1.0;
        }
        let mut labeled_pi = 0.0;
        let mut unlabeled_pi = 0.0;
        let mut labeled_eta = vec![0.0; v];
        let mut unlabeled_eta = vec![0.0; v];
        for (i, row) in d.iter().enumerate() {
            let p = post.row(i)[kk];
            let (pi_acc, eta_acc) = if inst.labels.get(i).is_some() {
                (&mut labeled_pi, &mut labeled_eta)
            } else {
                (&mut unlabeled_pi, &mut unlabeled_eta)
            };
            *pi_acc += p;
            for t in 0..v {
                eta_acc[t] += p * row[t];
            }
        }
        pi_num[kk] += labeled_pi + lambda * unlabeled_pi;
        for t in 0..v {
            eta_num[kk][t] += labeled_eta[t] + lambda * unlabeled_eta[t];
        }
    }
    let pi_total: f64 = pi_num.iter().sum();
    let pi = pi_num.iter().map(|x| x / pi_total).collect();
    let eta = eta_num
        .iter()
        .map(|col| {
            let total: f64 = col.iter().sum();
            col.iter().map(|x| x / total).collect()
        })
        .collect();
    (pi, eta)
}

/// Closed-form MAP naive Bayes from labeled documents only, one cluster per
/// class: `pi_c ∝ alpha_c - 1 + N_c` and
/// `eta_vc ∝ beta_vc - 1 + Σ_{i in c} D_iv`.
pub fn closed_form_nb(inst: &Instance) -> (Vec<f64>, Vec<Vec<f64>>) {
    let d = dense(&inst.corpus);
    let h = &inst.hyper;
    let k = h.k();
    let v = h.n_terms();
    let mut n_c = vec![0.0; k];
    let mut words = vec![vec![0.0; v]; k];
    for (i, row) in d.iter().enumerate() {
        if let Some(c) = inst.labels.get(i) {
            n_c[c] += 1.0;
            for t in 0..v {
                words[c][t] += row[t];
            }
        }
    }
    let alpha_sum: f64 = h.alpha().iter().sum();
    let n_l: f64 = n_c.iter().sum();
    let pi = (0..k)
        .map(|c| (h.alpha()[c] - 1.0 + n_c[c]) / (alpha_sum - k as f64 + n_l))
        .collect();
    let eta = (0..k)
        .map(|c| {
            let beta_sum: f64 = (0..v).map(|t| h.beta_at(t, c)).sum();
            let len: f64 = words[c].iter().sum();
            (0..v)
                .map(|t| (h.beta_at(t, c) - 1.0 + words[c][t]) / (beta_sum - v as f64 + len))
                .collect()
        })
        .collect();
    (pi, eta)
}

/// A random posterior whose labeled rows put mass only on the document's
/// class clusters.
pub fn random_restricted_posterior(rng: &mut impl Rng, inst: &Instance) -> PosteriorMatrix {
    let k = inst.hyper.k();
    let map = inst.labels.cluster_to_class();
    let mut probs = Vec::new();
    for i in 0..inst.corpus.n_docs() {
        let mut row: Vec<f64> = (0..k)
            .map(|kk| match inst.labels.get(i) {
                Some(c) if map[kk] != c => 0.0,
                _ => rng.random_range(0.05..1.0),
            })
            .collect();
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|x| *x /= total);
        probs.extend(row);
    }
    PosteriorMatrix::from_rows(k, probs).unwrap()
}
