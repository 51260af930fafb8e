//! Flags shared by commands that build a model, and input loading.

use std::path::{Path, PathBuf};

use activemix::active::{ModeKind, SessionConfig};
use activemix::corpus::{load_corpus, Corpus};
use activemix::exec::Execution;
use activemix::model::load_labels;
use clap::Args;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::settings::parse_serde;

/// Corpus and model settings.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct ModelArgs {
    /// Document-feature matrix (`N V` header, then `doc_id<TAB>term<TAB>count`).
    #[arg(long)]
    pub dfm: Option<PathBuf>,
    /// Raw texts, `doc_id<TAB>text` per line.
    #[arg(long)]
    pub texts: Option<PathBuf>,
    /// binary, multi_cluster_binary or multiclass.
    #[arg(long, value_parser = parse_serde::<ModeKind>)]
    pub mode: Option<ModeKind>,
    /// Number of mixture clusters.
    #[arg(long)]
    pub k: Option<usize>,
    /// Index of the cluster that carries the positive class (multi-cluster binary).
    #[arg(long)]
    pub k_star: Option<usize>,
    /// Comma-separated class names.
    #[arg(long, value_delimiter = ',')]
    pub class_names: Option<Vec<String>>,
    /// Dirichlet prior on the mixing proportions (>= 1).
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Dirichlet prior on the word distributions (>= 1).
    #[arg(long)]
    pub beta: Option<f64>,
    /// Weight of unlabeled documents, in [0, 1].
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Relative objective change that ends EM.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// sequential or parallel.
    #[arg(long, value_parser = parse_serde::<Execution>)]
    pub execution: Option<Execution>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ModelArgs {
    /// Copies every given setting into `c`.
    pub fn apply(&self, c: &mut SessionConfig) {
        if let Some(v) = self.mode {
            c.mode = v;
        }
        if self.k.is_some() {
            c.k = self.k;
        }
        if let Some(v) = self.k_star {
            c.k_star = v;
        }
        if self.class_names.is_some() {
            c.class_names = self.class_names.clone();
        }
        if let Some(v) = self.alpha {
            c.alpha = v;
        }
        if let Some(v) = self.beta {
            c.beta = v;
        }
        if let Some(v) = self.lambda {
            c.lambda = v;
        }
        if let Some(v) = self.tol {
            c.em.tol = v;
        }
        if let Some(v) = self.max_iter {
            c.em.max_iter = v;
        }
        if let Some(v) = self.execution {
            c.em.execution = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
    }

    pub fn load_corpus(&self) -> CliResult<Corpus> {
        let dfm = self.dfm.as_deref().ok_or_else(|| CliError::missing("dfm"))?;
        Ok(load_corpus(dfm, self.texts.as_deref())?)
    }
}

/// Ground truth aligned with the corpus rows.
pub fn load_truth(path: &Path, corpus: &Corpus, n_classes: usize) -> CliResult<Vec<Option<usize>>> {
    let mut truth = vec![None; corpus.n_docs()];
    for (doc, class) in load_labels(path, corpus, n_classes)? {
        truth[doc] = Some(class);
    }
    Ok(truth)
}

pub fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    std::fs::write(path, bytes).map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))
}
