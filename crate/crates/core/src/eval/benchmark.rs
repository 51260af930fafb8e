use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::active::{simulate, LoopOptions, SessionConfig, StopKind, Strategy};
use crate::corpus::{load_corpus, subsample_to_rate, Corpus};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::math::RunningMean;
use crate::model::{load_labels, LabelStore};
use crate::synthetic::{generate, SyntheticSpec};

pub const BENCHMARK_VERSION: u32 = 1;

pub const RESULTS_HEADER: &str =
    "strategy,seed,iteration,n_labeled,precision,recall,f1,accuracy,macro_f1,objective,wall_clock_seconds";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CorpusSource {
    /// A fresh corpus per run, drawn with seed `spec.seed + run seed`.
    /// Documents are labeled with the class of their generating cluster.
    Synthetic(SyntheticSpec),
    /// A fixed corpus; `labels` holds `doc_id<TAB>class_index` ground truth.
    Files {
        dfm: PathBuf,
        labels: PathBuf,
        #[serde(default)]
        texts: Option<PathBuf>,
    },
}

fn default_version() -> u32 {
    BENCHMARK_VERSION
}

fn default_strategies() -> Vec<Strategy> {
    vec![Strategy::Uncertainty, Strategy::Random]
}

fn default_runs() -> usize {
    20
}

/// A grid of simulated active learning runs: every strategy is paired with
/// every run seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    pub source: CorpusSource,
    /// Resample each corpus so that class 1 makes up this share.
    #[serde(default)]
    pub positive_rate: Option<f64>,
    #[serde(default = "default_strategies")]
    pub strategies: Vec<Strategy>,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub first_seed: u64,
    /// Fits per run, the seed fit included.
    pub iterations: usize,
    #[serde(default)]
    pub doc_error_p: f64,
    #[serde(default)]
    pub keyword_error_p: f64,
    /// Session settings shared by every run; `strategy`, `seed` and the
    /// stopping rule are set per run.
    #[serde(default)]
    pub session: SessionConfig,
    /// Whether cells run concurrently.
    #[serde(default)]
    pub execution: Execution,
}

impl BenchmarkConfig {
    pub fn from_toml(s: &str) -> Result<Self> {
        let c: BenchmarkConfig = toml::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    /// Reads a TOML file; relative paths inside it resolve against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut c = Self::from_toml(&crate::corpus::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let CorpusSource::Files { dfm, labels, texts } = &mut c.source {
            for p in [Some(dfm), Some(labels), texts.as_mut()].into_iter().flatten() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != BENCHMARK_VERSION {
            return Err(Error::invalid("version", format!("unsupported benchmark version {}", self.version)));
        }
        if self.strategies.is_empty() || self.runs == 0 || self.iterations == 0 {
            return Err(Error::invalid("benchmark", "strategies, runs and iterations must be non-empty"));
        }
        self.session.validate()
    }

    /// Session settings for one cell: `iterations` fits under a fixed budget.
    pub fn session_for(&self, strategy: Strategy, seed: u64) -> SessionConfig {
        let mut s = self.session.clone();
        s.strategy = strategy;
        s.seed = seed;
        let seed_n = s.seed_size.unwrap_or(s.batch_size);
        s.stop.kind = StopKind::FixedBudget;
        s.stop.budget = Some(seed_n + (self.iterations - 1) * s.batch_size);
        s
    }
}

/// One evaluation in one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub strategy: Strategy,
    pub seed: u64,
    pub iteration: usize,
    pub n_labeled: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub objective: f64,
    pub wall_clock_seconds: f64,
}

/// Average over runs of one strategy at one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanCurvePoint {
    pub strategy: Strategy,
    pub iteration: usize,
    pub n_labeled: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResults {
    /// Ordered by strategy (config order), seed, iteration.
    pub rows: Vec<BenchmarkRow>,
    pub mean_curves: Vec<MeanCurvePoint>,
    /// Summed fit and evaluation time per strategy.
    pub wall_clock_seconds: BTreeMap<String, f64>,
}

impl BenchmarkResults {
    pub fn write_rows<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.rows {
            out.serialize(r)?;
        }
        out.flush().map_err(|e| Error::io("<results>", e))?;
        Ok(())
    }

    pub fn write_mean_curves<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.mean_curves {
            out.serialize(r)?;
        }
        out.flush().map_err(|e| Error::io("<curves>", e))?;
        Ok(())
    }

    pub fn curve(&self, strategy: Strategy) -> Vec<&MeanCurvePoint> {
        self.mean_curves.iter().filter(|p| p.strategy == strategy).collect()
    }
}

fn corpus_for(config: &BenchmarkConfig, seed: u64) -> Result<(Corpus, Vec<Option<usize>>)> {
    let (corpus, truth) = match &config.source {
        CorpusSource::Synthetic(spec) => {
            let mut spec = spec.clone();
            spec.seed = spec.seed.wrapping_add(seed);
            let s = generate(&spec)?;
            let map = config.session.model_mode().cluster_to_class(s.pi.len());
            let truth = s.clusters.iter().map(|&z| map.get(z).copied()).collect::<Option<Vec<_>>>().ok_or_else(|| {
                Error::invalid("source", "synthetic cluster count does not match the session's k")
            })?;
            (s.corpus, truth.into_iter().map(Some).collect())
        }
        CorpusSource::Files { dfm, labels, texts } => {
            let corpus = load_corpus(dfm, texts.as_deref())?;
            let n_classes = config.session.class_names()?.len();
            let mut truth = vec![None; corpus.n_docs()];
            for (doc, class) in load_labels(labels, &corpus, n_classes)? {
                truth[doc] = Some(class);
            }
            (corpus, truth)
        }
    };
    match config.positive_rate {
        None => Ok((corpus, truth)),
        Some(p) => {
            let store = LabelStore::from_assignments(truth.clone(), LabelStore::binary_names(), vec![0, 1])?;
            let sub = subsample_to_rate(&corpus, &store, p, seed)?;
            let sub_truth = sub
                .doc_ids()
                .iter()
                .map(|id| truth[corpus.doc_index(id).expect("subset of corpus")])
                .collect();
            Ok((sub, sub_truth))
        }
    }
}

fn run_cell(config: &BenchmarkConfig, strategy: Strategy, seed: u64) -> Result<Vec<BenchmarkRow>> {
    let (corpus, truth) = corpus_for(config, seed)?;
    let session = config.session_for(strategy, seed);
    let sim = simulate(&corpus, &truth, &session, config.doc_error_p, config.keyword_error_p, &LoopOptions::default())?;
    Ok(sim
        .state
        .metric_history()
        .iter()
        .map(|r| {
            let (precision, recall, f1) = r.headline();
            BenchmarkRow {
                strategy,
                seed,
                iteration: r.iteration,
                n_labeled: r.n_labeled,
                precision,
                recall,
                f1,
                accuracy: r.accuracy,
                macro_f1: r.macro_f1,
                objective: r.objective.unwrap_or(f64::NAN),
                wall_clock_seconds: r.wall_clock_seconds,
            }
        })
        .collect())
}

/// Runs every (strategy, seed) cell, possibly in parallel, and aggregates
/// mean curves. Output order does not depend on scheduling.
pub fn run_benchmark(config: &BenchmarkConfig) -> Result<BenchmarkResults> {
    config.validate()?;
    let cells: Vec<(Strategy, u64)> = config
        .strategies
        .iter()
        .flat_map(|&s| (0..config.runs as u64).map(move |r| (s, config.first_seed + r)))
        .collect();
    let results = config
        .execution
        .map_collect(cells.len(), |i| run_cell(config, cells[i].0, cells[i].1));
    let mut rows = Vec::new();
    for r in results {
        rows.extend(r?);
    }

    let mut acc: BTreeMap<(usize, usize), [RunningMean; 4]> = BTreeMap::new();
    let mut clock: BTreeMap<String, f64> = BTreeMap::new();
    for r in &rows {
        let s = config.strategies.iter().position(|&x| x == r.strategy).expect("configured strategy");
        let m = acc.entry((s, r.iteration)).or_default();
        for (slot, x) in m.iter_mut().zip([r.n_labeled as f64, r.precision, r.recall, r.f1]) {
            slot.push(x);
        }
        *clock.entry(r.strategy.as_str().to_owned()).or_default() += r.wall_clock_seconds;
    }
    let mean_curves = acc
        .into_iter()
        .map(|((s, iteration), m)| MeanCurvePoint {
            strategy: config.strategies[s],
            iteration,
            n_labeled: m[0].mean().unwrap_or_default(),
            precision: m[1].mean().unwrap_or_default(),
            recall: m[2].mean().unwrap_or_default(),
            f1: m[3].mean().unwrap_or_default(),
            runs: m[0].count(),
        })
        .collect();
    Ok(BenchmarkResults {
        rows,
        mean_curves,
        wall_clock_seconds: clock,
    })
}
