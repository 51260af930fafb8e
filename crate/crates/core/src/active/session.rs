use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::oracle::{Oracle, OracleResponse, SimulatedOracle};
use super::{check_stopping, derive_seed, random_batch, select_batch, StopDecision, StopKind, StopReason, Strategy, StoppingRule, DEFAULT_BATCH_SIZE};
use crate::corpus::{split_corpus, Corpus, SplitSpec};
use crate::error::{Error, Result};
use crate::eval::{metrics_csv, metrics_from_confusion, ConfusionMatrix, MetricRecord};
use crate::keywords::{apply_keywords, propose_round, KeywordDecision, KeywordLedger, DEFAULT_CANDIDATES, DEFAULT_GAMMA};
use crate::model::{
    e_step_with, fit_em, init_from_labels, predict, Checkpoint, EmOptions, Hyperparams, LabelStore, Mode, ModelParams,
    DEFAULT_ALPHA, DEFAULT_BETA, DEFAULT_LAMBDA,
};

const STREAM_SEED_BATCH: u64 = 0;
const STREAM_INIT: u64 = 1;
const STREAM_SELECT: u64 = 2;
const STREAM_SPLIT: u64 = 3;
const STREAM_ORACLE: u64 = 4;

pub const PREDICTIONS_HEADER: &str = "doc_id,class_name,probability";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeKind {
    #[default]
    Binary,
    MultiClusterBinary,
    Multiclass,
}

impl std::str::FromStr for ModeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" => Ok(ModeKind::Binary),
            "multi_cluster_binary" => Ok(ModeKind::MultiClusterBinary),
            "multiclass" => Ok(ModeKind::Multiclass),
            _ => Err(Error::invalid("mode", format!("`{s}` is not binary, multi_cluster_binary or multiclass"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KeywordConfig {
    /// Ask for keyword decisions after every labeled batch.
    pub enabled: bool,
    pub gamma: f64,
    /// Candidates proposed per class and round.
    pub m: usize,
    /// Keywords known before any labeling, keyed by class name.
    pub initial: BTreeMap<String, Vec<String>>,
}

impl Default for KeywordConfig {
    fn default() -> Self {
        KeywordConfig {
            enabled: false,
            gamma: DEFAULT_GAMMA,
            m: DEFAULT_CANDIDATES,
            initial: BTreeMap::new(),
        }
    }
}

/// Everything that determines a session's trajectory besides the corpus
/// and the answers it receives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub mode: ModeKind,
    /// Number of clusters; defaults to 2 in binary mode and to the number of
    /// class names in multiclass mode.
    pub k: Option<usize>,
    /// Positive cluster in multi-cluster binary mode.
    pub k_star: usize,
    pub class_names: Option<Vec<String>>,
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub batch_size: usize,
    /// Size of the random first batch; defaults to `batch_size`.
    pub seed_size: Option<usize>,
    pub strategy: Strategy,
    pub stop: StoppingRule,
    pub keywords: KeywordConfig,
    pub em: EmOptions,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            mode: ModeKind::Binary,
            k: None,
            k_star: 0,
            class_names: None,
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            lambda: DEFAULT_LAMBDA,
            batch_size: DEFAULT_BATCH_SIZE,
            seed_size: None,
            strategy: Strategy::Uncertainty,
            stop: StoppingRule::default(),
            keywords: KeywordConfig::default(),
            em: EmOptions::default(),
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

impl SessionConfig {
    pub fn n_clusters(&self) -> Result<usize> {
        match (self.mode, self.k) {
            (ModeKind::Binary, None | Some(2)) => Ok(2),
            (ModeKind::Binary, Some(k)) => Err(Error::invalid("k", format!("binary mode uses 2 clusters, got {k}"))),
            (ModeKind::MultiClusterBinary, Some(k)) => Ok(k),
            (ModeKind::MultiClusterBinary, None) => Err(Error::invalid("k", "multi_cluster_binary mode needs k")),
            (ModeKind::Multiclass, Some(k)) => Ok(k),
            (ModeKind::Multiclass, None) => self
                .class_names
                .as_ref()
                .map(Vec::len)
                .ok_or_else(|| Error::invalid("k", "multiclass mode needs k or class_names")),
        }
    }

    pub fn model_mode(&self) -> Mode {
        match self.mode {
            ModeKind::Binary => Mode::Binary,
            ModeKind::MultiClusterBinary => Mode::MultiClusterBinary { k_star: self.k_star },
            ModeKind::Multiclass => Mode::Multiclass,
        }
    }

    pub fn hyperparams(&self, n_terms: usize) -> Result<Hyperparams> {
        let k = self.n_clusters()?;
        Hyperparams::new(n_terms, k, self.model_mode())?
            .with_alpha(vec![self.alpha; k])?
            .with_uniform_beta(self.beta)?
            .with_lambda(self.lambda)
    }

    pub fn class_names(&self) -> Result<Vec<String>> {
        let k = self.n_clusters()?;
        let mode = self.model_mode();
        let names = self.class_names.clone().unwrap_or_else(|| LabelStore::default_names(mode, k));
        if names.len() != mode.n_classes(k) {
            return Err(Error::invalid(
                "class_names",
                format!("{} names given for {} classes", names.len(), mode.n_classes(k)),
            ));
        }
        let unique: HashSet<&String> = names.iter().collect();
        if unique.len() != names.len() {
            return Err(Error::invalid("class_names", "names must be unique"));
        }
        Ok(names)
    }

    /// Checks every field that does not depend on the corpus.
    pub fn validate(&self) -> Result<()> {
        self.hyperparams(1)?;
        self.class_names()?;
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be positive"));
        }
        if self.seed_size == Some(0) {
            return Err(Error::invalid("seed_size", "the seed batch must not be empty"));
        }
        self.stop.validate()?;
        KeywordLedger::new(2, self.keywords.gamma, self.keywords.m).map_err(|e| match e {
            Error::Invalid { message, .. } => Error::invalid("keywords.gamma", message),
            other => other,
        })?;
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::invalid("test_fraction", "must lie in [0, 1)"));
        }
        if !(self.em.tol >= 0.0) || self.em.max_iter == 0 {
            return Err(Error::invalid("em", "tol must be non-negative and max_iter positive"));
        }
        Ok(())
    }
}

/// Training pool and held-out set of one session.
#[derive(Debug, Clone)]
pub struct Pool {
    pub train: Corpus,
    pub test: Corpus,
    split: SplitSpec,
    test_truth: Vec<Option<usize>>,
}

impl Pool {
    /// `truth`, when given, is aligned with the rows of `c`; only its held-out
    /// part is kept, for evaluation.
    pub fn new(c: &Corpus, split: SplitSpec, truth: Option<&[Option<usize>]>) -> Result<Self> {
        let mut seen = vec![false; c.n_docs()];
        for &i in split.train.iter().chain(&split.test) {
            if i >= c.n_docs() || std::mem::replace(&mut seen[i], true) {
                return Err(Error::invalid("split", "train and test must partition the corpus"));
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::invalid("split", "train and test must partition the corpus"));
        }
        if truth.is_some_and(|t| t.len() != c.n_docs()) {
            return Err(Error::invalid("truth", "must have one entry per document"));
        }
        let test_truth = match truth {
            Some(t) => split.test.iter().map(|&i| t[i]).collect(),
            None => vec![None; split.test.len()],
        };
        Ok(Pool {
            train: c.subset(&split.train),
            test: c.subset(&split.test),
            split,
            test_truth,
        })
    }

    /// Splits `c` with the session's test fraction and seed.
    pub fn from_config(c: &Corpus, config: &SessionConfig, truth: Option<&[Option<usize>]>) -> Result<Self> {
        let split = split_corpus(c, config.test_fraction, derive_seed(config.seed, STREAM_SPLIT, 0))?;
        Pool::new(c, split, truth)
    }

    pub fn split(&self) -> &SplitSpec {
        &self.split
    }

    pub fn test_truth(&self) -> &[Option<usize>] {
        &self.test_truth
    }

    pub fn has_test_truth(&self) -> bool {
        self.test_truth.iter().any(Option::is_some)
    }

    /// Restricts corpus-aligned truth to the training rows.
    pub fn train_truth(&self, truth: &[Option<usize>]) -> Vec<Option<usize>> {
        self.split.train.iter().map(|&i| truth[i]).collect()
    }

    pub fn n_docs(&self) -> usize {
        self.split.train.len() + self.split.test.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Fitting,
    AwaitingLabels,
    AwaitingKeywords,
    Stopped,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Fitting => "fitting",
            Phase::AwaitingLabels => "awaiting_labels",
            Phase::AwaitingKeywords => "awaiting_keywords",
            Phase::Stopped => "stopped",
        }
    }
}

/// A document waiting for a label, with the model's view of it when the
/// query was made.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingQuery {
    /// Row in the training pool.
    pub doc: usize,
    pub probs: Option<Vec<f64>>,
    pub entropy: Option<f64>,
}

/// State of one active learning session over a [`Pool`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    config: SessionConfig,
    vocabulary_hash: String,
    /// Priors before any keyword boost.
    hyper: Hyperparams,
    labels: LabelStore,
    /// `(row, class)` in the order labels arrived.
    label_log: Vec<(usize, usize)>,
    ledger: KeywordLedger,
    params: Option<ModelParams>,
    /// Priors used by the most recent fit.
    fitted_with: Option<Hyperparams>,
    iteration: usize,
    pending: Vec<PendingQuery>,
    metric_history: Vec<MetricRecord>,
    phase: Phase,
    stop_reason: Option<StopReason>,
    last_predictions: Option<Vec<usize>>,
    #[serde(default)]
    events: Vec<SessionEvent>,
}

/// One externally supplied input to a session, in arrival order. Replaying
/// the events against the same pool and config rebuilds the session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SessionEvent {
    Labels { answers: Vec<(String, usize)> },
    Keywords { decisions: Vec<KeywordDecision> },
    Stop,
}

impl SessionState {
    /// Validates `config` against the pool and queues a random seed batch.
    pub fn new(config: SessionConfig, pool: &Pool) -> Result<Self> {
        config.validate()?;
        if config.stop.kind == StopKind::F1Delta && !pool.has_test_truth() {
            return Err(Error::invalid("stop", "f1_delta stopping needs held-out ground truth"));
        }
        let vocab = pool.train.vocabulary();
        let hyper = config.hyperparams(vocab.len())?;
        let names = config.class_names()?;
        let labels = LabelStore::for_hyperparams(pool.train.n_docs(), &hyper, Some(names.clone()))?;
        let mut ledger = KeywordLedger::new(names.len(), config.keywords.gamma, config.keywords.m)?;
        let mut initial = Vec::new();
        for (class_name, terms) in &config.keywords.initial {
            let class = names
                .iter()
                .position(|n| n == class_name)
                .ok_or_else(|| Error::invalid("keywords.initial", format!("unknown class `{class_name}`")))?;
            initial.extend(terms.iter().map(|t| KeywordDecision::accept(t.clone(), class)));
        }
        ledger.record_decisions(&initial, vocab)?;

        let mut seed_n = config.seed_size.unwrap_or(config.batch_size);
        if let Some(b) = config.stop.budget {
            seed_n = seed_n.min(b);
        }
        let pending: Vec<PendingQuery> = random_batch(&labels, seed_n, derive_seed(config.seed, STREAM_SEED_BATCH, 0))
            .into_iter()
            .map(|doc| PendingQuery {
                doc,
                probs: None,
                entropy: None,
            })
            .collect();
        if pending.is_empty() {
            return Err(Error::invalid("corpus", "the training pool is empty"));
        }
        Ok(SessionState {
            vocabulary_hash: vocab.fingerprint(),
            config,
            hyper,
            labels,
            label_log: Vec::new(),
            ledger,
            params: None,
            fitted_with: None,
            iteration: 0,
            pending,
            metric_history: Vec::new(),
            phase: Phase::AwaitingLabels,
            stop_reason: None,
            last_predictions: None,
            events: Vec::new(),
        })
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    /// Number of completed fits.
    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn hyperparams(&self) -> &Hyperparams {
        &self.hyper
    }

    pub fn labels(&self) -> &LabelStore {
        &self.labels
    }

    pub fn label_log(&self) -> &[(usize, usize)] {
        &self.label_log
    }

    pub fn ledger(&self) -> &KeywordLedger {
        &self.ledger
    }

    pub fn params(&self) -> Option<&ModelParams> {
        self.params.as_ref()
    }

    pub fn fitted_hyperparams(&self) -> Option<&Hyperparams> {
        self.fitted_with.as_ref()
    }

    pub fn pending(&self) -> &[PendingQuery] {
        &self.pending
    }

    pub fn pending_docs(&self) -> Vec<usize> {
        self.pending.iter().map(|q| q.doc).collect()
    }

    pub fn metric_history(&self) -> &[MetricRecord] {
        &self.metric_history
    }

    pub fn stop_reason(&self) -> Option<StopReason> {
        self.stop_reason
    }

    pub fn n_labeled(&self) -> usize {
        self.labels.n_labeled()
    }

    pub fn class_names(&self) -> &[String] {
        self.labels.class_names()
    }

    fn expect_phase(&self, expected: Phase) -> Result<()> {
        if self.phase == expected {
            Ok(())
        } else if self.phase == Phase::Stopped {
            Err(Error::Stopped)
        } else {
            Err(Error::WrongPhase {
                expected: expected.as_str().into(),
                actual: self.phase.as_str().into(),
            })
        }
    }

    fn check_pool(&self, pool: &Pool) -> Result<()> {
        if pool.train.n_docs() != self.labels.n_docs() || pool.train.vocabulary().fingerprint() != self.vocabulary_hash {
            return Err(Error::invalid("pool", "does not match the session"));
        }
        Ok(())
    }

    /// Records answers for queued documents. Partial batches accumulate;
    /// once the batch is complete the session moves on to keyword review
    /// (when enabled and a model exists) or fitting. Nothing is applied if
    /// any answer is rejected.
    pub fn submit_labels(&mut self, pool: &Pool, answers: &[(usize, usize)]) -> Result<()> {
        self.expect_phase(Phase::AwaitingLabels)?;
        self.check_pool(pool)?;
        let mut seen = HashSet::new();
        for &(doc, class) in answers {
            if doc >= self.labels.n_docs() {
                return Err(Error::UnknownDocument(format!("row {doc}")));
            }
            let id = pool.train.doc_id(doc);
            let reject = |reason: &str| Error::LabelRejected {
                doc_id: id.to_owned(),
                reason: reason.to_owned(),
            };
            if class >= self.labels.n_classes() {
                return Err(reject(&format!("class {class} out of range for {} classes", self.labels.n_classes())));
            }
            if self.labels.get(doc).is_some() {
                return Err(reject("already labeled"));
            }
            if !self.pending.iter().any(|q| q.doc == doc) {
                return Err(reject("not in the current query batch"));
            }
            if !seen.insert(doc) {
                return Err(reject("submitted twice"));
            }
        }
        for &(doc, class) in answers {
            self.labels.set(doc, class)?;
            self.label_log.push((doc, class));
        }
        self.events.push(SessionEvent::Labels {
            answers: answers.iter().map(|&(d, c)| (pool.train.doc_id(d).to_owned(), c)).collect(),
        });
        self.pending.retain(|q| !seen.contains(&q.doc));
        if self.pending.is_empty() {
            self.phase = if self.config.keywords.enabled && self.params.is_some() {
                Phase::AwaitingKeywords
            } else {
                Phase::Fitting
            };
        }
        Ok(())
    }

    /// [`Self::submit_labels`] keyed by document id.
    pub fn submit_labels_by_id(&mut self, pool: &Pool, answers: &[(String, usize)]) -> Result<()> {
        let rows = answers
            .iter()
            .map(|(id, class)| match pool.train.doc_index(id) {
                Some(row) => Ok((row, *class)),
                None if pool.test.doc_index(id).is_some() => Err(Error::LabelRejected {
                    doc_id: id.clone(),
                    reason: "held out for evaluation".into(),
                }),
                None => Err(Error::UnknownDocument(id.clone())),
            })
            .collect::<Result<Vec<_>>>()?;
        self.submit_labels(pool, &rows)
    }

    /// Keyword candidates for the current round, grouped by class.
    pub fn keyword_candidates(&self, pool: &Pool) -> Result<Vec<(usize, Vec<String>)>> {
        self.expect_phase(Phase::AwaitingKeywords)?;
        let params = self
            .params
            .as_ref()
            .ok_or_else(|| Error::invalid("keywords", "no model has been fitted yet"))?;
        Ok(propose_round(params, &self.ledger, pool.train.vocabulary(), self.labels.cluster_to_class()))
    }

    /// Records keyword decisions (possibly none) and moves on to fitting.
    pub fn submit_keywords(&mut self, pool: &Pool, decisions: &[KeywordDecision]) -> Result<()> {
        self.expect_phase(Phase::AwaitingKeywords)?;
        self.check_pool(pool)?;
        self.ledger.record_decisions(decisions, pool.train.vocabulary())?;
        self.events.push(SessionEvent::Keywords {
            decisions: decisions.to_vec(),
        });
        self.phase = Phase::Fitting;
        Ok(())
    }

    /// Refits, evaluates, checks the stopping rule and queues the next batch.
    pub fn advance(&mut self, pool: &Pool) -> Result<&MetricRecord> {
        self.expect_phase(Phase::Fitting)?;
        self.check_pool(pool)?;
        let started = Instant::now();
        let vocab = pool.train.vocabulary();
        let h = apply_keywords(&self.hyper, &self.ledger, vocab)?;
        let init = match &self.params {
            Some(p) => p.clone(),
            None => init_from_labels(&pool.train, &self.labels, &h, derive_seed(self.config.seed, STREAM_INIT, 0))?,
        };
        let fit = fit_em(&pool.train, &self.labels, &h, init, &self.config.em)?;
        let preds = predict(&fit.posterior, &self.labels);

        let change = self.last_predictions.as_ref().map(|prev| {
            let unlabeled: Vec<usize> = self.labels.unlabeled().collect();
            if unlabeled.is_empty() {
                0.0
            } else {
                unlabeled.iter().filter(|&&i| prev[i] != preds.labels[i]).count() as f64 / unlabeled.len() as f64
            }
        });

        let positive = self.config.model_mode().positive_class();
        let mut record = if pool.has_test_truth() {
            let test_labels = LabelStore::new(pool.test.n_docs(), self.labels.class_names().to_vec(), self.labels.cluster_to_class().to_vec())?;
            let test_post = e_step_with(&pool.test, &test_labels, &fit.params, self.config.em.execution);
            let test_preds = predict(&test_post, &test_labels);
            let mut cm = ConfusionMatrix::new(self.labels.n_classes());
            for (i, truth) in pool.test_truth().iter().enumerate() {
                if let Some(t) = truth {
                    cm.record(*t, test_preds.labels[i])?;
                }
            }
            metrics_from_confusion(&cm, positive)
        } else {
            MetricRecord {
                positive_class: positive,
                undefined: true,
                ..MetricRecord::default()
            }
        };
        record.iteration = self.iteration;
        record.n_labeled = self.labels.n_labeled();
        record.objective = Some(fit.objective());
        record.prediction_change = change;

        let f1s: Vec<Option<f64>> = self
            .metric_history
            .iter()
            .chain(std::iter::once(&record))
            .map(|r| r.has_evaluation().then(|| r.f1()))
            .collect();
        let changes: Vec<Option<f64>> = self
            .metric_history
            .iter()
            .chain(std::iter::once(&record))
            .map(|r| r.prediction_change)
            .collect();
        let decision = check_stopping(&self.config.stop, record.n_labeled, &f1s, &changes)?;

        let mut next = Vec::new();
        if decision == StopDecision::Continue {
            let mut n = self.config.batch_size;
            if let Some(b) = self.config.stop.budget {
                n = n.min(b.saturating_sub(record.n_labeled));
            }
            let seed = derive_seed(self.config.seed, STREAM_SELECT, self.iteration as u64);
            next = select_batch(&fit.posterior, &self.labels, n, self.config.strategy, seed)
                .into_iter()
                .map(|doc| PendingQuery {
                    doc,
                    probs: Some(preds.probs(doc).to_vec()),
                    entropy: Some(preds.entropy(doc)),
                })
                .collect();
        }

        self.params = Some(fit.params);
        self.fitted_with = Some(h);
        self.last_predictions = Some(preds.labels);
        self.iteration += 1;
        match decision {
            StopDecision::Stop(reason) => self.finish(reason),
            StopDecision::Continue if next.is_empty() => self.finish(StopReason::PoolExhausted),
            StopDecision::Continue => {
                self.pending = next;
                self.phase = Phase::AwaitingLabels;
            }
        }
        record.wall_clock_seconds = started.elapsed().as_secs_f64();
        self.metric_history.push(record);
        Ok(self.metric_history.last().expect("just pushed"))
    }

    fn finish(&mut self, reason: StopReason) {
        self.pending.clear();
        self.phase = Phase::Stopped;
        self.stop_reason = Some(reason);
    }

    /// Stops the session by request; a no-op once stopped.
    pub fn stop(&mut self) {
        if self.phase != Phase::Stopped {
            self.events.push(SessionEvent::Stop);
            self.finish(StopReason::Manual);
        }
    }

    /// Parameters of the latest fit with the priors they were fitted under.
    pub fn checkpoint(&self, pool: &Pool) -> Option<Checkpoint> {
        let params = self.params.clone()?;
        let h = self.fitted_with.clone()?;
        Some(Checkpoint::new(pool.train.vocabulary(), h, params))
    }

    pub fn events(&self) -> &[SessionEvent] {
        &self.events
    }

    /// Applies one event, then fits for as long as the session is ready to.
    pub fn apply_event(&mut self, pool: &Pool, event: &SessionEvent) -> Result<()> {
        match event {
            SessionEvent::Labels { answers } => self.submit_labels_by_id(pool, answers)?,
            SessionEvent::Keywords { decisions } => self.submit_keywords(pool, decisions)?,
            SessionEvent::Stop => self.stop(),
        }
        while self.phase == Phase::Fitting {
            self.advance(pool)?;
        }
        Ok(())
    }

    /// Rebuilds a session from its config and event log.
    pub fn replay(config: SessionConfig, pool: &Pool, events: &[SessionEvent]) -> Result<Self> {
        let mut state = SessionState::new(config, pool)?;
        for e in events {
            state.apply_event(pool, e)?;
        }
        Ok(state)
    }

    /// Writes the session directory: `config.json`, `labels.tsv`,
    /// `keywords.tsv`, `events.jsonl`, `params.json` (after the first fit),
    /// `metrics.csv` and `state.json`.
    pub fn write_dir(&self, dir: &Path, pool: &Pool) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_atomic(&dir.join("config.json"), serde_json::to_string_pretty(&self.config)?.as_bytes())?;
        let mut labels = String::new();
        for &(doc, class) in &self.label_log {
            labels.push_str(&format!("{}\t{class}\n", pool.train.doc_id(doc)));
        }
        write_atomic(&dir.join("labels.tsv"), labels.as_bytes())?;
        let mut keywords = Vec::new();
        self.ledger
            .write(&mut keywords, self.labels.class_names())
            .map_err(|e| Error::io(dir.join("keywords.tsv"), e))?;
        write_atomic(&dir.join("keywords.tsv"), &keywords)?;
        let mut events = String::new();
        for e in &self.events {
            events.push_str(&serde_json::to_string(e)?);
            events.push('\n');
        }
        write_atomic(&dir.join("events.jsonl"), events.as_bytes())?;
        if let Some(ck) = self.checkpoint(pool) {
            write_atomic(&dir.join("params.json"), ck.to_json()?.as_bytes())?;
        }
        write_atomic(&dir.join("metrics.csv"), metrics_csv(&self.metric_history).as_bytes())?;
        write_atomic(&dir.join("state.json"), serde_json::to_string(self)?.as_bytes())?;
        Ok(())
    }

    /// Restores a session written by [`Self::write_dir`].
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let path = dir.join("state.json");
        let s = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&s)?)
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub doc_id: String,
    pub class_name: String,
    pub probability: f64,
}

/// One row per document of the corpus in its original order. Labeled
/// documents carry their label with probability 1; the rest carry the most
/// probable class.
pub fn export_predictions(pool: &Pool, state: &SessionState) -> Result<Vec<PredictionRow>> {
    let params = state
        .params()
        .ok_or_else(|| Error::invalid("predictions", "no model has been fitted yet"))?;
    let exec = state.config().em.execution;
    let names = state.class_names();
    let mut rows: Vec<Option<PredictionRow>> = vec![None; pool.n_docs()];
    let labels = state.labels();
    let train_preds = predict(&e_step_with(&pool.train, labels, params, exec), labels);
    for (i, &orig) in pool.split().train.iter().enumerate() {
        let (class, p) = match labels.get(i) {
            Some(c) => (c, 1.0),
            None => (train_preds.labels[i], train_preds.probs(i)[train_preds.labels[i]]),
        };
        rows[orig] = Some(PredictionRow {
            doc_id: pool.train.doc_id(i).to_owned(),
            class_name: names[class].clone(),
            probability: p,
        });
    }
    let test_labels = LabelStore::new(pool.test.n_docs(), names.to_vec(), labels.cluster_to_class().to_vec())?;
    let test_preds = predict(&e_step_with(&pool.test, &test_labels, params, exec), &test_labels);
    for (i, &orig) in pool.split().test.iter().enumerate() {
        let class = test_preds.labels[i];
        rows[orig] = Some(PredictionRow {
            doc_id: pool.test.doc_id(i).to_owned(),
            class_name: names[class].clone(),
            probability: test_preds.probs(i)[class],
        });
    }
    Ok(rows.into_iter().map(|r| r.expect("split covers every document")).collect())
}

/// Writes `doc_id,class_name,probability` rows with a header.
pub fn write_predictions<W: Write>(rows: &[PredictionRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush().map_err(|e| Error::io("<predictions>", e))?;
    Ok(())
}

#[derive(Debug, Clone, Default)]
pub struct LoopOptions {
    /// Session directory rewritten after every fit.
    pub checkpoint_dir: Option<PathBuf>,
    /// Return [`LoopStatus::Paused`] after this many fits in this call.
    pub max_fits: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LoopStatus {
    Stopped { predictions: Vec<PredictionRow> },
    /// The oracle has not answered; resume once it has.
    Awaiting(Phase),
    /// `max_fits` was reached.
    Paused,
}

/// Drives `state` with `oracle` until the session stops or the oracle
/// defers. A simulated oracle that will judge keywords gets its reference
/// keyword sets fitted on first use.
pub fn run_active_loop(pool: &Pool, state: &mut SessionState, oracle: &mut Oracle, opts: &LoopOptions) -> Result<LoopStatus> {
    let mut fits = 0;
    loop {
        if opts.max_fits.is_some_and(|m| fits >= m) && state.phase() != Phase::Stopped {
            return Ok(LoopStatus::Paused);
        }
        match state.phase() {
            Phase::AwaitingLabels => match oracle.label(&state.pending_docs())? {
                OracleResponse::Ready(answers) => state.submit_labels(pool, &answers)?,
                OracleResponse::Awaiting => return Ok(LoopStatus::Awaiting(Phase::AwaitingLabels)),
            },
            Phase::AwaitingKeywords => {
                if let Oracle::Simulated(s) = oracle {
                    if !s.has_keyword_truth() {
                        let seed = derive_seed(state.config().seed, STREAM_ORACLE, 0);
                        s.fit_keyword_truth(&pool.train, state.hyperparams(), &state.config().em, seed)?;
                    }
                }
                let candidates = state.keyword_candidates(pool)?;
                match oracle.judge_keywords(&candidates, pool.train.vocabulary())? {
                    OracleResponse::Ready(decisions) => state.submit_keywords(pool, &decisions)?,
                    OracleResponse::Awaiting => return Ok(LoopStatus::Awaiting(Phase::AwaitingKeywords)),
                }
            }
            Phase::Fitting => {
                state.advance(pool)?;
                fits += 1;
                if let Some(dir) = &opts.checkpoint_dir {
                    state.write_dir(dir, pool)?;
                    if let Oracle::Simulated(_) = oracle {
                        write_atomic(&dir.join("oracle.json"), serde_json::to_string(oracle)?.as_bytes())?;
                    }
                }
            }
            Phase::Stopped => {
                return Ok(LoopStatus::Stopped {
                    predictions: export_predictions(pool, state)?,
                })
            }
        }
    }
}

/// Reads an `events.jsonl` log, one event per line.
pub fn read_events(path: &Path) -> Result<Vec<SessionEvent>> {
    let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    s.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

/// Restores the oracle saved next to a session directory, if any.
pub fn load_oracle(dir: &Path) -> Result<Option<Oracle>> {
    let path = dir.join("oracle.json");
    match fs::read_to_string(&path) {
        Ok(s) => Ok(Some(serde_json::from_str(&s)?)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(Error::io(&path, e)),
    }
}

/// A finished simulated session.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub pool: Pool,
    pub state: SessionState,
    pub oracle: Oracle,
    pub predictions: Vec<PredictionRow>,
}

/// The simulated oracle [`simulate`] uses for a session with `config`;
/// `truth` is aligned with the rows of the unsplit corpus.
pub fn session_oracle(
    pool: &Pool,
    config: &SessionConfig,
    truth: &[Option<usize>],
    doc_error_p: f64,
    keyword_error_p: f64,
) -> Result<Oracle> {
    let sim = SimulatedOracle::new(
        pool.train_truth(truth),
        config.class_names()?.len(),
        doc_error_p,
        keyword_error_p,
        derive_seed(config.seed, STREAM_ORACLE, 1),
    )?;
    Ok(Oracle::Simulated(sim))
}

/// Splits `c`, then runs a session against a simulated oracle that answers
/// from `truth` (aligned with the rows of `c`).
pub fn simulate(
    c: &Corpus,
    truth: &[Option<usize>],
    config: &SessionConfig,
    doc_error_p: f64,
    keyword_error_p: f64,
    opts: &LoopOptions,
) -> Result<Simulation> {
    let pool = Pool::from_config(c, config, Some(truth))?;
    let mut state = SessionState::new(config.clone(), &pool)?;
    let mut oracle = session_oracle(&pool, config, truth, doc_error_p, keyword_error_p)?;
    match run_active_loop(&pool, &mut state, &mut oracle, opts)? {
        LoopStatus::Stopped { predictions } => Ok(Simulation {
            pool,
            state,
            oracle,
            predictions,
        }),
        LoopStatus::Awaiting(_) | LoopStatus::Paused => unreachable!("simulated oracles always answer"),
    }
}
