//! HTTP API that exposes active learning sessions to human labelers.
//!
//! Reads serve the latest published snapshot of a session and never wait on
//! a fit. Mutations take the session's writer lock, publish the new state,
//! persist it, and hand any refit to a blocking task that keeps the lock
//! until it publishes. Clients poll the session status while it reads
//! `fitting`.

mod error;
mod registry;

use std::collections::BTreeMap;
use std::future::Future;
use std::io::Cursor;
use std::sync::Arc;

use activemix::active::{export_predictions, write_predictions, Phase, SessionConfig, SessionState};
use activemix::corpus::{corpus_from_texts, read_dfm, read_texts, Corpus};
use activemix::keywords::{KeywordDecision, Verdict};
use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;

pub use error::{ApiError, ApiResult, ErrorBody};
pub use registry::{corpus_id, Registry, SessionHandle, SessionMeta, Snapshot};

type AppState = Arc<Registry>;

pub fn router(registry: Arc<Registry>) -> Router {
    Router::new()
        .route("/v1/corpora", post(register_corpus))
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/{id}", get(get_session))
        .route("/v1/sessions/{id}/queries", get(get_queries))
        .route("/v1/sessions/{id}/labels", post(submit_labels))
        .route("/v1/sessions/{id}/keywords", get(get_keywords).post(submit_keywords))
        .route("/v1/sessions/{id}/metrics", get(get_metrics))
        .route("/v1/sessions/{id}/predictions", get(get_predictions))
        .route("/v1/sessions/{id}/stop", post(stop_session))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such route") })
        .with_state(registry)
}

/// Serves the API on `listener` until `shutdown` resolves.
pub async fn serve<F>(listener: TcpListener, registry: Arc<Registry>, shutdown: F) -> std::io::Result<()>
where
    F: Future<Output = ()> + Send + 'static,
{
    axum::serve(listener, router(registry)).with_graceful_shutdown(shutdown).await
}

fn parse_body<T: DeserializeOwned>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed request body: {e}")))
}

/// A class given either by index or by name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClassRef {
    Index(usize),
    Name(String),
}

impl ClassRef {
    fn resolve(&self, names: &[String], field: &str) -> ApiResult<usize> {
        let found = match self {
            ClassRef::Index(i) => (*i < names.len()).then_some(*i),
            ClassRef::Name(n) => names.iter().position(|c| c == n),
        };
        found.ok_or_else(|| {
            ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "invalid",
                format!("unknown class {self:?}; classes are {names:?}"),
            )
            .with_field(field)
        })
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DocumentIn {
    id: String,
    text: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CorpusIn {
    /// Long-format document-feature matrix, as in a `.dfm` file.
    dfm: Option<String>,
    /// Tab-separated raw texts, as in a texts file.
    texts: Option<String>,
    /// Raw documents to tokenize instead of a matrix.
    documents: Option<Vec<DocumentIn>>,
    #[serde(default = "default_min_len")]
    min_token_len: usize,
}

fn default_min_len() -> usize {
    1
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CorpusOut {
    pub corpus_id: String,
    pub n_docs: usize,
    pub n_terms: usize,
    pub created: bool,
}

async fn register_corpus(State(reg): State<AppState>, body: Bytes) -> ApiResult<Response> {
    let input: CorpusIn = parse_body(&body)?;
    let corpus = tokio::task::spawn_blocking(move || build_corpus(input))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    let (n_docs, n_terms) = (corpus.n_docs(), corpus.n_terms());
    let (corpus_id, created) = reg.register_corpus(corpus)?;
    let status = if created { StatusCode::CREATED } else { StatusCode::OK };
    Ok((status, Json(CorpusOut { corpus_id, n_docs, n_terms, created })).into_response())
}

fn build_corpus(input: CorpusIn) -> ApiResult<Corpus> {
    let corpus = match (input.dfm, input.documents) {
        (Some(dfm), None) => {
            let mut c = read_dfm(Cursor::new(dfm), "dfm")?;
            if let Some(t) = input.texts {
                c.set_raw_texts(read_texts(Cursor::new(t), "texts")?)?;
            }
            c
        }
        (None, Some(docs)) => {
            if input.texts.is_some() {
                return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid", "texts go with dfm, not documents").with_field("texts"));
            }
            corpus_from_texts(docs.iter().map(|d| (d.id.as_str(), d.text.as_str())), input.min_token_len)
        }
        _ => {
            return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid", "give exactly one of dfm or documents").with_field("dfm"));
        }
    };
    if corpus.n_docs() == 0 {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid", "corpus has no documents").with_field("dfm"));
    }
    corpus.validate()?;
    Ok(corpus)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SessionIn {
    corpus_id: String,
    #[serde(default)]
    config: SessionConfig,
    /// Ground truth for documents that may be held out for evaluation.
    #[serde(default)]
    held_out_truth: BTreeMap<String, ClassRef>,
}

/// Session status as reported to clients.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionOut {
    pub session_id: String,
    pub corpus_id: String,
    pub status: String,
    pub iteration: usize,
    pub n_labeled: usize,
    pub pending: usize,
    pub class_names: Vec<String>,
    pub stop_reason: Option<String>,
    pub error: Option<String>,
    pub created_at: f64,
    pub updated_at: f64,
}

fn summary(handle: &SessionHandle, snap: &Snapshot) -> SessionOut {
    let st = &snap.state;
    SessionOut {
        session_id: handle.id.clone(),
        corpus_id: handle.meta.corpus_id.clone(),
        status: snap.status().to_owned(),
        iteration: st.iteration(),
        n_labeled: st.n_labeled(),
        pending: st.pending().len(),
        class_names: st.class_names().to_vec(),
        stop_reason: st
            .stop_reason()
            .map(|r| serde_json::to_value(r).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default()),
        error: snap.error.clone(),
        created_at: handle.meta.created_at,
        updated_at: snap.updated_at,
    }
}

async fn create_session(State(reg): State<AppState>, body: Bytes) -> ApiResult<Response> {
    let input: SessionIn = parse_body(&body)?;
    let corpus = reg.corpus(&input.corpus_id).ok_or_else(|| ApiError::not_found("corpus", &input.corpus_id))?;
    input.config.validate()?;
    let names = input.config.class_names()?;
    let mut truth = BTreeMap::new();
    for (doc, class) in &input.held_out_truth {
        if corpus.doc_index(doc).is_none() {
            return Err(ApiError::from(activemix::Error::UnknownDocument(doc.clone())).with_field("held_out_truth"));
        }
        truth.insert(doc.clone(), class.resolve(&names, "held_out_truth")?);
    }
    let meta = SessionMeta {
        corpus_id: input.corpus_id.clone(),
        created_at: registry::now(),
        held_out_truth: truth,
    };
    let config = input.config;
    let (pool, state) = {
        let corpus = corpus.clone();
        let truth = meta.held_out_truth.clone();
        tokio::task::spawn_blocking(move || -> ApiResult<_> {
            let pool = registry::build_pool(&corpus, &config, &truth)?;
            let state = SessionState::new(config, &pool)?;
            Ok((pool, state))
        })
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??
    };
    let id = uuid::Uuid::new_v4().simple().to_string();
    let handle = reg.insert_session(id, meta, corpus, pool, state);
    reg.persist(&handle)?;
    Ok((StatusCode::CREATED, Json(summary(&handle, &handle.snapshot()))).into_response())
}

async fn get_session(State(reg): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<SessionOut>> {
    let handle = reg.session(&id)?;
    Ok(Json(summary(&handle, &handle.snapshot())))
}

fn require_status(snap: &Snapshot, expected: Phase) -> ApiResult<()> {
    let status = snap.status();
    if status == expected.as_str() {
        Ok(())
    } else {
        Err(ApiError::conflict(format!("session is {status}, expected {}", expected.as_str())).with_field("status"))
    }
}

/// One queued document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryItem {
    pub doc_id: String,
    pub text: Option<String>,
    pub probabilities: Option<Vec<f64>>,
    pub entropy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueriesOut {
    pub iteration: usize,
    pub class_names: Vec<String>,
    pub queries: Vec<QueryItem>,
}

async fn get_queries(State(reg): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<QueriesOut>> {
    let handle = reg.session(&id)?;
    let snap = handle.snapshot();
    require_status(&snap, Phase::AwaitingLabels)?;
    let queries = snap
        .state
        .pending()
        .iter()
        .map(|q| {
            let doc_id = handle.pool.train.doc_id(q.doc).to_owned();
            QueryItem {
                text: handle.corpus.raw_text(&doc_id).map(str::to_owned),
                doc_id,
                probabilities: q.probs.clone(),
                entropy: q.entropy,
            }
        })
        .collect();
    Ok(Json(QueriesOut {
        iteration: snap.state.iteration(),
        class_names: snap.state.class_names().to_vec(),
        queries,
    }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelIn {
    doc_id: String,
    class: ClassRef,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelsIn {
    labels: Vec<LabelIn>,
}

/// Runs `change` on a copy of the session state under the writer lock,
/// publishes and persists the result, and starts a fit when one is due.
async fn mutate<F>(reg: &AppState, handle: Arc<SessionHandle>, change: F) -> ApiResult<SessionOut>
where
    F: FnOnce(&mut SessionState, &SessionHandle) -> ApiResult<()>,
{
    let guard = handle.writer.clone().lock_owned().await;
    let mut state = (*handle.snapshot().state).clone();
    change(&mut state, &handle)?;
    let fitting = state.phase() == Phase::Fitting;
    handle.publish(state, fitting, None);
    reg.persist(&handle)?;
    let out = summary(&handle, &handle.snapshot());
    if fitting {
        let reg = reg.clone();
        tokio::task::spawn_blocking(move || {
            let _guard = guard;
            let mut state = (*handle.snapshot().state).clone();
            let mut error = None;
            while state.phase() == Phase::Fitting {
                if let Err(e) = state.advance(&handle.pool) {
                    error = Some(e.to_string());
                    break;
                }
            }
            handle.publish(state, false, error);
            let _ = reg.persist(&handle);
        });
    }
    Ok(out)
}

async fn submit_labels(State(reg): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<SessionOut>> {
    let handle = reg.session(&id)?;
    let input: LabelsIn = parse_body(&body)?;
    let out = mutate(&reg, handle, move |state, h| {
        let names = state.class_names().to_vec();
        let answers = input
            .labels
            .iter()
            .map(|l| Ok((l.doc_id.clone(), l.class.resolve(&names, &format!("labels.{}", l.doc_id))?)))
            .collect::<ApiResult<Vec<_>>>()?;
        Ok(state.submit_labels_by_id(&h.pool, &answers)?)
    })
    .await?;
    Ok(Json(out))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateGroup {
    pub class: usize,
    pub class_name: String,
    pub terms: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordsOut {
    pub candidates: Vec<CandidateGroup>,
    /// Keywords accepted so far, by class name.
    pub accepted: BTreeMap<String, Vec<String>>,
    pub rejected: Vec<String>,
}

async fn get_keywords(State(reg): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<KeywordsOut>> {
    let handle = reg.session(&id)?;
    let snap = handle.snapshot();
    require_status(&snap, Phase::AwaitingKeywords)?;
    let names = snap.state.class_names();
    let candidates = snap
        .state
        .keyword_candidates(&handle.pool)?
        .into_iter()
        .map(|(class, terms)| CandidateGroup {
            class,
            class_name: names[class].clone(),
            terms,
        })
        .collect();
    let ledger = snap.state.ledger();
    Ok(Json(KeywordsOut {
        candidates,
        accepted: names
            .iter()
            .enumerate()
            .map(|(c, n)| (n.clone(), ledger.accepted(c).iter().cloned().collect()))
            .collect(),
        rejected: ledger.rejected().iter().cloned().collect(),
    }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DecisionIn {
    term: String,
    class: ClassRef,
    verdict: Verdict,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DecisionsIn {
    #[serde(default)]
    decisions: Vec<DecisionIn>,
}

async fn submit_keywords(State(reg): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<SessionOut>> {
    let handle = reg.session(&id)?;
    let input: DecisionsIn = parse_body(&body)?;
    let out = mutate(&reg, handle, move |state, h| {
        let names = state.class_names().to_vec();
        let decisions = input
            .decisions
            .iter()
            .map(|d| {
                Ok(KeywordDecision {
                    term: d.term.clone(),
                    class: d.class.resolve(&names, &format!("decisions.{}", d.term))?,
                    verdict: d.verdict,
                })
            })
            .collect::<ApiResult<Vec<_>>>()?;
        Ok(state.submit_keywords(&h.pool, &decisions)?)
    })
    .await?;
    Ok(Json(out))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsOut {
    pub status: String,
    pub metrics: Vec<activemix::eval::MetricRecord>,
}

async fn get_metrics(State(reg): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<MetricsOut>> {
    let handle = reg.session(&id)?;
    let snap = handle.snapshot();
    Ok(Json(MetricsOut {
        status: snap.status().to_owned(),
        metrics: snap.state.metric_history().to_vec(),
    }))
}

#[derive(Debug, Deserialize)]
struct PredictionsQuery {
    format: Option<String>,
}

async fn get_predictions(
    State(reg): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<PredictionsQuery>,
) -> ApiResult<Response> {
    let handle = reg.session(&id)?;
    let snap = handle.snapshot();
    if snap.state.params().is_none() {
        return Err(ApiError::conflict("no model has been fitted yet").with_field("status"));
    }
    let rows = {
        let handle = handle.clone();
        tokio::task::spawn_blocking(move || export_predictions(&handle.pool, &snap.state))
            .await
            .map_err(|e| ApiError::internal(e.to_string()))??
    };
    match q.format.as_deref() {
        None | Some("csv") => {
            let mut buf = Vec::new();
            write_predictions(&rows, &mut buf)?;
            Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], buf).into_response())
        }
        Some("json") => Ok(Json(rows).into_response()),
        Some(other) => Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "invalid",
            format!("unknown format `{other}`; use csv or json"),
        )
        .with_field("format")),
    }
}

async fn stop_session(State(reg): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<SessionOut>> {
    let handle = reg.session(&id)?;
    let out = mutate(&reg, handle, |state, _| {
        state.stop();
        Ok(())
    })
    .await?;
    Ok(Json(out))
}
