//! In-memory registry of corpora and sessions, mirrored to a data directory.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use activemix::active::{read_events, Phase, Pool, SessionConfig, SessionState};
use activemix::corpus::{load_corpus, Corpus};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{ApiError, ApiResult};

pub fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

/// Content hash of a corpus in its canonical file form.
pub fn corpus_id(c: &Corpus) -> String {
    let mut dfm = Vec::new();
    c.write_dfm(&mut dfm).expect("writing to memory");
    let mut texts = Vec::new();
    c.write_texts(&mut texts).expect("writing to memory");
    let mut h = Sha256::new();
    h.update(&dfm);
    h.update([0u8]);
    h.update(&texts);
    hex::encode(&h.finalize()[..8])
}

/// Session metadata persisted beside the session files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionMeta {
    pub corpus_id: String,
    pub created_at: f64,
    /// Ground truth for held-out documents, used only for evaluation.
    #[serde(default)]
    pub held_out_truth: BTreeMap<String, usize>,
}

/// Latest published state of a session. Readers clone the `Arc` and never
/// wait on a fit.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub state: Arc<SessionState>,
    pub fitting: bool,
    pub error: Option<String>,
    pub updated_at: f64,
}

impl Snapshot {
    pub fn status(&self) -> &'static str {
        if self.fitting {
            Phase::Fitting.as_str()
        } else {
            self.state.phase().as_str()
        }
    }
}

#[derive(Debug)]
pub struct SessionHandle {
    pub id: String,
    pub meta: SessionMeta,
    pub corpus: Arc<Corpus>,
    pub pool: Arc<Pool>,
    /// Serializes mutations; a fit holds it until it publishes.
    pub writer: Arc<tokio::sync::Mutex<()>>,
    snapshot: RwLock<Snapshot>,
}

impl SessionHandle {
    pub fn snapshot(&self) -> Snapshot {
        self.snapshot.read().expect("snapshot lock").clone()
    }

    pub fn publish(&self, state: SessionState, fitting: bool, error: Option<String>) {
        *self.snapshot.write().expect("snapshot lock") = Snapshot {
            state: Arc::new(state),
            fitting,
            error,
            updated_at: now(),
        };
    }
}

#[derive(Debug, Default)]
pub struct Registry {
    data_dir: Option<PathBuf>,
    corpora: RwLock<HashMap<String, Arc<Corpus>>>,
    sessions: RwLock<HashMap<String, Arc<SessionHandle>>>,
    skipped: Vec<(String, String)>,
}

impl Registry {
    /// A registry that keeps nothing on disk.
    pub fn in_memory() -> Self {
        Registry::default()
    }

    /// Opens `data_dir`, restoring every corpus and replaying every session
    /// event log found there. Sessions that cannot be restored are left on
    /// disk and listed by [`Registry::skipped`].
    pub fn open(data_dir: &Path) -> activemix::Result<Self> {
        let mut reg = Registry {
            data_dir: Some(data_dir.to_path_buf()),
            ..Registry::default()
        };
        let io = |p: &Path, e| activemix::Error::Io {
            path: p.to_path_buf(),
            source: e,
        };
        for sub in ["corpora", "sessions"] {
            let p = data_dir.join(sub);
            fs::create_dir_all(&p).map_err(|e| io(&p, e))?;
        }
        for entry in sorted_dirs(&data_dir.join("corpora")).map_err(|e| io(data_dir, e))? {
            let texts = entry.join("texts.tsv");
            let c = load_corpus(&entry.join("corpus.dfm"), texts.exists().then_some(texts.as_path()))?;
            reg.corpora.write().expect("corpora lock").insert(corpus_id(&c), Arc::new(c));
        }
        for entry in sorted_dirs(&data_dir.join("sessions")).map_err(|e| io(data_dir, e))? {
            let id = entry.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            if let Err(e) = reg.restore_session(&id, &entry) {
                reg.skipped.push((id, e.to_string()));
            }
        }
        Ok(reg)
    }

    fn restore_session(&self, id: &str, dir: &Path) -> activemix::Result<()> {
        let meta: SessionMeta = read_json(&dir.join("meta.json"))?;
        let config: SessionConfig = read_json(&dir.join("config.json"))?;
        let events_path = dir.join("events.jsonl");
        let events = if events_path.exists() { read_events(&events_path)? } else { Vec::new() };
        let corpus = self
            .corpus(&meta.corpus_id)
            .ok_or_else(|| activemix::Error::UnknownDocument(format!("corpus {}", meta.corpus_id)))?;
        let pool = build_pool(&corpus, &config, &meta.held_out_truth)?;
        let state = SessionState::replay(config, &pool, &events)?;
        self.insert_session(id.to_owned(), meta, corpus, pool, state);
        Ok(())
    }

    /// Sessions found on disk that could not be restored, with the reason.
    pub fn skipped(&self) -> &[(String, String)] {
        &self.skipped
    }

    pub fn data_dir(&self) -> Option<&Path> {
        self.data_dir.as_deref()
    }

    pub fn corpus(&self, id: &str) -> Option<Arc<Corpus>> {
        self.corpora.read().expect("corpora lock").get(id).cloned()
    }

    /// Registers a corpus under its content hash. Returns the id and whether
    /// it was new.
    pub fn register_corpus(&self, c: Corpus) -> ApiResult<(String, bool)> {
        let id = corpus_id(&c);
        let mut corpora = self.corpora.write().expect("corpora lock");
        if corpora.contains_key(&id) {
            return Ok((id, false));
        }
        if let Some(dir) = &self.data_dir {
            let d = dir.join("corpora").join(&id);
            fs::create_dir_all(&d).map_err(|e| ApiError::internal(e.to_string()))?;
            let mut dfm = Vec::new();
            c.write_dfm(&mut dfm).map_err(|e| ApiError::internal(e.to_string()))?;
            fs::write(d.join("corpus.dfm"), dfm).map_err(|e| ApiError::internal(e.to_string()))?;
            if !c.raw_texts().is_empty() {
                let mut texts = Vec::new();
                c.write_texts(&mut texts).map_err(|e| ApiError::internal(e.to_string()))?;
                fs::write(d.join("texts.tsv"), texts).map_err(|e| ApiError::internal(e.to_string()))?;
            }
        }
        corpora.insert(id.clone(), Arc::new(c));
        Ok((id, true))
    }

    pub fn session(&self, id: &str) -> ApiResult<Arc<SessionHandle>> {
        self.sessions
            .read()
            .expect("sessions lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found("session", id))
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.sessions.read().expect("sessions lock").keys().cloned().collect();
        ids.sort();
        ids
    }

    pub fn insert_session(&self, id: String, meta: SessionMeta, corpus: Arc<Corpus>, pool: Pool, state: SessionState) -> Arc<SessionHandle> {
        let handle = Arc::new(SessionHandle {
            id: id.clone(),
            meta,
            corpus,
            pool: Arc::new(pool),
            writer: Arc::new(tokio::sync::Mutex::new(())),
            snapshot: RwLock::new(Snapshot {
                state: Arc::new(state),
                fitting: false,
                error: None,
                updated_at: now(),
            }),
        });
        self.sessions.write().expect("sessions lock").insert(id, handle.clone());
        handle
    }

    /// Writes the session directory for the current snapshot.
    pub fn persist(&self, handle: &SessionHandle) -> ApiResult<()> {
        let Some(dir) = &self.data_dir else {
            return Ok(());
        };
        let d = dir.join("sessions").join(&handle.id);
        fs::create_dir_all(&d).map_err(|e| ApiError::internal(e.to_string()))?;
        let meta = serde_json::to_vec_pretty(&handle.meta).map_err(|e| ApiError::internal(e.to_string()))?;
        fs::write(d.join("meta.json"), meta).map_err(|e| ApiError::internal(e.to_string()))?;
        handle.snapshot().state.write_dir(&d, &handle.pool)?;
        Ok(())
    }
}

/// Splits the corpus as the config says, keeping held-out truth by id.
pub fn build_pool(corpus: &Corpus, config: &SessionConfig, truth: &BTreeMap<String, usize>) -> activemix::Result<Pool> {
    if truth.is_empty() {
        return Pool::from_config(corpus, config, None);
    }
    let mut aligned = vec![None; corpus.n_docs()];
    for (id, &class) in truth {
        let row = corpus.doc_index(id).ok_or_else(|| activemix::Error::UnknownDocument(id.clone()))?;
        aligned[row] = Some(class);
    }
    Pool::from_config(corpus, config, Some(&aligned))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> activemix::Result<T> {
    let s = fs::read_to_string(path).map_err(|e| activemix::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(serde_json::from_str(&s)?)
}

fn sorted_dirs(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    out.sort();
    Ok(out)
}
