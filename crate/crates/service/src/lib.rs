//! Labelling sessions for a human oracle, persisted so that they survive
//! restarts, and the HTTP API that exposes them.
//!
//! [`SessionService`] is usable directly (the experiment runner drives it
//! with a simulated oracle) or through [`http::router`].

mod error;
pub mod http;
mod store;

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use frugal_core::dataset::{read_csv, split_half};
use frugal_core::{Gates, MetricRecord, Pool, SampleId, SessionConfig, SessionState, Strategy};
use serde::{Deserialize, Serialize};

pub use error::{ErrorBody, ServiceError, ServiceResult};
pub use store::{sha256_hex, PoolRef, SessionRecord, Store, SCHEMA_VERSION};

const FEATURE_PREVIEW: usize = 8;

fn default_k() -> usize {
    16
}

fn default_t() -> usize {
    10
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub dataset: PathBuf,
    pub strategy: String,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_t")]
    pub t: usize,
    #[serde(default)]
    pub seed: u64,
    /// Seed of the train/eval split; defaults to `seed`.
    #[serde(default)]
    pub split_seed: Option<u64>,
    #[serde(default)]
    pub hyperparameters: Hyperparameters,
}

impl CreateSession {
    pub fn new(dataset: impl Into<PathBuf>, strategy: &str) -> Self {
        CreateSession {
            dataset: dataset.into(),
            strategy: strategy.into(),
            k: default_k(),
            t: default_t(),
            seed: 0,
            split_seed: None,
            hyperparameters: Hyperparameters::default(),
        }
    }
}

/// Optional overrides of the classifier and optimizer defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyperparameters {
    pub reg_c: Option<f64>,
    pub temperature: Option<f64>,
    pub balanced: Option<bool>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub gamma_scale: Option<f64>,
    pub epsilon: Option<f64>,
    pub max_iterations: Option<usize>,
    pub gates: Option<Gates>,
}

impl Hyperparameters {
    fn apply(&self, cfg: &mut SessionConfig) {
        let c = &mut cfg.classifier;
        c.reg_c = self.reg_c.unwrap_or(c.reg_c);
        c.temperature = self.temperature.unwrap_or(c.temperature);
        c.balanced = self.balanced.unwrap_or(c.balanced);
        let o = &mut cfg.optimizer;
        o.alpha = self.alpha.unwrap_or(o.alpha);
        o.beta = self.beta.unwrap_or(o.beta);
        o.gamma_scale = self.gamma_scale.unwrap_or(o.gamma_scale);
        o.epsilon = self.epsilon.unwrap_or(o.epsilon);
        o.max_iterations = self.max_iterations.unwrap_or(o.max_iterations);
        o.gates = self.gates.unwrap_or(o.gates);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisplayItem {
    pub sample_id: SampleId,
    pub thumbnail_before: Option<String>,
    pub thumbnail_after: Option<String>,
    pub feature_preview: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisplayView {
    pub session_id: String,
    /// Completed iterations.
    pub t: usize,
    pub iterations: usize,
    pub items: Vec<DisplayItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Created {
    pub session_id: String,
    pub display: DisplayView,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationSummary {
    pub t: usize,
    pub eer_percent: Option<f64>,
    pub next_display_ready: bool,
    pub complete: bool,
}

struct Slot {
    record: SessionRecord,
    pool: Arc<Pool>,
}

/// Sessions keyed by id. Each session sits behind its own lock, so distinct
/// sessions proceed concurrently while requests on one session serialise.
pub struct SessionService {
    store: Store,
    sessions: RwLock<HashMap<String, Arc<RwLock<Slot>>>>,
    pools: Mutex<HashMap<PoolRef, Arc<Pool>>>,
}

impl SessionService {
    /// Serves sessions persisted under `state_dir`; existing documents are
    /// loaded on first access.
    pub fn open(state_dir: impl Into<PathBuf>) -> ServiceResult<Self> {
        Ok(SessionService {
            store: Store::open(state_dir)?,
            sessions: RwLock::new(HashMap::new()),
            pools: Mutex::new(HashMap::new()),
        })
    }

    pub fn state_dir(&self) -> &Path {
        self.store.dir()
    }

    pub fn create_session(&self, request: &CreateSession) -> ServiceResult<Created> {
        let strategy: Strategy = request
            .strategy
            .parse()
            .map_err(|e: frugal_core::Error| ServiceError::Unprocessable(e.to_string()))?;
        let mut config = SessionConfig::new(strategy, request.seed)
            .with_k(request.k)
            .with_iterations(request.t);
        request.hyperparameters.apply(&mut config);

        let path = std::fs::canonicalize(&request.dataset).map_err(|_| {
            ServiceError::NotFound(format!("dataset {} not found", request.dataset.display()))
        })?;
        let split_seed = request.split_seed.unwrap_or(request.seed);
        let (pool, pool_ref) = self.load_pool(&path, split_seed, None)?;
        let state = SessionState::start(&pool, config)?;

        let now = store::now_millis();
        let record = SessionRecord {
            schema_version: SCHEMA_VERSION,
            session_id: uuid::Uuid::new_v4().to_string(),
            pool_ref,
            created_at: now,
            updated_at: now,
            state,
        };
        self.store.save(&record)?;
        let display = display_view(&record, &pool)?;
        let id = record.session_id.clone();
        self.sessions
            .write()
            .expect("session map poisoned")
            .insert(id.clone(), Arc::new(RwLock::new(Slot { record, pool })));
        Ok(Created { session_id: id, display })
    }

    pub fn get_display(&self, id: &str) -> ServiceResult<DisplayView> {
        let slot = self.slot(id)?;
        let guard = slot.read().expect("session poisoned");
        display_view(&guard.record, &guard.pool)
    }

    /// Applies one label per displayed sample, all or nothing.
    pub fn submit_labels(&self, id: &str, labels: &[(SampleId, i64)]) -> ServiceResult<IterationSummary> {
        let slot = self.slot(id)?;
        let mut guard = slot.write().expect("session poisoned");
        let state = &guard.record.state;
        let pending = state
            .pending
            .as_ref()
            .ok_or_else(|| ServiceError::Conflict(format!("session {id} is complete")))?;

        let mut given = HashMap::with_capacity(labels.len());
        for &(sid, v) in labels {
            if given.insert(sid, v).is_some() {
                return Err(ServiceError::Unprocessable(format!("duplicate label for sample {sid}")));
            }
        }
        let given_ids: HashSet<SampleId> = given.keys().copied().collect();
        let want: HashSet<SampleId> = pending.sample_ids.iter().copied().collect();
        if given_ids != want {
            let consumed = state
                .history
                .iter()
                .any(|h| h.display.sample_ids.iter().copied().collect::<HashSet<_>>() == given_ids);
            if consumed {
                return Err(ServiceError::Conflict("display already labelled".into()));
            }
            let mut missing: Vec<_> = want.difference(&given_ids).copied().collect();
            let mut extra: Vec<_> = given_ids.difference(&want).copied().collect();
            missing.sort_unstable();
            extra.sort_unstable();
            return Err(ServiceError::Unprocessable(format!(
                "labels must cover the current display exactly; missing {missing:?}, unexpected {extra:?}"
            )));
        }
        let raw: Vec<i64> = pending.sample_ids.iter().map(|sid| given[sid]).collect();
        let next = state.submit(&raw, &guard.pool)?;

        let mut record = guard.record.clone();
        record.state = next;
        record.updated_at = store::now_millis();
        self.store.save(&record)?;
        guard.record = record;

        let s = &guard.record.state;
        Ok(IterationSummary {
            t: s.t,
            eer_percent: s.metrics.last().and_then(|m| m.eer_percent),
            next_display_ready: s.pending.is_some(),
            complete: s.is_complete(),
        })
    }

    pub fn get_metrics(&self, id: &str) -> ServiceResult<Vec<MetricRecord>> {
        let slot = self.slot(id)?;
        let guard = slot.read().expect("session poisoned");
        Ok(guard.record.state.metrics.clone())
    }

    /// Snapshot of the persisted record.
    pub fn record(&self, id: &str) -> ServiceResult<SessionRecord> {
        let slot = self.slot(id)?;
        let guard = slot.read().expect("session poisoned");
        Ok(guard.record.clone())
    }

    /// The split pool a session labels.
    pub fn pool(&self, id: &str) -> ServiceResult<Arc<Pool>> {
        let slot = self.slot(id)?;
        let guard = slot.read().expect("session poisoned");
        Ok(guard.pool.clone())
    }

    fn slot(&self, id: &str) -> ServiceResult<Arc<RwLock<Slot>>> {
        if let Some(s) = self.sessions.read().expect("session map poisoned").get(id) {
            return Ok(s.clone());
        }
        let record = self
            .store
            .load(id)?
            .ok_or_else(|| ServiceError::NotFound(format!("unknown session {id}")))?;
        let (pool, _) = self.load_pool(&record.pool_ref.path, record.pool_ref.split_seed, Some(&record.pool_ref.sha256))?;
        let mut map = self.sessions.write().expect("session map poisoned");
        let slot = map
            .entry(id.to_string())
            .or_insert_with(|| Arc::new(RwLock::new(Slot { record, pool })));
        Ok(slot.clone())
    }

    fn load_pool(&self, path: &Path, split_seed: u64, expected: Option<&str>) -> ServiceResult<(Arc<Pool>, PoolRef)> {
        let bytes = std::fs::read(path)
            .map_err(|_| ServiceError::NotFound(format!("dataset {} not found", path.display())))?;
        let sha256 = sha256_hex(&bytes);
        if let Some(want) = expected {
            if want != sha256 {
                return Err(ServiceError::Conflict(format!(
                    "dataset {} changed since the session was created",
                    path.display()
                )));
            }
        }
        let pool_ref = PoolRef { path: path.to_path_buf(), sha256, split_seed };
        let mut cache = self.pools.lock().expect("pool cache poisoned");
        if let Some(p) = cache.get(&pool_ref) {
            return Ok((p.clone(), pool_ref));
        }
        let pool: Pool = read_csv(bytes.as_slice())?;
        let pool = Arc::new(split_half(&pool, split_seed)?);
        cache.insert(pool_ref.clone(), pool.clone());
        Ok((pool, pool_ref))
    }
}

fn display_view(record: &SessionRecord, pool: &Pool) -> ServiceResult<DisplayView> {
    let state = &record.state;
    let pending = state
        .pending
        .as_ref()
        .ok_or_else(|| ServiceError::Conflict(format!("session {} is complete", record.session_id)))?;
    let items = pending
        .sample_ids
        .iter()
        .map(|&sid| {
            let s = pool
                .sample(sid)
                .ok_or_else(|| ServiceError::Internal(format!("display references unknown sample {sid}")))?;
            Ok(DisplayItem {
                sample_id: sid,
                thumbnail_before: s.thumbnail_before.clone(),
                thumbnail_after: s.thumbnail_after.clone(),
                feature_preview: s.features.iter().take(FEATURE_PREVIEW).copied().collect(),
            })
        })
        .collect::<ServiceResult<Vec<_>>>()?;
    Ok(DisplayView {
        session_id: record.session_id.clone(),
        t: state.t,
        iterations: state.config.iterations,
        items,
    })
}
