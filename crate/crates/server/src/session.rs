//! In-memory sessions. Each session holds an immutable dataset snapshot that
//! readers clone cheaply; commits are serialised by a per-session writer lock.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use kgforage::discovery::{AttributeDescriptor, DiscoveryConfig};
use kgforage::kg_client::KgClient;
use kgforage::planner::JoinPlan;
use kgforage::tabular::Dataset;
use serde::Serialize;

use crate::error::ApiError;

/// One version of a session's data.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub dataset: Dataset,
    /// Committed plans, in the order their columns were appended.
    pub join_history: Vec<JoinPlan>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum JobStatus {
    Running,
    Done { column: String, version: u64 },
    Failed { error: ApiError },
}

/// The discovery settings and result last computed for a column.
type CachedRelated = (DiscoveryConfig, Arc<Vec<AttributeDescriptor>>);

pub struct Session {
    pub id: String,
    pub client: Arc<KgClient>,
    /// Upload file name, used for export file names.
    pub source_name: String,
    snapshot: RwLock<Arc<Snapshot>>,
    writer: Arc<tokio::sync::Mutex<()>>,
    last_access: Mutex<Instant>,
    related: Mutex<HashMap<String, CachedRelated>>,
    jobs: Mutex<HashMap<String, JobStatus>>,
}

impl Session {
    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot.read().expect("snapshot lock").clone()
    }

    /// The writer lock. Hold it across read-modify-[`Session::replace`].
    pub fn writer(&self) -> Arc<tokio::sync::Mutex<()>> {
        self.writer.clone()
    }

    pub fn replace(&self, next: Snapshot) {
        *self.snapshot.write().expect("snapshot lock") = Arc::new(next);
    }

    fn touch(&self) {
        *self.last_access.lock().expect("access lock") = Instant::now();
    }

    fn idle_for(&self) -> Duration {
        self.last_access.lock().expect("access lock").elapsed()
    }

    pub fn cached_related(
        &self,
        column: &str,
    ) -> Option<(DiscoveryConfig, Arc<Vec<AttributeDescriptor>>)> {
        self.related
            .lock()
            .expect("related lock")
            .get(column)
            .cloned()
    }

    pub fn cache_related(
        &self,
        column: &str,
        cfg: DiscoveryConfig,
        found: Arc<Vec<AttributeDescriptor>>,
    ) {
        self.related
            .lock()
            .expect("related lock")
            .insert(column.to_string(), (cfg, found));
    }

    pub fn set_job(&self, job: &str, status: JobStatus) {
        self.jobs
            .lock()
            .expect("jobs lock")
            .insert(job.to_string(), status);
    }

    pub fn job(&self, job: &str) -> Option<JobStatus> {
        self.jobs.lock().expect("jobs lock").get(job).cloned()
    }
}

pub struct SessionStore {
    sessions: RwLock<HashMap<String, Arc<Session>>>,
    ttl: Duration,
}

impl SessionStore {
    pub fn new(ttl: Duration) -> Self {
        SessionStore {
            sessions: RwLock::new(HashMap::new()),
            ttl,
        }
    }

    pub fn create(
        &self,
        dataset: Dataset,
        client: Arc<KgClient>,
        source_name: String,
    ) -> Arc<Session> {
        let session = Arc::new(Session {
            id: uuid::Uuid::new_v4().simple().to_string(),
            client,
            source_name,
            snapshot: RwLock::new(Arc::new(Snapshot {
                dataset,
                join_history: Vec::new(),
            })),
            writer: Arc::new(tokio::sync::Mutex::new(())),
            last_access: Mutex::new(Instant::now()),
            related: Mutex::new(HashMap::new()),
            jobs: Mutex::new(HashMap::new()),
        });
        self.sessions
            .write()
            .expect("store lock")
            .insert(session.id.clone(), session.clone());
        session
    }

    /// The live session `id`, refreshing its idle timer. Expired sessions
    /// are dropped on sight.
    pub fn get(&self, id: &str) -> Result<Arc<Session>, ApiError> {
        let found = self.sessions.read().expect("store lock").get(id).cloned();
        match found {
            Some(s) if s.idle_for() <= self.ttl => {
                s.touch();
                Ok(s)
            }
            Some(_) => {
                self.sessions.write().expect("store lock").remove(id);
                Err(ApiError::session_not_found(id))
            }
            None => Err(ApiError::session_not_found(id)),
        }
    }

    pub fn remove(&self, id: &str) -> bool {
        self.sessions
            .write()
            .expect("store lock")
            .remove(id)
            .is_some()
    }

    /// Drops every session idle for longer than the TTL; returns how many.
    pub fn sweep(&self) -> usize {
        let mut sessions = self.sessions.write().expect("store lock");
        let before = sessions.len();
        sessions.retain(|_, s| s.idle_for() <= self.ttl);
        before - sessions.len()
    }

    pub fn len(&self) -> usize {
        self.sessions.read().expect("store lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
