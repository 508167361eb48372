//! Uniform access to a knowledge graph, either the embedded store or a
//! remote SPARQL endpoint with an entity-search service.
//!
//! [`KgClient`] wraps a [`GraphBackend`] with what every caller needs:
//! a concurrency limit, `VALUES` batching, and a cache of cell-to-entity
//! resolutions.

mod limiter;
mod local;
mod remote;

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use crate::graph_store::{BindingTable, EntityId, PropertyId, PropertyMeta, SearchHit};
use crate::query_gen::{Dialect, QueryTemplate, SparqlText};

pub use limiter::Limiter;
pub use local::LocalBackend;
pub use remote::{parse_sparql_json, to_sparql_json, RemoteBackend, WIKIDATA_ENTITY_SEARCH_URL};

/// Environment variable overriding the SPARQL URL of a remote backend.
pub const ENDPOINT_ENV: &str = "KGFORAGE_ENDPOINT";
/// Environment variable overriding the entity-search URL of a remote backend.
pub const ENTITY_SEARCH_ENV: &str = "KGFORAGE_ENTITY_SEARCH_URL";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendKind {
    Local {
        fixture: PathBuf,
    },
    Remote {
        sparql_url: String,
        entity_search_url: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub max_concurrency: usize,
    pub request_timeout: Duration,
    pub batch_size: usize,
}

impl BackendConfig {
    pub fn new(kind: BackendKind) -> Self {
        BackendConfig {
            kind,
            max_concurrency: 4,
            request_timeout: Duration::from_secs(30),
            batch_size: 50,
        }
    }

    pub fn local(fixture: impl Into<PathBuf>) -> Self {
        Self::new(BackendKind::Local {
            fixture: fixture.into(),
        })
    }

    pub fn remote(sparql_url: &str, entity_search_url: &str) -> Self {
        Self::new(BackendKind::Remote {
            sparql_url: sparql_url.to_string(),
            entity_search_url: entity_search_url.to_string(),
        })
    }

    /// Parses `local:<fixture path>` or `remote:<sparql url>`. Remote
    /// backends search entities through the Wikidata action API.
    pub fn from_selector(selector: &str) -> Result<Self, ClientError> {
        if let Some(path) = selector.strip_prefix("local:") {
            if path.is_empty() {
                return Err(ClientError::Config(
                    "local backend needs a fixture path".into(),
                ));
            }
            Ok(Self::local(path))
        } else if let Some(url) = selector.strip_prefix("remote:") {
            if url.is_empty() {
                return Err(ClientError::Config(
                    "remote backend needs a SPARQL URL".into(),
                ));
            }
            Ok(Self::remote(url, WIKIDATA_ENTITY_SEARCH_URL))
        } else {
            Err(ClientError::Config(format!(
                "backend must be local:<fixture> or remote:<url>, got {selector:?}"
            )))
        }
    }

    /// Applies [`ENDPOINT_ENV`] and [`ENTITY_SEARCH_ENV`] to a remote backend.
    pub fn with_env_overrides(mut self) -> Self {
        let var = |name| {
            std::env::var(name)
                .ok()
                .filter(|v: &String| !v.trim().is_empty())
        };
        if let BackendKind::Remote {
            sparql_url,
            entity_search_url,
        } = &mut self.kind
        {
            if let Some(url) = var(ENDPOINT_ENV) {
                *sparql_url = url;
            }
            if let Some(url) = var(ENTITY_SEARCH_ENV) {
                *entity_search_url = url;
            }
        }
        self
    }

    pub fn validate(&self) -> Result<(), ClientError> {
        if self.max_concurrency == 0 {
            return Err(ClientError::Config(
                "max_concurrency must be at least 1".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(ClientError::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ClientError {
    /// Network failure, timeout or server error. `chunk` is the 1-based
    /// batch number when the failure happened inside a batched query.
    #[error("backend unavailable{}: {reason}", chunk.map(|c| format!(" (chunk {c})")).unwrap_or_default())]
    BackendUnavailable {
        reason: String,
        chunk: Option<usize>,
    },
    #[error("query rejected{}: {message}", chunk.map(|c| format!(" (chunk {c})")).unwrap_or_default())]
    QueryRejected {
        message: String,
        chunk: Option<usize>,
    },
    #[error("cell is empty")]
    EmptyCell,
    #[error("configuration: {0}")]
    Config(String),
}

impl ClientError {
    pub fn unavailable(reason: impl Into<String>) -> Self {
        ClientError::BackendUnavailable {
            reason: reason.into(),
            chunk: None,
        }
    }

    pub fn rejected(message: impl Into<String>) -> Self {
        ClientError::QueryRejected {
            message: message.into(),
            chunk: None,
        }
    }

    fn in_chunk(self, index: usize) -> Self {
        match self {
            ClientError::BackendUnavailable { reason, .. } => ClientError::BackendUnavailable {
                reason,
                chunk: Some(index),
            },
            ClientError::QueryRejected { message, .. } => ClientError::QueryRejected {
                message,
                chunk: Some(index),
            },
            other => other,
        }
    }
}

/// The raw operations a graph source must provide.
pub trait GraphBackend: Send + Sync {
    fn dialect(&self) -> Dialect;
    /// Ranked entity matches for a normalised cell text.
    fn search(&self, text: &str) -> Result<Vec<SearchHit>, ClientError>;
    fn select(&self, query: &SparqlText) -> Result<BindingTable, ClientError>;
    /// Metadata for the requested properties; unknown ids are omitted.
    fn properties(&self, ids: &[PropertyId]) -> Result<Vec<PropertyMeta>, ClientError>;
    /// Labels for the requested entities; unknown ids are omitted.
    fn entity_labels(&self, ids: &[EntityId]) -> Result<HashMap<EntityId, String>, ClientError>;
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Candidate {
    pub id: EntityId,
    pub label: String,
    pub description: String,
    /// `1 / (1 + rank)` with rank 0 for the top hit.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ResolutionResult {
    pub cell_text: String,
    pub candidates: Vec<Candidate>,
    pub chosen: Option<EntityId>,
}

/// Trim and collapse internal whitespace.
pub fn normalize_cell(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub struct KgClient {
    backend: Arc<dyn GraphBackend>,
    limiter: Limiter,
    batch_size: usize,
    max_concurrency: usize,
    resolutions: Mutex<HashMap<String, ResolutionResult>>,
}

impl std::fmt::Debug for KgClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KgClient")
            .field("dialect", &self.backend.dialect())
            .field("batch_size", &self.batch_size)
            .field("max_concurrency", &self.max_concurrency)
            .finish()
    }
}

impl KgClient {
    /// Builds the backend described by `config`. Local fixtures are loaded
    /// here, once.
    pub fn connect(config: &BackendConfig) -> Result<Self, ClientError> {
        config.validate()?;
        let backend: Arc<dyn GraphBackend> = match &config.kind {
            BackendKind::Local { fixture } => Arc::new(LocalBackend::open(fixture)?),
            BackendKind::Remote {
                sparql_url,
                entity_search_url,
            } => Arc::new(RemoteBackend::new(
                sparql_url,
                entity_search_url,
                config.request_timeout,
            )?),
        };
        Self::with_backend(backend, config)
    }

    /// Wraps an existing backend, taking only the limits from `config`.
    pub fn with_backend(
        backend: Arc<dyn GraphBackend>,
        config: &BackendConfig,
    ) -> Result<Self, ClientError> {
        config.validate()?;
        Ok(KgClient {
            backend,
            limiter: Limiter::new(config.max_concurrency),
            batch_size: config.batch_size,
            max_concurrency: config.max_concurrency,
            resolutions: Mutex::new(HashMap::new()),
        })
    }

    pub fn dialect(&self) -> Dialect {
        self.backend.dialect()
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    /// Highest number of requests this client has had in flight at once.
    pub fn peak_in_flight(&self) -> usize {
        self.limiter.peak()
    }

    /// Maps a cell to ranked candidates; the top candidate is chosen.
    pub fn resolve(&self, cell_text: &str) -> Result<ResolutionResult, ClientError> {
        let normalized = normalize_cell(cell_text);
        if normalized.is_empty() {
            return Err(ClientError::EmptyCell);
        }
        if let Some(hit) = self
            .resolutions
            .lock()
            .expect("cache lock")
            .get(&normalized)
        {
            return Ok(hit.clone());
        }
        let hits = {
            let _permit = self.limiter.acquire();
            self.backend.search(&normalized)?
        };
        let candidates: Vec<Candidate> = hits
            .into_iter()
            .enumerate()
            .map(|(rank, hit)| Candidate {
                id: hit.id,
                label: hit.label,
                description: hit.description,
                score: 1.0 / (1.0 + rank as f64),
            })
            .collect();
        let result = ResolutionResult {
            cell_text: normalized.clone(),
            chosen: candidates.first().map(|c| c.id.clone()),
            candidates,
        };
        // A concurrent resolver may have raced us; keep whichever landed first.
        let mut cache = self.resolutions.lock().expect("cache lock");
        Ok(cache.entry(normalized).or_insert(result).clone())
    }

    /// Resolves each distinct cell once, concurrently, and maps every input
    /// cell to its chosen entity. Empty cells map to `None`.
    pub fn resolve_cells(
        &self,
        cells: &[Option<String>],
    ) -> Result<Vec<Option<EntityId>>, ClientError> {
        let mut distinct: Vec<String> = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for cell in cells.iter().flatten() {
            let n = normalize_cell(cell);
            if !n.is_empty() && seen.insert(n.clone()) {
                distinct.push(n);
            }
        }
        let resolved = self.run_concurrently(&distinct, |text| self.resolve(text))?;
        let by_text: HashMap<&str, Option<EntityId>> = distinct
            .iter()
            .map(String::as_str)
            .zip(resolved.into_iter().map(|r| r.chosen))
            .collect();
        Ok(cells
            .iter()
            .map(|cell| {
                cell.as_deref()
                    .map(normalize_cell)
                    .and_then(|n| by_text.get(n.as_str()).cloned().flatten())
            })
            .collect())
    }

    pub fn run_select(&self, query: &SparqlText) -> Result<BindingTable, ClientError> {
        let _permit = self.limiter.acquire();
        self.backend.select(query)
    }

    /// Runs `template` over `entities` in chunks of `batch_size`, up to
    /// `max_concurrency` at a time, and concatenates the rows in chunk order.
    pub fn run_select_batched(
        &self,
        template: &QueryTemplate,
        entities: &[EntityId],
    ) -> Result<BindingTable, ClientError> {
        let chunks: Vec<&[EntityId]> = entities.chunks(self.batch_size).collect();
        let tables = self
            .run_concurrently(&chunks, |chunk| {
                self.run_select(&template.instantiate(chunk))
            })
            .map_err(|(index, e)| e.in_chunk(index + 1));
        let mut tables = tables?.into_iter();
        let Some(mut out) = tables.next() else {
            return Ok(BindingTable::default());
        };
        for t in tables {
            out.extend(t);
        }
        Ok(out)
    }

    pub fn properties(&self, ids: &[PropertyId]) -> Result<Vec<PropertyMeta>, ClientError> {
        if ids.is_empty() {
            return Ok(Vec::new());
        }
        let _permit = self.limiter.acquire();
        self.backend.properties(ids)
    }

    pub fn entity_labels(
        &self,
        ids: &[EntityId],
    ) -> Result<HashMap<EntityId, String>, ClientError> {
        if ids.is_empty() {
            return Ok(HashMap::new());
        }
        let _permit = self.limiter.acquire();
        self.backend.entity_labels(ids)
    }

    /// Applies `f` to every item on up to `max_concurrency` threads and
    /// returns results in input order, or the error with the lowest index.
    fn run_concurrently<T, R, F>(&self, items: &[T], f: F) -> Result<Vec<R>, IndexedError>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> Result<R, ClientError> + Sync,
    {
        use std::sync::atomic::{AtomicUsize, Ordering};
        if items.len() <= 1 {
            return items
                .iter()
                .enumerate()
                .map(|(i, item)| f(item).map_err(|e| (i, e)))
                .collect();
        }
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<Result<R, ClientError>>>> =
            items.iter().map(|_| Mutex::new(None)).collect();
        let workers = self.max_concurrency.min(items.len());
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= items.len() {
                        break;
                    }
                    let r = f(&items[i]);
                    *slots[i].lock().expect("slot lock") = Some(r);
                });
            }
        });
        slots
            .into_iter()
            .enumerate()
            .map(|(i, slot)| {
                slot.into_inner()
                    .expect("slot lock")
                    .expect("every slot is filled")
                    .map_err(|e| (i, e))
            })
            .collect()
    }
}

type IndexedError = (usize, ClientError);

impl From<IndexedError> for ClientError {
    fn from((_, e): IndexedError) -> Self {
        e
    }
}
