use std::collections::HashMap;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;
use std::sync::Arc;

use super::{ClientError, GraphBackend};
use crate::graph_store::{
    self, BindingTable, EntityId, KnowledgeGraph, PropertyId, PropertyMeta, SearchHit,
};
use crate::query_gen::{Dialect, SparqlText};

/// Serves queries from an in-memory [`KnowledgeGraph`].
#[derive(Debug, Clone)]
pub struct LocalBackend {
    graph: Arc<KnowledgeGraph>,
}

impl LocalBackend {
    pub fn new(graph: Arc<KnowledgeGraph>) -> Self {
        LocalBackend { graph }
    }

    pub fn open(fixture: &Path) -> Result<Self, ClientError> {
        let file = File::open(fixture).map_err(|e| {
            ClientError::Config(format!("cannot open fixture {}: {e}", fixture.display()))
        })?;
        let graph = graph_store::load_fixture(BufReader::new(file))
            .map_err(|e| ClientError::Config(format!("fixture {}: {e}", fixture.display())))?;
        Ok(Self::new(Arc::new(graph)))
    }

    pub fn graph(&self) -> &Arc<KnowledgeGraph> {
        &self.graph
    }
}

impl GraphBackend for LocalBackend {
    fn dialect(&self) -> Dialect {
        Dialect::Local
    }

    fn search(&self, text: &str) -> Result<Vec<SearchHit>, ClientError> {
        Ok(graph_store::search_entities(&self.graph, text))
    }

    fn select(&self, query: &SparqlText) -> Result<BindingTable, ClientError> {
        graph_store::execute_select(&self.graph, &query.text)
            .map_err(|e| ClientError::rejected(e.to_string()))
    }

    fn properties(&self, ids: &[PropertyId]) -> Result<Vec<PropertyMeta>, ClientError> {
        Ok(ids
            .iter()
            .filter_map(|id| self.graph.property(id).cloned())
            .collect())
    }

    fn entity_labels(&self, ids: &[EntityId]) -> Result<HashMap<EntityId, String>, ClientError> {
        Ok(ids
            .iter()
            .filter_map(|id| self.graph.entity(id).map(|e| (id.clone(), e.label.clone())))
            .collect())
    }
}
