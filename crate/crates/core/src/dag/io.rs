use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DagError, DagGraph, JobNode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: u64,
    pub runtime: f64,
    pub resource: f64,
}

pub type EdgeRecord = [u64; 2];

/// On-disk form of a DAG. Node ids may be any unique integers; they are
/// re-indexed densely in file order when loaded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DagDocument {
    pub nodes: Vec<NodeRecord>,
    #[serde(default)]
    pub edges: Vec<EdgeRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub virtual_root: Option<u64>,
}

impl From<&DagGraph> for DagDocument {
    fn from(g: &DagGraph) -> Self {
        DagDocument {
            nodes: g
                .nodes()
                .iter()
                .map(|n| NodeRecord {
                    id: n.id as u64,
                    runtime: n.runtime,
                    resource: n.resource,
                })
                .collect(),
            edges: g.edges().map(|(u, v)| [u as u64, v as u64]).collect(),
            virtual_root: g.virtual_root().map(|r| r as u64),
        }
    }
}

impl TryFrom<&DagDocument> for DagGraph {
    type Error = DagError;

    fn try_from(doc: &DagDocument) -> Result<Self, DagError> {
        let mut index = HashMap::with_capacity(doc.nodes.len());
        let mut nodes = Vec::with_capacity(doc.nodes.len());
        for rec in &doc.nodes {
            if index.insert(rec.id, nodes.len()).is_some() {
                return Err(DagError::Parse(format!("duplicate node id {}", rec.id)));
            }
            nodes.push(JobNode {
                id: nodes.len(),
                runtime: rec.runtime,
                resource: rec.resource,
            });
        }
        let lookup = |id: u64| {
            index
                .get(&id)
                .copied()
                .ok_or_else(|| DagError::Parse(format!("edge references unknown node {id}")))
        };
        let edges = doc
            .edges
            .iter()
            .map(|&[u, v]| Ok((lookup(u)?, lookup(v)?)))
            .collect::<Result<Vec<_>, DagError>>()?;
        let root = doc.virtual_root.map(lookup).transpose()?;
        DagGraph::build(nodes, &edges, root)
    }
}

impl DagGraph {
    pub fn to_json(&self) -> String {
        serde_json::to_string(&DagDocument::from(self)).expect("DAG documents always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, DagError> {
        let doc: DagDocument =
            serde_json::from_str(text).map_err(|e| DagError::Parse(e.to_string()))?;
        DagGraph::try_from(&doc)
    }
}

/// Reads either a single JSON document or a file of one document per line.
pub fn load_dags(path: impl AsRef<Path>) -> Result<Vec<DagGraph>, DagError> {
    let text = std::fs::read_to_string(path)?;
    if let Ok(doc) = serde_json::from_str::<DagDocument>(&text) {
        return Ok(vec![DagGraph::try_from(&doc)?]);
    }
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            DagGraph::from_json(line).map_err(|e| DagError::Parse(format!("line {}: {e}", i + 1)))
        })
        .collect()
}

/// Writes one JSON document per line.
pub fn save_dags(path: impl AsRef<Path>, dags: &[DagGraph]) -> Result<(), DagError> {
    let mut out = String::new();
    for g in dags {
        out.push_str(&g.to_json());
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}
