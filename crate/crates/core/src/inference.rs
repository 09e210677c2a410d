//! Evaluation-time edge addition: a per-edge beam over the top-K starting
//! nodes, and an ensemble over the number of added edges.

use crate::dag::{DagGraph, EdgeAction};
use crate::model::{EdgeModel, ModelError};
use crate::sim::{makespan, PriorityRule, SimError};

#[derive(Debug, thiserror::Error)]
pub enum InferenceError {
    #[error("beam width must be at least 1")]
    ZeroBeam,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// One committed edge with the probabilities that selected it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoredEdge {
    pub action: EdgeAction,
    pub start_prob: f64,
    pub end_prob: f64,
}

impl ScoredEdge {
    pub fn joint(&self) -> f64 {
        self.start_prob * self.end_prob
    }
}

#[derive(Clone, Debug)]
pub struct Inferred {
    pub graph: DagGraph,
    pub edges: Vec<ScoredEdge>,
}

/// Best edge for the current graph among the top-`beam` starts, each paired
/// with its most likely end. `None` when no legal action remains.
pub fn beam_step(
    model: &EdgeModel,
    g: &DagGraph,
    beam: usize,
) -> Result<Option<ScoredEdge>, InferenceError> {
    if beam == 0 {
        return Err(InferenceError::ZeroBeam);
    }
    let ems = model.embed(g)?;
    let starts = match model.start_node_distribution(g, &ems) {
        Ok(d) => d,
        Err(ModelError::NoAction) => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    let mut ranked: Vec<(usize, f64)> = starts
        .candidate_ids
        .iter()
        .copied()
        .zip(starts.probs.iter().copied())
        .collect();
    // stable sort keeps ascending ids among equal probabilities
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
    ranked.truncate(beam);

    let mut best: Option<ScoredEdge> = None;
    for (start, p1) in ranked {
        let ends = model.end_node_distribution(g, &ems, start)?;
        let Some((end, p2)) = ends.argmax() else {
            continue;
        };
        let cand = ScoredEdge {
            action: EdgeAction::new(start, end),
            start_prob: p1,
            end_prob: p2,
        };
        let better = match &best {
            None => true,
            Some(b) => {
                cand.joint() > b.joint()
                    || (cand.joint() == b.joint() && (start, end) < (b.action.start, b.action.end))
            }
        };
        if better {
            best = Some(cand);
        }
    }
    Ok(best)
}

/// Adds up to `edges` edges, stopping early when no legal action remains.
pub fn infer_edges(
    model: &EdgeModel,
    g: &DagGraph,
    edges: usize,
    beam: usize,
) -> Result<Inferred, InferenceError> {
    if beam == 0 {
        return Err(InferenceError::ZeroBeam);
    }
    let mut graph = g.clone();
    let mut added = Vec::new();
    for _ in 0..edges {
        let Some(step) = beam_step(model, &graph, beam)? else {
            break;
        };
        graph.insert_edge(step.action).map_err(ModelError::from)?;
        added.push(step);
    }
    Ok(Inferred {
        graph,
        edges: added,
    })
}

#[derive(Clone, Debug)]
pub struct EnsembleResult {
    pub graph: DagGraph,
    /// Edges of the chosen variant.
    pub edges: Vec<ScoredEdge>,
    pub makespan: f64,
    pub baseline: f64,
    /// Makespan after the first `m` edges, for `m = 0..=edges added`.
    pub per_count: Vec<f64>,
}

impl EnsembleResult {
    pub fn chosen_count(&self) -> usize {
        self.edges.len()
    }
}

/// Evaluates every prefix `M = 0..=max_edges` of one beam decoding and keeps
/// the smallest makespan (fewer edges on ties). Since each step depends only
/// on the graph so far, prefix `M` equals a separate decoding with `M` edges.
pub fn ensemble_best(
    model: &EdgeModel,
    g: &DagGraph,
    rule: &PriorityRule,
    max_edges: usize,
    beam: usize,
) -> Result<EnsembleResult, InferenceError> {
    let inferred = infer_edges(model, g, max_edges, beam)?;
    let baseline = makespan(g, rule)?;
    let mut per_count = vec![baseline];
    let mut graph = g.clone();
    let (mut best_m, mut best_graph) = (0, g.clone());
    for (m, e) in inferred.edges.iter().enumerate() {
        graph.insert_edge(e.action).map_err(ModelError::from)?;
        let ms = makespan(&graph, rule)?;
        if ms < per_count[best_m] {
            best_m = m + 1;
            best_graph = graph.clone();
        }
        per_count.push(ms);
    }
    Ok(EnsembleResult {
        graph: best_graph,
        edges: inferred.edges[..best_m].to_vec(),
        makespan: per_count[best_m],
        baseline,
        per_count,
    })
}
