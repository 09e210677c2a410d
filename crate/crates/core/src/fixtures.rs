//! Small-instance fixtures: generated graphs of at most seven nodes with
//! their exhaustive-search optima, LP bounds read from recorded solver
//! output, and a five-node graph where one added edge helps both SJF and CP.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dag::{DagDocument, DagError, DagGraph, EdgeAction, NodeId};
use crate::dataset::{generate_dag, DatasetError, GenConfig};
use crate::milp::{build_milp, order_from_solution, read_solution, MilpError};
use crate::sim::exhaustive::optimal_schedule;
use crate::sim::{makespan, PriorityRule, SimError};

pub const SMALL_SEED: u64 = 7;
pub const SMALL_COUNT: usize = 240;
pub const FIGURE_SEED: u64 = 11;

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Dag(#[from] DagError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("{path}: {source}")]
    Milp { path: String, source: MilpError },
    #[error("instance {0} is too large for the exhaustive search")]
    TooLarge(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn small_config() -> GenConfig {
    GenConfig {
        min_nodes: 2,
        max_nodes: 7,
        out_degree: 1.0,
        ..GenConfig::default()
    }
}

pub fn small_instances(seed: u64, count: usize) -> Result<Vec<DagGraph>, FixtureError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = small_config();
    Ok((0..count)
        .map(|_| generate_dag(&mut rng, &cfg))
        .collect::<Result<_, _>>()?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleRow {
    pub id: usize,
    pub nodes: usize,
    pub edges: usize,
    pub sjf: f64,
    pub cp: f64,
    pub tetris: f64,
    pub optimum: f64,
    /// A start order attaining the optimum.
    pub order: Vec<NodeId>,
}

pub fn oracle_rows(graphs: &[DagGraph]) -> Result<Vec<OracleRow>, FixtureError> {
    graphs
        .iter()
        .enumerate()
        .map(|(id, g)| {
            let opt = optimal_schedule(g).ok_or(FixtureError::TooLarge(id))?;
            Ok(OracleRow {
                id,
                nodes: g.len(),
                edges: g.edge_count(),
                sjf: makespan(g, &PriorityRule::Sjf)?,
                cp: makespan(g, &PriorityRule::CriticalPath)?,
                tetris: makespan(g, &PriorityRule::Tetris)?,
                optimum: opt.makespan,
                order: opt.order,
            })
        })
        .collect()
}

fn join_ids(ids: &[NodeId]) -> String {
    ids.iter()
        .map(|i| i.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn oracle_csv(rows: &[OracleRow]) -> String {
    let mut out = String::from("id,nodes,edges,sjf,cp,tetris,optimum,order\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.id,
            r.nodes,
            r.edges,
            r.sjf,
            r.cp,
            r.tetris,
            r.optimum,
            join_ids(&r.order)
        );
    }
    out
}

/// File stem of the LP model and recorded solution of instance `id`.
pub fn lp_stem(id: usize) -> String {
    format!("{id:03}")
}

#[derive(Clone, Debug, PartialEq)]
pub struct LpRow {
    pub id: usize,
    pub objective: f64,
    pub order: Vec<NodeId>,
    /// Makespan of the fixed order read off the relaxed start times.
    pub order_makespan: f64,
}

/// Reads `<dir>/<stem>.sol` for every instance.
pub fn lp_rows(graphs: &[DagGraph], dir: &Path) -> Result<Vec<LpRow>, FixtureError> {
    graphs
        .iter()
        .enumerate()
        .map(|(id, g)| {
            let path = dir.join(format!("{}.sol", lp_stem(id)));
            let text = std::fs::read_to_string(&path)?;
            let m = build_milp(g);
            let wrap = |source| FixtureError::Milp {
                path: path.display().to_string(),
                source,
            };
            let sol = read_solution(&text, &m).map_err(wrap)?;
            let objective = sol
                .objective()
                .ok_or_else(|| wrap(MilpError::MissingVariable("T".into())))?;
            let rule = order_from_solution(&sol, &m).map_err(wrap)?;
            let order_makespan = makespan(g, &rule)?;
            let PriorityRule::FixedOrder(order) = rule else {
                unreachable!("order_from_solution returns a fixed order")
            };
            Ok(LpRow {
                id,
                objective,
                order,
                order_makespan,
            })
        })
        .collect()
}

pub fn lp_csv(rows: &[LpRow]) -> String {
    let mut out = String::from("id,lp_objective,lp_order_makespan,order\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.id,
            r.objective,
            r.order_makespan,
            join_ids(&r.order)
        );
    }
    out
}

/// A graph where adding `edge` strictly lowers both the SJF and the CP
/// makespan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeWitness {
    pub graph: DagDocument,
    pub edge: EdgeAction,
    pub sjf_before: f64,
    pub sjf_after: f64,
    pub cp_before: f64,
    pub cp_after: f64,
}

/// Random five-node graph with integer runtimes and resources in tenths.
fn five_node_graph(rng: &mut ChaCha8Rng) -> DagGraph {
    let tasks: Vec<(f64, f64)> = (0..5)
        .map(|_| {
            (
                f64::from(rng.random_range(1..=9u8)),
                f64::from(rng.random_range(1..=9u8)) / 10.0,
            )
        })
        .collect();
    let mut edges = Vec::new();
    for a in 0..5 {
        for b in a + 1..5 {
            if rng.random_bool(0.3) {
                edges.push((a, b));
            }
        }
    }
    DagGraph::from_tasks(&tasks, &edges).expect("forward edges form a DAG")
}

/// Scans random five-node graphs and, in the first one where some legal edge
/// lowers both makespans, returns the edge with the largest smaller gain
/// (ties to the lowest edge).
pub fn find_edge_witness(seed: u64, attempts: usize) -> Option<EdgeWitness> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..attempts {
        let g = five_node_graph(&mut rng);
        let sjf = makespan(&g, &PriorityRule::Sjf).ok()?;
        let cp = makespan(&g, &PriorityRule::CriticalPath).ok()?;
        let mut best: Option<(f64, EdgeWitness)> = None;
        for a in g.legal_actions() {
            let h = g.add_edge(a).ok()?;
            let sjf_after = makespan(&h, &PriorityRule::Sjf).ok()?;
            let cp_after = makespan(&h, &PriorityRule::CriticalPath).ok()?;
            let gain = (sjf - sjf_after).min(cp - cp_after);
            if gain > 0.0 && best.as_ref().is_none_or(|(b, _)| gain > *b) {
                let witness = EdgeWitness {
                    graph: DagDocument::from(&g),
                    edge: a,
                    sjf_before: sjf,
                    sjf_after,
                    cp_before: cp,
                    cp_after,
                };
                best = Some((gain, witness));
            }
        }
        if let Some((_, w)) = best {
            return Some(w);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_instances_are_small_and_reproducible() {
        let a = small_instances(3, 30).unwrap();
        let b = small_instances(3, 30).unwrap();
        assert!(a.iter().all(|g| (2..=7).contains(&g.len())));
        let csv = oracle_csv(&oracle_rows(&a).unwrap());
        assert_eq!(csv, oracle_csv(&oracle_rows(&b).unwrap()));
        assert_eq!(csv.lines().count(), 31);
    }

    #[test]
    fn witness_edge_helps_both_rules() {
        let w = find_edge_witness(FIGURE_SEED, 10_000).unwrap();
        let g = DagGraph::try_from(&w.graph).unwrap();
        assert_eq!(g.len(), 5);
        let h = g.add_edge(w.edge).unwrap();
        assert_eq!(makespan(&h, &PriorityRule::Sjf).unwrap(), w.sjf_after);
        assert_eq!(
            makespan(&h, &PriorityRule::CriticalPath).unwrap(),
            w.cp_after
        );
        assert!(w.sjf_after < w.sjf_before && w.cp_after < w.cp_before);
    }
}
