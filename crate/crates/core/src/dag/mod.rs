//! DAG data model: job nodes, precedence edges, an incrementally maintained
//! reachability index, merging of several job DAGs under a virtual root, and
//! the legality rules for adding new precedence edges.

pub mod io;
mod reach;

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use io::{load_dags, save_dags, DagDocument, EdgeRecord, NodeRecord};
use reach::BitMatrix;

/// Dense 0-based node index.
pub type NodeId = usize;

#[derive(Debug, Error)]
pub enum DagError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unknown node id {0}")]
    UnknownNode(NodeId),
    #[error("edge {start} -> {end} conflicts with the existing graph")]
    Conflict { start: NodeId, end: NodeId },
    #[error("graph contains a cycle")]
    Cycle,
    #[error("node {id}: runtime {value} must be finite and non-negative")]
    InvalidRuntime { id: NodeId, value: f64 },
    #[error("node {id}: resource {value} must lie in [0, 1]")]
    InvalidResource { id: NodeId, value: f64 },
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A task with a duration (seconds) and a fraction of the unit resource capacity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobNode {
    pub id: NodeId,
    pub runtime: f64,
    pub resource: f64,
}

/// A candidate precedence edge `start -> end`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EdgeAction {
    pub start: NodeId,
    pub end: NodeId,
}

impl EdgeAction {
    pub fn new(start: NodeId, end: NodeId) -> Self {
        Self { start, end }
    }
}

impl std::fmt::Display for EdgeAction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}->{}", self.start, self.end)
    }
}

/// An acyclic job graph. Values are immutable from the outside: edge
/// insertion goes through [`DagGraph::add_edge`], which returns a new graph.
#[derive(Clone, Debug)]
pub struct DagGraph {
    nodes: Vec<JobNode>,
    children: Vec<Vec<NodeId>>,
    parents: Vec<Vec<NodeId>>,
    virtual_root: Option<NodeId>,
    // descendants[u] holds every v with a directed path u -> v (u excluded).
    descendants: BitMatrix,
    ancestors: BitMatrix,
}

impl PartialEq for DagGraph {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes
            && self.children == other.children
            && self.virtual_root == other.virtual_root
    }
}

impl DagGraph {
    /// Builds a graph from nodes whose ids equal their positions.
    pub fn new(nodes: Vec<JobNode>, edges: &[(NodeId, NodeId)]) -> Result<Self, DagError> {
        Self::build(nodes, edges, None)
    }

    /// Convenience constructor from `(runtime, resource)` pairs.
    pub fn from_tasks(tasks: &[(f64, f64)], edges: &[(NodeId, NodeId)]) -> Result<Self, DagError> {
        let nodes = tasks
            .iter()
            .enumerate()
            .map(|(id, &(runtime, resource))| JobNode {
                id,
                runtime,
                resource,
            })
            .collect();
        Self::new(nodes, edges)
    }

    pub(crate) fn build(
        nodes: Vec<JobNode>,
        edges: &[(NodeId, NodeId)],
        virtual_root: Option<NodeId>,
    ) -> Result<Self, DagError> {
        let n = nodes.len();
        for (i, node) in nodes.iter().enumerate() {
            if node.id != i {
                return Err(DagError::InvalidArgument(format!(
                    "node at position {i} carries id {}",
                    node.id
                )));
            }
            if !node.runtime.is_finite() || node.runtime < 0.0 {
                return Err(DagError::InvalidRuntime {
                    id: i,
                    value: node.runtime,
                });
            }
            if !(0.0..=1.0).contains(&node.resource) {
                return Err(DagError::InvalidResource {
                    id: i,
                    value: node.resource,
                });
            }
        }
        let mut children = vec![Vec::new(); n];
        let mut parents = vec![Vec::new(); n];
        for &(u, v) in edges {
            if u >= n {
                return Err(DagError::UnknownNode(u));
            }
            if v >= n {
                return Err(DagError::UnknownNode(v));
            }
            if u == v {
                return Err(DagError::Cycle);
            }
            children[u].push(v);
            parents[v].push(u);
        }
        for list in children.iter_mut().chain(parents.iter_mut()) {
            list.sort_unstable();
            list.dedup();
        }
        if let Some(root) = virtual_root {
            if root >= n {
                return Err(DagError::UnknownNode(root));
            }
            let r = &nodes[root];
            if r.runtime != 0.0 || r.resource != 0.0 || !parents[root].is_empty() {
                return Err(DagError::InvalidArgument(
                    "virtual root must have zero runtime, zero resource and no parents".into(),
                ));
            }
        }
        let mut g = Self {
            nodes,
            children,
            parents,
            virtual_root,
            descendants: BitMatrix::new(n),
            ancestors: BitMatrix::new(n),
        };
        let order = g.topological_order().ok_or(DagError::Cycle)?;
        for &u in order.iter().rev() {
            for k in 0..g.children[u].len() {
                let c = g.children[u][k];
                g.descendants.set(u, c);
                g.descendants.or_row_into(c, u);
            }
        }
        for &u in &order {
            for k in 0..g.parents[u].len() {
                let p = g.parents[u][k];
                g.ancestors.set(u, p);
                g.ancestors.or_row_into(p, u);
            }
        }
        Ok(g)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[JobNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &JobNode {
        &self.nodes[id]
    }

    pub fn children(&self, id: NodeId) -> &[NodeId] {
        &self.children[id]
    }

    pub fn parents(&self, id: NodeId) -> &[NodeId] {
        &self.parents[id]
    }

    pub fn virtual_root(&self) -> Option<NodeId> {
        self.virtual_root
    }

    pub fn is_virtual_root(&self, id: NodeId) -> bool {
        self.virtual_root == Some(id)
    }

    /// Ids of every node except the virtual root.
    pub fn job_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.len()).filter(move |&v| !self.is_virtual_root(v))
    }

    pub fn edge_count(&self) -> usize {
        self.children.iter().map(Vec::len).sum()
    }

    /// All edges in `(parent, child)` lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.children
            .iter()
            .enumerate()
            .flat_map(|(u, cs)| cs.iter().map(move |&v| (u, v)))
    }

    pub fn has_edge(&self, u: NodeId, v: NodeId) -> bool {
        self.children[u].binary_search(&v).is_ok()
    }

    /// True iff a directed path of length ≥ 1 leads from `u` to `v`.
    pub fn reaches(&self, u: NodeId, v: NodeId) -> bool {
        self.descendants.get(u, v)
    }

    pub fn descendants(&self, u: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.descendants.iter_row(u)
    }

    pub fn ancestors(&self, u: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.ancestors.iter_row(u)
    }

    /// Kahn's algorithm with the smallest ready id first; `None` on a cycle.
    pub fn topological_order(&self) -> Option<Vec<NodeId>> {
        let n = self.len();
        let mut indeg: Vec<usize> = self.parents.iter().map(Vec::len).collect();
        let mut ready: std::collections::BinaryHeap<std::cmp::Reverse<NodeId>> = (0..n)
            .filter(|&v| indeg[v] == 0)
            .map(std::cmp::Reverse)
            .collect();
        let mut order = Vec::with_capacity(n);
        while let Some(std::cmp::Reverse(u)) = ready.pop() {
            order.push(u);
            for &c in &self.children[u] {
                indeg[c] -= 1;
                if indeg[c] == 0 {
                    ready.push(std::cmp::Reverse(c));
                }
            }
        }
        (order.len() == n).then_some(order)
    }

    fn check_id(&self, id: NodeId) -> Result<(), DagError> {
        if id < self.len() {
            Ok(())
        } else {
            Err(DagError::UnknownNode(id))
        }
    }

    /// An edge is illegal when either endpoint is the virtual root, when the
    /// endpoints coincide, or when a directed path already joins them in
    /// either direction.
    pub fn is_conflicting(&self, a: EdgeAction) -> Result<bool, DagError> {
        self.check_id(a.start)?;
        self.check_id(a.end)?;
        Ok(self.conflicts(a.start, a.end))
    }

    #[inline]
    pub(crate) fn conflicts(&self, u: NodeId, v: NodeId) -> bool {
        u == v
            || self.is_virtual_root(u)
            || self.is_virtual_root(v)
            || self.descendants.get(u, v)
            || self.descendants.get(v, u)
    }

    /// Returns a new graph with `a` inserted.
    pub fn add_edge(&self, a: EdgeAction) -> Result<DagGraph, DagError> {
        let mut g = self.clone();
        g.insert_edge(a)?;
        Ok(g)
    }

    /// In-place variant of [`DagGraph::add_edge`]; the graph is untouched on error.
    pub fn insert_edge(&mut self, a: EdgeAction) -> Result<(), DagError> {
        if self.is_conflicting(a)? {
            return Err(DagError::Conflict {
                start: a.start,
                end: a.end,
            });
        }
        let (u, v) = (a.start, a.end);
        let pos = self.children[u].binary_search(&v).unwrap_err();
        self.children[u].insert(pos, v);
        let pos = self.parents[v].binary_search(&u).unwrap_err();
        self.parents[v].insert(pos, u);

        // Every ancestor of u (and u) now reaches v and all of v's descendants.
        let mut sources: Vec<NodeId> = self.ancestors.iter_row(u).collect();
        sources.push(u);
        let mut sinks: Vec<NodeId> = self.descendants.iter_row(v).collect();
        sinks.push(v);
        for &x in &sources {
            self.descendants.set(x, v);
            self.descendants.or_row_into(v, x);
        }
        for &y in &sinks {
            self.ancestors.set(y, u);
            self.ancestors.or_row_into(u, y);
        }
        Ok(())
    }

    /// Number of non-root nodes `v != u` not joined to `u` by a path.
    fn unrelated_count(&self, u: NodeId) -> usize {
        let jobs = self.len() - usize::from(self.virtual_root.is_some());
        let mut related = self.descendants.row_count(u) + self.ancestors.row_count(u);
        if let Some(r) = self.virtual_root {
            // the root is an ancestor of every job reachable from it
            if self.ancestors.get(u, r) {
                related -= 1;
            }
        }
        jobs - 1 - related
    }

    /// Non-root nodes that can start at least one legal edge.
    pub fn qualified_starting_nodes(&self) -> Vec<NodeId> {
        self.job_ids()
            .filter(|&u| self.unrelated_count(u) > 0)
            .collect()
    }

    /// Non-root nodes `v` such that `start -> v` is a legal edge.
    pub fn qualified_ending_nodes(&self, start: NodeId) -> Result<Vec<NodeId>, DagError> {
        self.check_id(start)?;
        if self.is_virtual_root(start) {
            return Ok(Vec::new());
        }
        Ok(self
            .job_ids()
            .filter(|&v| !self.conflicts(start, v))
            .collect())
    }

    /// Every legal edge, ordered by `(start, end)`.
    pub fn legal_actions(&self) -> Vec<EdgeAction> {
        let mut out = Vec::new();
        for u in self.job_ids() {
            for v in self.job_ids() {
                if !self.conflicts(u, v) {
                    out.push(EdgeAction::new(u, v));
                }
            }
        }
        out
    }

    /// Sum of runtimes over all nodes.
    pub fn total_runtime(&self) -> f64 {
        self.nodes.iter().map(|n| n.runtime).sum()
    }

    /// Copy of this graph with the virtual root removed and ids compacted.
    /// The second value maps new ids to old ones.
    pub fn without_virtual_root(&self) -> (DagGraph, Vec<NodeId>) {
        let Some(root) = self.virtual_root else {
            return (self.clone(), (0..self.len()).collect());
        };
        let old_ids: Vec<NodeId> = self.job_ids().collect();
        let mut new_id = vec![usize::MAX; self.len()];
        for (new, &old) in old_ids.iter().enumerate() {
            new_id[old] = new;
        }
        let nodes = old_ids
            .iter()
            .enumerate()
            .map(|(new, &old)| JobNode {
                id: new,
                ..self.nodes[old]
            })
            .collect();
        let edges: Vec<_> = self
            .edges()
            .filter(|&(u, _)| u != root)
            .map(|(u, v)| (new_id[u], new_id[v]))
            .collect();
        let g = DagGraph::build(nodes, &edges, None).expect("subgraph of a DAG is a DAG");
        (g, old_ids)
    }
}

/// Merges job DAGs into one graph under a fresh virtual root (id 0) that
/// points at every node with no parents. Virtual roots of the inputs are
/// dropped; their children become roots of the merged graph.
pub fn merge_dags(dags: &[DagGraph]) -> Result<DagGraph, DagError> {
    if dags.is_empty() {
        return Err(DagError::InvalidArgument(
            "merge_dags needs at least one DAG".into(),
        ));
    }
    let mut nodes = vec![JobNode {
        id: 0,
        runtime: 0.0,
        resource: 0.0,
    }];
    let mut edges = Vec::new();
    for dag in dags {
        let mut remap = vec![usize::MAX; dag.len()];
        for v in dag.job_ids() {
            remap[v] = nodes.len();
            nodes.push(JobNode {
                id: nodes.len(),
                ..dag.nodes[v]
            });
        }
        for (u, v) in dag.edges() {
            if !dag.is_virtual_root(u) {
                edges.push((remap[u], remap[v]));
            }
        }
    }
    let mut has_parent = vec![false; nodes.len()];
    for &(_, v) in &edges {
        has_parent[v] = true;
    }
    for (v, &p) in has_parent.iter().enumerate().skip(1) {
        if !p {
            edges.push((0, v));
        }
    }
    DagGraph::build(nodes, &edges, Some(0))
}

/// Breadth-first reachability recomputed from scratch; used to cross-check
/// the incremental index.
pub fn reachability_by_search(g: &DagGraph) -> Vec<Vec<bool>> {
    let n = g.len();
    let mut out = vec![vec![false; n]; n];
    for (s, row) in out.iter_mut().enumerate() {
        let mut queue: VecDeque<NodeId> = g.children(s).iter().copied().collect();
        while let Some(u) = queue.pop_front() {
            if !row[u] {
                row[u] = true;
                queue.extend(g.children(u).iter().copied());
            }
        }
    }
    out
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn chain(runtimes: &[f64]) -> DagGraph {
        let tasks: Vec<_> = runtimes.iter().map(|&t| (t, 0.5)).collect();
        let edges: Vec<_> = (1..runtimes.len()).map(|i| (i - 1, i)).collect();
        DagGraph::from_tasks(&tasks, &edges).unwrap()
    }

    fn diamond() -> DagGraph {
        DagGraph::from_tasks(&[(1.0, 0.1); 4], &[(0, 1), (0, 2), (1, 3), (2, 3)]).unwrap()
    }

    pub(crate) fn random_dag(rng: &mut ChaCha8Rng, n: usize, p: f64) -> DagGraph {
        let tasks: Vec<_> = (0..n)
            .map(|_| (rng.random_range(0.0..5.0), rng.random_range(0.0..1.0)))
            .collect();
        let mut edges = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                if rng.random::<f64>() < p {
                    edges.push((u, v));
                }
            }
        }
        DagGraph::from_tasks(&tasks, &edges).unwrap()
    }

    fn assert_index_consistent(g: &DagGraph) {
        let oracle = reachability_by_search(g);
        for u in 0..g.len() {
            for v in 0..g.len() {
                assert_eq!(g.reaches(u, v), oracle[u][v], "reach({u},{v})");
                assert_eq!(g.ancestors.get(v, u), oracle[u][v], "anc({v},{u})");
            }
        }
    }

    #[test]
    fn merge_chain_and_diamond() {
        let m = merge_dags(&[chain(&[1.0, 2.0, 3.0]), diamond()]).unwrap();
        assert_eq!(m.len(), 8);
        assert_eq!(m.virtual_root(), Some(0));
        assert_eq!(m.children(0).len(), 2);
        assert_eq!(m.edge_count(), 2 + 4 + 2);
    }

    #[test]
    fn merge_single_node() {
        let one = DagGraph::from_tasks(&[(4.0, 0.3)], &[]).unwrap();
        let m = merge_dags(&[one]).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.edges().collect::<Vec<_>>(), vec![(0, 1)]);
        assert_eq!(m.node(0).runtime, 0.0);
        assert_eq!(m.node(0).resource, 0.0);
    }

    #[test]
    fn merge_empty_list_is_an_error() {
        assert!(matches!(merge_dags(&[]), Err(DagError::InvalidArgument(_))));
    }

    #[test]
    fn merge_drops_nested_virtual_roots() {
        let a = merge_dags(&[chain(&[1.0, 1.0])]).unwrap();
        let b = merge_dags(&[a, diamond()]).unwrap();
        assert_eq!(b.len(), 1 + 2 + 4);
        assert_eq!(b.children(0).len(), 2);
    }

    #[test]
    fn conflict_rules_on_chain() {
        let g = chain(&[1.0, 1.0, 1.0]);
        assert!(g.is_conflicting(EdgeAction::new(0, 2)).unwrap());
        assert!(g.is_conflicting(EdgeAction::new(2, 0)).unwrap());
        assert!(g.is_conflicting(EdgeAction::new(1, 1)).unwrap());
        let free = DagGraph::from_tasks(&[(1.0, 0.5), (1.0, 0.5)], &[]).unwrap();
        assert!(!free.is_conflicting(EdgeAction::new(0, 1)).unwrap());
        assert!(matches!(
            free.is_conflicting(EdgeAction::new(0, 5)),
            Err(DagError::UnknownNode(5))
        ));
    }

    #[test]
    fn virtual_root_is_never_an_endpoint() {
        let m = merge_dags(&[chain(&[1.0]), chain(&[1.0])]).unwrap();
        assert!(m.is_conflicting(EdgeAction::new(0, 1)).unwrap());
        assert!(m.is_conflicting(EdgeAction::new(2, 0)).unwrap());
        assert!(!m.is_conflicting(EdgeAction::new(1, 2)).unwrap());
        assert_eq!(m.qualified_ending_nodes(0).unwrap(), Vec::<NodeId>::new());
    }

    #[test]
    fn add_edge_updates_reachability() {
        let g = DagGraph::from_tasks(&[(1.0, 0.5), (1.0, 0.5)], &[]).unwrap();
        let h = g.add_edge(EdgeAction::new(0, 1)).unwrap();
        assert!(h.reaches(0, 1));
        assert!(!g.reaches(0, 1));
        assert!(h.is_conflicting(EdgeAction::new(1, 0)).unwrap());
        let err = h.add_edge(EdgeAction::new(1, 0)).unwrap_err();
        assert!(matches!(err, DagError::Conflict { start: 1, end: 0 }));
    }

    #[test]
    fn cycles_and_bad_values_are_rejected() {
        assert!(matches!(
            DagGraph::from_tasks(&[(1.0, 0.5); 2], &[(0, 1), (1, 0)]),
            Err(DagError::Cycle)
        ));
        assert!(matches!(
            DagGraph::from_tasks(&[(-1.0, 0.5)], &[]),
            Err(DagError::InvalidRuntime { .. })
        ));
        assert!(matches!(
            DagGraph::from_tasks(&[(1.0, 1.5)], &[]),
            Err(DagError::InvalidResource { .. })
        ));
    }

    #[test]
    fn incremental_index_matches_search_on_random_graphs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let n = rng.random_range(2..=12);
            let mut g = random_dag(&mut rng, n, 0.2);
            assert_index_consistent(&g);
            loop {
                let legal = g.legal_actions();
                if legal.is_empty() {
                    break;
                }
                let a = legal[rng.random_range(0..legal.len())];
                g = g.add_edge(a).unwrap();
                assert_index_consistent(&g);
                assert!(g.topological_order().is_some());
            }
        }
    }

    #[test]
    fn qualified_nodes_small_cases() {
        let free = merge_dags(&[chain(&[1.0]), chain(&[2.0])]).unwrap();
        assert_eq!(free.qualified_starting_nodes(), vec![1, 2]);
        assert_eq!(free.qualified_ending_nodes(1).unwrap(), vec![2]);
        let full = merge_dags(&[chain(&[1.0, 1.0, 1.0, 1.0])]).unwrap();
        assert!(full.qualified_starting_nodes().is_empty());
        assert!(full.qualified_ending_nodes(2).unwrap().is_empty());
    }

    #[test]
    fn qualified_nodes_match_pair_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let parts: Vec<_> = (0..rng.random_range(1..=3))
                .map(|_| {
                    let n = rng.random_range(1..=4);
                    random_dag(&mut rng, n, 0.5)
                })
                .collect();
            let g = merge_dags(&parts).unwrap();
            let n = g.len();
            let ok = |u: usize, v: usize| {
                u != v
                    && u != 0
                    && v != 0
                    && !reachability_by_search(&g)[u][v]
                    && !reachability_by_search(&g)[v][u]
            };
            let starts: Vec<_> = (0..n).filter(|&u| (0..n).any(|v| ok(u, v))).collect();
            assert_eq!(g.qualified_starting_nodes(), starts);
            for u in 0..n {
                let ends: Vec<_> = (0..n).filter(|&v| ok(u, v)).collect();
                assert_eq!(g.qualified_ending_nodes(u).unwrap(), ends);
            }
        }
    }

    #[test]
    fn strip_virtual_root() {
        let m = merge_dags(&[chain(&[1.0, 2.0]), diamond()]).unwrap();
        let (g, map) = m.without_virtual_root();
        assert_eq!(g.len(), 6);
        assert_eq!(map, vec![1, 2, 3, 4, 5, 6]);
        assert_eq!(g.edge_count(), 5);
        assert_eq!(g.virtual_root(), None);
    }
}
