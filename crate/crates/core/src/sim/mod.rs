//! Non-preemptive list scheduling under a unit-capacity resource.
//!
//! All rules share one event-driven loop: at time `t` the ready nodes are
//! ranked by the rule and every node that still fits the remaining capacity
//! is started (lower-ranked nodes may backfill around one that does not fit);
//! then `t` jumps to the next completion. [`PriorityRule::FixedOrder`] is the
//! exception: it starts nodes strictly in the given order, which makes it an
//! exact executor for any start order found by search or read off an LP.

pub mod exhaustive;

use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dag::{DagGraph, NodeId};

/// Float tolerance for capacity comparisons.
pub const CAPACITY_EPS: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("node {id} needs {resource} of the resource, more than the unit capacity")]
    Infeasible { id: NodeId, resource: f64 },
    #[error("fixed order is not a permutation of the {expected} node ids")]
    InvalidOrder { expected: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PriorityRule {
    /// Shortest job first.
    Sjf,
    /// Longest remaining path to a leaf first.
    CriticalPath,
    /// Largest resource × free-capacity product first.
    Tetris,
    /// Start nodes in exactly this order.
    FixedOrder(Vec<NodeId>),
}

impl PriorityRule {
    pub fn name(&self) -> &'static str {
        match self {
            PriorityRule::Sjf => "sjf",
            PriorityRule::CriticalPath => "cp",
            PriorityRule::Tetris => "tetris",
            PriorityRule::FixedOrder(_) => "fixed",
        }
    }
}

impl std::str::FromStr for PriorityRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sjf" => Ok(PriorityRule::Sjf),
            "cp" | "critical-path" => Ok(PriorityRule::CriticalPath),
            "tetris" => Ok(PriorityRule::Tetris),
            other => Err(format!(
                "unknown rule '{other}' (expected sjf, cp or tetris)"
            )),
        }
    }
}

impl std::fmt::Display for PriorityRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Start time of every node; finish times follow from the runtimes.
#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    pub start_time: Vec<f64>,
    pub makespan: f64,
}

impl Schedule {
    pub fn finish_time(&self, g: &DagGraph, v: NodeId) -> f64 {
        self.start_time[v] + g.node(v).runtime
    }

    /// Nodes sorted by start time, ties by id.
    pub fn start_order(&self) -> Vec<NodeId> {
        let mut order: Vec<NodeId> = (0..self.start_time.len()).collect();
        order.sort_by(|&a, &b| {
            self.start_time[a]
                .total_cmp(&self.start_time[b])
                .then(a.cmp(&b))
        });
        order
    }

    /// `# node start finish` rows followed by a `makespan` footer.
    pub fn export_text(&self, g: &DagGraph) -> String {
        let mut out = String::from("# node start finish\n");
        for v in self.start_order() {
            let _ = writeln!(out, "{v} {} {}", self.start_time[v], self.finish_time(g, v));
        }
        let _ = writeln!(out, "makespan {}", self.makespan);
        out
    }
}

/// Longest runtime sum along any path from each node to a leaf, the node included.
pub fn cp_priority(g: &DagGraph) -> Vec<f64> {
    let order = g.topological_order().expect("DagGraph is acyclic");
    let mut prio = vec![0.0; g.len()];
    for &v in order.iter().rev() {
        let tail = g
            .children(v)
            .iter()
            .map(|&c| prio[c])
            .fold(0.0_f64, f64::max);
        prio[v] = g.node(v).runtime + tail;
    }
    prio
}

pub fn simulate(g: &DagGraph, rule: &PriorityRule) -> Result<Schedule, SimError> {
    for node in g.nodes() {
        if node.resource > 1.0 + CAPACITY_EPS {
            return Err(SimError::Infeasible {
                id: node.id,
                resource: node.resource,
            });
        }
    }
    match rule {
        PriorityRule::FixedOrder(order) => simulate_fixed(g, order),
        _ => Ok(simulate_list(g, rule)),
    }
}

pub fn makespan(g: &DagGraph, rule: &PriorityRule) -> Result<f64, SimError> {
    simulate(g, rule).map(|s| s.makespan)
}

#[derive(Clone, Copy)]
struct Running {
    finish: f64,
    id: NodeId,
}

fn simulate_list(g: &DagGraph, rule: &PriorityRule) -> Schedule {
    let n = g.len();
    let cp = matches!(rule, PriorityRule::CriticalPath).then(|| cp_priority(g));
    let mut waiting: Vec<usize> = (0..n).map(|v| g.parents(v).len()).collect();
    let mut ready: Vec<NodeId> = (0..n).filter(|&v| waiting[v] == 0).collect();
    let mut running: Vec<Running> = Vec::new();
    let mut start = vec![f64::NAN; n];
    let mut t = 0.0_f64;
    let mut makespan = 0.0_f64;

    loop {
        let mut used: f64 = running.iter().map(|r| g.node(r.id).resource).sum();
        let free = (1.0 - used).max(0.0);
        let rank = |a: &NodeId, b: &NodeId| -> Ordering {
            let (na, nb) = (g.node(*a), g.node(*b));
            let by_rule = match rule {
                PriorityRule::Sjf => na.runtime.total_cmp(&nb.runtime),
                PriorityRule::CriticalPath => {
                    let cp = cp.as_ref().unwrap();
                    cp[*b].total_cmp(&cp[*a])
                }
                PriorityRule::Tetris => (nb.resource * free).total_cmp(&(na.resource * free)),
                PriorityRule::FixedOrder(_) => unreachable!(),
            };
            by_rule.then(a.cmp(b))
        };
        ready.sort_by(rank);
        ready.retain(|&v| {
            let r = g.node(v).resource;
            if used + r <= 1.0 + CAPACITY_EPS {
                used += r;
                start[v] = t;
                running.push(Running {
                    finish: t + g.node(v).runtime,
                    id: v,
                });
                false
            } else {
                true
            }
        });

        let Some(next) = running.iter().map(|r| r.finish).min_by(f64::total_cmp) else {
            break;
        };
        t = next;
        makespan = makespan.max(t);
        let mut finished: Vec<NodeId> = Vec::new();
        running.retain(|r| {
            if r.finish <= t {
                finished.push(r.id);
                false
            } else {
                true
            }
        });
        finished.sort_unstable();
        for v in finished {
            for &c in g.children(v) {
                waiting[c] -= 1;
                if waiting[c] == 0 {
                    ready.push(c);
                }
            }
        }
    }
    debug_assert!(ready.is_empty(), "every node fits an empty machine");
    Schedule {
        start_time: start,
        makespan,
    }
}

/// Stable topological repair of a start order: the next node is always the
/// earliest-listed one whose parents have all been placed before it.
fn repair_order(g: &DagGraph, order: &[NodeId]) -> Result<Vec<NodeId>, SimError> {
    let n = g.len();
    let mut pos = vec![usize::MAX; n];
    for (i, &v) in order.iter().enumerate() {
        if v >= n || pos[v] != usize::MAX {
            return Err(SimError::InvalidOrder { expected: n });
        }
        pos[v] = i;
    }
    if order.len() != n {
        return Err(SimError::InvalidOrder { expected: n });
    }
    let mut waiting: Vec<usize> = (0..n).map(|v| g.parents(v).len()).collect();
    let mut heap: std::collections::BinaryHeap<std::cmp::Reverse<(usize, NodeId)>> = (0..n)
        .filter(|&v| waiting[v] == 0)
        .map(|v| std::cmp::Reverse((pos[v], v)))
        .collect();
    let mut out = Vec::with_capacity(n);
    while let Some(std::cmp::Reverse((_, v))) = heap.pop() {
        out.push(v);
        for &c in g.children(v) {
            waiting[c] -= 1;
            if waiting[c] == 0 {
                heap.push(std::cmp::Reverse((pos[c], c)));
            }
        }
    }
    Ok(out)
}

fn simulate_fixed(g: &DagGraph, order: &[NodeId]) -> Result<Schedule, SimError> {
    let order = repair_order(g, order)?;
    let n = g.len();
    let mut start = vec![f64::NAN; n];
    let mut running: Vec<Running> = Vec::new();
    let mut t = 0.0_f64;
    let mut makespan = 0.0_f64;
    for v in order {
        let node = g.node(v);
        let ready_at = g
            .parents(v)
            .iter()
            .map(|&p| start[p] + g.node(p).runtime)
            .fold(t, f64::max);
        t = ready_at;
        // Only earlier nodes are placed, so usage never grows after `t`.
        loop {
            running.retain(|r| r.finish > t);
            let used: f64 = running.iter().map(|r| g.node(r.id).resource).sum();
            if used + node.resource <= 1.0 + CAPACITY_EPS {
                break;
            }
            t = running
                .iter()
                .map(|r| r.finish)
                .min_by(f64::total_cmp)
                .expect("non-empty");
        }
        start[v] = t;
        let finish = t + node.runtime;
        makespan = makespan.max(finish);
        running.push(Running { finish, id: v });
    }
    Ok(Schedule {
        start_time: start,
        makespan,
    })
}

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleViolation {
    #[error("node {0} has no valid start time")]
    Unscheduled(NodeId),
    #[error("edge {0} -> {1} violated")]
    Precedence(NodeId, NodeId),
    #[error("capacity exceeded when node {0} starts: {1}")]
    Capacity(NodeId, f64),
    #[error("makespan {reported} differs from latest finish {actual}")]
    Makespan { reported: f64, actual: f64 },
}

/// Checks precedence, unit capacity (at every start instant) and the makespan.
/// Zero-runtime nodes occupy no interval and are not counted as load.
pub fn verify_schedule(g: &DagGraph, s: &Schedule) -> Result<(), ScheduleViolation> {
    let n = g.len();
    if s.start_time.len() != n {
        return Err(ScheduleViolation::Unscheduled(s.start_time.len().min(n)));
    }
    for v in 0..n {
        if !s.start_time[v].is_finite() || s.start_time[v] < 0.0 {
            return Err(ScheduleViolation::Unscheduled(v));
        }
    }
    for (u, v) in g.edges() {
        if s.finish_time(g, u) > s.start_time[v] + CAPACITY_EPS {
            return Err(ScheduleViolation::Precedence(u, v));
        }
    }
    for i in (0..n).filter(|&i| g.node(i).runtime > 0.0) {
        let at = s.start_time[i];
        let load: f64 = (0..n)
            .filter(|&j| j != i && s.start_time[j] <= at && at < s.finish_time(g, j))
            .map(|j| g.node(j).resource)
            .sum::<f64>()
            + g.node(i).resource;
        if load > 1.0 + CAPACITY_EPS {
            return Err(ScheduleViolation::Capacity(i, load));
        }
    }
    let actual = (0..n).map(|v| s.finish_time(g, v)).fold(0.0, f64::max);
    if actual != s.makespan {
        return Err(ScheduleViolation::Makespan {
            reported: s.makespan,
            actual,
        });
    }
    Ok(())
}

/// True when, at every event instant, no ready and unstarted node would
/// have fit the free capacity.
pub fn is_work_conserving(g: &DagGraph, s: &Schedule) -> bool {
    let n = g.len();
    let mut events: Vec<f64> = (0..n).map(|v| s.finish_time(g, v)).collect();
    events.push(0.0);
    events.sort_by(f64::total_cmp);
    events.dedup();
    events.iter().all(|&tau| {
        let load: f64 = (0..n)
            .filter(|&j| s.start_time[j] <= tau && tau < s.finish_time(g, j))
            .map(|j| g.node(j).resource)
            .sum();
        (0..n).all(|v| {
            let idle_ready =
                s.start_time[v] > tau && g.parents(v).iter().all(|&p| s.finish_time(g, p) <= tau);
            !idle_ready || load + g.node(v).resource > 1.0 + CAPACITY_EPS
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dag::merge_dags;

    fn pair(r: f64) -> DagGraph {
        DagGraph::from_tasks(&[(5.0, r), (7.0, r)], &[]).unwrap()
    }

    const RULES: [PriorityRule; 3] = [
        PriorityRule::Sjf,
        PriorityRule::CriticalPath,
        PriorityRule::Tetris,
    ];

    #[test]
    fn cp_priority_on_chain_and_leaf() {
        let g =
            DagGraph::from_tasks(&[(3.0, 0.1), (2.0, 0.1), (1.0, 0.1)], &[(0, 1), (1, 2)]).unwrap();
        assert_eq!(cp_priority(&g), vec![6.0, 3.0, 1.0]);
        let one = DagGraph::from_tasks(&[(5.0, 0.1)], &[]).unwrap();
        assert_eq!(cp_priority(&one), vec![5.0]);
    }

    #[test]
    fn parallel_and_serial_pairs() {
        for rule in RULES {
            assert_eq!(makespan(&pair(0.5), &rule).unwrap(), 7.0);
            assert_eq!(makespan(&pair(1.0), &rule).unwrap(), 12.0);
        }
    }

    #[test]
    fn chain_makespan_is_runtime_sum() {
        let g =
            DagGraph::from_tasks(&[(1.5, 0.2), (2.0, 0.9), (0.5, 0.4)], &[(0, 1), (1, 2)]).unwrap();
        for rule in RULES {
            assert_eq!(makespan(&g, &rule).unwrap(), 4.0);
        }
    }

    #[test]
    fn root_only_graph_has_zero_makespan() {
        let empty = merge_dags(&[DagGraph::from_tasks(&[], &[]).unwrap()]).unwrap();
        assert_eq!(empty.len(), 1);
        assert_eq!(makespan(&empty, &PriorityRule::Sjf).unwrap(), 0.0);
    }

    #[test]
    fn sjf_starts_shortest_first_and_cp_longest_path_first() {
        // a (4) alone, b (1) -> c (5); every node takes the whole machine.
        let g = DagGraph::from_tasks(&[(4.0, 1.0), (1.0, 1.0), (5.0, 1.0)], &[(1, 2)]).unwrap();
        let sjf = simulate(&g, &PriorityRule::Sjf).unwrap();
        assert_eq!(sjf.start_time, vec![1.0, 0.0, 5.0]);
        let cp = simulate(&g, &PriorityRule::CriticalPath).unwrap();
        assert_eq!(cp.start_time, vec![6.0, 0.0, 1.0]);
    }

    #[test]
    fn tetris_prefers_the_bigger_fitting_node() {
        let g = DagGraph::from_tasks(&[(1.0, 0.3), (1.0, 0.6), (1.0, 0.5)], &[]).unwrap();
        let s = simulate(&g, &PriorityRule::Tetris).unwrap();
        // 0.6 first, then 0.3 backfills; 0.5 waits.
        assert_eq!(s.start_time, vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn backfilling_skips_a_node_that_does_not_fit() {
        // a (0.7) runs; b (0.5, shorter) does not fit, c (0.2) backfills.
        let g = DagGraph::from_tasks(&[(1.0, 0.7), (2.0, 0.5), (3.0, 0.2)], &[]).unwrap();
        let s = simulate(&g, &PriorityRule::FixedOrder(vec![0, 1, 2])).unwrap();
        assert_eq!(s.start_time, vec![0.0, 1.0, 1.0]);
        let s = simulate(&g, &PriorityRule::Sjf).unwrap();
        assert_eq!(s.start_time, vec![0.0, 1.0, 0.0]);
        assert!(is_work_conserving(&g, &s));
    }

    #[test]
    fn fixed_order_must_be_a_permutation() {
        let g = pair(0.5);
        assert_eq!(
            simulate(&g, &PriorityRule::FixedOrder(vec![0, 0])),
            Err(SimError::InvalidOrder { expected: 2 })
        );
        assert!(simulate(&g, &PriorityRule::FixedOrder(vec![0])).is_err());
    }

    #[test]
    fn fixed_order_is_repaired_topologically() {
        let g = DagGraph::from_tasks(&[(1.0, 0.5), (1.0, 0.5)], &[(0, 1)]).unwrap();
        let s = simulate(&g, &PriorityRule::FixedOrder(vec![1, 0])).unwrap();
        assert_eq!(s.start_time, vec![0.0, 1.0]);
    }

    #[test]
    fn zero_runtime_nodes_do_not_block() {
        let g = DagGraph::from_tasks(&[(0.0, 1.0), (2.0, 1.0), (2.0, 0.0)], &[(0, 1)]).unwrap();
        for rule in RULES {
            let s = simulate(&g, &rule).unwrap();
            verify_schedule(&g, &s).unwrap();
            assert_eq!(s.makespan, 2.0);
        }
    }

    #[test]
    fn export_format() {
        let g = pair(1.0);
        let s = simulate(&g, &PriorityRule::Sjf).unwrap();
        assert_eq!(
            s.export_text(&g),
            "# node start finish\n0 0 5\n1 5 12\nmakespan 12\n"
        );
    }

    #[test]
    fn verify_catches_violations() {
        let g = DagGraph::from_tasks(&[(1.0, 0.7), (1.0, 0.7)], &[]).unwrap();
        let bad = Schedule {
            start_time: vec![0.0, 0.5],
            makespan: 1.5,
        };
        assert!(matches!(
            verify_schedule(&g, &bad),
            Err(ScheduleViolation::Capacity(1, _))
        ));
        let g = DagGraph::from_tasks(&[(1.0, 0.1), (1.0, 0.1)], &[(0, 1)]).unwrap();
        let bad = Schedule {
            start_time: vec![0.0, 0.5],
            makespan: 1.5,
        };
        assert_eq!(
            verify_schedule(&g, &bad),
            Err(ScheduleViolation::Precedence(0, 1))
        );
    }
}
