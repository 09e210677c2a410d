//! Exact minimum makespan for small graphs by enumerating start orders.
//!
//! For a fixed start order, placing each node at the earliest instant that
//! respects the order, its parents and the capacity left by earlier nodes is
//! optimal; taking the best order over all linear extensions therefore gives
//! the true optimum. This search shares no code with the list scheduler.

use crate::dag::{DagGraph, NodeId};

use super::CAPACITY_EPS;

#[derive(Clone, Debug, PartialEq)]
pub struct Optimum {
    pub makespan: f64,
    /// A start order attaining `makespan`.
    pub order: Vec<NodeId>,
    pub start_time: Vec<f64>,
}

/// Upper limit on graph size; beyond this the search is not attempted.
pub const MAX_NODES: usize = 10;

pub fn optimal_schedule(g: &DagGraph) -> Option<Optimum> {
    let n = g.len();
    if n > MAX_NODES {
        return None;
    }
    let mut search = Search {
        g,
        placed: Vec::with_capacity(n),
        start: vec![0.0; n],
        done: vec![false; n],
        best: f64::INFINITY,
        best_order: Vec::new(),
        best_start: Vec::new(),
    };
    search.descend(0.0, 0.0);
    Some(Optimum {
        makespan: search.best,
        order: search.best_order,
        start_time: search.best_start,
    })
}

struct Search<'a> {
    g: &'a DagGraph,
    placed: Vec<NodeId>,
    start: Vec<f64>,
    done: Vec<bool>,
    best: f64,
    best_order: Vec<NodeId>,
    best_start: Vec<f64>,
}

impl Search<'_> {
    fn descend(&mut self, last_start: f64, span: f64) {
        let n = self.g.len();
        if self.placed.len() == n {
            if span < self.best {
                self.best = span;
                self.best_order = self.placed.clone();
                self.best_start = self.start.clone();
            }
            return;
        }
        if span >= self.best {
            return;
        }
        for v in 0..n {
            if self.done[v] || self.g.parents(v).iter().any(|&p| !self.done[p]) {
                continue;
            }
            let s = self.earliest_start(v, last_start);
            let finish = s + self.g.node(v).runtime;
            self.start[v] = s;
            self.done[v] = true;
            self.placed.push(v);
            self.descend(s, span.max(finish));
            self.placed.pop();
            self.done[v] = false;
        }
    }

    fn earliest_start(&self, v: NodeId, last_start: f64) -> f64 {
        let g = self.g;
        let node = g.node(v);
        let mut t = g
            .parents(v)
            .iter()
            .map(|&p| self.start[p] + g.node(p).runtime)
            .fold(last_start, f64::max);
        let mut candidates: Vec<f64> = self
            .placed
            .iter()
            .map(|&j| self.start[j] + g.node(j).runtime)
            .filter(|&f| f > t)
            .collect();
        candidates.sort_by(f64::total_cmp);
        let mut next = candidates.into_iter();
        loop {
            let load: f64 = self
                .placed
                .iter()
                .filter(|&&j| self.start[j] <= t && t < self.start[j] + g.node(j).runtime)
                .map(|&j| g.node(j).resource)
                .sum();
            if load + node.resource <= 1.0 + CAPACITY_EPS {
                return t;
            }
            t = next
                .next()
                .expect("capacity frees up once everything placed finishes");
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn independent_pairs() {
        let g = DagGraph::from_tasks(&[(5.0, 0.5), (7.0, 0.5)], &[]).unwrap();
        assert_eq!(optimal_schedule(&g).unwrap().makespan, 7.0);
        let g = DagGraph::from_tasks(&[(5.0, 1.0), (7.0, 1.0)], &[]).unwrap();
        assert_eq!(optimal_schedule(&g).unwrap().makespan, 12.0);
    }

    #[test]
    fn precedence_and_packing() {
        // a (0.5, 1s) -> c (1.0, 10s); b (0.5, 10s) independent.
        let g = DagGraph::from_tasks(&[(1.0, 0.5), (10.0, 0.5), (10.0, 1.0)], &[(0, 2)]).unwrap();
        let opt = optimal_schedule(&g).unwrap();
        assert_eq!(opt.makespan, 20.0);
        assert_eq!(opt.order, vec![0, 1, 2]);
        assert_eq!(opt.start_time, vec![0.0, 0.0, 10.0]);
    }

    #[test]
    fn too_large_graphs_are_declined() {
        let g = DagGraph::from_tasks(&[(1.0, 0.1); MAX_NODES + 1], &[]).unwrap();
        assert!(optimal_schedule(&g).is_none());
    }
}
