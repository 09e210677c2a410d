//! Big-M mixed-integer model of the scheduling problem, exported as LP text
//! for an external solver, plus the way back from a solver's start times to
//! a fixed start order.
//!
//! Variables: the makespan `T`, start times `s_i`, a rank `p_i` per node and,
//! for every ordered pair of unrelated nodes, binaries `y_i_j` (j starts no
//! later than i), `z_i_j` (i starts before j ends) and `u_i_j` (j is running
//! when i starts). Row families:
//!
//! | tag | row |
//! |-----|-----|
//! | a | `s_i + t_i <= T` |
//! | b | `s_i + t_i <= s_j` for every edge `i -> j` |
//! | c | `s_i <= s_j + B y_i_j` |
//! | d | `s_j <= s_i + B (1 - y_i_j)` |
//! | e | `s_j + t_j <= s_i + B z_i_j` |
//! | f | `s_i <= s_j + t_j + B (1 - z_i_j)` |
//! | g | `y_i_j + z_i_j - 1 <= B u_i_j` |
//! | h | `2 - y_i_j - z_i_j <= B (1 - u_i_j)` |
//! | i | `sum_j u_i_j r_j + r_i <= R` |
//! | k | `y_i_j + y_j_i = 1` |
//! | l | `p_i >= p_j + 1 - n (1 - y_i_j)` |
//!
//! Families k and l settle equal start times: without them two or more
//! nodes starting together could each leave the others out of their
//! capacity row. `k` makes `y` a tournament and `l` makes it acyclic, so
//! among nodes sharing a start instant one counts all the others.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::dag::{DagGraph, NodeId};
use crate::sim::PriorityRule;

#[derive(Debug, Error, PartialEq)]
pub enum MilpError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("solution has no value for {0}")]
    MissingVariable(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Family {
    A,
    B,
    C,
    D,
    E,
    F,
    G,
    H,
    I,
    K,
    L,
}

impl Family {
    pub const ALL: [Family; 11] = [
        Family::A,
        Family::B,
        Family::C,
        Family::D,
        Family::E,
        Family::F,
        Family::G,
        Family::H,
        Family::I,
        Family::K,
        Family::L,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Family::A => "a",
            Family::B => "b",
            Family::C => "c",
            Family::D => "d",
            Family::E => "e",
            Family::F => "f",
            Family::G => "g",
            Family::H => "h",
            Family::I => "i",
            Family::K => "k",
            Family::L => "l",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VarKind {
    Continuous,
    Binary,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Variable {
    pub name: String,
    pub kind: VarKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

impl Sense {
    fn symbol(self) -> &'static str {
        match self {
            Sense::Le => "<=",
            Sense::Ge => ">=",
            Sense::Eq => "=",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Constraint {
    pub name: String,
    pub family: Family,
    /// `(coefficient, variable index)` in writing order.
    pub terms: Vec<(f64, usize)>,
    pub sense: Sense,
    pub rhs: f64,
}

impl Constraint {
    pub fn lhs(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(c, v)| c * x[v]).sum()
    }

    pub fn holds(&self, x: &[f64], tol: f64) -> bool {
        let l = self.lhs(x);
        match self.sense {
            Sense::Le => l <= self.rhs + tol,
            Sense::Ge => l >= self.rhs - tol,
            Sense::Eq => (l - self.rhs).abs() <= tol,
        }
    }
}

/// The model for one graph. Node ids are those of the graph with its
/// virtual root removed.
#[derive(Clone, Debug, PartialEq)]
pub struct MilpModel {
    pub variables: Vec<Variable>,
    pub constraints: Vec<Constraint>,
    /// Index of `T`, the variable minimized.
    pub objective: usize,
    pub big_m: f64,
    /// Number of resource dimensions; the builder emits one.
    pub dimensions: usize,
    pub capacity: Vec<f64>,
    /// Unrelated pairs `(i, j)` with `i < j`.
    pub pairs: Vec<(NodeId, NodeId)>,
    pub node_count: usize,
    index: BTreeMap<String, usize>,
}

/// Value of B: one more than the serial horizon, and never below 2 so that
/// family h stays satisfiable when `u = 0`.
pub fn big_m(g: &DagGraph) -> f64 {
    g.total_runtime().max(1.0) + 1.0
}

fn s_name(i: NodeId) -> String {
    format!("s_{i}")
}

pub fn build_milp(g: &DagGraph) -> MilpModel {
    let (g, _) = g.without_virtual_root();
    let n = g.len();
    let b = big_m(&g);
    let rank_m = n as f64;

    let mut m = MilpModel {
        variables: Vec::new(),
        constraints: Vec::new(),
        objective: 0,
        big_m: b,
        dimensions: 1,
        capacity: vec![1.0],
        pairs: Vec::new(),
        node_count: n,
        index: BTreeMap::new(),
    };
    let t = m.push_var("T".into(), VarKind::Continuous);
    let s: Vec<usize> = (0..n)
        .map(|i| m.push_var(s_name(i), VarKind::Continuous))
        .collect();
    let p: Vec<usize> = (0..n)
        .map(|i| m.push_var(format!("p_{i}"), VarKind::Continuous))
        .collect();

    for i in 0..n {
        for j in i + 1..n {
            if !g.reaches(i, j) && !g.reaches(j, i) {
                m.pairs.push((i, j));
            }
        }
    }
    let mut y = BTreeMap::new();
    let mut z = BTreeMap::new();
    let mut u = BTreeMap::new();
    for &(i, j) in &m.pairs.clone() {
        for (a, c) in [(i, j), (j, i)] {
            y.insert((a, c), m.push_var(format!("y_{a}_{c}"), VarKind::Binary));
            z.insert((a, c), m.push_var(format!("z_{a}_{c}"), VarKind::Binary));
            u.insert((a, c), m.push_var(format!("u_{a}_{c}"), VarKind::Binary));
        }
    }
    let ordered: Vec<(NodeId, NodeId)> = m
        .pairs
        .iter()
        .flat_map(|&(i, j)| [(i, j), (j, i)])
        .collect();
    let rt = |i: NodeId| g.node(i).runtime;

    for (i, &si) in s.iter().enumerate() {
        m.push_row(
            format!("a_{i}"),
            Family::A,
            vec![(1.0, si), (-1.0, t)],
            Sense::Le,
            -rt(i),
        );
    }
    for (i, j) in g.edges() {
        m.push_row(
            format!("b_{i}_{j}"),
            Family::B,
            vec![(1.0, s[i]), (-1.0, s[j])],
            Sense::Le,
            -rt(i),
        );
    }
    for &(i, j) in &ordered {
        let terms = vec![(1.0, s[i]), (-1.0, s[j]), (-b, y[&(i, j)])];
        m.push_row(format!("c_{i}_{j}"), Family::C, terms, Sense::Le, 0.0);
    }
    for &(i, j) in &ordered {
        let terms = vec![(1.0, s[i]), (-1.0, s[j]), (-b, y[&(i, j)])];
        m.push_row(format!("d_{i}_{j}"), Family::D, terms, Sense::Ge, -b);
    }
    for &(i, j) in &ordered {
        let terms = vec![(1.0, s[i]), (-1.0, s[j]), (b, z[&(i, j)])];
        m.push_row(format!("e_{i}_{j}"), Family::E, terms, Sense::Ge, rt(j));
    }
    for &(i, j) in &ordered {
        let terms = vec![(1.0, s[i]), (-1.0, s[j]), (b, z[&(i, j)])];
        m.push_row(format!("f_{i}_{j}"), Family::F, terms, Sense::Le, rt(j) + b);
    }
    for &(i, j) in &ordered {
        let terms = vec![(1.0, y[&(i, j)]), (1.0, z[&(i, j)]), (-b, u[&(i, j)])];
        m.push_row(format!("g_{i}_{j}"), Family::G, terms, Sense::Le, 1.0);
    }
    for &(i, j) in &ordered {
        let terms = vec![(1.0, y[&(i, j)]), (1.0, z[&(i, j)]), (-b, u[&(i, j)])];
        m.push_row(format!("h_{i}_{j}"), Family::H, terms, Sense::Ge, 2.0 - b);
    }
    for i in 0..n {
        let terms: Vec<(f64, usize)> = ordered
            .iter()
            .filter(|&&(a, _)| a == i)
            .map(|&(_, j)| (g.node(j).resource, u[&(i, j)]))
            .collect();
        if !terms.is_empty() {
            let rhs = m.capacity[0] - g.node(i).resource;
            m.push_row(format!("i_{i}"), Family::I, terms, Sense::Le, rhs);
        }
    }
    for &(i, j) in &m.pairs.clone() {
        let terms = vec![(1.0, y[&(i, j)]), (1.0, y[&(j, i)])];
        m.push_row(format!("k_{i}_{j}"), Family::K, terms, Sense::Eq, 1.0);
    }
    for &(i, j) in &ordered {
        let terms = vec![(1.0, p[i]), (-1.0, p[j]), (-rank_m, y[&(i, j)])];
        m.push_row(
            format!("l_{i}_{j}"),
            Family::L,
            terms,
            Sense::Ge,
            1.0 - rank_m,
        );
    }
    m
}

impl MilpModel {
    fn push_var(&mut self, name: String, kind: VarKind) -> usize {
        let idx = self.variables.len();
        self.index.insert(name.clone(), idx);
        self.variables.push(Variable { name, kind });
        idx
    }

    fn push_row(
        &mut self,
        name: String,
        family: Family,
        terms: Vec<(f64, usize)>,
        sense: Sense,
        rhs: f64,
    ) {
        self.constraints.push(Constraint {
            name,
            family,
            terms,
            sense,
            rhs,
        });
    }

    pub fn var(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn family_count(&self, family: Family) -> usize {
        self.constraints
            .iter()
            .filter(|c| c.family == family)
            .count()
    }

    /// Checks every row, non-negativity and, unless `relax`, integrality of
    /// the binaries. Returns the name of the first violated row or variable.
    pub fn check(&self, x: &[f64], relax: bool, tol: f64) -> Result<(), String> {
        for (v, var) in self.variables.iter().enumerate() {
            let ok = match var.kind {
                VarKind::Continuous => x[v] >= -tol,
                VarKind::Binary if relax => (-tol..=1.0 + tol).contains(&x[v]),
                VarKind::Binary => x[v].abs() <= tol || (x[v] - 1.0).abs() <= tol,
            };
            if !ok {
                return Err(var.name.clone());
            }
        }
        match self.constraints.iter().find(|c| !c.holds(x, tol)) {
            Some(c) => Err(c.name.clone()),
            None => Ok(()),
        }
    }

    /// Assignment that realizes a schedule of the root-stripped graph:
    /// equal starts are ordered by id, and `u_i_j` is set exactly when `j`
    /// occupies the resource at the instant `i` starts.
    pub fn assignment_from_schedule(&self, g: &DagGraph, start: &[f64]) -> Vec<f64> {
        let (g, _) = g.without_virtual_root();
        let n = self.node_count;
        let mut x = vec![0.0; self.variables.len()];
        let finish = |i: usize| start[i] + g.node(i).runtime;
        x[self.objective] = (0..n).map(finish).fold(0.0, f64::max);
        let mut order: Vec<NodeId> = (0..n).collect();
        order.sort_by(|&a, &b| start[a].total_cmp(&start[b]).then(a.cmp(&b)));
        let mut rank = vec![0usize; n];
        for (r, &v) in order.iter().enumerate() {
            rank[v] = r;
        }
        for i in 0..n {
            x[self.index[&s_name(i)]] = start[i];
            x[self.index[&format!("p_{i}")]] = rank[i] as f64;
        }
        for &(a, b) in &self.pairs {
            for (i, j) in [(a, b), (b, a)] {
                let yv = rank[j] < rank[i];
                let zv = start[i] < finish(j);
                x[self.index[&format!("y_{i}_{j}")]] = f64::from(u8::from(yv));
                x[self.index[&format!("z_{i}_{j}")]] = f64::from(u8::from(zv));
                x[self.index[&format!("u_{i}_{j}")]] = f64::from(u8::from(yv && zv));
            }
        }
        x
    }
}

fn fmt_terms(out: &mut String, m: &MilpModel, terms: &[(f64, usize)]) {
    const WRAP: usize = 70;
    let mut line_len = 0;
    for (k, &(c, v)) in terms.iter().enumerate() {
        let name = &m.variables[v].name;
        let mag = c.abs();
        let sign = if c < 0.0 {
            "- "
        } else if k > 0 {
            "+ "
        } else {
            ""
        };
        let piece = if mag == 1.0 {
            format!("{sign}{name}")
        } else {
            format!("{sign}{mag} {name}")
        };
        if line_len > WRAP {
            out.push_str("\n  ");
            line_len = 0;
        } else if k > 0 {
            out.push(' ');
        }
        line_len += piece.len() + 1;
        out.push_str(&piece);
    }
}

/// LP text with `Minimize / Subject To / Bounds / Binaries / End` sections.
/// With `relax` the binaries become `[0, 1]` bounds and no `Binaries`
/// section is written; otherwise no `Bounds` section is needed.
pub fn write_lp(m: &MilpModel, relax: bool) -> String {
    let mut out = String::from("Minimize\n obj: ");
    out.push_str(&m.variables[m.objective].name);
    out.push_str("\nSubject To\n");
    for c in &m.constraints {
        let _ = write!(out, " {}: ", c.name);
        fmt_terms(&mut out, m, &c.terms);
        let _ = writeln!(out, " {} {}", c.sense.symbol(), c.rhs);
    }
    let binaries: Vec<&str> = m
        .variables
        .iter()
        .filter(|v| v.kind == VarKind::Binary)
        .map(|v| v.name.as_str())
        .collect();
    if relax {
        if !binaries.is_empty() {
            out.push_str("Bounds\n");
            for b in &binaries {
                let _ = writeln!(out, " 0 <= {b} <= 1");
            }
        }
    } else if !binaries.is_empty() {
        out.push_str("Binaries\n");
        for b in &binaries {
            let _ = writeln!(out, " {b}");
        }
    }
    out.push_str("End\n");
    out
}

/// Variable values read from `name value` lines.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LpSolution {
    pub values: BTreeMap<String, f64>,
}

impl LpSolution {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.get(name).copied()
    }

    /// The value of `T`.
    pub fn objective(&self) -> Option<f64> {
        self.get("T")
    }

    /// Dense vector in the model's variable order; absent entries are 0.
    pub fn to_vector(&self, m: &MilpModel) -> Vec<f64> {
        m.variables
            .iter()
            .map(|v| self.get(&v.name).unwrap_or(0.0))
            .collect()
    }
}

/// Parses one `name value` pair per line. Blank lines and lines starting
/// with `#` are skipped; names the model does not know are rejected.
pub fn read_solution(text: &str, m: &MilpModel) -> Result<LpSolution, MilpError> {
    let mut sol = LpSolution::default();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let err = |message: String| MilpError::Parse { line, message };
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        let [name, value] = fields[..] else {
            return Err(err(format!("expected 'name value', got '{trimmed}'")));
        };
        if m.var(name).is_none() {
            return Err(err(format!("unknown variable '{name}'")));
        }
        let value: f64 = value
            .parse()
            .map_err(|_| err(format!("bad number '{value}'")))?;
        if sol.values.insert(name.to_string(), value).is_some() {
            return Err(err(format!("duplicate variable '{name}'")));
        }
    }
    Ok(sol)
}

/// Nodes sorted by ascending `s_i`, ties by id, as a fixed start order.
pub fn order_from_solution(sol: &LpSolution, m: &MilpModel) -> Result<PriorityRule, MilpError> {
    let mut keyed = Vec::with_capacity(m.node_count);
    for i in 0..m.node_count {
        let name = s_name(i);
        let s = sol.get(&name).ok_or(MilpError::MissingVariable(name))?;
        keyed.push((s, i));
    }
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(PriorityRule::FixedOrder(
        keyed.into_iter().map(|(_, i)| i).collect(),
    ))
}
