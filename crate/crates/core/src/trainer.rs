//! Policy-gradient training. Each iteration merges a random handful of DAGs,
//! collects `N` rollouts of up to `M` sampled edges, turns makespan drops into
//! baselined, normalized returns, and takes one ascent step on all parameters.

use std::io::Write;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dag::{merge_dags, DagError, DagGraph, EdgeAction};
use crate::inference::{infer_edges, InferenceError};
use crate::model::{ActionDistribution, EdgeModel, ModelError};
use crate::nn::{clip_grad_norm, GradBuffer};
use crate::sim::{makespan, PriorityRule, SimError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training data is empty")]
    EmptyDataset,
    #[error("parameters became non-finite at iteration {iteration}")]
    Diverged { iteration: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dag(#[from] DagError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How many DAGs are merged into one training instance: an exponential
/// draw with the given mean, rounded up and rejected outside `[min, max]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DagCount {
    pub mean: f64,
    pub min: usize,
    pub max: usize,
}

impl Default for DagCount {
    fn default() -> Self {
        Self {
            mean: 5.0,
            min: 1,
            max: 20,
        }
    }
}

impl DagCount {
    pub fn exactly(k: usize) -> Self {
        Self {
            mean: k as f64,
            min: k,
            max: k,
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> usize {
        if self.min == self.max {
            return self.min;
        }
        let exp = Exp::new(1.0 / self.mean).expect("positive mean");
        loop {
            let k = exp.sample(rng).ceil() as usize;
            if (self.min..=self.max).contains(&k) {
                return k;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Global gradient-norm cap applied before each step; `None` disables it.
    pub max_grad_norm: Option<f64>,
    pub iterations: usize,
    pub rollouts: usize,
    pub edges: usize,
    pub gamma: f64,
    pub epsilon: f64,
    pub rule: PriorityRule,
    pub seed: u64,
    pub dag_count: DagCount,
    /// Evaluate the held-out buckets every this many iterations (0 = never).
    pub eval_every: usize,
    pub eval_beam: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            max_grad_norm: Some(1.0),
            iterations: 10_000,
            rollouts: 10,
            edges: 5,
            gamma: 1.0,
            epsilon: 0.05,
            rule: PriorityRule::Sjf,
            seed: 0,
            dag_count: DagCount::default(),
            eval_every: 100,
            eval_beam: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.rollouts == 0 || self.edges == 0 {
            return bad("rollouts and edges must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.epsilon) {
            return bad("epsilon must lie in [0, 1)");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad("learning rate must be finite and non-negative");
        }
        if self.dag_count.min == 0
            || self.dag_count.min > self.dag_count.max
            || self.dag_count.mean <= 0.0
        {
            return bad("dag count needs 1 <= min <= max and a positive mean");
        }
        if self
            .max_grad_norm
            .is_some_and(|m| !(m.is_finite() && m > 0.0))
        {
            return bad("gradient-norm cap must be finite and positive");
        }
        if self.eval_beam == 0 {
            return bad("eval beam must be at least 1");
        }
        Ok(())
    }
}

/// One decision: the graph it was taken on, the edge, and its reward
/// (raw makespan drop, replaced by the adjusted return after [`adjust_rewards`]).
#[derive(Clone, Debug)]
pub struct RolloutRecord {
    pub graph: DagGraph,
    pub action: EdgeAction,
    pub reward: f64,
}

#[derive(Clone, Debug)]
pub struct RolloutBatch {
    /// Baseline makespan of the merged graph before any edge.
    pub t0: f64,
    /// One entry per rollout; shorter than `M` when actions ran out.
    pub rollouts: Vec<Vec<RolloutRecord>>,
}

fn sample_from(d: &ActionDistribution, epsilon: f64, rng: &mut impl Rng) -> usize {
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        return *d.candidate_ids.choose(rng).expect("non-empty support");
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (&v, &p) in d.candidate_ids.iter().zip(&d.probs) {
        acc += p;
        if u < acc {
            return v;
        }
    }
    *d.candidate_ids.last().expect("non-empty support")
}

/// Samples `rollouts` independent trajectories of up to `edges` edges on `g`.
pub fn rollout(
    model: &EdgeModel,
    g: &DagGraph,
    rollouts: usize,
    edges: usize,
    rule: &PriorityRule,
    epsilon: f64,
    rng: &mut impl Rng,
) -> Result<RolloutBatch, TrainError> {
    let t0 = makespan(g, rule)?;
    let mut out = Vec::with_capacity(rollouts);
    for _ in 0..rollouts {
        let mut local = ChaCha8Rng::seed_from_u64(rng.random());
        let mut graph = g.clone();
        let mut current = t0;
        let mut records = Vec::with_capacity(edges);
        for _ in 0..edges {
            let ems = model.embed(&graph)?;
            let starts = match model.start_node_distribution(&graph, &ems) {
                Ok(d) => d,
                Err(ModelError::NoAction) => break,
                Err(e) => return Err(e.into()),
            };
            let start = sample_from(&starts, epsilon, &mut local);
            let ends = model.end_node_distribution(&graph, &ems, start)?;
            let end = sample_from(&ends, epsilon, &mut local);
            let action = EdgeAction::new(start, end);
            let next = graph.add_edge(action)?;
            let after = makespan(&next, rule)?;
            records.push(RolloutRecord {
                graph,
                action,
                reward: current - after,
            });
            current = after;
            graph = next;
        }
        out.push(records);
    }
    Ok(RolloutBatch { t0, rollouts: out })
}

/// `out[j] = Σ_{k ≥ j} γ^(k−j) · rewards[k]`.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for j in (0..rewards.len()).rev() {
        acc = rewards[j] + gamma * acc;
        out[j] = acc;
    }
    out
}

/// Replaces each raw reward by `(return − b_j) / T0`, where `b_j` is the mean
/// return at step `j` over the rollouts that reached step `j`. `T0 = 0`
/// skips the division.
pub fn adjust_rewards(rollouts: &mut [Vec<RolloutRecord>], gamma: f64, t0: f64) {
    let returns: Vec<Vec<f64>> = rollouts
        .iter()
        .map(|r| discounted_returns(&r.iter().map(|x| x.reward).collect::<Vec<_>>(), gamma))
        .collect();
    let steps = returns.iter().map(Vec::len).max().unwrap_or(0);
    let baseline: Vec<f64> = (0..steps)
        .map(|j| {
            let at_j: Vec<f64> = returns.iter().filter_map(|r| r.get(j).copied()).collect();
            at_j.iter().sum::<f64>() / at_j.len() as f64
        })
        .collect();
    let scale = if t0 == 0.0 { 1.0 } else { t0 };
    for (records, ret) in rollouts.iter_mut().zip(&returns) {
        for (j, rec) in records.iter_mut().enumerate() {
            rec.reward = (ret[j] - baseline[j]) / scale;
        }
    }
}

/// `Σ r̂ · ∇[log p(a¹|G) + log p(a²|G, a¹)]` over every record.
pub fn policy_gradient(
    model: &EdgeModel,
    rollouts: &[Vec<RolloutRecord>],
) -> Result<GradBuffer, TrainError> {
    let mut grads = model.params().zero_buffer();
    for rec in rollouts.iter().flatten() {
        if rec.reward != 0.0 {
            model.accumulate_log_prob_gradient(&rec.graph, rec.action, rec.reward, &mut grads)?;
        }
    }
    Ok(grads)
}

/// Held-out graphs evaluated during training under one label.
#[derive(Clone, Debug)]
pub struct EvalBucket {
    pub name: String,
    pub graphs: Vec<DagGraph>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    /// Number of updates applied before this evaluation.
    pub iteration: usize,
    /// Mean makespan per bucket after adding `edges` edges by beam search.
    pub eval: Vec<f64>,
}

/// Mean makespan over `graphs` after beam-adding `edges` edges.
pub fn evaluate(
    model: &EdgeModel,
    graphs: &[DagGraph],
    rule: &PriorityRule,
    edges: usize,
    beam: usize,
) -> Result<f64, TrainError> {
    let mut total = 0.0;
    for g in graphs {
        let out = infer_edges(model, g, edges, beam)?;
        total += makespan(&out.graph, rule)?;
    }
    Ok(total / graphs.len().max(1) as f64)
}

fn eval_row(
    model: &EdgeModel,
    iteration: usize,
    eval: &[EvalBucket],
    cfg: &TrainConfig,
) -> Result<LogRow, TrainError> {
    let eval = eval
        .iter()
        .map(|b| evaluate(model, &b.graphs, &cfg.rule, cfg.edges, cfg.eval_beam))
        .collect::<Result<_, _>>()?;
    Ok(LogRow { iteration, eval })
}

/// Runs `cfg.iterations` updates on `model` in place and returns the
/// evaluation log (first row before any update, then every `eval_every`
/// iterations and after the last one).
pub fn train(
    model: &mut EdgeModel,
    data: &[DagGraph],
    eval: &[EvalBucket],
    cfg: &TrainConfig,
) -> Result<Vec<LogRow>, TrainError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log = Vec::new();
    let logging = cfg.eval_every > 0 && !eval.is_empty();
    if logging {
        log.push(eval_row(model, 0, eval, cfg)?);
    }
    for it in 1..=cfg.iterations {
        let k = cfg.dag_count.sample(&mut rng);
        let picked: Vec<DagGraph> = (0..k)
            .map(|_| data.choose(&mut rng).unwrap().clone())
            .collect();
        let g = merge_dags(&picked)?;
        let mut batch = rollout(
            model,
            &g,
            cfg.rollouts,
            cfg.edges,
            &cfg.rule,
            cfg.epsilon,
            &mut rng,
        )?;
        adjust_rewards(&mut batch.rollouts, cfg.gamma, batch.t0);
        let mut grads = policy_gradient(model, &batch.rollouts)?;
        if let Some(max) = cfg.max_grad_norm {
            clip_grad_norm(&mut grads, max);
        }
        let store = model.params_mut();
        store.accumulate(&grads);
        store.sgd_step(cfg.learning_rate);
        if !store.all_finite() {
            return Err(TrainError::Diverged { iteration: it });
        }
        if logging && (it % cfg.eval_every == 0 || it == cfg.iterations) {
            log.push(eval_row(model, it, eval, cfg)?);
        }
    }
    Ok(log)
}

/// Writes `iteration,<bucket>...` CSV.
pub fn write_log_csv(
    out: impl Write,
    buckets: &[String],
    rows: &[LogRow],
) -> Result<(), TrainError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["iteration".to_string()];
    header.extend(buckets.iter().cloned());
    w.write_record(&header)?;
    for row in rows {
        let mut rec = vec![row.iteration.to_string()];
        rec.extend(row.eval.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
