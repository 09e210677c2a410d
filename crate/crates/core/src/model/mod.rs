//! The edge-adding policy: a message-passing encoder shared by two residual
//! scoring networks, one choosing the start of a new edge and one choosing its
//! end given the start. Both distributions are softmaxes over all nodes with
//! conflicting nodes masked to zero, so a decision costs O(n) scores.

mod gnn;
mod policy;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dag::{DagError, DagGraph, EdgeAction, NodeId};
use crate::nn::{
    masked_softmax, GradBuffer, NnError, ParamId, ParamRecord, ParamStore, Tape, Tensor2, Var,
};

pub use gnn::{encode_features, Embeddings, GnnEncoder};
pub use policy::PolicyNet;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("no legal action")]
    NoAction,
    #[error("action {0} is outside the policy support")]
    OutsideSupport(EdgeAction),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Dag(#[from] DagError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Embedding width, constant across the transform and every hop.
    pub embed_width: usize,
    pub transform_layers: usize,
    pub hops: usize,
    pub policy_width: usize,
    pub residual_blocks: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_width: 64,
            transform_layers: 2,
            hops: 3,
            policy_width: 64,
            residual_blocks: 2,
        }
    }
}

/// Every legal candidate with its probability, ascending by id.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionDistribution {
    pub candidate_ids: Vec<NodeId>,
    pub probs: Vec<f64>,
}

impl ActionDistribution {
    fn from_full(probs: &[f64], mask: &[bool]) -> Self {
        let (candidate_ids, probs) = (0..probs.len())
            .filter(|&v| mask[v])
            .map(|v| (v, probs[v]))
            .unzip();
        Self {
            candidate_ids,
            probs,
        }
    }

    pub fn prob_of(&self, v: NodeId) -> Option<f64> {
        self.candidate_ids
            .iter()
            .position(|&c| c == v)
            .map(|k| self.probs[k])
    }

    /// Highest-probability candidate, lower id on ties.
    pub fn argmax(&self) -> Option<(NodeId, f64)> {
        self.candidate_ids.iter().zip(&self.probs).fold(
            None,
            |best: Option<(NodeId, f64)>, (&v, &p)| match best {
                Some((_, bp)) if bp >= p => best,
                _ => Some((v, p)),
            },
        )
    }
}

fn start_mask(g: &DagGraph) -> Vec<bool> {
    let mut mask = vec![false; g.len()];
    for v in g.qualified_starting_nodes() {
        mask[v] = true;
    }
    mask
}

fn end_mask(g: &DagGraph, start: NodeId) -> Result<Vec<bool>, DagError> {
    let mut mask = vec![false; g.len()];
    for v in g.qualified_ending_nodes(start)? {
        mask[v] = true;
    }
    Ok(mask)
}

#[derive(Clone, Debug)]
pub struct EdgeModel {
    config: ModelConfig,
    store: ParamStore,
    gnn: GnnEncoder,
    start_policy: PolicyNet,
    end_policy: PolicyNet,
}

/// Forward state for one graph: a tape holding the embeddings, onto which
/// either policy can be evaluated.
struct Forward<'m> {
    model: &'m EdgeModel,
    tape: Tape,
    node_ems: Var,
    graph_em: Var,
    n: usize,
}

impl<'m> Forward<'m> {
    fn from_graph(model: &'m EdgeModel, g: &DagGraph) -> Result<Self, NnError> {
        let mut tape = Tape::new();
        let vars = model
            .gnn
            .forward(&mut tape, &model.store, g, model.config.hops)?;
        Ok(Self {
            model,
            tape,
            node_ems: vars.node_ems,
            graph_em: vars.graph_em,
            n: g.len(),
        })
    }

    fn from_embeddings(model: &'m EdgeModel, ems: &Embeddings) -> Self {
        let mut tape = Tape::new();
        let node_ems = tape.input(ems.node_ems.clone());
        let graph_em = tape.input(ems.graph_em.clone());
        Self {
            model,
            tape,
            node_ems,
            graph_em,
            n: ems.node_ems.rows(),
        }
    }

    fn start_scores(&mut self) -> Result<Var, NnError> {
        let g_rep = self.tape.repeat_row(self.graph_em, self.n)?;
        let x = self.tape.concat_cols(&[g_rep, self.node_ems])?;
        self.model
            .start_policy
            .scores(&mut self.tape, &self.model.store, x)
    }

    fn end_scores(&mut self, start: NodeId) -> Result<Var, NnError> {
        let g_rep = self.tape.repeat_row(self.graph_em, self.n)?;
        let s_row = self.tape.gather_row(self.node_ems, start)?;
        let s_rep = self.tape.repeat_row(s_row, self.n)?;
        let x = self.tape.concat_cols(&[g_rep, s_rep, self.node_ems])?;
        self.model
            .end_policy
            .scores(&mut self.tape, &self.model.store, x)
    }

    fn distribution(&self, scores: Var, mask: &[bool]) -> Result<ActionDistribution, ModelError> {
        match masked_softmax(self.tape.value(scores).data(), mask) {
            Ok(p) => Ok(ActionDistribution::from_full(&p, mask)),
            Err(NnError::NoAction) => Err(ModelError::NoAction),
            Err(e) => Err(e.into()),
        }
    }

    /// Returns the scalar `log p(start) + log p(end | start)` on the tape.
    fn joint_log_prob(&mut self, g: &DagGraph, a: EdgeAction) -> Result<Var, ModelError> {
        if g.is_conflicting(a)? {
            return Err(ModelError::OutsideSupport(a));
        }
        let s1 = self.start_scores()?;
        let lp1 = self
            .tape
            .masked_log_softmax_at(s1, &start_mask(g), a.start)?;
        let s2 = self.end_scores(a.start)?;
        let lp2 = self
            .tape
            .masked_log_softmax_at(s2, &end_mask(g, a.start)?, a.end)?;
        Ok(self.tape.add(lp1, lp2)?)
    }
}

impl EdgeModel {
    pub fn new(config: ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = config.embed_width;
        let gnn = GnnEncoder::new(
            &mut store,
            d,
            config.transform_layers,
            config.hops,
            &mut rng,
        );
        let start_policy = PolicyNet::new(
            &mut store,
            "start",
            2 * d,
            config.policy_width,
            config.residual_blocks,
            &mut rng,
        );
        let end_policy = PolicyNet::new(
            &mut store,
            "end",
            3 * d,
            config.policy_width,
            config.residual_blocks,
            &mut rng,
        );
        Self {
            config,
            store,
            gnn,
            start_policy,
            end_policy,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Parameter ids whose names start with `prefix` (`gnn.`, `start.`, `end.`).
    pub fn param_group(&self, prefix: &str) -> Vec<ParamId> {
        self.store
            .ids()
            .filter(|&id| self.store.name(id).starts_with(prefix))
            .collect()
    }

    /// A copy evaluated with different parameter values (same shapes).
    pub fn with_params(&self, store: ParamStore) -> Self {
        Self {
            store,
            ..self.clone()
        }
    }

    pub fn embed(&self, g: &DagGraph) -> Result<Embeddings, ModelError> {
        Ok(self.gnn.embed(&self.store, g, self.config.hops)?)
    }

    pub fn start_node_distribution(
        &self,
        g: &DagGraph,
        ems: &Embeddings,
    ) -> Result<ActionDistribution, ModelError> {
        let mut fwd = Forward::from_embeddings(self, ems);
        let scores = fwd.start_scores()?;
        fwd.distribution(scores, &start_mask(g))
    }

    pub fn end_node_distribution(
        &self,
        g: &DagGraph,
        ems: &Embeddings,
        start: NodeId,
    ) -> Result<ActionDistribution, ModelError> {
        let mask = end_mask(g, start)?;
        let mut fwd = Forward::from_embeddings(self, ems);
        let scores = fwd.end_scores(start)?;
        fwd.distribution(scores, &mask)
    }

    pub fn joint_log_prob(
        &self,
        g: &DagGraph,
        ems: &Embeddings,
        a: EdgeAction,
    ) -> Result<f64, ModelError> {
        let mut fwd = Forward::from_embeddings(self, ems);
        let out = fwd.joint_log_prob(g, a)?;
        Ok(fwd.tape.value(out).data()[0])
    }

    /// Computes `log p(a | g)` from the raw graph and adds
    /// `scale · ∇ log p(a | g)` for every parameter into `grads`.
    pub fn accumulate_log_prob_gradient(
        &self,
        g: &DagGraph,
        a: EdgeAction,
        scale: f64,
        grads: &mut GradBuffer,
    ) -> Result<f64, ModelError> {
        let mut fwd = Forward::from_graph(self, g)?;
        let out = fwd.joint_log_prob(g, a)?;
        fwd.tape
            .backward(out, Tensor2::row_vector(vec![scale]), grads)?;
        Ok(fwd.tape.value(out).data()[0])
    }

    /// `log p(a | g)` evaluated end to end from the graph.
    pub fn log_prob(&self, g: &DagGraph, a: EdgeAction) -> Result<f64, ModelError> {
        let mut fwd = Forward::from_graph(self, g)?;
        let out = fwd.joint_log_prob(g, a)?;
        Ok(fwd.tape.value(out).data()[0])
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            params: self.store.to_records(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, ModelError> {
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                ckpt.format, ckpt.version
            )));
        }
        let mut model = EdgeModel::new(ckpt.config.clone(), 0);
        model.store.load_records(&ckpt.params)?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let text = serde_json::to_string(&self.to_checkpoint())
            .map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path)?;
        let ckpt: Checkpoint =
            serde_json::from_str(&text).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        Self::from_checkpoint(&ckpt)
    }
}

pub const CHECKPOINT_FORMAT: &str = "dagsched-model";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Versioned parameter dump: name → shape + flat row-major values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub params: Vec<ParamRecord>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dag::merge_dags;
    use crate::nn::{finite_difference_gradient, max_relative_error};
    use rand::Rng;

    fn small_config() -> ModelConfig {
        ModelConfig {
            embed_width: 6,
            transform_layers: 2,
            hops: 2,
            policy_width: 6,
            residual_blocks: 2,
        }
    }

    fn zero_group(model: &mut EdgeModel, prefix: &str) {
        for id in model.param_group(prefix) {
            model.params_mut().value_mut(id).fill(0.0);
        }
    }

    fn sample_graph(seed: u64) -> DagGraph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let parts: Vec<_> = (0..3)
            .map(|_| {
                let n = rng.random_range(1..=3);
                let tasks: Vec<_> = (0..n)
                    .map(|_| (rng.random_range(0.1..3.0), rng.random_range(0.1..1.0)))
                    .collect();
                let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
                DagGraph::from_tasks(&tasks, &edges).unwrap()
            })
            .collect();
        merge_dags(&parts).unwrap()
    }

    #[test]
    fn single_candidate_gets_all_mass() {
        let g = merge_dags(&[
            DagGraph::from_tasks(&[(1.0, 0.5)], &[]).unwrap(),
            DagGraph::from_tasks(&[(2.0, 0.5)], &[]).unwrap(),
        ])
        .unwrap();
        let model = EdgeModel::new(small_config(), 1);
        let ems = model.embed(&g).unwrap();
        let d = model.end_node_distribution(&g, &ems, 1).unwrap();
        assert_eq!(d.candidate_ids, vec![2]);
        assert_eq!(d.probs, vec![1.0]);
        // start distribution over two candidates; end has a single option
        let lp = model
            .joint_log_prob(&g, &ems, EdgeAction::new(2, 1))
            .unwrap();
        let p1 = model
            .start_node_distribution(&g, &ems)
            .unwrap()
            .prob_of(2)
            .unwrap();
        assert!((lp - p1.ln()).abs() < 1e-12);
    }

    #[test]
    fn zeroed_heads_give_uniform_distributions() {
        let mut model = EdgeModel::new(small_config(), 2);
        zero_group(&mut model, "start.");
        zero_group(&mut model, "end.");
        // four independent jobs -> 4 starts, 3 ends each
        let parts: Vec<_> = (0..4)
            .map(|k| DagGraph::from_tasks(&[(1.0 + k as f64, 0.5)], &[]).unwrap())
            .collect();
        let g = merge_dags(&parts).unwrap();
        let ems = model.embed(&g).unwrap();
        let d1 = model.start_node_distribution(&g, &ems).unwrap();
        assert_eq!(d1.candidate_ids, vec![1, 2, 3, 4]);
        assert!(d1.probs.iter().all(|&p| (p - 0.25).abs() < 1e-15));
        let lp = model
            .joint_log_prob(&g, &ems, EdgeAction::new(3, 1))
            .unwrap();
        assert!((lp - (1.0f64 / 12.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn supports_match_pair_enumeration() {
        let model = EdgeModel::new(small_config(), 3);
        for seed in 0..10 {
            let g = sample_graph(seed);
            let ems = model.embed(&g).unwrap();
            let legal = g.legal_actions();
            let starts: Vec<_> = {
                let mut s: Vec<_> = legal.iter().map(|a| a.start).collect();
                s.dedup();
                s
            };
            match model.start_node_distribution(&g, &ems) {
                Ok(d) => assert_eq!(d.candidate_ids, starts),
                Err(ModelError::NoAction) => assert!(starts.is_empty()),
                Err(e) => panic!("{e}"),
            }
            for &s in &starts {
                let ends: Vec<_> = legal
                    .iter()
                    .filter(|a| a.start == s)
                    .map(|a| a.end)
                    .collect();
                let d = model.end_node_distribution(&g, &ems, s).unwrap();
                assert_eq!(d.candidate_ids, ends);
                assert!(d.probs.iter().all(|&p| p > 0.0));
            }
        }
    }

    #[test]
    fn joint_probability_sums_to_one_over_legal_actions() {
        let model = EdgeModel::new(small_config(), 4);
        let g = sample_graph(5);
        let ems = model.embed(&g).unwrap();
        let total: f64 = g
            .legal_actions()
            .into_iter()
            .map(|a| model.joint_log_prob(&g, &ems, a).unwrap().exp())
            .sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn illegal_action_is_rejected() {
        let model = EdgeModel::new(small_config(), 4);
        let g = sample_graph(5);
        let ems = model.embed(&g).unwrap();
        assert!(matches!(
            model.joint_log_prob(&g, &ems, EdgeAction::new(0, 1)),
            Err(ModelError::OutsideSupport(_))
        ));
    }

    #[test]
    fn empty_support_is_no_action() {
        let chain =
            merge_dags(&[DagGraph::from_tasks(&[(1.0, 0.5); 3], &[(0, 1), (1, 2)]).unwrap()])
                .unwrap();
        let model = EdgeModel::new(small_config(), 4);
        let ems = model.embed(&chain).unwrap();
        assert!(matches!(
            model.start_node_distribution(&chain, &ems),
            Err(ModelError::NoAction)
        ));
    }

    #[test]
    fn log_prob_gradient_matches_finite_differences() {
        let model = EdgeModel::new(small_config(), 6);
        let g = sample_graph(7);
        let a = g.legal_actions()[1];
        let mut grads = model.params().zero_buffer();
        model
            .accumulate_log_prob_gradient(&g, a, 1.0, &mut grads)
            .unwrap();
        let numeric = finite_difference_gradient(model.params(), 1e-6, |s| {
            model.with_params(s.clone()).log_prob(&g, a).unwrap()
        });
        // below 1e-5 the difference quotient is dominated by rounding noise
        let err = max_relative_error(&grads, &numeric, 1e-5);
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let model = EdgeModel::new(small_config(), 8);
        let dir = std::env::temp_dir().join(format!("dagsched-ckpt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("m.json");
        model.save(&path).unwrap();
        let back = EdgeModel::load(&path).unwrap();
        for id in model.params().ids() {
            let (a, b) = (
                model.params().value(id).data(),
                back.params().value(id).data(),
            );
            assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        std::fs::remove_dir_all(dir).unwrap();
    }
}
