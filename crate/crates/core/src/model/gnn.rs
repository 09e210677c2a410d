//! Node and graph embeddings by message passing over the edge-reversed DAG:
//! every node aggregates the embeddings of its children in the job graph.

use std::rc::Rc;

use rand::Rng;

use crate::dag::DagGraph;
use crate::nn::{Activation, Dense, NnError, ParamStore, Tape, Tensor2, Var};

/// Value-only embeddings of one graph.
#[derive(Clone, Debug, PartialEq)]
pub struct Embeddings {
    /// One row per node.
    pub node_ems: Tensor2,
    /// Column mean of `node_ems`.
    pub graph_em: Tensor2,
}

/// `(runtime / max runtime, resource)` per node; the virtual root is `(0, 0)`.
pub fn encode_features(g: &DagGraph) -> Tensor2 {
    let max_runtime = g.nodes().iter().map(|n| n.runtime).fold(0.0, f64::max);
    let mut out = Tensor2::zeros(g.len(), 2);
    for node in g.nodes() {
        if max_runtime > 0.0 {
            out.set(node.id, 0, node.runtime / max_runtime);
        }
        out.set(node.id, 1, node.resource);
    }
    out
}

#[derive(Clone, Debug)]
pub struct GnnEncoder {
    transform: Vec<Dense>,
    hops: Vec<Dense>,
}

pub(crate) struct EmbedVars {
    pub node_ems: Var,
    pub graph_em: Var,
}

impl GnnEncoder {
    pub fn new(
        store: &mut ParamStore,
        width: usize,
        transform_layers: usize,
        hops: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let transform = (0..transform_layers)
            .map(|l| {
                let fan_in = if l == 0 { 2 } else { width };
                Dense::new(
                    store,
                    &format!("gnn.transform{l}"),
                    fan_in,
                    width,
                    Activation::Relu,
                    rng,
                )
            })
            .collect();
        let hops = (0..hops)
            .map(|h| {
                Dense::new(
                    store,
                    &format!("gnn.hop{h}"),
                    2 * width,
                    width,
                    Activation::Relu,
                    rng,
                )
            })
            .collect();
        Self { transform, hops }
    }

    pub fn max_hops(&self) -> usize {
        self.hops.len()
    }

    pub(crate) fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        g: &DagGraph,
        hops: usize,
    ) -> Result<EmbedVars, NnError> {
        if hops > self.hops.len() {
            return Err(NnError::Shape(format!(
                "{hops} hops requested, {} configured",
                self.hops.len()
            )));
        }
        let mut e = tape.input(encode_features(g));
        for layer in &self.transform {
            e = layer.forward(tape, store, e)?;
        }
        let children: Rc<Vec<Vec<usize>>> =
            Rc::new((0..g.len()).map(|v| g.children(v).to_vec()).collect());
        for layer in &self.hops[..hops] {
            let agg = tape.neighbor_sum(e, Rc::clone(&children))?;
            let joined = tape.concat_cols(&[e, agg])?;
            e = layer.forward(tape, store, joined)?;
        }
        let graph_em = tape.mean_rows(e);
        Ok(EmbedVars {
            node_ems: e,
            graph_em,
        })
    }

    pub fn embed(
        &self,
        store: &ParamStore,
        g: &DagGraph,
        hops: usize,
    ) -> Result<Embeddings, NnError> {
        let mut tape = Tape::new();
        let vars = self.forward(&mut tape, store, g, hops)?;
        Ok(Embeddings {
            node_ems: tape.value(vars.node_ems).clone(),
            graph_em: tape.value(vars.graph_em).clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dag::merge_dags;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn encoder(width: usize, hops: usize, seed: u64) -> (ParamStore, GnnEncoder) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let enc = GnnEncoder::new(&mut store, width, 2, hops, &mut rng);
        (store, enc)
    }

    fn relu(v: f64) -> f64 {
        v.max(0.0)
    }

    #[test]
    fn features_normalize_runtime() {
        let g = merge_dags(&[DagGraph::from_tasks(&[(2.0, 0.25), (4.0, 0.5)], &[(0, 1)]).unwrap()])
            .unwrap();
        let f = encode_features(&g);
        assert_eq!(f.row(0), &[0.0, 0.0]);
        assert_eq!(f.row(1), &[0.5, 0.25]);
        assert_eq!(f.row(2), &[1.0, 0.5]);
        let zero = DagGraph::from_tasks(&[(0.0, 0.3)], &[]).unwrap();
        assert_eq!(encode_features(&zero).row(0), &[0.0, 0.3]);
    }

    #[test]
    fn zero_hops_is_the_feature_transform() {
        let (store, enc) = encoder(4, 2, 1);
        let g = DagGraph::from_tasks(&[(1.0, 0.5), (3.0, 0.2)], &[(0, 1)]).unwrap();
        let ems = enc.embed(&store, &g, 0).unwrap();
        let mut tape = Tape::new();
        let mut x = tape.input(encode_features(&g));
        for layer in &enc.transform {
            x = layer.forward(&mut tape, &store, x).unwrap();
        }
        assert_eq!(&ems.node_ems, tape.value(x));
        assert!(enc.embed(&store, &g, 3).is_err());
    }

    #[test]
    fn graph_embedding_is_row_mean() {
        let (store, enc) = encoder(3, 2, 2);
        let g = DagGraph::from_tasks(&[(1.0, 0.5), (3.0, 0.2), (2.0, 0.9)], &[(0, 1)]).unwrap();
        let ems = enc.embed(&store, &g, 2).unwrap();
        for c in 0..3 {
            let mean = (0..3).map(|r| ems.node_ems.get(r, c)).sum::<f64>() / 3.0;
            assert!((ems.graph_em.get(0, c) - mean).abs() < 1e-15);
        }
    }

    /// Hand-unrolled message passing with width 1 on the chain a -> b -> c.
    #[test]
    fn chain_matches_manual_unroll() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let enc = GnnEncoder::new(&mut store, 1, 1, 2, &mut rng);
        let set = |store: &mut ParamStore, name: &str, vals: &[f64]| {
            let id = store.id_of(name).unwrap();
            store.value_mut(id).data_mut().copy_from_slice(vals);
        };
        set(&mut store, "gnn.transform0.weight", &[0.5, 2.0]);
        set(&mut store, "gnn.transform0.bias", &[0.1]);
        set(&mut store, "gnn.hop0.weight", &[1.0, 0.5]);
        set(&mut store, "gnn.hop0.bias", &[0.0]);
        set(&mut store, "gnn.hop1.weight", &[0.3, -1.0]);
        set(&mut store, "gnn.hop1.bias", &[0.2]);
        let tasks = [(1.0, 0.2), (2.0, 0.4), (4.0, 0.1)];
        let g = DagGraph::from_tasks(&tasks, &[(0, 1), (1, 2)]).unwrap();

        let e0: Vec<f64> = tasks
            .iter()
            .map(|&(t, r)| relu(0.5 * (t / 4.0) + 2.0 * r + 0.1))
            .collect();
        let child = |e: &[f64], i: usize| if i < 2 { e[i + 1] } else { 0.0 };
        let e1: Vec<f64> = (0..3)
            .map(|i| relu(1.0 * e0[i] + 0.5 * child(&e0, i)))
            .collect();
        let e2: Vec<f64> = (0..3)
            .map(|i| relu(0.3 * e1[i] - 1.0 * child(&e1, i) + 0.2))
            .collect();

        let ems = enc.embed(&store, &g, 2).unwrap();
        for i in 0..3 {
            assert!((ems.node_ems.get(i, 0) - e2[i]).abs() < 1e-15, "node {i}");
        }
    }

    #[test]
    fn leaves_aggregate_nothing() {
        // With the hop weight on the neighbor half zeroed, a leaf's update uses only itself;
        // check the aggregation row for a leaf is zero directly on the tape.
        let (store, enc) = encoder(3, 1, 4);
        let g = DagGraph::from_tasks(&[(1.0, 0.5), (3.0, 0.2)], &[(0, 1)]).unwrap();
        let mut tape = Tape::new();
        let x = tape.input(Tensor2::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let agg = tape
            .neighbor_sum(x, Rc::new(vec![vec![1], vec![]]))
            .unwrap();
        assert_eq!(tape.value(agg).row(1), &[0.0, 0.0, 0.0]);
        assert_eq!(tape.value(agg).row(0), &[4.0, 5.0, 6.0]);
        assert!(enc.embed(&store, &g, 1).unwrap().node_ems.is_finite());
    }

    #[test]
    fn relabeling_permutes_rows() {
        let (store, enc) = encoder(5, 3, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let g = crate::dag::tests::random_dag(&mut rng, 9, 0.3);
            let mut perm: Vec<usize> = (0..g.len()).collect();
            rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
            // node v becomes perm[v]
            let mut tasks = vec![(0.0, 0.0); g.len()];
            for node in g.nodes() {
                tasks[perm[node.id]] = (node.runtime, node.resource);
            }
            let edges: Vec<_> = g.edges().map(|(u, v)| (perm[u], perm[v])).collect();
            let h = DagGraph::from_tasks(&tasks, &edges).unwrap();
            let (a, b) = (
                enc.embed(&store, &g, 3).unwrap(),
                enc.embed(&store, &h, 3).unwrap(),
            );
            for v in 0..g.len() {
                for (x, y) in a.node_ems.row(v).iter().zip(b.node_ems.row(perm[v])) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
            for (x, y) in a.graph_em.data().iter().zip(b.graph_em.data()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identical_components_embed_identically() {
        let (store, enc) = encoder(4, 3, 7);
        let part =
            DagGraph::from_tasks(&[(1.0, 0.3), (2.0, 0.6), (0.5, 0.1)], &[(0, 1), (0, 2)]).unwrap();
        let g = merge_dags(&[part.clone(), part]).unwrap();
        let ems = enc.embed(&store, &g, 3).unwrap();
        for v in 1..=3 {
            assert_eq!(ems.node_ems.row(v), ems.node_ems.row(v + 3));
        }
    }

    #[test]
    fn edits_beyond_the_hop_radius_are_invisible() {
        // chain 0 -> 1 -> 2 -> 3 -> 4; node 0 sees descendants up to `hops` steps away
        let (store, enc) = encoder(4, 2, 8);
        let chain = [(0, 1), (1, 2), (2, 3), (3, 4)];
        let base = [(1.0, 0.3), (2.0, 0.6), (0.5, 0.1), (1.5, 0.4), (4.0, 0.2)];
        let mut edited = base;
        edited[3].1 = 0.9;
        let a = enc
            .embed(&store, &DagGraph::from_tasks(&base, &chain).unwrap(), 2)
            .unwrap();
        let b = enc
            .embed(&store, &DagGraph::from_tasks(&edited, &chain).unwrap(), 2)
            .unwrap();
        assert_eq!(a.node_ems.row(0), b.node_ems.row(0));
        assert_ne!(a.node_ems.row(1), b.node_ems.row(1));
    }
}
