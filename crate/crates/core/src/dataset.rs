//! Synthetic query-plan-like workloads: small random DAGs with long-tailed or
//! uniform runtimes and resources scaled to a fixed peak demand, plus merged
//! test buckets and a manifest describing what was written where.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dag::io::{load_dags, save_dags};
use crate::dag::{merge_dags, DagError, DagGraph};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid generator config: {0}")]
    Config(String),
    #[error(transparent)]
    Dag(#[from] DagError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("manifest: {0}")]
    Manifest(#[from] serde_json::Error),
}

/// Synthetic stage runtimes in seconds. Hand-written to look like a long-tailed
/// profile of analytical query stages; not measured from any real system.
pub const EMPIRICAL_RUNTIMES: [f64; 40] = [
    0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 1.1, 1.2, 1.4, 1.5, 1.7, 1.9, 2.1, 2.4, 2.7, 3.0, 3.4, 3.8,
    4.3, 4.8, 5.4, 6.1, 6.9, 7.8, 8.8, 9.9, 11.2, 12.6, 14.2, 16.0, 18.1, 20.4, 23.0, 26.0, 29.3,
    33.1, 40.2, 51.7, 68.0,
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuntimeDist {
    /// Uniform draw from [`EMPIRICAL_RUNTIMES`].
    Empirical,
    /// Uniform on (0, 1].
    Uniform,
}

impl RuntimeDist {
    pub fn sample(self, rng: &mut impl Rng) -> f64 {
        match self {
            RuntimeDist::Empirical => {
                EMPIRICAL_RUNTIMES[rng.random_range(0..EMPIRICAL_RUNTIMES.len())]
            }
            RuntimeDist::Uniform => 1.0 - rng.random::<f64>(),
        }
    }

    pub fn cdf(self, x: f64) -> f64 {
        match self {
            RuntimeDist::Empirical => {
                let below = EMPIRICAL_RUNTIMES.iter().filter(|&&v| v <= x).count();
                below as f64 / EMPIRICAL_RUNTIMES.len() as f64
            }
            RuntimeDist::Uniform => x.clamp(0.0, 1.0),
        }
    }
}

impl std::str::FromStr for RuntimeDist {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "empirical" => Ok(RuntimeDist::Empirical),
            "uniform" => Ok(RuntimeDist::Uniform),
            other => Err(format!(
                "unknown runtime distribution '{other}' (expected empirical or uniform)"
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub min_nodes: usize,
    pub max_nodes: usize,
    /// Largest node resource as a fraction of capacity.
    pub resource_dist: f64,
    pub runtime: RuntimeDist,
    /// Expected out-degree, including the spanning edges.
    pub out_degree: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            min_nodes: 2,
            max_nodes: 18,
            resource_dist: 1.0,
            runtime: RuntimeDist::Empirical,
            out_degree: 1.5,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.min_nodes == 0 || self.min_nodes > self.max_nodes {
            return Err(DatasetError::Config(
                "need 1 <= min_nodes <= max_nodes".into(),
            ));
        }
        if !(self.resource_dist > 0.0 && self.resource_dist <= 1.0) {
            return Err(DatasetError::Config(
                "resource distribution must lie in (0, 1]".into(),
            ));
        }
        if !(self.out_degree.is_finite() && self.out_degree >= 0.0) {
            return Err(DatasetError::Config(
                "out-degree must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Random DAG: nodes get a random rank order, each node after the first hangs
/// off a random earlier one (weak connectivity), and further lower-to-higher
/// rank edges are added to reach the configured density. Node ids are a
/// shuffle of the ranks, so id order says nothing about precedence.
pub fn generate_dag(rng: &mut impl Rng, cfg: &GenConfig) -> Result<DagGraph, DatasetError> {
    cfg.validate()?;
    let n = rng.random_range(cfg.min_nodes..=cfg.max_nodes);
    let mut id_of_rank: Vec<usize> = (0..n).collect();
    id_of_rank.shuffle(rng);

    let mut edge_set = vec![vec![false; n]; n];
    for k in 1..n {
        edge_set[rng.random_range(0..k)][k] = true;
    }
    let pairs = n * (n - 1) / 2;
    let spare = pairs - n.saturating_sub(1);
    if spare > 0 {
        let wanted = (cfg.out_degree * n as f64 - (n - 1) as f64).max(0.0);
        let p = (wanted / spare as f64).min(1.0);
        for (a, row) in edge_set.iter_mut().enumerate() {
            for cell in row.iter_mut().skip(a + 1) {
                if !*cell && rng.random_bool(p) {
                    *cell = true;
                }
            }
        }
    }
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if edge_set[a][b] {
                edges.push((id_of_rank[a], id_of_rank[b]));
            }
        }
    }
    edges.sort_unstable();

    let runtimes: Vec<f64> = (0..n).map(|_| cfg.runtime.sample(rng)).collect();
    let raw: Vec<f64> = (0..n).map(|_| 1.0 - rng.random::<f64>()).collect();
    let peak = raw.iter().copied().fold(0.0, f64::max);
    let tasks: Vec<(f64, f64)> = runtimes
        .into_iter()
        .zip(raw)
        .map(|(t, r)| {
            (
                t,
                if r == peak {
                    cfg.resource_dist
                } else {
                    cfg.resource_dist * r / peak
                },
            )
        })
        .collect();
    Ok(DagGraph::from_tasks(&tasks, &edges)?)
}

pub fn generate_dags(
    rng: &mut impl Rng,
    cfg: &GenConfig,
    count: usize,
) -> Result<Vec<DagGraph>, DatasetError> {
    (0..count).map(|_| generate_dag(rng, cfg)).collect()
}

/// Merged instances of `size` DAGs each.
#[derive(Clone, Debug)]
pub struct TestBucket {
    pub size: usize,
    pub graphs: Vec<DagGraph>,
}

pub const DEFAULT_SIZES: [usize; 5] = [5, 10, 20, 50, 100];

/// `per_size` merged instances for every requested size.
pub fn build_testsets(
    rng: &mut impl Rng,
    cfg: &GenConfig,
    sizes: &[usize],
    per_size: usize,
) -> Result<Vec<TestBucket>, DatasetError> {
    sizes
        .iter()
        .map(|&size| {
            let graphs = (0..per_size)
                .map(|_| Ok(merge_dags(&generate_dags(rng, cfg, size)?)?))
                .collect::<Result<_, DatasetError>>()?;
            Ok(TestBucket { size, graphs })
        })
        .collect()
}

/// Largest gap between the empirical CDF of `samples` and `dist`'s CDF,
/// checked on both sides of every sample point.
pub fn ks_distance(samples: &[f64], dist: RuntimeDist) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    let mut i = 0;
    while i < xs.len() {
        let x = xs[i];
        let mut j = i;
        while j < xs.len() && xs[j] == x {
            j += 1;
        }
        let f = dist.cdf(x);
        let left = match dist {
            RuntimeDist::Uniform => f,
            RuntimeDist::Empirical => dist.cdf(x - 1e-12),
        };
        d = d
            .max((j as f64 / n - f).abs())
            .max((i as f64 / n - left).abs());
        i = j;
    }
    d
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitEntry {
    pub name: String,
    /// Relative to the manifest's directory.
    pub path: PathBuf,
    pub count: usize,
    /// DAGs merged per graph; 1 for the unmerged training split.
    pub merged: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub config: GenConfig,
    pub splits: Vec<SplitEntry>,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn split(&self, name: &str) -> Option<&SplitEntry> {
        self.splits.iter().find(|s| s.name == name)
    }
}

/// Writes `train.jsonl`, one `test_<size>.jsonl` per size, and
/// `manifest.json` into `dir`.
pub fn write_dataset(
    dir: impl AsRef<Path>,
    rng: &mut impl Rng,
    seed: u64,
    cfg: &GenConfig,
    train_count: usize,
    sizes: &[usize],
    per_size: usize,
) -> Result<Manifest, DatasetError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut splits = Vec::new();
    let train = generate_dags(rng, cfg, train_count)?;
    save_dags(dir.join("train.jsonl"), &train)?;
    splits.push(SplitEntry {
        name: "train".into(),
        path: "train.jsonl".into(),
        count: train.len(),
        merged: 1,
    });
    for bucket in build_testsets(rng, cfg, sizes, per_size)? {
        let file = format!("test_{}.jsonl", bucket.size);
        save_dags(dir.join(&file), &bucket.graphs)?;
        splits.push(SplitEntry {
            name: format!("test_{}", bucket.size),
            path: file.into(),
            count: bucket.graphs.len(),
            merged: bucket.size,
        });
    }
    let manifest = Manifest {
        seed,
        config: cfg.clone(),
        splits,
    };
    manifest.save(dir.join("manifest.json"))?;
    Ok(manifest)
}

/// Graphs of the split called `name` in `<dir>/manifest.json`.
pub fn load_split(dir: impl AsRef<Path>, name: &str) -> Result<Vec<DagGraph>, DatasetError> {
    let dir = dir.as_ref();
    let manifest = Manifest::load(dir.join("manifest.json"))?;
    let entry = manifest
        .split(name)
        .ok_or_else(|| DatasetError::Config(format!("no split named '{name}'")))?;
    Ok(load_dags(dir.join(&entry.path))?)
}

/// Every merged split of a dataset directory, in manifest order.
pub fn load_test_buckets(dir: impl AsRef<Path>) -> Result<Vec<TestBucket>, DatasetError> {
    let dir = dir.as_ref();
    let manifest = Manifest::load(dir.join("manifest.json"))?;
    manifest
        .splits
        .iter()
        .filter(|s| s.name.starts_with("test_"))
        .map(|s| {
            Ok(TestBucket {
                size: s.merged,
                graphs: load_dags(dir.join(&s.path))?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn weakly_connected(g: &DagGraph) -> bool {
        let mut seen = vec![false; g.len()];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &w in g.children(v).iter().chain(g.parents(v)) {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    #[test]
    fn generated_graphs_honor_the_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for d in [1.0, 2.0 / 3.0, 1.0 / 3.0] {
            let cfg = GenConfig {
                resource_dist: d,
                ..Default::default()
            };
            for _ in 0..200 {
                let g = generate_dag(&mut rng, &cfg).unwrap();
                assert!((2..=18).contains(&g.len()));
                assert!(g.topological_order().is_some());
                assert!(weakly_connected(&g));
                let peak = g.nodes().iter().map(|n| n.resource).fold(0.0, f64::max);
                assert_eq!(peak, d);
                assert!(g
                    .nodes()
                    .iter()
                    .all(|n| n.resource > 0.0 && n.runtime > 0.0));
            }
        }
    }

    #[test]
    fn density_tracks_out_degree() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = GenConfig {
            min_nodes: 18,
            max_nodes: 18,
            ..Default::default()
        };
        let edges: usize = (0..300)
            .map(|_| generate_dag(&mut rng, &cfg).unwrap().edge_count())
            .sum();
        let per_node = edges as f64 / (300.0 * 18.0);
        assert!((per_node - 1.5).abs() < 0.05, "{per_node}");
        let sparse = GenConfig {
            out_degree: 0.0,
            ..cfg
        };
        assert_eq!(generate_dag(&mut rng, &sparse).unwrap().edge_count(), 17);
    }

    #[test]
    fn runtime_samples_match_their_distribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        // 1.63 / sqrt(n) is the 1% critical value of the KS statistic
        let crit = 1.63 / 100.0;
        for dist in [RuntimeDist::Empirical, RuntimeDist::Uniform] {
            let xs: Vec<f64> = (0..10_000).map(|_| dist.sample(&mut rng)).collect();
            assert!(ks_distance(&xs, dist) < crit, "{dist:?}");
        }
        // and the statistic does notice a wrong distribution
        let xs: Vec<f64> = (0..10_000)
            .map(|_| RuntimeDist::Uniform.sample(&mut rng))
            .collect();
        assert!(ks_distance(&xs, RuntimeDist::Empirical) > 0.5);
        assert!(xs.iter().all(|&x| x > 0.0 && x <= 1.0));
    }

    #[test]
    fn ks_distance_hand_values() {
        assert_eq!(ks_distance(&[0.5], RuntimeDist::Uniform), 0.5);
        assert!((ks_distance(&[0.25, 0.75], RuntimeDist::Uniform) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn testsets_are_reproducible_and_sized() {
        let cfg = GenConfig::default();
        let build = |seed| {
            build_testsets(&mut ChaCha8Rng::seed_from_u64(seed), &cfg, &[5, 10], 10).unwrap()
        };
        let (a, b) = (build(3), build(3));
        assert_eq!(a.len(), 2);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.graphs.len(), 10);
            assert_eq!(x.graphs, y.graphs);
            for g in &x.graphs {
                assert_eq!(g.virtual_root(), Some(0));
                assert_eq!(g.children(0).len(), x.size);
            }
        }
        // merged node count = sum of parts + 1
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let parts = generate_dags(&mut rng, &cfg, 5).unwrap();
        let total: usize = parts.iter().map(DagGraph::len).sum();
        assert_eq!(merge_dags(&parts).unwrap().len(), total + 1);
    }

    #[test]
    fn written_dataset_round_trips() {
        let dir = std::env::temp_dir().join(format!("dagsched-ds-{}", std::process::id()));
        let cfg = GenConfig {
            runtime: RuntimeDist::Uniform,
            ..Default::default()
        };
        let m = write_dataset(
            &dir,
            &mut ChaCha8Rng::seed_from_u64(5),
            5,
            &cfg,
            20,
            &[5],
            3,
        )
        .unwrap();
        assert_eq!(Manifest::load(dir.join("manifest.json")).unwrap(), m);
        let test = crate::dag::io::load_dags(dir.join(&m.split("test_5").unwrap().path)).unwrap();
        assert_eq!(test.len(), 3);
        // the training split is drawn first, so regenerate it before comparing
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let train = generate_dags(&mut rng, &cfg, 20).unwrap();
        assert_eq!(
            crate::dag::io::load_dags(dir.join("train.jsonl")).unwrap(),
            train
        );
        assert_eq!(
            build_testsets(&mut rng, &cfg, &[5], 3).unwrap()[0].graphs,
            test
        );
        assert_eq!(load_split(&dir, "train").unwrap(), train);
        let buckets = load_test_buckets(&dir).unwrap();
        assert_eq!(buckets.len(), 1);
        assert_eq!((buckets[0].size, &buckets[0].graphs), (5, &test));
        assert!(load_split(&dir, "test_7").is_err());
        std::fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn bad_configs_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for cfg in [
            GenConfig {
                min_nodes: 5,
                max_nodes: 4,
                ..Default::default()
            },
            GenConfig {
                resource_dist: 0.0,
                ..Default::default()
            },
            GenConfig {
                resource_dist: 1.5,
                ..Default::default()
            },
        ] {
            assert!(matches!(
                generate_dag(&mut rng, &cfg),
                Err(DatasetError::Config(_))
            ));
        }
    }
}
