//! Experiment reports: per-bucket makespan tables, the added-edge sweep, and
//! smoothed convergence curves from training logs.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::dag::{DagGraph, NodeId};
use crate::dataset::TestBucket;
use crate::inference::{ensemble_best, InferenceError};
use crate::model::EdgeModel;
use crate::sim::{makespan, PriorityRule, SimError};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("log line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Buckets with more merged DAGs than this get no LP column.
pub const LP_MAX_DAGS: usize = 20;

/// `(base − learned) / base × 100`; zero for an empty baseline.
pub fn reduction_pct(base: f64, learned: f64) -> f64 {
    if base == 0.0 {
        0.0
    } else {
        (base - learned) / base * 100.0
    }
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = xs
        .into_iter()
        .fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TableRow {
    pub label: String,
    /// Mean heuristic makespan.
    pub time: f64,
    /// Mean makespan after the learned edges (ensemble over edge counts).
    pub learn: f64,
    pub reduce_pct: f64,
    pub tetris: f64,
    /// Mean makespan when executing the LP start order.
    pub lp: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResultTable {
    pub rule: String,
    pub rows: Vec<TableRow>,
    /// Unweighted mean of the rows; the reduction is the mean of row reductions.
    pub average: TableRow,
}

/// Start orders read off LP solutions, keyed by `(bucket size, instance index)`.
/// Orders index the graph without its virtual root.
pub type LpOrders = BTreeMap<(usize, usize), Vec<NodeId>>;

fn lp_makespan(g: &DagGraph, order: &[NodeId]) -> Result<f64, SimError> {
    let (stripped, _) = g.without_virtual_root();
    makespan(&stripped, &PriorityRule::FixedOrder(order.to_vec()))
}

/// One row per bucket. Without a model the learned column repeats the
/// baseline. The LP column appears for buckets of at most [`LP_MAX_DAGS`]
/// DAGs whose every instance has an order in `lp`.
pub fn run_table(
    buckets: &[TestBucket],
    rule: &PriorityRule,
    model: Option<&EdgeModel>,
    max_edges: usize,
    beam: usize,
    lp: &LpOrders,
) -> Result<ResultTable, BenchError> {
    let mut rows = Vec::with_capacity(buckets.len());
    for b in buckets {
        let (mut time, mut learn, mut tetris) = (Vec::new(), Vec::new(), Vec::new());
        for g in &b.graphs {
            let base = makespan(g, rule)?;
            time.push(base);
            learn.push(match model {
                Some(m) => ensemble_best(m, g, rule, max_edges, beam)?.makespan,
                None => base,
            });
            tetris.push(makespan(g, &PriorityRule::Tetris)?);
        }
        let lp_col = if b.size <= LP_MAX_DAGS
            && !b.graphs.is_empty()
            && (0..b.graphs.len()).all(|i| lp.contains_key(&(b.size, i)))
        {
            let spans = b
                .graphs
                .iter()
                .enumerate()
                .map(|(i, g)| lp_makespan(g, &lp[&(b.size, i)]))
                .collect::<Result<Vec<_>, _>>()?;
            Some(mean(spans))
        } else {
            None
        };
        let (time, learn) = (mean(time), mean(learn));
        rows.push(TableRow {
            label: b.size.to_string(),
            time,
            learn,
            reduce_pct: reduction_pct(time, learn),
            tetris: mean(tetris),
            lp: lp_col,
        });
    }
    let average = TableRow {
        label: "average".into(),
        time: mean(rows.iter().map(|r| r.time)),
        learn: mean(rows.iter().map(|r| r.learn)),
        reduce_pct: mean(rows.iter().map(|r| r.reduce_pct)),
        tetris: mean(rows.iter().map(|r| r.tetris)),
        lp: if !rows.is_empty() && rows.iter().all(|r| r.lp.is_some()) {
            Some(mean(rows.iter().filter_map(|r| r.lp)))
        } else {
            None
        },
    };
    Ok(ResultTable {
        rule: rule.name().into(),
        rows,
        average,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.2}"))
}

impl ResultTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("rule,size,time,learn,reduce_pct,tetris,lp\n");
        for r in self.rows.iter().chain([&self.average]) {
            let lp = r.lp.map_or(String::new(), |x| x.to_string());
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                self.rule, r.label, r.time, r.learn, r.reduce_pct, r.tetris, lp
            );
        }
        out
    }

    pub fn to_text(&self) -> String {
        let header = ["size", "time", "learn", "reduce%", "tetris", "lp"];
        let mut cells: Vec<[String; 6]> = vec![header.map(String::from)];
        for r in self.rows.iter().chain([&self.average]) {
            cells.push([
                r.label.clone(),
                format!("{:.2}", r.time),
                format!("{:.2}", r.learn),
                format!("{:.2}", r.reduce_pct),
                format!("{:.2}", r.tetris),
                fmt_opt(r.lp),
            ]);
        }
        let widths: Vec<usize> = (0..6)
            .map(|c| cells.iter().map(|row| row[c].len()).max().unwrap())
            .collect();
        let mut out = format!("rule: {}\n", self.rule);
        for row in &cells {
            let line: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(c, s)| {
                    if c == 0 {
                        format!("{s:<w$}", w = widths[c])
                    } else {
                        format!("{s:>w$}", w = widths[c])
                    }
                })
                .collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub size: usize,
    pub baseline: f64,
    /// Mean makespan with exactly `m` edges (fewer if actions ran out), `m = 1..=max`.
    pub per_m: Vec<f64>,
    /// Mean over instances of the best of `0..=max` edges.
    pub ensemble: f64,
}

impl SweepRow {
    pub fn reduction_at(&self, m: usize) -> f64 {
        reduction_pct(self.baseline, self.per_m[m - 1])
    }

    pub fn ensemble_reduction(&self) -> f64 {
        reduction_pct(self.baseline, self.ensemble)
    }
}

/// Reduction for each fixed number of added edges `1..=max_edges`, plus the
/// ensemble, per bucket.
pub fn sweep_edges(
    buckets: &[TestBucket],
    model: &EdgeModel,
    rule: &PriorityRule,
    max_edges: usize,
    beam: usize,
) -> Result<Vec<SweepRow>, BenchError> {
    let mut rows = Vec::new();
    for b in buckets {
        let mut base = Vec::new();
        let mut per_m = vec![Vec::new(); max_edges];
        let mut ens = Vec::new();
        for g in &b.graphs {
            let r = ensemble_best(model, g, rule, max_edges, beam)?;
            base.push(r.baseline);
            for (m, col) in per_m.iter_mut().enumerate() {
                // an exhausted decoding keeps its last graph for larger m
                let k = (m + 1).min(r.per_count.len() - 1);
                col.push(r.per_count[k]);
            }
            ens.push(r.makespan);
        }
        rows.push(SweepRow {
            size: b.size,
            baseline: mean(base),
            per_m: per_m.into_iter().map(mean).collect(),
            ensemble: mean(ens),
        });
    }
    Ok(rows)
}

pub fn sweep_to_csv(rule: &PriorityRule, rows: &[SweepRow]) -> String {
    let mut out = String::from("rule,size,edges,makespan,reduce_pct\n");
    for r in rows {
        let _ = writeln!(out, "{},{},0,{},0", rule.name(), r.size, r.baseline);
        for m in 1..=r.per_m.len() {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                rule.name(),
                r.size,
                m,
                r.per_m[m - 1],
                r.reduction_at(m)
            );
        }
        let _ = writeln!(
            out,
            "{},{},ensemble,{},{}",
            rule.name(),
            r.size,
            r.ensemble,
            r.ensemble_reduction()
        );
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub bucket: String,
    /// `(iteration, trailing mean over the last `window` evaluations)`.
    pub points: Vec<(usize, f64)>,
}

/// Parses a training log (`iteration,<bucket>...`) and smooths each bucket
/// column with a trailing mean over `window` rows.
pub fn convergence_report(log: &str, window: usize) -> Result<Vec<Series>, BenchError> {
    let window = window.max(1);
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(log.as_bytes());
    let err = |line: usize, message: String| BenchError::Parse { line, message };
    let header = rdr.headers().map_err(|e| err(1, e.to_string()))?.clone();
    if header.get(0) != Some("iteration") || header.len() < 2 {
        return Err(err(1, "expected header 'iteration,<bucket>...'".into()));
    }
    let buckets: Vec<String> = header.iter().skip(1).map(String::from).collect();
    let mut iters = Vec::new();
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); buckets.len()];
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| err(line, e.to_string()))?;
        if rec.len() != header.len() {
            return Err(err(
                line,
                format!("expected {} fields, found {}", header.len(), rec.len()),
            ));
        }
        let it: usize = rec[0]
            .trim()
            .parse()
            .map_err(|_| err(line, format!("bad iteration '{}'", &rec[0])))?;
        iters.push(it);
        for (c, col) in cols.iter_mut().enumerate() {
            let v: f64 = rec[c + 1]
                .trim()
                .parse()
                .map_err(|_| err(line, format!("bad value '{}'", &rec[c + 1])))?;
            col.push(v);
        }
    }
    Ok(buckets
        .into_iter()
        .zip(cols)
        .map(|(bucket, col)| {
            let points = iters
                .iter()
                .enumerate()
                .map(|(i, &it)| {
                    let lo = (i + 1).saturating_sub(window);
                    (it, mean(col[lo..=i].iter().copied()))
                })
                .collect();
            Series { bucket, points }
        })
        .collect())
}

pub fn series_to_csv(series: &[Series]) -> String {
    let mut out = String::from("bucket,iteration,makespan\n");
    for s in series {
        for &(it, v) in &s.points {
            let _ = writeln!(out, "{},{},{}", s.bucket, it, v);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dag::merge_dags;
    use crate::dataset::{build_testsets, GenConfig};
    use crate::model::ModelConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn buckets() -> Vec<TestBucket> {
        let cfg = GenConfig {
            max_nodes: 6,
            ..Default::default()
        };
        build_testsets(&mut ChaCha8Rng::seed_from_u64(0), &cfg, &[2, 4], 3).unwrap()
    }

    fn model() -> EdgeModel {
        EdgeModel::new(
            ModelConfig {
                embed_width: 8,
                transform_layers: 1,
                hops: 2,
                policy_width: 8,
                residual_blocks: 1,
            },
            3,
        )
    }

    #[test]
    fn reduction_of_the_first_table_row() {
        assert!((reduction_pct(21.29, 18.81) - 11.65).abs() < 0.005);
        assert_eq!(reduction_pct(0.0, 0.0), 0.0);
    }

    #[test]
    fn average_row_reproduces_published_arithmetic() {
        // first table of the evaluation: SJF and CP rows, buckets 5..100
        let sjf_time = [21.29, 58.66, 87.66, 241.33, 479.54];
        let sjf_reduce = [11.65, 10.23, 7.77, 3.95, 0.28];
        let cp_reduce = [4.66, 3.50, 3.23, 5.92, 4.82];
        assert!((mean(sjf_time) - 177.70).abs() < 0.005);
        assert!((mean(sjf_reduce) - 6.78).abs() < 0.005);
        assert!((mean(cp_reduce) - 4.43).abs() < 0.005);
    }

    #[test]
    fn baseline_only_mode() {
        let t = run_table(
            &buckets(),
            &PriorityRule::Sjf,
            None,
            5,
            10,
            &LpOrders::new(),
        )
        .unwrap();
        for r in t.rows.iter().chain([&t.average]) {
            assert_eq!(r.time, r.learn);
            assert_eq!(r.reduce_pct, 0.0);
            assert_eq!(r.lp, None);
        }
    }

    #[test]
    fn learned_rows_never_regress_and_recompute() {
        let t = run_table(
            &buckets(),
            &PriorityRule::CriticalPath,
            Some(&model()),
            5,
            10,
            &LpOrders::new(),
        )
        .unwrap();
        for r in &t.rows {
            assert!(r.reduce_pct >= 0.0);
            assert!((reduction_pct(r.time, r.learn) - r.reduce_pct).abs() < 0.01);
        }
        let avg = mean(t.rows.iter().map(|r| r.reduce_pct));
        assert_eq!(t.average.reduce_pct, avg);
        assert_eq!(t.to_csv().lines().count(), 4);
        assert!(t.to_text().contains("average"));
    }

    #[test]
    fn lp_column_uses_the_fixed_order() {
        let bs = buckets();
        let mut lp = LpOrders::new();
        for (i, g) in bs[0].graphs.iter().enumerate() {
            let (s, _) = g.without_virtual_root();
            lp.insert((bs[0].size, i), s.topological_order().unwrap());
        }
        let t = run_table(&bs, &PriorityRule::Sjf, None, 1, 1, &lp).unwrap();
        assert!(t.rows[0].lp.is_some());
        assert_eq!(t.rows[1].lp, None);
        assert_eq!(t.average.lp, None);
        assert!(t.to_text().lines().any(|l| l.ends_with('-')));
    }

    #[test]
    fn sweep_ensemble_is_the_best_prefix() {
        let bs = buckets();
        let m = model();
        let rows = sweep_edges(&bs, &m, &PriorityRule::Sjf, 5, 10).unwrap();
        for (row, b) in rows.iter().zip(&bs) {
            assert_eq!(row.per_m.len(), 5);
            for k in 1..=5 {
                assert!((-100.0..=100.0).contains(&row.reduction_at(k)));
            }
            // per instance: ensemble = min over m of the per-m makespans, 0 included
            let mut total = 0.0;
            for g in &b.graphs {
                let r = ensemble_best(&m, g, &PriorityRule::Sjf, 5, 10).unwrap();
                total += r.per_count.iter().copied().fold(f64::INFINITY, f64::min);
            }
            assert!((row.ensemble - total / b.graphs.len() as f64).abs() < 1e-12);
            assert!(row.ensemble_reduction() >= 0.0);
        }
        assert_eq!(
            sweep_to_csv(&PriorityRule::Sjf, &rows).lines().count(),
            1 + 2 * 7
        );
    }

    #[test]
    fn convergence_smoothing() {
        let flat = "iteration,5,10\n0,3,7\n10,3,7\n20,3,7\n";
        let s = convergence_report(flat, 2).unwrap();
        assert_eq!(s.len(), 2);
        assert!(s[0].points.iter().all(|p| p.1 == 3.0));
        assert!(s[1].points.iter().all(|p| p.1 == 7.0));

        let down = "iteration,5\n0,10\n1,8\n2,6\n3,4\n";
        let s = convergence_report(down, 2).unwrap();
        assert_eq!(s[0].points, vec![(0, 10.0), (1, 9.0), (2, 7.0), (3, 5.0)]);
        assert!(s[0].points.windows(2).all(|w| w[1].1 <= w[0].1));
        assert!(series_to_csv(&s).starts_with("bucket,iteration,makespan\n5,0,10\n"));
    }

    #[test]
    fn malformed_logs_name_the_line() {
        assert!(matches!(
            convergence_report("step,5\n", 1),
            Err(BenchError::Parse { line: 1, .. })
        ));
        match convergence_report("iteration,5\n0,1\n1,x\n", 1) {
            Err(BenchError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            convergence_report("iteration,5\n0,1,2\n", 1),
            Err(BenchError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn single_graph_bucket() {
        let g = merge_dags(&[DagGraph::from_tasks(&[(1.0, 0.5)], &[]).unwrap()]).unwrap();
        let b = vec![TestBucket {
            size: 1,
            graphs: vec![g],
        }];
        let t = run_table(
            &b,
            &PriorityRule::Sjf,
            Some(&model()),
            5,
            10,
            &LpOrders::new(),
        )
        .unwrap();
        assert_eq!(t.rows[0].time, 1.0);
        assert_eq!(t.rows[0].learn, 1.0);
    }
}
