use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dagsched::bench::{
    convergence_report, run_table, series_to_csv, sweep_edges, sweep_to_csv, LpOrders,
};
use dagsched::dag::{load_dags, save_dags, DagGraph};
use dagsched::dataset::{load_split, load_test_buckets, write_dataset, GenConfig, RuntimeDist};
use dagsched::fixtures::{
    find_edge_witness, lp_csv, lp_rows, lp_stem, oracle_csv, oracle_rows, small_instances,
    FIGURE_SEED, SMALL_COUNT, SMALL_SEED,
};
use dagsched::inference::ensemble_best;
use dagsched::milp::{build_milp, order_from_solution, read_solution, write_lp};
use dagsched::model::{EdgeModel, ModelConfig};
use dagsched::sim::PriorityRule;
use dagsched::trainer::{train, write_log_csv, DagCount, EvalBucket, TrainConfig};

#[derive(Parser)]
#[command(
    name = "dagsched",
    version,
    about = "Learned edge insertion for DAG list scheduling"
)]
struct Cli {
    /// Relative paths are resolved against this directory.
    #[arg(long, env = "DAGSCHED_DATA", default_value = ".", global = true)]
    data_root: PathBuf,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a training split and merged test buckets.
    Gen(GenArgs),
    /// Train an edge policy with policy gradients.
    Train(TrainArgs),
    /// Add edges to graphs with a trained model.
    Infer(InferArgs),
    #[command(subcommand)]
    Bench(BenchCmd),
    /// Export the big-M model of a graph as LP text.
    Milp(MilpArgs),
    #[command(subcommand)]
    Fixtures(FixtureCmd),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    train: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [5usize, 10, 20, 50, 100])]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    per_size: usize,
    #[arg(long, default_value_t = 1.0)]
    resource_dist: f64,
    #[arg(long, default_value = "empirical")]
    runtime: RuntimeDist,
    #[arg(long, default_value_t = 2)]
    min_nodes: usize,
    #[arg(long, default_value_t = 18)]
    max_nodes: usize,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory with a manifest.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Convergence log CSV.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long, default_value = "sjf")]
    rule: PriorityRule,
    #[arg(long, default_value_t = 5)]
    edges: usize,
    #[arg(long, default_value_t = 10)]
    rollouts: usize,
    #[arg(long, default_value_t = 10_000)]
    iters: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0.05)]
    eps: f64,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    /// Global gradient-norm cap; 0 disables clipping.
    #[arg(long, default_value_t = 1.0)]
    max_grad_norm: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Mean number of DAGs merged per training graph.
    #[arg(long, default_value_t = 5.0)]
    dags_mean: f64,
    #[arg(long, default_value_t = 20)]
    dags_max: usize,
    #[arg(long, default_value_t = 100)]
    eval_every: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 3)]
    hops: usize,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    model: PathBuf,
    /// File with one DAG document per line, or a single document.
    #[arg(long)]
    dag: PathBuf,
    #[arg(long, default_value = "sjf")]
    rule: PriorityRule,
    #[arg(long, default_value_t = 5)]
    edges: usize,
    #[arg(long, default_value_t = 10)]
    beam: usize,
    /// Write the chosen graphs here, one per line.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-graph summary CSV; printed to stdout when absent.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Subcommand)]
enum BenchCmd {
    /// Baseline, learned, Tetris and LP-order makespans per bucket.
    Table(TableArgs),
    /// Reduction for each fixed number of added edges.
    Sweep(SweepArgs),
    /// Smoothed evaluation curves from a training log.
    Convergence(ConvergenceArgs),
}

#[derive(Args)]
struct TableArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value = "sjf")]
    rule: PriorityRule,
    #[arg(long, default_value_t = 5)]
    edges: usize,
    #[arg(long, default_value_t = 10)]
    beam: usize,
    /// Directory of recorded solutions, `test_<size>/<index>.sol`.
    #[arg(long)]
    lp_dir: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = "sjf")]
    rule: PriorityRule,
    #[arg(long, default_value_t = 5)]
    max_edges: usize,
    #[arg(long, default_value_t = 10)]
    beam: usize,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct ConvergenceArgs {
    #[arg(long)]
    log: PathBuf,
    #[arg(long, default_value_t = 5)]
    window: usize,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct MilpArgs {
    #[arg(long)]
    dag: PathBuf,
    /// Relax binaries to [0, 1].
    #[arg(long)]
    relax: bool,
    /// Output file for a single graph; a directory of `<index>.lp` files otherwise.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum FixtureCmd {
    /// Write the small instances, their oracle table, the edge witness and LP models.
    Generate {
        #[arg(long, default_value = "fixtures")]
        dir: PathBuf,
        #[arg(long, default_value_t = SMALL_SEED)]
        seed: u64,
        #[arg(long, default_value_t = SMALL_COUNT)]
        count: usize,
    },
    /// Tabulate recorded LP solutions of the small instances.
    LpTable {
        #[arg(long, default_value = "fixtures")]
        dir: PathBuf,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let root = cli.data_root;
    let at = |p: &Path| {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            root.join(p)
        }
    };
    match cli.cmd {
        Command::Gen(a) => gen(a, &at),
        Command::Train(a) => train_cmd(a, &at),
        Command::Infer(a) => infer(a, &at),
        Command::Bench(BenchCmd::Table(a)) => table(a, &at),
        Command::Bench(BenchCmd::Sweep(a)) => sweep(a, &at),
        Command::Bench(BenchCmd::Convergence(a)) => {
            let text = std::fs::read_to_string(at(&a.log))
                .with_context(|| format!("reading {}", a.log.display()))?;
            let series = convergence_report(&text, a.window)?;
            emit(a.csv.map(|p| at(&p)), &series_to_csv(&series))
        }
        Command::Milp(a) => milp(a, &at),
        Command::Fixtures(FixtureCmd::Generate { dir, seed, count }) => {
            fixtures_generate(&at(&dir), seed, count)
        }
        Command::Fixtures(FixtureCmd::LpTable { dir }) => fixtures_lp_table(&at(&dir)),
    }
}

/// Writes `text` to `path`, or to stdout without one.
fn emit(path: Option<PathBuf>, text: &str) -> Result<()> {
    match path {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(&p, text).with_context(|| format!("writing {}", p.display()))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn gen(a: GenArgs, at: &dyn Fn(&Path) -> PathBuf) -> Result<()> {
    let cfg = GenConfig {
        min_nodes: a.min_nodes,
        max_nodes: a.max_nodes,
        resource_dist: a.resource_dist,
        runtime: a.runtime,
        ..GenConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let out = at(&a.out);
    let m = write_dataset(&out, &mut rng, a.seed, &cfg, a.train, &a.sizes, a.per_size)?;
    for s in &m.splits {
        eprintln!(
            "{}: {} graphs -> {}",
            s.name,
            s.count,
            out.join(&s.path).display()
        );
    }
    Ok(())
}

fn train_cmd(a: TrainArgs, at: &dyn Fn(&Path) -> PathBuf) -> Result<()> {
    let data_dir = at(&a.data);
    let data = load_split(&data_dir, "train")?;
    let eval: Vec<EvalBucket> = load_test_buckets(&data_dir)?
        .into_iter()
        .filter(|b| b.size <= 20)
        .map(|b| EvalBucket {
            name: format!("test_{}", b.size),
            graphs: b.graphs,
        })
        .collect();
    let config = ModelConfig {
        embed_width: a.width,
        policy_width: a.width,
        hops: a.hops,
        ..ModelConfig::default()
    };
    let mut model = EdgeModel::new(config, a.seed);
    let cfg = TrainConfig {
        learning_rate: a.lr,
        max_grad_norm: (a.max_grad_norm > 0.0).then_some(a.max_grad_norm),
        iterations: a.iters,
        rollouts: a.rollouts,
        edges: a.edges,
        gamma: a.gamma,
        epsilon: a.eps,
        rule: a.rule,
        seed: a.seed,
        dag_count: DagCount {
            mean: a.dags_mean,
            max: a.dags_max,
            ..DagCount::default()
        },
        eval_every: if a.log.is_some() { a.eval_every } else { 0 },
        ..TrainConfig::default()
    };
    let log = train(&mut model, &data, &eval, &cfg)?;
    model.save(at(&a.out))?;
    if let Some(p) = a.log {
        let names: Vec<String> = eval.iter().map(|b| b.name.clone()).collect();
        let mut buf = Vec::new();
        write_log_csv(&mut buf, &names, &log)?;
        emit(Some(at(&p)), &String::from_utf8(buf)?)?;
    }
    Ok(())
}

fn infer(a: InferArgs, at: &dyn Fn(&Path) -> PathBuf) -> Result<()> {
    let model = EdgeModel::load(at(&a.model))?;
    let graphs = load_dags(at(&a.dag))?;
    let mut csv = String::from("graph,baseline,makespan,edges,added\n");
    let mut chosen = Vec::with_capacity(graphs.len());
    for (i, g) in graphs.iter().enumerate() {
        let r = ensemble_best(&model, g, &a.rule, a.edges, a.beam)?;
        let added: Vec<String> = r.edges.iter().map(|e| e.action.to_string()).collect();
        let _ = writeln!(
            csv,
            "{i},{},{},{},{}",
            r.baseline,
            r.makespan,
            r.chosen_count(),
            added.join(" ")
        );
        chosen.push(r.graph);
    }
    if let Some(p) = a.out {
        save_dags(at(&p), &chosen)?;
    }
    emit(a.csv.map(|p| at(&p)), &csv)
}

fn lp_orders(dir: &Path, buckets: &[dagsched::dataset::TestBucket]) -> Result<LpOrders> {
    let mut orders = BTreeMap::new();
    for b in buckets {
        for (i, g) in b.graphs.iter().enumerate() {
            let path = dir
                .join(format!("test_{}", b.size))
                .join(format!("{}.sol", lp_stem(i)));
            let Ok(text) = std::fs::read_to_string(&path) else {
                continue;
            };
            let m = build_milp(g);
            let sol = read_solution(&text, &m).with_context(|| path.display().to_string())?;
            if let PriorityRule::FixedOrder(order) = order_from_solution(&sol, &m)? {
                orders.insert((b.size, i), order);
            }
        }
    }
    Ok(orders)
}

fn table(a: TableArgs, at: &dyn Fn(&Path) -> PathBuf) -> Result<()> {
    let buckets = load_test_buckets(at(&a.data))?;
    let model = a.model.map(|p| EdgeModel::load(at(&p))).transpose()?;
    let lp = match &a.lp_dir {
        Some(d) => lp_orders(&at(d), &buckets)?,
        None => LpOrders::new(),
    };
    let t = run_table(&buckets, &a.rule, model.as_ref(), a.edges, a.beam, &lp)?;
    eprint!("{}", t.to_text());
    emit(a.csv.map(|p| at(&p)), &t.to_csv())
}

fn sweep(a: SweepArgs, at: &dyn Fn(&Path) -> PathBuf) -> Result<()> {
    let buckets = load_test_buckets(at(&a.data))?;
    let model = EdgeModel::load(at(&a.model))?;
    let rows = sweep_edges(&buckets, &model, &a.rule, a.max_edges, a.beam)?;
    emit(a.csv.map(|p| at(&p)), &sweep_to_csv(&a.rule, &rows))
}

fn milp(a: MilpArgs, at: &dyn Fn(&Path) -> PathBuf) -> Result<()> {
    let graphs = load_dags(at(&a.dag))?;
    let out = at(&a.out);
    if let [g] = &graphs[..] {
        return emit(Some(out), &write_lp(&build_milp(g), a.relax));
    }
    std::fs::create_dir_all(&out)?;
    for (i, g) in graphs.iter().enumerate() {
        let path = out.join(format!("{}.lp", lp_stem(i)));
        std::fs::write(&path, write_lp(&build_milp(g), a.relax))?;
    }
    eprintln!("{} models -> {}", graphs.len(), out.display());
    Ok(())
}

fn fixtures_generate(dir: &Path, seed: u64, count: usize) -> Result<()> {
    let small = dir.join("small");
    let lp_dir = small.join("lp");
    std::fs::create_dir_all(&lp_dir)?;
    let graphs = small_instances(seed, count)?;
    save_dags(small.join("instances.jsonl"), &graphs)?;
    std::fs::write(small.join("oracle.csv"), oracle_csv(&oracle_rows(&graphs)?))?;
    for (i, g) in graphs.iter().enumerate() {
        let path = lp_dir.join(format!("{}.lp", lp_stem(i)));
        std::fs::write(path, write_lp(&build_milp(g), true))?;
    }
    let Some(w) = find_edge_witness(FIGURE_SEED, 100_000) else {
        bail!("no five-node witness found");
    };
    std::fs::write(
        dir.join("edge_witness.json"),
        serde_json::to_string_pretty(&w)? + "\n",
    )?;
    eprintln!(
        "{count} instances; witness edge {} sjf {} -> {} cp {} -> {}",
        w.edge, w.sjf_before, w.sjf_after, w.cp_before, w.cp_after
    );
    Ok(())
}

fn fixtures_lp_table(dir: &Path) -> Result<()> {
    let small = dir.join("small");
    let graphs: Vec<DagGraph> = load_dags(small.join("instances.jsonl"))?;
    let rows = lp_rows(&graphs, &small.join("lp"))?;
    std::fs::write(small.join("lp_bounds.csv"), lp_csv(&rows))?;
    Ok(())
}
