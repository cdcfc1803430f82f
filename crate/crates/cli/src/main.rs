use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use genet_core::bench::{self, BenchOptions, CountingAlloc};
use genet_core::config::TrainConfig;
use genet_core::data::{self, Synthetic};
use genet_core::elimination::{hop_decompose, propagate_eliminated, propagate_self_loop_eliminated};
use genet_core::graph::gcn_coefficients;
use genet_core::train::{self, GenModel};
use genet_core::{verify, CsrGraph, EdgeCoefficients, GenError, Tensor};

#[global_allocator]
static ALLOC: CountingAlloc = CountingAlloc;

#[derive(Parser)]
#[command(name = "genet", version, about = "Graph elimination networks")]
struct Cli {
    /// Worker threads for row-parallel sweeps (1 = sequential).
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run oracle checks and print a result table.
    Verify {
        #[arg(long, default_value = "all")]
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write per-hop increments of K propagation rounds as hop_k.csv.
    Decompose(DecomposeArgs),
    /// Train a model and write metrics.csv and checkpoint.genc.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed from the config file.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print split accuracies of a checkpoint.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Time forward passes on random graphs of growing size.
    Bench(BenchArgs),
    /// Generate a synthetic graph (edges.tsv) or the long-range dataset.
    GenGraph(GenGraphArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Gea,
    Selfloop,
    Plain,
}

#[derive(Clone, Copy, ValueEnum)]
enum Coef {
    Unit,
    Gcn,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Args)]
struct DecomposeArgs {
    #[arg(long)]
    graph: PathBuf,
    /// A features.csv file or `onehot` for identity features.
    #[arg(long)]
    features: String,
    #[arg(long = "K")]
    k: usize,
    /// Output directory; hop CSVs go to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "gea")]
    mode: Mode,
    #[arg(long, value_enum, default_value = "unit")]
    coef: Coef,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated ascending node counts.
    #[arg(long, value_delimiter = ',', default_value = "10000,20000,40000,80000")]
    sizes: Vec<usize>,
    #[arg(long = "K", default_value_t = 4)]
    k: usize,
    #[arg(long, default_value_t = 1)]
    layers: usize,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long, value_enum, default_value = "on")]
    eliminate: Switch,
    #[arg(long, default_value_t = 10.0)]
    avg_degree: f64,
    #[arg(long, default_value_t = 8)]
    width: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Chain,
    BalancedTree,
    Cycle,
    ErdosRenyi,
    RandomTree,
    LongRange,
}

#[derive(Args)]
struct GenGraphArgs {
    #[arg(long, value_enum)]
    kind: Kind,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    branching: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    p: Option<f64>,
    /// Tree count for `long-range`.
    #[arg(long, default_value_t = 500)]
    trees: usize,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory; edges go to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    User(String),
    Internal(String),
    /// Checks ran but at least one failed.
    Checks,
}

impl From<GenError> for Failure {
    fn from(e: GenError) -> Self {
        if e.is_user_error() {
            Failure::User(e.to_string())
        } else {
            Failure::Internal(e.to_string())
        }
    }
}

type Outcome = Result<(), Failure>;

fn write_file(path: &Path, text: &str) -> Outcome {
    fs::write(path, text).map_err(|e| Failure::User(format!("cannot write {}: {e}", path.display())))
}

fn make_dir(dir: &Path) -> Outcome {
    fs::create_dir_all(dir).map_err(|e| Failure::User(format!("cannot create {}: {e}", dir.display())))
}

fn hop_csv(t: &Tensor) -> String {
    let mut s = String::from("node");
    for c in 0..t.cols() {
        let _ = write!(s, ",f{c}");
    }
    s.push('\n');
    for i in 0..t.rows() {
        let _ = write!(s, "{i}");
        for v in t.row(i) {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

fn decompose(a: &DecomposeArgs) -> Outcome {
    if a.k == 0 {
        return Err(Failure::User("--K must be at least 1".into()));
    }
    let loop_free = CsrGraph::read_edge_list(&a.graph, None, false)?;
    let x = if a.features == "onehot" {
        Tensor::identity(loop_free.num_nodes())
    } else {
        data::read_features(Path::new(&a.features))?
    };
    let n = x.rows();
    let loop_free = if n == loop_free.num_nodes() {
        loop_free
    } else {
        CsrGraph::read_edge_list(&a.graph, Some(n), false)?
    };
    let g = match a.mode {
        Mode::Selfloop => loop_free,
        Mode::Gea | Mode::Plain => loop_free.with_self_loops(),
    };
    let coef = match a.coef {
        Coef::Unit => EdgeCoefficients::uniform(&g, 1.0),
        Coef::Gcn => gcn_coefficients(&g)?,
    };
    let coefs = vec![coef; a.k];
    let trace = match a.mode {
        Mode::Gea => propagate_eliminated(&g, &x, &coefs, a.k, true)?,
        Mode::Plain => propagate_eliminated(&g, &x, &coefs, a.k, false)?,
        Mode::Selfloop => propagate_self_loop_eliminated(&g, &x, &coefs, a.k)?,
    };
    eprintln!("decompose: {} nodes, {} rounds, {} edge visits", n, a.k, trace.edge_visits);
    for (k, inc) in hop_decompose(&trace).iter().enumerate() {
        let text = hop_csv(inc);
        match &a.out {
            Some(dir) => {
                make_dir(dir)?;
                write_file(&dir.join(format!("hop_{}.csv", k + 1)), &text)?;
            }
            None => print!("# hop {}\n{text}", k + 1),
        }
    }
    Ok(())
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<TrainConfig, Failure> {
    let mut cfg = TrainConfig::load(path)?;
    if let Some(s) = seed {
        cfg.model.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train_cmd(data_dir: &Path, config: &Path, out: &Path, seed: Option<u64>) -> Outcome {
    let cfg = load_config(config, seed)?;
    let ds = data::load_dataset(data_dir)?;
    eprintln!(
        "train: {} nodes, {} classes, {} epochs",
        ds.num_nodes(),
        ds.num_classes(),
        cfg.epochs
    );
    let result = train::train_loop_with(&ds, &cfg, |m| {
        eprintln!(
            "epoch {:>4} loss {:.4} train {:.4} val {:.4} test {:.4}",
            m.epoch, m.train_loss, m.train_acc, m.val_acc, m.test_acc
        );
    })?;
    make_dir(out)?;
    write_file(&out.join("metrics.csv"), &train::metrics_csv(&result.history))?;
    train::write_checkpoint(&out.join("checkpoint.genc"), &result.best.tensors())?;
    let best = result.best_metrics();
    eprintln!(
        "best epoch {}: val {:.4} test {:.4}",
        result.best_epoch, best.val_acc, best.test_acc
    );
    Ok(())
}

fn eval_cmd(data_dir: &Path, config: &Path, ckpt: &Path) -> Outcome {
    let cfg = load_config(config, None)?;
    let ds = data::load_dataset(data_dir)?;
    let mut model = GenModel::init(&cfg.model, ds.features.cols(), ds.num_classes())?;
    model.load_tensors(&train::read_checkpoint(ckpt)?)?;
    let (tr, va, te) = train::evaluate_splits(&model, &ds)?;
    print!("split,accuracy\ntrain,{tr:.4}\nval,{va:.4}\ntest,{te:.4}\n");
    Ok(())
}

fn bench_cmd(a: &BenchArgs) -> Outcome {
    let opts = BenchOptions {
        avg_degree: a.avg_degree,
        width: a.width,
        eliminate: a.eliminate == Switch::On,
        seed: a.seed,
    };
    let records = bench::scaling_run(&a.sizes, a.k, a.layers, a.repeats, &opts)?;
    for w in records.windows(2) {
        eprintln!(
            "{} -> {} nodes: time ratio {:.2}",
            w[0].nodes,
            w[1].nodes,
            w[1].ms_median / w[0].ms_median
        );
    }
    let csv = bench::records_csv(&records);
    match &a.out {
        Some(dir) => {
            make_dir(dir)?;
            write_file(&dir.join("bench.csv"), &csv)
        }
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn need<T>(v: Option<T>, flag: &str, kind: &str) -> Result<T, Failure> {
    v.ok_or_else(|| Failure::User(format!("--{flag} is required for --kind {kind}")))
}

fn gen_graph(a: &GenGraphArgs) -> Outcome {
    let kind = match a.kind {
        Kind::LongRange => {
            let ds = data::long_range_forest(a.trees, a.classes, a.seed)?;
            let dir = a
                .out
                .as_ref()
                .ok_or_else(|| Failure::User("--out is required for --kind long-range".into()))?;
            eprintln!("long-range: {} nodes, {} labelled", ds.num_nodes(), ds.train.len() + ds.val.len() + ds.test.len());
            return Ok(data::write_dataset(&ds, dir)?);
        }
        Kind::Chain => Synthetic::Chain { n: need(a.n, "n", "chain")? },
        Kind::Cycle => Synthetic::Cycle { n: need(a.n, "n", "cycle")? },
        Kind::RandomTree => Synthetic::RandomTree { n: need(a.n, "n", "random-tree")? },
        Kind::BalancedTree => Synthetic::BalancedTree {
            branching: need(a.branching, "branching", "balanced-tree")?,
            depth: need(a.depth, "depth", "balanced-tree")?,
        },
        Kind::ErdosRenyi => Synthetic::ErdosRenyi {
            n: need(a.n, "n", "erdos-renyi")?,
            p: need(a.p, "p", "erdos-renyi")?,
        },
    };
    let g = data::make_synthetic(kind, a.seed)?;
    eprintln!("gen-graph: {} nodes, {} edges", g.num_nodes(), g.num_edges());
    let text = g.to_edge_list();
    match &a.out {
        Some(dir) => {
            make_dir(dir)?;
            write_file(&dir.join("edges.tsv"), &text)
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn verify_cmd(suite: &str, seed: u64) -> Outcome {
    if suite != "all" && !verify::SUITES.contains(&suite) {
        return Err(Failure::User(format!(
            "unknown suite {suite:?}; expected all or one of {}",
            verify::SUITES.join(", ")
        )));
    }
    let rows = verify::run_suite(suite, seed)?;
    print!("{}", verify::table(&rows));
    if rows.iter().all(|r| r.passed) {
        Ok(())
    } else {
        Err(Failure::Checks)
    }
}

fn run(cli: Cli) -> Outcome {
    if cli.threads == 0 {
        return Err(Failure::User("--threads must be at least 1".into()));
    }
    // No pool for one thread: a worker starting up in the background would
    // allocate while `bench` measures its heap baseline.
    if cli.threads > 1 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| Failure::Internal(format!("thread pool: {e}")))?;
    }
    genet_core::par::set_parallel(cli.threads > 1);
    match &cli.cmd {
        Command::Verify { suite, seed } => verify_cmd(suite, *seed),
        Command::Decompose(a) => decompose(a),
        Command::Train { data, config, out, seed } => train_cmd(data, config, out, *seed),
        Command::Eval { data, config, checkpoint } => eval_cmd(data, config, checkpoint),
        Command::Bench(a) => bench_cmd(a),
        Command::GenGraph(a) => gen_graph(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(Failure::User(msg))) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Ok(Err(Failure::Internal(msg))) => {
            eprintln!("internal error: {msg}");
            ExitCode::from(2)
        }
        Ok(Err(Failure::Checks)) => {
            eprintln!("some checks failed");
            ExitCode::from(2)
        }
        Err(_) => ExitCode::from(2),
    }
}
