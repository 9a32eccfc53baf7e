//! `ttgnn`: generate fixtures, partition graphs, size TT tables, train and
//! benchmark TT embeddings.
//!
//! Every command takes its settings from an optional JSON file (`--config`)
//! overridden by flags, and echoes the resolved settings with its output.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use ttgnn::gnn::experiment::{
    arrange_nodes, cell_train_config, mean_std, prepare_graph, run_experiment_matrix, BackendKind, CellKey, MatrixSpec,
    NodeOrder, SbmParams, TrainSettings,
};
use ttgnn::gnn::{train, BackendSpec, EmbeddingBackend, EpochMetrics, LayerType};
use ttgnn::graph::{
    edge_cut, generate_sbm, io as graph_io, random_balanced_assignment, stratified_masks, CsrGraph,
    PartitionOptions,
};
use ttgnn::init::{InitMethod, InitSpec};
use ttgnn::rng::derive_seed;
use ttgnn::tt::{io as tt_io, plan_factorization, uniform_ranks, TtConfig};

#[derive(Parser)]
#[command(name = "ttgnn", version, about = "Tensor-train node embeddings for GNNs")]
struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// JSON settings file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a stochastic block model edge list and label file.
    Sbm(SbmArgs),
    /// Partition a graph and write the induced node permutation.
    Partition(PartitionArgs),
    /// Factorization, core shapes and parameter counts of a TT table.
    Report(ReportArgs),
    /// Train a GNN with a dense or TT embedding table.
    Train(TrainArgs),
    /// Lookup and gradient throughput of TT tables against a dense table.
    Bench(BenchArgs),
    /// Run a grid of training runs and summarize it.
    Matrix(MatrixArgs),
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

fn set_list<T>(slot: &mut Vec<T>, flag: Vec<T>) {
    if !flag.is_empty() {
        *slot = flag;
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn print_json(value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    // a closed pipe (e.g. `| head`) is not an error
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn require_path(p: &Option<PathBuf>, flag: &str) -> Result<PathBuf> {
    p.clone().with_context(|| format!("missing {flag}"))
}

// ---------------------------------------------------------------- sbm

#[derive(Args)]
struct SbmArgs {
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long)]
    p_in: Option<f64>,
    #[arg(long)]
    p_out: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    edges_out: Option<PathBuf>,
    #[arg(long)]
    labels_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SbmConfig {
    graph: SbmParams,
    seed: u64,
    edges_out: Option<PathBuf>,
    labels_out: Option<PathBuf>,
}

fn cmd_sbm(args: SbmArgs, file: Option<&Path>) -> Result<()> {
    let mut cfg: SbmConfig = load_config(file)?;
    set(&mut cfg.graph.num_nodes, args.nodes);
    set(&mut cfg.graph.num_blocks, args.blocks);
    set(&mut cfg.graph.p_in, args.p_in);
    set(&mut cfg.graph.p_out, args.p_out);
    set(&mut cfg.seed, args.seed);
    if args.edges_out.is_some() {
        cfg.edges_out = args.edges_out;
    }
    if args.labels_out.is_some() {
        cfg.labels_out = args.labels_out;
    }
    let edges_out = require_path(&cfg.edges_out, "--edges-out")?;
    let labels_out = require_path(&cfg.labels_out, "--labels-out")?;
    let p = &cfg.graph;
    let g = generate_sbm(p.num_nodes, p.num_blocks, p.p_in, p.p_out, cfg.seed)?;
    graph_io::write_edge_list(&g, &edges_out)?;
    graph_io::write_labels(g.labels().expect("sbm graphs are labelled"), &labels_out)?;
    print_json(&json!({
        "config": cfg,
        "num_nodes": g.num_nodes(),
        "num_edges": g.num_edges(),
        "num_classes": g.num_classes(),
    }))
}

// ---------------------------------------------------------------- partition

#[derive(Args)]
struct PartitionArgs {
    /// Edge list to partition.
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Flat k-way partition.
    #[arg(long, conflicts_with = "branching")]
    parts: Option<usize>,
    /// Recursive partition, e.g. "10,10".
    #[arg(long, value_delimiter = ',')]
    branching: Vec<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Allowed excess of the largest part over an even split.
    #[arg(long)]
    imbalance: Option<f64>,
    #[arg(long)]
    perm_out: Option<PathBuf>,
    /// Also report the cut of random balanced assignments with the same
    /// number of leaves.
    #[arg(long)]
    random_baseline: bool,
    /// Copy of the printed stats.
    #[arg(long)]
    stats_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct PartitionConfig {
    graph: Option<PathBuf>,
    branching: Vec<usize>,
    seed: u64,
    imbalance: f64,
    perm_out: Option<PathBuf>,
    random_baseline: bool,
    random_draws: usize,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        PartitionConfig {
            graph: None,
            branching: Vec::new(),
            seed: 0,
            imbalance: PartitionOptions::default().imbalance,
            perm_out: None,
            random_baseline: false,
            random_draws: 5,
        }
    }
}

fn cmd_partition(args: PartitionArgs, file: Option<&Path>) -> Result<()> {
    let mut cfg: PartitionConfig = load_config(file)?;
    if args.graph.is_some() {
        cfg.graph = args.graph;
    }
    if let Some(k) = args.parts {
        cfg.branching = vec![k];
    }
    set_list(&mut cfg.branching, args.branching);
    set(&mut cfg.seed, args.seed);
    set(&mut cfg.imbalance, args.imbalance);
    if args.perm_out.is_some() {
        cfg.perm_out = args.perm_out;
    }
    cfg.random_baseline |= args.random_baseline;
    if cfg.branching.is_empty() {
        bail!("give --parts or --branching");
    }
    let graph_path = require_path(&cfg.graph, "--graph")?;
    let perm_out = require_path(&cfg.perm_out, "--perm-out")?;

    let g = graph_io::load_edge_list(&graph_path)?;
    let opts = PartitionOptions {
        imbalance: cfg.imbalance,
        ..PartitionOptions::with_seed(cfg.seed)
    };
    let h = ttgnn::graph::hierarchy::build_hierarchy_with(&g, &cfg.branching, &opts)?;
    graph_io::write_permutation(&h.permutation, &perm_out)?;

    let leaves: usize = cfg.branching.iter().product();
    let mut sizes = vec![0usize; leaves];
    for &leaf in h.leaves() {
        sizes[leaf] += 1;
    }
    let max_part = sizes.iter().copied().max().unwrap_or(0);
    let even = g.num_nodes().div_ceil(leaves);
    let mut stats = json!({
        "config": cfg,
        "num_nodes": g.num_nodes(),
        "num_edges": g.num_edges(),
        "leaves": leaves,
        "edge_cut": edge_cut(&g, h.leaves()),
        "level_cuts": h.level_cuts,
        "part_sizes": sizes,
        "max_part": max_part,
        "balance": max_part as f64 / even as f64,
    });
    if cfg.random_baseline {
        let draws = cfg.random_draws.max(1);
        let total: usize = (0..draws)
            .map(|i| {
                let parts = random_balanced_assignment(g.num_nodes(), leaves, derive_seed(cfg.seed, 0xba5e + i as u64));
                edge_cut(&g, &parts)
            })
            .sum();
        stats["random_baseline_cut"] = json!(total as f64 / draws as f64);
    }
    if let Some(p) = args.stats_out {
        write_json(&p, &stats)?;
    }
    print_json(&stats)
}

// ---------------------------------------------------------------- report

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    /// Number of cores.
    #[arg(long)]
    d: Option<usize>,
    /// Internal ranks to report, e.g. "16,32,64".
    #[arg(long, value_delimiter = ',')]
    ranks: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    row_factors: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    col_factors: Vec<usize>,
    /// Width of the dense table the ratio is measured against (default: --dim).
    #[arg(long)]
    baseline_dim: Option<usize>,
    /// Order factors for orthogonal-core initialization.
    #[arg(long)]
    ortho_friendly: bool,
    /// Print JSON instead of text.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ReportConfig {
    nodes: usize,
    dim: usize,
    d: usize,
    ranks: Vec<usize>,
    row_factors: Option<Vec<usize>>,
    col_factors: Option<Vec<usize>>,
    baseline_dim: Option<usize>,
    ortho_friendly: bool,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            nodes: 0,
            dim: 0,
            d: 3,
            ranks: vec![16, 32, 64],
            row_factors: None,
            col_factors: None,
            baseline_dim: None,
            ortho_friendly: false,
        }
    }
}

fn resolve_shape(
    nodes: usize,
    dim: usize,
    d: usize,
    rank: usize,
    rows: Option<&Vec<usize>>,
    cols: Option<&Vec<usize>>,
    ortho_friendly: bool,
) -> Result<TtConfig> {
    let ranks = uniform_ranks(d, rank);
    let planned = plan_factorization(nodes, dim, d, ranks.clone(), ortho_friendly)?;
    let rows = rows.cloned().unwrap_or_else(|| planned.row_factors().to_vec());
    let cols = cols.cloned().unwrap_or_else(|| planned.col_factors().to_vec());
    Ok(TtConfig::new(nodes, dim, rows, cols, ranks)?)
}

fn fmt_factors(f: &[usize]) -> String {
    f.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" x ")
}

fn cmd_report(args: ReportArgs, file: Option<&Path>) -> Result<()> {
    let mut cfg: ReportConfig = load_config(file)?;
    set(&mut cfg.nodes, args.nodes);
    set(&mut cfg.dim, args.dim);
    set(&mut cfg.d, args.d);
    set_list(&mut cfg.ranks, args.ranks);
    if !args.row_factors.is_empty() {
        cfg.row_factors = Some(args.row_factors);
    }
    if !args.col_factors.is_empty() {
        cfg.col_factors = Some(args.col_factors);
    }
    if args.baseline_dim.is_some() {
        cfg.baseline_dim = args.baseline_dim;
    }
    cfg.ortho_friendly |= args.ortho_friendly;
    if cfg.ranks.is_empty() {
        bail!("no ranks to report");
    }

    let baseline_dim = cfg.baseline_dim.unwrap_or(cfg.dim);
    let mut shapes = Vec::new();
    for &r in &cfg.ranks {
        let c = resolve_shape(
            cfg.nodes,
            cfg.dim,
            cfg.d,
            r,
            cfg.row_factors.as_ref(),
            cfg.col_factors.as_ref(),
            cfg.ortho_friendly,
        )?;
        shapes.push(c);
    }
    let first = &shapes[0];
    let baseline_params = cfg.nodes * baseline_dim;
    let entries: Vec<_> = cfg
        .ranks
        .iter()
        .zip(&shapes)
        .map(|(&r, c)| {
            json!({
                "rank": r,
                "core_shapes": (0..c.num_cores()).map(|k| c.core_shape(k)).collect::<Vec<_>>(),
                "params": c.count_params(),
                "compression_ratio": c.compression_ratio_vs(baseline_dim),
            })
        })
        .collect();

    if args.json {
        return print_json(&json!({
            "config": cfg,
            "num_rows": cfg.nodes,
            "emb_dim": cfg.dim,
            "row_factors": first.row_factors(),
            "col_factors": first.col_factors(),
            "padded_rows": first.padded_rows(),
            "padded_cols": first.padded_cols(),
            "baseline_params": baseline_params,
            "ranks": entries,
        }));
    }
    println!("config: {}", serde_json::to_string(&cfg)?);
    println!("table: {} x {}, {} cores", cfg.nodes, cfg.dim, cfg.d);
    println!(
        "row factors: {} = {} ({} padding rows)",
        fmt_factors(first.row_factors()),
        first.padded_rows(),
        first.padded_rows() - cfg.nodes
    );
    println!(
        "col factors: {} = {} ({} padding columns)",
        fmt_factors(first.col_factors()),
        first.padded_cols(),
        first.padded_cols() - cfg.dim
    );
    println!("dense baseline: {} x {} = {} params", cfg.nodes, baseline_dim, baseline_params);
    for (&r, c) in cfg.ranks.iter().zip(&shapes) {
        let cores: Vec<String> = (0..c.num_cores())
            .map(|k| {
                let [a, b, e, f] = c.core_shape(k);
                format!("({a},{b},{e},{f})")
            })
            .collect();
        println!(
            "rank {r}: cores {}; params {}; compression {:.2}x",
            cores.join(" "),
            c.count_params(),
            c.compression_ratio_vs(baseline_dim)
        );
    }
    Ok(())
}

// ---------------------------------------------------------------- train

#[derive(Args)]
struct TrainArgs {
    /// Edge list; an SBM graph is generated when absent.
    #[arg(long)]
    edges: Option<PathBuf>,
    /// Label file for --edges.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    backend: Option<BackendKind>,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    init: Option<InitMethod>,
    #[arg(long)]
    emb_dim: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    row_factors: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    col_factors: Vec<usize>,
    /// shuffled, no-perm, first-level or second-level.
    #[arg(long)]
    order: Option<NodeOrder>,
    #[arg(long, value_delimiter = ',')]
    branching: Vec<usize>,
    #[arg(long)]
    layer: Option<LayerType>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for metrics.csv and run.json.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Save the trained TT cores in the binary core format.
    #[arg(long)]
    save_cores: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TrainRunConfig {
    edges: Option<PathBuf>,
    labels: Option<PathBuf>,
    /// Generator settings when no edge list is given.
    sbm: SbmParams,
    backend: BackendKind,
    rank: usize,
    init: InitMethod,
    emb_dim: usize,
    num_cores: usize,
    row_factors: Option<Vec<usize>>,
    col_factors: Option<Vec<usize>>,
    order: NodeOrder,
    branching: Option<Vec<usize>>,
    seed: u64,
    train: TrainSettings,
    out_dir: Option<PathBuf>,
    save_cores: Option<PathBuf>,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        let b = MatrixSpec::benchmark();
        TrainRunConfig {
            edges: None,
            labels: None,
            sbm: b.graph,
            backend: BackendKind::Tt,
            rank: 4,
            init: InitMethod::OrthoCore,
            emb_dim: b.emb_dim,
            num_cores: b.num_cores,
            row_factors: b.row_factors,
            col_factors: b.col_factors,
            order: NodeOrder::NoPerm,
            branching: None,
            seed: 0,
            train: b.train,
            out_dir: None,
            save_cores: None,
        }
    }
}

/// Load an edge list and label file. The label file fixes the node count,
/// so isolated nodes past the largest edge endpoint are kept.
fn load_labelled(edges: &Path, labels: &Path, seed: u64) -> Result<CsrGraph> {
    let g = graph_io::load_edge_list(edges)?;
    let text = fs::read_to_string(labels).with_context(|| format!("reading {}", labels.display()))?;
    let mut n = g.num_nodes();
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("").trim();
        if let Some(id) = line.split_whitespace().next().and_then(|t| t.parse::<usize>().ok()) {
            n = n.max(id + 1);
        }
    }
    let g = if n > g.num_nodes() {
        CsrGraph::from_edges(n, &g.edges().collect::<Vec<_>>())?
    } else {
        g
    };
    let labels = graph_io::parse_labels(&text, n)?;
    let masks = stratified_masks(&labels, 0.6, 0.2, seed);
    Ok(g.with_labels(labels)?.with_masks(masks)?)
}

fn metrics_csv(history: &[EpochMetrics]) -> String {
    let mut s = String::from("epoch,train_loss,train_acc,val_loss,val_acc,test_acc,seconds\n");
    for m in history {
        s += &format!(
            "{},{:.8},{:.6},{:.8},{:.6},{:.6},{:.6}\n",
            m.epoch, m.train_loss, m.train_acc, m.val_loss, m.val_acc, m.test_acc, m.seconds
        );
    }
    s
}

fn cmd_train(args: TrainArgs, file: Option<&Path>) -> Result<()> {
    let mut cfg: TrainRunConfig = load_config(file)?;
    if args.edges.is_some() {
        cfg.edges = args.edges;
    }
    if args.labels.is_some() {
        cfg.labels = args.labels;
    }
    set(&mut cfg.backend, args.backend);
    set(&mut cfg.rank, args.rank);
    set(&mut cfg.init, args.init);
    set(&mut cfg.emb_dim, args.emb_dim);
    set(&mut cfg.num_cores, args.d);
    if !args.row_factors.is_empty() {
        cfg.row_factors = Some(args.row_factors);
    }
    if !args.col_factors.is_empty() {
        cfg.col_factors = Some(args.col_factors);
    }
    set(&mut cfg.order, args.order);
    if !args.branching.is_empty() {
        cfg.branching = Some(args.branching);
    }
    set(&mut cfg.train.layer_type, args.layer);
    set(&mut cfg.train.num_layers, args.layers);
    set(&mut cfg.train.hidden_dim, args.hidden);
    set(&mut cfg.train.epochs, args.epochs);
    set(&mut cfg.train.optimizer.learning_rate, args.lr);
    if args.patience.is_some() {
        cfg.train.patience = args.patience;
    }
    set(&mut cfg.seed, args.seed);
    if args.out_dir.is_some() {
        cfg.out_dir = args.out_dir;
    }
    if args.save_cores.is_some() {
        cfg.save_cores = args.save_cores;
    }

    let mut spec = MatrixSpec {
        graph: cfg.sbm,
        emb_dim: cfg.emb_dim,
        num_cores: cfg.num_cores,
        row_factors: cfg.row_factors.clone(),
        col_factors: cfg.col_factors.clone(),
        train: cfg.train.clone(),
        ..MatrixSpec::default()
    };
    // the default hierarchy follows the leading row factors
    if cfg.order != NodeOrder::Shuffled && cfg.branching.is_none() {
        let rows = spec.tt_config(1)?.row_factors().to_vec();
        cfg.branching = Some(rows[..rows.len() - 1].to_vec());
    }
    let graph = match (&cfg.edges, &cfg.labels) {
        (Some(e), Some(l)) => {
            let g = load_labelled(e, l, cfg.seed)?;
            spec.graph.num_nodes = g.num_nodes();
            arrange_nodes(&g, cfg.order, cfg.branching.as_deref(), cfg.seed)?
        }
        (None, None) => prepare_graph(&cfg.sbm, cfg.order, cfg.branching.as_deref(), cfg.seed)?,
        _ => bail!("--edges and --labels go together"),
    };
    let key = CellKey {
        backend: cfg.backend,
        rank: (cfg.backend == BackendKind::Tt).then_some(cfg.rank),
        init: (cfg.backend == BackendKind::Tt).then_some(cfg.init),
        branching: cfg.branching.clone(),
        order: cfg.order,
    };
    let train_config = cell_train_config(&spec, &key, cfg.seed)?;
    let state = train(&graph, &train_config)?;
    let best = *state.best_epoch();

    if let Some(path) = &cfg.save_cores {
        match &state.backend {
            EmbeddingBackend::Tt(e) => tt_io::save(e, path)?,
            EmbeddingBackend::Full(_) => bail!("--save-cores needs the tt backend"),
        }
    }
    let summary = json!({
        "config": cfg,
        "resolved": train_config,
        "num_nodes": graph.num_nodes(),
        "num_edges": graph.num_edges(),
        "emb_params": state.backend.num_params(),
        "model_params": state.model.num_params(),
        "epochs_run": state.epoch,
        "best_epoch": best.epoch,
        "test_acc": best.test_acc,
        "seconds_per_epoch": state.seconds_per_epoch(),
    });
    if let Some(dir) = &cfg.out_dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        fs::write(dir.join("metrics.csv"), metrics_csv(state.history()))?;
        let mut run = summary.clone();
        run["history"] = json!(state.history());
        write_json(&dir.join("run.json"), &run)?;
    }
    print_json(&summary)
}

// ---------------------------------------------------------------- bench

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    ranks: Vec<usize>,
    /// Rows per lookup call.
    #[arg(long)]
    batch: Option<usize>,
    /// Timed calls per measurement.
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Skip the dense table.
    #[arg(long)]
    no_full: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct BenchConfig {
    nodes: usize,
    dim: usize,
    d: usize,
    ranks: Vec<usize>,
    row_factors: Option<Vec<usize>>,
    col_factors: Option<Vec<usize>>,
    batch: usize,
    iters: usize,
    seed: u64,
    full_baseline: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            nodes: 100_000,
            dim: 64,
            d: 3,
            ranks: vec![2, 4, 8],
            row_factors: None,
            col_factors: None,
            batch: 4096,
            iters: 10,
            seed: 0,
            full_baseline: true,
        }
    }
}

#[derive(Debug, Serialize)]
struct BenchRow {
    backend: BackendKind,
    rank: Option<usize>,
    params: usize,
    compression_ratio: f64,
    lookup_rows_per_sec: f64,
    backward_rows_per_sec: f64,
}

fn time_backend(backend: &EmbeddingBackend, indices: &[usize], iters: usize) -> Result<(f64, f64)> {
    let upstream = ndarray::Array2::<f64>::ones((indices.len(), backend.dim()));
    // warm-up call outside the timed loop
    backend.lookup(indices)?;
    let start = Instant::now();
    for _ in 0..iters {
        std::hint::black_box(backend.lookup(indices)?);
    }
    let lookup = start.elapsed().as_secs_f64();
    let start = Instant::now();
    for _ in 0..iters {
        std::hint::black_box(backend.backward(indices, upstream.view())?);
    }
    let backward = start.elapsed().as_secs_f64();
    let rows = (indices.len() * iters) as f64;
    Ok((rows / lookup.max(1e-12), rows / backward.max(1e-12)))
}

fn cmd_bench(args: BenchArgs, file: Option<&Path>) -> Result<()> {
    let mut cfg: BenchConfig = load_config(file)?;
    set(&mut cfg.nodes, args.nodes);
    set(&mut cfg.dim, args.dim);
    set(&mut cfg.d, args.d);
    set_list(&mut cfg.ranks, args.ranks);
    set(&mut cfg.batch, args.batch);
    set(&mut cfg.iters, args.iters);
    set(&mut cfg.seed, args.seed);
    cfg.full_baseline &= !args.no_full;
    if cfg.batch == 0 || cfg.iters == 0 {
        bail!("batch and iters must be positive");
    }

    let indices: Vec<usize> = (0..cfg.batch)
        .map(|i| (derive_seed(cfg.seed, i as u64) % cfg.nodes.max(1) as u64) as usize)
        .collect();
    let mut rows = Vec::new();
    for &r in &cfg.ranks {
        let c = resolve_shape(
            cfg.nodes,
            cfg.dim,
            cfg.d,
            r,
            cfg.row_factors.as_ref(),
            cfg.col_factors.as_ref(),
            false,
        )?;
        let backend = EmbeddingBackend::build(&BackendSpec::Tt {
            init: InitSpec::new(InitMethod::Gaussian, cfg.seed),
            config: c.clone(),
        })?;
        let (lookup, backward) = time_backend(&backend, &indices, cfg.iters)?;
        rows.push(BenchRow {
            backend: BackendKind::Tt,
            rank: Some(r),
            params: c.count_params(),
            compression_ratio: c.compression_ratio(),
            lookup_rows_per_sec: lookup,
            backward_rows_per_sec: backward,
        });
    }
    if cfg.full_baseline {
        let backend = EmbeddingBackend::build(&BackendSpec::Full {
            rows: cfg.nodes,
            dim: cfg.dim,
            init_std: 0.1,
            seed: cfg.seed,
        })?;
        let (lookup, backward) = time_backend(&backend, &indices, cfg.iters)?;
        rows.push(BenchRow {
            backend: BackendKind::Full,
            rank: None,
            params: backend.num_params(),
            compression_ratio: 1.0,
            lookup_rows_per_sec: lookup,
            backward_rows_per_sec: backward,
        });
    }
    let out = json!({ "config": cfg, "results": rows });
    if let Some(p) = args.out {
        write_json(&p, &out)?;
    }
    print_json(&out)
}

// ---------------------------------------------------------------- matrix

#[derive(Args)]
struct MatrixArgs {
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    #[arg(long, value_delimiter = ',')]
    backends: Vec<BackendKind>,
    #[arg(long, value_delimiter = ',')]
    ranks: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    inits: Vec<InitMethod>,
    #[arg(long, value_delimiter = ',')]
    orders: Vec<NodeOrder>,
    /// One hierarchy branching, e.g. "10,10".
    #[arg(long, value_delimiter = ',')]
    branching: Vec<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Directory for report.csv and report.json.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn cmd_matrix(args: MatrixArgs, file: Option<&Path>) -> Result<bool> {
    let mut spec = match file {
        Some(_) => load_config::<MatrixSpec>(file)?,
        None => MatrixSpec::benchmark(),
    };
    set_list(&mut spec.seeds, args.seeds);
    set_list(&mut spec.backends, args.backends);
    set_list(&mut spec.ranks, args.ranks);
    set_list(&mut spec.inits, args.inits);
    set_list(&mut spec.orders, args.orders);
    if !args.branching.is_empty() {
        spec.branchings = vec![args.branching];
    }
    set(&mut spec.train.epochs, args.epochs);
    set(&mut spec.train.optimizer.learning_rate, args.lr);

    let report = run_experiment_matrix(&spec)?;
    if let Some(dir) = &args.out_dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        fs::write(dir.join("report.csv"), report.to_csv())?;
        write_json(&dir.join("report.json"), &report)?;
    }
    let cells: Vec<_> = report
        .cells
        .iter()
        .map(|c| {
            json!({
                "key": c.key,
                "emb_params": c.emb_params,
                "mean_acc": c.mean_acc,
                "std_acc": c.std_acc,
                "seconds_per_epoch": c.seconds_per_epoch,
                "error": c.error,
            })
        })
        .collect();
    let failed: Vec<String> = report
        .failed()
        .map(|c| format!("{:?}: {}", c.key, c.error.as_deref().unwrap_or("")))
        .collect();
    let all: Vec<f64> = report.cells.iter().flat_map(|c| c.accuracies()).collect();
    let (mean, _) = mean_std(&all);
    print_json(&json!({
        "config": spec,
        "cells": cells,
        "runs": all.len(),
        "mean_acc_all_runs": mean,
        "failed_cells": failed,
    }))?;
    if !failed.is_empty() {
        eprintln!("{} of {} cells failed", failed.len(), report.cells.len());
        for f in &failed {
            eprintln!("  {f}");
        }
    }
    Ok(failed.is_empty())
}

fn run(cli: Cli) -> Result<bool> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let file = cli.config.as_deref();
    match cli.command {
        Command::Sbm(a) => cmd_sbm(a, file)?,
        Command::Partition(a) => cmd_partition(a, file)?,
        Command::Report(a) => cmd_report(a, file)?,
        Command::Train(a) => cmd_train(a, file)?,
        Command::Bench(a) => cmd_bench(a, file)?,
        Command::Matrix(a) => return cmd_matrix(a, file),
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
