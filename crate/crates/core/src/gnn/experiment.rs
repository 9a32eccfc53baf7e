//! Grids of training runs over backend, rank, initializer, partition
//! branching and node order, each repeated over seeds.
//!
//! A run with seed `s` generates the SBM graph from `s`, applies a uniform
//! node shuffle, and then either keeps the shuffled order or reorders by a
//! partition hierarchy (optionally shuffling the blocks of one level). The
//! same `s` seeds the embedding and model initialization, so arms that differ
//! in a single axis share everything else.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::backend::BackendSpec;
use super::model::LayerType;
use super::train::{train, EpochMetrics, TrainConfig};
use crate::error::{Error, Result};
use crate::grad::OptimizerConfig;
use crate::graph::{build_hierarchy, generate_sbm, permute_level, shuffle_nodes, CsrGraph, PermLevel};
use crate::init::{InitMethod, InitSpec};
use crate::rng;
use crate::tt::{plan_factorization, uniform_ranks, TtConfig};

const SHUFFLE_STREAM: u64 = 1;
const PARTITION_STREAM: u64 = 2;
const LEVEL_STREAM: u64 = 3;
const INIT_STREAM: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SbmParams {
    pub num_nodes: usize,
    pub num_blocks: usize,
    pub p_in: f64,
    pub p_out: f64,
}

impl Default for SbmParams {
    fn default() -> Self {
        SbmParams {
            num_nodes: 1000,
            num_blocks: 10,
            p_in: 0.08,
            p_out: 0.002,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Full,
    Tt,
}

impl std::str::FromStr for BackendKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(BackendKind::Full),
            "tt" => Ok(BackendKind::Tt),
            other => Err(Error::InvalidConfig(format!("unknown backend {other:?}"))),
        }
    }
}

impl std::fmt::Display for BackendKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BackendKind::Full => "full",
            BackendKind::Tt => "tt",
        })
    }
}

/// Node order fed to the embedding table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeOrder {
    /// Uniformly shuffled ids, no reordering.
    Shuffled,
    /// Hierarchy reordering as built.
    NoPerm,
    /// Hierarchy reordering, then first-level blocks shuffled.
    FirstLevel,
    /// Hierarchy reordering, then second-level blocks shuffled.
    SecondLevel,
}

impl NodeOrder {
    pub fn perm_level(self) -> Option<PermLevel> {
        match self {
            NodeOrder::Shuffled => None,
            NodeOrder::NoPerm => Some(PermLevel::None),
            NodeOrder::FirstLevel => Some(PermLevel::First),
            NodeOrder::SecondLevel => Some(PermLevel::Second),
        }
    }
}

impl std::str::FromStr for NodeOrder {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shuffled" => Ok(NodeOrder::Shuffled),
            "no-perm" | "none" => Ok(NodeOrder::NoPerm),
            "first-level" | "first" | "1st-level" => Ok(NodeOrder::FirstLevel),
            "second-level" | "second" | "2nd-level" => Ok(NodeOrder::SecondLevel),
            other => Err(Error::InvalidConfig(format!("unknown node order {other:?}"))),
        }
    }
}

impl std::fmt::Display for NodeOrder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NodeOrder::Shuffled => "shuffled",
            NodeOrder::NoPerm => "no-perm",
            NodeOrder::FirstLevel => "first-level",
            NodeOrder::SecondLevel => "second-level",
        })
    }
}

/// Model and optimizer settings shared by every cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSettings {
    pub layer_type: LayerType,
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub epochs: usize,
    pub optimizer: OptimizerConfig,
    pub patience: Option<usize>,
    /// Entry std of the dense table.
    pub full_init_std: f64,
    /// Core entry std for Gaussian TT initialization.
    pub gaussian_std: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            layer_type: LayerType::GraphsageMean,
            num_layers: 2,
            hidden_dim: 16,
            epochs: 300,
            optimizer: OptimizerConfig::adam(1e-3),
            patience: None,
            full_init_std: 0.1,
            gaussian_std: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatrixSpec {
    pub graph: SbmParams,
    pub emb_dim: usize,
    pub num_cores: usize,
    /// Row factors; planned from the node count when absent.
    pub row_factors: Option<Vec<usize>>,
    /// Column factors; planned from `emb_dim` when absent.
    pub col_factors: Option<Vec<usize>>,
    pub backends: Vec<BackendKind>,
    pub ranks: Vec<usize>,
    pub inits: Vec<InitMethod>,
    /// Hierarchy branchings; an empty list means the leading `d - 1` row
    /// factors.
    pub branchings: Vec<Vec<usize>>,
    pub orders: Vec<NodeOrder>,
    pub seeds: Vec<u64>,
    pub train: TrainSettings,
}

impl Default for MatrixSpec {
    fn default() -> Self {
        MatrixSpec {
            graph: SbmParams::default(),
            emb_dim: 16,
            num_cores: 3,
            row_factors: None,
            col_factors: None,
            backends: vec![BackendKind::Tt],
            ranks: vec![4],
            inits: vec![InitMethod::OrthoCore],
            branchings: Vec::new(),
            orders: vec![NodeOrder::NoPerm],
            seeds: vec![0],
            train: TrainSettings::default(),
        }
    }
}

impl MatrixSpec {
    /// The desk-scale homophily benchmark: SBM(1000, 10, 0.08, 0.002),
    /// three cores with row factors (10, 10, 10), an 8-wide embedding split
    /// as (2, 4, 1), rank 4 orthogonal-core init, two-level hierarchy
    /// (10, 10) and the default training settings.
    pub fn benchmark() -> Self {
        MatrixSpec {
            emb_dim: 8,
            row_factors: Some(vec![10, 10, 10]),
            col_factors: Some(vec![2, 4, 1]),
            branchings: vec![vec![10, 10]],
            ..MatrixSpec::default()
        }
    }

    /// TT shape for `rank`, shared by every TT cell.
    pub fn tt_config(&self, rank: usize) -> Result<TtConfig> {
        let ranks = uniform_ranks(self.num_cores, rank);
        let planned = plan_factorization(self.graph.num_nodes, self.emb_dim, self.num_cores, ranks.clone(), true)?;
        let rows = self.row_factors.clone().unwrap_or_else(|| planned.row_factors().to_vec());
        let cols = self.col_factors.clone().unwrap_or_else(|| planned.col_factors().to_vec());
        TtConfig::new(self.graph.num_nodes, self.emb_dim, rows, cols, ranks)
    }

    fn default_branching(&self) -> Result<Vec<usize>> {
        let rows = match &self.row_factors {
            Some(r) => r.clone(),
            None => self.tt_config(1)?.row_factors().to_vec(),
        };
        Ok(rows[..rows.len().saturating_sub(1).max(1)].to_vec())
    }

    /// All distinct cells of the grid. Axes that do not apply to a cell
    /// (rank and init for the dense table, branching for shuffled order)
    /// are collapsed.
    pub fn cells(&self) -> Result<Vec<CellKey>> {
        let branchings = if self.branchings.is_empty() {
            vec![self.default_branching()?]
        } else {
            self.branchings.clone()
        };
        let mut out: Vec<CellKey> = Vec::new();
        for &backend in &self.backends {
            for &order in &self.orders {
                let bs: Vec<Option<Vec<usize>>> = if order == NodeOrder::Shuffled {
                    vec![None]
                } else {
                    branchings.iter().cloned().map(Some).collect()
                };
                for branching in bs {
                    let ri: Vec<(Option<usize>, Option<InitMethod>)> = match backend {
                        BackendKind::Full => vec![(None, None)],
                        BackendKind::Tt => self
                            .ranks
                            .iter()
                            .flat_map(|&r| self.inits.iter().map(move |&i| (Some(r), Some(i))))
                            .collect(),
                    };
                    for (rank, init) in ri {
                        let key = CellKey {
                            backend,
                            rank,
                            init,
                            branching: branching.clone(),
                            order,
                        };
                        if !out.contains(&key) {
                            out.push(key);
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CellKey {
    pub backend: BackendKind,
    pub rank: Option<usize>,
    pub init: Option<InitMethod>,
    pub branching: Option<Vec<usize>>,
    pub order: NodeOrder,
}

/// Generate, shuffle and (optionally) reorder the benchmark graph for one
/// seed.
pub fn prepare_graph(params: &SbmParams, order: NodeOrder, branching: Option<&[usize]>, seed: u64) -> Result<CsrGraph> {
    let g = generate_sbm(params.num_nodes, params.num_blocks, params.p_in, params.p_out, seed)?;
    arrange_nodes(&g, order, branching, seed)
}

/// Shuffle `graph` and then lay it out in `order`, with the same seed
/// streams as [`prepare_graph`].
pub fn arrange_nodes(graph: &CsrGraph, order: NodeOrder, branching: Option<&[usize]>, seed: u64) -> Result<CsrGraph> {
    let (g, _) = shuffle_nodes(graph, rng::derive_seed(seed, SHUFFLE_STREAM))?;
    let Some(level) = order.perm_level() else {
        return Ok(g);
    };
    let branching = branching.ok_or_else(|| Error::InvalidConfig(format!("{order} needs a branching")))?;
    let h = build_hierarchy(&g, branching, rng::derive_seed(seed, PARTITION_STREAM))?;
    let perm = permute_level(&h, level, rng::derive_seed(seed, LEVEL_STREAM))?;
    g.permuted(&perm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    /// Test accuracy at the best validation epoch.
    pub test_acc: f64,
    pub best_epoch: usize,
    pub seconds_per_epoch: f64,
    pub history: Vec<EpochMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub key: CellKey,
    pub emb_params: usize,
    pub model_params: usize,
    pub runs: Vec<RunRecord>,
    pub mean_acc: f64,
    pub std_acc: f64,
    pub seconds_per_epoch: f64,
    pub error: Option<String>,
}

impl CellReport {
    pub fn accuracies(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.test_acc).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixReport {
    pub spec: MatrixSpec,
    pub cells: Vec<CellReport>,
}

impl MatrixReport {
    pub fn failed(&self) -> impl Iterator<Item = &CellReport> {
        self.cells.iter().filter(|c| c.error.is_some())
    }

    pub fn find(&self, pred: impl Fn(&CellKey) -> bool) -> Option<&CellReport> {
        self.cells.iter().find(|c| pred(&c.key))
    }

    /// One row per cell.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "backend,rank,init,branching,order,seeds,emb_params,model_params,mean_acc,std_acc,sec_per_epoch,error\n",
        );
        for c in &self.cells {
            let k = &c.key;
            let opt = |x: Option<String>| x.unwrap_or_default();
            writeln!(
                s,
                "{},{},{},{},{},{},{},{},{:.6},{:.6},{:.6},{}",
                k.backend,
                opt(k.rank.map(|r| r.to_string())),
                opt(k.init.map(|i| i.to_string())),
                opt(k.branching.as_ref().map(|b| {
                    b.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("x")
                })),
                k.order,
                c.runs.len(),
                c.emb_params,
                c.model_params,
                c.mean_acc,
                c.std_acc,
                c.seconds_per_epoch,
                c.error.as_deref().unwrap_or("").replace([',', '\n'], ";"),
            )
            .unwrap();
        }
        s
    }
}

/// Sample mean and standard deviation (n - 1 denominator; 0 for one value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Root mean square of the per-arm standard deviations.
pub fn pooled_std(stds: &[f64]) -> f64 {
    (stds.iter().map(|s| s * s).sum::<f64>() / stds.len() as f64).sqrt()
}

/// Training config for one cell and seed on a prepared graph.
pub fn cell_train_config(spec: &MatrixSpec, key: &CellKey, seed: u64) -> Result<TrainConfig> {
    let backend = match key.backend {
        BackendKind::Full => BackendSpec::Full {
            rows: spec.graph.num_nodes,
            dim: spec.emb_dim,
            init_std: spec.train.full_init_std,
            seed: rng::derive_seed(seed, INIT_STREAM),
        },
        BackendKind::Tt => {
            let rank = key.rank.ok_or_else(|| Error::InvalidConfig("TT cell without rank".into()))?;
            let method = key.init.ok_or_else(|| Error::InvalidConfig("TT cell without init".into()))?;
            BackendSpec::Tt {
                config: spec.tt_config(rank)?,
                init: InitSpec::new(method, rng::derive_seed(seed, INIT_STREAM)).with_std(spec.train.gaussian_std),
            }
        }
    };
    let t = &spec.train;
    Ok(TrainConfig {
        layer_type: t.layer_type,
        num_layers: t.num_layers,
        hidden_dim: t.hidden_dim,
        epochs: t.epochs,
        optimizer: t.optimizer,
        patience: t.patience,
        seed,
        backend,
    })
}

/// Train one cell for one seed.
pub fn run_cell(spec: &MatrixSpec, key: &CellKey, seed: u64) -> Result<(RunRecord, usize, usize)> {
    let graph = prepare_graph(&spec.graph, key.order, key.branching.as_deref(), seed)?;
    let config = cell_train_config(spec, key, seed)?;
    let state = train(&graph, &config)?;
    let best = state.best_epoch();
    Ok((
        RunRecord {
            seed,
            test_acc: best.test_acc,
            best_epoch: best.epoch,
            seconds_per_epoch: state.seconds_per_epoch(),
            history: state.history().to_vec(),
        },
        state.backend.num_params(),
        state.model.num_params(),
    ))
}

/// Train every (cell, seed) pair. Pairs run on the rayon pool; a failing
/// cell is reported and the rest of the grid continues.
pub fn run_experiment_matrix(spec: &MatrixSpec) -> Result<MatrixReport> {
    if spec.seeds.is_empty() {
        return Err(Error::InvalidConfig("experiment needs at least one seed".into()));
    }
    let cells = spec.cells()?;
    let jobs: Vec<(usize, u64)> = (0..cells.len())
        .flat_map(|c| spec.seeds.iter().map(move |&s| (c, s)))
        .collect();
    let results: Vec<Result<(RunRecord, usize, usize)>> =
        jobs.par_iter().map(|&(c, s)| run_cell(spec, &cells[c], s)).collect();

    let mut reports = Vec::with_capacity(cells.len());
    let mut results = results.into_iter();
    for key in cells {
        let mut runs = Vec::new();
        let mut error = None;
        let (mut emb_params, mut model_params) = (0, 0);
        for &seed in &spec.seeds {
            match results.next().expect("one result per job") {
                Ok((run, e, m)) => {
                    emb_params = e;
                    model_params = m;
                    runs.push(run);
                }
                Err(err) => {
                    error.get_or_insert_with(|| format!("seed {seed}: {err}"));
                }
            }
        }
        let accs: Vec<f64> = runs.iter().map(|r| r.test_acc).collect();
        let (mean_acc, std_acc) = if error.is_some() { (f64::NAN, f64::NAN) } else { mean_std(&accs) };
        let seconds_per_epoch = if runs.is_empty() {
            0.0
        } else {
            runs.iter().map(|r| r.seconds_per_epoch).sum::<f64>() / runs.len() as f64
        };
        reports.push(CellReport {
            key,
            emb_params,
            model_params,
            runs,
            mean_acc,
            std_acc,
            seconds_per_epoch,
            error,
        });
    }
    Ok(MatrixReport {
        spec: spec.clone(),
        cells: reports,
    })
}
