use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::backend::{BackendSpec, EmbeddingBackend};
use super::model::{accuracy, softmax_cross_entropy, GnnModel, LayerType};
use crate::error::{Error, Result};
use crate::grad::{OptimizerConfig, OptimizerState};
use crate::graph::{CsrGraph, Split};
use crate::rng;

const MODEL_STREAM: u64 = 0x6e6e_0001;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub layer_type: LayerType,
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub epochs: usize,
    /// Used for the model weights and the embedding parameters alike.
    pub optimizer: OptimizerConfig,
    /// Stop once validation accuracy has not improved for this many epochs.
    #[serde(default)]
    pub patience: Option<usize>,
    pub seed: u64,
    pub backend: BackendSpec,
}

impl TrainConfig {
    pub fn new(backend: BackendSpec, seed: u64) -> Self {
        TrainConfig {
            layer_type: LayerType::GraphsageMean,
            num_layers: 2,
            hidden_dim: 16,
            epochs: 300,
            optimizer: OptimizerConfig::default(),
            patience: None,
            seed,
            backend,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    /// Wall-clock seconds of the optimization step; zero for epoch 0.
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
    pub count: usize,
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub config: TrainConfig,
    pub model: GnnModel,
    pub backend: EmbeddingBackend,
    pub model_opt: OptimizerState,
    pub emb_opt: OptimizerState,
    pub epoch: usize,
    history: Vec<EpochMetrics>,
    all_nodes: Vec<usize>,
}

struct Splits {
    train: Vec<usize>,
    val: Vec<usize>,
    test: Vec<usize>,
}

fn splits(graph: &CsrGraph) -> Result<Splits> {
    Ok(Splits {
        train: graph.split_nodes(Split::Train)?,
        val: graph.split_nodes(Split::Val)?,
        test: graph.split_nodes(Split::Test)?,
    })
}

fn labels(graph: &CsrGraph) -> Result<&[usize]> {
    graph
        .labels()
        .ok_or_else(|| Error::Graph("graph has no labels".into()))
}

impl TrainState {
    /// Build the backend from the config and initialize the model.
    pub fn new(graph: &CsrGraph, config: &TrainConfig) -> Result<Self> {
        let backend = EmbeddingBackend::build(&config.backend)?;
        Self::with_backend(graph, config, backend)
    }

    /// Use an already constructed backend; the model is still initialized
    /// from `config.seed`.
    pub fn with_backend(graph: &CsrGraph, config: &TrainConfig, backend: EmbeddingBackend) -> Result<Self> {
        if backend.num_rows() != graph.num_nodes() {
            return Err(Error::ShapeMismatch(format!(
                "embedding has {} rows, graph has {} nodes",
                backend.num_rows(),
                graph.num_nodes()
            )));
        }
        if config.num_layers == 0 {
            return Err(Error::InvalidConfig("num_layers must be positive".into()));
        }
        let classes = graph.num_classes();
        if classes == 0 {
            return Err(Error::Graph("graph has no labels".into()));
        }
        let mut dims = vec![backend.dim()];
        dims.extend(std::iter::repeat_n(config.hidden_dim, config.num_layers - 1));
        dims.push(classes);
        let model_seed = rng::derive_seed(config.seed, MODEL_STREAM);
        let model = GnnModel::new(config.layer_type, &dims, model_seed)?;
        let mut state = TrainState {
            config: config.clone(),
            model,
            backend,
            model_opt: OptimizerState::new(config.optimizer),
            emb_opt: OptimizerState::new(config.optimizer),
            epoch: 0,
            history: Vec::new(),
            all_nodes: (0..graph.num_nodes()).collect(),
        };
        let m = state.metrics(graph, 0.0)?;
        state.history.push(m);
        Ok(state)
    }

    pub fn history(&self) -> &[EpochMetrics] {
        &self.history
    }

    /// Logits for every node.
    pub fn logits(&self, graph: &CsrGraph) -> Result<ndarray::Array2<f64>> {
        let h0 = self.backend.lookup(&self.all_nodes)?;
        Ok(self.model.forward(graph, &h0)?.logits().clone())
    }

    fn metrics(&self, graph: &CsrGraph, seconds: f64) -> Result<EpochMetrics> {
        let logits = self.logits(graph)?;
        let y = labels(graph)?;
        let s = splits(graph)?;
        Ok(EpochMetrics {
            epoch: self.epoch,
            train_loss: softmax_cross_entropy(&logits, y, &s.train).0,
            train_acc: accuracy(&logits, y, &s.train),
            val_loss: softmax_cross_entropy(&logits, y, &s.val).0,
            val_acc: accuracy(&logits, y, &s.val),
            test_acc: accuracy(&logits, y, &s.test),
            seconds,
        })
    }

    /// One full-batch optimization step followed by evaluation.
    pub fn step(&mut self, graph: &CsrGraph) -> Result<&EpochMetrics> {
        let start = Instant::now();
        let y = labels(graph)?;
        let train = graph.split_nodes(Split::Train)?;
        if train.is_empty() {
            return Err(Error::EmptySplit("train".into()));
        }
        let h0 = self.backend.lookup(&self.all_nodes)?;
        let cache = self.model.forward(graph, &h0)?;
        let (loss, dlogits) = softmax_cross_entropy(cache.logits(), y, &train);
        if !loss.is_finite() {
            return Err(Error::Diverged {
                epoch: self.epoch + 1,
                loss,
            });
        }
        let (model_grads, dh0) = self.model.backward(graph, &cache, &dlogits);
        let emb_grads = self.backend.backward(&self.all_nodes, dh0.view())?;
        self.model_opt
            .step(&mut self.model.params_mut(), &model_grads.slices())
            .map_err(|e| diverged(e, self.epoch + 1, loss))?;
        self.emb_opt
            .step(&mut self.backend.params_mut(), &emb_grads.slices())
            .map_err(|e| diverged(e, self.epoch + 1, loss))?;
        self.epoch += 1;
        let seconds = start.elapsed().as_secs_f64();
        let m = self.metrics(graph, seconds)?;
        if !m.train_loss.is_finite() {
            return Err(Error::Diverged {
                epoch: self.epoch,
                loss: m.train_loss,
            });
        }
        self.history.push(m);
        Ok(self.history.last().expect("just pushed"))
    }

    /// Epoch with the highest validation accuracy (earliest on ties).
    pub fn best_epoch(&self) -> &EpochMetrics {
        let mut best = &self.history[0];
        for m in &self.history[1..] {
            if m.val_acc > best.val_acc {
                best = m;
            }
        }
        best
    }

    /// Test accuracy at the best validation epoch.
    pub fn selected_test_accuracy(&self) -> f64 {
        self.best_epoch().test_acc
    }

    /// Mean wall-clock seconds per optimization step.
    pub fn seconds_per_epoch(&self) -> f64 {
        let steps = &self.history[1..];
        if steps.is_empty() {
            0.0
        } else {
            steps.iter().map(|m| m.seconds).sum::<f64>() / steps.len() as f64
        }
    }
}

fn diverged(e: Error, epoch: usize, loss: f64) -> Error {
    match e {
        Error::NonFiniteGradient { .. } => Error::Diverged { epoch, loss },
        other => other,
    }
}

/// Run `config.epochs` full-batch epochs (or fewer with early stopping).
pub fn train(graph: &CsrGraph, config: &TrainConfig) -> Result<TrainState> {
    let mut state = TrainState::new(graph, config)?;
    run_epochs(&mut state, graph)?;
    Ok(state)
}

/// Continue training an existing state up to `state.config.epochs`.
pub fn run_epochs(state: &mut TrainState, graph: &CsrGraph) -> Result<()> {
    while state.epoch < state.config.epochs {
        state.step(graph)?;
        if let Some(patience) = state.config.patience {
            if state.epoch - state.best_epoch().epoch >= patience {
                break;
            }
        }
    }
    Ok(())
}

/// Accuracy and loss on one split. Does not modify the state.
pub fn evaluate(state: &TrainState, graph: &CsrGraph, split: Split) -> Result<Evaluation> {
    let nodes = graph.split_nodes(split)?;
    if nodes.is_empty() {
        return Err(Error::EmptySplit(split.to_string()));
    }
    let logits = state.logits(graph)?;
    let y = labels(graph)?;
    Ok(Evaluation {
        accuracy: accuracy(&logits, y, &nodes),
        loss: softmax_cross_entropy(&logits, y, &nodes).0,
        count: nodes.len(),
    })
}
