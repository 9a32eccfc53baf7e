use ndarray::{Array1, Array2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::CsrGraph;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerType {
    /// `h' = h W_self + mean_{u in N(v)} h_u W_neigh + b`
    GraphsageMean,
    /// `h' = D^-1/2 (A + I) D^-1/2 h W + b`
    Gcn,
}

impl std::str::FromStr for LayerType {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "graphsage" | "graphsage_mean" | "graphsage-mean" | "sage" => Ok(LayerType::GraphsageMean),
            "gcn" => Ok(LayerType::Gcn),
            other => Err(Error::InvalidConfig(format!("unknown layer type {other:?}"))),
        }
    }
}

impl std::fmt::Display for LayerType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LayerType::GraphsageMean => "graphsage_mean",
            LayerType::Gcn => "gcn",
        })
    }
}

/// Mean over neighbors; an isolated node gets the zero vector.
pub fn mean_aggregate(graph: &CsrGraph, h: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(h.raw_dim());
    for v in 0..graph.num_nodes() {
        let nbrs = graph.neighbors(v);
        if nbrs.is_empty() {
            continue;
        }
        let mut row = out.row_mut(v);
        for &u in nbrs {
            row += &h.row(u);
        }
        row /= nbrs.len() as f64;
    }
    out
}

/// Transpose of [`mean_aggregate`].
fn mean_aggregate_t(graph: &CsrGraph, g: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(g.raw_dim());
    for v in 0..graph.num_nodes() {
        let nbrs = graph.neighbors(v);
        if nbrs.is_empty() {
            continue;
        }
        let scaled = &g.row(v) / nbrs.len() as f64;
        for &u in nbrs {
            let mut row = out.row_mut(u);
            row += &scaled;
        }
    }
    out
}

/// Symmetric normalized aggregation with self loops. The operator is
/// symmetric, so it is its own transpose.
pub fn gcn_aggregate(graph: &CsrGraph, h: &Array2<f64>) -> Array2<f64> {
    let n = graph.num_nodes();
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|v| 1.0 / ((graph.degree(v) + 1) as f64).sqrt())
        .collect();
    let mut out = Array2::zeros(h.raw_dim());
    for v in 0..n {
        let mut row = out.row_mut(v);
        row.scaled_add(inv_sqrt[v] * inv_sqrt[v], &h.row(v));
        for &u in graph.neighbors(v) {
            row.scaled_add(inv_sqrt[v] * inv_sqrt[u], &h.row(u));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `in x out`; the only weight of a GCN layer.
    pub w_self: Array2<f64>,
    /// `in x out`, GraphSage only.
    pub w_neigh: Option<Array2<f64>>,
    pub bias: Array1<f64>,
}

impl Layer {
    fn in_dim(&self) -> usize {
        self.w_self.nrows()
    }

    fn out_dim(&self) -> usize {
        self.w_self.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GnnModel {
    pub layer_type: LayerType,
    pub layers: Vec<Layer>,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Array2<f64>>,
    aggregated: Vec<Array2<f64>>,
    pre_activations: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn logits(&self) -> &Array2<f64> {
        self.pre_activations.last().expect("at least one layer")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub layers: Vec<Layer>,
}

impl ModelGrads {
    pub fn slices(&self) -> Vec<&[f64]> {
        layer_slices(&self.layers)
    }
}

fn layer_slices(layers: &[Layer]) -> Vec<&[f64]> {
    let mut out = Vec::new();
    for l in layers {
        out.push(l.w_self.as_slice().expect("standard layout"));
        if let Some(w) = &l.w_neigh {
            out.push(w.as_slice().expect("standard layout"));
        }
        out.push(l.bias.as_slice().expect("standard layout"));
    }
    out
}

impl GnnModel {
    /// Layer widths `dims[0] -> dims[1] -> ... -> dims[L]`, Glorot-uniform
    /// weights and zero biases.
    pub fn new(layer_type: LayerType, dims: &[usize], seed: u64) -> Result<Self> {
        Self::validate_dims(dims)?;
        let mut rng = rng::seeded(seed);
        let mut glorot = |rows: usize, cols: usize| {
            let a = (6.0 / (rows + cols) as f64).sqrt();
            Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-a..a))
        };
        let layers = dims
            .windows(2)
            .map(|w| Layer {
                w_self: glorot(w[0], w[1]),
                w_neigh: (layer_type == LayerType::GraphsageMean).then(|| glorot(w[0], w[1])),
                bias: Array1::zeros(w[1]),
            })
            .collect();
        Ok(GnnModel { layer_type, layers })
    }

    pub fn zeros(layer_type: LayerType, dims: &[usize]) -> Result<Self> {
        Self::validate_dims(dims)?;
        let layers = dims
            .windows(2)
            .map(|w| Layer {
                w_self: Array2::zeros((w[0], w[1])),
                w_neigh: (layer_type == LayerType::GraphsageMean).then(|| Array2::zeros((w[0], w[1]))),
                bias: Array1::zeros(w[1]),
            })
            .collect();
        Ok(GnnModel { layer_type, layers })
    }

    fn validate_dims(dims: &[usize]) -> Result<()> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "layer widths must be at least two positive sizes, got {dims:?}"
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").out_dim()
    }

    pub fn num_params(&self) -> usize {
        layer_slices(&self.layers).iter().map(|s| s.len()).sum()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(l.w_self.as_slice_mut().expect("standard layout"));
            if let Some(w) = &mut l.w_neigh {
                out.push(w.as_slice_mut().expect("standard layout"));
            }
            out.push(l.bias.as_slice_mut().expect("standard layout"));
        }
        out
    }

    fn aggregate(&self, graph: &CsrGraph, h: &Array2<f64>) -> Array2<f64> {
        match self.layer_type {
            LayerType::GraphsageMean => mean_aggregate(graph, h),
            LayerType::Gcn => gcn_aggregate(graph, h),
        }
    }

    fn aggregate_t(&self, graph: &CsrGraph, g: &Array2<f64>) -> Array2<f64> {
        match self.layer_type {
            LayerType::GraphsageMean => mean_aggregate_t(graph, g),
            LayerType::Gcn => gcn_aggregate(graph, g),
        }
    }

    /// Full-graph forward pass. `h0` holds one input row per node.
    pub fn forward(&self, graph: &CsrGraph, h0: &Array2<f64>) -> Result<ForwardCache> {
        if h0.dim() != (graph.num_nodes(), self.input_dim()) {
            return Err(Error::ShapeMismatch(format!(
                "input features are {:?}, model expects ({}, {})",
                h0.dim(),
                graph.num_nodes(),
                self.input_dim()
            )));
        }
        let last = self.layers.len() - 1;
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(self.layers.len()),
            aggregated: Vec::with_capacity(self.layers.len()),
            pre_activations: Vec::with_capacity(self.layers.len()),
        };
        let mut h = h0.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let agg = self.aggregate(graph, &h);
            let mut z = match &layer.w_neigh {
                Some(wn) => h.dot(&layer.w_self) + agg.dot(wn),
                None => agg.dot(&layer.w_self),
            };
            z += &layer.bias;
            let next = if l < last { z.mapv(|x| x.max(0.0)) } else { z.clone() };
            cache.inputs.push(h);
            cache.aggregated.push(agg);
            cache.pre_activations.push(z);
            h = next;
        }
        Ok(cache)
    }

    /// Gradients of the weights and of the input features given the
    /// gradient of the loss with respect to the logits.
    pub fn backward(&self, graph: &CsrGraph, cache: &ForwardCache, dlogits: &Array2<f64>) -> (ModelGrads, Array2<f64>) {
        let mut grads: Vec<Layer> = Vec::with_capacity(self.layers.len());
        let mut dz = dlogits.clone();
        let mut dx = Array2::zeros((0, 0));
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let x = &cache.inputs[l];
            let agg = &cache.aggregated[l];
            let bias = dz.sum_axis(Axis(0));
            let (w_self, w_neigh) = match &layer.w_neigh {
                Some(wn) => {
                    let gs = x.t().dot(&dz);
                    let gn = agg.t().dot(&dz);
                    dx = dz.dot(&layer.w_self.t()) + self.aggregate_t(graph, &dz.dot(&wn.t()));
                    (gs, Some(gn))
                }
                None => {
                    let gs = agg.t().dot(&dz);
                    dx = self.aggregate_t(graph, &dz.dot(&layer.w_self.t()));
                    (gs, None)
                }
            };
            grads.push(Layer {
                w_self,
                w_neigh,
                bias,
            });
            if l > 0 {
                let z_prev = &cache.pre_activations[l - 1];
                dz = &dx * &z_prev.mapv(|z| if z > 0.0 { 1.0 } else { 0.0 });
            }
        }
        grads.reverse();
        (ModelGrads { layers: grads }, dx)
    }
}

/// Mean softmax cross-entropy over `nodes` and its gradient with respect to
/// all logits (rows outside `nodes` get zero).
pub fn softmax_cross_entropy(logits: &Array2<f64>, labels: &[usize], nodes: &[usize]) -> (f64, Array2<f64>) {
    let mut grad = Array2::zeros(logits.raw_dim());
    if nodes.is_empty() {
        return (0.0, grad);
    }
    let scale = 1.0 / nodes.len() as f64;
    let mut loss = 0.0;
    for &v in nodes {
        let row = logits.row(v);
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let exp: Vec<f64> = row.iter().map(|&z| (z - max).exp()).collect();
        let sum: f64 = exp.iter().sum();
        let y = labels[v];
        loss += sum.ln() + max - row[y];
        let mut g = grad.row_mut(v);
        for (c, e) in exp.iter().enumerate() {
            g[c] = scale * (e / sum - if c == y { 1.0 } else { 0.0 });
        }
    }
    (loss * scale, grad)
}

/// Fraction of `nodes` whose arg-max logit equals the label. Ties go to the
/// lowest class id.
pub fn accuracy(logits: &Array2<f64>, labels: &[usize], nodes: &[usize]) -> f64 {
    if nodes.is_empty() {
        return 0.0;
    }
    let correct = nodes
        .iter()
        .filter(|&&v| argmax(logits.row(v).iter().copied()) == labels[v])
        .count();
    correct as f64 / nodes.len() as f64
}

fn argmax(xs: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, x) in xs.enumerate() {
        if x > best.1 {
            best = (i, x);
        }
    }
    best.0
}
