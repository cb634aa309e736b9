//! Embedding statistics used by `gcec inspect`.

use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::graph::{normalize_adjacency, GridGraph};
use crate::layers::{record_forward, GraphContext, ModelConfig, ModelParams};
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Mean Euclidean distance over all unordered pairs of rows; zero for fewer
/// than two rows.
pub fn mean_pairwise_distance(h: &Tensor<f64>) -> f64 {
    let n = h.shape().dims()[0];
    if n < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..n {
        let a = h.row(i);
        for j in i + 1..n {
            let d2: f64 = a.iter().zip(h.row(j)).map(|(x, y)| (x - y) * (x - y)).sum();
            total += d2.sqrt();
        }
    }
    total / (n * (n - 1) / 2) as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` boundaries; the last bin is closed on the right.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Equal-width histogram of values in `[lo, hi]`; values outside are
/// clamped into the end bins.
pub fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Histogram {
    let bins = bins.max(1);
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins).map(|k| lo + (hi - lo) * k as f64 / bins as f64).collect();
    let mut counts = vec![0; bins];
    for &v in values {
        let k = ((v - lo) / width).floor();
        let k = if k.is_nan() { 0 } else { (k.max(0.0) as usize).min(bins - 1) };
        counts[k] += 1;
    }
    Histogram { edges, counts }
}

/// Mean pairwise node distance after `0..=layers` applications of the
/// unweighted normalized grid adjacency with identity weights and no
/// nonlinearity.
pub fn oversmoothing_probe(grid: &GridGraph, features: &Tensor<f64>, layers: usize) -> Result<Vec<f64>, ModelError> {
    let adj = normalize_adjacency::<f64>(grid, None)?;
    let mut h = features.clone();
    let mut out = vec![mean_pairwise_distance(&h)];
    for _ in 0..layers {
        h = adj.matrix().spmm(&h)?;
        out.push(mean_pairwise_distance(&h));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerStat {
    pub layer: String,
    pub width: usize,
    pub mean_pairwise_distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Inspection {
    pub layers: Vec<LayerStat>,
    pub edge_weights: Histogram,
    pub edge_weight_min: f64,
    pub edge_weight_max: f64,
    pub oversmoothing_probe: Vec<f64>,
    pub logits: Vec<f64>,
}

/// Per-layer embedding spread, edge-weight distribution and the
/// over-smoothing probe for one image's node features.
pub fn inspect(
    ctx: &GraphContext,
    config: &ModelConfig,
    params: &ModelParams<f32>,
    x: &Tensor<f64>,
    bins: usize,
    probe_layers: usize,
) -> Result<Inspection, ModelError> {
    let params = params.cast::<f64>();
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let trace = record_forward(&mut tape, ctx, config, &bound, x)?;
    let mut layers = vec![LayerStat {
        layer: "input".into(),
        width: config.channels,
        mean_pairwise_distance: mean_pairwise_distance(x),
    }];
    let named = [
        ("edge_conv", trace.edge_conv),
        ("gcn.0", trace.gcn[0]),
        ("gcn.1", trace.gcn[1]),
        ("gcn.2", trace.gcn[2]),
    ];
    for (name, var) in named {
        let h = tape.value(var);
        layers.push(LayerStat {
            layer: name.into(),
            width: h.shape().dims()[1],
            mean_pairwise_distance: mean_pairwise_distance(h),
        });
    }
    let weights = tape.value(trace.edge_weights).data().to_vec();
    let grid = ctx
        .grid()
        .ok_or_else(|| ModelError::Config("inspection needs a grid graph".into()))?;
    let oversmoothing_probe = oversmoothing_probe(grid, tape.value(trace.edge_conv), probe_layers)?;
    Ok(Inspection {
        layers,
        edge_weights: histogram(&weights, 0.0, 1.0, bins),
        edge_weight_min: weights.iter().copied().fold(f64::INFINITY, f64::min),
        edge_weight_max: weights.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        oversmoothing_probe,
        logits: tape.value(trace.logits).data().to_vec(),
    })
}
