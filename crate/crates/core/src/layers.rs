//! The GCNN-EC model: learned edge weights, edge convolution, three graph
//! convolutions and a dense head over the flattened node embeddings.
//!
//! Per image the forward pass is
//!
//! 1. node features `X` (pixels scaled to `[0, 1]`);
//! 2. scalar edge weights `w_ij = sigmoid(edge_mlp([x_i ‖ x_j ‖ ‖x_i − x_j‖]))`,
//!    averaged over both orientations of each 1-hop edge;
//! 3. `Â = D̃^{-1/2}(A_w + I)D̃^{-1/2}` from those weights (detached from the
//!    gradient unless `detach_edge_weights` is off);
//! 4. edge convolution `e_i = max_{j ∈ N(i)} mlp([x_i ‖ x_j − x_i])` over the
//!    1-hop (and optionally 2-hop) neighborhood;
//! 5. `H₁ = relu(ÂEW₁ + b₁)`, `H₂ = relu(ÂH₁W₂ + b₂)`, `H₃ = ÂH₂W₃ + b₃`;
//! 6. logits from a dense layer on `H₃` flattened in raster order.

use std::sync::Arc;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, TensorError};
use crate::graph::{Adjacency, Connectivity, GridCache, GridGraph};
use crate::sparse::{NormalizationLayout, SparseMatrix};
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::{Scalar, Shape, Tensor};

/// Stream id reserved for parameter initialization.
pub(crate) const INIT_STREAM: u64 = u64::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Max,
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

/// Hidden sizes of every learned map.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDims {
    /// Hidden width of the edge-convolution mlp.
    pub edge_hidden: usize,
    /// Output width of edge convolution.
    pub edge_out: usize,
    /// Hidden width of the scalar edge-weight mlp.
    pub weight_hidden: usize,
    /// Output widths of the three graph convolutions.
    pub gcn: [usize; 3],
}

impl Default for LayerDims {
    fn default() -> Self {
        LayerDims {
            edge_hidden: 32,
            edge_out: 16,
            weight_hidden: 16,
            gcn: [16, 16, 8],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub connectivity: Connectivity,
    pub edge_conv_hops: usize,
    pub detach_edge_weights: bool,
    pub aggregation: Aggregation,
    pub dims: LayerDims,
    pub n_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            height: 28,
            width: 28,
            channels: 1,
            connectivity: Connectivity::Four,
            edge_conv_hops: 2,
            detach_edge_weights: true,
            aggregation: Aggregation::Max,
            dims: LayerDims::default(),
            n_classes: 10,
        }
    }
}

impl ModelConfig {
    pub fn with_classes(n_classes: usize) -> Self {
        ModelConfig {
            n_classes,
            ..Self::default()
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.height * self.width
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let d = &self.dims;
        let sizes = [
            ("height", self.height),
            ("width", self.width),
            ("edge_hidden", d.edge_hidden),
            ("edge_out", d.edge_out),
            ("weight_hidden", d.weight_hidden),
            ("gcn[0]", d.gcn[0]),
            ("gcn[1]", d.gcn[1]),
            ("gcn[2]", d.gcn[2]),
            ("n_classes", self.n_classes),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::Config(format!("{name} must be at least 1")));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(ModelError::Config(format!("channels must be 1 or 3, got {}", self.channels)));
        }
        if !(1..=2).contains(&self.edge_conv_hops) {
            return Err(ModelError::Config(format!(
                "edge_conv_hops must be 1 or 2, got {}",
                self.edge_conv_hops
            )));
        }
        Ok(())
    }
}

/// `y = x·W + b` with `W` stored `in × out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Affine<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Affine<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Affine {
            weight: Tensor::zeros(Shape::Matrix(inputs, outputs)),
            bias: Tensor::zeros(Shape::Vector(outputs)),
        }
    }

    /// Weights and biases uniform in `±1/√inputs`.
    pub fn uniform(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        let mut draw = |n: usize| -> Vec<T> { (0..n).map(|_| T::from_f64(dist.sample(rng))).collect() };
        let w = draw(inputs * outputs);
        let b = draw(outputs);
        Affine {
            weight: Tensor::new(Shape::Matrix(inputs, outputs), w).expect("sized"),
            bias: Tensor::vector(b),
        }
    }

    pub fn from_parts(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self, TensorError> {
        let (_, out) = weight.shape().as_matrix().ok_or(TensorError::DimensionMismatch {
            op: "affine",
            left: weight.shape(),
            right: bias.shape(),
        })?;
        if bias.shape() != Shape::Vector(out) {
            return Err(TensorError::DimensionMismatch {
                op: "affine",
                left: weight.shape(),
                right: bias.shape(),
            });
        }
        Ok(Affine { weight, bias })
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape().as_matrix().map_or(0, |(i, _)| i)
    }

    pub fn outputs(&self) -> usize {
        self.bias.len()
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    /// Plain evaluation on a row-major batch.
    pub fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let b = self.bind(&mut tape, false);
        let y = b.apply(&mut tape, xv)?;
        Ok(tape.value(y).clone())
    }

    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> BoundAffine {
        BoundAffine {
            weight: tape.leaf(self.weight.clone(), trainable),
            bias: tape.leaf(self.bias.clone(), trainable),
        }
    }

    fn cast<U: Scalar>(&self) -> Affine<U> {
        Affine {
            weight: self.weight.cast(),
            bias: self.bias.cast(),
        }
    }
}

/// An [`Affine`] recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct BoundAffine {
    pub weight: Var,
    pub bias: Var,
}

impl BoundAffine {
    pub fn apply<T: Scalar>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var, TensorError> {
        let y = tape.matmul(x, self.weight)?;
        tape.add_bias(y, self.bias)
    }
}

/// Two affine maps with a ReLU between them.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    pub first: Affine<T>,
    pub second: Affine<T>,
}

impl<T: Scalar> Mlp<T> {
    fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> BoundMlp {
        BoundMlp {
            first: self.first.bind(tape, trainable),
            second: self.second.bind(tape, trainable),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundMlp {
    pub first: BoundAffine,
    pub second: BoundAffine,
}

impl BoundMlp {
    pub fn apply<T: Scalar>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var, TensorError> {
        let h = self.first.apply(tape, x)?;
        let h = tape.relu(h);
        self.second.apply(tape, h)
    }
}

/// Edge-convolution mlp (`2F → h_e → d_e`) and edge-weight filter
/// (`2F+1 → h_w → 1`, sigmoid output).
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeConvParams<T> {
    pub mlp: Mlp<T>,
    pub edge_mlp: Mlp<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GcnParams<T> {
    pub layers: [Affine<T>; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams<T> {
    pub affine: Affine<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub edge_conv: EdgeConvParams<T>,
    pub gcn: GcnParams<T>,
    pub head: HeadParams<T>,
}

/// Names of the learned maps, in checkpoint order.
pub const LAYER_NAMES: [&str; 8] = [
    "edge_conv.mlp.0",
    "edge_conv.mlp.1",
    "edge_conv.edge_mlp.0",
    "edge_conv.edge_mlp.1",
    "gcn.0",
    "gcn.1",
    "gcn.2",
    "head",
];

/// Indices into [`ModelParams::affines`] of the edge-weight filter.
pub const EDGE_MLP_LAYERS: [usize; 2] = [2, 3];

/// `(inputs, outputs)` of every map in [`LAYER_NAMES`] order.
pub fn layer_shapes(config: &ModelConfig) -> [(usize, usize); 8] {
    let f = config.channels;
    let d = &config.dims;
    [
        (2 * f, d.edge_hidden),
        (d.edge_hidden, d.edge_out),
        (2 * f + 1, d.weight_hidden),
        (d.weight_hidden, 1),
        (d.edge_out, d.gcn[0]),
        (d.gcn[0], d.gcn[1]),
        (d.gcn[1], d.gcn[2]),
        (config.n_nodes() * d.gcn[2], config.n_classes),
    ]
}

impl<T: Scalar> ModelParams<T> {
    /// Seeded uniform initialization.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(INIT_STREAM);
        let shapes = layer_shapes(config);
        let mut maps = shapes.iter().map(|&(i, o)| Affine::uniform(i, o, &mut rng));
        let mut next = || maps.next().expect("eight layers");
        Ok(ModelParams {
            edge_conv: EdgeConvParams {
                mlp: Mlp {
                    first: next(),
                    second: next(),
                },
                edge_mlp: Mlp {
                    first: next(),
                    second: next(),
                },
            },
            gcn: GcnParams {
                layers: [next(), next(), next()],
            },
            head: HeadParams { affine: next() },
        })
    }

    /// Rebuilds from the eight affine maps in [`LAYER_NAMES`] order.
    pub fn from_affines(affines: Vec<Affine<T>>) -> Result<Self, ModelError> {
        let got = affines.len();
        let arr: [Affine<T>; 8] = affines
            .try_into()
            .map_err(|_| ModelError::Config(format!("expected 8 affine maps, got {got}")))?;
        let [a, b, c, d, e, f, g, h] = arr;
        Ok(ModelParams {
            edge_conv: EdgeConvParams {
                mlp: Mlp { first: a, second: b },
                edge_mlp: Mlp { first: c, second: d },
            },
            gcn: GcnParams { layers: [e, f, g] },
            head: HeadParams { affine: h },
        })
    }

    pub fn affines(&self) -> [&Affine<T>; 8] {
        [
            &self.edge_conv.mlp.first,
            &self.edge_conv.mlp.second,
            &self.edge_conv.edge_mlp.first,
            &self.edge_conv.edge_mlp.second,
            &self.gcn.layers[0],
            &self.gcn.layers[1],
            &self.gcn.layers[2],
            &self.head.affine,
        ]
    }

    pub fn affines_mut(&mut self) -> [&mut Affine<T>; 8] {
        let [g0, g1, g2] = &mut self.gcn.layers;
        [
            &mut self.edge_conv.mlp.first,
            &mut self.edge_conv.mlp.second,
            &mut self.edge_conv.edge_mlp.first,
            &mut self.edge_conv.edge_mlp.second,
            g0,
            g1,
            g2,
            &mut self.head.affine,
        ]
    }

    /// Weight then bias of every map, in checkpoint order.
    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        self.affines().into_iter().flat_map(|a| [&a.weight, &a.bias]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.affines_mut()
            .into_iter()
            .flat_map(|a| [&mut a.weight, &mut a.bias])
            .collect()
    }

    pub fn tensor_names() -> Vec<String> {
        LAYER_NAMES
            .iter()
            .flat_map(|n| [format!("{n}.weight"), format!("{n}.bias")])
            .collect()
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams::from_affines(self.affines().iter().map(|a| a.cast()).collect()).expect("eight maps")
    }

    /// Checks every map against the shapes `config` implies.
    pub fn check_config(&self, config: &ModelConfig) -> Result<(), ModelError> {
        for ((name, a), (i, o)) in LAYER_NAMES.iter().zip(self.affines()).zip(layer_shapes(config)) {
            if a.inputs() != i || a.outputs() != o {
                return Err(ModelError::Config(format!(
                    "{name}: parameters are {}x{}, config implies {i}x{o}",
                    a.inputs(),
                    a.outputs()
                )));
            }
        }
        Ok(())
    }

    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> BoundParams {
        BoundParams {
            edge_mlp_conv: self.edge_conv.mlp.bind(tape, trainable),
            edge_weight_mlp: self.edge_conv.edge_mlp.bind(tape, trainable),
            gcn: [
                self.gcn.layers[0].bind(tape, trainable),
                self.gcn.layers[1].bind(tape, trainable),
                self.gcn.layers[2].bind(tape, trainable),
            ],
            head: self.head.affine.bind(tape, trainable),
        }
    }
}

/// [`ModelParams`] recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct BoundParams {
    pub edge_mlp_conv: BoundMlp,
    pub edge_weight_mlp: BoundMlp,
    pub gcn: [BoundAffine; 3],
    pub head: BoundAffine,
}

impl BoundParams {
    /// Tape handles of every tensor, in [`ModelParams::tensors`] order.
    pub fn vars(&self) -> Vec<Var> {
        let affines = [
            self.edge_mlp_conv.first,
            self.edge_mlp_conv.second,
            self.edge_weight_mlp.first,
            self.edge_weight_mlp.second,
            self.gcn[0],
            self.gcn[1],
            self.gcn[2],
            self.head,
        ];
        affines.iter().flat_map(|a| [a.weight, a.bias]).collect()
    }

    /// Gradients of every tensor in [`ModelParams::tensors`] order; zeros
    /// where nothing flowed.
    pub fn collect_grads<T: Scalar>(&self, tape: &Tape<T>, grads: &Gradients<T>) -> Vec<Vec<T>> {
        self.vars()
            .into_iter()
            .map(|v| grads.get_or_zeros(v, tape.value(v).len()))
            .collect()
    }
}

/// Per-layer parameter count.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCount {
    pub name: String,
    pub inputs: usize,
    pub outputs: usize,
    pub count: usize,
}

/// Σ over affine maps of `in·out + out`.
pub fn count_parameters<T: Scalar>(params: &ModelParams<T>) -> usize {
    params.affines().iter().map(|a| a.param_count()).sum()
}

pub fn parameter_breakdown(config: &ModelConfig) -> Vec<LayerCount> {
    LAYER_NAMES
        .iter()
        .zip(layer_shapes(config))
        .map(|(name, (i, o))| LayerCount {
            name: (*name).to_string(),
            inputs: i,
            outputs: o,
            count: i * o + o,
        })
        .collect()
}

/// Graph-side structure shared by every sample of one image shape.
#[derive(Debug)]
pub struct GraphContext {
    grid: Option<Arc<GridGraph>>,
    layout: Arc<NormalizationLayout>,
    /// Edge-weight filter rows: `(i, j)` for each edge, then `(j, i)`.
    weight_src: Vec<usize>,
    weight_dst: Vec<usize>,
    first_half: Arc<[usize]>,
    second_half: Arc<[usize]>,
    /// Edge-convolution pairs grouped by center node.
    conv_offsets: Arc<[usize]>,
    conv_center: Vec<usize>,
    conv_neighbor: Vec<usize>,
}

impl GraphContext {
    /// Context for a grid graph; `hops` selects the edge-convolution
    /// neighborhood.
    pub fn for_grid(grid: Arc<GridGraph>, hops: usize) -> Result<Self, ModelError> {
        let neighborhoods = Adjacency::from_lists(&grid.neighborhood(hops));
        let mut ctx = GraphContext::from_parts(grid.n_nodes(), grid.edges(), &neighborhoods)?;
        ctx.grid = Some(grid);
        Ok(ctx)
    }

    pub fn for_config(config: &ModelConfig, cache: &GridCache) -> Result<Self, ModelError> {
        config.validate()?;
        let grid = cache.get(config.height, config.width, config.connectivity)?;
        GraphContext::for_grid(grid, config.edge_conv_hops)
    }

    /// Context for an arbitrary undirected graph. `edges` carries the
    /// adjacency for graph convolution; `neighborhoods` the edge-convolution
    /// neighbor lists. Nodes with an empty neighborhood are paired with
    /// themselves, so their difference term is zero.
    pub fn from_parts(n_nodes: usize, edges: &[(usize, usize)], neighborhoods: &Adjacency) -> Result<Self, ModelError> {
        if neighborhoods.n_nodes() != n_nodes {
            return Err(ModelError::Config(format!(
                "neighborhoods cover {} nodes, graph has {n_nodes}",
                neighborhoods.n_nodes()
            )));
        }
        let layout = Arc::new(NormalizationLayout::new(n_nodes, edges)?);
        let e = edges.len();
        let mut weight_src = Vec::with_capacity(2 * e);
        let mut weight_dst = Vec::with_capacity(2 * e);
        for &(i, j) in edges {
            weight_src.push(i);
            weight_dst.push(j);
        }
        for &(i, j) in edges {
            weight_src.push(j);
            weight_dst.push(i);
        }
        let mut conv_offsets = Vec::with_capacity(n_nodes + 1);
        conv_offsets.push(0);
        let mut conv_center = Vec::with_capacity(neighborhoods.total() + n_nodes);
        let mut conv_neighbor = Vec::with_capacity(neighborhoods.total() + n_nodes);
        for i in 0..n_nodes {
            let nb = neighborhoods.neighbors(i);
            if nb.is_empty() {
                conv_center.push(i);
                conv_neighbor.push(i);
            }
            for &j in nb {
                if j >= n_nodes {
                    return Err(ModelError::Config(format!("neighbor {j} of node {i} out of range")));
                }
                conv_center.push(i);
                conv_neighbor.push(j);
            }
            conv_offsets.push(conv_center.len());
        }
        Ok(GraphContext {
            grid: None,
            layout,
            weight_src,
            weight_dst,
            first_half: (0..e).collect(),
            second_half: (e..2 * e).collect(),
            conv_offsets: conv_offsets.into(),
            conv_center,
            conv_neighbor,
        })
    }

    pub fn grid(&self) -> Option<&Arc<GridGraph>> {
        self.grid.as_ref()
    }

    pub fn layout(&self) -> &Arc<NormalizationLayout> {
        &self.layout
    }

    pub fn n_nodes(&self) -> usize {
        self.layout.n_nodes()
    }

    pub fn n_edges(&self) -> usize {
        self.layout.n_edges()
    }

    /// Number of (center, neighbor) rows edge convolution evaluates.
    pub fn n_conv_pairs(&self) -> usize {
        self.conv_center.len()
    }

    /// `[x_a ‖ x_b ‖ ‖x_a − x_b‖₂]` for every directed edge row.
    pub fn edge_weight_inputs<T: Scalar>(&self, x: &Tensor<T>) -> Tensor<T> {
        let f = x.shape().as_matrix().map_or(1, |(_, c)| c);
        let rows = self.weight_src.len();
        let mut data = Vec::with_capacity(rows * (2 * f + 1));
        for (&a, &b) in self.weight_src.iter().zip(&self.weight_dst) {
            let (xa, xb) = (x.row(a), x.row(b));
            data.extend_from_slice(xa);
            data.extend_from_slice(xb);
            let sq: T = xa.iter().zip(xb).map(|(&p, &q)| (p - q) * (p - q)).sum();
            data.push(sq.sqrt());
        }
        Tensor::new(Shape::Matrix(rows, 2 * f + 1), data).expect("sized")
    }

    /// `[x_i ‖ x_j − x_i]` for every edge-convolution pair.
    pub fn edge_conv_inputs<T: Scalar>(&self, x: &Tensor<T>) -> Tensor<T> {
        let f = x.shape().as_matrix().map_or(1, |(_, c)| c);
        let rows = self.conv_center.len();
        let mut data = Vec::with_capacity(rows * 2 * f);
        for (&i, &j) in self.conv_center.iter().zip(&self.conv_neighbor) {
            let (xi, xj) = (x.row(i), x.row(j));
            data.extend_from_slice(xi);
            data.extend(xj.iter().zip(xi).map(|(&b, &a)| b - a));
        }
        Tensor::new(Shape::Matrix(rows, 2 * f), data).expect("sized")
    }
}

/// Symmetrized per-edge weights on the tape, shape `E×1`.
pub fn record_edge_weights<T: Scalar>(
    tape: &mut Tape<T>,
    ctx: &GraphContext,
    edge_mlp: &BoundMlp,
    x: &Tensor<T>,
) -> Result<Var, TensorError> {
    let inputs = tape.constant(ctx.edge_weight_inputs(x));
    let z = edge_mlp.apply(tape, inputs)?;
    let s = tape.sigmoid(z);
    let forward = tape.gather_rows(s, Arc::clone(&ctx.first_half))?;
    let backward = tape.gather_rows(s, Arc::clone(&ctx.second_half))?;
    let both = tape.add(forward, backward)?;
    Ok(tape.scale(both, T::from_f64(0.5)))
}

/// Edge convolution on the tape, shape `n×d_e`.
pub fn record_edge_conv<T: Scalar>(
    tape: &mut Tape<T>,
    ctx: &GraphContext,
    mlp: &BoundMlp,
    x: &Tensor<T>,
    aggregation: Aggregation,
) -> Result<Var, TensorError> {
    let inputs = tape.constant(ctx.edge_conv_inputs(x));
    let h = mlp.apply(tape, inputs)?;
    match aggregation {
        Aggregation::Max => tape.segment_max(h, &ctx.conv_offsets),
        Aggregation::Mean => tape.segment_mean(h, Arc::clone(&ctx.conv_offsets)),
    }
}

/// `σ(Â·H·W + b)` on the tape; `adj_values` are the nonzeros of `Â` in the
/// layout of `ctx`.
pub fn record_gcn_layer<T: Scalar>(
    tape: &mut Tape<T>,
    ctx: &GraphContext,
    adj_values: Var,
    h: Var,
    affine: &BoundAffine,
    activation: Activation,
) -> Result<Var, TensorError> {
    let mixed = tape.spmm(ctx.layout.pattern(), adj_values, h)?;
    let y = affine.apply(tape, mixed)?;
    Ok(match activation {
        Activation::Relu => tape.relu(y),
        Activation::Identity => y,
    })
}

/// Handles to the intermediate results of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardTrace {
    /// Symmetrized edge weights as produced by the filter (`E×1`).
    pub edge_weights: Var,
    /// Nonzeros of the normalized adjacency.
    pub adjacency: Var,
    pub edge_conv: Var,
    pub gcn: [Var; 3],
    pub logits: Var,
}

/// Records the full forward pass for one image's node features.
pub fn record_forward<T: Scalar>(
    tape: &mut Tape<T>,
    ctx: &GraphContext,
    config: &ModelConfig,
    params: &BoundParams,
    x: &Tensor<T>,
) -> Result<ForwardTrace, ModelError> {
    let n = ctx.n_nodes();
    if x.shape() != Shape::Matrix(n, config.channels) {
        return Err(ModelError::Tensor(TensorError::DimensionMismatch {
            op: "forward",
            left: Shape::Matrix(n, config.channels),
            right: x.shape(),
        }));
    }
    let edge_weights = record_edge_weights(tape, ctx, &params.edge_weight_mlp, x)?;
    let used = if config.detach_edge_weights {
        let frozen = tape.value(edge_weights).clone();
        tape.constant(frozen)
    } else {
        edge_weights
    };
    let adjacency = tape.normalize_edges(used, &ctx.layout)?;
    let edge_conv = record_edge_conv(tape, ctx, &params.edge_mlp_conv, x, config.aggregation)?;
    let h1 = record_gcn_layer(tape, ctx, adjacency, edge_conv, &params.gcn[0], Activation::Relu)?;
    let h2 = record_gcn_layer(tape, ctx, adjacency, h1, &params.gcn[1], Activation::Relu)?;
    let h3 = record_gcn_layer(tape, ctx, adjacency, h2, &params.gcn[2], Activation::Identity)?;
    let width = tape.value(h3).len();
    let flat = tape.reshape(h3, Shape::Matrix(1, width))?;
    let logits = params.head.apply(tape, flat)?;
    Ok(ForwardTrace {
        edge_weights,
        adjacency,
        edge_conv,
        gcn: [h1, h2, h3],
        logits,
    })
}

/// Logits for one image, without recording gradients.
pub fn forward<T: Scalar>(
    ctx: &GraphContext,
    config: &ModelConfig,
    params: &ModelParams<T>,
    x: &Tensor<T>,
) -> Result<Vec<T>, ModelError> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let trace = record_forward(&mut tape, ctx, config, &bound, x)?;
    Ok(tape.value(trace.logits).data().to_vec())
}

/// Loss, logits and per-tensor gradients for one labelled image.
pub struct SampleGrad<T> {
    pub loss: T,
    pub logits: Vec<T>,
    pub grads: Vec<Vec<T>>,
}

pub fn sample_gradient<T: Scalar>(
    ctx: &GraphContext,
    config: &ModelConfig,
    params: &ModelParams<T>,
    x: &Tensor<T>,
    label: usize,
) -> Result<SampleGrad<T>, ModelError> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, true);
    let trace = record_forward(&mut tape, ctx, config, &bound, x)?;
    let loss = tape.softmax_cross_entropy(trace.logits, &[label])?;
    let loss_value = tape.value(loss).data()[0];
    let logits = tape.value(trace.logits).data().to_vec();
    let grads = tape.backward(loss)?;
    Ok(SampleGrad {
        loss: loss_value,
        logits,
        grads: bound.collect_grads(&tape, &grads),
    })
}

/// Learned weight of every 1-hop edge, in `ctx` edge order.
pub fn edge_weights<T: Scalar>(ctx: &GraphContext, params: &EdgeConvParams<T>, x: &Tensor<T>) -> Result<Vec<T>, TensorError> {
    let mut tape = Tape::new();
    let mlp = params.edge_mlp.bind(&mut tape, false);
    let w = record_edge_weights(&mut tape, ctx, &mlp, x)?;
    Ok(tape.value(w).data().to_vec())
}

/// Edge convolution evaluated directly.
pub fn edge_conv<T: Scalar>(
    ctx: &GraphContext,
    params: &EdgeConvParams<T>,
    x: &Tensor<T>,
    aggregation: Aggregation,
) -> Result<Tensor<T>, TensorError> {
    let mut tape = Tape::new();
    let mlp = params.mlp.bind(&mut tape, false);
    let out = record_edge_conv(&mut tape, ctx, &mlp, x, aggregation)?;
    Ok(tape.value(out).clone())
}

/// One graph convolution `σ(Â·H·W + b)` evaluated directly.
pub fn gcn_layer<T: Scalar>(
    adj: &SparseMatrix<T>,
    h: &Tensor<T>,
    affine: &Affine<T>,
    activation: Activation,
) -> Result<Tensor<T>, TensorError> {
    let mixed = adj.spmm(h)?;
    let mut tape = Tape::new();
    let m = tape.constant(mixed);
    let a = affine.bind(&mut tape, false);
    let y = a.apply(&mut tape, m)?;
    let y = match activation {
        Activation::Relu => tape.relu(y),
        Activation::Identity => y,
    };
    Ok(tape.value(y).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_grid, image_to_features};

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            height: 3,
            width: 3,
            n_classes: 2,
            dims: LayerDims {
                edge_hidden: 4,
                edge_out: 3,
                weight_hidden: 3,
                gcn: [3, 3, 2],
            },
            ..ModelConfig::default()
        }
    }

    #[test]
    fn default_parameter_counts() {
        let six = ModelParams::<f32>::init(&ModelConfig::with_classes(6), 0).unwrap();
        assert_eq!(count_parameters(&six), 39_023);
        let ten = ModelParams::<f32>::init(&ModelConfig::with_classes(10), 0).unwrap();
        assert_eq!(count_parameters(&ten), 64_115);
        let counts: Vec<usize> = parameter_breakdown(&ModelConfig::with_classes(6)).iter().map(|l| l.count).collect();
        assert_eq!(counts, vec![96, 528, 64, 17, 272, 272, 136, 37_638]);
    }

    #[test]
    fn single_affine_count() {
        let a = Affine::<f64>::zeros(3, 2);
        assert_eq!(a.param_count(), 8);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let c = tiny_config();
        let a = ModelParams::<f64>::init(&c, 11).unwrap();
        let b = ModelParams::<f64>::init(&c, 11).unwrap();
        let d = ModelParams::<f64>::init(&c, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, d);
        for (aff, (i, _)) in a.affines().iter().zip(layer_shapes(&c)) {
            let bound = 1.0 / (i as f64).sqrt();
            assert!(aff.weight.data().iter().chain(aff.bias.data()).all(|v| v.abs() <= bound));
        }
    }

    #[test]
    fn distance_column_is_euclidean() {
        let ctx = GraphContext::from_parts(2, &[(0, 1)], &Adjacency::from_lists(&[vec![1], vec![0]])).unwrap();
        let x = Tensor::<f64>::from_rows(&[[1.0, 2.0], [4.0, 6.0]]);
        let inp = ctx.edge_weight_inputs(&x);
        assert_eq!(inp.row(0), &[1.0, 2.0, 4.0, 6.0, 5.0]);
        assert_eq!(inp.row(1), &[4.0, 6.0, 1.0, 2.0, 5.0]);
    }

    #[test]
    fn zero_final_edge_map_gives_half() {
        let c = tiny_config();
        let mut p = ModelParams::<f64>::init(&c, 3).unwrap();
        p.edge_conv.edge_mlp.second = Affine::zeros(c.dims.weight_hidden, 1);
        let ctx = GraphContext::for_grid(Arc::new(build_grid(3, 3, Connectivity::Four).unwrap()), 2).unwrap();
        let x = Tensor::filled(Shape::Matrix(9, 1), 0.25);
        let w = edge_weights(&ctx, &p.edge_conv, &x).unwrap();
        assert_eq!(w.len(), 12);
        assert!(w.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn two_node_edge_conv_max() {
        // mlp picks out x_j − x_i: first layer routes it through ±, second recombines
        let mut first = Affine::<f64>::zeros(2, 2);
        first.weight = Tensor::from_rows(&[[0.0, 0.0], [1.0, -1.0]]);
        let mut second = Affine::<f64>::zeros(2, 1);
        second.weight = Tensor::from_rows(&[[1.0], [-1.0]]);
        let params = EdgeConvParams {
            mlp: Mlp { first, second },
            edge_mlp: Mlp {
                first: Affine::zeros(3, 1),
                second: Affine::zeros(1, 1),
            },
        };
        let ctx = GraphContext::from_parts(2, &[(0, 1)], &Adjacency::from_lists(&[vec![1], vec![0]])).unwrap();
        let x = Tensor::from_rows(&[[0.0], [3.0]]);
        let out = edge_conv(&ctx, &params, &x, Aggregation::Max).unwrap();
        assert_eq!(out.data(), &[3.0, -3.0]);
    }

    #[test]
    fn constant_features_make_edge_conv_structure_independent() {
        let c = tiny_config();
        let p = ModelParams::<f64>::init(&c, 5).unwrap();
        let x = Tensor::filled(Shape::Matrix(9, 1), 0.7);
        let grid = Arc::new(build_grid(3, 3, Connectivity::Four).unwrap());
        let expected = p.edge_conv.mlp.first.apply(&Tensor::from_rows(&[[0.7, 0.0]])).unwrap();
        let mut t = Tape::new();
        let h = t.constant(expected);
        let m = p.edge_conv.mlp.bind(&mut t, false);
        let h1 = t.relu(h);
        let single = m.second.apply(&mut t, h1).unwrap();
        let single = t.value(single).data().to_vec();
        for hops in [1, 2] {
            let ctx = GraphContext::for_grid(Arc::clone(&grid), hops).unwrap();
            let out = edge_conv(&ctx, &p.edge_conv, &x, Aggregation::Max).unwrap();
            for i in 0..9 {
                assert_eq!(out.row(i), single.as_slice());
            }
        }
    }

    #[test]
    fn gcn_layer_cases() {
        let one = SparseMatrix::<f64>::identity(1);
        let mut id = Affine::zeros(2, 2);
        id.weight = Tensor::identity(2);
        let h = Tensor::from_rows(&[[0.3, -0.4]]);
        assert_eq!(gcn_layer(&one, &h, &id, Activation::Identity).unwrap(), h);

        let path = crate::graph::normalize_edges::<f64>(3, &[(0, 1), (1, 2)], None).unwrap();
        let mut w1 = Affine::zeros(1, 1);
        w1.weight = Tensor::identity(1);
        let y = gcn_layer(path.matrix(), &Tensor::filled(Shape::Matrix(3, 1), 1.0), &w1, Activation::Identity).unwrap();
        let want = [0.908_248_290_463_863_1, 1.149_829_914_261_059_5, 0.908_248_290_463_863_1];
        for (a, b) in y.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        let neg = gcn_layer(path.matrix(), &Tensor::filled(Shape::Matrix(3, 1), -1.0), &w1, Activation::Relu).unwrap();
        assert!(neg.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_image_with_zero_head_is_uniform() {
        let c = ModelConfig::with_classes(6);
        let mut p = ModelParams::<f32>::init(&c, 1).unwrap();
        p.head.affine = Affine::zeros(c.n_nodes() * c.dims.gcn[2], 6);
        let ctx = GraphContext::for_config(&c, &GridCache::new()).unwrap();
        let x = image_to_features::<f32>(&[0; 784], 28, 28, 1).unwrap();
        let g = sample_gradient(&ctx, &c, &p, &x, 3).unwrap();
        assert!(g.logits.iter().all(|&v| v == g.logits[0]));
        assert!((g.loss - (6f32).ln()).abs() < 1e-6);
    }

    #[test]
    fn forward_is_bit_deterministic() {
        let c = tiny_config();
        let p = ModelParams::<f32>::init(&c, 9).unwrap();
        let ctx = GraphContext::for_config(&c, &GridCache::new()).unwrap();
        let x = image_to_features::<f32>(&[10, 200, 30, 40, 50, 60, 70, 80, 255], 3, 3, 1).unwrap();
        let a = forward(&ctx, &c, &p, &x).unwrap();
        let b = forward(&ctx, &c, &p, &x).unwrap();
        assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn detached_edge_filter_gets_exactly_zero_gradient() {
        let c = tiny_config();
        let p = ModelParams::<f64>::init(&c, 2).unwrap();
        let ctx = GraphContext::for_config(&c, &GridCache::new()).unwrap();
        let x = image_to_features::<f64>(&[0, 20, 240, 90, 3, 77, 180, 11, 255], 3, 3, 1).unwrap();
        let g = sample_gradient(&ctx, &c, &p, &x, 1).unwrap();
        for layer in EDGE_MLP_LAYERS {
            assert!(g.grads[2 * layer].iter().all(|&v| v == 0.0));
            assert!(g.grads[2 * layer + 1].iter().all(|&v| v == 0.0));
        }
        let live = ModelConfig {
            detach_edge_weights: false,
            ..c.clone()
        };
        let g = sample_gradient(&ctx, &live, &p, &x, 1).unwrap();
        assert!(g.grads[2 * EDGE_MLP_LAYERS[0]].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn config_validation() {
        let mut c = ModelConfig::default();
        c.edge_conv_hops = 3;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::default();
        c.dims.gcn[1] = 0;
        assert!(c.validate().is_err());
        let p = ModelParams::<f32>::init(&ModelConfig::with_classes(6), 0).unwrap();
        assert!(p.check_config(&ModelConfig::with_classes(10)).is_err());
    }
}
