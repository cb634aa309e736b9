//! Pixel-grid graphs and the normalized adjacency used by graph convolution.
//!
//! Node `i` is pixel `(i / width, i % width)` in raster order. A grid's
//! structure depends only on its shape, so it is built once and shared by
//! reference between every image of that shape (see [`GridCache`]).

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use crate::error::GraphError;
use crate::sparse::{NormalizationLayout, SparseMatrix};
use crate::tensor::{Scalar, Shape, Tensor};

/// Pixel adjacency rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, serde::Serialize, serde::Deserialize)]
pub enum Connectivity {
    /// Up, down, left, right.
    #[default]
    Four,
    /// Also the diagonals.
    Eight,
}

impl Connectivity {
    pub fn from_count(n: usize) -> Result<Self, GraphError> {
        match n {
            4 => Ok(Connectivity::Four),
            8 => Ok(Connectivity::Eight),
            other => Err(GraphError::BadConnectivity(other)),
        }
    }

    pub fn count(self) -> usize {
        match self {
            Connectivity::Four => 4,
            Connectivity::Eight => 8,
        }
    }

    fn offsets(self) -> &'static [(isize, isize)] {
        match self {
            Connectivity::Four => &[(-1, 0), (0, -1), (0, 1), (1, 0)],
            Connectivity::Eight => &[(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)],
        }
    }
}

/// Flattened per-node neighbor lists.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Adjacency {
    offsets: Vec<usize>,
    indices: Vec<usize>,
}

impl Adjacency {
    pub fn from_lists(lists: &[Vec<usize>]) -> Self {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        offsets.push(0);
        let mut indices = Vec::new();
        for l in lists {
            indices.extend_from_slice(l);
            offsets.push(indices.len());
        }
        Adjacency { offsets, indices }
    }

    pub fn n_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.indices[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn total(&self) -> usize {
        self.indices.len()
    }
}

/// Shared grid structure for one image shape.
#[derive(Debug, PartialEq, Eq)]
pub struct GridGraph {
    height: usize,
    width: usize,
    connectivity: Connectivity,
    one_hop: Adjacency,
    two_hop: Adjacency,
    edges: Vec<(usize, usize)>,
}

/// Builds the grid graph for an `height × width` image.
pub fn build_grid(height: usize, width: usize, connectivity: Connectivity) -> Result<GridGraph, GraphError> {
    if height == 0 || width == 0 {
        return Err(GraphError::ZeroDimension { height, width });
    }
    let n = height * width;
    let mut one_hop: Vec<Vec<usize>> = Vec::with_capacity(n);
    for r in 0..height as isize {
        for c in 0..width as isize {
            let mut nb: Vec<usize> = connectivity
                .offsets()
                .iter()
                .map(|&(dr, dc)| (r + dr, c + dc))
                .filter(|&(rr, cc)| rr >= 0 && cc >= 0 && rr < height as isize && cc < width as isize)
                .map(|(rr, cc)| rr as usize * width + cc as usize)
                .collect();
            nb.sort_unstable();
            one_hop.push(nb);
        }
    }
    let two_hop = exact_two_hop(&one_hop);
    let edges = one_hop
        .iter()
        .enumerate()
        .flat_map(|(i, nb)| nb.iter().filter(move |&&j| j > i).map(move |&j| (i, j)))
        .collect();
    Ok(GridGraph {
        height,
        width,
        connectivity,
        one_hop: Adjacency::from_lists(&one_hop),
        two_hop: Adjacency::from_lists(&two_hop),
        edges,
    })
}

/// Nodes at shortest-path distance exactly 2, per node, sorted.
pub fn exact_two_hop(one_hop: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let n = one_hop.len();
    let mut mark = vec![usize::MAX; n];
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        mark[i] = i;
        for &j in &one_hop[i] {
            mark[j] = i;
        }
        let mut two = Vec::new();
        for &j in &one_hop[i] {
            for &k in &one_hop[j] {
                if mark[k] != i {
                    mark[k] = i;
                    two.push(k);
                }
            }
        }
        two.sort_unstable();
        out.push(two);
    }
    out
}

impl GridGraph {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn n_nodes(&self) -> usize {
        self.height * self.width
    }

    pub fn connectivity(&self) -> Connectivity {
        self.connectivity
    }

    pub fn one_hop(&self, i: usize) -> &[usize] {
        self.one_hop.neighbors(i)
    }

    pub fn two_hop(&self, i: usize) -> &[usize] {
        self.two_hop.neighbors(i)
    }

    /// Undirected 1-hop edges `(i, j)` with `i < j`, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Per-node neighborhood for edge convolution: 1-hop, plus 2-hop when
    /// `hops == 2`.
    pub fn neighborhood(&self, hops: usize) -> Vec<Vec<usize>> {
        (0..self.n_nodes())
            .map(|i| {
                let mut nb = self.one_hop(i).to_vec();
                if hops >= 2 {
                    nb.extend_from_slice(self.two_hop(i));
                    nb.sort_unstable();
                }
                nb
            })
            .collect()
    }
}

/// Process-wide store handing out one shared [`GridGraph`] per shape.
#[derive(Default)]
pub struct GridCache {
    graphs: Mutex<HashMap<(usize, usize, Connectivity), Arc<GridGraph>>>,
}

impl GridCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, height: usize, width: usize, connectivity: Connectivity) -> Result<Arc<GridGraph>, GraphError> {
        let mut graphs = self.graphs.lock().expect("grid cache poisoned");
        if let Some(g) = graphs.get(&(height, width, connectivity)) {
            return Ok(Arc::clone(g));
        }
        let g = Arc::new(build_grid(height, width, connectivity)?);
        graphs.insert((height, width, connectivity), Arc::clone(&g));
        Ok(g)
    }

    pub fn len(&self) -> usize {
        self.graphs.lock().expect("grid cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Node features from raw `H×W×C` interleaved bytes, scaled to `[0, 1]`.
pub fn image_to_features<T: Scalar>(pixels: &[u8], height: usize, width: usize, channels: usize) -> Result<Tensor<T>, GraphError> {
    if channels != 1 && channels != 3 {
        return Err(GraphError::BadChannels(channels));
    }
    if pixels.len() != height * width * channels {
        return Err(GraphError::ImageSize {
            height,
            width,
            channels,
            got: pixels.len(),
        });
    }
    let scale = T::from_f64(255.0);
    let data = pixels.iter().map(|&b| T::from_f64(b as f64) / scale).collect();
    Ok(Tensor::new(Shape::Matrix(height * width, channels), data).expect("length checked"))
}

/// `D̃^{-1/2} Ã D̃^{-1/2}` with `Ã = A_w + I`.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedAdjacency<T> {
    matrix: SparseMatrix<T>,
    degrees: Vec<T>,
}

impl<T: Scalar> NormalizedAdjacency<T> {
    pub fn matrix(&self) -> &SparseMatrix<T> {
        &self.matrix
    }

    /// Row sums of `Ã`.
    pub fn degrees(&self) -> &[T] {
        &self.degrees
    }
}

/// Normalized adjacency of an undirected graph given as an edge list.
///
/// `edge_weights`, when present, holds one weight in `(0, 1]` per edge.
pub fn normalize_edges<T: Scalar>(n_nodes: usize, edges: &[(usize, usize)], edge_weights: Option<&[T]>) -> Result<NormalizedAdjacency<T>, GraphError> {
    let layout = NormalizationLayout::new(n_nodes, edges)?;
    normalize_with_layout(&layout, edge_weights)
}

pub fn normalize_with_layout<T: Scalar>(layout: &NormalizationLayout, edge_weights: Option<&[T]>) -> Result<NormalizedAdjacency<T>, GraphError> {
    if let Some(w) = edge_weights {
        if w.len() != layout.n_edges() {
            return Err(GraphError::WeightCount {
                expected: layout.n_edges(),
                got: w.len(),
            });
        }
        if let Some((index, &value)) = w.iter().enumerate().find(|(_, &v)| !(v > T::zero() && v <= T::one())) {
            return Err(GraphError::NonPositiveWeight {
                index,
                value: value.to_f64(),
            });
        }
    }
    let degrees = layout.degrees(edge_weights);
    let values = layout.values(edge_weights, &degrees);
    let matrix = SparseMatrix::new(Arc::clone(layout.pattern()), values).expect("one value per nonzero");
    Ok(NormalizedAdjacency { matrix, degrees })
}

/// Normalized adjacency of a grid's 1-hop graph.
pub fn normalize_adjacency<T: Scalar>(graph: &GridGraph, edge_weights: Option<&[T]>) -> Result<NormalizedAdjacency<T>, GraphError> {
    normalize_edges(graph.n_nodes(), graph.edges(), edge_weights)
}
