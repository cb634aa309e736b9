mod common;

use common::{permute_rows, random_weighted_graph, relabeled_neighborhoods, two_hop_neighborhoods};
use gcec::graph::{build_grid, normalize_edges, Adjacency};
use gcec::layers::{edge_conv, edge_weights, gcn_layer, Activation, Aggregation, GraphContext, ModelConfig, ModelParams};
use gcec::{Connectivity, Shape, Tensor};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EDGE_CONV_TOL: f64 = 1e-12;

struct Case {
    n: usize,
    edges: Vec<(usize, usize)>,
    weights: Vec<f64>,
    x: Tensor<f64>,
    perm: Vec<usize>,
}

fn random_case(seed: u64, f: usize) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, edges, weights) = random_weighted_graph(&mut rng, 9);
    let x = Tensor::new(Shape::Matrix(n, f), (0..n * f).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    Case { n, edges, weights, x, perm }
}

fn edge_params(f: usize, seed: u64) -> gcec::layers::EdgeConvParams<f64> {
    let config = ModelConfig {
        height: 1,
        width: 1,
        channels: f,
        n_classes: 2,
        ..ModelConfig::default()
    };
    ModelParams::<f64>::init(&config, seed).unwrap().edge_conv
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn gcn_layer_is_exactly_equivariant(seed in any::<u64>(), f in 1usize..4, out in 1usize..4, relu in any::<bool>()) {
        let c = random_case(seed, f);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let affine = gcec::layers::Affine::<f64>::uniform(f, out, &mut rng);
        let activation = if relu { Activation::Relu } else { Activation::Identity };
        let adj = normalize_edges(c.n, &c.edges, Some(&c.weights)).unwrap();
        let base = gcn_layer(adj.matrix(), &c.x, &affine, activation).unwrap();
        let moved = gcn_layer(&adj.matrix().permuted(&c.perm), &permute_rows(&c.x, &c.perm), &affine, activation).unwrap();
        let expected = permute_rows(&base, &c.perm);
        prop_assert_eq!(moved.data(), expected.data());
    }

    #[test]
    fn edge_conv_is_equivariant(seed in any::<u64>(), f in prop::sample::select(vec![1usize, 3]), mean in any::<bool>()) {
        let c = random_case(seed, f);
        let params = edge_params(f, seed);
        let aggregation = if mean { Aggregation::Mean } else { Aggregation::Max };
        let lists = two_hop_neighborhoods(c.n, &c.edges);
        let ctx = GraphContext::from_parts(c.n, &c.edges, &Adjacency::from_lists(&lists)).unwrap();
        let moved_edges: Vec<(usize, usize)> = c.edges.iter().map(|&(i, j)| (c.perm[i], c.perm[j])).collect();
        let moved_lists = relabeled_neighborhoods(&lists, &c.perm);
        let moved_ctx = GraphContext::from_parts(c.n, &moved_edges, &Adjacency::from_lists(&moved_lists)).unwrap();
        let base = edge_conv(&ctx, &params, &c.x, aggregation).unwrap();
        let moved = edge_conv(&moved_ctx, &params, &permute_rows(&c.x, &c.perm), aggregation).unwrap();
        for (a, b) in moved.data().iter().zip(permute_rows(&base, &c.perm).data()) {
            prop_assert!((a - b).abs() <= EDGE_CONV_TOL, "{a} vs {b}");
        }
    }

    #[test]
    fn edge_weights_ignore_edge_orientation(seed in any::<u64>(), f in prop::sample::select(vec![1usize, 3])) {
        let c = random_case(seed, f);
        let params = edge_params(f, seed);
        let flipped: Vec<(usize, usize)> = c.edges.iter().map(|&(i, j)| (j, i)).collect();
        let empty = Adjacency::from_lists(&vec![Vec::new(); c.n]);
        let a = edge_weights(&GraphContext::from_parts(c.n, &c.edges, &empty).unwrap(), &params, &c.x).unwrap();
        let b = edge_weights(&GraphContext::from_parts(c.n, &flipped, &empty).unwrap(), &params, &c.x).unwrap();
        prop_assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        prop_assert!(a.iter().all(|&w| w > 0.0 && w < 1.0));
    }
}

#[test]
fn edge_conv_on_permuted_three_by_three_grid() {
    let g = build_grid(3, 3, Connectivity::Four).unwrap();
    let lists = g.neighborhood(2);
    let x = Tensor::from_rows(&(0..9).map(|k| [k as f64 * 0.1]).collect::<Vec<_>>());
    let params = edge_params(1, 9);
    let perm = vec![4, 0, 8, 2, 6, 1, 3, 5, 7];
    let ctx = GraphContext::from_parts(9, g.edges(), &Adjacency::from_lists(&lists)).unwrap();
    let moved_edges: Vec<(usize, usize)> = g.edges().iter().map(|&(i, j)| (perm[i], perm[j])).collect();
    let moved_ctx = GraphContext::from_parts(9, &moved_edges, &Adjacency::from_lists(&relabeled_neighborhoods(&lists, &perm))).unwrap();
    let base = edge_conv(&ctx, &params, &x, Aggregation::Max).unwrap();
    let moved = edge_conv(&moved_ctx, &params, &permute_rows(&x, &perm), Aggregation::Max).unwrap();
    assert_eq!(moved.data(), permute_rows(&base, &perm).data());
}
