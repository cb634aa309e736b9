//! The raw mean-distance probe is not monotone on grids with unequal
//! degrees. What does hold: after rescaling each row by `d̃ᵢ^{-1/2}`, one
//! propagation step is a row-stochastic average, so the largest pairwise
//! distance cannot grow.

mod common;

use common::dense_normalized;
use gcec::diagnostics::{mean_pairwise_distance, oversmoothing_probe};
use gcec::graph::{build_grid, normalize_adjacency};
use gcec::{Connectivity, Shape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn diameter(rows: &[Vec<f64>]) -> f64 {
    let mut d: f64 = 0.0;
    for a in rows {
        for b in rows {
            d = d.max(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt());
        }
    }
    d
}

#[test]
fn constant_signal_on_a_path_spreads_out() {
    let g = build_grid(3, 1, Connectivity::Four).unwrap();
    let x = Tensor::filled(Shape::Matrix(3, 1), 1.0);
    let probe = oversmoothing_probe(&g, &x, 1).unwrap();
    let dense = dense_normalized(3, g.edges(), None);
    let h: Vec<f64> = dense.iter().map(|row| row.iter().sum()).collect();
    let want = ((h[0] - h[1]).abs() + (h[0] - h[2]).abs() + (h[1] - h[2]).abs()) / 3.0;
    assert_eq!(probe[0], 0.0);
    assert!((probe[1] - want).abs() < 1e-12);
    assert!((probe[1] - 0.16105).abs() < 1e-5);
}

#[test]
fn probe_matches_dense_powers() {
    let g = build_grid(3, 3, Connectivity::Four).unwrap();
    let x = Tensor::from_rows(&(0..9).map(|k| [(k * 7 % 5) as f64, k as f64 * 0.5]).collect::<Vec<_>>());
    let probe = oversmoothing_probe(&g, &x, 4).unwrap();
    let dense = dense_normalized(9, g.edges(), None);
    let mut h: Vec<Vec<f64>> = (0..9).map(|i| x.row(i).to_vec()).collect();
    for (k, &p) in probe.iter().enumerate() {
        if k > 0 {
            h = (0..9).map(|i| (0..2).map(|c| (0..9).map(|j| dense[i][j] * h[j][c]).sum()).collect()).collect();
        }
        let t = Tensor::from_rows(&h);
        assert!((mean_pairwise_distance(&t) - p).abs() < 1e-12, "layer {k}");
    }
}

proptest! {
    #[test]
    fn rescaled_diameter_never_grows(h in 1usize..=5, w in 1usize..=5, eight in any::<bool>(), seed in any::<u64>()) {
        let conn = if eight { Connectivity::Eight } else { Connectivity::Four };
        let g = build_grid(h, w, conn).unwrap();
        let adj = normalize_adjacency::<f64>(&g, None).unwrap();
        let n = g.n_nodes();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Tensor::new(Shape::Matrix(n, 2), (0..2 * n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let rescaled = |t: &Tensor<f64>| -> Vec<Vec<f64>> {
            (0..n).map(|i| t.row(i).iter().map(|v| v / adj.degrees()[i].sqrt()).collect()).collect()
        };
        let mut prev = diameter(&rescaled(&x));
        for _ in 0..8 {
            x = adj.matrix().spmm(&x).unwrap();
            let d = diameter(&rescaled(&x));
            prop_assert!(d <= prev + 1e-12, "{d} > {prev}");
            prev = d;
        }
    }
}
