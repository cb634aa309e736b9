//! Independent oracles and fixtures shared by the integration suites.
#![allow(dead_code)]

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;

use gcec::dataset::{crc32_hex, images_file, write_idx, IdxArray, Manifest, LABELS_FILE, MANIFEST_FILE};
use gcec::layers::{forward, sample_gradient, GraphContext, ModelConfig, ModelParams};
use gcec::tape::log_sum_exp;
use gcec::{Shape, Tensor};
use rand::Rng;

/// `D̃^{-1/2}(A + I)D̃^{-1/2}` computed densely from an edge list.
pub fn dense_normalized(n: usize, edges: &[(usize, usize)], weights: Option<&[f64]>) -> Vec<Vec<f64>> {
    let mut a = vec![vec![0.0; n]; n];
    for (i, row) in a.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for (k, &(i, j)) in edges.iter().enumerate() {
        let w = weights.map_or(1.0, |w| w[k]);
        a[i][j] += w;
        a[j][i] += w;
    }
    let d: Vec<f64> = a.iter().map(|row| row.iter().sum()).collect();
    (0..n)
        .map(|i| (0..n).map(|j| a[i][j] / (d[i].sqrt() * d[j].sqrt())).collect())
        .collect()
}

/// Random undirected simple graph with weights in `(0, 1]`.
pub fn random_weighted_graph(rng: &mut impl Rng, max_n: usize) -> (usize, Vec<(usize, usize)>, Vec<f64>) {
    let n = rng.gen_range(1..=max_n);
    let p: f64 = rng.gen_range(0.0..1.0);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(p) {
                edges.push((i, j));
            }
        }
    }
    let weights = edges.iter().map(|_| 1.0 - rng.gen_range(0.0..1.0)).collect();
    (n, edges, weights)
}

/// Nodes at shortest-path distance exactly 2, by breadth-first search.
pub fn bfs_two_hop(adj: &[Vec<usize>]) -> Vec<Vec<usize>> {
    adj.iter()
        .enumerate()
        .map(|(s, _)| {
            let mut dist = vec![usize::MAX; adj.len()];
            dist[s] = 0;
            let mut q = VecDeque::from([s]);
            while let Some(u) = q.pop_front() {
                for &v in &adj[u] {
                    if dist[v] == usize::MAX {
                        dist[v] = dist[u] + 1;
                        q.push_back(v);
                    }
                }
            }
            (0..adj.len()).filter(|&v| dist[v] == 2).collect()
        })
        .collect()
}

/// Row `perm[i]` of the result is row `i` of `x`.
pub fn permute_rows(x: &Tensor<f64>, perm: &[usize]) -> Tensor<f64> {
    let (n, f) = x.shape().as_matrix().unwrap();
    let mut data = vec![0.0; n * f];
    for (i, &p) in perm.iter().enumerate() {
        data[p * f..(p + 1) * f].copy_from_slice(x.row(i));
    }
    Tensor::new(Shape::Matrix(n, f), data).unwrap()
}

pub fn neighbor_lists(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); n];
    for &(i, j) in edges {
        adj[i].push(j);
        adj[j].push(i);
    }
    adj
}

/// Neighbor lists with every node relabeled through `perm`.
pub fn relabeled_neighborhoods(lists: &[Vec<usize>], perm: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); lists.len()];
    for (i, nb) in lists.iter().enumerate() {
        let mut mapped: Vec<usize> = nb.iter().map(|&j| perm[j]).collect();
        mapped.sort_unstable();
        out[perm[i]] = mapped;
    }
    out
}

/// 1-hop ∪ 2-hop lists, the 2-hop part by breadth-first search.
pub fn two_hop_neighborhoods(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let one = neighbor_lists(n, edges);
    let two = bfs_two_hop(&one);
    one.into_iter()
        .zip(two)
        .map(|(mut a, b)| {
            a.extend(b);
            a.sort_unstable();
            a
        })
        .collect()
}

/// AUC by counting positive/negative pairs; ties count one half.
pub fn pair_count_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let mut wins = 0.0;
    let mut pairs = 0usize;
    for (i, &pi) in positive.iter().enumerate() {
        if !pi {
            continue;
        }
        for (j, &pj) in positive.iter().enumerate() {
            if pj {
                continue;
            }
            pairs += 1;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    (pairs > 0).then(|| wins / pairs as f64)
}

/// Scalar Adam with coupled L2, written out per element.
pub fn reference_adam(p: f64, g: f64, m: f64, v: f64, t: i32, lr: f64, wd: f64, b1: f64, b2: f64, eps: f64) -> (f64, f64, f64) {
    let g = g + wd * p;
    let m = b1 * m + (1.0 - b1) * g;
    let v = b2 * v + (1.0 - b2) * g * g;
    let m_hat = m / (1.0 - b1.powi(t));
    let v_hat = v / (1.0 - b2.powi(t));
    (p - lr * m_hat / (v_hat.sqrt() + eps), m, v)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn loss_of(ctx: &GraphContext, config: &ModelConfig, params: &ModelParams<f64>, x: &Tensor<f64>, label: usize) -> f64 {
    let z = forward(ctx, config, params, x).unwrap();
    log_sum_exp(&z) - z[label]
}

const NARROW_STEP: f64 = 1e-5;
const KINK_ABS: f64 = 1e-11;
const KINK_REL: f64 = 1e-6;

/// Largest element-wise relative error between analytic gradients and
/// extrapolated central differences, per parameter tensor.
pub fn gradient_errors(
    ctx: &GraphContext,
    config: &ModelConfig,
    params: &ModelParams<f64>,
    x: &Tensor<f64>,
    label: usize,
    step: f64,
) -> Vec<f64> {
    let analytic = sample_gradient(ctx, config, params, x, label).unwrap().grads;
    let mut worst = Vec::new();
    for (t, grad) in analytic.iter().enumerate() {
        let mut max_err: f64 = 0.0;
        for (i, &g) in grad.iter().enumerate() {
            let central = |h: f64| {
                let mut plus = params.clone();
                plus.tensors_mut()[t].data_mut()[i] += h;
                let mut minus = params.clone();
                minus.tensors_mut()[t].data_mut()[i] -= h;
                (loss_of(ctx, config, &plus, x, label) - loss_of(ctx, config, &minus, x, label)) / (2.0 * h)
            };
            // Richardson extrapolation has O(h⁴) truncation and, with a wide
            // step, little rounding noise, which tiny gradients need. Two
            // extrapolations over nested steps agree when the loss is smooth
            // inside the stencil; otherwise a ReLU or max kink lies within it
            // and the narrow central difference is used instead.
            let (c1, c2, c4) = (central(step), central(step / 2.0), central(step / 4.0));
            let coarse = (4.0 * c2 - c1) / 3.0;
            let fine = (4.0 * c4 - c2) / 3.0;
            let fd = if (coarse - fine).abs() > KINK_ABS + KINK_REL * fine.abs() {
                central(NARROW_STEP)
            } else {
                fine
            };
            max_err = max_err.max(rel_err(g, fd));
        }
        worst.push(max_err);
    }
    worst
}

/// Writes a container with `write_idx` and a hand-built manifest.
pub fn write_fixture(dir: &Path, images: &[u8], labels: &[u8], classes: &[&str], (h, w, c): (usize, usize, usize)) {
    std::fs::create_dir_all(dir).unwrap();
    let n = labels.len();
    let mut dims = vec![n, h, w];
    if c != 1 {
        dims.push(c);
    }
    let image_name = images_file(c);
    write_idx(&IdxArray::new(dims, images.to_vec()).unwrap(), dir.join(image_name)).unwrap();
    write_idx(&IdxArray::new(vec![n], labels.to_vec()).unwrap(), dir.join(LABELS_FILE)).unwrap();
    let crc = |name: &str| crc32_hex(&std::fs::read(dir.join(name)).unwrap());
    let mut counts = vec![0; classes.len()];
    for &l in labels {
        counts[l as usize] += 1;
    }
    let manifest = Manifest {
        classes: classes.iter().map(|s| s.to_string()).collect(),
        counts,
        n,
        height: h,
        width: w,
        channels: c,
        source: Some("test fixture".into()),
        crc32: BTreeMap::from([
            (image_name.to_string(), crc(image_name)),
            (LABELS_FILE.to_string(), crc(LABELS_FILE)),
        ]),
    };
    std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_vec_pretty(&manifest).unwrap()).unwrap();
}

/// 3×3 images: class 0 has every pixel in [0, 96], class 1 in [160, 255].
pub fn bright_dark(rng: &mut impl Rng, n: usize) -> (Vec<u8>, Vec<u8>) {
    let mut images = Vec::with_capacity(9 * n);
    let mut labels = Vec::with_capacity(n);
    for k in 0..n {
        let bright = k % 2 == 1;
        for _ in 0..9 {
            images.push(if bright { rng.gen_range(160..=255) } else { rng.gen_range(0..=96) });
        }
        labels.push(bright as u8);
    }
    (images, labels)
}
