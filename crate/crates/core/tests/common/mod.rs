#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use treecoder::soft_tree::{LeafKind, TreeInit};
use treecoder::SoftTree;

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, len: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(lo..hi)).collect()
}

/// Central differences of `f` with respect to every entry of `params`.
pub fn central_differences(params: &mut [f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    (0..params.len())
        .map(|i| {
            let orig = params[i];
            params[i] = orig + FD_STEP;
            let up = f(params);
            params[i] = orig - FD_STEP;
            let down = f(params);
            params[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn flatten(blocks: impl IntoIterator<Item = impl AsRef<[f64]>>) -> Vec<f64> {
    blocks.into_iter().flat_map(|b| b.as_ref().to_vec()).collect()
}

/// Writes `flat` back over the parameter blocks of `tree`.
pub fn set_tree_params(tree: &mut SoftTree, flat: &[f64]) {
    let mut offset = 0;
    for block in tree.param_blocks_mut() {
        block.copy_from_slice(&flat[offset..offset + block.len()]);
        offset += block.len();
    }
    assert_eq!(offset, flat.len());
}

/// Random tree with unit-scale gates so that gradients are not vanishingly small.
pub fn random_tree(
    rng: &mut ChaCha8Rng,
    input_dim: usize,
    output_dim: usize,
    depth: usize,
    kind: LeafKind,
) -> SoftTree {
    let init = TreeInit {
        gate_scale: 1.0,
        leaf_scale: 1.0,
    };
    SoftTree::random(input_dim, output_dim, depth, kind, init, rng).unwrap()
}

/// Direct recursive evaluation of a soft tree, written independently of the
/// library's level-order sweep.
pub fn recursive_oracle(tree: &SoftTree, x: &[f64]) -> Vec<f64> {
    fn visit(tree: &SoftTree, node: usize, x_aug: &[f64]) -> Vec<f64> {
        let n_internal = tree.internal_count();
        if node >= n_internal {
            let leaf = &tree.leaves()[node - n_internal];
            let p = leaf.params();
            return match leaf.kind() {
                LeafKind::Constant => p.to_vec(),
                LeafKind::Linear => p
                    .chunks(x_aug.len())
                    .map(|row| row.iter().zip(x_aug).map(|(a, b)| a * b).sum())
                    .collect(),
            };
        }
        let w = tree.splits()[node].weights();
        let logit: f64 = w.iter().zip(x_aug).map(|(a, b)| a * b).sum();
        let g = 1.0 / (1.0 + (-logit.clamp(-500.0, 500.0)).exp());
        let left = visit(tree, 2 * node + 1, x_aug);
        let right = visit(tree, 2 * node + 2, x_aug);
        left.iter().zip(&right).map(|(l, r)| g * l + (1.0 - g) * r).collect()
    }
    let mut x_aug = x.to_vec();
    x_aug.push(1.0);
    visit(tree, 0, &x_aug)
}

/// Per-dimension RMSE of reconstructing `test` by the nearest of `centers`.
pub fn nearest_center_rmse(centers: &[Vec<f64>], test: &[&[f64]]) -> f64 {
    let dim = centers[0].len();
    let total: f64 = test
        .iter()
        .map(|x| {
            centers
                .iter()
                .map(|c| c.iter().zip(x.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    (total / (test.len() * dim) as f64).sqrt()
}

/// Per-dimension RMSE of predicting the mean of `train` for every row of `test`.
pub fn mean_image_rmse(train: &[&[f64]], test: &[&[f64]]) -> f64 {
    let dim = train[0].len();
    let mut mean = vec![0.0; dim];
    for x in train {
        for (m, v) in mean.iter_mut().zip(x.iter()) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= train.len() as f64;
    }
    nearest_center_rmse(&[mean], test)
}
