//! Soft decision trees with oblique sigmoid gates.
//!
//! A tree of depth `D` is complete: `2^(D-1) - 1` internal nodes, each holding an
//! affine gate over the input, and `2^(D-1)` leaves holding either a constant
//! response vector or a linear map of the input. Every internal node sends its
//! input to *both* children and mixes their responses,
//!
//! ```text
//! y_m(x) = g_m(x) · y_left(x) + (1 - g_m(x)) · y_right(x),   g_m(x) = σ(w_mᵀ [x; 1])
//! ```
//!
//! so the output is a smooth function of every parameter and of the input.
//!
//! Nodes are addressed in level order (heap indexing): the root is node 0 and
//! node `m` has children `2m + 1` and `2m + 2`. Internal nodes come first, so
//! node `m` is the leaf `m - internal_count()` when it is not internal.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, augment, axpy, dot};

/// Which response model the leaves of a tree use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LeafKind {
    Constant,
    Linear,
}

impl std::fmt::Display for LeafKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LeafKind::Constant => f.write_str("constant"),
            LeafKind::Linear => f.write_str("linear"),
        }
    }
}

impl std::str::FromStr for LeafKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "constant" => Ok(LeafKind::Constant),
            "linear" => Ok(LeafKind::Linear),
            other => Err(format!("unknown leaf kind `{other}` (expected constant|linear)")),
        }
    }
}

/// Affine gate of an internal node. The last weight multiplies the constant bias input.
#[derive(Debug, Clone, PartialEq)]
pub struct GatingSplit {
    weights: Vec<f64>,
}

impl GatingSplit {
    pub fn new(weights: Vec<f64>) -> Self {
        Self { weights }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    /// Probability mass routed to the left child for an augmented input.
    pub fn gating_value(&self, x_aug: &[f64]) -> Result<f64> {
        if x_aug.len() != self.weights.len() {
            return Err(Error::Structural(format!(
                "gate has {} weights but augmented input has length {}",
                self.weights.len(),
                x_aug.len()
            )));
        }
        Ok(linalg::sigmoid(dot(&self.weights, x_aug)))
    }
}

/// Response model stored at a leaf.
#[derive(Debug, Clone, PartialEq)]
pub enum LeafModel {
    /// Fixed response vector `ρ` of length `output_dim`.
    Constant { response: Vec<f64> },
    /// Row-major `output_dim × (input_dim + 1)` map applied to the augmented input.
    Linear { map: Vec<f64> },
}

impl LeafModel {
    pub fn kind(&self) -> LeafKind {
        match self {
            LeafModel::Constant { .. } => LeafKind::Constant,
            LeafModel::Linear { .. } => LeafKind::Linear,
        }
    }

    pub fn params(&self) -> &[f64] {
        match self {
            LeafModel::Constant { response } => response,
            LeafModel::Linear { map } => map,
        }
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        match self {
            LeafModel::Constant { response } => response,
            LeafModel::Linear { map } => map,
        }
    }

    /// Writes the leaf response for `x_aug` into `out`.
    pub fn respond(&self, x_aug: &[f64], out: &mut [f64]) {
        match self {
            LeafModel::Constant { response } => out.copy_from_slice(response),
            LeafModel::Linear { map } => linalg::matvec(map, x_aug, out),
        }
    }

    fn with_params(&self, params: Vec<f64>) -> Self {
        match self {
            LeafModel::Constant { .. } => LeafModel::Constant { response: params },
            LeafModel::Linear { .. } => LeafModel::Linear { map: params },
        }
    }
}

/// Scales of the zero-mean normal draws used to initialise a fresh tree.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeInit {
    pub gate_scale: f64,
    pub leaf_scale: f64,
}

impl Default for TreeInit {
    fn default() -> Self {
        Self {
            gate_scale: 0.01,
            leaf_scale: 0.1,
        }
    }
}

/// Values cached by [`SoftTree::forward`] for one input.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    x_aug: Vec<f64>,
    gates: Vec<f64>,
    outputs: Vec<f64>,
    output_dim: usize,
}

impl ForwardTrace {
    /// The tree output `y[root]`.
    pub fn output(&self) -> &[f64] {
        self.node_output(0)
    }

    pub fn node_output(&self, node: usize) -> &[f64] {
        &self.outputs[node * self.output_dim..(node + 1) * self.output_dim]
    }

    /// Gate value of internal node `node`.
    pub fn gate(&self, node: usize) -> f64 {
        self.gates[node]
    }

    pub fn gates(&self) -> &[f64] {
        &self.gates
    }

    pub fn augmented_input(&self) -> &[f64] {
        &self.x_aug
    }

    pub fn node_count(&self) -> usize {
        self.outputs.len() / self.output_dim.max(1)
    }

    /// Root-to-node gating product for every node, root first.
    pub fn node_path_weights(&self) -> Vec<f64> {
        path_weights_from_gates(&self.gates)
    }

    pub fn into_output(mut self) -> Vec<f64> {
        self.outputs.truncate(self.output_dim);
        self.outputs
    }
}

fn path_weights_from_gates(gates: &[f64]) -> Vec<f64> {
    let nodes = 2 * gates.len() + 1;
    let mut weights = vec![0.0; nodes];
    weights[0] = 1.0;
    for (m, &g) in gates.iter().enumerate() {
        weights[2 * m + 1] = weights[m] * g;
        weights[2 * m + 2] = weights[m] * (1.0 - g);
    }
    weights
}

/// Gradients of a scalar loss with respect to every parameter of a tree,
/// laid out exactly like the tree's own parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub splits: Vec<Vec<f64>>,
    pub leaves: Vec<Vec<f64>>,
}

impl ParamGrads {
    pub fn zeros_like(tree: &SoftTree) -> Self {
        Self {
            splits: tree.splits.iter().map(|s| vec![0.0; s.weights.len()]).collect(),
            leaves: tree.leaves.iter().map(|l| vec![0.0; l.params().len()]).collect(),
        }
    }

    /// Gradient blocks in canonical order: gates in level order, then leaves.
    pub fn blocks(&self) -> impl Iterator<Item = &[f64]> {
        self.splits.iter().chain(self.leaves.iter()).map(Vec::as_slice)
    }

    pub fn blocks_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.splits
            .iter_mut()
            .chain(self.leaves.iter_mut())
            .map(Vec::as_mut_slice)
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().all(linalg::all_finite)
    }

    /// Adds `strength · θ` for every parameter θ of `tree` (L2 penalty gradient).
    pub fn add_l2(&mut self, tree: &SoftTree, strength: f64) {
        if strength == 0.0 {
            return;
        }
        for (grad, param) in self.blocks_mut().zip(tree.param_blocks()) {
            axpy(strength, param, grad);
        }
    }
}

/// Parameter and input gradients from a single backward pass.
#[derive(Debug, Clone)]
pub struct Backward {
    pub params: ParamGrads,
    pub input: Vec<f64>,
}

/// A complete soft binary decision tree.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftTree {
    input_dim: usize,
    output_dim: usize,
    depth: usize,
    splits: Vec<GatingSplit>,
    leaves: Vec<LeafModel>,
}

impl SoftTree {
    /// Assembles a tree from level-ordered gates and leaves, validating every shape.
    pub fn from_parts(
        input_dim: usize,
        output_dim: usize,
        splits: Vec<GatingSplit>,
        leaves: Vec<LeafModel>,
    ) -> Result<Self> {
        if output_dim == 0 {
            return Err(Error::Structural("output dimension must be positive".into()));
        }
        let n_leaves = leaves.len();
        if n_leaves == 0 || !n_leaves.is_power_of_two() {
            return Err(Error::Structural(format!(
                "leaf count {n_leaves} is not a positive power of two"
            )));
        }
        if splits.len() + 1 != n_leaves {
            return Err(Error::Structural(format!(
                "{} internal nodes cannot parent {} leaves",
                splits.len(),
                n_leaves
            )));
        }
        let depth = n_leaves.trailing_zeros() as usize + 1;
        let cols = input_dim + 1;
        for (i, split) in splits.iter().enumerate() {
            if split.weights.len() != cols {
                return Err(Error::Structural(format!(
                    "gate {i} has {} weights, expected {cols}",
                    split.weights.len()
                )));
            }
            if !linalg::all_finite(&split.weights) {
                return Err(Error::Input(format!("gate {i} has non-finite weights")));
            }
        }
        let kind = leaves[0].kind();
        for (i, leaf) in leaves.iter().enumerate() {
            if leaf.kind() != kind {
                return Err(Error::Structural("leaves mix constant and linear models".into()));
            }
            let expected = match kind {
                LeafKind::Constant => output_dim,
                LeafKind::Linear => output_dim * cols,
            };
            if leaf.params().len() != expected {
                return Err(Error::Structural(format!(
                    "leaf {i} has {} parameters, expected {expected}",
                    leaf.params().len()
                )));
            }
            if !linalg::all_finite(leaf.params()) {
                return Err(Error::Input(format!("leaf {i} has non-finite parameters")));
            }
        }
        Ok(Self {
            input_dim,
            output_dim,
            depth,
            splits,
            leaves,
        })
    }

    /// A depth-1 tree: one constant leaf and no gates.
    pub fn constant(input_dim: usize, response: Vec<f64>) -> Result<Self> {
        let output_dim = response.len();
        Self::from_parts(
            input_dim,
            output_dim,
            Vec::new(),
            vec![LeafModel::Constant { response }],
        )
    }

    /// A tree with every parameter drawn from a zero-mean normal.
    pub fn random<R: Rng + ?Sized>(
        input_dim: usize,
        output_dim: usize,
        depth: usize,
        kind: LeafKind,
        init: TreeInit,
        rng: &mut R,
    ) -> Result<Self> {
        if depth == 0 {
            return Err(Error::Structural("depth must be at least 1".into()));
        }
        let n_leaves = 1usize << (depth - 1);
        let cols = input_dim + 1;
        let splits = (0..n_leaves - 1)
            .map(|_| GatingSplit::new(normal_vec(rng, cols, init.gate_scale)))
            .collect();
        let leaves = (0..n_leaves)
            .map(|_| match kind {
                LeafKind::Constant => LeafModel::Constant {
                    response: normal_vec(rng, output_dim, init.leaf_scale),
                },
                LeafKind::Linear => LeafModel::Linear {
                    map: normal_vec(rng, output_dim * cols, init.leaf_scale),
                },
            })
            .collect();
        Self::from_parts(input_dim, output_dim, splits, leaves)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn leaf_kind(&self) -> LeafKind {
        self.leaves[0].kind()
    }

    pub fn internal_count(&self) -> usize {
        self.splits.len()
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves.len()
    }

    pub fn node_count(&self) -> usize {
        self.splits.len() + self.leaves.len()
    }

    pub fn splits(&self) -> &[GatingSplit] {
        &self.splits
    }

    pub fn leaves(&self) -> &[LeafModel] {
        &self.leaves
    }

    pub fn splits_mut(&mut self) -> &mut [GatingSplit] {
        &mut self.splits
    }

    pub fn leaves_mut(&mut self) -> &mut [LeafModel] {
        &mut self.leaves
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.param_blocks().map(<[f64]>::len).sum()
    }

    /// Parameter blocks in canonical order: gates in level order, then leaves.
    pub fn param_blocks(&self) -> impl Iterator<Item = &[f64]> {
        self.splits
            .iter()
            .map(|s| s.weights.as_slice())
            .chain(self.leaves.iter().map(LeafModel::params))
    }

    pub fn param_blocks_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.splits
            .iter_mut()
            .map(|s| s.weights.as_mut_slice())
            .chain(self.leaves.iter_mut().map(LeafModel::params_mut))
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::Structural(format!(
                "tree expects input of length {}, got {}",
                self.input_dim,
                x.len()
            )));
        }
        if !linalg::all_finite(x) {
            return Err(Error::Input("input contains non-finite values".into()));
        }
        Ok(())
    }

    fn gates_for(&self, x_aug: &[f64]) -> Vec<f64> {
        self.splits
            .iter()
            .map(|s| linalg::sigmoid(dot(&s.weights, x_aug)))
            .collect()
    }

    /// Evaluates the tree and caches every gate value and subtree output.
    pub fn forward(&self, x: &[f64]) -> Result<ForwardTrace> {
        self.check_input(x)?;
        let x_aug = augment(x);
        let gates = self.gates_for(&x_aug);
        let d = self.output_dim;
        let n_internal = self.internal_count();
        let mut outputs = vec![0.0; self.node_count() * d];

        for (leaf, out) in self.leaves.iter().zip(outputs[n_internal * d..].chunks_exact_mut(d)) {
            leaf.respond(&x_aug, out);
        }
        for m in (0..n_internal).rev() {
            let g = gates[m];
            let (head, tail) = outputs.split_at_mut((m + 1) * d);
            let out = &mut head[m * d..];
            // children 2m+1 and 2m+2 start at offset (2m+1)*d - (m+1)*d = m*d in `tail`
            let left = &tail[m * d..(m + 1) * d];
            let right = &tail[(m + 1) * d..(m + 2) * d];
            // r + g(l - r) returns r bit for bit when both children agree.
            for ((o, l), r) in out.iter_mut().zip(left).zip(right) {
                *o = r + g * (l - r);
            }
        }

        Ok(ForwardTrace {
            x_aug,
            gates,
            outputs,
            output_dim: d,
        })
    }

    /// Tree output for one input.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.into_output())
    }

    /// Soft membership of `x` in every leaf, in leaf order. Sums to one.
    pub fn leaf_path_weights(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut weights = self.node_path_weights(x)?;
        Ok(weights.split_off(self.internal_count()))
    }

    /// Soft membership of `x` in every node (root weight 1), in level order.
    pub fn node_path_weights(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(path_weights_from_gates(&self.gates_for(&augment(x))))
    }

    /// Output computed as a path-weighted sum over leaves, without the
    /// bottom-up recursion of [`SoftTree::forward`]. Used to cross-check it.
    pub fn forward_by_path_enumeration(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let x_aug = augment(x);
        let n_internal = self.internal_count();
        let mut total = vec![0.0; self.output_dim];
        let mut response = vec![0.0; self.output_dim];
        for (j, leaf) in self.leaves.iter().enumerate() {
            let mut weight = 1.0;
            let mut node = n_internal + j;
            while node > 0 {
                let parent = (node - 1) / 2;
                let g = self.splits[parent].gating_value(&x_aug)?;
                weight *= if node == 2 * parent + 1 { g } else { 1.0 - g };
                node = parent;
            }
            leaf.respond(&x_aug, &mut response);
            axpy(weight, &response, &mut total);
        }
        Ok(total)
    }

    fn check_trace(&self, trace: &ForwardTrace, delta_root: &[f64]) -> Result<()> {
        if trace.output_dim != self.output_dim
            || trace.gates.len() != self.internal_count()
            || trace.outputs.len() != self.node_count() * self.output_dim
            || trace.x_aug.len() != self.input_dim + 1
        {
            return Err(Error::Structural("forward trace does not match this tree".into()));
        }
        if delta_root.len() != self.output_dim {
            return Err(Error::Structural(format!(
                "root responsibility has length {}, expected {}",
                delta_root.len(),
                self.output_dim
            )));
        }
        Ok(())
    }

    /// Responsibilities `δ_m = ∂E/∂y_m` for every node, flattened in level order.
    fn responsibilities(&self, trace: &ForwardTrace, delta_root: &[f64]) -> Vec<f64> {
        let d = self.output_dim;
        let mut deltas = vec![0.0; self.node_count() * d];
        deltas[..d].copy_from_slice(delta_root);
        for m in 0..self.internal_count() {
            let g = trace.gates[m];
            let (head, tail) = deltas.split_at_mut((m + 1) * d);
            let parent = &head[m * d..];
            let (left, right) = tail[m * d..(m + 2) * d].split_at_mut(d);
            for ((l, r), p) in left.iter_mut().zip(right.iter_mut()).zip(parent) {
                *l = g * p;
                *r = (1.0 - g) * p;
            }
        }
        deltas
    }

    /// Scalar `g(1-g) · δ_mᵀ (y_left - y_right)` for every internal node.
    fn gate_sensitivities(&self, trace: &ForwardTrace, deltas: &[f64]) -> Vec<f64> {
        let d = self.output_dim;
        (0..self.internal_count())
            .map(|m| {
                let g = trace.gates[m];
                let delta = &deltas[m * d..(m + 1) * d];
                let left = trace.node_output(2 * m + 1);
                let right = trace.node_output(2 * m + 2);
                let projected: f64 = delta
                    .iter()
                    .zip(left.iter().zip(right))
                    .map(|(dl, (l, r))| dl * (l - r))
                    .sum();
                g * (1.0 - g) * projected
            })
            .collect()
    }

    fn param_grads_from(&self, trace: &ForwardTrace, deltas: &[f64], sens: &[f64]) -> ParamGrads {
        let d = self.output_dim;
        let x_aug = &trace.x_aug;
        let splits = sens.iter().map(|&s| x_aug.iter().map(|x| s * x).collect()).collect();
        let n_internal = self.internal_count();
        let leaves = self
            .leaves
            .iter()
            .enumerate()
            .map(|(j, leaf)| {
                let delta = &deltas[(n_internal + j) * d..(n_internal + j + 1) * d];
                match leaf {
                    LeafModel::Constant { .. } => delta.to_vec(),
                    LeafModel::Linear { map } => {
                        let mut grad = vec![0.0; map.len()];
                        linalg::rank_one_acc(1.0, delta, x_aug, &mut grad);
                        grad
                    }
                }
            })
            .collect();
        ParamGrads { splits, leaves }
    }

    fn input_grad_from(&self, deltas: &[f64], sens: &[f64]) -> Vec<f64> {
        let d = self.output_dim;
        let mut grad_aug = vec![0.0; self.input_dim + 1];
        for (split, &s) in self.splits.iter().zip(sens) {
            axpy(s, &split.weights, &mut grad_aug);
        }
        let n_internal = self.internal_count();
        for (j, leaf) in self.leaves.iter().enumerate() {
            if let LeafModel::Linear { map } = leaf {
                let delta = &deltas[(n_internal + j) * d..(n_internal + j + 1) * d];
                linalg::matvec_transpose_acc(map, delta, &mut grad_aug);
            }
        }
        grad_aug.truncate(self.input_dim);
        grad_aug
    }

    /// Gradients of the loss with respect to every parameter, given
    /// `delta_root = ∂E/∂y[root]` (prediction minus target for squared error).
    pub fn backward_parameters(&self, trace: &ForwardTrace, delta_root: &[f64]) -> Result<ParamGrads> {
        self.check_trace(trace, delta_root)?;
        let deltas = self.responsibilities(trace, delta_root);
        let sens = self.gate_sensitivities(trace, &deltas);
        Ok(self.param_grads_from(trace, &deltas, &sens))
    }

    /// Gradient of the loss with respect to the (unaugmented) tree input.
    pub fn backward_input(&self, trace: &ForwardTrace, delta_root: &[f64]) -> Result<Vec<f64>> {
        self.check_trace(trace, delta_root)?;
        let deltas = self.responsibilities(trace, delta_root);
        let sens = self.gate_sensitivities(trace, &deltas);
        Ok(self.input_grad_from(&deltas, &sens))
    }

    /// Parameter and input gradients sharing one responsibility pass.
    pub fn backward(&self, trace: &ForwardTrace, delta_root: &[f64]) -> Result<Backward> {
        self.check_trace(trace, delta_root)?;
        let deltas = self.responsibilities(trace, delta_root);
        let sens = self.gate_sensitivities(trace, &deltas);
        Ok(Backward {
            params: self.param_grads_from(trace, &deltas, &sens),
            input: self.input_grad_from(&deltas, &sens),
        })
    }

    /// Grows the tree by one level: every leaf becomes a gate whose two children
    /// inherit the old leaf's parameters plus independent normal noise.
    ///
    /// Draw order per old leaf (level order): the new gate's weights, then the
    /// left child's noise, then the right child's noise. Existing gates are
    /// copied unchanged.
    pub fn split_all_leaves<R: Rng + ?Sized>(&self, gate_init_scale: f64, noise_scale: f64, rng: &mut R) -> SoftTree {
        let cols = self.input_dim + 1;
        let mut splits = self.splits.clone();
        splits.reserve(self.leaves.len());
        let mut leaves = Vec::with_capacity(2 * self.leaves.len());
        for leaf in &self.leaves {
            splits.push(GatingSplit::new(normal_vec(rng, cols, gate_init_scale)));
            for _ in 0..2 {
                let params = leaf
                    .params()
                    .iter()
                    .map(|p| p + noise_scale * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                leaves.push(leaf.with_params(params));
            }
        }
        SoftTree {
            input_dim: self.input_dim,
            output_dim: self.output_dim,
            depth: self.depth + 1,
            splits,
            leaves,
        }
    }
}

fn normal_vec<R: Rng + ?Sized>(rng: &mut R, len: usize, scale: f64) -> Vec<f64> {
    (0..len).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}
