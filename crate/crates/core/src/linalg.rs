//! Dense vector kernels over row-major `f64` slices.
//!
//! Everything here is sequential and summation order is fixed, so results are
//! bit-reproducible for identical inputs.

/// Logits are clamped to this magnitude before exponentiation.
pub const LOGIT_CLAMP: f64 = 500.0;

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out = M · v` for a row-major matrix with `v.len()` columns.
pub fn matvec(matrix: &[f64], v: &[f64], out: &mut [f64]) {
    let cols = v.len();
    debug_assert_eq!(matrix.len(), cols * out.len());
    for (o, row) in out.iter_mut().zip(matrix.chunks_exact(cols)) {
        *o = dot(row, v);
    }
}

/// `out += Mᵀ · v` for a row-major matrix with `out.len()` columns.
pub fn matvec_transpose_acc(matrix: &[f64], v: &[f64], out: &mut [f64]) {
    let cols = out.len();
    debug_assert_eq!(matrix.len(), cols * v.len());
    for (vr, row) in v.iter().zip(matrix.chunks_exact(cols)) {
        axpy(*vr, row, out);
    }
}

/// `M += alpha · u vᵀ`, row-major with `v.len()` columns.
pub fn rank_one_acc(alpha: f64, u: &[f64], v: &[f64], matrix: &mut [f64]) {
    let cols = v.len();
    debug_assert_eq!(matrix.len(), cols * u.len());
    for (ur, row) in u.iter().zip(matrix.chunks_exact_mut(cols)) {
        axpy(alpha * ur, v, row);
    }
}

/// Logistic sigmoid with the logit clamped to `±LOGIT_CLAMP`.
#[inline]
pub fn sigmoid(logit: f64) -> f64 {
    let z = logit.clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
    1.0 / (1.0 + (-z).exp())
}

/// Appends the constant bias input.
pub fn augment(x: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len() + 1);
    out.extend_from_slice(x);
    out.push(1.0);
    out
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}
