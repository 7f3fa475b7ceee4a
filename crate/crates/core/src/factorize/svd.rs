use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::sparse::CsrMatrix;

use super::check_rank;

pub const DEFAULT_OVERSAMPLES: usize = 10;
pub const DEFAULT_POWER_ITERS: usize = 4;
/// Largest smaller dimension for which `truncated_svd` decomposes the Gram
/// matrix exactly instead of sampling.
pub const EXACT_GRAM_LIMIT: usize = 2048;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvdResult {
    /// Right singular vectors as rows (`k x ncols`).
    pub components: DMatrix<f64>,
    /// Non-increasing.
    pub singular_values: Vec<f64>,
    /// Projection of each row of the input on the components (`nrows x k`).
    pub user_scores: DMatrix<f64>,
}

fn thin_q(y: DMatrix<f64>) -> DMatrix<f64> {
    y.qr().q()
}

/// Top-k SVD. Exact through the Gram matrix when the smaller dimension is at
/// most [`EXACT_GRAM_LIMIT`], randomized otherwise.
pub fn truncated_svd(w: &CsrMatrix, k: usize, seed: u64) -> Result<SvdResult> {
    if w.nrows().min(w.ncols()) <= EXACT_GRAM_LIMIT {
        gram_svd(w, k)
    } else {
        truncated_svd_with(w, k, seed, DEFAULT_OVERSAMPLES, DEFAULT_POWER_ITERS)
    }
}

fn orient(mut row: nalgebra::RowDVector<f64>) -> nalgebra::RowDVector<f64> {
    // sign convention: the largest-magnitude entry is positive
    let pivot = row.iter().copied().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
    if pivot < 0.0 {
        row.neg_mut();
    }
    row
}

/// Exact top-k SVD from the eigendecomposition of the smaller Gram matrix.
pub fn gram_svd(w: &CsrMatrix, k: usize) -> Result<SvdResult> {
    check_rank(w, k)?;
    let by_cols = w.ncols() <= w.nrows();
    let eig = SymmetricEigen::new(if by_cols { w.gram_cols() } else { w.gram_rows() });
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    order.truncate(k);
    let singular_values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0).sqrt()).collect();

    let mut components = DMatrix::zeros(k, w.ncols());
    if by_cols {
        for (c, &i) in order.iter().enumerate() {
            components.set_row(c, &orient(eig.eigenvectors.column(i).transpose()));
        }
    } else {
        let u = DMatrix::from_fn(w.nrows(), k, |r, c| eig.eigenvectors[(r, order[c])]);
        let v = w.transpose_mul_dense(&u);
        for c in 0..k {
            let col = v.column(c);
            let norm = col.norm();
            if norm > 0.0 {
                components.set_row(c, &orient(col.transpose() / norm));
            }
        }
    }
    let user_scores = w.mul_dense_transpose(&components);
    Ok(SvdResult { components, singular_values, user_scores })
}

/// Randomized truncated SVD: Gaussian range finder with subspace power
/// iterations, then an exact SVD of the small projected matrix.
pub fn truncated_svd_with(
    w: &CsrMatrix,
    k: usize,
    seed: u64,
    oversamples: usize,
    power_iters: usize,
) -> Result<SvdResult> {
    check_rank(w, k)?;
    let (m, n) = (w.nrows(), w.ncols());
    let l = (k + oversamples).min(m.min(n));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let omega = DMatrix::from_fn(n, l, |_, _| StandardNormal.sample(&mut rng));
    let mut q = thin_q(w.mul_dense(&omega));
    for _ in 0..power_iters {
        let z = thin_q(w.transpose_mul_dense(&q));
        q = thin_q(w.mul_dense(&z));
    }
    let b = w.transpose_mul_dense(&q).transpose();
    let svd = b.svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    order.truncate(k);

    let mut components = DMatrix::zeros(k, n);
    for (c, &idx) in order.iter().enumerate() {
        components.set_row(c, &orient(v_t.row(idx).into_owned()));
    }
    let singular_values = order.iter().map(|&i| svd.singular_values[i].max(0.0)).collect();
    let user_scores = w.mul_dense_transpose(&components);
    Ok(SvdResult { components, singular_values, user_scores })
}

/// Eigenvalues of the smaller Gram matrix of `w`, descending. These are the
/// squared singular values of `w`.
pub fn squared_singular_values(w: &CsrMatrix) -> Vec<f64> {
    let gram = if w.ncols() <= w.nrows() { w.gram_cols() } else { w.gram_rows() };
    let eig: DVector<f64> = SymmetricEigen::new(gram).eigenvalues;
    let mut vals: Vec<f64> = eig.iter().map(|v| v.max(0.0)).collect();
    vals.sort_by(|a, b| b.total_cmp(a));
    vals
}

/// Optimal rank-k residual sum of squares for every k, from the spectrum.
#[derive(Debug, Clone)]
pub struct SpectrumRss {
    total: f64,
    squared: Vec<f64>,
}

impl SpectrumRss {
    pub fn new(w: &CsrMatrix) -> Self {
        SpectrumRss { total: w.frobenius_sq(), squared: squared_singular_values(w) }
    }

    pub fn rss(&self, k: usize) -> f64 {
        let kept: f64 = self.squared.iter().take(k).sum();
        (self.total - kept).max(0.0)
    }
}

/// Residual of the best rank-k approximation, `||W||_F^2 - sum of the top k
/// squared singular values`.
pub fn svd_rss_exact(w: &CsrMatrix, k: usize) -> Result<f64> {
    check_rank(w, k)?;
    Ok(SpectrumRss::new(w).rss(k))
}
