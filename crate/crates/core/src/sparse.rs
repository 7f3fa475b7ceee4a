//! Compressed sparse row storage and the handful of products the
//! factorizers need against dense `nalgebra` matrices.

use nalgebra::DMatrix;

use crate::error::{input, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from (row, col, value) triplets. Duplicates are summed and
    /// explicit zeros dropped; storage is canonical (sorted by row, col).
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut sorted: Vec<(usize, usize, f64)> = Vec::with_capacity(triplets.len());
        for &(r, c, v) in triplets {
            if r >= nrows || c >= ncols {
                return input(format!("entry ({r}, {c}) outside a {nrows}x{ncols} matrix"));
            }
            if !v.is_finite() {
                return input(format!("non-finite entry at ({r}, {c})"));
            }
            sorted.push((r, c, v));
        }
        sorted.sort_by_key(|&(r, c, _)| (r, c));
        let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(sorted.len());
        for (r, c, v) in sorted {
            match merged.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => merged.push((r, c, v)),
            }
        }
        merged.retain(|e| e.2 != 0.0);
        let mut indptr = vec![0; nrows + 1];
        for &(r, _, _) in &merged {
            indptr[r + 1] += 1;
        }
        for i in 0..nrows {
            indptr[i + 1] += indptr[i];
        }
        Ok(CsrMatrix {
            nrows,
            ncols,
            indptr,
            indices: merged.iter().map(|e| e.1).collect(),
            values: merged.iter().map(|e| e.2).collect(),
        })
    }

    pub fn from_dense(dense: &DMatrix<f64>) -> Self {
        let mut triplets = Vec::new();
        for i in 0..dense.nrows() {
            for j in 0..dense.ncols() {
                let v = dense[(i, j)];
                if v != 0.0 {
                    triplets.push((i, j, v));
                }
            }
        }
        CsrMatrix::from_triplets(dense.nrows(), dense.ncols(), &triplets).expect("dense entries are in bounds")
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        CsrMatrix { nrows, ncols, indptr: vec![0; nrows + 1], indices: vec![], values: vec![] }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let span = self.indptr[i]..self.indptr[i + 1];
        (&self.indices[span.clone()], &self.values[span])
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&j, &v)| (i, j, v))
        })
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.nrows, self.ncols);
        for (i, j, v) in self.triplets() {
            d[(i, j)] = v;
        }
        d
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn is_nonnegative(&self) -> bool {
        self.values.iter().all(|v| *v >= 0.0)
    }

    /// `self * x` for dense `x` with `ncols` rows.
    pub fn mul_dense(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(x.nrows(), self.ncols, "shape mismatch in sparse * dense");
        let mut out = DMatrix::zeros(self.nrows, x.ncols());
        for c in 0..x.ncols() {
            let xc = x.column(c);
            for i in 0..self.nrows {
                let (cols, vals) = self.row(i);
                out[(i, c)] = cols.iter().zip(vals).map(|(&j, &v)| v * xc[j]).sum();
            }
        }
        out
    }

    /// `self^T * y` for dense `y` with `nrows` rows.
    pub fn transpose_mul_dense(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(y.nrows(), self.nrows, "shape mismatch in sparse^T * dense");
        let mut out = DMatrix::zeros(self.ncols, y.ncols());
        for c in 0..y.ncols() {
            let yc = y.column(c);
            let mut oc = out.column_mut(c);
            for i in 0..self.nrows {
                let yi = yc[i];
                if yi == 0.0 {
                    continue;
                }
                let (cols, vals) = self.row(i);
                for (&j, &v) in cols.iter().zip(vals) {
                    oc[j] += v * yi;
                }
            }
        }
        out
    }

    /// `self * t^T` where `t` is `k x ncols`, giving `nrows x k`.
    pub fn mul_dense_transpose(&self, t: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(t.ncols(), self.ncols, "shape mismatch in sparse * dense^T");
        let k = t.nrows();
        let mut out = DMatrix::zeros(self.nrows, k);
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                let tc = t.column(j);
                for c in 0..k {
                    out[(i, c)] += v * tc[c];
                }
            }
        }
        out
    }

    /// Gram matrix `self^T * self` (ncols x ncols).
    pub fn gram_cols(&self) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(self.ncols, self.ncols);
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (a, (&ja, &va)) in cols.iter().zip(vals).enumerate() {
                for (&jb, &vb) in cols[a..].iter().zip(&vals[a..]) {
                    g[(ja, jb)] += va * vb;
                }
            }
        }
        g.fill_lower_triangle_with_upper_triangle();
        g
    }

    /// Gram matrix `self * self^T` (nrows x nrows).
    pub fn gram_rows(&self) -> DMatrix<f64> {
        let dense_t = self.to_dense().transpose();
        self.mul_dense(&dense_t)
    }
}
