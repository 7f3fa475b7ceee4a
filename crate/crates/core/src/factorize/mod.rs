//! Non-negative matrix factorization of the waypoints matrix, the truncated
//! SVD baseline, and diagnostics for choosing the component count.

mod io;
mod nmf;
mod svd;

use nalgebra::DMatrix;

use crate::error::{input, Result};
use crate::sparse::CsrMatrix;

pub use io::{read_factorization, write_factorization, FactorizationManifest};
pub use nmf::{mu_step, nmf, nndsvda_init, NmfConfig};
pub use svd::{gram_svd, squared_singular_values, svd_rss_exact, truncated_svd, truncated_svd_with, SpectrumRss, SvdResult};

/// Factors `u` (users x k) and `t` (k x towers). Row `c` of `t` is the
/// tower weighting of component `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct Factorization {
    pub u: DMatrix<f64>,
    pub t: DMatrix<f64>,
    pub k: usize,
    pub seed: u64,
    /// Frobenius residual `||W - UT||_F`, starting with the initial factors.
    pub objective_history: Vec<f64>,
    pub iterations_run: usize,
    pub converged: bool,
    /// Which restart produced these factors.
    pub restart: usize,
    /// Components whose tower row is all zero.
    pub degenerate: Vec<usize>,
}

impl Factorization {
    pub fn final_objective(&self) -> f64 {
        *self.objective_history.last().unwrap_or(&f64::INFINITY)
    }

    pub fn is_nonnegative(&self) -> bool {
        self.u.iter().chain(self.t.iter()).all(|v| *v >= 0.0)
    }
}

pub(crate) fn check_rank(w: &CsrMatrix, k: usize) -> Result<()> {
    let max = w.nrows().min(w.ncols());
    if w.nrows() == 0 {
        return input("matrix has no rows");
    }
    if k == 0 || k > max {
        return input(format!("k = {k} outside [1, {max}]"));
    }
    Ok(())
}

/// `||W - U T||_F^2`, streamed one row at a time so neither `W` nor `U T`
/// is materialized densely.
pub fn rss(w: &CsrMatrix, u: &DMatrix<f64>, t: &DMatrix<f64>) -> Result<f64> {
    if u.nrows() != w.nrows() || t.ncols() != w.ncols() || u.ncols() != t.nrows() {
        return input(format!(
            "shape mismatch: W {}x{}, U {}x{}, T {}x{}",
            w.nrows(),
            w.ncols(),
            u.nrows(),
            u.ncols(),
            t.nrows(),
            t.ncols()
        ));
    }
    let k = u.ncols();
    let mut row = vec![0.0; w.ncols()];
    let mut u_row = vec![0.0; k];
    let mut total = 0.0;
    for i in 0..w.nrows() {
        for (c, slot) in u_row.iter_mut().enumerate() {
            *slot = u[(i, c)];
        }
        for (j, r) in row.iter_mut().enumerate() {
            *r = t.column(j).iter().zip(&u_row).map(|(a, b)| a * b).sum();
        }
        let (cols, vals) = w.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            row[j] -= v;
        }
        total += row.iter().map(|x| x * x).sum::<f64>();
    }
    Ok(total)
}

pub fn residual(w: &CsrMatrix, u: &DMatrix<f64>, t: &DMatrix<f64>) -> Result<f64> {
    rss(w, u, t).map(f64::sqrt)
}

/// Scales each tower row to unit L1 mass and compensates in the user
/// column, leaving `U T` unchanged. All-zero rows are left as they are and
/// recorded in `degenerate`.
pub fn normalize_components(f: &Factorization) -> Factorization {
    let mut out = f.clone();
    out.degenerate.clear();
    for c in 0..f.k {
        let mass: f64 = f.t.row(c).sum();
        if mass <= 0.0 {
            out.degenerate.push(c);
            continue;
        }
        out.t.row_mut(c).scale_mut(1.0 / mass);
        out.u.column_mut(c).scale_mut(mass);
    }
    out
}

#[derive(Debug, Clone)]
pub struct SweepEntry {
    pub k: usize,
    pub nmf_rss: f64,
    pub svd_rss: f64,
    pub factorization: Factorization,
}

/// Best-of-restarts NMF residual and optimal rank-k residual for each `k`.
pub fn k_sweep(w: &CsrMatrix, ks: &[usize], seed: u64, n_restarts: usize) -> Result<Vec<SweepEntry>> {
    if ks.is_empty() {
        return input("no k values to sweep");
    }
    for &k in ks {
        check_rank(w, k)?;
    }
    let spectrum = SpectrumRss::new(w);
    ks.iter()
        .map(|&k| {
            let f = nmf(w, &NmfConfig::new(k).seed(seed).restarts(n_restarts))?;
            Ok(SweepEntry { k, nmf_rss: rss(w, &f.u, &f.t)?, svd_rss: spectrum.rss(k), factorization: f })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sparse(m: usize, n: usize, density: f64, seed: u64) -> CsrMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut trips = Vec::new();
        for i in 0..m {
            for j in 0..n {
                if rng.random::<f64>() < density {
                    trips.push((i, j, rng.random::<f64>()));
                }
            }
        }
        CsrMatrix::from_triplets(m, n, &trips).unwrap()
    }

    fn cosine(a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    }

    #[test]
    fn rss_cases() {
        let w = CsrMatrix::from_dense(&DMatrix::identity(2, 2));
        let u = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        let t = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        assert_eq!(rss(&w, &u, &t).unwrap(), 1.0);
        assert_eq!(rss(&w, &DMatrix::zeros(2, 1), &DMatrix::zeros(1, 2)).unwrap(), w.frobenius_sq());
        let exact_u = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]);
        let exact_t = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.5]);
        assert!(rss(&w, &exact_u, &exact_t).unwrap() < 1e-12);
        assert!(rss(&w, &DMatrix::zeros(3, 1), &t).is_err());
    }

    #[test]
    fn rss_matches_dense_evaluation() {
        let w = random_sparse(20, 15, 0.3, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = DMatrix::from_fn(20, 3, |_, _| rng.random::<f64>());
        let t = DMatrix::from_fn(3, 15, |_, _| rng.random::<f64>());
        let dense = (w.to_dense() - &u * &t).norm_squared();
        assert!((rss(&w, &u, &t).unwrap() - dense).abs() < 1e-9 * dense);
    }

    #[test]
    fn mu_step_fixed_point() {
        let u = DMatrix::from_row_slice(3, 2, &[1.0, 0.5, 0.2, 2.0, 1.5, 1.0]);
        let t = DMatrix::from_row_slice(2, 4, &[1.0, 0.3, 0.0, 2.0, 0.4, 1.0, 1.2, 0.1]);
        let w = CsrMatrix::from_dense(&(&u * &t));
        let (u2, t2) = mu_step(&u, &t, &w, 1e-12);
        assert!((&u2 - &u).abs().max() < 1e-9);
        assert!((&t2 - &t).abs().max() < 1e-9);
    }

    #[test]
    fn mu_step_decreases_objective() {
        let w = random_sparse(10, 8, 0.5, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let u = DMatrix::from_fn(10, 3, |_, _| rng.random::<f64>());
        let t = DMatrix::from_fn(3, 8, |_, _| rng.random::<f64>());
        let (u2, t2) = mu_step(&u, &t, &w, 1e-12);
        assert!(rss(&w, &u2, &t2).unwrap() <= rss(&w, &u, &t).unwrap());
        assert!(u2.iter().chain(t2.iter()).all(|v| *v >= 0.0));
    }

    #[test]
    fn mu_step_zero_row_vanishes() {
        // W = [[1, 0], [0, 0]]: numerator of row 1 of U is W T^T = 0
        let w = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0)]).unwrap();
        let u = DMatrix::from_element(2, 1, 1.0);
        let t = DMatrix::from_element(1, 2, 1.0);
        let (u2, _) = mu_step(&u, &t, &w, 1e-12);
        assert!(u2[(1, 0)].abs() <= 1e-12);
        // row 0: 1 * 1 / (1 * 2 + eps)
        assert!((u2[(0, 0)] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn nmf_rank_one_is_recovered() {
        let a = [0.5, 1.0, 2.0, 0.1, 0.7, 1.3];
        let b = [1.0, 0.0, 0.25, 2.0, 0.6];
        let w = CsrMatrix::from_dense(&DMatrix::from_fn(6, 5, |i, j| a[i] * b[j]));
        let f = nmf(&w, &NmfConfig::new(1)).unwrap();
        let rel = rss(&w, &f.u, &f.t).unwrap().sqrt() / w.frobenius_sq().sqrt();
        assert!(rel <= 1e-3, "{rel}");
        assert!(f.is_nonnegative());
    }

    #[test]
    fn nmf_block_diagonal_recovered() {
        let mut dense = DMatrix::zeros(12, 10);
        for i in 0..12 {
            let (cols, base) = if i < 6 { (0..4, 0.25) } else { (4..10, 1.0 / 6.0) };
            for j in cols {
                dense[(i, j)] = base * (1.0 + 0.1 * ((i + j) % 3) as f64);
            }
        }
        let w = CsrMatrix::from_dense(&dense);
        let f = nmf(&w, &NmfConfig::new(2).max_iter(500)).unwrap();
        let ind_a: Vec<f64> = (0..10).map(|j| if j < 4 { 1.0 } else { 0.0 }).collect();
        let ind_b: Vec<f64> = (0..10).map(|j| if j >= 4 { 1.0 } else { 0.0 }).collect();
        let rows: Vec<Vec<f64>> = (0..2).map(|c| f.t.row(c).iter().copied().collect()).collect();
        let direct = cosine(&rows[0], &ind_a).min(cosine(&rows[1], &ind_b));
        let swapped = cosine(&rows[0], &ind_b).min(cosine(&rows[1], &ind_a));
        assert!(direct.max(swapped) >= 0.99, "{direct} {swapped}");
    }

    #[test]
    fn nmf_objective_monotone_and_deterministic() {
        let w = random_sparse(40, 25, 0.2, 17);
        let cfg = NmfConfig::new(4).seed(5).restarts(3);
        let f = nmf(&w, &cfg).unwrap();
        for p in f.objective_history.windows(2) {
            assert!(p[1] <= p[0] * (1.0 + 1e-10));
        }
        assert_eq!(f.iterations_run + 1, f.objective_history.len());
        let g = nmf(&w, &cfg).unwrap();
        assert_eq!(f.objective_history, g.objective_history);
        assert_eq!(f.u, g.u);
    }

    #[test]
    fn nmf_errors() {
        let w = random_sparse(5, 4, 0.5, 1);
        assert!(matches!(nmf(&w, &NmfConfig::new(0)), Err(crate::Error::Input(_))));
        assert!(matches!(nmf(&w, &NmfConfig::new(5)), Err(crate::Error::Input(_))));
        let zero = CsrMatrix::zeros(3, 3);
        assert!(matches!(nmf(&zero, &NmfConfig::new(2)), Err(crate::Error::Degenerate(_))));
    }

    #[test]
    fn normalize_preserves_product() {
        let w = random_sparse(30, 12, 0.3, 21);
        let f = nmf(&w, &NmfConfig::new(3).seed(2)).unwrap();
        let g = normalize_components(&f);
        let before = &f.u * &f.t;
        let after = &g.u * &g.t;
        assert!((&before - &after).norm() <= 1e-9 * before.norm());
        for c in 0..3 {
            assert!((g.t.row(c).sum() - 1.0).abs() < 1e-12);
        }
        let again = normalize_components(&g);
        assert!((&again.t - &g.t).abs().max() < 1e-15);
        assert!((&again.u - &g.u).abs().max() < 1e-12);
    }

    #[test]
    fn normalize_simple_and_degenerate() {
        let f = Factorization {
            u: DMatrix::from_row_slice(1, 2, &[1.0, 3.0]),
            t: DMatrix::from_row_slice(2, 2, &[2.0, 2.0, 0.0, 0.0]),
            k: 2,
            seed: 0,
            objective_history: vec![],
            iterations_run: 0,
            converged: true,
            restart: 0,
            degenerate: vec![],
        };
        let g = normalize_components(&f);
        assert_eq!(g.t.row(0).iter().copied().collect::<Vec<_>>(), [0.5, 0.5]);
        assert_eq!(g.u[(0, 0)], 4.0);
        assert_eq!(g.degenerate, [1]);
        assert_eq!(g.u[(0, 1)], 3.0);
    }

    #[test]
    fn sweep_dominance_and_full_rank() {
        let w = random_sparse(12, 8, 0.6, 8);
        let sweep = k_sweep(&w, &[2, 4, 8], 1, 2).unwrap();
        for e in &sweep {
            assert!(e.svd_rss <= e.nmf_rss + 1e-9);
        }
        assert!(sweep.windows(2).all(|p| p[1].svd_rss < p[0].svd_rss));
        assert!(sweep[2].svd_rss <= 1e-9);
        assert!(k_sweep(&w, &[], 1, 1).is_err());
    }
}
