use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

use super::svd::truncated_svd;
use super::{check_rank, residual, Factorization};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NmfConfig {
    pub k: usize,
    pub max_iter: usize,
    /// Stop once the relative objective decrease falls below this.
    pub tol: f64,
    pub seed: u64,
    pub n_restarts: usize,
    /// Denominator guard of the multiplicative updates.
    pub eps: f64,
}

impl NmfConfig {
    pub fn new(k: usize) -> Self {
        NmfConfig { k, max_iter: 200, tol: 1e-4, seed: 0, n_restarts: 1, eps: 1e-12 }
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn restarts(mut self, n: usize) -> Self {
        self.n_restarts = n;
        self
    }

    pub fn max_iter(mut self, n: usize) -> Self {
        self.max_iter = n;
        self
    }
}

/// One round of Lee-Seung multiplicative updates for the Frobenius
/// objective: first `u`, then `t` against the updated `u`.
pub fn mu_step(u: &DMatrix<f64>, t: &DMatrix<f64>, w: &CsrMatrix, eps: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let numer = w.mul_dense_transpose(t);
    let denom = u * (t * t.transpose());
    let u_next = u.zip_zip_map(&numer, &denom, |x, n, d| x * n / (d + eps));

    let numer = w.transpose_mul_dense(&u_next).transpose();
    let denom = (u_next.transpose() * &u_next) * t;
    let t_next = t.zip_zip_map(&numer, &denom, |x, n, d| x * n / (d + eps));
    (u_next, t_next)
}

/// NNDSVD initialization with zeros replaced by the mean of `w`.
pub fn nndsvda_init(w: &CsrMatrix, k: usize, seed: u64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let svd = truncated_svd(w, k, seed)?;
    let (m, n) = (w.nrows(), w.ncols());
    let mut u = DMatrix::zeros(m, k);
    let mut t = DMatrix::zeros(k, n);
    for c in 0..k {
        let s = svd.singular_values[c];
        if s <= 0.0 {
            continue;
        }
        let left: Vec<f64> = svd.user_scores.column(c).iter().map(|x| x / s).collect();
        let right: Vec<f64> = svd.components.row(c).iter().copied().collect();
        let (x, y, scale) = if c == 0 {
            let x: Vec<f64> = left.iter().map(|v| v.abs()).collect();
            let y: Vec<f64> = right.iter().map(|v| v.abs()).collect();
            (x, y, s.sqrt())
        } else {
            let pos = |v: &[f64]| v.iter().map(|x| x.max(0.0)).collect::<Vec<_>>();
            let neg = |v: &[f64]| v.iter().map(|x| (-x).max(0.0)).collect::<Vec<_>>();
            let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let (xp, yp, xn, yn) = (pos(&left), pos(&right), neg(&left), neg(&right));
            let (nxp, nyp, nxn, nyn) = (norm(&xp), norm(&yp), norm(&xn), norm(&yn));
            let (mp, mn) = (nxp * nyp, nxn * nyn);
            let (x, y, nx, ny, sigma) = if mp > mn { (xp, yp, nxp, nyp, mp) } else { (xn, yn, nxn, nyn, mn) };
            if sigma <= 0.0 {
                continue;
            }
            (
                x.iter().map(|v| v / nx).collect(),
                y.iter().map(|v| v / ny).collect(),
                (s * sigma).sqrt(),
            )
        };
        for (i, v) in x.iter().enumerate() {
            u[(i, c)] = scale * v;
        }
        for (j, v) in y.iter().enumerate() {
            t[(c, j)] = scale * v;
        }
    }
    let mean = w.sum() / (m * n) as f64;
    let fill = |x: f64| if x < 1e-12 { mean } else { x };
    Ok((u.map(fill), t.map(fill)))
}

/// Uniform factors on `[0, 2 sqrt(mean / k))`, so `u t` matches the mean
/// of `w` in expectation.
fn random_init(w: &CsrMatrix, k: usize, rng: &mut ChaCha8Rng) -> (DMatrix<f64>, DMatrix<f64>) {
    let scale = 2.0 * (w.sum() / (w.nrows() * w.ncols()) as f64 / k as f64).sqrt();
    let mut draw = || scale * rng.random::<f64>();
    let u = DMatrix::from_fn(w.nrows(), k, |_, _| draw());
    let t = DMatrix::from_fn(k, w.ncols(), |_, _| draw());
    (u, t)
}

fn run(w: &CsrMatrix, mut u: DMatrix<f64>, mut t: DMatrix<f64>, cfg: &NmfConfig) -> Result<(DMatrix<f64>, DMatrix<f64>, Vec<f64>, bool)> {
    // residuals below this are rounding noise
    let floor = 1e-12 * w.frobenius_sq().sqrt();
    let mut history = vec![residual(w, &u, &t)?];
    let mut converged = false;
    for _ in 0..cfg.max_iter {
        let prev = *history.last().unwrap();
        if prev <= floor {
            converged = true;
            break;
        }
        (u, t) = mu_step(&u, &t, w, cfg.eps);
        let cur = residual(w, &u, &t)?;
        history.push(cur);
        if (prev - cur) / prev < cfg.tol {
            converged = true;
            break;
        }
    }
    Ok((u, t, history, converged))
}

/// Non-negative factorization `w ~ u t` by multiplicative updates. The first
/// restart starts from NNDSVD-A, later ones from seeded random factors; the
/// restart with the lowest final residual is returned.
pub fn nmf(w: &CsrMatrix, cfg: &NmfConfig) -> Result<Factorization> {
    check_rank(w, cfg.k)?;
    if !w.is_nonnegative() {
        return Err(Error::Input("matrix has negative entries".into()));
    }
    if w.frobenius_sq() == 0.0 {
        return Err(Error::Degenerate("matrix is all zeros".into()));
    }
    if cfg.n_restarts == 0 || cfg.max_iter == 0 || !(cfg.tol >= 0.0) || !(cfg.eps > 0.0) {
        return Err(Error::Input("restarts and max_iter must be positive, tol non-negative, eps positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<Factorization> = None;
    for restart in 0..cfg.n_restarts {
        let (u0, t0) = if restart == 0 { nndsvda_init(w, cfg.k, cfg.seed)? } else { random_init(w, cfg.k, &mut rng) };
        let (u, t, history, converged) = run(w, u0, t0, cfg)?;
        let candidate = Factorization {
            u,
            t,
            k: cfg.k,
            seed: cfg.seed,
            iterations_run: history.len() - 1,
            objective_history: history,
            converged,
            restart,
            degenerate: Vec::new(),
        };
        let better = best.as_ref().is_none_or(|b| candidate.final_objective() < b.final_objective());
        if better {
            best = Some(candidate);
        }
    }
    Ok(best.expect("at least one restart"))
}
