use std::collections::BTreeMap;
use std::fs::File;
use std::path::PathBuf;

use mobilicities::analysis::match_components as match_rows;
use mobilicities::factorize::{self, NmfConfig};
use mobilicities::geo::{haversine_m as haversine, GeoPoint};
use mobilicities::trips::{simplify as simplify_points, SpaceTimePoint};
use mobilicities::waypoints;
use mobilicities_cli::pipeline::run_pipeline as run;
use mobilicities_cli::Settings;
use nalgebra::DMatrix;
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;

create_exception!(mobilicities, MobilicitiesError, PyException);

fn err(e: impl std::fmt::Display) -> PyErr {
    MobilicitiesError::new_err(e.to_string())
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(PyValueError::new_err("rows have different lengths"));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

/// Row-stochastic users x towers matrix of within-trip event fractions.
#[pyclass(name = "WaypointsMatrix", module = "mobilicities", frozen)]
pub struct PyWaypoints {
    inner: waypoints::WaypointsMatrix,
}

#[pymethods]
impl PyWaypoints {
    /// Builds a matrix from raw `(row, col, count)` triplets; rows are
    /// normalized to sum to one.
    #[staticmethod]
    fn from_counts(rows: Vec<String>, cols: Vec<String>, counts: Vec<(usize, usize, f64)>) -> PyResult<Self> {
        let inner = waypoints::WaypointsMatrix::from_counts(rows, cols, &counts).map_err(err)?;
        Ok(PyWaypoints { inner })
    }

    /// Reads the triplet file and sidecar index written by the pipeline.
    #[staticmethod]
    fn read(triplets: PathBuf, sidecar: PathBuf) -> PyResult<Self> {
        let t = File::open(&triplets).map_err(err)?;
        let s = File::open(&sidecar).map_err(err)?;
        Ok(PyWaypoints { inner: waypoints::WaypointsMatrix::read(t, s).map_err(err)? })
    }

    #[getter]
    fn rows(&self) -> Vec<String> {
        self.inner.rows().to_vec()
    }

    #[getter]
    fn cols(&self) -> Vec<String> {
        self.inner.cols().to_vec()
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.inner.matrix().nrows(), self.inner.matrix().ncols())
    }

    #[getter]
    fn nnz(&self) -> usize {
        self.inner.matrix().nnz()
    }

    fn triplets(&self) -> Vec<(usize, usize, f64)> {
        self.inner.matrix().triplets().collect()
    }

    fn to_dense(&self) -> Vec<Vec<f64>> {
        rows_of(&self.inner.matrix().to_dense())
    }

    fn row_sum_deviation(&self) -> f64 {
        self.inner.row_sum_deviation()
    }

    fn __repr__(&self) -> String {
        let (m, n) = self.shape();
        format!("WaypointsMatrix({m} users x {n} towers, nnz={})", self.nnz())
    }
}

#[pyclass(name = "Factorization", module = "mobilicities", frozen, get_all)]
pub struct PyFactorization {
    k: usize,
    seed: u64,
    /// users x k
    u: Vec<Vec<f64>>,
    /// k x towers
    t: Vec<Vec<f64>>,
    objective_history: Vec<f64>,
    iterations: usize,
    converged: bool,
    degenerate: Vec<usize>,
}

impl From<&factorize::Factorization> for PyFactorization {
    fn from(f: &factorize::Factorization) -> Self {
        PyFactorization {
            k: f.k,
            seed: f.seed,
            u: rows_of(&f.u),
            t: rows_of(&f.t),
            objective_history: f.objective_history.clone(),
            iterations: f.iterations_run,
            converged: f.converged,
            degenerate: f.degenerate.clone(),
        }
    }
}

#[pymethods]
impl PyFactorization {
    #[getter]
    fn final_objective(&self) -> f64 {
        *self.objective_history.last().unwrap_or(&f64::INFINITY)
    }

    fn __repr__(&self) -> String {
        format!("Factorization(k={}, objective={:.6}, iterations={})", self.k, self.final_objective(), self.iterations)
    }
}

#[pyclass(name = "Svd", module = "mobilicities", frozen, get_all)]
pub struct PySvd {
    components: Vec<Vec<f64>>,
    singular_values: Vec<f64>,
    user_scores: Vec<Vec<f64>>,
}

#[pyclass(name = "PipelineRun", module = "mobilicities", frozen, get_all)]
pub struct PyPipelineRun {
    run_id: String,
    out: PathBuf,
    total_trips: u64,
    waypoints: Py<PyWaypoints>,
    factorization: Py<PyFactorization>,
    outputs: BTreeMap<String, String>,
}

#[pyfunction]
#[pyo3(signature = (w, k, seed = 0, restarts = 1, max_iter = 200, tol = 1e-4))]
fn nmf(py: Python<'_>, w: &PyWaypoints, k: usize, seed: u64, restarts: usize, max_iter: usize, tol: f64) -> PyResult<PyFactorization> {
    let cfg = NmfConfig { max_iter, tol, ..NmfConfig::new(k) }.seed(seed).restarts(restarts);
    let f = py.detach(|| factorize::nmf(w.inner.matrix(), &cfg)).map_err(err)?;
    Ok(PyFactorization::from(&factorize::normalize_components(&f)))
}

#[pyfunction]
#[pyo3(signature = (w, k, seed = 0))]
fn truncated_svd(py: Python<'_>, w: &PyWaypoints, k: usize, seed: u64) -> PyResult<PySvd> {
    let s = py.detach(|| factorize::truncated_svd(w.inner.matrix(), k, seed)).map_err(err)?;
    Ok(PySvd { components: rows_of(&s.components), singular_values: s.singular_values, user_scores: rows_of(&s.user_scores) })
}

/// `||W - U T||_F^2` for dense factors given as lists of rows.
#[pyfunction]
fn rss(w: &PyWaypoints, u: Vec<Vec<f64>>, t: Vec<Vec<f64>>) -> PyResult<f64> {
    factorize::rss(w.inner.matrix(), &from_rows(&u)?, &from_rows(&t)?).map_err(err)
}

/// NMF and optimal rank-k residuals; a list of `(k, nmf_rss, svd_rss)`.
#[pyfunction]
#[pyo3(signature = (w, ks, seed = 0, restarts = 1))]
fn k_sweep(py: Python<'_>, w: &PyWaypoints, ks: Vec<usize>, seed: u64, restarts: usize) -> PyResult<Vec<(usize, f64, f64)>> {
    let sweep = py.detach(|| factorize::k_sweep(w.inner.matrix(), &ks, seed, restarts)).map_err(err)?;
    Ok(sweep.iter().map(|e| (e.k, e.nmf_rss, e.svd_rss)).collect())
}

/// Kept indices of a `(t, d)` trajectory after simplification.
#[pyfunction]
fn simplify(points: Vec<(f64, f64)>, tol_m: f64) -> Vec<usize> {
    let pts: Vec<SpaceTimePoint> =
        points.iter().enumerate().map(|(i, &(t, d))| SpaceTimePoint { t, d, event_index: i }).collect();
    simplify_points(&pts, tol_m).iter().map(|p| p.event_index).collect()
}

#[pyfunction]
fn haversine_m(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> PyResult<f64> {
    let a = GeoPoint::new(lat1, lon1).map_err(err)?;
    let b = GeoPoint::new(lat2, lon2).map_err(err)?;
    Ok(haversine(a, b))
}

/// Block-structured matrix with `k_true` planted components. Returns the
/// matrix and one 0/1 tower indicator per component.
#[pyfunction]
#[pyo3(signature = (n_users, n_towers, k_true, noise = 0.05, seed = 0))]
fn synth_waypoints(n_users: usize, n_towers: usize, k_true: usize, noise: f64, seed: u64) -> PyResult<(PyWaypoints, Vec<Vec<f64>>)> {
    let (w, truth) = mobilicities::synth::synth_waypoints(n_users, n_towers, k_true, noise, seed).map_err(err)?;
    let indicators = truth.component_indicators(w.cols());
    Ok((PyWaypoints { inner: w }, indicators))
}

/// Best one-to-one matching of reference vectors to rows of `t`. Returns
/// the assignment and the mean cosine.
#[pyfunction]
fn match_components(t: Vec<Vec<f64>>, references: Vec<Vec<f64>>) -> PyResult<(Vec<usize>, f64)> {
    let m = match_rows(&from_rows(&t)?, &references).map_err(err)?;
    Ok((m.assignment, m.mean_cosine))
}

/// Runs the full pipeline. Keyword arguments are the settings keys
/// (`events`, `towers`, `synth`, `out`, `k`, ...).
#[pyfunction]
#[pyo3(signature = (**settings))]
fn run_pipeline(py: Python<'_>, settings: Option<BTreeMap<String, Bound<'_, PyAny>>>) -> PyResult<PyPipelineRun> {
    let mut flags = Vec::new();
    for (key, value) in settings.unwrap_or_default() {
        flags.push((key, value.str()?.to_string()));
    }
    let flags: Vec<(&str, String)> = flags.iter().map(|(k, v)| (k.as_str(), v.clone())).collect();
    let settings = Settings::resolve(None, &flags).map_err(err)?;
    let outcome = py.detach(|| run(&settings)).map_err(err)?;
    Ok(PyPipelineRun {
        run_id: outcome.manifest.run_id.clone(),
        out: settings.out.clone(),
        total_trips: outcome.trip_stats.total_trips,
        waypoints: Py::new(py, PyWaypoints { inner: outcome.data.waypoints })?,
        factorization: Py::new(py, PyFactorization::from(&outcome.factorization))?,
        outputs: outcome.manifest.outputs,
    })
}

#[pymodule]
#[pyo3(name = "mobilicities")]
fn mobilicities_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("MobilicitiesError", m.py().get_type::<MobilicitiesError>())?;
    m.add_class::<PyWaypoints>()?;
    m.add_class::<PyFactorization>()?;
    m.add_class::<PySvd>()?;
    m.add_class::<PyPipelineRun>()?;
    m.add_function(wrap_pyfunction!(nmf, m)?)?;
    m.add_function(wrap_pyfunction!(truncated_svd, m)?)?;
    m.add_function(wrap_pyfunction!(rss, m)?)?;
    m.add_function(wrap_pyfunction!(k_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(simplify, m)?)?;
    m.add_function(wrap_pyfunction!(haversine_m, m)?)?;
    m.add_function(wrap_pyfunction!(synth_waypoints, m)?)?;
    m.add_function(wrap_pyfunction!(match_components, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}
