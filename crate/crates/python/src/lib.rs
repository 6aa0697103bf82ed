//! Python bindings for the `lrsdp` solver.

use lrsdp::alm::{solve, SolveOptions, SolveStatus};
use lrsdp::apps::maxcut::{build_maxcut, round_cut};
use lrsdp::apps::{ncm, rcp, spca, theta, Graph};
use lrsdp::error::SdpError;
use lrsdp::io::parse_sdpa_sparse;
use lrsdp::linmap::SymMatrix;
use lrsdp::model::SdpProblem;
use nalgebra::DMatrix;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: SdpError) -> PyErr {
    match e {
        SdpError::Io(_) | SdpError::Eigen(_) | SdpError::NonFinite(_) | SdpError::SingularSystem { .. } | SdpError::DegenerateBlock { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(PyValueError::new_err("ragged matrix"));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// `edges` are 0-based `(i, j, w)` triples.
fn graph(n: usize, edges: Vec<(usize, usize, f64)>) -> PyResult<Graph> {
    Graph::new(n, edges).map_err(to_py)
}

fn options(tol: f64, seed: u64, max_outer: usize) -> SolveOptions {
    SolveOptions { tol, seed, max_outer, record_trace: false, ..SolveOptions::default() }
}

fn run<'py>(py: Python<'py>, prob: SdpProblem, opts: &SolveOptions) -> PyResult<(Bound<'py, PyDict>, lrsdp::linmap::Factor)> {
    let sol = py.allow_threads(|| solve(&prob, opts)).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("objective", sol.report.obj_p)?;
    d.set_item("dual_objective", sol.report.obj_d)?;
    d.set_item("eta_max", sol.report.eta_max)?;
    d.set_item("converged", sol.status == SolveStatus::Converged)?;
    d.set_item("rank", sol.report.rank)?;
    d.set_item("global_certificate", sol.certificates.global_optimality)?;
    d.set_item("outer_iterations", sol.outer_iterations)?;
    d.set_item("time_secs", sol.time_secs)?;
    d.set_item("factor", rows(&sol.r))?;
    Ok((d, sol.r))
}

/// Max-cut relaxation. The objective is `<C, X>` with `C = -L/4`, so the
/// relaxation bound on the cut is `-objective`.
#[pyfunction]
#[pyo3(signature = (n, edges, rank=None, tol=5e-6, seed=0, max_outer=300, trials=100))]
#[allow(clippy::too_many_arguments)]
fn maxcut<'py>(
    py: Python<'py>,
    n: usize,
    edges: Vec<(usize, usize, f64)>,
    rank: Option<usize>,
    tol: f64,
    seed: u64,
    max_outer: usize,
    trials: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let g = graph(n, edges)?;
    let prob = build_maxcut(&g, None, None, rank).map_err(to_py)?;
    let (d, r) = run(py, prob, &options(tol, seed, max_outer))?;
    let (cut, signs) = round_cut(&g, &r, trials, seed).map_err(to_py)?;
    d.set_item("cut", cut)?;
    d.set_item("signs", signs)?;
    Ok(d)
}

/// Lovász theta as `min -<J, X>`; the theta number is `-objective`.
#[pyfunction]
#[pyo3(signature = (n, edges, rank=None, tol=5e-6, seed=0, max_outer=300))]
fn lovasz_theta<'py>(
    py: Python<'py>,
    n: usize,
    edges: Vec<(usize, usize, f64)>,
    rank: Option<usize>,
    tol: f64,
    seed: u64,
    max_outer: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let prob = theta::build_theta(&graph(n, edges)?, rank).map_err(to_py)?;
    Ok(run(py, prob, &options(tol, seed, max_outer))?.0)
}

#[pyfunction]
#[pyo3(signature = (g, weights=None, lower=None, rank=None, tol=5e-6, seed=0, max_outer=300))]
#[allow(clippy::too_many_arguments)]
fn nearest_correlation<'py>(
    py: Python<'py>,
    g: Vec<Vec<f64>>,
    weights: Option<Vec<Vec<f64>>>,
    lower: Option<f64>,
    rank: Option<usize>,
    tol: f64,
    seed: u64,
    max_outer: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let g = matrix(g)?;
    let w = weights.map(matrix).transpose()?;
    let prob = ncm::build_ncm(&g, w.as_ref(), lower, rank).map_err(to_py)?;
    Ok(run(py, prob, &options(tol, seed, max_outer))?.0)
}

#[pyfunction]
#[pyo3(signature = (w, k, rank=None, tol=5e-6, seed=0, max_outer=300))]
fn relaxed_clustering<'py>(
    py: Python<'py>,
    w: Vec<Vec<f64>>,
    k: usize,
    rank: Option<usize>,
    tol: f64,
    seed: u64,
    max_outer: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let w = SymMatrix::dense(matrix(w)?).map_err(to_py)?;
    let prob = rcp::build_rcp(&w, k, rank).map_err(to_py)?;
    Ok(run(py, prob, &options(tol, seed, max_outer))?.0)
}

#[pyfunction]
#[pyo3(signature = (l, lam, rank=None, tol=5e-6, seed=0, max_outer=300))]
fn sparse_pca<'py>(
    py: Python<'py>,
    l: Vec<Vec<f64>>,
    lam: f64,
    rank: Option<usize>,
    tol: f64,
    seed: u64,
    max_outer: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let l = SymMatrix::dense(matrix(l)?).map_err(to_py)?;
    let prob = spca::build_spca(&l, lam, rank).map_err(to_py)?;
    Ok(run(py, prob, &options(tol, seed, max_outer))?.0)
}

/// Solves an SDPA sparse file (maximization form); `objective` is the
/// minimized `<-F0, X>`.
#[pyfunction]
#[pyo3(signature = (path, rank=None, tol=5e-6, seed=0, max_outer=300))]
fn sdpa<'py>(
    py: Python<'py>,
    path: &str,
    rank: Option<usize>,
    tol: f64,
    seed: u64,
    max_outer: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let text = std::fs::read_to_string(path).map_err(|e| PyRuntimeError::new_err(format!("{path}: {e}")))?;
    let data = parse_sdpa_sparse(&text).map_err(to_py)?;
    let prob = data.to_problem(rank).map_err(to_py)?;
    Ok(run(py, prob, &options(tol, seed, max_outer))?.0)
}

#[pymodule]
fn pylrsdp(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(maxcut, m)?)?;
    m.add_function(wrap_pyfunction!(lovasz_theta, m)?)?;
    m.add_function(wrap_pyfunction!(nearest_correlation, m)?)?;
    m.add_function(wrap_pyfunction!(relaxed_clustering, m)?)?;
    m.add_function(wrap_pyfunction!(sparse_pca, m)?)?;
    m.add_function(wrap_pyfunction!(sdpa, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    // [TRIVIAL]
    #[test]
    fn matrix_conversion_round_trips() {
        let m = matrix(vec![vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(m[(1, 0)], 3.0);
        assert_eq!(rows(&m), vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
    }

    // [TRIVIAL]
    #[test]
    fn ragged_matrix_is_rejected() {
        pyo3::prepare_freethreaded_python();
        assert!(matrix(vec![vec![1.0], vec![]]).is_err());
    }
}
