//! Python bindings: meshes, synthetic data, the forward solve, the misfit
//! energy and its gradient, the TV prox, and full ADMM runs.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use coeffid::assembly::{self, Source};
use coeffid::config::RunConfig;
use coeffid::driver::{Admm, AdmmConfig, IterRecord, Reference};
use coeffid::linsolve::LinearSolverConfig;
use coeffid::mesh::{self, interior_gradients};
use coeffid::problems::{self, generate_observation};
use coeffid::psolver;
use coeffid::qsolver::BoxBounds;
use coeffid::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::InvalidArgument(m) => PyValueError::new_err(m),
        Error::Config(m) => PyValueError::new_err(format!("config error: {m}")),
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn lin(tol: f64) -> LinearSolverConfig {
    LinearSolverConfig::with_tol(tol)
}

/// Uniform triangulation of the unit square with `n` subdivisions per side.
#[pyclass(frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct Mesh {
    inner: mesh::Mesh,
}

#[pymethods]
impl Mesh {
    #[new]
    fn new(n: usize) -> PyResult<Self> {
        Ok(Self {
            inner: mesh::build_uniform_mesh(n).map_err(to_py)?,
        })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn h(&self) -> f64 {
        self.inner.h()
    }

    #[getter]
    fn num_nodes(&self) -> usize {
        self.inner.num_nodes()
    }

    #[getter]
    fn num_interior(&self) -> usize {
        self.inner.num_interior()
    }

    #[getter]
    fn num_triangles(&self) -> usize {
        self.inner.num_triangles()
    }

    fn nodes(&self) -> Vec<(f64, f64)> {
        self.inner.nodes().iter().map(|p| (p[0], p[1])).collect()
    }

    fn triangles(&self) -> Vec<(usize, usize, usize)> {
        self.inner
            .triangles()
            .iter()
            .map(|t| (t[0], t[1], t[2]))
            .collect()
    }

    /// Nodal interpolant of one of the built-in coefficients ("ex1" or "ex2").
    fn example(&self, name: &str) -> PyResult<Vec<f64>> {
        let f = example_fn(name)?;
        Ok(self.inner.interpolate(f))
    }

    /// Zero-extends an interior field to all nodes.
    fn extend_interior(&self, u: Vec<f64>) -> PyResult<Vec<f64>> {
        if u.len() != self.inner.num_interior() {
            return Err(PyValueError::new_err("interior field has the wrong length"));
        }
        Ok(self.inner.extend_interior(&u))
    }

    fn __repr__(&self) -> String {
        format!("Mesh(n={})", self.inner.n())
    }
}

fn example_fn(name: &str) -> PyResult<fn(f64, f64) -> f64> {
    match name {
        "ex1" => Ok(problems::example1_q),
        "ex2" => Ok(problems::example2_q),
        _ => Err(PyValueError::new_err(format!("unknown example {name:?}"))),
    }
}

/// Evaluates a built-in coefficient at a point.
#[pyfunction]
fn example_q(name: &str, x: f64, y: f64) -> PyResult<f64> {
    Ok(example_fn(name)?(x, y))
}

/// Observed state gradient, one vector per triangle.
#[pyclass(frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct Observation {
    inner: assembly::Observation,
}

#[pymethods]
impl Observation {
    #[new]
    fn new(mesh: &Mesh, grads: Vec<(f64, f64)>) -> PyResult<Self> {
        let grads = grads.into_iter().map(|(a, b)| [a, b]).collect();
        Ok(Self {
            inner: assembly::Observation::new(&mesh.inner, grads).map_err(to_py)?,
        })
    }

    fn grads(&self) -> Vec<(f64, f64)> {
        self.inner.grads.iter().map(|g| (g[0], g[1])).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.grads.len()
    }
}

/// Synthetic data at `q_true`; returns the observation and the clean
/// interior state.
#[pyfunction]
#[pyo3(signature = (mesh, q_true, delta=0.0, seed=1, f=10.0, tol=1e-10))]
fn observe(
    mesh: &Mesh,
    q_true: Vec<f64>,
    delta: f64,
    seed: u64,
    f: f64,
    tol: f64,
) -> PyResult<(Observation, Vec<f64>)> {
    let (obs, u) =
        generate_observation(&mesh.inner, &q_true, f, delta, seed, &lin(tol)).map_err(to_py)?;
    Ok((Observation { inner: obs }, u))
}

/// Interior state `u` with `−∇·(q∇u) = f`, `u = 0` on the boundary.
#[pyfunction]
#[pyo3(signature = (mesh, q, f=10.0, tol=1e-10))]
fn forward_solve(mesh: &Mesh, q: Vec<f64>, f: f64, tol: f64) -> PyResult<Vec<f64>> {
    let load = assembly::assemble_load(&mesh.inner, &Source::Constant(f)).map_err(to_py)?;
    Ok(assembly::forward_solve(&mesh.inner, &q, &load, &lin(tol))
        .map_err(to_py)?
        .0)
}

/// Misfit energy and its gradient with respect to the nodal coefficient.
#[pyfunction]
#[pyo3(signature = (mesh, q, obs, f=10.0, tol=1e-12))]
fn energy_and_gradient(
    mesh: &Mesh,
    q: Vec<f64>,
    obs: &Observation,
    f: f64,
    tol: f64,
) -> PyResult<(f64, Vec<f64>)> {
    let m = &mesh.inner;
    let load = assembly::assemble_load(m, &Source::Constant(f)).map_err(to_py)?;
    let (u, _) = assembly::forward_solve(m, &q, &load, &lin(tol)).map_err(to_py)?;
    let j = assembly::energy_j(m, &q, &u, &obs.inner).map_err(to_py)?;
    let gu = interior_gradients(m, &u).map_err(to_py)?;
    let g = assembly::gradient_j(m, &gu, &obs.inner).map_err(to_py)?;
    Ok((j, g))
}

/// ROF prox `argmin θ·TV(x) + ½‖x − z‖²` of a square nodal field.
#[pyfunction]
#[pyo3(signature = (z, theta, tol=1e-8, max_iters=20000))]
fn prox_tv(z: Vec<f64>, theta: f64, tol: f64, max_iters: usize) -> PyResult<Vec<f64>> {
    Ok(psolver::prox_tv(&z, theta, tol, max_iters)
        .map_err(to_py)?
        .x)
}

/// Anisotropic total variation of a square nodal field.
#[pyfunction]
fn total_variation(x: Vec<f64>) -> PyResult<f64> {
    psolver::nodal_tv(&x).map_err(to_py)
}

fn record<'py>(py: Python<'py>, r: &IterRecord) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("iter", r.iter)?;
    d.set_item("kkt_norm", r.kkt_norm)?;
    d.set_item("newton_steps", r.newton_steps)?;
    d.set_item("newton_converged", r.newton_converged)?;
    d.set_item("pcg_state", r.pcg_state)?;
    d.set_item("pcg_h", r.pcg_h)?;
    d.set_item("primal_residual", r.primal_residual)?;
    d.set_item("rel_error", r.rel_error)?;
    d.set_item("grad_misfit", r.grad_misfit)?;
    d.set_item("wall_ms", r.wall_ms)?;
    Ok(d)
}

fn finish<'py>(py: Python<'py>, admm: &Admm) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("q", admm.state.q.clone())?;
    d.set_item("p", admm.state.p.clone())?;
    d.set_item("lambda", admm.state.lambda.clone())?;
    let hist = admm
        .state
        .history
        .iter()
        .map(|r| record(py, r))
        .collect::<PyResult<Vec<_>>>()?;
    d.set_item("history", hist)?;
    d.set_item("solve_time", admm.solve_time().as_secs_f64())?;
    Ok(d)
}

/// ADMM reconstruction from an observation. Returns a dict with the final
/// `q`, `p`, `lambda` and the per-iteration history.
#[pyfunction]
#[pyo3(signature = (mesh, obs, beta=0.1, outer_iters=50, theta=0.05, bounds=None, f=10.0, q_true=None))]
#[allow(clippy::too_many_arguments)]
fn admm<'py>(
    py: Python<'py>,
    mesh: &Mesh,
    obs: &Observation,
    beta: f64,
    outer_iters: usize,
    theta: f64,
    bounds: Option<(f64, f64)>,
    f: f64,
    q_true: Option<Vec<f64>>,
) -> PyResult<Bound<'py, PyDict>> {
    let mut cfg = AdmmConfig {
        beta,
        outer_iters,
        bounds: match bounds {
            Some((lo, hi)) => BoxBounds::new(lo, hi).map_err(to_py)?,
            None => BoxBounds::default(),
        },
        ..AdmmConfig::default()
    };
    cfg.denoiser.theta = theta;
    let reference = Reference {
        q_true,
        clean_grads: None,
    };
    let m = &mesh.inner;
    let mut run =
        Admm::new(m, obs.inner.clone(), &Source::Constant(f), cfg, reference).map_err(to_py)?;
    run.run().map_err(to_py)?;
    finish(py, &run)
}

/// Runs the problem described by a config file, as `coeffid run` does,
/// without writing output files.
#[pyfunction]
fn run_config<'py>(py: Python<'py>, path: PathBuf) -> PyResult<Bound<'py, PyDict>> {
    let cfg = RunConfig::load(&path).map_err(to_py)?;
    let data = coeffid::cli::generate(&cfg, cfg.problem.n, cfg.problem.delta).map_err(to_py)?;
    let reference = Reference {
        q_true: Some(data.q_true.clone()),
        clean_grads: Some(data.clean.grads.clone()),
    };
    let source = Source::Constant(cfg.problem.f_const);
    let mut run = Admm::new(
        &data.mesh,
        data.obs.clone(),
        &source,
        cfg.admm_config(),
        reference,
    )
    .map_err(to_py)?;
    run.run().map_err(to_py)?;
    let d = finish(py, &run)?;
    d.set_item("q_true", data.q_true.clone())?;
    d.set_item("n", data.mesh.n())?;
    Ok(d)
}

#[pymodule]
fn coeffid_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Mesh>()?;
    m.add_class::<Observation>()?;
    m.add_function(wrap_pyfunction!(example_q, m)?)?;
    m.add_function(wrap_pyfunction!(observe, m)?)?;
    m.add_function(wrap_pyfunction!(forward_solve, m)?)?;
    m.add_function(wrap_pyfunction!(energy_and_gradient, m)?)?;
    m.add_function(wrap_pyfunction!(prox_tv, m)?)?;
    m.add_function(wrap_pyfunction!(total_variation, m)?)?;
    m.add_function(wrap_pyfunction!(admm, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    Ok(())
}
