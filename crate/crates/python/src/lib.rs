//! Python bindings. Fields and traces cross the boundary as plain lists of
//! floats in node (or boundary) order.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use dot_levelset::cli_io::{parse_config, run_configured};
use dot_levelset::forward::ForwardOperator;
use dot_levelset::levelset::project_smooth;
use dot_levelset::phantoms::{make_excitations, make_phantom, synthesize_data, synthesize_data_relative, PhantomKind};
use dot_levelset::{build_uniform_mesh, fem, verify, Error, Mesh, Rect, SolverSettings};

fn to_py(e: Error) -> PyErr {
    if e.is_solver_failure() {
        PyRuntimeError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn unit_mesh(nodes: usize) -> PyResult<Mesh> {
    build_uniform_mesh(nodes, nodes, Rect::UNIT).map_err(to_py)
}

fn kind(name: &str) -> PyResult<PhantomKind> {
    name.parse().map_err(to_py)
}

/// Node coordinates `[(x, y), ...]` of the `nodes × nodes` unit-square mesh.
#[pyfunction]
fn mesh_nodes(nodes: usize) -> PyResult<Vec<(f64, f64)>> {
    Ok(unit_mesh(nodes)?.nodes().iter().map(|p| (p[0], p[1])).collect())
}

/// Boundary node indices in counterclockwise order from the origin.
#[pyfunction]
fn boundary_nodes(nodes: usize) -> PyResult<Vec<usize>> {
    Ok(unit_mesh(nodes)?.boundary_nodes().to_vec())
}

/// Ground-truth `(a, c)` of a named phantom.
#[pyfunction]
fn phantom(name: &str, nodes: usize) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let mesh = unit_mesh(nodes)?;
    let p = make_phantom(kind(name)?, &mesh);
    Ok((p.a_true.into_vec(), p.c_true.into_vec()))
}

/// Fluxes `g` and measured traces `h`, one list per excitation.
#[pyfunction]
#[pyo3(signature = (name, nodes, delta = 0.0, seed = 1, relative = false, refine = 1))]
fn synthesize(
    name: &str,
    nodes: usize,
    delta: f64,
    seed: u64,
    relative: bool,
    refine: usize,
) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let mesh = unit_mesh(nodes)?;
    let p = make_phantom(kind(name)?, &mesh);
    let s = SolverSettings::direct();
    let set = if relative {
        synthesize_data_relative(&p, &mesh, refine, delta, seed, &s)
    } else {
        synthesize_data(&p, &mesh, refine, delta, seed, &s)
    }
    .map_err(to_py)?;
    Ok((set.excitations, set.measurements))
}

/// Boundary traces of the states driven by the four side excitations.
#[pyfunction]
fn forward_traces(a: Vec<f64>, c: Vec<f64>, nodes: usize) -> PyResult<Vec<Vec<f64>>> {
    let mesh = unit_mesh(nodes)?;
    let op = ForwardOperator::new(&mesh, &a, &c, &SolverSettings::direct()).map_err(to_py)?;
    make_excitations(&mesh)
        .iter()
        .map(|g| Ok(fem::trace(&mesh, &op.solve_flux(g).map_err(to_py)?)))
        .collect()
}

/// Runs a reconstruction from a JSON config (empty for the defaults) and
/// returns a dict with `history`, final `a` and `c`, `stop` and `converged`.
/// Nothing is written to disk.
#[pyfunction]
#[pyo3(signature = (config = ""))]
fn reconstruct<'py>(py: Python<'py>, config: &str) -> PyResult<Bound<'py, PyDict>> {
    let cfg = parse_config(config).map_err(to_py)?;
    let (_, outcome) = run_configured(&cfg, |_, _| Ok(())).map_err(to_py)?;
    let history = outcome
        .state
        .history
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("iter", r.iter)?;
            d.set_item("stage", r.stage.name())?;
            d.set_item("misfit", r.misfit)?;
            d.set_item("err_a", r.err_a)?;
            d.set_item("err_c", r.err_c)?;
            d.set_item("step_a", r.step_a)?;
            d.set_item("step_c", r.step_c)?;
            Ok(d)
        })
        .collect::<PyResult<Vec<_>>>()?;
    let (a, c) = project_smooth(&outcome.state.ls);
    let out = PyDict::new(py);
    out.set_item("history", history)?;
    out.set_item("a", a.into_vec())?;
    out.set_item("c", c.into_vec())?;
    out.set_item("stop", format!("{:?}", outcome.stop).to_lowercase())?;
    out.set_item("converged", outcome.converged)?;
    Ok(out)
}

/// The built-in checks as `(name, passed, detail)` tuples.
#[pyfunction]
fn run_checks() -> PyResult<Vec<(String, bool, String)>> {
    let out = verify::run_suite(&SolverSettings::default()).map_err(to_py)?;
    Ok(out.into_iter().map(|c| (c.name, c.passed, c.detail)).collect())
}

#[pymodule]
fn dot_levelset_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(mesh_nodes, m)?)?;
    m.add_function(wrap_pyfunction!(boundary_nodes, m)?)?;
    m.add_function(wrap_pyfunction!(phantom, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(forward_traces, m)?)?;
    m.add_function(wrap_pyfunction!(reconstruct, m)?)?;
    m.add_function(wrap_pyfunction!(run_checks, m)?)?;
    Ok(())
}
