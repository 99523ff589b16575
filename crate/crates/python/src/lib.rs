//! Python bindings for the `vkplate` solver.

use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use vkplate::functional::{self, Branch, ConstraintData};
use vkplate::grid::{GridDomain, ScalarField};
use vkplate::solver::{self, SearchDirection, SolveReport, SolverConfig};
use vkplate::{verify, Error};

create_exception!(vkplate_py, SolveError, PyRuntimeError);

fn to_py(e: Error) -> PyErr {
    match e {
        Error::InvalidGrid(_) | Error::InvalidField(_) | Error::NonConstantK | Error::SignMismatch { .. } => {
            PyValueError::new_err(e.to_string())
        }
        _ => SolveError::new_err(e.to_string()),
    }
}

#[pyclass(name = "Grid", module = "vkplate_py", frozen, eq, skip_from_py_object)]
#[derive(Clone, Copy, PartialEq)]
struct PyGrid(GridDomain);

#[pymethods]
impl PyGrid {
    #[new]
    #[pyo3(signature = (extent_x, extent_y, nx, ny))]
    fn new(extent_x: f64, extent_y: f64, nx: usize, ny: usize) -> PyResult<Self> {
        GridDomain::new(extent_x, extent_y, nx, ny).map(Self).map_err(to_py)
    }

    #[staticmethod]
    fn unit_square(n: usize) -> PyResult<Self> {
        GridDomain::unit_square(n).map(Self).map_err(to_py)
    }

    #[getter]
    fn nx(&self) -> usize {
        self.0.nx()
    }

    #[getter]
    fn ny(&self) -> usize {
        self.0.ny()
    }

    #[getter]
    fn hx(&self) -> f64 {
        self.0.hx()
    }

    #[getter]
    fn hy(&self) -> f64 {
        self.0.hy()
    }

    #[getter]
    fn interior_area(&self) -> f64 {
        self.0.interior_area()
    }

    fn coords(&self, i: usize, j: usize) -> PyResult<(f64, f64)> {
        if i >= self.0.nx() || j >= self.0.ny() {
            return Err(PyValueError::new_err(format!("node ({i}, {j}) is outside the grid")));
        }
        Ok(self.0.coords(i, j))
    }

    fn __repr__(&self) -> String {
        format!(
            "Grid({}, {}, {}, {})",
            self.0.extent_x(),
            self.0.extent_y(),
            self.0.nx(),
            self.0.ny()
        )
    }
}

/// Nodal values on a grid, row-major with `j` fastest.
#[pyclass(name = "Field", module = "vkplate_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyField(ScalarField);

#[pymethods]
impl PyField {
    #[new]
    fn new(grid: PyRef<'_, PyGrid>, values: Vec<f64>) -> PyResult<Self> {
        ScalarField::new(grid.0, values).map(Self).map_err(to_py)
    }

    /// Samples `f(x, y)` at every node.
    #[staticmethod]
    fn from_function(grid: PyRef<'_, PyGrid>, f: &Bound<'_, PyAny>) -> PyResult<Self> {
        let d = grid.0;
        let mut values = Vec::with_capacity(d.len());
        for (i, j) in d.nodes() {
            let (x, y) = d.coords(i, j);
            values.push(f.call1((x, y))?.extract::<f64>()?);
        }
        ScalarField::new(d, values).map(Self).map_err(to_py)
    }

    #[getter]
    fn grid(&self) -> PyGrid {
        PyGrid(*self.0.domain())
    }

    fn values(&self) -> Vec<f64> {
        self.0.values().to_vec()
    }

    fn get(&self, i: usize, j: usize) -> PyResult<f64> {
        let d = self.0.domain();
        if i >= d.nx() || j >= d.ny() {
            return Err(PyValueError::new_err(format!("node ({i}, {j}) is outside the grid")));
        }
        Ok(self.0.get(i, j))
    }

    fn max_abs(&self) -> f64 {
        self.0.max_abs()
    }

    fn __sub__(&self, other: PyRef<'_, PyField>) -> PyResult<Self> {
        if self.0.domain() != other.0.domain() {
            return Err(PyValueError::new_err("fields live on different grids"));
        }
        Ok(Self(&self.0 - &other.0))
    }

    fn __len__(&self) -> usize {
        self.0.values().len()
    }
}

/// Right-hand side of the constraint: a number or a nodal field.
#[derive(FromPyObject)]
enum KArg<'py> {
    Constant(f64),
    Field(PyRef<'py, PyField>),
}

fn constraint_data(grid: GridDomain, k: KArg<'_>) -> PyResult<ConstraintData> {
    match k {
        KArg::Constant(c) => ConstraintData::constant(grid, c),
        KArg::Field(f) => {
            if *f.0.domain() != grid {
                return Err(PyValueError::new_err("k lives on a different grid"));
            }
            ConstraintData::new(f.0.clone())
        }
    }
    .map_err(to_py)
}

#[pyclass(name = "SolverConfig", module = "vkplate_py", get_all, set_all, skip_from_py_object)]
#[derive(Clone)]
struct PySolverConfig {
    tol_constraint: f64,
    tol_stationarity: f64,
    max_outer: usize,
    max_newton: usize,
    initial_step: f64,
    backtracking: f64,
    min_step: f64,
    convexity_margin: f64,
    /// `"reduced_newton"` or `"projected_gradient"`.
    direction: String,
}

impl PySolverConfig {
    fn to_core(&self) -> PyResult<SolverConfig> {
        let direction = match self.direction.as_str() {
            "reduced_newton" => SearchDirection::ReducedNewton,
            "projected_gradient" => SearchDirection::ProjectedGradient,
            other => return Err(PyValueError::new_err(format!("unknown direction {other:?}"))),
        };
        let cfg = SolverConfig {
            tol_constraint: self.tol_constraint,
            tol_stationarity: self.tol_stationarity,
            max_outer: self.max_outer,
            max_newton: self.max_newton,
            initial_step: self.initial_step,
            backtracking: self.backtracking,
            min_step: self.min_step,
            convexity_margin: self.convexity_margin,
            direction,
        };
        cfg.validate()
            .map_err(|(field, reason)| PyValueError::new_err(format!("{field}: {reason}")))?;
        Ok(cfg)
    }
}

#[pymethods]
impl PySolverConfig {
    #[new]
    fn new() -> Self {
        let d = SolverConfig::default();
        Self {
            tol_constraint: d.tol_constraint,
            tol_stationarity: d.tol_stationarity,
            max_outer: d.max_outer,
            max_newton: d.max_newton,
            initial_step: d.initial_step,
            backtracking: d.backtracking,
            min_step: d.min_step,
            convexity_margin: d.convexity_margin,
            direction: "reduced_newton".to_string(),
        }
    }
}

fn core_config(cfg: Option<PyRef<'_, PySolverConfig>>) -> PyResult<SolverConfig> {
    cfg.map_or_else(|| Ok(SolverConfig::default()), |c| c.to_core())
}

#[pyclass(name = "SolveResult", module = "vkplate_py", frozen, get_all)]
struct PySolveResult {
    v: PyField,
    #[pyo3(name = "multiplier")]
    lambda: PyField,
    energy: f64,
    constraint_inf: f64,
    stationarity_norm: f64,
    outer_iterations: usize,
    newton_iterations: usize,
    converged: bool,
    /// `(energy, constraint_inf, stationarity_norm)` per accepted iterate.
    history: Vec<(f64, f64, f64)>,
}

impl From<SolveReport> for PySolveResult {
    fn from(r: SolveReport) -> Self {
        Self {
            history: r
                .history
                .iter()
                .map(|h| (h.energy, h.constraint_inf, h.stationarity_norm))
                .collect(),
            v: PyField(r.v),
            lambda: PyField(r.lambda),
            energy: r.energy,
            constraint_inf: r.constraint_inf,
            stationarity_norm: r.stationarity_norm,
            outer_iterations: r.outer_iterations,
            newton_iterations: r.newton_iterations_total,
            converged: r.converged,
        }
    }
}

#[pyfunction]
fn energy(v: PyRef<'_, PyField>) -> f64 {
    functional::energy(&v.0)
}

#[pyfunction]
fn energy_gradient(v: PyRef<'_, PyField>) -> PyField {
    PyField(functional::energy_gradient(&v.0))
}

/// `det D2 v - k` on interior nodes, zero on the boundary.
#[pyfunction]
fn constraint(v: PyRef<'_, PyField>, k: KArg<'_>) -> PyResult<PyField> {
    let data = constraint_data(*v.0.domain(), k)?;
    Ok(PyField(functional::constraint(&v.0, &data)))
}

#[pyfunction]
fn normalize(v: PyRef<'_, PyField>) -> PyField {
    PyField(functional::normalize(&v.0))
}

#[pyfunction]
#[pyo3(signature = (grid, k, hyperbolic = false))]
fn analytic_minimizer(grid: PyRef<'_, PyGrid>, k: f64, hyperbolic: bool) -> PyResult<PyField> {
    let data = ConstraintData::constant(grid.0, k).map_err(to_py)?;
    let branch = if hyperbolic { Branch::Hyperbolic } else { Branch::Elliptic };
    functional::analytic_minimizer(&data, branch)
        .map(PyField)
        .map_err(to_py)
}

/// Returns the restored field and the residual history.
#[pyfunction]
#[pyo3(signature = (v, k, config = None))]
fn restore_feasibility(
    v: PyRef<'_, PyField>,
    k: KArg<'_>,
    config: Option<PyRef<'_, PySolverConfig>>,
) -> PyResult<(PyField, Vec<f64>)> {
    let data = constraint_data(*v.0.domain(), k)?;
    let cfg = core_config(config)?;
    let r = solver::restore_feasibility(&v.0, &data, &cfg).map_err(to_py)?;
    Ok((PyField(r.v), r.residuals))
}

/// Returns the multiplier and the norm of the stationarity residual.
#[pyfunction]
fn recover_multiplier(v: PyRef<'_, PyField>) -> PyResult<(PyField, f64)> {
    let m = solver::recover_multiplier(&v.0).map_err(to_py)?;
    Ok((PyField(m.lambda), m.residual_norm))
}

#[pyfunction]
#[pyo3(signature = (grid, k, start = None, config = None))]
fn minimize(
    py: Python<'_>,
    grid: PyRef<'_, PyGrid>,
    k: KArg<'_>,
    start: Option<PyRef<'_, PyField>>,
    config: Option<PyRef<'_, PySolverConfig>>,
) -> PyResult<PySolveResult> {
    let data = constraint_data(grid.0, k)?;
    let cfg = core_config(config)?;
    let start = start.map(|s| s.0.clone());
    if start.as_ref().is_some_and(|s| *s.domain() != grid.0) {
        return Err(PyValueError::new_err("start lives on a different grid"));
    }
    py.detach(|| solver::minimize(start.as_ref(), &data, &cfg))
        .map(PySolveResult::from)
        .map_err(to_py)
}

#[pyfunction]
fn el_residual(v: PyRef<'_, PyField>, multiplier: PyRef<'_, PyField>) -> PyField {
    PyField(verify::el_residual(&v.0, &multiplier.0))
}

#[pyfunction]
fn compare_to_analytic<'py>(
    py: Python<'py>,
    v: PyRef<'_, PyField>,
    k: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let data = ConstraintData::constant(*v.0.domain(), k).map_err(to_py)?;
    let c = verify::compare_to_analytic(&v.0, &data).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("field_error_inf", c.field_error_inf)?;
    out.set_item("field_error_l2", c.field_error_l2)?;
    out.set_item("energy_error", c.energy_error)?;
    Ok(out)
}

/// Returns whether every check passed and `(name, defect, tolerance)` rows.
#[pyfunction]
#[pyo3(signature = (seed = 0))]
fn identity_suite(seed: u64) -> (bool, Vec<(String, f64, f64)>) {
    let r = verify::identity_suite(seed);
    let rows = r
        .checks
        .into_iter()
        .map(|c| (c.name, c.max_defect, c.tolerance))
        .collect();
    (r.passed, rows)
}

#[pymodule]
fn vkplate_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGrid>()?;
    m.add_class::<PyField>()?;
    m.add_class::<PySolverConfig>()?;
    m.add_class::<PySolveResult>()?;
    m.add("SolveError", m.py().get_type::<SolveError>())?;
    m.add_function(wrap_pyfunction!(energy, m)?)?;
    m.add_function(wrap_pyfunction!(energy_gradient, m)?)?;
    m.add_function(wrap_pyfunction!(constraint, m)?)?;
    m.add_function(wrap_pyfunction!(normalize, m)?)?;
    m.add_function(wrap_pyfunction!(analytic_minimizer, m)?)?;
    m.add_function(wrap_pyfunction!(restore_feasibility, m)?)?;
    m.add_function(wrap_pyfunction!(recover_multiplier, m)?)?;
    m.add_function(wrap_pyfunction!(minimize, m)?)?;
    m.add_function(wrap_pyfunction!(el_residual, m)?)?;
    m.add_function(wrap_pyfunction!(compare_to_analytic, m)?)?;
    m.add_function(wrap_pyfunction!(identity_suite, m)?)?;
    Ok(())
}
