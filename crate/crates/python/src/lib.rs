//! Python bindings: the experiment runner plus a few direct entry points.

#[pyo3::pymodule]
mod pyspecres {
    use pyo3::exceptions::{PyRuntimeError, PyValueError};
    use pyo3::prelude::*;
    use specres::gauge::catalog_operator;
    use specres::lattice::{Boundary, Grid};
    use specres::metric::{catalog, symbol_norm, QuadratureGrid, SymbolClassParams};
    use specres::resolvent::{free_l1_linf, weighted_opnorm, Resolvent};
    use specres::C64;
    use specres_cli::{config, experiments, RunError};

    fn value_err(e: specres::Error) -> PyErr {
        match e {
            specres::Error::InvalidParameter(m) => PyValueError::new_err(m),
            other => PyRuntimeError::new_err(other.to_string()),
        }
    }

    /// Runs an experiment with `KEY=VALUE` overrides and returns its
    /// report as a dict. Nothing is written to disk.
    #[pyfunction]
    #[pyo3(signature = (experiment, overrides = Vec::new()))]
    fn run(py: Python<'_>, experiment: &str, overrides: Vec<String>) -> PyResult<Py<PyAny>> {
        let cfg = config::load(None, &overrides).map_err(|e| PyValueError::new_err(e.to_json()))?;
        let report = py.detach(|| experiments::dispatch(experiment, &cfg)).map_err(|e| match e {
            RunError::Config(c) => PyValueError::new_err(c.to_json()),
            other => PyRuntimeError::new_err(other.to_string()),
        })?;
        let text = serde_json::to_string(&report).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
    }

    /// L1 → L∞ norm of the free resolvent power at `λ + i0` in three dimensions.
    #[pyfunction]
    #[pyo3(signature = (lam, power = 2, radii = None))]
    fn free_norm(lam: f64, power: u32, radii: Option<Vec<f64>>) -> PyResult<f64> {
        let radii = radii.unwrap_or_else(|| specres::fit::geomspace(1e-3, 1e3, 61));
        free_l1_linf(lam, power, &radii).map_err(value_err)
    }

    /// Symbol-class norm of the `(j, k)` entry of `g - I`.
    #[pyfunction]
    #[pyo3(signature = (metric, params, dim, j, k, o = 0, r = 1, n = 1))]
    #[allow(clippy::too_many_arguments)]
    fn metric_symbol_norm(
        metric: &str,
        params: Vec<f64>,
        dim: usize,
        j: usize,
        k: usize,
        o: usize,
        r: usize,
        n: usize,
    ) -> PyResult<f64> {
        let g = catalog(metric, &params, dim).map_err(value_err)?;
        if j >= dim || k >= dim {
            return Err(PyValueError::new_err("entry index out of range"));
        }
        let p = SymbolClassParams::new(o, r, n, dim).map_err(value_err)?;
        symbol_norm(&g.perturbation(j, k), p, &QuadratureGrid::standard(dim)).map_err(value_err)
    }

    /// `‖⟨x⟩^{-ν} (P - λ - iε)^{-n} ⟨x⟩^{-ν}‖` on a Dirichlet box.
    #[pyfunction]
    #[pyo3(signature = (metric, params, lam, eps, n = 1, nu = 3.0, dim = 3, half_width = 8.0, m = 16))]
    #[allow(clippy::too_many_arguments)]
    fn weighted_resolvent_norm(
        py: Python<'_>,
        metric: &str,
        params: Vec<f64>,
        lam: f64,
        eps: f64,
        n: usize,
        nu: f64,
        dim: usize,
        half_width: f64,
        m: usize,
    ) -> PyResult<f64> {
        let grid = Grid::new(dim, half_width, m, Boundary::Dirichlet).map_err(value_err)?;
        let (_, op) = catalog_operator(metric, &params, &grid).map_err(value_err)?;
        let res = Resolvent::new(op);
        let out = py.detach(|| weighted_opnorm(&res, C64::new(lam, eps), n, nu)).map_err(value_err)?;
        Ok(out.norm)
    }

    #[pymodule_init]
    fn init(m: &Bound<'_, PyModule>) -> PyResult<()> {
        m.add("EXPERIMENTS", config::EXPERIMENTS.to_vec())?;
        m.add("__version__", env!("CARGO_PKG_VERSION"))
    }
}
