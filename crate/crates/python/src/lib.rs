//! Python bindings: kernels, PR passes, support selection and the synthetic
//! scenarios, with plain lists in and out.

use pyo3::create_exception;
use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;

use prmix_core::bench::{scenario, simulate as simulate_core};
use prmix_core::diagnostics::{kl_oracle_fstar, OracleOptions};
use prmix_core::search::{AnnealConfig, GridSpec, Selector};
use prmix_core::{
    data_orders, pr_run as pr_run_core, pr_run_averaged as pr_run_averaged_core, KernelFamily, MixingVector, PrError,
    SnapshotPlan, SupportSet, WeightSchedule,
};

create_exception!(prmix, NondegeneracyError, PyArithmeticError);

fn to_py(err: PrError) -> PyErr {
    match err {
        PrError::Nondegeneracy { .. } => NondegeneracyError::new_err(err.to_string()),
        PrError::Numerical(_) => PyArithmeticError::new_err(err.to_string()),
        _ => PyValueError::new_err(err.to_string()),
    }
}

trait IntoPy<T> {
    fn py_err(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for prmix_core::Result<T> {
    fn py_err(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

/// A component family: `Kernel.gaussian(sigma)` or `Kernel.poisson()`.
#[pyclass(frozen, skip_from_py_object, name = "Kernel")]
#[derive(Clone, Copy)]
struct PyKernel {
    inner: prmix_core::Kernel,
}

#[pymethods]
impl PyKernel {
    #[staticmethod]
    #[pyo3(signature = (sigma = 1.0))]
    fn gaussian(sigma: f64) -> PyResult<Self> {
        Ok(PyKernel {
            inner: prmix_core::Kernel::gaussian(sigma).py_err()?,
        })
    }

    #[staticmethod]
    fn poisson() -> Self {
        PyKernel {
            inner: prmix_core::Kernel::poisson(),
        }
    }

    #[getter]
    fn family(&self) -> &'static str {
        match self.inner.family() {
            KernelFamily::GaussianLocation => "gaussian",
            KernelFamily::Poisson => "poisson",
        }
    }

    #[getter]
    fn sigma(&self) -> Option<f64> {
        matches!(self.inner.family(), KernelFamily::GaussianLocation).then(|| self.inner.scale())
    }

    fn log_density(&self, y: f64, u: f64) -> PyResult<f64> {
        self.inner.log_density(y, u).py_err()
    }

    fn density(&self, y: f64, u: f64) -> PyResult<f64> {
        self.inner.density(y, u).py_err()
    }

    fn __repr__(&self) -> String {
        match self.sigma() {
            Some(s) => format!("Kernel.gaussian({s})"),
            None => "Kernel.poisson()".into(),
        }
    }
}

/// Outcome of one PR pass.
#[pyclass(frozen, get_all)]
struct Fit {
    support: Vec<f64>,
    weights: Vec<f64>,
    neg_log_predictive: f64,
    log_predictive: Vec<f64>,
}

#[pymethods]
impl Fit {
    fn __repr__(&self) -> String {
        format!(
            "Fit(support={:?}, weights={:?}, neg_log_predictive={})",
            self.support, self.weights, self.neg_log_predictive
        )
    }
}

fn starting_weights(f0: Option<Vec<f64>>, len: usize) -> PyResult<MixingVector> {
    match f0 {
        Some(w) => MixingVector::new(w).py_err(),
        None => Ok(MixingVector::uniform(len)),
    }
}

/// One PR pass over `data` in the given order.
#[pyfunction]
#[pyo3(signature = (data, kernel, support, gamma = 0.9, f0 = None))]
fn pr_run(data: Vec<f64>, kernel: &PyKernel, support: Vec<f64>, gamma: f64, f0: Option<Vec<f64>>) -> PyResult<Fit> {
    let support = SupportSet::new(support).py_err()?;
    let schedule = WeightSchedule::new(gamma).py_err()?;
    let f0 = starting_weights(f0, support.len())?;
    let trace = pr_run_core(&data, &kernel.inner, &support, &schedule, &f0, &SnapshotPlan::None).py_err()?;
    Ok(Fit {
        support: support.points().to_vec(),
        weights: trace.final_mixing.weights().to_vec(),
        neg_log_predictive: trace.neg_log_predictive(),
        log_predictive: trace.log_predictive,
    })
}

/// Final weights averaged over the given order plus `permutations - 1` shuffles.
#[pyfunction]
#[pyo3(signature = (data, kernel, support, gamma = 0.9, permutations = 10, seed = 0))]
fn pr_run_averaged(
    data: Vec<f64>,
    kernel: &PyKernel,
    support: Vec<f64>,
    gamma: f64,
    permutations: usize,
    seed: u64,
) -> PyResult<Vec<f64>> {
    let support = SupportSet::new(support).py_err()?;
    let schedule = WeightSchedule::new(gamma).py_err()?;
    let f0 = MixingVector::uniform(support.len());
    let f = pr_run_averaged_core(&data, &kernel.inner, &support, &schedule, &f0, permutations, seed).py_err()?;
    Ok(f.into_inner())
}

/// The orderings `pr_run_averaged` uses.
#[pyfunction]
#[pyo3(signature = (data, permutations, seed = 0))]
fn orders(data: Vec<f64>, permutations: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    data_orders(&data, permutations, seed).py_err()
}

/// Support selection followed by a refit on the chosen points.
#[pyclass(frozen, get_all)]
struct Selection {
    support: Vec<f64>,
    weights: Vec<f64>,
    objective: f64,
    evaluations: usize,
    cap_reached: bool,
}

#[pymethods]
impl Selection {
    fn __repr__(&self) -> String {
        format!(
            "Selection(support={:?}, weights={:?}, objective={})",
            self.support, self.weights, self.objective
        )
    }
}

#[pyfunction]
#[pyo3(signature = (data, kernel, grid, gamma = 0.9, mode = "anneal", seed = 0, cap = 5000))]
fn select(
    data: Vec<f64>,
    kernel: &PyKernel,
    grid: Vec<f64>,
    gamma: f64,
    mode: &str,
    seed: u64,
    cap: usize,
) -> PyResult<Selection> {
    let support = SupportSet::from_unsorted(grid).py_err()?;
    let lower = support.points()[0];
    let upper = support.points()[support.len() - 1];
    let grid = GridSpec::new(lower, upper, support.points().to_vec()).py_err()?;
    let schedule = WeightSchedule::new(gamma).py_err()?;
    let selector = Selector::new(&data, &kernel.inner, grid.support(), &schedule).py_err()?;
    let (best, objective, evaluations, cap_reached) = match mode {
        "exhaustive" => {
            let r = selector.exhaustive().py_err()?;
            let count = r.ranking.len();
            (r.best, r.best_value, count, false)
        }
        "anneal" => {
            let cfg = AnnealConfig {
                seed,
                max_evaluations: cap,
                ..AnnealConfig::default()
            };
            let r = selector.anneal(&cfg).py_err()?;
            (r.best, r.best_value, r.evaluations, r.cap_reached)
        }
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown mode {other:?}; use 'anneal' or 'exhaustive'"
            )))
        }
    };
    let refit = selector.refit(&best).py_err()?;
    Ok(Selection {
        support: refit.support.points().to_vec(),
        weights: refit.weights.into_inner(),
        objective,
        evaluations,
        cap_reached,
    })
}

fn named_scenario(name: &str) -> PyResult<prmix_core::bench::Scenario> {
    scenario(name).ok_or_else(|| PyValueError::new_err(format!("unknown scenario {name:?}; expected 'a', 'b' or 'c'")))
}

/// Draws `n` observations from a synthetic scenario's true mixture.
#[pyfunction]
#[pyo3(signature = (scenario, n, seed = 0))]
fn simulate(scenario: &str, n: usize, seed: u64) -> PyResult<Vec<f64>> {
    simulate_core(&named_scenario(scenario)?.model, n, seed).py_err()
}

/// `(f*, K*)` for a scenario's fitted support.
#[pyfunction]
fn kl_projection(scenario: &str) -> PyResult<(Vec<f64>, f64)> {
    let pop = named_scenario(scenario)?.population().py_err()?;
    let r = kl_oracle_fstar(&pop, &OracleOptions::default()).py_err()?;
    Ok((r.fstar.into_inner(), r.kstar))
}

#[pymodule]
fn prmix(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", prmix_core::VERSION)?;
    m.add("NondegeneracyError", m.py().get_type::<NondegeneracyError>())?;
    m.add_class::<PyKernel>()?;
    m.add_class::<Fit>()?;
    m.add_class::<Selection>()?;
    m.add_function(wrap_pyfunction!(pr_run, m)?)?;
    m.add_function(wrap_pyfunction!(pr_run_averaged, m)?)?;
    m.add_function(wrap_pyfunction!(orders, m)?)?;
    m.add_function(wrap_pyfunction!(select, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(kl_projection, m)?)?;
    Ok(())
}
