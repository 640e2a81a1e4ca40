//! Python bindings: dataset handling, model fitting, bandwidth
//! cross-validation, simulation, and the Cauchy combination test.

use hazardsieve::data;
use hazardsieve::estimator;
use hazardsieve::likelihood::QuadratureRule;
use hazardsieve::simulate;
use hazardsieve::spline::{default_interior_knot_count, quantile_knots, SplineBasis};
use hazardsieve::{Bandwidth, BoxCox, Dataset, FitConfig, Kernel};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn value_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// An immutable survival dataset with sparse longitudinal covariates.
#[pyclass(name = "Dataset", frozen)]
struct PyDataset {
    inner: Dataset,
}

#[pymethods]
impl PyDataset {
    /// Load from a survival CSV (id,time,status) and a longitudinal CSV
    /// (id,obs_time,z1..zp).
    #[staticmethod]
    fn load(survival: &str, longitudinal: &str) -> PyResult<Self> {
        let inner = data::load_dataset_paths(survival, longitudinal).map_err(value_err)?;
        Ok(PyDataset { inner })
    }

    /// Build from records: subjects as (id, time, status) tuples and
    /// measurements as (id, obs_time, [z1..zp]) tuples.
    #[staticmethod]
    fn from_records(
        subjects: Vec<(String, f64, bool)>,
        measurements: Vec<(String, f64, Vec<f64>)>,
        p: usize,
    ) -> PyResult<Self> {
        let mut built: Vec<data::Subject> = subjects
            .into_iter()
            .map(|(id, x, delta)| data::Subject {
                id,
                x,
                delta,
                measurements: Vec::new(),
            })
            .collect();
        for (id, time, z) in measurements {
            let subject = built
                .iter_mut()
                .find(|s| s.id == id)
                .ok_or_else(|| value_err(format!("orphan measurement: id '{id}'")))?;
            subject.measurements.push(data::Measurement { time, z });
        }
        let tau = built.iter().map(|s| s.x).fold(0.0f64, f64::max);
        let inner = Dataset::new(built, p, tau).map_err(value_err)?;
        Ok(PyDataset { inner })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn p(&self) -> usize {
        self.inner.p()
    }

    #[getter]
    fn tau(&self) -> f64 {
        self.inner.tau()
    }

    #[getter]
    fn events(&self) -> usize {
        self.inner.events()
    }

    /// Validation summary at bandwidth `h` as a dict with keys n, events,
    /// mean_measurements, zero_weight_events, zero_measurement_subjects,
    /// warnings.
    fn validate<'py>(&self, py: Python<'py>, h: f64) -> PyResult<Bound<'py, PyDict>> {
        let report = data::validate(&self.inner, h);
        let out = PyDict::new(py);
        out.set_item("n", report.n)?;
        out.set_item("events", report.events)?;
        out.set_item("mean_measurements", report.mean_measurements)?;
        out.set_item("zero_weight_events", report.zero_weight_events)?;
        out.set_item(
            "zero_measurement_subjects",
            report.zero_measurement_subjects,
        )?;
        out.set_item("warnings", report.warnings)?;
        Ok(out)
    }

    /// Recode the given subjects as censored at `max_followup` (competing
    /// risk handling).
    fn recode_competing(&self, competing_ids: Vec<String>, max_followup: f64) -> PyResult<Self> {
        let inner =
            data::recode_competing(&self.inner, &competing_ids, max_followup).map_err(value_err)?;
        Ok(PyDataset { inner })
    }

    /// Divide every time by the largest follow-up time so the study lives
    /// on [0, 1].
    fn rescale_time(&self) -> PyResult<Self> {
        let inner = data::rescale_time(&self.inner).map_err(value_err)?;
        Ok(PyDataset { inner })
    }

    /// Write the dataset as a survival/longitudinal CSV pair.
    fn write(&self, survival: &str, longitudinal: &str) -> PyResult<()> {
        let mut surv = std::fs::File::create(survival).map_err(value_err)?;
        let mut long = std::fs::File::create(longitudinal).map_err(value_err)?;
        data::write_dataset(&self.inner, &mut surv, &mut long).map_err(value_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(n={}, p={}, events={}, tau={})",
            self.inner.n(),
            self.inner.p(),
            self.inner.events(),
            self.inner.tau()
        )
    }
}

/// Result of a model fit.
#[pyclass(name = "FitResult", frozen)]
struct PyFitResult {
    #[pyo3(get)]
    beta: Vec<f64>,
    #[pyo3(get)]
    se: Vec<f64>,
    #[pyo3(get)]
    loglik: f64,
    #[pyo3(get)]
    bic: f64,
    #[pyo3(get)]
    converged: bool,
    #[pyo3(get)]
    iterations: usize,
    #[pyo3(get)]
    h_used: f64,
    #[pyo3(get)]
    barrier_touched: bool,
    #[pyo3(get)]
    z: Vec<f64>,
    #[pyo3(get)]
    p_values: Vec<f64>,
    #[pyo3(get)]
    ci_lower: Vec<f64>,
    #[pyo3(get)]
    ci_upper: Vec<f64>,
    #[pyo3(get)]
    alpha_curve: Vec<(f64, f64)>,
    #[pyo3(get)]
    covariance: Vec<Vec<f64>>,
}

impl PyFitResult {
    fn build(
        result: &estimator::FitResult,
        dataset: &Dataset,
        basis: &SplineBasis,
    ) -> PyResult<Self> {
        let rows = estimator::wald(result).map_err(value_err)?;
        let p = result.beta_hat.len();
        Ok(PyFitResult {
            beta: result.beta_hat.clone(),
            se: result.se.clone(),
            loglik: result.loglik,
            bic: estimator::bic(result, dataset),
            converged: result.converged,
            iterations: result.iterations,
            h_used: result.h_used,
            barrier_touched: result.barrier_touched,
            z: rows.iter().map(|r| r.z).collect(),
            p_values: rows.iter().map(|r| r.p_value).collect(),
            ci_lower: rows.iter().map(|r| r.ci_lower).collect(),
            ci_upper: rows.iter().map(|r| r.ci_upper).collect(),
            alpha_curve: result.baseline_curve(basis, 101),
            covariance: (0..p)
                .map(|i| (0..p).map(|j| result.covariance[(i, j)]).collect())
                .collect(),
        })
    }
}

#[pymethods]
impl PyFitResult {
    fn __repr__(&self) -> String {
        format!(
            "FitResult(beta={:?}, se={:?}, converged={})",
            self.beta, self.se, self.converged
        )
    }
}

#[allow(clippy::too_many_arguments)]
fn build_config(
    dataset: &Dataset,
    s: f64,
    bandwidth: Bandwidth,
    spline_order: usize,
    interior_knots: Option<Vec<f64>>,
    num_knots: Option<usize>,
    natural: bool,
    quad_nodes: usize,
) -> PyResult<FitConfig> {
    let boundary = (0.0, dataset.tau());
    let interior = match interior_knots {
        Some(k) => k,
        None => {
            let count = num_knots.unwrap_or_else(|| default_interior_knot_count(dataset.n()));
            let xs: Vec<f64> = dataset.subjects().iter().map(|s| s.x).collect();
            quantile_knots(&xs, count, boundary)
        }
    };
    let basis = SplineBasis::new(spline_order, &interior, boundary, natural).map_err(value_err)?;
    let mut config = FitConfig::new(s, bandwidth, basis);
    config.quad = QuadratureRule::new(quad_nodes);
    Ok(config)
}

/// Fit the kernel-weighted sieve estimator. Provide either a fixed
/// bandwidth `h` or `cv=True` (with optional `grid`).
#[pyfunction]
#[pyo3(signature = (dataset, s, h=None, cv=false, grid=None, folds=5, spline_order=3,
                    interior_knots=None, num_knots=None, natural=false, quad_nodes=16, seed=0,
                    floor_eps=1e-8))]
#[allow(clippy::too_many_arguments)]
fn fit(
    dataset: &PyDataset,
    s: f64,
    h: Option<f64>,
    cv: bool,
    grid: Option<Vec<f64>>,
    folds: usize,
    spline_order: usize,
    interior_knots: Option<Vec<f64>>,
    num_knots: Option<usize>,
    natural: bool,
    quad_nodes: usize,
    seed: u64,
    floor_eps: f64,
) -> PyResult<PyFitResult> {
    let data = &dataset.inner;
    let bandwidth = if cv {
        Bandwidth::CrossValidated {
            grid: grid.unwrap_or_else(|| estimator::default_cv_grid(data.n())),
            folds,
            seed,
        }
    } else {
        Bandwidth::Fixed(h.ok_or_else(|| value_err("provide h or cv=True"))?)
    };
    let mut config = build_config(
        data,
        s,
        bandwidth,
        spline_order,
        interior_knots,
        num_knots,
        natural,
        quad_nodes,
    )?;
    if floor_eps.is_nan() || floor_eps <= 0.0 || floor_eps >= 1.0 {
        return Err(value_err("floor_eps must lie in (0, 1)"));
    }
    config.transform = BoxCox::with_floor(s, floor_eps);
    let result = estimator::fit(data, &config).map_err(value_err)?;
    PyFitResult::build(&result, data, &config.basis)
}

/// Fit the last-value-carried-forward baseline (no kernel weighting).
#[pyfunction]
#[pyo3(signature = (dataset, s, spline_order=3, interior_knots=None, num_knots=None,
                    natural=false, quad_nodes=16))]
#[allow(clippy::too_many_arguments)]
fn fit_lvcf(
    dataset: &PyDataset,
    s: f64,
    spline_order: usize,
    interior_knots: Option<Vec<f64>>,
    num_knots: Option<usize>,
    natural: bool,
    quad_nodes: usize,
) -> PyResult<PyFitResult> {
    let data = &dataset.inner;
    let config = build_config(
        data,
        s,
        Bandwidth::Fixed(1.0),
        spline_order,
        interior_knots,
        num_knots,
        natural,
        quad_nodes,
    )?;
    let result = simulate::fit_lvcf(data, &config).map_err(value_err)?;
    PyFitResult::build(&result, data, &config.basis)
}

/// Cross-validate the bandwidth; returns a dict with the grid, the mean
/// losses, and the chosen bandwidth.
#[pyfunction]
#[pyo3(signature = (dataset, s, grid=None, folds=5, spline_order=3, interior_knots=None,
                    num_knots=None, natural=false, quad_nodes=16, seed=0))]
#[allow(clippy::too_many_arguments)]
fn cv_bandwidth<'py>(
    py: Python<'py>,
    dataset: &PyDataset,
    s: f64,
    grid: Option<Vec<f64>>,
    folds: usize,
    spline_order: usize,
    interior_knots: Option<Vec<f64>>,
    num_knots: Option<usize>,
    natural: bool,
    quad_nodes: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let data = &dataset.inner;
    let grid = grid.unwrap_or_else(|| estimator::default_cv_grid(data.n()));
    let config = build_config(
        data,
        s,
        Bandwidth::Fixed(1.0),
        spline_order,
        interior_knots,
        num_knots,
        natural,
        quad_nodes,
    )?;
    let report = estimator::cv_bandwidth(data, &config, &grid, folds, seed).map_err(value_err)?;
    let out = PyDict::new(py);
    out.set_item("grid", report.grid)?;
    out.set_item("mean_loss", report.mean_loss)?;
    out.set_item("chosen_h", report.chosen_h)?;
    out.set_item("fold_count", report.fold_count)?;
    Ok(out)
}

/// Generate a simulated dataset from the study's data-generating process.
#[pyfunction]
#[pyo3(signature = (s, n, censor, seed=0))]
fn simulate_dataset(s: f64, n: usize, censor: f64, seed: u64) -> PyResult<PyDataset> {
    use rand::SeedableRng;
    let mut cfg = simulate::SimConfig::new(s, n, censor, seed);
    cfg.c_lower = Some(simulate::calibrate_censoring(&cfg, censor, 100_000).map_err(value_err)?);
    let sim = simulate::Simulator::new(cfg);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let inner = sim.dataset(&mut rng).map_err(value_err)?;
    Ok(PyDataset { inner })
}

/// Cauchy combination of p-values.
#[pyfunction]
fn cauchy_combine(pvalues: Vec<f64>) -> PyResult<f64> {
    estimator::cauchy_combine(&pvalues).map_err(value_err)
}

/// Epanechnikov kernel density `K(u)`.
#[pyfunction]
fn kernel_density(u: f64) -> f64 {
    Kernel::Epanechnikov.density(u)
}

/// Scaled one-sided kernel weight `K_h(d) = 2 K(d/h) / h`.
#[pyfunction]
fn kernel_weight(d: f64, h: f64) -> PyResult<f64> {
    if h <= 0.0 {
        return Err(value_err("bandwidth must be positive"));
    }
    Ok(Kernel::Epanechnikov.weight(d, h))
}

/// Box-Cox `H(y)` and its first derivative at index `s`.
#[pyfunction]
fn boxcox(s: f64, y: f64) -> PyResult<(f64, f64)> {
    if s < 0.0 || !s.is_finite() {
        return Err(value_err("Box-Cox index must be a finite nonnegative real"));
    }
    let tr = BoxCox::new(s);
    Ok((tr.value(y), tr.deriv(y)))
}

#[pymodule]
fn hazardsieve_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyFitResult>()?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(fit_lvcf, m)?)?;
    m.add_function(wrap_pyfunction!(cv_bandwidth, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(cauchy_combine, m)?)?;
    m.add_function(wrap_pyfunction!(kernel_density, m)?)?;
    m.add_function(wrap_pyfunction!(kernel_weight, m)?)?;
    m.add_function(wrap_pyfunction!(boxcox, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
