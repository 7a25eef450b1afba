//! Python bindings. Curves cross the boundary as lists of floats sampled on
//! a uniform grid over [0, 1].

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use warpbayes::fdcore::{to_srvf, warp_function, Grid, OnGrid, SampledFunction};
use warpbayes::geom::{exp_map, psi_to_gamma, TangentFunction, Warping};
use warpbayes::io::{self, LoadOptions, SimSpec};
use warpbayes::multichain::{run_parallel, ModeSummary};
use warpbayes::Error;

fn err(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::Parse { .. } | Error::InvalidInput(_) | Error::GridMismatch { .. } => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn curve(values: Vec<f64>) -> PyResult<SampledFunction> {
    let grid = Grid::uniform(values.len()).map_err(err)?;
    SampledFunction::new(grid, values).map_err(err)
}

fn warp(values: Vec<f64>) -> PyResult<Warping> {
    let grid = Grid::uniform(values.len()).map_err(err)?;
    Warping::new(grid, values).map_err(err)
}

/// Simulated two-peak/one-peak pair as a dict with keys t, y1, y2, f1, f2.
#[pyfunction]
#[pyo3(signature = (seed=0, n=101, noise=0.001))]
fn simulate_pair<'py>(py: Python<'py>, seed: u64, n: usize, noise: f64) -> PyResult<Bound<'py, PyDict>> {
    let spec = SimSpec { n, noise1: noise, noise2: noise, ..SimSpec::default() };
    let s = io::simulate_pair(&spec, seed).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("t", s.y1.grid().points().to_vec())?;
    d.set_item("y1", s.y1.into_values())?;
    d.set_item("y2", s.y2.into_values())?;
    d.set_item("f1", s.f1.into_values())?;
    d.set_item("f2", s.f2.into_values())?;
    Ok(d)
}

/// Load `t,y1,y2` from CSV onto a uniform grid; returns `(y1, y2)`.
#[pyfunction]
#[pyo3(signature = (path, n=None, subsample=1.0))]
fn load_pair(path: PathBuf, n: Option<usize>, subsample: f64) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let (y1, y2) = io::load_pair(&path, &LoadOptions { n, subsample }).map_err(err)?;
    Ok((y1.into_values(), y2.into_values()))
}

#[pyfunction]
fn srvf(f: Vec<f64>) -> PyResult<Vec<f64>> {
    Ok(to_srvf(&curve(f)?).map_err(err)?.into_values())
}

/// Warp obtained by mapping a tangent vector at the identity through the
/// exponential map.
#[pyfunction]
fn tangent_to_warp(g: Vec<f64>) -> PyResult<Vec<f64>> {
    let grid = Grid::uniform(g.len()).map_err(err)?;
    let t = TangentFunction::new(grid, g).map_err(err)?;
    Ok(psi_to_gamma(&exp_map(&t).map_err(err)?).into_values())
}

/// `f ∘ γ` by linear interpolation.
#[pyfunction]
fn compose(f: Vec<f64>, gamma: Vec<f64>) -> PyResult<Vec<f64>> {
    Ok(warp_function(&curve(f)?, &warp(gamma)?).map_err(err)?.into_values())
}

/// GP-regression smoother used for the smoothed DP baseline.
#[pyfunction]
fn smooth(py: Python<'_>, y: Vec<f64>) -> PyResult<Vec<f64>> {
    let y = curve(y)?;
    py.detach(|| io::smooth_for_dp(&y)).map(|s| s.into_values()).map_err(err)
}

/// DP warp aligning `y2` to `y1`.
#[pyfunction]
#[pyo3(signature = (y1, y2, smooth=false))]
fn align_dp(py: Python<'_>, y1: Vec<f64>, y2: Vec<f64>, smooth: bool) -> PyResult<Vec<f64>> {
    let (y1, y2) = (curve(y1)?, curve(y2)?);
    py.detach(|| {
        let (a, b) = if smooth { (io::smooth_for_dp(&y1)?, io::smooth_for_dp(&y2)?) } else { (y1, y2) };
        io::dp_warp(&a, &b, &Default::default())
    })
    .map(|w| w.into_values())
    .map_err(err)
}

#[pyfunction]
fn sse(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    warpbayes::fdcore::sse(&warp(a)?, &warp(b)?).map_err(err)
}

/// Flat run configuration; `str(cfg)` is its TOML form.
#[pyclass(name = "RunConfig", from_py_object)]
#[derive(Clone)]
struct PyRunConfig {
    inner: io::RunConfig,
}

#[pymethods]
impl PyRunConfig {
    /// Defaults overlaid with the given keys (same names as the TOML file).
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut inner = io::RunConfig::default();
        if let Some(kw) = kwargs {
            let mut text = String::new();
            for (k, v) in kw.iter() {
                let key: String = k.extract()?;
                let val = if let Ok(b) = v.extract::<bool>() {
                    b.to_string()
                } else if let Ok(i) = v.extract::<i64>() {
                    i.to_string()
                } else if let Ok(f) = v.extract::<f64>() {
                    format!("{f:?}")
                } else if let Ok(s) = v.extract::<String>() {
                    format!("{s:?}")
                } else {
                    return Err(PyValueError::new_err(format!("unsupported value for {key}")));
                };
                text.push_str(&format!("{key} = {val}\n"));
            }
            inner.merge_toml(&text).map_err(err)?;
        }
        inner.validate().map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        let mut inner = io::RunConfig::default();
        inner.merge_toml(text).map_err(err)?;
        inner.validate().map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn chains(&self) -> usize {
        self.inner.chains
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.inner.iterations
    }

    fn __str__(&self) -> String {
        self.inner.to_toml()
    }
}

/// One posterior mode: center warp, 95% band, amplitude distance, size.
#[pyclass(name = "Mode", get_all, skip_from_py_object)]
#[derive(Clone)]
struct PyMode {
    center: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    amplitude_distance: f64,
    count: usize,
}

impl From<&ModeSummary> for PyMode {
    fn from(m: &ModeSummary) -> Self {
        Self {
            center: m.center.clone(),
            lower: m.lower.clone(),
            upper: m.upper.clone(),
            amplitude_distance: m.amplitude_distance,
            count: m.count,
        }
    }
}

/// Pooled warp posterior of all chains.
#[pyclass(name = "Posterior", get_all)]
struct PyPosterior {
    modes: Vec<PyMode>,
    best: usize,
    labels: Vec<usize>,
    gammas: Vec<Vec<f64>>,
    /// Post-burn-in warp acceptance rate of each chain, in seed order.
    warp_acceptance: Vec<f64>,
    seeds: Vec<u64>,
}

#[pymethods]
impl PyPosterior {
    fn __len__(&self) -> usize {
        self.gammas.len()
    }

    fn __repr__(&self) -> String {
        format!("Posterior(draws={}, modes={}, best={})", self.gammas.len(), self.modes.len(), self.best)
    }
}

/// Run the chains on `(y1, y2)` and pool them.
#[pyfunction]
#[pyo3(signature = (y1, y2, config=None))]
fn align_bayes(py: Python<'_>, y1: Vec<f64>, y2: Vec<f64>, config: Option<PyRunConfig>) -> PyResult<PyPosterior> {
    let cfg = config.map(|c| c.inner).unwrap_or_default();
    let (y1, y2) = (curve(y1)?, curve(y2)?);
    let post = py.detach(|| run_parallel(&y1, &y2, &cfg.chain_config(), &cfg.pool_config())).map_err(err)?;
    Ok(PyPosterior {
        modes: post.modes.iter().map(PyMode::from).collect(),
        best: post.best,
        labels: post.labels.clone(),
        gammas: (0..post.len()).map(|k| post.gamma(k).to_vec()).collect(),
        warp_acceptance: post.chains.iter().map(|c| c.acceptance.warp.rate()).collect(),
        seeds: post.chains.iter().map(|c| c.seed).collect(),
    })
}

#[pymodule]
fn pywarpbayes(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(simulate_pair, m)?)?;
    m.add_function(wrap_pyfunction!(load_pair, m)?)?;
    m.add_function(wrap_pyfunction!(srvf, m)?)?;
    m.add_function(wrap_pyfunction!(tangent_to_warp, m)?)?;
    m.add_function(wrap_pyfunction!(compose, m)?)?;
    m.add_function(wrap_pyfunction!(smooth, m)?)?;
    m.add_function(wrap_pyfunction!(align_dp, m)?)?;
    m.add_function(wrap_pyfunction!(sse, m)?)?;
    m.add_function(wrap_pyfunction!(align_bayes, m)?)?;
    m.add_class::<PyRunConfig>()?;
    m.add_class::<PyMode>()?;
    m.add_class::<PyPosterior>()?;
    Ok(())
}
