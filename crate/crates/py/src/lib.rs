//! Python bindings for `varband`.

use std::path::PathBuf;
use std::sync::Mutex;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use varband::baselines::{Exp3S, SwUcb, UniformRandom};
use varband::bob::{self, BobConfig, BobPolicy};
use varband::env::{self, derive_rng, EnvironmentSpec, NoiseModel, Schedule};
use varband::harness::{self, ExperimentConfig, ParamChoice, RunOptions};
use varband::linalg;
use varband::policy::{
    self as pol, Feedback, RadiusMode, SaveConfig, SavePolicy, SaveRadiusMode, WofulConfig,
    WofulPolicy,
};

// Purpose tags for policy RNG streams created from Python.
const EXP3S_PURPOSE: u64 = 0x7079_6578_7033;
const UNIFORM_PURPOSE: u64 = 0x7079_756e_6966;
const BOB_PURPOSE: u64 = 0x0070_7962_6f62;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn rows(m: &linalg::SymMatrix) -> Vec<Vec<f64>> {
    let d = m.dim();
    (0..d)
        .map(|i| (0..d).map(|j| m.get(i, j)).collect())
        .collect()
}

/// Weighted ridge regression state with rank-one updates.
#[pyclass(name = "RegressionState", module = "varband_py")]
struct PyRegressionState {
    inner: linalg::RegressionState,
}

#[pymethods]
impl PyRegressionState {
    #[new]
    fn new(dim: usize, reg: f64) -> PyResult<Self> {
        let inner = linalg::RegressionState::new(dim, reg).map_err(value_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn reg(&self) -> f64 {
        self.inner.reg()
    }

    #[getter]
    fn estimate(&self) -> Vec<f64> {
        self.inner.estimate().to_vec()
    }

    #[getter]
    fn response(&self) -> Vec<f64> {
        self.inner.response().to_vec()
    }

    fn cov(&self) -> Vec<Vec<f64>> {
        rows(self.inner.cov())
    }

    fn cov_inv(&self) -> Vec<Vec<f64>> {
        rows(self.inner.cov_inv())
    }

    #[pyo3(signature = (arm, reward, weight_sq = 1.0))]
    fn update(&mut self, arm: Vec<f64>, reward: f64, weight_sq: f64) -> PyResult<()> {
        self.inner
            .rank1_update(&arm, reward, weight_sq)
            .map_err(value_err)
    }

    #[pyo3(signature = (arm, reward, weight_sq = 1.0))]
    fn downdate(&mut self, arm: Vec<f64>, reward: f64, weight_sq: f64) -> PyResult<()> {
        self.inner
            .rank1_downdate(&arm, reward, weight_sq)
            .map_err(value_err)
    }

    /// `||arm||` in the inverse-covariance norm.
    fn bonus_norm(&self, arm: Vec<f64>) -> PyResult<f64> {
        self.inner.bonus_norm(&arm).map_err(value_err)
    }

    fn refresh(&mut self) -> PyResult<()> {
        self.inner.refresh().map_err(value_err)
    }

    fn reset(&mut self, reg: f64) -> PyResult<()> {
        self.inner.reset(reg).map_err(value_err)
    }
}

/// One trial of a synthetic or scheduled environment.
#[pyclass(name = "Environment", module = "varband_py")]
struct PyEnvironment {
    inner: env::Environment,
}

impl PyEnvironment {
    fn build(spec: EnvironmentSpec, trial: u64) -> PyResult<Self> {
        let inner = env::Environment::new(spec, trial).map_err(value_err)?;
        Ok(Self { inner })
    }
}

#[pymethods]
impl PyEnvironment {
    /// Two rotating arms with drift budget `budget`.
    #[staticmethod]
    #[pyo3(signature = (horizon, budget, seed = 0, trial = 0))]
    fn sinusoidal(horizon: usize, budget: f64, seed: u64, trial: u64) -> PyResult<Self> {
        Self::build(EnvironmentSpec::sinusoidal(horizon, budget, seed), trial)
    }

    /// Fixed `theta` over the standard basis. Noise is the decaying
    /// Bernoulli law unless `sigma` is given, which selects `+-sigma`.
    #[staticmethod]
    #[pyo3(signature = (theta, horizon, sigma = None, seed = 0, trial = 0))]
    fn fixed(
        theta: Vec<f64>,
        horizon: usize,
        sigma: Option<f64>,
        seed: u64,
        trial: u64,
    ) -> PyResult<Self> {
        let noise = match sigma {
            Some(sigma) => NoiseModel::Rademacher { sigma },
            None => NoiseModel::DecayingBernoulli,
        };
        Self::build(EnvironmentSpec::fixed(theta, horizon, noise, seed), trial)
    }

    /// Environment read from a schedule file, optionally truncated.
    #[staticmethod]
    #[pyo3(signature = (path, horizon = None, seed = 0, trial = 0))]
    fn schedule(path: PathBuf, horizon: Option<usize>, seed: u64, trial: u64) -> PyResult<Self> {
        let mut spec =
            EnvironmentSpec::from_schedule(Schedule::load(&path).map_err(value_err)?, seed);
        if let Some(h) = horizon {
            spec = spec.with_horizon(h).map_err(value_err)?;
        }
        Self::build(spec, trial)
    }

    #[getter]
    fn horizon(&self) -> usize {
        self.inner.spec().horizon
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.spec().dim()
    }

    #[getter]
    fn nominal_budget(&self) -> f64 {
        self.inner.spec().nominal_budget
    }

    /// Round `k` (1-based) as a dict with `arm_set`, `theta`, `sigma`, `noise`.
    fn step<'py>(&mut self, py: Python<'py>, k: usize) -> PyResult<Bound<'py, PyDict>> {
        let obs = self.inner.step(k).map_err(value_err)?;
        let d = PyDict::new(py);
        d.set_item("k", obs.k)?;
        d.set_item("sigma", obs.sigma)?;
        d.set_item("noise", obs.noise)?;
        d.set_item("theta", obs.theta)?;
        d.set_item("arm_set", obs.arm_set)?;
        Ok(d)
    }

    fn accounting<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let a = self.inner.accounting();
        let d = PyDict::new(py);
        d.set_item("rounds", a.rounds)?;
        d.set_item("realized_budget", a.realized_budget)?;
        d.set_item("realized_variance", a.realized_variance)?;
        Ok(d)
    }
}

/// A bandit policy driven by `choose` and `observe`.
#[pyclass(name = "Policy", module = "varband_py")]
struct PyPolicy {
    inner: Mutex<Box<dyn pol::Policy>>,
}

impl PyPolicy {
    fn wrap(p: impl pol::Policy + 'static) -> Self {
        Self {
            inner: Mutex::new(Box::new(p)),
        }
    }

    fn with<T>(&self, f: impl FnOnce(&mut dyn pol::Policy) -> T) -> PyResult<T> {
        let mut guard = self
            .inner
            .lock()
            .map_err(|_| PyRuntimeError::new_err("policy lock poisoned"))?;
        Ok(f(guard.as_mut()))
    }
}

#[pymethods]
impl PyPolicy {
    /// Restarted weighted OFUL. `radius=None` uses the theoretical radius.
    #[staticmethod]
    #[pyo3(signature = (dim, window, alpha, gamma = 2.0, lam = 1.0, radius = None, delta = 0.01))]
    fn woful(
        dim: usize,
        window: usize,
        alpha: f64,
        gamma: f64,
        lam: f64,
        radius: Option<f64>,
        delta: f64,
    ) -> PyResult<Self> {
        let cfg = WofulConfig {
            lambda: lam,
            alpha,
            gamma,
            window,
            delta,
            radius: radius.map_or(RadiusMode::Theoretical, RadiusMode::Fixed),
            ..Default::default()
        };
        Ok(Self::wrap(WofulPolicy::new(dim, cfg).map_err(value_err)?))
    }

    /// Restarted multi-layer SAVE. `fixed_radius` pins layer radii to powers of two.
    #[staticmethod]
    #[pyo3(signature = (dim, window, alpha, layers = None, fixed_radius = false, delta = 0.01))]
    fn save(
        dim: usize,
        window: usize,
        alpha: f64,
        layers: Option<usize>,
        fixed_radius: bool,
        delta: f64,
    ) -> PyResult<Self> {
        let cfg = SaveConfig {
            window,
            alpha,
            layers,
            delta,
            radius: if fixed_radius {
                SaveRadiusMode::FixedPowers
            } else {
                SaveRadiusMode::Theoretical
            },
            ..Default::default()
        };
        Ok(Self::wrap(SavePolicy::new(dim, cfg).map_err(value_err)?))
    }

    /// SAVE with window and alpha picked online by an Exp3 master.
    #[staticmethod]
    #[pyo3(signature = (dim, horizon, seed = 0))]
    fn save_bob(dim: usize, horizon: usize, seed: u64) -> PyResult<Self> {
        let sampler = Box::new(derive_rng(seed, BOB_PURPOSE, 0));
        let p = BobPolicy::new(dim, horizon, BobConfig::default(), sampler).map_err(value_err)?;
        Ok(Self::wrap(p))
    }

    #[staticmethod]
    #[pyo3(signature = (dim, window, lam = 1.0, beta = 1.0))]
    fn sw_ucb(dim: usize, window: usize, lam: f64, beta: f64) -> PyResult<Self> {
        Ok(Self::wrap(
            SwUcb::new(dim, window, lam, beta).map_err(value_err)?,
        ))
    }

    #[staticmethod]
    #[pyo3(signature = (alpha_bar, gamma_bar, seed = 0))]
    fn exp3s(alpha_bar: f64, gamma_bar: f64, seed: u64) -> PyResult<Self> {
        let rng = derive_rng(seed, EXP3S_PURPOSE, 0);
        Ok(Self::wrap(
            Exp3S::new(alpha_bar, gamma_bar, rng).map_err(value_err)?,
        ))
    }

    #[staticmethod]
    #[pyo3(signature = (seed = 0))]
    fn uniform(seed: u64) -> Self {
        Self::wrap(UniformRandom::new(derive_rng(seed, UNIFORM_PURPOSE, 0)))
    }

    #[getter]
    fn name(&self) -> PyResult<String> {
        self.with(|p| p.name().to_string())
    }

    fn choose(&self, arm_set: Vec<Vec<f64>>) -> PyResult<usize> {
        self.with(|p| p.choose(&arm_set))?.map_err(value_err)
    }

    #[pyo3(signature = (arm_index, arm, reward, sigma = None))]
    fn observe(
        &self,
        arm_index: usize,
        arm: Vec<f64>,
        reward: f64,
        sigma: Option<f64>,
    ) -> PyResult<()> {
        self.with(|p| {
            p.observe(Feedback {
                arm_index,
                arm: &arm,
                reward,
                sigma,
            })
        })?
        .map_err(value_err)
    }
}

fn choice_dict<'py>(py: Python<'py>, c: ParamChoice) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("window", c.window)?;
    d.set_item("alpha", c.alpha)?;
    d.set_item("raw_window", c.raw_window)?;
    d.set_item("branch", format!("{:?}", c.branch).to_lowercase())?;
    Ok(d)
}

/// Window and alpha for restarted WOFUL+ given `d`, `K`, `B` and `V`.
#[pyfunction]
fn woful_params<'py>(
    py: Python<'py>,
    d: usize,
    k: usize,
    b: f64,
    v: f64,
) -> PyResult<Bound<'py, PyDict>> {
    choice_dict(
        py,
        harness::select_woful_params(d, k, b, v).map_err(value_err)?,
    )
}

/// Window and alpha for restarted SAVE+ given `d`, `K`, `B` and `V`.
#[pyfunction]
fn save_params<'py>(
    py: Python<'py>,
    d: usize,
    k: usize,
    b: f64,
    v: f64,
) -> PyResult<Bound<'py, PyDict>> {
    choice_dict(
        py,
        harness::select_save_params(d, k, b, v).map_err(value_err)?,
    )
}

#[pyfunction]
fn block_length(d: usize, k: usize) -> usize {
    bob::block_length(d, k)
}

/// Distinct `(window, alpha)` candidates searched by the Exp3 master.
#[pyfunction]
fn candidate_pool(d: usize, k: usize) -> Vec<(usize, f64)> {
    bob::build_pool(d, k)
        .pairs
        .iter()
        .map(|c| (c.window, c.alpha))
        .collect()
}

#[pyfunction]
fn exp3_gamma(pool_size: usize, k: usize, block: usize) -> f64 {
    bob::exp3_gamma(pool_size, k, block)
}

#[pyfunction]
fn rescale_block_reward(total: f64, block: usize, k: usize, noise_bound: f64) -> f64 {
    bob::rescale_block_reward(total, block, k, noise_bound)
}

#[pyfunction]
fn instant_regret(arm_set: Vec<Vec<f64>>, theta: Vec<f64>, chosen: usize) -> PyResult<f64> {
    if chosen >= arm_set.len() {
        return Err(PyValueError::new_err("chosen index out of range"));
    }
    Ok(env::instant_regret(&arm_set, &theta, chosen))
}

/// Runs a TOML experiment config and returns the summary as JSON text.
#[pyfunction]
#[pyo3(signature = (config, out = None, trials = None, parallel = true))]
fn run_config(
    py: Python<'_>,
    config: PathBuf,
    out: Option<PathBuf>,
    trials: Option<usize>,
    parallel: bool,
) -> PyResult<String> {
    let mut cfg = ExperimentConfig::load(&config).map_err(value_err)?;
    if let Some(o) = out {
        cfg.output = o;
    }
    if let Some(t) = trials {
        cfg.trials = t;
    }
    let summary = py
        .detach(|| harness::run_experiment(&cfg, RunOptions { parallel }))
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    serde_json::to_string(&summary).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pymodule]
fn varband_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRegressionState>()?;
    m.add_class::<PyEnvironment>()?;
    m.add_class::<PyPolicy>()?;
    m.add_function(wrap_pyfunction!(woful_params, m)?)?;
    m.add_function(wrap_pyfunction!(save_params, m)?)?;
    m.add_function(wrap_pyfunction!(block_length, m)?)?;
    m.add_function(wrap_pyfunction!(candidate_pool, m)?)?;
    m.add_function(wrap_pyfunction!(exp3_gamma, m)?)?;
    m.add_function(wrap_pyfunction!(rescale_block_reward, m)?)?;
    m.add_function(wrap_pyfunction!(instant_regret, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    Ok(())
}
