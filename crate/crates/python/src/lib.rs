use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use segregation::analysis::stefan_similarity_lambda;
use segregation::entropy::{self, DiscreteVariable};
use segregation::experiment::{preset, run_experiment, ExperimentConfig, PRESETS};
use segregation::kmc::{mean_profiles, SimParams};
use segregation::lattice::{heat_kernel, Field, TorusGeometry};
use segregation::master::{entropy_trajectory, ProductBernoulli, ReferencePath};
use segregation::rates::make_preset;
use segregation::rd::{solve_fields, RdParams, SolveOptions, Trajectory};

fn bad(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyclass(name = "Geometry", frozen)]
struct Geometry {
    inner: TorusGeometry,
}

#[pymethods]
impl Geometry {
    #[new]
    #[pyo3(signature = (n, d = 1))]
    fn new(n: usize, d: usize) -> PyResult<Self> {
        Ok(Self { inner: TorusGeometry::new(n, d).map_err(bad)? })
    }

    #[getter]
    fn side(&self) -> usize {
        self.inner.side()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn sites(&self) -> usize {
        self.inner.sites()
    }

    fn position(&self, site: usize) -> PyResult<Vec<f64>> {
        if site >= self.inner.sites() {
            return Err(bad(format!("site {site} out of range")));
        }
        Ok(self.inner.position(site))
    }

    /// Discrete heat flow `P_t f`.
    fn heat(&self, t: f64, values: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.check_len(values.len()).map_err(bad)?;
        Ok(heat_kernel(&self.inner, t).map_err(bad)?.apply(&values))
    }

    fn __repr__(&self) -> String {
        format!("Geometry(n={}, d={})", self.inner.side(), self.inner.dim())
    }
}

#[pyclass(name = "Config")]
struct Config {
    inner: ExperimentConfig,
}

#[pymethods]
impl Config {
    #[staticmethod]
    fn preset(name: &str) -> PyResult<Self> {
        preset(name).map(|inner| Self { inner }).ok_or_else(|| bad(format!("unknown preset {name:?}")))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: ExperimentConfig::from_json(text).map_err(bad)? })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn hash(&self) -> String {
        self.inner.hash()
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn case(&self) -> u8 {
        self.inner.case
    }

    #[getter]
    fn sizes(&self) -> Vec<usize> {
        self.inner.n.clone()
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(bad)
    }

    /// Runs the full pipeline; returns `dir`, `passed` and the manifest
    /// and case report as JSON strings.
    #[pyo3(signature = (out = None, dry_run = false))]
    fn run<'py>(&self, py: Python<'py>, out: Option<PathBuf>, dry_run: bool) -> PyResult<Bound<'py, PyDict>> {
        let cfg = self.inner.clone();
        let outcome = py
            .detach(move || run_experiment(&cfg, out.as_deref(), dry_run))
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        let d = PyDict::new(py);
        d.set_item("dir", outcome.dir.display().to_string())?;
        d.set_item("passed", outcome.passed())?;
        d.set_item("manifest", serde_json::to_string(&outcome.manifest).map_err(bad)?)?;
        let report = outcome.report.as_ref().map(serde_json::to_string).transpose().map_err(bad)?;
        d.set_item("report", report)?;
        Ok(d)
    }

    fn __repr__(&self) -> String {
        format!("Config(name={:?}, case={})", self.inner.name, self.inner.case)
    }
}

#[pyfunction]
fn presets() -> Vec<&'static str> {
    PRESETS.to_vec()
}

fn model(case: u8, m: u32, n: usize, d: usize, k: f64) -> PyResult<(TorusGeometry, RdParams)> {
    let geom = TorusGeometry::new(n, d).map_err(bad)?;
    let (c1, c2) = make_preset(case, m, None, d).map_err(bad)?;
    let params = RdParams::new(geom, k, c1, c2).map_err(bad)?;
    Ok((geom, params))
}

fn reference_grid(horizon: f64, times: &[f64]) -> Vec<f64> {
    let mut grid: Vec<f64> = (0..=40).map(|i| horizon * i as f64 / 40.0).chain(times.iter().copied()).collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup_by(|a, b| (*a - *b).abs() <= 1e-12);
    grid
}

fn trajectory<'py>(py: Python<'py>, traj: &Trajectory) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("times", traj.times.clone())?;
    d.set_item("u", traj.u.clone())?;
    d.set_item("v", traj.v.clone())?;
    d.set_item("dt", traj.dt)?;
    d.set_item("steps", traj.steps)?;
    let m = &traj.monitors;
    let mon = PyDict::new(py);
    mon.set_item("box_excursion", m.box_excursion)?;
    mon.set_item("lower_margin_u", m.lower_margin_u)?;
    mon.set_item("lower_margin_v", m.lower_margin_v)?;
    mon.set_item("energy", m.energy)?;
    mon.set_item("reaction", m.reaction)?;
    mon.set_item("breaches", m.breaches.clone())?;
    d.set_item("monitors", mon)?;
    Ok(d)
}

/// Semi-discrete solve from sitewise initial values.
#[pyfunction]
#[pyo3(signature = (case, m, n, k, u0, v0, horizon, times, d = 1))]
#[allow(clippy::too_many_arguments)]
fn rd_solve<'py>(
    py: Python<'py>,
    case: u8,
    m: u32,
    n: usize,
    k: f64,
    u0: Vec<f64>,
    v0: Vec<f64>,
    horizon: f64,
    times: Vec<f64>,
    d: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let (geom, params) = model(case, m, n, d, k)?;
    geom.check_len(u0.len()).and(geom.check_len(v0.len())).map_err(bad)?;
    let opts = SolveOptions { dt: None, strict: false };
    let traj = py
        .detach(|| solve_fields(&u0, &v0, &params, horizon, &times, opts))
        .map_err(bad)?;
    trajectory(py, &traj)
}

/// Replica-averaged occupations at `times`, from product initial laws.
#[pyfunction]
#[pyo3(signature = (case, m, n, k, u0, v0, times, replicas = 100, seed = 1, d = 1))]
#[allow(clippy::too_many_arguments)]
fn kmc_profiles<'py>(
    py: Python<'py>,
    case: u8,
    m: u32,
    n: usize,
    k: f64,
    u0: Vec<f64>,
    v0: Vec<f64>,
    times: Vec<f64>,
    replicas: usize,
    seed: u64,
    d: usize,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let (geom, params) = model(case, m, n, d, k)?;
    let horizon = times.iter().copied().fold(0.0, f64::max);
    let sim = SimParams::new(geom, k, params.c1.clone(), params.c2.clone(), horizon, seed).map_err(bad)?;
    let (u0, v0) = (Field::new(u0), Field::new(v0));
    let profiles = py.detach(|| mean_profiles(&sim, &u0, &v0, &times, replicas)).map_err(bad)?;
    profiles
        .into_iter()
        .map(|p| {
            let d = PyDict::new(py);
            d.set_item("time", p.time)?;
            d.set_item("eta1", p.eta1)?;
            d.set_item("eta2", p.eta2)?;
            Ok(d)
        })
        .collect()
}

/// Exact `H(mu_t | nu_t)` against the semi-discrete reference, `mu_0 = nu_0`.
#[pyfunction]
#[pyo3(signature = (case, m, n, k, u0, v0, times, d = 1))]
#[allow(clippy::too_many_arguments)]
fn master_entropy<'py>(
    py: Python<'py>,
    case: u8,
    m: u32,
    n: usize,
    k: f64,
    u0: Vec<f64>,
    v0: Vec<f64>,
    times: Vec<f64>,
    d: usize,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let (geom, params) = model(case, m, n, d, k)?;
    let horizon = times.iter().copied().fold(0.0, f64::max);
    let grid = reference_grid(horizon, &times);
    let opts = SolveOptions { dt: None, strict: false };
    let traj = solve_fields(&u0, &v0, &params, horizon, &grid, opts).map_err(bad)?;
    let reference = ReferencePath { times: traj.times, u: traj.u, v: traj.v };
    let sim = SimParams::new(geom, k, params.c1.clone(), params.c2.clone(), horizon, 0).map_err(bad)?;
    let mu0 = ProductBernoulli::new(u0, v0).map_err(bad)?.distribution();
    let series = py.detach(|| entropy_trajectory(&sim, &reference, &mu0, &times)).map_err(bad)?;
    series
        .into_iter()
        .map(|p| {
            let d = PyDict::new(py);
            d.set_item("t", p.t)?;
            d.set_item("h", p.h)?;
            d.set_item("h_per_site", p.h_per_site)?;
            d.set_item("dirichlet_sqrt", p.dirichlet_sqrt)?;
            Ok(d)
        })
        .collect()
}

#[pyfunction]
fn flow_energy(ell: usize, d: usize) -> PyResult<f64> {
    Ok(entropy::flow_energy(&entropy::build_flow(ell, d).map_err(bad)?))
}

#[pyfunction]
fn flow_scaling<'py>(py: Python<'py>, d: usize, ells: Vec<usize>) -> PyResult<Bound<'py, PyDict>> {
    let r = py.detach(|| entropy::flow_scaling(d, &ells)).map_err(bad)?;
    let out = PyDict::new(py);
    out.set_item("ells", r.ells.clone())?;
    out.set_item("energies", r.energies.clone())?;
    out.set_item("ratios", r.ratios.clone())?;
    out.set_item("differences", r.differences.clone())?;
    out.set_item("class", format!("{:?}", r.class).to_lowercase())?;
    out.set_item("expected", format!("{:?}", r.expected).to_lowercase())?;
    out.set_item("matches", r.matches_expected())?;
    Ok(out)
}

/// Exact check for a sum of independent Bernoulli(p_i); `gammas` default to
/// fractions of `1/kappa`.
#[pyfunction]
#[pyo3(signature = (ps, gammas = None))]
fn concentration<'py>(py: Python<'py>, ps: Vec<f64>, gammas: Option<Vec<f64>>) -> PyResult<Bound<'py, PyDict>> {
    let vars: Vec<DiscreteVariable> = ps.iter().map(|&p| DiscreteVariable::bernoulli(p)).collect();
    let gammas = gammas.unwrap_or_else(|| entropy::default_gammas(entropy::kappa(&vars)));
    let r = entropy::concentration_check(&vars, &gammas).map_err(bad)?;
    let out = PyDict::new(py);
    out.set_item("kappa", r.kappa)?;
    out.set_item("pass", r.pass)?;
    let rows: Vec<(f64, f64, f64, f64)> = r.rows.iter().map(|x| (x.gamma, x.lhs, x.rhs, x.slack)).collect();
    out.set_item("rows", rows)?;
    Ok(out)
}

#[pyfunction]
fn stefan_lambda(u_left: f64, latent: f64) -> PyResult<f64> {
    stefan_similarity_lambda(u_left, latent).map_err(bad)
}

#[pymodule]
fn segregation_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Geometry>()?;
    m.add_class::<Config>()?;
    m.add_function(wrap_pyfunction!(presets, m)?)?;
    m.add_function(wrap_pyfunction!(rd_solve, m)?)?;
    m.add_function(wrap_pyfunction!(kmc_profiles, m)?)?;
    m.add_function(wrap_pyfunction!(master_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(flow_energy, m)?)?;
    m.add_function(wrap_pyfunction!(flow_scaling, m)?)?;
    m.add_function(wrap_pyfunction!(concentration, m)?)?;
    m.add_function(wrap_pyfunction!(stefan_lambda, m)?)?;
    Ok(())
}
