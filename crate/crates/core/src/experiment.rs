//! Experiment orchestration: JSON configs, the three demo presets, the
//! artifact directory layout and plot-data emission.
//!
//! Layout of an artifact directory:
//!
//! ```text
//! config.json  manifest.json  report_caseX.json  fronts.csv
//! N<n>/rd_t<t>.csv  N<n>/kmc_t<t>.csv  N<n>/entropy.csv  N<n>/profile_t<t>.dat
//! ```

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analysis::{
    case_theorem_report, interface_velocity, max_abs, oracle_l2_distance, spectral_heat_1d,
    stefan_enthalpy_oracle, trig_test_set, weak_residual_case2, weak_residual_case3, write_fronts_csv, CaseReport,
    Check, Cutoff, InterfaceTrack, OracleDomain, SpaceTime, SweepPoint,
};
use crate::kmc::{derive_seed, k_rule, mean_profiles, SimParams};
use crate::lattice::{Field, TorusGeometry};
use crate::master::{entropy_trajectory, write_entropy_csv, ProductBernoulli, ReferencePath, MAX_SITES};
use crate::rates::{make_preset, parse_offsets, RatePolynomial};
use crate::rd::{build_initial, gradient_monitor, solve, write_state_csv, InitialData, RdParams, SolveOptions, Trajectory};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("stage {stage}: {message}")]
    Stage { stage: String, message: String },
    #[error("missing artifact {0}")]
    Missing(PathBuf),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

fn stage<E: std::fmt::Display>(name: impl Into<String>) -> impl FnOnce(E) -> ExperimentError {
    let stage = name.into();
    move |e| ExperimentError::Stage { stage, message: e.to_string() }
}

fn bad(msg: impl Into<String>) -> ExperimentError {
    ExperimentError::Config(msg.into())
}

/// How `K` grows with `N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum KRule {
    /// `max(delta sqrt(log N), 1)`.
    SqrtLog { delta: f64 },
    Constant { k: f64 },
    /// `delta N^exponent`.
    Power { delta: f64, exponent: f64 },
}

impl Default for KRule {
    fn default() -> Self {
        KRule::SqrtLog { delta: 1.0 }
    }
}

impl KRule {
    pub fn k(&self, n: usize) -> f64 {
        match *self {
            KRule::SqrtLog { delta } => k_rule(delta, n),
            KRule::Constant { k } => k,
            KRule::Power { delta, exponent } => delta * (n as f64).powf(exponent),
        }
    }
}

/// Initial profile as a function of the first macroscopic coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Profile {
    Zero,
    Constant { value: f64 },
    /// `height` on the arc `[from, to)`, wrapping when `from > to`.
    Step { from: f64, to: f64, height: f64 },
    /// Smooth compactly supported bump `height exp(1 - 1/(1 - (r/radius)^2))`.
    Bump { center: f64, radius: f64, height: f64 },
    Sine { mean: f64, amplitude: f64, mode: u32 },
}

impl Profile {
    pub fn eval(&self, theta: f64) -> f64 {
        let th = theta - theta.floor();
        match *self {
            Profile::Zero => 0.0,
            Profile::Constant { value } => value,
            Profile::Step { from, to, height } => {
                let inside = if from <= to { th >= from && th < to } else { th >= from || th < to };
                if inside {
                    height
                } else {
                    0.0
                }
            }
            Profile::Bump { center, radius, height } => {
                let d = (th - center).abs();
                let r = d.min(1.0 - d) / radius;
                if r < 1.0 {
                    height * (1.0 - 1.0 / (1.0 - r * r)).exp()
                } else {
                    0.0
                }
            }
            Profile::Sine { mean, amplitude, mode } => mean + amplitude * (2.0 * PI * mode as f64 * th).sin(),
        }
    }
}

fn default_dim() -> usize {
    1
}
fn default_floor_rate() -> f64 {
    1.0
}
fn default_cap() -> f64 {
    0.99
}
fn default_steps() -> usize {
    40
}
fn default_eps() -> f64 {
    crate::analysis::DEFAULT_EPS_INT
}
fn default_oracle_cells() -> usize {
    1024
}
fn default_output() -> PathBuf {
    PathBuf::from("artifacts")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub case: u8,
    #[serde(default = "default_dim")]
    pub d: usize,
    pub n: Vec<usize>,
    #[serde(default)]
    pub k_rule: KRule,
    pub m: u32,
    /// Rate offsets such as `"e1,2e1"`; default `i e_1`.
    #[serde(default)]
    pub offsets: Option<String>,
    pub u0: Profile,
    pub v0: Profile,
    /// Initial data are clamped to `[exp(-floor_rate K), cap]`.
    #[serde(default = "default_floor_rate")]
    pub floor_rate: f64,
    #[serde(default = "default_cap")]
    pub cap: f64,
    pub horizon: f64,
    /// Times at which profiles are written.
    pub checkpoints: Vec<f64>,
    /// Uniform analysis steps over `[0, T]` (added to the checkpoints).
    #[serde(default = "default_steps")]
    pub analysis_steps: usize,
    #[serde(default)]
    pub replicas: usize,
    /// Sizes that get KMC replicas; default all of `n`.
    #[serde(default)]
    pub kmc_n: Option<Vec<usize>>,
    pub seed: u64,
    #[serde(default = "default_eps")]
    pub eps_int: f64,
    #[serde(default = "default_oracle_cells")]
    pub oracle_cells: usize,
    /// Exact relative-entropy series for every size with `N^d <= 8`.
    #[serde(default)]
    pub master_companion: bool,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

pub const PRESETS: [&str; 3] = ["case1-demo", "case2-demo", "case3-demo"];

pub fn preset(name: &str) -> Option<ExperimentConfig> {
    let base = |case, m, u0, v0, k_rule, horizon: f64| ExperimentConfig {
        name: name.to_string(),
        case,
        d: 1,
        n: vec![64, 128, 256],
        k_rule,
        m,
        offsets: None,
        u0,
        v0,
        floor_rate: 1.0,
        cap: default_cap(),
        horizon,
        checkpoints: vec![0.0, horizon / 2.0, horizon],
        analysis_steps: default_steps(),
        replicas: 8,
        kmc_n: Some(vec![64]),
        seed: 20240601,
        eps_int: default_eps(),
        oracle_cells: default_oracle_cells(),
        master_companion: false,
        output: PathBuf::from(name),
    };
    match name {
        "case1-demo" => Some(base(
            1,
            4,
            Profile::Bump { center: 0.25, radius: 0.2, height: 0.9 },
            Profile::Bump { center: 0.7, radius: 0.2, height: 0.8 },
            KRule::SqrtLog { delta: 400.0 },
            0.05,
        )),
        "case2-demo" => Some(base(
            2,
            1,
            Profile::Step { from: 0.0, to: 0.5, height: 0.8 },
            Profile::Step { from: 0.5, to: 1.0, height: 0.6 },
            KRule::SqrtLog { delta: 40.0 },
            0.05,
        )),
        // v stays put five cells inside its support at N = 256 only once the
        // u penetration layer, of width ~ 1/sqrt(K v), is thinner than that.
        "case3-demo" => Some(base(
            3,
            2,
            Profile::Step { from: 0.0, to: 0.5, height: 0.8 },
            Profile::Step { from: 0.5, to: 1.0, height: 0.6 },
            KRule::SqrtLog { delta: 50000.0 },
            0.2,
        )),
        _ => None,
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        serde_json::from_str(text).map_err(|e| bad(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// First 16 hex digits of the SHA-256 of the compact JSON form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(serde_json::to_string(self).expect("config serializes").as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn rates(&self) -> Result<(RatePolynomial, RatePolynomial), ExperimentError> {
        let offsets = match &self.offsets {
            Some(s) => Some(parse_offsets(s, self.d).map_err(|e| bad(e.to_string()))?),
            None => None,
        };
        make_preset(self.case, self.m, offsets, self.d).map_err(|e| bad(e.to_string()))
    }

    pub fn kmc_sizes(&self) -> Vec<usize> {
        if self.replicas == 0 {
            return Vec::new();
        }
        self.kmc_n.clone().unwrap_or_else(|| self.n.clone())
    }

    /// Checkpoints plus the uniform analysis grid, sorted and deduplicated.
    pub fn solve_times(&self) -> Vec<f64> {
        let mut t: Vec<f64> = (0..=self.analysis_steps)
            .map(|i| self.horizon * i as f64 / self.analysis_steps.max(1) as f64)
            .chain(self.checkpoints.iter().copied())
            .collect();
        t.sort_by(f64::total_cmp);
        t.dedup_by(|a, b| (*a - *b).abs() <= 1e-12);
        t
    }

    /// Preconditions of the full pipeline, including the analysis stages.
    pub fn validate(&self) -> Result<(), ExperimentError> {
        self.validate_model()?;
        if self.case != 1 && self.d != 1 {
            return Err(bad("the Stefan and immovable-interface analyses need d = 1"));
        }
        Ok(())
    }

    /// Preconditions of the simulators alone.
    pub fn validate_model(&self) -> Result<(), ExperimentError> {
        if !(1..=3).contains(&self.case) {
            return Err(bad(format!("case {} is not 1, 2 or 3", self.case)));
        }
        if self.d == 0 {
            return Err(bad("d must be at least 1"));
        }
        self.rates()?;
        if self.n.is_empty() || self.n.iter().any(|&n| n < 2) {
            return Err(bad("n must list sizes >= 2"));
        }
        if self.n.windows(2).any(|w| w[1] <= w[0]) {
            return Err(bad("n must be strictly increasing"));
        }
        for &n in &self.n {
            let k = self.k_rule.k(n);
            if !(k.is_finite() && k > 0.0) {
                return Err(bad(format!("K rule gives K = {k} at N = {n}")));
            }
        }
        if let Some(sizes) = &self.kmc_n {
            if sizes.iter().any(|s| !self.n.contains(s)) {
                return Err(bad("kmc_n must be a subset of n"));
            }
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(bad("horizon must be positive"));
        }
        if self.checkpoints.windows(2).any(|w| w[1] <= w[0])
            || self.checkpoints.iter().any(|&t| !(0.0..=self.horizon).contains(&t))
        {
            return Err(bad("checkpoints must be strictly increasing within [0, horizon]"));
        }
        if self.analysis_steps < 2 {
            return Err(bad("analysis_steps must be at least 2"));
        }
        if !(self.floor_rate > 0.0 && self.cap > 0.0 && self.cap < 1.0) {
            return Err(bad("need floor_rate > 0 and 0 < cap < 1"));
        }
        if !(self.eps_int > 0.0 && self.eps_int < 1.0) {
            return Err(bad("eps_int must lie in (0, 1)"));
        }
        if self.oracle_cells < 3 {
            return Err(bad("oracle_cells must be at least 3"));
        }
        if let Some(e) = [self.u0, self.v0].iter().find_map(|p| match *p {
            Profile::Bump { radius, .. } if !(radius > 0.0 && radius <= 0.5) => Some(radius),
            _ => None,
        }) {
            return Err(bad(format!("bump radius {e} must lie in (0, 1/2]")));
        }
        // Continuum data: densities with disjoint supports.
        let probe = 8192;
        for i in 0..probe {
            let th = (i as f64 + 0.5) / probe as f64;
            let (u, v) = (self.u0.eval(th), self.v0.eval(th));
            if !((0.0..=1.0).contains(&u) && (0.0..=1.0).contains(&v)) {
                return Err(bad(format!("initial profiles leave [0, 1] at theta = {th}")));
            }
            if u * v != 0.0 {
                return Err(bad(format!("u0 v0 != 0 at theta = {th}")));
            }
        }
        if self.master_companion && !self.n.iter().any(|&n| n.pow(self.d as u32) <= MAX_SITES) {
            return Err(bad(format!("master companion needs some N^d <= {MAX_SITES}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SizeRecord {
    pub n: usize,
    pub k: f64,
    pub kmc_seed: Option<u64>,
    pub rd_steps: u64,
    pub dt: f64,
    pub monitors_passed: bool,
    pub breaches: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub name: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub dry_run: bool,
    pub sizes: Vec<SizeRecord>,
    /// Seconds per stage.
    pub wall_times: BTreeMap<String, f64>,
    pub outputs: Vec<String>,
    pub pass: Option<bool>,
}

pub fn version_string() -> String {
    Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| format!("v{}", env!("CARGO_PKG_VERSION")))
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub report: Option<CaseReport>,
}

impl RunOutcome {
    pub fn passed(&self) -> bool {
        self.report.as_ref().is_none_or(|r| r.pass)
    }
}

fn size_dir(dir: &Path, n: usize) -> PathBuf {
    dir.join(format!("N{n}"))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, ExperimentError> {
    Ok(BufWriter::new(fs::File::create(path)?))
}

pub fn initial_data(cfg: &ExperimentConfig, geom: &TorusGeometry, k: f64) -> Result<InitialData, ExperimentError> {
    build_initial(geom, k, |p| cfg.u0.eval(p[0]), |p| cfg.v0.eval(p[0]), cfg.floor_rate, cfg.cap)
        .map_err(stage(format!("initial data N={}", geom.side())))
}

/// Runs every stage of the experiment into `dir` (default `cfg.output`).
/// A dry run validates, writes config and manifest, and stops.
pub fn run_experiment(cfg: &ExperimentConfig, dir: Option<&Path>, dry_run: bool) -> Result<RunOutcome, ExperimentError> {
    cfg.validate()?;
    let dir = dir.map(Path::to_path_buf).unwrap_or_else(|| cfg.output.clone());
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.json"), cfg.to_json() + "\n")?;
    let hash = cfg.hash();
    let mut manifest = Manifest {
        name: cfg.name.clone(),
        version: version_string(),
        config_hash: hash.clone(),
        seed: cfg.seed,
        dry_run,
        sizes: Vec::new(),
        wall_times: BTreeMap::new(),
        outputs: vec!["config.json".into()],
        pass: None,
    };
    if dry_run {
        write_manifest(&dir, &manifest)?;
        return Ok(RunOutcome { dir, manifest, report: None });
    }
    let (c1, c2) = cfg.rates()?;
    let times = cfg.solve_times();
    let oracle = if cfg.case == 2 {
        let clock = Instant::now();
        let o = stefan_enthalpy_oracle(
            &|x| cfg.u0.eval(x),
            &|x| cfg.v0.eval(x),
            cfg.m as f64,
            cfg.oracle_cells,
            cfg.horizon,
            &times,
            OracleDomain::Periodic,
            None,
        )
        .map_err(stage("enthalpy oracle"))?;
        manifest.wall_times.insert("oracle".into(), clock.elapsed().as_secs_f64());
        Some(o)
    } else {
        None
    };
    let mut points = Vec::new();
    let mut checks = Vec::new();
    let mut last_traj = None;
    for &n in &cfg.n {
        let geom = TorusGeometry::new(n, cfg.d).map_err(stage("geometry"))?;
        let k = cfg.k_rule.k(n);
        let sub = size_dir(&dir, n);
        fs::create_dir_all(&sub)?;
        let init = initial_data(cfg, &geom, k)?;
        let params = RdParams::new(geom, k, c1.clone(), c2.clone()).map_err(stage("rd setup"))?;
        let clock = Instant::now();
        let opts = SolveOptions { dt: None, strict: false };
        let traj = solve(&init, &params, cfg.horizon, &times, opts).map_err(stage(format!("rd N={n}")))?;
        manifest.wall_times.insert(format!("rd_N{n}"), clock.elapsed().as_secs_f64());
        for &t in &cfg.checkpoints {
            let i = traj.index_of(t).expect("checkpoint stored");
            let name = format!("N{n}/rd_t{t}.csv");
            write_state_csv(&traj.state(i), create(&dir.join(&name))?)?;
            manifest.outputs.push(name);
        }
        let mut record = SizeRecord {
            n,
            k,
            kmc_seed: None,
            rd_steps: traj.steps,
            dt: traj.dt,
            monitors_passed: traj.monitors.passed(),
            breaches: traj.monitors.breaches.clone(),
        };
        checks.push(Check::at_most(&format!("monitors_N{n}"), traj.monitors.breaches.len() as f64, 0.0));

        if cfg.kmc_sizes().contains(&n) {
            let seed = derive_seed(cfg.seed, n as u64);
            record.kmc_seed = Some(seed);
            let sim = SimParams::new(geom, k, c1.clone(), c2.clone(), cfg.horizon, seed)
                .map_err(stage(format!("kmc N={n}")))?;
            let clock = Instant::now();
            let profiles = mean_profiles(&sim, &init.u0, &init.v0, &cfg.checkpoints, cfg.replicas)
                .map_err(stage(format!("kmc N={n}")))?;
            manifest.wall_times.insert(format!("kmc_N{n}"), clock.elapsed().as_secs_f64());
            for p in &profiles {
                let name = format!("N{n}/kmc_t{}.csv", p.time);
                p.write_csv(create(&dir.join(&name))?, seed, &hash)?;
                manifest.outputs.push(name);
            }
        }

        if cfg.master_companion && geom.sites() <= MAX_SITES {
            let clock = Instant::now();
            let sim = SimParams::new(geom, k, c1.clone(), c2.clone(), cfg.horizon, cfg.seed)
                .map_err(stage("master"))?;
            let reference = ReferencePath { times: traj.times.clone(), u: traj.u.clone(), v: traj.v.clone() };
            let mu0 = ProductBernoulli::from_fields(&init.u0, &init.v0).map_err(stage("master"))?.distribution();
            let series = entropy_trajectory(&sim, &reference, &mu0, &times).map_err(stage("master"))?;
            let name = format!("N{n}/entropy.csv");
            write_entropy_csv(&series, create(&dir.join(&name))?)?;
            manifest.outputs.push(name);
            manifest.wall_times.insert(format!("master_N{n}"), clock.elapsed().as_secs_f64());
        }

        let clock = Instant::now();
        let metrics = size_metrics(cfg, &init, &traj, oracle.as_ref(), &mut checks)?;
        manifest.wall_times.insert(format!("analysis_N{n}"), clock.elapsed().as_secs_f64());
        points.push(SweepPoint { n, k, metrics });
        manifest.sizes.push(record);
        last_traj = Some(traj);
    }
    if cfg.case == 3 {
        // Immovability band C/K, with C fitted on the smallest size.
        let first = &points[0];
        let last = points.last().expect("nonempty sweep");
        if let (Some(d0), Some(d1)) = (first.metrics.get("front_displacement"), last.metrics.get("front_displacement")) {
            let band = (2.0 / last.n as f64).max(d0 * first.k / last.k);
            checks.push(Check::at_most("front_displacement_band", *d1, band));
        }
        if let Some(dv) = last.metrics.get("v_inner_change") {
            checks.push(Check::at_most("v_inner_change", *dv, 1e-2));
        }
    }
    if cfg.case != 1 {
        if let Some(traj) = &last_traj {
            let track = InterfaceTrack::from_trajectory(traj, cfg.m as f64, cfg.eps_int);
            if let Ok(fronts) = interface_velocity(&track) {
                write_fronts_csv(&fronts, create(&dir.join("fronts.csv"))?)?;
                manifest.outputs.push("fronts.csv".into());
            }
        }
    }
    let report = case_theorem_report(cfg.case, points, checks);
    report.write_json(&dir).map_err(stage("report"))?;
    manifest.outputs.push(format!("report_case{}.json", cfg.case));
    manifest.pass = Some(report.pass);
    write_manifest(&dir, &manifest)?;
    Ok(RunOutcome { dir, manifest, report: Some(report) })
}

fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<(), ExperimentError> {
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    fs::write(dir.join("manifest.json"), text + "\n")?;
    Ok(())
}

/// Per-size metrics for the case report.
fn size_metrics(
    cfg: &ExperimentConfig,
    init: &InitialData,
    traj: &Trajectory,
    oracle: Option<&crate::analysis::EnthalpyTrajectory>,
    checks: &mut Vec<Check>,
) -> Result<BTreeMap<String, f64>, ExperimentError> {
    let n = traj.geom.side();
    let last = traj.times.len() - 1;
    let mut m = BTreeMap::new();
    let grad = gradient_monitor(traj, init.c0);
    m.insert("gradient_c".into(), grad.fitted_c);
    m.insert("sup_v".into(), traj.v[last].iter().fold(0.0, |a: f64, &b| a.max(b)));
    let data = SpaceTime::from_trajectory(traj);
    match cfg.case {
        1 => {
            if cfg.d == 1 {
                let thetas: Vec<f64> = (0..n).map(|x| x as f64 / n as f64).collect();
                let heat = spectral_heat_1d(&|x| cfg.u0.eval(x), cfg.horizon, &thetas);
                let err = traj.u[last].iter().zip(&heat).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                m.insert("heat_error".into(), err);
            }
        }
        2 => {
            let oracle = oracle.expect("case 2 builds the oracle");
            m.insert("oracle_l2".into(), oracle_l2_distance(traj, oracle).map_err(stage("oracle distance"))?);
            let tests = trig_test_set(10, Cutoff::Terminal, cfg.horizon);
            m.insert("weak_residual".into(), max_abs(&weak_residual_case2(&data, cfg.m as f64, &tests)));
        }
        _ => {
            let track = InterfaceTrack::from_trajectory(traj, cfg.m as f64, cfg.eps_int);
            match track.max_displacement() {
                Ok(d) => {
                    m.insert("front_displacement".into(), d);
                }
                Err(e) => checks.push(Check {
                    name: format!("front_topology_N{n}: {e}"),
                    value: f64::NAN,
                    bound: 0.0,
                    pass: false,
                }),
            }
            let tests = trig_test_set(10, Cutoff::Bump, cfg.horizon);
            m.insert("weak_residual".into(), max_abs(&weak_residual_case3(&data, cfg.m as f64, &tests)));
            m.insert("v_inner_change".into(), inner_v_change(&init.v0, &init.v_support, &traj.v[last], 5));
        }
    }
    Ok(m)
}

/// `max |v(T) - v0|` over sites at least `depth` cells inside the support
/// of `v0` (d = 1).
pub fn inner_v_change(v0: &Field, support: &[bool], v: &[f64], depth: usize) -> f64 {
    let n = support.len();
    (0..n)
        .filter(|&x| (0..=depth).all(|j| support[(x + j) % n] && support[(x + n - j % n) % n]))
        .map(|x| (v[x] - v0.values[x]).abs())
        .fold(0.0, f64::max)
}

fn parse_state_csv(path: &Path) -> Result<(f64, Vec<(f64, f64)>), ExperimentError> {
    let text = fs::read_to_string(path).map_err(|_| ExperimentError::Missing(path.to_path_buf()))?;
    let mut lines = text.lines();
    let t = lines
        .next()
        .and_then(|l| l.strip_prefix("# t="))
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| ExperimentError::Missing(path.to_path_buf()))?;
    let rows = lines
        .skip(1)
        .filter_map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            Some((f.get(1)?.parse().ok()?, f.get(2)?.parse().ok()?))
        })
        .collect();
    Ok((t, rows))
}

fn parse_kmc_csv(path: &Path) -> Option<Vec<(f64, f64)>> {
    let text = fs::read_to_string(path).ok()?;
    Some(
        text.lines()
            .skip(2)
            .filter_map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                Some((f.get(1)?.parse().ok()?, f.get(2)?.parse().ok()?))
            })
            .collect(),
    )
}

/// Writes `N<n>/profile_t<t>.dat` (`theta u v eta1 eta2`, `nan` without
/// KMC data) for every checkpoint, plus `fronts.dat` from `fronts.csv`.
pub fn emit_plotdata(dir: &Path) -> Result<Vec<PathBuf>, ExperimentError> {
    let cfg_path = dir.join("config.json");
    let text = fs::read_to_string(&cfg_path).map_err(|_| ExperimentError::Missing(cfg_path.clone()))?;
    let cfg = ExperimentConfig::from_json(&text)?;
    if cfg.d != 1 {
        return Err(bad("profile panels need d = 1"));
    }
    let mut written = Vec::new();
    for &n in &cfg.n {
        for &t in &cfg.checkpoints {
            let sub = size_dir(dir, n);
            let (_, rd) = parse_state_csv(&sub.join(format!("rd_t{t}.csv")))?;
            let kmc = parse_kmc_csv(&sub.join(format!("kmc_t{t}.csv")));
            let path = sub.join(format!("profile_t{t}.dat"));
            let mut out = create(&path)?;
            let max_uv = rd.iter().map(|(u, v)| u * v).fold(0.0, f64::max);
            writeln!(out, "# N={n} t={t} max_u_times_v={max_uv:e} eps_int={}", cfg.eps_int)?;
            writeln!(out, "# theta u v eta1 eta2")?;
            for (x, (u, v)) in rd.iter().enumerate() {
                let (a, b) = kmc.as_ref().and_then(|k| k.get(x).copied()).unwrap_or((f64::NAN, f64::NAN));
                writeln!(out, "{} {u} {v} {a} {b}", x as f64 / n as f64)?;
            }
            written.push(path);
        }
    }
    let path = dir.join("fronts.dat");
    let mut out = create(&path)?;
    writeln!(out, "# t position velocity")?;
    if let Ok(text) = fs::read_to_string(dir.join("fronts.csv")) {
        for line in text.lines().skip(1) {
            writeln!(out, "{}", line.replace(',', " "))?;
        }
    }
    written.push(path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(case: u8) -> ExperimentConfig {
        let mut cfg = preset(match case {
            1 => "case1-demo",
            2 => "case2-demo",
            _ => "case3-demo",
        })
        .unwrap();
        cfg.n = vec![16, 32];
        cfg.kmc_n = Some(vec![16]);
        cfg.replicas = 2;
        cfg.horizon = 0.01;
        cfg.checkpoints = vec![0.0, 0.01];
        cfg.analysis_steps = 4;
        cfg.oracle_cells = 64;
        cfg
    }

    #[test]
    fn presets_validate_and_round_trip() {
        for name in PRESETS {
            let cfg = preset(name).unwrap();
            cfg.validate().unwrap();
            let back = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
            assert_eq!(back, cfg);
            assert_eq!(back.hash(), cfg.hash());
        }
        assert!(preset("nope").is_none());
    }

    #[test]
    fn defaults_fill_in() {
        let cfg = ExperimentConfig::from_json(
            r#"{"name":"x","case":2,"n":[8],"m":1,"u0":{"kind":"zero"},"v0":{"kind":"constant","value":0.5},
                "horizon":0.1,"checkpoints":[],"seed":1}"#,
        )
        .unwrap();
        assert_eq!(cfg.d, 1);
        assert_eq!(cfg.k_rule, KRule::SqrtLog { delta: 1.0 });
        cfg.validate().unwrap();
        assert!(ExperimentConfig::from_json(r#"{"name":"x","bogus":1}"#).is_err());
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let ok = tiny(1);
        let mut c = ok.clone();
        c.m = 3;
        assert!(c.validate().is_err());
        let mut c = ok.clone();
        c.n = vec![32, 16];
        assert!(c.validate().is_err());
        let mut c = ok.clone();
        c.checkpoints = vec![0.02];
        assert!(c.validate().is_err());
        let mut c = ok.clone();
        c.v0 = Profile::Constant { value: 0.5 };
        assert!(c.validate().is_err(), "overlapping supports");
        let mut c = ok.clone();
        c.master_companion = true;
        assert!(c.validate().is_err());
    }

    #[test]
    fn profiles() {
        let s = Profile::Step { from: 0.8, to: 0.2, height: 0.5 };
        assert_eq!(s.eval(0.9), 0.5);
        assert_eq!(s.eval(0.1), 0.5);
        assert_eq!(s.eval(0.5), 0.0);
        let b = Profile::Bump { center: 0.95, radius: 0.1, height: 0.7 };
        assert!((b.eval(0.95) - 0.7).abs() < 1e-15);
        assert!(b.eval(0.02) > 0.0);
        assert_eq!(b.eval(0.5), 0.0);
    }

    #[test]
    fn dry_run_writes_manifest_only() {
        let dir = tempfile::tempdir().unwrap();
        let out = run_experiment(&tiny(1), Some(dir.path()), true).unwrap();
        assert!(out.manifest.dry_run);
        assert!(dir.path().join("manifest.json").exists());
        assert!(!dir.path().join("N16").exists());
    }

    #[test]
    fn rerun_is_byte_identical() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let cfg = tiny(2);
        let ra = run_experiment(&cfg, Some(a.path()), false).unwrap();
        run_experiment(&cfg, Some(b.path()), false).unwrap();
        for name in ra.manifest.outputs.iter().filter(|n| n.ends_with(".csv")) {
            let x = fs::read(a.path().join(name)).unwrap();
            let y = fs::read(b.path().join(name)).unwrap();
            assert_eq!(x, y, "{name}");
        }
        assert!(ra.manifest.outputs.iter().any(|n| n.contains("kmc_t")));
    }

    #[test]
    fn full_pipeline_and_plotdata() {
        for case in 1..=3 {
            let dir = tempfile::tempdir().unwrap();
            let out = run_experiment(&tiny(case), Some(dir.path()), false).unwrap();
            let report = out.report.unwrap();
            assert_eq!(report.points.len(), 2);
            assert!(dir.path().join(format!("report_case{case}.json")).exists());
            let files = emit_plotdata(dir.path()).unwrap();
            let text = fs::read_to_string(dir.path().join("N16/profile_t0.01.dat")).unwrap();
            assert!(text.starts_with("# N=16 t=0.01 max_u_times_v="));
            assert_eq!(text.lines().count(), 2 + 16);
            assert_eq!(files.len(), 2 * 2 + 1);
        }
    }

    #[test]
    fn master_companion_series() {
        let mut cfg = tiny(2);
        cfg.n = vec![4, 16];
        cfg.kmc_n = Some(vec![]);
        cfg.master_companion = true;
        cfg.u0 = Profile::Step { from: 0.0, to: 0.5, height: 0.7 };
        let dir = tempfile::tempdir().unwrap();
        run_experiment(&cfg, Some(dir.path()), false).unwrap();
        let text = fs::read_to_string(dir.path().join("N4/entropy.csv")).unwrap();
        assert!(text.starts_with("t,H,H_per_site,"));
        assert!(!dir.path().join("N16/entropy.csv").exists());
    }

    #[test]
    fn empty_checkpoints_give_headers_only() {
        let mut cfg = tiny(1);
        cfg.checkpoints = vec![];
        let dir = tempfile::tempdir().unwrap();
        run_experiment(&cfg, Some(dir.path()), false).unwrap();
        let files = emit_plotdata(dir.path()).unwrap();
        assert_eq!(files.len(), 1);
        assert_eq!(fs::read_to_string(&files[0]).unwrap(), "# t position velocity\n");
        assert!(matches!(emit_plotdata(&dir.path().join("nowhere")), Err(ExperimentError::Missing(_))));
    }
}
