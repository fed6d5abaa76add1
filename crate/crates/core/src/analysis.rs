//! Post-processing against the limit objects: interface tracking, the
//! enthalpy oracle for the one-phase Stefan problem, weak-form residuals and
//! the per-case convergence reports.
//!
//! Everything here except the region masks is one-dimensional; positions are
//! macroscopic, in `[0, 1)`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::lattice::TorusGeometry;
use crate::rd::{trapezoid, Trajectory};

pub const DEFAULT_EPS_INT: f64 = 1e-2;
/// Product `u v` above `MIXING_FACTOR * eps^2` means the phases overlap.
pub const MIXING_FACTOR: f64 = 10.0;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("interface geometry needs d = 1, got d = {0}")]
    NotOneDimensional(usize),
    #[error("need at least {need} checkpoints, got {got}")]
    TooFewCheckpoints { need: usize, got: usize },
    #[error("crossing count changes from {before} to {after} at t = {t}")]
    TopologyChange { t: f64, before: usize, after: usize },
    #[error("time step {dt} violates the CFL bound {bound}")]
    Cfl { dt: f64, bound: f64 },
    #[error("grid needs at least 3 cells, got {0}")]
    GridTooSmall(usize),
    #[error("initial enthalpy {value} at cell {cell} outside [-1/m, 1]")]
    EnthalpyRange { cell: usize, value: f64 },
    #[error("m = {0} must be at least 1")]
    BadExponent(f64),
    #[error("checkpoints must be sorted and lie in [0, T]")]
    BadCheckpoints,
    #[error("trajectory and oracle checkpoints differ")]
    CheckpointMismatch,
    #[error("the distance to the oracle needs a periodic oracle")]
    NotPeriodic,
    #[error("regions overlap: max u v = {max_product} at t = {t}")]
    Mixing { t: f64, max_product: f64 },
    #[error("latent heat and boundary value must be positive")]
    BadStefanData,
    #[error("io: {0}")]
    Io(String),
}

impl From<io::Error> for AnalysisError {
    fn from(e: io::Error) -> Self {
        AnalysisError::Io(e.to_string())
    }
}

fn wrap(theta: f64) -> f64 {
    theta - theta.floor()
}

/// Minimal-image difference `b - a` on the unit circle, in `(-1/2, 1/2]`.
pub fn circle_diff(a: f64, b: f64) -> f64 {
    let d = wrap(b - a);
    if d > 0.5 {
        d - 1.0
    } else {
        d
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterfaceEntry {
    pub t: f64,
    pub omega_u: Vec<bool>,
    pub omega_v: Vec<bool>,
    pub gamma: Vec<bool>,
    /// Sorted sign changes of `w = u - v^m/m` (d = 1 only, else empty).
    pub crossings: Vec<f64>,
    pub max_product: f64,
    pub mixing: bool,
}

impl InterfaceEntry {
    pub fn require_segregated(&self) -> Result<&Self, AnalysisError> {
        if self.mixing {
            Err(AnalysisError::Mixing { t: self.t, max_product: self.max_product })
        } else {
            Ok(self)
        }
    }

    /// Fractions of the torus in `(Omega^u, Omega^v, Gamma)`.
    pub fn areas(&self) -> (f64, f64, f64) {
        let n = self.gamma.len() as f64;
        let count = |m: &[bool]| m.iter().filter(|&&b| b).count() as f64 / n;
        (count(&self.omega_u), count(&self.omega_v), count(&self.gamma))
    }
}

/// Thresholded phase masks. Where both densities exceed `eps` (only while
/// mixing) the site goes to whichever phase the sign of `w` favours, so the
/// three masks always partition the torus.
pub fn extract_interface(geom: &TorusGeometry, u: &[f64], v: &[f64], m: f64, eps: f64, t: f64) -> InterfaceEntry {
    let sites = geom.sites();
    let w: Vec<f64> = u.iter().zip(v).map(|(&a, &b)| a - b.powf(m) / m).collect();
    let mut omega_u = vec![false; sites];
    let mut omega_v = vec![false; sites];
    let mut gamma = vec![false; sites];
    for x in 0..sites {
        match (u[x] > eps, v[x] > eps) {
            (false, false) => gamma[x] = true,
            (true, false) => omega_u[x] = true,
            (false, true) => omega_v[x] = true,
            (true, true) => {
                if w[x] > 0.0 {
                    omega_u[x] = true
                } else {
                    omega_v[x] = true
                }
            }
        }
    }
    let max_product = u.iter().zip(v).map(|(a, b)| a * b).fold(0.0, f64::max);
    let crossings = if geom.dim() == 1 { crossings_1d(&w) } else { Vec::new() };
    InterfaceEntry {
        t,
        omega_u,
        omega_v,
        gamma,
        crossings,
        max_product,
        mixing: max_product > MIXING_FACTOR * eps * eps,
    }
}

/// Sign changes of `w` between neighbouring sites, located by linear
/// interpolation; sites sit at `x/N`.
pub fn crossings_1d(w: &[f64]) -> Vec<f64> {
    let n = w.len();
    let mut out = Vec::new();
    for i in 0..n {
        let (a, b) = (w[i], w[(i + 1) % n]);
        if (a > 0.0) != (b > 0.0) {
            out.push(wrap((i as f64 + a / (a - b)) / n as f64));
        }
    }
    out.sort_by(f64::total_cmp);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterfaceTrack {
    pub entries: Vec<InterfaceEntry>,
}

impl InterfaceTrack {
    pub fn from_trajectory(traj: &Trajectory, m: f64, eps: f64) -> Self {
        let entries = traj
            .times
            .iter()
            .enumerate()
            .map(|(i, &t)| extract_interface(&traj.geom, &traj.u[i], &traj.v[i], m, eps, t))
            .collect();
        InterfaceTrack { entries }
    }

    /// Largest minimal-image displacement of any crossing from its initial
    /// position, over all checkpoints.
    pub fn max_displacement(&self) -> Result<f64, AnalysisError> {
        let first = match self.entries.first() {
            Some(e) => e,
            None => return Err(AnalysisError::TooFewCheckpoints { need: 1, got: 0 }),
        };
        let mut worst: f64 = 0.0;
        for e in &self.entries[1..] {
            check_topology(first, e)?;
            for (a, b) in first.crossings.iter().zip(&e.crossings) {
                worst = worst.max(circle_diff(*a, *b).abs());
            }
        }
        Ok(worst)
    }
}

fn check_topology(a: &InterfaceEntry, b: &InterfaceEntry) -> Result<(), AnalysisError> {
    if a.crossings.len() != b.crossings.len() {
        return Err(AnalysisError::TopologyChange {
            t: b.t,
            before: a.crossings.len(),
            after: b.crossings.len(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrontSample {
    pub t: f64,
    pub position: f64,
    pub velocity: f64,
}

/// Crossing velocities by central differences in time (one-sided at the
/// ends). Crossings are matched by sorted order.
pub fn interface_velocity(track: &InterfaceTrack) -> Result<Vec<Vec<FrontSample>>, AnalysisError> {
    let e = &track.entries;
    if e.len() < 3 {
        return Err(AnalysisError::TooFewCheckpoints { need: 3, got: e.len() });
    }
    for w in e.windows(2) {
        check_topology(&w[0], &w[1])?;
    }
    let last = e.len() - 1;
    Ok((0..e.len())
        .map(|i| {
            let (lo, hi) = (i.saturating_sub(1), (i + 1).min(last));
            let dt = e[hi].t - e[lo].t;
            e[i].crossings
                .iter()
                .enumerate()
                .map(|(c, &p)| FrontSample {
                    t: e[i].t,
                    position: p,
                    velocity: circle_diff(e[lo].crossings[c], e[hi].crossings[c]) / dt,
                })
                .collect()
        })
        .collect())
}

pub fn write_fronts_csv<W: Write>(fronts: &[Vec<FrontSample>], mut out: W) -> io::Result<()> {
    writeln!(out, "t,position,velocity")?;
    for row in fronts {
        for s in row {
            writeln!(out, "{},{},{}", s.t, s.position, s.velocity)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OracleDomain {
    /// The unit torus, nodes at `i/M`.
    Periodic,
    /// `[0, 1]` with `w_+ = left` at 0 and no flux at 1, cell centres at
    /// `(i + 1/2)/M`.
    Segment { left: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnthalpyState {
    pub w: Vec<f64>,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnthalpyTrajectory {
    pub m: f64,
    pub h: f64,
    pub dt: f64,
    pub domain: OracleDomain,
    /// `v0^m / m` on the grid.
    pub latent: Vec<f64>,
    pub times: Vec<f64>,
    pub w: Vec<Vec<f64>>,
}

impl EnthalpyTrajectory {
    pub fn cells(&self) -> usize {
        self.latent.len()
    }

    pub fn node(&self, i: usize) -> f64 {
        match self.domain {
            OracleDomain::Periodic => i as f64 * self.h,
            OracleDomain::Segment { .. } => (i as f64 + 0.5) * self.h,
        }
    }

    pub fn state(&self, i: usize) -> EnthalpyState {
        EnthalpyState { w: self.w[i].clone(), t: self.times[i] }
    }

    pub fn mass(&self, i: usize) -> f64 {
        self.w[i].iter().sum::<f64>() * self.h
    }

    /// Periodic linear interpolation of `w` at checkpoint `i`.
    pub fn sample(&self, i: usize, theta: f64) -> f64 {
        let m = self.cells();
        let s = wrap(theta) * m as f64;
        let j = (s.floor() as usize).min(m - 1);
        let f = s - j as f64;
        (1.0 - f) * self.w[i][j] + f * self.w[i][(j + 1) % m]
    }

    /// Melted length `h sum clamp((w + L)/L, 0, 1)` — the front position
    /// when the segment starts frozen with latent heat `L > 0`.
    pub fn melted_length(&self, i: usize) -> f64 {
        self.w[i]
            .iter()
            .zip(&self.latent)
            .map(|(&w, &l)| {
                if l > 0.0 {
                    ((w + l) / l).clamp(0.0, 1.0)
                } else if w >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            })
            .sum::<f64>()
            * self.h
    }
}

/// Explicit conservative scheme for `w_t = (w_+)_xx`, `w(0) = u0 - v0^m/m`.
/// Monotone for `dt <= h^2/2`; the default step is `h^2/4`, shortened to
/// land on every checkpoint.
pub fn stefan_enthalpy_oracle(
    u0: &dyn Fn(f64) -> f64,
    v0: &dyn Fn(f64) -> f64,
    m: f64,
    cells: usize,
    horizon: f64,
    times: &[f64],
    domain: OracleDomain,
    dt: Option<f64>,
) -> Result<EnthalpyTrajectory, AnalysisError> {
    if !(m >= 1.0) {
        return Err(AnalysisError::BadExponent(m));
    }
    if cells < 3 {
        return Err(AnalysisError::GridTooSmall(cells));
    }
    if !(horizon >= 0.0)
        || times.windows(2).any(|w| w[1] < w[0])
        || times.iter().any(|&t| !(0.0..=horizon).contains(&t))
    {
        return Err(AnalysisError::BadCheckpoints);
    }
    let h = 1.0 / cells as f64;
    let bound = h * h / 4.0;
    let dt_max = dt.unwrap_or(bound);
    if !(dt_max > 0.0) || dt_max > bound * (1.0 + 1e-12) {
        return Err(AnalysisError::Cfl { dt: dt_max, bound });
    }
    let mut traj = EnthalpyTrajectory {
        m,
        h,
        dt: dt_max,
        domain,
        latent: Vec::with_capacity(cells),
        times: Vec::new(),
        w: Vec::new(),
    };
    let mut w = Vec::with_capacity(cells);
    for i in 0..cells {
        let theta = traj.node(i);
        let l = v0(theta).powf(m) / m;
        let value = u0(theta) - l;
        if !(-1.0 / m - 1e-12..=1.0 + 1e-12).contains(&value) {
            return Err(AnalysisError::EnthalpyRange { cell: i, value });
        }
        traj.latent.push(l);
        w.push(value);
    }
    let mut phi = vec![0.0; cells];
    let mut t = 0.0;
    for &target in times {
        let span = target - t;
        if span > 0.0 {
            let steps = (span / dt_max).ceil().max(1.0) as usize;
            let r = span / steps as f64 / (h * h);
            for _ in 0..steps {
                enthalpy_step(&mut w, &mut phi, r, domain);
            }
            t = target;
        }
        traj.times.push(target);
        traj.w.push(w.clone());
    }
    Ok(traj)
}

fn enthalpy_step(w: &mut [f64], phi: &mut [f64], r: f64, domain: OracleDomain) {
    let n = w.len();
    for (p, &x) in phi.iter_mut().zip(w.iter()) {
        *p = x.max(0.0);
    }
    let (left, right) = match domain {
        OracleDomain::Periodic => (phi[n - 1], phi[0]),
        OracleDomain::Segment { left } => (2.0 * left - phi[0], phi[n - 1]),
    };
    w[0] += r * (left - 2.0 * phi[0] + phi[1]);
    for i in 1..n - 1 {
        w[i] += r * (phi[i - 1] - 2.0 * phi[i] + phi[i + 1]);
    }
    w[n - 1] += r * (phi[n - 2] - 2.0 * phi[n - 1] + right);
}

/// Root of `lambda e^{lambda^2} erf(lambda) = u_l / (L sqrt(pi))`; the
/// one-phase similarity front is `s(t) = 2 lambda sqrt(t)`.
pub fn stefan_similarity_lambda(u_left: f64, latent: f64) -> Result<f64, AnalysisError> {
    if !(u_left > 0.0 && latent > 0.0) {
        return Err(AnalysisError::BadStefanData);
    }
    let target = u_left / (latent * PI.sqrt());
    let f = |l: f64| l * (l * l).exp() * libm::erf(l) - target;
    let mut hi = 1.0;
    while f(hi) < 0.0 {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid
        } else {
            hi = mid
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `sqrt(int_0^T N^{-1} sum_x [(u - w_+)^2 + (v^m - m w_-)^2] dt)` with the
/// oracle interpolated onto the lattice sites.
pub fn oracle_l2_distance(traj: &Trajectory, oracle: &EnthalpyTrajectory) -> Result<f64, AnalysisError> {
    if traj.geom.dim() != 1 {
        return Err(AnalysisError::NotOneDimensional(traj.geom.dim()));
    }
    if oracle.domain != OracleDomain::Periodic {
        return Err(AnalysisError::NotPeriodic);
    }
    if traj.times.len() != oracle.times.len()
        || traj.times.iter().zip(&oracle.times).any(|(a, b)| (a - b).abs() > 1e-12)
    {
        return Err(AnalysisError::CheckpointMismatch);
    }
    let n = traj.geom.side();
    let m = oracle.m;
    let per_time: Vec<f64> = (0..traj.times.len())
        .map(|i| {
            (0..n)
                .map(|x| {
                    let w = oracle.sample(i, x as f64 / n as f64);
                    let du = traj.u[i][x] - w.max(0.0);
                    let dv = traj.v[i][x].powf(m) - m * (-w).max(0.0);
                    du * du + dv * dv
                })
                .sum::<f64>()
                / n as f64
        })
        .collect();
    Ok(trapezoid(&traj.times, &per_time).sqrt())
}

/// `u(t, theta)` of the continuum heat equation on the unit torus, by
/// Fourier series of `u0` (trapezoidal coefficients on 4096 nodes, modes
/// truncated once their decay factor drops below 1e-18).
pub fn spectral_heat_1d(u0: &dyn Fn(f64) -> f64, t: f64, thetas: &[f64]) -> Vec<f64> {
    const Q: usize = 4096;
    let samples: Vec<f64> = (0..Q).map(|j| u0(j as f64 / Q as f64)).collect();
    let mut modes = Vec::new();
    for k in 0..Q / 2 {
        let decay = (-4.0 * PI * PI * (k * k) as f64 * t).exp();
        if k > 0 && decay < 1e-18 {
            break;
        }
        let (mut re, mut im) = (0.0, 0.0);
        for (j, &s) in samples.iter().enumerate() {
            let a = 2.0 * PI * ((k * j) % Q) as f64 / Q as f64;
            re += s * a.cos();
            im -= s * a.sin();
        }
        modes.push((re / Q as f64 * decay, im / Q as f64 * decay));
    }
    thetas
        .iter()
        .map(|&th| {
            modes
                .iter()
                .enumerate()
                .map(|(k, &(re, im))| {
                    let a = 2.0 * PI * k as f64 * th;
                    let z = re * a.cos() - im * a.sin();
                    if k == 0 {
                        z
                    } else {
                        2.0 * z
                    }
                })
                .sum()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Mode {
    Cos(u32),
    Sin(u32),
}

impl Mode {
    fn eval(self, theta: f64) -> (f64, f64) {
        let (k, s) = match self {
            Mode::Cos(k) | Mode::Sin(k) => (2.0 * PI * k as f64, 2.0 * PI * k as f64 * theta),
        };
        match self {
            Mode::Cos(_) => (s.cos(), -k * s.sin()),
            Mode::Sin(_) => (s.sin(), k * s.cos()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Cutoff {
    /// `(1 - t/T)^2`: vanishes at `T` only.
    Terminal,
    /// `sin^2(pi t/T)`: vanishes at both ends.
    Bump,
}

impl Cutoff {
    fn eval(self, t: f64, horizon: f64) -> (f64, f64) {
        match self {
            Cutoff::Terminal => {
                let s = 1.0 - t / horizon;
                (s * s, -2.0 * s / horizon)
            }
            Cutoff::Bump => {
                let a = PI * t / horizon;
                (a.sin().powi(2), PI / horizon * (2.0 * a).sin())
            }
        }
    }
}

/// `chi(t) sum_j c_j psi_j(theta)` with trigonometric `psi_j`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestFunction {
    pub cutoff: Cutoff,
    pub horizon: f64,
    pub terms: Vec<(f64, Mode)>,
}

impl TestFunction {
    pub fn zero(cutoff: Cutoff, horizon: f64) -> Self {
        TestFunction { cutoff, horizon, terms: Vec::new() }
    }

    pub fn mode(cutoff: Cutoff, horizon: f64, mode: Mode) -> Self {
        TestFunction { cutoff, horizon, terms: vec![(1.0, mode)] }
    }

    /// `a self + b other`; both must share the cutoff and horizon.
    pub fn combine(&self, a: f64, other: &TestFunction, b: f64) -> TestFunction {
        assert!(self.cutoff == other.cutoff && self.horizon == other.horizon);
        let mut terms: Vec<_> = self.terms.iter().map(|&(c, m)| (a * c, m)).collect();
        terms.extend(other.terms.iter().map(|&(c, m)| (b * c, m)));
        TestFunction { terms, ..self.clone() }
    }

    fn space(&self, theta: f64) -> (f64, f64) {
        self.terms.iter().fold((0.0, 0.0), |(p, q), &(c, m)| {
            let (a, b) = m.eval(theta);
            (p + c * a, q + c * b)
        })
    }

    pub fn value(&self, t: f64, theta: f64) -> f64 {
        self.cutoff.eval(t, self.horizon).0 * self.space(theta).0
    }

    pub fn dt(&self, t: f64, theta: f64) -> f64 {
        self.cutoff.eval(t, self.horizon).1 * self.space(theta).0
    }

    pub fn dtheta(&self, t: f64, theta: f64) -> f64 {
        self.cutoff.eval(t, self.horizon).0 * self.space(theta).1
    }
}

/// The first `count` of `1, cos 2pi x, sin 2pi x, cos 4pi x, ...` times the
/// cutoff.
pub fn trig_test_set(count: usize, cutoff: Cutoff, horizon: f64) -> Vec<TestFunction> {
    (0..count)
        .map(|i| {
            let mode = if i == 0 {
                Mode::Cos(0)
            } else if i % 2 == 1 {
                Mode::Cos(i.div_ceil(2) as u32)
            } else {
                Mode::Sin((i / 2) as u32)
            };
            TestFunction::mode(cutoff, horizon, mode)
        })
        .collect()
}

/// Space-time data on the periodic grid `x/n`, one row per checkpoint.
#[derive(Debug, Clone, Copy)]
pub struct SpaceTime<'a> {
    pub times: &'a [f64],
    pub u: &'a [Vec<f64>],
    pub v: &'a [Vec<f64>],
}

impl<'a> SpaceTime<'a> {
    pub fn from_trajectory(traj: &'a Trajectory) -> Self {
        SpaceTime { times: &traj.times, u: &traj.u, v: &traj.v }
    }

    fn cells(&self) -> usize {
        self.u[0].len()
    }
}

/// Splits a periodic oracle into `(u, v) = (w_+, (m w_-)^{1/m})`.
pub fn oracle_phases(oracle: &EnthalpyTrajectory) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let m = oracle.m;
    let u = oracle.w.iter().map(|w| w.iter().map(|x| x.max(0.0)).collect()).collect();
    let v = oracle
        .w
        .iter()
        .map(|w| w.iter().map(|x| (m * (-x).max(0.0)).powf(1.0 / m)).collect())
        .collect();
    (u, v)
}

/// Generic weak-form quadrature: `-int F(0) phi(0) + int int (-F phi_t +
/// G . grad phi + Z phi)`, where `F` is per site, and `G`, `Z` per bond
/// `(x, x+1)` evaluated at its midpoint.
fn weak_form(
    data: &SpaceTime,
    phi: &TestFunction,
    density: impl Fn(f64, f64) -> f64,
    bond: impl Fn(f64, f64, f64) -> (f64, f64),
) -> f64 {
    let n = data.cells();
    let h = 1.0 / n as f64;
    let f0: f64 = (0..n)
        .map(|x| density(data.u[0][x], data.v[0][x]) * phi.value(data.times[0], x as f64 * h))
        .sum::<f64>()
        * h;
    let per_time: Vec<f64> = data
        .times
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let (u, v) = (&data.u[i], &data.v[i]);
            (0..n)
                .map(|x| {
                    let y = (x + 1) % n;
                    let mid = (x as f64 + 0.5) * h;
                    let (g, z) = bond(u[x], u[y], n as f64);
                    -density(u[x], v[x]) * phi.dt(t, x as f64 * h) + g * phi.dtheta(t, mid) + z * phi.value(t, mid)
                })
                .sum::<f64>()
                * h
        })
        .collect();
    -f0 + trapezoid(data.times, &per_time)
}

/// Residual of the weak one-phase Stefan formulation in enthalpy form,
/// `w = u - v^m/m`, flux `grad w_+`.
pub fn weak_residual_case2(data: &SpaceTime, m: f64, tests: &[TestFunction]) -> Vec<f64> {
    let wplus: Vec<Vec<f64>> = data
        .u
        .iter()
        .zip(data.v)
        .map(|(u, v)| u.iter().zip(v).map(|(&a, &b)| (a - b.powf(m) / m).max(0.0)).collect())
        .collect();
    tests.iter().map(|phi| weak_form_case2(data, &wplus, m, phi)).collect()
}

fn weak_form_case2(data: &SpaceTime, wplus: &[Vec<f64>], m: f64, phi: &TestFunction) -> f64 {
    let n = data.cells();
    let h = 1.0 / n as f64;
    let w = |i: usize, x: usize| data.u[i][x] - data.v[i][x].powf(m) / m;
    let initial: f64 = (0..n).map(|x| w(0, x) * phi.value(data.times[0], x as f64 * h)).sum::<f64>() * h;
    let per_time: Vec<f64> = data
        .times
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let p = &wplus[i];
            (0..n)
                .map(|x| {
                    let y = (x + 1) % n;
                    let grad = (p[y] - p[x]) * n as f64;
                    -w(i, x) * phi.dt(t, x as f64 * h) + grad * phi.dtheta(t, (x as f64 + 0.5) * h)
                })
                .sum::<f64>()
                * h
        })
        .collect();
    -initial + trapezoid(data.times, &per_time)
}

/// Residual of the immovable-interface weak form
/// `int int {-(u^m/m - v) phi_t + (2/m) u^{m/2} grad u^{m/2} . grad phi}
///  + 4(m-1)/m^2 <zeta, phi>`, with `zeta = |grad^N u^{m/2}|^2`.
/// On each bond `u^{m/2}` is averaged over the endpoints, which makes the
/// flux term exactly `grad^N (u^m/m)`.
pub fn weak_residual_case3(data: &SpaceTime, m: f64, tests: &[TestFunction]) -> Vec<f64> {
    let zeta_coeff = 4.0 * (m - 1.0) / (m * m);
    tests
        .iter()
        .map(|phi| {
            weak_form(
                data,
                phi,
                |u, v| u.powf(m) / m - v,
                |a, b, n| {
                    let (pa, pb) = (a.powf(m / 2.0), b.powf(m / 2.0));
                    let grad = (pb - pa) * n;
                    ((2.0 / m) * 0.5 * (pa + pb) * grad, zeta_coeff * grad * grad)
                },
            )
        })
        .collect()
}

pub fn max_abs(values: &[f64]) -> f64 {
    values.iter().fold(0.0, |a, &b| a.max(b.abs()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    Decreasing,
    /// Not monotone, but no larger at the end than at the start.
    NonMonotone,
    Diverging,
}

pub fn trend_verdict(values: &[f64]) -> Verdict {
    if values.windows(2).all(|w| w[1] < w[0]) {
        Verdict::Decreasing
    } else if values.last() > values.first() {
        Verdict::Diverging
    } else {
        Verdict::NonMonotone
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub n: usize,
    pub k: f64,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trend {
    pub metric: String,
    pub ns: Vec<usize>,
    pub values: Vec<f64>,
    pub verdict: Verdict,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub pass: bool,
}

impl Check {
    /// Passes when `value <= bound`.
    pub fn at_most(name: &str, value: f64, bound: f64) -> Self {
        Check { name: name.to_string(), value, bound, pass: value <= bound }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseReport {
    pub case: u8,
    pub points: Vec<SweepPoint>,
    pub trends: Vec<Trend>,
    pub checks: Vec<Check>,
    pub pass: bool,
}

impl CaseReport {
    pub fn write_json(&self, dir: &Path) -> Result<(), AnalysisError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| AnalysisError::Io(e.to_string()))?;
        fs::write(dir.join(format!("report_case{}.json", self.case)), text + "\n")?;
        Ok(())
    }
}

/// Metrics whose decrease in `N` each case's limit theorem predicts.
pub fn trend_metrics(case: u8) -> &'static [&'static str] {
    match case {
        1 => &["sup_v", "heat_error"],
        2 => &["oracle_l2", "weak_residual"],
        3 => &["front_displacement", "weak_residual"],
        _ => &[],
    }
}

/// Assembles the convergence report: one monotone-trend assertion per
/// predicted metric present in the sweep, plus any pointwise checks.
pub fn case_theorem_report(case: u8, mut points: Vec<SweepPoint>, checks: Vec<Check>) -> CaseReport {
    points.sort_by_key(|p| p.n);
    let trends: Vec<Trend> = trend_metrics(case)
        .iter()
        .filter(|name| points.iter().all(|p| p.metrics.contains_key(**name)))
        .map(|name| {
            let values: Vec<f64> = points.iter().map(|p| p.metrics[*name]).collect();
            let verdict = trend_verdict(&values);
            Trend {
                metric: name.to_string(),
                ns: points.iter().map(|p| p.n).collect(),
                values,
                verdict,
                pass: verdict == Verdict::Decreasing,
            }
        })
        .collect();
    let pass = trends.iter().all(|t| t.pass) && checks.iter().all(|c| c.pass);
    CaseReport { case, points, trends, checks, pass }
}
