//! The semi-discrete reaction-diffusion system
//!
//! ```text
//! du/dt = lap u - K c1(u, v) u v
//! dv/dt =       - K c2(u)    u v
//! ```
//!
//! on the torus, with the a-priori monitors that accompany every solve and
//! the sub/super-solution envelope used in the vanishing-interface regime.
//!
//! Time stepping is Strang splitting: a half reaction step (exponential
//! integrator with a predictor-averaged rate), a full diffusion step by the two-stage
//! strong-stability-preserving Runge-Kutta scheme (a convex combination of
//! forward Euler steps, hence order preserving under the CFL bound), then
//! another half reaction step.

use std::io::{self, Write};

use thiserror::Error;

use crate::lattice::{
    gradient_norm, heat_kernel, laplacian_field, sup_gradient, Field, LatticeError, TorusGeometry,
};
use crate::rates::{BoundRate, RateError, RatePolynomial};

const BOX_TOL: f64 = 1e-12;
const LOWER_TOL: f64 = 1e-9;
const ORDER_TOL: f64 = 1e-9;
/// Largest gradient-growth constant still deemed consistent with the bound.
pub const GRADIENT_C_MAX: f64 = 100.0;

#[derive(Debug, Error, PartialEq)]
pub enum RdError {
    #[error("K = {0} must be finite and nonnegative")]
    BadK(f64),
    #[error("time step {dt} exceeds the stability bound {bound}")]
    Unstable { dt: f64, bound: f64 },
    #[error("value {value} of {field} at site {site}, t = {t}, left [0,1]")]
    LeftBox {
        field: &'static str,
        site: usize,
        t: f64,
        value: f64,
    },
    #[error("initial profiles overlap: u0 v0 = {product} at theta = {theta:?}")]
    Overlap { product: f64, theta: Vec<f64> },
    #[error("constants must satisfy 0 < C2 < 1 and C1 > 0 (got C1 = {c1}, C2 = {c2})")]
    BadConstants { c1: f64, c2: f64 },
    #[error("checkpoint {0} outside [0, T]")]
    BadCheckpoint(f64),
    #[error("monitor breach: {0}")]
    Monitor(String),
    #[error("ordering breach at t = {t}, site {site}: {detail}")]
    Ordering { t: f64, site: usize, detail: String },
    #[error("delta1 = {0} must exceed 1/e")]
    BadDelta(f64),
    #[error("no t_* found on (0, T]: the sign condition fails at the first grid time {0}")]
    NoTStar(f64),
    #[error("trajectory has no checkpoints")]
    EmptyTrajectory,
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Rate(#[from] RateError),
}

#[derive(Debug, Clone)]
pub struct RdParams {
    pub geom: TorusGeometry,
    pub k: f64,
    pub c1: RatePolynomial,
    pub c2: RatePolynomial,
}

impl RdParams {
    pub fn new(geom: TorusGeometry, k: f64, c1: RatePolynomial, c2: RatePolynomial) -> Result<Self, RdError> {
        if !(k.is_finite() && k >= 0.0) {
            return Err(RdError::BadK(k));
        }
        c1.check_geometry(&geom)?;
        c2.check_geometry(&geom)?;
        Ok(Self { geom, k, c1, c2 })
    }

    /// `min(1/(32 d N^2), 1/(8 K))`. The diffusion part sits well below the
    /// stability bound so that `u <= P_t u0` holds to about 1e-7 at N = 64.
    pub fn default_dt(&self) -> f64 {
        let n = self.geom.side() as f64;
        let diff = 1.0 / (32.0 * self.geom.dim() as f64 * n * n);
        if self.k > 0.0 {
            diff.min(1.0 / (8.0 * self.k))
        } else {
            diff
        }
    }

    /// The diffusion CFL bound of a forward Euler step, `1/(2 d N^2)`.
    pub fn stability_bound(&self) -> f64 {
        let n = self.geom.side() as f64;
        1.0 / (2.0 * self.geom.dim() as f64 * n * n)
    }

    fn bind(&self) -> (BoundRate, BoundRate) {
        (
            self.c1.bind(&self.geom).expect("checked at construction"),
            self.c2.bind(&self.geom).expect("checked at construction"),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemiDiscreteState {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub t: f64,
}

/// Initial data together with the constants they were built with.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialData {
    pub u0: Field,
    pub v0: Field,
    /// Gradient constant: `sup |grad u0|, |grad v0| <= c0 K`.
    pub c0: f64,
    /// Floor exponent: values are at least `exp(-c1 K)`.
    pub c1: f64,
    /// Cap: values are at most `c2 < 1`.
    pub c2: f64,
    /// Sites in the support of the continuum `v0`.
    pub v_support: Vec<bool>,
}

impl InitialData {
    /// `sup_{x outside supp v0} K v0(x)`, the quantity that must vanish as
    /// `K` grows.
    pub fn outside_support_mass(&self, k: f64) -> f64 {
        self.v0
            .values
            .iter()
            .zip(&self.v_support)
            .filter(|(_, &s)| !s)
            .map(|(&v, _)| k * v)
            .fold(0.0, f64::max)
    }
}

/// Samples continuum profiles, clamps them into `[exp(-c1 K), c2]`, and in
/// one dimension replaces the values within distance `1/(2K)` of every
/// support boundary by linear interpolation between the sampled values
/// just outside that window.
pub fn build_initial(
    geom: &TorusGeometry,
    k: f64,
    u0: impl Fn(&[f64]) -> f64,
    v0: impl Fn(&[f64]) -> f64,
    c1: f64,
    c2: f64,
) -> Result<InitialData, RdError> {
    if !(c1 > 0.0 && c2 > 0.0 && c2 < 1.0) {
        return Err(RdError::BadConstants { c1, c2 });
    }
    if !(k.is_finite() && k > 0.0) {
        return Err(RdError::BadK(k));
    }
    let floor = (-c1 * k).exp();
    let clamp = |x: f64| x.clamp(floor, c2);
    let s = geom.sites();
    let mut u = Vec::with_capacity(s);
    let mut v = Vec::with_capacity(s);
    let mut v_support = Vec::with_capacity(s);
    for x in 0..s {
        let th = geom.position(x);
        let (a, b) = (u0(&th), v0(&th));
        if a * b > 1e-12 {
            return Err(RdError::Overlap {
                product: a * b,
                theta: th,
            });
        }
        u.push(clamp(a));
        v.push(clamp(b));
        v_support.push(b > 0.0);
    }
    if geom.dim() == 1 {
        let radius = 1.0 / (2.0 * k);
        let n = geom.side();
        let mut points = support_boundaries(&u0, n);
        points.extend(support_boundaries(&v0, n));
        points.sort_by(f64::total_cmp);
        for (target, profile) in [(&mut u, &u0 as &dyn Fn(&[f64]) -> f64), (&mut v, &v0)] {
            for &p in &points {
                ramp(target, n, p, radius, |th| clamp(profile(&[th.rem_euclid(1.0)])));
            }
        }
    }
    let c0 = {
        let g = sup_gradient(geom, &u).max(sup_gradient(geom, &v));
        (2.0 * c2).max(g / k)
    };
    Ok(InitialData {
        u0: Field::at_time(u, 0.0),
        v0: Field::at_time(v, 0.0),
        c0,
        c1,
        c2,
        v_support,
    })
}

/// Points of `[0,1)` where `profile` jumps between zero and a positive
/// value, located on a grid 64 times finer than the lattice and refined by
/// bisection. Boundaries where the profile vanishes continuously are not
/// returned.
fn support_boundaries(profile: &impl Fn(&[f64]) -> f64, n: usize) -> Vec<f64> {
    let m = 64 * n;
    let pos = |th: f64| profile(&[th.rem_euclid(1.0)]) > 0.0;
    let mut out = Vec::new();
    for i in 0..m {
        let (a, b) = (i as f64 / m as f64, (i + 1) as f64 / m as f64);
        if pos(a) != pos(b) {
            let (mut lo, mut hi) = (a, b);
            let left = pos(lo);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if pos(mid) == left {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let p = 0.5 * (lo + hi);
            let jump = (profile(&[(p + 1e-9).rem_euclid(1.0)]) - profile(&[(p - 1e-9).rem_euclid(1.0)])).abs();
            if jump > 1e-6 {
                out.push(p.rem_euclid(1.0));
            }
        }
    }
    out
}

fn ramp(values: &mut [f64], n: usize, center: f64, radius: f64, profile: impl Fn(f64) -> f64) {
    let (a, b) = (center - radius, center + radius);
    let (va, vb) = (profile(a), profile(b));
    let lo = (a * n as f64).ceil() as i64;
    let hi = (b * n as f64).floor() as i64;
    for j in lo..=hi {
        let th = j as f64 / n as f64;
        let w = (th - a) / (b - a);
        values[j.rem_euclid(n as i64) as usize] = va + w * (vb - va);
    }
}

/// Reaction sub-step over `h`. Each species decays by an exponential factor
/// whose rate is the trapezoidal average of the frozen-coefficient rates at
/// the incoming state and at a frozen-coefficient predictor. Factors never
/// exceed 1, so the step preserves `[0,1]`; the averaging makes it second
/// order, as Strang splitting requires.
fn react(k: f64, c1: &BoundRate, c2: &BoundRate, u: &mut [f64], v: &mut [f64], h: f64, scratch: &mut Vec<(f64, f64)>) {
    if k == 0.0 {
        return;
    }
    let n = u.len();
    scratch.clear();
    for x in 0..n {
        scratch.push((k * c1.eval_field(u, v, x) * v[x], k * c2.eval_field(u, v, x) * u[x]));
    }
    let pu: Vec<f64> = (0..n).map(|x| u[x] * (-scratch[x].0 * h).exp()).collect();
    let pv: Vec<f64> = (0..n).map(|x| v[x] * (-scratch[x].1 * h).exp()).collect();
    for x in 0..n {
        let ru = 0.5 * (scratch[x].0 + k * c1.eval_field(&pu, &pv, x) * pv[x]);
        let rv = 0.5 * (scratch[x].1 + k * c2.eval_field(&pu, &pv, x) * pu[x]);
        u[x] *= (-ru * h).exp();
        v[x] *= (-rv * h).exp();
    }
}

/// SSP-RK2 step of `du/dt = lap u`.
fn diffuse(geom: &TorusGeometry, u: &mut [f64], h: f64) {
    let l = laplacian_field(geom, u);
    let stage: Vec<f64> = u.iter().zip(&l).map(|(a, b)| a + h * b).collect();
    let l2 = laplacian_field(geom, &stage);
    for x in 0..u.len() {
        u[x] = 0.5 * u[x] + 0.5 * (stage[x] + h * l2[x]);
    }
}

/// One Strang step of length `dt`.
pub fn rd_step(state: &SemiDiscreteState, dt: f64, params: &RdParams) -> Result<SemiDiscreteState, RdError> {
    let (c1, c2) = params.bind();
    let mut next = state.clone();
    let mut scratch = Vec::with_capacity(state.u.len());
    strang(params, &c1, &c2, &mut next, dt, &mut scratch)?;
    Ok(next)
}

fn strang(
    params: &RdParams,
    c1: &BoundRate,
    c2: &BoundRate,
    s: &mut SemiDiscreteState,
    dt: f64,
    scratch: &mut Vec<(f64, f64)>,
) -> Result<(), RdError> {
    let bound = params.stability_bound();
    if dt > bound * (1.0 + 1e-12) {
        return Err(RdError::Unstable { dt, bound });
    }
    react(params.k, c1, c2, &mut s.u, &mut s.v, 0.5 * dt, scratch);
    diffuse(&params.geom, &mut s.u, dt);
    react(params.k, c1, c2, &mut s.u, &mut s.v, 0.5 * dt, scratch);
    s.t += dt;
    for (field, vals) in [("u", &mut s.u), ("v", &mut s.v)] {
        for (site, x) in vals.iter_mut().enumerate() {
            if !(*x >= -BOX_TOL && *x <= 1.0 + BOX_TOL) {
                return Err(RdError::LeftBox {
                    field,
                    site,
                    t: s.t,
                    value: *x,
                });
            }
            *x = x.clamp(0.0, 1.0);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    /// Step size; defaults to [`RdParams::default_dt`].
    pub dt: Option<f64>,
    /// Abort with [`RdError::Monitor`] when any monitor is breached.
    pub strict: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { dt: None, strict: true }
    }
}

/// Outcome of the a-priori monitors on one run.
#[derive(Debug, Clone, PartialEq, Default, serde::Serialize)]
pub struct MonitorReport {
    /// Largest excursion of `u`, `v` outside `[0,1]` before clamping.
    pub box_excursion: f64,
    /// Smallest `u - delta1 exp(-K M1 t)` over checkpoints (likewise `v`).
    pub lower_margin_u: f64,
    pub lower_margin_v: f64,
    pub energy: f64,
    pub reaction: f64,
    /// Largest sitewise increase of `v` between steps.
    pub v_increase: f64,
    pub breaches: Vec<String>,
}

impl MonitorReport {
    pub fn passed(&self) -> bool {
        self.breaches.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub geom: TorusGeometry,
    pub k: f64,
    pub dt: f64,
    pub steps: u64,
    pub times: Vec<f64>,
    pub u: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub monitors: MonitorReport,
}

impl Trajectory {
    pub fn state(&self, i: usize) -> SemiDiscreteState {
        SemiDiscreteState {
            u: self.u[i].clone(),
            v: self.v[i].clone(),
            t: self.times[i],
        }
    }

    pub fn last(&self) -> SemiDiscreteState {
        self.state(self.times.len() - 1)
    }

    pub fn index_of(&self, t: f64) -> Option<usize> {
        self.times.iter().position(|&s| (s - t).abs() <= 1e-12 * t.abs().max(1.0))
    }
}

fn dirichlet_sum(geom: &TorusGeometry, u: &[f64]) -> f64 {
    let s = geom.sites();
    (0..s).map(|x| gradient_norm(geom, u, x).powi(2)).sum::<f64>() / s as f64
}

fn reaction_rate(k: f64, c1: &BoundRate, u: &[f64], v: &[f64]) -> f64 {
    let s = u.len();
    k * (0..s).map(|x| c1.eval_field(u, v, x) * u[x] * v[x]).sum::<f64>() / s as f64
}

/// Integrates to `horizon`, storing states at `checkpoints` (the initial
/// time is always stored first). The energy and reaction integrals are
/// accumulated with the trapezoidal rule over every step.
pub fn solve(
    init: &InitialData,
    params: &RdParams,
    horizon: f64,
    checkpoints: &[f64],
    options: SolveOptions,
) -> Result<Trajectory, RdError> {
    solve_fields(&init.u0.values, &init.v0.values, params, horizon, checkpoints, options)
}

pub fn solve_fields(
    u0: &[f64],
    v0: &[f64],
    params: &RdParams,
    horizon: f64,
    checkpoints: &[f64],
    options: SolveOptions,
) -> Result<Trajectory, RdError> {
    params.geom.check_len(u0.len())?;
    params.geom.check_len(v0.len())?;
    let mut marks: Vec<f64> = checkpoints.to_vec();
    if let Some(&t) = marks.iter().find(|&&t| !(0.0..=horizon).contains(&t)) {
        return Err(RdError::BadCheckpoint(t));
    }
    marks.push(0.0);
    marks.sort_by(f64::total_cmp);
    marks.dedup_by(|a, b| (*a - *b).abs() <= 1e-14);
    let dt = options.dt.unwrap_or_else(|| params.default_dt());
    let bound = params.stability_bound();
    if dt > bound {
        return Err(RdError::Unstable { dt, bound });
    }
    let (c1, c2) = params.bind();
    let geom = params.geom;
    let (m1, m2) = (params.c1.sup_rate(), params.c2.sup_rate());
    let delta1 = u0.iter().copied().fold(f64::INFINITY, f64::min);
    let delta2 = v0.iter().copied().fold(f64::INFINITY, f64::min);

    let mut state = SemiDiscreteState {
        u: u0.to_vec(),
        v: v0.to_vec(),
        t: 0.0,
    };
    let mut traj = Trajectory {
        geom,
        k: params.k,
        dt,
        steps: 0,
        times: Vec::with_capacity(marks.len()),
        u: Vec::with_capacity(marks.len()),
        v: Vec::with_capacity(marks.len()),
        monitors: MonitorReport {
            lower_margin_u: f64::INFINITY,
            lower_margin_v: f64::INFINITY,
            ..Default::default()
        },
    };
    let mut scratch = Vec::with_capacity(u0.len());
    let mut energy_prev = dirichlet_sum(&geom, &state.u);
    let mut reaction_prev = reaction_rate(params.k, &c1, &state.u, &state.v);
    let mut energy = 0.0;
    let mut reaction = 0.0;
    let record = |traj: &mut Trajectory, s: &SemiDiscreteState| {
        let lu = delta1 * (-params.k * m1 * s.t).exp();
        let lv = delta2 * (-params.k * m2 * s.t).exp();
        let mu = s.u.iter().map(|x| x - lu).fold(f64::INFINITY, f64::min);
        let mv = s.v.iter().map(|x| x - lv).fold(f64::INFINITY, f64::min);
        traj.monitors.lower_margin_u = traj.monitors.lower_margin_u.min(mu);
        traj.monitors.lower_margin_v = traj.monitors.lower_margin_v.min(mv);
        traj.times.push(s.t);
        traj.u.push(s.u.clone());
        traj.v.push(s.v.clone());
    };
    let mut next_mark = 0;
    while next_mark < marks.len() && marks[next_mark] <= 0.0 {
        record(&mut traj, &state);
        next_mark += 1;
    }
    let mut v_prev = state.v.clone();
    while next_mark < marks.len() {
        let target = marks[next_mark];
        let remaining = target - state.t;
        // Land exactly on checkpoints; merge a tiny final step into the last one.
        let h = if remaining <= dt * (1.0 + 1e-9) { remaining } else { dt };
        if h > 0.0 {
            strang(params, &c1, &c2, &mut state, h, &mut scratch)?;
            traj.steps += 1;
            let e = dirichlet_sum(&geom, &state.u);
            let r = reaction_rate(params.k, &c1, &state.u, &state.v);
            energy += 0.5 * h * (e + energy_prev);
            reaction += 0.5 * h * (r + reaction_prev);
            energy_prev = e;
            reaction_prev = r;
            for (a, b) in state.v.iter().zip(&v_prev) {
                traj.monitors.v_increase = traj.monitors.v_increase.max(a - b);
            }
            v_prev.copy_from_slice(&state.v);
        }
        if h == remaining {
            state.t = target;
            record(&mut traj, &state);
            next_mark += 1;
        }
    }
    let m = &mut traj.monitors;
    m.energy = energy;
    m.reaction = reaction;
    if m.lower_margin_u < -LOWER_TOL {
        m.breaches.push(format!("u fell below delta1 exp(-K M1 t) by {}", -m.lower_margin_u));
    }
    if m.lower_margin_v < -LOWER_TOL {
        m.breaches.push(format!("v fell below delta2 exp(-K M2 t) by {}", -m.lower_margin_v));
    }
    if energy > 0.5 + 1e-6 {
        m.breaches.push(format!("energy functional {energy} exceeds 1/2"));
    }
    if reaction > 1.0 + 1e-6 {
        m.breaches.push(format!("reaction integral {reaction} exceeds 1"));
    }
    if m.v_increase > 0.0 {
        m.breaches.push(format!("v increased by {}", m.v_increase));
    }
    if options.strict && !m.breaches.is_empty() {
        return Err(RdError::Monitor(m.breaches.join("; ")));
    }
    Ok(traj)
}

/// `int_0^T N^{-d} sum_x |grad u|^2 dt`, trapezoidal over solver steps.
pub fn energy_functional(traj: &Trajectory) -> f64 {
    traj.monitors.energy
}

/// `K int_0^T N^{-d} sum_x c1 u v dt`, trapezoidal over solver steps.
pub fn reaction_integral(traj: &Trajectory) -> f64 {
    traj.monitors.reaction
}

/// Trapezoidal energy over the stored checkpoints only.
pub fn energy_from_checkpoints(traj: &Trajectory) -> f64 {
    let e: Vec<f64> = traj.u.iter().map(|u| dirichlet_sum(&traj.geom, u)).collect();
    trapezoid(&traj.times, &e)
}

pub fn trapezoid(t: &[f64], f: &[f64]) -> f64 {
    t.windows(2)
        .zip(f.windows(2))
        .map(|(t, f)| 0.5 * (t[1] - t[0]) * (f[0] + f[1]))
        .sum()
}

/// `v0(x) exp(-K int_0^t c2(u) u dtau)` re-integrated from the checkpoints
/// by the trapezoidal rule, at the last checkpoint.
pub fn reintegrate_v(traj: &Trajectory, params: &RdParams) -> Vec<f64> {
    let (_, c2) = params.bind();
    let s = traj.geom.sites();
    let rates: Vec<Vec<f64>> = traj
        .u
        .iter()
        .zip(&traj.v)
        .map(|(u, v)| (0..s).map(|x| c2.eval_field(u, v, x) * u[x]).collect())
        .collect();
    (0..s)
        .map(|x| {
            let f: Vec<f64> = rates.iter().map(|r| r[x]).collect();
            traj.v[0][x] * (-params.k * trapezoid(&traj.times, &f)).exp()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct GradientReport {
    pub c0: f64,
    pub times: Vec<f64>,
    pub sup_gradient: Vec<f64>,
    /// Smallest `C >= 0` with `sup |grad u(t)| <= K (c0 + C sqrt t)` at
    /// every checkpoint.
    pub fitted_c: f64,
    /// Set when even `C = GRADIENT_C_MAX` does not suffice.
    pub flagged: bool,
}

pub fn gradient_monitor(traj: &Trajectory, c0: f64) -> GradientReport {
    let k = traj.k.max(f64::MIN_POSITIVE);
    let sup: Vec<f64> = traj.u.iter().map(|u| sup_gradient(&traj.geom, u)).collect();
    let mut c: f64 = 0.0;
    let mut violated_at_zero = false;
    for (&t, &g) in traj.times.iter().zip(&sup) {
        let excess = g / k - c0;
        if t > 0.0 {
            c = c.max(excess / t.sqrt());
        } else if excess > 1e-12 {
            violated_at_zero = true;
        }
    }
    GradientReport {
        c0,
        times: traj.times.clone(),
        sup_gradient: sup,
        fitted_c: c,
        flagged: violated_at_zero || c > GRADIENT_C_MAX,
    }
}

/// `sup_x |grad (u^alpha) - alpha u^(alpha-1) grad u|`.
pub fn chain_rule_defect(geom: &TorusGeometry, u: &[f64], alpha: f64) -> f64 {
    let n = geom.side() as f64;
    let pow: Vec<f64> = u.iter().map(|x| x.powf(alpha)).collect();
    let mut worst: f64 = 0.0;
    for x in 0..geom.sites() {
        for axis in 0..geom.dim() {
            let y = geom.neighbor(x, axis, true);
            let lhs = n * (pow[y] - pow[x]);
            let rhs = alpha * u[x].powf(alpha - 1.0) * n * (u[y] - u[x]);
            worst = worst.max((lhs - rhs).abs());
        }
    }
    worst
}

/// Asserts `sub <= sol <= sup` sitewise at every stored time, within 1e-9.
pub fn comparison_check(
    times: &[f64],
    sub: &[Vec<f64>],
    sol: &[Vec<f64>],
    sup: &[Vec<f64>],
) -> Result<(), RdError> {
    for (i, &t) in times.iter().enumerate() {
        for x in 0..sol[i].len() {
            if sub[i][x] > sol[i][x] + ORDER_TOL {
                return Err(RdError::Ordering {
                    t,
                    site: x,
                    detail: format!("sub {} > solution {}", sub[i][x], sol[i][x]),
                });
            }
            if sol[i][x] > sup[i][x] + ORDER_TOL {
                return Err(RdError::Ordering {
                    t,
                    site: x,
                    detail: format!("solution {} > super {}", sol[i][x], sup[i][x]),
                });
            }
        }
    }
    Ok(())
}

/// `exp(-delta t) e^{t lap} u0`, exact through the spectral heat kernel.
pub fn case1_subsolution(geom: &TorusGeometry, delta: f64, u0: &[f64], t: f64) -> Result<Vec<f64>, RdError> {
    let p = heat_kernel(geom, t)?;
    let damp = (-delta * t).exp();
    Ok(p.apply(u0).into_iter().map(|x| damp * x).collect())
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Envelope {
    pub delta1: f64,
    pub delta2: f64,
    pub t_star: f64,
    pub t_k: f64,
    /// Set when `gamma(T) < K^{-1/4}`, so `t_K` was clamped to `T`.
    pub t_k_clamped: bool,
    pub times: Vec<f64>,
    pub lower: Vec<Vec<f64>>,
    pub upper: Vec<Vec<f64>>,
}

impl Envelope {
    pub fn width_bound(&self, horizon: f64) -> f64 {
        2.0 * self.delta1 * self.t_k + horizon * self.delta2
    }

    pub fn max_width(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .flat_map(|(l, u)| l.iter().zip(u).map(|(a, b)| b - a))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Sub- and super-solutions for the vanishing-interface regime: the upper
/// envelope is the discrete heat flow of `u0`; the lower one is
/// `u_{delta1}` up to `t_K` and `u_{delta2}` restarted from there, with
/// `delta2 = c_delta2 / sqrt K`.
#[allow(clippy::too_many_arguments)]
pub fn case1_envelope(
    geom: &TorusGeometry,
    k: f64,
    m: u32,
    u0: &[f64],
    v_support: &[bool],
    delta1: f64,
    c_delta2: f64,
    horizon: f64,
    times: &[f64],
) -> Result<Envelope, RdError> {
    if !(delta1 > (-1.0f64).exp()) {
        return Err(RdError::BadDelta(delta1));
    }
    let grid = 1000;
    let dts = horizon / grid as f64;
    let mf = m as f64;
    // t_*: last grid time before the sign condition first fails on supp v0.
    let mut t_star = None;
    for i in 1..=grid {
        let t = i as f64 * dts;
        let ud = case1_subsolution(geom, delta1, u0, t)?;
        let lap = laplacian_field(geom, &ud);
        let ok = (0..geom.sites()).filter(|&x| v_support[x]).all(|x| {
            let dtu = lap[x] - delta1 * ud[x];
            ((mf - 1.0) * ud[x].powf(mf - 3.0) * dtu - 1.0) * ud[x] <= 0.0
        });
        if !ok {
            break;
        }
        t_star = Some(t);
    }
    let t_star = t_star.ok_or(RdError::NoTStar(dts))?;

    // gamma(t) = int_0^t min_x u_{delta1}: increasing, so bisect on a fine
    // trapezoidal table.
    let target = k.powf(-0.25);
    let mins: Vec<f64> = (0..=grid)
        .map(|i| {
            let ud = case1_subsolution(geom, delta1, u0, i as f64 * dts)?;
            Ok(ud.into_iter().fold(f64::INFINITY, f64::min))
        })
        .collect::<Result<_, RdError>>()?;
    let mut gamma = vec![0.0; grid + 1];
    for i in 1..=grid {
        gamma[i] = gamma[i - 1] + 0.5 * dts * (mins[i] + mins[i - 1]);
    }
    let (t_k, t_k_clamped) = if gamma[grid] < target {
        (horizon, true)
    } else {
        let i = gamma.partition_point(|&g| g < target);
        let (g0, g1) = (gamma[i - 1], gamma[i]);
        ((i - 1) as f64 * dts + dts * (target - g0) / (g1 - g0), false)
    };
    let delta2 = c_delta2 / k.sqrt();
    let at_tk = case1_subsolution(geom, delta1, u0, t_k)?;
    let mut lower = Vec::with_capacity(times.len());
    let mut upper = Vec::with_capacity(times.len());
    for &t in times {
        upper.push(case1_subsolution(geom, 0.0, u0, t)?);
        lower.push(if t <= t_k {
            case1_subsolution(geom, delta1, u0, t)?
        } else {
            case1_subsolution(geom, delta2, &at_tk, t - t_k)?
        });
    }
    Ok(Envelope {
        delta1,
        delta2,
        t_star,
        t_k,
        t_k_clamped,
        times: times.to_vec(),
        lower,
        upper,
    })
}

/// Checkpoint dump with columns `site,u,v`.
pub fn write_state_csv<W: Write>(state: &SemiDiscreteState, mut out: W) -> io::Result<()> {
    writeln!(out, "# t={}", state.t)?;
    writeln!(out, "site,u,v")?;
    for (x, (a, b)) in state.u.iter().zip(&state.v).enumerate() {
        writeln!(out, "{x},{a},{b}")?;
    }
    Ok(())
}
