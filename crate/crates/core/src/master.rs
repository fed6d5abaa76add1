//! Exact forward evolution on tiny tori, relative entropy against product
//! Bernoulli laws, the Kawasaki Dirichlet energy and the Yau integrand.
//!
//! A state is encoded as `eta1 bits | eta2 bits << n` with `n = N^d <= 8`
//! (see [`Configuration::state_index`]). The law is evolved by
//! uniformization: with `Lambda` the largest exit rate, `P = I + Q / Lambda`
//! is stochastic and `mu(t) = sum_k Poisson(Lambda t; k) mu P^k`. Every term
//! is a nonnegative vector, so positivity and mass are preserved up to the
//! truncation of the Poisson tail.

use std::io::{self, Write};

use thiserror::Error;

use crate::kmc::SimParams;
use crate::lattice::{Configuration, Field, TorusGeometry};

pub const MAX_SITES: usize = 8;
const POISSON_TAIL: f64 = 1e-13;
/// Largest `Lambda * dt` per uniformization chunk.
const CHUNK: f64 = 32.0;

#[derive(Debug, Error, PartialEq)]
pub enum MasterError {
    #[error("torus has {0} sites; exact enumeration supports at most {MAX_SITES}")]
    TooLarge(usize),
    #[error("negative time {0}")]
    NegativeTime(f64),
    #[error("distribution has {got} entries, expected {expected}")]
    SizeMismatch { expected: usize, got: usize },
    #[error("reference means must lie strictly inside (0,1); got {value} at site {site}")]
    NotFullSupport { site: usize, value: f64 },
    #[error("requested time {t} is outside the reference trajectory [{start}, {end}]")]
    OutsideTrajectory { t: f64, start: f64, end: f64 },
    #[error("reference trajectory needs at least one checkpoint with N^d values per field")]
    BadTrajectory,
    #[error("Poisson series did not converge (Lambda t = {0})")]
    Uniformization(f64),
}

/// Probability vector over all `4^(N^d)` configurations.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    sites: usize,
    probs: Vec<f64>,
}

impl Distribution {
    pub fn new(sites: usize, probs: Vec<f64>) -> Result<Self, MasterError> {
        if sites > MAX_SITES {
            return Err(MasterError::TooLarge(sites));
        }
        let expected = 1usize << (2 * sites);
        if probs.len() != expected {
            return Err(MasterError::SizeMismatch {
                expected,
                got: probs.len(),
            });
        }
        Ok(Self { sites, probs })
    }

    pub fn point_mass(sites: usize, state: usize) -> Result<Self, MasterError> {
        let mut probs = vec![0.0; 1 << (2 * sites)];
        probs[state] = 1.0;
        Self::new(sites, probs)
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn total_variation(&self, other: &Self) -> f64 {
        0.5 * self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }

    fn normalize(&mut self) {
        let s = self.total();
        self.probs.iter_mut().for_each(|p| *p /= s);
    }
}

/// Product Bernoulli law with per-site means `u` (type 1) and `v` (type 2).
#[derive(Debug, Clone, PartialEq)]
pub struct ProductBernoulli {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl ProductBernoulli {
    pub fn new(u: Vec<f64>, v: Vec<f64>) -> Result<Self, MasterError> {
        if u.len() != v.len() {
            return Err(MasterError::SizeMismatch {
                expected: u.len(),
                got: v.len(),
            });
        }
        if u.len() > MAX_SITES {
            return Err(MasterError::TooLarge(u.len()));
        }
        Ok(Self { u, v })
    }

    pub fn from_fields(u: &Field, v: &Field) -> Result<Self, MasterError> {
        Self::new(u.values.clone(), v.values.clone())
    }

    pub fn sites(&self) -> usize {
        self.u.len()
    }

    /// Fails unless every mean lies in the open interval `(0,1)`.
    pub fn check_full_support(&self) -> Result<(), MasterError> {
        for f in [&self.u, &self.v] {
            if let Some((site, &value)) = f.iter().enumerate().find(|(_, v)| !(**v > 0.0 && **v < 1.0)) {
                return Err(MasterError::NotFullSupport { site, value });
            }
        }
        Ok(())
    }

    pub fn log_prob(&self, state: usize) -> f64 {
        let n = self.sites();
        let mut s = 0.0;
        for x in 0..n {
            s += bern_log(self.u[x], state >> x & 1 == 1);
            s += bern_log(self.v[x], state >> (n + x) & 1 == 1);
        }
        s
    }

    pub fn prob(&self, state: usize) -> f64 {
        self.log_prob(state).exp()
    }

    pub fn distribution(&self) -> Distribution {
        let n = self.sites();
        let probs = (0..1usize << (2 * n)).map(|s| self.prob(s)).collect();
        Distribution { sites: n, probs }
    }
}

fn bern_log(p: f64, occupied: bool) -> f64 {
    if occupied {
        p.ln()
    } else {
        (1.0 - p).ln()
    }
}

/// Sparse generator in CSR form. Off-diagonal entries are stored per row in
/// target order; the diagonal holds minus their sum accumulated in that
/// same order, so every row sums to zero exactly.
#[derive(Debug, Clone)]
pub struct Generator {
    sites: usize,
    row_start: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    diag: Vec<f64>,
}

impl Generator {
    pub fn states(&self) -> usize {
        self.diag.len()
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    /// Off-diagonal entries of a row.
    pub fn row(&self, state: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_start[state]..self.row_start[state + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn diagonal(&self, state: usize) -> f64 {
        self.diag[state]
    }

    pub fn entry(&self, from: usize, to: usize) -> f64 {
        if from == to {
            return self.diag[from];
        }
        self.row(from).find(|&(c, _)| c == to).map_or(0.0, |(_, v)| v)
    }

    pub fn max_exit_rate(&self) -> f64 {
        self.diag.iter().map(|d| -d).fold(0.0, f64::max)
    }

    /// `(mu Q)(eta) = sum_xi mu(xi) q(xi, eta)`.
    pub fn apply_adjoint(&self, mu: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = mu.iter().zip(&self.diag).map(|(m, d)| m * d).collect();
        for s in 0..self.states() {
            let m = mu[s];
            if m == 0.0 {
                continue;
            }
            for (c, v) in self.row(s) {
                out[c] += m * v;
            }
        }
        out
    }
}

/// Assembles `L_N = N^2 L_K + K L_G` on the full state space.
pub fn generator_matrix(params: &SimParams) -> Result<Generator, MasterError> {
    let geom = params.geom;
    let n = geom.sites();
    if n > MAX_SITES {
        return Err(MasterError::TooLarge(n));
    }
    let c1 = params.c1.bind(&geom).expect("rates checked against geometry");
    let c2 = params.c2.bind(&geom).expect("rates checked against geometry");
    let side = geom.side() as f64;
    let n2 = side * side;
    let bonds = geom.bonds();
    let states = 1usize << (2 * n);
    let mut row_start = Vec::with_capacity(states + 1);
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    let mut diag = Vec::with_capacity(states);
    let mut entries: Vec<(usize, f64)> = Vec::new();
    for s in 0..states {
        row_start.push(cols.len());
        entries.clear();
        let cfg = Configuration::from_state_index(n, s);
        // Parallel bonds (N = 2) contribute separately to the same target.
        for &(x, y) in &bonds {
            if cfg.eta1[x] != cfg.eta1[y] {
                let t = s ^ (1 << x) ^ (1 << y);
                entries.push((t, n2));
            }
        }
        if params.k > 0.0 {
            for x in 0..n {
                if cfg.eta1[x] && cfg.eta2[x] {
                    let r1 = params.k * c1.eval_config(&cfg.eta1, &cfg.eta2, x);
                    if r1 > 0.0 {
                        entries.push((s ^ (1 << x), r1));
                    }
                    let r2 = params.k * c2.eval_config(&cfg.eta1, &cfg.eta2, x);
                    if r2 > 0.0 {
                        entries.push((s ^ (1 << (n + x)), r2));
                    }
                }
            }
        }
        entries.sort_by_key(|e| e.0);
        let mut exit = 0.0;
        let mut i = 0;
        while i < entries.len() {
            let target = entries[i].0;
            let mut rate = 0.0;
            while i < entries.len() && entries[i].0 == target {
                rate += entries[i].1;
                i += 1;
            }
            cols.push(target);
            vals.push(rate);
            exit += rate;
        }
        diag.push(-exit);
    }
    row_start.push(cols.len());
    Ok(Generator {
        sites: n,
        row_start,
        cols,
        vals,
        diag,
    })
}

/// Forward evolution of a law over time `t`.
pub fn evolve_distribution(gen: &Generator, mu0: &Distribution, t: f64) -> Result<Distribution, MasterError> {
    if !(t >= 0.0) {
        return Err(MasterError::NegativeTime(t));
    }
    if mu0.probs.len() != gen.states() {
        return Err(MasterError::SizeMismatch {
            expected: gen.states(),
            got: mu0.probs.len(),
        });
    }
    let lambda = gen.max_exit_rate();
    if t == 0.0 || lambda == 0.0 {
        return Ok(mu0.clone());
    }
    let chunks = (lambda * t / CHUNK).ceil().max(1.0) as usize;
    let dt = t / chunks as f64;
    let mut mu = mu0.probs.clone();
    for _ in 0..chunks {
        mu = uniformized_step(gen, &mu, lambda, dt)?;
    }
    let mut out = Distribution {
        sites: mu0.sites,
        probs: mu,
    };
    out.normalize();
    Ok(out)
}

fn uniformized_step(gen: &Generator, mu: &[f64], lambda: f64, dt: f64) -> Result<Vec<f64>, MasterError> {
    let a = lambda * dt;
    let mut term = mu.to_vec();
    let mut log_w = -a;
    let mut acc: Vec<f64> = term.iter().map(|x| x * log_w.exp()).collect();
    let mut mass = log_w.exp();
    let max_terms = (a + 60.0 * a.sqrt() + 200.0) as usize;
    for k in 1..=max_terms {
        // term <- term P, with P = I + Q / lambda.
        let q = gen.apply_adjoint(&term);
        for (t, qv) in term.iter_mut().zip(&q) {
            *t = (*t + qv / lambda).max(0.0);
        }
        log_w += a.ln() - (k as f64).ln();
        let w = log_w.exp();
        for (o, t) in acc.iter_mut().zip(&term) {
            *o += w * t;
        }
        mass += w;
        if k as f64 > a && 1.0 - mass < POISSON_TAIL {
            return Ok(acc);
        }
    }
    Err(MasterError::Uniformization(a))
}

/// `H(mu | nu) = sum mu log(mu / nu)` with `0 log 0 = 0`.
pub fn relative_entropy(mu: &Distribution, nu: &ProductBernoulli) -> Result<f64, MasterError> {
    nu.check_full_support()?;
    if nu.sites() != mu.sites {
        return Err(MasterError::SizeMismatch {
            expected: mu.sites,
            got: nu.sites(),
        });
    }
    let h: f64 = mu
        .probs
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0)
        .map(|(s, &p)| p * (p.ln() - nu.log_prob(s)))
        .sum();
    Ok(h.max(0.0))
}

/// `D(f; nu) = 1/4 sum_{x,j} E_nu[(f(eta1^{x,x+e_j}, eta2) - f)^2]`.
pub fn dirichlet_energy(geom: &TorusGeometry, f: &[f64], nu: &ProductBernoulli) -> f64 {
    let bonds = geom.bonds();
    let mut total = 0.0;
    for s in 0..f.len() {
        let w = nu.prob(s);
        if w == 0.0 {
            continue;
        }
        for &(x, y) in &bonds {
            if (s >> x & 1) != (s >> y & 1) {
                let t = s ^ (1 << x) ^ (1 << y);
                let d = f[t] - f[s];
                total += w * d * d;
            }
        }
    }
    0.25 * total
}

/// `sqrt(d mu / d nu)` as a function of the state.
pub fn sqrt_density(mu: &Distribution, nu: &ProductBernoulli) -> Vec<f64> {
    mu.probs
        .iter()
        .enumerate()
        .map(|(s, &p)| (p / nu.prob(s)).sqrt())
        .collect()
}

/// Pairing of occupancy fluctuations with normalizations in the scaled
/// variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Pairing {
    /// `omega1 = (eta1 - u) / chi(u)`, `omega2 = (eta2 - v) / chi(v)`.
    #[default]
    Consistent,
    /// `omega1 = (eta2 - v) / chi(u)`, `omega2 = (eta1 - u) / chi(v)`.
    Crossed,
}

fn chi(r: f64) -> f64 {
    r * (1.0 - r)
}

pub fn scaled_variables(cfg: &Configuration, u: &[f64], v: &[f64], pairing: Pairing) -> (Vec<f64>, Vec<f64>) {
    let b = |x: bool| x as u8 as f64;
    let n = u.len();
    let mut w1 = Vec::with_capacity(n);
    let mut w2 = Vec::with_capacity(n);
    for x in 0..n {
        let f1 = b(cfg.eta1[x]) - u[x];
        let f2 = b(cfg.eta2[x]) - v[x];
        match pairing {
            Pairing::Consistent => {
                w1.push(f1 / chi(u[x]));
                w2.push(f2 / chi(v[x]));
            }
            Pairing::Crossed => {
                w1.push(f2 / chi(u[x]));
                w2.push(f1 / chi(v[x]));
            }
        }
    }
    (w1, w2)
}

/// `(V_K, V_G)`: the Kawasaki and Glauber parts of `L^{*,nu} 1 - d/dt log nu`
/// for the product law with means `(u, v)` evolving by the semi-discrete
/// system.
pub fn yau_integrand(
    params: &SimParams,
    cfg: &Configuration,
    u: &[f64],
    v: &[f64],
    pairing: Pairing,
) -> Result<(f64, f64), MasterError> {
    let pb = ProductBernoulli::new(u.to_vec(), v.to_vec())?;
    pb.check_full_support()?;
    let geom = params.geom;
    let c1 = params.c1.bind(&geom).expect("rates checked against geometry");
    let c2 = params.c2.bind(&geom).expect("rates checked against geometry");
    let (w1, w2) = scaled_variables(cfg, u, v, pairing);
    let n2 = (geom.side() * geom.side()) as f64;
    let vk = -n2
        * geom
            .bonds()
            .iter()
            .map(|&(x, y)| (u[y] - u[x]).powi(2) * w1[x] * w1[y])
            .sum::<f64>();
    let b = |x: bool| x as u8 as f64;
    let mut vg = 0.0;
    for x in 0..geom.sites() {
        let r1 = c1.eval_config(&cfg.eta1, &cfg.eta2, x) * b(cfg.eta2[x]) - c1.eval_field(u, v, x) * v[x];
        let r2 = c2.eval_config(&cfg.eta1, &cfg.eta2, x) * b(cfg.eta1[x]) - c2.eval_field(u, v, x) * u[x];
        vg -= params.k * (r1 * u[x] * w1[x] + r2 * v[x] * w2[x]);
    }
    Ok((vk, vg))
}

/// Reference trajectory of product means, stored at checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePath {
    pub times: Vec<f64>,
    pub u: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl ReferencePath {
    /// Means at time `t`: exact at checkpoints, otherwise cubic Lagrange
    /// interpolation through the (up to) four nearest checkpoints.
    pub fn at(&self, t: f64) -> Result<(Vec<f64>, Vec<f64>), MasterError> {
        let (start, end) = (self.times[0], *self.times.last().unwrap());
        if t < start - 1e-12 || t > end + 1e-12 {
            return Err(MasterError::OutsideTrajectory { t, start, end });
        }
        if let Some(i) = self.times.iter().position(|&s| (s - t).abs() <= 1e-12 * t.abs().max(1.0)) {
            return Ok((self.u[i].clone(), self.v[i].clone()));
        }
        let k = self.times.len();
        let right = self.times.partition_point(|&s| s < t);
        let lo = right.saturating_sub(2).min(k.saturating_sub(4));
        let hi = (lo + 4).min(k);
        let idx: Vec<usize> = (lo..hi).collect();
        let weights: Vec<f64> = idx
            .iter()
            .map(|&i| {
                idx.iter()
                    .filter(|&&j| j != i)
                    .map(|&j| (t - self.times[j]) / (self.times[i] - self.times[j]))
                    .product()
            })
            .collect();
        let mix = |f: &Vec<Vec<f64>>| -> Vec<f64> {
            (0..f[0].len())
                .map(|x| {
                    let val: f64 = idx.iter().zip(&weights).map(|(&i, w)| w * f[i][x]).sum();
                    val.clamp(0.0, 1.0)
                })
                .collect()
        };
        Ok((mix(&self.u), mix(&self.v)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyPoint {
    pub t: f64,
    pub h: f64,
    pub h_per_site: f64,
    pub dirichlet_sqrt: f64,
}

/// `H(mu_t | nu_t)` along the exact evolution, with `nu_t` the product law
/// built from the reference path.
pub fn entropy_trajectory(
    params: &SimParams,
    reference: &ReferencePath,
    mu0: &Distribution,
    times: &[f64],
) -> Result<Vec<EntropyPoint>, MasterError> {
    let n = params.geom.sites();
    if reference.times.is_empty()
        || reference.u.len() != reference.times.len()
        || reference.v.len() != reference.times.len()
        || reference.u.iter().chain(&reference.v).any(|f| f.len() != n)
    {
        return Err(MasterError::BadTrajectory);
    }
    let gen = generator_matrix(params)?;
    let mut mu = mu0.clone();
    let mut now = 0.0;
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        if t < now {
            return Err(MasterError::NegativeTime(t - now));
        }
        mu = evolve_distribution(&gen, &mu, t - now)?;
        now = t;
        let (u, v) = reference.at(t)?;
        let nu = ProductBernoulli::new(u, v)?;
        let h = relative_entropy(&mu, &nu)?;
        let f = sqrt_density(&mu, &nu);
        out.push(EntropyPoint {
            t,
            h,
            h_per_site: h / n as f64,
            dirichlet_sqrt: dirichlet_energy(&params.geom, &f, &nu),
        });
    }
    Ok(out)
}

pub fn write_entropy_csv<W: Write>(points: &[EntropyPoint], mut out: W) -> io::Result<()> {
    writeln!(out, "t,H,H_per_site,dirichlet_energy_of_sqrt_density")?;
    for p in points {
        writeln!(out, "{},{},{},{}", p.t, p.h, p.h_per_site, p.dirichlet_sqrt)?;
    }
    Ok(())
}
