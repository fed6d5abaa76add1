//! Discrete torus geometry, occupancy configurations and lattice calculus.
//!
//! Sites of the torus `(Z/NZ)^d` are indexed row-major: the last coordinate
//! varies fastest, and every shift wraps by modular arithmetic. The discrete
//! operators carry the macroscopic scaling of a lattice with spacing `1/N`:
//!
//! ```text
//! grad f(x)_j = N (f(x + e_j) - f(x))
//! lap  f(x)   = N^2 sum_j (f(x + e_j) + f(x - e_j) - 2 f(x))
//! ```
//!
//! Neighbors are counted with multiplicity, so every site has exactly `2d`
//! of them even on the two-site torus.

use std::f64::consts::PI;
use std::io::{self, Write};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LatticeError {
    #[error("torus side length must be at least 2, got {0}")]
    SideTooSmall(usize),
    #[error("torus dimension must be 1, 2 or 3, got {0}")]
    BadDimension(usize),
    #[error("field has {got} values but the torus has {expected} sites")]
    SizeMismatch { expected: usize, got: usize },
    #[error("negative time {0}")]
    NegativeTime(f64),
    #[error("time grid is empty")]
    EmptyGrid,
    #[error("time grid entries must be strictly positive, got {0}")]
    NonPositiveTime(f64),
    #[error("offset has {got} components, expected {expected}")]
    OffsetDimension { expected: usize, got: usize },
}

/// The discrete torus with `N^d` sites.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TorusGeometry {
    n: usize,
    d: usize,
}

impl TorusGeometry {
    pub fn new(n: usize, d: usize) -> Result<Self, LatticeError> {
        if n < 2 {
            return Err(LatticeError::SideTooSmall(n));
        }
        if !(1..=3).contains(&d) {
            return Err(LatticeError::BadDimension(d));
        }
        Ok(Self { n, d })
    }

    /// Side length `N`.
    pub fn side(&self) -> usize {
        self.n
    }

    /// Dimension `d`.
    pub fn dim(&self) -> usize {
        self.d
    }

    /// Number of sites, `N^d`.
    pub fn sites(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    /// Stride of coordinate `axis` in the row-major index.
    pub fn stride(&self, axis: usize) -> usize {
        self.n.pow((self.d - 1 - axis) as u32)
    }

    pub fn coords(&self, site: usize) -> Vec<usize> {
        let mut rest = site;
        let mut out = vec![0; self.d];
        for axis in (0..self.d).rev() {
            out[axis] = rest % self.n;
            rest /= self.n;
        }
        out
    }

    /// Site index of integer coordinates, wrapped onto the torus.
    pub fn index(&self, coords: &[i64]) -> usize {
        let n = self.n as i64;
        coords
            .iter()
            .fold(0usize, |acc, &c| acc * self.n + c.rem_euclid(n) as usize)
    }

    /// `site + offset` on the torus.
    pub fn shift(&self, site: usize, offset: &[i64]) -> usize {
        debug_assert_eq!(offset.len(), self.d);
        let n = self.n as i64;
        let mut out = site;
        for (axis, &o) in offset.iter().enumerate() {
            if o == 0 {
                continue;
            }
            let stride = self.stride(axis);
            let c = ((site / stride) % self.n) as i64;
            let nc = (c + o).rem_euclid(n);
            out = out + (nc as usize) * stride - (c as usize) * stride;
        }
        out
    }

    /// Nearest neighbor along `axis`, forward (`+e_axis`) or backward.
    pub fn neighbor(&self, site: usize, axis: usize, forward: bool) -> usize {
        let stride = self.stride(axis);
        let c = (site / stride) % self.n;
        let nc = if forward {
            if c + 1 == self.n {
                0
            } else {
                c + 1
            }
        } else if c == 0 {
            self.n - 1
        } else {
            c - 1
        };
        site + nc * stride - c * stride
    }

    /// The `2d` neighbors of `site`, with multiplicity.
    pub fn neighbors(&self, site: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.d).flat_map(move |axis| {
            [self.neighbor(site, axis, true), self.neighbor(site, axis, false)]
        })
    }

    /// Directed bonds `(x, x + e_j)`; each unordered bond of the torus
    /// multigraph appears exactly once. There are `d N^d` of them.
    pub fn bonds(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.sites() * self.d);
        for x in 0..self.sites() {
            for axis in 0..self.d {
                out.push((x, self.neighbor(x, axis, true)));
            }
        }
        out
    }

    /// Macroscopic position `x / N` of a site.
    pub fn position(&self, site: usize) -> Vec<f64> {
        self.coords(site)
            .into_iter()
            .map(|c| c as f64 / self.n as f64)
            .collect()
    }

    pub fn check_len(&self, len: usize) -> Result<(), LatticeError> {
        if len != self.sites() {
            return Err(LatticeError::SizeMismatch {
                expected: self.sites(),
                got: len,
            });
        }
        Ok(())
    }

    pub fn check_offset(&self, offset: &[i64]) -> Result<(), LatticeError> {
        if offset.len() != self.d {
            return Err(LatticeError::OffsetDimension {
                expected: self.d,
                got: offset.len(),
            });
        }
        Ok(())
    }
}

/// Real-valued lattice function, optionally stamped with a time.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub values: Vec<f64>,
    pub time: Option<f64>,
}

impl Field {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values, time: None }
    }

    pub fn at_time(values: Vec<f64>, time: f64) -> Self {
        Self {
            values,
            time: Some(time),
        }
    }

    pub fn constant(geom: &TorusGeometry, value: f64) -> Self {
        Self::new(vec![value; geom.sites()])
    }

    /// Samples `profile(x / N)` at every site.
    pub fn sample(geom: &TorusGeometry, profile: impl Fn(&[f64]) -> f64) -> Self {
        Self::new((0..geom.sites()).map(|x| profile(&geom.position(x))).collect())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_density(&self) -> bool {
        self.values.iter().all(|v| (0.0..=1.0).contains(v))
    }

    pub fn sup(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn inf(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// CSV dump with header `site_index,value`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "site_index,value")?;
        for (i, v) in self.values.iter().enumerate() {
            writeln!(out, "{i},{v}")?;
        }
        Ok(())
    }
}

/// Occupancies of both species. The two fields are independent: a site may
/// hold a type-1 and a type-2 particle at once.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Configuration {
    pub eta1: Vec<bool>,
    pub eta2: Vec<bool>,
}

impl Configuration {
    pub fn empty(geom: &TorusGeometry) -> Self {
        Self {
            eta1: vec![false; geom.sites()],
            eta2: vec![false; geom.sites()],
        }
    }

    pub fn new(eta1: Vec<bool>, eta2: Vec<bool>) -> Self {
        assert_eq!(eta1.len(), eta2.len(), "species fields differ in length");
        Self { eta1, eta2 }
    }

    /// Decodes the state index used by exact enumeration: bit `x` of the low
    /// word is `eta1(x)`, bit `x` of the high word is `eta2(x)`.
    pub fn from_state_index(sites: usize, state: usize) -> Self {
        let eta1 = (0..sites).map(|x| state >> x & 1 == 1).collect();
        let eta2 = (0..sites).map(|x| state >> (sites + x) & 1 == 1).collect();
        Self { eta1, eta2 }
    }

    pub fn state_index(&self) -> usize {
        let n = self.eta1.len();
        let mut s = 0usize;
        for x in 0..n {
            s |= (self.eta1[x] as usize) << x;
            s |= (self.eta2[x] as usize) << (n + x);
        }
        s
    }

    pub fn count1(&self) -> usize {
        self.eta1.iter().filter(|&&b| b).count()
    }

    pub fn count2(&self) -> usize {
        self.eta2.iter().filter(|&&b| b).count()
    }

    pub fn doubly_occupied(&self) -> usize {
        self.eta1
            .iter()
            .zip(&self.eta2)
            .filter(|(&a, &b)| a && b)
            .count()
    }

    /// Shift `tau_y`: `(tau_y eta)(x) = eta(x + y)`.
    pub fn shifted(&self, geom: &TorusGeometry, y: &[i64]) -> Self {
        let n = geom.sites();
        let mut out = Self {
            eta1: vec![false; n],
            eta2: vec![false; n],
        };
        for x in 0..n {
            let src = geom.shift(x, y);
            out.eta1[x] = self.eta1[src];
            out.eta2[x] = self.eta2[src];
        }
        out
    }
}

/// `N`-scaled forward differences at `x`, one per coordinate direction.
pub fn discrete_gradient(geom: &TorusGeometry, f: &[f64], x: usize) -> Vec<f64> {
    let n = geom.side() as f64;
    (0..geom.dim())
        .map(|axis| n * (f[geom.neighbor(x, axis, true)] - f[x]))
        .collect()
}

/// Euclidean norm of the discrete gradient at `x`.
pub fn gradient_norm(geom: &TorusGeometry, f: &[f64], x: usize) -> f64 {
    discrete_gradient(geom, f, x)
        .iter()
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt()
}

pub fn sup_gradient(geom: &TorusGeometry, f: &[f64]) -> f64 {
    (0..geom.sites())
        .map(|x| gradient_norm(geom, f, x))
        .fold(0.0, f64::max)
}

pub fn discrete_laplacian(geom: &TorusGeometry, f: &[f64], x: usize) -> f64 {
    let n2 = (geom.side() * geom.side()) as f64;
    let fx = f[x];
    n2 * geom.neighbors(x).map(|y| f[y] - fx).sum::<f64>()
}

/// Discrete Laplacian of a whole field.
pub fn laplacian_field(geom: &TorusGeometry, f: &[f64]) -> Vec<f64> {
    (0..geom.sites())
        .map(|x| discrete_laplacian(geom, f, x))
        .collect()
}

/// Window average over translates of the box `[0, ell-1]^d`:
/// `forward` averages `f(x + z)`, otherwise `f(x - z)`, for `z` in the box.
pub fn window_average(geom: &TorusGeometry, f: &[f64], ell: usize, forward: bool) -> Vec<f64> {
    let n = geom.side();
    let mut cur = f.to_vec();
    let mut next = vec![0.0; cur.len()];
    for axis in 0..geom.dim() {
        let stride = geom.stride(axis);
        for (x, out) in next.iter_mut().enumerate() {
            let c = (x / stride) % n;
            let base = x - c * stride;
            let mut acc = 0.0;
            for k in 0..ell {
                let c2 = if forward { (c + k) % n } else { (c + n * ell - k) % n };
                acc += cur[base + c2 * stride];
            }
            *out = acc / ell as f64;
        }
        std::mem::swap(&mut cur, &mut next);
    }
    cur
}

/// Eigenvalue (negated) of the one-dimensional discrete Laplacian for
/// Fourier mode `q`: `4 N^2 sin^2(pi q / N)`.
pub fn laplacian_eigenvalue(n: usize, q: usize) -> f64 {
    let s = (PI * q as f64 / n as f64).sin();
    4.0 * (n * n) as f64 * s * s
}

/// Transition kernel `p^N(t, x, y)` of the semigroup `exp(t lap)`.
///
/// The kernel factorizes over coordinates; the one-dimensional profile is
/// computed from the exact discrete Fourier eigenvalues, so no time stepping
/// is involved.
#[derive(Debug, Clone)]
pub struct HeatKernel {
    geom: TorusGeometry,
    t: f64,
    profile: Vec<f64>,
}

impl HeatKernel {
    pub fn time(&self) -> f64 {
        self.t
    }

    /// One-dimensional kernel `p1(t, k)` for displacement `k` in `0..N`.
    pub fn profile(&self) -> &[f64] {
        &self.profile
    }

    pub fn value(&self, x: usize, y: usize) -> f64 {
        let n = self.geom.side();
        let cx = self.geom.coords(x);
        let cy = self.geom.coords(y);
        cx.iter()
            .zip(&cy)
            .map(|(&a, &b)| self.profile[(a + n - b) % n])
            .product()
    }

    /// Dense `N^d x N^d` table, row `x`, column `y`. Only sensible on small
    /// tori.
    pub fn table(&self) -> Vec<f64> {
        let s = self.geom.sites();
        let mut out = Vec::with_capacity(s * s);
        for x in 0..s {
            for y in 0..s {
                out.push(self.value(x, y));
            }
        }
        out
    }

    /// `sum_y p(t, x, y) f(y)`, applied separably along each axis.
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        let n = self.geom.side();
        let mut cur = f.to_vec();
        let mut next = vec![0.0; cur.len()];
        for axis in 0..self.geom.dim() {
            let stride = self.geom.stride(axis);
            for (x, out) in next.iter_mut().enumerate() {
                let c = (x / stride) % n;
                let base = x - c * stride;
                let mut acc = 0.0;
                for (c2, w) in (0..n).map(|k| (k, self.profile[(c + n - k) % n])) {
                    acc += w * cur[base + c2 * stride];
                }
                *out = acc;
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    /// Writes the full kernel as CSV `x,y,value`. Size grows as `N^(2d)`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "x,y,value")?;
        let s = self.geom.sites();
        for x in 0..s {
            for y in 0..s {
                writeln!(out, "{x},{y},{}", self.value(x, y))?;
            }
        }
        Ok(())
    }
}

pub fn heat_kernel(geom: &TorusGeometry, t: f64) -> Result<HeatKernel, LatticeError> {
    if t < 0.0 || t.is_nan() {
        return Err(LatticeError::NegativeTime(t));
    }
    let n = geom.side();
    let profile = if t == 0.0 {
        let mut p = vec![0.0; n];
        p[0] = 1.0;
        p
    } else {
        let decay: Vec<f64> = (0..n).map(|q| (-laplacian_eigenvalue(n, q) * t).exp()).collect();
        (0..n)
            .map(|k| {
                let s: f64 = decay
                    .iter()
                    .enumerate()
                    .map(|(q, &e)| e * (2.0 * PI * (q * k % n) as f64 / n as f64).cos())
                    .sum();
                // Roundoff can leave tiny negative values far from the origin.
                (s / n as f64).max(0.0)
            })
            .collect()
    };
    Ok(HeatKernel {
        geom: *geom,
        t,
        profile,
    })
}

/// Outcome of the gradient-bound scan for one candidate `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientCandidate {
    pub c: f64,
    /// Smallest `C` satisfying the bound on the whole grid; infinite when
    /// `p(ct, x, y)` underflows where the gradient does not vanish.
    pub constant: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientBoundReport {
    pub candidates: Vec<GradientCandidate>,
    /// Candidate with the smallest finite constant.
    pub best: Option<GradientCandidate>,
}

impl GradientBoundReport {
    pub fn failed(&self) -> bool {
        self.best.is_none()
    }

    pub fn constant_for(&self, c: f64) -> Option<f64> {
        self.candidates
            .iter()
            .find(|cand| cand.c == c)
            .map(|cand| cand.constant)
    }
}

pub const GRADIENT_BOUND_CANDIDATES: [f64; 3] = [1.0, 2.0, 4.0];

/// Scans `|grad_x p(t, x, y)| <= C p(ct, x, y) / sqrt(t)` over every
/// `(t, x, y)` and reports the smallest admissible `C` for each candidate `c`.
pub fn heat_kernel_gradient_check(
    geom: &TorusGeometry,
    t_grid: &[f64],
) -> Result<GradientBoundReport, LatticeError> {
    if t_grid.is_empty() {
        return Err(LatticeError::EmptyGrid);
    }
    if let Some(&t) = t_grid.iter().find(|&&t| !(t > 0.0)) {
        return Err(LatticeError::NonPositiveTime(t));
    }
    let s = geom.sites();
    let n = geom.side() as f64;
    let mut candidates = Vec::new();
    for &c in &GRADIENT_BOUND_CANDIDATES {
        let mut constant: f64 = 0.0;
        for &t in t_grid {
            let p = heat_kernel(geom, t)?;
            let pc = heat_kernel(geom, c * t)?;
            for y in 0..s {
                for x in 0..s {
                    let grad: f64 = (0..geom.dim())
                        .map(|axis| {
                            let g = n * (p.value(geom.neighbor(x, axis, true), y) - p.value(x, y));
                            g * g
                        })
                        .sum::<f64>()
                        .sqrt();
                    if grad == 0.0 {
                        continue;
                    }
                    let denom = pc.value(x, y);
                    let ratio = if denom > 0.0 {
                        grad * t.sqrt() / denom
                    } else {
                        f64::INFINITY
                    };
                    constant = constant.max(ratio);
                }
            }
        }
        candidates.push(GradientCandidate { c, constant });
    }
    let best = candidates
        .iter()
        .filter(|cand| cand.constant.is_finite())
        .min_by(|a, b| a.constant.total_cmp(&b.constant))
        .cloned();
    Ok(GradientBoundReport { candidates, best })
}
