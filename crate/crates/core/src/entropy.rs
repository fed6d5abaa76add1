//! Ingredients of the one-block/replacement estimates: box measures, flows
//! connecting `delta_0` to `q_l = p_l * p_l`, local averages, and the exact
//! check of the sub-Gaussian concentration bound for sums of independent
//! bounded variables.
//!
//! Boxes are `Lambda_l = [0, l-1]^d`; flows live on `Lambda_{2l}` with
//! side `2l`, row-major like the torus (last coordinate fastest).

use serde::Serialize;
use thiserror::Error;

use crate::lattice::{window_average, TorusGeometry};

pub const CG_TOLERANCE: f64 = 1e-10;
/// Grid of `gamma kappa` values used by default.
pub const GAMMA_FRACTIONS: [f64; 5] = [0.1, 0.25, 0.5, 0.75, 1.0];

#[derive(Debug, Error, PartialEq)]
pub enum EntropyError {
    #[error("box size l = {0} must be at least 1")]
    BadBox(usize),
    #[error("dimension d = {0} must be at least 1")]
    BadDimension(usize),
    #[error("conjugate gradients stalled at residual {residual} after {iterations} iterations")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("window l = {ell} must lie in [1, N = {n}]")]
    BadWindow { ell: usize, n: usize },
    #[error("gamma = {gamma} outside [0, 1/kappa = {limit}]")]
    GammaOutOfRange { gamma: f64, limit: f64 },
    #[error("at most 20 variables can be enumerated, got {0}")]
    TooManyVariables(usize),
    #[error("variable {0}: bad distribution or interval")]
    BadVariable(usize),
    #[error("need at least three box sizes")]
    ShortSweep,
}

fn check_box(ell: usize, d: usize) -> Result<(), EntropyError> {
    if ell == 0 {
        return Err(EntropyError::BadBox(ell));
    }
    if d == 0 {
        return Err(EntropyError::BadDimension(d));
    }
    Ok(())
}

/// The one-dimensional marginal of `q_l`: a tent on `{0, ..., 2l-2}`.
fn tent(ell: usize, k: usize) -> f64 {
    if k + 1 >= 2 * ell {
        return 0.0;
    }
    let l = ell as f64;
    (l - (k as f64 - (l - 1.0)).abs()) / (l * l)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoxMeasure {
    pub ell: usize,
    pub d: usize,
    /// `p_l` on `Lambda_{2l}` (zero outside `Lambda_l`).
    pub p: Vec<f64>,
    /// `q_l` on `Lambda_{2l}`, supported in `Lambda_{2l-1}`.
    pub q: Vec<f64>,
}

impl BoxMeasure {
    pub fn side(&self) -> usize {
        2 * self.ell
    }
}

fn box_coords(index: usize, side: usize, d: usize) -> Vec<usize> {
    let mut c = vec![0; d];
    let mut r = index;
    for j in (0..d).rev() {
        c[j] = r % side;
        r /= side;
    }
    c
}

fn box_stride(side: usize, d: usize, axis: usize) -> usize {
    side.pow((d - 1 - axis) as u32)
}

pub fn box_measure(ell: usize, d: usize) -> Result<BoxMeasure, EntropyError> {
    check_box(ell, d)?;
    let side = 2 * ell;
    let sites = side.pow(d as u32);
    let vol = (ell as f64).powi(d as i32);
    let mut p = vec![0.0; sites];
    let mut q = vec![0.0; sites];
    for i in 0..sites {
        let c = box_coords(i, side, d);
        if c.iter().all(|&k| k < ell) {
            p[i] = 1.0 / vol;
        }
        q[i] = c.iter().map(|&k| tent(ell, k)).product();
    }
    Ok(BoxMeasure { ell, d, p, q })
}

/// Edge values `Phi(x, x + e_j)` for `x, x + e_j` both in `Lambda_{2l}`;
/// every other edge carries zero and `Phi(y, x) = -Phi(x, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub ell: usize,
    pub d: usize,
    /// `edges[j][x]`, zero when `x + e_j` leaves the box.
    edges: Vec<Vec<f64>>,
}

impl FlowField {
    pub fn side(&self) -> usize {
        2 * self.ell
    }

    pub fn sites(&self) -> usize {
        self.side().pow(self.d as u32)
    }

    /// `Phi(x, x + e_axis)`.
    pub fn forward(&self, x: usize, axis: usize) -> f64 {
        self.edges[axis][x]
    }

    /// `Phi(x, y)` for box indices with `y = x +- e_axis`; `None` if the two
    /// are not neighbours inside the box.
    pub fn flow(&self, x: usize, y: usize) -> Option<f64> {
        let side = self.side();
        let (cx, cy) = (box_coords(x, side, self.d), box_coords(y, side, self.d));
        let diff: Vec<i64> = cx.iter().zip(&cy).map(|(&a, &b)| b as i64 - a as i64).collect();
        let axis = diff.iter().position(|&s| s != 0)?;
        if diff.iter().filter(|&&s| s != 0).count() != 1 || diff[axis].abs() != 1 {
            return None;
        }
        Some(if diff[axis] == 1 { self.edges[axis][x] } else { -self.edges[axis][y] })
    }

    /// `sum_z Phi(x, z)`.
    pub fn divergence(&self) -> Vec<f64> {
        let side = self.side();
        let mut div = vec![0.0; self.sites()];
        for (axis, e) in self.edges.iter().enumerate() {
            let s = box_stride(side, self.d, axis);
            for x in 0..self.sites() {
                if (x / s) % side + 1 < side {
                    div[x] += e[x];
                    div[x + s] -= e[x];
                }
            }
        }
        div
    }

    /// `max_x |div Phi(x) - (delta_0 - q_l)(x)|`.
    pub fn divergence_defect(&self) -> f64 {
        let q = box_measure(self.ell, self.d).expect("valid box").q;
        self.divergence()
            .iter()
            .enumerate()
            .map(|(x, &div)| (div - ((x == 0) as u8 as f64 - q[x])).abs())
            .fold(0.0, f64::max)
    }
}

/// Neumann graph Laplacian `(L phi)(x) = sum_{y ~ x in box} (phi(x) - phi(y))`.
fn box_laplacian(phi: &[f64], side: usize, d: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    for axis in 0..d {
        let s = box_stride(side, d, axis);
        for x in 0..phi.len() {
            if (x / s) % side + 1 < side {
                let g = phi[x] - phi[x + s];
                out[x] += g;
                out[x + s] -= g;
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// The energy-minimizing (Thomson) flow: `Phi = phi(x) - phi(y)` with
/// `L phi = delta_0 - q_l`, solved by conjugate gradients in the space of
/// mean-zero potentials.
pub fn build_flow(ell: usize, d: usize) -> Result<FlowField, EntropyError> {
    let bm = box_measure(ell, d)?;
    let side = bm.side();
    let n = bm.q.len();
    let mut b: Vec<f64> = bm.q.iter().map(|q| -q).collect();
    b[0] += 1.0;
    let mut phi = vec![0.0; n];
    let mut r = b.clone();
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr = dot(&r, &r);
    let cap = 20 * n + 100;
    let mut it = 0;
    while rr.sqrt() > CG_TOLERANCE {
        if it == cap {
            return Err(EntropyError::NoConvergence { iterations: it, residual: rr.sqrt() });
        }
        box_laplacian(&p, side, d, &mut ap);
        let alpha = rr / dot(&p, &ap);
        for i in 0..n {
            phi[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
        it += 1;
    }
    let edges = (0..d)
        .map(|axis| {
            let s = box_stride(side, d, axis);
            (0..n)
                .map(|x| if (x / s) % side + 1 < side { phi[x] - phi[x + s] } else { 0.0 })
                .collect()
        })
        .collect();
    Ok(FlowField { ell, d, edges })
}

/// Canonical-path flow: the mass `q_l(y)` travels from 0 along `e_1` to
/// `y_1`, then along `e_2`, and so on. Valid but not energy-optimal for
/// `d >= 2`; in `d = 1` it coincides with the unique flow.
pub fn staircase_flow(ell: usize, d: usize) -> Result<FlowField, EntropyError> {
    check_box(ell, d)?;
    let side = 2 * ell;
    let n = side.pow(d as u32);
    let tail: Vec<f64> = (0..side).map(|k| (k + 1..side).map(|i| tent(ell, i)).sum()).collect();
    let edges = (0..d)
        .map(|axis| {
            (0..n)
                .map(|x| {
                    let c = box_coords(x, side, d);
                    if c[axis] + 1 >= side || c[axis + 1..].iter().any(|&k| k != 0) {
                        return 0.0;
                    }
                    c[..axis].iter().map(|&k| tent(ell, k)).product::<f64>() * tail[c[axis]]
                })
                .collect()
        })
        .collect();
    Ok(FlowField { ell, d, edges })
}

/// `sum_{x, j} Phi(x, x + e_j)^2`.
pub fn flow_energy(flow: &FlowField) -> f64 {
    flow.edges.iter().flatten().map(|e| e * e).sum()
}

/// The growth class `g_d(l)`: `l`, `log l`, `1`.
pub fn g_reference(d: usize, ell: usize) -> f64 {
    match d {
        1 => ell as f64,
        2 => (ell as f64).ln(),
        _ => 1.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum GrowthClass {
    Linear,
    Logarithmic,
    Bounded,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingReport {
    pub d: usize,
    pub ells: Vec<usize>,
    pub energies: Vec<f64>,
    /// `E(l_{i+1}) / E(l_i)`.
    pub ratios: Vec<f64>,
    /// `E(l_{i+1}) - E(l_i)`.
    pub differences: Vec<f64>,
    /// Class read off the last doubling.
    pub class: GrowthClass,
    pub expected: GrowthClass,
}

impl ScalingReport {
    pub fn matches_expected(&self) -> bool {
        self.class == self.expected
    }
}

pub fn expected_class(d: usize) -> GrowthClass {
    match d {
        1 => GrowthClass::Linear,
        2 => GrowthClass::Logarithmic,
        _ => GrowthClass::Bounded,
    }
}

/// Thomson-flow energies over a sweep of doubling box sizes, with the growth
/// class of the last doublings: an energy ratio near 2 is linear; otherwise
/// geometrically shrinking increments mean bounded, steady ones logarithmic.
pub fn flow_scaling(d: usize, ells: &[usize]) -> Result<ScalingReport, EntropyError> {
    if ells.len() < 3 {
        return Err(EntropyError::ShortSweep);
    }
    let energies = ells
        .iter()
        .map(|&l| build_flow(l, d).map(|f| flow_energy(&f)))
        .collect::<Result<Vec<_>, _>>()?;
    let ratios: Vec<f64> = energies.windows(2).map(|w| w[1] / w[0]).collect();
    let differences: Vec<f64> = energies.windows(2).map(|w| w[1] - w[0]).collect();
    let k = differences.len();
    let class = if ratios[k - 1] > 1.6 {
        GrowthClass::Linear
    } else if differences[k - 1] < 0.75 * differences[k - 2] {
        GrowthClass::Bounded
    } else {
        GrowthClass::Logarithmic
    };
    Ok(ScalingReport { d, ells: ells.to_vec(), energies, ratios, differences, class, expected: expected_class(d) })
}

/// `(<-G, ->G)`: averages of `G` over `x - Lambda_l` and `x + Lambda_l`.
pub fn local_averages(geom: &TorusGeometry, g: &[f64], ell: usize) -> Result<(Vec<f64>, Vec<f64>), EntropyError> {
    if ell == 0 || ell > geom.side() {
        return Err(EntropyError::BadWindow { ell, n: geom.side() });
    }
    Ok((window_average(geom, g, ell, false), window_average(geom, g, ell, true)))
}

/// `(G * k)(x) = sum_y G(x - y) k(y)` for a kernel on `Lambda_{2l}`
/// (`reflect` uses `k(-y)` instead, i.e. `sum_y G(x + y) k(y)`). Direct
/// summation, independent of the separable window averages.
pub fn convolve_box(geom: &TorusGeometry, g: &[f64], kernel: &[f64], ell: usize, reflect: bool) -> Vec<f64> {
    let d = geom.dim();
    let side = 2 * ell;
    let sign = if reflect { 1 } else { -1 };
    (0..geom.sites())
        .map(|x| {
            kernel
                .iter()
                .enumerate()
                .filter(|(_, &k)| k != 0.0)
                .map(|(y, &k)| {
                    let off: Vec<i64> = box_coords(y, side, d).iter().map(|&c| sign * c as i64).collect();
                    g[geom.shift(x, &off)] * k
                })
                .sum()
        })
        .collect()
}

/// A bounded variable with finite support inside `[lower, upper]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteVariable {
    pub values: Vec<f64>,
    pub probs: Vec<f64>,
    pub lower: f64,
    pub upper: f64,
}

impl DiscreteVariable {
    pub fn bernoulli(p: f64) -> Self {
        DiscreteVariable { values: vec![0.0, 1.0], probs: vec![1.0 - p, p], lower: 0.0, upper: 1.0 }
    }

    fn mean(&self) -> f64 {
        self.values.iter().zip(&self.probs).map(|(v, p)| v * p).sum()
    }

    fn valid(&self) -> bool {
        let total: f64 = self.probs.iter().sum();
        self.lower < self.upper
            && self.values.len() == self.probs.len()
            && !self.values.is_empty()
            && self.probs.iter().all(|&p| (0.0..=1.0).contains(&p))
            && (total - 1.0).abs() < 1e-12
            && self.values.iter().all(|&v| (self.lower..=self.upper).contains(&v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConcentrationRow {
    pub gamma: f64,
    /// `log E[exp(gamma S^2)]`, `S` the centred sum.
    pub lhs: f64,
    /// `2 gamma kappa`.
    pub rhs: f64,
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcentrationReport {
    pub kappa: f64,
    pub rows: Vec<ConcentrationRow>,
    pub pass: bool,
}

/// Exact law of `sum (X_i - E X_i)` by repeated convolution, merging atoms
/// closer than 1e-12.
fn centred_sum_law(vars: &[DiscreteVariable]) -> Vec<(f64, f64)> {
    let mut law = vec![(0.0, 1.0)];
    for var in vars {
        let mean = var.mean();
        let mut next: Vec<(f64, f64)> = Vec::with_capacity(law.len() * var.values.len());
        for &(s, ps) in &law {
            for (&v, &pv) in var.values.iter().zip(&var.probs) {
                if pv > 0.0 {
                    next.push((s + v - mean, ps * pv));
                }
            }
        }
        next.sort_by(|a, b| a.0.total_cmp(&b.0));
        law.clear();
        for (s, p) in next {
            match law.last_mut() {
                Some(last) if (last.0 - s).abs() < 1e-12 => last.1 += p,
                _ => law.push((s, p)),
            }
        }
    }
    law
}

pub fn kappa(vars: &[DiscreteVariable]) -> f64 {
    vars.iter().map(|v| (v.upper - v.lower).powi(2)).sum()
}

pub fn default_gammas(kappa: f64) -> Vec<f64> {
    GAMMA_FRACTIONS.iter().map(|f| f / kappa).collect()
}

/// Exact check of `log E[exp(gamma (sum X_i - E X_i)^2)] <= 2 gamma kappa`,
/// `kappa = sum (b_i - a_i)^2`, at each requested `gamma in [0, 1/kappa]`.
pub fn concentration_check(vars: &[DiscreteVariable], gammas: &[f64]) -> Result<ConcentrationReport, EntropyError> {
    if vars.len() > 20 {
        return Err(EntropyError::TooManyVariables(vars.len()));
    }
    if let Some(i) = vars.iter().position(|v| !v.valid()) {
        return Err(EntropyError::BadVariable(i));
    }
    let kappa = kappa(vars);
    let limit = if kappa > 0.0 { 1.0 / kappa } else { f64::INFINITY };
    if let Some(&gamma) = gammas.iter().find(|&&g| !(g >= 0.0 && g <= limit * (1.0 + 1e-12))) {
        return Err(EntropyError::GammaOutOfRange { gamma, limit });
    }
    let law = centred_sum_law(vars);
    let rows: Vec<ConcentrationRow> = gammas
        .iter()
        .map(|&gamma| {
            let top = law.iter().map(|&(s, _)| gamma * s * s).fold(f64::NEG_INFINITY, f64::max);
            let lhs = top + law.iter().map(|&(s, p)| p * (gamma * s * s - top).exp()).sum::<f64>().ln();
            let rhs = 2.0 * gamma * kappa;
            ConcentrationRow { gamma, lhs, rhs, slack: rhs - lhs }
        })
        .collect();
    // Rounding in the exact sum can leave gamma = 0 a hair negative.
    let pass = rows.iter().all(|r| r.slack >= -1e-14);
    Ok(ConcentrationReport { kappa, rows, pass })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_measures() {
        let b = box_measure(1, 2).unwrap();
        assert_eq!(b.q[0], 1.0);
        assert_eq!(b.q.iter().sum::<f64>(), 1.0);
        let b = box_measure(2, 1).unwrap();
        assert_eq!(b.q, vec![0.25, 0.5, 0.25, 0.0]);
        for d in 1..=3 {
            for l in [1, 2, 3, 5, 8] {
                let b = box_measure(l, d).unwrap();
                assert!((b.q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!((b.p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
        assert_eq!(box_measure(0, 1), Err(EntropyError::BadBox(0)));
    }

    #[test]
    fn q_is_p_convolved_with_p() {
        let b = box_measure(3, 2).unwrap();
        let side = 6;
        for x in 0..side * side {
            let cx = box_coords(x, side, 2);
            let mut conv = 0.0;
            for y in 0..side * side {
                let cy = box_coords(y, side, 2);
                if cy.iter().zip(&cx).all(|(a, b)| a <= b) {
                    let z = (cx[0] - cy[0]) * side + (cx[1] - cy[1]);
                    conv += b.p[y] * b.p[z];
                }
            }
            assert!((conv - b.q[x]).abs() < 1e-15);
        }
    }

    #[test]
    fn trivial_box_has_zero_flow() {
        for d in 1..=3 {
            let f = build_flow(1, d).unwrap();
            assert_eq!(flow_energy(&f), 0.0);
        }
    }

    #[test]
    fn one_dimensional_flow_is_cumulative() {
        let f = build_flow(2, 1).unwrap();
        assert!((f.forward(0, 0) - 0.75).abs() < 1e-10);
        assert!((f.forward(1, 0) - 0.25).abs() < 1e-10);
        assert!(f.forward(2, 0).abs() < 1e-10);
        assert_eq!(f.forward(3, 0), 0.0);
        assert_eq!(f.flow(1, 0), Some(-f.forward(0, 0)));
        assert_eq!(f.flow(0, 2), None);
        let s = staircase_flow(2, 1).unwrap();
        assert!((flow_energy(&s) - flow_energy(&f)).abs() < 1e-10);
    }

    #[test]
    fn flows_have_the_right_divergence() {
        for d in 1..=3 {
            for l in [2, 4, 8, 16] {
                if d == 3 && l == 16 {
                    continue; // covered by the acceptance sweep
                }
                let f = build_flow(l, d).unwrap();
                assert!(f.divergence_defect() < 1e-9, "d={d} l={l}");
                let s = staircase_flow(l, d).unwrap();
                assert!(s.divergence_defect() < 1e-12, "d={d} l={l}");
            }
        }
    }

    #[test]
    fn thomson_beats_staircase() {
        for (d, l) in [(2, 4), (2, 8), (3, 4)] {
            let t = flow_energy(&build_flow(l, d).unwrap());
            let s = flow_energy(&staircase_flow(l, d).unwrap());
            assert!(t <= s + 1e-12, "d={d} l={l}: {t} vs {s}");
        }
    }

    #[test]
    fn growth_classes() {
        let r = flow_scaling(1, &[8, 16, 32]).unwrap();
        assert_eq!(r.class, GrowthClass::Linear);
        assert!(r.matches_expected());
        let r = flow_scaling(2, &[4, 8, 16]).unwrap();
        assert_eq!(r.class, GrowthClass::Logarithmic);
        let r = flow_scaling(3, &[2, 4, 8]).unwrap();
        assert_eq!(r.class, GrowthClass::Bounded);
        assert!(flow_scaling(1, &[4, 8]).is_err());
    }

    fn ring(n: usize) -> TorusGeometry {
        TorusGeometry::new(n, 1).unwrap()
    }

    #[test]
    fn local_average_basics() {
        let g = TorusGeometry::new(8, 2).unwrap();
        let c = vec![0.3; 64];
        let (l, r) = local_averages(&g, &c, 3).unwrap();
        assert!(l.iter().chain(&r).all(|x| (x - 0.3).abs() < 1e-15));
        let f: Vec<f64> = (0..64).map(|i| (i * 7 % 11) as f64).collect();
        let (l, r) = local_averages(&g, &f, 1).unwrap();
        assert_eq!(l, f);
        assert_eq!(r, f);
        assert!(local_averages(&g, &f, 9).is_err());
    }

    #[test]
    fn averages_are_convolutions_with_p() {
        let g = TorusGeometry::new(7, 2).unwrap();
        let f: Vec<f64> = (0..49).map(|i| ((i * 13) % 17) as f64 / 17.0).collect();
        let b = box_measure(3, 2).unwrap();
        let (l, r) = local_averages(&g, &f, 3).unwrap();
        let cl = convolve_box(&g, &f, &b.p, 3, false);
        let cr = convolve_box(&g, &f, &b.p, 3, true);
        for x in 0..49 {
            assert!((l[x] - cl[x]).abs() < 1e-13);
            assert!((r[x] - cr[x]).abs() < 1e-13);
        }
    }

    #[test]
    fn replacement_rewrite_identity() {
        // sum_x g_x (omega * q^)(x) = sum_x <-g_x ->omega_x
        let n = 16;
        let geom = ring(n);
        let g: Vec<f64> = (0..n).map(|i| ((i * 5 + 3) % 7) as f64 - 3.0).collect();
        let w: Vec<f64> = (0..n).map(|i| ((i * 11) % 13) as f64 / 13.0 - 0.4).collect();
        for ell in [1, 2, 3, 5] {
            let q = box_measure(ell, 1).unwrap().q;
            let wq = convolve_box(&geom, &w, &q, ell, true);
            let lhs: f64 = g.iter().zip(&wq).map(|(a, b)| a * b).sum();
            let (gl, _) = local_averages(&geom, &g, ell).unwrap();
            let (_, wr) = local_averages(&geom, &w, ell).unwrap();
            let rhs: f64 = gl.iter().zip(&wr).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn double_average_is_q_convolution() {
        let geom = TorusGeometry::new(9, 2).unwrap();
        let f: Vec<f64> = (0..81).map(|i| ((i * 29) % 31) as f64).collect();
        let ell = 3;
        let (_, r) = local_averages(&geom, &f, ell).unwrap();
        let (_, rr) = local_averages(&geom, &r, ell).unwrap();
        let q = box_measure(ell, 2).unwrap().q;
        let direct = convolve_box(&geom, &f, &q, ell, true);
        for x in 0..81 {
            assert!((rr[x] - direct[x]).abs() < 1e-11);
        }
    }

    #[test]
    fn single_fair_coin() {
        let r = concentration_check(&[DiscreteVariable::bernoulli(0.5)], &[1.0, 0.0]).unwrap();
        assert_eq!(r.kappa, 1.0);
        assert!((r.rows[0].lhs - 0.25).abs() < 1e-15);
        assert_eq!(r.rows[0].rhs, 2.0);
        assert_eq!(r.rows[1].lhs, 0.0);
        assert!(r.pass);
    }

    #[test]
    fn binomial_sums_satisfy_the_bound() {
        for p in [0.1, 0.5, 0.9] {
            let vars = vec![DiscreteVariable::bernoulli(p); 10];
            let k = kappa(&vars);
            let gammas: Vec<f64> = [0.2, 0.5, 1.0].iter().map(|g| g / k).collect();
            let r = concentration_check(&vars, &gammas).unwrap();
            assert!(r.pass, "{r:?}");
            // Against a direct binomial sum.
            let mean = 10.0 * p;
            let direct: f64 = (0..=10)
                .map(|j| {
                    let c = (1..=j).fold(1.0, |a, i| a * (11 - i) as f64 / i as f64);
                    c * p.powi(j) * (1.0 - p).powi(10 - j) * (gammas[1] * (j as f64 - mean).powi(2)).exp()
                })
                .sum();
            assert!((r.rows[1].lhs - direct.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn gamma_beyond_range_is_rejected() {
        let vars = vec![DiscreteVariable::bernoulli(0.3); 4];
        assert!(matches!(
            concentration_check(&vars, &[0.3]),
            Err(EntropyError::GammaOutOfRange { .. })
        ));
        assert!(concentration_check(&vars, &default_gammas(4.0)).unwrap().pass);
        let bad = DiscreteVariable { values: vec![2.0], probs: vec![1.0], lower: 0.0, upper: 1.0 };
        assert_eq!(concentration_check(&[bad], &[0.1]), Err(EntropyError::BadVariable(0)));
    }
}
