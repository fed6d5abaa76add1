//! Rejection-free simulation of the two-species process.
//!
//! Type-1 particles exchange across every discordant bond at rate `N^2`;
//! a doubly-occupied site loses its type-1 particle at rate `K c1_x` and its
//! type-2 particle at rate `K c2_x`, on independent clocks. Simulation time is
//! macroscopic time: the `N^2` and `K` factors are already in the rates.
//!
//! Exchanges are drawn uniformly from the set of active bonds; kills from
//! a Fenwick tree over per-site kill rates. Both aggregates are maintained
//! incrementally, touching only the sites whose rates can change.

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::lattice::{window_average, Configuration, Field, TorusGeometry};
use crate::rates::{BoundRate, RateError, RatePolynomial};

pub const DEFAULT_EVENT_CAP: u64 = 20_000_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum KmcError {
    #[error("reaction strength K = {0} must be finite and nonnegative")]
    BadK(f64),
    #[error("horizon T = {0} must be finite and nonnegative")]
    BadHorizon(f64),
    #[error("observer time {0} lies outside [0, T]")]
    ObserverOutOfRange(f64),
    #[error("observer times must be nondecreasing")]
    UnsortedObservers,
    #[error("mean {value} at site {site} is outside [0,1]")]
    BadMean { site: usize, value: f64 },
    #[error("window ell = {ell} must lie in 1..={n}")]
    BadWindow { ell: usize, n: usize },
    #[error("event cap {cap} exceeded at t = {time} (of {horizon})")]
    EventCap { cap: u64, time: f64, horizon: f64 },
    #[error("configuration has {got} sites, the torus has {expected}")]
    SizeMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Rate(#[from] RateError),
}

/// The `(A3)` rule `K = delta sqrt(log N)`, clamped below at 1.
pub fn k_rule(delta: f64, n: usize) -> f64 {
    (delta * (n as f64).ln().sqrt()).max(1.0)
}

/// SplitMix64 finalizer; derives independent replica seeds from one seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct SimParams {
    pub geom: TorusGeometry,
    pub k: f64,
    pub c1: RatePolynomial,
    pub c2: RatePolynomial,
    pub horizon: f64,
    pub seed: u64,
    pub event_cap: u64,
}

impl SimParams {
    pub fn new(
        geom: TorusGeometry,
        k: f64,
        c1: RatePolynomial,
        c2: RatePolynomial,
        horizon: f64,
        seed: u64,
    ) -> Result<Self, KmcError> {
        if !(k.is_finite() && k >= 0.0) {
            return Err(KmcError::BadK(k));
        }
        if !(horizon.is_finite() && horizon >= 0.0) {
            return Err(KmcError::BadHorizon(horizon));
        }
        c1.check_geometry(&geom)?;
        c2.check_geometry(&geom)?;
        Ok(Self {
            geom,
            k,
            c1,
            c2,
            horizon,
            seed,
            event_cap: DEFAULT_EVENT_CAP,
        })
    }
}

/// Independent Bernoulli occupancies with the given per-site means.
pub fn sample_initial(u0: &Field, v0: &Field, seed: u64) -> Result<Configuration, KmcError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_with(u0, v0, &mut rng)
}

fn sample_with(u0: &Field, v0: &Field, rng: &mut impl Rng) -> Result<Configuration, KmcError> {
    if u0.len() != v0.len() {
        return Err(KmcError::SizeMismatch {
            expected: u0.len(),
            got: v0.len(),
        });
    }
    for f in [u0, v0] {
        if let Some((site, &value)) = f.values.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(KmcError::BadMean { site, value });
        }
    }
    let mut cfg = Configuration {
        eta1: Vec::with_capacity(u0.len()),
        eta2: Vec::with_capacity(u0.len()),
    };
    for (&a, &b) in u0.values.iter().zip(&v0.values) {
        cfg.eta1.push(rng.random::<f64>() < a);
        cfg.eta2.push(rng.random::<f64>() < b);
    }
    Ok(cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Exchange { x: usize, y: usize },
    KillOne(usize),
    KillTwo(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepOutcome {
    Event { dt: f64, kind: EventKind },
    /// No event can fire; the configuration is frozen forever.
    Absorbed,
}

/// Fenwick tree over nonnegative weights with prefix search.
#[derive(Debug, Clone)]
struct Fenwick {
    tree: Vec<f64>,
    weights: Vec<f64>,
    nonzero: usize,
    updates: usize,
}

impl Fenwick {
    fn new(n: usize) -> Self {
        Self {
            tree: vec![0.0; n + 1],
            weights: vec![0.0; n],
            nonzero: 0,
            updates: 0,
        }
    }

    fn set(&mut self, i: usize, w: f64) {
        let old = self.weights[i];
        if old == w {
            return;
        }
        self.nonzero = self.nonzero + (w != 0.0) as usize - (old != 0.0) as usize;
        self.weights[i] = w;
        self.updates += 1;
        // Periodic rebuild keeps accumulated cancellation error bounded.
        if self.updates >= 1 << 16 {
            self.rebuild();
            return;
        }
        let delta = w - old;
        let mut j = i + 1;
        while j < self.tree.len() {
            self.tree[j] += delta;
            j += j & j.wrapping_neg();
        }
    }

    fn rebuild(&mut self) {
        self.updates = 0;
        self.tree.iter_mut().for_each(|t| *t = 0.0);
        for i in 0..self.weights.len() {
            let j = i + 1;
            self.tree[j] += self.weights[i];
            let parent = j + (j & j.wrapping_neg());
            if parent < self.tree.len() {
                let v = self.tree[j];
                self.tree[parent] += v;
            }
        }
    }

    fn total(&self) -> f64 {
        if self.nonzero == 0 {
            return 0.0;
        }
        let mut s = 0.0;
        let mut j = self.weights.len();
        while j > 0 {
            s += self.tree[j];
            j &= j - 1;
        }
        s.max(0.0)
    }

    /// Index `i` with `prefix(i) <= r < prefix(i + 1)`, skipping zero weights.
    fn find(&self, mut r: f64) -> usize {
        let n = self.weights.len();
        let mut pos = 0;
        let mut step = n.next_power_of_two();
        while step > 0 {
            let next = pos + step;
            if next <= n && self.tree[next] <= r {
                pos = next;
                r -= self.tree[next];
            }
            step >>= 1;
        }
        // Rounding may land on a zero-weight slot; move to a live one.
        let mut i = pos.min(n - 1);
        if self.weights[i] == 0.0 {
            if let Some(j) = (i..n).find(|&j| self.weights[j] > 0.0) {
                i = j;
            } else if let Some(j) = (0..i).rev().find(|&j| self.weights[j] > 0.0) {
                i = j;
            }
        }
        i
    }
}

/// Set of bond ids with O(1) insert, remove and uniform sampling.
#[derive(Debug, Clone)]
struct IndexedSet {
    items: Vec<u32>,
    pos: Vec<u32>,
}

impl IndexedSet {
    const ABSENT: u32 = u32::MAX;

    fn new(capacity: usize) -> Self {
        Self {
            items: Vec::new(),
            pos: vec![Self::ABSENT; capacity],
        }
    }

    fn set(&mut self, id: usize, present: bool) {
        let here = self.pos[id] != Self::ABSENT;
        if present && !here {
            self.pos[id] = self.items.len() as u32;
            self.items.push(id as u32);
        } else if !present && here {
            let p = self.pos[id] as usize;
            let last = self.items.pop().unwrap();
            if p < self.items.len() {
                self.items[p] = last;
                self.pos[last as usize] = p as u32;
            }
            self.pos[id] = Self::ABSENT;
        }
    }

    fn len(&self) -> usize {
        self.items.len()
    }
}

/// Event engine owning one trajectory.
#[derive(Debug, Clone)]
pub struct Engine {
    geom: TorusGeometry,
    exchange_rate: f64,
    k: f64,
    c1: BoundRate,
    c2: BoundRate,
    cfg: Configuration,
    bonds: Vec<(usize, usize)>,
    site_bonds: Vec<Vec<usize>>,
    active: IndexedSet,
    kill1: Fenwick,
    kill2: Fenwick,
    time: f64,
    events: u64,
    rng: ChaCha8Rng,
}

impl Engine {
    pub fn new(params: &SimParams, cfg: Configuration, seed: u64) -> Result<Self, KmcError> {
        let geom = params.geom;
        let s = geom.sites();
        if cfg.eta1.len() != s || cfg.eta2.len() != s {
            return Err(KmcError::SizeMismatch {
                expected: s,
                got: cfg.eta1.len(),
            });
        }
        let bonds = geom.bonds();
        let mut site_bonds = vec![Vec::new(); s];
        for (b, &(x, y)) in bonds.iter().enumerate() {
            site_bonds[x].push(b);
            site_bonds[y].push(b);
        }
        let n = geom.side() as f64;
        let mut engine = Self {
            geom,
            exchange_rate: n * n,
            k: params.k,
            c1: params.c1.bind(&geom)?,
            c2: params.c2.bind(&geom)?,
            active: IndexedSet::new(bonds.len()),
            bonds,
            site_bonds,
            cfg,
            kill1: Fenwick::new(s),
            kill2: Fenwick::new(s),
            time: 0.0,
            events: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        for b in 0..engine.bonds.len() {
            engine.refresh_bond(b);
        }
        for x in 0..s {
            engine.refresh_site(x);
        }
        Ok(engine)
    }

    pub fn config(&self) -> &Configuration {
        &self.cfg
    }

    pub fn geometry(&self) -> &TorusGeometry {
        &self.geom
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn events(&self) -> u64 {
        self.events
    }

    pub fn total_rate(&self) -> f64 {
        self.exchange_rate * self.active.len() as f64 + self.kill1.total() + self.kill2.total()
    }

    fn refresh_bond(&mut self, b: usize) {
        let (x, y) = self.bonds[b];
        self.active.set(b, self.cfg.eta1[x] != self.cfg.eta1[y]);
    }

    fn refresh_site(&mut self, x: usize) {
        let both = self.cfg.eta1[x] && self.cfg.eta2[x];
        let (r1, r2) = if both && self.k > 0.0 {
            (
                self.k * self.c1.eval_config(&self.cfg.eta1, &self.cfg.eta2, x),
                self.k * self.c2.eval_config(&self.cfg.eta1, &self.cfg.eta2, x),
            )
        } else {
            (0.0, 0.0)
        };
        self.kill1.set(x, r1);
        self.kill2.set(x, r2);
    }

    fn touched(&mut self, y: usize) {
        self.refresh_site(y);
        for i in 0..self.c1.dependents(y).len() {
            let x = self.c1.dependents(y)[i];
            self.refresh_site(x);
        }
        for i in 0..self.c2.dependents(y).len() {
            let x = self.c2.dependents(y)[i];
            self.refresh_site(x);
        }
    }

    fn touched_bonds(&mut self, y: usize) {
        for i in 0..self.site_bonds[y].len() {
            let b = self.site_bonds[y][i];
            self.refresh_bond(b);
        }
    }

    /// Draws the waiting time and the event, without applying it.
    fn propose(&mut self) -> StepOutcome {
        let ex = self.exchange_rate * self.active.len() as f64;
        let k1 = self.kill1.total();
        let k2 = self.kill2.total();
        let total = ex + k1 + k2;
        if total <= 0.0 {
            return StepOutcome::Absorbed;
        }
        // 1 - U lies in (0, 1], so the waiting time is finite and positive
        // unless the total rate is astronomically large.
        let e: f64 = -(1.0 - self.rng.random::<f64>()).ln();
        let dt = (e / total).max(f64::MIN_POSITIVE);
        let r = self.rng.random::<f64>() * total;
        let kind = if r < ex && self.active.len() > 0 {
            let b = self.active.items[self.rng.random_range(0..self.active.len())] as usize;
            let (x, y) = self.bonds[b];
            EventKind::Exchange { x, y }
        } else if r < ex + k1 && self.kill1.nonzero > 0 {
            EventKind::KillOne(self.kill1.find(self.rng.random::<f64>() * k1))
        } else if self.kill2.nonzero > 0 {
            EventKind::KillTwo(self.kill2.find(self.rng.random::<f64>() * k2))
        } else {
            EventKind::KillOne(self.kill1.find(self.rng.random::<f64>() * k1))
        };
        StepOutcome::Event { dt, kind }
    }

    fn apply(&mut self, kind: EventKind) {
        match kind {
            EventKind::Exchange { x, y } => {
                self.cfg.eta1.swap(x, y);
                self.touched_bonds(x);
                self.touched_bonds(y);
                self.touched(x);
                self.touched(y);
            }
            EventKind::KillOne(x) => {
                self.cfg.eta1[x] = false;
                self.touched_bonds(x);
                self.touched(x);
            }
            EventKind::KillTwo(x) => {
                self.cfg.eta2[x] = false;
                self.touched(x);
            }
        }
        self.events += 1;
    }

    /// Fires one event and advances the clock.
    pub fn step(&mut self) -> StepOutcome {
        let out = self.propose();
        if let StepOutcome::Event { dt, kind } = out {
            self.apply(kind);
            self.time += dt;
        }
        out
    }

    /// Runs to `horizon`, handing a snapshot to `observe` at every requested
    /// time (the configuration in force at that instant).
    pub fn run_until(
        &mut self,
        horizon: f64,
        times: &[f64],
        cap: u64,
        mut observe: impl FnMut(f64, &Configuration),
    ) -> Result<(), KmcError> {
        let mut next = 0;
        while next < times.len() && times[next] <= self.time {
            observe(times[next], &self.cfg);
            next += 1;
        }
        loop {
            match self.propose() {
                StepOutcome::Absorbed => break,
                StepOutcome::Event { dt, kind } => {
                    let t_new = self.time + dt;
                    while next < times.len() && times[next] < t_new {
                        observe(times[next], &self.cfg);
                        next += 1;
                    }
                    if t_new > horizon {
                        break;
                    }
                    if self.events >= cap {
                        return Err(KmcError::EventCap {
                            cap,
                            time: self.time,
                            horizon,
                        });
                    }
                    self.apply(kind);
                    self.time = t_new;
                }
            }
        }
        while next < times.len() {
            observe(times[next], &self.cfg);
            next += 1;
        }
        Ok(())
    }
}

fn check_times(times: &[f64], horizon: f64) -> Result<(), KmcError> {
    if let Some(&t) = times.iter().find(|&&t| !(0.0..=horizon).contains(&t)) {
        return Err(KmcError::ObserverOutOfRange(t));
    }
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(KmcError::UnsortedObservers);
    }
    Ok(())
}

/// Configurations at the requested times, for one trajectory driven by
/// `params.seed`.
pub fn simulate(
    params: &SimParams,
    init: Configuration,
    times: &[f64],
) -> Result<Vec<(f64, Configuration)>, KmcError> {
    check_times(times, params.horizon)?;
    let mut engine = Engine::new(params, init, params.seed)?;
    let mut out = Vec::with_capacity(times.len());
    engine.run_until(params.horizon, times, params.event_cap, |t, c| out.push((t, c.clone())))?;
    Ok(out)
}

/// Runs `replicas` independent trajectories from product initial laws and
/// reduces each one with `reduce`; results come back in replica order.
/// Replica `r` uses seeds derived from `(params.seed, r)`.
pub fn run_replicas<T: Send>(
    params: &SimParams,
    u0: &Field,
    v0: &Field,
    times: &[f64],
    replicas: usize,
    reduce: impl Fn(&[(f64, Configuration)]) -> T + Sync,
) -> Result<Vec<T>, KmcError> {
    check_times(times, params.horizon)?;
    (0..replicas)
        .into_par_iter()
        .map(|r| {
            let init_seed = derive_seed(params.seed, 2 * r as u64);
            let run_seed = derive_seed(params.seed, 2 * r as u64 + 1);
            let init = sample_initial(u0, v0, init_seed)?;
            let mut engine = Engine::new(params, init, run_seed)?;
            let mut snaps = Vec::with_capacity(times.len());
            engine.run_until(params.horizon, times, params.event_cap, |t, c| {
                snaps.push((t, c.clone()))
            })?;
            Ok(reduce(&snaps))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalProfile {
    pub time: f64,
    pub window: usize,
    pub eta1: Vec<f64>,
    pub eta2: Vec<f64>,
}

impl EmpiricalProfile {
    pub fn write_csv<W: Write>(&self, mut out: W, seed: u64, config_hash: &str) -> io::Result<()> {
        writeln!(out, "# seed={seed} config={config_hash} t={}", self.time)?;
        writeln!(out, "site,eta1_mean,eta2_mean")?;
        for (x, (a, b)) in self.eta1.iter().zip(&self.eta2).enumerate() {
            writeln!(out, "{x},{a},{b}")?;
        }
        Ok(())
    }
}

/// Block average of the occupancies over forward windows `x + [0, ell-1]^d`.
pub fn smooth_profile(
    geom: &TorusGeometry,
    cfg: &Configuration,
    ell: usize,
) -> Result<EmpiricalProfile, KmcError> {
    if ell == 0 || ell > geom.side() {
        return Err(KmcError::BadWindow {
            ell,
            n: geom.side(),
        });
    }
    let as_f = |b: &[bool]| b.iter().map(|&x| x as u8 as f64).collect::<Vec<_>>();
    Ok(EmpiricalProfile {
        time: 0.0,
        window: ell,
        eta1: window_average(geom, &as_f(&cfg.eta1), ell, true),
        eta2: window_average(geom, &as_f(&cfg.eta2), ell, true),
    })
}

/// Replica-averaged occupancy profiles at each observer time.
pub fn mean_profiles(
    params: &SimParams,
    u0: &Field,
    v0: &Field,
    times: &[f64],
    replicas: usize,
) -> Result<Vec<EmpiricalProfile>, KmcError> {
    let s = params.geom.sites();
    let per = run_replicas(params, u0, v0, times, replicas, |snaps| {
        snaps
            .iter()
            .map(|(_, c)| (c.eta1.clone(), c.eta2.clone()))
            .collect::<Vec<_>>()
    })?;
    let mut out: Vec<EmpiricalProfile> = times
        .iter()
        .map(|&t| EmpiricalProfile {
            time: t,
            window: 1,
            eta1: vec![0.0; s],
            eta2: vec![0.0; s],
        })
        .collect();
    for replica in &per {
        for (prof, (a, b)) in out.iter_mut().zip(replica) {
            for x in 0..s {
                prof.eta1[x] += a[x] as u8 as f64;
                prof.eta2[x] += b[x] as u8 as f64;
            }
        }
    }
    let r = replicas.max(1) as f64;
    for prof in &mut out {
        prof.eta1.iter_mut().for_each(|x| *x /= r);
        prof.eta2.iter_mut().for_each(|x| *x /= r);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rates::make_preset;

    fn params(n: usize, k: f64, case: u8, m: u32, t: f64, seed: u64) -> SimParams {
        let g = TorusGeometry::new(n, 1).unwrap();
        let (c1, c2) = make_preset(case, m, None, 1).unwrap();
        SimParams::new(g, k, c1, c2, t, seed).unwrap()
    }

    #[test]
    fn k_rule_clamps_at_one() {
        assert_eq!(k_rule(0.1, 64), 1.0);
        assert!((k_rule(2.0, 256) - 2.0 * (256f64).ln().sqrt()).abs() < 1e-15);
    }

    #[test]
    fn deterministic_full_density_sample() {
        let g = TorusGeometry::new(16, 1).unwrap();
        let one = Field::constant(&g, 1.0);
        let zero = Field::constant(&g, 0.0);
        let c = sample_initial(&one, &zero, 3).unwrap();
        assert!(c.eta1.iter().all(|&b| b) && c.eta2.iter().all(|&b| !b));
        let half = Field::constant(&g, 0.5);
        assert_eq!(sample_initial(&half, &half, 9), sample_initial(&half, &half, 9));
        assert!(matches!(
            sample_initial(&Field::constant(&g, 1.1), &zero, 0),
            Err(KmcError::BadMean { .. })
        ));
    }

    #[test]
    fn bernoulli_mean_within_clt_band() {
        let g = TorusGeometry::new(100, 2).unwrap();
        let half = Field::constant(&g, 0.5);
        let c = sample_initial(&half, &half, 17).unwrap();
        let mean = c.count1() as f64 / g.sites() as f64;
        assert!((mean - 0.5).abs() < 0.02);
    }

    #[test]
    fn two_site_total_rate() {
        let p = params(2, 1.0, 2, 1, 1.0, 0);
        let e = Engine::new(&p, Configuration::new(vec![true, false], vec![false; 2]), 0).unwrap();
        assert_eq!(e.total_rate(), 8.0);
    }

    #[test]
    fn absorbed_when_nothing_can_fire() {
        let p = params(4, 1.0, 2, 1, 1.0, 0);
        let mut e = Engine::new(&p, Configuration::new(vec![true; 4], vec![false; 4]), 0).unwrap();
        assert_eq!(e.step(), StepOutcome::Absorbed);
    }

    #[test]
    fn conservation_and_monotonicity_along_trajectories() {
        let g = TorusGeometry::new(12, 1).unwrap();
        let u0 = Field::constant(&g, 0.5);
        let v0 = Field::constant(&g, 0.6);
        for (k, seed) in [(0.0, 1u64), (3.0, 2)] {
            let p = params(12, k, 3, 2, 0.3, seed);
            let init = sample_initial(&u0, &v0, seed).unwrap();
            let mut e = Engine::new(&p, init, seed).unwrap();
            let mut prev = e.config().clone();
            let mut t = 0.0;
            for _ in 0..5000 {
                match e.step() {
                    StepOutcome::Absorbed => break,
                    StepOutcome::Event { dt, .. } => {
                        assert!(dt > 0.0);
                        assert!(e.time() > t);
                        t = e.time();
                    }
                }
                let cur = e.config();
                if k == 0.0 {
                    assert_eq!(cur.count1(), prev.count1());
                }
                assert!(cur.eta2.iter().zip(&prev.eta2).all(|(&a, &b)| !a || b));
                prev = cur.clone();
            }
        }
    }

    #[test]
    fn incremental_rates_match_full_recompute() {
        let g = TorusGeometry::new(9, 1).unwrap();
        let u0 = Field::constant(&g, 0.7);
        let v0 = Field::constant(&g, 0.7);
        for (case, m) in [(1u8, 4u32), (2, 3), (3, 3)] {
            let p = params(9, 2.5, case, m, 1.0, 5);
            let init = sample_initial(&u0, &v0, 5).unwrap();
            let mut e = Engine::new(&p, init, 11).unwrap();
            for _ in 0..400 {
                if e.step() == StepOutcome::Absorbed {
                    break;
                }
                let fresh = Engine::new(&p, e.config().clone(), 0).unwrap();
                assert!((fresh.total_rate() - e.total_rate()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_horizon_returns_initial() {
        let p = params(8, 2.0, 2, 1, 0.0, 4);
        let g = p.geom;
        let init = sample_initial(&Field::constant(&g, 0.5), &Field::constant(&g, 0.5), 1).unwrap();
        let out = simulate(&p, init.clone(), &[0.0]).unwrap();
        assert_eq!(out, vec![(0.0, init)]);
        assert!(matches!(simulate(&p, Configuration::empty(&g), &[0.5]), Err(KmcError::ObserverOutOfRange(_))));
    }

    #[test]
    fn same_seed_same_trajectory() {
        let p = params(16, 2.0, 1, 4, 0.05, 77);
        let g = p.geom;
        let u0 = Field::constant(&g, 0.5);
        let run = || mean_profiles(&p, &u0, &u0, &[0.0, 0.02, 0.05], 4).unwrap();
        assert_eq!(run(), run());
    }

    #[test]
    fn event_cap_aborts() {
        let mut p = params(16, 2.0, 2, 1, 1.0, 3);
        p.event_cap = 10;
        let g = p.geom;
        let init = sample_initial(&Field::constant(&g, 0.5), &Field::constant(&g, 0.0), 1).unwrap();
        assert!(matches!(simulate(&p, init, &[1.0]), Err(KmcError::EventCap { .. })));
    }

    #[test]
    fn smoothing_examples() {
        let g = TorusGeometry::new(8, 1).unwrap();
        let alt: Vec<bool> = (0..8).map(|i| i % 2 == 0).collect();
        let cfg = Configuration::new(alt.clone(), vec![false; 8]);
        let raw = smooth_profile(&g, &cfg, 1).unwrap();
        assert_eq!(raw.eta1, alt.iter().map(|&b| b as u8 as f64).collect::<Vec<_>>());
        assert!(smooth_profile(&g, &cfg, 2).unwrap().eta1.iter().all(|&v| v == 0.5));
        let full = smooth_profile(&g, &cfg, 8).unwrap();
        assert!(full.eta1.iter().all(|&v| (v - 0.5).abs() < 1e-15));
        assert!(smooth_profile(&g, &cfg, 9).is_err());
        assert!(smooth_profile(&g, &cfg, 0).is_err());
    }

    #[test]
    fn fenwick_find_respects_weights() {
        let mut f = Fenwick::new(5);
        f.set(1, 2.0);
        f.set(3, 1.0);
        assert_eq!(f.total(), 3.0);
        assert_eq!(f.find(0.0), 1);
        assert_eq!(f.find(1.99), 1);
        assert_eq!(f.find(2.0), 3);
        assert_eq!(f.find(2.999), 3);
        f.set(1, 0.0);
        assert_eq!(f.find(0.5), 3);
        f.set(3, 0.0);
        assert_eq!(f.total(), 0.0);
    }
}
