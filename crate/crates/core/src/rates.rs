//! Annihilation-rate polynomials `c1(eta1, eta2)` and `c2(eta1)`.
//!
//! A polynomial is a finite sum of monomials `coeff * prod eta1(z) * prod
//! eta2(z')` over nonzero site offsets. The value at site `x` is taken on the
//! shifted configuration, i.e. the offsets are read relative to `x`. The same
//! monomials evaluated on `[0,1]`-valued fields give the field extension used
//! by the semi-discrete system.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::{Configuration, Field, TorusGeometry};

/// Largest number of distinct variables for the exhaustive sign check.
const MAX_SUPPORT: usize = 20;

#[derive(Debug, Error, PartialEq)]
pub enum RateError {
    #[error("offset {0:?} is the origin; rates may not depend on the site itself")]
    ZeroOffset(Vec<i64>),
    #[error("offset {offset:?} has {got} components, expected {expected}")]
    OffsetDimension {
        offset: Vec<i64>,
        expected: usize,
        got: usize,
    },
    #[error("c2 may not depend on type-2 occupancies")]
    SecondSpeciesInC2,
    #[error("coefficient {0} is not finite")]
    NonFiniteCoefficient(f64),
    #[error("polynomial is negative ({value}) on a binary configuration")]
    Negative { value: f64 },
    #[error("polynomial support has {0} variables; the sign check handles at most {MAX_SUPPORT}")]
    SupportTooLarge(usize),
    #[error("case {case} does not admit m = {m}")]
    IllegalCase { case: u8, m: u32 },
    #[error("case {case} with m = {m} needs {expected} offsets, got {got}")]
    OffsetCount {
        case: u8,
        m: u32,
        expected: usize,
        got: usize,
    },
    #[error("offsets must be distinct")]
    RepeatedOffset,
    #[error("offset {offset:?} wraps onto the origin on a torus of side {n}")]
    WrapsToOrigin { offset: Vec<i64>, n: usize },
    #[error("field value {value} at site {site} is outside [0,1]")]
    OutOfRange { site: usize, value: f64 },
    #[error("cannot parse offset list: {0}")]
    Parse(String),
    #[error("invalid polynomial description: {0}")]
    Json(String),
}

/// Which rate a polynomial represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Species {
    One,
    Two,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    #[serde(default)]
    pub offsets1: Vec<Vec<i64>>,
    #[serde(default)]
    pub offsets2: Vec<Vec<i64>>,
    pub coeff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatePolynomial {
    species: Species,
    dim: usize,
    terms: Vec<Monomial>,
}

impl RatePolynomial {
    pub fn new(species: Species, dim: usize, terms: Vec<Monomial>) -> Result<Self, RateError> {
        let mut clean = Vec::with_capacity(terms.len());
        for mut term in terms {
            if !term.coeff.is_finite() {
                return Err(RateError::NonFiniteCoefficient(term.coeff));
            }
            if species == Species::Two && !term.offsets2.is_empty() {
                return Err(RateError::SecondSpeciesInC2);
            }
            for z in term.offsets1.iter().chain(&term.offsets2) {
                if z.len() != dim {
                    return Err(RateError::OffsetDimension {
                        offset: z.clone(),
                        expected: dim,
                        got: z.len(),
                    });
                }
                if z.iter().all(|&c| c == 0) {
                    return Err(RateError::ZeroOffset(z.clone()));
                }
            }
            // Occupancies are idempotent, so repeated factors collapse.
            term.offsets1.sort();
            term.offsets1.dedup();
            term.offsets2.sort();
            term.offsets2.dedup();
            clean.push(term);
        }
        let p = Self {
            species,
            dim,
            terms: clean,
        };
        p.check_nonnegative()?;
        Ok(p)
    }

    /// The rate identically equal to 1.
    pub fn constant_one(species: Species, dim: usize) -> Self {
        Self {
            species,
            dim,
            terms: vec![Monomial {
                offsets1: vec![],
                offsets2: vec![],
                coeff: 1.0,
            }],
        }
    }

    pub fn species(&self) -> Species {
        self.species
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> &[Monomial] {
        &self.terms
    }

    pub fn is_constant(&self) -> bool {
        self.terms
            .iter()
            .all(|t| t.offsets1.is_empty() && t.offsets2.is_empty())
    }

    /// Distinct offsets appearing in any factor (either species).
    pub fn support(&self) -> Vec<Vec<i64>> {
        let mut all: Vec<Vec<i64>> = self
            .terms
            .iter()
            .flat_map(|t| t.offsets1.iter().chain(&t.offsets2).cloned())
            .collect();
        all.sort();
        all.dedup();
        all
    }

    /// Upper bound of the rate over all `[0,1]`-valued fields: the sum of the
    /// positive parts of the coefficients.
    pub fn sup_rate(&self) -> f64 {
        self.terms.iter().map(|t| t.coeff.max(0.0)).sum()
    }

    fn check_nonnegative(&self) -> Result<(), RateError> {
        let mut vars1: Vec<&Vec<i64>> = self.terms.iter().flat_map(|t| &t.offsets1).collect();
        vars1.sort();
        vars1.dedup();
        let mut vars2: Vec<&Vec<i64>> = self.terms.iter().flat_map(|t| &t.offsets2).collect();
        vars2.sort();
        vars2.dedup();
        let k = vars1.len() + vars2.len();
        if k > MAX_SUPPORT {
            return Err(RateError::SupportTooLarge(k));
        }
        let pos = |vars: &[&Vec<i64>], z: &Vec<i64>| vars.iter().position(|v| *v == z).unwrap();
        let masks: Vec<(u64, f64)> = self
            .terms
            .iter()
            .map(|t| {
                let mut mask = 0u64;
                for z in &t.offsets1 {
                    mask |= 1 << pos(&vars1, z);
                }
                for z in &t.offsets2 {
                    mask |= 1 << (vars1.len() + pos(&vars2, z));
                }
                (mask, t.coeff)
            })
            .collect();
        for assignment in 0u64..(1 << k) {
            let value: f64 = masks
                .iter()
                .filter(|(mask, _)| assignment & mask == *mask)
                .map(|(_, c)| c)
                .sum();
            if value < -1e-12 {
                return Err(RateError::Negative { value });
            }
        }
        Ok(())
    }

    /// Fails if some offset coincides with the origin once wrapped onto the
    /// torus, which would make the rate depend on the site itself.
    pub fn check_geometry(&self, geom: &TorusGeometry) -> Result<(), RateError> {
        if geom.dim() != self.dim {
            let z = self.support().into_iter().next().unwrap_or_default();
            return Err(RateError::OffsetDimension {
                got: self.dim,
                expected: geom.dim(),
                offset: z,
            });
        }
        for z in self.support() {
            if geom.shift(0, &z) == 0 {
                return Err(RateError::WrapsToOrigin {
                    offset: z,
                    n: geom.side(),
                });
            }
        }
        Ok(())
    }

    /// Resolves offsets to site tables on a concrete torus.
    pub fn bind(&self, geom: &TorusGeometry) -> Result<BoundRate, RateError> {
        self.check_geometry(geom)?;
        let table = |z: &Vec<i64>| -> Vec<usize> { (0..geom.sites()).map(|x| geom.shift(x, z)).collect() };
        let terms = self
            .terms
            .iter()
            .map(|t| BoundTerm {
                sites1: t.offsets1.iter().map(table).collect(),
                sites2: t.offsets2.iter().map(table).collect(),
                coeff: t.coeff,
            })
            .collect();
        let mut dependents: Vec<Vec<usize>> = vec![Vec::new(); geom.sites()];
        for z in self.support() {
            for x in 0..geom.sites() {
                dependents[geom.shift(x, &z)].push(x);
            }
        }
        for d in &mut dependents {
            d.sort_unstable();
            d.dedup();
        }
        Ok(BoundRate {
            species: self.species,
            terms,
            dependents,
            sup: self.sup_rate(),
        })
    }

    /// `c_{i,x}(eta1, eta2)`.
    pub fn eval_on_config(&self, geom: &TorusGeometry, cfg: &Configuration, x: usize) -> f64 {
        self.terms
            .iter()
            .filter(|t| {
                t.offsets1.iter().all(|z| cfg.eta1[geom.shift(x, z)])
                    && t.offsets2.iter().all(|z| cfg.eta2[geom.shift(x, z)])
            })
            .map(|t| t.coeff)
            .sum()
    }

    /// Field extension: the monomials with `u`, `v` substituted for the
    /// occupancies.
    pub fn eval_on_field(
        &self,
        geom: &TorusGeometry,
        u: &Field,
        v: &Field,
        x: usize,
    ) -> Result<f64, RateError> {
        for f in [u, v] {
            if let Some((site, &value)) = f
                .values
                .iter()
                .enumerate()
                .find(|(_, v)| !(0.0..=1.0).contains(*v))
            {
                return Err(RateError::OutOfRange { site, value });
            }
        }
        Ok(self
            .terms
            .iter()
            .map(|t| {
                let p1: f64 = t.offsets1.iter().map(|z| u.values[geom.shift(x, z)]).product();
                let p2: f64 = t.offsets2.iter().map(|z| v.values[geom.shift(x, z)]).product();
                t.coeff * p1 * p2
            })
            .sum())
    }

    /// Parses the JSON description `{terms: [{offsets1, offsets2, coeff}]}`.
    pub fn from_json(species: Species, dim: usize, text: &str) -> Result<Self, RateError> {
        #[derive(Deserialize)]
        struct Desc {
            terms: Vec<Monomial>,
        }
        let desc: Desc = serde_json::from_str(text).map_err(|e| RateError::Json(e.to_string()))?;
        Self::new(species, dim, desc.terms)
    }
}

#[derive(Debug, Clone)]
struct BoundTerm {
    sites1: Vec<Vec<usize>>,
    sites2: Vec<Vec<usize>>,
    coeff: f64,
}

/// A rate polynomial resolved against a torus: offset lookups are table reads.
#[derive(Debug, Clone)]
pub struct BoundRate {
    species: Species,
    terms: Vec<BoundTerm>,
    dependents: Vec<Vec<usize>>,
    sup: f64,
}

impl BoundRate {
    pub fn species(&self) -> Species {
        self.species
    }

    pub fn sup_rate(&self) -> f64 {
        self.sup
    }

    pub fn eval_config(&self, eta1: &[bool], eta2: &[bool], x: usize) -> f64 {
        self.terms
            .iter()
            .filter(|t| {
                t.sites1.iter().all(|s| eta1[s[x]]) && t.sites2.iter().all(|s| eta2[s[x]])
            })
            .map(|t| t.coeff)
            .sum()
    }

    /// Field extension without range checks.
    pub fn eval_field(&self, u: &[f64], v: &[f64], x: usize) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                let mut p = t.coeff;
                for s in &t.sites1 {
                    p *= u[s[x]];
                }
                for s in &t.sites2 {
                    p *= v[s[x]];
                }
                p
            })
            .sum()
    }

    pub fn eval_field_all(&self, u: &[f64], v: &[f64]) -> Vec<f64> {
        (0..u.len()).map(|x| self.eval_field(u, v, x)).collect()
    }

    /// Sites whose rate reads the occupancy at `y`.
    pub fn dependents(&self, y: usize) -> &[usize] {
        &self.dependents[y]
    }
}

/// One of the three regimes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CasePreset {
    pub case: u8,
    pub m: u32,
    pub offsets: Vec<Vec<i64>>,
}

impl CasePreset {
    /// Checks the `(case, m)` pair and the offsets; `offsets = None` selects
    /// `z_i = i e_1`.
    pub fn new(case: u8, m: u32, offsets: Option<Vec<Vec<i64>>>, dim: usize) -> Result<Self, RateError> {
        let legal = match case {
            1 => m > 3,
            2 => m >= 1,
            3 => m > 1,
            _ => false,
        };
        if !legal {
            return Err(RateError::IllegalCase { case, m });
        }
        let expected = (m - 1) as usize;
        let offsets = offsets.unwrap_or_else(|| {
            (1..=expected as i64)
                .map(|i| {
                    let mut z = vec![0; dim];
                    z[0] = i;
                    z
                })
                .collect()
        });
        if offsets.len() != expected {
            return Err(RateError::OffsetCount {
                case,
                m,
                expected,
                got: offsets.len(),
            });
        }
        for (i, z) in offsets.iter().enumerate() {
            if z.len() != dim {
                return Err(RateError::OffsetDimension {
                    offset: z.clone(),
                    expected: dim,
                    got: z.len(),
                });
            }
            if z.iter().all(|&c| c == 0) {
                return Err(RateError::ZeroOffset(z.clone()));
            }
            if offsets[..i].contains(z) {
                return Err(RateError::RepeatedOffset);
            }
        }
        Ok(Self { case, m, offsets })
    }

    pub fn rates(&self, dim: usize) -> (RatePolynomial, RatePolynomial) {
        let product = |species, first: bool| {
            let term = Monomial {
                offsets1: if first { self.offsets.clone() } else { vec![] },
                offsets2: if first { vec![] } else { self.offsets.clone() },
                coeff: 1.0,
            };
            RatePolynomial::new(species, dim, vec![term]).expect("preset monomials are valid")
        };
        match self.case {
            1 => (product(Species::One, true), RatePolynomial::constant_one(Species::Two, dim)),
            2 => (product(Species::One, false), RatePolynomial::constant_one(Species::Two, dim)),
            _ => (RatePolynomial::constant_one(Species::One, dim), product(Species::Two, true)),
        }
    }
}

pub fn make_preset(
    case: u8,
    m: u32,
    offsets: Option<Vec<Vec<i64>>>,
    dim: usize,
) -> Result<(RatePolynomial, RatePolynomial), RateError> {
    Ok(CasePreset::new(case, m, offsets, dim)?.rates(dim))
}

/// Parses offsets such as `"e1,2e1,-e2,e1+e2"` (axes numbered from 1).
pub fn parse_offsets(text: &str, dim: usize) -> Result<Vec<Vec<i64>>, RateError> {
    let text = text.trim();
    if text.is_empty() {
        return Ok(vec![]);
    }
    text.split(',').map(|tok| parse_offset(tok.trim(), dim)).collect()
}

fn parse_offset(tok: &str, dim: usize) -> Result<Vec<i64>, RateError> {
    let bad = || RateError::Parse(format!("bad offset `{tok}`"));
    let mut z = vec![0i64; dim];
    let mut rest = tok;
    if rest.is_empty() {
        return Err(bad());
    }
    while !rest.is_empty() {
        let (sign, body) = match rest.as_bytes()[0] {
            b'-' => (-1, &rest[1..]),
            b'+' => (1, &rest[1..]),
            _ => (1, rest),
        };
        let end = body[1..].find(['+', '-']).map_or(body.len(), |i| i + 1);
        let (piece, tail) = body.split_at(end.min(body.len()));
        rest = tail;
        let e = piece.find('e').ok_or_else(bad)?;
        let mult: i64 = match &piece[..e] {
            "" => 1,
            s => s.parse().map_err(|_| bad())?,
        };
        let axis: usize = piece[e + 1..].parse().map_err(|_| bad())?;
        if axis == 0 || axis > dim {
            return Err(RateError::Parse(format!("axis {axis} out of range in `{tok}`")));
        }
        z[axis - 1] += sign * mult;
    }
    Ok(z)
}
