//! Target classes over `[b]^n`: interval literals, rectangles, parity gates,
//! unions, and majority circuits, plus the membership-query oracle they sit
//! behind. Outputs are `{-1, +1}` with `-1` meaning *true*.

use crate::domain::{gcd, mul_mod, Domain, EXHAUSTIVE_BUDGET};
use crate::error::{Error, Result};
use crate::exec;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::sync::atomic::{AtomicU64, Ordering};

/// Single-variable literal: `sign` on the interval after an optional twist.
///
/// Evaluates to `sign` when `x*z mod b` lies in `[lo, hi]`, `-sign`
/// otherwise. `z = 1` gives the basic (interval) literal; any `z` coprime
/// with `b` relabels the axis, e.g. `z = 2^{-1} mod b` turns an interval
/// test into a least-significant-bit test for odd `b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Literal {
    pub var: usize,
    pub sign: i8,
    pub lo: u64,
    pub hi: u64,
    pub z: u64,
}

impl Literal {
    pub fn is_basic(&self) -> bool {
        self.z == 1
    }

    #[inline]
    pub fn eval(&self, x: u64, b: u64) -> i8 {
        let y = if self.z == 1 { x } else { mul_mod(x, self.z, b) };
        if self.lo <= y && y <= self.hi {
            self.sign
        } else {
            -self.sign
        }
    }

    fn validate(&self, domain: Domain) -> Result<()> {
        if self.var >= domain.n {
            return Err(Error::InvalidParam(format!(
                "literal var {} out of range for n = {}",
                self.var, domain.n
            )));
        }
        if self.sign != 1 && self.sign != -1 {
            return Err(Error::InvalidParam(format!(
                "literal sign must be -1 or 1, got {}",
                self.sign
            )));
        }
        if self.lo > self.hi || self.hi >= domain.b {
            return Err(Error::InvalidParam(format!(
                "literal range [{}, {}] invalid for b = {}",
                self.lo, self.hi, domain.b
            )));
        }
        if self.z == 0 || self.z >= domain.b || gcd(self.z, domain.b) != 1 {
            return Err(Error::NotCoprime(self.z, domain.b));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GateKind {
    #[serde(rename = "rectangle")]
    Rectangle,
    #[serde(rename = "parity")]
    Parity,
}

/// Conjunction (`rectangle`) or product (`parity`) of literals on distinct
/// variables.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gate {
    #[serde(rename = "type")]
    pub kind: GateKind,
    pub literals: Vec<Literal>,
}

impl Gate {
    pub fn eval(&self, x: &[u64], b: u64) -> i8 {
        match self.kind {
            GateKind::Rectangle => {
                for lit in &self.literals {
                    if lit.eval(x[lit.var], b) != -1 {
                        return 1;
                    }
                }
                -1
            }
            GateKind::Parity => {
                let mut prod: i8 = 1;
                for lit in &self.literals {
                    prod *= lit.eval(x[lit.var], b);
                }
                prod
            }
        }
    }

    fn validate(&self, domain: Domain) -> Result<()> {
        if self.literals.is_empty() {
            return Err(Error::InvalidParam("gate with no literals".into()));
        }
        let mut seen = BTreeSet::new();
        for lit in &self.literals {
            lit.validate(domain)?;
            if !seen.insert(lit.var) {
                return Err(Error::InvalidParam(format!(
                    "gate repeats variable {}",
                    lit.var
                )));
            }
            if self.kind == GateKind::Rectangle && !lit.is_basic() {
                return Err(Error::NonBasicLiteral(lit.z));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConceptKind {
    /// Or of rectangles: true when any rectangle is true.
    #[serde(rename = "union_rect")]
    UnionRect,
    /// Majority vote over parity gates; fan-in must be odd.
    #[serde(rename = "maj_parity")]
    MajParity,
    /// Majority vote over rectangles; fan-in must be odd.
    #[serde(rename = "maj_or_rect")]
    MajOrRect,
}

/// A complete target; field order matches the on-disk JSON schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Concept {
    pub n: usize,
    pub b: u64,
    pub kind: ConceptKind,
    pub gates: Vec<Gate>,
    pub disjoint: bool,
}

impl Concept {
    pub fn domain(&self) -> Domain {
        Domain { n: self.n, b: self.b }
    }

    pub fn validate(&self) -> Result<()> {
        let domain = Domain::new(self.n, self.b)?;
        if self.gates.is_empty() {
            return Err(Error::InvalidParam("concept with no gates".into()));
        }
        for gate in &self.gates {
            gate.validate(domain)?;
            let want = match self.kind {
                ConceptKind::MajParity => GateKind::Parity,
                _ => GateKind::Rectangle,
            };
            if gate.kind != want {
                return Err(Error::InvalidParam(format!(
                    "{:?} concept contains a {:?} gate",
                    self.kind, gate.kind
                )));
            }
        }
        if matches!(self.kind, ConceptKind::MajParity | ConceptKind::MajOrRect)
            && self.gates.len() % 2 == 0
        {
            return Err(Error::InvalidParam(format!(
                "majority fan-in must be odd, got {}",
                self.gates.len()
            )));
        }
        Ok(())
    }

    pub fn eval(&self, x: &[u64]) -> i8 {
        debug_assert!(self.domain().contains(x));
        match self.kind {
            ConceptKind::UnionRect => {
                for gate in &self.gates {
                    if gate.eval(x, self.b) == -1 {
                        return -1;
                    }
                }
                1
            }
            ConceptKind::MajParity | ConceptKind::MajOrRect => {
                let sum: i32 = self.gates.iter().map(|g| g.eval(x, self.b) as i32).sum();
                debug_assert!(sum != 0, "odd fan-in cannot tie");
                if sum > 0 {
                    1
                } else {
                    -1
                }
            }
        }
    }

    /// True when every literal in every gate is basic (`z = 1`).
    pub fn all_basic(&self) -> bool {
        self.gates
            .iter()
            .all(|g| g.literals.iter().all(|l| l.is_basic()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("concept serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Concept = serde_json::from_str(s)?;
        c.validate()?;
        Ok(c)
    }
}

/// Counted membership access to a target.
pub trait MembershipOracle: Sync {
    fn domain(&self) -> Domain;
    fn query(&self, x: &[u64]) -> i8;
    fn query_count(&self) -> u64;
}

pub struct ConceptOracle {
    concept: Concept,
    count: AtomicU64,
}

impl ConceptOracle {
    pub fn new(concept: Concept) -> Result<Self> {
        concept.validate()?;
        Ok(ConceptOracle {
            concept,
            count: AtomicU64::new(0),
        })
    }

    pub fn concept(&self) -> &Concept {
        &self.concept
    }
}

impl MembershipOracle for ConceptOracle {
    fn domain(&self) -> Domain {
        self.concept.domain()
    }

    fn query(&self, x: &[u64]) -> i8 {
        self.count.fetch_add(1, Ordering::Relaxed);
        self.concept.eval(x)
    }

    fn query_count(&self) -> u64 {
        self.count.load(Ordering::Relaxed)
    }
}

/// Closure-backed oracle, mostly for tests and planted targets.
pub struct FnOracle<F: Fn(&[u64]) -> i8 + Sync> {
    domain: Domain,
    f: F,
    count: AtomicU64,
}

impl<F: Fn(&[u64]) -> i8 + Sync> FnOracle<F> {
    pub fn new(domain: Domain, f: F) -> Self {
        FnOracle {
            domain,
            f,
            count: AtomicU64::new(0),
        }
    }
}

impl<F: Fn(&[u64]) -> i8 + Sync> MembershipOracle for FnOracle<F> {
    fn domain(&self) -> Domain {
        self.domain
    }

    fn query(&self, x: &[u64]) -> i8 {
        self.count.fetch_add(1, Ordering::Relaxed);
        (self.f)(x)
    }

    fn query_count(&self) -> u64 {
        self.count.load(Ordering::Relaxed)
    }
}

/// Dense truth table of an oracle, one counted query per point.
pub fn truth_table(oracle: &dyn MembershipOracle, budget: u128) -> Result<Vec<i8>> {
    let domain = oracle.domain();
    let len = domain.dense_size(budget)?;
    Ok(exec::map_indexed(len, |idx| {
        let mut x = vec![0u64; domain.n];
        domain.point_of(idx, &mut x);
        oracle.query(&x)
    }))
}

/// Per-coordinate candidate boundary values `{lo, hi+1 mod b}` of every
/// basic literal mentioning the coordinate. Every sensitive value of the
/// concept lies in this set.
pub fn candidate_sensitive_values(concept: &Concept) -> Result<Vec<BTreeSet<u64>>> {
    let mut out = vec![BTreeSet::new(); concept.n];
    for gate in &concept.gates {
        for lit in &gate.literals {
            if !lit.is_basic() {
                return Err(Error::NonBasicLiteral(lit.z));
            }
            out[lit.var].insert(lit.lo);
            out[lit.var].insert((lit.hi + 1) % concept.b);
        }
    }
    Ok(out)
}

/// Whether flipping coordinate `i` from `sigma-1 mod b` to `sigma` at the
/// witness point changes the target. Exactly two queries.
pub fn is_sensitive(
    oracle: &dyn MembershipOracle,
    i: usize,
    sigma: u64,
    witness: &[u64],
) -> Result<bool> {
    let domain = oracle.domain();
    if i >= domain.n || sigma >= domain.b || !domain.contains(witness) {
        return Err(Error::InvalidParam(format!(
            "is_sensitive arguments out of range (i={i}, sigma={sigma})"
        )));
    }
    let mut x = witness.to_vec();
    x[i] = if sigma == 0 { domain.b - 1 } else { sigma - 1 };
    let before = oracle.query(&x);
    x[i] = sigma;
    let after = oracle.query(&x);
    Ok(before != after)
}

/// For a majority concept, the child gate best correlated with the output
/// under an explicit distribution over the whole (dense) domain.
///
/// Returns `(gate index, E_D[f * h_i])`; the winner always satisfies
/// `E_D[f * h_i] >= 1/s`.
pub fn best_discriminator(concept: &Concept, dist: &[f64]) -> Result<(usize, f64)> {
    concept.validate()?;
    if !matches!(concept.kind, ConceptKind::MajParity | ConceptKind::MajOrRect) {
        return Err(Error::InvalidParam(
            "best_discriminator requires a majority concept".into(),
        ));
    }
    let domain = concept.domain();
    let len = domain.dense_size(EXHAUSTIVE_BUDGET)?;
    if dist.len() != len {
        return Err(Error::InvalidParam(format!(
            "distribution length {} != b^n = {len}",
            dist.len()
        )));
    }
    let total: f64 = dist.iter().sum();
    if (total - 1.0).abs() > 1e-9 || dist.iter().any(|&p| p < 0.0) {
        return Err(Error::InvalidParam(
            "distribution must be nonnegative and sum to 1".into(),
        ));
    }
    let mut best = (0usize, f64::NEG_INFINITY);
    for (gi, gate) in concept.gates.iter().enumerate() {
        let corr = exec::sum_indexed(len, |idx| {
            let mut x = vec![0u64; domain.n];
            domain.point_of(idx, &mut x);
            dist[idx] * (concept.eval(&x) as f64) * (gate.eval(&x, concept.b) as f64)
        });
        if corr > best.1 {
            best = (gi, corr);
        }
    }
    Ok(best)
}

/// Parameters for random target generation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenParams {
    pub kind: ConceptKind,
    pub n: usize,
    pub b: u64,
    /// Gate count (odd for majority kinds).
    pub s: usize,
    /// Literals per gate.
    pub r: usize,
    /// Make rectangles pairwise disjoint via coordinate-0 slabs.
    #[serde(default)]
    pub disjoint: bool,
    /// Allow twisted literals in parity gates.
    #[serde(default)]
    pub twist: bool,
}

/// Draw a random target. Deterministic for a fixed generator state.
pub fn gen_target<R: Rng>(params: &GenParams, rng: &mut R) -> Result<Concept> {
    let domain = Domain::new(params.n, params.b)?;
    if params.s == 0 || params.r == 0 {
        return Err(Error::InvalidParam("s and r must be >= 1".into()));
    }
    if params.r > params.n {
        return Err(Error::InvalidParam(format!(
            "r = {} exceeds n = {}",
            params.r, params.n
        )));
    }
    let majority = matches!(
        params.kind,
        ConceptKind::MajParity | ConceptKind::MajOrRect
    );
    if majority && params.s % 2 == 0 {
        return Err(Error::InvalidParam(format!(
            "majority fan-in must be odd, got {}",
            params.s
        )));
    }
    let rect_kind = params.kind != ConceptKind::MajParity;
    if params.disjoint && !rect_kind {
        return Err(Error::InvalidParam(
            "disjoint generation applies to rectangle kinds".into(),
        ));
    }
    if params.disjoint && (params.s as u64) * 2 > params.b {
        return Err(Error::InvalidParam(format!(
            "cannot fit {} disjoint slabs in [0, {})",
            params.s, params.b
        )));
    }

    let b = params.b;
    let coords: Vec<usize> = (0..params.n).collect();
    let mut gates = Vec::with_capacity(params.s);
    for slab in 0..params.s {
        let mut vars = coords.clone();
        if params.disjoint {
            vars.remove(0);
        }
        vars.shuffle(rng);
        vars.truncate(params.r - usize::from(params.disjoint));
        if params.disjoint {
            vars.insert(0, 0);
        }
        vars.sort_unstable();

        let mut literals = Vec::with_capacity(params.r);
        for &var in &vars {
            let (lo, hi) = if params.disjoint && var == 0 {
                let width = b / params.s as u64;
                let base = slab as u64 * width;
                let top = base + width - 1;
                let lo = rng.gen_range(base..=top);
                (lo, rng.gen_range(lo..=top))
            } else {
                let a = rng.gen_range(0..b);
                let c = rng.gen_range(0..b);
                (a.min(c), a.max(c))
            };
            let sign = if rect_kind || rng.gen::<bool>() { -1 } else { 1 };
            let z = if params.twist && !rect_kind {
                loop {
                    let z = rng.gen_range(1..b);
                    if gcd(z, b) == 1 {
                        break z;
                    }
                }
            } else {
                1
            };
            literals.push(Literal {
                var,
                sign,
                lo,
                hi,
                z,
            });
        }
        gates.push(Gate {
            kind: if rect_kind {
                GateKind::Rectangle
            } else {
                GateKind::Parity
            },
            literals,
        });
    }
    let concept = Concept {
        n: domain.n,
        b,
        kind: params.kind,
        gates,
        disjoint: params.disjoint,
    };
    concept.validate()?;
    Ok(concept)
}
