//! The domain `[b]^n` and exact residue arithmetic mod `b`.
//!
//! All products are taken through `u128` intermediates so that alphabets up
//! to `b = 2^40` never overflow. Points use coordinate 0 as the most
//! significant digit, so linear index order equals lexicographic point order.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Largest supported alphabet size.
pub const MAX_B: u64 = 1 << 40;

/// Cap on `n * log2(b)`, guarding absurd instance descriptions.
pub const MAX_DESC_BITS: f64 = 4096.0;

/// Default cap on `b^n` for exhaustive (full truth table) computations.
pub const EXHAUSTIVE_BUDGET: u128 = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Domain {
    pub n: usize,
    pub b: u64,
}

impl Domain {
    pub fn new(n: usize, b: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParam("n must be at least 1".into()));
        }
        if b < 2 || b > MAX_B {
            return Err(Error::InvalidParam(format!(
                "b must be in [2, 2^40], got {b}"
            )));
        }
        if n as f64 * (b as f64).log2() > MAX_DESC_BITS {
            return Err(Error::InvalidParam(format!(
                "n*log2(b) exceeds {MAX_DESC_BITS} bits"
            )));
        }
        Ok(Domain { n, b })
    }

    /// `b^n` when it fits in a `u128`.
    pub fn size(&self) -> Option<u128> {
        let mut acc: u128 = 1;
        for _ in 0..self.n {
            acc = acc.checked_mul(self.b as u128)?;
        }
        Some(acc)
    }

    /// `b^n` as `usize`, or an error pointing at the budget.
    pub fn dense_size(&self, budget: u128) -> Result<usize> {
        match self.size() {
            Some(s) if s <= budget => Ok(s as usize),
            Some(s) => Err(Error::BudgetExceeded { points: s, budget }),
            None => Err(Error::BudgetExceeded {
                points: u128::MAX,
                budget,
            }),
        }
    }

    pub fn contains(&self, x: &[u64]) -> bool {
        x.len() == self.n && x.iter().all(|&v| v < self.b)
    }

    /// Linear index of a point (coordinate 0 most significant).
    pub fn index_of(&self, x: &[u64]) -> usize {
        debug_assert!(self.contains(x));
        let mut idx: u128 = 0;
        for &v in x {
            idx = idx * self.b as u128 + v as u128;
        }
        idx as usize
    }

    /// Point for a linear index; inverse of [`Domain::index_of`].
    pub fn point_of(&self, mut idx: usize, out: &mut [u64]) {
        debug_assert_eq!(out.len(), self.n);
        for i in (0..self.n).rev() {
            out[i] = (idx as u128 % self.b as u128) as u64;
            idx = (idx as u128 / self.b as u128) as usize;
        }
    }

    pub fn point_vec(&self, idx: usize) -> Vec<u64> {
        let mut p = vec![0u64; self.n];
        self.point_of(idx, &mut p);
        p
    }
}

/// `a * c mod m` without overflow for `m <= 2^40`.
#[inline(always)]
pub fn mul_mod(a: u64, c: u64, m: u64) -> u64 {
    ((a as u128 * c as u128) % m as u128) as u64
}

/// Dot product `<a, x> mod m`.
#[inline(always)]
pub fn dot_mod(a: &[u64], x: &[u64], m: u64) -> u64 {
    debug_assert_eq!(a.len(), x.len());
    let mut acc: u128 = 0;
    for (&ai, &xi) in a.iter().zip(x) {
        acc += ai as u128 * xi as u128;
        if acc >= (1 << 126) {
            acc %= m as u128;
        }
    }
    (acc % m as u128) as u64
}

pub fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// Modular inverse of `z` mod `m` via the extended Euclid algorithm.
pub fn inv_mod(z: u64, m: u64) -> Result<u64> {
    if m < 2 {
        return Err(Error::InvalidParam(format!("modulus {m} too small")));
    }
    let (mut old_r, mut r) = (z as i128, m as i128);
    let (mut old_s, mut s) = (1i128, 0i128);
    while r != 0 {
        let q = old_r / r;
        (old_r, r) = (r, old_r - q * r);
        (old_s, s) = (s, old_s - q * s);
    }
    if old_r != 1 {
        return Err(Error::NotCoprime(z, m));
    }
    Ok(old_s.rem_euclid(m as i128) as u64)
}

/// Distance of a residue from 0 on the cycle `Z_b`: `min(a, b - a)`.
#[inline(always)]
pub fn cyclic_abs(a: u64, b: u64) -> u64 {
    debug_assert!(a < b);
    a.min(b - a)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_roundtrip_is_lexicographic() {
        let d = Domain::new(3, 5).unwrap();
        let mut prev: Option<Vec<u64>> = None;
        for idx in 0..d.dense_size(EXHAUSTIVE_BUDGET).unwrap() {
            let p = d.point_vec(idx);
            assert_eq!(d.index_of(&p), idx);
            if let Some(q) = prev {
                assert!(q < p);
            }
            prev = Some(p);
        }
    }

    #[test]
    fn inv_mod_matches_definition() {
        for m in [2u64, 3, 5, 8, 9, 97, (1 << 40) - 1] {
            for z in 1..m.min(60) {
                match inv_mod(z, m) {
                    Ok(zi) => {
                        assert_eq!(gcd(z, m), 1);
                        assert_eq!(mul_mod(z, zi, m), 1);
                    }
                    Err(_) => assert_ne!(gcd(z, m), 1),
                }
            }
        }
    }

    #[test]
    fn inv_of_two_mod_five_is_three() {
        assert_eq!(inv_mod(2, 5).unwrap(), 3);
    }

    #[test]
    fn domain_validation() {
        assert!(Domain::new(0, 4).is_err());
        assert!(Domain::new(2, 1).is_err());
        assert!(Domain::new(2, MAX_B + 1).is_err());
        assert!(Domain::new(1, MAX_B).is_ok());
        assert!(Domain::new(200, 1 << 30).is_err());
    }

    #[test]
    fn cyclic_abs_examples() {
        assert_eq!(cyclic_abs(0, 8), 0);
        assert_eq!(cyclic_abs(3, 8), 3);
        assert_eq!(cyclic_abs(5, 8), 3);
        assert_eq!(cyclic_abs(7, 8), 1);
    }
}
