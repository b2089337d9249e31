//! Exact Fourier analysis over `Z_b^n`.
//!
//! Characters are `chi_alpha(x) = omega^(<alpha, x>)` with
//! `omega = exp(2*pi*i/b)`; coefficients are `f_hat(alpha) =
//! E_x[f(x) * conj(chi_alpha(x))]` under the uniform distribution. The
//! transform here is the exhaustive one, evaluated axis by axis so an
//! `N`-point table costs `O(n * b * N)` operations, exact up to f64
//! rounding. Query-based sparse recovery lives in [`crate::sft`].

use crate::concepts::Literal;
use crate::domain::{cyclic_abs, inv_mod, mul_mod, Domain};
use crate::error::{Error, Result};
use crate::exec;
use num_complex::Complex64;
use std::collections::BTreeMap;
use std::f64::consts::PI;

/// Amplitudes below this are treated as exact zeros and pruned.
pub const PRUNE_EPS: f64 = 1e-12;

/// `chi_alpha(x)` for `alpha, x` in `[b]^n`.
pub fn char_eval(domain: Domain, alpha: &[u64], x: &[u64]) -> Complex64 {
    let d = crate::domain::dot_mod(alpha, x, domain.b);
    unit_phase(d, domain.b)
}

/// `exp(2*pi*i * k/b)` with `k` already reduced mod `b`.
#[inline]
pub fn unit_phase(k: u64, b: u64) -> Complex64 {
    let t = 2.0 * PI * (k as f64) / (b as f64);
    Complex64::new(t.cos(), t.sin())
}

/// Sparse spectrum: frequency vector -> coefficient, in lexicographic order.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub domain: Domain,
    entries: BTreeMap<Vec<u64>, Complex64>,
}

impl Spectrum {
    pub fn new(domain: Domain) -> Self {
        Spectrum {
            domain,
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, alpha: Vec<u64>, amp: Complex64) {
        debug_assert!(self.domain.contains(&alpha));
        if amp.norm() >= PRUNE_EPS {
            self.entries.insert(alpha, amp);
        }
    }

    pub fn amplitude(&self, alpha: &[u64]) -> Complex64 {
        self.entries
            .get(alpha)
            .copied()
            .unwrap_or(Complex64::new(0.0, 0.0))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Vec<u64>, &Complex64)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Sum of |coefficient| over the spectrum.
    pub fn l1(&self) -> f64 {
        self.entries.values().map(|c| c.norm()).sum()
    }

    /// Largest |coefficient|.
    pub fn linf(&self) -> f64 {
        self.entries.values().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// Sum of |coefficient|^2 (equals `E[|f|^2]` for an exhaustive spectrum).
    pub fn power(&self) -> f64 {
        self.entries.values().map(|c| c.norm_sqr()).sum()
    }

    /// Synthesize the function value at `x`.
    pub fn eval_at(&self, x: &[u64]) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for (alpha, amp) in &self.entries {
            acc += amp * char_eval(self.domain, alpha, x);
        }
        acc
    }

    /// CSV rows `alpha_0,..,alpha_{n-1},re,im`, lexicographic in frequency.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (alpha, amp) in &self.entries {
            for a in alpha {
                out.push_str(&a.to_string());
                out.push(',');
            }
            out.push_str(&amp.re.to_string());
            out.push(',');
            out.push_str(&amp.im.to_string());
            out.push('\n');
        }
        out
    }
}

fn root_table(b: u64) -> Vec<Complex64> {
    // roots[k] = conj(chi) step = exp(-2*pi*i*k/b)
    (0..b as usize)
        .map(|k| unit_phase(k as u64, b).conj())
        .collect()
}

/// Exhaustive transform of a dense table indexed by [`Domain::index_of`].
///
/// Costs `O(n * b * b^n)`; errors out when `b^n` exceeds `budget` so callers
/// know to switch to the query-based search in [`crate::sft`].
pub fn dft_exact(domain: Domain, table: &[Complex64], budget: u128) -> Result<Spectrum> {
    let len = domain.dense_size(budget)?;
    if table.len() != len {
        return Err(Error::InvalidParam(format!(
            "table length {} does not match b^n = {len}",
            table.len()
        )));
    }
    let b = domain.b as usize;
    let roots = root_table(domain.b);
    let mut work: Vec<Complex64> = table.to_vec();
    for axis in 0..domain.n {
        let stride = b.pow((domain.n - 1 - axis) as u32);
        let src = work;
        work = exec::map_indexed(len, |idx| {
            let digit = (idx / stride) % b;
            let base = idx - digit * stride;
            let mut acc = Complex64::new(0.0, 0.0);
            for t in 0..b {
                let k = mul_mod(digit as u64, t as u64, domain.b) as usize;
                acc += src[base + t * stride] * roots[k];
            }
            acc
        });
    }
    let scale = 1.0 / len as f64;
    let mut spec = Spectrum::new(domain);
    let mut alpha = vec![0u64; domain.n];
    for (idx, amp) in work.into_iter().enumerate() {
        let amp = amp * scale;
        if amp.norm() >= PRUNE_EPS {
            domain.point_of(idx, &mut alpha);
            spec.insert(alpha.clone(), amp);
        }
    }
    Ok(spec)
}

/// Transform of a `{-1,+1}`-valued table.
pub fn dft_signs(domain: Domain, table: &[i8], budget: u128) -> Result<Spectrum> {
    let complex: Vec<Complex64> = table
        .iter()
        .map(|&s| Complex64::new(s as f64, 0.0))
        .collect();
    dft_exact(domain, &complex, budget)
}

/// `alpha * z^{-1} mod b`: the frequency relabeling induced by evaluating a
/// function at `x*z mod b` instead of `x`.
pub fn twist_frequency(alpha: u64, z: u64, b: u64) -> Result<u64> {
    if alpha >= b {
        return Err(Error::InvalidParam(format!("alpha {alpha} >= b {b}")));
    }
    let zi = inv_mod(z, b)?;
    Ok(mul_mod(alpha, zi, b))
}

/// Closed-form coefficient of a single-variable literal at frequency `gamma`.
///
/// For a basic literal (sign `s` on `[lo, hi]`, `-s` elsewhere) this is the
/// normalized geometric sum in Dirichlet form; a twisted literal reads the
/// base literal's coefficient at `gamma * z^{-1} mod b`. Exact up to f64
/// rounding: all phase exponents are reduced as integers before any
/// trigonometry.
pub fn literal_coefficient(lit: &Literal, b: u64, gamma: u64) -> Result<Complex64> {
    if gamma >= b {
        return Err(Error::InvalidParam(format!("gamma {gamma} >= b {b}")));
    }
    let g = if lit.z == 1 {
        gamma
    } else {
        twist_frequency(gamma, lit.z, b)?
    };
    Ok(basic_coefficient(lit.sign, lit.lo, lit.hi, b, g))
}

fn basic_coefficient(sign: i8, lo: u64, hi: u64, b: u64, gamma: u64) -> Complex64 {
    let w = hi - lo + 1;
    let s = sign as f64;
    if gamma == 0 {
        let mean = (2.0 * w as f64 - b as f64) / b as f64;
        return Complex64::new(s * mean, 0.0);
    }
    // sum_{x=lo..=hi} omega^{-gamma x}
    //   = exp(i*pi*p/b) * sin(pi*gamma*w/b) / sin(pi*gamma/b),
    // p = -gamma*(2*lo + w - 1) mod 2b; both reductions are exact in u128.
    let two_b = 2 * b as u128;
    let phase_num = (gamma as u128 * (2 * lo as u128 + w as u128 - 1)) % two_b;
    let p = ((two_b - phase_num) % two_b) as u64;
    let q = (gamma as u128 * w as u128 % two_b) as u64;
    let half = PI / b as f64;
    let ratio = (half * q as f64).sin() / (half * gamma as f64).sin();
    let ang = half * p as f64;
    let geom = Complex64::new(ang.cos(), ang.sin()) * ratio;
    geom * (2.0 * s / b as f64)
}

/// Frequencies kept by the `k`-restriction of a literal.
///
/// Basic literals keep `cyclic_abs(alpha) <= k`; a twisted literal keeps the
/// image of that set under multiplication by `z`, i.e. frequencies whose
/// untwisted index is small.
pub fn k_restriction(lit: &Literal, b: u64, k: u64) -> Result<Spectrum> {
    if k == 0 {
        return Err(Error::InvalidParam("k must be >= 1".into()));
    }
    let domain = Domain::new(1, b)?;
    let mut spec = Spectrum::new(domain);
    let mut push = |beta: u64| -> Result<()> {
        let alpha = mul_mod(beta, lit.z, b);
        let amp = basic_coefficient(lit.sign, lit.lo, lit.hi, b, beta);
        spec.insert(vec![alpha], amp);
        Ok(())
    };
    push(0)?;
    for beta in 1..=k.min(b - 1) {
        push(beta)?;
        let mirror = b - beta;
        if cyclic_abs(mirror, b) <= k {
            push(mirror)?;
        }
    }
    Ok(spec)
}

/// Energy outside the restriction: `1 - sum |kept|^2` for a +-1 function.
pub fn restriction_tail_energy(restricted: &Spectrum) -> f64 {
    (1.0 - restricted.power()).max(0.0)
}

/// Dense truth table of a single-variable literal, for oracle comparisons.
pub fn literal_table(lit: &Literal, b: u64) -> Vec<i8> {
    (0..b).map(|x| lit.eval(x, b)).collect()
}
