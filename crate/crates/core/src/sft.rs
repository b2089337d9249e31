//! Query-efficient recovery of heavy Fourier coefficients.
//!
//! [`find_heavy_brute`] tabulates the function and transforms it exactly;
//! it is the reference route and needs `b^n` queries. [`find_heavy_sft`]
//! needs only polylogarithmically many queries in `b`: it grows frequency
//! prefixes one coordinate at a time, keeping a prefix alive only while the
//! spectral weight behind it stays above `gamma^2 / 4`. On each coordinate
//! the value is localized by interval bisection; an interval `I` of width
//! `w` is scored by the windowed band energy
//!
//! ```text
//! W(p, I) = sum over alpha with prefix p of |f^(alpha)|^2 * |D_l(alpha_j - c)|^2
//! ```
//!
//! where `D_l` is the normalized Dirichlet kernel of order `l ~ b/(2w)`
//! centered at `c`, the midpoint of `I`. Frequencies inside `I` keep at
//! least 0.81 of their weight, so thresholding at `gamma^2 / 4` never
//! starves a truly heavy prefix while Parseval keeps the number of
//! survivors per level bounded by `O(sup^2 / gamma^2)`.
//!
//! `W(p, I)` admits an unbiased two-query estimator: with `x1 = (u, y+t, w)`
//! and `x2 = (u', y+t', w)` for independent uniform `u, u'` over the prefix
//! block and `t, t'` over `[l]`,
//!
//! ```text
//! E[ f(x1) f(x2) cos(2*pi*k/b) ] = W(p, I),
//! k = <p,u> - <p,u'> + c*(t - t') mod b,
//! ```
//!
//! and the module estimates it by a median of independent arm means. The
//! defaults (7 arms, batch sized by `Var <= sup^2 * E[f^2]` against a target
//! error of `gamma^2 / 8`) are pragmatic rather than worst-case: the
//! worst-case schedule is supported by raising `arms` and `batch_factor`.
//!
//! Contract of both `find_heavy_*` routes, with probability `1 - delta` for
//! the sampling route: every `alpha` with `|f^(alpha)| >= gamma` is
//! returned, nothing with `|f^(alpha)| < gamma / 2` is returned, and
//! reported amplitudes are within `gamma / 4` of the truth.

use crate::domain::{dot_mod, Domain, EXHAUSTIVE_BUDGET};
use crate::error::{Error, Result};
use crate::exec;
use crate::fourier::{self, Spectrum};
use crate::stream::Streams;
use num_complex::Complex64;
use rand::Rng;
use std::f64::consts::TAU;
use std::sync::atomic::{AtomicU64, Ordering};

/// Real-valued function with counted query access and coarse norm bounds.
///
/// `sup_bound` must dominate `|f(x)|` everywhere; `second_moment_bound`
/// must dominate `E[f(x)^2]` under the uniform distribution. Both feed
/// sample-size choices, so looser bounds cost queries, never correctness.
pub trait QueryFunction: Sync {
    fn domain(&self) -> Domain;
    fn eval(&self, x: &[u64]) -> f64;
    fn sup_bound(&self) -> f64;
    fn second_moment_bound(&self) -> f64;
    fn query_count(&self) -> u64;
}

/// Dense-table function, mostly for tests and exhaustive-mode callers.
pub struct TableQuery {
    domain: Domain,
    table: Vec<f64>,
    sup: f64,
    m2: f64,
    count: AtomicU64,
}

impl TableQuery {
    pub fn new(domain: Domain, table: Vec<f64>) -> Result<Self> {
        let len = domain.dense_size(EXHAUSTIVE_BUDGET)?;
        if table.len() != len {
            return Err(Error::InvalidParam(format!(
                "table length {} does not match b^n = {len}",
                table.len()
            )));
        }
        let sup = table.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let m2 = table.iter().map(|v| v * v).sum::<f64>() / len as f64;
        Ok(TableQuery {
            domain,
            table,
            sup,
            m2,
            count: AtomicU64::new(0),
        })
    }
}

impl QueryFunction for TableQuery {
    fn domain(&self) -> Domain {
        self.domain
    }

    fn eval(&self, x: &[u64]) -> f64 {
        self.count.fetch_add(1, Ordering::Relaxed);
        self.table[self.domain.index_of(x)]
    }

    fn sup_bound(&self) -> f64 {
        self.sup
    }

    fn second_moment_bound(&self) -> f64 {
        self.m2
    }

    fn query_count(&self) -> u64 {
        self.count.load(Ordering::Relaxed)
    }
}

/// Synthesized function of a known sparse spectrum (planted instances).
///
/// `sup` is the amplitude l1 norm, the second moment is exact by Parseval.
pub struct SpectrumQuery {
    spec: Spectrum,
    sup: f64,
    m2: f64,
    count: AtomicU64,
}

impl SpectrumQuery {
    pub fn new(spec: Spectrum) -> Self {
        let sup = spec.l1();
        let m2 = spec.power();
        SpectrumQuery {
            spec,
            sup,
            m2,
            count: AtomicU64::new(0),
        }
    }

    pub fn spectrum(&self) -> &Spectrum {
        &self.spec
    }
}

impl QueryFunction for SpectrumQuery {
    fn domain(&self) -> Domain {
        self.spec.domain
    }

    fn eval(&self, x: &[u64]) -> f64 {
        self.count.fetch_add(1, Ordering::Relaxed);
        self.spec.eval_at(x).re
    }

    fn sup_bound(&self) -> f64 {
        self.sup
    }

    fn second_moment_bound(&self) -> f64 {
        self.m2
    }

    fn query_count(&self) -> u64 {
        self.count.load(Ordering::Relaxed)
    }
}

/// Membership oracle viewed as a +-1 valued query function.
pub struct OracleQuery<'a> {
    oracle: &'a dyn crate::concepts::MembershipOracle,
}

impl<'a> OracleQuery<'a> {
    pub fn new(oracle: &'a dyn crate::concepts::MembershipOracle) -> Self {
        OracleQuery { oracle }
    }
}

impl QueryFunction for OracleQuery<'_> {
    fn domain(&self) -> Domain {
        self.oracle.domain()
    }

    fn eval(&self, x: &[u64]) -> f64 {
        self.oracle.query(x) as f64
    }

    fn sup_bound(&self) -> f64 {
        1.0
    }

    fn second_moment_bound(&self) -> f64 {
        1.0
    }

    fn query_count(&self) -> u64 {
        self.oracle.query_count()
    }
}

/// One recovered frequency with its (estimated or exact) amplitude.
#[derive(Debug, Clone, PartialEq)]
pub struct HeavyCoefficient {
    pub alpha: Vec<u64>,
    pub amplitude: Complex64,
}

/// Threshold-independent knobs of the search, so callers that sweep
/// `gamma` can carry one tuning around.
#[derive(Debug, Clone, PartialEq)]
pub struct SftTuning {
    pub arms: usize,
    pub batch_factor: f64,
    pub batch_cap: usize,
    pub node_test_cap: u64,
    pub small_b: u64,
}

impl Default for SftTuning {
    fn default() -> Self {
        SftTuning {
            arms: 7,
            batch_factor: 1.0,
            batch_cap: 1 << 18,
            node_test_cap: 1 << 20,
            small_b: 32,
        }
    }
}

impl SftTuning {
    pub fn params(&self, gamma: f64, delta: f64) -> SftParams {
        SftParams {
            gamma,
            delta,
            arms: self.arms,
            batch_factor: self.batch_factor,
            batch_cap: self.batch_cap,
            node_test_cap: self.node_test_cap,
            small_b: self.small_b,
        }
    }
}

/// Knobs of the sampling search. `new` fills pragmatic defaults.
#[derive(Debug, Clone)]
pub struct SftParams {
    /// Heaviness threshold; everything at or above it must be found.
    pub gamma: f64,
    /// Total failure probability budget of one search.
    pub delta: f64,
    /// Median-of-means arms per interval test (forced odd).
    pub arms: usize,
    /// Multiplier on the variance-derived per-arm batch size.
    pub batch_factor: f64,
    /// Hard per-arm batch ceiling.
    pub batch_cap: usize,
    /// Abort when a single search runs more interval tests than this.
    pub node_test_cap: u64,
    /// For `b` at or below this, enumerate coordinate values directly
    /// instead of bisecting.
    pub small_b: u64,
}

impl SftParams {
    pub fn new(gamma: f64, delta: f64) -> Self {
        SftTuning::default().params(gamma, delta)
    }

    fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidParam(format!(
                "delta must lie in (0,1), got {}",
                self.delta
            )));
        }
        if self.arms == 0 || self.batch_factor <= 0.0 || self.batch_cap == 0 {
            return Err(Error::InvalidParam(
                "arms, batch_factor, batch_cap must be positive".into(),
            ));
        }
        if self.small_b < 2 {
            return Err(Error::InvalidParam("small_b must be at least 2".into()));
        }
        Ok(())
    }
}

fn ceil_log2(b: u64) -> u32 {
    64 - (b - 1).leading_zeros()
}

/// Survivor cap per search level: a Parseval bound on how many disjoint
/// bands can carry weight `gamma^2 / 4`, with slack for window leakage.
fn width_cap(sup: f64, gamma: f64) -> usize {
    let cap = (16.0 * sup * sup / (gamma * gamma)).ceil();
    cap.clamp(16.0, 1e9) as usize
}

/// Monte Carlo mean of `f(x) * conj(chi_alpha(x))` over
/// `m = ceil(2 * (sup/eta)^2 * ln(4/delta))` uniform points: the Fourier
/// coefficient `f^(alpha)` to additive accuracy `eta` with probability
/// `1 - delta`.
pub fn estimate_coefficient<R: Rng>(
    f: &dyn QueryFunction,
    alpha: &[u64],
    eta: f64,
    delta: f64,
    rng: &mut R,
) -> Result<Complex64> {
    let d = f.domain();
    if alpha.len() != d.n || !d.contains(alpha) {
        return Err(Error::InvalidParam("alpha outside the domain".into()));
    }
    if !(eta > 0.0) || !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParam(
            "estimate_coefficient needs eta > 0 and delta in (0,1)".into(),
        ));
    }
    let sup = f.sup_bound().max(f64::MIN_POSITIVE);
    let m = (2.0 * (sup / eta).powi(2) * (4.0 / delta).ln()).ceil();
    let m = m.clamp(1.0, 1e9) as usize;

    // Draw sequentially so the transcript is thread-count independent,
    // then reduce in fixed chunk order.
    let mut pts = vec![0u64; m * d.n];
    for v in pts.iter_mut() {
        *v = rng.gen_range(0..d.b);
    }
    let sum = exec::fold_indexed(m, Complex64::new(0.0, 0.0), |s| {
        let x = &pts[s * d.n..(s + 1) * d.n];
        let k = dot_mod(alpha, x, d.b);
        let phase = Complex64::from_polar(1.0, -TAU * k as f64 / d.b as f64);
        phase * f.eval(x)
    });
    Ok(sum / m as f64)
}

/// Median-of-means estimate of the windowed band energy `W(p, I)` for the
/// interval `I = [lo, hi]` on coordinate `prefix.len()`.
///
/// Width 1 uses the exact window (`l = b`), so the value estimated is the
/// full residual weight of the extended prefix. `node_index` keys the
/// deterministic substream of this test.
pub fn interval_weight_estimate(
    f: &dyn QueryFunction,
    prefix: &[u64],
    lo: u64,
    hi: u64,
    params: &SftParams,
    streams: &Streams,
    node_index: u64,
) -> Result<f64> {
    params.validate()?;
    let d = f.domain();
    let j = prefix.len();
    if j >= d.n || lo > hi || hi >= d.b || prefix.iter().any(|&p| p >= d.b) {
        return Err(Error::InvalidParam(format!(
            "bad interval node: prefix len {j}, interval [{lo}, {hi}], b = {}",
            d.b
        )));
    }
    let b = d.b;
    let w = hi - lo + 1;
    let ell = if w == 1 { b } else { (b / (2 * w)).max(1) };
    let center = lo + (w - 1) / 2;

    let sup = f.sup_bound().max(f64::MIN_POSITIVE);
    let m2 = f.second_moment_bound().max(f64::MIN_POSITIVE);
    let err = params.gamma * params.gamma / 8.0;
    let batch = (params.batch_factor * sup * sup * m2 / (err * err)).ceil();
    let batch = (batch.clamp(16.0, params.batch_cap as f64)) as usize;
    let arms = params.arms.max(1) | 1;

    let suffix = d.n - j - 1;
    let stride = 2 * d.n + 1; // x1, x2, phase index k
    let node_streams = streams.child("sft-node", node_index);
    let mut means = Vec::with_capacity(arms);
    let mut buf = vec![0u64; batch * stride];
    // Phase factors repeat across residues; tabulate when the samples of
    // this node will amortize the table.
    let cos_tab: Option<Vec<f64>> =
        if (2 * b as u128) <= (arms as u128) * (batch as u128) && b <= (1 << 22) {
            Some(
                (0..b)
                    .map(|k| (TAU * k as f64 / b as f64).cos())
                    .collect(),
            )
        } else {
            None
        };
    for arm in 0..arms {
        let mut rng = node_streams.stream("arm", arm as u64);
        for s in 0..batch {
            let row = &mut buf[s * stride..(s + 1) * stride];
            let y = rng.gen_range(0..b);
            for c in 0..suffix {
                let wv = rng.gen_range(0..b);
                row[j + 1 + c] = wv;
                row[d.n + j + 1 + c] = wv;
            }
            let mut k1 = 0u64;
            for (c, &p) in prefix.iter().enumerate() {
                let u = rng.gen_range(0..b);
                row[c] = u;
                k1 = (k1 + crate::domain::mul_mod(p, u, b)) % b;
            }
            let mut k2 = 0u64;
            for (c, &p) in prefix.iter().enumerate() {
                let u = rng.gen_range(0..b);
                row[d.n + c] = u;
                k2 = (k2 + crate::domain::mul_mod(p, u, b)) % b;
            }
            let t1 = rng.gen_range(0..ell);
            let t2 = rng.gen_range(0..ell);
            row[j] = (y + t1) % b;
            row[d.n + j] = (y + t2) % b;
            k1 = (k1 + crate::domain::mul_mod(center, t1 % b, b)) % b;
            k2 = (k2 + crate::domain::mul_mod(center, t2 % b, b)) % b;
            row[2 * d.n] = (k1 + b - k2) % b;
        }
        let total = exec::sum_indexed(batch, |s| {
            let row = &buf[s * stride..(s + 1) * stride];
            let v1 = f.eval(&row[..d.n]);
            let v2 = f.eval(&row[d.n..2 * d.n]);
            let k = row[2 * d.n];
            let c = match &cos_tab {
                Some(t) => t[k as usize],
                None => (TAU * k as f64 / b as f64).cos(),
            };
            v1 * v2 * c
        });
        means.push(total / batch as f64);
    }
    means.sort_by(|a, b| a.total_cmp(b));
    Ok(means[arms / 2])
}

/// Reference route: tabulate `f`, transform exactly, keep everything with
/// amplitude at least `gamma / 2`, heaviest first (ties in frequency order).
pub fn find_heavy_brute(
    f: &dyn QueryFunction,
    gamma: f64,
    budget: u128,
) -> Result<Vec<HeavyCoefficient>> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidParam(format!(
            "gamma must be positive, got {gamma}"
        )));
    }
    let d = f.domain();
    let len = d.dense_size(budget)?;
    let table: Vec<Complex64> = exec::map_indexed(len, |idx| {
        let mut x = vec![0u64; d.n];
        d.point_of(idx, &mut x);
        Complex64::new(f.eval(&x), 0.0)
    });
    let spec = fourier::dft_exact(d, &table, budget)?;
    let mut out: Vec<HeavyCoefficient> = spec
        .iter()
        .filter(|(_, amp)| amp.norm() >= gamma / 2.0)
        .map(|(alpha, amp)| HeavyCoefficient {
            alpha: alpha.clone(),
            amplitude: *amp,
        })
        .collect();
    sort_heavy(&mut out);
    Ok(out)
}

fn sort_heavy(out: &mut [HeavyCoefficient]) {
    out.sort_by(|a, b| {
        b.amplitude
            .norm()
            .total_cmp(&a.amplitude.norm())
            .then_with(|| a.alpha.cmp(&b.alpha))
    });
}

/// Sampling route. Queries scale with `n * log2(b)` rather than `b^n`.
///
/// Frequencies are recovered coordinate by coordinate: each live prefix is
/// extended by bisecting `[0, b)` (or enumerating it when `b <= small_b`),
/// keeping intervals whose estimated band energy reaches `gamma^2 / 4`,
/// with at most [`width_cap`] survivors per level (best estimates win,
/// ties in node order). Full-length survivors pass a final amplitude
/// filter at `3 * gamma / 4` with accuracy `gamma / 4`.
pub fn find_heavy_sft(
    f: &dyn QueryFunction,
    params: &SftParams,
    streams: &Streams,
) -> Result<Vec<HeavyCoefficient>> {
    params.validate()?;
    let d = f.domain();
    let b = d.b;
    let gamma = params.gamma;
    let sup = f.sup_bound().max(f64::MIN_POSITIVE);
    let keep = gamma * gamma / 4.0;
    let cap = width_cap(sup, gamma);

    // Failure budget split over a generous overcount of interval tests.
    let node_budget =
        (cap as f64) * f64::from(ceil_log2(b).max(1)) * (d.n as f64) * 4.0;
    let delta_node = (params.delta / node_budget).max(f64::MIN_POSITIVE);

    let mut tests: u64 = 0;
    let bump = |tests: &mut u64| -> Result<u64> {
        if *tests >= params.node_test_cap {
            return Err(Error::QueryCapExceeded(params.node_test_cap));
        }
        let t = *tests;
        *tests += 1;
        Ok(t)
    };

    let mut prefixes: Vec<Vec<u64>> = vec![vec![]];
    for _coord in 0..d.n {
        // (prefix index, value, estimate) of accepted singletons.
        let mut singles: Vec<(usize, u64, f64)> = Vec::new();
        if b <= params.small_b {
            for (pi, p) in prefixes.iter().enumerate() {
                for m in 0..b {
                    let t = bump(&mut tests)?;
                    let est = interval_weight_estimate(f, p, m, m, params, streams, t)?;
                    if est >= keep {
                        singles.push((pi, m, est));
                    }
                }
            }
        } else {
            let mut frontier: Vec<(usize, u64, u64)> =
                (0..prefixes.len()).map(|pi| (pi, 0, b - 1)).collect();
            while !frontier.is_empty() {
                let mut next: Vec<(usize, u64, u64, f64)> = Vec::new();
                for &(pi, lo, hi) in &frontier {
                    let mid = lo + (hi - lo) / 2;
                    for &(clo, chi) in &[(lo, mid), (mid + 1, hi)] {
                        let t = bump(&mut tests)?;
                        let est =
                            interval_weight_estimate(f, &prefixes[pi], clo, chi, params, streams, t)?;
                        if est >= keep {
                            if clo == chi {
                                singles.push((pi, clo, est));
                            } else {
                                next.push((pi, clo, chi, est));
                            }
                        }
                    }
                }
                next.sort_by(|a, b| {
                    b.3.total_cmp(&a.3).then_with(|| (a.0, a.1).cmp(&(b.0, b.1)))
                });
                next.truncate(cap);
                next.sort_by_key(|t| (t.0, t.1));
                frontier = next.into_iter().map(|(pi, lo, hi, _)| (pi, lo, hi)).collect();
            }
        }
        singles.sort_by(|a, b| {
            b.2.total_cmp(&a.2).then_with(|| (a.0, a.1).cmp(&(b.0, b.1)))
        });
        singles.truncate(cap);
        let mut extended: Vec<Vec<u64>> = singles
            .into_iter()
            .map(|(pi, m, _)| {
                let mut p = prefixes[pi].clone();
                p.push(m);
                p
            })
            .collect();
        extended.sort();
        prefixes = extended;
        if prefixes.is_empty() {
            return Ok(Vec::new());
        }
    }

    let mut out = Vec::new();
    for (i, alpha) in prefixes.iter().enumerate() {
        let mut rng = streams.stream("sft-coef", i as u64);
        let est = estimate_coefficient(f, alpha, gamma / 4.0, delta_node, &mut rng)?;
        if est.norm() >= 0.75 * gamma {
            out.push(HeavyCoefficient {
                alpha: alpha.clone(),
                amplitude: est,
            });
        }
    }
    sort_heavy(&mut out);
    out.truncate(cap);
    Ok(out)
}
