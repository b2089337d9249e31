//! Smooth boosting over character-based weak hypotheses.
//!
//! The learner runs rounds of SmoothBoost: each round reweights the domain
//! with a measure `M` (never concentrating more than `1/(eps*b^n)` on a
//! point), builds the pseudo-target `f*(x) = M(x) f(x) / mu` with
//! `mu = E[M]`, and asks the heavy-coefficient search for a character
//! correlated with it. The returned weak hypothesis is the phased cosine
//!
//! ```text
//! w(x) = cos(theta + 2*pi*<beta, x>/b),   theta = arg f*^(beta),
//! ```
//!
//! whose advantage `E_{M}[f w] / mu` equals `|f*^(beta)|` when the phase is
//! exact. Margins accumulate `w_t(x) f(x) - theta_m` per round with
//! `theta_m = gamma_adv / (2 + gamma_adv)` and `gamma_adv = gamma / 4`; the
//! measure is `1` on negative margins and `(1-gamma_adv)^{margin/2}`
//! otherwise. Boosting stops once `mu < eps`; every point the final vote
//! `sign(sum_t w_t)` misclassifies still carries measure 1, so the error is
//! at most the terminal `mu`.
//!
//! Domains with at most `exhaustive_budget` points are boosted exactly
//! (tabulated margins, exact `mu`, exact transform: no randomness at all).
//! Larger domains use sampled `mu` and the query-efficient search.
//! [`ghs_learn`] wraps either mode in a halving schedule on `gamma`,
//! restarting from scratch when some round finds no correlated character.

use crate::concepts::MembershipOracle;
use crate::domain::{dot_mod, Domain, EXHAUSTIVE_BUDGET};
use crate::error::{Error, Result};
use crate::exec;
use crate::sft::{self, QueryFunction, SftTuning};
use crate::stream::Streams;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use std::sync::atomic::{AtomicU64, Ordering};

/// One boosting round's hypothesis: a phased cosine of a character.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakHypothesis {
    pub beta: Vec<u64>,
    pub theta: f64,
}

impl WeakHypothesis {
    pub fn eval(&self, x: &[u64], b: u64) -> f64 {
        let k = dot_mod(&self.beta, x, b);
        (self.theta + TAU * k as f64 / b as f64).cos()
    }
}

/// Learned predictor: sign of the summed weak hypotheses (`sign(0) = +1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignSumModel {
    pub terms: Vec<WeakHypothesis>,
    pub b: u64,
    pub n: usize,
    pub gamma: f64,
    pub stages: usize,
}

impl SignSumModel {
    pub fn domain(&self) -> Domain {
        Domain { n: self.n, b: self.b }
    }

    pub fn vote(&self, x: &[u64]) -> f64 {
        self.terms.iter().map(|t| t.eval(x, self.b)).sum()
    }

    pub fn predict(&self, x: &[u64]) -> i8 {
        if self.vote(x) < 0.0 {
            -1
        } else {
            1
        }
    }
}

/// Read access to a boosting measure `M: [b]^n -> [0, 1]`.
pub trait MeasureView: Sync {
    fn domain(&self) -> Domain;
    /// Pointwise measure value in `[0, 1]`.
    fn weight(&self, x: &[u64]) -> f64;
}

/// Dense measure table for exhaustive-mode boosting and tests.
pub struct ExplicitMeasure {
    pub domain: Domain,
    pub weights: Vec<f64>,
}

impl ExplicitMeasure {
    pub fn new(domain: Domain, weights: Vec<f64>) -> Result<Self> {
        let len = domain.dense_size(EXHAUSTIVE_BUDGET)?;
        if weights.len() != len {
            return Err(Error::InvalidParam(format!(
                "measure length {} does not match b^n = {len}",
                weights.len()
            )));
        }
        if weights.iter().any(|&w| !(0.0..=1.0).contains(&w)) {
            return Err(Error::InvalidParam(
                "measure values must lie in [0, 1]".into(),
            ));
        }
        Ok(ExplicitMeasure { domain, weights })
    }

    /// Exact average measure.
    pub fn mu(&self) -> f64 {
        let len = self.weights.len();
        exec::sum_indexed(len, |i| self.weights[i]) / len as f64
    }
}

impl MeasureView for ExplicitMeasure {
    fn domain(&self) -> Domain {
        self.domain
    }

    fn weight(&self, x: &[u64]) -> f64 {
        self.weights[self.domain.index_of(x)]
    }
}

/// Rejection-sample one point of the distribution induced by a measure
/// (accept a uniform draw with probability `M(x)`). Fails with
/// [`Error::MeasureCollapse`] after `cap` straight rejections.
pub fn simulate_ex<R: Rng>(
    measure: &dyn MeasureView,
    cap: u64,
    rng: &mut R,
) -> Result<Vec<u64>> {
    let d = measure.domain();
    let mut x = vec![0u64; d.n];
    for draw in 0..cap {
        for v in x.iter_mut() {
            *v = rng.gen_range(0..d.b);
        }
        let w = measure.weight(&x);
        debug_assert!((0.0..=1.0).contains(&w));
        if rng.gen::<f64>() < w {
            return Ok(x);
        }
        let _ = draw;
    }
    Err(Error::MeasureCollapse { draws: cap })
}

/// Exact weak learner: transform the pseudo-target and take its largest
/// coefficient, requiring amplitude at least `gamma / 2`.
///
/// Returns the hypothesis and its exact advantage `|f*^(beta)|`.
pub fn weak_learn_brute(
    f_star: &dyn QueryFunction,
    gamma: f64,
    budget: u128,
) -> Result<(WeakHypothesis, f64)> {
    let found = sft::find_heavy_brute(f_star, gamma, budget)?;
    let best = found
        .first()
        .ok_or(Error::NoCorrelatedCharacter { gamma })?;
    Ok((
        WeakHypothesis {
            beta: best.alpha.clone(),
            theta: best.amplitude.arg(),
        },
        best.amplitude.norm(),
    ))
}

/// Sampling weak learner: heavy-coefficient search at threshold `gamma/2`,
/// then a fresh phase estimate at accuracy `gamma/8`.
///
/// Returns the hypothesis and a conservative advantage estimate.
pub fn weak_learn_sft(
    f_star: &dyn QueryFunction,
    gamma: f64,
    delta: f64,
    tuning: &SftTuning,
    streams: &Streams,
) -> Result<(WeakHypothesis, f64)> {
    let params = tuning.params(gamma / 2.0, delta / 2.0);
    let found = sft::find_heavy_sft(f_star, &params, &streams.child("search", 0))?;
    let best = found
        .first()
        .ok_or(Error::NoCorrelatedCharacter { gamma })?;
    let mut rng = streams.stream("phase", 0);
    let refined = sft::estimate_coefficient(
        f_star,
        &best.alpha,
        gamma / 8.0,
        delta / 2.0,
        &mut rng,
    )?;
    if refined.norm() < gamma / 8.0 {
        return Err(Error::NoCorrelatedCharacter { gamma });
    }
    Ok((
        WeakHypothesis {
            beta: best.alpha.clone(),
            theta: refined.arg(),
        },
        (refined.norm() - gamma / 8.0).max(0.0),
    ))
}

/// Per-round diagnostics of a boosting run.
#[derive(Debug, Clone)]
pub struct StageTrace {
    pub stage: usize,
    /// Average measure when the round started (exact in exhaustive mode).
    pub mu_hat: f64,
    pub beta: Vec<u64>,
    pub theta: f64,
    /// `E_M[f w] / mu`; exact in exhaustive mode, estimated otherwise.
    pub advantage: f64,
    /// `max M / mu` (density ratio to uniform); exhaustive mode only.
    pub smoothness: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct GhsParams {
    /// Target error of the boosted model.
    pub epsilon: f64,
    /// Failure probability budget (sampled mode; exhaustive is exact).
    pub delta: f64,
    pub gamma_start: f64,
    pub gamma_min: f64,
    /// Multiplier applied to gamma on every schedule restart.
    pub gamma_factor: f64,
    /// Domains up to this many points boost exactly.
    pub exhaustive_budget: u128,
    pub tuning: SftTuning,
    /// Stage cap numerator: at most `c_boost / (eps * gamma^2)` rounds.
    pub c_boost: f64,
    /// Per-round weak learner attempts in sampled mode.
    pub weak_retries: u32,
}

impl GhsParams {
    pub fn new(epsilon: f64, delta: f64) -> Self {
        GhsParams {
            epsilon,
            delta,
            gamma_start: 0.25,
            gamma_min: (2.0f64).powi(-12),
            gamma_factor: 0.5,
            exhaustive_budget: EXHAUSTIVE_BUDGET,
            tuning: SftTuning::default(),
            c_boost: 128.0,
            weak_retries: 3,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::InvalidParam(format!(
                "epsilon must lie in (0,1), got {}",
                self.epsilon
            )));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidParam(format!(
                "delta must lie in (0,1), got {}",
                self.delta
            )));
        }
        if !(self.gamma_start > 0.0 && self.gamma_min > 0.0)
            || self.gamma_min > self.gamma_start
        {
            return Err(Error::InvalidParam(
                "need 0 < gamma_min <= gamma_start".into(),
            ));
        }
        if !(self.gamma_factor > 0.0 && self.gamma_factor < 1.0) {
            return Err(Error::InvalidParam(format!(
                "gamma_factor must lie in (0,1), got {}",
                self.gamma_factor
            )));
        }
        Ok(())
    }

    fn stage_cap(&self, gamma: f64) -> usize {
        (self.c_boost / (self.epsilon * gamma * gamma)).clamp(1.0, 1e12) as usize
    }
}

fn measure_of_margin(margin: f64, gamma_adv: f64) -> f64 {
    if margin < 0.0 {
        1.0
    } else {
        (1.0 - gamma_adv).powf(margin / 2.0)
    }
}

/// Exact SmoothBoost on a tabulated domain. Entirely deterministic.
pub struct ExhaustiveBooster<'a> {
    oracle: &'a dyn MembershipOracle,
    domain: Domain,
    table: Vec<i8>,
    gamma: f64,
    gamma_adv: f64,
    theta_m: f64,
    epsilon: f64,
    budget: u128,
    margins: Vec<f64>,
    terms: Vec<WeakHypothesis>,
    trace: Vec<StageTrace>,
    finished: bool,
    final_mu: f64,
}

impl<'a> ExhaustiveBooster<'a> {
    pub fn new(
        oracle: &'a dyn MembershipOracle,
        gamma: f64,
        epsilon: f64,
        budget: u128,
    ) -> Result<Self> {
        let domain = oracle.domain();
        let table = crate::concepts::truth_table(oracle, budget)?;
        let gamma_adv = gamma / 4.0;
        if !(gamma_adv > 0.0 && gamma_adv < 1.0) {
            return Err(Error::InvalidParam(format!(
                "gamma {gamma} out of range for boosting"
            )));
        }
        let len = table.len();
        Ok(ExhaustiveBooster {
            oracle,
            domain,
            table,
            gamma,
            gamma_adv,
            theta_m: gamma_adv / (2.0 + gamma_adv),
            epsilon,
            budget,
            margins: vec![0.0; len],
            terms: Vec::new(),
            trace: Vec::new(),
            finished: false,
            final_mu: f64::NAN,
        })
    }

    /// Current measure value at a dense index.
    pub fn measure_at(&self, idx: usize) -> f64 {
        measure_of_margin(self.margins[idx], self.gamma_adv)
    }

    /// Exact average measure.
    pub fn mu(&self) -> f64 {
        let len = self.margins.len();
        exec::sum_indexed(len, |i| self.measure_at(i)) / len as f64
    }

    /// Dense induced density `M(x) / (b^n * mu)`. Undefined once boosting
    /// has terminated.
    pub fn density_table(&self) -> Result<Vec<f64>> {
        if self.finished {
            return Err(Error::BoosterTerminated);
        }
        let mu = self.mu();
        let len = self.margins.len();
        let scale = 1.0 / (mu * len as f64);
        Ok(exec::map_indexed(len, |i| self.measure_at(i) * scale))
    }

    /// Run one round. `Ok(true)` means a hypothesis was added; `Ok(false)`
    /// means the measure dropped below `eps` and boosting finished.
    pub fn step(&mut self) -> Result<bool> {
        if self.finished {
            return Err(Error::BoosterTerminated);
        }
        let mu = self.mu();
        if mu < self.epsilon {
            self.finished = true;
            self.final_mu = mu;
            return Ok(false);
        }
        let len = self.margins.len();
        let f_star: Vec<f64> = exec::map_indexed(len, |i| {
            self.measure_at(i) * self.table[i] as f64 / mu
        });
        let mut smooth_max = 0.0f64;
        for i in 0..len {
            smooth_max = smooth_max.max(self.measure_at(i));
        }
        let fq = sft::TableQuery::new(self.domain, f_star)?;
        let (hyp, advantage) = weak_learn_brute(&fq, self.gamma, self.budget)?;
        let new_margins = exec::map_indexed(len, |i| {
            let mut x = vec![0u64; self.domain.n];
            self.domain.point_of(i, &mut x);
            self.margins[i] + hyp.eval(&x, self.domain.b) * self.table[i] as f64
                - self.theta_m
        });
        self.margins = new_margins;
        self.trace.push(StageTrace {
            stage: self.terms.len(),
            mu_hat: mu,
            beta: hyp.beta.clone(),
            theta: hyp.theta,
            advantage,
            smoothness: Some(smooth_max / mu),
        });
        self.terms.push(hyp);
        Ok(true)
    }

    pub fn stages(&self) -> usize {
        self.terms.len()
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn oracle(&self) -> &dyn MembershipOracle {
        self.oracle
    }

    pub fn into_outcome(self) -> (SignSumModel, Vec<StageTrace>, f64) {
        let stages = self.terms.len();
        (
            SignSumModel {
                terms: self.terms,
                b: self.domain.b,
                n: self.domain.n,
                gamma: self.gamma,
                stages,
            },
            self.trace,
            self.final_mu,
        )
    }
}

/// Pseudo-target `f*(x) = M(x) f(x) / mu_hat` with implicit margins.
struct PseudoTarget<'a> {
    oracle: &'a dyn MembershipOracle,
    terms: &'a [WeakHypothesis],
    theta_m: f64,
    gamma_adv: f64,
    mu_hat: f64,
    extra: AtomicU64,
}

impl PseudoTarget<'_> {
    fn weight(&self, x: &[u64], fx: f64) -> f64 {
        let b = self.oracle.domain().b;
        let vote: f64 = self.terms.iter().map(|t| t.eval(x, b)).sum();
        let margin = vote * fx - self.terms.len() as f64 * self.theta_m;
        measure_of_margin(margin, self.gamma_adv)
    }
}

impl QueryFunction for PseudoTarget<'_> {
    fn domain(&self) -> Domain {
        self.oracle.domain()
    }

    fn eval(&self, x: &[u64]) -> f64 {
        self.extra.fetch_add(1, Ordering::Relaxed);
        let fx = self.oracle.query(x) as f64;
        self.weight(x, fx) * fx / self.mu_hat
    }

    fn sup_bound(&self) -> f64 {
        1.0 / self.mu_hat
    }

    fn second_moment_bound(&self) -> f64 {
        // E[(M f / mu_hat)^2] <= E[M] / mu_hat^2 <= 1.5 / mu_hat once
        // mu_hat >= eps and the estimate is within eps/6.
        (1.5 / self.mu_hat).min(self.sup_bound() * self.sup_bound())
    }

    fn query_count(&self) -> u64 {
        self.extra.load(Ordering::Relaxed)
    }
}

/// SmoothBoost with sampled measure estimates and the query-efficient
/// weak learner; for domains too large to tabulate.
pub struct SampledBooster<'a> {
    oracle: &'a dyn MembershipOracle,
    domain: Domain,
    gamma: f64,
    gamma_adv: f64,
    theta_m: f64,
    epsilon: f64,
    delta_stage: f64,
    tuning: SftTuning,
    weak_retries: u32,
    streams: Streams,
    terms: Vec<WeakHypothesis>,
    trace: Vec<StageTrace>,
    finished: bool,
    final_mu: f64,
}

impl<'a> SampledBooster<'a> {
    pub fn new(
        oracle: &'a dyn MembershipOracle,
        params: &GhsParams,
        gamma: f64,
        streams: Streams,
    ) -> Result<Self> {
        params.validate()?;
        let gamma_adv = gamma / 4.0;
        if !(gamma_adv > 0.0 && gamma_adv < 1.0) {
            return Err(Error::InvalidParam(format!(
                "gamma {gamma} out of range for boosting"
            )));
        }
        let s_max = params.stage_cap(gamma) as f64;
        Ok(SampledBooster {
            oracle,
            domain: oracle.domain(),
            gamma,
            gamma_adv,
            theta_m: gamma_adv / (2.0 + gamma_adv),
            epsilon: params.epsilon,
            delta_stage: params.delta / (2.0 * s_max),
            tuning: params.tuning.clone(),
            weak_retries: params.weak_retries,
            streams,
            terms: Vec::new(),
            trace: Vec::new(),
            finished: false,
            final_mu: f64::NAN,
        })
    }

    /// Measure value at a point (one membership query).
    pub fn measure_at(&self, x: &[u64]) -> f64 {
        let fx = self.oracle.query(x) as f64;
        let pt = PseudoTarget {
            oracle: self.oracle,
            terms: &self.terms,
            theta_m: self.theta_m,
            gamma_adv: self.gamma_adv,
            mu_hat: 1.0,
            extra: AtomicU64::new(0),
        };
        pt.weight(x, fx)
    }

    /// Hoeffding estimate of the average measure, additive `eps/6` with
    /// probability `1 - delta_stage`.
    fn estimate_mu(&self, stage: usize) -> f64 {
        let m = (18.0 * (2.0 / self.delta_stage).ln() / (self.epsilon * self.epsilon))
            .ceil()
            .clamp(1.0, 1e8) as usize;
        let mut rng = self.streams.stream("mu", stage as u64);
        let mut pts = vec![0u64; m * self.domain.n];
        for v in pts.iter_mut() {
            *v = rng.gen_range(0..self.domain.b);
        }
        let n = self.domain.n;
        let total = exec::sum_indexed(m, |s| self.measure_at(&pts[s * n..(s + 1) * n]));
        total / m as f64
    }

    pub fn step(&mut self) -> Result<bool> {
        if self.finished {
            return Err(Error::BoosterTerminated);
        }
        let stage = self.terms.len();
        let mu_hat = self.estimate_mu(stage);
        if mu_hat < self.epsilon {
            self.finished = true;
            self.final_mu = mu_hat;
            return Ok(false);
        }
        let stage_streams = self.streams.child("stage", stage as u64);
        let mut last_err = Error::NoCorrelatedCharacter { gamma: self.gamma };
        let mut found = None;
        for attempt in 0..=self.weak_retries {
            let pt = PseudoTarget {
                oracle: self.oracle,
                terms: &self.terms,
                theta_m: self.theta_m,
                gamma_adv: self.gamma_adv,
                mu_hat,
                extra: AtomicU64::new(0),
            };
            match weak_learn_sft(
                &pt,
                self.gamma,
                self.delta_stage,
                &self.tuning,
                &stage_streams.child("attempt", attempt as u64),
            ) {
                Ok(res) => {
                    found = Some(res);
                    break;
                }
                Err(e @ Error::NoCorrelatedCharacter { .. }) => last_err = e,
                Err(e) => return Err(e),
            }
        }
        let (hyp, advantage) = found.ok_or(last_err)?;
        self.trace.push(StageTrace {
            stage,
            mu_hat,
            beta: hyp.beta.clone(),
            theta: hyp.theta,
            advantage,
            smoothness: None,
        });
        self.terms.push(hyp);
        Ok(true)
    }

    pub fn stages(&self) -> usize {
        self.terms.len()
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn into_outcome(self) -> (SignSumModel, Vec<StageTrace>, f64) {
        let stages = self.terms.len();
        (
            SignSumModel {
                terms: self.terms,
                b: self.domain.b,
                n: self.domain.n,
                gamma: self.gamma,
                stages,
            },
            self.trace,
            self.final_mu,
        )
    }
}

#[derive(Debug)]
pub struct GhsOutcome {
    pub model: SignSumModel,
    pub trace: Vec<StageTrace>,
    /// Correlation threshold the successful run used.
    pub gamma: f64,
    /// How many times the schedule lowered gamma before this run.
    pub restarts: u32,
    pub exhaustive: bool,
    /// Terminal average measure (an error bound in exhaustive mode).
    pub final_mu: f64,
}

fn run_boost_at(
    oracle: &dyn MembershipOracle,
    params: &GhsParams,
    gamma: f64,
    exhaustive: bool,
    streams: &Streams,
) -> Result<(SignSumModel, Vec<StageTrace>, f64)> {
    let cap = params.stage_cap(gamma);
    if exhaustive {
        let mut booster =
            ExhaustiveBooster::new(oracle, gamma, params.epsilon, params.exhaustive_budget)?;
        while booster.step()? {
            if booster.stages() > cap {
                return Err(Error::IterationCapExceeded(cap));
            }
        }
        Ok(booster.into_outcome())
    } else {
        let mut booster = SampledBooster::new(oracle, params, gamma, streams.clone())?;
        while booster.step()? {
            if booster.stages() > cap {
                return Err(Error::IterationCapExceeded(cap));
            }
        }
        Ok(booster.into_outcome())
    }
}

/// Boost to error `eps`, halving the correlation threshold and restarting
/// whenever a round finds no usable character.
pub fn ghs_learn(
    oracle: &dyn MembershipOracle,
    params: &GhsParams,
    streams: &Streams,
) -> Result<GhsOutcome> {
    params.validate()?;
    let domain = oracle.domain();
    let exhaustive = matches!(domain.size(), Some(s) if s <= params.exhaustive_budget);
    let mut gamma = params.gamma_start;
    let mut restarts = 0u32;
    loop {
        let attempt_streams = streams.child("ghs-restart", restarts as u64);
        match run_boost_at(oracle, params, gamma, exhaustive, &attempt_streams) {
            Ok((model, trace, final_mu)) => {
                return Ok(GhsOutcome {
                    model,
                    trace,
                    gamma,
                    restarts,
                    exhaustive,
                    final_mu,
                });
            }
            Err(
                Error::NoCorrelatedCharacter { .. }
                | Error::IterationCapExceeded(_)
                | Error::MeasureCollapse { .. },
            ) => {
                gamma *= params.gamma_factor;
                restarts += 1;
                if gamma < params.gamma_min {
                    return Err(Error::GammaExhausted {
                        min: params.gamma_min,
                    });
                }
            }
            Err(e) => return Err(e),
        }
    }
}
