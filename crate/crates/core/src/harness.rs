//! Seeded end-to-end experiment runs: configure a target and a learner,
//! produce a model plus a machine-readable report, measure error, and drive
//! parameter sweeps into CSV.
//!
//! Reproducibility contract: every random choice descends from the config
//! seed through named substreams, so a config run twice yields byte-identical
//! model and report JSON once wall-clock fields are masked
//! ([`RunReport::canonical_json`]). Query accounting: `queries` is the
//! membership oracle counter at the moment the learner returned; error
//! estimation afterwards uses a separate counter.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::concepts::{gen_target, Concept, ConceptKind, ConceptOracle, GenParams, MembershipOracle};
use crate::domain::EXHAUSTIVE_BUDGET;
use crate::error::{Error, Result};
use crate::exec;
use crate::ghs::{ghs_learn, GhsParams};
use crate::grid::{algorithm2_learn, GridParams, Model, Transcript};
use crate::sft::SftTuning;
use crate::stream::Streams;

/// Hard ceiling for exhaustive error evaluation, independent of the
/// learner's exhaustive budget.
pub const EVAL_EXHAUSTIVE_CAP: u128 = 1 << 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    Ghs,
    Grid,
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Algo::Ghs => write!(f, "ghs"),
            Algo::Grid => write!(f, "grid"),
        }
    }
}

impl FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ghs" => Ok(Algo::Ghs),
            "grid" => Ok(Algo::Grid),
            other => Err(Error::InvalidParam(format!(
                "unknown algorithm {other:?}, expected \"ghs\" or \"grid\""
            ))),
        }
    }
}

/// Resource limits for one run. Caps are checked when the learner returns;
/// a breached query cap voids the run, a breached wall cap is only flagged
/// (wall time is not reproducible, so it never feeds back into results).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Budgets {
    /// Domains at most this large are handled exhaustively (boosting and
    /// error evaluation both).
    pub exhaustive_budget: u128,
    pub query_cap: Option<u64>,
    pub wall_cap_ms: Option<u64>,
    /// Sample count for error evaluation on domains past the budget.
    pub eval_samples: usize,
}

impl Default for Budgets {
    fn default() -> Self {
        Budgets {
            exhaustive_budget: EXHAUSTIVE_BUDGET,
            query_cap: None,
            wall_cap_ms: None,
            eval_samples: 1 << 16,
        }
    }
}

/// Everything one experiment depends on. The seed is the sole entropy
/// source for target-independent randomness (learning and evaluation).
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub target: Concept,
    pub algo: Algo,
    pub epsilon: f64,
    pub delta: f64,
    pub gamma_start: f64,
    pub gamma_min: f64,
    pub gamma_factor: f64,
    pub seed: u64,
    pub budgets: Budgets,
    pub tuning: SftTuning,
}

impl ExperimentConfig {
    pub fn new(target: Concept, algo: Algo, epsilon: f64, delta: f64, seed: u64) -> Self {
        ExperimentConfig {
            target,
            algo,
            epsilon,
            delta,
            gamma_start: 0.25,
            gamma_min: (2.0f64).powi(-12),
            gamma_factor: 0.5,
            seed,
            budgets: Budgets::default(),
            tuning: SftTuning::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.target.validate()?;
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
        if !(self.gamma_min > 0.0) || self.gamma_min > self.gamma_start {
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
        if self.budgets.eval_samples == 0 {
            return Err(Error::InvalidParam("eval_samples must be >= 1".into()));
        }
        if self.algo == Algo::Grid && !self.target.all_basic() {
            return Err(Error::InvalidParam(
                "grid learning needs interval literals on every gate".into(),
            ));
        }
        Ok(())
    }
}

/// Measured disagreement rate between target and model, with the evaluation
/// mode and a 95% half-width (zero when the count is exact).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorEstimate {
    pub value: f64,
    pub half_width: f64,
    pub mode: String,
}

/// How to measure model error against the target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    Exhaustive,
    Sample { m: usize },
}

/// Exact disagreement rate by full enumeration. Refuses domains larger than
/// `cap` points.
pub fn exact_error(
    target: &Concept,
    predict: &(dyn Fn(&[u64]) -> i8 + Sync),
    cap: u128,
) -> Result<ErrorEstimate> {
    let d = target.domain();
    let size = d.dense_size(cap.min(EVAL_EXHAUSTIVE_CAP))?;
    let bad = exec::count_indexed(size, |i| {
        let x = d.point_vec(i);
        target.eval(&x) != predict(&x)
    });
    Ok(ErrorEstimate {
        value: bad as f64 / size as f64,
        half_width: 0.0,
        mode: "exhaustive".into(),
    })
}

/// Disagreement rate on `m` uniform points. The half-width is the 95%
/// normal bound with worst-case binomial variance, `1.96 * sqrt(1/(4m))`,
/// valid for every true rate.
pub fn sampled_error<R: Rng>(
    target: &Concept,
    predict: &(dyn Fn(&[u64]) -> i8 + Sync),
    m: usize,
    rng: &mut R,
) -> Result<ErrorEstimate> {
    if m == 0 {
        return Err(Error::InvalidParam("sample count must be >= 1".into()));
    }
    let d = target.domain();
    let mut pts = vec![0u64; m * d.n];
    for v in pts.iter_mut() {
        *v = rng.gen_range(0..d.b);
    }
    let bad = exec::count_indexed(m, |i| {
        let x = &pts[i * d.n..(i + 1) * d.n];
        target.eval(x) != predict(x)
    });
    Ok(ErrorEstimate {
        value: bad as f64 / m as f64,
        half_width: 1.96 * (0.25 / m as f64).sqrt(),
        mode: "sample".into(),
    })
}

/// Model-level convenience over [`exact_error`] / [`sampled_error`]. The
/// sampling stream is derived from `seed` under the label `eval`.
pub fn estimate_error(
    target: &Concept,
    model: &Model,
    mode: EvalMode,
    seed: u64,
) -> Result<ErrorEstimate> {
    let predict = |x: &[u64]| model.predict(x);
    match mode {
        EvalMode::Exhaustive => exact_error(target, &predict, EVAL_EXHAUSTIVE_CAP),
        EvalMode::Sample { m } => {
            let mut rng = Streams::new(seed).stream("eval", 0);
            sampled_error(target, &predict, m, &mut rng)
        }
    }
}

/// Outcome record of one experiment. `status` is `"ok"` or the failure
/// cause; on failure the model-dependent fields stay empty.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub algo: Algo,
    pub b: u64,
    pub n: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub status: String,
    pub stages: usize,
    /// Membership queries spent learning (oracle counter at model emission).
    pub queries: u64,
    pub gamma: f64,
    pub error: Option<ErrorEstimate>,
    pub transcript: Option<Transcript>,
    pub model_path: Option<String>,
    pub wall_ms: u64,
    pub wall_cap_exceeded: bool,
}

impl RunReport {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }

    /// Compact JSON with the wall-clock fields masked: the byte-comparable
    /// form of a run.
    pub fn canonical_json(&self) -> String {
        let mut masked = self.clone();
        masked.wall_ms = 0;
        masked.wall_cap_exceeded = false;
        serde_json::to_string(&masked).expect("report serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

fn ghs_params_of(config: &ExperimentConfig) -> GhsParams {
    let mut gp = GhsParams::new(config.epsilon, config.delta);
    gp.gamma_start = config.gamma_start;
    gp.gamma_min = config.gamma_min;
    gp.gamma_factor = config.gamma_factor;
    gp.exhaustive_budget = config.budgets.exhaustive_budget;
    gp.tuning = config.tuning.clone();
    gp
}

fn grid_params_of(config: &ExperimentConfig) -> GridParams {
    let mut gp = GridParams::new(config.epsilon, config.delta, config.target.n);
    gp.gamma_start = config.gamma_start;
    gp.gamma_min = config.gamma_min;
    gp.gamma_factor = config.gamma_factor;
    gp.exhaustive_budget = config.budgets.exhaustive_budget;
    gp.tuning = config.tuning.clone();
    gp
}

/// Run one configured experiment: learn, measure, optionally write the model
/// and report as JSON files.
///
/// Learner failures are not `Err`: they come back as a report whose `status`
/// names the cause (so sweeps can record them per row); callers turning this
/// into a process exit should treat `!report.is_ok()` as nonzero. `Err` is
/// reserved for invalid configs and I/O problems.
pub fn run_experiment(
    config: &ExperimentConfig,
    model_path: Option<&Path>,
    report_path: Option<&Path>,
) -> Result<RunReport> {
    config.validate()?;
    let d = config.target.domain();
    let oracle = ConceptOracle::new(config.target.clone())?;
    let streams = Streams::new(config.seed);
    let started = Instant::now();

    let learned = match config.algo {
        Algo::Ghs => {
            let gp = ghs_params_of(config);
            ghs_learn(&oracle, &gp, &streams.child("learn", 0)).map(|out| {
                (
                    Model::SignSum(out.model),
                    out.trace.len(),
                    out.gamma,
                    None,
                )
            })
        }
        Algo::Grid => {
            let gp = grid_params_of(config);
            algorithm2_learn(&oracle, &gp, &streams.child("learn", 0))
                .map(|out| (out.model, out.stages, out.gamma, Some(out.transcript)))
        }
    };
    let queries = oracle.query_count();

    let mut report = RunReport {
        seed: config.seed,
        algo: config.algo,
        b: d.b,
        n: d.n,
        epsilon: config.epsilon,
        delta: config.delta,
        status: "ok".into(),
        stages: 0,
        queries,
        gamma: config.gamma_start,
        error: None,
        transcript: None,
        model_path: None,
        wall_ms: 0,
        wall_cap_exceeded: false,
    };

    let model = match learned {
        Ok((model, stages, gamma, transcript)) => {
            report.stages = stages;
            report.gamma = gamma;
            report.transcript = transcript;
            if let Some(cap) = config.budgets.query_cap {
                if queries > cap {
                    report.status = Error::QueryCapExceeded(queries).to_string();
                }
            }
            if report.is_ok() {
                Some(model)
            } else {
                None
            }
        }
        Err(e) => {
            report.status = e.to_string();
            None
        }
    };

    if let Some(model) = &model {
        let exhaustive = matches!(
            d.size(),
            Some(s) if s <= config.budgets.exhaustive_budget.min(EVAL_EXHAUSTIVE_CAP)
        );
        let predict = |x: &[u64]| model.predict(x);
        report.error = Some(if exhaustive {
            exact_error(&config.target, &predict, config.budgets.exhaustive_budget)?
        } else {
            let mut rng = streams.stream("eval", 0);
            sampled_error(&config.target, &predict, config.budgets.eval_samples, &mut rng)?
        });
        if let Some(path) = model_path {
            fs::write(path, model.to_json()?)?;
            report.model_path = Some(path.to_string_lossy().into_owned());
        }
    }

    report.wall_ms = started.elapsed().as_millis() as u64;
    if let Some(cap) = config.budgets.wall_cap_ms {
        report.wall_cap_exceeded = report.wall_ms > cap;
    }
    if let Some(path) = report_path {
        fs::write(path, report.to_json())?;
    }
    Ok(report)
}

/// Cartesian sweep description. Rows are emitted in nested order:
/// b, n, s, r, epsilon, algo, seed (innermost). Each row generates its own
/// target from the row seed and runs one experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSpec {
    pub kind: ConceptKind,
    pub b: Vec<u64>,
    pub n: Vec<usize>,
    pub s: Vec<usize>,
    pub r: Vec<usize>,
    pub epsilon: Vec<f64>,
    pub seeds: Vec<u64>,
    pub algos: Vec<Algo>,
    pub delta: f64,
    #[serde(default)]
    pub disjoint: bool,
    #[serde(default)]
    pub budgets: Option<Budgets>,
}

impl SweepSpec {
    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepSummary {
    pub rows: usize,
    pub failures: usize,
}

/// Run every sweep combination, appending one CSV row per (config, seed).
/// Failures never abort the sweep: the row's `status` records the cause and
/// its result fields stay empty. An empty sweep leaves just the header.
pub fn sweep(spec: &SweepSpec, out_csv: &Path) -> Result<SweepSummary> {
    let mut w = csv::Writer::from_path(out_csv)?;
    w.write_record([
        "b", "n", "s", "r", "epsilon", "seed", "algo", "queries", "stages", "gamma", "error",
        "wall_ms", "status",
    ])?;
    let mut summary = SweepSummary {
        rows: 0,
        failures: 0,
    };
    for &b in &spec.b {
        for &n in &spec.n {
            for &s in &spec.s {
                for &r in &spec.r {
                    for &epsilon in &spec.epsilon {
                        for &algo in &spec.algos {
                            for &seed in &spec.seeds {
                                let row =
                                    sweep_row(spec, b, n, s, r, epsilon, algo, seed);
                                summary.rows += 1;
                                if row.status != "ok" {
                                    summary.failures += 1;
                                }
                                w.write_record([
                                    b.to_string(),
                                    n.to_string(),
                                    s.to_string(),
                                    r.to_string(),
                                    epsilon.to_string(),
                                    seed.to_string(),
                                    algo.to_string(),
                                    row.queries.map_or(String::new(), |q| q.to_string()),
                                    row.stages.map_or(String::new(), |v| v.to_string()),
                                    row.gamma.map_or(String::new(), |v| v.to_string()),
                                    row.error.map_or(String::new(), |v| v.to_string()),
                                    row.wall_ms.map_or(String::new(), |v| v.to_string()),
                                    row.status,
                                ])?;
                            }
                        }
                    }
                }
            }
        }
    }
    w.flush()?;
    Ok(summary)
}

struct SweepRow {
    status: String,
    queries: Option<u64>,
    stages: Option<usize>,
    gamma: Option<f64>,
    error: Option<f64>,
    wall_ms: Option<u64>,
}

fn sweep_row(
    spec: &SweepSpec,
    b: u64,
    n: usize,
    s: usize,
    r: usize,
    epsilon: f64,
    algo: Algo,
    seed: u64,
) -> SweepRow {
    let failed = |status: String| SweepRow {
        status,
        queries: None,
        stages: None,
        gamma: None,
        error: None,
        wall_ms: None,
    };
    let gen = GenParams {
        kind: spec.kind,
        n,
        b,
        s,
        r,
        disjoint: spec.disjoint,
        twist: false,
    };
    let mut gen_rng = Streams::new(seed).stream("gen", 0);
    let target = match gen_target(&gen, &mut gen_rng) {
        Ok(t) => t,
        Err(e) => return failed(e.to_string()),
    };
    let mut config = ExperimentConfig::new(target, algo, epsilon, spec.delta, seed);
    if let Some(budgets) = &spec.budgets {
        config.budgets = budgets.clone();
    }
    match run_experiment(&config, None, None) {
        Ok(report) => SweepRow {
            status: report.status.clone(),
            queries: Some(report.queries),
            stages: report.is_ok().then_some(report.stages),
            gamma: report.is_ok().then_some(report.gamma),
            error: report.error.as_ref().map(|e| e.value),
            wall_ms: Some(report.wall_ms),
        },
        Err(e) => failed(e.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::concepts::Literal;

    fn rect_target(b: u64, n: usize, lo: u64, hi: u64) -> Concept {
        let literals = (0..n)
            .map(|var| Literal {
                var,
                sign: -1,
                lo,
                hi,
                z: 1,
            })
            .collect();
        Concept {
            n,
            b,
            kind: ConceptKind::UnionRect,
            gates: vec![crate::concepts::Gate {
                kind: crate::concepts::GateKind::Rectangle,
                literals,
            }],
            disjoint: true,
        }
    }

    #[test]
    fn exact_error_scores_self_and_inverse() {
        let target = rect_target(8, 2, 2, 5);
        let same = |x: &[u64]| target.eval(x);
        let est = exact_error(&target, &same, 1 << 20).unwrap();
        assert_eq!(est.value, 0.0);
        assert_eq!(est.half_width, 0.0);
        assert_eq!(est.mode, "exhaustive");

        let flipped = |x: &[u64]| -target.eval(x);
        let est = exact_error(&target, &flipped, 1 << 20).unwrap();
        assert_eq!(est.value, 1.0);
    }

    #[test]
    fn sampled_error_brackets_the_exact_rate() {
        let target = rect_target(16, 2, 4, 11);
        // Wrong on exactly the band x0 in [4,7]: true rate 4*16/256 = 1/4.
        let off = |x: &[u64]| {
            if (4..8).contains(&x[0]) {
                -target.eval(x)
            } else {
                target.eval(x)
            }
        };
        let truth = exact_error(&target, &off, 1 << 20).unwrap().value;
        assert_eq!(truth, 0.25);
        let mut rng = Streams::new(11).stream("eval", 0);
        let est = sampled_error(&target, &off, 4096, &mut rng).unwrap();
        assert_eq!(est.mode, "sample");
        assert!(est.half_width > 0.0 && est.half_width < 0.02);
        assert!(
            (est.value - truth).abs() <= est.half_width,
            "estimate {} vs truth {truth} outside width {}",
            est.value,
            est.half_width
        );
    }

    #[test]
    fn config_validation_rejects_bad_inputs() {
        let target = rect_target(8, 2, 1, 4);
        let mut config = ExperimentConfig::new(target.clone(), Algo::Ghs, 1.5, 0.1, 0);
        assert!(matches!(
            config.validate(),
            Err(Error::InvalidParam(_))
        ));
        config.epsilon = 0.1;
        config.gamma_factor = 1.0;
        assert!(config.validate().is_err());
        config.gamma_factor = 0.5;
        config.validate().unwrap();

        let mut twisted = rect_target(9, 1, 2, 5);
        twisted.gates[0].literals[0].z = 2;
        let config = ExperimentConfig::new(twisted, Algo::Grid, 0.1, 0.1, 0);
        assert!(config.validate().is_err());
    }

    #[test]
    fn ghs_run_is_byte_reproducible() {
        let target = rect_target(16, 2, 3, 10);
        let config = ExperimentConfig::new(target, Algo::Ghs, 0.2, 0.2, 7);
        let a = run_experiment(&config, None, None).unwrap();
        let b = run_experiment(&config, None, None).unwrap();
        assert!(a.is_ok(), "status: {}", a.status);
        assert_eq!(a.canonical_json(), b.canonical_json());
        assert!(a.queries > 0);
        let err = a.error.as_ref().unwrap();
        assert_eq!(err.mode, "exhaustive");
        assert!(err.value <= 0.2, "error {}", err.value);
        assert!(a.transcript.is_none());
    }

    #[test]
    fn grid_run_writes_model_and_report_files() {
        let dir = tempfile::tempdir().unwrap();
        let model_path = dir.path().join("model.json");
        let report_path = dir.path().join("report.json");
        let target = rect_target(4096, 1, 100, 900);
        let config = ExperimentConfig::new(target.clone(), Algo::Grid, 0.2, 0.2, 3);
        let report = run_experiment(&config, Some(&model_path), Some(&report_path)).unwrap();
        assert!(report.is_ok(), "status: {}", report.status);
        assert!(report.transcript.is_some());
        assert_eq!(report.model_path.as_deref(), model_path.to_str());

        let model = Model::from_json(&fs::read_to_string(&model_path).unwrap()).unwrap();
        let err = exact_error(&target, &|x: &[u64]| model.predict(x), 1 << 20)
            .unwrap()
            .value;
        assert!(err <= 0.2, "reloaded model error {err}");

        let reread = RunReport::from_json(&fs::read_to_string(&report_path).unwrap()).unwrap();
        assert_eq!(reread.canonical_json(), report.canonical_json());
    }

    #[test]
    fn failed_learns_become_reports_not_errors() {
        let target = rect_target(16, 2, 3, 10);
        let mut config = ExperimentConfig::new(target, Algo::Ghs, 0.2, 0.2, 7);
        config.budgets.query_cap = Some(10);
        let report = run_experiment(&config, None, None).unwrap();
        assert!(!report.is_ok());
        assert!(report.status.contains("quer"), "status: {}", report.status);
        assert!(report.error.is_none());
        assert!(report.model_path.is_none());
    }

    #[test]
    fn sweep_flags_failures_per_row_and_keeps_going() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("results.csv");
        let spec = SweepSpec {
            kind: ConceptKind::UnionRect,
            b: vec![16],
            n: vec![2],
            s: vec![1],
            r: vec![1],
            epsilon: vec![0.25, 1.5],
            seeds: vec![1, 2],
            algos: vec![Algo::Ghs],
            delta: 0.25,
            disjoint: false,
            budgets: None,
        };
        let summary = sweep(&spec, &out).unwrap();
        assert_eq!(summary.rows, 4);
        assert_eq!(summary.failures, 2);

        let text = fs::read_to_string(&out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "b,n,s,r,epsilon,seed,algo,queries,stages,gamma,error,wall_ms,status"
        );
        assert_eq!(lines.len(), 5);
        assert_eq!(text.matches("ok").count(), 2);

        let empty = SweepSpec {
            seeds: vec![],
            ..spec
        };
        let summary = sweep(&empty, &out).unwrap();
        assert_eq!(summary.rows, 0);
        let text = fs::read_to_string(&out).unwrap();
        assert_eq!(text.lines().count(), 1);
    }

    #[test]
    fn estimate_error_dispatches_on_mode() {
        let target = rect_target(8, 2, 2, 5);
        // Termless vote: constantly +1.
        let model = Model::SignSum(crate::ghs::SignSumModel {
            terms: vec![],
            b: 8,
            n: 2,
            gamma: 0.25,
            stages: 0,
        });
        let exhaustive = estimate_error(&target, &model, EvalMode::Exhaustive, 0).unwrap();
        let truth = {
            let d = target.domain();
            let bad = (0..64)
                .filter(|&i| target.eval(&d.point_vec(i)) == -1)
                .count();
            bad as f64 / 64.0
        };
        assert_eq!(exhaustive.value, truth);
        let sampled =
            estimate_error(&target, &model, EvalMode::Sample { m: 4096 }, 5).unwrap();
        assert!((sampled.value - truth).abs() <= sampled.half_width);
    }
}
