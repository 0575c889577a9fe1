//! Detection methodology: transform A/B tests on the source, serial versus
//! parallel comparison, cross-parallel comparison under different worker
//! counts and mappings, and before/after evaluation of the rejection fix.
//!
//! A divergence is a result, never an error. Errors here mean a
//! precondition failed (sample too small, incompatible runs, bad plan).

use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::exec::Execution;
use crate::process::{
    simulate_parallel, simulate_serial, MappingKind, ParallelConfig, ParallelDefect, ProcessError,
    SerialConfig, StreamMode, Trajectory,
};
use crate::rng::{substream, FaultModel, Seed, StreamId};
use crate::source::{PipelineSpec, SampleSource};
use crate::stats::{
    chi_square_uniform, clock_drift, ks_one_sample, ks_two_sample, summarize, uniform_cdf, welch_t,
    DriftReport, KsResult, SampleSummary, StatsError,
};
use crate::transforms::{FixWindow, MeasurePreservingMap, TransformError};

/// Stream feeding both A/B arms (raw arm first, transformed arm after it).
pub const AB_STREAM: StreamId = StreamId(2_000_000);
/// Stream feeding the one-sample uniformity check of the fix demo.
pub const FIX_STREAM: StreamId = StreamId(2_000_001);

pub const MIN_AB_SAMPLES: usize = 1_000;
pub const MIN_TRAJECTORY_EVENTS: usize = 1_000;
pub const MIN_FIX_SAMPLES: usize = 10_000;
pub const DEFAULT_ALPHA: f64 = 0.01;

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("{0}")]
    Stats(#[from] StatsError),
    #[error("{0}")]
    Process(#[from] ProcessError),
    #[error("{0}")]
    Transform(#[from] TransformError),
    #[error("{what} needs at least {min} samples, got {got}")]
    TooSmall {
        what: &'static str,
        min: usize,
        got: usize,
    },
    #[error("incompatible runs: {0}")]
    Incompatible(String),
    #[error("invalid plan: {field}: {reason}")]
    Plan { field: &'static str, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Consistent,
    DivergenceDetected,
}

fn finite_or_tag<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else if v.is_nan() {
        s.serialize_str("nan")
    } else if *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evidence {
    pub test: String,
    #[serde(serialize_with = "finite_or_tag")]
    pub statistic: f64,
    pub p_value: f64,
    /// Compared means, for mean-shift tests.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub means: Option<(f64, f64)>,
}

impl Evidence {
    fn new(test: impl Into<String>, statistic: f64, p_value: f64) -> Self {
        Self {
            test: test.into(),
            statistic,
            p_value,
            means: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub outcome: Outcome,
    pub alpha: f64,
    pub determinism_breach: bool,
    pub evidence: Vec<Evidence>,
}

impl Verdict {
    /// Divergent iff some p-value falls below `alpha` or a breach was seen.
    pub fn from_evidence(evidence: Vec<Evidence>, alpha: f64, determinism_breach: bool) -> Self {
        let divergent = determinism_breach || evidence.iter().any(|e| e.p_value < alpha);
        Self {
            outcome: if divergent {
                Outcome::DivergenceDetected
            } else {
                Outcome::Consistent
            },
            alpha,
            determinism_breach,
            evidence,
        }
    }

    pub fn is_consistent(&self) -> bool {
        self.outcome == Outcome::Consistent
    }

    pub fn min_p(&self) -> f64 {
        self.evidence.iter().map(|e| e.p_value).fold(1.0, f64::min)
    }

    pub fn evidence_for(&self, test: &str) -> Option<&Evidence> {
        self.evidence.iter().find(|e| e.test == test)
    }
}

fn check_alpha(alpha: f64) -> Result<(), DetectorError> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(DetectorError::Plan {
            field: "alpha",
            reason: format!("must lie in (0,1), got {alpha}"),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AbReport {
    pub map: String,
    pub raw: SampleSummary,
    pub transformed: SampleSummary,
    pub verdict: Verdict,
}

/// Compares the clock functional `-ln(y)` on raw draws with `-ln(f(y))`
/// on an independent block of the same pipeline.
pub fn transform_ab_test(
    fault: FaultModel,
    map: &MeasurePreservingMap,
    n: usize,
    alpha: f64,
    seed: Seed,
) -> Result<AbReport, DetectorError> {
    transform_ab_test_on(&PipelineSpec::with_fault(fault), map, n, alpha, seed)
}

/// A/B test over an arbitrary (fault, fix) pipeline; any map already in
/// `pipeline` is ignored in favour of `map`.
pub fn transform_ab_test_on(
    pipeline: &PipelineSpec,
    map: &MeasurePreservingMap,
    n: usize,
    alpha: f64,
    seed: Seed,
) -> Result<AbReport, DetectorError> {
    check_alpha(alpha)?;
    if n < MIN_AB_SAMPLES {
        return Err(DetectorError::TooSmall {
            what: "transform A/B test",
            min: MIN_AB_SAMPLES,
            got: n,
        });
    }
    let base = PipelineSpec {
        map: None,
        ..pipeline.clone()
    };
    let mut source = SampleSource::new(&base, substream(seed, AB_STREAM));
    let mut raw = Vec::with_capacity(n);
    for _ in 0..n {
        raw.push(-source.draw()?.value().ln());
    }
    let mut mapped = Vec::with_capacity(n);
    for _ in 0..n {
        mapped.push(-map.apply(source.draw()?)?.value().ln());
    }
    let (sa, sb) = (summarize(&raw)?, summarize(&mapped)?);
    let w = welch_t(&sa, &sb)?;
    let ks = ks_two_sample(&raw, &mapped)?;
    let evidence = vec![
        Evidence {
            means: Some((sa.mean, sb.mean)),
            ..Evidence::new("welch_mean_neg_log", w.statistic, w.p_value)
        },
        Evidence::new("ks_neg_log", ks.statistic, ks.p_value),
    ];
    Ok(AbReport {
        map: map.name(),
        raw: sa,
        transformed: sb,
        verdict: Verdict::from_evidence(evidence, alpha, false),
    })
}

fn trajectory_evidence(
    a: &Trajectory,
    b: &Trajectory,
    labels: (&str, &str),
    prefix: &str,
) -> Result<Vec<Evidence>, DetectorError> {
    for t in [a, b] {
        if t.len() < MIN_TRAJECTORY_EVENTS {
            return Err(DetectorError::TooSmall {
                what: "trajectory comparison",
                min: MIN_TRAJECTORY_EVENTS,
                got: t.len(),
            });
        }
    }
    let (ga, gb) = (a.inter_event_times(), b.inter_event_times());
    let ks = ks_two_sample(&ga, &gb)?;
    let (sa, sb) = (summarize(&ga)?, summarize(&gb)?);
    let w = welch_t(&sa, &sb)?;
    let mut evidence = vec![
        Evidence::new(format!("{prefix}ks_inter_event"), ks.statistic, ks.p_value),
        Evidence {
            means: Some((sa.mean, sb.mean)),
            ..Evidence::new(format!("{prefix}welch_mean_inter_event"), w.statistic, w.p_value)
        },
    ];
    for (label, t) in [(labels.0, a), (labels.1, b)] {
        if t.per_clock_ticks.len() >= 2 {
            let c = chi_square_uniform(&t.per_clock_ticks)?;
            evidence.push(Evidence::new(
                format!("{prefix}chi_square_marks_{label}"),
                c.statistic,
                c.p_value,
            ));
        }
    }
    Ok(evidence)
}

pub fn serial_parallel_compare(
    serial: &Trajectory,
    parallel: &Trajectory,
    alpha: f64,
) -> Result<Verdict, DetectorError> {
    check_alpha(alpha)?;
    let evidence = trajectory_evidence(serial, parallel, ("serial", "parallel"), "")?;
    Ok(Verdict::from_evidence(evidence, alpha, false))
}

/// One parallel execution with a human-readable label.
#[derive(Debug, Clone)]
pub struct ParallelRun {
    pub label: String,
    pub config: ParallelConfig,
    pub trajectory: Trajectory,
}

/// PerClock runs must match bit for bit (a mismatch is a determinism
/// breach, i.e. a parallelization bug). PerWorker runs are compared
/// statistically against the first PerWorker run.
pub fn cross_parallel_compare(runs: &[ParallelRun], alpha: f64) -> Result<Verdict, DetectorError> {
    check_alpha(alpha)?;
    if runs.len() < 2 {
        return Err(DetectorError::Incompatible(format!(
            "need at least 2 runs, got {}",
            runs.len()
        )));
    }
    let first = &runs[0].config;
    for r in &runs[1..] {
        let c = &r.config;
        if c.n_clocks != first.n_clocks
            || c.horizon != first.horizon
            || c.seed != first.seed
            || c.pipeline != first.pipeline
        {
            return Err(DetectorError::Incompatible(format!(
                "run {} differs from {} in clocks, horizon, seed or pipeline",
                r.label, runs[0].label
            )));
        }
    }
    let mut evidence = Vec::new();
    let mut breach = false;

    let per_clock: Vec<&ParallelRun> = runs
        .iter()
        .filter(|r| r.config.stream_mode == StreamMode::PerClock)
        .collect();
    if per_clock.len() >= 2 {
        let reference = &per_clock[0].trajectory;
        let mismatches = per_clock[1..]
            .iter()
            .filter(|r| &r.trajectory != reference)
            .count();
        if mismatches > 0 {
            breach = true;
            evidence.push(Evidence::new("determinism_breach", mismatches as f64, 0.0));
        } else {
            evidence.push(Evidence::new("bit_equality", 0.0, 1.0));
        }
    }

    let per_worker: Vec<&ParallelRun> = runs
        .iter()
        .filter(|r| r.config.stream_mode == StreamMode::PerWorker)
        .collect();
    if let Some((reference, rest)) = per_worker.split_first() {
        for r in rest {
            let prefix = format!("{}~{}:", reference.label, r.label);
            evidence.extend(trajectory_evidence(
                &reference.trajectory,
                &r.trajectory,
                ("reference", "candidate"),
                &prefix,
            )?);
        }
    }
    Ok(Verdict::from_evidence(evidence, alpha, breach))
}

/// KS of inter-event times against the exponential fitted to their own
/// mean. Passing it says nothing about the source: a uniformly slowed
/// clock is still exponential.
pub fn exponential_self_check(traj: &Trajectory, alpha: f64) -> Result<Verdict, DetectorError> {
    check_alpha(alpha)?;
    let gaps = traj.inter_event_times();
    let mean = summarize(&gaps)?.mean;
    let ks = ks_one_sample(&gaps, |x| 1.0 - (-x.max(0.0) / mean).exp())?;
    Ok(Verdict::from_evidence(
        vec![Evidence::new("ks_exponential_fitted", ks.statistic, ks.p_value)],
        alpha,
        false,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixStage {
    pub ks_uniform: KsResult,
    pub ab: AbReport,
    /// Fraction of primary candidates that did not reach the output.
    pub discard_rate: f64,
    pub candidates: u64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixReport {
    pub window: (f64, f64),
    pub before: FixStage,
    pub after: FixStage,
}

impl FixReport {
    pub fn repaired(&self) -> bool {
        self.after.verdict.is_consistent()
    }
}

fn fix_stage(
    pipeline: &PipelineSpec,
    map: &MeasurePreservingMap,
    n: usize,
    alpha: f64,
    seed: Seed,
) -> Result<FixStage, DetectorError> {
    let mut source = SampleSource::new(pipeline, substream(seed, FIX_STREAM));
    let mut xs = Vec::with_capacity(n);
    for _ in 0..n {
        xs.push(source.draw()?.value());
    }
    let ks = ks_one_sample(&xs, uniform_cdf)?;
    let ab = transform_ab_test_on(pipeline, map, n, alpha, seed)?;
    let mut evidence = vec![Evidence::new("ks_uniform", ks.statistic, ks.p_value)];
    evidence.extend(ab.verdict.evidence.iter().cloned());
    Ok(FixStage {
        ks_uniform: ks,
        discard_rate: source.discard_rate(),
        candidates: source.candidates(),
        verdict: Verdict::from_evidence(evidence, alpha, false),
        ab,
    })
}

/// Uniformity and A/B verdicts on the faulted stream, then on the same
/// fault seen through the rejection-rescale window.
pub fn fix_evaluation(
    fault: FaultModel,
    window: FixWindow,
    map: &MeasurePreservingMap,
    n: usize,
    alpha: f64,
    seed: Seed,
) -> Result<FixReport, DetectorError> {
    check_alpha(alpha)?;
    if n < MIN_FIX_SAMPLES {
        return Err(DetectorError::TooSmall {
            what: "fix evaluation",
            min: MIN_FIX_SAMPLES,
            got: n,
        });
    }
    let before = fix_stage(&PipelineSpec::with_fault(fault), map, n, alpha, seed)?;
    let fixed = PipelineSpec {
        fault,
        fix: Some(window),
        map: None,
    };
    let after = fix_stage(&fixed, map, n, alpha, seed)?;
    Ok(FixReport {
        window: (window.a(), window.b()),
        before,
        after,
    })
}

/// Full description of one reproducible experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentPlan {
    pub seeds: Vec<Seed>,
    pub n_clocks: u32,
    pub horizon: f64,
    pub fault: FaultModel,
    pub map: Option<MeasurePreservingMap>,
    pub fix: Option<FixWindow>,
    pub workers: Vec<u32>,
    pub mappings: Vec<MappingKind>,
    pub stream_modes: Vec<StreamMode>,
    pub alpha: f64,
    pub fix_samples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub defect: Option<ParallelDefect>,
    #[serde(skip)]
    pub execution: Execution,
}

impl ExperimentPlan {
    /// A plan with one seed, PerClock streams, one worker count and mapping.
    pub fn basic(seed: Seed, n_clocks: u32, horizon: f64, fault: FaultModel) -> Self {
        Self {
            seeds: vec![seed],
            n_clocks,
            horizon,
            fault,
            map: None,
            fix: None,
            workers: vec![1],
            mappings: vec![MappingKind::ContiguousBlocks],
            stream_modes: vec![StreamMode::PerClock],
            alpha: DEFAULT_ALPHA,
            fix_samples: MIN_FIX_SAMPLES,
            defect: None,
            execution: Execution::default(),
        }
    }

    pub fn validate(&self) -> Result<(), DetectorError> {
        let bad = |field, reason: &str| {
            Err(DetectorError::Plan {
                field,
                reason: reason.to_string(),
            })
        };
        if self.seeds.is_empty() {
            return bad("seeds", "seed list is empty");
        }
        check_alpha(self.alpha)?;
        if self.n_clocks == 0 {
            return bad("n_clocks", "must be >= 1");
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad("horizon", "must be finite and > 0");
        }
        if let Err(e) = self.fault.validate() {
            return bad("fault", &e.to_string());
        }
        if self.workers.is_empty() || self.workers.contains(&0) {
            return bad("workers", "need a nonempty list of counts >= 1");
        }
        if self.mappings.is_empty() {
            return bad("mappings", "list is empty");
        }
        if self.stream_modes.is_empty() {
            return bad("stream_modes", "list is empty");
        }
        if self.fix.is_some() && self.fix_samples < MIN_FIX_SAMPLES {
            return bad("fix_samples", "must be >= 10000");
        }
        Ok(())
    }

    fn pipeline(&self) -> PipelineSpec {
        PipelineSpec {
            fault: self.fault,
            fix: self.fix,
            map: self.map.clone(),
        }
    }

    /// Every (mode, workers, mapping) cell, in report order.
    fn cells(&self) -> Vec<(StreamMode, u32, MappingKind)> {
        let mut cells = Vec::new();
        for &mode in &self.stream_modes {
            for &p in &self.workers {
                for &m in &self.mappings {
                    cells.push((mode, p, m));
                }
            }
        }
        cells
    }
}

pub fn run_label(mode: StreamMode, workers: u32, mapping: MappingKind) -> String {
    format!("{}/P{}/{}", mode.name(), workers, mapping.name())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectorySummary {
    pub events: usize,
    pub final_time: f64,
    pub total_draws: u64,
    pub mean_inter_event: f64,
    pub per_clock_ticks: Vec<u64>,
}

impl TrajectorySummary {
    fn of(t: &Trajectory) -> Self {
        let gaps = t.inter_event_times();
        Self {
            events: t.len(),
            final_time: t.final_time,
            total_draws: t.total_draws,
            mean_inter_event: summarize(&gaps).map_or(0.0, |s| s.mean),
            per_clock_ticks: t.per_clock_ticks.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParallelSummary {
    pub label: String,
    pub mapping: MappingKind,
    pub stream_mode: StreamMode,
    pub workers: u32,
    pub summary: TrajectorySummary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Pairing {
    pub name: String,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftEntry {
    pub run: String,
    pub nominal_rate: f64,
    pub report: DriftReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedReport {
    pub seed: Seed,
    pub serial: TrajectorySummary,
    pub serial_self_check: Verdict,
    pub parallel: Vec<ParallelSummary>,
    pub pairings: Vec<Pairing>,
    pub drift: Vec<DriftEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fix: Option<FixReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub plan: ExperimentPlan,
    pub seeds: Vec<SeedReport>,
}

impl ComparisonReport {
    pub fn pairings(&self) -> impl Iterator<Item = &Pairing> {
        self.seeds.iter().flat_map(|s| s.pairings.iter())
    }

    pub fn any_breach(&self) -> bool {
        self.pairings().any(|p| p.verdict.determinism_breach)
    }

    pub fn any_divergence(&self) -> bool {
        self.pairings().any(|p| !p.verdict.is_consistent())
    }
}

/// Named trajectory kept for CSV export.
#[derive(Debug, Clone)]
pub struct NamedTrajectory {
    pub seed: Seed,
    pub label: String,
    pub trajectory: Trajectory,
}

pub fn run_experiment(plan: &ExperimentPlan) -> Result<ComparisonReport, DetectorError> {
    run_experiment_keeping(plan, false).map(|(r, _)| r)
}

/// Runs the plan; with `keep` set also returns every simulated trajectory.
pub fn run_experiment_keeping(
    plan: &ExperimentPlan,
    keep: bool,
) -> Result<(ComparisonReport, Vec<NamedTrajectory>), DetectorError> {
    plan.validate()?;
    let results = plan
        .execution
        .map(plan.seeds.clone(), |seed| run_seed(plan, seed, keep));
    let mut seeds = Vec::with_capacity(results.len());
    let mut kept = Vec::new();
    for r in results {
        let (report, trajectories) = r?;
        seeds.push(report);
        kept.extend(trajectories);
    }
    Ok((
        ComparisonReport {
            plan: plan.clone(),
            seeds,
        },
        kept,
    ))
}

fn run_seed(
    plan: &ExperimentPlan,
    seed: Seed,
    keep: bool,
) -> Result<(SeedReport, Vec<NamedTrajectory>), DetectorError> {
    let pipeline = plan.pipeline();
    let serial = simulate_serial(&SerialConfig {
        n_clocks: plan.n_clocks,
        horizon: plan.horizon,
        seed,
        pipeline: pipeline.clone(),
    })?;

    let cells = plan.cells();
    let runs = plan.execution.map(cells.clone(), |(mode, p, m)| {
        let config = ParallelConfig {
            n_clocks: plan.n_clocks,
            horizon: plan.horizon,
            seed,
            pipeline: pipeline.clone(),
            workers: p,
            mapping: m.generate(plan.n_clocks, p, seed),
            stream_mode: mode,
            defect: plan.defect,
            execution: plan.execution,
        };
        simulate_parallel(&config).map(|trajectory| ParallelRun {
            label: run_label(mode, p, m),
            config,
            trajectory,
        })
    });
    let runs = runs.into_iter().collect::<Result<Vec<_>, _>>()?;

    let rate = plan.n_clocks as f64;
    let mut pairings = Vec::new();
    let mut drift = vec![DriftEntry {
        run: "serial".into(),
        nominal_rate: rate,
        report: clock_drift(&serial, rate)?,
    }];
    for r in &runs {
        pairings.push(Pairing {
            name: format!("serial~{}", r.label),
            verdict: serial_parallel_compare(&serial, &r.trajectory, plan.alpha)?,
        });
        drift.push(DriftEntry {
            run: r.label.clone(),
            nominal_rate: rate,
            report: clock_drift(&r.trajectory, rate)?,
        });
    }
    for mode in &plan.stream_modes {
        let group: Vec<ParallelRun> = runs
            .iter()
            .filter(|r| r.config.stream_mode == *mode)
            .cloned()
            .collect();
        if group.len() >= 2 {
            pairings.push(Pairing {
                name: format!("cross~{}", mode.name()),
                verdict: cross_parallel_compare(&group, plan.alpha)?,
            });
        }
    }

    let fix = match plan.fix {
        Some(window) => Some(fix_evaluation(
            plan.fault,
            window,
            plan.map.as_ref().unwrap_or(&MeasurePreservingMap::Reflect),
            plan.fix_samples,
            plan.alpha,
            seed,
        )?),
        None => None,
    };

    let report = SeedReport {
        seed,
        serial: TrajectorySummary::of(&serial),
        serial_self_check: exponential_self_check(&serial, plan.alpha)?,
        parallel: runs
            .iter()
            .zip(&cells)
            .map(|(r, &(_, _, mapping))| ParallelSummary {
                label: r.label.clone(),
                mapping,
                stream_mode: r.config.stream_mode,
                workers: r.config.workers,
                summary: TrajectorySummary::of(&r.trajectory),
            })
            .collect(),
        pairings,
        drift,
        fix,
    };
    let kept = if keep {
        std::iter::once(NamedTrajectory {
            seed,
            label: "serial".into(),
            trajectory: serial,
        })
        .chain(runs.into_iter().map(|r| NamedTrajectory {
            seed,
            label: r.label,
            trajectory: r.trajectory,
        }))
        .collect()
    } else {
        Vec::new()
    };
    Ok((report, kept))
}
