//! Command-line front end: TOML experiment config in, report bundle out.
//!
//! Exit codes: 0 consistent, 1 usage or config error, 2 statistical
//! divergence, 3 determinism breach.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::detector::{
    fix_evaluation, run_experiment_keeping, transform_ab_test, AbReport, ComparisonReport,
    ExperimentPlan, FixReport, NamedTrajectory, Outcome, Verdict, DEFAULT_ALPHA, MIN_FIX_SAMPLES,
};
use crate::exec::Execution;
use crate::process::{MappingKind, ParallelDefect, StreamMode};
use crate::rng::{FaultModel, Seed};
use crate::seeds::expand_seed_count;
use crate::stats::binomial_upper_band;
use crate::transforms::{FixWindow, MeasurePreservingMap};

pub const SCHEMA_VERSION: u32 = 1;
pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DIVERGENCE: i32 = 2;
pub const EXIT_BREACH: i32 = 3;

pub const SUMMARY_HEADER: [&str; 7] = [
    "pairing",
    "test",
    "statistic",
    "p_value",
    "verdict",
    "mean_a",
    "mean_b",
];
pub const EVENTS_HEADER: [&str; 3] = ["time", "mark", "draw_index"];
/// Tail mass beyond the calibration band on per-test rejection counts.
pub const CALIBRATION_BAND_TAIL: f64 = 0.001;

#[derive(Debug, Parser)]
#[command(name = "montecheck", version, about = "Serial vs parallel Monte Carlo RNG fault detector")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides [output] directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Run a single seed instead of the configured list.
    #[arg(long, global = true)]
    pub seed_override: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Run the full plan under the ideal source and check type-I rates.
    Calibrate,
    /// Compare serial and parallel runs under the configured source.
    Detect,
    /// Transform A/B test on the source.
    AbTest,
    /// Before/after evaluation of the rejection-rescale fix.
    FixDemo,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Calibrate => "calibrate",
            Command::Detect => "detect",
            Command::AbTest => "ab-test",
            Command::FixDemo => "fix-demo",
        }
    }
}

#[derive(Debug, Error)]
#[error("config error at `{key}`: {reason}")]
pub struct ConfigError {
    pub key: String,
    pub reason: String,
}

fn cfg_err(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError {
        key: key.to_string(),
        reason: reason.into(),
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub experiment: ExperimentSection,
    pub fault: Option<FaultSection>,
    pub transform: Option<TransformSection>,
    pub fix: Option<FixSection>,
    #[serde(default)]
    pub parallel: ParallelSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub debug: DebugSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub seed: Option<u64>,
    pub seeds: Option<Vec<u64>>,
    pub seed_count: Option<usize>,
    pub n_clocks: Option<u32>,
    pub horizon: Option<f64>,
    pub alpha: Option<f64>,
    pub ab_samples: Option<usize>,
    pub fix_samples: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSection {
    pub kind: String,
    pub gamma: Option<f64>,
    pub c: Option<f64>,
    pub q: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformSection {
    /// Each entry is one transform; commas compose stages left to right.
    pub names: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixSection {
    pub a: Option<f64>,
    pub b: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParallelSection {
    pub workers: Option<Vec<u32>>,
    pub mappings: Option<Vec<String>>,
    pub stream_modes: Option<Vec<String>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub directory: Option<PathBuf>,
    pub formats: Option<Vec<String>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DebugSection {
    /// Seeds per-clock streams by worker id; exists to exercise exit code 3.
    #[serde(default)]
    pub break_determinism: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Formats {
    pub json: bool,
    pub summary_csv: bool,
    pub events_csv: bool,
}

/// Validated configuration.
#[derive(Debug, Clone)]
pub struct Settings {
    pub plan: ExperimentPlan,
    pub transforms: Vec<MeasurePreservingMap>,
    pub ab_samples: usize,
    pub fault_configured: bool,
    pub out_dir: PathBuf,
    pub formats: Formats,
}

pub const DEFAULT_SEED_COUNT: usize = 20;
pub const DEFAULT_N_CLOCKS: u32 = 16;
pub const DEFAULT_HORIZON: f64 = 1000.0;
pub const DEFAULT_AB_SAMPLES: usize = 100_000;

pub fn parse_map(spec: &str) -> Option<MeasurePreservingMap> {
    let stages: Option<Vec<MeasurePreservingMap>> = spec
        .split(',')
        .map(|s| match s.trim() {
            "reflect" => Some(MeasurePreservingMap::Reflect),
            "rotate_half" => Some(MeasurePreservingMap::RotateHalf),
            _ => None,
        })
        .collect();
    let mut stages = stages?;
    if stages.len() == 1 {
        stages.pop()
    } else {
        Some(MeasurePreservingMap::Compose(stages))
    }
}

fn parse_fault(section: &FaultSection) -> Result<FaultModel, ConfigError> {
    let need = |v: Option<f64>, key: &str| v.ok_or_else(|| cfg_err(key, "missing"));
    let fault = match section.kind.as_str() {
        "ideal" => FaultModel::Ideal,
        "power_bias" => FaultModel::PowerBias {
            gamma: need(section.gamma, "fault.gamma")?,
        },
        "low_thinning" => FaultModel::LowThinning {
            c: need(section.c, "fault.c")?,
            q: need(section.q, "fault.q")?,
        },
        other => {
            return Err(cfg_err(
                "fault.kind",
                format!("unknown kind {other:?} (ideal | power_bias | low_thinning)"),
            ))
        }
    };
    fault.validate().map_err(|e| {
        let key = match fault {
            FaultModel::PowerBias { .. } => "fault.gamma",
            _ => "fault",
        };
        cfg_err(key, e.to_string())
    })?;
    Ok(fault)
}

impl Settings {
    pub fn from_file(cfg: ConfigFile, cli: &Cli) -> Result<Self, ConfigError> {
        let e = &cfg.experiment;
        let seeds: Vec<Seed> = if let Some(s) = cli.seed_override {
            vec![Seed(s)]
        } else if let Some(list) = &e.seeds {
            list.iter().map(|&s| Seed(s)).collect()
        } else if let Some(s) = e.seed {
            vec![Seed(s)]
        } else {
            expand_seed_count(e.seed_count.unwrap_or(DEFAULT_SEED_COUNT))
        };
        if seeds.is_empty() {
            return Err(cfg_err("experiment.seeds", "seed list is empty"));
        }
        let alpha = e.alpha.unwrap_or(DEFAULT_ALPHA);
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(cfg_err("experiment.alpha", format!("must lie in (0,1), got {alpha}")));
        }
        let n_clocks = e.n_clocks.unwrap_or(DEFAULT_N_CLOCKS);
        if n_clocks == 0 {
            return Err(cfg_err("experiment.n_clocks", "must be >= 1"));
        }
        let horizon = e.horizon.unwrap_or(DEFAULT_HORIZON);
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(cfg_err("experiment.horizon", "must be finite and > 0"));
        }
        let ab_samples = e.ab_samples.unwrap_or(DEFAULT_AB_SAMPLES);
        if ab_samples < crate::detector::MIN_AB_SAMPLES {
            return Err(cfg_err("experiment.ab_samples", "must be >= 1000"));
        }
        let fix_samples = e.fix_samples.unwrap_or(MIN_FIX_SAMPLES);
        if fix_samples < MIN_FIX_SAMPLES {
            return Err(cfg_err("experiment.fix_samples", "must be >= 10000"));
        }

        let fault = match &cfg.fault {
            Some(f) => parse_fault(f)?,
            None => FaultModel::Ideal,
        };

        let transforms = match &cfg.transform {
            Some(t) => {
                if t.names.is_empty() {
                    return Err(cfg_err("transform.names", "list is empty"));
                }
                t.names
                    .iter()
                    .map(|n| {
                        parse_map(n).ok_or_else(|| {
                            cfg_err(
                                "transform.names",
                                format!("unknown transform {n:?} (reflect | rotate_half, comma-composed)"),
                            )
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()?
            }
            None => Vec::new(),
        };

        let fix = match &cfg.fix {
            Some(f) => {
                let a = f.a.ok_or_else(|| cfg_err("fix.a", "missing"))?;
                let b = f.b.ok_or_else(|| cfg_err("fix.b", "missing"))?;
                Some(FixWindow::new(a, b).map_err(|e| cfg_err("fix", e.to_string()))?)
            }
            None => None,
        };

        let p = &cfg.parallel;
        let workers = p.workers.clone().unwrap_or_else(|| vec![1, 4]);
        if workers.is_empty() || workers.contains(&0) {
            return Err(cfg_err("parallel.workers", "need a nonempty list of counts >= 1"));
        }
        let mappings = match &p.mappings {
            Some(names) => names
                .iter()
                .map(|n| {
                    MappingKind::parse(n).ok_or_else(|| {
                        cfg_err(
                            "parallel.mappings",
                            format!("unknown mapping {n:?} (contiguous-blocks | round-robin | seeded-shuffle)"),
                        )
                    })
                })
                .collect::<Result<Vec<_>, _>>()?,
            None => vec![
                MappingKind::ContiguousBlocks,
                MappingKind::RoundRobin,
                MappingKind::SeededShuffle,
            ],
        };
        if mappings.is_empty() {
            return Err(cfg_err("parallel.mappings", "list is empty"));
        }
        let stream_modes = match &p.stream_modes {
            Some(names) => names
                .iter()
                .map(|n| match n.as_str() {
                    "per_clock" => Ok(StreamMode::PerClock),
                    "per_worker" => Ok(StreamMode::PerWorker),
                    other => Err(cfg_err(
                        "parallel.stream_modes",
                        format!("unknown stream mode {other:?} (per_clock | per_worker)"),
                    )),
                })
                .collect::<Result<Vec<_>, _>>()?,
            None => vec![StreamMode::PerClock],
        };
        if stream_modes.is_empty() {
            return Err(cfg_err("parallel.stream_modes", "list is empty"));
        }

        let formats = match &cfg.output.formats {
            None => Formats {
                json: true,
                summary_csv: true,
                events_csv: true,
            },
            Some(list) => {
                let mut f = Formats {
                    json: false,
                    summary_csv: false,
                    events_csv: false,
                };
                for name in list {
                    match name.as_str() {
                        "json" => f.json = true,
                        "csv" => f.summary_csv = true,
                        "events" => f.events_csv = true,
                        other => {
                            return Err(cfg_err(
                                "output.formats",
                                format!("unknown format {other:?} (json | csv | events)"),
                            ))
                        }
                    }
                }
                f
            }
        };
        let out_dir = cli
            .out
            .clone()
            .or_else(|| cfg.output.directory.clone())
            .unwrap_or_else(|| PathBuf::from("montecheck-out"));

        let plan = ExperimentPlan {
            seeds,
            n_clocks,
            horizon,
            fault,
            map: transforms.first().cloned(),
            fix,
            workers,
            mappings,
            stream_modes,
            alpha,
            fix_samples,
            defect: cfg
                .debug
                .break_determinism
                .then_some(ParallelDefect::WorkerSeededClocks),
            execution: Execution::Parallel,
        };
        Ok(Settings {
            plan,
            transforms,
            ab_samples,
            fault_configured: cfg.fault.is_some(),
            out_dir,
            formats,
        })
    }
}

pub fn load_config(path: &Path) -> Result<ConfigFile, ConfigError> {
    let text = fs::read_to_string(path)
        .map_err(|e| cfg_err("--config", format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| {
        let msg = e.message().to_string();
        // toml reports unknown keys as "unknown field `x`"; surface the key name
        let key = msg
            .split('`')
            .nth(1)
            .map(str::to_string)
            .unwrap_or_else(|| "config".to_string());
        cfg_err(&key, msg)
    })
}

/// Serializes a float exactly as it appears in report.json.
pub fn json_number(v: f64) -> String {
    if v.is_finite() {
        serde_json::to_string(&v).expect("finite float")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SummaryRow {
    pub pairing: String,
    pub test: String,
    pub statistic: f64,
    pub p_value: f64,
    pub verdict: Outcome,
    pub means: Option<(f64, f64)>,
}

fn rows_for(pairing: &str, v: &Verdict) -> Vec<SummaryRow> {
    v.evidence
        .iter()
        .map(|e| SummaryRow {
            pairing: pairing.to_string(),
            test: e.test.clone(),
            statistic: e.statistic,
            p_value: e.p_value,
            verdict: v.outcome,
            means: e.means,
        })
        .collect()
}

fn seed_tag(seed: Seed) -> String {
    format!("{:016x}", seed.0)
}

#[derive(Debug, Clone, Serialize)]
pub struct SeededAb {
    pub seed: Seed,
    pub ab: AbReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct SeededFix {
    pub seed: Seed,
    pub fix: FixReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct Calibration {
    pub band_tail: f64,
    pub per_test: Vec<TestTally>,
    pub within_band: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct TestTally {
    pub test: String,
    pub trials: u64,
    pub flagged: u64,
    pub band: u64,
}

/// What one command produced, before it is written out.
#[derive(Debug, Clone, Default, Serialize)]
pub struct CommandResult {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub experiment: Option<ComparisonReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub calibration: Option<Calibration>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub ab_tests: Vec<SeededAb>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub fix: Vec<SeededFix>,
    #[serde(skip)]
    pub trajectories: Vec<NamedTrajectory>,
    #[serde(skip)]
    pub rows: Vec<SummaryRow>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

fn experiment_rows(report: &ComparisonReport) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for s in &report.seeds {
        for p in &s.pairings {
            rows.extend(rows_for(&format!("{}/{}", seed_tag(s.seed), p.name), &p.verdict));
        }
        if let Some(fix) = &s.fix {
            rows.extend(rows_for(&format!("{}/fix/before", seed_tag(s.seed)), &fix.before.verdict));
            rows.extend(rows_for(&format!("{}/fix/after", seed_tag(s.seed)), &fix.after.verdict));
        }
    }
    rows
}

/// Strips the `a~b:` pair prefix from cross-parallel evidence names.
fn base_test_name(test: &str) -> &str {
    test.rsplit(':').next().unwrap_or(test)
}

fn calibration_tally(report: &ComparisonReport, alpha: f64) -> Calibration {
    let mut per_test: Vec<TestTally> = Vec::new();
    for p in report.pairings() {
        for e in &p.verdict.evidence {
            let name = base_test_name(&e.test);
            // bit equality is exact, not a level-alpha test
            if name == "bit_equality" || name == "determinism_breach" {
                continue;
            }
            let idx = match per_test.iter().position(|t| t.test == name) {
                Some(i) => i,
                None => {
                    per_test.push(TestTally {
                        test: name.to_string(),
                        trials: 0,
                        flagged: 0,
                        band: 0,
                    });
                    per_test.len() - 1
                }
            };
            per_test[idx].trials += 1;
            if e.p_value < alpha {
                per_test[idx].flagged += 1;
            }
        }
    }
    for t in &mut per_test {
        t.band = binomial_upper_band(t.trials, alpha, CALIBRATION_BAND_TAIL);
    }
    let within_band = per_test.iter().all(|t| t.flagged <= t.band);
    Calibration {
        band_tail: CALIBRATION_BAND_TAIL,
        per_test,
        within_band,
    }
}

/// Runs one command on validated settings. Returns the exit code and result.
pub fn execute(command: Command, settings: &Settings) -> anyhow::Result<(i32, CommandResult)> {
    let mut result = CommandResult::default();
    let want_events = settings.formats.events_csv;
    let code = match command {
        Command::Calibrate => {
            let mut plan = settings.plan.clone();
            if !plan.fault.is_ideal() {
                let w = format!(
                    "calibrate forces the ideal source; configured fault {:?} is ignored",
                    plan.fault
                );
                eprintln!("warning: {w}");
                result.warnings.push(w);
            }
            plan.fault = FaultModel::Ideal;
            let (report, trajectories) = run_experiment_keeping(&plan, want_events)?;
            let cal = calibration_tally(&report, plan.alpha);
            result.rows = experiment_rows(&report);
            let code = if report.any_breach() {
                EXIT_BREACH
            } else if cal.within_band {
                EXIT_OK
            } else {
                EXIT_DIVERGENCE
            };
            result.calibration = Some(cal);
            result.experiment = Some(report);
            result.trajectories = trajectories;
            code
        }
        Command::Detect => {
            let (report, trajectories) = run_experiment_keeping(&settings.plan, want_events)?;
            result.rows = experiment_rows(&report);
            let code = if report.any_breach() {
                EXIT_BREACH
            } else if report.any_divergence() {
                EXIT_DIVERGENCE
            } else {
                EXIT_OK
            };
            result.experiment = Some(report);
            result.trajectories = trajectories;
            code
        }
        Command::AbTest => {
            if settings.transforms.is_empty() {
                anyhow::bail!(cfg_err("transform", "ab-test needs a [transform] section with names"));
            }
            let plan = &settings.plan;
            let cells: Vec<(Seed, MeasurePreservingMap)> = plan
                .seeds
                .iter()
                .flat_map(|&s| settings.transforms.iter().map(move |m| (s, m.clone())))
                .collect();
            let reports = plan.execution.map(cells, |(seed, map)| {
                transform_ab_test(plan.fault, &map, settings.ab_samples, plan.alpha, seed)
                    .map(|ab| SeededAb { seed, ab })
            });
            let mut any = false;
            for r in reports {
                let r = r?;
                any |= !r.ab.verdict.is_consistent();
                result.rows.extend(rows_for(
                    &format!("{}/ab/{}", seed_tag(r.seed), r.ab.map),
                    &r.ab.verdict,
                ));
                result.ab_tests.push(r);
            }
            if any {
                EXIT_DIVERGENCE
            } else {
                EXIT_OK
            }
        }
        Command::FixDemo => {
            let plan = &settings.plan;
            let window = plan
                .fix
                .ok_or_else(|| cfg_err("fix", "fix-demo needs a [fix] section with a and b"))?;
            let map = settings
                .transforms
                .first()
                .cloned()
                .unwrap_or(MeasurePreservingMap::Reflect);
            let reports = plan.execution.map(plan.seeds.clone(), |seed| {
                fix_evaluation(plan.fault, window, &map, plan.fix_samples, plan.alpha, seed)
                    .map(|fix| SeededFix { seed, fix })
            });
            let mut repaired = true;
            for r in reports {
                let r = r?;
                repaired &= r.fix.repaired();
                let tag = seed_tag(r.seed);
                result.rows.extend(rows_for(&format!("{tag}/fix/before"), &r.fix.before.verdict));
                result.rows.extend(rows_for(&format!("{tag}/fix/after"), &r.fix.after.verdict));
                result.fix.push(r);
            }
            if repaired {
                EXIT_OK
            } else {
                EXIT_DIVERGENCE
            }
        }
    };
    Ok((code, result))
}

/// Builds the report.json document. Object keys come out sorted because
/// serde_json's map is ordered.
pub fn report_document(command: Command, exit_code: i32, result: &CommandResult, generated_unix: u64) -> anyhow::Result<Value> {
    let mut doc = serde_json::Map::new();
    doc.insert("schema_version".into(), SCHEMA_VERSION.into());
    doc.insert("command".into(), command.name().into());
    doc.insert("exit_code".into(), exit_code.into());
    doc.insert("generated_unix".into(), generated_unix.into());
    doc.insert("result".into(), serde_json::to_value(result)?);
    Ok(Value::Object(doc))
}

fn sanitize(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

pub fn write_bundle(
    dir: &Path,
    command: Command,
    exit_code: i32,
    result: &CommandResult,
    formats: Formats,
) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    if formats.json {
        let now = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        let doc = report_document(command, exit_code, result, now)?;
        let mut text = serde_json::to_string_pretty(&doc)?;
        text.push('\n');
        fs::write(dir.join("report.json"), text)?;
    }
    if formats.summary_csv {
        let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
        w.write_record(SUMMARY_HEADER)?;
        for r in &result.rows {
            let (ma, mb) = r
                .means
                .map_or((String::new(), String::new()), |(a, b)| (json_number(a), json_number(b)));
            let verdict = match r.verdict {
                Outcome::Consistent => "consistent",
                Outcome::DivergenceDetected => "divergence_detected",
            };
            w.write_record([
                r.pairing.as_str(),
                r.test.as_str(),
                &json_number(r.statistic),
                &json_number(r.p_value),
                verdict,
                &ma,
                &mb,
            ])?;
        }
        w.flush()?;
    }
    if formats.events_csv && !result.trajectories.is_empty() {
        let events_dir = dir.join("events");
        fs::create_dir_all(&events_dir)?;
        for t in &result.trajectories {
            let name = format!("{}_{}.csv", seed_tag(t.seed), sanitize(&t.label));
            let mut w = csv::Writer::from_path(events_dir.join(name))?;
            w.write_record(EVENTS_HEADER)?;
            for e in &t.trajectory.events {
                w.write_record([json_number(e.time), e.mark.to_string(), e.draw_index.to_string()])?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

fn run_cli(cli: &Cli) -> i32 {
    let settings = match cli.config.as_deref() {
        Some(path) => load_config(path),
        None => Ok(ConfigFile::default()),
    }
    .and_then(|cfg| Settings::from_file(cfg, cli));
    let settings = match settings {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    let (code, result) = match execute(cli.command, &settings) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e:#}");
            return EXIT_USAGE;
        }
    };
    if let Err(e) = write_bundle(&settings.out_dir, cli.command, code, &result, settings.formats) {
        eprintln!("error: writing report bundle: {e:#}");
        return EXIT_USAGE;
    }
    let flagged = result
        .rows
        .iter()
        .filter(|r| r.p_value < settings.plan.alpha)
        .count();
    eprintln!(
        "{}: {} rows, {} below alpha={}, exit {}; bundle in {}",
        cli.command.name(),
        result.rows.len(),
        flagged,
        settings.plan.alpha,
        code,
        settings.out_dir.display()
    );
    code
}

/// Entry point shared by the binary and in-process tests. Always returns
/// one of the four documented exit codes.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    std::panic::catch_unwind(|| run_cli(&cli)).unwrap_or(EXIT_USAGE)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings(toml_text: &str) -> Result<Settings, ConfigError> {
        let cli = Cli::try_parse_from(["montecheck", "detect"]).unwrap();
        let cfg: ConfigFile = toml::from_str(toml_text).map_err(|e| cfg_err("toml", e.to_string()))?;
        Settings::from_file(cfg, &cli)
    }

    #[test]
    fn defaults() {
        let s = settings("").unwrap();
        assert_eq!(s.plan.seeds.len(), DEFAULT_SEED_COUNT);
        assert_eq!(s.plan.seeds[0], Seed(crate::rng::mix64(0)));
        assert_eq!(s.plan.n_clocks, 16);
        assert_eq!(s.plan.alpha, 0.01);
        assert_eq!(s.plan.mappings.len(), 3);
        assert!(s.formats.json && s.formats.summary_csv && s.formats.events_csv);
    }

    #[test]
    fn bad_values_name_their_key() {
        let e = settings("[experiment]\nalpha = 1.5\n").unwrap_err();
        assert!(e.to_string().contains("alpha"));
        let e = settings("[parallel]\nmappings = [\"striped\"]\n").unwrap_err();
        assert_eq!(e.key, "parallel.mappings");
        let e = settings("[fix]\na = 0.9\nb = 0.1\n").unwrap_err();
        assert_eq!(e.key, "fix");
        let e = settings("[fault]\nkind = \"power_bias\"\n").unwrap_err();
        assert_eq!(e.key, "fault.gamma");
        let e = settings("[transform]\nnames = [\"twist\"]\n").unwrap_err();
        assert_eq!(e.key, "transform.names");
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = toml::from_str::<ConfigFile>("[experiment]\nsed = 3\n").unwrap_err();
        assert!(err.message().contains("sed"));
        assert!(toml::from_str::<ConfigFile>("[plotting]\nx = 1\n").is_err());
    }

    #[test]
    fn transform_names_compose() {
        assert_eq!(parse_map("reflect"), Some(MeasurePreservingMap::Reflect));
        assert_eq!(
            parse_map("rotate_half, reflect"),
            Some(MeasurePreservingMap::Compose(vec![
                MeasurePreservingMap::RotateHalf,
                MeasurePreservingMap::Reflect
            ]))
        );
        assert_eq!(parse_map("reflect,spin"), None);
    }

    #[test]
    fn json_numbers_match_serde() {
        for v in [0.1, 1e-7, 12345.678, 0.0, 1.0 / 3.0] {
            let s = json_number(v);
            assert_eq!(s, serde_json::to_value(v).unwrap().to_string());
        }
        assert_eq!(json_number(f64::INFINITY), "inf");
    }

    #[test]
    fn pair_prefix_stripped() {
        assert_eq!(base_test_name("a/P1/x~a/P2/y:ks_inter_event"), "ks_inter_event");
        assert_eq!(base_test_name("ks_inter_event"), "ks_inter_event");
    }
}
