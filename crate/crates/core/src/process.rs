//! Serial merged clock and parallel per-clock simulation of the same
//! superposed Poisson process.
//!
//! Serial: one stream, global rate `N`, two pipeline draws per event (time
//! increment, then mark). Parallel: `N` unit-rate clocks, one draw per tick,
//! spread over `P` workers. With a uniform source both produce a rate-`N`
//! Poisson process with uniform marks. Stream ids are fixed: serial uses 0,
//! clock `i` uses `i + 1`, worker `w` uses `10^6 + w`.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::rng::{substream, Seed, StreamId, UnitSample};
use crate::source::{DrawSource, PipelineSpec, SampleSource};
use crate::transforms::TransformError;

pub const SERIAL_STREAM: StreamId = StreamId(0);
pub const WORKER_STREAM_BASE: u64 = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProcessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("sample pipeline failed: {0}")]
    Pipeline(#[from] TransformError),
    #[error("increment needs u in (0,1) and rate > 0, got u={u}, rate={rate}")]
    Domain { u: f64, rate: f64 },
    #[error("merge input part {part} is not time-sorted at index {index}")]
    UnsortedPart { part: usize, index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    pub mark: u32,
    pub draw_index: u64,
}

impl Event {
    fn order(&self, other: &Event) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.mark.cmp(&other.mark))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub events: Vec<Event>,
    pub final_time: f64,
    pub total_draws: u64,
    pub per_clock_ticks: Vec<u64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Gaps between consecutive events, the first measured from time zero.
    pub fn inter_event_times(&self) -> Vec<f64> {
        let mut prev = 0.0;
        self.events
            .iter()
            .map(|e| {
                let dt = e.time - prev;
                prev = e.time;
                dt
            })
            .collect()
    }

    /// First `k` events, with ticks recounted.
    pub fn prefix(&self, k: usize) -> Trajectory {
        let events: Vec<Event> = self.events.iter().take(k).copied().collect();
        let mut per_clock_ticks = vec![0; self.per_clock_ticks.len()];
        for e in &events {
            per_clock_ticks[e.mark as usize] += 1;
        }
        Trajectory {
            final_time: events.last().map_or(0.0, |e| e.time),
            total_draws: events.last().map_or(0, |e| e.draw_index),
            events,
            per_clock_ticks,
        }
    }
}

/// Exponential increment `-ln(u) / rate`.
pub fn exp_increment(u: f64, rate: f64) -> Result<f64, ProcessError> {
    if !(u > 0.0 && u < 1.0) || !(rate > 0.0 && rate.is_finite()) {
        return Err(ProcessError::Domain { u, rate });
    }
    Ok(-u.ln() / rate)
}

#[inline]
fn increment(u: UnitSample, rate: f64) -> f64 {
    -u.value().ln() / rate
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SerialConfig {
    pub n_clocks: u32,
    pub horizon: f64,
    pub seed: Seed,
    pub pipeline: PipelineSpec,
}

fn check_common(n_clocks: u32, horizon: f64) -> Result<(), ProcessError> {
    if n_clocks == 0 {
        return Err(ProcessError::Config("n_clocks must be >= 1".into()));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(ProcessError::Config(format!(
            "horizon must be finite and > 0, got {horizon}"
        )));
    }
    Ok(())
}

fn check_pipeline(p: &PipelineSpec) -> Result<(), ProcessError> {
    p.fault
        .validate()
        .map_err(|e| ProcessError::Config(e.to_string()))
}

impl SerialConfig {
    pub fn validate(&self) -> Result<(), ProcessError> {
        check_common(self.n_clocks, self.horizon)?;
        check_pipeline(&self.pipeline)
    }
}

pub fn simulate_serial(cfg: &SerialConfig) -> Result<Trajectory, ProcessError> {
    cfg.validate()?;
    let source = SampleSource::new(&cfg.pipeline, substream(cfg.seed, SERIAL_STREAM));
    simulate_serial_from(cfg.n_clocks, cfg.horizon, source)
}

/// Serial loop over an already-positioned source (also used by tests with
/// scripted streams).
pub fn simulate_serial_from(
    n_clocks: u32,
    horizon: f64,
    mut source: impl DrawSource,
) -> Result<Trajectory, ProcessError> {
    check_common(n_clocks, horizon)?;
    let n = n_clocks as f64;
    let mut t = 0.0;
    let mut events = Vec::new();
    let mut per_clock_ticks = vec![0u64; n_clocks as usize];
    loop {
        let next = t + increment(source.next_sample()?, n);
        if next > horizon {
            break;
        }
        t = next;
        let mark = ((source.next_sample()?.value() * n) as u32).min(n_clocks - 1);
        per_clock_ticks[mark as usize] += 1;
        events.push(Event {
            time: t,
            mark,
            draw_index: source.raw_draws(),
        });
    }
    Ok(Trajectory {
        final_time: events.last().map_or(0.0, |e| e.time),
        total_draws: source.raw_draws(),
        events,
        per_clock_ticks,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamMode {
    PerClock,
    PerWorker,
}

impl StreamMode {
    pub fn name(self) -> &'static str {
        match self {
            StreamMode::PerClock => "per_clock",
            StreamMode::PerWorker => "per_worker",
        }
    }
}

/// Deliberate parallelization bugs, used only to exercise breach detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParallelDefect {
    /// Per-clock streams keyed by (worker, clock) instead of clock alone.
    WorkerSeededClocks,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParallelConfig {
    pub n_clocks: u32,
    pub horizon: f64,
    pub seed: Seed,
    pub pipeline: PipelineSpec,
    pub workers: u32,
    /// `mapping[clock] = worker`.
    pub mapping: Vec<u32>,
    pub stream_mode: StreamMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub defect: Option<ParallelDefect>,
    #[serde(skip)]
    pub execution: Execution,
}

impl ParallelConfig {
    pub fn validate(&self) -> Result<(), ProcessError> {
        check_common(self.n_clocks, self.horizon)?;
        check_pipeline(&self.pipeline)?;
        if self.workers == 0 {
            return Err(ProcessError::Config("workers must be >= 1".into()));
        }
        if self.mapping.len() != self.n_clocks as usize {
            return Err(ProcessError::Config(format!(
                "mapping covers {} clocks, expected {}",
                self.mapping.len(),
                self.n_clocks
            )));
        }
        if let Some(w) = self.mapping.iter().find(|&&w| w >= self.workers) {
            return Err(ProcessError::Config(format!(
                "mapping names worker {w} but only {} workers exist",
                self.workers
            )));
        }
        Ok(())
    }

    /// Clocks owned by each worker, ascending.
    pub fn worker_clocks(&self) -> Vec<Vec<u32>> {
        let mut sets = vec![Vec::new(); self.workers as usize];
        for (clock, &w) in self.mapping.iter().enumerate() {
            sets[w as usize].push(clock as u32);
        }
        sets
    }

    fn clock_stream(&self, worker: u32, clock: u32) -> StreamId {
        match self.defect {
            Some(ParallelDefect::WorkerSeededClocks) => {
                StreamId((worker as u64) << 32 | (clock as u64 + 1))
            }
            None => StreamId(clock as u64 + 1),
        }
    }
}

struct WorkerOutput {
    parts: Vec<(u32, Vec<Event>)>,
    draws: u64,
}

pub fn simulate_parallel(cfg: &ParallelConfig) -> Result<Trajectory, ProcessError> {
    cfg.validate()?;
    let sets: Vec<(u32, Vec<u32>)> = cfg
        .worker_clocks()
        .into_iter()
        .enumerate()
        .map(|(w, s)| (w as u32, s))
        .collect();
    let outputs = cfg.execution.map(sets, |(worker, clocks)| match cfg.stream_mode {
        StreamMode::PerClock => run_per_clock(cfg, worker, &clocks),
        StreamMode::PerWorker => run_per_worker(cfg, worker, &clocks),
    });
    let mut parts = vec![Vec::new(); cfg.n_clocks as usize];
    let mut total_draws = 0;
    for out in outputs {
        let out = out?;
        total_draws += out.draws;
        for (clock, events) in out.parts {
            parts[clock as usize] = events;
        }
    }
    let mut traj = merge(parts)?;
    traj.total_draws = total_draws;
    Ok(traj)
}

fn run_per_clock(cfg: &ParallelConfig, worker: u32, clocks: &[u32]) -> Result<WorkerOutput, ProcessError> {
    let mut parts = Vec::with_capacity(clocks.len());
    let mut draws = 0;
    for &clock in clocks {
        let mut source = SampleSource::new(&cfg.pipeline, substream(cfg.seed, cfg.clock_stream(worker, clock)));
        let events = tick_clock(&mut source, clock, cfg.horizon)?;
        draws += source.raw_draws();
        parts.push((clock, events));
    }
    Ok(WorkerOutput { parts, draws })
}

/// Unit-rate clock ticking until its next tick would pass `horizon`.
pub fn tick_clock(source: &mut impl DrawSource, clock: u32, horizon: f64) -> Result<Vec<Event>, ProcessError> {
    let mut t = 0.0;
    let mut events = Vec::new();
    loop {
        let next = t + increment(source.next_sample()?, 1.0);
        if next > horizon {
            return Ok(events);
        }
        t = next;
        events.push(Event {
            time: t,
            mark: clock,
            draw_index: source.raw_draws(),
        });
    }
}

fn run_per_worker(cfg: &ParallelConfig, worker: u32, clocks: &[u32]) -> Result<WorkerOutput, ProcessError> {
    let stream = StreamId(WORKER_STREAM_BASE + worker as u64);
    let mut source = SampleSource::new(&cfg.pipeline, substream(cfg.seed, stream));
    let mut times = vec![0.0f64; clocks.len()];
    let mut live = vec![true; clocks.len()];
    let mut remaining = clocks.len();
    let mut parts: Vec<(u32, Vec<Event>)> = clocks.iter().map(|&c| (c, Vec::new())).collect();
    while remaining > 0 {
        for (slot, &clock) in clocks.iter().enumerate() {
            if !live[slot] {
                continue;
            }
            let next = times[slot] + increment(source.next_sample()?, 1.0);
            if next > cfg.horizon {
                live[slot] = false;
                remaining -= 1;
                continue;
            }
            times[slot] = next;
            parts[slot].1.push(Event {
                time: next,
                mark: clock,
                draw_index: source.raw_draws(),
            });
        }
    }
    Ok(WorkerOutput {
        parts,
        draws: source.raw_draws(),
    })
}

/// K-way merge of per-clock event lists into one time-sorted trajectory,
/// equal times ordered by ascending mark. `parts[i]` holds the events of
/// clock `i`; `total_draws` is left at zero for the caller to fill.
pub fn merge(parts: Vec<Vec<Event>>) -> Result<Trajectory, ProcessError> {
    for (p, part) in parts.iter().enumerate() {
        if let Some(i) = part.windows(2).position(|w| w[0].order(&w[1]) == Ordering::Greater) {
            return Err(ProcessError::UnsortedPart { part: p, index: i + 1 });
        }
    }
    let mut per_clock_ticks = vec![0u64; parts.len()];
    for part in &parts {
        for e in part {
            if let Some(slot) = per_clock_ticks.get_mut(e.mark as usize) {
                *slot += 1;
            } else {
                per_clock_ticks.resize(e.mark as usize + 1, 0);
                per_clock_ticks[e.mark as usize] += 1;
            }
        }
    }
    let mut events: Vec<Event> = parts.into_iter().flatten().collect();
    // stable sort over pre-sorted runs; equal (time, mark) keeps part order
    events.sort_by(Event::order);
    Ok(Trajectory {
        final_time: events.last().map_or(0.0, |e| e.time),
        total_draws: 0,
        events,
        per_clock_ticks,
    })
}

/// Built-in clock-to-worker assignments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MappingKind {
    ContiguousBlocks,
    RoundRobin,
    SeededShuffle,
}

pub const SHUFFLE_STREAM: StreamId = StreamId(3_000_000);

impl MappingKind {
    pub fn name(self) -> &'static str {
        match self {
            MappingKind::ContiguousBlocks => "contiguous-blocks",
            MappingKind::RoundRobin => "round-robin",
            MappingKind::SeededShuffle => "seeded-shuffle",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        [Self::ContiguousBlocks, Self::RoundRobin, Self::SeededShuffle]
            .into_iter()
            .find(|m| m.name() == name)
    }

    /// `mapping[clock] = worker` for `n_clocks` clocks over `workers` workers.
    pub fn generate(self, n_clocks: u32, workers: u32, seed: Seed) -> Vec<u32> {
        let n = n_clocks as u64;
        let p = workers.max(1) as u64;
        match self {
            MappingKind::ContiguousBlocks => (0..n).map(|c| (c * p / n) as u32).collect(),
            MappingKind::RoundRobin => (0..n).map(|c| (c % p) as u32).collect(),
            MappingKind::SeededShuffle => {
                let mut order: Vec<u32> = (0..n_clocks).collect();
                let mut g = substream(seed, SHUFFLE_STREAM);
                for i in (1..order.len()).rev() {
                    let j = g.next_index(i + 1);
                    order.swap(i, j);
                }
                let mut mapping = vec![0; n_clocks as usize];
                for (pos, &clock) in order.iter().enumerate() {
                    mapping[clock as usize] = (pos as u64 % p) as u32;
                }
                mapping
            }
        }
    }
}
