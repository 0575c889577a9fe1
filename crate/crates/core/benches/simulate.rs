use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use montecheck::detector::{run_experiment, ExperimentPlan};
use montecheck::process::{simulate_parallel, MappingKind};
use montecheck::seeds::preregistered;
use montecheck::{Execution, FaultModel, ParallelConfig, PipelineSpec, Seed, StreamMode};

const EXECUTIONS: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn bench_simulate_parallel(c: &mut Criterion) {
    let mut group = c.benchmark_group("simulate_parallel");
    let seed = Seed(7);
    for (name, execution) in EXECUTIONS {
        let cfg = ParallelConfig {
            n_clocks: 64,
            horizon: 500.0,
            seed,
            pipeline: PipelineSpec::ideal(),
            workers: 8,
            mapping: MappingKind::RoundRobin.generate(64, 8, seed),
            stream_mode: StreamMode::PerClock,
            defect: None,
            execution,
        };
        group.bench_with_input(BenchmarkId::new(name, "N64_P8"), &cfg, |b, cfg| {
            b.iter(|| simulate_parallel(black_box(cfg)).unwrap())
        });
    }
    group.finish();
}

fn bench_run_experiment(c: &mut Criterion) {
    let mut group = c.benchmark_group("run_experiment");
    group.sample_size(10);
    for (name, execution) in EXECUTIONS {
        let mut plan = ExperimentPlan::basic(Seed(0), 16, 200.0, FaultModel::PowerBias { gamma: 2.0 });
        plan.seeds = preregistered(8);
        plan.workers = vec![1, 4];
        plan.mappings = vec![MappingKind::ContiguousBlocks, MappingKind::RoundRobin];
        plan.execution = execution;
        group.bench_with_input(BenchmarkId::new(name, "8_seeds"), &plan, |b, plan| {
            b.iter(|| run_experiment(black_box(plan)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_simulate_parallel, bench_run_experiment);
criterion_main!(benches);
