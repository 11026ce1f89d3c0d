use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use tvspec::exec::Execution;
use tvspec::experiment::{run_experiment, Dgp, Estimator, ExperimentConfig};

fn config(exec: Execution) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::desk(Dgp::Piecewise);
    cfg.n_replicates = 4;
    cfg.t_len = 512;
    cfg.estimators = vec![Estimator::Garch, Estimator::AdaptSpec];
    cfg.sampler.n_iter = 200;
    cfg.sampler.n_burn = 50;
    cfg.exec = exec;
    cfg
}

fn replicates(c: &mut Criterion) {
    let mut group = c.benchmark_group("replicates");
    group.sample_size(10);
    for (name, exec) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
        let cfg = config(exec);
        group.bench_with_input(BenchmarkId::from_parameter(name), &cfg, |b, cfg| {
            b.iter(|| black_box(run_experiment(cfg).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, replicates);
criterion_main!(benches);
