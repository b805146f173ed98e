use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use driftlab::eval::evaluate;
use driftlab::grpo::{rollout_group, GrpoConfig};
use driftlab::harness::pipeline::Splits;
use driftlab::policy::{PerceptionConfig, PolicySpec};
use driftlab::scene::{forge_dataset, ForgeConfig};
use driftlab::Exec;

const MODES: [(&str, Exec); 2] = [("parallel", Exec::Parallel), ("sequential", Exec::Sequential)];

fn forge_config() -> ForgeConfig {
    ForgeConfig { n: 400, eval_n: 200, seed: Some(3), ..Default::default() }
}

fn bench_forge(c: &mut Criterion) {
    let cfg = forge_config();
    let mut group = c.benchmark_group("forge_600");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| forge_dataset(&cfg, exec).unwrap()));
    }
    group.finish();
}

fn bench_eval_and_rollouts(c: &mut Criterion) {
    let spec = PolicySpec::standard(PerceptionConfig::default());
    let data = forge_dataset(&forge_config(), Exec::Parallel).unwrap();
    let splits = Splits::new(&spec, &data, Exec::Parallel).unwrap();
    let params = spec.random_params(0.3, 1).unwrap();

    let mut group = c.benchmark_group("evaluate_200x3");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| evaluate(&spec, &params, &splits.eval, 3, 9, exec).unwrap())
        });
    }
    group.finish();

    let cfg = GrpoConfig { group_size: 16, ..Default::default() };
    let mut group = c.benchmark_group("rollout_groups_32x16");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                exec.map(&splits.rl[..32], |i, ep| rollout_group(&spec, &params, ep, i, &cfg, i as u64, exec).unwrap())
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench_forge, bench_eval_and_rollouts);
criterion_main!(benches);
