use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use pbrl::agents::Algorithm;
use pbrl::envpack::EnvName;
use pbrl::orchestrator::{RunConfig, Trainer};
use pbrl::parallel::Parallelism;

fn config(algorithm: Algorithm, env: EnvName, population: usize) -> RunConfig {
    let mut cfg = RunConfig::for_task(algorithm, env);
    cfg.run.population_size = population;
    cfg.run.seed = Some(7);
    cfg.run.env_steps_per_agent = u64::MAX / 2;
    cfg.ppo.hidden_units = vec![32, 32];
    cfg.ppo.epochs = 2;
    cfg.offpolicy.hidden_units = vec![32, 32];
    cfg.offpolicy.warmup = 64;
    cfg.offpolicy.batch_size = 64;
    cfg.offpolicy.updates_per_step = 1;
    cfg
}

fn bench_train_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("train_step");
    group.sample_size(10);
    for (name, algorithm, env) in [
        ("ppo_pendulum", Algorithm::Ppo, EnvName::Pendulum),
        ("ddpg_pointmass", Algorithm::Ddpg, EnvName::Pointmass),
    ] {
        for mode in [Parallelism::Sequential, Parallelism::Parallel] {
            let mut t = Trainer::in_memory(config(algorithm, env, 8)).expect("valid config");
            t.set_parallelism(mode);
            // Fill replay past warmup so off-policy updates are part of the measurement.
            for _ in 0..20 {
                t.train_step().expect("train");
            }
            let label = if mode.is_parallel() { "parallel" } else { "sequential" };
            group.bench_with_input(BenchmarkId::new(name, label), &mode, |b, _| {
                b.iter(|| t.train_step().expect("train"))
            });
        }
    }
    group.finish();
}

criterion_group!(benches, bench_train_step);
criterion_main!(benches);
