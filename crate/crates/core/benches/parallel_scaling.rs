//! Parallel-vs-sequential throughput of the three data-parallel hot spots:
//! a full federated round, FGSM shard poisoning, and test-set evaluation.
//!
//! With the `parallel` feature (default), the "sequential" variants run the
//! same public API inside a single-thread rayon pool; the "parallel"
//! variants use the global pool. Without the feature only the sequential
//! path exists. Results are bit-identical either way; only wall time moves.

use std::time::Duration;

use criterion::{criterion_group, criterion_main, Criterion};

use fpsim_core::attack::{poison_shard, AttackKind, AttackSpec};
use fpsim_core::data::{generate_dataset, LabeledDataset};
use fpsim_core::fed::{run_round, DeviceState, ScheduleConfig};
use fpsim_core::model::{build, evaluate, ModelConfig, TrainConfig};
use fpsim_core::nn::ParamSet;
use fpsim_core::signal::{ChannelSpec, Fading, Scheme};

struct Workload {
    params: ParamSet,
    devices: Vec<DeviceState>,
    schedule: ScheduleConfig,
    train: TrainConfig,
    test: LabeledDataset,
    shard: LabeledDataset,
    attack: AttackSpec,
}

fn workload() -> Workload {
    let schemes = [Scheme::Bpsk, Scheme::Qpsk, Scheme::Pam4, Scheme::Qam16];
    let channel = ChannelSpec::new(10.0, Fading::None, 0).unwrap();
    let train = generate_dataset(&schemes, 128, &channel, 128, 8, 11).unwrap();
    let test = generate_dataset(&schemes, 64, &channel, 128, 8, 12).unwrap();
    let shard = generate_dataset(&schemes, 128, &channel, 128, 8, 13).unwrap();
    let params = build(&ModelConfig::new(128, 4, 3)).unwrap();

    let per_device = train.len() / 4;
    let devices: Vec<DeviceState> = (0..4)
        .map(|d| {
            let indices: Vec<usize> = (d * per_device..(d + 1) * per_device).collect();
            DeviceState::benign(d, train.subset(&indices).unwrap())
        })
        .collect();

    Workload {
        params,
        devices,
        schedule: ScheduleConfig {
            total_rounds: 1,
            attack_start: 0,
            devices: 4,
            adversaries: 0,
            seed: 5,
        },
        train: TrainConfig {
            lr: 0.01,
            batch_size: 128,
            local_epochs: 1,
            shuffle_seed: 0,
        },
        test,
        shard,
        attack: AttackSpec::new(AttackKind::Fgsm, 8.1, 1.0).unwrap(),
    }
}

fn bench_all(c: &mut Criterion) {
    let w = workload();

    let round = || run_round(&w.params, &w.devices, 1, &w.schedule, &w.train, &w.test).unwrap();
    let poison = || poison_shard(&w.shard, &w.attack, &w.params, 10.0, 9).unwrap();
    let eval = || evaluate(&w.params, &w.test).unwrap();

    let mut group = c.benchmark_group("fed_round");
    group
        .sample_size(10)
        .warm_up_time(Duration::from_secs(2))
        .measurement_time(Duration::from_secs(15));
    #[cfg(feature = "parallel")]
    group.bench_function("parallel", |b| b.iter(round));
    group.bench_function("sequential", |b| in_sequential_pool(b, round));
    group.finish();

    let mut group = c.benchmark_group("poison_shard_fgsm");
    group
        .sample_size(10)
        .warm_up_time(Duration::from_secs(2))
        .measurement_time(Duration::from_secs(10));
    #[cfg(feature = "parallel")]
    group.bench_function("parallel", |b| b.iter(poison));
    group.bench_function("sequential", |b| in_sequential_pool(b, poison));
    group.finish();

    let mut group = c.benchmark_group("evaluate");
    group
        .sample_size(10)
        .warm_up_time(Duration::from_secs(2))
        .measurement_time(Duration::from_secs(10));
    #[cfg(feature = "parallel")]
    group.bench_function("parallel", |b| b.iter(eval));
    group.bench_function("sequential", |b| in_sequential_pool(b, eval));
    group.finish();
}

/// Runs the closure with rayon confined to one thread, which exercises the
/// sequential code path through the same public API.
#[cfg(feature = "parallel")]
fn in_sequential_pool<T, F: Fn() -> T>(b: &mut criterion::Bencher<'_>, f: F) {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    pool.install(|| b.iter(&f));
}

#[cfg(not(feature = "parallel"))]
fn in_sequential_pool<T, F: Fn() -> T>(b: &mut criterion::Bencher<'_>, f: F) {
    b.iter(&f);
}

criterion_group!(benches, bench_all);
criterion_main!(benches);
