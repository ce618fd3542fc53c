use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stagebc::chunkstore::{Dataset, DatasetConfig};
use stagebc::demogen::{collect, AnnotateConfig, CollectConfig, DemoArchive};
use stagebc::doorworld::EnvParams;
use stagebc::evalbench::{evaluate, EvalConfig};
use stagebc::numkit::kernels;
use stagebc::par::Exec;
use stagebc::policy::{Checkpoint, PolicyConfig, PolicyWeights, Variant};
use stagebc::runtime::{RolloutConfig, StageSourceSpec};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn bench_matmul(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 192;
    let a: Vec<f64> = (0..n * n).map(|_| rng.random::<f64>()).collect();
    let b: Vec<f64> = (0..n * n).map(|_| rng.random::<f64>()).collect();
    let mut group = c.benchmark_group("matmul_192");
    for (name, exec) in MODES {
        group.bench_function(name, |bench| {
            bench.iter(|| kernels::matmul(exec, black_box(&a), black_box(&b), n, n, n))
        });
    }
    group.finish();
}

fn bench_collect(c: &mut Criterion) {
    let p = EnvParams::default();
    let cfg = CollectConfig {
        n: 16,
        seed: 3,
        ..CollectConfig::default()
    };
    let mut group = c.benchmark_group("collect_16_demos");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(name, |bench| bench.iter(|| collect(&cfg, &p, exec).unwrap()));
    }
    group.finish();
}

fn bench_evaluate(c: &mut Criterion) {
    let p = EnvParams::default();
    let cc = CollectConfig {
        n: 4,
        seed: 5,
        ..CollectConfig::default()
    };
    let demos = collect(&cc, &p, Exec::Sequential).unwrap();
    let archive = DemoArchive::build(p.clone(), cc, demos, &AnnotateConfig::default());
    let ds = Dataset::build(&archive, &DatasetConfig::default()).unwrap();
    let ck = Checkpoint::new(PolicyWeights::init(&PolicyConfig::for_variant(Variant::StageConditioned)).unwrap(), &ds).unwrap();
    let source = StageSourceSpec::oracle();
    let mut group = c.benchmark_group("evaluate_8_episodes");
    group.sample_size(10);
    for (name, exec) in MODES {
        let cfg = EvalConfig {
            n_eval: 8,
            rollout: RolloutConfig {
                budget: 60,
                ..RolloutConfig::default()
            },
            exec,
            ..EvalConfig::default()
        };
        group.bench_with_input(BenchmarkId::from_parameter(name), &cfg, |bench, cfg| {
            bench.iter(|| evaluate(&p, &ck, &source, cfg).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_matmul, bench_collect, bench_evaluate);
criterion_main!(benches);
