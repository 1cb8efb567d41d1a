//! One training epoch over a small phantom cohort, with the batch's
//! per-sample gradients computed sequentially or on the rayon pool.

use criterion::{criterion_group, criterion_main, Criterion};

use autoatlas::nets::{ModelConfig, ModelParams};
use autoatlas::par::Mode;
use autoatlas::trainer::{Sample, TrainConfig, Trainer};
use autoatlas::volio::{phantom_generate, PhantomConfig};

fn samples() -> Vec<Sample> {
    let ds = phantom_generate(&PhantomConfig::new(11, 16, 4, 4)).expect("phantom");
    ds.subjects
        .iter()
        .map(|s| Sample::new(s.id.clone(), &s.volume, &s.mask).expect("sample"))
        .collect()
}

fn epoch(c: &mut Criterion) {
    let samples = samples();
    let params = ModelParams::<f32>::init(ModelConfig::new(4, 4, 2, 16, 4, 2), 0).expect("params");
    let mut group = c.benchmark_group("epoch_16cubed_batch4");
    group.sample_size(10);
    for (name, mode) in [("sequential", Mode::Sequential), ("parallel", Mode::Parallel)] {
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 4,
            mode,
            ..TrainConfig::default()
        };
        group.bench_function(name, |b| {
            b.iter(|| {
                let mut tr = Trainer::new(params.clone(), &samples, cfg.clone()).expect("trainer");
                tr.run_epoch().expect("epoch")
            })
        });
    }
    group.finish();
}

criterion_group!(benches, epoch);
criterion_main!(benches);
