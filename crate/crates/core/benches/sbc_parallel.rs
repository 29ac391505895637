use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use qprop_core::experiment::{sbc_model, ExperimentConfig, PresetId, Scene};
use qprop_core::sbc::{run_sbc, SbcSettings};

fn sbc_replicates(c: &mut Criterion) {
    let config = ExperimentConfig {
        k: 16,
        l: 50,
        ..ExperimentConfig::for_preset(PresetId::NonspatialGaussian)
    };
    let scene = Scene::build(&config).expect("scene");
    let model = sbc_model(&config, &scene).expect("model");
    let settings = SbcSettings::new(config.k, config.l, config.seed);
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());

    let mut group = c.benchmark_group("sbc_replicates");
    group.sample_size(10);
    for (label, width) in [("sequential", 1), ("parallel", cores.max(2))] {
        group.bench_with_input(BenchmarkId::new(label, width), &width, |b, &w| {
            b.iter(|| run_sbc(&settings, &model, w).expect("sbc"))
        });
    }
    group.finish();
}

criterion_group!(benches, sbc_replicates);
criterion_main!(benches);
