use criterion::{criterion_group, criterion_main, Criterion};

use surfloss::lossfit::{
    bootstrap, fit_weighted, select_designs, BootstrapOptions, LossModel, LossParameters, Weighting,
};
use surfloss::measurements::{synthesize, SynthesisConfig};
use surfloss::{Observation, PerInterface, SensitivityVector};

fn designs() -> Vec<SensitivityVector> {
    vec![
        SensitivityVector::new("Hero", 7460.8, 2870.1, 74.6),
        SensitivityVector::new("ExtendedHero", 3730.4, 1435.0, 37.3),
        SensitivityVector::new("Guard", 50587.9, 19418.5, 505.9),
        SensitivityVector::new("Skeleton", 9713.2, 3701.3, 97.1),
    ]
}

fn observations(designs: &[SensitivityVector]) -> Vec<Observation> {
    let truth = LossParameters {
        x: PerInterface {
            sm: 0.0,
            sv: 1.6e-11,
            mv: 0.0,
        },
        b: 1.0 / 3e6,
    };
    synthesize(designs, &truth, &SynthesisConfig::new(35, 0.2, 5e9, 1))
        .unwrap()
        .measurements
        .iter()
        .map(|m| {
            m.observation(
                designs
                    .iter()
                    .find(|d| d.design == m.device.design)
                    .unwrap(),
            )
        })
        .collect()
}

fn fitting(c: &mut Criterion) {
    let designs = designs();
    let obs = observations(&designs);
    let model = LossModel::parse("SV", true).unwrap();
    c.bench_function("fit 35 devices", |b| {
        b.iter(|| fit_weighted(&obs, &model, Weighting::Model).unwrap())
    });
    let opts = BootstrapOptions {
        resamples: 1000,
        seed: 3,
        level: 0.9,
    };
    let mut group = c.benchmark_group("bootstrap");
    group.sample_size(10);
    group.bench_function("1000 resamples", |b| {
        b.iter(|| bootstrap(&obs, &model, &opts).unwrap())
    });
    group.finish();

    let pool: Vec<SensitivityVector> = (0..30)
        .map(|i| {
            let t = i as f64;
            SensitivityVector::new(
                format!("d{i:02}"),
                1e3 * (1.0 + t),
                1e3 * (1.0 + (0.7 * t).sin().abs()),
                10.0 * (1.0 + t),
            )
        })
        .collect();
    c.bench_function("select 4 of 30", |b| {
        b.iter(|| select_designs(&pool, 4).unwrap())
    });
}

criterion_group!(benches, fitting);
criterion_main!(benches);
