use criterion::{criterion_group, criterion_main, Criterion};

use surfloss::fieldsolver::{build_mesh, fixtures, solve_at_level};
use surfloss::geometry::{reference_design, ReferenceDesign};
use surfloss::participation::participation_report;

fn hero_section() -> surfloss::CrossSection {
    reference_design(ReferenceDesign::Hero, 1.0)
        .unwrap()
        .sections[0]
        .section
        .clone()
}

fn solver(c: &mut Criterion) {
    let section = hero_section();
    c.bench_function("mesh hero level 1", |b| {
        b.iter(|| build_mesh(&section, 1).unwrap())
    });
    let mut group = c.benchmark_group("solve");
    group.sample_size(10);
    for level in [0, 1] {
        group.bench_function(format!("hero level {level}"), |b| {
            b.iter(|| solve_at_level(&section, level).unwrap())
        });
    }
    group.bench_function("coax level 2", |b| {
        b.iter(|| fixtures::coax(1e-3, std::f64::consts::E * 1e-3, 4, 2).unwrap())
    });
    group.finish();

    let sol = solve_at_level(&section, 1).unwrap();
    c.bench_function("participation hero level 1", |b| {
        b.iter(|| participation_report(&sol, 3e-9, 6.2).unwrap())
    });
}

criterion_group!(benches, solver);
criterion_main!(benches);
