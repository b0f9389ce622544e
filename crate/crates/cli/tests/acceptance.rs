//! Acceptance suite. Runs without the libtest harness and prints one
//! PASS/FAIL line per criterion; exits non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use surfloss::fieldsolver::{fixtures, richardson, solve_at_level};
use surfloss::geometry::{
    reference_design, Conductor, CrossSection, Interface, LayerSpec, ReferenceDesign, Terminal,
};
use surfloss::lossfit::{
    bootstrap, fit_weighted, identifiability, nnls, plot_curve, BootstrapOptions, LossModel,
    LossParameters, Observation, Weighting,
};
use surfloss::measurements::{synthesize, SynthesisConfig};
use surfloss::participation::oracles::{
    coax_capacitance, coplanar_strips_capacitance, parallel_plate_participation,
};
use surfloss::participation::{participation, sensitivity_study, PerInterface, SensitivityVector};
use surfloss::Drive;

type Check<'a> = Box<dyn FnOnce() -> Outcome + 'a>;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a / b - 1.0).abs()
}

fn coax() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for ratio in [std::f64::consts::E, 2.0, 5.0] {
        let start = Instant::now();
        let a = 1e-3;
        let c: Vec<f64> = (1..4)
            .map(|l| 2.0 * fixtures::coax(a, ratio * a, 4, l).unwrap().energy_pul)
            .collect();
        let e = richardson([c[0], c[1], c[2]], 2.0);
        let exact = coax_capacitance(a, ratio * a).unwrap();
        let err = rel(e.value, exact);
        let secs = start.elapsed().as_secs_f64();
        pass &= err < 5e-3 && secs < 30.0;
        parts.push(format!("b/a={ratio:.3}: err {err:.1e} in {secs:.1}s"));
    }
    Outcome::new(pass, parts.join("; "))
}

fn coplanar_strips() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (w, s) in [(100e-6, 50e-6), (350e-6, 350e-6), (50e-6, 200e-6)] {
        let start = Instant::now();
        let span = 2.0 * w + s;
        let section = CrossSection {
            name: "strips".into(),
            conductors: vec![
                Conductor::new(-s / 2.0 - w, -s / 2.0, Terminal::Minus),
                Conductor::new(s / 2.0, s / 2.0 + w, Terminal::Plus),
            ],
            substrate_eps: 10.0,
            box_halfwidth: 10.0 * span,
            box_height: 10.0 * span,
        };
        let c: Vec<f64> = (0..3)
            .map(|l| 2.0 * solve_at_level(&section, l).unwrap().energy_pul)
            .collect();
        let e = richardson([c[0], c[1], c[2]], 2.0);
        let exact = coplanar_strips_capacitance(w, s, 10.0).unwrap();
        let err = rel(e.value, exact);
        let secs = start.elapsed().as_secs_f64();
        pass &= err < 0.02 && secs < 60.0;
        parts.push(format!(
            "w={:.0}um s={:.0}um: err {err:.2e} in {secs:.1}s",
            w * 1e6,
            s * 1e6
        ));
    }
    Outcome::new(pass, parts.join("; "))
}

fn parallel_plate() -> Outcome {
    let d = 1e-6;
    let sol = fixtures::parallel_plate(d, d, 8, &Drive::default()).unwrap();
    let mut worst: f64 = 0.0;
    for t_over_d in [1e-3, 3e-3] {
        for eps in [1.0, 6.2, 10.0] {
            let t = t_over_d * d;
            let layer = LayerSpec::new(Interface::MetalVacuum, t, eps).unwrap();
            let got = participation(&sol, &layer).unwrap().ratio;
            worst = worst.max(rel(got, parallel_plate_participation(d, t, eps).unwrap()));
        }
    }
    Outcome::new(
        worst < 0.01,
        format!("worst relative error {worst:.2e} over 6 cases"),
    )
}

fn thin_layer_linearity() -> Outcome {
    let mut worst: f64 = 0.0;
    for design in ReferenceDesign::ALL {
        let spec = reference_design(design, 1.0).unwrap();
        let r: Vec<PerInterface<f64>> = [1e-9, 2e-9, 5e-9]
            .iter()
            .map(|&t| sensitivity_study(&spec, t, 6.2, 0, 1).unwrap().vector.r)
            .collect();
        for i in Interface::ALL {
            for pair in r.windows(2) {
                worst = worst.max(rel(pair[1].get(i), pair[0].get(i)));
            }
        }
    }
    Outcome::new(
        worst < 0.01,
        format!("largest spread {worst:.1e} over 4 designs x 3 interfaces"),
    )
}

fn reference_sensitivities() -> (Vec<SensitivityVector>, bool) {
    let mut reliable = true;
    let v = ReferenceDesign::ALL
        .iter()
        .map(|&d| {
            let study =
                sensitivity_study(&reference_design(d, 1.0).unwrap(), 3e-9, 6.2, 0, 3).unwrap();
            reliable &= study.reliable();
            study.vector
        })
        .collect();
    (v, reliable)
}

fn design_ordering(designs: &[SensitivityVector], reliable: bool) -> Outcome {
    let r: BTreeMap<&str, &SensitivityVector> =
        designs.iter().map(|d| (d.design.as_str(), d)).collect();
    let sv = |n: &str| r[n].r.sv;
    let sm = |n: &str| r[n].r.sm;
    let pass =
        sv("Guard") > sv("Hero") && sv("Hero") > sv("ExtendedHero") && sm("Skeleton") > sm("Hero");
    Outcome::new(
        pass,
        format!(
            "r_SV Guard/Hero/ExtendedHero = {:.0}/{:.0}/{:.0} per m, r_SM Skeleton/Hero = {:.0}/{:.0} per m, extrapolation reliable: {reliable}",
            sv("Guard"),
            sv("Hero"),
            sv("ExtendedHero"),
            sm("Skeleton"),
            sm("Hero")
        ),
    )
}

fn observations(
    designs: &[SensitivityVector],
    truth: &LossParameters,
    sigma: f64,
    seed: u64,
) -> Vec<Observation> {
    let ensemble = synthesize(designs, truth, &SynthesisConfig::new(35, sigma, 5e9, seed)).unwrap();
    ensemble
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

fn fit_recovery(designs: &[SensitivityVector]) -> Outcome {
    let start = Instant::now();
    let (x_true, b_true) = (1.6e-11, 1.0 / 3e6);
    let truth = LossParameters {
        x: PerInterface {
            sm: 0.0,
            sv: x_true,
            mv: 0.0,
        },
        b: b_true,
    };
    let model = LossModel::parse("SV", true).unwrap();
    let trials = 100;
    let (mut recovered, mut cover_x, mut cover_b, mut cover_both) = (0, 0, 0, 0);
    for seed in 0..trials {
        let obs = observations(designs, &truth, 0.2, seed);
        let (fit, weighted) = fit_weighted(&obs, &model, Weighting::Model).unwrap();
        if rel(fit.x[0], x_true) < 0.25 && rel(fit.b, b_true) < 0.25 {
            recovered += 1;
        }
        let opts = BootstrapOptions {
            resamples: 1000,
            seed,
            level: 0.9,
        };
        let ci = bootstrap(&weighted, &model, &opts).unwrap();
        let (cx, cb) = (ci[0].contains(x_true), ci[1].contains(b_true));
        cover_x += cx as u32;
        cover_b += cb as u32;
        cover_both += (cx && cb) as u32;
    }
    let pct = |n: u32| 100.0 * n as f64 / trials as f64;
    let secs = start.elapsed().as_secs_f64();
    let pass =
        pct(recovered) >= 80.0 && pct(cover_x) >= 85.0 && pct(cover_b) >= 85.0 && secs < 300.0;
    Outcome::new(
        pass,
        format!(
            "recovered {:.0}%, CI coverage x {:.0}% b {:.0}% (jointly {:.0}%), {secs:.1}s",
            pct(recovered),
            pct(cover_x),
            pct(cover_b),
            pct(cover_both)
        ),
    )
}

fn saturation() -> Outcome {
    let (x, b) = (1.6e-11, 1.0 / 3e6);
    let curve = plot_curve(x, b, 121).unwrap();
    let (first, last) = (curve[0], curve[curve.len() - 1]);
    let low = rel(first.q_model, first.q_surface_only);
    let high = rel(last.q_model, last.q_background);
    let pass = first.inv_r_m == 1e-8 && last.inv_r_m == 1e-2 && low < 0.01 && high < 0.01;
    Outcome::new(
        pass,
        format!("at 1/r=1e-8 m model/surface-line off by {low:.1e}; at 1/r=1e-2 m model/Q_bulk off by {high:.1e}"),
    )
}

/// Correlated SM/SV columns: flag raised and single-channel fits tie.
fn identifiability_case(designs: &[SensitivityVector], truth: &LossParameters) -> (bool, f64, f64) {
    let both = LossModel::parse("SM,SV", true).unwrap();
    let report = identifiability(designs, &both).unwrap();
    let corr = report
        .unresolvable
        .iter()
        .find(|p| (p.first == "SM" && p.second == "SV") || (p.first == "SV" && p.second == "SM"))
        .map_or(0.0, |p| p.correlation);
    let obs = observations(designs, truth, 0.2, 7);
    let norm = |channel: &str| {
        fit_weighted(
            &obs,
            &LossModel::parse(channel, true).unwrap(),
            Weighting::Measured,
        )
        .unwrap()
        .0
        .residual_norm()
    };
    let (sm, sv) = (norm("SM"), norm("SV"));
    (report.is_flagged("SM", "SV"), corr, rel(sm, sv))
}

fn identifiability_reproduction(reference: &[SensitivityVector]) -> Outcome {
    let truth = LossParameters {
        x: PerInterface {
            sm: 0.0,
            sv: 1.6e-11,
            mv: 0.0,
        },
        b: 1.0 / 3e6,
    };
    // A constructed set where SM tracks SV closely but not exactly.
    let constructed = [
        SensitivityVector::new("A", 2.0e3, 1.0e3, 20.0),
        SensitivityVector::new("B", 5.5e3, 2.5e3, 55.0),
        SensitivityVector::new("C", 1.1e4, 5.0e3, 110.0),
        SensitivityVector::new("D", 2.4e4, 1.0e4, 240.0),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, set) in [
        ("reference designs", reference),
        ("constructed set", &constructed[..]),
    ] {
        let (flagged, corr, diff) = identifiability_case(set, &truth);
        pass &= flagged && corr > 0.98 && diff < 0.05;
        parts.push(format!(
            "{name}: flagged {flagged} (corr {corr:.4}), residual norms differ {:.2}%",
            100.0 * diff
        ));
    }
    Outcome::new(pass, parts.join("; "))
}

/// Best nonnegative solution by checking every support set.
fn exhaustive_nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> f64 {
    let n = a.ncols();
    let mut best = b.norm();
    for mask in 1u32..(1 << n) {
        let cols: Vec<usize> = (0..n).filter(|j| mask & (1 << j) != 0).collect();
        let sub = a.select_columns(&cols);
        let Some(x) = sub.clone().svd(true, true).solve(b, 1e-14).ok() else {
            continue;
        };
        if x.iter().all(|v| *v >= 0.0) {
            best = best.min((b - sub * x).norm());
        }
    }
    best
}

fn nnls_kkt() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut worst_kkt, mut worst_res): (f64, f64) = (0.0, 0.0);
    for _ in 0..1000 {
        let n = rng.random_range(1..=3);
        let m = rng.random_range(n..=8);
        let a = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
        let b = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
        let sol = nnls(&a, &b).unwrap();
        worst_kkt = worst_kkt.max(sol.kkt_violation());
        worst_res = worst_res.max((sol.residual_norm - exhaustive_nnls(&a, &b)).abs());
    }
    Outcome::new(
        worst_kkt < 1e-10 && worst_res < 1e-10,
        format!("1000 instances: worst KKT violation {worst_kkt:.1e}, worst residual gap to oracle {worst_res:.1e}"),
    )
}

fn constants() -> Outcome {
    let q = 1.0 / 3e-7;
    let err = rel(q, 3e6);
    Outcome::new(
        (q - 3.33e6).abs() < 0.01e6 && err < 0.15,
        format!("1/(3e-7) = {q:.4e}, {:.1}% from 3e6", 100.0 * err),
    )
}

/// Runs one CLI invocation and returns its stdout, or the failure text.
fn run_cli(dir: &Path, args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_surfloss"))
        .arg("--out")
        .arg(dir)
        .arg("--quiet")
        .args(args)
        .current_dir(dir)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(out.stdout)
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect()
}

fn pipeline(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut stdout = BTreeMap::new();
    let steps: [(&str, &[&str]); 6] = [
        ("geometry", &["geometry"]),
        (
            "participation",
            &["participation", "Hero", "ExtendedHero", "Guard", "Skeleton"],
        ),
        (
            "synth",
            &[
                "--seed",
                "11",
                "synth",
                "--sensitivities",
                "sensitivities.csv",
                "--freq-ghz",
                "5",
            ],
        ),
        (
            "fit",
            &[
                "--seed",
                "11",
                "fit",
                "--measurements",
                "measurements.csv",
                "--sensitivities",
                "sensitivities.csv",
            ],
        ),
        (
            "select",
            &["select", "--sensitivities", "sensitivities.csv", "-k", "3"],
        ),
        ("report", &["report", "fit_report.json"]),
    ];
    for (name, args) in steps {
        stdout.insert(format!("stdout of {name}"), run_cli(dir, args)?);
    }
    let mut all = snapshot(dir);
    all.extend(stdout);
    Ok(all)
}

fn determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    match (pipeline(a.path()), pipeline(b.path())) {
        (Ok(x), Ok(y)) => {
            let differing: Vec<&String> = x.keys().filter(|k| x.get(*k) != y.get(*k)).collect();
            let pass = differing.is_empty() && x.len() == y.len();
            let detail = if pass {
                format!(
                    "6 subcommands, {} outputs byte-identical across two runs",
                    x.len()
                )
            } else {
                format!("outputs differ: {differing:?}")
            };
            Outcome::new(pass, detail)
        }
        (Err(e), _) | (_, Err(e)) => Outcome::new(false, format!("CLI failed: {e}")),
    }
}

fn main() {
    let (reference, reliable) = reference_sensitivities();
    let results: Vec<(&str, Check<'_>)> = vec![
        ("coax capacitance", Box::new(coax)),
        ("coplanar strips energy", Box::new(coplanar_strips)),
        ("parallel plate participation", Box::new(parallel_plate)),
        ("thin layer linearity", Box::new(thin_layer_linearity)),
        (
            "design ordering",
            Box::new(|| design_ordering(&reference, reliable)),
        ),
        ("fit recovery", Box::new(|| fit_recovery(&reference))),
        ("saturation", Box::new(saturation)),
        (
            "identifiability",
            Box::new(|| identifiability_reproduction(&reference)),
        ),
        ("NNLS KKT", Box::new(nnls_kkt)),
        ("constants", Box::new(constants)),
        ("determinism", Box::new(determinism)),
    ];
    let mut failed = 0;
    for (k, (name, check)) in results.into_iter().enumerate() {
        let outcome = check();
        if !outcome.pass {
            failed += 1;
        }
        println!(
            "{} criterion {:>2} {name}: {}",
            if outcome.pass { "PASS" } else { "FAIL" },
            k + 1,
            outcome.detail
        );
    }
    println!("acceptance: {} passed, {failed} failed", 11 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
