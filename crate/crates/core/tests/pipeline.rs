//! Library-level pipeline: geometry -> sensitivities -> synthetic data on
//! disk -> fit.

use surfloss::geometry::{reference_design, DesignSpec, ReferenceDesign};
use surfloss::lossfit::{fit_weighted, LossModel, LossParameters, Weighting};
use surfloss::measurements::{load_csv, save_csv, synthesize, LoadOptions, SynthesisConfig};
use surfloss::participation::{load_sensitivities, sensitivity_study, write_sensitivities};
use surfloss::{Observation, PerInterface, SensitivityVector};

#[test]
fn files_round_trip_and_noiseless_fit_recovers_truth() {
    let dir = tempfile::tempdir().unwrap();

    let mut vectors = Vec::new();
    for d in ReferenceDesign::ALL {
        let spec = reference_design(d, 1.0).unwrap();
        let path = dir.path().join(format!("{}.json", spec.name));
        std::fs::write(&path, spec.to_json().unwrap()).unwrap();
        let loaded = DesignSpec::load(&path).unwrap();
        assert_eq!(loaded, spec);
        vectors.push(sensitivity_study(&loaded, 3e-9, 6.2, 0, 1).unwrap().vector);
    }
    let sens_path = dir.path().join("sensitivities.csv");
    write_sensitivities(std::fs::File::create(&sens_path).unwrap(), &vectors).unwrap();
    let vectors: Vec<SensitivityVector> = load_sensitivities(&sens_path).unwrap();
    assert_eq!(vectors.len(), 4);

    let truth = LossParameters {
        x: PerInterface {
            sm: 0.0,
            sv: 1.6e-11,
            mv: 0.0,
        },
        b: 1.0 / 3e6,
    };
    let ensemble = synthesize(&vectors, &truth, &SynthesisConfig::new(20, 0.0, 6e9, 9)).unwrap();
    let meas_path = dir.path().join("measurements.csv");
    save_csv(&meas_path, &ensemble).unwrap();
    let loaded = load_csv(&meas_path, &LoadOptions::default()).unwrap();
    assert_eq!(loaded.len(), 20);

    let obs: Vec<Observation> = loaded
        .measurements
        .iter()
        .map(|m| {
            m.observation(
                vectors
                    .iter()
                    .find(|v| v.design == m.device.design)
                    .unwrap(),
            )
        })
        .collect();
    let model = LossModel::parse("SV", true).unwrap();
    let (fit, _) = fit_weighted(&obs, &model, Weighting::Model).unwrap();
    assert!((fit.x[0] / 1.6e-11 - 1.0).abs() < 1e-9, "{}", fit.x[0]);
    assert!((fit.b * 3e6 - 1.0).abs() < 1e-9, "{}", fit.b);
}

#[test]
fn scaled_design_has_inversely_scaled_sensitivity() {
    let base = reference_design(ReferenceDesign::Hero, 1.0).unwrap();
    let big = reference_design(ReferenceDesign::Hero, 2.0).unwrap();
    let r1 = sensitivity_study(&base, 3e-9, 6.2, 0, 1).unwrap().vector.r;
    let r2 = sensitivity_study(&big, 3e-9, 6.2, 0, 1).unwrap().vector.r;
    // Field energy density near the surface scales as 1/length.
    assert!((r1.sv / r2.sv - 2.0).abs() < 0.02, "{} {}", r1.sv, r2.sv);
}
