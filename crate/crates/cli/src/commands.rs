use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::Serialize;

use surfloss::geometry::{reference_design, DesignSpec, Interface, ReferenceDesign};
use surfloss::lossfit::{
    balance_groups, bootstrap, fit_weighted, plot_curve, select_designs, write_plot_csv,
    BootstrapOptions, FitReport, LossModel, LossParameters, Observation, Weighting,
    MIN_BOOTSTRAP_DEVICES,
};
use surfloss::measurements::{
    load_csv, parse_frequency_ghz, synthesize, write_csv, CsvLayout, LoadOptions, SynthesisConfig,
};
use surfloss::participation::{
    load_sensitivities, sensitivity_study, write_sensitivities, PerInterface, SensitivityStudy,
    SensitivityVector,
};

use crate::config::{Command, Settings};
use crate::CliError;

const PLOT_POINTS: usize = 121;

pub fn run(command: &Command, settings: &Settings) -> Result<(), CliError> {
    match command {
        Command::Geometry { designs, scale } => geometry(designs, *scale, settings),
        Command::Participation {
            geometry,
            base_level,
        } => participation(geometry, *base_level, settings),
        Command::Synth {
            sensitivities,
            freq_ghz,
            devices,
            wafers,
            sigma,
            x_sm,
            x_sv,
            x_mv,
            q_bulk,
            substrate,
            process,
        } => {
            let truth = LossParameters {
                x: PerInterface {
                    sm: *x_sm,
                    sv: *x_sv,
                    mv: *x_mv,
                },
                b: if *q_bulk > 0.0 { 1.0 / q_bulk } else { 0.0 },
            };
            let mut config = SynthesisConfig::new(
                *devices,
                *sigma,
                parse_frequency_ghz(freq_ghz)?,
                settings.seed,
            );
            config.wafers = *wafers;
            config.substrate = substrate.parse()?;
            config.process = process.clone();
            synth(sensitivities, &truth, &config, settings)
        }
        Command::Fit {
            measurements,
            sensitivities,
            no_bulk,
            weighting,
            balance_wafers,
            resamples,
            ci_level,
            allow_custom,
        } => fit(
            &FitArgs {
                measurements,
                sensitivities,
                include_bulk: !no_bulk,
                weighting: weighting.parse()?,
                balance_wafers: *balance_wafers,
                resamples: *resamples,
                ci_level: *ci_level,
                allow_custom: *allow_custom,
            },
            settings,
        ),
        Command::Select { sensitivities, k } => select(sensitivities, *k, settings),
        Command::Report { report } => report_summary(report),
    }
}

fn output_path(settings: &Settings, name: &str) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(&settings.out).map_err(|source| CliError::Io {
        path: settings.out.display().to_string(),
        source,
    })?;
    Ok(settings.out.join(name))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })?;
    info!("wrote {}", path.display());
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>, CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(surfloss::Error::from)?;
    text.push('\n');
    Ok(text.into_bytes())
}

fn geometry(designs: &[String], scale: f64, settings: &Settings) -> Result<(), CliError> {
    let list: Vec<ReferenceDesign> = if designs.is_empty() {
        ReferenceDesign::ALL.to_vec()
    } else {
        designs
            .iter()
            .map(|d| {
                d.parse()
                    .map_err(|e: surfloss::Error| CliError::Usage(e.to_string()))
            })
            .collect::<Result<_, _>>()?
    };
    for d in list {
        let spec = reference_design(d, scale)?;
        let path = output_path(settings, &format!("{}.json", spec.name))?;
        let mut text = spec.to_json()?;
        text.push('\n');
        write_file(&path, text.as_bytes())?;
    }
    Ok(())
}

fn load_design(arg: &str) -> Result<DesignSpec, CliError> {
    let path = Path::new(arg);
    if path.is_file() {
        return DesignSpec::load(path).map_err(|e| match e {
            surfloss::Error::Json(j) => CliError::Data(format!("{arg}: {j}")),
            other => other.into(),
        });
    }
    match arg.parse::<ReferenceDesign>() {
        Ok(d) => Ok(reference_design(d, 1.0)?),
        Err(_) => Err(CliError::Usage(format!(
            "{arg:?} is neither a geometry file nor a reference design"
        ))),
    }
}

#[allow(non_snake_case)]
#[derive(Serialize)]
struct LevelRow {
    level: u32,
    nodes: usize,
    r_SM_per_m: f64,
    r_SV_per_m: f64,
    r_MV_per_m: f64,
    energy_J: f64,
    energy_mismatch: f64,
}

#[derive(Serialize)]
struct InterfaceExtrapolation {
    interface: String,
    r_per_m: f64,
    error_per_m: f64,
    order: Option<f64>,
    reliable: bool,
}

#[derive(Serialize)]
struct DesignConvergence {
    design: String,
    levels: Vec<LevelRow>,
    extrapolation: Option<Vec<InterfaceExtrapolation>>,
    edge_clip_per_m: BTreeMap<String, f64>,
    reliable: bool,
}

#[derive(Serialize)]
struct ConvergenceReport {
    layer_thickness_m: f64,
    layer_eps: f64,
    designs: Vec<DesignConvergence>,
}

fn convergence_entry(study: &SensitivityStudy) -> DesignConvergence {
    DesignConvergence {
        design: study.vector.design.clone(),
        levels: study
            .levels
            .iter()
            .map(|l| LevelRow {
                level: l.level,
                nodes: l.nodes,
                r_SM_per_m: l.r.sm,
                r_SV_per_m: l.r.sv,
                r_MV_per_m: l.r.mv,
                energy_J: l.energy,
                energy_mismatch: l.energy_mismatch,
            })
            .collect(),
        extrapolation: study.extrapolation.as_ref().map(|e| {
            Interface::ALL
                .iter()
                .map(|&i| {
                    let x = e.get(i);
                    InterfaceExtrapolation {
                        interface: i.code().into(),
                        r_per_m: x.value,
                        error_per_m: x.error,
                        order: x.order,
                        reliable: x.reliable,
                    }
                })
                .collect()
        }),
        edge_clip_per_m: Interface::ALL
            .iter()
            .map(|&i| (i.code().to_string(), study.clip_error.get(i)))
            .collect(),
        reliable: study.reliable(),
    }
}

fn participation(inputs: &[String], base_level: u32, settings: &Settings) -> Result<(), CliError> {
    let specs = inputs
        .iter()
        .map(|a| load_design(a))
        .collect::<Result<Vec<_>, _>>()?;
    for (k, s) in specs.iter().enumerate() {
        if specs[..k].iter().any(|o| o.name == s.name) {
            return Err(CliError::Usage(format!("design {} given twice", s.name)));
        }
    }
    if settings.levels < 3 {
        warn!(
            "{} mesh level(s): no extrapolation, sensitivities are reported without error bars",
            settings.levels
        );
    }
    let mut studies = Vec::with_capacity(specs.len());
    for spec in &specs {
        info!("solving {} over {} level(s)", spec.name, settings.levels);
        studies.push(sensitivity_study(
            spec,
            settings.layer_thickness,
            settings.layer_eps,
            base_level,
            settings.levels,
        )?);
    }

    let vectors: Vec<SensitivityVector> = studies.iter().map(|s| s.vector.clone()).collect();
    let mut csv = Vec::new();
    write_sensitivities(&mut csv, &vectors)?;
    write_file(&output_path(settings, "sensitivities.csv")?, &csv)?;
    let report = ConvergenceReport {
        layer_thickness_m: settings.layer_thickness,
        layer_eps: settings.layer_eps,
        designs: studies.iter().map(convergence_entry).collect(),
    };
    write_file(
        &output_path(settings, "convergence.json")?,
        &to_json(&report)?,
    )?;

    let unreliable: Vec<&str> = studies
        .iter()
        .filter(|s| !s.reliable())
        .map(|s| s.vector.design.as_str())
        .collect();
    if !unreliable.is_empty() {
        let msg = format!(
            "mesh extrapolation unreliable for {}",
            unreliable.join(", ")
        );
        if settings.force {
            warn!("{msg} (continuing because of --force)");
        } else {
            return Err(CliError::Numerical(format!(
                "{msg}; rerun with --force to accept"
            )));
        }
    }
    Ok(())
}

fn read_sensitivities(path: &Path) -> Result<Vec<SensitivityVector>, CliError> {
    let v = load_sensitivities(path)?;
    if v.is_empty() {
        return Err(CliError::Data(format!("{}: no designs", path.display())));
    }
    Ok(v)
}

fn synth(
    sensitivities: &Path,
    truth: &LossParameters,
    config: &SynthesisConfig,
    settings: &Settings,
) -> Result<(), CliError> {
    if config.devices == 0 || config.wafers == 0 {
        return Err(CliError::Usage(
            "--devices and --wafers must be positive".into(),
        ));
    }
    if !(config.sigma >= 0.0) {
        return Err(CliError::Usage(format!(
            "--sigma must be nonnegative, got {}",
            config.sigma
        )));
    }
    let designs = read_sensitivities(sensitivities)?;
    let ensemble = synthesize(&designs, truth, config)?;
    let mut buf = Vec::new();
    write_csv(&mut buf, &ensemble, CsvLayout::Summary)?;
    write_file(&output_path(settings, "measurements.csv")?, &buf)
}

struct FitArgs<'a> {
    measurements: &'a Path,
    sensitivities: &'a Path,
    include_bulk: bool,
    weighting: Weighting,
    balance_wafers: bool,
    resamples: usize,
    ci_level: f64,
    allow_custom: bool,
}

fn fit(args: &FitArgs<'_>, settings: &Settings) -> Result<(), CliError> {
    let model = LossModel::parse(&settings.channels, args.include_bulk)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let designs = read_sensitivities(args.sensitivities)?;
    let options = LoadOptions {
        allow_custom: true,
        ..Default::default()
    }
    .with_designs(designs.iter().map(|d| d.design.clone()));
    let ensemble = load_csv(args.measurements, &options)?;
    if ensemble.is_empty() {
        return Err(CliError::Data(format!(
            "{}: no devices",
            args.measurements.display()
        )));
    }

    let known: Vec<&str> = designs.iter().map(|d| d.design.as_str()).collect();
    let measured = ensemble.designs();
    let unmatched: Vec<&str> = measured
        .iter()
        .copied()
        .filter(|d| !known.contains(d))
        .collect();
    if !unmatched.is_empty() {
        let custom_ok = args.allow_custom && unmatched.len() < measured.len();
        let msg = format!(
            "designs without sensitivities: {}; measurement designs: {}; sensitivity designs: {}",
            unmatched.join(", "),
            measured.join(", "),
            known.join(", ")
        );
        if !custom_ok {
            return Err(CliError::Data(msg));
        }
        warn!("{msg}; dropping those devices");
    }

    let mut observations: Vec<Observation> = ensemble
        .measurements
        .iter()
        .filter_map(|m| {
            designs
                .iter()
                .find(|d| d.design == m.device.design)
                .map(|d| m.observation(d))
        })
        .collect();
    if args.balance_wafers {
        balance_groups(&mut observations);
    }
    let (mut result, weighted) = fit_weighted(&observations, &model, args.weighting)?;
    let resamples = if args.resamples == 0 {
        None
    } else if observations.len() < MIN_BOOTSTRAP_DEVICES {
        warn!(
            "{} devices: too few to bootstrap (need {MIN_BOOTSTRAP_DEVICES}); reporting point estimates only",
            observations.len()
        );
        None
    } else {
        let opts = BootstrapOptions {
            resamples: args.resamples,
            seed: settings.seed,
            level: args.ci_level,
        };
        result.intervals = bootstrap(&weighted, &model, &opts)?;
        Some(args.resamples)
    };
    if !result.identifiability.unresolvable.is_empty() {
        for p in &result.identifiability.unresolvable {
            warn!(
                "{} and {} cannot be separated by these designs (correlation {:.4})",
                p.first, p.second, p.correlation
            );
        }
    }
    let report = FitReport::from_fit(
        &result,
        args.weighting,
        resamples,
        resamples.map(|_| settings.seed),
    );
    write_file(
        &output_path(settings, "fit_report.json")?,
        &to_json(&report)?,
    )?;

    // Q versus 1/r along the first channel.
    let (x, channel) = match model.channels.first() {
        Some(c) => (result.x[0], Some(c)),
        None => (0.0, None),
    };
    let mut buf = Vec::new();
    write_plot_csv(&mut buf, &plot_curve(x, result.b, PLOT_POINTS)?)?;
    write_file(&output_path(settings, "fit_plot.csv")?, &buf)?;

    let mut points = String::from("qubit_id,design,inv_r_m,Q_measured\n");
    for m in &ensemble.measurements {
        if let Some(d) = designs.iter().find(|d| d.design == m.device.design) {
            let r = channel.map_or(0.0, |c| c.sensitivity(&d.r));
            let inv_r = if r > 0.0 {
                format!("{:e}", 1.0 / r)
            } else {
                String::new()
            };
            let _ = writeln!(
                points,
                "{},{},{},{:e}",
                m.device.qubit_id, d.design, inv_r, m.q
            );
        }
    }
    write_file(&output_path(settings, "fit_points.csv")?, points.as_bytes())?;
    if !settings.quiet {
        print!("{}", render_report(&report));
    }
    Ok(())
}

#[derive(Serialize)]
struct SelectionFile {
    k: usize,
    designs: Vec<String>,
    determinant: f64,
    condition_number: Option<f64>,
}

fn select(sensitivities: &Path, k: usize, settings: &Settings) -> Result<(), CliError> {
    let designs = read_sensitivities(sensitivities)?;
    if k == 0 || k > designs.len() {
        return Err(CliError::Usage(format!(
            "-k must lie between 1 and the number of candidates ({}), got {k}",
            designs.len()
        )));
    }
    let s = select_designs(&designs, k)?;
    let cond = s.condition_number.is_finite().then_some(s.condition_number);
    println!("selected: {}", s.designs.join(", "));
    match cond {
        Some(c) => println!("condition number: {c:.6e}"),
        None => {
            println!("condition number: infinite (fewer designs than parameters or rank deficient)")
        }
    }
    println!("information determinant: {:.6e}", s.determinant);
    let file = SelectionFile {
        k,
        designs: s.designs,
        determinant: s.determinant,
        condition_number: cond,
    };
    write_file(&output_path(settings, "selection.json")?, &to_json(&file)?)
}

fn report_summary(path: &Path) -> Result<(), CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let report = FitReport::from_json(&text)
        .map_err(|e| CliError::Data(format!("{}: malformed fit report: {e}", path.display())))?;
    print!("{}", render_report(&report));
    Ok(())
}

fn describe(column: &str) -> String {
    match column {
        "bulk" => "the design-independent background".into(),
        c => format!("{c} surface loss"),
    }
}

/// Human-readable fit summary.
pub fn render_report(r: &FitReport) -> String {
    let mut s = String::new();
    let channels: Vec<String> = r.model.channels.iter().map(|c| c.to_string()).collect();
    let _ = writeln!(
        s,
        "Loss model: {}{} ({} devices, {} weights)",
        if channels.is_empty() {
            "no surface channels".into()
        } else {
            channels.join(", ")
        },
        if r.model.include_bulk {
            " + background"
        } else {
            ""
        },
        r.n_devices,
        match r.weighting {
            Weighting::Model => "model Q^2",
            Weighting::Measured => "measured Q^2",
        }
    );
    let level = r.ci_level.map(|l| format!("{:.0}% CI", l * 100.0));
    for p in &r.parameters {
        let unit = if p.unit == "1" {
            String::new()
        } else {
            format!(" {}", p.unit)
        };
        let _ = write!(s, "  {:<12} = {:.4e}{unit}", p.name, p.value);
        if let (Some(lo), Some(hi), Some(level)) = (p.ci_lower, p.ci_upper, &level) {
            let _ = write!(s, "   [{level}: {lo:.4e} .. {hi:.4e}]");
        }
        s.push('\n');
    }
    match r.q_bulk {
        Some(q) => {
            let _ = write!(s, "  Q_bulk       = {q:.4e}");
            if let Some(b) = r.parameter("b") {
                if let (Some(lo), Some(hi), Some(level)) = (b.ci_lower, b.ci_upper, &level) {
                    let q_hi = if lo > 0.0 {
                        format!("{:.4e}", 1.0 / lo)
                    } else {
                        "unbounded".into()
                    };
                    let _ = write!(s, "   [{level}: {:.4e} .. {q_hi}]", 1.0 / hi);
                }
            }
            s.push('\n');
        }
        None if r.model.include_bulk => {
            s.push_str("  Q_bulk       = unbounded (no background loss)\n")
        }
        None => {}
    }

    let id = &r.identifiability;
    let _ = writeln!(s, "Identifiability:");
    if id.condition_number.is_finite() {
        let _ = writeln!(
            s,
            "  condition number {:.4e}{}",
            id.condition_number,
            if id.ill_conditioned {
                " (ill-conditioned)"
            } else {
                ""
            }
        );
    } else {
        let _ = writeln!(
            s,
            "  condition number infinite: parameters are not separately identifiable"
        );
    }
    for p in &id.unresolvable {
        let _ = writeln!(
            s,
            "  These data cannot resolve whether {} or {} dominates the loss, or whether both are equally important (column correlation {:.4}).",
            describe(&p.first),
            describe(&p.second),
            p.correlation
        );
    }
    if id.unresolvable.is_empty() {
        s.push_str("  no unresolvable channel pairs\n");
    }

    // Per-design comparison of measured and predicted Q.
    let mut by_design: BTreeMap<&str, (usize, f64, Option<f64>)> = BTreeMap::new();
    for res in &r.residuals {
        let e = by_design
            .entry(res.design.as_str())
            .or_insert((0, 0.0, res.q_predicted));
        e.0 += 1;
        e.1 += res.q_measured;
    }
    let _ = writeln!(s, "Per design:");
    let _ = writeln!(
        s,
        "  {:<16} {:>4} {:>14} {:>14}",
        "design", "n", "Q_measured", "Q_predicted"
    );
    for (design, (n, sum, pred)) in by_design {
        let pred = pred.map_or("unbounded".to_string(), |q| format!("{q:.4e}"));
        let _ = writeln!(
            s,
            "  {:<16} {:>4} {:>14.4e} {:>14}",
            design,
            n,
            sum / n as f64,
            pred
        );
    }
    s
}
