//! Per-device T1 records, their aggregation into quality factors, and the
//! measurement CSV formats.
//!
//! Files carry T1 in microseconds and frequency in GHz; everything in memory
//! is SI. Two layouts are accepted:
//!
//! * summary: `qubit_id,wafer,substrate,process,design,freq_GHz,t1_us_mean,t1_us_std,n_samples`
//! * trace: `qubit_id,wafer,substrate,process,design,freq_GHz,timestamp_iso8601,t1_us`,
//!   one row per sample, aggregated on load.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, FixedOffset, SecondsFormat};
use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ReferenceDesign;
use crate::lossfit::{LossParameters, Observation};
use crate::participation::SensitivityVector;
use crate::units::{parse_shifted, shift_decimal};

const SUMMARY_HEADER: [&str; 9] = [
    "qubit_id",
    "wafer",
    "substrate",
    "process",
    "design",
    "freq_GHz",
    "t1_us_mean",
    "t1_us_std",
    "n_samples",
];
const TRACE_HEADER: [&str; 8] = [
    "qubit_id",
    "wafer",
    "substrate",
    "process",
    "design",
    "freq_GHz",
    "timestamp_iso8601",
    "t1_us",
];

/// Quality factor `Q = 2 pi f T1`.
pub fn q_from_t1(frequency: f64, t1: f64) -> Result<f64> {
    if !(frequency > 0.0 && frequency.is_finite() && t1 > 0.0 && t1.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "frequency and T1 must be positive, got f = {frequency} Hz, T1 = {t1} s"
        )));
    }
    Ok(2.0 * PI * frequency * t1)
}

/// Parses a frequency written in GHz into Hz without intermediate rounding.
pub fn parse_frequency_ghz(text: &str) -> Result<f64> {
    parse_shifted(text, 9)
        .filter(|f| *f > 0.0 && f.is_finite())
        .ok_or_else(|| Error::InvalidArgument(format!("invalid frequency {text:?} GHz")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Substrate {
    #[serde(rename = "EFG")]
    Efg,
    #[serde(rename = "HEM")]
    Hem,
    #[serde(rename = "other")]
    Other,
}

impl Substrate {
    pub fn as_str(self) -> &'static str {
        match self {
            Substrate::Efg => "EFG",
            Substrate::Hem => "HEM",
            Substrate::Other => "other",
        }
    }
}

impl fmt::Display for Substrate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Substrate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "efg" => Ok(Substrate::Efg),
            "hem" => Ok(Substrate::Hem),
            "other" => Ok(Substrate::Other),
            _ => Err(Error::InvalidArgument(format!(
                "unknown substrate {s:?} (expected EFG, HEM or other)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DeviceInfo {
    pub qubit_id: String,
    pub wafer: String,
    pub substrate: Substrate,
    /// Opaque process label, e.g. `acetone`.
    pub process: String,
    pub design: String,
}

/// Equal-width histogram.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    /// `counts.len() + 1` bin edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Summary statistics of one T1 trace.
#[derive(Debug, Clone, PartialEq)]
pub struct T1Summary {
    pub mean: f64,
    /// Sample standard deviation; zero for a single sample.
    pub std: f64,
    pub median: f64,
    pub histogram: Histogram,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Freedman-Diaconis bins, at least 5; a constant trace gets one bin.
fn histogram(sorted: &[f64]) -> Histogram {
    const MIN_BINS: usize = 5;
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    let range = hi - lo;
    if !(range > 0.0) {
        return Histogram {
            edges: vec![lo, hi],
            counts: vec![sorted.len()],
        };
    }
    let iqr = percentile(sorted, 0.75) - percentile(sorted, 0.25);
    let width = 2.0 * iqr / (sorted.len() as f64).cbrt();
    let bins = if width > 0.0 {
        ((range / width).ceil() as usize).max(MIN_BINS)
    } else {
        MIN_BINS
    };
    let step = range / bins as f64;
    let edges: Vec<f64> = (0..=bins)
        .map(|k| if k == bins { hi } else { lo + step * k as f64 })
        .collect();
    let mut counts = vec![0; bins];
    for &v in sorted {
        let k = (((v - lo) / step) as usize).min(bins - 1);
        counts[k] += 1;
    }
    Histogram { edges, counts }
}

/// Mean, sample standard deviation, median and histogram of T1 samples.
pub fn aggregate(samples: &[f64]) -> Result<T1Summary> {
    if samples.is_empty() {
        return Err(Error::Data("empty T1 trace".into()));
    }
    if samples.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::Data("T1 samples must be positive".into()));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let std = if samples.len() > 1 {
        (samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        warn!("single T1 sample: standard deviation reported as 0");
        0.0
    };
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(T1Summary {
        mean,
        std,
        median: percentile(&sorted, 0.5),
        histogram: histogram(&sorted),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct T1Sample {
    pub timestamp: DateTime<FixedOffset>,
    /// Seconds.
    pub t1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QubitMeasurement {
    pub device: DeviceInfo,
    /// Hz.
    pub frequency: f64,
    /// Empty when only summary statistics were recorded.
    pub t1_samples: Vec<T1Sample>,
    /// Seconds.
    pub t1_mean: f64,
    /// Seconds.
    pub t1_std: f64,
    pub n_samples: usize,
    pub q: f64,
}

impl QubitMeasurement {
    pub fn from_samples(
        device: DeviceInfo,
        frequency: f64,
        samples: Vec<T1Sample>,
    ) -> Result<Self> {
        let values: Vec<f64> = samples.iter().map(|s| s.t1).collect();
        let summary = aggregate(&values)?;
        Ok(Self {
            q: q_from_t1(frequency, summary.mean)?,
            device,
            frequency,
            n_samples: samples.len(),
            t1_samples: samples,
            t1_mean: summary.mean,
            t1_std: summary.std,
        })
    }

    pub fn from_summary(
        device: DeviceInfo,
        frequency: f64,
        t1_mean: f64,
        t1_std: f64,
        n_samples: usize,
    ) -> Result<Self> {
        if !(t1_std >= 0.0 && t1_std.is_finite()) {
            return Err(Error::Data(format!(
                "T1 std must be nonnegative, got {t1_std}"
            )));
        }
        if n_samples == 0 {
            return Err(Error::Data("n_samples must be at least 1".into()));
        }
        Ok(Self {
            q: q_from_t1(frequency, t1_mean)?,
            device,
            frequency,
            t1_samples: Vec::new(),
            t1_mean,
            t1_std,
            n_samples,
        })
    }

    pub fn omega(&self) -> f64 {
        2.0 * PI * self.frequency
    }

    /// Fit input for this device with the default `Q^2` weight and its
    /// wafer as group label.
    pub fn observation(&self, design: &SensitivityVector) -> Observation {
        Observation::new(design, self.q).with_group(self.device.wafer.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Ensemble {
    pub measurements: Vec<QubitMeasurement>,
    /// Where the data came from, e.g. a file path.
    pub source: Option<String>,
    /// Creation or load date (ISO 8601).
    pub date: Option<String>,
}

impl Ensemble {
    pub fn new(measurements: Vec<QubitMeasurement>) -> Result<Self> {
        let e = Self {
            measurements,
            source: None,
            date: None,
        };
        e.check_unique()?;
        Ok(e)
    }

    fn check_unique(&self) -> Result<()> {
        let mut seen = HashMap::new();
        for m in &self.measurements {
            if seen.insert(m.device.qubit_id.as_str(), ()).is_some() {
                return Err(Error::Data(format!(
                    "duplicate qubit_id {:?}",
                    m.device.qubit_id
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.measurements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measurements.is_empty()
    }

    /// Distinct design names in order of first appearance.
    pub fn designs(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for m in &self.measurements {
            if !out.contains(&m.device.design.as_str()) {
                out.push(&m.device.design);
            }
        }
        out
    }
}

/// Which design names a measurement file may use.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadOptions {
    pub known_designs: Vec<String>,
    /// Accept any design name.
    pub allow_custom: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            known_designs: ReferenceDesign::ALL
                .iter()
                .map(|d| d.as_str().to_string())
                .collect(),
            allow_custom: false,
        }
    }
}

impl LoadOptions {
    pub fn with_designs<I: IntoIterator<Item = S>, S: Into<String>>(mut self, names: I) -> Self {
        self.known_designs.extend(names.into_iter().map(Into::into));
        self
    }

    fn resolves(&self, design: &str) -> bool {
        self.allow_custom || self.known_designs.iter().any(|d| d == design)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsvLayout {
    Summary,
    Trace,
}

struct RowContext<'a> {
    origin: &'a str,
    line: u64,
}

impl RowContext<'_> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.origin.to_string(),
            line: self.line,
            message: message.into(),
        }
    }

    fn number(&self, field: &str, text: &str, shift: i32) -> Result<f64> {
        parse_shifted(text, shift)
            .filter(|v| v.is_finite())
            .ok_or_else(|| self.err(format!("{field}: cannot parse {text:?} as a number")))
    }
}

fn device_info(
    rec: &csv::StringRecord,
    ctx: &RowContext<'_>,
    options: &LoadOptions,
) -> Result<DeviceInfo> {
    let qubit_id = rec[0].trim().to_string();
    if qubit_id.is_empty() {
        return Err(ctx.err("empty qubit_id"));
    }
    let design = rec[4].trim().to_string();
    if !options.resolves(&design) {
        return Err(ctx.err(format!(
            "unknown design {design:?} (not a known design and custom designs are not allowed)"
        )));
    }
    Ok(DeviceInfo {
        qubit_id,
        wafer: rec[1].trim().to_string(),
        substrate: rec[2].parse().map_err(|e: Error| ctx.err(e.to_string()))?,
        process: rec[3].trim().to_string(),
        design,
    })
}

/// Parses a measurement CSV in either layout.
pub fn read_csv<R: Read>(input: R, origin: &str, options: &LoadOptions) -> Result<Ensemble> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(input);
    let header: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let layout = if header == SUMMARY_HEADER {
        CsvLayout::Summary
    } else if header == TRACE_HEADER {
        CsvLayout::Trace
    } else {
        return Err(Error::Parse {
            path: origin.to_string(),
            line: 1,
            message: format!(
                "unrecognised header; expected {} or {}",
                SUMMARY_HEADER.join(","),
                TRACE_HEADER.join(",")
            ),
        });
    };

    let mut measurements: Vec<QubitMeasurement> = Vec::new();
    // Trace layout: samples per qubit in order of first appearance.
    let mut traces: Vec<(DeviceInfo, f64, Vec<T1Sample>, u64)> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            path: origin.to_string(),
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let ctx = RowContext {
            origin,
            line: rec.position().map_or(0, |p| p.line()),
        };
        let info = device_info(&rec, &ctx, options)?;
        let frequency = ctx.number("freq_GHz", &rec[5], 9)?;
        if !(frequency > 0.0) {
            return Err(ctx.err(format!("freq_GHz must be positive, got {}", &rec[5])));
        }
        match layout {
            CsvLayout::Summary => {
                if index
                    .insert(info.qubit_id.clone(), measurements.len())
                    .is_some()
                {
                    return Err(ctx.err(format!("duplicate qubit_id {:?}", info.qubit_id)));
                }
                let mean = ctx.number("t1_us_mean", &rec[6], -6)?;
                let std = ctx.number("t1_us_std", &rec[7], -6)?;
                let n: usize = rec[8]
                    .trim()
                    .parse()
                    .map_err(|_| ctx.err(format!("n_samples: cannot parse {:?}", &rec[8])))?;
                if !(mean > 0.0) {
                    return Err(ctx.err(format!("t1_us_mean must be positive, got {}", &rec[6])));
                }
                let m = QubitMeasurement::from_summary(info, frequency, mean, std, n)
                    .map_err(|e| ctx.err(e.to_string()))?;
                measurements.push(m);
            }
            CsvLayout::Trace => {
                let timestamp = DateTime::parse_from_rfc3339(rec[6].trim())
                    .map_err(|e| ctx.err(format!("timestamp_iso8601: {e}")))?;
                let t1 = ctx.number("t1_us", &rec[7], -6)?;
                if !(t1 > 0.0) {
                    return Err(ctx.err(format!("t1_us must be positive, got {}", &rec[7])));
                }
                let sample = T1Sample { timestamp, t1 };
                match index.get(&info.qubit_id) {
                    Some(&k) => {
                        let (known, f, samples, _) = &mut traces[k];
                        if *known != info || *f != frequency {
                            return Err(ctx.err(format!(
                                "qubit {:?} metadata differs from its first row",
                                info.qubit_id
                            )));
                        }
                        samples.push(sample);
                    }
                    None => {
                        index.insert(info.qubit_id.clone(), traces.len());
                        traces.push((info, frequency, vec![sample], ctx.line));
                    }
                }
            }
        }
    }
    for (info, frequency, samples, line) in traces {
        let m =
            QubitMeasurement::from_samples(info, frequency, samples).map_err(|e| Error::Parse {
                path: origin.to_string(),
                line,
                message: e.to_string(),
            })?;
        measurements.push(m);
    }
    Ok(Ensemble {
        measurements,
        source: Some(origin.to_string()),
        date: None,
    })
}

pub fn load_csv(path: impl AsRef<Path>, options: &LoadOptions) -> Result<Ensemble> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    let mut e = read_csv(file, &path.display().to_string(), options)?;
    if let Ok(modified) = std::fs::metadata(path).and_then(|m| m.modified()) {
        let dt: DateTime<chrono::Utc> = modified.into();
        e.date = Some(dt.to_rfc3339_opts(SecondsFormat::Secs, true));
    }
    Ok(e)
}

/// Writes `ensemble` in the given layout. The trace layout needs samples
/// for every device.
pub fn write_csv<W: Write>(out: W, ensemble: &Ensemble, layout: CsvLayout) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    match layout {
        CsvLayout::Summary => w.write_record(SUMMARY_HEADER)?,
        CsvLayout::Trace => w.write_record(TRACE_HEADER)?,
    }
    for m in &ensemble.measurements {
        let d = &m.device;
        let freq = shift_decimal(m.frequency, -9);
        let meta = [
            d.qubit_id.as_str(),
            d.wafer.as_str(),
            d.substrate.as_str(),
            d.process.as_str(),
            d.design.as_str(),
            freq.as_str(),
        ];
        match layout {
            CsvLayout::Summary => {
                let (mean, std, n) = (
                    shift_decimal(m.t1_mean, 6),
                    shift_decimal(m.t1_std, 6),
                    m.n_samples.to_string(),
                );
                w.write_record(meta.iter().copied().chain([
                    mean.as_str(),
                    std.as_str(),
                    n.as_str(),
                ]))?;
            }
            CsvLayout::Trace => {
                if m.t1_samples.is_empty() {
                    return Err(Error::Data(format!(
                        "qubit {:?} has no T1 samples to write",
                        d.qubit_id
                    )));
                }
                for s in &m.t1_samples {
                    let ts = s.timestamp.to_rfc3339_opts(SecondsFormat::AutoSi, true);
                    let t1 = shift_decimal(s.t1, 6);
                    w.write_record(meta.iter().copied().chain([ts.as_str(), t1.as_str()]))?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes the trace layout when every device has samples, else the summary.
pub fn save_csv(path: impl AsRef<Path>, ensemble: &Ensemble) -> Result<()> {
    let layout = if !ensemble.is_empty()
        && ensemble
            .measurements
            .iter()
            .all(|m| !m.t1_samples.is_empty())
    {
        CsvLayout::Trace
    } else {
        CsvLayout::Summary
    };
    let file = std::fs::File::create(path)?;
    write_csv(std::io::BufWriter::new(file), ensemble, layout)
}

/// Settings for synthetic ensembles.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisConfig {
    /// Total device count, assigned to designs round-robin.
    pub devices: usize,
    /// Relative lognormal scatter of Q.
    pub sigma: f64,
    /// Qubit frequency (Hz); no default, files must state it.
    pub frequency: f64,
    /// Number of wafer labels, assigned round-robin.
    pub wafers: usize,
    pub seed: u64,
    pub substrate: Substrate,
    pub process: String,
}

impl SynthesisConfig {
    pub fn new(devices: usize, sigma: f64, frequency: f64, seed: u64) -> Self {
        Self {
            devices,
            sigma,
            frequency,
            wafers: 6,
            seed,
            substrate: Substrate::Other,
            process: "synthetic".into(),
        }
    }
}

/// Ensemble drawn from the loss model: `Q = Q_model exp(sigma z)`,
/// `z ~ N(0, 1)`, with T1 back-computed at the configured frequency.
pub fn synthesize(
    designs: &[SensitivityVector],
    truth: &LossParameters,
    config: &SynthesisConfig,
) -> Result<Ensemble> {
    if !(config.sigma >= 0.0 && config.sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "sigma must be nonnegative, got {}",
            config.sigma
        )));
    }
    if designs.is_empty() || config.devices == 0 || config.wafers == 0 {
        return Err(Error::InvalidArgument(
            "need at least one design, device and wafer".into(),
        ));
    }
    if !(config.frequency > 0.0 && config.frequency.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "frequency must be positive, got {}",
            config.frequency
        )));
    }
    truth.validate()?;
    let q_true: Vec<f64> = designs
        .iter()
        .map(|d| {
            let loss = truth.inverse_q(&d.r);
            if loss > 0.0 {
                Ok(1.0 / loss)
            } else {
                Err(Error::InvalidArgument(format!(
                    "design {} has zero loss under the truth parameters",
                    d.design
                )))
            }
        })
        .collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let omega = 2.0 * PI * config.frequency;
    let width = config.devices.to_string().len().max(3);
    let measurements = (0..config.devices)
        .map(|k| {
            let z: f64 = StandardNormal.sample(&mut rng);
            let q = q_true[k % designs.len()] * (config.sigma * z).exp();
            let info = DeviceInfo {
                qubit_id: format!("Q{:0width$}", k + 1),
                wafer: format!("W{}", k % config.wafers + 1),
                substrate: config.substrate,
                process: config.process.clone(),
                design: designs[k % designs.len()].design.clone(),
            };
            QubitMeasurement::from_summary(info, config.frequency, q / omega, 0.0, 1)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Ensemble {
        measurements,
        source: Some(format!("synthetic (seed {})", config.seed)),
        date: None,
    })
}
