use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{solve_parameters, LossModel, Observation};
use crate::error::{Error, Result};

/// Fewer devices than this make case resampling meaningless.
pub const MIN_BOOTSTRAP_DEVICES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapOptions {
    pub resamples: usize,
    pub seed: u64,
    /// Two-sided coverage of the percentile interval, e.g. 0.9.
    pub level: f64,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        Self {
            resamples: 1000,
            seed: 0,
            level: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub parameter: String,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
}

impl ConfidenceInterval {
    pub fn contains(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Case-resampling bootstrap over devices with percentile intervals.
///
/// Resample indices are drawn sequentially from the seed before any fit
/// runs, so results do not depend on thread scheduling.
pub fn bootstrap(
    observations: &[Observation],
    model: &LossModel,
    options: &BootstrapOptions,
) -> Result<Vec<ConfidenceInterval>> {
    let m = observations.len();
    if m < MIN_BOOTSTRAP_DEVICES {
        return Err(Error::Data(format!(
            "bootstrap needs at least {MIN_BOOTSTRAP_DEVICES} devices, got {m}"
        )));
    }
    if options.resamples < 100 {
        return Err(Error::InvalidArgument(format!(
            "at least 100 resamples are required, got {}",
            options.resamples
        )));
    }
    if !(options.level > 0.0 && options.level < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "confidence level must lie in (0, 1), got {}",
            options.level
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let plans: Vec<Vec<usize>> = (0..options.resamples)
        .map(|_| (0..m).map(|_| rng.random_range(0..m)).collect())
        .collect();
    let fits: Vec<Vec<f64>> = plans
        .par_iter()
        .map(|idx| {
            let sample: Vec<Observation> = idx.iter().map(|&k| observations[k].clone()).collect();
            solve_parameters(&sample, model)
        })
        .collect::<Result<_>>()?;

    let alpha = (1.0 - options.level) / 2.0;
    Ok(model
        .parameter_names()
        .into_iter()
        .enumerate()
        .map(|(j, parameter)| {
            let mut v: Vec<f64> = fits.iter().map(|f| f[j]).collect();
            v.sort_by(f64::total_cmp);
            ConfidenceInterval {
                parameter,
                lower: quantile(&v, alpha),
                upper: quantile(&v, 1.0 - alpha),
                level: options.level,
            }
        })
        .collect())
}
