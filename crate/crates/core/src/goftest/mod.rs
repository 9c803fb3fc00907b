//! Bootstrap goodness-of-fit testing and the benchmark harnesses built on it.

mod benchmark;
mod rbm;

pub use benchmark::{benchmark_models, run_benchmark, run_benchmark_methods, Alternative, BenchmarkRecord, BenchmarkSpec};
pub use rbm::{run_rbm_gof, RbmGofSpec, RbmLevelRecord};
pub(crate) use benchmark::initial_slices;

use serde::{Deserialize, Serialize};

use crate::discrepancy::{bootstrap_null_samples, ksd_matrix, sksd_matrix, BandwidthPolicy, Method, SliceConfig, SteinMatrix};
use crate::error::{Error, Result};
use crate::math::{Matrix, Rng};
use crate::targets::Score;

/// Default number of bootstrap draws.
pub const DEFAULT_BOOTSTRAP: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GofOutcome {
    pub method: Method,
    pub statistic: f64,
    pub bootstrap_samples: Vec<f64>,
    pub p_value: f64,
    pub reject: bool,
    pub alpha: f64,
    pub n: usize,
    pub bandwidths: Vec<f64>,
}

/// Fraction of bootstrap draws strictly above `statistic`.
pub fn p_value(statistic: f64, bootstrap: &[f64]) -> f64 {
    let above = bootstrap.iter().filter(|&&b| b > statistic).count();
    above as f64 / bootstrap.len() as f64
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::param("alpha", format!("must lie in (0, 1), got {alpha}")))
    }
}

/// Decide from a prebuilt Stein matrix.
pub fn test_from_matrix(sm: SteinMatrix, alpha: f64, bootstrap: usize, rng: &mut Rng) -> Result<GofOutcome> {
    check_alpha(alpha)?;
    if bootstrap == 0 {
        return Err(Error::param("bootstrap", "must be at least 1"));
    }
    let n = sm.h.rows();
    let boot = bootstrap_null_samples(&sm.h, bootstrap, rng)?;
    let statistic = sm.ustat.value;
    let p = p_value(statistic, &boot);
    Ok(GofOutcome {
        method: sm.ustat.method,
        statistic,
        bootstrap_samples: boot,
        p_value: p,
        reject: p < alpha,
        alpha,
        n,
        bandwidths: sm.ustat.bandwidths,
    })
}

/// Sliced bootstrap test of `H₀: samples ~ model` with fixed `slices`.
pub fn gof_test(
    model: &impl Score,
    test_samples: &Matrix,
    slices: &SliceConfig,
    policy: &BandwidthPolicy,
    alpha: f64,
    bootstrap: usize,
    rng: &mut Rng,
) -> Result<GofOutcome> {
    check_alpha(alpha)?;
    if bootstrap == 0 {
        return Err(Error::param("bootstrap", "must be at least 1"));
    }
    let sm = sksd_matrix(model, test_samples, slices, policy)?;
    test_from_matrix(sm, alpha, bootstrap, rng)
}

/// KSD bootstrap test.
pub fn ksd_gof_test(
    model: &impl Score,
    samples: &Matrix,
    policy: &BandwidthPolicy,
    alpha: f64,
    bootstrap: usize,
    rng: &mut Rng,
) -> Result<GofOutcome> {
    check_alpha(alpha)?;
    if bootstrap == 0 {
        return Err(Error::param("bootstrap", "must be at least 1"));
    }
    let sm = ksd_matrix(model, samples, policy, None)?;
    test_from_matrix(sm, alpha, bootstrap, rng)
}

/// One row of a per-trial results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub trial: usize,
    pub statistic: f64,
    pub p_value: f64,
    pub reject: bool,
}

/// `(rejection rate, mean statistic, sample sd of the statistic)`.
pub fn summarise(trials: &[TrialOutcome]) -> (f64, f64, f64) {
    let n = trials.len() as f64;
    if trials.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let rate = trials.iter().filter(|t| t.reject).count() as f64 / n;
    let mean = trials.iter().map(|t| t.statistic).sum::<f64>() / n;
    let sd = if trials.len() > 1 {
        (trials.iter().map(|t| (t.statistic - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (rate, mean, sd)
}
