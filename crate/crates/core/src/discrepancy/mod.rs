//! Kernel Stein discrepancies: KSD and the sliced maxSKSD-g / maxSKSD-rg
//! family, their U/V estimators, bootstrap resampling and optimisation of
//! the slicing directions.
//!
//! Every estimator works from a sample matrix `x` (`N × D`, rows are samples)
//! and the score matrix `s` (`s_i = ∇ log p(x_i)`). The `*_from_scores`
//! entry points accept a precomputed `s` so callers that differentiate
//! through the score (ICA training) can reuse it.

mod bootstrap;
mod estimators;
mod gradient;
mod kernel;
mod optimize;
mod slices;

pub use bootstrap::bootstrap_null_samples;
pub use estimators::{
    ksd_matrix, ksd_ustat, ksd_ustat_from_scores, ksd_vstat, ksd_vstat_from_scores, sksd_matrix, sksd_matrix_from_scores, sksd_ustat,
    sksd_ustat_from_scores, sksd_vstat, sksd_vstat_from_scores, SteinMatrix,
};
pub use gradient::{
    grad_wrt_directions, grad_wrt_directions_from_scores, ksd_ustat_score_gradient, ksd_vstat_score_gradient, sksd_vstat_gradient, VstatGradient,
};
pub use kernel::{h_slice, ksd_up, rbf_1d, xi_slice, Rbf1d, UNIT_NORM_TOL};
pub use optimize::{optimize_directions, SliceTrainer};
pub use slices::{SliceConfig, SliceDoc, SliceVariant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{median_heuristic, median_heuristic_rows, Bandwidth, Matrix, BANDWIDTH_FLOOR};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "ksd")]
    Ksd,
    #[serde(rename = "maxsksd-g")]
    MaxSksdG,
    #[serde(rename = "maxsksd-rg")]
    MaxSksdRg,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Ksd => "ksd",
            Method::MaxSksdG => "maxsksd-g",
            Method::MaxSksdRg => "maxsksd-rg",
        }
    }

    pub fn slice_variant(self) -> Option<SliceVariant> {
        match self {
            Method::Ksd => None,
            Method::MaxSksdG => Some(SliceVariant::G),
            Method::MaxSksdRg => Some(SliceVariant::Rg),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ksd" => Ok(Method::Ksd),
            "maxsksd-g" => Ok(Method::MaxSksdG),
            "maxsksd-rg" => Ok(Method::MaxSksdRg),
            other => Err(Error::param("method", format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Statistic {
    U,
    V,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyEstimate {
    pub value: f64,
    pub method: Method,
    pub statistic: Statistic,
    /// One entry per slice (a single entry for KSD); sums to `value`.
    pub per_slice: Vec<f64>,
    pub bandwidths: Vec<f64>,
    pub n: usize,
}

/// Median-heuristic bandwidth `σ = factor × median distance`, with an
/// optional floor used when every distance is zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandwidthPolicy {
    pub factor: f64,
    #[serde(default)]
    pub floor: Option<f64>,
}

impl Default for BandwidthPolicy {
    fn default() -> Self {
        BandwidthPolicy::gof()
    }
}

impl BandwidthPolicy {
    pub fn median(factor: f64) -> Self {
        BandwidthPolicy { factor, floor: None }
    }

    pub fn gof() -> Self {
        BandwidthPolicy::median(1.0)
    }

    pub fn ica() -> Self {
        BandwidthPolicy::median(1.5)
    }

    pub fn with_floor(mut self) -> Self {
        self.floor = Some(BANDWIDTH_FLOOR);
        self
    }

    fn floored(&self, r: Result<Bandwidth>) -> Result<Bandwidth> {
        match (r, self.floor) {
            (Err(Error::DegenerateBandwidth(_)), Some(f)) => Bandwidth::new(f),
            (r, _) => r,
        }
    }

    pub fn resolve(&self, values: &[f64]) -> Result<Bandwidth> {
        self.floored(median_heuristic(values, self.factor))
    }

    pub fn resolve_rows(&self, x: &Matrix) -> Result<Bandwidth> {
        self.floored(median_heuristic_rows(x, self.factor))
    }
}
