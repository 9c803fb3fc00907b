//! Particle samplers: SVGD, sliced SVGD and SGHMC, plus the experiment
//! harnesses built on them.

mod sghmc;
mod svgd;
mod variance;

pub use sghmc::{
    correlated_gaussian, gaussian_kl, select_step_size, select_step_sizes, sghmc_chain, SelectionSpec, SghmcConfig,
    StepSizeRow, StepSizeSelection,
};
pub use svgd::{
    parf, run_ssvgd, run_svgd, ssvgd_direction, ssvgd_step, svgd_direction, svgd_step, update_slices_for_sampler,
    ParfMode, SlicedSvgd,
};
pub use variance::{run_variance_experiment, SamplerKind, SliceInit, VarianceRow, VarianceSpec};

use serde::{Deserialize, Serialize};

use crate::discrepancy::BandwidthPolicy;
use crate::error::{Error, Result};
use crate::math::{AdamConfig, Matrix};

/// Average per-dimension sample variance, `(1/D) Σ_d Var(x_d)`.
pub fn average_variance(x: &Matrix) -> f64 {
    let v = x.column_variances();
    v.iter().sum::<f64>() / v.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub iter: usize,
    pub parf: f64,
    pub var_avg: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParticleEnsemble {
    pub particles: Matrix,
    pub step_size: f64,
    pub iteration: usize,
    pub history: Vec<Diagnostic>,
}

impl ParticleEnsemble {
    pub fn new(particles: Matrix, step_size: f64) -> Result<Self> {
        if particles.rows() == 0 || particles.cols() == 0 {
            return Err(Error::TooFewSamples { needed: 1, got: particles.rows() });
        }
        if !(step_size > 0.0 && step_size.is_finite()) {
            return Err(Error::param("step_size", format!("must be positive, got {step_size}")));
        }
        if let Some(i) = particles.first_non_finite() {
            return Err(Error::NonFinite { what: "particles", index: i / particles.cols() });
        }
        Ok(ParticleEnsemble { particles, step_size, iteration: 0, history: Vec::new() })
    }

    pub fn len(&self) -> usize {
        self.particles.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.particles.cols()
    }

    pub fn average_variance(&self) -> f64 {
        average_variance(&self.particles)
    }
}

/// When to re-optimise the slice matrix during sliced SVGD.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SliceSchedule {
    /// Consider an update after every `every` particle steps.
    pub every: usize,
    /// Adam steps per update.
    pub adam_steps: usize,
    /// Skip the update unless the RMS particle displacement since the last
    /// update exceeds this. `None` disables the check.
    pub staleness: Option<f64>,
}

impl Default for SliceSchedule {
    fn default() -> Self {
        SliceSchedule { every: 1, adam_steps: 1, staleness: None }
    }
}

/// Linear ramp of the repulsive-force coefficient from `initial` to 1 over
/// `warmup` steps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RepulsionSchedule {
    pub initial: f64,
    pub warmup: usize,
}

impl Default for RepulsionSchedule {
    fn default() -> Self {
        RepulsionSchedule { initial: 1.0, warmup: 0 }
    }
}

impl RepulsionSchedule {
    pub fn coefficient(&self, iteration: usize) -> f64 {
        if iteration >= self.warmup {
            1.0
        } else {
            self.initial + (1.0 - self.initial) * iteration as f64 / self.warmup as f64
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub step_size: f64,
    pub bandwidth: BandwidthPolicy,
    pub schedule: SliceSchedule,
    pub adam: AdamConfig,
    pub repulsion: RepulsionSchedule,
    /// Record a [`Diagnostic`] every this many steps; 0 disables.
    pub diagnostics_every: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            step_size: 0.1,
            bandwidth: BandwidthPolicy::gof().with_floor(),
            schedule: SliceSchedule::default(),
            adam: AdamConfig::default(),
            repulsion: RepulsionSchedule::default(),
            diagnostics_every: 0,
        }
    }
}

impl SamplerConfig {
    /// Staleness threshold `0.1 · √D · ε`.
    pub fn default_staleness(dim: usize, step_size: f64) -> f64 {
        0.1 * (dim as f64).sqrt() * step_size
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::config("step_size", "must be positive"));
        }
        if !(self.bandwidth.factor > 0.0 && self.bandwidth.factor.is_finite()) {
            return Err(Error::config("bandwidth.factor", "must be positive"));
        }
        if self.schedule.every == 0 {
            return Err(Error::config("schedule.every", "must be at least 1"));
        }
        if let Some(d) = self.schedule.staleness {
            if !(d >= 0.0 && d.is_finite()) {
                return Err(Error::config("schedule.staleness", "must be non-negative"));
            }
        }
        let c = self.repulsion.initial;
        if !(c > 0.0 && c <= 1.0) {
            return Err(Error::config("repulsion.initial", "must lie in (0, 1]"));
        }
        self.adam.validate("adam")
    }
}
