use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::svgd::{parf, run_ssvgd, run_svgd, ParfMode};
use super::{ParticleEnsemble, SamplerConfig};
use crate::discrepancy::SliceConfig;
use crate::error::{Error, Result};
use crate::math::{Matrix, Rng};
use crate::targets::ScoreModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerKind {
    Svgd,
    Ssvgd,
}

impl SamplerKind {
    pub fn name(self) -> &'static str {
        match self {
            SamplerKind::Svgd => "svgd",
            SamplerKind::Ssvgd => "ssvgd",
        }
    }
}

/// Starting slice matrix for sliced SVGD.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SliceInit {
    /// `G = I`, matching the one-hot basis.
    #[default]
    Identity,
    /// Gaussian rows normalised to the unit sphere.
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VarianceSpec {
    pub dims: Vec<usize>,
    pub particles: Vec<usize>,
    #[serde(default = "defaults::step_sizes")]
    pub step_sizes: Vec<f64>,
    #[serde(default = "defaults::steps")]
    pub steps: usize,
    #[serde(default = "defaults::samplers")]
    pub samplers: Vec<SamplerKind>,
    /// Particles start at `N(init_mean · 1, init_var · I)`.
    #[serde(default = "defaults::init_mean")]
    pub init_mean: f64,
    #[serde(default = "defaults::init_var")]
    pub init_var: f64,
    /// Sampler settings; `step_size` is replaced by each entry of
    /// `step_sizes`. A missing staleness threshold defaults to `0.1 √D ε`.
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default = "defaults::staleness")]
    pub staleness: bool,
    #[serde(default)]
    pub init_slices: SliceInit,
}

mod defaults {
    use super::SamplerKind;
    pub fn step_sizes() -> Vec<f64> {
        vec![0.05, 0.1]
    }
    pub fn steps() -> usize {
        6000
    }
    pub fn samplers() -> Vec<SamplerKind> {
        vec![SamplerKind::Svgd, SamplerKind::Ssvgd]
    }
    pub fn init_mean() -> f64 {
        2.0
    }
    pub fn init_var() -> f64 {
        2.0
    }
    pub fn staleness() -> bool {
        true
    }
}

impl VarianceSpec {
    pub fn new(dims: Vec<usize>, particles: Vec<usize>) -> Self {
        VarianceSpec {
            dims,
            particles,
            step_sizes: defaults::step_sizes(),
            steps: defaults::steps(),
            samplers: defaults::samplers(),
            init_mean: defaults::init_mean(),
            init_var: defaults::init_var(),
            sampler: SamplerConfig::default(),
            staleness: defaults::staleness(),
            init_slices: SliceInit::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() || self.dims.contains(&0) {
            return Err(Error::config("dims", "need at least one positive dimension"));
        }
        if self.particles.is_empty() || self.particles.iter().any(|&n| n < 2) {
            return Err(Error::config("particles", "need particle counts of at least 2"));
        }
        if self.step_sizes.is_empty() || self.step_sizes.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return Err(Error::config("step_sizes", "need positive step sizes"));
        }
        if self.samplers.is_empty() {
            return Err(Error::config("samplers", "need at least one sampler"));
        }
        if !(self.init_var > 0.0 && self.init_mean.is_finite()) {
            return Err(Error::config("init_var", "must be positive"));
        }
        self.sampler.validate()
    }

    /// Every `(dim, particles, step size, sampler)` combination, in output order.
    pub fn grid(&self) -> Vec<(usize, usize, f64, SamplerKind)> {
        let mut out = Vec::new();
        for &d in &self.dims {
            for &n in &self.particles {
                for &e in &self.step_sizes {
                    for &k in &self.samplers {
                        out.push((d, n, e, k));
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceRow {
    pub sampler: SamplerKind,
    pub dim: usize,
    pub particles: usize,
    pub step_size: f64,
    pub var_avg: f64,
    pub parf: f64,
}

fn run_one(spec: &VarianceSpec, d: usize, n: usize, eps: f64, kind: SamplerKind, rng: &mut Rng) -> Result<VarianceRow> {
    let model = ScoreModel::standard_gaussian(d)?;
    let sd = spec.init_var.sqrt();
    let mut init_rng = rng.fork(0);
    let x = Matrix::from_fn(n, d, |_, _| spec.init_mean + sd * init_rng.normal());
    let ens = ParticleEnsemble::new(x, eps)?;
    let mut cfg = SamplerConfig { step_size: eps, ..spec.sampler };
    if spec.staleness && cfg.schedule.staleness.is_none() {
        cfg.schedule.staleness = Some(SamplerConfig::default_staleness(d, eps));
    }
    let (particles, p) = match kind {
        SamplerKind::Svgd => {
            let e = run_svgd(&model, ens, &cfg, spec.steps)?;
            let p = parf(&e.particles, ParfMode::Svgd, None, &cfg.bandwidth)?;
            (e.particles, p)
        }
        SamplerKind::Ssvgd => {
            let slices = match spec.init_slices {
                SliceInit::Identity => SliceConfig::identity(d),
                SliceInit::Random => SliceConfig::random_g(d, &mut rng.fork(1)),
            };
            let (e, g) = run_ssvgd(&model, ens, slices, &cfg, spec.steps)?;
            let p = parf(&e.particles, ParfMode::Ssvgd, Some(&g), &cfg.bandwidth)?;
            (e.particles, p)
        }
    };
    Ok(VarianceRow { sampler: kind, dim: d, particles: n, step_size: eps, var_avg: super::average_variance(&particles), parf: p })
}

/// Average estimated variance and final PARF for each configuration of
/// SVGD / sliced SVGD on an `N(0, I)` target. Each `(dim, particles, step
/// size)` group is seeded with `seed ^ k`, `k` the [`VarianceSpec::grid`]
/// index of its first entry, so the samplers in a group share initial
/// particles.
pub fn run_variance_experiment(spec: &VarianceSpec, seed: u64) -> Result<Vec<VarianceRow>> {
    spec.validate()?;
    let grid = spec.grid();
    grid.par_iter()
        .map(|&(d, n, eps, kind)| {
            let idx = grid.iter().position(|&(d2, n2, e2, _)| (d2, n2, e2) == (d, n, eps)).unwrap_or(0);
            run_one(spec, d, n, eps, kind, &mut Rng::new(seed ^ idx as u64))
        })
        .collect()
}
