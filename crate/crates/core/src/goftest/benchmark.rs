use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{gof_test, ksd_gof_test, summarise, TrialOutcome, DEFAULT_BOOTSTRAP};
use crate::discrepancy::{optimize_directions, BandwidthPolicy, Method, SliceConfig};
use crate::error::{Error, Result};
use crate::math::{AdamConfig, Matrix, Rng};
use crate::targets::{Gaussian, Laplace, ScoreModel, StudentT};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Alternative {
    Null,
    Laplace,
    MultivariateT,
    Diffusion,
}

impl Alternative {
    pub fn name(self) -> &'static str {
        match self {
            Alternative::Null => "null",
            Alternative::Laplace => "laplace",
            Alternative::MultivariateT => "multivariate-t",
            Alternative::Diffusion => "diffusion",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSpec {
    pub alternative: Alternative,
    pub dim: usize,
    #[serde(default = "defaults::n_samples")]
    pub n_samples: usize,
    #[serde(default = "defaults::n_train")]
    pub n_train: usize,
    #[serde(default = "defaults::n_test")]
    pub n_test: usize,
    #[serde(default = "defaults::trials")]
    pub trials: usize,
    #[serde(default = "defaults::alpha")]
    pub alpha: f64,
    #[serde(default = "defaults::bootstrap")]
    pub bootstrap: usize,
    /// Adam steps on the training split before testing.
    #[serde(default = "defaults::train_steps")]
    pub train_steps: usize,
    #[serde(default)]
    pub adam: AdamConfig,
    /// Number of `(r, g)` pairs for maxSKSD-rg.
    #[serde(default = "defaults::rg_slices")]
    pub rg_slices: usize,
    #[serde(default)]
    pub bandwidth: BandwidthPolicy,
    #[serde(default = "defaults::dof")]
    pub dof: f64,
    #[serde(default = "defaults::diffusion_var")]
    pub diffusion_var: f64,
}

pub(crate) mod defaults {
    pub fn n_samples() -> usize {
        1000
    }
    pub fn n_train() -> usize {
        200
    }
    pub fn n_test() -> usize {
        800
    }
    pub fn trials() -> usize {
        200
    }
    pub fn alpha() -> f64 {
        0.05
    }
    pub fn bootstrap() -> usize {
        super::DEFAULT_BOOTSTRAP
    }
    pub fn train_steps() -> usize {
        300
    }
    pub fn rg_slices() -> usize {
        1
    }
    pub fn dof() -> f64 {
        5.0
    }
    pub fn diffusion_var() -> f64 {
        0.3
    }
}

impl BenchmarkSpec {
    pub fn new(alternative: Alternative, dim: usize) -> Self {
        BenchmarkSpec {
            alternative,
            dim,
            n_samples: defaults::n_samples(),
            n_train: defaults::n_train(),
            n_test: defaults::n_test(),
            trials: defaults::trials(),
            alpha: defaults::alpha(),
            bootstrap: defaults::bootstrap(),
            train_steps: defaults::train_steps(),
            adam: AdamConfig::default(),
            rg_slices: defaults::rg_slices(),
            bandwidth: BandwidthPolicy::gof(),
            dof: defaults::dof(),
            diffusion_var: defaults::diffusion_var(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::config("dim", "must be at least 1"));
        }
        if self.n_train + self.n_test > self.n_samples {
            return Err(Error::config("n_test", "n_train + n_test exceeds n_samples"));
        }
        if self.n_test < 2 || self.n_samples < 2 {
            return Err(Error::config("n_test", "need at least 2 test samples"));
        }
        if self.n_train < 2 {
            return Err(Error::config("n_train", "need at least 2 training samples"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::config("alpha", "must lie in (0, 1)"));
        }
        if self.trials == 0 {
            return Err(Error::config("trials", "must be at least 1"));
        }
        if self.bootstrap == 0 {
            return Err(Error::config("bootstrap", "must be at least 1"));
        }
        if self.rg_slices == 0 {
            return Err(Error::config("rg_slices", "must be at least 1"));
        }
        if !(self.dof > 2.0) {
            return Err(Error::config("dof", "must exceed 2"));
        }
        if !(self.diffusion_var > 0.0) {
            return Err(Error::config("diffusion_var", "must be positive"));
        }
        if !(self.bandwidth.factor > 0.0 && self.bandwidth.factor.is_finite()) {
            return Err(Error::config("bandwidth.factor", "must be positive"));
        }
        self.adam.validate("adam")
    }
}

/// `(p, q)`: the model under test and the sampling distribution.
///
/// The Student-t case tests against a Gaussian whose variance matches the
/// t distribution, `ν / (ν - 2)`.
pub fn benchmark_models(alternative: Alternative, dim: usize, dof: f64, diffusion_var: f64) -> Result<(ScoreModel, ScoreModel)> {
    let std = ScoreModel::standard_gaussian(dim)?;
    Ok(match alternative {
        Alternative::Null => (std.clone(), std),
        Alternative::Laplace => (std, ScoreModel::Laplace(Laplace::centred(dim, 1.0 / 2f64.sqrt())?)),
        Alternative::MultivariateT => {
            let var = dof / (dof - 2.0);
            let p = ScoreModel::Gaussian(Gaussian::diag(vec![0.0; dim], vec![var; dim])?);
            (p, ScoreModel::StudentT(StudentT::centred(dim, dof)?))
        }
        Alternative::Diffusion => (std, ScoreModel::Gaussian(Gaussian::diffusion(dim, diffusion_var)?)),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRecord {
    pub method: Method,
    pub alternative: Alternative,
    pub dim: usize,
    pub trials: Vec<TrialOutcome>,
    pub rejection_rate: f64,
    pub mean_statistic: f64,
    pub sd_statistic: f64,
}

impl BenchmarkRecord {
    fn new(method: Method, alternative: Alternative, dim: usize, trials: Vec<TrialOutcome>) -> Self {
        let (rejection_rate, mean_statistic, sd_statistic) = summarise(&trials);
        BenchmarkRecord { method, alternative, dim, trials, rejection_rate, mean_statistic, sd_statistic }
    }
}

pub(crate) fn method_stream(method: Method) -> u64 {
    match method {
        Method::Ksd => 1,
        Method::MaxSksdG => 2,
        Method::MaxSksdRg => 3,
    }
}

pub(crate) fn initial_slices(method: Method, dim: usize, rg_slices: usize, rng: &mut Rng) -> SliceConfig {
    match method {
        Method::MaxSksdRg => SliceConfig::random_rg(dim, rg_slices, rng),
        _ => SliceConfig::random_g(dim, rng),
    }
}

fn run_trial(p: &ScoreModel, x: &Matrix, spec: &BenchmarkSpec, method: Method, trial: usize, root: u64) -> Result<TrialOutcome> {
    let mut rng = Rng::new(root).fork(method_stream(method));
    let outcome = match method {
        Method::Ksd => ksd_gof_test(p, x, &spec.bandwidth, spec.alpha, spec.bootstrap, &mut rng)?,
        _ => {
            let train = x.row_range(0, spec.n_train);
            let test = x.row_range(spec.n_train, spec.n_train + spec.n_test);
            let init = initial_slices(method, spec.dim, spec.rg_slices, &mut rng);
            let slices = optimize_directions(p, &train, init, spec.train_steps, spec.adam, &spec.bandwidth)?;
            gof_test(p, &test, &slices, &spec.bandwidth, spec.alpha, spec.bootstrap, &mut rng)?
        }
    };
    Ok(TrialOutcome { trial, statistic: outcome.statistic, p_value: outcome.p_value, reject: outcome.reject })
}

/// Run every method on the same per-trial samples.
///
/// Trial `t` is seeded with `seed ^ t`; samples come from stream 0 of that
/// seed and each method from its own stream, so results do not depend on
/// which other methods run alongside.
pub fn run_benchmark_methods(spec: &BenchmarkSpec, methods: &[Method], seed: u64) -> Result<Vec<BenchmarkRecord>> {
    spec.validate()?;
    let (p, q) = benchmark_models(spec.alternative, spec.dim, spec.dof, spec.diffusion_var)?;
    let per_trial: Vec<Vec<TrialOutcome>> = (0..spec.trials)
        .into_par_iter()
        .map(|t| {
            let root = seed ^ t as u64;
            let x = q.sample(spec.n_samples, &mut Rng::new(root).fork(0))?;
            methods.iter().map(|&m| run_trial(&p, &x, spec, m, t, root)).collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(methods
        .iter()
        .enumerate()
        .map(|(k, &m)| {
            let trials = per_trial.iter().map(|row| row[k].clone()).collect();
            BenchmarkRecord::new(m, spec.alternative, spec.dim, trials)
        })
        .collect())
}

pub fn run_benchmark(spec: &BenchmarkSpec, method: Method, seed: u64) -> Result<BenchmarkRecord> {
    Ok(run_benchmark_methods(spec, &[method], seed)?.remove(0))
}
