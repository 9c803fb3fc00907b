use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::benchmark::{defaults, initial_slices, method_stream};
use super::{gof_test, ksd_gof_test, summarise, TrialOutcome};
use crate::discrepancy::{BandwidthPolicy, Method, SliceTrainer};
use crate::error::{Error, Result};
use crate::math::{AdamConfig, Rng};
use crate::targets::{GibbsConfig, Rbm, Score};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RbmGofSpec {
    pub visible: usize,
    pub hidden: usize,
    /// Standard deviation of the clean model's weights.
    #[serde(default = "rbm_defaults::weight_scale")]
    pub weight_scale: f64,
    #[serde(default = "rbm_defaults::bias_scale")]
    pub bias_scale: f64,
    pub levels: Vec<f64>,
    #[serde(default = "rbm_defaults::trials")]
    pub trials: usize,
    #[serde(default = "rbm_defaults::n_chains")]
    pub n_chains: usize,
    #[serde(default = "rbm_defaults::burn_in")]
    pub burn_in: usize,
    /// Direction updates happen on the last `train_sweeps` burn-in sweeps.
    #[serde(default)]
    pub train_sweeps: Option<usize>,
    #[serde(default = "defaults::n_train")]
    pub n_train: usize,
    #[serde(default = "defaults::n_test")]
    pub n_test: usize,
    #[serde(default = "defaults::alpha")]
    pub alpha: f64,
    #[serde(default = "defaults::bootstrap")]
    pub bootstrap: usize,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default = "defaults::rg_slices")]
    pub rg_slices: usize,
    #[serde(default)]
    pub bandwidth: BandwidthPolicy,
}

mod rbm_defaults {
    pub fn weight_scale() -> f64 {
        1.0
    }
    pub fn bias_scale() -> f64 {
        1.0
    }
    pub fn trials() -> usize {
        50
    }
    pub fn n_chains() -> usize {
        1000
    }
    pub fn burn_in() -> usize {
        2000
    }
}

impl RbmGofSpec {
    pub fn new(visible: usize, hidden: usize, levels: Vec<f64>) -> Self {
        RbmGofSpec {
            visible,
            hidden,
            weight_scale: rbm_defaults::weight_scale(),
            bias_scale: rbm_defaults::bias_scale(),
            levels,
            trials: rbm_defaults::trials(),
            n_chains: rbm_defaults::n_chains(),
            burn_in: rbm_defaults::burn_in(),
            train_sweeps: None,
            n_train: defaults::n_train(),
            n_test: defaults::n_test(),
            alpha: defaults::alpha(),
            bootstrap: defaults::bootstrap(),
            adam: AdamConfig::default(),
            rg_slices: defaults::rg_slices(),
            bandwidth: BandwidthPolicy::gof(),
        }
    }

    fn train_sweeps(&self) -> usize {
        self.train_sweeps.unwrap_or(self.burn_in).min(self.burn_in)
    }

    pub fn validate(&self) -> Result<()> {
        if self.visible == 0 || self.hidden == 0 {
            return Err(Error::config("visible", "visible and hidden sizes must be at least 1"));
        }
        if self.levels.is_empty() {
            return Err(Error::config("levels", "need at least one perturbation level"));
        }
        if let Some(l) = self.levels.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
            return Err(Error::config("levels", format!("invalid level {l}")));
        }
        if self.n_train + self.n_test > self.n_chains {
            return Err(Error::config("n_chains", "n_train + n_test exceeds n_chains"));
        }
        if self.n_train < 2 || self.n_test < 2 {
            return Err(Error::config("n_test", "need at least 2 training and 2 test chains"));
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
        if !(self.weight_scale >= 0.0 && self.bias_scale >= 0.0) {
            return Err(Error::config("weight_scale", "scales must be non-negative"));
        }
        self.adam.validate("adam")
    }

    /// The unperturbed model, drawn from `seed`.
    pub fn clean_model(&self, seed: u64) -> Result<Rbm> {
        let mut rng = Rng::new(seed).fork(u64::MAX);
        Rbm::random(self.visible, self.hidden, self.weight_scale, self.bias_scale, &mut rng)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RbmLevelRecord {
    pub method: Method,
    pub level: f64,
    pub trials: Vec<TrialOutcome>,
    pub rejection_rate: f64,
    pub mean_statistic: f64,
    pub sd_statistic: f64,
}

/// One trial at one level for every method. Trained methods share the
/// Gibbs chains; their directions are updated on the first `n_train`
/// chains during the last `train_sweeps` burn-in sweeps and the test uses
/// the next `n_test` chains' final states. KSD uses all final states.
fn run_trial(p: &Rbm, spec: &RbmGofSpec, level: f64, methods: &[Method], trial: usize, root: u64) -> Result<Vec<TrialOutcome>> {
    let base = Rng::new(root);
    let q = p.perturbed(level, &mut base.clone().fork(0))?;
    let mut trainers: Vec<Option<SliceTrainer>> = methods
        .iter()
        .map(|&m| {
            (m != Method::Ksd).then(|| {
                let mut rng = base.clone().fork(16 + method_stream(m));
                SliceTrainer::new(initial_slices(m, spec.visible, spec.rg_slices, &mut rng), spec.adam, spec.bandwidth)
            })
        })
        .collect();
    let model = crate::targets::ScoreModel::Rbm(p.clone());
    let start = spec.burn_in - spec.train_sweeps();
    let gibbs = GibbsConfig::new(spec.n_chains, spec.burn_in);
    let finals = q.gibbs(&gibbs, &mut base.clone().fork(1), |sweep, x| {
        if sweep < start || sweep >= spec.burn_in || trainers.iter().all(Option::is_none) {
            return Ok(());
        }
        let train = x.row_range(0, spec.n_train);
        let s = model.score_matrix(&train);
        for t in trainers.iter_mut().flatten() {
            t.step_from_scores(&train, &s)?;
        }
        Ok(())
    })?;
    let test = finals.row_range(spec.n_train, spec.n_train + spec.n_test);
    methods
        .iter()
        .zip(trainers)
        .map(|(&m, trainer)| {
            let mut rng = base.clone().fork(32 + method_stream(m));
            let out = match trainer {
                None => ksd_gof_test(&model, &finals, &spec.bandwidth, spec.alpha, spec.bootstrap, &mut rng)?,
                Some(t) => gof_test(&model, &test, t.slices(), &spec.bandwidth, spec.alpha, spec.bootstrap, &mut rng)?,
            };
            Ok(TrialOutcome { trial, statistic: out.statistic, p_value: out.p_value, reject: out.reject })
        })
        .collect()
}

/// Rejection rates per perturbation level and method. Trial `t` at level
/// index `l` is seeded with `seed ^ (l · trials + t)`.
pub fn run_rbm_gof(spec: &RbmGofSpec, methods: &[Method], seed: u64) -> Result<Vec<RbmLevelRecord>> {
    spec.validate()?;
    let p = spec.clean_model(seed)?;
    let mut out = Vec::new();
    for (l, &level) in spec.levels.iter().enumerate() {
        let per_trial: Vec<Vec<TrialOutcome>> = (0..spec.trials)
            .into_par_iter()
            .map(|t| run_trial(&p, spec, level, methods, t, seed ^ (l * spec.trials + t) as u64))
            .collect::<Result<_>>()?;
        for (k, &m) in methods.iter().enumerate() {
            let trials: Vec<TrialOutcome> = per_trial.iter().map(|row| row[k].clone()).collect();
            let (rejection_rate, mean_statistic, sd_statistic) = summarise(&trials);
            out.push(RbmLevelRecord { method: m, level, trials, rejection_rate, mean_statistic, sd_statistic });
        }
    }
    Ok(out)
}
