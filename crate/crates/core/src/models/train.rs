use serde::{Deserialize, Serialize};

use super::{grad_ica_wrt_w, grad_ksd_ica_wrt_w, init_mixing, test_nll, IcaProblem};
use crate::discrepancy::{ksd_ustat_from_scores, sksd_vstat_from_scores, BandwidthPolicy, Method, SliceConfig, SliceTrainer};
use crate::error::{Error, Result};
use crate::goftest::initial_slices;
use crate::math::{AdamConfig, AdamState, Matrix, Rng};
use crate::targets::{Ica, Score, ScoreModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IcaConfig {
    pub dim: usize,
    #[serde(default = "defaults::objective")]
    pub objective: Method,
    /// maxsksd-rg is refused unless this is set.
    #[serde(default)]
    pub allow_rg: bool,
    #[serde(default = "defaults::n_train")]
    pub n_train: usize,
    #[serde(default = "defaults::n_test")]
    pub n_test: usize,
    #[serde(default = "defaults::steps")]
    pub steps: usize,
    #[serde(default = "defaults::batch")]
    pub batch: usize,
    /// Slice ascent steps after each `W` step.
    #[serde(default = "defaults::one")]
    pub g_steps: usize,
    #[serde(default = "AdamConfig::ica")]
    pub adam_w: AdamConfig,
    #[serde(default = "AdamConfig::ica")]
    pub adam_g: AdamConfig,
    #[serde(default = "defaults::eval_every")]
    pub eval_every: usize,
    /// Size of the fixed training subset the reported objective is computed on.
    #[serde(default = "defaults::eval_subset")]
    pub eval_subset: usize,
    /// Defaults to factor 1.5 for the sliced objectives and 1.0 for KSD.
    #[serde(default)]
    pub bandwidth: Option<BandwidthPolicy>,
    /// Number of slices for maxsksd-rg; defaults to `dim`.
    #[serde(default)]
    pub rg_slices: Option<usize>,
}

mod defaults {
    use crate::discrepancy::Method;
    pub fn objective() -> Method {
        Method::MaxSksdG
    }
    pub fn n_train() -> usize {
        20_000
    }
    pub fn n_test() -> usize {
        5_000
    }
    pub fn steps() -> usize {
        15_000
    }
    pub fn batch() -> usize {
        100
    }
    pub fn one() -> usize {
        1
    }
    pub fn eval_every() -> usize {
        500
    }
    pub fn eval_subset() -> usize {
        500
    }
}

impl IcaConfig {
    pub fn new(dim: usize, objective: Method) -> Self {
        IcaConfig {
            dim,
            objective,
            allow_rg: false,
            n_train: defaults::n_train(),
            n_test: defaults::n_test(),
            steps: defaults::steps(),
            batch: defaults::batch(),
            g_steps: 1,
            adam_w: AdamConfig::ica(),
            adam_g: AdamConfig::ica(),
            eval_every: defaults::eval_every(),
            eval_subset: defaults::eval_subset(),
            bandwidth: None,
            rg_slices: None,
        }
    }

    pub fn policy(&self) -> BandwidthPolicy {
        self.bandwidth.unwrap_or(match self.objective {
            Method::Ksd => BandwidthPolicy::gof().with_floor(),
            _ => BandwidthPolicy::ica().with_floor(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::config("dim", "must be at least 1"));
        }
        if self.objective == Method::MaxSksdRg && !self.allow_rg {
            return Err(Error::config("objective", "maxsksd-rg requires allow_rg = true"));
        }
        if self.n_train < 2 || self.n_test == 0 {
            return Err(Error::config("n_train", "need at least 2 training and 1 test sample"));
        }
        if self.batch < 2 || self.batch > self.n_train {
            return Err(Error::config("batch", format!("must lie in [2, n_train = {}]", self.n_train)));
        }
        if self.eval_every == 0 {
            return Err(Error::config("eval_every", "must be at least 1"));
        }
        if self.eval_subset < 2 {
            return Err(Error::config("eval_subset", "must be at least 2"));
        }
        if self.rg_slices == Some(0) {
            return Err(Error::config("rg_slices", "must be at least 1"));
        }
        if let Some(b) = self.bandwidth {
            if !(b.factor > 0.0 && b.factor.is_finite()) {
                return Err(Error::config("bandwidth.factor", "must be positive"));
            }
        }
        self.adam_w.validate("adam_w")?;
        self.adam_g.validate("adam_g")
    }
}

/// Parameters and optimiser state during training.
#[derive(Clone, Debug)]
pub struct IcaTrainState {
    pub w: Matrix,
    pub adam_w: AdamState,
    pub trainer: Option<SliceTrainer>,
    pub step: usize,
}

impl IcaTrainState {
    pub fn slices(&self) -> Option<&SliceConfig> {
        self.trainer.as_ref().map(|t| t.slices())
    }
}

/// One evaluation point. `objective` is measured on a fixed training subset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub objective: f64,
    pub test_nll: f64,
}

#[derive(Clone, Debug)]
pub struct IcaRun {
    pub state: IcaTrainState,
    pub trace: Vec<TraceRow>,
}

impl IcaRun {
    pub fn final_nll(&self) -> f64 {
        self.trace.last().map_or(f64::NAN, |r| r.test_nll)
    }

    pub fn checkpoint(&self) -> IcaCheckpoint {
        IcaCheckpoint {
            w: rows(&self.state.w),
            g: self.state.slices().map(|s| rows(s.directions())),
            step: self.state.step,
            nll_trace: self.trace.iter().map(|r| r.test_nll).collect(),
        }
    }
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(<[f64]>::to_vec).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IcaCheckpoint {
    #[serde(rename = "W")]
    pub w: Vec<Vec<f64>>,
    #[serde(rename = "G")]
    pub g: Option<Vec<Vec<f64>>>,
    pub step: usize,
    pub nll_trace: Vec<f64>,
}

impl IcaCheckpoint {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).unwrap_or_default()
    }

    /// Parse and check that `W` is square and non-singular.
    pub fn from_json(text: &str) -> Result<Self> {
        let cp: IcaCheckpoint = crate::config::parse_json(text)?;
        let w = Matrix::from_rows(&cp.w).map_err(|e| Error::config("W", e.to_string()))?;
        Ica::new(w).map_err(|e| Error::config("W", e.to_string()))?;
        if let Some(g) = &cp.g {
            let gm = Matrix::from_rows(g).map_err(|e| Error::config("G", e.to_string()))?;
            if gm.cols() != cp.w.len() {
                return Err(Error::config("G", "column count must match W"));
            }
        }
        Ok(cp)
    }
}

/// Draws `k` distinct indices by partially shuffling a persistent permutation.
struct BatchSampler {
    perm: Vec<usize>,
}

impl BatchSampler {
    fn draw(&mut self, k: usize, rng: &mut Rng) -> Vec<usize> {
        let n = self.perm.len();
        for i in 0..k {
            let j = i + rng.index(n - i);
            self.perm.swap(i, j);
        }
        self.perm[..k].to_vec()
    }
}

fn objective_value(cfg: &IcaConfig, w: &Matrix, x: &Matrix, slices: Option<&SliceConfig>, policy: &BandwidthPolicy) -> Result<f64> {
    let s = ScoreModel::Ica(Ica::new(w.clone())?).score_matrix(x);
    match (cfg.objective, slices) {
        (_, Some(sl)) => Ok(sksd_vstat_from_scores(x, &s, sl, policy)?.value),
        _ => Ok(ksd_ustat_from_scores(x, &s, policy, None)?.value),
    }
}

/// Training has diverged once the test NLL is non-finite or exceeds
/// `initial + 9 |initial|`.
fn check_divergence(step: usize, nll: f64, initial: f64) -> Result<()> {
    if !nll.is_finite() || nll > initial + 9.0 * initial.abs() {
        return Err(Error::TrainingDiverged { step, nll, initial });
    }
    Ok(())
}

/// Fit `W` to `problem.train` by alternating a descent step on `W` with
/// `g_steps` ascent steps on the slices. Test NLL is evaluated at step 0,
/// every `eval_every` steps and at the last step.
pub fn train_ica(problem: &IcaProblem, cfg: &IcaConfig, rng: &mut Rng) -> Result<IcaRun> {
    cfg.validate()?;
    let (train, test) = (&problem.train, &problem.test);
    if train.cols() != cfg.dim || test.cols() != cfg.dim {
        return Err(Error::DimensionMismatch { expected: cfg.dim, got: train.cols() });
    }
    if train.rows() < cfg.batch {
        return Err(Error::TooFewSamples { needed: cfg.batch, got: train.rows() });
    }
    let policy = cfg.policy();
    let w = init_mixing(cfg.dim, &mut rng.fork(10))?;
    let trainer = match cfg.objective {
        Method::Ksd => None,
        m => {
            let init = initial_slices(m, cfg.dim, cfg.rg_slices.unwrap_or(cfg.dim), &mut rng.fork(11));
            Some(SliceTrainer::new(init, cfg.adam_g, policy))
        }
    };
    let mut batch_rng = rng.fork(12);
    let mut sampler = BatchSampler { perm: (0..train.rows()).collect() };
    let eval_n = cfg.eval_subset.min(train.rows());
    let eval_x = train.select_rows(&sampler.draw(eval_n, &mut rng.fork(13)));
    sampler.perm = (0..train.rows()).collect();

    let mut state = IcaTrainState { adam_w: AdamState::new(cfg.dim * cfg.dim, cfg.adam_w), w, trainer, step: 0 };
    let initial = test_nll(&state.w, test)?;
    let mut trace = vec![TraceRow {
        step: 0,
        objective: objective_value(cfg, &state.w, &eval_x, state.slices(), &policy)?,
        test_nll: initial,
    }];
    let diverged = |step: usize, nll: f64| Error::TrainingDiverged { step, nll, initial };

    for step in 1..=cfg.steps {
        let xb = train.select_rows(&sampler.draw(cfg.batch, &mut batch_rng));
        let grad = match state.slices() {
            Some(sl) => grad_ica_wrt_w(&state.w, &xb, sl, &policy),
            None => grad_ksd_ica_wrt_w(&state.w, &xb, &policy),
        };
        let (_, gw) = grad.map_err(|e| match e {
            Error::Singular => diverged(step, f64::INFINITY),
            e => e,
        })?;
        let delta = state.adam_w.step(gw.as_slice())?;
        for (p, d) in state.w.as_mut_slice().iter_mut().zip(delta) {
            *p += d;
        }
        state.step = step;
        let ica = Ica::new(state.w.clone()).map_err(|_| diverged(step, f64::INFINITY))?;
        if let Some(tr) = state.trainer.as_mut() {
            let s = ScoreModel::Ica(ica).score_matrix(&xb);
            for _ in 0..cfg.g_steps {
                tr.step_from_scores(&xb, &s)?;
            }
        }
        if step % cfg.eval_every == 0 || step == cfg.steps {
            let nll = test_nll(&state.w, test)?;
            check_divergence(step, nll, initial)?;
            let objective = objective_value(cfg, &state.w, &eval_x, state.slices(), &policy)?;
            trace.push(TraceRow { step, objective, test_nll: nll });
        }
    }
    Ok(IcaRun { state, trace })
}
