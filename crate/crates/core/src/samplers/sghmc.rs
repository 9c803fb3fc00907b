use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discrepancy::{ksd_ustat, sksd_ustat, BandwidthPolicy, Method, SliceConfig, SliceTrainer};
use crate::error::{Error, Result};
use crate::math::{cholesky, norm, AdamConfig, Lu, Matrix, Rng};
use crate::targets::{Gaussian, Score};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SghmcConfig {
    /// Replaced by each candidate during step-size selection, where it may
    /// be omitted.
    #[serde(default)]
    pub step_size: f64,
    #[serde(default = "defaults::friction")]
    pub friction: f64,
    #[serde(default = "defaults::n_chains")]
    pub n_chains: usize,
    #[serde(default = "defaults::burn_in")]
    pub burn_in: usize,
    #[serde(default = "defaults::thinning")]
    pub thinning: usize,
    /// Samples collected after burn-in, across all chains.
    #[serde(default = "defaults::n_samples")]
    pub n_samples: usize,
    /// Chains start at `N(0, init_scale² I)` with zero momentum.
    #[serde(default = "defaults::init_scale")]
    pub init_scale: f64,
}

mod defaults {
    pub fn friction() -> f64 {
        0.1
    }
    pub fn n_chains() -> usize {
        100
    }
    pub fn burn_in() -> usize {
        2000
    }
    pub fn thinning() -> usize {
        5
    }
    pub fn n_samples() -> usize {
        1500
    }
    pub fn init_scale() -> f64 {
        1.0
    }
}

/// Threshold on `‖x‖` beyond which a chain counts as diverged.
const DIVERGENCE_NORM: f64 = 1e8;

impl SghmcConfig {
    pub fn new(step_size: f64) -> Self {
        SghmcConfig {
            step_size,
            friction: defaults::friction(),
            n_chains: defaults::n_chains(),
            burn_in: defaults::burn_in(),
            thinning: defaults::thinning(),
            n_samples: defaults::n_samples(),
            init_scale: defaults::init_scale(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::config("step_size", "must be positive"));
        }
        if !(self.friction >= 0.0 && self.friction * self.step_size <= 1.0) {
            return Err(Error::config("friction", "need 0 <= friction * step_size <= 1"));
        }
        if self.n_chains == 0 {
            return Err(Error::config("n_chains", "must be at least 1"));
        }
        if self.thinning == 0 {
            return Err(Error::config("thinning", "must be at least 1"));
        }
        if self.n_samples == 0 {
            return Err(Error::config("n_samples", "must be at least 1"));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::config("init_scale", "must be non-negative"));
        }
        Ok(())
    }

    /// Sweeps after burn-in needed to collect `n_samples`.
    pub fn collection_sweeps(&self) -> usize {
        self.n_samples.div_ceil(self.n_chains) * self.thinning
    }
}

/// Parallel SGHMC chains on the exact score:
/// `v ← (1 - αh) v + h s(x) + N(0, 2αh I)`, then `x ← x + h v`.
///
/// `callback(sweep, x)` runs after every sweep (burn-in included). After
/// burn-in, every `thinning`-th sweep contributes all chains' states,
/// sweep-major, until `n_samples` rows are collected.
pub fn sghmc_chain(
    model: &impl Score,
    cfg: &SghmcConfig,
    rng: &mut Rng,
    mut callback: impl FnMut(usize, &Matrix) -> Result<()>,
) -> Result<Matrix> {
    cfg.validate()?;
    let d = model.dim();
    let (h, alpha) = (cfg.step_size, cfg.friction);
    let noise = (2.0 * alpha * h).sqrt();
    let mut x = Matrix::from_fn(cfg.n_chains, d, |_, _| cfg.init_scale * rng.normal());
    let mut v = Matrix::zeros(cfg.n_chains, d);
    let mut s = vec![0.0; d];
    let mut out = Vec::with_capacity(cfg.n_samples * d);
    let total = cfg.burn_in + cfg.collection_sweeps();
    for sweep in 0..total {
        for c in 0..cfg.n_chains {
            model.score_into(x.row(c), &mut s);
            let vc = v.row_mut(c);
            for k in 0..d {
                vc[k] = (1.0 - alpha * h) * vc[k] + h * s[k] + noise * rng.normal();
            }
            let vc = v.row(c).to_vec();
            let xc = x.row_mut(c);
            for k in 0..d {
                xc[k] += h * vc[k];
            }
            let n = norm(xc);
            if !(n <= DIVERGENCE_NORM) {
                return Err(Error::ChainDiverged { step_size: h, norm: n });
            }
        }
        callback(sweep, &x)?;
        if sweep >= cfg.burn_in && (sweep + 1 - cfg.burn_in) % cfg.thinning == 0 {
            for c in 0..cfg.n_chains {
                if out.len() < cfg.n_samples * d {
                    out.extend_from_slice(x.row(c));
                }
            }
        }
    }
    Matrix::from_vec(cfg.n_samples, d, out)
}

/// `KL(q̂ ‖ p)` where `q̂` is the Gaussian with the sample mean and
/// covariance of `samples`.
pub fn gaussian_kl(samples: &Matrix, p: &Gaussian) -> Result<f64> {
    let d = samples.cols();
    if p.mean().len() != d {
        return Err(Error::DimensionMismatch { expected: p.mean().len(), got: d });
    }
    if samples.rows() <= d {
        return Err(Error::TooFewSamples { needed: d + 1, got: samples.rows() });
    }
    let mu_q = samples.column_means();
    let cov_q = samples.covariance();
    let cov_p = p.covariance_matrix();
    let lu_p = Lu::factor(&cov_p)?;
    let lq = cholesky(&cov_q)?;
    let log_det_q: f64 = 2.0 * (0..d).map(|i| lq[(i, i)].ln()).sum::<f64>();
    let mut trace = 0.0;
    for j in 0..d {
        let col = lu_p.solve(&cov_q.column(j));
        trace += col[j];
    }
    let diff: Vec<f64> = mu_q.iter().zip(p.mean()).map(|(a, b)| b - a).collect();
    let maha: f64 = diff.iter().zip(lu_p.solve(&diff)).map(|(a, b)| a * b).sum();
    Ok(0.5 * (trace + maha - d as f64 + p.log_det_cov() - log_det_q))
}

/// Zero-mean Gaussian with covariance `Q diag(λ) Qᵀ`, `Q` a random rotation
/// and `λ` log-uniform on `[min_var, max_var]`.
pub fn correlated_gaussian(dim: usize, min_var: f64, max_var: f64, rng: &mut Rng) -> Result<Gaussian> {
    if !(min_var > 0.0 && max_var >= min_var && max_var.is_finite()) {
        return Err(Error::param("min_var", "need 0 < min_var <= max_var"));
    }
    let a = Matrix::from_fn(dim, dim, |_, _| rng.normal());
    let q = orthonormalise(&a)?;
    let (lo, hi) = (min_var.ln(), max_var.ln());
    let lambda: Vec<f64> = (0..dim).map(|_| (lo + (hi - lo) * rng.uniform()).exp()).collect();
    let mut cov = Matrix::zeros(dim, dim);
    for i in 0..dim {
        for j in 0..dim {
            cov[(i, j)] = (0..dim).map(|k| q[(i, k)] * lambda[k] * q[(j, k)]).sum();
        }
    }
    let sym = Matrix::from_fn(dim, dim, |i, j| 0.5 * (cov[(i, j)] + cov[(j, i)]));
    Gaussian::full(vec![0.0; dim], sym)
}

/// Gram-Schmidt on the columns of `a`.
fn orthonormalise(a: &Matrix) -> Result<Matrix> {
    let n = a.rows();
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    for j in 0..a.cols() {
        let mut c = a.column(j);
        for q in &cols {
            let p: f64 = q.iter().zip(&c).map(|(a, b)| a * b).sum();
            c.iter_mut().zip(q).for_each(|(ci, qi)| *ci -= p * qi);
        }
        let nc = norm(&c);
        if !(nc > 1e-12) {
            return Err(Error::Singular);
        }
        c.iter_mut().for_each(|v| *v /= nc);
        cols.push(c);
    }
    Ok(Matrix::from_fn(n, cols.len(), |i, j| cols[j][i]))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionSpec {
    pub candidates: Vec<f64>,
    pub methods: Vec<Method>,
    /// Chain settings; `step_size` is replaced by each candidate.
    #[serde(default = "default_chain")]
    pub chain: SghmcConfig,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default = "rg_slices")]
    pub rg_slices: usize,
    #[serde(default)]
    pub bandwidth: BandwidthPolicy,
}

fn default_chain() -> SghmcConfig {
    SghmcConfig::new(0.0)
}

fn rg_slices() -> usize {
    1
}

impl SelectionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.candidates.is_empty() {
            return Err(Error::config("candidates", "need at least one step size"));
        }
        if let Some(c) = self.candidates.iter().find(|c| !(**c > 0.0 && c.is_finite())) {
            return Err(Error::config("candidates", format!("invalid step size {c}")));
        }
        if self.methods.is_empty() {
            return Err(Error::config("methods", "need at least one method"));
        }
        if self.rg_slices == 0 {
            return Err(Error::config("rg_slices", "must be at least 1"));
        }
        if self.chain.n_samples < 2 {
            return Err(Error::config("chain.n_samples", "need at least 2 samples"));
        }
        self.adam.validate("adam")?;
        self.candidates.iter().try_for_each(|&h| SghmcConfig { step_size: h, ..self.chain }.validate())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepSizeRow {
    pub step_size: f64,
    /// U-statistic per method, in [`SelectionSpec::methods`] order.
    pub discrepancies: Vec<f64>,
    /// Moment-matched Gaussian KL; present for Gaussian targets.
    pub kl: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepSizeSelection {
    pub methods: Vec<Method>,
    pub rows: Vec<StepSizeRow>,
    /// Chosen step size per method.
    pub chosen: Vec<f64>,
    pub kl_choice: Option<f64>,
}

impl StepSizeSelection {
    pub fn chosen_for(&self, method: Method) -> Option<f64> {
        self.methods.iter().position(|&m| m == method).map(|k| self.chosen[k])
    }
}

fn argmin(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, v) in values.enumerate() {
        if v < best.1 {
            best = (i, v);
        }
    }
    best.0
}

fn method_stream(m: Method) -> u64 {
    match m {
        Method::Ksd => 1,
        Method::MaxSksdG => 2,
        Method::MaxSksdRg => 3,
    }
}

fn evaluate_candidate(model: &impl Score, gaussian: Option<&Gaussian>, spec: &SelectionSpec, h: f64, rng: Rng) -> Result<StepSizeRow> {
    let cfg = SghmcConfig { step_size: h, ..spec.chain };
    let d = model.dim();
    let mut trainers: Vec<Option<SliceTrainer>> = spec
        .methods
        .iter()
        .map(|&m| {
            let mut r = rng.clone().fork(16 + method_stream(m));
            let init = match m {
                Method::Ksd => return None,
                Method::MaxSksdG => SliceConfig::random_g(d, &mut r),
                Method::MaxSksdRg => SliceConfig::random_rg(d, spec.rg_slices, &mut r),
            };
            Some(SliceTrainer::new(init, spec.adam, spec.bandwidth))
        })
        .collect();
    let samples = sghmc_chain(model, &cfg, &mut rng.clone().fork(0), |sweep, x| {
        if sweep < cfg.burn_in {
            let s = model.score_matrix(x);
            for t in trainers.iter_mut().flatten() {
                t.step_from_scores(x, &s)?;
            }
        }
        Ok(())
    })?;
    let discrepancies = spec
        .methods
        .iter()
        .zip(&trainers)
        .map(|(_, t)| match t {
            None => ksd_ustat(model, &samples, &spec.bandwidth, None).map(|e| e.value),
            Some(t) => sksd_ustat(model, &samples, t.slices(), &spec.bandwidth).map(|e| e.value),
        })
        .collect::<Result<Vec<_>>>()?;
    let kl = gaussian.map(|g| gaussian_kl(&samples, g)).transpose()?;
    Ok(StepSizeRow { step_size: h, discrepancies, kl })
}

/// Run SGHMC at every candidate step size and pick, per method, the one
/// with the lowest U-statistic. Slices are trained on the chain states
/// during burn-in and then frozen. Candidate `k` uses stream `k` of `rng`.
pub fn select_step_sizes(model: &(impl Score + Sync), gaussian: Option<&Gaussian>, spec: &SelectionSpec, rng: &Rng) -> Result<StepSizeSelection> {
    spec.validate()?;
    let rows: Vec<StepSizeRow> = spec
        .candidates
        .par_iter()
        .enumerate()
        .map(|(k, &h)| evaluate_candidate(model, gaussian, spec, h, rng.clone().fork(k as u64)))
        .collect::<Result<_>>()?;
    let chosen = (0..spec.methods.len())
        .map(|m| rows[argmin(rows.iter().map(|r| r.discrepancies[m]))].step_size)
        .collect();
    let kl_choice = gaussian.map(|_| rows[argmin(rows.iter().map(|r| r.kl.unwrap_or(f64::INFINITY)))].step_size);
    Ok(StepSizeSelection { methods: spec.methods.clone(), rows, chosen, kl_choice })
}

/// Single-method form of [`select_step_sizes`]: the chosen step size and the
/// per-candidate `(step size, discrepancy)` table.
pub fn select_step_size(
    model: &(impl Score + Sync),
    candidates: &[f64],
    method: Method,
    chain: SghmcConfig,
    rng: &Rng,
) -> Result<(f64, Vec<(f64, f64)>)> {
    let spec = SelectionSpec {
        candidates: candidates.to_vec(),
        methods: vec![method],
        chain,
        adam: AdamConfig::default(),
        rg_slices: 1,
        bandwidth: BandwidthPolicy::gof(),
    };
    let sel = select_step_sizes(model, None, &spec, rng)?;
    let table = sel.rows.iter().map(|r| (r.step_size, r.discrepancies[0])).collect();
    Ok((sel.chosen[0], table))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::ScoreModel;

    #[test]
    fn exact_sample_count_without_burn_in() {
        let m = ScoreModel::standard_gaussian(2).unwrap();
        let cfg = SghmcConfig { burn_in: 0, thinning: 1, n_chains: 7, n_samples: 20, ..SghmcConfig::new(0.1) };
        let x = sghmc_chain(&m, &cfg, &mut Rng::new(1), |_, _| Ok(())).unwrap();
        assert_eq!(x.shape(), (20, 2));
    }

    #[test]
    fn callback_sees_every_sweep() {
        let m = ScoreModel::standard_gaussian(2).unwrap();
        let cfg = SghmcConfig { burn_in: 4, thinning: 2, n_chains: 5, n_samples: 10, ..SghmcConfig::new(0.1) };
        let mut sweeps = Vec::new();
        sghmc_chain(&m, &cfg, &mut Rng::new(1), |s, x| {
            assert_eq!(x.rows(), 5);
            sweeps.push(s);
            Ok(())
        })
        .unwrap();
        assert_eq!(sweeps, (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn small_steps_recover_the_covariance() {
        let g = Gaussian::diag(vec![0.0, 0.0], vec![0.5, 2.0]).unwrap();
        let m = ScoreModel::Gaussian(g);
        let cfg = SghmcConfig { step_size: 0.05, friction: 1.0, burn_in: 2000, thinning: 20, n_samples: 20_000, ..SghmcConfig::new(0.05) };
        let x = sghmc_chain(&m, &cfg, &mut Rng::new(2), |_, _| Ok(())).unwrap();
        let v = x.column_variances();
        assert!((v[0] / 0.5 - 1.0).abs() < 0.1, "{v:?}");
        assert!((v[1] / 2.0 - 1.0).abs() < 0.1, "{v:?}");
    }

    #[test]
    fn divergence_names_the_step_size() {
        let g = Gaussian::diag(vec![0.0], vec![1e-4]).unwrap();
        let cfg = SghmcConfig { burn_in: 10_000, ..SghmcConfig::new(1.0) };
        let err = sghmc_chain(&ScoreModel::Gaussian(g), &cfg, &mut Rng::new(3), |_, _| Ok(())).unwrap_err();
        assert!(matches!(err, Error::ChainDiverged { step_size, .. } if step_size == 1.0));
        assert!(err.to_string().contains("step size 1"));
    }

    #[test]
    fn kl_is_zero_for_matching_moments() {
        let g = Gaussian::diag(vec![1.0, -1.0], vec![2.0, 0.5]).unwrap();
        let x = ScoreModel::Gaussian(g.clone()).sample(200_000, &mut Rng::new(4)).unwrap();
        assert!(gaussian_kl(&x, &g).unwrap().abs() < 1e-3);
        let shifted = Gaussian::diag(vec![0.0, -1.0], vec![2.0, 0.5]).unwrap();
        // KL(N(1,2) || N(0,2)) = 1 / 4
        assert!((gaussian_kl(&x, &shifted).unwrap() - 0.25).abs() < 0.01);
    }

    #[test]
    fn correlated_gaussian_spectrum() {
        let g = correlated_gaussian(6, 0.1, 2.0, &mut Rng::new(5)).unwrap();
        let mut ev = crate::math::symmetric_eigenvalues(&g.covariance_matrix()).unwrap();
        ev.sort_by(f64::total_cmp);
        assert!(ev[0] >= 0.1 - 1e-9 && ev[5] <= 2.0 + 1e-9, "{ev:?}");
    }

    #[test]
    fn single_candidate_is_returned() {
        let m = ScoreModel::standard_gaussian(2).unwrap();
        let chain = SghmcConfig { n_chains: 10, burn_in: 20, n_samples: 40, ..SghmcConfig::new(0.1) };
        let (h, table) = select_step_size(&m, &[0.3], Method::MaxSksdG, chain, &Rng::new(6)).unwrap();
        assert_eq!(h, 0.3);
        assert_eq!(table.len(), 1);
    }

    #[test]
    fn gross_bias_prefers_the_small_step() {
        let g = Gaussian::diag(vec![0.0; 3], vec![0.0026; 3]).unwrap();
        let m = ScoreModel::Gaussian(g.clone());
        let chain = SghmcConfig { n_chains: 50, burn_in: 500, n_samples: 500, init_scale: 0.051, ..SghmcConfig::new(0.1) };
        let spec = SelectionSpec {
            candidates: vec![1e-4, 1e-1],
            methods: vec![Method::Ksd, Method::MaxSksdG],
            chain,
            adam: AdamConfig::default(),
            rg_slices: 1,
            bandwidth: BandwidthPolicy::gof(),
        };
        let sel = select_step_sizes(&m, Some(&g), &spec, &Rng::new(7)).unwrap();
        assert_eq!(sel.chosen, vec![1e-4, 1e-4]);
        assert_eq!(sel.kl_choice, Some(1e-4));
    }
}
