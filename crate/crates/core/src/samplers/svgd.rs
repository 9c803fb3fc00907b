use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{average_variance, Diagnostic, ParticleEnsemble, SamplerConfig};
use crate::discrepancy::{BandwidthPolicy, SliceConfig, SliceTrainer, SliceVariant};
use crate::error::{Error, Result};
use crate::math::{dot, sq_dist, Matrix};
use crate::targets::Score;

/// Bandwidth for an ensemble. A single particle only interacts with itself,
/// where the kernel is 1 and its gradient 0 for any σ.
fn inv_sq_rows(x: &Matrix, policy: &BandwidthPolicy) -> Result<f64> {
    if x.rows() == 1 {
        return Ok(1.0);
    }
    let s = policy.resolve_rows(x)?.get();
    Ok(1.0 / (s * s))
}

fn inv_sq_values(a: &[f64], policy: &BandwidthPolicy) -> Result<f64> {
    if a.len() == 1 {
        return Ok(1.0);
    }
    let s = policy.resolve(a)?.get();
    Ok(1.0 / (s * s))
}

/// `φ(x_i) = (1/N) Σ_j [s_j k(x_j, x_i) + c ∇_{x_j} k(x_j, x_i)]` for every
/// particle, with the multivariate RBF kernel.
pub fn svgd_direction(x: &Matrix, s: &Matrix, policy: &BandwidthPolicy, repulsion: f64) -> Result<Matrix> {
    let (n, d) = x.shape();
    if s.shape() != (n, d) {
        return Err(Error::DimensionMismatch { expected: n * d, got: s.rows() * s.cols() });
    }
    let inv_s2 = inv_sq_rows(x, policy)?;
    let inv_n = 1.0 / n as f64;
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = x.row(i);
            let mut phi = vec![0.0; d];
            for j in 0..n {
                let xj = x.row(j);
                let k = (-0.5 * sq_dist(xi, xj) * inv_s2).exp();
                let sj = s.row(j);
                for c in 0..d {
                    phi[c] += sj[c] * k + repulsion * ((xi[c] - xj[c]) * inv_s2 * k);
                }
            }
            phi.iter_mut().for_each(|p| *p *= inv_n);
            phi
        })
        .collect();
    Ok(Matrix::from_fn(n, d, |i, c| rows[i][c]))
}

fn projections(x: &Matrix, g: &[f64]) -> Vec<f64> {
    x.row_iter().map(|row| dot(row, g)).collect()
}

/// Sliced direction: coordinate `d` of particle `i` is
/// `(1/N) Σ_j [s_j^d k_d(a_j, a_i) + c g_dd ∂k_d(a_j, a_i)]` with
/// `a_j = x_jᵀ g_d` and a per-row bandwidth from the projections.
pub fn ssvgd_direction(x: &Matrix, s: &Matrix, slices: &SliceConfig, policy: &BandwidthPolicy, repulsion: f64) -> Result<Matrix> {
    let (n, d) = x.shape();
    if s.shape() != (n, d) {
        return Err(Error::DimensionMismatch { expected: n * d, got: s.rows() * s.cols() });
    }
    if slices.variant() != SliceVariant::G || slices.dim() != d || !slices.is_one_hot_identity() {
        return Err(Error::param("slices", "sliced SVGD needs D directions with the one-hot basis"));
    }
    let g = slices.directions();
    let inv_n = 1.0 / n as f64;
    let cols: Vec<Vec<f64>> = (0..d)
        .into_par_iter()
        .map(|c| {
            let gd = g.row(c);
            let a = projections(x, gd);
            let inv_s2 = match slices.bandwidth_overrides() {
                Some(bw) => 1.0 / (bw[c].get() * bw[c].get()),
                None => inv_sq_values(&a, policy)?,
            };
            let gdd = gd[c];
            Ok((0..n)
                .map(|i| {
                    let mut acc = 0.0;
                    for j in 0..n {
                        let diff = a[i] - a[j];
                        let k = (-0.5 * (diff * diff) * inv_s2).exp();
                        acc += s[(j, c)] * k + repulsion * (gdd * diff * inv_s2 * k);
                    }
                    acc * inv_n
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(Matrix::from_fn(n, d, |i, c| cols[c][i]))
}

fn apply(ens: &mut ParticleEnsemble, phi: &Matrix) -> Result<()> {
    let eps = ens.step_size;
    let mut next = ens.particles.clone();
    for (p, u) in next.as_mut_slice().iter_mut().zip(phi.as_slice()) {
        *p += eps * u;
    }
    if let Some(i) = next.first_non_finite() {
        return Err(Error::NonFinite { what: "particles", index: i / next.cols() });
    }
    ens.particles = next;
    ens.iteration += 1;
    Ok(())
}

/// One synchronous SVGD update with unit repulsion.
pub fn svgd_step(model: &impl Score, ens: &mut ParticleEnsemble, policy: &BandwidthPolicy) -> Result<()> {
    let s = model.score_matrix(&ens.particles);
    let phi = svgd_direction(&ens.particles, &s, policy, 1.0)?;
    apply(ens, &phi)
}

/// One synchronous sliced SVGD update with fixed `slices` and unit repulsion.
pub fn ssvgd_step(model: &impl Score, ens: &mut ParticleEnsemble, slices: &SliceConfig, policy: &BandwidthPolicy) -> Result<()> {
    let s = model.score_matrix(&ens.particles);
    let phi = ssvgd_direction(&ens.particles, &s, slices, policy, 1.0)?;
    apply(ens, &phi)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParfMode {
    Svgd,
    Ssvgd,
}

/// Particle-averaged repulsive force `(1/N) Σ_n ‖R(x_n)‖_∞`.
///
/// `slices` is required for [`ParfMode::Ssvgd`].
pub fn parf(x: &Matrix, mode: ParfMode, slices: Option<&SliceConfig>, policy: &BandwidthPolicy) -> Result<f64> {
    let (n, d) = x.shape();
    if n == 0 {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    let zeros = Matrix::zeros(n, d);
    let repulsive = |s: &Matrix| -> Result<Matrix> {
        match mode {
            ParfMode::Svgd => svgd_direction(x, s, policy, 1.0),
            ParfMode::Ssvgd => {
                let sl = slices.ok_or_else(|| Error::param("slices", "required for sliced PARF"))?;
                ssvgd_direction(x, s, sl, policy, 1.0)
            }
        }
    };
    let r = match repulsive(&zeros) {
        Err(Error::DegenerateBandwidth(_)) => return Ok(0.0),
        r => r?,
    };
    let total: f64 = r.row_iter().map(|row| row.iter().fold(0.0f64, |m, v| m.max(v.abs()))).sum();
    Ok(total / n as f64)
}

/// Ascend the sliced V-statistic (KL-decrease magnitude) for `adam_steps`
/// steps on the current particles.
pub fn update_slices_for_sampler(model: &impl Score, x: &Matrix, trainer: &mut SliceTrainer, adam_steps: usize) -> Result<()> {
    let s = model.score_matrix(x);
    for _ in 0..adam_steps {
        trainer.step_from_scores(x, &s)?;
    }
    Ok(())
}

/// Sliced SVGD with slice re-optimisation interleaved with particle steps.
#[derive(Clone, Debug)]
pub struct SlicedSvgd {
    pub ensemble: ParticleEnsemble,
    trainer: SliceTrainer,
    config: SamplerConfig,
    reference: Matrix,
    updates: usize,
}

impl SlicedSvgd {
    pub fn new(ensemble: ParticleEnsemble, slices: SliceConfig, config: SamplerConfig) -> Result<Self> {
        config.validate()?;
        if slices.variant() != SliceVariant::G || slices.dim() != ensemble.dim() || !slices.is_one_hot_identity() {
            return Err(Error::param("slices", "sliced SVGD needs D directions with the one-hot basis"));
        }
        let reference = ensemble.particles.clone();
        let trainer = SliceTrainer::new(slices, config.adam, config.bandwidth);
        Ok(SlicedSvgd { ensemble, trainer, config, reference, updates: 0 })
    }

    pub fn slices(&self) -> &SliceConfig {
        self.trainer.slices()
    }

    /// Number of slice updates performed so far.
    pub fn slice_updates(&self) -> usize {
        self.updates
    }

    fn moved(&self) -> f64 {
        let x = &self.ensemble.particles;
        let total: f64 = (0..x.rows()).map(|i| sq_dist(x.row(i), self.reference.row(i))).sum();
        (total / x.rows() as f64).sqrt()
    }

    /// Particle step with the current slices, then a scheduled slice update
    /// on the moved particles.
    pub fn step(&mut self, model: &impl Score) -> Result<()> {
        let coef = self.config.repulsion.coefficient(self.ensemble.iteration);
        let s = model.score_matrix(&self.ensemble.particles);
        let phi = ssvgd_direction(&self.ensemble.particles, &s, self.trainer.slices(), &self.config.bandwidth, coef)?;
        apply(&mut self.ensemble, &phi)?;
        let sched = self.config.schedule;
        let due = self.ensemble.iteration % sched.every == 0;
        let stale = sched.staleness.is_none_or(|delta| self.moved() > delta);
        if due && stale && sched.adam_steps > 0 {
            update_slices_for_sampler(model, &self.ensemble.particles, &mut self.trainer, sched.adam_steps)?;
            self.reference = self.ensemble.particles.clone();
            self.updates += 1;
        }
        record(&mut self.ensemble, &self.config, ParfMode::Ssvgd, Some(self.trainer.slices()))
    }

    pub fn run(&mut self, model: &impl Score, steps: usize) -> Result<()> {
        for _ in 0..steps {
            self.step(model)?;
        }
        Ok(())
    }
}

fn record(ens: &mut ParticleEnsemble, cfg: &SamplerConfig, mode: ParfMode, slices: Option<&SliceConfig>) -> Result<()> {
    let k = cfg.diagnostics_every;
    if k == 0 || ens.iteration % k != 0 {
        return Ok(());
    }
    let p = parf(&ens.particles, mode, slices, &cfg.bandwidth)?;
    let var_avg = average_variance(&ens.particles);
    ens.history.push(Diagnostic { iter: ens.iteration, parf: p, var_avg });
    Ok(())
}

/// Run `steps` SVGD updates under `config`.
pub fn run_svgd(model: &impl Score, mut ens: ParticleEnsemble, config: &SamplerConfig, steps: usize) -> Result<ParticleEnsemble> {
    config.validate()?;
    for _ in 0..steps {
        let coef = config.repulsion.coefficient(ens.iteration);
        let s = model.score_matrix(&ens.particles);
        let phi = svgd_direction(&ens.particles, &s, &config.bandwidth, coef)?;
        apply(&mut ens, &phi)?;
        record(&mut ens, config, ParfMode::Svgd, None)?;
    }
    Ok(ens)
}

/// Run `steps` sliced SVGD updates and return the ensemble and final slices.
pub fn run_ssvgd(
    model: &impl Score,
    ens: ParticleEnsemble,
    slices: SliceConfig,
    config: &SamplerConfig,
    steps: usize,
) -> Result<(ParticleEnsemble, SliceConfig)> {
    let mut s = SlicedSvgd::new(ens, slices, *config)?;
    s.run(model, steps)?;
    Ok((s.ensemble, s.trainer.into_slices()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discrepancy::sksd_vstat;
    use crate::math::{AdamConfig, Rng};
    use crate::targets::ScoreModel;

    fn gaussian(d: usize) -> ScoreModel {
        ScoreModel::standard_gaussian(d).unwrap()
    }

    fn particles(n: usize, d: usize, mean: f64, sd: f64, rng: &mut Rng) -> Matrix {
        Matrix::from_fn(n, d, |_, _| mean + sd * rng.normal())
    }

    #[test]
    fn single_particle_is_gradient_ascent() {
        let m = gaussian(3);
        let x = Matrix::from_rows(&[vec![0.5, -1.0, 2.0]]).unwrap();
        let pol = BandwidthPolicy::gof();
        for sliced in [false, true] {
            let mut e = ParticleEnsemble::new(x.clone(), 0.1).unwrap();
            if sliced {
                ssvgd_step(&m, &mut e, &SliceConfig::identity(3), &pol).unwrap();
            } else {
                svgd_step(&m, &mut e, &pol).unwrap();
            }
            let expect: Vec<f64> = x.row(0).iter().map(|v| v + 0.1 * -v).collect();
            assert_eq!(e.particles.row(0), expect.as_slice());
        }
    }

    #[test]
    fn one_dimensional_sliced_matches_svgd() {
        let m = gaussian(1);
        let pol = BandwidthPolicy::gof();
        let mut rng = Rng::new(4);
        let mut a = ParticleEnsemble::new(particles(30, 1, 1.0, 2.0, &mut rng), 0.05).unwrap();
        let mut b = a.clone();
        for _ in 0..50 {
            svgd_step(&m, &mut a, &pol).unwrap();
            ssvgd_step(&m, &mut b, &SliceConfig::identity(1), &pol).unwrap();
        }
        assert_eq!(a.particles, b.particles);
    }

    #[test]
    fn symmetric_particles_stay_symmetric() {
        let m = gaussian(1);
        let x = Matrix::from_rows(&[vec![-2.0], vec![-0.5], vec![0.5], vec![2.0]]).unwrap();
        let mut e = ParticleEnsemble::new(x, 0.1).unwrap();
        for _ in 0..20 {
            svgd_step(&m, &mut e, &BandwidthPolicy::gof()).unwrap();
        }
        let p = e.particles.as_slice();
        assert!((p[0] + p[3]).abs() < 1e-12 && (p[1] + p[2]).abs() < 1e-12);
    }

    #[test]
    fn low_dimensional_svgd_recovers_moments() {
        let m = gaussian(2);
        let mut rng = Rng::new(5);
        let e = ParticleEnsemble::new(particles(100, 2, 2.0, 2f64.sqrt(), &mut rng), 0.1).unwrap();
        let e = run_svgd(&m, e, &SamplerConfig::default(), 2000).unwrap();
        for mu in e.particles.column_means() {
            assert!(mu.abs() < 0.1, "mean {mu}");
        }
        assert!((e.average_variance() - 1.0).abs() < 0.15, "var {}", e.average_variance());
    }

    #[test]
    fn fixed_point_at_the_target() {
        // Each φ(x_i) is a mean of N kernel terms; at exact draws from p it
        // should sit within a few of its own standard errors of zero.
        let m = gaussian(2);
        let x = m.sample(2000, &mut Rng::new(6)).unwrap();
        let s = m.score_matrix(&x);
        let pol = BandwidthPolicy::gof();
        let phi = svgd_direction(&x, &s, &pol, 1.0).unwrap();
        let s2 = pol.resolve_rows(&x).unwrap().get().powi(2);
        let n = x.rows();
        let (mut norm_sum, mut se_sum) = (0.0, 0.0);
        for i in (0..n).step_by(40) {
            let mut var = [0.0; 2];
            for c in 0..2 {
                let terms: Vec<f64> = (0..n)
                    .map(|j| {
                        let k = (-0.5 * sq_dist(x.row(i), x.row(j)) / s2).exp();
                        s[(j, c)] * k + (x[(i, c)] - x[(j, c)]) / s2 * k
                    })
                    .collect();
                let mean = terms.iter().sum::<f64>() / n as f64;
                var[c] = terms.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
                assert!((mean - phi[(i, c)]).abs() < 1e-12);
            }
            norm_sum += (phi[(i, 0)].powi(2) + phi[(i, 1)].powi(2)).sqrt();
            se_sum += ((var[0] + var[1]) / n as f64).sqrt();
        }
        assert!(norm_sum < 4.0 * se_sum, "{norm_sum} vs {se_sum}");
    }

    #[test]
    fn parf_degenerate_cases() {
        let pol = BandwidthPolicy::gof();
        let one = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert_eq!(parf(&one, ParfMode::Svgd, None, &pol).unwrap(), 0.0);
        let two = Matrix::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
        assert_eq!(parf(&two, ParfMode::Svgd, None, &pol).unwrap(), 0.0);
        assert_eq!(parf(&two, ParfMode::Ssvgd, Some(&SliceConfig::identity(2)), &pol).unwrap(), 0.0);
        assert!(parf(&two, ParfMode::Ssvgd, None, &pol).is_err());
    }

    #[test]
    fn parf_two_points_by_hand() {
        // x = ±1 in 1-D: σ = 2, k = exp(-4/8), force on each = (1/2)·2/4·k.
        let x = Matrix::from_rows(&[vec![-1.0], vec![1.0]]).unwrap();
        let got = parf(&x, ParfMode::Svgd, None, &BandwidthPolicy::gof()).unwrap();
        assert!((got - 0.25 * (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn schedule_every_k() {
        let m = gaussian(3);
        let mut rng = Rng::new(7);
        let e = ParticleEnsemble::new(particles(20, 3, 1.0, 1.0, &mut rng), 0.05).unwrap();
        let mut cfg = SamplerConfig::default();
        cfg.schedule.every = 10;
        cfg.adam = AdamConfig::default().with_lr(0.05);
        let mut s = SlicedSvgd::new(e, SliceConfig::random_g(3, &mut rng), cfg).unwrap();
        let mut last = s.slices().clone();
        for it in 1..=30 {
            s.step(&m).unwrap();
            if it % 10 == 0 {
                assert_ne!(s.slices(), &last);
                last = s.slices().clone();
            } else {
                assert_eq!(s.slices(), &last);
            }
        }
        assert_eq!(s.slice_updates(), 3);
    }

    #[test]
    fn staleness_suppresses_updates() {
        let m = gaussian(2);
        let mut rng = Rng::new(8);
        let e = ParticleEnsemble::new(particles(10, 2, 0.0, 1.0, &mut rng), 1e-4).unwrap();
        let mut cfg = SamplerConfig::default();
        cfg.schedule.staleness = Some(1.0);
        let mut s = SlicedSvgd::new(e, SliceConfig::random_g(2, &mut rng), cfg).unwrap();
        s.run(&m, 20).unwrap();
        assert_eq!(s.slice_updates(), 0);
    }

    #[test]
    fn slice_update_ascends() {
        let mut ok = 0;
        for seed in 0..20 {
            let mut rng = Rng::new(seed);
            let m = gaussian(4);
            let x = particles(40, 4, 0.5, 1.5, &mut rng);
            let init = SliceConfig::random_g(4, &mut rng);
            let pol = BandwidthPolicy::gof();
            let before = sksd_vstat(&m, &x, &init, &pol).unwrap().value;
            let mut t = SliceTrainer::new(init, AdamConfig::default().with_lr(0.01), pol);
            update_slices_for_sampler(&m, &x, &mut t, 5).unwrap();
            let after = sksd_vstat(&m, &x, t.slices(), &pol).unwrap().value;
            ok += usize::from(after >= before - 1e-9);
        }
        assert!(ok >= 18, "{ok}/20");
    }

    #[test]
    fn diagnostics_are_recorded() {
        let m = gaussian(2);
        let mut rng = Rng::new(9);
        let e = ParticleEnsemble::new(particles(10, 2, 0.0, 1.0, &mut rng), 0.1).unwrap();
        let cfg = SamplerConfig { diagnostics_every: 5, ..SamplerConfig::default() };
        let e = run_svgd(&m, e, &cfg, 20).unwrap();
        assert_eq!(e.history.iter().map(|d| d.iter).collect::<Vec<_>>(), vec![5, 10, 15, 20]);
    }

    #[test]
    fn non_finite_update_names_the_particle() {
        let m = gaussian(1);
        let x = Matrix::from_rows(&[vec![0.0], vec![1e150]]).unwrap();
        let mut e = ParticleEnsemble::new(x, 1e200).unwrap();
        let err = svgd_step(&m, &mut e, &BandwidthPolicy::gof()).unwrap_err();
        assert!(matches!(err, Error::NonFinite { what: "particles", index: 0 }));
    }
}
