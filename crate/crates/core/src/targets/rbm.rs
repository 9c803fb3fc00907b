//! Gaussian-Bernoulli RBM with `±1` hidden units.
//!
//! Energy `E(x, h) = -xᵀBh - b_vᵀx - b_hᵀh + ‖x‖²/2`. Summing out `h` gives
//! `log p(x) = b_vᵀx - ‖x‖²/2 + Σ_j log cosh((Bᵀx + b_h)_j) + C`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{dot, Matrix, Rng};

#[derive(Clone, Debug)]
pub struct Rbm {
    b: Matrix,
    b_v: Vec<f64>,
    b_h: Vec<f64>,
}

/// One chain's joint state.
#[derive(Clone, Debug, PartialEq)]
pub struct RbmState {
    pub visible: Vec<f64>,
    pub hidden: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GibbsConfig {
    pub n_chains: usize,
    pub burn_in: usize,
    #[serde(default = "one")]
    pub thinning: usize,
    #[serde(default = "one")]
    pub samples_per_chain: usize,
}

fn one() -> usize {
    1
}

impl GibbsConfig {
    pub fn new(n_chains: usize, burn_in: usize) -> Self {
        GibbsConfig { n_chains, burn_in, thinning: 1, samples_per_chain: 1 }
    }

    pub fn total_sweeps(&self) -> usize {
        self.burn_in + self.thinning * self.samples_per_chain
    }

    fn validate(&self) -> Result<()> {
        if self.n_chains == 0 {
            return Err(Error::param("n_chains", "must be at least 1"));
        }
        if self.thinning == 0 {
            return Err(Error::param("thinning", "must be at least 1"));
        }
        if self.samples_per_chain == 0 {
            return Err(Error::param("samples_per_chain", "must be at least 1"));
        }
        Ok(())
    }
}

/// `log cosh(u)` without overflow.
fn log_cosh(u: f64) -> f64 {
    let a = u.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

impl Rbm {
    pub fn new(b: Matrix, b_v: Vec<f64>, b_h: Vec<f64>) -> Result<Self> {
        if b.rows() != b_v.len() {
            return Err(Error::DimensionMismatch { expected: b.rows(), got: b_v.len() });
        }
        if b.cols() != b_h.len() {
            return Err(Error::DimensionMismatch { expected: b.cols(), got: b_h.len() });
        }
        if b.rows() == 0 {
            return Err(Error::param("B", "visible dimension must be at least 1"));
        }
        if let Some(index) = b.first_non_finite() {
            return Err(Error::NonFinite { what: "B", index });
        }
        if let Some(index) = b_v.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "b_v", index });
        }
        if let Some(index) = b_h.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "b_h", index });
        }
        Ok(Rbm { b, b_v, b_h })
    }

    /// `B_ij ~ weight_scale · N(0,1)`, biases `~ bias_scale · N(0,1)`.
    pub fn random(d: usize, h: usize, weight_scale: f64, bias_scale: f64, rng: &mut Rng) -> Result<Self> {
        let b = Matrix::from_fn(d, h, |_, _| weight_scale * rng.normal());
        let b_v = (0..d).map(|_| bias_scale * rng.normal()).collect();
        let b_h = (0..h).map(|_| bias_scale * rng.normal()).collect();
        Rbm::new(b, b_v, b_h)
    }

    pub fn visible_dim(&self) -> usize {
        self.b.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.b.cols()
    }

    pub fn weights(&self) -> &Matrix {
        &self.b
    }

    pub fn visible_bias(&self) -> &[f64] {
        &self.b_v
    }

    pub fn hidden_bias(&self) -> &[f64] {
        &self.b_h
    }

    /// `Bᵀx + b_h`
    fn hidden_field(&self, x: &[f64]) -> Vec<f64> {
        let mut u = self.b.matvec_t(x);
        for (ui, c) in u.iter_mut().zip(&self.b_h) {
            *ui += c;
        }
        u
    }

    pub fn log_density_unnorm(&self, x: &[f64]) -> f64 {
        let u = self.hidden_field(x);
        dot(&self.b_v, x) - 0.5 * dot(x, x) + u.into_iter().map(log_cosh).sum::<f64>()
    }

    pub(super) fn score_into(&self, x: &[f64], out: &mut [f64]) {
        let t: Vec<f64> = self.hidden_field(x).into_iter().map(f64::tanh).collect();
        let bt = self.b.matvec(&t);
        for (((o, bv), xi), v) in out.iter_mut().zip(&self.b_v).zip(x).zip(bt) {
            *o = bv - xi + v;
        }
    }

    pub fn perturbed(&self, noise_level: f64, rng: &mut Rng) -> Result<Rbm> {
        if !(noise_level >= 0.0 && noise_level.is_finite()) {
            return Err(Error::param("noise_level", format!("must be non-negative, got {noise_level}")));
        }
        let mut b = self.b.clone();
        for v in b.as_mut_slice() {
            *v += noise_level * rng.normal();
        }
        Rbm::new(b, self.b_v.clone(), self.b_h.clone())
    }

    /// Start a chain at `x ~ N(b_v, I)`, `h ~ Uniform{±1}`.
    pub fn initial_state(&self, rng: &mut Rng) -> RbmState {
        let visible = self.b_v.iter().map(|m| m + rng.normal()).collect();
        let hidden = (0..self.hidden_dim()).map(|_| if rng.bernoulli(0.5) { 1.0 } else { -1.0 }).collect();
        RbmState { visible, hidden }
    }

    /// One block-Gibbs sweep: `h | x`, then `x | h`.
    pub fn step(&self, state: &mut RbmState, rng: &mut Rng) {
        self.sweep(&mut state.visible, &mut state.hidden, rng);
    }

    fn sweep(&self, x: &mut [f64], h: &mut [f64], rng: &mut Rng) {
        let u = self.hidden_field(x);
        for (hj, uj) in h.iter_mut().zip(u) {
            *hj = if rng.uniform() < sigmoid(2.0 * uj) { 1.0 } else { -1.0 };
        }
        let mean = self.b.matvec(h);
        for ((xi, m), bv) in x.iter_mut().zip(mean).zip(&self.b_v) {
            *xi = m + bv + rng.normal();
        }
    }

    /// Parallel block-Gibbs chains.
    ///
    /// `callback(sweep, visible)` runs after every sweep with the current
    /// `n_chains × D` visible states. Kept samples are ordered sweep-major.
    pub fn gibbs(
        &self,
        config: &GibbsConfig,
        rng: &mut Rng,
        mut callback: impl FnMut(usize, &Matrix) -> Result<()>,
    ) -> Result<Matrix> {
        config.validate()?;
        let (d, h) = (self.visible_dim(), self.hidden_dim());
        let n = config.n_chains;
        let mut x = Matrix::zeros(n, d);
        let mut hid = Matrix::zeros(n, h);
        for i in 0..n {
            let s = self.initial_state(rng);
            x.row_mut(i).copy_from_slice(&s.visible);
            hid.row_mut(i).copy_from_slice(&s.hidden);
        }
        let mut kept = Vec::with_capacity(n * d * config.samples_per_chain);
        for sweep in 0..config.total_sweeps() {
            for i in 0..n {
                self.sweep(x.row_mut(i), hid.row_mut(i), rng);
            }
            callback(sweep, &x)?;
            let after = sweep + 1;
            if after > config.burn_in && (after - config.burn_in) % config.thinning == 0 {
                kept.extend_from_slice(x.as_slice());
            }
        }
        Matrix::from_vec(n * config.samples_per_chain, d, kept)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decoupled_model_is_standard_normal() {
        let rbm = Rbm::new(Matrix::zeros(3, 2), vec![0.0; 3], vec![0.0; 2]).unwrap();
        let mut rng = Rng::new(1);
        let x = rbm.gibbs(&GibbsConfig::new(5000, 5), &mut rng, |_, _| Ok(())).unwrap();
        let se = (1.0 / 5000f64).sqrt();
        for m in x.column_means() {
            assert!(m.abs() < 3.0 * se, "{m}");
        }
    }

    #[test]
    fn two_state_mixture_moments() {
        // D = H = 1: x is a mixture of N(Bh + b_v, 1) over h = ±1 with
        // weights ∝ exp(b_h h + (Bh + b_v)² / 2).
        let (bw, bv, bh) = (0.8, 0.3, -0.4);
        let rbm = Rbm::new(Matrix::from_vec(1, 1, vec![bw]).unwrap(), vec![bv], vec![bh]).unwrap();
        let comps: Vec<(f64, f64)> = [1.0, -1.0]
            .iter()
            .map(|&h| {
                let mu = bw * h + bv;
                ((bh * h + 0.5 * mu * mu).exp(), mu)
            })
            .collect();
        let z: f64 = comps.iter().map(|c| c.0).sum();
        let mean: f64 = comps.iter().map(|(w, mu)| w / z * mu).sum();
        let second: f64 = comps.iter().map(|(w, mu)| w / z * (1.0 + mu * mu)).sum();
        let var = second - mean * mean;

        let n = 40_000;
        let mut rng = Rng::new(2);
        let x = rbm.gibbs(&GibbsConfig::new(n, 30), &mut rng, |_, _| Ok(())).unwrap();
        let m_hat = x.column_means()[0];
        let v_hat = x.column_variances()[0];
        assert!((m_hat - mean).abs() < 3.0 * (var / n as f64).sqrt(), "{m_hat} vs {mean}");
        // Var of the sample variance ≈ (μ4 - σ⁴)/n; bound μ4 loosely by 4σ⁴.
        assert!((v_hat - var).abs() < 3.0 * (3.0 * var * var / n as f64).sqrt(), "{v_hat} vs {var}");
    }

    #[test]
    fn gibbs_bookkeeping() {
        let mut rng = Rng::new(3);
        let rbm = Rbm::random(4, 3, 0.5, 1.0, &mut rng).unwrap();
        let cfg = GibbsConfig { n_chains: 7, burn_in: 4, thinning: 3, samples_per_chain: 2 };
        let mut calls = Vec::new();
        let x = rbm
            .gibbs(&cfg, &mut rng, |s, v| {
                assert_eq!(v.shape(), (7, 4));
                calls.push(s);
                Ok(())
            })
            .unwrap();
        assert_eq!(x.shape(), (14, 4));
        assert_eq!(calls, (0..10).collect::<Vec<_>>());
        let bad = GibbsConfig { thinning: 0, ..cfg };
        assert!(rbm.gibbs(&bad, &mut rng, |_, _| Ok(())).is_err());
    }

    #[test]
    fn gibbs_is_deterministic() {
        let rbm = Rbm::random(5, 4, 0.5, 1.0, &mut Rng::new(9)).unwrap();
        let cfg = GibbsConfig::new(10, 20);
        let a = rbm.gibbs(&cfg, &mut Rng::new(4), |_, _| Ok(())).unwrap();
        let b = rbm.gibbs(&cfg, &mut Rng::new(4), |_, _| Ok(())).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn callback_error_stops_sampling() {
        let rbm = Rbm::random(2, 2, 0.5, 1.0, &mut Rng::new(9)).unwrap();
        let r = rbm.gibbs(&GibbsConfig::new(2, 10), &mut Rng::new(1), |s, _| {
            if s == 3 {
                Err(Error::param("callback", "stop"))
            } else {
                Ok(())
            }
        });
        assert!(r.is_err());
    }

    #[test]
    fn perturbation_magnitude() {
        let mut rng = Rng::new(11);
        let rbm = Rbm::random(50, 40, 1.0, 1.0, &mut rng).unwrap();
        assert_eq!(rbm.perturbed(0.0, &mut rng).unwrap().b, rbm.b);
        let p = rbm.perturbed(0.01, &mut Rng::new(5)).unwrap();
        let mut diff = p.b.clone();
        diff.add_assign(&rbm.b.scaled(-1.0));
        let expect = 0.01 * (2000f64).sqrt();
        assert!((diff.frobenius_norm() - expect).abs() < 0.2 * expect);
        let q = rbm.perturbed(0.01, &mut Rng::new(5)).unwrap();
        assert_eq!(p.b, q.b);
        assert!(rbm.perturbed(-1.0, &mut rng).is_err());
    }

    #[test]
    fn log_cosh_is_stable() {
        assert!((log_cosh(0.3) - 0.3f64.cosh().ln()).abs() < 1e-15);
        assert!((log_cosh(-800.0) - (800.0 - std::f64::consts::LN_2)).abs() < 1e-9);
    }
}
