//! Target distributions exposed through their score `∇ₓ log p(x)`.
//!
//! Laplace and ICA scores use the subgradient `sign(0) = 0` at the
//! non-differentiable points.

mod json;
mod rbm;

pub use json::ModelDoc;
pub use rbm::{GibbsConfig, Rbm, RbmState};

use std::f64::consts::LN_2;

use crate::error::{Error, Result};
use crate::math::{cholesky, dot, Lu, Matrix, Rng};

/// Anything that can evaluate a score function.
pub trait Score {
    fn dim(&self) -> usize;

    /// Write `∇ₓ log p(x)` into `out`.
    fn score_into(&self, x: &[f64], out: &mut [f64]);

    fn score(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.score_into(x, &mut out);
        out
    }

    /// Scores of every row of `x`.
    fn score_matrix(&self, x: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(x.rows(), x.cols());
        for i in 0..x.rows() {
            self.score_into(x.row(i), out.row_mut(i));
        }
        out
    }
}

impl<S: Score + ?Sized> Score for &S {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn score_into(&self, x: &[f64], out: &mut [f64]) {
        (**self).score_into(x, out)
    }
}

#[inline]
fn sign0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[derive(Clone, Debug)]
pub enum Covariance {
    Diag(Vec<f64>),
    Full { cov: Matrix, precision: Matrix, chol: Matrix, log_det: f64 },
}

#[derive(Clone, Debug)]
pub struct Gaussian {
    mean: Vec<f64>,
    cov: Covariance,
}

impl Gaussian {
    pub fn diag(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        if mean.len() != var.len() {
            return Err(Error::DimensionMismatch { expected: mean.len(), got: var.len() });
        }
        if mean.is_empty() {
            return Err(Error::param("mean", "dimension must be at least 1"));
        }
        if let Some(i) = var.iter().position(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::param("cov_diag", format!("entry {i} must be positive")));
        }
        if let Some(index) = mean.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "mean", index });
        }
        Ok(Gaussian { mean, cov: Covariance::Diag(var) })
    }

    pub fn standard(dim: usize) -> Result<Self> {
        Gaussian::diag(vec![0.0; dim], vec![1.0; dim])
    }

    /// `N(0, diag(first_var, 1, …, 1))`.
    pub fn diffusion(dim: usize, first_var: f64) -> Result<Self> {
        let mut var = vec![1.0; dim];
        if let Some(v) = var.first_mut() {
            *v = first_var;
        }
        Gaussian::diag(vec![0.0; dim], var)
    }

    pub fn full(mean: Vec<f64>, cov: Matrix) -> Result<Self> {
        let d = mean.len();
        if cov.shape() != (d, d) {
            return Err(Error::DimensionMismatch { expected: d, got: cov.rows() });
        }
        if d == 0 {
            return Err(Error::param("mean", "dimension must be at least 1"));
        }
        for i in 0..d {
            for j in 0..i {
                let (a, b) = (cov[(i, j)], cov[(j, i)]);
                if (a - b).abs() > 1e-10 * (1.0 + a.abs().max(b.abs())) {
                    return Err(Error::param("cov", "must be symmetric"));
                }
            }
        }
        let chol = cholesky(&cov).map_err(|_| Error::param("cov", "must be positive definite"))?;
        let log_det = 2.0 * (0..d).map(|i| chol[(i, i)].ln()).sum::<f64>();
        let precision = Lu::factor(&cov)?.inverse();
        Ok(Gaussian { mean, cov: Covariance::Full { cov, precision, chol, log_det } })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn covariance(&self) -> &Covariance {
        &self.cov
    }

    pub fn covariance_matrix(&self) -> Matrix {
        match &self.cov {
            Covariance::Diag(v) => Matrix::diag(v),
            Covariance::Full { cov, .. } => cov.clone(),
        }
    }

    pub fn log_det_cov(&self) -> f64 {
        match &self.cov {
            Covariance::Diag(v) => v.iter().map(|x| x.ln()).sum(),
            Covariance::Full { log_det, .. } => *log_det,
        }
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let c: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        match &self.cov {
            Covariance::Diag(v) => -0.5 * c.iter().zip(v).map(|(ci, vi)| ci * ci / vi).sum::<f64>(),
            Covariance::Full { precision, .. } => -0.5 * dot(&c, &precision.matvec(&c)),
        }
    }

    fn sample_into(&self, rng: &mut Rng, out: &mut [f64]) {
        match &self.cov {
            Covariance::Diag(v) => {
                for ((o, m), vi) in out.iter_mut().zip(&self.mean).zip(v) {
                    *o = m + vi.sqrt() * rng.normal();
                }
            }
            Covariance::Full { chol, .. } => {
                let z = rng.normal_vec(self.mean.len());
                let lz = chol.matvec(&z);
                for ((o, m), l) in out.iter_mut().zip(&self.mean).zip(lz) {
                    *o = m + l;
                }
            }
        }
    }
}

/// Factorised Laplace with common scale `b`.
#[derive(Clone, Debug)]
pub struct Laplace {
    location: Vec<f64>,
    scale: f64,
}

impl Laplace {
    pub fn new(location: Vec<f64>, scale: f64) -> Result<Self> {
        if location.is_empty() {
            return Err(Error::param("mean", "dimension must be at least 1"));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::param("scale", format!("must be positive, got {scale}")));
        }
        Ok(Laplace { location, scale })
    }

    pub fn centred(dim: usize, scale: f64) -> Result<Self> {
        Laplace::new(vec![0.0; dim], scale)
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }
}

/// Factorised Student-t with unit scale.
#[derive(Clone, Debug)]
pub struct StudentT {
    location: Vec<f64>,
    dof: f64,
}

impl StudentT {
    pub fn new(location: Vec<f64>, dof: f64) -> Result<Self> {
        if location.is_empty() {
            return Err(Error::param("mean", "dimension must be at least 1"));
        }
        if !(dof > 2.0 && dof.is_finite()) {
            return Err(Error::param("dof", format!("must exceed 2, got {dof}")));
        }
        Ok(StudentT { location, dof })
    }

    pub fn centred(dim: usize, dof: f64) -> Result<Self> {
        StudentT::new(vec![0.0; dim], dof)
    }

    pub fn dof(&self) -> f64 {
        self.dof
    }
}

/// `x = W z`, `z_d ~ Laplace(0, 1)`.
#[derive(Clone, Debug)]
pub struct Ica {
    w: Matrix,
    w_inv: Matrix,
    log_abs_det: f64,
}

impl Ica {
    pub fn new(w: Matrix) -> Result<Self> {
        if w.rows() != w.cols() {
            return Err(Error::DimensionMismatch { expected: w.rows(), got: w.cols() });
        }
        if w.rows() == 0 {
            return Err(Error::param("W", "dimension must be at least 1"));
        }
        if let Some(index) = w.first_non_finite() {
            return Err(Error::NonFinite { what: "W", index });
        }
        let lu = Lu::factor(&w)?;
        let log_abs_det = lu.log_abs_det();
        let w_inv = lu.inverse();
        if !w_inv.is_finite() || !log_abs_det.is_finite() {
            return Err(Error::Singular);
        }
        Ok(Ica { w, w_inv, log_abs_det })
    }

    pub fn w(&self) -> &Matrix {
        &self.w
    }

    pub fn w_inv(&self) -> &Matrix {
        &self.w_inv
    }

    pub fn log_abs_det(&self) -> f64 {
        self.log_abs_det
    }

    /// `z = W⁻¹ x`
    pub fn unmix(&self, x: &[f64]) -> Vec<f64> {
        self.w_inv.matvec(x)
    }

    /// Normalised log density `Σ_d log Lap(z_d; 0, 1) − log|det W|`.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        let z = self.unmix(x);
        z.iter().map(|zd| -LN_2 - zd.abs()).sum::<f64>() - self.log_abs_det
    }

    fn score_into(&self, x: &[f64], out: &mut [f64]) {
        let s: Vec<f64> = self.unmix(x).into_iter().map(sign0).collect();
        // −W⁻ᵀ sign(z)
        let v = self.w_inv.matvec_t(&s);
        for (o, vi) in out.iter_mut().zip(v) {
            *o = -vi;
        }
    }
}

#[derive(Clone, Debug)]
pub enum ScoreModel {
    Gaussian(Gaussian),
    Laplace(Laplace),
    StudentT(StudentT),
    Rbm(Rbm),
    Ica(Ica),
}

impl ScoreModel {
    pub fn variant_name(&self) -> &'static str {
        match self {
            ScoreModel::Gaussian(_) => "gaussian",
            ScoreModel::Laplace(_) => "laplace",
            ScoreModel::StudentT(_) => "student_t",
            ScoreModel::Rbm(_) => "rbm",
            ScoreModel::Ica(_) => "ica",
        }
    }

    pub fn standard_gaussian(dim: usize) -> Result<Self> {
        Ok(ScoreModel::Gaussian(Gaussian::standard(dim)?))
    }

    /// Log density up to an additive constant (the ICA variant is normalised).
    pub fn log_density_unnorm(&self, x: &[f64]) -> f64 {
        match self {
            ScoreModel::Gaussian(g) => g.log_density(x),
            ScoreModel::Laplace(l) => {
                -x.iter().zip(&l.location).map(|(a, m)| (a - m).abs()).sum::<f64>() / l.scale
            }
            ScoreModel::StudentT(t) => {
                let nu = t.dof;
                x.iter()
                    .zip(&t.location)
                    .map(|(a, m)| -0.5 * (nu + 1.0) * (1.0 + (a - m) * (a - m) / nu).ln())
                    .sum()
            }
            ScoreModel::Rbm(r) => r.log_density_unnorm(x),
            ScoreModel::Ica(ica) => ica.log_density(x),
        }
    }

    /// `n` i.i.d. exact draws. RBMs need [`Rbm::gibbs`].
    pub fn sample(&self, n: usize, rng: &mut Rng) -> Result<Matrix> {
        let d = self.dim();
        let mut out = Matrix::zeros(n, d);
        match self {
            ScoreModel::Gaussian(g) => {
                for i in 0..n {
                    g.sample_into(rng, out.row_mut(i));
                }
            }
            ScoreModel::Laplace(l) => {
                for v in out.as_mut_slice().iter_mut() {
                    *v = rng.laplace(l.scale);
                }
                for i in 0..n {
                    for (v, m) in out.row_mut(i).iter_mut().zip(&l.location) {
                        *v += m;
                    }
                }
            }
            ScoreModel::StudentT(t) => {
                for i in 0..n {
                    for (v, m) in out.row_mut(i).iter_mut().zip(&t.location) {
                        *v = m + rng.student_t(t.dof);
                    }
                }
            }
            ScoreModel::Ica(ica) => {
                for i in 0..n {
                    let z: Vec<f64> = (0..d).map(|_| rng.laplace(1.0)).collect();
                    out.row_mut(i).copy_from_slice(&ica.w.matvec(&z));
                }
            }
            ScoreModel::Rbm(_) => return Err(Error::UnsupportedSampler("rbm")),
        }
        Ok(out)
    }

    pub fn as_rbm(&self) -> Result<&Rbm> {
        match self {
            ScoreModel::Rbm(r) => Ok(r),
            other => Err(Error::NotRbm(other.variant_name())),
        }
    }

    /// Block-Gibbs sampling for the RBM variant.
    pub fn rbm_gibbs(
        &self,
        config: &GibbsConfig,
        rng: &mut Rng,
        callback: impl FnMut(usize, &Matrix) -> Result<()>,
    ) -> Result<Matrix> {
        self.as_rbm()?.gibbs(config, rng, callback)
    }

    /// Copy with `B ← B + noise_level · ε`, `ε` i.i.d. standard normal.
    pub fn perturb_rbm(&self, noise_level: f64, rng: &mut Rng) -> Result<ScoreModel> {
        Ok(ScoreModel::Rbm(self.as_rbm()?.perturbed(noise_level, rng)?))
    }
}

impl Score for ScoreModel {
    fn dim(&self) -> usize {
        match self {
            ScoreModel::Gaussian(g) => g.mean.len(),
            ScoreModel::Laplace(l) => l.location.len(),
            ScoreModel::StudentT(t) => t.location.len(),
            ScoreModel::Rbm(r) => r.visible_dim(),
            ScoreModel::Ica(ica) => ica.w.rows(),
        }
    }

    fn score_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            ScoreModel::Gaussian(g) => match &g.cov {
                Covariance::Diag(v) => {
                    for (((o, a), m), vi) in out.iter_mut().zip(x).zip(&g.mean).zip(v) {
                        *o = -(a - m) / vi;
                    }
                }
                Covariance::Full { precision, .. } => {
                    let c: Vec<f64> = x.iter().zip(&g.mean).map(|(a, m)| a - m).collect();
                    for (o, p) in out.iter_mut().zip(precision.matvec(&c)) {
                        *o = -p;
                    }
                }
            },
            ScoreModel::Laplace(l) => {
                for ((o, a), m) in out.iter_mut().zip(x).zip(&l.location) {
                    *o = -sign0(a - m) / l.scale;
                }
            }
            ScoreModel::StudentT(t) => {
                let nu = t.dof;
                for ((o, a), m) in out.iter_mut().zip(x).zip(&t.location) {
                    let c = a - m;
                    *o = -(nu + 1.0) * c / (nu + c * c);
                }
            }
            ScoreModel::Rbm(r) => r.score_into(x, out),
            ScoreModel::Ica(ica) => ica.score_into(x, out),
        }
    }
}
