//! ICA learning by minimising a Stein discrepancy between data and model.

mod train;

pub use train::{train_ica, IcaCheckpoint, IcaConfig, IcaRun, IcaTrainState, TraceRow};

use crate::discrepancy::{ksd_ustat_score_gradient, sksd_vstat_gradient, BandwidthPolicy, SliceConfig};
use crate::error::{Error, Result};
use crate::math::{condition_number, Matrix, Rng};
use crate::targets::{Ica, Score, ScoreModel};

/// Draw `W` with i.i.d. `N(0, 1/D)` entries until its condition number is at
/// most `D`.
pub fn init_mixing(dim: usize, rng: &mut Rng) -> Result<Matrix> {
    if dim == 0 {
        return Err(Error::param("dim", "must be at least 1"));
    }
    let sd = (1.0 / dim as f64).sqrt();
    for _ in 0..10_000 {
        let w = Matrix::from_fn(dim, dim, |_, _| sd * rng.normal());
        if matches!(condition_number(&w), Ok(c) if c <= dim as f64) {
            return Ok(w);
        }
    }
    Err(Error::param("dim", format!("no well-conditioned {dim}x{dim} draw in 10000 attempts")))
}

/// Data-generating matrix plus train/test samples from it.
#[derive(Clone, Debug)]
pub struct IcaProblem {
    pub w_true: Matrix,
    pub train: Matrix,
    pub test: Matrix,
}

impl IcaProblem {
    pub fn generate(dim: usize, n_train: usize, n_test: usize, rng: &mut Rng) -> Result<Self> {
        let w_true = init_mixing(dim, &mut rng.fork(0))?;
        let model = ScoreModel::Ica(Ica::new(w_true.clone())?);
        let train = model.sample(n_train, &mut rng.fork(1))?;
        let test = model.sample(n_test, &mut rng.fork(2))?;
        Ok(IcaProblem { w_true, train, test })
    }
}

/// Mean negative log-likelihood of `x` under the ICA model with mixing `w`.
pub fn test_nll(w: &Matrix, x: &Matrix) -> Result<f64> {
    if x.rows() == 0 {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    let ica = Ica::new(w.clone())?;
    if x.cols() != ica.w().rows() {
        return Err(Error::DimensionMismatch { expected: ica.w().rows(), got: x.cols() });
    }
    let ll: f64 = x.row_iter().map(|r| ica.log_density(r)).sum();
    Ok(-ll / x.rows() as f64)
}

/// maxSKSD V-statistic of the ICA model with mixing `w` on `x`.
pub fn ica_objective(w: &Matrix, x: &Matrix, slices: &SliceConfig, policy: &BandwidthPolicy) -> Result<f64> {
    Ok(grad_ica_wrt_w(w, x, slices, policy)?.0)
}

/// Value and `∂/∂W` of [`ica_objective`]. `sign(·)` is treated as piecewise
/// constant and bandwidths as fixed.
pub fn grad_ica_wrt_w(w: &Matrix, x: &Matrix, slices: &SliceConfig, policy: &BandwidthPolicy) -> Result<(f64, Matrix)> {
    let ica = Ica::new(w.clone())?;
    let s = ica_scores(&ica, x)?;
    let g = sksd_vstat_gradient(x, &s, slices, policy, true)?;
    let ds = g.scores.ok_or(Error::param("scores", "score gradient missing"))?;
    Ok((g.value, chain_to_w(&ica, x, &ds)))
}

/// KSD U-statistic of the ICA model on `x` and its gradient in `W`.
pub fn grad_ksd_ica_wrt_w(w: &Matrix, x: &Matrix, policy: &BandwidthPolicy) -> Result<(f64, Matrix)> {
    let ica = Ica::new(w.clone())?;
    let s = ica_scores(&ica, x)?;
    let (value, ds) = ksd_ustat_score_gradient(x, &s, policy, None)?;
    Ok((value, chain_to_w(&ica, x, &ds)))
}

fn ica_scores(ica: &Ica, x: &Matrix) -> Result<Matrix> {
    let model = ScoreModel::Ica(ica.clone());
    if x.cols() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), got: x.cols() });
    }
    Ok(model.score_matrix(x))
}

fn sign0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

// With A = W⁻¹ and s_i = −Aᵀ sign(A x_i): ∂V/∂A = −Σ_i sign(A x_i) λ_iᵀ for
// λ_i = ∂V/∂s_i, and dA = −A dW A gives ∂V/∂W = −Aᵀ (∂V/∂A) Aᵀ.
fn chain_to_w(ica: &Ica, x: &Matrix, ds: &Matrix) -> Matrix {
    let a = ica.w_inv();
    let d = a.rows();
    let mut ga = Matrix::zeros(d, d);
    for i in 0..x.rows() {
        let sigma: Vec<f64> = ica.unmix(x.row(i)).into_iter().map(sign0).collect();
        let lam = ds.row(i);
        for (p, sp) in sigma.iter().enumerate() {
            if *sp == 0.0 {
                continue;
            }
            for (q, l) in lam.iter().enumerate() {
                ga[(p, q)] -= sp * l;
            }
        }
    }
    let at = a.transpose();
    // Square matrices of matching size: matmul cannot fail here.
    let inner = at.matmul(&ga).unwrap_or_else(|_| Matrix::zeros(d, d));
    let mut out = inner.matmul(&at).unwrap_or_else(|_| Matrix::zeros(d, d));
    out.scale(-1.0);
    out
}
