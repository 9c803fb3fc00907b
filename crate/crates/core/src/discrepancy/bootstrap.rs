use crate::error::{Error, Result};
use crate::math::{multinomial_bootstrap_weights, Matrix, Rng};

/// Bootstrap draws `Σ_{i≠j} (w_i - 1/N)(w_j - 1/N) H_ij` with multinomial
/// weights `w`, evaluated as `vᵀHv - Σ_i v_i² H_ii` for `v = w - 1/N`.
pub fn bootstrap_null_samples(h: &Matrix, m: usize, rng: &mut Rng) -> Result<Vec<f64>> {
    let n = h.rows();
    if h.cols() != n {
        return Err(Error::DimensionMismatch { expected: n, got: h.cols() });
    }
    if m == 0 {
        return Err(Error::param("bootstrap_samples", "must be at least 1"));
    }
    if n == 0 {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    let inv_n = 1.0 / n as f64;
    let mut out = Vec::with_capacity(m);
    let mut v = vec![0.0; n];
    for _ in 0..m {
        let w = multinomial_bootstrap_weights(n, rng)?;
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi - inv_n;
        }
        let mut total = 0.0;
        for i in 0..n {
            let vi = v[i];
            if vi == 0.0 {
                continue;
            }
            let row = h.row(i);
            let mut acc = 0.0;
            for (j, (hij, vj)) in row.iter().zip(&v).enumerate() {
                if j != i {
                    acc += hij * vj;
                }
            }
            total += vi * acc;
        }
        out.push(total);
    }
    Ok(out)
}
