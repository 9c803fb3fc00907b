//! Pairwise kernel Stein terms.

use crate::error::{Error, Result};
use crate::math::{dot, norm, Bandwidth};
use crate::targets::Score;

/// Tolerance on `‖r‖ = ‖g‖ = 1`.
pub const UNIT_NORM_TOL: f64 = 1e-10;

/// `k(a, b) = exp(-(a - b)² / (2σ²))` and its derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rbf1d {
    pub k: f64,
    pub dk_da: f64,
    pub dk_db: f64,
    pub d2k_dadb: f64,
}

pub fn rbf_1d(a: f64, b: f64, sigma: Bandwidth) -> Rbf1d {
    let inv_s2 = 1.0 / (sigma.get() * sigma.get());
    let d = a - b;
    let k = (-0.5 * d * d * inv_s2).exp();
    let dk_da = -d * inv_s2 * k;
    Rbf1d { k, dk_da, dk_db: -dk_da, d2k_dadb: (inv_s2 - d * d * inv_s2 * inv_s2) * k }
}

/// `h` for one unordered pair given projections `a = xᵀg`, score
/// projections `t = rᵀs(x)`, `c = rᵀg` and `1/σ²`.
#[inline]
pub(crate) fn h_pair(ai: f64, aj: f64, ti: f64, tj: f64, c: f64, inv_s2: f64) -> f64 {
    let d = ai - aj;
    let k = (-0.5 * d * d * inv_s2).exp();
    k * (ti * tj + c * d * (ti - tj) * inv_s2 + c * c * (inv_s2 - d * d * inv_s2 * inv_s2))
}

pub(crate) fn check_unit(v: &[f64], what: &'static str) -> Result<()> {
    let n = norm(v);
    if (n - 1.0).abs() > UNIT_NORM_TOL || !n.is_finite() {
        return Err(Error::NotUnitNorm { what, norm: n });
    }
    Ok(())
}

/// KSD pair kernel `u_p(x, y)` with the multivariate RBF kernel.
pub fn ksd_up(model: &impl Score, x: &[f64], y: &[f64], sigma: Bandwidth) -> f64 {
    let sx = model.score(x);
    let sy = model.score(y);
    ksd_up_from_scores(x, y, &sx, &sy, 1.0 / (sigma.get() * sigma.get()))
}

#[inline]
pub(crate) fn ksd_up_from_scores(x: &[f64], y: &[f64], sx: &[f64], sy: &[f64], inv_s2: f64) -> f64 {
    let mut r2 = 0.0;
    let mut ss = 0.0;
    let mut sdiff = 0.0;
    for d in 0..x.len() {
        let diff = x[d] - y[d];
        r2 += diff * diff;
        ss += sx[d] * sy[d];
        sdiff += (sx[d] - sy[d]) * diff;
    }
    let k = (-0.5 * r2 * inv_s2).exp();
    let dim = x.len() as f64;
    k * (ss + sdiff * inv_s2 + dim * inv_s2 - r2 * inv_s2 * inv_s2)
}

/// Sliced pair kernel `h_{p,r,g}(x, y)`.
pub fn h_slice(model: &impl Score, x: &[f64], y: &[f64], r: &[f64], g: &[f64], sigma: Bandwidth) -> Result<f64> {
    check_unit(r, "r")?;
    check_unit(g, "g")?;
    let sx = model.score(x);
    let sy = model.score(y);
    let inv_s2 = 1.0 / (sigma.get() * sigma.get());
    Ok(h_pair(dot(x, g), dot(y, g), dot(r, &sx), dot(r, &sy), dot(r, g), inv_s2))
}

/// Sliced Stein feature `ξ_{p,r,g}(x, z)` evaluated at a projected point `z`.
pub fn xi_slice(model: &impl Score, x: &[f64], z: f64, r: &[f64], g: &[f64], sigma: Bandwidth) -> Result<f64> {
    check_unit(r, "r")?;
    check_unit(g, "g")?;
    let kern = rbf_1d(dot(x, g), z, sigma);
    let t = dot(r, &model.score(x));
    Ok(t * kern.k + dot(r, g) * kern.dk_da)
}
