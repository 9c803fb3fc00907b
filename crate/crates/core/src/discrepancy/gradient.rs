//! Reverse-mode gradients of the V-statistics. Bandwidths are held fixed.

use rayon::prelude::*;

use super::estimators::{check_inputs, prepare, SliceData};
use super::{BandwidthPolicy, SliceConfig, SliceVariant};
use crate::error::{Error, Result};
use crate::math::{axpy, Bandwidth, Matrix};
use crate::targets::Score;

/// V-statistic value and its gradients.
#[derive(Clone, Debug)]
pub struct VstatGradient {
    pub value: f64,
    pub per_slice: Vec<f64>,
    pub bandwidths: Vec<f64>,
    /// `∂V/∂g_r`, one row per slice.
    pub directions: Matrix,
    /// `∂V/∂r`; present for the rg variant.
    pub basis: Option<Matrix>,
    /// `∂V/∂s(x_i)`, one row per sample; present when requested.
    pub scores: Option<Matrix>,
}

/// Adjoints of one slice's V-statistic with respect to `a`, `t` and `c`.
struct SliceAdjoint {
    value: f64,
    ta: Vec<f64>,
    tt: Vec<f64>,
    tc: f64,
}

fn slice_adjoint(sd: &SliceData) -> SliceAdjoint {
    let n = sd.a.len();
    let inv_s2 = sd.inv_s2();
    let inv_s4 = inv_s2 * inv_s2;
    let (a, t, c) = (&sd.a, &sd.t, sd.c);
    let w_off = 2.0 / (n * n) as f64;
    let w_diag = 1.0 / (n * n) as f64;
    let mut ta = vec![0.0; n];
    let mut tt = vec![0.0; n];
    let mut tc = 0.0;
    let mut value = 0.0;
    for i in 0..n {
        let (ai, ti) = (a[i], t[i]);
        value += w_diag * (ti * ti + c * c * inv_s2);
        tt[i] += w_diag * 2.0 * ti;
        tc += w_diag * 2.0 * c * inv_s2;
        for j in i + 1..n {
            let tj = t[j];
            let d = ai - a[j];
            let k = (-0.5 * d * d * inv_s2).exp();
            let dt = ti - tj;
            let h = k * (ti * tj + c * d * dt * inv_s2 + c * c * (inv_s2 - d * d * inv_s4));
            value += w_off * h;
            let dd = -d * inv_s2 * h + k * (c * dt * inv_s2 - 2.0 * c * c * d * inv_s4);
            ta[i] += w_off * dd;
            ta[j] -= w_off * dd;
            tt[i] += w_off * k * (tj + c * d * inv_s2);
            tt[j] += w_off * k * (ti - c * d * inv_s2);
            tc += w_off * k * (d * dt * inv_s2 + 2.0 * c * (inv_s2 - d * d * inv_s4));
        }
    }
    SliceAdjoint { value, ta, tt, tc }
}

fn ensure_finite(m: &Matrix, what: &'static str) -> Result<()> {
    match m.first_non_finite() {
        Some(index) => Err(Error::NonFinite { what, index }),
        None => Ok(()),
    }
}

/// Gradients of the sliced V-statistic with respect to the directions (and,
/// with `want_scores`, the score rows).
pub fn sksd_vstat_gradient(
    x: &Matrix,
    s: &Matrix,
    slices: &SliceConfig,
    policy: &BandwidthPolicy,
    want_scores: bool,
) -> Result<VstatGradient> {
    if x.rows() == 0 {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    let data = prepare(x, s, slices, policy)?;
    let adj: Vec<SliceAdjoint> = data.par_iter().map(slice_adjoint).collect();
    let m = slices.len();
    let d = slices.dim();
    let mut dg = Matrix::zeros(m, d);
    let want_r = slices.variant() == SliceVariant::Rg;
    let mut dr = want_r.then(|| Matrix::zeros(m, d));
    let mut ds = want_scores.then(|| Matrix::zeros(x.rows(), d));
    for (k, ad) in adj.iter().enumerate() {
        let r = slices.basis().row(k);
        let g = slices.directions().row(k);
        let row = dg.row_mut(k);
        row.copy_from_slice(&x.matvec_t(&ad.ta));
        axpy(ad.tc, r, row);
        if let Some(dr) = dr.as_mut() {
            let row = dr.row_mut(k);
            row.copy_from_slice(&s.matvec_t(&ad.tt));
            axpy(ad.tc, g, row);
        }
        if let Some(ds) = ds.as_mut() {
            for (i, tti) in ad.tt.iter().enumerate() {
                axpy(*tti, r, ds.row_mut(i));
            }
        }
    }
    ensure_finite(&dg, "direction gradient")?;
    if let Some(dr) = &dr {
        ensure_finite(dr, "basis gradient")?;
    }
    if let Some(ds) = &ds {
        ensure_finite(ds, "score gradient")?;
    }
    let per_slice: Vec<f64> = adj.iter().map(|a| a.value).collect();
    Ok(VstatGradient {
        value: per_slice.iter().sum(),
        per_slice,
        bandwidths: data.iter().map(|sd| sd.sigma.get()).collect(),
        directions: dg,
        basis: dr,
        scores: ds,
    })
}

pub fn grad_wrt_directions(model: &impl Score, x: &Matrix, slices: &SliceConfig, policy: &BandwidthPolicy) -> Result<VstatGradient> {
    grad_wrt_directions_from_scores(x, &model.score_matrix(x), slices, policy)
}

pub fn grad_wrt_directions_from_scores(x: &Matrix, s: &Matrix, slices: &SliceConfig, policy: &BandwidthPolicy) -> Result<VstatGradient> {
    sksd_vstat_gradient(x, s, slices, policy, false)
}

/// KSD V-statistic and `∂V/∂s(x_i)`.
pub fn ksd_vstat_score_gradient(
    x: &Matrix,
    s: &Matrix,
    policy: &BandwidthPolicy,
    bandwidth: Option<Bandwidth>,
) -> Result<(f64, Matrix)> {
    check_inputs(x, s, None)?;
    let n = x.rows();
    if n == 0 {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    let sigma = match bandwidth {
        Some(b) => b,
        None => policy.resolve_rows(x)?,
    };
    let inv_s2 = 1.0 / (sigma.get() * sigma.get());
    let dim = x.cols() as f64;
    let scale = 1.0 / (n * n) as f64;
    // ∂u(x_i, x_j)/∂s_i = k [s_j + (x_i - x_j)/σ²]; u is symmetric, so every
    // ordered pair contributes twice.
    let rows: Vec<(f64, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let (xi, si) = (x.row(i), s.row(i));
            let mut grad = vec![0.0; x.cols()];
            let mut value = 0.0;
            for j in 0..n {
                let (xj, sj) = (x.row(j), s.row(j));
                let mut r2 = 0.0;
                let mut ss = 0.0;
                let mut sdiff = 0.0;
                for d in 0..xi.len() {
                    let diff = xi[d] - xj[d];
                    r2 += diff * diff;
                    ss += si[d] * sj[d];
                    sdiff += (si[d] - sj[d]) * diff;
                }
                let k = (-0.5 * r2 * inv_s2).exp();
                value += k * (ss + sdiff * inv_s2 + dim * inv_s2 - r2 * inv_s2 * inv_s2);
                for d in 0..xi.len() {
                    grad[d] += 2.0 * k * (sj[d] + (xi[d] - xj[d]) * inv_s2);
                }
            }
            (value, grad)
        })
        .collect();
    let mut ds = Matrix::zeros(n, x.cols());
    let mut value = 0.0;
    for (i, (v, g)) in rows.into_iter().enumerate() {
        value += v;
        for (o, gi) in ds.row_mut(i).iter_mut().zip(g) {
            *o = scale * gi;
        }
    }
    ensure_finite(&ds, "score gradient")?;
    Ok((value * scale, ds))
}

/// Value and score gradient of the KSD U-statistic. The diagonal term
/// `u(x_i, x_i) = |s_i|² + D/σ²` is removed from the V-statistic sums.
pub fn ksd_ustat_score_gradient(
    x: &Matrix,
    s: &Matrix,
    policy: &BandwidthPolicy,
    bandwidth: Option<Bandwidth>,
) -> Result<(f64, Matrix)> {
    let n = x.rows();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    let sigma = match bandwidth {
        Some(b) => b,
        None => policy.resolve_rows(x)?,
    };
    let (v, mut ds) = ksd_vstat_score_gradient(x, s, policy, Some(sigma))?;
    let nf = n as f64;
    let dim = x.cols() as f64;
    let inv_s2 = 1.0 / (sigma.get() * sigma.get());
    let norm = 1.0 / (nf * (nf - 1.0));
    let mut diag = 0.0;
    for i in 0..n {
        let si = s.row(i).to_vec();
        diag += si.iter().map(|a| a * a).sum::<f64>() + dim * inv_s2;
        for (o, a) in ds.row_mut(i).iter_mut().zip(si) {
            *o = norm * (nf * nf * *o - 2.0 * a);
        }
    }
    Ok((norm * (nf * nf * v - diag), ds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discrepancy::{ksd_ustat_from_scores, ksd_vstat_from_scores, sksd_vstat_from_scores};
    use crate::math::{norm, project_rows_to_sphere, Rng};
    use crate::targets::{ScoreModel, StudentT};

    fn fixed_bw(slices: SliceConfig, x: &Matrix, s: &Matrix) -> SliceConfig {
        let g = sksd_vstat_gradient(x, s, &slices, &BandwidthPolicy::gof(), false).unwrap();
        let b = g.bandwidths.iter().map(|&v| Bandwidth::new(v).unwrap()).collect();
        slices.with_bandwidths(b).unwrap()
    }

    fn vstat(x: &Matrix, s: &Matrix, slices: &SliceConfig) -> f64 {
        sksd_vstat_from_scores(x, s, slices, &BandwidthPolicy::gof()).unwrap().value
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    #[test]
    fn value_matches_estimator() {
        let mut rng = Rng::new(2);
        let m = ScoreModel::StudentT(StudentT::centred(3, 5.0).unwrap());
        let x = Matrix::from_fn(10, 3, |_, _| rng.normal());
        let s = m.score_matrix(&x);
        let slices = SliceConfig::random_rg(3, 2, &mut rng);
        let g = sksd_vstat_gradient(&x, &s, &slices, &BandwidthPolicy::gof(), true).unwrap();
        assert!((g.value - vstat(&x, &s, &slices)).abs() < 1e-12);
    }

    #[test]
    fn direction_and_basis_gradients_match_finite_differences() {
        let h = 1e-6;
        for seed in 0..5 {
            let mut rng = Rng::new(seed);
            let m = ScoreModel::StudentT(StudentT::centred(3, 5.0).unwrap());
            let x = Matrix::from_fn(10, 3, |_, _| 1.5 * rng.normal());
            let s = m.score_matrix(&x);
            let slices = fixed_bw(SliceConfig::random_rg(3, 2, &mut rng), &x, &s);
            let grad = grad_wrt_directions_from_scores(&x, &s, &slices, &BandwidthPolicy::gof()).unwrap();
            // Perturb entries without renormalising: the estimator itself
            // does not require unit rows, only the config validator does.
            for k in 0..2 {
                for d in 0..3 {
                    for which in 0..2 {
                        let mut plus = slices.clone();
                        let mut minus = slices.clone();
                        let (p, q) = if which == 0 {
                            (plus.directions_mut(), minus.directions_mut())
                        } else {
                            (plus.basis_mut(), minus.basis_mut())
                        };
                        p[(k, d)] += h;
                        q[(k, d)] -= h;
                        let fd = (vstat(&x, &s, &plus) - vstat(&x, &s, &minus)) / (2.0 * h);
                        let an = if which == 0 { grad.directions[(k, d)] } else { grad.basis.as_ref().unwrap()[(k, d)] };
                        assert!(rel(an, fd) < 1e-4, "seed {seed} slice {k} dim {d} which {which}: {an} vs {fd}");
                    }
                }
            }
        }
    }

    #[test]
    fn score_gradient_matches_finite_differences() {
        let mut rng = Rng::new(7);
        let x = Matrix::from_fn(8, 3, |_, _| rng.normal());
        let s = Matrix::from_fn(8, 3, |_, _| rng.normal());
        let slices = fixed_bw(SliceConfig::random_g(3, &mut rng), &x, &s);
        let grad = sksd_vstat_gradient(&x, &s, &slices, &BandwidthPolicy::gof(), true).unwrap();
        let ds = grad.scores.unwrap();
        let h = 1e-6;
        for i in 0..8 {
            for d in 0..3 {
                let mut sp = s.clone();
                let mut sm = s.clone();
                sp[(i, d)] += h;
                sm[(i, d)] -= h;
                let fd = (vstat(&x, &sp, &slices) - vstat(&x, &sm, &slices)) / (2.0 * h);
                assert!(rel(ds[(i, d)], fd) < 1e-5, "{} vs {fd}", ds[(i, d)]);
            }
        }
    }

    #[test]
    fn ksd_score_gradient_matches_finite_differences() {
        let mut rng = Rng::new(8);
        let x = Matrix::from_fn(7, 2, |_, _| rng.normal());
        let s = Matrix::from_fn(7, 2, |_, _| rng.normal());
        let b = Some(Bandwidth::new(0.9).unwrap());
        let pol = BandwidthPolicy::gof();
        let (v, ds) = ksd_vstat_score_gradient(&x, &s, &pol, b).unwrap();
        assert!((v - ksd_vstat_from_scores(&x, &s, &pol, b).unwrap().value).abs() < 1e-12);
        let h = 1e-6;
        for i in 0..7 {
            for d in 0..2 {
                let mut sp = s.clone();
                let mut sm = s.clone();
                sp[(i, d)] += h;
                sm[(i, d)] -= h;
                let fd = (ksd_vstat_from_scores(&x, &sp, &pol, b).unwrap().value
                    - ksd_vstat_from_scores(&x, &sm, &pol, b).unwrap().value)
                    / (2.0 * h);
                assert!(rel(ds[(i, d)], fd) < 1e-5);
            }
        }
    }

    #[test]
    fn ksd_ustat_score_gradient_matches_finite_differences() {
        let mut rng = Rng::new(9);
        let x = Matrix::from_fn(6, 3, |_, _| rng.normal());
        let s = Matrix::from_fn(6, 3, |_, _| rng.normal());
        let b = Some(Bandwidth::new(1.3).unwrap());
        let pol = BandwidthPolicy::gof();
        let u = |s: &Matrix| ksd_ustat_from_scores(&x, s, &pol, b).unwrap().value;
        let (v, ds) = ksd_ustat_score_gradient(&x, &s, &pol, b).unwrap();
        assert!((v - u(&s)).abs() < 1e-12);
        let h = 1e-6;
        for i in 0..6 {
            for d in 0..3 {
                let mut sp = s.clone();
                let mut sm = s.clone();
                sp[(i, d)] += h;
                sm[(i, d)] -= h;
                assert!(rel(ds[(i, d)], (u(&sp) - u(&sm)) / (2.0 * h)) < 1e-5);
            }
        }
    }

    #[test]
    fn radial_component_has_no_first_order_effect_after_normalisation() {
        let mut rng = Rng::new(3);
        let m = ScoreModel::standard_gaussian(3).unwrap();
        let x = Matrix::from_fn(12, 3, |_, _| rng.normal());
        let s = m.score_matrix(&x);
        let slices = fixed_bw(SliceConfig::random_g(3, &mut rng), &x, &s);
        let normalised = |dirs: &Matrix| {
            let mut c = slices.clone();
            let mut d = dirs.clone();
            project_rows_to_sphere(&mut d).unwrap();
            *c.directions_mut() = d;
            vstat(&x, &s, &c)
        };
        let h = 1e-5;
        for k in 0..3 {
            let g = slices.directions().row(k).to_vec();
            let mut plus = slices.directions().clone();
            let mut minus = slices.directions().clone();
            axpy(h, &g, plus.row_mut(k));
            axpy(-h, &g, minus.row_mut(k));
            let fd = (normalised(&plus) - normalised(&minus)) / (2.0 * h);
            assert!(fd.abs() < 1e-8, "{fd}");
            assert!((norm(&g) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_samples_give_finite_gradients_with_floor() {
        let m = ScoreModel::standard_gaussian(2).unwrap();
        let x = Matrix::from_fn(6, 2, |_, _| 0.7);
        let slices = SliceConfig::random_g(2, &mut Rng::new(1));
        let pol = BandwidthPolicy::gof().with_floor();
        let g = grad_wrt_directions(&m, &x, &slices, &pol).unwrap();
        assert!(g.directions.is_finite());
    }
}
