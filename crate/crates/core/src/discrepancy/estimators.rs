use rayon::prelude::*;

use super::kernel::{h_pair, ksd_up_from_scores};
use super::{BandwidthPolicy, DiscrepancyEstimate, Method, SliceConfig, SliceVariant, Statistic};
use crate::error::{Error, Result};
use crate::math::{Bandwidth, Matrix};
use crate::targets::Score;

/// Per-slice projected inputs: `a_i = x_iᵀg`, `t_i = rᵀs(x_i)`, `c = rᵀg`.
pub(crate) struct SliceData {
    pub a: Vec<f64>,
    pub t: Vec<f64>,
    pub c: f64,
    pub sigma: Bandwidth,
}

impl SliceData {
    pub fn inv_s2(&self) -> f64 {
        1.0 / (self.sigma.get() * self.sigma.get())
    }

    /// `(Σ_{i≠j} h_ij, Σ_i h_ii)`.
    fn sums(&self) -> (f64, f64) {
        let inv_s2 = self.inv_s2();
        let (a, t, c) = (&self.a, &self.t, self.c);
        let n = a.len();
        let mut off = 0.0;
        for i in 0..n {
            let (ai, ti) = (a[i], t[i]);
            let mut acc = 0.0;
            for j in i + 1..n {
                acc += h_pair(ai, a[j], ti, t[j], c, inv_s2);
            }
            off += acc;
        }
        let diag: f64 = t.iter().map(|ti| ti * ti + c * c * inv_s2).sum();
        (2.0 * off, diag)
    }
}

pub(crate) fn check_inputs(x: &Matrix, s: &Matrix, d: Option<usize>) -> Result<()> {
    if x.shape() != s.shape() {
        return Err(Error::DimensionMismatch { expected: x.rows(), got: s.rows() });
    }
    if let Some(d) = d {
        if x.cols() != d {
            return Err(Error::DimensionMismatch { expected: d, got: x.cols() });
        }
    }
    if let Some(index) = x.first_non_finite() {
        return Err(Error::NonFinite { what: "samples", index });
    }
    if let Some(index) = s.first_non_finite() {
        return Err(Error::NonFinite { what: "scores", index });
    }
    Ok(())
}

pub(crate) fn prepare(x: &Matrix, s: &Matrix, slices: &SliceConfig, policy: &BandwidthPolicy) -> Result<Vec<SliceData>> {
    check_inputs(x, s, Some(slices.dim()))?;
    let one_hot = slices.is_one_hot_identity();
    let overrides = slices.bandwidth_overrides();
    (0..slices.len())
        .map(|k| {
            let r = slices.basis().row(k);
            let g = slices.directions().row(k);
            let a = x.matvec(g);
            let t = if one_hot { s.column(k) } else { s.matvec(r) };
            let sigma = match overrides {
                Some(b) => b[k],
                None => policy.resolve(&a)?,
            };
            Ok(SliceData { a, t, c: crate::math::dot(r, g), sigma })
        })
        .collect()
}

fn method_of(slices: &SliceConfig) -> Method {
    match slices.variant() {
        SliceVariant::G => Method::MaxSksdG,
        SliceVariant::Rg => Method::MaxSksdRg,
    }
}

fn estimate_from_sums(
    data: &[SliceData],
    sums: &[(f64, f64)],
    statistic: Statistic,
    method: Method,
    n: usize,
) -> DiscrepancyEstimate {
    let nf = n as f64;
    let per_slice: Vec<f64> = match statistic {
        Statistic::U => sums.iter().map(|(off, _)| off / (nf * (nf - 1.0))).collect(),
        Statistic::V => sums.iter().map(|(off, diag)| (off + diag) / (nf * nf)).collect(),
    };
    DiscrepancyEstimate {
        value: per_slice.iter().sum(),
        method,
        statistic,
        per_slice,
        bandwidths: data.iter().map(|d| d.sigma.get()).collect(),
        n,
    }
}

fn sksd_from_scores(x: &Matrix, s: &Matrix, slices: &SliceConfig, policy: &BandwidthPolicy, stat: Statistic) -> Result<DiscrepancyEstimate> {
    let n = x.rows();
    let needed = if stat == Statistic::U { 2 } else { 1 };
    if n < needed {
        return Err(Error::TooFewSamples { needed, got: n });
    }
    let data = prepare(x, s, slices, policy)?;
    let sums: Vec<(f64, f64)> = data.par_iter().map(SliceData::sums).collect();
    Ok(estimate_from_sums(&data, &sums, stat, method_of(slices), n))
}

/// Unbiased estimator `1/(N(N-1)) Σ_r Σ_{i≠j} h_r(x_i, x_j)`.
pub fn sksd_ustat(model: &impl Score, x: &Matrix, slices: &SliceConfig, policy: &BandwidthPolicy) -> Result<DiscrepancyEstimate> {
    sksd_ustat_from_scores(x, &model.score_matrix(x), slices, policy)
}

pub fn sksd_ustat_from_scores(x: &Matrix, s: &Matrix, slices: &SliceConfig, policy: &BandwidthPolicy) -> Result<DiscrepancyEstimate> {
    sksd_from_scores(x, s, slices, policy, Statistic::U)
}

/// Biased estimator `1/N² Σ_r Σ_{i,j} h_r(x_i, x_j)`; never negative.
pub fn sksd_vstat(model: &impl Score, x: &Matrix, slices: &SliceConfig, policy: &BandwidthPolicy) -> Result<DiscrepancyEstimate> {
    sksd_vstat_from_scores(x, &model.score_matrix(x), slices, policy)
}

pub fn sksd_vstat_from_scores(x: &Matrix, s: &Matrix, slices: &SliceConfig, policy: &BandwidthPolicy) -> Result<DiscrepancyEstimate> {
    sksd_from_scores(x, s, slices, policy, Statistic::V)
}

/// Slice-summed pair matrix `H_ij = Σ_r h_r(x_i, x_j)` with the matching
/// U-statistic.
#[derive(Clone, Debug)]
pub struct SteinMatrix {
    pub h: Matrix,
    pub ustat: DiscrepancyEstimate,
}

/// Build `H` row by row; `row_fn(i, row, per)` fills `row[j]` for `j ≥ i`
/// and returns per-component off-diagonal sums over `j > i`.
fn assemble<F>(n: usize, parts: usize, row_fn: F) -> (Matrix, Vec<f64>)
where
    F: Fn(usize, &mut [f64], &mut [f64]) + Sync,
{
    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut row = vec![0.0; n];
            let mut per = vec![0.0; parts];
            row_fn(i, &mut row, &mut per);
            (row, per)
        })
        .collect();
    let mut h = Matrix::zeros(n, n);
    let mut totals = vec![0.0; parts];
    for (i, (row, per)) in rows.into_iter().enumerate() {
        for j in i..n {
            h[(i, j)] = row[j];
            h[(j, i)] = row[j];
        }
        for (t, p) in totals.iter_mut().zip(per) {
            *t += 2.0 * p;
        }
    }
    (h, totals)
}

pub fn sksd_matrix(model: &impl Score, x: &Matrix, slices: &SliceConfig, policy: &BandwidthPolicy) -> Result<SteinMatrix> {
    sksd_matrix_from_scores(x, &model.score_matrix(x), slices, policy)
}

pub fn sksd_matrix_from_scores(x: &Matrix, s: &Matrix, slices: &SliceConfig, policy: &BandwidthPolicy) -> Result<SteinMatrix> {
    let n = x.rows();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    let data = prepare(x, s, slices, policy)?;
    let (h, off) = assemble(n, data.len(), |i, row, per| {
        for (k, sd) in data.iter().enumerate() {
            let inv_s2 = sd.inv_s2();
            let (ai, ti, c) = (sd.a[i], sd.t[i], sd.c);
            row[i] += ti * ti + c * c * inv_s2;
            let mut acc = 0.0;
            for j in i + 1..n {
                let v = h_pair(ai, sd.a[j], ti, sd.t[j], c, inv_s2);
                row[j] += v;
                acc += v;
            }
            per[k] = acc;
        }
    });
    let sums: Vec<(f64, f64)> = off.into_iter().map(|o| (o, 0.0)).collect();
    let ustat = estimate_from_sums(&data, &sums, Statistic::U, method_of(slices), n);
    Ok(SteinMatrix { h, ustat })
}

fn ksd_prepare(x: &Matrix, s: &Matrix, policy: &BandwidthPolicy, bandwidth: Option<Bandwidth>) -> Result<Bandwidth> {
    check_inputs(x, s, None)?;
    match bandwidth {
        Some(b) => Ok(b),
        None => policy.resolve_rows(x),
    }
}

fn inv_sq(sigma: Bandwidth) -> f64 {
    1.0 / (sigma.get() * sigma.get())
}

fn ksd_estimate(value_sum: f64, stat: Statistic, n: usize, sigma: Bandwidth) -> DiscrepancyEstimate {
    let nf = n as f64;
    let value = match stat {
        Statistic::U => value_sum / (nf * (nf - 1.0)),
        Statistic::V => value_sum / (nf * nf),
    };
    DiscrepancyEstimate {
        value,
        method: Method::Ksd,
        statistic: stat,
        per_slice: vec![value],
        bandwidths: vec![sigma.get()],
        n,
    }
}

fn ksd_sums(x: &Matrix, s: &Matrix, inv_s2: f64) -> (f64, f64) {
    let n = x.rows();
    let rows: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let (xi, si) = (x.row(i), s.row(i));
            (i + 1..n).map(|j| ksd_up_from_scores(xi, x.row(j), si, s.row(j), inv_s2)).sum::<f64>()
        })
        .collect();
    let off = 2.0 * rows.iter().sum::<f64>();
    let diag = (0..n).map(|i| ksd_up_from_scores(x.row(i), x.row(i), s.row(i), s.row(i), inv_s2)).sum();
    (off, diag)
}

/// KSD U-statistic with the multivariate RBF kernel; `bandwidth` overrides
/// the median heuristic on Euclidean distances.
pub fn ksd_ustat(model: &impl Score, x: &Matrix, policy: &BandwidthPolicy, bandwidth: Option<Bandwidth>) -> Result<DiscrepancyEstimate> {
    let n = x.rows();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    ksd_ustat_from_scores(x, &model.score_matrix(x), policy, bandwidth)
}

pub fn ksd_ustat_from_scores(x: &Matrix, s: &Matrix, policy: &BandwidthPolicy, bandwidth: Option<Bandwidth>) -> Result<DiscrepancyEstimate> {
    let n = x.rows();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    let sigma = ksd_prepare(x, s, policy, bandwidth)?;
    let inv_s2 = inv_sq(sigma);
    let (off, _) = ksd_sums(x, s, inv_s2);
    Ok(ksd_estimate(off, Statistic::U, n, sigma))
}

pub fn ksd_vstat(model: &impl Score, x: &Matrix, policy: &BandwidthPolicy, bandwidth: Option<Bandwidth>) -> Result<DiscrepancyEstimate> {
    ksd_vstat_from_scores(x, &model.score_matrix(x), policy, bandwidth)
}

pub fn ksd_vstat_from_scores(x: &Matrix, s: &Matrix, policy: &BandwidthPolicy, bandwidth: Option<Bandwidth>) -> Result<DiscrepancyEstimate> {
    let n = x.rows();
    if n < 1 {
        return Err(Error::TooFewSamples { needed: 1, got: n });
    }
    let sigma = ksd_prepare(x, s, policy, bandwidth)?;
    let inv_s2 = inv_sq(sigma);
    let (off, diag) = ksd_sums(x, s, inv_s2);
    Ok(ksd_estimate(off + diag, Statistic::V, n, sigma))
}

pub fn ksd_matrix(model: &impl Score, x: &Matrix, policy: &BandwidthPolicy, bandwidth: Option<Bandwidth>) -> Result<SteinMatrix> {
    let n = x.rows();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    let s = model.score_matrix(x);
    let sigma = ksd_prepare(x, &s, policy, bandwidth)?;
    let inv_s2 = inv_sq(sigma);
    let (h, off) = assemble(n, 1, |i, row, per| {
        let (xi, si) = (x.row(i), s.row(i));
        row[i] = ksd_up_from_scores(xi, xi, si, si, inv_s2);
        for j in i + 1..n {
            let v = ksd_up_from_scores(xi, x.row(j), si, s.row(j), inv_s2);
            row[j] = v;
            per[0] += v;
        }
    });
    Ok(SteinMatrix { h, ustat: ksd_estimate(off[0], Statistic::U, n, sigma) })
}
