//! Deterministic numerical substrate.

mod adam;
mod linalg;
mod matrix;
mod rng;

pub use adam::{AdamConfig, AdamState};
pub use linalg::{cholesky, condition_number, symmetric_eigenvalues, Lu};
pub use matrix::{axpy, dot, norm, sq_dist, Matrix};
pub use rng::Rng;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor substituted for a degenerate median-heuristic bandwidth when the
/// caller opts in.
pub const BANDWIDTH_FLOOR: f64 = 1e-6;

/// RBF length-scale σ in `k(a, b) = exp(-(a - b)² / (2σ²))`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Bandwidth(f64);

impl Bandwidth {
    pub fn new(sigma: f64) -> Result<Self> {
        if sigma > 0.0 && sigma.is_finite() {
            Ok(Bandwidth(sigma))
        } else {
            Err(Error::InvalidBandwidth(sigma))
        }
    }

    #[inline]
    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Bandwidth {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Bandwidth::new(v)
    }
}

impl From<Bandwidth> for f64 {
    fn from(b: Bandwidth) -> f64 {
        b.0
    }
}

/// Lower median (element `(n-1)/2` of the sorted list). Reorders `values`.
pub fn lower_median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty());
    let k = (values.len() - 1) / 2;
    *values.select_nth_unstable_by(k, f64::total_cmp).1
}

/// `factor ×` lower median of all pairwise `|v_i - v_j|`, `i < j`.
pub fn median_heuristic(values: &[f64], factor: f64) -> Result<Bandwidth> {
    if values.len() < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: values.len() });
    }
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(Error::param("factor", format!("must be positive, got {factor}")));
    }
    let n = values.len();
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        let vi = values[i];
        for &vj in &values[i + 1..] {
            dists.push((vi - vj).abs());
        }
    }
    let med = lower_median(&mut dists);
    if med == 0.0 {
        return Err(Error::DegenerateBandwidth(n));
    }
    Bandwidth::new(factor * med)
}

/// `factor ×` lower median of pairwise Euclidean distances between rows.
pub fn median_heuristic_rows(x: &Matrix, factor: f64) -> Result<Bandwidth> {
    let n = x.rows();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(Error::param("factor", format!("must be positive, got {factor}")));
    }
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            dists.push(sq_dist(x.row(i), x.row(j)));
        }
    }
    let med = lower_median(&mut dists).sqrt();
    if med == 0.0 {
        return Err(Error::DegenerateBandwidth(n));
    }
    Bandwidth::new(factor * med)
}

/// Divide each row by its Euclidean norm.
pub fn project_rows_to_sphere(m: &mut Matrix) -> Result<()> {
    for i in 0..m.rows() {
        let row = m.row_mut(i);
        let n = norm(row);
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::ZeroRow(i));
        }
        row.iter_mut().for_each(|x| *x /= n);
    }
    Ok(())
}

/// Multinomial(n; 1/n, …, 1/n) counts divided by `n`.
pub fn multinomial_bootstrap_weights(n: usize, rng: &mut Rng) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    let mut counts = vec![0u32; n];
    for _ in 0..n {
        counts[rng.index(n)] += 1;
    }
    let inv = 1.0 / n as f64;
    Ok(counts.into_iter().map(|c| c as f64 * inv).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use crate::math::Rng;

    #[test]
    fn median_heuristic_three_points() {
        let bw = median_heuristic(&[0.0, 1.0, 2.0], 1.0).unwrap();
        assert_eq!(bw.get(), 1.0);
        let bw = median_heuristic(&[0.0, 1.0, 2.0], 1.5).unwrap();
        assert_eq!(bw.get(), 1.5);
    }

    #[test]
    fn median_heuristic_degenerate() {
        assert!(matches!(median_heuristic(&[5.0, 5.0, 5.0], 1.0), Err(Error::DegenerateBandwidth(3))));
        assert!(median_heuristic(&[1.0], 1.0).is_err());
        assert!(median_heuristic(&[1.0, 2.0], 0.0).is_err());
    }

    #[test]
    fn lower_median_even_length() {
        let mut v = vec![4.0, 1.0, 3.0, 2.0];
        assert_eq!(lower_median(&mut v), 2.0);
    }

    #[test]
    fn median_heuristic_normal_draws() {
        // Median of |X - Y| for X, Y iid N(0,1) is sqrt(2) * Φ⁻¹(0.75) ≈ 0.9539.
        let theory = 2f64.sqrt() * 0.674_489_750_196_081_7;
        let mut rng = Rng::new(2024);
        let xs = rng.normal_vec(100);
        // brute force over all 4950 pairs
        let mut pairs = Vec::new();
        for i in 0..100 {
            for j in i + 1..100 {
                pairs.push((xs[i] - xs[j]).abs());
            }
        }
        assert_eq!(pairs.len(), 4950);
        pairs.sort_by(f64::total_cmp);
        let brute = pairs[(pairs.len() - 1) / 2];
        let bw = median_heuristic(&xs, 1.0).unwrap().get();
        assert_eq!(bw, brute);
        assert!((bw - theory).abs() < 0.15, "{bw} vs {theory}");
    }

    #[test]
    fn rows_median_matches_1d() {
        let v = [0.3, -1.0, 2.0, 0.7, 5.0];
        let m = Matrix::from_vec(5, 1, v.to_vec()).unwrap();
        assert_eq!(median_heuristic_rows(&m, 1.0).unwrap(), median_heuristic(&v, 1.0).unwrap());
    }

    #[test]
    fn sphere_projection() {
        let mut m = Matrix::from_rows(&[vec![3.0, 4.0]]).unwrap();
        project_rows_to_sphere(&mut m).unwrap();
        assert!((m[(0, 0)] - 0.6).abs() < 1e-15 && (m[(0, 1)] - 0.8).abs() < 1e-15);

        let mut id = Matrix::identity(4);
        project_rows_to_sphere(&mut id).unwrap();
        assert_eq!(id, Matrix::identity(4));

        let mut rng = Rng::new(8);
        let mut g = Matrix::from_fn(20, 7, |_, _| rng.normal());
        project_rows_to_sphere(&mut g).unwrap();
        for r in g.row_iter() {
            assert!((norm(r) - 1.0).abs() < 1e-12);
        }

        let mut z = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert!(matches!(project_rows_to_sphere(&mut z), Err(Error::ZeroRow(1))));
    }

    #[test]
    fn bootstrap_weights_small() {
        let mut rng = Rng::new(1);
        assert_eq!(multinomial_bootstrap_weights(1, &mut rng).unwrap(), vec![1.0]);
        for _ in 0..100 {
            let w = multinomial_bootstrap_weights(4, &mut rng).unwrap();
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for x in w {
                assert_eq!((x * 4.0).fract(), 0.0);
            }
        }
        assert!(multinomial_bootstrap_weights(0, &mut rng).is_err());
    }

    #[test]
    fn bootstrap_weight_mean() {
        // E[w_i] = 1/N, Var[w_i] = (N-1)/N³.
        let n = 1000;
        let draws = 10_000;
        let mut rng = Rng::new(99);
        let mut sum0 = 0.0;
        for _ in 0..draws {
            sum0 += multinomial_bootstrap_weights(n, &mut rng).unwrap()[0];
        }
        let mean = sum0 / draws as f64;
        let se = (((n - 1) as f64) / (n as f64).powi(3) / draws as f64).sqrt();
        assert!((mean - 1.0 / n as f64).abs() < 3.0 * se, "{mean}");
    }

    proptest! {
        #[test]
        fn median_heuristic_invariances(
            mut v in proptest::collection::vec(-100.0f64..100.0, 2..40),
            shift in -50.0f64..50.0,
            seed in any::<u64>(),
        ) {
            let Ok(base) = median_heuristic(&v, 1.0) else { return Ok(()); };
            let shifted: Vec<f64> = v.iter().map(|x| x + shift).collect();
            if let Ok(s) = median_heuristic(&shifted, 1.0) {
                prop_assert!((s.get() - base.get()).abs() < 1e-9 * (1.0 + base.get()));
            }
            Rng::new(seed).shuffle(&mut v);
            prop_assert_eq!(median_heuristic(&v, 1.0).unwrap(), base);
        }

        #[test]
        fn same_seed_same_weights(seed in any::<u64>(), n in 1usize..50) {
            let a = multinomial_bootstrap_weights(n, &mut Rng::new(seed)).unwrap();
            let b = multinomial_bootstrap_weights(n, &mut Rng::new(seed)).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
