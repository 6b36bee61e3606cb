use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const DEFAULT_DENSE_LIMIT: usize = 2000;

fn check_limit(size: usize, limit: usize) -> Result<()> {
    if size > limit {
        return Err(Error::SizeLimit { size, limit });
    }
    Ok(())
}

/// `W_out^{1/2} · M · W_in^{-1/2}` for diagonal weights.
pub fn to_hat(m: &DMatrix<f64>, w_in: &[f64], w_out: &[f64]) -> DMatrix<f64> {
    assert_eq!(m.ncols(), w_in.len());
    assert_eq!(m.nrows(), w_out.len());
    let mut out = m.clone();
    for c in 0..out.ncols() {
        for r in 0..out.nrows() {
            // Equal weights give a factor of exactly one.
            out[(r, c)] *= (w_out[r] / w_in[c]).sqrt();
        }
    }
    out
}

/// Operator norm of `m` from `(ℝⁿ, w_in)` to `(ℝᵐ, w_out)`, where the
/// weighted inner product is `⟨u, v⟩ = Σ wᵢ uᵢ vᵢ`.
pub fn dense_opnorm(m: &DMatrix<f64>, w_in: &[f64], w_out: &[f64], limit: usize) -> Result<f64> {
    check_limit(m.nrows().max(m.ncols()), limit)?;
    Ok(unweighted_opnorm(&to_hat(m, w_in, w_out)))
}

/// Largest singular value.
pub fn unweighted_opnorm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// Eigendecomposition of a symmetric matrix with ascending eigenvalues, for
/// evaluating `f(A)` on small instances.
#[derive(Clone, Debug)]
pub struct SymmetricSpectral {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl SymmetricSpectral {
    pub fn new(a: &DMatrix<f64>, limit: usize) -> Result<Self> {
        check_limit(a.nrows(), limit)?;
        let eig = a.clone().symmetric_eigen();
        let mut order: Vec<usize> = (0..a.nrows()).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
        let values = DVector::from_iterator(order.len(), order.iter().map(|&i| eig.eigenvalues[i]));
        let vectors = DMatrix::from_columns(
            &order
                .iter()
                .map(|&i| eig.eigenvectors.column(i).into_owned())
                .collect::<Vec<_>>(),
        );
        Ok(Self { values, vectors })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// `f(A)` as a dense matrix.
    pub fn matrix(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let mut scaled = self.vectors.clone();
        for (c, &l) in self.values.iter().enumerate() {
            let s = f(l);
            scaled.column_mut(c).scale_mut(s);
        }
        scaled * self.vectors.transpose()
    }

    /// `f(A) v`.
    pub fn apply(&self, f: impl Fn(f64) -> f64, v: &[f64]) -> Vec<f64> {
        let coeffs = self.vectors.tr_mul(&DVector::from_column_slice(v));
        let weighted = DVector::from_iterator(
            coeffs.len(),
            coeffs
                .iter()
                .zip(self.values.iter())
                .map(|(c, &l)| c * f(l)),
        );
        (&self.vectors * weighted).as_slice().to_vec()
    }
}

/// Hausdorff distance between two finite subsets of ℝ.
pub fn hausdorff_distance(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::EmptySet);
    }
    let one_sided = |a: &[f64], b: &[f64]| {
        let mut sorted = b.to_vec();
        sorted.sort_by(f64::total_cmp);
        a.iter()
            .map(|&v| {
                let i = sorted.partition_point(|&s| s < v);
                let mut best = f64::INFINITY;
                if i < sorted.len() {
                    best = best.min(sorted[i] - v);
                }
                if i > 0 {
                    best = best.min(v - sorted[i - 1]);
                }
                best
            })
            .fold(0.0, f64::max)
    };
    Ok(one_sided(x, y).max(one_sided(y, x)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn identity_has_unit_norm() {
        let w = vec![0.3; 7];
        let n = dense_opnorm(&DMatrix::identity(7, 7), &w, &w, DEFAULT_DENSE_LIMIT).unwrap();
        assert!((n - 1.0).abs() < 1e-14);
    }

    #[test]
    fn rank_one_norm_is_product_of_weighted_norms() {
        let u = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let v = DVector::from_vec(vec![3.0, 1.0]);
        let w_out = [0.5, 2.0, 1.5];
        let w_in = [4.0, 0.25];
        // x ↦ u ⟨v, x⟩_{w_in}
        let mut m = &u * v.transpose();
        for c in 0..2 {
            m.column_mut(c).scale_mut(w_in[c]);
        }
        let nu = u
            .iter()
            .zip(&w_out)
            .map(|(a, w)| w * a * a)
            .sum::<f64>()
            .sqrt();
        let nv = v
            .iter()
            .zip(&w_in)
            .map(|(a, w)| w * a * a)
            .sum::<f64>()
            .sqrt();
        let got = dense_opnorm(&m, &w_in, &w_out, DEFAULT_DENSE_LIMIT).unwrap();
        assert!((got - nu * nv).abs() < 1e-12 * nu * nv);
    }

    #[test]
    fn matches_power_iteration() {
        let m = random(30, 20, 7);
        let mtm = m.transpose() * &m;
        let mut x = DVector::from_element(20, 1.0);
        let mut lambda = 0.0;
        for _ in 0..5000 {
            let y = &mtm * &x;
            lambda = x.dot(&y) / x.dot(&x);
            x = &y / y.norm();
        }
        let got = dense_opnorm(&m, &[1.0; 20], &[1.0; 30], DEFAULT_DENSE_LIMIT).unwrap();
        assert!(
            (got - lambda.sqrt()).abs() < 1e-10,
            "{got} vs {}",
            lambda.sqrt()
        );
    }

    #[test]
    fn size_limit_is_enforced() {
        let m = DMatrix::<f64>::zeros(5, 5);
        assert!(matches!(
            dense_opnorm(&m, &[1.0; 5], &[1.0; 5], 4),
            Err(Error::SizeLimit { size: 5, limit: 4 })
        ));
    }

    #[test]
    fn spectral_calculus_inverts() {
        let b = random(12, 12, 3);
        let a = &b * b.transpose() + DMatrix::identity(12, 12);
        let sp = SymmetricSpectral::new(&a, 100).unwrap();
        let inv = sp.matrix(|l| 1.0 / l);
        assert!((inv * &a - DMatrix::identity(12, 12)).abs().max() < 1e-10);
        assert!(sp.values.as_slice().windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn hausdorff_examples() {
        assert_eq!(
            hausdorff_distance(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(),
            0.0
        );
        assert_eq!(hausdorff_distance(&[0.0], &[1.0]).unwrap(), 1.0);
        assert_eq!(hausdorff_distance(&[0.0, 2.0], &[1.0]).unwrap(), 1.0);
        assert!(matches!(
            hausdorff_distance(&[], &[1.0]),
            Err(Error::EmptySet)
        ));
    }

    #[test]
    fn hausdorff_ignores_multiplicity() {
        assert_eq!(
            hausdorff_distance(&[1.0, 1.0, 2.0], &[2.0, 1.0]).unwrap(),
            0.0
        );
    }

    #[test]
    fn converging_families_satisfy_both_conditions() {
        // X_j = {0, 1/2, 1} + perturbation 1/j and an extra point that approaches 1.
        let limit = [0.0, 0.5, 1.0];
        let mut prev = f64::INFINITY;
        for j in 1..50 {
            let s = 1.0 / j as f64;
            let xj = [s, 0.5 - s / 2.0, 1.0 + s, 1.0 - s];
            let d = hausdorff_distance(&xj, &limit).unwrap();
            assert!(d <= prev);
            prev = d;
            // every limit point is approximated and every approximant point is close to the limit
            for &l in &limit {
                assert!(
                    xj.iter()
                        .map(|x| (x - l).abs())
                        .fold(f64::INFINITY, f64::min)
                        <= d
                );
            }
        }
        assert!(prev < 0.03);
    }

    proptest! {
        #[test]
        fn hausdorff_is_symmetric_and_nonnegative(
            x in prop::collection::vec(-10.0f64..10.0, 1..20),
            y in prop::collection::vec(-10.0f64..10.0, 1..20),
        ) {
            let a = hausdorff_distance(&x, &y).unwrap();
            let b = hausdorff_distance(&y, &x).unwrap();
            prop_assert!(a >= 0.0);
            prop_assert_eq!(a, b);
            prop_assert_eq!(hausdorff_distance(&x, &x).unwrap(), 0.0);
        }

        #[test]
        fn hausdorff_triangle_inequality(
            x in prop::collection::vec(-5.0f64..5.0, 1..10),
            y in prop::collection::vec(-5.0f64..5.0, 1..10),
            z in prop::collection::vec(-5.0f64..5.0, 1..10),
        ) {
            let xz = hausdorff_distance(&x, &z).unwrap();
            let xy = hausdorff_distance(&x, &y).unwrap();
            let yz = hausdorff_distance(&y, &z).unwrap();
            prop_assert!(xz <= xy + yz + 1e-12);
        }
    }
}
