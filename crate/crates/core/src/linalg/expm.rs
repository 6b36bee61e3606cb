//! Action of the heat semigroup `exp(−tA) v` for symmetric PSD `A`.
//!
//! Small problems use the dense eigendecomposition, larger ones a
//! shift-and-invert Krylov method.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::amg::AmgHierarchy;
use super::cg::{cg_solve, dot, norm, CgOptions};
use super::dense::{SymmetricSpectral, DEFAULT_DENSE_LIMIT};
use super::sparse::CsrMatrix;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpmOptions {
    pub tol: f64,
    pub dense_limit: usize,
    pub max_krylov: usize,
}

impl Default for ExpmOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            dense_limit: DEFAULT_DENSE_LIMIT,
            max_krylov: 200,
        }
    }
}

fn check_time(t: f64) -> Result<()> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::DomainError {
            what: "semigroup_apply",
            detail: format!("t = {t} must be finite and nonnegative"),
        });
    }
    Ok(())
}

/// `exp(−tA) v`.
pub fn semigroup_apply(a: &CsrMatrix, t: f64, v: &[f64], opts: &ExpmOptions) -> Result<Vec<f64>> {
    SemigroupPlan::new(a, t, opts)?.apply(v)
}

enum PlanKind {
    Identity,
    Dense(Arc<SymmetricSpectral>),
    Krylov {
        shifted: CsrMatrix,
        amg: Box<AmgHierarchy>,
        gamma: f64,
    },
}

/// `v ↦ exp(−tA) v` for one operator and one time, with the eigendecomposition
/// or the shifted matrix and its AMG hierarchy built once and reused.
pub struct SemigroupPlan {
    t: f64,
    dim: usize,
    opts: ExpmOptions,
    kind: PlanKind,
}

impl SemigroupPlan {
    pub fn new(a: &CsrMatrix, t: f64, opts: &ExpmOptions) -> Result<Self> {
        Ok(Self::for_times(a, &[t], opts)?.remove(0))
    }

    /// One plan per entry of `times`; the dense path shares a single
    /// eigendecomposition across all of them.
    pub fn for_times(a: &CsrMatrix, times: &[f64], opts: &ExpmOptions) -> Result<Vec<Self>> {
        for &t in times {
            check_time(t)?;
        }
        let spectral = if a.nrows() <= opts.dense_limit && times.iter().any(|&t| t > 0.0) {
            Some(Arc::new(SymmetricSpectral::new(&a.to_dense(), usize::MAX)?))
        } else {
            None
        };
        Ok(times
            .iter()
            .map(|&t| {
                let kind = match &spectral {
                    _ if t == 0.0 => PlanKind::Identity,
                    Some(sp) => PlanKind::Dense(sp.clone()),
                    None => Self::krylov_kind(a, t),
                };
                Self {
                    t,
                    dim: a.nrows(),
                    opts: *opts,
                    kind,
                }
            })
            .collect())
    }

    /// Always the Krylov method, whatever the size.
    pub fn krylov(a: &CsrMatrix, t: f64, opts: &ExpmOptions) -> Result<Self> {
        check_time(t)?;
        let kind = if t == 0.0 {
            PlanKind::Identity
        } else {
            Self::krylov_kind(a, t)
        };
        Ok(Self {
            t,
            dim: a.nrows(),
            opts: *opts,
            kind,
        })
    }

    fn krylov_kind(a: &CsrMatrix, t: f64) -> PlanKind {
        let gamma = t / 10.0;
        let shifted = a.scale(gamma).add_diagonal(1.0);
        let amg = AmgHierarchy::new(&shifted);
        PlanKind::Krylov {
            shifted,
            amg: Box::new(amg),
            gamma,
        }
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim {
            return Err(Error::GridMismatch(format!(
                "vector of length {} for an operator of size {}",
                v.len(),
                self.dim
            )));
        }
        match &self.kind {
            PlanKind::Identity => Ok(v.to_vec()),
            PlanKind::Dense(sp) => Ok(sp.apply(|l| (-self.t * l).exp(), v)),
            PlanKind::Krylov {
                shifted,
                amg,
                gamma,
            } => krylov_apply(shifted, amg, self.t, *gamma, v, &self.opts),
        }
    }
}

/// `β₀ · f(T) e₁` for the symmetric tridiagonal `T`.
fn projected(alphas: &[f64], betas: &[f64], beta0: f64, f: impl Fn(f64) -> f64) -> Vec<f64> {
    let m = alphas.len();
    let mut tm = DMatrix::zeros(m, m);
    for i in 0..m {
        tm[(i, i)] = alphas[i];
        if i + 1 < m {
            tm[(i, i + 1)] = betas[i];
            tm[(i + 1, i)] = betas[i];
        }
    }
    let eig = tm.symmetric_eigen();
    let mut y = vec![0.0; m];
    for k in 0..m {
        let c = beta0 * f(eig.eigenvalues[k]) * eig.eigenvectors[(0, k)];
        for (j, yj) in y.iter_mut().enumerate() {
            *yj += c * eig.eigenvectors[(j, k)];
        }
    }
    y
}

/// Shift-and-invert Lanczos approximation of `exp(−tA) v`.
///
/// The Krylov space is built from `(I + γA)⁻¹` with `γ = t/10`, so the slowly
/// decaying low modes are captured first and the iteration count does not grow
/// with the stiffness of `A`. Inner solves use AMG-preconditioned CG. The
/// iteration stops once two successive updates are below `opts.tol / 10`
/// relative to `‖v‖`, after at least eight steps.
pub fn semigroup_apply_krylov(
    a: &CsrMatrix,
    t: f64,
    v: &[f64],
    opts: &ExpmOptions,
) -> Result<Vec<f64>> {
    SemigroupPlan::krylov(a, t, opts)?.apply(v)
}

fn krylov_apply(
    shifted: &CsrMatrix,
    amg: &AmgHierarchy,
    t: f64,
    gamma: f64,
    v: &[f64],
    opts: &ExpmOptions,
) -> Result<Vec<f64>> {
    let beta0 = norm(v);
    if beta0 == 0.0 {
        return Ok(v.to_vec());
    }
    let inner = CgOptions {
        tol: opts.tol * 1e-4,
        max_iter: 5000,
    };
    // exp(−tλ) with λ = (1/μ − 1)/γ for Ritz values μ of (I + γA)⁻¹.
    let f = |mu: f64| {
        if mu <= 0.0 {
            0.0
        } else {
            (-(t / gamma) * (1.0 / mu - 1.0).max(0.0)).exp()
        }
    };
    let mut basis: Vec<Vec<f64>> = vec![v.iter().map(|x| x / beta0).collect()];
    let mut alphas = Vec::new();
    let mut betas = Vec::new();
    let mut last: Option<Vec<f64>> = None;
    let mut estimate = f64::INFINITY;
    let mut calm = 0;
    let mut y = None;
    for m in 1..=opts.max_krylov {
        let (mut w, _) = cg_solve(shifted, amg, &basis[m - 1], &inner)?;
        let mut alpha = 0.0;
        for pass in 0..2 {
            for (i, q) in basis.iter().enumerate() {
                let c = dot(q, &w);
                if pass == 0 && i == m - 1 {
                    alpha = c;
                }
                w.iter_mut().zip(q).for_each(|(wi, qi)| *wi -= c * qi);
            }
        }
        alphas.push(alpha);
        let beta = norm(&w);
        let invariant = beta <= 1e-14 || m == shifted.nrows();
        let cur = projected(&alphas, &betas, beta0, f);
        if let Some(prev) = &last {
            let diff: f64 = cur
                .iter()
                .enumerate()
                .map(|(i, c)| (c - prev.get(i).copied().unwrap_or(0.0)).powi(2))
                .sum::<f64>()
                .sqrt();
            estimate = diff / beta0;
        }
        // Components with tiny weight in `v` surface only after a few steps,
        // so demand a minimum depth and two consecutive small updates.
        calm = if estimate <= opts.tol * 0.1 {
            calm + 1
        } else {
            0
        };
        if invariant || (m >= 8 && calm >= 2) {
            y = Some(cur);
            break;
        }
        last = Some(cur);
        betas.push(beta);
        w.iter_mut().for_each(|x| *x /= beta);
        basis.push(w);
    }
    let y = y.ok_or(Error::ExpmTolerance {
        tol: opts.tol,
        estimate,
    })?;
    let mut out = vec![0.0; v.len()];
    for (c, q) in y.iter().zip(&basis) {
        out.iter_mut().zip(q).for_each(|(o, qi)| *o += c * qi);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent oracle: scaling and squaring with a truncated Taylor series.
    fn expm_taylor(a: &DMatrix<f64>) -> DMatrix<f64> {
        let n = a.nrows();
        let norm1 = a.abs().row_sum().max();
        let s = (norm1.max(1.0).log2().ceil() as i32 + 1).max(0);
        let scaled = a / 2f64.powi(s);
        let mut term = DMatrix::identity(n, n);
        let mut sum = DMatrix::identity(n, n);
        for k in 1..30 {
            term = &term * &scaled / k as f64;
            sum += &term;
        }
        for _ in 0..s {
            sum = &sum * &sum;
        }
        sum
    }

    fn random_psd(n: usize, seed: u64) -> CsrMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let a = &b * b.transpose() / n as f64;
        let mut trip = Vec::new();
        for r in 0..n {
            for c in 0..n {
                trip.push((r, c, a[(r, c)]));
            }
        }
        CsrMatrix::from_triplets(n, n, &trip)
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let d: f64 = a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        d / norm(b)
    }

    #[test]
    fn zero_time_is_identity() {
        let a = random_psd(10, 1);
        let v: Vec<f64> = (0..10).map(|i| i as f64).collect();
        assert_eq!(
            semigroup_apply(&a, 0.0, &v, &ExpmOptions::default()).unwrap(),
            v
        );
    }

    #[test]
    fn negative_time_is_rejected() {
        let a = random_psd(4, 1);
        assert!(semigroup_apply(&a, -1.0, &[1.0; 4], &ExpmOptions::default()).is_err());
    }

    #[test]
    fn diagonal_operator_decays_componentwise() {
        let d = [0.0, 1.0, 2.5, 10.0];
        let a = CsrMatrix::from_triplets(
            4,
            4,
            &d.iter()
                .enumerate()
                .map(|(i, &v)| (i, i, v))
                .collect::<Vec<_>>(),
        );
        let v = [1.0, -2.0, 3.0, 0.5];
        let t = 0.7;
        for krylov in [false, true] {
            let got = if krylov {
                semigroup_apply_krylov(&a, t, &v, &ExpmOptions::default()).unwrap()
            } else {
                semigroup_apply(&a, t, &v, &ExpmOptions::default()).unwrap()
            };
            for i in 0..4 {
                assert!((got[i] - (-d[i] * t).exp() * v[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn random_psd_matches_taylor_oracle() {
        let a = random_psd(50, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let v: Vec<f64> = (0..50).map(|_| rng.random_range(-1.0..1.0)).collect();
        let t = 1.3;
        let oracle = expm_taylor(&(a.to_dense() * -t)) * nalgebra::DVector::from_column_slice(&v);
        let dense = semigroup_apply(&a, t, &v, &ExpmOptions::default()).unwrap();
        let krylov = semigroup_apply_krylov(&a, t, &v, &ExpmOptions::default()).unwrap();
        assert!(rel_err(&dense, oracle.as_slice()) < 1e-8);
        assert!(rel_err(&krylov, oracle.as_slice()) < 1e-8);
    }

    #[test]
    fn krylov_handles_stiff_laplacian() {
        let m = 400;
        let h = 1.0 / (m + 1) as f64;
        let mut t = Vec::new();
        for i in 0..m {
            t.push((i, i, 2.0 / (h * h)));
            if i > 0 {
                t.push((i, i - 1, -1.0 / (h * h)));
                t.push((i - 1, i, -1.0 / (h * h)));
            }
        }
        let a = CsrMatrix::from_triplets(m, m, &t);
        let v: Vec<f64> = (0..m).map(|i| ((i * 7) % 13) as f64 - 6.0).collect();
        let dense = semigroup_apply(&a, 0.01, &v, &ExpmOptions::default()).unwrap();
        let krylov = semigroup_apply_krylov(&a, 0.01, &v, &ExpmOptions::default()).unwrap();
        // Tolerance is relative to the input norm.
        let err = rel_err(&krylov, &dense) * norm(&dense) / norm(&v);
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn plans_match_single_applications() {
        let a = random_psd(30, 3);
        let v: Vec<f64> = (0..30).map(|i| (i % 7) as f64 - 3.0).collect();
        let times = [0.0, 0.4, 2.0];
        let opts = ExpmOptions::default();
        let plans = SemigroupPlan::for_times(&a, &times, &opts).unwrap();
        for (plan, &t) in plans.iter().zip(&times) {
            let single = semigroup_apply(&a, t, &v, &opts).unwrap();
            assert_eq!(plan.apply(&v).unwrap(), single);
            let krylov = SemigroupPlan::krylov(&a, t, &opts).unwrap();
            assert!(rel_err(&krylov.apply(&v).unwrap(), &single) < 1e-8);
            // the same Krylov plan serves repeated calls
            assert_eq!(krylov.apply(&v).unwrap(), krylov.apply(&v).unwrap());
        }
        assert!(plans[0].apply(&[1.0]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn semigroup_contracts(seed in 0u64..1000, t in 0.0f64..5.0) {
            let a = random_psd(12, seed);
            let v: Vec<f64> = (0..12).map(|i| ((i as u64 * 31 + seed) % 11) as f64 - 5.0).collect();
            let u = semigroup_apply(&a, t, &v, &ExpmOptions::default()).unwrap();
            prop_assert!(norm(&u) <= norm(&v) * (1.0 + 1e-12));
        }
    }
}
