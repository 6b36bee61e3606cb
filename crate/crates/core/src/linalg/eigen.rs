//! Lowest eigenpairs of sparse symmetric operators.
//!
//! Small problems go straight to a dense symmetric eigendecomposition. Larger
//! ones use LOBPCG with an AMG preconditioner and explicit orthonormalization
//! of the `[X, W, P]` search space before each Rayleigh–Ritz step.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::amg::AmgHierarchy;
use super::cg::{dot, norm, IdentityPreconditioner, Preconditioner};
use super::dense::{SymmetricSpectral, DEFAULT_DENSE_LIMIT};
use super::sparse::CsrMatrix;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigReport {
    pub k: usize,
    /// Ascending, repeated according to multiplicity.
    pub eigenvalues: Vec<f64>,
    /// `‖A x − λ x‖ / max(1, |λ|)` for unit `x`.
    pub residuals: Vec<f64>,
    /// `1 / (λ + 1)`.
    pub mu: Vec<f64>,
    pub iterations: usize,
    pub method: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub dense_limit: usize,
    pub precondition: bool,
}

impl Default for EigOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 1000,
            seed: 0,
            dense_limit: DEFAULT_DENSE_LIMIT,
            precondition: true,
        }
    }
}

fn rel_residual(a: &CsrMatrix, x: &[f64], lambda: f64) -> f64 {
    let ax = a.mul_vec(x);
    let r: f64 = ax
        .iter()
        .zip(x)
        .map(|(p, q)| (p - lambda * q).powi(2))
        .sum::<f64>()
        .sqrt();
    r / norm(x) / lambda.abs().max(1.0)
}

fn report(
    a: &CsrMatrix,
    k: usize,
    values: Vec<f64>,
    vectors: &[Vec<f64>],
    iterations: usize,
    method: &str,
) -> EigReport {
    let residuals = values
        .iter()
        .zip(vectors)
        .map(|(&l, x)| rel_residual(a, x, l))
        .collect();
    EigReport {
        k,
        mu: values.iter().map(|l| 1.0 / (l + 1.0)).collect(),
        eigenvalues: values,
        residuals,
        iterations,
        method: method.to_string(),
    }
}

/// The `k` smallest eigenpairs of the symmetric matrix `a`; eigenvectors are
/// returned with unit Euclidean norm.
pub fn lowest_eigenpairs(
    a: &CsrMatrix,
    k: usize,
    opts: &EigOptions,
) -> Result<(EigReport, Vec<Vec<f64>>)> {
    let n = a.nrows();
    if k > n {
        return Err(Error::DomainError {
            what: "lowest_eigenpairs",
            detail: format!("k = {k} exceeds dimension {n}"),
        });
    }
    let block = block_size(k, n);
    if n <= opts.dense_limit || n <= 4 * block + 10 {
        let sp = SymmetricSpectral::new(&a.to_dense(), usize::MAX)?;
        let values: Vec<f64> = sp.values.iter().take(k).copied().collect();
        let vectors: Vec<Vec<f64>> = (0..k)
            .map(|c| sp.vectors.column(c).iter().copied().collect())
            .collect();
        return Ok((report(a, k, values, &vectors, 0, "dense"), vectors));
    }
    if opts.precondition {
        let amg = AmgHierarchy::new(a);
        lobpcg(a, &amg, k, block, opts)
    } else {
        lobpcg(a, &IdentityPreconditioner, k, block, opts)
    }
}

fn block_size(k: usize, n: usize) -> usize {
    (k + (k / 4).max(3)).min(n)
}

/// Orthonormalizes `basis` in order with two passes of Gram–Schmidt, dropping
/// numerically dependent columns.
fn orthonormalize(basis: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(basis.len());
    for mut v in basis {
        let start = norm(&v);
        if start == 0.0 {
            continue;
        }
        for _ in 0..2 {
            for q in &out {
                let c = dot(q, &v);
                v.iter_mut().zip(q).for_each(|(vi, qi)| *vi -= c * qi);
            }
        }
        let nv = norm(&v);
        if nv > 1e-10 * start {
            v.iter_mut().for_each(|x| *x /= nv);
            out.push(v);
        }
    }
    out
}

fn combine(
    cols: &[Vec<f64>],
    coeffs: &DMatrix<f64>,
    c: usize,
    rows: std::ops::Range<usize>,
) -> Vec<f64> {
    let n = cols[0].len();
    let mut out = vec![0.0; n];
    for r in rows {
        let s = coeffs[(r, c)];
        out.iter_mut().zip(&cols[r]).for_each(|(o, q)| *o += s * q);
    }
    out
}

struct Ritz {
    values: Vec<f64>,
    coeffs: DMatrix<f64>,
}

fn rayleigh_ritz(q: &[Vec<f64>], aq: &[Vec<f64>]) -> Ritz {
    let m = q.len();
    let mut h = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..=i {
            let v = 0.5 * (dot(&q[i], &aq[j]) + dot(&q[j], &aq[i]));
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    let sp = SymmetricSpectral::new(&h, usize::MAX).expect("no limit");
    Ritz {
        values: sp.values.iter().copied().collect(),
        coeffs: sp.vectors,
    }
}

fn lobpcg<P: Preconditioner + ?Sized>(
    a: &CsrMatrix,
    precond: &P,
    k: usize,
    m: usize,
    opts: &EigOptions,
) -> Result<(EigReport, Vec<Vec<f64>>)> {
    let n = a.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let init: Vec<Vec<f64>> = (0..m)
        .map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let mut q = orthonormalize(init);
    let mut aq: Vec<Vec<f64>> = q.iter().map(|v| a.mul_vec(v)).collect();
    let rr = rayleigh_ritz(&q, &aq);
    let mut lambda: Vec<f64> = rr.values[..m].to_vec();
    let mut x: Vec<Vec<f64>> = (0..m)
        .map(|c| combine(&q, &rr.coeffs, c, 0..q.len()))
        .collect();
    let mut ax: Vec<Vec<f64>> = (0..m)
        .map(|c| combine(&aq, &rr.coeffs, c, 0..q.len()))
        .collect();
    let mut p: Vec<Vec<f64>> = Vec::new();
    let mut res = vec![f64::INFINITY; m];
    for it in 1..=opts.max_iter {
        let mut w = Vec::new();
        for i in 0..m {
            let r: Vec<f64> = ax[i]
                .iter()
                .zip(&x[i])
                .map(|(s, v)| s - lambda[i] * v)
                .collect();
            res[i] = norm(&r) / lambda[i].abs().max(1.0);
            if res[i] > opts.tol {
                let mut z = vec![0.0; n];
                precond.precondition(&r, &mut z);
                w.push(z);
            }
        }
        if res[..k].iter().all(|&r| r <= opts.tol) {
            let vectors: Vec<Vec<f64>> = x.into_iter().take(k).collect();
            return Ok((
                report(a, k, lambda[..k].to_vec(), &vectors, it - 1, "lobpcg"),
                vectors,
            ));
        }
        let mut basis = x.clone();
        basis.append(&mut w);
        basis.append(&mut p);
        q = orthonormalize(basis);
        aq = q.iter().map(|v| a.mul_vec(v)).collect();
        let rr = rayleigh_ritz(&q, &aq);
        let nq = q.len();
        lambda = rr.values[..m].to_vec();
        x = (0..m).map(|c| combine(&q, &rr.coeffs, c, 0..nq)).collect();
        ax = (0..m).map(|c| combine(&aq, &rr.coeffs, c, 0..nq)).collect();
        p = (0..m)
            .map(|c| combine(&q, &rr.coeffs, c, m.min(nq)..nq))
            .collect();
    }
    Err(Error::EigNotConverged {
        requested: k,
        converged: res[..k].iter().take_while(|&&r| r <= opts.tol).count(),
        iterations: opts.max_iter,
        eigenvalues: lambda[..k].to_vec(),
    })
}
