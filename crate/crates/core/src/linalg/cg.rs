use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::sparse::CsrMatrix;
use crate::error::{Error, Result};

/// A linear map `ℝᴺ → ℝᴺ` given by its action.
pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

impl LinearOperator for CsrMatrix {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.matvec(x, y);
    }
}

/// `A + shift·I`.
pub struct Shifted<'a, A: ?Sized> {
    pub op: &'a A,
    pub shift: f64,
}

impl<A: LinearOperator + ?Sized> LinearOperator for Shifted<'_, A> {
    fn dim(&self) -> usize {
        self.op.dim()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.op.apply(x, y);
        for (yi, xi) in y.iter_mut().zip(x) {
            *yi += self.shift * xi;
        }
    }
}

/// Approximate inverse used by preconditioned CG; must be symmetric positive
/// definite.
pub trait Preconditioner: Sync {
    fn precondition(&self, r: &[f64], z: &mut [f64]);
}

pub struct IdentityPreconditioner;

impl Preconditioner for IdentityPreconditioner {
    fn precondition(&self, r: &[f64], z: &mut [f64]) {
        z.copy_from_slice(r);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CgOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 20_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub relative_residual: f64,
    pub wall_time_s: f64,
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn residual<A: LinearOperator + ?Sized>(op: &A, x: &[f64], b: &[f64], r: &mut [f64]) {
    op.apply(x, r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
}

/// Preconditioned conjugate gradients for `op · x = rhs`; stops once the true
/// relative residual `‖rhs − op·x‖/‖rhs‖` is at most `opts.tol`.
pub fn cg_solve<A, P>(
    op: &A,
    precond: &P,
    rhs: &[f64],
    opts: &CgOptions,
) -> Result<(Vec<f64>, SolveReport)>
where
    A: LinearOperator + ?Sized,
    P: Preconditioner + ?Sized,
{
    cg_solve_observed(op, precond, rhs, None, opts, &mut |_, _| {})
}

/// [`cg_solve`] with an optional initial guess and a callback receiving every
/// iterate.
pub fn cg_solve_observed<A, P>(
    op: &A,
    precond: &P,
    rhs: &[f64],
    x0: Option<&[f64]>,
    opts: &CgOptions,
    observer: &mut dyn FnMut(usize, &[f64]),
) -> Result<(Vec<f64>, SolveReport)>
where
    A: LinearOperator + ?Sized,
    P: Preconditioner + ?Sized,
{
    let start = Instant::now();
    let n = op.dim();
    assert_eq!(rhs.len(), n);
    let bnorm = norm(rhs);
    let mut x = x0.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok((
            x,
            SolveReport {
                iterations: 0,
                relative_residual: 0.0,
                wall_time_s: start.elapsed().as_secs_f64(),
            },
        ));
    }
    let mut r = vec![0.0; n];
    residual(op, &x, rhs, &mut r);
    let mut z = vec![0.0; n];
    let mut q = vec![0.0; n];
    precond.precondition(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut rel = norm(&r) / bnorm;
    let mut it = 0;
    observer(0, &x);
    while it < opts.max_iter {
        if rel <= opts.tol {
            // Confirm with the true residual; the recursion can drift.
            residual(op, &x, rhs, &mut r);
            rel = norm(&r) / bnorm;
            if rel <= opts.tol {
                return Ok((
                    x,
                    SolveReport {
                        iterations: it,
                        relative_residual: rel,
                        wall_time_s: start.elapsed().as_secs_f64(),
                    },
                ));
            }
            precond.precondition(&r, &mut z);
            p.copy_from_slice(&z);
            rz = dot(&r, &z);
        }
        op.apply(&p, &mut q);
        let pq = dot(&p, &q);
        if !(pq > 0.0) {
            return Err(Error::NotPsd(format!(
                "non-positive curvature p'Ap = {pq:e} at CG iteration {it}"
            )));
        }
        let alpha = rz / pq;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        it += 1;
        observer(it, &x);
        rel = norm(&r) / bnorm;
        precond.precondition(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    residual(op, &x, rhs, &mut r);
    let rel = norm(&r) / bnorm;
    if rel <= opts.tol {
        return Ok((
            x,
            SolveReport {
                iterations: it,
                relative_residual: rel,
                wall_time_s: start.elapsed().as_secs_f64(),
            },
        ));
    }
    Err(Error::CgNotConverged {
        iterations: it,
        residual: rel,
        tol: opts.tol,
        best: x,
    })
}
