//! Smoothed-aggregation algebraic multigrid, used as a CG preconditioner for
//! the masked stencil operators.
//!
//! Aggregates follow the usual three-pass greedy scheme over the matrix graph,
//! the tentative prolongator is piecewise constant, and one damped-Jacobi
//! step smooths it. A V-cycle with a forward Gauss–Seidel pre-sweep and a
//! backward post-sweep is symmetric, so it can precondition CG.

use nalgebra::{DMatrix, DVector};

use super::cg::Preconditioner;
use super::sparse::CsrMatrix;

#[derive(Clone, Copy, Debug)]
pub struct AmgOptions {
    pub max_coarse: usize,
    pub max_levels: usize,
}

impl Default for AmgOptions {
    fn default() -> Self {
        Self {
            max_coarse: 400,
            max_levels: 25,
        }
    }
}

struct Level {
    a: CsrMatrix,
    p: CsrMatrix,
    r: CsrMatrix,
}

enum CoarseSolver {
    Cholesky(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    /// Pseudo-inverse for singular (semidefinite) coarse matrices.
    Pinv(DMatrix<f64>),
}

pub struct AmgHierarchy {
    levels: Vec<Level>,
    coarse_a: CsrMatrix,
    coarse: CoarseSolver,
}

fn aggregate(a: &CsrMatrix) -> (Vec<usize>, usize) {
    let n = a.nrows();
    const NONE: usize = usize::MAX;
    let mut agg = vec![NONE; n];
    let mut count = 0;
    let strong = |i: usize| {
        a.row(i)
            .filter(move |&(j, v)| j != i && v != 0.0)
            .map(|e| e.0)
    };
    for i in 0..n {
        if agg[i] != NONE {
            continue;
        }
        if strong(i).all(|j| agg[j] == NONE) {
            agg[i] = count;
            for j in strong(i) {
                agg[j] = count;
            }
            count += 1;
        }
    }
    let phase1 = agg.clone();
    for i in 0..n {
        if agg[i] == NONE {
            if let Some(j) = strong(i).find(|&j| phase1[j] != NONE) {
                agg[i] = phase1[j];
            }
        }
    }
    for i in 0..n {
        if agg[i] == NONE {
            agg[i] = count;
            for j in strong(i) {
                if agg[j] == NONE {
                    agg[j] = count;
                }
            }
            count += 1;
        }
    }
    (agg, count)
}

/// Spectral radius estimate of `D^{-1/2} A D^{-1/2}`.
fn jacobi_radius(a: &CsrMatrix, dinv_sqrt: &[f64]) -> f64 {
    let n = a.nrows();
    // Deterministic, non-smooth start vector.
    let mut x: Vec<f64> = (0..n)
        .map(|i| ((i.wrapping_mul(2654435761) % 1000) as f64 / 1000.0) - 0.5 + 1e-3)
        .collect();
    let mut y = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    let mut lambda = 1.0;
    for _ in 0..20 {
        let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if nx == 0.0 {
            break;
        }
        for (i, xi) in x.iter_mut().enumerate() {
            *xi *= dinv_sqrt[i] / nx;
        }
        a.matvec(&x, &mut tmp);
        for i in 0..n {
            y[i] = tmp[i] * dinv_sqrt[i];
            x[i] /= dinv_sqrt[i];
        }
        lambda = x.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>();
        std::mem::swap(&mut x, &mut y);
    }
    lambda
}

impl AmgHierarchy {
    pub fn new(a: &CsrMatrix) -> Self {
        Self::with_options(a, &AmgOptions::default())
    }

    pub fn with_options(a: &CsrMatrix, opts: &AmgOptions) -> Self {
        let mut levels = Vec::new();
        let mut current = a.clone();
        while current.nrows() > opts.max_coarse && levels.len() + 1 < opts.max_levels {
            let n = current.nrows();
            let (agg, nc) = aggregate(&current);
            if nc == 0 || nc * 10 > n * 9 {
                break;
            }
            let mut sizes = vec![0usize; nc];
            for &g in &agg {
                sizes[g] += 1;
            }
            let tentative = CsrMatrix::from_raw(
                n,
                nc,
                (0..=n).collect(),
                agg.iter().map(|&g| g as u32).collect(),
                agg.iter()
                    .map(|&g| 1.0 / (sizes[g] as f64).sqrt())
                    .collect(),
            );
            let diag = current.diagonal();
            let dinv_sqrt: Vec<f64> = diag
                .iter()
                .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 1.0 })
                .collect();
            let rho = jacobi_radius(&current, &dinv_sqrt).max(1e-12) * 1.05;
            let omega = 4.0 / 3.0 / rho;
            // P = (I - ω D⁻¹ A) P_tent
            let ap = current.matmul(&tentative);
            let mut trip = Vec::with_capacity(ap.nnz() + n);
            for r in 0..n {
                for (c, v) in tentative.row(r) {
                    trip.push((r, c, v));
                }
                let s = omega * dinv_sqrt[r] * dinv_sqrt[r];
                for (c, v) in ap.row(r) {
                    trip.push((r, c, -s * v));
                }
            }
            let p = CsrMatrix::from_triplets(n, nc, &trip);
            let r = p.transpose();
            let coarse = r.matmul(&current.matmul(&p));
            levels.push(Level { a: current, p, r });
            current = coarse;
        }
        let dense = current.to_dense();
        let coarse = match dense.clone().cholesky() {
            Some(c) => CoarseSolver::Cholesky(c),
            None => {
                let eig = dense.symmetric_eigen();
                let tol = eig.eigenvalues.amax() * 1e-12;
                let inv = eig
                    .eigenvalues
                    .map(|l| if l.abs() > tol { 1.0 / l } else { 0.0 });
                CoarseSolver::Pinv(
                    &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose(),
                )
            }
        };
        Self {
            levels,
            coarse_a: current,
            coarse,
        }
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len() + 1
    }

    pub fn coarse_size(&self) -> usize {
        self.coarse_a.nrows()
    }

    fn gauss_seidel(a: &CsrMatrix, b: &[f64], x: &mut [f64], forward: bool) {
        let n = a.nrows();
        let mut step = |i: usize| {
            let mut acc = b[i];
            let mut diag = 0.0;
            for (j, v) in a.row(i) {
                if j == i {
                    diag = v;
                } else {
                    acc -= v * x[j];
                }
            }
            if diag != 0.0 {
                x[i] = acc / diag;
            }
        };
        if forward {
            (0..n).for_each(&mut step);
        } else {
            (0..n).rev().for_each(&mut step);
        }
    }

    fn vcycle(&self, level: usize, b: &[f64], x: &mut [f64]) {
        if level == self.levels.len() {
            let rhs = DVector::from_column_slice(b);
            let sol = match &self.coarse {
                CoarseSolver::Cholesky(c) => c.solve(&rhs),
                CoarseSolver::Pinv(m) => m * rhs,
            };
            x.copy_from_slice(sol.as_slice());
            return;
        }
        let lv = &self.levels[level];
        x.iter_mut().for_each(|v| *v = 0.0);
        Self::gauss_seidel(&lv.a, b, x, true);
        let mut res = lv.a.mul_vec(x);
        for (ri, bi) in res.iter_mut().zip(b) {
            *ri = bi - *ri;
        }
        let bc = lv.r.mul_vec(&res);
        let mut xc = vec![0.0; bc.len()];
        self.vcycle(level + 1, &bc, &mut xc);
        let corr = lv.p.mul_vec(&xc);
        for (xi, ci) in x.iter_mut().zip(&corr) {
            *xi += ci;
        }
        Self::gauss_seidel(&lv.a, b, x, false);
    }
}

impl Preconditioner for AmgHierarchy {
    fn precondition(&self, r: &[f64], z: &mut [f64]) {
        self.vcycle(0, r, z);
    }
}
