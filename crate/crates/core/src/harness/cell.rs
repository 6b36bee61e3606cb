//! Lowest Dirichlet and second Neumann eigenvalues of one period cell.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{assemble_laplacian, assemble_with_bc, CartesianGrid, FaceBc, NodeMask};
use crate::linalg::{lowest_eigenpairs, EigOptions};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellEigenReport {
    pub n: usize,
    pub eps: f64,
    pub h: f64,
    pub dirichlet: f64,
    /// `n (π/ε)²`.
    pub dirichlet_expected: f64,
    pub dirichlet_rel_err: f64,
    pub neumann: f64,
    /// `(π/ε)²`.
    pub neumann_expected: f64,
    pub neumann_rel_err: f64,
}

/// Eigenvalues of the cell `[0, ε]ⁿ` at `h = ε / ratio`: the lowest Dirichlet
/// one on the vertex grid and the second Neumann one on the cell-centered grid.
pub fn cell_eigenvalues(
    n: usize,
    eps: f64,
    ratio: usize,
    opts: &EigOptions,
) -> Result<CellEigenReport> {
    if ratio < 2 || !(eps > 0.0) {
        return Err(Error::DomainError {
            what: "cell_eigenvalues",
            detail: format!("need eps > 0 and ratio >= 2, got {eps} and {ratio}"),
        });
    }
    let h = eps / ratio as f64;
    let lo = vec![0.0; n];
    let hi = vec![eps; n];
    let base = (PI / eps).powi(2);

    let grid = Arc::new(CartesianGrid::vertex(&lo, &hi, h)?);
    let dir = assemble_laplacian(Arc::new(NodeMask::full(grid)), 0.0)?;
    let (rep, _) = lowest_eigenpairs(dir.matrix(), 1, opts)?;
    let dirichlet = rep.eigenvalues[0];

    // Shift by one so the constant mode does not make the matrix singular.
    let grid = Arc::new(CartesianGrid::cell(&lo, &hi, h)?);
    let neu = assemble_with_bc(
        Arc::new(NodeMask::full(grid)),
        1.0,
        &vec![[FaceBc::Neumann; 2]; n],
    )?;
    let (rep, _) = lowest_eigenpairs(neu.matrix(), 2, opts)?;
    let neumann = rep.eigenvalues[1] - 1.0;

    let dirichlet_expected = n as f64 * base;
    Ok(CellEigenReport {
        n,
        eps,
        h,
        dirichlet,
        dirichlet_expected,
        dirichlet_rel_err: (dirichlet - dirichlet_expected).abs() / dirichlet_expected,
        neumann,
        neumann_expected: base,
        neumann_rel_err: (neumann - base).abs() / base,
    })
}
