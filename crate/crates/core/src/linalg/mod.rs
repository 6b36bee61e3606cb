//! Sparse and dense linear algebra for the solvers and the small-instance oracles.

pub mod amg;
pub mod cg;
pub mod dense;
pub mod eigen;
pub mod expm;
pub mod sparse;

pub use amg::{AmgHierarchy, AmgOptions};
pub use cg::{
    cg_solve, cg_solve_observed, CgOptions, IdentityPreconditioner, LinearOperator, Preconditioner,
    Shifted, SolveReport,
};
pub use dense::{
    dense_opnorm, hausdorff_distance, unweighted_opnorm, SymmetricSpectral, DEFAULT_DENSE_LIMIT,
};
pub use eigen::{lowest_eigenpairs, EigOptions, EigReport};
pub use expm::{semigroup_apply, semigroup_apply_krylov, ExpmOptions, SemigroupPlan};
pub use sparse::CsrMatrix;
