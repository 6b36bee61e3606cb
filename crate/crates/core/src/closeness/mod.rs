//! Quantitative closeness of two self-adjoint operators on different spaces.
//!
//! A [`FormPair`] holds the form matrices `K` (so `a[u, v] = uᵀ K v`) and
//! diagonal inner-product weights `W` of both spaces; the operator is
//! `A = W⁻¹K`. All norms are evaluated in the orthonormal ("hat") frame
//! `Â = W^{-1/2} K W^{-1/2}`, `M̂ = W_out^{1/2} M W_in^{-1/2}`, where weighted
//! operator norms become spectral norms.

mod j1;
mod random;

pub use j1::{
    build_j1, pde_instance, smoothstep, CutoffKind, J1Matrix, J1Options, PdeInstance,
    PotentialSource,
};
pub use random::{near_identical_instance, random_instance, random_instance_dims};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridOperator;
use crate::linalg::dense::to_hat;
use crate::linalg::{
    hausdorff_distance, unweighted_opnorm, SymmetricSpectral, DEFAULT_DENSE_LIMIT,
};

/// Forms of the unperturbed (`k`, size N) and perturbed (`k_eps`, size M)
/// operators and the weights of both spaces.
#[derive(Clone, Debug, PartialEq)]
pub struct FormPair {
    k: DMatrix<f64>,
    k_eps: DMatrix<f64>,
    w: Vec<f64>,
    w_eps: Vec<f64>,
}

fn check_form(k: &DMatrix<f64>, w: &[f64], name: &str) -> Result<()> {
    if !k.is_square() || k.nrows() != w.len() {
        return Err(Error::GridMismatch(format!(
            "{name}: form is {}x{} with {} weights",
            k.nrows(),
            k.ncols(),
            w.len()
        )));
    }
    if w.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
        return Err(Error::NotPsd(format!("{name}: weights must be positive")));
    }
    let scale = k.amax().max(f64::MIN_POSITIVE);
    let asym = (k - k.transpose()).amax() / scale;
    if asym > 1e-12 {
        return Err(Error::NotPsd(format!(
            "{name}: relative asymmetry {asym:e}"
        )));
    }
    Ok(())
}

impl FormPair {
    pub fn new(k: DMatrix<f64>, w: Vec<f64>, k_eps: DMatrix<f64>, w_eps: Vec<f64>) -> Result<Self> {
        check_form(&k, &w, "A")?;
        check_form(&k_eps, &w_eps, "A_eps")?;
        Ok(Self { k, k_eps, w, w_eps })
    }

    /// Dense forms `hⁿ(S + qI)` of two grid operators on the same grid.
    pub fn from_operators(
        full: &GridOperator,
        perforated: &GridOperator,
        limit: usize,
    ) -> Result<Self> {
        let size = full.dim().max(perforated.dim());
        if size > limit {
            return Err(Error::SizeLimit { size, limit });
        }
        let w = full.weight();
        let we = perforated.weight();
        Self::new(
            full.matrix().to_dense() * w,
            vec![w; full.dim()],
            perforated.matrix().to_dense() * we,
            vec![we; perforated.dim()],
        )
    }

    pub fn dim(&self) -> usize {
        self.k.nrows()
    }

    pub fn dim_eps(&self) -> usize {
        self.k_eps.nrows()
    }

    pub fn form(&self) -> &DMatrix<f64> {
        &self.k
    }

    pub fn form_eps(&self) -> &DMatrix<f64> {
        &self.k_eps
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn weights_eps(&self) -> &[f64] {
        &self.w_eps
    }

    /// Multiplies both weights and both forms by `s` (leaves both operators unchanged).
    pub fn rescaled(&self, s: f64) -> Self {
        Self {
            k: &self.k * s,
            k_eps: &self.k_eps * s,
            w: self.w.iter().map(|x| x * s).collect(),
            w_eps: self.w_eps.iter().map(|x| x * s).collect(),
        }
    }
}

/// `J, J¹: H → H_ε` and `J′, J¹′: H_ε → H` as matrices, with the order `k` of
/// the last condition.
#[derive(Clone, Debug, PartialEq)]
pub struct IdentificationSet {
    pub j: DMatrix<f64>,
    pub jp: DMatrix<f64>,
    pub j1: DMatrix<f64>,
    pub j1p: DMatrix<f64>,
    pub k: u8,
}

impl IdentificationSet {
    fn check(&self, pair: &FormPair) -> Result<()> {
        let (n, m) = (pair.dim(), pair.dim_eps());
        let ok = self.j.shape() == (m, n)
            && self.j1.shape() == (m, n)
            && self.jp.shape() == (n, m)
            && self.j1p.shape() == (n, m);
        if !ok {
            return Err(Error::GridMismatch(format!(
                "identification maps do not match dimensions N = {n}, M = {m}"
            )));
        }
        if self.k != 1 && self.k != 2 {
            return Err(Error::Config(format!(
                "order k = {} must be 1 or 2",
                self.k
            )));
        }
        Ok(())
    }

    /// All four maps equal to the identity.
    pub fn identity(n: usize, k: u8) -> Self {
        let i = DMatrix::identity(n, n);
        Self {
            j: i.clone(),
            jp: i.clone(),
            j1: i.clone(),
            j1p: i,
            k,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosenessConstants {
    pub c1a: f64,
    pub c1b: f64,
    pub c2: f64,
    pub c3a: f64,
    pub c3b: f64,
    pub c4a: f64,
    pub c4b: f64,
    pub c5: f64,
    pub delta: f64,
    pub k: u8,
}

impl ClosenessConstants {
    pub fn as_array(&self) -> [f64; 8] {
        [
            self.c1a, self.c1b, self.c2, self.c3a, self.c3b, self.c4a, self.c4b, self.c5,
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundFlags {
    pub resolvent: bool,
    pub extension: bool,
    pub sandwich: bool,
    pub reverse: bool,
}

impl BoundFlags {
    pub fn all(&self) -> bool {
        self.resolvent && self.extension && self.sandwich && self.reverse
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosenessReport {
    pub constants: ClosenessConstants,
    /// `‖(A_ε+1)⁻¹J − J(A+1)⁻¹‖`, bounded by `4δ`.
    pub lhs_resolvent: f64,
    /// `‖J′(A_ε+1)⁻¹ − (A+1)⁻¹J′‖`, bounded by `6δ`.
    pub lhs_extension: f64,
    /// `‖J′(A_ε+1)⁻¹J − (A+1)⁻¹‖`, bounded by `9δ`.
    pub lhs_sandwich: f64,
    /// `‖(A_ε+1)⁻¹ − J(A+1)⁻¹J′‖`, bounded by `13δ`.
    pub lhs_reverse: f64,
    /// `lhs / δ` in the order above (infinite when δ = 0 and lhs > 0).
    pub ratios: [f64; 4],
    pub slack: f64,
    pub bound_ok: BoundFlags,
}

/// Function applied through the spectral theorem.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Psi {
    /// `e^{−λt}`.
    Heat { t: f64 },
    /// Indicator of the open interval `(alpha, beta)`.
    Projection { alpha: f64, beta: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionalCalculusReport {
    pub psi: Psi,
    /// `‖ψ(A_ε)J − Jψ(A)‖`.
    pub lhs_intertwining: f64,
    /// `‖ψ(A_ε) − Jψ(A)J′‖`.
    pub lhs_sandwich: f64,
    pub delta: f64,
    pub ratio_intertwining: f64,
    pub ratio_sandwich: f64,
    /// Number of eigenvalues inside the interval, for projections.
    pub rank: Option<usize>,
    pub rank_eps: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HausdorffReport {
    /// Hausdorff distance of `1/(1+σ(A))` and `1/(1+σ(A_ε))`.
    pub distance: f64,
    pub delta: f64,
    pub spectrum: Vec<f64>,
    pub spectrum_eps: Vec<f64>,
}

fn ratio(lhs: f64, delta: f64) -> f64 {
    if delta > 0.0 {
        lhs / delta
    } else if lhs == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Everything needed for the dense evaluations, in the hat frame.
pub struct Analysis {
    spec: SymmetricSpectral,
    spec_eps: SymmetricSpectral,
    j: DMatrix<f64>,
    jp: DMatrix<f64>,
    j1: DMatrix<f64>,
    j1p: DMatrix<f64>,
    k: u8,
}

fn hat_form(k: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let mut out = k.clone();
    for c in 0..k.ncols() {
        for r in 0..k.nrows() {
            out[(r, c)] /= (w[r] * w[c]).sqrt();
        }
    }
    // exact symmetry for the eigensolver
    (&out + out.transpose()) * 0.5
}

fn check_psd(spec: &SymmetricSpectral, name: &str) -> Result<()> {
    let scale = spec.values.amax().max(1.0);
    if let Some(&min) = spec.values.as_slice().first() {
        if min < -1e-10 * scale {
            return Err(Error::NotPsd(format!("{name}: eigenvalue {min:e}")));
        }
    }
    Ok(())
}

impl Analysis {
    pub fn new(pair: &FormPair, ids: &IdentificationSet, limit: usize) -> Result<Self> {
        ids.check(pair)?;
        let size = pair.dim().max(pair.dim_eps());
        if size > limit {
            return Err(Error::SizeLimit { size, limit });
        }
        let spec = SymmetricSpectral::new(&hat_form(&pair.k, &pair.w), limit)?;
        let spec_eps = SymmetricSpectral::new(&hat_form(&pair.k_eps, &pair.w_eps), limit)?;
        check_psd(&spec, "A")?;
        check_psd(&spec_eps, "A_eps")?;
        Ok(Self {
            spec,
            spec_eps,
            j: to_hat(&ids.j, &pair.w, &pair.w_eps),
            jp: to_hat(&ids.jp, &pair.w_eps, &pair.w),
            j1: to_hat(&ids.j1, &pair.w, &pair.w_eps),
            j1p: to_hat(&ids.j1p, &pair.w_eps, &pair.w),
            k: ids.k,
        })
    }

    fn pos(l: f64) -> f64 {
        l.max(0.0)
    }

    /// The best constants of the eight conditions.
    pub fn constants(&self) -> ClosenessConstants {
        let n = self.spec.dim();
        let m = self.spec_eps.dim();
        let r = self.spec.matrix(|l| (Self::pos(l) + 1.0).powf(-0.5));
        let r_eps = self.spec_eps.matrix(|l| (Self::pos(l) + 1.0).powf(-0.5));
        let k = self.k as f64;
        let r_k = self.spec.matrix(|l| (Self::pos(l) + 1.0).powf(-k / 2.0));
        let a = self.spec.matrix(Self::pos);
        let a_eps = self.spec_eps.matrix(Self::pos);
        let c1a = unweighted_opnorm(&((&self.j - &self.j1) * &r));
        let c1b = unweighted_opnorm(&((&self.jp - &self.j1p) * &r_eps));
        let c2 = unweighted_opnorm(&(self.j.transpose() - &self.jp));
        let c3a = (unweighted_opnorm(&self.j) - 1.0).max(0.0);
        let c3b = (unweighted_opnorm(&self.jp) - 1.0).max(0.0);
        let c4a = unweighted_opnorm(&((DMatrix::identity(n, n) - &self.jp * &self.j) * &r));
        let c4b = unweighted_opnorm(&((DMatrix::identity(m, m) - &self.j * &self.jp) * &r_eps));
        let mixed = self.j1.transpose() * &a_eps - &a * &self.j1p;
        let c5 = unweighted_opnorm(&(r_k * mixed * r_eps));
        let all = [c1a, c1b, c2, c3a, c3b, c4a, c4b, c5];
        ClosenessConstants {
            c1a,
            c1b,
            c2,
            c3a,
            c3b,
            c4a,
            c4b,
            c5,
            delta: all.iter().copied().fold(0.0, f64::max),
            k: self.k,
        }
    }

    /// The four resolvent differences and their bounds `4δ, 6δ, 9δ, 13δ`
    /// (each with additive `slack`).
    pub fn resolvent_report(&self, constants: &ClosenessConstants, slack: f64) -> ClosenessReport {
        let res = self.spec.matrix(|l| 1.0 / (Self::pos(l) + 1.0));
        let res_eps = self.spec_eps.matrix(|l| 1.0 / (Self::pos(l) + 1.0));
        let lhs_resolvent = unweighted_opnorm(&(&res_eps * &self.j - &self.j * &res));
        let lhs_extension = unweighted_opnorm(&(&self.jp * &res_eps - &res * &self.jp));
        let lhs_sandwich = unweighted_opnorm(&(&self.jp * &res_eps * &self.j - &res));
        let lhs_reverse = unweighted_opnorm(&(&res_eps - &self.j * &res * &self.jp));
        let d = constants.delta;
        ClosenessReport {
            constants: constants.clone(),
            lhs_resolvent,
            lhs_extension,
            lhs_sandwich,
            lhs_reverse,
            ratios: [
                ratio(lhs_resolvent, d),
                ratio(lhs_extension, d),
                ratio(lhs_sandwich, d),
                ratio(lhs_reverse, d),
            ],
            slack,
            bound_ok: BoundFlags {
                resolvent: lhs_resolvent <= 4.0 * d + slack,
                extension: lhs_extension <= 6.0 * d + slack,
                sandwich: lhs_sandwich <= 9.0 * d + slack,
                reverse: lhs_reverse <= 13.0 * d + slack,
            },
        }
    }

    pub fn functional_calculus(&self, psi: Psi, delta: f64) -> Result<FunctionalCalculusReport> {
        let (f, rank, rank_eps): (Box<dyn Fn(f64) -> f64>, _, _) = match psi {
            Psi::Heat { t } => {
                if !(t >= 0.0) {
                    return Err(Error::DomainError {
                        what: "verify_functional_calculus",
                        detail: format!("t = {t} must be nonnegative"),
                    });
                }
                (
                    Box::new(move |l: f64| (-Self::pos(l) * t).exp()),
                    None,
                    None,
                )
            }
            Psi::Projection { alpha, beta } => {
                for endpoint in [alpha, beta] {
                    let near = |s: &SymmetricSpectral| {
                        s.values.iter().any(|&l| (l - endpoint).abs() < 1e-6)
                    };
                    if near(&self.spec) && near(&self.spec_eps) {
                        return Err(Error::SpectralGap { endpoint });
                    }
                }
                let inside = move |l: f64| l > alpha && l < beta;
                let count = |s: &SymmetricSpectral| s.values.iter().filter(|&&l| inside(l)).count();
                (
                    Box::new(move |l: f64| if inside(l) { 1.0 } else { 0.0 }),
                    Some(count(&self.spec)),
                    Some(count(&self.spec_eps)),
                )
            }
        };
        let fa = self.spec.matrix(&f);
        let fa_eps = self.spec_eps.matrix(&f);
        let lhs_intertwining = unweighted_opnorm(&(&fa_eps * &self.j - &self.j * &fa));
        let lhs_sandwich = unweighted_opnorm(&(&fa_eps - &self.j * &fa * &self.jp));
        Ok(FunctionalCalculusReport {
            psi,
            lhs_intertwining,
            lhs_sandwich,
            delta,
            ratio_intertwining: ratio(lhs_intertwining, delta),
            ratio_sandwich: ratio(lhs_sandwich, delta),
            rank,
            rank_eps,
        })
    }

    pub fn hausdorff(&self, delta: f64) -> Result<HausdorffReport> {
        let map = |s: &SymmetricSpectral| -> Vec<f64> {
            s.values
                .iter()
                .map(|&l| 1.0 / (1.0 + Self::pos(l)))
                .collect()
        };
        let spectrum = map(&self.spec);
        let spectrum_eps = map(&self.spec_eps);
        Ok(HausdorffReport {
            distance: hausdorff_distance(&spectrum, &spectrum_eps)?,
            delta,
            spectrum,
            spectrum_eps,
        })
    }

    /// Eigenvalues of `A` and `A_ε`, ascending.
    pub fn spectra(&self) -> (Vec<f64>, Vec<f64>) {
        (
            self.spec.values.iter().copied().collect(),
            self.spec_eps.values.iter().copied().collect(),
        )
    }
}

/// Best constants of the eight closeness conditions via dense SVD.
pub fn condition_constants(pair: &FormPair, ids: &IdentificationSet) -> Result<ClosenessConstants> {
    Ok(Analysis::new(pair, ids, DEFAULT_DENSE_LIMIT)?.constants())
}

/// Evaluates the four resolvent differences against `4δ, 6δ, 9δ, 13δ + slack`.
pub fn verify_resolvent_bound(
    pair: &FormPair,
    ids: &IdentificationSet,
    constants: &ClosenessConstants,
    slack: f64,
) -> Result<ClosenessReport> {
    Ok(Analysis::new(pair, ids, DEFAULT_DENSE_LIMIT)?.resolvent_report(constants, slack))
}

pub fn verify_functional_calculus(
    pair: &FormPair,
    ids: &IdentificationSet,
    constants: &ClosenessConstants,
    psi: Psi,
) -> Result<FunctionalCalculusReport> {
    Analysis::new(pair, ids, DEFAULT_DENSE_LIMIT)?.functional_calculus(psi, constants.delta)
}

pub fn verify_spectral_hausdorff(
    pair: &FormPair,
    ids: &IdentificationSet,
    constants: &ClosenessConstants,
) -> Result<HausdorffReport> {
    Analysis::new(pair, ids, DEFAULT_DENSE_LIMIT)?.hausdorff(constants.delta)
}
