//! Capacities and capacity potentials of single holes.
//!
//! The numeric solver works on a cell-centered grid around the hole. For
//! reflection-symmetric shapes only the positive orthant is discretized, with
//! mirror (Neumann) faces on the coordinate planes, and the energy is scaled
//! by `2ⁿ`.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::HoleShape;
use crate::grid::{assemble_with_bc, CartesianGrid, FaceBc, NodeMask};
use crate::linalg::{cg_solve, AmgHierarchy, CgOptions, SolveReport};

/// Surface area `|S^{n−1}| = 2π^{n/2} / Γ(n/2)` of the unit sphere in ℝⁿ.
pub fn unit_sphere_area(n: usize) -> f64 {
    // Γ(n/2) by the recurrence from Γ(1) = 1 and Γ(1/2) = √π.
    let mut gamma = if n.is_multiple_of(2) { 1.0 } else { PI.sqrt() };
    let mut x = if n.is_multiple_of(2) { 1.0 } else { 0.5 };
    while x < n as f64 / 2.0 - 1e-12 {
        gamma *= x;
        x += 1.0;
    }
    2.0 * PI.powf(n as f64 / 2.0) / gamma
}

fn check_dim(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::DomainError {
            what: "capacity",
            detail: format!("dimension n = {n} must be at least 2"),
        });
    }
    Ok(())
}

/// Capacity of the ball of radius `d`: `(n−2)|S^{n−1}| d^{n−2}` for `n ≥ 3`,
/// and `2π / |ln d|` relative to the unit ball for `n = 2`.
pub fn capacity_ball_analytic(n: usize, d: f64) -> Result<f64> {
    check_dim(n)?;
    if !(d > 0.0) {
        return Err(Error::DomainError {
            what: "capacity_ball_analytic",
            detail: format!("radius d = {d} must be positive"),
        });
    }
    if n == 2 {
        if d >= 1.0 {
            return Err(Error::DomainError {
                what: "capacity_ball_analytic",
                detail: format!("n = 2 requires d < 1, got {d}"),
            });
        }
        return Ok(2.0 * PI / d.ln().abs());
    }
    Ok((n as f64 - 2.0) * unit_sphere_area(n) * d.powi(n as i32 - 2))
}

/// Capacity potential of the ball of radius `d` at distance `r` from its
/// center: `(d/r)^{n−2}` for `n ≥ 3`, `ln r / ln d` for `n = 2`.
pub fn potential_ball_analytic(n: usize, d: f64, r: f64) -> Result<f64> {
    check_dim(n)?;
    let bad = |detail: String| Error::DomainError {
        what: "potential_ball_analytic",
        detail,
    };
    if !(d > 0.0) || r < d {
        return Err(bad(format!("need 0 < d <= r, got d = {d}, r = {r}")));
    }
    if n == 2 {
        if d >= 1.0 || r > 1.0 {
            return Err(bad(format!(
                "n = 2 requires d < r <= 1, got d = {d}, r = {r}"
            )));
        }
        return Ok(r.ln() / d.ln());
    }
    Ok((d / r).powi(n as i32 - 2))
}

/// `cap / εⁿ`.
pub fn effective_q(n: usize, epsilon: f64, cap: f64) -> f64 {
    cap / epsilon.powi(n as i32)
}

/// Exterior Dirichlet problem for one hole centered at the origin, truncated
/// to the ball of radius `outer_radius` (always the unit ball for `n = 2`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapacityProblem {
    pub n: usize,
    pub shape: HoleShape,
    pub outer_radius: f64,
}

impl CapacityProblem {
    /// `radius` defaults to `max(10d, 0.5)` for `n ≥ 3` and must be `1` (or
    /// absent) for `n = 2`.
    pub fn new(n: usize, shape: HoleShape, radius: Option<f64>) -> Result<Self> {
        check_dim(n)?;
        let d = shape.d();
        let outer_radius = if n == 2 {
            if d >= 1.0 {
                return Err(Error::InvalidDomain(format!(
                    "n = 2 requires d < 1, got {d}"
                )));
            }
            if let Some(r) = radius {
                if (r - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidDomain(format!(
                        "n = 2 capacity is relative to the unit ball, got R = {r}"
                    )));
                }
            }
            1.0
        } else {
            let r = radius.unwrap_or((10.0 * d).max(0.5));
            if r < 10.0 * d * (1.0 - 1e-12) {
                return Err(Error::InvalidDomain(format!(
                    "truncation radius R = {r} must be at least 10d = {}",
                    10.0 * d
                )));
            }
            r
        };
        Ok(Self {
            n,
            shape,
            outer_radius,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapacityOptions {
    /// Smallest admissible `d / h`.
    pub min_resolution: f64,
    pub cg: CgOptions,
}

impl Default for CapacityOptions {
    fn default() -> Self {
        Self {
            min_resolution: 8.0,
            cg: CgOptions::default(),
        }
    }
}

const ACTIVE: u8 = 0;
const HOLE: u8 = 1;
const OUTSIDE: u8 = 2;

/// Discrete capacity potential on the solver grid.
#[derive(Clone, Debug)]
pub struct PotentialField {
    n: usize,
    shape: HoleShape,
    outer_radius: f64,
    grid: Arc<CartesianGrid>,
    /// Only the positive orthant is stored; values elsewhere follow by mirroring.
    mirrored: bool,
    values: Vec<f64>,
    kind: Vec<u8>,
}

impl PotentialField {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn shape(&self) -> &HoleShape {
        &self.shape
    }

    pub fn outer_radius(&self) -> f64 {
        self.outer_radius
    }

    pub fn h(&self) -> f64 {
        self.grid.h()
    }

    pub fn grid(&self) -> &CartesianGrid {
        &self.grid
    }

    fn symmetry_factor(&self) -> f64 {
        if self.mirrored {
            2f64.powi(self.n as i32)
        } else {
            1.0
        }
    }

    /// Nodal samples `(x, H(x))` at active (solved) nodes.
    pub fn samples(&self) -> impl Iterator<Item = (Vec<f64>, f64)> + '_ {
        (0..self.values.len())
            .filter(|&k| self.kind[k] == ACTIVE)
            .map(|k| (self.grid.coords(k), self.values[k]))
    }

    /// Multilinear interpolation of `H` at `x` (relative to the hole center);
    /// exactly 1 inside the hole and 0 outside the truncation ball.
    pub fn value_at(&self, x: &[f64]) -> f64 {
        if self.shape.contains(x) {
            return 1.0;
        }
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if r >= self.outer_radius {
            return 0.0;
        }
        let h = self.grid.h();
        let counts = self.grid.counts();
        let mut base = Vec::with_capacity(self.n);
        let mut frac = Vec::with_capacity(self.n);
        for a in 0..self.n {
            let xa = if self.mirrored { x[a].abs() } else { x[a] };
            let t = ((xa - self.grid.lo()[a]) / h - 0.5).clamp(0.0, (counts[a] - 1) as f64);
            let i = (t.floor() as usize).min(counts[a].saturating_sub(2));
            base.push(i);
            frac.push(t - i as f64);
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << self.n) {
            let mut w = 1.0;
            let mut idx = base.clone();
            for a in 0..self.n {
                if corner >> a & 1 == 1 {
                    idx[a] += 1;
                    w *= frac[a];
                } else {
                    w *= 1.0 - frac[a];
                }
            }
            if w != 0.0 {
                acc += w * self.values[self.grid.flat(&idx)];
            }
        }
        acc
    }

    fn energy_of(&self, values: &[f64]) -> f64 {
        let counts = self.grid.counts();
        let mut sum = 0.0;
        for k in 0..values.len() {
            let idx = self.grid.multi(k);
            let mut stride = 1;
            for a in (0..self.n).rev() {
                if idx[a] + 1 < counts[a] {
                    let diff = values[k] - values[k + stride];
                    sum += diff * diff;
                }
                stride *= counts[a];
            }
        }
        self.symmetry_factor() * sum * self.grid.h().powi(self.n as i32 - 2)
    }

    /// Discrete Dirichlet energy `hⁿ Σ|∇ₕH|²` of the solved field.
    pub fn energy(&self) -> f64 {
        self.energy_of(&self.values)
    }

    /// Discrete energy of the admissible trial function equal to `f` at the
    /// solved nodes, 1 on the hole and 0 outside the truncation ball.
    pub fn trial_energy(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        let vals: Vec<f64> = (0..self.values.len())
            .map(|k| match self.kind[k] {
                ACTIVE => f(&self.grid.coords(k)),
                _ => self.values[k],
            })
            .collect();
        self.energy_of(&vals)
    }
}

#[derive(Clone, Debug)]
pub struct CapacityResult {
    /// Discrete Dirichlet energy on the truncated domain.
    pub cap_energy: f64,
    /// For `n ≥ 3`, the energy with the spherical-condenser truncation
    /// correction `cap_R · (1 − (d/R)^{n−2})`; equal to `cap_energy` for `n = 2`.
    pub cap_corrected: f64,
    pub field: PotentialField,
    pub solve: SolveReport,
    pub unknowns: usize,
}

/// Solves the capacity problem on a cell-centered grid of width `h`.
pub fn capacity_numeric(problem: &CapacityProblem, h: f64) -> Result<CapacityResult> {
    capacity_numeric_with(problem, h, &CapacityOptions::default())
}

pub fn capacity_numeric_with(
    problem: &CapacityProblem,
    h: f64,
    opts: &CapacityOptions,
) -> Result<CapacityResult> {
    let n = problem.n;
    let d = problem.shape.d();
    if !(h > 0.0) || d / h < opts.min_resolution * (1.0 - 1e-12) {
        return Err(Error::Unresolvable { hole: 0, d, h });
    }
    let r_out = problem.outer_radius;
    let mirrored = problem.shape.is_reflection_symmetric();
    // One layer of nodes beyond R so that every active node has its stencil.
    let m = (r_out / h).ceil() as usize + 1;
    let ext = m as f64 * h;
    let (lo, hi) = if mirrored {
        (vec![0.0; n], vec![ext; n])
    } else {
        (vec![-ext; n], vec![ext; n])
    };
    let grid = Arc::new(CartesianGrid::cell(&lo, &hi, h)?);
    let kind: Vec<u8> = (0..grid.num_nodes())
        .map(|k| {
            let x = grid.coords(k);
            if problem.shape.contains(&x) {
                HOLE
            } else if x.iter().map(|v| v * v).sum::<f64>().sqrt() >= r_out {
                OUTSIDE
            } else {
                ACTIVE
            }
        })
        .collect();
    if !kind.contains(&HOLE) {
        return Err(Error::Unresolvable { hole: 0, d, h });
    }
    let mask = Arc::new(NodeMask::from_predicate(grid.clone(), |x| {
        problem.shape.contains(x) || x.iter().map(|v| v * v).sum::<f64>().sqrt() >= r_out
    }));
    let lo_bc = if mirrored {
        FaceBc::Neumann
    } else {
        FaceBc::Dirichlet
    };
    let op = assemble_with_bc(mask.clone(), 0.0, &vec![[lo_bc, FaceBc::Dirichlet]; n])?;
    let inv_h2 = 1.0 / (h * h);
    let counts = grid.counts().to_vec();
    let rhs: Vec<f64> = (0..mask.active_count())
        .map(|i| {
            let flat = mask.flat_of(i);
            let idx = grid.multi(flat);
            let mut stride = 1;
            let mut b = 0.0;
            for a in (0..n).rev() {
                if idx[a] > 0 && kind[flat - stride] == HOLE {
                    b += inv_h2;
                }
                if idx[a] + 1 < counts[a] && kind[flat + stride] == HOLE {
                    b += inv_h2;
                }
                stride *= counts[a];
            }
            b
        })
        .collect();
    let amg = AmgHierarchy::new(op.matrix());
    let (u, solve) = cg_solve(op.matrix(), &amg, &rhs, &opts.cg)?;
    let mut values: Vec<f64> = kind
        .iter()
        .map(|&k| if k == HOLE { 1.0 } else { 0.0 })
        .collect();
    for (i, v) in u.iter().enumerate() {
        values[mask.flat_of(i)] = *v;
    }
    let field = PotentialField {
        n,
        shape: problem.shape.clone(),
        outer_radius: r_out,
        grid,
        mirrored,
        values,
        kind,
    };
    let cap_energy = field.energy();
    let cap_corrected = if n >= 3 {
        cap_energy * (1.0 - (d / r_out).powi(n as i32 - 2))
    } else {
        cap_energy
    };
    Ok(CapacityResult {
        cap_energy,
        cap_corrected,
        unknowns: mask.active_count(),
        field,
        solve,
    })
}

/// Outward flux of the solved potential through the rasterized hole
/// boundary: one-sided differences across every grid edge joining a hole node
/// to a non-hole node, scaled by `h^{n−1}`.
pub fn capacity_flux(field: &PotentialField) -> f64 {
    let counts = field.grid.counts();
    let n = field.n;
    let mut sum = 0.0;
    for k in 0..field.values.len() {
        if field.kind[k] != HOLE {
            continue;
        }
        let idx = field.grid.multi(k);
        let mut stride = 1;
        for a in (0..n).rev() {
            if idx[a] > 0 && field.kind[k - stride] != HOLE {
                sum += field.values[k] - field.values[k - stride];
            }
            if idx[a] + 1 < counts[a] && field.kind[k + stride] != HOLE {
                sum += field.values[k] - field.values[k + stride];
            }
            stride *= counts[a];
        }
    }
    let h = field.grid.h();
    field.symmetry_factor() * sum / h * h.powi(n as i32 - 1)
}

/// Flux of the exact ball potential through the sphere `|x| = r`:
/// `−∫ ∂H/∂r dS`, evaluated in closed form.
pub fn analytic_ball_flux(n: usize, d: f64, r: f64) -> Result<f64> {
    potential_ball_analytic(n, d, r)?;
    let dh_dr = if n == 2 {
        1.0 / (r * d.ln())
    } else {
        -(n as f64 - 2.0) * d.powi(n as i32 - 2) / r.powi(n as i32 - 1)
    };
    Ok(-dh_dr * unit_sphere_area(n) * r.powi(n as i32 - 1))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub max_ratio: f64,
    pub samples: usize,
    pub bound: f64,
    pub passed: bool,
}

/// Decay ratio of one sample at distance `rho` from the enclosing ball:
/// `|H|·ρ^{n−2}/d^{n−2}` for `n ≥ 3`, `|H|·|ln d|/|ln ρ|` for `n = 2`.
pub fn decay_ratio(n: usize, d: f64, rho: f64, value: f64) -> f64 {
    if n == 2 {
        value.abs() * d.ln().abs() / rho.ln().abs()
    } else {
        value.abs() * (rho / d).powi(n as i32 - 2)
    }
}

/// Whether a sample at distance `rho` is inside the validity region of the
/// decay bound: `ρ ≥ C₀d` for `n ≥ 3` and `exp(−C₀√|ln d|) ≤ ρ < 1` for
/// `n = 2`.
pub fn decay_admissible(n: usize, d: f64, rho: f64, c0: f64) -> bool {
    if n == 2 {
        rho >= (-c0 * d.ln().abs().sqrt()).exp() && rho < 1.0
    } else {
        rho >= c0 * d
    }
}

/// Supremum of [`decay_ratio`] over `(ρ, H)` samples in the validity region.
pub fn decay_check_samples(
    n: usize,
    d: f64,
    samples: impl IntoIterator<Item = (f64, f64)>,
    c0: f64,
    bound: f64,
) -> Result<DecayReport> {
    let mut max_ratio = 0.0f64;
    let mut count = 0;
    for (rho, value) in samples {
        if decay_admissible(n, d, rho, c0) {
            max_ratio = max_ratio.max(decay_ratio(n, d, rho, value));
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::NoSamples);
    }
    Ok(DecayReport {
        max_ratio,
        samples: count,
        bound,
        passed: max_ratio <= bound,
    })
}

/// [`decay_check_samples`] over the solved nodes of a field, with `ρ` the
/// distance to the enclosing ball of radius `d`.
pub fn decay_check(field: &PotentialField, c0: f64, bound: f64) -> Result<DecayReport> {
    let d = field.shape.d();
    let samples = field.samples().map(|(x, v)| {
        let r = x.iter().map(|a| a * a).sum::<f64>().sqrt();
        (r - d, v)
    });
    decay_check_samples(field.n, d, samples, c0, bound)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_areas() {
        assert!((unit_sphere_area(2) - 2.0 * PI).abs() < 1e-14);
        assert!((unit_sphere_area(3) - 4.0 * PI).abs() < 1e-14);
        assert!((unit_sphere_area(4) - 2.0 * PI * PI).abs() < 1e-13);
        assert!((unit_sphere_area(5) - 8.0 * PI * PI / 3.0).abs() < 1e-13);
    }

    #[test]
    fn analytic_capacity_examples() {
        assert!((capacity_ball_analytic(3, 0.1).unwrap() - 1.2566371).abs() < 1e-7);
        assert!((capacity_ball_analytic(2, (-1.0f64).exp()).unwrap() - 2.0 * PI).abs() < 1e-12);
        assert!(capacity_ball_analytic(3, 1e-300).unwrap() < 1e-298);
        assert!(capacity_ball_analytic(2, 1.0).is_err());
        assert!(capacity_ball_analytic(3, 0.0).is_err());
    }

    #[test]
    fn analytic_potential_examples() {
        assert!((potential_ball_analytic(3, 0.1, 0.2).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(potential_ball_analytic(2, 0.01, 1.0).unwrap(), 0.0);
        for n in 2..6 {
            assert!((potential_ball_analytic(n, 0.3, 0.3).unwrap() - 1.0).abs() < 1e-15);
        }
        assert!(potential_ball_analytic(3, 0.1, 0.05).is_err());
        assert!(potential_ball_analytic(2, 0.1, 1.5).is_err());
    }

    #[test]
    fn effective_q_examples() {
        let eps: f64 = 0.25;
        let cap = capacity_ball_analytic(3, eps.powi(3)).unwrap();
        assert!((effective_q(3, eps, cap) - 4.0 * PI).abs() < 1e-12);
        assert_eq!(effective_q(3, 0.1, 0.0), 0.0);
        let cap2 = capacity_ball_analytic(2, (-4.0f64).exp()).unwrap();
        assert!((effective_q(2, 0.5, cap2) - 2.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn analytic_flux_equals_capacity_at_every_radius() {
        for (n, d) in [(2, 0.05), (3, 0.1), (4, 0.2)] {
            let cap = capacity_ball_analytic(n, d).unwrap();
            for r in [d, 1.5 * d, 0.9] {
                assert!((analytic_ball_flux(n, d, r).unwrap() - cap).abs() < 1e-12 * cap);
            }
        }
    }

    #[test]
    fn analytic_decay_ratios() {
        let d = 0.1;
        let samples = (1..50).map(|k| {
            let r = d * (1.0 + 0.2 * k as f64);
            (r - d, potential_ball_analytic(3, d, r).unwrap())
        });
        let rep = decay_check_samples(3, d, samples, 1.0, 1.0).unwrap();
        assert!(rep.passed && rep.max_ratio <= 1.0);
        // ((r-d)/r)^{n-2} at the largest radius
        let r = d * 10.8;
        assert!((rep.max_ratio - (r - d) / r).abs() < 1e-12);
        // n = 2 at ρ = √d with the decay scale |ln d| / |ln ρ|
        let d2: f64 = 1e-4;
        let rho = d2.sqrt();
        let h = potential_ball_analytic(2, d2, rho).unwrap();
        assert!((h - 0.5).abs() < 1e-12);
        assert!((decay_ratio(2, d2, rho, h) - 1.0).abs() < 1e-12);
        assert!(matches!(
            decay_check_samples(3, d, vec![(0.01, 1.0)], 1.0, 1.0),
            Err(Error::NoSamples)
        ));
    }

    #[test]
    fn problem_validation() {
        let ball = HoleShape::ball(0.1).unwrap();
        assert_eq!(
            CapacityProblem::new(3, ball.clone(), None)
                .unwrap()
                .outer_radius,
            1.0
        );
        assert!(CapacityProblem::new(3, ball.clone(), Some(0.5)).is_err());
        assert_eq!(
            CapacityProblem::new(2, ball.clone(), None)
                .unwrap()
                .outer_radius,
            1.0
        );
        assert!(CapacityProblem::new(2, ball, Some(2.0)).is_err());
    }

    #[test]
    fn coarse_grids_are_rejected() {
        let p = CapacityProblem::new(3, HoleShape::ball(0.1).unwrap(), None).unwrap();
        assert!(matches!(
            capacity_numeric(&p, 0.02),
            Err(Error::Unresolvable { .. })
        ));
    }

    #[test]
    fn small_3d_ball_is_close_and_consistent() {
        let d = 0.1;
        let p = CapacityProblem::new(3, HoleShape::ball(d).unwrap(), Some(1.0)).unwrap();
        let res = capacity_numeric(&p, d / 8.0).unwrap();
        let exact = capacity_ball_analytic(3, d).unwrap();
        assert!(
            (res.cap_corrected / exact - 1.0).abs() < 0.05,
            "{}",
            res.cap_corrected / exact
        );
        assert!(res.cap_corrected < res.cap_energy);
        let flux = capacity_flux(&res.field);
        assert!((flux / res.cap_energy - 1.0).abs() < 0.05);
        // analytic potential as an admissible trial function has larger energy
        let trial = res.field.trial_energy(|x| {
            let r = x.iter().map(|a| a * a).sum::<f64>().sqrt();
            ((d / r) - d) / (1.0 - d)
        });
        assert!(trial >= res.cap_energy * (1.0 - 1e-9));
        let rep = decay_check(&res.field, 2.0, 1.1).unwrap();
        assert!(rep.passed, "{rep:?}");
        // interpolation reproduces nodal values and the boundary data
        assert_eq!(res.field.value_at(&[0.0, 0.0, 0.05]), 1.0);
        assert_eq!(res.field.value_at(&[0.0, 0.0, 1.01]), 0.0);
        let (x, v) = res.field.samples().nth(500).unwrap();
        assert!((res.field.value_at(&x) - v).abs() < 1e-12);
        let mirrored: Vec<f64> = x.iter().map(|a| -a).collect();
        assert!((res.field.value_at(&mirrored) - v).abs() < 1e-12);
    }

    #[test]
    fn capacity_is_monotone_under_inclusion() {
        // Same grid and truncation radius for all three, so the rasterized
        // holes are nested as well.
        let h = 0.025;
        let opts = CapacityOptions {
            min_resolution: 4.0,
            ..Default::default()
        };
        let cap = |shape: HoleShape| {
            let p = CapacityProblem::new(3, shape, Some(1.75)).unwrap();
            capacity_numeric_with(&p, h, &opts).unwrap().cap_energy
        };
        let small = cap(HoleShape::ball(0.1).unwrap());
        let cube = cap(HoleShape::axis_box(&[0.1, 0.1, 0.1]).unwrap());
        let big = cap(HoleShape::ball(0.1 * 3f64.sqrt()).unwrap());
        assert!(small < cube && cube < big, "{small} {cube} {big}");
    }
}
