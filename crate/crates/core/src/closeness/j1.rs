//! The corrected identification `J¹ f = f − Σ P_i f − Σ Q_i f` on a grid, and
//! dense PDE instances built from it.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{FormPair, IdentificationSet};
use crate::capacity::{capacity_numeric, potential_ball_analytic, CapacityProblem, PotentialField};
use crate::error::{Error, Result};
use crate::geometry::HoleLayout;
use crate::grid::{
    assemble_laplacian, cell_mean_weights, selection_matrix, CartesianGrid, GridOperator, NodeMask,
};
use crate::linalg::CsrMatrix;

/// Radial cutoff profile used around each hole.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutoffKind {
    /// Smoothstep in `r/d` on `[d, 2d]` (`n ≥ 3`).
    Smooth,
    /// Logarithmic profile on the annulus `(d, ε²)` (`n = 2`).
    Logarithmic,
    /// Smoothstep used in 2D because the logarithmic band holds no grid node.
    Fallback,
}

/// Where the capacity potential `H` comes from.
#[derive(Clone, Debug, Default)]
pub enum PotentialSource {
    /// Closed form for balls; numeric capacity solve at `h = d/8` otherwise.
    #[default]
    Auto,
    /// Numeric solve at the given width, even for balls.
    Numeric { h: f64 },
    /// A precomputed field centered at the origin.
    Field(Arc<PotentialField>),
}

#[derive(Clone, Debug)]
pub struct J1Options {
    /// Smallest admissible `d / h`.
    pub min_resolution: f64,
    pub potential: PotentialSource,
    /// Use the smoothstep in 2D when the logarithmic band is unresolved
    /// instead of failing.
    pub allow_fallback: bool,
}

impl Default for J1Options {
    fn default() -> Self {
        Self {
            min_resolution: 4.0,
            potential: PotentialSource::Auto,
            allow_fallback: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct J1Matrix {
    /// `J¹` evaluated at every grid node (N × N); rows of hole nodes are zero.
    pub full_rows: CsrMatrix,
    /// Rows of the active perforated nodes (M × N).
    pub matrix: CsrMatrix,
    pub cutoff: CutoffKind,
    /// True when the 2D logarithmic cutoff was replaced by the smoothstep.
    pub fallback: bool,
}

/// `1 − 3s² + 2s³` with `s = t − 1`, clamped to 1 below `t = 1` and 0 above `t = 2`.
pub fn smoothstep(t: f64) -> f64 {
    if t <= 1.0 {
        1.0
    } else if t >= 2.0 {
        0.0
    } else {
        let s = t - 1.0;
        1.0 - 3.0 * s * s + 2.0 * s * s * s
    }
}

fn log_cutoff(r: f64, d: f64, eps: f64) -> f64 {
    let outer = eps * eps;
    if r <= d {
        1.0
    } else if r >= outer {
        0.0
    } else {
        (r.ln() - 2.0 * eps.ln()) / (d.ln() - 2.0 * eps.ln())
    }
}

enum Potential {
    Ball { n: usize, d: f64 },
    Field(Arc<PotentialField>),
}

impl Potential {
    fn value(&self, off: &[f64], r: f64) -> Result<f64> {
        match self {
            Potential::Ball { n, d } => {
                if r <= *d {
                    Ok(1.0)
                } else if *n == 2 && r >= 1.0 {
                    Ok(0.0)
                } else {
                    potential_ball_analytic(*n, *d, r)
                }
            }
            Potential::Field(f) => Ok(f.value_at(off)),
        }
    }
}

fn resolve_potential(layout: &HoleLayout, source: &PotentialSource) -> Result<Potential> {
    let n = layout.dim();
    let shape = layout.shape();
    let numeric = |h: f64| -> Result<Potential> {
        let problem = CapacityProblem::new(n, shape.clone(), None)?;
        Ok(Potential::Field(Arc::new(
            capacity_numeric(&problem, h)?.field,
        )))
    };
    match source {
        PotentialSource::Auto if shape.is_ball() => Ok(Potential::Ball { n, d: shape.d() }),
        PotentialSource::Auto => numeric(shape.d() / 8.0),
        PotentialSource::Numeric { h } => numeric(*h),
        PotentialSource::Field(f) => {
            if f.dim() != n || f.shape() != shape {
                return Err(Error::GridMismatch(
                    "potential field does not match the hole shape".into(),
                ));
            }
            Ok(Potential::Field(f.clone()))
        }
    }
}

fn distance(x: &[f64], c: &[f64]) -> (Vec<f64>, f64) {
    let off: Vec<f64> = x.iter().zip(c).map(|(a, b)| a - b).collect();
    let r = off.iter().map(|v| v * v).sum::<f64>().sqrt();
    (off, r)
}

/// Assembles `J¹` for `layout` on the grid shared by `full` (no holes) and
/// `perforated`.
pub fn build_j1(
    layout: &HoleLayout,
    full: &NodeMask,
    perforated: &NodeMask,
    opts: &J1Options,
) -> Result<J1Matrix> {
    if !full.same_grid(perforated) {
        return Err(Error::GridMismatch(
            "full and perforated masks live on different grids".into(),
        ));
    }
    let grid = full.grid().clone();
    if full.active_count() != grid.num_nodes() {
        return Err(Error::GridMismatch(
            "the unperforated mask must keep every node".into(),
        ));
    }
    if layout.dim() != grid.dim() {
        return Err(Error::GridMismatch(
            "layout and grid dimensions differ".into(),
        ));
    }
    let n = layout.dim();
    let shape = layout.shape();
    let d = shape.d();
    let eps = layout.spec().epsilon();
    let kappa = layout.kappa();
    let h = grid.h();
    if !layout.is_empty() && d / h < opts.min_resolution * (1.0 - 1e-12) {
        return Err(Error::Unresolvable { hole: 0, d, h });
    }

    let mut cutoff = if n == 2 {
        CutoffKind::Logarithmic
    } else {
        CutoffKind::Smooth
    };
    if n == 2 && !layout.is_empty() {
        let outer = eps * eps;
        let resolved = d < outer
            && layout.centers().iter().all(|c| {
                let lo: Vec<f64> = c.iter().map(|x| x - outer).collect();
                let hi: Vec<f64> = c.iter().map(|x| x + outer).collect();
                grid.nodes_in_box(&lo, &hi).into_iter().any(|k| {
                    let r = distance(&grid.coords(k), c).1;
                    r > d && r < outer
                })
            });
        if !resolved {
            if !opts.allow_fallback {
                return Err(Error::UnresolvableCutoff { inner: d, outer });
            }
            cutoff = CutoffKind::Fallback;
        }
    }
    let chi = |r: f64| match cutoff {
        CutoffKind::Logarithmic => log_cutoff(r, d, eps),
        _ => smoothstep(r / d),
    };
    let chi_hat = |r: f64| smoothstep((2.0 / kappa) * (r - d) / eps);
    let support = match cutoff {
        CutoffKind::Logarithmic => (eps * eps).max(d + kappa * eps),
        _ => (2.0 * d).max(d + kappa * eps),
    };

    let potential = if layout.is_empty() {
        None
    } else {
        Some(resolve_potential(layout, &opts.potential)?)
    };

    let total = grid.num_nodes();
    let mut rows: Vec<Option<Vec<(usize, f64)>>> = vec![None; total];
    for (i, c) in layout.centers().iter().enumerate() {
        let (lo, hi) = layout.cell_bounds(i);
        let available = (0..n)
            .map(|a| (c[a] - lo[a]).min(hi[a] - c[a]))
            .fold(f64::INFINITY, f64::min);
        if support > available * (1.0 + 1e-12) {
            return Err(Error::LayoutViolation {
                cell: Some(layout.indices()[i].clone()),
                required: support,
                available,
            });
        }
        let mean = cell_mean_weights(full, &lo, &hi).map_err(|e| match e {
            Error::EmptyCell(_) => Error::EmptyCell(layout.indices()[i].clone()),
            other => other,
        })?;
        let blo: Vec<f64> = c.iter().map(|x| x - support).collect();
        let bhi: Vec<f64> = c.iter().map(|x| x + support).collect();
        for k in grid.nodes_in_box(&blo, &bhi) {
            let (off, r) = distance(&grid.coords(k), c);
            if shape.contains(&off) {
                rows[k] = Some(Vec::new());
                continue;
            }
            if r >= support {
                continue;
            }
            let x = chi(r);
            let hat = chi_hat(r);
            let hv = if hat == 0.0 {
                0.0
            } else {
                potential.as_ref().expect("holes present").value(&off, r)?
            };
            let own = 1.0 - x;
            let coupling = x - hv * hat;
            let mut row: Vec<(usize, f64)> = if coupling != 0.0 {
                mean.iter().map(|&(j, w)| (j, coupling * w)).collect()
            } else {
                Vec::new()
            };
            if own != 0.0 {
                match row.binary_search_by_key(&k, |e| e.0) {
                    Ok(p) => row[p].1 += own,
                    Err(p) => row.insert(p, (k, own)),
                }
            }
            rows[k] = Some(row);
        }
    }

    let mut trip = Vec::new();
    for (k, row) in rows.iter().enumerate() {
        match row {
            None => trip.push((k, k, 1.0)),
            Some(entries) => trip.extend(
                entries
                    .iter()
                    .filter(|e| e.1 != 0.0)
                    .map(|&(j, v)| (k, j, v)),
            ),
        }
    }
    let full_rows = CsrMatrix::from_triplets(total, total, &trip);
    let sel = selection_matrix(full, perforated)?;
    let matrix = sel.matmul(&full_rows);
    Ok(J1Matrix {
        full_rows,
        matrix,
        fallback: cutoff == CutoffKind::Fallback,
        cutoff,
    })
}

/// A perforated/homogenized pair on one vertex grid with all identification
/// maps assembled densely.
#[derive(Clone, Debug)]
pub struct PdeInstance {
    pub full: GridOperator,
    pub perforated: GridOperator,
    pub pair: FormPair,
    pub ids: IdentificationSet,
    pub j1: J1Matrix,
}

/// Homogenized operator `−Δ + q` on the whole box and the Dirichlet Laplacian
/// of the perforated box, with `J` = restriction, `J′` = `J¹′` = extension by
/// zero, and `J¹` from [`build_j1`].
pub fn pde_instance(
    layout: &HoleLayout,
    h: f64,
    q: f64,
    k: u8,
    opts: &J1Options,
    limit: usize,
) -> Result<PdeInstance> {
    let grid = Arc::new(CartesianGrid::for_domain(layout.spec(), h)?);
    let full_mask = Arc::new(NodeMask::full(grid.clone()));
    let perf_mask = Arc::new(NodeMask::perforated(grid, layout)?);
    let size = full_mask.active_count();
    if size > limit {
        return Err(Error::SizeLimit { size, limit });
    }
    let full = assemble_laplacian(full_mask.clone(), q)?;
    let perforated = assemble_laplacian(perf_mask.clone(), 0.0)?;
    let pair = FormPair::from_operators(&full, &perforated, limit)?;
    let j1 = build_j1(layout, &full_mask, &perf_mask, opts)?;
    let j = selection_matrix(&full_mask, &perf_mask)?.to_dense();
    let jp = selection_matrix(&perf_mask, &full_mask)?.to_dense();
    let ids = IdentificationSet {
        j1: j1.matrix.to_dense(),
        j1p: jp.clone(),
        j,
        jp,
        k,
    };
    Ok(PdeInstance {
        full,
        perforated,
        pair,
        ids,
        j1,
    })
}
