//! Uniform Cartesian grids, Dirichlet node masks and the finite-difference
//! Laplacian on the active nodes.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{DomainSpec, HoleLayout};
use crate::linalg::CsrMatrix;

/// Where the unknowns sit inside each mesh cell of width `h`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Centering {
    /// Nodes at `lo + h·(i+1)`; nodes on the box boundary are eliminated.
    Vertex,
    /// Nodes at `lo + h·(i+½)`; box faces lie half a cell away.
    Cell,
}

/// Boundary condition on one face of a cell-centered grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaceBc {
    Dirichlet,
    Neumann,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CartesianGrid {
    dim: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
    h: f64,
    counts: Vec<usize>,
    centering: Centering,
}

impl CartesianGrid {
    fn build(lo: &[f64], hi: &[f64], h: f64, centering: Centering) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::InvalidDomain(
                "box bounds must have matching nonzero length".into(),
            ));
        }
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::InvalidDomain(format!(
                "mesh width h = {h} must be positive"
            )));
        }
        let mut counts = Vec::with_capacity(lo.len());
        for (a, b) in lo.iter().zip(hi) {
            let ext = b - a;
            let m = (ext / h).round();
            if m < 1.0 || ((m * h - ext) / ext).abs() > 1e-12 {
                return Err(Error::InvalidDomain(format!(
                    "extent {ext} is not an integer multiple of h = {h}"
                )));
            }
            let m = m as usize;
            counts.push(match centering {
                Centering::Vertex => m - 1,
                Centering::Cell => m,
            });
        }
        Ok(Self {
            dim: lo.len(),
            lo: lo.to_vec(),
            hi: hi.to_vec(),
            h,
            counts,
            centering,
        })
    }

    pub fn vertex(lo: &[f64], hi: &[f64], h: f64) -> Result<Self> {
        Self::build(lo, hi, h, Centering::Vertex)
    }

    pub fn cell(lo: &[f64], hi: &[f64], h: f64) -> Result<Self> {
        Self::build(lo, hi, h, Centering::Cell)
    }

    /// Vertex grid over the box of `spec`.
    pub fn for_domain(spec: &DomainSpec, h: f64) -> Result<Self> {
        Self::vertex(spec.lo(), spec.hi(), h)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn centering(&self) -> Centering {
        self.centering
    }

    /// `hⁿ`, the quadrature weight of one node.
    pub fn weight(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }

    pub fn num_nodes(&self) -> usize {
        self.counts.iter().product()
    }

    fn offset(&self) -> f64 {
        match self.centering {
            Centering::Vertex => 1.0,
            Centering::Cell => 0.5,
        }
    }

    /// Coordinate of node `i` along `axis`.
    pub fn coord_1d(&self, axis: usize, i: usize) -> f64 {
        self.lo[axis] + self.h * (i as f64 + self.offset())
    }

    /// Row-major flat index, last axis fastest.
    pub fn flat(&self, idx: &[usize]) -> usize {
        idx.iter()
            .zip(&self.counts)
            .fold(0, |acc, (&i, &c)| acc * c + i)
    }

    pub fn multi(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim];
        for a in (0..self.dim).rev() {
            idx[a] = flat % self.counts[a];
            flat /= self.counts[a];
        }
        idx
    }

    pub fn coords(&self, flat: usize) -> Vec<f64> {
        self.multi(flat)
            .iter()
            .enumerate()
            .map(|(a, &i)| self.coord_1d(a, i))
            .collect()
    }

    fn stride(&self, axis: usize) -> usize {
        self.counts[axis + 1..].iter().product()
    }

    /// Inclusive index range of nodes whose coordinate along `axis` lies in
    /// `[a, b]` (with a relative tolerance), or `None` when empty.
    pub fn index_range(&self, axis: usize, a: f64, b: f64) -> Option<(usize, usize)> {
        let tol = 1e-9 * self.h;
        let off = self.offset();
        let first = ((a - self.lo[axis] - tol) / self.h - off).ceil().max(0.0);
        let last = ((b - self.lo[axis] + tol) / self.h - off).floor();
        let max = self.counts[axis] as f64 - 1.0;
        let last = last.min(max);
        if max < 0.0 || first > last {
            None
        } else {
            Some((first as usize, last as usize))
        }
    }

    /// Flat indices of all nodes in the closed box `[lo, hi]`.
    pub fn nodes_in_box(&self, lo: &[f64], hi: &[f64]) -> Vec<usize> {
        let mut ranges = Vec::with_capacity(self.dim);
        for a in 0..self.dim {
            match self.index_range(a, lo[a], hi[a]) {
                Some(r) => ranges.push(r),
                None => return Vec::new(),
            }
        }
        let mut out = Vec::new();
        let mut idx: Vec<usize> = ranges.iter().map(|r| r.0).collect();
        loop {
            out.push(self.flat(&idx));
            let mut a = self.dim;
            loop {
                if a == 0 {
                    return out;
                }
                a -= 1;
                if idx[a] < ranges[a].1 {
                    idx[a] += 1;
                    break;
                }
                idx[a] = ranges[a].0;
            }
        }
    }
}

/// Active (unknown) versus Dirichlet-masked nodes of a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeMask {
    grid: Arc<CartesianGrid>,
    active: Vec<bool>,
    index: Vec<u32>,
    nodes: Vec<u32>,
    masked_per_hole: Vec<usize>,
}

const INACTIVE: u32 = u32::MAX;

impl NodeMask {
    fn from_active(
        grid: Arc<CartesianGrid>,
        active: Vec<bool>,
        masked_per_hole: Vec<usize>,
    ) -> Self {
        let mut index = vec![INACTIVE; active.len()];
        let mut nodes = Vec::new();
        for (k, &a) in active.iter().enumerate() {
            if a {
                index[k] = nodes.len() as u32;
                nodes.push(k as u32);
            }
        }
        Self {
            grid,
            active,
            index,
            nodes,
            masked_per_hole,
        }
    }

    /// Every node is an unknown.
    pub fn full(grid: Arc<CartesianGrid>) -> Self {
        let n = grid.num_nodes();
        Self::from_active(grid, vec![true; n], Vec::new())
    }

    /// Masks every node inside a closed hole of `layout`. Fails when a hole
    /// masks no node at all.
    pub fn perforated(grid: Arc<CartesianGrid>, layout: &HoleLayout) -> Result<Self> {
        if layout.dim() != grid.dim() {
            return Err(Error::GridMismatch(format!(
                "layout dimension {} vs grid dimension {}",
                layout.dim(),
                grid.dim()
            )));
        }
        let mut active = vec![true; grid.num_nodes()];
        let mut counts = Vec::with_capacity(layout.len());
        let d = layout.shape().d();
        for (hole, c) in layout.centers().iter().enumerate() {
            let lo: Vec<f64> = c.iter().map(|x| x - d).collect();
            let hi: Vec<f64> = c.iter().map(|x| x + d).collect();
            let mut count = 0;
            for k in grid.nodes_in_box(&lo, &hi) {
                let off: Vec<f64> = grid.coords(k).iter().zip(c).map(|(x, y)| x - y).collect();
                if layout.shape().contains(&off) {
                    active[k] = false;
                    count += 1;
                }
            }
            if count == 0 {
                return Err(Error::Unresolvable {
                    hole,
                    d,
                    h: grid.h(),
                });
            }
            counts.push(count);
        }
        Ok(Self::from_active(grid, active, counts))
    }

    /// Masks the nodes for which `masked(x)` holds.
    pub fn from_predicate(grid: Arc<CartesianGrid>, masked: impl Fn(&[f64]) -> bool) -> Self {
        let active = (0..grid.num_nodes())
            .map(|k| !masked(&grid.coords(k)))
            .collect();
        Self::from_active(grid, active, Vec::new())
    }

    pub fn grid(&self) -> &Arc<CartesianGrid> {
        &self.grid
    }

    pub fn active_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_active(&self, flat: usize) -> bool {
        self.active[flat]
    }

    pub fn active_index(&self, flat: usize) -> Option<usize> {
        match self.index[flat] {
            INACTIVE => None,
            i => Some(i as usize),
        }
    }

    /// Flat grid index of active unknown `i`.
    pub fn flat_of(&self, i: usize) -> usize {
        self.nodes[i] as usize
    }

    /// Number of nodes masked by each hole, in layout order.
    pub fn masked_per_hole(&self) -> &[usize] {
        &self.masked_per_hole
    }

    pub fn coords_of(&self, i: usize) -> Vec<f64> {
        self.grid.coords(self.flat_of(i))
    }

    pub fn same_grid(&self, other: &NodeMask) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || self.grid == other.grid
    }

    fn check_same_grid(&self, other: &NodeMask) -> Result<()> {
        if self.same_grid(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch("masks live on different grids".into()))
        }
    }
}

/// Symmetric finite-difference operator `S + q·I` on the active nodes of a
/// mask, acting on a space with inner product `hⁿ Σ uₖ vₖ`.
#[derive(Clone, Debug)]
pub struct GridOperator {
    mask: Arc<NodeMask>,
    stiffness: CsrMatrix,
    matrix: CsrMatrix,
    q: f64,
}

impl GridOperator {
    pub fn mask(&self) -> &Arc<NodeMask> {
        &self.mask
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// The stencil part `S` without the potential.
    pub fn stiffness(&self) -> &CsrMatrix {
        &self.stiffness
    }

    /// `S + q·I`.
    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn weight(&self) -> f64 {
        self.mask.grid().weight()
    }

    pub fn write_coo<W: Write>(&self, out: W) -> std::io::Result<()> {
        self.matrix.write_coo(out)
    }
}

/// Dirichlet Laplacian on the active nodes of a vertex grid plus `q·I`.
pub fn assemble_laplacian(mask: Arc<NodeMask>, q: f64) -> Result<GridOperator> {
    let bc = vec![[FaceBc::Dirichlet; 2]; mask.grid().dim()];
    assemble_with_bc(mask, q, &bc)
}

/// As [`assemble_laplacian`] with a boundary condition per box face. On vertex
/// grids only Dirichlet faces are meaningful; cell-centered grids use a ghost
/// node (Dirichlet) or drop the face term (Neumann).
pub fn assemble_with_bc(mask: Arc<NodeMask>, q: f64, bc: &[[FaceBc; 2]]) -> Result<GridOperator> {
    let grid = mask.grid().clone();
    if bc.len() != grid.dim() {
        return Err(Error::GridMismatch(
            "one boundary pair per axis is required".into(),
        ));
    }
    if !(q >= 0.0) || !q.is_finite() {
        return Err(Error::DomainError {
            what: "assemble_laplacian",
            detail: format!("q = {q} must be finite and nonnegative"),
        });
    }
    if grid.centering() == Centering::Vertex && bc.iter().flatten().any(|&b| b == FaceBc::Neumann) {
        return Err(Error::DomainError {
            what: "assemble_laplacian",
            detail: "Neumann faces require a cell-centered grid".into(),
        });
    }
    if let Some(hole) = mask.masked_per_hole().iter().position(|&c| c == 0) {
        return Err(Error::Unresolvable {
            hole,
            d: f64::NAN,
            h: grid.h(),
        });
    }
    let inv_h2 = 1.0 / (grid.h() * grid.h());
    let n = mask.active_count();
    let mut indptr = Vec::with_capacity(n + 1);
    let mut indices = Vec::with_capacity(n * (2 * grid.dim() + 1));
    let mut values = Vec::with_capacity(n * (2 * grid.dim() + 1));
    indptr.push(0);
    let mut row: Vec<(u32, f64)> = Vec::with_capacity(2 * grid.dim() + 1);
    for i in 0..n {
        let flat = mask.flat_of(i);
        let idx = grid.multi(flat);
        let mut diag = 0.0;
        row.clear();
        for a in 0..grid.dim() {
            let stride = grid.stride(a);
            for (side, step) in [(0usize, -1i64), (1, 1)] {
                let j = idx[a] as i64 + step;
                if j < 0 || j >= grid.counts()[a] as i64 {
                    diag += match (grid.centering(), bc[a][side]) {
                        (Centering::Vertex, _) => inv_h2,
                        (Centering::Cell, FaceBc::Dirichlet) => 2.0 * inv_h2,
                        (Centering::Cell, FaceBc::Neumann) => 0.0,
                    };
                    continue;
                }
                let nb = if step < 0 {
                    flat - stride
                } else {
                    flat + stride
                };
                diag += inv_h2;
                if let Some(k) = mask.active_index(nb) {
                    row.push((k as u32, -inv_h2));
                }
            }
        }
        row.push((i as u32, diag));
        row.sort_unstable_by_key(|e| e.0);
        for &(c, v) in &row {
            indices.push(c);
            values.push(v);
        }
        indptr.push(indices.len());
    }
    let stiffness = CsrMatrix::from_raw(n, n, indptr, indices, values);
    let matrix = if q > 0.0 {
        stiffness.add_diagonal(q)
    } else {
        stiffness.clone()
    };
    Ok(GridOperator {
        mask,
        stiffness,
        matrix,
        q,
    })
}

/// Values on the active nodes of a mask.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    mask: Arc<NodeMask>,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(mask: Arc<NodeMask>, values: Vec<f64>) -> Result<Self> {
        if values.len() != mask.active_count() {
            return Err(Error::GridMismatch(format!(
                "{} values for {} active nodes",
                values.len(),
                mask.active_count()
            )));
        }
        Ok(Self { mask, values })
    }

    pub fn zeros(mask: Arc<NodeMask>) -> Self {
        let n = mask.active_count();
        Self {
            mask,
            values: vec![0.0; n],
        }
    }

    /// Samples `f` at the active node coordinates.
    pub fn from_fn(mask: Arc<NodeMask>, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..mask.active_count())
            .map(|i| f(&mask.coords_of(i)))
            .collect();
        Self { mask, values }
    }

    pub fn mask(&self) -> &Arc<NodeMask> {
        &self.mask
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// `hⁿ Σ uₖ vₖ`.
    pub fn inner(&self, other: &GridFunction) -> f64 {
        self.mask.grid().weight()
            * self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a * b)
                .sum::<f64>()
    }

    pub fn norm(&self) -> f64 {
        self.inner(self).sqrt()
    }

    /// Writes a `# {json}` header line describing the grid and mask, then one
    /// CSV row `flat,x0,..,value` per active node.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let grid = self.mask.grid();
        let header = serde_json::json!({
            "dim": grid.dim(),
            "lo": grid.lo(),
            "hi": grid.hi(),
            "h": grid.h(),
            "counts": grid.counts(),
            "centering": grid.centering(),
            "active": self.mask.active_count(),
            "masked": grid.num_nodes() - self.mask.active_count(),
        });
        writeln!(out, "# {header}")?;
        let mut cols = vec!["flat".to_string()];
        cols.extend((0..grid.dim()).map(|a| format!("x{a}")));
        cols.push("value".into());
        writeln!(out, "{}", cols.join(","))?;
        for (i, v) in self.values.iter().enumerate() {
            let flat = self.mask.flat_of(i);
            let xs: Vec<String> = grid.coords(flat).iter().map(|x| format!("{x:e}")).collect();
            writeln!(out, "{flat},{},{v:e}", xs.join(","))?;
        }
        Ok(())
    }
}

fn transfer(values: &[f64], from: &NodeMask, to: &NodeMask) -> Vec<f64> {
    (0..to.active_count())
        .map(|i| from.active_index(to.flat_of(i)).map_or(0.0, |k| values[k]))
        .collect()
}

/// The restriction `J`: keeps the values at nodes active in `target`.
pub fn restrict(full: &GridFunction, target: &Arc<NodeMask>) -> Result<GridFunction> {
    full.mask.check_same_grid(target)?;
    GridFunction::new(target.clone(), transfer(&full.values, &full.mask, target))
}

/// The extension by zero `J′`: copies values and sets newly active nodes to 0.
pub fn extend_zero(perforated: &GridFunction, target: &Arc<NodeMask>) -> Result<GridFunction> {
    perforated.mask.check_same_grid(target)?;
    GridFunction::new(
        target.clone(),
        transfer(&perforated.values, &perforated.mask, target),
    )
}

/// Matrix of the node selection from the active nodes of `from` to those of
/// `to` (zero for nodes active only in `to`).
pub fn selection_matrix(from: &NodeMask, to: &NodeMask) -> Result<CsrMatrix> {
    from.check_same_grid(to)?;
    let trip: Vec<(usize, usize, f64)> = (0..to.active_count())
        .filter_map(|i| from.active_index(to.flat_of(i)).map(|k| (i, k, 1.0)))
        .collect();
    Ok(CsrMatrix::from_triplets(
        to.active_count(),
        from.active_count(),
        &trip,
    ))
}

/// Quadrature weights for the mean over the closed box `[lo, hi]`: trapezoidal
/// (each coordinate on a face counts one half), restricted to active nodes and
/// normalized to sum to one. Returns `(active index, weight)` pairs.
pub fn cell_mean_weights(mask: &NodeMask, lo: &[f64], hi: &[f64]) -> Result<Vec<(usize, f64)>> {
    let grid = mask.grid();
    let tol = 1e-9 * grid.h();
    let mut out = Vec::new();
    let mut total = 0.0;
    for flat in grid.nodes_in_box(lo, hi) {
        let Some(i) = mask.active_index(flat) else {
            continue;
        };
        let x = grid.coords(flat);
        let w: f64 = (0..grid.dim())
            .map(|a| {
                if (x[a] - lo[a]).abs() <= tol || (x[a] - hi[a]).abs() <= tol {
                    0.5
                } else {
                    1.0
                }
            })
            .product();
        total += w;
        out.push((i, w));
    }
    if out.is_empty() || total == 0.0 {
        return Err(Error::EmptyCell(Vec::new()));
    }
    out.iter_mut().for_each(|e| e.1 /= total);
    Ok(out)
}

/// Mean of `f` over the closed box `[lo, hi]`; see [`cell_mean_weights`].
pub fn cell_mean(f: &GridFunction, lo: &[f64], hi: &[f64]) -> Result<f64> {
    Ok(cell_mean_weights(&f.mask, lo, hi)?
        .iter()
        .map(|&(i, w)| w * f.values[i])
        .sum())
}
