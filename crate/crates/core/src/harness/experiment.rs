//! Per-ε experiment pipelines.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{ExperimentConfig, MemberParams};
use super::{
    delta_formula, ConvergenceRecord, EigenGap, ExperimentKind, ExperimentOutcome, Measurement,
    SemigroupPoint,
};
use crate::closeness::{build_j1, Analysis, FormPair, IdentificationSet, J1Options};
use crate::error::{Error, Result};
use crate::geometry::{place_holes, HoleLayout, HoleShape};
use crate::grid::{
    assemble_laplacian, selection_matrix, CartesianGrid, GridFunction, GridOperator, NodeMask,
};
use crate::linalg::{
    cg_solve, lowest_eigenpairs, AmgHierarchy, CgOptions, CsrMatrix, EigOptions, ExpmOptions,
    SemigroupPlan, SolveReport,
};

/// Both operators of one ε on a shared vertex grid.
struct Member {
    layout: HoleLayout,
    full_mask: Arc<NodeMask>,
    perf_mask: Arc<NodeMask>,
    full: GridOperator,
    perf: GridOperator,
    /// Restriction `J` (M × N).
    j: CsrMatrix,
    /// Extension by zero `J′` (N × M).
    jp: CsrMatrix,
}

fn layout_for(cfg: &ExperimentConfig, p: &MemberParams) -> Result<HoleLayout> {
    let spec = cfg.domain(p.eps)?;
    let shape = HoleShape::ball(p.d)?;
    if cfg.holes {
        place_holes(&spec, &shape, cfg.kappa)
    } else {
        Ok(HoleLayout::empty(&spec, &shape, cfg.kappa))
    }
}

fn build_member(cfg: &ExperimentConfig, p: &MemberParams, h: f64) -> Result<Member> {
    let unknowns = cfg
        .extents()
        .iter()
        .map(|e| ((e / h).round() as usize).saturating_sub(1))
        .product::<usize>();
    let mb = unknowns as f64 * super::BYTES_PER_UNKNOWN / (1024.0 * 1024.0);
    if mb > cfg.memory_budget_mb {
        return Err(Error::ResourceLimit(format!(
            "eps = {}: {unknowns} unknowns need about {mb:.0} MB, budget {} MB",
            p.eps, cfg.memory_budget_mb
        )));
    }
    let layout = layout_for(cfg, p)?;
    let grid = Arc::new(CartesianGrid::for_domain(layout.spec(), h)?);
    let full_mask = Arc::new(NodeMask::full(grid.clone()));
    let perf_mask = Arc::new(NodeMask::perforated(grid, &layout)?);
    let full = assemble_laplacian(full_mask.clone(), p.q)?;
    let perf = assemble_laplacian(perf_mask.clone(), 0.0)?;
    let j = selection_matrix(&full_mask, &perf_mask)?;
    let jp = selection_matrix(&perf_mask, &full_mask)?;
    Ok(Member {
        layout,
        full_mask,
        perf_mask,
        full,
        perf,
        j,
        jp,
    })
}

fn multi_indices(n: usize, max: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|v| {
                (1..=max).map(move |m| {
                    let mut w = v.clone();
                    w.push(m);
                    w
                })
            })
            .collect();
    }
    out
}

/// The right-hand side bank on the full grid: the constant, `bank_sines`
/// products of sines in order of total frequency, and `bank_random` seeded
/// uniform fields.
pub fn rhs_bank(cfg: &ExperimentConfig, mask: &NodeMask) -> Vec<Vec<f64>> {
    let grid = mask.grid();
    let n = grid.dim();
    let lo = grid.lo().to_vec();
    let ext: Vec<f64> = (0..n).map(|a| grid.hi()[a] - lo[a]).collect();
    let count = mask.active_count();
    let mut bank = vec![vec![1.0; count]];
    let mut modes = multi_indices(n, 4);
    modes.sort_by_key(|m| (m.iter().sum::<usize>(), m.clone()));
    for m in modes.iter().take(cfg.bank_sines) {
        bank.push(
            (0..count)
                .map(|i| {
                    let x = mask.coords_of(i);
                    (0..n)
                        .map(|a| (PI * m[a] as f64 * (x[a] - lo[a]) / ext[a]).sin())
                        .product()
                })
                .collect(),
        );
    }
    for r in 0..cfg.bank_random {
        let mut rng =
            ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(1_000_003).wrapping_add(r as u64));
        bank.push((0..count).map(|_| rng.random_range(-1.0..1.0)).collect());
    }
    bank
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn diff_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// `(A + 1)⁻¹` by AMG-preconditioned CG.
struct ShiftedSolver {
    m: CsrMatrix,
    amg: AmgHierarchy,
    opts: CgOptions,
}

impl ShiftedSolver {
    fn new(op: &GridOperator, tol: f64) -> Self {
        let m = op.matrix().add_diagonal(1.0);
        let amg = AmgHierarchy::new(&m);
        Self {
            m,
            amg,
            opts: CgOptions {
                tol,
                ..CgOptions::default()
            },
        }
    }

    fn solve(&self, rhs: &[f64], log: &mut Vec<SolveReport>) -> Result<Vec<f64>> {
        let (x, rep) = cg_solve(&self.m, &self.amg, rhs, &self.opts)?;
        log.push(rep);
        Ok(x)
    }
}

fn base_record(cfg: &ExperimentConfig, p: &MemberParams) -> ConvergenceRecord {
    let holes = layout_for(cfg, p).map(|l| l.len()).unwrap_or(0);
    let delta =
        delta_formula(cfg.n, p.eps, p.d, p.cap, p.q, cfg.beta, cfg.delta_c).unwrap_or(f64::NAN);
    ConvergenceRecord {
        eps: p.eps,
        d: p.d,
        h: p.h,
        unknowns: p.unknowns,
        unknowns_eps: 0,
        holes,
        cap: p.cap,
        q_used: p.q,
        cap_mismatch: (p.cap / p.eps.powi(cfg.n as i32) - p.q).abs(),
        delta,
        measurement: None,
        resolvent: None,
        extension: None,
        sandwich: None,
        reverse: None,
        delta_measured: None,
        bound_ok: None,
        margin: None,
        eigen: Vec::new(),
        semigroup: Vec::new(),
        clean: cfg.resolution_clean(p),
        error: None,
        solves: Vec::new(),
    }
}

struct ResolventValues {
    values: [f64; 4],
    measurement: Measurement,
    delta_measured: Option<f64>,
    bound_ok: Option<bool>,
}

fn resolvent_values(
    cfg: &ExperimentConfig,
    m: &Member,
    log: &mut Vec<SolveReport>,
) -> Result<ResolventValues> {
    let size = m.full.dim().max(m.perf.dim());
    if size <= cfg.dense_limit {
        let pair = FormPair::from_operators(&m.full, &m.perf, cfg.dense_limit)?;
        let j = m.j.to_dense();
        let jp = m.jp.to_dense();
        let j1 = build_j1(&m.layout, &m.full_mask, &m.perf_mask, &J1Options::default()).ok();
        let ids = IdentificationSet {
            j1: j1
                .as_ref()
                .map_or_else(|| j.clone(), |x| x.matrix.to_dense()),
            j1p: jp.clone(),
            j,
            jp,
            k: 2,
        };
        let analysis = Analysis::new(&pair, &ids, cfg.dense_limit)?;
        let constants = analysis.constants();
        let rep = analysis.resolvent_report(&constants, 1e-9);
        return Ok(ResolventValues {
            values: [
                rep.lhs_resolvent,
                rep.lhs_extension,
                rep.lhs_sandwich,
                rep.lhs_reverse,
            ],
            measurement: Measurement::Dense,
            delta_measured: j1.as_ref().map(|_| constants.delta),
            bound_ok: j1.as_ref().map(|_| rep.bound_ok.all()),
        });
    }
    let solver = ShiftedSolver::new(&m.full, cfg.tol);
    let solver_eps = ShiftedSolver::new(&m.perf, cfg.tol);
    let mut best = [0.0f64; 4];
    for f in rhs_bank(cfg, &m.full_mask) {
        let nf = norm(&f);
        let u = solver.solve(&f, log)?;
        let g = m.j.mul_vec(&f);
        let v = solver_eps.solve(&g, log)?;
        let w = solver.solve(&m.jp.mul_vec(&g), log)?;
        let ng = norm(&g);
        best[0] = best[0].max(diff_norm(&v, &m.j.mul_vec(&u)) / nf);
        best[2] = best[2].max(diff_norm(&m.jp.mul_vec(&v), &u) / nf);
        if ng > 0.0 {
            best[1] = best[1].max(diff_norm(&m.jp.mul_vec(&v), &w) / ng);
            best[3] = best[3].max(diff_norm(&v, &m.j.mul_vec(&w)) / ng);
        }
    }
    Ok(ResolventValues {
        values: best,
        measurement: Measurement::BankLowerBound,
        delta_measured: None,
        bound_ok: None,
    })
}

fn resolvent_member(cfg: &ExperimentConfig, p: &MemberParams) -> ConvergenceRecord {
    let mut rec = base_record(cfg, p);
    let run = |rec: &mut ConvergenceRecord| -> Result<()> {
        let m = build_member(cfg, p, p.h)?;
        rec.unknowns_eps = m.perf.dim();
        let vals = resolvent_values(cfg, &m, &mut rec.solves)?;
        drop(m);
        let [res, ext, sand, rev] = vals.values;
        rec.measurement = Some(vals.measurement);
        rec.resolvent = Some(res);
        rec.extension = Some(ext);
        rec.sandwich = Some(sand);
        rec.reverse = Some(rev);
        rec.delta_measured = vals.delta_measured;
        rec.bound_ok = vals.bound_ok;
        if cfg.refine {
            let fine = build_member(cfg, p, p.h / 2.0)?;
            let fine_vals = resolvent_values(cfg, &fine, &mut rec.solves)?;
            rec.margin = Some(3.0 * (res - fine_vals.values[0]).abs());
        }
        Ok(())
    };
    if let Err(e) = run(&mut rec) {
        rec.error = Some(e.to_string());
        rec.clean = false;
    }
    rec
}

fn semigroup_member(cfg: &ExperimentConfig, p: &MemberParams) -> ConvergenceRecord {
    let mut rec = base_record(cfg, p);
    let run = |rec: &mut ConvergenceRecord| -> Result<()> {
        let m = build_member(cfg, p, p.h)?;
        rec.unknowns_eps = m.perf.dim();
        let opts = ExpmOptions {
            tol: cfg.expm_tol,
            dense_limit: cfg.dense_limit,
            ..ExpmOptions::default()
        };
        let bank: Vec<Vec<f64>> = rhs_bank(cfg, &m.full_mask)
            .iter()
            .map(|f| m.j.mul_vec(f))
            .collect();
        let plans_eps = SemigroupPlan::for_times(m.perf.matrix(), &cfg.times, &opts)?;
        let plans = SemigroupPlan::for_times(m.full.matrix(), &cfg.times, &opts)?;
        for (plan_eps, plan) in plans_eps.iter().zip(&plans) {
            let mut worst = 0.0f64;
            for u in &bank {
                let nu = norm(u);
                if nu == 0.0 {
                    continue;
                }
                let a = plan_eps.apply(u)?;
                let b = m.j.mul_vec(&plan.apply(&m.jp.mul_vec(u))?);
                worst = worst.max(diff_norm(&a, &b) / nu);
            }
            rec.semigroup.push(SemigroupPoint {
                t: plan.t(),
                discrepancy: worst,
                c_t: worst / rec.delta,
            });
        }
        Ok(())
    };
    if let Err(e) = run(&mut rec) {
        rec.error = Some(e.to_string());
        rec.clean = false;
    }
    rec
}

/// Lowest `k` values of `q + Σ μ(m_j)` over multi-indices, for a separable
/// one-dimensional spectrum `μ`.
fn separable_lowest(
    n: usize,
    k: usize,
    q: f64,
    mu: impl Fn(usize, usize) -> f64,
    max_mode: &[usize],
) -> Vec<f64> {
    let top = k + 2;
    let mut vals: Vec<f64> = multi_indices(n, top)
        .into_iter()
        .filter(|m| m.iter().zip(max_mode).all(|(a, b)| a <= b))
        .map(|m| q + m.iter().enumerate().map(|(a, &mj)| mu(a, mj)).sum::<f64>())
        .collect();
    vals.sort_by(f64::total_cmp);
    vals.truncate(k);
    vals
}

fn eigen_member(cfg: &ExperimentConfig, p: &MemberParams) -> ConvergenceRecord {
    let mut rec = base_record(cfg, p);
    let run = |rec: &mut ConvergenceRecord| -> Result<()> {
        let m = build_member(cfg, p, p.h)?;
        rec.unknowns_eps = m.perf.dim();
        let k = cfg.eig_count.min(m.perf.dim()).min(m.full.dim());
        let opts = EigOptions {
            tol: cfg.eig_tol,
            seed: cfg.seed,
            dense_limit: cfg.dense_limit,
            ..EigOptions::default()
        };
        let (full, _) = lowest_eigenpairs(m.full.matrix(), k, &opts)?;
        let (perf, _) = lowest_eigenpairs(m.perf.matrix(), k, &opts)?;
        let ext = cfg.extents();
        let h = p.h;
        let intervals: Vec<usize> = ext.iter().map(|e| (e / h).round() as usize).collect();
        let max_mode: Vec<usize> = intervals.iter().map(|&i| i.saturating_sub(1)).collect();
        let cont = separable_lowest(
            cfg.n,
            k,
            p.q,
            |a, mj| (PI * mj as f64 / ext[a]).powi(2),
            &max_mode,
        );
        let disc = separable_lowest(
            cfg.n,
            k,
            p.q,
            |a, mj| 4.0 / (h * h) * (PI * mj as f64 * h / (2.0 * ext[a])).sin().powi(2),
            &max_mode,
        );
        for i in 0..k {
            let l = full.eigenvalues[i];
            let le = perf.eigenvalues[i];
            let gap = (le - l).abs();
            rec.eigen.push(EigenGap {
                k: i + 1,
                lambda: l,
                lambda_eps: le,
                gap,
                normalized: gap / ((le + 1.0) * (l + 1.0) * rec.delta),
                transformed: (1.0 / (1.0 + le) - 1.0 / (1.0 + l)).abs(),
                closed_form: cont.get(i).copied().unwrap_or(f64::NAN),
                closed_form_discrete: disc.get(i).copied().unwrap_or(f64::NAN),
            });
        }
        Ok(())
    };
    if let Err(e) = run(&mut rec) {
        rec.error = Some(e.to_string());
        rec.clean = false;
    }
    rec
}

fn assertions(
    cfg: &ExperimentConfig,
    kind: ExperimentKind,
    records: &[ConvergenceRecord],
) -> Vec<String> {
    let mut out = Vec::new();
    for r in records {
        let tag = format!("eps = {}", r.eps);
        if let Some(e) = &r.error {
            out.push(format!("{tag}: {e}"));
            continue;
        }
        let null = !cfg.holes && r.q_used == 0.0;
        let mut values: Vec<f64> = [r.resolvent, r.extension, r.sandwich, r.reverse]
            .into_iter()
            .flatten()
            .collect();
        values.extend(r.semigroup.iter().map(|s| s.discrepancy));
        values.extend(r.eigen.iter().map(|g| g.gap));
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            out.push(format!("{tag}: non-finite or negative discrepancy"));
        }
        if r.bound_ok == Some(false) {
            out.push(format!(
                "{tag}: the 4/6/9/13 bounds fail against the measured delta"
            ));
        }
        for s in &r.semigroup {
            if s.t == 0.0 && s.discrepancy != 0.0 {
                out.push(format!(
                    "{tag}: t = 0 discrepancy {} is not exactly zero",
                    s.discrepancy
                ));
            }
        }
        if null {
            let limit = match kind {
                ExperimentKind::Resolvent => 10.0 * cfg.tol,
                ExperimentKind::Semigroup => 10.0 * cfg.expm_tol,
                ExperimentKind::Eigen => 10.0 * cfg.eig_tol,
            };
            let worst = match kind {
                ExperimentKind::Eigen => r
                    .eigen
                    .iter()
                    .map(|g| g.gap / g.lambda.abs().max(1.0))
                    .fold(0.0, f64::max),
                _ => values.iter().copied().fold(0.0, f64::max),
            };
            if worst > limit {
                out.push(format!(
                    "{tag}: null case discrepancy {worst:e} exceeds {limit:e}"
                ));
            }
        }
    }
    out
}

fn run_members(
    cfg: &ExperimentConfig,
    kind: ExperimentKind,
    member: fn(&ExperimentConfig, &MemberParams) -> ConvergenceRecord,
) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let params: Vec<MemberParams> = cfg
        .eps
        .iter()
        .map(|&e| cfg.params(e))
        .collect::<Result<_>>()?;
    let mut records: Vec<ConvergenceRecord> = params.par_iter().map(|p| member(cfg, p)).collect();
    records.sort_by(|a, b| b.eps.total_cmp(&a.eps));
    let failures = assertions(cfg, kind, &records);
    Ok(ExperimentOutcome {
        kind,
        config: cfg.clone(),
        records,
        failures,
    })
}

/// Resolvent discrepancies per ε, dense when both spaces fit the dense limit
/// and otherwise as a lower bound over the right-hand side bank.
pub fn resolvent_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    run_members(cfg, ExperimentKind::Resolvent, resolvent_member)
}

/// `sup_u ‖e^{−A_ε t}u − J e^{−At} J′u‖ / ‖u‖` over the bank, per ε and t.
pub fn semigroup_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    run_members(cfg, ExperimentKind::Semigroup, semigroup_member)
}

/// Lowest eigenvalues of both operators per ε and their gaps.
pub fn eigenvalue_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    run_members(cfg, ExperimentKind::Eigen, eigen_member)
}

pub fn run_experiment(kind: ExperimentKind, cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    match kind {
        ExperimentKind::Resolvent => resolvent_experiment(cfg),
        ExperimentKind::Semigroup => semigroup_experiment(cfg),
        ExperimentKind::Eigen => eigenvalue_experiment(cfg),
    }
}

/// One perforated and one homogenized resolvent solve for a bank vector.
#[derive(Clone, Debug)]
pub struct ResolventSolve {
    pub params: MemberParams,
    pub holes: usize,
    /// `(A + 1)⁻¹ f` on the full grid.
    pub homogenized: GridFunction,
    /// `(A_ε + 1)⁻¹ J f` on the perforated grid.
    pub perforated: GridFunction,
    /// `‖(A_ε + 1)⁻¹ J f − J (A + 1)⁻¹ f‖ / ‖f‖`.
    pub discrepancy: f64,
    pub solves: Vec<SolveReport>,
}

/// Solves both resolvent problems at one `ε` for entry `rhs` of the bank.
pub fn solve_resolvent(cfg: &ExperimentConfig, eps: f64, rhs: usize) -> Result<ResolventSolve> {
    let params = cfg.params(eps)?;
    let m = build_member(cfg, &params, params.h)?;
    let bank = rhs_bank(cfg, &m.full_mask);
    let f = bank.get(rhs).ok_or_else(|| Error::DomainError {
        what: "solve_resolvent",
        detail: format!("rhs index {rhs} outside the bank of {} vectors", bank.len()),
    })?;
    let mut solves = Vec::new();
    let u = ShiftedSolver::new(&m.full, cfg.tol).solve(f, &mut solves)?;
    let v = ShiftedSolver::new(&m.perf, cfg.tol).solve(&m.j.mul_vec(f), &mut solves)?;
    let discrepancy = diff_norm(&v, &m.j.mul_vec(&u)) / norm(f);
    Ok(ResolventSolve {
        params,
        holes: m.layout.len(),
        homogenized: GridFunction::new(m.full_mask.clone(), u)?,
        perforated: GridFunction::new(m.perf_mask.clone(), v)?,
        discrepancy,
        solves,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn null_cfg() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new(2, vec![0.5, 0.25], 0.2);
        cfg.holes = false;
        cfg.q_mode = super::super::QMode::Fixed;
        cfg.q = Some(0.0);
        cfg.h = Some(1.0 / 16.0);
        cfg.d_rule = "0.01".into();
        cfg
    }

    #[test]
    fn bank_has_twenty_one_vectors() {
        let cfg = null_cfg();
        let grid = Arc::new(CartesianGrid::vertex(&[0.0, 0.0], &[1.0, 1.0], 0.125).unwrap());
        let mask = NodeMask::full(grid);
        let bank = rhs_bank(&cfg, &mask);
        assert_eq!(bank.len(), 21);
        assert!(bank.iter().all(|v| v.len() == 49));
        assert_eq!(bank, rhs_bank(&cfg, &mask));
    }

    #[test]
    fn null_case_is_exact() {
        let mut cfg = null_cfg();
        for kind in [
            ExperimentKind::Resolvent,
            ExperimentKind::Semigroup,
            ExperimentKind::Eigen,
        ] {
            let out = run_experiment(kind, &cfg).unwrap();
            assert!(out.passed(), "{kind:?}: {:?}", out.failures);
        }
        // bank path too
        cfg.dense_limit = 10;
        let out = resolvent_experiment(&cfg).unwrap();
        assert_eq!(
            out.records[0].measurement,
            Some(Measurement::BankLowerBound)
        );
        assert!(out.passed(), "{:?}", out.failures);
        assert_eq!(out.records[0].resolvent, Some(0.0));
    }

    #[test]
    fn homogenized_eigenvalues_match_closed_form() {
        let mut cfg = null_cfg();
        cfg.q = Some(3.0);
        cfg.eig_count = 4;
        let out = eigenvalue_experiment(&cfg).unwrap();
        for r in &out.records {
            for g in &r.eigen {
                assert!((g.lambda - g.closed_form_discrete).abs() < 1e-8 * g.lambda);
                assert!((g.lambda - g.closed_form).abs() < 0.02 * g.closed_form);
            }
        }
    }

    #[test]
    fn records_are_ordered_by_descending_eps() {
        let mut cfg = null_cfg();
        cfg.eps = vec![0.25, 0.5];
        let out = resolvent_experiment(&cfg).unwrap();
        assert_eq!(out.records[0].eps, 0.5);
    }

    #[test]
    fn resource_guard_records_error() {
        let mut cfg = null_cfg();
        cfg.memory_budget_mb = 1e-6;
        let out = resolvent_experiment(&cfg).unwrap();
        assert!(!out.passed());
        assert!(out.records[0]
            .error
            .as_deref()
            .unwrap()
            .contains("resource limit"));
    }

    #[test]
    fn dense_perforated_member_meets_bounds() {
        let mut cfg = ExperimentConfig::new(3, vec![0.25], 0.25);
        cfg.d_rule = "0.0625".into();
        cfg.h = Some(0.125);
        cfg.heuristic = true;
        cfg.times = vec![0.0, 0.1];
        let out = resolvent_experiment(&cfg).unwrap();
        let r = &out.records[0];
        assert_eq!(r.holes, 8);
        assert_eq!(r.measurement, Some(Measurement::Dense));
        // d/h = 1/2 is below the J¹ resolution requirement
        assert_eq!(r.bound_ok, None);
        let sg = semigroup_experiment(&cfg).unwrap();
        assert!(sg.passed(), "{:?}", sg.failures);
        assert!(sg.records[0].semigroup[1].discrepancy > 0.0);
    }
}
