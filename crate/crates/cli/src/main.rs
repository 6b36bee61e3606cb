//! Command-line driver for the capacity, experiment and closeness runs.
//!
//! Exit status: 0 when every asserted check passes, 2 when a check fails,
//! 1 on configuration or I/O errors.

mod output;
mod requests;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crushed_ice::capacity::{
    capacity_ball_analytic, capacity_flux, capacity_numeric, effective_q, CapacityProblem,
};
use crushed_ice::closeness::{
    condition_constants, pde_instance, random_instance, verify_resolvent_bound, ClosenessReport,
    CutoffKind, J1Options,
};
use crushed_ice::geometry::{place_holes, DomainSpec, HoleLayout, HoleShape};
use crushed_ice::harness::{run_experiment, solve_resolvent, ExperimentConfig, ExperimentKind};
use crushed_ice::linalg::SolveReport;

use output::RunOutput;
use requests::{
    load_or_default, parse_config, CapacityRequest, ClosenessRequest, InstanceKind, ShapeName,
};

#[derive(Parser, Debug)]
#[command(
    name = "crushed-ice",
    version,
    about = "Perforated-domain homogenization experiments"
)]
struct Cli {
    /// Config file (TOML, or JSON when the extension is .json).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory receiving every output file and the run manifest.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Worker threads; all cores when absent.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Overrides the seed of the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the largest size handled by dense linear algebra.
    #[arg(long, global = true)]
    dense_limit: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Capacity of one hole by a truncated-exterior solve.
    Capacity(CapacityArgs),
    /// One perforated and one homogenized resolvent solve.
    Solve(SolveArgs),
    /// Resolvent discrepancy across the ε family of the config.
    Converge,
    /// Eigenvalue gaps across the ε family of the config.
    Eigen,
    /// Semigroup discrepancy across the ε family of the config.
    Semigroup,
    /// Closeness constants and resolvent bounds on random or PDE instances.
    Closeness(ClosenessArgs),
}

#[derive(Args, Debug)]
struct CapacityArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, value_parser = ["ball", "box"])]
    shape: Option<String>,
    #[arg(long)]
    d: Option<f64>,
    #[arg(long = "R")]
    radius: Option<f64>,
    #[arg(long)]
    h: Option<f64>,
    /// Report file name inside the output directory.
    #[arg(long, default_value = "capacity.json")]
    out: String,
}

#[derive(Args, Debug)]
struct SolveArgs {
    /// Member of the family; the first ε of the config when absent.
    #[arg(long)]
    eps: Option<f64>,
    /// Index into the right-hand side bank.
    #[arg(long, default_value_t = 0)]
    rhs: usize,
}

#[derive(Args, Debug)]
struct ClosenessArgs {
    #[arg(long, value_enum)]
    instance: Option<InstanceKind>,
    #[arg(long)]
    count: Option<usize>,
    /// Largest dimension of random instances.
    #[arg(long)]
    dims: Option<usize>,
    #[arg(long)]
    k: Option<u8>,
    #[arg(long)]
    layout_file: Option<String>,
    /// Dimension of a unit-box PDE layout.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    eps: Option<f64>,
    /// Hole radius of a unit-box PDE layout.
    #[arg(long)]
    d: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    q: Option<f64>,
    #[arg(long)]
    min_resolution: Option<f64>,
    /// Report file name inside the output directory.
    #[arg(long, default_value = "closeness.json")]
    out: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: &Cli) -> Result<bool> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .context("configuring the worker pool")?;
    }
    let config = cli.config.as_deref();
    match &cli.command {
        Command::Capacity(args) => capacity(cli, config, args),
        Command::Solve(args) => solve(cli, experiment_config(cli)?, args),
        Command::Converge => experiment(cli, ExperimentKind::Resolvent, "converge"),
        Command::Eigen => experiment(cli, ExperimentKind::Eigen, "eigen"),
        Command::Semigroup => experiment(cli, ExperimentKind::Semigroup, "semigroup"),
        Command::Closeness(args) => closeness(cli, config, args),
    }
}

fn experiment_config(cli: &Cli) -> Result<ExperimentConfig> {
    let Some(path) = cli.config.as_deref() else {
        bail!("this subcommand needs --config");
    };
    let mut cfg: ExperimentConfig = parse_config(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(limit) = cli.dense_limit {
        cfg.dense_limit = limit;
    }
    cfg.validate()
        .with_context(|| format!("invalid config {}", path.display()))?;
    Ok(cfg)
}

#[derive(Serialize)]
struct RelativeErrors {
    corrected_vs_analytic: Option<f64>,
    flux_vs_energy: f64,
}

#[derive(Serialize)]
struct CapacityReport {
    n: usize,
    shape: String,
    d: f64,
    outer_radius: f64,
    h: f64,
    unknowns: usize,
    cap_energy: f64,
    cap_flux: f64,
    cap_corrected: f64,
    cap_analytic_if_ball: Option<f64>,
    relative_errors: RelativeErrors,
    solve: SolveReport,
    passed: bool,
}

fn capacity(cli: &Cli, config: Option<&Path>, args: &CapacityArgs) -> Result<bool> {
    let mut req: CapacityRequest = load_or_default(config)?;
    if let Some(n) = args.n {
        req.n = n;
    }
    if let Some(s) = &args.shape {
        req.shape = if s == "box" {
            ShapeName::Box
        } else {
            ShapeName::Ball
        };
    }
    if let Some(d) = args.d {
        req.d = d;
    }
    req.radius = args.radius.or(req.radius);
    req.h = args.h.or(req.h);
    let shape = match req.shape {
        ShapeName::Ball => HoleShape::ball(req.d)?,
        ShapeName::Box => {
            let hw = req
                .half_widths
                .clone()
                .unwrap_or_else(|| vec![req.d / (req.n as f64).sqrt(); req.n]);
            HoleShape::axis_box(&hw)?
        }
    };
    let problem = CapacityProblem::new(req.n, shape.clone(), req.radius)?;
    let h = req.h.unwrap_or(shape.d() / 16.0);
    let res = capacity_numeric(&problem, h)?;
    let cap_flux = capacity_flux(&res.field);
    let analytic = match req.shape {
        ShapeName::Ball => Some(capacity_ball_analytic(req.n, req.d)?),
        ShapeName::Box => None,
    };
    let rel_analytic = analytic.map(|a| (res.cap_corrected - a) / a);
    let rel_flux = (cap_flux - res.cap_energy).abs() / res.cap_energy;
    let passed = rel_flux <= req.flux_tol && rel_analytic.is_none_or(|e| e.abs() <= req.rel_tol);
    let report = CapacityReport {
        n: req.n,
        shape: shape.kind_name().to_string(),
        d: shape.d(),
        outer_radius: problem.outer_radius,
        h,
        unknowns: res.unknowns,
        cap_energy: res.cap_energy,
        cap_flux,
        cap_corrected: res.cap_corrected,
        cap_analytic_if_ball: analytic,
        relative_errors: RelativeErrors {
            corrected_vs_analytic: rel_analytic,
            flux_vs_energy: rel_flux,
        },
        solve: res.solve.clone(),
        passed,
    };
    println!(
        "capacity n = {} d = {} h = {h}: corrected {:.6}, flux {:.6}, analytic {:?}",
        req.n, req.d, res.cap_corrected, cap_flux, analytic
    );
    let mut out = RunOutput::new(&cli.out_dir)?;
    out.write_json(&args.out, &report)?;
    out.finish("capacity", &req, 0, passed)?;
    Ok(passed)
}

#[derive(Serialize)]
struct SolveSummary {
    eps: f64,
    d: f64,
    h: f64,
    q: f64,
    holes: usize,
    rhs: usize,
    unknowns: usize,
    unknowns_eps: usize,
    discrepancy: f64,
    solves: Vec<SolveReport>,
}

fn solve(cli: &Cli, cfg: ExperimentConfig, args: &SolveArgs) -> Result<bool> {
    let eps = args.eps.unwrap_or(cfg.eps[0]);
    let s = solve_resolvent(&cfg, eps, args.rhs)?;
    let mut homogenized = Vec::new();
    s.homogenized.write_csv(&mut homogenized)?;
    let mut perforated = Vec::new();
    s.perforated.write_csv(&mut perforated)?;
    let summary = SolveSummary {
        eps,
        d: s.params.d,
        h: s.params.h,
        q: s.params.q,
        holes: s.holes,
        rhs: args.rhs,
        unknowns: s.homogenized.values().len(),
        unknowns_eps: s.perforated.values().len(),
        discrepancy: s.discrepancy,
        solves: s.solves.clone(),
    };
    println!(
        "solve eps = {eps}: {} holes, discrepancy {:.6e}",
        s.holes, s.discrepancy
    );
    let mut out = RunOutput::new(&cli.out_dir)?;
    out.write("solve_homogenized.csv", &homogenized)?;
    out.write("solve_perforated.csv", &perforated)?;
    out.write_json("solve.json", &summary)?;
    out.finish("solve", &cfg, cfg.seed, true)?;
    Ok(true)
}

fn experiment(cli: &Cli, kind: ExperimentKind, name: &str) -> Result<bool> {
    let cfg = experiment_config(cli)?;
    let outcome = run_experiment(kind, &cfg)?;
    let mut csv = Vec::new();
    outcome.write_csv(&mut csv)?;
    for r in &outcome.records {
        match &r.error {
            Some(e) => println!("eps = {:.6}: error: {e}", r.eps),
            None => println!(
                "eps = {:.6}: {} unknowns, {} holes, delta {:.4e}",
                r.eps, r.unknowns, r.holes, r.delta
            ),
        }
    }
    for f in &outcome.failures {
        eprintln!("check failed: {f}");
    }
    let passed = outcome.passed();
    let mut out = RunOutput::new(&cli.out_dir)?;
    out.write(&format!("{name}.csv"), &csv)?;
    out.write(&format!("{name}.json"), outcome.sidecar_json()?.as_bytes())?;
    out.finish(name, &cfg, cfg.seed, passed)?;
    Ok(passed)
}

#[derive(Serialize)]
struct ClosenessEntry {
    index: usize,
    dim: usize,
    dim_eps: usize,
    k: u8,
    cutoff: Option<CutoffKind>,
    report: ClosenessReport,
}

fn closeness(cli: &Cli, config: Option<&Path>, args: &ClosenessArgs) -> Result<bool> {
    let mut req: ClosenessRequest = load_or_default(config)?;
    if let Some(v) = args.instance {
        req.instance = v;
    }
    if let Some(v) = cli.seed {
        req.seed = v;
    }
    if let Some(v) = cli.dense_limit {
        req.dense_limit = v;
    }
    if let Some(v) = args.count {
        req.count = v;
    }
    if let Some(v) = args.dims {
        req.dims = v;
    }
    if let Some(v) = args.min_resolution {
        req.min_resolution = v;
    }
    req.k = args.k.or(req.k);
    if let Some(v) = args.n {
        req.n = v;
    }
    if let Some(v) = args.kappa {
        req.kappa = v;
    }
    req.layout_file = args.layout_file.clone().or(req.layout_file);
    req.eps = args.eps.or(req.eps);
    req.d = args.d.or(req.d);
    req.h = args.h.or(req.h);
    req.q = args.q.or(req.q);
    req.validate()?;

    let mut entries = Vec::new();
    match req.instance {
        InstanceKind::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
            for index in 0..req.count {
                let (pair, mut ids) = random_instance(&mut rng, req.dims);
                if let Some(k) = req.k {
                    ids.k = k;
                }
                let constants = condition_constants(&pair, &ids)?;
                let report = verify_resolvent_bound(&pair, &ids, &constants, req.slack)?;
                entries.push(ClosenessEntry {
                    index,
                    dim: pair.dim(),
                    dim_eps: pair.dim_eps(),
                    k: ids.k,
                    cutoff: None,
                    report,
                });
            }
        }
        InstanceKind::Pde => {
            let layout = match req.layout_file.as_deref() {
                Some(path) => {
                    let text = std::fs::read_to_string(path)
                        .with_context(|| format!("reading layout {path}"))?;
                    HoleLayout::from_json(&text)?
                }
                None => {
                    let spec = DomainSpec::new(&vec![1.0; req.n], req.eps.unwrap_or_default())?;
                    place_holes(
                        &spec,
                        &HoleShape::ball(req.d.unwrap_or_default())?,
                        req.kappa,
                    )?
                }
            };
            let n = layout.dim();
            let q = match req.q {
                Some(q) => q,
                None if layout.shape().is_ball() => effective_q(
                    n,
                    layout.spec().epsilon(),
                    capacity_ball_analytic(n, layout.shape().d())?,
                ),
                None => bail!("non-ball layouts need an explicit q"),
            };
            let opts = J1Options {
                min_resolution: req.min_resolution,
                ..J1Options::default()
            };
            let h = req.h.unwrap_or_default();
            let inst = pde_instance(&layout, h, q, req.k.unwrap_or(2), &opts, req.dense_limit)?;
            let constants = condition_constants(&inst.pair, &inst.ids)?;
            let report = verify_resolvent_bound(&inst.pair, &inst.ids, &constants, req.slack)?;
            entries.push(ClosenessEntry {
                index: 0,
                dim: inst.pair.dim(),
                dim_eps: inst.pair.dim_eps(),
                k: inst.ids.k,
                cutoff: Some(inst.j1.cutoff),
                report,
            });
        }
    }
    let failed = entries.iter().filter(|e| !e.report.bound_ok.all()).count();
    println!(
        "closeness: {} instances, {failed} with a violated bound",
        entries.len()
    );
    let passed = failed == 0;
    let mut out = RunOutput::new(&cli.out_dir)?;
    out.write_json(&args.out, &entries)?;
    out.finish("closeness", &req, req.seed, passed)?;
    Ok(passed)
}
