//! End-to-end experiments across ε with rate fits and deterministic CSV output.

mod cell;
mod config;
mod experiment;

pub use cell::{cell_eigenvalues, CellEigenReport};
pub use config::{DRule, ExperimentConfig, MemberParams, QMode, BYTES_PER_UNKNOWN};
pub use experiment::{
    eigenvalue_experiment, resolvent_experiment, rhs_bank, run_experiment, semigroup_experiment,
    solve_resolvent, ResolventSolve,
};

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::SolveReport;

/// `|cap·ε^{−n} − q| + C·b(n, ε)` with `b = ε|ln ε|` (n = 2), `ε` (n = 3),
/// `ε^{1−β}` (n = 4) and `max(ε, d/ε)` (n ≥ 5).
pub fn delta_formula(
    n: usize,
    eps: f64,
    d: f64,
    cap: f64,
    q: f64,
    beta: Option<f64>,
    c: f64,
) -> Result<f64> {
    if !(eps > 0.0 && d > 0.0 && cap >= 0.0 && q >= 0.0) {
        return Err(Error::DomainError {
            what: "delta_formula",
            detail: format!("need positive eps, d and nonnegative cap, q; got eps = {eps}, d = {d}, cap = {cap}, q = {q}"),
        });
    }
    let first = (cap / eps.powi(n as i32) - q).abs();
    let branch = match n {
        0 | 1 => {
            return Err(Error::DomainError {
                what: "delta_formula",
                detail: format!("dimension {n}"),
            })
        }
        2 => eps * eps.ln().abs(),
        3 => eps,
        4 => match beta {
            Some(b) if b > 0.0 && b < 1.0 => eps.powf(1.0 - b),
            _ => return Err(Error::MissingBeta),
        },
        _ => eps.max(d / eps),
    };
    Ok(first + c * branch)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Resolvent,
    Semigroup,
    Eigen,
}

/// How an operator-norm discrepancy was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measurement {
    /// Exact norm by dense SVD.
    Dense,
    /// Maximum over the right-hand side bank: a lower bound of the norm.
    BankLowerBound,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenGap {
    pub k: usize,
    pub lambda: f64,
    pub lambda_eps: f64,
    pub gap: f64,
    /// `gap / ((λ_ε + 1)(λ + 1) δ)`.
    pub normalized: f64,
    /// `|1/(1+λ_ε) − 1/(1+λ)|`.
    pub transformed: f64,
    /// `q + π² Σ (m_j/L_j)²` for the continuum box.
    pub closed_form: f64,
    /// The same for the discrete Laplacian on the vertex grid.
    pub closed_form_discrete: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemigroupPoint {
    pub t: f64,
    pub discrepancy: f64,
    /// `discrepancy / δ`.
    pub c_t: f64,
}

/// Per-ε result of an experiment. Fields not produced by the experiment
/// stay `None` or empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRecord {
    pub eps: f64,
    pub d: f64,
    pub h: f64,
    pub unknowns: usize,
    pub unknowns_eps: usize,
    pub holes: usize,
    pub cap: f64,
    pub q_used: f64,
    pub cap_mismatch: f64,
    pub delta: f64,
    pub measurement: Option<Measurement>,
    pub resolvent: Option<f64>,
    pub extension: Option<f64>,
    pub sandwich: Option<f64>,
    pub reverse: Option<f64>,
    /// δ from the eight condition constants (dense path only).
    pub delta_measured: Option<f64>,
    /// The 4/6/9/13 bounds against `delta_measured`.
    pub bound_ok: Option<bool>,
    pub margin: Option<f64>,
    pub eigen: Vec<EigenGap>,
    pub semigroup: Vec<SemigroupPoint>,
    pub clean: bool,
    pub error: Option<String>,
    pub solves: Vec<SolveReport>,
}

impl ConvergenceRecord {
    /// Value of a named column: `delta`, `cap_mismatch`, `resolvent`,
    /// `extension`, `sandwich`, `reverse`, `semigroup:t=<t>`, `gap:k=<k>` or
    /// `normalized_gap:k=<k>`.
    pub fn column(&self, name: &str) -> Option<f64> {
        match name {
            "delta" => Some(self.delta),
            "cap_mismatch" => Some(self.cap_mismatch),
            "resolvent" => self.resolvent,
            "extension" => self.extension,
            "sandwich" => self.sandwich,
            "reverse" => self.reverse,
            _ => {
                if let Some(t) = name.strip_prefix("semigroup:t=") {
                    let t: f64 = t.parse().ok()?;
                    self.semigroup
                        .iter()
                        .find(|p| p.t == t)
                        .map(|p| p.discrepancy)
                } else if let Some(k) = name.strip_prefix("gap:k=") {
                    let k: usize = k.parse().ok()?;
                    self.eigen.iter().find(|g| g.k == k).map(|g| g.gap)
                } else if let Some(k) = name.strip_prefix("normalized_gap:k=") {
                    let k: usize = k.parse().ok()?;
                    self.eigen.iter().find(|g| g.k == k).map(|g| g.normalized)
                } else {
                    None
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub column: String,
    pub slope: f64,
    pub intercept: f64,
    /// Root mean square of the residuals in log space.
    pub residual: f64,
    pub points: usize,
}

/// Least-squares line through `(ln ε, ln value)`.
pub fn rate_fit_points(column: &str, eps: &[f64], values: &[f64]) -> Result<RateFit> {
    let pts: Vec<(f64, f64)> = eps
        .iter()
        .zip(values)
        .filter(|(e, v)| **e > 0.0 && **v > 0.0 && v.is_finite())
        .map(|(e, v)| (e.ln(), v.ln()))
        .collect();
    if pts.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "column {column}: {} usable points, need at least 3",
            pts.len()
        )));
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientData(format!(
            "column {column}: all eps equal"
        )));
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (pts
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum::<f64>()
        / m)
        .sqrt();
    Ok(RateFit {
        column: column.to_string(),
        slope,
        intercept,
        residual,
        points: pts.len(),
    })
}

/// Log-log slope of `column` against ε over the clean records.
pub fn rate_fit(records: &[ConvergenceRecord], column: &str) -> Result<RateFit> {
    let (eps, values): (Vec<f64>, Vec<f64>) = records
        .iter()
        .filter(|r| r.clean && r.error.is_none())
        .filter_map(|r| r.column(column).map(|v| (r.eps, v)))
        .unzip();
    rate_fit_points(column, &eps, &values)
}

/// Records of one experiment together with the checks asserted on them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    pub kind: ExperimentKind,
    pub config: ExperimentConfig,
    pub records: Vec<ConvergenceRecord>,
    /// Failed assertions, one message each.
    pub failures: Vec<String>,
}

impl ExperimentOutcome {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    /// Rate fits of the headline columns that have enough clean data.
    pub fn fits(&self) -> Vec<RateFit> {
        let mut cols: Vec<String> = match self.kind {
            ExperimentKind::Resolvent => {
                vec!["delta".into(), "resolvent".into(), "extension".into()]
            }
            ExperimentKind::Semigroup => self
                .config
                .times
                .iter()
                .map(|t| format!("semigroup:t={t}"))
                .collect(),
            ExperimentKind::Eigen => (1..=self.config.eig_count)
                .map(|k| format!("gap:k={k}"))
                .collect(),
        };
        cols.dedup();
        cols.iter()
            .filter_map(|c| rate_fit(&self.records, c).ok())
            .collect()
    }

    /// CSV with the fixed column schema of the experiment kind. The output
    /// depends only on the records, never on timing.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_csv(self.kind, &self.records, out)
    }

    /// JSON sidecar with the config, full records (including solver reports),
    /// fits and failures.
    pub fn sidecar_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Sidecar<'a> {
            kind: ExperimentKind,
            note: &'static str,
            config: &'a ExperimentConfig,
            records: &'a [ConvergenceRecord],
            fits: Vec<RateFit>,
            failures: &'a [String],
        }
        Ok(serde_json::to_string_pretty(&Sidecar {
            kind: self.kind,
            note: "bank_lower_bound measurements are lower bounds of the operator norm; dense measurements are exact",
            config: &self.config,
            records: &self.records,
            fits: self.fits(),
            failures: &self.failures,
        })?)
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

const BASE_COLUMNS: [&str; 10] = [
    "eps",
    "d",
    "h",
    "unknowns",
    "unknowns_eps",
    "holes",
    "cap",
    "q_used",
    "cap_mismatch",
    "delta",
];

fn base_fields(r: &ConvergenceRecord) -> Vec<String> {
    vec![
        r.eps.to_string(),
        r.d.to_string(),
        r.h.to_string(),
        r.unknowns.to_string(),
        r.unknowns_eps.to_string(),
        r.holes.to_string(),
        r.cap.to_string(),
        r.q_used.to_string(),
        r.cap_mismatch.to_string(),
        r.delta.to_string(),
    ]
}

fn measurement_name(m: Option<Measurement>) -> String {
    match m {
        Some(Measurement::Dense) => "dense".into(),
        Some(Measurement::BankLowerBound) => "bank_lower_bound".into(),
        None => String::new(),
    }
}

/// Writes records with the column schema of `kind`.
pub fn write_csv<W: Write>(
    kind: ExperimentKind,
    records: &[ConvergenceRecord],
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    let tail =
        |r: &ConvergenceRecord| vec![r.clean.to_string(), r.error.clone().unwrap_or_default()];
    let mut header: Vec<&str> = BASE_COLUMNS.to_vec();
    match kind {
        ExperimentKind::Resolvent => header.extend([
            "measurement",
            "resolvent",
            "extension",
            "sandwich",
            "reverse",
            "delta_measured",
            "bound_ok",
            "margin",
        ]),
        ExperimentKind::Semigroup => header.extend(["t", "discrepancy", "c_t"]),
        ExperimentKind::Eigen => header.extend([
            "k",
            "lambda",
            "lambda_eps",
            "gap",
            "normalized_gap",
            "transformed_gap",
            "closed_form",
            "closed_form_discrete",
        ]),
    }
    header.extend(["clean", "error"]);
    w.write_record(&header).map_err(csv_err)?;
    for r in records {
        let mut rows: Vec<Vec<String>> = Vec::new();
        match kind {
            ExperimentKind::Resolvent => {
                let mut row = base_fields(r);
                row.extend([
                    measurement_name(r.measurement),
                    opt(r.resolvent),
                    opt(r.extension),
                    opt(r.sandwich),
                    opt(r.reverse),
                    opt(r.delta_measured),
                    r.bound_ok.map(|b| b.to_string()).unwrap_or_default(),
                    opt(r.margin),
                ]);
                rows.push(row);
            }
            ExperimentKind::Semigroup => {
                for p in &r.semigroup {
                    let mut row = base_fields(r);
                    row.extend([
                        p.t.to_string(),
                        p.discrepancy.to_string(),
                        p.c_t.to_string(),
                    ]);
                    rows.push(row);
                }
                if r.semigroup.is_empty() {
                    let mut row = base_fields(r);
                    row.extend([String::new(), String::new(), String::new()]);
                    rows.push(row);
                }
            }
            ExperimentKind::Eigen => {
                for g in &r.eigen {
                    let mut row = base_fields(r);
                    row.extend([
                        g.k.to_string(),
                        g.lambda.to_string(),
                        g.lambda_eps.to_string(),
                        g.gap.to_string(),
                        g.normalized.to_string(),
                        g.transformed.to_string(),
                        g.closed_form.to_string(),
                        g.closed_form_discrete.to_string(),
                    ]);
                    rows.push(row);
                }
                if r.eigen.is_empty() {
                    let mut row = base_fields(r);
                    row.extend(std::iter::repeat_n(String::new(), 8));
                    rows.push(row);
                }
            }
        }
        for mut row in rows {
            row.extend(tail(r));
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}
