//! Experiment configuration with defaults and validation.

use serde::{Deserialize, Serialize};

use crate::capacity::capacity_ball_analytic;
use crate::error::{Error, Result};
use crate::geometry::{check_size_rule, place_holes, DomainSpec, HoleShape};
use crate::linalg::DEFAULT_DENSE_LIMIT;

/// Bytes per unknown assumed by the resource guard (operator, multigrid
/// hierarchy and Krylov vectors of both problems).
pub const BYTES_PER_UNKNOWN: f64 = 400.0;

/// How the homogenized potential `q` is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum QMode {
    /// `q = cap(D_ε) / εⁿ` for each ε, so the first term of δ vanishes.
    #[default]
    Effective,
    /// The value of `q` from the config.
    Fixed,
}

/// Hole radius as a function of ε: `coef · ε^power`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DRule {
    pub coef: f64,
    pub power: f64,
}

impl DRule {
    /// Parses `"c*eps^P"`, `"c*eps"`, `"eps^P"` or a literal number, where
    /// `c` stands for the config coefficient.
    pub fn parse(text: &str, c: f64) -> Result<Self> {
        let s: String = text.chars().filter(|ch| !ch.is_whitespace()).collect();
        let bad = || Error::Config(format!("d_rule {text:?}: expected the form \"c*eps^P\""));
        let (coef_part, rest) = match s.find("eps") {
            None => {
                return s
                    .parse::<f64>()
                    .map(|v| Self {
                        coef: v,
                        power: 0.0,
                    })
                    .map_err(|_| bad())
            }
            Some(0) => ("", &s[3..]),
            Some(i) => {
                let head = &s[..i];
                (head.strip_suffix('*').ok_or_else(bad)?, &s[i + 3..])
            }
        };
        let coef = match coef_part {
            "" => 1.0,
            "c" => c,
            num => num.parse::<f64>().map_err(|_| bad())?,
        };
        let power = match rest {
            "" => 1.0,
            r => r
                .strip_prefix('^')
                .ok_or_else(bad)?
                .parse::<f64>()
                .map_err(|_| bad())?,
        };
        Ok(Self { coef, power })
    }

    pub fn eval(&self, eps: f64) -> f64 {
        self.coef * eps.powf(self.power)
    }
}

fn default_box() -> Vec<f64> {
    Vec::new()
}
fn default_d_rule() -> String {
    "c*eps^3".into()
}
fn default_one() -> f64 {
    1.0
}
fn default_h_factor() -> f64 {
    8.0
}
fn default_true() -> bool {
    true
}
fn default_bank_sines() -> usize {
    12
}
fn default_bank_random() -> usize {
    8
}
fn default_eig_count() -> usize {
    5
}
fn default_dense_limit() -> usize {
    DEFAULT_DENSE_LIMIT
}
fn default_tol() -> f64 {
    1e-10
}
fn default_eig_tol() -> f64 {
    1e-8
}
fn default_expm_tol() -> f64 {
    1e-8
}
fn default_budget() -> f64 {
    2048.0
}
fn default_times() -> Vec<f64> {
    vec![0.0, 0.1, 1.0]
}

/// One experiment family over a list of ε.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n: usize,
    /// Box extents; empty means the unit cube.
    #[serde(default = "default_box", rename = "box")]
    pub box_extents: Vec<f64>,
    pub eps: Vec<f64>,
    #[serde(default = "default_d_rule")]
    pub d_rule: String,
    #[serde(default = "default_one")]
    pub c: f64,
    pub kappa: f64,
    /// Place holes at all; `false` gives the unperforated null case.
    #[serde(default = "default_true")]
    pub holes: bool,
    #[serde(default)]
    pub q_mode: QMode,
    /// Used when `q_mode = "fixed"`.
    #[serde(default)]
    pub q: Option<f64>,
    /// Required for `n = 4`.
    #[serde(default)]
    pub beta: Option<f64>,
    /// Constant multiplying the ε-branch of δ.
    #[serde(default = "default_one")]
    pub delta_c: f64,
    /// Grid width is `d / h_factor` unless `h` is given.
    #[serde(default = "default_h_factor")]
    pub h_factor: f64,
    #[serde(default)]
    pub h: Option<f64>,
    /// Skip the size rule and the `h ≤ d/8` requirement; records are marked unclean.
    #[serde(default)]
    pub heuristic: bool,
    /// Bound in the size rule `d^{n−2}/εⁿ ≤ size_c`.
    #[serde(default = "default_one")]
    pub size_c: f64,
    #[serde(default = "default_bank_sines")]
    pub bank_sines: usize,
    #[serde(default = "default_bank_random")]
    pub bank_random: usize,
    #[serde(default = "default_times")]
    pub times: Vec<f64>,
    #[serde(default = "default_eig_count")]
    pub eig_count: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_dense_limit")]
    pub dense_limit: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_eig_tol")]
    pub eig_tol: f64,
    #[serde(default = "default_expm_tol")]
    pub expm_tol: f64,
    /// Also run at `h/2` and record `3·|value(h) − value(h/2)|` as margin.
    #[serde(default)]
    pub refine: bool,
    #[serde(default = "default_budget")]
    pub memory_budget_mb: f64,
}

/// Derived per-ε parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemberParams {
    pub eps: f64,
    pub d: f64,
    pub h: f64,
    pub cap: f64,
    pub q: f64,
    pub unknowns: usize,
}

impl ExperimentConfig {
    /// A config with every default filled in.
    pub fn new(n: usize, eps: Vec<f64>, kappa: f64) -> Self {
        serde_json::from_value(serde_json::json!({ "n": n, "eps": eps, "kappa": kappa }))
            .expect("defaults are valid")
    }

    pub fn extents(&self) -> Vec<f64> {
        if self.box_extents.is_empty() {
            vec![1.0; self.n]
        } else {
            self.box_extents.clone()
        }
    }

    pub fn d_of(&self, eps: f64) -> Result<f64> {
        Ok(DRule::parse(&self.d_rule, self.c)?.eval(eps))
    }

    /// Grid width for `eps`: the given `h`, or the largest width not above
    /// `d / h_factor` that divides the first box extent.
    pub fn h_of(&self, eps: f64) -> Result<f64> {
        if let Some(h) = self.h {
            return Ok(h);
        }
        let target = self.d_of(eps)? / self.h_factor;
        let ext = self.extents()[0];
        Ok(ext / (ext / target * (1.0 - 1e-12)).ceil())
    }

    pub fn domain(&self, eps: f64) -> Result<DomainSpec> {
        DomainSpec::new(&self.extents(), eps)
    }

    pub fn params(&self, eps: f64) -> Result<MemberParams> {
        let d = self.d_of(eps)?;
        let h = self.h_of(eps)?;
        let cap = capacity_ball_analytic(self.n, d)?;
        let q = match self.q_mode {
            QMode::Effective => cap / eps.powi(self.n as i32),
            QMode::Fixed => self
                .q
                .ok_or_else(|| Error::Config("q_mode = \"fixed\" needs a value for q".into()))?,
        };
        let unknowns = self
            .extents()
            .iter()
            .map(|e| ((e / h).round() as usize).saturating_sub(1))
            .product();
        Ok(MemberParams {
            eps,
            d,
            h,
            cap,
            q,
            unknowns,
        })
    }

    /// Estimated peak memory in MB for one member.
    pub fn estimate_mb(&self, params: &MemberParams) -> f64 {
        params.unknowns as f64 * BYTES_PER_UNKNOWN / (1024.0 * 1024.0)
    }

    /// Checks every invariant that does not depend on available resources.
    pub fn validate(&self) -> Result<()> {
        if !(2..=4).contains(&self.n) {
            return Err(Error::Config(format!(
                "dimension n = {} must be 2, 3 or 4",
                self.n
            )));
        }
        if self.n == 4 {
            match self.beta {
                Some(b) if b > 0.0 && b < 1.0 => {}
                _ => return Err(Error::MissingBeta),
            }
        }
        if self.eps.is_empty() {
            return Err(Error::Config("eps list is empty".into()));
        }
        if self.extents().len() != self.n {
            return Err(Error::Config(format!(
                "box has {} extents for n = {}",
                self.extents().len(),
                self.n
            )));
        }
        if self.bank_sines + self.bank_random + 1 < 20 {
            return Err(Error::Config(
                "the right-hand side bank needs at least 20 vectors".into(),
            ));
        }
        if self.eig_count == 0 || self.eig_count > 10 {
            return Err(Error::Config(format!(
                "eig_count = {} must be in 1..=10",
                self.eig_count
            )));
        }
        if self.times.iter().any(|&t| !(t >= 0.0 && t.is_finite())) {
            return Err(Error::Config("times must be finite and nonnegative".into()));
        }
        if !self.holes && self.h.is_none() {
            return Err(Error::Config(
                "the unperforated case needs an explicit h".into(),
            ));
        }
        DRule::parse(&self.d_rule, self.c)?;
        for &eps in &self.eps {
            if !(eps > 0.0 && eps < 1.0) {
                return Err(Error::Config(format!("eps = {eps} must lie in (0, 1)")));
            }
            let p = self.params(eps)?;
            if self.holes {
                // Raises a layout violation when d + κε > ε/2.
                place_holes(&self.domain(eps)?, &HoleShape::ball(p.d)?, self.kappa)?;
                if !self.heuristic {
                    let rule = check_size_rule(self.n, eps, p.d, self.size_c)?;
                    if rule.ratio > self.size_c * (1.0 + 1e-9) {
                        return Err(Error::Config(format!(
                            "eps = {eps}: d = {} fails the size rule (ratio {} > {}); set heuristic = true to run anyway",
                            p.d, rule.ratio, self.size_c
                        )));
                    }
                    if p.h > p.d / 8.0 * (1.0 + 1e-12) {
                        return Err(Error::Config(format!(
                            "eps = {eps}: h = {} exceeds d/8 = {}",
                            p.h,
                            p.d / 8.0
                        )));
                    }
                }
            } else {
                self.domain(eps)?;
            }
        }
        Ok(())
    }

    /// Whether a member at these parameters is resolution-clean.
    pub fn resolution_clean(&self, p: &MemberParams) -> bool {
        !self.heuristic && (!self.holes || p.h <= p.d / 8.0 * (1.0 + 1e-12))
    }
}
