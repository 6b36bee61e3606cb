//! Config files for every subcommand. TOML unless the extension is `.json`.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// Parses a config file; the format follows the extension.
pub fn parse_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let is_json = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    } else {
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

/// Reads `path` if given, otherwise starts from the defaults.
pub fn load_or_default<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    path.map_or_else(|| Ok(T::default()), parse_config)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeName {
    Ball,
    Box,
}

/// Capacity of a single hole.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CapacityRequest {
    pub n: usize,
    pub shape: ShapeName,
    /// Radius of the enclosing ball.
    pub d: f64,
    /// Half widths of a box hole; all equal to `d / √n` when absent.
    pub half_widths: Option<Vec<f64>>,
    /// Outer radius; defaults to `max(10d, 0.5)` (n ≥ 3) or 1 (n = 2).
    #[serde(rename = "R")]
    pub radius: Option<f64>,
    /// Grid width; defaults to `d / 16`.
    pub h: Option<f64>,
    pub rel_tol: f64,
    pub flux_tol: f64,
}

impl Default for CapacityRequest {
    fn default() -> Self {
        Self {
            n: 3,
            shape: ShapeName::Ball,
            d: 0.1,
            half_widths: None,
            radius: None,
            h: None,
            rel_tol: 0.02,
            flux_tol: 0.05,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum InstanceKind {
    Random,
    Pde,
}

/// Closeness checks on random or PDE instances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClosenessRequest {
    pub instance: InstanceKind,
    pub seed: u64,
    pub count: usize,
    /// Largest dimension of random instances.
    pub dims: usize,
    /// Order of the reverse condition; random instances draw it when absent.
    pub k: Option<u8>,
    /// Hole layout JSON for PDE instances.
    pub layout_file: Option<String>,
    /// Unit-box layout for PDE instances when no layout file is given.
    pub n: usize,
    pub eps: Option<f64>,
    pub d: Option<f64>,
    pub kappa: f64,
    /// Grid width for PDE instances.
    pub h: Option<f64>,
    /// Potential of the homogenized operator; the effective value when absent.
    pub q: Option<f64>,
    pub min_resolution: f64,
    pub dense_limit: usize,
    pub slack: f64,
}

impl Default for ClosenessRequest {
    fn default() -> Self {
        Self {
            instance: InstanceKind::Random,
            seed: 0,
            count: 1,
            dims: 12,
            k: None,
            layout_file: None,
            n: 3,
            eps: None,
            d: None,
            kappa: 0.25,
            h: None,
            q: None,
            min_resolution: 4.0,
            dense_limit: 2000,
            slack: 1e-9,
        }
    }
}

impl ClosenessRequest {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 || self.dims == 0 {
            bail!("count and dims must be positive");
        }
        if let Some(k) = self.k {
            if !(1..=2).contains(&k) {
                bail!("k must be 1 or 2, got {k}");
            }
        }
        if self.instance == InstanceKind::Pde {
            let placed = self.eps.is_some() && self.d.is_some();
            if self.h.is_none() || (self.layout_file.is_none() && !placed) {
                bail!("pde instances need h and either layout_file or eps and d");
            }
        }
        Ok(())
    }
}
