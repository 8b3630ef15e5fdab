//! Portfolio ingestion and plain-text report writers.
//!
//! Portfolios are TOML or JSON documents:
//!
//! ```toml
//! groups = [1, 2]          # optional; one group per obligor by default
//!
//! [[obligors]]
//! exposure = 3.0
//! loading = 0.5
//! pd = 0.1                 # or `threshold = -1.2816`
//! ```
//!
//! Reports are `key=value` lines with values printed to 12 significant
//! decimals, and CSV tables with a header row.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::RiskReport;
use crate::ledger::QueryLedger;
use crate::model::{GroupPartition, Obligor, Portfolio};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObligorEntry {
    pub exposure: f64,
    pub loading: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pd: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortfolioFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub groups: Option<Vec<usize>>,
    pub obligors: Vec<ObligorEntry>,
}

impl PortfolioFile {
    pub fn build(&self) -> Result<Portfolio> {
        let obligors = self
            .obligors
            .iter()
            .enumerate()
            .map(|(j, o)| match (o.pd, o.threshold) {
                (Some(pd), None) => Obligor::from_pd(o.exposure, o.loading, pd),
                (None, Some(z)) => Obligor::new(o.exposure, o.loading, z),
                _ => Err(Error::Parse(format!("obligor {j}: give exactly one of `pd` and `threshold`"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let partition = match &self.groups {
            Some(sizes) => GroupPartition::new(sizes.clone())?,
            None => GroupPartition::singletons(obligors.len())?,
        };
        Portfolio::new(obligors, partition)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DocFormat {
    Toml,
    Json,
}

impl DocFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => Ok(Self::Toml),
            Some("json") => Ok(Self::Json),
            _ => Err(Error::Parse(format!("{}: expected a .toml or .json file", path.display()))),
        }
    }
}

pub fn parse_portfolio(content: &str, format: DocFormat) -> Result<Portfolio> {
    let file: PortfolioFile = match format {
        DocFormat::Toml => toml::from_str(content).map_err(|e| Error::Parse(e.to_string()))?,
        DocFormat::Json => serde_json::from_str(content).map_err(|e| Error::Parse(e.to_string()))?,
    };
    file.build()
}

/// Reads and parses a portfolio, returning it with the raw file content.
pub fn load_portfolio(path: &Path) -> Result<(Portfolio, String)> {
    let format = DocFormat::from_path(path)?;
    let content = std::fs::read_to_string(path)?;
    Ok((parse_portfolio(&content, format)?, content))
}

/// Fixed-precision rendering used by every report: 12 digits after the
/// decimal point in scientific notation.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.12e}")
}

pub fn write_kv<W: Write>(out: &mut W, key: &str, value: impl std::fmt::Display) -> Result<()> {
    writeln!(out, "{key}={value}")?;
    Ok(())
}

pub fn write_reals<W: Write>(out: &mut W, key: &str, values: &[f64]) -> Result<()> {
    for (k, &x) in values.iter().enumerate() {
        write_kv(out, &format!("{key}.{k}"), fmt_real(x))?;
    }
    Ok(())
}

pub fn write_ledger<W: Write>(out: &mut W, prefix: &str, ledger: &QueryLedger) -> Result<()> {
    for (name, value) in ledger.entries() {
        write_kv(out, &format!("{prefix}.{name}"), value)?;
    }
    Ok(())
}

pub fn write_risk_report<W: Write>(report: &RiskReport, out: &mut W) -> Result<()> {
    if let (Some(alpha), Some(var)) = (report.var_level, report.var) {
        write_kv(out, "var_level", fmt_real(alpha))?;
        write_kv(out, "var", fmt_real(var))?;
    }
    write_kv(out, "cvar_threshold", fmt_real(report.cvar_threshold))?;
    write_kv(out, "tail_prob", fmt_real(report.tail_prob))?;
    write_kv(out, "cvar", fmt_real(report.cvar))?;
    write_reals(out, "cvar_contrib", &report.cvar_contribs)?;
    if let Some(v) = &report.var_contribs {
        write_reals(out, "var_contrib", v)?;
    }
    write_reals(out, "group_exposure", &report.group_exposures)?;
    write_reals(out, "tail_sigma", &report.tail_sigmas)?;
    Ok(())
}

pub fn write_risk_csv<W: Write>(report: &RiskReport, out: &mut W) -> Result<()> {
    writeln!(out, "group,exposure,cvar_contrib,var_contrib,tail_sigma")?;
    for k in 0..report.cvar_contribs.len() {
        let var = report.var_contribs.as_ref().map(|v| fmt_real(v[k])).unwrap_or_default();
        writeln!(
            out,
            "{k},{},{},{var},{}",
            fmt_real(report.group_exposures[k]),
            fmt_real(report.cvar_contribs[k]),
            fmt_real(report.tail_sigmas[k])
        )?;
    }
    Ok(())
}

/// Parses `key=value` lines back into pairs, skipping blank lines and `#`
/// comments.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            l.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| Error::Parse(format!("expected key=value, got `{l}`")))
        })
        .collect()
}
