//! Config hashing and the CSV tables the subcommands write.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use qcontrib::io::fmt_real;
use qcontrib::ledger::QueryLedger;
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Content hash of a run configuration: SHA-256 over `blob <len>\0<json>`,
/// where the JSON holds the subcommand, its arguments and the portfolio
/// document itself.
pub fn config_hash<A: Serialize>(command: &str, args: &A, portfolio: &str) -> Result<String> {
    #[derive(Serialize)]
    struct Canonical<'a, A> {
        command: &'a str,
        args: &'a A,
        portfolio: &'a str,
    }
    let json = serde_json::to_string(&Canonical { command, args, portfolio })?;
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", json.len()).as_bytes());
    h.update(json.as_bytes());
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

/// Writes a file through `body`, flushing before returning.
pub fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut w = create(path)?;
    body(&mut w)?;
    w.flush().with_context(|| format!("cannot write {}", path.display()))
}

pub fn ledger_header() -> String {
    QueryLedger::new().entries().iter().map(|(name, _)| *name).collect::<Vec<_>>().join(",")
}

pub fn ledger_columns(ledger: &QueryLedger) -> String {
    ledger.entries().iter().map(|(_, v)| v.to_string()).collect::<Vec<_>>().join(",")
}

/// A table of per-group real columns, followed by the ledger totals on every
/// row.
pub fn write_group_table<W: Write>(
    out: &mut W,
    columns: &[(&str, &[f64])],
    text: Option<(&str, &str)>,
    ledger: &QueryLedger,
) -> Result<()> {
    let mut header = vec!["group".to_string()];
    header.extend(columns.iter().map(|(name, _)| name.to_string()));
    if let Some((name, _)) = text {
        header.push(name.to_string());
    }
    header.push(ledger_header());
    writeln!(out, "{}", header.join(","))?;
    let rows = columns.first().map_or(0, |(_, c)| c.len());
    let ledger = ledger_columns(ledger);
    for k in 0..rows {
        let mut row = vec![k.to_string()];
        row.extend(columns.iter().map(|(_, c)| fmt_real(c[k])));
        if let Some((_, value)) = text {
            row.push(value.to_string());
        }
        row.push(ledger.clone());
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}
