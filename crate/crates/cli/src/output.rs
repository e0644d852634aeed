//! Artifact writers and readers.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sgrisk::config::RunSummary;
use sgrisk::risk::RiskRow;
use sgrisk::{Error, Result};

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::InvalidInput(format!("csv: {other:?}")),
    }
}

fn provenance_line(hash: &str, seed: u64) -> String {
    format!("# config_hash={hash} seed={seed}\n")
}

/// One loss per line after a provenance comment.
pub fn write_losses(path: &Path, losses: &[f64], hash: &str, seed: u64) -> Result<()> {
    let mut text = provenance_line(hash, seed);
    for v in losses {
        // shortest representation that round-trips
        text.push_str(&format!("{v:?}\n"));
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_losses(path: &Path) -> Result<Vec<f64>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(csv_err)?;
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let field = rec.get(0).unwrap_or("").trim();
        let v: f64 = field
            .parse()
            .map_err(|_| Error::InvalidInput(format!("{}: record {}: not a number: {field:?}", path.display(), line + 1)))?;
        out.push(v);
    }
    Ok(out)
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T], hash: &str, seed: u64) -> Result<()> {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    let body = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    let mut text = provenance_line(hash, seed).into_bytes();
    text.extend_from_slice(&body);
    std::fs::write(path, text)?;
    Ok(())
}

pub fn write_risk(path: &Path, rows: &[RiskRow], hash: &str, seed: u64) -> Result<()> {
    write_rows(path, rows, hash, seed)
}

#[derive(Serialize)]
struct Bin {
    lower: f64,
    upper: f64,
    count: usize,
}

/// Equal-width histogram over the sample range.
pub fn write_histogram(path: &Path, losses: &[f64], bins: usize, hash: &str, seed: u64) -> Result<()> {
    let lo = losses.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = losses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let bins = bins.max(1);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for v in losses {
        let k = (((v - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    let rows: Vec<Bin> = counts
        .into_iter()
        .enumerate()
        .map(|(k, count)| Bin { lower: lo + k as f64 * width, upper: lo + (k + 1) as f64 * width, count })
        .collect();
    write_rows(path, &rows, hash, seed)
}

pub fn write_table<T: Serialize>(path: &Path, rows: &[T], hash: &str, seed: u64) -> Result<()> {
    write_rows(path, rows, hash, seed)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn write_summary(dir: &Path, name: &str, summary: &mut RunSummary) -> Result<PathBuf> {
    let path = dir.join(format!("{name}_summary.json"));
    summary.artifacts.push(path.clone());
    write_json(&path, summary)?;
    Ok(path)
}
