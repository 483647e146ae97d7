//! File formats: datasets and samples as CSV, distributions as JSON, score
//! tables as CSV and pricing bounds as JSON.
//!
//! Floats are written with Rust's shortest round-trip formatting, so every
//! file reads back to the exact same values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::Deserialize;

use crate::distributions::{AtomicDistribution, HeteroDataset, NoisySample};
use crate::error::{Error, Result};
use crate::pricing::{PricingBound, PricingBoundRecord, PricingRow, PricingTable};

/// Reads a dataset with header `sigma,x0,...,x{d-1}`.
pub fn read_dataset<R: Read>(reader: R) -> Result<HeteroDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.get(0) != Some("sigma") || headers.len() < 2 {
        return Err(Error::Parse(
            "dataset header must start with sigma followed by x0..".into(),
        ));
    }
    for (i, h) in headers.iter().skip(1).enumerate() {
        if h != format!("x{i}") {
            return Err(Error::Parse(format!(
                "unexpected dataset column {h:?}, expected x{i}"
            )));
        }
    }
    let dim = headers.len() - 1;
    let mut samples = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let nums = rec
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::Parse(format!("row {}: {e}", line + 1)))?;
        samples.push(NoisySample {
            sigma: nums[0],
            value: nums[1..].to_vec(),
        });
    }
    HeteroDataset::new(dim, samples)
}

pub fn write_dataset<W: Write>(writer: W, data: &HeteroDataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["sigma".to_string()];
    header.extend((0..data.dim()).map(|i| format!("x{i}")));
    w.write_record(&header)?;
    for s in data.samples() {
        let mut rec = vec![s.sigma.to_string()];
        rec.extend(s.value.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Sampler output: header `x0,...,x{d-1}`, no noise column.
pub fn write_samples<W: Write>(writer: W, samples: &[Vec<f64>]) -> Result<()> {
    let dim = samples.first().map_or(0, Vec::len);
    let mut w = csv::Writer::from_writer(writer);
    w.write_record((0..dim).map(|i| format!("x{i}")))?;
    for s in samples {
        w.write_record(s.iter().map(f64::to_string))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_samples<R: Read>(reader: R) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        out.push(
            rec.iter()
                .map(|f| {
                    f.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Parse(e.to_string()))
                })
                .collect::<Result<Vec<f64>>>()?,
        );
    }
    Ok(out)
}

/// Loss trace with header `iter,loss`.
pub fn write_loss_trace<W: Write>(writer: W, trace: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["iter", "loss"])?;
    for (i, l) in trace.iter().enumerate() {
        w.write_record([i.to_string(), l.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_distribution<R: Read>(reader: R) -> Result<AtomicDistribution> {
    Ok(serde_json::from_reader(reader)?)
}

pub fn distribution_to_json(dist: &AtomicDistribution) -> Result<String> {
    Ok(serde_json::to_string_pretty(dist)?)
}

#[derive(Deserialize)]
struct TableRecord {
    dataset: String,
    p_clean: f64,
    sigma: Option<f64>,
    score: f64,
}

/// Reads a score table with header `dataset,p_clean,sigma,score`; an empty
/// sigma marks a clean-only row.
pub fn read_pricing_table<R: Read>(reader: R) -> Result<PricingTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let expected = ["dataset", "p_clean", "sigma", "score"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Parse(format!(
            "table header must be {}",
            expected.join(",")
        )));
    }
    let mut rows = Vec::new();
    for rec in rdr.deserialize() {
        let r: TableRecord = rec?;
        rows.push(PricingRow {
            dataset: r.dataset,
            p_clean: r.p_clean,
            sigma: r.sigma,
            score: r.score,
        });
    }
    PricingTable::new(rows)
}

pub fn write_pricing_table<W: Write>(writer: W, table: &PricingTable) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["dataset", "p_clean", "sigma", "score"])?;
    for r in &table.rows {
        w.write_record([
            r.dataset.clone(),
            r.p_clean.to_string(),
            r.sigma.map(|s| s.to_string()).unwrap_or_default(),
            r.score.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Bounds as a JSON array; an unbounded upper end is `null`.
pub fn bounds_to_json(bounds: &[PricingBound]) -> Result<String> {
    let records: Vec<PricingBoundRecord> = bounds.iter().map(PricingBoundRecord::from).collect();
    Ok(serde_json::to_string_pretty(&records)?)
}

pub fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}
