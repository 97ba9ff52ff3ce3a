//! Files written under `--out`.
//!
//! Floats go through Rust's shortest round-trip formatting, so re-reading any
//! CSV reproduces the in-memory values exactly.

use crate::{CliError, Result, VERSION};
use bsqr::bandwidth::CvResult;
use bsqr::samplers::ChainResult;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Reproducibility header of every `summary.json`.
#[derive(Debug, Serialize)]
pub struct Manifest<'a, T: Serialize> {
    pub version: &'a str,
    pub command: &'a str,
    pub seed: u64,
    pub config: serde_json::Value,
    pub result: T,
}

pub fn write_summary<T: Serialize>(dir: &Path, command: &str, seed: u64, config: serde_json::Value, result: T) -> Result<PathBuf> {
    let path = dir.join("summary.json");
    let manifest = Manifest { version: VERSION, command, seed, config, result };
    let file = std::fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), &manifest)?;
    Ok(path)
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    Ok(csv::Writer::from_writer(std::fs::File::create(path).map_err(|e| CliError::io(path, e))?))
}

/// One header row from the struct fields, one row per record.
pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = writer(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    Ok(rdr.deserialize().collect::<std::result::Result<Vec<T>, _>>()?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub multiplier: f64,
    pub h: f64,
    pub loss: f64,
    pub selected: bool,
}

pub fn cv_rows(cv: &CvResult) -> Vec<CvRow> {
    cv.candidates
        .iter()
        .zip(&cv.multipliers)
        .zip(&cv.losses)
        .map(|((&h, &multiplier), &loss)| CvRow { multiplier, h, loss, selected: h == cv.h_star })
        .collect()
}

/// Retained draws, one row per (chain, iteration).
#[derive(Debug, Clone, PartialEq)]
pub struct DrawTable {
    /// Parameter column names, `beta[0]..` then `theta`.
    pub names: Vec<String>,
    pub chain: Vec<usize>,
    pub iter: Vec<usize>,
    pub values: Vec<Vec<f64>>,
    pub divergent: Vec<bool>,
}

impl DrawTable {
    pub fn from_chains(chains: &[ChainResult]) -> Self {
        let d = chains.first().map_or(0, |c| c.beta_draws.ncols());
        let mut names: Vec<String> = (0..d).map(|j| format!("beta[{j}]")).collect();
        names.push("theta".into());
        let mut t = DrawTable { names, chain: vec![], iter: vec![], values: vec![], divergent: vec![] };
        for c in chains {
            for i in 0..c.n_draws() {
                t.chain.push(c.chain);
                t.iter.push(i);
                let mut row: Vec<f64> = c.beta_draws.row(i).iter().copied().collect();
                row.push(c.theta_draws[i]);
                t.values.push(row);
                t.divergent.push(c.divergent.get(i).copied().unwrap_or(false));
            }
        }
        t
    }

    /// Column `j` split by chain, chains in ascending order.
    pub fn per_chain(&self, j: usize) -> Vec<Vec<f64>> {
        let mut ids: Vec<usize> = self.chain.clone();
        ids.sort_unstable();
        ids.dedup();
        ids.iter()
            .map(|&c| {
                self.chain.iter().zip(&self.values).filter(|(&k, _)| k == c).map(|(_, row)| row[j]).collect()
            })
            .collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = writer(path)?;
        let mut header = vec!["chain".to_string(), "iter".to_string()];
        header.extend(self.names.iter().cloned());
        header.push("divergent".into());
        w.write_record(&header)?;
        for k in 0..self.values.len() {
            let mut rec = vec![self.chain[k].to_string(), self.iter[k].to_string()];
            rec.extend(self.values[k].iter().map(|v| v.to_string()));
            rec.push((self.divergent[k] as u8).to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| CliError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
        let mut rdr = csv::Reader::from_reader(file);
        let header = rdr.headers()?.clone();
        let cols: Vec<&str> = header.iter().collect();
        if cols.len() < 3 || cols[0] != "chain" || cols[1] != "iter" {
            return Err(CliError::Usage(format!("{}: not a draws file (expected 'chain,iter,...')", path.display())));
        }
        let has_div = cols.last() == Some(&"divergent");
        let end = if has_div { cols.len() - 1 } else { cols.len() };
        let names: Vec<String> = cols[2..end].iter().map(|s| s.to_string()).collect();
        let mut t = DrawTable { names, chain: vec![], iter: vec![], values: vec![], divergent: vec![] };
        for (k, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let bad = |what: &str| CliError::Usage(format!("{}: row {}: bad {what}", path.display(), k + 2));
            t.chain.push(rec[0].parse().map_err(|_| bad("chain"))?);
            t.iter.push(rec[1].parse().map_err(|_| bad("iter"))?);
            let row = (2..end).map(|j| rec[j].parse::<f64>().map_err(|_| bad(&cols[j]))).collect::<Result<Vec<_>>>()?;
            t.values.push(row);
            t.divergent.push(has_div && &rec[end] == "1");
        }
        if t.values.is_empty() {
            return Err(CliError::Usage(format!("{}: no draws", path.display())));
        }
        Ok(t)
    }
}
