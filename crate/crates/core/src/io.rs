//! CSV and JSON formats for datasets, augmented datasets, bands and coverage tables.
//!
//! Dataset files have the header `id,time,status,cens_time,z1,...,zp`, with an
//! empty `cens_time` when unknown. Row numbers in errors count data rows from 1.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::data::{Completeness, Dataset, Record};
use crate::error::{Error, Result};
use crate::resampling::{BandMethod, BandResult};
use crate::simulation::CoverageRow;

const FIXED_COLUMNS: [&str; 4] = ["id", "time", "status", "cens_time"];

fn parse_f64(field: &str, row: usize, column: &str) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::Parse { row, message: format!("column `{column}`: cannot parse `{field}` as a number") })
}

/// Reads a dataset. With `completeness = None` the file counts as
/// censoring-complete when every event row carries a censoring time.
pub fn read_dataset(reader: impl Read, completeness: Option<Completeness>, horizon: Option<f64>) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if header.len() < FIXED_COLUMNS.len() || header[..4] != FIXED_COLUMNS {
        return Err(Error::Parse {
            row: 0,
            message: format!("header must start with `id,time,status,cens_time`, found `{}`", header.join(",")),
        });
    }
    let covariate_names = &header[4..];
    let mut records = Vec::new();
    for (idx, line) in rdr.records().enumerate() {
        let row = idx + 1;
        let line = line.map_err(|e| Error::Parse { row, message: e.to_string() })?;
        if line.len() != header.len() {
            return Err(Error::Parse { row, message: format!("expected {} fields, found {}", header.len(), line.len()) });
        }
        let time = parse_f64(&line[1], row, "time")?;
        let status = line[2]
            .parse::<u32>()
            .map_err(|_| Error::Parse { row, message: format!("column `status`: `{}` is not a cause code", &line[2]) })?;
        let cens_time = match &line[3] {
            "" | "NA" => None,
            s => Some(parse_f64(s, row, "cens_time")?),
        };
        let covariates = covariate_names
            .iter()
            .enumerate()
            .map(|(j, name)| parse_f64(&line[4 + j], row, name))
            .collect::<Result<Vec<_>>>()?;
        records.push(Record::new(&line[0], time, status, covariates, cens_time));
    }
    let completeness = completeness.unwrap_or_else(|| {
        if records.iter().all(|r| !r.is_event() || r.cens_time.is_some()) {
            Completeness::CensoringComplete
        } else {
            Completeness::Incomplete
        }
    });
    Dataset::new(records, completeness, horizon)
}

pub fn read_dataset_path(
    path: impl AsRef<std::path::Path>,
    completeness: Option<Completeness>,
    horizon: Option<f64>,
) -> Result<Dataset> {
    read_dataset(std::fs::File::open(path)?, completeness, horizon)
}

fn header(p: usize, leading: &[&str]) -> Vec<String> {
    leading
        .iter()
        .chain(FIXED_COLUMNS.iter())
        .map(|s| s.to_string())
        .chain((1..=p).map(|j| format!("z{j}")))
        .collect()
}

fn record_fields(r: &Record) -> impl Iterator<Item = String> + '_ {
    [r.id.clone(), r.time.to_string(), r.status.to_string(), r.cens_time.map_or_else(String::new, |c| c.to_string())]
        .into_iter()
        .chain(r.covariates.iter().map(f64::to_string))
}

pub fn write_dataset(writer: impl Write, dataset: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(header(dataset.dim(), &[]))?;
    for r in dataset.records() {
        w.write_record(record_fields(r))?;
    }
    w.flush()?;
    Ok(())
}

/// All augmented datasets in one file, tagged by a leading 1-based `m` column.
pub fn write_augmented_long(writer: impl Write, datasets: &[Dataset]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(header(datasets.first().map_or(0, Dataset::dim), &["m"]))?;
    for (k, d) in datasets.iter().enumerate() {
        let m = (k + 1).to_string();
        for r in d.records() {
            w.write_record(std::iter::once(m.clone()).chain(record_fields(r)))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `t,center,lower,upper,lower_clipped,upper_clipped`, one row per grid point.
pub fn write_band_csv(writer: impl Write, band: &BandResult) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["t", "center", "lower", "upper", "lower_clipped", "upper_clipped"])?;
    for k in 0..band.grid.len() {
        w.write_record(
            [band.grid[k], band.center[k], band.lower[k], band.upper[k], band.lower_clipped[k], band.upper_clipped[k]]
                .map(|v| v.to_string()),
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Scalar summary written next to a band CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandSidecar {
    pub method: BandMethod,
    pub alpha: f64,
    pub q: f64,
    pub n: usize,
    pub t1: f64,
    pub t2: f64,
    #[serde(rename = "B")]
    pub boot: usize,
    #[serde(rename = "M")]
    pub m: Option<usize>,
    #[serde(rename = "I")]
    pub i: Option<usize>,
    pub seed: u64,
    pub failures: usize,
}

impl From<&BandResult> for BandSidecar {
    fn from(b: &BandResult) -> Self {
        Self {
            method: b.method,
            alpha: b.alpha,
            q: b.q,
            n: b.n,
            t1: b.interval.t1,
            t2: b.interval.t2,
            boot: b.boot,
            m: b.m,
            i: b.i,
            seed: b.seed,
            failures: b.failures,
        }
    }
}

pub fn write_coverage_csv(writer: impl Write, rows: &[CoverageRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(writer: impl Write, value: &T) -> Result<()> {
    let mut w = writer;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    Ok(())
}
