//! Delimited-file ingestion.
//!
//! Header layout: `id,left,right,xi,eta,zeta` followed by any number of
//! `z:<name>`, `xstar:<name>` and `x:<name>` columns. `right` accepts `inf`
//! for right-censored subjects. `x:` cells must be empty exactly when `xi = 0`.
//! Row numbers in errors are 1-based data rows (the header is row 0).

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::{CohortDataset, CovariateNames, IntervalObservation, SamplingDesign};
use crate::error::{Error, Result};

const REQUIRED: [&str; 6] = ["id", "left", "right", "xi", "eta", "zeta"];

#[derive(Debug, Clone, Copy, PartialEq)]
enum Block {
    Z,
    Xstar,
    X,
}

struct Layout {
    fixed: [usize; 6],
    covariates: Vec<(Block, usize, String)>,
    names: CovariateNames,
}

fn parse_header(header: &csv::StringRecord) -> Result<Layout> {
    let schema = |message: String| Error::Schema { row: 0, message };
    let mut fixed = [usize::MAX; 6];
    let mut covariates = Vec::new();
    let mut names = CovariateNames::default();
    for (col, raw) in header.iter().enumerate() {
        let name = raw.trim();
        if let Some(k) = REQUIRED.iter().position(|r| *r == name) {
            if fixed[k] != usize::MAX {
                return Err(schema(format!("duplicate column '{name}'")));
            }
            fixed[k] = col;
            continue;
        }
        let (block, label) = match name.split_once(':') {
            Some(("z", label)) => (Block::Z, label),
            Some(("xstar", label)) => (Block::Xstar, label),
            Some(("x", label)) => (Block::X, label),
            _ => return Err(schema(format!("unrecognised column '{name}'"))),
        };
        if label.is_empty() {
            return Err(schema(format!("column '{name}' has an empty covariate name")));
        }
        match block {
            Block::Z => names.z.push(label.to_string()),
            Block::Xstar => names.xstar.push(label.to_string()),
            Block::X => names.x.push(label.to_string()),
        }
        covariates.push((block, col, name.to_string()));
    }
    if let Some(k) = fixed.iter().position(|c| *c == usize::MAX) {
        return Err(schema(format!("missing required column '{}'", REQUIRED[k])));
    }
    Ok(Layout { fixed, covariates, names })
}

fn parse_time(cell: &str, row: usize, column: &str) -> Result<f64> {
    let cell = cell.trim();
    if cell.eq_ignore_ascii_case("inf") {
        return Ok(f64::INFINITY);
    }
    cell.parse::<f64>().map_err(|_| Error::Schema {
        row,
        message: format!("column '{column}': cannot parse '{cell}' as a number"),
    })
}

fn parse_indicator(cell: &str, row: usize, column: &str) -> Result<bool> {
    match cell.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(Error::Schema {
            row,
            message: format!("column '{column}': expected 0 or 1, got '{other}'"),
        }),
    }
}

/// Reads a dataset from any reader.
pub fn read_dataset<R: Read>(reader: R, design: SamplingDesign) -> Result<CohortDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let layout = parse_header(rdr.headers()?)?;
    let [c_id, c_left, c_right, c_xi, c_eta, c_zeta] = layout.fixed;

    let mut subjects = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let row = idx + 1;
        let record = record?;
        let cell = |col: usize| record.get(col).unwrap_or("");
        let left = parse_time(cell(c_left), row, "left")?;
        let right = parse_time(cell(c_right), row, "right")?;
        if !(left.is_finite() && left >= 0.0) {
            return Err(Error::Schema { row, message: format!("left = {left} must be finite and >= 0") });
        }
        if right <= left {
            return Err(Error::Schema {
                row,
                message: format!("right = {right} must exceed left = {left}"),
            });
        }
        let xi = parse_indicator(cell(c_xi), row, "xi")?;
        let eta = parse_indicator(cell(c_eta), row, "eta")?;
        let zeta = parse_indicator(cell(c_zeta), row, "zeta")?;
        if xi != (eta || zeta) {
            return Err(Error::Schema { row, message: "xi must equal max(eta, zeta)".into() });
        }

        let (mut z, mut xstar, mut x) = (Vec::new(), Vec::new(), Vec::new());
        let mut x_empty = 0usize;
        for (block, col, header) in &layout.covariates {
            let (block, col) = (*block, *col);
            let text = cell(col).trim();
            if block == Block::X && text.is_empty() {
                x_empty += 1;
                continue;
            }
            let value = text.parse::<f64>().map_err(|_| Error::Schema {
                row,
                message: format!("column '{header}': cannot parse '{text}' as a number"),
            })?;
            match block {
                Block::Z => z.push(value),
                Block::Xstar => xstar.push(value),
                Block::X => x.push(value),
            }
        }
        let p_x = layout.names.x.len();
        let x = match (xi, x_empty) {
            (true, 0) => Some(x),
            (true, _) => {
                return Err(Error::Schema { row, message: "xi = 1 but expensive covariates are empty".into() })
            }
            (false, k) if k == p_x => None,
            (false, _) => {
                return Err(Error::Schema { row, message: "expensive covariates present with xi = 0".into() })
            }
        };
        let obs = IntervalObservation::new(cell(c_id).trim(), left, right, z, xstar, x, eta, zeta)
            .map_err(|e| Error::Schema { row, message: e.to_string() })?;
        subjects.push(obs);
    }
    CohortDataset::new(subjects, design, layout.names)
}

/// Reads a dataset from a CSV file.
pub fn load_dataset(path: impl AsRef<Path>, design: SamplingDesign) -> Result<CohortDataset> {
    read_dataset(File::open(path)?, design)
}

/// Writes a dataset in the same layout `read_dataset` accepts.
pub fn write_dataset<W: Write>(data: &CohortDataset, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let names = data.covariate_names();
    let mut header: Vec<String> = REQUIRED.iter().map(|s| s.to_string()).collect();
    header.extend(names.z.iter().map(|n| format!("z:{n}")));
    header.extend(names.xstar.iter().map(|n| format!("xstar:{n}")));
    header.extend(names.x.iter().map(|n| format!("x:{n}")));
    wtr.write_record(&header)?;
    let flag = |b: bool| if b { "1".to_string() } else { "0".to_string() };
    for s in data.subjects() {
        let mut rec = vec![
            s.id().to_string(),
            s.left().to_string(),
            if s.right().is_finite() { s.right().to_string() } else { "inf".into() },
            flag(s.sampled()),
            flag(s.subcohort()),
            flag(s.selected_case()),
        ];
        rec.extend(s.z().iter().map(f64::to_string));
        rec.extend(s.xstar().iter().map(f64::to_string));
        match s.x() {
            Some(x) => rec.extend(x.iter().map(f64::to_string)),
            None => rec.extend(std::iter::repeat_n(String::new(), names.x.len())),
        }
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}
