//! CSV input and output.
//!
//! Files need a header row. An optional `unit_id` column names the units;
//! without it, row order is the unit identity. Empty cells and `NA` are
//! missing values.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::balance::Assignment;
use crate::error::{Error, Result};
use crate::frame::ExperimentFrame;
use crate::missing::MaskedMatrix;

pub const UNIT_ID: &str = "unit_id";

/// A numeric table with optional unit identifiers.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub unit_ids: Option<Vec<String>>,
    pub names: Vec<String>,
    /// Column-major values; `None` marks a missing cell.
    pub columns: Vec<Vec<Option<f64>>>,
}

fn parse_cell(raw: &str, row: usize, col: &str) -> Result<Option<f64>> {
    let t = raw.trim();
    if t.is_empty() || t.eq_ignore_ascii_case("na") {
        return Ok(None);
    }
    let v: f64 = t.parse().map_err(|_| Error::arg(format!("row {row}, column {col}: {t:?} is not a number")))?;
    if !v.is_finite() {
        return Err(Error::arg(format!("row {row}, column {col}: value must be finite")));
    }
    Ok(Some(v))
}

impl Table {
    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header.is_empty() || header.iter().all(|h| h.is_empty()) {
            return Err(Error::arg("CSV needs a header row"));
        }
        let id_col = header.iter().position(|h| h == UNIT_ID);
        let names: Vec<String> = header.iter().enumerate().filter(|(j, _)| Some(*j) != id_col).map(|(_, h)| h.clone()).collect();
        let mut dup = names.clone();
        dup.sort();
        if dup.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::arg("duplicate column names"));
        }
        let mut columns = vec![Vec::new(); names.len()];
        let mut ids = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let mut k = 0;
            for (j, cell) in rec.iter().enumerate() {
                if Some(j) == id_col {
                    ids.push(cell.to_string());
                } else {
                    columns[k].push(parse_cell(cell, i + 1, &names[k])?);
                    k += 1;
                }
            }
        }
        if id_col.is_some() {
            let mut sorted = ids.clone();
            sorted.sort();
            if sorted.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::arg("duplicate unit_id values"));
            }
        }
        Ok(Self { unit_ids: id_col.map(|_| ids), names, columns })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::arg(format!("cannot open {}: {e}", path.display())))?;
        Self::from_reader(f)
    }

    pub fn nrows(&self) -> usize {
        self.unit_ids.as_ref().map_or_else(|| self.columns.first().map_or(0, Vec::len), Vec::len)
    }

    pub fn column(&self, name: &str) -> Result<&[Option<f64>]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|j| self.columns[j].as_slice())
            .ok_or_else(|| Error::arg(format!("no column named {name:?}")))
    }

    /// The named column, or the only column if `name` is `None`.
    pub fn pick(&self, name: Option<&str>) -> Result<&[Option<f64>]> {
        match name {
            Some(n) => self.column(n),
            None if self.columns.len() == 1 => Ok(&self.columns[0]),
            None => Err(Error::arg(format!("table has {} columns; name the one to use", self.columns.len()))),
        }
    }

    /// Reorders rows so that unit ids follow `order`. Tables without ids are
    /// taken as already aligned.
    pub fn align_to(&self, order: Option<&[String]>) -> Result<Self> {
        let (Some(order), Some(ids)) = (order, self.unit_ids.as_ref()) else {
            return Ok(self.clone());
        };
        if order.len() != ids.len() {
            return Err(Error::arg(format!("{} units here, {} in the covariate file", ids.len(), order.len())));
        }
        let pos: std::collections::HashMap<&str, usize> = ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let perm: Vec<usize> = order
            .iter()
            .map(|id| pos.get(id.as_str()).copied().ok_or_else(|| Error::arg(format!("unit_id {id:?} is missing"))))
            .collect::<Result<_>>()?;
        Ok(Self {
            unit_ids: Some(order.to_vec()),
            names: self.names.clone(),
            columns: self.columns.iter().map(|c| perm.iter().map(|&i| c[i]).collect()).collect(),
        })
    }

    pub fn into_masked(self) -> Result<MaskedMatrix> {
        MaskedMatrix::from_columns(self.columns, self.names)
    }

    /// All cells observed; otherwise an error naming the first gap.
    pub fn complete_matrix(&self) -> Result<DMatrix<f64>> {
        for (j, c) in self.columns.iter().enumerate() {
            if let Some(i) = c.iter().position(Option::is_none) {
                return Err(Error::arg(format!("missing value in column {:?}, row {}", self.names[j], i + 1)));
            }
        }
        Ok(DMatrix::from_fn(self.nrows(), self.columns.len(), |i, j| self.columns[j][i].unwrap_or_default()))
    }

    /// Frame using every column for design and adjustment.
    pub fn to_frame(&self) -> Result<ExperimentFrame> {
        let k = self.columns.len();
        ExperimentFrame::new(self.complete_matrix()?, self.names.clone(), (0..k).collect(), (0..k).collect())
    }
}

/// Treatment indicators from a 0/1 column.
pub fn assignment_from_column(col: &[Option<f64>]) -> Result<Assignment> {
    let z = col
        .iter()
        .enumerate()
        .map(|(i, v)| match v {
            Some(v) if *v == 1.0 => Ok(true),
            Some(v) if *v == 0.0 => Ok(false),
            _ => Err(Error::arg(format!("assignment row {} must be 0 or 1", i + 1))),
        })
        .collect::<Result<Vec<_>>>()?;
    Assignment::new(z)
}

/// `unit_id,z` (or just `z`) CSV for an assignment.
pub fn write_assignment<W: Write>(z: &Assignment, unit_ids: Option<&[String]>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    match unit_ids {
        Some(ids) => {
            w.write_record([UNIT_ID, "z"])?;
            for (id, t) in ids.iter().zip(z.z()) {
                w.write_record([id.as_str(), if *t { "1" } else { "0" }])?;
            }
        }
        None => {
            w.write_record(["z"])?;
            for t in z.z() {
                w.write_record([if *t { "1" } else { "0" }])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
