//! Subject covariate tables stored as CSV with a leading id column.

use std::collections::HashSet;
use std::path::Path;

use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CovariateError {
    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("covariate file has no header or no covariate columns")]
    Empty,
    #[error("missing value at row {row}, column {column:?}")]
    MissingValue { row: usize, column: String },
    #[error("non-numeric value {value:?} at row {row}, column {column:?}")]
    NonNumeric { row: usize, column: String, value: String },
    #[error("duplicate subject id {id:?} at row {row}")]
    DuplicateId { row: usize, id: String },
    #[error("row {row} has {got} fields, expected {expected}")]
    Ragged { row: usize, expected: usize, got: usize },
    #[error("unknown covariate column {0:?}")]
    UnknownColumn(String),
}

/// Named numeric covariates; row order is subject order.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateTable {
    id_name: String,
    ids: Vec<String>,
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
}

impl CovariateTable {
    pub fn new(ids: Vec<String>, names: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self, CovariateError> {
        if names.is_empty() || names.len() != columns.len() {
            return Err(CovariateError::Empty);
        }
        let mut seen = HashSet::new();
        for (row, id) in ids.iter().enumerate() {
            if !seen.insert(id.as_str()) {
                return Err(CovariateError::DuplicateId { row: row + 1, id: id.clone() });
            }
        }
        for (name, col) in names.iter().zip(&columns) {
            if col.len() != ids.len() {
                return Err(CovariateError::Ragged {
                    row: col.len().min(ids.len()) + 1,
                    expected: ids.len(),
                    got: col.len(),
                });
            }
            if let Some(row) = col.iter().position(|x| !x.is_finite()) {
                return Err(CovariateError::MissingValue { row: row + 1, column: name.clone() });
            }
        }
        Ok(CovariateTable {
            id_name: "id".into(),
            ids,
            names,
            columns,
        })
    }

    pub fn n(&self) -> usize {
        self.ids.len()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn column(&self, name: &str) -> Result<&[f64], CovariateError> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|j| self.columns[j].as_slice())
            .ok_or_else(|| CovariateError::UnknownColumn(name.to_string()))
    }

    /// `n × k` matrix of the named columns in the given order.
    pub fn matrix(&self, names: &[impl AsRef<str>]) -> Result<DMatrix<f64>, CovariateError> {
        let mut m = DMatrix::zeros(self.n(), names.len());
        for (j, name) in names.iter().enumerate() {
            m.column_mut(j).copy_from_slice(self.column(name.as_ref())?);
        }
        Ok(m)
    }
}

fn csv_error(path: &Path, source: csv::Error) -> CovariateError {
    CovariateError::Csv {
        path: path.display().to_string(),
        source,
    }
}

/// Reads a CSV whose first column is the subject id. Rows are numbered from 1
/// (the first data row) in errors.
pub fn read_covariates(path: impl AsRef<Path>) -> Result<CovariateTable, CovariateError> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.len() < 2 {
        return Err(CovariateError::Empty);
    }
    let id_name = header[0].to_string();
    let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut ids = Vec::new();
    let mut columns = vec![Vec::new(); names.len()];
    for (r, record) in reader.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| csv_error(path, e))?;
        if record.len() != header.len() {
            return Err(CovariateError::Ragged {
                row,
                expected: header.len(),
                got: record.len(),
            });
        }
        ids.push(record[0].to_string());
        for (j, cell) in record.iter().skip(1).enumerate() {
            let column = || names[j].clone();
            if cell.is_empty() || cell.eq_ignore_ascii_case("na") {
                return Err(CovariateError::MissingValue { row, column: column() });
            }
            let value: f64 = cell.parse().map_err(|_| CovariateError::NonNumeric {
                row,
                column: column(),
                value: cell.to_string(),
            })?;
            if value.is_nan() {
                return Err(CovariateError::MissingValue { row, column: column() });
            }
            if !value.is_finite() {
                return Err(CovariateError::NonNumeric {
                    row,
                    column: column(),
                    value: cell.to_string(),
                });
            }
            columns[j].push(value);
        }
    }
    let mut table = CovariateTable::new(ids, names, columns)?;
    table.id_name = id_name;
    Ok(table)
}

/// Writes the table; values use the shortest representation that parses back exactly.
pub fn write_covariates(table: &CovariateTable, path: impl AsRef<Path>) -> Result<(), CovariateError> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut header = vec![table.id_name.clone()];
    header.extend(table.names.iter().cloned());
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for (i, id) in table.ids.iter().enumerate() {
        let mut rec = vec![id.clone()];
        rec.extend(table.columns.iter().map(|c| format!("{}", c[i])));
        w.write_record(&rec).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| csv_error(path, csv::Error::from(e)))
}
