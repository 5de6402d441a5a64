//! Sample tables: named numeric columns, row-major storage, optional loss column.
//!
//! CSV files carry a header row and may contain a `__loss` column; empty or
//! non-numeric cells are rejected with the offending data-row number.

use std::io::{Read, Write};

pub const LOSS_COLUMN: &str = "__loss";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TableError {
    #[error("row {row}, column '{column}': {message}")]
    Cell {
        row: usize,
        column: String,
        message: String,
    },
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
    #[error("header: {0}")]
    Header(String),
    #[error("missing columns: {0:?}")]
    MissingColumns(Vec<String>),
    #[error("table has no loss column")]
    NoLoss,
    #[error("csv: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleTable {
    columns: Vec<String>,
    data: Vec<f64>,
    loss: Option<Vec<f64>>,
}

impl SampleTable {
    /// Builds a table from row-major data; `data.len()` must be a multiple of the width.
    pub fn from_rows(columns: Vec<String>, data: Vec<f64>) -> Self {
        let w = columns.len().max(1);
        assert_eq!(data.len() % w, 0, "row-major data does not match the column count");
        SampleTable { columns, data, loss: None }
    }

    pub fn with_loss(mut self, loss: Vec<f64>) -> Self {
        assert_eq!(loss.len(), self.n_rows(), "loss length differs from row count");
        self.loss = Some(loss);
        self
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    pub fn n_rows(&self) -> usize {
        if self.columns.is_empty() {
            self.loss.as_ref().map_or(0, |l| l.len())
        } else {
            self.data.len() / self.columns.len()
        }
    }

    pub fn row(&self, j: usize) -> &[f64] {
        let w = self.width();
        &self.data[j * w..(j + 1) * w]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let c = self.column_index(name)?;
        Some((0..self.n_rows()).map(|j| self.row(j)[c]).collect())
    }

    pub fn loss(&self) -> Option<&[f64]> {
        self.loss.as_deref()
    }

    pub fn require_loss(&self) -> Result<&[f64], TableError> {
        self.loss().ok_or(TableError::NoLoss)
    }

    /// Table restricted to the given rows, in the given order.
    pub fn subset(&self, rows: &[usize]) -> SampleTable {
        let mut data = Vec::with_capacity(rows.len() * self.width());
        for &j in rows {
            data.extend_from_slice(self.row(j));
        }
        SampleTable {
            columns: self.columns.clone(),
            data,
            loss: self.loss.as_ref().map(|l| rows.iter().map(|&j| l[j]).collect()),
        }
    }

    /// Reorders columns to `layout`; extra columns are dropped.
    pub fn select(&self, layout: &[String]) -> Result<SampleTable, TableError> {
        let idx: Vec<Option<usize>> = layout.iter().map(|c| self.column_index(c)).collect();
        let missing: Vec<String> = layout
            .iter()
            .zip(&idx)
            .filter(|(_, i)| i.is_none())
            .map(|(c, _)| c.clone())
            .collect();
        if !missing.is_empty() {
            return Err(TableError::MissingColumns(missing));
        }
        let idx: Vec<usize> = idx.into_iter().map(|i| i.unwrap()).collect();
        let mut data = Vec::with_capacity(self.n_rows() * layout.len());
        for j in 0..self.n_rows() {
            let r = self.row(j);
            data.extend(idx.iter().map(|&c| r[c]));
        }
        Ok(SampleTable { columns: layout.to_vec(), data, loss: self.loss.clone() })
    }

    pub fn from_csv_reader<R: Read>(reader: R) -> Result<SampleTable, TableError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| TableError::Header(e.to_string()))?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        if header.is_empty() || header.iter().any(|h| h.is_empty()) {
            return Err(TableError::Header("empty column name".into()));
        }
        for (i, h) in header.iter().enumerate() {
            if header[..i].contains(h) {
                return Err(TableError::Header(format!("duplicate column '{h}'")));
            }
        }
        let loss_at = header.iter().position(|h| h == LOSS_COLUMN);
        let columns: Vec<String> = header.iter().filter(|h| *h != LOSS_COLUMN).cloned().collect();
        let mut data = Vec::new();
        let mut loss = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let row = i + 1;
            let rec = rec.map_err(|e| TableError::Row { row, message: e.to_string() })?;
            if rec.len() != header.len() {
                return Err(TableError::Row {
                    row,
                    message: format!("expected {} fields, found {}", header.len(), rec.len()),
                });
            }
            for (c, field) in rec.iter().enumerate() {
                let field = field.trim();
                let cell_err = |message: String| TableError::Cell { row, column: header[c].clone(), message };
                if field.is_empty() {
                    return Err(cell_err("missing value".into()));
                }
                let v: f64 = field.parse().map_err(|_| cell_err(format!("not a number: '{field}'")))?;
                if !v.is_finite() {
                    return Err(cell_err(format!("non-finite value '{field}'")));
                }
                if Some(c) == loss_at {
                    loss.push(v);
                } else {
                    data.push(v);
                }
            }
        }
        let mut t = SampleTable { columns, data, loss: None };
        if loss_at.is_some() {
            t.loss = Some(loss);
        }
        Ok(t)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), TableError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = self.columns.iter().map(|s| s.as_str()).collect();
        if self.loss.is_some() {
            header.push(LOSS_COLUMN);
        }
        w.write_record(&header).map_err(|e| TableError::Csv(e.to_string()))?;
        for j in 0..self.n_rows() {
            let mut fields: Vec<String> = self.row(j).iter().map(|v| v.to_string()).collect();
            if let Some(l) = &self.loss {
                fields.push(l[j].to_string());
            }
            w.write_record(&fields).map_err(|e| TableError::Csv(e.to_string()))?;
        }
        w.flush().map_err(|e| TableError::Csv(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_keeps_loss_separate() {
        let text = "Y,O,__loss\n0,1,0.5\n1,0,0.25\n";
        let t = SampleTable::from_csv_reader(text.as_bytes()).unwrap();
        assert_eq!(t.columns(), &["Y".to_string(), "O".to_string()]);
        assert_eq!(t.n_rows(), 2);
        assert_eq!(t.row(1), &[1.0, 0.0]);
        assert_eq!(t.loss().unwrap(), &[0.5, 0.25]);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(SampleTable::from_csv_reader(buf.as_slice()).unwrap(), t);
    }

    #[test]
    fn malformed_rows_report_row_numbers() {
        let err = SampleTable::from_csv_reader("a,b\n1,2\n3,x\n".as_bytes()).unwrap_err();
        assert_eq!(
            err,
            TableError::Cell { row: 2, column: "b".into(), message: "not a number: 'x'".into() }
        );
        let err = SampleTable::from_csv_reader("a,b\n1,2\n3,\n".as_bytes()).unwrap_err();
        assert!(matches!(err, TableError::Cell { row: 2, .. }));
        let err = SampleTable::from_csv_reader("a,b\n1,2\n3\n".as_bytes()).unwrap_err();
        assert!(matches!(err, TableError::Row { row: 2, .. }), "{err:?}");
    }

    #[test]
    fn select_reorders_and_reports_missing() {
        let t = SampleTable::from_rows(vec!["a".into(), "b".into()], vec![1.0, 2.0, 3.0, 4.0]);
        let s = t.select(&["b".into(), "a".into()]).unwrap();
        assert_eq!(s.row(0), &[2.0, 1.0]);
        assert_eq!(
            t.select(&["c".into()]).unwrap_err(),
            TableError::MissingColumns(vec!["c".into()])
        );
    }
}
