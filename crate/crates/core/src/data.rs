//! Observed response matrices and the Euclidean model parameters.

use std::collections::HashSet;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// An `I x J` response matrix: rows are treatments (tree leaves), columns are
/// patients.
#[derive(Clone, Debug, PartialEq)]
pub struct DataMatrix {
    values: DMatrix<f64>,
    row_labels: Vec<String>,
    col_labels: Vec<String>,
}

impl DataMatrix {
    pub fn new(values: DMatrix<f64>, row_labels: Vec<String>, col_labels: Vec<String>) -> Result<Self> {
        if values.nrows() != row_labels.len() || values.ncols() != col_labels.len() {
            return Err(Error::Dimension(format!(
                "{}x{} values with {} row labels and {} column labels",
                values.nrows(),
                values.ncols(),
                row_labels.len(),
                col_labels.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return invalid(format!("non-finite entry {v}"));
        }
        check_unique(&row_labels, "row")?;
        check_unique(&col_labels, "column")?;
        Ok(Self { values, row_labels, col_labels })
    }

    /// Builds a matrix from row-major nested vectors with generated column
    /// labels `P1..PJ`.
    pub fn from_rows(row_labels: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        let values = DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]);
        let col_labels = (1..=ncols).map(|j| format!("P{j}")).collect();
        Self::new(values, row_labels, col_labels)
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn row_labels(&self) -> &[String] {
        &self.row_labels
    }

    pub fn col_labels(&self) -> &[String] {
        &self.col_labels
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.values.row(i).iter().copied().collect()
    }

    /// Returns a copy with rows reordered by `perm` (new row `k` is old row
    /// `perm[k]`).
    pub fn permute_rows(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.rows() {
            return Err(Error::Dimension("permutation length".into()));
        }
        let values = DMatrix::from_fn(self.rows(), self.cols(), |i, j| self.values[(perm[i], j)]);
        let labels = perm.iter().map(|&p| self.row_labels[p].clone()).collect();
        Self::new(values, labels, self.col_labels.clone())
    }

    /// Multiplies every entry by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(&self.values * factor, self.row_labels.clone(), self.col_labels.clone())
    }

    /// CSV with a header of column labels after an empty corner cell and one
    /// labelled line per row. Values use the shortest round-trip form.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(std::iter::once("").chain(self.col_labels.iter().map(String::as_str)))?;
        for (i, label) in self.row_labels.iter().enumerate() {
            let mut rec = vec![label.clone()];
            rec.extend((0..self.cols()).map(|j| format!("{}", self.values[(i, j)])));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads the layout written by [`DataMatrix::write_csv`]. Every cell must
    /// hold a finite number.
    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(r);
        let col_labels: Vec<String> = rdr.headers()?.iter().skip(1).map(str::to_string).collect();
        let mut row_labels = Vec::new();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != col_labels.len() + 1 {
                return Err(Error::Dimension(format!("line has {} cells, expected {}", rec.len(), col_labels.len() + 1)));
            }
            row_labels.push(rec[0].to_string());
            let row = rec
                .iter()
                .skip(1)
                .map(|c| c.trim().parse::<f64>().map_err(|_| Error::InvalidArgument(format!("not a number: `{c}`"))))
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        let values = DMatrix::from_fn(rows.len(), col_labels.len(), |i, j| rows[i][j]);
        Self::new(values, row_labels, col_labels)
    }
}

fn check_unique(labels: &[String], what: &str) -> Result<()> {
    let mut seen = HashSet::with_capacity(labels.len());
    for l in labels {
        if !seen.insert(l.as_str()) {
            return invalid(format!("duplicate {what} label `{l}`"));
        }
    }
    Ok(())
}

/// Divergence parameter `c` and diffusion variance `sigma2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EuclideanParams {
    pub c: f64,
    pub sigma2: f64,
}

impl EuclideanParams {
    pub fn new(c: f64, sigma2: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return invalid(format!("divergence parameter must be positive, got {c}"));
        }
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return invalid(format!("diffusion variance must be positive, got {sigma2}"));
        }
        Ok(Self { c, sigma2 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_duplicate_labels() {
        let r = DataMatrix::from_rows(vec!["a".into(), "a".into()], &[vec![1.0], vec![2.0]]);
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let d = DataMatrix::from_rows(vec!["a b".into(), "c,d".into()], &[vec![0.1, -2.5e-300], vec![1.0 / 3.0, 7.0]]).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let back = DataMatrix::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, d);
        assert!(DataMatrix::read_csv(",P1\na,1,2\n".as_bytes()).is_err());
        assert!(DataMatrix::read_csv(",P1\na,x\n".as_bytes()).is_err());
    }

    #[test]
    fn rejects_non_finite() {
        let r = DataMatrix::from_rows(vec!["a".into()], &[vec![f64::NAN]]);
        assert!(r.is_err());
    }

    #[test]
    fn params_must_be_positive() {
        assert!(EuclideanParams::new(0.0, 1.0).is_err());
        assert!(EuclideanParams::new(1.0, -1.0).is_err());
        assert!(EuclideanParams::new(0.3, 0.5).is_ok());
    }
}
