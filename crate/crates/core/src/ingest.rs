//! Loading and preprocessing of treatment-by-patient response tables.
//!
//! The pipeline scales the raw table by its global standard deviation,
//! fills missing cells from the nearest treatment rows, then subtracts the
//! untreated baseline row.

use std::collections::HashSet;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::data::DataMatrix;
use crate::error::{Error, Result};

pub const DEFAULT_UNTREATED: &str = "untreated";
pub const DEFAULT_NEIGHBORS: usize = 10;

fn ingest_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Ingest(msg.into()))
}

/// Treatments by patients, with `None` marking a missing response.
#[derive(Clone, Debug, PartialEq)]
pub struct RawPdxTable {
    pub treatments: Vec<String>,
    pub patients: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
    pub untreated: usize,
}

impl RawPdxTable {
    pub fn new(
        treatments: Vec<String>,
        patients: Vec<String>,
        values: Vec<Vec<Option<f64>>>,
        untreated_name: &str,
    ) -> Result<Self> {
        unique(&treatments, "treatment")?;
        unique(&patients, "patient")?;
        if values.len() != treatments.len() {
            return ingest_err(format!("{} value rows for {} treatments", values.len(), treatments.len()));
        }
        if let Some((i, r)) = values.iter().enumerate().find(|(_, r)| r.len() != patients.len()) {
            return ingest_err(format!("row `{}` has {} cells, expected {}", treatments[i], r.len(), patients.len()));
        }
        if values.iter().flatten().flatten().any(|v| !v.is_finite()) {
            return ingest_err("non-finite response value");
        }
        let Some(untreated) = treatments.iter().position(|t| t == untreated_name) else {
            return ingest_err(format!("no untreated row named `{untreated_name}`"));
        };
        if treatments.len() < 3 {
            return ingest_err("need at least 2 treatments besides the untreated row");
        }
        Ok(Self { treatments, patients, values, untreated })
    }

    pub fn n_missing(&self) -> usize {
        self.values.iter().flatten().filter(|v| v.is_none()).count()
    }

    pub fn is_complete(&self) -> bool {
        self.n_missing() == 0
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        let values = self.values.iter().map(|r| r.iter().map(|v| v.map(&f)).collect()).collect();
        Self { values, ..self.clone() }
    }
}

fn unique(labels: &[String], what: &str) -> Result<()> {
    let mut seen = HashSet::new();
    for l in labels {
        if !seen.insert(l) {
            return ingest_err(format!("duplicate {what} `{l}`"));
        }
    }
    Ok(())
}

/// Reads a CSV whose header holds patient ids after a corner cell and whose
/// first column holds treatment names. Empty cells and `NA` are missing.
pub fn read_pdx_csv<R: std::io::Read>(r: R, untreated_name: &str) -> Result<RawPdxTable> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(r);
    let patients: Vec<String> = rdr.headers()?.iter().skip(1).map(|s| s.trim().to_string()).collect();
    let mut treatments = Vec::new();
    let mut values = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let name = rec.get(0).unwrap_or("").trim().to_string();
        if rec.len() != patients.len() + 1 {
            return ingest_err(format!("row `{name}` has {} cells, expected {}", rec.len() - 1, patients.len()));
        }
        let row = rec
            .iter()
            .skip(1)
            .map(|cell| match cell.trim() {
                "" | "NA" => Ok(None),
                s => s.parse::<f64>().map(Some).map_err(|_| Error::Ingest(format!("row `{name}`: not a number `{s}`"))),
            })
            .collect::<Result<Vec<_>>>()?;
        treatments.push(name);
        values.push(row);
    }
    RawPdxTable::new(treatments, patients, values, untreated_name)
}

pub fn load_csv(path: impl AsRef<Path>, untreated_name: &str) -> Result<RawPdxTable> {
    read_pdx_csv(std::fs::File::open(path)?, untreated_name)
}

/// Fills each missing cell with the mean of that column over the `k` nearest
/// rows observing it. Row distance is Euclidean over the columns both rows
/// observe; rows sharing no observed column are never neighbours, and a cell
/// with no eligible neighbour takes the column mean.
pub fn knn_impute(table: &RawPdxTable, k: usize) -> Result<RawPdxTable> {
    if k == 0 {
        return ingest_err("k must be at least 1");
    }
    let v = &table.values;
    if let Some(i) = v.iter().position(|r| r.iter().all(Option::is_none)) {
        return ingest_err(format!("row `{}` has no observed value", table.treatments[i]));
    }
    let n_cols = table.patients.len();
    let mut col_mean = vec![0.0; n_cols];
    for (j, m) in col_mean.iter_mut().enumerate() {
        let obs: Vec<f64> = v.iter().filter_map(|r| r[j]).collect();
        if obs.is_empty() {
            return ingest_err(format!("patient `{}` has no observed value", table.patients[j]));
        }
        *m = obs.iter().sum::<f64>() / obs.len() as f64;
    }
    let mut out = table.clone();
    for (i, row) in v.iter().enumerate() {
        if row.iter().all(Option::is_some) {
            continue;
        }
        let mut dist: Vec<(f64, usize)> = Vec::new();
        for (r, other) in v.iter().enumerate() {
            if r == i {
                continue;
            }
            let mut shared = 0;
            let mut ss = 0.0;
            for (a, b) in row.iter().zip(other) {
                if let (Some(a), Some(b)) = (a, b) {
                    shared += 1;
                    ss += (a - b) * (a - b);
                }
            }
            if shared > 0 {
                dist.push((ss.sqrt(), r));
            }
        }
        dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for j in 0..n_cols {
            if row[j].is_some() {
                continue;
            }
            let donors: Vec<f64> = dist.iter().filter_map(|&(_, r)| v[r][j]).take(k).collect();
            let fill = if donors.is_empty() { col_mean[j] } else { donors.iter().sum::<f64>() / donors.len() as f64 };
            out.values[i][j] = Some(fill);
        }
    }
    Ok(out)
}

/// Sample standard deviation of all observed entries.
pub fn global_sd(table: &RawPdxTable) -> Result<f64> {
    let obs: Vec<f64> = table.values.iter().flatten().flatten().copied().collect();
    if obs.len() < 2 {
        return ingest_err("fewer than 2 observed values");
    }
    let sd = crate::stats::variance(&obs).sqrt();
    if !(sd > 0.0 && sd.is_finite()) {
        return ingest_err("global standard deviation is zero");
    }
    Ok(sd)
}

/// Divides every entry by the global standard deviation.
pub fn scale_table(table: &RawPdxTable) -> Result<RawPdxTable> {
    let sd = global_sd(table)?;
    Ok(table.map(|x| x / sd))
}

/// Subtracts the untreated row from every other row and drops it.
pub fn subtract_untreated(table: &RawPdxTable) -> Result<DataMatrix> {
    if !table.is_complete() {
        return ingest_err(format!("{} missing cells remain", table.n_missing()));
    }
    let base: Vec<f64> = table.values[table.untreated].iter().map(|v| v.unwrap_or(0.0)).collect();
    let keep: Vec<usize> = (0..table.treatments.len()).filter(|&i| i != table.untreated).collect();
    let values = DMatrix::from_fn(keep.len(), base.len(), |r, j| table.values[keep[r]][j].unwrap_or(0.0) - base[j]);
    let labels = keep.iter().map(|&i| table.treatments[i].clone()).collect();
    DataMatrix::new(values, labels, table.patients.clone())
}

/// Scales a complete table by its global standard deviation, then subtracts
/// the untreated row.
pub fn scale_and_center(table: &RawPdxTable) -> Result<DataMatrix> {
    if !table.is_complete() {
        return ingest_err(format!("{} missing cells remain", table.n_missing()));
    }
    subtract_untreated(&scale_table(table)?)
}

/// Scale, impute with `k` neighbours, subtract the baseline.
pub fn preprocess(table: &RawPdxTable, k: usize) -> Result<DataMatrix> {
    subtract_untreated(&knn_impute(&scale_table(table)?, k)?)
}

/// QQ pairs `(chi-square quantile, squared Mahalanobis distance)` for the
/// patient columns, sorted ascending. The column covariance is the centred
/// sample covariance plus a ridge of `1e-3 * trace / I` on the diagonal.
pub fn mvn_qq_points(data: &DataMatrix) -> Result<Vec<(f64, f64)>> {
    let (i, j) = (data.rows(), data.cols());
    if j < 3 {
        return Err(Error::InvalidArgument(format!("QQ points need at least 3 columns, got {j}")));
    }
    let x = data.values();
    let mean: DVector<f64> = x.column_mean();
    let centred = DMatrix::from_fn(i, j, |r, c| x[(r, c)] - mean[r]);
    let mut cov = &centred * centred.transpose() / (j as f64 - 1.0);
    let ridge = 1e-3 * cov.trace() / i as f64;
    for d in 0..i {
        cov[(d, d)] += ridge;
    }
    let Some(chol) = cov.cholesky() else {
        return Err(Error::DegenerateKernel("column covariance is singular after the ridge".into()));
    };
    let solved = chol.solve(&centred);
    let mut d2: Vec<f64> = (0..j).map(|c| centred.column(c).dot(&solved.column(c))).collect();
    d2.sort_by(f64::total_cmp);
    let chi = ChiSquared::new(i as f64).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(d2.into_iter().enumerate().map(|(k, s)| (chi.inverse_cdf((k as f64 + 0.5) / j as f64), s)).collect())
}

/// Writes QQ pairs as a two-column CSV.
pub fn write_qq_csv<W: std::io::Write>(points: &[(f64, f64)], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["theoretical", "sample"])?;
    for (t, s) in points {
        out.write_record([format!("{t}"), format!("{s}")])?;
    }
    out.flush()?;
    Ok(())
}
