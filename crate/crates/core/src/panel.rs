//! Returns and factor panels, their CSV layout, and time alignment.
//!
//! Files have a header row `date,<id>,<id>,...` and one row per period. Values are
//! excess returns in decimal form; no risk-free adjustment is made here.
//! Matrices are stored variables-by-time, so with nalgebra's column-major layout a
//! single period's cross-section is contiguous.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;

use crate::csv_io::fmt_f64;
use crate::error::{Error, Result};

/// Excess returns, `p` assets by `n` periods.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnsPanel {
    values: DMatrix<f64>,
    asset_ids: Vec<String>,
    time_index: Vec<String>,
}

/// Observed factors, `K` factors by `n` periods.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPanel {
    values: DMatrix<f64>,
    factor_ids: Vec<String>,
    time_index: Vec<String>,
}

/// Orders time labels numerically when both parse as numbers, lexicographically otherwise.
fn compare_labels(a: &str, b: &str) -> Ordering {
    match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => x.partial_cmp(&y).unwrap_or(Ordering::Equal),
        _ => a.cmp(b),
    }
}

fn check_common(values: &DMatrix<f64>, ids: &[String], time_index: &[String], what: &str) -> Result<()> {
    if ids.len() != values.nrows() {
        return Err(Error::Dimension {
            context: format!("{what} identifiers"),
            expected: values.nrows(),
            actual: ids.len(),
        });
    }
    if time_index.len() != values.ncols() {
        return Err(Error::Dimension {
            context: format!("{what} time index"),
            expected: values.ncols(),
            actual: time_index.len(),
        });
    }
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::DuplicateId(id.clone()));
        }
    }
    for w in time_index.windows(2) {
        if compare_labels(&w[0], &w[1]) != Ordering::Less {
            return Err(Error::InvalidParameter(format!(
                "{what} time index is not strictly increasing at `{}` -> `{}`",
                w[0], w[1]
            )));
        }
    }
    if let Some((i, _)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        let (r, c) = (i % values.nrows(), i / values.nrows());
        return Err(Error::InvalidParameter(format!(
            "{what} value for `{}` at `{}` is not finite",
            ids[r], time_index[c]
        )));
    }
    Ok(())
}

impl ReturnsPanel {
    pub fn new(values: DMatrix<f64>, asset_ids: Vec<String>, time_index: Vec<String>) -> Result<Self> {
        if values.nrows() < 2 {
            return Err(Error::InsufficientData(format!(
                "need at least 2 assets, got {}",
                values.nrows()
            )));
        }
        if values.ncols() < 2 {
            return Err(Error::InsufficientData(format!(
                "need at least 2 observations, got {}",
                values.ncols()
            )));
        }
        check_common(&values, &asset_ids, &time_index, "returns")?;
        Ok(Self {
            values,
            asset_ids,
            time_index,
        })
    }

    /// Panel with generated identifiers `a0, a1, ...` and time labels `0, 1, ...`.
    pub fn from_matrix(values: DMatrix<f64>) -> Result<Self> {
        let ids = (0..values.nrows()).map(|i| format!("a{i}")).collect();
        let times = (0..values.ncols()).map(|t| t.to_string()).collect();
        Self::new(values, ids, times)
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }
    pub fn asset_ids(&self) -> &[String] {
        &self.asset_ids
    }
    pub fn time_index(&self) -> &[String] {
        &self.time_index
    }
    pub fn n_assets(&self) -> usize {
        self.values.nrows()
    }
    pub fn n_periods(&self) -> usize {
        self.values.ncols()
    }

    /// Sub-panel over periods `start..end`.
    pub fn slice_periods(&self, start: usize, end: usize) -> Result<Self> {
        Self::new(
            self.values.columns(start, end - start).into_owned(),
            self.asset_ids.clone(),
            self.time_index[start..end].to_vec(),
        )
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_panel(path, &self.values, &self.asset_ids, &self.time_index)
    }
}

impl FactorPanel {
    pub fn new(values: DMatrix<f64>, factor_ids: Vec<String>, time_index: Vec<String>) -> Result<Self> {
        if values.nrows() < 1 {
            return Err(Error::InsufficientData("need at least 1 factor".into()));
        }
        if values.nrows() >= values.ncols() {
            return Err(Error::InsufficientData(format!(
                "need more observations than factors (K = {}, n = {})",
                values.nrows(),
                values.ncols()
            )));
        }
        check_common(&values, &factor_ids, &time_index, "factors")?;
        Ok(Self {
            values,
            factor_ids,
            time_index,
        })
    }

    pub fn from_matrix(values: DMatrix<f64>) -> Result<Self> {
        let ids = (0..values.nrows()).map(|i| format!("f{i}")).collect();
        let times = (0..values.ncols()).map(|t| t.to_string()).collect();
        Self::new(values, ids, times)
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }
    pub fn factor_ids(&self) -> &[String] {
        &self.factor_ids
    }
    pub fn time_index(&self) -> &[String] {
        &self.time_index
    }
    pub fn n_factors(&self) -> usize {
        self.values.nrows()
    }
    pub fn n_periods(&self) -> usize {
        self.values.ncols()
    }

    pub fn slice_periods(&self, start: usize, end: usize) -> Result<Self> {
        Self::new(
            self.values.columns(start, end - start).into_owned(),
            self.factor_ids.clone(),
            self.time_index[start..end].to_vec(),
        )
    }

    /// Fails with the first position where the two time indices disagree.
    pub fn check_alignment(&self, returns: &ReturnsPanel) -> Result<()> {
        let a = returns.time_index();
        let b = self.time_index();
        for (i, (x, y)) in a.iter().zip(b.iter()).enumerate() {
            if x != y {
                return Err(Error::Misaligned {
                    position: i,
                    returns: x.clone(),
                    factors: y.clone(),
                });
            }
        }
        if a.len() != b.len() {
            let i = a.len().min(b.len());
            return Err(Error::Misaligned {
                position: i,
                returns: a.get(i).cloned().unwrap_or_else(|| "<end>".into()),
                factors: b.get(i).cloned().unwrap_or_else(|| "<end>".into()),
            });
        }
        Ok(())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_panel(path, &self.values, &self.factor_ids, &self.time_index)
    }
}

fn write_panel(path: &Path, values: &DMatrix<f64>, ids: &[String], times: &[String]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(out, "date")?;
    for id in ids {
        write!(out, ",{id}")?;
    }
    writeln!(out)?;
    for (t, label) in times.iter().enumerate() {
        write!(out, "{label}")?;
        for i in 0..values.nrows() {
            write!(out, ",{}", fmt_f64(values[(i, t)]))?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

struct RawPanel {
    ids: Vec<String>,
    times: Vec<String>,
    /// variables x time
    values: DMatrix<f64>,
}

fn read_panel(path: &Path) -> Result<RawPanel> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.len() < 2 {
        return Err(Error::Parse {
            row: 1,
            column: headers.len(),
            message: "header needs a time column and at least one series".into(),
        });
    }
    let ids: Vec<String> = headers.iter().skip(1).map(|s| s.trim().to_string()).collect();
    let mut seen = HashSet::new();
    for id in &ids {
        if id.is_empty() {
            return Err(Error::Parse {
                row: 1,
                column: 0,
                message: "empty series identifier".into(),
            });
        }
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateId(id.clone()));
        }
    }
    let m = ids.len();
    let mut times = Vec::new();
    let mut data: Vec<f64> = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        // header is line 1
        let row = r + 2;
        if record.len() != m + 1 {
            return Err(Error::Parse {
                row,
                column: record.len(),
                message: format!("expected {} fields, found {}", m + 1, record.len()),
            });
        }
        let label = record[0].trim();
        if label.is_empty() {
            return Err(Error::MissingValue { row, column: 1 });
        }
        times.push(label.to_string());
        for c in 1..=m {
            let cell = record[c].trim();
            if cell.is_empty() {
                return Err(Error::MissingValue { row, column: c + 1 });
            }
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                column: c + 1,
                message: format!("`{cell}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: c + 1,
                    message: format!("`{cell}` is not finite"),
                });
            }
            data.push(v);
        }
    }
    let n = times.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "{} has {n} observation(s), need at least 2",
            path.display()
        )));
    }
    // data is row-major time x variables == column-major variables x time
    let values = DMatrix::from_column_slice(m, n, &data);
    Ok(RawPanel { ids, times, values })
}

pub fn load_returns_csv(path: &Path) -> Result<ReturnsPanel> {
    let raw = read_panel(path)?;
    ReturnsPanel::new(raw.values, raw.ids, raw.times)
}

/// Loads a factor file; when `returns` is given the time indices must match exactly.
pub fn load_factors_csv(path: &Path, returns: Option<&ReturnsPanel>) -> Result<FactorPanel> {
    let raw = read_panel(path)?;
    let panel = FactorPanel::new(raw.values, raw.ids, raw.times)?;
    if let Some(r) = returns {
        panel.check_alignment(r)?;
    }
    Ok(panel)
}

/// Restricts both panels to their common time labels, keeping the returns order.
pub fn align(returns: &ReturnsPanel, factors: &FactorPanel) -> Result<(ReturnsPanel, FactorPanel)> {
    let factor_pos: std::collections::HashMap<&str, usize> = factors
        .time_index()
        .iter()
        .enumerate()
        .map(|(i, t)| (t.as_str(), i))
        .collect();
    let mut keep_r = Vec::new();
    let mut keep_f = Vec::new();
    for (i, t) in returns.time_index().iter().enumerate() {
        if let Some(&j) = factor_pos.get(t.as_str()) {
            keep_r.push(i);
            keep_f.push(j);
        }
    }
    if keep_r.is_empty() {
        return Err(Error::InsufficientData(
            "returns and factors share no time labels".into(),
        ));
    }
    let r = ReturnsPanel::new(
        returns.values().select_columns(keep_r.iter()),
        returns.asset_ids().to_vec(),
        keep_r.iter().map(|&i| returns.time_index()[i].clone()).collect(),
    )?;
    let f = FactorPanel::new(
        factors.values().select_columns(keep_f.iter()),
        factors.factor_ids().to_vec(),
        keep_f.iter().map(|&j| factors.time_index()[j].clone()).collect(),
    )?;
    Ok((r, f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn loads_returns_transposed() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "r.csv",
            "date,A,B\n2020-01,0.01,0.02\n2020-02,0.03,0.04\n2020-03,0.05,0.06\n2020-04,0.07,0.08\n2020-05,0.09,0.10\n",
        );
        let panel = load_returns_csv(&p).unwrap();
        assert_eq!(panel.n_assets(), 2);
        assert_eq!(panel.n_periods(), 5);
        assert_eq!(panel.values()[(1, 0)], 0.02);
        assert_eq!(panel.values()[(0, 4)], 0.09);
        assert_eq!(panel.asset_ids(), &["A", "B"]);
    }

    #[test]
    fn blank_cell_names_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "r.csv", "date,A,B\n1,0.01,0.02\n2,,0.04\n3,0.05,0.06\n");
        let err = load_returns_csv(&p).unwrap_err();
        match err {
            Error::MissingValue { row, column } => {
                assert_eq!(row, 3);
                assert_eq!(column, 2);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn rejects_duplicates_and_short_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "d.csv", "date,A,A\n1,0.1,0.2\n2,0.1,0.2\n");
        assert!(matches!(load_returns_csv(&p), Err(Error::DuplicateId(_))));
        let p = write(&dir, "s.csv", "date,A,B\n1,0.1,0.2\n");
        assert!(matches!(load_returns_csv(&p), Err(Error::InsufficientData(_))));
        let p = write(&dir, "x.csv", "date,A,B\n1,0.1,abc\n2,0.1,0.2\n");
        assert!(matches!(load_returns_csv(&p), Err(Error::Parse { row: 2, column: 3, .. })));
    }

    #[test]
    fn factor_ids_in_column_order_and_alignment() {
        let dir = tempfile::tempdir().unwrap();
        let r = write(&dir, "r.csv", "date,A,B\n1,0.1,0.2\n2,0.1,0.3\n3,0.2,0.2\n4,0.0,0.1\n5,0.3,0.2\n");
        let f = write(
            &dir,
            "f.csv",
            "date,MKT,SMB,HML\n1,0.1,0.2,0.0\n2,0.1,0.3,0.1\n3,0.2,0.2,0.2\n4,0.0,0.1,0.3\n5,0.3,0.2,0.1\n",
        );
        let returns = load_returns_csv(&r).unwrap();
        let factors = load_factors_csv(&f, Some(&returns)).unwrap();
        assert_eq!(factors.factor_ids(), &["MKT", "SMB", "HML"]);
        assert_eq!(factors.n_factors(), 3);

        let bad = write(&dir, "g.csv", "date,MKT\n1,0.1\n2,0.1\n7,0.2\n4,0.0\n5,0.3\n");
        let err = load_factors_csv(&bad, None);
        // 7 then 4 is not ordered
        assert!(err.is_err());
        let bad = write(&dir, "h.csv", "date,MKT\n1,0.1\n2,0.1\n3,0.2\n6,0.0\n7,0.3\n");
        match load_factors_csv(&bad, Some(&returns)).unwrap_err() {
            Error::Misaligned { position, returns, factors } => {
                assert_eq!(position, 3);
                assert_eq!(returns, "4");
                assert_eq!(factors, "6");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn align_cases() {
        let r = ReturnsPanel::from_matrix(DMatrix::from_fn(2, 4, |i, t| (i + t) as f64)).unwrap();
        let f = FactorPanel::from_matrix(DMatrix::from_fn(1, 4, |_, t| t as f64)).unwrap();
        let (r2, f2) = align(&r, &f).unwrap();
        assert_eq!(r2, r);
        assert_eq!(f2, f);

        let f_extra = FactorPanel::from_matrix(DMatrix::from_fn(1, 5, |_, t| t as f64)).unwrap();
        let (r3, f3) = align(&r, &f_extra).unwrap();
        assert_eq!(r3.time_index(), f3.time_index());
        assert_eq!(f3.n_periods(), 4);

        let f_disjoint = FactorPanel::new(
            DMatrix::from_fn(1, 3, |_, t| t as f64),
            vec!["f".into()],
            vec!["10".into(), "11".into(), "12".into()],
        )
        .unwrap();
        assert!(align(&r, &f_disjoint).is_err());
    }

    #[test]
    fn numeric_time_labels_order_numerically() {
        let labels: Vec<String> = (1..=12).map(|t| t.to_string()).collect();
        let r = ReturnsPanel::new(DMatrix::zeros(2, 12), vec!["a".into(), "b".into()], labels);
        assert!(r.is_ok());
    }
}
