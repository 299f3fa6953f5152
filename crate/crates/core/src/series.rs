//! Multivariate time series container, windowing, normalization, lag
//! extension, and CSV round-tripping.
//!
//! The lag-extended layout is shared by the causal discovery models and the
//! graph soft sensors: row `r` concatenates the samples at times
//! `r, r+1, ..., r+K`, oldest block first, so the last `d` columns hold the
//! instantaneous values.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Floor applied to per-column standard deviations during normalization.
pub const STD_FLOOR: f64 = 1e-8;

/// A `T x d` real-valued sequence with named variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultivariateSeries {
    values: Array2<f64>,
    var_names: Vec<String>,
    sample_interval: Option<f64>,
}

impl MultivariateSeries {
    pub fn new(values: Array2<f64>, var_names: Vec<String>) -> Result<Self> {
        Self::with_interval(values, var_names, None)
    }

    pub fn with_interval(
        values: Array2<f64>,
        var_names: Vec<String>,
        sample_interval: Option<f64>,
    ) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::invalid("series must have at least one row and one column"));
        }
        if var_names.len() != values.ncols() {
            return Err(Error::dims(
                format!("{} variable names", values.ncols()),
                format!("{}", var_names.len()),
            ));
        }
        for (i, a) in var_names.iter().enumerate() {
            if var_names[..i].contains(a) {
                return Err(Error::invalid(format!("duplicate variable name '{a}'")));
            }
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                context: "series values".into(),
            });
        }
        if let Some(dt) = sample_interval {
            if !(dt.is_finite() && dt > 0.0) {
                return Err(Error::invalid("sample interval must be positive"));
            }
        }
        Ok(Self {
            values,
            var_names,
            sample_interval,
        })
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        false // at least one row by construction
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn var_names(&self) -> &[String] {
        &self.var_names
    }

    pub fn sample_interval(&self) -> Option<f64> {
        self.sample_interval
    }

    pub fn var_index(&self, name: &str) -> Option<usize> {
        self.var_names.iter().position(|n| n == name)
    }

    /// View of rows `[start, end)`.
    pub fn window(&self, start: usize, end: usize) -> Result<ArrayView2<'_, f64>> {
        if start >= end || end > self.len() {
            return Err(Error::invalid(format!(
                "window [{start}, {end}) out of range for series of length {}",
                self.len()
            )));
        }
        Ok(self.values.slice(ndarray::s![start..end, ..]))
    }

    /// New series containing only the named columns, in the given order.
    pub fn select(&self, names: &[String]) -> Result<MultivariateSeries> {
        let mut cols = Vec::with_capacity(names.len());
        for n in names {
            cols.push(
                self.var_index(n)
                    .ok_or_else(|| Error::invalid(format!("unknown variable '{n}'")))?,
            );
        }
        let values = self.values.select(Axis(1), &cols);
        MultivariateSeries::with_interval(values, names.to_vec(), self.sample_interval)
    }
}

/// Per-column mean and (floored) standard deviation of a data window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
    /// Columns whose raw standard deviation fell below [`STD_FLOOR`].
    pub floored: Vec<bool>,
}

impl NormalizationStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Apply `(x - mean) / std` column-wise.
    pub fn apply(&self, window: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if window.ncols() != self.dim() {
            return Err(Error::dims(
                format!("{} columns", self.dim()),
                format!("{}", window.ncols()),
            ));
        }
        let mut out = window.to_owned();
        for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            let (m, s) = (self.mean[j], self.std[j]);
            col.mapv_inplace(|v| (v - m) / s);
        }
        Ok(out)
    }
}

/// Compute per-column mean and population standard deviation.
pub fn compute_stats(window: ArrayView2<'_, f64>) -> NormalizationStats {
    let t = window.nrows() as f64;
    let mean = window.mean_axis(Axis(0)).expect("nonempty window");
    let mut std = Array1::zeros(window.ncols());
    let mut floored = vec![false; window.ncols()];
    for (j, col) in window.axis_iter(Axis(1)).enumerate() {
        let m = mean[j];
        let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / t;
        let s = var.sqrt();
        if s < STD_FLOOR {
            std[j] = STD_FLOOR;
            floored[j] = true;
        } else {
            std[j] = s;
        }
    }
    NormalizationStats { mean, std, floored }
}

/// Normalize a window to zero mean and unit standard deviation per column.
///
/// When `stats` is omitted they are computed from the window itself
/// (population convention). Constant columns are floored at [`STD_FLOOR`]
/// and flagged, which leaves their normalized values at exactly zero.
pub fn normalize_window(
    window: ArrayView2<'_, f64>,
    stats: Option<&NormalizationStats>,
) -> Result<(Array2<f64>, NormalizationStats)> {
    if window.nrows() < 2 {
        return Err(Error::invalid(format!(
            "normalization window needs at least 2 rows, got {}",
            window.nrows()
        )));
    }
    if !window.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite {
            context: "normalization window".into(),
        });
    }
    let stats = match stats {
        Some(s) => {
            if s.dim() != window.ncols() {
                return Err(Error::dims(
                    format!("{} columns", s.dim()),
                    format!("{}", window.ncols()),
                ));
            }
            s.clone()
        }
        None => compute_stats(window),
    };
    let out = stats.apply(window)?;
    Ok((out, stats))
}

/// Arithmetic column mean of a raw (unnormalized) window.
pub fn window_mean(window: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
    window
        .mean_axis(Axis(0))
        .ok_or_else(|| Error::invalid("window mean of empty window"))
}

/// Lag-extended data: row `r` holds `x_r, ..., x_{r+K}` (oldest first).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagExtendedMatrix {
    pub data: Array2<f64>,
    pub lag_order: usize,
    pub dim: usize,
}

impl LagExtendedMatrix {
    pub fn nrows(&self) -> usize {
        self.data.nrows()
    }

    /// Column holding the instantaneous value of variable `j`.
    pub fn instantaneous_col(&self, j: usize) -> usize {
        self.lag_order * self.dim + j
    }
}

/// Lag-extend a `T x d` matrix into `(T-K) x ((K+1)*d)` rows.
pub fn lag_extend_matrix(values: ArrayView2<'_, f64>, lag_order: usize) -> Result<LagExtendedMatrix> {
    let (t, d) = (values.nrows(), values.ncols());
    if t <= lag_order {
        return Err(Error::invalid(format!(
            "lag extension needs more than K={lag_order} rows, got {t}"
        )));
    }
    let n = t - lag_order;
    let width = (lag_order + 1) * d;
    let mut data = Array2::zeros((n, width));
    for r in 0..n {
        for k in 0..=lag_order {
            let src = values.row(r + k);
            let mut dst = data.row_mut(r);
            for i in 0..d {
                dst[k * d + i] = src[i];
            }
        }
    }
    Ok(LagExtendedMatrix {
        data,
        lag_order,
        dim: d,
    })
}

/// Lag-extend a series (see [`lag_extend_matrix`] for the layout).
pub fn lag_extend(series: &MultivariateSeries, lag_order: usize) -> Result<LagExtendedMatrix> {
    lag_extend_matrix(series.values(), lag_order)
}

/// Write a series as CSV: header of variable names, one row per timestamp.
///
/// Values use the shortest representation that round-trips exactly.
pub fn save_csv(series: &MultivariateSeries, path: &Path) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path).map_err(|e| Error::CsvFile { msg: e.to_string() })?;
    wtr.write_record(series.var_names())
        .map_err(|e| Error::CsvFile { msg: e.to_string() })?;
    let mut buf = String::new();
    for row in series.values().rows() {
        let record: Vec<String> = row
            .iter()
            .map(|v| {
                buf.clear();
                write!(buf, "{v}").unwrap();
                buf.clone()
            })
            .collect();
        wtr.write_record(&record)
            .map_err(|e| Error::CsvFile { msg: e.to_string() })?;
    }
    wtr.flush()?;
    Ok(())
}

/// Load a series written by [`save_csv`].
pub fn load_csv(path: &Path) -> Result<MultivariateSeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::CsvFile { msg: e.to_string() })?;

    let headers: Vec<String> = {
        let h = rdr
            .headers()
            .map_err(|e| Error::CsvFile { msg: e.to_string() })?;
        h.iter().map(|s| s.to_string()).collect()
    };
    if headers.is_empty() || headers.iter().all(|h| h.is_empty()) {
        return Err(Error::CsvFile {
            msg: "no header".into(),
        });
    }
    for (i, h) in headers.iter().enumerate() {
        if headers[..i].contains(h) {
            return Err(Error::CsvFile {
                msg: format!("duplicate header '{h}'"),
            });
        }
    }

    let d = headers.len();
    let mut rows: Vec<f64> = Vec::new();
    let mut n = 0usize;
    for (r, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::CsvRow {
            row: r + 2,
            msg: e.to_string(),
        })?;
        if record.len() != d {
            return Err(Error::CsvRow {
                row: r + 2,
                msg: format!("expected {d} fields, got {}", record.len()),
            });
        }
        for (c, field) in record.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| Error::CsvCell {
                row: r + 2,
                col: c + 1,
                msg: format!("not a number: '{field}'"),
            })?;
            rows.push(v);
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::CsvFile {
            msg: "no samples".into(),
        });
    }
    let values = Array2::from_shape_vec((n, d), rows).expect("shape consistent by construction");
    MultivariateSeries::new(values, headers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn two_point_column_normalizes_symmetrically() {
        let w = array![[1.0], [3.0]];
        let (out, stats) = normalize_window(w.view(), None).unwrap();
        // population variance of (1, 3) is 1, so the outputs are -1 and +1
        assert_abs_diff_eq!(out[[0, 0]], -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(out[[1, 0]], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(stats.mean[0], 2.0, epsilon = 1e-15);
        assert!(!stats.floored[0]);
    }

    #[test]
    fn normalized_column_is_unchanged() {
        let w = array![[-1.0, 2.0], [1.0, -2.0]];
        let (out, stats) = normalize_window(w.view(), None).unwrap();
        let (out2, _) = normalize_window(out.view(), None).unwrap();
        assert_abs_diff_eq!(out, out2, epsilon = 1e-12);
        assert_abs_diff_eq!(stats.mean[0], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn constant_column_floors_and_zeroes() {
        let w = array![[5.0, 1.0], [5.0, 3.0], [5.0, 2.0]];
        let (out, stats) = normalize_window(w.view(), None).unwrap();
        assert!(stats.floored[0]);
        assert!(!stats.floored[1]);
        assert_eq!(stats.std[0], STD_FLOOR);
        for r in 0..3 {
            assert_eq!(out[[r, 0]], 0.0);
        }
    }

    #[test]
    fn non_finite_rejected() {
        let w = array![[1.0], [f64::NAN]];
        assert!(normalize_window(w.view(), None).is_err());
    }

    #[test]
    fn window_mean_matches_examples() {
        let w = array![[0.0, 0.0], [2.0, 4.0]];
        let m = window_mean(w.view()).unwrap();
        assert_eq!(m, array![1.0, 2.0]);
        let single = array![[3.0, -1.0, 7.0]];
        assert_eq!(window_mean(single.view()).unwrap(), array![3.0, -1.0, 7.0]);
    }

    #[test]
    fn window_mean_matches_summation_oracle() {
        let mut v = Vec::new();
        let mut x = 0.37f64;
        for _ in 0..500 * 4 {
            x = (x * 997.0 + 0.123).sin();
            v.push(x * 3.0);
        }
        let w = Array2::from_shape_vec((500, 4), v).unwrap();
        let m = window_mean(w.view()).unwrap();
        for j in 0..4 {
            let s: f64 = w.column(j).iter().sum();
            assert_abs_diff_eq!(m[j], s / 500.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn lag_extend_layout() {
        // d=2, K=1, rows (a,b),(c,e),(f,g) -> rows (a,b,c,e),(c,e,f,g)
        let v = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        let ext = lag_extend_matrix(v.view(), 1).unwrap();
        assert_eq!(ext.data, array![[1.0, 2.0, 3.0, 4.0], [3.0, 4.0, 5.0, 6.0]]);
        assert_eq!(ext.instantaneous_col(0), 2);
    }

    #[test]
    fn lag_extend_k0_is_identity() {
        let v = array![[1.0, 2.0], [3.0, 4.0]];
        let ext = lag_extend_matrix(v.view(), 0).unwrap();
        assert_eq!(ext.data, v);
    }

    #[test]
    fn lag_extend_width_for_14_vars_k3() {
        let v = Array2::from_elem((10, 14), 0.5);
        let ext = lag_extend_matrix(v.view(), 3).unwrap();
        assert_eq!(ext.data.ncols(), 56);
        assert_eq!(ext.data.nrows(), 7);
    }

    #[test]
    fn lag_extend_rejects_short_series() {
        let v = Array2::from_elem((3, 2), 1.0);
        let err = lag_extend_matrix(v.view(), 3).unwrap_err();
        assert!(err.to_string().contains("K=3"));
    }

    #[test]
    fn series_validation() {
        assert!(MultivariateSeries::new(
            array![[1.0, 2.0]],
            vec!["a".into(), "a".into()]
        )
        .is_err());
        assert!(MultivariateSeries::new(array![[1.0, f64::INFINITY]], vec!["a".into(), "b".into()]).is_err());
        assert!(MultivariateSeries::new(array![[1.0]], vec!["a".into(), "b".into()]).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let v = array![
            [1.0 / 3.0, -2.5e-17, 1e300],
            [std::f64::consts::PI, 0.1 + 0.2, -0.0]
        ];
        let s = MultivariateSeries::new(v, vec!["a".into(), "b".into(), "c".into()]).unwrap();
        save_csv(&s, &path).unwrap();
        let back = load_csv(&path).unwrap();
        assert_eq!(s.values(), back.values());
        assert_eq!(s.var_names(), back.var_names());
    }

    #[test]
    fn csv_error_cases() {
        let dir = tempfile::tempdir().unwrap();
        let empty = dir.path().join("empty.csv");
        std::fs::write(&empty, "").unwrap();
        assert!(load_csv(&empty).unwrap_err().to_string().contains("no header"));

        let header_only = dir.path().join("h.csv");
        std::fs::write(&header_only, "a,b\n").unwrap();
        assert!(load_csv(&header_only)
            .unwrap_err()
            .to_string()
            .contains("no samples"));

        let ragged = dir.path().join("r.csv");
        std::fs::write(&ragged, "a,b\n1.0,2.0\n3.0\n").unwrap();
        let msg = load_csv(&ragged).unwrap_err().to_string();
        assert!(msg.contains("row 3"), "{msg}");

        let bad_cell = dir.path().join("c.csv");
        std::fs::write(&bad_cell, "a,b\n1.0,zap\n").unwrap();
        let msg = load_csv(&bad_cell).unwrap_err().to_string();
        assert!(msg.contains("row 2") && msg.contains("column 2"), "{msg}");

        let dup = dir.path().join("d.csv");
        std::fs::write(&dup, "a,a\n1.0,2.0\n").unwrap();
        assert!(load_csv(&dup).unwrap_err().to_string().contains("duplicate"));
    }
}
