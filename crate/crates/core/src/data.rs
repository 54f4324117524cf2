//! Multi-view datasets: ingestion, validation, standardization and
//! categorical encoding.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SidaError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewRole {
    Penalized,
    Covariate,
}

/// Per-variable location and scale captured at standardization time.
/// `sd == 0.0` marks a constant column that was only centered.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: f64,
    pub sd: f64,
}

/// A numeric matrix read from disk together with its header.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedMatrix {
    pub names: Vec<String>,
    pub data: Array2<f64>,
}

/// `D` sample-aligned views with class labels in `1..=K`.
#[derive(Debug, Clone)]
pub struct MultiViewDataset {
    views: Vec<Array2<f64>>,
    labels: Vec<usize>,
    roles: Vec<ViewRole>,
    names: Vec<Vec<String>>,
    n_classes: usize,
    stats: Option<Vec<Vec<ColumnStats>>>,
}

impl MultiViewDataset {
    /// Builds and validates a dataset. Labels are 1-based; `K` is the largest label
    /// and every class in `1..=K` must occur.
    pub fn new(views: Vec<Array2<f64>>, labels: Vec<usize>, roles: Vec<ViewRole>) -> Result<Self> {
        let n_classes = labels.iter().copied().max().unwrap_or(0);
        let ds = Self::with_classes(views, labels, roles, n_classes)?;
        if ds.n_classes < 2 {
            return Err(SidaError::Validation(format!(
                "need at least two classes, found {}",
                ds.n_classes
            )));
        }
        let counts = ds.class_counts();
        if let Some(k) = counts.iter().position(|&c| c == 0) {
            return Err(SidaError::EmptyClass(k + 1));
        }
        Ok(ds)
    }

    /// Like [`MultiViewDataset::new`] with an explicit class count, without
    /// requiring every class to be present (used for test splits).
    pub fn with_classes(
        views: Vec<Array2<f64>>,
        labels: Vec<usize>,
        roles: Vec<ViewRole>,
        n_classes: usize,
    ) -> Result<Self> {
        if views.is_empty() {
            return Err(SidaError::Validation("no views supplied".into()));
        }
        if roles.len() != views.len() {
            return Err(SidaError::Validation(format!(
                "{} views but {} roles",
                views.len(),
                roles.len()
            )));
        }
        let n = labels.len();
        for (d, v) in views.iter().enumerate() {
            if v.nrows() != n {
                return Err(SidaError::Dimension(format!(
                    "view {} has {} rows, labels have {}",
                    d + 1,
                    v.nrows(),
                    n
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(SidaError::Validation(format!(
                    "view {} contains non-finite values",
                    d + 1
                )));
            }
        }
        if let Some(&bad) = labels.iter().find(|&&l| l == 0 || l > n_classes) {
            return Err(SidaError::Validation(format!(
                "label {bad} outside 1..={n_classes}"
            )));
        }
        let covariates = roles.iter().filter(|r| **r == ViewRole::Covariate).count();
        if covariates > 1 {
            return Err(SidaError::Validation(
                "at most one covariate view is allowed".into(),
            ));
        }
        if covariates == 1 && roles.last() != Some(&ViewRole::Covariate) {
            return Err(SidaError::Validation(
                "the covariate view must be the last view".into(),
            ));
        }
        let names = views
            .iter()
            .map(|v| (1..=v.ncols()).map(|j| format!("V{j}")).collect())
            .collect();
        Ok(Self {
            views,
            labels,
            roles,
            names,
            n_classes,
            stats: None,
        })
    }

    pub fn with_names(mut self, names: Vec<Vec<String>>) -> Result<Self> {
        if names.len() != self.views.len()
            || names.iter().zip(&self.views).any(|(n, v)| n.len() != v.ncols())
        {
            return Err(SidaError::Dimension(
                "variable names do not match view widths".into(),
            ));
        }
        self.names = names;
        Ok(self)
    }

    pub fn views(&self) -> &[Array2<f64>] {
        &self.views
    }

    pub fn view(&self, d: usize) -> ArrayView2<'_, f64> {
        self.views[d].view()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn roles(&self) -> &[ViewRole] {
        &self.roles
    }

    pub fn names(&self) -> &[Vec<String>] {
        &self.names
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn n_views(&self) -> usize {
        self.views.len()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn dims(&self) -> Vec<usize> {
        self.views.iter().map(|v| v.ncols()).collect()
    }

    pub fn is_standardized(&self) -> bool {
        self.stats.is_some()
    }

    pub fn stats(&self) -> Option<&[Vec<ColumnStats>]> {
        self.stats.as_deref()
    }

    /// Number of samples in each class, indexed `0..K`.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &l in &self.labels {
            counts[l - 1] += 1;
        }
        counts
    }

    /// Row subset in the given order. Standardization statistics are carried over
    /// unchanged.
    pub fn subset(&self, rows: &[usize]) -> Self {
        Self {
            views: self.views.iter().map(|v| v.select(Axis(0), rows)).collect(),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            roles: self.roles.clone(),
            names: self.names.clone(),
            n_classes: self.n_classes,
            stats: self.stats.clone(),
        }
    }

    /// Centers every column and scales it to unit sample standard deviation
    /// (denominator `n - 1`). Constant columns are only centered and get the
    /// `sd = 0` sentinel. Already-standardized input is returned unchanged.
    pub fn standardize(&self) -> Self {
        if self.stats.is_some() {
            log::debug!("dataset already standardized; leaving it unchanged");
            return self.clone();
        }
        let mut views = Vec::with_capacity(self.views.len());
        let mut stats = Vec::with_capacity(self.views.len());
        for (d, v) in self.views.iter().enumerate() {
            let (z, s) = standardize_matrix(v.view());
            let constant = s.iter().filter(|c| c.sd == 0.0).count();
            if constant > 0 {
                log::warn!(
                    "view {}: {} constant column(s) centered but not scaled",
                    d + 1,
                    constant
                );
            }
            views.push(z);
            stats.push(s);
        }
        Self {
            views,
            labels: self.labels.clone(),
            roles: self.roles.clone(),
            names: self.names.clone(),
            n_classes: self.n_classes,
            stats: Some(stats),
        }
    }

    /// Applies previously captured statistics (typically from a training set).
    pub fn standardize_with(&self, stats: &[Vec<ColumnStats>]) -> Result<Self> {
        if stats.len() != self.views.len() {
            return Err(SidaError::Dimension(format!(
                "{} views but statistics for {}",
                self.views.len(),
                stats.len()
            )));
        }
        let views = self
            .views
            .iter()
            .zip(stats)
            .map(|(v, s)| apply_stats(v.view(), s))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            views,
            labels: self.labels.clone(),
            roles: self.roles.clone(),
            names: self.names.clone(),
            n_classes: self.n_classes,
            stats: Some(stats.to_vec()),
        })
    }
}

/// Column standardization with denominator `n - 1`. A column whose sample
/// standard deviation is zero (or `n < 2`) is centered and flagged with `sd = 0`.
pub fn standardize_matrix(x: ArrayView2<f64>) -> (Array2<f64>, Vec<ColumnStats>) {
    let n = x.nrows();
    let mut out = x.to_owned();
    let mut stats = Vec::with_capacity(x.ncols());
    for mut col in out.axis_iter_mut(Axis(1)) {
        let mean = if n == 0 { 0.0 } else { col.sum() / n as f64 };
        col.mapv_inplace(|v| v - mean);
        let ss: f64 = col.iter().map(|v| v * v).sum();
        let sd = if n > 1 { (ss / (n - 1) as f64).sqrt() } else { 0.0 };
        // Relative test so that float noise in a constant column is not scaled up.
        let scale = mean.abs().max(1.0);
        let sd = if sd <= 1e-12 * scale { 0.0 } else { sd };
        if sd > 0.0 {
            col.mapv_inplace(|v| v / sd);
        } else {
            col.fill(0.0);
        }
        stats.push(ColumnStats { mean, sd });
    }
    (out, stats)
}

pub fn apply_stats(x: ArrayView2<f64>, stats: &[ColumnStats]) -> Result<Array2<f64>> {
    if x.ncols() != stats.len() {
        return Err(SidaError::Dimension(format!(
            "matrix has {} columns, statistics describe {}",
            x.ncols(),
            stats.len()
        )));
    }
    let mut out = x.to_owned();
    for (mut col, s) in out.axis_iter_mut(Axis(1)).zip(stats) {
        if s.sd > 0.0 {
            col.mapv_inplace(|v| (v - s.mean) / s.sd);
        } else {
            col.mapv_inplace(|v| v - s.mean);
        }
    }
    Ok(out)
}

/// Indicator coding of a categorical variable: one 0/1 column per level after the
/// first (the reference level).
pub fn encode_categorical<S: AsRef<str>, L: AsRef<str>>(
    values: &[S],
    levels: &[L],
) -> Result<Array2<f64>> {
    if levels.len() < 2 {
        return Err(SidaError::Validation(
            "a categorical variable needs at least two levels".into(),
        ));
    }
    let mut out = Array2::zeros((values.len(), levels.len() - 1));
    for (i, v) in values.iter().enumerate() {
        let v = v.as_ref();
        let idx = levels
            .iter()
            .position(|l| l.as_ref() == v)
            .ok_or_else(|| SidaError::UnseenLevel(v.to_string()))?;
        if idx > 0 {
            out[[i, idx - 1]] = 1.0;
        }
    }
    Ok(out)
}

fn parse_number(cell: &str, line: usize, column: usize) -> Result<f64> {
    let t = cell.trim();
    match t.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(SidaError::NonNumeric {
            line,
            column,
            value: t.to_string(),
        }),
    }
}

/// Parses a comma-separated view: one header row of variable names followed by
/// numeric rows. Line numbers in errors are 1-based and count the header.
pub fn parse_view_csv(text: &str) -> Result<NamedMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut records = reader.records();
    let header = match records.next() {
        Some(r) => r.map_err(|e| csv_error(e, 1))?,
        None => {
            return Err(SidaError::Parse {
                line: 1,
                message: "empty file, expected a header row".into(),
            })
        }
    };
    let names: Vec<String> = header.iter().map(str::to_string).collect();
    let p = names.len();
    if p == 0 || (p == 1 && names[0].is_empty()) {
        return Err(SidaError::Parse {
            line: 1,
            message: "header has no columns".into(),
        });
    }
    let mut values = Vec::new();
    let mut n = 0;
    for rec in records {
        let rec = rec.map_err(|e| csv_error(e, n + 2))?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(n + 2);
        if rec.len() == 1 && rec.get(0) == Some("") {
            continue;
        }
        if rec.len() != p {
            return Err(SidaError::Parse {
                line,
                message: format!("expected {} fields, found {}", p, rec.len()),
            });
        }
        for (j, cell) in rec.iter().enumerate() {
            values.push(parse_number(cell, line, j + 1)?);
        }
        n += 1;
    }
    let data = Array2::from_shape_vec((n, p), values).expect("row lengths checked");
    Ok(NamedMatrix { names, data })
}

fn csv_error(e: csv::Error, line: usize) -> SidaError {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(line);
    SidaError::Parse {
        line,
        message: e.to_string(),
    }
}

pub fn load_view_csv(path: impl AsRef<Path>) -> Result<NamedMatrix> {
    let text = std::fs::read_to_string(path)?;
    parse_view_csv(&text)
}

/// Parses a labels file: a single column of 1-based integer class labels, with an
/// optional non-numeric header line.
pub fn parse_labels(text: &str) -> Result<Vec<usize>> {
    let mut labels = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let t = raw.trim();
        if t.is_empty() {
            continue;
        }
        if t.contains(',') {
            return Err(SidaError::Parse {
                line,
                message: "labels file must have a single column".into(),
            });
        }
        match t.parse::<i64>() {
            Ok(v) if v >= 1 => labels.push(v as usize),
            Ok(v) => {
                return Err(SidaError::Parse {
                    line,
                    message: format!("class labels are 1-based, found {v}"),
                })
            }
            Err(_) if labels.is_empty() && line == 1 => continue,
            Err(_) => {
                return Err(SidaError::NonNumeric {
                    line,
                    column: 1,
                    value: t.to_string(),
                })
            }
        }
    }
    Ok(labels)
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let text = std::fs::read_to_string(path)?;
    parse_labels(&text)
}

/// Shortest decimal form that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

pub fn write_matrix_csv(names: &[String], x: ArrayView2<f64>) -> String {
    let mut out = names.join(",");
    out.push('\n');
    for row in x.axis_iter(Axis(0)) {
        let mut first = true;
        for v in row.iter() {
            if !first {
                out.push(',');
            }
            first = false;
            let _ = write!(out, "{}", fmt_f64(*v));
        }
        out.push('\n');
    }
    out
}

pub fn write_labels_csv(labels: &[usize]) -> String {
    let mut out = String::from("label\n");
    for l in labels {
        let _ = writeln!(out, "{l}");
    }
    out
}
