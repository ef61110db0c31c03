//! Datasets: simulation, ingestion, sampling and feature preprocessing.
//!
//! A [`RiskDataset`] is immutable once built. Every operation that needs
//! randomness takes an explicit seed and is a pure function of its inputs.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::index;
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{Error, ParseErrorKind, Result};
use crate::math::sigmoid;
use crate::seed::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Simulated,
    Ingested,
}

/// Feature matrix, binary labels, optional ground-truth risk and stable row ids.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskDataset {
    features: Array2<f64>,
    labels: Array1<f64>,
    true_risk: Option<Array1<f64>>,
    ids: Vec<u64>,
    provenance: Provenance,
}

impl RiskDataset {
    pub fn new(
        features: Array2<f64>,
        labels: Array1<f64>,
        true_risk: Option<Array1<f64>>,
        ids: Vec<u64>,
        provenance: Provenance,
    ) -> Result<Self> {
        let n = features.nrows();
        if labels.len() != n || ids.len() != n {
            return Err(Error::InvalidDataset(format!(
                "row counts differ: features {n}, labels {}, ids {}",
                labels.len(),
                ids.len()
            )));
        }
        if let Some(i) = labels.iter().position(|&y| y != 0.0 && y != 1.0) {
            return Err(Error::InvalidDataset(format!(
                "label at row {i} is {}, expected 0 or 1",
                labels[i]
            )));
        }
        if let Some(risk) = &true_risk {
            if risk.len() != n {
                return Err(Error::InvalidDataset(format!(
                    "true_risk has {} entries for {n} rows",
                    risk.len()
                )));
            }
            if let Some(i) = risk.iter().position(|&p| !(p > 0.0 && p < 1.0)) {
                return Err(Error::InvalidDataset(format!(
                    "true_risk at row {i} is {}, outside (0,1)",
                    risk[i]
                )));
            }
        }
        let mut seen = HashSet::with_capacity(n);
        if let Some(dup) = ids.iter().find(|id| !seen.insert(**id)) {
            return Err(Error::InvalidDataset(format!("duplicate id {dup}")));
        }
        Ok(Self {
            features,
            labels,
            true_risk,
            ids,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn labels(&self) -> ArrayView1<'_, f64> {
        self.labels.view()
    }

    pub fn true_risk(&self) -> Option<ArrayView1<'_, f64>> {
        self.true_risk.as_ref().map(|r| r.view())
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> RiskDataset {
        RiskDataset {
            features: self.features.select(Axis(0), indices),
            labels: self.labels.select(Axis(0), indices),
            true_risk: self.true_risk.as_ref().map(|r| r.select(Axis(0), indices)),
            ids: indices.iter().map(|&i| self.ids[i]).collect(),
            provenance: self.provenance,
        }
    }

    /// Same rows with a replaced feature matrix.
    pub fn with_features(&self, features: Array2<f64>) -> Result<RiskDataset> {
        if features.nrows() != self.len() {
            return Err(Error::Size(format!(
                "replacement features have {} rows, dataset has {}",
                features.nrows(),
                self.len()
            )));
        }
        Ok(RiskDataset {
            features,
            ..self.clone()
        })
    }

    /// Splits off `n_first` rows chosen uniformly at random; the remainder keeps
    /// its original order.
    pub fn split(&self, n_first: usize, seed: u64) -> Result<(RiskDataset, RiskDataset)> {
        if n_first > self.len() {
            return Err(Error::Size(format!(
                "cannot split {n_first} rows from a dataset of {}",
                self.len()
            )));
        }
        let mut rng = rng_from_seed(seed);
        let mut chosen = index::sample(&mut rng, self.len(), n_first).into_vec();
        chosen.sort_unstable();
        let mut taken = vec![false; self.len()];
        for &i in &chosen {
            taken[i] = true;
        }
        let rest: Vec<usize> = (0..self.len()).filter(|&i| !taken[i]).collect();
        Ok((self.select(&chosen), self.select(&rest)))
    }
}

/// Logistic data-generating process over i.i.d. standard normal features.
#[derive(Debug, Clone, PartialEq)]
pub struct DgpSpec {
    coefficients: Vec<f64>,
    n_signal: usize,
    n_noise: usize,
}

impl DgpSpec {
    /// `coefficients[0]` is the intercept.
    pub fn new(coefficients: Vec<f64>, n_signal: usize, n_noise: usize) -> Result<Self> {
        let dgp = Self {
            coefficients,
            n_signal,
            n_noise,
        };
        dgp.validate()?;
        Ok(dgp)
    }

    /// Infers the signal/noise split from the zero pattern of the slopes.
    pub fn from_coefficients(coefficients: Vec<f64>) -> Result<Self> {
        if coefficients.len() < 2 {
            return Err(Error::config(
                "data.dgp.coefficients",
                "need an intercept and at least one slope",
            ));
        }
        let n_signal = coefficients[1..].iter().filter(|&&b| b != 0.0).count();
        let n_noise = coefficients.len() - 1 - n_signal;
        Self::new(coefficients, n_signal, n_noise)
    }

    /// Five predictors: three signal, two noise. Bayes accuracy is about 0.744
    /// and prevalence about 0.517.
    pub fn simulation_default() -> Self {
        Self::new(vec![0.10, 1.0, -1.0, 0.75, 0.0, 0.0], 3, 2).expect("valid default")
    }

    /// Eight predictors with roughly 7% prevalence; a synthetic stand-in for a
    /// low-prevalence clinical cohort.
    pub fn clinical_standin() -> Self {
        Self::new(vec![-3.35, 1.0, 0.7, 0.5, 0.4, 0.3, 0.2, 0.0, 0.0], 6, 2)
            .expect("valid stand-in")
    }

    pub fn validate(&self) -> Result<()> {
        let key = "data.dgp.coefficients";
        if self.coefficients.iter().any(|b| !b.is_finite()) {
            return Err(Error::config(key, "coefficients must be finite"));
        }
        let d = self.dim();
        if self.coefficients.is_empty() || d != self.n_signal + self.n_noise {
            return Err(Error::config(
                key,
                format!(
                    "{} slopes but n_signal + n_noise = {}",
                    d,
                    self.n_signal + self.n_noise
                ),
            ));
        }
        let nonzero = self.coefficients[1..].iter().filter(|&&b| b != 0.0).count();
        if nonzero != self.n_signal {
            return Err(Error::config(
                key,
                format!(
                    "{nonzero} nonzero slopes, expected n_signal = {}",
                    self.n_signal
                ),
            ));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.coefficients.len().saturating_sub(1)
    }

    pub fn intercept(&self) -> f64 {
        self.coefficients[0]
    }

    pub fn slopes(&self) -> &[f64] {
        &self.coefficients[1..]
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn n_signal(&self) -> usize {
        self.n_signal
    }

    pub fn n_noise(&self) -> usize {
        self.n_noise
    }
}

/// P(Y = 1 | x) under `dgp`.
pub fn true_risk(x: ArrayView1<'_, f64>, dgp: &DgpSpec) -> f64 {
    let eta = dgp.intercept()
        + x.iter()
            .zip(dgp.slopes())
            .map(|(xi, b)| xi * b)
            .sum::<f64>();
    sigmoid(eta)
}

pub fn generate_population(dgp: &DgpSpec, n: usize, seed: u64) -> Result<RiskDataset> {
    dgp.validate()?;
    if n == 0 {
        return Err(Error::Size("population size must be at least 1".into()));
    }
    let d = dgp.dim();
    let mut rng = rng_from_seed(seed);
    let mut features = Array2::<f64>::zeros((n, d));
    let mut risk = Array1::<f64>::zeros(n);
    let mut labels = Array1::<f64>::zeros(n);
    for i in 0..n {
        let mut row = features.row_mut(i);
        for v in row.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let p = true_risk(row.view(), dgp);
        risk[i] = p;
        labels[i] = if rng.random::<f64>() < p { 1.0 } else { 0.0 };
    }
    let ids = (0..n as u64).collect();
    RiskDataset::new(features, labels, Some(risk), ids, Provenance::Simulated)
}

/// `n_train` distinct rows drawn uniformly without replacement.
pub fn subsample(dataset: &RiskDataset, n_train: usize, seed: u64) -> Result<RiskDataset> {
    if n_train > dataset.len() {
        return Err(Error::Size(format!(
            "requested {n_train} training rows from a pool of {}",
            dataset.len()
        )));
    }
    let mut rng = rng_from_seed(seed);
    let rows = index::sample(&mut rng, dataset.len(), n_train).into_vec();
    Ok(dataset.select(&rows))
}

/// Column-wise standardization statistics (sample SD, divisor n - 1).
#[derive(Debug, Clone, PartialEq)]
pub struct Scaler {
    means: Vec<f64>,
    std_devs: Vec<f64>,
}

impl Scaler {
    pub fn from_parts(means: Vec<f64>, std_devs: Vec<f64>) -> Result<Self> {
        if means.len() != std_devs.len() {
            return Err(Error::Shape {
                expected: means.len(),
                actual: std_devs.len(),
            });
        }
        if let Some(column) = std_devs.iter().position(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::DegenerateFeature {
                column,
                name: format!("x{}", column + 1),
            });
        }
        Ok(Self { means, std_devs })
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn std_devs(&self) -> &[f64] {
        &self.std_devs
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn transform(&self, features: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if features.ncols() != self.dim() {
            return Err(Error::Shape {
                expected: self.dim(),
                actual: features.ncols(),
            });
        }
        let mut out = features.to_owned();
        for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            let (m, s) = (self.means[j], self.std_devs[j]);
            col.mapv_inplace(|v| (v - m) / s);
        }
        Ok(out)
    }
}

pub fn fit_scaler(train: &RiskDataset) -> Result<Scaler> {
    let n = train.len();
    if n < 2 {
        return Err(Error::Size(
            "standardization needs at least 2 training rows".into(),
        ));
    }
    let x = train.features();
    let mut means = Vec::with_capacity(train.dim());
    let mut sds = Vec::with_capacity(train.dim());
    for (j, col) in x.axis_iter(Axis(1)).enumerate() {
        let m = col.sum() / n as f64;
        let ss: f64 = col.iter().map(|v| (v - m) * (v - m)).sum();
        let sd = (ss / (n - 1) as f64).sqrt();
        if !(sd > 0.0) {
            return Err(Error::DegenerateFeature {
                column: j,
                name: format!("x{}", j + 1),
            });
        }
        means.push(m);
        sds.push(sd);
    }
    Ok(Scaler {
        means,
        std_devs: sds,
    })
}

pub fn apply_scaler(scaler: &Scaler, dataset: &RiskDataset) -> Result<RiskDataset> {
    dataset.with_features(scaler.transform(dataset.features())?)
}

/// Output width of a degree-2 expansion of `d` inputs.
pub fn poly2_width(d: usize) -> usize {
    d + d * (d + 1) / 2
}

/// Linear terms followed by every degree-2 monomial `x_j x_k` with `j <= k`,
/// in lexicographic order.
pub fn polynomial_expand(features: ArrayView2<'_, f64>, degree: u32) -> Result<Array2<f64>> {
    if degree != 2 {
        return Err(Error::Unsupported(format!(
            "polynomial degree {degree} (only 2 is supported)"
        )));
    }
    let (n, d) = features.dim();
    let mut out = Array2::<f64>::zeros((n, poly2_width(d)));
    for (src, mut dst) in features.outer_iter().zip(out.outer_iter_mut()) {
        let mut c = 0;
        for j in 0..d {
            dst[c] = src[j];
            c += 1;
        }
        for j in 0..d {
            for k in j..d {
                dst[c] = src[j] * src[k];
                c += 1;
            }
        }
    }
    Ok(out)
}

/// Column mapping for [`load_csv`].
#[derive(Debug, Clone, PartialEq)]
pub struct CsvSchema {
    pub feature_columns: Vec<String>,
    pub label_column: String,
    pub id_column: Option<String>,
}

fn parse_err(kind: ParseErrorKind, row: usize, column: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        kind,
        row,
        column: column.to_string(),
        message: message.into(),
    }
}

fn header_index(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| {
            parse_err(
                ParseErrorKind::MissingColumn,
                0,
                name,
                "column not found in header",
            )
        })
}

fn open_csv(path: &Path) -> Result<csv::Reader<BufReader<File>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(BufReader::new(file)))
}

fn read_headers(reader: &mut csv::Reader<BufReader<File>>) -> Result<csv::StringRecord> {
    let headers = reader
        .headers()
        .map_err(|e| parse_err(ParseErrorKind::Malformed, 0, "", e.to_string()))?
        .clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].trim().is_empty()) {
        return Err(parse_err(ParseErrorKind::EmptyFile, 0, "", "no header row"));
    }
    Ok(headers)
}

fn parse_number(cell: &str, row: usize, column: &str) -> Result<f64> {
    let v: f64 = cell.trim().parse().map_err(|_| {
        parse_err(
            ParseErrorKind::NonNumeric,
            row,
            column,
            format!("`{cell}` is not a number"),
        )
    })?;
    if !v.is_finite() {
        return Err(parse_err(
            ParseErrorKind::NonNumeric,
            row,
            column,
            format!("`{cell}` is not finite"),
        ));
    }
    Ok(v)
}

fn parse_label(cell: &str, row: usize, column: &str) -> Result<f64> {
    match cell.trim().parse::<f64>() {
        Ok(v) if v == 0.0 || v == 1.0 => Ok(v),
        _ => Err(parse_err(
            ParseErrorKind::NonBinaryLabel,
            row,
            column,
            format!("`{cell}` is not 0 or 1"),
        )),
    }
}

fn parse_id(cell: &str, row: usize, column: &str) -> Result<u64> {
    cell.trim().parse().map_err(|_| {
        parse_err(
            ParseErrorKind::NonNumeric,
            row,
            column,
            format!("`{cell}` is not a non-negative integer id"),
        )
    })
}

/// Reads an external table. Rows are numbered from 1 (the header is row 0).
/// Ids come from `schema.id_column` when given, otherwise the 0-based row index.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<RiskDataset> {
    let path = path.as_ref();
    let mut reader = open_csv(path)?;
    let headers = read_headers(&mut reader)?;
    if schema.feature_columns.is_empty() {
        return Err(Error::config(
            "data.feature_columns",
            "no feature columns declared",
        ));
    }
    let feature_idx = schema
        .feature_columns
        .iter()
        .map(|c| header_index(&headers, c))
        .collect::<Result<Vec<_>>>()?;
    let label_idx = header_index(&headers, &schema.label_column)?;
    let id_idx = schema
        .id_column
        .as_ref()
        .map(|c| header_index(&headers, c))
        .transpose()?;

    let d = feature_idx.len();
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut ids = Vec::new();
    let mut seen = HashSet::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record =
            record.map_err(|e| parse_err(ParseErrorKind::Malformed, row, "", e.to_string()))?;
        for (&c, name) in feature_idx.iter().zip(&schema.feature_columns) {
            let cell = record
                .get(c)
                .ok_or_else(|| parse_err(ParseErrorKind::Malformed, row, name, "missing cell"))?;
            values.push(parse_number(cell, row, name)?);
        }
        let cell = record.get(label_idx).ok_or_else(|| {
            parse_err(
                ParseErrorKind::Malformed,
                row,
                &schema.label_column,
                "missing cell",
            )
        })?;
        labels.push(parse_label(cell, row, &schema.label_column)?);
        let id = match (id_idx, &schema.id_column) {
            (Some(c), Some(name)) => {
                let cell = record.get(c).ok_or_else(|| {
                    parse_err(ParseErrorKind::Malformed, row, name, "missing cell")
                })?;
                parse_id(cell, row, name)?
            }
            _ => i as u64,
        };
        if !seen.insert(id) {
            let column = schema.id_column.as_deref().unwrap_or("");
            return Err(parse_err(
                ParseErrorKind::DuplicateId,
                row,
                column,
                format!("id {id} appears more than once"),
            ));
        }
        ids.push(id);
    }
    if labels.is_empty() {
        return Err(parse_err(ParseErrorKind::EmptyFile, 1, "", "no data rows"));
    }
    let n = labels.len();
    let features = Array2::from_shape_vec((n, d), values).expect("row-major buffer");
    RiskDataset::new(
        features,
        Array1::from(labels),
        None,
        ids,
        Provenance::Ingested,
    )
}

/// Writes the toolkit's own dataset layout: `id,x1..xd,y[,true_risk]`.
/// Floats use shortest round-trip formatting.
pub fn write_dataset_csv(dataset: &RiskDataset, out: &mut impl Write) -> std::io::Result<()> {
    let d = dataset.dim();
    let mut header = String::from("id");
    for j in 1..=d {
        header.push_str(&format!(",x{j}"));
    }
    header.push_str(",y");
    if dataset.true_risk.is_some() {
        header.push_str(",true_risk");
    }
    writeln!(out, "{header}")?;
    for i in 0..dataset.len() {
        let mut line = dataset.ids[i].to_string();
        for v in dataset.features.row(i) {
            line.push(',');
            line.push_str(&v.to_string());
        }
        line.push(',');
        line.push_str(if dataset.labels[i] == 1.0 { "1" } else { "0" });
        if let Some(risk) = &dataset.true_risk {
            line.push(',');
            line.push_str(&risk[i].to_string());
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Reads a file produced by [`write_dataset_csv`]. A `true_risk` column marks
/// the data as simulated.
pub fn read_dataset_csv(path: impl AsRef<Path>) -> Result<RiskDataset> {
    let path = path.as_ref();
    let mut reader = open_csv(path)?;
    let headers = read_headers(&mut reader)?;
    let has_risk = headers.iter().any(|h| h == "true_risk");
    let feature_columns: Vec<String> = headers
        .iter()
        .filter(|h| h.starts_with('x'))
        .map(str::to_string)
        .collect();
    let schema = CsvSchema {
        feature_columns,
        label_column: "y".into(),
        id_column: Some("id".into()),
    };
    let base = load_csv(path, &schema)?;
    if !has_risk {
        return Ok(base);
    }
    let risk_idx = header_index(&headers, "true_risk")?;
    let mut risk = Vec::with_capacity(base.len());
    for (i, record) in reader.records().enumerate() {
        let record = record
            .map_err(|e| parse_err(ParseErrorKind::Malformed, i + 1, "true_risk", e.to_string()))?;
        let cell = record.get(risk_idx).unwrap_or("");
        risk.push(parse_number(cell, i + 1, "true_risk")?);
    }
    RiskDataset::new(
        base.features,
        base.labels,
        Some(Array1::from(risk)),
        base.ids,
        Provenance::Simulated,
    )
}
