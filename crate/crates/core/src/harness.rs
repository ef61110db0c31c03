//! Repeated instantiation of a learning pipeline.
//!
//! A run is one pass of subsample → standardize → fit → predict on the fixed
//! test set. `run_experiment` performs `B` runs under one of the variability
//! modes and assembles an `n_test x B` [`PredictionMatrix`]. Run `b` derives
//! all of its randomness from `(master_seed, b)`, so the matrix does not depend
//! on how runs are scheduled across threads.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1, Axis};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::data::{
    apply_scaler, fit_scaler, generate_population, load_csv, subsample, CsvSchema, DgpSpec,
    RiskDataset,
};
use crate::error::{Error, ParseErrorKind, Result};
use crate::math::mean_bce;
use crate::metrics::decision;
use crate::models::{FittedModel, ModelSpec, Preset};
use crate::optim::{fit, LbfgsOptions, SgdOptions};
use crate::seed::{derive_seed, SeedPurpose};

/// Which source of variability differs between runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// A fresh training subsample per run; optimizer seeds fixed at run 0's.
    ResampleTrain,
    /// One training subsample (run 0's); optimizer seeds vary per run.
    FixedTrainVarySeed,
    /// Both vary. Not one of the two isolated channels.
    ResampleAndVarySeed,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::ResampleTrain => "resample_train",
            Mode::FixedTrainVarySeed => "fixed_train_vary_seed",
            Mode::ResampleAndVarySeed => "resample_and_vary_seed",
        }
    }

    fn sampling_run(self, b: usize) -> usize {
        match self {
            Mode::FixedTrainVarySeed => 0,
            _ => b,
        }
    }

    fn optimizer_run(self, b: usize) -> usize {
        match self {
            Mode::ResampleTrain => 0,
            _ => b,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "resample_train" => Ok(Mode::ResampleTrain),
            "fixed_train_vary_seed" => Ok(Mode::FixedTrainVarySeed),
            "resample_and_vary_seed" => Ok(Mode::ResampleAndVarySeed),
            other => Err(Error::config(
                "harness.mode",
                format!(
                    "unknown mode `{other}` (expected resample_train, fixed_train_vary_seed or resample_and_vary_seed)"
                ),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Simulate {
        dgp: DgpSpec,
        population_size: usize,
    },
    Csv {
        path: std::path::PathBuf,
        schema: CsvSchema,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub preset: Preset,
    pub spec: ModelSpec,
    pub runs: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub master_seed: u64,
    pub tau: f64,
    pub epsilon: f64,
    pub standardize: bool,
    pub data_source: DataSource,
    pub lbfgs: LbfgsOptions,
    pub sgd: SgdOptions,
}

impl ExperimentConfig {
    /// Simulation defaults: 100 runs, 500 training rows, 10,000 test rows,
    /// tau = 0.53, epsilon = 0.02.
    pub fn simulation(preset: Preset, mode: Mode, master_seed: u64) -> Self {
        Self {
            mode,
            preset,
            spec: preset.spec(),
            runs: 100,
            n_train: 500,
            n_test: 10_000,
            master_seed,
            tau: 0.53,
            epsilon: 0.02,
            standardize: true,
            data_source: DataSource::Simulate {
                dgp: DgpSpec::simulation_default(),
                population_size: 100_000,
            },
            lbfgs: LbfgsOptions::default(),
            sgd: SgdOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs < 2 {
            return Err(Error::config("harness.runs", "need at least 2 runs"));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::config(
                "metrics.tau",
                "must lie strictly between 0 and 1",
            ));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::config("harness.epsilon", "must be >= 0"));
        }
        if self.n_train < 2 {
            return Err(Error::config(
                "harness.n_train",
                "need at least 2 training rows",
            ));
        }
        if self.n_test < 1 {
            return Err(Error::config("harness.n_test", "need at least 1 test row"));
        }
        if let DataSource::Simulate {
            dgp,
            population_size,
        } = &self.data_source
        {
            dgp.validate()?;
            if *population_size < self.n_train {
                return Err(Error::config(
                    "data.population_size",
                    format!(
                        "population of {population_size} cannot supply n_train = {}",
                        self.n_train
                    ),
                ));
            }
        }
        self.spec.validate()?;
        self.lbfgs.validate()?;
        self.sgd.validate(self.n_train)?;
        Ok(())
    }
}

/// Per-run bookkeeping stored next to the prediction matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMeta {
    pub run_index: usize,
    /// Initialization seed handed to the optimizer.
    pub seed: u64,
    /// Order-sensitive hash of the training row ids.
    pub train_fingerprint: String,
    pub test_bce: f64,
    pub test_accuracy: f64,
    pub converged: bool,
}

/// `n_test x B` predicted risks; column `b` belongs to `run_meta[b]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMatrix {
    values: Array2<f64>,
    test_ids: Vec<u64>,
    run_meta: Vec<RunMeta>,
}

impl PredictionMatrix {
    pub fn new(values: Array2<f64>, test_ids: Vec<u64>, run_meta: Vec<RunMeta>) -> Result<Self> {
        if values.nrows() != test_ids.len() {
            return Err(Error::Join(format!(
                "{} prediction rows for {} test ids",
                values.nrows(),
                test_ids.len()
            )));
        }
        if values.ncols() != run_meta.len() {
            return Err(Error::Join(format!(
                "{} prediction columns for {} run records",
                values.ncols(),
                run_meta.len()
            )));
        }
        if let Some(((i, b), v)) = values.indexed_iter().find(|(_, &v)| !(v > 0.0 && v < 1.0)) {
            return Err(Error::InvalidDataset(format!(
                "prediction {v} at row {i}, run {b} lies outside (0,1)"
            )));
        }
        Ok(Self {
            values,
            test_ids,
            run_meta,
        })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.values.row(i)
    }

    pub fn column(&self, b: usize) -> ArrayView1<'_, f64> {
        self.values.column(b)
    }

    pub fn test_ids(&self) -> &[u64] {
        &self.test_ids
    }

    pub fn run_meta(&self) -> &[RunMeta] {
        &self.run_meta
    }

    pub fn n_test(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_runs(&self) -> usize {
        self.values.ncols()
    }

    /// Keeps the listed columns, in the given order.
    pub fn select_runs(&self, columns: &[usize]) -> PredictionMatrix {
        PredictionMatrix {
            values: self.values.select(Axis(1), columns),
            test_ids: self.test_ids.clone(),
            run_meta: columns.iter().map(|&b| self.run_meta[b].clone()).collect(),
        }
    }

    /// Largest absolute difference between any two columns.
    pub fn max_column_spread(&self) -> f64 {
        self.values
            .outer_iter()
            .map(|row| {
                let (lo, hi) = row
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                        (lo.min(v), hi.max(v))
                    });
                hi - lo
            })
            .fold(0.0, f64::max)
    }

    /// Header `id,run_000,...`; floats in shortest round-trip form.
    pub fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        let mut header = String::from("id");
        for m in &self.run_meta {
            header.push_str(&format!(",run_{:03}", m.run_index));
        }
        writeln!(out, "{header}")?;
        for (id, row) in self.test_ids.iter().zip(self.values.outer_iter()) {
            let mut line = id.to_string();
            for v in row {
                line.push(',');
                line.push_str(&v.to_string());
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn write_meta_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "run_index,seed,fingerprint,bce,accuracy,converged")?;
        for m in &self.run_meta {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                m.run_index, m.seed, m.train_fingerprint, m.test_bce, m.test_accuracy, m.converged
            )?;
        }
        Ok(())
    }

    pub fn read_csv(matrix_path: &Path, meta_path: &Path) -> Result<PredictionMatrix> {
        let meta = read_meta(meta_path)?;
        let mut reader =
            csv::Reader::from_path(matrix_path).map_err(|e| csv_err(matrix_path, e))?;
        let headers = reader
            .headers()
            .map_err(|e| csv_err(matrix_path, e))?
            .clone();
        if headers.get(0) != Some("id") {
            return Err(parse(
                ParseErrorKind::MissingColumn,
                0,
                "id",
                "first column must be `id`",
            ));
        }
        let runs = headers.len() - 1;
        if runs != meta.len() {
            return Err(Error::Join(format!(
                "matrix has {runs} run columns but run metadata lists {} runs",
                meta.len()
            )));
        }
        for (c, m) in headers.iter().skip(1).zip(&meta) {
            if c != format!("run_{:03}", m.run_index) {
                return Err(Error::Join(format!(
                    "matrix column `{c}` does not match run_index {} in the metadata",
                    m.run_index
                )));
            }
        }
        let mut ids = Vec::new();
        let mut values = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let row = i + 1;
            let record =
                record.map_err(|e| parse(ParseErrorKind::Malformed, row, "", &e.to_string()))?;
            if record.len() != runs + 1 {
                return Err(parse(
                    ParseErrorKind::Malformed,
                    row,
                    "",
                    "wrong number of fields",
                ));
            }
            ids.push(
                record[0]
                    .parse::<u64>()
                    .map_err(|_| parse(ParseErrorKind::NonNumeric, row, "id", "bad id"))?,
            );
            for (c, cell) in record.iter().enumerate().skip(1) {
                values.push(cell.parse::<f64>().map_err(|_| {
                    parse(
                        ParseErrorKind::NonNumeric,
                        row,
                        &headers[c],
                        "bad prediction",
                    )
                })?);
            }
        }
        let values = Array2::from_shape_vec((ids.len(), runs), values).expect("row-major buffer");
        PredictionMatrix::new(values, ids, meta)
    }
}

fn parse(kind: ParseErrorKind, row: usize, column: &str, message: &str) -> Error {
    Error::Parse {
        kind,
        row,
        column: column.to_string(),
        message: message.to_string(),
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => parse(ParseErrorKind::Malformed, 0, "", &format!("{other:?}")),
    }
}

fn read_meta(path: &Path) -> Result<Vec<RunMeta>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let r = record.map_err(|e| parse(ParseErrorKind::Malformed, row, "", &e.to_string()))?;
        if r.len() != 6 {
            return Err(parse(
                ParseErrorKind::Malformed,
                row,
                "",
                "expected 6 fields",
            ));
        }
        let num = |c: usize, name: &str| -> Result<f64> {
            r[c].parse()
                .map_err(|_| parse(ParseErrorKind::NonNumeric, row, name, "bad number"))
        };
        out.push(RunMeta {
            run_index: r[0]
                .parse()
                .map_err(|_| parse(ParseErrorKind::NonNumeric, row, "run_index", "bad index"))?,
            seed: r[1]
                .parse()
                .map_err(|_| parse(ParseErrorKind::NonNumeric, row, "seed", "bad seed"))?,
            train_fingerprint: r[2].to_string(),
            test_bce: num(3, "bce")?,
            test_accuracy: num(4, "accuracy")?,
            converged: r[5].parse().map_err(|_| {
                parse(
                    ParseErrorKind::Malformed,
                    row,
                    "converged",
                    "expected true/false",
                )
            })?,
        });
    }
    Ok(out)
}

/// Order-sensitive hash of a row-id sequence (first 16 hex digits of SHA-256).
pub fn fingerprint(ids: &[u64]) -> String {
    let mut hasher = Sha256::new();
    for id in ids {
        hasher.update(id.to_le_bytes());
    }
    hasher.finalize()[..8]
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// The training pool and the fixed test set an experiment draws from.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub pool: RiskDataset,
    pub test: RiskDataset,
}

/// Simulated data: the population and the test set come from reserved seeds
/// that depend only on the master seed. Ingested data: `n_test` rows are held
/// out with a reserved seed and the rest form the pool.
pub fn prepare_data(config: &ExperimentConfig) -> Result<ExperimentData> {
    let test_seed = derive_seed(config.master_seed, 0, SeedPurpose::TestSet);
    match &config.data_source {
        DataSource::Simulate {
            dgp,
            population_size,
        } => Ok(ExperimentData {
            pool: generate_population(
                dgp,
                *population_size,
                derive_seed(config.master_seed, 0, SeedPurpose::Population),
            )?,
            test: generate_population(dgp, config.n_test, test_seed)?,
        }),
        DataSource::Csv { path, schema } => {
            let all = load_csv(path, schema)?;
            if config.n_test + config.n_train > all.len() {
                return Err(Error::Size(format!(
                    "{} rows cannot supply n_test = {} plus n_train = {}",
                    all.len(),
                    config.n_test,
                    config.n_train
                )));
            }
            let (test, pool) = all.split(config.n_test, test_seed)?;
            Ok(ExperimentData { pool, test })
        }
    }
}

struct RunOutput {
    predictions: Vec<f64>,
    meta: RunMeta,
    model: FittedModel,
}

fn run_once(config: &ExperimentConfig, data: &ExperimentData, b: usize) -> Result<RunOutput> {
    let master = config.master_seed;
    let sampling_seed = derive_seed(master, config.mode.sampling_run(b), SeedPurpose::Sampling);
    let opt_run = config.mode.optimizer_run(b);
    let init_seed = derive_seed(master, opt_run, SeedPurpose::Init);
    let batch_seed = derive_seed(master, opt_run, SeedPurpose::Batching);

    let train = subsample(&data.pool, config.n_train, sampling_seed)?;
    let (train_input, scaler) = if config.standardize {
        let scaler = fit_scaler(&train)?;
        (apply_scaler(&scaler, &train)?, Some(scaler))
    } else {
        (train.clone(), None)
    };
    let outcome = fit(
        &config.spec,
        &train_input,
        &config.lbfgs,
        &config.sgd,
        init_seed,
        batch_seed,
    )
    .map_err(|e| match e {
        Error::Diverged { epoch, .. } => Error::Diverged {
            epoch,
            run: Some(b),
        },
        other => other,
    })?;
    let model = outcome.model.with_scaler(scaler)?;
    let predictions = model.predict(data.test.features())?;
    let labels = data.test.labels();
    let test_bce = mean_bce(predictions.iter().copied(), labels.iter().copied());
    let correct = predictions
        .iter()
        .zip(labels)
        .filter(|(&p, &y)| f64::from(decision(p, config.tau)) == y)
        .count();
    Ok(RunOutput {
        predictions: predictions.to_vec(),
        meta: RunMeta {
            run_index: b,
            seed: init_seed,
            train_fingerprint: fingerprint(train.ids()),
            test_bce,
            test_accuracy: correct as f64 / labels.len() as f64,
            converged: outcome.converged,
        },
        model,
    })
}

/// Runs execute on the rayon pool; columns are merged by run index.
pub fn run_experiment(
    config: &ExperimentConfig,
    data: &ExperimentData,
) -> Result<PredictionMatrix> {
    run_experiment_archived(config, data).map(|(m, _)| m)
}

/// Like [`run_experiment`], also returning the fitted models in run order.
pub fn run_experiment_archived(
    config: &ExperimentConfig,
    data: &ExperimentData,
) -> Result<(PredictionMatrix, Vec<FittedModel>)> {
    config.validate()?;
    if data.pool.len() < config.n_train {
        return Err(Error::Size(format!(
            "training pool has {} rows, n_train = {}",
            data.pool.len(),
            config.n_train
        )));
    }
    let outputs: Vec<RunOutput> = (0..config.runs)
        .into_par_iter()
        .map(|b| run_once(config, data, b))
        .collect::<Result<_>>()?;
    assemble(data.test.ids().to_vec(), outputs)
}

/// Sequential reference path; must agree bit for bit with the parallel one.
pub fn run_experiment_sequential(
    config: &ExperimentConfig,
    data: &ExperimentData,
) -> Result<PredictionMatrix> {
    config.validate()?;
    let outputs = (0..config.runs)
        .map(|b| run_once(config, data, b))
        .collect::<Result<Vec<_>>>()?;
    assemble(data.test.ids().to_vec(), outputs).map(|(m, _)| m)
}

fn assemble(
    test_ids: Vec<u64>,
    outputs: Vec<RunOutput>,
) -> Result<(PredictionMatrix, Vec<FittedModel>)> {
    let n = test_ids.len();
    let mut values = Array2::<f64>::zeros((n, outputs.len()));
    let mut meta = Vec::with_capacity(outputs.len());
    let mut models = Vec::with_capacity(outputs.len());
    for (b, out) in outputs.into_iter().enumerate() {
        debug_assert_eq!(out.meta.run_index, b);
        values
            .column_mut(b)
            .assign(&ndarray::ArrayView1::from(&out.predictions));
        meta.push(out.meta);
        models.push(out.model);
    }
    Ok((PredictionMatrix::new(values, test_ids, meta)?, models))
}

/// Result of restricting a matrix to its competitive runs.
#[derive(Debug, Clone)]
pub struct CompetitiveSelection {
    pub matrix: PredictionMatrix,
    /// Column positions (in the input matrix) that were kept.
    pub retained: Vec<usize>,
    pub dropped: Vec<usize>,
}

impl CompetitiveSelection {
    /// Fewer than two runs leave ePIW/eDFR undefined.
    pub fn is_degenerate(&self) -> bool {
        self.retained.len() < 2
    }
}

/// Keeps runs whose test BCE is within `epsilon` of the best run.
/// `epsilon = inf` keeps every run; the best run always survives.
pub fn competitive_filter(matrix: &PredictionMatrix, epsilon: f64) -> Result<CompetitiveSelection> {
    if !(epsilon >= 0.0) {
        return Err(Error::config("metrics.epsilon", "must be >= 0"));
    }
    let meta = matrix.run_meta();
    if meta.is_empty() {
        return Err(Error::InsufficientRuns { available: 0 });
    }
    let best = meta
        .iter()
        .map(|m| m.test_bce)
        .fold(f64::INFINITY, f64::min);
    let (retained, dropped): (Vec<usize>, Vec<usize>) =
        (0..meta.len()).partition(|&b| meta[b].test_bce <= best + epsilon);
    Ok(CompetitiveSelection {
        matrix: matrix.select_runs(&retained),
        retained,
        dropped,
    })
}

/// Maps each matrix row to its row in `test`, failing on unknown ids.
pub fn align_rows(matrix: &PredictionMatrix, test: &RiskDataset) -> Result<Vec<usize>> {
    let index: HashMap<u64, usize> = test
        .ids()
        .iter()
        .enumerate()
        .map(|(i, &id)| (id, i))
        .collect();
    matrix
        .test_ids()
        .iter()
        .map(|id| {
            index.get(id).copied().ok_or_else(|| {
                Error::Join(format!("test id {id} has no matching row in the test set"))
            })
        })
        .collect()
}
