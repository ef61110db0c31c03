//! Flat `key = value` campaign configuration.
//!
//! ```text
//! # comments start with '#'
//! harness.master_seed = 2024
//! model.preset = nn-2l
//! harness.n_train = 5000
//! ```
//!
//! Every key must appear in [`KEYS`]; unknown and duplicate keys are errors
//! naming the key. A JSON manifest written by the CLI is also accepted: its
//! `config` object is read back as the key/value map.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::data::{CsvSchema, DgpSpec};
use crate::error::{Error, Result};
use crate::harness::{DataSource, ExperimentConfig, Mode};
use crate::metrics::BinBy;
use crate::models::Preset;
use crate::optim::{LbfgsOptions, SgdOptions};

/// Known keys and their defaults (`None` = no default).
pub const KEYS: &[(&str, Option<&str>)] = &[
    ("data.source", Some("simulate")),
    ("data.dgp", Some("default")),
    ("data.dgp.coefficients", None),
    ("data.population_size", Some("100000")),
    ("data.path", None),
    ("data.feature_columns", None),
    ("data.label_column", None),
    ("data.id_column", None),
    ("data.standardize", Some("true")),
    ("model.preset", Some("log-lbfgs")),
    ("model.l2_lambda", None),
    ("optim.sgd.learning_rate", Some("0.05")),
    ("optim.sgd.batch_size", Some("32")),
    ("optim.sgd.epochs", Some("50")),
    ("optim.lbfgs.memory", Some("10")),
    ("optim.lbfgs.grad_tol", Some("1e-8")),
    ("optim.lbfgs.max_iters", Some("500")),
    ("harness.mode", Some("resample_train")),
    ("harness.runs", Some("100")),
    ("harness.n_train", Some("500")),
    ("harness.n_test", Some("10000")),
    ("harness.master_seed", None),
    ("harness.epsilon", Some("0.02")),
    ("harness.archive_models", Some("false")),
    ("metrics.tau", Some("0.53")),
    ("metrics.alpha", Some("0.05")),
    ("metrics.epsilon", Some("inf")),
    ("metrics.bin_by", Some("auto")),
    ("output.dir", Some("out")),
];

fn is_known(key: &str) -> bool {
    KEYS.iter().any(|(k, _)| *k == key)
}

/// Explicitly set keys; defaults are filled in by the typed accessors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Config> {
        if text.trim_start().starts_with('{') {
            return Config::from_manifest(text);
        }
        let mut cfg = Config::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(
                    format!("line {}", lineno + 1),
                    format!("expected `key = value`, got `{line}`"),
                )
            })?;
            let key = key.trim();
            if cfg.values.contains_key(key) {
                return Err(Error::config(key, "key appears more than once"));
            }
            cfg.insert(key, value.trim())?;
        }
        Ok(cfg)
    }

    fn from_manifest(text: &str) -> Result<Config> {
        let json: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| Error::config("manifest", format!("invalid JSON: {e}")))?;
        let map = json
            .get("config")
            .and_then(|c| c.as_object())
            .ok_or_else(|| Error::config("manifest", "no `config` object"))?;
        let mut cfg = Config::default();
        for (k, v) in map {
            let v = v
                .as_str()
                .ok_or_else(|| Error::config(k.as_str(), "manifest values must be strings"))?;
            cfg.insert(k, v)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Config::parse(&text)
    }

    fn insert(&mut self, key: &str, value: &str) -> Result<()> {
        if !is_known(key) {
            return Err(Error::config(key, "unknown key"));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Applies a `key=value` override, replacing any earlier value.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::config(assignment, "override must look like key=value"))?;
        self.insert(k.trim(), v.trim())
    }

    /// The explicitly set keys.
    pub fn explicit(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    /// Every key with a value, explicit or default.
    pub fn resolved(&self) -> BTreeMap<String, String> {
        let mut out: BTreeMap<String, String> = KEYS
            .iter()
            .filter_map(|(k, d)| d.map(|d| (k.to_string(), d.to_string())))
            .collect();
        out.extend(self.values.clone());
        out
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        debug_assert!(is_known(key), "{key}");
        self.values
            .get(key)
            .map(String::as_str)
            .or_else(|| KEYS.iter().find(|(k, _)| *k == key).and_then(|(_, d)| *d))
    }

    fn required(&self, key: &str) -> Result<&str> {
        self.raw(key)
            .ok_or_else(|| Error::config(key, "required key is missing"))
    }

    fn typed<T: std::str::FromStr>(&self, key: &str, what: &str) -> Result<T> {
        let raw = self.required(key)?;
        raw.parse()
            .map_err(|_| Error::config(key, format!("`{raw}` is not {what}")))
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        let v: f64 = self.typed(key, "a number")?;
        if v.is_nan() {
            return Err(Error::config(key, "NaN is not allowed"));
        }
        Ok(v)
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        self.typed(key, "a non-negative integer")
    }

    pub fn u64(&self, key: &str) -> Result<u64> {
        self.typed(key, "a non-negative integer")
    }

    pub fn bool(&self, key: &str) -> Result<bool> {
        self.typed(key, "true or false")
    }

    pub fn list(&self, key: &str) -> Result<Vec<String>> {
        Ok(self
            .required(key)?
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect())
    }

    pub fn preset(&self) -> Result<Preset> {
        let raw = self.required("model.preset")?;
        raw.parse()
            .map_err(|_| Error::config("model.preset", format!("unknown preset `{raw}`")))
    }

    pub fn is_simulated(&self) -> Result<bool> {
        match self.required("data.source")? {
            "simulate" => Ok(true),
            "csv" => Ok(false),
            other => Err(Error::config(
                "data.source",
                format!("unknown source `{other}` (expected simulate or csv)"),
            )),
        }
    }

    pub fn dgp(&self) -> Result<DgpSpec> {
        if self.values.contains_key("data.dgp.coefficients") {
            let coefficients = self
                .list("data.dgp.coefficients")?
                .iter()
                .map(|s| {
                    s.parse::<f64>().map_err(|_| {
                        Error::config("data.dgp.coefficients", format!("`{s}` is not a number"))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            return DgpSpec::from_coefficients(coefficients);
        }
        match self.required("data.dgp")? {
            "default" => Ok(DgpSpec::simulation_default()),
            "clinical_standin" => Ok(DgpSpec::clinical_standin()),
            other => Err(Error::config(
                "data.dgp",
                format!("unknown DGP `{other}` (expected default or clinical_standin)"),
            )),
        }
    }

    pub fn csv_schema(&self) -> Result<CsvSchema> {
        Ok(CsvSchema {
            feature_columns: self.list("data.feature_columns")?,
            label_column: self.required("data.label_column")?.to_string(),
            id_column: self.raw("data.id_column").map(str::to_string),
        })
    }

    pub fn bin_by(&self) -> Result<BinBy> {
        match self.required("metrics.bin_by")? {
            "auto" => Ok(if self.is_simulated()? {
                BinBy::TrueRisk
            } else {
                BinBy::DevelopedRisk
            }),
            other => other.parse(),
        }
    }

    pub fn output_dir(&self) -> Result<PathBuf> {
        Ok(PathBuf::from(self.required("output.dir")?))
    }

    pub fn experiment(&self) -> Result<ExperimentConfig> {
        let preset = self.preset()?;
        let mut spec = preset.spec();
        if self.values.contains_key("model.l2_lambda") {
            spec.l2_lambda = self.f64("model.l2_lambda")?;
        }
        let data_source = if self.is_simulated()? {
            DataSource::Simulate {
                dgp: self.dgp()?,
                population_size: self.usize("data.population_size")?,
            }
        } else {
            DataSource::Csv {
                path: PathBuf::from(self.required("data.path")?),
                schema: self.csv_schema()?,
            }
        };
        let mode: Mode = self.required("harness.mode")?.parse()?;
        let config = ExperimentConfig {
            mode,
            preset,
            spec,
            runs: self.usize("harness.runs")?,
            n_train: self.usize("harness.n_train")?,
            n_test: self.usize("harness.n_test")?,
            master_seed: self.u64("harness.master_seed")?,
            tau: self.f64("metrics.tau")?,
            epsilon: self.f64("harness.epsilon")?,
            standardize: self.bool("data.standardize")?,
            data_source,
            lbfgs: LbfgsOptions {
                memory: self.usize("optim.lbfgs.memory")?,
                grad_tol: self.f64("optim.lbfgs.grad_tol")?,
                max_iters: self.usize("optim.lbfgs.max_iters")?,
                ..LbfgsOptions::default()
            },
            sgd: SgdOptions {
                learning_rate: self.f64("optim.sgd.learning_rate")?,
                batch_size: self.usize("optim.sgd.batch_size")?,
                epochs: self.usize("optim.sgd.epochs")?,
            },
        };
        config.validate()?;
        Ok(config)
    }
}
