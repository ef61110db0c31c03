//! Command implementations behind the `stability-audit` binary.
//!
//! Each campaign lives in one output directory:
//!
//! | command    | writes                                                        |
//! |------------|---------------------------------------------------------------|
//! | `simulate` | `population.csv`, `test.csv`, `manifest_simulate.json`        |
//! | `run`      | `predictions.csv`, `run_meta.csv`, `manifest_run.json` (+ `test.csv` for CSV input, `models/` if archived) |
//! | `report`   | `report/` with per-individual and binned CSVs, `summary.json`, `manifest_report.json` |
//!
//! All files are written to a temporary name and renamed into place.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::data::{generate_population, read_dataset_csv, write_dataset_csv, RiskDataset};
use crate::error::{Error, Result};
use crate::harness::{
    competitive_filter, prepare_data, run_experiment_archived, DataSource, ExperimentData,
    PredictionMatrix,
};
use crate::metrics::{
    aggregate_performance, binned_summary, stability_report, BinBy, BinnedSummary, Field,
    PerformanceSummary, StabilityRecord, N_BINS,
};
use crate::seed::{derive_seed, SeedPurpose};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Written next to every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditManifest {
    pub version: String,
    pub command: String,
    /// Every configuration key with its effective value.
    pub config: BTreeMap<String, String>,
    pub resolved: BTreeMap<String, serde_json::Value>,
    pub inputs: Vec<FileDigest>,
    pub files: Vec<FileDigest>,
}

impl AuditManifest {
    /// Digests of the output files keyed by relative path.
    pub fn inventory(&self) -> BTreeMap<&str, &str> {
        self.files
            .iter()
            .map(|f| (f.path.as_str(), f.sha256.as_str()))
            .collect()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Writes `bytes` to `path` via a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn digest_file(root: &Path, rel: &str) -> Result<FileDigest> {
    let path = root.join(rel);
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    Ok(FileDigest {
        path: rel.to_string(),
        sha256: sha256_hex(&bytes),
        bytes: bytes.len() as u64,
    })
}

/// Collects written files and their digests for the manifest.
struct Outputs {
    root: PathBuf,
    files: Vec<FileDigest>,
}

impl Outputs {
    fn new(root: PathBuf) -> Self {
        Self {
            root,
            files: Vec::new(),
        }
    }

    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.root.join(rel), bytes)?;
        self.files.push(FileDigest {
            path: rel.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    fn finish(
        mut self,
        cfg: &Config,
        command: &str,
        inputs: Vec<FileDigest>,
    ) -> Result<AuditManifest> {
        self.files.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = AuditManifest {
            version: VERSION.to_string(),
            command: command.to_string(),
            config: cfg.resolved(),
            resolved: resolved_defaults(cfg)?,
            inputs,
            files: self.files,
        };
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        write_atomic(
            &self.root.join(format!("manifest_{command}.json")),
            json.as_bytes(),
        )?;
        Ok(manifest)
    }
}

fn resolved_defaults(cfg: &Config) -> Result<BTreeMap<String, serde_json::Value>> {
    use serde_json::json;
    let mut out = BTreeMap::new();
    let preset = cfg.preset()?;
    let spec = preset.spec();
    let lambda = if cfg.explicit().contains_key("model.l2_lambda") {
        cfg.f64("model.l2_lambda")?
    } else {
        spec.l2_lambda
    };
    if cfg.is_simulated()? {
        out.insert("dgp_coefficients".into(), json!(cfg.dgp()?.coefficients()));
    }
    out.insert("model".into(), json!(preset.name()));
    out.insert("hidden_widths".into(), json!(spec.hidden_widths));
    out.insert("l2_lambda".into(), json!(lambda));
    out.insert(
        "initialization".into(),
        json!("MLP: Glorot-uniform weights, zero biases; SGD logistic: N(0, 0.01^2); L-BFGS logistic: zeros"),
    );
    out.insert(
        "quantile".into(),
        json!("type 7: linear interpolation at h = p (B - 1)"),
    );
    out.insert("decision".into(), json!("1 if p >= tau"));
    out.insert(
        "seed_derivation".into(),
        json!("splitmix64(master_seed, run_index, purpose)"),
    );
    Ok(out)
}

fn out_dir(cfg: &Config) -> Result<PathBuf> {
    cfg.output_dir()
}

fn dataset_bytes(ds: &RiskDataset) -> Vec<u8> {
    let mut buf = Vec::new();
    write_dataset_csv(ds, &mut buf).expect("writing to memory");
    buf
}

/// Generates the simulated population and the fixed test set.
pub fn cmd_simulate(cfg: &Config) -> Result<AuditManifest> {
    let exp = cfg.experiment()?;
    let (dgp, population_size) = match &exp.data_source {
        DataSource::Simulate {
            dgp,
            population_size,
        } => (dgp, *population_size),
        DataSource::Csv { .. } => {
            return Err(Error::config(
                "data.source",
                "simulate needs data.source = simulate",
            ));
        }
    };
    let population = generate_population(
        dgp,
        population_size,
        derive_seed(exp.master_seed, 0, SeedPurpose::Population),
    )?;
    let test = generate_population(
        dgp,
        exp.n_test,
        derive_seed(exp.master_seed, 0, SeedPurpose::TestSet),
    )?;
    let mut out = Outputs::new(out_dir(cfg)?);
    out.write("population.csv", &dataset_bytes(&population))?;
    out.write("test.csv", &dataset_bytes(&test))?;
    out.finish(cfg, "simulate", Vec::new())
}

/// Result of `run`: the manifest plus the number of runs that stopped at the
/// L-BFGS iteration cap.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub manifest: AuditManifest,
    pub not_converged: Vec<usize>,
}

/// Executes the retraining campaign.
pub fn cmd_run(cfg: &Config) -> Result<RunSummary> {
    let exp = cfg.experiment()?;
    let dir = out_dir(cfg)?;
    let mut out = Outputs::new(dir.clone());
    let mut inputs = Vec::new();
    let data = match &exp.data_source {
        DataSource::Simulate { .. } => {
            let pool = read_dataset_csv(dir.join("population.csv"))?;
            let test = read_dataset_csv(dir.join("test.csv"))?;
            if test.len() != exp.n_test {
                return Err(Error::Size(format!(
                    "test.csv has {} rows but harness.n_test = {}; rerun simulate",
                    test.len(),
                    exp.n_test
                )));
            }
            inputs.push(digest_file(&dir, "population.csv")?);
            inputs.push(digest_file(&dir, "test.csv")?);
            ExperimentData { pool, test }
        }
        DataSource::Csv { path, .. } => {
            let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
            inputs.push(FileDigest {
                path: path.display().to_string(),
                sha256: sha256_hex(&bytes),
                bytes: bytes.len() as u64,
            });
            let data = prepare_data(&exp)?;
            out.write("test.csv", &dataset_bytes(&data.test))?;
            data
        }
    };

    let (matrix, models) = run_experiment_archived(&exp, &data)?;
    let mut buf = Vec::new();
    matrix.write_csv(&mut buf).map_err(|e| Error::io(&dir, e))?;
    out.write("predictions.csv", &buf)?;
    buf.clear();
    matrix
        .write_meta_csv(&mut buf)
        .map_err(|e| Error::io(&dir, e))?;
    out.write("run_meta.csv", &buf)?;
    if cfg.bool("harness.archive_models")? {
        for (b, model) in models.iter().enumerate() {
            out.write(
                &format!("models/run_{b:03}.txt"),
                model.to_text().as_bytes(),
            )?;
        }
    }
    let not_converged = matrix
        .run_meta()
        .iter()
        .filter(|m| !m.converged)
        .map(|m| m.run_index)
        .collect();
    Ok(RunSummary {
        manifest: out.finish(cfg, "run", inputs)?,
        not_converged,
    })
}

/// Aggregate block of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub model: String,
    pub mode: String,
    pub tau: f64,
    pub alpha: f64,
    /// `None` when no filtering was applied.
    pub epsilon: Option<f64>,
    pub bin_by: String,
    pub runs_total: usize,
    pub runs_retained: usize,
    pub dropped_runs: Vec<usize>,
    pub bce_mean: f64,
    pub bce_sd: f64,
    pub accuracy_mean: f64,
    pub accuracy_sd: f64,
    pub bin_edges: Vec<f64>,
    /// Mean of each per-individual metric over all test rows.
    pub overall: BTreeMap<String, f64>,
}

/// Everything `report` computed, in memory.
#[derive(Debug, Clone)]
pub struct Report {
    pub summary: ReportSummary,
    pub performance: PerformanceSummary,
    pub records: Vec<StabilityRecord>,
    pub binned: Vec<BinnedSummary>,
    pub manifest: AuditManifest,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn records_csv(records: &[StabilityRecord]) -> String {
    let mut s = String::from("id,true_risk,developed_risk,reference_risk,epiw,edfr,bias,mse\n");
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.id,
            opt(r.true_risk),
            r.developed_risk,
            r.reference_risk,
            r.epiw,
            r.edfr,
            opt(r.bias),
            opt(r.mse)
        );
    }
    s
}

/// Per-individual and binned diagnostics for a finished run.
pub fn cmd_report(cfg: &Config) -> Result<Report> {
    let dir = out_dir(cfg)?;
    let tau = cfg.f64("metrics.tau")?;
    let alpha = cfg.f64("metrics.alpha")?;
    let epsilon = cfg.f64("metrics.epsilon")?;
    let bin_by = cfg.bin_by()?;
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::config(
            "metrics.tau",
            "must lie strictly between 0 and 1",
        ));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::config(
            "metrics.alpha",
            "must lie strictly between 0 and 1",
        ));
    }

    let matrix =
        PredictionMatrix::read_csv(&dir.join("predictions.csv"), &dir.join("run_meta.csv"))?;
    let test = read_dataset_csv(dir.join("test.csv"))?;
    if test.len() != matrix.n_test() {
        return Err(Error::Join(format!(
            "prediction matrix has {} rows, test.csv has {}",
            matrix.n_test(),
            test.len()
        )));
    }
    let inputs = vec![
        digest_file(&dir, "predictions.csv")?,
        digest_file(&dir, "run_meta.csv")?,
        digest_file(&dir, "test.csv")?,
    ];

    let selection = competitive_filter(&matrix, epsilon)?;
    if selection.is_degenerate() {
        eprintln!(
            "competitive filter (epsilon = {epsilon}) kept {} of {} runs; ePIW and eDFR need at least 2",
            selection.retained.len(),
            matrix.n_runs()
        );
        return Err(Error::InsufficientRuns {
            available: selection.retained.len(),
        });
    }
    let kept = &selection.matrix;
    let rows = crate::harness::align_rows(kept, &test)?;
    let true_risk: Option<Vec<f64>> = test
        .true_risk()
        .map(|t| rows.iter().map(|&r| t[r]).collect());
    let performance = aggregate_performance(kept, &test, tau)?;
    let records = stability_report(kept, tau, alpha, true_risk.as_deref())?;
    if bin_by == BinBy::TrueRisk && true_risk.is_none() {
        return Err(Error::config(
            "metrics.bin_by",
            "test data has no true risk; use developed_risk",
        ));
    }

    let fields: Vec<Field> = if true_risk.is_some() {
        Field::ALL.to_vec()
    } else {
        vec![Field::Epiw, Field::Edfr]
    };
    let binned = fields
        .iter()
        .map(|&f| binned_summary(&records, f, bin_by))
        .collect::<Result<Vec<_>>>()?;

    let n = records.len() as f64;
    let mut overall = BTreeMap::new();
    overall.insert(
        "epiw".to_string(),
        records.iter().map(|r| r.epiw).sum::<f64>() / n,
    );
    overall.insert(
        "edfr".to_string(),
        records.iter().map(|r| r.edfr).sum::<f64>() / n,
    );
    if true_risk.is_some() {
        overall.insert(
            "bias".into(),
            records.iter().filter_map(|r| r.bias).sum::<f64>() / n,
        );
        overall.insert(
            "mse".into(),
            records.iter().filter_map(|r| r.mse).sum::<f64>() / n,
        );
    }

    let summary = ReportSummary {
        model: cfg.preset()?.name().to_string(),
        mode: cfg.raw("harness.mode").unwrap_or_default().to_string(),
        tau,
        alpha,
        epsilon: epsilon.is_finite().then_some(epsilon),
        bin_by: bin_by.as_str().to_string(),
        runs_total: matrix.n_runs(),
        runs_retained: kept.n_runs(),
        dropped_runs: selection
            .dropped
            .iter()
            .map(|&b| matrix.run_meta()[b].run_index)
            .collect(),
        bce_mean: performance.bce_mean,
        bce_sd: performance.bce_sd,
        accuracy_mean: performance.accuracy_mean,
        accuracy_sd: performance.accuracy_sd,
        bin_edges: crate::metrics::bin_edges(),
        overall,
    };

    let mut out = Outputs::new(dir.clone());
    out.write(
        "report/report_individual.csv",
        records_csv(&records).as_bytes(),
    )?;
    for b in &binned {
        out.write(
            &format!("report/binned_{}.csv", b.field.as_str()),
            b.to_csv().as_bytes(),
        )?;
    }
    let mut perf_csv = String::from("run_index,bce,accuracy\n");
    for r in &performance.per_run {
        let _ = writeln!(perf_csv, "{},{},{}", r.run_index, r.bce, r.accuracy);
    }
    out.write("report/performance.csv", perf_csv.as_bytes())?;
    out.write(
        "report/summary.json",
        serde_json::to_string_pretty(&summary)
            .expect("summary serializes")
            .as_bytes(),
    )?;
    let manifest = out.finish(cfg, "report", inputs)?;
    Ok(Report {
        summary,
        performance,
        records,
        binned,
        manifest,
    })
}

/// One binned metric across several reports.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub field: Field,
    pub models: Vec<String>,
    pub edges: Vec<f64>,
    /// `values[bin][report]`.
    pub values: Vec<Vec<Option<f64>>>,
    /// Label of the lowest model per bin, `"tie"` or empty if no data.
    pub lowest: Vec<String>,
    /// Max minus min over the reports with data in the bin.
    pub spread: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub tables: Vec<ComparisonTable>,
    pub warnings: Vec<String>,
}

fn read_binned(path: &Path) -> Result<(Vec<f64>, Vec<Option<f64>>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut edges = Vec::new();
    let mut means = Vec::new();
    let bad = || Error::Comparison(format!("{} is not a binned summary", path.display()));
    for line in text.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 5 {
            return Err(bad());
        }
        let lower: f64 = cells[1].parse().map_err(|_| bad())?;
        let upper: f64 = cells[2].parse().map_err(|_| bad())?;
        if edges.is_empty() {
            edges.push(lower);
        }
        edges.push(upper);
        means.push(if cells[4].is_empty() {
            None
        } else {
            Some(cells[4].parse().map_err(|_| bad())?)
        });
    }
    if means.len() != N_BINS {
        return Err(bad());
    }
    Ok((edges, means))
}

fn read_summary(dir: &Path) -> Result<ReportSummary> {
    let path = dir.join("summary.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Comparison(format!("{} is not a report summary: {e}", path.display())))
}

/// Side-by-side binned metrics for two or more report directories.
pub fn cmd_compare(report_dirs: &[PathBuf]) -> Result<Comparison> {
    if report_dirs.len() < 2 {
        return Err(Error::Comparison("need at least two reports".into()));
    }
    let summaries = report_dirs
        .iter()
        .map(|d| read_summary(d))
        .collect::<Result<Vec<_>>>()?;
    let mut warnings = Vec::new();
    let first = &summaries[0];
    for (s, d) in summaries.iter().zip(report_dirs).skip(1) {
        if s.bin_by != first.bin_by {
            return Err(Error::Comparison(format!(
                "{} bins by {} but {} bins by {}",
                d.display(),
                s.bin_by,
                report_dirs[0].display(),
                first.bin_by
            )));
        }
        if s.tau != first.tau {
            warnings.push(format!(
                "tau differs: {} uses {} but {} uses {}",
                d.display(),
                s.tau,
                report_dirs[0].display(),
                first.tau
            ));
        }
    }

    let mut labels: Vec<String> = Vec::new();
    for s in &summaries {
        let mut label = s.model.clone();
        let mut k = 2;
        while labels.contains(&label) {
            label = format!("{}#{k}", s.model);
            k += 1;
        }
        labels.push(label);
    }

    let mut tables = Vec::new();
    for field in Field::ALL {
        let files: Vec<PathBuf> = report_dirs
            .iter()
            .map(|d| d.join(format!("binned_{}.csv", field.as_str())))
            .collect();
        let present = files.iter().filter(|f| f.exists()).count();
        if present == 0 {
            continue;
        }
        if present != files.len() {
            return Err(Error::Comparison(format!(
                "binned_{}.csv exists in some reports but not all",
                field.as_str()
            )));
        }
        let parsed = files
            .iter()
            .map(|f| read_binned(f))
            .collect::<Result<Vec<_>>>()?;
        let edges = parsed[0].0.clone();
        for ((e, _), f) in parsed.iter().zip(&files).skip(1) {
            if *e != edges {
                return Err(Error::Comparison(format!(
                    "bin edges in {} differ from {}",
                    f.display(),
                    files[0].display()
                )));
            }
        }
        let mut values = Vec::with_capacity(N_BINS);
        let mut lowest = Vec::with_capacity(N_BINS);
        let mut spread = Vec::with_capacity(N_BINS);
        for bin in 0..N_BINS {
            let row: Vec<Option<f64>> = parsed.iter().map(|(_, m)| m[bin]).collect();
            // bias is signed; rank by magnitude
            let key = |v: f64| if field == Field::Bias { v.abs() } else { v };
            let present: Vec<(usize, f64)> = row
                .iter()
                .enumerate()
                .filter_map(|(i, v)| v.map(|v| (i, key(v))))
                .collect();
            if present.is_empty() {
                lowest.push(String::new());
                spread.push(None);
            } else {
                let min = present.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
                let max = present
                    .iter()
                    .map(|p| p.1)
                    .fold(f64::NEG_INFINITY, f64::max);
                let winners: Vec<usize> =
                    present.iter().filter(|p| p.1 == min).map(|p| p.0).collect();
                lowest.push(if winners.len() == 1 {
                    labels[winners[0]].clone()
                } else {
                    "tie".into()
                });
                spread.push(Some(max - min));
            }
            values.push(row);
        }
        tables.push(ComparisonTable {
            field,
            models: labels.clone(),
            edges,
            values,
            lowest,
            spread,
        });
    }
    Ok(Comparison { tables, warnings })
}

impl Comparison {
    /// Long-format CSV: `metric,bin,lower,upper,<model>...,lowest,spread`.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let Some(first) = self.tables.first() else {
            return s;
        };
        let _ = writeln!(
            s,
            "metric,bin,lower,upper,{},lowest,spread",
            first.models.join(",")
        );
        for t in &self.tables {
            for bin in 0..N_BINS {
                let vals: Vec<String> = t.values[bin].iter().map(|v| opt(*v)).collect();
                let _ = writeln!(
                    s,
                    "{},{bin},{},{},{},{},{}",
                    t.field.as_str(),
                    t.edges[bin],
                    t.edges[bin + 1],
                    vals.join(","),
                    t.lowest[bin],
                    opt(t.spread[bin])
                );
            }
        }
        s
    }

    /// Aligned text table for the terminal.
    pub fn render(&self) -> String {
        let mut s = String::new();
        for t in &self.tables {
            let _ = writeln!(s, "{}", t.field.as_str());
            let _ = write!(s, "{:<12}", "bin");
            for m in &t.models {
                let _ = write!(s, "{m:>12}");
            }
            let _ = writeln!(s, "  lowest");
            for bin in 0..N_BINS {
                let _ = write!(
                    s,
                    "{:<12}",
                    format!(
                        "[{:.1},{:.1}{}",
                        t.edges[bin],
                        t.edges[bin + 1],
                        if bin + 1 == N_BINS { "]" } else { ")" }
                    )
                );
                for v in &t.values[bin] {
                    match v {
                        Some(v) => {
                            let _ = write!(s, "{v:>12.4}");
                        }
                        None => {
                            let _ = write!(s, "{:>12}", "-");
                        }
                    }
                }
                let _ = writeln!(s, "  {}", t.lowest[bin]);
            }
            s.push('\n');
        }
        s
    }
}
