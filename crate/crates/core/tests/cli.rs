use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use stability_audit::cli::{cmd_compare, cmd_report, cmd_run, cmd_simulate, AuditManifest};
use stability_audit::config::Config;
use stability_audit::data::read_dataset_csv;
use stability_audit::harness::PredictionMatrix;
use stability_audit::models::FittedModel;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_stability-audit"))
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    let out = dir.join("out");
    std::fs::write(&path, format!("output.dir = {}\n{body}", out.display())).unwrap();
    path
}

fn exec(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn line_count(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count()
}

const SMALL: &str = "harness.master_seed = 5\nharness.runs = 5\nharness.n_test = 400\nharness.n_train = 200\ndata.population_size = 3000\noptim.sgd.epochs = 3\n";

#[test]
fn simulate_defaults_and_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.cfg",
        "harness.master_seed = 1\ndata.population_size = 20000\n",
    );
    let o = exec(&["simulate", "-c", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(line_count(&dir.path().join("out/test.csv")), 10_001);
    let o = exec(&[
        "simulate",
        "-c",
        cfg.to_str().unwrap(),
        "--set",
        "harness.n_test=2000",
    ]);
    assert!(o.status.success());
    assert_eq!(line_count(&dir.path().join("out/test.csv")), 2_001);
    let leftovers = std::fs::read_dir(dir.path().join("out"))
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .path()
                .extension()
                .is_some_and(|x| x == "tmp")
        })
        .count();
    assert_eq!(leftovers, 0);
}

#[test]
fn config_errors_exit_with_code_one_and_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.cfg",
        "harness.master_seed = 1\nharness.n_tset = 5\n",
    );
    let o = exec(&["simulate", "-c", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("harness.n_tset"));

    let cfg = write_config(dir.path(), "d.cfg", "harness.runs = 3\n");
    let o = exec(&["run", "-c", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("harness.master_seed"));

    assert_eq!(exec(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(exec(&["--help"]).status.code(), Some(0));
}

#[test]
fn run_without_data_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.cfg", SMALL);
    let o = exec(&["run", "-c", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn diverging_training_exits_with_code_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.cfg",
        &format!("{SMALL}model.preset = nn-1l\noptim.sgd.learning_rate = 1e6\noptim.sgd.batch_size = 1\n"),
    );
    assert!(exec(&["simulate", "-c", cfg.to_str().unwrap()])
        .status
        .success());
    let o = exec(&["run", "-c", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("run"));
}

fn campaign(dir: &Path, body: &str) -> (Config, AuditManifest, AuditManifest) {
    let cfg_path = write_config(dir, "c.cfg", body);
    let cfg = Config::load(&cfg_path).unwrap();
    cmd_simulate(&cfg).unwrap();
    let run = cmd_run(&cfg).unwrap().manifest;
    let report = cmd_report(&cfg).unwrap().manifest;
    (cfg, run, report)
}

fn matrix(dir: &Path) -> PredictionMatrix {
    PredictionMatrix::read_csv(
        &dir.join("out/predictions.csv"),
        &dir.join("out/run_meta.csv"),
    )
    .unwrap()
}

#[test]
fn deterministic_fixed_data_campaign() {
    let dir = tempfile::tempdir().unwrap();
    campaign(
        dir.path(),
        &format!("{SMALL}harness.mode = fixed_train_vary_seed\n"),
    );
    let m = matrix(dir.path());
    assert_eq!(m.n_runs(), 5);
    assert_eq!(m.max_column_spread(), 0.0);
    // rank-1 matrix: every populated ePIW bin is exactly zero
    let binned = std::fs::read_to_string(dir.path().join("out/report/binned_epiw.csv")).unwrap();
    for line in binned.lines().skip(1) {
        let mean = line.rsplit(',').next().unwrap();
        assert!(mean.is_empty() || mean == "0", "{line}");
    }
}

#[test]
fn nn_fixed_data_columns_differ() {
    let dir = tempfile::tempdir().unwrap();
    campaign(
        dir.path(),
        &format!("{SMALL}harness.mode = fixed_train_vary_seed\nmodel.preset = NN-2L\n"),
    );
    assert!(matrix(dir.path()).max_column_spread() > 0.0);
}

#[test]
fn reruns_and_manifest_replay_reproduce_digests() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, run1, rep1) = campaign(dir.path(), &format!("{SMALL}model.preset = nn-1l\n"));
    let run2 = cmd_run(&cfg).unwrap().manifest;
    let rep2 = cmd_report(&cfg).unwrap().manifest;
    assert_eq!(run1, run2);
    assert_eq!(rep1, rep2);

    let manifest_path = dir.path().join("out/manifest_run.json");
    let replay = Config::load(&manifest_path).unwrap();
    assert_eq!(
        cmd_run(&replay).unwrap().manifest.inventory(),
        run1.inventory()
    );
}

#[test]
fn archived_models_reproduce_their_columns() {
    let dir = tempfile::tempdir().unwrap();
    campaign(
        dir.path(),
        &format!("{SMALL}model.preset = log-poly\nharness.archive_models = true\n"),
    );
    let m = matrix(dir.path());
    let test = read_dataset_csv(dir.path().join("out/test.csv")).unwrap();
    for b in 0..3 {
        let text =
            std::fs::read_to_string(dir.path().join(format!("out/models/run_{b:03}.txt"))).unwrap();
        let model = FittedModel::from_text(&text).unwrap();
        let p = model.predict(test.features()).unwrap();
        assert!(p.iter().zip(m.column(b)).all(|(a, b)| a == b));
    }
}

#[test]
fn epsilon_zero_refuses_instability_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.cfg", SMALL);
    let c = cfg.to_str().unwrap();
    assert!(exec(&["simulate", "-c", c]).status.success());
    assert!(exec(&["run", "-c", c]).status.success());
    let o = exec(&["report", "-c", c, "--set", "metrics.epsilon=0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("kept 1 of 5 runs"), "{}", stderr(&o));
    let o = exec(&["report", "-c", c, "--set", "metrics.epsilon=0.5"]);
    assert!(o.status.success());
}

#[test]
fn ingested_data_bins_by_developed_risk() {
    let dir = tempfile::tempdir().unwrap();
    // an external cohort with its own column names and no true risk
    let pop = stability_audit::data::generate_population(
        &stability_audit::data::DgpSpec::clinical_standin(),
        2_000,
        8,
    )
    .unwrap();
    let mut csv = String::from("patient,age,sbp,hr,killip,a,b,c,d,death\n");
    for i in 0..pop.len() {
        let x: Vec<String> = pop
            .features()
            .row(i)
            .iter()
            .map(|v| v.to_string())
            .collect();
        csv.push_str(&format!(
            "{},{},{}\n",
            1000 + i,
            x.join(","),
            pop.labels()[i]
        ));
    }
    let data = dir.path().join("cohort.csv");
    std::fs::write(&data, csv).unwrap();
    let body = format!(
        "harness.master_seed = 3\nharness.runs = 4\nharness.n_test = 500\nharness.n_train = 1000\n\
         data.source = csv\ndata.path = {}\ndata.feature_columns = age, sbp, hr, killip, a, b, c, d\n\
         data.label_column = death\ndata.id_column = patient\nmetrics.tau = 0.07\n",
        data.display()
    );
    let cfg = Config::load(&write_config(dir.path(), "c.cfg", &body)).unwrap();
    let run = cmd_run(&cfg).unwrap();
    assert!(run.manifest.inventory().contains_key("test.csv"));
    let report = cmd_report(&cfg).unwrap();
    assert_eq!(report.summary.bin_by, "developed_risk");
    assert_eq!(report.binned.len(), 2);
    assert!(report
        .records
        .iter()
        .all(|r| r.bias.is_none() && r.reference_risk == r.developed_risk));
    assert!(report.records.iter().all(|r| r.id >= 1000));
}

#[test]
fn compare_flags_ties_tau_mismatch_and_bad_edges() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write_config(dir.path(), "c.cfg", SMALL);
    let c = cfg_path.to_str().unwrap();
    assert!(exec(&["simulate", "-c", c]).status.success());
    assert!(exec(&["run", "-c", c]).status.success());
    assert!(exec(&["report", "-c", c]).status.success());
    let a = dir.path().join("out/report");
    let b = dir.path().join("copy");
    std::fs::create_dir(&b).unwrap();
    for e in std::fs::read_dir(&a).unwrap() {
        let e = e.unwrap();
        std::fs::copy(e.path(), b.join(e.file_name())).unwrap();
    }

    let cmp = cmd_compare(&[a.clone(), b.clone()]).unwrap();
    assert!(cmp.warnings.is_empty());
    for t in &cmp.tables {
        for (lowest, spread) in t.lowest.iter().zip(&t.spread) {
            assert!(lowest == "tie" || lowest.is_empty());
            assert!(spread.is_none_or(|s| s == 0.0));
        }
    }

    let o = exec(&["report", "-c", c, "--set", "metrics.tau=0.4"]);
    assert!(o.status.success());
    let o = exec(&[
        "compare",
        a.to_str().unwrap(),
        b.to_str().unwrap(),
        "--out",
        dir.path().join("cmp.csv").to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert!(stderr(&o).contains("tau differs"));
    assert!(dir.path().join("cmp.csv").exists());

    let epiw = b.join("binned_epiw.csv");
    let text = std::fs::read_to_string(&epiw)
        .unwrap()
        .replacen("0,0,0.1,", "0,0,0.125,", 1);
    std::fs::write(&epiw, text).unwrap();
    let o = exec(&["compare", a.to_str().unwrap(), b.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bin edges"));
}
