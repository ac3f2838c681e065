use std::path::Path;

use synthgrid::pipeline::{run, EvalReport, JobStatus, RunConfig, RunOptions};

const QUICK: &str = r#"
seed = 11
classifiers = ["decision_tree", "knn"]

[data]
kind = "sample"
households = 100
days = 14

[cv]
n_iter = 2
outer_k = 3
inner_k = 2

[fidelity]
mc_samples = 400

[mia]
n_shadow = 2
shadow_kinds = ["random_forest"]
attack_kinds = ["random_forest"]
shadow_trees = 10
attack_trees = 20
n_seeds = 2

[recon]
noise_repeats = 2
regressors = ["ridge", "lasso"]

[generators.wgan]
epochs = 2
[generators.ctgan]
epochs = 2
em_iters = 20
[generators.diffusion]
epochs = 10
"#;

fn quick(jobs: &str) -> RunConfig {
    RunConfig::from_toml_str(&format!("{jobs}\n{QUICK}")).unwrap()
}

fn noise_jobs() -> RunConfig {
    let mut cfg = quick("");
    cfg.jobs.retain(|j| j.family == synthgrid::generators::Family::NoiseAug);
    cfg
}

fn opts(dir: &Path) -> RunOptions {
    RunOptions {
        output_dir: dir.to_path_buf(),
        workers: Some(1),
        ..Default::default()
    }
}

fn read(dir: &Path, file: &str) -> String {
    std::fs::read_to_string(dir.join(file)).unwrap()
}

#[test]
fn empty_job_list_reports_only_the_real_table() {
    let dir = tempfile::tempdir().unwrap();
    let report = run(&quick("jobs = []"), &opts(dir.path())).unwrap();
    assert_eq!(report.datasets.len(), 1);
    assert_eq!(report.datasets[0].id, "real");
    assert!(report.datasets[0].is_ok());
    assert_eq!(report.pareto.len(), 1);
    let csv = read(dir.path(), "pareto.csv");
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.lines().nth(1).unwrap().starts_with("real,real,none,"));
}

#[test]
fn full_matrix_yields_nine_rows_and_reruns_identically() {
    let cfg = quick("");
    assert_eq!(cfg.jobs.len(), 8);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = run(&cfg, &opts(a.path())).unwrap();
    assert_eq!(ra.datasets.len(), 9);
    assert!(ra.failed_jobs().is_empty(), "{:?}", ra.failed_jobs());
    assert_eq!(ra.pareto.len(), 9);
    assert!(ra.pareto.iter().any(|r| r.on_frontier));

    let mia_rows = read(a.path(), "tables/mia.md").lines().filter(|l| l.starts_with("| ") && !l.starts_with("| Dataset")).count();
    assert_eq!(mia_rows, 9);
    let recon_rows = read(a.path(), "tables/reconstruction.md")
        .lines()
        .filter(|l| l.starts_with("| ") && !l.starts_with("| Dataset"))
        .count();
    assert_eq!(recon_rows, 8);

    let rb = run(&cfg, &RunOptions { workers: Some(2), ..opts(b.path()) }).unwrap();
    assert_eq!(ra, rb);
    for f in ["pareto.csv", "report.json", "report.md", "projection_2d.csv"] {
        assert_eq!(read(a.path(), f), read(b.path(), f), "{f} differs between runs");
    }
}

#[test]
fn injected_failure_leaves_other_jobs_untouched_and_resume_fills_it_in() {
    let cfg = noise_jobs();
    let clean_dir = tempfile::tempdir().unwrap();
    let clean = run(&cfg, &opts(clean_dir.path())).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let broken = run(
        &cfg,
        &RunOptions {
            fail_jobs: vec!["noise-full".into()],
            ..opts(dir.path())
        },
    )
    .unwrap();
    let failed = broken.dataset("noise-full").unwrap();
    assert!(matches!(failed.status, JobStatus::Failed { .. }));
    assert!(failed.mia.is_none() && failed.recon.is_none());
    for id in ["real", "noise-semi"] {
        assert_eq!(broken.dataset(id), clean.dataset(id), "{id} changed");
    }
    assert!(read(dir.path(), "report.md").contains("### Failed jobs"));
    assert!(read(dir.path(), "tables/mia.md").contains("| failed |"));
    assert!(!read(dir.path(), "manifest.json").contains("noise-full"));
    assert_eq!(broken.pareto.len(), 2);

    let resumed = run(&cfg, &RunOptions { resume: true, ..opts(dir.path()) }).unwrap();
    assert_eq!(resumed, clean);
    assert_eq!(read(dir.path(), "pareto.csv"), read(clean_dir.path(), "pareto.csv"));
}

#[test]
fn resume_reuses_finished_jobs_and_recomputes_changed_ones() {
    let cfg = noise_jobs();
    let dir = tempfile::tempdir().unwrap();
    let first = run(&cfg, &opts(dir.path())).unwrap();

    // Tag the stored job result so reuse is observable.
    let job_file = dir.path().join("jobs/noise-semi.json");
    let mut stored: serde_json::Value = serde_json::from_str(&read(dir.path(), "jobs/noise-semi.json")).unwrap();
    stored["rows"] = serde_json::json!(123_456);
    std::fs::write(&job_file, serde_json::to_string(&stored).unwrap()).unwrap();

    let resumed = run(&cfg, &RunOptions { resume: true, ..opts(dir.path()) }).unwrap();
    assert_eq!(resumed.dataset("noise-semi").unwrap().rows, 123_456);
    assert_eq!(resumed.dataset("noise-full"), first.dataset("noise-full"));

    // Without --resume everything is recomputed.
    let fresh = run(&cfg, &opts(dir.path())).unwrap();
    assert_eq!(fresh, first);

    // A changed generator setting invalidates only that family's jobs.
    std::fs::write(&job_file, serde_json::to_string(&stored).unwrap()).unwrap();
    let mut changed = cfg.clone();
    changed.generators.noise = Some(synthgrid::generators::NoiseConfig { fraction: 0.2 });
    let rerun = run(&changed, &RunOptions { resume: true, ..opts(dir.path()) }).unwrap();
    assert_ne!(rerun.dataset("noise-semi").unwrap().rows, 123_456);
    assert_eq!(rerun.dataset("real"), first.dataset("real"));
}

#[test]
fn every_table_value_is_traceable_to_the_json_report() {
    let dir = tempfile::tempdir().unwrap();
    run(&noise_jobs(), &opts(dir.path())).unwrap();
    let report: EvalReport = serde_json::from_str(&read(dir.path(), "report.json")).unwrap();
    let md = read(dir.path(), "report.md");
    for d in &report.datasets {
        let f = d.fidelity.as_ref();
        if let Some(f) = f {
            assert!(md.contains(&format!("| {} | {:.2} | {:.3} |", d.label, f.kl, f.js)), "{}", d.label);
        }
        let m = d.mia.as_ref().unwrap();
        assert!(md.contains(&format!("| {} | {:.2} ({:.2}, {:.2}) |", d.label, m.mean_auc, m.ci_low, m.ci_high)));
        let best = d.utility.as_ref().unwrap().best().unwrap();
        assert!(md.contains(&format!("{:.1} ± {:.1}", 100.0 * best.mean, 100.0 * best.std)));
        if d.family.is_some() {
            let r = d.recon.as_ref().unwrap();
            assert!(md.contains(&format!(
                "| {} | {} | {:.2} | {:.3} | {:.3} | {:.2} |",
                d.label,
                r.best_model.label(),
                r.mse * 1e3,
                r.pearson,
                r.r2,
                r.prs
            )));
        }
    }
    let pareto = read(dir.path(), "pareto.csv");
    for row in &report.pareto {
        assert!(pareto.contains(&format!("{},{},{},{},{},{}", row.dataset, row.family, row.regime, row.prs, row.macro_f1, row.mia_auc)));
    }
}
