use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::pareto::ParetoRow;
use crate::classifiers::{ClassifierKind, CvReport};
use crate::error::Result;
use crate::fidelity::{FidelityReport, ProjectedPoint};
use crate::generators::{Family, RegimeKind};
use crate::privacy::{MiaResult, ReconResult};
use crate::stats::PairedTestResult;

pub const REPORT_FILE: &str = "report.json";

/// Column order of the per-classifier utility table.
const UTILITY_COLUMNS: [ClassifierKind; 5] = [
    ClassifierKind::RandomForest,
    ClassifierKind::Knn,
    ClassifierKind::SvmRbf,
    ClassifierKind::DecisionTree,
    ClassifierKind::GradBoost,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum JobStatus {
    Ok,
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSignificance {
    pub kind: ClassifierKind,
    pub test: PairedTestResult,
}

/// Everything measured on one dataset (the real table or one generator job).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport {
    pub id: String,
    pub label: String,
    pub family: Option<Family>,
    pub regime: Option<RegimeKind>,
    pub job_hash: String,
    pub status: JobStatus,
    pub rows: usize,
    pub fidelity: Option<FidelityReport>,
    pub utility: Option<CvReport>,
    /// Fold-paired tests against the real table, one per classifier.
    pub significance: Vec<ClassifierSignificance>,
    pub mia: Option<MiaResult>,
    pub recon: Option<ReconResult>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub projection: Vec<ProjectedPoint>,
}

impl DatasetReport {
    pub fn failed(id: String, label: String, family: Option<Family>, regime: Option<RegimeKind>, hash: String, error: String) -> Self {
        Self {
            id,
            label,
            family,
            regime,
            job_hash: hash,
            status: JobStatus::Failed { error },
            rows: 0,
            fidelity: None,
            utility: None,
            significance: Vec::new(),
            mia: None,
            recon: None,
            projection: Vec::new(),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == JobStatus::Ok
    }

    fn significance_of(&self, kind: ClassifierKind) -> Option<&PairedTestResult> {
        self.significance.iter().find(|s| s.kind == kind).map(|s| &s.test)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: String,
    pub config: RunConfig,
    /// Real table first, then one entry per configured job in order.
    pub datasets: Vec<DatasetReport>,
    pub pareto: Vec<ParetoRow>,
}

impl EvalReport {
    pub fn dataset(&self, id: &str) -> Option<&DatasetReport> {
        self.datasets.iter().find(|d| d.id == id)
    }

    pub fn failed_jobs(&self) -> Vec<&DatasetReport> {
        self.datasets.iter().filter(|d| !d.is_ok()).collect()
    }
}

const FAILED: &str = "failed";
const NONE: &str = "----";

fn pct(x: f64) -> String {
    format!("{:.1}", 100.0 * x)
}

fn f1_cell(mean: f64, std: f64) -> String {
    format!("{} ± {}", pct(mean), pct(std))
}

fn header(out: &mut String, title: &str, cols: &[&str]) {
    let _ = writeln!(out, "### {title}\n");
    let _ = writeln!(out, "| {} |", cols.join(" | "));
    let _ = writeln!(out, "|{}", "---|".repeat(cols.len()));
}

fn row(out: &mut String, cells: &[String]) {
    let _ = writeln!(out, "| {} |", cells.join(" | "));
}

/// KL, JS, best classifier and its macro-F1 per dataset.
pub fn table_fidelity_utility(report: &EvalReport) -> String {
    let mut out = String::new();
    header(
        &mut out,
        "Fidelity and utility",
        &["Dataset", "KL", "JS", "Best classifier", "Macro-F1 (%)"],
    );
    for d in &report.datasets {
        if !d.is_ok() {
            row(&mut out, &[d.label.clone(), FAILED.into(), FAILED.into(), FAILED.into(), FAILED.into()]);
            continue;
        }
        let (kl, js) = match &d.fidelity {
            Some(f) => (format!("{:.2}", f.kl), format!("{:.3}", f.js)),
            None => (NONE.into(), NONE.into()),
        };
        let (name, f1) = match d.utility.as_ref().and_then(|u| u.best()) {
            Some(b) => (b.kind.label().to_string(), f1_cell(b.mean, b.std)),
            None => (NONE.into(), NONE.into()),
        };
        row(&mut out, &[d.label.clone(), kl, js, name, f1]);
    }
    out
}

/// Macro-F1 mean ± std per classifier, with significance arrows against the
/// real table.
pub fn table_utility(report: &EvalReport) -> String {
    let kinds: Vec<ClassifierKind> = UTILITY_COLUMNS
        .into_iter()
        .filter(|k| report.config.classifiers.contains(k))
        .collect();
    let mut cols = vec!["Dataset"];
    cols.extend(kinds.iter().map(|k| k.label()));
    let mut out = String::new();
    header(&mut out, "Macro-F1 (%) per classifier", &cols);
    for d in &report.datasets {
        let mut cells = vec![d.label.clone()];
        for &k in &kinds {
            let cell = match d.utility.as_ref().and_then(|u| u.get(k)) {
                Some(c) if d.is_ok() => {
                    let arrow = d.significance_of(k).map_or("", |t| t.direction.arrow());
                    let mut s = f1_cell(c.mean, c.std);
                    if !arrow.is_empty() {
                        s.push(' ');
                        s.push_str(arrow);
                    }
                    s
                }
                _ if !d.is_ok() => FAILED.into(),
                _ => NONE.into(),
            };
            cells.push(cell);
        }
        row(&mut out, &cells);
    }
    out
}

/// Shadow-model MIA AUC with its 95% interval; the real table is listed last.
pub fn table_mia(report: &EvalReport) -> String {
    let mut out = String::new();
    header(&mut out, "Membership inference", &["Dataset", "Shadow MIA AUC"]);
    let (real, synth): (Vec<&DatasetReport>, Vec<&DatasetReport>) =
        report.datasets.iter().partition(|d| d.family.is_none());
    for d in synth.into_iter().chain(real) {
        let cell = match (&d.mia, d.is_ok()) {
            (Some(m), true) => format!("{:.2} ({:.2}, {:.2})", m.mean_auc, m.ci_low, m.ci_high),
            (_, false) => FAILED.into(),
            _ => NONE.into(),
        };
        row(&mut out, &[d.label.clone(), cell]);
    }
    out
}

/// Best reconstruction regressor per released dataset.
pub fn table_reconstruction(report: &EvalReport) -> String {
    let mut out = String::new();
    header(
        &mut out,
        "Reconstruction attack",
        &["Dataset", "Best model", "MSE (×10⁻³)", "ρ", "R²", "PRS"],
    );
    for d in report.datasets.iter().filter(|d| d.family.is_some()) {
        match (&d.recon, d.is_ok()) {
            (Some(r), true) => row(
                &mut out,
                &[
                    d.label.clone(),
                    r.best_model.label().to_string(),
                    format!("{:.2}", r.mse * 1e3),
                    format!("{:.3}", r.pearson),
                    format!("{:.3}", r.r2),
                    format!("{:.2}", r.prs),
                ],
            ),
            _ => {
                let mut cells = vec![d.label.clone()];
                cells.extend(std::iter::repeat_n(FAILED.to_string(), 5));
                row(&mut out, &cells);
            }
        }
    }
    out
}

/// All four tables plus a list of failed jobs.
pub fn render_markdown(report: &EvalReport) -> String {
    let mut out = String::from("# Evaluation report\n\n");
    for t in [
        table_fidelity_utility(report),
        table_utility(report),
        table_mia(report),
        table_reconstruction(report),
    ] {
        out.push_str(&t);
        out.push('\n');
    }
    let failed = report.failed_jobs();
    if !failed.is_empty() {
        out.push_str("### Failed jobs\n\n");
        for d in failed {
            if let JobStatus::Failed { error } = &d.status {
                let _ = writeln!(out, "- {}: {error}", d.id);
            }
        }
    }
    out
}

/// `dataset,family,regime,prs,macro_f1,mia_auc` with full precision.
pub fn render_pareto_csv(report: &EvalReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["dataset", "family", "regime", "prs", "macro_f1", "mia_auc"])?;
    for r in &report.pareto {
        w.write_record([
            r.dataset.clone(),
            r.family.clone(),
            r.regime.clone(),
            r.prs.to_string(),
            r.macro_f1.to_string(),
            r.mia_auc.to_string(),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?).expect("ascii csv"))
}

/// `dataset,source,x,y` for every projected point.
pub fn render_projection_csv(report: &EvalReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["dataset", "source", "x", "y"])?;
    for d in &report.datasets {
        for p in &d.projection {
            w.write_record([d.id.clone(), p.source.as_str().to_string(), p.x.to_string(), p.y.to_string()])?;
        }
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?).expect("ascii csv"))
}
