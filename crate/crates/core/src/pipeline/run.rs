use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::config::{DataSource, JobSpec, RunConfig};
use super::pareto::{pareto_frontier, ParetoRow};
use super::report::{
    render_markdown, render_pareto_csv, render_projection_csv, table_fidelity_utility, table_mia, table_reconstruction,
    table_utility, ClassifierSignificance, DatasetReport, EvalReport, JobStatus, REPORT_FILE,
};
use crate::classifiers::{nested_cv, tstr_evaluate, ClassifierKind, CvReport, Hyperparams};
use crate::error::{Error, Result};
use crate::features::{build_table, FeatureTable};
use crate::fidelity::{fidelity_report, project_2d};
use crate::generators::{synthesize, train, Family, FamilyConfig, GeneratorConfig, TrainedGenerator};
use crate::ingest::{read_readings_csv, synth_sample_dataset, TariffSchedule};
use crate::privacy::{mia_for_table, recon_baseline, reconstruction_with_baseline, ReconBaseline};
use crate::rng::{derive_seed, tag};
use crate::stats::compare_against_reference;

const MANIFEST: &str = "manifest.json";
const REAL_ID: &str = "real";

/// Execution options that do not change results.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub output_dir: PathBuf,
    /// Overrides the config's worker count.
    pub workers: Option<usize>,
    /// Reuse finished jobs whose hash matches the manifest.
    pub resume: bool,
    /// Job ids forced to fail (failure injection for isolation tests).
    pub fail_jobs: Vec<String>,
}

/// Build the labelled real table from the configured data source.
pub fn load_real_table(cfg: &RunConfig) -> Result<FeatureTable> {
    let schedule = match &cfg.tariff {
        Some(p) => TariffSchedule::load(p)?,
        None => TariffSchedule::default(),
    };
    let readings = match &cfg.data {
        DataSource::Sample { seed, households, days } => synth_sample_dataset(*seed, *households, *days, &schedule)?.readings,
        DataSource::Csv { path, columns } => read_readings_csv(path, columns)?.readings,
    };
    let built = build_table(&readings, &schedule, cfg.q, cfg.features.min_readings, cfg.features.max_lag)?;
    for (id, n) in &built.excluded {
        log::warn!("household {id} excluded: {n} readings");
    }
    Ok(built.table)
}

#[derive(Serialize)]
struct HashInput<'a> {
    version: &'a str,
    seed: u64,
    data: &'a DataSource,
    tariff: Option<String>,
    q: f64,
    features: &'a super::config::FeatureParams,
    classifiers: &'a [ClassifierKind],
    cv: &'a crate::classifiers::CvConfig,
    significance: crate::stats::SignificanceTest,
    fidelity: &'a super::config::FidelityParams,
    mia_target: Option<ClassifierKind>,
    mia: &'a crate::privacy::MiaConfig,
    recon: &'a crate::privacy::ReconConfig,
    job: Option<&'a JobSpec>,
    generator: Option<&'a FamilyConfig>,
}

fn sha_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Content hash of everything a job's result depends on.
fn job_hash(cfg: &RunConfig, tariff: &Option<String>, job: Option<&JobSpec>, generator: Option<&FamilyConfig>) -> String {
    let input = HashInput {
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.seed,
        data: &cfg.data,
        tariff: tariff.clone(),
        q: cfg.q,
        features: &cfg.features,
        classifiers: &cfg.classifiers,
        cv: &cfg.cv,
        significance: cfg.significance,
        fidelity: &cfg.fidelity,
        mia_target: cfg.mia_target,
        mia: &cfg.mia,
        recon: &cfg.recon,
        job,
        generator,
    };
    sha_hex(&serde_json::to_vec(&input).expect("serializable"))
}

/// Hash of the inputs a trained generator depends on.
fn generator_hash(cfg: &RunConfig, tariff: &Option<String>, gen: &GeneratorConfig) -> String {
    #[derive(Serialize)]
    struct G<'a> {
        version: &'a str,
        data: &'a DataSource,
        tariff: &'a Option<String>,
        q: f64,
        features: &'a super::config::FeatureParams,
        generator: &'a GeneratorConfig,
    }
    let g = G {
        version: env!("CARGO_PKG_VERSION"),
        data: &cfg.data,
        tariff,
        q: cfg.q,
        features: &cfg.features,
        generator: gen,
    };
    sha_hex(&serde_json::to_vec(&g).expect("serializable"))
}

struct Seeds {
    cv: u64,
    recon: u64,
    master: u64,
}

impl Seeds {
    fn new(master: u64) -> Self {
        Self {
            cv: derive_seed(master, &[tag("cv")]),
            recon: derive_seed(master, &[tag("recon")]),
            master,
        }
    }

    fn for_job(&self, stage: &str, id: &str) -> u64 {
        derive_seed(self.master, &[tag(stage), tag(id)])
    }
}

fn mia_target(cfg: &RunConfig, cv: &CvReport) -> Result<Hyperparams> {
    let c = match cfg.mia_target {
        Some(kind) => cv
            .get(kind)
            .ok_or_else(|| Error::Config(format!("MIA target {kind:?} is not among the classifiers")))?,
        None => cv.best().ok_or_else(|| Error::Fit("no classifier results".into()))?,
    };
    Ok(c.best_hyperparams())
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

struct Context<'a> {
    cfg: &'a RunConfig,
    real: &'a FeatureTable,
    seeds: Seeds,
    baseline: OnceLock<std::result::Result<ReconBaseline, String>>,
    out: &'a Path,
}

impl Context<'_> {
    fn baseline(&self) -> Result<&ReconBaseline> {
        self.baseline
            .get_or_init(|| recon_baseline(self.real, &self.cfg.recon, self.seeds.recon).map_err(|e| e.to_string()))
            .as_ref()
            .map_err(|e| Error::Fit(format!("reconstruction baseline: {e}")))
    }

    fn real_report(&self, hash: String) -> Result<DatasetReport> {
        log::info!("evaluating the real table ({} rows)", self.real.n());
        let cv = nested_cv(self.real, &self.cfg.classifiers, &self.cfg.cv, self.seeds.cv)?;
        let hp = mia_target(self.cfg, &cv)?;
        let mia = mia_for_table(self.real, &hp, &self.cfg.mia, self.seeds.for_job("mia", REAL_ID))?;
        let recon = reconstruction_with_baseline(self.real, self.real, self.baseline()?, &self.cfg.recon, self.seeds.recon)?;
        Ok(DatasetReport {
            id: REAL_ID.into(),
            label: "Real".into(),
            family: None,
            regime: None,
            job_hash: hash,
            status: JobStatus::Ok,
            rows: self.real.n(),
            fidelity: None,
            utility: Some(cv),
            significance: Vec::new(),
            mia: Some(mia),
            recon: Some(recon),
            projection: Vec::new(),
        })
    }

    fn job_report(&self, job: &JobSpec, gen: &TrainedGenerator, real_cv: &CvReport, hash: String) -> Result<DatasetReport> {
        let id = job.id();
        log::info!("job {id}: sampling");
        let synth = synthesize(gen, job.regime(), self.real, self.seeds.for_job("synth", &id))?;
        synth.save_csv(&self.out.join("datasets").join(format!("{id}.csv")))?;

        log::info!("job {id}: fidelity");
        let fidelity = fidelity_report(
            &self.real.features,
            &synth.features,
            &self.real.names,
            self.cfg.fidelity.mc_samples,
            self.seeds.for_job("fidelity", &id),
        )?;
        let projection = project_2d(&self.real.features, &synth.features)?;

        log::info!("job {id}: utility");
        let cv = tstr_evaluate(&synth, self.real, &self.cfg.classifiers, &self.cfg.cv, self.seeds.cv)?;
        let kinds: Vec<ClassifierKind> = cv.classifiers.iter().map(|c| c.kind).collect();
        let candidates: Vec<Vec<f64>> = cv.classifiers.iter().map(|c| c.scores()).collect();
        let reference: Vec<Vec<f64>> = kinds
            .iter()
            .map(|&k| real_cv.get(k).map(|c| c.scores()).ok_or_else(|| Error::Fit(format!("no real scores for {k:?}"))))
            .collect::<Result<_>>()?;
        let tests = compare_against_reference(&candidates, &reference, self.cfg.significance)?;
        let significance = kinds
            .into_iter()
            .zip(tests)
            .map(|(kind, test)| ClassifierSignificance { kind, test })
            .collect();

        log::info!("job {id}: privacy");
        let hp = mia_target(self.cfg, &cv)?;
        let mia = mia_for_table(&synth, &hp, &self.cfg.mia, self.seeds.for_job("mia", &id))?;
        let recon = reconstruction_with_baseline(&synth, self.real, self.baseline()?, &self.cfg.recon, self.seeds.recon)?;
        Ok(DatasetReport {
            id,
            label: job.label(),
            family: Some(job.family),
            regime: Some(job.regime),
            job_hash: hash,
            status: JobStatus::Ok,
            rows: synth.n(),
            fidelity: Some(fidelity),
            utility: Some(cv),
            significance,
            mia: Some(mia),
            recon: Some(recon),
            projection,
        })
    }

    /// Train a family's generator, or reload its checkpoint when resuming.
    fn generator(&self, family: Family, tariff: &Option<String>, resume: bool) -> Result<TrainedGenerator> {
        let gcfg = GeneratorConfig::new(
            self.cfg.generators.config_for(family),
            derive_seed(self.seeds.master, &[tag("generator"), tag(family.slug())]),
        );
        let hash = generator_hash(self.cfg, tariff, &gcfg);
        let dir = self.out.join("generators").join(family.slug());
        let hash_file = dir.join("input.sha256");
        if resume && std::fs::read_to_string(&hash_file).ok().as_deref() == Some(hash.as_str()) {
            match TrainedGenerator::load(&dir) {
                Ok(g) => {
                    log::info!("generator {family}: reusing checkpoint");
                    return Ok(g);
                }
                Err(e) => log::warn!("generator {family}: checkpoint unusable ({e}); retraining"),
            }
        }
        log::info!("generator {family}: training");
        let g = train(self.real, &gcfg)?;
        g.save(&dir)?;
        write_file(&hash_file, &hash)?;
        Ok(g)
    }
}

fn load_manifest(out: &Path) -> BTreeMap<String, String> {
    std::fs::read_to_string(out.join(MANIFEST))
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok())
        .unwrap_or_default()
}

fn cached(out: &Path, manifest: &BTreeMap<String, String>, id: &str, hash: &str) -> Option<DatasetReport> {
    if manifest.get(id).map(String::as_str) != Some(hash) {
        return None;
    }
    let text = std::fs::read_to_string(out.join("jobs").join(format!("{id}.json"))).ok()?;
    let report: DatasetReport = serde_json::from_str(&text).ok()?;
    (report.job_hash == hash && report.is_ok()).then_some(report)
}

fn pareto_rows(datasets: &[DatasetReport]) -> Vec<ParetoRow> {
    let mut rows: Vec<ParetoRow> = datasets
        .iter()
        .filter(|d| d.is_ok())
        .filter_map(|d| {
            Some(ParetoRow {
                dataset: d.id.clone(),
                family: d.family.map_or("real", |f| f.slug()).to_string(),
                regime: d.regime.map_or("none", |r| r.slug()).to_string(),
                prs: d.recon.as_ref()?.prs,
                macro_f1: d.utility.as_ref()?.best_mean(),
                mia_auc: d.mia.as_ref()?.mean_auc,
                on_frontier: false,
            })
        })
        .collect();
    let points: Vec<(f64, f64)> = rows.iter().map(|r| (r.prs, r.macro_f1)).collect();
    for i in pareto_frontier(&points) {
        rows[i].on_frontier = true;
    }
    rows
}

/// Run the whole benchmark and write every output into
/// `opts.output_dir`. Job failures are recorded in the report; only a
/// failure on the real table aborts the run.
pub fn run(cfg: &RunConfig, opts: &RunOptions) -> Result<EvalReport> {
    cfg.validate()?;
    let out = opts.output_dir.as_path();
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let workers = opts
        .workers
        .or(cfg.workers)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    pool.install(|| run_in_pool(cfg, opts))
}

fn run_in_pool(cfg: &RunConfig, opts: &RunOptions) -> Result<EvalReport> {
    let out = opts.output_dir.as_path();
    let tariff = match &cfg.tariff {
        Some(p) => Some(std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?),
        None => None,
    };
    let real = load_real_table(cfg)?;
    let datasets_dir = out.join("datasets");
    std::fs::create_dir_all(&datasets_dir).map_err(|e| Error::io(&datasets_dir, e))?;
    real.save_csv(&out.join("datasets").join(format!("{REAL_ID}.csv")))?;
    let ctx = Context {
        cfg,
        real: &real,
        seeds: Seeds::new(cfg.seed),
        baseline: OnceLock::new(),
        out,
    };
    let mut manifest = if opts.resume { load_manifest(out) } else { BTreeMap::new() };

    let real_hash = job_hash(cfg, &tariff, None, None);
    let real_report = match cached(out, &manifest, REAL_ID, &real_hash) {
        Some(r) => r,
        None => ctx.real_report(real_hash.clone())?,
    };
    let real_cv = real_report.utility.clone().expect("real report has utility");

    let hashes: Vec<String> = cfg
        .jobs
        .iter()
        .map(|j| job_hash(cfg, &tariff, Some(j), Some(&cfg.generators.config_for(j.family))))
        .collect();
    let reuse: Vec<Option<DatasetReport>> = cfg
        .jobs
        .iter()
        .zip(&hashes)
        .map(|(j, h)| if opts.resume { cached(out, &manifest, &j.id(), h) } else { None })
        .collect();

    let families: Vec<Family> = cfg
        .jobs
        .iter()
        .zip(&reuse)
        .filter(|(_, r)| r.is_none())
        .map(|(j, _)| j.family)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let generators: BTreeMap<Family, std::result::Result<TrainedGenerator, String>> = families
        .par_iter()
        .map(|&f| (f, ctx.generator(f, &tariff, opts.resume).map_err(|e| e.to_string())))
        .collect();

    let job_reports: Vec<DatasetReport> = cfg
        .jobs
        .par_iter()
        .zip(hashes.par_iter())
        .zip(reuse.into_par_iter())
        .map(|((job, hash), reused)| {
            if let Some(r) = reused {
                log::info!("job {}: reusing finished result", job.id());
                return r;
            }
            let result = if opts.fail_jobs.contains(&job.id()) {
                Err(Error::InvalidArgument("injected failure".into()))
            } else {
                match &generators[&job.family] {
                    Ok(g) => ctx.job_report(job, g, &real_cv, hash.clone()),
                    Err(e) => Err(Error::Fit(format!("generator training failed: {e}"))),
                }
            };
            result.unwrap_or_else(|e| {
                log::error!("job {} failed: {e}", job.id());
                DatasetReport::failed(job.id(), job.label(), Some(job.family), Some(job.regime), hash.clone(), e.to_string())
            })
        })
        .collect();

    let mut datasets = vec![real_report];
    datasets.extend(job_reports);
    for d in &datasets {
        let path = out.join("jobs").join(format!("{}.json", d.id));
        if d.is_ok() {
            write_file(&path, serde_json::to_string_pretty(d)?)?;
            manifest.insert(d.id.clone(), d.job_hash.clone());
        } else {
            manifest.remove(&d.id);
        }
    }
    write_file(&out.join(MANIFEST), serde_json::to_string_pretty(&manifest)?)?;

    let report = EvalReport {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        pareto: pareto_rows(&datasets),
        datasets,
    };
    write_outputs(&report, out)?;
    Ok(report)
}

/// Write the JSON report, Markdown tables and CSV exports.
pub fn write_outputs(report: &EvalReport, out: &Path) -> Result<()> {
    write_file(&out.join(REPORT_FILE), serde_json::to_string_pretty(report)?)?;
    write_file(&out.join("report.md"), render_markdown(report))?;
    let tables = out.join("tables");
    write_file(&tables.join("fidelity_utility.md"), table_fidelity_utility(report))?;
    write_file(&tables.join("utility.md"), table_utility(report))?;
    write_file(&tables.join("mia.md"), table_mia(report))?;
    write_file(&tables.join("reconstruction.md"), table_reconstruction(report))?;
    write_file(&out.join("pareto.csv"), render_pareto_csv(report)?)?;
    write_file(&out.join("projection_2d.csv"), render_projection_csv(report)?)?;
    Ok(())
}
