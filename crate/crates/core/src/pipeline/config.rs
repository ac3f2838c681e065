use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classifiers::{ClassifierKind, CvConfig};
use crate::error::{Error, Result};
use crate::features::{DEFAULT_MAX_LAG, MIN_READINGS};
use crate::fidelity::DEFAULT_MC_N;
use crate::generators::{
    CtganConfig, DiffusionConfig, Family, FamilyConfig, NoiseConfig, RegimeKind, SynthesisRegime, WganConfig,
};
use crate::ingest::ColumnMapping;
use crate::privacy::{MiaConfig, ReconConfig};
use crate::stats::SignificanceTest;

pub const SAMPLE_HOUSEHOLDS: usize = 200;
pub const SAMPLE_DAYS: usize = 28;
pub const SAMPLE_SEED: u64 = 7;
const DEFAULT_SEED: u64 = 42;
const DEFAULT_Q: f64 = 0.75;

/// Where the raw half-hourly readings come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// The bundled deterministic sample generator.
    Sample {
        #[serde(default = "sample_seed")]
        seed: u64,
        #[serde(default = "sample_households")]
        households: usize,
        #[serde(default = "sample_days")]
        days: usize,
    },
    /// A readings CSV; relative paths resolve against the config file.
    Csv {
        path: PathBuf,
        #[serde(default)]
        columns: ColumnMapping,
    },
}

fn sample_seed() -> u64 {
    SAMPLE_SEED
}
fn sample_households() -> usize {
    SAMPLE_HOUSEHOLDS
}
fn sample_days() -> usize {
    SAMPLE_DAYS
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Sample {
            seed: SAMPLE_SEED,
            households: SAMPLE_HOUSEHOLDS,
            days: SAMPLE_DAYS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureParams {
    pub min_readings: usize,
    pub max_lag: usize,
}

impl Default for FeatureParams {
    fn default() -> Self {
        Self {
            min_readings: MIN_READINGS,
            max_lag: DEFAULT_MAX_LAG,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FidelityParams {
    pub mc_samples: usize,
}

impl Default for FidelityParams {
    fn default() -> Self {
        Self {
            mc_samples: DEFAULT_MC_N,
        }
    }
}

/// One generator job: a family sampled under one regime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobSpec {
    pub family: Family,
    pub regime: RegimeKind,
    /// Synthetic rows per real row (semi-synthetic only).
    #[serde(default = "one")]
    pub synth_fraction: f64,
}

fn one() -> f64 {
    1.0
}

impl JobSpec {
    pub fn new(family: Family, regime: RegimeKind) -> Self {
        Self {
            family,
            regime,
            synth_fraction: 1.0,
        }
    }

    /// Stable identifier, e.g. `wgan-semi`.
    pub fn id(&self) -> String {
        format!("{}-{}", self.family.slug(), self.regime.slug())
    }

    pub fn label(&self) -> String {
        format!("{} {}", self.family.label(), self.regime.label())
    }

    pub fn regime(&self) -> SynthesisRegime {
        match self.regime {
            RegimeKind::Full => SynthesisRegime::full(),
            RegimeKind::Semi => SynthesisRegime::semi(self.synth_fraction),
        }
    }
}

/// Every family under both regimes.
pub fn default_jobs() -> Vec<JobSpec> {
    [Family::WganGp, Family::CondTabGan, Family::Diffusion, Family::NoiseAug]
        .into_iter()
        .flat_map(|f| [JobSpec::new(f, RegimeKind::Semi), JobSpec::new(f, RegimeKind::Full)])
        .collect()
}

/// Per-family hyperparameter overrides; absent families use defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorOverrides {
    pub wgan: Option<WganConfig>,
    pub diffusion: Option<DiffusionConfig>,
    pub ctgan: Option<CtganConfig>,
    pub noise: Option<NoiseConfig>,
}

impl GeneratorOverrides {
    pub fn config_for(&self, family: Family) -> FamilyConfig {
        let over = match family {
            Family::WganGp => self.wgan.clone().map(FamilyConfig::WganGp),
            Family::Diffusion => self.diffusion.clone().map(FamilyConfig::Diffusion),
            Family::CondTabGan => self.ctgan.clone().map(FamilyConfig::CondTabGan),
            Family::NoiseAug => self.noise.clone().map(FamilyConfig::NoiseAug),
        };
        over.unwrap_or_else(|| FamilyConfig::default_for(family))
    }
}

/// Complete run description. Unknown keys are rejected at every level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub data: DataSource,
    /// Tariff schedule file (TOML or JSON); the built-in schedule if absent.
    pub tariff: Option<PathBuf>,
    /// Label quantile.
    pub q: f64,
    pub features: FeatureParams,
    pub jobs: Vec<JobSpec>,
    pub generators: GeneratorOverrides,
    pub classifiers: Vec<ClassifierKind>,
    pub cv: CvConfig,
    pub significance: SignificanceTest,
    pub fidelity: FidelityParams,
    /// Target model kind for membership inference; the best classifier of
    /// each dataset if absent.
    pub mia_target: Option<ClassifierKind>,
    pub mia: MiaConfig,
    pub recon: ReconConfig,
    /// Concurrent jobs; all available cores if absent.
    pub workers: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            output_dir: None,
            data: DataSource::default(),
            tariff: None,
            q: DEFAULT_Q,
            features: FeatureParams::default(),
            jobs: default_jobs(),
            generators: GeneratorOverrides::default(),
            classifiers: ClassifierKind::ALL.to_vec(),
            cv: CvConfig::default(),
            significance: SignificanceTest::default(),
            fidelity: FidelityParams::default(),
            mia_target: None,
            mia: MiaConfig::default(),
            recon: ReconConfig::default(),
            workers: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Load a `.json` or `.toml` file; relative data and tariff paths are
    /// resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::from_json_str(&text)?,
            _ => Self::from_toml_str(&text)?,
        };
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let DataSource::Csv { path, .. } = &mut cfg.data {
            resolve(path);
        }
        if let Some(t) = &mut cfg.tariff {
            resolve(t);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.q > 0.0 && self.q < 1.0) {
            return bad(format!("q must lie in (0, 1), got {}", self.q));
        }
        if let DataSource::Sample { households, days, .. } = self.data {
            if households < 2 || days < 7 {
                return bad("sample data needs at least 2 households and 7 days".into());
            }
        }
        if self.classifiers.is_empty() {
            return bad("at least one classifier is required".into());
        }
        if self.cv.outer_k < 2 || self.cv.inner_k < 2 || self.cv.n_iter == 0 {
            return bad("cv needs outer_k >= 2, inner_k >= 2 and n_iter >= 1".into());
        }
        if self.fidelity.mc_samples < 2 {
            return bad("fidelity.mc_samples must be at least 2".into());
        }
        if self.workers == Some(0) {
            return bad("workers must be positive".into());
        }
        let mut seen = std::collections::HashSet::new();
        for job in &self.jobs {
            if !seen.insert(job.id()) {
                return bad(format!("duplicate job `{}`", job.id()));
            }
            if job.regime == RegimeKind::Semi && !(job.synth_fraction > 0.0 && job.synth_fraction.is_finite()) {
                return bad(format!("job `{}`: synth_fraction must be positive", job.id()));
            }
        }
        for family in Family::ALL {
            self.generators.config_for(family).validate()?;
        }
        self.mia.validate()?;
        self.recon.validate()
    }
}
