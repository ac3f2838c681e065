//! Synthesizer families trained on a labelled feature table, and sampling of
//! semi- and full-synthetic tables from them.
//!
//! Every family models the joint matrix of the feature columns plus the
//! secret column (see [`FeatureTable::joint_matrix`]) together with the
//! binary label.

mod ctgan;
mod diffusion;
mod noise;
mod scaling;
mod wgan;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::TensorArchive;
use crate::error::{Error, Result};
use crate::features::FeatureTable;
use crate::linalg::Matrix;
use crate::rng::{derive_seed, rng_from_seed, tag};

pub use ctgan::{fit_gmm, CtganConfig, CtganModel, Gmm, ModeEncoder};
pub use diffusion::{alpha_bars, invert_forward, DiffusionConfig, DiffusionModel};
pub use noise::{NoiseConfig, NoiseModel};
pub use scaling::{ColumnScaler, ScalingKind};
pub use wgan::{WganConfig, WganModel};

/// Width of the clipping band around each training column, in population
/// standard deviations beyond the observed minimum and maximum.
pub const CLIP_SIGMAS: f64 = 3.0;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const WEIGHTS_FILE: &str = "weights.sgck";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    WganGp,
    Diffusion,
    CondTabGan,
    NoiseAug,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::WganGp, Family::Diffusion, Family::CondTabGan, Family::NoiseAug];

    /// Display label used in reports.
    pub fn label(self) -> &'static str {
        match self {
            Family::WganGp => "WGAN-GP",
            Family::Diffusion => "Diffusion",
            Family::CondTabGan => "CTGAN",
            Family::NoiseAug => "Noise",
        }
    }

    /// Short name used on the command line and in file names.
    pub fn slug(self) -> &'static str {
        match self {
            Family::WganGp => "wgan",
            Family::Diffusion => "diffusion",
            Family::CondTabGan => "ctgan",
            Family::NoiseAug => "noise",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "wgan" | "wgan_gp" | "wgan-gp" => Ok(Family::WganGp),
            "diffusion" => Ok(Family::Diffusion),
            "ctgan" | "cond_tab_gan" => Ok(Family::CondTabGan),
            "noise" | "noise_aug" => Ok(Family::NoiseAug),
            other => Err(Error::Config(format!("unknown generator family `{other}`"))),
        }
    }
}

/// Family-specific hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum FamilyConfig {
    WganGp(WganConfig),
    Diffusion(DiffusionConfig),
    CondTabGan(CtganConfig),
    NoiseAug(NoiseConfig),
}

impl FamilyConfig {
    pub fn default_for(family: Family) -> Self {
        match family {
            Family::WganGp => FamilyConfig::WganGp(WganConfig::default()),
            Family::Diffusion => FamilyConfig::Diffusion(DiffusionConfig::default()),
            Family::CondTabGan => FamilyConfig::CondTabGan(CtganConfig::default()),
            Family::NoiseAug => FamilyConfig::NoiseAug(NoiseConfig::default()),
        }
    }

    /// Parse family-specific hyperparameters from TOML; missing keys keep
    /// their defaults, unknown keys are rejected.
    pub fn from_toml(family: Family, text: &str) -> Result<Self> {
        let err = |e: toml::de::Error| Error::Config(e.to_string());
        Ok(match family {
            Family::WganGp => FamilyConfig::WganGp(toml::from_str(text).map_err(err)?),
            Family::Diffusion => FamilyConfig::Diffusion(toml::from_str(text).map_err(err)?),
            Family::CondTabGan => FamilyConfig::CondTabGan(toml::from_str(text).map_err(err)?),
            Family::NoiseAug => FamilyConfig::NoiseAug(toml::from_str(text).map_err(err)?),
        })
    }

    pub fn family(&self) -> Family {
        match self {
            FamilyConfig::WganGp(_) => Family::WganGp,
            FamilyConfig::Diffusion(_) => Family::Diffusion,
            FamilyConfig::CondTabGan(_) => Family::CondTabGan,
            FamilyConfig::NoiseAug(_) => Family::NoiseAug,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            FamilyConfig::WganGp(c) => c.validate(),
            FamilyConfig::Diffusion(c) => c.validate(),
            FamilyConfig::CondTabGan(c) => c.validate(),
            FamilyConfig::NoiseAug(c) => c.validate(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub family: FamilyConfig,
}

impl GeneratorConfig {
    pub fn new(family: FamilyConfig, seed: u64) -> Self {
        Self { seed, family }
    }
}

pub(crate) fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// Loss components averaged over one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub losses: BTreeMap<String, f64>,
}

/// Running means of named loss components within an epoch.
#[derive(Debug, Default)]
pub(crate) struct LossAccumulator {
    sums: BTreeMap<String, (f64, usize)>,
}

impl LossAccumulator {
    pub(crate) fn add(&mut self, name: &str, value: f64) {
        let e = self.sums.entry(name.to_string()).or_insert((0.0, 0));
        e.0 += value;
        e.1 += 1;
    }

    pub(crate) fn finish(self, epoch: usize) -> Result<EpochLog> {
        let losses: BTreeMap<String, f64> = self
            .sums
            .into_iter()
            .map(|(k, (s, c))| (k, s / c.max(1) as f64))
            .collect();
        if let Some((name, _)) = losses.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Divergence {
                epoch,
                message: format!("loss component `{name}` is not finite"),
            });
        }
        Ok(EpochLog { epoch, losses })
    }
}

/// Trained family-specific model.
#[derive(Debug, Clone)]
pub enum GeneratorModel {
    WganGp(WganModel),
    Diffusion(DiffusionModel),
    CondTabGan(CtganModel),
    NoiseAug(NoiseModel),
}

impl GeneratorModel {
    fn sample_raw(&self, n: usize, seed: u64) -> Result<(Matrix<f64>, Vec<u8>)> {
        let mut rng = rng_from_seed(seed);
        match self {
            GeneratorModel::WganGp(m) => m.sample(n, &mut rng),
            GeneratorModel::Diffusion(m) => m.sample(n, &mut rng),
            GeneratorModel::CondTabGan(m) => m.sample(n, None, &mut rng),
            GeneratorModel::NoiseAug(m) => Ok(m.sample(n, &mut rng)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedGenerator {
    pub config: GeneratorConfig,
    pub schema_hash: String,
    pub names: Vec<String>,
    /// Clipping interval per joint column.
    pub bounds: Vec<(f64, f64)>,
    pub log: Vec<EpochLog>,
    pub model: GeneratorModel,
}

/// Per-column `[min - 3 sigma, max + 3 sigma]` with population sigma.
pub fn clip_bounds(joint: &Matrix<f64>) -> Vec<(f64, f64)> {
    let stds = joint.column_stds();
    (0..joint.cols())
        .map(|j| {
            let col = joint.column(j);
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (lo - CLIP_SIGMAS * stds[j], hi + CLIP_SIGMAS * stds[j])
        })
        .collect()
}

/// Train the family selected by `config` on `table`.
pub fn train(table: &FeatureTable, config: &GeneratorConfig) -> Result<TrainedGenerator> {
    config.family.validate()?;
    if table.n() == 0 {
        return Err(Error::Empty("cannot train a generator on an empty table".into()));
    }
    let joint = table.joint_matrix();
    let seed = derive_seed(config.seed, &[tag("train"), tag(config.family.family().slug())]);
    let (model, log) = match &config.family {
        FamilyConfig::WganGp(c) => {
            let (m, log) = WganModel::fit(&joint, &table.labels, c, seed)?;
            (GeneratorModel::WganGp(m), log)
        }
        FamilyConfig::Diffusion(c) => {
            let (m, log) = DiffusionModel::fit(&joint, &table.labels, c, seed)?;
            (GeneratorModel::Diffusion(m), log)
        }
        FamilyConfig::CondTabGan(c) => {
            let (m, log) = CtganModel::fit(&joint, &table.labels, c, seed)?;
            (GeneratorModel::CondTabGan(m), log)
        }
        FamilyConfig::NoiseAug(c) => (GeneratorModel::NoiseAug(NoiseModel::fit(&joint, &table.labels, c)?), Vec::new()),
    };
    Ok(TrainedGenerator {
        config: config.clone(),
        schema_hash: table.schema_hash(),
        names: table.names.clone(),
        bounds: clip_bounds(&joint),
        log,
        model,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeKind {
    Semi,
    Full,
}

impl RegimeKind {
    pub fn label(self) -> &'static str {
        match self {
            RegimeKind::Semi => "Semi-synthetic",
            RegimeKind::Full => "Full-synthetic",
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            RegimeKind::Semi => "semi",
            RegimeKind::Full => "full",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthesisRegime {
    pub kind: RegimeKind,
    /// Synthetic rows per real row in the semi-synthetic regime.
    pub synth_fraction: f64,
}

impl SynthesisRegime {
    pub fn full() -> Self {
        Self {
            kind: RegimeKind::Full,
            synth_fraction: 1.0,
        }
    }

    pub fn semi(synth_fraction: f64) -> Self {
        Self {
            kind: RegimeKind::Semi,
            synth_fraction,
        }
    }
}

impl TrainedGenerator {
    pub fn family(&self) -> Family {
        self.config.family.family()
    }

    /// Draw `n` rows as a joint matrix (features plus secret) and labels,
    /// clipped to the training bounds.
    pub fn sample(&self, n: usize, seed: u64) -> Result<(Matrix<f64>, Vec<u8>)> {
        let (mut joint, labels) = self.model.sample_raw(n, seed)?;
        let clipped = self.clip(&mut joint)?;
        if clipped > 0 {
            log::info!(
                "{}: clipped {clipped} of {} sampled values to the training range",
                self.family(),
                joint.rows() * joint.cols()
            );
        }
        Ok((joint, labels))
    }

    /// Clip in place; returns the number of values changed. Non-finite
    /// values are an error.
    fn clip(&self, joint: &mut Matrix<f64>) -> Result<usize> {
        if joint.cols() != self.bounds.len() {
            return Err(Error::Dimension {
                expected: self.bounds.len(),
                got: joint.cols(),
            });
        }
        let mut count = 0;
        for i in 0..joint.rows() {
            for (v, &(lo, hi)) in joint.row_mut(i).iter_mut().zip(&self.bounds) {
                if !v.is_finite() {
                    return Err(Error::Divergence {
                        epoch: 0,
                        message: "generator produced a non-finite value".into(),
                    });
                }
                let c = v.clamp(lo, hi);
                if c != *v {
                    *v = c;
                    count += 1;
                }
            }
        }
        Ok(count)
    }

    /// Persist weights and a JSON manifest into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut archive = TensorArchive::new();
        match &self.model {
            GeneratorModel::WganGp(m) => m.store(&mut archive),
            GeneratorModel::Diffusion(m) => m.store(&mut archive),
            GeneratorModel::CondTabGan(m) => m.store(&mut archive),
            GeneratorModel::NoiseAug(m) => m.store(&mut archive),
        }
        archive.save(&dir.join(WEIGHTS_FILE))?;
        let manifest = Manifest {
            format_version: crate::autodiff::CHECKPOINT_VERSION,
            family: self.family(),
            config: self.config.clone(),
            schema_hash: self.schema_hash.clone(),
            names: self.names.clone(),
            bounds: self.bounds.clone(),
            log: self.log.clone(),
        };
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(&path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: Manifest = serde_json::from_str(&text)?;
        if m.format_version != crate::autodiff::CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported manifest version {}", m.format_version)));
        }
        if m.family != m.config.family.family() {
            return Err(Error::Checkpoint("manifest family disagrees with its config".into()));
        }
        let archive = TensorArchive::load(&dir.join(WEIGHTS_FILE))?;
        let model = match &m.config.family {
            FamilyConfig::WganGp(c) => GeneratorModel::WganGp(WganModel::restore(&archive, c)?),
            FamilyConfig::Diffusion(c) => GeneratorModel::Diffusion(DiffusionModel::restore(&archive, c)?),
            FamilyConfig::CondTabGan(c) => GeneratorModel::CondTabGan(CtganModel::restore(&archive, c)?),
            FamilyConfig::NoiseAug(_) => GeneratorModel::NoiseAug(NoiseModel::restore(&archive)?),
        };
        Ok(Self {
            config: m.config,
            schema_hash: m.schema_hash,
            names: m.names,
            bounds: m.bounds,
            log: m.log,
            model,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: u32,
    family: Family,
    config: GeneratorConfig,
    schema_hash: String,
    names: Vec<String>,
    bounds: Vec<(f64, f64)>,
    log: Vec<EpochLog>,
}

/// Fresh ids `syn-<family>-<k>` that do not collide with `taken`.
fn surrogate_ids(family: Family, count: usize, taken: &HashSet<&str>) -> Vec<String> {
    let mut out = Vec::with_capacity(count);
    let mut k = 0usize;
    while out.len() < count {
        let id = format!("syn-{}-{k:06}", family.slug());
        if !taken.contains(id.as_str()) {
            out.push(id);
        }
        k += 1;
    }
    out
}

/// Build a synthetic table under `regime`.
///
/// `Full` yields `real.n()` synthetic rows; `Semi` yields the real rows
/// followed by `ceil(synth_fraction * real.n())` synthetic rows.
pub fn synthesize(gen: &TrainedGenerator, regime: SynthesisRegime, real: &FeatureTable, seed: u64) -> Result<FeatureTable> {
    if real.schema_hash() != gen.schema_hash || real.names != gen.names {
        return Err(Error::Schema(format!(
            "generator schema {} does not match table schema {}",
            gen.schema_hash,
            real.schema_hash()
        )));
    }
    let count = match regime.kind {
        RegimeKind::Full => real.n(),
        RegimeKind::Semi => {
            if !(regime.synth_fraction > 0.0 && regime.synth_fraction.is_finite()) {
                return Err(config_err("synth_fraction must be positive"));
            }
            (regime.synth_fraction * real.n() as f64).ceil() as usize
        }
    };
    let sample_seed = derive_seed(seed, &[tag("sample"), tag(regime.kind.slug())]);
    let (joint, labels) = gen.sample(count, sample_seed)?;
    let taken: HashSet<&str> = real.household_ids.iter().map(String::as_str).collect();
    let ids = surrogate_ids(gen.family(), count, &taken);
    let synthetic = FeatureTable::from_joint(ids, &joint, labels, real.names.clone())?;
    match regime.kind {
        RegimeKind::Full => Ok(synthetic),
        RegimeKind::Semi => real.concat(&synthetic),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_table(n: usize) -> FeatureTable {
        let mut rng = rng_from_seed(9);
        let d = 3;
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let y = (i % 4 == 0) as u8;
            for j in 0..d {
                data.push(crate::rng::normal(&mut rng) + y as f64 * 2.0 + j as f64);
            }
            labels.push(y);
        }
        let secret = (0..n).map(|i| 1.0 + 0.01 * i as f64).collect();
        FeatureTable::new(
            (0..n).map(|i| format!("h{i}")).collect(),
            Matrix::from_vec(n, d, data).unwrap(),
            secret,
            labels,
            vec!["a".into(), "b".into(), "c".into()],
        )
        .unwrap()
    }

    fn noise_gen(table: &FeatureTable) -> TrainedGenerator {
        train(table, &GeneratorConfig::new(FamilyConfig::NoiseAug(NoiseConfig::default()), 1)).unwrap()
    }

    #[test]
    fn full_regime_has_fresh_ids() {
        let real = toy_table(100);
        let g = noise_gen(&real);
        let s = synthesize(&g, SynthesisRegime::full(), &real, 3).unwrap();
        assert_eq!(s.n(), 100);
        let ids: HashSet<&String> = real.household_ids.iter().collect();
        assert!(s.household_ids.iter().all(|h| !ids.contains(h)));
    }

    #[test]
    fn semi_regime_keeps_real_rows_first() {
        let real = toy_table(100);
        let g = noise_gen(&real);
        let s = synthesize(&g, SynthesisRegime::semi(1.0), &real, 3).unwrap();
        assert_eq!(s.n(), 200);
        assert_eq!(s.select(&(0..100).collect::<Vec<_>>()), real);
        let s2 = synthesize(&g, SynthesisRegime::semi(0.25), &real, 3).unwrap();
        assert_eq!(s2.n(), 125);
    }

    #[test]
    fn synthesis_is_deterministic() {
        let real = toy_table(50);
        let g = noise_gen(&real);
        let a = synthesize(&g, SynthesisRegime::full(), &real, 5).unwrap();
        let b = synthesize(&g, SynthesisRegime::full(), &real, 5).unwrap();
        assert_eq!(a, b);
        let c = synthesize(&g, SynthesisRegime::full(), &real, 6).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn schema_mismatch_is_rejected() {
        let real = toy_table(20);
        let g = noise_gen(&real);
        let mut other = real.clone();
        other.names[0] = "z".into();
        assert!(matches!(
            synthesize(&g, SynthesisRegime::full(), &other, 1),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn clipping_bounds_hold() {
        let real = toy_table(40);
        let mut g = noise_gen(&real);
        if let GeneratorModel::NoiseAug(m) = &mut g.model {
            m.scales.iter_mut().for_each(|s| *s *= 1e3);
        }
        let (joint, labels) = g.sample(500, 2).unwrap();
        for i in 0..joint.rows() {
            for (v, (lo, hi)) in joint.row(i).iter().zip(&g.bounds) {
                assert!(v.is_finite() && *v >= *lo && *v <= *hi);
            }
        }
        assert!(labels.iter().all(|&y| y <= 1));
    }

    #[test]
    fn family_names_round_trip() {
        for f in Family::ALL {
            assert_eq!(f.slug().parse::<Family>().unwrap(), f);
        }
        assert!("vae".parse::<Family>().is_err());
    }

    #[test]
    fn family_config_toml_rejects_unknown_keys() {
        let c = FamilyConfig::from_toml(Family::WganGp, "epochs = 3").unwrap();
        match c {
            FamilyConfig::WganGp(w) => {
                assert_eq!(w.epochs, 3);
                assert_eq!(w.batch_size, 32);
            }
            _ => unreachable!(),
        }
        assert!(FamilyConfig::from_toml(Family::WganGp, "epoch = 3").is_err());
    }
}
