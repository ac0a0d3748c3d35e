//! Run configuration: one TOML document with a section per stage.

use std::path::Path;

use myoseg_core::features::FeaturePoolConfig;
use myoseg_core::fitting::FitConfig;
use myoseg_core::forest::TrainConfig;
use myoseg_core::pipeline::PipelineConfig;
use myoseg_core::shape_model::ShapeModelConfig;
use myoseg_core::synth::SynthConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub n_train: usize,
    pub n_test: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_train: 60,
            n_test: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudyConfig {
    pub variants: Vec<String>,
    pub depths: Vec<usize>,
    /// Multiples of the box noise sigmas.
    pub box_noise: Vec<f64>,
    pub sequences: usize,
    pub frames: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            variants: vec!["classic".into(), "position".into(), "sm".into()],
            depths: vec![4, 8, 12, 16, 24],
            box_noise: vec![0.0, 2.0, 4.0],
            sequences: 5,
            frames: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    /// Master seed; copied into the synthetic and training sections.
    pub seed: u64,
    /// Worker threads, 0 for one per core.
    pub jobs: usize,
    /// Parent directory of run directories.
    pub out: String,
    pub corpus: CorpusConfig,
    pub synth: SynthConfig,
    pub shape: ShapeModelConfig,
    pub train: TrainConfig,
    pub pipeline: PipelineConfig,
    pub study: StudyConfig,
}

fn desk_shape() -> ShapeModelConfig {
    ShapeModelConfig::default()
}

/// Forest defaults with the feature geometry scaled to a 96 pixel sub-image.
pub fn desk_train() -> TrainConfig {
    TrainConfig {
        features: FeaturePoolConfig {
            max_offset: 24,
            min_box: 1,
            max_box: 13,
            ..FeaturePoolConfig::default()
        },
        ..TrainConfig::default()
    }
}

pub fn desk_pipeline() -> PipelineConfig {
    PipelineConfig {
        sub_w: 96,
        sub_h: 96,
        fit: FitConfig::default(),
    }
}

fn merge(base: &mut toml::Table, user: toml::Table) {
    for (k, v) in user {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(u)) => merge(b, u),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            seed: 0,
            jobs: 0,
            out: "runs".into(),
            corpus: CorpusConfig::default(),
            synth: SynthConfig::default(),
            shape: desk_shape(),
            train: desk_train(),
            pipeline: desk_pipeline(),
            study: StudyConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parses a possibly partial document; missing keys at any depth take
    /// their default values.
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let err = |e: &dyn std::fmt::Display| CliError::Config(e.to_string());
        let user: toml::Table = toml::from_str(text).map_err(|e| err(&e))?;
        let mut base = toml::Table::try_from(RunConfig::default()).map_err(|e| err(&e))?;
        merge(&mut base, user);
        let cfg: RunConfig = toml::Value::Table(base).try_into().map_err(|e| err(&e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Copies the master seed into the sections that consume one.
    pub fn resolved(mut self) -> Self {
        self.synth.seed = self.seed;
        self.train.seed = self.seed;
        self.synth.n_images = self.corpus.n_train + self.corpus.n_test;
        self
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.version != CONFIG_VERSION {
            return Err(CliError::Config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        let core = |e: myoseg_core::Error| CliError::Config(e.to_string());
        self.synth.validate().map_err(core)?;
        self.train.validate().map_err(core)?;
        self.pipeline.fit.validate().map_err(core)?;
        if self.pipeline.sub_w == 0 || self.pipeline.sub_h == 0 {
            return Err(CliError::Config("sub-image size must be positive".into()));
        }
        if self.corpus.n_train < 2 || self.corpus.n_test == 0 {
            return Err(CliError::Config("need at least 2 training and 1 test image".into()));
        }
        for v in &self.study.variants {
            crate::experiments::Variant::parse(v)?;
        }
        Ok(())
    }

    /// Short content hash of the resolved document, ignoring the keys that
    /// cannot change results (`jobs`, `out`).
    pub fn hash(&self) -> String {
        let canon = RunConfig {
            jobs: 0,
            out: String::new(),
            ..self.clone()
        };
        let digest = Sha256::digest(canon.to_toml().as_bytes());
        digest[..6].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{}\nbogus = 1\n", RunConfig::default().to_toml());
        assert!(matches!(RunConfig::from_toml(&text), Err(CliError::Config(_))));
        let text = RunConfig::default()
            .to_toml()
            .replace("[pipeline.fit]", "[pipeline.fit]\nnope = 2");
        assert!(RunConfig::from_toml(&text).is_err());
    }

    #[test]
    fn partial_documents_keep_nested_defaults() {
        let cfg = RunConfig::from_toml("seed = 5\n[train]\nn_trees = 3\n[train.features]\nmax_box = 9\n").unwrap();
        let want = RunConfig::default();
        assert_eq!(cfg.seed, 5);
        assert_eq!(cfg.train.n_trees, 3);
        assert_eq!(cfg.train.features.max_box, 9);
        assert_eq!(cfg.train.features.max_offset, want.train.features.max_offset);
        assert_eq!(cfg.pipeline, want.pipeline);
        assert_eq!(RunConfig::from_toml("").unwrap(), want);
        assert!(RunConfig::from_toml("[train]\nn_treez = 3\n").is_err());
    }

    #[test]
    fn hash_ignores_jobs_and_out() {
        let a = RunConfig::default();
        let b = RunConfig {
            jobs: 3,
            out: "elsewhere".into(),
            ..a.clone()
        };
        let c = RunConfig { seed: 1, ..a.clone() };
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn reference_defaults() {
        let c = RunConfig::default();
        assert_eq!(c.train.n_trees, 20);
        assert_eq!(c.train.max_depth, 24);
        assert_eq!(c.train.pixel_fraction, 0.10);
        assert_eq!(c.pipeline.fit.alpha, 3000.0);
        assert_eq!(c.pipeline.fit.beta, 10.0);
        assert_eq!(c.shape.s, 2.0);
        assert_eq!(c.shape.p_var, 0.99);
        assert_eq!(c.shape.k_cap, 16);
    }
}
