//! Run configuration: a TOML file whose tables mirror the command-line flags.

use std::path::{Path, PathBuf};

use anyhow::Context;
use nbm_core::evalharness::{SplitSpec, TrainConfig};
use nbm_core::geo::GridConfig;
use nbm_core::labeling::LabelingConfig;
use nbm_core::pipeline::InputPaths;
use nbm_core::synthworld::WorldConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingSource {
    /// Hashed bag-of-words vectors computed from the methodology texts.
    Hashed,
    /// Vectors read from a CSV of `provider_id, technology, v0..`.
    Precomputed { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureOptions {
    pub embedding: EmbeddingSource,
    pub dimension: usize,
}

impl Default for FeatureOptions {
    fn default() -> Self {
        Self { embedding: EmbeddingSource::Hashed, dimension: nbm_core::features::DEFAULT_EMBEDDING_DIM }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportOptions {
    /// States held out by the state-holdout protocol in the statistics report.
    pub held_out_states: Vec<String>,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self { held_out_states: vec!["NE".into()] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Propagated to every stochastic stage that has no seed of its own.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub inputs: Option<InputPaths>,
    pub grid: GridConfig,
    pub labeling: LabelingConfig,
    pub features: FeatureOptions,
    pub train: TrainConfig,
    pub split: SplitSpec,
    pub report: ReportOptions,
    pub world: WorldConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("nbm-out"),
            inputs: None,
            grid: GridConfig::default(),
            labeling: LabelingConfig::default(),
            features: FeatureOptions::default(),
            train: TrainConfig::default(),
            split: SplitSpec::default(),
            report: ReportOptions::default(),
            world: WorldConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))
            .map_err(CliError::Validation)?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .with_context(|| format!("invalid config {}", path.display()))
            .map_err(CliError::Validation)?;
        // Relative paths in a config file are relative to the file.
        if let Some(base) = path.parent() {
            cfg.rebase(base);
        }
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        if let Some(i) = &mut self.inputs {
            for p in [&mut i.claims_base, &mut i.challenges, &mut i.ookla, &mut i.mlab, &mut i.frn, &mut i.whois, &mut i.hex_counts] {
                fix(p);
            }
            i.claims_later.iter_mut().for_each(fix);
            i.methodology.iter_mut().for_each(fix);
        }
        if let EmbeddingSource::Precomputed { path } = &mut self.features.embedding {
            fix(path);
        }
    }

    /// Seeds left at zero inherit the run seed.
    pub fn propagate_seed(&mut self) {
        if self.split.seed == 0 {
            self.split.seed = self.seed;
        }
        if self.train.params.seed == 0 {
            self.train.params.seed = self.seed;
        }
        if let Some(s) = &mut self.train.search {
            if s.seed == 0 {
                s.seed = self.seed;
            }
        }
    }

    pub fn inputs(&self) -> Result<&InputPaths, CliError> {
        self.inputs
            .as_ref()
            .ok_or_else(|| CliError::Validation(anyhow::anyhow!("no [inputs] table in the configuration")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes to TOML")
    }
}

/// Fails with a validation error naming the first missing path.
pub fn require_files<'a>(paths: impl IntoIterator<Item = &'a Path>) -> Result<(), CliError> {
    for p in paths {
        if !p.is_file() {
            return Err(CliError::Validation(anyhow::anyhow!("required file not found: {}", p.display())));
        }
    }
    Ok(())
}
