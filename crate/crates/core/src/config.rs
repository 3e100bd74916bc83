//! Run configuration shared by every pipeline stage.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::growprune::GrowPruneConfig;
use crate::ingest::{CategorySet, Task, WINDOW_S};
use crate::simulate::CohortSpec;
use crate::synth::{default_grid, GmmOptions, LabelerSpec};

/// Floating-point width used for features and network weights.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Neighbours considered when interpolating minority-class points.
    pub smote_k: usize,
    pub gmm_candidates: Vec<usize>,
    pub synthetic_count: usize,
    pub gmm: GmmOptions,
    pub labeler_grid: Vec<LabelerSpec>,
    /// Hidden widths; filled from the task when absent.
    pub hidden_layers: Option<Vec<usize>>,
    pub growprune: GrowPruneConfig,
    pub sweep_step_minutes: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            smote_k: 5,
            gmm_candidates: (1..=10).collect(),
            synthetic_count: 10_000,
            gmm: GmmOptions::default(),
            labeler_grid: default_grid(),
            hidden_layers: None,
            growprune: GrowPruneConfig::default(),
            sweep_step_minutes: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchConfig {
    /// Subsets swept when neither `full` nor `sample` is set.
    pub subsets: Vec<CategorySet>,
    /// Draw this many subsets at random (seeded) instead of using `subsets`.
    pub sample: Option<usize>,
    /// Sweep all 255 non-empty subsets.
    pub full: bool,
    pub partitions: Vec<u8>,
    pub top_k: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            subsets: vec![CategorySet::WATCH, CategorySet::PHONE, CategorySet::ALL],
            sample: None,
            full: false,
            partitions: vec![1, 2, 3],
            top_k: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default = "default_cohort")]
    pub cohort: PathBuf,
    #[serde(default = "default_task")]
    pub task: Task,
    #[serde(default = "default_partition")]
    pub partition: u8,
    #[serde(default = "default_categories")]
    pub categories: CategorySet,
    #[serde(default)]
    pub precision: Precision,
    /// Where artifacts go. Not part of the resolved config or its hash.
    #[serde(default = "default_output", skip_serializing)]
    pub output: PathBuf,
    #[serde(default)]
    pub simulate: CohortSpec,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub search: SearchConfig,
}

fn default_cohort() -> PathBuf {
    PathBuf::from("cohort")
}
fn default_task() -> Task {
    Task::Bipolar
}
fn default_partition() -> u8 {
    1
}
fn default_categories() -> CategorySet {
    CategorySet::ALL
}
fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn within(section: &str, e: Error) -> Error {
    match e {
        Error::Config { field, msg } => Error::Config {
            field: format!("{section}.{field}"),
            msg,
        },
        other => other,
    }
}

/// Hidden widths used for a task when the config does not name any.
pub fn default_hidden(task: Task) -> Vec<usize> {
    match task {
        Task::Bipolar => vec![256, 128, 64, 32],
        Task::Mdd | Task::Schizo => vec![256, 128, 128],
    }
}

impl RunConfig {
    pub fn new(seed: u64) -> Self {
        RunConfig {
            seed,
            cohort: default_cohort(),
            task: default_task(),
            partition: default_partition(),
            categories: default_categories(),
            precision: Precision::default(),
            output: default_output(),
            simulate: CohortSpec::default(),
            pipeline: PipelineConfig::default(),
            search: SearchConfig::default(),
        }
    }

    /// Parse a TOML document. Errors name the offending key where the parser reports one.
    pub fn from_toml(text: &str) -> Result<Self> {
        let value: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::config("config", e.message()))?;
        Self::from_table(value)
    }

    pub fn from_table(table: toml::Table) -> Result<Self> {
        let mut cfg: RunConfig = table.try_into().map_err(|e: toml::de::Error| {
            let msg = e.message().to_string();
            let field = msg
                .split('`')
                .nth(1)
                .filter(|_| msg.contains("field"))
                .unwrap_or("config")
                .to_string();
            Error::config(field, msg)
        })?;
        cfg.resolve();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Fill every value that otherwise depends on other fields.
    pub fn resolve(&mut self) {
        self.simulate.seed = self.seed;
        if self.pipeline.hidden_layers.is_none() {
            self.pipeline.hidden_layers = Some(default_hidden(self.task));
        }
        self.pipeline.gmm_candidates.sort_unstable();
        self.pipeline.gmm_candidates.dedup();
        self.search.subsets.sort_unstable();
        self.search.subsets.dedup();
        self.search.partitions.sort_unstable();
        self.search.partitions.dedup();
    }

    pub fn hidden_layers(&self) -> Vec<usize> {
        self.pipeline
            .hidden_layers
            .clone()
            .unwrap_or_else(|| default_hidden(self.task))
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.partition) {
            return Err(Error::config(
                "partition",
                format!("must be 1, 2 or 3, got {}", self.partition),
            ));
        }
        let p = &self.pipeline;
        if p.smote_k == 0 {
            return Err(Error::config("pipeline.smote_k", "must be at least 1"));
        }
        if p.gmm_candidates.is_empty() || p.gmm_candidates.contains(&0) {
            return Err(Error::config(
                "pipeline.gmm_candidates",
                "must be a non-empty list of positive counts",
            ));
        }
        if p.synthetic_count == 0 {
            return Err(Error::config(
                "pipeline.synthetic_count",
                "must be at least 1",
            ));
        }
        if !(p.gmm.tol >= 0.0 && p.gmm.var_floor > 0.0 && p.gmm.max_iter > 0) {
            return Err(Error::config(
                "pipeline.gmm",
                "need max_iter > 0, tol >= 0 and var_floor > 0",
            ));
        }
        if p.labeler_grid.is_empty() {
            return Err(Error::config("pipeline.labeler_grid", "must not be empty"));
        }
        if let Some(h) = &p.hidden_layers {
            if h.contains(&0) {
                return Err(Error::config(
                    "pipeline.hidden_layers",
                    "widths must be positive",
                ));
            }
        }
        let window_min = WINDOW_S as f64 / 60.0;
        if !(p.sweep_step_minutes >= window_min && p.sweep_step_minutes.is_finite()) {
            return Err(Error::config(
                "pipeline.sweep_step_minutes",
                format!("must be at least {window_min} (one window)"),
            ));
        }
        p.growprune.validate().map_err(|e| within("pipeline", e))?;
        self.simulate
            .validate()
            .map_err(|e| within("simulate", e))?;
        let s = &self.search;
        if s.partitions.is_empty() || s.partitions.iter().any(|p| !(1..=3).contains(p)) {
            return Err(Error::config(
                "search.partitions",
                "must list partitions among 1, 2, 3",
            ));
        }
        if s.top_k == 0 {
            return Err(Error::config("search.top_k", "must be at least 1"));
        }
        if !s.full && s.sample.is_none() && s.subsets.is_empty() {
            return Err(Error::config("search.subsets", "empty subset list"));
        }
        if s.sample == Some(0) {
            return Err(Error::config("search.sample", "must be at least 1"));
        }
        Ok(())
    }

    /// The fully resolved config as TOML, without the output location.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::format("config", e))
    }

    pub fn provenance(&self) -> Result<Provenance> {
        let text = self.to_toml()?;
        let digest = Sha256::digest(text.as_bytes());
        let config_hash = digest.iter().map(|b| format!("{b:02x}")).collect();
        Ok(Provenance {
            config_hash,
            seed: self.seed,
        })
    }
}

/// Identifies the config and seed that produced an artifact.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    /// `#`-prefixed header lines for text and CSV artifacts.
    pub fn header(&self) -> String {
        format!(
            "# config_hash: {}\n# seed: {}\n",
            self.config_hash, self.seed
        )
    }
}
