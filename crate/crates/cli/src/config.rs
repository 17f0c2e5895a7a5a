//! The run configuration document (TOML, versioned).
//!
//! ```toml
//! version = 1
//!
//! [paths]
//! input = "cohort.csv"
//! output = "out"
//!
//! [[schema.columns]]
//! name = "age"
//! kind = "continuous"
//! role = "covariate"
//! ```
//!
//! Every section except `schema` is optional; omitted fields take the
//! defaults below.

use std::path::{Path, PathBuf};

use ontram_core::model::ParamGroup;
use ontram_core::preprocess::{FeatureSchema, DEFAULT_NEIGHBORS, DEFAULT_VALIDATION_FRACTION};
use ontram_core::synthetic::GeneratorSpec;
use ontram_core::train::{HeadArchitecture, StagedConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    #[serde(default)]
    pub paths: Paths,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<FeatureSchema>,
    #[serde(default)]
    pub cv: CvSettings,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default)]
    pub imputation: ImputationSettings,
    #[serde(default)]
    pub training: TrainingSettings,
    #[serde(default)]
    pub evaluation: EvaluationSettings,
    #[serde(default)]
    pub simulate: SimulateSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    /// Companion CSV of embeddings keyed by the identifier column.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
    pub output: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            input: None,
            embeddings: None,
            output: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvSettings {
    pub folds: usize,
    pub validation_fraction: f64,
}

impl Default for CvSettings {
    fn default() -> Self {
        CvSettings {
            folds: 5,
            validation_fraction: DEFAULT_VALIDATION_FRACTION,
        }
    }
}

/// Explicit seeds; fold `f` derives its own as `seed + f`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub split: u64,
    pub train: u64,
    pub bootstrap: u64,
    pub truncation: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds {
            split: 1,
            train: 1,
            bootstrap: 1,
            truncation: 1,
        }
    }
}

impl Seeds {
    pub fn all(seed: u64) -> Self {
        Seeds {
            split: seed,
            train: seed,
            bootstrap: seed,
            truncation: seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImputationSettings {
    pub neighbors: usize,
}

impl Default for ImputationSettings {
    fn default() -> Self {
        ImputationSettings {
            neighbors: DEFAULT_NEIGHBORS,
        }
    }
}

/// Optional overrides of one stage's published defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageSettings {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight_decay: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dropout: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trainable: Option<Vec<ParamGroup>>,
}

impl StageSettings {
    fn apply(&self, mut base: TrainConfig, seed: u64) -> TrainConfig {
        if let Some(v) = self.epochs {
            base.epochs = v;
        }
        if let Some(v) = self.batch_size {
            base.batch_size = v;
        }
        if let Some(v) = self.learning_rate {
            base.learning_rate = v;
        }
        if let Some(v) = self.weight_decay {
            base.weight_decay = v;
        }
        if let Some(v) = self.dropout {
            base.dropout = v;
        }
        if let Some(v) = &self.trainable {
            base.trainable = v.clone();
        }
        base.seed = seed;
        base
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSettings {
    pub clinical: StageSettings,
    pub head: StageSettings,
    pub finetune: StageSettings,
    pub hidden: Vec<usize>,
    pub dropout: f64,
    /// Fit the embedding head when the data carry embeddings.
    pub use_embeddings: bool,
}

impl Default for TrainingSettings {
    fn default() -> Self {
        let arch = HeadArchitecture::default();
        TrainingSettings {
            clinical: StageSettings::default(),
            head: StageSettings::default(),
            finetune: StageSettings::default(),
            hidden: arch.hidden,
            dropout: arch.dropout,
            use_embeddings: true,
        }
    }
}

impl TrainingSettings {
    /// Stage configs for one fit; stage seeds are `seed`, `seed + 1`, `seed + 2`.
    pub fn staged(&self, seed: u64) -> StagedConfig {
        StagedConfig {
            clinical: self.clinical.apply(TrainConfig::clinical(), seed),
            head: self.head.apply(TrainConfig::head(), seed.wrapping_add(1)),
            finetune: self.finetune.apply(TrainConfig::finetune(), seed.wrapping_add(2)),
            architecture: HeadArchitecture {
                hidden: self.hidden.clone(),
                dropout: self.dropout,
            },
            init_seed: seed.wrapping_add(3),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Binary NLL of the favorable-outcome prediction.
    Nll,
    Auc,
    Brier,
    CForBenefit,
    /// `ate_observed − mean(ite)`.
    AteCalibration,
}

impl Metric {
    pub const ALL: [Metric; 5] = [
        Metric::Nll,
        Metric::Auc,
        Metric::Brier,
        Metric::CForBenefit,
        Metric::AteCalibration,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Metric::Nll => "nll",
            Metric::Auc => "auc",
            Metric::Brier => "brier",
            Metric::CForBenefit => "c_for_benefit",
            Metric::AteCalibration => "ate_calibration",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSettings {
    pub metrics: Vec<Metric>,
    /// `0` skips confidence intervals.
    pub bootstrap_replicates: usize,
    pub alpha: f64,
    /// Resampled refits behind the odds-ratio intervals; `0` skips them.
    pub odds_ratio_replicates: usize,
    /// Warm-started clinical epochs per odds-ratio refit.
    pub odds_ratio_refit_epochs: usize,
}

impl Default for EvaluationSettings {
    fn default() -> Self {
        EvaluationSettings {
            metrics: Metric::ALL.to_vec(),
            bootstrap_replicates: 1000,
            alpha: 0.05,
            odds_ratio_replicates: 200,
            odds_ratio_refit_epochs: 500,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Four covariates plus treatment on the mRS scale.
    Standard,
    /// 449 patients with eleven baseline covariates.
    TrialLike,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSettings {
    pub preset: Preset,
    /// Overrides the preset's cohort size.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    pub seed: u64,
    pub missing_rate: f64,
    /// Adds a random true embedding head of this input dimension.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embedding_dim: Option<usize>,
}

impl Default for SimulateSettings {
    fn default() -> Self {
        SimulateSettings {
            preset: Preset::TrialLike,
            n: None,
            seed: 1,
            missing_rate: 0.0,
            embedding_dim: None,
        }
    }
}

impl SimulateSettings {
    pub fn generator(&self) -> GeneratorSpec {
        let mut spec = match self.preset {
            Preset::Standard => GeneratorSpec::standard(1000, self.seed),
            Preset::TrialLike => GeneratorSpec::trial_like(self.seed),
        };
        if let Some(n) = self.n {
            spec.n = n;
        }
        spec.missing_rate = self.missing_rate;
        if let Some(d) = self.embedding_dim {
            spec.head = Some(ontram_core::train::init_head(
                d,
                &HeadArchitecture {
                    hidden: vec![8],
                    dropout: 0.0,
                },
                self.seed,
            ));
        }
        spec
    }
}

impl RunConfig {
    pub fn new(schema: Option<FeatureSchema>) -> Self {
        RunConfig {
            version: CONFIG_VERSION,
            paths: Paths::default(),
            schema,
            cv: CvSettings::default(),
            seeds: Seeds::default(),
            imputation: ImputationSettings::default(),
            training: TrainingSettings::default(),
            evaluation: EvaluationSettings::default(),
            simulate: SimulateSettings::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: RunConfig =
            toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Structural checks that do not touch the file system.
    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(CliError::Config(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if let Some(schema) = &self.schema {
            schema.validate()?;
        }
        if self.cv.folds < 2 {
            return Err(CliError::Config("cv.folds must be at least 2".into()));
        }
        let f = self.cv.validation_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(CliError::Config(format!(
                "cv.validation_fraction {f} outside (0, 1)"
            )));
        }
        if self.imputation.neighbors == 0 {
            return Err(CliError::Config("imputation.neighbors must be positive".into()));
        }
        let staged = self.training.staged(0);
        for stage in [&staged.clinical, &staged.head, &staged.finetune] {
            stage.validate()?;
        }
        if self.training.hidden.is_empty() || self.training.hidden.contains(&0) {
            return Err(CliError::Config("training.hidden needs positive widths".into()));
        }
        if !(0.0..1.0).contains(&self.training.dropout) {
            return Err(CliError::Config("training.dropout outside [0, 1)".into()));
        }
        let a = self.evaluation.alpha;
        if !(a > 0.0 && a < 1.0) {
            return Err(CliError::Config(format!("evaluation.alpha {a} outside (0, 1)")));
        }
        if self.evaluation.metrics.is_empty() {
            return Err(CliError::Config("evaluation.metrics is empty".into()));
        }
        Ok(())
    }

    pub fn schema(&self) -> Result<&FeatureSchema> {
        self.schema
            .as_ref()
            .ok_or_else(|| CliError::Config("the config has no [schema] section".into()))
    }

    pub fn input(&self) -> Result<&Path> {
        let path = self
            .paths
            .input
            .as_deref()
            .ok_or_else(|| CliError::Config("paths.input is not set".into()))?;
        if !path.is_file() {
            return Err(CliError::Config(format!(
                "input file {} does not exist",
                path.display()
            )));
        }
        if let Some(e) = &self.paths.embeddings {
            if !e.is_file() {
                return Err(CliError::Config(format!(
                    "embeddings file {} does not exist",
                    e.display()
                )));
            }
        }
        Ok(path)
    }
}

/// Command-line values that take precedence over the config document.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub folds: Option<usize>,
    pub seed: Option<u64>,
    pub bootstrap: Option<usize>,
    pub epochs: Option<usize>,
    pub n: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, config: &mut RunConfig) -> Result<()> {
        if let Some(v) = &self.input {
            config.paths.input = Some(v.clone());
        }
        if let Some(v) = &self.output {
            config.paths.output = v.clone();
        }
        if let Some(v) = self.folds {
            config.cv.folds = v;
        }
        if let Some(v) = self.seed {
            config.seeds = Seeds::all(v);
            config.simulate.seed = v;
        }
        if let Some(v) = self.bootstrap {
            config.evaluation.bootstrap_replicates = v;
        }
        if let Some(v) = self.epochs {
            config.training.clinical.epochs = Some(v);
        }
        if let Some(v) = self.n {
            config.simulate.n = Some(v);
        }
        config.validate()
    }
}
