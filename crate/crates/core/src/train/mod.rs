//! Adam optimization and the staged clinical → head → fine-tune schedule.

mod adam;
mod init;

pub use adam::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON};
pub use init::{
    cutpoint_init, init_head, parameter_init, HeadArchitecture, CUTPOINT_CLAMP, CUTPOINT_MIN_GAP,
};

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{DropoutMasks, ModelError, ModelParams, Observation, ParamGroup};
use crate::preprocess::Dataset;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("non-finite gradient component {value} at index {index}")]
    NonFiniteGradient { index: usize, value: f64 },
    #[error("non-finite training loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("parameter initialization failed: {0}")]
    Init(String),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Clinical,
    Head,
    Finetune,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub stage: Stage,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Decoupled decay, applied to head parameters only.
    pub weight_decay: f64,
    pub dropout: bool,
    pub seed: u64,
    pub trainable: Vec<ParamGroup>,
}

impl TrainConfig {
    /// Stage A: linear predictor and cut-points, 10,000 epochs of batch 128.
    pub fn clinical() -> Self {
        TrainConfig {
            stage: Stage::Clinical,
            epochs: 10_000,
            batch_size: 128,
            learning_rate: 1e-3,
            weight_decay: 0.0,
            dropout: false,
            seed: 0,
            trainable: vec![ParamGroup::Cutpoints, ParamGroup::Linear],
        }
    }

    /// Stage B: head only, batch 2, lr 1e-4, weight decay 1e-6.
    pub fn head() -> Self {
        TrainConfig {
            stage: Stage::Head,
            epochs: 50,
            batch_size: 2,
            learning_rate: 1e-4,
            weight_decay: 1e-6,
            dropout: true,
            seed: 0,
            trainable: vec![ParamGroup::Head],
        }
    }

    /// Stage C: everything trainable, 150 epochs at lr 1e-6.
    pub fn finetune() -> Self {
        TrainConfig {
            stage: Stage::Finetune,
            epochs: 150,
            batch_size: 2,
            learning_rate: 1e-6,
            weight_decay: 1e-6,
            dropout: true,
            seed: 0,
            trainable: vec![ParamGroup::Cutpoints, ParamGroup::Linear, ParamGroup::Head],
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.epochs = epochs;
        self
    }

    /// `epochs == 0` is accepted and means "return the initial parameters".
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch size must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config(format!(
                "learning rate {} must be finite and nonnegative",
                self.learning_rate
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(TrainError::Config(format!(
                "weight decay {} must be finite and nonnegative",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// Per-epoch losses and the final parameters of one training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainTrace {
    pub config: TrainConfig,
    /// Full training-set NLL after each epoch, dropout off.
    pub train_nll: Vec<f64>,
    /// Validation NLL after each epoch; empty when no validation set was given.
    pub validation_nll: Vec<f64>,
    pub params: ModelParams,
    #[serde(skip)]
    pub wall_clock: Duration,
}

// Wall-clock time is the only field allowed to differ between identical runs.
impl PartialEq for TrainTrace {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.train_nll == other.train_nll
            && self.validation_nll == other.validation_nll
            && self.params == other.params
    }
}

/// Minibatch Adam on the mean NLL for `config.epochs` epochs.
///
/// Each epoch reshuffles the training rows with the run's seeded RNG; dropout
/// masks, when enabled, come from the same stream. The run is sequential, so
/// the trace depends only on `(init, data, config)`.
pub fn train(
    init: &ModelParams,
    training: &[Observation<'_>],
    validation: Option<&[Observation<'_>]>,
    config: &TrainConfig,
) -> Result<TrainTrace> {
    config.validate()?;
    init.validate()?;
    if training.is_empty() {
        return Err(ModelError::EmptyBatch.into());
    }
    let started = Instant::now();
    let mut params = init.clone();
    // surfaces shape errors before any step is taken
    params.negative_log_likelihood(training)?;
    if let Some(v) = validation {
        params.negative_log_likelihood(v)?;
    }

    let layout = params.layout();
    let trainable = layout.mask(&config.trainable);
    let decay = if config.weight_decay > 0.0 {
        layout.mask(&[ParamGroup::Head])
    } else {
        vec![false; layout.len()]
    };
    let mut flat = params.flatten();
    let mut adam = AdamState::new(flat.len(), config.learning_rate, config.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..training.len()).collect();
    let mut batch: Vec<Observation<'_>> = Vec::with_capacity(config.batch_size);
    let mut train_nll = Vec::with_capacity(config.epochs);
    let mut validation_nll = Vec::new();

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| training[i]));
            let masks = match (&params.head, config.dropout) {
                (Some(head), true) => Some(DropoutMasks::sample(head, batch.len(), &mut rng)),
                _ => None,
            };
            let gradient = params.nll_gradient(&batch, masks.as_ref())?.flatten();
            adam_step(&mut adam, &mut flat, &gradient, &trainable, &decay)?;
            params.assign_flat(&flat)?;
        }
        let loss = params.negative_log_likelihood(training)?;
        if !loss.is_finite() {
            return Err(TrainError::NonFiniteLoss { epoch });
        }
        train_nll.push(loss);
        if let Some(v) = validation {
            validation_nll.push(params.negative_log_likelihood(v)?);
        }
    }
    Ok(TrainTrace {
        config: config.clone(),
        train_nll,
        validation_nll,
        params,
        wall_clock: started.elapsed(),
    })
}

/// Configuration of the full three-stage fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagedConfig {
    pub clinical: TrainConfig,
    pub head: TrainConfig,
    pub finetune: TrainConfig,
    pub architecture: HeadArchitecture,
    /// Seeds head initialization.
    pub init_seed: u64,
}

impl StagedConfig {
    /// Published schedule; stage seeds are derived as `seed`, `seed + 1`, `seed + 2`.
    pub fn paper(seed: u64) -> Self {
        StagedConfig {
            clinical: TrainConfig::clinical().with_seed(seed),
            head: TrainConfig::head().with_seed(seed.wrapping_add(1)),
            finetune: TrainConfig::finetune().with_seed(seed.wrapping_add(2)),
            architecture: HeadArchitecture::default(),
            init_seed: seed.wrapping_add(3),
        }
    }
}

/// Result of [`staged_fit`]: final parameters plus one trace per stage run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagedFit {
    pub params: ModelParams,
    pub stages: Vec<TrainTrace>,
}

impl StagedFit {
    pub fn clinical(&self) -> &TrainTrace {
        &self.stages[0]
    }
}

/// Stage A on the clinical features alone; when `training` carries embeddings,
/// stage B adds a freshly initialized head on top of the stage-A parameters and
/// stage C fine-tunes everything.
pub fn staged_fit(
    training: &Dataset,
    validation: Option<&Dataset>,
    config: &StagedConfig,
) -> Result<StagedFit> {
    if let Some(v) = validation {
        if v.feature_names != training.feature_names {
            return Err(ModelError::Shape("validation features differ from training".into()).into());
        }
        if v.embedding_dim() != training.embedding_dim() {
            return Err(ModelError::Shape(format!(
                "validation embedding dimension {:?} differs from training {:?}",
                v.embedding_dim(),
                training.embedding_dim()
            ))
            .into());
        }
    }
    if let Some(emb) = &training.embeddings {
        let d = emb.first().map_or(0, Vec::len);
        if d == 0 || emb.iter().any(|e| e.len() != d) {
            return Err(ModelError::Shape("embeddings have inconsistent dimension".into()).into());
        }
    }

    let clinical_train = training.without_embeddings();
    let clinical_val = validation.map(Dataset::without_embeddings);
    let init = parameter_init(&clinical_train, None, config.init_seed)?;
    let val_obs = clinical_val.as_ref().map(|v| v.all_observations());
    let stage_a = train(
        &init,
        &clinical_train.all_observations(),
        val_obs.as_deref(),
        &config.clinical,
    )?;
    let mut params = stage_a.params.clone();
    let mut stages = vec![stage_a];

    let Some(dim) = training.embedding_dim() else {
        return Ok(StagedFit { params, stages });
    };
    params.head = Some(init_head(dim, &config.architecture, config.init_seed));
    let train_obs = training.all_observations();
    let val_obs = validation.map(|v| v.all_observations());
    for stage in [&config.head, &config.finetune] {
        let trace = train(&params, &train_obs, val_obs.as_deref(), stage)?;
        params = trace.params.clone();
        stages.push(trace);
    }
    Ok(StagedFit { params, stages })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::OutcomeScale;
    use rand::Rng;

    /// Proportional-odds data on two standardized-ish features.
    fn toy_dataset(n: usize, embed: Option<usize>, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta = [-1.0, 0.0, 1.2];
        let beta = [0.8, -0.6];
        let mut features = Vec::new();
        let mut outcomes = Vec::new();
        let mut treated = Vec::new();
        for _ in 0..n {
            let x0: f64 = rng.random_range(-2.0..2.0);
            let t = rng.random_bool(0.5);
            let x1 = if t { 1.0 } else { 0.0 };
            let s = beta[0] * x0 + beta[1] * x1;
            let u: f64 = rng.random();
            let z = (u / (1.0 - u)).ln();
            outcomes.push(theta.iter().filter(|&&c| c - s < z).count());
            features.extend([x0, x1]);
            treated.push(t);
        }
        let embeddings =
            embed.map(|d| (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect());
        Dataset {
            ids: (0..n).map(|i| i.to_string()).collect(),
            feature_names: vec!["x".into(), "t".into()],
            features,
            outcomes,
            treated,
            treatment_index: 1,
            embeddings,
            scale: OutcomeScale::new(4, 1).unwrap(),
        }
    }

    fn quick(stage: TrainConfig, epochs: usize, batch: usize, lr: f64) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: batch,
            learning_rate: lr,
            ..stage
        }
    }

    #[test]
    fn zero_learning_rate_keeps_init() {
        let data = toy_dataset(60, None, 1);
        let init = parameter_init(&data, None, 0).unwrap();
        let cfg = quick(TrainConfig::clinical(), 5, 16, 0.0);
        let trace = train(&init, &data.all_observations(), None, &cfg).unwrap();
        assert_eq!(trace.params, init);
        assert_eq!(trace.train_nll.len(), 5);
        assert!(trace.validation_nll.is_empty());
    }

    #[test]
    fn same_seed_same_trace() {
        let data = toy_dataset(80, Some(3), 2);
        let arch = HeadArchitecture {
            hidden: vec![4, 3],
            dropout: 0.3,
        };
        let init = parameter_init(&data, Some(&arch), 5).unwrap();
        let obs = data.all_observations();
        let cfg = quick(TrainConfig::finetune(), 4, 8, 1e-2);
        let a = train(&init, &obs, Some(&obs[..20]), &cfg).unwrap();
        let b = train(&init, &obs, Some(&obs[..20]), &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.params.flatten(), b.params.flatten());
        let c = train(&init, &obs, None, &cfg.clone().with_seed(9)).unwrap();
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn full_batch_nll_decreases() {
        let data = toy_dataset(200, None, 3);
        let init = parameter_init(&data, None, 0).unwrap();
        let cfg = quick(TrainConfig::clinical(), 300, 200, 1e-3);
        let trace = train(&init, &data.all_observations(), None, &cfg).unwrap();
        let start = init.negative_log_likelihood(&data.all_observations()).unwrap();
        assert!(trace.train_nll[0] < start);
        for w in trace.train_nll.windows(2) {
            assert!(w[1] <= w[0], "{} then {}", w[0], w[1]);
        }
    }

    #[test]
    fn frozen_groups_bit_identical() {
        let data = toy_dataset(50, Some(2), 4);
        let arch = HeadArchitecture {
            hidden: vec![3],
            dropout: 0.2,
        };
        let init = parameter_init(&data, Some(&arch), 1).unwrap();
        let cfg = quick(TrainConfig::head(), 3, 4, 1e-2);
        let trace = train(&init, &data.all_observations(), None, &cfg).unwrap();
        assert_eq!(trace.params.cutpoints, init.cutpoints);
        assert_eq!(trace.params.linear, init.linear);
        assert_ne!(trace.params.head, init.head);
    }

    #[test]
    fn invalid_config_rejected() {
        let data = toy_dataset(10, None, 5);
        let init = parameter_init(&data, None, 0).unwrap();
        let mut cfg = TrainConfig::clinical();
        cfg.batch_size = 0;
        assert!(matches!(
            train(&init, &data.all_observations(), None, &cfg),
            Err(TrainError::Config(_))
        ));
    }

    fn small_staged(seed: u64) -> StagedConfig {
        let mut cfg = StagedConfig::paper(seed);
        cfg.clinical = cfg.clinical.with_epochs(200);
        cfg.clinical.learning_rate = 2e-2;
        cfg.head = cfg.head.with_epochs(3);
        cfg.finetune = cfg.finetune.with_epochs(2);
        cfg.architecture.hidden = vec![8, 4];
        cfg
    }

    #[test]
    fn clinical_only_fit_has_no_head() {
        let data = toy_dataset(120, None, 6);
        let fit = staged_fit(&data, None, &small_staged(0)).unwrap();
        assert!(fit.params.head.is_none());
        assert_eq!(fit.stages.len(), 1);
        // recovers the sign pattern of the generating coefficients
        assert!(fit.params.linear.coefficients[0] > 0.3);
    }

    #[test]
    fn staged_fit_initializes_from_stage_a() {
        let data = toy_dataset(60, Some(3), 7);
        let fit = staged_fit(&data, Some(&data), &small_staged(1)).unwrap();
        assert_eq!(fit.stages.len(), 3);
        // stage B keeps γ/β frozen at the stage-A values
        assert_eq!(fit.stages[1].params.cutpoints, fit.stages[0].params.cutpoints);
        assert_eq!(fit.stages[1].params.linear, fit.stages[0].params.linear);
        assert_eq!(fit.stages[1].validation_nll.len(), 3);
    }

    #[test]
    fn zero_finetune_epochs_returns_stage_b() {
        let data = toy_dataset(40, Some(2), 8);
        let mut cfg = small_staged(2);
        cfg.finetune = cfg.finetune.with_epochs(0);
        let fit = staged_fit(&data, None, &cfg).unwrap();
        assert_eq!(fit.params, fit.stages[1].params);
    }

    #[test]
    fn zero_embeddings_leave_predictions_near_stage_a() {
        let mut data = toy_dataset(300, Some(4), 9);
        data.embeddings = Some(vec![vec![0.0; 4]; 300]);
        let test = toy_dataset(100, None, 10);
        let mut cfg = small_staged(3);
        cfg.head = cfg.head.with_epochs(5);
        cfg.finetune = cfg.finetune.with_epochs(5);
        let fit = staged_fit(&data, None, &cfg).unwrap();
        let a = &fit.stages[0].params;
        let zero = vec![0.0; 4];
        let mut max_diff: f64 = 0.0;
        for i in 0..test.len() {
            let pa = a.favorable_probability(test.row(i), None).unwrap();
            let pc = fit.params.favorable_probability(test.row(i), Some(&zero)).unwrap();
            max_diff = max_diff.max((pa - pc).abs());
        }
        // only the output bias can move, and it starts at 0 with lr 1e-4
        assert!(max_diff < 0.01, "max difference {max_diff}");
    }

    #[test]
    fn inconsistent_embedding_dimension() {
        let mut data = toy_dataset(20, Some(3), 11);
        data.embeddings.as_mut().unwrap()[5].pop();
        assert!(matches!(
            staged_fit(&data, None, &small_staged(4)),
            Err(TrainError::Model(ModelError::Shape(_)))
        ));
    }
}
