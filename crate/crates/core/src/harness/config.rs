//! Flat TOML experiment configuration.
//!
//! Every knob is a top-level key; unknown keys are rejected so a typo in an
//! experiment grid fails loudly instead of silently running the default.

use serde::{Deserialize, Serialize};

use crate::cost::{default_constants, CostConstants};
use crate::data::{CountDistribution, LabelKind, PopulationConfig, SamplingMode, SamplingPolicy};
use crate::error::{Error, Result};
use crate::fedavg::{AggregationWeighting, Execution, FederatedConfig, ServerOptimizer};
use crate::model::{ModelKind, ModelSpec};
use crate::optim::{AdamState, FvnConfig, LrSchedule, NoiseSchedule};

pub const DEFAULT_CLIENT_LR: f64 = 0.008;
pub const DEFAULT_CLIENTS_PER_ROUND: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Federated,
    Centralized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountKind {
    #[default]
    Lognormal,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServerKind {
    #[default]
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    #[default]
    Constant,
    LinearRampup,
    RampupThenExpdecay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    #[default]
    Constant,
    LinearRamp,
}

fn default_id() -> String {
    "experiment".into()
}
fn default_true() -> bool {
    true
}
fn default_init_scale() -> f64 {
    1.0
}
fn default_counts_mu() -> f64 {
    3.0
}
fn default_counts_sigma() -> f64 {
    0.8
}
fn default_counts_fixed() -> usize {
    20
}
fn default_cluster_spread() -> f64 {
    1.0
}
fn default_center_scale() -> f64 {
    1.0
}
fn default_label_noise() -> f64 {
    0.5
}
fn default_eval_fraction() -> f64 {
    0.1
}
fn default_sampling() -> SamplingMode {
    SamplingMode::NonIid
}
fn default_rounds() -> u64 {
    100
}
fn default_one() -> usize {
    1
}
fn default_batch_size() -> usize {
    8
}
fn default_client_lr() -> f64 {
    DEFAULT_CLIENT_LR
}
fn default_server_lr() -> f64 {
    1e-3
}
fn default_decay_rate() -> f64 {
    1.0
}
fn default_decay_every() -> u64 {
    1
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    1e-8
}
fn default_alpha() -> f64 {
    1.0
}
fn default_eval_every() -> u64 {
    10
}

/// Declarative description of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_id")]
    pub experiment_id: String,
    pub mode: RunMode,
    #[serde(default)]
    pub seed: u64,

    pub model: ModelKind,
    pub input_dim: usize,
    #[serde(default)]
    pub hidden_dim: usize,
    /// Defaults to 1 for linear regression and 2 for classifiers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,

    pub num_clients: usize,
    #[serde(default)]
    pub counts: CountKind,
    #[serde(default = "default_counts_mu")]
    pub counts_mu: f64,
    #[serde(default = "default_counts_sigma")]
    pub counts_sigma: f64,
    #[serde(default = "default_counts_fixed")]
    pub counts_fixed: usize,
    #[serde(default = "default_cluster_spread")]
    pub cluster_spread: f64,
    #[serde(default = "default_center_scale")]
    pub center_scale: f64,
    #[serde(default = "default_label_noise")]
    pub label_noise: f64,
    #[serde(default = "default_eval_fraction")]
    pub eval_fraction: f64,

    #[serde(default = "default_sampling")]
    pub sampling: SamplingMode,
    /// Defaults to `min(128, num_clients)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clients_per_round: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iid_shard_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_limit: Option<usize>,
    /// Federated rounds, or optimizer steps in centralized mode.
    #[serde(default = "default_rounds")]
    pub rounds: u64,
    #[serde(default = "default_one")]
    pub local_epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_client_lr")]
    pub client_lr: f64,
    #[serde(default)]
    pub aggregation_weights: AggregationWeighting,

    #[serde(default)]
    pub server_optimizer: ServerKind,
    #[serde(default = "default_server_lr")]
    pub server_lr: f64,
    #[serde(default)]
    pub server_schedule: ScheduleKind,
    #[serde(default)]
    pub server_rampup_rounds: u64,
    #[serde(default = "default_decay_rate")]
    pub server_decay_rate: f64,
    #[serde(default = "default_decay_every")]
    pub server_decay_every: u64,
    #[serde(default = "default_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "default_beta2")]
    pub adam_beta2: f64,
    #[serde(default = "default_epsilon")]
    pub adam_epsilon: f64,

    #[serde(default)]
    pub fvn: bool,
    #[serde(default)]
    pub fvn_schedule: NoiseKind,
    #[serde(default)]
    pub fvn_std: f64,
    #[serde(default)]
    pub fvn_ramp_rounds: u64,
    #[serde(default = "default_true")]
    pub fvn_transient: bool,

    /// Derive payload (2x) and peak memory (1.1x) from a model size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_bytes: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload_bytes: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peak_memory_bytes: Option<f64>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,

    #[serde(default = "default_eval_every")]
    pub eval_every: u64,
    #[serde(default)]
    pub execution: Execution,
}

impl ExperimentConfig {
    /// Parses and validates a config document.
    pub fn parse(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes.unwrap_or(match self.model {
            ModelKind::Linear => 1,
            _ => 2,
        })
    }

    pub fn clients_per_round(&self) -> usize {
        self.clients_per_round
            .unwrap_or(DEFAULT_CLIENTS_PER_ROUND.min(self.num_clients))
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            kind: self.model,
            input_dim: self.input_dim,
            hidden_dim: self.hidden_dim,
            num_classes: self.num_classes(),
        }
    }

    pub fn population_config(&self) -> PopulationConfig {
        PopulationConfig {
            num_clients: self.num_clients,
            feature_dim: self.input_dim,
            labels: if self.model.is_classifier() {
                LabelKind::Classes(self.num_classes())
            } else {
                LabelKind::Regression
            },
            counts: match self.counts {
                CountKind::Lognormal => CountDistribution::LogNormal {
                    mu: self.counts_mu,
                    sigma: self.counts_sigma,
                },
                CountKind::Fixed => CountDistribution::Fixed(self.counts_fixed),
            },
            cluster_spread: self.cluster_spread,
            center_scale: self.center_scale,
            label_noise: self.label_noise,
        }
    }

    pub fn sampling_policy(&self) -> SamplingPolicy {
        SamplingPolicy {
            mode: self.sampling,
            data_limit: self.data_limit,
            clients_per_round: self.clients_per_round(),
        }
    }

    pub fn server_schedule(&self) -> LrSchedule {
        match self.server_schedule {
            ScheduleKind::Constant => LrSchedule::Constant {
                base_lr: self.server_lr,
            },
            ScheduleKind::LinearRampup => LrSchedule::LinearRampup {
                base_lr: self.server_lr,
                rampup_rounds: self.server_rampup_rounds,
            },
            ScheduleKind::RampupThenExpdecay => LrSchedule::RampupThenExpDecay {
                base_lr: self.server_lr,
                rampup_rounds: self.server_rampup_rounds,
                decay_rate: self.server_decay_rate,
                decay_every: self.server_decay_every,
            },
        }
    }

    pub fn server_optimizer(&self) -> ServerOptimizer {
        match self.server_optimizer {
            ServerKind::Sgd => ServerOptimizer::Sgd,
            ServerKind::Adam => ServerOptimizer::Adam(AdamState::with_hyperparams(
                self.server_lr,
                self.adam_beta1,
                self.adam_beta2,
                self.adam_epsilon,
            )),
        }
    }

    pub fn fvn_config(&self) -> FvnConfig {
        FvnConfig {
            enabled: self.fvn,
            schedule: match self.fvn_schedule {
                NoiseKind::Constant => NoiseSchedule::Constant(self.fvn_std),
                NoiseKind::LinearRamp => NoiseSchedule::LinearRamp {
                    std_max: self.fvn_std,
                    ramp_rounds: self.fvn_ramp_rounds,
                },
            },
            transient: self.fvn_transient,
        }
    }

    /// Explicit byte counts win over `model_bytes`; with neither, the
    /// 960 MB / 660 MB reference constants apply.
    pub fn cost_constants(&self) -> CostConstants {
        let base = self
            .model_bytes
            .map(default_constants)
            .unwrap_or(CostConstants::REFERENCE);
        CostConstants {
            payload_bytes: self.payload_bytes.unwrap_or(base.payload_bytes),
            peak_memory_bytes: self.peak_memory_bytes.unwrap_or(base.peak_memory_bytes),
            alpha: self.alpha,
        }
    }

    pub fn federated_config(&self) -> FederatedConfig {
        FederatedConfig {
            spec: self.model_spec(),
            policy: self.sampling_policy(),
            iid_shard_size: self.iid_shard_size,
            local_epochs: self.local_epochs,
            batch_size: self.batch_size,
            client_lr: self.client_lr,
            server_schedule: self.server_schedule(),
            fvn: self.fvn_config(),
            weighting: self.aggregation_weights,
            cost: self.cost_constants(),
            seed: self.seed,
            execution: self.execution,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.experiment_id.is_empty()
            || !self
                .experiment_id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
            || self.experiment_id.starts_with('.')
        {
            return fail(format!(
                "experiment_id {:?} must be non-empty and use only [A-Za-z0-9_.-]",
                self.experiment_id
            ));
        }
        self.model_spec()
            .validate()
            .map_err(|e| Error::Config(format!("model: {e}")))?;
        if self.num_clients == 0 {
            return fail("num_clients must be >= 1".into());
        }
        let k = self.clients_per_round();
        if k == 0 {
            return fail("clients_per_round must be >= 1".into());
        }
        if k > self.num_clients {
            return fail(format!(
                "clients_per_round ({k}) exceeds num_clients ({})",
                self.num_clients
            ));
        }
        if self.counts == CountKind::Fixed && self.counts_fixed == 0 {
            return fail("counts_fixed must be >= 1".into());
        }
        if self.counts == CountKind::Lognormal
            && (!self.counts_mu.is_finite() || !(self.counts_sigma >= 0.0) || !self.counts_sigma.is_finite())
        {
            return fail(format!(
                "counts_mu ({}) must be finite and counts_sigma ({}) finite and >= 0",
                self.counts_mu, self.counts_sigma
            ));
        }
        for (name, v) in [
            ("cluster_spread", self.cluster_spread),
            ("center_scale", self.center_scale),
            ("label_noise", self.label_noise),
            ("init_scale", self.init_scale),
            ("client_lr", self.client_lr),
            ("fvn_std", self.fvn_std),
            ("alpha", self.alpha),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return fail(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.eval_fraction) {
            return fail(format!("eval_fraction must lie in [0, 1), got {}", self.eval_fraction));
        }
        if self.data_limit == Some(0) {
            return fail("data_limit must be >= 1".into());
        }
        if self.iid_shard_size == Some(0) {
            return fail("iid_shard_size must be >= 1".into());
        }
        if self.local_epochs == 0 {
            return fail("local_epochs must be >= 1".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1".into());
        }
        if self.eval_every == 0 {
            return fail("eval_every must be >= 1".into());
        }
        self.server_schedule()
            .validate()
            .map_err(|e| Error::Config(format!("server_lr/server_schedule: {e}")))?;
        if let ServerOptimizer::Adam(state) = self.server_optimizer() {
            state
                .validate()
                .map_err(|e| Error::Config(format!("adam: {e}")))?;
        }
        for (name, v) in [
            ("payload_bytes", self.payload_bytes),
            ("peak_memory_bytes", self.peak_memory_bytes),
        ] {
            if let Some(v) = v {
                if !(v >= 0.0) || !v.is_finite() {
                    return fail(format!("{name} must be finite and >= 0, got {v}"));
                }
            }
        }
        Ok(())
    }
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    ExperimentConfig::parse(text)
}
