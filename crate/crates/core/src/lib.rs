//! Federated averaging simulator.
//!
//! Runs FedAvg over synthetic speaker-split populations with a tunable degree
//! of non-IID-ness (per-client data limits), federated variational noise, and
//! CFMQ cost accounting. Models are small (linear, logistic, one hidden layer
//! MLP) so experiments run on a laptop.

pub mod cost;
pub mod data;
pub mod error;
pub mod fedavg;
pub mod harness;
pub mod model;
pub mod optim;
pub mod rng;

pub use cost::{cfmq, default_constants, mu_formula, CostConstants, CostLedger};
pub use data::{
    generate_population, make_iid_shards, sample_client_batchstream, select_clients, ClientDataset,
    CountDistribution, LabelKind, Population, PopulationConfig, SamplingMode, SamplingPolicy,
};
pub use error::{Error, Result};
pub use fedavg::{
    aggregate, client_update, server_update, train_centralized, AggregationWeighting, CentralizedTrainer,
    CentralizedConfig, ClientUpdateResult, Execution, FederatedConfig, Federation, LocalTraining,
    RoundReport, ServerOptimizer,
};
pub use harness::{ExperimentConfig, MetricsRow};
pub use model::{Example, ModelKind, ModelSpec, ParamVector};
pub use optim::{AdamState, FvnConfig, LrSchedule, NoiseSchedule, SgdState};
