//! Fixtures shared by the benchmarks.

use fedsim::{
    generate_population, AggregationWeighting, CostConstants, CountDistribution, Execution,
    FederatedConfig, FvnConfig, LabelKind, LrSchedule, ModelSpec, Population, PopulationConfig,
    SamplingMode, SamplingPolicy,
};

pub fn population(num_clients: usize, feature_dim: usize, classes: usize, seed: u64) -> Population {
    generate_population(
        &PopulationConfig {
            num_clients,
            feature_dim,
            labels: LabelKind::Classes(classes),
            counts: CountDistribution::LogNormal { mu: 3.0, sigma: 0.8 },
            cluster_spread: 0.5,
            center_scale: 1.0,
            label_noise: 0.5,
        },
        seed,
    )
    .expect("valid population config")
}

pub fn federated_config(spec: ModelSpec, k: usize, execution: Execution) -> FederatedConfig {
    FederatedConfig {
        spec,
        policy: SamplingPolicy {
            mode: SamplingMode::NonIid,
            data_limit: None,
            clients_per_round: k,
        },
        iid_shard_size: None,
        local_epochs: 1,
        batch_size: 8,
        client_lr: 0.05,
        server_schedule: LrSchedule::Constant { base_lr: 0.01 },
        fvn: FvnConfig::linear_ramp(0.03, 100),
        weighting: AggregationWeighting::Effective,
        cost: CostConstants::REFERENCE,
        seed: 1,
        execution,
    }
}
