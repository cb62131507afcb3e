//! Fixtures shared by the integration and acceptance targets.
#![allow(dead_code)]

use fedsim::model::Example;
use fedsim::{
    select_clients, AggregationWeighting, ClientDataset, CostConstants, Execution, FederatedConfig,
    FvnConfig, LrSchedule, ModelKind, ModelSpec, ParamVector, Population, SamplingMode,
    SamplingPolicy,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn random_spec(rng: &mut ChaCha8Rng) -> ModelSpec {
    let d = rng.random_range(1..=5);
    match rng.random_range(0..3) {
        0 => ModelSpec::linear(d),
        1 => ModelSpec::logistic(d, rng.random_range(2..=4)),
        _ => ModelSpec::mlp(d, rng.random_range(1..=4), rng.random_range(2..=4)),
    }
}

pub fn random_example(spec: &ModelSpec, rng: &mut ChaCha8Rng) -> Example {
    let features = (0..spec.input_dim).map(|_| normal(rng)).collect();
    let label = match spec.kind {
        ModelKind::Linear => normal(rng),
        _ => rng.random_range(0..spec.num_classes) as f64,
    };
    Example::new(features, label)
}

pub fn random_weights(spec: &ModelSpec, scale: f64, rng: &mut ChaCha8Rng) -> ParamVector {
    ParamVector::new((0..spec.param_count()).map(|_| scale * normal(rng)).collect()).unwrap()
}

/// Clients holding `sizes[i]` random examples each.
pub fn random_population(spec: &ModelSpec, sizes: &[usize], rng: &mut ChaCha8Rng) -> Population {
    let clients = sizes
        .iter()
        .enumerate()
        .map(|(id, &n)| ClientDataset::new(id, (0..n).map(|_| random_example(spec, rng)).collect()).unwrap())
        .collect();
    Population::new(clients).unwrap()
}

/// FedAvg with plain SGD everywhere and no noise.
pub fn plain_config(spec: ModelSpec, k: usize, batch_size: usize, client_lr: f64, server_lr: f64, seed: u64) -> FederatedConfig {
    FederatedConfig {
        spec,
        policy: SamplingPolicy {
            mode: SamplingMode::NonIid,
            data_limit: None,
            clients_per_round: k,
        },
        iid_shard_size: None,
        local_epochs: 1,
        batch_size,
        client_lr,
        server_schedule: LrSchedule::Constant { base_lr: server_lr },
        fvn: FvnConfig::disabled(),
        weighting: AggregationWeighting::Effective,
        cost: CostConstants::REFERENCE,
        seed,
        execution: Execution::Serial,
    }
}

/// One random instance of the IID-reduction setting: every client holds one
/// example, `b = 1`, `e = 1`, client lr 1, server SGD.
pub struct ReductionCase {
    pub spec: ModelSpec,
    pub population: Population,
    pub weights: ParamVector,
    pub config: FederatedConfig,
    pub round: u64,
}

impl ReductionCase {
    pub fn random(seed: u64) -> Self {
        let mut rng = rng(seed);
        let spec = random_spec(&mut rng);
        let m = rng.random_range(1..=12);
        let k = rng.random_range(1..=m);
        let population = random_population(&spec, &vec![1; m], &mut rng);
        let weights = random_weights(&spec, 0.5, &mut rng);
        let server_lr = rng.random_range(0.1..2.0);
        let config = plain_config(spec, k, 1, 1.0, server_lr, rng.random());
        ReductionCase {
            spec,
            population,
            weights,
            config,
            round: rng.random_range(0..1000),
        }
    }

    /// `w - lr * grad` over the union of the examples selected this round.
    pub fn centralized_step(&self) -> ParamVector {
        let ids = select_clients(
            &self.population,
            self.config.policy.clients_per_round,
            self.round,
            self.config.seed,
        )
        .unwrap();
        let batch: Vec<&Example> = ids
            .iter()
            .flat_map(|&id| self.population.clients()[id].examples.iter())
            .collect();
        let g = fedsim::model::gradient(&self.spec, &self.weights, &batch).unwrap();
        let lr = self.config.server_schedule.lr_at(self.round);
        self.weights.sub(&g.scale(lr)).unwrap()
    }
}

pub fn max_abs_diff(a: &ParamVector, b: &ParamVector) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
