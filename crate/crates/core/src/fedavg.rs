//! Federated averaging round engine and the centralized baseline trainer.
//!
//! One round: select `K` clients, run local SGD on each starting from the
//! global weights, average the client deltas `w - w_k` weighted by example
//! counts, and hand that average to the server optimizer as a
//! pseudo-gradient.

use std::borrow::Borrow;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::{CostConstants, CostLedger};
use crate::data::{
    make_iid_shards, sample_client_batchstream, select_clients, ClientDataset, Population,
    SamplingMode, SamplingPolicy,
};
use crate::error::{Error, Result};
use crate::model::{self, Example, ModelSpec, ParamVector};
use crate::optim::{fvn_perturb, AdamState, FvnConfig, LrSchedule};
use crate::rng::{Purpose, StreamKey};

/// Stream client id used by the centralized trainer's noise.
const CENTRAL_STREAM: u64 = u64::MAX;

/// Everything a client needs to run its local optimization for one round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalTraining {
    pub policy: SamplingPolicy,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub client_lr: f64,
    /// Noise std for this round; zero disables perturbation.
    pub fvn_std: f64,
    pub fvn_transient: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdateResult {
    pub client_id: usize,
    /// `w_r - w_k`
    pub delta: ParamVector,
    /// Examples the client holds.
    pub n_k: usize,
    /// Examples actually drawn this round.
    pub n_k_effective: usize,
    pub local_steps: usize,
    /// Loss of the last local batch, at the weights its gradient was taken.
    pub local_loss_final: f64,
}

/// Runs local SGD on one client. `w_r` is left untouched.
pub fn client_update(
    spec: &ModelSpec,
    w_r: &ParamVector,
    client: &ClientDataset,
    training: &LocalTraining,
    round: u64,
    seed: u64,
) -> Result<ClientUpdateResult> {
    let stream = sample_client_batchstream(
        client,
        &training.policy,
        training.local_epochs,
        training.batch_size,
        round,
        seed,
    )?;
    let noise_key = StreamKey::new(seed, Purpose::Noise)
        .round(round)
        .client(client.client_id as u64);
    let mut w = w_r.clone();
    let mut last_loss = f64::NAN;
    for (step, batch) in stream.resolve(client).iter().enumerate() {
        let probe = if training.fvn_std > 0.0 {
            Some(fvn_perturb(&w, training.fvn_std, noise_key.step(step as u64)))
        } else {
            None
        };
        let at = probe.as_ref().unwrap_or(&w);
        last_loss = model::loss(spec, at, batch)?;
        let g = model::gradient(spec, at, batch)?;
        match probe {
            Some(noisy) if !training.fvn_transient => {
                w = noisy;
                w.axpy(-training.client_lr, &g)?;
            }
            _ => w.axpy(-training.client_lr, &g)?,
        }
    }
    Ok(ClientUpdateResult {
        client_id: client.client_id,
        delta: w_r.sub(&w)?,
        n_k: client.n_k(),
        n_k_effective: stream.examples_used,
        local_steps: stream.batches.len(),
        local_loss_final: last_loss,
    })
}

/// Which example count weights a client's delta in the average.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationWeighting {
    /// Examples drawn this round (after any data limit).
    #[default]
    Effective,
    /// Every example the client holds.
    Full,
}

/// Normalized aggregation weights `n_k / n`, ordered by client id.
pub fn aggregation_weights(
    results: &[ClientUpdateResult],
    weighting: AggregationWeighting,
) -> Result<Vec<(usize, f64)>> {
    if results.is_empty() {
        return Err(Error::EmptyAggregation);
    }
    let mut sorted: Vec<&ClientUpdateResult> = results.iter().collect();
    sorted.sort_by_key(|r| r.client_id);
    let count = |r: &ClientUpdateResult| match weighting {
        AggregationWeighting::Effective => r.n_k_effective,
        AggregationWeighting::Full => r.n_k,
    } as f64;
    let total: f64 = sorted.iter().map(|r| count(r)).sum();
    Ok(sorted.iter().map(|r| (r.client_id, count(r) / total)).collect())
}

/// Weighted average of client deltas. Summation runs in ascending client id
/// order, so the result does not depend on the order of `results`.
pub fn aggregate(results: &[ClientUpdateResult], weighting: AggregationWeighting) -> Result<ParamVector> {
    let weights = aggregation_weights(results, weighting)?;
    let dim = results[0].delta.dim();
    let mut sorted: Vec<&ClientUpdateResult> = results.iter().collect();
    sorted.sort_by_key(|r| r.client_id);
    let mut out = ParamVector::zeros(dim);
    for (r, (_, weight)) in sorted.iter().zip(&weights) {
        out.axpy(*weight, &r.delta)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub enum ServerOptimizer {
    /// `w - lr * w_bar`
    Sgd,
    /// Adam on the pseudo-gradient `w_bar`.
    Adam(AdamState),
}

impl ServerOptimizer {
    pub fn name(&self) -> &'static str {
        match self {
            ServerOptimizer::Sgd => "sgd",
            ServerOptimizer::Adam(_) => "adam",
        }
    }

    pub fn step(&mut self, w: &ParamVector, w_bar: &ParamVector, lr: f64) -> Result<ParamVector> {
        match self {
            ServerOptimizer::Sgd => {
                let mut out = w.clone();
                out.axpy(-lr, w_bar)?;
                Ok(out)
            }
            ServerOptimizer::Adam(state) => {
                state.lr = lr;
                state.step(w, w_bar)
            }
        }
    }
}

pub fn server_update(
    w_r: &ParamVector,
    w_bar: &ParamVector,
    server: &mut ServerOptimizer,
    lr: f64,
) -> Result<ParamVector> {
    server.step(w_r, w_bar, lr)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    #[default]
    Serial,
    Parallel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederatedConfig {
    pub spec: ModelSpec,
    pub policy: SamplingPolicy,
    /// Shard size for the IID arm; defaults to the mean client size.
    pub iid_shard_size: Option<usize>,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub client_lr: f64,
    pub server_schedule: LrSchedule,
    pub fvn: FvnConfig,
    pub weighting: AggregationWeighting,
    pub cost: CostConstants,
    pub seed: u64,
    pub execution: Execution,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    pub round: u64,
    pub selected: Vec<usize>,
    pub local_steps: Vec<usize>,
    /// Total examples drawn across the selected clients.
    pub examples_used: usize,
    pub aggregate_norm: f64,
    pub mean_client_loss: f64,
    pub lr_server: f64,
    pub fvn_std: f64,
    /// Measured mean local steps per selected client.
    pub mu_actual: f64,
    pub cfmq_cumulative: f64,
}

/// Mutable state of a federated experiment.
#[derive(Debug, Clone)]
pub struct Federation {
    config: FederatedConfig,
    population: Population,
    weights: ParamVector,
    server: ServerOptimizer,
    ledger: CostLedger,
}

impl Federation {
    pub fn new(
        config: FederatedConfig,
        population: Population,
        initial: ParamVector,
        server: ServerOptimizer,
    ) -> Result<Self> {
        config.spec.validate()?;
        config.policy.validate(population.num_clients())?;
        config.server_schedule.validate()?;
        config.fvn.validate()?;
        config.cost.validate()?;
        if let ServerOptimizer::Adam(state) = &server {
            state.validate()?;
        }
        if config.local_epochs == 0 || config.batch_size == 0 {
            return Err(Error::InvalidArgument("local_epochs and batch_size must be >= 1".into()));
        }
        if !(config.client_lr >= 0.0) || !config.client_lr.is_finite() {
            return Err(Error::InvalidArgument(format!("client_lr must be >= 0, got {}", config.client_lr)));
        }
        if population.feature_dim() != config.spec.input_dim {
            return Err(Error::DimensionMismatch {
                expected: config.spec.input_dim,
                found: population.feature_dim(),
            });
        }
        if initial.dim() != config.spec.param_count() {
            return Err(Error::DimensionMismatch {
                expected: config.spec.param_count(),
                found: initial.dim(),
            });
        }
        if config.policy.mode == SamplingMode::Iid {
            let shard = resolve_shard_size(&config, &population);
            let needed = shard * config.policy.clients_per_round;
            if shard == 0 || needed > population.total_n() {
                return Err(Error::InsufficientExamples {
                    needed,
                    available: population.total_n(),
                });
            }
        }
        Ok(Federation {
            config,
            population,
            weights: initial,
            server,
            ledger: CostLedger::new(),
        })
    }

    pub fn config(&self) -> &FederatedConfig {
        &self.config
    }

    pub fn population(&self) -> &Population {
        &self.population
    }

    pub fn weights(&self) -> &ParamVector {
        &self.weights
    }

    pub fn ledger(&self) -> &CostLedger {
        &self.ledger
    }

    pub fn local_training(&self, round: u64) -> LocalTraining {
        LocalTraining {
            policy: self.config.policy,
            local_epochs: self.config.local_epochs,
            batch_size: self.config.batch_size,
            client_lr: self.config.client_lr,
            fvn_std: self.config.fvn.std_at(round),
            fvn_transient: self.config.fvn.transient,
        }
    }

    /// Selects this round's participants and runs their local updates
    /// against the current global weights.
    pub fn client_updates(&self, round: u64) -> Result<Vec<ClientUpdateResult>> {
        let k = self.config.policy.clients_per_round;
        let seed = self.config.seed;
        let training = self.local_training(round);
        let shards;
        let participants: Vec<&ClientDataset> = match self.config.policy.mode {
            SamplingMode::NonIid => select_clients(&self.population, k, round, seed)?
                .into_iter()
                .map(|id| &self.population.clients()[id])
                .collect(),
            SamplingMode::Iid => {
                let size = resolve_shard_size(&self.config, &self.population);
                shards = make_iid_shards(&self.population, k, size, round, seed)?;
                shards.iter().collect()
            }
        };
        let run = |c: &&ClientDataset| {
            client_update(&self.config.spec, &self.weights, c, &training, round, seed)
        };
        match self.config.execution {
            Execution::Serial => participants.iter().map(run).collect(),
            Execution::Parallel => participants.par_iter().map(run).collect(),
        }
    }

    /// Aggregates client results, applies the server step and accrues cost.
    pub fn apply_updates(&mut self, round: u64, results: &[ClientUpdateResult]) -> Result<RoundReport> {
        let w_bar = aggregate(results, self.config.weighting)?;
        let lr = self.config.server_schedule.lr_at(round);
        let next = self.server.step(&self.weights, &w_bar, lr)?;
        next.check_finite()?;
        self.weights = next;

        let k = results.len();
        let mut by_id: Vec<&ClientUpdateResult> = results.iter().collect();
        by_id.sort_by_key(|r| r.client_id);
        let total_steps: usize = by_id.iter().map(|r| r.local_steps).sum();
        let mu = total_steps as f64 / k as f64;
        self.ledger.accrue(k as u64, mu, &self.config.cost);
        Ok(RoundReport {
            round,
            selected: by_id.iter().map(|r| r.client_id).collect(),
            local_steps: by_id.iter().map(|r| r.local_steps).collect(),
            examples_used: by_id.iter().map(|r| r.n_k_effective).sum(),
            aggregate_norm: w_bar.norm(),
            mean_client_loss: by_id.iter().map(|r| r.local_loss_final).sum::<f64>() / k as f64,
            lr_server: lr,
            fvn_std: self.config.fvn.std_at(round),
            mu_actual: mu,
            cfmq_cumulative: self.ledger.cfmq_bytes,
        })
    }

    pub fn run_round(&mut self, round: u64) -> Result<RoundReport> {
        let results = self.client_updates(round)?;
        self.apply_updates(round, &results)
    }
}

fn resolve_shard_size(config: &FederatedConfig, population: &Population) -> usize {
    config.iid_shard_size.unwrap_or_else(|| {
        let mean = population.total_n() as f64 / population.num_clients() as f64;
        (mean.round() as usize).max(1)
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CentralizedConfig {
    pub spec: ModelSpec,
    pub schedule: LrSchedule,
    pub noise: FvnConfig,
    pub steps: u64,
    pub batch_size: usize,
    pub seed: u64,
}

/// Stepwise mini-batch trainer over pooled data, reshuffled every epoch.
///
/// The optimizer is the same type the server uses; with
/// [`ServerOptimizer::Sgd`] each step is `w - lr * grad`. Noise uses one
/// stream keyed by step.
pub struct CentralizedTrainer<'a, E> {
    config: CentralizedConfig,
    data: &'a [E],
    weights: ParamVector,
    optimizer: ServerOptimizer,
    order: Vec<usize>,
    cursor: usize,
    epoch: u64,
    step: u64,
}

impl<'a, E: Borrow<Example>> CentralizedTrainer<'a, E> {
    pub fn new(
        config: CentralizedConfig,
        data: &'a [E],
        initial: ParamVector,
        optimizer: ServerOptimizer,
    ) -> Result<Self> {
        config.spec.validate()?;
        // A zero base rate is allowed here as a no-op control run.
        if config.schedule.base_lr() != 0.0 {
            config.schedule.validate()?;
        }
        config.noise.validate()?;
        if config.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        if data.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if initial.dim() != config.spec.param_count() {
            return Err(Error::DimensionMismatch {
                expected: config.spec.param_count(),
                found: initial.dim(),
            });
        }
        Ok(CentralizedTrainer {
            config,
            order: (0..data.len()).collect(),
            cursor: data.len(),
            data,
            weights: initial,
            optimizer,
            epoch: 0,
            step: 0,
        })
    }

    pub fn weights(&self) -> &ParamVector {
        &self.weights
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn optimizer(&self) -> &ServerOptimizer {
        &self.optimizer
    }

    /// Takes one optimizer step and returns the batch loss at the point where
    /// the gradient was evaluated.
    pub fn step(&mut self) -> Result<f64> {
        use rand::seq::SliceRandom;

        let config = &self.config;
        if self.cursor >= self.data.len() {
            let mut rng = StreamKey::new(config.seed, Purpose::Centralized).round(self.epoch).rng();
            self.order.shuffle(&mut rng);
            self.epoch += 1;
            self.cursor = 0;
        }
        let end = (self.cursor + config.batch_size).min(self.data.len());
        let batch: Vec<&Example> =
            self.order[self.cursor..end].iter().map(|&i| self.data[i].borrow()).collect();
        self.cursor = end;

        let step = self.step;
        let std = config.noise.std_at(step);
        let probe = if std > 0.0 {
            let key = StreamKey::new(config.seed, Purpose::Noise).client(CENTRAL_STREAM).step(step);
            Some(fvn_perturb(&self.weights, std, key))
        } else {
            None
        };
        let at = probe.as_ref().unwrap_or(&self.weights);
        let batch_loss = model::loss(&config.spec, at, &batch)?;
        let g = model::gradient(&config.spec, at, &batch)?;
        let base = match &probe {
            Some(noisy) if !config.noise.transient => noisy,
            _ => &self.weights,
        };
        let next = self.optimizer.step(base, &g, config.schedule.lr_at(step))?;
        next.check_finite()?;
        self.weights = next;
        self.step += 1;
        Ok(batch_loss)
    }
}

/// Runs `config.steps` steps of [`CentralizedTrainer`].
///
/// Returns the final weights and the per-step batch loss.
pub fn train_centralized<E: Borrow<Example>>(
    config: &CentralizedConfig,
    data: &[E],
    initial: ParamVector,
    optimizer: &mut ServerOptimizer,
) -> Result<(ParamVector, Vec<f64>)> {
    if config.steps == 0 {
        return Err(Error::InvalidArgument("steps must be >= 1".into()));
    }
    let mut trainer = CentralizedTrainer::new(config.clone(), data, initial, optimizer.clone())?;
    let trace = (0..config.steps).map(|_| trainer.step()).collect::<Result<Vec<f64>>>()?;
    *optimizer = trainer.optimizer;
    Ok((trainer.weights, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_population, CountDistribution, LabelKind, PopulationConfig};
    use proptest::prelude::*;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec()).unwrap()
    }

    fn result(id: usize, n: usize, delta: &[f64]) -> ClientUpdateResult {
        ClientUpdateResult {
            client_id: id,
            delta: pv(delta),
            n_k: n,
            n_k_effective: n,
            local_steps: 1,
            local_loss_final: 0.0,
        }
    }

    fn training(lr: f64) -> LocalTraining {
        LocalTraining {
            policy: SamplingPolicy {
                mode: SamplingMode::NonIid,
                data_limit: None,
                clients_per_round: 1,
            },
            local_epochs: 1,
            batch_size: 1,
            client_lr: lr,
            fvn_std: 0.0,
            fvn_transient: true,
        }
    }

    fn single_client() -> ClientDataset {
        ClientDataset::new(0, vec![Example::new(vec![1.0], 2.0)]).unwrap()
    }

    #[test]
    fn zero_client_lr_gives_zero_delta() {
        let spec = ModelSpec::linear(1);
        let r = client_update(&spec, &pv(&[0.3, 0.1]), &single_client(), &training(0.0), 0, 0).unwrap();
        assert_eq!(r.delta, ParamVector::zeros(2));
    }

    #[test]
    fn one_unit_step_delta_is_gradient() {
        let spec = ModelSpec::linear(1);
        let w = pv(&[0.5, -0.5]);
        let r = client_update(&spec, &w, &single_client(), &training(1.0), 0, 0).unwrap();
        let g = model::gradient(&spec, &w, &single_client().examples).unwrap();
        assert_eq!(r.delta, g);
        assert_eq!(r.local_steps, 1);
    }

    #[test]
    fn quadratic_hand_trace() {
        let spec = ModelSpec::linear(1);
        let w = ParamVector::zeros(2);
        let r = client_update(&spec, &w, &single_client(), &training(0.1), 0, 0).unwrap();
        let w_hat = w.sub(&r.delta).unwrap();
        for (got, want) in w_hat.as_slice().iter().zip([0.4, 0.4]) {
            assert!((got - want).abs() < 1e-15);
        }
        for d in r.delta.as_slice() {
            assert!((d + 0.4).abs() < 1e-15);
        }
        assert_eq!(w, ParamVector::zeros(2));
    }

    #[test]
    fn aggregate_examples() {
        assert_eq!(aggregate(&[result(3, 7, &[1.0, -2.0])], Default::default()).unwrap(), pv(&[1.0, -2.0]));
        let two = [result(0, 1, &[4.0]), result(1, 3, &[0.0])];
        assert_eq!(aggregate(&two, Default::default()).unwrap(), pv(&[1.0]));
        let same = [result(0, 2, &[0.5, 1.5]), result(1, 9, &[0.5, 1.5]), result(2, 4, &[0.5, 1.5])];
        let avg = aggregate(&same, Default::default()).unwrap();
        for (a, b) in avg.as_slice().iter().zip([0.5, 1.5]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(aggregate(&[], Default::default()), Err(Error::EmptyAggregation));
        assert!(aggregate(&[result(0, 1, &[1.0]), result(1, 1, &[1.0, 2.0])], Default::default()).is_err());
    }

    #[test]
    fn full_weighting_uses_total_counts() {
        let mut a = result(0, 4, &[1.0]);
        a.n_k_effective = 1;
        let b = result(1, 4, &[0.0]);
        assert_eq!(aggregate(&[a.clone(), b.clone()], AggregationWeighting::Effective).unwrap(), pv(&[0.2]));
        assert_eq!(aggregate(&[a, b], AggregationWeighting::Full).unwrap(), pv(&[0.5]));
    }

    #[test]
    fn server_update_examples() {
        let mut sgd = ServerOptimizer::Sgd;
        assert_eq!(server_update(&pv(&[1.0]), &pv(&[0.25]), &mut sgd, 1.0).unwrap(), pv(&[0.75]));
        assert_eq!(server_update(&pv(&[1.0]), &pv(&[0.25]), &mut sgd, 0.0).unwrap(), pv(&[1.0]));
        let mut adam = ServerOptimizer::Adam(AdamState::default());
        let w = server_update(&pv(&[1.0]), &pv(&[1.0]), &mut adam, 1e-3).unwrap();
        assert!((w.as_slice()[0] - (1.0 - 1e-3 / (1.0 + 1e-8))).abs() < 1e-15);
    }

    fn small_population(m: usize, n: usize) -> Population {
        generate_population(
            &PopulationConfig {
                num_clients: m,
                feature_dim: 2,
                labels: LabelKind::Classes(2),
                counts: CountDistribution::Fixed(n),
                cluster_spread: 0.5,
                center_scale: 1.0,
                label_noise: 0.2,
            },
            5,
        )
        .unwrap()
    }

    fn fed_config(k: usize) -> FederatedConfig {
        FederatedConfig {
            spec: ModelSpec::logistic(2, 2),
            policy: SamplingPolicy {
                mode: SamplingMode::NonIid,
                data_limit: None,
                clients_per_round: k,
            },
            iid_shard_size: None,
            local_epochs: 2,
            batch_size: 3,
            client_lr: 0.1,
            server_schedule: LrSchedule::Constant { base_lr: 0.05 },
            fvn: FvnConfig::disabled(),
            weighting: AggregationWeighting::Effective,
            cost: CostConstants::REFERENCE,
            seed: 11,
            execution: Execution::Serial,
        }
    }

    #[test]
    fn round_report_is_populated() {
        let pop = small_population(6, 7);
        let mut fed = Federation::new(
            fed_config(3),
            pop,
            ParamVector::zeros(6),
            ServerOptimizer::Adam(AdamState::default()),
        )
        .unwrap();
        let report = fed.run_round(0).unwrap();
        assert_eq!(report.selected.len(), 3);
        // 7 examples, batch 3, 2 epochs -> 6 steps per client.
        assert_eq!(report.local_steps, vec![6, 6, 6]);
        assert_eq!(report.mu_actual, 6.0);
        assert_eq!(report.examples_used, 21);
        assert_eq!(report.cfmq_cumulative, 3.0 * (960e6 + 6.0 * 660e6));
        assert!(report.aggregate_norm > 0.0);
        assert_eq!(fed.ledger().rounds, 1);
    }

    #[test]
    fn config_is_validated() {
        let pop = small_population(2, 3);
        let err = Federation::new(fed_config(3), pop.clone(), ParamVector::zeros(6), ServerOptimizer::Sgd).unwrap_err();
        assert_eq!(err, Error::TooManyClients { requested: 3, available: 2 });
        assert!(Federation::new(fed_config(1), pop.clone(), ParamVector::zeros(5), ServerOptimizer::Sgd).is_err());
        let mut iid = fed_config(2);
        iid.policy.mode = SamplingMode::Iid;
        iid.iid_shard_size = Some(4);
        assert!(matches!(
            Federation::new(iid, pop, ParamVector::zeros(6), ServerOptimizer::Sgd),
            Err(Error::InsufficientExamples { needed: 8, available: 6 })
        ));
    }

    #[test]
    fn centralized_zero_lr_keeps_weights() {
        let pop = small_population(3, 5);
        let data = pop.pooled();
        let cfg = CentralizedConfig {
            spec: ModelSpec::logistic(2, 2),
            schedule: LrSchedule::Constant { base_lr: 0.0 },
            noise: FvnConfig::disabled(),
            steps: 10,
            batch_size: 4,
            seed: 0,
        };
        let w0 = pv(&[0.1, -0.2, 0.3, 0.0, 0.0, 0.0]);
        let mut sgd = ServerOptimizer::Sgd;
        let (w, trace) = train_centralized(&cfg, &data, w0.clone(), &mut sgd).unwrap();
        assert_eq!(trace.len(), 10);
        assert_eq!(w, w0);
    }

    proptest! {
        #[test]
        fn aggregate_is_convex_and_order_free(
            deltas in prop::collection::vec((1usize..50, prop::collection::vec(-10.0f64..10.0, 3)), 1..12),
            rot in 0usize..12,
        ) {
            let results: Vec<ClientUpdateResult> = deltas.iter().enumerate().map(|(i, (n, d))| result(i, *n, d)).collect();
            let weights = aggregation_weights(&results, AggregationWeighting::Effective).unwrap();
            prop_assert!((weights.iter().map(|w| w.1).sum::<f64>() - 1.0).abs() < 1e-12);
            let avg = aggregate(&results, AggregationWeighting::Effective).unwrap();
            for i in 0..3 {
                let lo = results.iter().map(|r| r.delta.as_slice()[i]).fold(f64::INFINITY, f64::min);
                let hi = results.iter().map(|r| r.delta.as_slice()[i]).fold(f64::NEG_INFINITY, f64::max);
                let v = avg.as_slice()[i];
                prop_assert!(v >= lo - 1e-12 * lo.abs().max(1.0) && v <= hi + 1e-12 * hi.abs().max(1.0));
            }
            let mut rotated = results.clone();
            rotated.rotate_left(rot % results.len());
            prop_assert_eq!(aggregate(&rotated, AggregationWeighting::Effective).unwrap(), avg);
        }
    }
}
