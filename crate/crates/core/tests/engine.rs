mod common;

use common::*;
use fedsim::fedavg::aggregation_weights;
use fedsim::{
    aggregate, make_iid_shards, mu_formula, sample_client_batchstream, AggregationWeighting,
    Execution, Federation, ModelSpec, ParamVector, Population, SamplingMode,
    SamplingPolicy, ServerOptimizer,
};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn iid_reduction_matches_centralized_step() {
    for seed in 0..100 {
        let case = ReductionCase::random(seed);
        let mut fed = Federation::new(
            case.config.clone(),
            case.population.clone(),
            case.weights.clone(),
            ServerOptimizer::Sgd,
        )
        .unwrap();
        fed.run_round(case.round).unwrap();
        let diff = max_abs_diff(fed.weights(), &case.centralized_step());
        assert!(diff <= 1e-12, "seed {seed}: {diff:e}");
    }
}

#[test]
fn one_batch_per_client_is_a_weighted_batch_step() {
    // With b >= n_k each client takes one full-batch step, and n_k weighting
    // turns the average back into the gradient over the union.
    for seed in 0..50 {
        let mut r = rng(1000 + seed);
        let spec = random_spec(&mut r);
        let m = r.random_range(1..=8);
        let sizes: Vec<usize> = (0..m).map(|_| r.random_range(1..=6)).collect();
        let pop = random_population(&spec, &sizes, &mut r);
        let w = random_weights(&spec, 0.5, &mut r);
        let config = plain_config(spec, m, 6, 1.0, 0.7, seed);
        let mut fed = Federation::new(config, pop.clone(), w.clone(), ServerOptimizer::Sgd).unwrap();
        fed.run_round(0).unwrap();
        let g = fedsim::model::gradient(&spec, &w, &pop.pooled()).unwrap();
        let expected = w.sub(&g.scale(0.7)).unwrap();
        let diff = max_abs_diff(fed.weights(), &expected);
        assert!(diff <= 1e-12, "seed {seed}: {diff:e}");
    }
}

#[test]
fn single_client_single_example_is_one_sgd_step() {
    let mut r = rng(5);
    let spec = ModelSpec::mlp(3, 2, 2);
    let pop = random_population(&spec, &[1], &mut r);
    let w = random_weights(&spec, 0.5, &mut r);
    let mut fed = Federation::new(plain_config(spec, 1, 1, 1.0, 1.0, 0), pop.clone(), w.clone(), ServerOptimizer::Sgd).unwrap();
    fed.run_round(0).unwrap();
    let g = fedsim::model::gradient(&spec, &w, &pop.clients()[0].examples).unwrap();
    assert_eq!(max_abs_diff(fed.weights(), &w.sub(&g).unwrap()), 0.0);
}

fn experiment(execution: Execution, fvn: bool, std: f64) -> fedsim::ExperimentConfig {
    let mut c = fedsim::harness::parse_config(
        r#"
mode = "federated"
model = "mlp"
input_dim = 4
hidden_dim = 5
num_classes = 3
num_clients = 30
clients_per_round = 8
rounds = 12
eval_every = 4
data_limit = 10
batch_size = 3
client_lr = 0.05
server_lr = 0.01
fvn_schedule = "linear_ramp"
fvn_ramp_rounds = 6
seed = 21
"#,
    )
    .unwrap();
    c.execution = execution;
    c.fvn = fvn;
    c.fvn_std = std;
    c
}

fn bits(rows: &[fedsim::MetricsRow]) -> Vec<u64> {
    rows.iter()
        .flat_map(|r| {
            [r.train_loss, r.eval_loss, r.eval_accuracy, r.cfmq_terabytes, r.fvn_std, r.lr_server]
                .map(f64::to_bits)
        })
        .collect()
}

#[test]
fn parallel_and_serial_execution_agree_bitwise() {
    let serial = fedsim::harness::run_experiment(&experiment(Execution::Serial, true, 0.05)).unwrap();
    let parallel = fedsim::harness::run_experiment(&experiment(Execution::Parallel, true, 0.05)).unwrap();
    assert_eq!(bits(&serial), bits(&parallel));
}

#[test]
fn zero_noise_schedule_equals_disabled() {
    let off = fedsim::harness::run_experiment(&experiment(Execution::Serial, false, 0.0)).unwrap();
    let zero = fedsim::harness::run_experiment(&experiment(Execution::Serial, true, 0.0)).unwrap();
    assert_eq!(bits(&off), bits(&zero));
    let on = fedsim::harness::run_experiment(&experiment(Execution::Serial, true, 0.05)).unwrap();
    assert_ne!(bits(&off), bits(&on));
}

#[test]
fn client_order_does_not_change_the_round() {
    let mut r = rng(77);
    let spec = ModelSpec::logistic(3, 3);
    let sizes: Vec<usize> = (0..10).map(|_| r.random_range(2..9)).collect();
    let pop = random_population(&spec, &sizes, &mut r);
    let w = random_weights(&spec, 0.3, &mut r);
    let config = plain_config(spec, 6, 2, 0.1, 1.0, 4);
    let mut a = Federation::new(config.clone(), pop.clone(), w.clone(), ServerOptimizer::Sgd).unwrap();
    let mut b = Federation::new(config, pop, w, ServerOptimizer::Sgd).unwrap();
    let results = a.client_updates(3).unwrap();
    let mut reversed = results.clone();
    reversed.reverse();
    let ra = a.apply_updates(3, &results).unwrap();
    let rb = b.apply_updates(3, &reversed).unwrap();
    assert_eq!(a.weights(), b.weights());
    assert_eq!(ra, rb);
}

/// Standard errors of per-coordinate means.
fn mean_and_se(samples: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = samples.len() as f64;
    let dim = samples[0].len();
    let mean: Vec<f64> = (0..dim).map(|j| samples.iter().map(|s| s[j]).sum::<f64>() / n).collect();
    let se = (0..dim)
        .map(|j| {
            let var = samples.iter().map(|s| (s[j] - mean[j]).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        })
        .collect();
    (mean, se)
}

#[test]
fn doubling_k_and_halving_shards_keeps_expected_aggregate() {
    let mut r = rng(9);
    let spec = ModelSpec::logistic(3, 2);
    let pop = random_population(&spec, &[20; 10], &mut r);
    let w = random_weights(&spec, 0.5, &mut r);
    let arm = |k: usize, shard: usize| -> Vec<Vec<f64>> {
        (0..400u64)
            .map(|seed| {
                let mut config = plain_config(spec, k, shard, 0.5, 1.0, seed);
                config.policy.mode = SamplingMode::Iid;
                config.iid_shard_size = Some(shard);
                let fed = Federation::new(config, pop.clone(), w.clone(), ServerOptimizer::Sgd).unwrap();
                let results = fed.client_updates(0).unwrap();
                aggregate(&results, AggregationWeighting::Effective).unwrap().into_vec()
            })
            .collect()
    };
    let (ma, sa) = mean_and_se(&arm(4, 8));
    let (mb, sb) = mean_and_se(&arm(8, 4));
    for j in 0..ma.len() {
        let bound = 3.0 * (sa[j].powi(2) + sb[j].powi(2)).sqrt();
        assert!((ma[j] - mb[j]).abs() <= bound, "coord {j}: {} vs {} (3se {bound})", ma[j], mb[j]);
    }
}

#[test]
fn unit_shards_and_unit_data_limit_have_the_same_form() {
    let mut r = rng(31);
    let spec = ModelSpec::logistic(2, 2);
    let sizes = [5usize, 3, 8, 4, 6, 2];
    let pop = random_population(&spec, &sizes, &mut r);
    let limited = SamplingPolicy {
        mode: SamplingMode::NonIid,
        data_limit: Some(1),
        clients_per_round: 3,
    };
    let rounds = 6000u64;
    let mut hits = vec![vec![0usize; 8]; sizes.len()];
    let mut pool_hits = vec![0usize; pop.total_n()];
    for round in 0..rounds {
        for client in pop.clients() {
            let stream = sample_client_batchstream(client, &limited, 1, 1, round, 3).unwrap();
            assert_eq!(stream.examples_used, 1);
            assert_eq!(stream.batches.len(), 1);
            hits[client.client_id][stream.batches[0][0]] += 1;
        }
        let shards = make_iid_shards(&pop, 3, 1, round, 3).unwrap();
        for shard in &shards {
            assert_eq!(shard.n_k(), 1);
            let stream = sample_client_batchstream(shard, &limited, 1, 1, round, 3).unwrap();
            assert_eq!(stream.batches, vec![vec![0]]);
            let idx = pop.pooled().iter().position(|e| **e == shard.examples[0]).unwrap();
            pool_hits[idx] += 1;
        }
    }
    // Uniform within each client, and uniform over the pool: chi-square
    // statistics stay below the 0.999 quantile for their degrees of freedom.
    let chi2 = |counts: &[usize]| {
        let total: usize = counts.iter().sum();
        let expected = total as f64 / counts.len() as f64;
        counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum::<f64>()
    };
    let q999 = [0.0, 10.83, 13.82, 16.27, 18.47, 20.52, 22.46, 24.32];
    for (id, &n) in sizes.iter().enumerate() {
        assert!(chi2(&hits[id][..n]) < q999[n - 1], "client {id}");
    }
    // 28 pooled examples, 27 degrees of freedom.
    assert!(chi2(&pool_hits) < 55.48);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn measured_mu_matches_closed_form(
        k in 1usize..6,
        b in 1usize..5,
        multiple in 1usize..4,
        e in 1usize..4,
        seed in any::<u64>(),
    ) {
        let per_client = b * multiple;
        let mut r = rng(seed);
        let spec = ModelSpec::linear(2);
        let pop = random_population(&spec, &vec![per_client; k], &mut r);
        let mut config = plain_config(spec, k, b, 0.01, 1.0, seed);
        config.local_epochs = e;
        let mut fed = Federation::new(config, pop, ParamVector::zeros(3), ServerOptimizer::Sgd).unwrap();
        let report = fed.run_round(0).unwrap();
        let n = (per_client * k) as u64;
        prop_assert_eq!(report.mu_actual, mu_formula(e as u64, n, b as u64, k as u64).unwrap());
    }

    #[test]
    fn aggregation_weights_are_a_distribution(
        sizes in prop::collection::vec(1usize..100, 1..20),
    ) {
        let results: Vec<_> = sizes.iter().enumerate().map(|(id, &n)| fedsim::ClientUpdateResult {
            client_id: id,
            delta: ParamVector::zeros(1),
            n_k: n,
            n_k_effective: n,
            local_steps: 1,
            local_loss_final: 0.0,
        }).collect();
        let weights = aggregation_weights(&results, AggregationWeighting::Effective).unwrap();
        let total: f64 = weights.iter().map(|(_, w)| w).sum();
        prop_assert!((total - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn population_dump_round_trips_through_engine() {
    let mut r = rng(8);
    let spec = ModelSpec::logistic(2, 2);
    let pop = random_population(&spec, &[3, 4, 5], &mut r);
    let mut buf = Vec::new();
    pop.write_text(&mut buf).unwrap();
    let back = Population::read_text(buf.as_slice()).unwrap();
    assert_eq!(back, pop);
}
