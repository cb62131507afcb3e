//! End-to-end experiment execution.

use crate::cost::BYTES_PER_TERABYTE;
use crate::data::{generate_population, Population};
use crate::error::Result;
use crate::fedavg::{CentralizedConfig, CentralizedTrainer, Federation};
use crate::model::{self, Example, ModelSpec, ParamVector};

use super::config::{ExperimentConfig, RunMode};
use super::metrics::MetricsRow;

/// Added to the experiment seed to key the held-out split.
pub const EVAL_SPLIT_SEED_OFFSET: u64 = 0x5eed;

/// Generates the full (pre-split) population an experiment runs on.
pub fn experiment_population(config: &ExperimentConfig) -> Result<Population> {
    config.validate()?;
    generate_population(&config.population_config(), config.seed)
}

struct Evaluator<'a> {
    spec: ModelSpec,
    train: Vec<&'a Example>,
    eval: &'a [Example],
}

impl Evaluator<'_> {
    fn row(&self, w: &ParamVector, round: u64) -> Result<MetricsRow> {
        let train = model::loss(&self.spec, w, &self.train)?;
        let eval = model::evaluate(&self.spec, w, self.eval)?;
        Ok(MetricsRow {
            round,
            train_loss: train,
            eval_loss: eval.loss,
            eval_accuracy: eval.accuracy,
            cfmq_terabytes: 0.0,
            fvn_std: 0.0,
            lr_server: 0.0,
            clients_selected: 0,
        })
    }
}

fn is_eval_point(round: u64, every: u64, last: u64) -> bool {
    round.is_multiple_of(every) || round == last
}

/// Runs one experiment and returns its metrics trace.
///
/// Rows are emitted at round 0 (initial weights), every `eval_every` rounds,
/// and after the final round. Row `r` describes the model after `r` rounds;
/// its `lr_server`, `fvn_std` and `clients_selected` are those of the round
/// that produced it. Centralized runs count optimizer steps as rounds and
/// report zero CFMQ.
///
/// The held-out split withholds 10% (by default) of every client's examples.
/// If that leaves nothing to evaluate on, the training pool is used instead.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<MetricsRow>> {
    let full = experiment_population(config)?;
    let (population, held_out) =
        full.split_eval(config.eval_fraction, config.seed.wrapping_add(EVAL_SPLIT_SEED_OFFSET))?;
    drop(full);
    let spec = config.model_spec();
    let initial = model::init_weights(&spec, config.init_scale, config.seed);
    let fvn = config.fvn_config();
    let schedule = config.server_schedule();

    match config.mode {
        RunMode::Federated => {
            let mut federation = Federation::new(
                config.federated_config(),
                population,
                initial,
                config.server_optimizer(),
            )?;
            let train: Vec<Example> = federation.population().pooled().into_iter().cloned().collect();
            let eval: &[Example] = if held_out.is_empty() { &train } else { &held_out };
            let evaluator = Evaluator {
                spec,
                train: train.iter().collect(),
                eval,
            };
            let mut rows = vec![evaluator.row(federation.weights(), 0)?];
            for r in 0..config.rounds {
                let report = federation.run_round(r)?;
                let done = r + 1;
                if is_eval_point(done, config.eval_every, config.rounds) {
                    let mut row = evaluator.row(federation.weights(), done)?;
                    row.cfmq_terabytes = report.cfmq_cumulative / BYTES_PER_TERABYTE;
                    row.fvn_std = report.fvn_std;
                    row.lr_server = report.lr_server;
                    row.clients_selected = report.selected.len();
                    rows.push(row);
                }
            }
            Ok(rows)
        }
        RunMode::Centralized => {
            let train: Vec<Example> = population.pooled().into_iter().cloned().collect();
            drop(population);
            let eval: &[Example] = if held_out.is_empty() { &train } else { &held_out };
            let evaluator = Evaluator {
                spec,
                train: train.iter().collect(),
                eval,
            };
            let central = CentralizedConfig {
                spec,
                schedule,
                noise: fvn,
                steps: config.rounds,
                batch_size: config.batch_size,
                seed: config.seed,
            };
            let mut trainer =
                CentralizedTrainer::new(central, &train, initial, config.server_optimizer())?;
            let mut rows = vec![evaluator.row(trainer.weights(), 0)?];
            for step in 0..config.rounds {
                trainer.step()?;
                let done = step + 1;
                if is_eval_point(done, config.eval_every, config.rounds) {
                    let mut row = evaluator.row(trainer.weights(), done)?;
                    row.fvn_std = fvn.std_at(step);
                    row.lr_server = schedule.lr_at(step);
                    rows.push(row);
                }
            }
            Ok(rows)
        }
    }
}
