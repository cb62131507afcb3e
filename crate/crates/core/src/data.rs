//! Synthetic "speaker" populations, client selection and per-round sampling.
//!
//! Each client owns a Gaussian feature cluster around a private center. All
//! clients share one labelling rule, so the population is non-IID through
//! feature shift and skewed example counts while still describing a single
//! learning problem.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Gumbel, LogNormal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Example;
use crate::rng::{Purpose, StreamKey};

#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataset {
    pub client_id: usize,
    pub examples: Vec<Example>,
}

impl ClientDataset {
    pub fn new(client_id: usize, examples: Vec<Example>) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::InsufficientExamples {
                needed: 1,
                available: 0,
            });
        }
        Ok(ClientDataset {
            client_id,
            examples,
        })
    }

    /// Number of examples held by the client (`n_k`).
    pub fn n_k(&self) -> usize {
        self.examples.len()
    }
}

/// The pool of `M` clients a round selects from.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    clients: Vec<ClientDataset>,
    feature_dim: usize,
}

impl Population {
    /// Client ids must be dense `0..M` in order, and every example must share
    /// one feature dimension.
    pub fn new(clients: Vec<ClientDataset>) -> Result<Self> {
        let first = clients.first().ok_or(Error::InsufficientExamples {
            needed: 1,
            available: 0,
        })?;
        let feature_dim = first.examples[0].features.len();
        for (i, c) in clients.iter().enumerate() {
            if c.client_id != i {
                return Err(Error::InvalidArgument(format!(
                    "client ids must be dense: position {i} holds id {}",
                    c.client_id
                )));
            }
            if c.examples.is_empty() {
                return Err(Error::InsufficientExamples {
                    needed: 1,
                    available: 0,
                });
            }
            if let Some(ex) = c.examples.iter().find(|e| e.features.len() != feature_dim) {
                return Err(Error::DimensionMismatch {
                    expected: feature_dim,
                    found: ex.features.len(),
                });
            }
        }
        Ok(Population {
            clients,
            feature_dim,
        })
    }

    pub fn clients(&self) -> &[ClientDataset] {
        &self.clients
    }

    pub fn client(&self, id: usize) -> Option<&ClientDataset> {
        self.clients.get(id)
    }

    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn total_n(&self) -> usize {
        self.clients.iter().map(ClientDataset::n_k).sum()
    }

    /// Every example, in client order.
    pub fn pooled(&self) -> Vec<&Example> {
        self.clients.iter().flat_map(|c| c.examples.iter()).collect()
    }

    /// Withholds `floor(fraction * n_k)` random examples from each client
    /// (always leaving at least one) and returns them pooled as an IID
    /// evaluation set.
    pub fn split_eval(&self, fraction: f64, seed: u64) -> Result<(Population, Vec<Example>)> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::InvalidArgument(format!(
                "eval fraction must lie in [0, 1), got {fraction}"
            )));
        }
        let mut train = Vec::with_capacity(self.clients.len());
        let mut eval = Vec::new();
        for c in &self.clients {
            let n = c.n_k();
            let held = ((fraction * n as f64).floor() as usize).min(n - 1);
            let mut rng = StreamKey::new(seed, Purpose::EvalSplit)
                .client(c.client_id as u64)
                .rng();
            let mut held_out = vec![false; n];
            for i in index::sample(&mut rng, n, held).into_vec() {
                held_out[i] = true;
            }
            let mut kept = Vec::with_capacity(n - held);
            for (ex, out) in c.examples.iter().zip(held_out) {
                if out {
                    eval.push(ex.clone());
                } else {
                    kept.push(ex.clone());
                }
            }
            train.push(ClientDataset::new(c.client_id, kept)?);
        }
        Ok((Population::new(train)?, eval))
    }

    /// Writes the line-oriented text form: a `num_clients feature_dim` header,
    /// then one `client_id features... label` line per example.
    pub fn write_text<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{} {}", self.num_clients(), self.feature_dim)?;
        let mut line = String::new();
        for c in &self.clients {
            for ex in &c.examples {
                line.clear();
                write!(line, "{}", c.client_id).unwrap();
                for x in &ex.features {
                    write!(line, " {x:?}").unwrap();
                }
                write!(line, " {:?}", ex.label).unwrap();
                writeln!(out, "{line}")?;
            }
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(input: R) -> Result<Population> {
        let mut lines = input.lines().enumerate();
        let parse_err = |line: usize, message: String| Error::Parse {
            line: line + 1,
            message,
        };
        let (num_clients, feature_dim) = loop {
            let Some((no, line)) = lines.next() else {
                return Err(parse_err(0, "missing header".into()));
            };
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 2 {
                return Err(parse_err(no, "header must be `num_clients feature_dim`".into()));
            }
            let m: usize = fields[0]
                .parse()
                .map_err(|e| parse_err(no, format!("num_clients: {e}")))?;
            let d: usize = fields[1]
                .parse()
                .map_err(|e| parse_err(no, format!("feature_dim: {e}")))?;
            break (m, d);
        };
        let mut per_client: Vec<Vec<Example>> = vec![Vec::new(); num_clients];
        for (no, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let id: usize = fields
                .next()
                .unwrap()
                .parse()
                .map_err(|e| parse_err(no, format!("client_id: {e}")))?;
            if id >= num_clients {
                return Err(parse_err(no, format!("client_id {id} >= num_clients {num_clients}")));
            }
            let values = fields
                .map(|f| f.parse::<f64>().map_err(|e| parse_err(no, format!("{f:?}: {e}"))))
                .collect::<Result<Vec<f64>>>()?;
            if values.len() != feature_dim + 1 {
                return Err(parse_err(
                    no,
                    format!("expected {} values, found {}", feature_dim + 1, values.len()),
                ));
            }
            let (features, label) = values.split_at(feature_dim);
            per_client[id].push(Example::new(features.to_vec(), label[0]));
        }
        let clients = per_client
            .into_iter()
            .enumerate()
            .map(|(id, ex)| ClientDataset::new(id, ex))
            .collect::<Result<Vec<_>>>()?;
        Population::new(clients)
    }
}

/// Distribution of per-client example counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CountDistribution {
    /// `round(exp(N(mu, sigma^2)))`, truncated below at 1.
    LogNormal { mu: f64, sigma: f64 },
    Fixed(usize),
}

/// How labels are assigned from features.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelKind {
    /// `y = teacher . x + noise`
    Regression,
    /// `y = argmax_j (teacher_j . x + noise * gumbel_j)`
    Classes(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PopulationConfig {
    pub num_clients: usize,
    pub feature_dim: usize,
    pub labels: LabelKind,
    pub counts: CountDistribution,
    /// Std of features around each client's center.
    pub cluster_spread: f64,
    /// Std of the client centers around the origin.
    pub center_scale: f64,
    pub label_noise: f64,
}

impl PopulationConfig {
    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidDistribution(m));
        if self.num_clients == 0 {
            return bad("num_clients must be >= 1".into());
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be >= 1".into());
        }
        match self.counts {
            CountDistribution::LogNormal { mu, sigma } => {
                if !mu.is_finite() || !(sigma >= 0.0) || !sigma.is_finite() {
                    return bad(format!("lognormal(mu={mu}, sigma={sigma}) is not valid"));
                }
            }
            CountDistribution::Fixed(0) => return bad("fixed count must be >= 1".into()),
            CountDistribution::Fixed(_) => {}
        }
        if let LabelKind::Classes(c) = self.labels {
            if c < 2 {
                return bad(format!("need at least 2 classes, got {c}"));
            }
        }
        for (name, v) in [
            ("cluster_spread", self.cluster_spread),
            ("center_scale", self.center_scale),
            ("label_noise", self.label_noise),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        Ok(())
    }
}

fn normal_vec<R: Rng>(rng: &mut R, dim: usize, std: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| std * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Generates a synthetic population. Deterministic in `seed`.
pub fn generate_population(config: &PopulationConfig, seed: u64) -> Result<Population> {
    config.validate()?;
    let d = config.feature_dim;
    let outputs = match config.labels {
        LabelKind::Regression => 1,
        LabelKind::Classes(c) => c,
    };
    let mut teacher_rng = StreamKey::new(seed, Purpose::Population).rng();
    let teacher: Vec<Vec<f64>> = (0..outputs)
        .map(|_| normal_vec(&mut teacher_rng, d, 1.0 / (d as f64).sqrt()))
        .collect();
    let count_dist = match config.counts {
        CountDistribution::LogNormal { mu, sigma } => Some(
            LogNormal::new(mu, sigma)
                .map_err(|e| Error::InvalidDistribution(e.to_string()))?,
        ),
        CountDistribution::Fixed(_) => None,
    };
    let gumbel = Gumbel::new(0.0, 1.0).expect("standard gumbel");

    let mut clients = Vec::with_capacity(config.num_clients);
    for id in 0..config.num_clients {
        let mut rng = StreamKey::new(seed, Purpose::Population)
            .client(id as u64 + 1)
            .rng();
        let n = match (config.counts, &count_dist) {
            (CountDistribution::Fixed(n), _) => n,
            (_, Some(dist)) => (dist.sample(&mut rng).round() as usize).max(1),
            _ => unreachable!(),
        };
        let center = normal_vec(&mut rng, d, config.center_scale);
        let examples = (0..n)
            .map(|_| {
                let features: Vec<f64> = center
                    .iter()
                    .map(|c| c + config.cluster_spread * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let score = |t: &Vec<f64>| t.iter().zip(&features).map(|(a, b)| a * b).sum::<f64>();
                let label = match config.labels {
                    LabelKind::Regression => {
                        score(&teacher[0])
                            + config.label_noise * rng.sample::<f64, _>(StandardNormal)
                    }
                    LabelKind::Classes(_) => {
                        let mut best = (0, f64::NEG_INFINITY);
                        for (j, t) in teacher.iter().enumerate() {
                            let s = score(t) + config.label_noise * gumbel.sample(&mut rng);
                            if s > best.1 {
                                best = (j, s);
                            }
                        }
                        best.0 as f64
                    }
                };
                Example::new(features, label)
            })
            .collect();
        clients.push(ClientDataset::new(id, examples)?);
    }
    Population::new(clients)
}

/// Uniformly selects `k` distinct clients without replacement. The result is
/// sorted by client id and depends only on `(seed, round)`.
pub fn select_clients(pop: &Population, k: usize, round: u64, seed: u64) -> Result<Vec<usize>> {
    let m = pop.num_clients();
    if k == 0 {
        return Err(Error::InvalidArgument("clients_per_round must be >= 1".into()));
    }
    if k > m {
        return Err(Error::TooManyClients {
            requested: k,
            available: m,
        });
    }
    let mut rng = StreamKey::new(seed, Purpose::Selection).round(round).rng();
    let mut ids = index::sample(&mut rng, m, k).into_vec();
    ids.sort_unstable();
    Ok(ids)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// Clients train on their own (speaker-split) data.
    NonIid,
    /// Clients are replaced by uniform shards of the pooled data.
    Iid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplingPolicy {
    pub mode: SamplingMode,
    /// Per-round cap on examples drawn from each selected client.
    pub data_limit: Option<usize>,
    pub clients_per_round: usize,
}

impl SamplingPolicy {
    pub fn validate(&self, num_clients: usize) -> Result<()> {
        if self.clients_per_round == 0 {
            return Err(Error::InvalidArgument("clients_per_round must be >= 1".into()));
        }
        if self.clients_per_round > num_clients {
            return Err(Error::TooManyClients {
                requested: self.clients_per_round,
                available: num_clients,
            });
        }
        if self.data_limit == Some(0) {
            return Err(Error::InvalidArgument("data_limit must be >= 1".into()));
        }
        Ok(())
    }
}

/// The batches one client consumes in one round, as indices into its examples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchStream {
    pub batches: Vec<Vec<usize>>,
    /// Distinct examples drawn this round (`min(data_limit, n_k)`).
    pub examples_used: usize,
}

impl BatchStream {
    pub fn resolve<'a>(&self, client: &'a ClientDataset) -> Vec<Vec<&'a Example>> {
        self.batches
            .iter()
            .map(|b| b.iter().map(|&i| &client.examples[i]).collect())
            .collect()
    }
}

/// Draws this round's subset of the client's data (fresh each round when a
/// data limit is set) and cuts `local_epochs` shuffled passes over it into
/// batches of at most `batch_size`.
pub fn sample_client_batchstream(
    client: &ClientDataset,
    policy: &SamplingPolicy,
    local_epochs: usize,
    batch_size: usize,
    round: u64,
    seed: u64,
) -> Result<BatchStream> {
    if local_epochs == 0 || batch_size == 0 {
        return Err(Error::InvalidArgument(format!(
            "local_epochs ({local_epochs}) and batch_size ({batch_size}) must be >= 1"
        )));
    }
    let n = client.n_k();
    let mut rng = StreamKey::new(seed, Purpose::Batches)
        .round(round)
        .client(client.client_id as u64)
        .rng();
    let mut chosen: Vec<usize> = match policy.data_limit {
        Some(limit) if limit < n => index::sample(&mut rng, n, limit).into_vec(),
        _ => (0..n).collect(),
    };
    let examples_used = chosen.len();
    let mut batches = Vec::with_capacity(local_epochs * examples_used.div_ceil(batch_size));
    for _ in 0..local_epochs {
        chosen.shuffle(&mut rng);
        batches.extend(chosen.chunks(batch_size).map(<[usize]>::to_vec));
    }
    Ok(BatchStream {
        batches,
        examples_used,
    })
}

/// Pools all examples and deals `k` disjoint uniform shards of `shard_size`.
/// Shard `i` is reported as client `i`.
pub fn make_iid_shards(
    pop: &Population,
    k: usize,
    shard_size: usize,
    round: u64,
    seed: u64,
) -> Result<Vec<ClientDataset>> {
    if k == 0 || shard_size == 0 {
        return Err(Error::InvalidArgument(format!(
            "need k >= 1 and shard_size >= 1, got k={k}, shard_size={shard_size}"
        )));
    }
    let pooled = pop.pooled();
    let needed = k * shard_size;
    if needed > pooled.len() {
        return Err(Error::InsufficientExamples {
            needed,
            available: pooled.len(),
        });
    }
    let mut rng = StreamKey::new(seed, Purpose::IidShards).round(round).rng();
    let picks = index::sample(&mut rng, pooled.len(), needed).into_vec();
    picks
        .chunks(shard_size)
        .enumerate()
        .map(|(i, chunk)| {
            ClientDataset::new(i, chunk.iter().map(|&j| pooled[j].clone()).collect())
        })
        .collect()
}
