//! Optimizers, learning-rate schedules and federated variational noise.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParamVector;
use crate::rng::StreamKey;

/// Plain SGD; used as the client optimizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdState {
    pub lr: f64,
}

impl SgdState {
    pub fn new(lr: f64) -> Result<Self> {
        if !(lr >= 0.0) || !lr.is_finite() {
            return Err(Error::InvalidArgument(format!("sgd lr must be finite and >= 0, got {lr}")));
        }
        Ok(SgdState { lr })
    }

    /// `w - lr * g`
    pub fn step(&self, w: &ParamVector, g: &ParamVector) -> Result<ParamVector> {
        sgd_step(self.lr, w, g)
    }
}

pub fn sgd_step(lr: f64, w: &ParamVector, g: &ParamVector) -> Result<ParamVector> {
    let mut out = w.clone();
    out.axpy(-lr, g)?;
    Ok(out)
}

/// Adam with bias correction. The moment buffers are created lazily on the
/// first step, so one state can be built before the model size is known.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Default for AdamState {
    fn default() -> Self {
        AdamState::new(1e-3)
    }
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        AdamState::with_hyperparams(lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyperparams(lr: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        AdamState {
            lr,
            beta1,
            beta2,
            epsilon,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidArgument(format!(
                "adam betas must lie in [0, 1), got ({}, {})",
                self.beta1, self.beta2
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "adam epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    pub fn step(&mut self, w: &ParamVector, g: &ParamVector) -> Result<ParamVector> {
        w.ensure_dim(g)?;
        if self.t == 0 && self.m.is_empty() {
            self.m = vec![0.0; w.dim()];
            self.v = vec![0.0; w.dim()];
        } else if self.m.len() != w.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.m.len(),
                found: w.dim(),
            });
        }
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let mut out = w.clone();
        for (((wi, &gi), mi), vi) in out
            .as_mut_slice()
            .iter_mut()
            .zip(g.as_slice())
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
            *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *wi -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(out)
    }
}

/// Per-round learning-rate schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LrSchedule {
    Constant {
        base_lr: f64,
    },
    /// `base_lr * min(1, (round + 1) / rampup_rounds)`
    LinearRampup {
        base_lr: f64,
        rampup_rounds: u64,
    },
    /// Linear ramp-up, then `decay_rate` applied once every `decay_every`
    /// rounds after the ramp ends.
    RampupThenExpDecay {
        base_lr: f64,
        rampup_rounds: u64,
        decay_rate: f64,
        decay_every: u64,
    },
}

impl LrSchedule {
    pub fn base_lr(&self) -> f64 {
        match *self {
            LrSchedule::Constant { base_lr }
            | LrSchedule::LinearRampup { base_lr, .. }
            | LrSchedule::RampupThenExpDecay { base_lr, .. } => base_lr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let base = self.base_lr();
        if !(base > 0.0) || !base.is_finite() {
            return Err(Error::InvalidArgument(format!("base_lr must be positive, got {base}")));
        }
        if let LrSchedule::RampupThenExpDecay {
            decay_rate,
            decay_every,
            ..
        } = *self
        {
            if !(decay_rate > 0.0 && decay_rate <= 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "decay_rate must lie in (0, 1], got {decay_rate}"
                )));
            }
            if decay_every == 0 {
                return Err(Error::InvalidArgument("decay_every must be >= 1".into()));
            }
        }
        Ok(())
    }

    pub fn lr_at(&self, round: u64) -> f64 {
        match *self {
            LrSchedule::Constant { base_lr } => base_lr,
            LrSchedule::LinearRampup {
                base_lr,
                rampup_rounds,
            } => base_lr * ramp(round, rampup_rounds),
            LrSchedule::RampupThenExpDecay {
                base_lr,
                rampup_rounds,
                decay_rate,
                decay_every,
            } => {
                let decays = round.saturating_sub(rampup_rounds) / decay_every;
                let decay = decay_rate.powf(decays as f64);
                let lr = base_lr * ramp(round, rampup_rounds) * decay;
                // Very late rounds underflow; keep the rate positive.
                if lr == 0.0 && base_lr > 0.0 {
                    f64::MIN_POSITIVE
                } else {
                    lr
                }
            }
        }
    }
}

fn ramp(round: u64, rampup_rounds: u64) -> f64 {
    if rampup_rounds == 0 {
        1.0
    } else {
        (round.saturating_add(1) as f64 / rampup_rounds as f64).min(1.0)
    }
}

pub fn lr_at(schedule: &LrSchedule, round: u64) -> f64 {
    schedule.lr_at(round)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NoiseSchedule {
    Constant(f64),
    /// `std_max * min(1, round / ramp_rounds)`
    LinearRamp { std_max: f64, ramp_rounds: u64 },
}

/// Federated variational noise: every client perturbs its weights with fresh
/// Gaussian noise at each local step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FvnConfig {
    pub enabled: bool,
    pub schedule: NoiseSchedule,
    /// When true the noise only perturbs the weights at which the gradient is
    /// taken and the update is applied to the clean weights. When false the
    /// noisy weights are carried forward.
    pub transient: bool,
}

impl Default for FvnConfig {
    fn default() -> Self {
        FvnConfig::disabled()
    }
}

impl FvnConfig {
    pub fn disabled() -> Self {
        FvnConfig {
            enabled: false,
            schedule: NoiseSchedule::Constant(0.0),
            transient: true,
        }
    }

    pub fn constant(std: f64) -> Self {
        FvnConfig {
            enabled: true,
            schedule: NoiseSchedule::Constant(std),
            transient: true,
        }
    }

    pub fn linear_ramp(std_max: f64, ramp_rounds: u64) -> Self {
        FvnConfig {
            enabled: true,
            schedule: NoiseSchedule::LinearRamp {
                std_max,
                ramp_rounds,
            },
            transient: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = match self.schedule {
            NoiseSchedule::Constant(s) => s,
            NoiseSchedule::LinearRamp { std_max, .. } => std_max,
        };
        if !(s >= 0.0) || !s.is_finite() {
            return Err(Error::InvalidArgument(format!("noise std must be finite and >= 0, got {s}")));
        }
        Ok(())
    }

    pub fn std_at(&self, round: u64) -> f64 {
        if !self.enabled {
            return 0.0;
        }
        match self.schedule {
            NoiseSchedule::Constant(s) => s,
            NoiseSchedule::LinearRamp {
                std_max,
                ramp_rounds,
            } => {
                if ramp_rounds == 0 {
                    std_max
                } else {
                    std_max * (round as f64 / ramp_rounds as f64).min(1.0)
                }
            }
        }
    }
}

pub fn fvn_std_at(config: &FvnConfig, round: u64) -> f64 {
    config.std_at(round)
}

/// `w + N(0, std^2)` drawn from the stream named by `key`. A zero std returns
/// `w` unchanged without touching the stream.
pub fn fvn_perturb(w: &ParamVector, std: f64, key: StreamKey) -> ParamVector {
    if std == 0.0 {
        return w.clone();
    }
    let mut rng = key.rng();
    let mut out = w.clone();
    for x in out.as_mut_slice() {
        *x += std * rng.sample::<f64, _>(StandardNormal);
    }
    out
}
