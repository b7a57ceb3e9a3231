use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ConvModel, Result, SrError, SrInput};

/// Optimiser and schedule settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Stagnant validation epochs before the learning rate is cut.
    pub plateau_patience: usize,
    pub decay_factor: f64,
    pub lr_min: f64,
    /// Stagnant validation epochs before training stops.
    pub early_stop_patience: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.99,
            epsilon: 1e-8,
            plateau_patience: 10,
            decay_factor: 0.1,
            lr_min: 1e-7,
            early_stop_patience: 50,
            max_epochs: 500,
            batch_size: 32,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SrError::Config(m.to_string()));
        if !(self.lr > 0.0) || !(self.lr_min > 0.0) || self.lr_min > self.lr {
            return bad("need 0 < lr_min ≤ lr");
        }
        if self.plateau_patience == 0 || self.early_stop_patience == 0 || self.max_epochs == 0 || self.batch_size == 0 {
            return bad("patience, epoch and batch counts must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if !(self.decay_factor > 0.0 && self.decay_factor < 1.0) {
            return bad("decay factor must lie in (0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleEvent {
    Improved,
    Stagnant,
    Decayed { from: f64, to: f64 },
    Stop,
}

/// Reduce-on-plateau learning-rate schedule with early stopping.
#[derive(Debug, Clone)]
pub struct PlateauSchedule {
    lr: f64,
    best: f64,
    since_best: usize,
    since_decay: usize,
    patience: usize,
    factor: f64,
    lr_min: f64,
    stop_after: usize,
}

impl PlateauSchedule {
    pub fn new(cfg: &TrainConfig, initial_loss: f64) -> Self {
        Self {
            lr: cfg.lr,
            best: initial_loss,
            since_best: 0,
            since_decay: 0,
            patience: cfg.plateau_patience,
            factor: cfg.decay_factor,
            lr_min: cfg.lr_min,
            stop_after: cfg.early_stop_patience,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn step(&mut self, val_loss: f64) -> ScheduleEvent {
        if val_loss < self.best {
            self.best = val_loss;
            self.since_best = 0;
            self.since_decay = 0;
            return ScheduleEvent::Improved;
        }
        self.since_best += 1;
        self.since_decay += 1;
        if self.since_best >= self.stop_after {
            return ScheduleEvent::Stop;
        }
        if self.since_decay >= self.patience {
            self.since_decay = 0;
            let from = self.lr;
            self.lr = (self.lr * self.factor).max(self.lr_min);
            if self.lr < from {
                return ScheduleEvent::Decayed { from, to: self.lr };
            }
        }
        ScheduleEvent::Stagnant
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub input: SrInput,
    pub target: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Learning rate used during this epoch.
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Validation loss of the untrained model.
    pub initial_val_loss: f64,
    pub epochs: Vec<EpochLog>,
    /// Epoch whose weights were kept; 0 means the untrained model.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

fn mean_loss(model: &ConvModel, set: &[TrainSample]) -> Result<f64> {
    let losses = set
        .par_iter()
        .map(|s| model.loss(&s.input, s.target.view()))
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / set.len() as f64)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for k in 0..params.len() {
            self.m[k] = cfg.beta1 * self.m[k] + (1.0 - cfg.beta1) * grad[k];
            self.v[k] = cfg.beta2 * self.v[k] + (1.0 - cfg.beta2) * grad[k] * grad[k];
            params[k] -= lr * (self.m[k] / c1) / ((self.v[k] / c2).sqrt() + cfg.epsilon);
        }
    }
}

/// Minimise per-pixel MSE against the targets; the best validation weights
/// are kept.
pub fn train(
    model: &mut ConvModel,
    train_set: &[TrainSample],
    val_set: &[TrainSample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainHistory> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(SrError::Config("training and validation sets must be non-empty".into()));
    }
    let initial = mean_loss(model, val_set)?;
    if !initial.is_finite() {
        return Err(SrError::NonFiniteLoss { epoch: 0, batch: 0 });
    }
    let mut schedule = PlateauSchedule::new(cfg, initial);
    let mut best_params = model.params().to_vec();
    let mut history = TrainHistory {
        initial_val_loss: initial,
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_loss: initial,
        stopped_early: false,
    };
    let n = model.params().len();
    let mut adam = Adam {
        m: vec![0.0; n],
        v: vec![0.0; n],
        t: 0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        let lr = schedule.lr();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let parts = batch
                .par_iter()
                .map(|&i| model.loss_and_grad(&train_set[i].input, train_set[i].target.view()))
                .collect::<Result<Vec<_>>>()?;
            // fixed-order reduction keeps results independent of thread count
            let mut grad = vec![0.0; n];
            let mut loss = 0.0;
            for (l, g) in &parts {
                loss += l;
                for (acc, v) in grad.iter_mut().zip(g) {
                    *acc += v;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(SrError::NonFiniteLoss { epoch, batch: b });
            }
            epoch_loss += loss;
            adam.step(model.params_mut(), &grad, lr, cfg);
        }
        let val_loss = mean_loss(model, val_set)?;
        if !val_loss.is_finite() {
            return Err(SrError::NonFiniteLoss { epoch, batch: usize::MAX });
        }
        let log = EpochLog {
            epoch,
            train_loss: epoch_loss / train_set.len() as f64,
            val_loss,
            lr,
        };
        on_epoch(&log);
        history.epochs.push(log);
        match schedule.step(val_loss) {
            ScheduleEvent::Improved => {
                best_params.copy_from_slice(model.params());
                history.best_epoch = epoch;
                history.best_val_loss = val_loss;
            }
            ScheduleEvent::Stop => {
                history.stopped_early = true;
                break;
            }
            ScheduleEvent::Stagnant | ScheduleEvent::Decayed { .. } => {}
        }
    }
    model.params_mut().copy_from_slice(&best_params);
    Ok(history)
}
