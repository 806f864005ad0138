//! Mini-batch training loop shared by the three networks.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, Grads, ParamStore};
use crate::scalar::{lit, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    Constant,
    /// Cosine decay from `lr` to `lr / 20` over the run.
    Cosine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub schedule: LrSchedule,
    /// Dropout rate used while training (and the default MC-dropout rate).
    pub dropout: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || !(self.lr > 0.0) {
            return Err(Error::Config("epochs, batch size and learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout rate {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    fn lr_at(&self, epoch: usize) -> f64 {
        match self.schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::Cosine => {
                let floor = self.lr / 20.0;
                let t = epoch as f64 / self.epochs.max(1) as f64;
                floor + 0.5 * (self.lr - floor) * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    /// Task metric (success rate or top-1 accuracy) when evaluated.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metric: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.loss)
    }
}

/// Runs `cfg.epochs` passes over `n` samples.
///
/// `sample` builds the graph for one sample, back-propagates into the
/// supplied gradient buffer and returns the loss. `epoch_end` may report a
/// metric for the log.
pub fn fit<T: Scalar>(
    params: &mut ParamStore<T>,
    n: usize,
    cfg: &TrainConfig,
    mut sample: impl FnMut(&ParamStore<T>, usize, &mut ChaCha8Rng, &mut Grads<T>) -> T,
    mut epoch_end: impl FnMut(&ParamStore<T>, usize) -> Option<f64>,
) -> Result<TrainLog> {
    cfg.validate()?;
    if n == 0 {
        return Err(Error::Config("training set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7472_6169_6e00);
    let mut opt = Adam::new(AdamConfig { lr: cfg.lr, ..Default::default() }, params);
    let mut grads = Grads::zeros_like(params);
    let mut order: Vec<usize> = (0..n).collect();
    let mut log = TrainLog::default();
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        opt.set_lr(lr);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grads.zero();
            for &i in batch {
                let loss = sample(params, i, &mut rng, &mut grads).to_f64().unwrap_or(f64::NAN);
                if !loss.is_finite() {
                    return Err(Error::Divergence { epoch });
                }
                total += loss;
            }
            if !grads.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            grads.scale(lit::<T>(1.0 / batch.len() as f64));
            opt.step(params, &grads);
        }
        let loss = total / n as f64;
        let metric = epoch_end(params, epoch);
        log::info!(
            "epoch {epoch:>4}  loss {loss:.5}  lr {lr:.2e}{}",
            metric.map(|m| format!("  metric {m:.4}")).unwrap_or_default()
        );
        log.epochs.push(EpochLog { epoch, loss, lr, metric });
    }
    Ok(log)
}
