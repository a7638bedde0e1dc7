use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{BatchNoise, LatentDiffusionModel};
use crate::error::{Error, Result};
use crate::net::{AdamW, OptimizerConfig};
use crate::rng;
use crate::synth::Sample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta_kl: f64,
    pub seed: u64,
    pub eval_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            epochs: 100,
            lr: 2e-4,
            weight_decay: 1e-4,
            beta_kl: 0.1,
            seed: 0,
            eval_interval: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch_size must be at least 1".into()));
        }
        if !(self.beta_kl >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "beta_kl must be >= 0, got {}",
                self.beta_kl
            )));
        }
        if self.eval_interval == 0 {
            return Err(Error::InvalidParameter("eval_interval must be at least 1".into()));
        }
        if !(self.lr >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidParameter("lr and weight_decay must be >= 0".into()));
        }
        Ok(())
    }

    pub fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..OptimizerConfig::default()
        }
    }
}

/// Epoch means of the loss terms. `delta_sq` averages `mse` over every epoch
/// since the previous record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub epoch: usize,
    pub mse: f64,
    pub kl: f64,
    pub total: f64,
    pub delta_sq: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<TrainRecord>,
}

impl TrainHistory {
    pub fn last(&self) -> Option<&TrainRecord> {
        self.records.last()
    }

    pub fn first(&self) -> Option<&TrainRecord> {
        self.records.first()
    }
}

/// Joint mini-batch AdamW on θ, φ and ψ.
///
/// Epoch `e` shuffles and draws its noise from the stream
/// `(cfg.seed, "train", e)`. A record is kept at epoch 0, every
/// `eval_interval` epochs, and at the last epoch. On a non-finite loss the
/// model keeps the parameters from before the offending batch.
pub fn train(model: &mut LatentDiffusionModel, data: &[Sample], cfg: &TrainConfig) -> Result<TrainHistory> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("training dataset"));
    }
    model.set_beta_kl(cfg.beta_kl);
    let opt_cfg = cfg.optimizer();
    let mut opt_denoiser = AdamW::for_network(opt_cfg, model.denoiser());
    let mut opt_prior = AdamW::for_network(opt_cfg, model.prior().net());
    let mut opt_posterior = AdamW::for_network(opt_cfg, model.posterior().net());

    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut interval_mse = 0.0;
    let mut interval_epochs = 0usize;
    let mut batch = Vec::with_capacity(cfg.batch_size);

    for epoch in 0..cfg.epochs {
        let mut rng = rng::stream(cfg.seed, "train", epoch as u64);
        order.shuffle(&mut rng);
        let (mut mse, mut kl, mut total, mut weight) = (0.0, 0.0, 0.0, 0.0);

        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| data[i].clone()));
            let noise = BatchNoise::draw(&mut rng, model, batch.len());
            let (terms, grads) = model.loss_and_grads(&batch, &noise)?;
            if !terms.total.is_finite() {
                return Err(Error::NonFinite { epoch, batch: b });
            }
            opt_denoiser.step(model.denoiser_mut(), &grads.denoiser)?;
            opt_prior.step(model.prior_mut().net_mut(), &grads.prior)?;
            opt_posterior.step(model.posterior_mut().net_mut(), &grads.posterior)?;

            let w = batch.len() as f64;
            mse += terms.mse * w;
            kl += terms.kl * w;
            total += terms.total * w;
            weight += w;
        }

        let record = TrainRecord {
            epoch,
            mse: mse / weight,
            kl: kl / weight,
            total: total / weight,
            delta_sq: 0.0,
        };
        interval_mse += record.mse;
        interval_epochs += 1;
        if epoch % cfg.eval_interval == 0 || epoch + 1 == cfg.epochs {
            history.records.push(TrainRecord {
                delta_sq: interval_mse / interval_epochs as f64,
                ..record
            });
            interval_mse = 0.0;
            interval_epochs = 0;
        }
    }

    if let Some(last) = history.last() {
        model.set_training_stats(last.delta_sq, last.kl);
    }
    Ok(history)
}
