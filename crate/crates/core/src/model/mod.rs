//! The latent-conditioned diffusion model: a noise-prediction network
//! `ε_θ(s^k, x, z, k)`, a prior head `p_φ(z | x)` used at inference and a
//! posterior head `q_ψ(z | x, s)` used only in training.

mod baseline;
mod loss;
mod sample;
mod train;

use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::latent::GaussianHead;
use crate::net::{Activation, Network};
use crate::rng::derive_seed;
use crate::schedule::{DiffusionSchedule, ScheduleSpec};

pub use baseline::{train_baseline, BaselineConfig};
pub use loss::{BatchNoise, LossTerms, ModelGrads};
pub use train::{train, TrainConfig, TrainHistory, TrainRecord};

/// Width of the sinusoidal step embedding appended to the denoiser input.
pub const EMBED_DIM: usize = 8;

/// `[sin(k·f_0), cos(k·f_0), …]` with `f_i = 10000^(−i / 4)`.
pub fn timestep_embedding(k: usize) -> [f64; EMBED_DIM] {
    let mut out = [0.0; EMBED_DIM];
    let half = EMBED_DIM / 2;
    for i in 0..half {
        let freq = 10000f64.powf(-(i as f64) / half as f64);
        let angle = k as f64 * freq;
        out[2 * i] = angle.sin();
        out[2 * i + 1] = angle.cos();
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub state: usize,
    pub cond: usize,
    pub latent: usize,
}

impl ModelDims {
    pub fn denoiser_input(&self) -> usize {
        self.state + self.cond + self.latent + EMBED_DIM
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub dims: ModelDims,
    pub denoiser_hidden: Vec<usize>,
    pub head_hidden: Vec<usize>,
    pub schedule: ScheduleSpec,
    pub beta_kl: f64,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(dims: ModelDims) -> Self {
        ModelConfig {
            dims,
            denoiser_hidden: vec![64, 64, 64],
            head_hidden: vec![64, 64],
            schedule: ScheduleSpec::default(),
            beta_kl: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug)]
pub struct LatentDiffusionModel {
    denoiser: Network,
    prior: GaussianHead,
    posterior: GaussianHead,
    schedule: DiffusionSchedule,
    dims: ModelDims,
    beta_kl: f64,
    delta_sq: f64,
    eps_kl: f64,
    posterior_evals: AtomicUsize,
}

impl Clone for LatentDiffusionModel {
    fn clone(&self) -> Self {
        LatentDiffusionModel {
            denoiser: self.denoiser.clone(),
            prior: self.prior.clone(),
            posterior: self.posterior.clone(),
            schedule: self.schedule.clone(),
            dims: self.dims,
            beta_kl: self.beta_kl,
            delta_sq: self.delta_sq,
            eps_kl: self.eps_kl,
            posterior_evals: AtomicUsize::new(self.posterior_evals.load(Ordering::Relaxed)),
        }
    }
}

fn widths(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut v = Vec::with_capacity(hidden.len() + 2);
    v.push(input);
    v.extend_from_slice(hidden);
    v.push(output);
    v
}

impl LatentDiffusionModel {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        let d = cfg.dims;
        if d.state == 0 || d.cond == 0 || d.latent == 0 {
            return Err(Error::InvalidDims(format!("all model widths must be positive: {d:?}")));
        }
        let denoiser = Network::new(
            &widths(d.denoiser_input(), &cfg.denoiser_hidden, d.state),
            Activation::Mish,
            derive_seed(cfg.seed, "denoiser", 0),
        )?
        .with_residual(true);
        let prior = GaussianHead::new(Network::new(
            &widths(d.cond, &cfg.head_hidden, 2 * d.latent),
            Activation::Relu,
            derive_seed(cfg.seed, "prior", 0),
        )?)?;
        let posterior = GaussianHead::new(Network::new(
            &widths(d.cond + d.state, &cfg.head_hidden, 2 * d.latent),
            Activation::Relu,
            derive_seed(cfg.seed, "posterior", 0),
        )?)?;
        Self::from_parts(denoiser, prior, posterior, cfg.schedule.build()?, d, cfg.beta_kl)
    }

    pub fn from_parts(
        denoiser: Network,
        prior: GaussianHead,
        posterior: GaussianHead,
        schedule: DiffusionSchedule,
        dims: ModelDims,
        beta_kl: f64,
    ) -> Result<Self> {
        check_dim("denoiser input", dims.denoiser_input(), denoiser.input_dim())?;
        check_dim("denoiser output", dims.state, denoiser.output_dim())?;
        check_dim("prior input", dims.cond, prior.input_dim())?;
        check_dim("prior latent", dims.latent, prior.latent_dim())?;
        check_dim("posterior input", dims.cond + dims.state, posterior.input_dim())?;
        check_dim("posterior latent", dims.latent, posterior.latent_dim())?;
        if !(beta_kl >= 0.0) {
            return Err(Error::InvalidParameter(format!("beta_kl must be >= 0, got {beta_kl}")));
        }
        Ok(LatentDiffusionModel {
            denoiser,
            prior,
            posterior,
            schedule,
            dims,
            beta_kl,
            delta_sq: f64::NAN,
            eps_kl: f64::NAN,
            posterior_evals: AtomicUsize::new(0),
        })
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn schedule(&self) -> &DiffusionSchedule {
        &self.schedule
    }

    pub fn denoiser(&self) -> &Network {
        &self.denoiser
    }

    pub fn prior(&self) -> &GaussianHead {
        &self.prior
    }

    pub fn posterior(&self) -> &GaussianHead {
        &self.posterior
    }

    pub fn denoiser_mut(&mut self) -> &mut Network {
        &mut self.denoiser
    }

    pub fn prior_mut(&mut self) -> &mut GaussianHead {
        &mut self.prior
    }

    pub fn posterior_mut(&mut self) -> &mut GaussianHead {
        &mut self.posterior
    }

    pub fn beta_kl(&self) -> f64 {
        self.beta_kl
    }

    pub fn set_beta_kl(&mut self, beta_kl: f64) {
        self.beta_kl = beta_kl;
    }

    /// Noise-prediction MSE from the last training interval, NaN if untrained.
    pub fn delta_sq(&self) -> f64 {
        self.delta_sq
    }

    /// KL(q_ψ ‖ p_φ) from the last training interval, NaN if untrained.
    pub fn eps_kl(&self) -> f64 {
        self.eps_kl
    }

    pub fn set_training_stats(&mut self, delta_sq: f64, eps_kl: f64) {
        self.delta_sq = delta_sq;
        self.eps_kl = eps_kl;
    }

    /// How many times the posterior head has been evaluated.
    pub fn posterior_evaluations(&self) -> usize {
        self.posterior_evals.load(Ordering::Relaxed)
    }

    fn note_posterior(&self) {
        self.posterior_evals.fetch_add(1, Ordering::Relaxed);
    }

    fn denoiser_input(&self, sk: &[f64], x: &[f64], z: &[f64], k: usize) -> Vec<f64> {
        let mut input = Vec::with_capacity(self.dims.denoiser_input());
        input.extend_from_slice(sk);
        input.extend_from_slice(x);
        input.extend_from_slice(z);
        input.extend_from_slice(&timestep_embedding(k));
        input
    }

    /// ε_θ(s^k, x, z, k).
    pub fn predict_noise(&self, sk: &[f64], x: &[f64], z: &[f64], k: usize) -> Result<Vec<f64>> {
        check_dim("state", self.dims.state, sk.len())?;
        check_dim("condition", self.dims.cond, x.len())?;
        check_dim("latent", self.dims.latent, z.len())?;
        self.schedule.check_step(k)?;
        self.denoiser.forward(&self.denoiser_input(sk, x, z, k))
    }

    /// Posterior moments for a training pair. Counts as a posterior access.
    pub fn posterior_moments(&self, x: &[f64], s: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.note_posterior();
        let mut cond = x.to_vec();
        cond.extend_from_slice(s);
        self.posterior.forward(&cond)
    }

    /// KL(q_ψ(z | x, s) ‖ p_φ(z | x)) for one pair.
    pub fn pair_kl(&self, x: &[f64], s: &[f64]) -> Result<f64> {
        let (mq, lq) = self.posterior_moments(x, s)?;
        let (mp, lp) = self.prior.forward(x)?;
        crate::latent::kl_diag_gaussians(&mq, &lq, &mp, &lp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedding_is_distinct_per_step() {
        let e: Vec<_> = (1..=5).map(timestep_embedding).collect();
        for i in 0..5 {
            for j in i + 1..5 {
                assert_ne!(e[i], e[j]);
            }
        }
        assert_eq!(timestep_embedding(0)[1], 1.0);
    }

    #[test]
    fn layer_widths_follow_dims() {
        let dims = ModelDims {
            state: 2,
            cond: 3,
            latent: 4,
        };
        let m = LatentDiffusionModel::new(&ModelConfig::new(dims)).unwrap();
        assert_eq!(m.denoiser().input_dim(), 2 + 3 + 4 + EMBED_DIM);
        assert_eq!(m.denoiser().output_dim(), 2);
        assert_eq!(m.prior().input_dim(), 3);
        assert_eq!(m.posterior().input_dim(), 5);
        assert_eq!(m.prior().latent_dim(), 4);
        assert!(m.denoiser().residual());
    }

    #[test]
    fn rejects_mismatched_parts() {
        let dims = ModelDims {
            state: 1,
            cond: 1,
            latent: 2,
        };
        let m = LatentDiffusionModel::new(&ModelConfig::new(dims)).unwrap();
        let wrong = ModelDims { latent: 3, ..dims };
        assert!(LatentDiffusionModel::from_parts(
            m.denoiser().clone(),
            m.prior().clone(),
            m.posterior().clone(),
            m.schedule().clone(),
            wrong,
            0.1
        )
        .is_err());
        assert!(m.predict_noise(&[0.0], &[0.0], &[0.0], 1).is_err());
        assert!(m.predict_noise(&[0.0], &[0.0], &[0.0, 0.0], 6).is_err());
    }
}
