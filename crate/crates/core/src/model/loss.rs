use rand::Rng;

use super::LatentDiffusionModel;
use crate::error::{check_dim, Error, Result};
use crate::latent::{kl_diag_gaussians, kl_diag_gaussians_grad, reparameterize};
use crate::rng::normal_vec;
use crate::synth::Sample;

/// The random inputs of one loss evaluation: forward noise `ε`, the
/// reparameterization draw for `z`, and the step `k`, one of each per pair.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNoise {
    pub eps: Vec<Vec<f64>>,
    pub z_eps: Vec<Vec<f64>>,
    pub steps: Vec<usize>,
}

impl BatchNoise {
    pub fn draw<R: Rng + ?Sized>(rng: &mut R, model: &LatentDiffusionModel, len: usize) -> Self {
        let dims = model.dims();
        let num_steps = model.schedule().num_steps();
        let mut noise = BatchNoise {
            eps: Vec::with_capacity(len),
            z_eps: Vec::with_capacity(len),
            steps: Vec::with_capacity(len),
        };
        for _ in 0..len {
            noise.steps.push(rng.random_range(1..=num_steps));
            noise.eps.push(normal_vec(rng, dims.state));
            noise.z_eps.push(normal_vec(rng, dims.latent));
        }
        noise
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub total: f64,
    pub mse: f64,
    pub kl: f64,
}

/// Flat parameter gradients, one vector per network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub denoiser: Vec<f64>,
    pub prior: Vec<f64>,
    pub posterior: Vec<f64>,
}

impl ModelGrads {
    fn zeros(model: &LatentDiffusionModel) -> Self {
        ModelGrads {
            denoiser: vec![0.0; model.denoiser.num_params()],
            prior: vec![0.0; model.prior.net().num_params()],
            posterior: vec![0.0; model.posterior.net().num_params()],
        }
    }
}

impl LatentDiffusionModel {
    fn check_batch(&self, batch: &[Sample], noise: &BatchNoise) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::Empty("training batch"));
        }
        check_dim("noise eps draws", batch.len(), noise.eps.len())?;
        check_dim("noise z draws", batch.len(), noise.z_eps.len())?;
        check_dim("noise step draws", batch.len(), noise.steps.len())?;
        for (pair, (eps, z_eps)) in batch.iter().zip(noise.eps.iter().zip(&noise.z_eps)) {
            check_dim("pair condition", self.dims.cond, pair.x.len())?;
            check_dim("pair state", self.dims.state, pair.s.len())?;
            check_dim("eps draw", self.dims.state, eps.len())?;
            check_dim("z draw", self.dims.latent, z_eps.len())?;
        }
        Ok(())
    }

    /// Batch-mean noise-prediction error plus β_KL times batch-mean
    /// KL(q_ψ ‖ p_φ), with `z` drawn from the posterior.
    pub fn training_loss(&self, batch: &[Sample], noise: &BatchNoise) -> Result<LossTerms> {
        self.check_batch(batch, noise)?;
        let (mut mse, mut kl) = (0.0, 0.0);
        for (i, pair) in batch.iter().enumerate() {
            let (mq, lq) = self.posterior_moments(&pair.x, &pair.s)?;
            let (mp, lp) = self.prior.forward(&pair.x)?;
            kl += kl_diag_gaussians(&mq, &lq, &mp, &lp)?;
            let z = reparameterize(&mq, &lq, &noise.z_eps[i])?;
            let k = noise.steps[i];
            let sk = self.schedule.forward_noise(&pair.s, k, &noise.eps[i])?;
            let pred = self.denoiser.forward(&self.denoiser_input(&sk, &pair.x, &z, k))?;
            mse += pred
                .iter()
                .zip(&noise.eps[i])
                .map(|(p, e)| (p - e).powi(2))
                .sum::<f64>();
        }
        let n = batch.len() as f64;
        let (mse, kl) = (mse / n, kl / n);
        Ok(LossTerms {
            total: mse + self.beta_kl * kl,
            mse,
            kl,
        })
    }

    /// [`Self::training_loss`] together with its gradient for all three
    /// networks.
    pub fn loss_and_grads(&self, batch: &[Sample], noise: &BatchNoise) -> Result<(LossTerms, ModelGrads)> {
        self.check_batch(batch, noise)?;
        let n = batch.len() as f64;
        let dims = self.dims;
        let z_offset = dims.state + dims.cond;
        let mut grads = ModelGrads::zeros(self);
        let (mut mse, mut kl) = (0.0, 0.0);

        for (i, pair) in batch.iter().enumerate() {
            self.note_posterior();
            let mut post_cond = pair.x.clone();
            post_cond.extend_from_slice(&pair.s);
            let post = self.posterior.forward_trace(&post_cond)?;
            let prior = self.prior.forward_trace(&pair.x)?;
            kl += kl_diag_gaussians(&post.mu, &post.logvar, &prior.mu, &prior.logvar)?;

            let z_eps = &noise.z_eps[i];
            let z = reparameterize(&post.mu, &post.logvar, z_eps)?;
            let k = noise.steps[i];
            let eps = &noise.eps[i];
            let sk = self.schedule.forward_noise(&pair.s, k, eps)?;
            let trace = self
                .denoiser
                .forward_trace(&self.denoiser_input(&sk, &pair.x, &z, k))?;

            let g_pred: Vec<f64> = trace
                .output()
                .iter()
                .zip(eps)
                .map(|(p, e)| {
                    mse += (p - e).powi(2);
                    2.0 * (p - e) / n
                })
                .collect();
            let g_input = self
                .denoiser
                .backward_trace(&trace, &g_pred, &mut grads.denoiser)?;
            let g_z = &g_input[z_offset..z_offset + dims.latent];

            let scale = self.beta_kl / n;
            let kg = kl_diag_gaussians_grad(&post.mu, &post.logvar, &prior.mu, &prior.logvar)?;
            let g_mu_q: Vec<f64> = g_z
                .iter()
                .zip(&kg.mu_q)
                .map(|(gz, gk)| gz + scale * gk)
                .collect();
            let g_lv_q: Vec<f64> = (0..dims.latent)
                .map(|j| {
                    g_z[j] * 0.5 * (0.5 * post.logvar[j]).exp() * z_eps[j] + scale * kg.logvar_q[j]
                })
                .collect();
            self.posterior
                .backward(&post, &g_mu_q, &g_lv_q, &mut grads.posterior)?;

            let g_mu_p: Vec<f64> = kg.mu_p.iter().map(|g| scale * g).collect();
            let g_lv_p: Vec<f64> = kg.logvar_p.iter().map(|g| scale * g).collect();
            self.prior.backward(&prior, &g_mu_p, &g_lv_p, &mut grads.prior)?;
        }

        let (mse, kl) = (mse / n, kl / n);
        Ok((
            LossTerms {
                total: mse + self.beta_kl * kl,
                mse,
                kl,
            },
            grads,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, ModelDims};
    use crate::net::{Activation, Network};
    use crate::rng;

    fn tiny(beta_kl: f64) -> LatentDiffusionModel {
        let mut cfg = ModelConfig::new(ModelDims {
            state: 2,
            cond: 2,
            latent: 2,
        });
        cfg.denoiser_hidden = vec![5, 5];
        cfg.head_hidden = vec![4];
        cfg.schedule.num_steps = 2;
        cfg.schedule.beta_hi = 0.3;
        cfg.beta_kl = beta_kl;
        cfg.seed = 21;
        LatentDiffusionModel::new(&cfg).unwrap()
    }

    fn batch(n: usize, seed: u64) -> Vec<Sample> {
        let mut r = rng::stream(seed, "batch", 0);
        (0..n)
            .map(|_| Sample {
                x: rng::normal_vec(&mut r, 2),
                s: rng::normal_vec(&mut r, 2),
            })
            .collect()
    }

    #[test]
    fn empty_batch_is_rejected() {
        let m = tiny(0.1);
        let noise = BatchNoise {
            eps: vec![],
            z_eps: vec![],
            steps: vec![],
        };
        assert!(matches!(m.training_loss(&[], &noise), Err(Error::Empty(_))));
    }

    #[test]
    fn zero_denoiser_gives_expected_mse() {
        // E‖ε‖² = d for unit Gaussian ε; Monte-Carlo over 1e5 draws
        let mut cfg = ModelConfig::new(ModelDims {
            state: 4,
            cond: 1,
            latent: 2,
        });
        cfg.denoiser_hidden = vec![3];
        cfg.head_hidden = vec![3];
        let mut m = LatentDiffusionModel::new(&cfg).unwrap();
        *m.denoiser_mut() = Network::zeros(m.denoiser().layer_dims(), Activation::Mish).unwrap();
        let data: Vec<Sample> = (0..100_000)
            .map(|i| Sample {
                x: vec![i as f64 * 1e-5],
                s: vec![0.5, -0.5, 1.0, 0.0],
            })
            .collect();
        let mut r = rng::stream(3, "noise", 0);
        let noise = BatchNoise::draw(&mut r, &m, data.len());
        let terms = m.training_loss(&data, &noise).unwrap();
        // Var ‖ε‖² = 2d, so the standard error is √(8 / 1e5) ≈ 0.009
        assert!((terms.mse - 4.0).abs() < 0.03, "{}", terms.mse);
    }

    #[test]
    fn identical_heads_have_zero_kl() {
        let mut m = tiny(0.1);
        // posterior ignores s and copies the prior: both start from zero weights
        *m.prior_mut().net_mut() =
            Network::zeros(m.prior().net().layer_dims(), Activation::Relu).unwrap();
        *m.posterior_mut().net_mut() =
            Network::zeros(m.posterior().net().layer_dims(), Activation::Relu).unwrap();
        let data = batch(8, 1);
        let mut r = rng::stream(4, "noise", 0);
        let noise = BatchNoise::draw(&mut r, &m, data.len());
        let terms = m.training_loss(&data, &noise).unwrap();
        assert_eq!(terms.kl, 0.0);
        assert_eq!(terms.total, terms.mse);
    }

    #[test]
    fn perfect_denoiser_gives_zero_mse() {
        // One linear layer that reads ε back out of s^k: with zero z, zero x and
        // the embedding fed a zero weight, ε = (s^k − √ᾱ s) / √(1 − ᾱ) is only
        // exact when s = 0, so use all-zero states.
        let mut cfg = ModelConfig::new(ModelDims {
            state: 1,
            cond: 1,
            latent: 1,
        });
        cfg.denoiser_hidden = vec![];
        cfg.head_hidden = vec![2];
        cfg.schedule.num_steps = 1;
        cfg.schedule.beta_lo = 0.36;
        cfg.schedule.beta_hi = 0.36;
        let mut m = LatentDiffusionModel::new(&cfg).unwrap();
        let input = m.dims().denoiser_input();
        let mut params = vec![0.0; input + 1];
        params[0] = 1.0 / 0.6;
        *m.denoiser_mut() = Network::from_params(&[input, 1], Activation::Mish, false, params).unwrap();
        let data: Vec<Sample> = (0..5).map(|_| Sample { x: vec![0.0], s: vec![0.0] }).collect();
        let mut r = rng::stream(5, "noise", 0);
        let noise = BatchNoise::draw(&mut r, &m, 5);
        let terms = m.training_loss(&data, &noise).unwrap();
        assert!(terms.mse < 1e-28);
    }

    #[test]
    fn grads_agree_with_loss_value() {
        let m = tiny(0.5);
        let data = batch(4, 2);
        let mut r = rng::stream(6, "noise", 0);
        let noise = BatchNoise::draw(&mut r, &m, data.len());
        let plain = m.training_loss(&data, &noise).unwrap();
        let (with_grads, _) = m.loss_and_grads(&data, &noise).unwrap();
        assert!((plain.total - with_grads.total).abs() < 1e-14);
        assert!((plain.kl - with_grads.kl).abs() < 1e-14);
    }
}
