use rand::Rng;
use rayon::prelude::*;

use super::LatentDiffusionModel;
use crate::error::{check_dim, Result};
use crate::latent::reparameterize;
use crate::rng::{self, normal_vec};

impl LatentDiffusionModel {
    /// Draw `n` states for condition `x`.
    ///
    /// Sample `i` uses the stream `(seed, "sample", i)`, so the output does not
    /// depend on how the work is split across threads. Only the prior head is
    /// consulted.
    pub fn sample(&self, x: &[f64], n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        check_dim("condition", self.dims.cond, x.len())?;
        (0..n)
            .into_par_iter()
            .map(|i| {
                let mut rng = rng::stream(seed, "sample", i as u64);
                self.sample_one(x, &mut rng, |_| {})
            })
            .collect()
    }

    /// One reverse chain. `z` is drawn once from the prior and held for every
    /// step; `visit` sees each step index as it is applied, `K` down to 1.
    ///
    /// Draw order: `z` noise, then `s^K`, then one noise vector per step
    /// `K..=2`.
    pub fn sample_one<R: Rng + ?Sized>(
        &self,
        x: &[f64],
        rng: &mut R,
        mut visit: impl FnMut(usize),
    ) -> Result<Vec<f64>> {
        check_dim("condition", self.dims.cond, x.len())?;
        let (mu, logvar) = self.prior.forward(x)?;
        let z = reparameterize(&mu, &logvar, &normal_vec(rng, self.dims.latent))?;
        let mut s = normal_vec(rng, self.dims.state);
        let zero = vec![0.0; self.dims.state];
        for k in (1..=self.schedule.num_steps()).rev() {
            visit(k);
            let eps = self.denoiser.forward(&self.denoiser_input(&s, x, &z, k))?;
            let noise = if k > 1 { normal_vec(rng, self.dims.state) } else { zero.clone() };
            s = self.schedule.reverse_step(&s, &eps, k, &noise)?;
        }
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use crate::model::{LatentDiffusionModel, ModelConfig, ModelDims};
    use crate::net::{Activation, Network};
    use crate::rng;

    fn model(steps: usize, beta: f64) -> LatentDiffusionModel {
        let mut cfg = ModelConfig::new(ModelDims {
            state: 2,
            cond: 1,
            latent: 3,
        });
        cfg.denoiser_hidden = vec![6];
        cfg.head_hidden = vec![4];
        cfg.schedule.num_steps = steps;
        cfg.schedule.beta_lo = beta;
        cfg.schedule.beta_hi = beta;
        LatentDiffusionModel::new(&cfg).unwrap()
    }

    #[test]
    fn identity_chain_returns_initial_draw() {
        let mut m = model(1, 1e-15);
        *m.denoiser_mut() = Network::zeros(m.denoiser().layer_dims(), Activation::Mish).unwrap();
        let out = m.sample(&[0.4], 5, 77).unwrap();
        for (i, s) in out.iter().enumerate() {
            let mut r = rng::stream(77, "sample", i as u64);
            let _z = rng::normal_vec(&mut r, 3);
            let start = rng::normal_vec(&mut r, 2);
            for (a, b) in s.iter().zip(&start) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn zero_samples() {
        assert!(model(3, 0.1).sample(&[0.0], 0, 1).unwrap().is_empty());
    }

    #[test]
    fn sampling_is_reproducible_and_skips_posterior() {
        let m = model(4, 0.1);
        let a = m.sample(&[0.3], 16, 5).unwrap();
        let b = m.sample(&[0.3], 16, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(m.posterior_evaluations(), 0);
        assert!(m.sample(&[0.3, 0.1], 1, 5).is_err());
    }

    #[test]
    fn visits_each_step_once_descending() {
        let m = model(5, 0.05);
        let mut seen = Vec::new();
        let mut r = rng::stream(0, "visit", 0);
        m.sample_one(&[0.0], &mut r, |k| seen.push(k)).unwrap();
        assert_eq!(seen, vec![5, 4, 3, 2, 1]);
    }
}
