use rand::seq::SliceRandom;

use super::TrainConfig;
use crate::error::{check_dim, Error, Result};
use crate::net::{Activation, AdamW, Network};
use crate::rng;
use crate::synth::Sample;

/// Deterministic regressor `x → ŝ` trained on squared error. On a
/// one-to-many task it converges to the conditional mean.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineConfig {
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
}

/// Returns the network and its per-epoch mean squared error.
pub fn train_baseline(data: &[Sample], cfg: &BaselineConfig) -> Result<(Network, Vec<f64>)> {
    cfg.train.validate()?;
    let first = data.first().ok_or(Error::Empty("training dataset"))?;
    let (dx, ds) = (first.x.len(), first.s.len());
    for pair in data {
        check_dim("baseline condition", dx, pair.x.len())?;
        check_dim("baseline state", ds, pair.s.len())?;
    }
    let mut dims = vec![dx];
    dims.extend_from_slice(&cfg.hidden);
    dims.push(ds);
    let mut net = Network::new(&dims, Activation::Relu, rng::derive_seed(cfg.train.seed, "baseline", 0))?;
    let mut opt = AdamW::for_network(cfg.train.optimizer(), &net);
    let mut grads = vec![0.0; net.num_params()];
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut losses = Vec::with_capacity(cfg.train.epochs);

    for epoch in 0..cfg.train.epochs {
        let mut rng = rng::stream(cfg.train.seed, "baseline-train", epoch as u64);
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for (b, chunk) in order.chunks(cfg.train.batch_size).enumerate() {
            grads.iter_mut().for_each(|g| *g = 0.0);
            let n = chunk.len() as f64;
            let mut batch_loss = 0.0;
            for &i in chunk {
                let trace = net.forward_trace(&data[i].x)?;
                let g: Vec<f64> = trace
                    .output()
                    .iter()
                    .zip(&data[i].s)
                    .map(|(p, s)| {
                        batch_loss += (p - s).powi(2);
                        2.0 * (p - s) / n
                    })
                    .collect();
                net.backward_trace(&trace, &g, &mut grads)?;
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFinite { epoch, batch: b });
            }
            opt.step(&mut net, &grads)?;
            sum += batch_loss;
        }
        losses.push(sum / data.len() as f64);
    }
    Ok((net, losses))
}
