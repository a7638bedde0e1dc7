//! Central finite-difference checks of the hand-written gradients.
//!
//! Relative error is `|a − n| / max(|a|, |n|, FLOOR)`. Below `FLOOR` the
//! difference quotient is dominated by rounding, so the comparison becomes
//! an absolute one there.

use serde::Serialize;

use crate::error::Result;
use crate::model::{BatchNoise, LatentDiffusionModel, ModelConfig, ModelDims};
use crate::net::Network;
use crate::rng;
use crate::synth::Sample;

pub const FLOOR: f64 = 1e-4;
pub const DEFAULT_STEP: f64 = 1e-5;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Worst disagreement within one layer of one network.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerCheck {
    pub network: String,
    pub layer: usize,
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub layers: Vec<LayerCheck>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.layers.iter().map(|l| l.max_rel_err).fold(0.0, f64::max)
    }

    pub fn checked(&self) -> usize {
        self.layers.iter().map(|l| l.checked).sum()
    }

    pub fn passed(&self, tol: f64) -> bool {
        self.layers.iter().all(|l| l.max_rel_err < tol)
    }

    fn merge(&mut self, other: GradCheckReport) {
        self.layers.extend(other.layers);
    }
}

/// Indices into the flat parameter vector, grouped per layer. Layers with
/// more than `cap` parameters are thinned to `cap` evenly spaced ones.
fn layer_indices(net: &Network, cap: usize) -> Vec<Vec<usize>> {
    let dims = net.layer_dims();
    let mut start = 0;
    let mut out = Vec::with_capacity(net.num_layers());
    for w in dims.windows(2) {
        let len = w[0] * w[1] + w[1];
        let idx = if len <= cap {
            (start..start + len).collect()
        } else {
            (0..cap).map(|i| start + i * len / cap).collect()
        };
        out.push(idx);
        start += len;
    }
    out
}

fn check_params(
    name: &str,
    net: &Network,
    analytic: &[f64],
    cap: usize,
    h: f64,
    mut objective: impl FnMut(&[f64]) -> Result<f64>,
) -> Result<GradCheckReport> {
    let mut params = net.params().to_vec();
    let mut report = GradCheckReport::default();
    for (layer, idx) in layer_indices(net, cap).into_iter().enumerate() {
        let mut check = LayerCheck {
            network: name.to_string(),
            layer,
            checked: idx.len(),
            max_rel_err: 0.0,
            worst_analytic: 0.0,
            worst_numeric: 0.0,
        };
        for i in idx {
            let orig = params[i];
            params[i] = orig + h;
            let up = objective(&params)?;
            params[i] = orig - h;
            let down = objective(&params)?;
            params[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let e = rel_err(analytic[i], numeric);
            if e >= check.max_rel_err {
                check.max_rel_err = e;
                check.worst_analytic = analytic[i];
                check.worst_numeric = numeric;
            }
        }
        report.layers.push(check);
    }
    Ok(report)
}

/// Checks `∂(g·f(x))/∂θ` for the network `f`.
pub fn check_network(net: &Network, x: &[f64], g: &[f64], cap: usize, h: f64) -> Result<GradCheckReport> {
    let (analytic, _) = net.backward(x, g)?;
    let mut probe = net.clone();
    check_params("network", net, &analytic, cap, h, |p| {
        probe.params_mut().copy_from_slice(p);
        Ok(probe.forward(x)?.iter().zip(g).map(|(a, b)| a * b).sum())
    })
}

/// Checks the full training loss against every parameter of all three
/// networks, with the noise held fixed.
pub fn check_model_loss(
    model: &LatentDiffusionModel,
    batch: &[Sample],
    noise: &BatchNoise,
    cap: usize,
    h: f64,
) -> Result<GradCheckReport> {
    let (_, grads) = model.loss_and_grads(batch, noise)?;
    let mut probe = model.clone();
    let mut report = check_params("denoiser", model.denoiser(), &grads.denoiser, cap, h, |p| {
        probe.denoiser_mut().params_mut().copy_from_slice(p);
        Ok(probe.training_loss(batch, noise)?.total)
    })?;
    let mut probe = model.clone();
    report.merge(check_params("prior", model.prior().net(), &grads.prior, cap, h, |p| {
        probe.prior_mut().net_mut().params_mut().copy_from_slice(p);
        Ok(probe.training_loss(batch, noise)?.total)
    })?);
    let mut probe = model.clone();
    report.merge(check_params("posterior", model.posterior().net(), &grads.posterior, cap, h, |p| {
        probe.posterior_mut().net_mut().params_mut().copy_from_slice(p);
        Ok(probe.training_loss(batch, noise)?.total)
    })?);
    Ok(report)
}

/// A small model with random data and noise for [`check_model_loss`].
/// `beta_kl` is set to 1 so the KL path carries as much weight as the
/// noise-prediction path.
pub fn loss_fixture(
    dims: ModelDims,
    num_steps: usize,
    hidden: usize,
    batch_len: usize,
    seed: u64,
) -> Result<(LatentDiffusionModel, Vec<Sample>, BatchNoise)> {
    let mut cfg = ModelConfig::new(dims);
    cfg.denoiser_hidden = vec![hidden, hidden];
    cfg.head_hidden = vec![hidden];
    cfg.schedule.num_steps = num_steps;
    cfg.schedule.beta_hi = 0.2;
    cfg.beta_kl = 1.0;
    cfg.seed = seed;
    let model = LatentDiffusionModel::new(&cfg)?;
    let mut r = rng::stream(seed, "gradcheck", 0);
    let batch: Vec<Sample> = (0..batch_len)
        .map(|_| Sample {
            x: rng::normal_vec(&mut r, dims.cond),
            s: rng::normal_vec(&mut r, dims.state),
        })
        .collect();
    let noise = BatchNoise::draw(&mut r, &model, batch_len);
    Ok((model, batch, noise))
}
