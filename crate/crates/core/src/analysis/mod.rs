//! Distribution distances and the numerical bound checks.

mod assignment;
mod bounds;
mod wasserstein;

pub use assignment::{assignment_cost, min_cost_assignment};
pub use bounds::{
    conditional_variance, error_propagation_mc, evaluate_sample_bound, evaluate_mode_bound, voronoi_project,
    BoundInputs, BoundReport, PropagationEstimate, SampleBoundEval, ModeBoundEval, REPORT_COLUMNS,
};
pub use wasserstein::{w2_1d, w2_estimate, w2_matching, W2Estimate, MATCHING_LIMIT};

use crate::error::{Error, Result};
use crate::model::{BatchNoise, LatentDiffusionModel};
use crate::rng;
use crate::synth::Sample;

/// Noise-prediction MSE and KL(q_ψ ‖ p_φ) of a model on `pairs`, averaged
/// over the pairs with one random step and noise draw each, from the
/// stream `(seed, "fit", 0)`.
pub fn measure_fit(model: &LatentDiffusionModel, pairs: &[Sample], seed: u64) -> Result<(f64, f64)> {
    if pairs.is_empty() {
        return Err(Error::Empty("evaluation pairs"));
    }
    let mut r = rng::stream(seed, "fit", 0);
    let (mut mse, mut kl) = (0.0, 0.0);
    for chunk in pairs.chunks(256) {
        let noise = BatchNoise::draw(&mut r, model, chunk.len());
        let terms = model.training_loss(chunk, &noise)?;
        mse += terms.mse * chunk.len() as f64;
        kl += terms.kl * chunk.len() as f64;
    }
    let n = pairs.len() as f64;
    Ok((mse / n, kl / n))
}
