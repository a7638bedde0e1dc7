//! Numerical checks of the error bounds: the sample-error bound through W2
//! and conditional variance, noise-error propagation through the reverse
//! chain, and per-mode error under mode separation.

use rayon::prelude::*;
use serde::Serialize;

use super::wasserstein::w2_estimate;
use crate::error::{check_dim, Error, Result};
use crate::rng::{self, normal_vec};
use crate::schedule::DiffusionSchedule;
use crate::synth::{sq_dist, ConditionalGMM};

/// Nearest center by Euclidean distance; ties go to the lowest index.
pub fn voronoi_project<'a>(s: &[f64], centers: &'a [Vec<f64>]) -> Result<(usize, &'a [f64])> {
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in centers.iter().enumerate() {
        check_dim("voronoi center", s.len(), c.len())?;
        let d = sq_dist(s, c);
        if best.is_none_or(|(_, b)| d < b) {
            best = Some((i, d));
        }
    }
    let (i, _) = best.ok_or(Error::Empty("voronoi centers"))?;
    Ok((i, &centers[i]))
}

/// Σ w_i (tr Σ_i + ‖μ_i(x) − μ̄(x)‖²).
pub fn conditional_variance(task: &ConditionalGMM, x: &[f64]) -> f64 {
    task.conditional_variance(x)
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleBoundEval {
    pub n: usize,
    /// Mean ‖ŝ_i − s_i‖² over index-paired independent draws.
    pub lhs: f64,
    pub lhs_std_err: f64,
    pub w2_sq: f64,
    /// Points per side behind `w2_sq`.
    pub w2_used: usize,
    pub var_true: f64,
    /// 2·W2² + 4·Var.
    pub rhs: f64,
    pub slack: f64,
}

/// `model` and `truth` are independent draws at one condition; pair `i`
/// compares `model[i]` with `truth[i]`.
pub fn evaluate_sample_bound(
    model: &[Vec<f64>],
    truth: &[Vec<f64>],
    var_true: f64,
    seed: u64,
) -> Result<SampleBoundEval> {
    let est = w2_estimate(model, truth, seed)?;
    let sq: Vec<f64> = model.iter().zip(truth).map(|(a, b)| sq_dist(a, b)).collect();
    let (lhs, lhs_std_err) = mean_and_se(&sq);
    let w2_sq = est.w2 * est.w2;
    let rhs = 2.0 * w2_sq + 4.0 * var_true;
    Ok(SampleBoundEval {
        n: model.len(),
        lhs,
        lhs_std_err,
        w2_sq,
        w2_used: est.used,
        var_true,
        rhs,
        slack: rhs - lhs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropagationEstimate {
    pub trials: usize,
    /// Monte-Carlo E‖Δs⁰‖² under Δs^{k−1} = Δs^k + A_k·Δε_k.
    pub measured: f64,
    pub std_err: f64,
    /// Σ A_k²·δ².
    pub closed_form: f64,
    /// C1·K·δ².
    pub bound: f64,
    /// C1·K²·δ².
    pub bound_k_sq: f64,
    /// The same draws pushed through the sampler's own perturbation
    /// recursion Δs^{k−1} = Δs^k/√α_k − c_k·Δε_k.
    pub chain_measured: f64,
    pub chain_std_err: f64,
    /// Σ_k (∏_{i<k} α_i^{-1}) c_k²·δ².
    pub chain_closed_form: f64,
}

/// Injects an independent noise-prediction error Δε_k ~ N(0, δ²/d · I) at
/// every step, starting from Δs^K = 0. Trial `t` uses the stream
/// `(seed, "propagation", t)`.
pub fn error_propagation_mc(
    sched: &DiffusionSchedule,
    delta: f64,
    dim: usize,
    trials: usize,
    seed: u64,
) -> Result<PropagationEstimate> {
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(Error::InvalidParameter(format!("delta must be finite and >= 0, got {delta}")));
    }
    if trials == 0 || dim == 0 {
        return Err(Error::InvalidParameter("trials and dim must be at least 1".into()));
    }
    let k_max = sched.num_steps();
    let a = sched.step_coeffs();
    let scale = delta / (dim as f64).sqrt();
    let d2 = delta * delta;

    // Chain weights: ∏_{i<k} α_i^{-1/2} · c_k.
    let mut chain_w = Vec::with_capacity(k_max);
    let mut head = 1.0;
    for k in 1..=k_max {
        chain_w.push(head * sched.eps_coeff(k));
        head /= sched.alpha(k).sqrt();
    }

    let (amplified, chain): (Vec<f64>, Vec<f64>) = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut r = rng::stream(seed, "propagation", t as u64);
            let mut ds = vec![0.0; dim];
            let mut dc = vec![0.0; dim];
            for k in (1..=k_max).rev() {
                let de: Vec<f64> = normal_vec(&mut r, dim).into_iter().map(|v| v * scale).collect();
                let inv = 1.0 / sched.alpha(k).sqrt();
                let c = sched.eps_coeff(k);
                for j in 0..dim {
                    ds[j] += a[k - 1] * de[j];
                    dc[j] = dc[j] * inv - c * de[j];
                }
            }
            (ds.iter().map(|v| v * v).sum::<f64>(), dc.iter().map(|v| v * v).sum::<f64>())
        })
        .unzip();

    let (measured, std_err) = mean_and_se(&amplified);
    let (chain_measured, chain_std_err) = mean_and_se(&chain);
    let k = k_max as f64;
    Ok(PropagationEstimate {
        trials,
        measured,
        std_err,
        closed_form: a.iter().map(|v| v * v).sum::<f64>() * d2,
        bound: sched.c1() * k * d2,
        bound_k_sq: sched.c1() * k * k * d2,
        chain_measured,
        chain_std_err,
        chain_closed_form: chain_w.iter().map(|v| v * v).sum::<f64>() * d2,
    })
}

/// Quantities feeding the per-mode bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundInputs {
    pub c1: f64,
    pub num_steps: usize,
    pub delta_sq: f64,
    /// Surrogate: measured KL(q_ψ ‖ p_φ), standing in for the intractable
    /// divergence to the true latent posterior.
    pub eps_kl: f64,
    pub c2: f64,
}

impl BoundInputs {
    /// C1·K·δ² + C2·ε_KL.
    pub fn generation_error(&self) -> f64 {
        self.c1 * self.num_steps as f64 * self.delta_sq + self.c2 * self.eps_kl
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeBoundEval {
    pub n: usize,
    /// Per mode: mean ‖ŝ − μ_j(x)‖² over samples nearest to μ_j, `None`
    /// when no sample landed there.
    pub mode_errors: Vec<Option<f64>>,
    pub mode_std_errs: Vec<Option<f64>>,
    pub coverage: Vec<f64>,
    /// Smallest distance between mode centers.
    pub separation: f64,
    pub max_trace: f64,
    /// C1Kδ² + C2ε + 2·max tr Σ + exp(−D²/(8·max tr Σ)).
    pub rhs: f64,
    /// C1Kδ² + C2ε + max tr Σ + exp(−D²/(8σ²)), σ² = C1Kδ² + C2ε + max tr Σ.
    pub rhs_full_variance: f64,
    /// D > 4·√(C1Kδ² + C2ε + max tr Σ).
    pub separation_ok: bool,
    /// D ≥ 2·√d.
    pub dimension_ok: bool,
}

impl ModeBoundEval {
    /// Whether some populated mode's error exceeds `rhs` by more than three
    /// standard errors. Only meaningful when the modes are separated.
    pub fn violated(&self) -> bool {
        self.separation_ok
            && self
                .mode_errors
                .iter()
                .zip(&self.mode_std_errs)
                .any(|(e, se)| matches!((e, se), (Some(e), Some(se)) if e - 3.0 * se > self.rhs))
    }
}

pub fn evaluate_mode_bound(
    samples: &[Vec<f64>],
    task: &ConditionalGMM,
    x: &[f64],
    inputs: &BoundInputs,
) -> Result<ModeBoundEval> {
    if samples.is_empty() {
        return Err(Error::Empty("model samples"));
    }
    let centers = task.means(x);
    let m = centers.len();
    let mut buckets: Vec<Vec<f64>> = vec![Vec::new(); m];
    for s in samples {
        let (j, c) = voronoi_project(s, &centers)?;
        buckets[j].push(sq_dist(s, c));
    }
    let n = samples.len();
    let (mode_errors, mode_std_errs) = buckets
        .iter()
        .map(|b| {
            if b.is_empty() {
                (None, None)
            } else {
                let (mean, se) = mean_and_se(b);
                (Some(mean), Some(se))
            }
        })
        .unzip();
    let coverage = buckets.iter().map(|b| b.len() as f64 / n as f64).collect();

    let separation = task.min_separation(x);
    let max_trace = task.max_trace();
    let gen = inputs.generation_error();
    let exp_term = |sigma_sq: f64| {
        if separation.is_infinite() {
            0.0
        } else {
            (-separation * separation / (8.0 * sigma_sq)).exp()
        }
    };
    let sigma_sq_full = gen + max_trace;
    Ok(ModeBoundEval {
        n,
        mode_errors,
        mode_std_errs,
        coverage,
        separation,
        max_trace,
        rhs: gen + 2.0 * max_trace + exp_term(max_trace),
        rhs_full_variance: gen + max_trace + exp_term(sigma_sq_full),
        separation_ok: separation > 4.0 * sigma_sq_full.sqrt(),
        dimension_ok: separation >= 2.0 * (task.state_dim() as f64).sqrt(),
    })
}

/// Everything the bound checks measured for one condition `x`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub x: Vec<f64>,
    pub inputs: BoundInputs,
    pub sample_bound: SampleBoundEval,
    pub propagation: PropagationEstimate,
    pub mode_bound: ModeBoundEval,
}

/// CSV columns, in order. `mode_errors` and `coverage` hold one value per
/// mode separated by `;`, an empty slot for a mode with no samples; `x` is
/// `;`-separated too.
pub const REPORT_COLUMNS: [&str; 28] = [
    "x",
    "n",
    "w2_sq_hat",
    "w2_points",
    "var_true",
    "delta_sq_hat",
    "eps_kl_hat",
    "c1",
    "c2",
    "K",
    "sample_lhs",
    "sample_lhs_se",
    "sample_rhs",
    "sample_slack",
    "propagation_measured",
    "propagation_se",
    "propagation_closed_form",
    "propagation_rhs",
    "propagation_rhs_k_sq",
    "chain_measured",
    "chain_closed_form",
    "mode_errors",
    "coverage",
    "separation",
    "mode_rhs",
    "mode_rhs_full_variance",
    "separation_ok",
    "dimension_ok",
];

fn join(values: impl Iterator<Item = Option<f64>>) -> String {
    values
        .map(|v| v.map(|v| v.to_string()).unwrap_or_default())
        .collect::<Vec<_>>()
        .join(";")
}

impl BoundReport {
    /// Sample error above its bound, or a populated mode above its bound,
    /// each beyond three standard errors; or the propagation estimate above
    /// C1·K·δ² beyond three standard errors.
    pub fn violations(&self) -> Vec<&'static str> {
        let mut v = Vec::new();
        if self.sample_bound.lhs - 3.0 * self.sample_bound.lhs_std_err > self.sample_bound.rhs {
            v.push("sample error exceeds 2*W2^2 + 4*Var");
        }
        let p = &self.propagation;
        if p.measured - 3.0 * p.std_err > p.bound {
            v.push("propagated error exceeds C1*K*delta^2");
        }
        if self.mode_bound.violated() {
            v.push("per-mode error exceeds its bound");
        }
        v
    }

    pub fn csv_header() -> String {
        REPORT_COLUMNS.join(",")
    }

    pub fn csv_row(&self) -> String {
        let t1 = &self.sample_bound;
        let p = &self.propagation;
        let t2 = &self.mode_bound;
        let i = &self.inputs;
        [
            join(self.x.iter().map(|v| Some(*v))),
            t1.n.to_string(),
            t1.w2_sq.to_string(),
            t1.w2_used.to_string(),
            t1.var_true.to_string(),
            i.delta_sq.to_string(),
            i.eps_kl.to_string(),
            i.c1.to_string(),
            i.c2.to_string(),
            i.num_steps.to_string(),
            t1.lhs.to_string(),
            t1.lhs_std_err.to_string(),
            t1.rhs.to_string(),
            t1.slack.to_string(),
            p.measured.to_string(),
            p.std_err.to_string(),
            p.closed_form.to_string(),
            p.bound.to_string(),
            p.bound_k_sq.to_string(),
            p.chain_measured.to_string(),
            p.chain_closed_form.to_string(),
            join(t2.mode_errors.iter().copied()),
            join(t2.coverage.iter().map(|v| Some(*v))),
            t2.separation.to_string(),
            t2.rhs.to_string(),
            t2.rhs_full_variance.to_string(),
            t2.separation_ok.to_string(),
            t2.dimension_ok.to_string(),
        ]
        .join(",")
    }

    pub fn text(&self) -> String {
        let t1 = &self.sample_bound;
        let p = &self.propagation;
        let t2 = &self.mode_bound;
        let i = &self.inputs;
        let mut out = String::new();
        out += &format!("condition x = {:?}, {} samples\n", self.x, t1.n);
        out += &format!(
            "inputs: delta^2 = {:.6}, eps_KL (surrogate KL(q||p)) = {:.6}, C1 = {:.6}, C2 = {}, K = {}\n",
            i.delta_sq, i.eps_kl, i.c1, i.c2, i.num_steps
        );
        out += "\nsample error vs 2*W2^2 + 4*Var\n";
        out += &format!("  E|s_hat - s|^2 = {:.6} (se {:.6})\n", t1.lhs, t1.lhs_std_err);
        out += &format!(
            "  W2^2 = {:.6} ({} points), Var(s|x) = {:.6}\n",
            t1.w2_sq, t1.w2_used, t1.var_true
        );
        out += &format!("  bound = {:.6}, slack = {:.6}\n", t1.rhs, t1.slack);
        out += &format!("\nnoise-error propagation ({} trials)\n", p.trials);
        out += &format!(
            "  measured = {:.6e} (se {:.2e}), sum A_k^2 delta^2 = {:.6e}\n",
            p.measured, p.std_err, p.closed_form
        );
        out += &format!("  C1*K*delta^2 = {:.6e}, C1*K^2*delta^2 = {:.6e}\n", p.bound, p.bound_k_sq);
        out += &format!(
            "  sampler recursion: measured = {:.6e} (se {:.2e}), closed form = {:.6e}\n",
            p.chain_measured, p.chain_std_err, p.chain_closed_form
        );
        out += "\nper-mode error\n";
        for (j, (e, c)) in t2.mode_errors.iter().zip(&t2.coverage).enumerate() {
            match e {
                Some(e) => out += &format!("  mode {j}: E|s_hat - mu|^2 = {e:.6}, coverage {c:.4}\n"),
                None => out += &format!("  mode {j}: no samples\n"),
            }
        }
        out += &format!(
            "  separation D = {:.6}, max tr Sigma = {:.6}\n",
            t2.separation, t2.max_trace
        );
        out += &format!(
            "  bound (2 max tr) = {:.6}, bound (full-variance form) = {:.6}\n",
            t2.rhs, t2.rhs_full_variance
        );
        out += &format!(
            "  separation condition {}, D >= 2 sqrt(d) {}\n",
            if t2.separation_ok { "holds" } else { "fails (bound not applicable)" },
            if t2.dimension_ok { "holds" } else { "fails" }
        );
        let v = self.violations();
        if v.is_empty() {
            out += "\nall measured quantities within their bounds\n";
        } else {
            for msg in v {
                out += &format!("\nVIOLATION: {msg}\n");
            }
        }
        out
    }
}
