use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// One mixture component: mean `A x + b`, diagonal covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineMode {
    /// Row-major `state × cond`.
    pub matrix: Vec<f64>,
    pub offset: Vec<f64>,
    pub variances: Vec<f64>,
}

impl AffineMode {
    pub fn mean(&self, x: &[f64]) -> Vec<f64> {
        let cond = x.len();
        self.offset
            .iter()
            .enumerate()
            .map(|(i, b)| {
                b + self.matrix[i * cond..(i + 1) * cond]
                    .iter()
                    .zip(x)
                    .map(|(a, xi)| a * xi)
                    .sum::<f64>()
            })
            .collect()
    }

    pub fn trace(&self) -> f64 {
        self.variances.iter().sum()
    }
}

/// `p(s | x) = Σ_i w_i N(s; A_i x + b_i, diag(v_i))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalGMM {
    weights: Vec<f64>,
    modes: Vec<AffineMode>,
    state_dim: usize,
    cond_dim: usize,
}

impl ConditionalGMM {
    /// Weights must be non-negative and sum to one; zero-weight components
    /// are allowed and never sampled.
    pub fn new(weights: Vec<f64>, modes: Vec<AffineMode>, cond_dim: usize) -> Result<Self> {
        if modes.is_empty() {
            return Err(Error::InvalidParameter("mixture needs at least one mode".into()));
        }
        check_dim("mixture weights", modes.len(), weights.len())?;
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidParameter(format!("negative mixture weight in {weights:?}")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!("mixture weights sum to {total}, not 1")));
        }
        let state_dim = modes[0].offset.len();
        if state_dim == 0 || cond_dim == 0 {
            return Err(Error::InvalidDims("mixture state and condition must be non-empty".into()));
        }
        for m in &modes {
            check_dim("mode offset", state_dim, m.offset.len())?;
            check_dim("mode matrix", state_dim * cond_dim, m.matrix.len())?;
            check_dim("mode variances", state_dim, m.variances.len())?;
            if m.variances.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::InvalidParameter("mode variances must be positive".into()));
            }
        }
        Ok(ConditionalGMM {
            weights,
            modes,
            state_dim,
            cond_dim,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn modes(&self) -> &[AffineMode] {
        &self.modes
    }

    pub fn num_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn cond_dim(&self) -> usize {
        self.cond_dim
    }

    /// Mode centers `μ_i(x)`.
    pub fn means(&self, x: &[f64]) -> Vec<Vec<f64>> {
        self.modes.iter().map(|m| m.mean(x)).collect()
    }

    /// Mixture mean `Σ w_i μ_i(x)`.
    pub fn mean(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.state_dim];
        for (w, mu) in self.weights.iter().zip(self.means(x)) {
            for (o, m) in out.iter_mut().zip(mu) {
                *o += w * m;
            }
        }
        out
    }

    /// Smallest distance between two mode centers; infinite for one mode.
    pub fn min_separation(&self, x: &[f64]) -> f64 {
        let means = self.means(x);
        let mut best = f64::INFINITY;
        for i in 0..means.len() {
            for j in i + 1..means.len() {
                best = best.min(sq_dist(&means[i], &means[j]).sqrt());
            }
        }
        best
    }

    /// `max_i tr Σ_i`.
    pub fn max_trace(&self) -> f64 {
        self.modes.iter().map(AffineMode::trace).fold(0.0, f64::max)
    }

    /// Total variance `E‖s − E[s|x]‖² = Σ w_i (tr Σ_i + ‖μ_i(x) − μ̄(x)‖²)`.
    pub fn conditional_variance(&self, x: &[f64]) -> f64 {
        let mean = self.mean(x);
        self.weights
            .iter()
            .zip(&self.modes)
            .map(|(w, m)| w * (m.trace() + sq_dist(&m.mean(x), &mean)))
            .sum()
    }

    /// Draw `(mode index, s)`.
    pub fn sample<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Result<(usize, Vec<f64>)> {
        check_dim("mixture condition", self.cond_dim, x.len())?;
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut index = self.weights.iter().rposition(|w| *w > 0.0).unwrap_or(0);
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc && *w > 0.0 {
                index = i;
                break;
            }
        }
        let mode = &self.modes[index];
        let s = mode
            .mean(x)
            .into_iter()
            .zip(&mode.variances)
            .map(|(m, v)| {
                let e: f64 = StandardNormal.sample(rng);
                m + v.sqrt() * e
            })
            .collect();
        Ok((index, s))
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn identity(d: usize) -> Vec<f64> {
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        m[i * d + i] = 1.0;
    }
    m
}

/// Two equal-weight modes at `x ± c·e₁` with covariance `σ² I`; `x` has the
/// same width as `s`.
pub fn make_bimodal_task(c: f64, sigma: f64, state_dim: usize) -> Result<ConditionalGMM> {
    if !(c > 0.0 && c.is_finite()) || !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "bimodal task needs c > 0 and sigma > 0, got c={c}, sigma={sigma}"
        )));
    }
    if state_dim == 0 {
        return Err(Error::InvalidDims("state_dim must be positive".into()));
    }
    let mode = |sign: f64| {
        let mut offset = vec![0.0; state_dim];
        offset[0] = sign * c;
        AffineMode {
            matrix: identity(state_dim),
            offset,
            variances: vec![sigma * sigma; state_dim],
        }
    };
    ConditionalGMM::new(vec![0.5, 0.5], vec![mode(1.0), mode(-1.0)], state_dim)
}

/// `s ~ N(x, σ² I)`.
pub fn make_unimodal_task(sigma: f64, state_dim: usize) -> Result<ConditionalGMM> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!("sigma must be positive, got {sigma}")));
    }
    if state_dim == 0 {
        return Err(Error::InvalidDims("state_dim must be positive".into()));
    }
    ConditionalGMM::new(
        vec![1.0],
        vec![AffineMode {
            matrix: identity(state_dim),
            offset: vec![0.0; state_dim],
            variances: vec![sigma * sigma; state_dim],
        }],
        state_dim,
    )
}
