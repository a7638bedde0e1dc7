//! Diagonal Gaussian heads over the latent `z`.

use crate::error::{check_dim, Result};
use crate::net::{Network, Trace};

pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 10.0;

/// A network whose output is `[μ; log σ²]`, each of the latent width.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianHead {
    net: Network,
    latent_dim: usize,
}

/// Forward state kept for [`GaussianHead::backward`].
#[derive(Debug, Clone)]
pub struct HeadTrace {
    trace: Trace,
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
}

impl GaussianHead {
    pub fn new(net: Network) -> Result<Self> {
        let out = net.output_dim();
        if !out.is_multiple_of(2) {
            return Err(crate::Error::InvalidDims(format!(
                "head output width must be even, got {out}"
            )));
        }
        Ok(GaussianHead {
            latent_dim: out / 2,
            net,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn net(&self) -> &Network {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Network {
        &mut self.net
    }

    fn split(&self, raw: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (mu, lv) = raw.split_at(self.latent_dim);
        (
            mu.to_vec(),
            lv.iter().map(|v| v.clamp(LOGVAR_MIN, LOGVAR_MAX)).collect(),
        )
    }

    pub fn forward(&self, cond: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let raw = self.net.forward(cond)?;
        Ok(self.split(&raw))
    }

    pub fn forward_trace(&self, cond: &[f64]) -> Result<HeadTrace> {
        let trace = self.net.forward_trace(cond)?;
        let (mu, logvar) = self.split(trace.output());
        Ok(HeadTrace { trace, mu, logvar })
    }

    /// Backpropagate `(∂L/∂μ, ∂L/∂logσ²)`. The clamp passes no gradient
    /// where it is active.
    pub fn backward(
        &self,
        trace: &HeadTrace,
        grad_mu: &[f64],
        grad_logvar: &[f64],
        param_grads: &mut [f64],
    ) -> Result<Vec<f64>> {
        check_dim("head grad_mu", self.latent_dim, grad_mu.len())?;
        check_dim("head grad_logvar", self.latent_dim, grad_logvar.len())?;
        let raw = trace.trace.output();
        let mut g = Vec::with_capacity(2 * self.latent_dim);
        g.extend_from_slice(grad_mu);
        g.extend(
            grad_logvar
                .iter()
                .zip(&raw[self.latent_dim..])
                .map(|(gl, r)| if (LOGVAR_MIN..=LOGVAR_MAX).contains(r) { *gl } else { 0.0 }),
        );
        self.net.backward_trace(&trace.trace, &g, param_grads)
    }
}

/// z = μ + exp(logσ²/2) ⊙ eps
pub fn reparameterize(mu: &[f64], logvar: &[f64], eps: &[f64]) -> Result<Vec<f64>> {
    check_dim("reparameterize logvar", mu.len(), logvar.len())?;
    check_dim("reparameterize eps", mu.len(), eps.len())?;
    Ok(mu
        .iter()
        .zip(logvar)
        .zip(eps)
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect())
}

/// KL(N(μ_q, σ_q²) ‖ N(μ_p, σ_p²)) for diagonal Gaussians.
pub fn kl_diag_gaussians(
    mu_q: &[f64],
    logvar_q: &[f64],
    mu_p: &[f64],
    logvar_p: &[f64],
) -> Result<f64> {
    let n = mu_q.len();
    check_dim("kl logvar_q", n, logvar_q.len())?;
    check_dim("kl mu_p", n, mu_p.len())?;
    check_dim("kl logvar_p", n, logvar_p.len())?;
    let mut kl = 0.0;
    for j in 0..n {
        let diff = mu_q[j] - mu_p[j];
        kl += logvar_p[j] - logvar_q[j] + (logvar_q[j].exp() + diff * diff) / logvar_p[j].exp()
            - 1.0;
    }
    Ok(0.5 * kl)
}

/// Partial derivatives of [`kl_diag_gaussians`].
#[derive(Debug, Clone, PartialEq)]
pub struct KlGrad {
    pub mu_q: Vec<f64>,
    pub logvar_q: Vec<f64>,
    pub mu_p: Vec<f64>,
    pub logvar_p: Vec<f64>,
}

pub fn kl_diag_gaussians_grad(
    mu_q: &[f64],
    logvar_q: &[f64],
    mu_p: &[f64],
    logvar_p: &[f64],
) -> Result<KlGrad> {
    let n = mu_q.len();
    check_dim("kl logvar_q", n, logvar_q.len())?;
    check_dim("kl mu_p", n, mu_p.len())?;
    check_dim("kl logvar_p", n, logvar_p.len())?;
    let mut g = KlGrad {
        mu_q: vec![0.0; n],
        logvar_q: vec![0.0; n],
        mu_p: vec![0.0; n],
        logvar_p: vec![0.0; n],
    };
    for j in 0..n {
        let inv_var_p = (-logvar_p[j]).exp();
        let var_q = logvar_q[j].exp();
        let diff = mu_q[j] - mu_p[j];
        g.mu_q[j] = diff * inv_var_p;
        g.mu_p[j] = -diff * inv_var_p;
        g.logvar_q[j] = 0.5 * (var_q * inv_var_p - 1.0);
        g.logvar_p[j] = 0.5 * (1.0 - (var_q + diff * diff) * inv_var_p);
    }
    Ok(g)
}
