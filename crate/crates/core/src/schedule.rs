//! Noise schedules, the closed-form forward process and the single reverse
//! step, plus the error-amplification constants of the unrolled reverse chain.
//!
//! Steps are 1-based throughout: `k = 1..=K`, with `betas[k - 1]` holding
//! β for step `k`. All arithmetic is `f64`.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Linear,
    Cosine,
}

impl std::str::FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ScheduleKind::Linear),
            "cosine" => Ok(ScheduleKind::Cosine),
            other => Err(Error::InvalidParameter(format!("unknown schedule kind `{other}`"))),
        }
    }
}

/// The four numbers a schedule is rebuilt from. Checkpoints store this,
/// never the derived sequences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    #[serde(rename = "K")]
    pub num_steps: usize,
    pub beta_lo: f64,
    pub beta_hi: f64,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        ScheduleSpec {
            kind: ScheduleKind::Linear,
            num_steps: 5,
            beta_lo: 1e-4,
            beta_hi: 0.02,
        }
    }
}

impl ScheduleSpec {
    pub fn build(&self) -> Result<DiffusionSchedule> {
        build_schedule(self.kind, self.num_steps, self.beta_lo, self.beta_hi)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    spec: ScheduleSpec,
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    step_coeffs: Vec<f64>,
    c1: f64,
}

const COSINE_OFFSET: f64 = 0.008;
const COSINE_MAX_BETA: f64 = 0.999;

/// Build a schedule.
///
/// `Linear` spaces β evenly over `[beta_lo, beta_hi]`. `Cosine` takes β from
/// the squared-cosine ᾱ profile (offset 0.008) clipped to `(0, 0.999]`; the
/// bounds are validated but do not shape it.
pub fn build_schedule(
    kind: ScheduleKind,
    num_steps: usize,
    beta_lo: f64,
    beta_hi: f64,
) -> Result<DiffusionSchedule> {
    if num_steps == 0 {
        return Err(Error::InvalidRange("number of steps must be at least 1".into()));
    }
    if !(beta_lo > 0.0 && beta_lo <= beta_hi && beta_hi < 1.0) {
        return Err(Error::InvalidRange(format!(
            "need 0 < beta_lo <= beta_hi < 1, got beta_lo={beta_lo}, beta_hi={beta_hi}"
        )));
    }

    let betas: Vec<f64> = match kind {
        ScheduleKind::Linear => {
            if num_steps == 1 {
                vec![beta_lo]
            } else {
                let span = beta_hi - beta_lo;
                let last = (num_steps - 1) as f64;
                (0..num_steps)
                    .map(|i| beta_lo + span * i as f64 / last)
                    .collect()
            }
        }
        ScheduleKind::Cosine => {
            let profile = |t: f64| {
                let u = (t / num_steps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET);
                (u * std::f64::consts::FRAC_PI_2).cos().powi(2)
            };
            let f0 = profile(0.0);
            (1..=num_steps)
                .map(|k| {
                    let prev = profile((k - 1) as f64) / f0;
                    let cur = profile(k as f64) / f0;
                    (1.0 - cur / prev).clamp(f64::MIN_POSITIVE, COSINE_MAX_BETA)
                })
                .collect()
        }
    };

    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let alpha_bars: Vec<f64> = alphas
        .iter()
        .scan(1.0, |acc, a| {
            *acc *= a;
            Some(*acc)
        })
        .collect();

    let (step_coeffs, c1) = amplification(&betas, &alphas, &alpha_bars);

    Ok(DiffusionSchedule {
        spec: ScheduleSpec {
            kind,
            num_steps,
            beta_lo,
            beta_hi,
        },
        betas,
        alphas,
        alpha_bars,
        step_coeffs,
        c1,
    })
}

/// A_k = (∏_{i>k} α_i^{-1/2}) · β_k / √(α_k (1 − ᾱ_k)), C1 = max_k A_k².
fn amplification(betas: &[f64], alphas: &[f64], alpha_bars: &[f64]) -> (Vec<f64>, f64) {
    let n = betas.len();
    let mut coeffs = vec![0.0; n];
    let mut tail = 1.0;
    for i in (0..n).rev() {
        coeffs[i] = tail * betas[i] / (alphas[i] * (1.0 - alpha_bars[i])).sqrt();
        tail /= alphas[i].sqrt();
    }
    let c1 = coeffs.iter().map(|a| a * a).fold(0.0, f64::max);
    (coeffs, c1)
}

impl DiffusionSchedule {
    pub fn spec(&self) -> ScheduleSpec {
        self.spec
    }

    pub fn num_steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn beta(&self, k: usize) -> f64 {
        self.betas[k - 1]
    }

    pub fn alpha(&self, k: usize) -> f64 {
        self.alphas[k - 1]
    }

    pub fn alpha_bar(&self, k: usize) -> f64 {
        self.alpha_bars[k - 1]
    }

    /// Amplification constants `A_k`, indexed `k - 1`.
    pub fn step_coeffs(&self) -> &[f64] {
        &self.step_coeffs
    }

    pub fn c1(&self) -> f64 {
        self.c1
    }

    /// Coefficient multiplying the noise prediction in the reverse mean,
    /// β_k / √(α_k (1 − ᾱ_k)).
    pub fn eps_coeff(&self, k: usize) -> f64 {
        self.beta(k) / (self.alpha(k) * (1.0 - self.alpha_bar(k))).sqrt()
    }

    pub fn check_step(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.num_steps() {
            Err(Error::StepOutOfRange {
                step: k,
                num_steps: self.num_steps(),
            })
        } else {
            Ok(())
        }
    }

    /// s^k = √ᾱ_k · s0 + √(1 − ᾱ_k) · eps.
    pub fn forward_noise(&self, s0: &[f64], k: usize, eps: &[f64]) -> Result<Vec<f64>> {
        self.check_step(k)?;
        check_dim("forward_noise eps", s0.len(), eps.len())?;
        let ab = self.alpha_bar(k);
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        Ok(s0.iter().zip(eps).map(|(s, e)| a * s + b * e).collect())
    }

    /// One ancestral step s^k → s^{k-1}. The injected noise is dropped at
    /// `k = 1`, so the chain ends on the mean prediction.
    pub fn reverse_step(
        &self,
        sk: &[f64],
        eps_pred: &[f64],
        k: usize,
        noise: &[f64],
    ) -> Result<Vec<f64>> {
        self.check_step(k)?;
        check_dim("reverse_step eps_pred", sk.len(), eps_pred.len())?;
        check_dim("reverse_step noise", sk.len(), noise.len())?;
        let inv_sqrt_alpha = 1.0 / self.alpha(k).sqrt();
        let c = self.beta(k) / (1.0 - self.alpha_bar(k)).sqrt();
        let sigma = if k == 1 { 0.0 } else { self.beta(k).sqrt() };
        Ok(sk
            .iter()
            .zip(eps_pred)
            .zip(noise)
            .map(|((s, e), n)| inv_sqrt_alpha * (s - c * e) + sigma * n)
            .collect())
    }

    /// `(A_1..A_K, C1)`.
    pub fn accumulation_constants(&self) -> (Vec<f64>, f64) {
        (self.step_coeffs.clone(), self.c1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear(k: usize, lo: f64, hi: f64) -> DiffusionSchedule {
        build_schedule(ScheduleKind::Linear, k, lo, hi).unwrap()
    }

    #[test]
    fn single_step_schedule() {
        let s = linear(1, 0.02, 0.02);
        assert_eq!(s.betas(), &[0.02]);
        assert_eq!(s.alphas(), &[0.98]);
        assert_eq!(s.alpha_bars(), &[0.98]);
    }

    #[test]
    fn default_schedule_product() {
        let s = ScheduleSpec::default().build().unwrap();
        assert_eq!(s.num_steps(), 5);
        let expected_betas = [0.0001, 0.005075, 0.01005, 0.015025, 0.02];
        for (b, e) in s.betas().iter().zip(expected_betas) {
            assert!((b - e).abs() < 1e-15);
        }
        // product of the five alphas, evaluated in exact rational arithmetic
        assert!((s.alpha_bar(5) - 0.950_629_868_238_709_9).abs() < 1e-14);
    }

    #[test]
    fn rejects_zero_beta() {
        assert!(matches!(
            build_schedule(ScheduleKind::Linear, 2, 0.0, 0.0),
            Err(Error::InvalidRange(_))
        ));
        assert!(build_schedule(ScheduleKind::Linear, 0, 0.1, 0.2).is_err());
        assert!(build_schedule(ScheduleKind::Linear, 3, 0.3, 0.2).is_err());
        assert!(build_schedule(ScheduleKind::Cosine, 3, 0.1, 1.0).is_err());
    }

    #[test]
    fn forward_noise_cases() {
        let s = linear(3, 0.01, 0.2);
        let s0 = [1.5, -2.0];
        let out = s.forward_noise(&s0, 2, &[0.0, 0.0]).unwrap();
        let a = s.alpha_bar(2).sqrt();
        assert_eq!(out, vec![a * 1.5, a * -2.0]);

        let quarter = linear(1, 0.75, 0.75);
        let out = quarter.forward_noise(&[2.0], 1, &[1.0]).unwrap();
        assert!((out[0] - 1.866_025_403_784_438_6).abs() < 1e-4);

        let tiny = linear(2, 1e-15, 1e-15);
        let out = tiny.forward_noise(&[0.7, -0.3], 2, &[0.5, 0.5]).unwrap();
        assert!((out[0] - 0.7).abs() < 1e-6 && (out[1] + 0.3).abs() < 1e-6);

        assert!(matches!(
            s.forward_noise(&s0, 4, &[0.0, 0.0]),
            Err(Error::StepOutOfRange { .. })
        ));
        assert!(s.forward_noise(&s0, 0, &[0.0, 0.0]).is_err());
        assert!(matches!(
            s.forward_noise(&s0, 1, &[0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn reverse_step_cases() {
        let s = linear(1, 0.02, 0.02);
        let out = s.reverse_step(&[1.0], &[0.0], 1, &[0.0]).unwrap();
        assert!((out[0] - 1.010_152_544_552_210_6).abs() < 1e-4);

        // noise is ignored on the final step
        let with_noise = s.reverse_step(&[1.0], &[0.3], 1, &[5.0]).unwrap();
        let without = s.reverse_step(&[1.0], &[0.3], 1, &[0.0]).unwrap();
        assert_eq!(with_noise, without);

        // but not before it
        let two = linear(2, 0.02, 0.02);
        let a = two.reverse_step(&[1.0], &[0.3], 2, &[5.0]).unwrap();
        let b = two.reverse_step(&[1.0], &[0.3], 2, &[0.0]).unwrap();
        assert!((a[0] - b[0] - 0.02f64.sqrt() * 5.0).abs() < 1e-12);

        let tiny = linear(1, 1e-15, 1e-15);
        let out = tiny.reverse_step(&[0.4], &[3.0], 1, &[0.0]).unwrap();
        assert!((out[0] - 0.4).abs() < 1e-6);

        assert!(s.reverse_step(&[1.0], &[0.0], 2, &[0.0]).is_err());
        assert!(s.reverse_step(&[1.0, 2.0], &[0.0], 1, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn identity_chain_at_vanishing_beta() {
        let s = linear(5, 1e-12, 1e-12);
        let start = vec![0.8, -1.3, 2.2];
        let mut cur = start.clone();
        for k in (1..=5).rev() {
            cur = s.reverse_step(&cur, &[0.1, -0.2, 0.05], k, &[0.0; 3]).unwrap();
        }
        for (a, b) in cur.iter().zip(&start) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn single_step_constants() {
        let (a, c1) = linear(1, 0.02, 0.02).accumulation_constants();
        assert!((a[0] - 0.142_857_142_857_142_88).abs() < 1e-12);
        assert!((c1 - 0.020_408_163_265_306_128).abs() < 1e-12);
    }

    #[test]
    fn two_step_constants_match_brute_force() {
        // brute force with β = 0.1 at both steps:
        // A_1 = β/√(α·β) / √α, A_2 = β/√(α(1 − α²))
        let beta: f64 = 0.1;
        let alpha = 1.0 - beta;
        let a1 = beta / (alpha * beta).sqrt() / alpha.sqrt();
        let a2 = beta / (alpha * (1.0 - alpha * alpha)).sqrt();
        let (a, c1) = linear(2, 0.1, 0.1).accumulation_constants();
        assert!((a[0] - a1).abs() < 1e-14);
        assert!((a[1] - a2).abs() < 1e-14);
        assert!(a[0] > a[1]);
        assert!((c1 - a1 * a1).abs() < 1e-14);
    }

    #[test]
    fn cosine_schedule_is_valid() {
        let s = build_schedule(ScheduleKind::Cosine, 5, 1e-4, 0.02).unwrap();
        assert!(s.betas().iter().all(|&b| b > 0.0 && b <= COSINE_MAX_BETA));
        assert!(s.alpha_bar(5) > 0.0);
        assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn spec_round_trips_through_json() {
        let spec = ScheduleSpec::default();
        let text = serde_json::to_string(&spec).unwrap();
        assert_eq!(text, r#"{"kind":"linear","K":5,"beta_lo":0.0001,"beta_hi":0.02}"#);
        let back: ScheduleSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back.build().unwrap(), spec.build().unwrap());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn invariants_hold(
                cosine in any::<bool>(),
                k in 1usize..40,
                lo in 1e-6f64..0.5,
                width in 0.0f64..0.49,
            ) {
                let kind = if cosine { ScheduleKind::Cosine } else { ScheduleKind::Linear };
                let s = build_schedule(kind, k, lo, lo + width).unwrap();
                prop_assert!(s.betas().iter().all(|&b| b > 0.0 && b < 1.0));
                prop_assert!(s.alphas().iter().all(|&a| a > 0.0 && a < 1.0));
                prop_assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
                prop_assert!(s.alpha_bar(k) > 0.0);

                let (a, c1) = s.accumulation_constants();
                for kk in 1..=k {
                    let tail: f64 = (kk + 1..=k).map(|i| s.alpha(i).powf(-0.5)).product();
                    let direct = tail * (1.0 - s.alpha(kk))
                        / (s.alpha(kk) * (1.0 - s.alpha_bar(kk))).sqrt();
                    prop_assert!((a[kk - 1] - direct).abs() <= 1e-12 * direct.abs().max(1.0));
                    prop_assert!(c1 >= a[kk - 1] * a[kk - 1]);
                }
                let sum_sq: f64 = a.iter().map(|x| x * x).sum();
                prop_assert!(sum_sq <= c1 * k as f64 * (1.0 + 1e-12));
            }

            #[test]
            fn forward_noise_is_reproducible(
                s0 in prop::collection::vec(-5.0f64..5.0, 1..6),
                seed in any::<u64>(),
            ) {
                let s = ScheduleSpec::default().build().unwrap();
                let mut rng = crate::rng::stream(seed, "test", 0);
                let eps = crate::rng::normal_vec(&mut rng, s0.len());
                let a = s.forward_noise(&s0, 3, &eps).unwrap();
                let b = s.forward_noise(&s0, 3, &eps).unwrap();
                prop_assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn equal_coefficients_reach_the_bound() {
        // C1·K = Σ A_k² only when every A_k is equal, which K = 1 guarantees.
        let s = linear(1, 0.3, 0.3);
        let (a, c1) = s.accumulation_constants();
        assert_eq!(a[0] * a[0], c1);
        let s = linear(4, 0.01, 0.3);
        let (a, c1) = s.accumulation_constants();
        let sum_sq: f64 = a.iter().map(|x| x * x).sum();
        assert!(sum_sq < c1 * 4.0);
    }
}
