//! Empirical 2-Wasserstein distances between equal-size sample sets.

use rand::seq::index;

use super::assignment::{assignment_cost, min_cost_assignment};
use crate::error::{check_dim, Error, Result};
use crate::rng;
use crate::synth::sq_dist;

/// Largest set [`w2_matching`] will solve exactly.
pub const MATCHING_LIMIT: usize = 512;

fn check_counts(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::CountMismatch { left: a, right: b });
    }
    if a == 0 {
        return Err(Error::Empty("sample set"));
    }
    Ok(())
}

/// Exact in one dimension: sort both sets and pair quantiles.
pub fn w2_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    check_counts(a.len(), b.len())?;
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let sum: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum();
    Ok((sum / a.len() as f64).sqrt())
}

fn check_width(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<usize> {
    let d = a[0].len();
    for v in a.iter().chain(b) {
        check_dim("sample width", d, v.len())?;
    }
    Ok(d)
}

/// Exact optimal matching of two point sets of equal size, at most
/// [`MATCHING_LIMIT`] points each.
pub fn w2_matching(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    check_counts(a.len(), b.len())?;
    let n = a.len();
    if n > MATCHING_LIMIT {
        return Err(Error::TooLarge {
            limit: MATCHING_LIMIT,
            actual: n,
        });
    }
    check_width(a, b)?;
    let cost: Vec<f64> = a.iter().flat_map(|p| b.iter().map(move |q| sq_dist(p, q))).collect();
    let assign = min_cost_assignment(&cost, n)?;
    Ok((assignment_cost(&cost, n, &assign) / n as f64).sqrt())
}

/// An estimate and how many points per side it used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct W2Estimate {
    pub w2: f64,
    pub used: usize,
}

/// Picks the estimator by width: exact sorting in one dimension, otherwise
/// exact matching on at most [`MATCHING_LIMIT`] points drawn without
/// replacement from each side with the stream `(seed, "w2-subsample", 0|1)`.
pub fn w2_estimate(a: &[Vec<f64>], b: &[Vec<f64>], seed: u64) -> Result<W2Estimate> {
    check_counts(a.len(), b.len())?;
    let d = check_width(a, b)?;
    if d == 1 {
        let fa: Vec<f64> = a.iter().map(|v| v[0]).collect();
        let fb: Vec<f64> = b.iter().map(|v| v[0]).collect();
        return Ok(W2Estimate {
            w2: w2_1d(&fa, &fb)?,
            used: a.len(),
        });
    }
    if a.len() <= MATCHING_LIMIT {
        return Ok(W2Estimate {
            w2: w2_matching(a, b)?,
            used: a.len(),
        });
    }
    let pick = |set: &[Vec<f64>], side: u64| -> Vec<Vec<f64>> {
        let mut r = rng::stream(seed, "w2-subsample", side);
        let mut idx = index::sample(&mut r, set.len(), MATCHING_LIMIT).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| set[i].clone()).collect()
    };
    Ok(W2Estimate {
        w2: w2_matching(&pick(a, 0), &pick(b, 1))?,
        used: MATCHING_LIMIT,
    })
}
