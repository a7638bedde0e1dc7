//! Minimum-cost perfect matching on a square cost matrix.

use crate::error::{Error, Result};

/// Shortest-augmenting-path Hungarian method with row and column
/// potentials, O(n³). `cost` is row-major `n × n`. Returns `assign` with
/// row `i` matched to column `assign[i]`.
pub fn min_cost_assignment(cost: &[f64], n: usize) -> Result<Vec<usize>> {
    if cost.len() != n * n {
        return Err(Error::DimensionMismatch {
            context: "assignment cost matrix",
            expected: n * n,
            actual: cost.len(),
        });
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::InvalidParameter("assignment costs must be finite".into()));
    }
    // 1-based internally; index 0 is the virtual root column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        row_of[0] = row;
        let mut col0 = 0;
        let mut min_to = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col0] = true;
            let i0 = row_of[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if reduced < min_to[j] {
                    min_to[j] = reduced;
                    way[j] = col0;
                }
                if min_to[j] < delta {
                    delta = min_to[j];
                    col1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_to[j] -= delta;
                }
            }
            col0 = col1;
            if row_of[col0] == 0 {
                break;
            }
        }
        loop {
            let prev = way[col0];
            row_of[col0] = row_of[prev];
            col0 = prev;
            if col0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        if row_of[j] > 0 {
            assign[row_of[j] - 1] = j - 1;
        }
    }
    Ok(assign)
}

/// Sum of matched costs, added in row order.
pub fn assignment_cost(cost: &[f64], n: usize, assign: &[usize]) -> f64 {
    assign.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum()
}
