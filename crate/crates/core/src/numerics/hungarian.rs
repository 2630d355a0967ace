//! Minimum-cost assignment via shortest augmenting paths with potentials.

use crate::error::{Error, Result};
use crate::numerics::mat::Mat;

/// Minimum-total-cost one-to-one assignment of min(rows, cols) pairs.
/// Rectangular inputs are padded internally with a constant, which cannot
/// change the optimal matching among real cells. Returned pairs are sorted
/// by row.
pub fn hungarian(cost: &Mat) -> Result<Vec<(usize, usize)>> {
    if cost.rows == 0 || cost.cols == 0 {
        return Ok(Vec::new());
    }
    if cost.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::param("hungarian requires finite costs"));
    }

    let (a, b) = (cost.rows, cost.cols);
    let n = a.max(b);
    let at = |r: usize, c: usize| -> f64 {
        if r < a && c < b {
            cost.at(r, c)
        } else {
            0.0
        }
    };

    // potentials u, v and matching p over 1-based columns; p[j] = row
    // assigned to column j, 0 = free
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = at(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        // augment along the found path
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut pairs: Vec<(usize, usize)> = (1..=n)
        .filter(|&j| p[j] != 0)
        .map(|j| (p[j] - 1, j - 1))
        .filter(|&(r, c)| r < a && c < b)
        .collect();
    pairs.sort_unstable();
    Ok(pairs)
}
