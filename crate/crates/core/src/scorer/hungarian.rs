//! Maximum-weight bipartite matching (Kuhn-Munkres).
//!
//! The weight matrix is padded to square with zeros and turned into a
//! minimum-cost assignment over `max_weight - w`, solved with the O(n^3)
//! potentials formulation. Pairs whose weight is zero carry no edge and are
//! dropped from the reported matching.

use super::ScoreError;

#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    /// (row, column) pairs, sorted by row.
    pub pairs: Vec<(usize, usize)>,
    pub total: f64,
}

pub fn hungarian(weights: &[Vec<f64>]) -> Result<Matching, ScoreError> {
    let rows = weights.len();
    let cols = weights.first().map_or(0, Vec::len);
    let mut max_w = 0.0f64;
    for (i, row) in weights.iter().enumerate() {
        if row.len() != cols {
            return Err(ScoreError::DimMismatch {
                expected: cols,
                found: row.len(),
            });
        }
        for (j, &w) in row.iter().enumerate() {
            if !w.is_finite() || w < 0.0 {
                return Err(ScoreError::InvalidWeight { row: i, col: j, value: w });
            }
            max_w = max_w.max(w);
        }
    }
    if rows == 0 || cols == 0 {
        return Ok(Matching {
            pairs: Vec::new(),
            total: 0.0,
        });
    }

    let n = rows.max(cols);
    let cost = |i: usize, j: usize| -> f64 {
        let w = if i < rows && j < cols { weights[i][j] } else { 0.0 };
        max_w - w
    };

    // 1-based potentials; p[j] = row assigned to column j, 0 = free.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
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
        .filter(|&(i, j)| i < rows && j < cols && weights[i][j] > 0.0)
        .collect();
    pairs.sort_unstable();
    let total = pairs.iter().map(|&(i, j)| weights[i][j]).sum();
    Ok(Matching { pairs, total })
}
