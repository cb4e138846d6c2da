//! Pairwise-average and 1-to-1 alignment bag metrics.
//!
//! The alignment metric solves a maximum-weight perfect matching on the
//! complete bipartite graph between the two (size-equalized) bags. The graph
//! is bipartite, so the assignment problem is solved directly with the
//! O(n³) Hungarian method; among all optimal matchings the lexicographically
//! smallest pair list is returned.

use std::collections::VecDeque;

use crate::corpus::{equalize_sizes, Bag};
use crate::error::{Error, Result};
use crate::sim::SimilarityFn;

/// Reduced costs at or below this are treated as tight (optimal) edges.
const TIGHT_TOL: f64 = 1e-9;

/// A 1-to-1 matching between rows (generated) and columns (reference).
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub pairs: Vec<(usize, usize)>,
    pub total_weight: f64,
}

/// Average similarity over all `|g| · |r|` occurrence pairs.
pub fn pair_score(g: &Bag, r: &Bag, sim: &SimilarityFn) -> Result<f64> {
    if g.is_empty() || r.is_empty() {
        return Err(Error::EmptyBag);
    }
    let m = sim.matrix(g, r)?;
    let total: f64 = m.iter().flatten().sum();
    Ok(total / (g.len() * r.len()) as f64)
}

/// Equalizes bag sizes, aligns them 1-to-1 with maximum total similarity and
/// returns the mean similarity of the aligned pairs.
pub fn align_score(g: &Bag, r: &Bag, sim: &SimilarityFn, seed: u64) -> Result<f64> {
    if g.is_empty() || r.is_empty() {
        return Err(Error::EmptyBag);
    }
    let (g, r) = equalize_sizes(g, r, seed);
    let m = sim.matrix(&g, &r)?;
    let alignment = max_weight_matching(&m)?;
    Ok(alignment.total_weight / g.len() as f64)
}

/// Maximum-weight perfect matching on a square weight matrix.
pub fn max_weight_matching(weights: &[Vec<f64>]) -> Result<Alignment> {
    let n = weights.len();
    if let Some(row) = weights.iter().find(|row| row.len() != n) {
        return Err(Error::Shape {
            rows: n,
            cols: row.len(),
        });
    }
    if n == 0 {
        return Ok(Alignment {
            pairs: Vec::new(),
            total_weight: 0.0,
        });
    }

    let cost: Vec<Vec<f64>> = weights
        .iter()
        .map(|row| row.iter().map(|w| -w).collect())
        .collect();
    let (mut row_to_col, u, v) = hungarian(&cost);

    let tight: Vec<Vec<bool>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| cost[i][j] - u[i] - v[j] <= TIGHT_TOL)
                .collect()
        })
        .collect();
    lexicographic_min(&tight, &mut row_to_col);

    let pairs: Vec<(usize, usize)> = row_to_col.iter().copied().enumerate().collect();
    let total_weight = pairs.iter().map(|&(i, j)| weights[i][j]).sum();
    Ok(Alignment {
        pairs,
        total_weight,
    })
}

/// Min-cost assignment (Kuhn–Munkres with potentials). Returns the row →
/// column assignment and the final row/column potentials.
fn hungarian(cost: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let n = cost.len();
    // 1-based internally; index 0 is the virtual source column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut col_owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        col_owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
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
                    u[col_owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if col_owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_owner[j0] = col_owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut row_to_col = vec![0usize; n];
    for j in 1..=n {
        row_to_col[col_owner[j] - 1] = j - 1;
    }
    (row_to_col, u[1..].to_vec(), v[1..].to_vec())
}

/// Rewrites `row_to_col` (a perfect matching inside `tight`) into the
/// lexicographically smallest perfect matching of the tight subgraph.
/// Every optimal matching lies in the tight subgraph of an optimal dual, so
/// the result is the smallest optimal matching.
fn lexicographic_min(tight: &[Vec<bool>], row_to_col: &mut [usize]) {
    let n = row_to_col.len();
    let mut col_to_row = vec![0usize; n];
    for (i, &j) in row_to_col.iter().enumerate() {
        col_to_row[j] = i;
    }
    let mut col_fixed = vec![false; n];

    for i in 0..n {
        for j in 0..n {
            if col_fixed[j] || !tight[i][j] {
                continue;
            }
            if row_to_col[i] == j {
                break;
            }
            // Give column j to row i. Its current owner must reach the
            // column row i releases via an alternating path over free rows.
            let owner = col_to_row[j];
            let released = row_to_col[i];
            if let Some(path) = alternating_path(tight, row_to_col, &col_to_row, &col_fixed, i, j, owner, released) {
                // path: sequence of (row, new column) assignments
                for (r, c) in path {
                    row_to_col[r] = c;
                    col_to_row[c] = r;
                }
                row_to_col[i] = j;
                col_to_row[j] = i;
                break;
            }
        }
        col_fixed[row_to_col[i]] = true;
    }
}

/// BFS from `start_row` to `target_col` alternating tight edges and matching
/// edges, avoiding fixed columns, `skip_row` and `skip_col`.
#[allow(clippy::too_many_arguments)]
fn alternating_path(
    tight: &[Vec<bool>],
    row_to_col: &[usize],
    col_to_row: &[usize],
    col_fixed: &[bool],
    skip_row: usize,
    skip_col: usize,
    start_row: usize,
    target_col: usize,
) -> Option<Vec<(usize, usize)>> {
    let n = row_to_col.len();
    let mut prev_row_of_col: Vec<Option<usize>> = vec![None; n];
    let mut seen_row = vec![false; n];
    seen_row[start_row] = true;
    seen_row[skip_row] = true;
    let mut queue = VecDeque::from([start_row]);
    while let Some(r) = queue.pop_front() {
        for c in 0..n {
            if !tight[r][c] || col_fixed[c] || c == skip_col || prev_row_of_col[c].is_some() {
                continue;
            }
            if c == row_to_col[r] {
                continue;
            }
            prev_row_of_col[c] = Some(r);
            if c == target_col {
                let mut path = Vec::new();
                let mut col = c;
                loop {
                    let row = prev_row_of_col[col].expect("visited column has a parent");
                    path.push((row, col));
                    if row == start_row {
                        return Some(path);
                    }
                    col = row_to_col[row];
                }
            }
            let next = col_to_row[c];
            if !seen_row[next] {
                seen_row[next] = true;
                queue.push_back(next);
            }
        }
    }
    None
}
