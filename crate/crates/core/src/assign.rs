//! Rectangular linear assignment (Hungarian method with potentials).

use nalgebra::DMatrix;

/// Minimum-cost assignment of every row to a distinct column; requires
/// `rows <= cols`. Returns the column of each row.
fn min_cost_rows(cost: &DMatrix<f64>) -> Vec<usize> {
    let n = cost.nrows();
    let m = cost.ncols();
    debug_assert!(n <= m);
    // 1-based arrays; column 0 is the virtual start.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
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
    let mut row_to_col = vec![0usize; n];
    for j in 1..=m {
        if p[j] != 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    row_to_col
}

/// Maximum-weight matching of rows to columns where at most
/// `min(rows, cols)` pairs are formed and each row/column is used once.
/// Entries rejected by `allowed` are never returned. The result maps each row
/// to its column, or `None` when unmatched.
pub fn max_weight_assignment(
    weights: &DMatrix<f64>,
    allowed: impl Fn(usize, usize) -> bool,
) -> Vec<Option<usize>> {
    let (n, m) = weights.shape();
    if n == 0 || m == 0 {
        return vec![None; n];
    }
    let scale = weights.iter().fold(0.0f64, |a, w| a.max(w.abs())) + 1.0;
    let forbidden = 1e6 * scale * (n.max(m) as f64);
    let cost = |i: usize, j: usize| {
        if allowed(i, j) {
            -weights[(i, j)]
        } else {
            forbidden
        }
    };
    let pairs: Vec<(usize, usize)> = if n <= m {
        let c = DMatrix::from_fn(n, m, cost);
        min_cost_rows(&c).into_iter().enumerate().collect()
    } else {
        let c = DMatrix::from_fn(m, n, |j, i| cost(i, j));
        min_cost_rows(&c)
            .into_iter()
            .enumerate()
            .map(|(j, i)| (i, j))
            .collect()
    };
    let mut out = vec![None; n];
    for (i, j) in pairs {
        if allowed(i, j) {
            out[i] = Some(j);
        }
    }
    out
}

/// Total weight of the best matching (unconstrained).
pub fn max_weight_sum(weights: &DMatrix<f64>) -> f64 {
    max_weight_assignment(weights, |_, _| true)
        .iter()
        .enumerate()
        .filter_map(|(i, j)| j.map(|j| weights[(i, j)]))
        .sum()
}
