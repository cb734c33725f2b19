//! Dense O(n^3) Hungarian algorithm (Kuhn-Munkres with potentials).

/// Minimum-cost perfect matching on a square cost matrix.
/// Returns `assignment[row] = column`.
pub fn min_cost_assignment(costs: &[Vec<i64>]) -> Vec<usize> {
    let n = costs.len();
    if n == 0 {
        return Vec::new();
    }
    assert!(costs.iter().all(|row| row.len() == n), "cost matrix must be square");

    let inf = i64::MAX / 4;
    // 1-based potentials; index 0 is the virtual source column.
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
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
                let cur = costs[i0 - 1][j - 1] - u[i0] - v[j];
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

    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Maximum-weight matching between rows and columns of a (possibly rectangular)
/// nonnegative weight matrix. Returns matched `(row, column)` pairs and the total weight.
pub fn max_weight_matching(weights: &[Vec<i64>]) -> (Vec<(usize, usize)>, i64) {
    let rows = weights.len();
    let cols = weights.first().map_or(0, Vec::len);
    let n = rows.max(cols);
    if n == 0 {
        return (Vec::new(), 0);
    }
    let top = weights.iter().flatten().copied().max().unwrap_or(0);
    let at = |i: usize, j: usize| if i < rows && j < cols { weights[i][j] } else { 0 };
    let costs: Vec<Vec<i64>> = (0..n).map(|i| (0..n).map(|j| top - at(i, j)).collect()).collect();
    let assignment = min_cost_assignment(&costs);
    let pairs: Vec<(usize, usize)> = assignment
        .into_iter()
        .enumerate()
        .filter(|&(i, j)| i < rows && j < cols)
        .collect();
    let total = pairs.iter().map(|&(i, j)| weights[i][j]).sum();
    (pairs, total)
}
