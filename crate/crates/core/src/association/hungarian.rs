//! Minimum-cost rectangular assignment (Kuhn–Munkres with potentials).
//!
//! Infinite entries mark forbidden pairs. They are replaced by a sentinel
//! larger than any sum of feasible costs, so the solver first maximizes the
//! number of finite pairs and then minimizes their cost; pairs that land on
//! the sentinel are dropped from the result. Among optimal assignments the
//! lexicographically smallest pair set is returned.

/// Dense row-major cost matrix. Entries must be nonnegative or `+inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, fill: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![fill; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged cost matrix");
        Self {
            rows: rows.len(),
            cols,
            data: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    /// Sum of the costs of `pairs`.
    pub fn total(&self, pairs: &[(usize, usize)]) -> f64 {
        pairs.iter().map(|&(i, j)| self.get(i, j)).sum()
    }
}

/// Optimal assignment; pairs are sorted by row and never include infinite entries.
pub fn hungarian(costs: &CostMatrix) -> Vec<(usize, usize)> {
    let (rows, cols) = (costs.rows, costs.cols);
    if rows == 0 || cols == 0 {
        return Vec::new();
    }
    let finite = |c: f64| c.is_finite();
    let max_finite = costs
        .data
        .iter()
        .copied()
        .filter(|c| finite(*c))
        .fold(f64::NEG_INFINITY, f64::max);
    if max_finite == f64::NEG_INFINITY {
        return Vec::new();
    }
    debug_assert!(costs.data.iter().all(|c| !(*c < 0.0)), "negative cost");
    let sentinel = (max_finite.max(0.0) + 1.0) * (rows.min(cols) as f64 + 1.0);

    // Square working matrix: padding rows/columns cost zero.
    let n = rows.max(cols);
    let mut a = vec![0.0; n * n];
    for i in 0..rows {
        for j in 0..cols {
            let c = costs.get(i, j);
            a[i * n + j] = if finite(c) { c } else { sentinel };
        }
    }

    let (assign, u, v) = solve_square(&a, n);
    let scale = sentinel.max(1.0);
    let tol = 1e-10 * scale;
    let assign = lexicographic_refinement(&a, n, rows, cols, &assign, &u, &v, tol);

    (0..rows)
        .filter_map(|i| {
            let j = assign[i];
            (j < cols && finite(costs.get(i, j))).then_some((i, j))
        })
        .collect()
}

/// Returns row→column assignment and dual potentials of an `n×n` problem.
fn solve_square(a: &[f64], n: usize) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    // 1-indexed; column 0 is a virtual root.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = a[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
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
    let mut assign = vec![0usize; n];
    for j in 1..=n {
        assign[p[j] - 1] = j - 1;
    }
    (assign, u[1..].to_vec(), v[1..].to_vec())
}

/// Every optimal assignment is a perfect matching on the tight edges of an
/// optimal dual. Walk the real rows in order, fixing each to its smallest
/// tight column that still admits a perfect matching.
#[allow(clippy::too_many_arguments)]
fn lexicographic_refinement(
    a: &[f64],
    n: usize,
    rows: usize,
    cols: usize,
    start: &[usize],
    u: &[f64],
    v: &[f64],
    tol: f64,
) -> Vec<usize> {
    let tight: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let mut cs: Vec<usize> = (0..n)
                .filter(|&j| a[i * n + j] - u[i] - v[j] <= tol)
                .collect();
            // real columns before padding columns
            cs.sort_by_key(|&j| (j >= cols, j));
            cs
        })
        .collect();
    if (0..n).any(|i| !tight[i].contains(&start[i])) {
        return start.to_vec();
    }

    let mut row_of = vec![usize::MAX; n];
    let mut col_of = start.to_vec();
    for (i, &j) in start.iter().enumerate() {
        row_of[j] = i;
    }
    let mut fixed = vec![false; n];

    for i in 0..rows {
        for &j in &tight[i] {
            if col_of[i] == j {
                break;
            }
            if row_of[j] != usize::MAX && fixed[row_of[j]] {
                continue;
            }
            // Tentatively take column j; the displaced row must reach the
            // column that row i frees.
            let freed = col_of[i];
            let displaced = row_of[j];
            let (saved_col, saved_row) = (col_of.clone(), row_of.clone());
            col_of[i] = j;
            row_of[j] = i;
            row_of[freed] = usize::MAX;
            fixed[i] = true;
            let ok = augment(displaced, &tight, &fixed, &mut col_of, &mut row_of, n);
            fixed[i] = false;
            if ok {
                break;
            }
            col_of = saved_col;
            row_of = saved_row;
        }
        fixed[i] = true;
    }

    let cost = |asg: &[usize]| -> f64 { (0..n).map(|i| a[i * n + asg[i]]).sum() };
    if cost(&col_of) <= cost(start) + tol {
        col_of
    } else {
        start.to_vec()
    }
}

/// Alternating-path search from an unmatched row to any free column.
fn augment(
    root: usize,
    tight: &[Vec<usize>],
    fixed: &[bool],
    col_of: &mut [usize],
    row_of: &mut [usize],
    n: usize,
) -> bool {
    let mut prev_row = vec![usize::MAX; n];
    let mut seen_col = vec![false; n];
    let mut stack = vec![root];
    let mut visited_row = vec![false; n];
    visited_row[root] = true;
    while let Some(r) = stack.pop() {
        for &c in &tight[r] {
            if seen_col[c] {
                continue;
            }
            seen_col[c] = true;
            prev_row[c] = r;
            let owner = row_of[c];
            if owner == usize::MAX {
                // flip the path back to the root
                let mut col = c;
                loop {
                    let row = prev_row[col];
                    let next = col_of[row];
                    col_of[row] = col;
                    row_of[col] = row;
                    if row == root {
                        return true;
                    }
                    col = next;
                }
            }
            if !fixed[owner] && !visited_row[owner] {
                visited_row[owner] = true;
                stack.push(owner);
            }
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const INF: f64 = f64::INFINITY;

    /// Exhaustive oracle: maximize the number of finite pairs, then minimize
    /// cost, then take the lexicographically smallest pair list.
    fn brute_force(costs: &CostMatrix) -> (usize, f64, Vec<(usize, usize)>) {
        let (r, c) = (costs.rows(), costs.cols());
        let mut best: Option<(usize, f64, Vec<(usize, usize)>)> = None;
        let mut used = vec![false; c];
        let mut current = Vec::new();
        fn rec(
            i: usize,
            costs: &CostMatrix,
            used: &mut Vec<bool>,
            current: &mut Vec<(usize, usize)>,
            best: &mut Option<(usize, f64, Vec<(usize, usize)>)>,
        ) {
            if i == costs.rows() {
                let pairs: Vec<_> = current
                    .iter()
                    .copied()
                    .filter(|&(a, b)| costs.get(a, b).is_finite())
                    .collect();
                let total: f64 = pairs.iter().map(|&(a, b)| costs.get(a, b)).sum();
                let better = match best {
                    None => true,
                    Some((k, t, p)) => {
                        pairs.len() > *k
                            || (pairs.len() == *k && total < *t - 1e-9)
                            || (pairs.len() == *k && (total - *t).abs() <= 1e-9 && pairs < *p)
                    }
                };
                if better {
                    *best = Some((pairs.len(), total, pairs));
                }
                return;
            }
            // row i left unassigned (only matters when rows > cols)
            let free_cols = used.iter().filter(|u| !**u).count();
            if costs.rows() - i > free_cols {
                rec(i + 1, costs, used, current, best);
            }
            for j in 0..costs.cols() {
                if !used[j] {
                    used[j] = true;
                    current.push((i, j));
                    rec(i + 1, costs, used, current, best);
                    current.pop();
                    used[j] = false;
                }
            }
        }
        if r == 0 || c == 0 {
            return (0, 0.0, Vec::new());
        }
        rec(0, costs, &mut used, &mut current, &mut best);
        best.unwrap()
    }

    #[test]
    fn diagonal_dominance() {
        let m = CostMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]);
        let pairs = hungarian(&m);
        assert_eq!(pairs, vec![(0, 0), (1, 1)]);
        assert_eq!(m.total(&pairs), 2.0);
    }

    #[test]
    fn forced_off_diagonal() {
        let m = CostMatrix::from_rows(&[vec![INF, 1.0], vec![1.0, INF]]);
        assert_eq!(hungarian(&m), vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn empty_and_all_infinite() {
        assert!(hungarian(&CostMatrix::new(0, 3, 0.0)).is_empty());
        assert!(hungarian(&CostMatrix::new(2, 0, 0.0)).is_empty());
        assert!(hungarian(&CostMatrix::new(2, 2, INF)).is_empty());
    }

    #[test]
    fn ties_resolve_lexicographically() {
        let m = CostMatrix::new(3, 3, 1.0);
        assert_eq!(hungarian(&m), vec![(0, 0), (1, 1), (2, 2)]);
        let m = CostMatrix::from_rows(&[vec![1.0, 1.0, 5.0], vec![1.0, 1.0, 5.0]]);
        assert_eq!(hungarian(&m), vec![(0, 0), (1, 1)]);
        // more rows than columns: earliest rows win
        let m = CostMatrix::from_rows(&[vec![2.0], vec![2.0], vec![2.0]]);
        assert_eq!(hungarian(&m), vec![(0, 0)]);
    }

    #[test]
    fn prefers_more_finite_pairs() {
        let m = CostMatrix::from_rows(&[vec![0.0, 100.0], vec![0.5, INF]]);
        assert_eq!(hungarian(&m), vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn random_matrices_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..400 {
            let r = rng.random_range(1..=5);
            let c = rng.random_range(1..=5);
            let m = CostMatrix::from_fn(r, c, |_, _| {
                if rng.random_bool(0.2) {
                    INF
                } else {
                    (rng.random_range(0.0..10.0f64) * 2.0).round() / 2.0
                }
            });
            let pairs = hungarian(&m);
            let (k, total, lex) = brute_force(&m);
            assert_eq!(pairs.len(), k, "{m:?}");
            assert!((m.total(&pairs) - total).abs() < 1e-9, "{m:?}");
            assert_eq!(pairs, lex, "{m:?}");
        }
    }

    fn greedy_total(m: &CostMatrix) -> (usize, f64) {
        let mut entries: Vec<(f64, usize, usize)> = (0..m.rows())
            .flat_map(|i| (0..m.cols()).map(move |j| (i, j)))
            .map(|(i, j)| (m.get(i, j), i, j))
            .filter(|e| e.0.is_finite())
            .collect();
        entries.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (mut ru, mut cu) = (vec![false; m.rows()], vec![false; m.cols()]);
        let (mut k, mut t) = (0, 0.0);
        for (c, i, j) in entries {
            if !ru[i] && !cu[j] {
                ru[i] = true;
                cu[j] = true;
                k += 1;
                t += c;
            }
        }
        (k, t)
    }

    proptest! {
        #[test]
        fn never_worse_than_greedy(data in prop::collection::vec(0.0..50.0f64, 36), r in 1usize..=6, c in 1usize..=6) {
            let m = CostMatrix::from_fn(r, c, |i, j| data[i * 6 + j]);
            let pairs = hungarian(&m);
            let (k, t) = greedy_total(&m);
            prop_assert_eq!(pairs.len(), k);
            prop_assert!(m.total(&pairs) <= t + 1e-9);
        }

        #[test]
        fn scaling_preserves_pairs(data in prop::collection::vec(0.0..50.0f64, 25), scale in 0.01..100.0f64) {
            let m = CostMatrix::from_fn(5, 5, |i, j| data[i * 5 + j]);
            let s = CostMatrix::from_fn(5, 5, |i, j| data[i * 5 + j] * scale);
            prop_assert_eq!(hungarian(&m), hungarian(&s));
        }
    }
}
