//! Minimum-cost rectangular assignment (Kuhn-Munkres with potentials).

/// Injective row → column map. Rows left without a column are unmatched
/// (background, in detection-matching terms).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Assignment {
    pub row_to_col: Vec<Option<usize>>,
}

impl Assignment {
    pub fn unmatched(rows: usize) -> Self {
        Self {
            row_to_col: vec![None; rows],
        }
    }

    /// Matched `(row, col)` pairs in row order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.row_to_col
            .iter()
            .enumerate()
            .filter_map(|(r, c)| c.map(|c| (r, c)))
    }

    pub fn num_matched(&self) -> usize {
        self.row_to_col.iter().filter(|c| c.is_some()).count()
    }

    pub fn col_of(&self, row: usize) -> Option<usize> {
        self.row_to_col.get(row).copied().flatten()
    }

    pub fn total_cost(&self, cost: &[Vec<f64>]) -> f64 {
        self.pairs().map(|(r, c)| cost[r][c]).sum()
    }
}

/// Solves the rectangular linear assignment problem, matching exactly
/// `min(rows, cols)` pairs at minimum total cost.
///
/// `cost` is row-major; all rows must have the same length and all entries
/// must be finite.
pub fn hungarian(cost: &[Vec<f64>]) -> Assignment {
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Assignment::unmatched(rows);
    }
    debug_assert!(cost.iter().all(|r| r.len() == cols));
    if rows <= cols {
        let col_of_row = solve(rows, cols, |r, c| cost[r][c]);
        Assignment {
            row_to_col: col_of_row,
        }
    } else {
        // Solve on the transpose and invert.
        let row_of_col = solve(cols, rows, |c, r| cost[r][c]);
        let mut row_to_col = vec![None; rows];
        for (c, r) in row_of_col.into_iter().enumerate() {
            if let Some(r) = r {
                row_to_col[r] = Some(c);
            }
        }
        Assignment { row_to_col }
    }
}

/// Maximises total score instead of minimising cost.
pub fn hungarian_max(score: &[Vec<f64>]) -> Assignment {
    let neg: Vec<Vec<f64>> = score
        .iter()
        .map(|r| r.iter().map(|v| -v).collect())
        .collect();
    hungarian(&neg)
}

// Shortest augmenting path with dual potentials; requires n <= m.
// Indices are 1-based internally, slot 0 is the virtual source column.
fn solve(n: usize, m: usize, a: impl Fn(usize, usize) -> f64) -> Vec<Option<usize>> {
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = a(i0 - 1, j - 1) - u[i0] - v[j];
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

    let mut out = vec![None; n];
    for j in 1..=m {
        if p[j] != 0 {
            out[p[j] - 1] = Some(j - 1);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // Exhaustive oracle: best injective map of the smaller side into the larger.
    fn brute_force(cost: &[Vec<f64>]) -> f64 {
        let rows = cost.len();
        let cols = cost[0].len();
        fn rec(cost: &[Vec<f64>], r: usize, used: &mut Vec<bool>, take: usize) -> f64 {
            if take == 0 {
                return 0.0;
            }
            if r == cost.len() {
                return f64::INFINITY;
            }
            let mut best = f64::INFINITY;
            // Skipping a row is allowed only while enough rows remain.
            if cost.len() - r > take {
                best = rec(cost, r + 1, used, take);
            }
            for c in 0..used.len() {
                if !used[c] {
                    used[c] = true;
                    best = best.min(cost[r][c] + rec(cost, r + 1, used, take - 1));
                    used[c] = false;
                }
            }
            best
        }
        let mut used = vec![false; cols];
        rec(cost, 0, &mut used, rows.min(cols))
    }

    #[test]
    fn two_by_two_example() {
        let cost = vec![vec![1.0, 2.0], vec![3.0, 0.0]];
        let a = hungarian(&cost);
        assert_eq!(a.row_to_col, vec![Some(0), Some(1)]);
        assert_eq!(a.total_cost(&cost), 1.0);
    }

    #[test]
    fn zero_diagonal_gives_identity() {
        let n = 4;
        let cost: Vec<Vec<f64>> = (0..n)
            .map(|r| (0..n).map(|c| if r == c { 0.0 } else { 1.0 + (r + c) as f64 }).collect())
            .collect();
        let a = hungarian(&cost);
        assert_eq!(a.row_to_col, (0..n).map(Some).collect::<Vec<_>>());
        assert_eq!(a.total_cost(&cost), 0.0);
    }

    #[test]
    fn empty_inputs() {
        assert_eq!(hungarian(&[]).row_to_col, Vec::<Option<usize>>::new());
        assert_eq!(hungarian(&[vec![], vec![]]).row_to_col, vec![None, None]);
    }

    #[test]
    fn matches_brute_force_on_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let rows = rng.random_range(1..=5);
            let cols = rng.random_range(1..=5);
            let cost: Vec<Vec<f64>> = (0..rows)
                .map(|_| (0..cols).map(|_| rng.random_range(-5.0..5.0)).collect())
                .collect();
            let a = hungarian(&cost);
            assert_eq!(a.num_matched(), rows.min(cols));
            let mut seen = vec![false; cols];
            for (_, c) in a.pairs() {
                assert!(!seen[c], "column used twice");
                seen[c] = true;
            }
            let expected = brute_force(&cost);
            assert!(
                (a.total_cost(&cost) - expected).abs() < 1e-9,
                "{} vs {expected}",
                a.total_cost(&cost)
            );
        }
    }

    #[test]
    fn maximisation_picks_large_scores() {
        let score = vec![vec![0.1, 0.9], vec![0.8, 0.2]];
        assert_eq!(hungarian_max(&score).row_to_col, vec![Some(1), Some(0)]);
    }
}
