//! Maximum-weight partial assignment over a non-negative affinity matrix.
//!
//! The core is a rectangular linear sum assignment solver using shortest
//! augmenting paths with dual potentials (Jonker–Volgenant style, as in
//! SciPy's `linear_sum_assignment`). Because affinities are non-negative, a
//! maximum full assignment of the smaller side is also a maximum partial
//! assignment once zero-affinity pairs are dropped.
//!
//! Among equally good assignments the result is made canonical: rows are
//! decided in ascending order and each is given the lowest column index that
//! still admits an optimal completion (or left unmatched if none does).

use crate::association::{AffinityMatrix, Match, MatchSet};

const NONE: usize = usize::MAX;

/// Solves min Σ cost[i][col4row[i]] for `nr ≤ nc`; returns `col4row`.
fn lsap_min(cost: &[f64], nr: usize, nc: usize) -> Vec<usize> {
    debug_assert!(nr <= nc);
    let mut u = vec![0.0; nr];
    let mut v = vec![0.0; nc];
    let mut col4row = vec![NONE; nr];
    let mut row4col = vec![NONE; nc];
    let mut shortest = vec![f64::INFINITY; nc];
    let mut path = vec![NONE; nc];
    let mut visited_rows = vec![false; nr];
    let mut visited_cols = vec![false; nc];
    let mut remaining = vec![0usize; nc];

    for cur_row in 0..nr {
        shortest.fill(f64::INFINITY);
        path.fill(NONE);
        visited_rows.fill(false);
        visited_cols.fill(false);
        for (it, r) in remaining.iter_mut().enumerate() {
            *r = nc - it - 1;
        }
        let mut num_remaining = nc;
        let mut min_val = 0.0;
        let mut i = cur_row;
        let mut sink = NONE;

        while sink == NONE {
            visited_rows[i] = true;
            let mut index = NONE;
            let mut lowest = f64::INFINITY;
            for (it, &j) in remaining[..num_remaining].iter().enumerate() {
                let r = min_val + cost[i * nc + j] - u[i] - v[j];
                if r < shortest[j] {
                    path[j] = i;
                    shortest[j] = r;
                }
                if shortest[j] < lowest || (shortest[j] == lowest && row4col[j] == NONE) {
                    lowest = shortest[j];
                    index = it;
                }
            }
            // Costs are finite, so some column is always reachable.
            min_val = lowest;
            let j = remaining[index];
            if row4col[j] == NONE {
                sink = j;
            } else {
                i = row4col[j];
            }
            visited_cols[j] = true;
            num_remaining -= 1;
            remaining[index] = remaining[num_remaining];
        }

        u[cur_row] += min_val;
        for r in 0..nr {
            if visited_rows[r] && r != cur_row {
                u[r] += min_val - shortest[col4row[r]];
            }
        }
        for c in 0..nc {
            if visited_cols[c] {
                v[c] -= min_val - shortest[c];
            }
        }

        let mut j = sink;
        loop {
            let r = path[j];
            row4col[j] = r;
            std::mem::swap(&mut col4row[r], &mut j);
            if r == cur_row {
                break;
            }
        }
    }
    col4row
}

/// Maximum assignment over the sub-matrix selected by `rows` × `cols`.
/// Returns (total, pairs) in original indices; zero entries are dropped.
fn max_assignment(
    m: &AffinityMatrix,
    rows: &[usize],
    cols: &[usize],
) -> (f64, Vec<(usize, usize)>) {
    if rows.is_empty() || cols.is_empty() {
        return (0.0, Vec::new());
    }
    let transpose = rows.len() > cols.len();
    let (outer, inner) = if transpose {
        (cols, rows)
    } else {
        (rows, cols)
    };
    let mut cost = Vec::with_capacity(outer.len() * inner.len());
    for &a in outer {
        for &b in inner {
            let w = if transpose { m.get(b, a) } else { m.get(a, b) };
            cost.push(-w);
        }
    }
    let col4row = lsap_min(&cost, outer.len(), inner.len());
    let mut total = 0.0;
    let mut pairs = Vec::new();
    for (a, &b) in col4row.iter().enumerate() {
        let (i, j) = if transpose {
            (inner[b], outer[a])
        } else {
            (outer[a], inner[b])
        };
        let w = m.get(i, j);
        if w > 0.0 {
            total += w;
            pairs.push((i, j));
        }
    }
    pairs.sort_unstable();
    (total, pairs)
}

/// Optimistic bound on the best assignment over `rows` × `cols`: the smaller
/// of the row-maximum and column-maximum sums.
fn upper_bound(m: &AffinityMatrix, rows: &[usize], cols: &[usize]) -> f64 {
    let by_row: f64 = rows
        .iter()
        .map(|&i| cols.iter().map(|&j| m.get(i, j)).fold(0.0, f64::max))
        .sum();
    let by_col: f64 = cols
        .iter()
        .map(|&j| rows.iter().map(|&i| m.get(i, j)).fold(0.0, f64::max))
        .sum();
    by_row.min(by_col)
}

/// Binary partial assignment maximising total affinity with row and column
/// sums ≤ 1. Zero-affinity pairs are never selected.
pub fn solve_assignment(m: &AffinityMatrix) -> MatchSet {
    let (n, k) = m.shape();
    let all_rows: Vec<usize> = (0..n).collect();
    let all_cols: Vec<usize> = (0..k).collect();
    let (opt, _) = max_assignment(m, &all_rows, &all_cols);
    if opt <= 0.0 {
        return MatchSet::default();
    }
    let tol = 1e-9 * opt.max(1.0);

    let mut matches = Vec::new();
    let mut acc = 0.0;
    let mut free_cols = all_cols;
    for i in 0..n {
        let later_rows: Vec<usize> = (i + 1..n).collect();
        let mut chosen = None;
        for (pos, &j) in free_cols.iter().enumerate() {
            let w = m.get(i, j);
            if w <= 0.0 {
                continue;
            }
            let rest_cols: Vec<usize> = free_cols.iter().copied().filter(|&c| c != j).collect();
            if acc + w + upper_bound(m, &later_rows, &rest_cols) < opt - tol {
                continue;
            }
            let (rest, _) = max_assignment(m, &later_rows, &rest_cols);
            if acc + w + rest >= opt - tol {
                chosen = Some((pos, j, w));
                break;
            }
        }
        if let Some((pos, j, w)) = chosen {
            acc += w;
            free_cols.remove(pos);
            matches.push(Match::new(i, j, w));
        }
    }
    MatchSet::from_matches(matches)
}

/// Optimal total affinity without the canonical tie-breaking pass.
pub fn optimal_total(m: &AffinityMatrix) -> f64 {
    let (n, k) = m.shape();
    let rows: Vec<usize> = (0..n).collect();
    let cols: Vec<usize> = (0..k).collect();
    max_assignment(m, &rows, &cols).0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[&[f64]]) -> AffinityMatrix {
        AffinityMatrix::from_rows(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    fn pairs(ms: &MatchSet) -> Vec<(usize, usize, f64)> {
        ms.iter()
            .map(|m| (m.ego_index, m.coop_index, m.confidence))
            .collect()
    }

    #[test]
    fn diagonal_dominant() {
        let ms = solve_assignment(&mat(&[&[5.0, 0.0], &[0.0, 3.0]]));
        assert_eq!(pairs(&ms), vec![(0, 0, 5.0), (1, 1, 3.0)]);
    }

    #[test]
    fn anti_diagonal_wins() {
        // Feasible totals: {} 0, singles 2/3/4/1, (0,0)+(1,1) 3, (0,1)+(1,0) 7.
        let ms = solve_assignment(&mat(&[&[2.0, 3.0], &[4.0, 1.0]]));
        assert_eq!(pairs(&ms), vec![(0, 1, 3.0), (1, 0, 4.0)]);
        assert_eq!(ms.total_confidence(), 7.0);
    }

    #[test]
    fn all_zero_is_empty() {
        let ms = solve_assignment(&mat(&[&[0.0, 0.0, 0.0], &[0.0, 0.0, 0.0]]));
        assert!(ms.is_empty());
    }

    #[test]
    fn ties_prefer_lowest_indices() {
        let ms = solve_assignment(&mat(&[&[1.0, 1.0], &[1.0, 1.0]]));
        assert_eq!(pairs(&ms), vec![(0, 0, 1.0), (1, 1, 1.0)]);
        // Row 0 can take column 0 only if row 1 gives it up; totals tie.
        let ms = solve_assignment(&mat(&[&[2.0, 2.0], &[2.0, 0.0]]));
        assert_eq!(pairs(&ms), vec![(0, 1, 2.0), (1, 0, 2.0)]);
    }

    #[test]
    fn rectangular_both_ways() {
        let tall = mat(&[&[1.0], &[5.0], &[2.0]]);
        assert_eq!(pairs(&solve_assignment(&tall)), vec![(1, 0, 5.0)]);
        let wide = mat(&[&[1.0, 5.0, 2.0]]);
        assert_eq!(pairs(&solve_assignment(&wide)), vec![(0, 1, 5.0)]);
    }

    #[test]
    fn zero_entries_never_selected() {
        let m = mat(&[&[0.0, 0.0, 4.0], &[0.0, 0.0, 3.0], &[0.0, 0.0, 0.0]]);
        let ms = solve_assignment(&m);
        assert_eq!(pairs(&ms), vec![(0, 2, 4.0)]);
    }

    #[test]
    fn empty_matrix() {
        let m = AffinityMatrix::zeros(0, 3);
        assert!(solve_assignment(&m).is_empty());
    }
}
