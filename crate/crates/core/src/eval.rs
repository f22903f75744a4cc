//! Tools for comparing fitted parameters with a known truth: optimal
//! pattern alignment and clustering agreement.

use std::collections::HashMap;
use std::hash::Hash;

use crate::model::{EmissionModel, Point};

/// Minimum-cost assignment of rows to columns for a square cost matrix
/// (Hungarian algorithm). Returns `assign[row] = column`.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    assert!(cost.iter().all(|r| r.len() == n), "cost matrix must be square");
    // potentials and matching use 1-based indices with 0 as a sentinel
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut col_match = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        col_match[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_match[j0];
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
                    u[col_match[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if col_match[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_match[j0] = col_match[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        if col_match[j] > 0 {
            assign[col_match[j] - 1] = j - 1;
        }
    }
    assign
}

/// Pattern means for an average receiver facing an average server in the
/// reference context (intercept only).
pub fn reference_means(emission: &EmissionModel) -> Vec<Point> {
    let offset = emission.mean_offset();
    emission
        .components()
        .iter()
        .map(|c| (c.alpha() + &offset).column(0).into_owned())
        .collect()
}

/// Pattern alignment between a truth and an estimate of equal size.
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    /// `estimate_of[m]` is the estimated pattern matched to true pattern `m`.
    pub estimate_of: Vec<usize>,
    /// Euclidean distance of every matched pair, in true pattern order.
    pub distances: Vec<f64>,
}

impl Alignment {
    pub fn max_distance(&self) -> f64 {
        self.distances.iter().copied().fold(0.0, f64::max)
    }

    pub fn mean_distance(&self) -> f64 {
        self.distances.iter().sum::<f64>() / self.distances.len().max(1) as f64
    }
}

/// Match estimated to true means minimizing total Euclidean distance.
pub fn align_means(truth: &[Point], estimate: &[Point]) -> Alignment {
    assert_eq!(truth.len(), estimate.len(), "alignment needs equal pattern counts");
    let cost: Vec<Vec<f64>> = truth
        .iter()
        .map(|t| estimate.iter().map(|e| (t - e).norm()).collect())
        .collect();
    let estimate_of = hungarian(&cost);
    let distances = estimate_of.iter().enumerate().map(|(m, &j)| cost[m][j]).collect();
    Alignment { estimate_of, distances }
}

fn choose2(n: f64) -> f64 {
    n * (n - 1.0) / 2.0
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index<A: Eq + Hash, B: Eq + Hash>(a: &[A], b: &[B]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings differ in length");
    let n = a.len() as f64;
    let mut table: HashMap<(&A, &B), f64> = HashMap::new();
    let mut rows: HashMap<&A, f64> = HashMap::new();
    let mut cols: HashMap<&B, f64> = HashMap::new();
    for (x, y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1.0;
        *rows.entry(x).or_default() += 1.0;
        *cols.entry(y).or_default() += 1.0;
    }
    let index: f64 = table.values().map(|c| choose2(*c)).sum();
    let sum_rows: f64 = rows.values().map(|c| choose2(*c)).sum();
    let sum_cols: f64 = cols.values().map(|c| choose2(*c)).sum();
    let expected = sum_rows * sum_cols / choose2(n);
    let max = 0.5 * (sum_rows + sum_cols);
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_force(cost: &[Vec<f64>]) -> f64 {
        fn rec(cost: &[Vec<f64>], row: usize, used: &mut Vec<bool>) -> f64 {
            if row == cost.len() {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for j in 0..cost.len() {
                if !used[j] {
                    used[j] = true;
                    best = best.min(cost[row][j] + rec(cost, row + 1, used));
                    used[j] = false;
                }
            }
            best
        }
        rec(cost, 0, &mut vec![false; cost.len()])
    }

    #[test]
    fn ari_of_identical_and_relabeled_partitions_is_one() {
        let a = [0, 0, 1, 1, 2, 2];
        let b = ['x', 'x', 'z', 'z', 'y', 'y'];
        assert!((adjusted_rand_index(&a, &b) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ari_known_value() {
        // classic example: ARI = 0.24242...
        let a = [0, 0, 0, 1, 1, 1];
        let b = [0, 0, 1, 1, 2, 2];
        assert!((adjusted_rand_index(&a, &b) - 0.242_424_242_424_242_4).abs() < 1e-12);
    }

    #[test]
    fn alignment_recovers_permutation() {
        let truth = vec![Point::new(0.0, 0.0), Point::new(3.0, 0.0), Point::new(0.0, 3.0)];
        let est = vec![Point::new(0.1, 3.0), Point::new(0.0, 0.1), Point::new(3.0, -0.1)];
        let a = align_means(&truth, &est);
        assert_eq!(a.estimate_of, vec![1, 2, 0]);
        assert!(a.max_distance() < 0.11);
    }

    proptest! {
        #[test]
        fn hungarian_is_optimal(raw in prop::collection::vec(0.0f64..10.0, 25)) {
            let n = 5;
            let cost: Vec<Vec<f64>> = raw.chunks(n).map(|c| c.to_vec()).collect();
            let assign = hungarian(&cost);
            let mut seen = assign.clone();
            seen.sort();
            prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
            let total: f64 = assign.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
            prop_assert!((total - brute_force(&cost)).abs() < 1e-9);
        }
    }
}
