//! Full-catalog ranking metrics and classification accuracy.

use rayon::prelude::*;
use serde::Serialize;

use crate::dense::{dot, Matrix};
use crate::error::{Error, Result};
use crate::graph::InteractionGraph;
use crate::scalar::Scalar;

/// Items ranked by descending score `e_u . e_i`, excluding the sorted
/// `exclude` list; ties go to the lower item index.
pub fn rank_items<T: Scalar>(
    e: &Matrix<T>,
    user: usize,
    n_users: usize,
    exclude: &[usize],
) -> Vec<usize> {
    let n_items = e.rows() - n_users;
    let mut scored = score_candidates(e, user, n_users, n_items, exclude);
    scored.sort_by(rank_order);
    scored.into_iter().map(|(i, _)| i).collect()
}

fn score_candidates<T: Scalar>(
    e: &Matrix<T>,
    user: usize,
    n_users: usize,
    n_items: usize,
    exclude: &[usize],
) -> Vec<(usize, T)> {
    let eu = e.row(user);
    (0..n_items)
        .filter(|i| exclude.binary_search(i).is_err())
        .map(|i| (i, dot(eu, e.row(n_users + i))))
        .collect()
}

fn rank_order<T: Scalar>(a: &(usize, T), b: &(usize, T)) -> std::cmp::Ordering {
    b.1.partial_cmp(&a.1)
        .unwrap_or(std::cmp::Ordering::Equal)
        .then(a.0.cmp(&b.0))
}

/// The first `k` entries of [`rank_items`], without sorting the tail.
pub fn top_k_items<T: Scalar>(
    e: &Matrix<T>,
    user: usize,
    n_users: usize,
    exclude: &[usize],
    k: usize,
) -> Vec<usize> {
    let n_items = e.rows() - n_users;
    let mut scored = score_candidates(e, user, n_users, n_items, exclude);
    if k < scored.len() {
        scored.select_nth_unstable_by(k, rank_order);
        scored.truncate(k);
    }
    scored.sort_by(rank_order);
    scored.into_iter().map(|(i, _)| i).collect()
}

/// `|top-k ∩ test| / |test|`. `test_items` must be sorted.
pub fn recall_at_k(ranked: &[usize], test_items: &[usize], k: usize) -> f64 {
    if test_items.is_empty() {
        return 0.0;
    }
    let hits = ranked
        .iter()
        .take(k)
        .filter(|i| test_items.binary_search(i).is_ok())
        .count();
    hits as f64 / test_items.len() as f64
}

/// Binary-relevance NDCG with the `1/log2(r+1)` discount. `test_items` must
/// be sorted.
pub fn ndcg_at_k(ranked: &[usize], test_items: &[usize], k: usize) -> f64 {
    if test_items.is_empty() {
        return 0.0;
    }
    let discount = |r: usize| 1.0 / ((r + 1) as f64).log2();
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, i)| test_items.binary_search(i).is_ok())
        .map(|(pos, _)| discount(pos + 1))
        .sum();
    let idcg: f64 = (1..=k.min(test_items.len())).map(discount).sum();
    dcg / idcg
}

/// Fraction of masked nodes predicted correctly.
pub fn accuracy(pred: &[usize], truth: &[usize], mask: &[bool]) -> Result<f64> {
    if pred.len() != truth.len() || truth.len() != mask.len() {
        return Err(Error::Dimension(format!(
            "{} predictions, {} labels, {} mask entries",
            pred.len(),
            truth.len(),
            mask.len()
        )));
    }
    let (mut total, mut correct) = (0usize, 0usize);
    for ((p, t), &m) in pred.iter().zip(truth).zip(mask) {
        if m {
            total += 1;
            correct += usize::from(p == t);
        }
    }
    if total == 0 {
        return Err(Error::Empty("accuracy mask selects no nodes".into()));
    }
    Ok(correct as f64 / total as f64)
}

#[derive(Debug, Clone, Serialize)]
pub struct RankingResult {
    pub k: usize,
    pub recall: f64,
    pub ndcg: f64,
    pub users: usize,
    #[serde(skip)]
    pub per_user_recall: Vec<f64>,
    #[serde(skip)]
    pub per_user_ndcg: Vec<f64>,
}

/// Recall@k and NDCG@k over every user with a nonempty test set, for each
/// requested `k`. Users are scored in parallel; averages are summed in user
/// order.
pub fn evaluate_ranking<T: Scalar>(
    e: &Matrix<T>,
    g: &InteractionGraph,
    ks: &[usize],
) -> Result<Vec<RankingResult>> {
    if ks.iter().any(|&k| k == 0) {
        return Err(Error::Params("k must be at least 1".into()));
    }
    if e.rows() != g.n_nodes() {
        return Err(Error::Dimension(format!(
            "{} embedding rows for {} nodes",
            e.rows(),
            g.n_nodes()
        )));
    }
    let users: Vec<usize> = (0..g.n_users())
        .filter(|&u| !g.test_items_of(u).is_empty())
        .collect();
    if users.is_empty() {
        return Err(Error::Empty("no user has test interactions".into()));
    }
    let max_k = ks.iter().copied().max().unwrap_or(0);
    let per_user: Vec<Vec<(f64, f64)>> = users
        .par_iter()
        .map(|&u| {
            let top = top_k_items(e, u, g.n_users(), g.items_of(u), max_k);
            let test = g.test_items_of(u);
            ks.iter()
                .map(|&k| (recall_at_k(&top, test, k), ndcg_at_k(&top, test, k)))
                .collect()
        })
        .collect();
    Ok(ks
        .iter()
        .enumerate()
        .map(|(slot, &k)| {
            let per_user_recall: Vec<f64> = per_user.iter().map(|v| v[slot].0).collect();
            let per_user_ndcg: Vec<f64> = per_user.iter().map(|v| v[slot].1).collect();
            let n = users.len() as f64;
            RankingResult {
                k,
                recall: per_user_recall.iter().sum::<f64>() / n,
                ndcg: per_user_ndcg.iter().sum::<f64>() / n,
                users: users.len(),
                per_user_recall,
                per_user_ndcg,
            }
        })
        .collect())
}

/// Expected Recall@k of a uniformly random ranking of each user's candidate
/// items, averaged over users with test interactions: `min(k, c_u) / c_u`.
pub fn random_recall_baseline(g: &InteractionGraph, k: usize) -> f64 {
    let vals: Vec<f64> = (0..g.n_users())
        .filter(|&u| !g.test_items_of(u).is_empty())
        .map(|u| {
            let candidates = g.n_items() - g.items_of(u).len();
            k.min(candidates) as f64 / candidates as f64
        })
        .collect();
    vals.iter().sum::<f64>() / vals.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn user_item_matrix(user: Vec<f64>, items: &[Vec<f64>]) -> Matrix<f64> {
        let mut rows = vec![user];
        rows.extend_from_slice(items);
        Matrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn ranking_order_and_ties() {
        let e = user_item_matrix(vec![1.0], &[vec![0.9], vec![0.1]]);
        assert_eq!(rank_items(&e, 0, 1, &[]), vec![0, 1]);
        let tie = user_item_matrix(vec![1.0], &[vec![0.5], vec![0.5], vec![0.5]]);
        assert_eq!(rank_items(&tie, 0, 1, &[]), vec![0, 1, 2]);
        let e = user_item_matrix(vec![1.0], &[vec![0.9], vec![0.1], vec![0.5]]);
        assert_eq!(rank_items(&e, 0, 1, &[0]), vec![2, 1]);
        assert_eq!(top_k_items(&e, 0, 1, &[], 2), vec![0, 2]);
    }

    #[test]
    fn recall_examples() {
        let ranked: Vec<usize> = (0..30).collect();
        assert_eq!(recall_at_k(&ranked, &[0], 20), 1.0);
        assert_eq!(recall_at_k(&ranked, &[20], 20), 0.0);
        assert_eq!(recall_at_k(&ranked, &[3, 25], 20), 0.5);
    }

    #[test]
    fn ndcg_examples() {
        let ranked: Vec<usize> = (0..30).collect();
        assert_eq!(ndcg_at_k(&ranked, &[0], 20), 1.0);
        assert!((ndcg_at_k(&ranked, &[1], 20) - 0.630_929_753_571_457_4).abs() < 1e-15);
        assert_eq!(ndcg_at_k(&ranked, &[25], 20), 0.0);
    }

    #[test]
    fn accuracy_examples() {
        let mask = [true; 4];
        assert_eq!(accuracy(&[0, 1, 1, 0], &[0, 1, 1, 0], &mask).unwrap(), 1.0);
        assert_eq!(accuracy(&[1, 0, 0, 1], &[0, 1, 1, 0], &mask).unwrap(), 0.0);
        assert_eq!(accuracy(&[0, 1, 0, 1], &[0, 1, 1, 0], &mask).unwrap(), 0.5);
        assert!(accuracy(&[0], &[0], &[false]).is_err());
        assert!(accuracy(&[0], &[0, 1], &[true]).is_err());
    }
}
