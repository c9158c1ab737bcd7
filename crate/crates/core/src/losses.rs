//! Loss terms over final embeddings `E` and their analytic gradients.
//!
//! Batches address rows of `E` by node index: users are `0..n_users` and
//! item `i` is node `n_users + i`.

use std::collections::BTreeMap;

use crate::dense::{add_scaled, dot, squared_distance, Matrix};
use crate::error::{Error, Result};
use crate::graph::{pair_laplacian, InteractionGraph, OperatorKind, SparseOperator};
use crate::scalar::Scalar;

/// One row per positive `(anchor, positive)` pair, each with `k` negatives.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TrainingBatch {
    pub anchors: Vec<usize>,
    pub positives: Vec<usize>,
    /// Row-major `rows x k` negative node indices.
    pub negatives: Vec<usize>,
    pub k: usize,
}

impl TrainingBatch {
    pub fn new(
        anchors: Vec<usize>,
        positives: Vec<usize>,
        negatives: Vec<usize>,
        k: usize,
    ) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidBatch("K must be at least 1".into()));
        }
        if anchors.len() != positives.len() || negatives.len() != anchors.len() * k {
            return Err(Error::InvalidBatch(format!(
                "{} anchors, {} positives, {} negatives for K={k}",
                anchors.len(),
                positives.len(),
                negatives.len()
            )));
        }
        Ok(Self {
            anchors,
            positives,
            negatives,
            k,
        })
    }

    pub fn empty(k: usize) -> Self {
        Self {
            k,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn negatives_of(&self, row: usize) -> &[usize] {
        &self.negatives[row * self.k..(row + 1) * self.k]
    }

    /// Every `(anchor, positive, negative)` triple.
    pub fn triples(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        (0..self.len()).flat_map(move |r| {
            self.negatives_of(r)
                .iter()
                .map(move |&j| (self.anchors[r], self.positives[r], j))
        })
    }

    pub fn positive_pairs(&self) -> Vec<(usize, usize)> {
        self.anchors
            .iter()
            .copied()
            .zip(self.positives.iter().copied())
            .collect()
    }

    /// Per-row `(anchor, negative)` pairs: `k` for every row.
    pub fn negative_pairs(&self) -> Vec<(usize, usize)> {
        self.triples().map(|(u, _, j)| (u, j)).collect()
    }

    /// Sorted distinct anchors.
    pub fn anchor_set(&self) -> Vec<usize> {
        sorted_unique(self.anchors.iter().copied())
    }

    /// Sorted distinct positive and negative nodes.
    pub fn item_set(&self) -> Vec<usize> {
        sorted_unique(self.positives.iter().chain(&self.negatives).copied())
    }

    /// Checks positives are training neighbors of their anchor and negatives
    /// are not.
    pub fn validate(&self, g: &InteractionGraph) -> Result<()> {
        let nu = g.n_users();
        for r in 0..self.len() {
            let u = self.anchors[r];
            if u >= nu {
                return Err(Error::InvalidBatch(format!(
                    "anchor {u} is not a user node"
                )));
            }
            let item = |node: usize| {
                node.checked_sub(nu)
                    .filter(|&i| i < g.n_items())
                    .ok_or_else(|| Error::InvalidBatch(format!("node {node} is not an item node")))
            };
            let i = item(self.positives[r])?;
            if !g.has_train_edge(u, i) {
                return Err(Error::InvalidBatch(format!(
                    "positive ({u}, {i}) is not a training edge"
                )));
            }
            for &j in self.negatives_of(r) {
                if g.has_train_edge(u, item(j)?) {
                    return Err(Error::InvalidBatch(format!(
                        "negative {j} is adjacent to anchor {u}"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn sorted_unique(it: impl Iterator<Item = usize>) -> Vec<usize> {
    let mut v: Vec<usize> = it.collect();
    v.sort_unstable();
    v.dedup();
    v
}

#[derive(Debug, Clone)]
pub struct LossOutput<T> {
    pub value: T,
    pub grad: Matrix<T>,
    pub parts: BTreeMap<&'static str, T>,
}

impl<T: Scalar> LossOutput<T> {
    fn new(value: T, grad: Matrix<T>) -> Self {
        Self {
            value,
            grad,
            parts: BTreeMap::new(),
        }
    }

    fn part(mut self, name: &'static str, v: T) -> Self {
        self.parts.insert(name, v);
        self
    }

    pub fn get(&self, name: &str) -> Option<T> {
        self.parts.get(name).copied()
    }
}

/// Inner-product score `e_u . e_i`.
#[inline]
pub fn score<T: Scalar>(e: &Matrix<T>, u: usize, i: usize) -> T {
    dot(e.row(u), e.row(i))
}

/// BPR loss `-Σ ln σ(ŷ_ui - ŷ_uj) + λ·e0_sq_norm`. The gradient covers the
/// ranking term only; the `λ` term is applied by the optimizer on `E^(0)`.
pub fn bpr_loss<T: Scalar>(
    e: &Matrix<T>,
    batch: &TrainingBatch,
    lambda: T,
    e0_sq_norm: T,
) -> LossOutput<T> {
    let mut grad = Matrix::zeros(e.rows(), e.cols());
    let mut ranking = T::zero();
    let mut diff = vec![T::zero(); e.cols()];
    let mut eu = vec![T::zero(); e.cols()];
    for (u, i, j) in batch.triples() {
        let x = score(e, u, i) - score(e, u, j);
        ranking = ranking + (-x).softplus();
        // d/dx of -ln σ(x) is σ(x) - 1 = -σ(-x).
        let c = -(-x).sigmoid();
        for ((d, &a), &b) in diff.iter_mut().zip(e.row(i)).zip(e.row(j)) {
            *d = a - b;
        }
        eu.copy_from_slice(e.row(u));
        add_scaled(grad.row_mut(u), c, &diff);
        add_scaled(grad.row_mut(i), c, &eu);
        add_scaled(grad.row_mut(j), -c, &eu);
    }
    let l2 = lambda * e0_sq_norm;
    LossOutput::new(ranking + l2, grad)
        .part("bpr", ranking)
        .part("l2", l2)
}

/// Split of the ranking term into `-K Σ ŷ_ui` and `Σ ln(e^ŷ_ui + e^ŷ_uj)`.
pub fn bpr_split<T: Scalar>(e: &Matrix<T>, batch: &TrainingBatch) -> (T, T) {
    let k = T::from_count(batch.k);
    let pos = -k
        * (0..batch.len())
            .map(|r| score(e, batch.anchors[r], batch.positives[r]))
            .sum::<T>();
    let neg = batch
        .triples()
        .map(|(u, i, j)| score(e, u, i).log_add_exp(score(e, u, j)))
        .sum();
    (pos, neg)
}

/// `Tr(E^T L_pos E) - β Tr(E^T L_neg E)` with gradient `2 (L_pos - β L_neg) E`.
pub fn coles_loss<T: Scalar>(
    e: &Matrix<T>,
    l_pos: &SparseOperator<T>,
    l_neg: &SparseOperator<T>,
    beta: T,
) -> Result<LossOutput<T>> {
    for op in [l_pos, l_neg] {
        if !op.kind().is_laplacian() {
            return Err(Error::OperatorKind {
                expected: "a Laplacian",
                found: op.kind(),
            });
        }
        if op.dim() != e.rows() {
            return Err(Error::Dimension(format!(
                "Laplacian of dimension {} for {} embedding rows",
                op.dim(),
                e.rows()
            )));
        }
    }
    let lp = l_pos.apply(e)?;
    let ln = l_neg.apply(e)?;
    let trace = |y: &Matrix<T>| -> T {
        e.as_slice()
            .iter()
            .zip(y.as_slice())
            .map(|(&a, &b)| a * b)
            .sum()
    };
    let pos = trace(&lp);
    let neg = trace(&ln);
    let two = T::lit(2.0);
    let mut grad = lp;
    grad.scale(two);
    grad.axpy(-two * beta, &ln);
    Ok(LossOutput::new(pos - beta * neg, grad)
        .part("coles_pos", pos)
        .part("coles_neg", neg))
}

/// Smoothness `Σ |e_a - e_b|^2` over the listed pairs.
pub fn coles_smoothness<T: Scalar>(e: &Matrix<T>, pairs: &[(usize, usize)]) -> T {
    pairs
        .iter()
        .map(|&(a, b)| squared_distance(e.row(a), e.row(b)))
        .sum()
}

/// Positive and negative mini-batch Laplacians: the positive pairs, and
/// every row's `k` anchor-negative pairs.
pub fn batch_laplacians<T: Scalar>(
    batch: &TrainingBatch,
    n: usize,
) -> (SparseOperator<T>, SparseOperator<T>) {
    (
        pair_laplacian(n, &batch.positive_pairs(), OperatorKind::Laplacian),
        pair_laplacian(n, &batch.negative_pairs(), OperatorKind::NegLaplacian),
    )
}

/// Sum of Gaussian potentials `e^{-t|e_x - e_y|^2}` over ordered pairs of
/// `nodes`, self-pairs included. Accumulates its gradient into `grad`.
fn gaussian_potential_set<T: Scalar>(
    e: &Matrix<T>,
    nodes: &[usize],
    t: T,
    grad: &mut Matrix<T>,
) -> T {
    let two = T::lit(2.0);
    let mut value = T::from_count(nodes.len());
    let mut diff = vec![T::zero(); e.cols()];
    for (a_pos, &x) in nodes.iter().enumerate() {
        for &y in &nodes[a_pos + 1..] {
            for ((d, &p), &q) in diff.iter_mut().zip(e.row(x)).zip(e.row(y)) {
                *d = p - q;
            }
            let f = (-t * dot(&diff, &diff)).exp();
            // Both orderings (x, y) and (y, x).
            value = value + two * f;
            let c = -two * two * t * f;
            add_scaled(grad.row_mut(x), c, &diff);
            add_scaled(grad.row_mut(y), -c, &diff);
        }
    }
    value
}

/// Homogeneous Gaussian-potential regularizer over user and item node sets.
pub fn hom_reg<T: Scalar>(e: &Matrix<T>, users: &[usize], items: &[usize], t: T) -> LossOutput<T> {
    let mut grad = Matrix::zeros(e.rows(), e.cols());
    let value = gaussian_potential_set(e, users, t, &mut grad)
        + gaussian_potential_set(e, items, t, &mut grad);
    LossOutput::new(value, grad).part("hom", value)
}

/// Heterogeneous regularizer `Σ_(u,i,j) e^{-t|e_i - e_j|^2}`.
pub fn het_reg<T: Scalar>(e: &Matrix<T>, batch: &TrainingBatch, t: T) -> LossOutput<T> {
    let mut grad = Matrix::zeros(e.rows(), e.cols());
    let mut value = T::zero();
    let two = T::lit(2.0);
    let mut diff = vec![T::zero(); e.cols()];
    for (_, i, j) in batch.triples() {
        for ((d, &p), &q) in diff.iter_mut().zip(e.row(i)).zip(e.row(j)) {
            *d = p - q;
        }
        let f = (-t * dot(&diff, &diff)).exp();
        value = value + f;
        let c = -two * t * f;
        add_scaled(grad.row_mut(i), c, &diff);
        add_scaled(grad.row_mut(j), -c, &diff);
    }
    LossOutput::new(value, grad).part("het", value)
}

/// Multipliers on the three terms of the combined objective. All ones is the
/// plain objective; zeros switch terms off for ablations.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ObjectiveWeights {
    pub coles: f64,
    pub hom: f64,
    pub het: f64,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        Self {
            coles: 1.0,
            hom: 1.0,
            het: 1.0,
        }
    }
}

/// COLES on the batch Laplacians plus the hom/het debiasing regularizers
/// restricted to the batch's users and items.
pub fn gr_coles_loss<T: Scalar>(
    e: &Matrix<T>,
    batch: &TrainingBatch,
    l_pos: &SparseOperator<T>,
    l_neg: &SparseOperator<T>,
    beta: T,
    t: T,
    weights: ObjectiveWeights,
) -> Result<LossOutput<T>> {
    let coles = coles_loss(e, l_pos, l_neg, beta)?;
    let hom = hom_reg(e, &batch.anchor_set(), &batch.item_set(), t);
    let het = het_reg(e, batch, t);
    let (wc, wh, wt) = (
        T::lit(weights.coles),
        T::lit(weights.hom),
        T::lit(weights.het),
    );
    let mut grad = Matrix::zeros(e.rows(), e.cols());
    for (w, g) in [(wc, &coles.grad), (wh, &hom.grad), (wt, &het.grad)] {
        if !w.is_zero() {
            grad.axpy(w, g);
        }
    }
    let value = wc * coles.value + wh * hom.value + wt * het.value;
    Ok(LossOutput::new(value, grad)
        .part("coles", coles.value)
        .part("coles_pos", coles.parts["coles_pos"])
        .part("coles_neg", coles.parts["coles_neg"])
        .part("hom", hom.value)
        .part("het", het.value))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(r: &[Vec<f64>]) -> Matrix<f64> {
        Matrix::from_rows(r).unwrap()
    }

    fn single(k_neg: usize) -> TrainingBatch {
        TrainingBatch::new(vec![0], vec![1], vec![2; k_neg], k_neg).unwrap()
    }

    #[test]
    fn score_examples() {
        let e = rows(&[
            vec![1.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![-1.0, 0.0],
        ]);
        assert_eq!(score(&e, 0, 1), 1.0);
        assert_eq!(score(&e, 0, 2), 0.0);
        assert_eq!(score(&e, 0, 3), -1.0);
    }

    #[test]
    fn bpr_reference_values() {
        let tie = rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]]);
        let out = bpr_loss(&tie, &single(1), 0.0, 0.0);
        assert!((out.value - std::f64::consts::LN_2).abs() < 1e-15);

        let best = rows(&[vec![1.0, 0.0], vec![1.0, 0.0], vec![-1.0, 0.0]]);
        let out = bpr_loss(&best, &single(1), 0.0, 0.0);
        assert!((out.value - 0.126_928_011_042_972_5).abs() < 1e-12);

        let worst = rows(&[vec![1.0, 0.0], vec![-1.0, 0.0], vec![1.0, 0.0]]);
        let out = bpr_loss(&worst, &single(1), 0.0, 0.0);
        assert!((out.value - 2.126_928_011_042_972_5).abs() < 1e-12);

        let out = bpr_loss(&worst, &single(1), 0.5, 4.0);
        assert!((out.value - (2.126_928_011_042_972_5 + 2.0)).abs() < 1e-12);
        assert_eq!(out.get("l2"), Some(2.0));
    }

    #[test]
    fn bpr_split_example() {
        let e = rows(&[vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]);
        let (pos, neg) = bpr_split(&e, &single(1));
        assert_eq!(pos, -1.0);
        assert!((neg - 1.313_261_687_518_222_8).abs() < 1e-15);
        let total = bpr_loss(&e, &single(1), 0.0, 0.0).value;
        assert!((pos + neg - total).abs() < 1e-14);
    }

    #[test]
    fn bpr_split_identical_embeddings() {
        let e = rows(&vec![vec![0.6, 0.8]; 5]);
        let batch =
            TrainingBatch::new(vec![0, 0, 1], vec![2, 3, 2], vec![4, 3, 4, 4, 3, 4], 2).unwrap();
        let (pos, _) = bpr_split(&e, &batch);
        assert!((pos - (-2.0 * 3.0)).abs() < 1e-14);
    }

    #[test]
    fn coles_examples() {
        let e = rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let lp: SparseOperator<f64> = pair_laplacian(2, &[(0, 1)], OperatorKind::Laplacian);
        let ln: SparseOperator<f64> = SparseOperator::zeros(2, OperatorKind::NegLaplacian);
        let out = coles_loss(&e, &lp, &ln, 0.0).unwrap();
        assert!((out.value - 2.0).abs() < 1e-15);

        let same = rows(&vec![vec![0.3, -0.2]; 2]);
        assert_eq!(coles_loss(&same, &lp, &ln, 0.0).unwrap().value, 0.0);

        let bad: SparseOperator<f64> = SparseOperator::zeros(2, OperatorKind::Raw);
        assert!(coles_loss(&e, &bad, &ln, 0.0).is_err());
        let small: SparseOperator<f64> = SparseOperator::zeros(1, OperatorKind::Laplacian);
        assert!(coles_loss(&e, &small, &ln, 0.0).is_err());
    }

    #[test]
    fn smoothness_examples() {
        let e = rows(&[vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(coles_smoothness(&e, &[(0, 1)]), 0.0);
        assert_eq!(coles_smoothness(&e, &[(0, 2), (1, 2)]), 4.0);
    }

    #[test]
    fn hom_examples() {
        let e = rows(&[vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(hom_reg(&e, &[0], &[2], 2.0).value, 2.0);
        assert_eq!(hom_reg(&e, &[0, 1], &[], 0.7).value, 4.0);
        let v = hom_reg(&e, &[0, 2], &[], 2.0).value;
        assert!((v - 2.036_631_277_777_468_4).abs() < 1e-14);
    }

    #[test]
    fn het_examples() {
        let e = rows(&[
            vec![1.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 0.0],
        ]);
        let b = TrainingBatch::new(vec![0], vec![1], vec![3], 1).unwrap();
        assert_eq!(het_reg(&e, &b, 2.0).value, 1.0);
        let b = TrainingBatch::new(vec![0], vec![1], vec![2], 1).unwrap();
        assert!((het_reg(&e, &b, 2.0).value - 0.018_315_638_888_734_18).abs() < 1e-15);
        assert_eq!(het_reg(&e, &TrainingBatch::empty(1), 2.0).value, 0.0);
    }

    #[test]
    fn gr_coles_all_zero() {
        let e = rows(&vec![vec![0.0, 1.0]; 3]);
        let batch = TrainingBatch::empty(1);
        let (lp, ln) = batch_laplacians::<f64>(&batch, 3);
        let out =
            gr_coles_loss(&e, &batch, &lp, &ln, 0.0, 2.0, ObjectiveWeights::default()).unwrap();
        assert_eq!(out.value, 0.0);
    }

    #[test]
    fn batch_shape_checked() {
        assert!(TrainingBatch::new(vec![0], vec![1], vec![2, 3], 1).is_err());
        assert!(TrainingBatch::new(vec![0], vec![1], vec![], 0).is_err());
    }

    #[test]
    fn batch_validation_against_graph() {
        let g = InteractionGraph::new(1, 3, vec![(0, 0), (0, 1)], vec![]).unwrap();
        let ok = TrainingBatch::new(vec![0], vec![1], vec![3], 1).unwrap();
        ok.validate(&g).unwrap();
        let neg_adjacent = TrainingBatch::new(vec![0], vec![1], vec![2], 1).unwrap();
        assert!(neg_adjacent.validate(&g).is_err());
        let not_edge = TrainingBatch::new(vec![0], vec![3], vec![2], 1).unwrap();
        assert!(not_edge.validate(&g).is_err());
    }
}
