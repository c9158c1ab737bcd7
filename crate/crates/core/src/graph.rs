//! Interaction graphs and the sparse operators built from them.
//!
//! Node layout for bipartite graphs: users occupy `[0, n_users)`, items
//! occupy `[n_users, n_users + n_items)`.

use std::collections::HashSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dense::Matrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Largest node count accepted by the dense oracles.
pub const DENSE_ORACLE_LIMIT: usize = 2_000;

/// Bipartite user-item graph with a training split and a held-out test split.
#[derive(Debug, Clone)]
pub struct InteractionGraph {
    n_users: usize,
    n_items: usize,
    train: Vec<(usize, usize)>,
    test: Vec<(usize, usize)>,
    /// Sorted training items per user.
    user_items: Vec<Vec<usize>>,
    /// Sorted test items per user.
    user_test: Vec<Vec<usize>>,
    /// Training degree per node (users first, then items).
    degrees: Vec<usize>,
}

impl InteractionGraph {
    pub fn new(
        n_users: usize,
        n_items: usize,
        train: Vec<(usize, usize)>,
        test: Vec<(usize, usize)>,
    ) -> Result<Self> {
        let mut user_items = vec![Vec::new(); n_users];
        let mut user_test = vec![Vec::new(); n_users];
        let mut degrees = vec![0usize; n_users + n_items];
        for (split, edges, lists) in [
            ("train", &train, &mut user_items),
            ("test", &test, &mut user_test),
        ] {
            for &(u, i) in edges {
                if u >= n_users || i >= n_items {
                    return Err(Error::InvalidGraph(format!(
                        "{split} edge ({u}, {i}) out of range for {n_users} users and {n_items} items"
                    )));
                }
                lists[u].push(i);
            }
            for (u, items) in lists.iter_mut().enumerate() {
                items.sort_unstable();
                if let Some(w) = items.windows(2).find(|w| w[0] == w[1]) {
                    return Err(Error::DuplicateEdge {
                        user: u,
                        item: w[0],
                        split,
                    });
                }
            }
        }
        for (u, items) in user_test.iter().enumerate() {
            if let Some(&i) = items
                .iter()
                .find(|i| user_items[u].binary_search(i).is_ok())
            {
                return Err(Error::InvalidGraph(format!(
                    "interaction ({u}, {i}) appears in both train and test splits"
                )));
            }
        }
        for &(u, i) in &train {
            degrees[u] += 1;
            degrees[n_users + i] += 1;
        }
        Ok(Self {
            n_users,
            n_items,
            train,
            test,
            user_items,
            user_test,
            degrees,
        })
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    /// Total node count `n_users + n_items`.
    pub fn n_nodes(&self) -> usize {
        self.n_users + self.n_items
    }

    /// Training edge count `m`.
    pub fn n_train(&self) -> usize {
        self.train.len()
    }

    pub fn train_edges(&self) -> &[(usize, usize)] {
        &self.train
    }

    pub fn test_edges(&self) -> &[(usize, usize)] {
        &self.test
    }

    pub fn degrees(&self) -> &[usize] {
        &self.degrees
    }

    pub fn user_degree(&self, u: usize) -> usize {
        self.degrees[u]
    }

    /// Sorted training items of `u` (item indices, not node indices).
    pub fn items_of(&self, u: usize) -> &[usize] {
        &self.user_items[u]
    }

    pub fn test_items_of(&self, u: usize) -> &[usize] {
        &self.user_test[u]
    }

    pub fn item_node(&self, item: usize) -> usize {
        self.n_users + item
    }

    pub fn has_train_edge(&self, u: usize, i: usize) -> bool {
        self.user_items[u].binary_search(&i).is_ok()
    }

    /// Draws `k` distinct items not adjacent to `u` in the training split.
    pub fn sample_negatives<R: Rng + ?Sized>(
        &self,
        u: usize,
        k: usize,
        rng: &mut R,
    ) -> Result<Vec<usize>> {
        sample_non_neighbors(&self.user_items[u], self.n_items, k, rng).ok_or(
            Error::NotEnoughNegatives {
                user: u,
                available: self.n_items - self.user_items[u].len(),
                requested: k,
            },
        )
    }
}

/// Samples `k` distinct values from `0..universe` that are not in the sorted
/// `excluded` list. Returns `None` when fewer than `k` candidates exist.
pub(crate) fn sample_non_neighbors<R: Rng + ?Sized>(
    excluded: &[usize],
    universe: usize,
    k: usize,
    rng: &mut R,
) -> Option<Vec<usize>> {
    let available = universe - excluded.len();
    if available < k {
        return None;
    }
    // Rejection sampling is fast while the excluded set is a small fraction.
    if excluded.len() * 2 <= universe {
        let mut picked = Vec::with_capacity(k);
        while picked.len() < k {
            let j = rng.random_range(0..universe);
            if excluded.binary_search(&j).is_err() && !picked.contains(&j) {
                picked.push(j);
            }
        }
        Some(picked)
    } else {
        let candidates: Vec<usize> = (0..universe)
            .filter(|j| excluded.binary_search(j).is_err())
            .collect();
        Some(candidates.choose_multiple(rng, k).copied().collect())
    }
}

/// Plain undirected graph for the node-classification path.
#[derive(Debug, Clone)]
pub struct PlainGraph {
    adjacency: Vec<Vec<usize>>,
    features: Option<Matrix<f64>>,
    labels: Option<Vec<i64>>,
}

impl PlainGraph {
    /// Builds the graph from an undirected edge list. Self-loops and repeated
    /// edges are ignored.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adjacency = vec![Vec::new(); n];
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::InvalidGraph(format!(
                    "edge ({a}, {b}) out of range for {n} nodes"
                )));
            }
            if a != b {
                adjacency[a].push(b);
                adjacency[b].push(a);
            }
        }
        for nbrs in &mut adjacency {
            nbrs.sort_unstable();
            nbrs.dedup();
        }
        Ok(Self {
            adjacency,
            features: None,
            labels: None,
        })
    }

    pub fn with_features(mut self, features: Matrix<f64>) -> Result<Self> {
        if features.rows() != self.n_nodes() {
            return Err(Error::Dimension(format!(
                "{} feature rows for {} nodes",
                features.rows(),
                self.n_nodes()
            )));
        }
        self.features = Some(features);
        Ok(self)
    }

    pub fn with_labels(mut self, labels: Vec<i64>) -> Result<Self> {
        if labels.len() != self.n_nodes() {
            return Err(Error::Dimension(format!(
                "{} labels for {} nodes",
                labels.len(),
                self.n_nodes()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn n_nodes(&self) -> usize {
        self.adjacency.len()
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adjacency[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adjacency[v].len()
    }

    pub fn n_edges(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Each undirected edge once, as `(a, b)` with `a < b`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(a, nbrs)| nbrs.iter().filter(move |&&b| a < b).map(move |&b| (a, b)))
            .collect()
    }

    pub fn features(&self) -> Option<&Matrix<f64>> {
        self.features.as_ref()
    }

    pub fn labels(&self) -> Option<&[i64]> {
        self.labels.as_deref()
    }

    pub fn isolated_nodes(&self) -> Vec<usize> {
        (0..self.n_nodes())
            .filter(|&v| self.degree(v) == 0)
            .collect()
    }

    /// Drops isolated nodes, re-indexing the survivors in order. Returns the
    /// original index of every kept node.
    pub fn without_isolated(&self) -> (Self, Vec<usize>) {
        let kept: Vec<usize> = (0..self.n_nodes())
            .filter(|&v| self.degree(v) > 0)
            .collect();
        let mut new_index = vec![usize::MAX; self.n_nodes()];
        for (new, &old) in kept.iter().enumerate() {
            new_index[old] = new;
        }
        let adjacency = kept
            .iter()
            .map(|&old| self.adjacency[old].iter().map(|&b| new_index[b]).collect())
            .collect();
        let features = self.features.as_ref().map(|f| {
            let rows: Vec<Vec<f64>> = kept.iter().map(|&v| f.row(v).to_vec()).collect();
            Matrix::from_rows(&rows).expect("rows share the feature width")
        });
        let labels = self
            .labels
            .as_ref()
            .map(|l| kept.iter().map(|&v| l[v]).collect());
        (
            Self {
                adjacency,
                features,
                labels,
            },
            kept,
        )
    }

    /// Raw 0/1 adjacency operator.
    pub fn adjacency<T: Scalar>(&self) -> SparseOperator<T> {
        let triplets = self
            .adjacency
            .iter()
            .enumerate()
            .flat_map(|(a, nbrs)| nbrs.iter().map(move |&b| (a, b, T::one())));
        SparseOperator::from_triplets(self.n_nodes(), triplets, OperatorKind::Raw)
    }

    /// Samples `k` non-neighbors for every node and returns the Laplacian of
    /// the sampled pair graph. Every node is an anchor.
    pub fn sample_negative_laplacian<T: Scalar>(
        &self,
        k: usize,
        seed: u64,
    ) -> Result<SparseOperator<T>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pairs = self.sample_negative_pairs(k, &mut rng)?;
        Ok(pair_laplacian(
            self.n_nodes(),
            &pairs,
            OperatorKind::NegLaplacian,
        ))
    }

    pub fn sample_negative_pairs<R: Rng + ?Sized>(
        &self,
        k: usize,
        rng: &mut R,
    ) -> Result<Vec<(usize, usize)>> {
        if k == 0 {
            return Err(Error::Params("negative count K must be at least 1".into()));
        }
        let n = self.n_nodes();
        let mut pairs = Vec::with_capacity(n * k);
        let mut excluded = Vec::new();
        for a in 0..n {
            excluded.clear();
            excluded.extend_from_slice(&self.adjacency[a]);
            let pos = excluded.binary_search(&a).unwrap_or_else(|p| p);
            excluded.insert(pos, a);
            let negs =
                sample_non_neighbors(&excluded, n, k, rng).ok_or(Error::NotEnoughNegatives {
                    user: a,
                    available: n - excluded.len(),
                    requested: k,
                })?;
            pairs.extend(negs.into_iter().map(|b| (a, b)));
        }
        Ok(pairs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    /// 0/1 adjacency `A`.
    Raw,
    /// `D^{-1/2} A D^{-1/2}`.
    SymNorm,
    /// `(D+I)^{-1/2} (A+I) (D+I)^{-1/2}`.
    SymNormSelfLoop,
    /// `D - A`.
    Laplacian,
    /// Laplacian of a sampled negative-pair graph.
    NegLaplacian,
}

impl OperatorKind {
    pub fn is_laplacian(self) -> bool {
        matches!(self, Self::Laplacian | Self::NegLaplacian)
    }
}

/// Symmetric sparse matrix in compressed-row layout with sorted columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseOperator<T> {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<T>,
    kind: OperatorKind,
}

impl<T: Scalar> SparseOperator<T> {
    /// Builds an `n x n` operator from `(row, col, value)` triplets; repeated
    /// coordinates are summed.
    pub fn from_triplets<I>(n: usize, triplets: I, kind: OperatorKind) -> Self
    where
        I: IntoIterator<Item = (usize, usize, T)>,
    {
        let mut rows: Vec<Vec<(usize, T)>> = vec![Vec::new(); n];
        for (r, c, v) in triplets {
            rows[r].push((c, v));
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            let mut iter = row.into_iter().peekable();
            while let Some((c, mut v)) = iter.next() {
                while let Some(&(c2, v2)) = iter.peek() {
                    if c2 != c {
                        break;
                    }
                    v = v + v2;
                    iter.next();
                }
                col_idx.push(c);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            n,
            row_ptr,
            col_idx,
            values,
            kind,
        }
    }

    pub fn zeros(n: usize, kind: OperatorKind) -> Self {
        Self::from_triplets(n, std::iter::empty(), kind)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// `(column, value)` pairs of row `r`.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.col_idx[span.clone()].binary_search(&c) {
            Ok(pos) => self.values[span.start + pos],
            Err(_) => T::zero(),
        }
    }

    pub fn row_sum(&self, r: usize) -> T {
        self.row(r).map(|(_, v)| v).sum()
    }

    pub fn trace(&self) -> T {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn is_symmetric(&self, tol: T) -> bool {
        (0..self.n).all(|r| self.row(r).all(|(c, v)| (self.get(c, r) - v).abs() <= tol))
            && (0..self.n).all(|r| self.row(r).all(|(c, _)| self.row(c).any(|(c2, _)| c2 == r)))
    }

    /// Sparse-dense product `self * x`. Rows are computed independently, so
    /// the result does not depend on the thread count.
    pub fn apply(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        if x.rows() != self.n {
            return Err(Error::Dimension(format!(
                "operator is {n}x{n} but input has {} rows",
                x.rows(),
                n = self.n
            )));
        }
        let d = x.cols();
        let mut out = Matrix::zeros(self.n, d);
        if d == 0 {
            return Ok(out);
        }
        out.as_mut_slice()
            .par_chunks_mut(d)
            .enumerate()
            .for_each(|(r, out_row)| {
                for (c, v) in self.row(r) {
                    for (o, &xv) in out_row.iter_mut().zip(x.row(c)) {
                        *o = *o + v * xv;
                    }
                }
            });
        Ok(out)
    }

    pub fn apply_vec(&self, x: &[T]) -> Vec<T> {
        (0..self.n)
            .map(|r| self.row(r).map(|(c, v)| v * x[c]).sum())
            .collect()
    }

    pub fn to_dense(&self) -> Matrix<T> {
        let mut m = Matrix::zeros(self.n, self.n);
        for r in 0..self.n {
            for (c, v) in self.row(r) {
                m.set(r, c, v);
            }
        }
        m
    }

    /// `Tr(X^T self X)`.
    pub fn quadratic_trace(&self, x: &Matrix<T>) -> Result<T> {
        let y = self.apply(x)?;
        Ok(x.as_slice()
            .iter()
            .zip(y.as_slice())
            .map(|(&a, &b)| a * b)
            .sum())
    }

    /// Degree of every node: number of stored off-diagonal-or-diagonal
    /// nonzeros in a raw adjacency row.
    fn raw_degrees(&self) -> Vec<usize> {
        (0..self.n)
            .map(|r| self.row_ptr[r + 1] - self.row_ptr[r])
            .collect()
    }

    fn require(&self, expected: OperatorKind, name: &'static str) -> Result<()> {
        if self.kind != expected {
            return Err(Error::OperatorKind {
                expected: name,
                found: self.kind,
            });
        }
        Ok(())
    }

    /// Upper-left `n_users x n_items` block of a bipartite raw adjacency,
    /// i.e. the interaction matrix as a list of `(user, item)` pairs.
    pub fn interaction_block(&self, n_users: usize) -> Vec<(usize, usize)> {
        (0..n_users.min(self.n))
            .flat_map(|u| {
                self.row(u)
                    .filter(move |&(c, _)| c >= n_users)
                    .map(move |(c, _)| (u, c - n_users))
            })
            .collect()
    }
}

/// Symmetric 0/1 bipartite adjacency of the training split.
pub fn build_adjacency<T: Scalar>(g: &InteractionGraph) -> SparseOperator<T> {
    let nu = g.n_users();
    let triplets = g
        .train_edges()
        .iter()
        .flat_map(|&(u, i)| [(u, nu + i, T::one()), (nu + i, u, T::one())]);
    SparseOperator::from_triplets(g.n_nodes(), triplets, OperatorKind::Raw)
}

/// Symmetric degree normalization of a raw adjacency, optionally after
/// adding self-loops.
pub fn normalize_sym<T: Scalar>(
    a: &SparseOperator<T>,
    self_loop: bool,
) -> Result<SparseOperator<T>> {
    a.require(OperatorKind::Raw, "raw adjacency")?;
    let degrees = a.raw_degrees();
    let inv_sqrt: Vec<T> = if self_loop {
        degrees
            .iter()
            .map(|&d| T::one() / T::from_count(d + 1).sqrt())
            .collect()
    } else {
        if let Some(node) = degrees.iter().position(|&d| d == 0) {
            return Err(Error::IsolatedNode { node });
        }
        degrees
            .iter()
            .map(|&d| T::one() / T::from_count(d).sqrt())
            .collect()
    };
    let mut triplets = Vec::with_capacity(a.nnz() + if self_loop { a.dim() } else { 0 });
    for r in 0..a.dim() {
        for (c, v) in a.row(r) {
            triplets.push((r, c, inv_sqrt[r] * v * inv_sqrt[c]));
        }
        if self_loop {
            triplets.push((r, r, inv_sqrt[r] * inv_sqrt[r]));
        }
    }
    let kind = if self_loop {
        OperatorKind::SymNormSelfLoop
    } else {
        OperatorKind::SymNorm
    };
    Ok(SparseOperator::from_triplets(a.dim(), triplets, kind))
}

/// Graph Laplacian `D - A` of a raw adjacency.
pub fn laplacian<T: Scalar>(a: &SparseOperator<T>) -> Result<SparseOperator<T>> {
    a.require(OperatorKind::Raw, "raw adjacency")?;
    let mut triplets = Vec::with_capacity(a.nnz() + a.dim());
    for r in 0..a.dim() {
        let mut deg = T::zero();
        for (c, v) in a.row(r) {
            triplets.push((r, c, -v));
            deg = deg + v;
        }
        if deg != T::zero() {
            triplets.push((r, r, deg));
        }
    }
    Ok(SparseOperator::from_triplets(
        a.dim(),
        triplets,
        OperatorKind::Laplacian,
    ))
}

/// Laplacian of an (unweighted, possibly repeated) pair list. Repeated pairs
/// add up, so `Tr(E^T L E)` equals the sum of `|e_a - e_b|^2` over the list.
pub fn pair_laplacian<T: Scalar>(
    n: usize,
    pairs: &[(usize, usize)],
    kind: OperatorKind,
) -> SparseOperator<T> {
    let one = T::one();
    let triplets = pairs
        .iter()
        .filter(|(a, b)| a != b)
        .flat_map(|&(a, b)| [(a, a, one), (b, b, one), (a, b, -one), (b, a, -one)]);
    SparseOperator::from_triplets(n, triplets, kind)
}

/// Draws `k` uniform non-neighbor items per user (without replacement).
pub fn sample_negative_pairs<R: Rng + ?Sized>(
    g: &InteractionGraph,
    k: usize,
    rng: &mut R,
) -> Result<Vec<(usize, usize)>> {
    if k == 0 {
        return Err(Error::Params("negative count K must be at least 1".into()));
    }
    let mut pairs = Vec::with_capacity(g.n_users() * k);
    for u in 0..g.n_users() {
        for j in g.sample_negatives(u, k, rng)? {
            pairs.push((u, g.item_node(j)));
        }
    }
    Ok(pairs)
}

/// Laplacian `L^-` of the sampled user-anchored negative-pair graph.
pub fn sample_negative_laplacian<T: Scalar>(
    g: &InteractionGraph,
    k: usize,
    seed: u64,
) -> Result<SparseOperator<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs = sample_negative_pairs(g, k, &mut rng)?;
    Ok(pair_laplacian(
        g.n_nodes(),
        &pairs,
        OperatorKind::NegLaplacian,
    ))
}

/// Exact walk counts `A^k` for small graphs.
pub fn walk_counts<T: Scalar>(a: &SparseOperator<T>, k: usize) -> Result<Matrix<u128>> {
    a.require(OperatorKind::Raw, "raw adjacency")?;
    let base = dense_counts(a, false)?;
    matrix_power(&base, k)
}

/// Exact walk counts of `(A + I)^k`.
pub fn walk_counts_self_loop<T: Scalar>(a: &SparseOperator<T>, k: usize) -> Result<Matrix<u128>> {
    a.require(OperatorKind::Raw, "raw adjacency")?;
    let base = dense_counts(a, true)?;
    matrix_power(&base, k)
}

fn dense_counts<T: Scalar>(a: &SparseOperator<T>, self_loop: bool) -> Result<Matrix<u128>> {
    let n = a.dim();
    if n > DENSE_ORACLE_LIMIT {
        return Err(Error::DenseGuard {
            n,
            limit: DENSE_ORACLE_LIMIT,
        });
    }
    let mut m = Matrix::<u128>::zeros(n, n);
    for r in 0..n {
        for (c, v) in a.row(r) {
            let count = v
                .to_u128()
                .filter(|&x| T::lit(x as f64) == v)
                .ok_or_else(|| {
                    Error::InvalidGraph(format!("non-integer adjacency entry at ({r}, {c})"))
                })?;
            m.set(r, c, count);
        }
        if self_loop {
            m.set(r, r, m.get(r, r) + 1);
        }
    }
    Ok(m)
}

fn matrix_power(base: &Matrix<u128>, k: usize) -> Result<Matrix<u128>> {
    let n = base.rows();
    let mut acc = Matrix::<u128>::zeros(n, n);
    for i in 0..n {
        acc.set(i, i, 1);
    }
    for step in 1..=k {
        let mut next = Matrix::<u128>::zeros(n, n);
        for i in 0..n {
            for l in 0..n {
                let a = acc.get(i, l);
                if a == 0 {
                    continue;
                }
                for j in 0..n {
                    let b = base.get(l, j);
                    if b == 0 {
                        continue;
                    }
                    let v = a
                        .checked_mul(b)
                        .and_then(|p| p.checked_add(next.get(i, j)))
                        .ok_or(Error::WalkOverflow { length: step })?;
                    next.set(i, j, v);
                }
            }
        }
        acc = next;
    }
    Ok(acc)
}

/// Raw adjacency from an undirected edge list on `n` nodes.
pub fn adjacency_from_edges<T: Scalar>(
    n: usize,
    edges: &[(usize, usize)],
) -> Result<SparseOperator<T>> {
    Ok(PlainGraph::from_edges(n, edges)?.adjacency())
}

/// Unique set of sampled pairs, used to compare negative samples across seeds.
pub fn pair_set(pairs: &[(usize, usize)]) -> HashSet<(usize, usize)> {
    pairs.iter().copied().collect()
}
