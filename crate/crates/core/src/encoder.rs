//! Linear propagation encoders and the relative-influence analyzer.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dense::{dot, Matrix};
use crate::error::{Error, Result};
use crate::graph::{
    walk_counts, walk_counts_self_loop, OperatorKind, SparseOperator, DENSE_ORACLE_LIMIT,
};
use crate::scalar::Scalar;

/// Trainable initial embeddings `E^(0)`, one row per node.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable<T> {
    pub matrix: Matrix<T>,
}

impl<T: Scalar> EmbeddingTable<T> {
    pub fn new(matrix: Matrix<T>) -> Result<Self> {
        if !matrix.all_finite() {
            return Err(Error::Dimension(
                "embedding table contains non-finite entries".into(),
            ));
        }
        Ok(Self { matrix })
    }

    /// Gaussian initialization with the given standard deviation.
    pub fn random<R: Rng + ?Sized>(n: usize, dim: usize, std: f64, rng: &mut R) -> Self {
        Self {
            matrix: Matrix::random_normal(n, dim, std, rng),
        }
    }

    pub fn n(&self) -> usize {
        self.matrix.rows()
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Weighted average of `Ã^l E^(0)` over `l = 0..=L`.
    LayerAverage,
    /// Last layer only, propagated through the self-loop operator `Â`.
    SelfLoopLast,
}

impl Variant {
    pub fn operator_kind(self) -> OperatorKind {
        match self {
            Self::LayerAverage => OperatorKind::SymNorm,
            Self::SelfLoopLast => OperatorKind::SymNormSelfLoop,
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Self::LayerAverage => 0,
            Self::SelfLoopLast => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Self::LayerAverage),
            1 => Some(Self::SelfLoopLast),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropagationConfig<T> {
    pub num_layers: usize,
    /// `alpha_0 ..= alpha_L`.
    pub layer_weights: Vec<T>,
    pub variant: Variant,
    pub normalize_output: bool,
}

impl<T: Scalar> PropagationConfig<T> {
    /// Uniform `1/(L+1)` weights for the layer average, a one-hot weight on
    /// layer `L` for the self-loop variant.
    pub fn new(variant: Variant, num_layers: usize, normalize_output: bool) -> Self {
        let layer_weights = match variant {
            Variant::LayerAverage => vec![T::one() / T::from_count(num_layers + 1); num_layers + 1],
            Variant::SelfLoopLast => one_hot(num_layers),
        };
        Self {
            num_layers,
            layer_weights,
            variant,
            normalize_output,
        }
    }

    /// Only layer `L` contributes, through `Ã` (no self-loops).
    pub fn last_layer(num_layers: usize) -> Self {
        Self {
            num_layers,
            layer_weights: one_hot(num_layers),
            variant: Variant::LayerAverage,
            normalize_output: false,
        }
    }

    pub fn with_weights(mut self, weights: Vec<T>) -> Self {
        self.layer_weights = weights;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_weights.len() != self.num_layers + 1 {
            return Err(Error::Config(format!(
                "{} layer weights for {} layers",
                self.layer_weights.len(),
                self.num_layers
            )));
        }
        if self
            .layer_weights
            .iter()
            .any(|&w| w < T::zero() || !w.is_finite())
        {
            return Err(Error::Config("layer weights must be nonnegative".into()));
        }
        let total: T = self.layer_weights.iter().copied().sum();
        if (total - T::one()).abs().as_f64() > 1e-12 {
            return Err(Error::Config(format!(
                "layer weights sum to {total}, expected 1"
            )));
        }
        Ok(())
    }
}

fn one_hot<T: Scalar>(num_layers: usize) -> Vec<T> {
    let mut w = vec![T::zero(); num_layers + 1];
    w[num_layers] = T::one();
    w
}

/// Values retained by the forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct PropagationCache<T> {
    n: usize,
    dim: usize,
    num_layers: usize,
    variant: Variant,
    /// Row norms of the pre-normalization output, when normalization ran.
    norms: Option<Vec<T>>,
    /// Normalized output rows, when normalization ran.
    unit: Option<Matrix<T>>,
}

#[derive(Debug, Clone)]
pub struct Propagated<T> {
    pub embeddings: Matrix<T>,
    pub cache: PropagationCache<T>,
}

fn check_operator<T: Scalar>(
    op: &SparseOperator<T>,
    cfg: &PropagationConfig<T>,
    n: usize,
) -> Result<()> {
    cfg.validate()?;
    let want = cfg.variant.operator_kind();
    if op.kind() != want {
        return Err(Error::OperatorKind {
            expected: match cfg.variant {
                Variant::LayerAverage => "sym_norm (Ã)",
                Variant::SelfLoopLast => "sym_norm_selfloop (Â)",
            },
            found: op.kind(),
        });
    }
    if op.dim() != n {
        return Err(Error::Dimension(format!(
            "operator has dimension {} but the table has {n} rows",
            op.dim()
        )));
    }
    Ok(())
}

/// `Σ_l α_l op^l x`, skipping the products past the last nonzero weight.
fn weighted_powers<T: Scalar>(
    x: &Matrix<T>,
    op: &SparseOperator<T>,
    weights: &[T],
) -> Result<Matrix<T>> {
    let mut out = Matrix::zeros(x.rows(), x.cols());
    let last = weights.iter().rposition(|w| !w.is_zero()).unwrap_or(0);
    let mut cur = x.clone();
    for (l, &w) in weights.iter().enumerate().take(last + 1) {
        if l > 0 {
            cur = op.apply(&cur)?;
        }
        if !w.is_zero() {
            out.axpy(w, &cur);
        }
    }
    Ok(out)
}

/// Forward pass of the linear encoder.
pub fn propagate<T: Scalar>(
    e0: &EmbeddingTable<T>,
    op: &SparseOperator<T>,
    cfg: &PropagationConfig<T>,
) -> Result<Propagated<T>> {
    check_operator(op, cfg, e0.n())?;
    let mut out = weighted_powers(&e0.matrix, op, &cfg.layer_weights)?;
    let (norms, unit) = if cfg.normalize_output {
        let norms = normalize_rows(&mut out)?;
        (Some(norms), Some(out.clone()))
    } else {
        (None, None)
    };
    Ok(Propagated {
        embeddings: out,
        cache: PropagationCache {
            n: e0.n(),
            dim: e0.dim(),
            num_layers: cfg.num_layers,
            variant: cfg.variant,
            norms,
            unit,
        },
    })
}

/// Scales every row to unit norm in place and returns the original norms.
pub fn normalize_rows<T: Scalar>(m: &mut Matrix<T>) -> Result<Vec<T>> {
    let mut norms = Vec::with_capacity(m.rows());
    for r in 0..m.rows() {
        let row = m.row_mut(r);
        let norm = dot(row, row).sqrt();
        if norm.is_zero() || !norm.is_finite() {
            return Err(Error::ZeroNormRow { node: r });
        }
        row.iter_mut().for_each(|x| *x = *x / norm);
        norms.push(norm);
    }
    Ok(norms)
}

/// Adjoint of `z -> z/|z|` for one row: `g -> (g - (e.g) e) / |z|`.
pub fn normalization_adjoint_row<T: Scalar>(unit: &[T], norm: T, upstream: &[T], out: &mut [T]) {
    let proj = dot(unit, upstream);
    for ((o, &g), &e) in out.iter_mut().zip(upstream).zip(unit) {
        *o = (g - proj * e) / norm;
    }
}

/// Backward pass: gradient of the loss with respect to `E^(0)`.
pub fn propagate_backward<T: Scalar>(
    grad_e: &Matrix<T>,
    cache: &PropagationCache<T>,
    op: &SparseOperator<T>,
    cfg: &PropagationConfig<T>,
) -> Result<Matrix<T>> {
    if cache.n != grad_e.rows() || cache.dim != grad_e.cols() {
        return Err(Error::CacheMismatch(format!(
            "cache is {}x{}, gradient is {}x{}",
            cache.n,
            cache.dim,
            grad_e.rows(),
            grad_e.cols()
        )));
    }
    if cache.num_layers != cfg.num_layers
        || cache.variant != cfg.variant
        || cache.norms.is_some() != cfg.normalize_output
    {
        return Err(Error::CacheMismatch(
            "propagation config differs from the forward call".into(),
        ));
    }
    check_operator(op, cfg, cache.n)?;
    let pushed = match (&cache.norms, &cache.unit) {
        (Some(norms), Some(unit)) => {
            let mut g = Matrix::zeros(cache.n, cache.dim);
            for r in 0..cache.n {
                normalization_adjoint_row(unit.row(r), norms[r], grad_e.row(r), g.row_mut(r));
            }
            g
        }
        _ => grad_e.clone(),
    };
    // The operator is symmetric, so its transpose powers are its powers.
    weighted_powers(&pushed, op, &cfg.layer_weights)
}

/// Linear GCN with one-hot inputs: builds `X = I` explicitly and evaluates
/// `Ã^L X W` with `W = E^(0)`. Dense, small graphs only.
pub fn gcn_linear_onehot<T: Scalar>(
    e0: &EmbeddingTable<T>,
    op: &SparseOperator<T>,
    num_layers: usize,
) -> Result<Matrix<T>> {
    if op.kind() != OperatorKind::SymNorm {
        return Err(Error::OperatorKind {
            expected: "sym_norm (Ã)",
            found: op.kind(),
        });
    }
    let n = op.dim();
    if n > DENSE_ORACLE_LIMIT {
        return Err(Error::DenseGuard {
            n,
            limit: DENSE_ORACLE_LIMIT,
        });
    }
    if e0.n() != n {
        return Err(Error::Dimension(format!(
            "table has {} rows for {n} nodes",
            e0.n()
        )));
    }
    let mut h = Matrix::identity(n);
    for _ in 0..num_layers {
        h = op.apply(&h)?;
    }
    h.matmul(&e0.matrix)
}

/// Exact relative influence of a node's own input on its output, from walk
/// counts. The layer-average sum runs over `l = 0..=L`.
pub fn relative_influence_exact<T: Scalar>(
    adjacency: &SparseOperator<T>,
    node: usize,
    variant: Variant,
    num_layers: usize,
) -> Result<BigRational> {
    if num_layers == 0 {
        return Err(Error::Params(
            "relative influence needs at least one layer".into(),
        ));
    }
    if node >= adjacency.dim() {
        return Err(Error::Params(format!(
            "node {node} out of range for {} nodes",
            adjacency.dim()
        )));
    }
    let self_share = |walks: &Matrix<u128>| -> Result<BigRational> {
        let column: u128 = (0..walks.rows()).map(|v| walks.get(v, node)).sum();
        if column == 0 {
            return Err(Error::IsolatedNode { node });
        }
        Ok(BigRational::new(
            BigInt::from(walks.get(node, node)),
            BigInt::from(column),
        ))
    };
    match variant {
        Variant::SelfLoopLast => self_share(&walk_counts_self_loop(adjacency, num_layers)?),
        Variant::LayerAverage => {
            let mut total = BigRational::zero();
            for l in 0..=num_layers {
                total += self_share(&walk_counts(adjacency, l)?)?;
            }
            Ok(total)
        }
    }
}

pub fn relative_influence<T: Scalar>(
    adjacency: &SparseOperator<T>,
    node: usize,
    variant: Variant,
    num_layers: usize,
) -> Result<f64> {
    let r = relative_influence_exact(adjacency, node, variant, num_layers)?;
    Ok(r.to_f64().unwrap_or(f64::NAN))
}

/// Degree and number of distinct nodes at distance exactly two.
pub fn two_hop_counts<T: Scalar>(adjacency: &SparseOperator<T>, node: usize) -> (usize, usize) {
    let first: Vec<usize> = adjacency
        .row(node)
        .map(|(c, _)| c)
        .filter(|&c| c != node)
        .collect();
    let mut second: Vec<usize> = first
        .iter()
        .flat_map(|&w| adjacency.row(w).map(|(c, _)| c))
        .filter(|&c| c != node && first.binary_search(&c).is_err())
        .collect();
    second.sort_unstable();
    second.dedup();
    (first.len(), second.len())
}

/// Two-layer closed forms, exact on locally tree-like neighborhoods:
/// self-loop `(1+d)/(1+3d+d2)`, layer average `1 + d/(d+d2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoLayerClosedForm {
    pub degree: usize,
    pub two_hop: usize,
    pub self_loop: BigRational,
    pub layer_average: BigRational,
}

pub fn two_layer_closed_form<T: Scalar>(
    adjacency: &SparseOperator<T>,
    node: usize,
) -> Result<TwoLayerClosedForm> {
    let (d, d2) = two_hop_counts(adjacency, node);
    if d == 0 {
        return Err(Error::IsolatedNode { node });
    }
    let r = |a: usize, b: usize| BigRational::new(BigInt::from(a), BigInt::from(b));
    Ok(TwoLayerClosedForm {
        degree: d,
        two_hop: d2,
        self_loop: r(1 + d, 1 + 3 * d + d2),
        layer_average: BigRational::from_integer(BigInt::from(1)) + r(d, d + d2),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{adjacency_from_edges, build_adjacency, normalize_sym, InteractionGraph};

    fn edge_op(self_loop: bool) -> SparseOperator<f64> {
        let g = InteractionGraph::new(1, 1, vec![(0, 0)], vec![]).unwrap();
        normalize_sym(&build_adjacency(&g), self_loop).unwrap()
    }

    fn eye2() -> EmbeddingTable<f64> {
        EmbeddingTable::new(Matrix::identity(2)).unwrap()
    }

    #[test]
    fn last_layer_swaps_rows_on_single_edge() {
        let cfg =
            PropagationConfig::new(Variant::LayerAverage, 1, false).with_weights(vec![0.0, 1.0]);
        let out = propagate(&eye2(), &edge_op(false), &cfg).unwrap();
        assert_eq!(
            out.embeddings,
            Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap()
        );
    }

    #[test]
    fn averaged_then_normalized() {
        let cfg = PropagationConfig::new(Variant::LayerAverage, 1, false);
        let out = propagate(&eye2(), &edge_op(false), &cfg).unwrap();
        for x in out.embeddings.as_slice() {
            assert!((x - 0.5).abs() < 1e-15);
        }
        let cfg = PropagationConfig::new(Variant::LayerAverage, 1, true);
        let out = propagate(&eye2(), &edge_op(false), &cfg).unwrap();
        let h = 1.0 / 2f64.sqrt();
        for x in out.embeddings.as_slice() {
            assert!((x - h).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_layers_is_row_normalized_input() {
        let e0 =
            EmbeddingTable::new(Matrix::from_rows(&[vec![3.0, 4.0], vec![0.0, -2.0]]).unwrap())
                .unwrap();
        let cfg = PropagationConfig::new(Variant::LayerAverage, 0, true);
        let out = propagate(&e0, &edge_op(false), &cfg).unwrap();
        assert_eq!(out.embeddings.row(0), &[0.6, 0.8]);
        assert_eq!(out.embeddings.row(1), &[0.0, -1.0]);
    }

    #[test]
    fn zero_norm_row_is_named() {
        let e0 = EmbeddingTable::new(Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap())
            .unwrap();
        let cfg = PropagationConfig::new(Variant::LayerAverage, 0, true);
        match propagate(&e0, &edge_op(false), &cfg) {
            Err(Error::ZeroNormRow { node }) => assert_eq!(node, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn operator_kind_must_match_variant() {
        let cfg = PropagationConfig::<f64>::new(Variant::SelfLoopLast, 1, false);
        assert!(matches!(
            propagate(&eye2(), &edge_op(false), &cfg),
            Err(Error::OperatorKind { .. })
        ));
        assert!(propagate(&eye2(), &edge_op(true), &cfg).is_ok());
    }

    #[test]
    fn bad_weights_rejected() {
        let cfg = PropagationConfig::<f64>::new(Variant::LayerAverage, 2, false)
            .with_weights(vec![0.5, 0.5, 0.5]);
        assert!(cfg.validate().is_err());
        let cfg = PropagationConfig::<f64>::new(Variant::LayerAverage, 1, false)
            .with_weights(vec![1.5, -0.5]);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn backward_identity_at_zero_layers() {
        let cfg = PropagationConfig::new(Variant::LayerAverage, 0, false);
        let fwd = propagate(&eye2(), &edge_op(false), &cfg).unwrap();
        let g = Matrix::from_rows(&[vec![0.3, -1.0], vec![2.0, 0.5]]).unwrap();
        let back = propagate_backward(&g, &fwd.cache, &edge_op(false), &cfg).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn normalization_adjoint_examples() {
        let mut out = [0.0; 2];
        normalization_adjoint_row(&[1.0, 0.0], 1.0, &[0.0, 1.0], &mut out);
        assert_eq!(out, [0.0, 1.0]);
        normalization_adjoint_row(&[1.0, 0.0], 2.0, &[1.0, 0.0], &mut out);
        assert_eq!(out, [0.0, 0.0]);
    }

    #[test]
    fn backward_rejects_foreign_cache() {
        let cfg = PropagationConfig::new(Variant::LayerAverage, 1, true);
        let fwd = propagate(&eye2(), &edge_op(false), &cfg).unwrap();
        let g = Matrix::zeros(3, 2);
        assert!(matches!(
            propagate_backward(&g, &fwd.cache, &edge_op(false), &cfg),
            Err(Error::CacheMismatch(_))
        ));
        let other = PropagationConfig::new(Variant::LayerAverage, 2, true);
        let g = Matrix::zeros(2, 2);
        assert!(matches!(
            propagate_backward(&g, &fwd.cache, &edge_op(false), &other),
            Err(Error::CacheMismatch(_))
        ));
    }

    #[test]
    fn onehot_gcn_small_cases() {
        let op = edge_op(false);
        let e0 = EmbeddingTable::new(Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap())
            .unwrap();
        assert_eq!(gcn_linear_onehot(&e0, &op, 0).unwrap(), e0.matrix);
        // Ã² = I on a single edge.
        assert_eq!(gcn_linear_onehot(&e0, &op, 2).unwrap(), e0.matrix);
        assert!(gcn_linear_onehot(&e0, &edge_op(true), 1).is_err());
    }

    #[test]
    fn influence_star_center() {
        let star: SparseOperator<f64> = adjacency_from_edges(4, &[(0, 1), (0, 2), (0, 3)]).unwrap();
        let exact = relative_influence_exact(&star, 0, Variant::SelfLoopLast, 2).unwrap();
        assert_eq!(exact, BigRational::new(BigInt::from(2), BigInt::from(5)));
        let cf = two_layer_closed_form(&star, 0).unwrap();
        assert_eq!(cf.self_loop, exact);
        assert_eq!(cf.two_hop, 0);
    }

    #[test]
    fn layer_average_single_layer_is_one() {
        let tri: SparseOperator<f64> = adjacency_from_edges(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
        for v in 0..3 {
            assert_eq!(
                relative_influence(&tri, v, Variant::LayerAverage, 1).unwrap(),
                1.0
            );
        }
        assert!(relative_influence(&tri, 0, Variant::LayerAverage, 0).is_err());
        assert!(relative_influence(&tri, 7, Variant::LayerAverage, 1).is_err());
    }
}
