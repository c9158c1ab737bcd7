use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dense::Matrix;
use crate::encoder::{propagate, propagate_backward, EmbeddingTable, PropagationConfig, Variant};
use crate::error::{Error, Result};
use crate::graph::{
    laplacian, normalize_sym, pair_laplacian, sample_non_neighbors, OperatorKind, PlainGraph,
};
use crate::losses::{bpr_loss, coles_loss, TrainingBatch};
use crate::scalar::Scalar;

use super::adam::{adam_step, OptimizerState};
use super::classifier::{ClassifierParams, LinearClassifier};
use super::config::{LossKind, NegativeRefresh, TrainConfig};
use super::gr::{EpochRecord, LossMeter};

#[derive(Debug, Clone)]
pub struct GclOutcome<T> {
    pub e0: EmbeddingTable<T>,
    /// Frozen final embeddings.
    pub embeddings: Matrix<T>,
    pub history: Vec<EpochRecord>,
}

/// Sorted list of a node's neighbors plus the node itself.
fn excluded_sets(g: &PlainGraph) -> Vec<Vec<usize>> {
    (0..g.n_nodes())
        .map(|a| {
            let mut v = g.neighbors(a).to_vec();
            let pos = v.binary_search(&a).unwrap_or_else(|p| p);
            v.insert(pos, a);
            v
        })
        .collect()
}

fn sample_node_negatives<R: Rng + ?Sized>(
    excluded: &[usize],
    n: usize,
    a: usize,
    k: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    sample_non_neighbors(excluded, n, k, rng).ok_or(Error::NotEnoughNegatives {
        user: a,
        available: n - excluded.len(),
        requested: k,
    })
}

/// Contrastive pre-training of `E^(0)` on a plain graph.
///
/// COLES runs full-graph steps: the positive Laplacian is the graph's own,
/// the negative one anchors `K` sampled non-neighbors at every node. BPR
/// treats each directed edge as an (anchor, positive) row with `K` sampled
/// non-neighbors of the anchor.
pub fn train_gcl<T: Scalar>(g: &PlainGraph, cfg: &TrainConfig) -> Result<GclOutcome<T>> {
    cfg.validate()?;
    if cfg.loss == LossKind::GrColes {
        return Err(Error::Config(
            "gr_coles needs user/item structure; use coles or bpr on plain graphs".into(),
        ));
    }
    if g.n_edges() == 0 {
        return Err(Error::Empty("graph has no edges".into()));
    }
    let adjacency = g.adjacency::<T>();
    let op = normalize_sym(&adjacency, cfg.variant == Variant::SelfLoopLast)?;
    let propagation = PropagationConfig::new(cfg.variant, cfg.layers, cfg.normalize_output());
    let n = g.n_nodes();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut e0 = EmbeddingTable::random(n, cfg.dim, cfg.init_std, &mut rng);
    let mut state = OptimizerState::new(n, cfg.dim, cfg.adam());
    let excluded = excluded_sets(g);
    let mut history = Vec::with_capacity(cfg.epochs);

    let l_pos = laplacian(&adjacency)?;
    let mut l_neg = None;
    let mut rows: Vec<(usize, usize)> = g
        .edges()
        .into_iter()
        .flat_map(|(a, b)| [(a, b), (b, a)])
        .collect();

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let mut meter = LossMeter::default();
        match cfg.loss {
            LossKind::Coles => {
                if l_neg.is_none() || cfg.neg_refresh == NegativeRefresh::PerEpoch {
                    let mut pairs = Vec::with_capacity(n * cfg.neg_k);
                    for a in 0..n {
                        let negs = sample_node_negatives(&excluded[a], n, a, cfg.neg_k, &mut rng)?;
                        pairs.extend(negs.into_iter().map(|b| (a, b)));
                    }
                    l_neg = Some(pair_laplacian::<T>(n, &pairs, OperatorKind::NegLaplacian));
                }
                let fwd = propagate(&e0, &op, &propagation)?;
                let l_neg = l_neg.as_ref().expect("sampled above");
                let mut out = coles_loss(&fwd.embeddings, &l_pos, l_neg, T::lit(cfg.beta))?;
                out.grad.scale(T::lit(cfg.weights.coles));
                out.value = out.value * T::lit(cfg.weights.coles);
                if !out.value.is_finite() {
                    return Err(Error::Diverged { epoch, batch: 0 });
                }
                let l2 = cfg.lambda * e0.matrix.frobenius_sq().as_f64();
                let grad = propagate_backward(&out.grad, &fwd.cache, &op, &propagation)?;
                adam_step(
                    &mut e0,
                    &grad,
                    &mut state,
                    cfg.lambda,
                    &format!("epoch {epoch} batch 0"),
                )?;
                meter.add(&out, l2);
            }
            LossKind::Bpr => {
                rows.shuffle(&mut rng);
                for (b, chunk) in rows.chunks(cfg.batch_size).enumerate() {
                    let mut negatives = Vec::with_capacity(chunk.len() * cfg.neg_k);
                    for &(a, _) in chunk {
                        negatives.extend(sample_node_negatives(
                            &excluded[a],
                            n,
                            a,
                            cfg.neg_k,
                            &mut rng,
                        )?);
                    }
                    let batch = TrainingBatch::new(
                        chunk.iter().map(|r| r.0).collect(),
                        chunk.iter().map(|r| r.1).collect(),
                        negatives,
                        cfg.neg_k,
                    )?;
                    let fwd = propagate(&e0, &op, &propagation)?;
                    let mut out = bpr_loss(&fwd.embeddings, &batch, T::zero(), T::zero());
                    out.parts.remove("l2");
                    if !out.value.is_finite() {
                        return Err(Error::Diverged { epoch, batch: b });
                    }
                    let l2 = cfg.lambda * e0.matrix.frobenius_sq().as_f64();
                    let grad = propagate_backward(&out.grad, &fwd.cache, &op, &propagation)?;
                    adam_step(
                        &mut e0,
                        &grad,
                        &mut state,
                        cfg.lambda,
                        &format!("epoch {epoch} batch {b}"),
                    )?;
                    meter.add(&out, l2);
                }
            }
            LossKind::GrColes => unreachable!("rejected above"),
        }
        let record = meter.finish(epoch, started.elapsed().as_secs_f64());
        history.push(record);
    }

    let embeddings = propagate(&e0, &op, &propagation)?.embeddings;
    Ok(GclOutcome {
        e0,
        embeddings,
        history,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct NodeClassificationReport {
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    /// Test accuracy of always predicting the most frequent training class.
    pub majority_baseline: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub classes: usize,
}

/// Random train/test split of the labeled nodes. Returns the train mask.
pub fn node_split(n: usize, train_fraction: f64, seed: u64) -> Result<Vec<bool>> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let n_train = ((n as f64) * train_fraction).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::Config(format!(
            "{n} nodes cannot be split at {train_fraction}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut mask = vec![false; n];
    for &v in &order[..n_train] {
        mask[v] = true;
    }
    Ok(mask)
}

/// Fits the linear classifier on a random split of frozen embeddings and
/// reports accuracies next to the majority-class baseline.
pub fn evaluate_node_classification<T: Scalar>(
    e: &Matrix<T>,
    labels: &[i64],
    train_fraction: f64,
    seed: u64,
    params: &ClassifierParams,
) -> Result<NodeClassificationReport> {
    if labels.len() != e.rows() {
        return Err(Error::Dimension(format!(
            "{} labels for {} embedding rows",
            labels.len(),
            e.rows()
        )));
    }
    let train = node_split(labels.len(), train_fraction, seed)?;
    let test: Vec<bool> = train.iter().map(|t| !t).collect();
    let clf = LinearClassifier::fit(e, labels, &train, params)?;
    let majority = clf.majority_class();
    let test_total = test.iter().filter(|&&t| t).count();
    let majority_hits = labels
        .iter()
        .zip(&test)
        .filter(|&(&l, &t)| t && l == majority)
        .count();
    Ok(NodeClassificationReport {
        train_accuracy: clf.accuracy(e, labels, &train)?,
        test_accuracy: clf.accuracy(e, labels, &test)?,
        majority_baseline: majority_hits as f64 / test_total as f64,
        n_train: labels.len() - test_total,
        n_test: test_total,
        classes: clf.classes().len(),
    })
}
