//! Finite-difference audit of the full training gradient: propagation,
//! optional row normalization, loss, and the `λ‖E^(0)‖²` term.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dense::Matrix;
use crate::encoder::{propagate, propagate_backward, EmbeddingTable, PropagationConfig, Variant};
use crate::error::{Error, Result};
use crate::graph::{InteractionGraph, SparseOperator};
use crate::losses::TrainingBatch;
use crate::training::{batch_loss, interaction_operator, sample_batch, LossKind, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckConfig {
    pub loss: LossKind,
    /// Total node count, users plus items.
    pub n: usize,
    pub dim: usize,
    pub seed: u64,
    pub layers: usize,
    pub variant: Variant,
    pub normalize: bool,
    pub neg_k: usize,
    pub lambda: f64,
    pub beta: f64,
    pub t: f64,
    /// Central-difference step.
    pub step: f64,
    /// Denominator floor of the per-entry relative error.
    pub rel_floor: f64,
}

impl GradCheckConfig {
    pub fn new(loss: LossKind, n: usize, dim: usize, seed: u64) -> Self {
        Self {
            loss,
            n,
            dim,
            seed,
            layers: 2,
            variant: Variant::LayerAverage,
            normalize: true,
            neg_k: 2,
            lambda: 1e-3,
            beta: 0.9,
            t: 2.0,
            step: 1e-5,
            rel_floor: 1e-6,
        }
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            beta: self.beta,
            t: self.t,
            lambda: self.lambda,
            layers: self.layers,
            dim: self.dim,
            neg_k: self.neg_k,
            variant: self.variant,
            ..TrainConfig::recommendation(self.loss)
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub config: GradCheckConfig,
    pub n_users: usize,
    pub n_items: usize,
    pub batch_rows: usize,
    pub loss_value: f64,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// `(row, column)` of the entry with the largest relative error.
    pub worst_entry: (usize, usize),
    pub entries: usize,
}

/// Random bipartite graph on `n` nodes in which every user has at least one
/// item and at least `neg_k` non-items, and every item has at least one user.
pub fn random_instance<R: Rng + ?Sized>(
    n: usize,
    neg_k: usize,
    rng: &mut R,
) -> Result<InteractionGraph> {
    let n_users = (n * 2 / 5).max(1);
    let n_items = n.saturating_sub(n_users);
    if n_items < neg_k + 1 {
        return Err(Error::Params(format!(
            "{n} nodes leave too few items for K={neg_k}"
        )));
    }
    let mut user_items: Vec<Vec<usize>> = (0..n_users)
        .map(|_| (0..n_items).filter(|_| rng.random::<f64>() < 0.3).collect())
        .collect();
    for items in user_items.iter_mut() {
        if items.is_empty() {
            items.push(rng.random_range(0..n_items));
        }
        while items.len() > n_items - neg_k {
            items.remove(rng.random_range(0..items.len()));
        }
    }
    for i in 0..n_items {
        if user_items.iter().all(|items| !items.contains(&i)) {
            let candidates: Vec<usize> = (0..n_users)
                .filter(|&u| user_items[u].len() < n_items - neg_k)
                .collect();
            let &u = candidates
                .choose(rng)
                .ok_or_else(|| Error::Params("cannot give every item a user".into()))?;
            user_items[u].push(i);
        }
    }
    let edges: Vec<(usize, usize)> = user_items
        .iter()
        .enumerate()
        .flat_map(|(u, items)| items.iter().map(move |&i| (u, i)))
        .collect();
    InteractionGraph::new(n_users, n_items, edges, Vec::new())
}

struct Pipeline<'a> {
    op: &'a SparseOperator<f64>,
    prop: &'a PropagationConfig<f64>,
    batch: &'a TrainingBatch,
    cfg: &'a TrainConfig,
}

impl Pipeline<'_> {
    fn value(&self, e0: &EmbeddingTable<f64>) -> Result<f64> {
        let fwd = propagate(e0, self.op, self.prop)?;
        let out = batch_loss(&fwd.embeddings, self.batch, self.cfg)?;
        Ok(out.value + self.cfg.lambda * e0.matrix.frobenius_sq())
    }

    fn gradient(&self, e0: &EmbeddingTable<f64>) -> Result<(f64, Matrix<f64>)> {
        let fwd = propagate(e0, self.op, self.prop)?;
        let out = batch_loss(&fwd.embeddings, self.batch, self.cfg)?;
        let mut grad = propagate_backward(&out.grad, &fwd.cache, self.op, self.prop)?;
        grad.axpy(2.0 * self.cfg.lambda, &e0.matrix);
        Ok((out.value + self.cfg.lambda * e0.matrix.frobenius_sq(), grad))
    }
}

/// Compares the analytic `E^(0)` gradient of one training step against
/// central differences on every entry.
pub fn check_pipeline(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    if !(cfg.step > 0.0 && cfg.rel_floor > 0.0) {
        return Err(Error::Params(
            "step and relative-error floor must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let g = random_instance(cfg.n, cfg.neg_k, &mut rng)?;
    let train = cfg.train_config();
    train.validate()?;
    let op = interaction_operator::<f64>(&g, cfg.variant)?;
    let prop = PropagationConfig::new(cfg.variant, cfg.layers, cfg.normalize);
    let batch = sample_batch(&g, g.train_edges(), cfg.neg_k, &mut rng)?;
    let e0 = EmbeddingTable::random(g.n_nodes(), cfg.dim, 0.5, &mut rng);
    let pipe = Pipeline {
        op: &op,
        prop: &prop,
        batch: &batch,
        cfg: &train,
    };
    let (loss_value, analytic) = pipe.gradient(&e0)?;

    let mut max_rel: f64 = 0.0;
    let mut max_abs: f64 = 0.0;
    let mut worst = (0, 0);
    let mut probe = e0.clone();
    for r in 0..g.n_nodes() {
        for c in 0..cfg.dim {
            let x = e0.matrix.get(r, c);
            probe.matrix.set(r, c, x + cfg.step);
            let plus = pipe.value(&probe)?;
            probe.matrix.set(r, c, x - cfg.step);
            let minus = pipe.value(&probe)?;
            probe.matrix.set(r, c, x);
            let numeric = (plus - minus) / (2.0 * cfg.step);
            let a = analytic.get(r, c);
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(cfg.rel_floor);
            max_abs = max_abs.max(abs);
            if rel > max_rel {
                max_rel = rel;
                worst = (r, c);
            }
        }
    }
    Ok(GradCheckReport {
        config: cfg.clone(),
        n_users: g.n_users(),
        n_items: g.n_items(),
        batch_rows: batch.len(),
        loss_value,
        max_rel_error: max_rel,
        max_abs_error: max_abs,
        worst_entry: worst,
        entries: g.n_nodes() * cfg.dim,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn instance_meets_sampling_needs() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = random_instance(30, 2, &mut rng).unwrap();
        assert_eq!(g.n_nodes(), 30);
        for u in 0..g.n_users() {
            assert!(!g.items_of(u).is_empty());
            assert!(g.n_items() - g.items_of(u).len() >= 2);
        }
        assert!(g.degrees().iter().all(|&d| d > 0));
    }

    #[test]
    fn bpr_gradient_matches() {
        let r = check_pipeline(&GradCheckConfig::new(LossKind::Bpr, 12, 3, 1)).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }
}
