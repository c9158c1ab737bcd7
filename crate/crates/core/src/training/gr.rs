use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dense::Matrix;
use crate::encoder::{propagate, propagate_backward, EmbeddingTable, PropagationConfig, Variant};
use crate::error::{Error, Result};
use crate::eval::{evaluate_ranking, RankingResult};
use crate::graph::{build_adjacency, normalize_sym, InteractionGraph, SparseOperator};
use crate::losses::{batch_laplacians, bpr_loss, gr_coles_loss, LossOutput, TrainingBatch};
use crate::scalar::Scalar;

use super::adam::{adam_step, OptimizerState};
use super::config::{LossKind, TrainConfig};

/// Propagation operator for an encoder variant on an interaction graph.
pub fn interaction_operator<T: Scalar>(
    g: &InteractionGraph,
    variant: Variant,
) -> Result<SparseOperator<T>> {
    normalize_sym(&build_adjacency(g), variant == Variant::SelfLoopLast)
}

/// `E^(0)` together with the propagation that turns it into final embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct GrModel<T> {
    pub e0: EmbeddingTable<T>,
    pub propagation: PropagationConfig<T>,
}

impl<T: Scalar> GrModel<T> {
    pub fn final_embeddings(&self, op: &SparseOperator<T>) -> Result<Matrix<T>> {
        Ok(propagate(&self.e0, op, &self.propagation)?.embeddings)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean over batches of the full objective, including the `λ` term.
    pub loss: f64,
    /// Mean over batches of each reported loss component.
    pub parts: BTreeMap<String, f64>,
    pub batches: usize,
    pub seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<Vec<RankingResult>>,
}

impl EpochRecord {
    pub fn recall(&self, k: usize) -> Option<f64> {
        self.metrics
            .as_ref()?
            .iter()
            .find(|r| r.k == k)
            .map(|r| r.recall)
    }
}

#[derive(Debug, Clone)]
pub struct GrOutcome<T> {
    /// Best evaluated snapshot when evaluation ran, the final state otherwise.
    pub model: GrModel<T>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

/// Accumulates per-batch loss values into epoch means.
#[derive(Default)]
pub(crate) struct LossMeter {
    total: f64,
    parts: BTreeMap<String, f64>,
    batches: usize,
}

impl LossMeter {
    pub(crate) fn add<T: Scalar>(&mut self, out: &LossOutput<T>, l2: f64) {
        self.total += out.value.as_f64() + l2;
        for (name, v) in &out.parts {
            *self.parts.entry((*name).to_owned()).or_default() += v.as_f64();
        }
        *self.parts.entry("l2".to_owned()).or_default() += l2;
        self.batches += 1;
    }

    pub(crate) fn finish(self, epoch: usize, seconds: f64) -> EpochRecord {
        let n = self.batches.max(1) as f64;
        EpochRecord {
            epoch,
            loss: self.total / n,
            parts: self.parts.into_iter().map(|(k, v)| (k, v / n)).collect(),
            batches: self.batches,
            seconds,
            metrics: None,
        }
    }
}

/// Evaluates one configured loss on final embeddings. The returned value
/// excludes `λ‖E^(0)‖²`, which the caller accounts for.
pub fn batch_loss<T: Scalar>(
    e: &Matrix<T>,
    batch: &TrainingBatch,
    cfg: &TrainConfig,
) -> Result<LossOutput<T>> {
    match cfg.loss {
        LossKind::Bpr => {
            let mut out = bpr_loss(e, batch, T::zero(), T::zero());
            out.parts.remove("l2");
            Ok(out)
        }
        LossKind::Coles | LossKind::GrColes => {
            let (l_pos, l_neg) = batch_laplacians(batch, e.rows());
            gr_coles_loss(
                e,
                batch,
                &l_pos,
                &l_neg,
                T::lit(cfg.beta),
                T::lit(cfg.t),
                cfg.effective_weights(),
            )
        }
    }
}

/// Draws `k` negatives for every positive edge, in row order.
pub fn sample_batch<R: rand::Rng + ?Sized>(
    g: &InteractionGraph,
    edges: &[(usize, usize)],
    k: usize,
    rng: &mut R,
) -> Result<TrainingBatch> {
    let mut anchors = Vec::with_capacity(edges.len());
    let mut positives = Vec::with_capacity(edges.len());
    let mut negatives = Vec::with_capacity(edges.len() * k);
    for &(u, i) in edges {
        anchors.push(u);
        positives.push(g.item_node(i));
        negatives.extend(
            g.sample_negatives(u, k, rng)?
                .into_iter()
                .map(|j| g.item_node(j)),
        );
    }
    TrainingBatch::new(anchors, positives, negatives, k)
}

pub fn train_gr<T: Scalar>(g: &InteractionGraph, cfg: &TrainConfig) -> Result<GrOutcome<T>> {
    train_gr_with(g, cfg, |_| {})
}

/// Mini-batch training over shuffled positive edges. `on_epoch` sees every
/// epoch record as soon as it is complete.
pub fn train_gr_with<T: Scalar, F: FnMut(&EpochRecord)>(
    g: &InteractionGraph,
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<GrOutcome<T>> {
    cfg.validate()?;
    if g.n_train() == 0 {
        return Err(Error::Empty("graph has no training edges".into()));
    }
    let op = interaction_operator::<T>(g, cfg.variant)?;
    let propagation = PropagationConfig::new(cfg.variant, cfg.layers, cfg.normalize_output());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut e0 = EmbeddingTable::random(g.n_nodes(), cfg.dim, cfg.init_std, &mut rng);
    let mut state = OptimizerState::new(g.n_nodes(), cfg.dim, cfg.adam());
    let ks = cfg.all_eval_ks();
    let can_eval = !g.test_edges().is_empty();
    if cfg.eval_every > 0 && !can_eval {
        log::warn!("test split is empty; ranking metrics are omitted");
    }

    let mut edges = g.train_edges().to_vec();
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, EmbeddingTable<T>)> = None;
    let mut stale = 0usize;
    let mut stopped_early = false;

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        edges.shuffle(&mut rng);
        let mut meter = LossMeter::default();
        for (b, chunk) in edges.chunks(cfg.batch_size).enumerate() {
            let batch = sample_batch(g, chunk, cfg.neg_k, &mut rng)?;
            let fwd = propagate(&e0, &op, &propagation)?;
            let out = batch_loss(&fwd.embeddings, &batch, cfg)?;
            let l2 = cfg.lambda * e0.matrix.frobenius_sq().as_f64();
            if !out.value.is_finite() {
                return Err(Error::Diverged { epoch, batch: b });
            }
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
        let mut record = meter.finish(epoch, 0.0);
        let evaluate =
            can_eval && cfg.eval_every > 0 && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs);
        if evaluate {
            let e = propagate(&e0, &op, &propagation)?.embeddings;
            let metrics = evaluate_ranking(&e, g, &ks)?;
            let recall = metrics
                .iter()
                .find(|r| r.k == cfg.early_stop_k)
                .map(|r| r.recall)
                .unwrap_or(0.0);
            record.metrics = Some(metrics);
            if best.as_ref().is_none_or(|(r, _, _)| recall > *r) {
                best = Some((recall, epoch, e0.clone()));
                stale = 0;
            } else {
                stale += 1;
            }
        }
        record.seconds = started.elapsed().as_secs_f64();
        on_epoch(&record);
        history.push(record);
        if cfg.patience > 0 && stale >= cfg.patience {
            log::info!("early stop after epoch {epoch}");
            stopped_early = true;
            break;
        }
    }

    let (e0, best_epoch) = match best {
        Some((_, epoch, table)) => (table, Some(epoch)),
        None => (e0, None),
    };
    Ok(GrOutcome {
        model: GrModel { e0, propagation },
        history,
        best_epoch,
        stopped_early,
    })
}
