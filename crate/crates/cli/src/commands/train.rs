use std::fs::File;
use std::io::{BufWriter, Write};

use anyhow::{Context, Result};
use log::info;
use serde::Serialize;

use grcl_core::data::{load_interactions, load_plain_graph};
use grcl_core::eval::RankingResult;
use grcl_core::losses::ObjectiveWeights;
use grcl_core::model::SavedModel;
use grcl_core::training::{
    evaluate_node_classification, train_gcl, train_gr_with, ClassifierParams, TrainConfig,
};

use super::{sibling, sidecar};
use crate::metadata::RunMetadata;
use crate::output::MetricsStream;
use crate::{Failure, Task, TrainArgs};

#[derive(Serialize)]
struct EvalRecord<'a> {
    event: &'static str,
    epoch: usize,
    loss: f64,
    parts: &'a std::collections::BTreeMap<String, f64>,
    metrics: &'a [RankingResult],
}

fn config_from(a: &TrainArgs) -> TrainConfig {
    let base = match a.task {
        Task::Rec => TrainConfig::recommendation(a.loss.into()),
        Task::NodeCls => TrainConfig::node_classification(a.loss.into()),
    };
    TrainConfig {
        epochs: a.epochs.unwrap_or(base.epochs),
        batch_size: a.batch,
        neg_k: a.neg_k,
        lr: a.lr,
        beta: a.beta,
        t: a.t,
        lambda: a.lambda,
        layers: a.layers.unwrap_or(base.layers),
        dim: a.dim.unwrap_or(base.dim),
        seed: a.seed,
        eval_every: if a.task == Task::Rec { a.eval_every } else { 0 },
        patience: a.patience,
        variant: a.variant.into(),
        normalize: a.normalize.into(),
        init_std: a.init_std,
        weights: ObjectiveWeights {
            coles: a.coles_weight,
            hom: a.hom_weight,
            het: a.het_weight,
        },
        eval_ks: a.k.clone(),
        neg_refresh: a.neg_refresh.into(),
        ..base
    }
}

pub fn run(a: &TrainArgs) -> Result<(), Failure> {
    let cfg = config_from(a);
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let mut meta = RunMetadata::new(
        "train",
        Some(a.seed),
        &serde_json::json!({ "args": a, "resolved": &cfg }),
    )?;
    meta.input(&a.data)?;
    meta.note("batching", "one batch row per training edge");
    meta.write_to(sidecar(&a.out))?;
    let metrics_path = a
        .metrics
        .clone()
        .unwrap_or_else(|| sibling(&a.out, "metrics.jsonl"));
    let mut stream = MetricsStream::append(&metrics_path, true)?;
    match a.task {
        Task::Rec => train_rec(a, &cfg, &mut meta, &mut stream)?,
        Task::NodeCls => train_node(a, &cfg, &mut meta, &mut stream)?,
    }
    meta.finish()?;
    Ok(())
}

fn train_rec(
    a: &TrainArgs,
    cfg: &TrainConfig,
    meta: &mut RunMetadata,
    stream: &mut MetricsStream,
) -> Result<()> {
    meta.phase("load");
    let ds = load_interactions(&a.data, a.split_ratio, a.seed)?;
    info!(
        "{} users, {} items, {} train / {} test interactions",
        ds.summary.n_users, ds.summary.n_items, ds.summary.n_train, ds.summary.n_test
    );
    meta.note("ingest", serde_json::to_string(&ds.summary)?);
    meta.phase("train");
    let mut emit_err = None;
    let outcome = train_gr_with::<f64, _>(&ds.graph, cfg, |rec| match &rec.metrics {
        Some(m) => {
            let r = EvalRecord {
                event: "eval",
                epoch: rec.epoch,
                loss: rec.loss,
                parts: &rec.parts,
                metrics: m,
            };
            if let Err(e) = stream.emit(&r) {
                emit_err.get_or_insert(e);
            }
        }
        None => info!("epoch {} loss {:.6}", rec.epoch, rec.loss),
    })?;
    if let Some(e) = emit_err {
        return Err(e);
    }
    meta.phase("save");
    if let Some(best) = outcome.best_epoch {
        info!("keeping epoch {best} (best Recall@{})", cfg.early_stop_k);
        meta.note("best_epoch", best.to_string());
    }
    SavedModel {
        users: ds.users,
        items: ds.items,
        e0: outcome.model.e0,
        propagation: outcome.model.propagation,
    }
    .save(&a.out)
    .with_context(|| format!("writing {}", a.out.display()))?;
    Ok(())
}

fn train_node(
    a: &TrainArgs,
    cfg: &TrainConfig,
    meta: &mut RunMetadata,
    stream: &mut MetricsStream,
) -> Result<()> {
    meta.phase("load");
    let ds = load_plain_graph(&a.data)?;
    let labels = ds
        .graph
        .labels()
        .context("node classification needs labels.tsv")?
        .to_vec();
    meta.phase("pretrain");
    let outcome = train_gcl::<f64>(&ds.graph, cfg)?;
    for rec in &outcome.history {
        info!("epoch {} loss {:.6}", rec.epoch, rec.loss);
    }
    meta.phase("classify");
    let report = evaluate_node_classification(
        &outcome.embeddings,
        &labels,
        a.train_fraction,
        a.seed,
        &ClassifierParams::default(),
    )?;
    stream.emit(&serde_json::json!({ "event": "node_classification", "report": &report }))?;
    meta.phase("save");
    let mut w = BufWriter::new(
        File::create(&a.out).with_context(|| format!("writing {}", a.out.display()))?,
    );
    let e = &outcome.embeddings;
    for v in 0..e.rows() {
        let row: Vec<String> = e.row(v).iter().map(|x| format!("{x:?}")).collect();
        writeln!(w, "{},{}", ds.nodes.id(v), row.join(","))?;
    }
    w.flush()?;
    Ok(())
}
