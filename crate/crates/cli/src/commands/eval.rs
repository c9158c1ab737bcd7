use anyhow::Context;
use serde::Serialize;

use grcl_core::data::load_interactions;
use grcl_core::encoder::propagate;
use grcl_core::eval::evaluate_ranking;
use grcl_core::model::SavedModel;
use grcl_core::training::interaction_operator;

use crate::output::print_json;
use crate::{EvalArgs, Failure};

#[derive(Serialize)]
struct EvalOutput {
    k: usize,
    recall: f64,
    ndcg: f64,
    users: usize,
}

pub fn run(a: &EvalArgs) -> Result<(), Failure> {
    if a.k == 0 {
        return Err(Failure::Usage("--k must be at least 1".into()));
    }
    let model =
        SavedModel::load(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    let ds = load_interactions(&a.data, a.split_ratio, a.seed).map_err(anyhow::Error::from)?;
    let table = model
        .table_for(&ds.users, &ds.items)
        .map_err(anyhow::Error::from)?;
    let op = interaction_operator::<f64>(&ds.graph, model.propagation.variant)
        .map_err(anyhow::Error::from)?;
    let e = propagate(&table, &op, &model.propagation)
        .map_err(anyhow::Error::from)?
        .embeddings;
    let r = evaluate_ranking(&e, &ds.graph, &[a.k])
        .map_err(anyhow::Error::from)?
        .remove(0);
    print_json(&EvalOutput {
        k: r.k,
        recall: r.recall,
        ndcg: r.ndcg,
        users: r.users,
    })?;
    Ok(())
}
