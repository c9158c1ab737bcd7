use anyhow::anyhow;
use num_traits::ToPrimitive;
use serde::Serialize;

use grcl_core::data::{read_edge_list, IdMap};
use grcl_core::encoder::{relative_influence_exact, two_layer_closed_form, Variant};
use grcl_core::graph::adjacency_from_edges;

use crate::output::print_json;
use crate::{Failure, InfluenceArgs, InfluenceVariant};

#[derive(Serialize)]
struct InfluenceRow {
    variant: &'static str,
    exact: String,
    value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    closed_form: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    matches_closed_form: Option<bool>,
}

#[derive(Serialize)]
struct InfluenceOutput {
    node: String,
    layers: usize,
    degree: usize,
    two_hop: usize,
    results: Vec<InfluenceRow>,
}

pub fn run(a: &InfluenceArgs) -> Result<(), Failure> {
    if a.layers == 0 {
        return Err(Failure::Usage("--layers must be at least 1".into()));
    }
    let mut nodes = IdMap::default();
    let edges = read_edge_list(&a.graph, &mut nodes).map_err(anyhow::Error::from)?;
    let node = nodes
        .get(&a.node)
        .ok_or_else(|| anyhow!("node '{}' does not appear in {}", a.node, a.graph.display()))?;
    let adj = adjacency_from_edges::<f64>(nodes.len(), &edges).map_err(anyhow::Error::from)?;
    let closed = two_layer_closed_form(&adj, node).map_err(anyhow::Error::from)?;
    let variants: &[(Variant, &'static str)] = match a.variant {
        InfluenceVariant::LayerAverage => &[(Variant::LayerAverage, "layer-average")],
        InfluenceVariant::SelfloopLast => &[(Variant::SelfLoopLast, "selfloop-last")],
        InfluenceVariant::Both => &[
            (Variant::LayerAverage, "layer-average"),
            (Variant::SelfLoopLast, "selfloop-last"),
        ],
    };
    let mut results = Vec::new();
    for &(v, name) in variants {
        let exact =
            relative_influence_exact(&adj, node, v, a.layers).map_err(anyhow::Error::from)?;
        let cf = (a.layers == 2).then(|| match v {
            Variant::LayerAverage => closed.layer_average.clone(),
            Variant::SelfLoopLast => closed.self_loop.clone(),
        });
        results.push(InfluenceRow {
            variant: name,
            value: exact.to_f64().unwrap_or(f64::NAN),
            matches_closed_form: cf.as_ref().map(|c| *c == exact),
            closed_form: cf.map(|c| c.to_string()),
            exact: exact.to_string(),
        });
    }
    print_json(&InfluenceOutput {
        node: a.node.clone(),
        layers: a.layers,
        degree: closed.degree,
        two_hop: closed.two_hop,
        results,
    })?;
    Ok(())
}
