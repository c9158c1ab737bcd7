use grcl_core::data::{
    gen_csbm, gen_planted_bipartite, write_indexed_interactions, write_json, write_plain_graph,
    CsbmParams, PlantedParams,
};

use crate::metadata::RunMetadata;
use crate::{Failure, SynthArgs, SynthKind};

pub fn run(a: &SynthArgs) -> Result<(), Failure> {
    std::fs::create_dir_all(&a.out).map_err(anyhow::Error::from)?;
    let mut meta = match a.kind {
        SynthKind::Csbm => {
            let mut params =
                CsbmParams::uninformative_features(a.n, a.feature_dim, a.p, a.q, a.seed);
            params.mu.iter_mut().for_each(|m| *m += a.mean_shift);
            params
                .validate()
                .map_err(|e| Failure::Usage(e.to_string()))?;
            let g = gen_csbm(&params).map_err(anyhow::Error::from)?;
            write_plain_graph(&a.out, &g).map_err(anyhow::Error::from)?;
            let mut meta = RunMetadata::new("gen-synth", Some(a.seed), &params)?;
            meta.note("kind", "csbm");
            meta.note("edges", g.n_edges().to_string());
            meta
        }
        SynthKind::Planted => {
            let params = PlantedParams {
                n_users: a.users,
                n_items: a.items,
                blocks: a.blocks,
                p_in: a.p_in,
                p_out: a.p_out,
                seed: a.seed,
            };
            let pairs =
                gen_planted_bipartite(&params).map_err(|e| Failure::Usage(e.to_string()))?;
            write_indexed_interactions(&a.out.join("interactions.tsv"), &pairs)
                .map_err(anyhow::Error::from)?;
            write_json(&a.out.join("params.json"), &params).map_err(anyhow::Error::from)?;
            let mut meta = RunMetadata::new("gen-synth", Some(a.seed), &params)?;
            meta.note("kind", "planted");
            meta.note("interactions", pairs.len().to_string());
            meta
        }
    };
    meta.write_to(a.out.join("metadata.json"))?;
    Ok(())
}
