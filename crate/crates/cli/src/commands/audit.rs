use std::fs::File;
use std::io::{BufWriter, Write};

use anyhow::Context;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use grcl_core::bounds::{audit_batches, median, Histogram};
use grcl_core::data::load_interactions;
use grcl_core::dense::Matrix;
use grcl_core::encoder::{normalize_rows, propagate};
use grcl_core::model::SavedModel;
use grcl_core::training::interaction_operator;

use crate::metadata::RunMetadata;
use crate::output::MetricsStream;
use crate::{AuditArgs, Failure};

#[derive(Serialize)]
struct Summary {
    batches: usize,
    sandwich_ok: usize,
    neg_lower_ok: usize,
    neg_upper_ok: usize,
    max_pos_identity_residual: f64,
    median_ratio: f64,
    embeddings: &'static str,
}

pub fn run(a: &AuditArgs) -> Result<(), Failure> {
    if a.batches == 0 || a.anchors == 0 || a.bins == 0 || a.neg_k == 0 {
        return Err(Failure::Usage(
            "--batches, --anchors, --bins and --neg-k must be positive".into(),
        ));
    }
    let mut meta = RunMetadata::new("audit-bounds", Some(a.seed), a)?;
    meta.input(&a.data)?;
    meta.phase("load");
    let ds = load_interactions(&a.data, a.split_ratio, a.seed).map_err(anyhow::Error::from)?;
    let (mut e, source) = match &a.model {
        Some(path) => {
            meta.input(path)?;
            let model =
                SavedModel::load(path).with_context(|| format!("loading {}", path.display()))?;
            let table = model
                .table_for(&ds.users, &ds.items)
                .map_err(anyhow::Error::from)?;
            let op = interaction_operator::<f64>(&ds.graph, model.propagation.variant)
                .map_err(anyhow::Error::from)?;
            let e = propagate(&table, &op, &model.propagation).map_err(anyhow::Error::from)?;
            (e.embeddings, "model")
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
            (
                Matrix::random_normal(ds.graph.n_nodes(), a.dim, 1.0, &mut rng),
                "random",
            )
        }
    };
    normalize_rows(&mut e).map_err(anyhow::Error::from)?;
    meta.note("embeddings", source);

    meta.phase("audit");
    let reports = audit_batches(&e, &ds.graph, a.batches, a.anchors, a.neg_k, a.seed)
        .map_err(anyhow::Error::from)?;
    std::fs::create_dir_all(&a.out).map_err(anyhow::Error::from)?;
    let bounds_path = a.out.join("bounds.jsonl");
    // Start fresh; the stream appends.
    File::create(&bounds_path).with_context(|| format!("writing {}", bounds_path.display()))?;
    let mut stream = MetricsStream::append(&bounds_path, true)?;
    for r in &reports {
        stream.emit(r)?;
    }
    let ratios: Vec<f64> = reports.iter().map(|r| r.beta_u / r.beta_l).collect();
    write_ratios(&a.out.join("ratios.csv"), &ratios)?;
    let hist = Histogram::from_values(&ratios, a.bins).map_err(anyhow::Error::from)?;
    write_histogram(&a.out.join("histogram.csv"), &hist)?;

    let summary = Summary {
        batches: reports.len(),
        sandwich_ok: reports.iter().filter(|r| r.sandwich_ok).count(),
        neg_lower_ok: reports.iter().filter(|r| r.neg_lower_ok).count(),
        neg_upper_ok: reports.iter().filter(|r| r.neg_upper_ok).count(),
        max_pos_identity_residual: reports
            .iter()
            .map(|r| r.pos_identity_residual)
            .fold(0.0, f64::max),
        median_ratio: median(&ratios),
        embeddings: source,
    };
    eprintln!(
        "{}",
        serde_json::to_string(&summary).map_err(anyhow::Error::from)?
    );
    meta.note(
        "summary",
        serde_json::to_string(&summary).map_err(anyhow::Error::from)?,
    );
    meta.write_to(a.out.join("metadata.json"))?;
    meta.finish()?;
    Ok(())
}

fn write_ratios(path: &std::path::Path, ratios: &[f64]) -> anyhow::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "batch_index,ratio")?;
    for (b, r) in ratios.iter().enumerate() {
        writeln!(w, "{b},{r:?}")?;
    }
    w.flush()?;
    Ok(())
}

fn write_histogram(path: &std::path::Path, h: &Histogram) -> anyhow::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "bin_left,bin_right,count")?;
    for (lo, hi, c) in h.rows() {
        writeln!(w, "{lo:?},{hi:?},{c}")?;
    }
    w.flush()?;
    Ok(())
}
