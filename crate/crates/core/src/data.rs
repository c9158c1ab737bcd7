//! Dataset ingestion, train/test splitting and synthetic generators.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dense::Matrix;
use crate::error::{Error, Result};
use crate::graph::{InteractionGraph, PlainGraph};

/// String IDs mapped to dense indices in first-seen order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdMap {
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl IdMap {
    pub fn from_ids(ids: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::Params(format!("duplicate id {id:?}")));
            }
        }
        Ok(Self { ids, index })
    }

    pub fn intern(&mut self, id: &str) -> usize {
        if let Some(&i) = self.index.get(id) {
            return i;
        }
        let i = self.ids.len();
        self.ids.push(id.to_owned());
        self.index.insert(id.to_owned(), i);
        i
    }

    pub fn get(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// An interaction graph together with the ID maps of its users and items.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub graph: InteractionGraph,
    pub users: IdMap,
    pub items: IdMap,
    pub summary: IngestSummary,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub lines: usize,
    pub duplicates: usize,
    pub dropped_items: usize,
    pub dropped_test_edges: usize,
    pub n_users: usize,
    pub n_items: usize,
    pub n_train: usize,
    pub n_test: usize,
}

/// Number of held-out interactions for a user with `deg` interactions.
fn test_count(deg: usize, ratio: f64) -> usize {
    if deg < 2 || ratio >= 1.0 {
        return 0;
    }
    let raw = (deg as f64 * (1.0 - ratio)).round() as usize;
    raw.clamp(1, deg - 1)
}

/// Result of a per-user train/test split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<(usize, usize)>,
    pub test: Vec<(usize, usize)>,
    pub duplicates: usize,
}

/// Deduplicates each user's items, shuffles them with a seeded generator and
/// holds out a `1 - ratio` share (at least one item for users with two or
/// more interactions, none for users with fewer).
pub fn split_per_user(
    n_users: usize,
    interactions: &[(usize, usize)],
    ratio: f64,
    seed: u64,
) -> Split {
    let mut per_user: Vec<Vec<usize>> = vec![Vec::new(); n_users];
    for &(u, i) in interactions {
        per_user[u].push(i);
    }
    let mut duplicates = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (u, list) in per_user.iter_mut().enumerate() {
        let before = list.len();
        list.sort_unstable();
        list.dedup();
        duplicates += before - list.len();
        list.shuffle(&mut rng);
        let n_test = test_count(list.len(), ratio);
        test.extend(list[..n_test].iter().map(|&i| (u, i)));
        train.extend(list[n_test..].iter().map(|&i| (u, i)));
    }
    train.sort_unstable();
    test.sort_unstable();
    Split {
        train,
        test,
        duplicates,
    }
}

impl Dataset {
    /// Splits interactions with [`split_per_user`]. Items left without
    /// training edges are dropped together with their test edges.
    pub fn from_interactions(
        users: IdMap,
        items: IdMap,
        interactions: &[(usize, usize)],
        ratio: f64,
        seed: u64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&ratio) || ratio == 0.0 {
            return Err(Error::Params(format!(
                "split ratio {ratio} must lie in (0, 1]"
            )));
        }
        if interactions.is_empty() {
            return Err(Error::Empty("no interactions".into()));
        }
        let split = split_per_user(users.len(), interactions, ratio, seed);
        let duplicates = split.duplicates;
        let (train, test) = (split.train, split.test);

        // Re-index items that kept at least one training edge.
        let mut has_train = vec![false; items.len()];
        for &(_, i) in &train {
            has_train[i] = true;
        }
        let mut remap = vec![usize::MAX; items.len()];
        let mut kept_ids = Vec::new();
        for (i, &keep) in has_train.iter().enumerate() {
            if keep {
                remap[i] = kept_ids.len();
                kept_ids.push(items.id(i).to_owned());
            }
        }
        let dropped_items = items.len() - kept_ids.len();
        let before_test = test.len();
        let train: Vec<_> = train.into_iter().map(|(u, i)| (u, remap[i])).collect();
        let test: Vec<_> = test
            .into_iter()
            .filter(|&(_, i)| remap[i] != usize::MAX)
            .map(|(u, i)| (u, remap[i]))
            .collect();
        let dropped_test_edges = before_test - test.len();
        if dropped_items > 0 {
            log::warn!(
                "dropped {dropped_items} items without training interactions ({dropped_test_edges} test edges)"
            );
        }
        let items = IdMap::from_ids(kept_ids)?;
        let graph = InteractionGraph::new(users.len(), items.len(), train, test)?;
        let summary = IngestSummary {
            lines: interactions.len(),
            duplicates,
            dropped_items,
            dropped_test_edges,
            n_users: graph.n_users(),
            n_items: graph.n_items(),
            n_train: graph.n_train(),
            n_test: graph.test_edges().len(),
        };
        Ok(Self {
            graph,
            users,
            items,
            summary,
        })
    }

    /// Uses index strings as IDs.
    pub fn from_indexed(
        n_users: usize,
        n_items: usize,
        interactions: &[(usize, usize)],
        ratio: f64,
        seed: u64,
    ) -> Result<Self> {
        let users = IdMap::from_ids((0..n_users).map(|u| format!("u{u}")).collect())?;
        let items = IdMap::from_ids((0..n_items).map(|i| format!("i{i}")).collect())?;
        Self::from_interactions(users, items, interactions, ratio, seed)
    }
}

/// Parses `user<TAB>item[<TAB>...]` lines. Blank lines are skipped.
pub fn parse_interactions<R: BufRead>(
    reader: R,
    source: &str,
) -> Result<(IdMap, IdMap, Vec<(usize, usize)>)> {
    let mut users = IdMap::default();
    let mut items = IdMap::default();
    let mut pairs = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let (Some(u), Some(i)) = (fields.next(), fields.next()) else {
            return Err(Error::Parse {
                path: source.to_owned(),
                line: n + 1,
                message: "expected user<TAB>item".into(),
            });
        };
        if u.is_empty() || i.is_empty() {
            return Err(Error::Parse {
                path: source.to_owned(),
                line: n + 1,
                message: "empty user or item id".into(),
            });
        }
        pairs.push((users.intern(u), items.intern(i)));
    }
    if pairs.is_empty() {
        return Err(Error::Empty(format!("{source} contains no interactions")));
    }
    Ok((users, items, pairs))
}

/// Loads an interaction file and splits it per user.
pub fn load_interactions(path: &Path, split_ratio: f64, seed: u64) -> Result<Dataset> {
    let file = File::open(path)?;
    let (users, items, pairs) =
        parse_interactions(BufReader::new(file), &path.display().to_string())?;
    Dataset::from_interactions(users, items, &pairs, split_ratio, seed)
}

/// Writes every train and test interaction of `ds` as `user<TAB>item`.
pub fn write_interactions(path: &Path, ds: &Dataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let mut all: Vec<(usize, usize)> = ds
        .graph
        .train_edges()
        .iter()
        .chain(ds.graph.test_edges())
        .copied()
        .collect();
    all.sort_unstable();
    for (u, i) in all {
        writeln!(w, "{}\t{}", ds.users.id(u), ds.items.id(i))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes raw indexed interactions as `u<idx><TAB>i<idx>`.
pub fn write_indexed_interactions(path: &Path, pairs: &[(usize, usize)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for &(u, i) in pairs {
        writeln!(w, "u{u}\ti{i}")?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedParams {
    pub n_users: usize,
    pub n_items: usize,
    pub blocks: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub seed: u64,
}

impl Default for PlantedParams {
    fn default() -> Self {
        Self {
            n_users: 200,
            n_items: 300,
            blocks: 4,
            p_in: 0.2,
            p_out: 0.01,
            seed: 0,
        }
    }
}

impl PlantedParams {
    pub fn block_of_user(&self, u: usize) -> usize {
        u * self.blocks / self.n_users
    }

    pub fn block_of_item(&self, i: usize) -> usize {
        i * self.blocks / self.n_items
    }

    /// Expected interactions of a user in block `b`.
    pub fn expected_user_degree(&self, b: usize) -> f64 {
        let in_block = (0..self.n_items)
            .filter(|&i| self.block_of_item(i) == b)
            .count() as f64;
        self.p_in * in_block + self.p_out * (self.n_items as f64 - in_block)
    }
}

/// Planted-block bipartite interactions. Users and items are split into
/// `blocks` contiguous groups; a user links to same-block items with
/// probability `p_in` and to the rest with `p_out`. Users drawn with fewer
/// than two interactions are redrawn.
pub fn gen_planted_bipartite(params: &PlantedParams) -> Result<Vec<(usize, usize)>> {
    let PlantedParams {
        n_users,
        n_items,
        blocks,
        p_in,
        p_out,
        seed,
    } = *params;
    if blocks == 0 || blocks > n_users.min(n_items) {
        return Err(Error::Params(format!(
            "{blocks} blocks for {n_users} users and {n_items} items"
        )));
    }
    if !(0.0..=1.0).contains(&p_in) || !(0.0..=1.0).contains(&p_out) || p_in < p_out {
        return Err(Error::Params(format!(
            "need 0 <= p_out <= p_in <= 1 (p_in={p_in}, p_out={p_out})"
        )));
    }
    for b in 0..blocks {
        let e = params.expected_user_degree(b);
        if e < 2.0 {
            return Err(Error::Params(format!(
                "expected degree {e:.3} in block {b} is below 2"
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::new();
    let mut row = Vec::new();
    for u in 0..n_users {
        let bu = params.block_of_user(u);
        loop {
            row.clear();
            for i in 0..n_items {
                let p = if params.block_of_item(i) == bu {
                    p_in
                } else {
                    p_out
                };
                if rng.random::<f64>() < p {
                    row.push(i);
                }
            }
            if row.len() >= 2 {
                break;
            }
        }
        pairs.extend(row.iter().map(|&i| (u, i)));
    }
    Ok(pairs)
}

/// Contextual stochastic block model parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsbmParams {
    pub n: usize,
    /// Mean of class `+1` features.
    pub mu: Vec<f64>,
    /// Mean of class `-1` features.
    pub nu: Vec<f64>,
    pub p: f64,
    pub q: f64,
    pub seed: u64,
}

impl CsbmParams {
    /// Equal class means `(1/n)·1` in `dim` dimensions.
    pub fn uninformative_features(n: usize, dim: usize, p: f64, q: f64, seed: u64) -> Self {
        let mean = vec![1.0 / n as f64; dim];
        Self {
            n,
            mu: mean.clone(),
            nu: mean,
            p,
            q,
            seed,
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.mu.is_empty() || self.mu.len() != self.nu.len() {
            return Err(Error::Params(
                "class means must share a positive dimension".into(),
            ));
        }
        if !(0.0 <= self.q && self.q <= self.p && self.p <= 1.0) {
            return Err(Error::Params(format!(
                "need 0 <= q <= p <= 1 (p={}, q={})",
                self.p, self.q
            )));
        }
        Ok(())
    }
}

/// Samples a CSBM graph: Rademacher labels, Gaussian features with
/// per-coordinate variance `1/d` around the class mean, and Bernoulli edges
/// with probability `p` within a class and `q` across classes.
pub fn gen_csbm(params: &CsbmParams) -> Result<PlainGraph> {
    params.validate()?;
    let n = params.n;
    let d = params.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let labels: Vec<i64> = (0..n)
        .map(|_| if rng.random::<bool>() { 1 } else { -1 })
        .collect();
    let noise =
        Normal::new(0.0, (1.0 / d as f64).sqrt()).map_err(|e| Error::Params(e.to_string()))?;
    let mut features = Matrix::zeros(n, d);
    for (v, &y) in labels.iter().enumerate() {
        let mean = if y == 1 { &params.mu } else { &params.nu };
        for (x, &m) in features.row_mut(v).iter_mut().zip(mean) {
            *x = m + noise.sample(&mut rng);
        }
    }
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            let p = if labels[a] == labels[b] {
                params.p
            } else {
                params.q
            };
            if rng.random::<f64>() < p {
                edges.push((a, b));
            }
        }
    }
    PlainGraph::from_edges(n, &edges)?
        .with_features(features)?
        .with_labels(labels)
}

/// Writes `edges.tsv`, `features.csv` and `labels.tsv` into `dir`, using node
/// indices as IDs.
pub fn write_plain_graph(dir: &Path, g: &PlainGraph) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = BufWriter::new(File::create(dir.join("edges.tsv"))?);
    for (a, b) in g.edges() {
        writeln!(w, "{a}\t{b}")?;
    }
    w.flush()?;
    if let Some(f) = g.features() {
        let mut w = BufWriter::new(File::create(dir.join("features.csv"))?);
        for v in 0..f.rows() {
            let row: Vec<String> = f.row(v).iter().map(|x| format!("{x:?}")).collect();
            writeln!(w, "{v},{}", row.join(","))?;
        }
        w.flush()?;
    }
    if let Some(labels) = g.labels() {
        let mut w = BufWriter::new(File::create(dir.join("labels.tsv"))?);
        for (v, y) in labels.iter().enumerate() {
            writeln!(w, "{v}\t{y}")?;
        }
        w.flush()?;
    }
    Ok(())
}

/// A node-classification graph loaded from disk with its node ID map.
#[derive(Debug, Clone)]
pub struct NodeDataset {
    pub graph: PlainGraph,
    pub nodes: IdMap,
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

/// Reads an undirected edge list (two node IDs per line, tab or space
/// separated), interning IDs into `nodes` in first-seen order.
pub fn read_edge_list(path: &Path, nodes: &mut IdMap) -> Result<Vec<(usize, usize)>> {
    let mut edges = Vec::new();
    for (n, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut f = line.split(['\t', ' ']).filter(|s| !s.is_empty());
        let (Some(a), Some(b)) = (f.next(), f.next()) else {
            return Err(parse_err(path, n + 1, "expected two node ids"));
        };
        edges.push((nodes.intern(a), nodes.intern(b)));
    }
    if edges.is_empty() {
        return Err(Error::Empty(format!("{} has no edges", path.display())));
    }
    Ok(edges)
}

/// Loads `edges.tsv` and, when present, `features.csv` and `labels.tsv` from
/// `dir`. Isolated nodes are dropped with a warning.
pub fn load_plain_graph(dir: &Path) -> Result<NodeDataset> {
    let mut nodes = IdMap::default();
    let edges = read_edge_list(&dir.join("edges.tsv"), &mut nodes)?;

    let feat_path = dir.join("features.csv");
    let mut feature_rows: HashMap<usize, Vec<f64>> = HashMap::new();
    if feat_path.exists() {
        for (n, line) in BufReader::new(File::open(&feat_path)?).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut f = line.split(',');
            let id = f.next().unwrap_or_default().trim();
            let vals = f
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|e| parse_err(&feat_path, n + 1, e.to_string()))?;
            feature_rows.insert(nodes.intern(id), vals);
        }
    }
    let label_path = dir.join("labels.tsv");
    let mut label_map: HashMap<usize, i64> = HashMap::new();
    if label_path.exists() {
        for (n, line) in BufReader::new(File::open(&label_path)?).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut f = line.split(['\t', ' ']).filter(|s| !s.is_empty());
            let (Some(id), Some(y)) = (f.next(), f.next()) else {
                return Err(parse_err(&label_path, n + 1, "expected node id and label"));
            };
            let y = y
                .parse::<i64>()
                .map_err(|e| parse_err(&label_path, n + 1, e.to_string()))?;
            label_map.insert(nodes.intern(id), y);
        }
    }

    let n = nodes.len();
    let mut g = PlainGraph::from_edges(n, &edges)?;
    if !feature_rows.is_empty() {
        let width = feature_rows.values().next().map_or(0, Vec::len);
        let mut rows = Vec::with_capacity(n);
        for v in 0..n {
            let row = feature_rows.remove(&v).ok_or_else(|| {
                Error::Params(format!("node {:?} has no feature row", nodes.id(v)))
            })?;
            if row.len() != width {
                return Err(Error::Dimension(format!(
                    "node {:?} has {} features, expected {width}",
                    nodes.id(v),
                    row.len()
                )));
            }
            rows.push(row);
        }
        g = g.with_features(Matrix::from_rows(&rows)?)?;
    }
    if !label_map.is_empty() {
        let labels = (0..n)
            .map(|v| {
                label_map
                    .get(&v)
                    .copied()
                    .ok_or_else(|| Error::Params(format!("node {:?} has no label", nodes.id(v))))
            })
            .collect::<Result<Vec<_>>>()?;
        g = g.with_labels(labels)?;
    }
    let isolated = g.isolated_nodes().len();
    if isolated > 0 {
        log::warn!("dropping {isolated} isolated nodes");
        let (clean, kept) = g.without_isolated();
        let ids = kept.iter().map(|&v| nodes.id(v).to_owned()).collect();
        return Ok(NodeDataset {
            graph: clean,
            nodes: IdMap::from_ids(ids)?,
        });
    }
    Ok(NodeDataset { graph: g, nodes })
}

/// Writes `value` as pretty JSON to `path`.
pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Io(e.into()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn five_items_split_four_one() {
        let pairs: Vec<(usize, usize)> = (0..5).map(|i| (0, i)).collect();
        let split = split_per_user(1, &pairs, 0.8, 3);
        assert_eq!(split.train.len(), 4);
        assert_eq!(split.test.len(), 1);
        // With a single user the held-out item has no training edge left.
        let ds = Dataset::from_indexed(1, 6, &pairs, 0.8, 3).unwrap();
        assert_eq!(ds.graph.n_train(), 4);
        assert_eq!(ds.summary.dropped_items, 2);
        assert_eq!(ds.summary.dropped_test_edges, 1);
    }

    #[test]
    fn split_is_seed_deterministic() {
        let pairs: Vec<(usize, usize)> = (0..40).map(|x| (x % 4, x / 4)).collect();
        assert_eq!(
            split_per_user(4, &pairs, 0.8, 11),
            split_per_user(4, &pairs, 0.8, 11)
        );
        assert_ne!(
            split_per_user(4, &pairs, 0.8, 11),
            split_per_user(4, &pairs, 0.8, 12)
        );
    }

    #[test]
    fn single_interaction_stays_in_train() {
        let ds = Dataset::from_indexed(2, 3, &[(0, 0), (1, 0), (1, 1), (1, 2)], 0.8, 1).unwrap();
        assert_eq!(ds.graph.items_of(0).len(), 1);
        assert!(ds.graph.test_items_of(0).is_empty());
    }

    #[test]
    fn malformed_line_reports_number() {
        let text = "a\tx\nb x\n";
        match parse_interactions(text.as_bytes(), "mem") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse_interactions("".as_bytes(), "mem"),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn trailing_fields_ignored_and_ids_first_seen() {
        let (users, items, pairs) =
            parse_interactions("b\tz\t5\t99\na\tz\nb\ty\n".as_bytes(), "mem").unwrap();
        assert_eq!(users.ids(), &["b", "a"]);
        assert_eq!(items.ids(), &["z", "y"]);
        assert_eq!(pairs, vec![(0, 0), (1, 0), (0, 1)]);
    }

    #[test]
    fn duplicates_counted() {
        let ds = Dataset::from_indexed(1, 3, &[(0, 0), (0, 0), (0, 1), (0, 2)], 1.0, 0).unwrap();
        assert_eq!(ds.summary.duplicates, 1);
        assert_eq!(ds.graph.n_train(), 3);
    }

    #[test]
    fn planted_without_cross_edges_is_block_diagonal() {
        let params = PlantedParams {
            p_out: 0.0,
            seed: 5,
            ..PlantedParams::default()
        };
        let pairs = gen_planted_bipartite(&params).unwrap();
        assert!(pairs
            .iter()
            .all(|&(u, i)| params.block_of_user(u) == params.block_of_item(i)));
    }

    #[test]
    fn planted_rejects_infeasible() {
        let bad = PlantedParams {
            p_in: 0.01,
            p_out: 0.001,
            ..PlantedParams::default()
        };
        assert!(gen_planted_bipartite(&bad).is_err());
        let inverted = PlantedParams {
            p_in: 0.1,
            p_out: 0.2,
            ..PlantedParams::default()
        };
        assert!(gen_planted_bipartite(&inverted).is_err());
    }

    #[test]
    fn csbm_two_nodes_same_label_connected() {
        // Find a seed where both labels agree; with p=1, q=0 they must link.
        for seed in 0..20 {
            let params = CsbmParams::uninformative_features(2, 3, 1.0, 0.0, seed);
            let g = gen_csbm(&params).unwrap();
            let labels = g.labels().unwrap();
            if labels[0] == labels[1] {
                assert_eq!(g.n_edges(), 1);
                return;
            }
            assert_eq!(g.n_edges(), 0);
        }
        panic!("no seed produced equal labels");
    }

    #[test]
    fn csbm_rejects_bad_probabilities() {
        let p = CsbmParams::uninformative_features(10, 2, 0.1, 0.2, 0);
        assert!(gen_csbm(&p).is_err());
    }
}
