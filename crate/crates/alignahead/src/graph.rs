//! Graph datasets: loading, synthetic generation, splits, and the
//! precomputed index structures the models and losses consume.
//!
//! A [`Graph`] stores the raw data (undirected edge list, dense features,
//! labels, split tags) in `f64`. [`GraphContext`] lowers it to the working
//! precision once per run: normalized adjacency, mean-aggregation operator,
//! sparse feature matrix, neighbor segments, and mask index lists.

use std::collections::HashSet;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dense::DenseMatrix;
use crate::scalar::Scalar;
use crate::sparse::{CsrMatrix, EdgePairs, EdgeSegments};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{file}:{line}: {msg}")]
    Parse { file: String, line: usize, msg: String },
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

fn parse_err(file: &str, line: usize, msg: impl Into<String>) -> DataError {
    DataError::Parse { file: file.to_string(), line, msg: msg.into() }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Val,
    Test,
    None,
}

impl SplitTag {
    fn as_str(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Val => "val",
            SplitTag::Test => "test",
            SplitTag::None => "none",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(SplitTag::Train),
            "val" => Some(SplitTag::Val),
            "test" => Some(SplitTag::Test),
            "none" => Some(SplitTag::None),
            _ => None,
        }
    }
}

/// Node targets: either one class per node or a 0/1 indicator matrix.
#[derive(Clone, Debug, PartialEq)]
pub enum Labels {
    Single(Vec<usize>),
    Multi(DenseMatrix<f64>),
}

impl Labels {
    pub fn is_multi(&self) -> bool {
        matches!(self, Labels::Multi(_))
    }
}

#[derive(Clone, Debug)]
pub struct Graph {
    pub num_features: usize,
    pub num_classes: usize,
    /// Unique undirected pairs with `u < v`; no self loops.
    pub edges: Vec<(usize, usize)>,
    /// `N x F`, stored dense; sparsity is exploited later via [`GraphContext`].
    pub features: DenseMatrix<f64>,
    pub labels: Labels,
    pub split: Vec<SplitTag>,
}

impl Graph {
    pub fn num_nodes(&self) -> usize {
        self.features.rows()
    }

    pub fn mask(&self, tag: SplitTag) -> Vec<usize> {
        self.split
            .iter()
            .enumerate()
            .filter_map(|(i, &t)| (t == tag).then_some(i))
            .collect()
    }
}

/// Edges discarded while reading a citation-network pair of files.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LoadReport {
    /// Edge lines naming a node id absent from the content file.
    pub dropped_unknown: usize,
    pub dropped_self_loops: usize,
    pub dropped_duplicates: usize,
}

/// Reads the classic two-file citation format: a content file with
/// `id <tab> f_1 .. f_F <tab> label` rows and a cites file with
/// `cited <tab> citing` rows. Node order follows the content file; class
/// indices follow the sorted distinct label names.
pub fn load_content_cites(
    content_path: &Path,
    cites_path: &Path,
) -> Result<(Graph, LoadReport), DataError> {
    let content_name = content_path.display().to_string();
    let content = fs::read_to_string(content_path)?;

    let mut ids: Vec<&str> = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut label_names: Vec<&str> = Vec::new();
    let mut num_features = None;
    for (ln, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 3 {
            return Err(parse_err(&content_name, ln + 1, "expected id, features, label"));
        }
        let f = fields.len() - 2;
        match num_features {
            None => num_features = Some(f),
            Some(prev) if prev != f => {
                return Err(parse_err(
                    &content_name,
                    ln + 1,
                    format!("row has {f} features, earlier rows had {prev}"),
                ))
            }
            _ => {}
        }
        let mut row = Vec::with_capacity(f);
        for v in &fields[1..fields.len() - 1] {
            row.push(v.parse::<f64>().map_err(|e| {
                parse_err(&content_name, ln + 1, format!("bad feature value {v:?}: {e}"))
            })?);
        }
        ids.push(fields[0]);
        rows.push(row);
        label_names.push(fields[fields.len() - 1]);
    }
    let num_features =
        num_features.ok_or_else(|| DataError::Invalid(format!("{content_name} is empty")))?;

    let mut classes: Vec<&str> = label_names.iter().copied().collect::<HashSet<_>>().into_iter().collect();
    classes.sort_unstable();
    let class_of = |name: &str| classes.iter().position(|c| *c == name).unwrap();
    let labels: Vec<usize> = label_names.iter().map(|n| class_of(n)).collect();

    let index_of: std::collections::HashMap<&str, usize> =
        ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    if index_of.len() != ids.len() {
        return Err(DataError::Invalid(format!("{content_name} repeats a node id")));
    }

    let n = ids.len();
    let mut features = DenseMatrix::zeros(n, num_features);
    for (i, row) in rows.iter().enumerate() {
        features.row_mut(i).copy_from_slice(row);
    }

    let cites_name = cites_path.display().to_string();
    let cites = fs::read_to_string(cites_path)?;
    let mut report = LoadReport::default();
    let mut seen = HashSet::new();
    let mut edges = Vec::new();
    for (ln, line) in cites.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let (Some(a), Some(b)) = (it.next(), it.next()) else {
            return Err(parse_err(&cites_name, ln + 1, "expected two node ids"));
        };
        let (Some(&u), Some(&v)) = (index_of.get(a), index_of.get(b)) else {
            report.dropped_unknown += 1;
            continue;
        };
        if u == v {
            report.dropped_self_loops += 1;
            continue;
        }
        let key = (u.min(v), u.max(v));
        if !seen.insert(key) {
            report.dropped_duplicates += 1;
            continue;
        }
        edges.push(key);
    }
    edges.sort_unstable();

    Ok((
        Graph {
            num_features,
            num_classes: classes.len(),
            edges,
            features,
            labels: Labels::Single(labels),
            split: vec![SplitTag::None; n],
        },
        report,
    ))
}

#[derive(Serialize, Deserialize)]
struct BundleMeta {
    num_nodes: usize,
    num_features: usize,
    num_classes: usize,
    task: String,
}

/// Writes a graph as a directory bundle: `edges.tsv`, `features.csv`,
/// `labels.csv`, `splits.csv`, `meta.json`.
pub fn save_bundle(graph: &Graph, dir: &Path) -> Result<(), DataError> {
    fs::create_dir_all(dir)?;
    let n = graph.num_nodes();

    let mut edges = String::new();
    for &(u, v) in &graph.edges {
        edges.push_str(&format!("{u}\t{v}\n"));
    }
    fs::write(dir.join("edges.tsv"), edges)?;

    let mut feats = Vec::new();
    for r in 0..n {
        let row: Vec<String> = graph.features.row(r).iter().map(|v| format!("{v}")).collect();
        writeln!(feats, "{}", row.join(","))?;
    }
    fs::write(dir.join("features.csv"), feats)?;

    let mut labels = String::new();
    match &graph.labels {
        Labels::Single(ys) => {
            for &y in ys {
                labels.push_str(&format!("{y}\n"));
            }
        }
        Labels::Multi(m) => {
            for r in 0..n {
                let row: Vec<String> = m.row(r).iter().map(|v| format!("{v}")).collect();
                labels.push_str(&row.join(","));
                labels.push('\n');
            }
        }
    }
    fs::write(dir.join("labels.csv"), labels)?;

    let mut splits = String::new();
    for &t in &graph.split {
        splits.push_str(t.as_str());
        splits.push('\n');
    }
    fs::write(dir.join("splits.csv"), splits)?;

    let meta = BundleMeta {
        num_nodes: n,
        num_features: graph.num_features,
        num_classes: graph.num_classes,
        task: if graph.labels.is_multi() { "multi" } else { "single" }.to_string(),
    };
    fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

/// Reads a directory bundle written by [`save_bundle`] (or by hand).
pub fn load_bundle(dir: &Path) -> Result<Graph, DataError> {
    let meta: BundleMeta = serde_json::from_str(&fs::read_to_string(dir.join("meta.json"))?)?;
    let n = meta.num_nodes;

    let feat_name = dir.join("features.csv").display().to_string();
    let feat_text = fs::read_to_string(dir.join("features.csv"))?;
    let mut features = DenseMatrix::zeros(n, meta.num_features);
    let mut rows = 0;
    for (ln, line) in feat_text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        if rows >= n {
            return Err(DataError::Invalid(format!("{feat_name} has more than {n} rows")));
        }
        let vals: Result<Vec<f64>, _> = line.split(',').map(|v| v.trim().parse::<f64>()).collect();
        let vals =
            vals.map_err(|e| parse_err(&feat_name, ln + 1, format!("bad feature: {e}")))?;
        if vals.len() != meta.num_features {
            return Err(parse_err(
                &feat_name,
                ln + 1,
                format!("expected {} values, found {}", meta.num_features, vals.len()),
            ));
        }
        features.row_mut(rows).copy_from_slice(&vals);
        rows += 1;
    }
    if rows != n {
        return Err(DataError::Invalid(format!("{feat_name}: expected {n} rows, found {rows}")));
    }

    let label_name = dir.join("labels.csv").display().to_string();
    let label_text = fs::read_to_string(dir.join("labels.csv"))?;
    let labels = match meta.task.as_str() {
        "single" => {
            let mut ys = Vec::with_capacity(n);
            for (ln, line) in label_text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let y: usize = line
                    .trim()
                    .parse()
                    .map_err(|e| parse_err(&label_name, ln + 1, format!("bad label: {e}")))?;
                if y >= meta.num_classes {
                    return Err(parse_err(
                        &label_name,
                        ln + 1,
                        format!("label {y} out of range for {} classes", meta.num_classes),
                    ));
                }
                ys.push(y);
            }
            if ys.len() != n {
                return Err(DataError::Invalid(format!(
                    "{label_name}: expected {n} labels, found {}",
                    ys.len()
                )));
            }
            Labels::Single(ys)
        }
        "multi" => {
            let mut m = DenseMatrix::zeros(n, meta.num_classes);
            let mut rows = 0;
            for (ln, line) in label_text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let vals: Result<Vec<f64>, _> =
                    line.split(',').map(|v| v.trim().parse::<f64>()).collect();
                let vals =
                    vals.map_err(|e| parse_err(&label_name, ln + 1, format!("bad label: {e}")))?;
                if vals.len() != meta.num_classes {
                    return Err(parse_err(
                        &label_name,
                        ln + 1,
                        format!("expected {} values, found {}", meta.num_classes, vals.len()),
                    ));
                }
                m.row_mut(rows).copy_from_slice(&vals);
                rows += 1;
            }
            if rows != n {
                return Err(DataError::Invalid(format!(
                    "{label_name}: expected {n} rows, found {rows}"
                )));
            }
            Labels::Multi(m)
        }
        other => return Err(DataError::Invalid(format!("unknown task kind {other:?}"))),
    };

    let split_name = dir.join("splits.csv").display().to_string();
    let split_text = fs::read_to_string(dir.join("splits.csv"))?;
    let mut split = Vec::with_capacity(n);
    for (ln, line) in split_text.lines().enumerate() {
        let s = line.trim();
        if s.is_empty() {
            continue;
        }
        split.push(
            SplitTag::parse(s)
                .ok_or_else(|| parse_err(&split_name, ln + 1, format!("unknown tag {s:?}")))?,
        );
    }
    if split.len() != n {
        return Err(DataError::Invalid(format!(
            "{split_name}: expected {n} tags, found {}",
            split.len()
        )));
    }

    let edge_name = dir.join("edges.tsv").display().to_string();
    let edge_text = fs::read_to_string(dir.join("edges.tsv"))?;
    let mut seen = HashSet::new();
    let mut edges = Vec::new();
    for (ln, line) in edge_text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let (Some(a), Some(b)) = (it.next(), it.next()) else {
            return Err(parse_err(&edge_name, ln + 1, "expected two node indices"));
        };
        let u: usize =
            a.parse().map_err(|e| parse_err(&edge_name, ln + 1, format!("bad index: {e}")))?;
        let v: usize =
            b.parse().map_err(|e| parse_err(&edge_name, ln + 1, format!("bad index: {e}")))?;
        if u >= n || v >= n {
            return Err(parse_err(&edge_name, ln + 1, format!("index out of range: {u} {v}")));
        }
        if u == v {
            continue;
        }
        let key = (u.min(v), u.max(v));
        if seen.insert(key) {
            edges.push(key);
        }
    }
    edges.sort_unstable();

    Ok(Graph {
        num_features: meta.num_features,
        num_classes: meta.num_classes,
        edges,
        features,
        labels,
        split,
    })
}

/// Citation-benchmark style split: a fixed number of training nodes per
/// class, then `num_val` validation and `num_test` test nodes from the
/// remainder, all chosen from one seeded shuffle of the node order.
pub fn planetoid_split(
    graph: &mut Graph,
    per_class: usize,
    num_val: usize,
    num_test: usize,
    seed: u64,
) -> Result<(), DataError> {
    let Labels::Single(ys) = &graph.labels else {
        return Err(DataError::Invalid(
            "per-class splits require single-label targets".to_string(),
        ));
    };
    let n = graph.num_nodes();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut split = vec![SplitTag::None; n];
    let mut taken = vec![0usize; graph.num_classes];
    let mut rest = Vec::new();
    for &i in &order {
        let c = ys[i];
        if taken[c] < per_class {
            split[i] = SplitTag::Train;
            taken[c] += 1;
        } else {
            rest.push(i);
        }
    }
    if taken.iter().any(|&t| t < per_class) {
        return Err(DataError::Invalid(format!(
            "not every class has {per_class} nodes to train on"
        )));
    }
    if rest.len() < num_val + num_test {
        return Err(DataError::Invalid(format!(
            "need {} nodes for val+test, only {} remain",
            num_val + num_test,
            rest.len()
        )));
    }
    for &i in &rest[..num_val] {
        split[i] = SplitTag::Val;
    }
    for &i in &rest[num_val..num_val + num_test] {
        split[i] = SplitTag::Test;
    }
    graph.split = split;
    Ok(())
}

/// Random split by node counts from one seeded shuffle; everything beyond
/// `n_train + n_val + n_test` stays unlabeled.
pub fn random_split(
    graph: &mut Graph,
    n_train: usize,
    n_val: usize,
    n_test: usize,
    seed: u64,
) -> Result<(), DataError> {
    let n = graph.num_nodes();
    if n_train + n_val + n_test > n {
        return Err(DataError::Invalid(format!(
            "split sizes {n_train}+{n_val}+{n_test} exceed {n} nodes"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut split = vec![SplitTag::None; n];
    for (k, &i) in order.iter().enumerate() {
        split[i] = if k < n_train {
            SplitTag::Train
        } else if k < n_train + n_val {
            SplitTag::Val
        } else if k < n_train + n_val + n_test {
            SplitTag::Test
        } else {
            SplitTag::None
        };
    }
    graph.split = split;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct SbmParams {
    pub block_sizes: Vec<usize>,
    /// Edge probability inside a block.
    pub p_in: f64,
    /// Edge probability across blocks.
    pub p_out: f64,
    pub num_features: usize,
    /// Standard deviation of the Gaussian noise added to the one-hot
    /// block indicator.
    pub noise: f64,
    pub seed: u64,
}

/// Samples a stochastic block model graph. Labels are block indices and
/// features are a noisy one-hot encoding of the block, so the task is
/// learnable but not trivial at moderate noise.
pub fn generate_sbm(params: &SbmParams) -> Graph {
    let k = params.block_sizes.len();
    assert!(k >= 2, "need at least two blocks");
    assert!(
        params.num_features >= k,
        "need at least {k} feature dims for {k} blocks"
    );
    let n: usize = params.block_sizes.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    let mut block = Vec::with_capacity(n);
    for (b, &size) in params.block_sizes.iter().enumerate() {
        block.extend(std::iter::repeat(b).take(size));
    }

    let normal = Normal::new(0.0, params.noise.max(0.0)).unwrap();
    let mut features = DenseMatrix::zeros(n, params.num_features);
    for i in 0..n {
        let row = features.row_mut(i);
        row[block[i]] = 1.0;
        if params.noise > 0.0 {
            for v in row.iter_mut() {
                *v += normal.sample(&mut rng);
            }
        }
    }

    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if block[u] == block[v] { params.p_in } else { params.p_out };
            if p > 0.0 && rng.random_bool(p.min(1.0)) {
                edges.push((u, v));
            }
        }
    }

    Graph {
        num_features: params.num_features,
        num_classes: k,
        edges,
        features,
        labels: Labels::Single(block),
        split: vec![SplitTag::None; n],
    }
}

/// Symmetric normalization with self loops:
/// `D^{-1/2} (A + I) D^{-1/2}` where `D` counts the self loop.
pub fn normalize_adjacency(n: usize, edges: &[(usize, usize)]) -> CsrMatrix<f64> {
    let mut deg = vec![1.0f64; n];
    for &(u, v) in edges {
        deg[u] += 1.0;
        deg[v] += 1.0;
    }
    let mut triplets = Vec::with_capacity(2 * edges.len() + n);
    for i in 0..n {
        triplets.push((i, i, 1.0 / deg[i]));
    }
    for &(u, v) in edges {
        let w = 1.0 / (deg[u] * deg[v]).sqrt();
        triplets.push((u, v, w));
        triplets.push((v, u, w));
    }
    CsrMatrix::from_triplets(n, n, &triplets)
}

/// Row-stochastic neighbor averaging without self loops. Isolated nodes get
/// an all-zero row, i.e. their neighbor mean is the zero vector.
pub fn mean_adjacency(n: usize, edges: &[(usize, usize)]) -> CsrMatrix<f64> {
    let mut deg = vec![0.0f64; n];
    for &(u, v) in edges {
        deg[u] += 1.0;
        deg[v] += 1.0;
    }
    let mut triplets = Vec::with_capacity(2 * edges.len());
    for &(u, v) in edges {
        triplets.push((u, v, 1.0 / deg[u]));
        triplets.push((v, u, 1.0 / deg[v]));
    }
    CsrMatrix::from_triplets(n, n, &triplets)
}

/// Per-node neighbor lists flattened into segment form. Slot `e` says that
/// node `centers[e]` receives a message from node `nbrs[e]`; segment `i`
/// covers all slots of center `i`. Neighbors are sorted within a segment,
/// with the node itself first when `include_self` is set.
#[derive(Clone, Debug)]
pub struct Neighborhood {
    pub seg: Arc<EdgeSegments>,
    pub nbrs: Arc<Vec<usize>>,
    pub centers: Arc<Vec<usize>>,
}

pub fn neighborhoods(n: usize, edges: &[(usize, usize)], include_self: bool) -> Neighborhood {
    let mut lists: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(u, v) in edges {
        lists[u].push(v);
        lists[v].push(u);
    }
    let mut counts = Vec::with_capacity(n);
    let mut nbrs = Vec::new();
    let mut centers = Vec::new();
    for (i, list) in lists.iter_mut().enumerate() {
        list.sort_unstable();
        if include_self {
            nbrs.push(i);
            centers.push(i);
        }
        nbrs.extend(list.iter().copied());
        centers.extend(std::iter::repeat(i).take(list.len()));
        counts.push(list.len() + usize::from(include_self));
    }
    Neighborhood {
        seg: Arc::new(EdgeSegments::from_counts(&counts)),
        nbrs: Arc::new(nbrs),
        centers: Arc::new(centers),
    }
}

/// Directed edge list grouped by source node, for pairwise kernels over
/// neighborhoods. Self pairs are excluded; `non_isolated` counts the nodes
/// that own at least one pair.
#[derive(Clone, Debug)]
pub struct EdgeIndex {
    pub pairs: Arc<EdgePairs>,
    pub seg: Arc<EdgeSegments>,
    pub non_isolated: usize,
}

pub fn edge_index(n: usize, edges: &[(usize, usize)]) -> EdgeIndex {
    let nbhd = neighborhoods(n, edges, false);
    let non_isolated = (0..n).filter(|&i| !nbhd.seg.range(i).is_empty()).count();
    EdgeIndex {
        pairs: Arc::new(EdgePairs {
            src: nbhd.centers.as_ref().clone(),
            dst: nbhd.nbrs.as_ref().clone(),
        }),
        seg: nbhd.seg,
        non_isolated,
    }
}

/// Everything a training run needs from a graph, lowered to precision `T`
/// and shared behind `Arc`s so tapes can capture pieces cheaply.
pub struct GraphContext<T: Scalar> {
    pub num_nodes: usize,
    pub num_features: usize,
    pub num_classes: usize,
    /// `D^{-1/2}(A+I)D^{-1/2}` for convolutional propagation.
    pub norm_adj: Arc<CsrMatrix<T>>,
    /// Row-stochastic neighbor mean (no self loops).
    pub mean_adj: Arc<CsrMatrix<T>>,
    /// Features in sparse form; first-layer products run through this.
    pub features: Arc<CsrMatrix<T>>,
    /// Neighbor-mean of the features, built on first use.
    mean_features: std::sync::OnceLock<Arc<CsrMatrix<T>>>,
    /// Neighborhood including the node itself (attention softmax domain).
    pub nbhd_self: Neighborhood,
    /// Neighborhood without the node itself (pooling domain).
    pub nbhd: Neighborhood,
    /// Pairwise kernel domain grouped by source node.
    pub edge_index: EdgeIndex,
    pub labels: Labels,
    pub class_indices: Arc<Vec<usize>>,
    /// Multi-label targets lowered to `T` (empty 0x0 for single-label tasks).
    pub multi_targets: Arc<DenseMatrix<T>>,
    pub train_mask: Arc<Vec<usize>>,
    pub val_mask: Arc<Vec<usize>>,
    pub test_mask: Arc<Vec<usize>>,
}

impl<T: Scalar> GraphContext<T> {
    pub fn new(graph: &Graph) -> Self {
        let n = graph.num_nodes();
        let (class_indices, multi_targets) = match &graph.labels {
            Labels::Single(ys) => (ys.clone(), DenseMatrix::zeros(0, 0)),
            Labels::Multi(m) => (vec![0; n], m.cast::<T>()),
        };
        Self {
            num_nodes: n,
            num_features: graph.num_features,
            num_classes: graph.num_classes,
            norm_adj: Arc::new(normalize_adjacency(n, &graph.edges).cast::<T>()),
            mean_adj: Arc::new(mean_adjacency(n, &graph.edges).cast::<T>()),
            features: Arc::new(CsrMatrix::from_dense(&graph.features).cast::<T>()),
            mean_features: std::sync::OnceLock::new(),
            nbhd_self: neighborhoods(n, &graph.edges, true),
            nbhd: neighborhoods(n, &graph.edges, false),
            edge_index: edge_index(n, &graph.edges),
            labels: graph.labels.clone(),
            class_indices: Arc::new(class_indices),
            multi_targets: Arc::new(multi_targets),
            train_mask: Arc::new(graph.mask(SplitTag::Train)),
            val_mask: Arc::new(graph.mask(SplitTag::Val)),
            test_mask: Arc::new(graph.mask(SplitTag::Test)),
        }
    }

    pub fn is_multi(&self) -> bool {
        self.labels.is_multi()
    }

    /// `mean_adj * features`, cached after the first call. Lets the first
    /// layer of a mean-aggregating model stay on the sparse path.
    pub fn mean_features(&self) -> &Arc<CsrMatrix<T>> {
        self.mean_features.get_or_init(|| {
            Arc::new(CsrMatrix::from_dense(&self.mean_adj.spmm(&self.features.to_dense())))
        })
    }
}
