//! Dataset loading: the raw LINQS Cora distribution, a generic JSON format,
//! and seeded per-class train/test splits.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::SparseGraph;

/// Node features, labels and the given relational graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub graph: SparseGraph,
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        features: Array2<f64>,
        labels: Vec<usize>,
        graph: SparseGraph,
        class_names: Vec<String>,
    ) -> Result<Self> {
        let n = features.nrows();
        if labels.len() != n || graph.n() != n {
            return Err(Error::DimensionMismatch(format!(
                "{} feature rows, {} labels, {} graph nodes",
                n,
                labels.len(),
                graph.n()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(Error::Schema(format!(
                "label {bad} outside [0, {})",
                class_names.len()
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self {
            features,
            labels,
            graph,
            class_names,
        })
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn d(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Features with each row scaled to unit L1 norm; all-zero rows stay zero.
    pub fn row_normalized_features(&self) -> Array2<f64> {
        let mut x = self.features.clone();
        for mut row in x.rows_mut() {
            let s: f64 = row.iter().map(|v| v.abs()).sum();
            if s > 0.0 {
                row.mapv_inplace(|v| v / s);
            }
        }
        x
    }

    /// SHA-256 over dimensions, feature bits, labels, class names and edges.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for v in [self.n(), self.d(), self.num_classes()] {
            h.update((v as u64).to_le_bytes());
        }
        for v in self.features.iter() {
            h.update(v.to_bits().to_le_bytes());
        }
        for &l in &self.labels {
            h.update((l as u64).to_le_bytes());
        }
        for name in &self.class_names {
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
        }
        for (i, j, w) in self.graph.edges() {
            h.update((i as u64).to_le_bytes());
            h.update((j as u64).to_le_bytes());
            h.update(w.to_bits().to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Loads the raw LINQS Cora files.
///
/// Nodes are indexed in order of appearance in the content file; classes
/// are indexed by sorted label string. Citations become undirected
/// unit-weight edges.
pub fn load_cora(content_path: &Path, cites_path: &Path) -> Result<Dataset> {
    let content = read_to_string(content_path)?;
    let mut ids: HashMap<String, usize> = HashMap::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut raw_labels: Vec<String> = Vec::new();
    let mut d: Option<usize> = None;

    for (lineno, line) in content.lines().enumerate() {
        let lineno = lineno + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() < 3 {
            return Err(parse_err(
                content_path,
                lineno,
                "expected <paper_id> <features...> <label>",
            ));
        }
        let width = fields.len() - 2;
        match d {
            None => d = Some(width),
            Some(expected) if expected != width => {
                return Err(parse_err(
                    content_path,
                    lineno,
                    format!("{width} feature fields, expected {expected}"),
                ))
            }
            Some(_) => {}
        }
        let row = fields[1..fields.len() - 1]
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(content_path, lineno, format!("bad feature {f:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let id = fields[0].to_string();
        if ids.insert(id.clone(), rows.len()).is_some() {
            return Err(parse_err(
                content_path,
                lineno,
                format!("duplicate paper id {id:?}"),
            ));
        }
        rows.push(row);
        raw_labels.push(fields[fields.len() - 1].to_string());
    }

    let n = rows.len();
    let d = d.unwrap_or(0);
    let class_names: Vec<String> = raw_labels
        .iter()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let labels = raw_labels
        .iter()
        .map(|l| class_names.binary_search(l).expect("label collected above"))
        .collect();
    let features = Array2::from_shape_vec((n, d), rows.into_iter().flatten().collect())
        .expect("rows have uniform width");

    let cites = read_to_string(cites_path)?;
    let mut edges = Vec::new();
    for (lineno, line) in cites.lines().enumerate() {
        let lineno = lineno + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 2 {
            return Err(parse_err(
                cites_path,
                lineno,
                "expected <cited_id> <citing_id>",
            ));
        }
        let mut pair = [0usize; 2];
        for (slot, id) in pair.iter_mut().zip(&fields) {
            *slot = *ids.get(*id).ok_or_else(|| Error::UnknownPaperId {
                path: cites_path.to_path_buf(),
                line: lineno,
                id: id.to_string(),
            })?;
        }
        edges.push((pair[0], pair[1], 1.0));
    }
    let graph = SparseGraph::from_edges(n, &edges)?;
    Dataset::new(features, labels, graph, class_names)
}

/// Loads `cora.content` and `cora.cites` from a directory.
pub fn load_cora_dir(dir: &Path) -> Result<Dataset> {
    load_cora(&dir.join("cora.content"), &dir.join("cora.cites"))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GenericFile {
    n: usize,
    d: usize,
    c: usize,
    features: Vec<Vec<f64>>,
    labels: Vec<usize>,
    edges: Vec<(usize, usize, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    class_names: Option<Vec<String>>,
}

/// Parses the generic JSON dataset format.
pub fn parse_generic(text: &str) -> Result<Dataset> {
    let file: GenericFile = serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
    if file.c < 2 {
        return Err(Error::Schema(format!(
            "c = {} (need at least 2 classes)",
            file.c
        )));
    }
    if file.features.len() != file.n || file.labels.len() != file.n {
        return Err(Error::Schema(format!(
            "n = {} but {} feature rows and {} labels",
            file.n,
            file.features.len(),
            file.labels.len()
        )));
    }
    if let Some(row) = file.features.iter().position(|r| r.len() != file.d) {
        return Err(Error::Schema(format!(
            "feature row {row} has {} entries, d = {}",
            file.features[row].len(),
            file.d
        )));
    }
    if let Some(pos) = file.labels.iter().position(|&l| l >= file.c) {
        return Err(Error::Schema(format!(
            "label {} at node {pos} is not < c = {}",
            file.labels[pos], file.c
        )));
    }
    let class_names = match file.class_names {
        Some(names) if names.len() == file.c => names,
        Some(names) => {
            return Err(Error::Schema(format!(
                "{} class names for c = {}",
                names.len(),
                file.c
            )))
        }
        None => (0..file.c).map(|m| format!("class_{m}")).collect(),
    };
    let features = Array2::from_shape_vec(
        (file.n, file.d),
        file.features.into_iter().flatten().collect(),
    )
    .expect("row widths validated");
    let graph = SparseGraph::from_edges(file.n, &file.edges)?;
    Dataset::new(features, file.labels, graph, class_names)
}

pub fn load_generic(path: &Path) -> Result<Dataset> {
    parse_generic(&read_to_string(path)?)
}

/// Canonical JSON serialization: compact, edges as `i < j` in sorted order.
pub fn to_generic_json(ds: &Dataset) -> String {
    let default_names = ds
        .class_names
        .iter()
        .enumerate()
        .all(|(m, name)| *name == format!("class_{m}"));
    let file = GenericFile {
        n: ds.n(),
        d: ds.d(),
        c: ds.num_classes(),
        features: ds.features.rows().into_iter().map(|r| r.to_vec()).collect(),
        labels: ds.labels.clone(),
        edges: ds.graph.edges().collect(),
        class_names: (!default_names).then(|| ds.class_names.clone()),
    };
    let mut s = serde_json::to_string(&file).expect("dataset serializes");
    s.push('\n');
    s
}

pub fn write_generic(ds: &Dataset, path: &Path) -> Result<()> {
    fs::write(path, to_generic_json(ds)).map_err(|e| Error::io(path, e))
}

/// Where a dataset comes from on the command line.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    /// Directory holding `cora.content` and `cora.cites`.
    Cora(PathBuf),
    /// Generic JSON file.
    Generic(PathBuf),
    /// Seeded synthetic benchmark (see [`synthetic`]).
    Synthetic(u64),
}

impl DatasetSource {
    pub fn parse(spec: &str) -> Self {
        if let Some(dir) = spec.strip_prefix("cora:") {
            DatasetSource::Cora(PathBuf::from(dir))
        } else if let Some(seed) = spec
            .strip_prefix("synthetic:")
            .and_then(|s| s.parse::<u64>().ok())
        {
            DatasetSource::Synthetic(seed)
        } else {
            DatasetSource::Generic(PathBuf::from(spec))
        }
    }

    pub fn load(&self) -> Result<Dataset> {
        match self {
            DatasetSource::Cora(dir) => load_cora_dir(dir),
            DatasetSource::Generic(path) => load_generic(path),
            DatasetSource::Synthetic(seed) => Ok(synthetic::citation_like(
                &synthetic::SyntheticSpec::default(),
                *seed,
            )),
        }
    }
}

/// Disjoint train/test node sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
    pub per_class_train: usize,
    pub seed: u64,
}

impl Split {
    /// Per-node membership flag.
    pub fn train_mask(&self, n: usize) -> Vec<bool> {
        let mut mask = vec![false; n];
        for &i in &self.train_ids {
            mask[i] = true;
        }
        mask
    }
}

/// Samples `per_class_train` train nodes per class without replacement;
/// every other node is a test node. Both lists are sorted.
pub fn make_split(ds: &Dataset, per_class_train: usize, seed: u64) -> Result<Split> {
    if per_class_train == 0 {
        return Err(Error::InvalidArgument(
            "per_class_train must be at least 1".into(),
        ));
    }
    let mut by_class = vec![Vec::new(); ds.num_classes()];
    for (i, &l) in ds.labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::with_capacity(per_class_train * by_class.len());
    for (class, mut members) in by_class.into_iter().enumerate() {
        if members.len() < per_class_train {
            return Err(Error::InfeasibleSplit {
                class,
                available: members.len(),
                requested: per_class_train,
            });
        }
        members.shuffle(&mut rng);
        train.extend_from_slice(&members[..per_class_train]);
    }
    train.sort_unstable();
    let mask = {
        let mut m = vec![false; ds.n()];
        train.iter().for_each(|&i| m[i] = true);
        m
    };
    let test = (0..ds.n()).filter(|&i| !mask[i]).collect();
    Ok(Split {
        train_ids: train,
        test_ids: test,
        per_class_train,
        seed,
    })
}

pub mod synthetic {
    //! Seeded citation-like benchmark: sparse binary bag-of-words features
    //! and a homophilous graph with a controllable share of noisy
    //! cross-class edges.

    use super::*;
    use rand::Rng;

    #[derive(Debug, Clone)]
    pub struct SyntheticSpec {
        pub nodes: usize,
        pub classes: usize,
        pub vocabulary: usize,
        /// Active words per node.
        pub words_per_node: usize,
        /// Share of a node's words drawn from its class topic.
        pub topic_share: f64,
        pub edges_per_node: usize,
        /// Probability that an edge ignores class membership.
        pub edge_noise: f64,
    }

    impl Default for SyntheticSpec {
        fn default() -> Self {
            Self {
                nodes: 700,
                classes: 7,
                vocabulary: 300,
                words_per_node: 18,
                topic_share: 0.3,
                edges_per_node: 2,
                edge_noise: 0.25,
            }
        }
    }

    pub fn citation_like(spec: &SyntheticSpec, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = spec.nodes;
        let c = spec.classes;
        let labels: Vec<usize> = (0..n).map(|i| i % c).collect();
        let topic_width = spec.vocabulary / c;
        let mut features = Array2::<f64>::zeros((n, spec.vocabulary));
        for (i, &l) in labels.iter().enumerate() {
            for _ in 0..spec.words_per_node {
                let w = if rng.random::<f64>() < spec.topic_share {
                    l * topic_width + rng.random_range(0..topic_width)
                } else {
                    rng.random_range(0..spec.vocabulary)
                };
                features[[i, w]] = 1.0;
            }
        }
        let mut edges = Vec::with_capacity(n * spec.edges_per_node);
        for (i, &label) in labels.iter().enumerate() {
            for _ in 0..spec.edges_per_node {
                let j = if rng.random::<f64>() < spec.edge_noise {
                    rng.random_range(0..n)
                } else {
                    label + c * rng.random_range(0..n.div_ceil(c).saturating_sub(1).max(1))
                };
                if j < n {
                    edges.push((i, j, 1.0));
                }
            }
        }
        let graph = SparseGraph::from_edges(n, &edges).expect("indices in range");
        let class_names = (0..c).map(|m| format!("topic_{m}")).collect();
        Dataset::new(features, labels, graph, class_names).expect("consistent by construction")
    }
}
