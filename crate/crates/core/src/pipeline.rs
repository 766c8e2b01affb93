//! The multi-level method: score nodes by spectral distortion, classify the
//! most robust share with a GCN on a graph built from those nodes alone, and
//! assign the remainder to the nearest class centroid.

use std::io::Write;
use std::time::Instant;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Split};
use crate::error::{Error, Result};
use crate::gcn::{self, GcnHyperParams, GcnModel, SparseRows};
use crate::graph::{laplacian, NormalizedAdjacency, Propagation, SparseGraph};
use crate::knn::{knn_graph, knn_query, KnnConfig, Metric};
use crate::spade::{select_robust, spade_scores_with, Aggregation, RobustPartition, SpadeScores};
use crate::spectral::{pencil_topk_with, EigenSubspace, PencilOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSpace {
    #[default]
    RawFeatures,
    Embeddings,
}

impl std::str::FromStr for FeatureSpace {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw_features" | "raw" => Ok(FeatureSpace::RawFeatures),
            "embeddings" => Ok(FeatureSpace::Embeddings),
            other => Err(Error::InvalidArgument(format!("unknown space {other:?}"))),
        }
    }
}

/// Which graph plays the role of the input graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphSource {
    #[default]
    GivenGraph,
    KnnFeatures,
}

impl std::str::FromStr for GraphSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "given_graph" | "given" => Ok(GraphSource::GivenGraph),
            "knn_features" | "knn" => Ok(GraphSource::KnnFeatures),
            other => Err(Error::InvalidArgument(format!(
                "unknown graph source {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub robust_fraction: f64,
    pub knn_k: usize,
    /// Eigensubspace dimension; `None` means the number of classes.
    pub spade_k: Option<usize>,
    pub metric: Metric,
    pub subgraph_space: FeatureSpace,
    pub centroid_space: FeatureSpace,
    pub g_input_source: GraphSource,
    /// Scale each feature row to unit L1 norm before anything else.
    pub normalize_features: bool,
    pub aggregation: Aggregation,
    pub pencil: PencilOptions,
    pub gcn: GcnHyperParams,
    /// Seeds GCN initialization and dropout for both stages.
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            robust_fraction: 0.40,
            knn_k: 10,
            spade_k: None,
            metric: Metric::Euclidean,
            subgraph_space: FeatureSpace::RawFeatures,
            centroid_space: FeatureSpace::RawFeatures,
            g_input_source: GraphSource::GivenGraph,
            normalize_features: true,
            aggregation: Aggregation::Mean,
            pencil: PencilOptions::default(),
            gcn: GcnHyperParams::default(),
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.robust_fraction > 0.0 && self.robust_fraction <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "robust fraction {} outside (0, 1]",
                self.robust_fraction
            )));
        }
        if self.spade_k == Some(0) {
            return Err(Error::InvalidArgument("spade_k must be at least 1".into()));
        }
        if self.knn_k == 0 {
            return Err(Error::InvalidArgument("knn_k must be at least 1".into()));
        }
        Ok(())
    }

    pub fn gcn_hp(&self) -> GcnHyperParams {
        GcnHyperParams {
            seed: self.seed,
            ..self.gcn
        }
    }

    pub fn spade_k_for(&self, ds: &Dataset) -> usize {
        self.spade_k.unwrap_or(ds.num_classes())
    }
}

/// Feature matrix and input graph as the pipeline sees them.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub features: Array2<f64>,
    pub sparse: SparseRows,
    pub g_input: SparseGraph,
}

pub fn prepare(ds: &Dataset, cfg: &PipelineConfig) -> Result<Prepared> {
    let features = if cfg.normalize_features {
        ds.row_normalized_features()
    } else {
        ds.features.clone()
    };
    let g_input = match cfg.g_input_source {
        GraphSource::GivenGraph => ds.graph.clone(),
        GraphSource::KnnFeatures => {
            knn_graph(features.view(), KnnConfig::new(cfg.knn_k, cfg.metric))?
        }
    };
    let sparse = SparseRows::from_dense(features.view());
    Ok(Prepared {
        features,
        sparse,
        g_input,
    })
}

fn train_and_run(
    graph: &SparseGraph,
    x: &SparseRows,
    labels: &[usize],
    train_ids: &[usize],
    classes: usize,
    hp: GcnHyperParams,
) -> Result<(GcnModel, NormalizedAdjacency, gcn::Forward)> {
    let a_hat = NormalizedAdjacency::new(graph, hp.propagation);
    let model = GcnModel::init(x.ncols(), classes, hp)?;
    let (model, _trace) = gcn::train(&model, &a_hat, x, labels, train_ids)?;
    let fwd = gcn::forward(&model, &a_hat, x)?;
    Ok((model, a_hat, fwd))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineResult {
    pub accuracy: f64,
    pub predictions: Vec<usize>,
}

/// GCN on the full given graph, evaluated on the test nodes.
pub fn run_baseline(ds: &Dataset, split: &Split, cfg: &PipelineConfig) -> Result<BaselineResult> {
    let prepared = prepare(ds, cfg)?;
    baseline_from(ds, split, cfg, &prepared)
}

fn baseline_from(
    ds: &Dataset,
    split: &Split,
    cfg: &PipelineConfig,
    prepared: &Prepared,
) -> Result<BaselineResult> {
    let (_, _, fwd) = train_and_run(
        &ds.graph,
        &prepared.sparse,
        &ds.labels,
        &split.train_ids,
        ds.num_classes(),
        cfg.gcn_hp(),
    )?;
    let predictions = gcn::argmax_rows(fwd.logits.view());
    Ok(BaselineResult {
        accuracy: gcn::accuracy(&predictions, &ds.labels, &split.test_ids),
        predictions,
    })
}

/// Everything the scoring stage produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageOne {
    /// Hidden-layer embeddings of the GCN trained on the input graph.
    pub embeddings: Array2<f64>,
    /// That GCN's predictions.
    pub predictions: Vec<usize>,
    pub g_output_edges: usize,
    pub eigen: EigenSubspace,
    pub scores: SpadeScores,
}

/// Output graph, pencil eigenpairs and SPADE scores for given embeddings.
pub fn score_embeddings(
    g_input: &SparseGraph,
    embeddings: ArrayView2<f64>,
    spade_k: usize,
    cfg: &PipelineConfig,
) -> Result<(SparseGraph, EigenSubspace, SpadeScores)> {
    let g_output = knn_graph(embeddings, KnnConfig::new(cfg.knn_k, cfg.metric))?;
    let eigen = pencil_topk_with(
        &laplacian(g_input),
        &laplacian(&g_output),
        spade_k,
        cfg.pencil,
    )?;
    let scores = spade_scores_with(eigen.v_k.view(), g_input, cfg.aggregation)?;
    Ok((g_output, eigen, scores))
}

/// GCN on the input graph → embeddings → kNN output graph → pencil
/// eigenpairs → SPADE scores.
pub fn evaluate_robustness(ds: &Dataset, split: &Split, cfg: &PipelineConfig) -> Result<StageOne> {
    cfg.validate()?;
    let prepared = prepare(ds, cfg)?;
    stage_one_from(ds, split, cfg, &prepared)
}

fn stage_one_from(
    ds: &Dataset,
    split: &Split,
    cfg: &PipelineConfig,
    prepared: &Prepared,
) -> Result<StageOne> {
    let (_, _, fwd) = train_and_run(
        &prepared.g_input,
        &prepared.sparse,
        &ds.labels,
        &split.train_ids,
        ds.num_classes(),
        cfg.gcn_hp(),
    )?;
    let (g_output, eigen, scores) = score_embeddings(
        &prepared.g_input,
        fwd.hidden.view(),
        cfg.spade_k_for(ds),
        cfg,
    )?;
    Ok(StageOne {
        predictions: gcn::argmax_rows(fwd.logits.view()),
        embeddings: fwd.hidden,
        g_output_edges: g_output.edge_count(),
        eigen,
        scores,
    })
}

/// Class means; a class without members has no centroid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Centroids {
    pub rows: Vec<Option<Vec<f64>>>,
    pub counts: Vec<usize>,
}

impl Centroids {
    pub fn undefined_classes(&self) -> Vec<usize> {
        (0..self.rows.len())
            .filter(|&m| self.rows[m].is_none())
            .collect()
    }
}

pub fn compute_centroids(
    vectors: ArrayView2<f64>,
    class_assignments: &[usize],
    classes: usize,
) -> Centroids {
    let width = vectors.ncols();
    let mut sums = vec![vec![0.0; width]; classes];
    let mut counts = vec![0usize; classes];
    for (row, &c) in vectors.rows().into_iter().zip(class_assignments) {
        counts[c] += 1;
        for (s, &v) in sums[c].iter_mut().zip(row) {
            *s += v;
        }
    }
    let rows = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &cnt)| (cnt > 0).then(|| s.into_iter().map(|v| v / cnt as f64).collect()))
        .collect();
    Centroids { rows, counts }
}

/// Index of the closest defined centroid (Euclidean); ties go to the lowest
/// class index.
pub fn assign_nearest(centroids: &Centroids, vector: &[f64]) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (m, row) in centroids.rows.iter().enumerate() {
        let Some(row) = row else { continue };
        let d: f64 = row.iter().zip(vector).map(|(a, b)| (a - b) * (a - b)).sum();
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((m, d));
        }
    }
    best.map(|(m, _)| m).ok_or(Error::NoCentroids)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionSource {
    Gnn,
    Centroid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodePrediction {
    pub node_id: usize,
    pub is_train: bool,
    pub is_robust: bool,
    pub spade_score: f64,
    pub pred: usize,
    pub label: usize,
    pub source: PredictionSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accuracies {
    pub baseline: f64,
    /// Stage-two GCN on robust test nodes.
    pub robust_subset: Option<f64>,
    /// Centroid assignments on non-robust test nodes.
    pub rest: Option<f64>,
    /// All test nodes.
    pub combined: f64,
    /// Baseline predictions restricted to robust test nodes.
    pub baseline_on_robust: Option<f64>,
    pub baseline_on_rest: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub protocol: String,
    pub per_class_train: usize,
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
}

impl SplitSummary {
    pub fn of(split: &Split) -> Self {
        Self {
            protocol: "per-class random train sample, all other nodes test".into(),
            per_class_train: split.per_class_train,
            seed: split.seed,
            n_train: split.train_ids.len(),
            n_test: split.test_ids.len(),
        }
    }
}

/// Wall-clock seconds per stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub baseline_s: f64,
    pub robustness_s: f64,
    pub subgraph_s: f64,
    pub stage_two_s: f64,
    pub assignment_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub config: PipelineConfig,
    pub split: SplitSummary,
    pub spade_k: usize,
    pub eigenvalues: Vec<f64>,
    pub robust_count: usize,
    pub rest_count: usize,
    pub robust_test_count: usize,
    pub rest_test_count: usize,
    /// kNN degree actually used for the robust subgraph.
    pub subgraph_k: usize,
    pub subgraph_edges: usize,
    pub centroid_counts: Vec<usize>,
    pub accuracy: Accuracies,
    /// Per-node dump; written as CSV, not part of the JSON report.
    #[serde(skip)]
    pub predictions: Vec<NodePrediction>,
    pub timing: StageTiming,
}

impl PipelineReport {
    /// Writes `node_id,split,is_robust,spade_score,pred,label,source`.
    pub fn write_predictions_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "node_id,split,is_robust,spade_score,pred,label,source")?;
        for p in &self.predictions {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                p.node_id,
                if p.is_train { "train" } else { "test" },
                p.is_robust,
                p.spade_score,
                p.pred,
                p.label,
                match p.source {
                    PredictionSource::Gnn => "gnn",
                    PredictionSource::Centroid => "centroid",
                }
            )?;
        }
        Ok(())
    }
}

/// Baseline and scoring results shared by every robust fraction.
#[derive(Debug, Clone)]
pub struct SharedStages {
    pub prepared: Prepared,
    pub baseline: BaselineResult,
    pub stage_one: StageOne,
    pub timing: StageTiming,
}

/// Runs the scoring stage and the baseline. When the input graph is the
/// given graph the stage-one GCN is the baseline GCN and is trained once.
pub fn run_shared_stages(
    ds: &Dataset,
    split: &Split,
    cfg: &PipelineConfig,
) -> Result<SharedStages> {
    cfg.validate()?;
    let prepared = prepare(ds, cfg)?;
    let mut timing = StageTiming::default();
    let t = Instant::now();
    let stage_one = stage_one_from(ds, split, cfg, &prepared)?;
    timing.robustness_s = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let baseline = match cfg.g_input_source {
        GraphSource::GivenGraph => BaselineResult {
            accuracy: gcn::accuracy(&stage_one.predictions, &ds.labels, &split.test_ids),
            predictions: stage_one.predictions.clone(),
        },
        GraphSource::KnnFeatures => baseline_from(ds, split, cfg, &prepared)?,
    };
    timing.baseline_s = t.elapsed().as_secs_f64();
    Ok(SharedStages {
        prepared,
        baseline,
        stage_one,
        timing,
    })
}

/// The full method for one robust fraction.
pub fn run_robust_pipeline(
    ds: &Dataset,
    split: &Split,
    cfg: &PipelineConfig,
) -> Result<PipelineReport> {
    let shared = run_shared_stages(ds, split, cfg)?;
    let mut report = robust_stage(
        ds,
        split,
        cfg,
        &shared.prepared,
        &shared.baseline,
        &shared.stage_one,
    )?;
    report.timing.baseline_s = shared.timing.baseline_s;
    report.timing.robustness_s = shared.timing.robustness_s;
    Ok(report)
}

fn space_matrix<'a>(
    space: FeatureSpace,
    prepared: &'a Prepared,
    stage_one: &'a StageOne,
) -> ArrayView2<'a, f64> {
    match space {
        FeatureSpace::RawFeatures => prepared.features.view(),
        FeatureSpace::Embeddings => stage_one.embeddings.view(),
    }
}

/// Robust selection, subgraph GCN, centroids and nearest-centroid assignment
/// on top of precomputed baseline and scoring results.
pub fn robust_stage(
    ds: &Dataset,
    split: &Split,
    cfg: &PipelineConfig,
    prepared: &Prepared,
    baseline: &BaselineResult,
    stage_one: &StageOne,
) -> Result<PipelineReport> {
    cfg.validate()?;
    let n = ds.n();
    let classes = ds.num_classes();
    let train_mask = split.train_mask(n);
    let partition: RobustPartition = select_robust(&stage_one.scores, cfg.robust_fraction)?;
    let robust = &partition.robust_ids;

    let missing: Vec<usize> = {
        let mut has = vec![false; classes];
        for &i in robust.iter().filter(|&&i| train_mask[i]) {
            has[ds.labels[i]] = true;
        }
        (0..classes).filter(|&m| !has[m]).collect()
    };
    if !missing.is_empty() {
        return Err(Error::MissingRobustClass { classes: missing });
    }

    // Stage two: kNN graph over the robust nodes, fresh GCN on it.
    let t = Instant::now();
    let sub_space = space_matrix(cfg.subgraph_space, prepared, stage_one).select(Axis(0), robust);
    let subgraph_k = cfg.knn_k.min(robust.len().saturating_sub(1));
    let subgraph = if subgraph_k == 0 {
        SparseGraph::empty(robust.len())
    } else {
        knn_graph(sub_space.view(), KnnConfig::new(subgraph_k, cfg.metric))?
    };
    let subgraph_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let sub_features = prepared.features.select(Axis(0), robust);
    let sub_sparse = SparseRows::from_dense(sub_features.view());
    let sub_labels: Vec<usize> = robust.iter().map(|&i| ds.labels[i]).collect();
    let sub_train: Vec<usize> = (0..robust.len())
        .filter(|&t| train_mask[robust[t]])
        .collect();
    let (model, sub_a_hat, fwd) = train_and_run(
        &subgraph,
        &sub_sparse,
        &sub_labels,
        &sub_train,
        classes,
        cfg.gcn_hp(),
    )?;
    let sub_pred = gcn::argmax_rows(fwd.logits.view());
    let stage_two_s = t.elapsed().as_secs_f64();

    // Centroids from robust nodes: true labels where known, else predictions.
    let t = Instant::now();
    let centroid_labels: Vec<usize> = (0..robust.len())
        .map(|t| {
            if train_mask[robust[t]] {
                sub_labels[t]
            } else {
                sub_pred[t]
            }
        })
        .collect();
    let rest = &partition.rest_ids;
    let (robust_vecs, rest_vecs) = match cfg.centroid_space {
        FeatureSpace::RawFeatures => (
            prepared.features.select(Axis(0), robust),
            prepared.features.select(Axis(0), rest),
        ),
        FeatureSpace::Embeddings => (
            fwd.hidden.clone(),
            embed_appended(
                &model,
                &subgraph,
                &sub_a_hat,
                &sub_features,
                prepared,
                &sub_space,
                stage_one,
                rest,
                subgraph_k.max(1),
                cfg,
            )?,
        ),
    };
    let centroids = compute_centroids(robust_vecs.view(), &centroid_labels, classes);
    let undefined = centroids.undefined_classes();
    if !undefined.is_empty() {
        return Err(Error::MissingRobustClass { classes: undefined });
    }
    let mut pred = vec![0usize; n];
    let mut source = vec![PredictionSource::Gnn; n];
    for (t, &i) in robust.iter().enumerate() {
        pred[i] = sub_pred[t];
    }
    for (row, &i) in rest_vecs.rows().into_iter().zip(rest) {
        pred[i] = assign_nearest(
            &centroids,
            row.as_slice().expect("owned rows are contiguous"),
        )?;
        source[i] = PredictionSource::Centroid;
    }
    let assignment_s = t.elapsed().as_secs_f64();

    let robust_mask = partition.robust_mask(n);
    let (robust_test, rest_test): (Vec<usize>, Vec<usize>) =
        split.test_ids.iter().partition(|&&i| robust_mask[i]);
    let opt_acc =
        |p: &[usize], ids: &[usize]| (!ids.is_empty()).then(|| gcn::accuracy(p, &ds.labels, ids));
    let accuracy = Accuracies {
        baseline: baseline.accuracy,
        robust_subset: opt_acc(&pred, &robust_test),
        rest: opt_acc(&pred, &rest_test),
        combined: gcn::accuracy(&pred, &ds.labels, &split.test_ids),
        baseline_on_robust: opt_acc(&baseline.predictions, &robust_test),
        baseline_on_rest: opt_acc(&baseline.predictions, &rest_test),
    };
    let predictions = (0..n)
        .map(|i| NodePrediction {
            node_id: i,
            is_train: train_mask[i],
            is_robust: robust_mask[i],
            spade_score: stage_one.scores.scores[i],
            pred: pred[i],
            label: ds.labels[i],
            source: source[i],
        })
        .collect();

    Ok(PipelineReport {
        config: cfg.clone(),
        split: SplitSummary::of(split),
        spade_k: stage_one.eigen.k(),
        eigenvalues: stage_one.eigen.eigenvalues.clone(),
        robust_count: robust.len(),
        rest_count: rest.len(),
        robust_test_count: robust_test.len(),
        rest_test_count: rest_test.len(),
        subgraph_k,
        subgraph_edges: subgraph.edge_count(),
        centroid_counts: centroids.counts,
        accuracy,
        predictions,
        timing: StageTiming {
            subgraph_s,
            stage_two_s,
            assignment_s,
            ..StageTiming::default()
        },
    })
}

/// Stage-two hidden embeddings for non-robust nodes.
///
/// Each such node is attached to its nearest robust nodes (in the subgraph
/// space) one-way: it aggregates from them, they are unaffected. The
/// normalization uses the node's own degree `k + 1` and the robust nodes'
/// subgraph degrees.
#[allow(clippy::too_many_arguments)]
fn embed_appended(
    model: &GcnModel,
    subgraph: &SparseGraph,
    sub_a_hat: &NormalizedAdjacency,
    sub_features: &Array2<f64>,
    prepared: &Prepared,
    sub_space: &Array2<f64>,
    stage_one: &StageOne,
    rest: &[usize],
    k: usize,
    cfg: &PipelineConfig,
) -> Result<Array2<f64>> {
    let mut out = Array2::<f64>::zeros((rest.len(), model.hidden()));
    if rest.is_empty() {
        return Ok(out);
    }
    let rest_space = space_matrix(cfg.subgraph_space, prepared, stage_one).select(Axis(0), rest);
    let lists = knn_query(
        sub_space.view(),
        rest_space.view(),
        KnnConfig::new(k, cfg.metric),
    )?;
    let xw_robust = sub_features.dot(&model.w0);
    let xw_rest = prepared.features.select(Axis(0), rest).dot(&model.w0);
    let own_deg = lists.first().map_or(0, |l| l.len()) as f64 + 1.0;
    for (r, nbrs) in lists.iter().enumerate() {
        let mut acc = match sub_a_hat.kind() {
            Propagation::Symmetric => xw_rest.row(r).mapv(|v| v / own_deg),
            Propagation::RawSum => xw_rest.row(r).to_owned(),
        };
        for &j in nbrs {
            let coef = match sub_a_hat.kind() {
                Propagation::Symmetric => {
                    1.0 / (own_deg * (subgraph.weighted_degree(j) + 1.0)).sqrt()
                }
                Propagation::RawSum => 1.0,
            };
            acc.scaled_add(coef, &xw_robust.row(j));
        }
        out.row_mut(r).assign(&acc.mapv(|v| v.max(0.0)));
    }
    Ok(out)
}
