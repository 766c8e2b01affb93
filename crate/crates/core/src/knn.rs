//! Exact k-nearest-neighbor graphs.

use std::cmp::Ordering;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SparseGraph;
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Euclidean,
    /// `1 - cos(a, b)`; a zero vector is at distance 1 from everything.
    Cosine,
}

impl std::str::FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(Metric::Euclidean),
            "cosine" => Ok(Metric::Cosine),
            other => Err(Error::InvalidArgument(format!("unknown metric {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnnConfig {
    pub k: usize,
    pub metric: Metric,
}

impl KnnConfig {
    pub fn new(k: usize, metric: Metric) -> Self {
        Self { k, metric }
    }
}

fn squared_euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn cosine_distance(a: &[f64], b: &[f64], norm_a: f64, norm_b: f64) -> f64 {
    if norm_a == 0.0 || norm_b == 0.0 {
        return 1.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    1.0 - dot / (norm_a * norm_b)
}

/// The `k` nearest other rows of `points` for every row, nearest first.
///
/// Distance ties go to the smaller node index.
pub fn knn_lists(points: ArrayView2<f64>, cfg: KnnConfig) -> Result<Vec<Vec<usize>>> {
    let n = points.nrows();
    if n < 2 || cfg.k == 0 || cfg.k >= n {
        return Err(Error::KOutOfRange {
            k: cfg.k,
            constraint: format!("1 <= k < N = {n}"),
        });
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let owned = points.as_standard_layout();
    let rows = row_slices(&owned);
    let norms: Vec<f64> = match cfg.metric {
        Metric::Cosine => rows
            .iter()
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect(),
        Metric::Euclidean => Vec::new(),
    };
    let k = cfg.k;
    let lists = par::map_range(n, |i| {
        let mut cand: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| {
                let d = match cfg.metric {
                    Metric::Euclidean => squared_euclidean(rows[i], rows[j]),
                    Metric::Cosine => cosine_distance(rows[i], rows[j], norms[i], norms[j]),
                };
                (d, j)
            })
            .collect();
        let by_dist = |a: &(f64, usize), b: &(f64, usize)| -> Ordering {
            a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
        };
        if k < cand.len() {
            cand.select_nth_unstable_by(k - 1, by_dist);
            cand.truncate(k);
        }
        cand.sort_by(by_dist);
        cand.into_iter().map(|(_, j)| j).collect::<Vec<_>>()
    });
    Ok(lists)
}

/// Exact kNN graph with union symmetrization and unit weights.
pub fn knn_graph(points: ArrayView2<f64>, cfg: KnnConfig) -> Result<SparseGraph> {
    let lists = knn_lists(points, cfg)?;
    let edges: Vec<_> = lists
        .iter()
        .enumerate()
        .flat_map(|(i, nbrs)| nbrs.iter().map(move |&j| (i, j, 1.0)))
        .collect();
    SparseGraph::from_edges(points.nrows(), &edges)
}

/// For every row of `queries`, the `k` nearest rows of `reference`
/// (nearest first, ties by smaller reference index).
pub fn knn_query(
    reference: ArrayView2<f64>,
    queries: ArrayView2<f64>,
    cfg: KnnConfig,
) -> Result<Vec<Vec<usize>>> {
    let m = reference.nrows();
    if cfg.k == 0 || cfg.k > m {
        return Err(Error::KOutOfRange {
            k: cfg.k,
            constraint: format!("1 <= k <= reference size {m}"),
        });
    }
    if reference.ncols() != queries.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "reference width {}, query width {}",
            reference.ncols(),
            queries.ncols()
        )));
    }
    if reference
        .iter()
        .chain(queries.iter())
        .any(|v| !v.is_finite())
    {
        return Err(Error::NonFinite);
    }
    let reference = reference.as_standard_layout();
    let queries = queries.as_standard_layout();
    let ref_rows = row_slices(&reference);
    let query_rows = row_slices(&queries);
    let norm = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>().sqrt();
    let ref_norms: Vec<f64> = ref_rows.iter().map(|r| norm(r)).collect();
    Ok(par::map_slice(&query_rows, |qs| {
        let qn = norm(qs);
        let mut cand: Vec<(f64, usize)> = ref_rows
            .iter()
            .enumerate()
            .map(|(j, r)| {
                let d = match cfg.metric {
                    Metric::Euclidean => squared_euclidean(qs, r),
                    Metric::Cosine => cosine_distance(qs, r, qn, ref_norms[j]),
                };
                (d, j)
            })
            .collect();
        cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        cand.truncate(cfg.k);
        cand.into_iter().map(|(_, j)| j).collect()
    }))
}

fn row_slices<'a>(x: &'a ndarray::CowArray<'_, f64, ndarray::Ix2>) -> Vec<&'a [f64]> {
    x.rows()
        .into_iter()
        .map(|r| r.to_slice().expect("standard layout rows are contiguous"))
        .collect()
}
