//! Per-node SPADE vulnerability scores and robust-subset selection.
//!
//! `spade(i)` is the mean, over the input-graph neighbors `j` of `i`, of
//! `‖V_k^T (e_i - e_j)‖²`, i.e. the squared distance between rows `i` and
//! `j` of the eigensubspace matrix. Larger means more distortion between
//! input and output graphs around `i`.

use std::io::Write;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SparseGraph;
use crate::par;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpadeScores {
    pub scores: Vec<f64>,
    /// Node indices by ascending score, ties by index.
    pub ranking: Vec<usize>,
    /// Nodes without input-graph neighbors; their score is 0.
    pub isolated: Vec<bool>,
}

impl SpadeScores {
    pub fn from_scores(scores: Vec<f64>, isolated: Vec<bool>) -> Self {
        let mut ranking: Vec<usize> = (0..scores.len()).collect();
        ranking.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
        Self {
            scores,
            ranking,
            isolated,
        }
    }

    pub fn n(&self) -> usize {
        self.scores.len()
    }

    /// Position of every node in `ranking`.
    pub fn ranks(&self) -> Vec<usize> {
        let mut ranks = vec![0; self.n()];
        for (r, &i) in self.ranking.iter().enumerate() {
            ranks[i] = r;
        }
        ranks
    }

    /// Writes `node_id,score,rank,is_isolated`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "node_id,score,rank,is_isolated")?;
        let ranks = self.ranks();
        for (i, ((score, rank), isolated)) in self
            .scores
            .iter()
            .zip(&ranks)
            .zip(&self.isolated)
            .enumerate()
        {
            writeln!(out, "{i},{score},{rank},{isolated}")?;
        }
        Ok(())
    }
}

/// Optional edge weighting for the neighbor average.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Plain mean over neighbors.
    #[default]
    Mean,
    /// Mean weighted by input-graph edge weights.
    WeightedMean,
}

pub fn spade_scores(vk: ArrayView2<f64>, g_in: &SparseGraph) -> Result<SpadeScores> {
    spade_scores_with(vk, g_in, Aggregation::Mean)
}

pub fn spade_scores_with(
    vk: ArrayView2<f64>,
    g_in: &SparseGraph,
    aggregation: Aggregation,
) -> Result<SpadeScores> {
    if vk.nrows() != g_in.n() {
        return Err(Error::DimensionMismatch(format!(
            "V_k has {} rows, G_in has {} nodes",
            vk.nrows(),
            g_in.n()
        )));
    }
    let per_node = par::map_range(g_in.n(), |i| {
        let nbrs = g_in.neighbors(i);
        if nbrs.is_empty() {
            return (0.0, true);
        }
        let row_i = vk.row(i);
        let mut total = 0.0;
        let mut mass = 0.0;
        for (&j, &w) in nbrs.iter().zip(g_in.neighbor_weights(i)) {
            let d: f64 = row_i
                .iter()
                .zip(vk.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            let w = match aggregation {
                Aggregation::Mean => 1.0,
                Aggregation::WeightedMean => w,
            };
            total += w * d;
            mass += w;
        }
        (total / mass, false)
    });
    let (scores, isolated) = per_node.into_iter().unzip();
    Ok(SpadeScores::from_scores(scores, isolated))
}

/// Split of the nodes into the lowest-score prefix and the rest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustPartition {
    /// Sorted ascending by node index.
    pub robust_ids: Vec<usize>,
    /// Sorted ascending by node index.
    pub rest_ids: Vec<usize>,
    pub fraction: f64,
}

impl RobustPartition {
    pub fn robust_mask(&self, n: usize) -> Vec<bool> {
        let mut mask = vec![false; n];
        for &i in &self.robust_ids {
            mask[i] = true;
        }
        mask
    }
}

/// Number of robust nodes for a fraction: `round(fraction * n)`, halves away
/// from zero.
pub fn robust_count(fraction: f64, n: usize) -> usize {
    (fraction * n as f64).round() as usize
}

pub fn select_robust(s: &SpadeScores, fraction: f64) -> Result<RobustPartition> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "robust fraction {fraction} outside (0, 1]"
        )));
    }
    let count = robust_count(fraction, s.n()).min(s.n());
    let mut robust_ids = s.ranking[..count].to_vec();
    let mut rest_ids = s.ranking[count..].to_vec();
    robust_ids.sort_unstable();
    rest_ids.sort_unstable();
    Ok(RobustPartition {
        robust_ids,
        rest_ids,
        fraction,
    })
}
