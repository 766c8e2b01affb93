//! Sparse undirected graphs, Laplacians and GCN propagation operators.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

/// Undirected weighted graph in compressed adjacency form.
///
/// Both directions of every edge are stored with equal weight. Neighbor
/// lists are sorted by node index and free of duplicates and self-loops.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGraph {
    n: usize,
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    weights: Vec<f64>,
}

impl SparseGraph {
    /// Builds a symmetric graph from an edge list.
    ///
    /// Self-loops are dropped and repeated pairs (in either orientation) are
    /// merged by keeping the maximum weight.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut directed = Vec::with_capacity(edges.len() * 2);
        for &(i, j, w) in edges {
            for index in [i, j] {
                if index >= n {
                    return Err(Error::NodeOutOfRange { index, n });
                }
            }
            if w.is_nan() || w <= 0.0 || w.is_infinite() {
                return Err(Error::BadWeight { i, j, weight: w });
            }
            if i != j {
                directed.push((i, j, w));
                directed.push((j, i, w));
            }
        }
        directed.sort_by_key(|e| (e.0, e.1));

        let mut offsets = vec![0usize; n + 1];
        let mut neighbors = Vec::with_capacity(directed.len());
        let mut weights: Vec<f64> = Vec::with_capacity(directed.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, w) in directed {
            if last == Some((i, j)) {
                let slot = weights.last_mut().expect("merged edge has a predecessor");
                *slot = slot.max(w);
                continue;
            }
            last = Some((i, j));
            offsets[i + 1] += 1;
            neighbors.push(j);
            weights.push(w);
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        Ok(Self {
            n,
            offsets,
            neighbors,
            weights,
        })
    }

    /// Graph with `n` nodes and no edges.
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            offsets: vec![0; n + 1],
            neighbors: Vec::new(),
            weights: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of undirected edges.
    pub fn edge_count(&self) -> usize {
        self.neighbors.len() / 2
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn neighbor_weights(&self, i: usize) -> &[f64] {
        &self.weights[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn weighted_degree(&self, i: usize) -> f64 {
        self.neighbor_weights(i).iter().sum()
    }

    /// Weight of edge (i, j), if present.
    pub fn weight(&self, i: usize, j: usize) -> Option<f64> {
        let nbrs = self.neighbors(i);
        nbrs.binary_search(&j)
            .ok()
            .map(|pos| self.neighbor_weights(i)[pos])
    }

    /// Undirected edges as `(i, j, w)` with `i < j`, in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| {
            self.neighbors(i)
                .iter()
                .zip(self.neighbor_weights(i))
                .filter(move |(&j, _)| j > i)
                .map(move |(&j, &w)| (i, j, w))
        })
    }

    /// True when every stored edge has a mirror of equal weight.
    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| {
            self.neighbors(i)
                .iter()
                .zip(self.neighbor_weights(i))
                .all(|(&j, &w)| j != i && self.weight(j, i) == Some(w))
        })
    }

    /// Relabels nodes: node `i` becomes `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n {
            return Err(Error::DimensionMismatch(format!(
                "permutation of length {} for graph with {} nodes",
                perm.len(),
                self.n
            )));
        }
        let edges: Vec<_> = self
            .edges()
            .map(|(i, j, w)| (perm[i], perm[j], w))
            .collect();
        Self::from_edges(self.n, &edges)
    }

    /// Subgraph induced by `nodes`; node `nodes[t]` becomes `t`.
    pub fn induced_subgraph(&self, nodes: &[usize]) -> Result<Self> {
        let mut local = vec![usize::MAX; self.n];
        for (t, &v) in nodes.iter().enumerate() {
            if v >= self.n {
                return Err(Error::NodeOutOfRange {
                    index: v,
                    n: self.n,
                });
            }
            local[v] = t;
        }
        let mut edges = Vec::new();
        for (t, &v) in nodes.iter().enumerate() {
            for (&u, &w) in self.neighbors(v).iter().zip(self.neighbor_weights(v)) {
                let s = local[u];
                if s != usize::MAX && s > t {
                    edges.push((t, s, w));
                }
            }
        }
        Self::from_edges(nodes.len(), &edges)
    }

    /// Dense weighted adjacency matrix.
    pub fn to_dense_adjacency(&self) -> Array2<f64> {
        let mut a = Array2::zeros((self.n, self.n));
        for i in 0..self.n {
            for (&j, &w) in self.neighbors(i).iter().zip(self.neighbor_weights(i)) {
                a[[i, j]] = w;
            }
        }
        a
    }
}

/// Combinatorial Laplacian `L = D - W` in sparse form.
#[derive(Debug, Clone)]
pub struct Laplacian {
    degrees: Vec<f64>,
    graph: SparseGraph,
}

impl Laplacian {
    pub fn new(g: &SparseGraph) -> Self {
        let degrees = (0..g.n()).map(|i| g.weighted_degree(i)).collect();
        Self {
            degrees,
            graph: g.clone(),
        }
    }

    pub fn n(&self) -> usize {
        self.graph.n()
    }

    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    pub fn graph(&self) -> &SparseGraph {
        &self.graph
    }

    /// `L x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(
            x.len(),
            self.n(),
            "vector length must match Laplacian order"
        );
        (0..self.n())
            .map(|i| {
                let off: f64 = self
                    .graph
                    .neighbors(i)
                    .iter()
                    .zip(self.graph.neighbor_weights(i))
                    .map(|(&j, &w)| w * x[j])
                    .sum();
                self.degrees[i] * x[i] - off
            })
            .collect()
    }

    /// `x^T L x`, evaluated edge by edge.
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        self.graph
            .edges()
            .map(|(i, j, w)| w * (x[i] - x[j]).powi(2))
            .sum()
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let n = self.n();
        let mut l = Array2::zeros((n, n));
        for i in 0..n {
            l[[i, i]] = self.degrees[i];
            for (&j, &w) in self
                .graph
                .neighbors(i)
                .iter()
                .zip(self.graph.neighbor_weights(i))
            {
                l[[i, j]] -= w;
            }
        }
        l
    }

    /// Same Laplacian with every weight multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        let edges: Vec<_> = self.graph.edges().map(|(i, j, w)| (i, j, c * w)).collect();
        Ok(Self::new(&SparseGraph::from_edges(self.n(), &edges)?))
    }
}

pub fn laplacian(g: &SparseGraph) -> Laplacian {
    Laplacian::new(g)
}

/// How neighbor features are aggregated in a GCN layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Propagation {
    /// `D~^{-1/2} (A + I) D~^{-1/2}`.
    #[default]
    Symmetric,
    /// Plain `A + I`: self term plus an unnormalized neighbor sum.
    RawSum,
}

/// Sparse propagation operator with self-loops, row-compressed.
#[derive(Debug, Clone)]
pub struct NormalizedAdjacency {
    n: usize,
    offsets: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    kind: Propagation,
}

impl NormalizedAdjacency {
    pub fn new(g: &SparseGraph, kind: Propagation) -> Self {
        let n = g.n();
        let inv_sqrt: Vec<f64> = (0..n)
            .map(|i| match kind {
                Propagation::Symmetric => 1.0 / (g.weighted_degree(i) + 1.0).sqrt(),
                Propagation::RawSum => 1.0,
            })
            .collect();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut cols = Vec::with_capacity(2 * g.edge_count() + n);
        let mut vals = Vec::with_capacity(2 * g.edge_count() + n);
        offsets.push(0);
        for i in 0..n {
            let mut self_done = false;
            for (&j, &w) in g.neighbors(i).iter().zip(g.neighbor_weights(i)) {
                if !self_done && j > i {
                    cols.push(i);
                    vals.push(inv_sqrt[i] * inv_sqrt[i]);
                    self_done = true;
                }
                cols.push(j);
                vals.push(inv_sqrt[i] * w * inv_sqrt[j]);
            }
            if !self_done {
                cols.push(i);
                vals.push(inv_sqrt[i] * inv_sqrt[i]);
            }
            offsets.push(cols.len());
        }
        Self {
            n,
            offsets,
            cols,
            vals,
            kind,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kind(&self) -> Propagation {
        self.kind
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.offsets[i]..self.offsets[i + 1];
        (&self.cols[r.clone()], &self.vals[r])
    }

    /// `Â H` for a dense `H` with `n` rows.
    pub fn apply(&self, h: ArrayView2<f64>) -> Array2<f64> {
        assert_eq!(h.nrows(), self.n, "operand rows must match operator order");
        let width = h.ncols();
        let mut out = Array2::<f64>::zeros((self.n, width));
        let data = out
            .as_slice_mut()
            .expect("freshly allocated array is contiguous");
        par::for_each_row_mut(data, width, |i, row| {
            let (cols, vals) = self.row(i);
            for (&j, &a) in cols.iter().zip(vals) {
                for (o, &x) in row.iter_mut().zip(h.row(j)) {
                    *o += a * x;
                }
            }
        });
        out
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut a = Array2::zeros((self.n, self.n));
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                a[[i, j]] = v;
            }
        }
        a
    }
}

pub fn normalized_adjacency(g: &SparseGraph) -> NormalizedAdjacency {
    NormalizedAdjacency::new(g, Propagation::Symmetric)
}

/// Connected-component labelling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Components {
    /// Component of each node, numbered in order of first appearance.
    pub labels: Vec<usize>,
    pub count: usize,
}

impl Components {
    /// Node lists per component, each sorted ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.count];
        for (i, &c) in self.labels.iter().enumerate() {
            out[c].push(i);
        }
        out
    }
}

pub fn connected_components(g: &SparseGraph) -> Components {
    let n = g.n();
    let mut labels = vec![usize::MAX; n];
    let mut count = 0;
    let mut stack = Vec::new();
    for start in 0..n {
        if labels[start] != usize::MAX {
            continue;
        }
        labels[start] = count;
        stack.push(start);
        while let Some(v) = stack.pop() {
            for &u in g.neighbors(v) {
                if labels[u] == usize::MAX {
                    labels[u] = count;
                    stack.push(u);
                }
            }
        }
        count += 1;
    }
    Components { labels, count }
}
