//! Reference implementations for the integration tests. Everything here is
//! deliberately naive: dense `Vec<Vec<f64>>` matrices, double loops, cyclic
//! Jacobi. None of it calls into the library except to build inputs.
#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::BTreeSet;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spade_gnn::graph::SparseGraph;

pub type Dense = Vec<Vec<f64>>;
pub type Edge = (usize, usize, f64);

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn zeros(r: usize, c: usize) -> Dense {
    vec![vec![0.0; c]; r]
}

pub fn matmul(a: &Dense, b: &Dense) -> Dense {
    let (n, m, p) = (a.len(), b.len(), b.first().map_or(0, Vec::len));
    let mut out = zeros(n, p);
    for i in 0..n {
        for t in 0..m {
            for j in 0..p {
                out[i][j] += a[i][t] * b[t][j];
            }
        }
    }
    out
}

pub fn transpose(a: &Dense) -> Dense {
    let (r, c) = (a.len(), a.first().map_or(0, Vec::len));
    let mut out = zeros(c, r);
    for i in 0..r {
        for j in 0..c {
            out[j][i] = a[i][j];
        }
    }
    out
}

pub fn to_dense(a: &Array2<f64>) -> Dense {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

pub fn from_dense(a: &Dense) -> Array2<f64> {
    let c = a.first().map_or(0, Vec::len);
    Array2::from_shape_fn((a.len(), c), |(i, j)| a[i][j])
}

/// Random connected graph: a random spanning tree plus extra edges, weights
/// in `[wmin, wmax)`.
pub fn random_connected_edges(
    r: &mut ChaCha8Rng,
    n: usize,
    extra: usize,
    wmin: f64,
    wmax: f64,
) -> Vec<Edge> {
    let mut seen = BTreeSet::new();
    let mut edges = Vec::new();
    for v in 1..n {
        let u = r.random_range(0..v);
        seen.insert((u, v));
        edges.push((u, v, r.random_range(wmin..wmax)));
    }
    let mut tries = 0;
    while edges.len() < n - 1 + extra && tries < 50 * (extra + 1) {
        tries += 1;
        let a = r.random_range(0..n);
        let b = r.random_range(0..n);
        if a == b {
            continue;
        }
        let key = (a.min(b), a.max(b));
        if seen.insert(key) {
            edges.push((key.0, key.1, r.random_range(wmin..wmax)));
        }
    }
    edges
}

pub fn graph(n: usize, edges: &[Edge]) -> SparseGraph {
    SparseGraph::from_edges(n, edges).expect("valid test graph")
}

pub fn dense_laplacian(n: usize, edges: &[Edge]) -> Dense {
    let mut l = zeros(n, n);
    for &(i, j, w) in edges {
        l[i][j] -= w;
        l[j][i] -= w;
        l[i][i] += w;
        l[j][j] += w;
    }
    l
}

pub fn dense_adjacency(n: usize, edges: &[Edge]) -> Dense {
    let mut a = zeros(n, n);
    for &(i, j, w) in edges {
        a[i][j] = w;
        a[j][i] = w;
    }
    a
}

/// Union-find component count.
pub fn component_count(n: usize, edges: &[Edge]) -> usize {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        let mut y = x;
        while p[y] != r {
            let next = p[y];
            p[y] = r;
            y = next;
        }
        r
    }
    let mut count = n;
    for &(i, j, _) in edges {
        let (a, b) = (find(&mut parent, i), find(&mut parent, j));
        if a != b {
            parent[a] = b;
            count -= 1;
        }
    }
    count
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns ascending
/// eigenvalues and the matching eigenvectors as columns.
pub fn jacobi_eigen(a: &Dense) -> (Vec<f64>, Dense) {
    let n = a.len();
    let mut a = a.clone();
    let mut v = zeros(n, n);
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let scale: f64 = a
        .iter()
        .flatten()
        .map(|x| x * x)
        .sum::<f64>()
        .max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let vkp = row[p];
                    let vkq = row[q];
                    row[p] = c * vkp - s * vkq;
                    row[q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| a[x][x].total_cmp(&a[y][y]));
    let vals = order.iter().map(|&i| a[i][i]).collect();
    let vecs = (0..n)
        .map(|r| order.iter().map(|&c| v[r][c]).collect())
        .collect();
    (vals, vecs)
}

/// Top-k eigenpairs of `L_in v = λ L_out v` on the complement of the
/// nullspace of `L_out`, via the symmetric reduction through the spectral
/// decomposition of `L_out`. Eigenvalues descending; eigenvectors are columns
/// of an `n × k` matrix, `L_out`-orthonormal.
pub fn pencil_oracle(
    l_in: &Dense,
    l_out: &Dense,
    components: usize,
    k: usize,
) -> (Vec<f64>, Dense) {
    let n = l_out.len();
    let (sig, u) = jacobi_eigen(l_out);
    let r = n - components;
    // U_r Σ^{-1/2}: n × r
    let mut w = zeros(n, r);
    for i in 0..n {
        for c in 0..r {
            w[i][c] = u[i][components + c] / sig[components + c].sqrt();
        }
    }
    let m = matmul(&matmul(&transpose(&w), l_in), &w);
    let mut m_sym = m.clone();
    for i in 0..r {
        for j in 0..r {
            m_sym[i][j] = 0.5 * (m[i][j] + m[j][i]);
        }
    }
    let (mu, y) = jacobi_eigen(&m_sym);
    let mut vals = Vec::with_capacity(k);
    let mut ys = zeros(r, k);
    for t in 0..k {
        let src = r - 1 - t;
        vals.push(mu[src]);
        for i in 0..r {
            ys[i][t] = y[i][src];
        }
    }
    (vals, matmul(&w, &ys))
}

/// Euclidean orthonormal basis of the column span (modified Gram-Schmidt,
/// applied twice).
pub fn orthonormal_columns(a: &Dense) -> Dense {
    let n = a.len();
    let k = a.first().map_or(0, Vec::len);
    let mut q = a.clone();
    for j in 0..k {
        for _ in 0..2 {
            for p in 0..j {
                let dot: f64 = (0..n).map(|i| q[i][p] * q[i][j]).sum();
                for i in 0..n {
                    q[i][j] -= dot * q[i][p];
                }
            }
        }
        let norm: f64 = (0..n).map(|i| q[i][j] * q[i][j]).sum::<f64>().sqrt();
        for row in q.iter_mut() {
            row[j] /= norm;
        }
    }
    q
}

/// Sine of the largest principal angle between two column spans.
pub fn max_principal_angle_sine(a: &Dense, b: &Dense) -> f64 {
    let qa = orthonormal_columns(a);
    let qb = orthonormal_columns(b);
    let proj = matmul(&qa, &matmul(&transpose(&qa), &qb));
    let mut resid = qb.clone();
    for (r, p) in resid.iter_mut().zip(&proj) {
        for (x, y) in r.iter_mut().zip(p) {
            *x -= y;
        }
    }
    let gram = matmul(&transpose(&resid), &resid);
    let (vals, _) = jacobi_eigen(&gram);
    vals.last().copied().unwrap_or(0.0).max(0.0).sqrt()
}

/// Node score written out literally: for every neighbor pair build the
/// incidence vector `e_p - e_q`, project it with `V_k^T`, square, average.
pub fn spade_oracle(vk: &Dense, n: usize, edges: &[Edge]) -> Vec<f64> {
    let k = vk.first().map_or(0, Vec::len);
    let mut nbrs = vec![Vec::new(); n];
    for &(i, j, _) in edges {
        nbrs[i].push(j);
        nbrs[j].push(i);
    }
    (0..n)
        .map(|p| {
            if nbrs[p].is_empty() {
                return 0.0;
            }
            let mut total = 0.0;
            for &q in &nbrs[p] {
                let mut e = vec![0.0; n];
                e[p] += 1.0;
                e[q] -= 1.0;
                let mut proj = vec![0.0; k];
                for (i, ei) in e.iter().enumerate() {
                    for m in 0..k {
                        proj[m] += vk[i][m] * ei;
                    }
                }
                total += proj.iter().map(|x| x * x).sum::<f64>();
            }
            total / nbrs[p].len() as f64
        })
        .collect()
}

/// Exact kNN edge set by a double loop with a full sort per node; ties go
/// to the smaller index. Edges are `(min, max)`.
pub fn knn_oracle(points: &Dense, k: usize) -> BTreeSet<(usize, usize)> {
    let n = points.len();
    let mut out = BTreeSet::new();
    for i in 0..n {
        let mut cand: Vec<(f64, usize)> = Vec::new();
        for j in 0..n {
            if i == j {
                continue;
            }
            let d: f64 = points[i]
                .iter()
                .zip(&points[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            cand.push((d, j));
        }
        cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, j) in cand.iter().take(k) {
            out.insert((i.min(j), i.max(j)));
        }
    }
    out
}

pub fn edge_set(g: &SparseGraph) -> BTreeSet<(usize, usize)> {
    g.edges().map(|(i, j, _)| (i, j)).collect()
}

/// `D̃^{-1/2} (A + I) D̃^{-1/2}` built densely.
pub fn dense_a_hat(n: usize, edges: &[Edge]) -> Dense {
    let mut a = dense_adjacency(n, edges);
    for (i, row) in a.iter_mut().enumerate() {
        row[i] += 1.0;
    }
    let d: Vec<f64> = a.iter().map(|r| r.iter().sum()).collect();
    for i in 0..n {
        for j in 0..n {
            a[i][j] /= (d[i] * d[j]).sqrt();
        }
    }
    a
}

pub fn relu(a: &Dense) -> Dense {
    a.iter()
        .map(|r| r.iter().map(|v| v.max(0.0)).collect())
        .collect()
}

/// Two-layer GCN logits `Â ReLU(Â X W0) W1`.
pub fn gcn_logits(a_hat: &Dense, x: &Dense, w0: &Dense, w1: &Dense) -> Dense {
    let h = relu(&matmul(a_hat, &matmul(x, w0)));
    matmul(a_hat, &matmul(&h, w1))
}

/// Mean cross entropy over `train` plus `wd/2 ‖W0‖²`.
pub fn gcn_loss(
    a_hat: &Dense,
    x: &Dense,
    w0: &Dense,
    w1: &Dense,
    labels: &[usize],
    train: &[usize],
    wd: f64,
) -> f64 {
    let z = gcn_logits(a_hat, x, w0, w1);
    let mut ce = 0.0;
    for &i in train {
        let max = z[i].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z[i].iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        ce += lse - z[i][labels[i]];
    }
    let reg: f64 = w0.iter().flatten().map(|v| v * v).sum();
    ce / train.len() as f64 + 0.5 * wd * reg
}

/// Index of the nearest centroid by squared distance, scanning classes in
/// order and keeping the first minimum.
pub fn nearest_centroid(centroids: &[Option<Vec<f64>>], x: &[f64]) -> usize {
    let mut best = None::<(f64, usize)>;
    for (c, cent) in centroids.iter().enumerate() {
        if let Some(cent) = cent {
            let d: f64 = cent.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, c));
            }
        }
    }
    best.expect("some centroid").1
}

pub fn class_means(
    vectors: &Dense,
    labels: &[usize],
    members: &[usize],
    c: usize,
) -> Vec<Option<Vec<f64>>> {
    let d = vectors.first().map_or(0, Vec::len);
    let mut sums = vec![vec![0.0; d]; c];
    let mut counts = vec![0usize; c];
    for &i in members {
        counts[labels[i]] += 1;
        for (s, v) in sums[labels[i]].iter_mut().zip(&vectors[i]) {
            *s += v;
        }
    }
    sums.into_iter()
        .zip(counts)
        .map(|(s, cnt)| (cnt > 0).then(|| s.iter().map(|v| v / cnt as f64).collect()))
        .collect()
}

/// Two Gaussian blobs in the plane, `per` points each, centers `(±sep, 0)`.
pub fn two_blobs(seed: u64, per: usize, sep: f64, spread: f64) -> (Dense, Vec<usize>) {
    let mut r = rng(seed);
    let mut pts = Vec::new();
    let mut labels = Vec::new();
    for class in 0..2 {
        let cx = if class == 0 { -sep } else { sep };
        for _ in 0..per {
            let (g1, g2) = gaussian_pair(&mut r);
            pts.push(vec![cx + spread * g1, spread * g2]);
            labels.push(class);
        }
    }
    (pts, labels)
}

pub fn gaussian_pair(r: &mut ChaCha8Rng) -> (f64, f64) {
    let u1: f64 = r.random_range(f64::EPSILON..1.0);
    let u2: f64 = r.random::<f64>();
    let rad = (-2.0 * u1.ln()).sqrt();
    let th = 2.0 * std::f64::consts::PI * u2;
    (rad * th.cos(), rad * th.sin())
}

pub fn random_points(r: &mut ChaCha8Rng, n: usize, d: usize) -> Dense {
    (0..n)
        .map(|_| (0..d).map(|_| r.random_range(-1.0..1.0)).collect())
        .collect()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}
