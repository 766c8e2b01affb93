//! Top-k eigenpairs of the Laplacian pencil `(L_in, L_out)`.
//!
//! The pencil `L_in v = λ L_out v` is solved on the complement of the
//! nullspace of `L_out` (one constant vector per connected component of the
//! output graph), which is exactly the action of `L_out^+ L_in` there.
//!
//! Reduction used here: with `P0` the orthogonal projector onto the
//! nullspace and `P = I - P0`,
//!
//! ```text
//!   B = L_out + P0              (symmetric positive definite)
//!   A = P L_in P - P0
//!   B = R R^T,  M = R^{-1} A R^{-T},  M y = λ y,  v = R^{-T} y
//! ```
//!
//! `A` and `B` share the invariant split nullspace / complement. On the
//! complement they equal the deflated pencil; on the nullspace the pencil is
//! `-I` vs `I`, so those directions sit at eigenvalue -1 and never enter the
//! top k of a positive semidefinite problem.

use faer::{Mat, Side};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{connected_components, Components, Laplacian};

/// Pencil residual tolerance, relative to `(‖L_in‖∞ + |λ| ‖L_out‖∞) ‖v‖`.
pub const RESIDUAL_TOL: f64 = 1e-6;

/// Top-k pencil eigenpairs and the scaled eigensubspace matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenSubspace {
    /// Descending, clamped at zero.
    pub eigenvalues: Vec<f64>,
    /// `N × k`, column `m` is `v_m`, `L_out`-orthonormal.
    pub eigenvectors: Array2<f64>,
    /// `N × k`, column `m` is `v_m √λ_m`.
    pub v_k: Array2<f64>,
}

impl EigenSubspace {
    pub fn new(eigenvalues: Vec<f64>, eigenvectors: Array2<f64>) -> Result<Self> {
        if eigenvalues.len() != eigenvectors.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "{} eigenvalues for {} eigenvectors",
                eigenvalues.len(),
                eigenvectors.ncols()
            )));
        }
        let v_k = scale_columns(&eigenvalues, &eigenvectors);
        Ok(Self {
            eigenvalues,
            eigenvectors,
            v_k,
        })
    }

    pub fn k(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn n(&self) -> usize {
        self.eigenvectors.nrows()
    }
}

fn scale_columns(eigenvalues: &[f64], eigenvectors: &Array2<f64>) -> Array2<f64> {
    let mut v_k = eigenvectors.clone();
    for (mut col, &lambda) in v_k.columns_mut().into_iter().zip(eigenvalues) {
        let s = lambda.max(0.0).sqrt();
        col.mapv_inplace(|x| x * s);
    }
    v_k
}

/// `V_k = [v_1 √λ_1, …, v_k √λ_k]`.
pub fn build_vk(es: &EigenSubspace) -> Array2<f64> {
    scale_columns(&es.eigenvalues, &es.eigenvectors)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PencilOptions {
    /// When positive, solve `(L_in, L_out + δI)` on the full space instead
    /// of deflating the nullspace of `L_out`.
    pub diagonal_shift: f64,
}

/// Top-k eigenpairs of the deflated pencil.
pub fn pencil_topk(l_in: &Laplacian, l_out: &Laplacian, k: usize) -> Result<EigenSubspace> {
    pencil_topk_with(l_in, l_out, k, PencilOptions::default())
}

pub fn pencil_topk_with(
    l_in: &Laplacian,
    l_out: &Laplacian,
    k: usize,
    opts: PencilOptions,
) -> Result<EigenSubspace> {
    let n = l_out.n();
    if l_in.n() != n {
        return Err(Error::DimensionMismatch(format!(
            "L_in has order {}, L_out has order {n}",
            l_in.n()
        )));
    }
    let shifted = opts.diagonal_shift > 0.0;
    let comps = if shifted {
        Components {
            labels: vec![0; n],
            count: 0,
        }
    } else {
        connected_components(l_out.graph())
    };
    let available = n - comps.count;
    if k == 0 || k > available {
        return Err(Error::KOutOfRange {
            k,
            constraint: format!(
                "1 <= k <= N - components(G_out) = {n} - {} = {available}",
                comps.count
            ),
        });
    }
    let members = if shifted { Vec::new() } else { comps.members() };

    let mut b = dense(l_out);
    let mut a = dense(l_in);
    if shifted {
        for i in 0..n {
            b[(i, i)] += opts.diagonal_shift;
        }
    } else {
        project_rows_and_columns(&mut a, &members);
        for comp in &members {
            let w = 1.0 / comp.len() as f64;
            for &i in comp {
                for &j in comp {
                    b[(i, j)] += w;
                    a[(i, j)] -= w;
                }
            }
        }
    }

    let llt = b
        .llt(Side::Lower)
        .map_err(|e| Error::Factorization(format!("cholesky of reduced L_out: {e:?}")))?;
    let r = llt.L().to_owned();
    // M = R^{-1} A R^{-T}, formed as R^{-1} (R^{-1} A)^T using symmetry of A.
    faer::linalg::triangular_solve::solve_lower_triangular_in_place(
        r.as_ref(),
        a.as_mut(),
        faer::Par::Seq,
    );
    let mut m = a.transpose().to_owned();
    faer::linalg::triangular_solve::solve_lower_triangular_in_place(
        r.as_ref(),
        m.as_mut(),
        faer::Par::Seq,
    );
    for i in 0..n {
        for j in 0..i {
            let s = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = s;
            m[(j, i)] = s;
        }
    }
    let evd = m
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Factorization(format!("symmetric eigensolver: {e:?}")))?;
    let s = evd.S().column_vector();
    let u = evd.U();

    let mut y = Mat::<f64>::zeros(n, k);
    let mut eigenvalues = Vec::with_capacity(k);
    for m_idx in 0..k {
        let src = n - 1 - m_idx;
        eigenvalues.push(s[src].max(0.0));
        for i in 0..n {
            y[(i, m_idx)] = u[(i, src)];
        }
    }
    faer::linalg::triangular_solve::solve_upper_triangular_in_place(
        r.as_ref().transpose(),
        y.as_mut(),
        faer::Par::Seq,
    );
    let mut vectors = Array2::from_shape_fn((n, k), |(i, j)| y[(i, j)]);
    for mut col in vectors.columns_mut() {
        fix_sign(&mut col);
    }

    for (m_idx, &lambda) in eigenvalues.iter().enumerate() {
        let v: Vec<f64> = vectors.column(m_idx).to_vec();
        let residual = relative_residual(l_in, l_out, &members, opts, lambda, &v);
        if residual.is_nan() || residual > RESIDUAL_TOL {
            return Err(Error::NotConverged {
                index: m_idx,
                residual,
            });
        }
    }
    EigenSubspace::new(eigenvalues, vectors)
}

fn dense(l: &Laplacian) -> Mat<f64> {
    let n = l.n();
    let g = l.graph();
    let mut out = Mat::<f64>::zeros(n, n);
    for i in 0..n {
        out[(i, i)] = l.degrees()[i];
        for (&j, &w) in g.neighbors(i).iter().zip(g.neighbor_weights(i)) {
            out[(i, j)] -= w;
        }
    }
    out
}

/// In place `A <- P A P` for the block-constant projector defined by `members`.
fn project_rows_and_columns(a: &mut Mat<f64>, members: &[Vec<usize>]) {
    let n = a.nrows();
    for j in 0..n {
        for comp in members {
            let mean = comp.iter().map(|&i| a[(i, j)]).sum::<f64>() / comp.len() as f64;
            for &i in comp {
                a[(i, j)] -= mean;
            }
        }
    }
    for i in 0..n {
        for comp in members {
            let mean = comp.iter().map(|&j| a[(i, j)]).sum::<f64>() / comp.len() as f64;
            for &j in comp {
                a[(i, j)] -= mean;
            }
        }
    }
}

fn project_vector(x: &mut [f64], members: &[Vec<usize>]) {
    for comp in members {
        let mean = comp.iter().map(|&i| x[i]).sum::<f64>() / comp.len() as f64;
        for &i in comp {
            x[i] -= mean;
        }
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn relative_residual(
    l_in: &Laplacian,
    l_out: &Laplacian,
    members: &[Vec<usize>],
    opts: PencilOptions,
    lambda: f64,
    v: &[f64],
) -> f64 {
    let mut lin_v = l_in.apply(v);
    project_vector(&mut lin_v, members);
    let mut lout_v = l_out.apply(v);
    if opts.diagonal_shift > 0.0 {
        for (o, x) in lout_v.iter_mut().zip(v) {
            *o += opts.diagonal_shift * x;
        }
    }
    let r: Vec<f64> = lin_v
        .iter()
        .zip(&lout_v)
        .map(|(a, b)| a - lambda * b)
        .collect();
    let scale = (inf_norm(l_in) + lambda.abs() * (inf_norm(l_out) + opts.diagonal_shift)) * norm(v);
    if scale > f64::MIN_POSITIVE {
        norm(&r) / scale
    } else {
        norm(&r)
    }
}

fn inf_norm(l: &Laplacian) -> f64 {
    2.0 * l.degrees().iter().fold(0.0f64, |m, &d| m.max(d))
}

/// Makes the largest-magnitude entry positive. Entries within a relative
/// 1e-9 of the maximum count as tied; the lowest index among them wins.
fn fix_sign(col: &mut ndarray::ArrayViewMut1<f64>) {
    let max = col.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max == 0.0 {
        return;
    }
    let pivot = col
        .iter()
        .position(|v| v.abs() >= max * (1.0 - 1e-9))
        .expect("maximum is attained");
    if col[pivot] < 0.0 {
        col.mapv_inplace(|x| -x);
    }
}
