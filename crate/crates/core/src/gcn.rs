//! Two-layer graph convolutional network with hand-written backpropagation.
//!
//! ```text
//!   hidden = ReLU(Â X W0)
//!   logits = Â hidden W1
//! ```
//!
//! Training minimizes softmax cross-entropy over the labelled nodes plus an
//! L2 penalty `(wd / 2) ‖W0‖²` with Adam. Dropout (inverted scaling) is
//! applied to the non-zero input features and to the hidden layer during
//! training only.

use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{NormalizedAdjacency, Propagation};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GcnHyperParams {
    pub hidden: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub epochs: usize,
    pub seed: u64,
    pub propagation: Propagation,
}

impl Default for GcnHyperParams {
    fn default() -> Self {
        Self {
            hidden: 16,
            lr: 0.01,
            weight_decay: 5e-4,
            dropout: 0.5,
            epochs: 200,
            seed: 0,
            propagation: Propagation::Symmetric,
        }
    }
}

/// Row-compressed feature matrix. Bag-of-words features are mostly zero,
/// so the first layer runs over non-zeros only.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRows {
    ncols: usize,
    offsets: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseRows {
    pub fn from_dense(x: ArrayView2<f64>) -> Self {
        let mut offsets = Vec::with_capacity(x.nrows() + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        offsets.push(0);
        for row in x.rows() {
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    cols.push(j);
                    vals.push(v);
                }
            }
            offsets.push(cols.len());
        }
        Self {
            ncols: x.ncols(),
            offsets,
            cols,
            vals,
        }
    }

    pub fn nrows(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Same sparsity pattern, values multiplied entrywise by `scale`.
    fn masked(&self, scale: &[f64]) -> Self {
        Self {
            ncols: self.ncols,
            offsets: self.offsets.clone(),
            cols: self.cols.clone(),
            vals: self.vals.iter().zip(scale).map(|(v, s)| v * s).collect(),
        }
    }

    /// `self · w`.
    pub fn dot(&self, w: ArrayView2<f64>) -> Array2<f64> {
        assert_eq!(w.nrows(), self.ncols, "inner dimensions must agree");
        let width = w.ncols();
        let mut out = Array2::<f64>::zeros((self.nrows(), width));
        let data = out.as_slice_mut().expect("contiguous");
        par::for_each_row_mut(data, width, |i, row| {
            for k in self.offsets[i]..self.offsets[i + 1] {
                let v = self.vals[k];
                for (o, &x) in row.iter_mut().zip(w.row(self.cols[k])) {
                    *o += v * x;
                }
            }
        });
        out
    }

    /// `self^T · g`.
    pub fn t_dot(&self, g: ArrayView2<f64>) -> Array2<f64> {
        assert_eq!(g.nrows(), self.nrows(), "inner dimensions must agree");
        let mut out = Array2::<f64>::zeros((self.ncols, g.ncols()));
        for i in 0..self.nrows() {
            let gi = g.row(i);
            for k in self.offsets[i]..self.offsets[i + 1] {
                let v = self.vals[k];
                for (o, &x) in out.row_mut(self.cols[k]).iter_mut().zip(gi) {
                    *o += v * x;
                }
            }
        }
        out
    }
}

/// Parameters of a trained or freshly initialized network.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnModel {
    /// `d × h`.
    pub w0: Array2<f64>,
    /// `h × C`.
    pub w1: Array2<f64>,
    pub hp: GcnHyperParams,
}

fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Array2<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-limit..=limit))
}

impl GcnModel {
    /// Glorot-uniform initialization from `hp.seed`.
    pub fn init(d: usize, c: usize, hp: GcnHyperParams) -> Result<Self> {
        if d == 0 || c == 0 || hp.hidden == 0 {
            return Err(Error::InvalidArgument(format!(
                "model dimensions must be positive (d={d}, h={}, c={c})",
                hp.hidden
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
        let w0 = glorot(&mut rng, d, hp.hidden);
        let w1 = glorot(&mut rng, hp.hidden, c);
        Ok(Self { w0, w1, hp })
    }

    pub fn d(&self) -> usize {
        self.w0.nrows()
    }

    pub fn hidden(&self) -> usize {
        self.w0.ncols()
    }

    pub fn classes(&self) -> usize {
        self.w1.ncols()
    }

    fn is_finite(&self) -> bool {
        self.w0.iter().chain(self.w1.iter()).all(|v| v.is_finite())
    }
}

pub fn init_model(d: usize, h: usize, c: usize, seed: u64) -> Result<GcnModel> {
    GcnModel::init(
        d,
        c,
        GcnHyperParams {
            hidden: h,
            seed,
            ..GcnHyperParams::default()
        },
    )
}

/// Inference-mode activations.
#[derive(Debug, Clone)]
pub struct Forward {
    /// `N × h` node embeddings after the first layer.
    pub hidden: Array2<f64>,
    /// `N × C`.
    pub logits: Array2<f64>,
}

fn check_shapes(m: &GcnModel, a_hat: &NormalizedAdjacency, x: &SparseRows) -> Result<()> {
    if x.nrows() != a_hat.n() || x.ncols() != m.d() {
        return Err(Error::DimensionMismatch(format!(
            "features {}×{}, operator order {}, model input width {}",
            x.nrows(),
            x.ncols(),
            a_hat.n(),
            m.d()
        )));
    }
    Ok(())
}

/// Forward pass without dropout.
pub fn forward(m: &GcnModel, a_hat: &NormalizedAdjacency, x: &SparseRows) -> Result<Forward> {
    check_shapes(m, a_hat, x)?;
    let pre = a_hat.apply(x.dot(m.w0.view()).view());
    let hidden = pre.mapv(|v| v.max(0.0));
    let logits = a_hat.apply(hidden.dot(&m.w1).view());
    Ok(Forward { hidden, logits })
}

/// Row-wise argmax; ties go to the lowest class index.
pub fn argmax_rows(logits: ArrayView2<f64>) -> Vec<usize> {
    logits
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

pub fn predict(m: &GcnModel, a_hat: &NormalizedAdjacency, x: &SparseRows) -> Result<Vec<usize>> {
    Ok(argmax_rows(forward(m, a_hat, x)?.logits.view()))
}

/// Dropout masks for one training step, already carrying the `1/(1-p)` scale.
#[derive(Debug, Clone)]
pub struct DropoutMasks {
    /// One entry per non-zero input feature.
    pub input: Vec<f64>,
    /// `N × h`.
    pub hidden: Array2<f64>,
}

impl DropoutMasks {
    fn sample(rng: &mut ChaCha8Rng, rate: f64, nnz: usize, n: usize, h: usize) -> Self {
        let keep = 1.0 - rate;
        let mut draw = || {
            if rng.random::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        };
        let input = (0..nnz).map(|_| draw()).collect();
        let hidden = Array2::from_shape_simple_fn((n, h), draw);
        Self { input, hidden }
    }
}

/// Training loss and its gradients with respect to `W0` and `W1`.
#[derive(Debug, Clone)]
pub struct LossAndGrads {
    pub loss: f64,
    pub grad_w0: Array2<f64>,
    pub grad_w1: Array2<f64>,
    /// Share of `train_ids` whose argmax matches the label in this pass.
    pub train_accuracy: f64,
}

fn log_softmax_row(row: ndarray::ArrayView1<f64>) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

/// Loss, gradients and training accuracy for one pass. `masks = None` means
/// no dropout.
pub fn loss_and_gradients(
    m: &GcnModel,
    a_hat: &NormalizedAdjacency,
    x: &SparseRows,
    labels: &[usize],
    train_ids: &[usize],
    masks: Option<&DropoutMasks>,
) -> Result<LossAndGrads> {
    check_shapes(m, a_hat, x)?;
    if train_ids.is_empty() {
        return Err(Error::InvalidArgument("train_ids is empty".into()));
    }
    let c = m.classes();
    if let Some(&bad) = train_ids
        .iter()
        .find(|&&i| i >= labels.len() || labels[i] >= c)
    {
        return Err(Error::InvalidArgument(format!(
            "train node {bad} has no valid label"
        )));
    }
    let dropped;
    let xd = match masks {
        Some(mk) => {
            dropped = x.masked(&mk.input);
            &dropped
        }
        None => x,
    };
    let pre = a_hat.apply(xd.dot(m.w0.view()).view());
    let relu_gate = pre.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
    let mut hd = pre.mapv(|v| v.max(0.0));
    if let Some(mk) = masks {
        hd *= &mk.hidden;
    }
    let logits = a_hat.apply(hd.dot(&m.w1).view());

    let inv = 1.0 / train_ids.len() as f64;
    let mut d_logits = Array2::<f64>::zeros(logits.raw_dim());
    let mut ce = 0.0;
    let mut correct = 0usize;
    for &i in train_ids {
        let logp = log_softmax_row(logits.row(i));
        let y = labels[i];
        ce -= logp[y];
        let pred = argmax_rows(logits.slice(ndarray::s![i..i + 1, ..]))[0];
        correct += usize::from(pred == y);
        for (k, lp) in logp.iter().enumerate() {
            d_logits[[i, k]] = (lp.exp() - if k == y { 1.0 } else { 0.0 }) * inv;
        }
    }
    let penalty = 0.5 * m.hp.weight_decay * m.w0.iter().map(|v| v * v).sum::<f64>();
    let loss = ce * inv + penalty;

    // Â is symmetric, so Â^T g = Â g.
    let d_t = a_hat.apply(d_logits.view());
    let grad_w1 = hd.t().dot(&d_t);
    let mut d_h = d_t.dot(&m.w1.t());
    if let Some(mk) = masks {
        d_h *= &mk.hidden;
    }
    d_h *= &relu_gate;
    let d_xw = a_hat.apply(d_h.view());
    let mut grad_w0 = xd.t_dot(d_xw.view());
    grad_w0.scaled_add(m.hp.weight_decay, &m.w0);

    Ok(LossAndGrads {
        loss,
        grad_w0,
        grad_w1,
        train_accuracy: correct as f64 * inv,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub loss: Vec<f64>,
    pub train_accuracy: Vec<f64>,
}

struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    fn new(shapes: &[&Array2<f64>]) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: shapes.iter().map(|a| Array2::zeros(a.raw_dim())).collect(),
            v: shapes.iter().map(|a| Array2::zeros(a.raw_dim())).collect(),
        }
    }

    fn update(&mut self, lr: f64, params: &mut [&mut Array2<f64>], grads: &[&Array2<f64>]) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        for (slot, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[slot], &mut self.v[slot]);
            ndarray::Zip::from(&mut **p)
                .and(m)
                .and(v)
                .and(*g)
                .for_each(|p, m, v, &g| {
                    *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                    *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p -= lr * m_hat / (v_hat.sqrt() + self.eps);
                });
        }
    }
}

/// Full-batch training for `m.hp.epochs` epochs.
pub fn train(
    m: &GcnModel,
    a_hat: &NormalizedAdjacency,
    x: &SparseRows,
    labels: &[usize],
    train_ids: &[usize],
) -> Result<(GcnModel, TrainTrace)> {
    check_shapes(m, a_hat, x)?;
    if train_ids.is_empty() {
        return Err(Error::InvalidArgument("train_ids is empty".into()));
    }
    let hp = m.hp;
    if !(0.0..1.0).contains(&hp.dropout) {
        return Err(Error::InvalidArgument(format!(
            "dropout {} outside [0, 1)",
            hp.dropout
        )));
    }
    let mut model = m.clone();
    let mut trace = TrainTrace::default();
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    rng.set_stream(1);
    let mut adam = Adam::new(&[&model.w0, &model.w1]);
    for epoch in 0..hp.epochs {
        let masks = (hp.dropout > 0.0).then(|| {
            DropoutMasks::sample(&mut rng, hp.dropout, x.nnz(), x.nrows(), model.hidden())
        });
        let step = loss_and_gradients(&model, a_hat, x, labels, train_ids, masks.as_ref())?;
        if !step.loss.is_finite() {
            return Err(Error::NanLoss { epoch });
        }
        trace.loss.push(step.loss);
        trace.train_accuracy.push(step.train_accuracy);
        let GcnModel { w0, w1, .. } = &mut model;
        adam.update(hp.lr, &mut [w0, w1], &[&step.grad_w0, &step.grad_w1]);
        if !model.is_finite() {
            return Err(Error::NanLoss { epoch });
        }
    }
    Ok((model, trace))
}

/// Fraction of `ids` whose prediction equals the label.
pub fn accuracy(pred: &[usize], labels: &[usize], ids: &[usize]) -> f64 {
    if ids.is_empty() {
        return f64::NAN;
    }
    let correct = ids.iter().filter(|&&i| pred[i] == labels[i]).count();
    correct as f64 / ids.len() as f64
}

#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    d: usize,
    h: usize,
    c: usize,
    hyperparams: GcnHyperParams,
    seed: u64,
    w0: Vec<f64>,
    w1: Vec<f64>,
}

const CHECKPOINT_FORMAT: &str = "spade-gnn/gcn";
const CHECKPOINT_VERSION: u32 = 1;

pub fn checkpoint_json(m: &GcnModel) -> String {
    let ck = Checkpoint {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        d: m.d(),
        h: m.hidden(),
        c: m.classes(),
        hyperparams: m.hp,
        seed: m.hp.seed,
        w0: m.w0.iter().copied().collect(),
        w1: m.w1.iter().copied().collect(),
    };
    serde_json::to_string_pretty(&ck).expect("checkpoint serializes")
}

pub fn parse_checkpoint(text: &str) -> Result<GcnModel> {
    let ck: Checkpoint = serde_json::from_str(text)?;
    if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
        return Err(Error::Schema(format!(
            "unsupported checkpoint {} v{}",
            ck.format, ck.version
        )));
    }
    let w0 = Array2::from_shape_vec((ck.d, ck.h), ck.w0)
        .map_err(|e| Error::Schema(format!("W0 payload: {e}")))?;
    let w1 = Array2::from_shape_vec((ck.h, ck.c), ck.w1)
        .map_err(|e| Error::Schema(format!("W1 payload: {e}")))?;
    Ok(GcnModel {
        w0,
        w1,
        hp: ck.hyperparams,
    })
}

pub fn save_checkpoint(m: &GcnModel, path: &Path) -> Result<()> {
    fs::write(path, checkpoint_json(m)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<GcnModel> {
    parse_checkpoint(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}
