//! Dense numeric primitives with exact analytic gradients.
//!
//! Everything here is a pure function over `f64` data: linear layers,
//! embedding lookup, activations, softmax, Adam, and a central-difference
//! gradient oracle used by the check harness. Row-major layout with the
//! batch as the leading dimension throughout.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Probabilities are clamped into this range before feeding a logarithm.
pub const PROB_CLAMP: f64 = 1e-7;

/// Row-major 2-D array of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor2 {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor2 {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                op: "Tensor2::new",
                detail: format!("{}x{} needs {} values, got {}", rows, cols, rows * cols, data.len()),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |v| v.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::Dimension {
                    op: "Tensor2::from_rows",
                    detail: "ragged rows".into(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Self { rows: r, cols: c, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

fn check_dims(op: &'static str, ok: bool, detail: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Dimension { op, detail: detail() })
    }
}

/// `out[i][j] = sum_t x[i][t] * w[t][j] + b[j]`.
pub fn linear_forward(x: &Tensor2, w: &Tensor2, b: &[f64]) -> Result<Tensor2> {
    check_dims("linear_forward", x.cols == w.rows && b.len() == w.cols, || {
        format!("x {}x{}, w {}x{}, b {}", x.rows, x.cols, w.rows, w.cols, b.len())
    })?;
    let mut out = Tensor2::zeros(x.rows, w.cols);
    for i in 0..x.rows {
        let xi = x.row(i);
        let oi = out.row_mut(i);
        oi.copy_from_slice(b);
        for (t, &xv) in xi.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let wr = w.row(t);
            for j in 0..wr.len() {
                oi[j] += xv * wr[j];
            }
        }
    }
    Ok(out)
}

/// Exact gradients of [`linear_forward`] given the cached inputs and the
/// upstream gradient. Returns `(grad_x, grad_w, grad_b)`.
pub fn linear_backward(
    x: &Tensor2,
    w: &Tensor2,
    upstream: &Tensor2,
) -> Result<(Tensor2, Tensor2, Vec<f64>)> {
    check_dims(
        "linear_backward",
        x.cols == w.rows && upstream.rows == x.rows && upstream.cols == w.cols,
        || {
            format!(
                "x {}x{}, w {}x{}, upstream {}x{}",
                x.rows, x.cols, w.rows, w.cols, upstream.rows, upstream.cols
            )
        },
    )?;
    let mut gx = Tensor2::zeros(x.rows, x.cols);
    let mut gw = Tensor2::zeros(w.rows, w.cols);
    let mut gb = vec![0.0; w.cols];
    for i in 0..x.rows {
        let ui = upstream.row(i);
        let xi = x.row(i);
        for (j, &uv) in ui.iter().enumerate() {
            gb[j] += uv;
        }
        let gxi = gx.row_mut(i);
        for t in 0..x.cols {
            let wr = w.row(t);
            let mut acc = 0.0;
            for j in 0..wr.len() {
                acc += ui[j] * wr[j];
            }
            gxi[t] = acc;
        }
        for t in 0..x.cols {
            let xv = xi[t];
            if xv == 0.0 {
                continue;
            }
            let gwr = gw.row_mut(t);
            for j in 0..ui.len() {
                gwr[j] += xv * ui[j];
            }
        }
    }
    Ok((gx, gw, gb))
}

/// Looks up one embedding row per field and concatenates them in field order.
/// `ids[i][f]` indexes into `tables[f]`; output is `B x (F*E)`.
pub fn embedding_forward(
    tables: &[&Tensor2],
    ids: &[Vec<usize>],
    field_names: &[&str],
) -> Result<Tensor2> {
    let f_count = tables.len();
    let e_dim = tables.first().map_or(0, |t| t.cols);
    let mut out = Tensor2::zeros(ids.len(), f_count * e_dim);
    for (i, rec) in ids.iter().enumerate() {
        check_dims("embedding_forward", rec.len() == f_count, || {
            format!("record has {} ids, expected {}", rec.len(), f_count)
        })?;
        let oi = out.row_mut(i);
        for (f, &id) in rec.iter().enumerate() {
            let table = tables[f];
            if id >= table.rows {
                let name = field_names.get(f).copied().unwrap_or("?");
                return Err(Error::Data {
                    line: i,
                    msg: format!("feature id {} out of range for field '{}' (cardinality {})", id, name, table.rows),
                });
            }
            oi[f * e_dim..(f + 1) * e_dim].copy_from_slice(table.row(id));
        }
    }
    Ok(out)
}

/// Scatters the upstream gradient of [`embedding_forward`] back into
/// per-table gradients; rows that were never looked up stay zero.
pub fn embedding_backward(
    tables: &[&Tensor2],
    ids: &[Vec<usize>],
    upstream: &Tensor2,
) -> Result<Vec<Tensor2>> {
    let e_dim = tables.first().map_or(0, |t| t.cols);
    let mut grads: Vec<Tensor2> = tables.iter().map(|t| Tensor2::zeros(t.rows, t.cols)).collect();
    for (i, rec) in ids.iter().enumerate() {
        let ui = upstream.row(i);
        for (f, &id) in rec.iter().enumerate() {
            let gr = grads[f].row_mut(id);
            let seg = &ui[f * e_dim..(f + 1) * e_dim];
            for (g, &u) in gr.iter_mut().zip(seg) {
                *g += u;
            }
        }
    }
    Ok(grads)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
}

impl Activation {
    pub fn apply_scalar(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    fn derivative_at(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => {
                let s = sigmoid(pre);
                s * (1.0 - s)
            }
        }
    }
}

pub fn activation_forward(kind: Activation, x: &Tensor2) -> Tensor2 {
    let mut out = x.clone();
    for v in out.as_mut_slice() {
        *v = kind.apply_scalar(*v);
    }
    out
}

/// Gradient through the activation given the cached pre-activation values.
pub fn activation_backward(kind: Activation, pre: &Tensor2, upstream: &Tensor2) -> Result<Tensor2> {
    check_dims(
        "activation_backward",
        pre.rows == upstream.rows && pre.cols == upstream.cols,
        || format!("pre {}x{}, upstream {}x{}", pre.rows, pre.cols, upstream.rows, upstream.cols),
    )?;
    let mut out = Tensor2::zeros(pre.rows, pre.cols);
    for (o, (&p, &u)) in out
        .as_mut_slice()
        .iter_mut()
        .zip(pre.as_slice().iter().zip(upstream.as_slice()))
    {
        *o = kind.derivative_at(p) * u;
    }
    Ok(out)
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Clamp a probability into `[PROB_CLAMP, 1 - PROB_CLAMP]` before it feeds a log.
pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Max-subtracted softmax over one logit vector.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Adam optimizer state for one parameter array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamHyper {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(
    name: &str,
    param: &mut [f64],
    grad: &[f64],
    state: &mut AdamState,
    hp: AdamHyper,
) -> Result<()> {
    if param.len() != grad.len() || param.len() != state.m.len() {
        return Err(Error::Dimension {
            op: "adam_step",
            detail: format!("param {}, grad {}, state {}", param.len(), grad.len(), state.m.len()),
        });
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Train(format!("non-finite gradient for parameter '{}'", name)));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - hp.beta1.powi(t);
    let bc2 = 1.0 - hp.beta2.powi(t);
    for i in 0..param.len() {
        state.m[i] = hp.beta1 * state.m[i] + (1.0 - hp.beta1) * grad[i];
        state.v[i] = hp.beta2 * state.v[i] + (1.0 - hp.beta2) * grad[i] * grad[i];
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        param[i] -= hp.lr * m_hat / (v_hat.sqrt() + hp.eps);
    }
    Ok(())
}

/// Central-difference gradient estimate: `(f(x+e) - f(x-e)) / 2e` per coordinate.
pub fn finite_diff_grad<F>(mut objective: F, params: &[f64], eps: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut work = params.to_vec();
    let mut grad = vec![0.0; params.len()];
    for i in 0..params.len() {
        let orig = work[i];
        work[i] = orig + eps;
        let fp = objective(&work)?;
        work[i] = orig - eps;
        let fm = objective(&work)?;
        work[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::Train(format!("non-finite objective at coordinate {}", i)));
        }
        grad[i] = (fp - fm) / (2.0 * eps);
    }
    Ok(grad)
}

/// `|a-b| / max(1e-8, |a|, |b|)`, the relative error used by every gradient check.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1e-8_f64.max(a.abs()).max(b.abs())
}
