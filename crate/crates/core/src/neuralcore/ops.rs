//! Forward and backward kernels for the fixed set of layers the classifier
//! uses. The tape records these; they are also usable directly.

use super::tensor::{axpy, dot};
use super::Tensor;
use crate::error::{Error, Result};

/// Lower clip for binary cross-entropy probabilities.
pub const BCE_EPS: f64 = 1e-7;

/// Largest `f64` strictly below one.
const ONE_MINUS_ULP: f64 = 1.0 - f64::EPSILON / 2.0;

fn expect_rank(t: &Tensor, rank: usize, what: &str) -> Result<()> {
    if t.shape().len() != rank {
        return Err(Error::Shape(format!(
            "{what}: expected rank {rank}, got shape {:?}",
            t.shape()
        )));
    }
    Ok(())
}

/// Valid cross-correlation along the sequence axis.
///
/// `x: [L, D]`, `w: [F, k, D]`, `b: [F]` → `[L − k + 1, F]`.
pub fn conv1d_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    expect_rank(x, 2, "conv1d input")?;
    expect_rank(w, 3, "conv1d kernels")?;
    let (l, d) = (x.shape()[0], x.shape()[1]);
    let (f, k, wd) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    if wd != d || b.len() != f {
        return Err(Error::Shape(format!(
            "conv1d: input {:?}, kernels {:?}, bias {:?}",
            x.shape(),
            w.shape(),
            b.shape()
        )));
    }
    if l < k {
        return Err(Error::Shape(format!(
            "conv1d: sequence length {l} shorter than kernel width {k}"
        )));
    }
    let out_len = l - k + 1;
    let span = k * d;
    let mut out = vec![0.0; out_len * f];
    for t in 0..out_len {
        let window = &x.data()[t * d..t * d + span];
        for fi in 0..f {
            out[t * f + fi] = b.data()[fi] + dot(window, &w.data()[fi * span..(fi + 1) * span]);
        }
    }
    Tensor::new(vec![out_len, f], out)
}

pub fn conv1d_backward(x: &Tensor, w: &Tensor, g: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let d = x.shape()[1];
    let (f, k) = (w.shape()[0], w.shape()[1]);
    let span = k * d;
    let out_len = g.len() / f;
    let mut gx = vec![0.0; x.len()];
    let mut gw = vec![0.0; w.len()];
    let mut gb = vec![0.0; f];
    for t in 0..out_len {
        let window = &x.data()[t * d..t * d + span];
        for fi in 0..f {
            let go = g[t * f + fi];
            if go == 0.0 {
                continue;
            }
            gb[fi] += go;
            axpy(go, &w.data()[fi * span..(fi + 1) * span], &mut gx[t * d..t * d + span]);
            axpy(go, window, &mut gw[fi * span..(fi + 1) * span]);
        }
    }
    (gx, gw, gb)
}

/// Non-overlapping max pooling (stride = window). Returns the pooled tensor
/// and, per output cell, the flat input index that won (first on ties).
pub fn maxpool1d_forward(x: &Tensor, window: usize) -> Result<(Tensor, Vec<usize>)> {
    expect_rank(x, 2, "maxpool1d input")?;
    let (l, f) = (x.shape()[0], x.shape()[1]);
    if window == 0 || l < window {
        return Err(Error::Shape(format!(
            "maxpool1d: length {l} shorter than window {window}"
        )));
    }
    let out_len = l / window;
    let mut out = vec![0.0; out_len * f];
    let mut argmax = vec![0usize; out_len * f];
    for o in 0..out_len {
        for c in 0..f {
            let mut best = o * window * f + c;
            for i in 1..window {
                let idx = (o * window + i) * f + c;
                if x.data()[idx] > x.data()[best] {
                    best = idx;
                }
            }
            out[o * f + c] = x.data()[best];
            argmax[o * f + c] = best;
        }
    }
    Ok((Tensor::new(vec![out_len, f], out)?, argmax))
}

pub fn maxpool1d_backward(input_len: usize, argmax: &[usize], g: &[f64]) -> Vec<f64> {
    let mut gx = vec![0.0; input_len];
    for (&src, &go) in argmax.iter().zip(g) {
        gx[src] += go;
    }
    gx
}

/// Logistic function, clipped so the result stays strictly inside (0, 1).
pub fn sigmoid(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, ONE_MINUS_ULP)
}

/// Per-step activations kept for backpropagation through time.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCache {
    /// `[T, 4H]` post-activation gates in order input, forget, cell, output.
    gates: Vec<f64>,
    /// `[T + 1, H]` cell states, row 0 is the zero initial state.
    cells: Vec<f64>,
    /// `[T + 1, H]` hidden states, row 0 is the zero initial state.
    hiddens: Vec<f64>,
}

/// Single-layer LSTM from a zero state; returns the final hidden state `[H]`.
///
/// `x: [T, D]`, `w_ih: [4H, D]`, `w_hh: [4H, H]`, `b: [4H]`, gate blocks in
/// order input, forget, cell candidate, output.
pub fn lstm_forward(x: &Tensor, w_ih: &Tensor, w_hh: &Tensor, b: &Tensor) -> Result<(Tensor, LstmCache)> {
    expect_rank(x, 2, "lstm input")?;
    expect_rank(w_ih, 2, "lstm w_ih")?;
    expect_rank(w_hh, 2, "lstm w_hh")?;
    let (t_len, d) = (x.shape()[0], x.shape()[1]);
    let h = w_hh.shape()[1];
    if t_len == 0 {
        return Err(Error::Shape("lstm: empty sequence".into()));
    }
    if w_ih.shape() != [4 * h, d] || w_hh.shape() != [4 * h, h] || b.len() != 4 * h {
        return Err(Error::Shape(format!(
            "lstm: input {:?}, w_ih {:?}, w_hh {:?}, bias {:?}",
            x.shape(),
            w_ih.shape(),
            w_hh.shape(),
            b.shape()
        )));
    }
    let mut gates = vec![0.0; t_len * 4 * h];
    let mut cells = vec![0.0; (t_len + 1) * h];
    let mut hiddens = vec![0.0; (t_len + 1) * h];
    for t in 0..t_len {
        let xt = &x.data()[t * d..(t + 1) * d];
        let (prev_h, next_h) = hiddens.split_at_mut((t + 1) * h);
        let h_prev = &prev_h[t * h..];
        let z = &mut gates[t * 4 * h..(t + 1) * 4 * h];
        for r in 0..4 * h {
            z[r] = b.data()[r]
                + dot(&w_ih.data()[r * d..(r + 1) * d], xt)
                + dot(&w_hh.data()[r * h..(r + 1) * h], h_prev);
        }
        for j in 0..h {
            z[j] = sigmoid(z[j]);
            z[h + j] = sigmoid(z[h + j]);
            z[2 * h + j] = z[2 * h + j].tanh();
            z[3 * h + j] = sigmoid(z[3 * h + j]);
        }
        let (prev_c, next_c) = cells.split_at_mut((t + 1) * h);
        let c_prev = &prev_c[t * h..];
        for j in 0..h {
            let c = z[h + j] * c_prev[j] + z[j] * z[2 * h + j];
            next_c[j] = c;
            next_h[j] = z[3 * h + j] * c.tanh();
        }
    }
    let out = hiddens[t_len * h..].to_vec();
    Ok((Tensor::vector(out), LstmCache { gates, cells, hiddens }))
}

/// Gradients `(gx, g_w_ih, g_w_hh, g_b)` given the gradient of the final hidden state.
pub fn lstm_backward(
    x: &Tensor,
    w_ih: &Tensor,
    w_hh: &Tensor,
    cache: &LstmCache,
    g: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let (t_len, d) = (x.shape()[0], x.shape()[1]);
    let h = w_hh.shape()[1];
    let mut gx = vec![0.0; x.len()];
    let mut gwih = vec![0.0; w_ih.len()];
    let mut gwhh = vec![0.0; w_hh.len()];
    let mut gb = vec![0.0; 4 * h];
    let mut dh = g.to_vec();
    let mut dc = vec![0.0; h];
    let mut dz = vec![0.0; 4 * h];
    let mut dh_prev = vec![0.0; h];
    for t in (0..t_len).rev() {
        let gate = &cache.gates[t * 4 * h..(t + 1) * 4 * h];
        let c = &cache.cells[(t + 1) * h..(t + 2) * h];
        let c_prev = &cache.cells[t * h..(t + 1) * h];
        let h_prev = &cache.hiddens[t * h..(t + 1) * h];
        for j in 0..h {
            let (i, f, gg, o) = (gate[j], gate[h + j], gate[2 * h + j], gate[3 * h + j]);
            let tc = c[j].tanh();
            let d_o = dh[j] * tc;
            let dcj = dc[j] + dh[j] * o * (1.0 - tc * tc);
            dz[j] = dcj * gg * i * (1.0 - i);
            dz[h + j] = dcj * c_prev[j] * f * (1.0 - f);
            dz[2 * h + j] = dcj * i * (1.0 - gg * gg);
            dz[3 * h + j] = d_o * o * (1.0 - o);
            dc[j] = dcj * f;
        }
        let xt = &x.data()[t * d..(t + 1) * d];
        dh_prev.iter_mut().for_each(|v| *v = 0.0);
        let gxt = &mut gx[t * d..(t + 1) * d];
        for r in 0..4 * h {
            let dzr = dz[r];
            if dzr == 0.0 {
                continue;
            }
            gb[r] += dzr;
            axpy(dzr, xt, &mut gwih[r * d..(r + 1) * d]);
            axpy(dzr, h_prev, &mut gwhh[r * h..(r + 1) * h]);
            axpy(dzr, &w_ih.data()[r * d..(r + 1) * d], gxt);
            axpy(dzr, &w_hh.data()[r * h..(r + 1) * h], &mut dh_prev);
        }
        std::mem::swap(&mut dh, &mut dh_prev);
    }
    (gx, gwih, gwhh, gb)
}

/// Affine map `W·x + b`. `x` is read flat, so any shape with `N` elements works.
pub fn dense_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    expect_rank(w, 2, "dense weight")?;
    let (m, n) = (w.shape()[0], w.shape()[1]);
    if x.len() != n || b.len() != m {
        return Err(Error::Shape(format!(
            "dense: input {:?}, weight {:?}, bias {:?}",
            x.shape(),
            w.shape(),
            b.shape()
        )));
    }
    let out = (0..m)
        .map(|r| b.data()[r] + dot(&w.data()[r * n..(r + 1) * n], x.data()))
        .collect();
    Ok(Tensor::vector(out))
}

pub fn dense_backward(x: &Tensor, w: &Tensor, g: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = w.shape()[1];
    let mut gx = vec![0.0; n];
    let mut gw = vec![0.0; w.len()];
    for (r, &go) in g.iter().enumerate() {
        if go == 0.0 {
            continue;
        }
        axpy(go, &w.data()[r * n..(r + 1) * n], &mut gx);
        axpy(go, x.data(), &mut gw[r * n..(r + 1) * n]);
    }
    (gx, gw, g.to_vec())
}

fn clip_prob(p: f64) -> f64 {
    p.clamp(BCE_EPS, 1.0 - BCE_EPS)
}

/// `−[y·ln p + (1−y)·ln(1−p)]` with `p` clipped to `[ε, 1−ε]`.
pub fn bce_loss(p: f64, y: f64) -> f64 {
    let p = clip_prob(p);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Derivative of [`bce_loss`] with respect to `p`; zero where the clip is active.
pub fn bce_grad(p: f64, y: f64) -> f64 {
    if !(BCE_EPS..=1.0 - BCE_EPS).contains(&p) {
        return 0.0;
    }
    -y / p + (1.0 - y) / (1.0 - p)
}

/// Mean binary cross-entropy over a batch.
pub fn bce_loss_batch(ps: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(ps.len(), ys.len());
    ps.iter().zip(ys).map(|(&p, &y)| bce_loss(p, y)).sum::<f64>() / ps.len() as f64
}

/// Identity; the reversal only happens on the way back.
pub fn grl_forward(x: &Tensor, _lambda: f64) -> Tensor {
    x.clone()
}

/// `−λ·g`, elementwise.
pub fn grl_backward(g: &[f64], lambda: f64) -> Vec<f64> {
    g.iter().map(|&v| -(lambda * v)).collect()
}
