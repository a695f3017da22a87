//! Gradient tape: operations are appended in execution order and replayed in
//! reverse to accumulate gradients.

use super::ops::{self, LstmCache};
use super::params::{ParamGrads, ParamId, ParamSet};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Mean(Vec<Var>),
    Conv1d { x: Var, w: Var, b: Var },
    MaxPool { x: Var, argmax: Vec<usize> },
    Lstm { x: Var, w_ih: Var, w_hh: Var, b: Var, cache: LstmCache },
    Dense { x: Var, w: Var, b: Var },
    Sigmoid(Var),
    Bce { p: Var, y: f64 },
    Grl { x: Var, lambda: f64 },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Single-owner record of a forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        value.ensure_finite("tape node output")?;
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Constant input; receives a gradient but is not a parameter.
    pub fn input(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Input)
    }

    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: params.value(id).clone(),
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::Shape(format!("add: {:?} vs {:?}", va.shape(), vb.shape())));
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        self.push(out, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::Shape(format!("mul: {:?} vs {:?}", va.shape(), vb.shape())));
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        self.push(out, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let va = self.value(a);
        let data = va.data().iter().map(|x| x * c).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        self.push(out, Op::Scale(a, c))
    }

    /// Mean of scalar nodes.
    pub fn mean(&mut self, items: &[Var]) -> Result<Var> {
        if items.is_empty() {
            return Err(Error::Shape("mean of zero items".into()));
        }
        let mut sum = 0.0;
        for &v in items {
            let t = self.value(v);
            if !t.is_scalar() {
                return Err(Error::Shape(format!("mean: non-scalar item {:?}", t.shape())));
            }
            sum += t.item();
        }
        self.push(Tensor::scalar(sum / items.len() as f64), Op::Mean(items.to_vec()))
    }

    pub fn conv1d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let out = ops::conv1d_forward(self.value(x), self.value(w), self.value(b))?;
        self.push(out, Op::Conv1d { x, w, b })
    }

    pub fn maxpool1d(&mut self, x: Var, window: usize) -> Result<Var> {
        let (out, argmax) = ops::maxpool1d_forward(self.value(x), window)?;
        self.push(out, Op::MaxPool { x, argmax })
    }

    pub fn lstm(&mut self, x: Var, w_ih: Var, w_hh: Var, b: Var) -> Result<Var> {
        let (out, cache) =
            ops::lstm_forward(self.value(x), self.value(w_ih), self.value(w_hh), self.value(b))?;
        self.push(out, Op::Lstm { x, w_ih, w_hh, b, cache })
    }

    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let out = ops::dense_forward(self.value(x), self.value(w), self.value(b))?;
        self.push(out, Op::Dense { x, w, b })
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let data = vx.data().iter().map(|&v| ops::sigmoid(v)).collect();
        let out = Tensor::new(vx.shape().to_vec(), data)?;
        self.push(out, Op::Sigmoid(x))
    }

    /// Binary cross-entropy of a scalar probability node against `y ∈ {0, 1}`.
    pub fn bce(&mut self, p: Var, y: f64) -> Result<Var> {
        let vp = self.value(p);
        if !vp.is_scalar() {
            return Err(Error::Shape(format!("bce: non-scalar probability {:?}", vp.shape())));
        }
        let loss = ops::bce_loss(vp.item(), y);
        self.push(Tensor::scalar(loss), Op::Bce { p, y })
    }

    /// Gradient reversal: identity forward, `−λ·g` backward.
    pub fn grl(&mut self, x: Var, lambda: f64) -> Result<Var> {
        let out = ops::grl_forward(self.value(x), lambda);
        self.push(out, Op::Grl { x, lambda })
    }

    /// Reverse accumulation from a scalar `loss`. Nodes that receive no
    /// upstream gradient are skipped entirely.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Shape(format!(
                "backward from non-scalar node of shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input | Op::Param(_) => {}
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.clone());
                }
                Op::Mul(a, b) => {
                    let ga = g.iter().zip(self.value(*b).data()).map(|(g, y)| g * y).collect();
                    let gb = g.iter().zip(self.value(*a).data()).map(|(g, x)| g * x).collect();
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Scale(a, c) => {
                    accumulate(&mut grads, *a, g.iter().map(|v| v * c).collect());
                }
                Op::Mean(items) => {
                    let share = g[0] / items.len() as f64;
                    for &v in items {
                        accumulate(&mut grads, v, vec![share]);
                    }
                }
                Op::Conv1d { x, w, b } => {
                    let (gx, gw, gb) = ops::conv1d_backward(self.value(*x), self.value(*w), &g);
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *w, gw);
                    accumulate(&mut grads, *b, gb);
                }
                Op::MaxPool { x, argmax } => {
                    let gx = ops::maxpool1d_backward(self.value(*x).len(), argmax, &g);
                    accumulate(&mut grads, *x, gx);
                }
                Op::Lstm { x, w_ih, w_hh, b, cache } => {
                    let (gx, gwih, gwhh, gb) = ops::lstm_backward(
                        self.value(*x),
                        self.value(*w_ih),
                        self.value(*w_hh),
                        cache,
                        &g,
                    );
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *w_ih, gwih);
                    accumulate(&mut grads, *w_hh, gwhh);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Dense { x, w, b } => {
                    let (gx, gw, gb) = ops::dense_backward(self.value(*x), self.value(*w), &g);
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *w, gw);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Sigmoid(x) => {
                    let gx = g
                        .iter()
                        .zip(node.value.data())
                        .map(|(g, s)| g * s * (1.0 - s))
                        .collect();
                    accumulate(&mut grads, *x, gx);
                }
                Op::Bce { p, y } => {
                    let gp = g[0] * ops::bce_grad(self.value(*p).item(), *y);
                    accumulate(&mut grads, *p, vec![gp]);
                }
                Op::Grl { x, lambda } => {
                    // −0·g contributes nothing; skipping keeps λ = 0 runs bitwise
                    // identical to runs without the reversed branch.
                    if *lambda != 0.0 {
                        accumulate(&mut grads, *x, ops::grl_backward(&g, *lambda));
                    }
                }
            }
            grads[idx] = Some(g);
        }
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!("gradient at tape node {i}")));
                }
            }
        }
        Ok(Gradients { grads })
    }

    /// Sums gradients of every parameter leaf into a `ParamGrads` aligned with
    /// `params`; parameters not on the tape get zeros.
    pub fn param_grads(&self, grads: &Gradients, params: &ParamSet) -> ParamGrads {
        let mut out = params.zero_grads();
        for (idx, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(id), Some(g)) = (&node.op, &grads.grads[idx]) {
                let dst = out.get_mut(*id).data_mut();
                for (d, s) in dst.iter_mut().zip(g) {
                    *d += s;
                }
            }
        }
        out
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, contrib: Vec<f64>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, c) in existing.iter_mut().zip(contrib) {
                *e += c;
            }
        }
        slot @ None => *slot = Some(contrib),
    }
}

/// Per-node gradients from one backward pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient with respect to `v`, or `None` if the loss does not reach it.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuralcore::Partition;

    #[test]
    fn square() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::scalar(3.0)).unwrap();
        let y = tape.mul(x, x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(x).unwrap(), &[6.0]);
    }

    #[test]
    fn fan_out_accumulates() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::scalar(5.0)).unwrap();
        let y = tape.add(x, x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(x).unwrap(), &[2.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::vector(vec![1.0, 2.0])).unwrap();
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn unreached_params_get_zero() {
        let mut ps = ParamSet::default();
        let a = ps.add("a", Partition::Feature, Tensor::scalar(2.0)).unwrap();
        let b = ps.add("b", Partition::Domain, Tensor::vector(vec![1.0, 1.0])).unwrap();
        let mut tape = Tape::new();
        let va = tape.param(&ps, a);
        let _vb = tape.param(&ps, b);
        let loss = tape.mul(va, va).unwrap();
        let g = tape.backward(loss).unwrap();
        let pg = tape.param_grads(&g, &ps);
        assert_eq!(pg.get(a).data(), &[4.0]);
        assert_eq!(pg.get(b).data(), &[0.0, 0.0]);
    }

    #[test]
    fn grl_on_tape() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::vector(vec![1.0, -2.0])).unwrap();
        let r = tape.grl(x, 0.5).unwrap();
        assert_eq!(tape.value(r), tape.value(x));
        let c = tape.input(Tensor::vector(vec![0.3, -0.1])).unwrap();
        let prod = tape.mul(r, c).unwrap();
        let w = tape.input(Tensor::matrix(1, 2, vec![1.0, 1.0]).unwrap()).unwrap();
        let z = tape.input(Tensor::scalar(0.0)).unwrap();
        let sum = tape.dense(prod, w, z).unwrap();
        let g = tape.backward(sum).unwrap();
        assert_eq!(g.wrt(x).unwrap(), &[-0.15, 0.05]);
    }

    #[test]
    fn nan_input_rejected() {
        let mut tape = Tape::new();
        assert!(matches!(
            tape.input(Tensor::scalar(f64::NAN)),
            Err(Error::NonFinite(_))
        ));
    }
}
