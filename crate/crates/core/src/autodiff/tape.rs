use super::{eval, kernels, Backend, Op};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

struct Node {
    value: Tensor,
    op: Option<Op>,
    inputs: Vec<usize>,
    requires_grad: bool,
}

/// Define-by-run record of array operations.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and the backward sweep is a single reverse pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    ops: usize,
}

/// Adjoints of the differentiable leaves, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros when the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Differentiable input (parameters, initial conditions).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, None, Vec::new(), true)
    }

    /// Number of recorded operations (leaves and constants excluded).
    pub fn len(&self) -> usize {
        self.ops
    }

    pub fn is_empty(&self) -> bool {
        self.ops == 0
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn op_at(&self, v: Var) -> Option<&Op> {
        self.nodes[v.0].op.as_ref()
    }

    pub fn inputs_of(&self, v: Var) -> Vec<Var> {
        self.nodes[v.0].inputs.iter().map(|&i| Var(i)).collect()
    }

    fn push(&mut self, value: Tensor, op: Option<Op>, inputs: Vec<usize>, requires_grad: bool) -> Var {
        if op.is_some() {
            self.ops += 1;
        }
        self.nodes.push(Node {
            value,
            op,
            inputs,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = &self.nodes[loss.0].value;
        if lv.len() != 1 {
            return Err(Error::Loss(format!("shape {:?} is not scalar", lv.shape())));
        }
        if !lv.item().is_finite() {
            return Err(Error::Loss(format!("value {}", lv.item())));
        }
        let mut adj: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            let Some(op) = &node.op else { continue };
            if !node.requires_grad {
                continue;
            }
            let Some(g) = adj[id].take() else { continue };
            for (slot, &inp) in node.inputs.iter().enumerate() {
                if !self.nodes[inp].requires_grad {
                    continue;
                }
                let mut acc = adj[inp]
                    .take()
                    .unwrap_or_else(|| vec![0.0; self.nodes[inp].value.len()]);
                self.accumulate(op, node, slot, &g, &mut acc);
                adj[inp] = Some(acc);
            }
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        for (id, a) in adj.into_iter().enumerate() {
            let node = &self.nodes[id];
            if node.op.is_none() && node.requires_grad {
                if let Some(a) = a {
                    grads[id] = Some(Tensor::new(node.value.shape(), a)?);
                }
            }
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    /// Adds the contribution of output adjoint `g` to input `slot`.
    fn accumulate(&self, op: &Op, node: &Node, slot: usize, g: &[f64], acc: &mut [f64]) {
        let input = |k: usize| &self.nodes[node.inputs[k]].value;
        let x = input(0);
        let y = &node.value;
        match op {
            Op::Add => kernels::add_into(acc, g),
            Op::Sub => {
                if slot == 0 {
                    kernels::add_into(acc, g)
                } else {
                    acc.iter_mut().zip(g).for_each(|(a, gi)| *a -= gi)
                }
            }
            Op::Mul => {
                let (a, b) = (input(0), input(1));
                if a.shape() == b.shape() {
                    let other = if slot == 0 { b } else { a };
                    for ((o, gi), v) in acc.iter_mut().zip(g).zip(other.data()) {
                        *o += gi * v;
                    }
                } else {
                    let plane = b.len();
                    let channels = a.len() / plane;
                    for ch in 0..channels {
                        let gs = &g[ch * plane..(ch + 1) * plane];
                        if slot == 0 {
                            let o = &mut acc[ch * plane..(ch + 1) * plane];
                            for ((o, gi), v) in o.iter_mut().zip(gs).zip(b.data()) {
                                *o += gi * v;
                            }
                        } else {
                            let av = &a.data()[ch * plane..(ch + 1) * plane];
                            for ((o, gi), v) in acc.iter_mut().zip(gs).zip(av) {
                                *o += gi * v;
                            }
                        }
                    }
                }
            }
            Op::Scale(s) | Op::Affine(s, _) => {
                for (o, gi) in acc.iter_mut().zip(g) {
                    *o += s * gi;
                }
            }
            Op::MulScalar => {
                if slot == 0 {
                    let s = input(1).item();
                    for (o, gi) in acc.iter_mut().zip(g) {
                        *o += s * gi;
                    }
                } else {
                    acc[0] += g.iter().zip(x.data()).map(|(gi, v)| gi * v).sum::<f64>();
                }
            }
            Op::Tanh => {
                for ((o, gi), v) in acc.iter_mut().zip(g).zip(y.data()) {
                    *o += gi * (1.0 - v * v);
                }
            }
            Op::Sigmoid => {
                for ((o, gi), v) in acc.iter_mut().zip(g).zip(y.data()) {
                    *o += gi * v * (1.0 - v);
                }
            }
            Op::Relu => {
                for ((o, gi), v) in acc.iter_mut().zip(g).zip(x.data()) {
                    if *v > 0.0 {
                        *o += gi;
                    }
                }
            }
            Op::Clamp(lo, hi) => {
                for ((o, gi), v) in acc.iter_mut().zip(g).zip(x.data()) {
                    if *v > *lo && *v < *hi {
                        *o += gi;
                    }
                }
            }
            Op::Square => {
                for ((o, gi), v) in acc.iter_mut().zip(g).zip(x.data()) {
                    *o += 2.0 * v * gi;
                }
            }
            Op::Sum => {
                let g0 = g[0];
                acc.iter_mut().for_each(|o| *o += g0);
            }
            Op::Conv2d { k } => {
                let (w, b) = (input(1), input(2));
                let (cin, h, wd) = x.chw().expect("checked at record time");
                let cout = b.len();
                let (gx, gw, gb) = match slot {
                    0 => (Some(acc), None, None),
                    1 => (None, Some(acc), None),
                    _ => (None, None, Some(acc)),
                };
                kernels::conv2d_adjoint(x.data(), w.data(), g, gx, gw, gb, cin, cout, h, wd, *k);
            }
            Op::Shift { sx, sy } => {
                let (c, h, w) = x.chw().expect("checked at record time");
                kernels::shift_add(g, acc, c, h, w, -sx, -sy);
            }
            Op::Slice { start, .. } => {
                let plane = x.shape()[1] * x.shape()[2];
                kernels::add_into(&mut acc[start * plane..start * plane + g.len()], g);
            }
            Op::Concat => {
                let offset: usize = (0..slot).map(|k| input(k).len()).sum();
                kernels::add_into(acc, &g[offset..offset + acc.len()]);
            }
            Op::Poisson(solver) => {
                // symmetric pseudo-inverse: the adjoint is the same solve
                kernels::add_into(acc, &solver.solve_pseudo(g));
            }
            Op::FaceToCenter => {
                let (h, w) = (x.shape()[1], x.shape()[2]);
                kernels::face_to_center_adjoint(g, acc, h, w);
            }
            Op::CenterToFace => {
                let (h, w) = (x.shape()[1], x.shape()[2]);
                kernels::center_to_face_adjoint(g, acc, h, w);
            }
            Op::Divergence { dx, dy } => {
                let (h, w) = (x.shape()[1], x.shape()[2]);
                kernels::divergence_adjoint(g, acc, h, w, *dx, *dy);
            }
            Op::Gradient { dx, dy } => {
                let (h, w) = (x.shape()[1], x.shape()[2]);
                kernels::gradient_adjoint(g, acc, h, w, *dx, *dy);
            }
            Op::Vorticity { dx, dy } => {
                let (h, w) = (x.shape()[1], x.shape()[2]);
                kernels::vorticity_adjoint(g, acc, h, w, *dx, *dy);
            }
        }
    }
}

impl Backend for Tape {
    type Value = Var;

    fn value<'a>(&'a self, v: &'a Var) -> &'a Tensor {
        &self.nodes[v.0].value
    }

    fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, None, Vec::new(), false)
    }

    fn parameter(&mut self, t: Tensor) -> Var {
        self.leaf(t)
    }

    fn apply(&mut self, op: Op, inputs: &[&Var]) -> Result<Var> {
        let values: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
        let value = eval(&op, &values)?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let ids = inputs.iter().map(|v| v.0).collect();
        Ok(self.push(value, Some(op), ids, requires_grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor {
        Tensor::new(&[1, 1, v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1.0, -2.0, 3.0]));
        let s = tape.sum(&x).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(x).data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn mean_squared_deviation_gradient() {
        let mut tape = Tape::new();
        let xs = [0.5, 2.0, -1.0, 4.0];
        let cs = [1.0, 1.0, 0.0, 3.0];
        let x = tape.leaf(t(&xs));
        let c = tape.constant(t(&cs));
        let d = tape.sub(&x, &c).unwrap();
        let sq = tape.square(&d).unwrap();
        let m = tape.mean(&sq).unwrap();
        let g = tape.backward(m).unwrap();
        for k in 0..4 {
            let expect = 2.0 * (xs[k] - cs[k]) / 4.0;
            assert!((g.wrt(x).data()[k] - expect).abs() < 1e-15);
        }
        assert!(g.get(c).is_none());
    }

    #[test]
    fn chain_records_four_ops() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(&[1.0, 2.0]));
        let b = tape.leaf(t(&[3.0, 4.0]));
        let ab = tape.mul(&a, &b).unwrap();
        let sq = tape.square(&ab).unwrap();
        let _y = tape.mean(&sq).unwrap();
        assert_eq!(tape.len(), 4);
    }

    #[test]
    fn fan_out_accumulates() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3.0]));
        let y = tape.mul(&x, &x).unwrap();
        let z = tape.add(&y, &x).unwrap();
        let g = tape.backward(z).unwrap();
        assert_eq!(g.wrt(x).item(), 7.0);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::Loss(_))));
        let nan = tape.leaf(t(&[f64::NAN]));
        let s = tape.sum(&nan).unwrap();
        assert!(matches!(tape.backward(s), Err(Error::Loss(_))));
    }
}
