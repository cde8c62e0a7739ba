//! Reverse-mode automatic differentiation over whole-array operations.
//!
//! Numerical code is written once against [`Backend`]. The [`Eager`]
//! backend just evaluates; the [`Tape`] backend evaluates through the same
//! kernels and records each operation so that [`Tape::backward`] can replay
//! the adjoints. Both paths therefore produce bit-identical forward values.

pub mod gradcheck;
pub mod kernels;
mod selfcheck;
mod tape;

use std::sync::Arc;

pub use gradcheck::{grad_check, GradCheckReport};
pub use selfcheck::check_primitives;
pub use tape::{Gradients, Tape, Var};

use crate::error::{Error, Result};
use crate::solver::poisson::PoissonSolver;
use crate::tensor::Tensor;

/// Recordable primitives.
#[derive(Clone, Debug)]
pub enum Op {
    Add,
    Sub,
    /// Elementwise product; the second operand may have one channel and is
    /// then broadcast over the channels of the first.
    Mul,
    Scale(f64),
    /// `a * x + b`
    Affine(f64, f64),
    /// Product with a one-element tensor.
    MulScalar,
    Tanh,
    Sigmoid,
    Relu,
    Clamp(f64, f64),
    Square,
    Sum,
    /// Inputs: `x [Cin, H, W]`, `weight [Cout, Cin, k, k]`, `bias [Cout]`.
    Conv2d {
        k: usize,
    },
    Shift {
        sx: isize,
        sy: isize,
    },
    Slice {
        start: usize,
        len: usize,
    },
    Concat,
    Poisson(Arc<PoissonSolver>),
    FaceToCenter,
    CenterToFace,
    Divergence {
        dx: f64,
        dy: f64,
    },
    Gradient {
        dx: f64,
        dy: f64,
    },
    Vorticity {
        dx: f64,
        dy: f64,
    },
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Scale(_) => "scale",
            Op::Affine(..) => "affine",
            Op::MulScalar => "mul_scalar",
            Op::Tanh => "tanh",
            Op::Sigmoid => "sigmoid",
            Op::Relu => "relu",
            Op::Clamp(..) => "clamp",
            Op::Square => "square",
            Op::Sum => "sum",
            Op::Conv2d { .. } => "conv2d",
            Op::Shift { .. } => "shift",
            Op::Slice { .. } => "slice",
            Op::Concat => "concat",
            Op::Poisson(_) => "poisson",
            Op::FaceToCenter => "face_to_center",
            Op::CenterToFace => "center_to_face",
            Op::Divergence { .. } => "divergence",
            Op::Gradient { .. } => "gradient",
            Op::Vorticity { .. } => "vorticity",
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn arity(op: &Op, n: usize) -> Result<()> {
    let want = match op {
        Op::Add | Op::Sub | Op::Mul | Op::MulScalar => 2,
        Op::Conv2d { .. } => 3,
        Op::Concat => {
            return if n == 0 {
                Err(Error::shape("concat", "no inputs"))
            } else {
                Ok(())
            }
        }
        _ => 1,
    };
    if n != want {
        return Err(Error::shape(op.name(), format!("expected {want} inputs, got {n}")));
    }
    Ok(())
}

fn same_shape(op: &Op, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op.name(), format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn staggered(op: &Op, a: &Tensor) -> Result<(usize, usize)> {
    match a.shape() {
        [2, h, w] => Ok((*h, *w)),
        s => Err(Error::shape(op.name(), format!("expected [2, H, W], got {s:?}"))),
    }
}

fn scalar_field(op: &Op, a: &Tensor) -> Result<(usize, usize)> {
    match a.shape() {
        [1, h, w] => Ok((*h, *w)),
        s => Err(Error::shape(op.name(), format!("expected [1, H, W], got {s:?}"))),
    }
}

/// Evaluates a primitive. Shared by every backend.
pub fn eval(op: &Op, inputs: &[&Tensor]) -> Result<Tensor> {
    arity(op, inputs.len())?;
    let a = inputs[0];
    let out = match op {
        Op::Add | Op::Sub => {
            same_shape(op, a, inputs[1])?;
            if matches!(op, Op::Add) {
                a.zip_map(inputs[1], |x, y| x + y)
            } else {
                a.zip_map(inputs[1], |x, y| x - y)
            }
        }
        Op::Mul => {
            let b = inputs[1];
            if a.shape() == b.shape() {
                a.zip_map(b, |x, y| x * y)
            } else {
                let (c, h, w) = a.chw()?;
                if b.shape() != [1, h, w] {
                    return Err(Error::shape(
                        "mul",
                        format!("cannot broadcast {:?} onto {:?}", b.shape(), a.shape()),
                    ));
                }
                let plane = h * w;
                let mut out = a.clone();
                for ch in 0..c {
                    for (o, y) in out.data_mut()[ch * plane..(ch + 1) * plane].iter_mut().zip(b.data()) {
                        *o *= y;
                    }
                }
                out
            }
        }
        Op::Scale(s) => a.map(|x| x * s),
        Op::Affine(s, o) => a.map(|x| s * x + o),
        Op::MulScalar => {
            let s = inputs[1];
            if s.len() != 1 {
                return Err(Error::shape(
                    "mul_scalar",
                    format!("scalar operand has shape {:?}", s.shape()),
                ));
            }
            let s = s.item();
            a.map(|x| x * s)
        }
        Op::Tanh => a.map(f64::tanh),
        Op::Sigmoid => a.map(sigmoid),
        Op::Relu => a.map(|x| if x > 0.0 { x } else { 0.0 }),
        Op::Clamp(lo, hi) => a.map(|x| x.clamp(*lo, *hi)),
        Op::Square => a.map(|x| x * x),
        Op::Sum => Tensor::scalar(a.sum()),
        Op::Conv2d { k } => {
            let (w, b) = (inputs[1], inputs[2]);
            let (cin, h, wd) = a.chw()?;
            let cout = b.len();
            if b.shape() != [cout] || w.shape() != [cout, cin, *k, *k] {
                return Err(Error::shape(
                    "conv2d",
                    format!("input {:?}, weight {:?}, bias {:?}", a.shape(), w.shape(), b.shape()),
                ));
            }
            let mut out = vec![0.0; cout * h * wd];
            kernels::conv2d(a.data(), w.data(), b.data(), &mut out, cin, cout, h, wd, *k);
            Tensor::new(&[cout, h, wd], out)?
        }
        Op::Shift { sx, sy } => {
            let (c, h, w) = a.chw()?;
            let mut out = vec![0.0; a.len()];
            kernels::shift(a.data(), &mut out, c, h, w, *sx, *sy);
            Tensor::new(a.shape(), out)?
        }
        Op::Slice { start, len } => {
            let (c, h, w) = a.chw()?;
            if start + len > c || *len == 0 {
                return Err(Error::shape(
                    "slice",
                    format!("channels {start}..{} of {c}", start + len),
                ));
            }
            let plane = h * w;
            Tensor::new(&[*len, h, w], a.data()[start * plane..(start + len) * plane].to_vec())?
        }
        Op::Concat => {
            let (_, h, w) = a.chw()?;
            let mut data = Vec::new();
            let mut c = 0;
            for t in inputs {
                let (ci, hi, wi) = t.chw()?;
                if (hi, wi) != (h, w) {
                    return Err(Error::shape("concat", format!("{:?} vs {:?}", t.shape(), a.shape())));
                }
                c += ci;
                data.extend_from_slice(t.data());
            }
            Tensor::new(&[c, h, w], data)?
        }
        Op::Poisson(solver) => {
            let (h, w) = scalar_field(op, a)?;
            if (h, w) != (solver.grid().ny, solver.grid().nx) {
                return Err(Error::shape(
                    "poisson",
                    format!("field {h}x{w} on solver grid {:?}", solver.grid()),
                ));
            }
            Tensor::new(a.shape(), solver.solve(a.data())?)?
        }
        Op::FaceToCenter => {
            let (h, w) = staggered(op, a)?;
            let mut out = vec![0.0; a.len()];
            kernels::face_to_center(a.data(), &mut out, h, w);
            Tensor::new(a.shape(), out)?
        }
        Op::CenterToFace => {
            let (h, w) = staggered(op, a)?;
            let mut out = vec![0.0; a.len()];
            kernels::center_to_face(a.data(), &mut out, h, w);
            Tensor::new(a.shape(), out)?
        }
        Op::Divergence { dx, dy } => {
            let (h, w) = staggered(op, a)?;
            let mut out = vec![0.0; h * w];
            kernels::divergence(a.data(), &mut out, h, w, *dx, *dy);
            Tensor::new(&[1, h, w], out)?
        }
        Op::Gradient { dx, dy } => {
            let (h, w) = scalar_field(op, a)?;
            let mut out = vec![0.0; 2 * h * w];
            kernels::gradient(a.data(), &mut out, h, w, *dx, *dy);
            Tensor::new(&[2, h, w], out)?
        }
        Op::Vorticity { dx, dy } => {
            let (h, w) = staggered(op, a)?;
            let mut out = vec![0.0; h * w];
            kernels::vorticity(a.data(), &mut out, h, w, *dx, *dy);
            Tensor::new(&[1, h, w], out)?
        }
    };
    Ok(out)
}

/// Array arithmetic that may or may not be recorded for differentiation.
pub trait Backend {
    type Value: Clone;

    fn value<'a>(&'a self, v: &'a Self::Value) -> &'a Tensor;
    fn constant(&mut self, t: Tensor) -> Self::Value;
    /// A value gradients are taken with respect to, where supported.
    fn parameter(&mut self, t: Tensor) -> Self::Value {
        self.constant(t)
    }
    fn apply(&mut self, op: Op, inputs: &[&Self::Value]) -> Result<Self::Value>;

    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        self.apply(Op::Add, &[a, b])
    }
    fn sub(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        self.apply(Op::Sub, &[a, b])
    }
    fn mul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        self.apply(Op::Mul, &[a, b])
    }
    fn scale(&mut self, a: &Self::Value, s: f64) -> Result<Self::Value> {
        self.apply(Op::Scale(s), &[a])
    }
    fn affine(&mut self, a: &Self::Value, s: f64, o: f64) -> Result<Self::Value> {
        self.apply(Op::Affine(s, o), &[a])
    }
    fn mul_scalar(&mut self, a: &Self::Value, s: &Self::Value) -> Result<Self::Value> {
        self.apply(Op::MulScalar, &[a, s])
    }
    fn tanh(&mut self, a: &Self::Value) -> Result<Self::Value> {
        self.apply(Op::Tanh, &[a])
    }
    fn sigmoid(&mut self, a: &Self::Value) -> Result<Self::Value> {
        self.apply(Op::Sigmoid, &[a])
    }
    fn relu(&mut self, a: &Self::Value) -> Result<Self::Value> {
        self.apply(Op::Relu, &[a])
    }
    fn clamp(&mut self, a: &Self::Value, lo: f64, hi: f64) -> Result<Self::Value> {
        self.apply(Op::Clamp(lo, hi), &[a])
    }
    fn square(&mut self, a: &Self::Value) -> Result<Self::Value> {
        self.apply(Op::Square, &[a])
    }
    fn sum(&mut self, a: &Self::Value) -> Result<Self::Value> {
        self.apply(Op::Sum, &[a])
    }
    /// Recorded as a sum followed by a scale.
    fn mean(&mut self, a: &Self::Value) -> Result<Self::Value> {
        let n = self.value(a).len() as f64;
        let s = self.sum(a)?;
        self.scale(&s, 1.0 / n)
    }
    fn conv2d(&mut self, x: &Self::Value, weight: &Self::Value, bias: &Self::Value) -> Result<Self::Value> {
        let k = match self.value(weight).shape() {
            [_, _, k, _] => *k,
            s => return Err(Error::shape("conv2d", format!("weight shape {s:?}"))),
        };
        self.apply(Op::Conv2d { k }, &[x, weight, bias])
    }
    fn shift(&mut self, a: &Self::Value, sx: isize, sy: isize) -> Result<Self::Value> {
        self.apply(Op::Shift { sx, sy }, &[a])
    }
    fn slice_channels(&mut self, a: &Self::Value, start: usize, len: usize) -> Result<Self::Value> {
        self.apply(Op::Slice { start, len }, &[a])
    }
    fn concat_channels(&mut self, parts: &[&Self::Value]) -> Result<Self::Value> {
        self.apply(Op::Concat, parts)
    }
    fn poisson(&mut self, rhs: &Self::Value, solver: &Arc<PoissonSolver>) -> Result<Self::Value> {
        self.apply(Op::Poisson(Arc::clone(solver)), &[rhs])
    }
    fn face_to_center(&mut self, u: &Self::Value) -> Result<Self::Value> {
        self.apply(Op::FaceToCenter, &[u])
    }
    fn center_to_face(&mut self, c: &Self::Value) -> Result<Self::Value> {
        self.apply(Op::CenterToFace, &[c])
    }
    fn divergence(&mut self, u: &Self::Value, dx: f64, dy: f64) -> Result<Self::Value> {
        self.apply(Op::Divergence { dx, dy }, &[u])
    }
    fn gradient(&mut self, p: &Self::Value, dx: f64, dy: f64) -> Result<Self::Value> {
        self.apply(Op::Gradient { dx, dy }, &[p])
    }
    fn vorticity(&mut self, u: &Self::Value, dx: f64, dy: f64) -> Result<Self::Value> {
        self.apply(Op::Vorticity { dx, dy }, &[u])
    }
}

/// Plain evaluation with no recording ("inference mode").
#[derive(Clone, Copy, Debug, Default)]
pub struct Eager;

impl Backend for Eager {
    type Value = Tensor;

    fn value<'a>(&'a self, v: &'a Tensor) -> &'a Tensor {
        v
    }

    fn constant(&mut self, t: Tensor) -> Tensor {
        t
    }

    fn apply(&mut self, op: Op, inputs: &[&Tensor]) -> Result<Tensor> {
        eval(&op, inputs)
    }
}
