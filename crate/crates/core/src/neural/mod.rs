//! Periodic convolutional networks: layer specs, forward pass on any
//! [`Backend`], initialization and parameter files.

mod params;

use serde::{Deserialize, Serialize};

pub use params::{load_params, save_params, NetworkParams};

use crate::autodiff::Backend;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    /// `2 sigmoid(x) - 1`, with range (-1, 1).
    ScaledSigmoid,
    Identity,
}

impl Activation {
    pub fn apply<B: Backend>(self, b: &mut B, x: &B::Value) -> Result<B::Value> {
        match self {
            Activation::Relu => b.relu(x),
            Activation::Tanh => b.tanh(x),
            Activation::Sigmoid => b.sigmoid(x),
            Activation::ScaledSigmoid => {
                let s = b.sigmoid(x)?;
                b.affine(&s, 2.0, -1.0)
            }
            Activation::Identity => Ok(x.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    /// 1 or 3.
    pub kernel: usize,
    pub activation: Activation,
    /// Concatenate the network input to this layer's input.
    #[serde(default)]
    pub concat_input: bool,
}

impl LayerSpec {
    pub fn new(in_ch: usize, out_ch: usize, kernel: usize, activation: Activation) -> Self {
        Self {
            in_ch,
            out_ch,
            kernel,
            activation,
            concat_input: false,
        }
    }

    pub fn param_count(&self) -> usize {
        self.out_ch * self.in_ch * self.kernel * self.kernel + self.out_ch
    }
}

/// A stack of periodic convolutions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub name: String,
    pub in_channels: usize,
    pub layers: Vec<LayerSpec>,
    /// Multiplies the initial weights of the last layer.
    pub final_scale: f64,
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::config(&self.name, "no layers"));
        }
        let mut prev = self.in_channels;
        for (l, spec) in self.layers.iter().enumerate() {
            if !matches!(spec.kernel, 1 | 3) {
                return Err(Error::config(format!("{}.{l}", self.name), "kernel must be 1 or 3"));
            }
            if spec.concat_input && l == 0 {
                return Err(Error::config(
                    format!("{}.0", self.name),
                    "first layer cannot concat its own input",
                ));
            }
            let expected = prev + if spec.concat_input { self.in_channels } else { 0 };
            if spec.in_ch != expected || spec.out_ch == 0 {
                return Err(Error::config(
                    format!("{}.{l}", self.name),
                    format!("takes {} channels, receives {expected}", spec.in_ch),
                ));
            }
            prev = spec.out_ch;
        }
        Ok(())
    }

    pub fn out_channels(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_ch)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::param_count).sum()
    }

    pub fn num_3x3(&self) -> usize {
        self.layers.iter().filter(|l| l.kernel == 3).count()
    }

    /// Width of the input window seen by one output cell. A concatenated
    /// input passes through fewer layers and never widens it.
    pub fn receptive_field(&self) -> usize {
        receptive_field(self.num_3x3())
    }

    /// Parameter names in storage order, `weight` before `bias` per layer.
    pub fn param_names(&self) -> Vec<String> {
        (0..self.layers.len())
            .flat_map(|l| [format!("{}.{l}.weight", self.name), format!("{}.{l}.bias", self.name)])
            .collect()
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.layers
            .iter()
            .flat_map(|l| [vec![l.out_ch, l.in_ch, l.kernel, l.kernel], vec![l.out_ch]])
            .collect()
    }

    /// Runs the stack. `params` holds weight and bias per layer in the order
    /// of [`Architecture::param_names`].
    pub fn forward<B: Backend>(&self, b: &mut B, params: &[B::Value], x: &B::Value) -> Result<B::Value> {
        if params.len() != 2 * self.layers.len() {
            return Err(Error::shape(
                "network",
                format!(
                    "{}: {} parameter arrays for {} layers",
                    self.name,
                    params.len(),
                    self.layers.len()
                ),
            ));
        }
        let mut h = x.clone();
        for (l, spec) in self.layers.iter().enumerate() {
            if spec.concat_input {
                h = b.concat_channels(&[&h, x])?;
            }
            let z = b.conv2d(&h, &params[2 * l], &params[2 * l + 1])?;
            h = spec.activation.apply(b, &z)?;
        }
        Ok(h)
    }
}

/// An architecture together with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub arch: Architecture,
    pub params: NetworkParams,
}

impl Network {
    pub fn new(arch: Architecture, params: NetworkParams) -> Result<Self> {
        arch.validate()?;
        params.check(&arch)?;
        Ok(Self { arch, params })
    }

    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let params = NetworkParams::init(&arch, seed);
        Ok(Self { arch, params })
    }

    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let params = NetworkParams::zeros(&arch);
        Ok(Self { arch, params })
    }
}

/// Stencil width of `n` stacked 3x3 convolutions.
pub fn receptive_field(n: usize) -> usize {
    2 * n + 1
}

/// Stencil-study family: `n` 3x3 layers of width `c`, then two 1x1 layers,
/// mapping the 2 velocity channels to 2 correction channels.
pub fn stencil_cnn(n: usize, c: usize, hidden: Activation) -> Architecture {
    let mut layers = vec![LayerSpec::new(2, c, 3, hidden)];
    for _ in 1..n {
        layers.push(LayerSpec::new(c, c, 3, hidden));
    }
    layers.push(LayerSpec::new(c, c, 1, hidden));
    layers.push(LayerSpec::new(c, 2, 1, Activation::Identity));
    Architecture {
        name: format!("cnn{n}"),
        in_channels: 2,
        layers,
        final_scale: 0.01,
    }
}

/// Offsets (relative to the perturbed cell, wrapped to the nearest image)
/// of the output cells that change when input `(c, j, i)` is bumped.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Footprint {
    pub x: (isize, isize),
    pub y: (isize, isize),
}

impl Footprint {
    pub fn width(&self) -> usize {
        (self.x.1 - self.x.0 + 1) as usize
    }

    pub fn height(&self) -> usize {
        (self.y.1 - self.y.0 + 1) as usize
    }
}

/// Measures the dependence region of `f` by perturbing one input value.
/// Returns `None` when no output changes.
pub fn footprint(
    f: impl Fn(&Tensor) -> Result<Tensor>,
    input: &Tensor,
    (c, j, i): (usize, usize, usize),
    delta: f64,
) -> Result<Option<Footprint>> {
    let base = f(input)?;
    let mut bumped = input.clone();
    *bumped.at_mut(c, j, i) += delta;
    let out = f(&bumped)?;
    let (oc, h, w) = out.chw()?;
    let wrap = |d: isize, n: usize| {
        let n = n as isize;
        (d + n / 2).rem_euclid(n) - n / 2
    };
    let mut fp: Option<Footprint> = None;
    for ch in 0..oc {
        for jj in 0..h {
            for ii in 0..w {
                if out.at(ch, jj, ii) == base.at(ch, jj, ii) {
                    continue;
                }
                let dx = wrap(ii as isize - i as isize, w);
                let dy = wrap(jj as isize - j as isize, h);
                let e = fp.get_or_insert(Footprint {
                    x: (dx, dx),
                    y: (dy, dy),
                });
                e.x = (e.x.0.min(dx), e.x.1.max(dx));
                e.y = (e.y.0.min(dy), e.y.1.max(dy));
            }
        }
    }
    Ok(fp)
}

/// Closed form of [`stencil_cnn`]'s parameter count.
pub fn stencil_cnn_param_count(n: usize, c: usize) -> usize {
    c * c + 22 * c + 2 + (n - 1) * (9 * c * c + c)
}
