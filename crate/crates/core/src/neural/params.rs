use std::collections::HashSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Activation, Architecture};
use crate::binio::{self, Decoder, Encoder};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8] = b"TMNP1";

/// Named, ordered parameter arrays.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl NetworkParams {
    pub fn new(entries: Vec<(String, Tensor)>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (name, _) in &entries {
            if !seen.insert(name.as_str()) {
                return Err(Error::config(name, "duplicate parameter name"));
            }
        }
        let (names, tensors) = entries.into_iter().unzip();
        Ok(Self { names, tensors })
    }

    /// Uniform fan-in initialization: He bounds for relu layers, Glorot
    /// otherwise; zero biases. The last layer's weights are multiplied by
    /// `arch.final_scale`.
    pub fn init(arch: &Architecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let last = arch.layers.len() - 1;
        let mut entries = Vec::with_capacity(2 * arch.layers.len());
        for (l, spec) in arch.layers.iter().enumerate() {
            let taps = spec.kernel * spec.kernel;
            let fan_in = (spec.in_ch * taps) as f64;
            let fan_out = (spec.out_ch * taps) as f64;
            let mut bound = match spec.activation {
                Activation::Relu => (6.0 / fan_in).sqrt(),
                _ => (6.0 / (fan_in + fan_out)).sqrt(),
            };
            if l == last {
                bound *= arch.final_scale;
            }
            let n = spec.out_ch * spec.in_ch * taps;
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0) * bound).collect();
            let shape = [spec.out_ch, spec.in_ch, spec.kernel, spec.kernel];
            entries.push((format!("{}.{l}.weight", arch.name), Tensor::new(&shape, w).unwrap()));
            entries.push((format!("{}.{l}.bias", arch.name), Tensor::zeros(&[spec.out_ch])));
        }
        Self::new(entries).expect("layer names are unique")
    }

    pub fn zeros(arch: &Architecture) -> Self {
        let entries = arch
            .param_names()
            .into_iter()
            .zip(arch.param_shapes())
            .map(|(n, s)| (n, Tensor::zeros(&s)))
            .collect();
        Self::new(entries).expect("layer names are unique")
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|k| &self.tensors[k])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names.iter().position(|n| n == name).map(|k| &mut self.tensors[k])
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn total_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Checks names and shapes against an architecture.
    pub fn check(&self, arch: &Architecture) -> Result<()> {
        let names = arch.param_names();
        let shapes = arch.param_shapes();
        for (name, shape) in names.iter().zip(&shapes) {
            match self.get(name) {
                None => {
                    return Err(Error::ParamShape {
                        name: name.clone(),
                        expected: shape.clone(),
                        found: vec![],
                    })
                }
                Some(t) if t.shape() != shape.as_slice() => {
                    return Err(Error::ParamShape {
                        name: name.clone(),
                        expected: shape.clone(),
                        found: t.shape().to_vec(),
                    })
                }
                Some(_) => {}
            }
        }
        if self.names != names {
            return Err(Error::config(
                &arch.name,
                "parameter set does not match the architecture",
            ));
        }
        Ok(())
    }
}

pub fn encode_params(params: &NetworkParams) -> Vec<u8> {
    let mut e = Encoder::new();
    e.u32(params.len() as u32);
    for (name, t) in params.iter() {
        e.str(name);
        e.u32(t.shape().len() as u32);
        for &d in t.shape() {
            e.u64(d as u64);
        }
        e.f64s(t.data());
    }
    e.finish(MAGIC)
}

pub fn decode_params(bytes: &[u8], path: &Path) -> Result<NetworkParams> {
    let mut d = Decoder::open(bytes, MAGIC, path)?;
    let n = d.u32()? as usize;
    let mut entries = Vec::with_capacity(n);
    for _ in 0..n {
        let name = d.str()?;
        let rank = d.u32()? as usize;
        let shape = (0..rank)
            .map(|_| d.u64().map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let len = shape
            .iter()
            .try_fold(1usize, |a, &b| a.checked_mul(b))
            .ok_or_else(|| d.err("bad dims"))?;
        let data = d.f64s(len)?;
        entries.push((name, Tensor::new(&shape, data)?));
    }
    d.finish()?;
    NetworkParams::new(entries).map_err(|_| Error::format(path, "duplicate parameter names"))
}

pub fn save_params(params: &NetworkParams, path: &Path) -> Result<()> {
    binio::write_atomic(path, &encode_params(params))
}

pub fn load_params(path: &Path) -> Result<NetworkParams> {
    decode_params(&binio::read(path)?, path)
}
