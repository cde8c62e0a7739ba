//! Learned corrections on top of the coarse solver: the transported memory
//! network (encoder, corrector, hidden-state updater) and the memoryless
//! CNN baseline.

mod bundle;
mod update;

use serde::{Deserialize, Serialize};

pub use bundle::{load_bundle, save_bundle, BundleManifest, MANIFEST as BUNDLE_MANIFEST};

use crate::autodiff::{Backend, Eager};
use crate::error::{Error, Result};
use crate::grid::{CenteredField, StaggeredField};
use crate::neural::{stencil_cnn, Activation, Architecture, LayerSpec, Network};
use crate::solver::Solver;
use crate::tensor::Tensor;

/// Distance kept from the open bound so that saturated activations still
/// lie strictly inside it.
pub const BOUND_MARGIN: f64 = 1e-9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HiddenBound {
    /// `2 sigmoid - 1`, range (-1, 1).
    #[default]
    ScaledSigmoid,
    /// Plain sigmoid, range (0, 1).
    Sigmoid,
}

impl HiddenBound {
    pub fn activation(self) -> Activation {
        match self {
            HiddenBound::ScaledSigmoid => Activation::ScaledSigmoid,
            HiddenBound::Sigmoid => Activation::Sigmoid,
        }
    }

    /// Open interval of admissible hidden values.
    pub fn range(self) -> (f64, f64) {
        match self {
            HiddenBound::ScaledSigmoid => (-1.0, 1.0),
            HiddenBound::Sigmoid => (0.0, 1.0),
        }
    }

    fn clamp<B: Backend>(self, b: &mut B, h: &B::Value) -> Result<B::Value> {
        let (lo, hi) = self.range();
        b.clamp(h, lo + BOUND_MARGIN, hi - BOUND_MARGIN)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdaterVariant {
    /// `H = up(U, H_prev)`.
    #[default]
    Direct,
    /// Upwind advection of `H` by `U` plus a learned source.
    TransportAdvect,
    /// Advection and diffusion with a fixed diffusivity, plus source.
    TransportDiffuseConst,
    /// Advection and diffusion with a learned diffusivity, plus source.
    TransportDiffuseLearned,
    /// `H = (1 - z) H_prev + z H~` with a gate network `z`.
    Gated,
}

impl UpdaterVariant {
    pub fn is_transport(self) -> bool {
        matches!(
            self,
            UpdaterVariant::TransportAdvect
                | UpdaterVariant::TransportDiffuseConst
                | UpdaterVariant::TransportDiffuseLearned
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TmnConfig {
    /// Hidden channels `M`.
    pub hidden_dim: usize,
    pub width: usize,
    /// Number of 3x3 encoder layers.
    pub encoder_layers: usize,
    pub hidden_activation: Activation,
    pub bound: HiddenBound,
    pub variant: UpdaterVariant,
    pub corrector_final_scale: f64,
    /// Project the corrected velocity again.
    pub reproject: bool,
    /// Diffusivity of the transport variants (initial value when learned).
    pub diffusivity: f64,
    /// Gated variant: split `H` into cell and output halves.
    pub lstm_split: bool,
}

impl Default for TmnConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 8,
            width: 48,
            encoder_layers: 7,
            hidden_activation: Activation::Relu,
            bound: HiddenBound::ScaledSigmoid,
            variant: UpdaterVariant::Direct,
            corrector_final_scale: 0.01,
            reproject: false,
            diffusivity: 1e-3,
            lstm_split: false,
        }
    }
}

impl TmnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 {
            return Err(Error::config("hidden_dim", "must be at least 1"));
        }
        if self.width == 0 {
            return Err(Error::config("width", "must be at least 1"));
        }
        if self.encoder_layers < 2 {
            return Err(Error::config("encoder_layers", "must be at least 2"));
        }
        if !(self.diffusivity >= 0.0 && self.diffusivity.is_finite()) {
            return Err(Error::config("diffusivity", "must be non-negative"));
        }
        if self.lstm_split && (self.variant != UpdaterVariant::Gated || self.hidden_dim % 2 != 0) {
            return Err(Error::config(
                "lstm_split",
                "needs the gated variant and an even hidden_dim",
            ));
        }
        Ok(())
    }

    /// Encoder: `encoder_layers` 3x3 convolutions on the raw face values.
    pub fn encoder_arch(&self) -> Architecture {
        let (w, act) = (self.width, self.hidden_activation);
        let mut layers = vec![LayerSpec::new(2, w, 3, act)];
        for _ in 2..self.encoder_layers {
            layers.push(LayerSpec::new(w, w, 3, act));
        }
        layers.push(LayerSpec::new(w, self.hidden_dim, 3, self.bound.activation()));
        Architecture {
            name: "encoder".into(),
            in_channels: 2,
            layers,
            final_scale: 1.0,
        }
    }

    /// Corrector: one 3x3 then three 1x1 layers on `[U_c, H]`.
    pub fn corrector_arch(&self) -> Architecture {
        let (w, act, cin) = (self.width, self.hidden_activation, 2 + self.hidden_dim);
        Architecture {
            name: "corrector".into(),
            in_channels: cin,
            layers: vec![
                LayerSpec::new(cin, w, 3, act),
                LayerSpec::new(w, w, 1, act),
                LayerSpec::new(w, w, 1, act),
                LayerSpec::new(w, 2, 1, Activation::Identity),
            ],
            final_scale: self.corrector_final_scale,
        }
    }

    /// One 3x3 and one 1x1 layer, then the input `[U_c, H_prev]` is
    /// concatenated before the final 1x1 layer.
    fn update_like(&self, name: &str, out: usize, activation: Activation, final_scale: f64) -> Architecture {
        let (w, act, cin) = (self.width, self.hidden_activation, 2 + self.hidden_dim);
        let mut last = LayerSpec::new(w + cin, out, 1, activation);
        last.concat_input = true;
        Architecture {
            name: name.into(),
            in_channels: cin,
            layers: vec![LayerSpec::new(cin, w, 3, act), LayerSpec::new(w, w, 1, act), last],
            final_scale,
        }
    }

    /// The updater network; for transport variants this is the source term
    /// and for the gated variant the candidate state.
    pub fn updater_arch(&self) -> Architecture {
        let m = self.hidden_dim;
        match self.variant {
            UpdaterVariant::Direct => self.update_like("updater", m, self.bound.activation(), 1.0),
            v if v.is_transport() => self.update_like("updater", m, Activation::Tanh, 0.01),
            _ => {
                let out = if self.lstm_split { m / 2 } else { m };
                self.update_like("updater", out, self.bound.activation(), 1.0)
            }
        }
    }

    pub fn gate_arch(&self) -> Option<Architecture> {
        (self.variant == UpdaterVariant::Gated)
            .then(|| self.update_like("gate", self.hidden_dim, Activation::Sigmoid, 1.0))
    }

    pub fn param_count(&self) -> usize {
        let xi = usize::from(self.variant == UpdaterVariant::TransportDiffuseLearned);
        self.encoder_arch().param_count()
            + self.corrector_arch().param_count()
            + self.updater_arch().param_count()
            + self.gate_arch().map_or(0, |a| a.param_count())
            + xi
    }
}

/// Transported memory network.
#[derive(Clone, Debug, PartialEq)]
pub struct TmnModel {
    pub config: TmnConfig,
    pub encoder: Network,
    pub corrector: Network,
    pub updater: Network,
    pub gate: Option<Network>,
    /// Square root of the learned diffusivity, shape `[1]`.
    pub xi_sqrt: Option<Tensor>,
}

impl TmnModel {
    pub fn init(config: TmnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        // one stream per network so that adding a network leaves the others unchanged
        let encoder = Network::init(config.encoder_arch(), seed)?;
        let corrector = Network::init(config.corrector_arch(), seed.wrapping_add(1))?;
        let updater = Network::init(config.updater_arch(), seed.wrapping_add(2))?;
        let gate = config
            .gate_arch()
            .map(|a| Network::init(a, seed.wrapping_add(3)))
            .transpose()?;
        let xi_sqrt = Self::initial_xi(&config);
        Ok(Self {
            config,
            encoder,
            corrector,
            updater,
            gate,
            xi_sqrt,
        })
    }

    /// All learnable parameters zero.
    pub fn zeros(config: TmnConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            encoder: Network::zeros(config.encoder_arch())?,
            corrector: Network::zeros(config.corrector_arch())?,
            updater: Network::zeros(config.updater_arch())?,
            gate: config.gate_arch().map(Network::zeros).transpose()?,
            xi_sqrt: (config.variant == UpdaterVariant::TransportDiffuseLearned).then(|| Tensor::zeros(&[1])),
            config,
        })
    }

    fn initial_xi(config: &TmnConfig) -> Option<Tensor> {
        (config.variant == UpdaterVariant::TransportDiffuseLearned)
            .then(|| Tensor::new(&[1], vec![config.diffusivity.sqrt()]).unwrap())
    }

    fn networks(&self) -> impl Iterator<Item = &Network> {
        [&self.encoder, &self.corrector, &self.updater]
            .into_iter()
            .chain(self.gate.as_ref())
    }

    fn ranges(&self) -> Ranges {
        let mut at = 0;
        let mut next = |n: &Network| {
            let r = at..at + n.params.len();
            at = r.end;
            r
        };
        let encoder = next(&self.encoder);
        let corrector = next(&self.corrector);
        let updater = next(&self.updater);
        let gate = self.gate.as_ref().map(&mut next);
        let xi = self.xi_sqrt.as_ref().map(|_| at);
        Ranges {
            encoder,
            corrector,
            updater,
            gate,
            xi,
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.config.hidden_dim
    }

    /// `H0 = enc(U0)`.
    pub fn encode<B: Backend>(&self, b: &mut B, p: &[B::Value], u: &B::Value) -> Result<B::Value> {
        let r = self.ranges();
        let h = self.encoder.arch.forward(b, &p[r.encoder], u)?;
        self.config.bound.clamp(b, &h)
    }

    /// Network input `[U_c, H]` at cell centers.
    fn centered_input<B: Backend>(&self, b: &mut B, u: &B::Value, h: &B::Value) -> Result<B::Value> {
        let uc = b.face_to_center(u)?;
        b.concat_channels(&[&uc, h])
    }

    /// Corrector output at cell centers, before interpolation to faces.
    pub fn correction_centered<B: Backend>(
        &self,
        b: &mut B,
        p: &[B::Value],
        u_star: &B::Value,
        h_prev: &B::Value,
    ) -> Result<B::Value> {
        let r = self.ranges();
        let x = self.centered_input(b, u_star, h_prev)?;
        self.corrector.arch.forward(b, &p[r.corrector], &x)
    }

    /// `U = U* + corr(U*, H_prev)`.
    pub fn correct<B: Backend>(
        &self,
        b: &mut B,
        p: &[B::Value],
        u_star: &B::Value,
        h_prev: &B::Value,
    ) -> Result<B::Value> {
        let c = self.correction_centered(b, p, u_star, h_prev)?;
        let cf = b.center_to_face(&c)?;
        b.add(u_star, &cf)
    }

    /// New hidden state from the corrected velocity and the previous state.
    pub fn update_hidden<B: Backend>(
        &self,
        b: &mut B,
        p: &[B::Value],
        solver: &Solver,
        u: &B::Value,
        h_prev: &B::Value,
    ) -> Result<B::Value> {
        let r = self.ranges();
        let x = self.centered_input(b, u, h_prev)?;
        let h = match self.config.variant {
            UpdaterVariant::Direct => self.updater.arch.forward(b, &p[r.updater.clone()], &x)?,
            UpdaterVariant::Gated => {
                let gate = self.gate.as_ref().expect("gated model has a gate network");
                let gate_p = &p[r.gate.clone().expect("gate range")];
                let z = gate.arch.forward(b, gate_p, &x)?;
                let cand = self.updater.arch.forward(b, &p[r.updater.clone()], &x)?;
                if self.config.lstm_split {
                    update::lstm_split(b, h_prev, &z, &cand, self.config.hidden_dim / 2)?
                } else {
                    update::gated(b, h_prev, &z, &cand)?
                }
            }
            v => {
                let grid = solver.grid();
                let xi = match v {
                    UpdaterVariant::TransportAdvect => update::Diffusivity::None,
                    UpdaterVariant::TransportDiffuseConst => update::Diffusivity::Fixed(self.config.diffusivity),
                    _ => update::Diffusivity::Learned(p[r.xi.expect("xi index")].clone()),
                };
                let moved = update::transport(b, u, h_prev, grid.dx(), grid.dy(), solver.physics().dt, xi)?;
                let s = self.updater.arch.forward(b, &p[r.updater.clone()], &x)?;
                b.add(&moved, &s)?
            }
        };
        self.config.bound.clamp(b, &h)
    }
}

struct Ranges {
    encoder: std::ops::Range<usize>,
    corrector: std::ops::Range<usize>,
    updater: std::ops::Range<usize>,
    gate: Option<std::ops::Range<usize>>,
    xi: Option<usize>,
}

/// Memoryless learned correction `U = U* + cnn(U*)` on the raw face values.
#[derive(Clone, Debug, PartialEq)]
pub struct CnnLc {
    /// Number of 3x3 layers.
    pub layers: usize,
    pub network: Network,
}

impl CnnLc {
    pub fn init(layers: usize, width: usize, hidden: Activation, seed: u64) -> Result<Self> {
        if !(1..=7).contains(&layers) {
            return Err(Error::config("layers", format!("{layers} outside 1..=7")));
        }
        Ok(Self {
            layers,
            network: Network::init(stencil_cnn(layers, width, hidden), seed)?,
        })
    }

    pub fn correct<B: Backend>(&self, b: &mut B, p: &[B::Value], u_star: &B::Value) -> Result<B::Value> {
        let c = self.network.arch.forward(b, p, u_star)?;
        b.add(u_star, &c)
    }
}

/// Eager form of [`CnnLc::correct`].
pub fn cnn_lc_correct(u_star: &StaggeredField, model: &CnnLc) -> Result<StaggeredField> {
    let mut e = Eager;
    let u = model.correct(&mut e, model.network.params.tensors(), u_star.tensor())?;
    StaggeredField::new(*u_star.grid(), u)
}

/// Any learned correction the training and evaluation loops can drive.
#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Tmn(TmnModel),
    CnnLc(CnnLc),
}

impl Model {
    pub fn kind(&self) -> &'static str {
        match self {
            Model::Tmn(_) => "tmn",
            Model::CnnLc(_) => "cnn_lc",
        }
    }

    /// `M`, or 0 for memoryless models.
    pub fn hidden_dim(&self) -> usize {
        match self {
            Model::Tmn(m) => m.hidden_dim(),
            Model::CnnLc(_) => 0,
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        match self {
            Model::Tmn(m) => {
                let mut names: Vec<String> = m.networks().flat_map(|n| n.params.names().to_vec()).collect();
                if m.xi_sqrt.is_some() {
                    names.push("transport.xi_sqrt".into());
                }
                names
            }
            Model::CnnLc(c) => c.network.params.names().to_vec(),
        }
    }

    /// Flat parameter list in a fixed order.
    pub fn params(&self) -> Vec<&Tensor> {
        match self {
            Model::Tmn(m) => m
                .networks()
                .flat_map(|n| n.params.tensors().iter())
                .chain(m.xi_sqrt.as_ref())
                .collect(),
            Model::CnnLc(c) => c.network.params.tensors().iter().collect(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Model::Tmn(m) => {
                let TmnModel {
                    encoder,
                    corrector,
                    updater,
                    gate,
                    xi_sqrt,
                    ..
                } = m;
                let mut out: Vec<&mut Tensor> = Vec::new();
                for n in [encoder, corrector, updater].into_iter().chain(gate.as_mut()) {
                    out.extend(n.params.tensors_mut().iter_mut());
                }
                out.extend(xi_sqrt.as_mut());
                out
            }
            Model::CnnLc(c) => c.network.params.tensors_mut().iter_mut().collect(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    /// Parameters as differentiable values.
    pub fn bind<B: Backend>(&self, b: &mut B) -> Vec<B::Value> {
        self.params().into_iter().map(|t| b.parameter(t.clone())).collect()
    }

    /// Initial hidden state, `None` for memoryless models.
    pub fn encode<B: Backend>(&self, b: &mut B, p: &[B::Value], u0: &B::Value) -> Result<Option<B::Value>> {
        match self {
            Model::Tmn(m) => m.encode(b, p, u0).map(Some),
            Model::CnnLc(_) => Ok(None),
        }
    }

    /// One hybrid step: base solver, correction, hidden-state update.
    pub fn step<B: Backend>(
        &self,
        b: &mut B,
        p: &[B::Value],
        solver: &Solver,
        u: &B::Value,
        h: Option<&B::Value>,
    ) -> Result<(B::Value, Option<B::Value>)> {
        let u_star = solver.advance(b, u)?;
        match self {
            Model::Tmn(m) => {
                let h_prev = h.ok_or_else(|| Error::shape("tmn step", "missing hidden state"))?;
                let mut u_new = m.correct(b, p, &u_star, h_prev)?;
                if m.config.reproject {
                    u_new = solver.project(b, &u_new)?;
                }
                let h_new = m.update_hidden(b, p, solver, &u_new, h_prev)?;
                Ok((u_new, Some(h_new)))
            }
            Model::CnnLc(c) => Ok((c.correct(b, p, &u_star)?, None)),
        }
    }
}

/// Velocity and hidden state after `step_index` hybrid steps.
#[derive(Clone, Debug, PartialEq)]
pub struct HybridState {
    pub velocity: StaggeredField,
    pub hidden: Option<CenteredField>,
    pub step_index: usize,
    pub time: f64,
}

/// Runs `steps` eager hybrid steps from `u0`, calling `visit` on every state
/// including the initial one.
pub fn rollout_with(
    model: &Model,
    solver: &Solver,
    u0: &StaggeredField,
    steps: usize,
    mut visit: impl FnMut(&HybridState) -> Result<()>,
) -> Result<HybridState> {
    if steps == 0 {
        return Err(Error::config("steps", "must be at least 1"));
    }
    let grid = *solver.grid();
    if u0.grid() != &grid {
        return Err(Error::Grid("initial velocity is not on the solver grid".into()));
    }
    let mut e = Eager;
    let p: Vec<Tensor> = model.params().into_iter().cloned().collect();
    let mut u = u0.tensor().clone();
    let mut h = model.encode(&mut e, &p, &u)?;
    let wrap = |u: &Tensor, h: &Option<Tensor>, k: usize| -> Result<HybridState> {
        Ok(HybridState {
            velocity: StaggeredField::new(grid, u.clone())?,
            hidden: h.as_ref().map(|h| CenteredField::new(grid, h.clone())).transpose()?,
            step_index: k,
            time: k as f64 * solver.physics().dt,
        })
    };
    let mut state = wrap(&u, &h, 0)?;
    visit(&state)?;
    for k in 1..=steps {
        solver.check_cfl(&u, k);
        let (un, hn) = model.step(&mut e, &p, solver, &u, h.as_ref())?;
        if !un.is_finite() || hn.as_ref().is_some_and(|h| !h.is_finite()) {
            return Err(Error::BlowUp { step: k });
        }
        u = un;
        h = hn;
        state = wrap(&u, &h, k)?;
        visit(&state)?;
    }
    Ok(state)
}

/// Every state of an eager rollout, the initial one included.
pub fn rollout(model: &Model, solver: &Solver, u0: &StaggeredField, steps: usize) -> Result<Vec<HybridState>> {
    let mut out = Vec::with_capacity(steps + 1);
    rollout_with(model, solver, u0, steps, |s| {
        out.push(s.clone());
        Ok(())
    })?;
    Ok(out)
}
