//! Network definitions, the model bundle and its checkpoint format.
//!
//! Inside the bundle every network works in standardized units. The
//! `predict_*` methods take raw inputs and answer in original outcome units.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use numgrad::{kaiming_uniform, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::data::Scaler;
use crate::error::{Error, Result};
use crate::rng;

pub const CHECKPOINT_VERSION: u32 = 1;
pub const PROPENSITY_CLAMP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Elu,
}

/// Activation of the last layer. `Hidden` reuses the hidden activation,
/// which is what representation networks use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    Linear,
    Sigmoid,
    Hidden,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    /// Input width followed by every layer's output width.
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub output_activation: OutputActivation,
}

impl MlpSpec {
    pub fn new(layer_sizes: Vec<usize>, activation: Activation, output_activation: OutputActivation) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::Config(format!("mlp needs >= 1 layer of positive width, got {layer_sizes:?}")));
        }
        Ok(Self { layer_sizes, activation, output_activation })
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("validated")
    }

    pub fn n_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }
}

mod tensor_serde {
    use numgrad::Tensor;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Raw {
        rows: usize,
        cols: usize,
        data: Vec<f64>,
    }

    pub fn serialize<S: Serializer>(v: &[Tensor], s: S) -> Result<S::Ok, S::Error> {
        let raw: Vec<Raw> = v
            .iter()
            .map(|t| Raw { rows: t.rows(), cols: t.cols(), data: t.data().to_vec() })
            .collect();
        raw.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Tensor>, D::Error> {
        let raw = Vec::<Raw>::deserialize(d)?;
        raw.into_iter()
            .map(|r| Tensor::from_vec(r.rows, r.cols, r.data).map_err(serde::de::Error::custom))
            .collect()
    }
}

/// Fully connected network; weights are `fan_in x fan_out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub spec: MlpSpec,
    #[serde(with = "tensor_serde")]
    pub weights: Vec<Tensor>,
    #[serde(with = "tensor_serde")]
    pub biases: Vec<Tensor>,
}

impl Mlp {
    /// Kaiming-uniform weights, zero biases, drawn from stream `name`.
    pub fn init(spec: MlpSpec, seed: u64, name: &str) -> Self {
        let mut r = rng::stream(seed, name);
        let mut weights = Vec::with_capacity(spec.n_layers());
        let mut biases = Vec::with_capacity(spec.n_layers());
        for w in spec.layer_sizes.windows(2) {
            weights.push(kaiming_uniform(w[0], w[1], &mut r));
            biases.push(Tensor::zeros(1, w[1]));
        }
        Self { spec, weights, biases }
    }

    pub fn zeros(spec: MlpSpec) -> Self {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in spec.layer_sizes.windows(2) {
            weights.push(Tensor::zeros(w[0], w[1]));
            biases.push(Tensor::zeros(1, w[1]));
        }
        Self { spec, weights, biases }
    }

    /// Parameters in the order `w0, b0, w1, b1, ...`.
    pub fn params(&self) -> Vec<&Tensor> {
        self.weights.iter().zip(&self.biases).flat_map(|(w, b)| [w, b]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.weights.iter_mut().zip(self.biases.iter_mut()).flat_map(|(w, b)| [w, b]).collect()
    }

    pub fn n_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundMlp {
        let mut params = Vec::with_capacity(2 * self.weights.len());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            params.push(tape.leaf(w.clone(), trainable));
            params.push(tape.leaf(b.clone(), trainable));
        }
        BoundMlp { spec: self.spec.clone(), params }
    }

    /// Plain forward pass without gradient bookkeeping.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let out = bound.forward(&mut tape, xv)?;
        Ok(tape.value(out).clone())
    }
}

/// An [`Mlp`] whose parameters live on a tape.
#[derive(Debug, Clone)]
pub struct BoundMlp {
    spec: MlpSpec,
    params: Vec<Var>,
}

impl BoundMlp {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        self.forward_with(tape, x, &self.params)
    }

    /// Forward pass through stop-gradient copies of the parameters, so the
    /// input still receives gradient but the network's weights do not.
    pub fn forward_frozen(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let frozen: Vec<Var> = self.params.iter().map(|p| tape.detach(*p)).collect();
        self.forward_with(tape, x, &frozen)
    }

    fn forward_with(&self, tape: &mut Tape, x: Var, params: &[Var]) -> Result<Var> {
        let found = tape.value(x).cols();
        if found != self.spec.input_dim() {
            return Err(Error::DimensionMismatch {
                what: "network input",
                expected: self.spec.input_dim(),
                found,
            });
        }
        let n = self.spec.n_layers();
        let mut h = x;
        for layer in 0..n {
            h = tape.matmul(h, params[2 * layer])?;
            h = tape.add(h, params[2 * layer + 1])?;
            let act = if layer + 1 < n {
                Some(self.spec.activation)
            } else {
                match self.spec.output_activation {
                    OutputActivation::Linear => None,
                    OutputActivation::Sigmoid => {
                        h = tape.sigmoid(h);
                        None
                    }
                    OutputActivation::Hidden => Some(self.spec.activation),
                }
            };
            h = match act {
                Some(Activation::Relu) => tape.relu(h),
                Some(Activation::Elu) => tape.elu(h),
                None => h,
            };
        }
        Ok(h)
    }

    pub fn params(&self) -> &[Var] {
        &self.params
    }

    /// Accumulated gradients in [`Mlp::params`] order.
    pub fn grads(&self, tape: &Tape) -> Vec<Tensor> {
        self.params.iter().map(|p| tape.grad_or_zeros(*p)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "TARNET")]
    Tarnet,
    #[serde(rename = "CFRNET_MMD")]
    CfrnetMmd,
    #[serde(rename = "CFRNET_WASS")]
    CfrnetWass,
    #[serde(rename = "PIPCFR_MMD")]
    PipcfrMmd,
    #[serde(rename = "PIPCFR_WASS")]
    PipcfrWass,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Tarnet,
        Method::CfrnetMmd,
        Method::CfrnetWass,
        Method::PipcfrMmd,
        Method::PipcfrWass,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Tarnet => "TARNET",
            Method::CfrnetMmd => "CFRNET_MMD",
            Method::CfrnetWass => "CFRNET_WASS",
            Method::PipcfrMmd => "PIPCFR_MMD",
            Method::PipcfrWass => "PIPCFR_WASS",
        }
    }

    pub fn uses_post_treatment(self) -> bool {
        matches!(self, Method::PipcfrMmd | Method::PipcfrWass)
    }

    /// IPM family for methods that balance representations.
    pub fn ipm_kind(self) -> Option<crate::ipm::IpmKind> {
        use crate::ipm::IpmKind;
        match self {
            Method::Tarnet => None,
            Method::CfrnetMmd | Method::PipcfrMmd => Some(IpmKind::Mmd),
            Method::CfrnetWass | Method::PipcfrWass => Some(IpmKind::Wass),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let up = s.trim().to_ascii_uppercase().replace(['-', '(', ')', ' '], "_");
        let up = up.trim_end_matches('_');
        Method::ALL
            .into_iter()
            .find(|m| m.name() == up || m.name().replace('_', "") == up.replace('_', ""))
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

/// Layer counts and widths. Defaults follow the reference architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub rep_layers: usize,
    pub rep_width: usize,
    pub head_layers: usize,
    pub head_width: usize,
    pub eta_layers: usize,
    pub eta_width: usize,
    pub phi_dim: usize,
    pub prop_layers: usize,
    pub prop_width: usize,
    pub activation: Activation,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            rep_layers: 3,
            rep_width: 64,
            head_layers: 4,
            head_width: 64,
            eta_layers: 3,
            eta_width: 128,
            phi_dim: 16,
            prop_layers: 4,
            prop_width: 64,
            activation: Activation::Relu,
        }
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.rep_layers,
            self.rep_width,
            self.head_layers,
            self.head_width,
            self.eta_layers,
            self.eta_width,
            self.phi_dim,
            self.prop_layers,
            self.prop_width,
        ];
        if all.contains(&0) {
            return Err(Error::Config("architecture sizes must be positive".into()));
        }
        Ok(())
    }

    fn rep(&self, input: usize) -> Result<MlpSpec> {
        let mut sizes = vec![input];
        sizes.extend(std::iter::repeat_n(self.rep_width, self.rep_layers));
        MlpSpec::new(sizes, self.activation, OutputActivation::Hidden)
    }

    fn head(&self, input: usize, layers: usize, width: usize, out: OutputActivation) -> Result<MlpSpec> {
        let mut sizes = vec![input];
        sizes.extend(std::iter::repeat_n(width, layers - 1));
        sizes.push(1);
        MlpSpec::new(sizes, self.activation, out)
    }

    fn eta(&self, input: usize) -> Result<MlpSpec> {
        let mut sizes = vec![input];
        sizes.extend(std::iter::repeat_n(self.eta_width, self.eta_layers - 1));
        sizes.push(self.phi_dim);
        MlpSpec::new(sizes, self.activation, OutputActivation::Linear)
    }
}

/// Identifies one network of the bundle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NetId {
    PsiAlpha,
    PsiEta,
    H0,
    H1,
    FTrunk,
    F0,
    F1,
    G,
    GTilde,
}

impl NetId {
    pub const ALL: [NetId; 9] = [
        NetId::PsiAlpha,
        NetId::PsiEta,
        NetId::H0,
        NetId::H1,
        NetId::FTrunk,
        NetId::F0,
        NetId::F1,
        NetId::G,
        NetId::GTilde,
    ];

    /// Networks of the outcome predictor `f`.
    pub const F: [NetId; 3] = [NetId::FTrunk, NetId::F0, NetId::F1];
    /// Networks of the pseudo-outcome constructor `q`, excluding `ψ_η`.
    pub const Q: [NetId; 3] = [NetId::PsiAlpha, NetId::H0, NetId::H1];
    pub const PROPENSITY: [NetId; 2] = [NetId::G, NetId::GTilde];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            NetId::PsiAlpha => "psi_alpha",
            NetId::PsiEta => "psi_eta",
            NetId::H0 => "h0",
            NetId::H1 => "h1",
            NetId::FTrunk => "f_trunk",
            NetId::F0 => "f0",
            NetId::F1 => "f1",
            NetId::G => "g",
            NetId::GTilde => "g_tilde",
        }
    }
}

/// Networks used only by the post-treatment method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipNets {
    pub psi_alpha: Mlp,
    pub psi_eta: Mlp,
    pub h0: Mlp,
    pub h1: Mlp,
    pub g: Mlp,
    pub g_tilde: Mlp,
}

/// Every trained parameter plus what is needed to use it on raw data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub version: u32,
    pub method: Method,
    pub x_dim: usize,
    pub s_dim: usize,
    pub arch: Architecture,
    pub f_trunk: Mlp,
    pub f0: Mlp,
    pub f1: Mlp,
    pub pip: Option<PipNets>,
    pub scaler: Scaler,
}

impl ModelBundle {
    /// Fresh bundle; every network draws from its own named seed stream.
    pub fn init(method: Method, x_dim: usize, s_dim: usize, arch: &Architecture, scaler: Scaler, seed: u64) -> Result<Self> {
        arch.validate()?;
        if method.uses_post_treatment() && s_dim == 0 {
            return Err(Error::Config(format!("{method} requires post-treatment variables")));
        }
        if x_dim == 0 {
            return Err(Error::Config("covariate dimension must be positive".into()));
        }
        let init = |spec: MlpSpec, id: NetId| Mlp::init(spec, seed, &format!("init/{}", id.name()));
        let f_head = arch.head(arch.rep_width, arch.head_layers, arch.head_width, OutputActivation::Linear)?;
        let pip = if method.uses_post_treatment() {
            let h_spec = arch.head(arch.rep_width + arch.phi_dim, arch.head_layers, arch.head_width, OutputActivation::Linear)?;
            Some(PipNets {
                psi_alpha: init(arch.rep(x_dim)?, NetId::PsiAlpha),
                psi_eta: init(arch.eta(s_dim)?, NetId::PsiEta),
                h0: init(h_spec.clone(), NetId::H0),
                h1: init(h_spec, NetId::H1),
                g: init(arch.head(x_dim, arch.prop_layers, arch.prop_width, OutputActivation::Sigmoid)?, NetId::G),
                g_tilde: init(
                    arch.head(x_dim + arch.phi_dim, arch.prop_layers, arch.prop_width, OutputActivation::Sigmoid)?,
                    NetId::GTilde,
                ),
            })
        } else {
            None
        };
        Ok(Self {
            version: CHECKPOINT_VERSION,
            method,
            x_dim,
            s_dim: if method.uses_post_treatment() { s_dim } else { 0 },
            arch: arch.clone(),
            f_trunk: init(arch.rep(x_dim)?, NetId::FTrunk),
            f0: init(f_head.clone(), NetId::F0),
            f1: init(f_head, NetId::F1),
            pip,
            scaler,
        })
    }

    pub fn net(&self, id: NetId) -> Option<&Mlp> {
        match id {
            NetId::FTrunk => Some(&self.f_trunk),
            NetId::F0 => Some(&self.f0),
            NetId::F1 => Some(&self.f1),
            _ => {
                let p = self.pip.as_ref()?;
                Some(match id {
                    NetId::PsiAlpha => &p.psi_alpha,
                    NetId::PsiEta => &p.psi_eta,
                    NetId::H0 => &p.h0,
                    NetId::H1 => &p.h1,
                    NetId::G => &p.g,
                    NetId::GTilde => &p.g_tilde,
                    _ => unreachable!(),
                })
            }
        }
    }

    pub fn net_mut(&mut self, id: NetId) -> Option<&mut Mlp> {
        match id {
            NetId::FTrunk => Some(&mut self.f_trunk),
            NetId::F0 => Some(&mut self.f0),
            NetId::F1 => Some(&mut self.f1),
            _ => {
                let p = self.pip.as_mut()?;
                Some(match id {
                    NetId::PsiAlpha => &mut p.psi_alpha,
                    NetId::PsiEta => &mut p.psi_eta,
                    NetId::H0 => &mut p.h0,
                    NetId::H1 => &mut p.h1,
                    NetId::G => &mut p.g,
                    NetId::GTilde => &mut p.g_tilde,
                    _ => unreachable!(),
                })
            }
        }
    }

    pub fn present_nets(&self) -> Vec<NetId> {
        NetId::ALL.into_iter().filter(|id| self.net(*id).is_some()).collect()
    }

    /// Puts the listed networks on `tape`; those in `trainable` get gradients.
    pub fn bind(&self, tape: &mut Tape, nets: &[NetId], trainable: &[NetId]) -> Result<Bound> {
        let mut slots: [Option<BoundMlp>; 9] = Default::default();
        for &id in nets {
            let net = self
                .net(id)
                .ok_or_else(|| Error::Config(format!("{} has no {} network", self.method, id.name())))?;
            slots[id.index()] = Some(net.bind(tape, trainable.contains(&id)));
        }
        Ok(Bound { slots })
    }

    pub fn bind_all(&self, tape: &mut Tape, trainable: &[NetId]) -> Result<Bound> {
        self.bind(tape, &self.present_nets(), trainable)
    }

    fn check_x(&self, x: &Tensor) -> Result<()> {
        if x.cols() != self.x_dim {
            return Err(Error::DimensionMismatch {
                what: "covariates",
                expected: self.x_dim,
                found: x.cols(),
            });
        }
        Ok(())
    }

    fn check_s(&self, s: &Tensor) -> Result<()> {
        if s.cols() != self.s_dim {
            return Err(Error::DimensionMismatch {
                what: "post-treatment variables",
                expected: self.s_dim,
                found: s.cols(),
            });
        }
        Ok(())
    }

    fn pip_ref(&self) -> Result<&PipNets> {
        self.pip
            .as_ref()
            .ok_or_else(|| Error::Config(format!("{} has no pseudo-outcome networks", self.method)))
    }

    /// Both heads of `f` on standardized covariates.
    pub fn f_heads_std(&self, x_std: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
        let rep = self.f_trunk.forward(x_std)?;
        Ok((self.f0.forward(&rep)?.into_data(), self.f1.forward(&rep)?.into_data()))
    }

    /// `f(x, t)` in original outcome units.
    pub fn predict_f(&self, x: &Tensor, t: &[u8]) -> Result<Vec<f64>> {
        self.check_x(x)?;
        check_treatments(t, x.rows())?;
        let (f0, f1) = self.f_heads_std(&self.scaler.x.transform(x)?)?;
        Ok(t.iter()
            .enumerate()
            .map(|(i, &ti)| self.scaler.y_inverse(if ti == 1 { f1[i] } else { f0[i] }))
            .collect())
    }

    /// `f(x, 1) - f(x, 0)` in original outcome units.
    pub fn predict_ite(&self, x: &Tensor) -> Result<Vec<f64>> {
        self.check_x(x)?;
        let (f0, f1) = self.f_heads_std(&self.scaler.x.transform(x)?)?;
        Ok(f1.iter().zip(&f0).map(|(a, b)| (a - b) * self.scaler.y_std).collect())
    }

    /// `φ = ψ_η(s)` for raw `s`.
    pub fn phi(&self, s: &Tensor) -> Result<Tensor> {
        self.check_s(s)?;
        self.pip_ref()?.psi_eta.forward(&self.scaler.transform_s(s)?)
    }

    /// `q(x, t, φ) = h_t(ψ_α(x), ψ_η(s))` in original outcome units.
    pub fn predict_q(&self, x: &Tensor, t: &[u8], s: &Tensor) -> Result<Vec<f64>> {
        self.check_x(x)?;
        check_treatments(t, x.rows())?;
        let p = self.pip_ref()?;
        let phi = self.phi(s)?;
        let rep = p.psi_alpha.forward(&self.scaler.x.transform(x)?)?;
        let z = Tensor::concat_cols(&[&rep, &phi])?;
        let (q0, q1) = (p.h0.forward(&z)?, p.h1.forward(&z)?);
        Ok(t.iter()
            .enumerate()
            .map(|(i, &ti)| self.scaler.y_inverse(if ti == 1 { q1.data()[i] } else { q0.data()[i] }))
            .collect())
    }

    /// Clamped `P(t = 1 | x)` from `g`, or `P(t = 1 | x, φ)` from `g̃` when
    /// `phi` is given.
    pub fn propensity(&self, x: &Tensor, phi: Option<&Tensor>) -> Result<Vec<f64>> {
        self.check_x(x)?;
        let p = self.pip_ref()?;
        let xs = self.scaler.x.transform(x)?;
        let out = match phi {
            None => p.g.forward(&xs)?,
            Some(phi) => {
                if phi.cols() != self.arch.phi_dim {
                    return Err(Error::DimensionMismatch {
                        what: "representation",
                        expected: self.arch.phi_dim,
                        found: phi.cols(),
                    });
                }
                p.g_tilde.forward(&Tensor::concat_cols(&[&xs, phi])?)?
            }
        };
        Ok(out.data().iter().map(|v| v.clamp(PROPENSITY_CLAMP, 1.0 - PROPENSITY_CLAMP)).collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let b: Self = serde_json::from_str(text)?;
        if b.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                b.version
            )));
        }
        Ok(b)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_json()?).map_err(|e| Error::io(path.as_ref(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Self::from_json(&text)
    }
}

fn check_treatments(t: &[u8], n: usize) -> Result<()> {
    if t.len() != n {
        return Err(Error::DimensionMismatch { what: "treatment vector", expected: n, found: t.len() });
    }
    if let Some(bad) = t.iter().find(|&&v| v > 1) {
        return Err(Error::Data(format!("treatment must be 0 or 1, got {bad}")));
    }
    Ok(())
}

/// Networks of a bundle bound to one tape.
#[derive(Debug, Clone)]
pub struct Bound {
    slots: [Option<BoundMlp>; 9],
}

impl Bound {
    pub fn get(&self, id: NetId) -> &BoundMlp {
        self.slots[id.index()]
            .as_ref()
            .unwrap_or_else(|| panic!("network {} was not bound", id.name()))
    }

    pub fn is_bound(&self, id: NetId) -> bool {
        self.slots[id.index()].is_some()
    }

    pub fn grads(&self, tape: &Tape, id: NetId) -> Vec<Tensor> {
        self.get(id).grads(tape)
    }

    /// `t ⊙ a + (1 - t) ⊙ b` for a constant `n x 1` treatment column.
    pub fn route(tape: &mut Tape, t: Var, one_minus_t: Var, a1: Var, a0: Var) -> Result<Var> {
        let x = tape.mul(t, a1)?;
        let y = tape.mul(one_minus_t, a0)?;
        Ok(tape.add(x, y)?)
    }

    /// `(f0(x), f1(x), trunk(x))`.
    pub fn f_heads(&self, tape: &mut Tape, x: Var) -> Result<(Var, Var, Var)> {
        let rep = self.get(NetId::FTrunk).forward(tape, x)?;
        let f0 = self.get(NetId::F0).forward(tape, rep)?;
        let f1 = self.get(NetId::F1).forward(tape, rep)?;
        Ok((f0, f1, rep))
    }

    pub fn rep(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        self.get(NetId::PsiAlpha).forward(tape, x)
    }

    pub fn phi(&self, tape: &mut Tape, s: Var) -> Result<Var> {
        self.get(NetId::PsiEta).forward(tape, s)
    }

    /// `(h0(rep ⊕ φ), h1(rep ⊕ φ))`.
    pub fn q_heads(&self, tape: &mut Tape, rep: Var, phi: Var) -> Result<(Var, Var)> {
        let z = tape.concat_cols(&[rep, phi])?;
        let q0 = self.get(NetId::H0).forward(tape, z)?;
        let q1 = self.get(NetId::H1).forward(tape, z)?;
        Ok((q0, q1))
    }

    /// Clamped `P(t = 1 | x)`.
    pub fn g_prob(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let p = self.get(NetId::G).forward(tape, x)?;
        Ok(tape.clamp(p, PROPENSITY_CLAMP, 1.0 - PROPENSITY_CLAMP))
    }

    /// Clamped `P(t = 1 | x, φ)`; `frozen` stops gradient into `g̃`'s weights.
    pub fn g_tilde_prob(&self, tape: &mut Tape, x: Var, phi: Var, frozen: bool) -> Result<Var> {
        let z = tape.concat_cols(&[x, phi])?;
        let net = self.get(NetId::GTilde);
        let p = if frozen { net.forward_frozen(tape, z)? } else { net.forward(tape, z)? };
        Ok(tape.clamp(p, PROPENSITY_CLAMP, 1.0 - PROPENSITY_CLAMP))
    }
}
