//! Layer graphs with named parameters and swappable activation slots.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::activations::{Activation, SlotActivation};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// The architectures this crate knows how to build.
///
/// `small-cifar-*` and `xor-mlp` are compact stand-ins sized for a desktop
/// CPU; their accuracies are not comparable to VGG/ResNet results.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Architecture {
    /// conv(1→20,5×5) · act · pool · conv(20→30,5×5) · act · pool · fc(480→10)
    LenetMnist,
    SmallCifar10,
    SmallCifar100,
    /// Two-input MLP with one 16-unit hidden activation site.
    XorMlp,
}

impl Architecture {
    pub fn name(self) -> &'static str {
        match self {
            Architecture::LenetMnist => "lenet-mnist",
            Architecture::SmallCifar10 => "small-cifar-10",
            Architecture::SmallCifar100 => "small-cifar-100",
            Architecture::XorMlp => "xor-mlp",
        }
    }

    /// `[C, H, W]` of one input sample.
    pub fn input_shape(self) -> [usize; 3] {
        match self {
            Architecture::LenetMnist => [1, 28, 28],
            Architecture::SmallCifar10 | Architecture::SmallCifar100 => [3, 32, 32],
            Architecture::XorMlp => [1, 1, 2],
        }
    }

    pub fn num_classes(self) -> usize {
        match self {
            Architecture::LenetMnist | Architecture::SmallCifar10 => 10,
            Architecture::SmallCifar100 => 100,
            Architecture::XorMlp => 2,
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "lenet-mnist" => Ok(Architecture::LenetMnist),
            "small-cifar-10" => Ok(Architecture::SmallCifar10),
            "small-cifar-100" => Ok(Architecture::SmallCifar100),
            "xor-mlp" => Ok(Architecture::XorMlp),
            other => Err(Error::Config(format!(
                "unknown architecture `{other}` (expected lenet-mnist, small-cifar-10, small-cifar-100 or xor-mlp)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub name: String,
    pub inputs: usize,
    pub outputs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(ConvLayer),
    MaxPool { name: String, kernel: usize, stride: usize },
    Flatten,
    Dense(DenseLayer),
    /// Index into [`Network::slots`].
    Activation(usize),
}

/// A structural position holding either one activation or a mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationSlot {
    pub site: String,
    pub current: SlotActivation,
    pub channels: usize,
}

impl ActivationSlot {
    /// Registry names of the learnable tensors this slot owns.
    pub fn param_names(&self) -> Vec<(String, f64)> {
        self.current
            .prelu_branches()
            .into_iter()
            .map(|(branch, init)| {
                let name = match branch {
                    None => format!("{}.prelu_slope", self.site),
                    Some(i) => format!("{}.branch{i}.prelu_slope", self.site),
                };
                (name, init)
            })
            .collect()
    }
}

/// Weight initialization schemes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitScheme {
    /// Weights ~ N(0, 2/fan_in), biases zero.
    KaimingNormal,
    /// Weights ~ U(−1/√fan_in, 1/√fan_in), biases zero.
    UniformRange,
}

impl fmt::Display for InitScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InitScheme::KaimingNormal => "kaiming-normal",
            InitScheme::UniformRange => "uniform-range",
        })
    }
}

impl FromStr for InitScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "kaiming-normal" => Ok(InitScheme::KaimingNormal),
            "uniform-range" => Ok(InitScheme::UniformRange),
            other => Err(Error::Config(format!("unknown init scheme `{other}`"))),
        }
    }
}

/// Output of [`Network::forward`].
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    pub logits: Var,
    /// Output of the layer named by `capture`, if one was requested.
    pub captured: Option<Var>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T: Scalar> {
    arch: Architecture,
    layers: Vec<Layer>,
    slots: Vec<ActivationSlot>,
    params: BTreeMap<String, Tensor<T>>,
}

struct Builder {
    layers: Vec<Layer>,
    slots: Vec<ActivationSlot>,
}

impl Builder {
    fn new() -> Self {
        Builder {
            layers: Vec::new(),
            slots: Vec::new(),
        }
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize, kernel: usize, padding: usize) -> &mut Self {
        self.layers.push(Layer::Conv(ConvLayer {
            name: name.into(),
            in_channels: cin,
            out_channels: cout,
            kernel,
            stride: 1,
            padding,
        }));
        self
    }

    fn act(&mut self, site: String, channels: usize) -> &mut Self {
        self.layers.push(Layer::Activation(self.slots.len()));
        self.slots.push(ActivationSlot {
            site,
            current: SlotActivation::Single(Activation::Relu),
            channels,
        });
        self
    }

    fn pool(&mut self, name: &str) -> &mut Self {
        self.layers.push(Layer::MaxPool {
            name: name.into(),
            kernel: 2,
            stride: 2,
        });
        self
    }

    fn dense(&mut self, name: &str, inputs: usize, outputs: usize) -> &mut Self {
        self.layers.push(Layer::Dense(DenseLayer {
            name: name.into(),
            inputs,
            outputs,
        }));
        self
    }
}

impl<T: Scalar> Network<T> {
    /// Builds `arch` with every slot set to ReLU and weights initialized by
    /// Kaiming-normal draws from `seed`.
    pub fn build(arch: Architecture, seed: u64) -> Self {
        let mut b = Builder::new();
        match arch {
            Architecture::LenetMnist => {
                b.conv("conv1", 1, 20, 5, 0).act("conv1.act".into(), 20).pool("pool1");
                b.conv("conv2", 20, 30, 5, 0).act("conv2.act".into(), 30).pool("pool2");
                b.layers.push(Layer::Flatten);
                b.dense("fc", 30 * 4 * 4, 10);
            }
            Architecture::SmallCifar10 | Architecture::SmallCifar100 => {
                let mut cin = 3;
                for (i, ch) in [32, 64, 128].into_iter().enumerate() {
                    let blk = format!("block{}", i + 1);
                    let c1 = format!("{blk}.conv1");
                    let c2 = format!("{blk}.conv2");
                    b.conv(&c1, cin, ch, 3, 1).act(format!("{c1}.act"), ch);
                    b.conv(&c2, ch, ch, 3, 1).act(format!("{c2}.act"), ch);
                    b.pool(&format!("{blk}.pool"));
                    cin = ch;
                }
                b.layers.push(Layer::Flatten);
                b.dense("fc", 128 * 4 * 4, arch.num_classes());
            }
            Architecture::XorMlp => {
                b.layers.push(Layer::Flatten);
                b.dense("fc1", 2, 16).act("fc1.act".into(), 16);
                b.dense("fc2", 16, 2);
            }
        }
        let mut net = Network {
            arch,
            layers: b.layers,
            slots: b.slots,
            params: BTreeMap::new(),
        };
        for layer in &net.layers {
            match layer {
                Layer::Conv(c) => {
                    net.params.insert(
                        format!("{}.weight", c.name),
                        Tensor::zeros([c.out_channels, c.in_channels, c.kernel, c.kernel]),
                    );
                    net.params.insert(format!("{}.bias", c.name), Tensor::zeros([c.out_channels]));
                }
                Layer::Dense(d) => {
                    net.params
                        .insert(format!("{}.weight", d.name), Tensor::zeros([d.inputs, d.outputs]));
                    net.params.insert(format!("{}.bias", d.name), Tensor::zeros([d.outputs]));
                }
                _ => {}
            }
        }
        net.init_weights(seed, InitScheme::KaimingNormal);
        net
    }

    pub fn lenet_mnist(seed: u64) -> Self {
        Self::build(Architecture::LenetMnist, seed)
    }

    pub fn small_cifar(classes: usize, seed: u64) -> Result<Self> {
        match classes {
            10 => Ok(Self::build(Architecture::SmallCifar10, seed)),
            100 => Ok(Self::build(Architecture::SmallCifar100, seed)),
            other => Err(Error::Config(format!("small-cifar supports 10 or 100 classes, not {other}"))),
        }
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn slots(&self) -> &[ActivationSlot] {
        &self.slots
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor<T>> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut BTreeMap<String, Tensor<T>> {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Names of conv/dense weights and biases (everything not owned by a slot).
    pub fn layer_param_names(&self) -> Vec<String> {
        let slot_owned: Vec<String> = self
            .slots
            .iter()
            .flat_map(|s| s.param_names().into_iter().map(|(n, _)| n))
            .collect();
        self.params
            .keys()
            .filter(|k| !slot_owned.contains(k))
            .cloned()
            .collect()
    }

    /// Every name accepted by the `capture` argument of [`forward`](Self::forward).
    pub fn site_names(&self) -> Vec<String> {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Conv(c) => c.name.clone(),
                Layer::MaxPool { name, .. } => name.clone(),
                Layer::Flatten => "flatten".to_string(),
                Layer::Dense(d) => d.name.clone(),
                Layer::Activation(i) => self.slots[*i].site.clone(),
            })
            .collect()
    }

    /// Deterministically re-draws all conv/dense weights from `seed`; biases
    /// are zeroed and PReLU slopes reset to their initial value.
    pub fn init_weights(&mut self, seed: u64, scheme: InitScheme) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &self.layers {
            let (name, fan_in) = match layer {
                Layer::Conv(c) => (&c.name, c.in_channels * c.kernel * c.kernel),
                Layer::Dense(d) => (&d.name, d.inputs),
                _ => continue,
            };
            let w = self
                .params
                .get_mut(&format!("{name}.weight"))
                .expect("layer weights registered at build");
            let fan_in = fan_in as f64;
            match scheme {
                InitScheme::KaimingNormal => {
                    let dist = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
                    for v in w.data_mut() {
                        *v = T::from_f64_lossy(dist.sample(&mut rng));
                    }
                }
                InitScheme::UniformRange => {
                    let bound = 1.0 / fan_in.sqrt();
                    let dist = Uniform::new(-bound, bound).expect("non-empty range");
                    for v in w.data_mut() {
                        *v = T::from_f64_lossy(dist.sample(&mut rng));
                    }
                }
            }
            if let Some(b) = self.params.get_mut(&format!("{name}.bias")) {
                b.data_mut().fill(T::zero());
            }
        }
        for slot in &self.slots {
            for (pname, init) in slot.param_names() {
                self.params
                    .insert(pname, Tensor::full([slot.channels], T::from_f64_lossy(init)));
            }
        }
    }

    /// Replaces what the slot `site` computes. Setting the slot to what it
    /// already holds is a no-op (learned slopes are kept). Otherwise the old
    /// slot-owned tensors are dropped and fresh ones registered; conv/dense
    /// parameters are never touched.
    pub fn set_slot(&mut self, site: &str, act: &SlotActivation) -> Result<()> {
        let idx = self
            .slots
            .iter()
            .position(|s| s.site == site)
            .ok_or_else(|| Error::UnknownSite {
                site: site.to_string(),
                valid: self.slots.iter().map(|s| s.site.as_str()).collect::<Vec<_>>().join(", "),
            })?;
        if self.slots[idx].current == *act {
            return Ok(());
        }
        for (name, _) in self.slots[idx].param_names() {
            self.params.remove(&name);
        }
        self.slots[idx].current = act.clone();
        let slot = &self.slots[idx];
        for (name, init) in slot.param_names() {
            self.params
                .insert(name, Tensor::full([slot.channels], T::from_f64_lossy(init)));
        }
        Ok(())
    }

    pub fn set_all_slots(&mut self, act: &SlotActivation) -> Result<()> {
        let sites: Vec<String> = self.slots.iter().map(|s| s.site.clone()).collect();
        for site in sites {
            self.set_slot(&site, act)?;
        }
        Ok(())
    }

    /// Records the forward pass on `tape`. `input` must be `[N, C, H, W]`
    /// matching the architecture. All parameters are bound as named leaves.
    pub fn forward(&self, tape: &mut Tape<T>, input: Var, capture: Option<&str>) -> Result<Forward> {
        let expected = self.arch.input_shape();
        let shape = tape.value(input).shape();
        if shape.len() != 4 || shape[1..] != expected {
            return Err(Error::shape(
                "network input",
                format!("{} expects [N, {}, {}, {}], got {shape:?}", self.arch, expected[0], expected[1], expected[2]),
            ));
        }
        if let Some(site) = capture {
            if !self.site_names().iter().any(|s| s == site) {
                return Err(Error::UnknownSite {
                    site: site.to_string(),
                    valid: self.site_names().join(", "),
                });
            }
        }
        let bound: BTreeMap<&str, Var> = self
            .params
            .iter()
            .map(|(name, t)| (name.as_str(), tape.param(name.clone(), t.clone())))
            .collect();
        let p = |name: String| -> Result<Var> {
            bound.get(name.as_str()).copied().ok_or(Error::UnknownParameter(name))
        };
        let mut x = input;
        let mut captured = None;
        for layer in &self.layers {
            let name: &str;
            x = match layer {
                Layer::Conv(c) => {
                    name = &c.name;
                    let w = p(format!("{}.weight", c.name))?;
                    let b = p(format!("{}.bias", c.name))?;
                    tape.conv2d(x, w, b, c.stride, c.padding)?
                }
                Layer::MaxPool { name: n, kernel, stride } => {
                    name = n;
                    tape.max_pool2d(x, *kernel, *stride)?
                }
                Layer::Flatten => {
                    name = "flatten";
                    tape.flatten(x)?
                }
                Layer::Dense(d) => {
                    name = &d.name;
                    let w = p(format!("{}.weight", d.name))?;
                    let b = p(format!("{}.bias", d.name))?;
                    tape.dense(x, w, b)?
                }
                Layer::Activation(i) => {
                    let slot = &self.slots[*i];
                    name = &slot.site;
                    let (channels, _) = tape.value(x).channel_layout();
                    if channels != slot.channels {
                        return Err(Error::shape(
                            "activation slot",
                            format!("{} expects {} channels, got {channels}", slot.site, slot.channels),
                        ));
                    }
                    match &slot.current {
                        SlotActivation::Single(a) => {
                            let s = if a.is_prelu() {
                                Some(p(format!("{}.prelu_slope", slot.site))?)
                            } else {
                                None
                            };
                            tape.activation(x, *a, s)?
                        }
                        SlotActivation::Mixture(m) => {
                            let slopes = m
                                .branches()
                                .iter()
                                .enumerate()
                                .map(|(bi, b)| {
                                    if b.is_prelu() {
                                        p(format!("{}.branch{bi}.prelu_slope", slot.site)).map(Some)
                                    } else {
                                        Ok(None)
                                    }
                                })
                                .collect::<Result<Vec<_>>>()?;
                            tape.mixture(x, m.clone(), slopes)?
                        }
                    }
                }
            };
            if capture == Some(name) {
                captured = Some(x);
            }
        }
        Ok(Forward { logits: x, captured })
    }

    /// Forward pass without keeping the tape; returns logits.
    pub fn logits(&self, input: Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let x = tape.input(input);
        let out = self.forward(&mut tape, x, None)?;
        Ok(tape.value(out.logits).clone())
    }

    /// Reassembles a network from stored slot encodings and parameters.
    /// Every expected parameter must be present with the right shape.
    pub fn from_parts(
        arch: Architecture,
        slots: &[(String, SlotActivation)],
        params: BTreeMap<String, Tensor<T>>,
    ) -> Result<Self> {
        let mut net = Self::build(arch, 0);
        for (site, act) in slots {
            net.set_slot(site, act)?;
        }
        for (name, expected) in &net.params {
            let got = params
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))?;
            if got.shape() != expected.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    got.shape(),
                    expected.shape()
                )));
            }
        }
        if let Some(extra) = params.keys().find(|k| !net.params.contains_key(*k)) {
            return Err(Error::Checkpoint(format!("unexpected parameter `{extra}`")));
        }
        net.params = params;
        Ok(net)
    }

    /// Same network with every tensor converted to another element type.
    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            arch: self.arch,
            layers: self.layers.clone(),
            slots: self.slots.clone(),
            params: self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activations::MixedActivation;

    #[test]
    fn lenet_shapes_and_count() {
        let net = Network::<f32>::lenet_mnist(1);
        assert_eq!(net.parameter_count(), 20_360);
        assert_eq!(net.params()["fc.weight"].shape(), &[480, 10]);
        let logits = net.logits(Tensor::zeros([1, 1, 28, 28])).unwrap();
        assert_eq!(logits.shape(), &[1, 10]);
    }

    #[test]
    fn lenet_flatten_width_is_480() {
        let net = Network::<f32>::lenet_mnist(1);
        let mut tape = Tape::new();
        let x = tape.input(Tensor::zeros([2, 1, 28, 28]));
        let f = net.forward(&mut tape, x, Some("flatten")).unwrap();
        assert_eq!(tape.value(f.captured.unwrap()).shape(), &[2, 480]);
    }

    #[test]
    fn small_cifar_shapes() {
        let net = Network::<f32>::small_cifar(10, 1).unwrap();
        assert_eq!(net.logits(Tensor::zeros([2, 3, 32, 32])).unwrap().shape(), &[2, 10]);
        let net100 = Network::<f32>::small_cifar(100, 1).unwrap();
        assert_eq!(net100.params()["fc.weight"].shape(), &[2048, 100]);
        assert_eq!(net.slots().len(), 6);
        assert!(Network::<f32>::small_cifar(7, 1).is_err());
    }

    #[test]
    fn rejects_wrong_input_shape() {
        let net = Network::<f32>::lenet_mnist(1);
        assert!(net.logits(Tensor::zeros([1, 3, 28, 28])).is_err());
        assert!(net.logits(Tensor::zeros([1, 28, 28])).is_err());
    }

    #[test]
    fn mixture_registers_per_channel_slopes() {
        let mut net = Network::<f32>::lenet_mnist(1);
        net.set_all_slots(&MixedActivation::cooperative_default().into()).unwrap();
        let s = &net.params()["conv1.act.branch1.prelu_slope"];
        assert_eq!(s.shape(), &[20]);
        assert!(s.data().iter().all(|&v| v == 0.25));
        assert_eq!(net.params()["conv2.act.branch1.prelu_slope"].shape(), &[30]);
    }

    #[test]
    fn swap_drops_slopes_and_keeps_weights() {
        let mut net = Network::<f32>::lenet_mnist(3);
        let before: Vec<_> = net
            .layer_param_names()
            .into_iter()
            .map(|n| (n.clone(), net.params()[&n].clone()))
            .collect();
        net.set_all_slots(&MixedActivation::cooperative_default().into()).unwrap();
        net.set_all_slots(&Activation::Relu.into()).unwrap();
        assert!(!net.params().keys().any(|k| k.ends_with("prelu_slope")));
        for (name, t) in before {
            assert_eq!(net.params()[&name], t, "{name}");
        }
    }

    #[test]
    fn swapping_to_same_activation_is_a_no_op() {
        let mut net = Network::<f32>::lenet_mnist(5);
        net.set_all_slots(&Activation::prelu().into()).unwrap();
        net.params_mut().get_mut("conv1.act.prelu_slope").unwrap().data_mut()[0] = 0.7;
        let x = Tensor::from_vec([1, 1, 28, 28], (0..784).map(|i| (i as f32 * 0.37).sin()).collect()).unwrap();
        let y0 = net.logits(x.clone()).unwrap();
        net.set_all_slots(&Activation::prelu().into()).unwrap();
        assert_eq!(net.params()["conv1.act.prelu_slope"].data()[0], 0.7);
        assert_eq!(net.logits(x).unwrap(), y0);
    }

    #[test]
    fn unknown_site_lists_valid_ones() {
        let mut net = Network::<f32>::lenet_mnist(1);
        let err = net.set_slot("conv9.act", &Activation::Relu.into()).unwrap_err().to_string();
        assert!(err.contains("conv1.act") && err.contains("conv2.act"), "{err}");
    }

    #[test]
    fn init_is_seeded() {
        let a = Network::<f32>::lenet_mnist(11);
        let b = Network::<f32>::lenet_mnist(11);
        let c = Network::<f32>::lenet_mnist(12);
        assert_eq!(a.params(), b.params());
        assert_ne!(a.params()["conv1.weight"], c.params()["conv1.weight"]);
    }

    #[test]
    fn from_parts_validates() {
        let net = Network::<f32>::lenet_mnist(1);
        let slots: Vec<_> = net.slots().iter().map(|s| (s.site.clone(), s.current.clone())).collect();
        let rebuilt = Network::from_parts(Architecture::LenetMnist, &slots, net.params().clone()).unwrap();
        assert_eq!(rebuilt, net);
        let mut missing = net.params().clone();
        missing.remove("fc.bias");
        assert!(Network::<f32>::from_parts(Architecture::LenetMnist, &slots, missing).is_err());
    }
}
