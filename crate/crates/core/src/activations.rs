//! Activation functions and the equal-weight activation mixture.
//!
//! A mixture site computes `Σᵢ βᵢ·Fᵢ(x)` elementwise, with `Σᵢ βᵢ = 1`.
//! Its derivative is the β-weighted sum of the branch derivatives, so the
//! gradient reaching the preceding layer aggregates every branch.
//!
//! Tensors are laid out `[N, C, …]`; PReLU slopes are per channel (axis 1).
//!
//! Text encoding, used by configs and checkpoints:
//!
//! ```text
//! relu | leaky_relu[:slope] | prelu[:init] | elu[:alpha] | softplus | identity
//! mix(<act>,<act>,...;equal)
//! mix(<act>,<act>,...;<w1>,<w2>,...)
//! ```

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;
pub const DEFAULT_PRELU_INIT: f64 = 0.25;
pub const DEFAULT_ELU_ALPHA: f64 = 1.0;

const WEIGHT_SUM_TOLERANCE: f64 = 1e-12;

/// One elementwise activation function with its fixed hyperparameters.
///
/// `Identity` only makes sense for the no-nonlinearity ablation; the trainer
/// rejects it in every other mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu { slope: f64 },
    /// Learnable per-channel negative slope; `init` is the starting value.
    Prelu { init: f64 },
    Elu { alpha: f64 },
    Softplus,
    Identity,
}

impl Activation {
    pub fn prelu() -> Self {
        Activation::Prelu {
            init: DEFAULT_PRELU_INIT,
        }
    }

    pub fn elu() -> Self {
        Activation::Elu {
            alpha: DEFAULT_ELU_ALPHA,
        }
    }

    pub fn leaky_relu() -> Self {
        Activation::LeakyRelu {
            slope: DEFAULT_LEAKY_SLOPE,
        }
    }

    pub fn is_prelu(&self) -> bool {
        matches!(self, Activation::Prelu { .. })
    }

    /// Short name without parameters, used in run-directory labels.
    pub fn name(&self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::LeakyRelu { .. } => "leaky_relu",
            Activation::Prelu { .. } => "prelu",
            Activation::Elu { .. } => "elu",
            Activation::Softplus => "softplus",
            Activation::Identity => "identity",
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Activation::Elu { alpha } if !(alpha > 0.0 && alpha.is_finite()) => Err(
                Error::Activation(format!("elu alpha must be positive, got {alpha}")),
            ),
            Activation::LeakyRelu { slope } if !slope.is_finite() => Err(Error::Activation(
                format!("leaky_relu slope must be finite, got {slope}"),
            )),
            Activation::Prelu { init } if !init.is_finite() => Err(Error::Activation(format!(
                "prelu init must be finite, got {init}"
            ))),
            _ => Ok(()),
        }
    }

    #[inline]
    fn value<T: Scalar>(&self, x: T, slope: T) -> T {
        let zero = T::zero();
        match *self {
            Activation::Relu => {
                if x > zero {
                    x
                } else {
                    zero
                }
            }
            Activation::LeakyRelu { .. } | Activation::Prelu { .. } => {
                if x > zero {
                    x
                } else {
                    slope * x
                }
            }
            Activation::Elu { .. } => {
                if x > zero {
                    x
                } else {
                    slope * x.exp_m1()
                }
            }
            Activation::Softplus => x.max(zero) + (-x.abs()).exp().ln_1p(),
            Activation::Identity => x,
        }
    }

    #[inline]
    fn derivative<T: Scalar>(&self, x: T, slope: T) -> T {
        let zero = T::zero();
        let one = T::one();
        match *self {
            Activation::Relu => {
                if x > zero {
                    one
                } else {
                    zero
                }
            }
            Activation::LeakyRelu { .. } | Activation::Prelu { .. } => {
                if x > zero {
                    one
                } else {
                    slope
                }
            }
            Activation::Elu { .. } => {
                if x > zero {
                    one
                } else {
                    slope * x.exp()
                }
            }
            Activation::Softplus => sigmoid(x),
            Activation::Identity => one,
        }
    }

    /// The constant that plays the role of `slope` in `value`/`derivative`
    /// for kinds whose slope is not learnable.
    fn fixed_slope(&self) -> f64 {
        match *self {
            Activation::LeakyRelu { slope } => slope,
            Activation::Elu { alpha } => alpha,
            Activation::Prelu { init } => init,
            _ => 0.0,
        }
    }
}

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    let one = T::one();
    if x >= T::zero() {
        one / (one + (-x).exp())
    } else {
        let e = x.exp();
        e / (one + e)
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::LeakyRelu { slope } => write!(f, "leaky_relu:{slope:?}"),
            Activation::Prelu { init } => write!(f, "prelu:{init:?}"),
            Activation::Elu { alpha } => write!(f, "elu:{alpha:?}"),
            other => f.write_str(other.name()),
        }
    }
}

fn parse_param(name: &str, raw: Option<&str>, default: f64) -> Result<f64> {
    match raw {
        None => Ok(default),
        Some(s) => s
            .trim()
            .parse::<f64>()
            .map_err(|_| Error::Activation(format!("bad parameter `{s}` for {name}"))),
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, param) = match s.split_once(':') {
            Some((n, p)) => (n.trim(), Some(p)),
            None => (s, None),
        };
        let no_param = |act: Activation| match param {
            None => Ok(act),
            Some(_) => Err(Error::Activation(format!("{name} takes no parameter"))),
        };
        let act = match name.to_ascii_lowercase().as_str() {
            "relu" => no_param(Activation::Relu)?,
            "softplus" => no_param(Activation::Softplus)?,
            "identity" | "none" => no_param(Activation::Identity)?,
            "leaky_relu" | "leakyrelu" => Activation::LeakyRelu {
                slope: parse_param(name, param, DEFAULT_LEAKY_SLOPE)?,
            },
            "prelu" => Activation::Prelu {
                init: parse_param(name, param, DEFAULT_PRELU_INIT)?,
            },
            "elu" => Activation::Elu {
                alpha: parse_param(name, param, DEFAULT_ELU_ALPHA)?,
            },
            _ => return Err(Error::Activation(format!("unknown activation `{s}`"))),
        };
        act.validate()?;
        Ok(act)
    }
}

/// A k-way weighted mixture of activations, `Σᵢ βᵢ·Fᵢ(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedActivation {
    branches: Vec<Activation>,
    weights: Vec<f64>,
}

impl MixedActivation {
    /// Builds a mixture with explicit weights. Weights must already sum to 1;
    /// they are never renormalized.
    pub fn new(branches: Vec<Activation>, weights: Vec<f64>) -> Result<Self> {
        if branches.is_empty() {
            return Err(Error::Activation("mixture needs at least one branch".into()));
        }
        if branches.len() != weights.len() {
            return Err(Error::Activation(format!(
                "{} branches but {} weights",
                branches.len(),
                weights.len()
            )));
        }
        for b in &branches {
            b.validate()?;
        }
        let total: f64 = weights.iter().sum();
        if !total.is_finite() || (total - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(Error::UnnormalizedWeights(total));
        }
        Ok(MixedActivation { branches, weights })
    }

    /// βᵢ = 1/k for every branch.
    pub fn equal(branches: Vec<Activation>) -> Result<Self> {
        let k = branches.len().max(1);
        let w = 1.0 / k as f64;
        Self::new(branches, vec![w; k])
    }

    /// ReLU, PReLU(0.25), ELU(1.0) and SoftPlus with equal weights.
    pub fn cooperative_default() -> Self {
        Self::equal(vec![
            Activation::Relu,
            Activation::prelu(),
            Activation::elu(),
            Activation::Softplus,
        ])
        .expect("default mixture is valid")
    }

    pub fn branches(&self) -> &[Activation] {
        &self.branches
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.branches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.branches.is_empty()
    }

    fn is_equal_weight(&self) -> bool {
        let w = 1.0 / self.branches.len() as f64;
        self.weights.iter().all(|&x| x == w)
    }
}

impl fmt::Display for MixedActivation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("mix(")?;
        for (i, b) in self.branches.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{b}")?;
        }
        f.write_str(";")?;
        if self.is_equal_weight() {
            f.write_str("equal")?;
        } else {
            for (i, w) in self.weights.iter().enumerate() {
                if i > 0 {
                    f.write_str(",")?;
                }
                write!(f, "{w:?}")?;
            }
        }
        f.write_str(")")
    }
}

impl FromStr for MixedActivation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let inner = s
            .strip_prefix("mix(")
            .and_then(|r| r.strip_suffix(')'))
            .ok_or_else(|| Error::Activation(format!("expected mix(...), got `{s}`")))?;
        let (branch_part, weight_part) = match inner.split_once(';') {
            Some((b, w)) => (b, Some(w.trim())),
            None => (inner, None),
        };
        let branches = branch_part
            .split(',')
            .map(str::parse)
            .collect::<Result<Vec<Activation>>>()?;
        match weight_part {
            None | Some("equal") => Self::equal(branches),
            Some(w) => {
                let weights = w
                    .split(',')
                    .map(|x| {
                        x.trim()
                            .parse::<f64>()
                            .map_err(|_| Error::Activation(format!("bad mixture weight `{x}`")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Self::new(branches, weights)
            }
        }
    }
}

/// What an activation site currently computes.
#[derive(Debug, Clone, PartialEq)]
pub enum SlotActivation {
    Single(Activation),
    Mixture(MixedActivation),
}

impl SlotActivation {
    pub fn is_mixture(&self) -> bool {
        matches!(self, SlotActivation::Mixture(_))
    }

    /// Branches that own learnable PReLU slopes, as (branch index, init).
    /// For a single activation the index is `None`.
    pub fn prelu_branches(&self) -> Vec<(Option<usize>, f64)> {
        match self {
            SlotActivation::Single(Activation::Prelu { init }) => vec![(None, *init)],
            SlotActivation::Single(_) => Vec::new(),
            SlotActivation::Mixture(m) => m
                .branches
                .iter()
                .enumerate()
                .filter_map(|(i, b)| match b {
                    Activation::Prelu { init } => Some((Some(i), *init)),
                    _ => None,
                })
                .collect(),
        }
    }

    pub fn uses_identity(&self) -> bool {
        match self {
            SlotActivation::Single(a) => *a == Activation::Identity,
            SlotActivation::Mixture(m) => m.branches.contains(&Activation::Identity),
        }
    }
}

impl From<Activation> for SlotActivation {
    fn from(a: Activation) -> Self {
        SlotActivation::Single(a)
    }
}

impl From<MixedActivation> for SlotActivation {
    fn from(m: MixedActivation) -> Self {
        SlotActivation::Mixture(m)
    }
}

impl fmt::Display for SlotActivation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SlotActivation::Single(a) => a.fmt(f),
            SlotActivation::Mixture(m) => m.fmt(f),
        }
    }
}

impl FromStr for SlotActivation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.starts_with("mix(") {
            Ok(SlotActivation::Mixture(s.parse()?))
        } else {
            Ok(SlotActivation::Single(s.parse()?))
        }
    }
}

fn check_slopes<T: Scalar>(spec: &Activation, x: &Tensor<T>, slopes: Option<&Tensor<T>>) -> Result<()> {
    let (channels, _) = x.channel_layout();
    match (spec.is_prelu(), slopes) {
        (true, None) => Err(Error::Activation("prelu requires slope parameters".into())),
        (false, Some(_)) => Err(Error::Activation(format!(
            "{} takes no slope parameters",
            spec.name()
        ))),
        (true, Some(s)) if s.numel() != channels => Err(Error::shape(
            "prelu",
            format!("{} slopes for {channels} channels", s.numel()),
        )),
        _ => Ok(()),
    }
}

/// Calls `f(element_index, channel)` over a `[N, C, …]` layout.
#[inline]
fn for_each_channel(len: usize, channels: usize, inner: usize, mut f: impl FnMut(std::ops::Range<usize>, usize)) {
    let inner = inner.max(1);
    let mut start = 0;
    let mut c = 0;
    while start < len {
        let end = (start + inner).min(len);
        f(start..end, c);
        start = end;
        c += 1;
        if c == channels {
            c = 0;
        }
    }
}

fn slope_for<T: Scalar>(spec: &Activation, slopes: Option<&Tensor<T>>, c: usize) -> T {
    match slopes {
        Some(s) => s.data()[c],
        None => T::from_f64_lossy(spec.fixed_slope()),
    }
}

/// Elementwise forward of a single activation. `slopes` must be given exactly
/// when `spec` is PReLU.
pub fn act_forward<T: Scalar>(spec: &Activation, x: &Tensor<T>, slopes: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    check_slopes(spec, x, slopes)?;
    let (channels, inner) = x.channel_layout();
    let mut out = x.clone();
    let xs = x.data();
    let os = out.data_mut();
    for_each_channel(xs.len(), channels, inner, |range, c| {
        let a = slope_for(spec, slopes, c);
        for i in range {
            os[i] = spec.value(xs[i], a);
        }
    });
    Ok(out)
}

/// Returns `upstream ⊙ F′(x)` and, for PReLU, the per-channel slope gradient
/// `Σ upstream·x·1[x≤0]`.
pub fn act_backward<T: Scalar>(
    spec: &Activation,
    x: &Tensor<T>,
    upstream: &Tensor<T>,
    slopes: Option<&Tensor<T>>,
) -> Result<(Tensor<T>, Option<Tensor<T>>)> {
    check_slopes(spec, x, slopes)?;
    upstream.check_same_shape("activation backward", x)?;
    let (channels, inner) = x.channel_layout();
    let mut dx = upstream.clone();
    let mut dslope = slopes.map(|s| vec![T::zero(); s.numel()]);
    let xs = x.data();
    let ups = upstream.data();
    let ds = dx.data_mut();
    for_each_channel(xs.len(), channels, inner, |range, c| {
        let a = slope_for(spec, slopes, c);
        for i in range.clone() {
            ds[i] = ups[i] * spec.derivative(xs[i], a);
        }
        if let Some(g) = dslope.as_mut() {
            let mut acc = T::zero();
            for i in range {
                if xs[i] <= T::zero() {
                    acc = acc + ups[i] * xs[i];
                }
            }
            g[c] = g[c] + acc;
        }
    });
    let dslope = match (dslope, slopes) {
        (Some(g), Some(s)) => Some(Tensor::from_vec(s.shape().to_vec(), g)?),
        _ => None,
    };
    Ok((dx, dslope))
}

fn check_mixture_slopes<T: Scalar>(mix: &MixedActivation, slopes: &[Option<&Tensor<T>>]) -> Result<()> {
    if slopes.len() != mix.len() {
        return Err(Error::Activation(format!(
            "mixture has {} branches but {} slope entries",
            mix.len(),
            slopes.len()
        )));
    }
    Ok(())
}

/// `Σᵢ βᵢ·Fᵢ(x)`; `slopes[i]` holds branch i's PReLU slopes (or `None`).
///
/// The first branch initializes the accumulator, so a one-branch mixture with
/// β = 1 is bit-identical to the bare activation.
pub fn mixture_forward<T: Scalar>(
    mix: &MixedActivation,
    x: &Tensor<T>,
    slopes: &[Option<&Tensor<T>>],
) -> Result<Tensor<T>> {
    check_mixture_slopes(mix, slopes)?;
    let mut out: Option<Tensor<T>> = None;
    for ((branch, &w), s) in mix.branches.iter().zip(&mix.weights).zip(slopes) {
        let y = act_forward(branch, x, *s)?;
        let w = T::from_f64_lossy(w);
        match out.as_mut() {
            None => out = Some(y.map(|v| w * v)),
            Some(acc) => {
                for (a, &v) in acc.data_mut().iter_mut().zip(y.data()) {
                    *a = *a + w * v;
                }
            }
        }
    }
    Ok(out.expect("non-empty mixture"))
}

/// `upstream ⊙ Σᵢ βᵢ·Fᵢ′(x)` plus βᵢ-scaled slope gradients per PReLU branch.
pub fn mixture_backward<T: Scalar>(
    mix: &MixedActivation,
    x: &Tensor<T>,
    upstream: &Tensor<T>,
    slopes: &[Option<&Tensor<T>>],
) -> Result<(Tensor<T>, Vec<Option<Tensor<T>>>)> {
    check_mixture_slopes(mix, slopes)?;
    upstream.check_same_shape("mixture backward", x)?;
    let (channels, inner) = x.channel_layout();
    let xs = x.data();
    let mut deriv: Vec<T> = Vec::new();
    let mut dslopes = Vec::with_capacity(mix.len());
    for ((branch, &w), s) in mix.branches.iter().zip(&mix.weights).zip(slopes) {
        check_slopes(branch, x, *s)?;
        let w = T::from_f64_lossy(w);
        let first = deriv.is_empty();
        if first {
            deriv = vec![T::zero(); xs.len()];
        }
        for_each_channel(xs.len(), channels, inner, |range, c| {
            let a = slope_for(branch, *s, c);
            for i in range {
                let d = w * branch.derivative(xs[i], a);
                deriv[i] = if first { d } else { deriv[i] + d };
            }
        });
        dslopes.push(match s {
            Some(s) => {
                let (_, g) = act_backward(branch, x, upstream, Some(s))?;
                g.map(|g| g.map(|v| w * v))
            }
            None => None,
        });
    }
    let dx = Tensor::from_vec(
        x.shape().to_vec(),
        upstream
            .data()
            .iter()
            .zip(&deriv)
            .map(|(&u, &d)| u * d)
            .collect(),
    )?;
    Ok((dx, dslopes))
}
