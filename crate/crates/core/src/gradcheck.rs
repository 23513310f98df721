//! Finite-difference gradient checks for every op and both desk networks.
//!
//! Each case draws inputs from a seeded RNG, reduces the op output to a
//! scalar with a random weighting `L = Σ r·y`, and compares the tape's
//! gradient against central differences with step `h` in f64. Inputs are
//! drawn away from kinks (ReLU at 0, ties in max-pool windows) so the finite
//! difference never straddles a point of non-differentiability.

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::activations::{Activation, MixedActivation, SlotActivation};
use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::network::{Architecture, Network};
use crate::tensor::Tensor;

pub const STEP: f64 = 1e-3;
pub const REL_TOLERANCE: f64 = 1e-4;
/// Below this gradient magnitude the absolute error is judged instead.
pub const SMALL_GRADIENT: f64 = 1e-3;
pub const ABS_TOLERANCE: f64 = 1e-6;
const MAX_ATTEMPTS_PER_TENSOR: usize = 40;

/// Outcome of one named check across all its seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub seeds: usize,
    pub entries: usize,
    /// Entries passed over because the finite difference crossed a kink.
    pub skipped: usize,
    /// Largest relative error among entries with gradient ≥ [`SMALL_GRADIENT`].
    pub max_rel_error: f64,
    /// Largest absolute error among entries below that magnitude.
    pub max_abs_error: f64,
    pub passed: bool,
    pub elapsed: Duration,
}

#[derive(Default)]
struct Tally {
    entries: usize,
    skipped: usize,
    max_rel: f64,
    max_abs: f64,
    failed: bool,
}

impl Tally {
    fn record(&mut self, analytic: f64, numeric: f64) {
        self.entries += 1;
        let err = (analytic - numeric).abs();
        let scale = analytic.abs().max(numeric.abs());
        if !err.is_finite() {
            self.failed = true;
        } else if scale < SMALL_GRADIENT {
            self.max_abs = self.max_abs.max(err);
            self.failed |= err > ABS_TOLERANCE;
        } else {
            let rel = err / scale;
            self.max_rel = self.max_rel.max(rel);
            self.failed |= rel > REL_TOLERANCE;
        }
    }
}

type Build = dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>;

/// Checks every entry of every leaf of a small graph.
fn check_graph(tally: &mut Tally, leaves: &[Tensor<f64>], build: &Build) -> Result<()> {
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values
            .iter()
            .enumerate()
            .map(|(i, t)| tape.param(format!("leaf{i}"), t.clone()))
            .collect();
        let root = build(&mut tape, &vars)?;
        Ok(tape.value(root).data()[0])
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = leaves
        .iter()
        .enumerate()
        .map(|(i, t)| tape.param(format!("leaf{i}"), t.clone()))
        .collect();
    let root = build(&mut tape, &vars)?;
    let grads = tape.backward(root)?;

    let mut work = leaves.to_vec();
    for (li, leaf) in leaves.iter().enumerate() {
        let analytic = grads
            .get(vars[li])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(leaf.shape().to_vec()));
        for j in 0..leaf.numel() {
            let x = leaf.data()[j];
            work[li].data_mut()[j] = x + STEP;
            let up = eval(&work)?;
            work[li].data_mut()[j] = x - STEP;
            let down = eval(&work)?;
            work[li].data_mut()[j] = x;
            tally.record(analytic.data()[j], (up - down) / (2.0 * STEP));
        }
    }
    Ok(())
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("shape")
}

/// Values with magnitude in `[0.05, 2)` and random sign: no entry sits
/// within a finite-difference step of 0.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let v = (0..n)
        .map(|_| {
            let m = rng.random_range(0.05..2.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::from_vec(shape.to_vec(), v).expect("shape")
}

/// Values 0.02 apart, in random order.
fn distinct(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| (i as f64 - n as f64 / 2.0) * 0.02).collect();
    v.shuffle(rng);
    Tensor::from_vec(shape.to_vec(), v).expect("shape")
}

/// `Σ r·y` for a fixed random `r`.
fn weighted_sum(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
    let r = uniform(&mut rng, tape.value(y).shape(), -1.0, 1.0);
    let r = tape.input(r);
    let prod = tape.mul(y, r)?;
    tape.sum(prod)
}

fn activation_case(act: Activation, seed: u64, tally: &mut Tally) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = away_from_zero(&mut rng, &[2, 3, 4]);
    if act.is_prelu() {
        let slopes = uniform(&mut rng, &[3], 0.05, 0.5);
        check_graph(tally, &[x, slopes], &move |t, v| {
            let y = t.activation(v[0], act, Some(v[1]))?;
            weighted_sum(t, y, seed)
        })
    } else {
        check_graph(tally, &[x], &move |t, v| {
            let y = t.activation(v[0], act, None)?;
            weighted_sum(t, y, seed)
        })
    }
}

fn op_case(name: &str, seed: u64, tally: &mut Tally) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match name {
        "conv2d" => {
            let stride = rng.random_range(1..=2);
            let padding = rng.random_range(0..=1);
            let hw = rng.random_range(5..=7);
            let k = rng.random_range(2..=3);
            let x = uniform(&mut rng, &[2, 2, hw, hw], -1.0, 1.0);
            let w = uniform(&mut rng, &[3, 2, k, k], -1.0, 1.0);
            let b = uniform(&mut rng, &[3], -1.0, 1.0);
            check_graph(tally, &[x, w, b], &move |t, v| {
                let y = t.conv2d(v[0], v[1], v[2], stride, padding)?;
                weighted_sum(t, y, seed)
            })
        }
        "dense" => {
            let x = uniform(&mut rng, &[3, 5], -1.0, 1.0);
            let w = uniform(&mut rng, &[5, 4], -1.0, 1.0);
            let b = uniform(&mut rng, &[4], -1.0, 1.0);
            check_graph(tally, &[x, w, b], &move |t, v| {
                let y = t.dense(v[0], v[1], v[2])?;
                weighted_sum(t, y, seed)
            })
        }
        "max_pool2d" => {
            let (k, stride) = [(2, 2), (3, 2), (2, 1)][rng.random_range(0..3)];
            let x = distinct(&mut rng, &[2, 2, 6, 6]);
            check_graph(tally, &[x], &move |t, v| {
                let y = t.max_pool2d(v[0], k, stride)?;
                weighted_sum(t, y, seed)
            })
        }
        "softmax_cross_entropy" => {
            let x = uniform(&mut rng, &[4, 5], -3.0, 3.0);
            let labels: Vec<usize> = (0..4).map(|_| rng.random_range(0..5)).collect();
            check_graph(tally, &[x], &move |t, v| t.softmax_cross_entropy(v[0], &labels))
        }
        "relu" => activation_case(Activation::Relu, seed, tally),
        "leaky_relu" => activation_case(Activation::leaky_relu(), seed, tally),
        "prelu" => activation_case(Activation::prelu(), seed, tally),
        "elu" => activation_case(Activation::elu(), seed, tally),
        "softplus" => activation_case(Activation::Softplus, seed, tally),
        "mixture" => {
            let mix = MixedActivation::cooperative_default();
            let x = away_from_zero(&mut rng, &[2, 3, 4]);
            let slopes = uniform(&mut rng, &[3], 0.05, 0.5);
            let prelu_branch = mix.branches().iter().position(Activation::is_prelu);
            check_graph(tally, &[x, slopes], &move |t, v| {
                let s = (0..mix.len()).map(|i| (Some(i) == prelu_branch).then_some(v[1])).collect();
                let y = t.mixture(v[0], mix.clone(), s)?;
                weighted_sum(t, y, seed)
            })
        }
        "fixture.corrupted-softplus" => {
            let x = away_from_zero(&mut rng, &[2, 3, 4]);
            check_graph(tally, &[x], &move |t, v| {
                let y = t.map(
                    v[0],
                    |x| x.max(0.0) + (-x.abs()).exp().ln_1p(),
                    |x| 1.01 / (1.0 + (-x).exp()),
                )?;
                weighted_sum(t, y, seed)
            })
        }
        other => unreachable!("unknown gradcheck case {other}"),
    }
}

/// End-to-end check of a whole network with mixture slots. A random sample
/// of entries per parameter tensor is differenced. An entry whose ±h
/// evaluations change a max-pool winner or an activation sign straddles a
/// kink, where central differences are meaningless; it is skipped and
/// another entry drawn instead.
fn network_case(arch: Architecture, seed: u64, per_tensor: usize, tally: &mut Tally) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Network::<f64>::build(arch, seed);
    net.set_all_slots(&SlotActivation::Mixture(MixedActivation::cooperative_default()))?;
    let names: Vec<String> = net.params().keys().cloned().collect();
    for name in &names {
        if name.ends_with("prelu_slope") {
            let shape = net.params()[name].shape().to_vec();
            net.params_mut().insert(name.clone(), uniform(&mut rng, &shape, 0.05, 0.5));
        }
    }
    let [c, h, w] = arch.input_shape();
    let x = uniform(&mut rng, &[1, c, h, w], -1.0, 1.0);
    let labels: Vec<usize> = (0..1).map(|_| rng.random_range(0..arch.num_classes())).collect();

    let forward = |net: &Network<f64>| -> Result<(Tape<f64>, Var)> {
        let mut tape = Tape::new();
        let xi = tape.input(x.clone());
        let fwd = net.forward(&mut tape, xi, None)?;
        let loss = tape.softmax_cross_entropy(fwd.logits, &labels)?;
        Ok((tape, loss))
    };

    let (tape, loss) = forward(&net)?;
    let base = tape.branch_signature();
    let grads = tape.backward(loss)?.into_named(&tape)?;
    drop(tape);
    for name in &names {
        let n = net.params()[name].numel();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        let mut accepted = 0;
        for &j in idx.iter().take(MAX_ATTEMPTS_PER_TENSOR) {
            if accepted == per_tensor {
                break;
            }
            let orig = net.params()[name].data()[j];
            let mut probe = |v: f64| -> Result<(f64, u64)> {
                net.params_mut().get_mut(name).expect("param").data_mut()[j] = v;
                let (t, l) = forward(&net)?;
                Ok((t.value(l).data()[0], t.branch_signature()))
            };
            let (up, sig_up) = probe(orig + STEP)?;
            let (down, sig_down) = probe(orig - STEP)?;
            net.params_mut().get_mut(name).expect("param").data_mut()[j] = orig;
            if sig_up != base || sig_down != base {
                tally.skipped += 1;
                continue;
            }
            accepted += 1;
            tally.record(grads[name].data()[j], (up - down) / (2.0 * STEP));
        }
    }
    Ok(())
}

/// Op-level cases, each run on [`Suite::op_seeds`] seeds.
pub const OP_CASES: [&str; 10] = [
    "conv2d",
    "dense",
    "max_pool2d",
    "softmax_cross_entropy",
    "relu",
    "leaky_relu",
    "prelu",
    "elu",
    "softplus",
    "mixture",
];

/// Whole-network cases.
pub const NETWORK_CASES: [&str; 2] = ["lenet-mnist", "small-cifar-10"];

/// A case whose derivative is deliberately wrong, for testing the harness.
pub const FAULT_FIXTURE: &str = "fixture.corrupted-softplus";

#[derive(Debug, Clone)]
pub struct Suite {
    pub op_seeds: usize,
    pub network_seeds: usize,
    /// Entries differenced per parameter tensor in network cases.
    pub network_entries: usize,
    /// Only run cases whose name contains one of these; empty runs all.
    pub filter: Vec<String>,
    pub include_fault_fixture: bool,
}

impl Default for Suite {
    fn default() -> Self {
        Suite {
            op_seeds: 20,
            network_seeds: 2,
            network_entries: 4,
            filter: Vec::new(),
            include_fault_fixture: false,
        }
    }
}

impl Suite {
    pub fn case_names(&self) -> Vec<&'static str> {
        let mut all: Vec<&'static str> = OP_CASES.iter().chain(NETWORK_CASES.iter()).copied().collect();
        if self.include_fault_fixture {
            all.push(FAULT_FIXTURE);
        }
        all.into_iter()
            .filter(|c| self.filter.is_empty() || self.filter.iter().any(|f| c.contains(f.as_str())))
            .collect()
    }

    pub fn run(&self) -> Result<Vec<CheckResult>> {
        self.case_names().into_iter().map(|name| self.run_case(name)).collect()
    }

    pub fn run_case(&self, name: &str) -> Result<CheckResult> {
        let start = Instant::now();
        let mut tally = Tally::default();
        let seeds = match name {
            "lenet-mnist" | "small-cifar-10" => {
                let arch: Architecture = name.parse()?;
                for seed in 0..self.network_seeds as u64 {
                    network_case(arch, seed + 1, self.network_entries, &mut tally)?;
                }
                self.network_seeds
            }
            _ => {
                for seed in 0..self.op_seeds as u64 {
                    op_case(name, seed + 1, &mut tally)?;
                }
                self.op_seeds
            }
        };
        Ok(CheckResult {
            name: name.to_string(),
            seeds,
            entries: tally.entries,
            skipped: tally.skipped,
            max_rel_error: tally.max_rel,
            max_abs_error: tally.max_abs,
            passed: !tally.failed,
            elapsed: start.elapsed(),
        })
    }
}
