//! Two-phase training runs, their ablation variants and the study drivers.

mod checkpoint;
mod features;
mod metrics;
mod plan;
mod studies;

use std::borrow::Cow;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::activations::{Activation, SlotActivation};
use crate::autodiff::Tape;
use crate::data::{self, DatasetPair, Split};
use crate::error::{Error, Result};
use crate::network::Network;
use crate::optim::Sgd;
use crate::tensor::{Scalar, Tensor};

pub use checkpoint::{AnyTensor, Checkpoint, CHECKPOINT_MAGIC, FORMAT_VERSION};
pub use features::export_features;
pub use metrics::{metrics_csv, parse_metrics_csv, write_metrics_csv, MetricsRecord, METRICS_HEADER};
pub use plan::{Mode, Stage, TrainPlan};
pub use studies::{
    ablation_grid, epoch_fraction_sweep, mean_std, reduced_data_study, sweep_csv, sweep_plans, OverfitResult,
    SweepRow, ABLATION_ACTIVATIONS,
};

const SHUFFLE_SALT: u64 = 0x5348_5546_464c_4531;
const AUGMENT_SALT: u64 = 0x4155_474d_454e_5431;
const SUBSET_SALT: u64 = 0x5355_4253_4554_3031;

/// Independent stream per (seed, purpose, epoch), so a resumed run draws
/// exactly what an uninterrupted one would.
fn epoch_rng(seed: u64, salt: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt);
    rng.set_stream(epoch as u64);
    rng
}

/// Seed used to draw the stratified training subset of a plan.
pub fn subset_seed(seed: u64) -> u64 {
    seed ^ SUBSET_SALT
}

/// Swaps every activation slot to the single activation `gamma`.
///
/// Conv and dense parameters are untouched. Mixture-owned PReLU slopes are
/// dropped; if `gamma` is PReLU, fresh slopes at their init value are created.
pub fn phase_swap<T: Scalar>(net: &mut Network<T>, gamma: Activation) -> Result<()> {
    net.set_all_slots(&SlotActivation::Single(gamma))
}

fn count_correct<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> usize {
    let classes = logits.shape()[1];
    logits
        .data()
        .chunks_exact(classes)
        .zip(labels)
        .filter(|(row, &label)| {
            let mut best = 0;
            for (j, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = j;
                }
            }
            best == label
        })
        .count()
}

/// Mean loss and top-1 accuracy (percent) over a split, in dataset order.
/// An empty split gives `(NaN, 0)`.
pub fn evaluate<T: Scalar>(net: &Network<T>, split: &Split, batch_size: usize) -> Result<(f64, f64)> {
    if split.is_empty() {
        return Ok((f64::NAN, 0.0));
    }
    let mut loss_sum = 0.0;
    let mut correct = 0;
    let indices: Vec<usize> = (0..split.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let (x, labels) = split.batch::<T>(chunk, None);
        let mut tape = Tape::new();
        let xi = tape.input(x);
        let fwd = net.forward(&mut tape, xi, None)?;
        let loss = tape.softmax_cross_entropy(fwd.logits, &labels)?;
        loss_sum += tape.value(loss).data()[0].to_f64_lossy() * chunk.len() as f64;
        correct += count_correct(tape.value(fwd.logits), &labels);
    }
    Ok((loss_sum / split.len() as f64, 100.0 * correct as f64 / split.len() as f64))
}

/// Final state of a finished run.
#[derive(Debug, Clone)]
pub struct RunOutput<T: Scalar> {
    pub network: Network<T>,
    pub checkpoint: Checkpoint,
    pub metrics: Vec<MetricsRecord>,
}

/// A run in progress. Drives one epoch at a time so callers can checkpoint
/// or report between epochs.
pub struct Trainer<'a, T: Scalar> {
    plan: TrainPlan,
    stages: Vec<Stage>,
    data: Cow<'a, DatasetPair>,
    net: Network<T>,
    sgd: Sgd<T>,
    epochs_done: usize,
    metrics: Vec<MetricsRecord>,
}

impl<'a, T: Scalar> Trainer<'a, T> {
    /// Validates everything up front, then builds and initializes the
    /// network with the first stage's activation installed.
    pub fn new(plan: TrainPlan, data: &'a DatasetPair) -> Result<Self> {
        let mut t = Self::prepare(plan, data)?;
        let first = t
            .stages
            .first()
            .map(|s| s.activation.clone())
            .unwrap_or_else(|| t.plan.phase_activations().1);
        t.net.init_weights(t.plan.seed, t.plan.init);
        t.net.set_all_slots(&first)?;
        Ok(t)
    }

    /// Continues a run from a checkpoint written by [`Trainer::checkpoint`].
    /// The plan must be the one the checkpoint was produced with.
    pub fn resume(plan: TrainPlan, data: &'a DatasetPair, ckpt: &Checkpoint) -> Result<Self> {
        let mut t = Self::prepare(plan, data)?;
        if ckpt.fingerprint != t.plan.fingerprint() {
            return Err(Error::Checkpoint("plan fingerprint does not match the checkpoint".into()));
        }
        if ckpt.architecture != t.plan.arch {
            return Err(Error::Checkpoint(format!(
                "checkpoint is for {}, plan uses {}",
                ckpt.architecture, t.plan.arch
            )));
        }
        if ckpt.epochs_done > t.plan.total_epochs() {
            return Err(Error::Checkpoint(format!(
                "checkpoint is at epoch {} but the plan has only {}",
                ckpt.epochs_done,
                t.plan.total_epochs()
            )));
        }
        t.net = ckpt.network()?;
        t.sgd.set_velocity(ckpt.velocity_tensors());
        t.epochs_done = ckpt.epochs_done;
        Ok(t)
    }

    fn prepare(plan: TrainPlan, data: &'a DatasetPair) -> Result<Self> {
        plan.validate()?;
        let expected = plan.arch.input_shape();
        if data.image_shape() != expected {
            return Err(Error::shape(
                "dataset",
                format!("{} expects images {:?}, dataset has {:?}", plan.arch, expected, data.image_shape()),
            ));
        }
        if data.num_classes != plan.arch.num_classes() {
            return Err(Error::Config(format!(
                "{} has {} outputs but the dataset has {} classes",
                plan.arch,
                plan.arch.num_classes(),
                data.num_classes
            )));
        }
        let data = if plan.dataset_fraction < 1.0 {
            Cow::Owned(data::subset(data, plan.dataset_fraction, subset_seed(plan.seed))?)
        } else {
            Cow::Borrowed(data)
        };
        Ok(Trainer {
            stages: plan.stages(),
            net: Network::build(plan.arch, plan.seed),
            sgd: Sgd::new(plan.momentum, plan.weight_decay)?,
            epochs_done: 0,
            metrics: Vec::new(),
            data,
            plan,
        })
    }

    pub fn plan(&self) -> &TrainPlan {
        &self.plan
    }

    pub fn network(&self) -> &Network<T> {
        &self.net
    }

    /// Training data actually used (after subsampling).
    pub fn data(&self) -> &DatasetPair {
        &self.data
    }

    pub fn metrics(&self) -> &[MetricsRecord] {
        &self.metrics
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    pub fn is_finished(&self) -> bool {
        self.epochs_done >= self.plan.total_epochs()
    }

    /// Phase of the most recently completed epoch, 0 before any.
    pub fn current_phase(&self) -> u8 {
        match self.epochs_done {
            0 => 0,
            e => self.plan.epoch_info(e - 1).map_or(0, |(p, _)| p),
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::from_network(&self.net);
        ck.velocity = self
            .sgd
            .velocity()
            .iter()
            .map(|(k, v)| (k.clone(), AnyTensor::from_tensor(v)))
            .collect();
        ck.fingerprint = self.plan.fingerprint();
        ck.rng_seed = self.plan.seed;
        ck.epochs_done = self.epochs_done;
        ck.phase = self.current_phase();
        ck
    }

    /// Runs the next epoch and returns its metrics, or `None` when done.
    pub fn step_epoch(&mut self) -> Result<Option<MetricsRecord>> {
        let epoch = self.epochs_done;
        let Some((phase, lr)) = self.plan.epoch_info(epoch) else {
            return Ok(None);
        };
        let mut start = 0;
        for (i, stage) in self.stages.iter().enumerate() {
            if i > 0 && epoch == start {
                self.net.set_all_slots(&stage.activation)?;
                self.sgd.reset();
            }
            start += stage.epochs;
        }

        let train = &self.data.train;
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut epoch_rng(self.plan.seed, SHUFFLE_SALT, epoch));
        let mut aug_rng = epoch_rng(self.plan.seed, AUGMENT_SALT, epoch);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for chunk in order.chunks(self.plan.batch_size) {
            let rng = if self.plan.augment { Some(&mut aug_rng) } else { None };
            let (x, labels) = train.batch::<T>(chunk, rng);
            let mut tape = Tape::new();
            let xi = tape.input(x);
            let fwd = self.net.forward(&mut tape, xi, None)?;
            let loss = tape.softmax_cross_entropy(fwd.logits, &labels)?;
            loss_sum += tape.value(loss).data()[0].to_f64_lossy() * chunk.len() as f64;
            correct += count_correct(tape.value(fwd.logits), &labels);
            let grads = tape.backward(loss)?.into_named(&tape)?;
            self.sgd.step(self.net.params_mut(), &grads, lr)?;
        }
        let n = train.len();
        let (train_loss, train_acc) = if n == 0 {
            (f64::NAN, 0.0)
        } else {
            (loss_sum / n as f64, 100.0 * correct as f64 / n as f64)
        };
        let (test_loss, test_acc) = evaluate(&self.net, &self.data.test, self.plan.eval_batch_size)?;
        let record = MetricsRecord {
            epoch,
            phase,
            lr,
            train_loss,
            train_acc,
            test_loss,
            test_acc,
        };
        self.metrics.push(record);
        self.epochs_done += 1;
        Ok(Some(record))
    }

    /// Runs all remaining epochs.
    pub fn finish(mut self) -> Result<RunOutput<T>> {
        while self.step_epoch()?.is_some() {}
        Ok(RunOutput {
            checkpoint: self.checkpoint(),
            network: self.net,
            metrics: self.metrics,
        })
    }
}

/// Builds, trains and evaluates `plan` from scratch.
pub fn run_plan<T: Scalar>(plan: &TrainPlan, data: &DatasetPair) -> Result<RunOutput<T>> {
    Trainer::new(plan.clone(), data)?.finish()
}
