use crate::activations::Activation;
use crate::data::DatasetPair;
use crate::error::{Error, Result};
use crate::tensor::Scalar;

use super::{evaluate, Mode, RunOutput, TrainPlan, Trainer};

/// The four single activations the ablation grid crosses with each mode.
pub const ABLATION_ACTIVATIONS: [Activation; 4] = [
    Activation::Relu,
    Activation::Prelu { init: 0.25 },
    Activation::Elu { alpha: 1.0 },
    Activation::Softplus,
];

/// Mean and sample standard deviation (`n − 1`); the deviation is 0 for
/// fewer than two values.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Every cell of the ablation: baseline and baseline-tpt for each of the
/// four activations, wnla, mixture-full, then mix(γ) for each activation.
pub fn ablation_grid(base: &TrainPlan) -> Vec<TrainPlan> {
    let with = |mode: Mode, activation: Activation| TrainPlan {
        mode,
        activation,
        concat_schedule: false,
        ..base.clone()
    };
    let mut grid = Vec::with_capacity(14);
    for mode in [Mode::Baseline, Mode::BaselineTpt] {
        grid.extend(ABLATION_ACTIVATIONS.iter().map(|&a| with(mode, a)));
    }
    grid.push(with(Mode::Wnla, Activation::Relu));
    grid.push(with(Mode::MixtureFull, Activation::Relu));
    grid.extend(ABLATION_ACTIVATIONS.iter().map(|&a| with(Mode::Mix, a)));
    grid
}

/// One plan per phase-1 fraction; fractions must lie in (0, 1].
pub fn sweep_plans(base: &TrainPlan, fractions: &[f64]) -> Result<Vec<TrainPlan>> {
    fractions
        .iter()
        .map(|&f| {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config(format!("phase-1 fraction must be in (0, 1], got {f}")));
            }
            Ok(TrainPlan {
                phase1_fraction: f,
                ..base.clone()
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub fraction: f64,
    /// Final test accuracy per seed, in seed order.
    pub test_accs: Vec<f64>,
}

impl SweepRow {
    pub fn mean_std(&self) -> (f64, f64) {
        mean_std(&self.test_accs)
    }
}

/// Final test accuracy of `base` for each phase-1 fraction and seed.
pub fn epoch_fraction_sweep<T: Scalar>(
    base: &TrainPlan,
    fractions: &[f64],
    seeds: &[u64],
    data: &DatasetPair,
) -> Result<Vec<SweepRow>> {
    sweep_plans(base, fractions)?
        .into_iter()
        .map(|plan| {
            let test_accs = seeds
                .iter()
                .map(|&seed| {
                    let out = super::run_plan::<T>(&TrainPlan { seed, ..plan.clone() }, data)?;
                    Ok(out.metrics.last().map_or(f64::NAN, |m| m.test_acc))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(SweepRow {
                fraction: plan.phase1_fraction,
                test_accs,
            })
        })
        .collect()
}

/// `fraction,test_acc_mean,test_acc_std` table.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("fraction,test_acc_mean,test_acc_std\n");
    for r in rows {
        let (m, s) = r.mean_std();
        out.push_str(&format!("{:.6},{m:.6},{s:.6}\n", r.fraction));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverfitResult {
    /// Accuracy on the (subsampled) training split after training, measured
    /// in a separate pass without augmentation.
    pub train_acc: f64,
    pub test_acc: f64,
    /// `train_acc − test_acc`.
    pub gap: f64,
}

/// Trains `plan` on a stratified `fraction` of the training split and
/// reports final train and test accuracy.
pub fn reduced_data_study<T: Scalar>(
    plan: &TrainPlan,
    fraction: f64,
    data: &DatasetPair,
) -> Result<(OverfitResult, RunOutput<T>)> {
    let plan = TrainPlan {
        dataset_fraction: fraction,
        ..plan.clone()
    };
    let mut trainer = Trainer::<T>::new(plan, data)?;
    while trainer.step_epoch()?.is_some() {}
    let (_, train_acc) = evaluate(trainer.network(), &trainer.data().train, trainer.plan().eval_batch_size)?;
    let (_, test_acc) = match trainer.metrics().last() {
        Some(m) => (m.test_loss, m.test_acc),
        None => evaluate(trainer.network(), &trainer.data().test, trainer.plan().eval_batch_size)?,
    };
    let result = OverfitResult {
        train_acc,
        test_acc,
        gap: train_acc - test_acc,
    };
    Ok((result, trainer.finish()?))
}
