//! SGD with heavy-ball momentum and L2 weight decay, and step LR schedules.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Stochastic gradient descent with momentum.
///
/// Per step: `v ← momentum·v + (grad + weight_decay·param)`, then
/// `param ← param − lr·v`. Velocity buffers are created lazily as zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd<T: Scalar> {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(momentum: f64, weight_decay: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {momentum}")));
        }
        if !(weight_decay >= 0.0 && weight_decay.is_finite()) {
            return Err(Error::Config(format!("weight decay must be ≥ 0, got {weight_decay}")));
        }
        Ok(Sgd {
            momentum,
            weight_decay,
            velocity: BTreeMap::new(),
        })
    }

    pub fn velocity(&self) -> &BTreeMap<String, Tensor<T>> {
        &self.velocity
    }

    /// Replaces the velocity buffers, e.g. when resuming from a checkpoint.
    pub fn set_velocity(&mut self, velocity: BTreeMap<String, Tensor<T>>) {
        self.velocity = velocity;
    }

    /// Forgets all momentum.
    pub fn reset(&mut self) {
        self.velocity.clear();
    }

    /// Updates every parameter in place. `grads` must cover exactly the keys
    /// of `params`.
    pub fn step(
        &mut self,
        params: &mut BTreeMap<String, Tensor<T>>,
        grads: &BTreeMap<String, Tensor<T>>,
        lr: f64,
    ) -> Result<()> {
        if let Some(name) = params.keys().find(|k| !grads.contains_key(*k)) {
            return Err(Error::MissingGradient(name.clone()));
        }
        if let Some(name) = grads.keys().find(|k| !params.contains_key(*k)) {
            return Err(Error::UnknownParameter(name.clone()));
        }
        self.velocity.retain(|k, _| params.contains_key(k));
        let momentum = T::from_f64_lossy(self.momentum);
        let decay = T::from_f64_lossy(self.weight_decay);
        let lr = T::from_f64_lossy(lr);
        for (name, param) in params.iter_mut() {
            let grad = &grads[name];
            param.check_same_shape("sgd", grad)?;
            let v = self
                .velocity
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(param.shape().to_vec()));
            v.check_same_shape("sgd velocity", param)?;
            for ((p, &g), v) in param.data_mut().iter_mut().zip(grad.data()).zip(v.data_mut()) {
                *v = momentum * *v + (g + decay * *p);
                *p = *p - lr * *v;
            }
        }
        Ok(())
    }
}

/// `lr(epoch) = base_lr / decay_factor^floor(epoch / step_every)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSchedule {
    pub base_lr: f64,
    pub decay_factor: f64,
    pub step_every: usize,
}

impl StepSchedule {
    pub fn new(base_lr: f64, decay_factor: f64, step_every: usize) -> Result<Self> {
        if !(base_lr > 0.0 && base_lr.is_finite()) {
            return Err(Error::Config(format!("base lr must be positive, got {base_lr}")));
        }
        if !(decay_factor > 1.0 && decay_factor.is_finite()) {
            return Err(Error::Config(format!("decay factor must be > 1, got {decay_factor}")));
        }
        if step_every == 0 {
            return Err(Error::Config("step_every must be a positive number of epochs".into()));
        }
        Ok(StepSchedule {
            base_lr,
            decay_factor,
            step_every,
        })
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let steps = (epoch / self.step_every) as i32;
        self.base_lr / self.decay_factor.powi(steps)
    }
}
