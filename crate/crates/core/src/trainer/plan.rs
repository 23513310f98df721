use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::activations::{Activation, MixedActivation, SlotActivation};
use crate::error::{Error, Result};
use crate::network::{Architecture, InitScheme};
use crate::optim::StepSchedule;

/// Which activation each phase runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    /// Single activation γ, no phase 1.
    Baseline,
    /// Two phases, both with the single activation γ.
    BaselineTpt,
    /// The mixture throughout; never swapped.
    MixtureFull,
    /// Mixture in phase 1, then γ.
    Mix,
    /// Identity at every site in both phases.
    Wnla,
}

impl Mode {
    pub const ALL: [Mode; 5] = [Mode::Baseline, Mode::BaselineTpt, Mode::MixtureFull, Mode::Mix, Mode::Wnla];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::BaselineTpt => "baseline-tpt",
            Mode::MixtureFull => "mixture-full",
            Mode::Mix => "mix",
            Mode::Wnla => "wnla",
        }
    }

    /// Whether the phase-2 activation γ affects this mode.
    pub fn uses_gamma(self) -> bool {
        matches!(self, Mode::Baseline | Mode::BaselineTpt | Mode::Mix)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s.trim())
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown mode `{}` (expected one of baseline, baseline-tpt, mixture-full, mix, wnla)",
                    s.trim()
                ))
            })
    }
}

/// Everything needed to reproduce one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainPlan {
    pub arch: Architecture,
    pub mode: Mode,
    /// γ, the phase-2 activation.
    pub activation: Activation,
    pub phase1_mixture: MixedActivation,
    /// E₂.
    pub phase2_epochs: usize,
    /// f; phase 1 runs `round(f·E₂)` epochs.
    pub phase1_fraction: f64,
    pub phase1_schedule: StepSchedule,
    pub phase2_schedule: StepSchedule,
    /// Continue the epoch counter of the LR schedule into phase 2 instead of
    /// restarting it.
    pub chain_lr: bool,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub eval_batch_size: usize,
    pub seed: u64,
    /// Stratified fraction of the training split to train on.
    pub dataset_fraction: f64,
    pub init: InitScheme,
    pub augment: bool,
    /// Baseline only: run E₁ + E₂ epochs with schedule 1 then schedule 2,
    /// treating the seam like a phase boundary but never swapping.
    pub concat_schedule: bool,
}

impl Default for TrainPlan {
    fn default() -> Self {
        TrainPlan {
            arch: Architecture::LenetMnist,
            mode: Mode::Mix,
            activation: Activation::Relu,
            phase1_mixture: MixedActivation::cooperative_default(),
            phase2_epochs: 10,
            phase1_fraction: 0.2,
            phase1_schedule: StepSchedule {
                base_lr: 0.1,
                decay_factor: 5.0,
                step_every: 1,
            },
            phase2_schedule: StepSchedule {
                base_lr: 0.1,
                decay_factor: 5.0,
                step_every: 4,
            },
            chain_lr: false,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 64,
            eval_batch_size: 500,
            seed: 1,
            dataset_fraction: 1.0,
            init: InitScheme::KaimingNormal,
            augment: false,
            concat_schedule: false,
        }
    }
}

/// A contiguous run of epochs sharing one activation and one schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub phase: u8,
    pub epochs: usize,
    pub schedule: StepSchedule,
    /// Schedule epoch index of this stage's first epoch.
    pub schedule_offset: usize,
    pub activation: SlotActivation,
}

impl TrainPlan {
    /// E₁.
    pub fn phase1_epochs(&self) -> usize {
        if self.mode == Mode::Baseline && !self.concat_schedule {
            0
        } else {
            (self.phase1_fraction * self.phase2_epochs as f64).round() as usize
        }
    }

    pub fn total_epochs(&self) -> usize {
        self.phase1_epochs() + self.phase2_epochs
    }

    /// The activation installed in phase 1 and phase 2 respectively.
    pub fn phase_activations(&self) -> (SlotActivation, SlotActivation) {
        let gamma = SlotActivation::Single(self.activation);
        let mix = SlotActivation::Mixture(self.phase1_mixture.clone());
        match self.mode {
            Mode::Baseline | Mode::BaselineTpt => (gamma.clone(), gamma),
            Mode::MixtureFull => (mix.clone(), mix),
            Mode::Mix => (mix, gamma),
            Mode::Wnla => (
                SlotActivation::Single(Activation::Identity),
                SlotActivation::Single(Activation::Identity),
            ),
        }
    }

    /// Non-empty stages in execution order.
    pub fn stages(&self) -> Vec<Stage> {
        let (a1, a2) = self.phase_activations();
        let e1 = self.phase1_epochs();
        let mut out = Vec::new();
        if e1 > 0 {
            out.push(Stage {
                phase: 1,
                epochs: e1,
                schedule: self.phase1_schedule,
                schedule_offset: 0,
                activation: a1,
            });
        }
        if self.phase2_epochs > 0 {
            out.push(Stage {
                phase: 2,
                epochs: self.phase2_epochs,
                schedule: self.phase2_schedule,
                schedule_offset: if self.chain_lr { e1 } else { 0 },
                activation: a2,
            });
        }
        out
    }

    /// Learning rate and phase for a global 0-based epoch index.
    pub fn epoch_info(&self, epoch: usize) -> Option<(u8, f64)> {
        let mut start = 0;
        for s in self.stages() {
            if epoch < start + s.epochs {
                return Some((s.phase, s.schedule.lr_at(s.schedule_offset + epoch - start)));
            }
            start += s.epochs;
        }
        None
    }

    /// Fail-fast checks run before any training step.
    pub fn validate(&self) -> Result<()> {
        StepSchedule::new(
            self.phase1_schedule.base_lr,
            self.phase1_schedule.decay_factor,
            self.phase1_schedule.step_every,
        )?;
        StepSchedule::new(
            self.phase2_schedule.base_lr,
            self.phase2_schedule.decay_factor,
            self.phase2_schedule.step_every,
        )?;
        if !(0.0..=1.0).contains(&self.phase1_fraction) {
            return Err(Error::Config(format!(
                "phase1.fraction must be in [0, 1], got {}",
                self.phase1_fraction
            )));
        }
        if !(self.dataset_fraction > 0.0 && self.dataset_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "data.fraction must be in (0, 1], got {}",
                self.dataset_fraction
            )));
        }
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("optim.momentum must be in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!("optim.weight_decay must be ≥ 0, got {}", self.weight_decay)));
        }
        if self.concat_schedule && self.mode != Mode::Baseline {
            return Err(Error::Config("baseline.concat_schedule only applies to mode=baseline".into()));
        }
        if self.mode != Mode::Wnla {
            let (a1, a2) = self.phase_activations();
            if a1.uses_identity() || a2.uses_identity() {
                return Err(Error::Activation(format!(
                    "identity activation is only allowed in wnla mode (mode is {})",
                    self.mode
                )));
            }
        }
        Ok(())
    }

    /// Short cell label: `baseline-relu`, `mix-elu`, `wnla`, `mixture-full`.
    pub fn label(&self) -> String {
        if self.mode.uses_gamma() {
            format!("{}-{}", self.mode, self.activation.name())
        } else {
            self.mode.to_string()
        }
    }

    /// Canonical text form of every field, one `key = value` per line. Two
    /// plans train identically iff their descriptions match.
    pub fn describe(&self) -> String {
        let s1 = &self.phase1_schedule;
        let s2 = &self.phase2_schedule;
        let lines = [
            ("arch", self.arch.to_string()),
            ("mode", self.mode.to_string()),
            ("activation", self.activation.to_string()),
            ("phase1.mixture", self.phase1_mixture.to_string()),
            ("phase1.fraction", self.phase1_fraction.to_string()),
            ("phase1.lr.base", s1.base_lr.to_string()),
            ("phase1.lr.factor", s1.decay_factor.to_string()),
            ("phase1.lr.step_every", s1.step_every.to_string()),
            ("phase2.epochs", self.phase2_epochs.to_string()),
            ("phase2.lr.base", s2.base_lr.to_string()),
            ("phase2.lr.factor", s2.decay_factor.to_string()),
            ("phase2.lr.step_every", s2.step_every.to_string()),
            ("phase2.lr.chain", self.chain_lr.to_string()),
            ("optim.momentum", self.momentum.to_string()),
            ("optim.weight_decay", self.weight_decay.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("eval_batch_size", self.eval_batch_size.to_string()),
            ("seed", self.seed.to_string()),
            ("data.fraction", self.dataset_fraction.to_string()),
            ("data.augment", self.augment.to_string()),
            ("init", self.init.to_string()),
            ("baseline.concat_schedule", self.concat_schedule.to_string()),
        ];
        lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// SHA-256 of [`describe`](Self::describe), hex encoded.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.describe().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
