//! Line-based `key = value` run configuration.
//!
//! Every key has a default; files and `--set` overrides may only name known
//! keys. Later assignments win. The resolved configuration renders back to
//! the same grammar, so a `resolved.cfg` can be fed to `--config` again.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use coopinit::activations::{Activation, MixedActivation};
use coopinit::network::{Architecture, InitScheme};
use coopinit::optim::StepSchedule;
use coopinit::trainer::{Mode, TrainPlan};

/// A configuration problem; the CLI exits with status 2.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

type Result<T, E = ConfigError> = std::result::Result<T, E>;

/// Known keys with their defaults and a one-line description.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("experiment", "default", "name of the directory grouping this experiment's runs"),
    ("arch", "lenet-mnist", "lenet-mnist | small-cifar-10 | small-cifar-100 | xor-mlp"),
    ("dataset", "auto", "auto (from arch) | mnist | cifar10 | cifar100 | xor"),
    ("data.dir", "", "dataset directory; empty uses $COOPINIT_DATA/<dataset> or data/<dataset>"),
    ("data.fraction", "1", "stratified fraction of the training split to use"),
    ("data.augment", "false", "random crop with padding 4 and horizontal flip"),
    ("data.train_limit", "0", "keep only the first N training samples (0 keeps all)"),
    ("data.test_limit", "0", "keep only the first N test samples (0 keeps all)"),
    ("data.xor.n", "400", "points per split of the synthetic xor dataset"),
    ("data.xor.sigma", "0.35", "noise of the synthetic xor dataset"),
    ("data.xor.seed", "0", "seed of the synthetic xor dataset"),
    ("mode", "mix", "baseline | baseline-tpt | mixture-full | mix | wnla"),
    ("activation", "relu", "phase-2 activation"),
    ("phase1.mixture", "mix(relu,prelu:0.25,elu:1,softplus;equal)", "phase-1 mixture"),
    ("phase1.fraction", "0.2", "phase-1 epochs as a fraction of phase-2 epochs"),
    ("phase1.lr.base", "0.1", ""),
    ("phase1.lr.factor", "5", ""),
    ("phase1.lr.step_every", "1", ""),
    ("phase2.epochs", "10", ""),
    ("phase2.lr.base", "0.1", ""),
    ("phase2.lr.factor", "5", ""),
    ("phase2.lr.step_every", "4", ""),
    ("phase2.lr.chain", "false", "continue the schedule's epoch counter into phase 2"),
    ("optim.momentum", "0.9", ""),
    ("optim.weight_decay", "0.0001", ""),
    ("batch_size", "64", ""),
    ("eval_batch_size", "500", ""),
    ("seed", "1", "seed of a single run"),
    ("seeds", "1,2,3", "seeds of multi-run commands"),
    ("init", "kaiming-normal", "kaiming-normal | uniform-range"),
    ("precision", "f32", "f32 | f64"),
    ("baseline.concat_schedule", "false", "baseline runs phase-1 plus phase-2 epochs without a swap"),
    ("sweep.fractions", "0.1,0.2,0.3,0.4", "phase-1 fractions for sweep-phase1"),
    ("overfit.fraction", "0.25", "training-set fraction for overfit-study"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            values: KEYS.iter().map(|(k, v, _)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

/// What a dataset spec resolves to.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    Mnist(PathBuf),
    Cifar10(PathBuf),
    Cifar100(PathBuf),
    Xor { n: usize, sigma: f64, seed: u64 },
}

impl RunConfig {
    /// Defaults overlaid with the file at `path` (if any).
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
            cfg.apply_text(&text, &path.display().to_string())?;
        }
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ConfigError(format!("{origin}:{}: expected `key = value`, got `{line}`", i + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| ConfigError(format!("{origin}:{}: {e}", i + 1)))?;
        }
        Ok(())
    }

    /// Applies one `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| ConfigError(format!("--set expects key=value, got `{kv}`")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => Err(ConfigError(format!("unknown config key `{key}`"))),
        }
    }

    pub fn with(&self, key: &str, value: impl ToString) -> Self {
        let mut c = self.clone();
        c.set(key, &value.to_string()).expect("known key");
        c
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).expect("known key")
    }

    fn parse<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        self.get(key)
            .parse()
            .map_err(|e| ConfigError(format!("invalid value `{}` for `{key}`: {e}", self.get(key))))
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>>
    where
        T::Err: fmt::Display,
    {
        self.get(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|e| ConfigError(format!("invalid entry `{s}` in `{key}`: {e}")))
            })
            .collect()
    }

    pub fn experiment(&self) -> Result<String> {
        let name = self.get("experiment");
        if name.is_empty() || name.contains(['/', '\\']) || name == ".." {
            return Err(ConfigError(format!("invalid value `{name}` for `experiment`")));
        }
        Ok(name.to_string())
    }

    pub fn seeds(&self) -> Result<Vec<u64>> {
        let seeds = self.list("seeds")?;
        if seeds.is_empty() {
            return Err(ConfigError("`seeds` must list at least one seed".into()));
        }
        Ok(seeds)
    }

    pub fn sweep_fractions(&self) -> Result<Vec<f64>> {
        let fr: Vec<f64> = self.list("sweep.fractions")?;
        if fr.is_empty() {
            return Err(ConfigError("`sweep.fractions` must list at least one fraction".into()));
        }
        if let Some(bad) = fr.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
            return Err(ConfigError(format!("phase-1 fraction {bad} in `sweep.fractions` is outside (0, 1]")));
        }
        Ok(fr)
    }

    pub fn overfit_fraction(&self) -> Result<f64> {
        let f: f64 = self.parse("overfit.fraction")?;
        if !(f > 0.0 && f <= 1.0) {
            return Err(ConfigError(format!("`overfit.fraction` must be in (0, 1], got {f}")));
        }
        Ok(f)
    }

    pub fn use_f64(&self) -> Result<bool> {
        match self.get("precision") {
            "f32" => Ok(false),
            "f64" => Ok(true),
            other => Err(ConfigError(format!("invalid value `{other}` for `precision` (f32 or f64)"))),
        }
    }

    pub fn train_limit(&self) -> Result<usize> {
        self.parse("data.train_limit")
    }

    pub fn test_limit(&self) -> Result<usize> {
        self.parse("data.test_limit")
    }

    pub fn plan(&self) -> Result<TrainPlan> {
        let schedule = |p: &str| -> Result<StepSchedule> {
            StepSchedule::new(
                self.parse(&format!("{p}.lr.base"))?,
                self.parse(&format!("{p}.lr.factor"))?,
                self.parse(&format!("{p}.lr.step_every"))?,
            )
            .map_err(|e| ConfigError(format!("{p}.lr: {e}")))
        };
        let plan = TrainPlan {
            arch: self.parse::<Architecture>("arch")?,
            mode: self.parse::<Mode>("mode")?,
            activation: self.parse::<Activation>("activation")?,
            phase1_mixture: self.parse::<MixedActivation>("phase1.mixture")?,
            phase2_epochs: self.parse("phase2.epochs")?,
            phase1_fraction: self.parse("phase1.fraction")?,
            phase1_schedule: schedule("phase1")?,
            phase2_schedule: schedule("phase2")?,
            chain_lr: self.parse("phase2.lr.chain")?,
            momentum: self.parse("optim.momentum")?,
            weight_decay: self.parse("optim.weight_decay")?,
            batch_size: self.parse("batch_size")?,
            eval_batch_size: self.parse("eval_batch_size")?,
            seed: self.parse("seed")?,
            dataset_fraction: self.parse("data.fraction")?,
            init: self.parse::<InitScheme>("init")?,
            augment: self.parse("data.augment")?,
            concat_schedule: self.parse("baseline.concat_schedule")?,
        };
        plan.validate().map_err(|e| ConfigError(e.to_string()))?;
        Ok(plan)
    }

    pub fn dataset(&self) -> Result<DatasetSpec> {
        let arch: Architecture = self.parse("arch")?;
        let name = match self.get("dataset") {
            "auto" => match arch {
                Architecture::LenetMnist => "mnist",
                Architecture::SmallCifar10 => "cifar10",
                Architecture::SmallCifar100 => "cifar100",
                Architecture::XorMlp => "xor",
            },
            other => other,
        };
        let dir = |sub: &str| -> PathBuf {
            match self.get("data.dir") {
                "" => std::env::var_os(coopinit::data::DATA_DIR_ENV)
                    .map(PathBuf::from)
                    .unwrap_or_else(|| PathBuf::from("data"))
                    .join(sub),
                d => PathBuf::from(d),
            }
        };
        match name {
            "mnist" => Ok(DatasetSpec::Mnist(dir("mnist"))),
            "cifar10" => Ok(DatasetSpec::Cifar10(dir("cifar-10"))),
            "cifar100" => Ok(DatasetSpec::Cifar100(dir("cifar-100"))),
            "xor" => Ok(DatasetSpec::Xor {
                n: self.parse("data.xor.n")?,
                sigma: self.parse("data.xor.sigma")?,
                seed: self.parse("data.xor.seed")?,
            }),
            other => Err(ConfigError(format!(
                "invalid value `{other}` for `dataset` (auto, mnist, cifar10, cifar100 or xor)"
            ))),
        }
    }

    /// The full configuration in file grammar, keys in declaration order.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, _, doc) in KEYS {
            if !doc.is_empty() {
                out.push_str(&format!("# {doc}\n"));
            }
            out.push_str(&format!("{k} = {}\n", self.get(k)));
        }
        out
    }
}
