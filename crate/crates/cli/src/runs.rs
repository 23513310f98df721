//! Executing plans into run directories and aggregating them afterwards.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{Context, Result};
use coopinit::data::{self, DatasetPair};
use coopinit::trainer::{self, evaluate, metrics_csv, parse_metrics_csv, Trainer};
use coopinit::Scalar;

use crate::config::{ConfigError, DatasetSpec, RunConfig};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "final.ckpt";
pub const RESOLVED_FILE: &str = "resolved.cfg";
pub const FINAL_EVAL_FILE: &str = "final_eval.csv";

/// One training run: a fully resolved config and where its files go.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub cell: String,
    pub seed: u64,
    pub cfg: RunConfig,
    pub dir: PathBuf,
    /// Also measure accuracy on the training split after training.
    pub final_train_eval: bool,
}

pub fn run_dir(out: &Path, experiment: &str, cell: &str, seed: u64) -> PathBuf {
    out.join(experiment).join(cell).join(format!("seed{seed}"))
}

pub fn load_dataset(cfg: &RunConfig) -> Result<DatasetPair> {
    let spec = cfg.dataset()?;
    let mut pair = match &spec {
        DatasetSpec::Mnist(dir) => data::load_mnist(dir)?,
        DatasetSpec::Cifar10(dir) => data::load_cifar10(dir)?,
        DatasetSpec::Cifar100(dir) => data::load_cifar100(dir)?,
        DatasetSpec::Xor { n, sigma, seed } => {
            data::make_synthetic_xor(*n, *sigma, *seed).map_err(|e| ConfigError(e.to_string()))?
        }
    };
    match cfg.train_limit()? {
        0 => {}
        n => pair.train = pair.train.truncated(n),
    }
    match cfg.test_limit()? {
        0 => {}
        n => pair.test = pair.test.truncated(n),
    }
    let arch = cfg.plan()?.arch;
    if pair.image_shape() != arch.input_shape() || pair.num_classes != arch.num_classes() {
        return Err(ConfigError(format!(
            "dataset {} ({:?}, {} classes) does not fit architecture {arch}",
            pair.name,
            pair.image_shape(),
            pair.num_classes
        ))
        .into());
    }
    Ok(pair)
}

/// Writes `resolved.cfg`, trains, and writes `metrics.csv` (after every
/// epoch), `final.ckpt` and, if requested, `final_eval.csv`.
pub fn execute(spec: &RunSpec, data: &DatasetPair) -> Result<()> {
    if spec.cfg.use_f64()? {
        execute_typed::<f64>(spec, data)
    } else {
        execute_typed::<f32>(spec, data)
    }
}

fn execute_typed<T: Scalar>(spec: &RunSpec, data: &DatasetPair) -> Result<()> {
    let plan = spec.cfg.plan()?;
    fs::create_dir_all(&spec.dir).with_context(|| format!("creating {}", spec.dir.display()))?;
    write(&spec.dir.join(RESOLVED_FILE), &spec.cfg.render())?;
    let total = plan.total_epochs();
    let mut trainer = Trainer::<T>::new(plan, data)?;
    let tag = format!("{}/seed{}", spec.cell, spec.seed);
    while let Some(m) = trainer.step_epoch()? {
        eprintln!(
            "[{tag}] epoch {}/{total} phase {} lr {:.6} train_loss {:.4} train_acc {:.2} test_loss {:.4} test_acc {:.2}",
            m.epoch + 1,
            m.phase,
            m.lr,
            m.train_loss,
            m.train_acc,
            m.test_loss,
            m.test_acc
        );
        write(&spec.dir.join(METRICS_FILE), &metrics_csv(trainer.metrics()))?;
    }
    write(&spec.dir.join(METRICS_FILE), &metrics_csv(trainer.metrics()))?;
    if spec.final_train_eval {
        let plan = trainer.plan();
        let (_, train_acc) = evaluate(trainer.network(), &trainer.data().train, plan.eval_batch_size)?;
        let test_acc = match trainer.metrics().last() {
            Some(m) => m.test_acc,
            None => evaluate(trainer.network(), &trainer.data().test, plan.eval_batch_size)?.1,
        };
        write(
            &spec.dir.join(FINAL_EVAL_FILE),
            &format!(
                "train_acc,test_acc,gap\n{train_acc:.6},{test_acc:.6},{:.6}\n",
                train_acc - test_acc
            ),
        )?;
    }
    trainer.checkpoint().save(spec.dir.join(CHECKPOINT_FILE))?;
    Ok(())
}

pub fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Runs every spec on up to `threads` workers. Results keep input order.
pub fn execute_all(specs: &[RunSpec], data: &DatasetPair, threads: usize) -> Vec<Result<()>> {
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<()>>>> = Mutex::new(specs.iter().map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..threads.clamp(1, specs.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(spec) = specs.get(i) else { break };
                let r = execute(spec, data);
                results.lock().expect("results lock")[i] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .expect("results lock")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect()
}

/// Final test accuracy recorded in a run directory's metrics file.
pub fn final_test_acc(dir: &Path) -> Result<f64> {
    let path = dir.join(METRICS_FILE);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let records = parse_metrics_csv(&text)?;
    Ok(records.last().map_or(f64::NAN, |m| m.test_acc))
}

/// `(train_acc, test_acc, gap)` from a run directory's final evaluation.
pub fn final_eval(dir: &Path) -> Result<(f64, f64, f64)> {
    let path = dir.join(FINAL_EVAL_FILE);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let row = text
        .lines()
        .nth(1)
        .with_context(|| format!("{} has no data row", path.display()))?;
    let v: Vec<f64> = row
        .split(',')
        .map(str::parse)
        .collect::<Result<_, _>>()
        .with_context(|| format!("parsing {}", path.display()))?;
    anyhow::ensure!(v.len() == 3, "{} must have 3 columns", path.display());
    Ok((v[0], v[1], v[2]))
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    trainer::mean_std(xs)
}
