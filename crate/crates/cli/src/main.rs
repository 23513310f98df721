//! `coopinit`: run cooperative-initialization experiments.
//!
//! Exit status: 0 on success, 1 on runtime failure, 2 on configuration error.

mod config;
mod runs;

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use coopinit::gradcheck::Suite;
use coopinit::trainer::{ablation_grid, evaluate, export_features, sweep_plans, AnyTensor, Checkpoint, Mode};
use coopinit::{DatasetPair, Network, Scalar};

use config::{ConfigError, RunConfig};
use runs::{RunSpec, RESOLVED_FILE};

#[derive(Parser, Debug)]
#[command(name = "coopinit", version, about = "Cooperative-initialization training experiments")]
struct Cli {
    /// Configuration file (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override a configuration key; repeatable, last one wins.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,

    /// Root directory for run outputs.
    #[arg(long, global = true, default_value = "runs")]
    out: PathBuf,

    /// Shorthand for `--set seed=N --set seeds=N`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Independent runs executed concurrently.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one plan.
    Train,
    /// Run every ablation cell over the configured seeds.
    Ablate,
    /// Vary the phase-1 epoch fraction.
    SweepPhase1 {
        /// Comma-separated fractions in (0, 1]; defaults to `sweep.fractions`.
        #[arg(long)]
        fractions: Option<String>,
    },
    /// Compare baseline and mix(relu) train/test accuracy on a reduced training set.
    OverfitStudy {
        /// Training-set fraction; defaults to `overfit.fraction`.
        #[arg(long)]
        fraction: Option<f64>,
    },
    /// Check analytic gradients against finite differences.
    Gradcheck {
        /// Only run cases whose name contains one of these.
        #[arg(long)]
        filter: Vec<String>,
        /// Add a case with a deliberately wrong derivative.
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Write the activations of one site as TSV.
    ExportFeatures {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Site id, e.g. `flatten`.
        #[arg(long)]
        layer: String,
        #[arg(long)]
        output: PathBuf,
        /// Export at most this many samples.
        #[arg(long)]
        n: Option<usize>,
        /// `test` or `train`.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Report test loss and accuracy of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            let code = if e.downcast_ref::<ConfigError>().is_some() { 2 } else { 1 };
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}

fn resolve_config(cli: &Cli) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    for kv in &cli.set {
        cfg.apply_override(kv)?;
    }
    if let Some(seed) = cli.seed {
        cfg.set("seed", &seed.to_string())?;
        cfg.set("seeds", &seed.to_string())?;
    }
    cfg.plan()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<ExitCode> {
    if cli.threads == 0 {
        return Err(ConfigError("--threads must be at least 1".into()).into());
    }
    match &cli.command {
        Command::Gradcheck { filter, inject_fault } => return gradcheck(filter, *inject_fault),
        Command::ExportFeatures {
            checkpoint,
            layer,
            output,
            n,
            split,
        } => return export(&cli, checkpoint, layer, output, *n, split),
        Command::Eval { checkpoint } => return eval(&cli, checkpoint),
        _ => {}
    }
    let cfg = resolve_config(&cli)?;
    match &cli.command {
        Command::Train => train(&cli, &cfg),
        Command::Ablate => ablate(&cli, &cfg),
        Command::SweepPhase1 { fractions } => {
            let cfg = match fractions {
                Some(f) => cfg.with("sweep.fractions", f),
                None => cfg,
            };
            sweep(&cli, &cfg)
        }
        Command::OverfitStudy { fraction } => {
            let cfg = match fraction {
                Some(f) => cfg.with("overfit.fraction", f),
                None => cfg,
            };
            overfit(&cli, &cfg)
        }
        _ => unreachable!("handled above"),
    }
}

/// Runs the specs and fails if any run failed.
fn execute(specs: &[RunSpec], data: &DatasetPair, threads: usize) -> Result<()> {
    let failures: Vec<String> = runs::execute_all(specs, data, threads)
        .into_iter()
        .zip(specs)
        .filter_map(|(r, s)| r.err().map(|e| format!("{}/seed{}: {e:#}", s.cell, s.seed)))
        .collect();
    if !failures.is_empty() {
        bail!("{} run(s) failed:\n  {}", failures.len(), failures.join("\n  "));
    }
    Ok(())
}

fn experiment_dir(cli: &Cli, cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cli.out.join(cfg.experiment()?);
    runs::write(&dir.join(RESOLVED_FILE), &cfg.render())?;
    Ok(dir)
}

fn train(cli: &Cli, cfg: &RunConfig) -> Result<ExitCode> {
    let plan = cfg.plan()?;
    let experiment = cfg.experiment()?;
    let data = runs::load_dataset(cfg)?;
    let spec = RunSpec {
        cell: plan.label(),
        seed: plan.seed,
        cfg: cfg.clone(),
        dir: runs::run_dir(&cli.out, &experiment, &plan.label(), plan.seed),
        final_train_eval: false,
    };
    execute(std::slice::from_ref(&spec), &data, 1)?;
    println!("{}", spec.dir.display());
    Ok(ExitCode::SUCCESS)
}

/// Config of one ablation cell: mode and activation from the grid.
fn cell_config(cfg: &RunConfig, plan: &coopinit::TrainPlan, seed: u64) -> RunConfig {
    cfg.with("mode", plan.mode)
        .with("activation", plan.activation)
        .with("baseline.concat_schedule", plan.concat_schedule)
        .with("seed", seed)
}

fn ablate(cli: &Cli, cfg: &RunConfig) -> Result<ExitCode> {
    let base = cfg.plan()?;
    let seeds = cfg.seeds()?;
    let experiment = cfg.experiment()?;
    let grid = ablation_grid(&base);
    let data = runs::load_dataset(cfg)?;
    let dir = experiment_dir(cli, cfg)?;
    let mut specs = Vec::new();
    for plan in &grid {
        for &seed in &seeds {
            specs.push(RunSpec {
                cell: plan.label(),
                seed,
                cfg: cell_config(cfg, plan, seed),
                dir: runs::run_dir(&cli.out, &experiment, &plan.label(), seed),
                final_train_eval: false,
            });
        }
    }
    execute(&specs, &data, cli.threads)?;

    let mut csv = String::from("cell,mode,activation,n_seeds,test_acc_mean,test_acc_std\n");
    for plan in &grid {
        let accs = seeds
            .iter()
            .map(|&s| runs::final_test_acc(&runs::run_dir(&cli.out, &experiment, &plan.label(), s)))
            .collect::<Result<Vec<_>>>()?;
        let (m, sd) = runs::mean_std(&accs);
        let act = match plan.mode {
            Mode::Wnla => "identity".to_string(),
            Mode::MixtureFull => "mixture".to_string(),
            _ => plan.activation.name().to_string(),
        };
        csv.push_str(&format!(
            "{},{},{act},{},{m:.6},{sd:.6}\n",
            plan.label(),
            plan.mode,
            accs.len()
        ));
    }
    let path = dir.join("ablation.csv");
    runs::write(&path, &csv)?;
    print!("{csv}");
    Ok(ExitCode::SUCCESS)
}

fn fraction_cell(label: &str, fraction: f64) -> String {
    format!("{label}-p1f{fraction}")
}

fn sweep(cli: &Cli, cfg: &RunConfig) -> Result<ExitCode> {
    let base = cfg.plan()?;
    let fractions = cfg.sweep_fractions()?;
    let seeds = cfg.seeds()?;
    let experiment = cfg.experiment()?;
    let plans = sweep_plans(&base, &fractions).map_err(|e| ConfigError(e.to_string()))?;
    let data = runs::load_dataset(cfg)?;
    let dir = experiment_dir(cli, cfg)?;
    let mut specs = Vec::new();
    for plan in &plans {
        let cell = fraction_cell(&plan.label(), plan.phase1_fraction);
        for &seed in &seeds {
            specs.push(RunSpec {
                cell: cell.clone(),
                seed,
                cfg: cfg.with("phase1.fraction", plan.phase1_fraction).with("seed", seed),
                dir: runs::run_dir(&cli.out, &experiment, &cell, seed),
                final_train_eval: false,
            });
        }
    }
    execute(&specs, &data, cli.threads)?;

    let mut csv = String::from("fraction,test_acc_mean,test_acc_std\n");
    for plan in &plans {
        let cell = fraction_cell(&plan.label(), plan.phase1_fraction);
        let accs = seeds
            .iter()
            .map(|&s| runs::final_test_acc(&runs::run_dir(&cli.out, &experiment, &cell, s)))
            .collect::<Result<Vec<_>>>()?;
        let (m, sd) = runs::mean_std(&accs);
        csv.push_str(&format!("{:.6},{m:.6},{sd:.6}\n", plan.phase1_fraction));
    }
    runs::write(&dir.join("sweep.csv"), &csv)?;
    print!("{csv}");
    Ok(ExitCode::SUCCESS)
}

fn overfit(cli: &Cli, cfg: &RunConfig) -> Result<ExitCode> {
    let fraction = cfg.overfit_fraction()?;
    let seeds = cfg.seeds()?;
    let experiment = cfg.experiment()?;
    let cfg = cfg.with("data.fraction", fraction);
    let base = cfg.plan()?;
    let cells = [
        coopinit::TrainPlan {
            mode: Mode::Baseline,
            activation: coopinit::Activation::Relu,
            concat_schedule: false,
            ..base.clone()
        },
        coopinit::TrainPlan {
            mode: Mode::Mix,
            activation: coopinit::Activation::Relu,
            concat_schedule: false,
            ..base
        },
    ];
    let data = runs::load_dataset(&cfg)?;
    let dir = experiment_dir(cli, &cfg)?;
    let mut specs = Vec::new();
    for &seed in &seeds {
        for plan in &cells {
            specs.push(RunSpec {
                cell: plan.label(),
                seed,
                cfg: cell_config(&cfg, plan, seed),
                dir: runs::run_dir(&cli.out, &experiment, &plan.label(), seed),
                final_train_eval: true,
            });
        }
    }
    execute(&specs, &data, cli.threads)?;

    let mut csv = String::from("seed,mode,train_acc,test_acc,gap\n");
    for &seed in &seeds {
        for plan in &cells {
            let (train, test, gap) = runs::final_eval(&runs::run_dir(&cli.out, &experiment, &plan.label(), seed))?;
            csv.push_str(&format!("{seed},{},{train:.6},{test:.6},{gap:.6}\n", plan.label()));
        }
    }
    runs::write(&dir.join("overfit.csv"), &csv)?;
    print!("{csv}");
    Ok(ExitCode::SUCCESS)
}

fn gradcheck(filter: &[String], inject_fault: bool) -> Result<ExitCode> {
    let suite = Suite {
        filter: filter.to_vec(),
        include_fault_fixture: inject_fault,
        ..Suite::default()
    };
    if suite.case_names().is_empty() {
        return Err(ConfigError(format!("no gradcheck case matches {filter:?}")).into());
    }
    println!(
        "{:<28} {:>5} {:>7} {:>7} {:>12} {:>12} {:>8}  status",
        "case", "seeds", "entries", "skipped", "max_rel_err", "max_abs_err", "time"
    );
    let mut failed = Vec::new();
    for name in suite.case_names() {
        let r = suite.run_case(name)?;
        println!(
            "{:<28} {:>5} {:>7} {:>7} {:>12.3e} {:>12.3e} {:>7.2}s  {}",
            r.name,
            r.seeds,
            r.entries,
            r.skipped,
            r.max_rel_error,
            r.max_abs_error,
            r.elapsed.as_secs_f64(),
            if r.passed { "ok" } else { "FAIL" }
        );
        if !r.passed {
            failed.push(r.name);
        }
    }
    if failed.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("gradcheck failed: {}", failed.join(", "));
        Ok(ExitCode::from(1))
    }
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(ConfigError(format!("checkpoint {} does not exist", path.display())).into());
    }
    Ok(Checkpoint::load(path)?)
}

fn is_f64(ck: &Checkpoint) -> bool {
    matches!(ck.params.values().next(), Some(AnyTensor::F64(_)))
}

/// Dataset matching the checkpoint's architecture.
fn checkpoint_dataset(cli: &Cli, ck: &Checkpoint) -> Result<DatasetPair> {
    let cfg = resolve_config(cli)?.with("arch", ck.architecture);
    runs::load_dataset(&cfg)
}

fn export(cli: &Cli, checkpoint: &Path, layer: &str, output: &Path, n: Option<usize>, split: &str) -> Result<ExitCode> {
    let ck = load_checkpoint(checkpoint)?;
    let data = checkpoint_dataset(cli, &ck)?;
    let split = match split {
        "test" => &data.test,
        "train" => &data.train,
        other => return Err(ConfigError(format!("--split must be `test` or `train`, got `{other}`")).into()),
    };
    fn go<T: Scalar>(ck: &Checkpoint, split: &coopinit::Split, layer: &str, n: Option<usize>, output: &Path) -> Result<usize> {
        let net: Network<T> = ck.network()?;
        if !net.site_names().iter().any(|s| s == layer) {
            bail!("unknown layer `{layer}`; valid site ids: {}", net.site_names().join(", "));
        }
        if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        let file = File::create(output).with_context(|| format!("creating {}", output.display()))?;
        Ok(export_features(&net, split, layer, n, 500, BufWriter::new(file))?)
    }
    let rows = if is_f64(&ck) {
        go::<f64>(&ck, split, layer, n, output)?
    } else {
        go::<f32>(&ck, split, layer, n, output)?
    };
    eprintln!("wrote {rows} rows to {}", output.display());
    Ok(ExitCode::SUCCESS)
}

fn eval(cli: &Cli, checkpoint: &Path) -> Result<ExitCode> {
    let ck = load_checkpoint(checkpoint)?;
    let data = checkpoint_dataset(cli, &ck)?;
    let (loss, acc) = if is_f64(&ck) {
        evaluate(&ck.network::<f64>()?, &data.test, 500)?
    } else {
        evaluate(&ck.network::<f32>()?, &data.test, 500)?
    };
    println!("test_loss={loss:.6} test_acc={acc:.6} samples={}", data.test.len());
    Ok(ExitCode::SUCCESS)
}
