//! End-to-end acceptance checks. Prints one `criterion N: PASS|FAIL` line per
//! check and exits non-zero if any fails.
//!
//! Criteria 3, 5, 6 and 9 need MNIST in IDX form under `$COOPINIT_DATA/mnist`
//! (default: `data/mnist` at the workspace root). Pass criterion numbers as
//! arguments to run a subset, e.g. `cargo test --test acceptance -- 2 8`.

use std::fs;
use std::io::Read;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use coopinit::activations::{act_backward, act_forward, mixture_forward};
use coopinit::data::{load_cifar10, load_mnist, make_synthetic_xor, CIFAR10_RECORD, DATA_DIR_ENV};
use coopinit::gradcheck::{Suite, NETWORK_CASES};
use coopinit::trainer::{
    ablation_grid, metrics_csv, parse_metrics_csv, reduced_data_study, run_plan, Checkpoint, METRICS_HEADER,
};
use coopinit::{
    phase_swap, Activation, Architecture, DatasetPair, MixedActivation, Mode, Network, StepSchedule, Tensor,
    TrainPlan, Trainer,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! check {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn data_root() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data"))
}

fn mnist() -> Result<DatasetPair, String> {
    let dir = data_root().join("mnist");
    load_mnist(&dir).map_err(|e| format!("MNIST unavailable at {}: {e}", dir.display()))
}

fn random_tensor(shape: Vec<usize>, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-4.0..4.0)).collect()).unwrap()
}

fn criterion_1() -> Outcome {
    let suite = Suite::default();
    let start = Instant::now();
    let results = suite.run().map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let required = [
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
    for name in required {
        let r = results.iter().find(|r| r.name == name).ok_or(format!("no case {name}"))?;
        check!(r.seeds >= 20, "{name} ran {} seeds", r.seeds);
    }
    let mut worst = 0.0f64;
    for r in &results {
        check!(r.passed, "{} failed (max rel {:.3e}, max abs {:.3e})", r.name, r.max_rel_error, r.max_abs_error);
        if !NETWORK_CASES.contains(&r.name.as_str()) {
            worst = worst.max(r.max_rel_error);
        }
    }
    check!(elapsed <= Duration::from_secs(120), "took {elapsed:?}");
    Ok(format!("{} cases, worst op rel error {worst:.2e}, {:.1}s", results.len(), elapsed.as_secs_f64()))
}

fn criterion_2() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let x = random_tensor(vec![4, 3, 5, 5], seed);
        let relu = act_forward(&Activation::Relu, &x, None).unwrap();
        let xf: Tensor<f32> = x.cast();
        let relu_f = act_forward(&Activation::Relu, &xf, None).unwrap();
        for k in 1..=8 {
            let mix = MixedActivation::equal(vec![Activation::Relu; k]).unwrap();
            let y = mixture_forward(&mix, &x, &vec![None; k]).unwrap();
            let yf = mixture_forward(&mix, &xf, &vec![None; k]).unwrap();
            for (a, b) in y.data().iter().zip(relu.data()) {
                worst = worst.max((a - b).abs() / b.abs().max(f64::MIN_POSITIVE));
            }
            for (a, b) in yf.data().iter().zip(relu_f.data()) {
                worst = worst.max(((a - b).abs() / b.abs().max(f32::MIN_POSITIVE)) as f64);
            }
        }
        let up = random_tensor(vec![4, 3, 5, 5], seed + 100);
        for act in [Activation::Relu, Activation::leaky_relu(), Activation::elu(), Activation::Softplus, Activation::Identity] {
            let one = MixedActivation::new(vec![act], vec![1.0]).unwrap();
            let a = mixture_forward(&one, &x, &[None]).unwrap();
            let b = act_forward(&act, &x, None).unwrap();
            check!(bits(&a) == bits(&b), "1-branch {act:?} forward differs");
            let (da, _) = coopinit::activations::mixture_backward(&one, &x, &up, &[None]).unwrap();
            let (db, _) = act_backward(&act, &x, &up, None).unwrap();
            check!(bits(&da) == bits(&db), "1-branch {act:?} backward differs");
        }
        let slopes = Tensor::from_vec([3], vec![0.25, 0.1, 0.4]).unwrap();
        let one = MixedActivation::new(vec![Activation::prelu()], vec![1.0]).unwrap();
        let a = mixture_forward(&one, &x, &[Some(&slopes)]).unwrap();
        let b = act_forward(&Activation::prelu(), &x, Some(&slopes)).unwrap();
        check!(bits(&a) == bits(&b), "1-branch PReLU forward differs");
    }
    check!(worst <= 1e-6, "k-copy ReLU mixture rel error {worst:e}");

    let mix = MixedActivation::cooperative_default();
    let s = Tensor::from_vec([1], vec![0.25]).unwrap();
    let zero = Tensor::<f64>::zeros([1, 1]);
    let y = mixture_forward(&mix, &zero, &[None, Some(&s), None, None]).unwrap().data()[0];
    let want = std::f64::consts::LN_2 / 4.0;
    check!((y - want).abs() <= 1e-9 * want, "mixture(0) = {y}, want {want}");
    Ok(format!("k-copy max rel error {worst:.1e}, mixture(0) = {y:.9}"))
}

fn bits<T: coopinit::Scalar>(t: &Tensor<T>) -> Vec<u64> {
    t.data().iter().map(|v| v.to_f64_lossy().to_bits()).collect()
}

fn criterion_3() -> Outcome {
    let data = mnist()?;
    let base = TrainPlan {
        arch: Architecture::LenetMnist,
        activation: Activation::Relu,
        phase2_epochs: 3,
        phase1_fraction: 1.0 / 3.0,
        seed: 11,
        ..TrainPlan::default()
    };
    let plans = [
        TrainPlan {
            mode: Mode::Mix,
            phase1_mixture: MixedActivation::new(vec![Activation::Relu], vec![1.0]).unwrap(),
            ..base.clone()
        },
        TrainPlan {
            mode: Mode::BaselineTpt,
            ..base.clone()
        },
        TrainPlan {
            mode: Mode::Baseline,
            concat_schedule: true,
            ..base
        },
    ];
    let mut csvs = Vec::new();
    for plan in &plans {
        check!(plan.phase1_epochs() == 1, "{} has E1 = {}", plan.label(), plan.phase1_epochs());
        let out = run_plan::<f32>(plan, &data).map_err(|e| e.to_string())?;
        csvs.push(metrics_csv(&out.metrics));
    }
    check!(csvs[0].lines().count() == 5, "expected 4 epochs, got\n{}", csvs[0]);
    check!(csvs[0] == csvs[1], "mix vs baseline-tpt differ:\n{}\n{}", csvs[0], csvs[1]);
    check!(csvs[0] == csvs[2], "mix vs concatenated baseline differ:\n{}\n{}", csvs[0], csvs[2]);
    let last = csvs[0].lines().last().unwrap_or_default().to_string();
    Ok(format!("3 identical CSVs, last row {last}"))
}

fn logits_bits(net: &Network<f32>, x: &Tensor<f32>) -> Result<Vec<u32>, String> {
    let y = net.logits(x.clone()).map_err(|e| e.to_string())?;
    Ok(y.data().iter().map(|v| v.to_bits()).collect())
}

fn roundtrip(net: &Network<f32>, dir: &Path, name: &str) -> Result<Network<f32>, String> {
    let path = dir.join(name);
    Checkpoint::from_network(net).save(&path).map_err(|e| e.to_string())?;
    Checkpoint::load(&path)
        .and_then(|c| c.network())
        .map_err(|e| e.to_string())
}

fn criterion_4() -> Outcome {
    let data = match mnist() {
        Ok(mut d) => {
            d.train = d.train.truncated(2000);
            d.test = d.test.truncated(500);
            d
        }
        Err(_) => make_mnist_shaped(2000, 500),
    };
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let x: Tensor<f32> = data.test.batch(&(0..32).collect::<Vec<_>>(), None).0;
    let mut checked = 0;
    for gamma in [Activation::Relu, Activation::prelu(), Activation::elu(), Activation::Softplus] {
        let plan = TrainPlan {
            mode: Mode::Mix,
            activation: gamma,
            phase2_epochs: 5,
            ..TrainPlan::default()
        };
        let mut trainer = Trainer::<f32>::new(plan.clone(), &data).map_err(|e| e.to_string())?;
        trainer.step_epoch().map_err(|e| e.to_string())?;
        let before = trainer.network().clone();
        let mut after = before.clone();
        phase_swap(&mut after, gamma).map_err(|e| e.to_string())?;

        let layer_names = before.layer_param_names();
        check!(!layer_names.is_empty(), "no conv/dense parameters");
        for name in &layer_names {
            let (a, b) = (&before.params()[name], &after.params()[name]);
            check!(bits(a) == bits(b), "{name} changed across the swap");
        }
        let mixture_slopes: Vec<&String> = after.params().keys().filter(|k| k.contains(".branch")).collect();
        check!(mixture_slopes.is_empty(), "mixture slopes survive: {mixture_slopes:?}");
        check!(
            before.params().keys().any(|k| k.contains(".branch")),
            "phase-1 network has no mixture PReLU slopes"
        );

        for (tag, net) in [("before", &before), ("after", &after)] {
            let back = roundtrip(net, tmp.path(), &format!("{}-{tag}.ckpt", gamma.name()))?;
            check!(
                logits_bits(net, &x)? == logits_bits(&back, &x)?,
                "{} checkpoint {tag} the swap changes logits",
                gamma.name()
            );
            checked += 1;
        }

        // The trainer performs the same swap when it enters phase 2.
        trainer.step_epoch().map_err(|e| e.to_string())?;
        check!(
            trainer.network().slots() == after.slots(),
            "trainer's phase-2 slots differ from phase_swap"
        );
    }
    Ok(format!("4 target activations, {checked} checkpoint round-trips bit-exact"))
}

/// Random stand-in with MNIST's shapes, used only when the real files are absent.
fn make_mnist_shaped(train: usize, test: usize) -> DatasetPair {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut split = |n: usize| {
        let images = (0..n * 784).map(|_| rng.random_range(-0.4..2.8)).collect();
        coopinit::Split::new([1, 28, 28], images, (0..n).map(|i| i % 10).collect()).unwrap()
    };
    DatasetPair {
        name: "mnist-shaped".into(),
        train: split(train),
        test: split(test),
        num_classes: 10,
        normalization: None,
    }
}

fn criterion_5(trained: &mut Option<Network<f32>>) -> Outcome {
    let data = mnist()?;
    let plan = TrainPlan {
        arch: Architecture::LenetMnist,
        mode: Mode::Baseline,
        activation: Activation::Relu,
        phase2_epochs: 10,
        batch_size: 64,
        momentum: 0.9,
        phase2_schedule: StepSchedule::new(0.1, 5.0, 4).map_err(|e| e.to_string())?,
        ..TrainPlan::default()
    };
    let start = Instant::now();
    let out = run_plan::<f32>(&plan, &data).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let acc = out.metrics.last().map_or(0.0, |m| m.test_acc);
    *trained = Some(out.network);
    check!(acc >= 98.0, "test accuracy {acc:.2}%");
    check!(elapsed <= Duration::from_secs(15 * 60), "took {elapsed:?}");
    Ok(format!("test accuracy {acc:.2}% in {:.0}s", elapsed.as_secs_f64()))
}

fn criterion_6() -> Outcome {
    let data = mnist()?;
    // LeNet has no normalization layers; at lr 0.1 with momentum 0.9 most
    // seeds diverge on this subset (the mixture often to NaN). Both modes use
    // lr 0.01 with the default step structure.
    let base = TrainPlan {
        arch: Architecture::LenetMnist,
        activation: Activation::Relu,
        phase2_epochs: 10,
        phase1_fraction: 0.2,
        phase1_schedule: StepSchedule::new(0.01, 5.0, 1).map_err(|e| e.to_string())?,
        phase2_schedule: StepSchedule::new(0.01, 5.0, 4).map_err(|e| e.to_string())?,
        ..TrainPlan::default()
    };
    let seeds = 1..=5u64;
    let (mut mix_acc, mut mix_gap, mut base_acc, mut base_gap) = (vec![], vec![], vec![], vec![]);
    for seed in seeds {
        for mode in [Mode::Baseline, Mode::Mix] {
            let plan = TrainPlan {
                mode,
                seed,
                ..base.clone()
            };
            if mode == Mode::Mix {
                check!(plan.phase1_epochs() == 2, "E1 = {}", plan.phase1_epochs());
            }
            let (r, _) = reduced_data_study::<f32>(&plan, 0.1, &data).map_err(|e| e.to_string())?;
            eprintln!(
                "  criterion 6: seed {seed} {:<13} train {:.2} test {:.2} gap {:.2}",
                plan.label(),
                r.train_acc,
                r.test_acc,
                r.gap
            );
            let (acc, gap) = if mode == Mode::Mix {
                (&mut mix_acc, &mut mix_gap)
            } else {
                (&mut base_acc, &mut base_gap)
            };
            acc.push(r.test_acc);
            gap.push(r.gap);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (ma, ba, mg, bg) = (mean(&mix_acc), mean(&base_acc), mean(&mix_gap), mean(&base_gap));
    let summary = format!("mix test {ma:.2} gap {mg:.2}; baseline test {ba:.2} gap {bg:.2} (pp, 5 seeds)");
    check!(ma >= ba - 0.1, "accuracy condition fails: {summary}");
    check!(mg <= bg + 0.2, "gap condition fails: {summary}");
    Ok(summary)
}

/// Plain logistic regression on the two input coordinates, fit by full-batch
/// gradient descent. Returns test accuracy in percent.
fn linear_classifier_accuracy(data: &DatasetPair) -> f64 {
    let xy = |s: &coopinit::Split, i: usize| (s.image(i)[0] as f64, s.image(i)[1] as f64, s.label(i) as f64);
    let (mut w0, mut w1, mut b) = (0.0, 0.0, 0.0);
    let n = data.train.len() as f64;
    for _ in 0..5000 {
        let (mut g0, mut g1, mut gb) = (0.0, 0.0, 0.0);
        for i in 0..data.train.len() {
            let (x0, x1, y) = xy(&data.train, i);
            let p = 1.0 / (1.0 + (-(w0 * x0 + w1 * x1 + b)).exp());
            g0 += (p - y) * x0;
            g1 += (p - y) * x1;
            gb += p - y;
        }
        w0 -= 0.5 * g0 / n;
        w1 -= 0.5 * g1 / n;
        b -= 0.5 * gb / n;
    }
    let correct = (0..data.test.len())
        .filter(|&i| {
            let (x0, x1, y) = xy(&data.test, i);
            ((w0 * x0 + w1 * x1 + b > 0.0) as u8 as f64) == y
        })
        .count();
    100.0 * correct as f64 / data.test.len() as f64
}

fn criterion_7() -> Outcome {
    let data = make_synthetic_xor(400, 0.35, 0).map_err(|e| e.to_string())?;
    let linear = linear_classifier_accuracy(&data);
    // The best linear fit of balanced XOR sits at loss ln 2 with near-zero
    // logits, so one run's accuracy depends on which way noise tilts it.
    // Train to convergence and average seeds.
    let base = TrainPlan {
        arch: Architecture::XorMlp,
        phase2_epochs: 30,
        ..TrainPlan::default()
    };
    let acc = |mode: Mode| -> Result<f64, String> {
        let mut accs = Vec::new();
        for seed in 1..=5 {
            let plan = TrainPlan { mode, seed, ..base.clone() };
            let out = run_plan::<f32>(&plan, &data).map_err(|e| e.to_string())?;
            let m = out.metrics.last().ok_or("no epochs")?;
            eprintln!("  criterion 7: seed {seed} {:<13} test {:.2} train loss {:.4}", plan.label(), m.test_acc, m.train_loss);
            accs.push(m.test_acc);
        }
        Ok(accs.iter().sum::<f64>() / accs.len() as f64)
    };
    let wnla = acc(Mode::Wnla)?;
    let relu = acc(Mode::Baseline)?;
    let summary = format!("mean over 5 seeds: wnla {wnla:.2}%, linear {linear:.2}%, baseline relu {relu:.2}%");
    check!((wnla - linear).abs() <= 5.0, "wnla is not linear-like: {summary}");
    check!(relu - linear >= 20.0, "baseline does not beat linear by 20 pp: {summary}");
    Ok(summary)
}

fn criterion_8() -> Outcome {
    let p2 = StepSchedule::new(0.1, 5.0, 50).map_err(|e| e.to_string())?;
    for (range, want) in [(0..50, 0.1), (50..100, 0.02), (100..150, 0.004)] {
        for e in range {
            check!(p2.lr_at(e) == want, "phase 2 lr at {e} is {}, want {want}", p2.lr_at(e));
        }
    }
    let p1 = StepSchedule::new(0.1, 5.0, 10).map_err(|e| e.to_string())?;
    for (range, want) in [(0..10, 0.1), (10..20, 0.02)] {
        for e in range {
            check!(p1.lr_at(e) == want, "phase 1 lr at {e} is {}, want {want}", p1.lr_at(e));
        }
    }
    // The trainer's per-epoch lr follows the same sequences.
    let plan = TrainPlan {
        phase1_schedule: p1,
        phase2_schedule: p2,
        phase2_epochs: 150,
        phase1_fraction: 0.2,
        ..TrainPlan::default()
    };
    let lrs: Vec<f64> = (0..plan.total_epochs()).map(|e| plan.epoch_info(e).unwrap().1).collect();
    check!(lrs.len() == 180, "{} epochs", lrs.len());
    check!(lrs[9] == 0.1 && lrs[10] == 0.02 && lrs[19] == 0.02 && lrs[20] == 0.004, "phase 1 lrs {:?}", &lrs[..30]);
    check!(lrs[30] == 0.1 && lrs[80] == 0.02 && lrs[130] == 0.004, "phase 2 restart broken");
    Ok("0.1 → 0.02 @50 → 0.004 @100; 0.1 → 0.02 @10".into())
}

fn write_cifar_batch(path: &Path, n: usize, salt: usize) -> std::io::Result<()> {
    let mut bytes = Vec::with_capacity(n * CIFAR10_RECORD);
    for i in 0..n {
        bytes.push(((i + salt) % 10) as u8);
        bytes.extend((0..3072).map(|p| ((p * 7 + i + salt) % 256) as u8));
    }
    fs::write(path, bytes)
}

fn criterion_9(trained: Option<&Network<f32>>) -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;

    let data = mnist()?;
    check!(
        data.train.len() == 60_000 && data.test.len() == 10_000,
        "MNIST sizes {}/{}",
        data.train.len(),
        data.test.len()
    );
    drop(data);
    let src = data_root().join("mnist");
    let bad = tmp.path().join("bad-mnist");
    fs::create_dir_all(&bad).map_err(|e| e.to_string())?;
    for entry in fs::read_dir(&src).map_err(|e| e.to_string())? {
        let entry = entry.map_err(|e| e.to_string())?;
        fs::copy(entry.path(), bad.join(entry.file_name())).map_err(|e| e.to_string())?;
    }
    let victim = ["train-labels-idx1-ubyte", "train-labels-idx1-ubyte.gz"]
        .iter()
        .map(|f| bad.join(f))
        .find(|p| p.exists())
        .ok_or("no train label file")?;
    // The loader accepts gzipped files too; the corrupted copy is written back raw.
    let mut raw = if victim.extension().is_some_and(|e| e == "gz") {
        let mut out = Vec::new();
        let file = fs::File::open(&victim).map_err(|e| e.to_string())?;
        flate2::read::GzDecoder::new(file)
            .read_to_end(&mut out)
            .map_err(|e| e.to_string())?;
        fs::remove_file(&victim).map_err(|e| e.to_string())?;
        out
    } else {
        fs::read(&victim).map_err(|e| e.to_string())?
    };
    raw[2] = 0x09;
    fs::write(bad.join("train-labels-idx1-ubyte"), raw).map_err(|e| e.to_string())?;
    let err = load_mnist(&bad).err().ok_or("MNIST loader accepted a wrong magic number")?;
    check!(matches!(err, coopinit::Error::BadMagic { .. }), "unexpected error {err}");

    let cifar = tmp.path().join("cifar-10-batches-bin");
    fs::create_dir_all(&cifar).map_err(|e| e.to_string())?;
    for i in 1..=5 {
        write_cifar_batch(&cifar.join(format!("data_batch_{i}.bin")), 10_000, i).map_err(|e| e.to_string())?;
    }
    write_cifar_batch(&cifar.join("test_batch.bin"), 10_000, 0).map_err(|e| e.to_string())?;
    let c = load_cifar10(tmp.path()).map_err(|e| e.to_string())?;
    check!(
        c.train.len() == 50_000 && c.test.len() == 10_000,
        "CIFAR-10 sizes {}/{}",
        c.train.len(),
        c.test.len()
    );
    check!(c.train.label(10_000) == 2, "record order broken");
    drop(c);
    let f = fs::OpenOptions::new()
        .append(true)
        .open(cifar.join("data_batch_3.bin"))
        .map_err(|e| e.to_string())?;
    f.set_len(10_000 * CIFAR10_RECORD as u64 - 5).map_err(|e| e.to_string())?;
    check!(load_cifar10(tmp.path()).is_err(), "CIFAR-10 loader accepted a truncated record");

    let fallback;
    let net = match trained {
        Some(n) => n,
        None => {
            fallback = Network::<f32>::build(Architecture::LenetMnist, 3);
            &fallback
        }
    };
    let path = tmp.path().join("net.ckpt");
    let ck = Checkpoint::from_network(net);
    ck.save(&path).map_err(|e| e.to_string())?;
    let loaded = Checkpoint::load(&path).map_err(|e| e.to_string())?;
    check!(loaded.to_bytes() == fs::read(&path).map_err(|e| e.to_string())?, "re-serialization differs");
    let back: Network<f32> = loaded.network().map_err(|e| e.to_string())?;
    for (name, t) in net.params() {
        check!(bits(t) == bits(&back.params()[name]), "{name} not bit-exact");
    }
    check!(back.slots() == net.slots(), "slots differ");

    let data = make_synthetic_xor(16, 0.3, 0).map_err(|e| e.to_string())?;
    let plan = TrainPlan {
        arch: Architecture::XorMlp,
        phase2_epochs: 2,
        batch_size: 8,
        ..TrainPlan::default()
    };
    let csv = metrics_csv(&run_plan::<f32>(&plan, &data).map_err(|e| e.to_string())?.metrics);
    let header = csv.lines().next().unwrap_or_default();
    check!(header == METRICS_HEADER, "header {header}");
    check!(
        header == "epoch,phase,lr,train_loss,train_acc,test_loss,test_acc",
        "header {header}"
    );
    let cols = header.split(',').count();
    check!(csv.lines().all(|l| l.split(',').count() == cols), "ragged rows");
    check!(parse_metrics_csv(&csv).map_err(|e| e.to_string())?.len() == 2, "rows lost");
    Ok("MNIST 60000/10000, CIFAR-10 50000/10000, bad inputs rejected, checkpoint bit-exact".into())
}

fn criterion_10() -> Outcome {
    let grid = ablation_grid(&TrainPlan::default());
    let count = |m: Mode| grid.iter().filter(|p| p.mode == m).count();
    check!(grid.len() == 14, "{} cells", grid.len());
    check!(
        count(Mode::Baseline) == 4
            && count(Mode::BaselineTpt) == 4
            && count(Mode::Wnla) == 1
            && count(Mode::MixtureFull) == 1
            && count(Mode::Mix) == 4,
        "mode counts wrong"
    );
    let gammas = [Activation::Relu, Activation::prelu(), Activation::elu(), Activation::Softplus];
    for mode in [Mode::Baseline, Mode::BaselineTpt, Mode::Mix] {
        for g in gammas {
            check!(
                grid.iter().any(|p| p.mode == mode && p.activation == g),
                "{mode} with {} missing",
                g.name()
            );
        }
    }

    let out = tempfile::tempdir().map_err(|e| e.to_string())?;
    let status = Command::new(env!("CARGO_BIN_EXE_coopinit"))
        .arg("--out")
        .arg(out.path())
        .args(["--set", "arch=xor-mlp", "--set", "data.xor.n=80", "--set", "phase2.epochs=5"])
        .args(["--set", "batch_size=16", "--set", "experiment=ablation", "--set", "seeds=1,2,3", "ablate"])
        .output()
        .map_err(|e| e.to_string())?;
    check!(status.status.success(), "ablate failed: {}", String::from_utf8_lossy(&status.stderr));
    let csv = fs::read_to_string(out.path().join("ablation/ablation.csv")).map_err(|e| e.to_string())?;
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    check!(rows.len() == 14, "{} summary rows", rows.len());
    let labels: Vec<String> = grid.iter().map(TrainPlan::label).collect();
    for row in rows {
        let c: Vec<&str> = row.split(',').collect();
        check!(c.len() == 6, "row {row}");
        check!(labels.iter().any(|l| l == c[0]), "unexpected cell {}", c[0]);
        let accs: Vec<f64> = (1..=3)
            .map(|s| {
                let p = out.path().join(format!("ablation/{}/seed{s}/metrics.csv", c[0]));
                let text = fs::read_to_string(&p).map_err(|e| format!("{}: {e}", p.display()))?;
                let m = parse_metrics_csv(&text).map_err(|e| e.to_string())?;
                m.last().map(|r| r.test_acc).ok_or(format!("{} is empty", p.display()))
            })
            .collect::<Result<_, String>>()?;
        let mean = accs.iter().sum::<f64>() / 3.0;
        let sd = (accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / 2.0).sqrt();
        let (m, s): (f64, f64) = (c[4].parse().map_err(|_| row)?, c[5].parse().map_err(|_| row)?);
        check!(c[3] == "3", "n_seeds in {row}");
        check!((m - mean).abs() < 5e-6 && (s - sd).abs() < 5e-6, "{row} vs mean {mean} std {sd}");
    }
    Ok("14 cells, summary matches 42 run metrics files".into())
}

fn main() -> ExitCode {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |n: usize| selected.is_empty() || selected.contains(&n);
    let mut trained: Option<Network<f32>> = None;
    let mut failed = 0;
    for n in 1..=10 {
        if !wanted(n) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(|| match n {
            1 => criterion_1(),
            2 => criterion_2(),
            3 => criterion_3(),
            4 => criterion_4(),
            5 => criterion_5(&mut trained),
            6 => criterion_6(),
            7 => criterion_7(),
            8 => criterion_8(),
            9 => criterion_9(trained.as_ref()),
            _ => criterion_10(),
        }))
        .unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n}: PASS ({detail}) [{secs:.1}s]"),
            Err(why) => {
                failed += 1;
                println!("criterion {n}: FAIL ({why}) [{secs:.1}s]");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
