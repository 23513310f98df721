use coopinit::activations::{Activation, MixedActivation, SlotActivation};
use coopinit::data::{make_synthetic_xor, DatasetPair, Split};
use coopinit::trainer::{
    ablation_grid, export_features, metrics_csv, reduced_data_study, run_plan, sweep_csv, Checkpoint,
    epoch_fraction_sweep, Mode, TrainPlan, Trainer,
};
use coopinit::{phase_swap, Architecture, Network, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Small random MNIST-shaped dataset: enough to exercise LeNet end to end.
fn tiny_mnist(train: usize, test: usize) -> DatasetPair {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut split = |n: usize| {
        let labels: Vec<usize> = (0..n).map(|i| i % 10).collect();
        let images = (0..n * 784).map(|_| rng.random_range(-0.5..2.5)).collect();
        Split::new([1, 28, 28], images, labels).unwrap()
    };
    DatasetPair {
        name: "tiny".into(),
        train: split(train),
        test: split(test),
        num_classes: 10,
        normalization: None,
    }
}

fn lenet_plan() -> TrainPlan {
    TrainPlan {
        phase2_epochs: 3,
        phase1_fraction: 1.0 / 3.0,
        batch_size: 16,
        eval_batch_size: 50,
        ..TrainPlan::default()
    }
}

#[test]
fn degenerate_plans_share_metrics() {
    let data = tiny_mnist(64, 40);
    let relu = Activation::Relu;
    let one_branch = MixedActivation::new(vec![relu], vec![1.0]).unwrap();
    let mix = TrainPlan {
        mode: Mode::Mix,
        phase1_mixture: one_branch,
        ..lenet_plan()
    };
    let tpt = TrainPlan {
        mode: Mode::BaselineTpt,
        ..lenet_plan()
    };
    let concat = TrainPlan {
        mode: Mode::Baseline,
        concat_schedule: true,
        ..lenet_plan()
    };
    let a = metrics_csv(&run_plan::<f32>(&mix, &data).unwrap().metrics);
    let b = metrics_csv(&run_plan::<f32>(&tpt, &data).unwrap().metrics);
    let c = metrics_csv(&run_plan::<f32>(&concat, &data).unwrap().metrics);
    assert_eq!(a.lines().count(), 5);
    assert_eq!(a, b);
    assert_eq!(a, c);
}

#[test]
fn phase_swap_keeps_weights_and_drops_mixture_slopes() {
    let data = tiny_mnist(32, 10);
    let plan = TrainPlan {
        phase2_epochs: 5,
        ..lenet_plan()
    };
    let mut t = Trainer::<f32>::new(plan, &data).unwrap();
    t.step_epoch().unwrap();
    let before = t.network().clone();
    assert!(before.params().keys().any(|k| k.contains(".branch1.prelu_slope")));

    let mut relu = before.clone();
    phase_swap(&mut relu, Activation::Relu).unwrap();
    for name in before.layer_param_names() {
        assert_eq!(before.params()[&name], relu.params()[&name], "{name}");
    }
    assert!(relu.params().keys().all(|k| !k.contains("prelu_slope")));
    assert_eq!(relu.params().len(), before.layer_param_names().len());

    let mut prelu = before.clone();
    phase_swap(&mut prelu, Activation::prelu()).unwrap();
    let slopes: Vec<_> = prelu.params().iter().filter(|(k, _)| k.ends_with(".prelu_slope")).collect();
    assert_eq!(slopes.len(), 2);
    for (name, s) in slopes {
        assert!(!name.contains("branch"));
        assert!(s.data().iter().all(|&v| v == 0.25));
    }

    // Checkpoints on either side of the swap reproduce logits exactly.
    let x: Tensor<f32> = data.train.batch(&[0, 1, 2, 3], None).0;
    for net in [&before, &relu, &prelu] {
        let back: Network<f32> = Checkpoint::from_bytes(&Checkpoint::from_network(net).to_bytes())
            .unwrap()
            .network()
            .unwrap();
        let a = net.logits(x.clone()).unwrap();
        let b = back.logits(x.clone()).unwrap();
        assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let data = tiny_mnist(48, 20);
    let plan = lenet_plan();
    let full = run_plan::<f32>(&plan, &data).unwrap();
    for stop in 1..4 {
        let mut t = Trainer::<f32>::new(plan.clone(), &data).unwrap();
        for _ in 0..stop {
            t.step_epoch().unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mid.ckpt");
        t.checkpoint().save(&path).unwrap();
        let ck = Checkpoint::load(&path).unwrap();
        assert_eq!(ck.epochs_done, stop);
        let rest = Trainer::<f32>::resume(plan.clone(), &data, &ck).unwrap().finish().unwrap();
        assert_eq!(rest.metrics, full.metrics[stop..], "stopped after {stop}");
        assert_eq!(rest.network, full.network);
    }
    let other = TrainPlan { seed: 5, ..plan };
    assert!(Trainer::<f32>::resume(other, &data, &full.checkpoint).is_err());
}

#[test]
fn same_seed_same_metrics_different_seed_differs() {
    let data = make_synthetic_xor(120, 0.3, 2).unwrap();
    let plan = TrainPlan {
        arch: Architecture::XorMlp,
        phase2_epochs: 4,
        batch_size: 8,
        augment: false,
        ..TrainPlan::default()
    };
    let a = run_plan::<f64>(&plan, &data).unwrap().metrics;
    assert_eq!(a, run_plan::<f64>(&plan, &data).unwrap().metrics);
    let b = run_plan::<f64>(&TrainPlan { seed: 2, ..plan }, &data).unwrap().metrics;
    assert_ne!(a, b);
}

#[test]
fn feature_export_shape_and_determinism() {
    let data = tiny_mnist(10, 120);
    let net = Network::<f32>::lenet_mnist(4);
    let mut first = Vec::new();
    let rows = export_features(&net, &data.test, "flatten", Some(100), 32, &mut first).unwrap();
    assert_eq!(rows, 100);
    let text = String::from_utf8(first.clone()).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 101);
    assert!(lines.iter().all(|l| l.split('\t').count() == 481));
    assert!(lines[0].starts_with("label\tf0\tf1"));
    assert!(lines[1].starts_with("0\t"));
    assert!(lines[2].starts_with("1\t"));

    let mut second = Vec::new();
    export_features(&net, &data.test, "flatten", Some(100), 7, &mut second).unwrap();
    assert_eq!(first, second);

    let mut empty = Vec::new();
    let none = export_features(&net, &Split::empty([1, 28, 28]), "flatten", None, 32, &mut empty).unwrap();
    assert_eq!(none, 0);
    assert_eq!(String::from_utf8(empty).unwrap().lines().count(), 1);

    let err = export_features(&net, &data.test, "conv9", None, 32, Vec::new()).unwrap_err();
    assert!(err.to_string().contains("flatten"), "{err}");
}

#[test]
fn reduced_data_at_full_fraction_equals_plain_run() {
    let data = make_synthetic_xor(80, 0.3, 1).unwrap();
    let plan = TrainPlan {
        arch: Architecture::XorMlp,
        mode: Mode::Baseline,
        phase2_epochs: 3,
        batch_size: 8,
        ..TrainPlan::default()
    };
    let (res, out) = reduced_data_study::<f64>(&plan, 1.0, &data).unwrap();
    let plain = run_plan::<f64>(&plan, &data).unwrap();
    assert_eq!(out.metrics, plain.metrics);
    assert_eq!(res.test_acc, plain.metrics.last().unwrap().test_acc);
    assert!((res.gap - (res.train_acc - res.test_acc)).abs() < 1e-12);
}

#[test]
fn reduced_data_rejects_empty_class() {
    let data = make_synthetic_xor(8, 0.3, 1).unwrap();
    let plan = TrainPlan {
        arch: Architecture::XorMlp,
        ..TrainPlan::default()
    };
    assert!(reduced_data_study::<f32>(&plan, 0.1, &data).is_err());
}

#[test]
fn sweep_table_has_one_row_per_fraction() {
    let data = make_synthetic_xor(40, 0.3, 1).unwrap();
    let plan = TrainPlan {
        arch: Architecture::XorMlp,
        phase2_epochs: 5,
        batch_size: 8,
        ..TrainPlan::default()
    };
    let rows = epoch_fraction_sweep::<f32>(&plan, &[0.2], &[1, 2], &data).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].test_accs.len(), 2);
    let csv = sweep_csv(&rows);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "fraction,test_acc_mean,test_acc_std");
    assert!(lines[1].starts_with("0.200000,"));
}

#[test]
fn ablation_cells_run_on_xor() {
    let data = make_synthetic_xor(40, 0.3, 1).unwrap();
    let base = TrainPlan {
        arch: Architecture::XorMlp,
        phase2_epochs: 2,
        batch_size: 8,
        ..TrainPlan::default()
    };
    let grid = ablation_grid(&base);
    for plan in &grid {
        let out = run_plan::<f32>(plan, &data).unwrap();
        let e1 = if plan.mode == Mode::Baseline { 0 } else { 0usize.max((0.2f64 * 2.0).round() as usize) };
        assert_eq!(out.metrics.len(), 2 + e1, "{}", plan.label());
        let uses_mixture = out.network.slots().iter().any(|s| s.current.is_mixture());
        assert_eq!(uses_mixture, plan.mode == Mode::MixtureFull, "{}", plan.label());
        if plan.mode == Mode::Wnla {
            assert!(out
                .network
                .slots()
                .iter()
                .all(|s| s.current == SlotActivation::Single(Activation::Identity)));
        }
    }
}
