//! Release gate: ten independent criteria, each as one test printing a
//! single verdict line (visible with `--nocapture`). Tolerances and
//! instance counts are part of the contract; loosening them is a release
//! decision, not a test fix.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use robult::config::RunConfig;
use robult::eval::{
    auroc_midrank, auroc_pairwise, histogram_mi, positive_majority_probability, task_metrics,
};
use robult::gradcheck::{central_diff, max_rel_err};
use robult::graph::Graph;
use robult::losses::{
    loss_pu_graph, loss_rec_graph, loss_sup_graph, pair_weight, PairContext, WeightKernel,
};
use robult::mat::Mat;
use robult::model::{ForwardPlan, ModelSpec, RobultModel};
use robult::pipeline::{run_ablate, run_train, AblationVariant};
use robult::synthdata::{generate, Dataset, LabelData, TaskKind};
use robult::tensor::Tensor;
use robult::training::{
    backward_alignment, backward_reconstruction, forward_and_losses, make_semisupervised_split,
    run_epoch, Adam,
};

macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err(format!($($arg)+));
        }
    };
}

fn check(id: usize, name: &str, result: std::result::Result<(), String>) {
    match result {
        Ok(()) => println!("criterion {id:02} ({name}): pass"),
        Err(msg) => {
            println!("criterion {id:02} ({name}): FAIL ({msg})");
            panic!("criterion {id:02} ({name}): {msg}");
        }
    }
}

/// Largest relative error between backpropagated and central-difference
/// gradients of the scalar `build` produces from leaf tensors of the given
/// shapes.
fn fd_vs_analytic<F>(shapes: &[(usize, usize)], values: &[f64], build: &F, step: f64) -> f64
where
    F: Fn(&mut Graph, &[Tensor]) -> Tensor,
{
    let make_leaves = |vals: &[f64], grad: bool| -> Vec<Tensor> {
        let mut off = 0;
        let mut out = Vec::new();
        for &(r, c) in shapes {
            let n = r * c;
            let t = Tensor::from_vec(&[r, c], vals[off..off + n].to_vec()).unwrap();
            t.set_requires_grad(grad);
            out.push(t);
            off += n;
        }
        assert_eq!(off, vals.len(), "leaf shapes must cover every value");
        out
    };

    let leaves = make_leaves(values, true);
    let mut g = Graph::new();
    let loss = build(&mut g, &leaves);
    g.backward(&loss).unwrap();
    let analytic: Vec<f64> = leaves.iter().flat_map(|t| t.grad_vec()).collect();

    let fd = central_diff(
        |vals: &[f64]| {
            let leaves = make_leaves(vals, false);
            let mut g = Graph::new();
            build(&mut g, &leaves).scalar_value()
        },
        values,
        step,
    );
    max_rel_err(&analytic, &fd)
}

fn random_values(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

#[test]
fn criterion_01_gradient_fidelity() {
    let run = || -> std::result::Result<(), String> {
        let start = Instant::now();
        let step = 1e-5;
        let mut worst: f64 = 0.0;
        for instance in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(900 + instance);
            let b = rng.gen_range(3..=6);
            let d = rng.gen_range(2..=8);
            let m = if instance % 2 == 0 { 2 } else { 3 };
            let classes = 3usize;

            let mut labeled: Vec<bool> = (0..b).map(|_| rng.gen_bool(0.6)).collect();
            labeled[0] = true;
            let anchor_classes: Vec<Option<usize>> =
                (0..b).map(|_| Some(rng.gen_range(0..classes))).collect();
            let kernels: Vec<WeightKernel> = (0..m)
                .map(|i| match (instance as usize + i) % 3 {
                    0 => WeightKernel::Rbf { gamma: 0.8 },
                    1 => WeightKernel::L1,
                    _ => WeightKernel::L2,
                })
                .collect();
            let quantile = (instance % 4 == 0).then_some(0.25);
            let ctx = PairContext::new(&labeled, &anchor_classes, 0.25, kernels, quantile)
                .unwrap();

            // Contrastive loss over normalized projections.
            let pu_shapes = vec![(b, d); m + 1];
            let pu_values = random_values(&mut rng, (m + 1) * b * d);
            let pu_build = |g: &mut Graph, leaves: &[Tensor]| -> Tensor {
                let s = g.l2_normalize_rows(&leaves[0]).unwrap();
                let z: Vec<Tensor> = leaves[1..]
                    .iter()
                    .map(|t| g.l2_normalize_rows(t).unwrap())
                    .collect();
                let parts = loss_pu_graph(g, &s, &z, &ctx).unwrap();
                g.add(&parts.lb, &parts.ulb).unwrap()
            };
            worst = worst.max(fd_vs_analytic(&pu_shapes, &pu_values, &pu_build, step));

            // Reconstruction loss over raw latents.
            let rec_shapes = vec![(b, d); 2 * m];
            let rec_values = random_values(&mut rng, 2 * m * b * d);
            let rec_build = |g: &mut Graph, leaves: &[Tensor]| -> Tensor {
                let (h, ht) = leaves.split_at(m);
                loss_rec_graph(g, h, ht).unwrap()
            };
            worst = worst.max(fd_vs_analytic(&rec_shapes, &rec_values, &rec_build, step));

            // Supervised loss across all heads, alternating task kinds.
            let (task, labels, width) = if instance % 2 == 0 {
                let ys: Vec<usize> = (0..b).map(|_| rng.gen_range(0..classes)).collect();
                (
                    TaskKind::Classification { classes },
                    LabelData::Classes(ys),
                    classes,
                )
            } else {
                let ys: Vec<f64> = (0..b).map(|_| rng.gen_range(-3.0..3.0)).collect();
                (TaskKind::Regression, LabelData::Values(ys), 1)
            };
            let sup_shapes = vec![(b, width); m + 1];
            let sup_values = random_values(&mut rng, (m + 1) * b * width);
            let sup_build = |g: &mut Graph, leaves: &[Tensor]| -> Tensor {
                loss_sup_graph(g, leaves, &labels, &labeled, task).unwrap().0
            };
            worst = worst.max(fd_vs_analytic(&sup_shapes, &sup_values, &sup_build, step));
        }
        let elapsed = start.elapsed();
        ensure!(
            worst < 1e-4,
            "worst relative gradient error {worst:.3e} exceeds 1e-4"
        );
        ensure!(
            elapsed.as_secs() < 60,
            "gradient checks took {elapsed:?}, budget is 60 s"
        );
        Ok(())
    };
    check(1, "gradient fidelity vs finite differences", run());
}

fn training_fixture(seed: u64) -> (RobultModel, Dataset, Vec<bool>, RunConfig) {
    let mut cfg = RunConfig::default();
    cfg.task = TaskKind::Classification { classes: 3 };
    cfg.raw_dims = vec![6, 5, 4];
    cfg.betas = vec![0.5; 3];
    cfg.samples = 24;
    cfg.latent_dim = 8;
    cfg.batch_size = 24;
    cfg.label_ratio = 0.5;
    cfg.seed = seed;
    let ds = generate(&cfg.synth_spec()).unwrap();
    let labeled =
        make_semisupervised_split(&ds.labels, ds.task, cfg.label_ratio, cfg.seed).unwrap();
    let model = RobultModel::new(cfg.model_spec()).unwrap();
    (model, ds, labeled, cfg)
}

#[test]
fn criterion_02_selective_backward_isolation() {
    let run = || -> std::result::Result<(), String> {
        let (model, ds, labeled, cfg) = training_fixture(41);
        let idx: Vec<usize> = (0..ds.n()).collect();
        let batch = ds.batch(&idx, &labeled).unwrap();
        let groups = model.parameter_groups();
        let all_zero = |params: &[Tensor]| -> bool {
            params
                .iter()
                .all(|p| p.grad_vec().iter().all(|&v| v == 0.0))
        };
        let any_nonzero = |params: &[Tensor]| -> bool {
            params
                .iter()
                .any(|p| p.grad_vec().iter().any(|&v| v != 0.0))
        };

        // Reconstruction backward must not reach the projector, fusion,
        // shared-head, or classifier parameters.
        let mut g = Graph::new();
        let losses = forward_and_losses(&model, &mut g, &batch, &cfg).unwrap();
        model.zero_grads();
        backward_reconstruction(&model, &mut g, &losses, &cfg).unwrap();
        ensure!(
            all_zero(&groups.pu),
            "reconstruction leaked gradient into the contrastive group"
        );
        ensure!(
            all_zero(&groups.classifier),
            "reconstruction leaked gradient into the classifier"
        );
        ensure!(
            any_nonzero(&groups.unique),
            "reconstruction moved nothing at all"
        );

        // Contrastive backward must not reach unique heads, reconstructors,
        // or the classifier.
        let mut g = Graph::new();
        let losses = forward_and_losses(&model, &mut g, &batch, &cfg).unwrap();
        model.zero_grads();
        backward_alignment(&model, &mut g, &losses, &cfg).unwrap();
        ensure!(
            all_zero(&groups.unique),
            "alignment leaked gradient into unique heads or reconstructors"
        );
        ensure!(
            all_zero(&groups.classifier),
            "alignment leaked gradient into the classifier"
        );
        ensure!(any_nonzero(&groups.pu), "alignment moved nothing at all");
        Ok(())
    };
    check(2, "selective backward isolation", run());
}

#[test]
fn criterion_03_pair_coverage_bound() {
    let run = || -> std::result::Result<(), String> {
        let start = Instant::now();
        let p = positive_majority_probability(8, 2).unwrap();
        let elapsed = start.elapsed();
        ensure!(p > 0.0, "probability should be positive, got {p}");
        ensure!(p < 0.1, "P(majority positive) = {p}, bound is 0.1");
        ensure!(elapsed.as_millis() < 1000, "took {elapsed:?}, budget is 1 s");
        Ok(())
    };
    check(3, "batch positive-majority bound", run());
}

fn representation_mi(model: &RobultModel, ds: &Dataset, bins: usize) -> Vec<f64> {
    let idx: Vec<usize> = (0..ds.n()).collect();
    let no_labels = vec![false; ds.n()];
    let batch = ds.batch(&idx, &no_labels).unwrap();
    let mut g = Graph::new();
    let plan = ForwardPlan {
        with_unique: false,
        with_reconstruction: false,
    };
    let out = model.forward_all(&mut g, &batch, plan).unwrap();
    let s = Mat::from_tensor(&out.s);
    out.z
        .iter()
        .map(|zi| histogram_mi(&Mat::from_tensor(zi), &s, bins).unwrap())
        .collect()
}

#[test]
fn criterion_04_mutual_information_rises() {
    let run = || -> std::result::Result<(), String> {
        let start = Instant::now();
        for seed in [1u64, 2, 3] {
            let mut cfg = RunConfig::default();
            cfg.samples = 2000;
            cfg.raw_dims = vec![16, 12, 20];
            cfg.betas = vec![0.5; 3];
            cfg.alpha = 1.0;
            cfg.label_ratio = 0.05;
            cfg.epochs = 40;
            cfg.batch_size = 64;
            cfg.latent_dim = 24;
            cfg.seed = seed;
            let ds = generate(&cfg.synth_spec()).unwrap();
            let labeled =
                make_semisupervised_split(&ds.labels, ds.task, cfg.label_ratio, cfg.seed)
                    .unwrap();
            let model = RobultModel::new(cfg.model_spec()).unwrap();
            let before = representation_mi(&model, &ds, 16);
            let mut opt = Adam::new(&model.parameters(), cfg.learning_rate);
            for epoch in 0..cfg.epochs {
                run_epoch(&model, &ds, &labeled, &cfg, &mut opt, epoch).unwrap();
            }
            let after = representation_mi(&model, &ds, 16);
            for (i, (b, a)) in before.iter().zip(&after).enumerate() {
                ensure!(
                    a > b,
                    "seed {seed}: MI of modality {} fell from {b:.4} to {a:.4}",
                    i + 1
                );
            }
        }
        let elapsed = start.elapsed();
        ensure!(
            elapsed.as_secs() < 600,
            "MI training runs took {elapsed:?}, budget is 10 min"
        );
        Ok(())
    };
    check(4, "shared-information gain during training", run());
}

#[test]
fn criterion_05_unique_information_ablation() {
    let run = || -> std::result::Result<(), String> {
        let mut margin_sum = 0.0;
        for seed in [11u64, 12, 13] {
            let mut cfg = RunConfig::default();
            cfg.task = TaskKind::Classification { classes: 4 };
            cfg.raw_dims = vec![12, 12];
            cfg.alpha = 0.5;
            cfg.betas = vec![3.0, 0.0];
            cfg.samples = 900;
            cfg.latent_dim = 16;
            cfg.epochs = 25;
            cfg.batch_size = 64;
            cfg.learning_rate = 3e-3;
            cfg.label_ratio = 0.1;
            cfg.seed = seed;

            let full_dir = tempfile::tempdir().unwrap();
            let full = run_train(&cfg, full_dir.path()).unwrap();
            let drop_dir = tempfile::tempdir().unwrap();
            let dropped = run_ablate(&cfg, AblationVariant::DropRec, drop_dir.path()).unwrap();

            let acc = |bundle: &robult::pipeline::ReportBundle| -> f64 {
                bundle
                    .metrics
                    .iter()
                    .find(|r| r.tag == "m1")
                    .and_then(|r| r.binary_acc)
                    .expect("m1 accuracy present")
            };
            margin_sum += acc(&full) - acc(&dropped);
        }
        let margin = margin_sum / 3.0;
        ensure!(
            margin > 0.0,
            "dropping reconstruction should cost the unique-heavy modality accuracy, margin {margin:.4}"
        );
        Ok(())
    };
    check(5, "reconstruction ablation hurts the unique modality", run());
}

#[test]
fn criterion_06_weight_kernel_properties() {
    let run = || -> std::result::Result<(), String> {
        let rbf = WeightKernel::Rbf { gamma: 0.7 };
        let at_zero = pair_weight(1.0, 1.0, rbf, 0.0).unwrap();
        ensure!(at_zero == 1.0, "rbf weight at zero distance is {at_zero}");
        let mut prev = at_zero;
        for k in 1..=100 {
            let w = pair_weight(1.0, 1.0 + 0.05 * k as f64, rbf, 0.0).unwrap();
            ensure!(
                w < prev,
                "rbf weight not strictly decreasing at grid point {k}: {w} vs {prev}"
            );
            prev = w;
        }

        for (kernel, far) in [(WeightKernel::L1, 1.5), (WeightKernel::L2, 1.5 * 1.5)] {
            let near = pair_weight(2.0, 2.0, kernel, far).unwrap();
            ensure!(near == 1.0, "{kernel:?} weight at zero distance is {near}");
            let edge = pair_weight(2.0, 3.5, kernel, far).unwrap();
            ensure!(edge == 0.0, "{kernel:?} weight at max distance is {edge}");
        }
        Ok(())
    };
    check(6, "pair-weight kernel endpoints and monotonicity", run());
}

/// Macro F1 straight from the confusion matrix, written independently of
/// the library's per-class bookkeeping.
fn macro_f1_oracle(labels: &[usize], preds: &[usize], k: usize) -> f64 {
    let mut conf = vec![0usize; k * k];
    for (&l, &p) in labels.iter().zip(preds) {
        conf[l * k + p] += 1;
    }
    let mut total = 0.0;
    for c in 0..k {
        let tp = conf[c * k + c] as f64;
        let fp: f64 = (0..k).filter(|&a| a != c).map(|a| conf[a * k + c] as f64).sum();
        let missed: f64 = (0..k).filter(|&p| p != c).map(|p| conf[c * k + p] as f64).sum();
        let denom = 2.0 * tp + fp + missed;
        if denom > 0.0 {
            total += 2.0 * tp / denom;
        }
    }
    total / k as f64
}

fn library_macro_f1(labels: &[usize], preds: &[usize], k: usize) -> f64 {
    let n = labels.len();
    let mut scores = Mat::zeros(n, k);
    for (j, &p) in preds.iter().enumerate() {
        scores.set(j, p, 1.0);
    }
    let row = task_metrics(
        "case",
        &scores,
        &LabelData::Classes(labels.to_vec()),
        TaskKind::Classification { classes: k },
    )
    .unwrap();
    row.f1_macro.expect("classification reports macro F1")
}

#[test]
fn criterion_07_metric_oracles() {
    let run = || -> std::result::Result<(), String> {
        // Rank-based AUROC against the quadratic pairwise count, with ties.
        let mut rng = ChaCha8Rng::seed_from_u64(7070);
        for instance in 0..50 {
            let n = rng.gen_range(5..=100);
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..8) as f64 * 0.5).collect();
            let mut positive: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
            positive[0] = true;
            positive[1] = false;
            let fast = auroc_midrank(&scores, &positive).unwrap();
            let slow = auroc_pairwise(&scores, &positive).unwrap();
            ensure!(
                fast == slow,
                "instance {instance}: midrank {fast} != pairwise {slow}"
            );
        }

        // Two literal cases with known values.
        let exact = library_macro_f1(&[0, 1, 2, 0, 1, 2], &[0, 1, 2, 0, 1, 2], 3);
        ensure!(exact == 1.0, "perfect predictions scored {exact}");
        let half = library_macro_f1(&[0, 0, 1, 1], &[0, 1, 0, 1], 2);
        ensure!(half == 0.5, "balanced coin case scored {half}");
        // A class absent from both labels and predictions still divides.
        let padded = library_macro_f1(&[0, 0, 1, 1], &[0, 0, 1, 1], 3);
        ensure!(
            (padded - 2.0 / 3.0).abs() < 1e-15,
            "zero-support class handling gave {padded}"
        );

        // Seven randomized cases against the confusion-matrix oracle.
        for case in 0..7u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(7100 + case);
            let k = rng.gen_range(2..=4);
            let n = rng.gen_range(10..=40);
            let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
            let preds: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
            let lib = library_macro_f1(&labels, &preds, k);
            let oracle = macro_f1_oracle(&labels, &preds, k);
            ensure!(
                (lib - oracle).abs() < 1e-12,
                "case {case}: library {lib} vs confusion-matrix {oracle}"
            );
        }
        Ok(())
    };
    check(7, "ranking and F1 metric oracles", run());
}

#[test]
fn criterion_08_head_scaling_is_linear() {
    let run = || -> std::result::Result<(), String> {
        let count = |m: usize| -> usize {
            let spec = ModelSpec {
                raw_dims: vec![10; m],
                latent_dim: 24,
                task: TaskKind::Classification { classes: 4 },
                seed: 1,
            };
            RobultModel::new(spec).unwrap().head_family_param_count()
        };
        let (c2, c3, c4) = (count(2), count(3), count(4));
        ensure!(
            c4 - c3 == c3 - c2,
            "head family grows by {} then {}, expected equal steps",
            c3 - c2,
            c4 - c3
        );
        ensure!(c3 > c2, "head family should grow with modality count");
        Ok(())
    };
    check(8, "head-family parameter count scales linearly", run());
}

#[test]
fn criterion_09_masked_inference_stays_finite() {
    let run = || -> std::result::Result<(), String> {
        let (model, ds, labeled, _) = training_fixture(53);
        let idx: Vec<usize> = (0..16).collect();
        let m = ds.m();
        for bits in 1u32..(1 << m) {
            let subset: Vec<usize> = (0..m).filter(|i| bits >> i & 1 == 1).collect();
            let mut batch = ds.batch(&idx, &labeled).unwrap();
            for j in 0..m {
                if !subset.contains(&j) {
                    for v in &mut batch.modalities[j].data {
                        *v = f64::NAN;
                    }
                    for row in &mut batch.available {
                        row[j] = false;
                    }
                }
            }
            let out = model.infer(&batch, &subset).unwrap();
            ensure!(
                out.data.iter().all(|v| v.is_finite()),
                "subset {subset:?} produced a non-finite prediction"
            );
        }
        Ok(())
    };
    check(9, "inference is finite under every availability subset", run());
}

#[test]
fn criterion_10_training_reports_are_deterministic() {
    let run = || -> std::result::Result<(), String> {
        let mut cfg = RunConfig::default();
        cfg.task = TaskKind::Classification { classes: 3 };
        cfg.raw_dims = vec![6, 5];
        cfg.betas = vec![0.5; 2];
        cfg.samples = 120;
        cfg.latent_dim = 8;
        cfg.epochs = 3;
        cfg.batch_size = 32;
        cfg.label_ratio = 0.25;
        cfg.seed = 77;
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let b1 = run_train(&cfg, d1.path()).unwrap();
        let b2 = run_train(&cfg, d2.path()).unwrap();
        let x = std::fs::read(&b1.losses_csv).unwrap();
        let y = std::fs::read(&b2.losses_csv).unwrap();
        ensure!(
            x == y,
            "loss reports differ between identical runs ({} vs {} bytes)",
            x.len(),
            y.len()
        );
        Ok(())
    };
    check(10, "identical runs write identical loss reports", run());
}
