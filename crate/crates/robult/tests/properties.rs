//! Randomized property checks for the loss and metric contracts: stochastic
//! proximity rows, bounded pair weights, kernel monotonicity, reconstruction
//! bounds and sign invariance, permutation equivariance of the contrastive
//! terms, and metric ranges.

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use robult::eval::task_metrics;
use robult::losses::{
    loss_pu_graph, loss_rec_graph, pair_weight, v_matrix, PairContext, WeightKernel,
};
use robult::mat::Mat;
use robult::synthdata::{LabelData, TaskKind};
use robult::Graph;

fn random_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    let mut m = Mat::zeros(rows, cols);
    for i in 0..rows {
        loop {
            for j in 0..cols {
                m.set(i, j, rng.gen_range(-1.0..1.0));
            }
            let norm = m.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-3 {
                break;
            }
        }
    }
    m
}

fn unit_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    let mut m = random_rows(rng, rows, cols);
    for i in 0..rows {
        let norm = m.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        for j in 0..cols {
            m.set(i, j, m.get(i, j) / norm);
        }
    }
    m
}

fn permute_rows(m: &Mat, perm: &[usize]) -> Mat {
    let mut out = Mat::zeros(m.rows, m.cols);
    for (to, &from) in perm.iter().enumerate() {
        for j in 0..m.cols {
            out.set(to, j, m.get(from, j));
        }
    }
    out
}

fn pu_scalars(s: &Mat, z: &Mat, ctx: &PairContext) -> (f64, f64) {
    let mut g = Graph::new();
    let st = s.to_tensor();
    let zt = z.to_tensor();
    let parts = loss_pu_graph(&mut g, &st, &[zt], ctx).unwrap();
    (parts.lb.scalar_value(), parts.ulb.scalar_value())
}

proptest! {
    #[test]
    fn proximity_softmax_rows_are_stochastic(
        seed in any::<u64>(),
        b in 2usize..8,
        d in 1usize..8,
        tau in 0.05f64..2.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = unit_rows(&mut rng, b, d);
        let z = unit_rows(&mut rng, b, d);
        let v = v_matrix(&s, &z, tau).unwrap();
        for j in 0..b {
            let row = v.row(j);
            prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
            let sum: f64 = row.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9, "row {j} sums to {sum}");
        }
    }

    #[test]
    fn pair_weights_stay_bounded_and_peak_at_the_reference(
        phi_ref in -20.0f64..20.0,
        gap in -10.0f64..10.0,
        gamma in 0.01f64..10.0,
        max_dist in 0.0f64..10.0,
    ) {
        let kernels = [
            WeightKernel::Uniform,
            WeightKernel::Rbf { gamma },
            WeightKernel::L1,
            WeightKernel::L2,
        ];
        for kernel in kernels {
            let w = pair_weight(phi_ref, phi_ref + gap, kernel, max_dist).unwrap();
            prop_assert!((0.0..=1.0).contains(&w), "{kernel:?} weight {w} out of range");
            let at_ref = pair_weight(phi_ref, phi_ref, kernel, max_dist).unwrap();
            prop_assert!((at_ref - 1.0).abs() < 1e-12, "{kernel:?} reference weight {at_ref}");
        }
    }

    #[test]
    fn rbf_weight_strictly_decreases_with_the_gap(
        gamma in 0.01f64..5.0,
        near in 0.0f64..2.0,
        extra in 1e-3f64..2.0,
    ) {
        let kernel = WeightKernel::Rbf { gamma };
        let w_near = pair_weight(0.0, near, kernel, 0.0).unwrap();
        let w_far = pair_weight(0.0, near + extra, kernel, 0.0).unwrap();
        prop_assert!(w_near > w_far, "w({near}) = {w_near} vs w({}) = {w_far}", near + extra);
        prop_assert!(w_far > 0.0);
    }

    #[test]
    fn reconstruction_loss_is_bounded_and_sign_invariant(
        seed in any::<u64>(),
        b in 1usize..6,
        d in 1usize..6,
        m in 1usize..4,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h: Vec<Mat> = (0..m).map(|_| random_rows(&mut rng, b, d)).collect();
        let mut ht: Vec<Mat> = (0..m).map(|_| random_rows(&mut rng, b, d)).collect();

        let value = {
            let mut g = Graph::new();
            let hs: Vec<_> = h.iter().map(Mat::to_tensor).collect();
            let ts: Vec<_> = ht.iter().map(Mat::to_tensor).collect();
            loss_rec_graph(&mut g, &hs, &ts).unwrap().scalar_value()
        };
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&value), "loss_rec = {value}");

        let flip_mod = rng.gen_range(0..m);
        let flip_row = rng.gen_range(0..b);
        for j in 0..d {
            let v = ht[flip_mod].get(flip_row, j);
            ht[flip_mod].set(flip_row, j, -v);
        }
        let flipped = {
            let mut g = Graph::new();
            let hs: Vec<_> = h.iter().map(Mat::to_tensor).collect();
            let ts: Vec<_> = ht.iter().map(Mat::to_tensor).collect();
            loss_rec_graph(&mut g, &hs, &ts).unwrap().scalar_value()
        };
        prop_assert!((value - flipped).abs() < 1e-12, "{value} vs {flipped} after sign flip");
    }

    #[test]
    fn contrastive_terms_are_permutation_equivariant(
        seed in any::<u64>(),
        b in 3usize..7,
        d in 2usize..6,
        classes in 2usize..4,
        filter in proptest::bool::ANY,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = unit_rows(&mut rng, b, d);
        let z = unit_rows(&mut rng, b, d);
        let labeled: Vec<bool> = (0..b).map(|_| rng.gen_bool(0.6)).collect();
        let anchor_classes: Vec<Option<usize>> =
            (0..b).map(|_| Some(rng.gen_range(0..classes))).collect();
        let mut perm: Vec<usize> = (0..b).collect();
        perm.shuffle(&mut rng);

        let quantile = filter.then_some(0.25);
        let kernels = vec![WeightKernel::Rbf { gamma: 1.0 }];
        let ctx = PairContext::new(&labeled, &anchor_classes, 0.2, kernels.clone(), quantile)
            .unwrap();
        let (lb, ulb) = pu_scalars(&s, &z, &ctx);

        let labeled_p: Vec<bool> = perm.iter().map(|&i| labeled[i]).collect();
        let classes_p: Vec<Option<usize>> = perm.iter().map(|&i| anchor_classes[i]).collect();
        let ctx_p = PairContext::new(&labeled_p, &classes_p, 0.2, kernels, quantile).unwrap();
        let (lb_p, ulb_p) = pu_scalars(&permute_rows(&s, &perm), &permute_rows(&z, &perm), &ctx_p);

        prop_assert!((lb - lb_p).abs() < 1e-12 * lb.abs().max(1.0), "lb {lb} vs {lb_p}");
        prop_assert!((ulb - ulb_p).abs() < 1e-12 * ulb.abs().max(1.0), "ulb {ulb} vs {ulb_p}");
    }

    #[test]
    fn classification_metrics_stay_in_range(
        seed in any::<u64>(),
        classes in 2usize..6,
        extra in 0usize..30,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = classes + extra;
        let scores = random_rows(&mut rng, n, classes);
        let mut ys: Vec<usize> = (0..n).map(|i| i % classes).collect();
        ys.shuffle(&mut rng);
        let row = task_metrics(
            "t",
            &scores,
            &LabelData::Classes(ys),
            TaskKind::Classification { classes },
        )
        .unwrap();
        for v in [row.binary_acc, row.f1_binary, row.f1_macro, row.auroc]
            .into_iter()
            .flatten()
        {
            prop_assert!((0.0..=1.0).contains(&v), "metric {v} out of range");
        }
        prop_assert!(row.mae.is_none());
        prop_assert!(row.pearson_corr.is_none());
    }

    #[test]
    fn regression_metrics_stay_in_range(
        seed in any::<u64>(),
        n in 2usize..40,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scores = random_rows(&mut rng, n, 1);
        let ys: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let row = task_metrics("t", &scores, &LabelData::Values(ys), TaskKind::Regression).unwrap();
        prop_assert!(row.mae.unwrap() >= 0.0);
        if let Some(r) = row.pearson_corr {
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&r), "pearson {r}");
        }
        for v in [row.binary_acc, row.f1_binary].into_iter().flatten() {
            prop_assert!((0.0..=1.0).contains(&v), "metric {v} out of range");
        }
        prop_assert!(row.auroc.is_none());
    }
}
