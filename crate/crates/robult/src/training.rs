//! Selective-gradient training: one shared forward pass feeds three
//! backward passes, each over its own parameter group, and a single
//! optimizer step consumes the accumulated gradients.
//!
//! Per batch the order is fixed: reconstruction flows into the unique heads
//! and reconstructors only, the contrastive terms flow into the projector
//! and redundancy-head group, and the supervised loss flows everywhere.
//! Parameters outside the active group keep their gradient accumulators
//! untouched because the engine reads the requires-grad flag when a backward
//! pass runs, not when the graph is built.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{GammaSetting, KernelChoice, RunConfig};
use crate::error::{Result, RobultError};
use crate::graph::Graph;
use crate::losses::{
    auto_rbf_gamma, loss_pu_graph, loss_rec_graph, loss_sup_graph, resolve_anchor_classes,
    LossReport, PairContext, WeightKernel,
};
use crate::mat::Mat;
use crate::model::{ForwardOutputs, ForwardPlan, RobultModel};
use crate::synthdata::{Batch, Dataset, LabelData, TaskKind};
use crate::tensor::{set_requires_grad, Tensor};

/// Which parameter group the next backward pass may write gradients into.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ToggleMode {
    /// Every parameter.
    All,
    /// Unique heads and reconstructors.
    UniqueOnly,
    /// Projectors, fusion, and the shared redundancy head.
    PuOnly,
}

impl ToggleMode {
    /// Numeric form used by the training schedule: 0 all, 1 unique, 2
    /// contrastive.
    pub fn from_flag(flag: u8) -> Result<ToggleMode> {
        match flag {
            0 => Ok(ToggleMode::All),
            1 => Ok(ToggleMode::UniqueOnly),
            2 => Ok(ToggleMode::PuOnly),
            other => Err(RobultError::Contract(format!(
                "toggle flag must be 0, 1, or 2, got {other}"
            ))),
        }
    }
}

/// Set requires-grad so that exactly the selected group receives gradients.
/// `wide_contrastive` widens the contrastive group to include the unique
/// heads (the literal reading of the published schedule).
pub fn apply_toggle(model: &RobultModel, mode: ToggleMode, wide_contrastive: bool) {
    let groups = model.parameter_groups();
    set_requires_grad(&groups.all, false);
    match mode {
        ToggleMode::All => set_requires_grad(&groups.all, true),
        ToggleMode::UniqueOnly => set_requires_grad(&groups.unique, true),
        ToggleMode::PuOnly => {
            if wide_contrastive {
                set_requires_grad(&groups.pu_wide, true);
            } else {
                set_requires_grad(&groups.pu, true);
            }
        }
    }
}

/// Adam with bias correction; one state slot per parameter tensor.
#[derive(Debug)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &[Tensor], learning_rate: f64) -> Adam {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Apply one update from the gradients currently accumulated on
    /// `params`, which must be the same tensors `new` saw, in order.
    pub fn step(&mut self, params: &[Tensor]) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(RobultError::Contract(format!(
                "optimizer tracks {} parameters, got {}",
                self.m.len(),
                params.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (idx, p) in params.iter().enumerate() {
            if p.numel() != self.m[idx].len() {
                return Err(RobultError::Contract(format!(
                    "parameter {idx} changed size ({} vs {})",
                    p.numel(),
                    self.m[idx].len()
                )));
            }
            let grad = p.grad_vec();
            if let Some(bad) = grad.iter().find(|g| !g.is_finite()) {
                return Err(RobultError::NonFinite(format!(
                    "gradient of parameter {idx} ({bad})"
                )));
            }
            let mut vals = p.values_vec();
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            for k in 0..vals.len() {
                let g = grad[k];
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g;
                let mhat = m[k] / bc1;
                let vhat = v[k] / bc2;
                vals[k] -= self.learning_rate * mhat / (vhat.sqrt() + self.epsilon);
            }
            p.set_values(&vals)?;
        }
        Ok(())
    }
}

/// Stratified labeled/unlabeled split: within each class (regression targets
/// are discretized first), a seeded shuffle marks `ceil(ratio * count)` rows
/// as labeled.
pub fn make_semisupervised_split(
    labels: &LabelData,
    task: TaskKind,
    ratio: f64,
    seed: u64,
) -> Result<Vec<bool>> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(RobultError::Config(format!(
            "label ratio must lie in [0, 1], got {ratio}"
        )));
    }
    let n = labels.len();
    let class_of: Vec<usize> = match (task, labels) {
        (TaskKind::Classification { classes }, LabelData::Classes(ys)) => {
            if let Some(&bad) = ys.iter().find(|&&y| y >= classes) {
                return Err(RobultError::Contract(format!(
                    "label {bad} out of range for {classes} classes"
                )));
            }
            ys.clone()
        }
        (TaskKind::Regression, LabelData::Values(ys)) => ys
            .iter()
            .map(|&y| crate::losses::discrete_class_index(y))
            .collect(),
        _ => {
            return Err(RobultError::Contract(
                "label kind does not match the task".into(),
            ))
        }
    };
    let groups = class_of.iter().max().map_or(0, |&c| c + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labeled = vec![false; n];
    for c in 0..groups {
        let mut idx: Vec<usize> = (0..n).filter(|&j| class_of[j] == c).collect();
        if idx.is_empty() {
            continue;
        }
        idx.shuffle(&mut rng);
        let take = (ratio * idx.len() as f64).ceil() as usize;
        for &j in idx.iter().take(take.min(idx.len())) {
            labeled[j] = true;
        }
    }
    Ok(labeled)
}

/// One forward pass plus every active loss, still attached to the graph.
pub struct BatchLosses {
    pub outputs: ForwardOutputs,
    pub sup: Option<Tensor>,
    pub rec: Option<Tensor>,
    pub lb: Option<Tensor>,
    pub ulb: Option<Tensor>,
    pub report: LossReport,
}

/// Resolve the per-modality candidate kernels for one batch. The RBF
/// bandwidth in auto mode comes from the spread of labeled-positive
/// proximities, so it is data but not part of the differentiable graph.
pub fn resolve_kernels(
    cfg: &RunConfig,
    s: &Mat,
    z: &[Mat],
    labeled: &[bool],
    labeled_pos: &[Vec<usize>],
) -> Result<Vec<WeightKernel>> {
    if cfg.uniform_weights {
        return Ok(vec![WeightKernel::Uniform; z.len()]);
    }
    match cfg.kernel {
        KernelChoice::L1 => Ok(vec![WeightKernel::L1; z.len()]),
        KernelChoice::L2 => Ok(vec![WeightKernel::L2; z.len()]),
        KernelChoice::Rbf => z
            .iter()
            .map(|zi| {
                let gamma = match cfg.rbf_gamma {
                    GammaSetting::Fixed(v) => v,
                    GammaSetting::Auto => {
                        auto_rbf_gamma(s, zi, labeled, labeled_pos, cfg.temperature)?
                    }
                };
                Ok(WeightKernel::Rbf { gamma })
            })
            .collect(),
    }
}

/// Run the shared forward pass and build every loss the configuration keeps.
pub fn forward_and_losses(
    model: &RobultModel,
    g: &mut Graph,
    batch: &Batch,
    cfg: &RunConfig,
) -> Result<BatchLosses> {
    let plan = ForwardPlan {
        with_unique: !cfg.drop_unique_branches,
        with_reconstruction: !cfg.drop_unique_branches && !cfg.drop_rec,
    };
    let outputs = model.forward_all(g, batch, plan)?;

    let mut sup = None;
    let mut sup_value = 0.0;
    let labeled_rows;
    if !cfg.drop_sup {
        let mut heads = outputs.branch_logits.clone();
        heads.push(outputs.fused_logits.clone());
        let (loss, count) =
            loss_sup_graph(g, &heads, &batch.labels, &batch.labeled, batch.task)?;
        labeled_rows = count;
        sup_value = loss.scalar_value();
        if count > 0 {
            sup = Some(loss);
        }
    } else {
        labeled_rows = batch.labeled.iter().filter(|&&l| l).count();
    }

    let mut rec = None;
    let mut rec_value = 0.0;
    if plan.with_reconstruction {
        let loss = loss_rec_graph(g, &outputs.h, &outputs.h_tilde)?;
        rec_value = loss.scalar_value();
        rec = Some(loss);
    }

    let mut lb = None;
    let mut ulb = None;
    let mut lb_value = 0.0;
    let mut ulb_value = 0.0;
    if !(cfg.drop_lb && cfg.drop_ulb) {
        let fused = Mat::from_tensor(&outputs.fused_logits);
        let classes = resolve_anchor_classes(
            &batch.labels,
            &batch.labeled,
            &fused,
            batch.task,
            !cfg.drop_pseudo,
        )?;
        let (labeled_pos, _) = crate::losses::build_positive_sets(&batch.labeled, &classes)?;
        let s_mat = Mat::from_tensor(&outputs.s);
        let z_mats: Vec<Mat> = outputs.z.iter().map(Mat::from_tensor).collect();
        let kernels = resolve_kernels(cfg, &s_mat, &z_mats, &batch.labeled, &labeled_pos)?;
        let quantile = if cfg.weight_percentile_filter {
            Some(0.25)
        } else {
            None
        };
        let ctx = PairContext::new(
            &batch.labeled,
            &classes,
            cfg.temperature,
            kernels,
            quantile,
        )?;
        let parts = loss_pu_graph(g, &outputs.s, &outputs.z, &ctx)?;
        if !cfg.drop_lb {
            lb_value = parts.lb.scalar_value();
            lb = Some(parts.lb);
        }
        if !cfg.drop_ulb {
            ulb_value = parts.ulb.scalar_value();
            ulb = Some(parts.ulb);
        }
    }

    let report = LossReport {
        sup: sup_value,
        rec: rec_value,
        lb: lb_value,
        ulb: ulb_value,
        labeled_rows,
    };
    report.check_finite()?;
    Ok(BatchLosses {
        outputs,
        sup,
        rec,
        lb,
        ulb,
        report,
    })
}

/// Backward pass for the reconstruction loss, restricted to the unique
/// heads and reconstructors.
pub fn backward_reconstruction(
    model: &RobultModel,
    g: &mut Graph,
    losses: &BatchLosses,
    cfg: &RunConfig,
) -> Result<()> {
    if let Some(rec) = &losses.rec {
        if cfg.weight_rec > 0.0 {
            apply_toggle(model, ToggleMode::UniqueOnly, false);
            let root = g.scale(rec, cfg.weight_rec)?;
            g.backward(&root)?;
        }
    }
    Ok(())
}

/// Backward pass for the contrastive terms, restricted to the projector and
/// redundancy-head group.
pub fn backward_alignment(
    model: &RobultModel,
    g: &mut Graph,
    losses: &BatchLosses,
    cfg: &RunConfig,
) -> Result<()> {
    let mut root: Option<Tensor> = None;
    if let Some(lb) = &losses.lb {
        if cfg.weight_lb > 0.0 {
            root = Some(g.scale(lb, cfg.weight_lb)?);
        }
    }
    if let Some(ulb) = &losses.ulb {
        if cfg.weight_ulb > 0.0 {
            let scaled = g.scale(ulb, cfg.weight_ulb)?;
            root = Some(match root {
                None => scaled,
                Some(prev) => g.add(&prev, &scaled)?,
            });
        }
    }
    if let Some(root) = root {
        apply_toggle(model, ToggleMode::PuOnly, cfg.algorithm1_toggle_reading);
        g.backward(&root)?;
    }
    Ok(())
}

/// Backward pass for the supervised loss over every parameter.
pub fn backward_supervised(
    model: &RobultModel,
    g: &mut Graph,
    losses: &BatchLosses,
    cfg: &RunConfig,
) -> Result<()> {
    if let Some(sup) = &losses.sup {
        if cfg.weight_sup > 0.0 {
            apply_toggle(model, ToggleMode::All, false);
            let root = g.scale(sup, cfg.weight_sup)?;
            g.backward(&root)?;
        }
    }
    Ok(())
}

/// One training step: shared forward, the three selective backward passes
/// in schedule order, one optimizer step, gradients cleared. Leaves every
/// parameter's requires-grad flag on.
pub fn train_step(
    model: &RobultModel,
    batch: &Batch,
    cfg: &RunConfig,
    opt: &mut Adam,
) -> Result<LossReport> {
    let mut g = Graph::new();
    let losses = forward_and_losses(model, &mut g, batch, cfg)?;
    backward_reconstruction(model, &mut g, &losses, cfg)?;
    backward_alignment(model, &mut g, &losses, cfg)?;
    backward_supervised(model, &mut g, &losses, cfg)?;
    apply_toggle(model, ToggleMode::All, false);
    opt.step(&model.parameters())?;
    model.zero_grads();
    Ok(losses.report)
}

/// One pass over the dataset in seeded shuffled order. Returns the
/// row-weighted mean of the per-batch loss reports. Trailing chunks with a
/// single row are skipped; the contrastive softmax needs at least two.
pub fn run_epoch(
    model: &RobultModel,
    ds: &Dataset,
    labeled: &[bool],
    cfg: &RunConfig,
    opt: &mut Adam,
    epoch: usize,
) -> Result<LossReport> {
    if labeled.len() != ds.n() {
        return Err(RobultError::Contract(format!(
            "labeled mask has {} rows, dataset {}",
            labeled.len(),
            ds.n()
        )));
    }
    let mut order: Vec<usize> = (0..ds.n()).collect();
    let mut rng =
        ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64 + 1).wrapping_mul(0x9E3779B97F4A7C15));
    order.shuffle(&mut rng);

    let mut sums = [0.0; 4];
    let mut rows = 0usize;
    let mut labeled_total = 0usize;
    for chunk in order.chunks(cfg.batch_size) {
        if chunk.len() < 2 {
            continue;
        }
        let batch = ds.batch(chunk, labeled)?;
        let report = train_step(model, &batch, cfg, opt)?;
        let w = chunk.len() as f64;
        sums[0] += report.sup * w;
        sums[1] += report.rec * w;
        sums[2] += report.lb * w;
        sums[3] += report.ulb * w;
        rows += chunk.len();
        labeled_total += report.labeled_rows;
    }
    if rows == 0 {
        return Err(RobultError::BatchTooSmall(ds.n()));
    }
    let n = rows as f64;
    Ok(LossReport {
        sup: sums[0] / n,
        rec: sums[1] / n,
        lb: sums[2] / n,
        ulb: sums[3] / n,
        labeled_rows: labeled_total,
    })
}
