//! Loss stack: a soft positive-unlabeled contrastive objective over the
//! redundancy space, latent reconstruction for unique-information
//! preservation, and the supervised task loss.
//!
//! For each anchor row `j` the batch splits into labeled positives
//! (`labeled_pos[j]`, pairs where both rows carry a known shared class; the
//! anchor's own cross-modal pair is always a member) and pseudo positives
//! (`pseudo_pos[j]`, class-matching pairs involving at least one unlabeled
//! row). The labeled term is an exact contrastive pull; the pseudo term is
//! softened per candidate by a kernel on the gap between the candidate's
//! proximity to the anchor and the anchor's mean proximity over its labeled
//! positives. Kernels are resolved to concrete values (for example the RBF
//! bandwidth) before loss construction, so every loss here is a pure,
//! differentiable function of the representations; gradients flow through
//! the weighting itself.
//!
//! Losses are means over anchors and modalities, so values are comparable
//! across batch sizes and modality counts.

use crate::error::{Result, RobultError};
use crate::graph::Graph;
use crate::mat::Mat;
use crate::synthdata::{LabelData, TaskKind};
use crate::tensor::Tensor;

/// How a pseudo-positive candidate's contribution is scaled by the gap
/// between its proximity and the anchor's reference proximity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum WeightKernel {
    /// `exp(-gamma * gap^2)`; `gamma > 0`.
    Rbf { gamma: f64 },
    /// `1 - |gap| / max_batch |gap|`.
    L1,
    /// `1 - gap^2 / max_batch gap^2`.
    L2,
    /// Every candidate weighs 1 (ablation).
    Uniform,
}

/// Per-batch pairing context: positive sets, temperature, resolved kernels.
#[derive(Clone, Debug)]
pub struct PairContext {
    /// Labeled-positive candidates per anchor; the anchor itself is always
    /// present, so the set is never empty.
    pub labeled_pos: Vec<Vec<usize>>,
    /// Pseudo-positive candidates per anchor; disjoint from `labeled_pos`
    /// and never contains the anchor.
    pub pseudo_pos: Vec<Vec<usize>>,
    pub tau: f64,
    /// One resolved kernel per modality.
    pub kernels: Vec<WeightKernel>,
    /// When set (for example 0.25), pseudo candidates whose weight falls
    /// below this batch quantile are dropped and the per-anchor
    /// normalization shrinks accordingly.
    pub weight_floor_quantile: Option<f64>,
}

impl PairContext {
    pub fn new(
        labeled: &[bool],
        classes: &[Option<usize>],
        tau: f64,
        kernels: Vec<WeightKernel>,
        weight_floor_quantile: Option<f64>,
    ) -> Result<PairContext> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(RobultError::Config(format!(
                "temperature must be positive and finite, got {tau}"
            )));
        }
        if let Some(q) = weight_floor_quantile {
            if !(0.0..1.0).contains(&q) {
                return Err(RobultError::Config(format!(
                    "weight quantile {q} outside [0, 1)"
                )));
            }
        }
        for k in &kernels {
            if let WeightKernel::Rbf { gamma } = k {
                if !(*gamma > 0.0) || !gamma.is_finite() {
                    return Err(RobultError::Config(format!(
                        "rbf bandwidth must be positive and finite, got {gamma}"
                    )));
                }
            }
        }
        let (labeled_pos, pseudo_pos) = build_positive_sets(labeled, classes)?;
        if labeled_pos.len() < 2 {
            return Err(RobultError::BatchTooSmall(labeled_pos.len()));
        }
        Ok(PairContext {
            labeled_pos,
            pseudo_pos,
            tau,
            kernels,
            weight_floor_quantile,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.labeled_pos.len()
    }
}

/// Split each anchor's batch into labeled positives and pseudo positives.
///
/// `classes[j]` is the anchor class of row `j`: its label's class when
/// labeled, otherwise its pseudo class (or `None` when pseudo-labeling is
/// disabled, in which case the row pairs positively with nothing but
/// itself). A pair is a labeled positive when both rows are labeled with the
/// same class; the anchor's own pair is always a labeled positive. A pair is
/// a pseudo positive when the classes match but at least one side is
/// unlabeled.
pub fn build_positive_sets(
    labeled: &[bool],
    classes: &[Option<usize>],
) -> Result<(Vec<Vec<usize>>, Vec<Vec<usize>>)> {
    if labeled.len() != classes.len() {
        return Err(RobultError::Contract(format!(
            "labeled mask has {} rows, classes {}",
            labeled.len(),
            classes.len()
        )));
    }
    for (j, (&l, c)) in labeled.iter().zip(classes).enumerate() {
        if l && c.is_none() {
            return Err(RobultError::Contract(format!(
                "row {j} is labeled but has no class"
            )));
        }
    }
    let b = labeled.len();
    let mut labeled_pos = vec![Vec::new(); b];
    let mut pseudo_pos = vec![Vec::new(); b];
    for j in 0..b {
        for k in 0..b {
            if k == j {
                labeled_pos[j].push(j);
                continue;
            }
            let same_class = match (classes[j], classes[k]) {
                (Some(a), Some(b)) => a == b,
                _ => false,
            };
            if !same_class {
                continue;
            }
            if labeled[j] && labeled[k] {
                labeled_pos[j].push(k);
            } else {
                pseudo_pos[j].push(k);
            }
        }
    }
    Ok((labeled_pos, pseudo_pos))
}

/// Scaled-exponential proximity of two representations: `exp(<s, z> / tau)`.
/// Callers pass unit-norm rows; the dot product itself is not re-normalized.
pub fn proximity(s: &[f64], z: &[f64], tau: f64) -> Result<f64> {
    if s.len() != z.len() {
        return Err(RobultError::Dimension {
            op: "proximity",
            lhs: vec![s.len()],
            rhs: vec![z.len()],
        });
    }
    if !(tau > 0.0) {
        return Err(RobultError::Config(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    let dot: f64 = s.iter().zip(z).map(|(a, b)| a * b).sum();
    Ok((dot / tau).exp())
}

/// Row-stochastic proximity matrix: `v[j][k]` is the softmax over `k` of
/// `<s_j, z_k> / tau`, computed with the usual max shift.
pub fn v_matrix(s: &Mat, z: &Mat, tau: f64) -> Result<Mat> {
    if s.rows != z.rows || s.cols != z.cols {
        return Err(RobultError::Dimension {
            op: "v_matrix",
            lhs: vec![s.rows, s.cols],
            rhs: vec![z.rows, z.cols],
        });
    }
    if s.rows < 2 {
        return Err(RobultError::BatchTooSmall(s.rows));
    }
    if !(tau > 0.0) {
        return Err(RobultError::Config(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    let b = s.rows;
    let mut out = Mat::zeros(b, b);
    let mut logits = vec![0.0; b];
    for j in 0..b {
        let sj = s.row(j);
        for k in 0..b {
            let dot: f64 = sj.iter().zip(z.row(k)).map(|(a, b)| a * b).sum();
            logits[k] = dot / tau;
        }
        let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = logits.iter().map(|l| (l - mx).exp()).sum();
        for k in 0..b {
            out.set(j, k, (logits[k] - mx).exp() / denom);
        }
    }
    Ok(out)
}

/// Mean proximity of an anchor over its labeled-positive set.
pub fn reference_proximity(phi_row: &[f64], positives: &[usize]) -> Result<f64> {
    if positives.is_empty() {
        return Err(RobultError::Contract(
            "reference proximity over an empty positive set".into(),
        ));
    }
    if let Some(&bad) = positives.iter().find(|&&k| k >= phi_row.len()) {
        return Err(RobultError::Contract(format!(
            "positive index {bad} out of range for {} candidates",
            phi_row.len()
        )));
    }
    Ok(positives.iter().map(|&k| phi_row[k]).sum::<f64>() / positives.len() as f64)
}

/// Weight of one pseudo-positive candidate given the anchor's reference
/// proximity. For the l1/l2 kernels, `batch_max_dist` is the anchor's
/// largest distance over the batch (in the kernel's own distance measure);
/// a candidate sitting at that maximum weighs exactly 0, one at the
/// reference weighs exactly 1.
pub fn pair_weight(
    phi_ref: f64,
    phi_cand: f64,
    kernel: WeightKernel,
    batch_max_dist: f64,
) -> Result<f64> {
    let gap = phi_cand - phi_ref;
    let w = match kernel {
        WeightKernel::Uniform => 1.0,
        WeightKernel::Rbf { gamma } => {
            if !(gamma > 0.0) || !gamma.is_finite() {
                return Err(RobultError::Config(format!(
                    "rbf bandwidth must be positive and finite, got {gamma}"
                )));
            }
            (-gamma * gap * gap).exp()
        }
        WeightKernel::L1 => {
            if batch_max_dist < 0.0 {
                return Err(RobultError::Contract(format!(
                    "negative batch max distance {batch_max_dist}"
                )));
            }
            if batch_max_dist == 0.0 {
                1.0
            } else {
                (1.0 - gap.abs() / batch_max_dist).clamp(0.0, 1.0)
            }
        }
        WeightKernel::L2 => {
            if batch_max_dist < 0.0 {
                return Err(RobultError::Contract(format!(
                    "negative batch max distance {batch_max_dist}"
                )));
            }
            if batch_max_dist == 0.0 {
                1.0
            } else {
                (1.0 - gap * gap / batch_max_dist).clamp(0.0, 1.0)
            }
        }
    };
    Ok(w)
}

/// RBF bandwidth from the batch: `1 / (2 var(phi over labeled positives) +
/// 1e-8)`, with the population variance taken over every labeled anchor's
/// labeled-positive proximities. When the batch has no labeled anchors the
/// self-pair proximities stand in.
pub fn auto_rbf_gamma(
    s: &Mat,
    z: &Mat,
    labeled: &[bool],
    labeled_pos: &[Vec<usize>],
    tau: f64,
) -> Result<f64> {
    let mut phis = Vec::new();
    for j in 0..s.rows {
        if labeled[j] {
            for &k in &labeled_pos[j] {
                phis.push(proximity(s.row(j), z.row(k), tau)?);
            }
        }
    }
    if phis.is_empty() {
        for j in 0..s.rows {
            phis.push(proximity(s.row(j), z.row(j), tau)?);
        }
    }
    let n = phis.len() as f64;
    let mean = phis.iter().sum::<f64>() / n;
    let var = phis.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / n;
    Ok(1.0 / (2.0 * var + 1e-8))
}

/// The two contrastive terms plus inspection handles into the graph.
pub struct PuParts {
    /// Labeled-positive contrastive term, 1x1, non-negative.
    pub lb: Tensor,
    /// Weighted pseudo-positive term, 1x1, non-negative.
    pub ulb: Tensor,
    /// Per-modality candidate weight matrices (None for the uniform kernel).
    pub weights: Vec<Option<Tensor>>,
    /// Per-modality log proximity-softmax matrices.
    pub logv: Vec<Tensor>,
}

fn constant(shape: &[usize], values: Vec<f64>) -> Result<Tensor> {
    Tensor::from_vec(shape, values)
}

/// Build both contrastive terms in-graph. `s` and each `z[i]` are `[B, d]`
/// with unit-norm rows; gradients flow through the candidate weights.
pub fn loss_pu_graph(g: &mut Graph, s: &Tensor, z: &[Tensor], ctx: &PairContext) -> Result<PuParts> {
    let b = ctx.batch_size();
    let m = z.len();
    if m == 0 {
        return Err(RobultError::Contract("no modality representations".into()));
    }
    if ctx.kernels.len() != m {
        return Err(RobultError::Contract(format!(
            "{} kernels for {m} modalities",
            ctx.kernels.len()
        )));
    }
    if s.rows() != b {
        return Err(RobultError::Dimension {
            op: "loss_pu",
            lhs: vec![b],
            rhs: s.shape(),
        });
    }
    for zi in z {
        if zi.shape() != s.shape() {
            return Err(RobultError::Dimension {
                op: "loss_pu",
                lhs: s.shape(),
                rhs: zi.shape(),
            });
        }
    }

    // Per-anchor averaging coefficients, signs folded in so both terms come
    // out non-negative.
    let norm = 1.0 / (m as f64 * b as f64);
    let mut c_lb = vec![0.0; b * b];
    for (j, set) in ctx.labeled_pos.iter().enumerate() {
        for &k in set {
            c_lb[j * b + k] = -norm / set.len() as f64;
        }
    }
    let c_lb = constant(&[b, b], c_lb)?;
    let mut ref_avg = vec![0.0; b * b];
    for (j, set) in ctx.labeled_pos.iter().enumerate() {
        for &k in set {
            ref_avg[j * b + k] = 1.0 / set.len() as f64;
        }
    }
    let ref_avg = constant(&[b, b], ref_avg)?;
    let ones_col = constant(&[b, 1], vec![1.0; b])?;

    let mut lb_total: Option<Tensor> = None;
    let mut ulb_total: Option<Tensor> = None;
    let mut weights = Vec::with_capacity(m);
    let mut logvs = Vec::with_capacity(m);

    for (i, zi) in z.iter().enumerate() {
        let zt = g.transpose(zi)?;
        let p = g.matmul(s, &zt)?;
        let p = g.scale(&p, 1.0 / ctx.tau)?;
        let logv = g.log_softmax_rows(&p)?;

        let lb_i = {
            let picked = g.mul(&logv, &c_lb)?;
            g.sum_all(&picked)?
        };
        lb_total = Some(match lb_total {
            None => lb_i,
            Some(acc) => g.add(&acc, &lb_i)?,
        });

        let has_pseudo = ctx.pseudo_pos.iter().any(|set| !set.is_empty());
        let w_i = if !has_pseudo || matches!(ctx.kernels[i], WeightKernel::Uniform) {
            None
        } else {
            let phi = g.exp(&p)?;
            let phi_ref = {
                let picked = g.mul(&phi, &ref_avg)?;
                g.matmul(&picked, &ones_col)?
            };
            let phi_ref_wide = g.expand_cols(&phi_ref, b)?;
            let gap = g.sub(&phi, &phi_ref_wide)?;
            let w = match ctx.kernels[i] {
                WeightKernel::Rbf { gamma } => {
                    let sq = g.square(&gap)?;
                    let scaled = g.scale(&sq, -gamma)?;
                    g.exp(&scaled)?
                }
                WeightKernel::L1 | WeightKernel::L2 => {
                    let dist = if matches!(ctx.kernels[i], WeightKernel::L1) {
                        g.abs(&gap)?
                    } else {
                        g.square(&gap)?
                    };
                    let dmax = g.row_max(&dist)?;
                    // Rows whose distances are all exactly zero divide by 1
                    // instead; their numerators are zero so the weight is 1.
                    let fix: Vec<f64> = dmax
                        .values_vec()
                        .iter()
                        .map(|&v| if v == 0.0 { 1.0 } else { 0.0 })
                        .collect();
                    let fix = constant(&[b, 1], fix)?;
                    let denom = g.add(&dmax, &fix)?;
                    let denom_wide = g.expand_cols(&denom, b)?;
                    let scaled = g.div(&dist, &denom_wide)?;
                    let ones = constant(&[b, b], vec![1.0; b * b])?;
                    g.sub(&ones, &scaled)?
                }
                WeightKernel::Uniform => unreachable!(),
            };
            Some(w)
        };

        // Pseudo-candidate coefficients; the quantile filter inspects the
        // already-computed weight values and shrinks the per-anchor sets.
        let mut pseudo_sets: Vec<Vec<usize>> = ctx.pseudo_pos.clone();
        if let (Some(q), Some(w)) = (ctx.weight_floor_quantile, w_i.as_ref()) {
            let wv = w.values_vec();
            let mut candidates: Vec<f64> = Vec::new();
            for (j, set) in pseudo_sets.iter().enumerate() {
                for &k in set {
                    candidates.push(wv[j * b + k]);
                }
            }
            if !candidates.is_empty() {
                candidates.sort_by(|a, b| a.partial_cmp(b).expect("weights are finite"));
                let cut = ((candidates.len() as f64 * q).floor() as usize)
                    .min(candidates.len() - 1);
                let floor = candidates[cut];
                for (j, set) in pseudo_sets.iter_mut().enumerate() {
                    set.retain(|&k| wv[j * b + k] >= floor);
                }
            }
        }
        let mut c_ulb = vec![0.0; b * b];
        for (j, set) in pseudo_sets.iter().enumerate() {
            for &k in set {
                c_ulb[j * b + k] = -norm / set.len() as f64;
            }
        }
        let c_ulb = constant(&[b, b], c_ulb)?;

        let ulb_i = {
            let weighted = match &w_i {
                Some(w) => g.mul(w, &logv)?,
                None => logv.clone(),
            };
            let picked = g.mul(&weighted, &c_ulb)?;
            g.sum_all(&picked)?
        };
        ulb_total = Some(match ulb_total {
            None => ulb_i,
            Some(acc) => g.add(&acc, &ulb_i)?,
        });

        weights.push(w_i);
        logvs.push(logv);
    }

    Ok(PuParts {
        lb: lb_total.expect("at least one modality"),
        ulb: ulb_total.expect("at least one modality"),
        weights,
        logv: logvs,
    })
}

/// Latent reconstruction loss: `mean_i mean_rows (1 - <h~, h>^2)` with both
/// sides row-normalized inside, so the value lives in `[0, 1]` and is
/// invariant to a sign flip of any reconstruction.
pub fn loss_rec_graph(g: &mut Graph, h: &[Tensor], h_tilde: &[Tensor]) -> Result<Tensor> {
    if h.is_empty() || h.len() != h_tilde.len() {
        return Err(RobultError::Contract(format!(
            "{} projections vs {} reconstructions",
            h.len(),
            h_tilde.len()
        )));
    }
    let b = h[0].rows();
    let m = h.len();
    let mut total: Option<Tensor> = None;
    for (hi, ti) in h.iter().zip(h_tilde) {
        if hi.shape() != ti.shape() {
            return Err(RobultError::Dimension {
                op: "loss_rec",
                lhs: hi.shape(),
                rhs: ti.shape(),
            });
        }
        let hn = g.l2_normalize_rows(hi)?;
        let tn = g.l2_normalize_rows(ti)?;
        let prod = g.mul(&hn, &tn)?;
        let dots = g.row_sum(&prod)?;
        let sq = g.square(&dots)?;
        let neg_sq = g.scale(&sq, -1.0)?;
        let gap = g.add_scalar(&neg_sq, 1.0)?;
        let sum = g.sum_all(&gap)?;
        total = Some(match total {
            None => sum,
            Some(acc) => g.add(&acc, &sum)?,
        });
    }
    g.scale(&total.expect("non-empty"), 1.0 / (m as f64 * b as f64))
}

/// Supervised task loss over the labeled rows, averaged across all heads
/// (per-branch and fused alike). Classification: cross-entropy; regression:
/// mean absolute error. Returns the loss and the labeled-row count; with
/// zero labeled rows the loss is a constant 0.
pub fn loss_sup_graph(
    g: &mut Graph,
    head_logits: &[Tensor],
    labels: &LabelData,
    labeled: &[bool],
    task: TaskKind,
) -> Result<(Tensor, usize)> {
    if head_logits.is_empty() {
        return Err(RobultError::Contract("no prediction heads".into()));
    }
    let b = labeled.len();
    if labels.len() != b {
        return Err(RobultError::Contract(format!(
            "{} labels for {b} rows",
            labels.len()
        )));
    }
    let labeled_count = labeled.iter().filter(|&&l| l).count();
    if labeled_count == 0 {
        return Ok((Tensor::scalar(0.0), 0));
    }
    let heads = head_logits.len() as f64;
    let norm = 1.0 / (labeled_count as f64 * heads);

    let mut total: Option<Tensor> = None;
    match (task, labels) {
        (TaskKind::Classification { classes }, LabelData::Classes(ys)) => {
            if let Some(&bad) = ys.iter().find(|&&y| y >= classes) {
                return Err(RobultError::Contract(format!(
                    "label {bad} out of range for {classes} classes"
                )));
            }
            let mut pick = vec![0.0; b * classes];
            for j in 0..b {
                if labeled[j] {
                    pick[j * classes + ys[j]] = -norm;
                }
            }
            let pick = constant(&[b, classes], pick)?;
            for logits in head_logits {
                if logits.shape() != vec![b, classes] {
                    return Err(RobultError::Dimension {
                        op: "loss_sup",
                        lhs: vec![b, classes],
                        rhs: logits.shape(),
                    });
                }
                let logp = g.log_softmax_rows(logits)?;
                let picked = g.mul(&logp, &pick)?;
                let term = g.sum_all(&picked)?;
                total = Some(match total {
                    None => term,
                    Some(acc) => g.add(&acc, &term)?,
                });
            }
        }
        (TaskKind::Regression, LabelData::Values(ys)) => {
            let target = constant(&[b, 1], ys.clone())?;
            let mask: Vec<f64> = labeled.iter().map(|&l| if l { norm } else { 0.0 }).collect();
            let mask = constant(&[b, 1], mask)?;
            for pred in head_logits {
                if pred.shape() != vec![b, 1] {
                    return Err(RobultError::Dimension {
                        op: "loss_sup",
                        lhs: vec![b, 1],
                        rhs: pred.shape(),
                    });
                }
                let gap = g.sub(pred, &target)?;
                let diff = g.abs(&gap)?;
                let masked = g.mul(&diff, &mask)?;
                let term = g.sum_all(&masked)?;
                total = Some(match total {
                    None => term,
                    Some(acc) => g.add(&acc, &term)?,
                });
            }
        }
        _ => {
            return Err(RobultError::Contract(
                "label kind does not match the task".into(),
            ));
        }
    }
    Ok((total.expect("at least one head"), labeled_count))
}

/// Map a continuous target in [-3, 3] to its discrete class, rounding halves
/// away from zero; out-of-range values clamp to the endpoints.
pub fn discretize_labels(y: f64) -> i64 {
    y.clamp(-3.0, 3.0).round() as i64
}

/// Zero-based class index of a discretized target (7 classes, -3 maps to 0).
pub fn discrete_class_index(y: f64) -> usize {
    (discretize_labels(y) + 3) as usize
}

/// Two multilabel rows pair positively only when they share all the same
/// labels (set equality; order and duplicates are irrelevant).
pub fn multilabel_positive(a: &[usize], b: &[usize]) -> bool {
    let canon = |v: &[usize]| {
        let mut s = v.to_vec();
        s.sort_unstable();
        s.dedup();
        s
    };
    canon(a) == canon(b)
}

/// Anchor classes for pair building: the label's class when labeled,
/// otherwise the hard argmax pseudo class from the fused scores (or `None`
/// when pseudo-labeling is disabled). Regression targets and predictions go
/// through [`discrete_class_index`].
pub fn resolve_anchor_classes(
    labels: &LabelData,
    labeled: &[bool],
    fused_scores: &Mat,
    task: TaskKind,
    use_pseudo: bool,
) -> Result<Vec<Option<usize>>> {
    let b = labeled.len();
    if labels.len() != b || fused_scores.rows != b {
        return Err(RobultError::Contract(format!(
            "inconsistent batch: {} labels, {} score rows, {b} mask rows",
            labels.len(),
            fused_scores.rows
        )));
    }
    let mut out = Vec::with_capacity(b);
    for j in 0..b {
        let class = if labeled[j] {
            Some(match (task, labels) {
                (TaskKind::Classification { .. }, LabelData::Classes(ys)) => ys[j],
                (TaskKind::Regression, LabelData::Values(ys)) => discrete_class_index(ys[j]),
                _ => {
                    return Err(RobultError::Contract(
                        "label kind does not match the task".into(),
                    ))
                }
            })
        } else if use_pseudo {
            Some(match task {
                TaskKind::Classification { classes } => {
                    if fused_scores.cols != classes {
                        return Err(RobultError::Dimension {
                            op: "pseudo_labels",
                            lhs: vec![b, classes],
                            rhs: vec![fused_scores.rows, fused_scores.cols],
                        });
                    }
                    let row = fused_scores.row(j);
                    let mut best = 0;
                    for k in 1..classes {
                        if row[k] > row[best] {
                            best = k;
                        }
                    }
                    best
                }
                TaskKind::Regression => discrete_class_index(fused_scores.get(j, 0)),
            })
        } else {
            None
        };
        out.push(class);
    }
    Ok(out)
}

/// Scalar view of one training step's losses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossReport {
    pub sup: f64,
    pub rec: f64,
    pub lb: f64,
    pub ulb: f64,
    pub labeled_rows: usize,
}

impl LossReport {
    pub fn total(&self) -> f64 {
        self.sup + self.rec + self.lb + self.ulb
    }

    pub fn check_finite(&self) -> Result<()> {
        for (name, v) in [
            ("supervised loss", self.sup),
            ("reconstruction loss", self.rec),
            ("labeled contrastive loss", self.lb),
            ("pseudo contrastive loss", self.ulb),
        ] {
            if !v.is_finite() {
                return Err(RobultError::NonFinite(name.into()));
            }
        }
        Ok(())
    }
}
