//! The multimodal model: per-modality projectors `f^i`, a fusion projector
//! `f^0` over the concatenated raw inputs, a two-layer redundancy head `g^0`
//! shared by every modality and the fused path (weight sharing is the point:
//! its outputs live in one comparable space), one-layer unique heads `g^i`,
//! two-layer latent reconstructors `r^i` fed with `[U^i | Z^i]`, and a task
//! head `c` shared by the fused path and every branch.
//!
//! Inference with all modalities present uses the fused path; with a subset,
//! it averages the available branch predictions, never touching masked
//! (NaN-poisoned) inputs.

use std::io::Read;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, RobultError};
use crate::graph::Graph;
use crate::mat::Mat;
use crate::synthdata::{Batch, TaskKind};
use crate::tensor::Tensor;

/// Fully-connected layer, weight `[in, out]`, bias `[1, out]`.
#[derive(Debug)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    fn init(input: usize, output: usize, rng: &mut ChaCha8Rng) -> Linear {
        let bound = 1.0 / (input as f64).sqrt();
        let w: Vec<f64> = (0..input * output).map(|_| rng.gen_range(-bound..bound)).collect();
        let b: Vec<f64> = (0..output).map(|_| rng.gen_range(-bound..bound)).collect();
        let weight = Tensor::from_vec(&[input, output], w).expect("sized by construction");
        let bias = Tensor::from_vec(&[1, output], b).expect("sized by construction");
        weight.set_requires_grad(true);
        bias.set_requires_grad(true);
        Linear { weight, bias }
    }

    pub fn forward(&self, g: &mut Graph, x: &Tensor) -> Result<Tensor> {
        let xw = g.matmul(x, &self.weight)?;
        g.add_row_bias(&xw, &self.bias)
    }

    pub fn params(&self) -> Vec<Tensor> {
        vec![self.weight.clone(), self.bias.clone()]
    }

    pub fn param_count(&self) -> usize {
        self.weight.numel() + self.bias.numel()
    }
}

/// Two fully-connected layers with a ReLU in the middle.
#[derive(Debug)]
pub struct TwoLayer {
    pub first: Linear,
    pub second: Linear,
}

impl TwoLayer {
    fn init(input: usize, hidden: usize, output: usize, rng: &mut ChaCha8Rng) -> TwoLayer {
        TwoLayer {
            first: Linear::init(input, hidden, rng),
            second: Linear::init(hidden, output, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: &Tensor) -> Result<Tensor> {
        let h = self.first.forward(g, x)?;
        let h = g.relu(&h)?;
        self.second.forward(g, &h)
    }

    pub fn params(&self) -> Vec<Tensor> {
        let mut p = self.first.params();
        p.extend(self.second.params());
        p
    }

    pub fn param_count(&self) -> usize {
        self.first.param_count() + self.second.param_count()
    }
}

#[derive(Clone, Debug)]
pub struct ModelSpec {
    pub raw_dims: Vec<usize>,
    pub latent_dim: usize,
    pub task: TaskKind,
    pub seed: u64,
}

impl ModelSpec {
    pub fn modalities(&self) -> usize {
        self.raw_dims.len()
    }
}

/// Which parts of the forward pass a training variant needs.
#[derive(Clone, Copy, Debug)]
pub struct ForwardPlan {
    /// Compute unique heads and feed `Z + U` to the branch task head.
    /// When off, branches predict from `Z` alone.
    pub with_unique: bool,
    /// Compute latent reconstructions (requires `with_unique`).
    pub with_reconstruction: bool,
}

impl ForwardPlan {
    pub fn full() -> ForwardPlan {
        ForwardPlan {
            with_unique: true,
            with_reconstruction: true,
        }
    }
}

/// Everything one forward pass produces. `z`/`s` rows are unit-norm.
#[derive(Debug)]
pub struct ForwardOutputs {
    /// Projected modality representations `H^i`, one per modality.
    pub h: Vec<Tensor>,
    /// Fused projection `H^0`.
    pub h0: Tensor,
    /// Redundancy-head outputs per modality, `Z^i = g0(H^i)`.
    pub z: Vec<Tensor>,
    /// Redundancy-head output of the fused path, `S = g0(H^0)`.
    pub s: Tensor,
    /// Unique-head outputs `U^i` (empty if the plan skips them).
    pub u: Vec<Tensor>,
    /// Latent reconstructions of `H^i` (empty if the plan skips them).
    pub h_tilde: Vec<Tensor>,
    /// Task-head outputs per branch.
    pub branch_logits: Vec<Tensor>,
    /// Task-head output of the fused path.
    pub fused_logits: Tensor,
}

#[derive(Debug)]
pub struct RobultModel {
    pub spec: ModelSpec,
    pub projectors: Vec<Linear>,
    pub fusion: Linear,
    pub shared_head: TwoLayer,
    pub unique_heads: Vec<Linear>,
    pub reconstructors: Vec<TwoLayer>,
    pub classifier: Linear,
}

/// Parameter groups used by selective-gradient training. `pu` follows the
/// training-schedule prose (projectors, fusion, shared head); `pu_wide` is
/// the alternative reading that also re-enables the unique heads.
pub struct ParameterGroups {
    pub all: Vec<Tensor>,
    pub unique: Vec<Tensor>,
    pub pu: Vec<Tensor>,
    pub pu_wide: Vec<Tensor>,
    pub classifier: Vec<Tensor>,
}

impl RobultModel {
    pub fn new(spec: ModelSpec) -> Result<RobultModel> {
        if spec.raw_dims.len() < 2 {
            return Err(RobultError::Config(format!(
                "need at least 2 modalities, got {}",
                spec.raw_dims.len()
            )));
        }
        if spec.latent_dim == 0 || spec.raw_dims.iter().any(|&d| d == 0) {
            return Err(RobultError::Config("zero-width layer requested".into()));
        }
        let d = spec.latent_dim;
        let out = spec.task.output_width();
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

        let projectors: Vec<Linear> = spec
            .raw_dims
            .iter()
            .map(|&raw| Linear::init(raw, d, &mut rng))
            .collect();
        let fusion = Linear::init(spec.raw_dims.iter().sum(), d, &mut rng);
        let shared_head = TwoLayer::init(d, d, d, &mut rng);
        let unique_heads: Vec<Linear> =
            (0..spec.raw_dims.len()).map(|_| Linear::init(d, d, &mut rng)).collect();
        let reconstructors: Vec<TwoLayer> =
            (0..spec.raw_dims.len()).map(|_| TwoLayer::init(2 * d, d, d, &mut rng)).collect();
        let classifier = Linear::init(d, out, &mut rng);

        Ok(RobultModel {
            spec,
            projectors,
            fusion,
            shared_head,
            unique_heads,
            reconstructors,
            classifier,
        })
    }

    pub fn modalities(&self) -> usize {
        self.spec.raw_dims.len()
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        if batch.m() != self.modalities() {
            return Err(RobultError::Dimension {
                op: "forward",
                lhs: vec![self.modalities()],
                rhs: vec![batch.m()],
            });
        }
        for (i, mat) in batch.modalities.iter().enumerate() {
            if mat.cols != self.spec.raw_dims[i] || mat.rows != batch.size() {
                return Err(RobultError::Dimension {
                    op: "forward",
                    lhs: vec![batch.size(), self.spec.raw_dims[i]],
                    rhs: vec![mat.rows, mat.cols],
                });
            }
        }
        Ok(())
    }

    /// Redundancy-head output for one projected representation: two layers,
    /// ReLU between, rows normalized to the unit sphere.
    fn redundancy(&self, g: &mut Graph, h: &Tensor) -> Result<Tensor> {
        let raw = self.shared_head.forward(g, h)?;
        g.l2_normalize_rows(&raw)
    }

    /// Unique-head output: one layer, rows normalized.
    fn uniqueness(&self, g: &mut Graph, h: &Tensor, i: usize) -> Result<Tensor> {
        let raw = self.unique_heads[i].forward(g, h)?;
        g.l2_normalize_rows(&raw)
    }

    /// Latent reconstruction from the unique and redundant parts.
    pub fn reconstruct(&self, g: &mut Graph, u: &Tensor, z: &Tensor, i: usize) -> Result<Tensor> {
        if i >= self.modalities() {
            return Err(RobultError::Contract(format!(
                "reconstruct: modality {i} out of range for {}",
                self.modalities()
            )));
        }
        let uz = g.concat_cols(u, z)?;
        self.reconstructors[i].forward(g, &uz)
    }

    /// One forward pass over a fully-available batch, producing every
    /// representation the losses need.
    pub fn forward_all(&self, g: &mut Graph, batch: &Batch, plan: ForwardPlan) -> Result<ForwardOutputs> {
        self.check_batch(batch)?;
        if batch.size() == 0 {
            return Err(RobultError::BatchTooSmall(0));
        }
        if !batch.all_available() {
            return Err(RobultError::Contract(
                "training forward needs every modality present; mask views are evaluation-only"
                    .into(),
            ));
        }

        let m = self.modalities();
        let mut h = Vec::with_capacity(m);
        let mut z = Vec::with_capacity(m);
        for i in 0..m {
            let x = batch.modalities[i].to_tensor();
            let hi = self.projectors[i].forward(g, &x)?;
            let zi = self.redundancy(g, &hi)?;
            h.push(hi);
            z.push(zi);
        }

        let x_all = self.concat_inputs(batch)?;
        let h0 = self.fusion.forward(g, &x_all)?;
        let s_rep = self.redundancy(g, &h0)?;

        let mut u = Vec::new();
        let mut h_tilde = Vec::new();
        if plan.with_unique {
            for i in 0..m {
                u.push(self.uniqueness(g, &h[i], i)?);
            }
            if plan.with_reconstruction {
                for i in 0..m {
                    h_tilde.push(self.reconstruct(g, &u[i], &z[i], i)?);
                }
            }
        }

        let mut branch_logits = Vec::with_capacity(m);
        for i in 0..m {
            let rep = if plan.with_unique {
                g.add(&z[i], &u[i])?
            } else {
                z[i].clone()
            };
            branch_logits.push(self.classifier.forward(g, &rep)?);
        }
        let fused_logits = self.classifier.forward(g, &s_rep)?;

        Ok(ForwardOutputs {
            h,
            h0,
            z,
            s: s_rep,
            u,
            h_tilde,
            branch_logits,
            fused_logits,
        })
    }

    fn concat_inputs(&self, batch: &Batch) -> Result<Tensor> {
        let b = batch.size();
        let total: usize = self.spec.raw_dims.iter().sum();
        let mut fused_rows = Vec::with_capacity(b * total);
        for s in 0..b {
            for mat in &batch.modalities {
                fused_rows.extend_from_slice(mat.row(s));
            }
        }
        Tensor::from_vec(&[b, total], fused_rows)
    }

    /// Redundancy representation of the fused all-modality input. Callers
    /// must ensure every modality is present for every sample.
    pub fn fused_redundancy(&self, g: &mut Graph, batch: &Batch) -> Result<Tensor> {
        let x_all = self.concat_inputs(batch)?;
        let h0 = self.fusion.forward(g, &x_all)?;
        self.redundancy(g, &h0)
    }

    /// Redundancy and uniqueness projections of modality `i`, kept apart.
    /// The uniqueness slot is `None` when the caller skips it. Callers
    /// must ensure modality `i` is present for every sample.
    pub fn branch_features(
        &self,
        g: &mut Graph,
        batch: &Batch,
        i: usize,
        with_unique: bool,
    ) -> Result<(Tensor, Option<Tensor>)> {
        let m = self.modalities();
        if i >= m {
            return Err(RobultError::Contract(format!(
                "branch {i} requested, model has {m} modalities"
            )));
        }
        let x = batch.modalities[i].to_tensor();
        let hi = self.projectors[i].forward(g, &x)?;
        let zi = self.redundancy(g, &hi)?;
        let ui = if with_unique {
            Some(self.uniqueness(g, &hi, i)?)
        } else {
            None
        };
        Ok((zi, ui))
    }

    /// Single-branch representation for modality `i`: the redundancy
    /// projection, plus the uniqueness projection when requested. Callers
    /// must ensure modality `i` is present for every sample.
    pub fn branch_representation(
        &self,
        g: &mut Graph,
        batch: &Batch,
        i: usize,
        with_unique: bool,
    ) -> Result<Tensor> {
        let (zi, ui) = self.branch_features(g, batch, i, with_unique)?;
        match ui {
            Some(ui) => g.add(&zi, &ui),
            None => Ok(zi),
        }
    }

    /// Predict scores for a batch using only the listed modalities. All
    /// present: fused path. Subset: mean of the available branch outputs.
    /// Masked inputs are never read.
    pub fn infer(&self, batch: &Batch, available: &[usize]) -> Result<Mat> {
        self.infer_with_routing(batch, available, true)
    }

    /// [`RobultModel::infer`] with the branch routing made explicit: when
    /// `with_unique` is false, partial-modality predictions use only the
    /// redundancy projections (matching a model trained without unique
    /// branches). Full-modality prediction is unaffected.
    pub fn infer_with_routing(
        &self,
        batch: &Batch,
        available: &[usize],
        with_unique: bool,
    ) -> Result<Mat> {
        self.check_batch(batch)?;
        let m = self.modalities();
        let mut req = available.to_vec();
        req.sort_unstable();
        req.dedup();
        if req.is_empty() {
            return Err(RobultError::Contract(
                "inference needs at least one modality".into(),
            ));
        }
        if let Some(&bad) = req.iter().find(|&&i| i >= m) {
            return Err(RobultError::Contract(format!(
                "inference requested modality {bad}, model has {m}"
            )));
        }
        for &i in &req {
            if let Some(s) = (0..batch.size()).find(|&s| !batch.available[s][i]) {
                return Err(RobultError::Contract(format!(
                    "inference requested modality {i} but sample {s} has it masked"
                )));
            }
        }

        let b = batch.size();
        let out_w = self.spec.task.output_width();
        let mut g = Graph::new();

        let scores = if req.len() == m {
            let s_rep = self.fused_redundancy(&mut g, batch)?;
            self.classifier.forward(&mut g, &s_rep)?
        } else {
            let mut acc: Option<Tensor> = None;
            for &i in &req {
                let rep = self.branch_representation(&mut g, batch, i, with_unique)?;
                let logits = self.classifier.forward(&mut g, &rep)?;
                acc = Some(match acc {
                    None => logits,
                    Some(prev) => g.add(&prev, &logits)?,
                });
            }
            let total = acc.expect("at least one modality requested");
            g.scale(&total, 1.0 / req.len() as f64)?
        };

        let out = Mat::from_vec(b, out_w, scores.values_vec())?;
        if let Some(bad) = out.data.iter().find(|v| !v.is_finite()) {
            return Err(RobultError::NonFinite(format!(
                "inference output ({bad})"
            )));
        }
        Ok(out)
    }

    /// Every parameter, in a fixed declaration order (the checkpoint layout).
    pub fn parameters(&self) -> Vec<Tensor> {
        let mut p = Vec::new();
        for f in &self.projectors {
            p.extend(f.params());
        }
        p.extend(self.fusion.params());
        p.extend(self.shared_head.params());
        for u in &self.unique_heads {
            p.extend(u.params());
        }
        for r in &self.reconstructors {
            p.extend(r.params());
        }
        p.extend(self.classifier.params());
        p
    }

    pub fn parameter_groups(&self) -> ParameterGroups {
        let mut unique = Vec::new();
        for u in &self.unique_heads {
            unique.extend(u.params());
        }
        for r in &self.reconstructors {
            unique.extend(r.params());
        }
        let mut pu = Vec::new();
        for f in &self.projectors {
            pu.extend(f.params());
        }
        pu.extend(self.fusion.params());
        pu.extend(self.shared_head.params());
        let mut pu_wide = pu.clone();
        for u in &self.unique_heads {
            pu_wide.extend(u.params());
        }
        ParameterGroups {
            all: self.parameters(),
            unique,
            pu,
            pu_wide,
            classifier: self.classifier.params(),
        }
    }

    /// Parameter count of the head family that grows with the modality
    /// count: the shared redundancy head plus every unique head and
    /// reconstructor. Affine in the number of modalities.
    pub fn head_family_param_count(&self) -> usize {
        self.shared_head.param_count()
            + self.unique_heads.iter().map(Linear::param_count).sum::<usize>()
            + self.reconstructors.iter().map(TwoLayer::param_count).sum::<usize>()
    }

    pub fn zero_grads(&self) {
        for p in self.parameters() {
            p.zero_grad();
        }
    }
}

const CKPT_MAGIC: [u8; 4] = *b"RBCK";
const CKPT_VERSION: u32 = 1;

impl RobultModel {
    /// Write a versioned flat checkpoint: header (magic, version, task,
    /// modality count, latent width, raw dims, per-tensor shapes) followed by
    /// every parameter as little-endian f64, in declaration order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        out.extend_from_slice(&CKPT_MAGIC);
        out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
        let (task_tag, classes) = match self.spec.task {
            TaskKind::Classification { classes } => (0u8, classes as u32),
            TaskKind::Regression => (1u8, 1u32),
        };
        out.push(task_tag);
        out.extend_from_slice(&classes.to_le_bytes());
        out.extend_from_slice(&(self.modalities() as u32).to_le_bytes());
        out.extend_from_slice(&(self.spec.latent_dim as u32).to_le_bytes());
        for &d in &self.spec.raw_dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        let params = self.parameters();
        out.extend_from_slice(&(params.len() as u32).to_le_bytes());
        for p in &params {
            let shape = p.shape();
            out.extend_from_slice(&(shape[0] as u32).to_le_bytes());
            out.extend_from_slice(&(shape[1] as u32).to_le_bytes());
        }
        for p in &params {
            for v in p.values().iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    /// Load a checkpoint written by [`RobultModel::save`].
    pub fn load(path: &Path) -> Result<RobultModel> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut cur = Cursor { bytes: &bytes, pos: 0 };

        if cur.take(4)? != CKPT_MAGIC {
            return Err(RobultError::CheckpointFormat("bad magic".into()));
        }
        let version = cur.u32()?;
        if version != CKPT_VERSION {
            return Err(RobultError::CheckpointVersion {
                found: version,
                expected: CKPT_VERSION,
            });
        }
        let task_tag = cur.take(1)?[0];
        let classes = cur.u32()? as usize;
        let task = match task_tag {
            0 => TaskKind::Classification { classes },
            1 => TaskKind::Regression,
            t => return Err(RobultError::CheckpointFormat(format!("unknown task tag {t}"))),
        };
        let m = cur.u32()? as usize;
        let d = cur.u32()? as usize;
        let mut raw_dims = Vec::with_capacity(m);
        for _ in 0..m {
            raw_dims.push(cur.u32()? as usize);
        }
        let model = RobultModel::new(ModelSpec {
            raw_dims,
            latent_dim: d,
            task,
            seed: 0,
        })?;

        let params = model.parameters();
        let count = cur.u32()? as usize;
        if count != params.len() {
            return Err(RobultError::CheckpointFormat(format!(
                "file declares {count} tensors, model has {}",
                params.len()
            )));
        }
        let mut shapes = Vec::with_capacity(count);
        for p in &params {
            let rows = cur.u32()? as usize;
            let cols = cur.u32()? as usize;
            if p.shape() != vec![rows, cols] {
                return Err(RobultError::CheckpointFormat(format!(
                    "tensor shape [{rows}, {cols}] does not match model {:?}",
                    p.shape()
                )));
            }
            shapes.push(rows * cols);
        }
        for (p, numel) in params.iter().zip(shapes) {
            let mut values = Vec::with_capacity(numel);
            for _ in 0..numel {
                values.push(f64::from_le_bytes(cur.take(8)?.try_into().unwrap()));
            }
            p.set_values(&values)?;
        }
        if cur.pos != bytes.len() {
            return Err(RobultError::CheckpointFormat(format!(
                "{} trailing bytes",
                bytes.len() - cur.pos
            )));
        }
        Ok(model)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(RobultError::CheckpointFormat("truncated file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
