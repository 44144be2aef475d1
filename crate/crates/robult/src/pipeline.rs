//! End-to-end runs: generate or load data, train, evaluate over modality
//! subsets, and write the report bundle (losses, metrics, diagnostics,
//! checkpoint, dataset snapshot). Every report embeds the resolved
//! configuration as `# key = value` header lines and contains no timestamps
//! or absolute paths, so identical runs produce byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::config::RunConfig;
use crate::error::{Result, RobultError};
use crate::eval::{
    alignment_uniformity, histogram_mi, task_metrics, AlignmentReport, MetricRow, MI_BINS,
};
use crate::graph::Graph;
use crate::losses::LossReport;
use crate::mat::Mat;
use crate::model::{ForwardPlan, Linear, RobultModel};
use crate::synthdata::{
    export, generate, import, mask_modalities, Batch, Dataset, LabelData, MaskPolicy, TaskKind,
};
use crate::tensor::Tensor;
use crate::training::{make_semisupervised_split, run_epoch, Adam};

/// Distance-histogram resolution in the diagnostics report.
const PAIR_DIST_BINS: usize = 10;
/// Forward passes over a whole dataset run in chunks of this many rows.
const EVAL_CHUNK: usize = 512;

/// Paths and in-memory results of one training run.
#[derive(Debug)]
pub struct ReportBundle {
    pub out_dir: PathBuf,
    pub losses_csv: PathBuf,
    pub metrics_csv: PathBuf,
    pub diagnostics_csv: PathBuf,
    pub checkpoint: PathBuf,
    pub dataset: PathBuf,
    pub config_file: PathBuf,
    pub epoch_losses: Vec<LossReport>,
    pub metrics: Vec<MetricRow>,
}

/// A named ablation: one switch away from the full method.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationVariant {
    DropSup,
    DropRec,
    DropLb,
    DropUlb,
    UniformWeights,
    DropPseudo,
    DropUnique,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 7] = [
        AblationVariant::DropSup,
        AblationVariant::DropRec,
        AblationVariant::DropLb,
        AblationVariant::DropUlb,
        AblationVariant::UniformWeights,
        AblationVariant::DropPseudo,
        AblationVariant::DropUnique,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            AblationVariant::DropSup => "drop_sup",
            AblationVariant::DropRec => "drop_rec",
            AblationVariant::DropLb => "drop_lb",
            AblationVariant::DropUlb => "drop_ulb",
            AblationVariant::UniformWeights => "uniform_weights",
            AblationVariant::DropPseudo => "drop_pseudo",
            AblationVariant::DropUnique => "drop_unique",
        }
    }

    /// Flip the one configuration switch this variant stands for.
    pub fn apply(&self, cfg: &mut RunConfig) {
        match self {
            AblationVariant::DropSup => cfg.drop_sup = true,
            AblationVariant::DropRec => cfg.drop_rec = true,
            AblationVariant::DropLb => cfg.drop_lb = true,
            AblationVariant::DropUlb => cfg.drop_ulb = true,
            AblationVariant::UniformWeights => cfg.uniform_weights = true,
            AblationVariant::DropPseudo => cfg.drop_pseudo = true,
            AblationVariant::DropUnique => cfg.drop_unique_branches = true,
        }
    }
}

impl FromStr for AblationVariant {
    type Err = RobultError;

    fn from_str(s: &str) -> Result<AblationVariant> {
        AblationVariant::ALL
            .iter()
            .find(|v| v.name() == s)
            .copied()
            .ok_or_else(|| {
                let names: Vec<&str> = AblationVariant::ALL.iter().map(|v| v.name()).collect();
                RobultError::Config(format!(
                    "unknown ablation variant \"{s}\"; expected one of {}",
                    names.join(", ")
                ))
            })
    }
}

/// Requested evaluation masking, parsed from strings like `full`,
/// `single:2`, `pair:1,3`, `random:0.5`, or `all` (modalities are 1-based).
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EvalMask {
    Full,
    Single(usize),
    Pair(usize, usize),
    Random(f64),
    All,
}

impl FromStr for EvalMask {
    type Err = RobultError;

    fn from_str(s: &str) -> Result<EvalMask> {
        let bad = |msg: String| RobultError::Config(msg);
        let one_based = |part: &str| -> Result<usize> {
            let v: usize = part
                .trim()
                .parse()
                .map_err(|_| bad(format!("mask index \"{part}\" is not an integer")))?;
            if v == 0 {
                return Err(bad("mask indices are 1-based".into()));
            }
            Ok(v - 1)
        };
        match s {
            "full" => return Ok(EvalMask::Full),
            "all" => return Ok(EvalMask::All),
            _ => {}
        }
        if let Some(rest) = s.strip_prefix("single:") {
            return Ok(EvalMask::Single(one_based(rest)?));
        }
        if let Some(rest) = s.strip_prefix("pair:") {
            let (a, b) = rest.split_once(',').ok_or_else(|| {
                bad(format!("pair mask needs two indices, got \"{rest}\""))
            })?;
            let (a, b) = (one_based(a)?, one_based(b)?);
            if a == b {
                return Err(bad("pair mask needs two distinct modalities".into()));
            }
            return Ok(EvalMask::Pair(a.min(b), a.max(b)));
        }
        if let Some(rest) = s.strip_prefix("random:") {
            let p: f64 = rest
                .trim()
                .parse()
                .map_err(|_| bad(format!("mask probability \"{rest}\" is not a number")))?;
            if !(0.0..=1.0).contains(&p) {
                return Err(bad(format!("mask probability {p} outside [0, 1]")));
            }
            return Ok(EvalMask::Random(p));
        }
        Err(bad(format!(
            "unknown mask \"{s}\"; expected full, single:i, pair:i,j, random:p, or all"
        )))
    }
}

/// All non-empty modality subsets, ordered by size then lexicographically.
pub fn all_subsets(m: usize) -> Vec<Vec<usize>> {
    let mut subsets: Vec<Vec<usize>> = (1u32..(1 << m))
        .map(|bits| (0..m).filter(|i| bits >> i & 1 == 1).collect())
        .collect();
    subsets.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    subsets
}

/// Report tag for a modality subset: `full` for all of them, otherwise
/// 1-based names joined with `+`, for example `m1+m3`.
pub fn subset_tag(subset: &[usize], m: usize) -> String {
    if subset.len() == m {
        "full".to_string()
    } else {
        subset
            .iter()
            .map(|i| format!("m{}", i + 1))
            .collect::<Vec<_>>()
            .join("+")
    }
}

fn echo_header(cfg: &RunConfig) -> String {
    let mut out = String::from("# resolved-config\n");
    for line in cfg.echo().lines() {
        out.push_str("# ");
        out.push_str(line);
        out.push('\n');
    }
    out.push_str("# end-config\n");
    out
}

/// Recover the configuration embedded in a report's header lines.
pub fn parse_echo_header(text: &str) -> Result<RunConfig> {
    let mut inside = false;
    let mut echo = String::new();
    for line in text.lines() {
        match line {
            "# resolved-config" => inside = true,
            "# end-config" => return RunConfig::parse(&echo),
            _ if inside => {
                let stripped = line.strip_prefix("# ").unwrap_or(line);
                echo.push_str(stripped);
                echo.push('\n');
            }
            _ => {}
        }
    }
    Err(RobultError::Config(
        "no resolved-config header found".into(),
    ))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

fn metrics_csv_body(rows: &[MetricRow]) -> String {
    let mut body = String::from("tag,mae,pearson_corr,binary_acc,f1_binary,f1_macro,auroc\n");
    for r in rows {
        let _ = writeln!(
            body,
            "{},{},{},{},{},{},{}",
            r.tag,
            fmt_opt(r.mae),
            fmt_opt(r.pearson_corr),
            fmt_opt(r.binary_acc),
            fmt_opt(r.f1_binary),
            fmt_opt(r.f1_macro),
            fmt_opt(r.auroc),
        );
    }
    body
}

fn losses_csv_body(reports: &[LossReport]) -> String {
    let mut body = String::from("epoch,sup,rec,lb,ulb,total\n");
    for (e, r) in reports.iter().enumerate() {
        let _ = writeln!(
            body,
            "{},{:?},{:?},{:?},{:?},{:?}",
            e + 1,
            r.sup,
            r.rec,
            r.lb,
            r.ulb,
            r.total()
        );
    }
    body
}

/// Z and S representations of every row, computed in evaluation chunks.
fn collect_representations(model: &RobultModel, ds: &Dataset) -> Result<(Vec<Mat>, Mat)> {
    let m = ds.m();
    let d = model.spec.latent_dim;
    let n = ds.n();
    let mut z = vec![Mat::zeros(n, d); m];
    let mut s = Mat::zeros(n, d);
    let no_labels = vec![false; n];
    let idx: Vec<usize> = (0..n).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let batch = ds.batch(chunk, &no_labels)?;
        let mut g = Graph::new();
        let plan = ForwardPlan {
            with_unique: false,
            with_reconstruction: false,
        };
        let out = model.forward_all(&mut g, &batch, plan)?;
        for (i, zi) in out.z.iter().enumerate() {
            let vals = Mat::from_tensor(zi);
            for (local, &global) in chunk.iter().enumerate() {
                z[i].row_mut(global).copy_from_slice(vals.row(local));
            }
        }
        let sv = Mat::from_tensor(&out.s);
        for (local, &global) in chunk.iter().enumerate() {
            s.row_mut(global).copy_from_slice(sv.row(local));
        }
    }
    Ok((z, s))
}

/// Prediction scores for the whole dataset restricted to one modality
/// subset, with optional probe head and branch routing control.
fn subset_scores(
    model: &RobultModel,
    ds: &Dataset,
    subset: &[usize],
    probe: Option<&Linear>,
    with_unique: bool,
) -> Result<Mat> {
    let n = ds.n();
    let out_w = model.spec.task.output_width();
    let mut scores = Mat::zeros(n, out_w);
    let no_labels = vec![false; n];
    let idx: Vec<usize> = (0..n).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let batch = ds.batch(chunk, &no_labels)?;
        let part = match probe {
            None => model.infer_with_routing(&batch, subset, with_unique)?,
            Some(head) => {
                let rep = subset_design(model, &batch, subset, with_unique)?;
                let mut g = Graph::new();
                let logits = head.forward(&mut g, &rep.to_tensor())?;
                Mat::from_vec(chunk.len(), out_w, logits.values_vec())?
            }
        };
        for (local, &global) in chunk.iter().enumerate() {
            scores.row_mut(global).copy_from_slice(part.row(local));
        }
    }
    Ok(scores)
}

/// Probe design rows for one evaluation subset: the fused redundancy for
/// the full set, otherwise the redundancy and uniqueness projections of
/// the subset's branches side by side. The probe is a measurement head
/// rather than the shared classifier, so it sees the branch features
/// concatenated and weights each one on its own instead of consuming
/// their sum.
fn subset_design(
    model: &RobultModel,
    batch: &Batch,
    subset: &[usize],
    with_unique: bool,
) -> Result<Mat> {
    let mut g = Graph::new();
    if subset.len() == model.modalities() {
        return Ok(Mat::from_tensor(&model.fused_redundancy(&mut g, batch)?));
    }
    let mut cols: Vec<Mat> = Vec::new();
    for &i in subset {
        let (zi, ui) = model.branch_features(&mut g, batch, i, with_unique)?;
        cols.push(Mat::from_tensor(&zi));
        if let Some(ui) = ui {
            cols.push(Mat::from_tensor(&ui));
        }
    }
    if cols.is_empty() {
        return Err(RobultError::Contract("empty modality subset".into()));
    }
    let rows = cols[0].rows;
    let width: usize = cols.iter().map(|c| c.cols).sum();
    let mut data = Vec::with_capacity(rows * width);
    for r in 0..rows {
        for c in &cols {
            data.extend_from_slice(c.row(r));
        }
    }
    Mat::from_vec(rows, width, data)
}

/// Fit a linear head for one evaluation subset on the frozen
/// representations of the labeled rows. Classification trains multinomial
/// logistic regression; regression solves ridge least squares.
fn fit_linear_probe(
    model: &RobultModel,
    ds: &Dataset,
    labeled: &[bool],
    subset: &[usize],
    with_unique: bool,
) -> Result<Linear> {
    let rows: Vec<usize> = (0..ds.n()).filter(|&j| labeled[j]).collect();
    if rows.is_empty() {
        return Err(RobultError::Contract(
            "cannot fit a probe without labeled rows".into(),
        ));
    }
    let batch = ds.batch(&rows, labeled)?;
    let x = subset_design(model, &batch, subset, with_unique)?;
    let labels = ds.labels.subset(&rows);
    match (ds.task, &labels) {
        (TaskKind::Classification { classes }, LabelData::Classes(ys)) => {
            fit_logistic(&x, ys, classes)
        }
        (TaskKind::Regression, LabelData::Values(ys)) => fit_ridge(&x, ys),
        _ => Err(RobultError::Contract(
            "label kind does not match the task".into(),
        )),
    }
}

fn fit_logistic(x: &Mat, ys: &[usize], classes: usize) -> Result<Linear> {
    let d = x.cols;
    let weight = Tensor::zeros(&[d, classes]);
    let bias = Tensor::zeros(&[1, classes]);
    weight.set_requires_grad(true);
    bias.set_requires_grad(true);
    let head = Linear { weight, bias };
    let params = head.params();
    let mut opt = Adam::new(&params, 0.1);
    let labels = LabelData::Classes(ys.to_vec());
    let all = vec![true; ys.len()];
    let xt = x.to_tensor();
    for _ in 0..300 {
        let mut g = Graph::new();
        let logits = head.forward(&mut g, &xt)?;
        let (loss, _) = crate::losses::loss_sup_graph(
            &mut g,
            &[logits],
            &labels,
            &all,
            TaskKind::Classification { classes },
        )?;
        g.backward(&loss)?;
        opt.step(&params)?;
        for p in &params {
            p.zero_grad();
        }
    }
    Ok(head)
}

fn fit_ridge(x: &Mat, ys: &[f64]) -> Result<Linear> {
    // Solve (A^T A + lambda I) w = A^T y over A = [x | 1].
    let n = x.rows;
    let d = x.cols + 1;
    let lambda = 1e-6;
    let a = |i: usize, j: usize| if j < x.cols { x.get(i, j) } else { 1.0 };
    let mut ata = vec![0.0; d * d];
    let mut aty = vec![0.0; d];
    for i in 0..n {
        for j in 0..d {
            let aij = a(i, j);
            aty[j] += aij * ys[i];
            for k in j..d {
                ata[j * d + k] += aij * a(i, k);
            }
        }
    }
    for j in 0..d {
        for k in 0..j {
            ata[j * d + k] = ata[k * d + j];
        }
        ata[j * d + j] += lambda;
    }
    let w = solve_dense(&mut ata, &mut aty, d)?;
    let weight = Tensor::from_vec(&[x.cols, 1], w[..x.cols].to_vec())?;
    let bias = Tensor::from_vec(&[1, 1], vec![w[x.cols]])?;
    Ok(Linear { weight, bias })
}

/// Gaussian elimination with partial pivoting on a dense system.
fn solve_dense(a: &mut [f64], b: &mut [f64], d: usize) -> Result<Vec<f64>> {
    for col in 0..d {
        let pivot = (col..d)
            .max_by(|&i, &j| {
                a[i * d + col]
                    .abs()
                    .partial_cmp(&a[j * d + col].abs())
                    .expect("finite pivots")
            })
            .expect("non-empty range");
        if a[pivot * d + col].abs() < 1e-12 {
            return Err(RobultError::Domain {
                op: "solve_dense",
                msg: "singular normal equations".into(),
            });
        }
        if pivot != col {
            for k in 0..d {
                a.swap(col * d + k, pivot * d + k);
            }
            b.swap(col, pivot);
        }
        let diag = a[col * d + col];
        for row in (col + 1)..d {
            let factor = a[row * d + col] / diag;
            if factor == 0.0 {
                continue;
            }
            for k in col..d {
                a[row * d + k] -= factor * a[col * d + k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut w = vec![0.0; d];
    for col in (0..d).rev() {
        let mut acc = b[col];
        for k in (col + 1)..d {
            acc -= a[col * d + k] * w[k];
        }
        w[col] = acc / a[col * d + col];
    }
    Ok(w)
}

fn load_or_generate(cfg: &RunConfig) -> Result<Dataset> {
    let ds = match &cfg.dataset_path {
        Some(path) => import(path)?,
        None => generate(&cfg.synth_spec())?,
    };
    if ds.raw_dims() != cfg.raw_dims {
        return Err(RobultError::Config(format!(
            "dataset dimensions {:?} do not match configured raw_dims {:?}",
            ds.raw_dims(),
            cfg.raw_dims
        )));
    }
    if ds.task != cfg.task {
        return Err(RobultError::Config(format!(
            "dataset task {:?} does not match configured task {:?}",
            ds.task, cfg.task
        )));
    }
    Ok(ds)
}

fn mi_bin_count(n: usize) -> Option<usize> {
    let bins = (n / 10).min(MI_BINS);
    (bins >= 2).then_some(bins)
}

/// Train per the configuration and write the full report bundle into
/// `out_dir` (created if needed).
pub fn run_train(cfg: &RunConfig, out_dir: &Path) -> Result<ReportBundle> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    let ds = load_or_generate(cfg)?;
    for (s, avail) in ds.available.iter().enumerate() {
        if avail.iter().any(|&a| !a) {
            return Err(RobultError::Config(format!(
                "training data must have every modality present; sample {s} has masks"
            )));
        }
    }
    let labeled = make_semisupervised_split(&ds.labels, ds.task, cfg.label_ratio, cfg.seed)?;
    let model = RobultModel::new(cfg.model_spec())?;
    // Heads that provably stay at initialization are kept out of inference
    // and probe fitting; an untrained random projection is not a learned
    // representation.
    let with_unique = !cfg.drop_unique_branches && cfg.unique_heads_trained();

    let mi_bins = mi_bin_count(ds.n());
    let mi_init: Vec<Option<f64>> = match mi_bins {
        None => vec![None; ds.m()],
        Some(bins) => {
            let (z, s) = collect_representations(&model, &ds)?;
            z.iter()
                .map(|zi| histogram_mi(zi, &s, bins).map(Some))
                .collect::<Result<_>>()?
        }
    };

    let mut opt = Adam::new(&model.parameters(), cfg.learning_rate);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        epoch_losses.push(run_epoch(&model, &ds, &labeled, cfg, &mut opt, epoch)?);
    }

    let mut metrics = Vec::new();
    let m = ds.m();
    let mut eval_sets: Vec<Vec<usize>> = vec![(0..m).collect()];
    eval_sets.extend((0..m).map(|i| vec![i]));
    for subset in &eval_sets {
        // Without a trained classifier each evaluation subset gets its own
        // measurement head, fit on that subset's frozen representations.
        let probe = if cfg.drop_sup {
            Some(fit_linear_probe(&model, &ds, &labeled, subset, with_unique)?)
        } else {
            None
        };
        let scores = subset_scores(&model, &ds, subset, probe.as_ref(), with_unique)?;
        metrics.push(task_metrics(
            &subset_tag(subset, m),
            &scores,
            &ds.labels,
            ds.task,
        )?);
    }

    let (z, s) = collect_representations(&model, &ds)?;
    let mut diag = String::from("stat,tag,value\n");
    for i in 0..m {
        if let (Some(bins), Some(init)) = (mi_bins, mi_init[i]) {
            let fin = histogram_mi(&z[i], &s, bins)?;
            let _ = writeln!(diag, "mi_init,m{},{:?}", i + 1, init);
            let _ = writeln!(diag, "mi_final,m{},{:?}", i + 1, fin);
        }
        let report: AlignmentReport = alignment_uniformity(&z[i], &s, PAIR_DIST_BINS)?;
        let _ = writeln!(diag, "alignment,m{},{:?}", i + 1, report.alignment);
        let _ = writeln!(diag, "uniformity,m{},{:?}", i + 1, report.uniformity);
        for (k, (edge, count)) in report.histogram.iter().enumerate() {
            let _ = writeln!(diag, "pair_distance_edge,m{}:{k},{edge:?}", i + 1);
            let _ = writeln!(diag, "pair_distance_count,m{}:{k},{count}", i + 1);
        }
    }

    let header = echo_header(cfg);
    let bundle = ReportBundle {
        out_dir: out_dir.to_path_buf(),
        losses_csv: out_dir.join("losses.csv"),
        metrics_csv: out_dir.join("metrics.csv"),
        diagnostics_csv: out_dir.join("diagnostics.csv"),
        checkpoint: out_dir.join("model.ckpt"),
        dataset: out_dir.join("dataset.tsv"),
        config_file: out_dir.join("config.txt"),
        epoch_losses,
        metrics,
    };
    fs::write(
        &bundle.losses_csv,
        format!("{header}{}", losses_csv_body(&bundle.epoch_losses)),
    )?;
    fs::write(
        &bundle.metrics_csv,
        format!("{header}{}", metrics_csv_body(&bundle.metrics)),
    )?;
    fs::write(&bundle.diagnostics_csv, format!("{header}{diag}"))?;
    fs::write(&bundle.config_file, cfg.echo())?;
    model.save(&bundle.checkpoint)?;
    export(&ds, &bundle.dataset)?;
    Ok(bundle)
}

/// Train one ablation variant: the base configuration with a single switch
/// flipped. Reports land in `out_dir` exactly as for a standard run.
pub fn run_ablate(
    cfg: &RunConfig,
    variant: AblationVariant,
    out_dir: &Path,
) -> Result<ReportBundle> {
    let mut ablated = cfg.clone();
    variant.apply(&mut ablated);
    run_train(&ablated, out_dir)
}

/// Evaluate a checkpoint against a dataset under the requested masking and
/// write `eval_metrics.csv` into `out_dir`. Returns the metric rows.
pub fn run_eval(
    checkpoint: &Path,
    data: &Path,
    mask: EvalMask,
    seed: u64,
    out_dir: &Path,
) -> Result<(PathBuf, Vec<MetricRow>)> {
    fs::create_dir_all(out_dir)?;
    let model = RobultModel::load(checkpoint)?;
    let ds = import(data)?;
    if ds.raw_dims() != model.spec.raw_dims {
        return Err(RobultError::Config(format!(
            "dataset dimensions {:?} do not match the checkpoint's {:?}",
            ds.raw_dims(),
            model.spec.raw_dims
        )));
    }
    if ds.task != model.spec.task {
        return Err(RobultError::Config(format!(
            "dataset task {:?} does not match the checkpoint's {:?}",
            ds.task, model.spec.task
        )));
    }
    let m = ds.m();
    let check_index = |i: usize| -> Result<()> {
        if i >= m {
            return Err(RobultError::Config(format!(
                "mask names modality {} but the data has {m}",
                i + 1
            )));
        }
        Ok(())
    };

    let mut rows = Vec::new();
    match mask {
        EvalMask::Full | EvalMask::Single(_) | EvalMask::Pair(_, _) | EvalMask::All => {
            let subsets: Vec<Vec<usize>> = match mask {
                EvalMask::Full => vec![(0..m).collect()],
                EvalMask::Single(i) => {
                    check_index(i)?;
                    vec![vec![i]]
                }
                EvalMask::Pair(i, j) => {
                    check_index(i)?;
                    check_index(j)?;
                    vec![vec![i, j]]
                }
                EvalMask::All => all_subsets(m),
                EvalMask::Random(_) => unreachable!(),
            };
            for subset in &subsets {
                let scores = subset_scores(&model, &ds, subset, None, true)?;
                rows.push(task_metrics(
                    &subset_tag(subset, m),
                    &scores,
                    &ds.labels,
                    ds.task,
                )?);
            }
        }
        EvalMask::Random(p) => {
            let masked = mask_modalities(&ds, &MaskPolicy::Random(p), seed)?;
            // Group rows by availability pattern and run each group through
            // the matching subset route.
            let mut patterns: Vec<(Vec<bool>, Vec<usize>)> = Vec::new();
            for (j, avail) in masked.available.iter().enumerate() {
                match patterns.iter_mut().find(|(p, _)| p == avail) {
                    Some((_, rows)) => rows.push(j),
                    None => patterns.push((avail.clone(), vec![j])),
                }
            }
            let no_labels = vec![false; masked.n()];
            let mut scores = Mat::zeros(masked.n(), masked.task.output_width());
            for (pattern, members) in &patterns {
                let subset: Vec<usize> =
                    (0..m).filter(|&i| pattern[i]).collect();
                let batch = masked.batch(members, &no_labels)?;
                let part = model.infer_with_routing(&batch, &subset, true)?;
                for (local, &global) in members.iter().enumerate() {
                    scores.row_mut(global).copy_from_slice(part.row(local));
                }
            }
            rows.push(task_metrics(
                &format!("random:{p:?}"),
                &scores,
                &masked.labels,
                masked.task,
            )?);
        }
    }

    let mut text = String::new();
    let _ = writeln!(text, "# mask = {mask:?}");
    let _ = writeln!(text, "# modalities = {m}");
    text.push_str(&metrics_csv_body(&rows));
    let path = out_dir.join("eval_metrics.csv");
    fs::write(&path, text)?;
    Ok((path, rows))
}

/// Generate a dataset per the configuration and write it to `out`.
pub fn run_gen_data(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    cfg.validate()?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let ds = generate(&cfg.synth_spec())?;
    export(&ds, out)?;
    Ok(out.to_path_buf())
}
