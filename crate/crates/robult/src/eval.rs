//! Evaluation: task metrics per modality subset, a histogram
//! mutual-information diagnostic over learned representations,
//! alignment/uniformity geometry of the contrastive space, and the batch
//! couplet analysis that justifies treating unlabeled rows as negatives.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, RobultError};
use crate::mat::Mat;
use crate::synthdata::{LabelData, TaskKind};

/// One row of a metrics report; cells that do not apply to the task stay
/// `None` and render as empty CSV cells.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub tag: String,
    pub mae: Option<f64>,
    pub pearson_corr: Option<f64>,
    pub binary_acc: Option<f64>,
    pub f1_binary: Option<f64>,
    pub f1_macro: Option<f64>,
    pub auroc: Option<f64>,
}

/// Argmax class per row; ties resolve to the lowest index.
pub fn scores_to_classes(scores: &Mat) -> Vec<usize> {
    (0..scores.rows)
        .map(|j| {
            let row = scores.row(j);
            let mut best = 0;
            for k in 1..row.len() {
                if row[k] > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Compute every metric the task defines.
///
/// Classification: accuracy (in `binary_acc`), macro F1 over all classes
/// (absent classes contribute zero), and for two classes also the
/// positive-class F1 and AUROC. Regression: mean absolute error, Pearson
/// correlation (omitted when either side has zero variance), sign-agreement
/// accuracy, and sign-class F1.
pub fn task_metrics(tag: &str, scores: &Mat, labels: &LabelData, task: TaskKind) -> Result<MetricRow> {
    if scores.rows != labels.len() {
        return Err(RobultError::Contract(format!(
            "{} score rows for {} labels",
            scores.rows,
            labels.len()
        )));
    }
    if scores.cols != task.output_width() {
        return Err(RobultError::Dimension {
            op: "task_metrics",
            lhs: vec![scores.rows, task.output_width()],
            rhs: vec![scores.rows, scores.cols],
        });
    }
    if scores.rows == 0 {
        return Err(RobultError::Contract("no rows to evaluate".into()));
    }
    let mut row = MetricRow {
        tag: tag.to_string(),
        mae: None,
        pearson_corr: None,
        binary_acc: None,
        f1_binary: None,
        f1_macro: None,
        auroc: None,
    };
    match (task, labels) {
        (TaskKind::Classification { classes }, LabelData::Classes(ys)) => {
            if let Some(&bad) = ys.iter().find(|&&y| y >= classes) {
                return Err(RobultError::Contract(format!(
                    "label {bad} out of range for {classes} classes"
                )));
            }
            let preds = scores_to_classes(scores);
            let hits = preds.iter().zip(ys).filter(|(p, y)| p == y).count();
            row.binary_acc = Some(hits as f64 / ys.len() as f64);
            let per_class = per_class_f1(&preds, ys, classes);
            row.f1_macro = Some(per_class.iter().sum::<f64>() / classes as f64);
            if classes == 2 {
                row.f1_binary = Some(per_class[1]);
                let margin: Vec<f64> = (0..scores.rows)
                    .map(|j| scores.get(j, 1) - scores.get(j, 0))
                    .collect();
                let positive: Vec<bool> = ys.iter().map(|&y| y == 1).collect();
                row.auroc = Some(auroc_midrank(&margin, &positive)?);
            }
        }
        (TaskKind::Regression, LabelData::Values(ys)) => {
            let preds: Vec<f64> = (0..scores.rows).map(|j| scores.get(j, 0)).collect();
            let n = ys.len() as f64;
            row.mae = Some(
                preds
                    .iter()
                    .zip(ys)
                    .map(|(p, y)| (p - y).abs())
                    .sum::<f64>()
                    / n,
            );
            row.pearson_corr = pearson(&preds, ys);
            let sign_hits = preds
                .iter()
                .zip(ys)
                .filter(|(p, y)| (**p > 0.0) == (**y > 0.0))
                .count();
            row.binary_acc = Some(sign_hits as f64 / n);
            let pred_sign: Vec<usize> = preds.iter().map(|&p| (p > 0.0) as usize).collect();
            let true_sign: Vec<usize> = ys.iter().map(|&y| (y > 0.0) as usize).collect();
            row.f1_binary = Some(per_class_f1(&pred_sign, &true_sign, 2)[1]);
        }
        _ => {
            return Err(RobultError::Contract(
                "label kind does not match the task".into(),
            ))
        }
    }
    Ok(row)
}

fn per_class_f1(preds: &[usize], truth: &[usize], classes: usize) -> Vec<f64> {
    let mut tp = vec![0usize; classes];
    let mut fp = vec![0usize; classes];
    let mut fal_n = vec![0usize; classes];
    for (&p, &y) in preds.iter().zip(truth) {
        if p == y {
            tp[y] += 1;
        } else {
            fp[p] += 1;
            fal_n[y] += 1;
        }
    }
    (0..classes)
        .map(|c| {
            let denom = 2 * tp[c] + fp[c] + fal_n[c];
            if denom == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .collect()
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    if a.len() < 2 {
        return None;
    }
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va <= 0.0 || vb <= 0.0 {
        return None;
    }
    Some(cov / (va.sqrt() * vb.sqrt()))
}

/// AUROC via the rank-sum identity with midranks for ties. Exactly equal to
/// [`auroc_pairwise`]: both reduce to the same sum of halves.
pub fn auroc_midrank(scores: &[f64], positive: &[bool]) -> Result<f64> {
    let (n_pos, n_neg) = count_auroc_classes(scores, positive)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks are 1-based; a tie run shares the mean rank, a half-integer.
        let midrank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if positive[idx] {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0;
    Ok(u / (n_pos * n_neg))
}

/// AUROC by direct enumeration of positive/negative pairs; the quadratic
/// reference implementation.
pub fn auroc_pairwise(scores: &[f64], positive: &[bool]) -> Result<f64> {
    let (n_pos, n_neg) = count_auroc_classes(scores, positive)?;
    let mut wins = 0.0;
    for (i, &pi) in positive.iter().enumerate() {
        if !pi {
            continue;
        }
        for (j, &pj) in positive.iter().enumerate() {
            if pj {
                continue;
            }
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    Ok(wins / (n_pos * n_neg))
}

fn count_auroc_classes(scores: &[f64], positive: &[bool]) -> Result<(f64, f64)> {
    if scores.len() != positive.len() {
        return Err(RobultError::Contract(format!(
            "{} scores for {} class flags",
            scores.len(),
            positive.len()
        )));
    }
    if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(RobultError::NonFinite(format!("auroc score ({bad})")));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(RobultError::UndefinedMetric(
            "auroc needs both a positive and a negative example".into(),
        ));
    }
    Ok((n_pos as f64, n_neg as f64))
}

/// Plug-in mutual information (nats) between two representation matrices.
///
/// Each matrix is reduced to its leading principal axis (power iteration on
/// the centered data), the two projections are binned into a `bins x bins`
/// equal-width joint histogram, and the discrete mutual information of that
/// histogram is returned, clamped at zero. Needs at least `10 * bins` rows
/// for the histogram to be meaningful.
pub fn histogram_mi(a: &Mat, b: &Mat, bins: usize) -> Result<f64> {
    if bins < 2 {
        return Err(RobultError::Config(format!(
            "histogram needs at least 2 bins, got {bins}"
        )));
    }
    if a.rows != b.rows {
        return Err(RobultError::Contract(format!(
            "{} vs {} rows",
            a.rows, b.rows
        )));
    }
    if a.rows < 10 * bins {
        return Err(RobultError::Contract(format!(
            "{} rows is too few for {bins} bins (need at least {})",
            a.rows,
            10 * bins
        )));
    }
    let pa = principal_projection(a)?;
    let pb = principal_projection(b)?;
    let ia = bin_indices(&pa, bins)?;
    let ib = bin_indices(&pb, bins)?;

    let n = a.rows as f64;
    let mut joint = vec![0usize; bins * bins];
    let mut ra = vec![0usize; bins];
    let mut cb = vec![0usize; bins];
    for (&x, &y) in ia.iter().zip(&ib) {
        joint[x * bins + y] += 1;
        ra[x] += 1;
        cb[y] += 1;
    }
    let mut mi = 0.0;
    for x in 0..bins {
        for y in 0..bins {
            let nxy = joint[x * bins + y];
            if nxy == 0 {
                continue;
            }
            let pxy = nxy as f64 / n;
            mi += pxy * ((nxy as f64 * n) / (ra[x] as f64 * cb[y] as f64)).ln();
        }
    }
    Ok(mi.max(0.0))
}

/// Default bin count for representation diagnostics.
pub const MI_BINS: usize = 16;

fn principal_projection(x: &Mat) -> Result<Vec<f64>> {
    let n = x.rows;
    let d = x.cols;
    let mut centered = x.clone();
    for j in 0..d {
        let mean = (0..n).map(|i| x.get(i, j)).sum::<f64>() / n as f64;
        for i in 0..n {
            let v = centered.get(i, j) - mean;
            centered.set(i, j, v);
        }
    }
    if d == 1 {
        return Ok(centered.data);
    }
    // Power iteration with a fixed, seedless start direction.
    let mut v: Vec<f64> = (0..d).map(|j| (j as f64 + 1.0).sin() + 1.5).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in &mut v {
        *x /= norm;
    }
    for _ in 0..200 {
        let mut w = vec![0.0; d];
        for i in 0..n {
            let row = centered.row(i);
            let proj: f64 = row.iter().zip(&v).map(|(a, b)| a * b).sum();
            for (slot, &r) in w.iter_mut().zip(row) {
                *slot += proj * r;
            }
        }
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Err(RobultError::Domain {
                op: "histogram_mi",
                msg: "projection has zero variance".into(),
            });
        }
        for (slot, wv) in v.iter_mut().zip(&w) {
            *slot = wv / norm;
        }
    }
    Ok((0..n)
        .map(|i| centered.row(i).iter().zip(&v).map(|(a, b)| a * b).sum())
        .collect())
}

fn bin_indices(p: &[f64], bins: usize) -> Result<Vec<usize>> {
    let lo = p.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(hi - lo).is_finite() || hi - lo < 1e-12 {
        return Err(RobultError::Domain {
            op: "histogram_mi",
            msg: format!("projection range {:?} is degenerate", hi - lo),
        });
    }
    let span = hi - lo;
    Ok(p.iter()
        .map(|&x| (((x - lo) / span * bins as f64) as usize).min(bins - 1))
        .collect())
}

/// Geometry of the contrastive space over one set of positive pairs.
#[derive(Clone, Debug)]
pub struct AlignmentReport {
    /// Mean squared distance across the paired rows.
    pub alignment: f64,
    /// `ln mean exp(-2 d^2)` over every distinct pair of pooled rows; 0 only
    /// when all rows coincide, negative otherwise.
    pub uniformity: f64,
    /// Equal-width histogram of pair distances as (lower edge, count) rows;
    /// counts sum to the number of pairs.
    pub histogram: Vec<(f64, usize)>,
}

/// Measure alignment of `n` positive pairs (`a` row j with `b` row j),
/// uniformity of the pooled `2n` rows, and the pair-distance histogram.
pub fn alignment_uniformity(a: &Mat, b: &Mat, bins: usize) -> Result<AlignmentReport> {
    if a.rows != b.rows || a.cols != b.cols {
        return Err(RobultError::Dimension {
            op: "alignment_uniformity",
            lhs: vec![a.rows, a.cols],
            rhs: vec![b.rows, b.cols],
        });
    }
    if a.rows == 0 {
        return Err(RobultError::Contract("no positive pairs".into()));
    }
    if bins == 0 {
        return Err(RobultError::Config("histogram needs at least 1 bin".into()));
    }
    let n = a.rows;
    let sq = |x: &[f64], y: &[f64]| -> f64 {
        x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum()
    };
    let pair_sq: Vec<f64> = (0..n).map(|j| sq(a.row(j), b.row(j))).collect();
    let alignment = pair_sq.iter().sum::<f64>() / n as f64;

    let pooled: Vec<&[f64]> = (0..n).map(|j| a.row(j)).chain((0..n).map(|j| b.row(j))).collect();
    let mut acc = 0.0;
    let mut pairs = 0usize;
    for i in 0..pooled.len() {
        for j in (i + 1)..pooled.len() {
            acc += (-2.0 * sq(pooled[i], pooled[j])).exp();
            pairs += 1;
        }
    }
    let uniformity = (acc / pairs as f64).ln();

    let dists: Vec<f64> = pair_sq.iter().map(|&s| s.sqrt()).collect();
    let max = dists.iter().cloned().fold(0.0, f64::max);
    let histogram = if max == 0.0 {
        vec![(0.0, n)]
    } else {
        let width = max / bins as f64;
        let mut counts = vec![0usize; bins];
        for &d in &dists {
            let idx = ((d / max * bins as f64) as usize).min(bins - 1);
            counts[idx] += 1;
        }
        counts
            .into_iter()
            .enumerate()
            .map(|(k, c)| (k as f64 * width, c))
            .collect()
    };
    Ok(AlignmentReport {
        alignment,
        uniformity,
        histogram,
    })
}

/// Probability that more than half the couplets in a batch are
/// (same-class) positive pairs when labels are uniform over `classes`.
///
/// A batch of `batch` rows holds `batch * (batch - 1) / 2` couplets, each
/// positive independently with probability `1 / classes^2`. Up to a batch of
/// 12 the binomial tail is enumerated exactly; beyond that a Monte Carlo
/// estimate with a fixed internal seed and one million trials stands in.
pub fn positive_majority_probability(batch: usize, classes: usize) -> Result<f64> {
    if batch < 2 {
        return Err(RobultError::Contract(format!(
            "a couplet needs at least 2 rows, got {batch}"
        )));
    }
    if classes < 2 {
        return Err(RobultError::Contract(format!(
            "need at least 2 classes, got {classes}"
        )));
    }
    let pairs = batch * (batch - 1) / 2;
    let p = 1.0 / (classes as f64 * classes as f64);
    if batch <= 12 {
        Ok(binomial_tail_above_half(pairs, p))
    } else {
        Ok(simulate_majority(pairs, p, 1_000_000, 0x524F_4255_4C54))
    }
}

/// P(X > n/2) for X ~ Binomial(n, p), via the stable term recurrence
/// t_{k+1} = t_k * (n - k) / (k + 1) * p / (1 - p).
fn binomial_tail_above_half(n: usize, p: f64) -> f64 {
    let q = 1.0 - p;
    let mut term = q.powi(n as i32);
    let ratio = p / q;
    let mut tail = 0.0;
    for k in 0..=n {
        if 2 * k > n {
            tail += term;
        }
        if k < n {
            term *= (n - k) as f64 / (k + 1) as f64 * ratio;
        }
    }
    tail
}

fn simulate_majority(pairs: usize, p: f64, trials: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    for _ in 0..trials {
        let mut positives = 0usize;
        for _ in 0..pairs {
            if rng.gen::<f64>() < p {
                positives += 1;
            }
        }
        if 2 * positives > pairs {
            hits += 1;
        }
    }
    hits as f64 / trials as f64
}
