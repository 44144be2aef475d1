//! Reverse-mode automatic differentiation over a per-step operation tape.
//!
//! A [`Graph`] records every operation in creation order; [`Graph::backward`]
//! walks the tape in reverse, propagating adjoints through scratch buffers
//! and accumulating (summing, never overwriting) into the `grad` buffer of
//! each reachable tensor whose `requires_grad` flag is set at that moment.
//! Scratch buffers are private to each backward call, so several losses that
//! share forward nodes can be backpropagated one after another on the same
//! graph, each under a different flag configuration, without polluting one
//! another. Gradient buffers of flag-off tensors are never read or written.
//!
//! Graphs are single-threaded by construction (tensors are `Rc` handles);
//! distinct graphs on distinct threads are fine.

use std::collections::HashMap;

use crate::error::{Result, RobultError};
use crate::tensor::Tensor;

/// Row-norm floor below which `l2_normalize_rows` refuses to divide.
pub const NORM_FLOOR: f64 = 1e-12;

enum Op {
    Matmul { a: Tensor, b: Tensor },
    Transpose { a: Tensor },
    Add { a: Tensor, b: Tensor },
    Sub { a: Tensor, b: Tensor },
    Mul { a: Tensor, b: Tensor },
    Div { a: Tensor, b: Tensor },
    Relu { a: Tensor },
    Exp { a: Tensor },
    Log { a: Tensor },
    Square { a: Tensor },
    Abs { a: Tensor },
    Scale { a: Tensor, c: f64 },
    AddScalar { a: Tensor },
    SumAll { a: Tensor },
    RowSum { a: Tensor },
    RowMax { a: Tensor, argmax: Vec<usize> },
    ExpandCols { a: Tensor },
    L2NormalizeRows { a: Tensor, norms: Vec<f64> },
    LogSoftmaxRows { a: Tensor },
    ConcatCols { a: Tensor, b: Tensor },
    SelectRows { a: Tensor, idx: Vec<usize> },
    AddRowBias { a: Tensor, bias: Tensor },
}

struct Node {
    op: Op,
    out: Tensor,
}

/// Operation tape. Build one per training step or evaluation pass.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn require_2d(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    let shape = t.shape();
    if shape.len() != 2 {
        return Err(RobultError::Dimension {
            op,
            lhs: shape,
            rhs: vec![],
        });
    }
    Ok((shape[0], shape[1]))
}

fn require_same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(RobultError::Dimension {
            op,
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    Ok(())
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

impl Graph {
    pub fn new() -> Graph {
        Graph::default()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, values: Vec<f64>) -> Tensor {
        let out = Tensor::op_output(shape, values);
        self.nodes.push(Node {
            op,
            out: out.clone(),
        });
        out
    }

    /// `a [m,k] . b [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (m, k) = require_2d("matmul", a)?;
        let (k2, n) = require_2d("matmul", b)?;
        if k != k2 {
            return Err(RobultError::Dimension {
                op: "matmul",
                lhs: a.shape(),
                rhs: b.shape(),
            });
        }
        let values = matmul_raw(&a.values(), &b.values(), m, k, n);
        Ok(self.push(
            Op::Matmul {
                a: a.clone(),
                b: b.clone(),
            },
            vec![m, n],
            values,
        ))
    }

    pub fn transpose(&mut self, a: &Tensor) -> Result<Tensor> {
        let (m, n) = require_2d("transpose", a)?;
        let av = a.values();
        let mut values = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                values[j * m + i] = av[i * n + j];
            }
        }
        drop(av);
        Ok(self.push(Op::Transpose { a: a.clone() }, vec![n, m], values))
    }

    pub fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        require_same_shape("add", a, b)?;
        let values: Vec<f64> = a.values().iter().zip(b.values().iter()).map(|(x, y)| x + y).collect();
        Ok(self.push(Op::Add { a: a.clone(), b: b.clone() }, a.shape(), values))
    }

    pub fn sub(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        require_same_shape("sub", a, b)?;
        let values: Vec<f64> = a.values().iter().zip(b.values().iter()).map(|(x, y)| x - y).collect();
        Ok(self.push(Op::Sub { a: a.clone(), b: b.clone() }, a.shape(), values))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        require_same_shape("mul", a, b)?;
        let values: Vec<f64> = a.values().iter().zip(b.values().iter()).map(|(x, y)| x * y).collect();
        Ok(self.push(Op::Mul { a: a.clone(), b: b.clone() }, a.shape(), values))
    }

    pub fn div(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        require_same_shape("div", a, b)?;
        if let Some(i) = b.values().iter().position(|&y| y == 0.0) {
            return Err(RobultError::Domain {
                op: "div",
                msg: format!("division by zero at index {i}"),
            });
        }
        let values: Vec<f64> = a.values().iter().zip(b.values().iter()).map(|(x, y)| x / y).collect();
        Ok(self.push(Op::Div { a: a.clone(), b: b.clone() }, a.shape(), values))
    }

    pub fn relu(&mut self, a: &Tensor) -> Result<Tensor> {
        let values: Vec<f64> = a.values().iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
        Ok(self.push(Op::Relu { a: a.clone() }, a.shape(), values))
    }

    pub fn exp(&mut self, a: &Tensor) -> Result<Tensor> {
        let values: Vec<f64> = a.values().iter().map(|x| x.exp()).collect();
        Ok(self.push(Op::Exp { a: a.clone() }, a.shape(), values))
    }

    /// Natural log; every entry must be strictly positive.
    pub fn log(&mut self, a: &Tensor) -> Result<Tensor> {
        if let Some(i) = a.values().iter().position(|&x| x <= 0.0) {
            return Err(RobultError::Domain {
                op: "log",
                msg: format!("non-positive input at index {i}"),
            });
        }
        let values: Vec<f64> = a.values().iter().map(|x| x.ln()).collect();
        Ok(self.push(Op::Log { a: a.clone() }, a.shape(), values))
    }

    pub fn square(&mut self, a: &Tensor) -> Result<Tensor> {
        let values: Vec<f64> = a.values().iter().map(|x| x * x).collect();
        Ok(self.push(Op::Square { a: a.clone() }, a.shape(), values))
    }

    pub fn abs(&mut self, a: &Tensor) -> Result<Tensor> {
        let values: Vec<f64> = a.values().iter().map(|x| x.abs()).collect();
        Ok(self.push(Op::Abs { a: a.clone() }, a.shape(), values))
    }

    pub fn scale(&mut self, a: &Tensor, c: f64) -> Result<Tensor> {
        let values: Vec<f64> = a.values().iter().map(|x| x * c).collect();
        Ok(self.push(Op::Scale { a: a.clone(), c }, a.shape(), values))
    }

    pub fn add_scalar(&mut self, a: &Tensor, c: f64) -> Result<Tensor> {
        let values: Vec<f64> = a.values().iter().map(|x| x + c).collect();
        Ok(self.push(Op::AddScalar { a: a.clone() }, a.shape(), values))
    }

    /// Sum of all entries, as a 1x1 tensor.
    pub fn sum_all(&mut self, a: &Tensor) -> Result<Tensor> {
        let s: f64 = a.values().iter().sum();
        Ok(self.push(Op::SumAll { a: a.clone() }, vec![1, 1], vec![s]))
    }

    /// `[m,n] -> [m,1]`, summing each row.
    pub fn row_sum(&mut self, a: &Tensor) -> Result<Tensor> {
        let (m, n) = require_2d("row_sum", a)?;
        let av = a.values();
        let values: Vec<f64> = (0..m).map(|i| av[i * n..(i + 1) * n].iter().sum()).collect();
        drop(av);
        Ok(self.push(Op::RowSum { a: a.clone() }, vec![m, 1], values))
    }

    /// `[m,n] -> [m,1]`, max of each row. Backward routes to the first
    /// maximal entry of each row.
    pub fn row_max(&mut self, a: &Tensor) -> Result<Tensor> {
        let (m, n) = require_2d("row_max", a)?;
        if n == 0 {
            return Err(RobultError::Dimension {
                op: "row_max",
                lhs: a.shape(),
                rhs: vec![],
            });
        }
        let av = a.values();
        let mut values = Vec::with_capacity(m);
        let mut argmax = Vec::with_capacity(m);
        for i in 0..m {
            let row = &av[i * n..(i + 1) * n];
            let mut best = 0usize;
            for j in 1..n {
                if row[j] > row[best] {
                    best = j;
                }
            }
            values.push(row[best]);
            argmax.push(best);
        }
        drop(av);
        Ok(self.push(Op::RowMax { a: a.clone(), argmax }, vec![m, 1], values))
    }

    /// Tile a column `[m,1]` across `cols` columns: `[m,cols]`.
    pub fn expand_cols(&mut self, a: &Tensor, cols: usize) -> Result<Tensor> {
        let (m, n) = require_2d("expand_cols", a)?;
        if n != 1 || cols == 0 {
            return Err(RobultError::Dimension {
                op: "expand_cols",
                lhs: a.shape(),
                rhs: vec![m, cols],
            });
        }
        let av = a.values();
        let mut values = vec![0.0; m * cols];
        for i in 0..m {
            for j in 0..cols {
                values[i * cols + j] = av[i];
            }
        }
        drop(av);
        Ok(self.push(Op::ExpandCols { a: a.clone() }, vec![m, cols], values))
    }

    /// Scale each row to unit Euclidean norm. A row with norm below
    /// [`NORM_FLOOR`] is an error, not a clamp.
    pub fn l2_normalize_rows(&mut self, a: &Tensor) -> Result<Tensor> {
        let (m, n) = require_2d("l2_normalize_rows", a)?;
        let av = a.values();
        let mut values = vec![0.0; m * n];
        let mut norms = Vec::with_capacity(m);
        for i in 0..m {
            let row = &av[i * n..(i + 1) * n];
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !(norm >= NORM_FLOOR) {
                return Err(RobultError::DegenerateRow { row: i, norm });
            }
            for j in 0..n {
                values[i * n + j] = row[j] / norm;
            }
            norms.push(norm);
        }
        drop(av);
        Ok(self.push(Op::L2NormalizeRows { a: a.clone(), norms }, vec![m, n], values))
    }

    /// Row-wise log-softmax with the usual max-shift stabilization.
    pub fn log_softmax_rows(&mut self, a: &Tensor) -> Result<Tensor> {
        let (m, n) = require_2d("log_softmax_rows", a)?;
        let av = a.values();
        let mut values = vec![0.0; m * n];
        for i in 0..m {
            let row = &av[i * n..(i + 1) * n];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|x| (x - mx).exp()).sum::<f64>().ln();
            for j in 0..n {
                values[i * n + j] = row[j] - lse;
            }
        }
        drop(av);
        Ok(self.push(Op::LogSoftmaxRows { a: a.clone() }, vec![m, n], values))
    }

    /// `[m,p] ++ [m,q] -> [m,p+q]` side by side.
    pub fn concat_cols(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (m, p) = require_2d("concat_cols", a)?;
        let (m2, q) = require_2d("concat_cols", b)?;
        if m != m2 {
            return Err(RobultError::Dimension {
                op: "concat_cols",
                lhs: a.shape(),
                rhs: b.shape(),
            });
        }
        let av = a.values();
        let bv = b.values();
        let mut values = Vec::with_capacity(m * (p + q));
        for i in 0..m {
            values.extend_from_slice(&av[i * p..(i + 1) * p]);
            values.extend_from_slice(&bv[i * q..(i + 1) * q]);
        }
        drop(av);
        drop(bv);
        Ok(self.push(
            Op::ConcatCols { a: a.clone(), b: b.clone() },
            vec![m, p + q],
            values,
        ))
    }

    /// Gather rows by index; backward scatter-adds.
    pub fn select_rows(&mut self, a: &Tensor, idx: &[usize]) -> Result<Tensor> {
        let (m, n) = require_2d("select_rows", a)?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= m) {
            return Err(RobultError::Contract(format!(
                "select_rows index {bad} out of range for {m} rows"
            )));
        }
        let av = a.values();
        let mut values = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            values.extend_from_slice(&av[i * n..(i + 1) * n]);
        }
        drop(av);
        Ok(self.push(
            Op::SelectRows { a: a.clone(), idx: idx.to_vec() },
            vec![idx.len(), n],
            values,
        ))
    }

    /// `[m,n] + [1,n]`, adding the bias row to every row.
    pub fn add_row_bias(&mut self, a: &Tensor, bias: &Tensor) -> Result<Tensor> {
        let (m, n) = require_2d("add_row_bias", a)?;
        let (br, bc) = require_2d("add_row_bias", bias)?;
        if br != 1 || bc != n {
            return Err(RobultError::Dimension {
                op: "add_row_bias",
                lhs: a.shape(),
                rhs: bias.shape(),
            });
        }
        let av = a.values();
        let bv = bias.values();
        let mut values = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                values[i * n + j] = av[i * n + j] + bv[j];
            }
        }
        drop(av);
        drop(bv);
        Ok(self.push(
            Op::AddRowBias { a: a.clone(), bias: bias.clone() },
            vec![m, n],
            values,
        ))
    }

    /// Mean over all entries, as a 1x1 tensor.
    pub fn mean_all(&mut self, a: &Tensor) -> Result<Tensor> {
        let n = a.numel();
        let s = self.sum_all(a)?;
        self.scale(&s, 1.0 / n as f64)
    }

    /// Backpropagate from a scalar root. Adjoints flow through private
    /// scratch buffers; `grad` is touched only on tensors whose
    /// `requires_grad` flag is set when this runs.
    pub fn backward(&self, root: &Tensor) -> Result<()> {
        if root.numel() != 1 {
            return Err(RobultError::Contract(format!(
                "backward root must be scalar, got shape {:?}",
                root.shape()
            )));
        }
        let mut scratch: HashMap<u64, (Tensor, Vec<f64>)> = HashMap::new();
        scratch.insert(root.id(), (root.clone(), vec![1.0]));

        for node in self.nodes.iter().rev() {
            let Some((_, gout)) = scratch.remove(&node.out.id()) else {
                continue;
            };
            self.propagate(&node.op, &node.out, &gout, &mut scratch);
            if node.out.requires_grad() {
                node.out.add_to_grad(&gout);
            }
        }
        // Whatever is left belongs to leaves.
        for (_, (t, buf)) in scratch.drain() {
            if t.requires_grad() {
                t.add_to_grad(&buf);
            }
        }
        Ok(())
    }

    fn propagate(
        &self,
        op: &Op,
        out: &Tensor,
        gout: &[f64],
        scratch: &mut HashMap<u64, (Tensor, Vec<f64>)>,
    ) {
        fn buf<'a>(
            scratch: &'a mut HashMap<u64, (Tensor, Vec<f64>)>,
            t: &Tensor,
        ) -> &'a mut Vec<f64> {
            &mut scratch
                .entry(t.id())
                .or_insert_with(|| (t.clone(), vec![0.0; t.numel()]))
                .1
        }

        match op {
            Op::Matmul { a, b } => {
                let (m, k) = (a.rows(), a.cols());
                let n = b.cols();
                {
                    // dA = G . B^T
                    let bv = b.values();
                    let ga = buf(scratch, a);
                    for i in 0..m {
                        for p in 0..k {
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += gout[i * n + j] * bv[p * n + j];
                            }
                            ga[i * k + p] += acc;
                        }
                    }
                }
                {
                    // dB = A^T . G
                    let av = a.values();
                    let gb = buf(scratch, b);
                    for p in 0..k {
                        for j in 0..n {
                            let mut acc = 0.0;
                            for i in 0..m {
                                acc += av[i * k + p] * gout[i * n + j];
                            }
                            gb[p * n + j] += acc;
                        }
                    }
                }
            }
            Op::Transpose { a } => {
                let (m, n) = (a.rows(), a.cols());
                let ga = buf(scratch, a);
                for i in 0..m {
                    for j in 0..n {
                        ga[i * n + j] += gout[j * m + i];
                    }
                }
            }
            Op::Add { a, b } => {
                for (g, &d) in buf(scratch, a).iter_mut().zip(gout) {
                    *g += d;
                }
                for (g, &d) in buf(scratch, b).iter_mut().zip(gout) {
                    *g += d;
                }
            }
            Op::Sub { a, b } => {
                for (g, &d) in buf(scratch, a).iter_mut().zip(gout) {
                    *g += d;
                }
                for (g, &d) in buf(scratch, b).iter_mut().zip(gout) {
                    *g -= d;
                }
            }
            Op::Mul { a, b } => {
                {
                    let bv = b.values();
                    let ga = buf(scratch, a);
                    for i in 0..gout.len() {
                        ga[i] += gout[i] * bv[i];
                    }
                }
                {
                    let av = a.values();
                    let gb = buf(scratch, b);
                    for i in 0..gout.len() {
                        gb[i] += gout[i] * av[i];
                    }
                }
            }
            Op::Div { a, b } => {
                {
                    let bv = b.values();
                    let ga = buf(scratch, a);
                    for i in 0..gout.len() {
                        ga[i] += gout[i] / bv[i];
                    }
                }
                {
                    let av = a.values();
                    let bv = b.values();
                    let gb = buf(scratch, b);
                    for i in 0..gout.len() {
                        gb[i] -= gout[i] * av[i] / (bv[i] * bv[i]);
                    }
                }
            }
            Op::Relu { a } => {
                let av = a.values();
                let ga = buf(scratch, a);
                for i in 0..gout.len() {
                    if av[i] > 0.0 {
                        ga[i] += gout[i];
                    }
                }
            }
            Op::Exp { a } => {
                let ov = out.values();
                let ga = buf(scratch, a);
                for i in 0..gout.len() {
                    ga[i] += gout[i] * ov[i];
                }
            }
            Op::Log { a } => {
                let av = a.values();
                let ga = buf(scratch, a);
                for i in 0..gout.len() {
                    ga[i] += gout[i] / av[i];
                }
            }
            Op::Square { a } => {
                let av = a.values();
                let ga = buf(scratch, a);
                for i in 0..gout.len() {
                    ga[i] += 2.0 * av[i] * gout[i];
                }
            }
            Op::Abs { a } => {
                let av = a.values();
                let ga = buf(scratch, a);
                for i in 0..gout.len() {
                    if av[i] > 0.0 {
                        ga[i] += gout[i];
                    } else if av[i] < 0.0 {
                        ga[i] -= gout[i];
                    }
                }
            }
            Op::Scale { a, c } => {
                let ga = buf(scratch, a);
                for i in 0..gout.len() {
                    ga[i] += c * gout[i];
                }
            }
            Op::AddScalar { a } => {
                for (g, &d) in buf(scratch, a).iter_mut().zip(gout) {
                    *g += d;
                }
            }
            Op::SumAll { a } => {
                let ga = buf(scratch, a);
                for g in ga.iter_mut() {
                    *g += gout[0];
                }
            }
            Op::RowSum { a } => {
                let n = a.cols();
                let ga = buf(scratch, a);
                for i in 0..gout.len() {
                    for j in 0..n {
                        ga[i * n + j] += gout[i];
                    }
                }
            }
            Op::RowMax { a, argmax } => {
                let n = a.cols();
                let ga = buf(scratch, a);
                for (i, &j) in argmax.iter().enumerate() {
                    ga[i * n + j] += gout[i];
                }
            }
            Op::ExpandCols { a } => {
                let m = a.rows();
                let cols = gout.len() / m;
                let ga = buf(scratch, a);
                for i in 0..m {
                    for j in 0..cols {
                        ga[i] += gout[i * cols + j];
                    }
                }
            }
            Op::L2NormalizeRows { a, norms } => {
                let (m, n) = (a.rows(), a.cols());
                let ov = out.values();
                let ga = buf(scratch, a);
                for i in 0..m {
                    let y = &ov[i * n..(i + 1) * n];
                    let g = &gout[i * n..(i + 1) * n];
                    let dot: f64 = g.iter().zip(y).map(|(gi, yi)| gi * yi).sum();
                    for j in 0..n {
                        ga[i * n + j] += (g[j] - y[j] * dot) / norms[i];
                    }
                }
            }
            Op::LogSoftmaxRows { a } => {
                let (m, n) = (a.rows(), a.cols());
                let ov = out.values();
                let ga = buf(scratch, a);
                for i in 0..m {
                    let g = &gout[i * n..(i + 1) * n];
                    let gsum: f64 = g.iter().sum();
                    for j in 0..n {
                        ga[i * n + j] += g[j] - ov[i * n + j].exp() * gsum;
                    }
                }
            }
            Op::ConcatCols { a, b } => {
                let m = a.rows();
                let p = a.cols();
                let q = b.cols();
                {
                    let ga = buf(scratch, a);
                    for i in 0..m {
                        for j in 0..p {
                            ga[i * p + j] += gout[i * (p + q) + j];
                        }
                    }
                }
                {
                    let gb = buf(scratch, b);
                    for i in 0..m {
                        for j in 0..q {
                            gb[i * q + j] += gout[i * (p + q) + p + j];
                        }
                    }
                }
            }
            Op::SelectRows { a, idx } => {
                let n = a.cols();
                let ga = buf(scratch, a);
                for (r, &i) in idx.iter().enumerate() {
                    for j in 0..n {
                        ga[i * n + j] += gout[r * n + j];
                    }
                }
            }
            Op::AddRowBias { a, bias } => {
                let (m, n) = (a.rows(), a.cols());
                for (g, &d) in buf(scratch, a).iter_mut().zip(gout) {
                    *g += d;
                }
                let gb = buf(scratch, bias);
                for i in 0..m {
                    for j in 0..n {
                        gb[j] += gout[i * n + j];
                    }
                }
            }
        }
    }
}
