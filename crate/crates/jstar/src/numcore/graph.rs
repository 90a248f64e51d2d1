//! Tape-based reverse-mode automatic differentiation.
//!
//! Ops append nodes to a [`Graph`]; append order is topological order, so the
//! backward pass is a single reverse sweep. Gradients accumulate by summation
//! over paths in one fixed order, and every kernel reduces in f64 before
//! rounding to f32, so replaying a graph is bit-reproducible.
//!
//! Supported broadcasting is deliberately narrow: exact shape match or a
//! one-element scalar on either side. Richer broadcasting is a shape error.

use std::rc::Rc;

use super::tensor::{log_softmax_row, sigmoid_f32, Tensor};
use super::{NumError, ParamId, ParamSet, Result};

pub type NodeId = usize;

const LAYER_NORM_EPS: f32 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Broadcast {
    None,
    ScalarLhs,
    ScalarRhs,
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(ParamId),
    Matmul { a: NodeId, b: NodeId },
    /// a[m,k] * b[n,k]^T -> [m,n]
    MatmulBt { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId, bcast: Broadcast },
    Mul { a: NodeId, b: NodeId, bcast: Broadcast },
    /// [m,n] + row vector [n]
    AddBias { a: NodeId, bias: NodeId },
    Scale { a: NodeId, c: f32 },
    Sigmoid { a: NodeId },
    Tanh { a: NodeId },
    Relu { a: NodeId },
    LogSoftmax { a: NodeId },
    /// Row-wise softmax restricted to a half-open column span per row;
    /// entries outside the span are exactly zero.
    MaskedSoftmax { a: NodeId, spans: Rc<Vec<(usize, usize)>> },
    LayerNorm { a: NodeId, gamma: NodeId, beta: NodeId, stats: Rc<Vec<(f32, f32)>> },
    Embed { table: NodeId, ids: Rc<Vec<usize>> },
    SliceRows { a: NodeId, start: usize },
    SliceCols { a: NodeId, start: usize },
    ConcatRows { parts: Rc<Vec<NodeId>> },
    ConcatCols { parts: Rc<Vec<NodeId>> },
    Reshape { a: NodeId },
    /// a[m,d] ⊕ b[n,d] -> [m*n,d]: out[i*n+j] = a[i] + b[j]
    OuterAdd { a: NodeId, b: NodeId },
    SumAll { a: NodeId },
    /// One LSTM cell step: pre-activation gates `[1, 4d]` (order i, f, g, o)
    /// and previous cell `[1, d]` produce `[2, d]` (new hidden row 0, new
    /// cell row 1). Activated gates and tanh(c') are saved for backward.
    LstmCell { gates: NodeId, c_prev: NodeId, act: Rc<(Vec<f32>, Vec<f32>)> },
    /// Scalar combination sum_i w_i * x_i of scalar nodes, in f64.
    WeightedSum { parts: Rc<Vec<(NodeId, f64)>> },
    /// A scalar loss computed outside the graph with a precomputed gradient
    /// with respect to `input` (the bridge for the lattice loss).
    ExternalLoss { input: NodeId, grad: Rc<Tensor> },
}

struct Node {
    value: Tensor,
    grad: Option<Vec<f32>>,
    op: Op,
}

/// Append-only computation tape. Confined to one thread; independent graphs
/// may run concurrently.
pub struct Graph {
    nodes: Vec<Node>,
    backward_done: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), backward_done: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    /// Gradient accumulated at a node during `backward`, if any reached it.
    pub fn grad(&self, id: NodeId) -> Option<&[f32]> {
        self.nodes[id].grad.as_deref()
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, grad: None, op });
        self.nodes.len() - 1
    }

    fn push_checked(&mut self, value: Tensor, op: Op, name: &'static str) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(NumError::NonFinite { op: name });
        }
        Ok(self.push(value, op))
    }

    // ── Leaves ─────────────────────────────────────────────────────────

    /// Constant input (features, masks, targets); gradients still accumulate
    /// at the node and can be inspected, but nothing is written back.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Input)
    }

    /// Leaf mirroring a parameter; `backward` adds its gradient to the set.
    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> NodeId {
        self.push(params.value(id).clone(), Op::Param(id))
    }

    // ── Forward ops ────────────────────────────────────────────────────

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape2(a, "matmul")?, self.shape2(b, "matmul")?);
        if sa.1 != sb.0 {
            return Err(NumError::ShapeMismatch {
                op: "matmul",
                detail: format!("[{},{}] x [{},{}]", sa.0, sa.1, sb.0, sb.1),
            });
        }
        let (m, k, n) = (sa.0, sa.1, sb.1);
        let mut out = vec![0.0f32; m * n];
        matmul_kernel(self.data(a), self.data(b), m, k, n, &mut out);
        self.push_checked(Tensor::new(vec![m, n], out)?, Op::Matmul { a, b }, "matmul")
    }

    /// a[m,k] times b[n,k] transposed -> [m,n].
    pub fn matmul_bt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape2(a, "matmul_bt")?, self.shape2(b, "matmul_bt")?);
        if sa.1 != sb.1 {
            return Err(NumError::ShapeMismatch {
                op: "matmul_bt",
                detail: format!("[{},{}] x [{},{}]^T", sa.0, sa.1, sb.0, sb.1),
            });
        }
        let (m, k, n) = (sa.0, sa.1, sb.0);
        let mut out = vec![0.0f32; m * n];
        matmul_bt_kernel(self.data(a), self.data(b), m, k, n, &mut out);
        self.push_checked(Tensor::new(vec![m, n], out)?, Op::MatmulBt { a, b }, "matmul_bt")
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_elementwise(a, b, "add", |x, y| x + y, |a, b, bcast| Op::Add { a, b, bcast })
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_elementwise(a, b, "mul", |x, y| x * y, |a, b, bcast| Op::Mul { a, b, bcast })
    }

    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (m, n) = self.shape2(a, "add_bias")?;
        let bl = self.value(bias).numel();
        if self.value(bias).shape().len() != 1 || bl != n {
            return Err(NumError::ShapeMismatch {
                op: "add_bias",
                detail: format!("[{m},{n}] + bias of {bl}"),
            });
        }
        let mut out = self.data(a).to_vec();
        let bv = self.data(bias);
        for r in 0..m {
            for (j, &b) in bv.iter().enumerate() {
                out[r * n + j] += b;
            }
        }
        self.push_checked(Tensor::new(vec![m, n], out)?, Op::AddBias { a, bias }, "add_bias")
    }

    pub fn scale(&mut self, a: NodeId, c: f32) -> Result<NodeId> {
        let out = Tensor::new(
            self.value(a).shape().to_vec(),
            self.data(a).iter().map(|v| v * c).collect(),
        )?;
        self.push_checked(out, Op::Scale { a, c }, "scale")
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        let out = self.map_unary(a, sigmoid_f32)?;
        self.push_checked(out, Op::Sigmoid { a }, "sigmoid")
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        let out = self.map_unary(a, f32::tanh)?;
        self.push_checked(out, Op::Tanh { a }, "tanh")
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let out = self.map_unary(a, |v| v.max(0.0))?;
        self.push_checked(out, Op::Relu { a }, "relu")
    }

    /// Log-softmax over the last dimension.
    pub fn log_softmax_lastdim(&mut self, a: NodeId) -> Result<NodeId> {
        let t = self.value(a);
        if t.numel() == 0 {
            return Err(NumError::Empty { op: "log_softmax_lastdim" });
        }
        let (rows, d) = (t.rows(), t.last_dim());
        let mut out = t.data().to_vec();
        for r in 0..rows {
            log_softmax_row(&mut out[r * d..(r + 1) * d]);
        }
        let out = Tensor::new(t.shape().to_vec(), out)?;
        self.push_checked(out, Op::LogSoftmax { a }, "log_softmax_lastdim")
    }

    /// Softmax over each row restricted to `spans[row] = (lo, hi)` columns;
    /// all other entries are exactly zero and receive exactly zero gradient.
    pub fn masked_softmax_lastdim(
        &mut self,
        a: NodeId,
        spans: Rc<Vec<(usize, usize)>>,
    ) -> Result<NodeId> {
        let t = self.value(a);
        let (rows, d) = (t.rows(), t.last_dim());
        if spans.len() != rows {
            return Err(NumError::ShapeMismatch {
                op: "masked_softmax",
                detail: format!("{} spans for {} rows", spans.len(), rows),
            });
        }
        let mut out = vec![0.0f32; t.numel()];
        for (r, &(lo, hi)) in spans.iter().enumerate() {
            if lo >= hi || hi > d {
                return Err(NumError::ShapeMismatch {
                    op: "masked_softmax",
                    detail: format!("span ({lo},{hi}) invalid for width {d}"),
                });
            }
            let row = &t.data()[r * d..(r + 1) * d];
            let max = row[lo..hi].iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
            let mut denom = 0.0f64;
            for &v in &row[lo..hi] {
                denom += ((v as f64) - max).exp();
            }
            for j in lo..hi {
                out[r * d + j] = ((((row[j] as f64) - max).exp()) / denom) as f32;
            }
        }
        let out = Tensor::new(t.shape().to_vec(), out)?;
        self.push_checked(out, Op::MaskedSoftmax { a, spans }, "masked_softmax")
    }

    /// Layer normalization over the last dimension with learned gain/shift.
    pub fn layer_norm(&mut self, a: NodeId, gamma: NodeId, beta: NodeId) -> Result<NodeId> {
        let t = self.value(a);
        let (rows, d) = (t.rows(), t.last_dim());
        if self.value(gamma).numel() != d || self.value(beta).numel() != d {
            return Err(NumError::ShapeMismatch {
                op: "layer_norm",
                detail: format!(
                    "gain/shift of {}/{} for width {}",
                    self.value(gamma).numel(),
                    self.value(beta).numel(),
                    d
                ),
            });
        }
        let g = self.data(gamma).to_vec();
        let b = self.data(beta).to_vec();
        let mut out = vec![0.0f32; t.numel()];
        let mut stats = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &t.data()[r * d..(r + 1) * d];
            let mean = row.iter().map(|&v| v as f64).sum::<f64>() / d as f64;
            let var = row.iter().map(|&v| (v as f64 - mean) * (v as f64 - mean)).sum::<f64>()
                / d as f64;
            let rstd = 1.0 / (var + LAYER_NORM_EPS as f64).sqrt();
            stats.push((mean as f32, rstd as f32));
            for j in 0..d {
                let xhat = ((row[j] as f64 - mean) * rstd) as f32;
                out[r * d + j] = xhat * g[j] + b[j];
            }
        }
        let out = Tensor::new(t.shape().to_vec(), out)?;
        self.push_checked(
            out,
            Op::LayerNorm { a, gamma, beta, stats: Rc::new(stats) },
            "layer_norm",
        )
    }

    /// Row lookup: `table[ids[r], :]` stacked into `[ids.len(), dim]`.
    pub fn embed(&mut self, table: NodeId, ids: Rc<Vec<usize>>) -> Result<NodeId> {
        let (rows, d) = self.shape2(table, "embed")?;
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids.iter() {
            if id >= rows {
                return Err(NumError::ShapeMismatch {
                    op: "embed",
                    detail: format!("id {id} out of range for table of {rows}"),
                });
            }
            out.extend_from_slice(self.value(table).row(id));
        }
        let n = ids.len();
        self.push_checked(Tensor::new(vec![n, d], out)?, Op::Embed { table, ids }, "embed")
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (m, n) = self.shape2(a, "slice_rows")?;
        if start + len > m {
            return Err(NumError::ShapeMismatch {
                op: "slice_rows",
                detail: format!("rows {start}..{} of {m}", start + len),
            });
        }
        let out = self.data(a)[start * n..(start + len) * n].to_vec();
        self.push_checked(Tensor::new(vec![len, n], out)?, Op::SliceRows { a, start }, "slice_rows")
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (m, n) = self.shape2(a, "slice_cols")?;
        if start + len > n {
            return Err(NumError::ShapeMismatch {
                op: "slice_cols",
                detail: format!("cols {start}..{} of {n}", start + len),
            });
        }
        let mut out = Vec::with_capacity(m * len);
        for r in 0..m {
            out.extend_from_slice(&self.data(a)[r * n + start..r * n + start + len]);
        }
        self.push_checked(Tensor::new(vec![m, len], out)?, Op::SliceCols { a, start }, "slice_cols")
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(NumError::Empty { op: "concat_rows" });
        }
        let n = self.shape2(parts[0], "concat_rows")?.1;
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (m, pn) = self.shape2(p, "concat_rows")?;
            if pn != n {
                return Err(NumError::ShapeMismatch {
                    op: "concat_rows",
                    detail: format!("widths {n} vs {pn}"),
                });
            }
            rows += m;
            out.extend_from_slice(self.data(p));
        }
        self.push_checked(
            Tensor::new(vec![rows, n], out)?,
            Op::ConcatRows { parts: Rc::new(parts.to_vec()) },
            "concat_rows",
        )
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(NumError::Empty { op: "concat_cols" });
        }
        let m = self.shape2(parts[0], "concat_cols")?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pm, pn) = self.shape2(p, "concat_cols")?;
            if pm != m {
                return Err(NumError::ShapeMismatch {
                    op: "concat_cols",
                    detail: format!("heights {m} vs {pm}"),
                });
            }
            widths.push(pn);
        }
        let n: usize = widths.iter().sum();
        let mut out = vec![0.0f32; m * n];
        for r in 0..m {
            let mut col = 0;
            for (&p, &w) in parts.iter().zip(&widths) {
                out[r * n + col..r * n + col + w].copy_from_slice(self.value(p).row(r));
                col += w;
            }
        }
        self.push_checked(
            Tensor::new(vec![m, n], out)?,
            Op::ConcatCols { parts: Rc::new(parts.to_vec()) },
            "concat_cols",
        )
    }

    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let out = self.value(a).reshaped(shape)?;
        Ok(self.push(out, Op::Reshape { a }))
    }

    /// Pairwise sum grid: `out[i*n + j, :] = a[i, :] + b[j, :]`.
    pub fn outer_add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, d) = self.shape2(a, "outer_add")?;
        let (n, db) = self.shape2(b, "outer_add")?;
        if d != db {
            return Err(NumError::ShapeMismatch {
                op: "outer_add",
                detail: format!("widths {d} vs {db}"),
            });
        }
        let mut out = vec![0.0f32; m * n * d];
        for i in 0..m {
            let ar = self.value(a).row(i);
            for j in 0..n {
                let br = self.value(b).row(j);
                let dst = &mut out[(i * n + j) * d..(i * n + j + 1) * d];
                for k in 0..d {
                    dst[k] = ar[k] + br[k];
                }
            }
        }
        self.push_checked(Tensor::new(vec![m * n, d], out)?, Op::OuterAdd { a, b }, "outer_add")
    }

    pub fn sum_all(&mut self, a: NodeId) -> Result<NodeId> {
        if self.value(a).numel() == 0 {
            return Err(NumError::Empty { op: "sum_all" });
        }
        let s: f64 = self.data(a).iter().map(|&v| v as f64).sum();
        self.push_checked(Tensor::scalar(s as f32), Op::SumAll { a }, "sum_all")
    }

    /// One LSTM cell step (gate order i, f, g, o): returns `[2, d]` with the
    /// new hidden state in row 0 and the new cell state in row 1.
    pub fn lstm_cell(&mut self, gates: NodeId, c_prev: NodeId) -> Result<NodeId> {
        let (gr, gd) = self.shape2(gates, "lstm_cell")?;
        let (cr, d) = self.shape2(c_prev, "lstm_cell")?;
        if gr != 1 || cr != 1 || gd != 4 * d {
            return Err(NumError::ShapeMismatch {
                op: "lstm_cell",
                detail: format!("gates [{gr},{gd}] vs cell [{cr},{d}]"),
            });
        }
        let z = self.data(gates);
        let c = self.data(c_prev);
        let mut act = vec![0.0f32; 4 * d];
        let mut tanh_c = vec![0.0f32; d];
        let mut out = vec![0.0f32; 2 * d];
        for j in 0..d {
            let i_gate = sigmoid_f32(z[j]);
            let f_gate = sigmoid_f32(z[d + j]);
            let g_gate = z[2 * d + j].tanh();
            let o_gate = sigmoid_f32(z[3 * d + j]);
            act[j] = i_gate;
            act[d + j] = f_gate;
            act[2 * d + j] = g_gate;
            act[3 * d + j] = o_gate;
            let c_next = f_gate * c[j] + i_gate * g_gate;
            let th = c_next.tanh();
            tanh_c[j] = th;
            out[j] = o_gate * th;
            out[d + j] = c_next;
        }
        self.push_checked(
            Tensor::new(vec![2, d], out)?,
            Op::LstmCell { gates, c_prev, act: Rc::new((act, tanh_c)) },
            "lstm_cell",
        )
    }

    /// Weighted sum of scalar nodes, `sum_i w_i * x_i`, accumulated in f64.
    pub fn weighted_sum(&mut self, parts: &[(NodeId, f64)]) -> Result<NodeId> {
        let mut s = 0.0f64;
        for &(id, w) in parts {
            if self.value(id).numel() != 1 {
                return Err(NumError::ShapeMismatch {
                    op: "weighted_sum",
                    detail: format!("node {id} is not scalar"),
                });
            }
            s += w * self.data(id)[0] as f64;
        }
        self.push_checked(
            Tensor::scalar(s as f32),
            Op::WeightedSum { parts: Rc::new(parts.to_vec()) },
            "weighted_sum",
        )
    }

    /// Attach a scalar loss computed outside the graph together with its
    /// gradient with respect to `input`. Backward scales the stored gradient
    /// by the upstream scalar gradient and adds it to `input`.
    pub fn external_loss(&mut self, input: NodeId, value: f64, grad: Tensor) -> Result<NodeId> {
        if grad.shape() != self.value(input).shape() {
            return Err(NumError::ShapeMismatch {
                op: "external_loss",
                detail: format!(
                    "grad shape {:?} vs input shape {:?}",
                    grad.shape(),
                    self.value(input).shape()
                ),
            });
        }
        if !grad.is_finite() || !value.is_finite() {
            return Err(NumError::NonFinite { op: "external_loss" });
        }
        Ok(self.push(
            Tensor::scalar(value as f32),
            Op::ExternalLoss { input, grad: Rc::new(grad) },
        ))
    }

    // ── Backward ───────────────────────────────────────────────────────

    /// Reverse sweep from a scalar `loss` node, seeding with 1.
    pub fn backward(&mut self, loss: NodeId, params: &mut ParamSet) -> Result<()> {
        self.backward_seeded(loss, 1.0, params)
    }

    /// Reverse sweep with an arbitrary seed (used to fold batch averaging
    /// into the pass: seed `1/B` instead of rescaling gradients afterwards).
    pub fn backward_seeded(&mut self, loss: NodeId, seed: f64, params: &mut ParamSet) -> Result<()> {
        if self.backward_done {
            return Err(NumError::BackwardTwice);
        }
        if self.value(loss).numel() != 1 {
            return Err(NumError::NonScalarLoss(self.value(loss).shape().to_vec()));
        }
        self.backward_done = true;
        self.nodes[loss].grad = Some(vec![seed as f32]);

        for i in (0..self.nodes.len()).rev() {
            let g = match &self.nodes[i].grad {
                Some(g) => g.clone(),
                None => continue,
            };
            let op = self.nodes[i].op.clone();
            match op {
                Op::Input => {}
                Op::Param(pid) => params.accumulate_grad(pid, &g),
                Op::Matmul { a, b } => {
                    let (m, k) = self.dims2(a);
                    let n = self.dims2(b).1;
                    let mut da = vec![0.0f32; m * k];
                    matmul_bt_kernel(&g, self.data(b), m, n, k, &mut da);
                    let mut db = vec![0.0f32; k * n];
                    matmul_tn_kernel(self.data(a), &g, m, k, n, &mut db);
                    self.add_grad(a, &da);
                    self.add_grad(b, &db);
                }
                Op::MatmulBt { a, b } => {
                    let (m, k) = self.dims2(a);
                    let n = self.dims2(b).0;
                    // dA = dC * B ; dB = dC^T * A
                    let mut da = vec![0.0f32; m * k];
                    matmul_kernel(&g, self.data(b), m, n, k, &mut da);
                    let mut db = vec![0.0f32; n * k];
                    matmul_tn_kernel(&g, self.data(a), m, n, k, &mut db);
                    self.add_grad(a, &da);
                    self.add_grad(b, &db);
                }
                Op::Add { a, b, bcast } => {
                    match bcast {
                        Broadcast::None => {
                            self.add_grad(a, &g);
                            self.add_grad(b, &g);
                        }
                        Broadcast::ScalarRhs => {
                            self.add_grad(a, &g);
                            self.add_grad_scalar(b, &g);
                        }
                        Broadcast::ScalarLhs => {
                            self.add_grad_scalar(a, &g);
                            self.add_grad(b, &g);
                        }
                    };
                }
                Op::Mul { a, b, bcast } => match bcast {
                    Broadcast::None => {
                        let da: Vec<f32> =
                            g.iter().zip(self.data(b)).map(|(&g, &b)| g * b).collect();
                        let db: Vec<f32> =
                            g.iter().zip(self.data(a)).map(|(&g, &a)| g * a).collect();
                        self.add_grad(a, &da);
                        self.add_grad(b, &db);
                    }
                    Broadcast::ScalarRhs => {
                        let s = self.data(b)[0];
                        let da: Vec<f32> = g.iter().map(|&g| g * s).collect();
                        let db: f64 =
                            g.iter().zip(self.data(a)).map(|(&g, &a)| g as f64 * a as f64).sum();
                        self.add_grad(a, &da);
                        self.add_grad(b, &[db as f32]);
                    }
                    Broadcast::ScalarLhs => {
                        let s = self.data(a)[0];
                        let db: Vec<f32> = g.iter().map(|&g| g * s).collect();
                        let da: f64 =
                            g.iter().zip(self.data(b)).map(|(&g, &b)| g as f64 * b as f64).sum();
                        self.add_grad(b, &db);
                        self.add_grad(a, &[da as f32]);
                    }
                },
                Op::AddBias { a, bias } => {
                    let (m, n) = self.dims2(a);
                    self.add_grad(a, &g);
                    let mut db = vec![0.0f64; n];
                    for r in 0..m {
                        for j in 0..n {
                            db[j] += g[r * n + j] as f64;
                        }
                    }
                    let db: Vec<f32> = db.iter().map(|&v| v as f32).collect();
                    self.add_grad(bias, &db);
                }
                Op::Scale { a, c } => {
                    let da: Vec<f32> = g.iter().map(|&g| g * c).collect();
                    self.add_grad(a, &da);
                }
                Op::Sigmoid { a } => {
                    let y = self.nodes[i].value.data();
                    let da: Vec<f32> =
                        g.iter().zip(y).map(|(&g, &y)| g * y * (1.0 - y)).collect();
                    self.add_grad(a, &da);
                }
                Op::Tanh { a } => {
                    let y = self.nodes[i].value.data();
                    let da: Vec<f32> = g.iter().zip(y).map(|(&g, &y)| g * (1.0 - y * y)).collect();
                    self.add_grad(a, &da);
                }
                Op::Relu { a } => {
                    let y = self.nodes[i].value.data();
                    let da: Vec<f32> =
                        g.iter().zip(y).map(|(&g, &y)| if y > 0.0 { g } else { 0.0 }).collect();
                    self.add_grad(a, &da);
                }
                Op::LogSoftmax { a } => {
                    let y = &self.nodes[i].value;
                    let (rows, d) = (y.rows(), y.last_dim());
                    let mut da = vec![0.0f32; y.numel()];
                    for r in 0..rows {
                        let gsum: f64 = g[r * d..(r + 1) * d].iter().map(|&v| v as f64).sum();
                        for j in 0..d {
                            let p = (y.data()[r * d + j] as f64).exp();
                            da[r * d + j] = (g[r * d + j] as f64 - p * gsum) as f32;
                        }
                    }
                    self.add_grad(a, &da);
                }
                Op::MaskedSoftmax { a, spans } => {
                    let y = &self.nodes[i].value;
                    let d = y.last_dim();
                    let mut da = vec![0.0f32; y.numel()];
                    for (r, &(lo, hi)) in spans.iter().enumerate() {
                        let mut dot = 0.0f64;
                        for j in lo..hi {
                            dot += y.data()[r * d + j] as f64 * g[r * d + j] as f64;
                        }
                        for j in lo..hi {
                            let w = y.data()[r * d + j] as f64;
                            da[r * d + j] = (w * (g[r * d + j] as f64 - dot)) as f32;
                        }
                    }
                    self.add_grad(a, &da);
                }
                Op::LayerNorm { a, gamma, beta, stats } => {
                    let x = self.nodes[a].value.clone();
                    let (rows, d) = (x.rows(), x.last_dim());
                    let gam = self.data(gamma).to_vec();
                    let mut da = vec![0.0f32; x.numel()];
                    let mut dgamma = vec![0.0f64; d];
                    let mut dbeta = vec![0.0f64; d];
                    for r in 0..rows {
                        let (mean, rstd) = stats[r];
                        let (mean, rstd) = (mean as f64, rstd as f64);
                        let mut sum_dxhat = 0.0f64;
                        let mut sum_dxhat_xhat = 0.0f64;
                        for j in 0..d {
                            let xhat = (x.data()[r * d + j] as f64 - mean) * rstd;
                            let gj = g[r * d + j] as f64;
                            dgamma[j] += gj * xhat;
                            dbeta[j] += gj;
                            let dxhat = gj * gam[j] as f64;
                            sum_dxhat += dxhat;
                            sum_dxhat_xhat += dxhat * xhat;
                        }
                        for j in 0..d {
                            let xhat = (x.data()[r * d + j] as f64 - mean) * rstd;
                            let dxhat = g[r * d + j] as f64 * gam[j] as f64;
                            da[r * d + j] = (rstd
                                * (dxhat
                                    - sum_dxhat / d as f64
                                    - xhat * sum_dxhat_xhat / d as f64))
                                as f32;
                        }
                    }
                    let dgamma: Vec<f32> = dgamma.iter().map(|&v| v as f32).collect();
                    let dbeta: Vec<f32> = dbeta.iter().map(|&v| v as f32).collect();
                    self.add_grad(a, &da);
                    self.add_grad(gamma, &dgamma);
                    self.add_grad(beta, &dbeta);
                }
                Op::Embed { table, ids } => {
                    let (rows, d) = self.dims2(table);
                    let mut dt = vec![0.0f32; rows * d];
                    for (r, &id) in ids.iter().enumerate() {
                        for j in 0..d {
                            dt[id * d + j] += g[r * d + j];
                        }
                    }
                    self.add_grad(table, &dt);
                }
                Op::SliceRows { a, start } => {
                    let (m, n) = self.dims2(a);
                    let len = g.len() / n;
                    let mut da = vec![0.0f32; m * n];
                    da[start * n..(start + len) * n].copy_from_slice(&g);
                    self.add_grad(a, &da);
                }
                Op::SliceCols { a, start } => {
                    let (m, n) = self.dims2(a);
                    let len = g.len() / m;
                    let mut da = vec![0.0f32; m * n];
                    for r in 0..m {
                        da[r * n + start..r * n + start + len]
                            .copy_from_slice(&g[r * len..(r + 1) * len]);
                    }
                    self.add_grad(a, &da);
                }
                Op::ConcatRows { parts } => {
                    let mut offset = 0;
                    for &p in parts.iter() {
                        let sz = self.nodes[p].value.numel();
                        let slice = g[offset..offset + sz].to_vec();
                        self.add_grad(p, &slice);
                        offset += sz;
                    }
                }
                Op::ConcatCols { parts } => {
                    let m = self.dims2(parts[0]).0;
                    let n = g.len() / m;
                    let mut col = 0;
                    for &p in parts.iter() {
                        let w = self.dims2(p).1;
                        let mut dp = vec![0.0f32; m * w];
                        for r in 0..m {
                            dp[r * w..(r + 1) * w]
                                .copy_from_slice(&g[r * n + col..r * n + col + w]);
                        }
                        self.add_grad(p, &dp);
                        col += w;
                    }
                }
                Op::Reshape { a } => {
                    self.add_grad(a, &g);
                }
                Op::OuterAdd { a, b } => {
                    let (m, d) = self.dims2(a);
                    let n = self.dims2(b).0;
                    let mut da = vec![0.0f64; m * d];
                    let mut db = vec![0.0f64; n * d];
                    for i2 in 0..m {
                        for j in 0..n {
                            let gr = &g[(i2 * n + j) * d..(i2 * n + j + 1) * d];
                            for k in 0..d {
                                da[i2 * d + k] += gr[k] as f64;
                                db[j * d + k] += gr[k] as f64;
                            }
                        }
                    }
                    let da: Vec<f32> = da.iter().map(|&v| v as f32).collect();
                    let db: Vec<f32> = db.iter().map(|&v| v as f32).collect();
                    self.add_grad(a, &da);
                    self.add_grad(b, &db);
                }
                Op::SumAll { a } => {
                    let da = vec![g[0]; self.nodes[a].value.numel()];
                    self.add_grad(a, &da);
                }
                Op::LstmCell { gates, c_prev, act } => {
                    let d = self.nodes[c_prev].value.numel();
                    let (act, tanh_c) = (&act.0, &act.1);
                    let c_old = self.nodes[c_prev].value.data().to_vec();
                    let mut dz = vec![0.0f32; 4 * d];
                    let mut dc_prev = vec![0.0f32; d];
                    for j in 0..d {
                        let (i_g, f_g, g_g, o_g) =
                            (act[j], act[d + j], act[2 * d + j], act[3 * d + j]);
                        let th = tanh_c[j];
                        let dh = g[j];
                        let dc_ext = g[d + j];
                        let dc = dc_ext + dh * o_g * (1.0 - th * th);
                        dz[j] = dc * g_g * i_g * (1.0 - i_g);
                        dz[d + j] = dc * c_old[j] * f_g * (1.0 - f_g);
                        dz[2 * d + j] = dc * i_g * (1.0 - g_g * g_g);
                        dz[3 * d + j] = dh * th * o_g * (1.0 - o_g);
                        dc_prev[j] = dc * f_g;
                    }
                    self.add_grad(gates, &dz);
                    self.add_grad(c_prev, &dc_prev);
                }
                Op::WeightedSum { parts } => {
                    for &(p, w) in parts.iter() {
                        self.add_grad(p, &[(g[0] as f64 * w) as f32]);
                    }
                }
                Op::ExternalLoss { input, grad } => {
                    let scaled: Vec<f32> =
                        grad.data().iter().map(|&v| (v as f64 * g[0] as f64) as f32).collect();
                    self.add_grad(input, &scaled);
                }
            }
        }
        Ok(())
    }

    // ── Internals ──────────────────────────────────────────────────────

    fn data(&self, id: NodeId) -> &[f32] {
        self.nodes[id].value.data()
    }

    fn dims2(&self, id: NodeId) -> (usize, usize) {
        let s = self.nodes[id].value.shape();
        (s[0], s[1])
    }

    fn shape2(&self, id: NodeId, op: &'static str) -> Result<(usize, usize)> {
        let s = self.value(id).shape();
        if s.len() != 2 {
            return Err(NumError::ShapeMismatch {
                op,
                detail: format!("expected 2-d tensor, got {:?}", s),
            });
        }
        Ok((s[0], s[1]))
    }

    fn map_unary(&self, a: NodeId, f: impl Fn(f32) -> f32) -> Result<Tensor> {
        let t = self.value(a);
        if t.numel() == 0 {
            return Err(NumError::Empty { op: "elementwise" });
        }
        Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect())
    }

    fn binary_elementwise(
        &mut self,
        a: NodeId,
        b: NodeId,
        name: &'static str,
        f: impl Fn(f32, f32) -> f32,
        mk: impl Fn(NodeId, NodeId, Broadcast) -> Op,
    ) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.numel() == 0 || tb.numel() == 0 {
            return Err(NumError::Empty { op: name });
        }
        let (value, bcast) = if ta.shape() == tb.shape() {
            let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
            (Tensor::new(ta.shape().to_vec(), data)?, Broadcast::None)
        } else if tb.numel() == 1 {
            let s = tb.data()[0];
            let data = ta.data().iter().map(|&x| f(x, s)).collect();
            (Tensor::new(ta.shape().to_vec(), data)?, Broadcast::ScalarRhs)
        } else if ta.numel() == 1 {
            let s = ta.data()[0];
            let data = tb.data().iter().map(|&y| f(s, y)).collect();
            (Tensor::new(tb.shape().to_vec(), data)?, Broadcast::ScalarLhs)
        } else {
            return Err(NumError::ShapeMismatch {
                op: name,
                detail: format!("{:?} vs {:?} (only exact or scalar broadcast)", ta.shape(), tb.shape()),
            });
        };
        self.push_checked(value, mk(a, b, bcast), name)
    }

    fn add_grad(&mut self, id: NodeId, contribution: &[f32]) {
        let node = &mut self.nodes[id];
        let buf = node.grad.get_or_insert_with(|| vec![0.0; node.value.numel()]);
        for (dst, &src) in buf.iter_mut().zip(contribution) {
            *dst += src;
        }
    }

    fn add_grad_scalar(&mut self, id: NodeId, g: &[f32]) {
        let total: f64 = g.iter().map(|&v| v as f64).sum();
        self.add_grad(id, &[total as f32]);
    }
}

// ── Kernels (shared with value-mode inference) ─────────────────────────

/// C[m,n] = A[m,k] * B[k,n], f64 row accumulators.
pub fn matmul_kernel(a: &[f32], b: &[f32], m: usize, k: usize, n: usize, out: &mut [f32]) {
    let mut acc = vec![0.0f64; n];
    for i in 0..m {
        acc.iter_mut().for_each(|v| *v = 0.0);
        for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
            let aip = aip as f64;
            let brow = &b[p * n..(p + 1) * n];
            for (j, &bpj) in brow.iter().enumerate() {
                acc[j] += aip * bpj as f64;
            }
        }
        for (j, &v) in acc.iter().enumerate() {
            out[i * n + j] = v as f32;
        }
    }
}

/// C[m,n] = A[m,k] * B[n,k]^T (row-by-row dot products).
pub fn matmul_bt_kernel(a: &[f32], b: &[f32], m: usize, k: usize, n: usize, out: &mut [f32]) {
    for i in 0..m {
        let ar = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let br = &b[j * k..(j + 1) * k];
            let mut s = 0.0f64;
            for p in 0..k {
                s += ar[p] as f64 * br[p] as f64;
            }
            out[i * n + j] = s as f32;
        }
    }
}

/// C[k,n] = A[m,k]^T * B[m,n].
pub fn matmul_tn_kernel(a: &[f32], b: &[f32], m: usize, k: usize, n: usize, out: &mut [f32]) {
    let mut acc = vec![0.0f64; k * n];
    for i in 0..m {
        let br = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p] as f64;
            let dst = &mut acc[p * n..(p + 1) * n];
            for (j, &bij) in br.iter().enumerate() {
                dst[j] += aip * bij as f64;
            }
        }
    }
    for (o, &v) in out.iter_mut().zip(acc.iter()) {
        *o = v as f32;
    }
}
