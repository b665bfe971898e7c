//! The recording tape: forward ops append nodes, backward walks them once
//! in reverse. Gradients are only materialized for nodes that need them;
//! frozen leaves (requires_grad = false) never receive a gradient buffer.

use super::{ensure_finite, Tensor};
use crate::error::{Error, Result};

/// Index of a node on the tape. Valid only for the graph that issued it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorRef(usize);

#[derive(Debug, Clone)]
pub enum Op {
    Leaf,
    MatMul { a: usize, b: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Scale { a: usize, factor: f64 },
    AddBias { a: usize, bias: usize },
    Gelu { a: usize },
    SoftmaxRows { a: usize },
    LayerNormRows { a: usize, gamma: usize, beta: usize, eps: f64 },
    Mse { pred: usize, target: usize },
    Transpose { a: usize },
    SliceRows { a: usize, start: usize },
    SliceCols { a: usize, start: usize },
    ConcatRows { a: usize, b: usize },
    ConcatCols { a: usize, b: usize },
    GatherRows { a: usize, indices: Vec<usize> },
    Reshape { a: usize },
    OverlapFold { a: usize, stride: usize, out_len: usize },
    SumAll { a: usize },
}

struct Node {
    tensor: Tensor,
    op: Op,
}

/// Append-only record of one forward pass.
pub struct Graph {
    nodes: Vec<Node>,
    ran_backward: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            ran_backward: false,
        }
    }

    pub fn leaf(&mut self, tensor: Tensor) -> TensorRef {
        self.push_node(tensor, Op::Leaf)
    }

    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<TensorRef> {
        Ok(self.leaf(Tensor::new(shape, data)?))
    }

    pub fn param(&mut self, shape: Vec<usize>, data: Vec<f64>, trainable: bool) -> Result<TensorRef> {
        let mut t = Tensor::new(shape, data)?;
        t.requires_grad = trainable;
        Ok(self.leaf(t))
    }

    fn push_node(&mut self, tensor: Tensor, op: Op) -> TensorRef {
        self.nodes.push(Node { tensor, op });
        TensorRef(self.nodes.len() - 1)
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, what: &str) -> Result<TensorRef> {
        ensure_finite(&data, what)?;
        let numel: usize = shape.iter().product();
        debug_assert_eq!(numel, data.len());
        Ok(self.push_node(
            Tensor {
                shape,
                data,
                requires_grad: false,
                grad: None,
            },
            op,
        ))
    }

    pub fn shape(&self, r: TensorRef) -> &[usize] {
        &self.nodes[r.0].tensor.shape
    }

    pub fn data(&self, r: TensorRef) -> &[f64] {
        &self.nodes[r.0].tensor.data
    }

    pub fn grad(&self, r: TensorRef) -> Option<&[f64]> {
        self.nodes[r.0].tensor.grad.as_deref()
    }

    pub fn scalar_value(&self, r: TensorRef) -> f64 {
        self.nodes[r.0].tensor.data[0]
    }

    fn dims2(&self, r: TensorRef) -> (usize, usize) {
        self.nodes[r.0].tensor.dims2()
    }

    fn require_2d(&self, r: TensorRef, what: &str) -> Result<(usize, usize)> {
        let shape = self.shape(r);
        if shape.len() != 2 {
            return Err(Error::shape(format!("{what} requires a 2-D tensor, got {shape:?}")));
        }
        Ok((shape[0], shape[1]))
    }

    // ── Forward ops ─────────────────────────────────────────────────

    pub fn matmul(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        let (m, k) = self.require_2d(a, "matmul lhs")?;
        let (k2, n) = self.require_2d(b, "matmul rhs")?;
        if k != k2 {
            return Err(Error::shape(format!(
                "matmul inner dims differ: {m}x{k} vs {k2}x{n}"
            )));
        }
        let out = matmul_raw(self.data(a), self.data(b), m, k, n);
        self.push(vec![m, n], out, Op::MatMul { a: a.0, b: b.0 }, "matmul")
    }

    fn zip_same_shape(
        &mut self,
        a: TensorRef,
        b: TensorRef,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
        what: &str,
    ) -> Result<TensorRef> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!(
                "{what} shape mismatch: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let data: Vec<f64> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        self.push(self.shape(a).to_vec(), data, op, what)
    }

    pub fn add(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        self.zip_same_shape(a, b, |x, y| x + y, Op::Add { a: a.0, b: b.0 }, "add")
    }

    pub fn sub(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        self.zip_same_shape(a, b, |x, y| x - y, Op::Sub { a: a.0, b: b.0 }, "sub")
    }

    pub fn mul(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        self.zip_same_shape(a, b, |x, y| x * y, Op::Mul { a: a.0, b: b.0 }, "mul")
    }

    pub fn scale(&mut self, a: TensorRef, factor: f64) -> Result<TensorRef> {
        let data: Vec<f64> = self.data(a).iter().map(|&x| x * factor).collect();
        self.push(self.shape(a).to_vec(), data, Op::Scale { a: a.0, factor }, "scale")
    }

    /// `[r, c] + [c]` broadcast along rows.
    pub fn add_bias(&mut self, a: TensorRef, bias: TensorRef) -> Result<TensorRef> {
        let (r, c) = self.dims2(a);
        if self.shape(bias) != [c] {
            return Err(Error::shape(format!(
                "bias shape {:?} does not match {c} columns",
                self.shape(bias)
            )));
        }
        let av = self.data(a);
        let bv = self.data(bias);
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                out.push(av[i * c + j] + bv[j]);
            }
        }
        self.push(
            self.shape(a).to_vec(),
            out,
            Op::AddBias { a: a.0, bias: bias.0 },
            "add_bias",
        )
    }

    pub fn gelu(&mut self, a: TensorRef) -> Result<TensorRef> {
        let data: Vec<f64> = self.data(a).iter().map(|&x| gelu_val(x)).collect();
        self.push(self.shape(a).to_vec(), data, Op::Gelu { a: a.0 }, "gelu")
    }

    /// Softmax along the last axis of a 2-D tensor.
    pub fn softmax_rows(&mut self, a: TensorRef) -> Result<TensorRef> {
        let (r, c) = self.require_2d(a, "softmax")?;
        let av = self.data(a);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &av[i * c..(i + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..c {
                let e = (row[j] - max).exp();
                out[i * c + j] = e;
                sum += e;
            }
            for j in 0..c {
                out[i * c + j] /= sum;
            }
        }
        self.push(vec![r, c], out, Op::SoftmaxRows { a: a.0 }, "softmax")
    }

    /// Layer normalization along the last axis with learned scale and shift.
    pub fn layer_norm_rows(
        &mut self,
        a: TensorRef,
        gamma: TensorRef,
        beta: TensorRef,
        eps: f64,
    ) -> Result<TensorRef> {
        if eps <= 0.0 {
            return Err(Error::numeric(format!("layer_norm eps must be > 0, got {eps}")));
        }
        let (r, c) = self.require_2d(a, "layer_norm")?;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::shape(format!(
                "layer_norm scale/shift must have shape [{c}], got {:?}/{:?}",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        let av = self.data(a);
        let gv = self.data(gamma);
        let bv = self.data(beta);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &av[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / c as f64;
            let inv_std = 1.0 / (var + eps).sqrt();
            for j in 0..c {
                out[i * c + j] = (row[j] - mean) * inv_std * gv[j] + bv[j];
            }
        }
        self.push(
            vec![r, c],
            out,
            Op::LayerNormRows {
                a: a.0,
                gamma: gamma.0,
                beta: beta.0,
                eps,
            },
            "layer_norm",
        )
    }

    /// Mean squared error over all elements. Returns a scalar.
    pub fn mse(&mut self, pred: TensorRef, target: TensorRef) -> Result<TensorRef> {
        if self.shape(pred) != self.shape(target) {
            return Err(Error::shape(format!(
                "mse shape mismatch: {:?} vs {:?}",
                self.shape(pred),
                self.shape(target)
            )));
        }
        let n = self.data(pred).len() as f64;
        let sum: f64 = self
            .data(pred)
            .iter()
            .zip(self.data(target))
            .map(|(&p, &t)| (p - t) * (p - t))
            .sum();
        self.push(
            vec![1],
            vec![sum / n],
            Op::Mse {
                pred: pred.0,
                target: target.0,
            },
            "mse",
        )
    }

    pub fn transpose(&mut self, a: TensorRef) -> Result<TensorRef> {
        let (r, c) = self.require_2d(a, "transpose")?;
        let av = self.data(a);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = av[i * c + j];
            }
        }
        self.push(vec![c, r], out, Op::Transpose { a: a.0 }, "transpose")
    }

    pub fn slice_rows(&mut self, a: TensorRef, start: usize, len: usize) -> Result<TensorRef> {
        let (r, c) = self.require_2d(a, "slice_rows")?;
        if start + len > r || len == 0 {
            return Err(Error::shape(format!(
                "slice_rows [{start}, {start}+{len}) out of range for {r} rows"
            )));
        }
        let out = self.data(a)[start * c..(start + len) * c].to_vec();
        self.push(vec![len, c], out, Op::SliceRows { a: a.0, start }, "slice_rows")
    }

    pub fn slice_cols(&mut self, a: TensorRef, start: usize, len: usize) -> Result<TensorRef> {
        let (r, c) = self.require_2d(a, "slice_cols")?;
        if start + len > c || len == 0 {
            return Err(Error::shape(format!(
                "slice_cols [{start}, {start}+{len}) out of range for {c} cols"
            )));
        }
        let av = self.data(a);
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&av[i * c + start..i * c + start + len]);
        }
        self.push(vec![r, len], out, Op::SliceCols { a: a.0, start }, "slice_cols")
    }

    pub fn concat_rows(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        let (ra, ca) = self.require_2d(a, "concat_rows")?;
        let (rb, cb) = self.require_2d(b, "concat_rows")?;
        if ca != cb {
            return Err(Error::shape(format!(
                "concat_rows column mismatch: {ca} vs {cb}"
            )));
        }
        let mut out = self.data(a).to_vec();
        out.extend_from_slice(self.data(b));
        self.push(
            vec![ra + rb, ca],
            out,
            Op::ConcatRows { a: a.0, b: b.0 },
            "concat_rows",
        )
    }

    pub fn concat_cols(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        let (ra, ca) = self.require_2d(a, "concat_cols")?;
        let (rb, cb) = self.require_2d(b, "concat_cols")?;
        if ra != rb {
            return Err(Error::shape(format!("concat_cols row mismatch: {ra} vs {rb}")));
        }
        let av = self.data(a);
        let bv = self.data(b);
        let mut out = Vec::with_capacity(ra * (ca + cb));
        for i in 0..ra {
            out.extend_from_slice(&av[i * ca..(i + 1) * ca]);
            out.extend_from_slice(&bv[i * cb..(i + 1) * cb]);
        }
        self.push(
            vec![ra, ca + cb],
            out,
            Op::ConcatCols { a: a.0, b: b.0 },
            "concat_cols",
        )
    }

    /// Row lookup (embedding): `out[k, :] = a[indices[k], :]`.
    pub fn gather_rows(&mut self, a: TensorRef, indices: &[usize]) -> Result<TensorRef> {
        let (r, c) = self.require_2d(a, "gather_rows")?;
        if indices.is_empty() {
            return Err(Error::shape("gather_rows with empty index list".to_string()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= r) {
            return Err(Error::shape(format!(
                "gather_rows index {bad} out of range for {r} rows"
            )));
        }
        let av = self.data(a);
        let mut out = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            out.extend_from_slice(&av[i * c..(i + 1) * c]);
        }
        self.push(
            vec![indices.len(), c],
            out,
            Op::GatherRows {
                a: a.0,
                indices: indices.to_vec(),
            },
            "gather_rows",
        )
    }

    pub fn reshape(&mut self, a: TensorRef, shape: Vec<usize>) -> Result<TensorRef> {
        let numel: usize = shape.iter().product();
        if numel != self.data(a).len() {
            return Err(Error::shape(format!(
                "reshape to {shape:?} changes element count {} -> {numel}",
                self.data(a).len()
            )));
        }
        let out = self.data(a).to_vec();
        self.push(shape, out, Op::Reshape { a: a.0 }, "reshape")
    }

    /// Fold an `[n_patches, patch_len]` grid back to a series of `out_len`
    /// values, averaging positions covered by several patches. Patch `k`
    /// covers positions `[k*stride, k*stride + patch_len)`.
    pub fn overlap_fold(
        &mut self,
        a: TensorRef,
        stride: usize,
        out_len: usize,
    ) -> Result<TensorRef> {
        let (rows, patch_len) = self.require_2d(a, "overlap_fold")?;
        if stride == 0 || stride > patch_len {
            return Err(Error::shape(format!(
                "overlap_fold stride {stride} must be in [1, {patch_len}]"
            )));
        }
        let covered = (rows - 1) * stride + patch_len;
        if covered < out_len {
            return Err(Error::shape(format!(
                "overlap_fold covers {covered} positions, {out_len} requested"
            )));
        }
        let av = self.data(a);
        let mut sums = vec![0.0; out_len];
        let mut counts = vec![0usize; out_len];
        for k in 0..rows {
            for r in 0..patch_len {
                let pos = k * stride + r;
                if pos < out_len {
                    sums[pos] += av[k * patch_len + r];
                    counts[pos] += 1;
                }
            }
        }
        let out: Vec<f64> = sums
            .iter()
            .zip(&counts)
            .map(|(&s, &c)| s / c as f64)
            .collect();
        self.push(
            vec![1, out_len],
            out,
            Op::OverlapFold {
                a: a.0,
                stride,
                out_len,
            },
            "overlap_fold",
        )
    }

    pub fn sum_all(&mut self, a: TensorRef) -> Result<TensorRef> {
        let s: f64 = self.data(a).iter().sum();
        self.push(vec![1], vec![s], Op::SumAll { a: a.0 }, "sum_all")
    }

    // ── Backward ────────────────────────────────────────────────────

    /// Populate gradients of every reachable node with `requires_grad`
    /// leaves included. Errors if the loss is not scalar or if backward
    /// already ran on this graph.
    pub fn backward(&mut self, loss: TensorRef) -> Result<()> {
        if self.ran_backward {
            return Err(Error::Train(
                "backward already ran on this graph; record a fresh forward pass".to_string(),
            ));
        }
        if self.nodes[loss.0].tensor.numel() != 1 {
            return Err(Error::shape(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.ran_backward = true;
        self.nodes[loss.0].tensor.grad = Some(vec![1.0]);

        for i in (0..self.nodes.len()).rev() {
            let grad = match self.nodes[i].tensor.grad.clone() {
                Some(g) => g,
                None => continue,
            };
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf => {}
                Op::MatMul { a, b } => {
                    let (m, k) = self.nodes[a].tensor.dims2();
                    let n = self.nodes[b].tensor.dims2().1;
                    let a_data = self.nodes[a].tensor.data.clone();
                    let b_data = self.nodes[b].tensor.data.clone();
                    // dA = G * B^T
                    let bt = transpose_raw(&b_data, k, n);
                    let da = matmul_raw(&grad, &bt, m, n, k);
                    // dB = A^T * G
                    let at = transpose_raw(&a_data, m, k);
                    let db = matmul_raw(&at, &grad, k, m, n);
                    self.accumulate(a, &da);
                    self.accumulate(b, &db);
                }
                Op::Add { a, b } => {
                    self.accumulate(a, &grad);
                    self.accumulate(b, &grad);
                }
                Op::Sub { a, b } => {
                    self.accumulate(a, &grad);
                    let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
                    self.accumulate(b, &neg);
                }
                Op::Mul { a, b } => {
                    let da: Vec<f64> = grad
                        .iter()
                        .zip(&self.nodes[b].tensor.data)
                        .map(|(g, y)| g * y)
                        .collect();
                    let db: Vec<f64> = grad
                        .iter()
                        .zip(&self.nodes[a].tensor.data)
                        .map(|(g, x)| g * x)
                        .collect();
                    self.accumulate(a, &da);
                    self.accumulate(b, &db);
                }
                Op::Scale { a, factor } => {
                    let da: Vec<f64> = grad.iter().map(|g| g * factor).collect();
                    self.accumulate(a, &da);
                }
                Op::AddBias { a, bias } => {
                    self.accumulate(a, &grad);
                    let (r, c) = self.nodes[a].tensor.dims2();
                    let mut db = vec![0.0; c];
                    for i2 in 0..r {
                        for j in 0..c {
                            db[j] += grad[i2 * c + j];
                        }
                    }
                    self.accumulate(bias, &db);
                }
                Op::Gelu { a } => {
                    let da: Vec<f64> = grad
                        .iter()
                        .zip(&self.nodes[a].tensor.data)
                        .map(|(g, &x)| g * gelu_grad(x))
                        .collect();
                    self.accumulate(a, &da);
                }
                Op::SoftmaxRows { a } => {
                    let (r, c) = self.nodes[i].tensor.dims2();
                    let s = &self.nodes[i].tensor.data;
                    let mut da = vec![0.0; r * c];
                    for row in 0..r {
                        let off = row * c;
                        let dot: f64 = (0..c).map(|j| grad[off + j] * s[off + j]).sum();
                        for j in 0..c {
                            da[off + j] = s[off + j] * (grad[off + j] - dot);
                        }
                    }
                    self.accumulate(a, &da);
                }
                Op::LayerNormRows { a, gamma, beta, eps } => {
                    let (r, c) = self.nodes[a].tensor.dims2();
                    let x = self.nodes[a].tensor.data.clone();
                    let gv = self.nodes[gamma].tensor.data.clone();
                    let mut da = vec![0.0; r * c];
                    let mut dgamma = vec![0.0; c];
                    let mut dbeta = vec![0.0; c];
                    for row in 0..r {
                        let off = row * c;
                        let xs = &x[off..off + c];
                        let gs = &grad[off..off + c];
                        let mean = xs.iter().sum::<f64>() / c as f64;
                        let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
                        let inv_std = 1.0 / (var + eps).sqrt();
                        let xhat: Vec<f64> = xs.iter().map(|&v| (v - mean) * inv_std).collect();
                        for j in 0..c {
                            dgamma[j] += gs[j] * xhat[j];
                            dbeta[j] += gs[j];
                        }
                        let dxhat: Vec<f64> = (0..c).map(|j| gs[j] * gv[j]).collect();
                        let sum_dxhat: f64 = dxhat.iter().sum();
                        let sum_dxhat_xhat: f64 =
                            dxhat.iter().zip(&xhat).map(|(a2, b2)| a2 * b2).sum();
                        let cf = c as f64;
                        for j in 0..c {
                            da[off + j] = inv_std / cf
                                * (cf * dxhat[j] - sum_dxhat - xhat[j] * sum_dxhat_xhat);
                        }
                    }
                    self.accumulate(a, &da);
                    self.accumulate(gamma, &dgamma);
                    self.accumulate(beta, &dbeta);
                }
                Op::Mse { pred, target } => {
                    let n = self.nodes[pred].tensor.numel() as f64;
                    let g = grad[0];
                    let dp: Vec<f64> = self.nodes[pred]
                        .tensor
                        .data
                        .iter()
                        .zip(&self.nodes[target].tensor.data)
                        .map(|(&p, &t)| g * 2.0 * (p - t) / n)
                        .collect();
                    let dt: Vec<f64> = dp.iter().map(|v| -v).collect();
                    self.accumulate(pred, &dp);
                    self.accumulate(target, &dt);
                }
                Op::Transpose { a } => {
                    let (r, c) = self.nodes[i].tensor.dims2();
                    let da = transpose_raw(&grad, r, c);
                    self.accumulate(a, &da);
                }
                Op::SliceRows { a, start } => {
                    let (_, c) = self.nodes[a].tensor.dims2();
                    let len = self.nodes[i].tensor.dims2().0;
                    let mut da = vec![0.0; self.nodes[a].tensor.numel()];
                    da[start * c..(start + len) * c].copy_from_slice(&grad);
                    self.accumulate(a, &da);
                }
                Op::SliceCols { a, start } => {
                    let (r, c) = self.nodes[a].tensor.dims2();
                    let len = self.nodes[i].tensor.dims2().1;
                    let mut da = vec![0.0; r * c];
                    for i2 in 0..r {
                        for j in 0..len {
                            da[i2 * c + start + j] = grad[i2 * len + j];
                        }
                    }
                    self.accumulate(a, &da);
                }
                Op::ConcatRows { a, b } => {
                    let na = self.nodes[a].tensor.numel();
                    self.accumulate(a, &grad[..na]);
                    self.accumulate(b, &grad[na..]);
                }
                Op::ConcatCols { a, b } => {
                    let (r, ca) = self.nodes[a].tensor.dims2();
                    let cb = self.nodes[b].tensor.dims2().1;
                    let mut da = vec![0.0; r * ca];
                    let mut db = vec![0.0; r * cb];
                    for i2 in 0..r {
                        let off = i2 * (ca + cb);
                        da[i2 * ca..(i2 + 1) * ca].copy_from_slice(&grad[off..off + ca]);
                        db[i2 * cb..(i2 + 1) * cb].copy_from_slice(&grad[off + ca..off + ca + cb]);
                    }
                    self.accumulate(a, &da);
                    self.accumulate(b, &db);
                }
                Op::GatherRows { a, indices } => {
                    let (_, c) = self.nodes[a].tensor.dims2();
                    let mut da = vec![0.0; self.nodes[a].tensor.numel()];
                    for (k, &idx) in indices.iter().enumerate() {
                        for j in 0..c {
                            da[idx * c + j] += grad[k * c + j];
                        }
                    }
                    self.accumulate(a, &da);
                }
                Op::Reshape { a } => {
                    self.accumulate(a, &grad);
                }
                Op::OverlapFold { a, stride, out_len } => {
                    let (rows, patch_len) = self.nodes[a].tensor.dims2();
                    let mut counts = vec![0usize; out_len];
                    for k in 0..rows {
                        for r in 0..patch_len {
                            let pos = k * stride + r;
                            if pos < out_len {
                                counts[pos] += 1;
                            }
                        }
                    }
                    let mut da = vec![0.0; rows * patch_len];
                    for k in 0..rows {
                        for r in 0..patch_len {
                            let pos = k * stride + r;
                            if pos < out_len {
                                da[k * patch_len + r] = grad[pos] / counts[pos] as f64;
                            }
                        }
                    }
                    self.accumulate(a, &da);
                }
                Op::SumAll { a } => {
                    let da = vec![grad[0]; self.nodes[a].tensor.numel()];
                    self.accumulate(a, &da);
                }
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, node: usize, delta: &[f64]) {
        // Frozen leaves never materialize a gradient.
        if matches!(self.nodes[node].op, Op::Leaf) && !self.nodes[node].tensor.requires_grad {
            return;
        }
        let t = &mut self.nodes[node].tensor;
        match &mut t.grad {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta) {
                    *gi += di;
                }
            }
            None => t.grad = Some(delta.to_vec()),
        }
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
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

fn transpose_raw(a: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}

fn gelu_val(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    let inner = c * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    let sech2 = 1.0 - t * t;
    let d_inner = c * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * sech2 * d_inner
}
