//! Tape-based reverse-mode differentiation.
//!
//! Every op pushes a node holding the forward result plus a record of its
//! inputs; [`Tape::backward`] walks the nodes in exact reverse execution
//! order and accumulates adjoints. Repeated `backward` calls accumulate
//! into leaf gradients without reset.

use std::sync::OnceLock;

use super::{is_suffix, Element, Tensor, TensorError};

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Value(pub(crate) usize);

struct Node<E: Element> {
    value: Tensor<E>,
    requires_grad: bool,
    rec: Record<E>,
}

enum Record<E: Element> {
    Leaf,
    Add { a: Value, b: Value },
    Sub { a: Value, b: Value },
    Mul { a: Value, b: Value },
    AddBroadcast { x: Value, t: Value },
    MulBroadcast { x: Value, t: Value },
    Scale { x: Value, factor: E },
    Matmul { a: Value, b: Value },
    TransposeLast2 { x: Value },
    SoftmaxRows { x: Value },
    LayerNorm { x: Value, gain: Value, bias: Value, mean: Vec<E>, inv_std: Vec<E> },
    BatchNormTrain { x: Value, gain: Value, bias: Value, mean: Vec<E>, inv_std: Vec<E> },
    BatchNormEval { x: Value, gain: Value, bias: Value, mean: Vec<E>, inv_std: Vec<E> },
    Gelu { x: Value },
    Concat { parts: Vec<Value> },
    Slice { x: Value, offset: usize },
    SumAll { x: Value },
    NormLast { x: Value },
}

impl<E: Element> Record<E> {
    fn name(&self) -> &'static str {
        match self {
            Record::Leaf => "leaf",
            Record::Add { .. } => "add",
            Record::Sub { .. } => "sub",
            Record::Mul { .. } => "mul",
            Record::AddBroadcast { .. } => "add_broadcast",
            Record::MulBroadcast { .. } => "mul_broadcast",
            Record::Scale { .. } => "scale",
            Record::Matmul { .. } => "matmul",
            Record::TransposeLast2 { .. } => "transpose_last2",
            Record::SoftmaxRows { .. } => "softmax_rows",
            Record::LayerNorm { .. } => "layer_norm",
            Record::BatchNormTrain { .. } => "batch_norm_train",
            Record::BatchNormEval { .. } => "batch_norm_eval",
            Record::Gelu { .. } => "gelu",
            Record::Concat { .. } => "concat_channels",
            Record::Slice { .. } => "split_channels",
            Record::SumAll { .. } => "sum_all",
            Record::NormLast { .. } => "norm_last",
        }
    }
}

fn finite_checks_enabled() -> bool {
    static FLAG: OnceLock<bool> = OnceLock::new();
    *FLAG.get_or_init(|| {
        cfg!(debug_assertions)
            || std::env::var("DCGCT_CHECK_FINITE").is_ok_and(|v| v == "1")
    })
}

/// Single-writer record of one forward pass. Batch-parallel work uses
/// independent tapes over shared (immutable) parameter tensors.
pub struct Tape<E: Element> {
    nodes: Vec<Node<E>>,
    grads: Vec<Option<Vec<E>>>,
    no_grad: bool,
    check_finite: bool,
    corrupt_adjoints: bool,
}

impl<E: Element> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> Tape<E> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            no_grad: false,
            check_finite: finite_checks_enabled(),
            corrupt_adjoints: false,
        }
    }

    /// Tape that evaluates forward only; nothing is recorded for backward.
    pub fn no_grad() -> Self {
        let mut t = Self::new();
        t.no_grad = true;
        t
    }

    /// Negative-control hook for the verification suite: perturbs the GELU
    /// adjoint so gradient checks must fail.
    pub fn debug_corrupt_adjoints(&mut self, on: bool) {
        self.corrupt_adjoints = on;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Value) -> &Tensor<E> {
        &self.nodes[v.0].value
    }

    /// Gradient of `v`, populated by [`Tape::backward`].
    pub fn grad(&self, v: Value) -> Option<&[E]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn push(&mut self, value: Tensor<E>, requires_grad: bool, rec: Record<E>) -> Result<Value, TensorError> {
        if self.check_finite && !value.all_finite() {
            return Err(TensorError::NonFinite { op: rec.name() });
        }
        let requires_grad = requires_grad && !self.no_grad;
        // Skip backward records (and their saved stats) for untracked results.
        let rec = if requires_grad { rec } else { Record::Leaf };
        self.nodes.push(Node {
            value,
            requires_grad,
            rec,
        });
        self.grads.push(None);
        Ok(Value(self.nodes.len() - 1))
    }

    fn needs_grad(&self, v: Value) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor<E>, requires_grad: bool) -> Value {
        let requires_grad = requires_grad && !self.no_grad;
        if self.check_finite {
            debug_assert!(value.all_finite(), "non-finite leaf");
        }
        self.nodes.push(Node {
            value,
            requires_grad,
            rec: Record::Leaf,
        });
        self.grads.push(None);
        Value(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<E>) -> Value {
        self.leaf(value, false)
    }

    // ---- element-wise ops ----

    fn same_shape(&self, op: &'static str, a: Value, b: Value) -> Result<(), TensorError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(TensorError::ShapeMismatch {
                op,
                details: format!("{sa:?} vs {sb:?}"),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Value, b: Value) -> Result<Value, TensorError> {
        self.same_shape("add", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let out = Tensor::new(self.value(a).shape(), data);
        let rg = self.needs_grad(a) || self.needs_grad(b);
        self.push(out, rg, Record::Add { a, b })
    }

    pub fn sub(&mut self, a: Value, b: Value) -> Result<Value, TensorError> {
        self.same_shape("sub", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x - y)
            .collect();
        let out = Tensor::new(self.value(a).shape(), data);
        let rg = self.needs_grad(a) || self.needs_grad(b);
        self.push(out, rg, Record::Sub { a, b })
    }

    pub fn mul(&mut self, a: Value, b: Value) -> Result<Value, TensorError> {
        self.same_shape("mul", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let out = Tensor::new(self.value(a).shape(), data);
        let rg = self.needs_grad(a) || self.needs_grad(b);
        self.push(out, rg, Record::Mul { a, b })
    }

    /// `x + t` where `t`'s shape is a suffix of `x`'s (e.g. a per-channel
    /// bias `[C]` or a position table `[N, C]` under a batched `[B, N, C]`).
    pub fn add_broadcast(&mut self, x: Value, t: Value) -> Result<Value, TensorError> {
        let (sx, st) = (self.value(x).shape(), self.value(t).shape());
        if !is_suffix(sx, st) {
            return Err(TensorError::ShapeMismatch {
                op: "add_broadcast",
                details: format!("{st:?} is not a suffix of {sx:?}"),
            });
        }
        let span = self.value(t).numel().max(1);
        let data = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + self.value(t).data()[i % span])
            .collect();
        let out = Tensor::new(sx, data);
        let rg = self.needs_grad(x) || self.needs_grad(t);
        self.push(out, rg, Record::AddBroadcast { x, t })
    }

    /// `x * t` with the same suffix-broadcast rule as [`Tape::add_broadcast`].
    pub fn mul_broadcast(&mut self, x: Value, t: Value) -> Result<Value, TensorError> {
        let (sx, st) = (self.value(x).shape(), self.value(t).shape());
        if !is_suffix(sx, st) {
            return Err(TensorError::ShapeMismatch {
                op: "mul_broadcast",
                details: format!("{st:?} is not a suffix of {sx:?}"),
            });
        }
        let span = self.value(t).numel().max(1);
        let data = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v * self.value(t).data()[i % span])
            .collect();
        let out = Tensor::new(sx, data);
        let rg = self.needs_grad(x) || self.needs_grad(t);
        self.push(out, rg, Record::MulBroadcast { x, t })
    }

    pub fn scale(&mut self, x: Value, factor: E) -> Result<Value, TensorError> {
        let data = self.value(x).data().iter().map(|&v| v * factor).collect();
        let out = Tensor::new(self.value(x).shape(), data);
        let rg = self.needs_grad(x);
        self.push(out, rg, Record::Scale { x, factor })
    }

    // ---- matmul ----

    /// Batched matrix product `[.., m, k] x [.., k, n] -> [.., m, n]`.
    ///
    /// Leading dims must match, or be absent on one side (that side is then
    /// shared across the other's batches).
    pub fn matmul(&mut self, a: Value, b: Value) -> Result<Value, TensorError> {
        let sa = self.value(a).shape().to_vec();
        let sb = self.value(b).shape().to_vec();
        if sa.len() < 2 || sb.len() < 2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                details: format!("operands must have rank >= 2, got {sa:?} x {sb:?}"),
            });
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        let batch_a = &sa[..sa.len() - 2];
        let batch_b = &sb[..sb.len() - 2];
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                details: format!("inner extents differ: {sa:?} x {sb:?}"),
            });
        }
        let batch: &[usize] = if batch_a == batch_b {
            batch_a
        } else if batch_b.is_empty() {
            batch_a
        } else if batch_a.is_empty() {
            batch_b
        } else {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                details: format!("incompatible batch dims: {sa:?} x {sb:?}"),
            });
        };
        let nb: usize = batch.iter().product();
        let mut out_shape = batch.to_vec();
        out_shape.push(m);
        out_shape.push(n);
        let mut out = vec![E::ZERO; nb * m * n];
        {
            let da = self.value(a).data();
            let db = self.value(b).data();
            let stride_a = if batch_a.is_empty() { 0 } else { m * k };
            let stride_b = if batch_b.is_empty() { 0 } else { k * n };
            for ib in 0..nb {
                gemm_acc(
                    &mut out[ib * m * n..(ib + 1) * m * n],
                    &da[ib * stride_a..ib * stride_a + m * k],
                    &db[ib * stride_b..ib * stride_b + k * n],
                    m,
                    k,
                    n,
                );
            }
        }
        let out = Tensor::new(&out_shape, out);
        let rg = self.needs_grad(a) || self.needs_grad(b);
        self.push(out, rg, Record::Matmul { a, b })
    }

    pub fn transpose_last2(&mut self, x: Value) -> Result<Value, TensorError> {
        let sx = self.value(x).shape().to_vec();
        if sx.len() < 2 {
            return Err(TensorError::ShapeMismatch {
                op: "transpose_last2",
                details: format!("rank must be >= 2, got {sx:?}"),
            });
        }
        let (r, c) = (sx[sx.len() - 2], sx[sx.len() - 1]);
        let mut out_shape = sx.clone();
        let len = out_shape.len();
        out_shape.swap(len - 2, len - 1);
        let nb: usize = sx[..sx.len() - 2].iter().product();
        let mut out = vec![E::ZERO; nb * r * c];
        let dx = self.value(x).data();
        for ib in 0..nb {
            let src = &dx[ib * r * c..(ib + 1) * r * c];
            let dst = &mut out[ib * r * c..(ib + 1) * r * c];
            for i in 0..r {
                for j in 0..c {
                    dst[j * r + i] = src[i * c + j];
                }
            }
        }
        let out = Tensor::new(&out_shape, out);
        let rg = self.needs_grad(x);
        self.push(out, rg, Record::TransposeLast2 { x })
    }

    // ---- normalizations & activations ----

    /// Exp-normalizes each trailing-axis row with max subtraction.
    pub fn softmax_rows(&mut self, x: Value) -> Result<Value, TensorError> {
        let t = self.value(x);
        let n = t.last_dim();
        if n == 0 {
            return Err(TensorError::ShapeMismatch {
                op: "softmax_rows",
                details: "empty trailing axis".into(),
            });
        }
        let mut out = vec![E::ZERO; t.numel()];
        for (row_out, row_in) in out.chunks_mut(n).zip(t.data().chunks(n)) {
            let mut mx = row_in[0];
            for &v in row_in {
                mx = mx.maximum(v);
            }
            let mut sum = E::ZERO;
            for (o, &v) in row_out.iter_mut().zip(row_in) {
                *o = (v - mx).exp();
                sum += *o;
            }
            for o in row_out.iter_mut() {
                *o = *o / sum;
            }
        }
        let out = Tensor::new(t.shape(), out);
        let rg = self.needs_grad(x);
        self.push(out, rg, Record::SoftmaxRows { x })
    }

    /// Per-row standardization over the trailing channel axis, then the
    /// affine `gain`/`bias` (both `[C]`). Zero-variance rows collapse to
    /// `bias` through the `eps` guard.
    pub fn layer_norm(&mut self, x: Value, gain: Value, bias: Value, eps: E) -> Result<Value, TensorError> {
        let c = self.value(x).last_dim();
        self.check_affine("layer_norm", gain, bias, c)?;
        let t = self.value(x);
        let rows = t.numel() / c.max(1);
        let mut out = vec![E::ZERO; t.numel()];
        let mut means = vec![E::ZERO; rows];
        let mut inv_stds = vec![E::ZERO; rows];
        let inv_c = E::ONE / E::from_f64(c as f64);
        let g = self.value(gain).data().to_vec();
        let b = self.value(bias).data().to_vec();
        for r in 0..rows {
            let row = &t.data()[r * c..(r + 1) * c];
            let mut mean = E::ZERO;
            for &v in row {
                mean += v;
            }
            mean = mean * inv_c;
            let mut var = E::ZERO;
            for &v in row {
                let d = v - mean;
                var += d * d;
            }
            var = var * inv_c;
            let inv_std = E::ONE / (var + eps).sqrt();
            means[r] = mean;
            inv_stds[r] = inv_std;
            for i in 0..c {
                out[r * c + i] = (row[i] - mean) * inv_std * g[i] + b[i];
            }
        }
        let out = Tensor::new(t.shape(), out);
        let rg = self.needs_grad(x) || self.needs_grad(gain) || self.needs_grad(bias);
        self.push(
            out,
            rg,
            Record::LayerNorm {
                x,
                gain,
                bias,
                mean: means,
                inv_std: inv_stds,
            },
        )
    }

    fn check_affine(&self, op: &'static str, gain: Value, bias: Value, c: usize) -> Result<(), TensorError> {
        for v in [gain, bias] {
            if self.value(v).shape() != [c] {
                return Err(TensorError::ShapeMismatch {
                    op,
                    details: format!(
                        "affine parameter shape {:?}, expected [{c}]",
                        self.value(v).shape()
                    ),
                });
            }
        }
        Ok(())
    }

    /// Train-mode batch normalization over all leading axes, per channel.
    /// Returns the output plus the population batch statistics so the caller
    /// can fold them into its running estimates.
    #[allow(clippy::type_complexity)]
    pub fn batch_norm_train(
        &mut self,
        x: Value,
        gain: Value,
        bias: Value,
        eps: E,
    ) -> Result<(Value, Vec<E>, Vec<E>), TensorError> {
        let c = self.value(x).last_dim();
        self.check_affine("batch_norm", gain, bias, c)?;
        let rows = self.value(x).numel() / c.max(1);
        if rows < 2 {
            return Err(TensorError::ShapeMismatch {
                op: "batch_norm",
                details: format!("train mode needs at least 2 rows, got {rows}"),
            });
        }
        let t = self.value(x);
        let inv_m = E::ONE / E::from_f64(rows as f64);
        let mut mean = vec![E::ZERO; c];
        let mut var = vec![E::ZERO; c];
        for r in 0..rows {
            for i in 0..c {
                mean[i] += t.data()[r * c + i];
            }
        }
        for m in mean.iter_mut() {
            *m = *m * inv_m;
        }
        for r in 0..rows {
            for i in 0..c {
                let d = t.data()[r * c + i] - mean[i];
                var[i] += d * d;
            }
        }
        for v in var.iter_mut() {
            *v = *v * inv_m;
        }
        let inv_std: Vec<E> = var.iter().map(|&v| E::ONE / (v + eps).sqrt()).collect();
        let g = self.value(gain).data().to_vec();
        let b = self.value(bias).data().to_vec();
        let mut out = vec![E::ZERO; t.numel()];
        for r in 0..rows {
            for i in 0..c {
                out[r * c + i] = (t.data()[r * c + i] - mean[i]) * inv_std[i] * g[i] + b[i];
            }
        }
        let out = Tensor::new(t.shape(), out);
        let rg = self.needs_grad(x) || self.needs_grad(gain) || self.needs_grad(bias);
        let v = self.push(
            out,
            rg,
            Record::BatchNormTrain {
                x,
                gain,
                bias,
                mean: mean.clone(),
                inv_std,
            },
        )?;
        Ok((v, mean, var))
    }

    /// Eval-mode batch normalization with fixed running statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Value,
        gain: Value,
        bias: Value,
        running_mean: &[E],
        running_var: &[E],
        eps: E,
    ) -> Result<Value, TensorError> {
        let c = self.value(x).last_dim();
        self.check_affine("batch_norm", gain, bias, c)?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(TensorError::ShapeMismatch {
                op: "batch_norm",
                details: format!(
                    "running stats length {} / {}, expected {c}",
                    running_mean.len(),
                    running_var.len()
                ),
            });
        }
        let inv_std: Vec<E> = running_var.iter().map(|&v| E::ONE / (v + eps).sqrt()).collect();
        let t = self.value(x);
        let rows = t.numel() / c.max(1);
        let g = self.value(gain).data().to_vec();
        let b = self.value(bias).data().to_vec();
        let mut out = vec![E::ZERO; t.numel()];
        for r in 0..rows {
            for i in 0..c {
                out[r * c + i] = (t.data()[r * c + i] - running_mean[i]) * inv_std[i] * g[i] + b[i];
            }
        }
        let out = Tensor::new(t.shape(), out);
        let rg = self.needs_grad(x) || self.needs_grad(gain) || self.needs_grad(bias);
        self.push(
            out,
            rg,
            Record::BatchNormEval {
                x,
                gain,
                bias,
                mean: running_mean.to_vec(),
                inv_std,
            },
        )
    }

    /// Exact Gaussian-CDF GELU, `x * phi(x)`.
    pub fn gelu(&mut self, x: Value) -> Result<Value, TensorError> {
        let data = self
            .value(x)
            .data()
            .iter()
            .map(|&v| v * gauss_cdf(v))
            .collect();
        let out = Tensor::new(self.value(x).shape(), data);
        let rg = self.needs_grad(x);
        self.push(out, rg, Record::Gelu { x })
    }

    // ---- concat / split ----

    /// Concatenates along the trailing channel axis; all leading dims must
    /// match.
    pub fn concat_channels(&mut self, parts: &[Value]) -> Result<Value, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::EmptyConcat);
        }
        let lead = self.value(parts[0]).shape()[..self.value(parts[0]).rank().saturating_sub(1)].to_vec();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.value(p).shape();
            if s.is_empty() || s[..s.len() - 1] != lead[..] {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_channels",
                    details: format!("leading dims differ: {:?} vs {lead:?}", s),
                });
            }
            widths.push(s[s.len() - 1]);
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut out_shape = lead.clone();
        out_shape.push(total);
        let mut out = vec![E::ZERO; rows * total];
        for r in 0..rows {
            let mut off = 0;
            for (&p, &w) in parts.iter().zip(&widths) {
                let src = &self.value(p).data()[r * w..(r + 1) * w];
                out[r * total + off..r * total + off + w].copy_from_slice(src);
                off += w;
            }
        }
        let out = Tensor::new(&out_shape, out);
        let rg = parts.iter().any(|&p| self.needs_grad(p));
        self.push(
            out,
            rg,
            Record::Concat {
                parts: parts.to_vec(),
            },
        )
    }

    /// Splits the trailing channel axis into the given sizes.
    /// `split_channels . concat_channels` is the identity.
    pub fn split_channels(&mut self, x: Value, sizes: &[usize]) -> Result<Vec<Value>, TensorError> {
        let s = self.value(x).shape().to_vec();
        let c = s.last().copied().unwrap_or(0);
        if sizes.iter().sum::<usize>() != c || sizes.is_empty() {
            return Err(TensorError::ShapeMismatch {
                op: "split_channels",
                details: format!("sizes {sizes:?} do not partition channel extent {c}"),
            });
        }
        let rows = self.value(x).numel() / c.max(1);
        let mut outs = Vec::with_capacity(sizes.len());
        let mut offset = 0;
        for &w in sizes {
            let mut part_shape = s[..s.len() - 1].to_vec();
            part_shape.push(w);
            let mut data = vec![E::ZERO; rows * w];
            for r in 0..rows {
                data[r * w..(r + 1) * w]
                    .copy_from_slice(&self.value(x).data()[r * c + offset..r * c + offset + w]);
            }
            let rg = self.needs_grad(x);
            let v = self.push(Tensor::new(&part_shape, data), rg, Record::Slice { x, offset })?;
            outs.push(v);
            offset += w;
        }
        Ok(outs)
    }

    // ---- reductions ----

    /// Sum of every element, as a rank-0 scalar.
    pub fn sum_all(&mut self, x: Value) -> Result<Value, TensorError> {
        let mut s = E::ZERO;
        for &v in self.value(x).data() {
            s += v;
        }
        let rg = self.needs_grad(x);
        self.push(Tensor::scalar(s), rg, Record::SumAll { x })
    }

    /// Euclidean norm over the trailing axis: `[.., D] -> [..]`.
    /// The adjoint at an exactly-zero row is defined as zero.
    pub fn norm_last(&mut self, x: Value) -> Result<Value, TensorError> {
        let t = self.value(x);
        let d = t.last_dim().max(1);
        let rows = t.numel() / d;
        let mut out = vec![E::ZERO; rows];
        for (r, o) in out.iter_mut().enumerate() {
            let mut s = E::ZERO;
            for &v in &t.data()[r * d..(r + 1) * d] {
                s += v * v;
            }
            *o = s.sqrt();
        }
        let shape = t.shape()[..t.rank().saturating_sub(1)].to_vec();
        let rg = self.needs_grad(x);
        self.push(Tensor::new(&shape, out), rg, Record::NormLast { x })
    }

    // ---- backward ----

    /// Propagates adjoints from a scalar `loss` back to every leaf that
    /// requires gradients. Calling this more than once without a fresh tape
    /// accumulates into leaf gradients.
    pub fn backward(&mut self, loss: Value) -> Result<(), TensorError> {
        let node = self.nodes.get(loss.0).ok_or(TensorError::NotOnTape)?;
        if !node.value.is_scalar() {
            return Err(TensorError::NonScalarLoss(node.value.shape().to_vec()));
        }
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        grads[loss.0].get_or_insert_with(|| vec![E::ZERO; 1])[0] += E::ONE;
        let corrupt = self.corrupt_adjoints;
        for idx in (0..=loss.0).rev() {
            if matches!(nodes[idx].rec, Record::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            distribute(nodes, grads, idx, &g, corrupt);
        }
        Ok(())
    }
}

/// `out[m,n] += a[m,k] . b[k,n]`
fn gemm_acc<E: Element>(out: &mut [E], a: &[E], b: &[E], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            let brow = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m,k] += a[m,n] . b[k,n]^T`
fn gemm_nt_acc<E: Element>(out: &mut [E], a: &[E], b: &[E], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for kk in 0..k {
            let brow = &b[kk * n..(kk + 1) * n];
            let mut s = E::ZERO;
            for (&av, &bv) in arow.iter().zip(brow) {
                s += av * bv;
            }
            out[i * k + kk] += s;
        }
    }
}

/// `out[k,n] += a[m,k]^T . b[m,n]`
fn gemm_tn_acc<E: Element>(out: &mut [E], a: &[E], b: &[E], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for kk in 0..k {
            let av = a[i * k + kk];
            let orow = &mut out[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

fn gauss_cdf<E: Element>(x: E) -> E {
    let half = E::from_f64(0.5);
    let inv_sqrt2 = E::from_f64(std::f64::consts::FRAC_1_SQRT_2);
    half * (E::ONE + (x * inv_sqrt2).erf())
}

fn gauss_pdf<E: Element>(x: E) -> E {
    let inv_sqrt_2pi = E::from_f64(1.0 / (2.0 * std::f64::consts::PI).sqrt());
    (-(x * x) * E::from_f64(0.5)).exp() * inv_sqrt_2pi
}

fn acc_into<E: Element>(
    nodes: &[Node<E>],
    grads: &mut [Option<Vec<E>>],
    v: Value,
    write: impl FnOnce(&mut [E]),
) {
    if !nodes[v.0].requires_grad {
        return;
    }
    let buf = grads[v.0].get_or_insert_with(|| vec![E::ZERO; nodes[v.0].value.numel()]);
    write(buf);
}

fn distribute<E: Element>(
    nodes: &[Node<E>],
    grads: &mut [Option<Vec<E>>],
    idx: usize,
    g: &[E],
    corrupt: bool,
) {
    match &nodes[idx].rec {
        Record::Leaf => {}
        Record::Add { a, b } => {
            acc_into(nodes, grads, *a, |ga| {
                for (o, &gv) in ga.iter_mut().zip(g) {
                    *o += gv;
                }
            });
            acc_into(nodes, grads, *b, |gb| {
                for (o, &gv) in gb.iter_mut().zip(g) {
                    *o += gv;
                }
            });
        }
        Record::Sub { a, b } => {
            acc_into(nodes, grads, *a, |ga| {
                for (o, &gv) in ga.iter_mut().zip(g) {
                    *o += gv;
                }
            });
            acc_into(nodes, grads, *b, |gb| {
                for (o, &gv) in gb.iter_mut().zip(g) {
                    *o -= gv;
                }
            });
        }
        Record::Mul { a, b } => {
            let (av, bv) = (nodes[a.0].value.data(), nodes[b.0].value.data());
            acc_into(nodes, grads, *a, |ga| {
                for i in 0..g.len() {
                    ga[i] += g[i] * bv[i];
                }
            });
            acc_into(nodes, grads, *b, |gb| {
                for i in 0..g.len() {
                    gb[i] += g[i] * av[i];
                }
            });
        }
        Record::AddBroadcast { x, t } => {
            acc_into(nodes, grads, *x, |gx| {
                for (o, &gv) in gx.iter_mut().zip(g) {
                    *o += gv;
                }
            });
            let span = nodes[t.0].value.numel().max(1);
            acc_into(nodes, grads, *t, |gt| {
                for (i, &gv) in g.iter().enumerate() {
                    gt[i % span] += gv;
                }
            });
        }
        Record::MulBroadcast { x, t } => {
            let (xv, tv) = (nodes[x.0].value.data(), nodes[t.0].value.data());
            let span = tv.len().max(1);
            acc_into(nodes, grads, *x, |gx| {
                for (i, &gv) in g.iter().enumerate() {
                    gx[i] += gv * tv[i % span];
                }
            });
            acc_into(nodes, grads, *t, |gt| {
                for (i, &gv) in g.iter().enumerate() {
                    gt[i % span] += gv * xv[i];
                }
            });
        }
        Record::Scale { x, factor } => {
            let f = *factor;
            acc_into(nodes, grads, *x, |gx| {
                for (o, &gv) in gx.iter_mut().zip(g) {
                    *o += gv * f;
                }
            });
        }
        Record::Matmul { a, b } => {
            let sa = nodes[a.0].value.shape();
            let sb = nodes[b.0].value.shape();
            let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
            let n = sb[sb.len() - 1];
            let batch_a: usize = sa[..sa.len() - 2].iter().product();
            let batch_b: usize = sb[..sb.len() - 2].iter().product();
            let nb = batch_a.max(batch_b);
            let stride_a = if sa.len() == 2 { 0 } else { m * k };
            let stride_b = if sb.len() == 2 { 0 } else { k * n };
            let (av, bv) = (nodes[a.0].value.data(), nodes[b.0].value.data());
            acc_into(nodes, grads, *a, |ga| {
                for ib in 0..nb {
                    gemm_nt_acc(
                        &mut ga[ib * stride_a..ib * stride_a + m * k],
                        &g[ib * m * n..(ib + 1) * m * n],
                        &bv[ib * stride_b..ib * stride_b + k * n],
                        m,
                        n,
                        k,
                    );
                }
            });
            acc_into(nodes, grads, *b, |gb| {
                for ib in 0..nb {
                    gemm_tn_acc(
                        &mut gb[ib * stride_b..ib * stride_b + k * n],
                        &av[ib * stride_a..ib * stride_a + m * k],
                        &g[ib * m * n..(ib + 1) * m * n],
                        m,
                        k,
                        n,
                    );
                }
            });
        }
        Record::TransposeLast2 { x } => {
            let sx = nodes[x.0].value.shape();
            let (r, c) = (sx[sx.len() - 2], sx[sx.len() - 1]);
            let nb: usize = sx[..sx.len() - 2].iter().product();
            acc_into(nodes, grads, *x, |gx| {
                for ib in 0..nb {
                    let src = &g[ib * r * c..(ib + 1) * r * c];
                    let dst = &mut gx[ib * r * c..(ib + 1) * r * c];
                    for i in 0..r {
                        for j in 0..c {
                            dst[i * c + j] += src[j * r + i];
                        }
                    }
                }
            });
        }
        Record::SoftmaxRows { x } => {
            let y = nodes[idx].value.data();
            let n = nodes[idx].value.last_dim();
            acc_into(nodes, grads, *x, |gx| {
                for r in 0..y.len() / n {
                    let yr = &y[r * n..(r + 1) * n];
                    let gr = &g[r * n..(r + 1) * n];
                    let mut dot = E::ZERO;
                    for i in 0..n {
                        dot += gr[i] * yr[i];
                    }
                    for i in 0..n {
                        gx[r * n + i] += yr[i] * (gr[i] - dot);
                    }
                }
            });
        }
        Record::LayerNorm {
            x,
            gain,
            bias,
            mean,
            inv_std,
        } => {
            let xv = nodes[x.0].value.data();
            let gv = nodes[gain.0].value.data();
            let c = nodes[gain.0].value.numel();
            let rows = xv.len() / c;
            let inv_c = E::ONE / E::from_f64(c as f64);
            acc_into(nodes, grads, *bias, |gb| {
                for r in 0..rows {
                    for i in 0..c {
                        gb[i] += g[r * c + i];
                    }
                }
            });
            acc_into(nodes, grads, *gain, |gg| {
                for r in 0..rows {
                    for i in 0..c {
                        let xhat = (xv[r * c + i] - mean[r]) * inv_std[r];
                        gg[i] += g[r * c + i] * xhat;
                    }
                }
            });
            acc_into(nodes, grads, *x, |gx| {
                for r in 0..rows {
                    let mut s1 = E::ZERO;
                    let mut s2 = E::ZERO;
                    for i in 0..c {
                        let xhat = (xv[r * c + i] - mean[r]) * inv_std[r];
                        let dxhat = g[r * c + i] * gv[i];
                        s1 += dxhat;
                        s2 += dxhat * xhat;
                    }
                    for i in 0..c {
                        let xhat = (xv[r * c + i] - mean[r]) * inv_std[r];
                        let dxhat = g[r * c + i] * gv[i];
                        gx[r * c + i] += inv_std[r] * (dxhat - s1 * inv_c - xhat * (s2 * inv_c));
                    }
                }
            });
        }
        Record::BatchNormTrain {
            x,
            gain,
            bias,
            mean,
            inv_std,
        } => {
            let xv = nodes[x.0].value.data();
            let gv = nodes[gain.0].value.data();
            let c = nodes[gain.0].value.numel();
            let rows = xv.len() / c;
            let inv_m = E::ONE / E::from_f64(rows as f64);
            acc_into(nodes, grads, *bias, |gb| {
                for r in 0..rows {
                    for i in 0..c {
                        gb[i] += g[r * c + i];
                    }
                }
            });
            acc_into(nodes, grads, *gain, |gg| {
                for r in 0..rows {
                    for i in 0..c {
                        let xhat = (xv[r * c + i] - mean[i]) * inv_std[i];
                        gg[i] += g[r * c + i] * xhat;
                    }
                }
            });
            acc_into(nodes, grads, *x, |gx| {
                let mut s1 = vec![E::ZERO; c];
                let mut s2 = vec![E::ZERO; c];
                for r in 0..rows {
                    for i in 0..c {
                        let xhat = (xv[r * c + i] - mean[i]) * inv_std[i];
                        let dxhat = g[r * c + i] * gv[i];
                        s1[i] += dxhat;
                        s2[i] += dxhat * xhat;
                    }
                }
                for r in 0..rows {
                    for i in 0..c {
                        let xhat = (xv[r * c + i] - mean[i]) * inv_std[i];
                        let dxhat = g[r * c + i] * gv[i];
                        gx[r * c + i] += inv_std[i] * (dxhat - s1[i] * inv_m - xhat * (s2[i] * inv_m));
                    }
                }
            });
        }
        Record::BatchNormEval {
            x,
            gain,
            bias,
            mean,
            inv_std,
        } => {
            let xv = nodes[x.0].value.data();
            let gv = nodes[gain.0].value.data();
            let c = nodes[gain.0].value.numel();
            let rows = xv.len() / c;
            acc_into(nodes, grads, *bias, |gb| {
                for r in 0..rows {
                    for i in 0..c {
                        gb[i] += g[r * c + i];
                    }
                }
            });
            acc_into(nodes, grads, *gain, |gg| {
                for r in 0..rows {
                    for i in 0..c {
                        let xhat = (xv[r * c + i] - mean[i]) * inv_std[i];
                        gg[i] += g[r * c + i] * xhat;
                    }
                }
            });
            acc_into(nodes, grads, *x, |gx| {
                for r in 0..rows {
                    for i in 0..c {
                        gx[r * c + i] += g[r * c + i] * gv[i] * inv_std[i];
                    }
                }
            });
        }
        Record::Gelu { x } => {
            let xv = nodes[x.0].value.data();
            // Negative-control corruption must make gradient checks fail.
            let fudge = if corrupt { E::from_f64(1.01) } else { E::ONE };
            acc_into(nodes, grads, *x, |gx| {
                for i in 0..g.len() {
                    let slope = gauss_cdf(xv[i]) + xv[i] * gauss_pdf(xv[i]);
                    gx[i] += g[i] * slope * fudge;
                }
            });
        }
        Record::Concat { parts } => {
            let total = nodes[idx].value.last_dim();
            let rows = nodes[idx].value.numel() / total.max(1);
            let mut off = 0;
            for &p in parts {
                let w = nodes[p.0].value.last_dim();
                acc_into(nodes, grads, p, |gp| {
                    for r in 0..rows {
                        for i in 0..w {
                            gp[r * w + i] += g[r * total + off + i];
                        }
                    }
                });
                off += w;
            }
        }
        Record::Slice { x, offset } => {
            let total = nodes[x.0].value.last_dim();
            let w = nodes[idx].value.last_dim();
            let rows = nodes[idx].value.numel() / w.max(1);
            let off = *offset;
            acc_into(nodes, grads, *x, |gx| {
                for r in 0..rows {
                    for i in 0..w {
                        gx[r * total + off + i] += g[r * w + i];
                    }
                }
            });
        }
        Record::SumAll { x } => {
            let gv = g[0];
            acc_into(nodes, grads, *x, |gx| {
                for o in gx.iter_mut() {
                    *o += gv;
                }
            });
        }
        Record::NormLast { x } => {
            let norms = nodes[idx].value.data();
            let xv = nodes[x.0].value.data();
            let d = nodes[x.0].value.last_dim();
            acc_into(nodes, grads, *x, |gx| {
                for (r, &nrm) in norms.iter().enumerate() {
                    if nrm == E::ZERO {
                        continue;
                    }
                    let s = g[r] / nrm;
                    for i in 0..d {
                        gx[r * d + i] += s * xv[r * d + i];
                    }
                }
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t64(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, data)
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::<f64>::new();
        let eye = tape.constant(t64(&[3, 3], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]));
        let b = tape.constant(t64(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let c = tape.matmul(eye, b).unwrap();
        assert_eq!(tape.value(c).data(), tape.value(b).data());
    }

    #[test]
    fn matmul_hand_case() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(t64(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = tape.constant(t64(&[2, 1], &[1.0, 1.0]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        assert!(matches!(
            tape.matmul(a, b),
            Err(TensorError::ShapeMismatch { op: "matmul", .. })
        ));
    }

    #[test]
    fn matmul_broadcasts_shared_weight() {
        // [2,2,3] x [3,1] -> [2,2,1]
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t64(
            &[2, 2, 3],
            &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0],
        ));
        let w = tape.constant(t64(&[3, 1], &[1.0, 2.0, 3.0]));
        let y = tape.matmul(x, w).unwrap();
        assert_eq!(tape.value(y).shape(), &[2, 2, 1]);
        assert_eq!(tape.value(y).data(), &[1.0, 2.0, 3.0, 6.0]);
    }

    #[test]
    fn softmax_uniform_and_single() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t64(&[3], &[0.0, 0.0, 0.0]));
        let y = tape.softmax_rows(x).unwrap();
        for &v in tape.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
        let one = tape.constant(t64(&[1], &[42.0]));
        let y1 = tape.softmax_rows(one).unwrap();
        assert_eq!(tape.value(y1).data(), &[1.0]);
    }

    #[test]
    fn softmax_extreme_is_stable() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t64(&[2], &[1000.0, 0.0]));
        let y = tape.softmax_rows(x).unwrap();
        let d = tape.value(y).data();
        assert!((d[0] - 1.0).abs() < 1e-12);
        assert!(d[1].abs() < 1e-12);
    }

    #[test]
    fn layer_norm_constant_row_collapses_to_bias() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t64(&[1, 4], &[3.0, 3.0, 3.0, 3.0]));
        let gain = tape.constant(Tensor::filled(&[4], 1.0));
        let bias = tape.constant(Tensor::zeros(&[4]));
        let y = tape.layer_norm(x, gain, bias, 1e-5).unwrap();
        for &v in tape.value(y).data() {
            assert!(v.abs() < 1e-9);
        }
    }

    #[test]
    fn layer_norm_hand_row() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t64(&[1, 3], &[1.0, 2.0, 3.0]));
        let gain = tape.constant(Tensor::filled(&[3], 1.0));
        let bias = tape.constant(Tensor::zeros(&[3]));
        let y = tape.layer_norm(x, gain, bias, 1e-12).unwrap();
        let want = (1.5f64).sqrt();
        let d = tape.value(y).data();
        assert!((d[0] + want).abs() < 1e-6);
        assert!(d[1].abs() < 1e-9);
        assert!((d[2] - want).abs() < 1e-6);
    }

    #[test]
    fn layer_norm_shift_invariant() {
        let row = [0.3, -1.2, 2.4, 0.9];
        let shifted: Vec<f64> = row.iter().map(|v| v + 17.0).collect();
        let mut tape = Tape::<f64>::new();
        let gain = tape.constant(Tensor::filled(&[4], 1.0));
        let bias = tape.constant(Tensor::zeros(&[4]));
        let a = tape.constant(t64(&[1, 4], &row));
        let b = tape.constant(t64(&[1, 4], &shifted));
        let ya = tape.layer_norm(a, gain, bias, 1e-9).unwrap();
        let yb = tape.layer_norm(b, gain, bias, 1e-9).unwrap();
        for (u, v) in tape.value(ya).data().iter().zip(tape.value(yb).data()) {
            assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn batch_norm_unit_variance_pair() {
        // Channel values {-1, 1}: population mean 0, variance 1.
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t64(&[2, 1], &[-1.0, 1.0]));
        let gain = tape.constant(Tensor::filled(&[1], 2.0));
        let bias = tape.constant(Tensor::zeros(&[1]));
        let (y, mean, var) = tape.batch_norm_train(x, gain, bias, 0.0).unwrap();
        assert_eq!(mean, vec![0.0]);
        assert_eq!(var, vec![1.0]);
        let d = tape.value(y).data();
        assert!((d[0] + 2.0).abs() < 1e-12);
        assert!((d[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn batch_norm_constant_channel_is_zero() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t64(&[3, 2], &[5.0, -2.0, 5.0, -2.0, 5.0, -2.0]));
        let gain = tape.constant(Tensor::filled(&[2], 1.0));
        let bias = tape.constant(Tensor::zeros(&[2]));
        let (y, _, _) = tape.batch_norm_train(x, gain, bias, 1e-5).unwrap();
        for &v in tape.value(y).data() {
            assert!(v.abs() < 1e-9);
        }
    }

    #[test]
    fn batch_norm_eval_is_deterministic() {
        let x = t64(&[2, 2], &[0.5, -0.25, 1.5, 0.75]);
        let run = |xt: &Tensor<f64>| {
            let mut tape = Tape::<f64>::new();
            let xv = tape.constant(xt.clone());
            let gain = tape.constant(Tensor::filled(&[2], 1.0));
            let bias = tape.constant(Tensor::zeros(&[2]));
            let y = tape
                .batch_norm_eval(xv, gain, bias, &[0.1, 0.2], &[1.0, 2.0], 1e-5)
                .unwrap();
            tape.value(y).data().to_vec()
        };
        assert_eq!(run(&x), run(&x));
    }

    #[test]
    fn gelu_values() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t64(&[3], &[0.0, 10.0, -10.0]));
        let y = tape.gelu(x).unwrap();
        let d = tape.value(y).data();
        assert_eq!(d[0], 0.0);
        assert!((d[1] - 10.0).abs() < 1e-6);
        assert!(d[2].abs() < 1e-6);
    }

    #[test]
    fn concat_split_round_trip_is_exact() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(t64(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = tape.constant(t64(&[2, 3], &[5.0, 6.0, 7.0, 8.0, 9.0, 10.0]));
        let cat = tape.concat_channels(&[a, b]).unwrap();
        assert_eq!(tape.value(cat).shape(), &[2, 5]);
        let parts = tape.split_channels(cat, &[2, 3]).unwrap();
        assert_eq!(tape.value(parts[0]).data(), tape.value(a).data());
        assert_eq!(tape.value(parts[1]).data(), tape.value(b).data());
    }

    #[test]
    fn concat_empty_list_errors() {
        let mut tape = Tape::<f64>::new();
        assert!(matches!(
            tape.concat_channels(&[]),
            Err(TensorError::EmptyConcat)
        ));
    }

    #[test]
    fn split_paper_sizes() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[2, 17, 160]));
        let parts = tape.split_channels(x, &[32, 128]).unwrap();
        assert_eq!(tape.value(parts[0]).shape(), &[2, 17, 32]);
        assert_eq!(tape.value(parts[1]).shape(), &[2, 17, 128]);
    }

    #[test]
    fn backward_sum_gives_ones() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t64(&[2, 3], &[1.0, -2.0, 0.5, 4.0, 0.0, 9.0]), true);
        let s = tape.sum_all(x).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn backward_quadratic_gives_x() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t64(&[4], &[1.0, -2.0, 0.5, 3.0]), true);
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum_all(sq).unwrap();
        let half = tape.scale(s, 0.5).unwrap();
        tape.backward(half).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0, -2.0, 0.5, 3.0]);
    }

    #[test]
    fn backward_accumulates_across_calls() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t64(&[2], &[1.0, 2.0]), true);
        let s = tape.sum_all(x).unwrap();
        tape.backward(s).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0, 2.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t64(&[2], &[1.0, 2.0]), true);
        assert!(matches!(
            tape.backward(x),
            Err(TensorError::NonScalarLoss(_))
        ));
    }

    #[test]
    fn forward_identical_with_and_without_recording() {
        let xt = t64(&[2, 3], &[0.5, -1.0, 2.0, 0.25, 1.5, -0.75]);
        let run = |mut tape: Tape<f64>| {
            let x = tape.leaf(xt.clone(), true);
            let g = tape.gelu(x).unwrap();
            let sm = tape.softmax_rows(g).unwrap();
            tape.value(sm).data().to_vec()
        };
        assert_eq!(run(Tape::new()), run(Tape::no_grad()));
    }

    #[test]
    fn non_finite_results_are_rejected_when_checking() {
        // Finite checks are on under debug assertions; scaling by infinity
        // makes a NaN out of the zero entry.
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t64(&[2], &[0.0, 1.0]));
        match tape.scale(x, f64::INFINITY) {
            Err(TensorError::NonFinite { op }) => assert_eq!(op, "scale"),
            other => panic!("expected a finite check failure, got {other:?}"),
        }
    }

    #[test]
    fn norm_last_zero_row_has_zero_adjoint() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t64(&[2, 3], &[0.0, 0.0, 0.0, 3.0, 4.0, 0.0]), true);
        let n = tape.norm_last(x).unwrap();
        assert_eq!(tape.value(n).data(), &[0.0, 5.0]);
        let s = tape.sum_all(n).unwrap();
        tape.backward(s).unwrap();
        let g = tape.grad(x).unwrap();
        assert_eq!(&g[..3], &[0.0, 0.0, 0.0]);
        assert!((g[3] - 0.6).abs() < 1e-12);
        assert!((g[4] - 0.8).abs() < 1e-12);
    }
}
