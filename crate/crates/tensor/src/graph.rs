use crate::error::{shape_err, Result, TensorError};
use crate::kernels;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    Gelu(Var),
    Softmax {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Concat {
        parts: Vec<Var>,
        outer: usize,
        inner: usize,
        extents: Vec<usize>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    EmbeddingLookup {
        table: Var,
        ids: Vec<usize>,
    },
    GatherRows {
        x: Var,
        idx: Vec<usize>,
    },
    ScatterAddRows {
        base: Var,
        rows: Var,
        idx: Vec<usize>,
    },
    RoutedMatMul {
        x: Var,
        w: Var,
        w_alt: Var,
        route: Vec<bool>,
    },
    Sum(Var),
    Mean(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    BceWithLogits {
        scores: Var,
        labels: Vec<f64>,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of primitive operations.
///
/// Every op appends one node whose inputs are earlier nodes, so node order
/// is a topological order and [`Graph::backward`] is a single reverse sweep.
/// A graph supports one backward pass; call [`Graph::zero_grad`] before the
/// next one.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    backward_done: bool,
}

fn dims2(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
}

fn require_matrix(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    if t.rank() != 2 {
        return shape_err(op, format!("expected a matrix, got shape {:?}", t.shape()));
    }
    Ok(dims2(t))
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: op_name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: "leaf" });
        }
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = require_matrix("matmul", self.value(a))?;
        let (k2, n) = require_matrix("matmul", self.value(b))?;
        if k != k2 {
            return shape_err("matmul", format!("[{m}x{k}] x [{k2}x{n}]"));
        }
        let mut out = vec![0.0; m * n];
        kernels::gemm_nn(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let t = Tensor::matrix(m, n, out)?;
        self.push("matmul", t, Op::MatMul(a, b), &[a, b])
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = require_matrix("matmul_t", self.value(a))?;
        let (n, k2) = require_matrix("matmul_t", self.value(b))?;
        if k != k2 {
            return shape_err("matmul_t", format!("[{m}x{k}] x [{n}x{k2}]^T"));
        }
        let mut out = vec![0.0; m * n];
        kernels::gemm_nt(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let t = Tensor::matrix(m, n, out)?;
        self.push("matmul_t", t, Op::MatMulT(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = require_matrix("transpose", self.value(a))?;
        let src = self.value(a).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        let t = Tensor::matrix(n, m, out)?;
        self.push("transpose", t, Op::Transpose(a), &[a])
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return shape_err(op, format!("{sa:?} vs {sb:?}"));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        self.push("add", t, Op::Add(a, b), &[a, b])
    }

    /// Adds a vector `b` to every slice of `x` along the last axis.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let cols = self.value(x).cols();
        if self.value(b).rank() != 1 || self.value(b).len() != cols {
            return shape_err(
                "add_bias",
                format!("bias {:?} for last extent {cols}", self.value(b).shape()),
            );
        }
        let bias = self.value(b).data();
        let data = self
            .value(x)
            .data()
            .chunks(cols)
            .flat_map(|row| row.iter().zip(bias).map(|(v, c)| v + c))
            .collect();
        let t = Tensor::new(self.value(x).shape().to_vec(), data)?;
        self.push("add_bias", t, Op::AddBias(x, b), &[x, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        self.push("mul", t, Op::Mul(a, b), &[a, b])
    }

    /// Multiplies by a fixed constant.
    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let t = self.value(x).map(|v| v * c);
        self.push("scale", t, Op::Scale(x, c), &[x])
    }

    /// Multiplies by a recorded one-element tensor (a learnable gain).
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        if !self.value(s).is_scalar() {
            return shape_err(
                "scale_by",
                format!("gain must have one element, got {:?}", self.value(s).shape()),
            );
        }
        let c = self.value(s).data()[0];
        let t = self.value(x).map(|v| v * c);
        self.push("scale_by", t, Op::ScaleBy(x, s), &[x, s])
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x).map(kernels::gelu);
        self.push("gelu", t, Op::Gelu(x), &[x])
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        let (outer, len, inner) = if shape.is_empty() {
            (1, 1, 1)
        } else {
            if axis >= shape.len() {
                return shape_err("softmax", format!("axis {axis} for shape {shape:?}"));
            }
            (
                shape[..axis].iter().product(),
                shape[axis],
                shape[axis + 1..].iter().product(),
            )
        };
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                kernels::softmax_strided(src, &mut out, o * len * inner + i, len, inner);
            }
        }
        let t = Tensor::new(shape, out)?;
        self.push(
            "softmax",
            t,
            Op::Softmax {
                x,
                outer,
                len,
                inner,
            },
            &[x],
        )
    }

    /// Normalizes each slice along the last axis to zero mean and unit
    /// variance, then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let cols = self.value(x).cols();
        for (name, p) in [("gain", gain), ("bias", bias)] {
            if self.value(p).rank() != 1 || self.value(p).len() != cols {
                return shape_err(
                    "layer_norm",
                    format!("{name} {:?} for last extent {cols}", self.value(p).shape()),
                );
            }
        }
        let src = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let rows = src.len() / cols;
        let mut xhat = vec![0.0; src.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; src.len()];
        for r in 0..rows {
            let row = &src[r * cols..(r + 1) * cols];
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for c in 0..cols {
                let h = (row[c] - mean) * rs;
                xhat[r * cols + c] = h;
                out[r * cols + c] = h * g[c] + b[c];
            }
        }
        let t = Tensor::new(self.value(x).shape().to_vec(), out)?;
        self.push(
            "layer_norm",
            t,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            &[x, gain, bias],
        )
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return shape_err("concat", "no inputs");
        };
        let base = self.value(first).shape().to_vec();
        if axis >= base.len() {
            return shape_err("concat", format!("axis {axis} for shape {base:?}"));
        }
        let mut extents = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.value(p).shape();
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return shape_err("concat", format!("{s:?} vs {base:?} along axis {axis}"));
            }
            extents.push(s[axis]);
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let total: usize = extents.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&p, &e) in parts.iter().zip(&extents) {
                let src = self.value(p).data();
                out.extend_from_slice(&src[o * e * inner..(o + 1) * e * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let t = Tensor::new(shape, out)?;
        self.push(
            "concat",
            t,
            Op::Concat {
                parts: parts.to_vec(),
                outer,
                inner,
                extents,
            },
            parts,
        )
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = require_matrix("slice_cols", self.value(x))?;
        if len == 0 || start + len > n {
            return shape_err("slice_cols", format!("[{start}, {}) of {n} columns", start + len));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(m * len);
        for r in 0..m {
            out.extend_from_slice(&src[r * n + start..r * n + start + len]);
        }
        let t = Tensor::matrix(m, len, out)?;
        self.push("slice_cols", t, Op::SliceCols { x, start }, &[x])
    }

    /// Rows of `table` selected by `ids`.
    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (rows, cols) = require_matrix("embedding_lookup", self.value(table))?;
        if ids.is_empty() {
            return shape_err("embedding_lookup", "empty id list");
        }
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            if id >= rows {
                return Err(TensorError::Index {
                    op: "embedding_lookup",
                    index: id,
                    extent: rows,
                });
            }
            out.extend_from_slice(&src[id * cols..(id + 1) * cols]);
        }
        let t = Tensor::matrix(ids.len(), cols, out)?;
        self.push(
            "embedding_lookup",
            t,
            Op::EmbeddingLookup {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        )
    }

    /// Same as [`Graph::embedding_lookup`] but for activations rather than tables.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (rows, cols) = require_matrix("gather_rows", self.value(x))?;
        if idx.is_empty() {
            return shape_err("gather_rows", "empty index list");
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            if i >= rows {
                return Err(TensorError::Index {
                    op: "gather_rows",
                    index: i,
                    extent: rows,
                });
            }
            out.extend_from_slice(&src[i * cols..(i + 1) * cols]);
        }
        let t = Tensor::matrix(idx.len(), cols, out)?;
        self.push(
            "gather_rows",
            t,
            Op::GatherRows {
                x,
                idx: idx.to_vec(),
            },
            &[x],
        )
    }

    /// `out = base; out[idx[i]] += rows[i]`
    pub fn scatter_add_rows(&mut self, base: Var, rows: Var, idx: &[usize]) -> Result<Var> {
        let (n, cols) = require_matrix("scatter_add_rows", self.value(base))?;
        let (r, c2) = require_matrix("scatter_add_rows", self.value(rows))?;
        if c2 != cols || r != idx.len() {
            return shape_err(
                "scatter_add_rows",
                format!("{r}x{c2} rows for {} indices into {n}x{cols}", idx.len()),
            );
        }
        let mut out = self.value(base).data().to_vec();
        let src = self.value(rows).data();
        for (k, &i) in idx.iter().enumerate() {
            if i >= n {
                return Err(TensorError::Index {
                    op: "scatter_add_rows",
                    index: i,
                    extent: n,
                });
            }
            for c in 0..cols {
                out[i * cols + c] += src[k * cols + c];
            }
        }
        let t = Tensor::matrix(n, cols, out)?;
        self.push(
            "scatter_add_rows",
            t,
            Op::ScatterAddRows {
                base,
                rows,
                idx: idx.to_vec(),
            },
            &[base, rows],
        )
    }

    /// Row-wise choice of weight: row `i` is multiplied by `w_alt` when
    /// `route[i]` is set and by `w` otherwise.
    pub fn routed_matmul(&mut self, x: Var, w: Var, w_alt: Var, route: &[bool]) -> Result<Var> {
        let (m, k) = require_matrix("routed_matmul", self.value(x))?;
        let (k2, n) = require_matrix("routed_matmul", self.value(w))?;
        if self.value(w_alt).shape() != self.value(w).shape() {
            return shape_err(
                "routed_matmul",
                format!(
                    "weights {:?} vs {:?}",
                    self.value(w).shape(),
                    self.value(w_alt).shape()
                ),
            );
        }
        if k != k2 || route.len() != m {
            return shape_err(
                "routed_matmul",
                format!("[{m}x{k}] x [{k2}x{n}] with {} routes", route.len()),
            );
        }
        let xs = self.value(x).data();
        let mut out = vec![0.0; m * n];
        for (i, &alt) in route.iter().enumerate() {
            let wd = if alt { self.value(w_alt) } else { self.value(w) }.data();
            kernels::gemm_nn(&xs[i * k..(i + 1) * k], wd, &mut out[i * n..(i + 1) * n], 1, k, n);
        }
        let t = Tensor::matrix(m, n, out)?;
        self.push(
            "routed_matmul",
            t,
            Op::RoutedMatMul {
                x,
                w,
                w_alt,
                route: route.to_vec(),
            },
            &[x, w, w_alt],
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push("mean", Tensor::scalar(s), Op::Mean(x), &[x])
    }

    /// Mean over rows of `-log softmax(logits_row)[target]`.
    /// A rank-1 `logits` is treated as a single row.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let l = self.value(logits);
        let cols = l.cols();
        let rows = l.rows();
        if targets.len() != rows {
            return shape_err(
                "cross_entropy",
                format!("{} targets for {rows} rows", targets.len()),
            );
        }
        let src = l.data();
        let mut probs = vec![0.0; src.len()];
        let mut loss = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            if t >= cols {
                return Err(TensorError::Index {
                    op: "cross_entropy",
                    index: t,
                    extent: cols,
                });
            }
            kernels::softmax_strided(src, &mut probs, r * cols, cols, 1);
            let row = &src[r * cols..(r + 1) * cols];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[t];
        }
        loss /= rows as f64;
        self.push(
            "cross_entropy",
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            &[logits],
        )
    }

    /// Sum of binary cross-entropy terms between `sigmoid(scores)` and `labels`.
    pub fn bce_with_logits(&mut self, scores: Var, labels: &[f64]) -> Result<Var> {
        let s = self.value(scores).data();
        if s.len() != labels.len() {
            return shape_err(
                "bce_with_logits",
                format!("{} labels for {} scores", labels.len(), s.len()),
            );
        }
        let loss = s
            .iter()
            .zip(labels)
            .map(|(&x, &y)| kernels::softplus(x) - x * y)
            .sum();
        self.push(
            "bce_with_logits",
            Tensor::scalar(loss),
            Op::BceWithLogits {
                scores,
                labels: labels.to_vec(),
            },
            &[scores],
        )
    }

    /// Multiplies by a fixed mask (already scaled by `1/keep_prob` for kept entries).
    pub fn dropout(&mut self, x: Var, mask: Vec<f64>) -> Result<Var> {
        if mask.len() != self.value(x).len() {
            return shape_err("dropout", "mask length");
        }
        let data = self
            .value(x)
            .data()
            .iter()
            .zip(&mask)
            .map(|(v, m)| v * m)
            .collect();
        let t = Tensor::new(self.value(x).shape().to_vec(), data)?;
        self.push("dropout", t, Op::Dropout { x, mask }, &[x])
    }

    /// Clears gradients so another backward pass may run.
    pub fn zero_grad(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(Tensor::new(self.value(v).shape().to_vec(), g.clone()).expect("grad shape"))
    }

    /// Reverse sweep from a scalar loss. Populates gradients for every node
    /// that requires them and is reachable from `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(TensorError::Contract(
                "backward called twice without zero_grad".into(),
            ));
        }
        if !self.value(loss).is_scalar() {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.backward_done = true;
        let Graph { nodes, grads, .. } = self;
        grads.clear();
        grads.resize(nodes.len(), None);
        grads[loss.0] = Some(vec![1.0]);

        for k in (0..=loss.0).rev() {
            let Some(g) = grads[k].take() else { continue };
            if !nodes[k].requires_grad {
                grads[k] = Some(g);
                continue;
            }
            propagate(nodes, grads, k, &g);
            grads[k] = Some(g);
        }
        Ok(())
    }
}

fn slot<'a>(nodes: &[Node], grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
    let node = &nodes[v.0];
    if !node.requires_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; node.value.len()]))
}

fn propagate(nodes: &[Node], grads: &mut [Option<Vec<f64>>], k: usize, g: &[f64]) {
    let val = |v: Var| &nodes[v.0].value;
    match &nodes[k].op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (m, kk) = dims2(val(*a));
            let n = val(*b).cols();
            let (av, bv) = (val(*a).data(), val(*b).data());
            if let Some(ga) = slot(nodes, grads, *a) {
                kernels::gemm_nt(g, bv, ga, m, n, kk);
            }
            if let Some(gb) = slot(nodes, grads, *b) {
                kernels::gemm_tn(av, g, gb, m, kk, n);
            }
        }
        Op::MatMulT(a, b) => {
            // out[m×n] = a[m×k] · b[n×k]ᵀ
            let (m, kk) = dims2(val(*a));
            let n = val(*b).rows();
            let (av, bv) = (val(*a).data(), val(*b).data());
            if let Some(ga) = slot(nodes, grads, *a) {
                kernels::gemm_nn(g, bv, ga, m, n, kk);
            }
            if let Some(gb) = slot(nodes, grads, *b) {
                kernels::gemm_tn(g, av, gb, m, n, kk);
            }
        }
        Op::Transpose(a) => {
            let (m, n) = dims2(val(*a));
            if let Some(ga) = slot(nodes, grads, *a) {
                for i in 0..m {
                    for j in 0..n {
                        ga[i * n + j] += g[j * m + i];
                    }
                }
            }
        }
        Op::Add(a, b) => {
            for v in [*a, *b] {
                if let Some(gv) = slot(nodes, grads, v) {
                    gv.iter_mut().zip(g).for_each(|(o, x)| *o += x);
                }
            }
        }
        Op::AddBias(x, b) => {
            if let Some(gx) = slot(nodes, grads, *x) {
                gx.iter_mut().zip(g).for_each(|(o, v)| *o += v);
            }
            let cols = val(*b).len();
            if let Some(gb) = slot(nodes, grads, *b) {
                for row in g.chunks(cols) {
                    gb.iter_mut().zip(row).for_each(|(o, v)| *o += v);
                }
            }
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a).data(), val(*b).data());
            if let Some(ga) = slot(nodes, grads, *a) {
                for i in 0..ga.len() {
                    ga[i] += g[i] * bv[i];
                }
            }
            if let Some(gb) = slot(nodes, grads, *b) {
                for i in 0..gb.len() {
                    gb[i] += g[i] * av[i];
                }
            }
        }
        Op::Scale(x, c) => {
            if let Some(gx) = slot(nodes, grads, *x) {
                gx.iter_mut().zip(g).for_each(|(o, v)| *o += v * c);
            }
        }
        Op::ScaleBy(x, s) => {
            let c = val(*s).data()[0];
            let xv = val(*x).data();
            if let Some(gx) = slot(nodes, grads, *x) {
                gx.iter_mut().zip(g).for_each(|(o, v)| *o += v * c);
            }
            if let Some(gs) = slot(nodes, grads, *s) {
                gs[0] += xv.iter().zip(g).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        Op::Gelu(x) => {
            let xv = val(*x).data();
            if let Some(gx) = slot(nodes, grads, *x) {
                for i in 0..gx.len() {
                    gx[i] += g[i] * kernels::gelu_grad(xv[i]);
                }
            }
        }
        Op::Softmax {
            x,
            outer,
            len,
            inner,
        } => {
            let y = nodes[k].value.data();
            if let Some(gx) = slot(nodes, grads, *x) {
                for o in 0..*outer {
                    for i in 0..*inner {
                        let base = o * len * inner + i;
                        let dot: f64 = (0..*len)
                            .map(|j| g[base + j * inner] * y[base + j * inner])
                            .sum();
                        for j in 0..*len {
                            let p = base + j * inner;
                            gx[p] += y[p] * (g[p] - dot);
                        }
                    }
                }
            }
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            rstd,
        } => {
            let cols = val(*gain).len();
            let gv = val(*gain).data();
            if let Some(gg) = slot(nodes, grads, *gain) {
                for (row_g, row_h) in g.chunks(cols).zip(xhat.chunks(cols)) {
                    for c in 0..cols {
                        gg[c] += row_g[c] * row_h[c];
                    }
                }
            }
            if let Some(gb) = slot(nodes, grads, *bias) {
                for row_g in g.chunks(cols) {
                    gb.iter_mut().zip(row_g).for_each(|(o, v)| *o += v);
                }
            }
            if let Some(gx) = slot(nodes, grads, *x) {
                let n = cols as f64;
                for (r, &rs) in rstd.iter().enumerate() {
                    let row_g = &g[r * cols..(r + 1) * cols];
                    let row_h = &xhat[r * cols..(r + 1) * cols];
                    let mut mean_d = 0.0;
                    let mut mean_dh = 0.0;
                    for c in 0..cols {
                        let d = row_g[c] * gv[c];
                        mean_d += d;
                        mean_dh += d * row_h[c];
                    }
                    mean_d /= n;
                    mean_dh /= n;
                    for c in 0..cols {
                        let d = row_g[c] * gv[c];
                        gx[r * cols + c] += rs * (d - mean_d - row_h[c] * mean_dh);
                    }
                }
            }
        }
        Op::Concat {
            parts,
            outer,
            inner,
            extents,
        } => {
            let total: usize = extents.iter().sum();
            let mut offset = 0;
            for (&p, &e) in parts.iter().zip(extents) {
                if let Some(gp) = slot(nodes, grads, p) {
                    for o in 0..*outer {
                        let src = &g[(o * total + offset) * inner..(o * total + offset + e) * inner];
                        let dst = &mut gp[o * e * inner..(o + 1) * e * inner];
                        dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
                    }
                }
                offset += e;
            }
        }
        Op::SliceCols { x, start } => {
            let n = val(*x).cols();
            let len = nodes[k].value.cols();
            if let Some(gx) = slot(nodes, grads, *x) {
                for (r, row) in g.chunks(len).enumerate() {
                    let dst = &mut gx[r * n + start..r * n + start + len];
                    dst.iter_mut().zip(row).for_each(|(d, s)| *d += s);
                }
            }
        }
        Op::EmbeddingLookup { table: x, ids: idx } | Op::GatherRows { x, idx } => {
            let cols = val(*x).cols();
            if let Some(gx) = slot(nodes, grads, *x) {
                for (r, &i) in idx.iter().enumerate() {
                    let dst = &mut gx[i * cols..(i + 1) * cols];
                    dst.iter_mut()
                        .zip(&g[r * cols..(r + 1) * cols])
                        .for_each(|(d, s)| *d += s);
                }
            }
        }
        Op::ScatterAddRows { base, rows, idx } => {
            let cols = val(*base).cols();
            if let Some(gb) = slot(nodes, grads, *base) {
                gb.iter_mut().zip(g).for_each(|(o, v)| *o += v);
            }
            if let Some(gr) = slot(nodes, grads, *rows) {
                for (r, &i) in idx.iter().enumerate() {
                    let dst = &mut gr[r * cols..(r + 1) * cols];
                    dst.iter_mut()
                        .zip(&g[i * cols..(i + 1) * cols])
                        .for_each(|(d, s)| *d += s);
                }
            }
        }
        Op::RoutedMatMul { x, w, w_alt, route } => {
            let (m, kk) = dims2(val(*x));
            let n = val(*w).cols();
            let xv = val(*x).data();
            let (wv, wav) = (val(*w).data(), val(*w_alt).data());
            if let Some(gx) = slot(nodes, grads, *x) {
                for (i, &alt) in route.iter().enumerate() {
                    let wd = if alt { wav } else { wv };
                    kernels::gemm_nt(
                        &g[i * n..(i + 1) * n],
                        wd,
                        &mut gx[i * kk..(i + 1) * kk],
                        1,
                        n,
                        kk,
                    );
                }
            }
            for (target, want_alt) in [(*w, false), (*w_alt, true)] {
                if let Some(gw) = slot(nodes, grads, target) {
                    for i in (0..m).filter(|&i| route[i] == want_alt) {
                        kernels::gemm_tn(
                            &xv[i * kk..(i + 1) * kk],
                            &g[i * n..(i + 1) * n],
                            gw,
                            1,
                            kk,
                            n,
                        );
                    }
                }
            }
        }
        Op::Sum(x) => {
            if let Some(gx) = slot(nodes, grads, *x) {
                gx.iter_mut().for_each(|o| *o += g[0]);
            }
        }
        Op::Mean(x) => {
            let n = val(*x).len() as f64;
            if let Some(gx) = slot(nodes, grads, *x) {
                gx.iter_mut().for_each(|o| *o += g[0] / n);
            }
        }
        Op::CrossEntropy {
            logits,
            targets,
            probs,
        } => {
            let cols = val(*logits).cols();
            let scale = g[0] / targets.len() as f64;
            if let Some(gl) = slot(nodes, grads, *logits) {
                for (r, &t) in targets.iter().enumerate() {
                    for c in 0..cols {
                        let onehot = if c == t { 1.0 } else { 0.0 };
                        gl[r * cols + c] += scale * (probs[r * cols + c] - onehot);
                    }
                }
            }
        }
        Op::BceWithLogits { scores, labels } => {
            let sv = val(*scores).data();
            if let Some(gs) = slot(nodes, grads, *scores) {
                for i in 0..gs.len() {
                    gs[i] += g[0] * (kernels::sigmoid(sv[i]) - labels[i]);
                }
            }
        }
        Op::Dropout { x, mask } => {
            if let Some(gx) = slot(nodes, grads, *x) {
                for i in 0..gx.len() {
                    gx[i] += g[i] * mask[i];
                }
            }
        }
    }
}
