use std::collections::HashMap;
use std::f64::consts::{PI, SQRT_2};

use super::{shape_err, NumericsError, ParamId, ParamStore, Result, Tensor};

const LN_EPS: f64 = 1e-5;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MulScalar(Var, Var),
    AddScalar(Var, Var),
    Gelu(Var),
    Exp(Var),
    LogSigmoid(Var),
    Conv1d {
        x: Var,
        w: Var,
        stride: usize,
        pad: usize,
        kernel: usize,
        cols: Vec<f64>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    MaskedSoftmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    MeanOverMask(Var, Vec<bool>),
    L2Normalize(Var, Vec<f64>),
    MaskRows(Var, Vec<bool>),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SumAll(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// A single-owner tape. Nodes only refer to earlier nodes, so the graph is
/// acyclic by construction.
pub struct Graph<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

/// Gradient per parameter, indexed like the store; zero where unreached.
#[derive(Debug, Clone)]
pub struct Grads(pub Vec<Vec<f64>>);

impl Grads {
    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.0[id.index()]
    }

    pub fn global_norm(&self) -> f64 {
        self.0.iter().flatten().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, c: f64) {
        self.0.iter_mut().flatten().for_each(|g| *g *= c);
    }
}

fn mat(rows: usize, cols: usize, data: Vec<f64>) -> Tensor {
    Tensor {
        shape: vec![rows, cols],
        data,
    }
}

/// C = op(A) · op(B) (+ beta · C). `ta`/`tb` mark stored-transposed operands:
/// A is m×k (stored k×m when `ta`), B is k×n (stored n×k when `tb`).
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool, c: &mut [f64], beta: f64) {
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    // SAFETY: the slices hold exactly m·k, k·n and m·n values laid out with
    // the strides passed above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn erf(x: f64) -> f64 {
    libm::erf(x)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Graph {
            store,
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn store(&self) -> &ParamStore {
        self.store
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

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    /// The scalar held by a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data[0]
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(NumericsError::NonFiniteValue { op: op_name });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        self.shape(v)
    }

    fn data(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value.data
    }

    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        let t = mat(t.rows(), t.cols(), t.data);
        self.push("constant", t, Op::Leaf)
    }

    /// The parameter as a node; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let t = self.store.get(id);
        let value = mat(t.rows(), t.cols(), t.data.clone());
        self.nodes.push(Node {
            value,
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let ((m, k), (k2, n)) = (self.dims(a), self.dims(b));
        if k != k2 {
            return Err(shape_err("matmul", format!("{m}x{k} · {k2}x{n}")));
        }
        let mut c = vec![0.0; m * n];
        gemm(m, k, n, self.data(a), false, self.data(b), false, &mut c, 0.0);
        self.push("matmul", mat(m, n, c), Op::MatMul(a, b))
    }

    /// A · Bᵀ.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let ((m, k), (n, k2)) = (self.dims(a), self.dims(b));
        if k != k2 {
            return Err(shape_err("matmul_nt", format!("{m}x{k} · ({n}x{k2})ᵀ")));
        }
        let mut c = vec![0.0; m * n];
        gemm(m, k, n, self.data(a), false, self.data(b), true, &mut c, 0.0);
        self.push("matmul_nt", mat(m, n, c), Op::MatMulNt(a, b))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(usize, usize)> {
        let (da, db) = (self.dims(a), self.dims(b));
        if da != db {
            return Err(shape_err(op, format!("{da:?} vs {db:?}")));
        }
        Ok(da)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, n) = self.same_shape("add", a, b)?;
        let v = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x + y).collect();
        self.push("add", mat(m, n, v), Op::Add(a, b))
    }

    /// Adds a 1×n row to every row of an m×n matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let ((m, n), (r, n2)) = (self.dims(a), self.dims(row));
        if r != 1 || n != n2 {
            return Err(shape_err("add_row", format!("{m}x{n} + {r}x{n2}")));
        }
        let rv = self.data(row);
        let v = self
            .data(a)
            .chunks_exact(n.max(1))
            .flat_map(|chunk| chunk.iter().zip(rv).map(|(x, y)| x + y))
            .collect();
        self.push("add_row", mat(m, n, v), Op::AddRow(a, row))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, n) = self.same_shape("mul", a, b)?;
        let v = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x * y).collect();
        self.push("mul", mat(m, n, v), Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let (m, n) = self.dims(a);
        let v = self.data(a).iter().map(|x| x * c).collect();
        self.push("scale", mat(m, n, v), Op::Scale(a, c))
    }

    fn expect_scalar(&self, op: &'static str, s: Var) -> Result<f64> {
        if self.dims(s) != (1, 1) {
            return Err(shape_err(op, format!("expected a 1x1 scalar, got {:?}", self.dims(s))));
        }
        Ok(self.scalar(s))
    }

    /// Every entry of `a` times the 1×1 node `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        let c = self.expect_scalar("mul_scalar", s)?;
        let (m, n) = self.dims(a);
        let v = self.data(a).iter().map(|x| x * c).collect();
        self.push("mul_scalar", mat(m, n, v), Op::MulScalar(a, s))
    }

    /// Every entry of `a` plus the 1×1 node `s`.
    pub fn add_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        let c = self.expect_scalar("add_scalar", s)?;
        let (m, n) = self.dims(a);
        let v = self.data(a).iter().map(|x| x + c).collect();
        self.push("add_scalar", mat(m, n, v), Op::AddScalar(a, s))
    }

    /// Gaussian error linear unit with the exact erf form.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims(a);
        let v = self.data(a).iter().map(|&x| 0.5 * x * (1.0 + erf(x / SQRT_2))).collect();
        self.push("gelu", mat(m, n, v), Op::Gelu(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims(a);
        let v = self.data(a).iter().map(|x| x.exp()).collect();
        self.push("exp", mat(m, n, v), Op::Exp(a))
    }

    /// ln σ(x), computed without overflow.
    pub fn log_sigmoid(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims(a);
        let v = self
            .data(a)
            .iter()
            .map(|&x| {
                if x >= 0.0 {
                    -(-x).exp().ln_1p()
                } else {
                    x - x.exp().ln_1p()
                }
            })
            .collect();
        self.push("log_sigmoid", mat(m, n, v), Op::LogSigmoid(a))
    }

    /// 1-D convolution over time. `x` is T×Cin, `w` is Cout×(K·Cin) with
    /// column index `k·Cin + c`; zero padding `pad` on both sides.
    /// Output length is ⌊(T + 2·pad − K) / stride⌋ + 1.
    pub fn conv1d(&mut self, x: Var, w: Var, kernel: usize, stride: usize, pad: usize) -> Result<Var> {
        let ((t, cin), (cout, wk)) = (self.dims(x), self.dims(w));
        if wk != kernel * cin || stride == 0 || kernel == 0 {
            return Err(shape_err("conv1d", format!("input {t}x{cin}, weight {cout}x{wk}, kernel {kernel}")));
        }
        if t + 2 * pad < kernel {
            return Err(shape_err("conv1d", format!("input length {t} shorter than kernel {kernel}")));
        }
        let tout = (t + 2 * pad - kernel) / stride + 1;
        let xd = self.data(x);
        let mut cols = vec![0.0; tout * wk];
        for o in 0..tout {
            for k in 0..kernel {
                let src = (o * stride + k) as isize - pad as isize;
                if src >= 0 && (src as usize) < t {
                    let s = src as usize;
                    cols[o * wk + k * cin..o * wk + (k + 1) * cin].copy_from_slice(&xd[s * cin..(s + 1) * cin]);
                }
            }
        }
        let mut out = vec![0.0; tout * cout];
        gemm(tout, wk, cout, &cols, false, self.data(w), true, &mut out, 0.0);
        self.push(
            "conv1d",
            mat(tout, cout, out),
            Op::Conv1d {
                x,
                w,
                stride,
                pad,
                kernel,
                cols,
            },
        )
    }

    /// Rows of `table` selected by `ids`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = self.dims(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(shape_err("embedding", format!("id {bad} outside table of {v} rows")));
        }
        let td = self.data(table);
        let out = ids.iter().flat_map(|&i| td[i * d..(i + 1) * d].iter().copied()).collect();
        self.push(
            "embedding",
            mat(ids.len(), d, out),
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    /// Row-wise softmax over the columns whose `key_mask` entry is true;
    /// masked columns get weight exactly 0.
    pub fn masked_softmax(&mut self, a: Var, key_mask: &[bool]) -> Result<Var> {
        let (m, n) = self.dims(a);
        if key_mask.len() != n {
            return Err(shape_err("masked_softmax", format!("{n} columns, mask of {}", key_mask.len())));
        }
        if !key_mask.iter().any(|&k| k) {
            return Err(NumericsError::AllMasked { op: "masked_softmax" });
        }
        let ad = self.data(a);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &ad[i * n..(i + 1) * n];
            let max = row
                .iter()
                .zip(key_mask)
                .filter(|(_, &k)| k)
                .fold(f64::NEG_INFINITY, |mx, (v, _)| mx.max(*v));
            let o = &mut out[i * n..(i + 1) * n];
            let mut sum = 0.0;
            for j in 0..n {
                if key_mask[j] {
                    o[j] = (row[j] - max).exp();
                    sum += o[j];
                }
            }
            o.iter_mut().for_each(|v| *v /= sum);
        }
        self.push("masked_softmax", mat(m, n, out), Op::MaskedSoftmax(a))
    }

    /// Per-row normalization to zero mean and unit variance (eps 1e-5), then
    /// `gain ⊙ x̂ + bias` with 1×n gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.dims(x);
        if self.dims(gain) != (1, n) || self.dims(bias) != (1, n) {
            return Err(shape_err("layer_norm", format!("{m}x{n} with gain {:?}", self.dims(gain))));
        }
        let (xd, g, b) = (self.data(x), self.data(gain), self.data(bias));
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &xd[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std[i] = is;
            for j in 0..n {
                let h = (row[j] - mean) * is;
                xhat[i * n + j] = h;
                out[i * n + j] = g[j] * h + b[j];
            }
        }
        self.push(
            "layer_norm",
            mat(m, n, out),
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        )
    }

    /// Mean of the rows whose mask entry is true, as a 1×n row.
    pub fn mean_over_mask(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let (m, n) = self.dims(x);
        if mask.len() != m {
            return Err(shape_err("mean_over_mask", format!("{m} rows, mask of {}", mask.len())));
        }
        let count = mask.iter().filter(|&&k| k).count();
        if count == 0 {
            return Err(NumericsError::AllMasked { op: "mean_over_mask" });
        }
        let xd = self.data(x);
        let mut out = vec![0.0; n];
        for i in (0..m).filter(|&i| mask[i]) {
            for (o, v) in out.iter_mut().zip(&xd[i * n..(i + 1) * n]) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|v| *v /= count as f64);
        self.push("mean_over_mask", mat(1, n, out), Op::MeanOverMask(x, mask.to_vec()))
    }

    /// Scales every row to unit L2 norm.
    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.dims(x);
        let xd = self.data(x);
        let mut norms = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &xd[i * n..(i + 1) * n];
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(NumericsError::ZeroNorm { op: "l2_normalize" });
            }
            norms[i] = norm;
            for j in 0..n {
                out[i * n + j] = row[j] / norm;
            }
        }
        self.push("l2_normalize", mat(m, n, out), Op::L2Normalize(x, norms))
    }

    /// Zeroes the rows whose mask entry is false.
    pub fn mask_rows(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let (m, n) = self.dims(x);
        if mask.len() != m {
            return Err(shape_err("mask_rows", format!("{m} rows, mask of {}", mask.len())));
        }
        let mut out = self.data(x).to_vec();
        for i in (0..m).filter(|&i| !mask[i]) {
            out[i * n..(i + 1) * n].iter_mut().for_each(|v| *v = 0.0);
        }
        self.push("mask_rows", mat(m, n, out), Op::MaskRows(x, mask.to_vec()))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.dims(x);
        if start >= end || end > n {
            return Err(shape_err("slice_cols", format!("{start}..{end} of {n} columns")));
        }
        let xd = self.data(x);
        let out = (0..m).flat_map(|i| xd[i * n + start..i * n + end].iter().copied()).collect();
        self.push("slice_cols", mat(m, end - start, out), Op::SliceCols(x, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let m = parts.first().map(|&p| self.dims(p).0).unwrap_or(0);
        if parts.is_empty() || parts.iter().any(|&p| self.dims(p).0 != m) {
            return Err(shape_err("concat_cols", "parts must share a row count"));
        }
        let n: usize = parts.iter().map(|&p| self.dims(p).1).sum();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for &p in parts {
                let c = self.dims(p).1;
                out.extend_from_slice(&self.data(p)[i * c..(i + 1) * c]);
            }
        }
        self.push("concat_cols", mat(m, n, out), Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let n = parts.first().map(|&p| self.dims(p).1).unwrap_or(0);
        if parts.is_empty() || parts.iter().any(|&p| self.dims(p).1 != n) {
            return Err(shape_err("concat_rows", "parts must share a column count"));
        }
        let m: usize = parts.iter().map(|&p| self.dims(p).0).sum();
        let mut out = Vec::with_capacity(m * n);
        for &p in parts {
            out.extend_from_slice(self.data(p));
        }
        self.push("concat_rows", mat(m, n, out), Op::ConcatRows(parts.to_vec()))
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let s = self.data(x).iter().sum();
        self.push("sum_all", Tensor::scalar(s), Op::SumAll(x))
    }

    /// Mean over rows of −ln softmax(logits)[target].
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (m, n) = self.dims(logits);
        if targets.len() != m || m == 0 {
            return Err(shape_err("cross_entropy", format!("{m} rows, {} targets", targets.len())));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= n) {
            return Err(shape_err("cross_entropy", format!("target {bad} outside {n} classes")));
        }
        let ld = self.data(logits);
        let mut probs = vec![0.0; m * n];
        let mut loss = 0.0;
        for i in 0..m {
            let row = &ld[i * n..(i + 1) * n];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let lse = max + sum.ln();
            for j in 0..n {
                probs[i * n + j] = (row[j] - lse).exp();
            }
            loss += lse - row[targets[i]];
        }
        self.push(
            "cross_entropy",
            Tensor::scalar(loss / m as f64),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        )
    }

    /// Gradients of the scalar `loss` with respect to every parameter.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        let shape = &self.nodes[loss.0].value.shape;
        if self.nodes[loss.0].value.len() != 1 {
            return Err(NumericsError::NotScalar(shape.clone()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        let mut out: Vec<Vec<f64>> = self.store.ids().map(|id| vec![0.0; self.store.get(id).len()]).collect();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let (m, n) = (node.value.rows(), node.value.cols());
            let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
                assert!(v.0 < i, "tape inputs must precede their node");
                let len = self.nodes[v.0].value.len();
                f(grads[v.0].get_or_insert_with(|| vec![0.0; len]));
            };
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => {
                    for (o, x) in out[id.index()].iter_mut().zip(&g) {
                        *o += x;
                    }
                }
                Op::MatMul(a, b) => {
                    let k = self.dims(*a).1;
                    acc(*a, &mut |ga| gemm(m, n, k, &g, false, self.data(*b), true, ga, 1.0));
                    acc(*b, &mut |gb| gemm(k, m, n, self.data(*a), true, &g, false, gb, 1.0));
                }
                Op::MatMulNt(a, b) => {
                    let k = self.dims(*a).1;
                    acc(*a, &mut |ga| gemm(m, n, k, &g, false, self.data(*b), false, ga, 1.0));
                    acc(*b, &mut |gb| gemm(n, m, k, &g, true, self.data(*a), false, gb, 1.0));
                }
                Op::Add(a, b) => {
                    acc(*a, &mut |ga| add_into(ga, &g));
                    acc(*b, &mut |gb| add_into(gb, &g));
                }
                Op::AddRow(a, r) => {
                    acc(*a, &mut |ga| add_into(ga, &g));
                    acc(*r, &mut |gr| {
                        for chunk in g.chunks_exact(n) {
                            add_into(gr, chunk);
                        }
                    });
                }
                Op::Mul(a, b) => {
                    let (ad, bd) = (self.data(*a), self.data(*b));
                    acc(*a, &mut |ga| ga.iter_mut().zip(&g).zip(bd).for_each(|((o, d), y)| *o += d * y));
                    acc(*b, &mut |gb| gb.iter_mut().zip(&g).zip(ad).for_each(|((o, d), x)| *o += d * x));
                }
                Op::Scale(a, c) => acc(*a, &mut |ga| ga.iter_mut().zip(&g).for_each(|(o, d)| *o += d * c)),
                Op::MulScalar(a, s) => {
                    let c = self.scalar(*s);
                    let dot: f64 = g.iter().zip(self.data(*a)).map(|(d, x)| d * x).sum();
                    acc(*a, &mut |ga| ga.iter_mut().zip(&g).for_each(|(o, d)| *o += d * c));
                    acc(*s, &mut |gs| gs[0] += dot);
                }
                Op::AddScalar(a, s) => {
                    acc(*a, &mut |ga| add_into(ga, &g));
                    let total: f64 = g.iter().sum();
                    acc(*s, &mut |gs| gs[0] += total);
                }
                Op::Gelu(a) => {
                    let ad = self.data(*a);
                    acc(*a, &mut |ga| {
                        for ((o, d), &x) in ga.iter_mut().zip(&g).zip(ad) {
                            let cdf = 0.5 * (1.0 + erf(x / SQRT_2));
                            let pdf = (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
                            *o += d * (cdf + x * pdf);
                        }
                    });
                }
                Op::Exp(a) => {
                    let y = &node.value.data;
                    acc(*a, &mut |ga| ga.iter_mut().zip(&g).zip(y).for_each(|((o, d), y)| *o += d * y));
                }
                Op::LogSigmoid(a) => {
                    let ad = self.data(*a);
                    acc(*a, &mut |ga| {
                        ga.iter_mut().zip(&g).zip(ad).for_each(|((o, d), &x)| *o += d * sigmoid(-x))
                    });
                }
                Op::Conv1d {
                    x,
                    w,
                    stride,
                    pad,
                    kernel,
                    cols,
                } => {
                    let (t, cin) = self.dims(*x);
                    let wk = kernel * cin;
                    acc(*w, &mut |gw| gemm(n, m, wk, &g, true, cols, false, gw, 1.0));
                    let mut gcols = vec![0.0; m * wk];
                    gemm(m, n, wk, &g, false, self.data(*w), false, &mut gcols, 0.0);
                    acc(*x, &mut |gx| {
                        for o in 0..m {
                            for k in 0..*kernel {
                                let src = (o * stride + k) as isize - *pad as isize;
                                if src >= 0 && (src as usize) < t {
                                    let s = src as usize;
                                    add_into(
                                        &mut gx[s * cin..(s + 1) * cin],
                                        &gcols[o * wk + k * cin..o * wk + (k + 1) * cin],
                                    );
                                }
                            }
                        }
                    });
                }
                Op::Embedding { table, ids } => {
                    acc(*table, &mut |gt| {
                        for (r, &id) in ids.iter().enumerate() {
                            add_into(&mut gt[id * n..(id + 1) * n], &g[r * n..(r + 1) * n]);
                        }
                    });
                }
                Op::MaskedSoftmax(a) => {
                    let y = &node.value.data;
                    acc(*a, &mut |ga| {
                        for i in 0..m {
                            let (yr, gr) = (&y[i * n..(i + 1) * n], &g[i * n..(i + 1) * n]);
                            let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                            for j in 0..n {
                                ga[i * n + j] += yr[j] * (gr[j] - dot);
                            }
                        }
                    });
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let gd = self.data(*gain);
                    acc(*gain, &mut |gg| {
                        for i in 0..m {
                            for j in 0..n {
                                gg[j] += g[i * n + j] * xhat[i * n + j];
                            }
                        }
                    });
                    acc(*bias, &mut |gb| {
                        for chunk in g.chunks_exact(n) {
                            add_into(gb, chunk);
                        }
                    });
                    acc(*x, &mut |gx| {
                        for i in 0..m {
                            let mut mean_d = 0.0;
                            let mut mean_dx = 0.0;
                            for j in 0..n {
                                let d = g[i * n + j] * gd[j];
                                mean_d += d;
                                mean_dx += d * xhat[i * n + j];
                            }
                            mean_d /= n as f64;
                            mean_dx /= n as f64;
                            for j in 0..n {
                                let d = g[i * n + j] * gd[j];
                                gx[i * n + j] += inv_std[i] * (d - mean_d - xhat[i * n + j] * mean_dx);
                            }
                        }
                    });
                }
                Op::MeanOverMask(x, mask) => {
                    let count = mask.iter().filter(|&&k| k).count() as f64;
                    acc(*x, &mut |gx| {
                        for (r, _) in mask.iter().enumerate().filter(|(_, &k)| k) {
                            for j in 0..n {
                                gx[r * n + j] += g[j] / count;
                            }
                        }
                    });
                }
                Op::L2Normalize(x, norms) => {
                    let y = &node.value.data;
                    acc(*x, &mut |gx| {
                        for i in 0..m {
                            let (yr, gr) = (&y[i * n..(i + 1) * n], &g[i * n..(i + 1) * n]);
                            let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                            for j in 0..n {
                                gx[i * n + j] += (gr[j] - yr[j] * dot) / norms[i];
                            }
                        }
                    });
                }
                Op::MaskRows(x, mask) => {
                    acc(*x, &mut |gx| {
                        for i in (0..m).filter(|&i| mask[i]) {
                            add_into(&mut gx[i * n..(i + 1) * n], &g[i * n..(i + 1) * n]);
                        }
                    });
                }
                Op::SliceCols(x, start) => {
                    let src_cols = self.dims(*x).1;
                    acc(*x, &mut |gx| {
                        for i in 0..m {
                            add_into(
                                &mut gx[i * src_cols + start..i * src_cols + start + n],
                                &g[i * n..(i + 1) * n],
                            );
                        }
                    });
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let c = self.dims(p).1;
                        acc(p, &mut |gp| {
                            for i in 0..m {
                                add_into(&mut gp[i * c..(i + 1) * c], &g[i * n + offset..i * n + offset + c]);
                            }
                        });
                        offset += c;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = self.data(p).len();
                        acc(p, &mut |gp| add_into(gp, &g[offset..offset + len]));
                        offset += len;
                    }
                }
                Op::SumAll(x) => acc(*x, &mut |gx| gx.iter_mut().for_each(|o| *o += g[0])),
                Op::CrossEntropy { logits, targets, probs } => {
                    let rows = targets.len();
                    let cols = probs.len() / rows;
                    let scale = g[0] / rows as f64;
                    acc(*logits, &mut |gl| {
                        for (i, &t) in targets.iter().enumerate() {
                            for j in 0..cols {
                                let onehot = if j == t { 1.0 } else { 0.0 };
                                gl[i * cols + j] += scale * (probs[i * cols + j] - onehot);
                            }
                        }
                    });
                }
            }
        }
        if out.iter().flatten().any(|v| !v.is_finite()) {
            return Err(NumericsError::NonFiniteValue { op: "backward" });
        }
        Ok(Grads(out))
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn store_with(tensors: &[(&str, Tensor)]) -> (ParamStore, Vec<ParamId>) {
        let mut s = ParamStore::new();
        let ids = tensors.iter().map(|(n, t)| s.add(*n, t.clone()).unwrap()).collect();
        (s, ids)
    }

    #[test]
    fn square_has_gradient_six() {
        let (s, ids) = store_with(&[("x", Tensor::scalar(3.0))]);
        let mut g = Graph::new(&s);
        let x = g.param(ids[0]);
        let y = g.mul(x, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(ids[0]), [6.0]);
    }

    #[test]
    fn unreached_parameter_gets_zero() {
        let (s, ids) = store_with(&[("x", Tensor::scalar(3.0)), ("p", Tensor::zeros(&[2, 2]))]);
        let mut g = Graph::new(&s);
        let x = g.param(ids[0]);
        let y = g.exp(x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(ids[1]), [0.0; 4]);
    }

    #[test]
    fn uniform_masked_softmax() {
        let s = ParamStore::new();
        let mut g = Graph::new(&s);
        let a = g.constant(Tensor::matrix(1, 6, vec![2.0; 6]).unwrap()).unwrap();
        let y = g.masked_softmax(a, &[true, true, false, true, true, false]).unwrap();
        assert_eq!(g.value(y).data, [0.25, 0.25, 0.0, 0.25, 0.25, 0.0]);
        assert!(matches!(g.masked_softmax(a, &[false; 6]), Err(NumericsError::AllMasked { .. })));
    }

    #[test]
    fn layer_norm_of_constant_is_bias() {
        let s = ParamStore::new();
        let mut g = Graph::new(&s);
        let x = g.constant(Tensor::matrix(1, 4, vec![7.0; 4]).unwrap()).unwrap();
        let gain = g.constant(Tensor::filled(&[4], 3.0)).unwrap();
        let bias = g.constant(Tensor::zeros(&[4])).unwrap();
        let y = g.layer_norm(x, gain, bias).unwrap();
        assert_eq!(g.value(y).data, [0.0; 4]);
    }

    /// Direct convolution, no im2col.
    #[allow(clippy::too_many_arguments)]
    fn conv_oracle(x: &[f64], t: usize, cin: usize, w: &[f64], cout: usize, k: usize, stride: usize, pad: usize) -> Vec<f64> {
        let tout = (t + 2 * pad - k) / stride + 1;
        let mut out = vec![0.0; tout * cout];
        for o in 0..tout {
            for co in 0..cout {
                let mut acc = 0.0;
                for kk in 0..k {
                    let src = (o * stride + kk) as isize - pad as isize;
                    if src < 0 || src as usize >= t {
                        continue;
                    }
                    for ci in 0..cin {
                        acc += x[src as usize * cin + ci] * w[co * k * cin + kk * cin + ci];
                    }
                }
                out[o * cout + co] = acc;
            }
        }
        out
    }

    #[test]
    fn strided_conv_matches_direct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (t, cin, cout) = (100, 3, 4);
        let x = Tensor::randn(&[t, cin], 1.0, &mut rng);
        let w = Tensor::randn(&[cout, 3 * cin], 1.0, &mut rng);
        let s = ParamStore::new();
        let mut g = Graph::new(&s);
        let xv = g.constant(x.clone()).unwrap();
        let wv = g.constant(w.clone()).unwrap();
        for stride in [1, 2] {
            let y = g.conv1d(xv, wv, 3, stride, 1).unwrap();
            let expected_len = if stride == 2 { 50 } else { 100 };
            assert_eq!(g.shape(y), (expected_len, cout));
            let oracle = conv_oracle(&x.data, t, cin, &w.data, cout, 3, stride, 1);
            for (a, b) in g.value(y).data.iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn masked_rows_contribute_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = ParamStore::new();
        let mut g = Graph::new(&s);
        let mut x = Tensor::randn(&[5, 3], 1.0, &mut rng);
        let mask = [true, false, true, true, false];
        let a = g.constant(x.clone()).unwrap();
        let ya = g.mean_over_mask(a, &mask).unwrap();
        x.data[3..6].iter_mut().for_each(|v| *v = 1e6);
        let b = g.constant(x).unwrap();
        let yb = g.mean_over_mask(b, &mask).unwrap();
        assert_eq!(g.value(ya), g.value(yb));
    }

    #[test]
    fn shape_errors() {
        let s = ParamStore::new();
        let mut g = Graph::new(&s);
        let a = g.constant(Tensor::zeros(&[2, 3])).unwrap();
        let b = g.constant(Tensor::zeros(&[2, 3])).unwrap();
        assert!(matches!(g.matmul(a, b), Err(NumericsError::ShapeMismatch { .. })));
        assert!(g.matmul_nt(a, b).is_ok());
        let z = g.constant(Tensor::zeros(&[1, 3])).unwrap();
        assert!(matches!(g.l2_normalize(z), Err(NumericsError::ZeroNorm { .. })));
        assert!(matches!(g.backward(a), Err(NumericsError::NotScalar(_))));
    }

    #[test]
    fn overflow_is_reported() {
        let s = ParamStore::new();
        let mut g = Graph::new(&s);
        let a = g.constant(Tensor::scalar(1000.0)).unwrap();
        assert!(matches!(g.exp(a), Err(NumericsError::NonFiniteValue { op: "exp" })));
        // log-sigmoid stays finite far into both tails.
        let b = g.constant(Tensor::matrix(1, 2, vec![-800.0, 800.0]).unwrap()).unwrap();
        let y = g.log_sigmoid(b).unwrap();
        assert_eq!(g.value(y).data, [-800.0, 0.0]);
    }

    /// Central finite differences over every entry of every parameter.
    fn fd_check(store: &ParamStore, f: &dyn Fn(&mut Graph) -> Var) -> f64 {
        let mut g = Graph::new(store);
        let loss = f(&mut g);
        let grads = g.backward(loss).unwrap();
        let mut worst: f64 = 0.0;
        for id in store.ids() {
            for i in 0..store.get(id).len() {
                let eval = |delta: f64| {
                    let mut s = store.clone();
                    s.get_mut(id).data[i] += delta;
                    let mut g = Graph::new(&s);
                    let l = f(&mut g);
                    g.scalar(l)
                };
                let h = 1e-5;
                let num = (eval(h) - eval(-h)) / (2.0 * h);
                let ana = grads.get(id)[i];
                let err = (ana - num).abs() / ana.abs().max(num.abs()).max(1e-8);
                if ana.abs().max(num.abs()) > 1e-6 {
                    worst = worst.max(err);
                }
            }
        }
        worst
    }

    #[test]
    fn every_primitive_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..8 {
            let (m, k, n) = (rng.gen_range(2..=5), rng.gen_range(2..=5), rng.gen_range(2..=5));
            let (s, ids) = store_with(&[
                ("a", Tensor::randn(&[m, k], 1.0, &mut rng)),
                ("b", Tensor::randn(&[k, n], 1.0, &mut rng)),
                ("c", Tensor::randn(&[n, k], 1.0, &mut rng)),
                ("row", Tensor::randn(&[n], 1.0, &mut rng)),
                ("gain", Tensor::randn(&[n], 1.0, &mut rng)),
                ("s", Tensor::scalar(0.3)),
                ("emb", Tensor::randn(&[6, n], 1.0, &mut rng)),
                ("w", Tensor::randn(&[n, 3 * n], 0.5, &mut rng)),
            ]);
            let mask: Vec<bool> = (0..m).map(|i| i == 0 || rng.gen_bool(0.6)).collect();
            let keys: Vec<bool> = (0..n).map(|j| j == 1 || rng.gen_bool(0.6)).collect();
            let ids2 = ids.clone();
            let f = move |g: &mut Graph| -> Var {
                let p: Vec<Var> = ids2.iter().map(|&i| g.param(i)).collect();
                let ab = g.matmul(p[0], p[1]).unwrap();
                let act = g.gelu(ab).unwrap();
                let h = g.add_row(act, p[3]).unwrap();
                let ln = g.layer_norm(h, p[4], p[3]).unwrap();
                let att = g.masked_softmax(ln, &keys).unwrap();
                let mixed = g.mul(att, h).unwrap();
                let conv = g.conv1d(mixed, p[7], 3, 2, 1).unwrap();
                let e = g.embedding(p[6], &[1, 4, 1]).unwrap();
                let nt = g.matmul_nt(p[0], p[2]).unwrap();
                let rows = g.mask_rows(nt, &mask).unwrap();
                let pooled = g.mean_over_mask(rows, &mask).unwrap();
                let sl = g.slice_cols(pooled, 0, n.min(2)).unwrap();
                let cat = g.concat_cols(&[sl, pooled]).unwrap();
                let unit = g.l2_normalize(cat).unwrap();
                let scaled = g.mul_scalar(unit, p[5]).unwrap();
                let shifted = g.add_scalar(scaled, p[5]).unwrap();
                let ls = g.log_sigmoid(shifted).unwrap();
                let stacked = g.concat_rows(&[conv, e]).unwrap();
                let ce = g.cross_entropy(stacked, &vec![0; g.shape(stacked).0]).unwrap();
                let t1 = g.sum_all(ls).unwrap();
                let t2 = g.scale(ce, 0.7).unwrap();
                let ex = g.exp(p[5]).unwrap();
                let l = g.add(t1, t2).unwrap();
                g.add(l, ex).unwrap()
            };
            let err = fd_check(&s, &f);
            assert!(err < 1e-6, "trial {trial}: relative error {err}");
        }
    }
}
