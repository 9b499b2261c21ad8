//! Operation tape for reverse-mode differentiation.
//!
//! Nodes are appended in execution order, which is a topological order by
//! construction; `backward` walks them once in reverse. Gradients of
//! `requires_grad` leaves accumulate across backward calls until
//! [`Tape::zero_grads`]; interior adjoints are scratch per call.
//!
//! All reductions run in a fixed index order so results are bit-identical
//! across runs for identical inputs.

use super::{shape_err, Shape, Tensor, TensorError};
use std::sync::Arc;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TRef(usize);

/// Handle to a sparse matrix registered on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SparseRef(usize);

/// Sparse matrix in coordinate form, entries sorted by `(row, col)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<(u32, u32, f64)>,
}

impl SparseMatrix {
    pub fn new(rows: usize, cols: usize, mut entries: Vec<(u32, u32, f64)>) -> Self {
        entries.sort_by_key(|&(i, j, _)| (i, j));
        SparseMatrix {
            rows,
            cols,
            entries,
        }
    }

    /// Block-diagonal replication: `b` copies along the diagonal. Used to
    /// apply one graph's hop matrix to a disjoint-union batch.
    pub fn block_diag(&self, b: usize) -> Self {
        let mut entries = Vec::with_capacity(self.entries.len() * b);
        for blk in 0..b as u32 {
            let ro = blk * self.rows as u32;
            let co = blk * self.cols as u32;
            for &(i, j, v) in &self.entries {
                entries.push((i + ro, j + co, v));
            }
        }
        SparseMatrix {
            rows: self.rows * b,
            cols: self.cols * b,
            entries,
        }
    }

    /// Dense row-major materialization (test and oracle helper).
    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.rows * self.cols];
        for &(i, j, v) in &self.entries {
            out[i as usize * self.cols + j as usize] += v;
        }
        out
    }
}

/// Running batch-norm statistics (buffers, not parameters).
#[derive(Debug, Clone, PartialEq)]
pub struct BnStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl BnStats {
    pub fn new(dim: usize) -> Self {
        BnStats {
            mean: vec![0.0; dim],
            var: vec![1.0; dim],
        }
    }
}

struct BnSaved {
    x: TRef,
    gamma: TRef,
    beta: TRef,
    training: bool,
    // normalized input and the inverse std actually used by the forward
    xhat: Vec<f64>,
    invstd: Vec<f64>,
}

struct CeSaved {
    logits: TRef,
    labels: Vec<u32>,
    softmax: Vec<f64>,
}

enum Op {
    Leaf,
    Matmul { a: TRef, b: TRef },
    Add { a: TRef, b: TRef },
    Sub { a: TRef, b: TRef },
    Mul { a: TRef, b: TRef },
    Div { a: TRef, b: TRef },
    AddScalar { a: TRef },
    ScalarMul { a: TRef, c: f64 },
    AddBias { a: TRef, bias: TRef },
    Relu { a: TRef },
    Sigmoid { a: TRef },
    Softplus { a: TRef },
    Concat { parts: Vec<TRef>, axis: usize },
    GatherRows { a: TRef, idx: Arc<Vec<u32>> },
    ScatterAddRows { src: TRef, idx: Arc<Vec<u32>> },
    SumAll { a: TRef },
    MeanAll { a: TRef },
    SumAxis { a: TRef, axis: usize },
    MeanAxis { a: TRef, axis: usize },
    SumN { parts: Vec<TRef> },
    Spmm { m: SparseRef, a: TRef },
    Scale { a: TRef, s: TRef },
    Reshape { a: TRef },
    BatchNorm(Box<BnSaved>),
    CrossEntropy(Box<CeSaved>),
}

struct Node {
    op: Op,
    shape: Shape,
    value: Vec<f64>,
    needs_grad: bool,
    grad_leaf: bool,
}

/// Recorded forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    sparse: Vec<Arc<SparseMatrix>>,
    // persistent accumulators, populated only at requires-grad leaves
    leaf_grads: Vec<Option<Vec<f64>>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, shape: Shape, value: Vec<f64>, needs_grad: bool) -> TRef {
        debug_assert_eq!(shape.numel(), value.len());
        self.nodes.push(Node {
            op,
            shape,
            value,
            needs_grad,
            grad_leaf: false,
        });
        self.leaf_grads.push(None);
        TRef(self.nodes.len() - 1)
    }

    fn needs(&self, r: TRef) -> bool {
        self.nodes[r.0].needs_grad
    }

    /// Records a leaf holding a copy of `t`, honoring its `requires_grad`.
    pub fn leaf(&mut self, t: &Tensor) -> TRef {
        let r = self.push(
            Op::Leaf,
            t.shape.clone(),
            t.data.clone(),
            t.requires_grad,
        );
        self.nodes[r.0].grad_leaf = t.requires_grad;
        r
    }

    /// Records a non-differentiable constant leaf.
    pub fn constant(&mut self, shape: Shape, data: Vec<f64>) -> Result<TRef, TensorError> {
        if shape.numel() != data.len() {
            return Err(TensorError::Validation(format!(
                "constant data length {} does not match shape {shape}",
                data.len()
            )));
        }
        Ok(self.push(Op::Leaf, shape, data, false))
    }

    /// Records a differentiable leaf from raw parts.
    pub fn variable(&mut self, shape: Shape, data: Vec<f64>) -> Result<TRef, TensorError> {
        if shape.numel() != data.len() {
            return Err(TensorError::Validation(format!(
                "variable data length {} does not match shape {shape}",
                data.len()
            )));
        }
        let r = self.push(Op::Leaf, shape, data, true);
        self.nodes[r.0].grad_leaf = true;
        Ok(r)
    }

    pub fn value(&self, r: TRef) -> &[f64] {
        &self.nodes[r.0].value
    }

    pub fn shape(&self, r: TRef) -> &Shape {
        &self.nodes[r.0].shape
    }

    /// Detached copy of a recorded value.
    pub fn detach(&self, r: TRef) -> Tensor {
        Tensor {
            shape: self.nodes[r.0].shape.clone(),
            data: self.nodes[r.0].value.clone(),
            requires_grad: false,
            grad: None,
        }
    }

    /// Accumulated gradient of a requires-grad leaf, if any backward pass
    /// has reached it.
    pub fn grad(&self, r: TRef) -> Option<&[f64]> {
        self.leaf_grads[r.0].as_deref()
    }

    /// Clears all leaf gradient accumulators.
    pub fn zero_grads(&mut self) {
        for g in &mut self.leaf_grads {
            *g = None;
        }
    }

    pub fn register_sparse(&mut self, m: Arc<SparseMatrix>) -> SparseRef {
        self.sparse.push(m);
        SparseRef(self.sparse.len() - 1)
    }

    // ---- ops ----------------------------------------------------------

    /// Dense matrix product of 2-D tensors.
    pub fn matmul(&mut self, a: TRef, b: TRef) -> Result<TRef, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.ndim() != 2 || sb.ndim() != 2 || sa.cols() != sb.rows() {
            return Err(shape_err("matmul", format!("{sa} x {sb}")));
        }
        let (m, k, n) = (sa.rows(), sa.cols(), sb.cols());
        let mut out = vec![0.0; m * n];
        dgemm_nn(
            m,
            k,
            n,
            self.value(a),
            self.value(b),
            &mut out,
            1.0,
            0.0,
        );
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Matmul { a, b }, Shape::matrix(m, n), out, needs))
    }

    fn binary_elementwise(
        &mut self,
        opname: &'static str,
        a: TRef,
        b: TRef,
        f: impl Fn(f64, f64) -> f64,
        op: impl FnOnce(TRef, TRef) -> Op,
    ) -> Result<TRef, TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(
                opname,
                format!("{} vs {}", self.shape(a), self.shape(b)),
            ));
        }
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let needs = self.needs(a) || self.needs(b);
        let shape = self.shape(a).clone();
        Ok(self.push(op(a, b), shape, out, needs))
    }

    pub fn add(&mut self, a: TRef, b: TRef) -> Result<TRef, TensorError> {
        self.binary_elementwise("add", a, b, |x, y| x + y, |a, b| Op::Add { a, b })
    }

    pub fn sub(&mut self, a: TRef, b: TRef) -> Result<TRef, TensorError> {
        self.binary_elementwise("sub", a, b, |x, y| x - y, |a, b| Op::Sub { a, b })
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: TRef, b: TRef) -> Result<TRef, TensorError> {
        self.binary_elementwise("mul", a, b, |x, y| x * y, |a, b| Op::Mul { a, b })
    }

    /// Elementwise quotient.
    pub fn div(&mut self, a: TRef, b: TRef) -> Result<TRef, TensorError> {
        self.binary_elementwise("div", a, b, |x, y| x / y, |a, b| Op::Div { a, b })
    }

    pub fn add_scalar(&mut self, a: TRef, c: f64) -> TRef {
        let out: Vec<f64> = self.value(a).iter().map(|&x| x + c).collect();
        let needs = self.needs(a);
        let shape = self.shape(a).clone();
        self.push(Op::AddScalar { a }, shape, out, needs)
    }

    pub fn scalar_mul(&mut self, a: TRef, c: f64) -> TRef {
        let out: Vec<f64> = self.value(a).iter().map(|&x| c * x).collect();
        let needs = self.needs(a);
        let shape = self.shape(a).clone();
        self.push(Op::ScalarMul { a, c }, shape, out, needs)
    }

    /// Adds a row vector `bias` of length `d` to every row of a 2-D tensor.
    /// This is the only broadcast the engine supports.
    pub fn add_bias(&mut self, a: TRef, bias: TRef) -> Result<TRef, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(bias));
        if sa.ndim() != 2 || sb.ndim() != 1 || sb.0[0] != sa.cols() {
            return Err(shape_err("add_bias", format!("{sa} + {sb}")));
        }
        let (n, d) = (sa.rows(), sa.cols());
        let bv = self.value(bias);
        let mut out = Vec::with_capacity(n * d);
        for row in self.value(a).chunks_exact(d) {
            for (x, b) in row.iter().zip(bv) {
                out.push(x + b);
            }
        }
        let needs = self.needs(a) || self.needs(bias);
        Ok(self.push(Op::AddBias { a, bias }, Shape::matrix(n, d), out, needs))
    }

    /// ReLU with subgradient 0 at the kink.
    pub fn relu(&mut self, a: TRef) -> TRef {
        let out: Vec<f64> = self.value(a).iter().map(|&x| x.max(0.0)).collect();
        let needs = self.needs(a);
        let shape = self.shape(a).clone();
        self.push(Op::Relu { a }, shape, out, needs)
    }

    pub fn sigmoid(&mut self, a: TRef) -> TRef {
        let out: Vec<f64> = self.value(a).iter().map(|&x| stable_sigmoid(x)).collect();
        let needs = self.needs(a);
        let shape = self.shape(a).clone();
        self.push(Op::Sigmoid { a }, shape, out, needs)
    }

    pub fn softplus(&mut self, a: TRef) -> TRef {
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .map(|&x| x.max(0.0) + (-x.abs()).exp().ln_1p())
            .collect();
        let needs = self.needs(a);
        let shape = self.shape(a).clone();
        self.push(Op::Softplus { a }, shape, out, needs)
    }

    /// Concatenates 2-D tensors along `axis` (0 = stack rows, 1 = widen).
    pub fn concat(&mut self, parts: &[TRef], axis: usize) -> Result<TRef, TensorError> {
        if parts.is_empty() || axis > 1 {
            return Err(TensorError::Validation(
                "concat needs at least one part and axis 0 or 1".into(),
            ));
        }
        for &p in parts {
            if self.shape(p).ndim() != 2 {
                return Err(shape_err("concat", format!("{} is not 2-D", self.shape(p))));
            }
        }
        let first = self.shape(parts[0]).clone();
        let (shape, out) = if axis == 0 {
            let d = first.cols();
            let mut rows = 0;
            let mut out = Vec::new();
            for &p in parts {
                if self.shape(p).cols() != d {
                    return Err(shape_err("concat", "column counts differ".into()));
                }
                rows += self.shape(p).rows();
                out.extend_from_slice(self.value(p));
            }
            (Shape::matrix(rows, d), out)
        } else {
            let n = first.rows();
            let mut width = 0;
            for &p in parts {
                if self.shape(p).rows() != n {
                    return Err(shape_err("concat", "row counts differ".into()));
                }
                width += self.shape(p).cols();
            }
            let mut out = Vec::with_capacity(n * width);
            for r in 0..n {
                for &p in parts {
                    let d = self.shape(p).cols();
                    out.extend_from_slice(&self.value(p)[r * d..(r + 1) * d]);
                }
            }
            (Shape::matrix(n, width), out)
        };
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            shape,
            out,
            needs,
        ))
    }

    /// Selects rows of a 2-D tensor; indices may repeat.
    pub fn gather_rows(&mut self, a: TRef, idx: Arc<Vec<u32>>) -> Result<TRef, TensorError> {
        let sa = self.shape(a);
        if sa.ndim() != 2 {
            return Err(shape_err("gather_rows", format!("{sa} is not 2-D")));
        }
        let (n, d) = (sa.rows(), sa.cols());
        if let Some(&bad) = idx.iter().find(|&&i| i as usize >= n) {
            return Err(TensorError::Range(format!(
                "gather_rows index {bad} out of {n} rows"
            )));
        }
        let av = self.value(a);
        let mut out = Vec::with_capacity(idx.len() * d);
        for &i in idx.iter() {
            out.extend_from_slice(&av[i as usize * d..(i as usize + 1) * d]);
        }
        let needs = self.needs(a);
        let shape = Shape::matrix(idx.len(), d);
        Ok(self.push(Op::GatherRows { a, idx }, shape, out, needs))
    }

    /// Scatters rows of `src` into a zeroed `n_rows x d` output, adding
    /// where indices repeat. Row `r` of `src` lands on row `idx[r]`.
    pub fn scatter_add_rows(
        &mut self,
        src: TRef,
        idx: Arc<Vec<u32>>,
        n_rows: usize,
    ) -> Result<TRef, TensorError> {
        let ss = self.shape(src);
        if ss.ndim() != 2 || ss.rows() != idx.len() {
            return Err(shape_err(
                "scatter_add_rows",
                format!("{ss} with {} indices", idx.len()),
            ));
        }
        let d = ss.cols();
        if let Some(&bad) = idx.iter().find(|&&i| i as usize >= n_rows) {
            return Err(TensorError::Range(format!(
                "scatter_add_rows index {bad} out of {n_rows} rows"
            )));
        }
        let sv = self.value(src);
        let mut out = vec![0.0; n_rows * d];
        for (r, &i) in idx.iter().enumerate() {
            let dst = &mut out[i as usize * d..(i as usize + 1) * d];
            for (o, v) in dst.iter_mut().zip(&sv[r * d..(r + 1) * d]) {
                *o += v;
            }
        }
        let needs = self.needs(src);
        Ok(self.push(
            Op::ScatterAddRows { src, idx },
            Shape::matrix(n_rows, d),
            out,
            needs,
        ))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum_all(&mut self, a: TRef) -> TRef {
        let s = self.value(a).iter().sum();
        let needs = self.needs(a);
        self.push(Op::SumAll { a }, Shape::scalar(), vec![s], needs)
    }

    /// Mean of all elements, as a scalar.
    pub fn mean_all(&mut self, a: TRef) -> TRef {
        let n = self.value(a).len();
        let s: f64 = self.value(a).iter().sum();
        let needs = self.needs(a);
        self.push(Op::MeanAll { a }, Shape::scalar(), vec![s / n as f64], needs)
    }

    /// Sum of a 2-D tensor along `axis` (0 collapses rows to a length-d
    /// vector, 1 collapses columns to a length-n vector).
    pub fn sum_axis(&mut self, a: TRef, axis: usize) -> Result<TRef, TensorError> {
        let sa = self.shape(a);
        if sa.ndim() != 2 || axis > 1 {
            return Err(shape_err("sum_axis", format!("{sa} axis {axis}")));
        }
        let (n, d) = (sa.rows(), sa.cols());
        let av = self.value(a);
        let (len, out) = if axis == 0 {
            let mut out = vec![0.0; d];
            for row in av.chunks_exact(d) {
                for (o, v) in out.iter_mut().zip(row) {
                    *o += v;
                }
            }
            (d, out)
        } else {
            let out: Vec<f64> = av.chunks_exact(d).map(|row| row.iter().sum()).collect();
            (n, out)
        };
        let needs = self.needs(a);
        Ok(self.push(Op::SumAxis { a, axis }, Shape::vector(len), out, needs))
    }

    /// Mean along `axis` of a 2-D tensor.
    pub fn mean_axis(&mut self, a: TRef, axis: usize) -> Result<TRef, TensorError> {
        let sa = self.shape(a);
        if sa.ndim() != 2 || axis > 1 {
            return Err(shape_err("mean_axis", format!("{sa} axis {axis}")));
        }
        let (n, d) = (sa.rows(), sa.cols());
        let denom = if axis == 0 { n } else { d } as f64;
        let av = self.value(a);
        let (len, out) = if axis == 0 {
            let mut out = vec![0.0; d];
            for row in av.chunks_exact(d) {
                for (o, v) in out.iter_mut().zip(row) {
                    *o += v;
                }
            }
            out.iter_mut().for_each(|o| *o /= denom);
            (d, out)
        } else {
            let out: Vec<f64> = av
                .chunks_exact(d)
                .map(|row| row.iter().sum::<f64>() / denom)
                .collect();
            (n, out)
        };
        let needs = self.needs(a);
        Ok(self.push(Op::MeanAxis { a, axis }, Shape::vector(len), out, needs))
    }

    /// N-ary elementwise sum of same-shaped tensors.
    pub fn sum_n(&mut self, parts: &[TRef]) -> Result<TRef, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::Validation("sum_n of no tensors".into()));
        }
        let shape = self.shape(parts[0]).clone();
        for &p in parts {
            if self.shape(p) != &shape {
                return Err(shape_err(
                    "sum_n",
                    format!("{} vs {shape}", self.shape(p)),
                ));
            }
        }
        let mut out = self.value(parts[0]).to_vec();
        for &p in &parts[1..] {
            for (o, v) in out.iter_mut().zip(self.value(p)) {
                *o += v;
            }
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            Op::SumN {
                parts: parts.to_vec(),
            },
            shape,
            out,
            needs,
        ))
    }

    /// Sparse-dense product `M a` for a registered sparse matrix. The
    /// matrix itself is a constant, not a differentiable input.
    pub fn spmm(&mut self, m: SparseRef, a: TRef) -> Result<TRef, TensorError> {
        let mat = Arc::clone(&self.sparse[m.0]);
        let sa = self.shape(a);
        if sa.ndim() != 2 || sa.rows() != mat.cols {
            return Err(shape_err(
                "spmm",
                format!("sparse {}x{} times {sa}", mat.rows, mat.cols),
            ));
        }
        let d = sa.cols();
        let av = self.value(a);
        let mut out = vec![0.0; mat.rows * d];
        for &(i, j, v) in &mat.entries {
            let dst = &mut out[i as usize * d..(i as usize + 1) * d];
            let src = &av[j as usize * d..(j as usize + 1) * d];
            for (o, x) in dst.iter_mut().zip(src) {
                *o += v * x;
            }
        }
        let needs = self.needs(a);
        Ok(self.push(Op::Spmm { m, a }, Shape::matrix(mat.rows, d), out, needs))
    }

    /// Multiplies every element of `a` by the single element of `s`.
    pub fn scale(&mut self, a: TRef, s: TRef) -> Result<TRef, TensorError> {
        if !self.shape(s).is_scalar() {
            return Err(shape_err("scale", format!("scale factor {}", self.shape(s))));
        }
        let c = self.value(s)[0];
        let out: Vec<f64> = self.value(a).iter().map(|&x| c * x).collect();
        let needs = self.needs(a) || self.needs(s);
        let shape = self.shape(a).clone();
        Ok(self.push(Op::Scale { a, s }, shape, out, needs))
    }

    /// Reinterprets the value under a new shape with the same element count.
    pub fn reshape(&mut self, a: TRef, shape: Shape) -> Result<TRef, TensorError> {
        if shape.numel() != self.value(a).len() {
            return Err(shape_err(
                "reshape",
                format!("{} into {shape}", self.shape(a)),
            ));
        }
        let out = self.value(a).to_vec();
        let needs = self.needs(a);
        Ok(self.push(Op::Reshape { a }, shape, out, needs))
    }

    /// Batch normalization over the row axis of an `n x d` tensor.
    ///
    /// Training mode normalizes with biased batch statistics and folds the
    /// batch into `stats` (unbiased variance, torch-style). Eval mode is a
    /// pure affine map using the frozen `stats`.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        x: TRef,
        gamma: TRef,
        beta: TRef,
        stats: &mut BnStats,
        training: bool,
        momentum: f64,
        eps: f64,
    ) -> Result<TRef, TensorError> {
        let sx = self.shape(x);
        if sx.ndim() != 2 {
            return Err(shape_err("batch_norm", format!("{sx} is not 2-D")));
        }
        let (n, d) = (sx.rows(), sx.cols());
        if self.shape(gamma).0 != [d] || self.shape(beta).0 != [d] {
            return Err(shape_err(
                "batch_norm",
                format!(
                    "gamma {} / beta {} for {d} features",
                    self.shape(gamma),
                    self.shape(beta)
                ),
            ));
        }
        if stats.mean.len() != d {
            return Err(TensorError::Validation(format!(
                "running stats track {} features, input has {d}",
                stats.mean.len()
            )));
        }

        let xv = self.value(x);
        let (mean, var) = if training {
            let mut mean = vec![0.0; d];
            for row in xv.chunks_exact(d) {
                for (m, v) in mean.iter_mut().zip(row) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= n as f64);
            let mut var = vec![0.0; d];
            for row in xv.chunks_exact(d) {
                for ((vv, &m), &v) in var.iter_mut().zip(&mean).zip(row) {
                    let c = v - m;
                    *vv += c * c;
                }
            }
            var.iter_mut().for_each(|v| *v /= n as f64);
            // fold into running stats; variance unbiased when possible
            let unbias = if n > 1 {
                n as f64 / (n as f64 - 1.0)
            } else {
                1.0
            };
            for j in 0..d {
                stats.mean[j] = (1.0 - momentum) * stats.mean[j] + momentum * mean[j];
                stats.var[j] = (1.0 - momentum) * stats.var[j] + momentum * var[j] * unbias;
            }
            (mean, var)
        } else {
            (stats.mean.clone(), stats.var.clone())
        };

        let invstd: Vec<f64> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = Vec::with_capacity(n * d);
        for row in xv.chunks_exact(d) {
            for j in 0..d {
                xhat.push((row[j] - mean[j]) * invstd[j]);
            }
        }
        let gv = self.value(gamma);
        let bv = self.value(beta);
        let mut out = Vec::with_capacity(n * d);
        for row in xhat.chunks_exact(d) {
            for j in 0..d {
                out.push(gv[j] * row[j] + bv[j]);
            }
        }
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(
            Op::BatchNorm(Box::new(BnSaved {
                x,
                gamma,
                beta,
                training,
                xhat,
                invstd,
            })),
            Shape::matrix(n, d),
            out,
            needs,
        ))
    }

    /// Mean cross-entropy between row logits and integer labels.
    pub fn cross_entropy_logits(
        &mut self,
        logits: TRef,
        labels: &[u32],
    ) -> Result<TRef, TensorError> {
        let sl = self.shape(logits);
        if sl.ndim() != 2 || sl.rows() != labels.len() {
            return Err(shape_err(
                "cross_entropy_logits",
                format!("{sl} with {} labels", labels.len()),
            ));
        }
        let (b, c) = (sl.rows(), sl.cols());
        if let Some(&bad) = labels.iter().find(|&&y| y as usize >= c) {
            return Err(TensorError::Validation(format!(
                "label {bad} out of {c} classes"
            )));
        }
        let lv = self.value(logits);
        let mut softmax = Vec::with_capacity(b * c);
        let mut loss = 0.0;
        for (row, &y) in lv.chunks_exact(c).zip(labels) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for &l in row {
                z += (l - m).exp();
            }
            let lse = m + z.ln();
            loss += lse - row[y as usize];
            for &l in row {
                softmax.push((l - lse).exp());
            }
        }
        loss /= b as f64;
        let needs = self.needs(logits);
        Ok(self.push(
            Op::CrossEntropy(Box::new(CeSaved {
                logits,
                labels: labels.to_vec(),
                softmax,
            })),
            Shape::scalar(),
            vec![loss],
            needs,
        ))
    }

    // ---- backward -----------------------------------------------------

    /// Backpropagates from a scalar loss with seed 1.
    pub fn backward(&mut self, loss: TRef) -> Result<(), TensorError> {
        if !self.shape(loss).is_scalar() {
            return Err(TensorError::Validation(format!(
                "backward requires a scalar, got {}",
                self.shape(loss)
            )));
        }
        self.backward_seeded(loss, &[1.0])
    }

    /// Backpropagates an arbitrary adjoint seed from `out`. Leaf gradients
    /// accumulate across calls; interior adjoints are scratch.
    pub fn backward_seeded(&mut self, out: TRef, seed: &[f64]) -> Result<(), TensorError> {
        if seed.len() != self.value(out).len() {
            return Err(TensorError::Validation(format!(
                "seed length {} does not match output {}",
                seed.len(),
                self.shape(out)
            )));
        }
        if !self.nodes[out.0].needs_grad {
            return Ok(());
        }
        let mut adj: Vec<Option<Vec<f64>>> = Vec::with_capacity(out.0 + 1);
        adj.resize_with(out.0 + 1, || None);
        adj[out.0] = Some(seed.to_vec());

        for id in (0..=out.0).rev() {
            let Some(g) = adj[id].take() else { continue };
            if self.nodes[id].grad_leaf {
                let len = g.len();
                let acc = self.leaf_grads[id].get_or_insert_with(|| vec![0.0; len]);
                for (a, gi) in acc.iter_mut().zip(&g) {
                    *a += gi;
                }
                continue;
            }
            self.propagate(id, &g, &mut adj);
        }
        Ok(())
    }

    fn propagate(&self, id: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let needs = |r: TRef| self.nodes[r.0].needs_grad;
        let numel = |r: TRef| self.nodes[r.0].value.len();
        macro_rules! slot {
            ($r:expr) => {{
                let n = numel($r);
                adj[$r.0].get_or_insert_with(|| vec![0.0; n])
            }};
        }

        match &node.op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let (m, k) = (self.shape(*a).rows(), self.shape(*a).cols());
                let n = self.shape(*b).cols();
                if needs(*a) {
                    // dA += g . B^T
                    let bv = &self.nodes[b.0].value;
                    let da = slot!(*a);
                    dgemm_nt(m, n, k, g, bv, da, 1.0, 1.0);
                }
                if needs(*b) {
                    // dB += A^T . g
                    let av = &self.nodes[a.0].value;
                    let db = slot!(*b);
                    dgemm_tn(k, m, n, av, g, db, 1.0, 1.0);
                }
            }
            Op::Add { a, b } => {
                if needs(*a) {
                    axpy(slot!(*a), g, 1.0);
                }
                if needs(*b) {
                    axpy(slot!(*b), g, 1.0);
                }
            }
            Op::Sub { a, b } => {
                if needs(*a) {
                    axpy(slot!(*a), g, 1.0);
                }
                if needs(*b) {
                    axpy(slot!(*b), g, -1.0);
                }
            }
            Op::Mul { a, b } => {
                if needs(*a) {
                    let bv = &self.nodes[b.0].value;
                    let da = slot!(*a);
                    for ((d, &gi), &bi) in da.iter_mut().zip(g).zip(bv) {
                        *d += gi * bi;
                    }
                }
                if needs(*b) {
                    let av = &self.nodes[a.0].value;
                    let db = slot!(*b);
                    for ((d, &gi), &ai) in db.iter_mut().zip(g).zip(av) {
                        *d += gi * ai;
                    }
                }
            }
            Op::Div { a, b } => {
                let bv = &self.nodes[b.0].value;
                if needs(*a) {
                    let da = slot!(*a);
                    for ((d, &gi), &bi) in da.iter_mut().zip(g).zip(bv) {
                        *d += gi / bi;
                    }
                }
                if needs(*b) {
                    let av = &self.nodes[a.0].value;
                    let db = slot!(*b);
                    for (i, d) in db.iter_mut().enumerate() {
                        *d -= g[i] * av[i] / (bv[i] * bv[i]);
                    }
                }
            }
            Op::AddScalar { a } => {
                if needs(*a) {
                    axpy(slot!(*a), g, 1.0);
                }
            }
            Op::ScalarMul { a, c } => {
                if needs(*a) {
                    axpy(slot!(*a), g, *c);
                }
            }
            Op::AddBias { a, bias } => {
                let d = self.shape(*bias).0[0];
                if needs(*a) {
                    axpy(slot!(*a), g, 1.0);
                }
                if needs(*bias) {
                    let db = slot!(*bias);
                    for row in g.chunks_exact(d) {
                        for (b, &gi) in db.iter_mut().zip(row) {
                            *b += gi;
                        }
                    }
                }
            }
            Op::Relu { a } => {
                if needs(*a) {
                    let av = &self.nodes[a.0].value;
                    let da = slot!(*a);
                    for ((d, &gi), &x) in da.iter_mut().zip(g).zip(av) {
                        if x > 0.0 {
                            *d += gi;
                        }
                    }
                }
            }
            Op::Sigmoid { a } => {
                if needs(*a) {
                    let yv = &node.value;
                    let da = slot!(*a);
                    for ((d, &gi), &y) in da.iter_mut().zip(g).zip(yv) {
                        *d += gi * y * (1.0 - y);
                    }
                }
            }
            Op::Softplus { a } => {
                if needs(*a) {
                    let av = &self.nodes[a.0].value;
                    let da = slot!(*a);
                    for ((d, &gi), &x) in da.iter_mut().zip(g).zip(av) {
                        *d += gi * stable_sigmoid(x);
                    }
                }
            }
            Op::Concat { parts, axis } => {
                if *axis == 0 {
                    let mut offset = 0;
                    for &p in parts {
                        let len = numel(p);
                        if needs(p) {
                            axpy(slot!(p), &g[offset..offset + len], 1.0);
                        }
                        offset += len;
                    }
                } else {
                    let total_d = node.shape.cols();
                    let mut col = 0;
                    for &p in parts {
                        let d = self.shape(p).cols();
                        if needs(p) {
                            let rows = self.shape(p).rows();
                            let dp = slot!(p);
                            for r in 0..rows {
                                let src = &g[r * total_d + col..r * total_d + col + d];
                                for (o, &gi) in dp[r * d..(r + 1) * d].iter_mut().zip(src) {
                                    *o += gi;
                                }
                            }
                        }
                        col += d;
                    }
                }
            }
            Op::GatherRows { a, idx } => {
                if needs(*a) {
                    let d = self.shape(*a).cols();
                    let da = slot!(*a);
                    for (r, &i) in idx.iter().enumerate() {
                        let dst = &mut da[i as usize * d..(i as usize + 1) * d];
                        for (o, &gi) in dst.iter_mut().zip(&g[r * d..(r + 1) * d]) {
                            *o += gi;
                        }
                    }
                }
            }
            Op::ScatterAddRows { src, idx } => {
                if needs(*src) {
                    let d = self.shape(*src).cols();
                    let ds = slot!(*src);
                    for (r, &i) in idx.iter().enumerate() {
                        let from = &g[i as usize * d..(i as usize + 1) * d];
                        for (o, &gi) in ds[r * d..(r + 1) * d].iter_mut().zip(from) {
                            *o += gi;
                        }
                    }
                }
            }
            Op::SumAll { a } => {
                if needs(*a) {
                    axpy_const(slot!(*a), g[0]);
                }
            }
            Op::MeanAll { a } => {
                if needs(*a) {
                    let n = numel(*a) as f64;
                    axpy_const(slot!(*a), g[0] / n);
                }
            }
            Op::SumAxis { a, axis } => {
                if needs(*a) {
                    let d = self.shape(*a).cols();
                    let da = slot!(*a);
                    if *axis == 0 {
                        for row in da.chunks_exact_mut(d) {
                            for (o, &gi) in row.iter_mut().zip(g) {
                                *o += gi;
                            }
                        }
                    } else {
                        for (r, row) in da.chunks_exact_mut(d).enumerate() {
                            for o in row {
                                *o += g[r];
                            }
                        }
                    }
                }
            }
            Op::MeanAxis { a, axis } => {
                if needs(*a) {
                    let (n, d) = (self.shape(*a).rows(), self.shape(*a).cols());
                    let denom = if *axis == 0 { n } else { d } as f64;
                    let da = slot!(*a);
                    if *axis == 0 {
                        for row in da.chunks_exact_mut(d) {
                            for (o, &gi) in row.iter_mut().zip(g) {
                                *o += gi / denom;
                            }
                        }
                    } else {
                        for (r, row) in da.chunks_exact_mut(d).enumerate() {
                            for o in row {
                                *o += g[r] / denom;
                            }
                        }
                    }
                }
            }
            Op::SumN { parts } => {
                for &p in parts {
                    if needs(p) {
                        axpy(slot!(p), g, 1.0);
                    }
                }
            }
            Op::Spmm { m, a } => {
                if needs(*a) {
                    // adjoint applies the transpose: dx[j] += v * g[i]
                    let mat = &self.sparse[m.0];
                    let d = self.shape(*a).cols();
                    let da = slot!(*a);
                    for &(i, j, v) in &mat.entries {
                        let src = &g[i as usize * d..(i as usize + 1) * d];
                        let dst = &mut da[j as usize * d..(j as usize + 1) * d];
                        for (o, &gi) in dst.iter_mut().zip(src) {
                            *o += v * gi;
                        }
                    }
                }
            }
            Op::Scale { a, s } => {
                let c = self.nodes[s.0].value[0];
                if needs(*a) {
                    axpy(slot!(*a), g, c);
                }
                if needs(*s) {
                    let av = &self.nodes[a.0].value;
                    let mut acc = 0.0;
                    for (&gi, &ai) in g.iter().zip(av) {
                        acc += gi * ai;
                    }
                    slot!(*s)[0] += acc;
                }
            }
            Op::Reshape { a } => {
                if needs(*a) {
                    axpy(slot!(*a), g, 1.0);
                }
            }
            Op::BatchNorm(saved) => {
                let d = node.shape.cols();
                let n = node.shape.rows();
                let gv = &self.nodes[saved.gamma.0].value;
                // column reductions shared by all three gradients
                let mut sum_g = vec![0.0; d];
                let mut sum_gx = vec![0.0; d];
                for (row_g, row_x) in g.chunks_exact(d).zip(saved.xhat.chunks_exact(d)) {
                    for j in 0..d {
                        sum_g[j] += row_g[j];
                        sum_gx[j] += row_g[j] * row_x[j];
                    }
                }
                if needs(saved.beta) {
                    axpy(slot!(saved.beta), &sum_g, 1.0);
                }
                if needs(saved.gamma) {
                    axpy(slot!(saved.gamma), &sum_gx, 1.0);
                }
                if needs(saved.x) {
                    let dx = slot!(saved.x);
                    if saved.training {
                        let nf = n as f64;
                        for r in 0..n {
                            for j in 0..d {
                                let gi = g[r * d + j];
                                let xh = saved.xhat[r * d + j];
                                dx[r * d + j] += gv[j] * saved.invstd[j] / nf
                                    * (nf * gi - sum_g[j] - xh * sum_gx[j]);
                            }
                        }
                    } else {
                        for r in 0..n {
                            for j in 0..d {
                                dx[r * d + j] += g[r * d + j] * gv[j] * saved.invstd[j];
                            }
                        }
                    }
                }
            }
            Op::CrossEntropy(saved) => {
                if needs(saved.logits) {
                    let c = self.shape(saved.logits).cols();
                    let b = saved.labels.len() as f64;
                    let scale = g[0] / b;
                    let dl = slot!(saved.logits);
                    for (r, &y) in saved.labels.iter().enumerate() {
                        for j in 0..c {
                            let indicator = if j as u32 == y { 1.0 } else { 0.0 };
                            dl[r * c + j] += scale * (saved.softmax[r * c + j] - indicator);
                        }
                    }
                }
            }
        }
    }
}

fn axpy(dst: &mut [f64], src: &[f64], alpha: f64) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += alpha * s;
    }
}

fn axpy_const(dst: &mut [f64], c: f64) {
    for d in dst {
        *d += c;
    }
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// C = alpha * A(m,k) . B(k,n) + beta * C, all row-major.
#[allow(clippy::too_many_arguments)]
fn dgemm_nn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64], alpha: f64, beta: f64) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// C = alpha * A(m,k) . B(n,k)^T + beta * C; B stored row-major n x k.
#[allow(clippy::too_many_arguments)]
fn dgemm_nt(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64], alpha: f64, beta: f64) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            1,
            k as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// C = alpha * A(k,m)^T . B(k,n) + beta * C; A stored row-major k x m.
#[allow(clippy::too_many_arguments)]
fn dgemm_tn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64], alpha: f64, beta: f64) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            1,
            m as isize,
            b.as_ptr(),
            n as isize,
            1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf2(tape: &mut Tape, rows: usize, cols: usize, data: &[f64]) -> TRef {
        tape.variable(Shape::matrix(rows, cols), data.to_vec()).unwrap()
    }

    #[test]
    fn relu_forward_and_mask() {
        let mut tape = Tape::new();
        let x = tape
            .variable(Shape::vector(3), vec![-1.0, 0.0, 2.0])
            .unwrap();
        let y = tape.relu(x);
        assert_eq!(tape.value(y), &[0.0, 0.0, 2.0]);
        let s = tape.sum_all(y);
        tape.backward(s).unwrap();
        // subgradient at 0 is 0
        assert_eq!(tape.grad(x).unwrap(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn sigmoid_at_zero_is_half() {
        let mut tape = Tape::new();
        let x = tape.constant(Shape::scalar(), vec![0.0]).unwrap();
        let y = tape.sigmoid(x);
        assert_eq!(tape.value(y), &[0.5]);
    }

    #[test]
    fn matmul_matches_naive_triple_loop() {
        let mut tape = Tape::new();
        let a_data = [0.5, -1.0, 2.0, 1.5, 0.25, -0.75];
        let b_data = [1.0, 2.0, -0.5, 0.25, 3.0, -1.0];
        let a = leaf2(&mut tape, 2, 3, &a_data);
        let b = leaf2(&mut tape, 3, 2, &b_data);
        let c = tape.matmul(a, b).unwrap();
        let mut expect = [0.0; 4];
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..3 {
                    expect[i * 2 + j] += a_data[i * 3 + k] * b_data[k * 2 + j];
                }
            }
        }
        for (got, want) in tape.value(c).iter().zip(&expect) {
            assert!((got - want).abs() < 1e-14);
        }
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut tape = Tape::new();
        let x = tape
            .variable(Shape::vector(3), vec![5.0, -2.0, 0.5])
            .unwrap();
        let s = tape.sum_all(x);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_of_square_sum_is_twice_input() {
        let mut tape = Tape::new();
        let x = tape
            .variable(Shape::vector(3), vec![1.0, 2.0, 3.0])
            .unwrap();
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum_all(sq);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.variable(Shape::vector(2), vec![1.0, 2.0]).unwrap();
        assert!(matches!(
            tape.backward(x),
            Err(TensorError::Validation(_))
        ));
    }

    #[test]
    fn backward_accumulates_without_zeroing() {
        let mut tape = Tape::new();
        let x = tape.variable(Shape::vector(2), vec![1.0, 2.0]).unwrap();
        let s = tape.sum_all(x);
        tape.backward(s).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0, 2.0]);
        tape.zero_grads();
        assert!(tape.grad(x).is_none());
    }

    #[test]
    fn matmul_shape_mismatch_errors() {
        let mut tape = Tape::new();
        let a = leaf2(&mut tape, 2, 3, &[0.0; 6]);
        let b = leaf2(&mut tape, 2, 2, &[0.0; 4]);
        assert!(matches!(
            tape.matmul(a, b),
            Err(TensorError::ShapeMismatch { op: "matmul", .. })
        ));
    }

    #[test]
    fn cross_entropy_rejects_label_out_of_range() {
        let mut tape = Tape::new();
        let logits = leaf2(&mut tape, 1, 3, &[0.1, 0.2, 0.3]);
        assert!(matches!(
            tape.cross_entropy_logits(logits, &[3]),
            Err(TensorError::Validation(_))
        ));
    }

    #[test]
    fn cross_entropy_uniform_logits_is_log_c() {
        let mut tape = Tape::new();
        let logits = leaf2(&mut tape, 2, 4, &[0.0; 8]);
        let loss = tape.cross_entropy_logits(logits, &[1, 3]).unwrap();
        assert!((tape.value(loss)[0] - (4.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn gather_scatter_round_trip_rows() {
        let mut tape = Tape::new();
        let x = leaf2(&mut tape, 3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let idx = Arc::new(vec![2u32, 0]);
        let picked = tape.gather_rows(x, Arc::clone(&idx)).unwrap();
        assert_eq!(tape.value(picked), &[5.0, 6.0, 1.0, 2.0]);
        let spread = tape.scatter_add_rows(picked, idx, 3).unwrap();
        assert_eq!(tape.value(spread), &[1.0, 2.0, 0.0, 0.0, 5.0, 6.0]);
    }

    #[test]
    fn gather_rows_rejects_out_of_range() {
        let mut tape = Tape::new();
        let x = leaf2(&mut tape, 2, 2, &[0.0; 4]);
        assert!(matches!(
            tape.gather_rows(x, Arc::new(vec![2])),
            Err(TensorError::Range(_))
        ));
    }

    #[test]
    fn spmm_applies_sparse_rows() {
        let mut tape = Tape::new();
        // [[0, 2], [1, 0]] as coo
        let m = tape.register_sparse(Arc::new(SparseMatrix::new(
            2,
            2,
            vec![(0, 1, 2.0), (1, 0, 1.0)],
        )));
        let x = leaf2(&mut tape, 2, 1, &[3.0, 4.0]);
        let y = tape.spmm(m, x).unwrap();
        assert_eq!(tape.value(y), &[8.0, 3.0]);
    }

    #[test]
    fn concat_axis0_and_axis1() {
        let mut tape = Tape::new();
        let a = leaf2(&mut tape, 1, 2, &[1.0, 2.0]);
        let b = leaf2(&mut tape, 1, 2, &[3.0, 4.0]);
        let v = tape.concat(&[a, b], 0).unwrap();
        assert_eq!(tape.shape(v).0, vec![2, 2]);
        assert_eq!(tape.value(v), &[1.0, 2.0, 3.0, 4.0]);
        let h = tape.concat(&[a, b], 1).unwrap();
        assert_eq!(tape.shape(h).0, vec![1, 4]);
        assert_eq!(tape.value(h), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn bn_eval_mode_is_affine() {
        let mut tape = Tape::new();
        let gamma = tape.constant(Shape::vector(2), vec![2.0, 1.0]).unwrap();
        let beta = tape.constant(Shape::vector(2), vec![0.5, -0.5]).unwrap();
        let mut stats = BnStats {
            mean: vec![1.0, -1.0],
            var: vec![4.0, 1.0],
        };
        let check = |tape: &mut Tape, stats: &mut BnStats, data: Vec<f64>| -> Vec<f64> {
            let x = tape.constant(Shape::matrix(1, 2), data).unwrap();
            let y = tape
                .batch_norm(x, gamma, beta, stats, false, 0.1, 1e-5)
                .unwrap();
            tape.value(y).to_vec()
        };
        let y0 = check(&mut tape, &mut stats, vec![0.0, 0.0]);
        let y1 = check(&mut tape, &mut stats, vec![1.0, 2.0]);
        let y2 = check(&mut tape, &mut stats, vec![2.0, 4.0]);
        // affine: f(2x) - f(0) = 2 (f(x) - f(0))
        for j in 0..2 {
            let lhs = y2[j] - y0[j];
            let rhs = 2.0 * (y1[j] - y0[j]);
            assert!((lhs - rhs).abs() < 1e-12);
        }
        // eval mode leaves running stats untouched
        assert_eq!(stats.mean, vec![1.0, -1.0]);
    }

    #[test]
    fn bn_training_normalizes_batch() {
        let mut tape = Tape::new();
        let gamma = tape.constant(Shape::vector(1), vec![1.0]).unwrap();
        let beta = tape.constant(Shape::vector(1), vec![0.0]).unwrap();
        let x = tape
            .constant(Shape::matrix(4, 1), vec![1.0, 2.0, 3.0, 4.0])
            .unwrap();
        let mut stats = BnStats::new(1);
        let y = tape
            .batch_norm(x, gamma, beta, &mut stats, true, 0.1, 1e-5)
            .unwrap();
        let out = tape.value(y);
        let mean: f64 = out.iter().sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        // running stats moved toward the batch: mean 2.5, unbiased var 5/3
        assert!((stats.mean[0] - 0.25).abs() < 1e-12);
        assert!((stats.var[0] - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn scale_by_single_element() {
        let mut tape = Tape::new();
        let a = tape.variable(Shape::vector(2), vec![1.0, -2.0]).unwrap();
        let s = tape.variable(Shape::scalar(), vec![3.0]).unwrap();
        let y = tape.scale(a, s).unwrap();
        assert_eq!(tape.value(y), &[3.0, -6.0]);
        let total = tape.sum_all(y);
        tape.backward(total).unwrap();
        assert_eq!(tape.grad(a).unwrap(), &[3.0, 3.0]);
        assert_eq!(tape.grad(s).unwrap(), &[-1.0]);
    }

    #[test]
    fn forward_is_bit_identical_across_runs() {
        let run = || {
            let mut tape = Tape::new();
            let a = tape
                .variable(Shape::matrix(2, 2), vec![0.3, -0.7, 1.9, 0.11])
                .unwrap();
            let b = tape
                .variable(Shape::matrix(2, 2), vec![-1.3, 0.2, 0.5, 2.0])
                .unwrap();
            let c = tape.matmul(a, b).unwrap();
            let d = tape.sigmoid(c);
            tape.value(d).to_vec()
        };
        let x = run();
        let y = run();
        assert_eq!(
            x.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            y.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
}
