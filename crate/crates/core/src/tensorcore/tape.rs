use std::rc::Rc;

use super::tensor::{elu, leaky_relu, sigmoid, Tensor};
use crate::error::{Error, Result};

/// Named, ordered collection of trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a tensor and returns its id. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> usize {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(tensor);
        self.tensors.len() - 1
    }

    pub fn get(&self, id: usize) -> &Tensor {
        &self.tensors[id]
    }

    pub fn get_mut(&mut self, id: usize) -> &mut Tensor {
        &mut self.tensors[id]
    }

    pub fn id_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
    stride: usize,
    pad: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddN(Vec<Var>),
    Affine(Var, f64),
    Transpose(Var),
    Relu(Var),
    Elu(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    MeanRows(Var),
    MaxRows(Var, Vec<usize>),
    MeanCols(Var),
    SumCols(Var),
    GatherRows(Var, Rc<Vec<usize>>),
    Sqrt(Var),
    SliceRow(Var, usize),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    OuterAdd(Var, Var),
    MaskedSoftmaxRows(Var, Rc<Vec<bool>>),
    Norm(Var),
    Bilinear(Var, Var, Var),
    Conv2d(Var, Var, Var, ConvGeom),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Records matrix operations during a forward pass so gradients can be
/// replayed in reverse. Nodes are appended in evaluation order, which is a
/// topological order of the computation graph.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(usize, Var)>,
}

fn check_finite(op: &'static str, t: &Tensor) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{op} produced a non-finite value")))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.scalar_value()
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Leaf bound to parameter `id`. Repeated calls return the same node.
    pub fn param(&mut self, params: &ParamSet, id: usize) -> Var {
        if let Some(&(_, v)) = self.params.iter().find(|(p, _)| *p == id) {
            return v;
        }
        let v = self.push(params.get(id).clone(), Op::Param);
        self.params.push((id, v));
        v
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = self.value(v);
        (t.rows(), t.cols())
    }

    fn same_dims(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (da, db) = (self.dims(a), self.dims(b));
        if da != db {
            return Err(Error::shape(op, format!("{da:?} vs {db:?}")));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    /// Elementwise sum; `b` may also be a `1 x n` row broadcast over the rows of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (da, db) = (self.dims(a), self.dims(b));
        if da == db {
            let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
            Ok(self.push(value, Op::Add(a, b)))
        } else if db.0 == 1 && db.1 == da.1 {
            let mut value = self.value(a).clone();
            let row = self.value(b).data().to_vec();
            for chunk in value.data_mut().chunks_mut(da.1) {
                for (x, r) in chunk.iter_mut().zip(&row) {
                    *x += r;
                }
            }
            Ok(self.push(value, Op::AddRow(a, b)))
        } else {
            Err(Error::shape("add", format!("{da:?} vs {db:?}")))
        }
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_dims("sub", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_dims("mul", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_dims("div", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x / y);
        check_finite("div", &value)?;
        Ok(self.push(value, Op::Div(a, b)))
    }

    pub fn add_n(&mut self, terms: &[Var]) -> Result<Var> {
        let first = *terms.first().ok_or(Error::Empty("add_n terms"))?;
        let mut value = self.value(first).clone();
        for &t in &terms[1..] {
            self.same_dims("add_n", first, t)?;
            value.add_assign(self.value(t));
        }
        Ok(self.push(value, Op::AddN(terms.to_vec())))
    }

    /// `k * a + c` elementwise.
    pub fn affine(&mut self, a: Var, k: f64, c: f64) -> Var {
        let value = self.value(a).map(|x| k * x + c);
        self.push(value, Op::Affine(a, k))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.affine(a, k, 0.0)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        self.push(value, Op::Relu(a))
    }

    pub fn elu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(elu);
        self.push(value, Op::Elu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let value = self.value(a).map(|x| leaky_relu(x, slope));
        self.push(value, Op::LeakyRelu(a, slope))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        self.push(value, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(f64::exp);
        check_finite("exp", &value)?;
        Ok(self.push(value, Op::Exp(a)))
    }

    /// Natural log; errors on non-positive input.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(f64::ln);
        check_finite("log", &value)?;
        Ok(self.push(value, Op::Log(a)))
    }

    /// Clamp to `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(value, Op::Clamp(a, lo, hi))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a))
    }

    /// Column-wise mean over rows: `m x n -> 1 x n`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (m, n) = (t.rows(), t.cols());
        let mut out = vec![0.0; n];
        for r in 0..m {
            for (o, x) in out.iter_mut().zip(t.row_slice(r)) {
                *o += x;
            }
        }
        let inv = 1.0 / m as f64;
        out.iter_mut().for_each(|o| *o *= inv);
        self.push(Tensor::row(out), Op::MeanRows(a))
    }

    /// Column-wise max over rows: `m x n -> 1 x n`. Ties route the gradient
    /// to the first maximal row.
    pub fn max_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (m, n) = (t.rows(), t.cols());
        let mut arg = vec![0usize; n];
        let mut out = t.row_slice(0).to_vec();
        for r in 1..m {
            for (c, &x) in t.row_slice(r).iter().enumerate() {
                if x > out[c] {
                    out[c] = x;
                    arg[c] = r;
                }
            }
        }
        self.push(Tensor::row(out), Op::MaxRows(a, arg))
    }

    /// Row-wise mean over columns: `m x n -> m x 1`.
    pub fn mean_cols(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let n = t.cols() as f64;
        let out = (0..t.rows()).map(|r| t.row_slice(r).iter().sum::<f64>() / n).collect();
        self.push(Tensor::column(out), Op::MeanCols(a))
    }

    /// Row-wise sum over columns: `m x n -> m x 1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let out = (0..t.rows()).map(|r| t.row_slice(r).iter().sum::<f64>()).collect();
        self.push(Tensor::column(out), Op::SumCols(a))
    }

    /// Rows `indices[0], indices[1], ...` of `a`, repeats allowed.
    pub fn gather_rows(&mut self, a: Var, indices: Rc<Vec<usize>>) -> Result<Var> {
        let t = self.value(a);
        let (m, n) = (t.rows(), t.cols());
        if indices.is_empty() {
            return Err(Error::Empty("gather_rows indices"));
        }
        let mut out = Vec::with_capacity(indices.len() * n);
        for &r in indices.iter() {
            if r >= m {
                return Err(Error::shape("gather_rows", format!("row {r} of {m}")));
            }
            out.extend_from_slice(t.row_slice(r));
        }
        let value = Tensor::matrix(indices.len(), n, out)?;
        Ok(self.push(value, Op::GatherRows(a, indices)))
    }

    /// Elementwise square root; errors on negative input.
    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(f64::sqrt);
        check_finite("sqrt", &value)?;
        Ok(self.push(value, Op::Sqrt(a)))
    }

    pub fn slice_row(&mut self, a: Var, r: usize) -> Result<Var> {
        let t = self.value(a);
        if r >= t.rows() {
            return Err(Error::shape("slice_row", format!("row {r} of {}", t.rows())));
        }
        let value = Tensor::row(t.row_slice(r).to_vec());
        Ok(self.push(value, Op::SliceRow(a, r)))
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        let (m, n) = (t.rows(), t.cols());
        if len == 0 || start + len > n {
            return Err(Error::shape(
                "slice_cols",
                format!("columns {start}..{} of {n}", start + len),
            ));
        }
        let mut out = Vec::with_capacity(m * len);
        for r in 0..m {
            out.extend_from_slice(&t.row_slice(r)[start..start + len]);
        }
        let value = Tensor::matrix(m, len, out)?;
        Ok(self.push(value, Op::SliceCols(a, start)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::Empty("concat_cols parts"))?;
        let m = self.value(first).rows();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims(p);
            if r != m {
                return Err(Error::shape("concat_cols", format!("{r} rows vs {m}")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for r in 0..m {
            for &p in parts {
                out.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let value = Tensor::matrix(m, total, out)?;
        Ok(self.push(value, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::Empty("concat_rows parts"))?;
        let n = self.value(first).cols();
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != n {
                return Err(Error::shape("concat_rows", format!("{} cols vs {n}", t.cols())));
            }
            rows += t.rows();
            out.extend_from_slice(t.data());
        }
        let value = Tensor::matrix(rows, n, out)?;
        Ok(self.push(value, Op::ConcatRows(parts.to_vec())))
    }

    /// `out[i][j] = a[i] + b[j]` for column vectors `a (N x 1)`, `b (M x 1)`.
    pub fn outer_add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != 1 || tb.cols() != 1 {
            return Err(Error::shape("outer_add", "operands must be column vectors"));
        }
        let (n, m) = (ta.rows(), tb.rows());
        let mut out = Vec::with_capacity(n * m);
        for &x in ta.data() {
            out.extend(tb.data().iter().map(|&y| x + y));
        }
        let value = Tensor::matrix(n, m, out)?;
        Ok(self.push(value, Op::OuterAdd(a, b)))
    }

    /// Row-wise softmax restricted to `mask` entries; masked-out entries are 0.
    /// Every row must keep at least one entry.
    pub fn masked_softmax_rows(&mut self, a: Var, mask: Rc<Vec<bool>>) -> Result<Var> {
        let t = self.value(a);
        let (m, n) = (t.rows(), t.cols());
        if mask.len() != m * n {
            return Err(Error::shape("masked_softmax_rows", "mask size"));
        }
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = t.row_slice(r);
            let keep = &mask[r * n..(r + 1) * n];
            let max = row
                .iter()
                .zip(keep)
                .filter(|(_, &k)| k)
                .map(|(&x, _)| x)
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(Error::shape("masked_softmax_rows", format!("row {r} fully masked")));
            }
            let mut total = 0.0;
            for c in 0..n {
                if keep[c] {
                    let e = (row[c] - max).exp();
                    out[r * n + c] = e;
                    total += e;
                }
            }
            for o in &mut out[r * n..(r + 1) * n] {
                *o /= total;
            }
        }
        let value = Tensor::matrix(m, n, out)?;
        Ok(self.push(value, Op::MaskedSoftmaxRows(a, mask)))
    }

    /// Euclidean norm of all entries, as a `1 x 1` value.
    pub fn norm(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).norm());
        self.push(value, Op::Norm(a))
    }

    /// `a^T M b` for vectors `a` (length p), `b` (length q) and `M (p x q)`.
    pub fn bilinear(&mut self, a: Var, m: Var, b: Var) -> Result<Var> {
        let (ta, tm, tb) = (self.value(a), self.value(m), self.value(b));
        if ta.len() != tm.rows() || tb.len() != tm.cols() {
            return Err(Error::shape(
                "bilinear",
                format!(
                    "a has {} entries, M is {}x{}, b has {} entries",
                    ta.len(),
                    tm.rows(),
                    tm.cols(),
                    tb.len()
                ),
            ));
        }
        let q = tm.cols();
        let mut total = 0.0;
        for (i, &ai) in ta.data().iter().enumerate() {
            if ai == 0.0 {
                continue;
            }
            let row = &tm.data()[i * q..(i + 1) * q];
            total += ai * row.iter().zip(tb.data()).map(|(x, y)| x * y).sum::<f64>();
        }
        Ok(self.push(Tensor::scalar(total), Op::Bilinear(a, m, b)))
    }

    /// 3x3 convolution over a `(C_in, H*W)` feature map with weight
    /// `(C_out, C_in*9)` and bias `(1, C_out)`; returns `(C_out, H'*W')`.
    pub fn conv3x3(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        in_h: usize,
        in_w: usize,
        stride: usize,
    ) -> Result<Var> {
        let (x, w, b) = (self.value(input), self.value(weight), self.value(bias));
        let c_in = x.rows();
        let c_out = w.rows();
        if x.cols() != in_h * in_w || w.cols() != c_in * 9 || b.len() != c_out || stride == 0 {
            return Err(Error::shape(
                "conv3x3",
                format!(
                    "input {}x{} ({in_h}x{in_w}), weight {}x{}, bias {}",
                    x.rows(),
                    x.cols(),
                    w.rows(),
                    w.cols(),
                    b.len()
                ),
            ));
        }
        let pad = 1;
        let out_h = (in_h + 2 * pad - 3) / stride + 1;
        let out_w = (in_w + 2 * pad - 3) / stride + 1;
        let geom = ConvGeom {
            in_h,
            in_w,
            out_h,
            out_w,
            stride,
            pad,
        };
        let mut out = vec![0.0; c_out * out_h * out_w];
        for co in 0..c_out {
            let wrow = w.row_slice(co);
            let orow = &mut out[co * out_h * out_w..(co + 1) * out_h * out_w];
            orow.fill(b.data()[co]);
            for ci in 0..c_in {
                let xrow = x.row_slice(ci);
                for ky in 0..3 {
                    for kx in 0..3 {
                        let wv = wrow[ci * 9 + ky * 3 + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        for oy in 0..out_h {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= in_h as isize {
                                continue;
                            }
                            let base = iy as usize * in_w;
                            for ox in 0..out_w {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix < 0 || ix >= in_w as isize {
                                    continue;
                                }
                                orow[oy * out_w + ox] += wv * xrow[base + ix as usize];
                            }
                        }
                    }
                }
            }
        }
        let value = Tensor::matrix(c_out, out_h * out_w, out)?;
        Ok(self.push(value, Op::Conv2d(input, weight, bias, geom)))
    }

    /// Reverse sweep from `root`, which must hold a single value.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(Error::shape("backward", "root must be a scalar"));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads,
            params: self.params.clone(),
        })
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let val = |v: Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, delta: Tensor| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        };
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                acc(*a, g.matmul_t(val(*b)));
                acc(*b, val(*a).t_matmul(g));
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::AddRow(a, b) => {
                acc(*a, g.clone());
                let n = g.cols();
                let mut row = vec![0.0; n];
                for chunk in g.data().chunks(n) {
                    for (r, x) in row.iter_mut().zip(chunk) {
                        *r += x;
                    }
                }
                acc(*b, Tensor::row(row));
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                acc(*a, g.zip_map(val(*b), |d, y| d * y));
                acc(*b, g.zip_map(val(*a), |d, x| d * x));
            }
            Op::Div(a, b) => {
                let (x, y) = (val(*a), val(*b));
                acc(*a, g.zip_map(y, |d, y| d / y));
                let mut gb = g.zip_map(x, |d, x| d * x);
                gb = gb.zip_map(y, |t, y| -t / (y * y));
                acc(*b, gb);
            }
            Op::AddN(terms) => {
                for &t in terms {
                    acc(t, g.clone());
                }
            }
            Op::Affine(a, k) => acc(*a, g.scale(*k)),
            Op::Transpose(a) => acc(*a, g.transpose()),
            Op::Relu(a) => acc(*a, g.zip_map(val(*a), |d, x| if x > 0.0 { d } else { 0.0 })),
            Op::Elu(a) => acc(
                *a,
                g.zip_map(val(*a), |d, x| if x >= 0.0 { d } else { d * x.exp() }),
            ),
            Op::LeakyRelu(a, slope) => acc(
                *a,
                g.zip_map(val(*a), |d, x| if x >= 0.0 { d } else { d * slope }),
            ),
            Op::Sigmoid(a) => acc(*a, g.zip_map(&node.value, |d, y| d * y * (1.0 - y))),
            Op::Exp(a) => acc(*a, g.zip_map(&node.value, |d, y| d * y)),
            Op::Log(a) => acc(*a, g.zip_map(val(*a), |d, x| d / x)),
            Op::Clamp(a, lo, hi) => acc(
                *a,
                g.zip_map(val(*a), |d, x| if x >= *lo && x <= *hi { d } else { 0.0 }),
            ),
            Op::Sum(a) => {
                let src = val(*a);
                acc(*a, Tensor::filled(src.shape(), g.scalar_value()));
            }
            Op::MeanRows(a) => {
                let src = val(*a);
                let m = src.rows();
                let inv = 1.0 / m as f64;
                let mut out = Vec::with_capacity(src.len());
                for _ in 0..m {
                    out.extend(g.data().iter().map(|d| d * inv));
                }
                acc(*a, Tensor::new(src.shape().to_vec(), out).expect("shape"));
            }
            Op::MaxRows(a, arg) => {
                let src = val(*a);
                let mut out = Tensor::zeros(src.shape());
                for (c, &r) in arg.iter().enumerate() {
                    out.set(r, c, g.data()[c]);
                }
                acc(*a, out);
            }
            Op::MeanCols(a) => {
                let src = val(*a);
                let n = src.cols();
                let inv = 1.0 / n as f64;
                let mut out = Vec::with_capacity(src.len());
                for &d in g.data() {
                    out.extend(std::iter::repeat_n(d * inv, n));
                }
                acc(*a, Tensor::new(src.shape().to_vec(), out).expect("shape"));
            }
            Op::SumCols(a) => {
                let src = val(*a);
                let n = src.cols();
                let mut out = Vec::with_capacity(src.len());
                for &d in g.data() {
                    out.extend(std::iter::repeat_n(d, n));
                }
                acc(*a, Tensor::new(src.shape().to_vec(), out).expect("shape"));
            }
            Op::GatherRows(a, indices) => {
                let src = val(*a);
                let n = src.cols();
                let mut out = Tensor::zeros(src.shape());
                for (k, &r) in indices.iter().enumerate() {
                    let dst = &mut out.data_mut()[r * n..(r + 1) * n];
                    for (o, d) in dst.iter_mut().zip(&g.data()[k * n..(k + 1) * n]) {
                        *o += d;
                    }
                }
                acc(*a, out);
            }
            // subgradient 0 at the origin keeps distance-based scores finite
            Op::Sqrt(a) => acc(*a, g.zip_map(&node.value, |d, y| if y > 0.0 { d * 0.5 / y } else { 0.0 })),
            Op::SliceRow(a, r) => {
                let src = val(*a);
                let mut out = Tensor::zeros(src.shape());
                let n = src.cols();
                out.data_mut()[r * n..(r + 1) * n].copy_from_slice(g.data());
                acc(*a, out);
            }
            Op::SliceCols(a, start) => {
                let src = val(*a);
                let mut out = Tensor::zeros(src.shape());
                let len = g.cols();
                for r in 0..src.rows() {
                    for c in 0..len {
                        out.set(r, start + c, g.get(r, c));
                    }
                }
                acc(*a, out);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let src = val(p);
                    let w = src.cols();
                    let mut out = Vec::with_capacity(src.len());
                    for r in 0..src.rows() {
                        out.extend_from_slice(&g.row_slice(r)[offset..offset + w]);
                    }
                    acc(p, Tensor::new(src.shape().to_vec(), out).expect("shape"));
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let src = val(p);
                    let len = src.len();
                    let out = g.data()[offset..offset + len].to_vec();
                    acc(p, Tensor::new(src.shape().to_vec(), out).expect("shape"));
                    offset += len;
                }
            }
            Op::OuterAdd(a, b) => {
                let (n, m) = (g.rows(), g.cols());
                let ga: Vec<f64> = (0..n).map(|i| g.row_slice(i).iter().sum()).collect();
                let mut gb = vec![0.0; m];
                for i in 0..n {
                    for (s, x) in gb.iter_mut().zip(g.row_slice(i)) {
                        *s += x;
                    }
                }
                acc(*a, Tensor::column(ga));
                acc(*b, Tensor::column(gb));
            }
            Op::MaskedSoftmaxRows(a, mask) => {
                let y = &node.value;
                let (m, n) = (y.rows(), y.cols());
                let mut out = vec![0.0; m * n];
                for r in 0..m {
                    let yr = y.row_slice(r);
                    let gr = g.row_slice(r);
                    let inner: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for c in 0..n {
                        if mask[r * n + c] {
                            out[r * n + c] = yr[c] * (gr[c] - inner);
                        }
                    }
                }
                acc(*a, Tensor::matrix(m, n, out).expect("shape"));
            }
            Op::Norm(a) => {
                let src = val(*a);
                let norm = node.value.scalar_value();
                let d = g.scalar_value();
                if norm > 0.0 {
                    acc(*a, src.scale(d / norm));
                } else {
                    acc(*a, Tensor::zeros(src.shape()));
                }
            }
            Op::Bilinear(a, m, b) => {
                let d = g.scalar_value();
                let (ta, tm, tb) = (val(*a), val(*m), val(*b));
                let (p, q) = (tm.rows(), tm.cols());
                let mut ga = vec![0.0; p];
                let mut gb = vec![0.0; q];
                let mut gm = vec![0.0; p * q];
                for i in 0..p {
                    let row = &tm.data()[i * q..(i + 1) * q];
                    let ai = ta.data()[i];
                    ga[i] = d * row.iter().zip(tb.data()).map(|(x, y)| x * y).sum::<f64>();
                    for j in 0..q {
                        gb[j] += d * ai * row[j];
                        gm[i * q + j] = d * ai * tb.data()[j];
                    }
                }
                acc(*a, Tensor::new(ta.shape().to_vec(), ga).expect("shape"));
                acc(*b, Tensor::new(tb.shape().to_vec(), gb).expect("shape"));
                acc(*m, Tensor::new(tm.shape().to_vec(), gm).expect("shape"));
            }
            Op::Conv2d(input, weight, bias, geom) => {
                let (x, w) = (val(*input), val(*weight));
                let (c_in, c_out) = (x.rows(), w.rows());
                let ConvGeom {
                    in_h,
                    in_w,
                    out_h,
                    out_w,
                    stride,
                    pad,
                } = *geom;
                let mut gx = vec![0.0; x.len()];
                let mut gw = vec![0.0; w.len()];
                let mut gbias = vec![0.0; c_out];
                for co in 0..c_out {
                    let grow = g.row_slice(co);
                    gbias[co] = grow.iter().sum();
                    for ci in 0..c_in {
                        let xrow = x.row_slice(ci);
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let widx = co * c_in * 9 + ci * 9 + ky * 3 + kx;
                                let wv = w.data()[widx];
                                let mut gwacc = 0.0;
                                for oy in 0..out_h {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    if iy < 0 || iy >= in_h as isize {
                                        continue;
                                    }
                                    let base = iy as usize * in_w;
                                    for ox in 0..out_w {
                                        let ix = (ox * stride + kx) as isize - pad as isize;
                                        if ix < 0 || ix >= in_w as isize {
                                            continue;
                                        }
                                        let gv = grow[oy * out_w + ox];
                                        let xi = base + ix as usize;
                                        gwacc += gv * xrow[xi];
                                        gx[ci * in_h * in_w + xi] += gv * wv;
                                    }
                                }
                                gw[widx] += gwacc;
                            }
                        }
                    }
                }
                let bshape = val(*bias).shape().to_vec();
                acc(*input, Tensor::new(x.shape().to_vec(), gx).expect("shape"));
                acc(*weight, Tensor::new(w.shape().to_vec(), gw).expect("shape"));
                acc(*bias, Tensor::new(bshape, gbias).expect("shape"));
            }
        }
    }
}

/// Gradients from one reverse sweep.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(usize, Var)>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// One gradient per parameter in `params`; parameters that never reached
    /// the root get exact zeros.
    pub fn param_grads(&self, params: &ParamSet) -> Vec<Tensor> {
        let mut out: Vec<Tensor> = params
            .tensors()
            .iter()
            .map(|t| Tensor::zeros(t.shape()))
            .collect();
        for &(id, v) in &self.params {
            if let Some(g) = self.wrt(v) {
                out[id] = g.clone();
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tape_with(values: &[Tensor]) -> (Tape, Vec<Var>) {
        let mut tape = Tape::new();
        let vars = values.iter().map(|t| tape.constant(t.clone())).collect();
        (tape, vars)
    }

    #[test]
    fn bilinear_value_and_gradients() {
        let a = Tensor::row(vec![1.0, 2.0]);
        let m = Tensor::matrix(2, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        let b = Tensor::row(vec![3.0, 4.0, 5.0]);
        let (mut tape, v) = tape_with(&[a, m, b]);
        let out = tape.bilinear(v[0], v[1], v[2]).unwrap();
        assert_eq!(tape.scalar(out), 11.0);
        let grads = tape.backward(out).unwrap();
        assert_eq!(grads.wrt(v[0]).unwrap().data(), &[3.0, 4.0]);
        assert_eq!(grads.wrt(v[2]).unwrap().data(), &[1.0, 2.0, 0.0]);
        assert_eq!(
            grads.wrt(v[1]).unwrap().data(),
            &[3.0, 4.0, 5.0, 6.0, 8.0, 10.0]
        );
    }

    #[test]
    fn bilinear_zero_matrix_and_shape_error() {
        let (mut tape, v) = tape_with(&[
            Tensor::row(vec![0.3, -2.0]),
            Tensor::zeros(&[2, 3]),
            Tensor::row(vec![1.0, 5.0, -7.0]),
            Tensor::row(vec![1.0, 5.0]),
        ]);
        let out = tape.bilinear(v[0], v[1], v[2]).unwrap();
        assert_eq!(tape.scalar(out), 0.0);
        let err = tape.bilinear(v[0], v[1], v[3]).unwrap_err();
        assert!(err.to_string().contains("bilinear"));
        assert!(err.to_string().contains("M is 2x3"));
    }

    #[test]
    fn sigmoid_derivative_at_zero() {
        let (mut tape, v) = tape_with(&[Tensor::scalar(0.0)]);
        let s = tape.sigmoid(v[0]);
        assert_eq!(tape.scalar(s), 0.5);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(v[0]).unwrap().scalar_value(), 0.25);
    }

    #[test]
    fn elu_slope_is_one_at_zero() {
        let (mut tape, v) = tape_with(&[Tensor::scalar(0.0)]);
        let s = tape.elu(v[0]);
        let g = tape.backward(s).unwrap();
        assert_eq!(tape.scalar(s), 0.0);
        assert_eq!(g.wrt(v[0]).unwrap().scalar_value(), 1.0);
    }

    #[test]
    fn unused_parameter_gets_exact_zero() {
        let mut params = ParamSet::new();
        let used = params.add("used", Tensor::scalar(2.0));
        let _unused = params.add("unused", Tensor::row(vec![1.0, 2.0]));
        let mut tape = Tape::new();
        let w = tape.param(&params, used);
        let sq = tape.mul(w, w).unwrap();
        let g = tape.backward(sq).unwrap().param_grads(&params);
        assert_eq!(g[0].scalar_value(), 4.0);
        assert_eq!(g[1].data(), &[0.0, 0.0]);
    }

    #[test]
    fn masked_softmax_singleton_row_is_one() {
        let (mut tape, v) = tape_with(&[Tensor::matrix(1, 1, vec![3.7]).unwrap()]);
        let y = tape.masked_softmax_rows(v[0], Rc::new(vec![true])).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0]);
    }

    #[test]
    fn backward_is_bit_reproducible() {
        let run = || {
            let (mut tape, v) = tape_with(&[
                Tensor::matrix(2, 2, vec![0.1, -0.7, 1.3, 0.2]).unwrap(),
                Tensor::matrix(2, 2, vec![0.5, 0.4, -0.3, 0.9]).unwrap(),
            ]);
            let p = tape.matmul(v[0], v[1]).unwrap();
            let e = tape.elu(p);
            let s = tape.sum(e);
            let g = tape.backward(s).unwrap();
            (g.wrt(v[0]).unwrap().clone(), g.wrt(v[1]).unwrap().clone())
        };
        let (a, b) = (run(), run());
        assert_eq!(a.0.data(), b.0.data());
        assert_eq!(a.1.data(), b.1.data());
    }
}
