//! Matrix-level reverse-mode tape.
//!
//! Each recorded node keeps its forward value and the operation that
//! produced it. [`Tape::backward`] walks the nodes in reverse recording
//! order, which is a valid reverse topological order because a node can
//! only refer to earlier nodes.

use std::borrow::Cow;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use ndarray::{s, Axis};

use super::params::{Gradients, ParamId, ParamStore};
use super::{check_finite, sigmoid, Activation, ComputeError, Matrix};
use crate::graph::Segments;

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    index: usize,
    tape: u64,
}

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(usize, usize),
    AddRow(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Scale(usize, f64),
    GatherRows(usize, Arc<[usize]>),
    ConcatCols(usize, usize),
    SliceRows(usize, usize),
    Activate(usize, Activation),
    MulConst(usize, Matrix),
    SegmentSoftmax(usize, Arc<Segments>),
    SegmentWeightedSum {
        weights: usize,
        source: usize,
        segments: Arc<Segments>,
    },
    DotRows(usize, usize),
    NegLogSigmoidSum(usize),
    PairMlp {
        owner_part: usize,
        member_part: usize,
        bias1: usize,
        weight2: usize,
        bias2: usize,
        hidden: Activation,
        output: Activation,
        segments: Arc<Segments>,
    },
}

/// Parameters of the two-layer scorer used by [`Tape::pair_mlp`].
#[derive(Debug, Clone, Copy)]
pub struct PairMlp {
    /// `1 × h` hidden bias.
    pub bias1: Var,
    /// `h × 1` output weight.
    pub weight2: Var,
    /// `1 × 1` output bias.
    pub bias2: Var,
    pub hidden: Activation,
    pub output: Activation,
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

/// Records one forward pass.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, a: &Matrix, b: &Matrix) -> ComputeError {
    ComputeError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn idx(&self, v: Var) -> Result<usize, ComputeError> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(ComputeError::NotRecorded);
        }
        Ok(v.index)
    }

    fn push(&mut self, value: Matrix, op: Op, name: &'static str) -> Result<Var, ComputeError> {
        check_finite(&value, name)?;
        self.nodes.push(Node { value, op });
        Ok(Var {
            index: self.nodes.len() - 1,
            tape: self.id,
        })
    }

    /// The forward value of `v`.
    ///
    /// # Panics
    /// If `v` was recorded on another tape.
    pub fn value(&self, v: Var) -> &Matrix {
        let idx = self.idx(v).expect("variable belongs to this tape");
        &self.nodes[idx].value
    }

    /// The single entry of a `1 × 1` value.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.dim(), (1, 1), "scalar() on a non-scalar value");
        m[[0, 0]]
    }

    pub fn constant(&mut self, value: Matrix) -> Result<Var, ComputeError> {
        self.push(value, Op::Constant, "constant")
    }

    /// Records a parameter leaf. Gradients flowing into it are reported
    /// under `id` by [`Tape::backward`].
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<Var, ComputeError> {
        self.push(store.value(id).clone(), Op::Param(id), "param")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, ComputeError> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        if va.ncols() != vb.nrows() {
            return Err(shape_err("matmul", va, vb));
        }
        let out = va.dot(vb);
        self.push(out, Op::MatMul(ia, ib), "matmul")
    }

    /// `a + b` where `b` is a `1 × c` row broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, ComputeError> {
        let (ia, ib) = (self.idx(a)?, self.idx(row)?);
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        if vb.nrows() != 1 || vb.ncols() != va.ncols() {
            return Err(shape_err("add_row", va, vb));
        }
        let out = va + vb;
        self.push(out, Op::AddRow(ia, ib), "add_row")
    }

    /// `x W + b`.
    pub fn affine(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var, ComputeError> {
        let xw = self.matmul(x, weight)?;
        self.add_row(xw, bias)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, ComputeError> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        if va.dim() != vb.dim() {
            return Err(shape_err("add", va, vb));
        }
        let out = va + vb;
        self.push(out, Op::Add(ia, ib), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, ComputeError> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        if va.dim() != vb.dim() {
            return Err(shape_err("sub", va, vb));
        }
        let out = va - vb;
        self.push(out, Op::Sub(ia, ib), "sub")
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var, ComputeError> {
        let ia = self.idx(a)?;
        let out = &self.nodes[ia].value * factor;
        self.push(out, Op::Scale(ia, factor), "scale")
    }

    /// Sum of equally shaped values.
    pub fn sum(&mut self, vars: &[Var]) -> Result<Var, ComputeError> {
        let (&first, rest) = vars
            .split_first()
            .ok_or_else(|| ComputeError::InvalidArgument("sum of zero values".into()))?;
        rest.iter().try_fold(first, |acc, &v| self.add(acc, v))
    }

    /// Row `k` of the output is row `index[k]` of `a`.
    pub fn gather_rows(&mut self, a: Var, index: Arc<[usize]>) -> Result<Var, ComputeError> {
        let ia = self.idx(a)?;
        let va = &self.nodes[ia].value;
        let rows = va.nrows();
        if let Some(&bad) = index.iter().find(|&&r| r >= rows) {
            return Err(ComputeError::IndexOutOfRange {
                op: "gather_rows",
                index: bad,
                len: rows,
            });
        }
        let cols = va.ncols();
        let src = va.as_standard_layout();
        let src = src.as_slice().expect("standard layout");
        let mut out = Vec::with_capacity(index.len() * cols);
        for &r in index.iter() {
            out.extend_from_slice(&src[r * cols..(r + 1) * cols]);
        }
        let out = Matrix::from_shape_vec((index.len(), cols), out).expect("row-major gather");
        self.push(out, Op::GatherRows(ia, index), "gather_rows")
    }

    /// Row-wise concatenation `a ‖ b`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var, ComputeError> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        if va.nrows() != vb.nrows() {
            return Err(shape_err("concat_cols", va, vb));
        }
        let out = ndarray::concatenate(Axis(1), &[va.view(), vb.view()]).expect("row counts checked");
        self.push(out, Op::ConcatCols(ia, ib), "concat_cols")
    }

    /// Rows `start..end` of `a`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var, ComputeError> {
        let ia = self.idx(a)?;
        let va = &self.nodes[ia].value;
        if start > end || end > va.nrows() {
            return Err(ComputeError::IndexOutOfRange {
                op: "slice_rows",
                index: end,
                len: va.nrows(),
            });
        }
        let out = va.slice(s![start..end, ..]).to_owned();
        self.push(out, Op::SliceRows(ia, start), "slice_rows")
    }

    pub fn activate(&mut self, a: Var, act: Activation) -> Result<Var, ComputeError> {
        let ia = self.idx(a)?;
        if act == Activation::Identity {
            return Ok(a);
        }
        let out = self.nodes[ia].value.mapv(|x| act.apply(x));
        self.push(out, Op::Activate(ia, act), "activate")
    }

    /// Element-wise product with a constant, e.g. a dropout mask.
    pub fn mul_const(&mut self, a: Var, mask: Matrix) -> Result<Var, ComputeError> {
        let ia = self.idx(a)?;
        let va = &self.nodes[ia].value;
        if va.dim() != mask.dim() {
            return Err(shape_err("mul_const", va, &mask));
        }
        let out = va * &mask;
        self.push(out, Op::MulConst(ia, mask), "mul_const")
    }

    /// Softmax of a `p × 1` column within each segment.
    pub fn segment_softmax(&mut self, logits: Var, segments: Arc<Segments>) -> Result<Var, ComputeError> {
        let il = self.idx(logits)?;
        let vl = &self.nodes[il].value;
        if vl.ncols() != 1 || vl.nrows() != segments.len() {
            return Err(ComputeError::ShapeMismatch {
                op: "segment_softmax",
                left: vl.shape().to_vec(),
                right: vec![segments.len(), 1],
            });
        }
        let z = vl.column(0);
        let mut out = Matrix::zeros((segments.len(), 1));
        for s in 0..segments.num_segments() {
            let range = segments.range(s);
            if range.is_empty() {
                continue;
            }
            let max = range.clone().map(|p| z[p]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for p in range.clone() {
                let e = (z[p] - max).exp();
                out[[p, 0]] = e;
                total += e;
            }
            for p in range {
                out[[p, 0]] /= total;
            }
        }
        self.push(out, Op::SegmentSoftmax(il, segments), "segment_softmax")
    }

    /// Row `s` of the output is `Σ_{p ∈ segment s} weights[p] · source[members[p]]`,
    /// summed in member order.
    pub fn segment_weighted_sum(
        &mut self,
        weights: Var,
        source: Var,
        segments: Arc<Segments>,
    ) -> Result<Var, ComputeError> {
        let (iw, is) = (self.idx(weights)?, self.idx(source)?);
        let (vw, vs) = (&self.nodes[iw].value, &self.nodes[is].value);
        if vw.ncols() != 1 || vw.nrows() != segments.len() {
            return Err(ComputeError::ShapeMismatch {
                op: "segment_weighted_sum",
                left: vw.shape().to_vec(),
                right: vec![segments.len(), 1],
            });
        }
        if let Some(&bad) = segments.members.iter().find(|&&j| j >= vs.nrows()) {
            return Err(ComputeError::IndexOutOfRange {
                op: "segment_weighted_sum",
                index: bad,
                len: vs.nrows(),
            });
        }
        let cols = vs.ncols();
        let src = vs.as_standard_layout();
        let src = src.as_slice().expect("standard layout");
        let mut out = Matrix::zeros((segments.num_segments(), cols));
        let dst = out.as_slice_mut().expect("fresh array");
        for s in 0..segments.num_segments() {
            let row = &mut dst[s * cols..(s + 1) * cols];
            for p in segments.range(s) {
                let j = segments.members[p];
                axpy(vw[[p, 0]], &src[j * cols..(j + 1) * cols], row);
            }
        }
        self.push(
            out,
            Op::SegmentWeightedSum {
                weights: iw,
                source: is,
                segments,
            },
            "segment_weighted_sum",
        )
    }

    /// Two-layer scorer over segment positions, a `p × 1` column:
    /// `z_p = output(hidden(a[owner_p] + b[member_p] + bias1) · weight2 + bias2)`.
    ///
    /// Equivalent to gathering both row sets, adding, applying an affine
    /// map and the activations, but the `p × h` hidden layer is never
    /// stored: backward recomputes it one position at a time.
    pub fn pair_mlp(
        &mut self,
        owner_part: Var,
        member_part: Var,
        mlp: &PairMlp,
        segments: Arc<Segments>,
    ) -> Result<Var, ComputeError> {
        let (ia, ib) = (self.idx(owner_part)?, self.idx(member_part)?);
        let (i1, iw, i2) = (self.idx(mlp.bias1)?, self.idx(mlp.weight2)?, self.idx(mlp.bias2)?);
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        let h = va.ncols();
        if vb.ncols() != h {
            return Err(shape_err("pair_mlp", va, vb));
        }
        let (b1, w2, b2) = (&self.nodes[i1].value, &self.nodes[iw].value, &self.nodes[i2].value);
        if b1.dim() != (1, h) || w2.dim() != (h, 1) || b2.dim() != (1, 1) {
            return Err(ComputeError::ShapeMismatch {
                op: "pair_mlp",
                left: vec![h],
                right: [b1.shape(), w2.shape(), b2.shape()].concat(),
            });
        }
        for (idx, rows) in [(&segments.owners, va.nrows()), (&segments.members, vb.nrows())] {
            if let Some(&bad) = idx.iter().find(|&&r| r >= rows) {
                return Err(ComputeError::IndexOutOfRange {
                    op: "pair_mlp",
                    index: bad,
                    len: rows,
                });
            }
        }
        let kernel = PairKernel::new(va, vb, b1, w2, b2[[0, 0]], mlp.hidden);
        let mut out = Matrix::zeros((segments.len(), 1));
        let mut pre = vec![0.0; h];
        let mut act = vec![0.0; h];
        for p in 0..segments.len() {
            let zpre = kernel.eval(segments.owners[p], segments.members[p], &mut pre, &mut act);
            out[[p, 0]] = mlp.output.apply(zpre);
        }
        let op = Op::PairMlp {
            owner_part: ia,
            member_part: ib,
            bias1: i1,
            weight2: iw,
            bias2: i2,
            hidden: mlp.hidden,
            output: mlp.output,
            segments,
        };
        self.push(out, op, "pair_mlp")
    }

    /// Row-wise inner products, a `p × 1` column.
    pub fn dot_rows(&mut self, a: Var, b: Var) -> Result<Var, ComputeError> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        if va.dim() != vb.dim() {
            return Err(shape_err("dot_rows", va, vb));
        }
        let out = (va * vb).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(out, Op::DotRows(ia, ib), "dot_rows")
    }

    /// `Σ −ln σ(x)` over every entry, as a `1 × 1` value.
    pub fn neg_log_sigmoid_sum(&mut self, x: Var) -> Result<Var, ComputeError> {
        let ix = self.idx(x)?;
        let total: f64 = self.nodes[ix].value.iter().map(|&v| super::neg_log_sigmoid(v)).sum();
        self.push(
            Matrix::from_elem((1, 1), total),
            Op::NegLogSigmoidSum(ix),
            "neg_log_sigmoid_sum",
        )
    }

    /// Back-propagates from the `1 × 1` value `loss` and returns the
    /// gradient of `loss` with respect to every parameter leaf it depends on.
    pub fn backward(&self, loss: Var) -> Result<Gradients, ComputeError> {
        let il = self.idx(loss)?;
        let lv = &self.nodes[il].value;
        if lv.dim() != (1, 1) {
            return Err(ComputeError::NonScalarLoss {
                rows: lv.nrows(),
                cols: lv.ncols(),
            });
        }
        let mut grads: Vec<Option<Matrix>> = (0..=il).map(|_| None).collect();
        grads[il] = Some(Matrix::ones((1, 1)));
        let mut out = Gradients::default();

        for i in (0..=il).rev() {
            let Some(g) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => out.accumulate(*id, g),
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.nodes[*b].value.t());
                    let gb = self.nodes[*a].value.t().dot(&g);
                    add_grad(&mut grads, *a, ga);
                    add_grad(&mut grads, *b, gb);
                }
                Op::AddRow(a, b) => {
                    let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    add_grad(&mut grads, *a, g);
                    add_grad(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    add_grad(&mut grads, *b, g.clone());
                    add_grad(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    add_grad(&mut grads, *b, -&g);
                    add_grad(&mut grads, *a, g);
                }
                Op::Scale(a, f) => add_grad(&mut grads, *a, g * *f),
                Op::GatherRows(a, index) => {
                    let mut ga = Matrix::zeros(self.nodes[*a].value.raw_dim());
                    let cols = ga.ncols();
                    let gs = g.as_standard_layout();
                    let gs = gs.as_slice().expect("standard layout");
                    let dst = ga.as_slice_mut().expect("fresh array");
                    for (k, &r) in index.iter().enumerate() {
                        axpy(1.0, &gs[k * cols..(k + 1) * cols], &mut dst[r * cols..(r + 1) * cols]);
                    }
                    add_grad(&mut grads, *a, ga);
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.nodes[*a].value.ncols();
                    add_grad(&mut grads, *a, g.slice(s![.., ..ca]).to_owned());
                    add_grad(&mut grads, *b, g.slice(s![.., ca..]).to_owned());
                }
                Op::SliceRows(a, start) => {
                    let mut ga = Matrix::zeros(self.nodes[*a].value.raw_dim());
                    ga.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                    add_grad(&mut grads, *a, ga);
                }
                Op::Activate(a, act) => {
                    let x = &self.nodes[*a].value;
                    let mut ga = g;
                    ndarray::Zip::from(&mut ga)
                        .and(x)
                        .and(&node.value)
                        .for_each(|g, &x, &y| *g *= act.derivative(x, y));
                    add_grad(&mut grads, *a, ga);
                }
                Op::MulConst(a, mask) => add_grad(&mut grads, *a, g * mask),
                Op::SegmentSoftmax(a, segments) => {
                    let y = node.value.column(0);
                    let gy = g.column(0);
                    let mut gz = Matrix::zeros((segments.len(), 1));
                    for s in 0..segments.num_segments() {
                        let range = segments.range(s);
                        let inner: f64 = range.clone().map(|p| y[p] * gy[p]).sum();
                        for p in range {
                            gz[[p, 0]] = y[p] * (gy[p] - inner);
                        }
                    }
                    add_grad(&mut grads, *a, gz);
                }
                Op::SegmentWeightedSum {
                    weights,
                    source,
                    segments,
                } => {
                    let w = &self.nodes[*weights].value;
                    let src = &self.nodes[*source].value;
                    let cols = src.ncols();
                    let sv = src.as_standard_layout();
                    let sv = sv.as_slice().expect("standard layout");
                    let gv = g.as_standard_layout();
                    let gv = gv.as_slice().expect("standard layout");
                    let mut gw = Matrix::zeros(w.raw_dim());
                    let mut gs = Matrix::zeros(src.raw_dim());
                    let gsv = gs.as_slice_mut().expect("fresh array");
                    for p in 0..segments.len() {
                        let (o, m) = (segments.owners[p], segments.members[p]);
                        let go = &gv[o * cols..(o + 1) * cols];
                        gw[[p, 0]] = dot(go, &sv[m * cols..(m + 1) * cols]);
                        axpy(w[[p, 0]], go, &mut gsv[m * cols..(m + 1) * cols]);
                    }
                    add_grad(&mut grads, *weights, gw);
                    add_grad(&mut grads, *source, gs);
                }
                Op::DotRows(a, b) => {
                    let va = &self.nodes[*a].value;
                    let vb = &self.nodes[*b].value;
                    let ga = vb * &g;
                    let gb = va * &g;
                    add_grad(&mut grads, *a, ga);
                    add_grad(&mut grads, *b, gb);
                }
                Op::NegLogSigmoidSum(a) => {
                    let scale = g[[0, 0]];
                    let ga = self.nodes[*a].value.mapv(|x| -sigmoid(-x) * scale);
                    add_grad(&mut grads, *a, ga);
                }
                Op::PairMlp {
                    owner_part,
                    member_part,
                    bias1,
                    weight2,
                    bias2,
                    hidden,
                    output,
                    segments,
                } => {
                    let va = &self.nodes[*owner_part].value;
                    let vb = &self.nodes[*member_part].value;
                    let w2 = &self.nodes[*weight2].value;
                    let kernel = PairKernel::new(
                        va,
                        vb,
                        &self.nodes[*bias1].value,
                        w2,
                        self.nodes[*bias2].value[[0, 0]],
                        *hidden,
                    );
                    let h = va.ncols();
                    let mut ga = Matrix::zeros(va.raw_dim());
                    let mut gb = Matrix::zeros(vb.raw_dim());
                    let mut gb1 = vec![0.0; h];
                    let mut gw2 = vec![0.0; h];
                    let mut gb2 = 0.0;
                    let (gav, gbv) = (ga.as_slice_mut().expect("fresh"), gb.as_slice_mut().expect("fresh"));
                    let mut pre = vec![0.0; h];
                    let mut act = vec![0.0; h];
                    for p in 0..segments.len() {
                        let (o, m) = (segments.owners[p], segments.members[p]);
                        let zpre = kernel.eval(o, m, &mut pre, &mut act);
                        let gz = g[[p, 0]] * output.derivative(zpre, node.value[[p, 0]]);
                        if gz == 0.0 {
                            continue;
                        }
                        gb2 += gz;
                        for k in 0..h {
                            gw2[k] += gz * act[k];
                            let gh = gz * kernel.w2[k] * hidden.derivative(pre[k], act[k]);
                            gav[o * h + k] += gh;
                            gbv[m * h + k] += gh;
                            gb1[k] += gh;
                        }
                    }
                    add_grad(&mut grads, *owner_part, ga);
                    add_grad(&mut grads, *member_part, gb);
                    add_grad(&mut grads, *bias1, Matrix::from_shape_vec((1, h), gb1).expect("row"));
                    add_grad(
                        &mut grads,
                        *weight2,
                        Matrix::from_shape_vec((h, 1), gw2).expect("column"),
                    );
                    add_grad(&mut grads, *bias2, Matrix::from_elem((1, 1), gb2));
                }
            }
        }
        for (id, g) in out.iter() {
            if !g.iter().all(|v| v.is_finite()) {
                return Err(ComputeError::NonFiniteGradient {
                    name: format!("#{}", id.0),
                });
            }
        }
        Ok(out)
    }
}

fn add_grad(grads: &mut [Option<Matrix>], i: usize, g: Matrix) {
    match &mut grads[i] {
        Some(acc) => *acc += &g,
        slot @ None => *slot = Some(g),
    }
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (y, &x) in y.iter_mut().zip(x) {
        *y += alpha * x;
    }
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Row-major views of the [`Tape::pair_mlp`] operands.
struct PairKernel<'a> {
    a: Cow<'a, [f64]>,
    b: Cow<'a, [f64]>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: f64,
    hidden: Activation,
}

fn row_major(m: &Matrix) -> Cow<'_, [f64]> {
    match m.as_slice() {
        Some(s) => Cow::Borrowed(s),
        None => Cow::Owned(m.iter().copied().collect()),
    }
}

impl<'a> PairKernel<'a> {
    fn new(a: &'a Matrix, b: &'a Matrix, b1: &Matrix, w2: &Matrix, b2: f64, hidden: Activation) -> Self {
        Self {
            a: row_major(a),
            b: row_major(b),
            b1: b1.iter().copied().collect(),
            w2: w2.iter().copied().collect(),
            b2,
            hidden,
        }
    }

    /// Fills the hidden pre-activation and activation for one position and
    /// returns the output pre-activation.
    fn eval(&self, owner: usize, member: usize, pre: &mut [f64], act: &mut [f64]) -> f64 {
        let h = self.b1.len();
        let ra = &self.a[owner * h..(owner + 1) * h];
        let rb = &self.b[member * h..(member + 1) * h];
        let hidden = self.hidden;
        let mut z = self.b2;
        let rows = ra.iter().zip(rb).zip(&self.b1).zip(&self.w2);
        for ((((&x, &y), &bias), &w), (pre, act)) in rows.zip(pre.iter_mut().zip(act.iter_mut())) {
            // Same association order as add(gather, gather) then add_row.
            *pre = (x + y) + bias;
            *act = hidden.apply(*pre);
            z += *act * w;
        }
        z
    }
}
