//! Reverse-mode autodiff over a dynamically recorded computation graph.
//!
//! The tape holds 2-D nodes only (scalars are 1×1). Each forward op validates
//! shapes, records its inputs, and stores the computed value; `backward` walks
//! the tape in reverse and returns gradients for the `requires_grad` leaves.
//! Structural data (indices, masks, segment pointers) is captured by value in
//! the op itself and never differentiated.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{matmul_nt_raw, matmul_raw, matmul_tn_raw, Tensor};

pub type NodeId = usize;

#[derive(Debug)]
enum Op {
    Leaf,
    /// a(m×k) · b(k×n)
    Matmul { a: NodeId, b: NodeId },
    /// a(m×n) · b(k×n)ᵀ
    MatmulNT { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    /// x(r×c) + bias(1×c) broadcast over rows
    AddBias { x: NodeId, bias: NodeId },
    /// x(r×c) + col(r×1) broadcast over columns
    AddColBroadcast { x: NodeId, col: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { x: NodeId, k: f64 },
    ConcatCols { xs: Vec<NodeId> },
    ConcatRows { xs: Vec<NodeId> },
    SliceRows { x: NodeId, start: usize },
    SliceCols { x: NodeId, start: usize },
    Reshape { x: NodeId },
    /// Row gather: out[i] = x[indices[i]]
    Gather { x: NodeId, indices: Vec<usize> },
    /// Circular left rotation of every row by `shift`
    RotateCols { x: NodeId, shift: usize },
    /// Each row repeated `times` consecutive times
    RepeatInterleaveRows { x: NodeId, times: usize },
    /// Row softmax; masked entries were forced to exactly 0 in the output,
    /// which already zeroes their gradient, so the mask is not kept.
    SoftmaxRows { x: NodeId },
    LeakyRelu { x: NodeId, slope: f64 },
    Relu { x: NodeId },
    /// Precomputed inverted-dropout mask (0 or 1/(1−p))
    Dropout { x: NodeId, mask: Vec<f64> },
    /// Rows with `zero[i] = true` forced to 0
    ZeroRows { x: NodeId, zero: Vec<bool> },
    SumAll { x: NodeId },
    /// (r×c) → (r×1) row sums
    SumRows { x: NodeId },
    SumSquares { x: NodeId },
    /// (r×c) → (r×1): log(1 + Σ_j exp(x_ij)), stabilized
    SoftplusLseRows { x: NodeId },
    /// Softmax over contiguous row segments of an (nnz×1) logit column
    SegmentSoftmax { x: NodeId, ptr: Vec<usize> },
    /// out[s] = Σ_{e ∈ segment s} w[e]·x[e]; (nnz×1, nnz×d) → (V×d)
    SegmentWeightedSum { w: NodeId, x: NodeId, ptr: Vec<usize> },
    /// Mean negative log-likelihood of labels under row softmax
    CrossEntropyRows { x: NodeId, labels: Vec<usize> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Matmul { .. } => "matmul",
            Op::MatmulNT { .. } => "matmul_nt",
            Op::Add { .. } => "add",
            Op::AddBias { .. } => "add_bias",
            Op::AddColBroadcast { .. } => "add_col_broadcast",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::ConcatCols { .. } => "concat_cols",
            Op::ConcatRows { .. } => "concat_rows",
            Op::SliceRows { .. } => "slice_rows",
            Op::SliceCols { .. } => "slice_cols",
            Op::Reshape { .. } => "reshape",
            Op::Gather { .. } => "gather",
            Op::RotateCols { .. } => "rotate_cols",
            Op::RepeatInterleaveRows { .. } => "repeat_interleave_rows",
            Op::SoftmaxRows { .. } => "softmax_rows",
            Op::LeakyRelu { .. } => "leaky_relu",
            Op::Relu { .. } => "relu",
            Op::Dropout { .. } => "dropout",
            Op::ZeroRows { .. } => "zero_rows",
            Op::SumAll { .. } => "sum_all",
            Op::SumRows { .. } => "sum_rows",
            Op::SumSquares { .. } => "sum_squares",
            Op::SoftplusLseRows { .. } => "softplus_lse_rows",
            Op::SegmentSoftmax { .. } => "segment_softmax",
            Op::SegmentWeightedSum { .. } => "segment_weighted_sum",
            Op::CrossEntropyRows { .. } => "cross_entropy_rows",
        }
    }
}

struct Node {
    op: Op,
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    needs_grad: bool,
}

/// Gradients of the backward root with respect to `requires_grad` leaves.
pub struct Gradients {
    by_leaf: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&[f64]> {
        self.by_leaf.get(id).and_then(|g| g.as_deref())
    }

    /// Gradient for a leaf, or zeros of the given size if it never received one.
    pub fn get_or_zeros(&self, id: NodeId, numel: usize) -> Vec<f64> {
        match self.get(id) {
            Some(g) => g.to_vec(),
            None => vec![0.0; numel],
        }
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id].value
    }

    pub fn scalar_value(&self, id: NodeId) -> f64 {
        self.nodes[id].value[0]
    }

    /// (rows, cols) of a node.
    pub fn dims(&self, id: NodeId) -> (usize, usize) {
        let n = &self.nodes[id];
        (n.rows, n.cols)
    }

    /// Every op funnels through here; a non-finite output is reported as an
    /// error so training loops can treat overflow as divergence instead of
    /// crashing mid-epoch.
    fn push(&mut self, op: Op, rows: usize, cols: usize, value: Vec<f64>, needs_grad: bool) -> Result<NodeId> {
        if let Some(bad) = value.iter().find(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("{} produced {bad}", op.name())));
        }
        Ok(self.push_raw(op, rows, cols, value, needs_grad))
    }

    fn push_raw(&mut self, op: Op, rows: usize, cols: usize, value: Vec<f64>, needs_grad: bool) -> NodeId {
        debug_assert_eq!(value.len(), rows * cols, "{}: value/shape mismatch", op.name());
        self.nodes.push(Node {
            op,
            rows,
            cols,
            value,
            needs_grad,
        });
        self.nodes.len() - 1
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id].needs_grad
    }

    fn check_same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        if self.dims(a) != self.dims(b) {
            return Err(Error::shape(
                op,
                format!("operands {:?} vs {:?}", self.dims(a), self.dims(b)),
            ));
        }
        Ok(())
    }

    // ── Forward ops ─────────────────────────────────────────────────

    pub fn leaf(&mut self, rows: usize, cols: usize, data: Vec<f64>, requires_grad: bool) -> Result<NodeId> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "leaf",
                format!("{}×{} wants {} elements, got {}", rows, cols, rows * cols, data.len()),
            ));
        }
        self.push(Op::Leaf, rows, cols, data, requires_grad)
    }

    /// Leaf from a tensor viewed as a matrix (1-D tensors become one row).
    pub fn leaf_tensor(&mut self, t: &Tensor, requires_grad: bool) -> Result<NodeId> {
        self.leaf(t.rows(), t.cols(), t.data().to_vec(), requires_grad)
    }

    pub fn constant_scalar(&mut self, x: f64) -> NodeId {
        assert!(x.is_finite(), "constant must be finite, got {x}");
        self.push_raw(Op::Leaf, 1, 1, vec![x], false)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(Error::shape("matmul", format!("{m}×{k} · {k2}×{n}")));
        }
        let mut out = vec![0.0; m * n];
        matmul_raw(&self.nodes[a].value, &self.nodes[b].value, m, k, n, &mut out);
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::Matmul { a, b }, m, n, out, ng)
    }

    /// a · bᵀ without materializing the transpose.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, n) = self.dims(a);
        let (k, n2) = self.dims(b);
        if n != n2 {
            return Err(Error::shape("matmul_nt", format!("{m}×{n} · ({k}×{n2})ᵀ")));
        }
        let mut out = vec![0.0; m * k];
        matmul_nt_raw(&self.nodes[a].value, &self.nodes[b].value, m, n, k, &mut out);
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::MatmulNT { a, b }, m, k, out, ng)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape("add", a, b)?;
        let (r, c) = self.dims(a);
        let out: Vec<f64> = self.nodes[a]
            .value
            .iter()
            .zip(&self.nodes[b].value)
            .map(|(x, y)| x + y)
            .collect();
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::Add { a, b }, r, c, out, ng)
    }

    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (r, c) = self.dims(x);
        let (br, bc) = self.dims(bias);
        if br != 1 || bc != c {
            return Err(Error::shape("add_bias", format!("x {r}×{c}, bias {br}×{bc}")));
        }
        let b = &self.nodes[bias].value;
        let mut out = Vec::with_capacity(r * c);
        for row in self.nodes[x].value.chunks(c) {
            for (v, bv) in row.iter().zip(b) {
                out.push(v + bv);
            }
        }
        let ng = self.needs(x) || self.needs(bias);
        self.push(Op::AddBias { x, bias }, r, c, out, ng)
    }

    pub fn add_col_broadcast(&mut self, x: NodeId, col: NodeId) -> Result<NodeId> {
        let (r, c) = self.dims(x);
        let (cr, cc) = self.dims(col);
        if cr != r || cc != 1 {
            return Err(Error::shape("add_col_broadcast", format!("x {r}×{c}, col {cr}×{cc}")));
        }
        let colv = &self.nodes[col].value;
        let mut out = Vec::with_capacity(r * c);
        for (i, row) in self.nodes[x].value.chunks(c).enumerate() {
            for v in row {
                out.push(v + colv[i]);
            }
        }
        let ng = self.needs(x) || self.needs(col);
        self.push(Op::AddColBroadcast { x, col }, r, c, out, ng)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape("mul", a, b)?;
        let (r, c) = self.dims(a);
        let out: Vec<f64> = self.nodes[a]
            .value
            .iter()
            .zip(&self.nodes[b].value)
            .map(|(x, y)| x * y)
            .collect();
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::Mul { a, b }, r, c, out, ng)
    }

    pub fn scale(&mut self, x: NodeId, k: f64) -> Result<NodeId> {
        let (r, c) = self.dims(x);
        let out: Vec<f64> = self.nodes[x].value.iter().map(|v| v * k).collect();
        let ng = self.needs(x);
        self.push(Op::Scale { x, k }, r, c, out, ng)
    }

    pub fn concat_cols(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        if xs.is_empty() {
            return Err(Error::shape("concat_cols", "no inputs"));
        }
        let r = self.dims(xs[0]).0;
        let mut total_c = 0;
        for &x in xs {
            let (xr, xc) = self.dims(x);
            if xr != r {
                return Err(Error::shape("concat_cols", format!("row counts {r} vs {xr}")));
            }
            total_c += xc;
        }
        let mut out = Vec::with_capacity(r * total_c);
        for i in 0..r {
            for &x in xs {
                let c = self.dims(x).1;
                out.extend_from_slice(&self.nodes[x].value[i * c..(i + 1) * c]);
            }
        }
        let ng = xs.iter().any(|&x| self.needs(x));
        self.push(Op::ConcatCols { xs: xs.to_vec() }, r, total_c, out, ng)
    }

    pub fn concat_rows(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        if xs.is_empty() {
            return Err(Error::shape("concat_rows", "no inputs"));
        }
        let c = self.dims(xs[0]).1;
        let mut total_r = 0;
        for &x in xs {
            let (xr, xc) = self.dims(x);
            if xc != c {
                return Err(Error::shape("concat_rows", format!("col counts {c} vs {xc}")));
            }
            total_r += xr;
        }
        let mut out = Vec::with_capacity(total_r * c);
        for &x in xs {
            out.extend_from_slice(&self.nodes[x].value);
        }
        let ng = xs.iter().any(|&x| self.needs(x));
        self.push(Op::ConcatRows { xs: xs.to_vec() }, total_r, c, out, ng)
    }

    pub fn slice_rows(&mut self, x: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let (r, c) = self.dims(x);
        if start > end || end > r {
            return Err(Error::shape("slice_rows", format!("[{start}, {end}) of {r} rows")));
        }
        let out = self.nodes[x].value[start * c..end * c].to_vec();
        let ng = self.needs(x);
        self.push(Op::SliceRows { x, start }, end - start, c, out, ng)
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let (r, c) = self.dims(x);
        if start > end || end > c {
            return Err(Error::shape("slice_cols", format!("[{start}, {end}) of {c} cols")));
        }
        let w = end - start;
        let mut out = Vec::with_capacity(r * w);
        for row in self.nodes[x].value.chunks(c) {
            out.extend_from_slice(&row[start..end]);
        }
        let ng = self.needs(x);
        self.push(Op::SliceCols { x, start }, r, w, out, ng)
    }

    pub fn reshape(&mut self, x: NodeId, rows: usize, cols: usize) -> Result<NodeId> {
        let (r, c) = self.dims(x);
        if r * c != rows * cols {
            return Err(Error::shape("reshape", format!("{r}×{c} → {rows}×{cols}")));
        }
        let out = self.nodes[x].value.clone();
        let ng = self.needs(x);
        self.push(Op::Reshape { x }, rows, cols, out, ng)
    }

    pub fn gather(&mut self, x: NodeId, indices: &[usize]) -> Result<NodeId> {
        let (r, c) = self.dims(x);
        let mut out = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            if i >= r {
                return Err(Error::shape("gather", format!("row {i} out of {r}")));
            }
            out.extend_from_slice(&self.nodes[x].value[i * c..(i + 1) * c]);
        }
        let ng = self.needs(x);
        self.push(
            Op::Gather {
                x,
                indices: indices.to_vec(),
            },
            indices.len(),
            c,
            out,
            ng,
        )
    }

    pub fn rotate_cols(&mut self, x: NodeId, shift: usize) -> Result<NodeId> {
        let (r, c) = self.dims(x);
        if c == 0 || shift >= c {
            return Err(Error::shape("rotate_cols", format!("shift {shift} on {c} cols")));
        }
        let mut out = Vec::with_capacity(r * c);
        for row in self.nodes[x].value.chunks(c) {
            out.extend_from_slice(&row[shift..]);
            out.extend_from_slice(&row[..shift]);
        }
        let ng = self.needs(x);
        self.push(Op::RotateCols { x, shift }, r, c, out, ng)
    }

    pub fn repeat_interleave_rows(&mut self, x: NodeId, times: usize) -> Result<NodeId> {
        if times == 0 {
            return Err(Error::shape("repeat_interleave_rows", "times = 0"));
        }
        let (r, c) = self.dims(x);
        let mut out = Vec::with_capacity(r * times * c);
        for row in self.nodes[x].value.chunks(c) {
            for _ in 0..times {
                out.extend_from_slice(row);
            }
        }
        let ng = self.needs(x);
        self.push(Op::RepeatInterleaveRows { x, times }, r * times, c, out, ng)
    }

    pub fn softmax_rows(&mut self, x: NodeId, mask: Option<&[bool]>) -> Result<NodeId> {
        let (r, c) = self.dims(x);
        if let Some(m) = mask {
            if m.len() != r * c {
                return Err(Error::shape("softmax_rows", "mask shape mismatch"));
            }
        }
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &self.nodes[x].value[i * c..(i + 1) * c];
            let live = |j: usize| mask.map_or(true, |m| m[i * c + j]);
            let mut max = f64::NEG_INFINITY;
            for j in 0..c {
                if live(j) && row[j] > max {
                    max = row[j];
                }
            }
            if max == f64::NEG_INFINITY {
                return Err(Error::shape("softmax_rows", format!("row {i} fully masked")));
            }
            let mut denom = 0.0;
            for j in 0..c {
                if live(j) {
                    let e = (row[j] - max).exp();
                    out[i * c + j] = e;
                    denom += e;
                }
            }
            for j in 0..c {
                out[i * c + j] /= denom;
            }
        }
        let ng = self.needs(x);
        self.push(Op::SoftmaxRows { x }, r, c, out, ng)
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> Result<NodeId> {
        if !(0.0..1.0).contains(&slope) {
            return Err(Error::Invalid(format!("leaky_relu slope {slope} outside (0,1)")));
        }
        let (r, c) = self.dims(x);
        let out: Vec<f64> = self.nodes[x]
            .value
            .iter()
            .map(|&v| if v > 0.0 { v } else { slope * v })
            .collect();
        let ng = self.needs(x);
        self.push(Op::LeakyRelu { x, slope }, r, c, out, ng)
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let (r, c) = self.dims(x);
        let out: Vec<f64> = self.nodes[x].value.iter().map(|&v| v.max(0.0)).collect();
        let ng = self.needs(x);
        self.push(Op::Relu { x }, r, c, out, ng)
    }

    /// Inverted dropout: keep with probability 1−p and scale kept entries by
    /// 1/(1−p). Call only in train mode; eval skips the op entirely.
    pub fn dropout<R: Rng>(&mut self, x: NodeId, p: f64, rng: &mut R) -> Result<NodeId> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Invalid(format!("dropout rate {p} outside [0,1)")));
        }
        let (r, c) = self.dims(x);
        let keep = 1.0 - p;
        let mask: Vec<f64> = (0..r * c)
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let out: Vec<f64> = self.nodes[x].value.iter().zip(&mask).map(|(v, m)| v * m).collect();
        let ng = self.needs(x);
        self.push(Op::Dropout { x, mask }, r, c, out, ng)
    }

    pub fn zero_rows(&mut self, x: NodeId, zero: &[bool]) -> Result<NodeId> {
        let (r, c) = self.dims(x);
        if zero.len() != r {
            return Err(Error::shape("zero_rows", format!("{} flags for {r} rows", zero.len())));
        }
        let mut out = self.nodes[x].value.clone();
        for (i, &z) in zero.iter().enumerate() {
            if z {
                out[i * c..(i + 1) * c].fill(0.0);
            }
        }
        let ng = self.needs(x);
        self.push(
            Op::ZeroRows {
                x,
                zero: zero.to_vec(),
            },
            r,
            c,
            out,
            ng,
        )
    }

    pub fn sum_all(&mut self, x: NodeId) -> Result<NodeId> {
        let s: f64 = self.nodes[x].value.iter().sum();
        let ng = self.needs(x);
        self.push(Op::SumAll { x }, 1, 1, vec![s], ng)
    }

    pub fn sum_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let (r, c) = self.dims(x);
        let out: Vec<f64> = self.nodes[x].value.chunks(c).map(|row| row.iter().sum()).collect();
        let ng = self.needs(x);
        self.push(Op::SumRows { x }, r, 1, out, ng)
    }

    pub fn sum_squares(&mut self, x: NodeId) -> Result<NodeId> {
        let s: f64 = self.nodes[x].value.iter().map(|v| v * v).sum();
        let ng = self.needs(x);
        self.push(Op::SumSquares { x }, 1, 1, vec![s], ng)
    }

    /// Per row: log(1 + Σ_j exp(x_ij)). Zero-column input gives all-zero output.
    pub fn softplus_lse_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let (r, c) = self.dims(x);
        let mut out = Vec::with_capacity(r);
        for row in self.nodes[x].value.chunks(c.max(1)) {
            if c == 0 {
                out.push(0.0);
                continue;
            }
            let m = row.iter().fold(0.0_f64, |a, &b| a.max(b));
            let s: f64 = row.iter().map(|&v| (v - m).exp()).sum();
            out.push(m + ((-m).exp() + s).ln());
        }
        if c == 0 {
            out = vec![0.0; r];
        }
        let ng = self.needs(x);
        self.push(Op::SoftplusLseRows { x }, r, 1, out, ng)
    }

    /// Softmax within contiguous segments of a column vector. `ptr` has one
    /// more entry than there are segments; segment s spans rows
    /// `ptr[s]..ptr[s+1]`. Empty segments are allowed.
    pub fn segment_softmax(&mut self, x: NodeId, ptr: &[usize]) -> Result<NodeId> {
        let (r, c) = self.dims(x);
        if c != 1 {
            return Err(Error::shape("segment_softmax", format!("wants column vector, got {r}×{c}")));
        }
        check_segments(ptr, r, "segment_softmax")?;
        let v = &self.nodes[x].value;
        let mut out = vec![0.0; r];
        for s in ptr.windows(2) {
            let (lo, hi) = (s[0], s[1]);
            if lo == hi {
                continue;
            }
            let m = v[lo..hi].iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let mut denom = 0.0;
            for e in lo..hi {
                out[e] = (v[e] - m).exp();
                denom += out[e];
            }
            for o in &mut out[lo..hi] {
                *o /= denom;
            }
        }
        let ng = self.needs(x);
        self.push(
            Op::SegmentSoftmax {
                x,
                ptr: ptr.to_vec(),
            },
            r,
            1,
            out,
            ng,
        )
    }

    /// out[s] = Σ_{e ∈ segment s} w[e]·x[e]; empty segments give zero rows.
    pub fn segment_weighted_sum(&mut self, w: NodeId, x: NodeId, ptr: &[usize]) -> Result<NodeId> {
        let (wr, wc) = self.dims(w);
        let (xr, d) = self.dims(x);
        if wc != 1 || wr != xr {
            return Err(Error::shape(
                "segment_weighted_sum",
                format!("w {wr}×{wc} vs x {xr}×{d}"),
            ));
        }
        check_segments(ptr, xr, "segment_weighted_sum")?;
        let n_seg = ptr.len() - 1;
        let wv = &self.nodes[w].value;
        let xv = &self.nodes[x].value;
        let mut out = vec![0.0; n_seg * d];
        for (s, win) in ptr.windows(2).enumerate() {
            let row = &mut out[s * d..(s + 1) * d];
            for e in win[0]..win[1] {
                let we = wv[e];
                for (o, &xvv) in row.iter_mut().zip(&xv[e * d..(e + 1) * d]) {
                    *o += we * xvv;
                }
            }
        }
        let ng = self.needs(w) || self.needs(x);
        self.push(
            Op::SegmentWeightedSum {
                w,
                x,
                ptr: ptr.to_vec(),
            },
            n_seg,
            d,
            out,
            ng,
        )
    }

    /// Mean over rows of −log softmax(x)[label]; the scalar loss node.
    pub fn cross_entropy_rows(&mut self, x: NodeId, labels: &[usize]) -> Result<NodeId> {
        let (r, c) = self.dims(x);
        if labels.len() != r {
            return Err(Error::shape(
                "cross_entropy_rows",
                format!("{} labels for {r} rows", labels.len()),
            ));
        }
        let mut total = 0.0;
        for (i, row) in self.nodes[x].value.chunks(c).enumerate() {
            let y = labels[i];
            if y >= c {
                return Err(Error::shape("cross_entropy_rows", format!("label {y} out of {c}")));
            }
            let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
            total += lse - row[y];
        }
        let ng = self.needs(x);
        self.push(
            Op::CrossEntropyRows {
                x,
                labels: labels.to_vec(),
            },
            1,
            1,
            vec![total / r as f64],
            ng,
        )
    }

    // ── Backward ────────────────────────────────────────────────────

    /// Reverse sweep from a scalar root. Returns gradients for every
    /// `requires_grad` leaf reachable from the root; interior gradients are
    /// freed as soon as they have been propagated.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        let (rr, rc) = self.dims(root);
        if rr != 1 || rc != 1 {
            return Err(Error::shape("backward", format!("root must be scalar, got {rr}×{rc}")));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = (0..n).map(|_| None).collect();
        grads[root] = Some(vec![1.0]);

        for id in (0..=root).rev() {
            if !self.nodes[id].needs_grad {
                grads[id] = None;
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::Matmul { a, b } => {
                    let (m, k) = self.dims(*a);
                    let (_, nn) = self.dims(*b);
                    if self.needs(*a) {
                        let mut ga = vec![0.0; m * k];
                        matmul_nt_raw(&g, &self.nodes[*b].value, m, nn, k, &mut ga);
                        accumulate(&mut grads[*a], ga);
                    }
                    if self.needs(*b) {
                        let mut gb = vec![0.0; k * nn];
                        matmul_tn_raw(&self.nodes[*a].value, &g, m, k, nn, &mut gb);
                        accumulate(&mut grads[*b], gb);
                    }
                }
                Op::MatmulNT { a, b } => {
                    // out = a·bᵀ with a: m×n, b: k×n, out: m×k
                    let (m, nn) = self.dims(*a);
                    let (k, _) = self.dims(*b);
                    if self.needs(*a) {
                        let mut ga = vec![0.0; m * nn];
                        matmul_raw(&g, &self.nodes[*b].value, m, k, nn, &mut ga);
                        accumulate(&mut grads[*a], ga);
                    }
                    if self.needs(*b) {
                        let mut gb = vec![0.0; k * nn];
                        matmul_tn_raw(&g, &self.nodes[*a].value, m, k, nn, &mut gb);
                        accumulate(&mut grads[*b], gb);
                    }
                }
                Op::Add { a, b } => {
                    if self.needs(*a) {
                        accumulate(&mut grads[*a], g.clone());
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads[*b], g.clone());
                    }
                }
                Op::AddBias { x, bias } => {
                    let c = node.cols;
                    if self.needs(*x) {
                        accumulate(&mut grads[*x], g.clone());
                    }
                    if self.needs(*bias) {
                        let mut gb = vec![0.0; c];
                        for row in g.chunks(c) {
                            for (o, &v) in gb.iter_mut().zip(row) {
                                *o += v;
                            }
                        }
                        accumulate(&mut grads[*bias], gb);
                    }
                }
                Op::AddColBroadcast { x, col } => {
                    let c = node.cols;
                    if self.needs(*x) {
                        accumulate(&mut grads[*x], g.clone());
                    }
                    if self.needs(*col) {
                        let gc: Vec<f64> = g.chunks(c).map(|row| row.iter().sum()).collect();
                        accumulate(&mut grads[*col], gc);
                    }
                }
                Op::Mul { a, b } => {
                    if self.needs(*a) {
                        let ga: Vec<f64> = g.iter().zip(&self.nodes[*b].value).map(|(gv, bv)| gv * bv).collect();
                        accumulate(&mut grads[*a], ga);
                    }
                    if self.needs(*b) {
                        let gb: Vec<f64> = g.iter().zip(&self.nodes[*a].value).map(|(gv, av)| gv * av).collect();
                        accumulate(&mut grads[*b], gb);
                    }
                }
                Op::Scale { x, k } => {
                    if self.needs(*x) {
                        let gx: Vec<f64> = g.iter().map(|v| v * k).collect();
                        accumulate(&mut grads[*x], gx);
                    }
                }
                Op::ConcatCols { xs } => {
                    let r = node.rows;
                    let total_c = node.cols;
                    let mut offset = 0;
                    for &x in xs {
                        let c = self.dims(x).1;
                        if self.needs(x) {
                            let mut gx = Vec::with_capacity(r * c);
                            for i in 0..r {
                                gx.extend_from_slice(&g[i * total_c + offset..i * total_c + offset + c]);
                            }
                            accumulate(&mut grads[x], gx);
                        }
                        offset += c;
                    }
                }
                Op::ConcatRows { xs } => {
                    let c = node.cols;
                    let mut offset = 0;
                    for &x in xs {
                        let r = self.dims(x).0;
                        if self.needs(x) {
                            accumulate(&mut grads[x], g[offset * c..(offset + r) * c].to_vec());
                        }
                        offset += r;
                    }
                }
                Op::SliceRows { x, start } => {
                    if self.needs(*x) {
                        let (xr, c) = self.dims(*x);
                        let mut gx = vec![0.0; xr * c];
                        gx[start * c..start * c + g.len()].copy_from_slice(&g);
                        accumulate(&mut grads[*x], gx);
                    }
                }
                Op::SliceCols { x, start } => {
                    if self.needs(*x) {
                        let (xr, xc) = self.dims(*x);
                        let w = node.cols;
                        let mut gx = vec![0.0; xr * xc];
                        for i in 0..xr {
                            gx[i * xc + start..i * xc + start + w].copy_from_slice(&g[i * w..(i + 1) * w]);
                        }
                        accumulate(&mut grads[*x], gx);
                    }
                }
                Op::Reshape { x } => {
                    if self.needs(*x) {
                        accumulate(&mut grads[*x], g.clone());
                    }
                }
                Op::Gather { x, indices } => {
                    if self.needs(*x) {
                        let (xr, c) = self.dims(*x);
                        let mut gx = vec![0.0; xr * c];
                        for (i, &src) in indices.iter().enumerate() {
                            let dst = &mut gx[src * c..(src + 1) * c];
                            for (o, &v) in dst.iter_mut().zip(&g[i * c..(i + 1) * c]) {
                                *o += v;
                            }
                        }
                        accumulate(&mut grads[*x], gx);
                    }
                }
                Op::RotateCols { x, shift } => {
                    if self.needs(*x) {
                        let c = node.cols;
                        let inv = (c - shift) % c;
                        let mut gx = Vec::with_capacity(g.len());
                        for row in g.chunks(c) {
                            gx.extend_from_slice(&row[inv..]);
                            gx.extend_from_slice(&row[..inv]);
                        }
                        accumulate(&mut grads[*x], gx);
                    }
                }
                Op::RepeatInterleaveRows { x, times } => {
                    if self.needs(*x) {
                        let (xr, c) = self.dims(*x);
                        let mut gx = vec![0.0; xr * c];
                        for (i, row) in g.chunks(c).enumerate() {
                            let dst = &mut gx[(i / times) * c..(i / times + 1) * c];
                            for (o, &v) in dst.iter_mut().zip(row) {
                                *o += v;
                            }
                        }
                        accumulate(&mut grads[*x], gx);
                    }
                }
                Op::SoftmaxRows { x } => {
                    if self.needs(*x) {
                        let c = node.cols;
                        let y = &node.value;
                        let mut gx = vec![0.0; g.len()];
                        for i in 0..node.rows {
                            let ys = &y[i * c..(i + 1) * c];
                            let gs = &g[i * c..(i + 1) * c];
                            let dot: f64 = ys.iter().zip(gs).map(|(a, b)| a * b).sum();
                            for j in 0..c {
                                gx[i * c + j] = ys[j] * (gs[j] - dot);
                            }
                        }
                        accumulate(&mut grads[*x], gx);
                    }
                }
                Op::LeakyRelu { x, slope } => {
                    if self.needs(*x) {
                        let gx: Vec<f64> = self.nodes[*x]
                            .value
                            .iter()
                            .zip(&g)
                            .map(|(&v, gv)| if v > 0.0 { *gv } else { slope * gv })
                            .collect();
                        accumulate(&mut grads[*x], gx);
                    }
                }
                Op::Relu { x } => {
                    if self.needs(*x) {
                        let gx: Vec<f64> = self.nodes[*x]
                            .value
                            .iter()
                            .zip(&g)
                            .map(|(&v, gv)| if v > 0.0 { *gv } else { 0.0 })
                            .collect();
                        accumulate(&mut grads[*x], gx);
                    }
                }
                Op::Dropout { x, mask } => {
                    if self.needs(*x) {
                        let gx: Vec<f64> = g.iter().zip(mask).map(|(gv, m)| gv * m).collect();
                        accumulate(&mut grads[*x], gx);
                    }
                }
                Op::ZeroRows { x, zero } => {
                    if self.needs(*x) {
                        let c = node.cols;
                        let mut gx = g.clone();
                        for (i, &z) in zero.iter().enumerate() {
                            if z {
                                gx[i * c..(i + 1) * c].fill(0.0);
                            }
                        }
                        accumulate(&mut grads[*x], gx);
                    }
                }
                Op::SumAll { x } => {
                    if self.needs(*x) {
                        let numel = self.nodes[*x].value.len();
                        accumulate(&mut grads[*x], vec![g[0]; numel]);
                    }
                }
                Op::SumRows { x } => {
                    if self.needs(*x) {
                        let (xr, c) = self.dims(*x);
                        let mut gx = Vec::with_capacity(xr * c);
                        for i in 0..xr {
                            gx.extend(std::iter::repeat(g[i]).take(c));
                        }
                        accumulate(&mut grads[*x], gx);
                    }
                }
                Op::SumSquares { x } => {
                    if self.needs(*x) {
                        let gx: Vec<f64> = self.nodes[*x].value.iter().map(|v| 2.0 * v * g[0]).collect();
                        accumulate(&mut grads[*x], gx);
                    }
                }
                Op::SoftplusLseRows { x } => {
                    if self.needs(*x) {
                        let (xr, c) = self.dims(*x);
                        let xv = &self.nodes[*x].value;
                        let mut gx = vec![0.0; xr * c];
                        for i in 0..xr {
                            // exp(x_ij)/(1+Σexp) = exp(x_ij − out_i)
                            let out_i = node.value[i];
                            for j in 0..c {
                                gx[i * c + j] = g[i] * (xv[i * c + j] - out_i).exp();
                            }
                        }
                        accumulate(&mut grads[*x], gx);
                    }
                }
                Op::SegmentSoftmax { x, ptr } => {
                    if self.needs(*x) {
                        let y = &node.value;
                        let mut gx = vec![0.0; y.len()];
                        for s in ptr.windows(2) {
                            let (lo, hi) = (s[0], s[1]);
                            let dot: f64 = (lo..hi).map(|e| y[e] * g[e]).sum();
                            for e in lo..hi {
                                gx[e] = y[e] * (g[e] - dot);
                            }
                        }
                        accumulate(&mut grads[*x], gx);
                    }
                }
                Op::SegmentWeightedSum { w, x, ptr } => {
                    let d = node.cols;
                    let wv = &self.nodes[*w].value;
                    let xv = &self.nodes[*x].value;
                    if self.needs(*w) {
                        let mut gw = vec![0.0; wv.len()];
                        for (s, win) in ptr.windows(2).enumerate() {
                            let gr = &g[s * d..(s + 1) * d];
                            for e in win[0]..win[1] {
                                gw[e] = gr.iter().zip(&xv[e * d..(e + 1) * d]).map(|(a, b)| a * b).sum();
                            }
                        }
                        accumulate(&mut grads[*w], gw);
                    }
                    if self.needs(*x) {
                        let mut gx = vec![0.0; xv.len()];
                        for (s, win) in ptr.windows(2).enumerate() {
                            let gr = &g[s * d..(s + 1) * d];
                            for e in win[0]..win[1] {
                                let we = wv[e];
                                for (o, &gv) in gx[e * d..(e + 1) * d].iter_mut().zip(gr) {
                                    *o = we * gv;
                                }
                            }
                        }
                        accumulate(&mut grads[*x], gx);
                    }
                }
                Op::CrossEntropyRows { x, labels } => {
                    if self.needs(*x) {
                        let (xr, c) = self.dims(*x);
                        let xv = &self.nodes[*x].value;
                        let scale = g[0] / xr as f64;
                        let mut gx = vec![0.0; xr * c];
                        for i in 0..xr {
                            let row = &xv[i * c..(i + 1) * c];
                            let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                            let denom: f64 = row.iter().map(|&v| (v - m).exp()).sum();
                            for j in 0..c {
                                let p = (row[j] - m).exp() / denom;
                                gx[i * c + j] = scale * (p - if j == labels[i] { 1.0 } else { 0.0 });
                            }
                        }
                        accumulate(&mut grads[*x], gx);
                    }
                }
            }
        }

        // Retain only leaf gradients.
        for (id, slot) in grads.iter_mut().enumerate() {
            if !matches!(self.nodes[id].op, Op::Leaf) {
                *slot = None;
            }
        }
        Ok(Gradients { by_leaf: grads })
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, contribution: Vec<f64>) {
    match slot {
        Some(g) => {
            debug_assert_eq!(g.len(), contribution.len());
            for (o, v) in g.iter_mut().zip(contribution) {
                *o += v;
            }
        }
        None => *slot = Some(contribution),
    }
}

fn check_segments(ptr: &[usize], n: usize, op: &'static str) -> Result<()> {
    if ptr.len() < 2 || ptr[0] != 0 || *ptr.last().unwrap() != n {
        return Err(Error::shape(op, format!("segment pointer must span 0..{n}")));
    }
    if ptr.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::shape(op, "segment pointer not nondecreasing"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const E: f64 = std::f64::consts::E;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    // Central-difference check of a tape-built scalar against its backward
    // pass. `build` must be deterministic in the leaf values.
    fn fd_check<F>(leaves: &[(usize, usize, Vec<f64>)], tol: f64, build: F)
    where
        F: Fn(&mut Tape, &[NodeId]) -> NodeId,
    {
        let make = |vals: &[Vec<f64>]| {
            let mut tape = Tape::new();
            let ids: Vec<NodeId> = leaves
                .iter()
                .zip(vals)
                .map(|((r, c, _), v)| tape.leaf(*r, *c, v.clone(), true).unwrap())
                .collect();
            let root = build(&mut tape, &ids);
            (tape, ids, root)
        };
        let base: Vec<Vec<f64>> = leaves.iter().map(|(_, _, v)| v.clone()).collect();
        let (tape, ids, root) = make(&base);
        let grads = tape.backward(root).unwrap();
        let eps = 1e-5;
        for (li, vals) in base.iter().enumerate() {
            let g = grads.get_or_zeros(ids[li], vals.len());
            for k in 0..vals.len() {
                let mut plus = base.clone();
                plus[li][k] += eps;
                let mut minus = base.clone();
                minus[li][k] -= eps;
                let (tp, _, rp) = make(&plus);
                let (tm, _, rm) = make(&minus);
                let numeric = (tp.scalar_value(rp) - tm.scalar_value(rm)) / (2.0 * eps);
                let analytic = g[k];
                let denom = analytic.abs().max(numeric.abs()).max(1e-8);
                let rel = (analytic - numeric).abs() / denom;
                assert!(
                    rel <= tol,
                    "leaf {li} coord {k}: analytic {analytic} vs numeric {numeric} (rel {rel})"
                );
            }
        }
    }

    fn rand_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        // Offset away from zero so ReLU-family kinks stay clear of fd probes.
        (0..n)
            .map(|_| {
                let v = rng.gen::<f64>() - 0.5;
                v + 0.2 * v.signum()
            })
            .collect()
    }

    #[test]
    fn matmul_identity_cases() {
        let mut t = Tape::new();
        let a = t.leaf(2, 2, vec![1.0, 2.0, 3.0, 4.0], false).unwrap();
        let eye = t.leaf(2, 2, vec![1.0, 0.0, 0.0, 1.0], false).unwrap();
        let out = t.matmul(a, eye).unwrap();
        assert_eq!(t.value(out), &[1.0, 2.0, 3.0, 4.0]);
        let col = t.leaf(2, 1, vec![5.0, 7.0], false).unwrap();
        let out2 = t.matmul(eye, col).unwrap();
        assert_eq!(t.value(out2), &[5.0, 7.0]);
        let row = t.leaf(1, 2, vec![1.0, 2.0], false).unwrap();
        let col2 = t.leaf(2, 1, vec![3.0, 4.0], false).unwrap();
        let out3 = t.matmul(row, col2).unwrap();
        assert_eq!(t.value(out3), &[11.0]);
    }

    #[test]
    fn matmul_shape_mismatch_errors() {
        let mut t = Tape::new();
        let a = t.leaf(2, 3, vec![0.0; 6], false).unwrap();
        let b = t.leaf(2, 2, vec![0.0; 4], false).unwrap();
        assert!(t.matmul(a, b).is_err());
    }

    #[test]
    fn softmax_uniform_and_stability() {
        let mut t = Tape::new();
        let x = t.leaf(1, 3, vec![0.0, 0.0, 0.0], false).unwrap();
        let y = t.softmax_rows(x, None).unwrap();
        for v in t.value(y) {
            assert!(close(*v, 1.0 / 3.0, 1e-12));
        }
        let big = t.leaf(1, 2, vec![1000.0, 1000.0], false).unwrap();
        let yb = t.softmax_rows(big, None).unwrap();
        assert_eq!(t.value(yb), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_masked_hand_value() {
        let mut t = Tape::new();
        let x = t.leaf(1, 3, vec![1.0, 2.0, 3.0], false).unwrap();
        let y = t.softmax_rows(x, Some(&[true, true, false])).unwrap();
        let v = t.value(y);
        assert!(close(v[0], 1.0 / (1.0 + E), 1e-12));
        assert!(close(v[1], E / (1.0 + E), 1e-12));
        assert_eq!(v[2], 0.0);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut t = Tape::new();
        let data: Vec<f64> = (0..40).map(|_| rng.gen::<f64>() * 10.0 - 5.0).collect();
        let x = t.leaf(8, 5, data, false).unwrap();
        let mask: Vec<bool> = (0..40).map(|i| i % 7 != 3).collect();
        let y = t.softmax_rows(x, Some(&mask)).unwrap();
        for (i, row) in t.value(y).chunks(5).enumerate() {
            let s: f64 = row.iter().sum();
            assert!(close(s, 1.0, 1e-9), "row {i} sums to {s}");
            for (j, v) in row.iter().enumerate() {
                assert!(*v >= 0.0);
                if !mask[i * 5 + j] {
                    assert_eq!(*v, 0.0);
                }
            }
        }
    }

    #[test]
    fn softmax_fully_masked_row_errors() {
        let mut t = Tape::new();
        let x = t.leaf(1, 2, vec![1.0, 2.0], false).unwrap();
        assert!(t.softmax_rows(x, Some(&[false, false])).is_err());
    }

    #[test]
    fn leaky_relu_values() {
        let mut t = Tape::new();
        let x = t.leaf(1, 3, vec![5.0, -1.0, 0.0], false).unwrap();
        let y = t.leaky_relu(x, 0.2).unwrap();
        assert_eq!(t.value(y), &[5.0, -0.2, 0.0]);
    }

    #[test]
    fn rotate_cols_spec_cases() {
        let mut t = Tape::new();
        let x = t.leaf(1, 4, vec![1.0, 2.0, 3.0, 4.0], false).unwrap();
        let y = t.rotate_cols(x, 1).unwrap();
        assert_eq!(t.value(y), &[2.0, 3.0, 4.0, 1.0]);
        let id0 = t.rotate_cols(x, 0).unwrap();
        assert_eq!(t.value(id0), t.value(x));
        let a = t.rotate_cols(x, 3).unwrap();
        let back = t.rotate_cols(a, 1).unwrap();
        assert_eq!(t.value(back), t.value(x));
    }

    #[test]
    fn zero_rows_and_repeat() {
        let mut t = Tape::new();
        let x = t.leaf(2, 2, vec![1.0, 2.0, 3.0, 4.0], false).unwrap();
        let z = t.zero_rows(x, &[false, true]).unwrap();
        assert_eq!(t.value(z), &[1.0, 2.0, 0.0, 0.0]);
        let r = t.repeat_interleave_rows(x, 2).unwrap();
        assert_eq!(t.value(r), &[1.0, 2.0, 1.0, 2.0, 3.0, 4.0, 3.0, 4.0]);
    }

    #[test]
    fn softplus_lse_zero_cols_is_zero() {
        let mut t = Tape::new();
        let x = t.leaf(3, 0, vec![], false).unwrap();
        let y = t.softplus_lse_rows(x).unwrap();
        assert_eq!(t.value(y), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn softplus_lse_matches_naive() {
        let mut t = Tape::new();
        let x = t.leaf(1, 3, vec![-1.0, 0.5, 2.0], false).unwrap();
        let y = t.softplus_lse_rows(x).unwrap();
        let naive = (1.0 + (-1.0f64).exp() + 0.5f64.exp() + 2.0f64.exp()).ln();
        assert!(close(t.scalar_value(y), naive, 1e-12));
    }

    #[test]
    fn segment_softmax_rows_sum_to_one_per_segment() {
        let mut t = Tape::new();
        let x = t.leaf(5, 1, vec![1.0, 2.0, 3.0, -1.0, 0.0], false).unwrap();
        let y = t.segment_softmax(x, &[0, 3, 3, 5]).unwrap();
        let v = t.value(y);
        assert!(close(v[0] + v[1] + v[2], 1.0, 1e-12));
        assert!(close(v[3] + v[4], 1.0, 1e-12));
    }

    #[test]
    fn cross_entropy_uniform_rows() {
        let mut t = Tape::new();
        let x = t.leaf(2, 4, vec![0.0; 8], false).unwrap();
        let l = t.cross_entropy_rows(x, &[1, 3]).unwrap();
        assert!(close(t.scalar_value(l), (4.0f64).ln(), 1e-12));
    }

    #[test]
    fn backward_needs_scalar_root() {
        let mut t = Tape::new();
        let x = t.leaf(2, 2, vec![0.0; 4], true).unwrap();
        assert!(t.backward(x).is_err());
    }

    #[test]
    fn grad_matmul_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let a = rand_vec(6, &mut rng);
        let b = rand_vec(12, &mut rng);
        fd_check(&[(2, 3, a), (3, 4, b)], 1e-6, |t, ids| {
            let m = t.matmul(ids[0], ids[1]).unwrap();
            t.sum_squares(m).unwrap()
        });
    }

    #[test]
    fn grad_matmul_nt() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = rand_vec(6, &mut rng);
        let b = rand_vec(9, &mut rng);
        fd_check(&[(2, 3, a), (3, 3, b)], 1e-6, |t, ids| {
            let m = t.matmul_nt(ids[0], ids[1]).unwrap();
            t.sum_squares(m).unwrap()
        });
    }

    #[test]
    fn grad_add_mul_scale_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let a = rand_vec(6, &mut rng);
        let b = rand_vec(6, &mut rng);
        let bias = rand_vec(3, &mut rng);
        let col = rand_vec(2, &mut rng);
        fd_check(&[(2, 3, a), (2, 3, b), (1, 3, bias), (2, 1, col)], 1e-6, |t, ids| {
            let s = t.add(ids[0], ids[1]).unwrap();
            let m = t.mul(s, ids[0]).unwrap();
            let sc = t.scale(m, -1.7).unwrap();
            let wb = t.add_bias(sc, ids[2]).unwrap();
            let wc = t.add_col_broadcast(wb, ids[3]).unwrap();
            t.sum_squares(wc).unwrap()
        });
    }

    #[test]
    fn grad_concat_slice_reshape() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let a = rand_vec(6, &mut rng);
        let b = rand_vec(4, &mut rng);
        fd_check(&[(2, 3, a), (2, 2, b)], 1e-6, |t, ids| {
            let cc = t.concat_cols(&[ids[0], ids[1]]).unwrap();
            let sl = t.slice_cols(cc, 1, 4).unwrap();
            let rr = t.concat_rows(&[sl, sl]).unwrap();
            let sr = t.slice_rows(rr, 1, 3).unwrap();
            let rs = t.reshape(sr, 3, 2).unwrap();
            t.sum_squares(rs).unwrap()
        });
    }

    #[test]
    fn grad_gather_scatter_adds() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let a = rand_vec(12, &mut rng);
        fd_check(&[(4, 3, a)], 1e-6, |t, ids| {
            // Repeated index 2 exercises gradient accumulation.
            let g = t.gather(ids[0], &[2, 0, 2, 3]).unwrap();
            t.sum_squares(g).unwrap()
        });
    }

    #[test]
    fn grad_rotate_repeat() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let a = rand_vec(8, &mut rng);
        fd_check(&[(2, 4, a)], 1e-6, |t, ids| {
            let r = t.rotate_cols(ids[0], 3).unwrap();
            let rep = t.repeat_interleave_rows(r, 3).unwrap();
            let m = t.mul(rep, rep).unwrap();
            t.sum_all(m).unwrap()
        });
    }

    #[test]
    fn grad_softmax_masked() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let a = rand_vec(8, &mut rng);
        let w = rand_vec(8, &mut rng);
        let mask = vec![true, true, false, true, true, false, true, true];
        fd_check(&[(2, 4, a), (2, 4, w)], 1e-6, move |t, ids| {
            let y = t.softmax_rows(ids[0], Some(&mask)).unwrap();
            let m = t.mul(y, ids[1]).unwrap();
            t.sum_squares(m).unwrap()
        });
    }

    #[test]
    fn grad_activations_and_zero_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let a = rand_vec(9, &mut rng);
        fd_check(&[(3, 3, a)], 1e-6, |t, ids| {
            let l = t.leaky_relu(ids[0], 0.2).unwrap();
            let r = t.relu(l).unwrap();
            let z = t.zero_rows(r, &[false, true, false]).unwrap();
            let s = t.sum_rows(z).unwrap();
            t.sum_squares(s).unwrap()
        });
    }

    #[test]
    fn grad_softplus_lse() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let a = rand_vec(10, &mut rng);
        fd_check(&[(2, 5, a)], 1e-6, |t, ids| {
            let y = t.softplus_lse_rows(ids[0]).unwrap();
            t.sum_all(y).unwrap()
        });
    }

    #[test]
    fn grad_segment_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let logits = rand_vec(6, &mut rng);
        let feats = rand_vec(18, &mut rng);
        let ptr = vec![0usize, 2, 2, 5, 6];
        let p2 = ptr.clone();
        fd_check(&[(6, 1, logits), (6, 3, feats)], 1e-6, move |t, ids| {
            let w = t.segment_softmax(ids[0], &p2).unwrap();
            let s = t.segment_weighted_sum(w, ids[1], &p2).unwrap();
            t.sum_squares(s).unwrap()
        });
        let _ = ptr;
    }

    #[test]
    fn grad_cross_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let a = rand_vec(12, &mut rng);
        fd_check(&[(3, 4, a)], 1e-6, |t, ids| {
            t.cross_entropy_rows(ids[0], &[0, 3, 1]).unwrap()
        });
    }

    #[test]
    fn grad_dropout_fixed_mask() {
        // Same rng seed on every rebuild keeps the mask identical, so the
        // finite-difference probe sees a fixed linear map.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let a = rand_vec(12, &mut rng);
        fd_check(&[(3, 4, a)], 1e-6, |t, ids| {
            let mut drop_rng = ChaCha8Rng::seed_from_u64(99);
            let d = t.dropout(ids[0], 0.4, &mut drop_rng).unwrap();
            t.sum_squares(d).unwrap()
        });
    }

    #[test]
    fn dropout_eval_train_contract() {
        let mut t = Tape::new();
        let x = t.leaf(1, 1000, vec![1.0; 1000], false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = t.dropout(x, 0.25, &mut rng).unwrap();
        let v = t.value(d);
        let kept = v.iter().filter(|&&x| x != 0.0).count();
        // Kept entries are scaled by 1/(1−p).
        for &e in v {
            assert!(e == 0.0 || close(e, 1.0 / 0.75, 1e-12));
        }
        assert!((kept as f64 - 750.0).abs() < 60.0, "kept {kept} of 1000 at p=0.25");
    }

    #[test]
    fn constant_subgraph_gets_no_grad() {
        let mut t = Tape::new();
        let p = t.leaf(1, 2, vec![1.0, 2.0], true).unwrap();
        let c = t.leaf(1, 2, vec![3.0, 4.0], false).unwrap();
        let m = t.mul(p, c).unwrap();
        let root = t.sum_all(m).unwrap();
        let g = t.backward(root).unwrap();
        assert_eq!(g.get(p).unwrap(), &[3.0, 4.0]);
        assert!(g.get(c).is_none());
    }

    #[test]
    fn unreachable_leaf_gets_zero_grad_on_request() {
        let mut t = Tape::new();
        let p = t.leaf(1, 2, vec![1.0, 2.0], true).unwrap();
        let q = t.leaf(1, 2, vec![5.0, 6.0], true).unwrap();
        let root = t.sum_squares(p).unwrap();
        let g = t.backward(root).unwrap();
        assert!(g.get(q).is_none());
        assert_eq!(g.get_or_zeros(q, 2), vec![0.0, 0.0]);
    }
}
