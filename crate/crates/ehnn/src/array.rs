//! Dense f64 array engine with tape-based reverse-mode differentiation.
//!
//! Everything downstream (layers, losses, the benchmark) is built from the
//! primitives here. Values are immutable after creation and cheap to share;
//! a [`Tape`] is confined to a single training step on a single thread.
//! Forward evaluation is deterministic: loops run in a fixed order, so
//! identical inputs give bit-identical outputs.
//!
//! All data is 64-bit: the oracle-equivalence suites compare reduced layers
//! against brute-force dense layers at 1e-9, which f32 cannot hold.

use std::cell::{Cell, RefCell};
use std::rc::Rc;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// Buffer with allocator-level accounting (used by the cost benchmark).

static LIVE_BYTES: AtomicUsize = AtomicUsize::new(0);
static PEAK_BYTES: AtomicUsize = AtomicUsize::new(0);

#[derive(Debug)]
struct Buf {
    data: Box<[f64]>,
}

impl Buf {
    fn new(data: Vec<f64>) -> Arc<Buf> {
        let bytes = data.len() * std::mem::size_of::<f64>();
        let live = LIVE_BYTES.fetch_add(bytes, Ordering::Relaxed) + bytes;
        PEAK_BYTES.fetch_max(live, Ordering::Relaxed);
        Arc::new(Buf {
            data: data.into_boxed_slice(),
        })
    }
}

impl Drop for Buf {
    fn drop(&mut self) {
        LIVE_BYTES.fetch_sub(self.data.len() * 8, Ordering::Relaxed);
    }
}

/// Bytes currently held in live `DiffArray` buffers.
pub fn live_bytes() -> usize {
    LIVE_BYTES.load(Ordering::Relaxed)
}

/// High-water mark of [`live_bytes`] since the last [`reset_peak_bytes`].
pub fn peak_bytes() -> usize {
    PEAK_BYTES.load(Ordering::Relaxed)
}

pub fn reset_peak_bytes() {
    PEAK_BYTES.store(LIVE_BYTES.load(Ordering::Relaxed), Ordering::Relaxed);
}

// ---------------------------------------------------------------------------
// DiffArray

pub type NodeId = usize;

/// Dense row-major f64 array, optionally attached to a tape node.
#[derive(Debug, Clone)]
pub struct DiffArray {
    shape: Vec<usize>,
    buf: Arc<Buf>,
    node: Option<NodeId>,
    requires_grad: bool,
}

impl DiffArray {
    /// Constant array; participates in computation but never receives a
    /// gradient.
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> DiffArray {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape/data length mismatch"
        );
        DiffArray {
            shape,
            buf: Buf::new(data),
            node: None,
            requires_grad: false,
        }
    }

    pub fn scalar(v: f64) -> DiffArray {
        DiffArray::from_vec(vec![1], vec![v])
    }

    pub fn zeros(shape: Vec<usize>) -> DiffArray {
        let n = shape.iter().product();
        DiffArray::from_vec(shape, vec![0.0; n])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.buf.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.buf.data
    }

    pub fn node_id(&self) -> Option<NodeId> {
        self.node
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    /// Row count for 1-D or 2-D arrays.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Column count: 1 for 1-D arrays, second extent for 2-D.
    pub fn cols(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[1]
        } else {
            1
        }
    }

    /// Same buffer, detached from any tape node (a constant view).
    pub fn detached(&self) -> DiffArray {
        DiffArray {
            shape: self.shape.clone(),
            buf: Arc::clone(&self.buf),
            node: None,
            requires_grad: false,
        }
    }
}

// ---------------------------------------------------------------------------
// Tape

#[derive(Debug)]
enum Record {
    Leaf,
    Add {
        a: Input,
        b: Input,
        broadcast_bias: bool,
    },
    Mul {
        a: Input,
        b: Input,
        broadcast_col: bool,
    },
    MatMul {
        a: Input,
        b: Input,
        m: usize,
        p: usize,
        q: usize,
    },
    RowwiseMatMul {
        a: Input,
        w: Input,
        m: usize,
        d: usize,
        q: usize,
    },
    ConcatChannels {
        xs: Vec<Input>,
        widths: Vec<usize>,
        rows: usize,
    },
    SliceChannels {
        a: Input,
        start: usize,
        len: usize,
        cols: usize,
        rows: usize,
    },
    Reshape {
        a: Input,
    },
    Relu {
        a: Input,
    },
    Softplus {
        a: Input,
    },
    Log {
        a: Input,
    },
    SoftmaxOverSegments {
        out: Arc<Buf>,
        ids: Rc<Vec<usize>>,
        num_segments: usize,
        a_node: Option<NodeId>,
        cols: usize,
    },
    SegmentSum {
        ids: Rc<Vec<usize>>,
        a_node: Option<NodeId>,
        in_rows: usize,
        cols: usize,
    },
    GatherRows {
        ids: Rc<Vec<usize>>,
        a_node: Option<NodeId>,
        in_rows: usize,
        cols: usize,
    },
    Scale {
        a: Input,
        factor: f64,
    },
    SumAll {
        a_node: Option<NodeId>,
        numel: usize,
    },
    LayerNormRows {
        out: Arc<Buf>,
        inv_std: Vec<f64>,
        a_node: Option<NodeId>,
        cols: usize,
    },
}

/// Saved input: node id (if the input participates in grad) plus its value
/// when the backward rule needs it.
#[derive(Debug)]
struct Input {
    node: Option<NodeId>,
    value: Option<Arc<Buf>>,
    shape: Vec<usize>,
}

impl Input {
    fn of(a: &DiffArray, save_value: bool) -> Input {
        Input {
            node: a.node,
            value: save_value.then(|| Arc::clone(&a.buf)),
            shape: a.shape.clone(),
        }
    }

    fn data(&self) -> &[f64] {
        &self.value.as_ref().expect("value not saved").data
    }
}

struct Node {
    record: Record,
}

/// Ordered record of primitive applications for one forward pass.
///
/// The tape is single-threaded by construction (interior mutability through
/// `RefCell`); share `DiffArray` values across threads instead.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    consumed: Cell<bool>,
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape {
            nodes: RefCell::new(Vec::new()),
            consumed: Cell::new(false),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, record: Record) -> Result<NodeId> {
        if self.consumed.get() {
            return Err(Error::TapeConsumed);
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { record });
        Ok(nodes.len() - 1)
    }

    /// Register a gradient leaf. The returned array's node id keys the
    /// gradient map produced by [`Tape::backward`].
    pub fn leaf(&self, shape: Vec<usize>, data: Vec<f64>) -> Result<DiffArray> {
        let mut arr = DiffArray::from_vec(shape, data);
        arr.node = Some(self.push(Record::Leaf)?);
        arr.requires_grad = true;
        Ok(arr)
    }

    fn result(
        &self,
        shape: Vec<usize>,
        data: Vec<f64>,
        grad: bool,
        record: impl FnOnce() -> Record,
    ) -> Result<DiffArray> {
        let mut arr = DiffArray::from_vec(shape, data);
        if grad {
            arr.node = Some(self.push(record())?);
            arr.requires_grad = true;
        }
        Ok(arr)
    }

    // -- primitives ---------------------------------------------------------

    /// Elementwise sum. Also accepts a 1-D `b` of length `cols(a)` broadcast
    /// across rows (bias addition); no other broadcasting exists.
    pub fn add(&self, a: &DiffArray, b: &DiffArray) -> Result<DiffArray> {
        let broadcast = a.shape != b.shape;
        if broadcast && !(b.shape.len() == 1 && a.cols() == b.shape[0] && a.shape.len() == 2) {
            return Err(shape_err("add", format!("{:?} vs {:?}", a.shape, b.shape)));
        }
        let mut out = a.data().to_vec();
        if broadcast {
            let cols = a.cols();
            let bd = b.data();
            for row in out.chunks_mut(cols) {
                for (o, bv) in row.iter_mut().zip(bd) {
                    *o += bv;
                }
            }
        } else {
            for (o, bv) in out.iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
        let grad = a.requires_grad || b.requires_grad;
        self.result(a.shape.clone(), out, grad, || Record::Add {
            a: Input::of(a, false),
            b: Input::of(b, false),
            broadcast_bias: broadcast,
        })
    }

    /// Elementwise product. Also accepts a `[rows, 1]` operand `b` broadcast
    /// across the columns of `a` (per-row scaling, used for attention
    /// weights and dropout-style masks).
    pub fn mul(&self, a: &DiffArray, b: &DiffArray) -> Result<DiffArray> {
        let broadcast =
            a.shape != b.shape && b.shape.len() == 2 && b.shape[1] == 1 && b.shape[0] == a.rows();
        if a.shape != b.shape && !broadcast {
            return Err(shape_err("mul", format!("{:?} vs {:?}", a.shape, b.shape)));
        }
        let mut out = a.data().to_vec();
        if broadcast {
            let cols = a.cols();
            for (r, row) in out.chunks_mut(cols).enumerate() {
                let s = b.data()[r];
                for o in row.iter_mut() {
                    *o *= s;
                }
            }
        } else {
            for (o, bv) in out.iter_mut().zip(b.data()) {
                *o *= bv;
            }
        }
        let grad = a.requires_grad || b.requires_grad;
        self.result(a.shape.clone(), out, grad, || Record::Mul {
            a: Input::of(a, true),
            b: Input::of(b, true),
            broadcast_col: broadcast,
        })
    }

    /// `[m, p] x [p, q] -> [m, q]`.
    pub fn matmul(&self, a: &DiffArray, b: &DiffArray) -> Result<DiffArray> {
        if a.shape.len() != 2 || b.shape.len() != 2 || a.shape[1] != b.shape[0] {
            return Err(shape_err(
                "matmul",
                format!("{:?} x {:?}", a.shape, b.shape),
            ));
        }
        let (m, p, q) = (a.shape[0], a.shape[1], b.shape[1]);
        let out = matmul_f64(a.data(), b.data(), m, p, q);
        let grad = a.requires_grad || b.requires_grad;
        self.result(vec![m, q], out, grad, || Record::MatMul {
            a: Input::of(a, true),
            b: Input::of(b, true),
            m,
            p,
            q,
        })
    }

    /// Row-batched vector-matrix product: each row of `a` (`[m, d]`) is
    /// multiplied by its own `d x q` matrix stored row-major in the same row
    /// of `w` (`[m, d*q]`). This is the kernel behind per-message weight
    /// application in the naive EHNN layer.
    pub fn rowwise_matmul(&self, a: &DiffArray, w: &DiffArray) -> Result<DiffArray> {
        if a.shape.len() != 2 || w.shape.len() != 2 || a.shape[0] != w.shape[0] {
            return Err(shape_err(
                "rowwise_matmul",
                format!("{:?} x {:?}", a.shape, w.shape),
            ));
        }
        let (m, d) = (a.shape[0], a.shape[1]);
        if d == 0 || w.shape[1] % d != 0 {
            return Err(shape_err(
                "rowwise_matmul",
                format!("weight width {} not a multiple of {}", w.shape[1], d),
            ));
        }
        let q = w.shape[1] / d;
        let mut out = vec![0.0; m * q];
        let (ad, wd) = (a.data(), w.data());
        for r in 0..m {
            let arow = &ad[r * d..(r + 1) * d];
            let wrow = &wd[r * d * q..(r + 1) * d * q];
            let orow = &mut out[r * q..(r + 1) * q];
            for (c, &av) in arow.iter().enumerate() {
                if av != 0.0 {
                    let wblk = &wrow[c * q..(c + 1) * q];
                    for (o, &wv) in orow.iter_mut().zip(wblk) {
                        *o += av * wv;
                    }
                }
            }
        }
        let grad = a.requires_grad || w.requires_grad;
        self.result(vec![m, q], out, grad, || Record::RowwiseMatMul {
            a: Input::of(a, true),
            w: Input::of(w, true),
            m,
            d,
            q,
        })
    }

    /// Concatenate 2-D arrays with equal row counts along the channel axis.
    pub fn concat_channels(&self, xs: &[&DiffArray]) -> Result<DiffArray> {
        if xs.is_empty() {
            return Err(shape_err("concat_channels", "no inputs".into()));
        }
        let rows = xs[0].rows();
        if xs.iter().any(|x| x.shape.len() != 2 || x.rows() != rows) {
            return Err(shape_err(
                "concat_channels",
                format!("{:?}", xs.iter().map(|x| x.shape()).collect::<Vec<_>>()),
            ));
        }
        let widths: Vec<usize> = xs.iter().map(|x| x.cols()).collect();
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; rows * total];
        for r in 0..rows {
            let orow = &mut out[r * total..(r + 1) * total];
            let mut at = 0;
            for (x, &w) in xs.iter().zip(&widths) {
                orow[at..at + w].copy_from_slice(&x.data()[r * w..(r + 1) * w]);
                at += w;
            }
        }
        let grad = xs.iter().any(|x| x.requires_grad);
        self.result(vec![rows, total], out, grad, || Record::ConcatChannels {
            xs: xs.iter().map(|x| Input::of(x, false)).collect(),
            widths,
            rows,
        })
    }

    /// Channel slice `[m, cols] -> [m, len]` starting at `start`.
    pub fn slice_channels(&self, a: &DiffArray, start: usize, len: usize) -> Result<DiffArray> {
        if a.shape.len() != 2 || start + len > a.cols() {
            return Err(shape_err(
                "slice_channels",
                format!("{:?} slice {}..{}", a.shape, start, start + len),
            ));
        }
        let (rows, cols) = (a.rows(), a.cols());
        let mut out = vec![0.0; rows * len];
        for r in 0..rows {
            out[r * len..(r + 1) * len]
                .copy_from_slice(&a.data()[r * cols + start..r * cols + start + len]);
        }
        self.result(vec![rows, len], out, a.requires_grad, || {
            Record::SliceChannels {
                a: Input::of(a, false),
                start,
                len,
                cols,
                rows,
            }
        })
    }

    /// Shape metadata change; element count must be preserved.
    pub fn reshape(&self, a: &DiffArray, shape: Vec<usize>) -> Result<DiffArray> {
        if shape.iter().product::<usize>() != a.numel() {
            return Err(shape_err(
                "reshape",
                format!("{:?} -> {:?}", a.shape, shape),
            ));
        }
        self.result(shape, a.data().to_vec(), a.requires_grad, || {
            Record::Reshape {
                a: Input::of(a, false),
            }
        })
    }

    /// max(0, x). The subgradient at exactly 0 is 0.
    pub fn relu(&self, a: &DiffArray) -> Result<DiffArray> {
        let out = a.data().iter().map(|&x| x.max(0.0)).collect();
        self.result(a.shape.clone(), out, a.requires_grad, || Record::Relu {
            a: Input::of(a, true),
        })
    }

    /// ln(1 + e^x), evaluated in the overflow-free split form.
    pub fn softplus(&self, a: &DiffArray) -> Result<DiffArray> {
        let out = a
            .data()
            .iter()
            .map(|&x| x.max(0.0) + (-x.abs()).exp().ln_1p())
            .collect();
        self.result(a.shape.clone(), out, a.requires_grad, || Record::Softplus {
            a: Input::of(a, true),
        })
    }

    pub fn log(&self, a: &DiffArray) -> Result<DiffArray> {
        let out = a.data().iter().map(|&x| x.ln()).collect();
        self.result(a.shape.clone(), out, a.requires_grad, || Record::Log {
            a: Input::of(a, true),
        })
    }

    /// Softmax normalized within each segment, independently per column.
    /// All attention in this crate normalizes over masked key sets, so the
    /// segment form is the only softmax provided. Empty segments are legal
    /// (they simply have no rows).
    pub fn softmax_over_segments(
        &self,
        a: &DiffArray,
        ids: &Rc<Vec<usize>>,
        num_segments: usize,
    ) -> Result<DiffArray> {
        let (rows, cols) = as_2d("softmax_over_segments", a, ids, num_segments)?;
        let mut out = a.data().to_vec();
        // max-shift per (segment, column) for numerical stability
        let mut maxes = vec![f64::NEG_INFINITY; num_segments * cols];
        for r in 0..rows {
            let s = ids[r];
            for c in 0..cols {
                let m = &mut maxes[s * cols + c];
                *m = m.max(out[r * cols + c]);
            }
        }
        let mut sums = vec![0.0; num_segments * cols];
        for r in 0..rows {
            let s = ids[r];
            for c in 0..cols {
                let e = (out[r * cols + c] - maxes[s * cols + c]).exp();
                out[r * cols + c] = e;
                sums[s * cols + c] += e;
            }
        }
        for r in 0..rows {
            let s = ids[r];
            for c in 0..cols {
                out[r * cols + c] /= sums[s * cols + c];
            }
        }
        let a_node = a.node;
        let grad = a.requires_grad;
        let mut arr = DiffArray::from_vec(a.shape.clone(), out);
        if grad {
            arr.node = Some(self.push(Record::SoftmaxOverSegments {
                out: Arc::clone(&arr.buf),
                ids: Rc::clone(ids),
                num_segments,
                a_node,
                cols,
            })?);
            arr.requires_grad = true;
        }
        Ok(arr)
    }

    /// `[m, d]` values scattered by `ids` into `[num_segments, d]` row sums.
    pub fn segment_sum(
        &self,
        a: &DiffArray,
        ids: &Rc<Vec<usize>>,
        num_segments: usize,
    ) -> Result<DiffArray> {
        let (rows, cols) = as_2d("segment_sum", a, ids, num_segments)?;
        let mut out = vec![0.0; num_segments * cols];
        for r in 0..rows {
            let s = ids[r];
            let src = &a.data()[r * cols..(r + 1) * cols];
            let dst = &mut out[s * cols..(s + 1) * cols];
            for (d, v) in dst.iter_mut().zip(src) {
                *d += v;
            }
        }
        self.result(vec![num_segments, cols], out, a.requires_grad, || {
            Record::SegmentSum {
                ids: Rc::clone(ids),
                a_node: a.node,
                in_rows: rows,
                cols,
            }
        })
    }

    /// `out[r] = a[ids[r]]`; the adjoint of [`Tape::segment_sum`].
    pub fn gather_rows(&self, a: &DiffArray, ids: &Rc<Vec<usize>>) -> Result<DiffArray> {
        if a.shape.is_empty() || a.shape.len() > 2 {
            return Err(shape_err("gather_rows", format!("{:?}", a.shape)));
        }
        let in_rows = a.rows();
        let cols = a.cols();
        if let Some(&bad) = ids.iter().find(|&&i| i >= in_rows) {
            return Err(Error::SegmentOutOfRange {
                id: bad,
                num_segments: in_rows,
            });
        }
        let mut out = vec![0.0; ids.len() * cols];
        for (r, &src) in ids.iter().enumerate() {
            out[r * cols..(r + 1) * cols].copy_from_slice(&a.data()[src * cols..(src + 1) * cols]);
        }
        self.result(vec![ids.len(), cols], out, a.requires_grad, || {
            Record::GatherRows {
                ids: Rc::clone(ids),
                a_node: a.node,
                in_rows,
                cols,
            }
        })
    }

    /// Multiply by a compile-time-known scalar (no gradient for the factor).
    pub fn scale(&self, a: &DiffArray, factor: f64) -> Result<DiffArray> {
        let out = a.data().iter().map(|&x| x * factor).collect();
        self.result(a.shape.clone(), out, a.requires_grad, || Record::Scale {
            a: Input::of(a, false),
            factor,
        })
    }

    /// Sum of all elements, as a `[1]` scalar.
    pub fn sum_all(&self, a: &DiffArray) -> Result<DiffArray> {
        let s = a.data().iter().sum();
        self.result(vec![1], vec![s], a.requires_grad, || Record::SumAll {
            a_node: a.node,
            numel: a.numel(),
        })
    }

    /// Per-row standardization `(x - mean) / sqrt(var + 1e-5)`, no affine
    /// parameters (a following linear layer supplies scale and shift).
    /// Keeps summed-message magnitudes bounded across deep stacks.
    pub fn layer_norm_rows(&self, a: &DiffArray) -> Result<DiffArray> {
        if a.shape.len() != 2 {
            return Err(shape_err("layer_norm_rows", format!("{:?}", a.shape)));
        }
        let (rows, cols) = (a.rows(), a.cols());
        let eps = 1e-5;
        let mut out = vec![0.0; rows * cols];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let row = &a.data()[r * cols..(r + 1) * cols];
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[r] = inv;
            for (o, &x) in out[r * cols..(r + 1) * cols].iter_mut().zip(row) {
                *o = (x - mean) * inv;
            }
        }
        let a_node = a.node;
        let grad = a.requires_grad;
        let mut arr = DiffArray::from_vec(a.shape.clone(), out);
        if grad {
            arr.node = Some(self.push(Record::LayerNormRows {
                out: Arc::clone(&arr.buf),
                inv_std,
                a_node,
                cols,
            })?);
            arr.requires_grad = true;
        }
        Ok(arr)
    }

    // -- backward -----------------------------------------------------------

    /// Reverse sweep from a scalar output. Gradients accumulate by summation
    /// over all paths; the tape is consumed afterwards and any further use
    /// is an error.
    pub fn backward(&self, output: &DiffArray) -> Result<Gradients> {
        if !output.is_scalar() {
            return Err(Error::NonScalarOutput {
                shape: output.shape.clone(),
            });
        }
        if self.consumed.get() {
            return Err(Error::TapeConsumed);
        }
        let out_node = output.node.ok_or_else(|| {
            Error::InvalidConfig("backward on an output with no gradient dependencies".into())
        })?;
        self.consumed.set(true);
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[out_node] = Some(vec![1.0]);

        for id in (0..=out_node).rev() {
            let Some(g) = grads[id].take() else { continue };
            let keep_leaf = matches!(nodes[id].record, Record::Leaf);
            backprop(&nodes[id].record, &g, &mut grads);
            if keep_leaf {
                grads[id] = Some(g);
            }
        }

        Ok(Gradients {
            grads: grads
                .into_iter()
                .map(|g| g.map(|v| DiffArray::from_vec(vec![v.len()], v)))
                .collect(),
        })
    }
}

/// Gradient map keyed by tape node id; only leaves survive the sweep.
pub struct Gradients {
    grads: Vec<Option<DiffArray>>,
}

impl Gradients {
    pub fn by_node(&self, id: NodeId) -> Option<&DiffArray> {
        self.grads.get(id).and_then(|g| g.as_ref())
    }

    /// Gradient of a leaf array, flattened, or zeros when the output did not
    /// depend on it.
    pub fn for_leaf(&self, leaf: &DiffArray) -> Vec<f64> {
        match leaf.node.and_then(|id| self.by_node(id)) {
            Some(g) => g.data().to_vec(),
            None => vec![0.0; leaf.numel()],
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], node: Option<NodeId>, contribution: &[f64]) {
    let Some(id) = node else { return };
    match &mut grads[id] {
        Some(g) => {
            for (a, b) in g.iter_mut().zip(contribution) {
                *a += b;
            }
        }
        slot => *slot = Some(contribution.to_vec()),
    }
}

fn backprop(record: &Record, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    match record {
        Record::Leaf => {}
        Record::Add {
            a,
            b,
            broadcast_bias,
        } => {
            accumulate(grads, a.node, g);
            if b.node.is_some() {
                if *broadcast_bias {
                    let cols = b.shape[0];
                    let mut gb = vec![0.0; cols];
                    for row in g.chunks(cols) {
                        for (s, v) in gb.iter_mut().zip(row) {
                            *s += v;
                        }
                    }
                    accumulate(grads, b.node, &gb);
                } else {
                    accumulate(grads, b.node, g);
                }
            }
        }
        Record::Mul {
            a,
            b,
            broadcast_col,
        } => {
            let (ad, bd) = (a.data(), b.data());
            let cols = if a.shape.len() == 2 { a.shape[1] } else { 1 };
            if *broadcast_col {
                if a.node.is_some() {
                    let ga: Vec<f64> = g
                        .iter()
                        .enumerate()
                        .map(|(i, &gv)| gv * bd[i / cols])
                        .collect();
                    accumulate(grads, a.node, &ga);
                }
                if b.node.is_some() {
                    let mut gb = vec![0.0; bd.len()];
                    for (i, &gv) in g.iter().enumerate() {
                        gb[i / cols] += gv * ad[i];
                    }
                    accumulate(grads, b.node, &gb);
                }
            } else {
                if a.node.is_some() {
                    let ga: Vec<f64> = g.iter().zip(bd).map(|(gv, bv)| gv * bv).collect();
                    accumulate(grads, a.node, &ga);
                }
                if b.node.is_some() {
                    let gb: Vec<f64> = g.iter().zip(ad).map(|(gv, av)| gv * av).collect();
                    accumulate(grads, b.node, &gb);
                }
            }
        }
        Record::MatMul { a, b, m, p, q } => {
            if a.node.is_some() {
                // dL/dA = G B^T
                let bt = transpose(b.data(), *p, *q);
                let ga = matmul_f64(g, &bt, *m, *q, *p);
                accumulate(grads, a.node, &ga);
            }
            if b.node.is_some() {
                // dL/dB = A^T G
                let at = transpose(a.data(), *m, *p);
                let gb = matmul_f64(&at, g, *p, *m, *q);
                accumulate(grads, b.node, &gb);
            }
        }
        Record::RowwiseMatMul { a, w, m, d, q } => {
            let (ad, wd) = (a.data(), w.data());
            if a.node.is_some() {
                let mut ga = vec![0.0; m * d];
                for r in 0..*m {
                    let grow = &g[r * q..(r + 1) * q];
                    let wrow = &wd[r * d * q..(r + 1) * d * q];
                    let garow = &mut ga[r * d..(r + 1) * d];
                    for c in 0..*d {
                        let wblk = &wrow[c * q..(c + 1) * q];
                        garow[c] = grow.iter().zip(wblk).map(|(x, y)| x * y).sum();
                    }
                }
                accumulate(grads, a.node, &ga);
            }
            if w.node.is_some() {
                let mut gw = vec![0.0; m * d * q];
                for r in 0..*m {
                    let grow = &g[r * q..(r + 1) * q];
                    let arow = &ad[r * d..(r + 1) * d];
                    let gwrow = &mut gw[r * d * q..(r + 1) * d * q];
                    for (c, &av) in arow.iter().enumerate() {
                        if av != 0.0 {
                            for (gv, slot) in grow.iter().zip(&mut gwrow[c * q..(c + 1) * q]) {
                                *slot = av * gv;
                            }
                        }
                    }
                }
                accumulate(grads, w.node, &gw);
            }
        }
        Record::ConcatChannels { xs, widths, rows } => {
            let total: usize = widths.iter().sum();
            let mut at = 0;
            for (x, &w) in xs.iter().zip(widths) {
                if x.node.is_some() {
                    let mut gx = vec![0.0; rows * w];
                    for r in 0..*rows {
                        gx[r * w..(r + 1) * w]
                            .copy_from_slice(&g[r * total + at..r * total + at + w]);
                    }
                    accumulate(grads, x.node, &gx);
                }
                at += w;
            }
        }
        Record::SliceChannels {
            a,
            start,
            len,
            cols,
            rows,
        } => {
            if a.node.is_some() {
                let mut ga = vec![0.0; rows * cols];
                for r in 0..*rows {
                    ga[r * cols + start..r * cols + start + len]
                        .copy_from_slice(&g[r * len..(r + 1) * len]);
                }
                accumulate(grads, a.node, &ga);
            }
        }
        Record::Reshape { a } => accumulate(grads, a.node, g),
        Record::Relu { a } => {
            if a.node.is_some() {
                let ga: Vec<f64> = a
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&x, &gv)| if x > 0.0 { gv } else { 0.0 })
                    .collect();
                accumulate(grads, a.node, &ga);
            }
        }
        Record::Softplus { a } => {
            if a.node.is_some() {
                let ga: Vec<f64> = a
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&x, &gv)| gv / (1.0 + (-x).exp()))
                    .collect();
                accumulate(grads, a.node, &ga);
            }
        }
        Record::Log { a } => {
            if a.node.is_some() {
                let ga: Vec<f64> = a.data().iter().zip(g).map(|(&x, &gv)| gv / x).collect();
                accumulate(grads, a.node, &ga);
            }
        }
        Record::SoftmaxOverSegments {
            out,
            ids,
            num_segments,
            a_node,
            cols,
        } => {
            if a_node.is_some() {
                let y = &out.data;
                let mut dot = vec![0.0; num_segments * cols];
                for (r, &s) in ids.iter().enumerate() {
                    for c in 0..*cols {
                        dot[s * cols + c] += g[r * cols + c] * y[r * cols + c];
                    }
                }
                let mut ga = vec![0.0; y.len()];
                for (r, &s) in ids.iter().enumerate() {
                    for c in 0..*cols {
                        let i = r * cols + c;
                        ga[i] = y[i] * (g[i] - dot[s * cols + c]);
                    }
                }
                accumulate(grads, *a_node, &ga);
            }
        }
        Record::SegmentSum {
            ids,
            a_node,
            in_rows,
            cols,
        } => {
            if a_node.is_some() {
                // Gradient is a gather: contributing rows receive the
                // upstream row bit-for-bit.
                let mut ga = vec![0.0; in_rows * cols];
                for (r, &s) in ids.iter().enumerate() {
                    ga[r * cols..(r + 1) * cols].copy_from_slice(&g[s * cols..(s + 1) * cols]);
                }
                accumulate(grads, *a_node, &ga);
            }
        }
        Record::GatherRows {
            ids,
            a_node,
            in_rows,
            cols,
        } => {
            if a_node.is_some() {
                let mut ga = vec![0.0; in_rows * cols];
                for (r, &s) in ids.iter().enumerate() {
                    for (slot, gv) in ga[s * cols..(s + 1) * cols]
                        .iter_mut()
                        .zip(&g[r * cols..(r + 1) * cols])
                    {
                        *slot += gv;
                    }
                }
                accumulate(grads, *a_node, &ga);
            }
        }
        Record::Scale { a, factor } => {
            if a.node.is_some() {
                let ga: Vec<f64> = g.iter().map(|&gv| gv * factor).collect();
                accumulate(grads, a.node, &ga);
            }
        }
        Record::SumAll { a_node, numel } => {
            if a_node.is_some() {
                accumulate(grads, *a_node, &vec![g[0]; *numel]);
            }
        }
        Record::LayerNormRows {
            out,
            inv_std,
            a_node,
            cols,
        } => {
            if a_node.is_some() {
                // dx = inv_std * (g - mean(g) - y * mean(g .* y)) per row
                let y = &out.data;
                let mut ga = vec![0.0; y.len()];
                let c = *cols as f64;
                for (r, &inv) in inv_std.iter().enumerate() {
                    let grow = &g[r * cols..(r + 1) * cols];
                    let yrow = &y[r * cols..(r + 1) * cols];
                    let g_mean = grow.iter().sum::<f64>() / c;
                    let gy_mean = grow.iter().zip(yrow).map(|(a, b)| a * b).sum::<f64>() / c;
                    for i in 0..*cols {
                        ga[r * cols + i] = inv * (grow[i] - g_mean - yrow[i] * gy_mean);
                    }
                }
                accumulate(grads, *a_node, &ga);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// helpers

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::ShapeMismatch { op, detail }
}

fn as_2d(
    op: &'static str,
    a: &DiffArray,
    ids: &[usize],
    num_segments: usize,
) -> Result<(usize, usize)> {
    if a.shape.is_empty() || a.shape.len() > 2 {
        return Err(shape_err(op, format!("{:?}", a.shape)));
    }
    let rows = a.rows();
    let cols = a.cols();
    if ids.len() != rows {
        return Err(shape_err(
            op,
            format!("{} rows vs {} segment ids", rows, ids.len()),
        ));
    }
    if let Some(&bad) = ids.iter().find(|&&i| i >= num_segments) {
        return Err(Error::SegmentOutOfRange {
            id: bad,
            num_segments,
        });
    }
    Ok((rows, cols))
}

pub(crate) fn matmul_f64(a: &[f64], b: &[f64], m: usize, p: usize, q: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * q];
    for i in 0..m {
        let arow = &a[i * p..(i + 1) * p];
        let orow = &mut out[i * q..(i + 1) * q];
        for (k, &av) in arow.iter().enumerate() {
            if av != 0.0 {
                let brow = &b[k * q..(k + 1) * q];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
    }
    out
}

fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

// ---------------------------------------------------------------------------
// gradient checking

/// Compare the analytic gradient of `f` at `x` against central finite
/// differences, returning the max over coordinates of
/// `|analytic - fd| / (|fd| + 1e-8)`.
///
/// Coordinates listed in `excluded` are skipped; use this for inputs sitting
/// on a relu kink, where the two-sided difference straddles the
/// nondifferentiable point and neither side matches the subgradient
/// convention.
///
/// Differences below 1e-10 count as agreement outright: central
/// differences carry roundoff of about `eps * |f| / (2 * step)`, so smaller
/// discrepancies are unresolvable and the relative formula would only
/// amplify noise. This matters for structurally tiny gradients (for
/// example key weights on channels constant within a softmax segment,
/// which shift logits uniformly and cancel); a genuinely wrong gradient
/// differs by far more than the floor.
pub fn gradcheck_excluding<F>(f: F, x: &[f64], step: f64, excluded: &[usize]) -> Result<f64>
where
    F: Fn(&Tape, &DiffArray) -> Result<DiffArray>,
{
    let tape = Tape::new();
    let leaf = tape.leaf(vec![x.len()], x.to_vec())?;
    let out = f(&tape, &leaf)?;
    if !out.is_scalar() {
        return Err(Error::NonScalarOutput {
            shape: out.shape().to_vec(),
        });
    }
    if !out.data()[0].is_finite() {
        return Err(Error::NonFinite {
            context: "gradcheck forward value".into(),
        });
    }
    let analytic = tape.backward(&out)?.for_leaf(&leaf);

    let eval = |xs: &[f64]| -> Result<f64> {
        let t = Tape::new();
        let arr = DiffArray::from_vec(vec![xs.len()], xs.to_vec());
        let v = f(&t, &arr)?;
        Ok(v.data()[0])
    };

    let mut max_rel: f64 = 0.0;
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        if excluded.contains(&i) {
            continue;
        }
        probe[i] = x[i] + step;
        let up = eval(&probe)?;
        probe[i] = x[i] - step;
        let down = eval(&probe)?;
        probe[i] = x[i];
        let fd = (up - down) / (2.0 * step);
        if !fd.is_finite() || !analytic[i].is_finite() {
            return Err(Error::NonFinite {
                context: format!("gradcheck coordinate {i}"),
            });
        }
        if (analytic[i] - fd).abs() < 1e-10 {
            continue; // below finite-difference resolution; see above
        }
        let rel = (analytic[i] - fd).abs() / (fd.abs() + 1e-8);
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}

/// [`gradcheck_excluding`] with no excluded coordinates.
pub fn gradcheck<F>(f: F, x: &[f64], step: f64) -> Result<f64>
where
    F: Fn(&Tape, &DiffArray) -> Result<DiffArray>,
{
    gradcheck_excluding(f, x, step, &[])
}

pub fn segment_ids(ids: Vec<usize>) -> Rc<Vec<usize>> {
    Rc::new(ids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn arr2(rows: usize, cols: usize, data: Vec<f64>) -> DiffArray {
        DiffArray::from_vec(vec![rows, cols], data)
    }

    #[test]
    fn segment_sum_definition() {
        let t = Tape::new();
        let v = arr2(3, 1, vec![1.0, 2.0, 3.0]);
        let ids = segment_ids(vec![0, 0, 1]);
        let s = t.segment_sum(&v, &ids, 2).unwrap();
        assert_eq!(s.data(), &[3.0, 3.0]);
    }

    #[test]
    fn segment_id_out_of_range() {
        let t = Tape::new();
        let v = arr2(2, 1, vec![1.0, 2.0]);
        let ids = segment_ids(vec![0, 2]);
        assert!(matches!(
            t.segment_sum(&v, &ids, 2),
            Err(Error::SegmentOutOfRange { id: 2, .. })
        ));
    }

    #[test]
    fn matmul_identity() {
        let t = Tape::new();
        let eye = arr2(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        let a = arr2(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let out = t.matmul(&eye, &a).unwrap();
        assert_eq!(out.data(), a.data());
    }

    #[test]
    fn matmul_shape_mismatch() {
        let t = Tape::new();
        let a = arr2(2, 3, vec![0.0; 6]);
        let b = arr2(2, 2, vec![0.0; 4]);
        assert!(matches!(
            t.matmul(&a, &b),
            Err(Error::ShapeMismatch { op: "matmul", .. })
        ));
    }

    #[test]
    fn softmax_symmetry() {
        let t = Tape::new();
        let v = arr2(2, 1, vec![0.0, 0.0]);
        let ids = segment_ids(vec![0, 0]);
        let s = t.softmax_over_segments(&v, &ids, 1).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_masked_segments_are_independent() {
        let t = Tape::new();
        let v = arr2(4, 1, vec![1.0, 1.0, 5.0, 1000.0]);
        let ids = segment_ids(vec![0, 0, 1, 1]);
        let s = t.softmax_over_segments(&v, &ids, 2).unwrap();
        assert!((s.data()[0] - 0.5).abs() < 1e-12);
        assert!((s.data()[2] + s.data()[3] - 1.0).abs() < 1e-12);
        assert!(s.data()[3] > 0.999);
    }

    #[test]
    fn backward_of_square() {
        // d/dx (x*x) at x=3 is 6
        let t = Tape::new();
        let x = t.leaf(vec![1], vec![3.0]).unwrap();
        let y = t.mul(&x, &x).unwrap();
        let grads = t.backward(&y).unwrap();
        assert_eq!(grads.for_leaf(&x), vec![6.0]);
    }

    #[test]
    fn segment_sum_backward_is_exact_gather() {
        let t = Tape::new();
        let x = t.leaf(vec![3], vec![0.1, 0.2, 0.3]).unwrap();
        let x2 = t.reshape(&x, vec![3, 1]).unwrap();
        let ids = segment_ids(vec![1, 0, 1]);
        let s = t.segment_sum(&x2, &ids, 2).unwrap();
        let w = arr2(2, 1, vec![2.0, -3.0]);
        let prod = t.mul(&s, &w).unwrap();
        let out = t.sum_all(&prod).unwrap();
        let grads = t.backward(&out).unwrap();
        // each contributing row receives the upstream grad bit-for-bit
        assert_eq!(grads.for_leaf(&x), vec![-3.0, 2.0, -3.0]);
    }

    #[test]
    fn tape_consumed_twice_errors() {
        let t = Tape::new();
        let x = t.leaf(vec![1], vec![2.0]).unwrap();
        let y = t.mul(&x, &x).unwrap();
        t.backward(&y).unwrap();
        assert!(matches!(t.backward(&y), Err(Error::TapeConsumed)));
        assert!(matches!(t.mul(&x, &x), Err(Error::TapeConsumed)));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let t = Tape::new();
        let x = t.leaf(vec![2], vec![1.0, 2.0]).unwrap();
        let y = t.relu(&x).unwrap();
        assert!(matches!(
            t.backward(&y),
            Err(Error::NonScalarOutput { .. })
        ));
    }

    #[test]
    fn gradcheck_linear_is_exact() {
        let err = gradcheck(|t, x| t.sum_all(x), &[0.3, -1.2, 4.0], 1e-5).unwrap();
        assert!(err <= 1e-10, "linear gradcheck error {err}");
    }

    #[test]
    fn gradcheck_sum_of_squares() {
        // analytic [2, 4] against finite differences
        let err = gradcheck(
            |t, x| {
                let sq = t.mul(x, x)?;
                t.sum_all(&sq)
            },
            &[1.0, 2.0],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "sum-of-squares gradcheck error {err}");
    }

    #[test]
    fn gradcheck_relu_kink_excluded() {
        let f = |t: &Tape, x: &DiffArray| {
            let r = t.relu(x)?;
            t.sum_all(&r)
        };
        // coordinate 0 sits exactly on the kink: two-sided difference gives
        // 0.5 while the subgradient convention gives 0
        let with_kink = gradcheck(f, &[0.0, 1.0], 1e-5).unwrap();
        assert!(with_kink > 0.1);
        let without = gradcheck_excluding(f, &[0.0, 1.0], 1e-5, &[0]).unwrap();
        assert!(without < 1e-6);
    }

    #[test]
    fn gradcheck_two_layer_mlp() {
        // random 2-layer MLP over all weights: the standing 1e-4 bar
        let mut rng = Rng::new(99);
        let (din, dh) = (3, 4);
        let n_params = din * dh + dh + dh * 1 + 1;
        let params: Vec<f64> = (0..n_params).map(|_| rng.next_symmetric(0.8)).collect();
        let input = DiffArray::from_vec(vec![2, din], (0..2 * din).map(|i| 0.3 * i as f64 - 0.7).collect());
        let f = move |t: &Tape, p: &DiffArray| {
            let w1 = t.reshape(&t.slice_channels(&t.reshape(p, vec![1, p.numel()])?, 0, din * dh)?, vec![din, dh])?;
            let b1 = t.reshape(&t.slice_channels(&t.reshape(p, vec![1, p.numel()])?, din * dh, dh)?, vec![dh])?;
            let w2 = t.reshape(
                &t.slice_channels(&t.reshape(p, vec![1, p.numel()])?, din * dh + dh, dh)?,
                vec![dh, 1],
            )?;
            let b2 = t.reshape(
                &t.slice_channels(&t.reshape(p, vec![1, p.numel()])?, din * dh + dh + dh, 1)?,
                vec![1],
            )?;
            let h = t.relu(&t.add(&t.matmul(&input, &w1)?, &b1)?)?;
            let o = t.add(&t.matmul(&h, &w2)?, &b2)?;
            t.sum_all(&o)
        };
        let err = gradcheck(f, &params, 1e-5).unwrap();
        assert!(err < 1e-4, "mlp gradcheck error {err}");
    }

    #[test]
    fn all_primitives_match_finite_differences() {
        // 20 random inputs per primitive, away from nondifferentiable points
        let mut rng = Rng::new(1234);
        for trial in 0..20 {
            let xs: Vec<f64> = (0..6)
                .map(|_| {
                    let mut v = rng.next_symmetric(1.5);
                    if v.abs() < 0.05 {
                        v += 0.2; // keep clear of the relu kink
                    }
                    v
                })
                .collect();
            let ids = segment_ids(vec![0, 1, 0]);
            let checks: Vec<(&str, Box<dyn Fn(&Tape, &DiffArray) -> Result<DiffArray>>)> = vec![
                ("add", Box::new(|t, x| {
                    let c = DiffArray::from_vec(vec![6], vec![0.3; 6]);
                    t.sum_all(&t.add(x, &c)?)
                })),
                ("add_bias", Box::new(|t, x| {
                    let m = t.reshape(x, vec![3, 2])?;
                    let b = DiffArray::from_vec(vec![2], vec![0.5, -0.25]);
                    t.sum_all(&t.mul(&t.add(&m, &b)?, &t.add(&m, &b)?)?)
                })),
                ("mul", Box::new(|t, x| {
                    let c = DiffArray::from_vec(vec![6], vec![1.5, -0.5, 2.0, 0.7, -1.1, 0.4]);
                    t.sum_all(&t.mul(x, &c)?)
                })),
                ("mul_colbroadcast", Box::new(|t, x| {
                    let m = t.reshape(x, vec![2, 3])?;
                    let s = DiffArray::from_vec(vec![2, 1], vec![2.0, -0.5]);
                    t.sum_all(&t.mul(&m, &s)?)
                })),
                ("matmul", Box::new(|t, x| {
                    let m = t.reshape(x, vec![2, 3])?;
                    let w = DiffArray::from_vec(vec![3, 2], vec![0.2, -0.4, 1.0, 0.3, -0.6, 0.9]);
                    let y = t.matmul(&m, &w)?;
                    t.sum_all(&t.mul(&y, &y)?)
                })),
                ("rowwise_matmul", Box::new(|t, x| {
                    let m = t.reshape(x, vec![3, 2])?;
                    let w = DiffArray::from_vec(
                        vec![3, 4],
                        vec![0.2, -0.4, 1.0, 0.3, -0.6, 0.9, 0.1, 0.8, -0.2, 0.5, 0.7, -0.9],
                    );
                    let y = t.rowwise_matmul(&m, &w)?;
                    t.sum_all(&t.mul(&y, &y)?)
                })),
                ("concat_slice", Box::new(|t, x| {
                    let m = t.reshape(x, vec![3, 2])?;
                    let cat = t.concat_channels(&[&m, &m])?;
                    let s = t.slice_channels(&cat, 1, 2)?;
                    t.sum_all(&t.mul(&s, &s)?)
                })),
                ("relu", Box::new(|t, x| {
                    let r = t.relu(x)?;
                    t.sum_all(&t.mul(&r, &r)?)
                })),
                ("softplus", Box::new(|t, x| {
                    let r = t.softplus(x)?;
                    t.sum_all(&r)
                })),
                ("log", Box::new(|t, x| {
                    let sq = t.add(&t.mul(x, x)?, &DiffArray::from_vec(vec![6], vec![1.0; 6]))?;
                    t.sum_all(&t.log(&sq)?)
                })),
                ("softmax_over_segments", Box::new({
                    let ids = Rc::clone(&ids);
                    move |t, x| {
                        let m = t.reshape(x, vec![3, 2])?;
                        let s = t.softmax_over_segments(&m, &ids, 2)?;
                        let w = DiffArray::from_vec(vec![3, 2], vec![1.0, 2.0, -1.0, 0.5, 0.25, -2.0]);
                        t.sum_all(&t.mul(&s, &w)?)
                    }
                })),
                ("segment_sum", Box::new({
                    let ids = Rc::clone(&ids);
                    move |t, x| {
                        let m = t.reshape(x, vec![3, 2])?;
                        let s = t.segment_sum(&m, &ids, 2)?;
                        t.sum_all(&t.mul(&s, &s)?)
                    }
                })),
                ("gather_rows", Box::new({
                    let ids = Rc::clone(&ids);
                    move |t, x| {
                        let m = t.reshape(x, vec![3, 2])?;
                        let gsrc = t.gather_rows(&m, &ids)?;
                        t.sum_all(&t.mul(&gsrc, &gsrc)?)
                    }
                })),
                ("scale", Box::new(|t, x| t.sum_all(&t.scale(x, -2.5)?))),
                ("layer_norm_rows", Box::new(|t, x| {
                    let m = t.reshape(x, vec![2, 3])?;
                    let y = t.layer_norm_rows(&m)?;
                    let w = DiffArray::from_vec(vec![2, 3], vec![1.0, -2.0, 0.5, 0.7, 1.3, -0.4]);
                    t.sum_all(&t.mul(&y, &w)?)
                })),
            ];
            for (name, f) in checks {
                let err = gradcheck(f.as_ref(), &xs, 1e-5).unwrap();
                assert!(err < 1e-4, "{name} gradcheck error {err} on trial {trial}");
            }
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let run = || {
            let t = Tape::new();
            let a = arr2(3, 3, (0..9).map(|i| (i as f64).sin()).collect());
            let b = arr2(3, 3, (0..9).map(|i| (i as f64 * 0.7).cos()).collect());
            let c = t.matmul(&a, &b).unwrap();
            let r = t.relu(&c).unwrap();
            r.data().to_vec()
        };
        let x = run();
        let y = run();
        assert_eq!(x, y, "bitwise identical forward results");
    }

    #[test]
    fn memory_accounting_tracks_live_buffers() {
        let before = live_bytes();
        let a = DiffArray::zeros(vec![64, 64]);
        assert_eq!(live_bytes(), before + 64 * 64 * 8);
        drop(a);
        assert_eq!(live_bytes(), before);
    }
}
