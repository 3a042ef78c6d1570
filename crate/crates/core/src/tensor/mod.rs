//! Dense tensors with reverse-mode automatic differentiation.
//!
//! Every operation that sees an input with `requires_grad` records a node in
//! an implicit compute graph (handles own their parents via `Rc`, so the
//! graph is the ownership DAG itself). `Tensor::backward` walks that DAG in
//! reverse topological order and accumulates gradients into every reachable
//! tensor that requires them. Graphs are confined to one thread; `Tensor` is
//! deliberately `!Send`.

pub mod kernels;

use std::cell::{Ref, RefCell};
use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;

use crate::scalar::Scalar;
use kernels::{
    conv2d_backward_input, conv2d_backward_kernel, conv2d_forward, conv_out_dim, matmul_nn,
    matmul_nt, matmul_tn, stable_sigmoid,
};

/// Errors from tensor construction, shape-sensitive operations and backward.
#[derive(Clone, Debug, PartialEq)]
pub enum TensorError {
    /// data length does not match the product of the extents
    ShapeDataMismatch { shape: Vec<usize>, data_len: usize },
    /// an extent of zero is never valid
    ZeroExtent { shape: Vec<usize> },
    /// two operands cannot be combined
    ShapeMismatch { op: &'static str, left: Vec<usize>, right: Vec<usize> },
    /// operand has the wrong rank or extents for this operation
    BadOperand { op: &'static str, shape: Vec<usize>, expected: String },
    /// kernel does not fit into the padded input
    KernelTooLarge { input: Vec<usize>, kernel: Vec<usize>, padding: usize },
    /// backward called on a tensor that is not part of a recorded graph
    NoGraph,
    /// backward called on a non-scalar tensor
    NotScalar { shape: Vec<usize> },
    /// a loss or activation stopped being finite
    NonFinite { op: &'static str },
    /// targets for a classification loss are invalid
    BadTargets { reason: String },
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorError::ShapeDataMismatch { shape, data_len } => {
                write!(f, "shape {shape:?} needs {} values, got {data_len}", shape.iter().product::<usize>())
            }
            TensorError::ZeroExtent { shape } => write!(f, "shape {shape:?} has a zero extent"),
            TensorError::ShapeMismatch { op, left, right } => {
                write!(f, "{op}: incompatible shapes {left:?} and {right:?}")
            }
            TensorError::BadOperand { op, shape, expected } => {
                write!(f, "{op}: operand shape {shape:?}, expected {expected}")
            }
            TensorError::KernelTooLarge { input, kernel, padding } => {
                write!(f, "kernel {kernel:?} larger than input {input:?} padded by {padding}")
            }
            TensorError::NoGraph => write!(f, "backward on a tensor with no recorded graph"),
            TensorError::NotScalar { shape } => {
                write!(f, "backward needs a scalar loss, got shape {shape:?}")
            }
            TensorError::NonFinite { op } => write!(f, "{op} produced a non-finite value"),
            TensorError::BadTargets { reason } => write!(f, "bad targets: {reason}"),
        }
    }
}

impl std::error::Error for TensorError {}

pub type TensorResult<T> = Result<T, TensorError>;

thread_local! {
    static NO_GRAD_DEPTH: RefCell<u32> = const { RefCell::new(0) };
}

fn recording_enabled() -> bool {
    NO_GRAD_DEPTH.with(|d| *d.borrow() == 0)
}

/// Runs `f` with graph recording suppressed (inference mode).
pub fn with_no_grad<R>(f: impl FnOnce() -> R) -> R {
    NO_GRAD_DEPTH.with(|d| *d.borrow_mut() += 1);
    let out = f();
    NO_GRAD_DEPTH.with(|d| *d.borrow_mut() -= 1);
    out
}

enum Op<T: Scalar> {
    Leaf,
    Matmul,
    Conv2d { stride: usize, padding: usize },
    /// x[B,C,H,W] + bias[C], broadcast over batch and space
    ChannelBias,
    /// x[B,C] + bias[C], broadcast over rows
    RowBias,
    /// 2x2 window, stride 2; switches hold the winning flat input index
    MaxPool2 { switches: Vec<usize> },
    GlobalAvgPool,
    Reshape,
    Relu,
    Sigmoid,
    Softmax,
    Add,
    Sub,
    Mul,
    Scale(T),
    Sum,
    /// fused sigmoid + binary cross-entropy, normalized by batch rows only
    BceWithLogits { targets: Vec<T>, batch: usize },
    /// fused log-softmax + negative log likelihood, mean over batch rows
    CrossEntropy { targets: Vec<usize> },
}

struct Node<T: Scalar> {
    shape: Vec<usize>,
    data: Vec<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
    parents: Vec<Tensor<T>>,
    op: Op<T>,
}

/// Handle to a node in the compute graph. Clones share storage.
pub struct Tensor<T: Scalar> {
    node: Rc<RefCell<Node<T>>>,
}

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor { node: Rc::clone(&self.node) }
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = self.node.borrow();
        write!(f, "Tensor(shape={:?}, requires_grad={})", n.shape, n.requires_grad)
    }
}

fn check_shape<T: Scalar>(shape: &[usize], data_len: usize) -> TensorResult<()> {
    if shape.iter().any(|&e| e == 0) {
        return Err(TensorError::ZeroExtent { shape: shape.to_vec() });
    }
    let numel: usize = shape.iter().product();
    if numel != data_len {
        return Err(TensorError::ShapeDataMismatch { shape: shape.to_vec(), data_len });
    }
    let _ = std::marker::PhantomData::<T>;
    Ok(())
}

impl<T: Scalar> Tensor<T> {
    fn from_node(node: Node<T>) -> Self {
        Tensor { node: Rc::new(RefCell::new(node)) }
    }

    /// Leaf tensor that does not track gradients.
    pub fn from_vec(data: Vec<T>, shape: &[usize]) -> TensorResult<Self> {
        check_shape::<T>(shape, data.len())?;
        Ok(Self::from_node(Node {
            shape: shape.to_vec(),
            data,
            grad: None,
            requires_grad: false,
            parents: Vec::new(),
            op: Op::Leaf,
        }))
    }

    /// Leaf tensor that accumulates gradients (a trainable parameter).
    pub fn param(data: Vec<T>, shape: &[usize]) -> TensorResult<Self> {
        let t = Self::from_vec(data, shape)?;
        t.node.borrow_mut().requires_grad = true;
        Ok(t)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self::from_vec(vec![T::zero(); numel], shape).expect("zeros: valid shape")
    }

    pub fn scalar(v: T) -> Self {
        Self::from_node(Node {
            shape: Vec::new(),
            data: vec![v],
            grad: None,
            requires_grad: false,
            parents: Vec::new(),
            op: Op::Leaf,
        })
    }

    pub fn shape(&self) -> Vec<usize> {
        self.node.borrow().shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.node.borrow().data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.borrow().requires_grad
    }

    /// Borrowed view of the values.
    pub fn data(&self) -> Ref<'_, [T]> {
        Ref::map(self.node.borrow(), |n| n.data.as_slice())
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.node.borrow().data.clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        let n = self.node.borrow();
        assert_eq!(n.data.len(), 1, "item() on tensor with {} elements", n.data.len());
        n.data[0]
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.node.borrow().grad.clone()
    }

    pub fn clear_grad(&self) {
        self.node.borrow_mut().grad = None;
    }

    /// Overwrites the values in place; shape is unchanged.
    pub fn copy_from_slice(&self, src: &[T]) {
        let mut n = self.node.borrow_mut();
        assert_eq!(n.data.len(), src.len(), "copy_from_slice length mismatch");
        n.data.copy_from_slice(src);
    }

    pub fn fill(&self, v: T) {
        for x in self.node.borrow_mut().data.iter_mut() {
            *x = v;
        }
    }

    /// Applies `f` to every stored value in place.
    pub fn map_inplace(&self, f: impl Fn(T) -> T) {
        for x in self.node.borrow_mut().data.iter_mut() {
            *x = f(*x);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.node.borrow().data.iter().all(|v| v.is_finite())
    }

    fn record(data: Vec<T>, shape: Vec<usize>, parents: Vec<Tensor<T>>, op: Op<T>) -> Self {
        let track = recording_enabled() && parents.iter().any(|p| p.requires_grad());
        if track {
            Self::from_node(Node { shape, data, grad: None, requires_grad: true, parents, op })
        } else {
            Self::from_node(Node {
                shape,
                data,
                grad: None,
                requires_grad: false,
                parents: Vec::new(),
                op: Op::Leaf,
            })
        }
    }

    // ---- operations ----

    pub fn matmul(&self, rhs: &Tensor<T>) -> TensorResult<Tensor<T>> {
        let (ls, rs) = (self.shape(), rhs.shape());
        if ls.len() != 2 || rs.len() != 2 || ls[1] != rs[0] {
            return Err(TensorError::ShapeMismatch { op: "matmul", left: ls, right: rs });
        }
        let (m, k, n) = (ls[0], ls[1], rs[1]);
        let data = matmul_nn(&self.data(), &rhs.data(), m, k, n);
        Ok(Self::record(data, vec![m, n], vec![self.clone(), rhs.clone()], Op::Matmul))
    }

    pub fn conv2d(&self, kernel: &Tensor<T>, stride: usize, padding: usize) -> TensorResult<Tensor<T>> {
        let (is, ks) = (self.shape(), kernel.shape());
        if is.len() != 4 || ks.len() != 4 {
            return Err(TensorError::BadOperand {
                op: "conv2d",
                shape: if is.len() != 4 { is } else { ks },
                expected: "rank-4 [B,C,H,W] input and [Co,Ci,kH,kW] kernel".into(),
            });
        }
        if is[1] != ks[1] {
            return Err(TensorError::ShapeMismatch { op: "conv2d", left: is, right: ks });
        }
        if stride == 0 {
            return Err(TensorError::BadOperand {
                op: "conv2d",
                shape: is,
                expected: "stride >= 1".into(),
            });
        }
        let (b, ci, h, w) = (is[0], is[1], is[2], is[3]);
        let (co, kh, kw) = (ks[0], ks[2], ks[3]);
        if h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(TensorError::KernelTooLarge { input: is, kernel: ks, padding });
        }
        let oh = conv_out_dim(h, kh, stride, padding);
        let ow = conv_out_dim(w, kw, stride, padding);
        let data =
            conv2d_forward(&self.data(), &kernel.data(), b, ci, h, w, co, kh, kw, stride, padding);
        Ok(Self::record(
            data,
            vec![b, co, oh, ow],
            vec![self.clone(), kernel.clone()],
            Op::Conv2d { stride, padding },
        ))
    }

    pub fn add(&self, rhs: &Tensor<T>) -> TensorResult<Tensor<T>> {
        let (ls, rs) = (self.shape(), rhs.shape());
        if ls != rs {
            return Err(TensorError::ShapeMismatch { op: "add", left: ls, right: rs });
        }
        let data = self.data().iter().zip(rhs.data().iter()).map(|(&a, &b)| a + b).collect();
        Ok(Self::record(data, ls, vec![self.clone(), rhs.clone()], Op::Add))
    }

    pub fn sub(&self, rhs: &Tensor<T>) -> TensorResult<Tensor<T>> {
        let (ls, rs) = (self.shape(), rhs.shape());
        if ls != rs {
            return Err(TensorError::ShapeMismatch { op: "sub", left: ls, right: rs });
        }
        let data = self.data().iter().zip(rhs.data().iter()).map(|(&a, &b)| a - b).collect();
        Ok(Self::record(data, ls, vec![self.clone(), rhs.clone()], Op::Sub))
    }

    pub fn mul(&self, rhs: &Tensor<T>) -> TensorResult<Tensor<T>> {
        let (ls, rs) = (self.shape(), rhs.shape());
        if ls != rs {
            return Err(TensorError::ShapeMismatch { op: "mul", left: ls, right: rs });
        }
        let data = self.data().iter().zip(rhs.data().iter()).map(|(&a, &b)| a * b).collect();
        Ok(Self::record(data, ls, vec![self.clone(), rhs.clone()], Op::Mul))
    }

    pub fn scale(&self, c: T) -> Tensor<T> {
        let data = self.data().iter().map(|&a| a * c).collect();
        Self::record(data, self.shape(), vec![self.clone()], Op::Scale(c))
    }

    /// Broadcast add of a `[C]` bias onto `[B,C]` rows.
    pub fn add_row_bias(&self, bias: &Tensor<T>) -> TensorResult<Tensor<T>> {
        let (xs, bs) = (self.shape(), bias.shape());
        if xs.len() != 2 || bs.len() != 1 || bs[0] != xs[1] {
            return Err(TensorError::ShapeMismatch { op: "add_row_bias", left: xs, right: bs });
        }
        let (b, c) = (xs[0], xs[1]);
        let bias_data = bias.data().to_vec();
        let mut data = self.to_vec();
        for row in 0..b {
            for (v, &bv) in data[row * c..(row + 1) * c].iter_mut().zip(&bias_data) {
                *v += bv;
            }
        }
        Ok(Self::record(data, xs, vec![self.clone(), bias.clone()], Op::RowBias))
    }

    /// Broadcast add of a `[C]` bias onto `[B,C,H,W]` channels.
    pub fn add_channel_bias(&self, bias: &Tensor<T>) -> TensorResult<Tensor<T>> {
        let (xs, bs) = (self.shape(), bias.shape());
        if xs.len() != 4 || bs.len() != 1 || bs[0] != xs[1] {
            return Err(TensorError::ShapeMismatch { op: "add_channel_bias", left: xs, right: bs });
        }
        let (b, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let bias_data = bias.data().to_vec();
        let mut data = self.to_vec();
        for bi in 0..b {
            for ci in 0..c {
                let bv = bias_data[ci];
                for v in data[(bi * c + ci) * h * w..(bi * c + ci + 1) * h * w].iter_mut() {
                    *v += bv;
                }
            }
        }
        Ok(Self::record(data, xs, vec![self.clone(), bias.clone()], Op::ChannelBias))
    }

    pub fn relu(&self) -> Tensor<T> {
        let data = self.data().iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect();
        Self::record(data, self.shape(), vec![self.clone()], Op::Relu)
    }

    /// Elementwise logistic function, stable for any finite input.
    pub fn sigmoid(&self) -> Tensor<T> {
        let data = self.data().iter().map(|&v| stable_sigmoid(v)).collect();
        Self::record(data, self.shape(), vec![self.clone()], Op::Sigmoid)
    }

    /// Row-wise softmax over a `[B,C]` tensor, max-subtracted for stability.
    pub fn softmax(&self) -> TensorResult<Tensor<T>> {
        let s = self.shape();
        if s.len() != 2 {
            return Err(TensorError::BadOperand {
                op: "softmax",
                shape: s,
                expected: "rank-2 [B,C]".into(),
            });
        }
        let (b, c) = (s[0], s[1]);
        let mut data = self.to_vec();
        for row in 0..b {
            let r = &mut data[row * c..(row + 1) * c];
            let m = r.iter().cloned().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for v in r.iter_mut() {
                *v = (*v - m).exp();
                sum += *v;
            }
            for v in r.iter_mut() {
                *v = *v / sum;
            }
        }
        Ok(Self::record(data, s, vec![self.clone()], Op::Softmax))
    }

    /// 2x2 max pooling with stride 2; trailing odd rows/columns are dropped.
    pub fn maxpool2(&self) -> TensorResult<Tensor<T>> {
        let s = self.shape();
        if s.len() != 4 || s[2] < 2 || s[3] < 2 {
            return Err(TensorError::BadOperand {
                op: "maxpool2",
                shape: s,
                expected: "rank-4 with H,W >= 2".into(),
            });
        }
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        let (oh, ow) = (h / 2, w / 2);
        let input = self.data();
        let mut data = vec![T::zero(); b * c * oh * ow];
        let mut switches = vec![0usize; b * c * oh * ow];
        for plane in 0..b * c {
            let in_plane = &input[plane * h * w..(plane + 1) * h * w];
            for oi in 0..oh {
                for oj in 0..ow {
                    let mut best_idx = (2 * oi) * w + 2 * oj;
                    let mut best = in_plane[best_idx];
                    for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = (2 * oi + di) * w + 2 * oj + dj;
                        if in_plane[idx] > best {
                            best = in_plane[idx];
                            best_idx = idx;
                        }
                    }
                    data[(plane * oh + oi) * ow + oj] = best;
                    switches[(plane * oh + oi) * ow + oj] = plane * h * w + best_idx;
                }
            }
        }
        drop(input);
        Ok(Self::record(data, vec![b, c, oh, ow], vec![self.clone()], Op::MaxPool2 { switches }))
    }

    /// Mean over the spatial dims: `[B,C,H,W] -> [B,C]`.
    pub fn global_avg_pool(&self) -> TensorResult<Tensor<T>> {
        let s = self.shape();
        if s.len() != 4 {
            return Err(TensorError::BadOperand {
                op: "global_avg_pool",
                shape: s,
                expected: "rank-4 [B,C,H,W]".into(),
            });
        }
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        let hw = T::from_f64((h * w) as f64);
        let input = self.data();
        let mut data = vec![T::zero(); b * c];
        for plane in 0..b * c {
            let mut acc = T::zero();
            for &v in &input[plane * h * w..(plane + 1) * h * w] {
                acc += v;
            }
            data[plane] = acc / hw;
        }
        drop(input);
        Ok(Self::record(data, vec![b, c], vec![self.clone()], Op::GlobalAvgPool))
    }

    pub fn reshape(&self, shape: &[usize]) -> TensorResult<Tensor<T>> {
        check_shape::<T>(shape, self.numel())?;
        Ok(Self::record(self.to_vec(), shape.to_vec(), vec![self.clone()], Op::Reshape))
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&self) -> Tensor<T> {
        let mut acc = T::zero();
        for &v in self.data().iter() {
            acc += v;
        }
        Self::record(vec![acc], Vec::new(), vec![self.clone()], Op::Sum)
    }

    /// Fused sigmoid + binary cross-entropy against 0/1 targets, summed over
    /// classes and divided by the number of rows only.
    pub fn bce_with_logits(&self, targets: &[T]) -> TensorResult<Tensor<T>> {
        let s = self.shape();
        if s.len() != 2 {
            return Err(TensorError::BadOperand {
                op: "bce_with_logits",
                shape: s,
                expected: "rank-2 [B,C]".into(),
            });
        }
        if targets.len() != self.numel() {
            return Err(TensorError::BadTargets {
                reason: format!("expected {} target entries, got {}", self.numel(), targets.len()),
            });
        }
        if targets.iter().any(|&t| t != T::zero() && t != T::one()) {
            return Err(TensorError::BadTargets { reason: "entries must be exactly 0 or 1".into() });
        }
        let batch = s[0];
        let inv_b = T::one() / T::from_f64(batch as f64);
        let mut acc = T::zero();
        for (&z, &t) in self.data().iter().zip(targets) {
            // max(z,0) - z*t + ln(1 + exp(-|z|))
            acc += z.max(T::zero()) - z * t + (-z.abs()).exp().ln_1p();
        }
        let loss = acc * inv_b;
        if !loss.is_finite() {
            return Err(TensorError::NonFinite { op: "bce_with_logits" });
        }
        Ok(Self::record(
            vec![loss],
            Vec::new(),
            vec![self.clone()],
            Op::BceWithLogits { targets: targets.to_vec(), batch },
        ))
    }

    /// Fused log-softmax + NLL against class indices, mean over rows.
    pub fn cross_entropy(&self, targets: &[usize]) -> TensorResult<Tensor<T>> {
        let s = self.shape();
        if s.len() != 2 {
            return Err(TensorError::BadOperand {
                op: "cross_entropy",
                shape: s,
                expected: "rank-2 [B,C]".into(),
            });
        }
        let (b, c) = (s[0], s[1]);
        if targets.len() != b {
            return Err(TensorError::BadTargets {
                reason: format!("expected {b} target indices, got {}", targets.len()),
            });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(TensorError::BadTargets { reason: format!("class index {bad} out of range 0..{c}") });
        }
        let data = self.data();
        let mut acc = T::zero();
        for (row, &t) in targets.iter().enumerate() {
            let r = &data[row * c..(row + 1) * c];
            let m = r.iter().cloned().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for &v in r {
                sum += (v - m).exp();
            }
            acc += m + sum.ln() - r[t];
        }
        drop(data);
        let loss = acc / T::from_f64(b as f64);
        if !loss.is_finite() {
            return Err(TensorError::NonFinite { op: "cross_entropy" });
        }
        Ok(Self::record(
            vec![loss],
            Vec::new(),
            vec![self.clone()],
            Op::CrossEntropy { targets: targets.to_vec() },
        ))
    }

    // ---- backward ----

    /// Populates `grad` on every tensor this scalar depends on (accumulating
    /// into any existing gradients).
    pub fn backward(&self) -> TensorResult<()> {
        {
            let n = self.node.borrow();
            if matches!(n.op, Op::Leaf) && n.parents.is_empty() {
                return Err(TensorError::NoGraph);
            }
            if n.data.len() != 1 {
                return Err(TensorError::NotScalar { shape: n.shape.clone() });
            }
        }

        // Reverse DFS postorder = topological order from the loss down.
        let topo = self.topo_order();
        {
            let mut n = self.node.borrow_mut();
            let seed = vec![T::one()];
            match &mut n.grad {
                Some(g) => g[0] += T::one(),
                None => n.grad = Some(seed),
            }
        }
        for t in topo.iter().rev() {
            t.push_grads_to_parents();
        }
        Ok(())
    }

    fn topo_order(&self) -> Vec<Tensor<T>> {
        let mut order: Vec<Tensor<T>> = Vec::new();
        let mut visited: HashSet<usize> = HashSet::new();
        // Iterative postorder: (tensor, children_expanded)
        let mut stack: Vec<(Tensor<T>, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            let key = Rc::as_ptr(&t.node) as usize;
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(key) {
                continue;
            }
            stack.push((t.clone(), true));
            let n = t.node.borrow();
            for p in n.parents.iter() {
                if p.requires_grad() {
                    stack.push((p.clone(), false));
                }
            }
        }
        order
    }

    /// Computes this node's contribution to each parent's gradient and adds
    /// it in. Contributions are materialized first so duplicated parents
    /// (e.g. `x*x`) never alias a mutable borrow.
    fn push_grads_to_parents(&self) {
        let contributions: Vec<(Tensor<T>, Vec<T>)> = {
            let n = self.node.borrow();
            if n.parents.is_empty() {
                return;
            }
            let grad = match &n.grad {
                Some(g) => g,
                None => return,
            };
            let need: Vec<bool> = n.parents.iter().map(|p| p.requires_grad()).collect();
            let contribs = backward_op(&n, grad, &need);
            n.parents
                .iter()
                .zip(contribs)
                .filter_map(|(p, c)| c.map(|c| (p.clone(), c)))
                .collect()
        };
        for (parent, contrib) in contributions {
            let mut pn = parent.node.borrow_mut();
            match &mut pn.grad {
                Some(g) => {
                    for (gv, cv) in g.iter_mut().zip(&contrib) {
                        *gv += *cv;
                    }
                }
                None => pn.grad = Some(contrib),
            }
        }
    }
}

/// Per-op gradient contributions, one entry per parent (None where unneeded).
fn backward_op<T: Scalar>(node: &Node<T>, grad: &[T], need: &[bool]) -> Vec<Option<Vec<T>>> {
    let parents = &node.parents;
    match &node.op {
        Op::Leaf => Vec::new(),
        Op::Matmul => {
            let a = parents[0].data();
            let b = parents[1].data();
            let (m, k) = (parents[0].shape()[0], parents[0].shape()[1]);
            let n = parents[1].shape()[1];
            let da = need[0].then(|| matmul_nt(grad, &b, m, n, k));
            let db = need[1].then(|| matmul_tn(&a, grad, k, m, n));
            vec![da, db]
        }
        Op::Conv2d { stride, padding } => {
            let is = parents[0].shape();
            let ks = parents[1].shape();
            let (b, ci, h, w) = (is[0], is[1], is[2], is[3]);
            let (co, kh, kw) = (ks[0], ks[2], ks[3]);
            let d_in = need[0].then(|| {
                conv2d_backward_input(grad, &parents[1].data(), b, ci, h, w, co, kh, kw, *stride, *padding)
            });
            let d_k = need[1].then(|| {
                conv2d_backward_kernel(&parents[0].data(), grad, b, ci, h, w, co, kh, kw, *stride, *padding)
            });
            vec![d_in, d_k]
        }
        Op::RowBias => {
            let s = &node.shape;
            let (b, c) = (s[0], s[1]);
            let dx = need[0].then(|| grad.to_vec());
            let db = need[1].then(|| {
                let mut db = vec![T::zero(); c];
                for row in 0..b {
                    for (d, &g) in db.iter_mut().zip(&grad[row * c..(row + 1) * c]) {
                        *d += g;
                    }
                }
                db
            });
            vec![dx, db]
        }
        Op::ChannelBias => {
            let s = &node.shape;
            let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
            let dx = need[0].then(|| grad.to_vec());
            let db = need[1].then(|| {
                let mut db = vec![T::zero(); c];
                for bi in 0..b {
                    for (ci, d) in db.iter_mut().enumerate() {
                        for &g in &grad[(bi * c + ci) * h * w..(bi * c + ci + 1) * h * w] {
                            *d += g;
                        }
                    }
                }
                db
            });
            vec![dx, db]
        }
        Op::MaxPool2 { switches } => {
            let dx = need[0].then(|| {
                let mut dx = vec![T::zero(); parents[0].numel()];
                for (&sw, &g) in switches.iter().zip(grad) {
                    dx[sw] += g;
                }
                dx
            });
            vec![dx]
        }
        Op::GlobalAvgPool => {
            let is = parents[0].shape();
            let (h, w) = (is[2], is[3]);
            let inv = T::one() / T::from_f64((h * w) as f64);
            let dx = need[0].then(|| {
                let mut dx = vec![T::zero(); parents[0].numel()];
                for (plane, &g) in grad.iter().enumerate() {
                    let gv = g * inv;
                    for d in dx[plane * h * w..(plane + 1) * h * w].iter_mut() {
                        *d = gv;
                    }
                }
                dx
            });
            vec![dx]
        }
        Op::Reshape => vec![need[0].then(|| grad.to_vec())],
        Op::Relu => {
            let dx = need[0].then(|| {
                node.data
                    .iter()
                    .zip(grad)
                    .map(|(&y, &g)| if y > T::zero() { g } else { T::zero() })
                    .collect()
            });
            vec![dx]
        }
        Op::Sigmoid => {
            let dx = need[0]
                .then(|| node.data.iter().zip(grad).map(|(&y, &g)| g * y * (T::one() - y)).collect());
            vec![dx]
        }
        Op::Softmax => {
            let dx = need[0].then(|| {
                let s = &node.shape;
                let (b, c) = (s[0], s[1]);
                let mut dx = vec![T::zero(); b * c];
                for row in 0..b {
                    let y = &node.data[row * c..(row + 1) * c];
                    let g = &grad[row * c..(row + 1) * c];
                    let dot = y.iter().zip(g).fold(T::zero(), |acc, (&yv, &gv)| acc + yv * gv);
                    for ((d, &yv), &gv) in dx[row * c..(row + 1) * c].iter_mut().zip(y).zip(g) {
                        *d = yv * (gv - dot);
                    }
                }
                dx
            });
            vec![dx]
        }
        Op::Add => vec![need[0].then(|| grad.to_vec()), need[1].then(|| grad.to_vec())],
        Op::Sub => {
            vec![
                need[0].then(|| grad.to_vec()),
                need[1].then(|| grad.iter().map(|&g| -g).collect()),
            ]
        }
        Op::Mul => {
            let da = need[0]
                .then(|| parents[1].data().iter().zip(grad).map(|(&b, &g)| b * g).collect());
            let db = need[1]
                .then(|| parents[0].data().iter().zip(grad).map(|(&a, &g)| a * g).collect());
            vec![da, db]
        }
        Op::Scale(c) => vec![need[0].then(|| grad.iter().map(|&g| g * *c).collect())],
        Op::Sum => {
            let g = grad[0];
            vec![need[0].then(|| vec![g; parents[0].numel()])]
        }
        Op::BceWithLogits { targets, batch } => {
            let g = grad[0];
            let inv_b = T::one() / T::from_f64(*batch as f64);
            let dx = need[0].then(|| {
                parents[0]
                    .data()
                    .iter()
                    .zip(targets)
                    .map(|(&z, &t)| (stable_sigmoid(z) - t) * g * inv_b)
                    .collect()
            });
            vec![dx]
        }
        Op::CrossEntropy { targets } => {
            let g = grad[0];
            let s = parents[0].shape();
            let (b, c) = (s[0], s[1]);
            let inv_b = T::one() / T::from_f64(b as f64);
            let dx = need[0].then(|| {
                let data = parents[0].data();
                let mut dx = vec![T::zero(); b * c];
                for (row, &t) in targets.iter().enumerate() {
                    let r = &data[row * c..(row + 1) * c];
                    let m = r.iter().cloned().fold(T::neg_infinity(), T::max);
                    let mut sum = T::zero();
                    for &v in r {
                        sum += (v - m).exp();
                    }
                    for (j, (d, &v)) in dx[row * c..(row + 1) * c].iter_mut().zip(r).enumerate() {
                        let p = (v - m).exp() / sum;
                        let y = if j == t { T::one() } else { T::zero() };
                        *d = (p - y) * g * inv_b;
                    }
                }
                dx
            });
            vec![dx]
        }
    }
}
