//! A small reverse-mode automatic differentiation engine over `f64` NHWC
//! tensors.
//!
//! Every backward rule is written in terms of the same differentiable
//! operations as the forward pass, so gradients can themselves be
//! differentiated (needed for the gradient penalty of the critic). Node ids
//! increase monotonically, which makes "decreasing id" a valid reverse
//! topological order.

mod kernels;

use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::ops;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{ArrayD, Axis, Ix2, IxDyn};

pub use kernels::Geom;

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Disables graph recording on the current thread until dropped.
pub struct NoGradGuard {
    prev: bool,
}

pub fn no_grad() -> NoGradGuard {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    NoGradGuard { prev }
}

impl Drop for NoGradGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|g| g.set(self.prev));
    }
}

fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

#[derive(Clone, Debug)]
enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Scale(f64),
    Shift,
    Exp,
    Log,
    Sqrt,
    Abs,
    LeakyRelu(f64),
    Elu,
    Sigmoid,
    Select(Rc<ArrayD<f64>>),
    SumTo,
    BroadcastTo,
    Reshape,
    MatMul,
    SwapLast,
    Unfold(Geom),
    Fold(Geom),
    Upsample(usize),
    SumPool(usize),
    MaxAxis(usize),
}

struct Node {
    id: u64,
    value: ArrayD<f64>,
    requires_grad: bool,
    backward: Option<(Op, Vec<Var>)>,
}

/// A tensor value, optionally attached to the computation graph.
#[derive(Clone)]
pub struct Var(Rc<Node>);

impl std::fmt::Debug for Var {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .finish()
    }
}

fn standard(v: ArrayD<f64>) -> ArrayD<f64> {
    if v.is_standard_layout() {
        v
    } else {
        v.as_standard_layout().into_owned()
    }
}

impl Var {
    fn leaf(value: ArrayD<f64>, requires_grad: bool) -> Var {
        Var(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            value: standard(value),
            requires_grad,
            backward: None,
        }))
    }

    /// A value that never receives gradients.
    pub fn constant(value: ArrayD<f64>) -> Var {
        Var::leaf(value, false)
    }

    /// A leaf that gradients are taken with respect to.
    pub fn param(value: ArrayD<f64>) -> Var {
        Var::leaf(value, true)
    }

    pub fn scalar(x: f64) -> Var {
        Var::constant(ArrayD::from_elem(IxDyn(&[]), x))
    }

    pub fn zeros(shape: &[usize]) -> Var {
        Var::constant(ArrayD::zeros(IxDyn(shape)))
    }

    fn from_op(value: ArrayD<f64>, op: Op, inputs: Vec<Var>) -> Var {
        let track = grad_enabled() && inputs.iter().any(Var::requires_grad);
        if !track {
            return Var::constant(value);
        }
        Var(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            value: standard(value),
            requires_grad: true,
            backward: Some((op, inputs)),
        }))
    }

    pub fn value(&self) -> &ArrayD<f64> {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn detach(&self) -> Var {
        Var::constant(self.0.value.clone())
    }

    /// The single element of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.0.value.len(), 1, "item() on a tensor of {:?}", self.shape());
        *self.0.value.iter().next().unwrap()
    }

    fn slice(&self) -> &[f64] {
        self.0.value.as_slice().expect("standard layout")
    }

    // ---- elementwise -------------------------------------------------

    pub fn add(&self, other: &Var) -> Var {
        Var::from_op(self.value() + other.value(), Op::Add, vec![self.clone(), other.clone()])
    }

    pub fn sub(&self, other: &Var) -> Var {
        Var::from_op(self.value() - other.value(), Op::Sub, vec![self.clone(), other.clone()])
    }

    pub fn mul(&self, other: &Var) -> Var {
        Var::from_op(self.value() * other.value(), Op::Mul, vec![self.clone(), other.clone()])
    }

    pub fn div(&self, other: &Var) -> Var {
        Var::from_op(self.value() / other.value(), Op::Div, vec![self.clone(), other.clone()])
    }

    pub fn neg(&self) -> Var {
        Var::from_op(self.value().mapv(|x| -x), Op::Neg, vec![self.clone()])
    }

    pub fn scale(&self, c: f64) -> Var {
        Var::from_op(self.value().mapv(|x| x * c), Op::Scale(c), vec![self.clone()])
    }

    pub fn shift(&self, c: f64) -> Var {
        Var::from_op(self.value().mapv(|x| x + c), Op::Shift, vec![self.clone()])
    }

    pub fn exp(&self) -> Var {
        Var::from_op(self.value().mapv(f64::exp), Op::Exp, vec![self.clone()])
    }

    pub fn ln(&self) -> Var {
        Var::from_op(self.value().mapv(f64::ln), Op::Log, vec![self.clone()])
    }

    pub fn sqrt(&self) -> Var {
        Var::from_op(self.value().mapv(f64::sqrt), Op::Sqrt, vec![self.clone()])
    }

    pub fn square(&self) -> Var {
        self.mul(self)
    }

    pub fn abs(&self) -> Var {
        Var::from_op(self.value().mapv(f64::abs), Op::Abs, vec![self.clone()])
    }

    pub fn leaky_relu(&self, slope: f64) -> Var {
        Var::from_op(
            self.value().mapv(|x| if x > 0.0 { x } else { slope * x }),
            Op::LeakyRelu(slope),
            vec![self.clone()],
        )
    }

    pub fn relu(&self) -> Var {
        self.leaky_relu(0.0)
    }

    pub fn elu(&self) -> Var {
        Var::from_op(
            self.value().mapv(|x| if x > 0.0 { x } else { x.exp_m1() }),
            Op::Elu,
            vec![self.clone()],
        )
    }

    pub fn sigmoid(&self) -> Var {
        Var::from_op(self.value().mapv(sigmoid), Op::Sigmoid, vec![self.clone()])
    }

    /// Picks `self` where `mask` is nonzero and `other` elsewhere. All three
    /// must have the same shape; the chosen values are copied bit-exactly.
    pub fn select(&self, mask: &Rc<ArrayD<f64>>, other: &Var) -> Var {
        assert_eq!(self.shape(), other.shape(), "select operands differ in shape");
        assert_eq!(self.shape(), mask.shape(), "select mask differs in shape");
        let mut out = other.value().clone();
        ndarray::Zip::from(&mut out)
            .and(self.value())
            .and(&**mask)
            .for_each(|o, &a, &m| {
                if m != 0.0 {
                    *o = a;
                }
            });
        Var::from_op(out, Op::Select(mask.clone()), vec![self.clone(), other.clone()])
    }

    // ---- shape ---------------------------------------------------------

    /// Sums broadcast axes away so the result has `shape`.
    pub fn sum_to(&self, shape: &[usize]) -> Var {
        if self.shape() == shape {
            return self.clone();
        }
        Var::from_op(sum_to_array(self.value(), shape), Op::SumTo, vec![self.clone()])
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Var {
        if self.shape() == shape {
            return self.clone();
        }
        let v = self
            .value()
            .broadcast(IxDyn(shape))
            .unwrap_or_else(|| panic!("cannot broadcast {:?} to {:?}", self.shape(), shape))
            .to_owned();
        Var::from_op(v, Op::BroadcastTo, vec![self.clone()])
    }

    pub fn reshape(&self, shape: &[usize]) -> Var {
        if self.shape() == shape {
            return self.clone();
        }
        let v = self
            .value()
            .clone()
            .into_shape_with_order(IxDyn(shape))
            .unwrap_or_else(|_| panic!("cannot reshape {:?} to {:?}", self.shape(), shape));
        Var::from_op(v, Op::Reshape, vec![self.clone()])
    }

    pub fn sum(&self) -> Var {
        self.sum_to(&[])
    }

    pub fn mean(&self) -> Var {
        let n = self.value().len() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Swaps the last two axes.
    pub fn swap_last(&self) -> Var {
        let mut v = self.value().clone();
        let n = v.ndim();
        assert!(n >= 2);
        v.swap_axes(n - 1, n - 2);
        Var::from_op(standard(v), Op::SwapLast, vec![self.clone()])
    }

    /// Matrix product over the last two axes; a leading batch axis is
    /// allowed when both operands have it.
    pub fn matmul(&self, other: &Var) -> Var {
        Var::from_op(
            matmul_array(self.value(), other.value()),
            Op::MatMul,
            vec![self.clone(), other.clone()],
        )
    }

    /// Maximum along `axis`, keeping the axis with length one.
    pub fn max_axis(&self, axis: usize) -> Var {
        let v = self
            .value()
            .fold_axis(Axis(axis), f64::NEG_INFINITY, |&acc, &x| acc.max(x))
            .insert_axis(Axis(axis));
        Var::from_op(v, Op::MaxAxis(axis), vec![self.clone()])
    }

    // ---- spatial (NHWC) -------------------------------------------------

    fn nhwc(&self) -> (usize, usize, usize, usize) {
        let s = self.shape();
        assert_eq!(s.len(), 4, "expected an NHWC tensor, got {:?}", s);
        (s[0], s[1], s[2], s[3])
    }

    /// Extracts sliding windows: (b, h, w, c) -> (b, windows, kh*kw*c).
    pub fn unfold(&self, geom: Geom) -> Var {
        let (b, h, w, c) = self.nhwc();
        assert_eq!((h, w), (geom.in_h, geom.in_w), "geometry does not match input");
        let (oh, ow) = geom.out_hw().expect("window larger than input");
        let cols = kernels::unfold(self.slice(), b, c, &geom);
        let v = ArrayD::from_shape_vec(IxDyn(&[b, oh * ow, geom.kh * geom.kw * c]), cols).unwrap();
        Var::from_op(v, Op::Unfold(geom), vec![self.clone()])
    }

    /// Adjoint of [`Var::unfold`].
    pub fn fold(&self, geom: Geom) -> Var {
        let s = self.shape();
        assert_eq!(s.len(), 3);
        let c = s[2] / (geom.kh * geom.kw);
        let x = kernels::fold(self.slice(), s[0], c, &geom);
        let v = ArrayD::from_shape_vec(IxDyn(&[s[0], geom.in_h, geom.in_w, c]), x).unwrap();
        Var::from_op(v, Op::Fold(geom), vec![self.clone()])
    }

    pub fn upsample_nearest(&self, factor: usize) -> Var {
        let (b, h, w, c) = self.nhwc();
        let v = kernels::upsample(self.slice(), b, h, w, c, factor);
        let v = ArrayD::from_shape_vec(IxDyn(&[b, h * factor, w * factor, c]), v).unwrap();
        Var::from_op(v, Op::Upsample(factor), vec![self.clone()])
    }

    pub fn sum_pool(&self, factor: usize) -> Var {
        let (b, h, w, c) = self.nhwc();
        assert!(h % factor == 0 && w % factor == 0, "pooling factor must divide the grid");
        let v = kernels::sum_pool(self.slice(), b, h, w, c, factor);
        let v = ArrayD::from_shape_vec(IxDyn(&[b, h / factor, w / factor, c]), v).unwrap();
        Var::from_op(v, Op::SumPool(factor), vec![self.clone()])
    }

    /// 2-D convolution. `weight` is (kh, kw, c_in, c_out); `bias` is (c_out).
    pub fn conv2d(
        &self,
        weight: &Var,
        bias: Option<&Var>,
        stride: usize,
        pad: usize,
        dilation: usize,
    ) -> Var {
        let (b, h, w, c) = self.nhwc();
        let ws = weight.shape();
        assert_eq!(ws.len(), 4);
        assert_eq!(ws[2], c, "conv weight expects {} input channels, got {}", ws[2], c);
        let geom = Geom {
            kh: ws[0],
            kw: ws[1],
            stride,
            pad,
            dilation,
            in_h: h,
            in_w: w,
        };
        let (oh, ow) = geom.out_hw().expect("kernel larger than input");
        let k = ws[0] * ws[1] * c;
        let y = self
            .unfold(geom)
            .reshape(&[b * oh * ow, k])
            .matmul(&weight.reshape(&[k, ws[3]]))
            .reshape(&[b, oh, ow, ws[3]]);
        match bias {
            Some(bias) => y.add(bias),
            None => y,
        }
    }

    // ---- backward --------------------------------------------------------

    fn backward_rule(&self, op: &Op, inputs: &[Var], g: &Var) -> Vec<Option<Var>> {
        let in_shape = |i: usize| inputs[i].shape().to_vec();
        match op {
            Op::Add => vec![Some(g.sum_to(&in_shape(0))), Some(g.sum_to(&in_shape(1)))],
            Op::Sub => vec![Some(g.sum_to(&in_shape(0))), Some(g.neg().sum_to(&in_shape(1)))],
            Op::Mul => vec![
                Some(g.mul(&inputs[1]).sum_to(&in_shape(0))),
                Some(g.mul(&inputs[0]).sum_to(&in_shape(1))),
            ],
            Op::Div => {
                let (a, b) = (&inputs[0], &inputs[1]);
                vec![
                    Some(g.div(b).sum_to(&in_shape(0))),
                    Some(g.mul(a).div(&b.square()).neg().sum_to(&in_shape(1))),
                ]
            }
            Op::Neg => vec![Some(g.neg())],
            Op::Scale(c) => vec![Some(g.scale(*c))],
            Op::Shift => vec![Some(g.clone())],
            Op::Exp => vec![Some(g.mul(&inputs[0].exp()))],
            Op::Log => vec![Some(g.div(&inputs[0]))],
            Op::Sqrt => vec![Some(g.div(&inputs[0].sqrt()).scale(0.5))],
            Op::Abs => {
                let sign = inputs[0].value().mapv(|x| {
                    if x > 0.0 {
                        1.0
                    } else if x < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                });
                vec![Some(g.mul(&Var::constant(sign)))]
            }
            Op::LeakyRelu(slope) => {
                let s = *slope;
                let d = inputs[0].value().mapv(|x| if x > 0.0 { 1.0 } else { s });
                vec![Some(g.mul(&Var::constant(d)))]
            }
            Op::Elu => {
                let x = &inputs[0];
                let neg = Rc::new(x.value().mapv(|v| if v > 0.0 { 0.0 } else { 1.0 }));
                let pos = x.value().mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
                let zeros = Var::zeros(x.shape());
                // exp of the clamped input keeps the unused branch finite
                let slope = x
                    .select(&neg, &zeros)
                    .exp()
                    .mul(&Var::constant((*neg).clone()))
                    .add(&Var::constant(pos));
                vec![Some(g.mul(&slope))]
            }
            Op::Sigmoid => {
                let s = inputs[0].sigmoid();
                vec![Some(g.mul(&s.mul(&s.neg().shift(1.0))))]
            }
            Op::Select(mask) => {
                let zeros = Var::zeros(g.shape());
                vec![Some(g.select(mask, &zeros)), Some(zeros.select(mask, g))]
            }
            Op::SumTo => vec![Some(g.broadcast_to(&in_shape(0)))],
            Op::BroadcastTo => vec![Some(g.sum_to(&in_shape(0)))],
            Op::Reshape => vec![Some(g.reshape(&in_shape(0)))],
            Op::MatMul => vec![
                Some(g.matmul(&inputs[1].swap_last())),
                Some(inputs[0].swap_last().matmul(g)),
            ],
            Op::SwapLast => vec![Some(g.swap_last())],
            Op::Unfold(geom) => vec![Some(g.fold(*geom))],
            Op::Fold(geom) => vec![Some(g.unfold(*geom))],
            Op::Upsample(f) => vec![Some(g.sum_pool(*f))],
            Op::SumPool(f) => vec![Some(g.upsample_nearest(*f))],
            Op::MaxAxis(axis) => {
                let onehot = argmax_onehot(inputs[0].value(), *axis);
                vec![Some(g.broadcast_to(&in_shape(0)).mul(&Var::constant(onehot)))]
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn sum_to_array(x: &ArrayD<f64>, shape: &[usize]) -> ArrayD<f64> {
    assert!(x.ndim() >= shape.len(), "cannot sum {:?} to {:?}", x.shape(), shape);
    let mut out = x.clone();
    while out.ndim() > shape.len() {
        out = out.sum_axis(Axis(0));
    }
    for (ax, &d) in shape.iter().enumerate() {
        if d == 1 && out.shape()[ax] != 1 {
            out = out.sum_axis(Axis(ax)).insert_axis(Axis(ax));
        }
    }
    assert_eq!(out.shape(), shape, "cannot sum {:?} to {:?}", x.shape(), shape);
    out
}

fn matmul_array(a: &ArrayD<f64>, b: &ArrayD<f64>) -> ArrayD<f64> {
    match (a.ndim(), b.ndim()) {
        (2, 2) => {
            let a2 = a.view().into_dimensionality::<Ix2>().unwrap();
            let b2 = b.view().into_dimensionality::<Ix2>().unwrap();
            a2.dot(&b2).into_dyn()
        }
        (3, 3) => {
            let (n, m, k) = (a.shape()[0], a.shape()[1], a.shape()[2]);
            assert_eq!(b.shape()[0], n, "batched matmul batch mismatch");
            assert_eq!(b.shape()[1], k, "batched matmul inner mismatch");
            let p = b.shape()[2];
            let mut out = ndarray::Array3::<f64>::zeros((n, m, p));
            for i in 0..n {
                let ai = a.index_axis(Axis(0), i).into_dimensionality::<Ix2>().unwrap();
                let bi = b.index_axis(Axis(0), i).into_dimensionality::<Ix2>().unwrap();
                let mut oi = out.index_axis_mut(Axis(0), i);
                ndarray::linalg::general_mat_mul(1.0, &ai, &bi, 0.0, &mut oi);
            }
            out.into_dyn()
        }
        _ => panic!("matmul of {:?} and {:?}", a.shape(), b.shape()),
    }
}

fn argmax_onehot(x: &ArrayD<f64>, axis: usize) -> ArrayD<f64> {
    let mut out = ArrayD::zeros(x.raw_dim());
    for (lane, mut olane) in x.lanes(Axis(axis)).into_iter().zip(out.lanes_mut(Axis(axis))) {
        let mut best = 0;
        for (i, &v) in lane.iter().enumerate() {
            if v > lane[best] {
                best = i;
            }
        }
        olane[best] = 1.0;
    }
    out
}

/// Gradients of the scalar `output` with respect to each of `wrt`.
///
/// With `create_graph` the returned gradients are themselves attached to the
/// graph and can be differentiated again. Inputs that do not influence the
/// output get a zero gradient.
pub fn grad(output: &Var, wrt: &[&Var], create_graph: bool) -> Vec<Var> {
    assert_eq!(output.value().len(), 1, "grad() needs a scalar output");
    let _guard = if create_graph { None } else { Some(no_grad()) };

    let wanted: HashSet<u64> = wrt.iter().map(|v| v.0.id).collect();
    let mut order: Vec<Var> = Vec::new();
    let mut seen = HashSet::new();
    let mut stack = vec![output.clone()];
    while let Some(v) = stack.pop() {
        if !v.requires_grad() || !seen.insert(v.0.id) {
            continue;
        }
        if let Some((_, inputs)) = &v.0.backward {
            stack.extend(inputs.iter().cloned());
        }
        order.push(v);
    }
    order.sort_by_key(|v| std::cmp::Reverse(v.0.id));

    let mut grads: HashMap<u64, Var> = HashMap::new();
    grads.insert(output.0.id, Var::constant(ArrayD::ones(output.value().raw_dim())));
    let mut result: HashMap<u64, Var> = HashMap::new();
    for node in &order {
        let id = node.0.id;
        let Some(g) = grads.remove(&id) else { continue };
        if wanted.contains(&id) {
            result.insert(id, g.clone());
        }
        let Some((op, inputs)) = &node.0.backward else { continue };
        let parts = node.backward_rule(op, inputs, &g);
        for (input, part) in inputs.iter().zip(parts) {
            let Some(part) = part else { continue };
            if !input.requires_grad() {
                continue;
            }
            let acc = match grads.remove(&input.0.id) {
                Some(prev) => prev.add(&part),
                None => part,
            };
            grads.insert(input.0.id, acc);
        }
    }
    wrt.iter()
        .map(|v| {
            result
                .get(&v.0.id)
                .cloned()
                .unwrap_or_else(|| Var::zeros(v.shape()))
        })
        .collect()
}

impl ops::Add for &Var {
    type Output = Var;
    fn add(self, rhs: &Var) -> Var {
        Var::add(self, rhs)
    }
}

impl ops::Sub for &Var {
    type Output = Var;
    fn sub(self, rhs: &Var) -> Var {
        Var::sub(self, rhs)
    }
}

impl ops::Mul for &Var {
    type Output = Var;
    fn mul(self, rhs: &Var) -> Var {
        Var::mul(self, rhs)
    }
}
