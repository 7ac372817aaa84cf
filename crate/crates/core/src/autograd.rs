//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! Every backward rule is itself written with differentiable ops, so a
//! gradient computed with `create_graph = true` can be differentiated again.
//! The gradient penalty of WGAN-GP relies on this: the penalty is a function
//! of `∂D/∂x`, and the discriminator update needs its gradient with respect to
//! the discriminator parameters.

use std::cell::Cell;
use std::collections::HashMap;
use std::rc::Rc;

use crate::tensor::{self, Tensor};

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Disables graph recording on this thread until dropped.
pub struct NoGradGuard {
    prev: bool,
}

impl Drop for NoGradGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|g| g.set(self.prev));
    }
}

pub fn no_grad() -> NoGradGuard {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    NoGradGuard { prev }
}

fn grad_enabled() -> bool {
    GRAD_ENABLED.with(Cell::get)
}

type BackwardFn = Box<dyn Fn(&[Var], &Var, &Var) -> Vec<Option<Var>>>;

struct Node {
    value: Tensor,
    requires_grad: bool,
    inputs: Vec<Var>,
    backward: Option<BackwardFn>,
}

/// A node in the computation graph. Cloning is cheap (reference counted).
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

impl Var {
    /// A trainable leaf.
    pub fn leaf(value: Tensor) -> Self {
        Var(Rc::new(Node {
            value,
            requires_grad: true,
            inputs: Vec::new(),
            backward: None,
        }))
    }

    pub fn constant(value: Tensor) -> Self {
        Var(Rc::new(Node {
            value,
            requires_grad: false,
            inputs: Vec::new(),
            backward: None,
        }))
    }

    fn from_op(
        value: Tensor,
        inputs: Vec<Var>,
        backward: impl Fn(&[Var], &Var, &Var) -> Vec<Option<Var>> + 'static,
    ) -> Self {
        if grad_enabled() && inputs.iter().any(Var::requires_grad) {
            Var(Rc::new(Node {
                value,
                requires_grad: true,
                inputs,
                backward: Some(Box::new(backward)),
            }))
        } else {
            Var::constant(value)
        }
    }

    pub fn value(&self) -> &Tensor {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Var {
        Var::constant(self.0.value.clone())
    }

    fn id(&self) -> *const Node {
        Rc::as_ptr(&self.0)
    }

    pub fn add(&self, other: &Var) -> Var {
        add(self, other)
    }

    pub fn sub(&self, other: &Var) -> Var {
        sub(self, other)
    }

    pub fn mul(&self, other: &Var) -> Var {
        mul(self, other)
    }

    pub fn scale(&self, s: f32) -> Var {
        scale(self, s)
    }
}

fn needs(inputs: &[Var], i: usize) -> bool {
    inputs[i].requires_grad()
}

/// Gradients of a scalar `output` with respect to each of `wrt`.
///
/// Returns `None` for inputs that do not influence `output`. With
/// `create_graph` the returned gradients are themselves differentiable.
pub fn grad(output: &Var, wrt: &[&Var], create_graph: bool) -> Vec<Option<Var>> {
    assert_eq!(output.value().len(), 1, "grad() needs a scalar output");
    let _guard = if create_graph { None } else { Some(no_grad()) };

    // Iterative post-order DFS over nodes that require grad.
    let mut order: Vec<Var> = Vec::new();
    let mut visited: HashMap<*const Node, ()> = HashMap::new();
    if output.requires_grad() {
        let mut stack: Vec<(Var, bool)> = vec![(output.clone(), false)];
        while let Some((v, expanded)) = stack.pop() {
            if expanded {
                order.push(v);
                continue;
            }
            if visited.insert(v.id(), ()).is_some() {
                continue;
            }
            stack.push((v.clone(), true));
            for inp in &v.0.inputs {
                if inp.requires_grad() && !visited.contains_key(&inp.id()) {
                    stack.push((inp.clone(), false));
                }
            }
        }
    }

    let mut grads: HashMap<*const Node, Var> = HashMap::new();
    grads.insert(output.id(), Var::constant(Tensor::full(output.shape(), 1.0)));
    let targets: HashMap<*const Node, ()> = wrt.iter().map(|v| (v.id(), ())).collect();
    for node in order.iter().rev() {
        let Some(g) = grads.get(&node.id()).cloned() else {
            continue;
        };
        let Some(backward) = node.0.backward.as_ref() else {
            continue;
        };
        let input_grads = backward(&node.0.inputs, node, &g);
        debug_assert_eq!(input_grads.len(), node.0.inputs.len());
        for (inp, ig) in node.0.inputs.iter().zip(input_grads) {
            let Some(ig) = ig else { continue };
            if !inp.requires_grad() {
                continue;
            }
            debug_assert_eq!(ig.shape(), inp.shape());
            let key = inp.id();
            let acc = match grads.remove(&key) {
                Some(prev) => add(&prev, &ig),
                None => ig,
            };
            grads.insert(key, acc);
        }
        // Intermediate gradients are no longer needed once propagated.
        if !targets.contains_key(&node.id()) {
            grads.remove(&node.id());
        }
    }
    wrt.iter().map(|v| grads.get(&v.id()).cloned()).collect()
}

// ---------------------------------------------------------------------------
// Elementwise

pub fn add(a: &Var, b: &Var) -> Var {
    let value = a.value().zip_map(b.value(), |x, y| x + y);
    Var::from_op(value, vec![a.clone(), b.clone()], |_, _, g| {
        vec![Some(g.clone()), Some(g.clone())]
    })
}

pub fn sub(a: &Var, b: &Var) -> Var {
    let value = a.value().zip_map(b.value(), |x, y| x - y);
    Var::from_op(value, vec![a.clone(), b.clone()], |inp, _, g| {
        vec![Some(g.clone()), needs(inp, 1).then(|| scale(g, -1.0))]
    })
}

pub fn mul(a: &Var, b: &Var) -> Var {
    let value = a.value().zip_map(b.value(), |x, y| x * y);
    Var::from_op(value, vec![a.clone(), b.clone()], |inp, _, g| {
        vec![
            needs(inp, 0).then(|| mul(g, &inp[1])),
            needs(inp, 1).then(|| mul(g, &inp[0])),
        ]
    })
}

pub fn scale(a: &Var, s: f32) -> Var {
    let value = a.value().map(|x| x * s);
    Var::from_op(value, vec![a.clone()], move |_, _, g| vec![Some(scale(g, s))])
}

pub fn add_scalar(a: &Var, s: f32) -> Var {
    let value = a.value().map(|x| x + s);
    Var::from_op(value, vec![a.clone()], |_, _, g| vec![Some(g.clone())])
}

/// Elementwise `x^p`.
pub fn powf(a: &Var, p: f32) -> Var {
    let value = a.value().map(|x| x.powf(p));
    Var::from_op(value, vec![a.clone()], move |inp, _, g| {
        let d = scale(&powf(&inp[0], p - 1.0), p);
        vec![Some(mul(g, &d))]
    })
}

pub fn leaky_relu(a: &Var, slope: f32) -> Var {
    let value = a.value().map(|x| if x > 0.0 { x } else { slope * x });
    Var::from_op(value, vec![a.clone()], move |inp, _, g| {
        let mask = inp[0].value().map(|x| if x > 0.0 { 1.0 } else { slope });
        vec![Some(mul(g, &Var::constant(mask)))]
    })
}

pub fn sigmoid(a: &Var) -> Var {
    let value = a.value().map(stable_sigmoid);
    Var::from_op(value, vec![a.clone()], |_, out, g| {
        // s' = s (1 - s)
        let one_minus = add_scalar(&scale(out, -1.0), 1.0);
        vec![Some(mul(g, &mul(out, &one_minus)))]
    })
}

/// `log(1 + e^x)`, computed without overflow.
pub fn softplus(a: &Var) -> Var {
    let value = a.value().map(|x| x.max(0.0) + (-x.abs()).exp().ln_1p());
    Var::from_op(value, vec![a.clone()], |inp, _, g| {
        vec![Some(mul(g, &sigmoid(&inp[0])))]
    })
}

pub fn tanh(a: &Var) -> Var {
    let value = a.value().map(f32::tanh);
    Var::from_op(value, vec![a.clone()], |_, out, g| {
        let d = add_scalar(&scale(&mul(out, out), -1.0), 1.0);
        vec![Some(mul(g, &d))]
    })
}

pub(crate) fn stable_sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

// ---------------------------------------------------------------------------
// Shape, reductions and broadcasts.
//
// Reductions view a tensor as [outer, mid, inner]. `*_keep_mid` reduce over
// outer and inner (per-channel bias sums); `*_drop_mid` reduce over mid
// (per-pixel channel means, per-sample sums, totals).

pub fn reshape(a: &Var, shape: &[usize]) -> Var {
    let from = a.shape().to_vec();
    let value = a.value().reshape(shape);
    Var::from_op(value, vec![a.clone()], move |_, _, g| vec![Some(reshape(g, &from))])
}

pub fn sum_keep_mid(a: &Var, outer: usize, mid: usize, inner: usize) -> Var {
    assert_eq!(a.value().len(), outer * mid * inner);
    let src = a.value().data();
    let mut out = vec![0.0f32; mid];
    for o in 0..outer {
        for (m, acc) in out.iter_mut().enumerate() {
            let base = (o * mid + m) * inner;
            *acc += src[base..base + inner].iter().sum::<f32>();
        }
    }
    let shape = a.shape().to_vec();
    Var::from_op(Tensor::new(vec![mid], out), vec![a.clone()], move |_, _, g| {
        vec![Some(reshape(&expand_keep_mid(g, outer, inner), &shape))]
    })
}

/// Broadcast `b: [mid]` to `[outer, mid, inner]` (flat shape `[outer*mid*inner]`).
pub fn expand_keep_mid(b: &Var, outer: usize, inner: usize) -> Var {
    let mid = b.value().len();
    let src = b.value().data();
    let mut out = Vec::with_capacity(outer * mid * inner);
    for _ in 0..outer {
        for &v in src {
            out.extend(std::iter::repeat_n(v, inner));
        }
    }
    let bshape = b.shape().to_vec();
    Var::from_op(
        Tensor::new(vec![outer * mid * inner], out),
        vec![b.clone()],
        move |_, _, g| vec![Some(reshape(&sum_keep_mid(g, outer, mid, inner), &bshape))],
    )
}

pub fn sum_drop_mid(a: &Var, outer: usize, mid: usize, inner: usize) -> Var {
    assert_eq!(a.value().len(), outer * mid * inner);
    let src = a.value().data();
    let mut out = vec![0.0f32; outer * inner];
    for o in 0..outer {
        let dst = &mut out[o * inner..(o + 1) * inner];
        for m in 0..mid {
            let row = &src[(o * mid + m) * inner..][..inner];
            dst.iter_mut().zip(row).for_each(|(d, s)| *d += s);
        }
    }
    let shape = a.shape().to_vec();
    Var::from_op(
        Tensor::new(vec![outer * inner], out),
        vec![a.clone()],
        move |_, _, g| vec![Some(reshape(&expand_drop_mid(g, outer, mid, inner), &shape))],
    )
}

/// Broadcast `y: [outer*inner]` to `[outer, mid, inner]` (flat).
pub fn expand_drop_mid(y: &Var, outer: usize, mid: usize, inner: usize) -> Var {
    assert_eq!(y.value().len(), outer * inner);
    let src = y.value().data();
    let mut out = Vec::with_capacity(outer * mid * inner);
    for o in 0..outer {
        for _ in 0..mid {
            out.extend_from_slice(&src[o * inner..(o + 1) * inner]);
        }
    }
    let yshape = y.shape().to_vec();
    Var::from_op(
        Tensor::new(vec![outer * mid * inner], out),
        vec![y.clone()],
        move |_, _, g| vec![Some(reshape(&sum_drop_mid(g, outer, mid, inner), &yshape))],
    )
}

pub fn sum_all(a: &Var) -> Var {
    let n = a.value().len();
    reshape(&sum_drop_mid(a, 1, n, 1), &[1])
}

pub fn mean_all(a: &Var) -> Var {
    let n = a.value().len();
    scale(&sum_all(a), 1.0 / n as f32)
}

/// Per-sample sum over every axis but the first: `[N, ...] → [N]`.
pub fn sum_per_sample(a: &Var) -> Var {
    let n = a.shape()[0];
    let rest = a.value().len() / n;
    sum_drop_mid(a, n, rest, 1)
}

/// Add a per-channel bias `b: [C]` to `x: [N, C, ...]`.
pub fn add_channel_bias(x: &Var, b: &Var) -> Var {
    let n = x.shape()[0];
    let c = x.shape()[1];
    assert_eq!(b.value().len(), c, "bias length must match channel count");
    let inner = x.value().len() / (n * c);
    let bias = reshape(&expand_keep_mid(b, n, inner), x.shape());
    add(x, &bias)
}

// ---------------------------------------------------------------------------
// Linear algebra

/// `a: [m, k]` times `b: [k, n]`.
pub fn matmul(a: &Var, b: &Var) -> Var {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let (k2, n) = (b.shape()[0], b.shape()[1]);
    assert_eq!(k, k2, "matmul inner dims differ: {k} vs {k2}");
    let mut out = vec![0.0f32; m * n];
    tensor::gemm(
        m,
        k,
        n,
        1.0,
        a.value().data(),
        false,
        b.value().data(),
        false,
        0.0,
        &mut out,
    );
    Var::from_op(Tensor::new(vec![m, n], out), vec![a.clone(), b.clone()], |inp, _, g| {
        vec![
            needs(inp, 0).then(|| matmul(g, &transpose(&inp[1]))),
            needs(inp, 1).then(|| matmul(&transpose(&inp[0]), g)),
        ]
    })
}

pub fn transpose(a: &Var) -> Var {
    let (m, n) = (a.shape()[0], a.shape()[1]);
    let src = a.value().data();
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = src[i * n + j];
        }
    }
    Var::from_op(Tensor::new(vec![n, m], out), vec![a.clone()], |_, _, g| {
        vec![Some(transpose(g))]
    })
}

/// `out[r, j] = a[r, idx[j]]` for `a: [rows, width]`.
pub fn gather_cols(a: &Var, idx: Rc<Vec<usize>>) -> Var {
    let (rows, width) = (a.shape()[0], a.shape()[1]);
    let src = a.value().data();
    let mut out = Vec::with_capacity(rows * idx.len());
    for r in 0..rows {
        let row = &src[r * width..(r + 1) * width];
        out.extend(idx.iter().map(|&j| row[j]));
    }
    let len = idx.len();
    Var::from_op(Tensor::new(vec![rows, len], out), vec![a.clone()], move |_, _, g| {
        vec![Some(scatter_cols(g, Rc::clone(&idx), width))]
    })
}

/// `out[r, idx[j]] += a[r, j]` into a zero `[rows, width]` tensor.
pub fn scatter_cols(a: &Var, idx: Rc<Vec<usize>>, width: usize) -> Var {
    let (rows, len) = (a.shape()[0], a.shape()[1]);
    assert_eq!(len, idx.len());
    let src = a.value().data();
    let mut out = vec![0.0f32; rows * width];
    for r in 0..rows {
        let dst = &mut out[r * width..(r + 1) * width];
        for (j, &t) in idx.iter().enumerate() {
            dst[t] += src[r * len + j];
        }
    }
    Var::from_op(Tensor::new(vec![rows, width], out), vec![a.clone()], move |_, _, g| {
        vec![Some(gather_cols(g, Rc::clone(&idx)))]
    })
}

// ---------------------------------------------------------------------------
// Convolution family. The three ops are bilinear and differentiate into each
// other, which closes the family under repeated differentiation.

pub fn conv2d(x: &Var, w: &Var) -> Var {
    let value = tensor::conv2d(x.value(), w.value());
    Var::from_op(value, vec![x.clone(), w.clone()], |inp, _, g| {
        let k = inp[1].shape()[2];
        vec![
            needs(inp, 0).then(|| conv2d_input_grad(g, &inp[1])),
            needs(inp, 1).then(|| conv2d_weight_grad(&inp[0], g, k)),
        ]
    })
}

pub fn conv2d_input_grad(g: &Var, w: &Var) -> Var {
    let value = tensor::conv2d_input_grad(g.value(), w.value());
    Var::from_op(value, vec![g.clone(), w.clone()], |inp, _, gx| {
        let k = inp[1].shape()[2];
        vec![
            needs(inp, 0).then(|| conv2d(gx, &inp[1])),
            needs(inp, 1).then(|| conv2d_weight_grad(gx, &inp[0], k)),
        ]
    })
}

pub fn conv2d_weight_grad(x: &Var, g: &Var, k: usize) -> Var {
    let value = tensor::conv2d_weight_grad(x.value(), g.value(), k);
    Var::from_op(value, vec![x.clone(), g.clone()], |inp, _, gw| {
        vec![
            needs(inp, 0).then(|| conv2d_input_grad(&inp[1], gw)),
            needs(inp, 1).then(|| conv2d(&inp[0], gw)),
        ]
    })
}

pub fn upsample2x(x: &Var) -> Var {
    let value = tensor::upsample2x(x.value());
    Var::from_op(value, vec![x.clone()], |_, _, g| vec![Some(sum_pool2x2(g))])
}

pub fn sum_pool2x2(x: &Var) -> Var {
    let value = tensor::sum_pool2x2(x.value());
    Var::from_op(value, vec![x.clone()], |_, _, g| vec![Some(upsample2x(g))])
}

pub fn avg_pool2x2(x: &Var) -> Var {
    scale(&sum_pool2x2(x), 0.25)
}

/// Normalize each pixel's feature vector to unit RMS across channels.
pub fn pixel_norm(x: &Var, eps: f32) -> Var {
    let (n, c) = (x.shape()[0], x.shape()[1]);
    let inner = x.value().len() / (n * c);
    let sq_mean = scale(&sum_drop_mid(&mul(x, x), n, c, inner), 1.0 / c as f32);
    let inv = powf(&add_scalar(&sq_mean, eps), -0.5);
    let inv = reshape(&expand_drop_mid(&inv, n, c, inner), x.shape());
    mul(x, &inv)
}
