//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s. Parameters
//! are pulled from a borrowed [`ParamStore`] on first use and cached, so a
//! parameter referenced several times in one forward pass accumulates a
//! single gradient.

use std::cell::RefCell;
use std::collections::HashMap;

use crate::nn::{ParamId, ParamStore};
use crate::tensor::{
    broadcast_zip, concat, gemm_into, inverse_perm, narrow, numel, permute, reduce_to, split_axis,
};
use crate::{Scalar, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Label value meaning "no target at this position".
pub const IGNORE_INDEX: usize = usize::MAX;

enum Op<T> {
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    MatMul(Var, Var),
    Bmm { a: Var, b: Var, ta: bool, tb: bool },
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Concat(Vec<Var>, usize),
    Narrow(Var, usize, usize),
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Gelu(Var),
    Silu(Var),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Sqr(Var),
    SumAll(Var),
    MeanAll(Var),
    SumAxis(Var, usize),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<T>,
        count: usize,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Recording tape bound to a parameter store.
pub struct Graph<'s, T: Scalar> {
    store: &'s ParamStore<T>,
    nodes: RefCell<Vec<Node<T>>>,
    param_vars: RefCell<HashMap<ParamId, Var>>,
    grad_enabled: bool,
    frozen: Option<&'s dyn Fn(ParamId) -> bool>,
}

impl<'s, T: Scalar> Graph<'s, T> {
    pub fn new(store: &'s ParamStore<T>) -> Self {
        Graph {
            store,
            nodes: RefCell::new(Vec::new()),
            param_vars: RefCell::new(HashMap::new()),
            grad_enabled: true,
            frozen: None,
        }
    }

    /// A graph that records values only; `backward` yields no gradients.
    pub fn inference(store: &'s ParamStore<T>) -> Self {
        Graph {
            grad_enabled: false,
            ..Graph::new(store)
        }
    }

    /// Treats parameters for which `frozen` returns true as constants.
    pub fn with_frozen(mut self, frozen: &'s dyn Fn(ParamId) -> bool) -> Self {
        self.frozen = Some(frozen);
        self
    }

    pub fn store(&self) -> &'s ParamStore<T> {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        let needs_grad = self.grad_enabled && inputs.iter().any(|v| nodes[v.0].needs_grad);
        let op = if needs_grad { op } else { Op::Leaf };
        nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(nodes.len() - 1)
    }

    /// Non-differentiable input.
    pub fn constant(&self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, &[])
    }

    /// Differentiable leaf not backed by the store (used by gradient probes).
    pub fn variable(&self, value: Tensor<T>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: self.grad_enabled,
        });
        Var(nodes.len() - 1)
    }

    pub fn param(&self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.borrow().get(&id) {
            return v;
        }
        let value = self.store.value(id).clone();
        let trainable = self.grad_enabled && !self.frozen.is_some_and(|f| f(id));
        let v = {
            let mut nodes = self.nodes.borrow_mut();
            nodes.push(Node {
                value,
                op: if trainable { Op::Param(id) } else { Op::Leaf },
                needs_grad: trainable,
            });
            Var(nodes.len() - 1)
        };
        self.param_vars.borrow_mut().insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> Tensor<T> {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn item(&self, v: Var) -> T {
        self.nodes.borrow()[v.0].value.item()
    }

    fn unary(&self, x: Var, f: impl Fn(&Tensor<T>) -> Tensor<T>, op: Op<T>) -> Var {
        let out = f(&self.nodes.borrow()[x.0].value);
        self.push(out, op, &[x])
    }

    // ---- elementwise ----

    pub fn add(&self, a: Var, b: Var) -> Var {
        let out = {
            let n = self.nodes.borrow();
            broadcast_zip(&n[a.0].value, &n[b.0].value, |x, y| x + y)
        };
        self.push(out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let out = {
            let n = self.nodes.borrow();
            broadcast_zip(&n[a.0].value, &n[b.0].value, |x, y| x - y)
        };
        self.push(out, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        let out = {
            let n = self.nodes.borrow();
            broadcast_zip(&n[a.0].value, &n[b.0].value, |x, y| x * y)
        };
        self.push(out, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&self, x: Var, c: T) -> Var {
        self.unary(x, |t| t.map(|v| v * c), Op::Scale(x, c))
    }

    pub fn add_scalar(&self, x: Var, c: T) -> Var {
        self.unary(x, |t| t.map(|v| v + c), Op::AddScalar(x))
    }

    pub fn gelu(&self, x: Var) -> Var {
        self.unary(x, |t| t.map(gelu), Op::Gelu(x))
    }

    pub fn silu(&self, x: Var) -> Var {
        self.unary(x, |t| t.map(|v| v * sigmoid(v)), Op::Silu(x))
    }

    pub fn relu(&self, x: Var) -> Var {
        self.unary(x, |t| t.map(|v| v.max(T::zero())), Op::Relu(x))
    }

    pub fn tanh(&self, x: Var) -> Var {
        self.unary(x, |t| t.map(|v| v.tanh()), Op::Tanh(x))
    }

    pub fn exp(&self, x: Var) -> Var {
        self.unary(x, |t| t.map(|v| v.exp()), Op::Exp(x))
    }

    pub fn log(&self, x: Var) -> Var {
        self.unary(x, |t| t.map(|v| v.ln()), Op::Log(x))
    }

    pub fn sqr(&self, x: Var) -> Var {
        self.unary(x, |t| t.map(|v| v * v), Op::Sqr(x))
    }

    // ---- linear algebra ----

    /// `a[..., k] · b[k, n] -> [..., n]`.
    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let out = {
            let nodes = self.nodes.borrow();
            let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
            assert_eq!(bv.rank(), 2, "matmul rhs must be 2-D");
            let k = bv.dim(0);
            let n = bv.dim(1);
            assert_eq!(
                *av.shape().last().expect("matmul lhs rank >= 1"),
                k,
                "matmul inner dims {:?} x {:?}",
                av.shape(),
                bv.shape()
            );
            let m = av.len() / k;
            let mut out = vec![T::zero(); m * n];
            gemm_into(av.data(), bv.data(), &mut out, m, k, n, false, false, T::zero());
            let mut shape = av.shape().to_vec();
            *shape.last_mut().unwrap() = n;
            Tensor::from_vec(&shape, out)
        };
        self.push(out, Op::MatMul(a, b), &[a, b])
    }

    /// Batched matmul over a leading axis: `op(a)[B,m,k] · op(b)[B,k,n]`,
    /// where `op` transposes the last two axes when the flag is set.
    pub fn bmm(&self, a: Var, b: Var, ta: bool, tb: bool) -> Var {
        let out = {
            let nodes = self.nodes.borrow();
            let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
            assert!(av.rank() == 3 && bv.rank() == 3, "bmm expects 3-D operands");
            let batch = av.dim(0);
            assert_eq!(batch, bv.dim(0), "bmm batch mismatch");
            let (m, k) = if ta { (av.dim(2), av.dim(1)) } else { (av.dim(1), av.dim(2)) };
            let (k2, n) = if tb { (bv.dim(2), bv.dim(1)) } else { (bv.dim(1), bv.dim(2)) };
            assert_eq!(k, k2, "bmm inner dims {:?} x {:?}", av.shape(), bv.shape());
            let mut out = vec![T::zero(); batch * m * n];
            for i in 0..batch {
                gemm_into(
                    &av.data()[i * m * k..(i + 1) * m * k],
                    &bv.data()[i * k * n..(i + 1) * k * n],
                    &mut out[i * m * n..(i + 1) * m * n],
                    m,
                    k,
                    n,
                    ta,
                    tb,
                    T::zero(),
                );
            }
            Tensor::from_vec(&[batch, m, n], out)
        };
        self.push(out, Op::Bmm { a, b, ta, tb }, &[a, b])
    }

    // ---- shape ----

    pub fn reshape(&self, x: Var, shape: &[usize]) -> Var {
        self.unary(x, |t| t.clone().reshape(shape), Op::Reshape(x))
    }

    pub fn permute(&self, x: Var, perm: &[usize]) -> Var {
        self.unary(x, |t| permute(t, perm), Op::Permute(x, perm.to_vec()))
    }

    pub fn concat(&self, parts: &[Var], axis: usize) -> Var {
        if parts.len() == 1 {
            return parts[0];
        }
        let out = {
            let nodes = self.nodes.borrow();
            let refs: Vec<&Tensor<T>> = parts.iter().map(|p| &nodes[p.0].value).collect();
            concat(&refs, axis)
        };
        self.push(out, Op::Concat(parts.to_vec(), axis), parts)
    }

    pub fn narrow(&self, x: Var, axis: usize, start: usize, len: usize) -> Var {
        self.unary(x, |t| narrow(t, axis, start, len), Op::Narrow(x, axis, start))
    }

    // ---- normalisation ----

    pub fn softmax(&self, x: Var) -> Var {
        self.unary(x, softmax_last, Op::Softmax(x))
    }

    pub fn log_softmax(&self, x: Var) -> Var {
        self.unary(x, log_softmax_last, Op::LogSoftmax(x))
    }

    /// Layer norm over the last axis with affine `gamma`, `beta` of width `d`.
    pub fn layer_norm(&self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let (out, xhat, rstd) = {
            let nodes = self.nodes.borrow();
            let (xv, gv, bv) = (&nodes[x.0].value, &nodes[gamma.0].value, &nodes[beta.0].value);
            let d = *xv.shape().last().expect("layer_norm rank >= 1");
            assert_eq!(gv.len(), d, "layer_norm gamma width");
            assert_eq!(bv.len(), d, "layer_norm beta width");
            let eps = T::lit(eps);
            let dn = T::lit(d as f64);
            let rows = xv.len() / d;
            let mut out = Vec::with_capacity(xv.len());
            let mut xhat = Vec::with_capacity(xv.len());
            let mut rstd = Vec::with_capacity(rows);
            for row in xv.data().chunks(d) {
                let mean = row.iter().copied().sum::<T>() / dn;
                let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
                let r = T::one() / (var + eps).sqrt();
                rstd.push(r);
                for (j, &v) in row.iter().enumerate() {
                    let h = (v - mean) * r;
                    xhat.push(h);
                    out.push(h * gv.data()[j] + bv.data()[j]);
                }
            }
            (Tensor::from_vec(xv.shape(), out), xhat, rstd)
        };
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            &[x, gamma, beta],
        )
    }

    // ---- reductions ----

    pub fn sum(&self, x: Var) -> Var {
        self.unary(x, |t| Tensor::scalar(t.sum()), Op::SumAll(x))
    }

    pub fn mean(&self, x: Var) -> Var {
        self.unary(
            x,
            |t| Tensor::scalar(t.sum() / T::lit(t.len() as f64)),
            Op::MeanAll(x),
        )
    }

    /// Sums over `axis`, removing it.
    pub fn sum_axis(&self, x: Var, axis: usize) -> Var {
        self.unary(x, |t| sum_axis(t, axis), Op::SumAxis(x, axis))
    }

    pub fn mean_axis(&self, x: Var, axis: usize) -> Var {
        let len = self.nodes.borrow()[x.0].value.dim(axis);
        let s = self.sum_axis(x, axis);
        self.scale(s, T::one() / T::lit(len as f64))
    }

    /// Mean token-level cross entropy of `logits[N, V]` against `targets`;
    /// positions equal to [`IGNORE_INDEX`] are skipped.
    pub fn cross_entropy(&self, logits: Var, targets: &[usize]) -> Var {
        let (loss, probs, count) = {
            let nodes = self.nodes.borrow();
            let lv = &nodes[logits.0].value;
            assert_eq!(lv.rank(), 2, "cross_entropy expects [N, V]");
            let (n, v) = (lv.dim(0), lv.dim(1));
            assert_eq!(targets.len(), n, "cross_entropy target count");
            let probs = softmax_last(lv).into_data();
            let lsm = log_softmax_last(lv);
            let mut total = T::zero();
            let mut count = 0usize;
            for (i, &t) in targets.iter().enumerate() {
                if t == IGNORE_INDEX {
                    continue;
                }
                assert!(t < v, "target {t} out of vocabulary {v}");
                total -= lsm.data()[i * v + t];
                count += 1;
            }
            let loss = if count == 0 {
                T::zero()
            } else {
                total / T::lit(count as f64)
            };
            (Tensor::scalar(loss), probs, count)
        };
        self.push(
            loss,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
                count,
            },
            &[logits],
        )
    }

    /// Gathers rows of `table[V, d]`.
    pub fn embedding(&self, table: Var, ids: &[usize]) -> Var {
        let out = {
            let nodes = self.nodes.borrow();
            let tv = &nodes[table.0].value;
            let d = tv.dim(1);
            let mut out = Vec::with_capacity(ids.len() * d);
            for &id in ids {
                assert!(id < tv.dim(0), "embedding id {id} out of range");
                out.extend_from_slice(tv.row(id));
            }
            Tensor::from_vec(&[ids.len(), d], out)
        };
        self.push(
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        )
    }

    // ---- backward ----

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        assert_eq!(nodes[loss.0].value.len(), 1, "backward from non-scalar");
        if nodes[loss.0].needs_grad {
            grads[loss.0] = Some(Tensor::full(nodes[loss.0].value.shape(), T::one()));
        }
        let acc = |grads: &mut Vec<Option<Tensor<T>>>, v: Var, g: Tensor<T>| {
            if !nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        };
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            let val = |v: Var| &nodes[v.0].value;
            match &node.op {
                Op::Leaf | Op::Param(_) => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, reduce_to(&g, val(*a).shape()));
                    acc(&mut grads, *b, reduce_to(&g, val(*b).shape()));
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, reduce_to(&g, val(*a).shape()));
                    acc(&mut grads, *b, reduce_to(&g, val(*b).shape()).map(|v| -v));
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    if nodes[a.0].needs_grad {
                        acc(&mut grads, *a, reduce_to(&broadcast_zip(&g, bv, |x, y| x * y), av.shape()));
                    }
                    if nodes[b.0].needs_grad {
                        acc(&mut grads, *b, reduce_to(&broadcast_zip(&g, av, |x, y| x * y), bv.shape()));
                    }
                }
                Op::Scale(x, c) => acc(&mut grads, *x, g.map(|v| v * *c)),
                Op::AddScalar(x) => acc(&mut grads, *x, g),
                Op::Gelu(x) => acc(&mut grads, *x, g.zip_map(val(*x), |gv, xv| gv * gelu_grad(xv))),
                Op::Silu(x) => acc(
                    &mut grads,
                    *x,
                    g.zip_map(val(*x), |gv, xv| {
                        let s = sigmoid(xv);
                        gv * (s + xv * s * (T::one() - s))
                    }),
                ),
                Op::Relu(x) => acc(
                    &mut grads,
                    *x,
                    g.zip_map(val(*x), |gv, xv| if xv > T::zero() { gv } else { T::zero() }),
                ),
                Op::Tanh(x) => acc(
                    &mut grads,
                    *x,
                    g.zip_map(&node.value, |gv, y| gv * (T::one() - y * y)),
                ),
                Op::Exp(x) => acc(&mut grads, *x, g.zip_map(&node.value, |gv, y| gv * y)),
                Op::Log(x) => acc(&mut grads, *x, g.zip_map(val(*x), |gv, xv| gv / xv)),
                Op::Sqr(x) => acc(
                    &mut grads,
                    *x,
                    g.zip_map(val(*x), |gv, xv| gv * xv * T::lit(2.0)),
                ),
                Op::MatMul(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    let (k, n) = (bv.dim(0), bv.dim(1));
                    let m = av.len() / k;
                    if nodes[a.0].needs_grad {
                        let mut ga = vec![T::zero(); m * k];
                        gemm_into(g.data(), bv.data(), &mut ga, m, n, k, false, true, T::zero());
                        acc(&mut grads, *a, Tensor::from_vec(av.shape(), ga));
                    }
                    if nodes[b.0].needs_grad {
                        let mut gb = vec![T::zero(); k * n];
                        gemm_into(av.data(), g.data(), &mut gb, k, m, n, true, false, T::zero());
                        acc(&mut grads, *b, Tensor::from_vec(bv.shape(), gb));
                    }
                }
                Op::Bmm { a, b, ta, tb } => {
                    let (av, bv) = (val(*a), val(*b));
                    let batch = av.dim(0);
                    let (m, k) = if *ta { (av.dim(2), av.dim(1)) } else { (av.dim(1), av.dim(2)) };
                    let n = if *tb { bv.dim(1) } else { bv.dim(2) };
                    let (sa, sb, sc) = (m * k, k * n, m * n);
                    if nodes[a.0].needs_grad {
                        let mut ga = vec![T::zero(); batch * sa];
                        for i in 0..batch {
                            let gc = &g.data()[i * sc..(i + 1) * sc];
                            let bm = &bv.data()[i * sb..(i + 1) * sb];
                            let out = &mut ga[i * sa..(i + 1) * sa];
                            if *ta {
                                gemm_into(bm, gc, out, k, n, m, *tb, true, T::zero());
                            } else {
                                gemm_into(gc, bm, out, m, n, k, false, !*tb, T::zero());
                            }
                        }
                        acc(&mut grads, *a, Tensor::from_vec(av.shape(), ga));
                    }
                    if nodes[b.0].needs_grad {
                        let mut gb = vec![T::zero(); batch * sb];
                        for i in 0..batch {
                            let gc = &g.data()[i * sc..(i + 1) * sc];
                            let am = &av.data()[i * sa..(i + 1) * sa];
                            let out = &mut gb[i * sb..(i + 1) * sb];
                            if *tb {
                                gemm_into(gc, am, out, n, m, k, true, *ta, T::zero());
                            } else {
                                gemm_into(am, gc, out, k, m, n, !*ta, false, T::zero());
                            }
                        }
                        acc(&mut grads, *b, Tensor::from_vec(bv.shape(), gb));
                    }
                }
                Op::Reshape(x) => acc(&mut grads, *x, g.reshape(val(*x).shape())),
                Op::Permute(x, perm) => acc(&mut grads, *x, permute(&g, &inverse_perm(perm))),
                Op::Concat(parts, axis) => {
                    let mut start = 0;
                    for p in parts {
                        let len = val(*p).dim(*axis);
                        if nodes[p.0].needs_grad {
                            acc(&mut grads, *p, narrow(&g, *axis, start, len));
                        }
                        start += len;
                    }
                }
                Op::Narrow(x, axis, start) => {
                    let xs = val(*x).shape();
                    let (outer, alen, inner) = split_axis(xs, *axis);
                    let len = g.dim(*axis);
                    let mut full = vec![T::zero(); numel(xs)];
                    for o in 0..outer {
                        let dst = o * alen * inner + start * inner;
                        let src = o * len * inner;
                        full[dst..dst + len * inner]
                            .copy_from_slice(&g.data()[src..src + len * inner]);
                    }
                    acc(&mut grads, *x, Tensor::from_vec(xs, full));
                }
                Op::Softmax(x) => {
                    let y = &node.value;
                    let d = *y.shape().last().unwrap();
                    let mut gx = Vec::with_capacity(y.len());
                    for (yr, gr) in y.data().chunks(d).zip(g.data().chunks(d)) {
                        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        gx.extend(yr.iter().zip(gr).map(|(&a, &b)| a * (b - dot)));
                    }
                    acc(&mut grads, *x, Tensor::from_vec(y.shape(), gx));
                }
                Op::LogSoftmax(x) => {
                    let y = &node.value;
                    let d = *y.shape().last().unwrap();
                    let mut gx = Vec::with_capacity(y.len());
                    for (yr, gr) in y.data().chunks(d).zip(g.data().chunks(d)) {
                        let s: T = gr.iter().copied().sum();
                        gx.extend(yr.iter().zip(gr).map(|(&a, &b)| b - a.exp() * s));
                    }
                    acc(&mut grads, *x, Tensor::from_vec(y.shape(), gx));
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    rstd,
                } => {
                    let gv = val(*gamma);
                    let d = gv.len();
                    let dn = T::lit(d as f64);
                    let mut dgamma = vec![T::zero(); d];
                    let mut dbeta = vec![T::zero(); d];
                    let mut dx = Vec::with_capacity(g.len());
                    for (r, (gr, hr)) in g.data().chunks(d).zip(xhat.chunks(d)).enumerate() {
                        let mut mean_dh = T::zero();
                        let mut mean_dh_h = T::zero();
                        for j in 0..d {
                            dgamma[j] += gr[j] * hr[j];
                            dbeta[j] += gr[j];
                            let dh = gr[j] * gv.data()[j];
                            mean_dh += dh;
                            mean_dh_h += dh * hr[j];
                        }
                        mean_dh = mean_dh / dn;
                        mean_dh_h = mean_dh_h / dn;
                        for j in 0..d {
                            let dh = gr[j] * gv.data()[j];
                            dx.push(rstd[r] * (dh - mean_dh - hr[j] * mean_dh_h));
                        }
                    }
                    acc(&mut grads, *x, Tensor::from_vec(g.shape(), dx));
                    acc(&mut grads, *gamma, Tensor::from_vec(gv.shape(), dgamma));
                    acc(&mut grads, *beta, Tensor::from_vec(val(*beta).shape(), dbeta));
                }
                Op::SumAll(x) => {
                    let gs = g.item();
                    acc(&mut grads, *x, Tensor::full(val(*x).shape(), gs));
                }
                Op::MeanAll(x) => {
                    let xv = val(*x);
                    let gs = g.item() / T::lit(xv.len() as f64);
                    acc(&mut grads, *x, Tensor::full(xv.shape(), gs));
                }
                Op::SumAxis(x, axis) => {
                    let xs = val(*x).shape();
                    let (outer, alen, inner) = split_axis(xs, *axis);
                    let mut full = Vec::with_capacity(numel(xs));
                    for o in 0..outer {
                        let row = &g.data()[o * inner..(o + 1) * inner];
                        for _ in 0..alen {
                            full.extend_from_slice(row);
                        }
                    }
                    acc(&mut grads, *x, Tensor::from_vec(xs, full));
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                    count,
                } => {
                    let lv = val(*logits);
                    let v = lv.dim(1);
                    let mut gl = vec![T::zero(); lv.len()];
                    if *count > 0 {
                        let scale = g.item() / T::lit(*count as f64);
                        for (i, &t) in targets.iter().enumerate() {
                            if t == IGNORE_INDEX {
                                continue;
                            }
                            for j in 0..v {
                                gl[i * v + j] = probs[i * v + j] * scale;
                            }
                            gl[i * v + t] -= scale;
                        }
                    }
                    acc(&mut grads, *logits, Tensor::from_vec(lv.shape(), gl));
                }
                Op::Embedding { table, ids } => {
                    let tv = val(*table);
                    let d = tv.dim(1);
                    let mut gt = vec![T::zero(); tv.len()];
                    for (r, &id) in ids.iter().enumerate() {
                        for j in 0..d {
                            gt[id * d + j] += g.data()[r * d + j];
                        }
                    }
                    acc(&mut grads, *table, Tensor::from_vec(tv.shape(), gt));
                }
            }
        }
        let params = nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param(id) => grads[i].take().map(|g| (id, g)),
                _ => None,
            })
            .collect();
        Gradients { grads, params }
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<(ParamId, Tensor<T>)>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient w.r.t. a non-parameter leaf created with [`Graph::variable`].
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.iter().find(|(p, _)| *p == id).map(|(_, g)| g)
    }

    pub fn params(&self) -> &[(ParamId, Tensor<T>)] {
        &self.params
    }

    pub fn into_params(self) -> Vec<(ParamId, Tensor<T>)> {
        self.params
    }
}

fn sigmoid<T: Scalar>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu<T: Scalar>(x: T) -> T {
    let u = T::lit(GELU_C) * (x + T::lit(GELU_A) * x * x * x);
    T::lit(0.5) * x * (T::one() + u.tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let u = T::lit(GELU_C) * (x + T::lit(GELU_A) * x * x * x);
    let th = u.tanh();
    let du = T::lit(GELU_C) * (T::one() + T::lit(3.0 * GELU_A) * x * x);
    T::lit(0.5) * (T::one() + th) + T::lit(0.5) * x * (T::one() - th * th) * du
}

pub(crate) fn softmax_last<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let d = *x.shape().last().expect("softmax rank >= 1");
    let mut out = Vec::with_capacity(x.len());
    for row in x.data().chunks(d) {
        let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
        let start = out.len();
        let mut z = T::zero();
        for &v in row {
            let e = (v - mx).exp();
            z += e;
            out.push(e);
        }
        for o in &mut out[start..] {
            *o = *o / z;
        }
    }
    Tensor::from_vec(x.shape(), out)
}

pub(crate) fn log_softmax_last<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let d = *x.shape().last().expect("log_softmax rank >= 1");
    let mut out = Vec::with_capacity(x.len());
    for row in x.data().chunks(d) {
        let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = mx + row.iter().map(|&v| (v - mx).exp()).sum::<T>().ln();
        out.extend(row.iter().map(|&v| v - lse));
    }
    Tensor::from_vec(x.shape(), out)
}

fn sum_axis<T: Scalar>(x: &Tensor<T>, axis: usize) -> Tensor<T> {
    let (outer, alen, inner) = split_axis(x.shape(), axis);
    let mut out = vec![T::zero(); outer * inner];
    for o in 0..outer {
        for a in 0..alen {
            let src = &x.data()[(o * alen + a) * inner..(o * alen + a + 1) * inner];
            for (d, &s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                *d += s;
            }
        }
    }
    let mut shape = x.shape().to_vec();
    shape.remove(axis);
    Tensor::from_vec(&shape, out)
}
