//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation applied to [`Var`] handles. Calling
//! [`Var::backward`] on a scalar walks the record in reverse and returns the
//! gradient of every parameter block that took part in the computation.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::rc::Rc;

use super::params::{ParamId, ParamStore};
use super::tensor::{gemm, Tensor};

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddBias(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    MatMul(usize, usize),
    Tanh(usize),
    Sigmoid(usize),
    Exp(usize),
    Log(usize),
    Softplus(usize),
    Square(usize),
    Sum(usize),
    SumLast(usize),
    ScaleRows(usize, usize),
    Concat { inputs: Vec<usize>, axis: usize },
    Slice { input: usize, axis: usize, start: usize },
    Reshape(usize),
    SwapLast(usize),
    GatherRows { input: usize, idx: Vec<usize> },
    ScatterRows { input: usize, idx: Vec<usize> },
    SegmentSoftmax { input: usize, seg: Vec<usize>, n_seg: usize },
    LogSoftmaxRows(usize),
    Conv2d { x: usize, w: usize, b: usize },
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Operation record for one forward/backward pass.
pub struct Tape<'p> {
    store: &'p ParamStore,
    nodes: RefCell<Vec<Node>>,
    bound: RefCell<BTreeMap<ParamId, usize>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape<'t>,
    id: usize,
}

/// Parameter gradients produced by [`Var::backward`].
#[derive(Debug, Default, Clone)]
pub struct Grads(BTreeMap<ParamId, Tensor>);

impl Grads {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.0.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.0.iter().map(|(k, v)| (*k, v))
    }

    pub fn all_finite(&self) -> bool {
        self.0.values().all(Tensor::all_finite)
    }
}

impl<'p> Tape<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Self { store, nodes: RefCell::new(Vec::new()), bound: RefCell::new(BTreeMap::new()) }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    fn push(&self, value: Tensor, op: Op, needs_grad: bool) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value: Rc::new(value), op, needs_grad });
        nodes.len() - 1
    }

    fn var(&'p self, id: usize) -> Var<'p> {
        Var { tape: self, id }
    }

    /// A constant input; no gradient flows into it.
    pub fn constant(&'p self, value: Tensor) -> Var<'p> {
        let id = self.push(value, Op::Leaf, false);
        self.var(id)
    }

    /// Binds a parameter block. Repeated binds return the same node.
    pub fn param(&'p self, pid: ParamId) -> Var<'p> {
        if let Some(&id) = self.bound.borrow().get(&pid) {
            return self.var(id);
        }
        let value = self.store.get_rc(pid);
        let id = {
            let mut nodes = self.nodes.borrow_mut();
            nodes.push(Node { value, op: Op::Param(pid), needs_grad: true });
            nodes.len() - 1
        };
        self.bound.borrow_mut().insert(pid, id);
        self.var(id)
    }

    fn value(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn needs(&self, id: usize) -> bool {
        self.nodes.borrow()[id].needs_grad
    }

    fn record(&'p self, value: Tensor, op: Op, inputs: &[usize]) -> Var<'p> {
        let needs_grad = inputs.iter().any(|&i| self.needs(i));
        let id = self.push(value, op, needs_grad);
        self.var(id)
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(&'p self, vars: &[Var<'p>], axis: usize) -> Var<'p> {
        assert!(!vars.is_empty(), "concat of nothing");
        let values: Vec<_> = vars.iter().map(|v| self.value(v.id)).collect();
        let base = values[0].shape().to_vec();
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut total = 0;
        for v in &values {
            let s = v.shape();
            assert_eq!(s.len(), base.len(), "concat rank mismatch");
            for (d, (&a, &b)) in s.iter().zip(&base).enumerate() {
                assert!(d == axis || a == b, "concat shape mismatch {s:?} vs {base:?}");
            }
            total += s[axis];
        }
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in &values {
                let chunk = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let ids: Vec<usize> = vars.iter().map(|v| v.id).collect();
        self.record(Tensor::new(shape, data), Op::Concat { inputs: ids.clone(), axis }, &ids)
    }

    /// Sum of several equally shaped values.
    pub fn sum_all(&'p self, vars: &[Var<'p>]) -> Var<'p> {
        let mut acc = vars[0];
        for v in &vars[1..] {
            acc = acc.add(*v);
        }
        acc
    }

    pub fn backward(&self, root: usize) -> Grads {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[root].value.len(), 1, "backward from a non-scalar");
        let mut grads: Vec<Option<Tensor>> = (0..=root).map(|_| None).collect();
        grads[root] = Some(Tensor::new(nodes[root].value.shape().to_vec(), vec![1.0]));
        let mut out = BTreeMap::new();

        fn acc(grads: &mut [Option<Tensor>], nodes: &[Node], id: usize, g: Tensor) {
            if !nodes[id].needs_grad {
                return;
            }
            match &mut grads[id] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        }

        for id in (0..=root).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.needs_grad {
                continue;
            }
            let y = &node.value;
            let val = |i: usize| &nodes[i].value;
            match &node.op {
                Op::Leaf => {}
                Op::Param(pid) => {
                    out.insert(*pid, g);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, &nodes, *b, g.clone());
                    acc(&mut grads, &nodes, *a, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, &nodes, *b, g.map(|v| -v));
                    acc(&mut grads, &nodes, *a, g);
                }
                Op::Mul(a, b) => {
                    acc(&mut grads, &nodes, *a, g.zip_map(val(*b), |g, b| g * b));
                    acc(&mut grads, &nodes, *b, g.zip_map(val(*a), |g, a| g * a));
                }
                Op::AddBias(a, b) => {
                    let m = val(*b).len();
                    let mut gb = vec![0.0; m];
                    for (i, v) in g.data().iter().enumerate() {
                        gb[i % m] += v;
                    }
                    acc(&mut grads, &nodes, *b, Tensor::new(val(*b).shape().to_vec(), gb));
                    acc(&mut grads, &nodes, *a, g);
                }
                Op::Scale(a, c) => acc(&mut grads, &nodes, *a, g.map(|v| v * c)),
                Op::AddScalar(a) => acc(&mut grads, &nodes, *a, g),
                Op::MatMul(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    let (m, k) = (av.shape()[0], av.shape()[1]);
                    let n = bv.shape()[1];
                    if nodes[*a].needs_grad {
                        let mut ga = vec![0.0; m * k];
                        gemm(m, n, k, g.data(), false, bv.data(), true, &mut ga);
                        acc(&mut grads, &nodes, *a, Tensor::new(vec![m, k], ga));
                    }
                    if nodes[*b].needs_grad {
                        let mut gb = vec![0.0; k * n];
                        gemm(k, m, n, av.data(), true, g.data(), false, &mut gb);
                        acc(&mut grads, &nodes, *b, Tensor::new(vec![k, n], gb));
                    }
                }
                Op::Tanh(a) => acc(&mut grads, &nodes, *a, g.zip_map(y, |g, y| g * (1.0 - y * y))),
                Op::Sigmoid(a) => acc(&mut grads, &nodes, *a, g.zip_map(y, |g, y| g * y * (1.0 - y))),
                Op::Exp(a) => acc(&mut grads, &nodes, *a, g.zip_map(y, |g, y| g * y)),
                Op::Log(a) => acc(&mut grads, &nodes, *a, g.zip_map(val(*a), |g, x| g / x)),
                Op::Softplus(a) => acc(&mut grads, &nodes, *a, g.zip_map(val(*a), |g, x| g * sigmoid(x))),
                Op::Square(a) => acc(&mut grads, &nodes, *a, g.zip_map(val(*a), |g, x| 2.0 * g * x)),
                Op::Sum(a) => {
                    let gv = g.item();
                    acc(&mut grads, &nodes, *a, Tensor::full(val(*a).shape(), gv));
                }
                Op::SumLast(a) => {
                    let av = val(*a);
                    let last = *av.shape().last().unwrap();
                    let data = (0..av.len()).map(|i| g.data()[i / last]).collect();
                    acc(&mut grads, &nodes, *a, Tensor::new(av.shape().to_vec(), data));
                }
                Op::ScaleRows(a, s) => {
                    let (av, sv) = (val(*a), val(*s));
                    let w = av.row_len();
                    if nodes[*a].needs_grad {
                        let data = (0..av.len()).map(|i| g.data()[i] * sv.data()[i / w]).collect();
                        acc(&mut grads, &nodes, *a, Tensor::new(av.shape().to_vec(), data));
                    }
                    if nodes[*s].needs_grad {
                        let data = (0..sv.len())
                            .map(|r| {
                                let lo = r * w;
                                (lo..lo + w).map(|i| g.data()[i] * av.data()[i]).sum()
                            })
                            .collect();
                        acc(&mut grads, &nodes, *s, Tensor::new(sv.shape().to_vec(), data));
                    }
                }
                Op::Concat { inputs, axis } => {
                    let shape = y.shape();
                    let outer: usize = shape[..*axis].iter().product();
                    let inner: usize = shape[*axis + 1..].iter().product();
                    let total = shape[*axis] * inner;
                    let mut offset = 0;
                    for &inp in inputs {
                        let iv = val(inp);
                        let chunk = iv.shape()[*axis] * inner;
                        if nodes[inp].needs_grad {
                            let mut data = Vec::with_capacity(iv.len());
                            for o in 0..outer {
                                let lo = o * total + offset;
                                data.extend_from_slice(&g.data()[lo..lo + chunk]);
                            }
                            acc(&mut grads, &nodes, inp, Tensor::new(iv.shape().to_vec(), data));
                        }
                        offset += chunk;
                    }
                }
                Op::Slice { input, axis, start } => {
                    let iv = val(*input);
                    let ishape = iv.shape();
                    let outer: usize = ishape[..*axis].iter().product();
                    let inner: usize = ishape[*axis + 1..].iter().product();
                    let len = y.shape()[*axis];
                    let mut data = vec![0.0; iv.len()];
                    for o in 0..outer {
                        let src = o * len * inner;
                        let dst = (o * ishape[*axis] + start) * inner;
                        data[dst..dst + len * inner].copy_from_slice(&g.data()[src..src + len * inner]);
                    }
                    acc(&mut grads, &nodes, *input, Tensor::new(ishape.to_vec(), data));
                }
                Op::Reshape(a) => {
                    let shape = val(*a).shape().to_vec();
                    acc(&mut grads, &nodes, *a, g.reshaped(shape));
                }
                Op::SwapLast(a) => {
                    let shape = val(*a).shape().to_vec();
                    acc(&mut grads, &nodes, *a, swap_last(&g).reshaped(shape));
                }
                Op::GatherRows { input, idx } => {
                    let iv = val(*input);
                    let w = iv.row_len();
                    let mut data = vec![0.0; iv.len()];
                    for (r, &src) in idx.iter().enumerate() {
                        for c in 0..w {
                            data[src * w + c] += g.data()[r * w + c];
                        }
                    }
                    acc(&mut grads, &nodes, *input, Tensor::new(iv.shape().to_vec(), data));
                }
                Op::ScatterRows { input, idx } => {
                    let iv = val(*input);
                    let w = iv.row_len();
                    let mut data = Vec::with_capacity(iv.len());
                    for &dst in idx {
                        data.extend_from_slice(&g.data()[dst * w..(dst + 1) * w]);
                    }
                    acc(&mut grads, &nodes, *input, Tensor::new(iv.shape().to_vec(), data));
                }
                Op::SegmentSoftmax { input, seg, n_seg } => {
                    let mut dot = vec![0.0; *n_seg];
                    for (i, &s) in seg.iter().enumerate() {
                        dot[s] += g.data()[i] * y.data()[i];
                    }
                    let data = seg.iter().enumerate().map(|(i, &s)| y.data()[i] * (g.data()[i] - dot[s])).collect();
                    acc(&mut grads, &nodes, *input, Tensor::new(y.shape().to_vec(), data));
                }
                Op::LogSoftmaxRows(a) => {
                    let w = y.row_len();
                    let mut data = vec![0.0; y.len()];
                    for r in 0..y.rows() {
                        let lo = r * w;
                        let gsum: f64 = g.data()[lo..lo + w].iter().sum();
                        for c in lo..lo + w {
                            data[c] = g.data()[c] - y.data()[c].exp() * gsum;
                        }
                    }
                    acc(&mut grads, &nodes, *a, Tensor::new(y.shape().to_vec(), data));
                }
                Op::Conv2d { x, w, b } => {
                    let (gx, gw, gb) = conv2d_backward(val(*x), val(*w), &g);
                    if nodes[*b].needs_grad {
                        acc(&mut grads, &nodes, *b, gb);
                    }
                    if nodes[*w].needs_grad {
                        acc(&mut grads, &nodes, *w, gw);
                    }
                    if nodes[*x].needs_grad {
                        acc(&mut grads, &nodes, *x, gx);
                    }
                }
            }
        }
        Grads(out)
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

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `[.., a, b] -> [.., b, a]`
fn swap_last(t: &Tensor) -> Tensor {
    let s = t.shape();
    let r = s.len();
    let (a, b) = (s[r - 2], s[r - 1]);
    let outer = t.len() / (a * b);
    let mut data = vec![0.0; t.len()];
    for o in 0..outer {
        let base = o * a * b;
        for i in 0..a {
            for j in 0..b {
                data[base + j * a + i] = t.data()[base + i * b + j];
            }
        }
    }
    let mut shape = s.to_vec();
    shape.swap(r - 2, r - 1);
    Tensor::new(shape, data)
}

/// im2col for a stride-1, same-padded convolution of one image `[c, h, w]`.
fn im2col(img: &[f64], c: usize, h: usize, w: usize, kh: usize, kw: usize, cols: &mut [f64]) {
    let (ph, pw) = (kh / 2, kw / 2);
    let hw = h * w;
    for ci in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let out = &mut cols[row * hw..(row + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + ki as isize - ph as isize;
                    for x in 0..w {
                        let sx = x as isize + kj as isize - pw as isize;
                        out[y * w + x] = if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize {
                            img[(ci * h + sy as usize) * w + sx as usize]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], c: usize, h: usize, w: usize, kh: usize, kw: usize, img: &mut [f64]) {
    let (ph, pw) = (kh / 2, kw / 2);
    let hw = h * w;
    for ci in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let src = &cols[row * hw..(row + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + ki as isize - ph as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for x in 0..w {
                        let sx = x as isize + kj as isize - pw as isize;
                        if sx >= 0 && sx < w as isize {
                            img[(ci * h + sy as usize) * w + sx as usize] += src[y * w + x];
                        }
                    }
                }
            }
        }
    }
}

fn conv2d_forward(x: &Tensor, wt: &Tensor, b: &Tensor) -> Tensor {
    let [n, c, h, w] = x.shape()[..] else { panic!("conv2d input must be [n, c, h, w]") };
    let [o, ci, kh, kw] = wt.shape()[..] else { panic!("conv2d kernel must be [o, c, kh, kw]") };
    assert_eq!(c, ci, "conv2d channel mismatch");
    assert!(kh % 2 == 1 && kw % 2 == 1, "conv2d kernels must be odd");
    let (hw, ckk) = (h * w, c * kh * kw);
    let mut cols = vec![0.0; ckk * hw];
    let mut out = vec![0.0; n * o * hw];
    for i in 0..n {
        im2col(&x.data()[i * c * hw..(i + 1) * c * hw], c, h, w, kh, kw, &mut cols);
        let dst = &mut out[i * o * hw..(i + 1) * o * hw];
        for oc in 0..o {
            dst[oc * hw..(oc + 1) * hw].fill(b.data()[oc]);
        }
        gemm(o, ckk, hw, wt.data(), false, &cols, false, dst);
    }
    Tensor::new(vec![n, o, h, w], out)
}

fn conv2d_backward(x: &Tensor, wt: &Tensor, g: &Tensor) -> (Tensor, Tensor, Tensor) {
    let [n, c, h, w] = x.shape()[..] else { unreachable!() };
    let [o, _, kh, kw] = wt.shape()[..] else { unreachable!() };
    let (hw, ckk) = (h * w, c * kh * kw);
    let mut cols = vec![0.0; ckk * hw];
    let mut gcols = vec![0.0; ckk * hw];
    let mut gx = vec![0.0; x.len()];
    let mut gw = vec![0.0; wt.len()];
    let mut gb = vec![0.0; o];
    for i in 0..n {
        let gi = &g.data()[i * o * hw..(i + 1) * o * hw];
        for oc in 0..o {
            gb[oc] += gi[oc * hw..(oc + 1) * hw].iter().sum::<f64>();
        }
        im2col(&x.data()[i * c * hw..(i + 1) * c * hw], c, h, w, kh, kw, &mut cols);
        gemm(o, hw, ckk, gi, false, &cols, true, &mut gw);
        gcols.fill(0.0);
        gemm(ckk, o, hw, wt.data(), true, gi, false, &mut gcols);
        col2im(&gcols, c, h, w, kh, kw, &mut gx[i * c * hw..(i + 1) * c * hw]);
    }
    (Tensor::new(x.shape().to_vec(), gx), Tensor::new(wt.shape().to_vec(), gw), Tensor::new(vec![o], gb))
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape<'t> {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn backward(&self) -> Grads {
        self.tape.backward(self.id)
    }

    fn unary(self, op: Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let v = self.value().map(f);
        self.tape.record(v, op, &[self.id])
    }

    pub fn add(self, other: Var<'t>) -> Var<'t> {
        let v = self.value().zip_map(&other.value(), |a, b| a + b);
        self.tape.record(v, Op::Add(self.id, other.id), &[self.id, other.id])
    }

    pub fn sub(self, other: Var<'t>) -> Var<'t> {
        let v = self.value().zip_map(&other.value(), |a, b| a - b);
        self.tape.record(v, Op::Sub(self.id, other.id), &[self.id, other.id])
    }

    pub fn mul(self, other: Var<'t>) -> Var<'t> {
        let v = self.value().zip_map(&other.value(), |a, b| a * b);
        self.tape.record(v, Op::Mul(self.id, other.id), &[self.id, other.id])
    }

    /// Adds a bias vector along the last axis.
    pub fn add_bias(self, bias: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), bias.value());
        let m = b.len();
        assert_eq!(*a.shape().last().unwrap(), m, "bias width mismatch");
        let data = a.data().iter().enumerate().map(|(i, v)| v + b.data()[i % m]).collect();
        self.tape.record(Tensor::new(a.shape().to_vec(), data), Op::AddBias(self.id, bias.id), &[self.id, bias.id])
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        self.unary(Op::Scale(self.id, c), |v| v * c)
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        self.unary(Op::AddScalar(self.id), |v| v + c)
    }

    /// `1 - x`
    pub fn one_minus(self) -> Var<'t> {
        self.scale(-1.0).add_scalar(1.0)
    }

    pub fn matmul(self, other: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        let (m, k) = (a.shape()[0], a.shape()[1]);
        assert_eq!(b.shape()[0], k, "matmul inner dimension mismatch: {:?} x {:?}", a.shape(), b.shape());
        let n = b.shape()[1];
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, a.data(), false, b.data(), false, &mut out);
        self.tape.record(Tensor::new(vec![m, n], out), Op::MatMul(self.id, other.id), &[self.id, other.id])
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary(Op::Tanh(self.id), f64::tanh)
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(Op::Sigmoid(self.id), sigmoid)
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(Op::Exp(self.id), f64::exp)
    }

    pub fn ln(self) -> Var<'t> {
        self.unary(Op::Log(self.id), f64::ln)
    }

    /// `log(1 + e^x)`, evaluated stably.
    pub fn softplus(self) -> Var<'t> {
        self.unary(Op::Softplus(self.id), softplus)
    }

    pub fn square(self) -> Var<'t> {
        self.unary(Op::Square(self.id), |v| v * v)
    }

    pub fn sum(self) -> Var<'t> {
        let s = self.value().data().iter().sum();
        self.tape.record(Tensor::scalar(s), Op::Sum(self.id), &[self.id])
    }

    pub fn mean(self) -> Var<'t> {
        let n = self.value().len() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Sums over the last axis, dropping it.
    pub fn sum_last(self) -> Var<'t> {
        let a = self.value();
        let last = *a.shape().last().unwrap();
        let data: Vec<f64> = a.data().chunks(last).map(|c| c.iter().sum()).collect();
        let mut shape = a.shape()[..a.shape().len() - 1].to_vec();
        if shape.is_empty() {
            shape.push(1);
        }
        self.tape.record(Tensor::new(shape, data), Op::SumLast(self.id), &[self.id])
    }

    /// Multiplies every leading-axis entry `i` by `scales[i]`.
    pub fn scale_rows(self, scales: Var<'t>) -> Var<'t> {
        let (a, s) = (self.value(), scales.value());
        assert_eq!(a.rows(), s.len(), "scale_rows length mismatch");
        let w = a.row_len();
        let data = a.data().iter().enumerate().map(|(i, v)| v * s.data()[i / w]).collect();
        self.tape.record(Tensor::new(a.shape().to_vec(), data), Op::ScaleRows(self.id, scales.id), &[self.id, scales.id])
    }

    pub fn slice(self, axis: usize, start: usize, len: usize) -> Var<'t> {
        let a = self.value();
        let shape = a.shape();
        assert!(start + len <= shape[axis], "slice out of range");
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let lo = (o * shape[axis] + start) * inner;
            data.extend_from_slice(&a.data()[lo..lo + len * inner]);
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        self.tape.record(Tensor::new(out_shape, data), Op::Slice { input: self.id, axis, start }, &[self.id])
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'t> {
        let v = (*self.value()).clone().reshaped(shape.to_vec());
        self.tape.record(v, Op::Reshape(self.id), &[self.id])
    }

    /// Swaps the two trailing axes.
    pub fn swap_last(self) -> Var<'t> {
        let v = swap_last(&self.value());
        self.tape.record(v, Op::SwapLast(self.id), &[self.id])
    }

    /// Selects leading-axis entries; indices may repeat.
    pub fn gather_rows(self, idx: &[usize]) -> Var<'t> {
        let a = self.value();
        let w = a.row_len();
        let mut data = Vec::with_capacity(idx.len() * w);
        for &i in idx {
            data.extend_from_slice(&a.data()[i * w..(i + 1) * w]);
        }
        let mut shape = a.shape().to_vec();
        shape[0] = idx.len();
        self.tape.record(Tensor::new(shape, data), Op::GatherRows { input: self.id, idx: idx.to_vec() }, &[self.id])
    }

    /// `out[idx[i]] += self[i]` into `n_out` zero-initialised rows.
    pub fn scatter_rows(self, idx: &[usize], n_out: usize) -> Var<'t> {
        let a = self.value();
        assert_eq!(a.rows(), idx.len(), "scatter index length mismatch");
        let w = if idx.is_empty() { a.shape()[1..].iter().product() } else { a.row_len() };
        let mut data = vec![0.0; n_out * w];
        for (r, &dst) in idx.iter().enumerate() {
            for c in 0..w {
                data[dst * w + c] += a.data()[r * w + c];
            }
        }
        let mut shape = a.shape().to_vec();
        shape[0] = n_out;
        self.tape.record(Tensor::new(shape, data), Op::ScatterRows { input: self.id, idx: idx.to_vec() }, &[self.id])
    }

    /// Softmax of a flat vector within groups: entry `i` belongs to group `seg[i]`.
    pub fn segment_softmax(self, seg: &[usize], n_seg: usize) -> Var<'t> {
        let a = self.value();
        assert_eq!(a.len(), seg.len(), "segment index length mismatch");
        let mut max = vec![f64::NEG_INFINITY; n_seg];
        for (&v, &s) in a.data().iter().zip(seg) {
            max[s] = max[s].max(v);
        }
        let e: Vec<f64> = a.data().iter().zip(seg).map(|(&v, &s)| (v - max[s]).exp()).collect();
        let mut tot = vec![0.0; n_seg];
        for (&v, &s) in e.iter().zip(seg) {
            tot[s] += v;
        }
        let data = e.iter().zip(seg).map(|(&v, &s)| v / tot[s]).collect();
        self.tape.record(
            Tensor::new(a.shape().to_vec(), data),
            Op::SegmentSoftmax { input: self.id, seg: seg.to_vec(), n_seg },
            &[self.id],
        )
    }

    /// Row-wise log-softmax of a `[n, m]` matrix.
    pub fn log_softmax_rows(self) -> Var<'t> {
        let a = self.value();
        let w = a.row_len();
        let mut data = Vec::with_capacity(a.len());
        for r in 0..a.rows() {
            let row = &a.data()[r * w..(r + 1) * w];
            let lse = crate::selector::log_sum_exp(row);
            data.extend(row.iter().map(|v| v - lse));
        }
        self.tape.record(Tensor::new(a.shape().to_vec(), data), Op::LogSoftmaxRows(self.id), &[self.id])
    }

    /// Stride-1, zero-padded "same" convolution. `self` is `[n, c, h, w]`,
    /// `kernel` is `[o, c, kh, kw]` and `bias` is `[o]`.
    pub fn conv2d(self, kernel: Var<'t>, bias: Var<'t>) -> Var<'t> {
        let v = conv2d_forward(&self.value(), &kernel.value(), &bias.value());
        self.tape.record(v, Op::Conv2d { x: self.id, w: kernel.id, b: bias.id }, &[self.id, kernel.id, bias.id])
    }
}
