//! Reverse-mode automatic differentiation over [`Tensor5`] values.
//!
//! A [`Tape`] records every operation whose inputs require a gradient, in
//! creation order, so parents always precede children. [`Tape::backward`]
//! walks the record once in reverse, accumulating gradients, then clears it.
//!
//! Values are computed eagerly; a tape built with [`Tape::no_grad`] records
//! nothing and is used for inference and for inverse passes.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::conv::{self, ConvSpec};
use crate::error::{Error, Result};
use crate::tensor::{Shape5, Tensor5};

/// Stable identity of a trainable parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(u64);

impl ParamId {
    fn fresh() -> Self {
        static NEXT: AtomicU64 = AtomicU64::new(1);
        ParamId(NEXT.fetch_add(1, Ordering::Relaxed))
    }
}

/// A named trainable tensor.
#[derive(Clone, Debug)]
pub struct Param {
    id: ParamId,
    pub name: String,
    pub value: Tensor5,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Tensor5) -> Self {
        Param {
            id: ParamId::fresh(),
            name: name.into(),
            value,
        }
    }

    pub fn id(&self) -> ParamId {
        self.id
    }
}

/// Gradient rule: receives the upstream gradient and which parents need a
/// gradient; returns one entry per parent.
type BackwardFn = Box<dyn Fn(&Tensor5, &[bool]) -> Vec<Option<Tensor5>>>;

struct Node {
    parents: Vec<Option<usize>>,
    backward: Option<BackwardFn>,
    param: Option<ParamId>,
}

pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    grad_enabled: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            grad_enabled: true,
        }
    }

    /// A tape that never records; every [`Var`] on it is a constant.
    pub fn no_grad() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            grad_enabled: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn constant(&self, value: Tensor5) -> Var<'_> {
        Var {
            tape: self,
            id: None,
            value: Rc::new(value),
        }
    }

    /// Leaf input; when `requires_grad`, its gradient is reported by
    /// [`Gradients::wrt`].
    pub fn leaf(&self, value: Tensor5, requires_grad: bool) -> Var<'_> {
        if requires_grad {
            self.push_leaf(value, None)
        } else {
            self.constant(value)
        }
    }

    pub fn param(&self, p: &Param) -> Var<'_> {
        self.push_leaf(p.value.clone(), Some(p.id))
    }

    fn push_leaf(&self, value: Tensor5, param: Option<ParamId>) -> Var<'_> {
        if !self.grad_enabled {
            return self.constant(value);
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            parents: Vec::new(),
            backward: None,
            param,
        });
        Var {
            tape: self,
            id: Some(nodes.len() - 1),
            value: Rc::new(value),
        }
    }

    /// Record an operation. The node is only stored when some parent
    /// requires a gradient.
    pub fn record<'t>(
        &'t self,
        value: Tensor5,
        parents: &[&Var<'t>],
        backward: impl Fn(&Tensor5, &[bool]) -> Vec<Option<Tensor5>> + 'static,
    ) -> Var<'t> {
        let tracked = self.grad_enabled && parents.iter().any(|p| p.id.is_some());
        if !tracked {
            return self.constant(value);
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            parents: parents.iter().map(|p| p.id).collect(),
            backward: Some(Box::new(backward)),
            param: None,
        });
        Var {
            tape: self,
            id: Some(nodes.len() - 1),
            value: Rc::new(value),
        }
    }

    /// Propagate `d loss / d node` to every recorded leaf, then clear the tape.
    pub fn backward(&self, loss: &Var<'_>) -> Result<Gradients> {
        if loss.value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {}",
                loss.shape()
            )));
        }
        let root = loss
            .id
            .ok_or_else(|| Error::Contract("loss does not depend on any recorded leaf".into()))?;
        let nodes = std::mem::take(&mut *self.nodes.borrow_mut());
        let mut grads: Vec<Option<Tensor5>> = Vec::with_capacity(root + 1);
        grads.resize_with(root + 1, || None);
        grads[root] = Some(Tensor5::ones(loss.shape()));
        let mut out = Gradients::default();
        for (id, node) in nodes.into_iter().enumerate().take(root + 1).rev() {
            let Some(g) = grads[id].take() else { continue };
            match node.backward {
                None => {
                    if let Some(pid) = node.param {
                        match out.params.get_mut(&pid) {
                            Some(acc) => acc.add_assign(&g)?,
                            None => {
                                out.params.insert(pid, g.clone());
                            }
                        }
                    }
                    out.nodes.insert(id, g);
                }
                Some(f) => {
                    let needs: Vec<bool> = node.parents.iter().map(Option::is_some).collect();
                    let pgrads = f(&g, &needs);
                    debug_assert_eq!(pgrads.len(), node.parents.len());
                    for (parent, pg) in node.parents.iter().zip(pgrads) {
                        if let (Some(pid), Some(pg)) = (parent, pg) {
                            match &mut grads[*pid] {
                                Some(acc) => acc.add_assign(&pg)?,
                                slot => *slot = Some(pg),
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Gradients of one backward pass, keyed by leaf.
#[derive(Default, Debug)]
pub struct Gradients {
    nodes: HashMap<usize, Tensor5>,
    params: HashMap<ParamId, Tensor5>,
}

impl Gradients {
    pub fn wrt(&self, v: &Var<'_>) -> Option<&Tensor5> {
        v.id.and_then(|id| self.nodes.get(&id))
    }

    /// Summed over every use of the parameter on the tape.
    pub fn param(&self, id: ParamId) -> Option<&Tensor5> {
        self.params.get(&id)
    }
}

/// A tensor value bound to a tape.
#[derive(Clone)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: Option<usize>,
    value: Rc<Tensor5>,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.value.shape())
            .finish()
    }
}

fn unbroadcast(g: &Tensor5, target: Shape5) -> Tensor5 {
    if g.shape() == target {
        return g.clone();
    }
    // only the batch axis broadcasts
    let per = target.numel();
    let mut out = vec![0.0; per];
    for chunk in g.data().chunks_exact(per) {
        for (o, v) in out.iter_mut().zip(chunk) {
            *o += v;
        }
    }
    Tensor5::from_vec(target, out).expect("unbroadcast shape")
}

fn broadcast_shape(a: Shape5, b: Shape5, op: &'static str) -> Result<Shape5> {
    if a == b {
        return Ok(a);
    }
    if a.0[1..] == b.0[1..] && (a.batch() == 1 || b.batch() == 1) {
        return Ok(a.with(0, a.batch().max(b.batch())));
    }
    Err(Error::Shape { op, lhs: a, rhs: b })
}

fn expand(t: &Tensor5, shape: Shape5) -> Rc<Tensor5> {
    if t.shape() == shape {
        return Rc::new(t.clone());
    }
    let reps = shape.batch();
    let mut data = Vec::with_capacity(shape.numel());
    for _ in 0..reps {
        data.extend_from_slice(t.data());
    }
    Rc::new(Tensor5::from_vec(shape, data).expect("expand shape"))
}

/// Iterate `(flat index, channel)` pairs of a shape.
fn channel_of(shape: Shape5) -> impl Fn(usize) -> usize {
    let inner = shape.time() * shape.height() * shape.width();
    let c = shape.channels();
    move |i| (i / inner) % c
}

impl<'t> Var<'t> {
    pub fn value(&self) -> &Tensor5 {
        &self.value
    }

    pub fn shape(&self) -> Shape5 {
        self.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.id.is_some()
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    /// Detach from the tape.
    pub fn detach(&self) -> Var<'t> {
        self.tape.constant((*self.value).clone())
    }

    /// Scalar value of a single-element variable.
    pub fn item(&self) -> f64 {
        self.value.data()[0]
    }

    fn unary(&self, f: impl Fn(f64) -> f64, df: impl Fn(f64, f64) -> f64 + 'static) -> Var<'t> {
        let x = Rc::clone(&self.value);
        let y = Rc::new(x.map(f));
        let yb = Rc::clone(&y);
        self.tape.record((*y).clone(), &[self], move |g, _| {
            let data = g
                .data()
                .iter()
                .zip(x.data().iter().zip(yb.data()))
                .map(|(g, (&x, &y))| g * df(x, y))
                .collect();
            vec![Some(
                Tensor5::from_vec(g.shape(), data).expect("unary grad"),
            )]
        })
    }

    fn binary(
        &self,
        other: &Var<'t>,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
        dfa: impl Fn(f64, f64) -> f64 + 'static,
        dfb: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Result<Var<'t>> {
        let shape = broadcast_shape(self.shape(), other.shape(), op)?;
        let a = expand(&self.value, shape);
        let b = expand(&other.value, shape);
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Tensor5::from_vec(shape, data)?;
        let (sa, sb) = (self.shape(), other.shape());
        Ok(self.tape.record(out, &[self, other], move |g, needs| {
            let grad = |d: &dyn Fn(f64, f64) -> f64, target: Shape5| {
                let data = g
                    .data()
                    .iter()
                    .zip(a.data().iter().zip(b.data()))
                    .map(|(g, (&x, &y))| g * d(x, y))
                    .collect();
                unbroadcast(
                    &Tensor5::from_vec(g.shape(), data).expect("binary grad"),
                    target,
                )
            };
            vec![
                needs[0].then(|| grad(&dfa, sa)),
                needs[1].then(|| grad(&dfb, sb)),
            ]
        }))
    }

    pub fn add(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", |a, b| a + b, |_, _| 1.0, |_, _| 1.0)
    }

    pub fn sub(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", |a, b| a - b, |_, _| 1.0, |_, _| -1.0)
    }

    pub fn mul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "mul", |a, b| a * b, |_, b| b, |a, _| a)
    }

    pub fn div(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let out = self.binary(
            other,
            "div",
            |a, b| a / b,
            |_, b| 1.0 / b,
            |a, b| -a / (b * b),
        )?;
        out.value.check_finite("div")?;
        Ok(out)
    }

    pub fn add_scalar(&self, k: f64) -> Var<'t> {
        self.unary(move |x| x + k, |_, _| 1.0)
    }

    pub fn mul_scalar(&self, k: f64) -> Var<'t> {
        self.unary(move |x| x * k, move |_, _| k)
    }

    pub fn neg(&self) -> Var<'t> {
        self.mul_scalar(-1.0)
    }

    pub fn exp(&self) -> Result<Var<'t>> {
        let out = self.unary(f64::exp, |_, y| y);
        out.value.check_finite("exp")?;
        Ok(out)
    }

    pub fn ln(&self) -> Result<Var<'t>> {
        let out = self.unary(f64::ln, |x, _| 1.0 / x);
        out.value.check_finite("log")?;
        Ok(out)
    }

    pub fn tanh(&self) -> Var<'t> {
        self.unary(f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn sigmoid(&self) -> Var<'t> {
        self.unary(|x| 1.0 / (1.0 + (-x).exp()), |_, y| y * (1.0 - y))
    }

    pub fn relu(&self) -> Var<'t> {
        self.unary(|x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn leaky_relu(&self, slope: f64) -> Var<'t> {
        self.unary(
            move |x| if x > 0.0 { x } else { slope * x },
            move |x, _| if x > 0.0 { 1.0 } else { slope },
        )
    }

    pub fn abs(&self) -> Var<'t> {
        self.unary(f64::abs, |x, _| x.signum() * (x != 0.0) as u8 as f64)
    }

    pub fn square(&self) -> Var<'t> {
        self.unary(|x| x * x, |x, _| 2.0 * x)
    }

    /// `x^p` for positive `x`.
    pub fn powf(&self, p: f64) -> Result<Var<'t>> {
        let out = self.unary(move |x| x.powf(p), move |x, _| p * x.powf(p - 1.0));
        out.value.check_finite("powf")?;
        Ok(out)
    }

    /// `max(x, lo)`; gradient flows only where `x > lo`.
    pub fn clamp_min(&self, lo: f64) -> Var<'t> {
        self.unary(
            move |x| x.max(lo),
            move |x, _| if x > lo { 1.0 } else { 0.0 },
        )
    }

    fn channel_param_check(&self, p: &Var<'t>, op: &'static str) -> Result<()> {
        let ps = p.shape();
        if ps != Shape5::new(1, self.shape().channels(), 1, 1, 1) {
            return Err(Error::Shape {
                op,
                lhs: self.shape(),
                rhs: ps,
            });
        }
        Ok(())
    }

    /// Add a per-channel vector of shape `(1, C, 1, 1, 1)`.
    pub fn add_channel(&self, bias: &Var<'t>) -> Result<Var<'t>> {
        self.channel_param_check(bias, "add_channel")?;
        let shape = self.shape();
        let ch = channel_of(shape);
        let b = Rc::clone(&bias.value);
        let data = self
            .value
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + b.data()[ch(i)])
            .collect();
        let bshape = bias.shape();
        Ok(self.tape.record(
            Tensor5::from_vec(shape, data)?,
            &[self, bias],
            move |g, needs| {
                let gb = needs[1].then(|| {
                    let ch = channel_of(shape);
                    let mut acc = vec![0.0; bshape.channels()];
                    for (i, v) in g.data().iter().enumerate() {
                        acc[ch(i)] += v;
                    }
                    Tensor5::from_vec(bshape, acc).expect("channel grad")
                });
                vec![needs[0].then(|| g.clone()), gb]
            },
        ))
    }

    /// Multiply by a per-channel vector of shape `(1, C, 1, 1, 1)`.
    pub fn mul_channel(&self, scale: &Var<'t>) -> Result<Var<'t>> {
        self.channel_param_check(scale, "mul_channel")?;
        let shape = self.shape();
        let ch = channel_of(shape);
        let s = Rc::clone(&scale.value);
        let x = Rc::clone(&self.value);
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v * s.data()[ch(i)])
            .collect();
        let sshape = scale.shape();
        Ok(self.tape.record(
            Tensor5::from_vec(shape, data)?,
            &[self, scale],
            move |g, needs| {
                let ch = channel_of(shape);
                let gx = needs[0].then(|| {
                    let d = g
                        .data()
                        .iter()
                        .enumerate()
                        .map(|(i, v)| v * s.data()[ch(i)])
                        .collect();
                    Tensor5::from_vec(shape, d).expect("channel grad")
                });
                let gs = needs[1].then(|| {
                    let mut acc = vec![0.0; sshape.channels()];
                    for (i, (gv, xv)) in g.data().iter().zip(x.data()).enumerate() {
                        acc[ch(i)] += gv * xv;
                    }
                    Tensor5::from_vec(sshape, acc).expect("channel grad")
                });
                vec![gx, gs]
            },
        ))
    }

    /// Copy of `start..start + len` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Var<'t>> {
        let out = self.value.narrow(axis, start, len)?;
        let full = self.shape();
        Ok(self.tape.record(out, &[self], move |g, _| {
            let d = full.0;
            let outer: usize = d[..axis].iter().product();
            let inner: usize = d[axis + 1..].iter().product();
            let mut gx = vec![0.0; full.numel()];
            for (o, src) in g.data().chunks_exact(len * inner).enumerate() {
                let base = o * d[axis] * inner + start * inner;
                gx[base..base + len * inner].copy_from_slice(src);
            }
            debug_assert_eq!(outer * len * inner, g.numel());
            vec![Some(Tensor5::from_vec(full, gx).expect("narrow grad"))]
        }))
    }

    pub fn cat(parts: &[&Var<'t>], axis: usize) -> Result<Var<'t>> {
        let first = parts.first().ok_or_else(|| Error::InvalidShape {
            op: "cat",
            detail: "no inputs".into(),
        })?;
        let values: Vec<&Tensor5> = parts.iter().map(|p| p.value()).collect();
        let out = Tensor5::cat(&values, axis)?;
        let lens: Vec<usize> = parts.iter().map(|p| p.shape().0[axis]).collect();
        Ok(first.tape.record(out, parts, move |g, needs| {
            let mut start = 0;
            lens.iter()
                .zip(needs)
                .map(|(&len, &need)| {
                    let piece = need.then(|| g.narrow(axis, start, len).expect("cat grad"));
                    start += len;
                    piece
                })
                .collect()
        }))
    }

    pub fn sum(&self) -> Var<'t> {
        let shape = self.shape();
        let out = Tensor5::full([1, 1, 1, 1, 1], self.value.sum());
        self.tape.record(out, &[self], move |g, _| {
            vec![Some(Tensor5::full(shape, g.data()[0]))]
        })
    }

    pub fn mean(&self) -> Var<'t> {
        let n = self.value.numel() as f64;
        self.sum().mul_scalar(1.0 / n)
    }

    /// Sum over every axis flagged in `axes`, keeping them as length one.
    pub fn sum_axes(&self, axes: [bool; 5]) -> Var<'t> {
        let shape = self.shape();
        let mut od = shape.0;
        for (d, &r) in od.iter_mut().zip(&axes) {
            if r {
                *d = 1;
            }
        }
        let oshape = Shape5(od);
        let map = reduce_index(shape, oshape);
        let mut out = vec![0.0; oshape.numel()];
        for (i, v) in self.value.data().iter().enumerate() {
            out[map(i)] += v;
        }
        self.tape.record(
            Tensor5::from_vec(oshape, out).expect("sum_axes"),
            &[self],
            move |g, _| {
                let map = reduce_index(shape, oshape);
                let d = (0..shape.numel()).map(|i| g.data()[map(i)]).collect();
                vec![Some(Tensor5::from_vec(shape, d).expect("sum_axes grad"))]
            },
        )
    }

    pub fn mean_axes(&self, axes: [bool; 5]) -> Var<'t> {
        let shape = self.shape();
        let count: usize = (0..5).filter(|&a| axes[a]).map(|a| shape.0[a]).product();
        self.sum_axes(axes).mul_scalar(1.0 / count as f64)
    }

    /// Per-sample sum: reduce every axis except the batch.
    pub fn sum_per_sample(&self) -> Var<'t> {
        self.sum_axes([false, true, true, true, true])
    }

    /// Maximum along one axis (kept with length one). Ties route the
    /// gradient to the lowest index.
    pub fn max_axis(&self, axis: usize) -> Var<'t> {
        let shape = self.shape();
        let oshape = shape.with(axis, 1);
        let map = reduce_index(shape, oshape);
        let mut best = vec![f64::NEG_INFINITY; oshape.numel()];
        let mut arg = vec![usize::MAX; oshape.numel()];
        for (i, &v) in self.value.data().iter().enumerate() {
            let o = map(i);
            // strictly greater keeps the first (lowest flat index) maximum
            if v > best[o] || arg[o] == usize::MAX {
                best[o] = v;
                arg[o] = i;
            }
        }
        self.tape.record(
            Tensor5::from_vec(oshape, best).expect("max_axis"),
            &[self],
            move |g, _| {
                let mut gx = vec![0.0; shape.numel()];
                for (o, &i) in arg.iter().enumerate() {
                    gx[i] += g.data()[o];
                }
                vec![Some(Tensor5::from_vec(shape, gx).expect("max grad"))]
            },
        )
    }

    /// Valid 3-D cross-correlation with zero padding; `weight` is
    /// `(out_ch, in_ch, kt, kh, kw)`.
    pub fn conv3d(&self, weight: &Var<'t>, spec: ConvSpec) -> Result<Var<'t>> {
        let out = conv::conv3d_forward(&self.value, &weight.value, spec)?;
        let x = Rc::clone(&self.value);
        let w = Rc::clone(&weight.value);
        Ok(self.tape.record(out, &[self, weight], move |g, needs| {
            vec![
                needs[0].then(|| conv::conv3d_input_grad(g, &w, x.shape(), spec).expect("conv dx")),
                needs[1]
                    .then(|| conv::conv3d_weight_grad(g, &x, w.shape(), spec).expect("conv dw")),
            ]
        }))
    }

    /// Adjoint of [`Var::conv3d`]; `weight` is `(in_ch, out_ch, kt, kh, kw)`.
    pub fn conv_transpose3d(
        &self,
        weight: &Var<'t>,
        spec: ConvSpec,
        output_padding: [usize; 3],
    ) -> Result<Var<'t>> {
        let oshape =
            conv::conv_transpose3d_out_shape(self.shape(), weight.shape(), spec, output_padding)?;
        let out = conv::conv3d_input_grad(&self.value, &weight.value, oshape, spec)?;
        let x = Rc::clone(&self.value);
        let w = Rc::clone(&weight.value);
        Ok(self.tape.record(out, &[self, weight], move |g, needs| {
            vec![
                needs[0].then(|| conv::conv3d_forward(g, &w, spec).expect("convT dx")),
                needs[1]
                    .then(|| conv::conv3d_weight_grad(&x, g, w.shape(), spec).expect("convT dw")),
            ]
        }))
    }

    /// Output element `i` is input element `src[i]`.
    fn permute(&self, shape: Shape5, src: Vec<usize>) -> Var<'t> {
        let data = src.iter().map(|&i| self.value.data()[i]).collect();
        let ishape = self.shape();
        self.tape.record(
            Tensor5::from_vec(shape, data).expect("permute"),
            &[self],
            move |g, _| {
                let mut gx = vec![0.0; ishape.numel()];
                for (o, &i) in src.iter().enumerate() {
                    gx[i] = g.data()[o];
                }
                vec![Some(Tensor5::from_vec(ishape, gx).expect("permute grad"))]
            },
        )
    }

    /// Space-to-depth on the spatial axes: `(N, C, T, H, W)` to
    /// `(N, 4C, T, H/2, W/2)`, output channel `4c + 2dy + dx`.
    pub fn squeeze2x2(&self) -> Result<Var<'t>> {
        let s = self.shape();
        let [n, c, t, h, w] = s.0;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::InvalidShape {
                op: "squeeze2x2",
                detail: format!("spatial dims of {s} must be even"),
            });
        }
        let out = Shape5::new(n, 4 * c, t, h / 2, w / 2);
        let src = squeeze_sources(s);
        Ok(self.permute(out, src))
    }

    /// Inverse of [`Var::squeeze2x2`].
    pub fn unsqueeze2x2(&self) -> Result<Var<'t>> {
        let s = self.shape();
        let [n, c4, t, h, w] = s.0;
        if c4 % 4 != 0 {
            return Err(Error::InvalidShape {
                op: "unsqueeze2x2",
                detail: format!("channels of {s} must be a multiple of 4"),
            });
        }
        let out = Shape5::new(n, c4 / 4, t, 2 * h, 2 * w);
        let fwd = squeeze_sources(out);
        let mut src = vec![0; fwd.len()];
        for (o, &i) in fwd.iter().enumerate() {
            src[i] = o;
        }
        Ok(self.permute(out, src))
    }
}

fn squeeze_sources(s: Shape5) -> Vec<usize> {
    let [n, c, t, h, w] = s.0;
    let (ho, wo) = (h / 2, w / 2);
    let mut src = Vec::with_capacity(s.numel());
    for b in 0..n {
        for ch in 0..c {
            for sub in 0..4 {
                let (dy, dx) = (sub / 2, sub % 2);
                for tt in 0..t {
                    for y in 0..ho {
                        for x in 0..wo {
                            src.push(s.offset([b, ch, tt, 2 * y + dy, 2 * x + dx]));
                        }
                    }
                }
            }
        }
    }
    src
}

/// Maps a flat index of `full` to the flat index of its reduced cell.
fn reduce_index(full: Shape5, reduced: Shape5) -> impl Fn(usize) -> usize {
    let fs = full.strides();
    let rs = reduced.strides();
    let rd = reduced.0;
    move |i| {
        let mut rem = i;
        let mut o = 0;
        for ax in 0..5 {
            let idx = rem / fs[ax];
            rem %= fs[ax];
            if rd[ax] != 1 {
                o += idx * rs[ax];
            }
        }
        o
    }
}
