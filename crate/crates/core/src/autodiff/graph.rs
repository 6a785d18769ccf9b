use crate::error::{Error, Result};
use crate::tensor::{gemm, lit, Real, Tensor};

use super::conv;
use super::norm::{self, BnMode};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn validate(self) -> Result<()> {
        match self {
            Activation::LeakyRelu(s) if !(s > 0.0 && s < 1.0) => Err(Error::Config(format!(
                "leaky_relu slope must lie in (0,1), got {s}"
            ))),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pool {
    AvgPool2,
    GlobalAvg,
    NearestUpsample2,
}

enum Op<T> {
    Leaf,
    Conv2d { x: Var, w: Var, b: Var, stride: usize, pad: usize },
    ConvT { x: Var, w: Var, b: Var, stride: usize, pad: usize },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T>, train: bool },
    Act { x: Var, kind: Activation },
    Pool { x: Var, kind: Pool },
    Linear { x: Var, w: Var, b: Var },
    Reshape { x: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, s: T },
    Sum { x: Var },
    Mean { x: Var },
    Bce { pred: Var, target: Vec<T> },
    SoftmaxXent { logits: Var, labels: Vec<usize>, probs: Vec<T> },
    L2 { a: Var, b: Var },
}

struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
    op: Op<T>,
}

/// Probability clamp applied before logarithms in the BCE loss.
pub const PROB_CLAMP: f64 = 1e-7;

/// Append-only tape of tensor operations supporting reverse-mode
/// differentiation. Node ids are assigned in creation order, which is a
/// topological order by construction.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf whose gradient is tracked.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t, true)
    }

    /// Leaf treated as a constant.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t, false)
    }

    pub fn leaf(&mut self, t: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: t,
            requires_grad,
            grad: None,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a node, if any reached it.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        let node = &self.nodes[v.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape(), g.clone()).expect("grad shape"))
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, value: Tensor<T>, inputs: &[Var], op: Op<T>, name: &'static str) -> Result<Var> {
        value.check_finite(name)?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            grad: None,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let out = conv::conv2d_forward(self.value(x), self.value(w), self.value(b), stride, pad)?;
        self.push(out, &[x, w, b], Op::Conv2d { x, w, b, stride, pad }, "conv2d")
    }

    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let out = conv::conv_transpose2d_forward(self.value(x), self.value(w), self.value(b), stride, pad)?;
        self.push(out, &[x, w, b], Op::ConvT { x, w, b, stride, pad }, "conv_transpose2d")
    }

    /// Batch normalization. In train mode also returns the batch mean and
    /// biased variance so the caller can update its running statistics.
    pub fn batchnorm2d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BnMode<'_, T>,
        eps: f64,
    ) -> Result<(Var, Option<(Vec<T>, Vec<T>)>)> {
        let train = matches!(mode, BnMode::Train);
        let r = norm::forward(
            self.value(x),
            self.value(gamma).data(),
            self.value(beta).data(),
            mode,
            lit(eps),
        )?;
        let out = Tensor::new(self.value(x).shape(), r.out)?;
        let v = self.push(
            out,
            &[x, gamma, beta],
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat: r.xhat,
                inv_std: r.inv_std,
                train,
            },
            "batchnorm2d",
        )?;
        Ok((v, r.batch_stats))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        kind.validate()?;
        let slope: T = match kind {
            Activation::LeakyRelu(s) => lit(s),
            _ => T::zero(),
        };
        let out = self.value(x).map(|v| match kind {
            Activation::Relu => {
                if v > T::zero() {
                    v
                } else {
                    T::zero()
                }
            }
            Activation::LeakyRelu(_) => {
                if v > T::zero() {
                    v
                } else {
                    slope * v
                }
            }
            Activation::Tanh => v.tanh(),
            Activation::Sigmoid => sigmoid(v),
        });
        self.push(out, &[x], Op::Act { x, kind }, "activation")
    }

    pub fn pool(&mut self, x: Var, kind: Pool) -> Result<Var> {
        let xv = self.value(x);
        let (n, c, h, w) = xv.dims4("pool")?;
        let xd = xv.data();
        let out = match kind {
            Pool::AvgPool2 => {
                if h % 2 != 0 || w % 2 != 0 {
                    return Err(Error::dim("avg_pool2", format!("odd spatial dims {h}x{w}")));
                }
                let (ho, wo) = (h / 2, w / 2);
                let quarter: T = lit(0.25);
                Tensor::from_fn(&[n, c, ho, wo], |i| {
                    let ox = i % wo;
                    let oy = (i / wo) % ho;
                    let base = (i / (wo * ho)) * h * w;
                    let at = |y: usize, x: usize| xd[base + y * w + x];
                    (at(2 * oy, 2 * ox) + at(2 * oy, 2 * ox + 1) + at(2 * oy + 1, 2 * ox) + at(2 * oy + 1, 2 * ox + 1))
                        * quarter
                })
            }
            Pool::GlobalAvg => {
                let inv: T = lit(1.0 / (h * w) as f64);
                Tensor::from_fn(&[n, c], |i| xd[i * h * w..(i + 1) * h * w].iter().copied().sum::<T>() * inv)
            }
            Pool::NearestUpsample2 => {
                let (ho, wo) = (2 * h, 2 * w);
                Tensor::from_fn(&[n, c, ho, wo], |i| {
                    let ox = i % wo;
                    let oy = (i / wo) % ho;
                    let base = (i / (wo * ho)) * h * w;
                    xd[base + (oy / 2) * w + ox / 2]
                })
            }
        };
        self.push(out, &[x], Op::Pool { x, kind }, "pool")
    }

    /// `y = x·wᵀ + b` for `x: N×in`, `w: out×in`, `b: out`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let (n, fin) = match xv.shape() {
            [n, f] => (*n, *f),
            s => return Err(Error::dim("linear", format!("input must be N×in, got {s:?}"))),
        };
        let fout = match wv.shape() {
            [o, i] if *i == fin => *o,
            s => {
                return Err(Error::dim(
                    "linear",
                    format!("weight {s:?} incompatible with input features {fin} (axis 1)"),
                ))
            }
        };
        if bv.shape() != [fout] {
            return Err(Error::dim("linear", format!("bias {:?}, expected [{fout}]", bv.shape())));
        }
        let mut out = Vec::with_capacity(n * fout);
        for _ in 0..n {
            out.extend_from_slice(bv.data());
        }
        gemm(n, fin, fout, xv.data(), false, wv.data(), true, T::one(), &mut out);
        let out = Tensor::new(&[n, fout], out)?;
        self.push(out, &[x, w, b], Op::Linear { x, w, b }, "linear")
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        self.push(out, &[x], Op::Reshape { x }, "reshape")
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::dim(
                op,
                format!("{:?} vs {:?} (no implicit broadcasting)", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        Ok(())
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(av.shape(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.zip(a, b, |x, y| x + y);
        self.push(out, &[a, b], Op::Add { a, b }, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.zip(a, b, |x, y| x - y);
        self.push(out, &[a, b], Op::Sub { a, b }, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.zip(a, b, |x, y| x * y);
        self.push(out, &[a, b], Op::Mul { a, b }, "mul")
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let s: T = lit(s);
        let out = self.value(x).map(|v| v * s);
        self.push(out, &[x], Op::Scale { x, s }, "scale")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, &[x], Op::Sum { x }, "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).mean());
        self.push(out, &[x], Op::Mean { x }, "mean")
    }

    /// Mean binary cross-entropy of probabilities against 0/1 targets, with
    /// predictions clamped to `[1e-7, 1 − 1e-7]` before the logarithms.
    pub fn bce(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var> {
        let pv = self.value(pred);
        if pv.shape() != target.shape() {
            return Err(Error::dim("bce", format!("{:?} vs {:?}", pv.shape(), target.shape())));
        }
        let loss = bce_value(pv.data(), target.data());
        self.push(
            Tensor::scalar(loss),
            &[pred],
            Op::Bce {
                pred,
                target: target.data().to_vec(),
            },
            "bce",
        )
    }

    /// Mean softmax cross-entropy of `N×K` logits against class indices.
    pub fn softmax_xent(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        let (n, k) = match lv.shape() {
            [n, k] => (*n, *k),
            s => return Err(Error::dim("softmax_xent", format!("logits must be N×K, got {s:?}"))),
        };
        if labels.len() != n {
            return Err(Error::dim("softmax_xent", format!("{} labels for batch of {n}", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Label(format!("class index {bad} out of range for {k} classes")));
        }
        let probs = softmax_rows(lv.data(), k);
        let mut loss = T::zero();
        for (i, &l) in labels.iter().enumerate() {
            loss -= probs[i * k + l].max(lit(1e-30)).ln();
        }
        let loss = loss / lit(n as f64);
        self.push(
            Tensor::scalar(loss),
            &[logits],
            Op::SoftmaxXent {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            "softmax_xent",
        )
    }

    /// Mean squared difference over all elements.
    pub fn l2(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("l2", a, b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let loss = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum::<T>()
            / lit(av.numel() as f64);
        self.push(Tensor::scalar(loss), &[a, b], Op::L2 { a, b }, "l2")
    }

    /// Reverse pass from a scalar `loss`. Leaf gradients accumulate across
    /// calls until [`zero_grad`](Self::zero_grad); intermediate gradients are
    /// recomputed each call.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        for n in &mut self.nodes {
            if !matches!(n.op, Op::Leaf) {
                n.grad = None;
            }
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &mut rest[0];
            if matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let Some(g) = node.grad.take() else { continue };
            backprop(before, &node.op, &node.value, &g)?;
        }
        Ok(())
    }
}

fn sigmoid<T: Real>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

pub(crate) fn softmax_rows<T: Real>(logits: &[T], k: usize) -> Vec<T> {
    let mut out = vec![T::zero(); logits.len()];
    for (row, dst) in logits.chunks(k).zip(out.chunks_mut(k)) {
        let m = row.iter().fold(row[0], |a, &b| a.max(b));
        let mut z = T::zero();
        for (d, &v) in dst.iter_mut().zip(row) {
            *d = (v - m).exp();
            z += *d;
        }
        for d in dst.iter_mut() {
            *d = *d / z;
        }
    }
    out
}

pub(crate) fn clamp_prob<T: Real>(p: T) -> T {
    p.max(lit(PROB_CLAMP)).min(lit(1.0 - PROB_CLAMP))
}

/// Mean clamped binary cross-entropy; shared with tests and the GAN losses.
pub fn bce_value<T: Real>(pred: &[T], target: &[T]) -> T {
    let mut acc = T::zero();
    for (&p, &t) in pred.iter().zip(target) {
        let p = clamp_prob(p);
        acc -= t * p.ln() + (T::one() - t) * (T::one() - p).ln();
    }
    acc / lit(pred.len() as f64)
}

fn accumulate<T: Real>(nodes: &mut [Node<T>], v: Var, g: Vec<T>) {
    let node = &mut nodes[v.0];
    if !node.requires_grad {
        return;
    }
    match &mut node.grad {
        Some(acc) => {
            for (a, x) in acc.iter_mut().zip(g) {
                *a += x;
            }
        }
        None => node.grad = Some(g),
    }
}

fn needs<T>(nodes: &[Node<T>], v: Var) -> bool {
    nodes[v.0].requires_grad
}

fn backprop<T: Real>(nodes: &mut [Node<T>], op: &Op<T>, out: &Tensor<T>, g: &[T]) -> Result<()> {
    match op {
        Op::Leaf => {}
        Op::Conv2d { x, w, b, stride, pad } => {
            let dout = Tensor::new(out.shape(), g.to_vec())?;
            let need = [needs(nodes, *x), needs(nodes, *w), needs(nodes, *b)];
            let [dx, dw, db] =
                conv::conv2d_backward(&nodes[x.0].value, &nodes[w.0].value, &dout, *stride, *pad, need)?;
            for (v, d) in [(*x, dx), (*w, dw), (*b, db)] {
                if let Some(d) = d {
                    accumulate(nodes, v, d);
                }
            }
        }
        Op::ConvT { x, w, b, stride, pad } => {
            let dout = Tensor::new(out.shape(), g.to_vec())?;
            let need = [needs(nodes, *x), needs(nodes, *w), needs(nodes, *b)];
            let [dx, dw, db] = conv::conv_transpose2d_backward(
                &nodes[x.0].value,
                &nodes[w.0].value,
                &dout,
                *stride,
                *pad,
                need,
            )?;
            for (v, d) in [(*x, dx), (*w, dw), (*b, db)] {
                if let Some(d) = d {
                    accumulate(nodes, v, d);
                }
            }
        }
        Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            train,
        } => {
            let shape = nodes[x.0].value.dims4("batchnorm2d")?;
            let (dx, dgamma, dbeta) =
                norm::backward(shape, g, xhat, inv_std, nodes[gamma.0].value.data(), *train);
            accumulate(nodes, *x, dx);
            accumulate(nodes, *gamma, dgamma);
            accumulate(nodes, *beta, dbeta);
        }
        Op::Act { x, kind } => {
            let xd = nodes[x.0].value.data();
            let yd = out.data();
            let d: Vec<T> = match kind {
                Activation::Relu => xd
                    .iter()
                    .zip(g)
                    .map(|(&v, &gi)| if v > T::zero() { gi } else { T::zero() })
                    .collect(),
                Activation::LeakyRelu(s) => {
                    let s: T = lit(*s);
                    xd.iter().zip(g).map(|(&v, &gi)| if v > T::zero() { gi } else { s * gi }).collect()
                }
                Activation::Tanh => yd.iter().zip(g).map(|(&y, &gi)| gi * (T::one() - y * y)).collect(),
                Activation::Sigmoid => yd.iter().zip(g).map(|(&y, &gi)| gi * y * (T::one() - y)).collect(),
            };
            accumulate(nodes, *x, d);
        }
        Op::Pool { x, kind } => {
            let (n, c, h, w) = nodes[x.0].value.dims4("pool")?;
            let mut d = vec![T::zero(); n * c * h * w];
            match kind {
                Pool::AvgPool2 => {
                    let (ho, wo) = (h / 2, w / 2);
                    let quarter: T = lit(0.25);
                    for (i, &gi) in g.iter().enumerate() {
                        let ox = i % wo;
                        let oy = (i / wo) % ho;
                        let base = (i / (wo * ho)) * h * w;
                        for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                            d[base + (2 * oy + dy) * w + 2 * ox + dx] += gi * quarter;
                        }
                    }
                }
                Pool::GlobalAvg => {
                    let inv: T = lit(1.0 / (h * w) as f64);
                    for (i, &gi) in g.iter().enumerate() {
                        d[i * h * w..(i + 1) * h * w].fill(gi * inv);
                    }
                }
                Pool::NearestUpsample2 => {
                    let (ho, wo) = (2 * h, 2 * w);
                    for (i, &gi) in g.iter().enumerate() {
                        let ox = i % wo;
                        let oy = (i / wo) % ho;
                        let base = (i / (wo * ho)) * h * w;
                        d[base + (oy / 2) * w + ox / 2] += gi;
                    }
                }
            }
            accumulate(nodes, *x, d);
        }
        Op::Linear { x, w, b } => {
            let (n, fin) = (nodes[x.0].value.shape()[0], nodes[x.0].value.shape()[1]);
            let fout = out.shape()[1];
            if needs(nodes, *x) {
                let mut dx = vec![T::zero(); n * fin];
                gemm(n, fout, fin, g, false, nodes[w.0].value.data(), false, T::zero(), &mut dx);
                accumulate(nodes, *x, dx);
            }
            if needs(nodes, *w) {
                let mut dw = vec![T::zero(); fout * fin];
                gemm(fout, n, fin, g, true, nodes[x.0].value.data(), false, T::zero(), &mut dw);
                accumulate(nodes, *w, dw);
            }
            if needs(nodes, *b) {
                let mut db = vec![T::zero(); fout];
                for row in g.chunks(fout) {
                    for (a, &v) in db.iter_mut().zip(row) {
                        *a += v;
                    }
                }
                accumulate(nodes, *b, db);
            }
        }
        Op::Reshape { x } => accumulate(nodes, *x, g.to_vec()),
        Op::Add { a, b } => {
            accumulate(nodes, *a, g.to_vec());
            accumulate(nodes, *b, g.to_vec());
        }
        Op::Sub { a, b } => {
            accumulate(nodes, *a, g.to_vec());
            accumulate(nodes, *b, g.iter().map(|&v| -v).collect());
        }
        Op::Mul { a, b } => {
            let da = g.iter().zip(nodes[b.0].value.data()).map(|(&gi, &v)| gi * v).collect();
            let db = g.iter().zip(nodes[a.0].value.data()).map(|(&gi, &v)| gi * v).collect();
            accumulate(nodes, *a, da);
            accumulate(nodes, *b, db);
        }
        Op::Scale { x, s } => accumulate(nodes, *x, g.iter().map(|&v| v * *s).collect()),
        Op::Sum { x } => {
            let n = nodes[x.0].value.numel();
            accumulate(nodes, *x, vec![g[0]; n]);
        }
        Op::Mean { x } => {
            let n = nodes[x.0].value.numel();
            accumulate(nodes, *x, vec![g[0] / lit(n as f64); n]);
        }
        Op::Bce { pred, target } => {
            let pd = nodes[pred.0].value.data();
            let inv_n: T = lit(1.0 / pd.len() as f64);
            // Clamp is treated as identity for the derivative so clamped
            // predictions still receive a finite gradient.
            let d = pd
                .iter()
                .zip(target)
                .map(|(&p, &t)| {
                    let p = clamp_prob(p);
                    g[0] * inv_n * ((p - t) / (p * (T::one() - p)))
                })
                .collect();
            accumulate(nodes, *pred, d);
        }
        Op::SoftmaxXent { logits, labels, probs } => {
            let k = nodes[logits.0].value.shape()[1];
            let inv_n: T = lit(1.0 / labels.len() as f64);
            let mut d: Vec<T> = probs.iter().map(|&p| p * inv_n * g[0]).collect();
            for (i, &l) in labels.iter().enumerate() {
                d[i * k + l] -= inv_n * g[0];
            }
            accumulate(nodes, *logits, d);
        }
        Op::L2 { a, b } => {
            let (ad, bd) = (nodes[a.0].value.data(), nodes[b.0].value.data());
            let k: T = lit(2.0 / ad.len() as f64);
            let da: Vec<T> = ad.iter().zip(bd).map(|(&x, &y)| g[0] * k * (x - y)).collect();
            let db = da.iter().map(|&v| -v).collect();
            accumulate(nodes, *a, da);
            accumulate(nodes, *b, db);
        }
    }
    Ok(())
}
