use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::autodiff::{grad_check_tensors, Activation, BnMode, Graph, Pool, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

use super::kind::NetKind;

/// A named tensor owned by a network. Non-trainable entries hold batchnorm
/// running statistics.
#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub trainable: bool,
}

impl<T: Real> Param<T> {
    fn new(name: String, value: Tensor<T>, trainable: bool) -> Self {
        let grad = Tensor::zeros(value.shape());
        Param {
            name,
            value,
            grad,
            trainable,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Linear { w: usize, b: usize },
    /// Reshape each sample to the given (per-sample) shape.
    Reshape(Vec<usize>),
    Flatten,
    Conv { w: usize, b: usize, stride: usize, pad: usize },
    ConvT { w: usize, b: usize, stride: usize, pad: usize },
    BatchNorm { gamma: usize, beta: usize, mean: usize, var: usize, momentum: f64, eps: f64 },
    Act(Activation),
    Pool(Pool),
    Tap(String),
}

/// Batch statistics a train-mode batchnorm layer produced.
#[derive(Clone, Debug)]
pub struct BnStats<T> {
    pub layer: usize,
    pub mean: Vec<T>,
    /// Biased batch variance.
    pub var: Vec<T>,
    pub count: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Result of running a network on a graph.
#[derive(Clone, Debug)]
pub struct Forward {
    pub output: Var,
    pub taps: BTreeMap<String, Var>,
    /// Graph leaves standing for each parameter, in parameter order.
    pub params: Vec<Var>,
}

/// Ordered layer stack with named parameters and named taps.
#[derive(Clone, Debug)]
pub struct Network<T> {
    pub(crate) kind: NetKind,
    /// Per-sample input shape used for validation.
    pub(crate) input_shape: Vec<usize>,
    /// Whether spatial input dims may differ from `input_shape`.
    pub(crate) flexible_spatial: bool,
    pub(crate) layers: Vec<Layer>,
    pub(crate) params: Vec<Param<T>>,
}

/// How to initialize weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// `N(0, 0.02)` weights, `N(1, 0.02)` batchnorm gamma.
    Dcgan,
    /// Kaiming-normal weights, `N(1, 0.02)` batchnorm gamma.
    He,
}

/// Incremental network construction with shape propagation.
pub struct NetworkBuilder<T> {
    net: Network<T>,
    shape: Vec<usize>,
    rng: ChaCha8Rng,
    init: Init,
}

impl<T: Real> NetworkBuilder<T> {
    pub fn new(kind: NetKind, input_shape: &[usize], init: Init, seed: u64) -> Self {
        NetworkBuilder {
            net: Network {
                kind,
                input_shape: input_shape.to_vec(),
                flexible_spatial: false,
                layers: Vec::new(),
                params: Vec::new(),
            },
            shape: input_shape.to_vec(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            init,
        }
    }

    /// Accept any spatial size at forward time (fully convolutional nets).
    pub fn flexible_spatial(mut self) -> Self {
        self.net.flexible_spatial = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    fn add_param(&mut self, name: String, value: Tensor<T>, trainable: bool) -> Result<usize> {
        if self.net.params.iter().any(|p| p.name == name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        self.net.params.push(Param::new(name, value, trainable));
        Ok(self.net.params.len() - 1)
    }

    fn weight(&mut self, shape: &[usize], fan_in: usize) -> Tensor<T> {
        let std = match self.init {
            Init::Dcgan => 0.02,
            Init::He => (2.0 / fan_in as f64).sqrt(),
        };
        Tensor::randn(shape, std, &mut self.rng)
    }

    fn spatial(&self, op: &'static str) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::dim(op, format!("expects C×H×W input, have {:?}", self.shape))),
        }
    }

    pub fn linear(mut self, name: &str, out: usize) -> Result<Self> {
        let fin = match self.shape[..] {
            [f] => f,
            _ => return Err(Error::dim("linear", format!("expects flat input, have {:?}", self.shape))),
        };
        let w = self.weight(&[out, fin], fin);
        let w = self.add_param(format!("{name}.weight"), w, true)?;
        let b = self.add_param(format!("{name}.bias"), Tensor::zeros(&[out]), true)?;
        self.net.layers.push(Layer::Linear { w, b });
        self.shape = vec![out];
        Ok(self)
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.shape.iter().product::<usize>() {
            return Err(Error::dim("reshape", format!("{:?} -> {shape:?}", self.shape)));
        }
        self.net.layers.push(Layer::Reshape(shape.to_vec()));
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn flatten(mut self) -> Result<Self> {
        self.net.layers.push(Layer::Flatten);
        self.shape = vec![self.shape.iter().product()];
        Ok(self)
    }

    pub fn conv(mut self, name: &str, out: usize, k: usize, stride: usize, pad: usize) -> Result<Self> {
        let (c, h, w) = self.spatial("conv2d")?;
        let g = crate::autodiff::conv::ConvGeom::new(c, h, w, k, k, stride, pad)?;
        let wt = self.weight(&[out, c, k, k], c * k * k);
        let wi = self.add_param(format!("{name}.weight"), wt, true)?;
        let bi = self.add_param(format!("{name}.bias"), Tensor::zeros(&[out]), true)?;
        self.net.layers.push(Layer::Conv { w: wi, b: bi, stride, pad });
        self.shape = vec![out, g.ho, g.wo];
        Ok(self)
    }

    pub fn conv_transpose(mut self, name: &str, out: usize, k: usize, stride: usize, pad: usize) -> Result<Self> {
        let (c, h, w) = self.spatial("conv_transpose2d")?;
        let ho = ((h - 1) * stride + k) as isize - 2 * pad as isize;
        let wo = ((w - 1) * stride + k) as isize - 2 * pad as isize;
        if ho < 1 || wo < 1 || stride == 0 {
            return Err(Error::Config(format!("transposed convolution `{name}` has empty output")));
        }
        let wt = self.weight(&[c, out, k, k], c * k * k);
        let wi = self.add_param(format!("{name}.weight"), wt, true)?;
        let bi = self.add_param(format!("{name}.bias"), Tensor::zeros(&[out]), true)?;
        self.net.layers.push(Layer::ConvT { w: wi, b: bi, stride, pad });
        self.shape = vec![out, ho as usize, wo as usize];
        Ok(self)
    }

    /// Batchnorm over the channel axis. A flat `[F]` shape is not supported;
    /// reshape to `[F, 1, 1]` first.
    pub fn batchnorm(mut self, name: &str) -> Result<Self> {
        let (c, _, _) = self.spatial("batchnorm2d")?;
        let gamma = Tensor::from_fn(&[c], |_| {
            let z: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut self.rng);
            T::from_f64(1.0 + 0.02 * z)
        });
        let gamma = self.add_param(format!("{name}.gamma"), gamma, true)?;
        let beta = self.add_param(format!("{name}.beta"), Tensor::zeros(&[c]), true)?;
        let mean = self.add_param(format!("{name}.running_mean"), Tensor::zeros(&[c]), false)?;
        let var = self.add_param(format!("{name}.running_var"), Tensor::full(&[c], T::one()), false)?;
        self.net.layers.push(Layer::BatchNorm {
            gamma,
            beta,
            mean,
            var,
            momentum: 0.1,
            eps: 1e-5,
        });
        Ok(self)
    }

    pub fn act(mut self, kind: Activation) -> Result<Self> {
        kind.validate()?;
        self.net.layers.push(Layer::Act(kind));
        Ok(self)
    }

    pub fn pool(mut self, kind: Pool) -> Result<Self> {
        let (c, h, w) = self.spatial("pool")?;
        self.shape = match kind {
            Pool::AvgPool2 => {
                if h % 2 != 0 || w % 2 != 0 {
                    return Err(Error::dim("avg_pool2", format!("odd spatial dims {h}x{w}")));
                }
                vec![c, h / 2, w / 2]
            }
            Pool::GlobalAvg => vec![c],
            Pool::NearestUpsample2 => vec![c, 2 * h, 2 * w],
        };
        self.net.layers.push(Layer::Pool(kind));
        Ok(self)
    }

    pub fn tap(mut self, name: &str) -> Result<Self> {
        if self.net.tap_names().any(|t| t == name) {
            return Err(Error::Config(format!("duplicate tap `{name}`")));
        }
        self.net.layers.push(Layer::Tap(name.to_string()));
        Ok(self)
    }

    /// Finishes the network after a one-sample forward/backward smoke test.
    pub fn build(self) -> Result<Network<T>> {
        let net = self.net;
        net.smoke_test()?;
        Ok(net)
    }
}

impl<T: Real> Network<T> {
    pub fn kind(&self) -> &NetKind {
        &self.kind
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Param<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn tap_names(&self) -> impl Iterator<Item = &str> {
        self.layers.iter().filter_map(|l| match l {
            Layer::Tap(n) => Some(n.as_str()),
            _ => None,
        })
    }

    /// Number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.value.numel()).sum()
    }

    /// SHA-256 over parameter names and values (all entries, in order),
    /// truncated to 16 hex digits.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.params {
            h.update(p.name.as_bytes());
            for v in p.value.data() {
                h.update(v.to_f64().to_le_bytes());
            }
        }
        h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
        }
    }

    /// Clamps every trainable parameter to `[-c, c]`.
    pub fn clip_params(&mut self, c: f64) {
        let (lo, hi) = (T::from_f64(-c), T::from_f64(c));
        for p in self.params.iter_mut().filter(|p| p.trainable) {
            p.value.data_mut().iter_mut().for_each(|v| *v = v.max(lo).min(hi));
        }
    }

    pub fn max_abs_trainable(&self) -> f64 {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.max_abs().to_f64())
            .fold(0.0, f64::max)
    }

    /// Copies parameter values from a network of identical structure.
    pub fn load_values_from(&mut self, other: &Network<T>) -> Result<()> {
        if self.params.len() != other.params.len()
            || self.params.iter().zip(&other.params).any(|(a, b)| a.name != b.name || a.value.shape() != b.value.shape())
        {
            return Err(Error::Contract("parameter layouts differ".into()));
        }
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            a.value = b.value.clone();
        }
        Ok(())
    }

    /// Converts every parameter to another precision.
    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            kind: self.kind.clone(),
            input_shape: self.input_shape.clone(),
            flexible_spatial: self.flexible_spatial,
            layers: self.layers.clone(),
            params: self
                .params
                .iter()
                .map(|p| Param::new(p.name.clone(), p.value.cast(), p.trainable))
                .collect(),
        }
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let ok = shape.len() == self.input_shape.len() + 1
            && if self.flexible_spatial {
                shape[1] == self.input_shape[0]
            } else {
                shape[1..] == self.input_shape[..]
            };
        if !ok {
            return Err(Error::dim(
                "forward",
                format!(
                    "input {shape:?} does not match network entry [N, {}]{}",
                    self.input_shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", "),
                    if self.flexible_spatial { " (any spatial size)" } else { "" }
                ),
            ));
        }
        Ok(())
    }

    /// Places parameter leaves on `g`; trainable ones track gradients when
    /// `track_grads` is set.
    pub fn place_params(&self, g: &mut Graph<T>, track_grads: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| g.leaf(p.value.clone(), track_grads && p.trainable))
            .collect()
    }

    /// Runs the layer stack with caller-supplied parameter leaves. Returns
    /// the batchnorm batch statistics produced in train mode.
    pub fn run_with(
        &self,
        g: &mut Graph<T>,
        input: Var,
        params: &[Var],
        mode: Mode,
        want_taps: &[&str],
    ) -> Result<(Var, BTreeMap<String, Var>, Vec<BnStats<T>>)> {
        for &t in want_taps {
            if !self.tap_names().any(|n| n == t) {
                return Err(Error::Lookup {
                    kind: "tap",
                    name: t.to_string(),
                });
            }
        }
        self.check_input(g.value(input).shape())?;
        let mut x = input;
        let mut taps = BTreeMap::new();
        let mut stats = Vec::new();
        for (li, layer) in self.layers.iter().enumerate() {
            x = match layer {
                Layer::Linear { w, b } => g.linear(x, params[*w], params[*b])?,
                Layer::Reshape(shape) => {
                    let mut s = vec![g.value(x).shape()[0]];
                    s.extend_from_slice(shape);
                    g.reshape(x, &s)?
                }
                Layer::Flatten => {
                    let n = g.value(x).shape()[0];
                    let f = g.value(x).numel() / n;
                    g.reshape(x, &[n, f])?
                }
                Layer::Conv { w, b, stride, pad } => g.conv2d(x, params[*w], params[*b], *stride, *pad)?,
                Layer::ConvT { w, b, stride, pad } => g.conv_transpose2d(x, params[*w], params[*b], *stride, *pad)?,
                Layer::BatchNorm {
                    gamma,
                    beta,
                    mean,
                    var,
                    eps,
                    ..
                } => {
                    let bn_mode = match mode {
                        Mode::Train => BnMode::Train,
                        Mode::Eval => BnMode::Eval {
                            mean: self.params[*mean].value.data(),
                            var: self.params[*var].value.data(),
                        },
                    };
                    let shape = g.value(x).shape().to_vec();
                    let (y, batch) = g.batchnorm2d(x, params[*gamma], params[*beta], bn_mode, *eps)?;
                    if let Some((mean, var)) = batch {
                        let count = shape[0] * shape[2..].iter().product::<usize>();
                        stats.push(BnStats { layer: li, mean, var, count });
                    }
                    y
                }
                Layer::Act(kind) => g.activation(x, *kind)?,
                Layer::Pool(kind) => g.pool(x, *kind)?,
                Layer::Tap(name) => {
                    if want_taps.contains(&name.as_str()) {
                        taps.insert(name.clone(), x);
                    }
                    x
                }
            };
        }
        Ok((x, taps, stats))
    }

    /// Runs the network on `g`. Train mode uses batch statistics and updates
    /// the running statistics.
    pub fn forward_on(
        &mut self,
        g: &mut Graph<T>,
        input: Var,
        mode: Mode,
        track_grads: bool,
        want_taps: &[&str],
    ) -> Result<Forward> {
        let params = self.place_params(g, track_grads);
        let (output, taps, stats) = self.run_with(g, input, &params, mode, want_taps)?;
        self.apply_running_stats(stats);
        Ok(Forward { output, taps, params })
    }

    fn apply_running_stats(&mut self, stats: Vec<BnStats<T>>) {
        for BnStats { layer: li, mean: bm, var: bv, count } in stats {
            let Layer::BatchNorm { mean, var, momentum, .. } = self.layers[li] else {
                unreachable!("stats come from batchnorm layers")
            };
            let m = T::from_f64(momentum);
            let keep = T::one() - m;
            // Running variance tracks the unbiased estimate; count >= 2 here.
            let unbias = T::from_f64(count as f64 / (count as f64 - 1.0));
            for (r, &b) in self.params[mean].value.data_mut().iter_mut().zip(&bm) {
                *r = keep * *r + m * b;
            }
            for (r, &b) in self.params[var].value.data_mut().iter_mut().zip(&bv) {
                *r = keep * *r + m * b * unbias;
            }
        }
    }

    /// Adds the graph gradients of a previous [`forward_on`](Self::forward_on)
    /// into each parameter's `grad`.
    pub fn accumulate_grads(&mut self, g: &Graph<T>, fwd: &Forward) {
        for (p, &v) in self.params.iter_mut().zip(&fwd.params) {
            if let Some(gr) = g.grad(v) {
                for (a, &b) in p.grad.data_mut().iter_mut().zip(gr.data()) {
                    *a += b;
                }
            }
        }
    }

    /// Eval-mode inference returning the output and the requested taps.
    pub fn forward(&self, input: &Tensor<T>, want_taps: &[&str]) -> Result<(Tensor<T>, BTreeMap<String, Tensor<T>>)> {
        let mut g = Graph::new();
        let x = g.constant(input.clone());
        let params = self.place_params(&mut g, false);
        let (out, taps, _) = self.run_with(&mut g, x, &params, Mode::Eval, want_taps)?;
        let taps = taps.into_iter().map(|(k, v)| (k, g.value(v).clone())).collect();
        Ok((g.value(out).clone(), taps))
    }

    /// Eval-mode inference over a large batch in fixed-size chunks.
    pub fn predict(&self, input: &Tensor<T>, chunk: usize) -> Result<Tensor<T>> {
        let n = input.shape()[0];
        let per = input.numel() / n;
        let mut out: Vec<T> = Vec::new();
        let mut out_shape = Vec::new();
        for start in (0..n).step_by(chunk.max(1)) {
            let end = (start + chunk.max(1)).min(n);
            let mut shape = input.shape().to_vec();
            shape[0] = end - start;
            let part = Tensor::new(&shape, input.data()[start * per..end * per].to_vec())?;
            let (y, _) = self.forward(&part, &[])?;
            out_shape = y.shape().to_vec();
            out.extend_from_slice(y.data());
        }
        out_shape[0] = n;
        Tensor::new(&out_shape, out)
    }

    fn smoke_test(&self) -> Result<()> {
        let mut shape = vec![1];
        shape.extend_from_slice(&self.input_shape);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut g = Graph::new();
        let x = g.constant(Tensor::randn(&shape, 0.5, &mut rng));
        let params = self.place_params(&mut g, true);
        let (y, _, _) = self.run_with(&mut g, x, &params, Mode::Eval, &[])?;
        let s = g.sum(y)?;
        g.backward(s)?;
        for (p, &v) in self.params.iter().zip(&params) {
            if let Some(gr) = g.grad(v) {
                if !gr.all_finite() {
                    return Err(Error::numeric("smoke_test", format!("non-finite gradient for `{}`", p.name)));
                }
            }
        }
        Ok(())
    }
}

impl Network<f64> {
    /// Worst relative error between analytic and central-difference
    /// gradients of `loss_fn(output)` w.r.t. the trainable parameters.
    pub fn grad_check<F>(&self, input: &Tensor<f64>, mode: Mode, mut loss_fn: F, eps: f64, max_per_tensor: usize) -> Result<f64>
    where
        F: FnMut(&mut Graph<f64>, Var) -> Result<Var>,
    {
        let trainable: Vec<usize> = (0..self.params.len()).filter(|&i| self.params[i].trainable).collect();
        let mut values: Vec<Tensor<f64>> = trainable.iter().map(|&i| self.params[i].value.clone()).collect();
        grad_check_tensors(
            &mut values,
            |g, vars| {
                let x = g.constant(input.clone());
                let mut all = Vec::with_capacity(self.params.len());
                let mut next = 0;
                for p in &self.params {
                    if p.trainable {
                        all.push(vars[next]);
                        next += 1;
                    } else {
                        all.push(g.constant(p.value.clone()));
                    }
                }
                let (y, _, _) = self.run_with(g, x, &all, mode, &[])?;
                loss_fn(g, y)
            },
            eps,
            max_per_tensor,
        )
    }
}

#[cfg(test)]
pub(crate) fn tiny_mlp(seed: u64) -> Network<f64> {
    NetworkBuilder::new(NetKind::Custom("mlp".into()), &[3], Init::He, seed)
        .linear("l1", 4)
        .and_then(|b| b.act(Activation::Tanh))
        .and_then(|b| b.linear("l2", 2))
        .and_then(|b| b.build())
        .unwrap()
}
