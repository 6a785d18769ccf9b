use crate::error::{Error, Result};
use crate::nn::{Network, Param};
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimKind {
    Sgd { lr: f64 },
    /// `v ← rho·v + (1−rho)·g²`, `w ← w − lr·g/√(v + eps)`.
    RmsProp { lr: f64, rho: f64, eps: f64 },
    Adam { lr: f64, b1: f64, b2: f64, eps: f64 },
}

impl OptimKind {
    pub fn rmsprop(lr: f64) -> Self {
        OptimKind::RmsProp { lr, rho: 0.9, eps: 1e-8 }
    }

    pub fn adam(lr: f64) -> Self {
        OptimKind::Adam {
            lr,
            b1: 0.9,
            b2: 0.999,
            eps: 1e-8,
        }
    }

    /// Adam with the lower first-moment decay customary for GANs.
    pub fn adam_gan(lr: f64) -> Self {
        OptimKind::Adam {
            lr,
            b1: 0.5,
            b2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            OptimKind::Sgd { lr } | OptimKind::RmsProp { lr, .. } | OptimKind::Adam { lr, .. } => lr,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            OptimKind::Sgd { lr } => lr > 0.0,
            OptimKind::RmsProp { lr, rho, eps } => lr > 0.0 && (0.0..1.0).contains(&rho) && eps > 0.0,
            OptimKind::Adam { lr, b1, b2, eps } => {
                lr > 0.0 && (0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2) && eps > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer hyperparameters {self:?}")))
        }
    }
}

/// Optimizer state for one parameter list. Slots are created on the first
/// step and must keep their lengths afterwards.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimKind,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimKind) -> Result<Self> {
        kind.validate()?;
        Ok(Optimizer {
            kind,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        })
    }

    pub fn kind(&self) -> OptimKind {
        self.kind
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn set_lr(&mut self, new_lr: f64) -> Result<()> {
        let mut k = self.kind;
        match &mut k {
            OptimKind::Sgd { lr } | OptimKind::RmsProp { lr, .. } | OptimKind::Adam { lr, .. } => *lr = new_lr,
        }
        k.validate()?;
        self.kind = k;
        Ok(())
    }

    /// Updates `params[i]` in place from `grads[i]`.
    pub fn step_slices<T: Real>(&mut self, params: &mut [&mut [T]], grads: &[&[T]]) -> Result<()> {
        if params.len() != grads.len() || params.iter().zip(grads).any(|(p, g)| p.len() != g.len()) {
            return Err(Error::Contract("parameter and gradient lists differ in shape".into()));
        }
        if self.t == 0 {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        } else if self.m.len() != params.len() || self.m.iter().zip(params.iter()).any(|(s, p)| s.len() != p.len()) {
            return Err(Error::Contract("parameter shapes changed between optimizer steps".into()));
        }
        self.t += 1;
        let t = self.t as i32;
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            match self.kind {
                OptimKind::Sgd { lr } => {
                    for (w, &g) in p.iter_mut().zip(g.iter()) {
                        *w = T::from_f64(w.to_f64() - lr * g.to_f64());
                    }
                }
                OptimKind::RmsProp { lr, rho, eps } => {
                    // eps outside the root: gradients through a clipped
                    // critic are ~1e-6, far below a sqrt(eps) floor.
                    for ((w, &g), v) in p.iter_mut().zip(g.iter()).zip(v.iter_mut()) {
                        let g = g.to_f64();
                        *v = rho * *v + (1.0 - rho) * g * g;
                        *w = T::from_f64(w.to_f64() - lr * g / (v.sqrt() + eps));
                    }
                }
                OptimKind::Adam { lr, b1, b2, eps } => {
                    let c1 = 1.0 - b1.powi(t);
                    let c2 = 1.0 - b2.powi(t);
                    for (((w, &g), m), v) in p.iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
                        let g = g.to_f64();
                        *m = b1 * *m + (1.0 - b1) * g;
                        *v = b2 * *v + (1.0 - b2) * g * g;
                        *w = T::from_f64(w.to_f64() - lr * (*m / c1) / ((*v / c2).sqrt() + eps));
                    }
                }
            }
        }
        Ok(())
    }

    /// Applies the accumulated `grad` of every trainable parameter.
    pub fn step<T: Real>(&mut self, net: &mut Network<T>) -> Result<()> {
        let mut values: Vec<&mut [T]> = Vec::new();
        let mut grads: Vec<&[T]> = Vec::new();
        for Param {
            name,
            value,
            grad,
            trainable,
        } in net.params_mut().iter_mut()
        {
            if !*trainable {
                continue;
            }
            if !grad.all_finite() {
                return Err(Error::numeric("optimizer_step", format!("non-finite gradient for `{name}`")));
            }
            values.push(value.data_mut());
            grads.push(grad.data());
        }
        self.step_slices(&mut values, &grads)
    }
}
