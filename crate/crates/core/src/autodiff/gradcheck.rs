//! Central finite-difference gradient checking in 64-bit precision.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{Graph, Var};

/// Relative error with the `1e-8` floor used by every gradient check.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Checks the analytic gradient of `loss_fn` w.r.t. each tensor in `params`
/// against central differences with step `eps`, sampling at most
/// `max_per_tensor` coordinates of each tensor. Returns the worst relative
/// error.
pub fn grad_check_tensors<F>(
    params: &mut [Tensor<f64>],
    mut loss_fn: F,
    eps: f64,
    max_per_tensor: usize,
) -> Result<f64>
where
    F: FnMut(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    if !(1e-6..=1e-4).contains(&eps) {
        return Err(Error::Config(format!("finite-difference eps {eps} outside [1e-6, 1e-4]")));
    }
    let mut eval = |params: &[Tensor<f64>], want_grad: bool| -> Result<(f64, Vec<Option<Tensor<f64>>>)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = params.iter().map(|p| g.leaf(p.clone(), want_grad)).collect();
        let loss = loss_fn(&mut g, &vars)?;
        let value = g.value(loss).data()[0];
        if !value.is_finite() {
            return Err(Error::numeric("grad_check", "non-finite loss"));
        }
        if !want_grad {
            return Ok((value, Vec::new()));
        }
        g.backward(loss)?;
        Ok((value, vars.iter().map(|&v| g.grad(v)).collect()))
    };

    let (_, grads) = eval(params, true)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut worst = 0.0f64;
    for pi in 0..params.len() {
        let n = params[pi].numel();
        let picks: Vec<usize> = if n <= max_per_tensor {
            (0..n).collect()
        } else {
            sample(&mut rng, n, max_per_tensor).into_vec()
        };
        for idx in picks {
            let analytic = grads[pi].as_ref().map_or(0.0, |g| g.data()[idx]);
            let orig = params[pi].data()[idx];
            params[pi].data_mut()[idx] = orig + eps;
            let (plus, _) = eval(params, false)?;
            params[pi].data_mut()[idx] = orig - eps;
            let (minus, _) = eval(params, false)?;
            params[pi].data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(rel_error(analytic, numeric));
        }
    }
    Ok(worst)
}
