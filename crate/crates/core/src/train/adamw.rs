use crate::error::{Error, Result};
use crate::model::ParameterSet;
use crate::tensor::Element;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Fold the decay into the gradient (classic L2) instead of applying it
    /// directly to the weights.
    pub coupled_l2: bool,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-2,
            coupled_l2: false,
        }
    }
}

/// First and second moment estimates, one tensor per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T: Element> {
    pub m: ParameterSet<T>,
    pub v: ParameterSet<T>,
    pub step: u64,
}

impl<T: Element> OptimizerState<T> {
    pub fn new(params: &ParameterSet<T>) -> Self {
        OptimizerState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam step with decoupled weight decay:
/// `θ ← θ − lr·m̂/(√v̂ + eps) − lr·wd·θ`.
pub fn adamw_step<T: Element>(
    params: &mut ParameterSet<T>,
    grads: &ParameterSet<T>,
    state: &mut OptimizerState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.names() != grads.names() || params.names() != state.m.names() {
        return Err(Error::invalid("parameter, gradient and optimizer layouts differ"));
    }
    for (p, g) in params.tensors().iter().zip(grads.tensors()) {
        if p.shape() != g.shape() {
            return Err(Error::Dimension {
                op: "adamw_step",
                lhs: p.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c = |x: f64| T::of(x);
    let (b1, b2) = (c(cfg.beta1), c(cfg.beta2));
    let bias1 = c(1.0 - cfg.beta1.powi(t));
    let bias2 = c(1.0 - cfg.beta2.powi(t));
    let (lr, wd, eps) = (c(cfg.lr), c(cfg.weight_decay), c(cfg.eps));
    let one = T::one();

    let slots = params.tensors_mut().iter_mut().zip(grads.tensors());
    let moments = state.m.tensors_mut().iter_mut().zip(state.v.tensors_mut().iter_mut());
    for ((p, g), (m, v)) in slots.zip(moments) {
        let lanes = p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut().iter_mut().zip(v.data_mut()));
        for ((theta, &grad), (m, v)) in lanes {
            let grad = if cfg.coupled_l2 { grad + wd * *theta } else { grad };
            *m = b1 * *m + (one - b1) * grad;
            *v = b2 * *v + (one - b2) * grad * grad;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            let decay = if cfg.coupled_l2 { T::zero() } else { lr * wd * *theta };
            *theta = *theta - lr * m_hat / (v_hat.sqrt() + eps) - decay;
        }
    }
    Ok(())
}
