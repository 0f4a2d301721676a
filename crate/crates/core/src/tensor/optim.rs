use super::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub l2: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub l2: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, beta1: f64, l2: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2: 0.999,
            eps: 1e-8,
            l2,
        }
    }
}

/// SGD with momentum and coupled L2 on weights:
/// `v ← m·v + (g + d·θ)`, `θ ← θ − lr·v`. Gradients are left untouched.
pub fn sgd_momentum_step(store: &mut ParamStore, cfg: SgdConfig) {
    let ParamStore { params, grads, slots, .. } = store;
    for id in params.ids().collect::<Vec<_>>() {
        let decay = if params.decays(id) { cfg.l2 } else { 0.0 };
        let velocity = slots[id.index()].first.data_mut();
        let g = grads.get(id).data();
        let theta = params.get_mut(id).data_mut();
        for ((v, t), g) in velocity.iter_mut().zip(theta.iter_mut()).zip(g) {
            *v = cfg.momentum * *v + (g + decay * *t);
            *t -= cfg.lr * *v;
        }
    }
}

/// Adam with bias correction; the L2 term is added to the gradient before
/// the moment updates and applies to weights only.
pub fn adam_step(store: &mut ParamStore, cfg: AdamConfig) {
    store.adam_steps += 1;
    let step = store.adam_steps as i32;
    let c1 = 1.0 - cfg.beta1.powi(step);
    let c2 = 1.0 - cfg.beta2.powi(step);
    let ParamStore { params, grads, slots, .. } = store;
    for id in params.ids().collect::<Vec<_>>() {
        let decay = if params.decays(id) { cfg.l2 } else { 0.0 };
        let slot = &mut slots[id.index()];
        let g = grads.get(id).data();
        let theta = params.get_mut(id).data_mut();
        for (((m, v), t), g) in slot
            .first
            .data_mut()
            .iter_mut()
            .zip(slot.second.data_mut().iter_mut())
            .zip(theta.iter_mut())
            .zip(g)
        {
            let g = g + decay * *t;
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            *t -= cfg.lr * (*m / c1) / ((*v / c2).sqrt() + cfg.eps);
        }
    }
}
