//! Parameter update rules: SGD with momentum and Adam, both with optional
//! L2 weight decay (decay is added to the gradient before the update, so
//! a zero gradient with zero decay leaves parameters exactly unchanged).

use crate::error::{Error, Result};
use crate::network::{NetGrads, Network};
use crate::tensor::Tensor;

/// One SGD-with-momentum update on a flat parameter slice.
///
/// `g = grad + weight_decay * param; v = momentum * v + g; param -= lr * v`
pub fn sgd_step(
    params: &mut [f64],
    grads: &[f64],
    velocity: &mut [f64],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) {
    debug_assert_eq!(params.len(), grads.len());
    debug_assert_eq!(params.len(), velocity.len());
    for i in 0..params.len() {
        let g = grads[i] + weight_decay * params[i];
        velocity[i] = momentum * velocity[i] + g;
        params[i] -= lr * velocity[i];
    }
}

/// One bias-corrected Adam update on a flat parameter slice. `step` is the
/// 1-based step count after this update.
#[allow(clippy::too_many_arguments)]
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    step: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    weight_decay: f64,
) {
    debug_assert_eq!(params.len(), grads.len());
    let bc1 = 1.0 - beta1.powi(step as i32);
    let bc2 = 1.0 - beta2.powi(step as i32);
    for i in 0..params.len() {
        let g = grads[i] + weight_decay * params[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
    }
}

/// Which update rule a group of parameters follows.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum OptimKind {
    Sgd { momentum: f64 },
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl OptimKind {
    pub fn adam_default() -> Self {
        OptimKind::Adam { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }

    pub fn sgd(momentum: f64) -> Self {
        OptimKind::Sgd { momentum }
    }
}

#[derive(Clone, Debug)]
pub(crate) enum SlotState {
    Sgd { velocity: Tensor },
    Adam { m: Tensor, v: Tensor },
}

impl SlotState {
    fn new(kind: &OptimKind, shape: &[usize]) -> SlotState {
        match kind {
            OptimKind::Sgd { .. } => SlotState::Sgd { velocity: Tensor::zeros(shape) },
            OptimKind::Adam { .. } => SlotState::Adam { m: Tensor::zeros(shape), v: Tensor::zeros(shape) },
        }
    }
}

/// Per-network optimizer: one state slot per parameter tensor, stepped in
/// lockstep. Hyperparameters are shared across slots.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimKind,
    lr: f64,
    weight_decay: f64,
    // (weights slot, bias slot) per layer; None where the layer has no params.
    slots: Vec<(Option<SlotState>, Option<SlotState>)>,
    step_count: u64,
}

impl Optimizer {
    pub fn new(kind: OptimKind, lr: f64, weight_decay: f64, net: &Network) -> Result<Optimizer> {
        if lr <= 0.0 {
            return Err(Error::invalid(format!("learning rate must be positive, got {lr}")));
        }
        if let OptimKind::Sgd { momentum } = kind {
            if !(0.0..1.0).contains(&momentum) {
                return Err(Error::invalid(format!("momentum must be in [0, 1), got {momentum}")));
            }
        }
        let slots = net
            .layers()
            .iter()
            .map(|l| {
                (
                    l.weights().map(|w| SlotState::new(&kind, w.shape())),
                    l.bias().map(|b| SlotState::new(&kind, b.shape())),
                )
            })
            .collect();
        Ok(Optimizer { kind, lr, weight_decay, slots, step_count: 0 })
    }

    pub fn kind(&self) -> OptimKind {
        self.kind
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn weight_decay(&self) -> f64 {
        self.weight_decay
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Apply one update to every parameter tensor of `net`.
    pub fn step(&mut self, net: &mut Network, grads: &NetGrads) -> Result<()> {
        if net.is_frozen() {
            return Err(Error::contract("cannot step a frozen network".to_string()));
        }
        if grads.per_layer.len() != self.slots.len() {
            return Err(Error::shape(format!(
                "gradient layout has {} layers, optimizer tracks {}",
                grads.per_layer.len(),
                self.slots.len()
            )));
        }
        self.step_count += 1;
        let step = self.step_count;
        let (kind, lr, wd) = (self.kind, self.lr, self.weight_decay);
        for (layer_idx, layer) in net.layers_mut().iter_mut().enumerate() {
            let lg = match &grads.per_layer[layer_idx] {
                Some(lg) => lg,
                None => continue,
            };
            let (wslot, bslot) = &mut self.slots[layer_idx];
            if let (Some(w), Some(gw), Some(slot)) = (layer.weights.as_mut(), lg.weights.as_ref(), wslot.as_mut())
            {
                apply_update(w, gw, slot, kind, lr, wd, step)?;
            }
            if let (Some(b), Some(gb), Some(slot)) = (layer.bias.as_mut(), lg.bias.as_ref(), bslot.as_mut()) {
                apply_update(b, gb, slot, kind, lr, wd, step)?;
            }
            layer.apply_mask();
        }
        Ok(())
    }

    pub(crate) fn slots(&self) -> &[(Option<SlotState>, Option<SlotState>)] {
        &self.slots
    }

    pub(crate) fn restore(
        kind: OptimKind,
        lr: f64,
        weight_decay: f64,
        slots: Vec<(Option<SlotState>, Option<SlotState>)>,
        step_count: u64,
    ) -> Optimizer {
        Optimizer { kind, lr, weight_decay, slots, step_count }
    }
}

fn apply_update(
    param: &mut Tensor,
    grad: &Tensor,
    slot: &mut SlotState,
    kind: OptimKind,
    lr: f64,
    wd: f64,
    step: u64,
) -> Result<()> {
    if param.shape() != grad.shape() {
        return Err(Error::shape(format!(
            "gradient shape {:?} does not match parameter shape {:?}",
            grad.shape(),
            param.shape()
        )));
    }
    match (kind, slot) {
        (OptimKind::Sgd { momentum }, SlotState::Sgd { velocity }) => {
            sgd_step(param.data_mut(), grad.data(), velocity.data_mut(), lr, momentum, wd);
        }
        (OptimKind::Adam { beta1, beta2, epsilon }, SlotState::Adam { m, v }) => {
            adam_step(
                param.data_mut(),
                grad.data(),
                m.data_mut(),
                v.data_mut(),
                step,
                lr,
                beta1,
                beta2,
                epsilon,
                wd,
            );
        }
        _ => return Err(Error::contract("optimizer state does not match its rule".to_string())),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn sgd_zero_grad_zero_decay_is_a_fixed_point() {
        let mut p = [1.0, -2.0, 0.25];
        let before = p;
        let g = [0.0; 3];
        let mut v = [0.0; 3];
        sgd_step(&mut p, &g, &mut v, 0.1, 0.0, 0.0);
        assert_eq!(p, before);
    }

    #[test]
    fn sgd_plain_arithmetic() {
        let mut p = [1.0];
        let g = [0.5];
        let mut v = [0.0];
        sgd_step(&mut p, &g, &mut v, 0.1, 0.0, 0.0);
        assert!((p[0] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn sgd_momentum_two_step_recurrence() {
        // From 0 with constant grad 1, lr 0.1, momentum 0.9:
        // v1 = 1, p1 = -0.1; v2 = 1.9, p2 = -0.29.
        let mut p = [0.0];
        let g = [1.0];
        let mut v = [0.0];
        sgd_step(&mut p, &g, &mut v, 0.1, 0.9, 0.0);
        assert!((p[0] + 0.1).abs() < 1e-15);
        sgd_step(&mut p, &g, &mut v, 0.1, 0.9, 0.0);
        assert!((p[0] + 0.29).abs() < 1e-15);
    }

    #[test]
    fn adam_zero_grad_zero_decay_is_a_fixed_point() {
        let mut p = [3.0, -1.0];
        let before = p;
        let g = [0.0; 2];
        let (mut m, mut v) = ([0.0; 2], [0.0; 2]);
        adam_step(&mut p, &g, &mut m, &mut v, 1, 0.0005, 0.9, 0.999, 1e-8, 0.0);
        assert_eq!(p, before);
    }

    #[test]
    fn adam_first_step_moves_by_lr_times_sign() {
        let lr = 0.001;
        for &g0 in &[0.5_f64, -2.0, 17.0, -0.03] {
            let mut p = [1.0];
            let g = [g0];
            let (mut m, mut v) = ([0.0], [0.0]);
            adam_step(&mut p, &g, &mut m, &mut v, 1, lr, 0.9, 0.999, 1e-8, 0.0);
            let delta = p[0] - 1.0;
            let expected = -lr * g0.signum();
            assert!(
                (delta - expected).abs() < lr * 1e-6,
                "first-step delta {delta} vs {expected} for grad {g0}"
            );
        }
    }

    /// Textbook Adam, written independently of `adam_step`.
    struct ReferenceAdam {
        m: Vec<f64>,
        v: Vec<f64>,
        t: u64,
    }

    impl ReferenceAdam {
        fn new(n: usize) -> Self {
            ReferenceAdam { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
        }

        fn update(&mut self, theta: &mut [f64], grad: &[f64], lr: f64, wd: f64) {
            self.t += 1;
            let (b1, b2, eps) = (0.9, 0.999, 1e-8);
            for i in 0..theta.len() {
                let g = grad[i] + wd * theta[i];
                self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
                self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
                let mhat = self.m[i] / (1.0 - b1.powi(self.t as i32));
                let vhat = self.v[i] / (1.0 - b2.powi(self.t as i32));
                theta[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }

    #[test]
    fn adam_matches_independent_reference_over_100_steps() {
        let mut rng = Rng::new(404);
        let n = 16;
        let mut p1: Vec<f64> = rng.sample_normal(&[n], 0.0, 1.0).into_data();
        let mut p2 = p1.clone();
        let (mut m, mut v) = (vec![0.0; n], vec![0.0; n]);
        let mut reference = ReferenceAdam::new(n);
        for step in 1..=100 {
            let grad = rng.sample_normal(&[n], 0.0, 1.0).into_data();
            adam_step(&mut p1, &grad, &mut m, &mut v, step, 0.01, 0.9, 0.999, 1e-8, 1e-5);
            reference.update(&mut p2, &grad, 0.01, 1e-5);
        }
        let max_diff = p1
            .iter()
            .zip(&p2)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max);
        assert!(max_diff < 1e-10, "implementations diverged by {max_diff}");
    }

    #[test]
    fn optimizer_trajectories_are_deterministic() {
        use crate::layer::LayerSpec;
        let build = || {
            let mut rng = Rng::new(77);
            let mut net = Network::new(
                &[3],
                vec![LayerSpec::Dense { in_features: 3, out_features: 2, bias: true }],
                &mut rng,
            )
            .unwrap();
            let mut opt = Optimizer::new(OptimKind::adam_default(), 0.01, 1e-5, &net).unwrap();
            let x = rng.sample_normal(&[4, 3], 0.0, 1.0);
            let t = rng.sample_normal(&[4, 2], 0.0, 1.0);
            for _ in 0..50 {
                let (y, cache) = net.forward(&x).unwrap();
                let (_, grad) = crate::loss::mse_loss(&y, &t).unwrap();
                let (grads, _) = net.backward(&cache, &grad).unwrap();
                opt.step(&mut net, &grads).unwrap();
            }
            net.fingerprint()
        };
        assert_eq!(build(), build());
    }

    #[test]
    fn stepping_a_frozen_network_is_a_contract_error() {
        use crate::layer::LayerSpec;
        let mut rng = Rng::new(9);
        let mut net = Network::new(
            &[2],
            vec![LayerSpec::Dense { in_features: 2, out_features: 2, bias: true }],
            &mut rng,
        )
        .unwrap();
        let mut opt = Optimizer::new(OptimKind::sgd(0.0), 0.1, 0.0, &net).unwrap();
        let x = rng.sample_normal(&[1, 2], 0.0, 1.0);
        let (y, cache) = net.forward(&x).unwrap();
        let (_, g) = crate::loss::mse_loss(&y, &Tensor::zeros(y.shape())).unwrap();
        let (grads, _) = net.backward(&cache, &g).unwrap();
        net.set_frozen(true);
        assert!(matches!(opt.step(&mut net, &grads), Err(Error::Contract(_))));
    }
}
