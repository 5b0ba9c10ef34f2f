//! Adam with bias correction, plus Polyak target averaging.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::mlp::{Gradients, Mlp};

/// Optimizer state shadowing one [`Mlp`]'s parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    m_weights: Vec<Array2<f64>>,
    v_weights: Vec<Array2<f64>>,
    m_biases: Vec<Array1<f64>>,
    v_biases: Vec<Array1<f64>>,
    pub step_count: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(net: &Mlp, learning_rate: f64) -> Self {
        Self {
            m_weights: net.weights().iter().map(|w| Array2::zeros(w.dim())).collect(),
            v_weights: net.weights().iter().map(|w| Array2::zeros(w.dim())).collect(),
            m_biases: net.biases().iter().map(|b| Array1::zeros(b.len())).collect(),
            v_biases: net.biases().iter().map(|b| Array1::zeros(b.len())).collect(),
            step_count: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    /// One Adam step in place. Rejects non-finite gradients, naming the
    /// offending layer, and verifies parameters stay finite.
    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients) -> Result<()> {
        if grads.weights.len() != self.m_weights.len() {
            return Err(Error::DimMismatch("gradient layer count".into()));
        }
        for (l, (gw, gb)) in grads.weights.iter().zip(&grads.biases).enumerate() {
            if gw.dim() != self.m_weights[l].dim() || gb.len() != self.m_biases[l].len() {
                return Err(Error::DimMismatch(format!("gradient shape at layer {l}")));
            }
            if !gw.iter().all(|v| v.is_finite()) || !gb.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient at layer {l}")));
            }
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (lr, b1, b2, eps) = (self.learning_rate, self.beta1, self.beta2, self.epsilon);

        let (weights, biases) = net.weights_mut();
        for l in 0..weights.len() {
            update_slice(
                weights[l].as_slice_mut().expect("standard layout"),
                grads.weights[l].as_slice().expect("standard layout"),
                self.m_weights[l].as_slice_mut().expect("standard layout"),
                self.v_weights[l].as_slice_mut().expect("standard layout"),
                lr, b1, b2, eps, bc1, bc2,
            );
            update_slice(
                biases[l].as_slice_mut().expect("standard layout"),
                grads.biases[l].as_slice().expect("standard layout"),
                self.m_biases[l].as_slice_mut().expect("standard layout"),
                self.v_biases[l].as_slice_mut().expect("standard layout"),
                lr, b1, b2, eps, bc1, bc2,
            );
        }
        if !net.all_finite() {
            return Err(Error::NonFinite("parameters after Adam step".into()));
        }
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
fn update_slice(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    b1: f64,
    b2: f64,
    eps: f64,
    bc1: f64,
    bc2: f64,
) {
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = b1 * m[i] + (1.0 - b1) * g;
        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Exponential moving average of target parameters toward the online net:
/// `target <- rho * target + (1 - rho) * online`.
pub fn polyak_update(target: &mut Mlp, online: &Mlp, rho: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::InvalidArg(format!("polyak rho {rho} outside [0, 1]")));
    }
    if target.layer_sizes() != online.layer_sizes() {
        return Err(Error::DimMismatch("polyak target/online shapes".into()));
    }
    let (tw, tb) = target.weights_mut();
    for (t, o) in tw.iter_mut().zip(online.weights()) {
        t.zip_mut_with(o, |t, &o| *t = rho * *t + (1.0 - rho) * o);
    }
    for (t, o) in tb.iter_mut().zip(online.biases()) {
        t.zip_mut_with(o, |t, &o| *t = rho * *t + (1.0 - rho) * o);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::mlp::Activation;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_net(w: f64) -> Mlp {
        let mut net = Mlp::zeros(&[1, 1], Activation::Relu).unwrap();
        net.set_param(0, w);
        net
    }

    fn scalar_grads(net: &Mlp, g: f64) -> Gradients {
        let mut grads = Gradients::zeros_like(net);
        grads.weights[0][[0, 0]] = g;
        grads
    }

    #[test]
    fn zero_gradient_leaves_params_and_bumps_count() {
        let mut net = scalar_net(1.5);
        let mut adam = AdamState::new(&net, 0.1);
        let grads = Gradients::zeros_like(&net);
        adam.step(&mut net, &grads).unwrap();
        assert_eq!(net.param(0), 1.5);
        assert_eq!(adam.step_count, 1);
    }

    #[test]
    fn first_step_magnitude_is_the_learning_rate() {
        // f(w) = w^2 at w=1 has gradient 2; the bias-corrected first step
        // moves by lr regardless of gradient scale.
        let mut net = scalar_net(1.0);
        let mut adam = AdamState::new(&net, 0.1);
        let grads = scalar_grads(&net, 2.0);
        adam.step(&mut net, &grads).unwrap();
        assert!((net.param(0) - 0.9).abs() < 1e-7, "got {}", net.param(0));
    }

    #[test]
    fn converges_on_scalar_quadratic() {
        // Independent scalar reference: same rule coded standalone.
        let (mut m, mut v, mut w_ref) = (0.0f64, 0.0f64, 0.0f64);
        let (b1, b2, eps, lr) = (0.9, 0.999, 1e-8, 0.1);
        for t in 1..=100 {
            let g = 2.0 * (w_ref - 3.0);
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            w_ref -= lr * mh / (vh.sqrt() + eps);
        }

        let mut net = scalar_net(0.0);
        let mut adam = AdamState::new(&net, 0.1);
        for _ in 0..100 {
            let g = 2.0 * (net.param(0) - 3.0);
            let grads = scalar_grads(&net, g);
            adam.step(&mut net, &grads).unwrap();
        }
        assert!((net.param(0) - 3.0).abs() < 0.2, "w = {}", net.param(0));
        assert!((net.param(0) - w_ref).abs() < 1e-12);
    }

    #[test]
    fn nan_gradient_is_rejected_with_layer_id() {
        let mut net = scalar_net(1.0);
        let mut adam = AdamState::new(&net, 0.1);
        let grads = scalar_grads(&net, f64::NAN);
        let err = adam.step(&mut net, &grads).unwrap_err();
        assert!(err.to_string().contains("layer 0"), "{err}");
        assert_eq!(adam.step_count, 0);
    }

    #[test]
    fn polyak_endpoints_and_hand_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let online = Mlp::init(&[2, 3, 1], Activation::Relu, &mut rng).unwrap();

        let mut target = Mlp::zeros(&[2, 3, 1], Activation::Relu).unwrap();
        polyak_update(&mut target, &online, 0.0).unwrap();
        for i in 0..online.param_count() {
            assert_eq!(target.param(i), online.param(i));
        }

        let mut target = Mlp::init(&[2, 3, 1], Activation::Relu, &mut rng).unwrap();
        let before: Vec<f64> = (0..target.param_count()).map(|i| target.param(i)).collect();
        polyak_update(&mut target, &online, 1.0).unwrap();
        for (i, b) in before.iter().enumerate() {
            assert_eq!(target.param(i), *b);
        }

        let mut target = Mlp::zeros(&[1, 1], Activation::Relu).unwrap();
        let mut online1 = Mlp::zeros(&[1, 1], Activation::Relu).unwrap();
        online1.set_param(0, 1.0);
        polyak_update(&mut target, &online1, 0.995).unwrap();
        assert!((target.param(0) - 0.005).abs() < 1e-15);

        assert!(polyak_update(&mut target, &online1, 1.5).is_err());
    }

    #[test]
    fn polyak_is_noop_at_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let online = Mlp::init(&[3, 4, 2], Activation::Tanh, &mut rng).unwrap();
        let mut target = online.clone();
        polyak_update(&mut target, &online, 0.995).unwrap();
        for i in 0..online.param_count() {
            let (t, o) = (target.param(i), online.param(i));
            assert!((t - o).abs() <= 4.0 * f64::EPSILON * o.abs(), "{t} vs {o}");
        }
    }
}
