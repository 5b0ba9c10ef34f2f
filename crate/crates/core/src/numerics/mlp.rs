//! Dense MLP with explicit forward tape and batch backprop.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hidden-layer activation. The output layer is always linear; heads that
/// need squashing (policies, the distillation net) apply it on top.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply_inplace(self, z: &mut Array2<f64>) {
        match self {
            Activation::Relu => z.mapv_inplace(|v| if v > 0.0 { v } else { 0.0 }),
            Activation::Tanh => z.mapv_inplace(f64::tanh),
        }
    }

    /// Derivative expressed through the post-activation value.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

/// Dense feed-forward network. Weight matrices are `(n_in, n_out)` so a
/// batch forward is `x.dot(w) + b` on row-major batches.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    layer_sizes: Vec<usize>,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
    hidden_activation: Activation,
}

/// Activation record of one forward call: `activations[0]` is the input
/// batch, `activations[l]` the post-activation output of layer `l`, the
/// last entry the linear network output.
#[derive(Debug, Clone)]
pub struct Tape {
    activations: Vec<Array2<f64>>,
    layer_sizes: Vec<usize>,
}

impl Tape {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("tape has activations")
    }

    pub fn batch_size(&self) -> usize {
        self.activations[0].nrows()
    }
}

/// Parameter gradients with the same shapes as the network they came from.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            weights: net.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            biases: net.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

fn validate_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(Error::InvalidArg(
            "an MLP needs at least input and output sizes".into(),
        ));
    }
    if layer_sizes.iter().any(|&n| n == 0) {
        return Err(Error::InvalidArg("layer sizes must be positive".into()));
    }
    Ok(())
}

impl Mlp {
    /// All-zero parameters; mostly a test fixture.
    pub fn zeros(layer_sizes: &[usize], hidden_activation: Activation) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        let weights = layer_sizes
            .windows(2)
            .map(|w| Array2::zeros((w[0], w[1])))
            .collect();
        let biases = layer_sizes[1..].iter().map(|&n| Array1::zeros(n)).collect();
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            hidden_activation,
        })
    }

    /// Uniform fan-in initialization, `U(-1/sqrt(n_in), 1/sqrt(n_in))` for
    /// both weights and biases. Draw order is fixed (per layer: weights
    /// row-major, then biases) so a seeded RNG reproduces the net exactly.
    pub fn init<R: Rng + ?Sized>(
        layer_sizes: &[usize],
        hidden_activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
        let mut biases = Vec::with_capacity(layer_sizes.len() - 1);
        for w in layer_sizes.windows(2) {
            let (n_in, n_out) = (w[0], w[1]);
            let bound = 1.0 / (n_in as f64).sqrt();
            let mut wm = Array2::zeros((n_in, n_out));
            for v in wm.iter_mut() {
                *v = rng.gen_range(-bound..bound);
            }
            let mut bv = Array1::zeros(n_out);
            for v in bv.iter_mut() {
                *v = rng.gen_range(-bound..bound);
            }
            weights.push(wm);
            biases.push(bv);
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            hidden_activation,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("validated")
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden_activation
    }

    /// Total parameter count, `sum(n_in * n_out + n_out)`.
    pub fn param_count(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    /// Flat parameter access in (layer: weights row-major, then bias) order.
    /// Used by finite-difference checks and checkpoint tooling.
    pub fn param(&self, index: usize) -> f64 {
        let (loc, i) = self.locate(index);
        match loc {
            ParamLoc::Weight(l) => *self.weights[l].as_slice().expect("standard layout").get(i).expect("in range"),
            ParamLoc::Bias(l) => self.biases[l][i],
        }
    }

    pub fn set_param(&mut self, index: usize, value: f64) {
        let (loc, i) = self.locate(index);
        match loc {
            ParamLoc::Weight(l) => {
                self.weights[l].as_slice_mut().expect("standard layout")[i] = value
            }
            ParamLoc::Bias(l) => self.biases[l][i] = value,
        }
    }

    fn locate(&self, mut index: usize) -> (ParamLoc, usize) {
        for l in 0..self.weights.len() {
            let nw = self.weights[l].len();
            if index < nw {
                return (ParamLoc::Weight(l), index);
            }
            index -= nw;
            let nb = self.biases[l].len();
            if index < nb {
                return (ParamLoc::Bias(l), index);
            }
            index -= nb;
        }
        panic!("parameter index out of range");
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    pub(crate) fn weights_mut(&mut self) -> (&mut Vec<Array2<f64>>, &mut Vec<Array1<f64>>) {
        (&mut self.weights, &mut self.biases)
    }

    /// Batch forward pass. Rows of `input` are samples.
    pub fn forward_batch(&self, input: &Array2<f64>) -> Result<(Array2<f64>, Tape)> {
        if input.ncols() != self.input_dim() {
            return Err(Error::DimMismatch(format!(
                "forward expects input width {}, got {}",
                self.input_dim(),
                input.ncols()
            )));
        }
        if !input.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("MLP forward input".into()));
        }
        let layers = self.weights.len();
        let mut activations = Vec::with_capacity(layers + 1);
        activations.push(input.clone());
        for l in 0..layers {
            let mut z = activations[l].dot(&self.weights[l]);
            z += &self.biases[l];
            if l + 1 < layers {
                self.hidden_activation.apply_inplace(&mut z);
            }
            activations.push(z);
        }
        let output = activations.last().expect("pushed").clone();
        Ok((
            output,
            Tape {
                activations,
                layer_sizes: self.layer_sizes.clone(),
            },
        ))
    }

    /// Single-sample forward; `input` length must equal the input size.
    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, Tape)> {
        let x = Array2::from_shape_vec((1, input.len()), input.to_vec())
            .map_err(|e| Error::DimMismatch(e.to_string()))?;
        let (out, tape) = self.forward_batch(&x)?;
        Ok((out.row(0).to_vec(), tape))
    }

    /// Backprop through the tape. `output_grad` is dLoss/dOutput for the
    /// same batch; returns parameter gradients and the input gradient.
    pub fn backward_batch(
        &self,
        tape: &Tape,
        output_grad: &Array2<f64>,
    ) -> Result<(Gradients, Array2<f64>)> {
        if tape.layer_sizes != self.layer_sizes {
            return Err(Error::Contract(
                "tape does not match this network's architecture".into(),
            ));
        }
        if output_grad.dim() != tape.output().dim() {
            return Err(Error::DimMismatch(format!(
                "output_grad shape {:?} does not match tape output {:?}",
                output_grad.dim(),
                tape.output().dim()
            )));
        }
        let layers = self.weights.len();
        let mut grad_w: Vec<Array2<f64>> = Vec::with_capacity(layers);
        let mut grad_b: Vec<Array1<f64>> = Vec::with_capacity(layers);
        let mut delta = output_grad.clone();
        let mut input_grad = None;
        for l in (0..layers).rev() {
            // dot() on a transposed view may produce an F-order result;
            // keep gradients in standard layout for the optimizer.
            let dw = tape.activations[l].t().dot(&delta);
            grad_w.push(if dw.is_standard_layout() {
                dw
            } else {
                dw.as_standard_layout().to_owned()
            });
            grad_b.push(delta.sum_axis(Axis(0)));
            let upstream = delta.dot(&self.weights[l].t());
            if l == 0 {
                input_grad = Some(upstream);
            } else {
                let act = self.hidden_activation;
                delta = upstream;
                delta.zip_mut_with(&tape.activations[l], |d, &a| {
                    *d *= act.derivative_from_output(a)
                });
            }
        }
        grad_w.reverse();
        grad_b.reverse();
        Ok((
            Gradients {
                weights: grad_w,
                biases: grad_b,
            },
            input_grad.expect("at least one layer"),
        ))
    }

    /// Single-sample backward counterpart of [`Mlp::forward`].
    pub fn backward(&self, tape: &Tape, output_grad: &[f64]) -> Result<(Gradients, Vec<f64>)> {
        let g = Array2::from_shape_vec((1, output_grad.len()), output_grad.to_vec())
            .map_err(|e| Error::DimMismatch(e.to_string()))?;
        let (grads, input_grad) = self.backward_batch(tape, &g)?;
        Ok((grads, input_grad.row(0).to_vec()))
    }

    pub fn all_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

enum ParamLoc {
    Weight(usize),
    Bias(usize),
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Independent naive forward: explicit per-neuron loops, no ndarray dot.
    fn naive_forward(net: &Mlp, input: &[f64]) -> Vec<f64> {
        let mut a: Vec<f64> = input.to_vec();
        let layers = net.weights().len();
        for l in 0..layers {
            let w = &net.weights()[l];
            let b = &net.biases()[l];
            let mut z = vec![0.0; w.ncols()];
            for j in 0..w.ncols() {
                let mut acc = b[j];
                for i in 0..w.nrows() {
                    acc += a[i] * w[[i, j]];
                }
                z[j] = acc;
            }
            if l + 1 < layers {
                for v in z.iter_mut() {
                    *v = match net.hidden_activation() {
                        Activation::Relu => v.max(0.0),
                        Activation::Tanh => v.tanh(),
                    };
                }
            }
            a = z;
        }
        a
    }

    #[test]
    fn zero_net_maps_everything_to_zero() {
        let net = Mlp::zeros(&[3, 4, 2], Activation::Relu).unwrap();
        let (out, _) = net.forward(&[1.0, -2.0, 0.5]).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn identity_like_linear_net() {
        let mut net = Mlp::zeros(&[1, 1], Activation::Relu).unwrap();
        net.set_param(0, 1.0); // single weight, bias stays 0
        let (out, _) = net.forward(&[2.0]).unwrap();
        assert_eq!(out, vec![2.0]);
    }

    #[test]
    fn forward_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let net = Mlp::init(&[4, 8, 2], Activation::Relu, &mut rng).unwrap();
        let input = [0.3, -1.2, 2.5, 0.01];
        let (out, _) = net.forward(&input).unwrap();
        let expect = naive_forward(&net, &input);
        for (a, b) in out.iter().zip(&expect) {
            let rel = (a - b).abs() / b.abs().max(1e-30);
            assert!(rel < 1e-12, "forward {a} vs oracle {b}");
        }
    }

    #[test]
    fn forward_rejects_bad_inputs() {
        let net = Mlp::zeros(&[3, 2], Activation::Relu).unwrap();
        assert!(matches!(
            net.forward(&[1.0, 2.0]),
            Err(Error::DimMismatch(_))
        ));
        assert!(matches!(
            net.forward(&[1.0, f64::NAN, 0.0]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn zero_output_grad_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Mlp::init(&[3, 5, 2], Activation::Tanh, &mut rng).unwrap();
        let (_, tape) = net.forward(&[0.1, 0.2, 0.3]).unwrap();
        let (grads, input_grad) = net.backward(&tape, &[0.0, 0.0]).unwrap();
        assert!(grads.weights.iter().all(|w| w.iter().all(|&v| v == 0.0)));
        assert!(grads.biases.iter().all(|b| b.iter().all(|&v| v == 0.0)));
        assert!(input_grad.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_chain_rule_by_hand() {
        // 1 -> 1 linear net, loss = output: dL/dw = x, dL/db = 1.
        let mut net = Mlp::zeros(&[1, 1], Activation::Relu).unwrap();
        net.set_param(0, 1.0);
        let x = 3.25;
        let (_, tape) = net.forward(&[x]).unwrap();
        let (grads, input_grad) = net.backward(&tape, &[1.0]).unwrap();
        assert_eq!(grads.weights[0][[0, 0]], x);
        assert_eq!(grads.biases[0][0], 1.0);
        assert_eq!(input_grad[0], 1.0); // dL/dx = w = 1
    }

    #[test]
    fn backward_matches_central_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = Mlp::init(&[6, 16, 16, 3], Activation::Relu, &mut rng).unwrap();
        let input: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // Scalar loss: weighted sum of outputs.
        let coef = [0.7, -1.3, 0.4];
        let loss = |n: &Mlp| {
            let (out, _) = n.forward(&input).unwrap();
            out.iter().zip(&coef).map(|(o, c)| o * c).sum::<f64>()
        };
        let (_, tape) = net.forward(&input).unwrap();
        let (grads, _) = net.backward(&tape, &coef).unwrap();

        let mut flat = Vec::new();
        for l in 0..grads.weights.len() {
            flat.extend(grads.weights[l].iter().copied());
            flat.extend(grads.biases[l].iter().copied());
        }
        let mut checked = 0usize;
        let mut ok = 0usize;
        let h = 1e-5;
        let mut probe = net.clone();
        for i in 0..probe.param_count() {
            let orig = probe.param(i);
            probe.set_param(i, orig + h);
            let up = loss(&probe);
            probe.set_param(i, orig - h);
            let down = loss(&probe);
            probe.set_param(i, orig);
            let fd = (up - down) / (2.0 * h);
            let analytic = flat[i];
            let denom = fd.abs().max(analytic.abs()).max(1e-8);
            checked += 1;
            if (fd - analytic).abs() / denom < 1e-4 {
                ok += 1;
            }
        }
        assert!(checked > 100);
        assert!(
            ok as f64 >= 0.99 * checked as f64,
            "only {ok}/{checked} gradients matched"
        );
    }

    #[test]
    fn mismatched_tape_is_a_contract_violation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = Mlp::init(&[3, 4, 2], Activation::Relu, &mut rng).unwrap();
        let b = Mlp::init(&[3, 5, 2], Activation::Relu, &mut rng).unwrap();
        let (_, tape) = a.forward(&[0.1, 0.2, 0.3]).unwrap();
        assert!(matches!(
            b.backward(&tape, &[1.0, 1.0]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn param_roundtrip_covers_every_slot() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut net = Mlp::init(&[2, 3, 1], Activation::Tanh, &mut rng).unwrap();
        assert_eq!(net.param_count(), 2 * 3 + 3 + 3 + 1);
        for i in 0..net.param_count() {
            net.set_param(i, i as f64);
        }
        for i in 0..net.param_count() {
            assert_eq!(net.param(i), i as f64);
        }
    }
}
