//! Dense multilayer perceptron with ReLU hidden activations and a linear
//! output layer, plus the Adam optimizer. Written directly against `Vec<f64>`
//! so training is bit-reproducible for a fixed seed.

use rand::Rng;

/// One dense layer; `weights` is row-major `[output][input]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl Layer {
    fn zeros(input_dim: usize, output_dim: usize) -> Self {
        Layer {
            weights: vec![0.0; input_dim * output_dim],
            bias: vec![0.0; output_dim],
            input_dim,
            output_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

impl Mlp {
    /// Initialize with weights uniform in ±1/sqrt(fan_in), biases zero.
    pub fn init<R: Rng>(dims: &[usize], rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "network needs input and output dims");
        let layers = dims
            .windows(2)
            .map(|w| {
                let (input_dim, output_dim) = (w[0], w[1]);
                let scale = 1.0 / (input_dim as f64).sqrt();
                Layer {
                    weights: (0..input_dim * output_dim)
                        .map(|_| rng.gen_range(-scale..scale))
                        .collect(),
                    bias: vec![0.0; output_dim],
                    input_dim,
                    output_dim,
                }
            })
            .collect();
        Mlp { layers }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Mlp {
            layers: dims.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Layer::zeros(l.input_dim, l.output_dim))
                .collect(),
        }
    }

    /// Layer dimensions including input and output.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.layers[0].input_dim];
        dims.extend(self.layers.iter().map(|l| l.output_dim));
        dims
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().output_dim
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        debug_assert_eq!(input.len(), self.input_dim());
        let last = self.layers.len() - 1;
        let mut current = input.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            current = affine(layer, &current, i < last);
        }
        current
    }

    /// Forward pass keeping every activation (index 0 is the input), for
    /// backpropagation.
    pub fn forward_trace(&self, input: &[f64]) -> Vec<Vec<f64>> {
        let last = self.layers.len() - 1;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let next = affine(layer, activations.last().unwrap(), i < last);
            activations.push(next);
        }
        activations
    }

    /// Backpropagate `output_grad` (dL/d output) through the network for the
    /// activations of one sample, accumulating parameter gradients into
    /// `grads`.
    pub fn backward(&self, activations: &[Vec<f64>], output_grad: &[f64], grads: &mut Mlp) {
        let mut delta = output_grad.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &activations[i];
            let grad_layer = &mut grads.layers[i];
            for o in 0..layer.output_dim {
                let d = delta[o];
                grad_layer.bias[o] += d;
                let row = o * layer.input_dim;
                for j in 0..layer.input_dim {
                    grad_layer.weights[row + j] += d * input[j];
                }
            }
            if i == 0 {
                break;
            }
            // d input = W^T delta, gated by the ReLU of the layer below.
            let mut next_delta = vec![0.0; layer.input_dim];
            for o in 0..layer.output_dim {
                let d = delta[o];
                let row = o * layer.input_dim;
                for j in 0..layer.input_dim {
                    next_delta[j] += layer.weights[row + j] * d;
                }
            }
            for (j, nd) in next_delta.iter_mut().enumerate() {
                if activations[i][j] <= 0.0 {
                    *nd = 0.0;
                }
            }
            delta = next_delta;
        }
    }

    /// theta' = (1 - tau) * theta' + tau * theta, element-wise.
    pub fn soft_update_from(&mut self, source: &Mlp, tau: f64) {
        assert_eq!(self.dims(), source.dims(), "shape mismatch in soft update");
        for (dst, src) in self.layers.iter_mut().zip(&source.layers) {
            for (d, s) in dst.weights.iter_mut().zip(&src.weights) {
                *d = (1.0 - tau) * *d + tau * *s;
            }
            for (d, s) in dst.bias.iter_mut().zip(&src.bias) {
                *d = (1.0 - tau) * *d + tau * *s;
            }
        }
    }

    /// Grow the input layer by `extra` zero-weighted columns appended after
    /// the existing inputs. Forward passes on inputs that are zero in the new
    /// positions are unchanged.
    pub fn widen_input(&mut self, extra: usize) {
        let first = &mut self.layers[0];
        let old = first.input_dim;
        let mut weights = Vec::with_capacity((old + extra) * first.output_dim);
        for o in 0..first.output_dim {
            weights.extend_from_slice(&first.weights[o * old..(o + 1) * old]);
            weights.extend(std::iter::repeat(0.0).take(extra));
        }
        first.weights = weights;
        first.input_dim = old + extra;
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend_from_slice(&layer.weights);
            out.extend_from_slice(&layer.bias);
        }
        out
    }

    pub fn assign_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count());
        let mut pos = 0;
        for layer in &mut self.layers {
            let w_len = layer.weights.len();
            layer.weights.copy_from_slice(&flat[pos..pos + w_len]);
            pos += w_len;
            let b_len = layer.bias.len();
            layer.bias.copy_from_slice(&flat[pos..pos + b_len]);
            pos += b_len;
        }
    }
}

fn affine(layer: &Layer, input: &[f64], relu: bool) -> Vec<f64> {
    debug_assert_eq!(input.len(), layer.input_dim);
    let mut out = Vec::with_capacity(layer.output_dim);
    for o in 0..layer.output_dim {
        let row = o * layer.input_dim;
        let mut acc = layer.bias[o];
        for (j, x) in input.iter().enumerate() {
            acc += layer.weights[row + j] * x;
        }
        out.push(if relu && acc < 0.0 { 0.0 } else { acc });
    }
    out
}

/// Adam with bias correction; moments are stored network-shaped.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    pub m: Mlp,
    pub v: Mlp,
}

impl Adam {
    pub fn new(learning_rate: f64, shape: &Mlp) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: shape.zeros_like(),
            v: shape.zeros_like(),
        }
    }

    pub fn update(&mut self, params: &mut Mlp, grads: &Mlp) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for li in 0..params.layers.len() {
            let (pw, pb) = {
                let l = &mut params.layers[li];
                (&mut l.weights, &mut l.bias)
            };
            let gl = &grads.layers[li];
            let ml = &mut self.m.layers[li];
            let vl = &mut self.v.layers[li];
            for (i, p) in pw.iter_mut().enumerate() {
                let g = gl.weights[i];
                ml.weights[i] = self.beta1 * ml.weights[i] + (1.0 - self.beta1) * g;
                vl.weights[i] = self.beta2 * vl.weights[i] + (1.0 - self.beta2) * g * g;
                let m_hat = ml.weights[i] / bc1;
                let v_hat = vl.weights[i] / bc2;
                *p -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
            for (i, p) in pb.iter_mut().enumerate() {
                let g = gl.bias[i];
                ml.bias[i] = self.beta1 * ml.bias[i] + (1.0 - self.beta1) * g;
                vl.bias[i] = self.beta2 * vl.bias[i] + (1.0 - self.beta2) * g * g;
                let m_hat = ml.bias[i] / bc1;
                let v_hat = vl.bias[i] / bc2;
                *p -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }

    /// Widen moment tensors alongside a widened input layer.
    pub fn widen_input(&mut self, extra: usize) {
        self.m.widen_input(extra);
        self.v.widen_input(extra);
    }
}
