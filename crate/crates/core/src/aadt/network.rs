//! Dense feed-forward regression network with hand-written backpropagation.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Linear => z,
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
        }
    }
}

/// Fully connected layer. `weights` is row-major `outputs x inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Dense {
            inputs,
            outputs,
            activation,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// He-uniform weights, zero bias.
    pub fn init<R: Rng>(inputs: usize, outputs: usize, activation: Activation, rng: &mut R) -> Self {
        let limit = (6.0 / inputs as f64).sqrt();
        let weights = (0..inputs * outputs)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Dense {
            inputs,
            outputs,
            activation,
            weights,
            bias: vec![0.0; outputs],
        }
    }

    fn pre_activation(&self, x: &[f64]) -> Vec<f64> {
        (0..self.outputs)
            .map(|o| {
                let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
                row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + self.bias[o]
            })
            .collect()
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub layers: Vec<Dense>,
}

impl Network {
    /// Rectifier hidden layers and a linear output layer.
    pub fn new<R: Rng>(inputs: usize, hidden: &[usize], outputs: usize, rng: &mut R) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut fan_in = inputs;
        for &h in hidden {
            layers.push(Dense::init(fan_in, h, Activation::Relu, rng));
            fan_in = h;
        }
        layers.push(Dense::init(fan_in, outputs, Activation::Linear, rng));
        Network { layers }
    }

    pub fn inputs(&self) -> usize {
        self.layers.first().map_or(0, |l| l.inputs)
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    /// Checks that consecutive layer shapes chain and buffers have the declared sizes.
    pub fn is_consistent(&self) -> bool {
        !self.layers.is_empty()
            && self.layers.iter().all(|l| {
                l.weights.len() == l.inputs * l.outputs && l.bias.len() == l.outputs
            })
            && self.layers.windows(2).all(|w| w[0].outputs == w[1].inputs)
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        for layer in &self.layers {
            a = layer
                .pre_activation(&a)
                .into_iter()
                .map(|z| layer.activation.apply(z))
                .collect();
        }
        a
    }

    /// Mean over samples of the per-sample mean squared error across outputs.
    pub fn loss(&self, xs: &[Vec<f64>], ys: &[Vec<f64>]) -> f64 {
        let total: f64 = xs
            .iter()
            .zip(ys)
            .map(|(x, y)| {
                let out = self.forward(x);
                out.iter().zip(y).map(|(o, t)| (o - t).powi(2)).sum::<f64>() / out.len() as f64
            })
            .sum();
        total / xs.len() as f64
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    /// Parameters flattened layer by layer: weights then bias.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count(), "parameter vector length");
        let mut i = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&flat[i..i + nw]);
            i += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[i..i + nb]);
            i += nb;
        }
    }

    /// Loss and its gradient with respect to [`Network::params`], by backpropagation.
    pub fn gradient(&self, xs: &[Vec<f64>], ys: &[Vec<f64>]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.param_count()];
        let offsets: Vec<usize> = self
            .layers
            .iter()
            .scan(0, |acc, l| {
                let start = *acc;
                *acc += l.param_count();
                Some(start)
            })
            .collect();
        let n = xs.len() as f64;
        let k = self.outputs() as f64;
        let mut loss = 0.0;

        for (x, y) in xs.iter().zip(ys) {
            // Forward pass, keeping inputs and pre-activations of every layer.
            let mut inputs: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
            let mut pre: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
            let mut a = x.clone();
            for layer in &self.layers {
                let z = layer.pre_activation(&a);
                let next = z.iter().map(|&v| layer.activation.apply(v)).collect();
                inputs.push(std::mem::replace(&mut a, next));
                pre.push(z);
            }
            loss += a.iter().zip(y).map(|(o, t)| (o - t).powi(2)).sum::<f64>() / k / n;

            // dL/d(output)
            let mut delta: Vec<f64> = a.iter().zip(y).map(|(o, t)| 2.0 * (o - t) / (k * n)).collect();
            for li in (0..self.layers.len()).rev() {
                let layer = &self.layers[li];
                for (d, z) in delta.iter_mut().zip(&pre[li]) {
                    *d *= layer.activation.derivative(*z);
                }
                let off = offsets[li];
                let input = &inputs[li];
                for o in 0..layer.outputs {
                    let g = &mut grad[off + o * layer.inputs..off + (o + 1) * layer.inputs];
                    for (gi, xi) in g.iter_mut().zip(input) {
                        *gi += delta[o] * xi;
                    }
                    grad[off + layer.weights.len() + o] += delta[o];
                }
                if li > 0 {
                    let mut prev = vec![0.0; layer.inputs];
                    for o in 0..layer.outputs {
                        let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                        for (p, w) in prev.iter_mut().zip(row) {
                            *p += w * delta[o];
                        }
                    }
                    delta = prev;
                }
            }
        }
        (loss, grad)
    }
}

/// Adam optimiser state over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(learning_rate: f64, params: usize) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: vec![0.0; params],
            v: vec![0.0; params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_outputs_bias() {
        let mut out = Dense::zeros(3, 2, Activation::Linear);
        out.bias = vec![1.5, -2.0];
        let net = Network {
            layers: vec![Dense::zeros(4, 3, Activation::Relu), out],
        };
        assert!(net.is_consistent());
        assert_eq!(net.forward(&[1.0, 2.0, 3.0, 4.0]), vec![1.5, -2.0]);
    }

    #[test]
    fn params_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = Network::new(3, &[5], 2, &mut rng);
        let p = net.params();
        let mut q = p.clone();
        q[0] += 1.0;
        net.set_params(&q);
        assert_eq!(net.params()[0], p[0] + 1.0);
    }

    #[test]
    fn adam_descends_a_quadratic() {
        let mut x = vec![5.0, -3.0];
        let mut opt = Adam::new(0.1, 2);
        for _ in 0..500 {
            let g: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
            opt.step(&mut x, &g);
        }
        assert!(x.iter().all(|v| v.abs() < 1e-2), "{x:?}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = Network::new(4, &[6, 5], 3, &mut rng);
        let xs: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let ys: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let (_, g) = net.gradient(&xs, &ys);
        let p = net.params();
        let h = 1e-6;
        let mut probe = net.clone();
        for i in 0..p.len() {
            let mut q = p.clone();
            q[i] += h;
            probe.set_params(&q);
            let up = probe.loss(&xs, &ys);
            q[i] -= 2.0 * h;
            probe.set_params(&q);
            let down = probe.loss(&xs, &ys);
            let numeric = (up - down) / (2.0 * h);
            assert!((numeric - g[i]).abs() <= 1e-5 * (1.0 + g[i].abs()), "param {i}");
        }
    }
}
