//! Small feed-forward networks with exact reverse-mode gradients, an
//! adaptive-moment optimizer and a finite-difference gradient checker.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Sigmoid,
    Softplus,
}

impl Activation {
    pub const ALL: [Activation; 3] = [Activation::Tanh, Activation::Sigmoid, Activation::Softplus];

    fn eval(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Softplus => {
                if x > 30.0 {
                    x
                } else {
                    x.exp().ln_1p()
                }
            }
        }
    }

    /// Derivative expressed through the pre-activation `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Softplus => 1.0 / (1.0 + (-x).exp()),
        }
    }
}

/// Fully connected network: smooth activation on hidden layers, identity on
/// the output, plus an optional fixed linear residual `R x`.
///
/// Parameters live in one flat vector; layer `l` stores its `out x in`
/// weights row-major followed by its `out` biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNetwork {
    sizes: Vec<usize>,
    activation: Activation,
    params: Vec<f64>,
    residual: Option<Vec<f64>>,
}

struct Tape {
    /// Pre-activations per layer.
    pre: Vec<Vec<f64>>,
    /// Layer inputs; `acts[0]` is the network input.
    acts: Vec<Vec<f64>>,
}

impl DenseNetwork {
    /// All parameters zero.
    pub fn zeros(sizes: Vec<usize>, activation: Activation) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Config(format!("invalid layer sizes {sizes:?}")));
        }
        let n = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Ok(Self {
            sizes,
            activation,
            params: vec![0.0; n],
            residual: None,
        })
    }

    /// Glorot-uniform weights and zero biases from a seeded generator.
    pub fn random(sizes: Vec<usize>, activation: Activation, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(sizes, activation)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in 0..net.n_layers() {
            let (fan_in, fan_out) = (net.sizes[l], net.sizes[l + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let (w, _) = net.layer_offsets(l);
            for p in &mut net.params[w..w + fan_in * fan_out] {
                *p = rng.random_range(-limit..limit);
            }
        }
        Ok(net)
    }

    /// Zeroes the output layer so the network initially returns only its residual.
    pub fn zero_output_layer(mut self) -> Self {
        let l = self.n_layers() - 1;
        let (w, b) = self.layer_offsets(l);
        let end = b + self.sizes[l + 1];
        self.params[w..end].iter_mut().for_each(|p| *p = 0.0);
        self
    }

    /// Attaches a fixed `d_out x d_in` residual map (row-major).
    pub fn with_residual(mut self, residual: Vec<f64>) -> Result<Self> {
        if residual.len() != self.d_in() * self.d_out() {
            return Err(Error::Shape {
                expected: format!("{} residual entries", self.d_in() * self.d_out()),
                actual: format!("{}", residual.len()),
            });
        }
        self.residual = Some(residual);
        Ok(self)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn d_in(&self) -> usize {
        self.sizes[0]
    }

    pub fn d_out(&self) -> usize {
        *self.sizes.last().expect("at least two sizes")
    }

    fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn residual(&self) -> Option<&[f64]> {
        self.residual.as_deref()
    }

    /// Offsets of layer `l`'s weights and biases in the flat parameter vector.
    fn layer_offsets(&self, l: usize) -> (usize, usize) {
        let start: usize = self.sizes[..l + 1]
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum();
        (start, start + self.sizes[l] * self.sizes[l + 1])
    }

    fn run(&self, x: &[f64], keep: bool) -> (Vec<f64>, Option<Tape>) {
        let mut tape = keep.then(|| Tape {
            pre: Vec::with_capacity(self.n_layers()),
            acts: Vec::with_capacity(self.n_layers()),
        });
        let mut a = x.to_vec();
        for l in 0..self.n_layers() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let (w, b) = self.layer_offsets(l);
            let weights = &self.params[w..w + fan_in * fan_out];
            let mut z: Vec<f64> = self.params[b..b + fan_out].to_vec();
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &weights[o * fan_in..(o + 1) * fan_in];
                *zo += row.iter().zip(&a).map(|(w, x)| w * x).sum::<f64>();
            }
            let last = l + 1 == self.n_layers();
            let next = if last {
                z.clone()
            } else {
                z.iter().map(|v| self.activation.eval(*v)).collect()
            };
            if let Some(t) = tape.as_mut() {
                t.pre.push(z);
                t.acts.push(std::mem::replace(&mut a, next));
            } else {
                a = next;
            }
        }
        if let Some(r) = &self.residual {
            let d_in = self.d_in();
            for (o, ao) in a.iter_mut().enumerate() {
                *ao += r[o * d_in..(o + 1) * d_in]
                    .iter()
                    .zip(x)
                    .map(|(r, x)| r * x)
                    .sum::<f64>();
            }
        }
        (a, tape)
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.run(x, false).0
    }

    /// Parameter gradient of `sum_b <upstream_b, forward(input_b)>`, accumulated into `grad`.
    pub fn backward_into(&self, input: &[f64], upstream: &[f64], grad: &mut [f64]) {
        let (_, tape) = self.run(input, true);
        let tape = tape.expect("tape requested");
        let mut delta = upstream.to_vec();
        for l in (0..self.n_layers()).rev() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            if l + 1 != self.n_layers() {
                let out = tape.acts[l + 1].iter();
                for ((d, z), y) in delta.iter_mut().zip(&tape.pre[l]).zip(out) {
                    *d *= self.activation.derivative(*z, *y);
                }
            }
            let (w, b) = self.layer_offsets(l);
            let a = &tape.acts[l];
            for o in 0..fan_out {
                grad[b + o] += delta[o];
                let row = &mut grad[w + o * fan_in..w + (o + 1) * fan_in];
                for (g, x) in row.iter_mut().zip(a) {
                    *g += delta[o] * x;
                }
            }
            if l > 0 {
                let weights = &self.params[w..w + fan_in * fan_out];
                let mut prev = vec![0.0; fan_in];
                for o in 0..fan_out {
                    for (p, wv) in prev.iter_mut().zip(&weights[o * fan_in..(o + 1) * fan_in]) {
                        *p += delta[o] * wv;
                    }
                }
                delta = prev;
            }
        }
    }

    /// Summed parameter gradients over a batch of `(input, upstream)` rows.
    pub fn backward(&self, inputs: &[Vec<f64>], upstream: &[Vec<f64>]) -> Vec<f64> {
        let mut grad = vec![0.0; self.params.len()];
        for (x, u) in inputs.iter().zip(upstream) {
            self.backward_into(x, u, &mut grad);
        }
        grad
    }
}

/// Adaptive-moment first-order optimizer with bias correction and global-norm clipping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub clip_norm: f64,
    first: Vec<f64>,
    second: Vec<f64>,
    step: u64,
}

impl OptimizerState {
    pub fn new(n_params: usize, learning_rate: f64, clip_norm: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm,
            first: vec![0.0; n_params],
            second: vec![0.0; n_params],
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Rescales `grads` in place to global norm at most `clip_norm`; returns the original norm.
    pub fn clip(&self, grads: &mut [f64]) -> f64 {
        let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm > self.clip_norm {
            let scale = self.clip_norm / norm;
            grads.iter_mut().for_each(|g| *g *= scale);
        }
        norm
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.first.len(), "parameter count changed");
        let mut g = grads.to_vec();
        self.clip(&mut g);
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            self.first[i] = self.beta1 * self.first[i] + (1.0 - self.beta1) * g[i];
            self.second[i] = self.beta2 * self.second[i] + (1.0 - self.beta2) * g[i] * g[i];
            let m_hat = self.first[i] / bc1;
            let v_hat = self.second[i] / bc2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

pub const FD_STEP: f64 = 1e-6;

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compares `gradient(p)` against central differences of `loss(p)` at every coordinate.
pub fn check_gradient_fn(
    params: &[f64],
    loss: impl Fn(&[f64]) -> f64,
    gradient: impl Fn(&[f64]) -> Vec<f64>,
) -> f64 {
    let analytic = gradient(params);
    let mut p = params.to_vec();
    let mut worst = 0.0f64;
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + FD_STEP;
        let up = loss(&p);
        p[i] = orig - FD_STEP;
        let down = loss(&p);
        p[i] = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    worst
}

/// Gradient check of `backward` for a loss on the network output.
///
/// `loss_fn` returns the loss and its gradient with respect to the output.
/// Each trial draws a fresh input in `[-1, 1]^d_in`.
pub fn check_gradients(
    net: &DenseNetwork,
    loss_fn: impl Fn(&[f64]) -> (f64, Vec<f64>),
    n_trials: usize,
    tol: f64,
    seed: u64,
) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..n_trials {
        let x: Vec<f64> = (0..net.d_in()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let with = |p: &[f64]| {
            let mut n = net.clone();
            n.params_mut().copy_from_slice(p);
            n
        };
        let err = check_gradient_fn(
            net.params(),
            |p| loss_fn(&with(p).forward(&x)).0,
            |p| {
                let n = with(p);
                let upstream = loss_fn(&n.forward(&x)).1;
                n.backward(std::slice::from_ref(&x), &[upstream])
            },
        );
        worst = worst.max(err);
    }
    GradCheckReport {
        max_relative_error: worst,
        tolerance: tol,
        passed: worst <= tol,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sum_loss(y: &[f64]) -> (f64, Vec<f64>) {
        (y.iter().sum(), vec![1.0; y.len()])
    }

    fn square_loss(y: &[f64]) -> (f64, Vec<f64>) {
        (y.iter().map(|v| 0.5 * v * v).sum(), y.to_vec())
    }

    #[test]
    fn zero_network_returns_residual() {
        let net = DenseNetwork::zeros(vec![3, 4, 2], Activation::Tanh)
            .unwrap()
            .with_residual(vec![0.0, 1.0, 0.0, 0.0, 0.0, 1.0])
            .unwrap();
        assert_eq!(net.forward(&[9.0, 4.0, 6.0]), vec![4.0, 6.0]);
    }

    #[test]
    fn single_linear_layer() {
        let mut net = DenseNetwork::zeros(vec![2, 1], Activation::Tanh).unwrap();
        net.params_mut().copy_from_slice(&[2.0, -1.0, 0.5]);
        assert_eq!(net.forward(&[3.0, 1.0]), vec![5.5]);
    }

    #[test]
    fn seeded_init_is_deterministic() {
        let a = DenseNetwork::random(vec![3, 5, 2], Activation::Tanh, 4).unwrap();
        let b = DenseNetwork::random(vec![3, 5, 2], Activation::Tanh, 4).unwrap();
        assert_eq!(a.forward(&[0.1, 0.2, 0.3]), b.forward(&[0.1, 0.2, 0.3]));
    }

    #[test]
    fn linear_chain_rule_by_hand() {
        let net = DenseNetwork::zeros(vec![1, 1], Activation::Tanh).unwrap();
        let g = net.backward(&[vec![3.0]], &[vec![1.0]]);
        assert_eq!(g, vec![3.0, 1.0]);
    }

    #[test]
    fn duplicated_rows_double_the_gradient() {
        let net = DenseNetwork::random(vec![2, 3, 2], Activation::Sigmoid, 1).unwrap();
        let x = vec![0.3, -0.7];
        let u = vec![1.0, -2.0];
        let one = net.backward(&[x.clone()], &[u.clone()]);
        let two = net.backward(&[x.clone(), x], &[u.clone(), u]);
        for (a, b) in one.iter().zip(&two) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn gradient_check_every_activation() {
        for (i, act) in Activation::ALL.into_iter().enumerate() {
            let net = DenseNetwork::random(vec![3, 5, 4, 2], act, 10 + i as u64)
                .unwrap()
                .with_residual(vec![0.5; 6])
                .unwrap();
            let mut net = net;
            // Nonzero biases exercise every path.
            for (j, p) in net.params_mut().iter_mut().enumerate() {
                *p += 0.01 * (j % 7) as f64;
            }
            let r = check_gradients(&net, square_loss, 5, 1e-4, 3);
            assert!(r.passed, "{act:?}: {}", r.max_relative_error);
        }
    }

    #[test]
    fn gradient_check_catches_fault() {
        let net = DenseNetwork::random(vec![2, 3, 1], Activation::Tanh, 2).unwrap();
        let x = [0.4, -0.2];
        let err = check_gradient_fn(
            net.params(),
            |p| {
                let mut n = net.clone();
                n.params_mut().copy_from_slice(p);
                sum_loss(&n.forward(&x)).0
            },
            |p| {
                let mut n = net.clone();
                n.params_mut().copy_from_slice(p);
                let mut g = n.backward(&[x.to_vec()], &[vec![1.0]]);
                g[0] += 1e-2;
                g
            },
        );
        assert!(err > 1e-4);
    }

    #[test]
    fn zero_network_passes() {
        let net = DenseNetwork::zeros(vec![2, 2, 1], Activation::Tanh).unwrap();
        assert!(check_gradients(&net, sum_loss, 3, 1e-4, 0).passed);
    }

    #[test]
    fn optimizer_contracts() {
        let mut opt = OptimizerState::new(2, 1e-3, 10.0);
        let mut p = vec![1.0, -1.0];
        opt.step(&mut p, &[0.0, 0.0]);
        assert_eq!(p, vec![1.0, -1.0]);

        let mut opt = OptimizerState::new(1, 1e-2, 10.0);
        let mut p = vec![0.0];
        for _ in 0..100 {
            opt.step(&mut p, &[3.0]);
        }
        assert!(p[0] < 0.0);

        let opt = OptimizerState::new(2, 1e-3, 1.0);
        let mut g = vec![6.0, 8.0];
        assert_eq!(opt.clip(&mut g), 10.0);
        assert!((g.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fits_a_line() {
        let mut net = DenseNetwork::random(vec![1, 8, 1], Activation::Tanh, 5).unwrap();
        let xs: Vec<f64> = (0..16).map(|i| -1.0 + 2.0 * i as f64 / 15.0).collect();
        let loss = |n: &DenseNetwork| {
            xs.iter()
                .map(|x| (n.forward(&[*x])[0] - 2.0 * x).powi(2))
                .sum::<f64>()
                / xs.len() as f64
        };
        let start = loss(&net);
        let mut opt = OptimizerState::new(net.params().len(), 1e-2, 10.0);
        for _ in 0..2000 {
            let inputs: Vec<Vec<f64>> = xs.iter().map(|x| vec![*x]).collect();
            let ups: Vec<Vec<f64>> = xs
                .iter()
                .map(|x| vec![2.0 * (net.forward(&[*x])[0] - 2.0 * x) / xs.len() as f64])
                .collect();
            let g = net.backward(&inputs, &ups);
            let mut p = net.params().to_vec();
            opt.step(&mut p, &g);
            net.params_mut().copy_from_slice(&p);
        }
        assert!(loss(&net) * 100.0 <= start, "{} -> {}", start, loss(&net));
    }

    #[test]
    fn json_round_trip_is_exact() {
        let net = DenseNetwork::random(vec![3, 4, 2], Activation::Softplus, 8).unwrap();
        let text = serde_json::to_string(&net).unwrap();
        let back: DenseNetwork = serde_json::from_str(&text).unwrap();
        assert_eq!(net, back);
    }
}
