use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::LearnError;

const MAGIC: &[u8; 8] = b"HFTNET\0\x01";

/// Fully connected network with ReLU hidden layers and a linear output head.
///
/// All parameters live in one flat vector; layer `l` stores its `out x in` weight matrix
/// row-major followed by its bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueNet {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Activations kept from a batched forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    batch: usize,
    /// `layers[0]` is the input; `layers[l]` the post-activation output of layer `l`.
    layers: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.layers.last().expect("non-empty")
    }
}

impl ValueNet {
    /// He-uniform weights and zero biases.
    pub fn new(sizes: &[usize], seed: u64) -> Result<Self, LearnError> {
        let mut net = Self::zeros(sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in 0..net.sizes.len() - 1 {
            let (fan_in, fan_out) = (net.sizes[l], net.sizes[l + 1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            let off = net.offset(l);
            for w in &mut net.params[off..off + fan_in * fan_out] {
                *w = rng.random_range(-bound..bound);
            }
        }
        Ok(net)
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self, LearnError> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(LearnError::Shape(format!("bad layer sizes {sizes:?}")));
        }
        let n = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Ok(Self {
            sizes: sizes.to_vec(),
            params: vec![0.0; n],
        })
    }

    pub fn from_params(sizes: &[usize], params: Vec<f64>) -> Result<Self, LearnError> {
        let mut net = Self::zeros(sizes)?;
        if params.len() != net.params.len() {
            return Err(LearnError::Shape(format!(
                "expected {} parameters, got {}",
                net.params.len(),
                params.len()
            )));
        }
        net.params = params;
        Ok(net)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        self.sizes[self.sizes.len() - 1]
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn offset(&self, layer: usize) -> usize {
        self.sizes[..=layer]
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum::<usize>()
    }

    fn layer_params(&self, l: usize) -> (&[f64], &[f64]) {
        let off = self.offset(l);
        let (i, o) = (self.sizes[l], self.sizes[l + 1]);
        (&self.params[off..off + i * o], &self.params[off + i * o..off + i * o + o])
    }

    /// Q-values for one input vector.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, LearnError> {
        if input.len() != self.input_dim() {
            return Err(LearnError::Shape(format!(
                "input has {} values, network expects {}",
                input.len(),
                self.input_dim()
            )));
        }
        Ok(self.forward_batch(input, 1))
    }

    /// Outputs for `batch` inputs laid out row-major.
    pub fn forward_batch(&self, inputs: &[f64], batch: usize) -> Vec<f64> {
        let mut cur = inputs.to_vec();
        let last = self.sizes.len() - 2;
        for l in 0..=last {
            cur = self.dense(l, &cur, batch, l != last);
        }
        cur
    }

    pub fn forward_train(&self, inputs: &[f64], batch: usize) -> ForwardCache {
        let mut layers = vec![inputs.to_vec()];
        let last = self.sizes.len() - 2;
        for l in 0..=last {
            let next = self.dense(l, &layers[l], batch, l != last);
            layers.push(next);
        }
        ForwardCache { batch, layers }
    }

    fn dense(&self, l: usize, x: &[f64], batch: usize, relu: bool) -> Vec<f64> {
        let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
        let (w, b) = self.layer_params(l);
        let mut y = vec![0.0; batch * n_out];
        for s in 0..batch {
            let xs = &x[s * n_in..(s + 1) * n_in];
            let ys = &mut y[s * n_out..(s + 1) * n_out];
            for (o, yo) in ys.iter_mut().enumerate() {
                let row = &w[o * n_in..(o + 1) * n_in];
                let mut acc = b[o];
                for (wi, xi) in row.iter().zip(xs) {
                    acc += wi * xi;
                }
                *yo = if relu && acc < 0.0 { 0.0 } else { acc };
            }
        }
        y
    }

    /// Gradient of a scalar loss with respect to all parameters, given `d loss / d output`.
    pub fn backward(&self, cache: &ForwardCache, d_out: &[f64]) -> Vec<f64> {
        let batch = cache.batch;
        let mut grads = vec![0.0; self.params.len()];
        let mut delta = d_out.to_vec();
        for l in (0..self.sizes.len() - 1).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = self.offset(l);
            let x = &cache.layers[l];
            {
                let (gw, gb) = grads[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
                for s in 0..batch {
                    let xs = &x[s * n_in..(s + 1) * n_in];
                    for o in 0..n_out {
                        let d = delta[s * n_out + o];
                        if d == 0.0 {
                            continue;
                        }
                        gb[o] += d;
                        for (g, xi) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(xs) {
                            *g += d * xi;
                        }
                    }
                }
            }
            if l == 0 {
                break;
            }
            let (w, _) = self.layer_params(l);
            let mut prev = vec![0.0; batch * n_in];
            for s in 0..batch {
                let ps = &mut prev[s * n_in..(s + 1) * n_in];
                for o in 0..n_out {
                    let d = delta[s * n_out + o];
                    if d == 0.0 {
                        continue;
                    }
                    for (p, wi) in ps.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                        *p += d * wi;
                    }
                }
            }
            // ReLU gate of the hidden layer feeding this one
            for (p, a) in prev.iter_mut().zip(x) {
                if *a <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
        grads
    }

    pub fn write_binary(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.sizes.len() as u64).to_le_bytes())?;
        for &s in &self.sizes {
            w.write_all(&(s as u64).to_le_bytes())?;
        }
        for p in &self.params {
            w.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary(mut r: impl Read) -> Result<Self, LearnError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(LearnError::Checkpoint("bad magic".into()));
        }
        let mut word = [0u8; 8];
        r.read_exact(&mut word)?;
        let n_layers = u64::from_le_bytes(word) as usize;
        if n_layers > 64 {
            return Err(LearnError::Checkpoint("implausible layer count".into()));
        }
        let mut sizes = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            r.read_exact(&mut word)?;
            sizes.push(u64::from_le_bytes(word) as usize);
        }
        let mut net = Self::zeros(&sizes)?;
        for p in net.params.iter_mut() {
            r.read_exact(&mut word)?;
            *p = f64::from_le_bytes(word);
        }
        Ok(net)
    }
}

/// `target <- tau * net + (1 - tau) * target`, elementwise.
pub fn soft_update(target: &mut ValueNet, net: &ValueNet, tau: f64) -> Result<(), LearnError> {
    if target.sizes != net.sizes {
        return Err(LearnError::Shape("soft update between different architectures".into()));
    }
    for (t, &p) in target.params.iter_mut().zip(&net.params) {
        *t = tau * p + (1.0 - tau) * *t;
    }
    Ok(())
}

/// Adaptive moment estimation.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}
