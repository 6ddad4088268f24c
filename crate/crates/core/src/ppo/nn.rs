//! Dense ReLU networks over a flat parameter vector, and Adam.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Fully connected network with ReLU hidden layers and a linear output.
/// Layer `l` stores its weights row-major (`out x in`) followed by biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub params: Vec<f64>,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct Cache {
    /// Input to each layer, plus the final output.
    acts: Vec<Vec<f64>>,
}

impl Mlp {
    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "need input and output sizes");
        let n = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Self { sizes: sizes.to_vec(), params: vec![0.0; n] }
    }

    /// He-normal weights, zero biases; the output layer is scaled by
    /// `out_scale`.
    pub fn init(sizes: &[usize], out_scale: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut m = Self::zeros(sizes);
        let layers = sizes.len() - 1;
        let mut off = 0;
        for l in 0..layers {
            let (i, o) = (sizes[l], sizes[l + 1]);
            let std = (2.0 / i as f64).sqrt() * if l + 1 == layers { out_scale } else { 1.0 };
            for w in &mut m.params[off..off + i * o] {
                let z: f64 = StandardNormal.sample(rng);
                *w = std * z;
            }
            off += i * o + o;
        }
        m
    }

    /// Uniform weights in `[-scale, scale]`, for tests.
    pub fn random_uniform(sizes: &[usize], scale: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut m = Self::zeros(sizes);
        for p in &mut m.params {
            *p = rng.random_range(-scale..scale);
        }
        m
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_cached(x).0
    }

    pub fn forward_cached(&self, x: &[f64]) -> (Vec<f64>, Cache) {
        assert_eq!(x.len(), self.sizes[0], "input dimension");
        let layers = self.sizes.len() - 1;
        let mut acts = Vec::with_capacity(layers + 1);
        acts.push(x.to_vec());
        let mut off = 0;
        for l in 0..layers {
            let (i, o) = (self.sizes[l], self.sizes[l + 1]);
            let (w, b) = (&self.params[off..off + i * o], &self.params[off + i * o..off + i * o + o]);
            let input = &acts[l];
            let mut out: Vec<f64> = (0..o)
                .map(|r| b[r] + w[r * i..(r + 1) * i].iter().zip(input).map(|(a, c)| a * c).sum::<f64>())
                .collect();
            if l + 1 < layers {
                for v in &mut out {
                    *v = v.max(0.0);
                }
            }
            acts.push(out);
            off += i * o + o;
        }
        (acts[layers].clone(), Cache { acts })
    }

    /// Accumulate `d(output . dout)/d(params)` into `grad`.
    pub fn backward(&self, cache: &Cache, dout: &[f64], grad: &mut [f64]) {
        let layers = self.sizes.len() - 1;
        let offsets: Vec<usize> = self
            .sizes
            .windows(2)
            .scan(0, |acc, w| {
                let o = *acc;
                *acc += w[0] * w[1] + w[1];
                Some(o)
            })
            .collect();
        let mut delta = dout.to_vec();
        for l in (0..layers).rev() {
            let (i, o) = (self.sizes[l], self.sizes[l + 1]);
            let off = offsets[l];
            let input = &cache.acts[l];
            for r in 0..o {
                let d = delta[r];
                if d == 0.0 {
                    continue;
                }
                for (g, x) in grad[off + r * i..off + (r + 1) * i].iter_mut().zip(input) {
                    *g += d * x;
                }
                grad[off + i * o + r] += d;
            }
            if l == 0 {
                break;
            }
            let w = &self.params[off..off + i * o];
            delta = (0..i)
                .map(|c| {
                    if input[c] <= 0.0 {
                        0.0
                    } else {
                        (0..o).map(|r| w[r * i + c] * delta[r]).sum()
                    }
                })
                .collect();
        }
    }

    pub fn is_healthy(&self, max_abs: f64) -> bool {
        self.params.iter().all(|p| p.is_finite() && p.abs() <= max_abs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(n: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { lr, beta1, beta2, eps, t: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }

    /// Descend along `grad`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params.iter_mut().zip(grad).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn zero_and_linear() {
        let m = Mlp::zeros(&[3, 4, 1]);
        assert_eq!(m.forward(&[1.0, 2.0, 3.0]), vec![0.0]);
        let mut lin = Mlp::zeros(&[3, 1]);
        lin.params = vec![0.5, -1.0, 2.0, 0.0];
        assert_eq!(lin.forward(&[2.0, 1.0, 0.5]), vec![1.0]);
    }

    #[test]
    fn adam_moves_against_gradient() {
        let mut p = vec![1.0, -1.0];
        let mut a = Adam::new(2, 0.1, 0.9, 0.999, 1e-8);
        a.step(&mut p, &[2.0, -3.0]);
        assert!((p[0] - 0.9).abs() < 1e-6 && (p[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn init_is_seeded() {
        let a = Mlp::init(&[4, 8, 1], 0.01, &mut ChaCha8Rng::seed_from_u64(3));
        let b = Mlp::init(&[4, 8, 1], 0.01, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
        assert!(a.params.iter().any(|p| *p != 0.0));
    }
}
