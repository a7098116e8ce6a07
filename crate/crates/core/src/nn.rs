//! Small dense-network primitives over flat parameter vectors.
//!
//! All trainable parameters of a model live in one `Vec<f64>`; layers are
//! described by offsets into it. Gradients accumulate into a congruent
//! flat vector, which keeps optimizer steps, checkpointing and
//! finite-difference checks trivial.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Softplus,
    Sigmoid,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Softplus => softplus(x),
            Activation::Sigmoid => sigmoid(x),
            Activation::Identity => x,
        }
    }

    /// Derivative with respect to the preactivation.
    #[inline]
    pub fn grad(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = pre.tanh();
                1.0 - t * t
            }
            Activation::Softplus => sigmoid(pre),
            Activation::Sigmoid => {
                let s = sigmoid(pre);
                s * (1.0 - s)
            }
            Activation::Identity => 1.0,
        }
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// A dense layer as offsets into a flat parameter vector. Weights are
/// row-major `(rows x cols)`, mapping `cols` inputs to `rows` outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenseLayout {
    pub w_off: usize,
    pub b_off: usize,
    pub rows: usize,
    pub cols: usize,
}

impl DenseLayout {
    /// Reserve space for this layer at the end of a running layout.
    pub fn reserve(next: &mut usize, rows: usize, cols: usize) -> Self {
        let w_off = *next;
        let b_off = w_off + rows * cols;
        *next = b_off + rows;
        Self { w_off, b_off, rows, cols }
    }

    #[inline]
    pub fn forward(&self, params: &[f64], x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        let w = &params[self.w_off..self.w_off + self.rows * self.cols];
        let b = &params[self.b_off..self.b_off + self.rows];
        for r in 0..self.rows {
            let row = &w[r * self.cols..(r + 1) * self.cols];
            let mut acc = b[r];
            for (wi, xi) in row.iter().zip(x) {
                acc += wi * xi;
            }
            out[r] = acc;
        }
    }

    /// Accumulate parameter gradients into `tape` and (when `dx` is
    /// provided) write the input gradient.
    #[inline]
    pub fn backward(
        &self,
        params: &[f64],
        x: &[f64],
        dy: &[f64],
        tape: &mut [f64],
        mut dx: Option<&mut [f64]>,
    ) {
        if let Some(dx) = dx.as_deref_mut() {
            dx.fill(0.0);
        }
        let w = &params[self.w_off..self.w_off + self.rows * self.cols];
        for r in 0..self.rows {
            let g = dy[r];
            tape[self.b_off + r] += g;
            let wrow = &w[r * self.cols..(r + 1) * self.cols];
            let trow = &mut tape[self.w_off + r * self.cols..self.w_off + (r + 1) * self.cols];
            for (t, xi) in trow.iter_mut().zip(x) {
                *t += g * xi;
            }
            if let Some(dx) = dx.as_deref_mut() {
                for (d, wi) in dx.iter_mut().zip(wrow) {
                    *d += g * wi;
                }
            }
        }
    }

    /// Fan-in-scaled uniform init: weights from U(-sqrt(3/cols),
    /// sqrt(3/cols)) so the per-layer weight variance is 1/fan_in; biases
    /// start at zero.
    pub fn init(&self, params: &mut [f64], rng: &mut impl Rng) {
        let bound = (3.0 / self.cols as f64).sqrt();
        for i in 0..self.rows * self.cols {
            params[self.w_off + i] = rng.gen_range(-bound..bound);
        }
        for i in 0..self.rows {
            params[self.b_off + i] = 0.0;
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 5e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

/// First/second-moment state for Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, cfg: &AdamConfig, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
}

/// A plain sequential MLP used by the 1-D self-training testbed and the
/// layer-level tests: hidden activation between layers, linear output.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<DenseLayout>,
    pub hidden: Activation,
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct MlpCache {
    /// Input to each layer (post-activation of the previous one).
    inputs: Vec<Vec<f64>>,
    /// Preactivation of each layer.
    pres: Vec<Vec<f64>>,
}

impl Mlp {
    pub fn init(sizes: &[usize], hidden: Activation, rng: &mut impl Rng) -> Self {
        assert!(sizes.len() >= 2);
        let mut next = 0;
        let layers: Vec<DenseLayout> = sizes
            .windows(2)
            .map(|w| DenseLayout::reserve(&mut next, w[1], w[0]))
            .collect();
        let mut params = vec![0.0; next];
        for l in &layers {
            l.init(&mut params, rng);
        }
        Self { layers, hidden, params }
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn forward(&self, x: &[f64], cache: &mut MlpCache) -> Vec<f64> {
        cache.inputs.clear();
        cache.pres.clear();
        let mut cur = x.to_vec();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut pre = vec![0.0; l.rows];
            l.forward(&self.params, &cur, &mut pre);
            cache.inputs.push(cur);
            if i < last {
                cur = pre.iter().map(|&p| self.hidden.apply(p)).collect();
            } else {
                cur = pre.clone();
            }
            cache.pres.push(pre);
        }
        cur
    }

    /// Accumulate dLoss/dparams into `tape` given dLoss/doutput.
    pub fn backward(&self, cache: &MlpCache, dy: &[f64], tape: &mut [f64]) {
        let mut grad = dy.to_vec();
        for i in (0..self.layers.len()).rev() {
            let l = &self.layers[i];
            if i < self.layers.len() - 1 {
                for (g, pre) in grad.iter_mut().zip(&cache.pres[i]) {
                    *g *= self.hidden.grad(*pre);
                }
            }
            let mut dx = vec![0.0; l.cols];
            let need_dx = i > 0;
            l.backward(
                &self.params,
                &cache.inputs[i],
                &grad,
                tape,
                need_dx.then_some(dx.as_mut_slice()),
            );
            grad = dx;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use approx::assert_relative_eq;

    #[test]
    fn linear_layer_gradient_is_input_outer_product() {
        let mut next = 0;
        let l = DenseLayout::reserve(&mut next, 2, 3);
        let mut params = vec![0.0; next];
        params[l.w_off..l.w_off + 6].copy_from_slice(&[0.5, -1.0, 2.0, 0.0, 1.5, -0.5]);
        let x = [1.0, -2.0, 0.5];
        let dy = [2.0, -1.0];
        let mut tape = vec![0.0; next];
        let mut dx = [0.0; 3];
        l.backward(&params, &x, &dy, &mut tape, Some(&mut dx));
        // dW = dy outer x
        assert_eq!(&tape[l.w_off..l.w_off + 6], &[2.0, -4.0, 1.0, -1.0, 2.0, -0.5]);
        assert_eq!(&tape[l.b_off..l.b_off + 2], &[2.0, -1.0]);
        // dx = W^T dy
        assert_relative_eq!(dx[0], 0.5 * 2.0 + 0.0 * -1.0, epsilon = 1e-15);
        assert_relative_eq!(dx[1], -1.0 * 2.0 + 1.5 * -1.0, epsilon = 1e-15);
        assert_relative_eq!(dx[2], 2.0 * 2.0 + -0.5 * -1.0, epsilon = 1e-15);
    }

    #[test]
    fn mlp_gradients_match_finite_differences() {
        let mut rng = seed::rng(11);
        let mut net = Mlp::init(&[2, 8, 8, 1], Activation::Tanh, &mut rng);
        let x = [0.3, -0.9];
        let target = 0.7;
        let loss = |net: &Mlp| {
            let mut c = MlpCache::default();
            let y = net.forward(&x, &mut c)[0];
            (y - target) * (y - target)
        };
        let mut cache = MlpCache::default();
        let y = net.forward(&x, &mut cache)[0];
        let mut tape = vec![0.0; net.n_params()];
        net.backward(&cache, &[2.0 * (y - target)], &mut tape);

        let h = 1e-5;
        for i in (0..net.n_params()).step_by(7) {
            let orig = net.params[i];
            net.params[i] = orig + h;
            let up = loss(&net);
            net.params[i] = orig - h;
            let down = loss(&net);
            net.params[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let denom = fd.abs().max(tape[i].abs()).max(1e-8);
            assert!(
                ((fd - tape[i]) / denom).abs() < 1e-5,
                "param {i}: fd = {fd}, analytic = {}",
                tape[i]
            );
        }
    }

    #[test]
    fn adam_zero_gradient_leaves_params_unchanged() {
        let mut params = vec![1.0, -2.0, 3.0];
        let before = params.clone();
        let mut st = AdamState::new(3);
        st.step(&AdamConfig::default(), &mut params, &[0.0, 0.0, 0.0]);
        assert_eq!(params, before);
    }

    #[test]
    fn adam_constant_gradient_step_approaches_lr() {
        let cfg = AdamConfig::with_lr(1e-2);
        let mut params = vec![0.0];
        let mut st = AdamState::new(1);
        for _ in 0..200 {
            st.step(&cfg, &mut params, &[3.5]);
        }
        let before = params[0];
        st.step(&cfg, &mut params, &[3.5]);
        let step = (params[0] - before).abs();
        assert_relative_eq!(step, cfg.lr, max_relative = 1e-3);
    }

    #[test]
    fn adam_converges_on_quadratic_bowl() {
        // f(a, b) = (a - 1.5)^2 + 4 (b + 0.25)^2, minimum at (1.5, -0.25).
        let cfg = AdamConfig::with_lr(5e-3);
        let mut p = vec![-3.0, 2.0];
        let mut st = AdamState::new(2);
        for _ in 0..5000 {
            let g = [2.0 * (p[0] - 1.5), 8.0 * (p[1] + 0.25)];
            st.step(&cfg, &mut p, &g);
        }
        assert!((p[0] - 1.5).abs() < 1e-6, "a = {}", p[0]);
        assert!((p[1] + 0.25).abs() < 1e-6, "b = {}", p[1]);
    }

    #[test]
    fn fan_in_variance_near_one_over_fan_in_at_width_256() {
        let mut rng = seed::rng(3);
        let net = Mlp::init(&[256, 256, 1], Activation::Relu, &mut rng);
        let l = &net.layers[0];
        let w = &net.params[l.w_off..l.w_off + l.rows * l.cols];
        let mean: f64 = w.iter().sum::<f64>() / w.len() as f64;
        let var: f64 = w.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / w.len() as f64;
        let expect = 1.0 / 256.0;
        assert!(
            (var - expect).abs() / expect < 0.2,
            "weight variance {var} vs expected {expect}"
        );
    }
}
