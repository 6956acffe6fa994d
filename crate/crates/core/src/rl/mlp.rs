//! Dense ReLU network with manual backpropagation and Adam.

use ndarray::{Array1, Array2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `in x out`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { w: Array2::zeros((inputs, outputs)), b: Array1::zeros(outputs) }
    }
}

/// ReLU between layers, linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
}

impl Mlp {
    pub fn zeros(sizes: &[usize]) -> Self {
        Self { layers: sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect() }
    }

    /// He-normal hidden layers; the output layer is scaled by `out_scale`.
    pub fn init<R: Rng>(sizes: &[usize], out_scale: f64, rng: &mut R) -> Self {
        let mut net = Self::zeros(sizes);
        let last = net.layers.len() - 1;
        for (i, layer) in net.layers.iter_mut().enumerate() {
            let fan_in = layer.w.nrows() as f64;
            let scale = if i == last { out_scale } else { 1.0 } * (2.0 / fan_in).sqrt();
            layer.w.mapv_inplace(|_| {
                let z: f64 = StandardNormal.sample(rng);
                scale * z
            });
        }
        net
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].w.nrows()];
        s.extend(self.layers.iter().map(|l| l.w.ncols()));
        s
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Parameters in checkpoint order: per layer, `w` row-major then `b`.
    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.w.iter().chain(l.b.iter()))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|l| l.w.iter_mut().chain(l.b.iter_mut()))
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        self.forward_cached(x).0
    }

    pub fn forward_cached(&self, x: &Array2<f64>) -> (Array2<f64>, MlpCache) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = h.dot(&layer.w) + &layer.b;
            inputs.push(h);
            h = if i == last { z.clone() } else { z.mapv(|v| v.max(0.0)) };
            pre.push(z);
        }
        (h, MlpCache { inputs, pre })
    }

    /// Gradients of `sum(dout * output)` w.r.t. parameters and input.
    pub fn backward(&self, cache: &MlpCache, dout: &Array2<f64>) -> (Mlp, Array2<f64>) {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = dout.clone();
        let last = self.layers.len() - 1;
        for i in (0..self.layers.len()).rev() {
            if i != last {
                Zip::from(&mut delta).and(&cache.pre[i]).for_each(|d, z| {
                    if *z <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            let gw = cache.inputs[i].t().dot(&delta);
            let gb = delta.sum_axis(Axis(0));
            let next = delta.dot(&self.layers[i].w.t());
            grads.push(Dense { w: gw, b: gb });
            delta = next;
        }
        grads.reverse();
        (Mlp { layers: grads }, delta)
    }

    pub fn scale(&mut self, k: f64) {
        for p in self.params_mut() {
            *p *= k;
        }
    }

    pub fn norm(&self) -> f64 {
        self.params().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Mlp,
    pub v: Mlp,
    pub t: u64,
}

impl Adam {
    pub fn new(shape: &Mlp, lr: f64) -> Self {
        let sizes = shape.sizes();
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: Mlp::zeros(&sizes), v: Mlp::zeros(&sizes), t: 0 }
    }

    /// Descent step on `params` along `grads`.
    pub fn step(&mut self, params: &mut Mlp, grads: &Mlp) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let step = self.lr * c2.sqrt() / c1;
        let eps = self.eps * c2.sqrt();
        let iter = params.params_mut().zip(grads.params()).zip(self.m.params_mut().zip(self.v.params_mut()));
        for ((p, g), (m, v)) in iter {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= step * *m / (v.sqrt() + eps);
        }
    }
}
