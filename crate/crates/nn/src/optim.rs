use crate::{Layer, NnError, Param, Result, Tensor};
use std::f64::consts::PI;

fn ensure_finite(p: &Param) -> Result<()> {
    if p.grad.iter().all(|g| g.is_finite()) {
        Ok(())
    } else {
        Err(NnError::NonFiniteGradient(p.name.clone()))
    }
}

fn norm(t: &Tensor) -> f64 {
    t.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Layer-wise adaptive rate scaling with momentum.
///
/// For weight tensors the step direction `d = g + wd·w` is multiplied by the
/// trust ratio `eta·‖w‖/‖d‖` (1 when either norm is zero). Bias and
/// normalisation parameters use the bias learning rate, no weight decay and no
/// trust scaling.
#[derive(Debug, Clone)]
pub struct Lars {
    pub momentum: f64,
    pub weight_decay: f64,
    pub eta: f64,
    buffers: Vec<Tensor>,
}

impl Lars {
    pub fn new(momentum: f64, weight_decay: f64, eta: f64) -> Self {
        Self { momentum, weight_decay, eta, buffers: Vec::new() }
    }

    /// Applies one update to every parameter of `model`, in visit order.
    pub fn step(&mut self, model: &mut dyn Layer, lr_weights: f64, lr_biases: f64) -> Result<()> {
        let mut refs = collect_params(model);
        self.step_params(&mut refs, lr_weights, lr_biases)
    }

    pub fn step_params(&mut self, params: &mut [&mut Param], lr_weights: f64, lr_biases: f64) -> Result<()> {
        for p in params.iter() {
            ensure_finite(p)?;
        }
        if self.buffers.len() != params.len() {
            self.buffers = params.iter().map(|p| Tensor::zeros(p.value.raw_dim())).collect();
        }
        for (p, buf) in params.iter_mut().zip(&mut self.buffers) {
            let (dir, lr) = if p.kind.is_bias_like() {
                (p.grad.clone(), lr_biases)
            } else {
                let d = &p.grad + &(&p.value * self.weight_decay);
                let (wn, dn) = (norm(&p.value), norm(&d));
                let trust = if wn > 0.0 && dn > 0.0 { self.eta * wn / dn } else { 1.0 };
                (d * trust, lr_weights)
            };
            buf.zip_mut_with(&dir, |b, &d| *b = self.momentum * *b + d);
            p.value.zip_mut_with(buf, |w, &b| *w -= lr * b);
        }
        Ok(())
    }
}

/// Stochastic gradient descent with heavy-ball momentum and L2 weight decay.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    buffers: Vec<Tensor>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self { momentum, weight_decay, buffers: Vec::new() }
    }

    pub fn step(&mut self, params: &mut [&mut Param], lr: f64) -> Result<()> {
        for p in params.iter() {
            ensure_finite(p)?;
        }
        if self.buffers.len() != params.len() {
            self.buffers = params.iter().map(|p| Tensor::zeros(p.value.raw_dim())).collect();
        }
        for (p, buf) in params.iter_mut().zip(&mut self.buffers) {
            let d = &p.grad + &(&p.value * self.weight_decay);
            buf.zip_mut_with(&d, |b, &d| *b = self.momentum * *b + d);
            p.value.zip_mut_with(buf, |w, &b| *w -= lr * b);
        }
        Ok(())
    }
}

/// Adaptive moment estimation with L2 weight decay folded into the gradient.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(weight_decay: f64) -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, t: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn step(&mut self, params: &mut [&mut Param], lr: f64) -> Result<()> {
        for p in params.iter() {
            ensure_finite(p)?;
        }
        if self.m.len() != params.len() {
            self.m = params.iter().map(|p| Tensor::zeros(p.value.raw_dim())).collect();
            self.v = self.m.clone();
            self.t = 0;
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let g = &p.grad + &(&p.value * self.weight_decay);
            m.zip_mut_with(&g, |m, &g| *m = self.beta1 * *m + (1.0 - self.beta1) * g);
            v.zip_mut_with(&g, |v, &g| *v = self.beta2 * *v + (1.0 - self.beta2) * g * g);
            ndarray::Zip::from(&mut p.value).and(&*m).and(&*v).for_each(|w, &m, &v| {
                *w -= lr * (m / bc1) / ((v / bc2).sqrt() + self.eps);
            });
        }
        Ok(())
    }
}

/// Collects mutable references to every parameter of a model.
pub fn collect_params(model: &mut dyn Layer) -> Vec<&mut Param> {
    let mut ptrs: Vec<*mut Param> = Vec::new();
    model.visit_params(&mut |p| ptrs.push(p as *mut Param));
    // SAFETY: each pointer refers to a distinct parameter owned by `model`,
    // which stays mutably borrowed for the lifetime of the returned slice.
    ptrs.into_iter().map(|p| unsafe { &mut *p }).collect()
}

/// Linear warmup from 0 over `warmup` steps, then cosine decay to 0.
pub fn warmup_cosine(step: usize, total: usize, warmup: usize, base: f64) -> f64 {
    if step < warmup {
        return base * (step + 1) as f64 / warmup as f64;
    }
    let span = total.saturating_sub(warmup).max(1);
    let progress = ((step - warmup) as f64 / span as f64).min(1.0);
    base * 0.5 * (1.0 + (PI * progress).cos())
}

/// Cosine annealing from `base` to 0 over `total` steps.
pub fn cosine(step: usize, total: usize, base: f64) -> f64 {
    let progress = (step as f64 / total.max(1) as f64).min(1.0);
    base * 0.5 * (1.0 + (PI * progress).cos())
}
