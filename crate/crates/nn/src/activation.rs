use crate::{Layer, Mode, Param, Tensor};

/// Rectified linear unit.
#[derive(Default)]
pub struct Relu {
    masks: Vec<Tensor>,
}

impl Relu {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Layer for Relu {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        let y = x.mapv(|v| v.max(0.0));
        if mode == Mode::Train {
            self.masks.push(x.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 }));
        }
        y
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let mask = self.masks.pop().expect("Relu::backward without cached forward");
        grad * &mask
    }

    fn visit_params(&mut self, _: &mut dyn FnMut(&mut Param)) {}
    fn visit_params_ref(&self, _: &mut dyn FnMut(&Param)) {}
    fn clear_cache(&mut self) {
        self.masks.clear();
    }
}

/// Gaussian error linear unit (tanh approximation).
#[derive(Default)]
pub struct Gelu {
    inputs: Vec<Tensor>,
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

impl Gelu {
    pub fn new() -> Self {
        Self::default()
    }

    fn value(x: f64) -> f64 {
        let u = SQRT_2_OVER_PI * (x + 0.044715 * x * x * x);
        0.5 * x * (1.0 + u.tanh())
    }

    fn derivative(x: f64) -> f64 {
        let u = SQRT_2_OVER_PI * (x + 0.044715 * x * x * x);
        let t = u.tanh();
        let du = SQRT_2_OVER_PI * (1.0 + 3.0 * 0.044715 * x * x);
        0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
    }
}

impl Layer for Gelu {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        if mode == Mode::Train {
            self.inputs.push(x.clone());
        }
        x.mapv(Self::value)
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let x = self.inputs.pop().expect("Gelu::backward without cached forward");
        let mut g = grad.clone();
        g.zip_mut_with(&x, |g, &x| *g *= Self::derivative(x));
        g
    }

    fn visit_params(&mut self, _: &mut dyn FnMut(&mut Param)) {}
    fn visit_params_ref(&self, _: &mut dyn FnMut(&Param)) {}
    fn clear_cache(&mut self) {
        self.inputs.clear();
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
