use crate::Tensor;
use ndarray::IxDyn;

/// How an optimizer should treat a parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Convolution / linear weights: weight decay and LARS trust scaling apply.
    Weight,
    /// Additive biases.
    Bias,
    /// Normalization scale and shift.
    Norm,
}

impl ParamKind {
    /// Biases and normalization parameters share the bias learning rate and
    /// skip weight decay and trust-ratio scaling.
    pub fn is_bias_like(self) -> bool {
        !matches!(self, ParamKind::Weight)
    }
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    pub fn new(name: impl Into<String>, kind: ParamKind, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.raw_dim());
        Self { name: name.into(), kind, value, grad }
    }

    pub fn zeros(name: impl Into<String>, kind: ParamKind, shape: &[usize]) -> Self {
        Self::new(name, kind, Tensor::zeros(IxDyn(shape)))
    }

    pub fn filled(name: impl Into<String>, kind: ParamKind, shape: &[usize], v: f64) -> Self {
        Self::new(name, kind, Tensor::from_elem(IxDyn(shape), v))
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}
