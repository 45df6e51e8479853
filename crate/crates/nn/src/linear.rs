use crate::{init, Layer, Mode, Param, ParamKind, Tensor};
use ndarray::{Array2, Axis, Ix2, IxDyn};
use rand::Rng;

/// Fully connected layer `y = x Wᵀ + b` applied over the last axis.
///
/// Inputs of rank > 2 are treated as a batch of rows over all leading axes.
pub struct Linear {
    pub weight: Param,
    pub bias: Option<Param>,
    inputs: Vec<(Array2<f64>, Vec<usize>)>,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(name: &str, in_dim: usize, out_dim: usize, bias: bool, rng: &mut R) -> Self {
        let w = init::fan_in_uniform(&[out_dim, in_dim], in_dim, rng);
        let b = bias.then(|| Param::new(format!("{name}.bias"), ParamKind::Bias, init::fan_in_uniform(&[out_dim], in_dim, rng)));
        Self { weight: Param::new(format!("{name}.weight"), ParamKind::Weight, w), bias: b, inputs: Vec::new() }
    }

    pub fn from_params(weight: Param, bias: Option<Param>) -> Self {
        Self { weight, bias, inputs: Vec::new() }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.value.shape()[0]
    }

    fn w(&self) -> ndarray::ArrayView2<'_, f64> {
        self.weight.value.view().into_dimensionality::<Ix2>().expect("linear weight is 2-D")
    }
}

pub(crate) fn as_rows(x: &Tensor) -> Array2<f64> {
    let d = *x.shape().last().expect("rank >= 1");
    let n = x.len() / d.max(1);
    x.as_standard_layout()
        .into_owned()
        .into_shape_with_order((n, d))
        .expect("contiguous reshape")
}

impl Layer for Linear {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        let shape = x.shape().to_vec();
        let rows = as_rows(x);
        assert_eq!(rows.ncols(), self.in_dim(), "{}: input width", self.weight.name);
        let mut y = rows.dot(&self.w().t());
        if let Some(b) = &self.bias {
            y += &b.value.view().into_dimensionality::<ndarray::Ix1>().unwrap();
        }
        let mut out_shape = shape.clone();
        *out_shape.last_mut().unwrap() = self.out_dim();
        if mode == Mode::Train {
            self.inputs.push((rows, shape));
        }
        y.into_dyn().into_shape_with_order(IxDyn(&out_shape)).unwrap()
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let (x, shape) = self.inputs.pop().expect("Linear::backward without cached forward");
        let g = as_rows(grad);
        let dw = g.t().dot(&x);
        self.weight.grad += &dw.into_dyn();
        if let Some(b) = &mut self.bias {
            b.grad += &g.sum_axis(Axis(0)).into_dyn();
        }
        let dx = g.dot(&self.w());
        dx.into_dyn().into_shape_with_order(IxDyn(&shape)).unwrap()
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        if let Some(b) = &mut self.bias {
            f(b);
        }
    }

    fn visit_params_ref(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.weight);
        if let Some(b) = &self.bias {
            f(b);
        }
    }

    fn clear_cache(&mut self) {
        self.inputs.clear();
    }
}
