use crate::linear::as_rows;
use crate::{Layer, Mode, Param, ParamKind, Tensor};
use ndarray::{Array1, Array2, Axis, Ix1, IxDyn};

/// Batch normalisation over the channel axis of `(N, C)` or `(N, C, H, W)` input.
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub momentum: f64,
    pub eps: f64,
    cache: Vec<BnCache>,
}

struct BnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
    shape: Vec<usize>,
}

/// `(N, C)` or `(N, C, H, W)` → rows of channel values, `(N·H·W, C)`.
fn to_channel_rows(x: &Tensor) -> Array2<f64> {
    match x.ndim() {
        2 => x.view().into_dimensionality::<ndarray::Ix2>().unwrap().to_owned(),
        4 => {
            let s = x.shape();
            let c = s[1];
            x.view()
                .permuted_axes(IxDyn(&[0, 2, 3, 1]))
                .as_standard_layout()
                .into_owned()
                .into_shape_with_order((x.len() / c, c))
                .unwrap()
        }
        r => panic!("BatchNorm expects rank 2 or 4 input, got rank {r}"),
    }
}

fn from_channel_rows(rows: Array2<f64>, shape: &[usize]) -> Tensor {
    match shape.len() {
        2 => rows.into_dyn(),
        _ => {
            let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
            rows.into_shape_with_order(IxDyn(&[n, h, w, c]))
                .unwrap()
                .permuted_axes(IxDyn(&[0, 3, 1, 2]))
                .as_standard_layout()
                .into_owned()
        }
    }
}

impl BatchNorm {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            gamma: Param::filled(format!("{name}.gamma"), ParamKind::Norm, &[channels], 1.0),
            beta: Param::zeros(format!("{name}.beta"), ParamKind::Norm, &[channels]),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            momentum: 0.1,
            eps: 1e-5,
            cache: Vec::new(),
        }
    }

    fn g(&self) -> ndarray::ArrayView1<'_, f64> {
        self.gamma.value.view().into_dimensionality::<Ix1>().unwrap()
    }

    fn b(&self) -> ndarray::ArrayView1<'_, f64> {
        self.beta.value.view().into_dimensionality::<Ix1>().unwrap()
    }
}

impl Layer for BatchNorm {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        let shape = x.shape().to_vec();
        let rows = to_channel_rows(x);
        let m = rows.nrows() as f64;
        let (mean, var) = match mode {
            Mode::Train => {
                let mean = rows.mean_axis(Axis(0)).unwrap();
                let var = rows.var_axis(Axis(0), 0.0);
                let unbiased = if m > 1.0 { &var * (m / (m - 1.0)) } else { var.clone() };
                self.running_mean = &self.running_mean * (1.0 - self.momentum) + &mean * self.momentum;
                self.running_var = &self.running_var * (1.0 - self.momentum) + &unbiased * self.momentum;
                (mean, var)
            }
            Mode::Eval => (self.running_mean.clone(), self.running_var.clone()),
        };
        let inv_std = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        let xhat = (&rows - &mean) * &inv_std;
        let y = &xhat * &self.g() + &self.b();
        let out = from_channel_rows(y, &shape);
        if mode == Mode::Train {
            self.cache.push(BnCache { xhat, inv_std, shape });
        }
        out
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let BnCache { xhat, inv_std, shape } = self.cache.pop().expect("BatchNorm::backward without cached forward");
        let dy = to_channel_rows(grad);
        let m = dy.nrows() as f64;
        let dbeta = dy.sum_axis(Axis(0));
        let dgamma = (&dy * &xhat).sum_axis(Axis(0));
        let dxhat = &dy * &self.g();
        let sum_dxhat = dxhat.sum_axis(Axis(0));
        let sum_dxhat_xhat = (&dxhat * &xhat).sum_axis(Axis(0));
        let dx = ((&dxhat * m - &sum_dxhat) - &xhat * &sum_dxhat_xhat) * &(&inv_std / m);
        self.gamma.grad += &dgamma.into_dyn();
        self.beta.grad += &dbeta.into_dyn();
        from_channel_rows(dx, &shape)
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.gamma);
        f(&mut self.beta);
    }

    fn visit_params_ref(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.gamma);
        f(&self.beta);
    }

    fn clear_cache(&mut self) {
        self.cache.clear();
    }
}

/// Layer normalisation over the last axis.
pub struct LayerNorm {
    pub gamma: Param,
    pub beta: Param,
    pub eps: f64,
    cache: Vec<(Array2<f64>, Array1<f64>, Vec<usize>)>,
}

impl LayerNorm {
    pub fn new(name: &str, dim: usize) -> Self {
        Self {
            gamma: Param::filled(format!("{name}.gamma"), ParamKind::Norm, &[dim], 1.0),
            beta: Param::zeros(format!("{name}.beta"), ParamKind::Norm, &[dim]),
            eps: 1e-5,
            cache: Vec::new(),
        }
    }
}

impl Layer for LayerNorm {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        let shape = x.shape().to_vec();
        let rows = as_rows(x);
        let mean = rows.mean_axis(Axis(1)).unwrap().insert_axis(Axis(1));
        let var = rows.var_axis(Axis(1), 0.0);
        let inv_std = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        let xhat = (&rows - &mean) * &inv_std.view().insert_axis(Axis(1));
        let g = self.gamma.value.view().into_dimensionality::<Ix1>().unwrap();
        let b = self.beta.value.view().into_dimensionality::<Ix1>().unwrap();
        let y = &xhat * &g + &b;
        if mode == Mode::Train {
            self.cache.push((xhat, inv_std, shape.clone()));
        }
        y.into_dyn().into_shape_with_order(IxDyn(&shape)).unwrap()
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let (xhat, inv_std, shape) = self.cache.pop().expect("LayerNorm::backward without cached forward");
        let dy = as_rows(grad);
        let d = dy.ncols() as f64;
        self.gamma.grad += &(&dy * &xhat).sum_axis(Axis(0)).into_dyn();
        self.beta.grad += &dy.sum_axis(Axis(0)).into_dyn();
        let g = self.gamma.value.view().into_dimensionality::<Ix1>().unwrap();
        let dxhat = &dy * &g;
        let mean_d = dxhat.sum_axis(Axis(1)).insert_axis(Axis(1)) / d;
        let mean_dx = (&dxhat * &xhat).sum_axis(Axis(1)).insert_axis(Axis(1)) / d;
        let dx = (dxhat - &mean_d - &xhat * &mean_dx) * &inv_std.view().insert_axis(Axis(1));
        dx.into_dyn().into_shape_with_order(IxDyn(&shape)).unwrap()
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.gamma);
        f(&mut self.beta);
    }

    fn visit_params_ref(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.gamma);
        f(&self.beta);
    }

    fn clear_cache(&mut self) {
        self.cache.clear();
    }
}
