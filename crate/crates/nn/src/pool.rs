use crate::{Layer, Mode, Param, Tensor};
use ndarray::IxDyn;

/// Max pooling over NCHW input with square window, no padding beyond `padding`
/// (padded cells never win).
pub struct MaxPool2d {
    kernel: usize,
    stride: usize,
    padding: usize,
    cache: Vec<(Vec<usize>, Vec<usize>)>,
}

impl MaxPool2d {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        Self { kernel, stride, padding, cache: Vec::new() }
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        ((h + 2 * self.padding - self.kernel) / self.stride + 1, (w + 2 * self.padding - self.kernel) / self.stride + 1)
    }
}

impl Layer for MaxPool2d {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        let s = x.shape().to_vec();
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let (ho, wo) = self.output_size(h, w);
        let xs = x.as_standard_layout();
        let src = xs.as_slice().unwrap();
        let mut out = vec![f64::NEG_INFINITY; n * c * ho * wo];
        let mut arg = vec![0usize; out.len()];
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let o = (plane * ho + oy) * wo + ox;
                    for ky in 0..self.kernel {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..self.kernel {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let idx = base + iy as usize * w + ix as usize;
                            if src[idx] > out[o] {
                                out[o] = src[idx];
                                arg[o] = idx;
                            }
                        }
                    }
                }
            }
        }
        if mode == Mode::Train {
            self.cache.push((arg, s));
        }
        Tensor::from_shape_vec(IxDyn(&[n, c, ho, wo]), out).unwrap()
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let (arg, shape) = self.cache.pop().expect("MaxPool2d::backward without cached forward");
        let mut dx = vec![0.0; shape.iter().product()];
        for (g, &a) in grad.as_standard_layout().iter().zip(&arg) {
            dx[a] += g;
        }
        Tensor::from_shape_vec(IxDyn(&shape), dx).unwrap()
    }

    fn visit_params(&mut self, _: &mut dyn FnMut(&mut Param)) {}
    fn visit_params_ref(&self, _: &mut dyn FnMut(&Param)) {}
    fn clear_cache(&mut self) {
        self.cache.clear();
    }
}

/// `(N, C, H, W)` → `(N, C)` spatial mean.
#[derive(Default)]
pub struct GlobalAvgPool {
    shapes: Vec<Vec<usize>>,
}

impl GlobalAvgPool {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Layer for GlobalAvgPool {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        let s = x.shape().to_vec();
        let (n, c) = (s[0], s[1]);
        let hw = s[2] * s[3];
        let xs = x.as_standard_layout();
        let src = xs.as_slice().unwrap();
        let out: Vec<f64> = (0..n * c).map(|p| src[p * hw..(p + 1) * hw].iter().sum::<f64>() / hw as f64).collect();
        if mode == Mode::Train {
            self.shapes.push(s);
        }
        Tensor::from_shape_vec(IxDyn(&[n, c]), out).unwrap()
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let s = self.shapes.pop().expect("GlobalAvgPool::backward without cached forward");
        let hw = s[2] * s[3];
        let scale = 1.0 / hw as f64;
        let mut dx = Vec::with_capacity(s.iter().product());
        for g in grad.as_standard_layout().iter() {
            dx.extend(std::iter::repeat_n(g * scale, hw));
        }
        Tensor::from_shape_vec(IxDyn(&s), dx).unwrap()
    }

    fn visit_params(&mut self, _: &mut dyn FnMut(&mut Param)) {}
    fn visit_params_ref(&self, _: &mut dyn FnMut(&Param)) {}
    fn clear_cache(&mut self) {
        self.shapes.clear();
    }
}

/// `(N, ...)` → `(N, prod(...))`.
#[derive(Default)]
pub struct Flatten {
    shapes: Vec<Vec<usize>>,
}

impl Flatten {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Layer for Flatten {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        let n = x.shape()[0];
        if mode == Mode::Train {
            self.shapes.push(x.shape().to_vec());
        }
        x.as_standard_layout().into_owned().into_shape_with_order(IxDyn(&[n, x.len() / n.max(1)])).unwrap()
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let s = self.shapes.pop().expect("Flatten::backward without cached forward");
        grad.as_standard_layout().into_owned().into_shape_with_order(IxDyn(&s)).unwrap()
    }

    fn visit_params(&mut self, _: &mut dyn FnMut(&mut Param)) {}
    fn visit_params_ref(&self, _: &mut dyn FnMut(&Param)) {}
    fn clear_cache(&mut self) {
        self.shapes.clear();
    }
}
