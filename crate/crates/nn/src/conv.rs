use crate::{init, Layer, Mode, Param, ParamKind, Tensor};
use ndarray::{Array2, Axis, Ix2, IxDyn};
use rand::Rng;

/// 2-D convolution over NCHW tensors, square kernel, zero padding.
///
/// Implemented as im2col followed by a single matrix product over the whole
/// batch.
pub struct Conv2d {
    pub weight: Param,
    pub bias: Option<Param>,
    kernel: usize,
    stride: usize,
    padding: usize,
    cache: Vec<(Array2<f64>, [usize; 4])>,
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    s: usize,
    p: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn new(shape: [usize; 4], k: usize, s: usize, p: usize) -> Self {
        let [n, c, h, w] = shape;
        assert!(h + 2 * p >= k && w + 2 * p >= k, "conv input {h}x{w} smaller than kernel {k}");
        let ho = (h + 2 * p - k) / s + 1;
        let wo = (w + 2 * p - k) / s + 1;
        Self { n, c, h, w, k, s, p, ho, wo }
    }
}

fn im2col(x: &[f64], g: Geometry) -> Array2<f64> {
    let hw = g.ho * g.wo;
    let mut cols = Array2::<f64>::zeros((g.c * g.k * g.k, g.n * hw));
    for ci in 0..g.c {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let mut r = cols.row_mut(row);
                let dst = r.as_slice_mut().expect("row-major");
                for ni in 0..g.n {
                    let plane = &x[(ni * g.c + ci) * g.h * g.w..][..g.h * g.w];
                    let out = &mut dst[ni * hw..][..hw];
                    for oy in 0..g.ho {
                        let iy = (oy * g.s + ky) as isize - g.p as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * g.w..][..g.w];
                        let orow = &mut out[oy * g.wo..][..g.wo];
                        for (ox, o) in orow.iter_mut().enumerate() {
                            let ix = (ox * g.s + kx) as isize - g.p as isize;
                            if ix >= 0 && ix < g.w as isize {
                                *o = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &Array2<f64>, g: Geometry) -> Vec<f64> {
    let hw = g.ho * g.wo;
    let mut x = vec![0.0; g.n * g.c * g.h * g.w];
    for ci in 0..g.c {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let r = cols.row(row);
                let src = r.as_slice().expect("row-major");
                for ni in 0..g.n {
                    let plane = &mut x[(ni * g.c + ci) * g.h * g.w..][..g.h * g.w];
                    let inp = &src[ni * hw..][..hw];
                    for oy in 0..g.ho {
                        let iy = (oy * g.s + ky) as isize - g.p as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * g.w..][..g.w];
                        for ox in 0..g.wo {
                            let ix = (ox * g.s + kx) as isize - g.p as isize;
                            if ix >= 0 && ix < g.w as isize {
                                dst[ix as usize] += inp[oy * g.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_ch * kernel * kernel;
        let w = init::kaiming_normal(&[out_ch, in_ch, kernel, kernel], fan_in, rng);
        let bias = bias.then(|| Param::zeros(format!("{name}.bias"), ParamKind::Bias, &[out_ch]));
        Self {
            weight: Param::new(format!("{name}.weight"), ParamKind::Weight, w),
            bias,
            kernel,
            stride,
            padding,
            cache: Vec::new(),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        let g = Geometry::new([1, self.in_channels(), h, w], self.kernel, self.stride, self.padding);
        (g.ho, g.wo)
    }

    fn w2(&self) -> ndarray::ArrayView2<'_, f64> {
        let co = self.out_channels();
        let len = self.weight.value.len();
        self.weight
            .value
            .view()
            .into_shape_with_order((co, len / co))
            .expect("contiguous weight")
            .into_dimensionality::<Ix2>()
            .unwrap()
    }
}

fn shape4(x: &Tensor) -> [usize; 4] {
    let s = x.shape();
    assert_eq!(s.len(), 4, "expected NCHW tensor, got shape {s:?}");
    [s[0], s[1], s[2], s[3]]
}

impl Layer for Conv2d {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        let shape = shape4(x);
        assert_eq!(shape[1], self.in_channels(), "{}: input channels", self.weight.name);
        let g = Geometry::new(shape, self.kernel, self.stride, self.padding);
        let xs = x.as_standard_layout();
        let cols = im2col(xs.as_slice().unwrap(), g);
        let y2 = self.w2().dot(&cols);
        let hw = g.ho * g.wo;
        let co = self.out_channels();
        let mut out = vec![0.0; g.n * co * hw];
        for c in 0..co {
            let row = y2.row(c);
            let src = row.as_slice().unwrap();
            let b = self.bias.as_ref().map_or(0.0, |b| b.value[c]);
            for ni in 0..g.n {
                let dst = &mut out[(ni * co + c) * hw..][..hw];
                for (d, s) in dst.iter_mut().zip(&src[ni * hw..][..hw]) {
                    *d = s + b;
                }
            }
        }
        if mode == Mode::Train {
            self.cache.push((cols, shape));
        }
        Tensor::from_shape_vec(IxDyn(&[g.n, co, g.ho, g.wo]), out).unwrap()
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let (cols, shape) = self.cache.pop().expect("Conv2d::backward without cached forward");
        let g = Geometry::new(shape, self.kernel, self.stride, self.padding);
        let co = self.out_channels();
        let hw = g.ho * g.wo;
        let gs = grad.as_standard_layout();
        let gsl = gs.as_slice().unwrap();
        let mut dy2 = Array2::<f64>::zeros((co, g.n * hw));
        for c in 0..co {
            let mut row = dy2.row_mut(c);
            let dst = row.as_slice_mut().unwrap();
            for ni in 0..g.n {
                dst[ni * hw..][..hw].copy_from_slice(&gsl[(ni * co + c) * hw..][..hw]);
            }
        }
        let dw = dy2.dot(&cols.t());
        let wshape = self.weight.value.raw_dim();
        self.weight.grad += &dw.into_dyn().into_shape_with_order(wshape).unwrap();
        if let Some(b) = &mut self.bias {
            b.grad += &dy2.sum_axis(Axis(1)).into_dyn();
        }
        let dcols = self.w2().t().dot(&dy2);
        let dx = col2im(&dcols, g);
        Tensor::from_shape_vec(IxDyn(&shape), dx).unwrap()
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
        self.cache.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    // Direct seven-loop convolution.
    fn naive(x: &Tensor, w: &Tensor, b: &[f64], s: usize, p: usize) -> Tensor {
        let [n, c, h, wd] = shape4(x);
        let (co, k) = (w.shape()[0], w.shape()[2]);
        let ho = (h + 2 * p - k) / s + 1;
        let wo = (wd + 2 * p - k) / s + 1;
        let mut y = Tensor::zeros(IxDyn(&[n, co, ho, wo]));
        for ni in 0..n {
            for o in 0..co {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = b[o];
                        for ci in 0..c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * s + ky) as isize - p as isize;
                                    let ix = (ox * s + kx) as isize - p as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                        acc += x[[ni, ci, iy as usize, ix as usize]] * w[[o, ci, ky, kx]];
                                    }
                                }
                            }
                        }
                        y[[ni, o, oy, ox]] = acc;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn matches_naive_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(k, s, p) in &[(3, 1, 1), (3, 2, 1), (1, 1, 0), (4, 4, 0), (7, 2, 3)] {
            let mut conv = Conv2d::new("c", 2, 3, k, s, p, true, &mut rng);
            conv.bias.as_mut().unwrap().value = init::normal(&[3], 1.0, &mut rng);
            let x = init::normal(&[2, 2, 9, 8], 1.0, &mut rng);
            let y = conv.forward(&x, Mode::Eval);
            let b: Vec<f64> = conv.bias.as_ref().unwrap().value.iter().copied().collect();
            let expected = naive(&x, &conv.weight.value, &b, s, p);
            assert_eq!(y.shape(), expected.shape());
            for (a, e) in y.iter().zip(expected.iter()) {
                assert!((a - e).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut conv = Conv2d::new("c", 2, 2, 3, 2, 1, true, &mut rng);
        let x = init::normal(&[1, 2, 5, 5], 1.0, &mut rng);
        let probe = init::normal(&[1, 2, 3, 3], 1.0, &mut rng);
        let y = conv.forward(&x, Mode::Train);
        assert_eq!(y.shape(), probe.shape());
        let dx = conv.backward(&probe);
        let h = 1e-6;
        for i in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp.as_slice_mut().unwrap()[i] += h;
            xm.as_slice_mut().unwrap()[i] -= h;
            let fp = (&conv.forward(&xp, Mode::Eval) * &probe).sum();
            let fm = (&conv.forward(&xm, Mode::Eval) * &probe).sum();
            let fd = (fp - fm) / (2.0 * h);
            assert!((fd - dx.as_slice().unwrap()[i]).abs() < 1e-6);
        }
        // weight gradient, first few entries
        let dw = conv.weight.grad.clone();
        for i in 0..6 {
            let orig = conv.weight.value.as_slice().unwrap()[i];
            conv.weight.value.as_slice_mut().unwrap()[i] = orig + h;
            let fp = (&conv.forward(&x, Mode::Eval) * &probe).sum();
            conv.weight.value.as_slice_mut().unwrap()[i] = orig - h;
            let fm = (&conv.forward(&x, Mode::Eval) * &probe).sum();
            conv.weight.value.as_slice_mut().unwrap()[i] = orig;
            assert!(((fp - fm) / (2.0 * h) - dw.as_slice().unwrap()[i]).abs() < 1e-6);
        }
    }
}
