//! Hierarchical shifted-window transformer blocks (Swin-style).
//!
//! Token maps are carried as `(N, H, W, C)` tensors between blocks.

use crate::linear::as_rows;
use crate::{init, Conv2d, Gelu, Layer, LayerNorm, Linear, Mode, Param, ParamKind, Sequential, Tensor};
use ndarray::{s, Array2, Array3, Array4, Axis, IxDyn};
use rand::Rng;

/// Window side actually used for a `res × res` token map: the whole map when it
/// fits in one window, else the largest divisor of `res` not above `window`.
pub fn effective_window(res: usize, window: usize) -> usize {
    if res <= window {
        return res;
    }
    (1..=window).rev().find(|w| res % w == 0).unwrap_or(1)
}

/// Maps window-ordered token slots to source token index `y * w + x` after a
/// cyclic shift of `-shift` along both axes.
fn window_permutation(h: usize, w: usize, ws: usize, shift: usize) -> Vec<usize> {
    let (nwy, nwx) = (h / ws, w / ws);
    let mut perm = Vec::with_capacity(h * w);
    for wy in 0..nwy {
        for wx in 0..nwx {
            for ty in 0..ws {
                for tx in 0..ws {
                    let y = (wy * ws + ty + shift) % h;
                    let x = (wx * ws + tx + shift) % w;
                    perm.push(y * w + x);
                }
            }
        }
    }
    perm
}

fn gather_tokens(x: &Tensor, perm: &[usize]) -> Array2<f64> {
    let s = x.shape();
    let (n, hw, c) = (s[0], s[1] * s[2], s[3]);
    let rows = as_rows(x);
    let mut out = Array2::zeros((n * hw, c));
    for b in 0..n {
        for (i, &src) in perm.iter().enumerate() {
            out.row_mut(b * hw + i).assign(&rows.row(b * hw + src));
        }
    }
    out
}

fn scatter_tokens(rows: &Array2<f64>, perm: &[usize], shape: &[usize]) -> Tensor {
    let (n, hw, c) = (shape[0], shape[1] * shape[2], shape[3]);
    let mut out = Array2::zeros((n * hw, c));
    for b in 0..n {
        for (i, &dst) in perm.iter().enumerate() {
            out.row_mut(b * hw + dst).assign(&rows.row(b * hw + i));
        }
    }
    out.into_dyn().into_shape_with_order(IxDyn(shape)).unwrap()
}

/// Multi-head self-attention inside (optionally shifted) local windows with a
/// learned relative position bias.
pub struct WindowAttention {
    qkv: Linear,
    proj: Linear,
    pub bias_table: Param,
    heads: usize,
    dim: usize,
    window: usize,
    shift: usize,
    rel_index: Vec<usize>,
    cache: Vec<AttnCache>,
}

struct AttnCache {
    qkv: Array3<f64>,
    probs: Array4<f64>,
    perm: Vec<usize>,
    shape: Vec<usize>,
}

impl WindowAttention {
    pub fn new<R: Rng + ?Sized>(name: &str, dim: usize, heads: usize, window: usize, shift: usize, rng: &mut R) -> Self {
        assert!(dim % heads == 0, "dim {dim} not divisible by {heads} heads");
        let span = 2 * window - 1;
        let mut rel_index = Vec::with_capacity(window.pow(4));
        for t1 in 0..window * window {
            for t2 in 0..window * window {
                let dy = (t1 / window) as isize - (t2 / window) as isize + window as isize - 1;
                let dx = (t1 % window) as isize - (t2 % window) as isize + window as isize - 1;
                rel_index.push(dy as usize * span + dx as usize);
            }
        }
        Self {
            qkv: Linear::new(&format!("{name}.qkv"), dim, 3 * dim, true, rng),
            proj: Linear::new(&format!("{name}.proj"), dim, dim, true, rng),
            bias_table: Param::new(format!("{name}.rel_bias"), ParamKind::Bias, init::trunc_normal(&[span * span, heads], 0.02, rng)),
            heads,
            dim,
            window,
            shift,
            rel_index,
            cache: Vec::new(),
        }
    }

    /// Additive mask separating regions that became window neighbours only
    /// through the cyclic shift.
    fn shift_mask(&self, h: usize, w: usize) -> Option<Vec<Vec<f64>>> {
        if self.shift == 0 {
            return None;
        }
        let (ws, sh) = (self.window, self.shift);
        let region = |v: usize, len: usize| {
            if v < len - ws {
                0
            } else if v < len - sh {
                1
            } else {
                2
            }
        };
        let labels: Vec<usize> = (0..h * w).map(|i| region(i / w, h) * 3 + region(i % w, w)).collect();
        let perm_unshifted = window_permutation(h, w, ws, 0);
        let t = ws * ws;
        let masks = perm_unshifted
            .chunks(t)
            .map(|win| {
                let mut m = vec![0.0; t * t];
                for a in 0..t {
                    for b in 0..t {
                        if labels[win[a]] != labels[win[b]] {
                            m[a * t + b] = -100.0;
                        }
                    }
                }
                m
            })
            .collect();
        Some(masks)
    }
}

impl Layer for WindowAttention {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        let shape = x.shape().to_vec();
        let (n, h, w) = (shape[0], shape[1], shape[2]);
        let ws = self.window;
        assert!(h % ws == 0 && w % ws == 0, "token map {h}x{w} not divisible by window {ws}");
        let t = ws * ws;
        let n_win = (h / ws) * (w / ws);
        let perm = window_permutation(h, w, ws, self.shift);
        let windows = gather_tokens(x, &perm).into_shape_with_order((n * n_win, t, self.dim)).unwrap().into_dyn();
        let qkv = self.qkv.forward(&windows, mode).into_dimensionality::<ndarray::Ix3>().unwrap();
        let hd = self.dim / self.heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let mask = self.shift_mask(h, w);
        let bsz = n * n_win;
        let mut probs = Array4::<f64>::zeros((bsz, self.heads, t, t));
        let mut out = Array3::<f64>::zeros((bsz, t, self.dim));
        for b in 0..bsz {
            let win_idx = b % n_win;
            for hh in 0..self.heads {
                let q = qkv.slice(s![b, .., hh * hd..(hh + 1) * hd]);
                let k = qkv.slice(s![b, .., self.dim + hh * hd..self.dim + (hh + 1) * hd]);
                let v = qkv.slice(s![b, .., 2 * self.dim + hh * hd..2 * self.dim + (hh + 1) * hd]);
                let mut sc = q.dot(&k.t()) * scale;
                for (i, val) in sc.iter_mut().enumerate() {
                    *val += self.bias_table.value[[self.rel_index[i], hh]];
                    if let Some(m) = &mask {
                        *val += m[win_idx][i];
                    }
                }
                for mut row in sc.rows_mut() {
                    let mx = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                    row.mapv_inplace(|v| (v - mx).exp());
                    let z = row.sum();
                    row /= z;
                }
                out.slice_mut(s![b, .., hh * hd..(hh + 1) * hd]).assign(&sc.dot(&v));
                probs.slice_mut(s![b, hh, .., ..]).assign(&sc);
            }
        }
        let y = self.proj.forward(&out.into_dyn(), mode);
        let y_rows = y.into_shape_with_order((n * h * w, self.dim)).unwrap();
        let result = scatter_tokens(&y_rows, &perm, &shape);
        if mode == Mode::Train {
            self.cache.push(AttnCache { qkv, probs, perm, shape });
        }
        result
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let AttnCache { qkv, probs, perm, shape } = self.cache.pop().expect("WindowAttention::backward without cached forward");
        let (n, h, w) = (shape[0], shape[1], shape[2]);
        let t = self.window * self.window;
        let n_win = (h / self.window) * (w / self.window);
        let bsz = n * n_win;
        let hd = self.dim / self.heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let dy = gather_tokens(grad, &perm).into_shape_with_order((bsz, t, self.dim)).unwrap().into_dyn();
        let dout = self.proj.backward(&dy).into_dimensionality::<ndarray::Ix3>().unwrap();
        let mut dqkv = Array3::<f64>::zeros((bsz, t, 3 * self.dim));
        let (qo, ko, vo) = (0, self.dim, 2 * self.dim);
        for b in 0..bsz {
            for hh in 0..self.heads {
                let c0 = hh * hd;
                let p = probs.slice(s![b, hh, .., ..]);
                let q = qkv.slice(s![b, .., qo + c0..qo + c0 + hd]);
                let k = qkv.slice(s![b, .., ko + c0..ko + c0 + hd]);
                let v = qkv.slice(s![b, .., vo + c0..vo + c0 + hd]);
                let d_o = dout.slice(s![b, .., c0..c0 + hd]);
                let dv = p.t().dot(&d_o);
                let dp = d_o.dot(&v.t());
                let row_dot = (&dp * &p).sum_axis(Axis(1)).insert_axis(Axis(1));
                let ds = &p * &(dp - &row_dot);
                for (i, g) in ds.iter().enumerate() {
                    self.bias_table.grad[[self.rel_index[i], hh]] += g;
                }
                let dq = ds.dot(&k) * scale;
                let dk = ds.t().dot(&q) * scale;
                dqkv.slice_mut(s![b, .., qo + c0..qo + c0 + hd]).assign(&dq);
                dqkv.slice_mut(s![b, .., ko + c0..ko + c0 + hd]).assign(&dk);
                dqkv.slice_mut(s![b, .., vo + c0..vo + c0 + hd]).assign(&dv);
            }
        }
        let dwin = self.qkv.backward(&dqkv.into_dyn());
        let rows = dwin.into_shape_with_order((n * h * w, self.dim)).unwrap();
        scatter_tokens(&rows, &perm, &shape)
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.qkv.visit_params(f);
        f(&mut self.bias_table);
        self.proj.visit_params(f);
    }

    fn visit_params_ref(&self, f: &mut dyn FnMut(&Param)) {
        self.qkv.visit_params_ref(f);
        f(&self.bias_table);
        self.proj.visit_params_ref(f);
    }

    fn clear_cache(&mut self) {
        self.cache.clear();
        self.qkv.clear_cache();
        self.proj.clear_cache();
    }
}

/// Pre-norm transformer block: windowed attention and a 4× MLP, each with a
/// residual connection.
pub struct SwinBlock {
    norm1: LayerNorm,
    attn: WindowAttention,
    norm2: LayerNorm,
    mlp: Sequential,
}

impl SwinBlock {
    pub fn new<R: Rng + ?Sized>(name: &str, dim: usize, heads: usize, window: usize, shift: usize, rng: &mut R) -> Self {
        let mut fc1 = Linear::new(&format!("{name}.fc1"), dim, 4 * dim, true, rng);
        let mut fc2 = Linear::new(&format!("{name}.fc2"), 4 * dim, dim, true, rng);
        fc1.weight.value = init::trunc_normal(&[4 * dim, dim], 0.02, rng);
        fc2.weight.value = init::trunc_normal(&[dim, 4 * dim], 0.02, rng);
        for b in [&mut fc1.bias, &mut fc2.bias].into_iter().flatten() {
            b.value.fill(0.0);
        }
        Self {
            norm1: LayerNorm::new(&format!("{name}.norm1"), dim),
            attn: WindowAttention::new(&format!("{name}.attn"), dim, heads, window, shift, rng),
            norm2: LayerNorm::new(&format!("{name}.norm2"), dim),
            mlp: Sequential::new().with(fc1).with(Gelu::new()).with(fc2),
        }
    }
}

impl Layer for SwinBlock {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        let a = self.norm1.forward(x, mode);
        let x1 = x + &self.attn.forward(&a, mode);
        let m = self.norm2.forward(&x1, mode);
        &x1 + &self.mlp.forward(&m, mode)
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let dm = self.mlp.backward(grad);
        let dx1 = grad + &self.norm2.backward(&dm);
        let da = self.attn.backward(&dx1);
        &dx1 + &self.norm1.backward(&da)
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.norm1.visit_params(f);
        self.attn.visit_params(f);
        self.norm2.visit_params(f);
        self.mlp.visit_params(f);
    }

    fn visit_params_ref(&self, f: &mut dyn FnMut(&Param)) {
        self.norm1.visit_params_ref(f);
        self.attn.visit_params_ref(f);
        self.norm2.visit_params_ref(f);
        self.mlp.visit_params_ref(f);
    }

    fn clear_cache(&mut self) {
        self.norm1.clear_cache();
        self.attn.clear_cache();
        self.norm2.clear_cache();
        self.mlp.clear_cache();
    }
}

/// Non-overlapping patch projection: `(N, C, H, W)` → normalised tokens `(N, H/p, W/p, D)`.
pub struct PatchEmbed {
    proj: Conv2d,
    norm: LayerNorm,
}

impl PatchEmbed {
    pub fn new<R: Rng + ?Sized>(name: &str, in_ch: usize, dim: usize, patch: usize, rng: &mut R) -> Self {
        Self {
            proj: Conv2d::new(&format!("{name}.proj"), in_ch, dim, patch, patch, 0, true, rng),
            norm: LayerNorm::new(&format!("{name}.norm"), dim),
        }
    }
}

impl Layer for PatchEmbed {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        let y = self.proj.forward(x, mode);
        let tokens = y.permuted_axes(IxDyn(&[0, 2, 3, 1])).as_standard_layout().into_owned();
        self.norm.forward(&tokens, mode)
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let g = self.norm.backward(grad);
        let g = g.permuted_axes(IxDyn(&[0, 3, 1, 2])).as_standard_layout().into_owned();
        self.proj.backward(&g)
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.proj.visit_params(f);
        self.norm.visit_params(f);
    }

    fn visit_params_ref(&self, f: &mut dyn FnMut(&Param)) {
        self.proj.visit_params_ref(f);
        self.norm.visit_params_ref(f);
    }

    fn clear_cache(&mut self) {
        self.proj.clear_cache();
        self.norm.clear_cache();
    }
}

/// 2×2 neighbourhood concatenation, normalisation and linear reduction
/// `4C → 2C`; halves the token map.
pub struct PatchMerging {
    norm: LayerNorm,
    reduce: Linear,
    shapes: Vec<Vec<usize>>,
}

const MERGE_OFFSETS: [(usize, usize); 4] = [(0, 0), (1, 0), (0, 1), (1, 1)];

impl PatchMerging {
    pub fn new<R: Rng + ?Sized>(name: &str, dim: usize, rng: &mut R) -> Self {
        let mut reduce = Linear::new(&format!("{name}.reduction"), 4 * dim, 2 * dim, false, rng);
        reduce.weight.value = init::trunc_normal(&[2 * dim, 4 * dim], 0.02, rng);
        Self { norm: LayerNorm::new(&format!("{name}.norm"), 4 * dim), reduce, shapes: Vec::new() }
    }
}

impl Layer for PatchMerging {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        let s = x.shape().to_vec();
        let (n, h, w, c) = (s[0], s[1], s[2], s[3]);
        assert!(h % 2 == 0 && w % 2 == 0, "patch merging needs even token map, got {h}x{w}");
        let x4 = x.view().into_dimensionality::<ndarray::Ix4>().unwrap();
        let mut merged = Array4::<f64>::zeros((n, h / 2, w / 2, 4 * c));
        for (i, &(dy, dx)) in MERGE_OFFSETS.iter().enumerate() {
            merged
                .slice_mut(s![.., .., .., i * c..(i + 1) * c])
                .assign(&x4.slice(s![.., dy..;2, dx..;2, ..]));
        }
        if mode == Mode::Train {
            self.shapes.push(s);
        }
        let normed = self.norm.forward(&merged.into_dyn(), mode);
        self.reduce.forward(&normed, mode)
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let s = self.shapes.pop().expect("PatchMerging::backward without cached forward");
        let c = s[3];
        let g = self.norm.backward(&self.reduce.backward(grad));
        let g4 = g.into_dimensionality::<ndarray::Ix4>().unwrap();
        let mut dx = Array4::<f64>::zeros((s[0], s[1], s[2], c));
        for (i, &(dy, dxo)) in MERGE_OFFSETS.iter().enumerate() {
            dx.slice_mut(s![.., dy..;2, dxo..;2, ..]).assign(&g4.slice(s![.., .., .., i * c..(i + 1) * c]));
        }
        dx.into_dyn()
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.norm.visit_params(f);
        self.reduce.visit_params(f);
    }

    fn visit_params_ref(&self, f: &mut dyn FnMut(&Param)) {
        self.norm.visit_params_ref(f);
        self.reduce.visit_params_ref(f);
    }

    fn clear_cache(&mut self) {
        self.shapes.clear();
        self.norm.clear_cache();
        self.reduce.clear_cache();
    }
}

/// `(N, H, W, C)` → `(N, C)` token mean.
#[derive(Default)]
pub struct TokenMeanPool {
    shapes: Vec<Vec<usize>>,
}

impl TokenMeanPool {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Layer for TokenMeanPool {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        let s = x.shape().to_vec();
        let (n, l, c) = (s[0], s[1] * s[2], s[3]);
        let v = x.as_standard_layout().into_owned().into_shape_with_order((n, l, c)).unwrap();
        if mode == Mode::Train {
            self.shapes.push(s);
        }
        v.mean_axis(Axis(1)).unwrap().into_dyn()
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let s = self.shapes.pop().expect("TokenMeanPool::backward without cached forward");
        let l = (s[1] * s[2]) as f64;
        let g = grad.view().into_dimensionality::<ndarray::Ix2>().unwrap();
        let mut dx = Array4::<f64>::zeros((s[0], s[1], s[2], s[3]));
        for (b, mut img) in dx.outer_iter_mut().enumerate() {
            img.assign(&(&g.row(b) / l));
        }
        dx.into_dyn()
    }

    fn visit_params(&mut self, _: &mut dyn FnMut(&mut Param)) {}
    fn visit_params_ref(&self, _: &mut dyn FnMut(&Param)) {}
    fn clear_cache(&mut self) {
        self.shapes.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn effective_window_divides_resolution() {
        assert_eq!(effective_window(56, 7), 7);
        assert_eq!(effective_window(8, 7), 4);
        assert_eq!(effective_window(7, 7), 7);
        assert_eq!(effective_window(2, 7), 2);
    }

    #[test]
    fn permutation_is_bijective() {
        let p = window_permutation(8, 8, 4, 2);
        let mut sorted = p.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..64).collect::<Vec<_>>());
    }

    fn grad_check(layer: &mut dyn Layer, x: &Tensor, tol: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let y = layer.forward(x, Mode::Train);
        let probe = init::normal(y.shape(), 1.0, &mut rng);
        let dx = layer.backward(&probe);
        let h = 1e-5;
        for i in (0..x.len()).step_by(3) {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp.as_slice_mut().unwrap()[i] += h;
            xm.as_slice_mut().unwrap()[i] -= h;
            let fd = ((&layer.forward(&xp, Mode::Eval) * &probe).sum() - (&layer.forward(&xm, Mode::Eval) * &probe).sum()) / (2.0 * h);
            let an = dx.as_slice().unwrap()[i];
            assert!((fd - an).abs() <= tol * (1.0 + an.abs()), "index {i}: fd {fd} analytic {an}");
        }
    }

    #[test]
    fn shifted_window_attention_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut attn = WindowAttention::new("a", 4, 2, 2, 1, &mut rng);
        let x = init::normal(&[1, 4, 4, 4], 1.0, &mut rng);
        grad_check(&mut attn, &x, 1e-6);
        // bias table gradient
        attn.zero_grad();
        let y = attn.forward(&x, Mode::Train);
        let probe = init::normal(y.shape(), 1.0, &mut rng);
        attn.backward(&probe);
        let h = 1e-5;
        for i in 0..attn.bias_table.len() {
            let orig = attn.bias_table.value.as_slice().unwrap()[i];
            attn.bias_table.value.as_slice_mut().unwrap()[i] = orig + h;
            let fp = (&attn.forward(&x, Mode::Eval) * &probe).sum();
            attn.bias_table.value.as_slice_mut().unwrap()[i] = orig - h;
            let fm = (&attn.forward(&x, Mode::Eval) * &probe).sum();
            attn.bias_table.value.as_slice_mut().unwrap()[i] = orig;
            let an = attn.bias_table.grad.as_slice().unwrap()[i];
            assert!(((fp - fm) / (2.0 * h) - an).abs() < 1e-6 * (1.0 + an.abs()));
        }
    }

    #[test]
    fn block_and_merging_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut block = SwinBlock::new("b", 4, 2, 2, 1, &mut rng);
        grad_check(&mut block, &init::normal(&[2, 4, 4, 4], 1.0, &mut rng), 1e-6);
        let mut merge = PatchMerging::new("m", 3, &mut rng);
        grad_check(&mut merge, &init::normal(&[1, 4, 4, 3], 1.0, &mut rng), 1e-6);
    }
}
