use crate::{BatchNorm, Conv2d, Layer, Mode, Param, Relu, Sequential, Tensor};
use rand::Rng;

/// ResNet bottleneck block: 1×1 reduce, 3×3 (strided), 1×1 expand, plus an
/// identity or projected shortcut, followed by ReLU.
pub struct Bottleneck {
    main: Sequential,
    shortcut: Option<Sequential>,
    masks: Vec<Tensor>,
}

impl Bottleneck {
    pub const EXPANSION: usize = 4;

    pub fn new<R: Rng + ?Sized>(name: &str, in_ch: usize, width: usize, stride: usize, rng: &mut R) -> Self {
        let out_ch = width * Self::EXPANSION;
        let main = Sequential::new()
            .with(Conv2d::new(&format!("{name}.conv1"), in_ch, width, 1, 1, 0, false, rng))
            .with(BatchNorm::new(&format!("{name}.bn1"), width))
            .with(Relu::new())
            .with(Conv2d::new(&format!("{name}.conv2"), width, width, 3, stride, 1, false, rng))
            .with(BatchNorm::new(&format!("{name}.bn2"), width))
            .with(Relu::new())
            .with(Conv2d::new(&format!("{name}.conv3"), width, out_ch, 1, 1, 0, false, rng))
            .with(BatchNorm::new(&format!("{name}.bn3"), out_ch));
        let shortcut = (stride != 1 || in_ch != out_ch).then(|| {
            Sequential::new()
                .with(Conv2d::new(&format!("{name}.down"), in_ch, out_ch, 1, stride, 0, false, rng))
                .with(BatchNorm::new(&format!("{name}.down_bn"), out_ch))
        });
        Self { main, shortcut, masks: Vec::new() }
    }
}

impl Layer for Bottleneck {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        let m = self.main.forward(x, mode);
        let s = match &mut self.shortcut {
            Some(sc) => sc.forward(x, mode),
            None => x.clone(),
        };
        let pre = m + s;
        if mode == Mode::Train {
            self.masks.push(pre.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 }));
        }
        pre.mapv(|v| v.max(0.0))
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let mask = self.masks.pop().expect("Bottleneck::backward without cached forward");
        let g = grad * &mask;
        let dm = self.main.backward(&g);
        let ds = match &mut self.shortcut {
            Some(sc) => sc.backward(&g),
            None => g,
        };
        dm + ds
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.main.visit_params(f);
        if let Some(sc) = &mut self.shortcut {
            sc.visit_params(f);
        }
    }

    fn visit_params_ref(&self, f: &mut dyn FnMut(&Param)) {
        self.main.visit_params_ref(f);
        if let Some(sc) = &self.shortcut {
            sc.visit_params_ref(f);
        }
    }

    fn clear_cache(&mut self) {
        self.masks.clear();
        self.main.clear_cache();
        if let Some(sc) = &mut self.shortcut {
            sc.clear_cache();
        }
    }
}
