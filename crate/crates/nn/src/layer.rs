use crate::{Param, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, activations cached for backward.
    Train,
    /// Running statistics, nothing cached.
    Eval,
}

/// A differentiable operator with explicit backward pass.
///
/// `forward` in `Mode::Train` pushes whatever `backward` needs; `backward`
/// pops the most recent entry, accumulates parameter gradients and returns
/// the gradient with respect to the input. Calling `backward` more often than
/// `forward(.., Train)` panics.
pub trait Layer: Send {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor;
    fn backward(&mut self, grad: &Tensor) -> Tensor;
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param));
    fn visit_params_ref(&self, f: &mut dyn FnMut(&Param));
    /// Drops any cached activations.
    fn clear_cache(&mut self);

    fn zero_grad(&mut self) {
        self.visit_params(&mut |p| p.zero_grad());
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params_ref(&mut |p| n += p.len());
        n
    }
}

impl<L: Layer + ?Sized> Layer for Box<L> {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        (**self).forward(x, mode)
    }
    fn backward(&mut self, grad: &Tensor) -> Tensor {
        (**self).backward(grad)
    }
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        (**self).visit_params(f)
    }
    fn visit_params_ref(&self, f: &mut dyn FnMut(&Param)) {
        (**self).visit_params_ref(f)
    }
    fn clear_cache(&mut self) {
        (**self).clear_cache()
    }
}

/// Layers applied in order.
#[derive(Default)]
pub struct Sequential {
    layers: Vec<Box<dyn Layer>>,
}

impl Sequential {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, layer: impl Layer + 'static) {
        self.layers.push(Box::new(layer));
    }

    pub fn with(mut self, layer: impl Layer + 'static) -> Self {
        self.push(layer);
        self
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn layers_mut(&mut self) -> &mut [Box<dyn Layer>] {
        &mut self.layers
    }
}

impl Layer for Sequential {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        let mut iter = self.layers.iter_mut();
        let Some(first) = iter.next() else {
            return x.clone();
        };
        let mut h = first.forward(x, mode);
        for layer in iter {
            h = layer.forward(&h, mode);
        }
        h
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let mut iter = self.layers.iter_mut().rev();
        let Some(last) = iter.next() else {
            return grad.clone();
        };
        let mut g = last.backward(grad);
        for layer in iter {
            g = layer.backward(&g);
        }
        g
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        for l in &mut self.layers {
            l.visit_params(f);
        }
    }

    fn visit_params_ref(&self, f: &mut dyn FnMut(&Param)) {
        for l in &self.layers {
            l.visit_params_ref(f);
        }
    }

    fn clear_cache(&mut self) {
        for l in &mut self.layers {
            l.clear_cache();
        }
    }
}
