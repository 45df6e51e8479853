use pathbt_nn::{BatchNorm, Layer, Linear, Mode, Param, Relu, Sequential, Tensor};
use rand::Rng;

/// MLP head: `linear → batch-norm → ReLU` for every layer but the last, which
/// is a bare linear map. Linear layers carry no bias.
pub struct Projector {
    net: Sequential,
    dims: Vec<usize>,
}

impl Projector {
    pub fn new<R: Rng + ?Sized>(in_dim: usize, dims: &[usize], rng: &mut R) -> Self {
        assert!(!dims.is_empty(), "projector needs at least one layer");
        let mut net = Sequential::new();
        let mut prev = in_dim;
        for (i, &d) in dims.iter().enumerate() {
            net.push(Linear::new(&format!("projector.{i}"), prev, d, false, rng));
            if i + 1 < dims.len() {
                net.push(BatchNorm::new(&format!("projector.{i}.bn"), d));
                net.push(Relu::new());
            }
            prev = d;
        }
        Self { net, dims: dims.to_vec() }
    }

    pub fn out_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// Sets every weight of the final linear layer to zero.
    pub fn zero_last_layer(&mut self) {
        if let Some(last) = self.net.layers_mut().last_mut() {
            last.visit_params(&mut |p| p.value.fill(0.0));
        }
    }
}

impl Layer for Projector {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        self.net.forward(x, mode)
    }
    fn backward(&mut self, grad: &Tensor) -> Tensor {
        self.net.backward(grad)
    }
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.net.visit_params(f)
    }
    fn visit_params_ref(&self, f: &mut dyn FnMut(&Param)) {
        self.net.visit_params_ref(f)
    }
    fn clear_cache(&mut self) {
        self.net.clear_cache()
    }
}

/// Forward pass through a freshly seeded projector in evaluation mode.
pub fn projector_forward(features: &ndarray::Array2<f64>, dims: &[usize], seed: u64) -> ndarray::Array2<f64> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut p = Projector::new(features.ncols(), dims, &mut rng);
    p.forward(&features.clone().into_dyn(), Mode::Eval).into_dimensionality().unwrap()
}
