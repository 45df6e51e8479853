use crate::error::{Error, Result};
use ndarray::{Array1, Array2, Axis};
use pathbt_nn::activation::sigmoid;
use pathbt_nn::loss::{cross_entropy, softmax, softmax_rows};
use pathbt_nn::{Layer, Linear, Mode, Param, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MILConfig {
    /// Width of the instance projection before attention.
    pub hidden_dim: usize,
    pub attention_hidden: usize,
    pub gated: bool,
    pub instance_loss_weight: f64,
    /// Instances per side used as pseudo-labels by the instance loss.
    pub instance_k: usize,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for MILConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 128,
            attention_hidden: 64,
            gated: true,
            instance_loss_weight: 0.0,
            instance_k: 3,
            epochs: 30,
            lr: 2e-4,
            weight_decay: 1e-5,
            test_fraction: 0.3,
            seed: 0,
        }
    }
}

impl MILConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.instance_loss_weight >= 0.0) || !(self.weight_decay >= 0.0) || !(self.lr > 0.0) {
            return Err(Error::InvalidConfig("MIL weights must be >= 0 and lr > 0".into()));
        }
        if self.hidden_dim == 0 || self.attention_hidden == 0 {
            return Err(Error::InvalidConfig("MIL layer widths must be >= 1".into()));
        }
        Ok(())
    }
}

struct Cache {
    x_rows: usize,
    pre_h: Array2<f64>,
    h: Array2<f64>,
    av: Array2<f64>,
    au: Option<Array2<f64>>,
    attn: Array1<f64>,
}

/// Single-branch attention MIL: instance projection, (gated) attention
/// pooling and a linear bag classifier, with optional per-class instance
/// heads for the clustering loss.
pub struct MilModel {
    fc: Linear,
    attn_v: Linear,
    attn_u: Option<Linear>,
    attn_w: Linear,
    classifier: Linear,
    instance_heads: Vec<Linear>,
    cache: Vec<Cache>,
    last_attention: Option<Array1<f64>>,
    extra_h_grad: Option<Array2<f64>>,
    pub n_classes: usize,
}

impl MilModel {
    pub fn new(in_dim: usize, n_classes: usize, cfg: &MILConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let (h, a) = (cfg.hidden_dim, cfg.attention_hidden);
        Self {
            fc: Linear::new("fc", in_dim, h, true, &mut rng),
            attn_v: Linear::new("attention.v", h, a, true, &mut rng),
            attn_u: cfg.gated.then(|| Linear::new("attention.u", h, a, true, &mut rng)),
            attn_w: Linear::new("attention.w", a, 1, true, &mut rng),
            classifier: Linear::new("classifier", h, n_classes, true, &mut rng),
            instance_heads: (0..n_classes).map(|k| Linear::new(&format!("instance.{k}"), h, 2, true, &mut rng)).collect(),
            cache: Vec::new(),
            last_attention: None,
            extra_h_grad: None,
            n_classes,
        }
    }

    /// Attention logits per instance and the projected instances.
    fn attend(&mut self, x: &Array2<f64>, mode: Mode) -> (Array2<f64>, Array2<f64>, Array2<f64>, Option<Array2<f64>>, Array1<f64>) {
        let pre_h = to2(self.fc.forward(&x.clone().into_dyn(), mode));
        let h = pre_h.mapv(|v| v.max(0.0));
        let av = to2(self.attn_v.forward(&h.clone().into_dyn(), mode)).mapv(f64::tanh);
        let au = self.attn_u.as_mut().map(|u| to2(u.forward(&h.clone().into_dyn(), mode)).mapv(sigmoid));
        let gated = match &au {
            Some(u) => &av * u,
            None => av.clone(),
        };
        let scores = to2(self.attn_w.forward(&gated.into_dyn(), mode)).column(0).to_owned();
        (pre_h, h, av, au, scores)
    }

    /// Attention over the bag's instances (sums to 1).
    pub fn attention(&mut self, x: &Array2<f64>) -> Array1<f64> {
        let (_, _, _, _, s) = self.attend(x, Mode::Eval);
        softmax(&s)
    }

    /// Class probabilities and attention for one bag.
    pub fn predict(&mut self, x: &Array2<f64>) -> (Array1<f64>, Array1<f64>) {
        let logits = to2(self.forward(&x.clone().into_dyn(), Mode::Eval));
        (softmax_rows(&logits).row(0).to_owned(), self.last_attention.take().unwrap_or_default())
    }

    /// One bag's loss with gradients accumulated into the parameters.
    pub fn train_step(&mut self, x: &Array2<f64>, label: usize, instance_weight: f64, k: usize) -> f64 {
        let logits = to2(self.forward(&x.clone().into_dyn(), Mode::Train));
        let (mut loss, g) = cross_entropy(&logits, &[label]);
        let inst_grad_h = if instance_weight > 0.0 {
            let c = self.cache.last().expect("forward cached");
            let (l, gh) = instance_loss(&mut self.instance_heads[label], &c.h, &c.attn, k, instance_weight);
            loss += instance_weight * l;
            Some(gh)
        } else {
            None
        };
        self.extra_h_grad = inst_grad_h;
        self.backward(&g.into_dyn());
        self.last_attention = None;
        loss
    }
}

fn to2(t: Tensor) -> Array2<f64> {
    t.into_dimensionality().expect("2-D activations")
}

/// Clustering-style instance loss: the `k` most attended instances are
/// pseudo-positives and the `k` least attended pseudo-negatives for the
/// bag's class head. Gradients are scaled by `weight`.
fn instance_loss(head: &mut Linear, h: &Array2<f64>, attn: &Array1<f64>, k: usize, weight: f64) -> (f64, Array2<f64>) {
    let m = h.nrows();
    let k = k.min(m / 2);
    let mut grad_h = Array2::zeros(h.raw_dim());
    if k == 0 {
        return (0.0, grad_h);
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| attn[b].total_cmp(&attn[a]));
    let picked: Vec<usize> = order[..k].iter().chain(&order[m - k..]).copied().collect();
    let targets: Vec<usize> = (0..2 * k).map(|i| usize::from(i < k)).collect();
    let hs = h.select(Axis(0), &picked);
    let logits = to2(head.forward(&hs.into_dyn(), Mode::Train));
    let (loss, g) = cross_entropy(&logits, &targets);
    let gh = to2(head.backward(&(g * weight).into_dyn()));
    for (row, &i) in picked.iter().enumerate() {
        let mut r = grad_h.row_mut(i);
        r += &gh.row(row);
    }
    (loss, grad_h)
}

impl Layer for MilModel {
    /// `(M, F)` instances → `(1, K)` bag logits.
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        let x = to2(x.clone());
        let (pre_h, h, av, au, scores) = self.attend(&x, mode);
        let attn = softmax(&scores);
        let z = attn.dot(&h).insert_axis(Axis(0));
        let logits = self.classifier.forward(&z.into_dyn(), mode);
        self.last_attention = Some(attn.clone());
        if mode == Mode::Train {
            self.cache.push(Cache { x_rows: x.nrows(), pre_h, h, av, au, attn });
        }
        logits
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let c = self.cache.pop().expect("MilModel::backward without forward");
        let dz = to2(self.classifier.backward(grad)).row(0).to_owned();
        // z = Σ a_m h_m
        let mut dh = Array2::from_shape_fn(c.h.raw_dim(), |(m, j)| c.attn[m] * dz[j]);
        if let Some(extra) = self.extra_h_grad.take() {
            dh += &extra;
        }
        let da = c.h.dot(&dz);
        let dot = c.attn.dot(&da);
        let ds = Array1::from_shape_fn(c.x_rows, |m| c.attn[m] * (da[m] - dot)).insert_axis(Axis(1));
        let dg = to2(self.attn_w.backward(&ds.into_dyn()));
        match (&mut self.attn_u, &c.au) {
            (Some(u), Some(au)) => {
                let dav = &dg * au * c.av.mapv(|t| 1.0 - t * t);
                let dau = &dg * &c.av * au.mapv(|s| s * (1.0 - s));
                dh += &to2(u.backward(&dau.into_dyn()));
                dh += &to2(self.attn_v.backward(&dav.into_dyn()));
            }
            _ => {
                let dav = &dg * &c.av.mapv(|t| 1.0 - t * t);
                dh += &to2(self.attn_v.backward(&dav.into_dyn()));
            }
        }
        let dpre = &dh * &c.pre_h.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
        self.fc.backward(&dpre.into_dyn())
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.fc.visit_params(f);
        self.attn_v.visit_params(f);
        if let Some(u) = &mut self.attn_u {
            u.visit_params(f);
        }
        self.attn_w.visit_params(f);
        self.classifier.visit_params(f);
        for h in &mut self.instance_heads {
            h.visit_params(f);
        }
    }

    fn visit_params_ref(&self, f: &mut dyn FnMut(&Param)) {
        self.fc.visit_params_ref(f);
        self.attn_v.visit_params_ref(f);
        if let Some(u) = &self.attn_u {
            u.visit_params_ref(f);
        }
        self.attn_w.visit_params_ref(f);
        self.classifier.visit_params_ref(f);
        for h in &self.instance_heads {
            h.visit_params_ref(f);
        }
    }

    fn clear_cache(&mut self) {
        self.cache.clear();
        self.fc.clear_cache();
        self.attn_v.clear_cache();
        if let Some(u) = &mut self.attn_u {
            u.clear_cache();
        }
        self.attn_w.clear_cache();
        self.classifier.clear_cache();
        for h in &mut self.instance_heads {
            h.clear_cache();
        }
    }
}
