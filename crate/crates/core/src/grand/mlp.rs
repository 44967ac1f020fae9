use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use super::ops::sharpen;
use super::N_CLASSES;

/// Two-layer perceptron `softmax(relu(x W1 + b1) W2 + b2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn init(input_dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let mut glorot = |rows: usize, cols: usize| {
            let limit = (6.0 / (rows + cols) as f64).sqrt();
            Array2::from_shape_fn((rows, cols), |_| rng.random_range(-limit..limit))
        };
        let w1 = glorot(input_dim, hidden);
        let w2 = glorot(hidden, N_CLASSES);
        Self {
            w1,
            b1: Array1::zeros(hidden),
            w2,
            b2: Array1::zeros(N_CLASSES),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w1: Array2::zeros(self.w1.raw_dim()),
            b1: Array1::zeros(self.b1.raw_dim()),
            w2: Array2::zeros(self.w2.raw_dim()),
            b2: Array1::zeros(self.b2.raw_dim()),
        }
    }

    pub fn hidden_width(&self) -> usize {
        self.b1.len()
    }

    pub fn n_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    /// Parameters in the order W1, b1, W2, b2, each row-major.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        out.extend(self.w1.iter());
        out.extend(self.b1.iter());
        out.extend(self.w2.iter());
        out.extend(self.b2.iter());
        out
    }

    pub fn from_flat(input_dim: usize, hidden: usize, flat: &[f64]) -> Option<Self> {
        let sizes = [input_dim * hidden, hidden, hidden * N_CLASSES, N_CLASSES];
        if flat.len() != sizes.iter().sum::<usize>() {
            return None;
        }
        let (w1, rest) = flat.split_at(sizes[0]);
        let (b1, rest) = rest.split_at(sizes[1]);
        let (w2, b2) = rest.split_at(sizes[2]);
        Some(Self {
            w1: Array2::from_shape_vec((input_dim, hidden), w1.to_vec()).ok()?,
            b1: Array1::from(b1.to_vec()),
            w2: Array2::from_shape_vec((hidden, N_CLASSES), w2.to_vec()).ok()?,
            b2: Array1::from(b2.to_vec()),
        })
    }

    pub(crate) fn add_assign(&mut self, other: &Mlp) {
        self.w1 += &other.w1;
        self.b1 += &other.b1;
        self.w2 += &other.w2;
        self.b2 += &other.b2;
    }

    /// Parameter gradient given the loss gradient with respect to the logits.
    pub fn backward(&self, cache: &ForwardCache, d_logits: &Array2<f64>) -> Mlp {
        let w2 = cache.hidden.t().dot(d_logits);
        let b2 = d_logits.sum_axis(Axis(0));
        let mut d_hidden = d_logits.dot(&self.w2.t());
        d_hidden.zip_mut_with(&cache.pre_activation, |g, z| {
            if *z <= 0.0 {
                *g = 0.0;
            }
        });
        let w1 = cache.input.t().dot(&d_hidden);
        let b1 = d_hidden.sum_axis(Axis(0));
        Mlp { w1, b1, w2, b2 }
    }
}

/// Intermediate activations of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub input: Array2<f64>,
    pub pre_activation: Array2<f64>,
    pub hidden: Array2<f64>,
    pub probs: Array2<f64>,
}

pub fn mlp_forward(params: &Mlp, x: &Array2<f64>) -> ForwardCache {
    let pre_activation = x.dot(&params.w1) + &params.b1;
    let hidden = pre_activation.mapv(|v| v.max(0.0));
    let mut probs = hidden.dot(&params.w2) + &params.b2;
    for mut row in probs.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        row /= z;
    }
    ForwardCache {
        input: x.clone(),
        pre_activation,
        hidden,
        probs,
    }
}

/// Mean negative log-likelihood over the rows selected by `mask`; 0 when
/// the mask is empty.
pub fn cross_entropy(probs: &Array2<f64>, labels: &[u8], mask: &[bool]) -> f64 {
    let mut total = 0.0;
    let mut m = 0usize;
    for (i, (&y, &on)) in labels.iter().zip(mask).enumerate() {
        if on {
            total -= probs[[i, y as usize]].ln();
            m += 1;
        }
    }
    if m == 0 {
        0.0
    } else {
        total / m as f64
    }
}

fn mean_probs(probs: &[Array2<f64>]) -> Array2<f64> {
    let mut mean = Array2::zeros(probs[0].raw_dim());
    for p in probs {
        mean += p;
    }
    mean / probs.len() as f64
}

fn sharpened(mean: &Array2<f64>, temperature: f64) -> Array2<f64> {
    let mut out = mean.clone();
    for mut row in out.rows_mut() {
        let s = sharpen(row.as_slice().expect("contiguous"), temperature);
        row.assign(&Array1::from(s));
    }
    out
}

/// Supervised cross-entropy averaged over augmentations plus
/// `λ` times the mean squared distance between each augmentation's
/// prediction and the sharpened mean prediction.
pub fn grand_loss(
    probs: &[Array2<f64>],
    labels: &[u8],
    train_mask: &[bool],
    consistency_weight: f64,
    temperature: f64,
) -> f64 {
    let s = probs.len() as f64;
    let ce: f64 = probs.iter().map(|p| cross_entropy(p, labels, train_mask)).sum::<f64>() / s;
    if consistency_weight == 0.0 {
        return ce;
    }
    let n = probs[0].nrows() as f64;
    let q = sharpened(&mean_probs(probs), temperature);
    let spread: f64 = probs
        .iter()
        .map(|p| (&q - p).mapv(|v| v * v).sum())
        .sum();
    ce + consistency_weight * spread / (s * n)
}

/// Loss and parameter gradient for one epoch's augmented inputs. The
/// gradient flows through the sharpened target as well as through each
/// augmentation's prediction.
pub fn grand_loss_and_grad(
    params: &Mlp,
    inputs: &[Array2<f64>],
    labels: &[u8],
    train_mask: &[bool],
    consistency_weight: f64,
    temperature: f64,
) -> (f64, Mlp) {
    let caches: Vec<ForwardCache> = inputs.iter().map(|x| mlp_forward(params, x)).collect();
    let probs: Vec<Array2<f64>> = caches.iter().map(|c| c.probs.clone()).collect();
    let loss = grand_loss(&probs, labels, train_mask, consistency_weight, temperature);

    let s = inputs.len() as f64;
    let n = probs[0].nrows();
    let m = train_mask.iter().filter(|&&b| b).count();
    let ce_scale = if m == 0 { 0.0 } else { 1.0 / (s * m as f64) };

    // d loss / d P_s from the consistency term, shared target part first
    let consistency = if consistency_weight != 0.0 {
        let mean = mean_probs(&probs);
        let q = sharpened(&mean, temperature);
        let coef = 2.0 * consistency_weight / (s * n as f64);
        let mut via_target = Array2::zeros(mean.raw_dim());
        for i in 0..n {
            // dL/dq_c summed over augmentations, then through the sharpening
            let g: Vec<f64> = (0..N_CLASSES).map(|c| coef * s * (q[[i, c]] - mean[[i, c]])).collect();
            let gq: f64 = (0..N_CLASSES).map(|c| g[c] * q[[i, c]]).sum();
            for c in 0..N_CLASSES {
                let dq_dp = q[[i, c]] / (temperature * mean[[i, c]]);
                let v = if dq_dp.is_finite() { dq_dp * (g[c] - gq) } else { 0.0 };
                via_target[[i, c]] = v / s;
            }
        }
        Some((q, coef, via_target))
    } else {
        None
    };

    let mut grad = params.zeros_like();
    for (cache, p) in caches.iter().zip(&probs) {
        let mut d_logits = Array2::zeros(p.raw_dim());
        for i in 0..n {
            if train_mask[i] {
                for c in 0..N_CLASSES {
                    let y = if labels[i] as usize == c { 1.0 } else { 0.0 };
                    d_logits[[i, c]] = (p[[i, c]] - y) * ce_scale;
                }
            }
        }
        if let Some((q, coef, via_target)) = &consistency {
            for i in 0..n {
                let dp: Vec<f64> = (0..N_CLASSES)
                    .map(|c| coef * (p[[i, c]] - q[[i, c]]) + via_target[[i, c]])
                    .collect();
                let dot: f64 = (0..N_CLASSES).map(|c| dp[c] * p[[i, c]]).sum();
                for c in 0..N_CLASSES {
                    d_logits[[i, c]] += p[[i, c]] * (dp[c] - dot);
                }
            }
        }
        grad.add_assign(&params.backward(cache, &d_logits));
    }
    (loss, grad)
}
