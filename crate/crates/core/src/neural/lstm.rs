//! LSTM forward pass, softmax head and backpropagation through time.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::params::{LstmLayerParams, ModelParams};
use super::NeuralError;

/// Floor inside the cross-entropy logarithm.
pub const LOG_EPS: f64 = 1e-12;

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}

/// Intermediate values of one LSTM timestep, kept for the backward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct StepCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub o: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
}

/// One timestep:
/// `i, f, o = σ(·)`, `g = tanh(·)`, `c = f⊙c_prev + i⊙g`, `h = o⊙tanh(c)`.
pub fn lstm_step(
    layer: &LstmLayerParams,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
) -> Result<(Vec<f64>, Vec<f64>, StepCache), NeuralError> {
    let h = layer.hidden();
    if x.len() != layer.input_width() || h_prev.len() != h || c_prev.len() != h {
        return Err(NeuralError::ShapeMismatch);
    }
    let mut z = layer.b.clone();
    layer.w.mul_vec_add(x, &mut z);
    layer.u.mul_vec_add(h_prev, &mut z);
    let i: Vec<f64> = z[..h].iter().map(|&v| sigmoid(v)).collect();
    let f: Vec<f64> = z[h..2 * h].iter().map(|&v| sigmoid(v)).collect();
    let g: Vec<f64> = z[2 * h..3 * h].iter().map(|&v| libm::tanh(v)).collect();
    let o: Vec<f64> = z[3 * h..].iter().map(|&v| sigmoid(v)).collect();
    let c: Vec<f64> = (0..h).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
    let tanh_c: Vec<f64> = c.iter().map(|&v| libm::tanh(v)).collect();
    let h_t: Vec<f64> = (0..h).map(|k| o[k] * tanh_c[k]).collect();
    let cache = StepCache {
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        c_prev: c_prev.to_vec(),
        i,
        f,
        g,
        o,
        c: c.clone(),
        tanh_c,
    };
    Ok((h_t, c, cache))
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| libm::exp(z - max)).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn cross_entropy(probs: &[f64], label: usize) -> Result<f64, NeuralError> {
    let p = probs.get(label).ok_or(NeuralError::BadLabel(label))?;
    Ok(-libm::log(p + LOG_EPS))
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
struct LayerCache {
    steps: Vec<StepCache>,
    // inverted-dropout mask applied to this layer's outputs before the next layer
    mask: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, PartialEq)]
struct SampleCache {
    layers: Vec<LayerCache>,
    top_h: Vec<f64>,
    probs: Vec<f64>,
}

/// Everything `backward` needs from a `forward` call.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardCache {
    fingerprint: u64,
    samples: Vec<SampleCache>,
}

impl ForwardCache {
    pub fn probs(&self) -> impl Iterator<Item = &[f64]> {
        self.samples.iter().map(|s| s.probs.as_slice())
    }
}

fn check_window(model: &ModelParams, window: &[f64]) -> Result<usize, NeuralError> {
    let f = model.input_width();
    if window.is_empty() || !window.len().is_multiple_of(f) {
        return Err(NeuralError::ShapeMismatch);
    }
    Ok(window.len() / f)
}

fn forward_one<R: Rng>(
    model: &ModelParams,
    window: &[f64],
    dropout: Option<(f64, &mut R)>,
) -> Result<(Vec<f64>, SampleCache), NeuralError> {
    let f = model.input_width();
    let steps = check_window(model, window)?;
    let mut inputs: Vec<Vec<f64>> = window.chunks(f).map(<[f64]>::to_vec).collect();
    let n_layers = model.layers.len();
    let mut layers = Vec::with_capacity(n_layers);
    let mut dropout = dropout;
    for (li, layer) in model.layers.iter().enumerate() {
        let h = layer.hidden();
        let (mut h_prev, mut c_prev) = (vec![0.0; h], vec![0.0; h]);
        let mut outputs = Vec::with_capacity(steps);
        let mut caches = Vec::with_capacity(steps);
        for x in &inputs {
            let (h_t, c_t, cache) = lstm_step(layer, x, &h_prev, &c_prev)?;
            outputs.push(h_t.clone());
            caches.push(cache);
            h_prev = h_t;
            c_prev = c_t;
        }
        let mut mask = None;
        if li + 1 < n_layers {
            if let Some((rate, rng)) = dropout.as_mut() {
                if *rate > 0.0 {
                    let keep = 1.0 - *rate;
                    let m: Vec<Vec<f64>> = (0..steps)
                        .map(|_| (0..h).map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect())
                        .collect();
                    for (out, mk) in outputs.iter_mut().zip(&m) {
                        for (o, k) in out.iter_mut().zip(mk) {
                            *o *= k;
                        }
                    }
                    mask = Some(m);
                }
            }
        }
        layers.push(LayerCache { steps: caches, mask });
        inputs = outputs;
    }
    let top_h = inputs.pop().ok_or(NeuralError::ShapeMismatch)?;
    let mut logits = model.head_b.clone();
    model.head_w.mul_vec_add(&top_h, &mut logits);
    let probs = softmax(&logits);
    Ok((logits, SampleCache { layers, top_h, probs }))
}

/// Runs a batch of row-major `steps × input_width` windows through the
/// network. With `train_mode` and a positive `dropout_rate`, inverted
/// dropout masks drawn from `rng` are applied between layers.
pub fn forward<R: Rng>(
    model: &ModelParams,
    batch: &[&[f64]],
    train_mode: bool,
    dropout_rate: f64,
    rng: &mut R,
) -> Result<(Vec<Vec<f64>>, ForwardCache), NeuralError> {
    let mut logits = Vec::with_capacity(batch.len());
    let mut samples = Vec::with_capacity(batch.len());
    let steps = batch.first().map(|w| w.len());
    for w in batch {
        if Some(w.len()) != steps {
            return Err(NeuralError::ShapeMismatch);
        }
        let dropout = (train_mode && dropout_rate > 0.0).then_some((dropout_rate, &mut *rng));
        let (z, cache) = forward_one(model, w, dropout)?;
        logits.push(z);
        samples.push(cache);
    }
    Ok((logits, ForwardCache { fingerprint: model.fingerprint(), samples }))
}

/// Mean cross-entropy of a cached forward pass.
pub fn batch_loss(cache: &ForwardCache, labels: &[usize]) -> Result<f64, NeuralError> {
    if labels.len() != cache.samples.len() || labels.is_empty() {
        return Err(NeuralError::ShapeMismatch);
    }
    let mut total = 0.0;
    for (s, &y) in cache.samples.iter().zip(labels) {
        total += cross_entropy(&s.probs, y)?;
    }
    Ok(total / labels.len() as f64)
}

/// Gradient of the mean batch cross-entropy with respect to every
/// parameter, by full backpropagation through time.
pub fn backward(
    model: &ModelParams,
    cache: &ForwardCache,
    labels: &[usize],
) -> Result<ModelParams, NeuralError> {
    if cache.fingerprint != model.fingerprint() {
        return Err(NeuralError::StaleCache);
    }
    if labels.len() != cache.samples.len() || labels.is_empty() {
        return Err(NeuralError::ShapeMismatch);
    }
    let c = model.num_classes();
    let scale = 1.0 / labels.len() as f64;
    let mut grads = model.zeros_like();
    for (sample, &y) in cache.samples.iter().zip(labels) {
        if y >= c {
            return Err(NeuralError::BadLabel(y));
        }
        // d/dz of -ln(p_y + eps)
        let p = &sample.probs;
        let k = p[y] / (p[y] + LOG_EPS);
        let dz: Vec<f64> = (0..c)
            .map(|j| scale * k * (p[j] - if j == y { 1.0 } else { 0.0 }))
            .collect();
        grads.head_w.add_outer(&dz, &sample.top_h);
        for (gb, d) in grads.head_b.iter_mut().zip(&dz) {
            *gb += d;
        }
        let steps = sample.layers[0].steps.len();
        let top_hidden = model.layers.last().map(|l| l.hidden()).unwrap_or(0);
        let mut dh_seq = vec![vec![0.0; top_hidden]; steps];
        model.head_w.tr_mul_vec_add(&dz, &mut dh_seq[steps - 1]);

        for li in (0..model.layers.len()).rev() {
            let layer = &model.layers[li];
            let lc = &sample.layers[li];
            let h = layer.hidden();
            let grad = &mut grads.layers[li];
            let mut dx_seq = vec![vec![0.0; layer.input_width()]; steps];
            let mut dh_next = vec![0.0; h];
            let mut dc_next = vec![0.0; h];
            let mut da = vec![0.0; 4 * h];
            for t in (0..steps).rev() {
                let s = &lc.steps[t];
                for k in 0..h {
                    let dh = dh_seq[t][k] + dh_next[k];
                    let d_o = dh * s.tanh_c[k];
                    let dc = dc_next[k] + dh * s.o[k] * (1.0 - s.tanh_c[k] * s.tanh_c[k]);
                    let di = dc * s.g[k];
                    let dg = dc * s.i[k];
                    let df = dc * s.c_prev[k];
                    dc_next[k] = dc * s.f[k];
                    da[k] = di * s.i[k] * (1.0 - s.i[k]);
                    da[h + k] = df * s.f[k] * (1.0 - s.f[k]);
                    da[2 * h + k] = dg * (1.0 - s.g[k] * s.g[k]);
                    da[3 * h + k] = d_o * s.o[k] * (1.0 - s.o[k]);
                }
                grad.w.add_outer(&da, &s.x);
                grad.u.add_outer(&da, &s.h_prev);
                for (gb, d) in grad.b.iter_mut().zip(&da) {
                    *gb += d;
                }
                layer.w.tr_mul_vec_add(&da, &mut dx_seq[t]);
                dh_next.iter_mut().for_each(|v| *v = 0.0);
                layer.u.tr_mul_vec_add(&da, &mut dh_next);
            }
            if li > 0 {
                if let Some(mask) = &sample.layers[li - 1].mask {
                    for (dx, mk) in dx_seq.iter_mut().zip(mask) {
                        for (d, m) in dx.iter_mut().zip(mk) {
                            *d *= m;
                        }
                    }
                }
                dh_seq = dx_seq;
            }
        }
    }
    Ok(grads)
}

/// Class with the highest softmax probability (lowest index on ties) and
/// the full distribution. Never applies dropout.
pub fn predict(model: &ModelParams, window: &[f64]) -> Result<(usize, Vec<f64>), NeuralError> {
    let (_, cache) = forward_one::<rand_chacha::ChaCha8Rng>(model, window, None)?;
    Ok((argmax(&cache.probs), cache.probs))
}

/// Raw logits for one window (inference mode).
pub fn logits(model: &ModelParams, window: &[f64]) -> Result<Vec<f64>, NeuralError> {
    forward_one::<rand_chacha::ChaCha8Rng>(model, window, None).map(|(z, _)| z)
}
