//! Hyperparameters, parameter tensors and weight initialization.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::NeuralError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelInit {
    GlorotUniform,
    HeUniform,
    ScaledUniform(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecurrentInit {
    GlorotUniform,
    /// `gain · I` in every gate block.
    ScaledIdentity(f64),
}

/// The classifier head is always a softmax; the enum exists so the setting
/// is explicit in grid specs and model files.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    #[default]
    Softmax,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Adam {
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
    Sgd {
        lr: f64,
    },
}

impl Optimizer {
    pub fn adam(lr: f64) -> Self {
        Optimizer::Adam { lr, beta1: default_beta1(), beta2: default_beta2(), eps: default_eps() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Hidden units per LSTM layer.
    pub output_size: usize,
    pub kernel_init: KernelInit,
    pub recurrent_init: RecurrentInit,
    pub dropout_rate: f64,
    #[serde(default)]
    pub output_activation: OutputActivation,
    pub optimizer: Optimizer,
    pub batch_size: usize,
    pub num_layers: usize,
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            output_size: 16,
            kernel_init: KernelInit::GlorotUniform,
            recurrent_init: RecurrentInit::GlorotUniform,
            dropout_rate: 0.0,
            output_activation: OutputActivation::Softmax,
            optimizer: Optimizer::adam(1e-2),
            batch_size: 32,
            num_layers: 1,
            epochs: 20,
            seed: 0,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<(), NeuralError> {
        let bad = |m| Err(NeuralError::BadHyperParams(m));
        if self.output_size == 0 {
            return bad("output_size must be at least 1");
        }
        if self.num_layers == 0 {
            return bad("num_layers must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.dropout_rate >= 0.0 && self.dropout_rate < 1.0) {
            return bad("dropout_rate must lie in [0, 1)");
        }
        match self.kernel_init {
            KernelInit::ScaledUniform(l) if !(l > 0.0 && l.is_finite()) => {
                return bad("scaled_uniform limit must be positive")
            }
            _ => {}
        }
        match self.optimizer {
            Optimizer::Adam { lr, beta1, beta2, eps } => {
                if !(lr > 0.0) || !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
                    return bad("invalid adam settings");
                }
            }
            Optimizer::Sgd { lr } if !(lr > 0.0) => return bad("sgd learning rate must be positive"),
            _ => {}
        }
        Ok(())
    }
}

/// One LSTM layer. Rows of `w`, `u` and `b` are four stacked gate blocks
/// of `hidden` rows each, in the order input, forget, cell candidate, output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmLayerParams {
    pub w: Matrix,
    pub u: Matrix,
    pub b: Vec<f64>,
}

impl LstmLayerParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        LstmLayerParams {
            w: Matrix::zeros(4 * hidden, input),
            u: Matrix::zeros(4 * hidden, hidden),
            b: vec![0.0; 4 * hidden],
        }
    }

    pub fn hidden(&self) -> usize {
        self.u.cols
    }

    pub fn input_width(&self) -> usize {
        self.w.cols
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub layers: Vec<LstmLayerParams>,
    pub head_w: Matrix,
    pub head_b: Vec<f64>,
}

impl ModelParams {
    /// All-zero parameters with the geometry of `input → hidden^layers → classes`.
    pub fn zeros(input: usize, hidden: usize, layers: usize, classes: usize) -> Self {
        ModelParams {
            layers: (0..layers)
                .map(|l| LstmLayerParams::zeros(if l == 0 { input } else { hidden }, hidden))
                .collect(),
            head_w: Matrix::zeros(classes, hidden),
            head_b: vec![0.0; classes],
        }
    }

    pub fn zeros_like(&self) -> Self {
        let hidden = self.layers[0].hidden();
        ModelParams::zeros(self.input_width(), hidden, self.layers.len(), self.num_classes())
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].input_width()
    }

    pub fn num_classes(&self) -> usize {
        self.head_b.len()
    }

    /// Checks the tensor shapes chain together.
    pub fn check_shapes(&self) -> Result<(), NeuralError> {
        let bad = |m| Err(NeuralError::BadShape(m));
        let Some(first) = self.layers.first() else {
            return bad("model needs at least one layer");
        };
        let h = first.hidden();
        if h == 0 || first.input_width() == 0 {
            return bad("empty layer");
        }
        for (i, l) in self.layers.iter().enumerate() {
            if !l.w.is_well_formed() || !l.u.is_well_formed() {
                return bad("tensor data length does not match its shape");
            }
            if l.w.rows != 4 * h || l.u.rows != 4 * h || l.u.cols != h || l.b.len() != 4 * h {
                return bad("inconsistent hidden width");
            }
            if i > 0 && l.w.cols != h {
                return bad("layer input width must equal previous hidden width");
            }
        }
        if !self.head_w.is_well_formed() || self.head_w.cols != h || self.head_w.rows != self.head_b.len() {
            return bad("head shape mismatch");
        }
        if self.head_b.len() < 2 {
            return bad("need at least two classes");
        }
        Ok(())
    }

    /// Every parameter tensor as a flat slice, in a fixed order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::with_capacity(3 * self.layers.len() + 2);
        for l in &self.layers {
            out.push(&l.w.data);
            out.push(&l.u.data);
            out.push(&l.b);
        }
        out.push(&self.head_w.data);
        out.push(&self.head_b);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(3 * self.layers.len() + 2);
        for l in &mut self.layers {
            out.push(&mut l.w.data);
            out.push(&mut l.u.data);
            out.push(&mut l.b);
        }
        out.push(&mut self.head_w.data);
        out.push(&mut self.head_b);
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// FNV-1a over the bit patterns of every parameter.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for t in self.tensors() {
            for &x in t {
                h ^= x.to_bits();
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
            h ^= t.len() as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }
}

pub fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    libm::sqrt(6.0 / (fan_in + fan_out) as f64)
}

pub fn he_limit(fan_in: usize) -> f64 {
    libm::sqrt(6.0 / fan_in as f64)
}

fn uniform(rng: &mut ChaCha8Rng, m: &mut Matrix, limit: f64) {
    for x in m.data.iter_mut() {
        *x = rng.gen_range(-limit..=limit);
    }
}

fn init_kernel(rng: &mut ChaCha8Rng, m: &mut Matrix, scheme: KernelInit) {
    // kernel (rows × cols) maps cols inputs onto rows outputs
    let limit = match scheme {
        KernelInit::GlorotUniform => glorot_limit(m.cols, m.rows),
        KernelInit::HeUniform => he_limit(m.cols),
        KernelInit::ScaledUniform(l) => l,
    };
    uniform(rng, m, limit);
}

/// Draws initial parameters for an `input_width`-feature, `classes`-way
/// classifier. Deterministic in `hp.seed`; forget-gate biases start at 1.
pub fn init_params(
    hp: &HyperParams,
    input_width: usize,
    classes: usize,
) -> Result<ModelParams, NeuralError> {
    if input_width == 0 {
        return Err(NeuralError::BadShape("input width must be at least 1"));
    }
    if classes < 2 {
        return Err(NeuralError::BadShape("need at least two classes"));
    }
    hp.validate()?;
    let h = hp.output_size;
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut model = ModelParams::zeros(input_width, h, hp.num_layers, classes);
    for layer in &mut model.layers {
        init_kernel(&mut rng, &mut layer.w, hp.kernel_init);
        match hp.recurrent_init {
            RecurrentInit::GlorotUniform => {
                let limit = glorot_limit(layer.u.cols, layer.u.rows);
                uniform(&mut rng, &mut layer.u, limit);
            }
            RecurrentInit::ScaledIdentity(gain) => {
                for gate in 0..4 {
                    for k in 0..h {
                        layer.u.set(gate * h + k, k, gain);
                    }
                }
            }
        }
        for b in &mut layer.b[h..2 * h] {
            *b = 1.0;
        }
    }
    let limit = glorot_limit(h, classes);
    uniform(&mut rng, &mut model.head_w, limit);
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn limits() {
        assert_eq!(glorot_limit(3, 3), 1.0);
        assert_eq!(he_limit(6), 1.0);
    }

    #[test]
    fn init_is_deterministic() {
        let hp = HyperParams { num_layers: 2, output_size: 5, seed: 42, ..Default::default() };
        let a = init_params(&hp, 3, 3).unwrap();
        let b = init_params(&hp, 3, 3).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_eq!(a, b);
        let c = init_params(&HyperParams { seed: 43, ..hp }, 3, 3).unwrap();
        assert_ne!(a, c);
        a.check_shapes().unwrap();
    }

    #[test]
    fn glorot_samples_within_limit() {
        // fan_in = F = 3, fan_out = 4H = 3 is impossible for an LSTM kernel,
        // so exercise the head: fan_in = H = 3, fan_out = C = 3.
        let hp = HyperParams { output_size: 3, seed: 9, ..Default::default() };
        let m = init_params(&hp, 2, 3).unwrap();
        assert!(m.head_w.data.iter().all(|x| x.abs() <= 1.0));
        assert!(m.head_w.data.iter().any(|x| x.abs() > 0.5));
        let lim = glorot_limit(2, 12);
        assert!(m.layers[0].w.data.iter().all(|x| x.abs() <= lim));
    }

    #[test]
    fn scaled_identity_blocks() {
        let hp = HyperParams {
            output_size: 4,
            recurrent_init: RecurrentInit::ScaledIdentity(1.0),
            ..Default::default()
        };
        let m = init_params(&hp, 2, 3).unwrap();
        let u = &m.layers[0].u;
        for gate in 0..4 {
            for r in 0..4 {
                for c in 0..4 {
                    assert_eq!(u.get(gate * 4 + r, c), if r == c { 1.0 } else { 0.0 });
                }
            }
        }
        assert_eq!(&m.layers[0].b[4..8], &[1.0; 4]);
        assert_eq!(&m.layers[0].b[..4], &[0.0; 4]);
    }

    #[test]
    fn bad_shapes() {
        let hp = HyperParams::default();
        assert!(matches!(init_params(&hp, 0, 3), Err(NeuralError::BadShape(_))));
        assert!(matches!(init_params(&hp, 1, 1), Err(NeuralError::BadShape(_))));
        let bad = HyperParams { dropout_rate: 1.0, ..Default::default() };
        assert!(matches!(init_params(&bad, 1, 3), Err(NeuralError::BadHyperParams(_))));
    }
}
