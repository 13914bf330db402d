use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::lstm::{backward, batch_loss, forward};
use super::optim::{apply_update, OptimizerState};
use super::params::{HyperParams, ModelParams};
use super::NeuralError;

/// Reported once per finished epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochProgress {
    pub epoch: usize,
    pub epochs: usize,
    pub mean_loss: f64,
}

/// Mini-batch training. Each epoch visits the samples in a freshly
/// shuffled order in batches of `hp.batch_size` (the last batch may be
/// smaller). Shuffling and dropout draw from one stream seeded by
/// `hp.seed`, so a fixed seed reproduces the run bit for bit.
///
/// Returns the trained parameters and the sample-weighted mean training
/// loss of every epoch.
pub fn train(
    model: &ModelParams,
    windows: &[&[f64]],
    labels: &[usize],
    hp: &HyperParams,
    mut progress: impl FnMut(EpochProgress),
) -> Result<(ModelParams, Vec<f64>), NeuralError> {
    if windows.is_empty() {
        return Err(NeuralError::EmptyDataset);
    }
    if windows.len() != labels.len() {
        return Err(NeuralError::ShapeMismatch);
    }
    hp.validate()?;
    model.check_shapes()?;
    if let Some(&bad) = labels.iter().find(|&&y| y >= model.num_classes()) {
        return Err(NeuralError::BadLabel(bad));
    }
    let mut params = model.clone();
    let mut state = OptimizerState::for_model(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut losses = Vec::with_capacity(hp.epochs);
    for epoch in 0..hp.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(hp.batch_size) {
            let batch: Vec<&[f64]> = chunk.iter().map(|&i| windows[i]).collect();
            let ys: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let (_, cache) = forward(&params, &batch, true, hp.dropout_rate, &mut rng)?;
            total += batch_loss(&cache, &ys)? * ys.len() as f64;
            let grads = backward(&params, &cache, &ys)?;
            apply_update(&mut params, &grads, &mut state, &hp.optimizer)?;
        }
        let mean_loss = total / windows.len() as f64;
        losses.push(mean_loss);
        progress(EpochProgress { epoch, epochs: hp.epochs, mean_loss });
    }
    Ok((params, losses))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::params::{init_params, Optimizer};

    #[test]
    fn zero_epochs_leave_model_unchanged() {
        let hp = HyperParams { epochs: 0, output_size: 4, ..Default::default() };
        let m = init_params(&hp, 1, 3).unwrap();
        let w = [0.1, 0.2, 0.3];
        let (out, losses) = train(&m, &[&w[..]], &[1], &hp, |_| {}).unwrap();
        assert_eq!(out, m);
        assert!(losses.is_empty());
    }

    #[test]
    fn empty_dataset() {
        let hp = HyperParams::default();
        let m = init_params(&hp, 1, 3).unwrap();
        assert_eq!(train(&m, &[], &[], &hp, |_| {}).unwrap_err(), NeuralError::EmptyDataset);
    }

    #[test]
    fn single_sample_overfits() {
        let hp = HyperParams {
            output_size: 8,
            epochs: 500,
            batch_size: 1,
            optimizer: Optimizer::adam(1e-2),
            seed: 5,
            ..Default::default()
        };
        let m = init_params(&hp, 1, 3).unwrap();
        let w = [0.5, -1.0, 0.25, 1.5, -0.5];
        let mut seen = 0;
        let (_, losses) = train(&m, &[&w[..]], &[2], &hp, |p| seen = p.epoch + 1).unwrap();
        assert_eq!(seen, 500);
        assert!(*losses.last().unwrap() < 0.01, "{:?}", losses.last());
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let hp = HyperParams {
            output_size: 5,
            num_layers: 2,
            dropout_rate: 0.3,
            epochs: 4,
            batch_size: 3,
            seed: 11,
            ..Default::default()
        };
        let m = init_params(&hp, 1, 2).unwrap();
        let data: Vec<Vec<f64>> = (0..7).map(|i| (0..4).map(|t| ((i * 4 + t) as f64).sin()).collect()).collect();
        let refs: Vec<&[f64]> = data.iter().map(Vec::as_slice).collect();
        let labels: Vec<usize> = (0..7).map(|i| i % 2).collect();
        let a = train(&m, &refs, &labels, &hp, |_| {}).unwrap();
        let b = train(&m, &refs, &labels, &hp, |_| {}).unwrap();
        assert_eq!(a.1, b.1);
        assert_eq!(a.0.fingerprint(), b.0.fingerprint());
    }
}
