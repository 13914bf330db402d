//! Exhaustive hyperparameter grid search scored by k-fold cross-validation.
//!
//! Every configuration is evaluated on the same fold plan, so scores are
//! directly comparable. Configurations are independent work items: callers
//! may evaluate them in any order (or in parallel) with
//! [`evaluate_config`] and combine the results with [`assemble_report`];
//! the report depends only on the set of results, never on their order.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ingest::{SampleSet, TrafficSample};
use crate::metrics::{accuracy, confusion, precision_recall_f1, MetricsError};
use crate::neural::{
    init_params, predict, train, HyperParams, KernelInit, NeuralError, Optimizer, OutputActivation,
    RecurrentInit,
};

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum TuningError {
    #[error("k = {k} folds need 2 <= k <= n = {n}")]
    KTooLarge { k: usize, n: usize },
    #[error("grid axis `{0}` is empty")]
    EmptyAxis(&'static str),
    #[error("output_activation axis must be exactly [softmax]")]
    BadActivationAxis,
    #[error("invalid fold plan: {0}")]
    BadPlan(&'static str),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Candidate values per hyperparameter axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub output_size: Vec<usize>,
    pub kernel_init: Vec<KernelInit>,
    pub recurrent_init: Vec<RecurrentInit>,
    pub dropout_rate: Vec<f64>,
    pub output_activation: Vec<OutputActivation>,
    pub optimizer: Vec<Optimizer>,
    pub batch_size: Vec<usize>,
    pub num_layers: Vec<usize>,
    pub epochs: Vec<usize>,
}

impl Default for GridSpec {
    /// 2·2·2·2·1·1·3·2·1 = 96 configurations.
    fn default() -> Self {
        GridSpec {
            output_size: vec![16, 32],
            kernel_init: vec![KernelInit::GlorotUniform, KernelInit::HeUniform],
            recurrent_init: vec![RecurrentInit::GlorotUniform, RecurrentInit::ScaledIdentity(1.0)],
            dropout_rate: vec![0.0, 0.2],
            output_activation: vec![OutputActivation::Softmax],
            optimizer: vec![Optimizer::adam(1e-2)],
            batch_size: vec![16, 32, 64],
            num_layers: vec![1, 2],
            epochs: vec![20],
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<(), TuningError> {
        let axes: [(&'static str, usize); 9] = [
            ("output_size", self.output_size.len()),
            ("kernel_init", self.kernel_init.len()),
            ("recurrent_init", self.recurrent_init.len()),
            ("dropout_rate", self.dropout_rate.len()),
            ("output_activation", self.output_activation.len()),
            ("optimizer", self.optimizer.len()),
            ("batch_size", self.batch_size.len()),
            ("num_layers", self.num_layers.len()),
            ("epochs", self.epochs.len()),
        ];
        if let Some((name, _)) = axes.iter().find(|(_, n)| *n == 0) {
            return Err(TuningError::EmptyAxis(name));
        }
        if self.output_activation != [OutputActivation::Softmax] {
            return Err(TuningError::BadActivationAxis);
        }
        Ok(())
    }

    /// Product of the axis lengths.
    pub fn size(&self) -> usize {
        self.output_size.len()
            * self.kernel_init.len()
            * self.recurrent_init.len()
            * self.dropout_rate.len()
            * self.output_activation.len()
            * self.optimizer.len()
            * self.batch_size.len()
            * self.num_layers.len()
            * self.epochs.len()
    }
}

/// Cartesian product of the grid, first axis varying slowest. Every
/// configuration carries `seed`.
pub fn grid_expand(spec: &GridSpec, seed: u64) -> Result<Vec<HyperParams>, TuningError> {
    spec.validate()?;
    let mut out = Vec::with_capacity(spec.size());
    for &output_size in &spec.output_size {
        for &kernel_init in &spec.kernel_init {
            for &recurrent_init in &spec.recurrent_init {
                for &dropout_rate in &spec.dropout_rate {
                    for &output_activation in &spec.output_activation {
                        for &optimizer in &spec.optimizer {
                            for &batch_size in &spec.batch_size {
                                for &num_layers in &spec.num_layers {
                                    for &epochs in &spec.epochs {
                                        out.push(HyperParams {
                                            output_size,
                                            kernel_init,
                                            recurrent_init,
                                            dropout_rate,
                                            output_activation,
                                            optimizer,
                                            batch_size,
                                            num_layers,
                                            epochs,
                                            seed,
                                        });
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Assignment of sample indices to `k` folds whose sizes differ by at most one.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    k: usize,
    assignment: Vec<usize>,
}

impl FoldPlan {
    pub fn from_assignment(k: usize, assignment: Vec<usize>) -> Result<Self, TuningError> {
        let n = assignment.len();
        if k < 2 || k > n {
            return Err(TuningError::KTooLarge { k, n });
        }
        let mut sizes = vec![0usize; k];
        for &f in &assignment {
            if f >= k {
                return Err(TuningError::BadPlan("fold index out of range"));
            }
            sizes[f] += 1;
        }
        let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
        if hi - lo > 1 {
            return Err(TuningError::BadPlan("fold sizes differ by more than one"));
        }
        Ok(FoldPlan { k, assignment })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn fold_of(&self, index: usize) -> usize {
        self.assignment[index]
    }

    /// Ascending sample indices held out in `fold`.
    pub fn fold_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] == fold).collect()
    }
}

/// Seeded shuffle of `0..n`, then contiguous slices; the first `n mod k`
/// folds take one extra index.
pub fn kfold_partition(n: usize, k: usize, seed: u64) -> Result<FoldPlan, TuningError> {
    if k < 2 || k > n {
        return Err(TuningError::KTooLarge { k, n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / k, n % k);
    let mut assignment = vec![0; n];
    let mut pos = 0;
    for fold in 0..k {
        let size = base + usize::from(fold < extra);
        for &i in &order[pos..pos + size] {
            assignment[i] = fold;
        }
        pos += size;
    }
    Ok(FoldPlan { k, assignment })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldScore {
    pub accuracy: f64,
    pub macro_f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub folds: Vec<FoldScore>,
    pub mean_accuracy: f64,
    pub mean_macro_f1: f64,
}

/// Cross-validation with a caller-supplied learner. For each fold the
/// learner receives the hyperparameters (with `seed ^ fold` as seed), the
/// training samples and the held-out samples, and returns one predicted
/// class per held-out sample.
pub fn cross_validate_with<F>(
    hp: &HyperParams,
    set: &SampleSet,
    plan: &FoldPlan,
    mut fit_predict: F,
) -> Result<CvResult, TuningError>
where
    F: FnMut(&HyperParams, &[&TrafficSample], &[&TrafficSample]) -> Result<Vec<usize>, TuningError>,
{
    if plan.len() != set.len() {
        return Err(TuningError::BadPlan("plan does not cover the dataset"));
    }
    let classes = set.taxonomy.num_classes();
    let mut folds = Vec::with_capacity(plan.k());
    for fold in 0..plan.k() {
        let (mut tr, mut va) = (Vec::new(), Vec::new());
        for (i, s) in set.samples.iter().enumerate() {
            if plan.fold_of(i) == fold {
                va.push(s);
            } else {
                tr.push(s);
            }
        }
        let fold_hp = HyperParams { seed: hp.seed ^ fold as u64, ..hp.clone() };
        let preds = fit_predict(&fold_hp, &tr, &va)?;
        let labels: Vec<usize> = va.iter().map(|s| s.label).collect();
        let cm = confusion(&preds, &labels, classes)?;
        folds.push(FoldScore { accuracy: accuracy(&cm)?, macro_f1: precision_recall_f1(&cm)?.macro_f1 });
    }
    let k = folds.len() as f64;
    Ok(CvResult {
        mean_accuracy: folds.iter().map(|f| f.accuracy).sum::<f64>() / k,
        mean_macro_f1: folds.iter().map(|f| f.macro_f1).sum::<f64>() / k,
        folds,
    })
}

/// Trains a fresh LSTM on `train_set` and predicts `eval_set`.
pub fn lstm_fit_predict(
    hp: &HyperParams,
    train_set: &[&TrafficSample],
    eval_set: &[&TrafficSample],
    classes: usize,
) -> Result<Vec<usize>, TuningError> {
    let first = train_set.first().ok_or(TuningError::EmptyDataset)?;
    let model = init_params(hp, first.features, classes)?;
    let windows: Vec<&[f64]> = train_set.iter().map(|s| s.window.as_slice()).collect();
    let labels: Vec<usize> = train_set.iter().map(|s| s.label).collect();
    let (model, _) = train(&model, &windows, &labels, hp, |_| {})?;
    eval_set
        .iter()
        .map(|s| Ok(predict(&model, &s.window)?.0))
        .collect()
}

pub fn cross_validate(hp: &HyperParams, set: &SampleSet, plan: &FoldPlan) -> Result<CvResult, TuningError> {
    let classes = set.taxonomy.num_classes();
    cross_validate_with(hp, set, plan, |hp, tr, va| lstm_fit_predict(hp, tr, va, classes))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigResult {
    /// Position in the expanded grid.
    pub ordinal: usize,
    pub hyperparams: HyperParams,
    pub cv: CvResult,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub k: usize,
    pub seed: u64,
    /// Results in ordinal order.
    pub configs: Vec<ConfigResult>,
    /// Ordinals sorted best first.
    pub ranking: Vec<usize>,
    pub best: usize,
}

impl CvReport {
    pub fn best_config(&self) -> &ConfigResult {
        &self.configs[self.best]
    }
}

/// Cross-validates one configuration; `clock` returns seconds from any
/// fixed origin and is only used for the reported wall time.
pub fn evaluate_config(
    ordinal: usize,
    hp: &HyperParams,
    set: &SampleSet,
    plan: &FoldPlan,
    clock: &dyn Fn() -> f64,
) -> Result<ConfigResult, TuningError> {
    let start = clock();
    let cv = cross_validate(hp, set, plan)?;
    Ok(ConfigResult { ordinal, hyperparams: hp.clone(), cv, wall_seconds: clock() - start })
}

/// Orders results by ordinal and ranks them by mean accuracy (desc), mean
/// macro-F1 (desc), then ordinal (asc).
pub fn assemble_report(mut configs: Vec<ConfigResult>, k: usize, seed: u64) -> Result<CvReport, TuningError> {
    if configs.is_empty() {
        return Err(TuningError::EmptyAxis("configs"));
    }
    configs.sort_by_key(|c| c.ordinal);
    if configs.iter().enumerate().any(|(i, c)| c.ordinal != i) {
        return Err(TuningError::BadPlan("config ordinals must be 0..n without gaps"));
    }
    let mut ranking: Vec<usize> = (0..configs.len()).collect();
    ranking.sort_by(|&a, &b| {
        let (ca, cb) = (&configs[a].cv, &configs[b].cv);
        cb.mean_accuracy
            .total_cmp(&ca.mean_accuracy)
            .then(cb.mean_macro_f1.total_cmp(&ca.mean_macro_f1))
            .then(a.cmp(&b))
    });
    Ok(CvReport { k, seed, best: ranking[0], ranking, configs })
}

/// Sequential grid search over `spec` with a shared `k`-fold plan.
pub fn grid_search(
    spec: &GridSpec,
    set: &SampleSet,
    k: usize,
    seed: u64,
    clock: &dyn Fn() -> f64,
) -> Result<CvReport, TuningError> {
    if set.is_empty() {
        return Err(TuningError::EmptyDataset);
    }
    let configs = grid_expand(spec, seed)?;
    let plan = kfold_partition(set.len(), k, seed)?;
    let results = configs
        .iter()
        .enumerate()
        .map(|(i, hp)| evaluate_config(i, hp, set, &plan, clock))
        .collect::<Result<Vec<_>, _>>()?;
    assemble_report(results, k, seed)
}
