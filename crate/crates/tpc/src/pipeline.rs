//! Multi-step operations behind the CLI commands.

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use tpc_core::ingest::{
    self, apply_normalization, derive_labels, make_windows, parse_traffic_csv, IngestError, JunctionId, WindowConfig,
};
use tpc_core::metrics::{confusion, MetricReport, MetricsError};
use tpc_core::neural::{init_params, predict, train, EpochProgress, HyperParams, NeuralError};
use tpc_core::roadnet::RoadnetError;
use tpc_core::routing::{pattern_from_predictions, DailyPattern, RoutingError, SpeedFactors};
use tpc_core::time::window_of;
use tpc_core::tuning::{assemble_report, evaluate_config, grid_expand, kfold_partition, CvReport, GridSpec, TuningError};
use tpc_core::{ClassTaxonomy, RoadGraph, RouteDb, SampleSet, Timestamp};

use crate::formats::{FormatError, ModelFile};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Tuning(#[from] TuningError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Roadnet(#[from] RoadnetError),
    #[error(transparent)]
    Routing(#[from] RoutingError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("{0}")]
    Other(String),
}

type Result<T> = std::result::Result<T, PipelineError>;

/// Labeled, windowed but unnormalized samples from sensor CSV text.
pub fn windows_from_csv(csv: &str, taxonomy: &ClassTaxonomy, window: &WindowConfig) -> Result<SampleSet> {
    let table = parse_traffic_csv(csv)?;
    let mut samples = Vec::new();
    for series in derive_labels(&table, taxonomy)? {
        samples.extend(make_windows(&series, window)?);
    }
    let mut set = SampleSet::raw(samples, taxonomy.clone());
    set.window = Some(*window);
    Ok(set)
}

/// Normalized training set and, when `test_fraction` is given, a held-out
/// set normalized with the training statistics.
pub fn ingest_csv(
    csv: &str,
    taxonomy: &ClassTaxonomy,
    window: &WindowConfig,
    test_fraction: Option<f64>,
    seed: u64,
) -> Result<(SampleSet, Option<SampleSet>)> {
    let raw = windows_from_csv(csv, taxonomy, window)?;
    if raw.is_empty() {
        return Err(PipelineError::Other("no complete windows; series are shorter than the window".into()));
    }
    match test_fraction {
        None => Ok((ingest::normalize(raw), None)),
        Some(f) => {
            let (train, test) = ingest::split(&raw, f, seed)?;
            let train = ingest::normalize(train);
            let test = apply_normalization(test, &train.norm_stats)?;
            Ok((train, Some(test)))
        }
    }
}

/// Grid search with configurations evaluated in parallel. Results do not
/// depend on the thread count.
pub fn tune_parallel(spec: &GridSpec, set: &SampleSet, k: usize, seed: u64, threads: Option<usize>) -> Result<CvReport> {
    if set.is_empty() {
        return Err(TuningError::EmptyDataset.into());
    }
    let configs = grid_expand(spec, seed)?;
    let plan = kfold_partition(set.len(), k, seed)?;
    let origin = Instant::now();
    let clock = move || origin.elapsed().as_secs_f64();
    let run = || {
        configs
            .par_iter()
            .enumerate()
            .map(|(i, hp)| evaluate_config(i, hp, set, &plan, &clock))
            .collect::<std::result::Result<Vec<_>, _>>()
    };
    let results = match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| PipelineError::Other(e.to_string()))?
            .install(run)?,
        None => run()?,
    };
    Ok(assemble_report(results, k, seed)?)
}

/// Trains on `set`. The model records the set's windowing (or `fallback`
/// when the set does not carry one) so it can be applied to raw readings.
pub fn train_model(
    set: &SampleSet,
    hp: &HyperParams,
    fallback: WindowConfig,
    progress: impl FnMut(EpochProgress),
) -> Result<ModelFile> {
    let (_, features) = set.shape().ok_or(NeuralError::EmptyDataset)?;
    let init = init_params(hp, features, set.taxonomy.num_classes())?;
    let windows: Vec<&[f64]> = set.samples.iter().map(|s| s.window.as_slice()).collect();
    let labels: Vec<usize> = set.samples.iter().map(|s| s.label).collect();
    let (params, _) = train(&init, &windows, &labels, hp, progress)?;
    Ok(ModelFile {
        hyperparams: hp.clone(),
        taxonomy: set.taxonomy.clone(),
        window: set.window.unwrap_or(fallback),
        norm_stats: set.norm_stats.clone(),
        params,
    })
}

pub fn evaluate(model: &ModelFile, set: &SampleSet) -> Result<MetricReport> {
    if set.taxonomy.num_classes() != model.taxonomy.num_classes() {
        return Err(PipelineError::Other("dataset and model use different taxonomies".into()));
    }
    let preds = set
        .samples
        .iter()
        .map(|s| Ok(predict(&model.params, &s.window)?.0))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = set.samples.iter().map(|s| s.label).collect();
    let cm = confusion(&preds, &labels, model.taxonomy.num_classes())?;
    Ok(MetricReport::new(cm, model.taxonomy.names())?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub junction: JunctionId,
    pub window_start: Timestamp,
    /// Time of the reading being predicted.
    pub label_at: Timestamp,
    pub class: usize,
    pub class_name: String,
    pub probs: Vec<f64>,
}

/// Applies a model to raw sensor CSV using its stored windowing and
/// normalization.
pub fn classify_csv(model: &ModelFile, csv: &str) -> Result<Vec<Classification>> {
    let raw = windows_from_csv(csv, &model.taxonomy, &model.window)?;
    let set = apply_normalization(raw, &model.norm_stats)?;
    set.samples
        .iter()
        .map(|s| {
            let (class, probs) = predict(&model.params, &s.window)?;
            Ok(Classification {
                junction: s.junction,
                window_start: s.window_start,
                label_at: s.label_at,
                class,
                class_name: model.taxonomy.names()[class].clone(),
                probs,
            })
        })
        .collect()
}

/// Daily patterns from classifier output. Each segment takes the votes of
/// its sensor, bucketed by the daily window of the predicted reading;
/// segments without a sensor run at their speed limit all day.
pub fn build_route_db(
    graph: RoadGraph,
    classes: &[Classification],
    num_windows: usize,
    factors: &SpeedFactors,
) -> Result<RouteDb> {
    let mut votes: BTreeMap<JunctionId, Vec<Vec<usize>>> = BTreeMap::new();
    for c in classes {
        let w = window_of(c.label_at.seconds_of_day() as f64, num_windows);
        votes.entry(c.junction).or_insert_with(|| vec![Vec::new(); num_windows])[w].push(c.class);
    }
    let mut patterns = Vec::with_capacity(graph.segments().len());
    for seg in graph.segments() {
        let p = match seg.sensor {
            None => DailyPattern::flat(seg, num_windows),
            Some(j) => {
                let v = votes
                    .get(&j)
                    .ok_or_else(|| PipelineError::Other(format!("segment {} uses sensor {j}, which has no readings", seg.id)))?;
                pattern_from_predictions(seg, v, factors)
                    .map_err(|e| PipelineError::Other(format!("segment {} (sensor {j}): {e}", seg.id)))?
            }
        };
        patterns.push(p);
    }
    Ok(RouteDb::new(graph, num_windows, patterns)?)
}
