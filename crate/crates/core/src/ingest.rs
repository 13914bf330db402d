//! Sensor CSV ingestion: parsing, congestion labels, windowing,
//! normalization and train/test splitting.
//!
//! The input is the four-column junction count export
//! (`DateTime,Junction,Vehicles,ID`). Counts carry no congestion label, so
//! labels are derived per junction from empirical count quantiles.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::time::Timestamp;

pub type JunctionId = u32;

pub const CSV_HEADER: &str = "DateTime,Junction,Vehicles,ID";

/// Minimum number of readings per junction before labels are derived.
pub const MIN_ROWS_PER_JUNCTION: usize = 10;

/// Standard deviations below this are treated as zero by the normalizer.
pub const STD_GUARD: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum IngestError {
    #[error("header must be exactly `{CSV_HEADER}`")]
    MalformedHeader,
    #[error("line {0}: expected 4 comma-separated fields")]
    MalformedRow(usize),
    #[error("line {0}: bad timestamp")]
    BadTimestamp(usize),
    #[error("line {0}: bad junction identifier")]
    BadJunction(usize),
    #[error("line {0}: vehicle count is not an integer")]
    BadCount(usize),
    #[error("line {0}: negative vehicle count")]
    NegativeCount(usize),
    #[error("junction {0}: duplicate reading at {1}")]
    DuplicateTimestamp(JunctionId, Timestamp),
    #[error("junction {0}: fewer than {MIN_ROWS_PER_JUNCTION} readings")]
    TooFewRows(JunctionId),
    #[error("invalid taxonomy: {0}")]
    BadTaxonomy(&'static str),
    #[error("test fraction must lie strictly between 0 and 1")]
    BadFraction,
    #[error("split would leave one side empty")]
    EmptySplit,
    #[error("no normalization statistics for junction {0}")]
    UnknownJunction(JunctionId),
    #[error("window length and horizon must be at least 1")]
    BadWindow,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub timestamp: Timestamp,
    pub junction: JunctionId,
    pub vehicles: u64,
    pub record_id: String,
}

/// Parsed readings, sorted by `(junction, timestamp)` with no duplicates.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ObservationTable {
    rows: Vec<Observation>,
}

impl ObservationTable {
    pub fn rows(&self) -> &[Observation] {
        &self.rows
    }

    pub fn junctions(&self) -> Vec<JunctionId> {
        let mut out: Vec<JunctionId> = self.rows.iter().map(|r| r.junction).collect();
        out.dedup();
        out
    }

    /// The contiguous, time-ordered run of readings for one junction.
    pub fn series(&self, junction: JunctionId) -> &[Observation] {
        let start = self.rows.partition_point(|r| r.junction < junction);
        let end = self.rows.partition_point(|r| r.junction <= junction);
        &self.rows[start..end]
    }
}

/// Parses the junction count CSV. Rows may appear in any order; the
/// result is grouped by junction and sorted by time.
pub fn parse_traffic_csv(text: &str) -> Result<ObservationTable, IngestError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end_matches('\r') == CSV_HEADER => {}
        _ => return Err(IngestError::MalformedHeader),
    }
    let mut rows = Vec::new();
    for (idx, raw) in lines {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(IngestError::MalformedRow(line_no));
        }
        let timestamp =
            Timestamp::parse(fields[0].trim()).map_err(|_| IngestError::BadTimestamp(line_no))?;
        let junction = fields[1]
            .trim()
            .parse::<JunctionId>()
            .map_err(|_| IngestError::BadJunction(line_no))?;
        let count = fields[2]
            .trim()
            .parse::<i64>()
            .map_err(|_| IngestError::BadCount(line_no))?;
        if count < 0 {
            return Err(IngestError::NegativeCount(line_no));
        }
        rows.push(Observation {
            timestamp,
            junction,
            vehicles: count as u64,
            record_id: fields[3].trim().to_string(),
        });
    }
    rows.sort_by_key(|r| (r.junction, r.timestamp));
    if let Some(w) = rows
        .windows(2)
        .find(|w| w[0].junction == w[1].junction && w[0].timestamp == w[1].timestamp)
    {
        return Err(IngestError::DuplicateTimestamp(w[1].junction, w[1].timestamp));
    }
    Ok(ObservationTable { rows })
}

/// Ordered congestion classes and the count quantiles that separate them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassTaxonomy {
    names: Vec<String>,
    quantile_cuts: Vec<f64>,
}

impl ClassTaxonomy {
    pub fn new(names: Vec<String>, quantile_cuts: Vec<f64>) -> Result<Self, IngestError> {
        if names.len() < 2 {
            return Err(IngestError::BadTaxonomy("need at least two classes"));
        }
        if quantile_cuts.len() + 1 != names.len() {
            return Err(IngestError::BadTaxonomy("need exactly one cut fewer than classes"));
        }
        if quantile_cuts.iter().any(|&q| !(q > 0.0 && q < 1.0)) {
            return Err(IngestError::BadTaxonomy("cuts must lie in (0, 1)"));
        }
        if quantile_cuts.windows(2).any(|w| w[0] >= w[1]) {
            return Err(IngestError::BadTaxonomy("cuts must be strictly increasing"));
        }
        Ok(ClassTaxonomy { names, quantile_cuts })
    }

    pub fn num_classes(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn quantile_cuts(&self) -> &[f64] {
        &self.quantile_cuts
    }

    /// Re-validates a deserialized taxonomy.
    pub fn validate(&self) -> Result<(), IngestError> {
        ClassTaxonomy::new(self.names.clone(), self.quantile_cuts.clone()).map(|_| ())
    }
}

impl Default for ClassTaxonomy {
    fn default() -> Self {
        ClassTaxonomy {
            names: vec!["free_flow".into(), "moderate".into(), "congested".into()],
            quantile_cuts: vec![0.40, 0.75],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledSeries {
    pub junction: JunctionId,
    pub timestamps: Vec<Timestamp>,
    pub values: Vec<f64>,
    pub labels: Vec<usize>,
}

/// Value at 1-based rank `max(1, floor(q·n))` of an ascending slice.
pub fn rank_quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let rank = (libm::floor(q * n as f64 + 1e-9) as usize).clamp(1, n);
    sorted[rank - 1]
}

/// Class of `value` given ascending class thresholds: the number of
/// thresholds strictly below it.
pub fn class_of(value: f64, thresholds: &[f64]) -> usize {
    thresholds.iter().filter(|&&t| t < value).count()
}

pub fn derive_labels(
    table: &ObservationTable,
    taxonomy: &ClassTaxonomy,
) -> Result<Vec<LabeledSeries>, IngestError> {
    table
        .junctions()
        .into_iter()
        .map(|junction| {
            let rows = table.series(junction);
            if rows.len() < MIN_ROWS_PER_JUNCTION {
                return Err(IngestError::TooFewRows(junction));
            }
            let values: Vec<f64> = rows.iter().map(|r| r.vehicles as f64).collect();
            let mut sorted = values.clone();
            sorted.sort_by(f64::total_cmp);
            let thresholds: Vec<f64> = taxonomy
                .quantile_cuts
                .iter()
                .map(|&q| rank_quantile(&sorted, q))
                .collect();
            let labels = values.iter().map(|&v| class_of(v, &thresholds)).collect();
            Ok(LabeledSeries {
                junction,
                timestamps: rows.iter().map(|r| r.timestamp).collect(),
                values,
                labels,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowConfig {
    /// Timesteps per window.
    pub length: usize,
    /// Steps past the window end whose label the window predicts.
    pub horizon: usize,
    /// Append sine/cosine of the hour of day to every timestep.
    pub time_features: bool,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig { length: 12, horizon: 1, time_features: false }
    }
}

impl WindowConfig {
    pub fn feature_width(&self) -> usize {
        if self.time_features {
            3
        } else {
            1
        }
    }
}

/// One classifier input: `steps × features` readings (row-major) and the
/// class observed `horizon` steps after the window closes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrafficSample {
    pub steps: usize,
    pub features: usize,
    pub window: Vec<f64>,
    pub label: usize,
    pub junction: JunctionId,
    pub window_start: Timestamp,
    /// Time of the reading the label was taken from.
    pub label_at: Timestamp,
}

impl TrafficSample {
    pub fn step(&self, t: usize) -> &[f64] {
        &self.window[t * self.features..(t + 1) * self.features]
    }
}

/// Number of windows `make_windows` yields for a series of `len` readings.
pub fn window_count(len: usize, length: usize, horizon: usize) -> usize {
    len.saturating_sub(length + horizon - 1)
}

fn hour_features(ts: Timestamp) -> (f64, f64) {
    let angle = 2.0 * PI * ts.seconds_of_day() as f64 / 86_400.0;
    (libm::sin(angle), libm::cos(angle))
}

pub fn make_windows(
    series: &LabeledSeries,
    cfg: &WindowConfig,
) -> Result<Vec<TrafficSample>, IngestError> {
    if cfg.length == 0 || cfg.horizon == 0 {
        return Err(IngestError::BadWindow);
    }
    let n = window_count(series.values.len(), cfg.length, cfg.horizon);
    let width = cfg.feature_width();
    Ok((0..n)
        .map(|start| {
            let mut window = Vec::with_capacity(cfg.length * width);
            for t in start..start + cfg.length {
                window.push(series.values[t]);
                if cfg.time_features {
                    let (s, c) = hour_features(series.timestamps[t]);
                    window.push(s);
                    window.push(c);
                }
            }
            let target = start + cfg.length - 1 + cfg.horizon;
            TrafficSample {
                steps: cfg.length,
                features: width,
                window,
                label: series.labels[target],
                junction: series.junction,
                window_start: series.timestamps[start],
                label_at: series.timestamps[target],
            }
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

impl NormStats {
    pub fn apply(&self, raw: f64) -> f64 {
        if self.std < STD_GUARD {
            0.0
        } else {
            (raw - self.mean) / self.std
        }
    }

    pub fn invert(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// Samples sharing window geometry and taxonomy. `norm_stats` is empty
/// until the set has been normalized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub taxonomy: ClassTaxonomy,
    /// How the windows were cut, when they came from a sensor series.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<WindowConfig>,
    pub norm_stats: BTreeMap<JunctionId, NormStats>,
    pub samples: Vec<TrafficSample>,
}

impl SampleSet {
    pub fn raw(samples: Vec<TrafficSample>, taxonomy: ClassTaxonomy) -> Self {
        SampleSet { taxonomy, window: None, norm_stats: BTreeMap::new(), samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `(steps, features)` shared by every sample, or `None` when empty.
    pub fn shape(&self) -> Option<(usize, usize)> {
        self.samples.first().map(|s| (s.steps, s.features))
    }

    /// Checks that all samples share the same geometry, carry labels inside
    /// the taxonomy and contain only finite values.
    pub fn is_consistent(&self) -> bool {
        let Some((steps, features)) = self.shape() else {
            return true;
        };
        let c = self.taxonomy.num_classes();
        self.samples.iter().all(|s| {
            s.steps == steps
                && s.features == features
                && s.window.len() == steps * features
                && s.label < c
                && s.window.iter().all(|v| v.is_finite())
        })
    }

    fn with_samples(&self, samples: Vec<TrafficSample>) -> Self {
        SampleSet { taxonomy: self.taxonomy.clone(), window: self.window, norm_stats: self.norm_stats.clone(), samples }
    }
}

/// Per-junction mean and population standard deviation of the count
/// feature over every timestep of every window.
pub fn fit_norm_stats(samples: &[TrafficSample]) -> BTreeMap<JunctionId, NormStats> {
    let mut acc: BTreeMap<JunctionId, (f64, usize)> = BTreeMap::new();
    for s in samples {
        let e = acc.entry(s.junction).or_insert((0.0, 0));
        for t in 0..s.steps {
            e.0 += s.step(t)[0];
            e.1 += 1;
        }
    }
    let means: BTreeMap<JunctionId, f64> =
        acc.iter().map(|(&j, &(sum, n))| (j, sum / n as f64)).collect();
    let mut sq: BTreeMap<JunctionId, f64> = BTreeMap::new();
    for s in samples {
        let m = means[&s.junction];
        let e = sq.entry(s.junction).or_insert(0.0);
        for t in 0..s.steps {
            let d = s.step(t)[0] - m;
            *e += d * d;
        }
    }
    means
        .into_iter()
        .map(|(j, mean)| {
            let n = acc[&j].1 as f64;
            (j, NormStats { mean, std: libm::sqrt(sq[&j] / n) })
        })
        .collect()
}

/// Z-scores the count feature of a raw set using statistics fitted on it.
pub fn normalize(set: SampleSet) -> SampleSet {
    let stats = fit_norm_stats(&set.samples);
    // every junction in the set has stats, so this cannot fail
    apply_normalization(set, &stats).unwrap_or_else(|_| unreachable!())
}

/// Z-scores a raw set with previously fitted statistics (e.g. applying
/// training statistics to held-out data).
pub fn apply_normalization(
    set: SampleSet,
    stats: &BTreeMap<JunctionId, NormStats>,
) -> Result<SampleSet, IngestError> {
    let mut samples = set.samples;
    for s in samples.iter_mut() {
        let st = stats.get(&s.junction).ok_or(IngestError::UnknownJunction(s.junction))?;
        for t in 0..s.steps {
            let idx = t * s.features;
            s.window[idx] = st.apply(s.window[idx]);
        }
    }
    Ok(SampleSet { taxonomy: set.taxonomy, window: set.window, norm_stats: stats.clone(), samples })
}

/// Seeded random partition into `(train, test)` with
/// `|test| = round(n · test_fraction)`. Both sides keep input order.
pub fn split(
    set: &SampleSet,
    test_fraction: f64,
    seed: u64,
) -> Result<(SampleSet, SampleSet), IngestError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(IngestError::BadFraction);
    }
    let n = set.len();
    let n_test = libm::round(n as f64 * test_fraction) as usize;
    if n_test == 0 || n_test >= n {
        return Err(IngestError::EmptySplit);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_test = vec![false; n];
    for &i in &order[..n_test] {
        is_test[i] = true;
    }
    let (mut train, mut test) = (Vec::with_capacity(n - n_test), Vec::with_capacity(n_test));
    for (s, t) in set.samples.iter().zip(is_test) {
        if t {
            test.push(s.clone());
        } else {
            train.push(s.clone());
        }
    }
    Ok((set.with_samples(train), set.with_samples(test)))
}
