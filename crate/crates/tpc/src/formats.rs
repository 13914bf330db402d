//! On-disk formats. Text formats start with a one-line tag such as
//! `TPC-DATASET v1` followed by a single JSON document; the model file is
//! binary-tagged (`TPCM` plus a little-endian `u16` version) ahead of its
//! JSON body. Every write goes to a temporary file in the target directory
//! and is renamed into place, so readers never observe a partial file.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::ser::SerializeSeq;
use serde::{Deserialize, Serialize, Serializer};
use serde_json::value::RawValue;

use tpc_core::ingest::{JunctionId, NormStats, WindowConfig};
use tpc_core::neural::{HyperParams, LstmLayerParams, Matrix, ModelParams};
use tpc_core::roadnet::{SpeedTransitionEvent, SpeedTransitionMatrix, StmKey};
use tpc_core::tuning::{CvReport, GridSpec};
use tpc_core::{ClassTaxonomy, RoadGraph, RouteDb, SampleSet, Timestamp};

pub const DATASET_TAG: &str = "TPC-DATASET v1";
pub const STM_TAG: &str = "TPC-STM v1";
pub const CVREPORT_TAG: &str = "TPC-CVREPORT v1";
pub const ROUTEDB_TAG: &str = "TPC-ROUTEDB v1";
pub const MODEL_MAGIC: &[u8; 4] = b"TPCM";
pub const MODEL_VERSION: u16 = 1;
pub const EVENTS_HEADER: [&str; 5] = ["from_edge", "to_edge", "s_origin", "s_dest", "at"];

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("missing or wrong header, expected `{0}`")]
    BadHeader(&'static str),
    #[error("unsupported model file version {0}")]
    BadVersion(u16),
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Invalid(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FormatError + '_ {
    move |source| FormatError::Io { path: path.to_path_buf(), source }
}

/// Writes `bytes` to `path` via a sibling temporary file and a rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), FormatError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(path))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| FormatError::Io { path: path.to_path_buf(), source: e.error })?;
    Ok(())
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>, FormatError> {
    std::fs::read(path).map_err(io_err(path))
}

pub fn read_text(path: &Path) -> Result<String, FormatError> {
    std::fs::read_to_string(path).map_err(io_err(path))
}

fn encode_tagged<T: Serialize>(tag: &str, value: &T) -> Result<String, FormatError> {
    let mut out = String::with_capacity(256);
    out.push_str(tag);
    out.push('\n');
    out.push_str(&serde_json::to_string(value)?);
    out.push('\n');
    Ok(out)
}

fn decode_tagged<T: DeserializeOwned>(tag: &'static str, text: &str) -> Result<T, FormatError> {
    let (head, body) = text.split_once('\n').ok_or(FormatError::BadHeader(tag))?;
    if head.trim_end_matches('\r') != tag {
        return Err(FormatError::BadHeader(tag));
    }
    Ok(serde_json::from_str(body)?)
}

// dataset

pub fn encode_dataset(set: &SampleSet) -> Result<String, FormatError> {
    encode_tagged(DATASET_TAG, set)
}

pub fn decode_dataset(text: &str) -> Result<SampleSet, FormatError> {
    let set: SampleSet = decode_tagged(DATASET_TAG, text)?;
    set.taxonomy.validate().map_err(|e| FormatError::Invalid(e.to_string()))?;
    if !set.is_consistent() {
        return Err(FormatError::Invalid("samples disagree on shape, labels or finiteness".into()));
    }
    Ok(set)
}

pub fn write_dataset(path: &Path, set: &SampleSet) -> Result<(), FormatError> {
    atomic_write(path, encode_dataset(set)?.as_bytes())
}

pub fn read_dataset(path: &Path) -> Result<SampleSet, FormatError> {
    decode_dataset(&read_text(path)?)
}

// speed transition matrices

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct StmEntry {
    counts: Vec<Vec<u64>>,
    probs: Vec<Vec<f64>>,
    unobserved_rows: Vec<usize>,
}

pub fn encode_stms(stms: &BTreeMap<StmKey, SpeedTransitionMatrix>) -> Result<String, FormatError> {
    let doc: BTreeMap<String, StmEntry> = stms
        .iter()
        .map(|(k, m)| {
            let entry = StmEntry { counts: m.counts.clone(), probs: m.probs.clone(), unobserved_rows: m.unobserved_rows.clone() };
            (k.to_string(), entry)
        })
        .collect();
    encode_tagged(STM_TAG, &doc)
}

pub fn decode_stms(text: &str) -> Result<BTreeMap<StmKey, SpeedTransitionMatrix>, FormatError> {
    let doc: BTreeMap<String, StmEntry> = decode_tagged(STM_TAG, text)?;
    doc.into_iter()
        .map(|(k, e)| {
            let key: StmKey = k.parse().map_err(|e: tpc_core::roadnet::RoadnetError| FormatError::Invalid(e.to_string()))?;
            let m = SpeedTransitionMatrix { window: key.window, counts: e.counts, probs: e.probs, unobserved_rows: e.unobserved_rows };
            Ok((key, m))
        })
        .collect()
}

pub fn write_stms(path: &Path, stms: &BTreeMap<StmKey, SpeedTransitionMatrix>) -> Result<(), FormatError> {
    atomic_write(path, encode_stms(stms)?.as_bytes())
}

pub fn read_stms(path: &Path) -> Result<BTreeMap<StmKey, SpeedTransitionMatrix>, FormatError> {
    decode_stms(&read_text(path)?)
}

// cross-validation report and grid spec

pub fn encode_report(report: &CvReport) -> Result<String, FormatError> {
    encode_tagged(CVREPORT_TAG, report)
}

pub fn decode_report(text: &str) -> Result<CvReport, FormatError> {
    decode_tagged(CVREPORT_TAG, text)
}

pub fn write_report(path: &Path, report: &CvReport) -> Result<(), FormatError> {
    atomic_write(path, encode_report(report)?.as_bytes())
}

pub fn read_report(path: &Path) -> Result<CvReport, FormatError> {
    decode_report(&read_text(path)?)
}

pub fn read_grid(path: &Path) -> Result<GridSpec, FormatError> {
    let spec: GridSpec = serde_json::from_str(&read_text(path)?)?;
    spec.validate().map_err(|e| FormatError::Invalid(e.to_string()))?;
    Ok(spec)
}

// route database and graph

pub fn encode_route_db(db: &RouteDb) -> Result<String, FormatError> {
    encode_tagged(ROUTEDB_TAG, db)
}

pub fn decode_route_db(text: &str) -> Result<RouteDb, FormatError> {
    decode_tagged(ROUTEDB_TAG, text)
}

pub fn write_route_db(path: &Path, db: &RouteDb) -> Result<(), FormatError> {
    atomic_write(path, encode_route_db(db)?.as_bytes())
}

pub fn read_route_db(path: &Path) -> Result<RouteDb, FormatError> {
    decode_route_db(&read_text(path)?)
}

pub fn write_graph(path: &Path, graph: &RoadGraph) -> Result<(), FormatError> {
    let mut text = serde_json::to_string_pretty(graph)?;
    text.push('\n');
    atomic_write(path, text.as_bytes())
}

pub fn read_graph(path: &Path) -> Result<RoadGraph, FormatError> {
    Ok(serde_json::from_str(&read_text(path)?)?)
}

// speed transition events

pub fn encode_events(events: &[SpeedTransitionEvent]) -> Result<String, FormatError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(EVENTS_HEADER)?;
    for e in events {
        w.write_record([
            e.from_edge.as_str(),
            e.to_edge.as_str(),
            &e.s_origin.to_string(),
            &e.s_dest.to_string(),
            &e.at.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| FormatError::Invalid(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| FormatError::Invalid(e.to_string()))
}

pub fn decode_events(text: &str) -> Result<Vec<SpeedTransitionEvent>, FormatError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    if r.headers()?.iter().ne(EVENTS_HEADER) {
        return Err(FormatError::Invalid(format!("events header must be `{}`", EVENTS_HEADER.join(","))));
    }
    r.records()
        .enumerate()
        .map(|(i, rec)| {
            let rec = rec?;
            let line = i + 2;
            let bad = |what: &str| FormatError::Invalid(format!("events line {line}: bad {what}"));
            let speed = |j: usize, what| rec[j].trim().parse::<f64>().map_err(|_| bad(what));
            Ok(SpeedTransitionEvent {
                from_edge: rec[0].to_string(),
                to_edge: rec[1].to_string(),
                s_origin: speed(2, "s_origin")?,
                s_dest: speed(3, "s_dest")?,
                at: Timestamp::parse(rec[4].trim()).map_err(|_| bad("timestamp"))?,
            })
        })
        .collect()
}

pub fn read_events(path: &Path) -> Result<Vec<SpeedTransitionEvent>, FormatError> {
    decode_events(&read_text(path)?)
}

pub fn write_events(path: &Path, events: &[SpeedTransitionEvent]) -> Result<(), FormatError> {
    atomic_write(path, encode_events(events)?.as_bytes())
}

// model

/// A trained classifier together with everything needed to apply it to raw
/// sensor readings.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelFile {
    pub hyperparams: HyperParams,
    pub taxonomy: ClassTaxonomy,
    pub window: WindowConfig,
    pub norm_stats: BTreeMap<JunctionId, NormStats>,
    pub params: ModelParams,
}

#[derive(Serialize, Deserialize)]
struct Shapes {
    input_width: usize,
    hidden: usize,
    layers: usize,
    classes: usize,
}

/// Reals printed with 17 significant digits.
struct Sig17<'a>(&'a [f64]);

impl Serialize for Sig17<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(self.0.len()))?;
        for v in self.0 {
            let raw = RawValue::from_string(format!("{v:.16e}")).map_err(serde::ser::Error::custom)?;
            seq.serialize_element(&raw)?;
        }
        seq.end()
    }
}

#[derive(Serialize)]
struct LayerOut<'a> {
    w: Sig17<'a>,
    u: Sig17<'a>,
    b: Sig17<'a>,
}

#[derive(Serialize)]
struct WeightsOut<'a> {
    layers: Vec<LayerOut<'a>>,
    head_w: Sig17<'a>,
    head_b: Sig17<'a>,
}

#[derive(Serialize)]
struct ModelDocOut<'a> {
    hyperparams: &'a HyperParams,
    taxonomy: &'a ClassTaxonomy,
    window: &'a WindowConfig,
    norm_stats: &'a BTreeMap<JunctionId, NormStats>,
    shapes: Shapes,
    weights: WeightsOut<'a>,
}

#[derive(Deserialize)]
struct LayerIn {
    w: Vec<f64>,
    u: Vec<f64>,
    b: Vec<f64>,
}

#[derive(Deserialize)]
struct WeightsIn {
    layers: Vec<LayerIn>,
    head_w: Vec<f64>,
    head_b: Vec<f64>,
}

#[derive(Deserialize)]
struct ModelDocIn {
    hyperparams: HyperParams,
    taxonomy: ClassTaxonomy,
    window: WindowConfig,
    norm_stats: BTreeMap<JunctionId, NormStats>,
    shapes: Shapes,
    weights: WeightsIn,
}

pub fn encode_model(model: &ModelFile) -> Result<Vec<u8>, FormatError> {
    let p = &model.params;
    p.check_shapes().map_err(|e| FormatError::Invalid(e.to_string()))?;
    if !p.all_finite() {
        return Err(FormatError::Invalid("model weights are not all finite".into()));
    }
    let hidden = p.layers.first().map_or(0, |l| l.hidden());
    let doc = ModelDocOut {
        hyperparams: &model.hyperparams,
        taxonomy: &model.taxonomy,
        window: &model.window,
        norm_stats: &model.norm_stats,
        shapes: Shapes { input_width: p.input_width(), hidden, layers: p.layers.len(), classes: p.num_classes() },
        weights: WeightsOut {
            layers: p.layers.iter().map(|l| LayerOut { w: Sig17(&l.w.data), u: Sig17(&l.u.data), b: Sig17(&l.b) }).collect(),
            head_w: Sig17(&p.head_w.data),
            head_b: Sig17(&p.head_b),
        },
    };
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    serde_json::to_writer(&mut out, &doc)?;
    Ok(out)
}

pub fn decode_model(bytes: &[u8]) -> Result<ModelFile, FormatError> {
    if bytes.len() < 6 || &bytes[..4] != MODEL_MAGIC {
        return Err(FormatError::BadHeader("TPCM"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != MODEL_VERSION {
        return Err(FormatError::BadVersion(version));
    }
    let doc: ModelDocIn = serde_json::from_slice(&bytes[6..])?;
    let s = &doc.shapes;
    let mut params = ModelParams::zeros(s.input_width, s.hidden, s.layers, s.classes);
    if doc.weights.layers.len() != s.layers {
        return Err(FormatError::Invalid("layer count disagrees with shapes".into()));
    }
    let fill = |m: &mut Matrix, data: Vec<f64>| -> Result<(), FormatError> {
        if data.len() != m.data.len() {
            return Err(FormatError::Invalid("weight array length disagrees with shapes".into()));
        }
        m.data = data;
        Ok(())
    };
    for (dst, src) in params.layers.iter_mut().zip(doc.weights.layers) {
        let LstmLayerParams { w, u, b } = dst;
        fill(w, src.w)?;
        fill(u, src.u)?;
        if src.b.len() != b.len() {
            return Err(FormatError::Invalid("bias length disagrees with shapes".into()));
        }
        *b = src.b;
    }
    fill(&mut params.head_w, doc.weights.head_w)?;
    if doc.weights.head_b.len() != params.head_b.len() {
        return Err(FormatError::Invalid("head bias length disagrees with shapes".into()));
    }
    params.head_b = doc.weights.head_b;
    doc.taxonomy.validate().map_err(|e| FormatError::Invalid(e.to_string()))?;
    if doc.taxonomy.num_classes() != s.classes {
        return Err(FormatError::Invalid("taxonomy size disagrees with the model head".into()));
    }
    Ok(ModelFile { hyperparams: doc.hyperparams, taxonomy: doc.taxonomy, window: doc.window, norm_stats: doc.norm_stats, params })
}

pub fn write_model(path: &Path, model: &ModelFile) -> Result<(), FormatError> {
    atomic_write(path, &encode_model(model)?)
}

pub fn read_model(path: &Path) -> Result<ModelFile, FormatError> {
    decode_model(&read_bytes(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tag_must_match() {
        let set = SampleSet::raw(vec![], ClassTaxonomy::default());
        let text = encode_dataset(&set).unwrap();
        assert!(text.starts_with("TPC-DATASET v1\n"));
        assert_eq!(decode_dataset(&text).unwrap(), set);
        assert!(matches!(decode_dataset(&text.replace("v1", "v2")), Err(FormatError::BadHeader(_))));
        assert!(matches!(decode_route_db(&text), Err(FormatError::BadHeader(_))));
    }

    #[test]
    fn sig17_prints_exact_digits() {
        let v = [0.1, -1.0 / 3.0, 5e-300, 0.0];
        let text = serde_json::to_string(&Sig17(&v)).unwrap();
        assert_eq!(text.split(',').next().unwrap(), "[1.0000000000000001e-1");
        let back: Vec<f64> = serde_json::from_str(&text).unwrap();
        assert_eq!(back.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), v.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn model_header_checks() {
        assert!(matches!(decode_model(b"TPC"), Err(FormatError::BadHeader(_))));
        assert!(matches!(decode_model(b"TPCM\x02\x00{}"), Err(FormatError::BadVersion(2))));
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.txt");
        atomic_write(&p, b"one").unwrap();
        atomic_write(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
