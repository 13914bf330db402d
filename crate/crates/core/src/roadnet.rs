//! Directed road graph and speed transition matrices.
//!
//! A speed transition matrix (STM) for an adjacent segment pair and a
//! daily time window counts how often a vehicle leaving the first segment
//! in speed bin `i` entered the second in speed bin `j`, then turns each
//! observed row into a probability distribution.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::ingest::JunctionId;
use crate::time::{window_of, Timestamp};

pub type SegmentId = String;
pub type VertexId = String;

pub const DEFAULT_NUM_WINDOWS: usize = 8;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum RoadnetError {
    #[error("speed must be a finite non-negative number, got {0}")]
    NegativeSpeed(f64),
    #[error("segments {0} and {1} are not adjacent")]
    NonAdjacentEdges(SegmentId, SegmentId),
    #[error("unknown segment {0}")]
    UnknownSegment(SegmentId),
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("number of windows must be at least 1")]
    BadWindowCount,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub id: SegmentId,
    pub from: VertexId,
    pub to: VertexId,
    pub length_km: f64,
    pub speed_limit_kmph: f64,
    /// Count sensor whose readings describe this segment, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensor: Option<JunctionId>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct GraphRepr {
    vertices: Vec<VertexId>,
    segments: Vec<Segment>,
}

/// Directed multigraph of intersections and road segments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GraphRepr", into = "GraphRepr")]
pub struct RoadGraph {
    vertices: BTreeSet<VertexId>,
    segments: Vec<Segment>,
    by_id: BTreeMap<SegmentId, usize>,
    // outgoing segment indices per vertex, ordered by segment id
    outgoing: BTreeMap<VertexId, Vec<usize>>,
}

impl TryFrom<GraphRepr> for RoadGraph {
    type Error = RoadnetError;
    fn try_from(r: GraphRepr) -> Result<Self, Self::Error> {
        RoadGraph::new(r.vertices, r.segments)
    }
}

impl From<RoadGraph> for GraphRepr {
    fn from(g: RoadGraph) -> Self {
        GraphRepr { vertices: g.vertices.into_iter().collect(), segments: g.segments }
    }
}

impl fmt::Display for RoadGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} vertices, {} segments", self.vertices.len(), self.segments.len())
    }
}

impl RoadGraph {
    pub fn new(
        vertices: impl IntoIterator<Item = VertexId>,
        segments: Vec<Segment>,
    ) -> Result<Self, RoadnetError> {
        let bad = |msg: String| Err(RoadnetError::InvalidGraph(msg));
        let vertices: BTreeSet<VertexId> = vertices.into_iter().collect();
        let mut by_id = BTreeMap::new();
        let mut outgoing: BTreeMap<VertexId, Vec<usize>> =
            vertices.iter().map(|v| (v.clone(), Vec::new())).collect();
        for (i, s) in segments.iter().enumerate() {
            if s.id.is_empty() || s.id.contains(':') {
                return bad(format!("segment id {:?} must be non-empty without ':'", s.id));
            }
            if !vertices.contains(&s.from) || !vertices.contains(&s.to) {
                return bad(format!("segment {} has an endpoint outside the vertex set", s.id));
            }
            if !(s.length_km > 0.0 && s.length_km.is_finite()) {
                return bad(format!("segment {} must have positive length", s.id));
            }
            if !(s.speed_limit_kmph > 0.0 && s.speed_limit_kmph <= 100.0) {
                return bad(format!("segment {} speed limit must be in (0, 100]", s.id));
            }
            if by_id.insert(s.id.clone(), i).is_some() {
                return bad(format!("duplicate segment id {}", s.id));
            }
            outgoing.get_mut(&s.from).unwrap().push(i);
        }
        for list in outgoing.values_mut() {
            list.sort_by(|&a, &b| segments[a].id.cmp(&segments[b].id));
        }
        Ok(RoadGraph { vertices, segments, by_id, outgoing })
    }

    pub fn vertices(&self) -> impl Iterator<Item = &VertexId> {
        self.vertices.iter()
    }

    pub fn has_vertex(&self, v: &str) -> bool {
        self.vertices.contains(v)
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, id: &str) -> Option<&Segment> {
        self.by_id.get(id).map(|&i| &self.segments[i])
    }

    /// Outgoing segments of `v` in ascending id order.
    pub fn outgoing(&self, v: &str) -> impl Iterator<Item = &Segment> {
        self.outgoing.get(v).into_iter().flatten().map(|&i| &self.segments[i])
    }

    /// True when the head of `from_edge` is the tail of `to_edge`.
    pub fn adjacent(&self, from_edge: &str, to_edge: &str) -> Result<bool, RoadnetError> {
        let a = self.segment(from_edge).ok_or_else(|| RoadnetError::UnknownSegment(from_edge.into()))?;
        let b = self.segment(to_edge).ok_or_else(|| RoadnetError::UnknownSegment(to_edge.into()))?;
        Ok(a.to == b.from)
    }
}

/// Speed discretization: `resolution_kmph` wide bins up to `max_kmph`,
/// with faster readings clamped into the last bin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedBinning {
    pub resolution_kmph: f64,
    pub max_kmph: f64,
}

impl Default for SpeedBinning {
    fn default() -> Self {
        SpeedBinning { resolution_kmph: 5.0, max_kmph: 100.0 }
    }
}

impl SpeedBinning {
    pub fn bins(&self) -> usize {
        libm::round(self.max_kmph / self.resolution_kmph) as usize
    }

    pub fn bin_speed(&self, kmph: f64) -> Result<usize, RoadnetError> {
        if !(kmph >= 0.0) || !kmph.is_finite() {
            return Err(RoadnetError::NegativeSpeed(kmph));
        }
        Ok((libm::floor(kmph / self.resolution_kmph) as usize).min(self.bins() - 1))
    }
}

/// Bin index with the default 5 km/h resolution and 100 km/h cap.
pub fn bin_speed(kmph: f64) -> Result<usize, RoadnetError> {
    SpeedBinning::default().bin_speed(kmph)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedTransitionEvent {
    pub from_edge: SegmentId,
    pub to_edge: SegmentId,
    pub s_origin: f64,
    pub s_dest: f64,
    pub at: Timestamp,
}

/// Identifies one STM: an ordered adjacent segment pair and a daily window.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StmKey {
    pub from_edge: SegmentId,
    pub to_edge: SegmentId,
    pub window: usize,
}

impl fmt::Display for StmKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.from_edge, self.to_edge, self.window)
    }
}

impl core::str::FromStr for StmKey {
    type Err = RoadnetError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || RoadnetError::InvalidGraph(format!("bad STM key {s:?}"));
        let mut it = s.split(':');
        let (a, b, w) = (it.next(), it.next(), it.next());
        if it.next().is_some() {
            return Err(bad());
        }
        Ok(StmKey {
            from_edge: a.filter(|a| !a.is_empty()).ok_or_else(bad)?.into(),
            to_edge: b.filter(|b| !b.is_empty()).ok_or_else(bad)?.into(),
            window: w.and_then(|w| w.parse().ok()).ok_or_else(bad)?,
        })
    }
}

/// Square matrix of transition counts, `counts[origin_bin][dest_bin]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl CountMatrix {
    pub fn zeros(bins: usize) -> Self {
        CountMatrix { counts: vec![vec![0; bins]; bins] }
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Elementwise sum; commutative and associative, so partial counts
    /// built on disjoint event sets can be combined in any order.
    pub fn merge(&mut self, other: &CountMatrix) {
        for (row, orow) in self.counts.iter_mut().zip(&other.counts) {
            for (c, o) in row.iter_mut().zip(orow) {
                *c += o;
            }
        }
    }
}

/// Accumulates transition counts per `(segment pair, window)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StmCounter {
    pub binning: SpeedBinning,
    pub matrices: BTreeMap<StmKey, CountMatrix>,
}

impl StmCounter {
    pub fn new(binning: SpeedBinning) -> Self {
        StmCounter { binning, matrices: BTreeMap::new() }
    }

    pub fn accumulate(
        &mut self,
        graph: &RoadGraph,
        event: &SpeedTransitionEvent,
        window: usize,
    ) -> Result<(), RoadnetError> {
        if !graph.adjacent(&event.from_edge, &event.to_edge)? {
            return Err(RoadnetError::NonAdjacentEdges(event.from_edge.clone(), event.to_edge.clone()));
        }
        let i = self.binning.bin_speed(event.s_origin)?;
        let j = self.binning.bin_speed(event.s_dest)?;
        let key = StmKey { from_edge: event.from_edge.clone(), to_edge: event.to_edge.clone(), window };
        let bins = self.binning.bins();
        self.matrices.entry(key).or_insert_with(|| CountMatrix::zeros(bins)).counts[i][j] += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &StmCounter) {
        for (k, m) in &other.matrices {
            match self.matrices.get_mut(k) {
                Some(mine) => mine.merge(m),
                None => {
                    self.matrices.insert(k.clone(), m.clone());
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedTransitionMatrix {
    pub window: usize,
    pub counts: Vec<Vec<u64>>,
    pub probs: Vec<Vec<f64>>,
    /// Origin bins with no observations; their probability rows are zero.
    pub unobserved_rows: Vec<usize>,
}

impl SpeedTransitionMatrix {
    pub fn bins(&self) -> usize {
        self.probs.len()
    }
}

pub fn normalize_stm(counts: &CountMatrix, window: usize) -> SpeedTransitionMatrix {
    let mut unobserved_rows = Vec::new();
    let probs = counts
        .counts
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let sum: u64 = row.iter().sum();
            if sum == 0 {
                unobserved_rows.push(i);
                vec![0.0; row.len()]
            } else {
                row.iter().map(|&c| c as f64 / sum as f64).collect()
            }
        })
        .collect();
    SpeedTransitionMatrix { window, counts: counts.counts.clone(), probs, unobserved_rows }
}

/// Builds one STM per observed adjacent pair and daily window. Events are
/// assigned to window `floor(seconds_of_day · num_windows / 86400)`.
pub fn build_stms(
    graph: &RoadGraph,
    events: &[SpeedTransitionEvent],
    num_windows: usize,
    binning: SpeedBinning,
) -> Result<BTreeMap<StmKey, SpeedTransitionMatrix>, RoadnetError> {
    if num_windows == 0 {
        return Err(RoadnetError::BadWindowCount);
    }
    let mut counter = StmCounter::new(binning);
    for e in events {
        let w = window_of(e.at.seconds_of_day() as f64, num_windows);
        counter.accumulate(graph, e, w)?;
    }
    Ok(counter
        .matrices
        .iter()
        .map(|(k, c)| (k.clone(), normalize_stm(c, k.window)))
        .collect())
}

/// Row-major flattening of the probability matrix.
pub fn stm_features(stm: &SpeedTransitionMatrix) -> Vec<f64> {
    stm.probs.iter().flatten().copied().collect()
}

/// Inverse of [`stm_features`] for a `bins × bins` matrix.
pub fn features_to_probs(features: &[f64], bins: usize) -> Option<Vec<Vec<f64>>> {
    (features.len() == bins * bins).then(|| features.chunks(bins).map(<[f64]>::to_vec).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use proptest::prelude::*;

    fn seg(id: &str, from: &str, to: &str) -> Segment {
        Segment {
            id: id.into(),
            from: from.into(),
            to: to.into(),
            length_km: 1.0,
            speed_limit_kmph: 60.0,
            sensor: None,
        }
    }

    fn chain() -> RoadGraph {
        RoadGraph::new(
            ["A", "B", "C", "D"].map(String::from),
            vec![seg("ab", "A", "B"), seg("bc", "B", "C"), seg("cd", "C", "D"), seg("ba", "B", "A")],
        )
        .unwrap()
    }

    fn event(from: &str, to: &str, so: f64, sd: f64, at: &str) -> SpeedTransitionEvent {
        SpeedTransitionEvent {
            from_edge: from.into(),
            to_edge: to.into(),
            s_origin: so,
            s_dest: sd,
            at: Timestamp::parse(at).unwrap(),
        }
    }

    #[test]
    fn graph_validation() {
        let v = || ["A", "B"].map(String::from);
        assert!(RoadGraph::new(v(), vec![seg("x", "A", "Z")]).is_err());
        assert!(RoadGraph::new(v(), vec![seg("x", "A", "B"), seg("x", "B", "A")]).is_err());
        assert!(RoadGraph::new(v(), vec![seg("x:y", "A", "B")]).is_err());
        let mut s = seg("x", "A", "B");
        s.length_km = 0.0;
        assert!(RoadGraph::new(v(), vec![s]).is_err());
        let mut s = seg("x", "A", "B");
        s.speed_limit_kmph = 120.0;
        assert!(RoadGraph::new(v(), vec![s]).is_err());
    }

    #[test]
    fn bins() {
        assert_eq!(bin_speed(0.0), Ok(0));
        assert_eq!(bin_speed(47.0), Ok(9));
        assert_eq!(bin_speed(100.0), Ok(19));
        assert_eq!(bin_speed(250.0), Ok(19));
        assert!(matches!(bin_speed(-1.0), Err(RoadnetError::NegativeSpeed(_))));
        assert!(bin_speed(f64::NAN).is_err());
        assert_eq!(SpeedBinning::default().bins(), 20);
    }

    #[test]
    fn accumulate_counts() {
        let g = chain();
        let mut c = StmCounter::default();
        let e = event("ab", "bc", 10.0, 20.0, "2020-01-01 08:00:00");
        c.accumulate(&g, &e, 0).unwrap();
        let key = StmKey { from_edge: "ab".into(), to_edge: "bc".into(), window: 0 };
        assert_eq!(c.matrices[&key].counts[2][4], 1);
        c.accumulate(&g, &e, 0).unwrap();
        assert_eq!(c.matrices[&key].counts[2][4], 2);
        let bad = event("ab", "cd", 10.0, 20.0, "2020-01-01 08:00:00");
        assert_eq!(
            c.accumulate(&g, &bad, 0),
            Err(RoadnetError::NonAdjacentEdges("ab".into(), "cd".into()))
        );
        let unknown = event("ab", "zz", 10.0, 20.0, "2020-01-01 08:00:00");
        assert_eq!(c.accumulate(&g, &unknown, 0), Err(RoadnetError::UnknownSegment("zz".into())));
    }

    #[test]
    fn normalization() {
        let mut m = CountMatrix::zeros(20);
        m.counts[0][3] = 1;
        m.counts[5][4] = 2;
        m.counts[5][6] = 1;
        let stm = normalize_stm(&m, 1);
        assert_eq!(stm.probs[0][3], 1.0);
        assert_eq!(stm.probs[5][4], 2.0 / 3.0);
        assert_eq!(stm.probs[5][6], 1.0 / 3.0);
        assert!(stm.probs[1].iter().all(|&p| p == 0.0));
        assert!(stm.unobserved_rows.contains(&1));
        assert!(!stm.unobserved_rows.contains(&5));
        assert_eq!(stm.unobserved_rows.len(), 18);
    }

    #[test]
    fn windows_by_time_of_day() {
        let g = chain();
        let events: Vec<_> = (0..5)
            .map(|d| event("ab", "bc", 40.0, 30.0, &alloc::format!("2020-01-0{} 08:00:00", d + 1)))
            .collect();
        let stms = build_stms(&g, &events, 8, SpeedBinning::default()).unwrap();
        assert_eq!(stms.len(), 1);
        let (k, stm) = stms.iter().next().unwrap();
        assert_eq!(k.window, 2);
        assert_eq!(stm.counts[8][6], 5);
        assert!(build_stms(&g, &[], 8, SpeedBinning::default()).unwrap().is_empty());
        assert_eq!(build_stms(&g, &[], 0, SpeedBinning::default()), Err(RoadnetError::BadWindowCount));
    }

    #[test]
    fn rush_hour_fixture() {
        let g = chain();
        let mut events = Vec::new();
        // dense slow traffic 07:00-08:59 (window 2), light fast traffic elsewhere
        for m in 0..120 {
            let at = alloc::format!("2020-01-01 {:02}:{:02}:00", 7 + m / 60, m % 60);
            events.push(event("ab", "bc", 20.0 + (m % 5) as f64, 8.0 + (m % 7) as f64, &at));
        }
        for h in [1, 12, 15, 20] {
            events.push(event("ab", "bc", 70.0, 75.0, &alloc::format!("2020-01-01 {h:02}:30:00")));
        }
        let stms = build_stms(&g, &events, 8, SpeedBinning::default()).unwrap();
        let w2 = &stms[&StmKey { from_edge: "ab".into(), to_edge: "bc".into(), window: 2 }];
        // count oracle: every 07-09h event lands in destination bins 1..=2
        let low: u64 = w2.counts.iter().map(|r| r[..4].iter().sum::<u64>()).sum();
        assert_eq!(low, 120);
        assert_eq!(w2.counts.iter().flatten().sum::<u64>(), 120);
        let high_mass: f64 = w2.probs.iter().map(|r| r[4..].iter().sum::<f64>()).sum();
        assert_eq!(high_mass, 0.0);
    }

    #[test]
    fn features() {
        let mut m = CountMatrix::zeros(4);
        m.counts[1][1] = 3;
        m.counts[2][2] = 1;
        let stm = normalize_stm(&m, 0);
        let f = stm_features(&stm);
        assert_eq!(f.len(), 16);
        assert_eq!(f[4 + 1], 1.0);
        assert_eq!(f[2 * 4 + 2], 1.0);
        assert_eq!(f.iter().sum::<f64>(), 2.0);
        assert_eq!(features_to_probs(&f, 4).unwrap(), stm.probs);
        assert!(stm_features(&normalize_stm(&CountMatrix::zeros(3), 0)).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn key_roundtrip() {
        let k = StmKey { from_edge: "e1".into(), to_edge: "e2".into(), window: 7 };
        assert_eq!(k.to_string(), "e1:e2:7");
        assert_eq!(k.to_string().parse::<StmKey>().unwrap(), k);
        assert!("a:b".parse::<StmKey>().is_err());
    }

    proptest! {
        #[test]
        fn bin_monotone(a in 0.0f64..300.0, b in 0.0f64..300.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(bin_speed(lo).unwrap() <= bin_speed(hi).unwrap());
        }

        #[test]
        fn merge_is_commutative(xs in proptest::collection::vec((0usize..4, 0usize..4), 0..40),
                                ys in proptest::collection::vec((0usize..4, 0usize..4), 0..40)) {
            let mk = |v: &[(usize, usize)]| {
                let mut m = CountMatrix::zeros(4);
                for &(i, j) in v { m.counts[i][j] += 1; }
                m
            };
            let (mut ab, mut ba) = (mk(&xs), mk(&ys));
            ab.merge(&mk(&ys));
            ba.merge(&mk(&xs));
            prop_assert_eq!(ab, ba);
        }
    }

    #[test]
    fn bins_surjective_below_cap() {
        let hit: BTreeSet<usize> = (0..1000).map(|i| bin_speed(i as f64 * 0.1).unwrap()).collect();
        assert_eq!(hit.len(), 20);
    }
}
