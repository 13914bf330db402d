//! Daily speed patterns, time-dependent travel times and route search.
//!
//! Each segment's expected speed is piecewise constant over `W` equal
//! windows of the day and repeats daily. Traversal time is obtained by
//! integrating distance at the current window's speed, carrying the
//! remainder across window boundaries. Because speeds (not delays) are
//! piecewise constant, entering a segment later never means leaving it
//! earlier (FIFO), which makes label-setting search exact.

use alloc::collections::{BTreeMap, BinaryHeap};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::{Ordering, Reverse};

use serde::{Deserialize, Serialize};

use crate::roadnet::{RoadGraph, Segment, SegmentId, VertexId};
use crate::time::window_of;
use crate::SECONDS_PER_DAY;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum RoutingError {
    #[error("class {0} has no speed factor")]
    BadClass(usize),
    #[error("speed factors must lie in (0, 1]")]
    BadFactors,
    #[error("no votes for interval {0}")]
    MissingInterval(usize),
    #[error("segment {0} has a non-positive speed")]
    ZeroSpeed(SegmentId),
    #[error("no path between the requested vertices")]
    NoPath,
    #[error("unknown vertex {0}")]
    UnknownVertex(VertexId),
    #[error("unknown segment {0}")]
    UnknownSegment(SegmentId),
    #[error("invalid route database: {0}")]
    InvalidDb(String),
    #[error("feedback weight must lie in [0, 1]")]
    BadAlpha,
    #[error("observed speed must be positive and finite")]
    BadSpeed,
    #[error("time of day must lie in [0, 86400)")]
    BadTime,
}

/// Multiplier on the speed limit for each congestion class, least
/// congested first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SpeedFactors(Vec<f64>);

impl Default for SpeedFactors {
    fn default() -> Self {
        SpeedFactors(vec![1.0, 0.6, 0.3])
    }
}

impl SpeedFactors {
    pub fn new(factors: Vec<f64>) -> Result<Self, RoutingError> {
        let f = SpeedFactors(factors);
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<(), RoutingError> {
        if self.0.is_empty() || self.0.iter().any(|&x| !(x > 0.0 && x <= 1.0)) {
            return Err(RoutingError::BadFactors);
        }
        Ok(())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub fn class_to_speed(class: usize, segment: &Segment, factors: &SpeedFactors) -> Result<f64, RoutingError> {
    factors
        .0
        .get(class)
        .map(|f| segment.speed_limit_kmph * f)
        .ok_or(RoutingError::BadClass(class))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    #[default]
    Classified,
    FeedbackAdjusted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DailyPattern {
    pub segment: SegmentId,
    /// Expected speed (km/h) in each daily window.
    pub interval_speeds: Vec<f64>,
    #[serde(default)]
    pub provenance: Provenance,
}

impl DailyPattern {
    pub fn flat(segment: &Segment, windows: usize) -> Self {
        DailyPattern {
            segment: segment.id.clone(),
            interval_speeds: vec![segment.speed_limit_kmph; windows],
            provenance: Provenance::Classified,
        }
    }
}

/// Majority class per interval (ties go to the more congested class),
/// mapped to speeds.
pub fn pattern_from_predictions(
    segment: &Segment,
    votes: &[Vec<usize>],
    factors: &SpeedFactors,
) -> Result<DailyPattern, RoutingError> {
    factors.validate()?;
    let classes = factors.0.len();
    let mut speeds = Vec::with_capacity(votes.len());
    for (interval, v) in votes.iter().enumerate() {
        if v.is_empty() {
            return Err(RoutingError::MissingInterval(interval));
        }
        let mut tally = vec![0usize; classes];
        for &c in v {
            *tally.get_mut(c).ok_or(RoutingError::BadClass(c))? += 1;
        }
        let mut best = 0;
        for c in 1..classes {
            if tally[c] >= tally[best] {
                best = c;
            }
        }
        speeds.push(class_to_speed(best, segment, factors)?);
    }
    Ok(DailyPattern { segment: segment.id.clone(), interval_speeds: speeds, provenance: Provenance::Classified })
}

/// Seconds needed to traverse `segment` when entering at `enter` seconds
/// after midnight, under the daily-periodic speeds of `speeds`.
pub fn travel_time_with(segment: &Segment, enter: f64, speeds: &[f64]) -> Result<f64, RoutingError> {
    if !(0.0..SECONDS_PER_DAY).contains(&enter) {
        return Err(RoutingError::BadTime);
    }
    if speeds.is_empty() || speeds.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(RoutingError::ZeroSpeed(segment.id.clone()));
    }
    let w = speeds.len();
    let span = SECONDS_PER_DAY / w as f64;
    let mut remaining = segment.length_km;
    let mut t = enter;
    let mut elapsed = 0.0;
    // the index advances explicitly; recomputing it from a boundary time
    // can round back into the window just left
    let mut idx = window_of(t, w);
    loop {
        let boundary = if idx + 1 == w { SECONDS_PER_DAY } else { (idx + 1) as f64 * span };
        let speed = speeds[idx];
        let to_boundary = (boundary - t).max(0.0);
        let reachable = speed * to_boundary / 3600.0;
        if reachable >= remaining {
            return Ok(elapsed + remaining * 3600.0 / speed);
        }
        remaining -= reachable;
        elapsed += to_boundary;
        idx = (idx + 1) % w;
        t = if idx == 0 { 0.0 } else { boundary };
    }
}

pub fn travel_time(segment: &Segment, enter: f64, pattern: &DailyPattern) -> Result<f64, RoutingError> {
    travel_time_with(segment, enter, &pattern.interval_speeds)
}

/// Time of day for an absolute offset from the departure day's midnight.
pub fn wrap_day(t: f64) -> f64 {
    let r = t % SECONDS_PER_DAY;
    if r < 0.0 {
        r + SECONDS_PER_DAY
    } else {
        r
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Leg {
    pub segment: SegmentId,
    /// Seconds after the departure day's midnight (may exceed one day).
    pub enter: f64,
    pub traversal_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoutePlan {
    pub path: Vec<SegmentId>,
    pub depart: f64,
    pub eta_seconds: f64,
    pub legs: Vec<Leg>,
}

/// Patterns shared by several segments after compression.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Representative {
    pub interval_speeds: Vec<f64>,
    pub members: Vec<SegmentId>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct RouteDbRepr {
    num_windows: usize,
    graph: RoadGraph,
    patterns: BTreeMap<SegmentId, DailyPattern>,
    #[serde(default)]
    representatives: BTreeMap<String, Representative>,
}

/// Road graph plus one expected-speed pattern per segment, held either
/// directly or through a shared representative.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RouteDbRepr", into = "RouteDbRepr")]
pub struct RouteDb {
    num_windows: usize,
    graph: RoadGraph,
    patterns: BTreeMap<SegmentId, DailyPattern>,
    representatives: BTreeMap<String, Representative>,
    member_of: BTreeMap<SegmentId, String>,
}

impl TryFrom<RouteDbRepr> for RouteDb {
    type Error = RoutingError;
    fn try_from(r: RouteDbRepr) -> Result<Self, Self::Error> {
        RouteDb::from_parts(r.graph, r.num_windows, r.patterns, r.representatives)
    }
}

impl From<RouteDb> for RouteDbRepr {
    fn from(db: RouteDb) -> Self {
        RouteDbRepr {
            num_windows: db.num_windows,
            graph: db.graph,
            patterns: db.patterns,
            representatives: db.representatives,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Label(f64);

impl Eq for Label {}

impl PartialOrd for Label {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Label {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl RouteDb {
    pub fn new(graph: RoadGraph, num_windows: usize, patterns: Vec<DailyPattern>) -> Result<Self, RoutingError> {
        let map = patterns.into_iter().map(|p| (p.segment.clone(), p)).collect();
        RouteDb::from_parts(graph, num_windows, map, BTreeMap::new())
    }

    /// Every segment at its speed limit all day.
    pub fn free_flow(graph: RoadGraph, num_windows: usize) -> Result<Self, RoutingError> {
        let patterns = graph.segments().iter().map(|s| DailyPattern::flat(s, num_windows)).collect();
        RouteDb::new(graph, num_windows, patterns)
    }

    fn from_parts(
        graph: RoadGraph,
        num_windows: usize,
        patterns: BTreeMap<SegmentId, DailyPattern>,
        representatives: BTreeMap<String, Representative>,
    ) -> Result<Self, RoutingError> {
        let bad = |m: String| Err(RoutingError::InvalidDb(m));
        if num_windows == 0 {
            return bad("need at least one daily window".into());
        }
        let mut member_of = BTreeMap::new();
        for (id, rep) in &representatives {
            if rep.interval_speeds.len() != num_windows {
                return bad(format!("representative {id} has the wrong number of windows"));
            }
            if rep.interval_speeds.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
                return bad(format!("representative {id} has a non-positive speed"));
            }
            for m in &rep.members {
                if member_of.insert(m.clone(), id.clone()).is_some() {
                    return bad(format!("segment {m} belongs to two representatives"));
                }
            }
        }
        for (key, p) in &patterns {
            if *key != p.segment {
                return bad(format!("pattern keyed {key} describes {}", p.segment));
            }
            if member_of.contains_key(key) {
                return bad(format!("segment {key} has both its own and a shared pattern"));
            }
            let Some(seg) = graph.segment(key) else {
                return bad(format!("pattern for unknown segment {key}"));
            };
            if p.interval_speeds.len() != num_windows {
                return bad(format!("pattern for {key} has the wrong number of windows"));
            }
            if p.interval_speeds.iter().any(|&s| !(s > 0.0 && s <= seg.speed_limit_kmph)) {
                return bad(format!("pattern for {key} has a speed outside (0, limit]"));
            }
        }
        for seg in graph.segments() {
            if !patterns.contains_key(&seg.id) && !member_of.contains_key(&seg.id) {
                return bad(format!("segment {} has no pattern", seg.id));
            }
        }
        if let Some(m) = member_of.keys().find(|m| graph.segment(m).is_none()) {
            return bad(format!("representative member {m} is not a graph segment"));
        }
        Ok(RouteDb { num_windows, graph, patterns, representatives, member_of })
    }

    pub fn graph(&self) -> &RoadGraph {
        &self.graph
    }

    pub fn num_windows(&self) -> usize {
        self.num_windows
    }

    pub fn own_patterns(&self) -> &BTreeMap<SegmentId, DailyPattern> {
        &self.patterns
    }

    pub fn representatives(&self) -> &BTreeMap<String, Representative> {
        &self.representatives
    }

    /// Number of distinct stored speed profiles.
    pub fn profile_count(&self) -> usize {
        self.patterns.len() + self.representatives.len()
    }

    fn effective_speeds(&self, seg: &Segment) -> Vec<f64> {
        if let Some(p) = self.patterns.get(&seg.id) {
            return p.interval_speeds.clone();
        }
        // shared speeds are capped at the member's own limit
        let rep = &self.representatives[&self.member_of[&seg.id]];
        rep.interval_speeds.iter().map(|&s| s.min(seg.speed_limit_kmph)).collect()
    }

    /// The pattern in force for `segment`, whether its own or shared.
    pub fn pattern_for(&self, segment: &str) -> Result<DailyPattern, RoutingError> {
        let seg = self.graph.segment(segment).ok_or_else(|| RoutingError::UnknownSegment(segment.into()))?;
        if let Some(p) = self.patterns.get(segment) {
            return Ok(p.clone());
        }
        Ok(DailyPattern {
            segment: segment.into(),
            interval_speeds: self.effective_speeds(seg),
            provenance: Provenance::Classified,
        })
    }

    /// Earliest-arrival route by time-dependent label-setting search.
    /// `depart` is seconds after midnight. Among equal arrival times at a
    /// vertex, the incoming segment with the smallest id wins.
    pub fn best_route(&self, from: &str, to: &str, depart: f64) -> Result<RoutePlan, RoutingError> {
        for v in [from, to] {
            if !self.graph.has_vertex(v) {
                return Err(RoutingError::UnknownVertex(v.into()));
            }
        }
        if !(0.0..SECONDS_PER_DAY).contains(&depart) {
            return Err(RoutingError::BadTime);
        }
        let speeds: BTreeMap<&str, Vec<f64>> =
            self.graph.segments().iter().map(|s| (s.id.as_str(), self.effective_speeds(s))).collect();
        // vertex -> (arrival, incoming segment)
        let mut best: BTreeMap<&str, (f64, Option<&Segment>)> = BTreeMap::new();
        let mut settled: BTreeMap<&str, ()> = BTreeMap::new();
        let mut heap = BinaryHeap::new();
        best.insert(from, (depart, None));
        heap.push(Reverse((Label(depart), from)));
        while let Some(Reverse((Label(t), v))) = heap.pop() {
            if settled.insert(v, ()).is_some() {
                continue;
            }
            if v == to {
                break;
            }
            for seg in self.graph.outgoing(v) {
                let tt = travel_time_with(seg, wrap_day(t), &speeds[seg.id.as_str()])?;
                let arrive = t + tt;
                let head = seg.to.as_str();
                if settled.contains_key(head) {
                    continue;
                }
                match best.get(head) {
                    Some(&(cur, Some(prev))) if arrive > cur || (arrive == cur && prev.id <= seg.id) => {}
                    Some(&(_, None)) => {}
                    _ => {
                        best.insert(head, (arrive, Some(seg)));
                        heap.push(Reverse((Label(arrive), head)));
                    }
                }
            }
        }
        if !settled.contains_key(to) {
            return Err(RoutingError::NoPath);
        }
        let mut segs = Vec::new();
        let mut cur = to;
        while let Some(&(_, Some(seg))) = best.get(cur) {
            segs.push(seg);
            cur = seg.from.as_str();
        }
        segs.reverse();
        self.plan_along(&segs, depart)
    }

    /// Timed plan for following `segments` in order from `depart`.
    pub fn plan_along(&self, segments: &[&Segment], depart: f64) -> Result<RoutePlan, RoutingError> {
        let mut t = depart;
        let mut legs = Vec::with_capacity(segments.len());
        for seg in segments {
            let tt = travel_time_with(seg, wrap_day(t), &self.effective_speeds(seg))?;
            legs.push(Leg { segment: seg.id.clone(), enter: t, traversal_seconds: tt });
            t += tt;
        }
        Ok(RoutePlan {
            path: legs.iter().map(|l| l.segment.clone()).collect(),
            depart,
            eta_seconds: legs.iter().map(|l| l.traversal_seconds).sum(),
            legs,
        })
    }

    /// Single-pass greedy merge of similar patterns. Segments are visited in
    /// id order; each joins the first representative whose mean lies within
    /// `epsilon` (max-norm) of its pattern, provided the updated mean stays
    /// within `2·epsilon` of every member, and otherwise founds a new one.
    /// Feedback-adjusted patterns are left as they are.
    pub fn compress_patterns(&self, epsilon: f64) -> Result<RouteDb, RoutingError> {
        if !(epsilon >= 0.0) {
            return Err(RoutingError::InvalidDb("epsilon must be non-negative".into()));
        }
        struct Cluster {
            mean: Vec<f64>,
            lo: Vec<f64>,
            hi: Vec<f64>,
            members: Vec<SegmentId>,
        }
        let mut clusters: Vec<Cluster> = Vec::new();
        let mut kept = BTreeMap::new();
        for seg in self.graph.segments_by_id() {
            if let Some(p) = self.patterns.get(&seg.id) {
                if p.provenance == Provenance::FeedbackAdjusted {
                    kept.insert(seg.id.clone(), p.clone());
                    continue;
                }
            }
            let x = self.effective_speeds(seg);
            let joined = clusters.iter_mut().find_map(|c| {
                let close = c.mean.iter().zip(&x).all(|(m, v)| libm::fabs(m - v) <= epsilon);
                if !close {
                    return None;
                }
                let n = c.members.len() as f64;
                let mean: Vec<f64> = c.mean.iter().zip(&x).map(|(m, v)| (m * n + v) / (n + 1.0)).collect();
                let within = (0..x.len()).all(|i| {
                    let lo = c.lo[i].min(x[i]);
                    let hi = c.hi[i].max(x[i]);
                    mean[i] - lo <= 2.0 * epsilon && hi - mean[i] <= 2.0 * epsilon
                });
                within.then(|| {
                    for ((lo, hi), v) in c.lo.iter_mut().zip(c.hi.iter_mut()).zip(&x) {
                        *lo = lo.min(*v);
                        *hi = hi.max(*v);
                    }
                    c.mean = mean;
                    c.members.push(seg.id.clone());
                })
            });
            if joined.is_none() {
                clusters.push(Cluster { lo: x.clone(), hi: x.clone(), mean: x, members: vec![seg.id.clone()] });
            }
        }
        let representatives = clusters
            .into_iter()
            .enumerate()
            .map(|(i, c)| (format!("p{i}"), Representative { interval_speeds: c.mean, members: c.members }))
            .collect();
        RouteDb::from_parts(self.graph.clone(), self.num_windows, kept, representatives)
    }

    /// Folds an observed speed into the window covering `time_of_day`:
    /// `new = (1 − α)·old + α·min(observed, limit)`. The segment leaves any
    /// shared representative and its pattern becomes feedback-adjusted.
    pub fn apply_feedback(
        &mut self,
        segment: &str,
        time_of_day: f64,
        observed_kmph: f64,
        alpha: f64,
    ) -> Result<(), RoutingError> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(RoutingError::BadAlpha);
        }
        if !(observed_kmph > 0.0 && observed_kmph.is_finite()) {
            return Err(RoutingError::BadSpeed);
        }
        if !(0.0..SECONDS_PER_DAY).contains(&time_of_day) {
            return Err(RoutingError::BadTime);
        }
        let seg = self
            .graph
            .segment(segment)
            .ok_or_else(|| RoutingError::UnknownSegment(segment.into()))?
            .clone();
        let mut speeds = self.effective_speeds(&seg);
        let idx = window_of(time_of_day, self.num_windows);
        let observed = observed_kmph.min(seg.speed_limit_kmph);
        speeds[idx] = (1.0 - alpha) * speeds[idx] + alpha * observed;
        if let Some(rep_id) = self.member_of.remove(segment) {
            let rep = self.representatives.get_mut(&rep_id).unwrap();
            rep.members.retain(|m| m != segment);
            if rep.members.is_empty() {
                self.representatives.remove(&rep_id);
            }
        }
        self.patterns.insert(
            seg.id.clone(),
            DailyPattern { segment: seg.id, interval_speeds: speeds, provenance: Provenance::FeedbackAdjusted },
        );
        Ok(())
    }
}

impl RoadGraph {
    /// Segments in ascending id order.
    pub fn segments_by_id(&self) -> Vec<&Segment> {
        let mut v: Vec<&Segment> = self.segments().iter().collect();
        v.sort_by(|a, b| a.id.cmp(&b.id));
        v
    }
}
