//! Seeded synthetic fixtures: sensor count CSV, road graphs, speed
//! transition events and labeled archetype windows.
//!
//! The public count dataset has neither speeds nor labels, so every
//! pipeline stage that needs them can be exercised from these generators.
//! Output depends only on the arguments; the same seed always produces
//! byte-identical text.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ingest::{ClassTaxonomy, JunctionId, SampleSet, TrafficSample, CSV_HEADER};
use crate::roadnet::{RoadGraph, Segment, SpeedTransitionEvent};
use crate::time::Timestamp;

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Rush-hour weight in [0, 1] peaking at 08:00 and 17:30.
pub fn rush_factor(hour_of_day: f64) -> f64 {
    let bump = |centre: f64, width: f64| {
        let z = (hour_of_day - centre) / width;
        libm::exp(-z * z)
    };
    bump(8.0, 1.5).max(bump(17.5, 2.0))
}

/// Hourly vehicle counts for `junctions` sensors over `days` days starting
/// at `start`, in the public dataset's CSV layout.
pub fn traffic_csv(seed: u64, junctions: u32, days: u32, start: Timestamp) -> String {
    let mut r = rng(seed, 1);
    let mut out = String::new();
    out.push_str(CSV_HEADER);
    out.push('\n');
    for j in 1..=junctions {
        let base = 8.0 + 6.0 * j as f64;
        for h in 0..days as i64 * 24 {
            let ts = start.plus_seconds(h * 3600);
            let hour = ts.seconds_of_day() as f64 / 3600.0;
            let night = 0.35 + 0.65 * (0.5 - 0.5 * libm::cos(2.0 * PI * (hour - 3.0) / 24.0));
            let level = base * (night + 2.2 * rush_factor(hour));
            let noise: f64 = r.gen_range(-0.12..0.12);
            let count = libm::round(level * (1.0 + noise)).max(0.0) as u64;
            let _ = writeln!(out, "{ts},{j},{count},{}{j}", id_stamp(ts));
        }
    }
    out
}

fn id_stamp(ts: Timestamp) -> String {
    // digits of the timestamp, as the public dataset's record ids
    format!("{ts}").chars().filter(char::is_ascii_digit).take(10).collect()
}

/// `rows × cols` grid with a segment in each direction between neighbours.
/// Speed limits are drawn from {50, 60, 70, 80}; segments are attached
/// round-robin to sensors `1..=junctions` (none when `junctions` is 0).
pub fn grid_graph(seed: u64, rows: usize, cols: usize, junctions: u32) -> RoadGraph {
    let mut r = rng(seed, 2);
    let name = |i: usize, j: usize| format!("r{i}c{j}");
    let mut vertices = Vec::new();
    for i in 0..rows {
        for j in 0..cols {
            vertices.push(name(i, j));
        }
    }
    let mut segments = Vec::new();
    let mut push = |a: String, b: String, r: &mut ChaCha8Rng| {
        let n = segments.len();
        segments.push(Segment {
            id: format!("s{n:03}"),
            from: a,
            to: b,
            length_km: libm::round(r.gen_range(0.3..2.0) * 1000.0) / 1000.0,
            speed_limit_kmph: [50.0, 60.0, 70.0, 80.0][r.gen_range(0..4)],
            sensor: (junctions > 0).then(|| (n as u32 % junctions) + 1),
        });
    };
    for i in 0..rows {
        for j in 0..cols {
            if j + 1 < cols {
                push(name(i, j), name(i, j + 1), &mut r);
                push(name(i, j + 1), name(i, j), &mut r);
            }
            if i + 1 < rows {
                push(name(i, j), name(i + 1, j), &mut r);
                push(name(i + 1, j), name(i, j), &mut r);
            }
        }
    }
    RoadGraph::new(vertices, segments).unwrap_or_else(|_| unreachable!("generated graph is valid"))
}

/// Directed multigraph on `vertices` nodes with `segments` random edges
/// (self-loops allowed) and random lengths and limits.
pub fn random_graph<R: Rng>(rng: &mut R, vertices: usize, segments: usize) -> RoadGraph {
    let names: Vec<String> = (0..vertices).map(|i| format!("v{i}")).collect();
    let segs = (0..segments)
        .map(|n| Segment {
            id: format!("e{n:02}"),
            from: names[rng.gen_range(0..vertices)].clone(),
            to: names[rng.gen_range(0..vertices)].clone(),
            length_km: rng.gen_range(0.1..5.0),
            speed_limit_kmph: rng.gen_range(20.0..=100.0),
            sensor: None,
        })
        .collect();
    RoadGraph::new(names, segs).unwrap_or_else(|_| unreachable!("generated graph is valid"))
}

/// Vehicles passing between adjacent segments, `per_day` per day for `days`
/// days from `start`. Speeds drop towards rush hours.
pub fn transition_events(seed: u64, graph: &RoadGraph, days: u32, per_day: usize, start: Timestamp) -> Vec<SpeedTransitionEvent> {
    let mut r = rng(seed, 3);
    let pairs: Vec<(&Segment, &Segment)> = graph
        .segments()
        .iter()
        .flat_map(|a| graph.outgoing(&a.to).map(move |b| (a, b)))
        .collect();
    if pairs.is_empty() {
        return Vec::new();
    }
    let mut events = Vec::with_capacity(days as usize * per_day);
    for d in 0..days as i64 {
        let mut secs: Vec<i64> = (0..per_day).map(|_| r.gen_range(0..86_400)).collect();
        secs.sort_unstable();
        for s in secs {
            let &(a, b) = pairs.choose(&mut r).unwrap_or_else(|| unreachable!());
            let hour = s as f64 / 3600.0;
            let slow = 1.0 - 0.65 * rush_factor(hour);
            let speed = |seg: &Segment, r: &mut ChaCha8Rng| {
                let v = seg.speed_limit_kmph * slow * r.gen_range(0.75..1.05);
                libm::round(v.clamp(1.0, seg.speed_limit_kmph) * 10.0) / 10.0
            };
            events.push(SpeedTransitionEvent {
                from_edge: a.id.clone(),
                to_edge: b.id.clone(),
                s_origin: speed(a, &mut r),
                s_dest: speed(b, &mut r),
                at: start.plus_seconds(d * 86_400 + s),
            });
        }
    }
    events
}

/// Raw (unnormalized) windows of `steps` hourly counts drawn from three
/// congestion archetypes: low and flat (free flow), mid-level with a daily
/// swing (moderate) and high and rising (congested), each with noise.
/// `per_class` samples of each class, interleaved in a seeded order and
/// spread across sensors 1 to 3.
pub fn archetype_samples(seed: u64, per_class: usize, steps: usize) -> SampleSet {
    let mut r = rng(seed, 4);
    let mut labels: Vec<usize> = (0..3).flat_map(|c| core::iter::repeat_n(c, per_class)).collect();
    labels.shuffle(&mut r);
    let origin = Timestamp::from_civil(2017, 1, 2, 0, 0, 0).unwrap_or_else(|| unreachable!());
    let samples = labels
        .into_iter()
        .enumerate()
        .map(|(i, label)| {
            let phase: f64 = r.gen_range(0.0..2.0 * PI);
            let window = (0..steps)
                .map(|t| {
                    let x = t as f64 / steps.max(2).saturating_sub(1) as f64;
                    let level = match label {
                        0 => 12.0,
                        1 => 32.0 + 5.0 * libm::sin(phase + 2.0 * PI * x),
                        _ => 48.0 + 22.0 * x,
                    };
                    (level + r.gen_range(-4.0..4.0)).max(0.0)
                })
                .collect();
            let window_start = origin.plus_seconds(i as i64 * 3600);
            TrafficSample {
                steps,
                features: 1,
                window,
                label,
                junction: (i % 3) as JunctionId + 1,
                window_start,
                label_at: window_start.plus_seconds(steps as i64 * 3600),
            }
        })
        .collect();
    SampleSet::raw(samples, ClassTaxonomy::default())
}
