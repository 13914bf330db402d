mod common;

use common::Server;
use reqwest::StatusCode;
use serde_json::{json, Value};

use tpc::formats::read_route_db;
use tpc_core::routing::{DailyPattern, Provenance};
use tpc_core::{RoadGraph, RouteDb, Segment};

/// a -> b -> c plus a slower direct a -> c.
fn line_db() -> RouteDb {
    let seg = |id: &str, from: &str, to: &str, km: f64| Segment {
        id: id.into(),
        from: from.into(),
        to: to.into(),
        length_km: km,
        speed_limit_kmph: 80.0,
        sensor: None,
    };
    let g = RoadGraph::new(
        ["a", "b", "c"].map(String::from),
        vec![seg("ab", "a", "b", 10.0), seg("bc", "b", "c", 10.0), seg("ac", "a", "c", 30.0)],
    )
    .unwrap();
    let p = |id: &str, v: f64| DailyPattern { segment: id.into(), interval_speeds: vec![v; 8], provenance: Provenance::Classified };
    RouteDb::new(g, 8, vec![p("ab", 60.0), p("bc", 60.0), p("ac", 80.0)]).unwrap()
}

async fn post(c: &reqwest::Client, url: String, body: Value) -> (StatusCode, Value) {
    let r = c.post(url).json(&body).send().await.unwrap();
    let status = r.status();
    (status, r.json().await.unwrap())
}

#[tokio::test]
async fn route_feedback_and_patterns() {
    let srv = Server::start(line_db(), 1.0, None).await;
    let c = reqwest::Client::new();

    let (st, r) = post(&c, srv.url("/route"), json!({"from": "a", "to": "c", "depart": "08:00"})).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(r["path"], json!(["ab", "bc"]));
    assert_eq!(r["eta_seconds"], 1200.0);
    assert_eq!(r["version"], 0);

    let (st, r) = post(&c, srv.url("/route"), json!({"from": "b", "to": "b", "depart": "23:59"})).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(r["eta_seconds"], 0.0);
    assert_eq!(r["path"], json!([]));

    // alpha = 1 replaces the interval; observations above the limit clamp to it
    let (st, ack) = post(&c, srv.url("/feedback"), json!({"segment": "ab", "time": "08:30", "speed_kmph": 250.0})).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(ack, json!({"accepted": true, "version": 1}));
    let p: Value = c.get(srv.url("/patterns?segment=ab")).send().await.unwrap().json().await.unwrap();
    assert_eq!(p["interval_speeds"][2], 80.0);
    assert_eq!(p["interval_speeds"][1], 60.0);
    assert_eq!(p["provenance"], "feedback_adjusted");
    assert_eq!(p["version"], 1);

    post(&c, srv.url("/feedback"), json!({"segment": "bc", "time": "08:00", "speed_kmph": 5.0})).await;
    let (_, r) = post(&c, srv.url("/route"), json!({"from": "a", "to": "c", "depart": "08:00"})).await;
    assert_eq!(r["path"], json!(["ac"]));
    assert_eq!(r["version"], 2);
    srv.stop().await;
}

#[tokio::test]
async fn bad_requests_do_not_take_the_service_down() {
    let srv = Server::start(line_db(), 0.5, None).await;
    let c = reqwest::Client::new();
    let r = c.post(srv.url("/route")).header("content-type", "application/json").body("{not json").send().await.unwrap();
    assert_eq!(r.status(), StatusCode::BAD_REQUEST);
    let body: Value = r.json().await.unwrap();
    assert_eq!(body["kind"], "malformed");

    let (st, _) = post(&c, srv.url("/route"), json!({"from": "a"})).await;
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);
    let (st, _) = post(&c, srv.url("/route"), json!({"from": "a", "to": "c", "depart": "24:30"})).await;
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);
    let (st, b) = post(&c, srv.url("/route"), json!({"from": "a", "to": "zz", "depart": "01:00"})).await;
    assert_eq!((st, b["kind"].as_str()), (StatusCode::NOT_FOUND, Some("unknown_vertex")));
    let (st, b) = post(&c, srv.url("/route"), json!({"from": "c", "to": "a", "depart": "01:00"})).await;
    assert_eq!((st, b["kind"].as_str()), (StatusCode::NOT_FOUND, Some("no_path")));
    let (st, _) = post(&c, srv.url("/feedback"), json!({"segment": "ab", "time": "01:00", "speed_kmph": -3.0})).await;
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);
    let (st, _) = post(&c, srv.url("/feedback"), json!({"segment": "nope", "time": "01:00", "speed_kmph": 30.0})).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    assert_eq!(c.get(srv.url("/patterns")).send().await.unwrap().status(), StatusCode::UNPROCESSABLE_ENTITY);

    // rejected writes leave the version alone
    assert_eq!(srv.state.snapshot().version, 0);
    let h: Value = c.get(srv.url("/health")).send().await.unwrap().json().await.unwrap();
    assert_eq!(h["status"], "ok");
    srv.stop().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_reads_see_whole_versions() {
    let srv = Server::start(line_db(), 0.7, None).await;
    let c = reqwest::Client::new();
    let mut readers = Vec::new();
    for i in 0..50 {
        let (c, url) = (c.clone(), srv.url("/route"));
        readers.push(tokio::spawn(async move {
            let depart = format!("{:02}:{:02}", 6 + i % 4, i % 60);
            let r: Value = c.post(url).json(&json!({"from": "a", "to": "c", "depart": depart})).send().await.unwrap().json().await.unwrap();
            r
        }));
    }
    let writers: Vec<_> = (0..10)
        .map(|i| {
            let (c, url) = (c.clone(), srv.url("/feedback"));
            tokio::spawn(async move {
                c.post(url).json(&json!({"segment": "bc", "time": "07:00", "speed_kmph": 10.0 + i as f64})).send().await.unwrap().status()
            })
        })
        .collect();
    for w in writers {
        assert_eq!(w.await.unwrap(), StatusCode::OK);
    }
    for r in readers {
        let r = r.await.unwrap();
        let legs: f64 = r["legs"].as_array().unwrap().iter().map(|l| l["traversal_seconds"].as_f64().unwrap()).sum();
        assert_eq!(r["eta_seconds"].as_f64().unwrap(), legs);
        assert!(r["version"].as_u64().unwrap() <= 10);
    }
    assert_eq!(srv.state.snapshot().version, 10);
    srv.stop().await;
}

#[tokio::test]
async fn shutdown_flushes_the_database() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("live.db");
    let srv = Server::start(line_db(), 1.0, Some(path.clone())).await;
    let c = reqwest::Client::new();
    post(&c, srv.url("/feedback"), json!({"segment": "ac", "time": "12:00", "speed_kmph": 40.0})).await;
    let live = srv.state.snapshot().db.clone();
    srv.stop().await;
    let back = read_route_db(&path).unwrap();
    assert_eq!(back, live);
    assert_eq!(back.pattern_for("ac").unwrap().interval_speeds[4], 40.0);
}
