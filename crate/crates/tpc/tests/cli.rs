mod common;

use std::process::Command;

use common::{run, run_ok, s, write_tiny_grid};
use tpc::cli::{EXIT_DATA, EXIT_OK, EXIT_USAGE};
use tpc::formats::{read_dataset, read_report, read_route_db};

#[test]
fn synth_is_byte_deterministic() {
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for (d, seed) in [(&a, "7"), (&b, "7"), (&c, "8")] {
        run_ok(&["synth", "--seed", seed, "--out-dir", s(d.path()), "--days", "5"]);
    }
    for f in ["traffic.csv", "graph.json", "events.csv"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x, std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    assert_ne!(std::fs::read(a.path().join("traffic.csv")).unwrap(), std::fs::read(c.path().join("traffic.csv")).unwrap());
}

#[test]
fn pipeline_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    run_ok(&["synth", "--seed", "3", "--out-dir", s(d), "--days", "6", "--junctions", "3"]);
    let (csv, graph, events) = (d.join("traffic.csv"), d.join("graph.json"), d.join("events.csv"));
    let (train, test) = (d.join("train.ds"), d.join("test.ds"));

    let summary = run_ok(&[
        "ingest", "--csv", s(&csv), "--out", s(&train), "--test-out", s(&test), "--test-fraction", "0.25", "--window", "6",
    ]);
    let (n_train, n_test) = (read_dataset(&train).unwrap().len(), read_dataset(&test).unwrap().len());
    assert_eq!(summary["details"]["train_samples"], n_train);
    assert_eq!(summary["details"]["test_samples"], n_test);
    assert_eq!(n_train + n_test, 3 * (6 * 24 - 6));

    let stm = d.join("stm.txt");
    let out = run_ok(&["build-stm", "--graph", s(&graph), "--events", s(&events), "--out", s(&stm)]);
    assert!(out["details"]["matrices"].as_u64().unwrap() > 0);

    let report = d.join("cv.txt");
    let grid = write_tiny_grid(d);
    run_ok(&["tune", "--dataset", s(&train), "--grid", s(&grid), "--out", s(&report), "--k", "3", "--threads", "2"]);
    assert_eq!(read_report(&report).unwrap().configs.len(), 2);

    let model = d.join("m.tpcm");
    run_ok(&["train", "--dataset", s(&train), "--report", s(&report), "--out", s(&model)]);
    let metrics = run_ok(&["evaluate", "--model", s(&model), "--dataset", s(&test)]);
    let acc = metrics["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    let cells: u64 = metrics["confusion"]["cells"].as_array().unwrap().iter().flat_map(|r| r.as_array().unwrap()).map(|c| c.as_u64().unwrap()).sum();
    assert_eq!(cells as usize, n_test);

    let (code, text, _) = run(&["evaluate", "--model", s(&model), "--dataset", s(&test), "--text"]);
    assert_eq!(code, EXIT_OK);
    assert!(text.contains("accuracy"));

    let classes = run_ok(&["classify", "--model", s(&model), "--csv", s(&csv)]);
    assert_eq!(classes.as_array().unwrap().len(), n_train + n_test);

    let db = d.join("route.db");
    run_ok(&["patterns", "--model", s(&model), "--csv", s(&csv), "--graph", s(&graph), "--out", s(&db)]);
    let plan = run_ok(&["route", "--db", s(&db), "--from", "r0c0", "--to", "r2c2", "--depart", "08:00"]);
    let legs: f64 = plan["legs"].as_array().unwrap().iter().map(|l| l["traversal_seconds"].as_f64().unwrap()).sum();
    assert_eq!(plan["eta_seconds"].as_f64().unwrap(), legs);
    assert!(legs > 0.0);

    let small = d.join("small.db");
    let c = run_ok(&["compress", "--db", s(&db), "--epsilon", "5", "--out", s(&small)]);
    assert!(c["details"]["profiles_after"].as_u64() <= c["details"]["profiles_before"].as_u64());
    assert_eq!(read_route_db(&small).unwrap().graph(), read_route_db(&db).unwrap().graph());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // usage: missing required path, unknown flag, bad time of day
    assert_eq!(run(&["ingest", "--csv", "x.csv"]).0, EXIT_USAGE);
    assert_eq!(run(&["tune", "--frobnicate"]).0, EXIT_USAGE);
    // data: unreadable or malformed inputs
    let (code, out, err) = run(&["ingest", "--csv", s(&d.join("missing.csv")), "--out", s(&d.join("o"))]);
    assert_eq!(code, EXIT_DATA);
    assert!(out.is_empty());
    assert!(err.starts_with("error:"));
    std::fs::write(d.join("bad.csv"), "DateTime,Junction,Vehicles,ID\nyesterday,1,3,4\n").unwrap();
    assert_eq!(run(&["ingest", "--csv", s(&d.join("bad.csv")), "--out", s(&d.join("o"))]).0, EXIT_DATA);
    std::fs::write(d.join("not-a-model"), "hello").unwrap();
    assert_eq!(run(&["evaluate", "--model", s(&d.join("not-a-model")), "--dataset", s(&d.join("x"))]).0, EXIT_DATA);
}

#[test]
fn route_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    run_ok(&["synth", "--seed", "1", "--out-dir", s(d), "--days", "1"]);
    let graph = tpc::formats::read_graph(&d.join("graph.json")).unwrap();
    let db = tpc_core::RouteDb::free_flow(graph, 8).unwrap();
    tpc::formats::write_route_db(&d.join("ff.db"), &db).unwrap();
    let db = s(&d.join("ff.db")).to_string();
    assert_eq!(run(&["route", "--db", &db, "--from", "r0c0", "--to", "nowhere", "--depart", "01:00"]).0, EXIT_DATA);
    assert_eq!(run(&["route", "--db", &db, "--from", "r0c0", "--to", "r1c1", "--depart", "25:00"]).0, EXIT_USAGE);
    let plan = run_ok(&["route", "--db", &db, "--from", "r1c1", "--to", "r1c1", "--depart", "01:00"]);
    assert_eq!(plan["eta_seconds"], 0.0);
    assert!(plan["path"].as_array().unwrap().is_empty());
}

#[test]
fn binary_streams_and_status() {
    let exe = env!("CARGO_BIN_EXE_tpc");
    let help = Command::new(exe).arg("--help").output().unwrap();
    assert!(help.status.success());
    assert!(String::from_utf8_lossy(&help.stdout).contains("Usage"));
    let v = Command::new(exe).arg("--version").output().unwrap();
    assert!(v.status.success());
    assert!(String::from_utf8_lossy(&v.stdout).contains(env!("CARGO_PKG_VERSION")));
    let bad = Command::new(exe).args(["route", "--db"]).output().unwrap();
    assert_eq!(bad.status.code(), Some(EXIT_USAGE));
    assert!(bad.stdout.is_empty());
    assert!(!bad.stderr.is_empty());
    let missing = Command::new(exe).args(["compress", "--db", "/nonexistent/x.db", "--epsilon", "1"]).env_remove("TPC_CONFIG").output().unwrap();
    assert_eq!(missing.status.code(), Some(EXIT_DATA));
}

#[test]
fn config_file_supplies_paths() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    run_ok(&["synth", "--seed", "2", "--out-dir", s(d), "--days", "1"]);
    let cfg = d.join("cfg.json");
    let stm = d.join("from-config.stm");
    let body = serde_json::json!({ "paths": { "graph": d.join("graph.json"), "events": d.join("events.csv"), "stm_store": stm }, "num_windows": 4 });
    std::fs::write(&cfg, body.to_string()).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_tpc")).arg("build-stm").env("TPC_CONFIG", &cfg).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stms = tpc::formats::read_stms(&stm).unwrap();
    assert!(stms.keys().all(|k| k.window < 4));

    std::fs::write(&cfg, r#"{"unknown_key": 1}"#).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_tpc")).args(["route", "--db", "x", "--from", "a", "--to", "b", "--depart", "00:00"]).env("TPC_CONFIG", &cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(EXIT_USAGE));
}
