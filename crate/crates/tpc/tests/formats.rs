use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tpc::formats::*;
use tpc::pipeline::train_model;
use tpc_core::ingest::{normalize, WindowConfig};
use tpc_core::neural::{predict, HyperParams};
use tpc_core::roadnet::{build_stms, SpeedBinning};
use tpc_core::routing::{DailyPattern, Provenance};
use tpc_core::synth::{archetype_samples, grid_graph, random_graph, transition_events};
use tpc_core::{RouteDb, Timestamp};

fn small_model(seed: u64) -> ModelFile {
    let set = normalize(archetype_samples(seed, 10, 6));
    let hp = HyperParams { output_size: 5, num_layers: 2, epochs: 2, batch_size: 8, seed, ..Default::default() };
    let window = WindowConfig { length: 6, horizon: 1, time_features: false };
    train_model(&set, &hp, window, |_| {}).unwrap()
}

fn random_db(seed: u64) -> RouteDb {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = random_graph(&mut rng, 6, 15);
    let patterns = g
        .segments()
        .iter()
        .map(|s| DailyPattern {
            segment: s.id.clone(),
            interval_speeds: (0..8).map(|_| rng.gen_range(0.5..=s.speed_limit_kmph)).collect(),
            provenance: Provenance::Classified,
        })
        .collect();
    RouteDb::new(g, 8, patterns).unwrap()
}

#[test]
fn model_reload_predicts_bit_identically() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.tpcm");
    let model = small_model(1);
    write_model(&path, &model).unwrap();
    let back = read_model(&path).unwrap();
    assert_eq!(back, model);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let w: Vec<f64> = (0..6).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let (a, pa) = predict(&model.params, &w).unwrap();
        let (b, pb) = predict(&back.params, &w).unwrap();
        assert_eq!(a, b);
        let bits = |p: &[f64]| p.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&pa), bits(&pb));
    }
}

#[test]
fn model_rejects_truncation_and_foreign_bytes() {
    let bytes = encode_model(&small_model(2)).unwrap();
    assert!(decode_model(&bytes[..bytes.len() / 2]).is_err());
    assert!(matches!(decode_model(b"NOPE\x01\x00{}"), Err(FormatError::BadHeader(_))));
    let mut v2 = bytes.clone();
    v2[4] = 9;
    assert!(matches!(decode_model(&v2), Err(FormatError::BadVersion(9))));
}

#[test]
fn stm_store_round_trips() {
    let g = grid_graph(3, 3, 3, 4);
    let start = Timestamp::parse("2016-01-04 00:00:00").unwrap();
    let events = transition_events(3, &g, 2, 200, start);
    let stms = build_stms(&g, &events, 8, SpeedBinning::default()).unwrap();
    assert!(!stms.is_empty());
    assert_eq!(decode_stms(&encode_stms(&stms).unwrap()).unwrap(), stms);
    assert_eq!(decode_events(&encode_events(&events).unwrap()).unwrap(), events);
}

#[test]
fn graph_file_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.json");
    let g = grid_graph(9, 2, 4, 3);
    write_graph(&path, &g).unwrap();
    assert_eq!(read_graph(&path).unwrap(), g);
}

#[test]
fn wrong_tag_is_rejected() {
    let db = encode_route_db(&random_db(1)).unwrap();
    assert!(matches!(decode_dataset(&db), Err(FormatError::BadHeader(_))));
}

#[test]
fn events_with_bad_header_fail() {
    assert!(decode_events("a,b,c,d,e\n").is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn route_db_round_trips(seed: u64, eps in 0.0f64..15.0) {
        let db = random_db(seed).compress_patterns(eps).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.db");
        write_route_db(&path, &db).unwrap();
        prop_assert_eq!(read_route_db(&path).unwrap(), db);
    }

    #[test]
    fn dataset_round_trips(seed: u64, per_class in 1usize..8, steps in 1usize..10) {
        let set = normalize(archetype_samples(seed, per_class, steps));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.ds");
        write_dataset(&path, &set).unwrap();
        prop_assert_eq!(read_dataset(&path).unwrap(), set);
    }
}
