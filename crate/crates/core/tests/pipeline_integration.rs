//! End-to-end pipeline behavior on generated data.

use cdss_core::discovery::DiscoveryConfig;
use cdss_core::pipeline::*;
use cdss_core::segmentation::{SegmentationConfig, TestNormalization, WindowMode};
use cdss_core::series::MultivariateSeries;
use cdss_core::synth::*;
use cdss_core::tcgcn::TcGcnConfig;
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn small_gcn_config(seed: u64) -> TcGcnConfig {
    TcGcnConfig {
        gc_hidden: vec![24],
        mlp_hidden: vec![24],
        batch_size: 64,
        learning_rate: 5e-3,
        epochs: 150,
        adjacency_mode: cdss_core::tcgcn::AdjacencyMode::Boolean,
        val_fraction: 0.1,
        init_scale: 1.0,
        seed,
    }
}

fn fast_seg_config(seed: u64) -> SegmentationConfig {
    let mut discovery = DiscoveryConfig::new(1);
    discovery.kernels_per_target = 4;
    discovery.hidden_width = 6;
    discovery.steps_per_round = 80;
    discovery.max_rounds = 6;
    discovery.seed = seed;
    SegmentationConfig {
        h_init: 80,
        extension_step: 20,
        zeta: 40.0,
        alpha: 1.4,
        beta: 0.05,
        n_max: 10,
        l_min: 100,
        discovery,
        test_normalization: TestNormalization::TrainStats,
        break_placement: cdss_core::segmentation::BreakPlacement::WindowEnd,
        window_mode: WindowMode::Sliding,
    }
}

fn single_mode_series(len: usize, seed: u64) -> MultivariateSeries {
    // fixed mechanism: b = 0.8*a + noise, c = a^2 + noise
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let small = Normal::new(0.0, 0.2).unwrap();
    let mut values = Array2::zeros((len, 3));
    for r in 0..len {
        let a: f64 = normal.sample(&mut rng);
        values[[r, 0]] = a;
        values[[r, 1]] = 0.8 * a + small.sample(&mut rng);
        values[[r, 2]] = a * a + small.sample(&mut rng);
    }
    MultivariateSeries::new(values, vec!["a".into(), "b".into(), "c".into()]).unwrap()
}

#[test]
fn single_mode_series_yields_one_phase() {
    let series = single_mode_series(400, 3);
    let library = offline_train(&series, "c", &fast_seg_config(1), &small_gcn_config(1)).unwrap();
    assert_eq!(library.phases.len(), 1);
    assert_eq!(library.phases[0].start, 0);
    assert_eq!(library.phases[0].end, 400);
    assert_eq!(library.input_vars, vec!["a".to_string(), "b".to_string()]);
}

#[test]
fn offline_train_is_deterministic() {
    let series = single_mode_series(300, 4);
    let a = offline_train(&series, "c", &fast_seg_config(2), &small_gcn_config(2)).unwrap();
    let b = offline_train(&series, "c", &fast_seg_config(2), &small_gcn_config(2)).unwrap();
    assert_eq!(a.phases.len(), b.phases.len());
    for (pa, pb) in a.phases.iter().zip(b.phases.iter()) {
        assert_eq!(pa.record.l_train.to_bits(), pb.record.l_train.to_bits());
        assert_eq!(pa.model.train_rmse.to_bits(), pb.model.train_rmse.to_bits());
    }
}

#[test]
fn match_phase_basics() {
    let series = single_mode_series(300, 5);
    let library = offline_train(&series, "c", &fast_seg_config(3), &small_gcn_config(3)).unwrap();
    let window = series.window(250, 290).unwrap();
    let (phase, dists) = match_phase(&library, window).unwrap();
    assert_eq!(phase, 0);
    assert_eq!(dists.len(), library.phases.len());

    let empty = PhaseLibrary {
        phases: vec![],
        ..library.clone()
    };
    assert!(match_phase(&empty, window).is_err());
}

#[test]
fn match_phase_distances_agree_with_standalone_recomputation() {
    let (series, _) = generate_nonstationary_example(&NonstationaryConfig::default(), 3).unwrap();
    let mut seg = fast_seg_config(7);
    seg.h_init = 150;
    seg.l_min = 170;
    let library = offline_train(&series, "y3", &seg, &small_gcn_config(7)).unwrap();
    let window = series.window(700, 760).unwrap();
    let (_, dists) = match_phase(&library, window).unwrap();
    for (phase, d) in library.phases.iter().zip(dists.iter()) {
        let dist_c = cdss_core::segmentation::causal_similarity_distance(
            &phase.record.predictor,
            &phase.record.train_stats,
            window,
            &library.seg_config,
        )
        .unwrap();
        let mu = cdss_core::series::window_mean(window).unwrap();
        let dist_m = cdss_core::segmentation::stable_similarity_distance(
            phase.record.train_stats.mean.view(),
            mu.view(),
        )
        .unwrap();
        let expect =
            cdss_core::segmentation::similarity_distance(dist_c, dist_m, library.seg_config.zeta);
        assert!((d - expect).abs() < 1e-12);
    }
}

#[test]
fn online_predict_is_causal_and_traces_phases() {
    let (series, truth) = generate_nonstationary_example(&NonstationaryConfig::default(), 11).unwrap();
    let mut seg = fast_seg_config(11);
    seg.h_init = 150;
    seg.l_min = 170;
    seg.discovery.lag_order = 1;
    seg.discovery.lambda1 = vec![0.01; 2];
    seg.discovery.thresholds = vec![0.3; 2];
    let library = offline_train(&series, "y3", &seg, &small_gcn_config(11)).unwrap();
    assert!(library.phases.len() >= 2, "phases {:?}", library.segmentation.breakpoints);

    let w_m = 40;
    let preds = online_predict(&library, &series, w_m).unwrap();
    assert_eq!(preds[0].t, (w_m - 1).max(seg.lag_order()));

    // per-sample phase assignment changes near the training breakpoints
    let interior: Vec<usize> = library
        .segmentation
        .interior_breakpoints
        .clone();
    for b in interior {
        let before = preds.iter().find(|p| p.t + 1 == b.saturating_sub(2 * w_m)).map(|p| p.phase);
        let after = preds.iter().find(|p| p.t == b + 2 * w_m).map(|p| p.phase);
        if let (Some(x), Some(y)) = (before, after) {
            assert_ne!(x, y, "phase should change around breakpoint {b}");
        }
    }

    // causality: predictions at t depend only on rows <= t
    let horizon = 700usize;
    let truncated_values = series.values().slice(ndarray::s![..horizon + 1, ..]).to_owned();
    let truncated =
        MultivariateSeries::new(truncated_values, series.var_names().to_vec()).unwrap();
    let full_at: Vec<&SamplePrediction> = preds.iter().filter(|p| p.t <= horizon).collect();
    let trunc_preds = online_predict(&library, &truncated, w_m).unwrap();
    for (a, b) in full_at.iter().zip(trunc_preds.iter()) {
        assert_eq!(a.t, b.t);
        assert_eq!(a.phase, b.phase);
        assert_eq!(a.y_hat.to_bits(), b.y_hat.to_bits());
    }
    let _ = truth;
}

#[test]
fn constant_library_and_inputs_give_constant_output() {
    let series = single_mode_series(300, 9);
    let library = offline_train(&series, "c", &fast_seg_config(9), &small_gcn_config(9)).unwrap();
    // constant test series
    let values = Array2::from_elem((120, 3), 1.25);
    let constant = MultivariateSeries::new(values, series.var_names().to_vec()).unwrap();
    let preds = online_predict(&library, &constant, 30).unwrap();
    let first = preds[0].y_hat;
    for p in &preds {
        assert_eq!(p.y_hat.to_bits(), first.to_bits());
        assert_eq!(p.phase, preds[0].phase);
    }
}

#[test]
fn library_round_trips_through_directory_bundle() {
    let series = single_mode_series(300, 13);
    let library = offline_train(&series, "c", &fast_seg_config(13), &small_gcn_config(13)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("library");
    library.save_dir(&path).unwrap();
    let loaded = PhaseLibrary::load_dir(&path).unwrap();
    assert_eq!(library.phases.len(), loaded.phases.len());
    assert_eq!(library.target_var, loaded.target_var);
    assert_eq!(
        library.phases[0].record.predictor,
        loaded.phases[0].record.predictor
    );
    // predictions agree bit-for-bit after reload
    let window = series.window(200, 280).unwrap();
    let (pa, da) = match_phase(&library, window).unwrap();
    let (pb, db) = match_phase(&loaded, window).unwrap();
    assert_eq!(pa, pb);
    assert_eq!(da, db);
    let preds_a = online_predict(&library, &series, 40).unwrap();
    let preds_b = online_predict(&loaded, &series, 40).unwrap();
    for (a, b) in preds_a.iter().zip(preds_b.iter()) {
        assert_eq!(a.y_hat.to_bits(), b.y_hat.to_bits());
    }
    // manifest hashes cover every file
    let manifest: serde_json::Value =
        serde_json::from_reader(std::fs::File::open(path.join("manifest.json")).unwrap()).unwrap();
    let files = manifest["files"].as_object().unwrap();
    assert!(files.len() >= 5);
    for hash in files.values() {
        assert_eq!(hash.as_str().unwrap().len(), 64);
    }
}

#[test]
fn tiny_tail_phase_is_merged_with_warning() {
    // craft a segmentation whose last phase is tiny by running on a short
    // series with a small l_min, then drive library building directly
    let series = single_mode_series(220, 17);
    let mut seg = fast_seg_config(17);
    seg.h_init = 80;
    seg.l_min = 100;
    let segmentation = cdss_core::segmentation::segment(&series, &seg).unwrap();
    let mut doctored = segmentation.clone();
    // split a 6-sample tail off the last phase
    let cut = 214;
    let expected = doctored.phases.len();
    let last = doctored.phases.last_mut().unwrap();
    last.end = cut;
    let mut tail = last.clone();
    tail.index += 1;
    tail.start = cut;
    tail.end = 220;
    doctored.phases.push(tail);
    *doctored.breakpoints.last_mut().unwrap() = cut;
    doctored.breakpoints.push(220);
    doctored.graphs.push(None);
    let library = library_from_segmentation(
        &series,
        "c",
        &seg,
        &small_gcn_config(17),
        &doctored,
    )
    .unwrap();
    assert_eq!(library.phases.len(), expected);
    assert_eq!(library.phases.last().unwrap().end, 220);
    assert!(!library.warnings.is_empty());
}

#[test]
fn unknown_target_rejected() {
    let series = single_mode_series(200, 19);
    assert!(offline_train(&series, "nope", &fast_seg_config(19), &small_gcn_config(19)).is_err());
}
