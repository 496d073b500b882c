//! Cross-module integration: the synthetic generator feeding training
//! through the on-disk feature store, checkpoint round trips, and
//! significance testing over real evaluations.

use spom::dataset::synthetic::{generate_synthetic, SynthConfig};
use spom::dataset::{load_manifest, save_manifest, split_dataset};
use spom::decoder::{load_checkpoint, save_checkpoint};
use spom::harness::{
    evaluate, significance_test, train, EvalOptions, TrainConfig, TrainInputs,
};
use spom::representation::FileProvider;
use tempfile::tempdir;

fn small_config() -> TrainConfig {
    let mut config = TrainConfig::desk();
    config.epochs = 4;
    config.batch_size = 8;
    config.decoder.d_model = 16;
    config.decoder.d_k = 16;
    config.decoder.d_v = 16;
    config.decoder.mlp_hidden = vec![16];
    config
}

#[test]
fn file_store_training_matches_in_memory_training() {
    let synth = SynthConfig {
        n_episodes: 80,
        failure_rate: 0.5,
        seed: 40,
        ..SynthConfig::default()
    };
    let data = generate_synthetic(&synth).unwrap();
    let split = split_dataset(&data.episodes, (60, 10, 10), 3).unwrap();
    let config = small_config();

    let memory_outcome = train(
        &TrainInputs {
            episodes: &data.episodes,
            split: &split,
            provider: &data.store,
            registry: &data.registry,
        },
        &config,
    )
    .unwrap();

    // Round-trip the whole store (and the manifest) through disk.
    let dir = tempdir().unwrap();
    let features_root = dir.path().join("features");
    data.store.write_to_dir(&features_root).unwrap();
    let manifest_path = dir.path().join("manifest.jsonl");
    save_manifest(&manifest_path, &data.episodes).unwrap();
    let episodes = load_manifest(&manifest_path).unwrap();
    assert_eq!(episodes, data.episodes);

    let provider = FileProvider::new(&features_root);
    let file_outcome = train(
        &TrainInputs {
            episodes: &episodes,
            split: &split,
            provider: &provider,
            registry: &data.registry,
        },
        &config,
    )
    .unwrap();

    // f32 storage is exact for f32-valued blocks, so the two runs are
    // bitwise identical.
    assert_eq!(memory_outcome.result, file_outcome.result);
    assert_eq!(memory_outcome.params, file_outcome.params);
}

#[test]
fn checkpoint_round_trip_preserves_evaluation() {
    let synth = SynthConfig {
        n_episodes: 60,
        failure_rate: 0.5,
        seed: 41,
        ..SynthConfig::default()
    };
    let data = generate_synthetic(&synth).unwrap();
    let split = split_dataset(&data.episodes, (40, 10, 10), 3).unwrap();
    let config = small_config();
    let inputs = TrainInputs {
        episodes: &data.episodes,
        split: &split,
        provider: &data.store,
        registry: &data.registry,
    };
    let outcome = train(&inputs, &config).unwrap();
    let filtered = data.registry.with_groups(&config.enabled_groups);

    let dir = tempdir().unwrap();
    let path = dir.path().join("model.lrck");
    save_checkpoint(&path, &outcome.params, outcome.result.config_digest).unwrap();
    let loaded = load_checkpoint(&path, &config.decoder, outcome.result.config_digest).unwrap();
    assert_eq!(loaded, outcome.params);

    let test_episodes: Vec<_> = data
        .episodes
        .iter()
        .filter(|e| split.test.contains(&e.episode_id))
        .cloned()
        .collect();
    let direct = evaluate(
        &outcome.params,
        config.mode,
        &data.store,
        &filtered,
        &test_episodes,
        &EvalOptions::default(),
    )
    .unwrap();
    let reloaded = evaluate(
        &loaded,
        config.mode,
        &data.store,
        &filtered,
        &test_episodes,
        &EvalOptions::default(),
    )
    .unwrap();
    assert_eq!(direct.matrix, reloaded.matrix);
    assert_eq!(direct.matrix, outcome.result.test);
}

#[test]
fn forward_is_safe_to_share_across_threads() {
    let synth = SynthConfig {
        n_episodes: 16,
        failure_rate: 0.5,
        seed: 50,
        ..SynthConfig::default()
    };
    let data = generate_synthetic(&synth).unwrap();
    let config = small_config();
    let filtered = data.registry.with_groups(&config.enabled_groups);
    let params =
        spom::decoder::DecoderParams::init(&filtered, &config.decoder, 1).unwrap();

    // Shared immutable params and provider, one forward per thread; every
    // thread must see the bitwise-identical result of a serial forward.
    let serial: Vec<u64> = data
        .episodes
        .iter()
        .map(|e| {
            spom::harness::predict(&params, config.mode, &data.store, &filtered, e)
                .unwrap()
                .to_bits()
        })
        .collect();
    let parallel: Vec<u64> = std::thread::scope(|scope| {
        let handles: Vec<_> = data
            .episodes
            .iter()
            .map(|e| {
                let (params, filtered, store) = (&params, &filtered, &data.store);
                scope.spawn(move || {
                    spom::harness::predict(params, config.mode, store, filtered, e)
                        .unwrap()
                        .to_bits()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    assert_eq!(serial, parallel);
}

#[test]
fn significance_of_trained_vs_untrained() {
    let synth = SynthConfig {
        n_episodes: 300,
        failure_rate: 0.5,
        seed: 42,
        ..SynthConfig::default()
    };
    let data = generate_synthetic(&synth).unwrap();
    let split = split_dataset(&data.episodes, (200, 50, 50), 3).unwrap();
    let mut config = small_config();
    config.epochs = 12;
    let inputs = TrainInputs {
        episodes: &data.episodes,
        split: &split,
        provider: &data.store,
        registry: &data.registry,
    };
    let outcome = train(&inputs, &config).unwrap();
    let trained = outcome.result.test;

    // Same matrix against itself: no difference at all.
    assert_eq!(significance_test(&trained, &trained).unwrap(), 1.0);

    // A knowingly broken predictor over the same count.
    let broken = spom::harness::ConfusionMatrix::from_counts(
        0,
        0,
        trained.total() - trained.total() / 2,
        trained.total() / 2,
    );
    let p = significance_test(&trained, &broken).unwrap();
    assert!((0.0..=1.0).contains(&p));
    if trained.accuracy() > 0.9 {
        assert!(p < 0.05, "p = {p} for {} vs {}", trained.accuracy(), broken.accuracy());
    }
}
