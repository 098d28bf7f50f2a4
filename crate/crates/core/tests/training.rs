use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use satsurf::config::PipelineConfig;
use satsurf::dataset::Dataset;
use satsurf::field::Field;
use satsurf::pipeline::{build_field, fuse_depth, initial_plane, synth};
use satsurf::synth::{AnalyticScene, BUNDLED_SCENE};
use satsurf::trainer::batch::{build_batch, sample_batch, TrainData};
use satsurf::trainer::objective::{evaluate, TermScales};
use satsurf::trainer::{schedule_lambda, train, TrainState};

/// Total loss on a fixed batch of 256 rays at the state's current iteration.
fn held_out_loss(field: &Field, cfg: &PipelineConfig, data: &TrainData, state: &TrainState) -> f64 {
    let tc = cfg.train_config();
    let lambda = schedule_lambda(state.iteration, &tc, field.grid.config.levels);
    let mut rng = ChaCha8Rng::seed_from_u64(12345);
    let batch = build_batch(data, 256, &mut rng).unwrap();
    let samples = sample_batch(
        field,
        &state.params,
        &batch,
        lambda,
        &cfg.sampling_config(),
        false,
        &mut rng,
    );
    evaluate(
        field,
        &state.params,
        &batch,
        &samples,
        lambda,
        TermScales::from_weights(&tc.weights),
        tc.opacity_gate,
        false,
    )
    .unwrap()
    .losses
    .total
}

#[test]
fn loss_descends_on_the_bundled_scene_for_most_seeds() {
    let dir = tempfile::tempdir().unwrap();
    // bundled scene and views, with a small model so five runs stay cheap
    let mut cfg = PipelineConfig::parse(
        "[hash_grid]\nlevels = 4\nbase_resolution = 8\nmax_resolution = 64\ntable_log2 = 12\n\
         [field]\nhidden_width = 16\ngeo_feature_dim = 16\n\
         [render]\nn_uniform = 16\nimportance_rounds = 1\nimportance_per_round = 8\n\
         [train]\ntotal_iters = 2000\nbatch_rays = 16\n",
    )
    .unwrap();
    let scene = AnalyticScene::parse(BUNDLED_SCENE).unwrap();
    synth(&cfg, &scene, &dir.path().join("data")).unwrap();
    let dataset = Dataset::open(&dir.path().join("data")).unwrap();
    fuse_depth(&dataset, &dir.path().join("fused"), cfg.priors.fit_form).unwrap();
    let data = dataset.load_train_data(Some(&dir.path().join("fused"))).unwrap();
    let plane = initial_plane(&dataset).unwrap();

    let mut descended = 0;
    let mut log = Vec::new();
    for seed in 0..5 {
        cfg.pipeline.seed = seed;
        let field = build_field(&cfg).unwrap();
        let mut state = TrainState::new(&field, field.init_params(seed, plane));
        let before = held_out_loss(&field, &cfg, &data, &state);
        train(
            &field,
            &cfg.train_config(),
            &cfg.sampling_config(),
            &data,
            &mut state,
            None,
        )
        .unwrap();
        let after = held_out_loss(&field, &cfg, &data, &state);
        log.push(format!("seed {seed}: {before:.4} -> {after:.4}"));
        if after < before {
            descended += 1;
        }
    }
    assert!(descended >= 4, "{log:?}");
}
