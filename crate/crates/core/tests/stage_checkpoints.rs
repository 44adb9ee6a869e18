//! Checkpoint round trips for every trainable stage, including refusal on
//! configuration mismatch and deterministic resume.

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nowcast::checkpoint::stages::{self, LsrBundleConfig, StageIoError};
use nowcast::data::{SequenceSample, CONTEXT_FRAMES, TARGET_FRAMES};
use nowcast::diffusion::standard_normal;
use nowcast::nn::AdamConfig;
use nowcast::predictor::{PredictorConfig, PredictorTrainState};
use nowcast::sr::latent::{fit_latent_stats, AeConfig, AeTrainState, LsrConfig, LsrTrainState};
use nowcast::sr::spatial::{SsrConfig, SsrTrainState};
use nowcast::sr::SrPair;

fn sample(h: usize, w: usize, seed: u64) -> SequenceSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SequenceSample {
        context: standard_normal(&[CONTEXT_FRAMES, 1, h, w], &mut rng)
            .mapv(f64::tanh)
            .into_dimensionality()
            .unwrap(),
        target: standard_normal(&[TARGET_FRAMES, 1, h, w], &mut rng)
            .mapv(f64::tanh)
            .into_dimensionality()
            .unwrap(),
    }
}

fn pair(low: usize, high: usize, seed: u64) -> SrPair {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let high_arr = Array3::from_shape_fn((1, high, high), |_| rng.random_range(-1.0..1.0));
    let factor = high / low;
    let h2 = high_arr.index_axis(ndarray::Axis(0), 0).to_owned();
    let low2 = nowcast::data::downsample_area(&h2, factor).unwrap();
    let mut low_arr = Array3::zeros((1, low, low));
    low_arr.index_axis_mut(ndarray::Axis(0), 0).assign(&low2);
    SrPair { low: low_arr, high: high_arr }
}

#[test]
fn predictor_checkpoint_round_trip_and_deterministic_resume() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("predictor.ckpt");
    let cfg = PredictorConfig::tiny(8, 8);
    let batch = vec![sample(8, 8, 1), sample(8, 8, 2)];

    // reference: four consecutive steps in one state
    let mut whole = PredictorTrainState::new(&cfg, AdamConfig::default(), 0.99, 5).unwrap();
    let mut reference = Vec::new();
    for _ in 0..4 {
        let mut rng = whole.step_rng();
        reference.push(whole.train_step(&batch, &mut rng).unwrap());
    }

    // two steps, checkpoint, reload, two more
    let mut state = PredictorTrainState::new(&cfg, AdamConfig::default(), 0.99, 5).unwrap();
    let mut split = Vec::new();
    for _ in 0..2 {
        let mut rng = state.step_rng();
        split.push(state.train_step(&batch, &mut rng).unwrap());
    }
    stages::save_predictor(&state, &path).unwrap();
    let mut resumed = stages::load_predictor(&path, &cfg).unwrap();
    assert_eq!(resumed.step, 2);
    assert_eq!(resumed.model.params, state.model.params);
    assert_eq!(resumed.ema.values, state.ema.values);
    for _ in 0..2 {
        let mut rng = resumed.step_rng();
        split.push(resumed.train_step(&batch, &mut rng).unwrap());
    }
    assert_eq!(split, reference, "resume must reproduce the loss trajectory bit for bit");

    // config mismatch refuses to load
    let other = PredictorConfig { base_channels: 16, ..cfg.clone() };
    let err = stages::load_predictor(&path, &other).err().expect("mismatch must refuse");
    assert!(matches!(
        err,
        StageIoError::Checkpoint(nowcast::checkpoint::CheckpointError::ConfigMismatch(_))
    ));
}

#[test]
fn ssr_checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ssr.ckpt");
    let cfg = SsrConfig::tiny(4, 16);
    let mut state = SsrTrainState::new(&cfg, AdamConfig::default(), 0.99, 3).unwrap();
    let batch = vec![pair(4, 16, 1)];
    let mut rng = state.step_rng();
    state.train_step(&batch, &mut rng).unwrap();
    stages::save_ssr(&state, &path).unwrap();

    let loaded = stages::load_ssr(&path, &cfg).unwrap();
    assert_eq!(loaded.model.params, state.model.params);
    assert_eq!(loaded.opt.step, state.opt.step);
    assert_eq!(loaded.step, 1);

    let other = SsrConfig { base_channels: 6, ..cfg };
    assert!(stages::load_ssr(&path, &other).is_err());
}

#[test]
fn autoencoder_and_lsr_checkpoints_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let ae_cfg = AeConfig::tiny(16);
    let mut ae_state = AeTrainState::new(&ae_cfg, AdamConfig::default(), 0.99, 9).unwrap();
    let highs: Vec<Array3<f64>> = (0..2).map(|k| pair(2, 16, 40 + k).high).collect();
    ae_state.train_step(&highs).unwrap();
    let ae_path = dir.path().join("autoencoder.ckpt");
    stages::save_autoencoder(&ae_state, &ae_path).unwrap();
    let ae_loaded = stages::load_autoencoder(&ae_path, &ae_cfg).unwrap();
    assert_eq!(ae_loaded.model.params, ae_state.model.params);

    let lsr_cfg = LsrConfig::tiny(2, 16);
    let ae = ae_loaded.ema_model();
    let stats = fit_latent_stats(&ae, &highs, 8).unwrap();
    let mut lsr_state =
        LsrTrainState::new(&lsr_cfg, ae, stats.clone(), AdamConfig::default(), 0.99, 10).unwrap();
    let batch = vec![pair(2, 16, 50)];
    let mut rng = lsr_state.step_rng();
    lsr_state.train_step(&batch, &mut rng).unwrap();

    let lsr_path = dir.path().join("lsr.ckpt");
    stages::save_lsr(&lsr_state, &lsr_path).unwrap();
    let bundle = LsrBundleConfig { lsr: lsr_cfg.clone(), ae: ae_cfg.clone() };
    let loaded = stages::load_lsr(&lsr_path, &bundle).unwrap();
    assert_eq!(loaded.pipeline.lsr.params, lsr_state.pipeline.lsr.params);
    assert_eq!(loaded.pipeline.ae.params, lsr_state.pipeline.ae.params);
    assert_eq!(loaded.pipeline.stats, stats);
    assert_eq!(loaded.step, 1);

    // a different embedded autoencoder config must refuse
    let wrong = LsrBundleConfig {
        lsr: lsr_cfg,
        ae: AeConfig { base_channels: 6, ..ae_cfg },
    };
    assert!(stages::load_lsr(&lsr_path, &wrong).is_err());
}
