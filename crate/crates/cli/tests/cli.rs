//! End-to-end tests of the `nowcast` binary: exit codes, determinism, file
//! contracts.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ndarray::Axis;
use nowcast::data::{load_sequence, save_sequence, RadarSequence};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nowcast"))
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("binary runs");
    assert!(
        out.status.success(),
        "command {:?} failed: {}\n{}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn run_code(args: &[&str]) -> (i32, String) {
    let out = bin().args(args).output().expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        format!(
            "{}{}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        ),
    )
}

/// A config small enough for per-test training runs.
fn tiny_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("tiny.cfg");
    let data_dir = dir.join("data");
    let body = format!(
        "synth.count=3\nsynth.height=16\nsynth.width=16\n\
         data.dir={}\ndata.low_size=4\ndata.high_size=16\n\
         schedule.steps=3\nschedule.beta_start=0.01\nschedule.beta_end=0.2\n\
         predictor.base_channels=4\npredictor.channel_multipliers=1,2\n\
         predictor.attention=0,1\npredictor.res_blocks=1\npredictor.embed_dim=8\n\
         predictor.encoder_channels=2\npredictor.heads=2\n\
         ssr.base_channels=4\nssr.channel_multipliers=1,2\nssr.attention=0,1\n\
         ssr.res_blocks=1\nssr.heads=2\n\
         ae.base_channels=4\nae.channel_multipliers=1,1,2\nae.res_blocks=1\n\
         lsr.base_channels=4\nlsr.channel_multipliers=1,2\nlsr.attention=0,1\n\
         lsr.res_blocks=1\nlsr.heads=2\n\
         embed.patch=1\nembed.dim=8\nembed.layers=1\nembed.heads=2\n\
         train.steps=2\ntrain.batch=2\ntrain.lr=0.001\ntrain.seed=3\n\
         eval.members=2\n{extra}",
        data_dir.display()
    );
    std::fs::write(&path, body).unwrap();
    path
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut entries: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .map(|e| {
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    entries.sort_by(|a, b| a.0.cmp(&b.0));
    entries
}

#[test]
fn synth_is_byte_deterministic_and_manifest_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path(), "synth.count=8\n");
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    run_ok(&["synth", "--config", cfg.to_str().unwrap(), "--out", a.to_str().unwrap(), "--seed", "7"]);
    run_ok(&["synth", "--config", cfg.to_str().unwrap(), "--out", b.to_str().unwrap(), "--seed", "7"]);
    assert_eq!(dir_bytes(&a), dir_bytes(&b), "same seed must give identical directories");

    let manifest = std::fs::read_to_string(a.join("manifest.txt")).unwrap();
    let files: Vec<&str> = manifest.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(files.len(), 8);
    assert!(manifest.starts_with("# seed=7"));
    for name in files {
        let seq = load_sequence(a.join(name)).unwrap();
        assert_eq!(seq.frames().shape(), [20, 16, 16]);
    }
    // a different seed changes the bytes
    let c = tmp.path().join("c");
    run_ok(&["synth", "--config", cfg.to_str().unwrap(), "--out", c.to_str().unwrap(), "--seed", "8"]);
    assert_ne!(dir_bytes(&a), dir_bytes(&c));
}

#[test]
fn usage_errors_exit_2() {
    let (code, _) = run_code(&["frobnicate"]);
    assert_eq!(code, 2, "unknown subcommand");

    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.cfg");
    std::fs::write(&bad, "no.such.key=1\n").unwrap();
    let (code, msg) = run_code(&[
        "synth",
        "--config",
        bad.to_str().unwrap(),
        "--out",
        tmp.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(code, 2, "unknown config key: {msg}");
    assert!(msg.contains("no.such.key"));
}

#[test]
fn missing_prerequisites_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path(), "");
    // no dataset yet
    let (code, msg) = run_code(&[
        "train",
        "predictor",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().join("m").to_str().unwrap(),
    ]);
    assert_eq!(code, 3, "missing dataset: {msg}");

    run_ok(&[
        "synth",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().join("data").to_str().unwrap(),
    ]);

    // lsr before autoencoder
    let (code, msg) = run_code(&[
        "train",
        "lsr",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().join("m").to_str().unwrap(),
    ]);
    assert_eq!(code, 3, "lsr without autoencoder checkpoint: {msg}");
    assert!(msg.contains("autoencoder"), "message names the missing stage: {msg}");

    // forecast without a predictor checkpoint
    let (code, msg) = run_code(&[
        "forecast",
        "--config",
        cfg.to_str().unwrap(),
        "--models",
        tmp.path().join("m").to_str().unwrap(),
        "--context",
        tmp.path().join("data/seq_0000.trdm").to_str().unwrap(),
        "--out",
        tmp.path().join("fc").to_str().unwrap(),
    ]);
    assert_eq!(code, 3, "missing predictor checkpoint: {msg}");
}

#[test]
fn train_logs_one_row_per_step_and_resume_matches_fresh_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg2 = tiny_config(tmp.path(), "train.steps=2\n");
    run_ok(&[
        "synth",
        "--config",
        cfg2.to_str().unwrap(),
        "--out",
        tmp.path().join("data").to_str().unwrap(),
    ]);

    // fresh run of 4 steps
    let cfg4 = {
        let p = tmp.path().join("four.cfg");
        let body = std::fs::read_to_string(&cfg2).unwrap().replace("train.steps=2", "train.steps=4");
        std::fs::write(&p, body).unwrap();
        p
    };
    let whole = tmp.path().join("whole");
    run_ok(&["train", "predictor", "--config", cfg4.to_str().unwrap(), "--out", whole.to_str().unwrap()]);
    let whole_log = std::fs::read_to_string(whole.join("predictor_loss.csv")).unwrap();
    assert_eq!(whole_log.lines().count(), 5, "header plus 4 rows:\n{whole_log}");
    assert_eq!(whole_log.lines().next().unwrap(), "step,loss");

    // 2 steps then resume for 2 more
    let split = tmp.path().join("split");
    run_ok(&["train", "predictor", "--config", cfg2.to_str().unwrap(), "--out", split.to_str().unwrap()]);
    run_ok(&["train", "predictor", "--config", cfg2.to_str().unwrap(), "--out", split.to_str().unwrap()]);
    let split_log = std::fs::read_to_string(split.join("predictor_loss.csv")).unwrap();
    assert_eq!(
        split_log, whole_log,
        "resumed trajectory must match the fresh run"
    );
}

#[test]
fn forecast_emits_members_and_rates_are_nonnegative() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path(), "");
    run_ok(&["synth", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("data").to_str().unwrap()]);
    let models = tmp.path().join("models");
    run_ok(&["train", "predictor", "--config", cfg.to_str().unwrap(), "--out", models.to_str().unwrap()]);
    run_ok(&["train", "ssr", "--config", cfg.to_str().unwrap(), "--out", models.to_str().unwrap()]);
    let fc = tmp.path().join("fc");
    run_ok(&[
        "forecast",
        "--config",
        cfg.to_str().unwrap(),
        "--models",
        models.to_str().unwrap(),
        "--context",
        tmp.path().join("data/seq_0001.trdm").to_str().unwrap(),
        "--out",
        fc.to_str().unwrap(),
        "--members",
        "2",
        "--seed",
        "9",
    ]);

    for m in 0..2 {
        let low = load_sequence(fc.join(format!("member_{m:02}_low.trdm"))).unwrap();
        assert_eq!(low.frames().shape(), [16, 4, 4]);
        let high = load_sequence(fc.join(format!("member_{m:02}_high.trdm"))).unwrap();
        assert_eq!(high.frames().shape(), [16, 16, 16]);
        assert!(high.frames().iter().all(|&v| v >= 0.0));
        assert!(low.frames().iter().all(|&v| v >= 0.0));
    }
    assert!(fc.join("context.trdm").exists());
    assert!(fc.join("config.resolved").exists());
    // one raster per member and frame
    let renders = std::fs::read_dir(fc.join("render")).unwrap().count();
    assert_eq!(renders, 2 * 16);
}

#[test]
fn evaluate_perfect_forecast_and_persistence_oracle() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path(), "");

    // build truth and context by hand in mm/h
    let mut rng_state = 1234u64;
    let mut next = move || {
        rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((rng_state >> 33) as f64 / (1u64 << 31) as f64) * 3.0
    };
    let truth_frames = ndarray::Array3::from_shape_fn((16, 4, 4), |_| next() as f32);
    let context_frames = ndarray::Array3::from_shape_fn((4, 4, 4), |_| next() as f32);
    let truth = RadarSequence::new(truth_frames.clone(), 0).unwrap();
    let context = RadarSequence::new(context_frames.clone(), 0).unwrap();

    let fc = tmp.path().join("fc");
    std::fs::create_dir_all(&fc).unwrap();
    save_sequence(&truth, tmp.path().join("truth.trdm")).unwrap();
    // the truth itself is the single forecast member
    save_sequence(&truth, fc.join("member_00_low.trdm")).unwrap();
    save_sequence(&context, fc.join("context.trdm")).unwrap();

    let out = tmp.path().join("eval");
    run_ok(&[
        "evaluate",
        "--config",
        cfg.to_str().unwrap(),
        "--forecast-dir",
        fc.to_str().unwrap(),
        "--truth",
        tmp.path().join("truth.trdm").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = metrics.trim_end().lines().collect();
    assert_eq!(lines.len(), 6, "header plus exactly five rows");
    assert_eq!(lines[0], "lead_min,crps,fss,csi,mse_norm");
    for row in &lines[1..] {
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(cols[1], "0.000000", "perfect forecast crps: {row}");
        assert_eq!(cols[2], "1.000000", "perfect forecast fss: {row}");
        assert_eq!(cols[3], "1.000000", "perfect forecast csi: {row}");
        assert_eq!(cols[4], "0.000000", "perfect forecast mse: {row}");
    }

    // persistence columns equal a direct metrics computation
    let persisted = std::fs::read_to_string(out.join("persistence_metrics.csv")).unwrap();
    let context_f64 = context_frames.mapv(f64::from);
    let truth_f64 = truth_frames.mapv(f64::from);
    let pf = nowcast::metrics::persistence_forecast(context_f64.view());
    let ens = pf.insert_axis(Axis(0));
    let run_cfg = nowcast::config::RunConfig::load(&cfg).unwrap();
    let table = nowcast::metrics::lead_time_table(
        ens.view(),
        truth_f64.view(),
        &run_cfg.verify_config(),
    )
    .unwrap();
    assert_eq!(persisted, table.to_csv());
}

#[test]
fn evaluate_rejects_wrong_truth_shape() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path(), "");
    let fc = tmp.path().join("fc");
    std::fs::create_dir_all(&fc).unwrap();
    let frames = ndarray::Array3::from_elem((12, 4, 4), 1.0f32);
    let seq = RadarSequence::new(frames, 0).unwrap();
    save_sequence(&seq, tmp.path().join("truth.trdm")).unwrap();
    let (code, msg) = run_code(&[
        "evaluate",
        "--config",
        cfg.to_str().unwrap(),
        "--forecast-dir",
        fc.to_str().unwrap(),
        "--truth",
        tmp.path().join("truth.trdm").to_str().unwrap(),
        "--out",
        tmp.path().join("eval").to_str().unwrap(),
    ]);
    assert_eq!(code, 4, "12-frame truth must be a data error: {msg}");
}

#[test]
fn render_endpoints_and_frame_count() {
    let tmp = tempfile::tempdir().unwrap();
    // one frame of 0 mm/h and one of 128 mm/h, plus 18 more
    let mut frames = ndarray::Array3::zeros((20, 2, 2));
    frames.index_axis_mut(Axis(0), 1).fill(128.0f32);
    let seq = RadarSequence::new(frames, 0).unwrap();
    let input = tmp.path().join("seq.trdm");
    save_sequence(&seq, &input).unwrap();
    let out = tmp.path().join("pgm");
    run_ok(&["render", "--input", input.to_str().unwrap(), "--out", out.to_str().unwrap()]);

    let files: Vec<_> = std::fs::read_dir(&out).unwrap().collect();
    assert_eq!(files.len(), 20);
    let f0 = std::fs::read(out.join("frame_000.pgm")).unwrap();
    let header = b"P5\n2 2\n255\n";
    assert_eq!(&f0[..header.len()], header);
    assert_eq!(&f0[header.len()..], &[0u8, 0, 0, 0], "0 mm/h renders black");
    let f1 = std::fs::read(out.join("frame_001.pgm")).unwrap();
    assert_eq!(&f1[header.len()..], &[255u8, 255, 255, 255], "128 mm/h saturates");
}

#[test]
fn render_missing_file_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let (code, _) = run_code(&[
        "render",
        "--input",
        tmp.path().join("nope.trdm").to_str().unwrap(),
        "--out",
        tmp.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(code, 3);
}
