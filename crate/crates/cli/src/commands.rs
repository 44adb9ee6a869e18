use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use ndarray::{Array3, Array4, Axis};
use rand::Rng;
use thiserror::Error;

use nowcast::checkpoint::stages::{self, LsrBundleConfig};
use nowcast::config::{ReconstructMode, RunConfig};
use nowcast::data::{
    self, downsample_sequence, load_sequence, make_windows, save_sequence, NormalizationSpec,
    RadarSequence, SequenceSample, CONTEXT_FRAMES, TARGET_FRAMES,
};
use nowcast::metrics::{lead_time_table, persistence_forecast, MetricTable};
use nowcast::predictor::PredictorTrainState;
use nowcast::rng::{derive, stream};
use nowcast::sr::latent::{fit_latent_stats, AeTrainState, LsrTrainState};
use nowcast::sr::spatial::SsrTrainState;
use nowcast::sr::SrPair;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Stage {
    Predictor,
    Ssr,
    Autoencoder,
    Lsr,
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::Predictor => "predictor",
            Stage::Ssr => "ssr",
            Stage::Autoencoder => "autoencoder",
            Stage::Lsr => "lsr",
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("missing prerequisite: {0}")]
    Missing(String),
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Missing(_) => 3,
            CliError::Data(_) => 4,
        }
    }
}

fn data_err(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

/// Parse a config file; absent path means defaults. Unknown keys and other
/// parse problems are usage errors.
pub fn load_config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            if !p.exists() {
                return Err(CliError::Missing(format!("config file {}", p.display())));
            }
            RunConfig::load(p).map_err(|e| CliError::Usage(e.to_string()))
        }
    }
}

fn ensure_out(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Data(format!("cannot create output dir {}: {e}", dir.display())))
}

fn write_resolved(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    fs::write(out.join("config.resolved"), cfg.to_resolved_string()).map_err(data_err)
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

/// Generate a synthetic dataset directory: TRDM files plus a manifest.
pub fn cmd_synth(cfg: &RunConfig, out: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let seed = seed.unwrap_or(cfg.train_seed);
    ensure_out(out)?;
    let synth_cfg = cfg.synth_config();
    let seqs = data::synth_advection_dataset(seed, cfg.synth_count, &synth_cfg);
    let mut manifest = format!("# seed={seed}\n");
    for (i, seq) in seqs.iter().enumerate() {
        let name = format!("seq_{i:04}.trdm");
        save_sequence(seq, out.join(&name)).map_err(data_err)?;
        let _ = writeln!(manifest, "{name}");
    }
    fs::write(out.join("manifest.txt"), manifest).map_err(data_err)?;
    write_resolved(cfg, out)?;
    println!("wrote {} sequences to {}", seqs.len(), out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// dataset access
// ---------------------------------------------------------------------------

pub struct Dataset {
    pub seqs: Vec<RadarSequence>,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self, CliError> {
        let manifest = dir.join("manifest.txt");
        if !manifest.exists() {
            return Err(CliError::Missing(format!(
                "dataset manifest {}",
                manifest.display()
            )));
        }
        let text = fs::read_to_string(&manifest).map_err(data_err)?;
        let mut seqs = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            seqs.push(load_sequence(dir.join(line)).map_err(data_err)?);
        }
        if seqs.is_empty() {
            return Err(CliError::Data(format!("dataset {} lists no sequences", dir.display())));
        }
        Ok(Self { seqs })
    }

    fn check_geometry(&self, cfg: &RunConfig) -> Result<(), CliError> {
        for seq in &self.seqs {
            let s = seq.frames().shape();
            if s[1] != cfg.data_high_size || s[2] != cfg.data_high_size {
                return Err(CliError::Data(format!(
                    "dataset frames are {}x{}, config expects {0}x{0} high resolution",
                    s[1], s[2]
                )));
            }
        }
        Ok(())
    }

    /// Low-resolution normalized training windows for the predictor.
    pub fn predictor_samples(&self, cfg: &RunConfig) -> Result<Vec<SequenceSample>, CliError> {
        self.check_geometry(cfg)?;
        let spec = cfg.normalization();
        let factor = cfg.downsample_factor();
        let mut out = Vec::new();
        for seq in &self.seqs {
            let low = downsample_sequence(seq, factor).map_err(data_err)?;
            let low_seq = RadarSequence::new(low.mapv(|v| v as f32), seq.start_time())
                .map_err(data_err)?;
            out.extend(make_windows(&low_seq, cfg.data_window_stride, &spec));
        }
        if out.is_empty() {
            return Err(CliError::Data(
                "dataset has no 20-frame windows; sequences are too short".into(),
            ));
        }
        Ok(out)
    }

    pub fn frame_coords(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (si, seq) in self.seqs.iter().enumerate() {
            for fi in 0..seq.frame_count() {
                out.push((si, fi));
            }
        }
        out
    }

    pub fn pair_at(
        &self,
        coord: (usize, usize),
        cfg: &RunConfig,
        spec: &NormalizationSpec,
    ) -> Result<SrPair, CliError> {
        let frame = self.seqs[coord.0].frame_f64(coord.1);
        SrPair::from_rate_frame(&frame, cfg.downsample_factor(), spec).map_err(data_err)
    }
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

fn loss_log_path(out: &Path, stage: Stage) -> PathBuf {
    out.join(format!("{}_loss.csv", stage.name()))
}

fn ckpt_path(out: &Path, stage: Stage) -> PathBuf {
    out.join(format!("{}.ckpt", stage.name()))
}

struct LossLog {
    file: fs::File,
}

impl LossLog {
    fn open(path: &Path, fresh: bool) -> Result<Self, CliError> {
        let existed = path.exists() && !fresh;
        let file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .truncate(false)
            .open(path)
            .map_err(data_err)?;
        let mut log = Self { file };
        if !existed {
            // truncate and write the header
            log.file.set_len(0).map_err(data_err)?;
            log.write_header()?;
        }
        Ok(log)
    }

    fn write_header(&mut self) -> Result<(), CliError> {
        writeln!(self.file, "step,loss").map_err(data_err)
    }

    fn record(&mut self, step: u64, loss: f64) -> Result<(), CliError> {
        writeln!(self.file, "{step},{loss:.12e}").map_err(data_err)
    }
}

/// Train (or resume) one stage, appending to its loss log and writing the
/// stage checkpoint into `out`.
pub fn cmd_train(
    stage: Stage,
    cfg: &RunConfig,
    out: &Path,
    seed: Option<u64>,
) -> Result<(), CliError> {
    let seed = seed.unwrap_or(cfg.train_seed);
    ensure_out(out)?;
    let dataset = Dataset::load(Path::new(&cfg.data_dir))?;
    dataset.check_geometry(cfg)?;
    let steps = cfg.train_steps;
    let path = ckpt_path(out, stage);
    let resume = path.exists();
    let log = LossLog::open(&loss_log_path(out, stage), !resume)?;

    match stage {
        Stage::Predictor => {
            let samples = dataset.predictor_samples(cfg)?;
            let mut state = if resume {
                stages::load_predictor(&path, &cfg.predictor_config()).map_err(data_err)?
            } else {
                PredictorTrainState::new(
                    &cfg.predictor_config(),
                    cfg.adam_config(),
                    cfg.train_ema,
                    seed,
                )
                .map_err(data_err)?
            };
            train_loop(steps, log, |log| {
                let mut rng = state.step_rng();
                let batch: Vec<SequenceSample> = (0..cfg.train_batch)
                    .map(|_| samples[rng.random_range(0..samples.len())].clone())
                    .collect();
                let loss = state.train_step(&batch, &mut rng).map_err(data_err)?;
                log.record(state.step, loss)?;
                Ok(loss)
            })?;
            stages::save_predictor(&state, &path).map_err(data_err)?;
        }
        Stage::Ssr => {
            let coords = dataset.frame_coords();
            let spec = cfg.normalization();
            let mut state = if resume {
                stages::load_ssr(&path, &cfg.ssr_config()).map_err(data_err)?
            } else {
                SsrTrainState::new(&cfg.ssr_config(), cfg.adam_config(), cfg.train_ema, seed)
                    .map_err(data_err)?
            };
            train_loop(steps, log, |log| {
                let mut rng = state.step_rng();
                let batch: Result<Vec<SrPair>, CliError> = (0..cfg.train_batch)
                    .map(|_| dataset.pair_at(coords[rng.random_range(0..coords.len())], cfg, &spec))
                    .collect();
                let loss = state.train_step(&batch?, &mut rng).map_err(data_err)?;
                log.record(state.step, loss)?;
                Ok(loss)
            })?;
            stages::save_ssr(&state, &path).map_err(data_err)?;
        }
        Stage::Autoencoder => {
            let coords = dataset.frame_coords();
            let spec = cfg.normalization();
            let mut state = if resume {
                stages::load_autoencoder(&path, &cfg.ae_config()).map_err(data_err)?
            } else {
                AeTrainState::new(&cfg.ae_config(), cfg.adam_config(), cfg.train_ema, seed)
                    .map_err(data_err)?
            };
            train_loop(steps, log, |log| {
                let mut rng = state.step_rng();
                let batch: Result<Vec<Array3<f64>>, CliError> = (0..cfg.train_batch)
                    .map(|_| {
                        dataset
                            .pair_at(coords[rng.random_range(0..coords.len())], cfg, &spec)
                            .map(|p| p.high)
                    })
                    .collect();
                let loss = state.train_step(&batch?).map_err(data_err)?;
                log.record(state.step, loss)?;
                Ok(loss)
            })?;
            stages::save_autoencoder(&state, &path).map_err(data_err)?;
        }
        Stage::Lsr => {
            let ae_path = ckpt_path(out, Stage::Autoencoder);
            if !ae_path.exists() {
                return Err(CliError::Missing(format!(
                    "autoencoder checkpoint {} (train the autoencoder stage first)",
                    ae_path.display()
                )));
            }
            let coords = dataset.frame_coords();
            let spec = cfg.normalization();
            let mut state = if resume {
                stages::load_lsr(
                    &path,
                    &LsrBundleConfig { lsr: cfg.lsr_config(), ae: cfg.ae_config() },
                )
                .map_err(data_err)?
            } else {
                let ae_state =
                    stages::load_autoencoder(&ae_path, &cfg.ae_config()).map_err(data_err)?;
                let ae = ae_state.ema_model();
                // latent statistics over a deterministic sample of the data
                let highs: Result<Vec<Array3<f64>>, CliError> = coords
                    .iter()
                    .take(64)
                    .map(|&c| dataset.pair_at(c, cfg, &spec).map(|p| p.high))
                    .collect();
                let stats = fit_latent_stats(&ae, &highs?, 64).map_err(data_err)?;
                LsrTrainState::new(
                    &cfg.lsr_config(),
                    ae,
                    stats,
                    cfg.adam_config(),
                    cfg.train_ema,
                    seed,
                )
                .map_err(data_err)?
            };
            train_loop(steps, log, |log| {
                let mut rng = state.step_rng();
                let batch: Result<Vec<SrPair>, CliError> = (0..cfg.train_batch)
                    .map(|_| dataset.pair_at(coords[rng.random_range(0..coords.len())], cfg, &spec))
                    .collect();
                let loss = state.train_step(&batch?, &mut rng).map_err(data_err)?;
                log.record(state.step, loss)?;
                Ok(loss)
            })?;
            stages::save_lsr(&state, &path).map_err(data_err)?;
        }
    }
    write_resolved(cfg, out)?;
    Ok(())
}

fn train_loop(
    steps: usize,
    mut log: LossLog,
    mut step_fn: impl FnMut(&mut LossLog) -> Result<f64, CliError>,
) -> Result<(), CliError> {
    let report_every = (steps / 10).max(1);
    for k in 0..steps {
        let loss = step_fn(&mut log)?;
        if (k + 1) % report_every == 0 || k + 1 == steps {
            println!("step {:>6}/{steps}  loss {loss:.5}", k + 1);
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// forecast
// ---------------------------------------------------------------------------

/// Read a context file and produce the normalized 4-frame predictor input
/// plus the raw context frames (at file resolution, mm/h).
fn load_context(
    path: &Path,
    cfg: &RunConfig,
) -> Result<(Array4<f64>, RadarSequence), CliError> {
    if !path.exists() {
        return Err(CliError::Missing(format!("context file {}", path.display())));
    }
    let seq = load_sequence(path).map_err(data_err)?;
    if seq.frame_count() < CONTEXT_FRAMES {
        return Err(CliError::Data(format!(
            "context file holds {} frames; {CONTEXT_FRAMES} are required",
            seq.frame_count()
        )));
    }
    let side = seq.frames().shape()[1];
    let spec = cfg.normalization();
    let low_frames: Vec<ndarray::Array2<f64>> = if side == cfg.data_low_size {
        (0..CONTEXT_FRAMES).map(|k| seq.frame_f64(k)).collect()
    } else if side == cfg.data_high_size {
        let factor = cfg.downsample_factor();
        (0..CONTEXT_FRAMES)
            .map(|k| data::downsample_area(&seq.frame_f64(k), factor))
            .collect::<Result<_, _>>()
            .map_err(data_err)?
    } else {
        return Err(CliError::Data(format!(
            "context frames are {side}x{side}; expected {} (low) or {} (high)",
            cfg.data_low_size, cfg.data_high_size
        )));
    };
    let mut context = Array4::zeros((CONTEXT_FRAMES, 1, cfg.data_low_size, cfg.data_low_size));
    for (k, frame) in low_frames.iter().enumerate() {
        for ((i, j), &v) in frame.indexed_iter() {
            context[[k, 0, i, j]] = spec.normalize_value(v).map_err(data_err)?;
        }
    }
    // keep only the four context frames for the artifact copy
    let used = seq
        .frames()
        .slice(ndarray::s![0..CONTEXT_FRAMES, .., ..])
        .to_owned();
    let used = RadarSequence::new(used, seq.start_time()).map_err(data_err)?;
    Ok((context, used))
}

/// Run the two-stage forecast: low-resolution ensemble from the predictor,
/// then per-frame super-resolution in the configured mode.
pub fn cmd_forecast(
    cfg: &RunConfig,
    models: &Path,
    context_path: &Path,
    out: &Path,
    members: Option<usize>,
    seed: Option<u64>,
) -> Result<(), CliError> {
    let members = members.unwrap_or(cfg.eval_members);
    let seed = seed.unwrap_or(cfg.train_seed);
    if members == 0 {
        return Err(CliError::Usage("members must be at least 1".into()));
    }
    ensure_out(out)?;
    let (context, context_seq) = load_context(context_path, cfg)?;

    let predictor_path = ckpt_path(models, Stage::Predictor);
    if !predictor_path.exists() {
        return Err(CliError::Missing(format!(
            "predictor checkpoint {}",
            predictor_path.display()
        )));
    }
    let predictor = stages::load_predictor(&predictor_path, &cfg.predictor_config())
        .map_err(data_err)?
        .ema_model();

    let mut rng = derive(seed, &[stream::FORECAST]);
    let ensemble = predictor.forecast(&context, members, &mut rng).map_err(data_err)?;

    let spec = cfg.normalization();
    let start_time = context_seq.start_time() + CONTEXT_FRAMES as u64 * 300;

    // low-resolution members in mm/h
    for m in 0..members {
        let frames = ensemble.index_axis(Axis(0), m); // (16, 1, h, w)
        let mut rates = ndarray::Array3::<f32>::zeros((
            TARGET_FRAMES,
            cfg.data_low_size,
            cfg.data_low_size,
        ));
        for f in 0..TARGET_FRAMES {
            for i in 0..cfg.data_low_size {
                for j in 0..cfg.data_low_size {
                    rates[[f, i, j]] = spec.denormalize_value(frames[[f, 0, i, j]]) as f32;
                }
            }
        }
        let seq = RadarSequence::new(rates, start_time).map_err(data_err)?;
        save_sequence(&seq, out.join(format!("member_{m:02}_low.trdm"))).map_err(data_err)?;
    }

    // second stage
    enum Sr {
        Spatial(nowcast::sr::spatial::SpatialSr),
        Latent(nowcast::sr::latent::LatentSrPipeline),
    }
    let sr = match cfg.reconstruct_mode {
        ReconstructMode::Ssr => {
            let p = ckpt_path(models, Stage::Ssr);
            if !p.exists() {
                return Err(CliError::Missing(format!("ssr checkpoint {}", p.display())));
            }
            Sr::Spatial(stages::load_ssr(&p, &cfg.ssr_config()).map_err(data_err)?.ema_model())
        }
        ReconstructMode::Lsr => {
            let p = ckpt_path(models, Stage::Lsr);
            if !p.exists() {
                return Err(CliError::Missing(format!("lsr checkpoint {}", p.display())));
            }
            Sr::Latent(
                stages::load_lsr(
                    &p,
                    &LsrBundleConfig { lsr: cfg.lsr_config(), ae: cfg.ae_config() },
                )
                .map_err(data_err)?
                .ema_pipeline(),
            )
        }
    };

    let render_dir = out.join("render");
    ensure_out(&render_dir)?;
    for m in 0..members {
        let frames = ensemble.index_axis(Axis(0), m);
        let mut rates = ndarray::Array3::<f32>::zeros((
            TARGET_FRAMES,
            cfg.data_high_size,
            cfg.data_high_size,
        ));
        for f in 0..TARGET_FRAMES {
            let mut low = Array3::zeros((1, cfg.data_low_size, cfg.data_low_size));
            for i in 0..cfg.data_low_size {
                for j in 0..cfg.data_low_size {
                    low[[0, i, j]] = frames[[f, 0, i, j]];
                }
            }
            let mut frame_rng = derive(seed, &[stream::FORECAST, 1 + m as u64, f as u64]);
            let high = match &sr {
                Sr::Spatial(model) => {
                    model.super_resolve(&low, &mut frame_rng).map_err(data_err)?
                }
                Sr::Latent(pipeline) => {
                    pipeline.super_resolve_latent(&low, &mut frame_rng).map_err(data_err)?
                }
            };
            for i in 0..cfg.data_high_size {
                for j in 0..cfg.data_high_size {
                    rates[[f, i, j]] = spec.denormalize_value(high[[0, i, j]]) as f32;
                }
            }
            write_pgm(
                &render_dir.join(format!("m{m:02}_f{f:02}.pgm")),
                &rates.index_axis(Axis(0), f).mapv(f64::from),
            )?;
        }
        let seq = RadarSequence::new(rates, start_time).map_err(data_err)?;
        save_sequence(&seq, out.join(format!("member_{m:02}_high.trdm"))).map_err(data_err)?;
    }

    save_sequence(&context_seq, out.join("context.trdm")).map_err(data_err)?;
    write_resolved(cfg, out)?;
    println!(
        "wrote {members} member(s): low {0}x{0}, high {1}x{1} ({2})",
        cfg.data_low_size,
        cfg.data_high_size,
        cfg.reconstruct_mode.as_str()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

/// Score a forecast directory against a 16-frame truth file, alongside the
/// persistence baseline built from the stored context.
pub fn cmd_evaluate(
    cfg: &RunConfig,
    forecast_dir: &Path,
    truth_path: &Path,
    out: &Path,
) -> Result<(MetricTable, MetricTable), CliError> {
    if !truth_path.exists() {
        return Err(CliError::Missing(format!("truth file {}", truth_path.display())));
    }
    ensure_out(out)?;
    let truth_seq = load_sequence(truth_path).map_err(data_err)?;
    if truth_seq.frame_count() != TARGET_FRAMES {
        return Err(CliError::Data(format!(
            "truth file holds {} frames, expected exactly {TARGET_FRAMES}",
            truth_seq.frame_count()
        )));
    }
    let (h, w) = (truth_seq.frames().shape()[1], truth_seq.frames().shape()[2]);
    let mut truth = ndarray::Array3::zeros((TARGET_FRAMES, h, w));
    for f in 0..TARGET_FRAMES {
        truth.index_axis_mut(Axis(0), f).assign(&truth_seq.frame_f64(f));
    }

    // gather member files whose geometry matches the truth
    let mut names: Vec<String> = fs::read_dir(forecast_dir)
        .map_err(|e| CliError::Missing(format!("forecast dir {}: {e}", forecast_dir.display())))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with("member_") && n.ends_with(".trdm"))
        .collect();
    names.sort();
    let mut members = Vec::new();
    for name in &names {
        let seq = load_sequence(forecast_dir.join(name)).map_err(data_err)?;
        let s = seq.frames().shape();
        if s[0] == TARGET_FRAMES && s[1] == h && s[2] == w {
            let mut arr = ndarray::Array3::zeros((TARGET_FRAMES, h, w));
            for f in 0..TARGET_FRAMES {
                arr.index_axis_mut(Axis(0), f).assign(&seq.frame_f64(f));
            }
            members.push(arr);
        }
    }
    if members.is_empty() {
        return Err(CliError::Data(format!(
            "no member_*.trdm in {} matches the truth geometry {h}x{w}",
            forecast_dir.display()
        )));
    }
    let mut ensemble = ndarray::Array4::zeros((members.len(), TARGET_FRAMES, h, w));
    for (m, arr) in members.iter().enumerate() {
        ensemble.index_axis_mut(Axis(0), m).assign(arr);
    }

    // persistence baseline from the stored context
    let context_path = forecast_dir.join("context.trdm");
    if !context_path.exists() {
        return Err(CliError::Missing(format!("context file {}", context_path.display())));
    }
    let context_seq = load_sequence(&context_path).map_err(data_err)?;
    let cside = context_seq.frames().shape()[1];
    let mut context = ndarray::Array3::zeros((CONTEXT_FRAMES, h, w));
    for f in 0..CONTEXT_FRAMES {
        let frame = context_seq.frame_f64(f);
        let frame = if cside == h {
            frame
        } else if cside % h == 0 {
            data::downsample_area(&frame, cside / h).map_err(data_err)?
        } else {
            return Err(CliError::Data(format!(
                "context geometry {cside}x{cside} incompatible with truth {h}x{w}"
            )));
        };
        context.index_axis_mut(Axis(0), f).assign(&frame);
    }
    let persistence = persistence_forecast(context.view());
    let persistence_ens = persistence.insert_axis(Axis(0));

    let vc = cfg.verify_config();
    let model_table = lead_time_table(ensemble.view(), truth.view(), &vc).map_err(data_err)?;
    let persistence_table =
        lead_time_table(persistence_ens.view(), truth.view(), &vc).map_err(data_err)?;

    fs::write(out.join("metrics.csv"), model_table.to_csv()).map_err(data_err)?;
    fs::write(out.join("persistence_metrics.csv"), persistence_table.to_csv())
        .map_err(data_err)?;
    write_resolved(cfg, out)?;

    println!("model ({} members):\n{}", members.len(), model_table.to_csv());
    println!("persistence:\n{}", persistence_table.to_csv());
    Ok((model_table, persistence_table))
}

// ---------------------------------------------------------------------------
// render
// ---------------------------------------------------------------------------

/// Rain-rate raster as an 8-bit binary PGM with a log1p gray ramp saturating
/// at 128 mm/h.
pub fn write_pgm(path: &Path, frame: &ndarray::Array2<f64>) -> Result<(), CliError> {
    let (h, w) = frame.dim();
    let mut bytes = Vec::with_capacity(32 + h * w);
    bytes.extend_from_slice(format!("P5\n{w} {h}\n255\n").as_bytes());
    let denom = 128f64.ln_1p();
    for &v in frame.iter() {
        let px = (255.0 * v.clamp(0.0, 128.0).ln_1p() / denom).round() as u8;
        bytes.push(px);
    }
    fs::write(path, bytes).map_err(data_err)
}

/// Render every frame of a sequence file to a PGM raster.
pub fn cmd_render(input: &Path, out: &Path) -> Result<usize, CliError> {
    if !input.exists() {
        return Err(CliError::Missing(format!("sequence file {}", input.display())));
    }
    let seq = load_sequence(input).map_err(data_err)?;
    ensure_out(out)?;
    for f in 0..seq.frame_count() {
        write_pgm(&out.join(format!("frame_{f:03}.pgm")), &seq.frame_f64(f))?;
    }
    println!("rendered {} frame(s) to {}", seq.frame_count(), out.display());
    Ok(seq.frame_count())
}
