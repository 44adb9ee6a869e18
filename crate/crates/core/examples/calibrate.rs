//! Timing and skill calibration for the CPU training profiles.
//!
//! Run with, for example:
//! `cargo run --release -p nowcast --example calibrate -- e2e 96 400 16`

use std::time::Instant;

use ndarray::{Array3, Array4, Axis};
use nowcast::config::RunConfig;
use nowcast::data::{self, make_windows, RadarSequence, SequenceSample, CONTEXT_FRAMES};
use nowcast::metrics::{crps_ensemble, persistence_forecast};
use nowcast::predictor::PredictorTrainState;
use nowcast::rng::{derive, stream};
use rand::Rng;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mode = args.get(1).map(String::as_str).unwrap_or("e2e");
    match mode {
        "e2e" => {
            let train_n: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(96);
            let steps: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(200);
            let held: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(8);
            e2e(train_n, steps, held);
        }
        "sr" => {
            let sr_steps: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(300);
            let ae_steps: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(300);
            let held: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(8);
            sr(sr_steps, ae_steps, held);
        }
        other => {
            eprintln!("unknown mode {other}");
            std::process::exit(2);
        }
    }
}

fn profile() -> RunConfig {
    RunConfig::parse_str(
        "synth.height=48\nsynth.width=48\ndata.high_size=48\ndata.low_size=12\n\
         synth.cell_width_min=4\nsynth.cell_width_max=10\nsynth.peak_min=4\n\
         schedule.steps=32\nschedule.beta_start=0.001\nschedule.beta_end=0.33\n\
         predictor.base_channels=12\npredictor.channel_multipliers=1,2\n\
         predictor.attention=0,1\npredictor.res_blocks=1\npredictor.embed_dim=32\n\
         predictor.encoder_channels=6\npredictor.heads=4\n\
         train.batch=3\ntrain.lr=0.0007\ntrain.ema=0.99\ntrain.seed=11\n",
    )
    .expect("profile parses")
}

fn low_samples(cfg: &RunConfig, seqs: &[RadarSequence]) -> Vec<SequenceSample> {
    let spec = cfg.normalization();
    let mut out = Vec::new();
    for seq in seqs {
        let low = data::downsample_sequence(seq, cfg.downsample_factor()).unwrap();
        let low_seq = RadarSequence::new(low.mapv(|v| v as f32), seq.start_time()).unwrap();
        out.extend(make_windows(&low_seq, cfg.data_window_stride, &spec));
    }
    out
}

fn e2e(train_n: usize, steps: usize, held: usize) {
    let cfg = profile();
    let synth_cfg = cfg.synth_config();
    println!("synth config: {synth_cfg:?}");
    let t0 = Instant::now();
    let train_seqs = data::synth_advection_dataset(1, train_n, &synth_cfg);
    let held_seqs = data::synth_advection_dataset(2, held, &synth_cfg);
    println!("synth {train_n}+{held}: {:?}", t0.elapsed());

    let samples = low_samples(&cfg, &train_seqs);
    println!("{} training samples", samples.len());

    let mut state = PredictorTrainState::new(
        &cfg.predictor_config(),
        cfg.adam_config(),
        cfg.train_ema,
        cfg.train_seed,
    )
    .unwrap();

    let t0 = Instant::now();
    let mut first = f64::NAN;
    let mut loss_acc = 0.0;
    for k in 0..steps {
        let mut rng = state.step_rng();
        let batch: Vec<SequenceSample> = (0..cfg.train_batch)
            .map(|_| samples[rng.random_range(0..samples.len())].clone())
            .collect();
        let loss = state.train_step(&batch, &mut rng).unwrap();
        if k == 0 {
            first = loss;
            println!("first step: {:?} loss {loss:.4}", t0.elapsed());
        }
        loss_acc += loss;
        if (k + 1) % 50 == 0 {
            println!(
                "step {:>5}: mean loss {:.4}, elapsed {:?}",
                k + 1,
                loss_acc / 50.0,
                t0.elapsed()
            );
            loss_acc = 0.0;
        }
    }
    println!("train {steps} steps: {:?} (first loss {first:.4})", t0.elapsed());

    // evaluation vs persistence at leads 40/60/80 (frames 8, 12, 16)
    let spec = cfg.normalization();
    let model = state.ema_model();
    let t0 = Instant::now();
    let mut crps_model = [0.0f64; 3];
    let mut crps_persist = [0.0f64; 3];
    let mut targets: Vec<Array3<f64>> = Vec::new();
    let mut means: Vec<Array3<f64>> = Vec::new();
    let members = 4;
    for (si, seq) in held_seqs.iter().enumerate() {
        let low = data::downsample_sequence(seq, cfg.downsample_factor()).unwrap();
        let sample = {
            let low_seq = RadarSequence::new(low.mapv(|v| v as f32), seq.start_time()).unwrap();
            make_windows(&low_seq, 20, &spec).remove(0)
        };
        let mut rng = derive(1000 + si as u64, &[stream::FORECAST]);
        let ens = model.forecast(&sample.context, members, &mut rng).unwrap();
        // denormalize members and observations
        let (h, w) = (cfg.data_low_size, cfg.data_low_size);
        let mut obs = Array3::zeros((16, h, w));
        for f in 0..16 {
            for i in 0..h {
                for j in 0..w {
                    obs[[f, i, j]] = low[[CONTEXT_FRAMES + f, i, j]];
                }
            }
        }
        let mut rates = Array4::zeros((members, 16, h, w));
        for m in 0..members {
            for f in 0..16 {
                for i in 0..h {
                    for j in 0..w {
                        rates[[m, f, i, j]] = spec.denormalize_value(ens[[m, f, 0, i, j]]);
                    }
                }
            }
        }
        let mut ctx = Array3::zeros((CONTEXT_FRAMES, h, w));
        for f in 0..CONTEXT_FRAMES {
            for i in 0..h {
                for j in 0..w {
                    ctx[[f, i, j]] = low[[f, i, j]];
                }
            }
        }
        let persist = persistence_forecast(ctx.view());
        means.push(rates.mean_axis(Axis(0)).unwrap());
        targets.push(obs.clone());
        for (k, frame) in [7usize, 11, 15].iter().enumerate() {
            let mf = rates.slice(ndarray::s![.., *frame, .., ..]);
            crps_model[k] += crps_ensemble(mf.view(), obs.index_axis(Axis(0), *frame)).unwrap();
            crps_persist[k] += crps_ensemble(
                persist.index_axis(Axis(0), *frame).insert_axis(Axis(0)).view(),
                obs.index_axis(Axis(0), *frame),
            )
            .unwrap();
        }
    }
    println!("eval {held} seqs x {members} members: {:?}", t0.elapsed());
    for (k, lead) in [40, 60, 80].iter().enumerate() {
        println!(
            "lead {lead}: model {:.4}  persistence {:.4}",
            crps_model[k] / held as f64,
            crps_persist[k] / held as f64
        );
    }
    let n = targets.len();
    let mut own = 0.0;
    let mut other = 0.0;
    for i in 0..n {
        own += (&means[i] - &targets[i]).mapv(|d| d * d).mean().unwrap();
        other += (&means[i] - &targets[(i + 1) % n]).mapv(|d| d * d).mean().unwrap();
    }
    println!("ensemble-mean MSE: own target {:.4}, shuffled target {:.4}", own / n as f64, other / n as f64);
    let obs_mean: f64 = targets.iter().map(|t| t.mean().unwrap()).sum::<f64>() / n as f64;
    let fc_mean: f64 = means.iter().map(|t| t.mean().unwrap()).sum::<f64>() / n as f64;
    println!("mean rain: obs {obs_mean:.3} mm/h, forecast {fc_mean:.3} mm/h");
}


fn sr_profile() -> RunConfig {
    RunConfig::parse_str(
        "synth.height=48\nsynth.width=48\ndata.high_size=48\ndata.low_size=6\n\
         synth.cell_width_min=3\nsynth.cell_width_max=7\nsynth.peak_min=8\n\
         schedule.steps=32\nschedule.beta_start=0.001\nschedule.beta_end=0.33\n\
         ssr.base_channels=12\nssr.channel_multipliers=1,2\nssr.attention=0,1\n\
         ssr.res_blocks=1\nssr.heads=4\n\
         ae.base_channels=12\nae.channel_multipliers=1,1,2\nae.res_blocks=1\n\
         lsr.base_channels=16\nlsr.channel_multipliers=1,2\nlsr.attention=0,1\n\
         lsr.res_blocks=1\nlsr.heads=4\n\
         embed.patch=2\nembed.dim=32\nembed.layers=2\nembed.heads=4\n\
         train.batch=4\ntrain.lr=0.001\ntrain.ema=0.99\ntrain.seed=21\n",
    )
    .expect("profile parses")
}

fn sr(sr_steps: usize, ae_steps: usize, held: usize) {
    use nowcast::sr::latent::{fit_latent_stats, AeTrainState, LsrTrainState};
    use nowcast::sr::spatial::SsrTrainState;
    use nowcast::sr::{upscale_bilinear, SrPair};

    let cfg = sr_profile();
    let synth_cfg = cfg.synth_config();
    let spec = cfg.normalization();
    let factor = cfg.downsample_factor();
    let train_seqs = data::synth_advection_dataset(31, 48, &synth_cfg);
    let held_seqs = data::synth_advection_dataset(32, 2, &synth_cfg);
    let train_pairs: Vec<SrPair> = train_seqs
        .iter()
        .flat_map(|seq| {
            (0..seq.frame_count())
                .map(move |f| SrPair::from_rate_frame(&seq.frame_f64(f), factor, &spec).unwrap())
        })
        .collect();
    let held_pairs: Vec<SrPair> = held_seqs
        .iter()
        .flat_map(|seq| {
            (0..seq.frame_count())
                .map(move |f| SrPair::from_rate_frame(&seq.frame_f64(f), factor, &spec).unwrap())
        })
        .take(held)
        .collect();
    println!("{} train pairs, {} held", train_pairs.len(), held_pairs.len());
    let hs = cfg.data_high_size;
    let bilinear_mse: f64 = held_pairs
        .iter()
        .map(|p| {
            let up = upscale_bilinear(&p.low, hs, hs).unwrap();
            (&up - &p.high).mapv(|d| d * d).mean().unwrap()
        })
        .sum::<f64>()
        / held as f64;
    println!("bilinear MSE {bilinear_mse:.5}");

    // SSR
    let t0 = Instant::now();
    let mut ssr =
        SsrTrainState::new(&cfg.ssr_config(), cfg.adam_config(), cfg.train_ema, 1).unwrap();
    for k in 0..sr_steps {
        let mut rng = ssr.step_rng();
        let batch: Vec<SrPair> = (0..cfg.train_batch)
            .map(|_| train_pairs[rng.random_range(0..train_pairs.len())].clone())
            .collect();
        let loss = ssr.train_step(&batch, &mut rng).unwrap();
        if (k + 1) % 100 == 0 {
            println!("ssr step {:>5} loss {loss:.4} elapsed {:?}", k + 1, t0.elapsed());
        }
    }
    println!("ssr train {sr_steps}: {:?}", t0.elapsed());
    let model = ssr.ema_model();
    let t0 = Instant::now();
    let mut mse = 0.0;
    for (k, p) in held_pairs.iter().enumerate() {
        let mut rng = derive(7000 + k as u64, &[stream::SSR]);
        let out = model.super_resolve(&p.low, &mut rng).unwrap();
        mse += (&out - &p.high).mapv(|d| d * d).mean().unwrap();
    }
    println!("ssr MSE {:.5} (sampling {:?})", mse / held as f64, t0.elapsed());

    // AE
    let t0 = Instant::now();
    let mut ae =
        AeTrainState::new(&cfg.ae_config(), cfg.adam_config(), cfg.train_ema, 2).unwrap();
    for k in 0..ae_steps {
        let mut rng = ae.step_rng();
        let batch: Vec<ndarray::Array3<f64>> = (0..cfg.train_batch)
            .map(|_| train_pairs[rng.random_range(0..train_pairs.len())].high.clone())
            .collect();
        let loss = ae.train_step(&batch).unwrap();
        if (k + 1) % 100 == 0 {
            println!("ae step {:>5} loss {loss:.4} elapsed {:?}", k + 1, t0.elapsed());
        }
    }
    let ae_model = ae.ema_model();
    let recon: f64 = held_pairs
        .iter()
        .map(|p| {
            let y = ae_model.decode(&ae_model.encode(&p.high).unwrap()).unwrap();
            (&y - &p.high).mapv(f64::abs).mean().unwrap()
        })
        .sum::<f64>()
        / held as f64;
    println!("ae train {ae_steps}: {:?}, held-out recon L1 {recon:.4}", t0.elapsed());

    // LSR
    let highs: Vec<ndarray::Array3<f64>> =
        train_pairs.iter().take(64).map(|p| p.high.clone()).collect();
    let stats = fit_latent_stats(&ae_model, &highs, 64).unwrap();
    let t0 = Instant::now();
    let mut lsr = LsrTrainState::new(
        &cfg.lsr_config(),
        ae_model,
        stats,
        cfg.adam_config(),
        cfg.train_ema,
        3,
    )
    .unwrap();
    for k in 0..sr_steps {
        let mut rng = lsr.step_rng();
        let batch: Vec<SrPair> = (0..cfg.train_batch)
            .map(|_| train_pairs[rng.random_range(0..train_pairs.len())].clone())
            .collect();
        let loss = lsr.train_step(&batch, &mut rng).unwrap();
        if (k + 1) % 100 == 0 {
            println!("lsr step {:>5} loss {loss:.4} elapsed {:?}", k + 1, t0.elapsed());
        }
    }
    println!("lsr train {sr_steps}: {:?}", t0.elapsed());
    let pipeline = lsr.ema_pipeline();
    let mut mse = 0.0;
    for (k, p) in held_pairs.iter().enumerate() {
        let mut rng = derive(8000 + k as u64, &[stream::LSR]);
        let out = pipeline.super_resolve_latent(&p.low, &mut rng).unwrap();
        mse += (&out - &p.high).mapv(|d| d * d).mean().unwrap();
    }
    println!("lsr MSE {:.5} vs bilinear {bilinear_mse:.5}", mse / held as f64);
}
