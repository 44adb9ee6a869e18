//! Checkpoint container for trainable stages.
//!
//! A checkpoint round-trips everything a training run needs to resume:
//! parameters, optimizer moments, the weight EMA, the stage configuration,
//! the schedule, the RNG seed and the global step counter. Loading verifies
//! the stored configuration against the caller's expectation and refuses
//! mismatches.
//!
//! Layout: magic `NWCK`, format version, a JSON header describing sections
//! and shapes, then raw little-endian `f64` payloads in header order.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{ArrayD, IxDyn};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{Adam, AdamConfig, Ema, ParamSet};

pub const MAGIC: [u8; 4] = *b"NWCK";
pub const VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad checkpoint magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u16),
    #[error("truncated checkpoint")]
    Truncated,
    #[error("malformed header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("stage mismatch: checkpoint holds '{found}', expected '{expected}'")]
    StageMismatch { found: String, expected: String },
    #[error("configuration mismatch: checkpoint was written with a different {0} config")]
    ConfigMismatch(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// One named parameter set plus its optional training state.
#[derive(Debug, Clone)]
pub struct Section {
    pub name: String,
    pub params: ParamSet,
    pub adam: Option<Adam>,
    pub ema: Option<Ema>,
}

impl Section {
    pub fn inference(name: impl Into<String>, params: ParamSet) -> Self {
        Self { name: name.into(), params, adam: None, ema: None }
    }
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub stage: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub step: u64,
    /// Small numeric extras such as latent standardization statistics.
    pub extra: BTreeMap<String, Vec<f64>>,
    pub sections: Vec<Section>,
}

#[derive(Serialize, Deserialize)]
struct ParamMeta {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct AdamMeta {
    config: AdamConfig,
    step: u64,
}

#[derive(Serialize, Deserialize)]
struct SectionMeta {
    name: String,
    params: Vec<ParamMeta>,
    adam: Option<AdamMeta>,
    ema_decay: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    stage: String,
    config: serde_json::Value,
    seed: u64,
    step: u64,
    extra: BTreeMap<String, Vec<f64>>,
    sections: Vec<SectionMeta>,
}

impl Checkpoint {
    pub fn new(stage: impl Into<String>, config: impl Serialize, seed: u64, step: u64) -> Self {
        Self {
            stage: stage.into(),
            config: serde_json::to_value(config).expect("config serializes"),
            seed,
            step,
            extra: BTreeMap::new(),
            sections: Vec::new(),
        }
    }

    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }

    pub fn take_section(&mut self, name: &str) -> Option<Section> {
        let idx = self.sections.iter().position(|s| s.name == name)?;
        Some(self.sections.remove(idx))
    }

    /// Deserialize the stored config, refusing when it differs from
    /// `expected`.
    pub fn config_checked<T>(&self, expected: &T) -> Result<T, CheckpointError>
    where
        T: Serialize + DeserializeOwned + PartialEq,
    {
        let stored: T = serde_json::from_value(self.config.clone())
            .map_err(|_| CheckpointError::ConfigMismatch(self.stage.clone()))?;
        if &stored != expected {
            return Err(CheckpointError::ConfigMismatch(self.stage.clone()));
        }
        Ok(stored)
    }

    pub fn expect_stage(&self, stage: &str) -> Result<(), CheckpointError> {
        if self.stage != stage {
            return Err(CheckpointError::StageMismatch {
                found: self.stage.clone(),
                expected: stage.to_string(),
            });
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        let mut w = BufWriter::new(File::create(path)?);
        let header = Header {
            stage: self.stage.clone(),
            config: self.config.clone(),
            seed: self.seed,
            step: self.step,
            extra: self.extra.clone(),
            sections: self
                .sections
                .iter()
                .map(|s| SectionMeta {
                    name: s.name.clone(),
                    params: s
                        .params
                        .iter()
                        .map(|p| ParamMeta { name: p.name.clone(), shape: p.value.shape().to_vec() })
                        .collect(),
                    adam: s
                        .adam
                        .as_ref()
                        .map(|a| AdamMeta { config: a.config, step: a.step }),
                    ema_decay: s.ema.as_ref().map(|e| e.decay),
                })
                .collect(),
        };
        let header_bytes = serde_json::to_vec(&header)?;
        w.write_all(&MAGIC)?;
        w.write_u16::<LittleEndian>(VERSION)?;
        w.write_u16::<LittleEndian>(0)?;
        w.write_u64::<LittleEndian>(header_bytes.len() as u64)?;
        w.write_all(&header_bytes)?;
        for s in &self.sections {
            for p in s.params.iter() {
                write_array(&mut w, &p.value)?;
            }
            if let Some(a) = &s.adam {
                for m in &a.m {
                    write_array(&mut w, m)?;
                }
                for v in &a.v {
                    write_array(&mut w, v)?;
                }
            }
            if let Some(e) = &s.ema {
                for v in &e.values {
                    write_array(&mut w, v)?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(eof)?;
        if magic != MAGIC {
            return Err(CheckpointError::BadMagic(magic));
        }
        let version = r.read_u16::<LittleEndian>().map_err(eof)?;
        if version != VERSION {
            return Err(CheckpointError::BadVersion(version));
        }
        let _reserved = r.read_u16::<LittleEndian>().map_err(eof)?;
        let header_len = r.read_u64::<LittleEndian>().map_err(eof)? as usize;
        let mut header_bytes = vec![0u8; header_len];
        r.read_exact(&mut header_bytes).map_err(eof)?;
        let header: Header = serde_json::from_slice(&header_bytes)?;

        let mut sections = Vec::with_capacity(header.sections.len());
        for meta in &header.sections {
            let mut params = ParamSet::default();
            for pm in &meta.params {
                params.push(pm.name.clone(), read_array(&mut r, &pm.shape)?);
            }
            let adam = match &meta.adam {
                Some(am) => {
                    let mut adam = Adam::new(&params, am.config);
                    adam.step = am.step;
                    for m in adam.m.iter_mut() {
                        *m = read_array(&mut r, m.shape())?;
                    }
                    for v in adam.v.iter_mut() {
                        *v = read_array(&mut r, v.shape())?;
                    }
                    Some(adam)
                }
                None => None,
            };
            let ema = match meta.ema_decay {
                Some(decay) => {
                    let mut ema = Ema::new(&params, decay);
                    for v in ema.values.iter_mut() {
                        *v = read_array(&mut r, v.shape())?;
                    }
                    Some(ema)
                }
                None => None,
            };
            sections.push(Section { name: meta.name.clone(), params, adam, ema });
        }
        Ok(Self {
            stage: header.stage,
            config: header.config,
            seed: header.seed,
            step: header.step,
            extra: header.extra,
            sections,
        })
    }
}

fn write_array(w: &mut impl Write, arr: &ArrayD<f64>) -> Result<(), CheckpointError> {
    for &v in arr.iter() {
        w.write_f64::<LittleEndian>(v)?;
    }
    Ok(())
}

fn read_array(r: &mut impl Read, shape: &[usize]) -> Result<ArrayD<f64>, CheckpointError> {
    let n: usize = shape.iter().product();
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        values.push(r.read_f64::<LittleEndian>().map_err(eof)?);
    }
    Ok(ArrayD::from_shape_vec(IxDyn(shape), values).expect("shape matches"))
}

fn eof(e: std::io::Error) -> CheckpointError {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        CheckpointError::Truncated
    } else {
        CheckpointError::Io(e)
    }
}

/// Save/load helpers for the concrete training stages.
pub mod stages {
    use super::*;
    use crate::predictor::{PredictorConfig, PredictorError, PredictorTrainState, SequencePredictor};
    use crate::sr::latent::{
        AeConfig, AeTrainState, Autoencoder, LatentSr, LatentSrPipeline, LatentStats, LsrConfig,
        LsrTrainState,
    };
    use crate::sr::spatial::{SpatialSr, SsrConfig, SsrTrainState};
    use crate::sr::SrError;

    pub const STAGE_PREDICTOR: &str = "predictor";
    pub const STAGE_SSR: &str = "ssr";
    pub const STAGE_AUTOENCODER: &str = "autoencoder";
    pub const STAGE_LSR: &str = "lsr";

    #[derive(Debug, Error)]
    pub enum StageIoError {
        #[error(transparent)]
        Checkpoint(#[from] CheckpointError),
        #[error(transparent)]
        Predictor(#[from] PredictorError),
        #[error(transparent)]
        Sr(#[from] SrError),
        #[error("checkpoint layout mismatch: {0}")]
        Layout(String),
    }

    fn checked(template: &ParamSet, stored: ParamSet) -> Result<ParamSet, StageIoError> {
        if template.len() != stored.len() {
            return Err(StageIoError::Layout(format!(
                "expected {} parameters, found {}",
                template.len(),
                stored.len()
            )));
        }
        for (a, b) in template.iter().zip(stored.iter()) {
            if a.name != b.name || a.value.shape() != b.value.shape() {
                return Err(StageIoError::Layout(format!(
                    "parameter '{}' {:?} does not match stored '{}' {:?}",
                    a.name,
                    a.value.shape(),
                    b.name,
                    b.value.shape()
                )));
            }
        }
        Ok(stored)
    }

    fn trained_section(ckpt: &mut Checkpoint, name: &str) -> Result<(ParamSet, Adam, Ema), StageIoError> {
        let section = ckpt
            .take_section(name)
            .ok_or_else(|| StageIoError::Layout(format!("missing section '{name}'")))?;
        let adam = section
            .adam
            .ok_or_else(|| StageIoError::Layout(format!("section '{name}' lacks optimizer state")))?;
        let ema = section
            .ema
            .ok_or_else(|| StageIoError::Layout(format!("section '{name}' lacks EMA state")))?;
        Ok((section.params, adam, ema))
    }

    pub fn save_predictor(
        state: &PredictorTrainState,
        path: impl AsRef<std::path::Path>,
    ) -> Result<(), StageIoError> {
        let mut ckpt =
            Checkpoint::new(STAGE_PREDICTOR, &state.model.config, state.seed, state.step);
        ckpt.sections.push(Section {
            name: "model".into(),
            params: state.model.params.clone(),
            adam: Some(state.opt.clone()),
            ema: Some(state.ema.clone()),
        });
        ckpt.save(path)?;
        Ok(())
    }

    pub fn load_predictor(
        path: impl AsRef<std::path::Path>,
        expected: &PredictorConfig,
    ) -> Result<PredictorTrainState, StageIoError> {
        let mut ckpt = Checkpoint::load(path)?;
        ckpt.expect_stage(STAGE_PREDICTOR)?;
        let config: PredictorConfig = ckpt.config_checked(expected)?;
        let mut model = SequencePredictor::init(&config, ckpt.seed)?;
        let (params, opt, ema) = trained_section(&mut ckpt, "model")?;
        model.params = checked(&model.params, params)?;
        Ok(PredictorTrainState { model, opt, ema, seed: ckpt.seed, step: ckpt.step })
    }

    pub fn save_ssr(
        state: &SsrTrainState,
        path: impl AsRef<std::path::Path>,
    ) -> Result<(), StageIoError> {
        let mut ckpt = Checkpoint::new(STAGE_SSR, &state.model.config, state.seed, state.step);
        ckpt.sections.push(Section {
            name: "model".into(),
            params: state.model.params.clone(),
            adam: Some(state.opt.clone()),
            ema: Some(state.ema.clone()),
        });
        ckpt.save(path)?;
        Ok(())
    }

    pub fn load_ssr(
        path: impl AsRef<std::path::Path>,
        expected: &SsrConfig,
    ) -> Result<SsrTrainState, StageIoError> {
        let mut ckpt = Checkpoint::load(path)?;
        ckpt.expect_stage(STAGE_SSR)?;
        let config: SsrConfig = ckpt.config_checked(expected)?;
        let mut model = SpatialSr::init(&config, ckpt.seed)?;
        let (params, opt, ema) = trained_section(&mut ckpt, "model")?;
        model.params = checked(&model.params, params)?;
        Ok(SsrTrainState { model, opt, ema, seed: ckpt.seed, step: ckpt.step })
    }

    pub fn save_autoencoder(
        state: &AeTrainState,
        path: impl AsRef<std::path::Path>,
    ) -> Result<(), StageIoError> {
        let mut ckpt =
            Checkpoint::new(STAGE_AUTOENCODER, &state.model.config, state.seed, state.step);
        ckpt.sections.push(Section {
            name: "model".into(),
            params: state.model.params.clone(),
            adam: Some(state.opt.clone()),
            ema: Some(state.ema.clone()),
        });
        ckpt.save(path)?;
        Ok(())
    }

    pub fn load_autoencoder(
        path: impl AsRef<std::path::Path>,
        expected: &AeConfig,
    ) -> Result<AeTrainState, StageIoError> {
        let mut ckpt = Checkpoint::load(path)?;
        ckpt.expect_stage(STAGE_AUTOENCODER)?;
        let config: AeConfig = ckpt.config_checked(expected)?;
        let mut model = Autoencoder::init(&config, ckpt.seed)?;
        let (params, opt, ema) = trained_section(&mut ckpt, "model")?;
        model.params = checked(&model.params, params)?;
        Ok(AeTrainState { model, opt, ema, seed: ckpt.seed, step: ckpt.step })
    }

    /// The latent stage bundles the frozen autoencoder with the diffusion
    /// model so inference needs exactly one file.
    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct LsrBundleConfig {
        pub lsr: LsrConfig,
        pub ae: AeConfig,
    }

    pub fn save_lsr(
        state: &LsrTrainState,
        path: impl AsRef<std::path::Path>,
    ) -> Result<(), StageIoError> {
        let bundle = LsrBundleConfig {
            lsr: state.pipeline.lsr.config.clone(),
            ae: state.pipeline.ae.config.clone(),
        };
        let mut ckpt = Checkpoint::new(STAGE_LSR, &bundle, state.seed, state.step);
        let (mean, std) = state.pipeline.stats.to_vecs();
        ckpt.extra.insert("latent_mean".into(), mean);
        ckpt.extra.insert("latent_std".into(), std);
        ckpt.sections
            .push(Section::inference("autoencoder", state.pipeline.ae.params.clone()));
        ckpt.sections.push(Section {
            name: "model".into(),
            params: state.pipeline.lsr.params.clone(),
            adam: Some(state.opt.clone()),
            ema: Some(state.ema.clone()),
        });
        ckpt.save(path)?;
        Ok(())
    }

    pub fn load_lsr(
        path: impl AsRef<std::path::Path>,
        expected: &LsrBundleConfig,
    ) -> Result<LsrTrainState, StageIoError> {
        let mut ckpt = Checkpoint::load(path)?;
        ckpt.expect_stage(STAGE_LSR)?;
        let bundle: LsrBundleConfig = ckpt.config_checked(expected)?;
        let mean = ckpt
            .extra
            .get("latent_mean")
            .ok_or_else(|| StageIoError::Layout("missing latent_mean".into()))?
            .clone();
        let std = ckpt
            .extra
            .get("latent_std")
            .ok_or_else(|| StageIoError::Layout("missing latent_std".into()))?
            .clone();
        if mean.len() != 4 || std.len() != 4 {
            return Err(StageIoError::Layout("latent statistics must have 4 channels".into()));
        }
        let stats = LatentStats::from_vecs(&mean, &std);

        let ae_section = ckpt
            .take_section("autoencoder")
            .ok_or_else(|| StageIoError::Layout("missing section 'autoencoder'".into()))?;
        let mut ae = Autoencoder::init(&bundle.ae, ckpt.seed)?;
        ae.params = checked(&ae.params, ae_section.params)?;

        let mut lsr = LatentSr::init(&bundle.lsr, ckpt.seed)?;
        let (params, opt, ema) = trained_section(&mut ckpt, "model")?;
        lsr.params = checked(&lsr.params, params)?;

        Ok(LsrTrainState {
            pipeline: LatentSrPipeline { ae, lsr, stats },
            opt,
            ema,
            seed: ckpt.seed,
            step: ckpt.step,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    struct DemoConfig {
        width: usize,
        rate: f64,
    }

    fn demo_params(seed: u64) -> ParamSet {
        let mut pb = crate::nn::ParamBuilder::new(ChaCha8Rng::seed_from_u64(seed));
        pb.normal("w1", &[3, 4], 1.0);
        pb.normal("w2", &[5], 0.5);
        pb.build()
    }

    #[test]
    fn round_trip_preserves_everything_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("demo.ckpt");
        let params = demo_params(1);
        let mut adam = Adam::new(&params, AdamConfig::default());
        adam.step = 17;
        adam.m[0][[1, 2]] = 0.25;
        adam.v[1][[3]] = 0.125;
        let mut ema = Ema::new(&params, 0.99);
        ema.values[0][[0, 0]] = -2.5;

        let cfg = DemoConfig { width: 8, rate: 0.1 };
        let mut ckpt = Checkpoint::new("demo", &cfg, 7, 42);
        ckpt.extra.insert("stats".into(), vec![1.0, -0.5]);
        ckpt.sections.push(Section {
            name: "net".into(),
            params: params.clone(),
            adam: Some(adam.clone()),
            ema: Some(ema.clone()),
        });
        ckpt.save(&path).unwrap();

        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded.stage, "demo");
        assert_eq!(loaded.seed, 7);
        assert_eq!(loaded.step, 42);
        assert_eq!(loaded.extra["stats"], vec![1.0, -0.5]);
        let sec = loaded.section("net").unwrap();
        assert_eq!(sec.params, params);
        let la = sec.adam.as_ref().unwrap();
        assert_eq!(la.step, 17);
        assert_eq!(la.m, adam.m);
        assert_eq!(la.v, adam.v);
        assert_eq!(sec.ema.as_ref().unwrap().values, ema.values);
        // typed config check succeeds on the matching config
        loaded.config_checked(&cfg).unwrap();
    }

    #[test]
    fn refuses_config_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("demo.ckpt");
        let cfg = DemoConfig { width: 8, rate: 0.1 };
        let mut ckpt = Checkpoint::new("demo", &cfg, 0, 0);
        ckpt.sections.push(Section::inference("net", demo_params(2)));
        ckpt.save(&path).unwrap();

        let loaded = Checkpoint::load(&path).unwrap();
        let other = DemoConfig { width: 16, rate: 0.1 };
        assert!(matches!(
            loaded.config_checked(&other),
            Err(CheckpointError::ConfigMismatch(_))
        ));
        assert!(loaded.expect_stage("other").is_err());
    }

    #[test]
    fn rejects_corrupt_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("demo.ckpt");
        let mut ckpt = Checkpoint::new("demo", serde_json::json!({}), 0, 0);
        ckpt.sections.push(Section::inference("net", demo_params(3)));
        ckpt.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        std::fs::write(&path, &bad_magic).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(CheckpointError::BadMagic(_))));

        let truncated = &bytes[..bytes.len() - 9];
        std::fs::write(&path, truncated).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(CheckpointError::Truncated)));
    }
}
