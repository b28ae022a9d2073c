//! `--config` TOML file plus flag overrides.

use std::path::Path;

use anyhow::{bail, Context, Result};
use intercnn::data::{PreprocessConfig, SynthConfig, WINDOW_FRAMES};
use intercnn::models::{ModelConfig, ModelKind};
use intercnn::nn::BlockKind;
use intercnn::training::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowConfig {
    pub length: usize,
    pub train_stride: usize,
    pub eval_stride: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            length: WINDOW_FRAMES,
            train_stride: 5,
            eval_stride: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Seeds data synthesis, initialization and shuffling.
    pub seed: u64,
    pub synth: SynthConfig,
    /// Crop boxes; defaults follow the synthetic layout at the model's input size.
    pub preprocess: Option<PreprocessConfig>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub windows: WindowConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            synth: SynthConfig::default(),
            preprocess: None,
            model: ModelConfig::desk(ModelKind::Intercnn, BlockKind::mobilenet()),
            train: TrainConfig {
                lr: 1e-3,
                max_epochs: 12,
                ..TrainConfig::default()
            },
            windows: WindowConfig::default(),
        }
    }
}

/// Values given on the command line; each one overrides the file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub model: Option<ModelKind>,
    pub block: Option<BlockKind>,
    pub classes: Option<usize>,
}

pub fn parse_model(s: &str) -> Result<ModelKind, String> {
    match s {
        "plain" => Ok(ModelKind::PlainCnn),
        "tscnn" => Ok(ModelKind::Tscnn),
        "intercnn" => Ok(ModelKind::Intercnn),
        _ => Err(format!("unknown model `{s}` (plain|tscnn|intercnn)")),
    }
}

pub fn parse_block(s: &str) -> Result<BlockKind, String> {
    match s {
        "vanilla" => Ok(BlockKind::Vanilla),
        "mobilenet" => Ok(BlockKind::mobilenet()),
        "mobilenet_v2" => Ok(BlockKind::mobilenet_v2()),
        _ => Err(format!("unknown block `{s}` (vanilla|mobilenet|mobilenet_v2)")),
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>, o: &Overrides) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => RunConfig::default(),
        };
        if let Some(s) = o.seed {
            cfg.seed = s;
        }
        cfg.synth.seed = cfg.seed;
        cfg.train.seed = cfg.seed;
        if let Some(m) = o.model {
            cfg.model.model = m;
            if m != ModelKind::Intercnn {
                cfg.model.front_dims = None;
            }
        }
        if let Some(b) = o.block {
            cfg.model.block = b;
        }
        if let Some(k) = o.classes {
            cfg.model.classes = k;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        let w = &self.windows;
        if w.length != self.model.frames {
            bail!("window length {} must equal model frames {}", w.length, self.model.frames);
        }
        if w.train_stride == 0 || w.eval_stride == 0 {
            bail!("window strides must be >= 1");
        }
        if let Some(p) = &self.preprocess {
            let dims = self.model.input_dims();
            if p.crops.iter().any(|c| c.target != dims) {
                bail!("crop targets must equal the model input dims {dims:?}");
            }
        }
        Ok(())
    }

    /// Crop settings for source frames of `source` dims.
    pub fn preprocess_for(&self, source: [usize; 2]) -> PreprocessConfig {
        self.preprocess
            .clone()
            .unwrap_or_else(|| PreprocessConfig::for_dims(source, self.model.input_dims()))
    }
}
