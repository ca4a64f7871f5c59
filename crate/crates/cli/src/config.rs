use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tbnet::data::SynthParams;
use tbnet::network::{Arch, NetworkConfig, TbSettings};
use tbnet::trainer::{EvalProtocol, TrainConfig};

use crate::Failure;

pub const TRAIN_FILE: &str = "train.tbv";
pub const TEST_FILE: &str = "test.tbv";
pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const LOG_FILE: &str = "log.jsonl";
pub const METRICS_FILE: &str = "metrics.json";
pub const RESOLVED_CONFIG_FILE: &str = "run.toml";

/// Everything a run needs. Read from an optional TOML file, then overridden
/// by command-line flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub network: NetworkSection,
    pub train: TrainConfig,
    pub eval: EvalProtocol,
    pub synth: SynthParams,
    pub paths: Paths,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub arch: Arch,
    pub width_divisor: usize,
    pub blocks_per_stage: usize,
    /// Bilinear stages; unset means res2–res4 for bilinear families.
    pub tb_stages: Option<Vec<usize>>,
    pub tb: TbSettings,
}

impl Default for NetworkSection {
    fn default() -> Self {
        NetworkSection {
            arch: Arch::C2d,
            width_divisor: 8,
            blocks_per_stage: 2,
            tb_stages: None,
            tb: TbSettings::default(),
        }
    }
}

impl NetworkSection {
    /// Network for clips cut by `train` from videos with `channels` channels.
    pub fn build(&self, train: &TrainConfig, classes: usize, channels: usize) -> NetworkConfig {
        let mut cfg = NetworkConfig {
            width_divisor: self.width_divisor,
            blocks_per_stage: self.blocks_per_stage,
            in_channels: channels,
            frames: train.clip_frames,
            height: train.crop,
            width: train.crop,
            tb: self.tb,
            ..NetworkConfig::desk(self.arch, classes)
        };
        if let Some(stages) = &self.tb_stages {
            cfg.tb_stages = stages.clone();
        }
        cfg
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| Failure::usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| Failure::usage(format!("config {}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}
