//! Residual backbones (C2D, C3D) and their temporal-bilinear variants.

mod block;
pub mod checkpoint;
mod layers;
mod model;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tb::TBConfig;

pub use block::{ResBlock, TbPath};
pub use layers::{BnLayer, ConvKind, ConvLayer, RmsLayer, BN_EPS, BN_MOMENTUM};
pub use model::{ForwardCtx, Model, StageShape};

/// Model family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    C2d,
    C3d,
    Wtbn,
    Dtbn,
}

impl Arch {
    pub fn name(self) -> &'static str {
        match self {
            Arch::C2d => "c2d",
            Arch::C3d => "c3d",
            Arch::Wtbn => "wtbn",
            Arch::Dtbn => "dtbn",
        }
    }

    pub fn has_tb(self) -> bool {
        matches!(self, Arch::Wtbn | Arch::Dtbn)
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "c2d" => Ok(Arch::C2d),
            "c3d" => Ok(Arch::C3d),
            "wtbn" => Ok(Arch::Wtbn),
            "dtbn" => Ok(Arch::Dtbn),
            other => Err(Error::Config {
                stage: "arch".into(),
                msg: format!("unknown architecture {other:?} (expected c2d, c3d, wtbn or dtbn)"),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Resnet2d,
    Resnet3d,
    WideTb,
    DeepTb,
}

/// One residual block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub kind: BlockKind,
    pub c_in: usize,
    pub c_out: usize,
    pub spatial_stride: usize,
    /// Only 3-D blocks stride in time.
    pub temporal_stride: usize,
    pub tb: Option<TBConfig>,
}

impl BlockSpec {
    pub fn plain(kind: BlockKind, c_in: usize, c_out: usize, stride: usize) -> Self {
        BlockSpec {
            kind,
            c_in,
            c_out,
            spatial_stride: stride,
            temporal_stride: 1,
            tb: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::contract("block_spec", msg));
        if !matches!(self.spatial_stride, 1 | 2) || !matches!(self.temporal_stride, 1 | 2) {
            return bad(format!(
                "strides must be 1 or 2, got {}/{}",
                self.temporal_stride, self.spatial_stride
            ));
        }
        if self.c_in == 0 || self.c_out == 0 {
            return bad("channel counts must be positive".into());
        }
        match (self.kind, &self.tb) {
            (BlockKind::WideTb | BlockKind::DeepTb, Some(tb)) => {
                tb.validate()?;
                let want_in = if self.kind == BlockKind::WideTb { self.c_in } else { self.c_out };
                if tb.c_in != want_in || tb.c_out != self.c_out {
                    return bad(format!(
                        "bilinear path {}→{} does not fit block {}→{}",
                        tb.c_in, tb.c_out, self.c_in, self.c_out
                    ));
                }
                if self.temporal_stride != 1 {
                    return bad("bilinear blocks are temporally stride 1".into());
                }
                Ok(())
            }
            (BlockKind::WideTb | BlockKind::DeepTb, None) => bad("bilinear block without a TB config".into()),
            (_, Some(_)) => bad("plain block carries a TB config".into()),
            (BlockKind::Resnet2d, None) if self.temporal_stride != 1 => bad("2-D blocks cannot stride in time".into()),
            _ => Ok(()),
        }
    }
}

/// Hyperparameters of the bilinear paths inside a network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TbSettings {
    pub factors: usize,
    pub dropfactor_keep: f64,
    pub bottleneck_reduction: usize,
    pub temporal_kernel: usize,
}

impl Default for TbSettings {
    fn default() -> Self {
        TbSettings {
            factors: 20,
            dropfactor_keep: 0.5,
            bottleneck_reduction: 4,
            temporal_kernel: 3,
        }
    }
}

impl TbSettings {
    pub fn config(&self, c_in: usize, c_out: usize) -> TBConfig {
        TBConfig {
            c_in,
            c_out,
            factors: self.factors,
            dropfactor_keep: self.dropfactor_keep,
            bottleneck_reduction: self.bottleneck_reduction,
            temporal_kernel: self.temporal_kernel,
        }
    }
}

pub const STAGE_NAMES: [&str; 4] = ["res1", "res2", "res3", "res4"];

/// Declarative network description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub arch: Arch,
    /// Full-scale stage widths, divided by `width_divisor` when built.
    pub widths: [usize; 4],
    pub stem_width: usize,
    pub width_divisor: usize,
    pub blocks_per_stage: usize,
    pub in_channels: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    /// Stages (1-based, res1..res4) whose blocks are bilinear blocks.
    pub tb_stages: Vec<usize>,
    pub tb: TbSettings,
}

impl NetworkConfig {
    /// Full-width layout on 8×112×112 clips; bilinear variants place their
    /// blocks at res2–res4.
    pub fn standard(arch: Arch, classes: usize) -> Self {
        NetworkConfig {
            arch,
            widths: [64, 128, 256, 512],
            stem_width: 64,
            width_divisor: 1,
            blocks_per_stage: 2,
            in_channels: 3,
            frames: 8,
            height: 112,
            width: 112,
            classes,
            tb_stages: if arch.has_tb() { vec![2, 3, 4] } else { vec![] },
            tb: TbSettings::default(),
        }
    }

    /// Reduced layout for the synthetic benchmark: width 1/8 on 8×28×28 crops.
    pub fn desk(arch: Arch, classes: usize) -> Self {
        NetworkConfig {
            width_divisor: 8,
            height: 28,
            width: 28,
            ..Self::standard(arch, classes)
        }
    }

    pub fn stage_width(&self, stage: usize) -> usize {
        self.widths[stage] / self.width_divisor
    }

    pub fn stem_channels(&self) -> usize {
        self.stem_width / self.width_divisor
    }

    pub fn clip_shape(&self) -> [usize; 4] {
        [self.frames, self.in_channels, self.height, self.width]
    }

    /// Number of bilinear blocks this config places.
    pub fn tb_block_count(&self) -> usize {
        if self.arch.has_tb() {
            self.tb_stages.len() * self.blocks_per_stage
        } else {
            0
        }
    }

    /// Parses a comma-separated stage list such as `res2,res3,res4` or `2,3,4`.
    pub fn parse_stages(s: &str) -> Result<Vec<usize>> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let digits = part.strip_prefix("res").unwrap_or(part);
            match digits.parse::<usize>() {
                Ok(v @ 1..=4) => out.push(v),
                _ => {
                    return Err(Error::Config {
                        stage: part.to_string(),
                        msg: "expected a stage among res1..res4".into(),
                    })
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }

    fn config_err(stage: &str, msg: String) -> Error {
        Error::Config {
            stage: stage.to_string(),
            msg,
        }
    }

    /// Block specs per stage after checking the configuration.
    pub fn block_specs(&self) -> Result<Vec<Vec<BlockSpec>>> {
        let e = Self::config_err;
        if self.width_divisor == 0 {
            return Err(e("network", "width divisor must be positive".into()));
        }
        if self.classes == 0 || self.in_channels == 0 || self.blocks_per_stage == 0 {
            return Err(e("network", "classes, input channels and blocks per stage must be positive".into()));
        }
        if self.frames == 0 || self.height == 0 || self.width == 0 {
            return Err(e("input", format!("clip extents must be positive, got {:?}", self.clip_shape())));
        }
        if self.stem_width % self.width_divisor != 0 || self.stem_channels() == 0 {
            return Err(e(
                "conv1",
                format!("width {} not divisible by {}", self.stem_width, self.width_divisor),
            ));
        }
        for (s, &w) in self.widths.iter().enumerate() {
            if w % self.width_divisor != 0 || w / self.width_divisor == 0 {
                return Err(e(STAGE_NAMES[s], format!("width {w} not divisible by {}", self.width_divisor)));
            }
        }
        if !self.arch.has_tb() && !self.tb_stages.is_empty() {
            return Err(e(
                "network",
                format!("{} has no bilinear blocks; tb_stages must be empty", self.arch),
            ));
        }
        if let Some(&bad) = self.tb_stages.iter().find(|&&s| !(1..=4).contains(&s)) {
            return Err(e("network", format!("stage {bad} outside res1..res4")));
        }
        let mut stages = Vec::with_capacity(4);
        let mut c_in = self.stem_channels();
        for s in 0..4 {
            let c_out = self.stage_width(s);
            let tb_here = self.arch.has_tb() && self.tb_stages.contains(&(s + 1));
            let mut blocks = Vec::with_capacity(self.blocks_per_stage);
            for b in 0..self.blocks_per_stage {
                let first = b == 0;
                let stride = if first && s > 0 { 2 } else { 1 };
                let (kind, tb) = match (self.arch, tb_here) {
                    (Arch::C3d, _) => (BlockKind::Resnet3d, None),
                    (Arch::Wtbn, true) => (BlockKind::WideTb, Some(self.tb.config(c_in, c_out))),
                    (Arch::Dtbn, true) => (BlockKind::DeepTb, Some(self.tb.config(c_out, c_out))),
                    _ => (BlockKind::Resnet2d, None),
                };
                let spec = BlockSpec {
                    kind,
                    c_in,
                    c_out,
                    spatial_stride: stride,
                    temporal_stride: if kind == BlockKind::Resnet3d { stride } else { 1 },
                    tb,
                };
                spec.validate().map_err(|err| e(STAGE_NAMES[s], err.to_string()))?;
                blocks.push(spec);
                c_in = c_out;
            }
            stages.push(blocks);
        }
        Ok(stages)
    }
}
