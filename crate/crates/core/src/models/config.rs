use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::BlockKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Side frames only.
    #[serde(alias = "plain")]
    PlainCnn,
    /// Side frames plus side flow.
    Tscnn,
    /// Both views, frames and flow, joined by interweaving modules.
    Intercnn,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::PlainCnn => "plain",
            ModelKind::Tscnn => "tscnn",
            ModelKind::Intercnn => "intercnn",
        }
    }

    pub fn uses_front(self) -> bool {
        self == ModelKind::Intercnn
    }

    pub fn uses_flow(self) -> bool {
        self != ModelKind::PlainCnn
    }
}

fn d_block() -> BlockKind {
    BlockKind::mobilenet()
}
fn d_stream_depth() -> usize {
    7
}
fn d_interweave_depth() -> usize {
    25
}
fn d_width() -> usize {
    8
}
fn d_dims() -> [usize; 2] {
    [32, 32]
}
fn d_frames() -> usize {
    15
}
fn d_flows() -> usize {
    14
}
fn d_classes() -> usize {
    9
}
fn d_every() -> usize {
    5
}
fn d_cap() -> usize {
    16
}

/// Full network topology.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub model: ModelKind,
    #[serde(default = "d_block")]
    pub block: BlockKind,
    /// 3D blocks per input stream.
    #[serde(default = "d_stream_depth")]
    pub stream_depth: usize,
    /// Interweaving modules (or single-stream blocks for the baselines).
    #[serde(default = "d_interweave_depth")]
    pub interweave_depth: usize,
    /// Channel width of the 3D streams.
    #[serde(default = "d_width")]
    pub base_width: usize,
    /// `[height, width]` of the side view.
    #[serde(default = "d_dims")]
    pub side_dims: [usize; 2],
    /// `[height, width]` of the front view; `None` means same as the side view.
    #[serde(default)]
    pub front_dims: Option<[usize; 2]>,
    #[serde(default = "d_frames")]
    pub frames: usize,
    #[serde(default = "d_flows")]
    pub flows: usize,
    #[serde(default = "d_classes")]
    pub classes: usize,
    /// Every this many modules the fusion strides by 2 and the width doubles.
    #[serde(default = "d_every")]
    pub downsample_every: usize,
    /// Width cap as a multiple of `base_width`.
    #[serde(default = "d_cap")]
    pub width_cap: usize,
}

impl ModelConfig {
    pub fn new(model: ModelKind, block: BlockKind) -> Self {
        ModelConfig {
            model,
            block,
            stream_depth: d_stream_depth(),
            interweave_depth: d_interweave_depth(),
            base_width: d_width(),
            side_dims: d_dims(),
            front_dims: None,
            frames: d_frames(),
            flows: d_flows(),
            classes: d_classes(),
            downsample_every: d_every(),
            width_cap: d_cap(),
        }
    }

    /// Small topology that trains in minutes on one CPU core: one 3D block
    /// per stream, four modules, width 4, 16x16 inputs.
    pub fn desk(model: ModelKind, block: BlockKind) -> Self {
        ModelConfig {
            stream_depth: 1,
            interweave_depth: 4,
            base_width: 4,
            side_dims: [16, 16],
            downsample_every: 2,
            ..Self::new(model, block)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.block.validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if self.stream_depth == 0 || self.interweave_depth == 0 {
            return bad("stream_depth and interweave_depth must be >= 1".into());
        }
        if self.base_width == 0 || self.downsample_every == 0 || self.width_cap == 0 {
            return bad("base_width, downsample_every and width_cap must be >= 1".into());
        }
        if self.classes != 9 && self.classes != 5 {
            return bad(format!("classes must be 9 or 5, got {}", self.classes));
        }
        if self.side_dims.contains(&0) {
            return bad("side_dims must be positive".into());
        }
        if self.frames < 2 || self.flows + 1 != self.frames {
            return bad(format!(
                "need frames >= 2 and flows = frames - 1, got {} / {}",
                self.frames, self.flows
            ));
        }
        match (self.model.uses_front(), self.front_dims) {
            (true, Some(f)) if f != self.side_dims => {
                return bad(format!(
                    "intercnn interweaves both views, so front_dims {f:?} must equal side_dims {:?}",
                    self.side_dims
                ))
            }
            (false, Some(_)) => {
                return bad(format!("{} uses the side view only; drop front_dims", self.model.name()))
            }
            _ => {}
        }
        let d = self.input_dims();
        if d.contains(&0) {
            return bad(format!("resolution multiplier shrinks input to {d:?}"));
        }
        Ok(())
    }

    /// Spatial dims the network actually consumes (side and front alike),
    /// after the MobileNet resolution multiplier.
    pub fn input_dims(&self) -> [usize; 2] {
        let rho = self.block.resolution_mult();
        self.side_dims.map(|d| (d as f64 * rho).round() as usize)
    }

    /// Applies the MobileNet width multiplier to a 2D block width.
    pub fn scaled(&self, channels: usize) -> usize {
        ((channels as f64 * self.block.width_mult()).round() as usize).max(1)
    }

    /// `(stride, in, out)` for each module or block of the 2D body.
    pub fn body_plan(&self) -> Vec<(usize, usize, usize)> {
        let cap = self.scaled(self.width_cap * self.base_width);
        let mut c = self.stem_width();
        (1..=self.interweave_depth)
            .map(|i| {
                if i % self.downsample_every == 0 {
                    let out = (2 * c).min(cap).max(c);
                    let step = (2, c, out);
                    c = out;
                    step
                } else {
                    (1, c, c)
                }
            })
            .collect()
    }

    /// Width entering the 2D body.
    pub fn stem_width(&self) -> usize {
        self.scaled(2 * self.base_width)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
