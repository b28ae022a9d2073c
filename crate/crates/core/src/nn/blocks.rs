use serde::{Deserialize, Serialize};

use super::layers::{trace_elementwise, BatchNorm, Conv2d, Conv3d, Feeds};
use super::params::{Forward, ParamStore};
use super::Trace;
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::tensor::ops::Activation;
use crate::tensor::Scalar;

pub const KERNEL: usize = 3;

/// The three 2D block families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BlockKind {
    Vanilla,
    #[serde(rename = "mobilenet")]
    MobileNet {
        #[serde(default = "one")]
        width_mult: f64,
        #[serde(default = "one")]
        resolution_mult: f64,
    },
    #[serde(rename = "mobilenet_v2")]
    MobileNetV2 {
        #[serde(default = "six")]
        expansion: usize,
    },
}

fn one() -> f64 {
    1.0
}

fn six() -> usize {
    6
}

impl BlockKind {
    pub fn mobilenet() -> Self {
        BlockKind::MobileNet {
            width_mult: 1.0,
            resolution_mult: 1.0,
        }
    }

    pub fn mobilenet_v2() -> Self {
        BlockKind::MobileNetV2 { expansion: 6 }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            BlockKind::Vanilla => Ok(()),
            BlockKind::MobileNet {
                width_mult,
                resolution_mult,
            } => {
                if !(width_mult > 0.0 && width_mult.is_finite()) || !(resolution_mult > 0.0 && resolution_mult.is_finite()) {
                    return Err(Error::Config(format!(
                        "MobileNet multipliers must be positive, got alpha={width_mult} rho={resolution_mult}"
                    )));
                }
                Ok(())
            }
            BlockKind::MobileNetV2 { expansion } => {
                if expansion == 0 {
                    return Err(Error::Config("MobileNetV2 expansion must be >= 1".into()));
                }
                Ok(())
            }
        }
    }

    /// Channel multiplier (alpha) applied to every block width.
    pub fn width_mult(&self) -> f64 {
        match *self {
            BlockKind::MobileNet { width_mult, .. } => width_mult,
            _ => 1.0,
        }
    }

    /// Input resolution multiplier (rho).
    pub fn resolution_mult(&self) -> f64 {
        match *self {
            BlockKind::MobileNet { resolution_mult, .. } => resolution_mult,
            _ => 1.0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            BlockKind::Vanilla => "vanilla",
            BlockKind::MobileNet { .. } => "mobilenet",
            BlockKind::MobileNetV2 { .. } => "mobilenet_v2",
        }
    }
}

#[derive(Debug, Clone)]
struct Stage {
    conv: Conv2d,
    bn: BatchNorm,
    act: Option<Activation>,
}

impl Stage {
    fn forward<T: Scalar>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let y = self.conv.forward(f, x)?;
        let y = self.bn.forward(f, y)?;
        Ok(match self.act {
            Some(Activation::Relu) => f.tape.relu(y),
            Some(Activation::Selu) => f.tape.selu(y),
            None => y,
        })
    }

    fn trace(&self, shape: &[usize], t: &mut Trace) -> Vec<usize> {
        let out = self.conv.trace(shape, t);
        self.bn.trace(&out, t);
        if self.act.is_some() {
            trace_elementwise(&out, t);
        }
        out
    }

    fn param_count(&self) -> usize {
        self.conv.param_count() + self.bn.param_count()
    }
}

/// One 2D block of the configured kind.
#[derive(Debug, Clone)]
pub struct CnnBlock {
    pub kind: BlockKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    stages: Vec<Stage>,
    skip: bool,
}

impl CnnBlock {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        kind: BlockKind,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
    ) -> Result<Self> {
        kind.validate()?;
        if in_channels == 0 || out_channels == 0 || stride == 0 {
            return Err(Error::Config(format!(
                "block `{name}` needs positive channels and stride, got {in_channels}->{out_channels} stride {stride}"
            )));
        }
        let relu = Some(Activation::Relu);
        let mut stages = Vec::new();
        let mut push = |store: &mut ParamStore<T>, suffix: &str, conv: Conv2d, act: Option<Activation>| -> Result<()> {
            let bn = BatchNorm::new(store, &format!("{name}.{suffix}.bn"), conv.cout)?;
            stages.push(Stage { conv, bn, act });
            Ok(())
        };
        let mut skip = false;
        match kind {
            BlockKind::Vanilla => {
                let c = Conv2d::new(store, &format!("{name}.conv"), in_channels, out_channels, KERNEL, stride, Feeds::Relu)?;
                push(store, "conv", c, relu)?;
            }
            BlockKind::MobileNet { .. } => {
                let dw = Conv2d::depthwise(store, &format!("{name}.dw"), in_channels, KERNEL, stride, Feeds::Relu)?;
                push(store, "dw", dw, relu)?;
                let pw = Conv2d::new(store, &format!("{name}.pw"), in_channels, out_channels, 1, 1, Feeds::Relu)?;
                push(store, "pw", pw, relu)?;
            }
            BlockKind::MobileNetV2 { expansion } => {
                let hidden = in_channels * expansion;
                let ex = Conv2d::new(store, &format!("{name}.expand"), in_channels, hidden, 1, 1, Feeds::Relu)?;
                push(store, "expand", ex, relu)?;
                let dw = Conv2d::depthwise(store, &format!("{name}.dw"), hidden, KERNEL, stride, Feeds::Relu)?;
                push(store, "dw", dw, relu)?;
                let pr = Conv2d::new(store, &format!("{name}.project"), hidden, out_channels, 1, 1, Feeds::Linear)?;
                push(store, "project", pr, None)?;
                skip = stride == 1 && in_channels == out_channels;
            }
        }
        Ok(CnnBlock {
            kind,
            in_channels,
            out_channels,
            stride,
            stages,
            skip,
        })
    }

    pub fn has_skip(&self) -> bool {
        self.skip
    }

    pub fn forward<T: Scalar>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let c = f.tape.value(x).channels();
        if c != self.in_channels {
            return Err(Error::shape(
                "block_forward",
                format!("input has {c} channels, block expects {}", self.in_channels),
            ));
        }
        let mut y = x;
        for s in &self.stages {
            y = s.forward(f, y)?;
        }
        if self.skip {
            y = f.tape.add(x, y)?;
        }
        Ok(y)
    }

    pub fn param_count(&self) -> usize {
        self.stages.iter().map(Stage::param_count).sum()
    }

    /// `shape` is `[H, W, C]` for one sample.
    pub fn trace(&self, shape: &[usize], t: &mut Trace) -> Vec<usize> {
        let mut s = shape.to_vec();
        for st in &self.stages {
            s = st.trace(&s, t);
        }
        if self.skip {
            trace_elementwise(&s, t);
        }
        s
    }

    /// Convolution layers in order, for tests and weight surgery.
    pub fn convs(&self) -> impl Iterator<Item = &Conv2d> {
        self.stages.iter().map(|s| &s.conv)
    }

    pub fn norms(&self) -> impl Iterator<Item = &BatchNorm> {
        self.stages.iter().map(|s| &s.bn)
    }
}

/// conv3d -> BN -> SELU.
#[derive(Debug, Clone)]
pub struct Cnn3dBlock {
    pub conv: Conv3d,
    pub bn: BatchNorm,
}

impl Cnn3dBlock {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
    ) -> Result<Self> {
        let conv = Conv3d::new(
            store,
            &format!("{name}.conv"),
            in_channels,
            out_channels,
            [KERNEL; 3],
            Feeds::Selu,
        )?;
        let bn = BatchNorm::new(store, &format!("{name}.bn"), out_channels)?;
        Ok(Cnn3dBlock { conv, bn })
    }

    pub fn forward<T: Scalar>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let y = self.conv.forward(f, x)?;
        let y = self.bn.forward(f, y)?;
        Ok(f.tape.selu(y))
    }

    pub fn param_count(&self) -> usize {
        self.conv.param_count() + self.bn.param_count()
    }

    /// `shape` is `[T, H, W, C]` for one sample.
    pub fn trace(&self, shape: &[usize], t: &mut Trace) -> Vec<usize> {
        let out = self.conv.trace(shape, t);
        self.bn.trace(&out, t);
        trace_elementwise(&out, t);
        out
    }
}
