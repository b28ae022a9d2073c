use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum View {
    Side,
    Front,
}

impl View {
    pub const BOTH: [View; 2] = [View::Side, View::Front];

    pub fn name(self) -> &'static str {
        match self {
            View::Side => "side",
            View::Front => "front",
        }
    }
}

/// Pixel rectangle in source coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CropBox {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CropSpec {
    pub view: View,
    #[serde(rename = "box")]
    pub crop: CropBox,
    /// `[out_h, out_w]`.
    pub target: [usize; 2],
}

impl CropSpec {
    pub fn check(&self, height: usize, width: usize) -> Result<()> {
        let b = self.crop;
        let fits = b.width > 0
            && b.height > 0
            && b.x0.checked_add(b.width).is_some_and(|r| r <= width)
            && b.y0.checked_add(b.height).is_some_and(|r| r <= height);
        if !fits {
            return Err(Error::Crop {
                box_: (b.x0, b.y0, b.width, b.height),
                height,
                width,
            });
        }
        if self.target.contains(&0) {
            return Err(Error::Config(format!("crop target {:?} must be positive", self.target)));
        }
        Ok(())
    }
}

/// Source coordinate of output index `i` under corner-aligned sampling.
fn source_coord(i: usize, out: usize, len: usize) -> f64 {
    if out == 1 {
        0.0
    } else {
        i as f64 * (len - 1) as f64 / (out - 1) as f64
    }
}

/// Crops `frame [H,W,C]` to the spec's box and resizes it bilinearly with
/// corner-aligned sampling (output corners land on the box corners).
pub fn crop_resize(frame: &Tensor<f32>, spec: &CropSpec) -> Result<Tensor<f32>> {
    let s = frame.shape();
    if s.len() != 3 {
        return Err(Error::shape("crop_resize", format!("expected [H,W,C], got {s:?}")));
    }
    let (h, w, c) = (s[0], s[1], s[2]);
    spec.check(h, w)?;
    let b = spec.crop;
    let [oh, ow] = spec.target;
    let src = frame.data();
    let px = |y: usize, x: usize, ch: usize| src[((b.y0 + y) * w + b.x0 + x) * c + ch] as f64;
    let mut out = Vec::with_capacity(oh * ow * c);
    for i in 0..oh {
        let fy = source_coord(i, oh, b.height);
        let y0 = (fy.floor() as usize).min(b.height - 1);
        let y1 = (y0 + 1).min(b.height - 1);
        let ty = fy - y0 as f64;
        for j in 0..ow {
            let fx = source_coord(j, ow, b.width);
            let x0 = (fx.floor() as usize).min(b.width - 1);
            let x1 = (x0 + 1).min(b.width - 1);
            let tx = fx - x0 as f64;
            for ch in 0..c {
                let top = px(y0, x0, ch) * (1.0 - tx) + px(y0, x1, ch) * tx;
                let bot = px(y1, x0, ch) * (1.0 - tx) + px(y1, x1, ch) * tx;
                out.push((top * (1.0 - ty) + bot * ty) as f32);
            }
        }
    }
    Tensor::new(&[oh, ow, c], out)
}
