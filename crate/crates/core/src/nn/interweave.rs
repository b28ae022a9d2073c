use super::blocks::{BlockKind, CnnBlock};
use super::layers::{trace_elementwise, Conv2d, Feeds};
use super::params::{Forward, ParamStore};
use super::Trace;
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::tensor::ops::{concat_channels, conv2d, Padding};
use crate::tensor::{Scalar, Tensor};

/// Concatenates two equally shaped maps and mixes them with a 1x1 conv
/// (`kernel [1,1,2C,2C]`, `bias [2C]`).
pub fn spatial_fuse<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            "spatial_fuse",
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    let cat = concat_channels(a, b)?;
    conv2d(&cat, kernel, bias, [stride, stride], Padding::Same)
}

/// Trainable fusion layer.
#[derive(Debug, Clone)]
pub struct SpatialFuse {
    pub conv: Conv2d,
}

impl SpatialFuse {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize, stride: usize) -> Result<Self> {
        let conv = Conv2d::new(store, name, 2 * channels, 2 * channels, 1, stride, Feeds::Linear)?;
        Ok(SpatialFuse { conv })
    }

    pub fn forward<T: Scalar>(&self, f: &mut Forward<'_, T>, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (f.tape.value(a).shape(), f.tape.value(b).shape());
        if sa != sb {
            return Err(Error::shape("spatial_fuse", format!("{sa:?} vs {sb:?}")));
        }
        let cat = f.tape.concat_channels(a, b)?;
        self.conv.forward(f, cat)
    }

    pub fn param_count(&self) -> usize {
        self.conv.param_count()
    }

    pub fn trace(&self, shape: &[usize], t: &mut Trace) -> Vec<usize> {
        let mut cat = shape.to_vec();
        *cat.last_mut().unwrap() *= 2;
        self.conv.trace(&cat, t)
    }
}

/// Two-stream module: per-stream blocks, a shared fusion, per-stream
/// decompose blocks and residual paths back to each input.
#[derive(Debug, Clone)]
pub struct InterweavingModule {
    pub channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub branch: [CnnBlock; 2],
    pub fuse: SpatialFuse,
    pub decompose: [CnnBlock; 2],
    pub project: Option<[Conv2d; 2]>,
}

impl InterweavingModule {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        kind: BlockKind,
        channels: usize,
        out_channels: usize,
        stride: usize,
    ) -> Result<Self> {
        let branch = [
            CnnBlock::new(store, &format!("{name}.a1"), kind, channels, channels, 1)?,
            CnnBlock::new(store, &format!("{name}.a2"), kind, channels, channels, 1)?,
        ];
        let fuse = SpatialFuse::new(store, &format!("{name}.fuse"), channels, stride)?;
        let decompose = [
            CnnBlock::new(store, &format!("{name}.b1"), kind, 2 * channels, out_channels, 1)?,
            CnnBlock::new(store, &format!("{name}.b2"), kind, 2 * channels, out_channels, 1)?,
        ];
        let project = if stride != 1 || channels != out_channels {
            Some([
                Conv2d::new(store, &format!("{name}.r1"), channels, out_channels, 1, stride, Feeds::Linear)?,
                Conv2d::new(store, &format!("{name}.r2"), channels, out_channels, 1, stride, Feeds::Linear)?,
            ])
        } else {
            None
        };
        Ok(InterweavingModule {
            channels,
            out_channels,
            stride,
            branch,
            fuse,
            decompose,
            project,
        })
    }

    pub fn forward<T: Scalar>(&self, f: &mut Forward<'_, T>, x1: Var, x2: Var) -> Result<(Var, Var)> {
        let (s1, s2) = (f.tape.value(x1).shape(), f.tape.value(x2).shape());
        if s1 != s2 {
            return Err(Error::shape("interweave_forward", format!("{s1:?} vs {s2:?}")));
        }
        let a1 = self.branch[0].forward(f, x1)?;
        let a2 = self.branch[1].forward(f, x2)?;
        let fused = self.fuse.forward(f, a1, a2)?;
        let mut out = [x1, x2];
        for (i, x) in [x1, x2].into_iter().enumerate() {
            let b = self.decompose[i].forward(f, fused)?;
            let r = match &self.project {
                Some(p) => p[i].forward(f, x)?,
                None => x,
            };
            out[i] = f.tape.add(r, b)?;
        }
        Ok((out[0], out[1]))
    }

    pub fn param_count(&self) -> usize {
        let blocks: usize = self
            .branch
            .iter()
            .chain(&self.decompose)
            .map(CnnBlock::param_count)
            .sum();
        let proj: usize = self.project.iter().flatten().map(Conv2d::param_count).sum();
        blocks + self.fuse.param_count() + proj
    }

    /// Shape of either stream (`[H, W, C]`), same for both.
    pub fn trace(&self, shape: &[usize], t: &mut Trace) -> Vec<usize> {
        let a = self.branch[0].trace(shape, t);
        self.branch[1].trace(shape, t);
        let fused = self.fuse.trace(&a, t);
        let mut out = Vec::new();
        for i in 0..2 {
            out = self.decompose[i].trace(&fused, t);
            if let Some(p) = &self.project {
                p[i].trace(shape, t);
            }
            trace_elementwise(&out, t);
        }
        out
    }
}
