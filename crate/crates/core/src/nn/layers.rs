//! Parameterized primitive layers shared by every block.

use super::params::{Forward, ParamId, ParamStore, StatId};
use super::Trace;
use crate::autodiff::Var;
use crate::error::Result;
use crate::tensor::ops::{conv_out_len, Mode, Padding};
use crate::tensor::{InitScheme, Scalar};

/// Which initializer a layer's weights get, keyed by what consumes them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Feeds {
    Selu,
    Relu,
    Linear,
}

impl Feeds {
    fn scheme(self, fan_in: usize) -> InitScheme {
        match self {
            Feeds::Relu => InitScheme::HeNormal { fan_in },
            Feeds::Selu | Feeds::Linear => InitScheme::LecunNormal { fan_in },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvKind {
    Full,
    Depthwise,
}

/// 2D convolution with bias and `same` padding.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub kind: ConvKind,
    pub kernel: ParamId,
    pub bias: ParamId,
    pub ksize: usize,
    pub stride: usize,
    pub cin: usize,
    pub cout: usize,
}

impl Conv2d {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        ksize: usize,
        stride: usize,
        feeds: Feeds,
    ) -> Result<Self> {
        let kernel = store.add(
            format!("{name}.kernel"),
            &[ksize, ksize, cin, cout],
            feeds.scheme(ksize * ksize * cin),
        )?;
        let bias = store.add(format!("{name}.bias"), &[cout], InitScheme::Zeros)?;
        Ok(Conv2d {
            kind: ConvKind::Full,
            kernel,
            bias,
            ksize,
            stride,
            cin,
            cout,
        })
    }

    pub fn depthwise<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        ksize: usize,
        stride: usize,
        feeds: Feeds,
    ) -> Result<Self> {
        let kernel = store.add(
            format!("{name}.kernel"),
            &[ksize, ksize, channels],
            feeds.scheme(ksize * ksize),
        )?;
        let bias = store.add(format!("{name}.bias"), &[channels], InitScheme::Zeros)?;
        Ok(Conv2d {
            kind: ConvKind::Depthwise,
            kernel,
            bias,
            ksize,
            stride,
            cin: channels,
            cout: channels,
        })
    }

    pub fn forward<T: Scalar>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let (k, b) = (f.var(self.kernel), f.var(self.bias));
        let s = [self.stride, self.stride];
        match self.kind {
            ConvKind::Full => f.tape.conv2d(x, k, b, s, Padding::Same),
            ConvKind::Depthwise => f.tape.depthwise_conv2d(x, k, b, s, Padding::Same),
        }
    }

    pub fn param_count(&self) -> usize {
        let k = self.ksize * self.ksize;
        match self.kind {
            ConvKind::Full => k * self.cin * self.cout + self.cout,
            ConvKind::Depthwise => k * self.cin + self.cin,
        }
    }

    /// `shape` is `[H, W, C]`.
    pub fn trace(&self, shape: &[usize], t: &mut Trace) -> Vec<usize> {
        let oh = conv_out_len(shape[0], self.ksize, self.stride, Padding::Same).unwrap().0;
        let ow = conv_out_len(shape[1], self.ksize, self.stride, Padding::Same).unwrap().0;
        let out = (oh * ow * self.cout) as u64;
        let k = (self.ksize * self.ksize) as u64;
        let macs = match self.kind {
            ConvKind::Full => out * k * self.cin as u64,
            ConvKind::Depthwise => out * k,
        };
        t.flops += 2 * macs + out;
        vec![oh, ow, self.cout]
    }
}

/// 3D convolution with bias, stride 1 and `same` padding on every axis.
#[derive(Debug, Clone)]
pub struct Conv3d {
    pub kernel: ParamId,
    pub bias: ParamId,
    pub ksize: [usize; 3],
    pub cin: usize,
    pub cout: usize,
}

impl Conv3d {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        ksize: [usize; 3],
        feeds: Feeds,
    ) -> Result<Self> {
        let taps: usize = ksize.iter().product();
        let kernel = store.add(
            format!("{name}.kernel"),
            &[ksize[0], ksize[1], ksize[2], cin, cout],
            feeds.scheme(taps * cin),
        )?;
        let bias = store.add(format!("{name}.bias"), &[cout], InitScheme::Zeros)?;
        Ok(Conv3d {
            kernel,
            bias,
            ksize,
            cin,
            cout,
        })
    }

    pub fn forward<T: Scalar>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let (k, b) = (f.var(self.kernel), f.var(self.bias));
        f.tape.conv3d(x, k, b, [1, 1, 1], Padding::Same)
    }

    pub fn param_count(&self) -> usize {
        self.ksize.iter().product::<usize>() * self.cin * self.cout + self.cout
    }

    /// `shape` is `[T, H, W, C]`.
    pub fn trace(&self, shape: &[usize], t: &mut Trace) -> Vec<usize> {
        let out = (shape[0] * shape[1] * shape[2] * self.cout) as u64;
        let taps = self.ksize.iter().product::<usize>() as u64;
        t.flops += 2 * out * taps * self.cin as u64 + out;
        vec![shape[0], shape[1], shape[2], self.cout]
    }
}

/// Batch norm over the channel axis with learned gamma/beta.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub stats: StatId,
    pub channels: usize,
}

impl BatchNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Result<Self> {
        let gamma = store.add(format!("{name}.gamma"), &[channels], InitScheme::Ones)?;
        let beta = store.add(format!("{name}.beta"), &[channels], InitScheme::Zeros)?;
        let stats = store.add_stats(name, channels);
        Ok(BatchNorm {
            gamma,
            beta,
            stats,
            channels,
        })
    }

    pub fn forward<T: Scalar>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let (g, b, eps) = (f.var(self.gamma), f.var(self.beta), f.eps);
        match f.mode {
            Mode::Train => {
                let (y, stats) = f.tape.batch_norm_train(x, g, b, eps)?;
                f.record_stats(self.stats, stats);
                Ok(y)
            }
            Mode::Eval => {
                let st = f.stats(self.stats).clone();
                f.tape.batch_norm_eval(x, g, b, &st.mean, &st.var, eps)
            }
        }
    }

    pub fn param_count(&self) -> usize {
        2 * self.channels
    }

    pub fn trace(&self, shape: &[usize], t: &mut Trace) {
        t.flops += 2 * shape.iter().product::<usize>() as u64;
    }
}

/// Fully connected layer.
#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub din: usize,
    pub dout: usize,
}

impl Dense {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, din: usize, dout: usize) -> Result<Self> {
        let weight = store.add(
            format!("{name}.weight"),
            &[din, dout],
            InitScheme::LecunNormal { fan_in: din },
        )?;
        let bias = store.add(format!("{name}.bias"), &[dout], InitScheme::Zeros)?;
        Ok(Dense {
            weight,
            bias,
            din,
            dout,
        })
    }

    pub fn forward<T: Scalar>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let (w, b) = (f.var(self.weight), f.var(self.bias));
        f.tape.dense(x, w, b)
    }

    pub fn param_count(&self) -> usize {
        self.din * self.dout + self.dout
    }

    pub fn trace(&self, t: &mut Trace) -> Vec<usize> {
        t.flops += (2 * self.din * self.dout + self.dout) as u64;
        vec![self.dout]
    }
}

pub(crate) fn trace_elementwise(shape: &[usize], t: &mut Trace) {
    t.flops += shape.iter().product::<usize>() as u64;
}
