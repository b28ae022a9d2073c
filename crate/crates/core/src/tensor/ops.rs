//! Forward kernels (public) and their vector-Jacobian products (crate-private).
//!
//! Everything is channels-last. 2D ops run through the 3D kernels with a unit
//! time axis, so there is exactly one convolution loop nest to get right.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// Output length `ceil(in / stride)`; odd total padding puts the extra cell at the end.
    Same,
    /// No padding; output length `floor((in - k) / stride) + 1`.
    Valid,
}

/// Resolved geometry of one 3D convolution (2D convs use `t = kt = 1`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub input: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad_before: [usize; 3],
    pub output: [usize; 3],
}

/// Output length and leading pad for one axis.
pub fn conv_out_len(input: usize, kernel: usize, stride: usize, padding: Padding) -> Option<(usize, usize)> {
    if stride == 0 || kernel == 0 || input == 0 {
        return None;
    }
    match padding {
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + kernel).saturating_sub(input);
            Some((out, total / 2))
        }
        Padding::Valid => {
            if kernel > input {
                return None;
            }
            Some(((input - kernel) / stride + 1, 0))
        }
    }
}

impl ConvGeom {
    pub fn new(
        batch: usize,
        input: [usize; 3],
        kernel: [usize; 3],
        stride: [usize; 3],
        padding: Padding,
    ) -> Result<Self> {
        let mut output = [0; 3];
        let mut pad_before = [0; 3];
        for axis in 0..3 {
            let (o, p) = conv_out_len(input[axis], kernel[axis], stride[axis], padding).ok_or_else(|| {
                Error::shape(
                    "conv",
                    format!(
                        "kernel {kernel:?} with stride {stride:?} does not fit input {input:?} ({padding:?})"
                    ),
                )
            })?;
            output[axis] = o;
            pad_before[axis] = p;
        }
        Ok(ConvGeom {
            batch,
            input,
            kernel,
            stride,
            pad_before,
            output,
        })
    }

    fn in_positions(&self) -> usize {
        self.input.iter().product()
    }

    fn out_positions(&self) -> usize {
        self.output.iter().product()
    }

    /// Calls `f(out_index, tap_index, in_index)` for every valid (output, tap) pair
    /// of one batch element, in a fixed order.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let [it_n, ih_n, iw_n] = self.input;
        let [kt, kh, kw] = self.kernel;
        let [st, sh, sw] = self.stride;
        let [pt, ph, pw] = self.pad_before;
        let [ot_n, oh_n, ow_n] = self.output;
        let mut out = 0;
        for ot in 0..ot_n {
            for oh in 0..oh_n {
                for ow in 0..ow_n {
                    for dt in 0..kt {
                        let it = (ot * st + dt) as isize - pt as isize;
                        if it < 0 || it >= it_n as isize {
                            continue;
                        }
                        for dh in 0..kh {
                            let ih = (oh * sh + dh) as isize - ph as isize;
                            if ih < 0 || ih >= ih_n as isize {
                                continue;
                            }
                            for dw in 0..kw {
                                let iw = (ow * sw + dw) as isize - pw as isize;
                                if iw < 0 || iw >= iw_n as isize {
                                    continue;
                                }
                                let tap = (dt * kh + dh) * kw + dw;
                                let inp = (it as usize * ih_n + ih as usize) * iw_n + iw as usize;
                                f(out, tap, inp);
                            }
                        }
                    }
                    out += 1;
                }
            }
        }
    }
}

fn expect_rank<T: Scalar>(op: &'static str, t: &Tensor<T>, rank: usize) -> Result<()> {
    if t.rank() != rank {
        return Err(Error::shape(
            op,
            format!("expected rank {rank}, got shape {:?}", t.shape()),
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Full convolution

/// Validates shapes and returns the geometry of a 3D convolution.
pub fn conv3d_geom<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    stride: [usize; 3],
    padding: Padding,
) -> Result<ConvGeom> {
    expect_rank("conv3d", input, 5)?;
    expect_rank("conv3d", kernel, 5)?;
    let (is, ks) = (input.shape(), kernel.shape());
    if ks[3] != is[4] {
        return Err(Error::shape(
            "conv3d",
            format!("input has {} channels, kernel expects {}", is[4], ks[3]),
        ));
    }
    if bias.shape() != [ks[4]] {
        return Err(Error::shape(
            "conv3d",
            format!("bias shape {:?}, expected [{}]", bias.shape(), ks[4]),
        ));
    }
    ConvGeom::new(is[0], [is[1], is[2], is[3]], [ks[0], ks[1], ks[2]], stride, padding)
}

pub(crate) fn conv3d_raw<T: Scalar>(
    x: &[T],
    k: &[T],
    b: &[T],
    g: &ConvGeom,
    cin: usize,
    cout: usize,
) -> Vec<T> {
    let in_len = g.in_positions() * cin;
    let out_pos = g.out_positions();
    let mut out = Vec::with_capacity(g.batch * out_pos * cout);
    for _ in 0..g.batch * out_pos {
        out.extend_from_slice(b);
    }
    for n in 0..g.batch {
        let xn = &x[n * in_len..(n + 1) * in_len];
        let on = &mut out[n * out_pos * cout..(n + 1) * out_pos * cout];
        g.for_each_tap(|o, tap, i| {
            let acc = &mut on[o * cout..(o + 1) * cout];
            let xrow = &xn[i * cin..(i + 1) * cin];
            let ktap = &k[tap * cin * cout..(tap + 1) * cin * cout];
            for (ci, &xv) in xrow.iter().enumerate() {
                let krow = &ktap[ci * cout..(ci + 1) * cout];
                for (a, &kv) in acc.iter_mut().zip(krow) {
                    *a = *a + xv * kv;
                }
            }
        });
    }
    out
}

/// 3D convolution: `input [N,T,H,W,Cin]`, `kernel [kt,kh,kw,Cin,Cout]`, `bias [Cout]`.
pub fn conv3d<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    stride: [usize; 3],
    padding: Padding,
) -> Result<Tensor<T>> {
    let g = conv3d_geom(input, kernel, bias, stride, padding)?;
    let (cin, cout) = (kernel.shape()[3], kernel.shape()[4]);
    let data = conv3d_raw(input.data(), kernel.data(), bias.data(), &g, cin, cout);
    let [ot, oh, ow] = g.output;
    Tensor::new(&[g.batch, ot, oh, ow, cout], data)
}

/// Validates shapes and returns the (unit-time) geometry of a 2D convolution.
pub fn conv2d_geom<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    stride: [usize; 2],
    padding: Padding,
) -> Result<ConvGeom> {
    expect_rank("conv2d", input, 4)?;
    expect_rank("conv2d", kernel, 4)?;
    let (is, ks) = (input.shape(), kernel.shape());
    if ks[2] != is[3] {
        return Err(Error::shape(
            "conv2d",
            format!("input has {} channels, kernel expects {}", is[3], ks[2]),
        ));
    }
    if bias.shape() != [ks[3]] {
        return Err(Error::shape(
            "conv2d",
            format!("bias shape {:?}, expected [{}]", bias.shape(), ks[3]),
        ));
    }
    ConvGeom::new(is[0], [1, is[1], is[2]], [1, ks[0], ks[1]], [1, stride[0], stride[1]], padding)
}

/// 2D convolution: `input [N,H,W,Cin]`, `kernel [kh,kw,Cin,Cout]`, `bias [Cout]`.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    stride: [usize; 2],
    padding: Padding,
) -> Result<Tensor<T>> {
    let g = conv2d_geom(input, kernel, bias, stride, padding)?;
    let (cin, cout) = (kernel.shape()[2], kernel.shape()[3]);
    let data = conv3d_raw(input.data(), kernel.data(), bias.data(), &g, cin, cout);
    Tensor::new(&[g.batch, g.output[1], g.output[2], cout], data)
}

pub(crate) struct ConvGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dk: Vec<T>,
    pub db: Vec<T>,
}

pub(crate) fn conv3d_backward<T: Scalar>(
    x: &[T],
    k: &[T],
    dy: &[T],
    g: &ConvGeom,
    cin: usize,
    cout: usize,
    need_dx: bool,
) -> ConvGrads<T> {
    let in_len = g.in_positions() * cin;
    let out_len = g.out_positions() * cout;
    let mut dx = need_dx.then(|| vec![T::zero(); x.len()]);
    let mut dk = vec![T::zero(); k.len()];
    let mut db = vec![T::zero(); cout];
    for n in 0..g.batch {
        let xn = &x[n * in_len..(n + 1) * in_len];
        let dyn_ = &dy[n * out_len..(n + 1) * out_len];
        for row in dyn_.chunks_exact(cout) {
            for (d, &v) in db.iter_mut().zip(row) {
                *d = *d + v;
            }
        }
        let mut dxn = dx.as_mut().map(|d| &mut d[n * in_len..(n + 1) * in_len]);
        g.for_each_tap(|o, tap, i| {
            let dyrow = &dyn_[o * cout..(o + 1) * cout];
            let xrow = &xn[i * cin..(i + 1) * cin];
            let base = tap * cin * cout;
            for ci in 0..cin {
                let xv = xrow[ci];
                let dkrow = &mut dk[base + ci * cout..base + (ci + 1) * cout];
                for (d, &gv) in dkrow.iter_mut().zip(dyrow) {
                    *d = *d + xv * gv;
                }
            }
            if let Some(dxn) = dxn.as_deref_mut() {
                let dxrow = &mut dxn[i * cin..(i + 1) * cin];
                for (ci, d) in dxrow.iter_mut().enumerate() {
                    let krow = &k[base + ci * cout..base + (ci + 1) * cout];
                    let mut s = T::zero();
                    for (&kv, &gv) in krow.iter().zip(dyrow) {
                        s = s + kv * gv;
                    }
                    *d = *d + s;
                }
            }
        });
    }
    ConvGrads { dx, dk, db }
}

// ---------------------------------------------------------------------------
// Depthwise convolution

pub(crate) fn depthwise_geom<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    stride: [usize; 2],
    padding: Padding,
) -> Result<ConvGeom> {
    expect_rank("depthwise_conv2d", input, 4)?;
    expect_rank("depthwise_conv2d", kernel, 3)?;
    let (is, ks) = (input.shape(), kernel.shape());
    if ks[2] != is[3] || bias.shape() != [is[3]] {
        return Err(Error::shape(
            "depthwise_conv2d",
            format!(
                "input {:?}, kernel {:?}, bias {:?}: channel counts must agree",
                is,
                ks,
                bias.shape()
            ),
        ));
    }
    ConvGeom::new(is[0], [1, is[1], is[2]], [1, ks[0], ks[1]], [1, stride[0], stride[1]], padding)
}

pub(crate) fn depthwise_raw<T: Scalar>(x: &[T], k: &[T], b: &[T], g: &ConvGeom, c: usize) -> Vec<T> {
    let in_len = g.in_positions() * c;
    let out_pos = g.out_positions();
    let mut out = Vec::with_capacity(g.batch * out_pos * c);
    for _ in 0..g.batch * out_pos {
        out.extend_from_slice(b);
    }
    for n in 0..g.batch {
        let xn = &x[n * in_len..(n + 1) * in_len];
        let on = &mut out[n * out_pos * c..(n + 1) * out_pos * c];
        g.for_each_tap(|o, tap, i| {
            let acc = &mut on[o * c..(o + 1) * c];
            let xrow = &xn[i * c..(i + 1) * c];
            let krow = &k[tap * c..(tap + 1) * c];
            for ((a, &xv), &kv) in acc.iter_mut().zip(xrow).zip(krow) {
                *a = *a + xv * kv;
            }
        });
    }
    out
}

/// Per-channel 2D convolution: `input [N,H,W,C]`, `kernel [kh,kw,C]`, `bias [C]`.
pub fn depthwise_conv2d<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    stride: [usize; 2],
    padding: Padding,
) -> Result<Tensor<T>> {
    let g = depthwise_geom(input, kernel, bias, stride, padding)?;
    let c = input.channels();
    let data = depthwise_raw(input.data(), kernel.data(), bias.data(), &g, c);
    Tensor::new(&[g.batch, g.output[1], g.output[2], c], data)
}

pub(crate) fn depthwise_backward<T: Scalar>(
    x: &[T],
    k: &[T],
    dy: &[T],
    g: &ConvGeom,
    c: usize,
    need_dx: bool,
) -> ConvGrads<T> {
    let in_len = g.in_positions() * c;
    let out_len = g.out_positions() * c;
    let mut dx = need_dx.then(|| vec![T::zero(); x.len()]);
    let mut dk = vec![T::zero(); k.len()];
    let mut db = vec![T::zero(); c];
    for n in 0..g.batch {
        let xn = &x[n * in_len..(n + 1) * in_len];
        let dyn_ = &dy[n * out_len..(n + 1) * out_len];
        for row in dyn_.chunks_exact(c) {
            for (d, &v) in db.iter_mut().zip(row) {
                *d = *d + v;
            }
        }
        let mut dxn = dx.as_mut().map(|d| &mut d[n * in_len..(n + 1) * in_len]);
        g.for_each_tap(|o, tap, i| {
            let dyrow = &dyn_[o * c..(o + 1) * c];
            let xrow = &xn[i * c..(i + 1) * c];
            let dkrow = &mut dk[tap * c..(tap + 1) * c];
            for ((d, &xv), &gv) in dkrow.iter_mut().zip(xrow).zip(dyrow) {
                *d = *d + xv * gv;
            }
            if let Some(dxn) = dxn.as_deref_mut() {
                let krow = &k[tap * c..(tap + 1) * c];
                let dxrow = &mut dxn[i * c..(i + 1) * c];
                for ((d, &kv), &gv) in dxrow.iter_mut().zip(krow).zip(dyrow) {
                    *d = *d + kv * gv;
                }
            }
        });
    }
    ConvGrads { dx, dk, db }
}

// ---------------------------------------------------------------------------
// Batch normalization

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.99;

/// Per-channel batch-norm parameters and running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    /// Weight kept by the running statistics on each update.
    pub momentum: T,
    pub epsilon: T,
    pub mode: Mode,
}

impl<T: Scalar> BatchNormState<T> {
    /// Identity-initialized state: gamma 1, beta 0, running mean 0, running var 1.
    pub fn new(channels: usize) -> Self {
        BatchNormState {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum: T::of(BN_MOMENTUM),
            epsilon: T::of(BN_EPSILON),
            mode: Mode::Train,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels();
        if [self.beta.len(), self.running_mean.len(), self.running_var.len()]
            .iter()
            .any(|&l| l != c)
        {
            return Err(Error::CorruptedState("per-channel vectors differ in length".into()));
        }
        if self.running_var.iter().any(|v| !(*v >= T::zero())) {
            return Err(Error::CorruptedState("running variance is negative or NaN".into()));
        }
        if !(self.momentum > T::zero() && self.momentum < T::one()) || !(self.epsilon > T::zero()) {
            return Err(Error::CorruptedState("momentum must lie in (0,1) and epsilon be positive".into()));
        }
        Ok(())
    }
}

/// Batch statistics from a train-mode pass.
#[derive(Debug, Clone)]
pub(crate) struct BnTrainOut<T> {
    pub y: Vec<T>,
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

pub(crate) fn bn_train_raw<T: Scalar>(x: &[T], gamma: &[T], beta: &[T], eps: T) -> BnTrainOut<T> {
    let c = gamma.len();
    let m = (x.len() / c) as f64;
    let mut sum = vec![0.0f64; c];
    for row in x.chunks_exact(c) {
        for (s, v) in sum.iter_mut().zip(row) {
            *s += v.as_f64();
        }
    }
    let mean64: Vec<f64> = sum.iter().map(|s| s / m).collect();
    let mut sq = vec![0.0f64; c];
    for row in x.chunks_exact(c) {
        for ((s, v), mu) in sq.iter_mut().zip(row).zip(&mean64) {
            let d = v.as_f64() - mu;
            *s += d * d;
        }
    }
    let var64: Vec<f64> = sq.iter().map(|s| s / m).collect();
    let inv_std: Vec<T> = var64
        .iter()
        .map(|v| T::of(1.0 / (v + eps.as_f64()).sqrt()))
        .collect();
    let mean: Vec<T> = mean64.iter().map(|&v| T::of(v)).collect();
    let mut xhat = Vec::with_capacity(x.len());
    let mut y = Vec::with_capacity(x.len());
    for row in x.chunks_exact(c) {
        for ch in 0..c {
            let h = (row[ch] - mean[ch]) * inv_std[ch];
            xhat.push(h);
            y.push(gamma[ch] * h + beta[ch]);
        }
    }
    BnTrainOut {
        y,
        xhat,
        inv_std,
        mean,
        var: var64.iter().map(|&v| T::of(v)).collect(),
    }
}

pub(crate) fn bn_eval_raw<T: Scalar>(
    x: &[T],
    gamma: &[T],
    beta: &[T],
    mean: &[T],
    var: &[T],
    eps: T,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let c = gamma.len();
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = Vec::with_capacity(x.len());
    let mut y = Vec::with_capacity(x.len());
    for row in x.chunks_exact(c) {
        for ch in 0..c {
            let h = (row[ch] - mean[ch]) * inv_std[ch];
            xhat.push(h);
            y.push(gamma[ch] * h + beta[ch]);
        }
    }
    (y, xhat, inv_std)
}

/// Returns `(dx, dgamma, dbeta)`.
pub(crate) fn bn_train_backward<T: Scalar>(
    dy: &[T],
    xhat: &[T],
    gamma: &[T],
    inv_std: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let c = gamma.len();
    let m = T::from_usize(dy.len() / c).unwrap();
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for (g, h) in dy.chunks_exact(c).zip(xhat.chunks_exact(c)) {
        for ch in 0..c {
            dbeta[ch] = dbeta[ch] + g[ch];
            dgamma[ch] = dgamma[ch] + g[ch] * h[ch];
        }
    }
    let mut dx = Vec::with_capacity(dy.len());
    for (g, h) in dy.chunks_exact(c).zip(xhat.chunks_exact(c)) {
        for ch in 0..c {
            let scale = gamma[ch] * inv_std[ch] / m;
            dx.push(scale * (m * g[ch] - dbeta[ch] - h[ch] * dgamma[ch]));
        }
    }
    (dx, dgamma, dbeta)
}

pub(crate) fn bn_eval_backward<T: Scalar>(
    dy: &[T],
    xhat: &[T],
    gamma: &[T],
    inv_std: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let c = gamma.len();
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    let mut dx = Vec::with_capacity(dy.len());
    for (g, h) in dy.chunks_exact(c).zip(xhat.chunks_exact(c)) {
        for ch in 0..c {
            dbeta[ch] = dbeta[ch] + g[ch];
            dgamma[ch] = dgamma[ch] + g[ch] * h[ch];
            dx.push(g[ch] * gamma[ch] * inv_std[ch]);
        }
    }
    (dx, dgamma, dbeta)
}

/// Applies batch normalization over every non-channel axis.
///
/// In train mode the batch statistics normalize the input and are folded into
/// the running statistics; in eval mode only the running statistics are used.
pub fn batch_norm<T: Scalar>(input: &Tensor<T>, state: &mut BatchNormState<T>) -> Result<Tensor<T>> {
    state.validate()?;
    let c = input.channels();
    if c != state.channels() {
        return Err(Error::shape(
            "batch_norm",
            format!("input has {c} channels, state has {}", state.channels()),
        ));
    }
    match state.mode {
        Mode::Train => {
            if input.numel() / c < 2 {
                return Err(Error::shape(
                    "batch_norm",
                    "train mode needs at least two values per channel",
                ));
            }
            let out = bn_train_raw(input.data(), &state.gamma, &state.beta, state.epsilon);
            let mom = state.momentum;
            for ch in 0..c {
                state.running_mean[ch] = mom * state.running_mean[ch] + (T::one() - mom) * out.mean[ch];
                state.running_var[ch] = mom * state.running_var[ch] + (T::one() - mom) * out.var[ch];
            }
            Tensor::new(input.shape(), out.y)
        }
        Mode::Eval => {
            let (y, _, _) = bn_eval_raw(
                input.data(),
                &state.gamma,
                &state.beta,
                &state.running_mean,
                &state.running_var,
                state.epsilon,
            );
            Tensor::new(input.shape(), y)
        }
    }
}

// ---------------------------------------------------------------------------
// Activations

/// SELU constants. Fixed, never trained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeluParams {
    pub lambda: f64,
    pub alpha: f64,
}

impl SeluParams {
    pub const STANDARD: SeluParams = SeluParams {
        lambda: 1.0507,
        alpha: 1.6733,
    };

    /// Infimum of the SELU output, `-lambda * alpha`.
    pub fn lower_bound(&self) -> f64 {
        -self.lambda * self.alpha
    }
}

impl Default for SeluParams {
    fn default() -> Self {
        Self::STANDARD
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Selu,
    Relu,
}

#[inline]
pub fn selu<T: Scalar>(x: T, p: SeluParams) -> T {
    let lambda = T::of(p.lambda);
    if x > T::zero() {
        lambda * x
    } else {
        let alpha = T::of(p.alpha);
        lambda * (alpha * x.exp() - alpha)
    }
}

#[inline]
pub(crate) fn selu_grad<T: Scalar>(x: T, p: SeluParams) -> T {
    let lambda = T::of(p.lambda);
    if x > T::zero() {
        lambda
    } else {
        lambda * T::of(p.alpha) * x.exp()
    }
}

pub fn activation<T: Scalar>(x: &Tensor<T>, kind: Activation, params: SeluParams) -> Tensor<T> {
    match kind {
        Activation::Selu => x.map(|v| selu(v, params)),
        Activation::Relu => x.map(|v| v.max(T::zero())),
    }
}

// ---------------------------------------------------------------------------
// Shape plumbing

fn leading(shape: &[usize]) -> &[usize] {
    &shape[..shape.len() - 1]
}

pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() != b.rank() || leading(a.shape()) != leading(b.shape()) {
        return Err(Error::shape(
            "concat_channels",
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    let (ca, cb) = (a.channels(), b.channels());
    let mut data = Vec::with_capacity(a.numel() + b.numel());
    for (ra, rb) in a.data().chunks_exact(ca).zip(b.data().chunks_exact(cb)) {
        data.extend_from_slice(ra);
        data.extend_from_slice(rb);
    }
    let mut shape = a.shape().to_vec();
    *shape.last_mut().unwrap() = ca + cb;
    Tensor::new(&shape, data)
}

/// Splits the channel axis at `at`, the inverse of [`concat_channels`].
pub fn split_channels<T: Scalar>(x: &Tensor<T>, at: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let c = x.channels();
    if at == 0 || at >= c {
        return Err(Error::shape(
            "split_channels",
            format!("split point {at} outside 1..{c}"),
        ));
    }
    let mut a = Vec::with_capacity(x.numel() / c * at);
    let mut b = Vec::with_capacity(x.numel() / c * (c - at));
    for row in x.data().chunks_exact(c) {
        a.extend_from_slice(&row[..at]);
        b.extend_from_slice(&row[at..]);
    }
    let mut sa = x.shape().to_vec();
    let mut sb = sa.clone();
    *sa.last_mut().unwrap() = at;
    *sb.last_mut().unwrap() = c - at;
    Ok((Tensor::new(&sa, a)?, Tensor::new(&sb, b)?))
}

/// `[N,T,H,W,C] -> [N,H,W,T*C]`; output channel `t*C + c` holds time step `t`, channel `c`.
pub fn fold_time<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    expect_rank("fold_time", x, 5)?;
    let [n, t, h, w, c] = x.shape().try_into().unwrap();
    let hw = h * w;
    let mut out = vec![T::zero(); x.numel()];
    for ni in 0..n {
        for ti in 0..t {
            for p in 0..hw {
                let src = ((ni * t + ti) * hw + p) * c;
                let dst = ((ni * hw + p) * t + ti) * c;
                out[dst..dst + c].copy_from_slice(&x.data()[src..src + c]);
            }
        }
    }
    Tensor::new(&[n, h, w, t * c], out)
}

pub(crate) fn unfold_time<T: Scalar>(g: &[T], shape5: &[usize]) -> Vec<T> {
    let [n, t, h, w, c] = shape5.try_into().unwrap();
    let hw = h * w;
    let mut out = vec![T::zero(); g.len()];
    for ni in 0..n {
        for ti in 0..t {
            for p in 0..hw {
                let src = ((ni * hw + p) * t + ti) * c;
                let dst = ((ni * t + ti) * hw + p) * c;
                out[dst..dst + c].copy_from_slice(&g[src..src + c]);
            }
        }
    }
    out
}

/// Folds both streams' time axes into channels and concatenates them.
pub fn temporal_fuse<T: Scalar>(spatial: &Tensor<T>, temporal: &Tensor<T>) -> Result<Tensor<T>> {
    expect_rank("temporal_fuse", spatial, 5)?;
    expect_rank("temporal_fuse", temporal, 5)?;
    let (s, t) = (spatial.shape(), temporal.shape());
    if s[0] != t[0] || s[2..] != t[2..] {
        return Err(Error::shape(
            "temporal_fuse",
            format!("{s:?} vs {t:?}: N, H, W and C must agree"),
        ));
    }
    concat_channels(&fold_time(spatial)?, &fold_time(temporal)?)
}

/// Mean over every axis except the first and the channel axis: `[N,...,C] -> [N,C]`.
pub fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    if x.rank() < 3 {
        return Err(Error::shape("global_avg_pool", format!("{:?}", x.shape())));
    }
    let n = x.shape()[0];
    let c = x.channels();
    let per = x.numel() / (n * c);
    let scale = T::one() / T::from_usize(per).unwrap();
    let mut out = vec![T::zero(); n * c];
    for (ni, block) in x.data().chunks_exact(per * c).enumerate() {
        let acc = &mut out[ni * c..(ni + 1) * c];
        for row in block.chunks_exact(c) {
            for (a, &v) in acc.iter_mut().zip(row) {
                *a = *a + v;
            }
        }
        acc.iter_mut().for_each(|a| *a = *a * scale);
    }
    Tensor::new(&[n, c], out)
}

/// Affine map `x W + b` for `x [N,D]`, `W [D,K]`, `b [K]`.
pub fn dense<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    expect_rank("dense", x, 2)?;
    expect_rank("dense", w, 2)?;
    let (n, d) = (x.shape()[0], x.shape()[1]);
    let k = w.shape()[1];
    if w.shape()[0] != d || b.shape() != [k] {
        return Err(Error::shape(
            "dense",
            format!("x {:?}, W {:?}, b {:?}", x.shape(), w.shape(), b.shape()),
        ));
    }
    let mut out = Vec::with_capacity(n * k);
    for row in x.data().chunks_exact(d) {
        let start = out.len();
        out.extend_from_slice(b.data());
        let acc = &mut out[start..];
        for (i, &xv) in row.iter().enumerate() {
            for (a, &wv) in acc.iter_mut().zip(&w.data()[i * k..(i + 1) * k]) {
                *a = *a + xv * wv;
            }
        }
    }
    Tensor::new(&[n, k], out)
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    expect_rank("softmax", logits, 2)?;
    let k = logits.shape()[1];
    let mut out = Vec::with_capacity(logits.numel());
    for row in logits.data().chunks_exact(k) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let start = out.len();
        out.extend(row.iter().map(|&v| (v - m).exp()));
        let z: T = out[start..].iter().copied().sum();
        out[start..].iter_mut().for_each(|v| *v = *v / z);
    }
    Tensor::new(logits.shape(), out)
}

pub(crate) fn check_labels(labels: &[usize], n: usize, k: usize) -> Result<()> {
    if labels.len() != n {
        return Err(Error::shape(
            "softmax_cross_entropy",
            format!("{n} logit rows but {} labels", labels.len()),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::InvalidLabel {
            label: bad,
            classes: k,
        });
    }
    Ok(())
}

/// Mean negative log-likelihood of `labels` under `softmax(logits)`.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<T> {
    expect_rank("softmax_cross_entropy", logits, 2)?;
    let (n, k) = (logits.shape()[0], logits.shape()[1]);
    check_labels(labels, n, k)?;
    let mut total = T::zero();
    for (row, &l) in logits.data().chunks_exact(k).zip(labels) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = row.iter().map(|&v| (v - m).exp()).sum::<T>().ln() + m;
        total = total + (lse - row[l]);
    }
    Ok(total / T::from_usize(n).unwrap())
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::shape("add", format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    Tensor::new(a.shape(), data)
}
