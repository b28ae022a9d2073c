//! Dense Horn–Schunck optical flow between adjacent grayscale frames.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_SMOOTHNESS: f64 = 0.5;
pub const DEFAULT_ITERATIONS: usize = 100;

/// Per-pixel motion in pixels/frame, `[H, W]` row-major for each component.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub height: usize,
    pub width: usize,
    /// Vertical component (down is positive).
    pub d_v: Vec<f64>,
    /// Horizontal component (right is positive).
    pub d_h: Vec<f64>,
}

impl FlowField {
    fn zeros(height: usize, width: usize) -> Self {
        FlowField {
            height,
            width,
            d_v: vec![0.0; height * width],
            d_h: vec![0.0; height * width],
        }
    }

    /// `[H, W, 2]` tensor with channels `(d_v, d_h)`.
    pub fn to_tensor(&self) -> Tensor<f32> {
        let data = self
            .d_v
            .iter()
            .zip(&self.d_h)
            .flat_map(|(&v, &h)| [v as f32, h as f32])
            .collect();
        Tensor::new(&[self.height, self.width, 2], data).expect("flow dims")
    }

    pub fn is_finite(&self) -> bool {
        self.d_v.iter().chain(&self.d_h).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowParams {
    /// Regularization weight (alpha).
    pub smoothness: f64,
    pub iterations: usize,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams {
            smoothness: DEFAULT_SMOOTHNESS,
            iterations: DEFAULT_ITERATIONS,
        }
    }
}

/// Luma grayscale of an `[H, W, 3]` frame.
pub fn grayscale(frame: &Tensor<f32>) -> Result<Tensor<f32>> {
    let s = frame.shape();
    if s.len() != 3 || s[2] != 3 {
        return Err(Error::shape("grayscale", format!("expected [H,W,3], got {s:?}")));
    }
    let data = frame
        .data()
        .chunks_exact(3)
        .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
        .collect();
    Tensor::new(&s[..2], data)
}

/// Neighbour offsets and weights of the flow-averaging stencil.
const STENCIL: [(isize, isize, f64); 8] = [
    (-1, 0, 1.0 / 6.0),
    (1, 0, 1.0 / 6.0),
    (0, -1, 1.0 / 6.0),
    (0, 1, 1.0 / 6.0),
    (-1, -1, 1.0 / 12.0),
    (-1, 1, 1.0 / 12.0),
    (1, -1, 1.0 / 12.0),
    (1, 1, 1.0 / 12.0),
];

struct Derivs {
    ix: Vec<f64>,
    iy: Vec<f64>,
    it: Vec<f64>,
}

fn clamp(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

fn derivatives(prev: &[f32], next: &[f32], h: usize, w: usize) -> Derivs {
    let avg: Vec<f64> = prev.iter().zip(next).map(|(&a, &b)| 0.5 * (a as f64 + b as f64)).collect();
    let mut d = Derivs {
        ix: vec![0.0; h * w],
        iy: vec![0.0; h * w],
        it: vec![0.0; h * w],
    };
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let (xl, xr) = (clamp(x as isize - 1, w), clamp(x as isize + 1, w));
            let (yu, yd) = (clamp(y as isize - 1, h), clamp(y as isize + 1, h));
            d.ix[i] = 0.5 * (avg[y * w + xr] - avg[y * w + xl]);
            d.iy[i] = 0.5 * (avg[yd * w + x] - avg[yu * w + x]);
            d.it[i] = next[i] as f64 - prev[i] as f64;
        }
    }
    d
}

fn neighbour_mean(f: &[f64], h: usize, w: usize, y: usize, x: usize) -> f64 {
    STENCIL
        .iter()
        .map(|&(dy, dx, wt)| wt * f[clamp(y as isize + dy, h) * w + clamp(x as isize + dx, w)])
        .sum()
}

fn check_pair(prev: &Tensor<f32>, next: &Tensor<f32>) -> Result<(usize, usize)> {
    if prev.rank() != 2 || prev.shape() != next.shape() {
        return Err(Error::shape(
            "horn_schunck",
            format!("frames must be equal [H,W], got {:?} and {:?}", prev.shape(), next.shape()),
        ));
    }
    if !prev.is_finite() || !next.is_finite() {
        return Err(Error::InvalidInput("non-finite pixel value".into()));
    }
    Ok((prev.shape()[0], prev.shape()[1]))
}

/// Runs `iterations` Jacobi sweeps from zero flow, calling `observe` with the
/// field after each sweep.
pub fn horn_schunck_with(
    prev: &Tensor<f32>,
    next: &Tensor<f32>,
    params: FlowParams,
    mut observe: impl FnMut(usize, &FlowField),
) -> Result<FlowField> {
    let (h, w) = check_pair(prev, next)?;
    if !(params.smoothness > 0.0 && params.smoothness.is_finite()) || params.iterations == 0 {
        return Err(Error::InvalidInput(format!(
            "smoothness must be > 0 and iterations >= 1, got {} / {}",
            params.smoothness, params.iterations
        )));
    }
    let d = derivatives(prev.data(), next.data(), h, w);
    let a2 = params.smoothness * params.smoothness;
    let mut flow = FlowField::zeros(h, w);
    let mut u = vec![0.0; h * w];
    let mut v = vec![0.0; h * w];
    for iter in 0..params.iterations {
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let ub = neighbour_mean(&flow.d_h, h, w, y, x);
                let vb = neighbour_mean(&flow.d_v, h, w, y, x);
                let (ix, iy) = (d.ix[i], d.iy[i]);
                let t = (ix * ub + iy * vb + d.it[i]) / (a2 + ix * ix + iy * iy);
                u[i] = ub - ix * t;
                v[i] = vb - iy * t;
            }
        }
        std::mem::swap(&mut flow.d_h, &mut u);
        std::mem::swap(&mut flow.d_v, &mut v);
        observe(iter, &flow);
    }
    Ok(flow)
}

pub fn horn_schunck(prev: &Tensor<f32>, next: &Tensor<f32>, params: FlowParams) -> Result<FlowField> {
    horn_schunck_with(prev, next, params, |_, _| {})
}

/// The discrete objective minimized by the Jacobi sweeps: squared brightness
/// constancy residual plus `alpha^2` times the stencil-weighted squared flow
/// differences (each neighbour pair counted once).
pub fn hs_energy(prev: &Tensor<f32>, next: &Tensor<f32>, flow: &FlowField, smoothness: f64) -> Result<f64> {
    let (h, w) = check_pair(prev, next)?;
    let d = derivatives(prev.data(), next.data(), h, w);
    let a2 = smoothness * smoothness;
    let mut e = 0.0;
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let r = d.ix[i] * flow.d_h[i] + d.iy[i] * flow.d_v[i] + d.it[i];
            e += r * r;
            let mut s = 0.0;
            for &(dy, dx, wt) in &STENCIL {
                let j = clamp(y as isize + dy, h) * w + clamp(x as isize + dx, w);
                s += wt * ((flow.d_h[i] - flow.d_h[j]).powi(2) + (flow.d_v[i] - flow.d_v[j]).powi(2));
            }
            e += 0.5 * a2 * s;
        }
    }
    Ok(e)
}

/// Flow between each adjacent pair of `[T, H, W]` grayscale frames.
pub fn flow_sequence(frames: &Tensor<f32>, params: FlowParams) -> Result<Vec<FlowField>> {
    let s = frames.shape();
    if s.len() != 3 {
        return Err(Error::shape("flow_sequence", format!("expected [T,H,W], got {s:?}")));
    }
    if s[0] < 2 {
        return Err(Error::InsufficientFrames { needed: 2, got: s[0] });
    }
    (0..s[0] - 1)
        .map(|t| {
            let a = frames.slice_outer(t, 1)?.reshape(&s[1..])?;
            let b = frames.slice_outer(t + 1, 1)?.reshape(&s[1..])?;
            horn_schunck(&a, &b, params)
        })
        .collect()
}

/// Plain-text quiver rows `x y d_h d_v` on every `step`-th pixel.
pub fn quiver_text(flow: &FlowField, step: usize) -> String {
    let step = step.max(1);
    let mut out = String::from("# x y d_h d_v\n");
    for y in (0..flow.height).step_by(step) {
        for x in (0..flow.width).step_by(step) {
            let i = y * flow.width + x;
            writeln!(out, "{x} {y} {} {}", flow.d_h[i], flow.d_v[i]).unwrap();
        }
    }
    out
}
