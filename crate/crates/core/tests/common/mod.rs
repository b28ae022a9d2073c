//! Oracles and gradient cases shared by the integration tests.

#![allow(dead_code)]

use intercnn::autodiff::BatchStats;
use intercnn::gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
use intercnn::tensor::ops::Padding;
use intercnn::tensor::{init_tensor, InitScheme, Tensor};
use intercnn::{Result, Scalar, Tape, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn uniform(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f32> {
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap()
}

pub fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
    init_tensor(shape, InitScheme::LecunNormal { fan_in: 1 }, seed).unwrap()
}

/// Leading pad and output length of one axis, computed from scratch.
fn axis(input: usize, k: usize, s: usize, padding: Padding) -> (usize, usize) {
    match padding {
        Padding::Valid => ((input - k) / s + 1, 0),
        Padding::Same => {
            let out = (input + s - 1) / s;
            let need = ((out - 1) * s + k).saturating_sub(input);
            (out, need / 2)
        }
    }
}

/// Direct 3D convolution over `[N,T,H,W,Ci]` with kernel `[kt,kh,kw,Ci,Co]`.
pub fn naive_conv3d<T: Scalar>(x: &Tensor<T>, k: &Tensor<T>, b: &Tensor<T>, stride: [usize; 3], padding: Padding) -> Tensor<T> {
    let [n, t, h, w, ci] = x.shape().try_into().unwrap();
    let [kt, kh, kw, _, co] = k.shape().try_into().unwrap();
    let (ot, pt) = axis(t, kt, stride[0], padding);
    let (oh, ph) = axis(h, kh, stride[1], padding);
    let (ow, pw) = axis(w, kw, stride[2], padding);
    let xd = |a: usize, b: usize, c: usize, d: usize, e: usize| x.data()[(((a * t + b) * h + c) * w + d) * ci + e];
    let kd = |a: usize, b: usize, c: usize, d: usize, e: usize| k.data()[(((a * kh + b) * kw + c) * ci + d) * co + e];
    let mut out = Vec::new();
    for ni in 0..n {
        for oti in 0..ot {
            for ohi in 0..oh {
                for owi in 0..ow {
                    for o in 0..co {
                        let mut acc = b.data()[o];
                        for a in 0..kt {
                            for bb in 0..kh {
                                for c in 0..kw {
                                    let ti = (oti * stride[0] + a) as isize - pt as isize;
                                    let hi = (ohi * stride[1] + bb) as isize - ph as isize;
                                    let wi = (owi * stride[2] + c) as isize - pw as isize;
                                    if ti < 0 || hi < 0 || wi < 0 || ti >= t as isize || hi >= h as isize || wi >= w as isize {
                                        continue;
                                    }
                                    for i in 0..ci {
                                        acc = acc + xd(ni, ti as usize, hi as usize, wi as usize, i) * kd(a, bb, c, i, o);
                                    }
                                }
                            }
                        }
                        out.push(acc);
                    }
                }
            }
        }
    }
    Tensor::new(&[n, ot, oh, ow, co], out).unwrap()
}

pub fn naive_conv2d<T: Scalar>(x: &Tensor<T>, k: &Tensor<T>, b: &Tensor<T>, stride: [usize; 2], padding: Padding) -> Tensor<T> {
    let s = x.shape();
    let ks = k.shape();
    let x5 = x.clone().reshape(&[s[0], 1, s[1], s[2], s[3]]).unwrap();
    let k5 = k.clone().reshape(&[1, ks[0], ks[1], ks[2], ks[3]]).unwrap();
    let y = naive_conv3d(&x5, &k5, b, [1, stride[0], stride[1]], padding);
    let ys = y.shape().to_vec();
    y.reshape(&[ys[0], ys[2], ys[3], ys[4]]).unwrap()
}

/// Depthwise 2D convolution with kernel `[kh,kw,C]`, one channel at a time.
pub fn naive_depthwise<T: Scalar>(x: &Tensor<T>, k: &Tensor<T>, b: &Tensor<T>, stride: [usize; 2], padding: Padding) -> Tensor<T> {
    let [n, h, w, c] = x.shape().try_into().unwrap();
    let [kh, kw, _] = k.shape().try_into().unwrap();
    let (oh, ph) = axis(h, kh, stride[0], padding);
    let (ow, pw) = axis(w, kw, stride[1], padding);
    let mut out = Vec::new();
    for ni in 0..n {
        for ohi in 0..oh {
            for owi in 0..ow {
                for ch in 0..c {
                    let mut acc = b.data()[ch];
                    for a in 0..kh {
                        for bb in 0..kw {
                            let hi = (ohi * stride[0] + a) as isize - ph as isize;
                            let wi = (owi * stride[1] + bb) as isize - pw as isize;
                            if hi < 0 || wi < 0 || hi >= h as isize || wi >= w as isize {
                                continue;
                            }
                            let xi = ((ni * h + hi as usize) * w + wi as usize) * c + ch;
                            acc = acc + x.data()[xi] * k.data()[(a * kw + bb) * c + ch];
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    Tensor::new(&[n, oh, ow, c], out).unwrap()
}

pub fn naive_dense<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let [n, d] = x.shape().try_into().unwrap();
    let k = w.shape()[1];
    let mut out = Vec::new();
    for r in 0..n {
        for j in 0..k {
            let mut acc = b.data()[j];
            for i in 0..d {
                acc = acc + x.data()[r * d + i] * w.data()[i * k + j];
            }
            out.push(acc);
        }
    }
    Tensor::new(&[n, k], out).unwrap()
}

/// Largest `|a - b| / max(1, |b|)`.
pub fn scaled_error<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x.as_f64() - y.as_f64()).abs() / y.as_f64().abs().max(1.0))
        .fold(0.0, f64::max)
}

/// Weighted sum with fixed random weights, so every output element matters.
pub fn probe(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let w = tape.constant(randn(tape.value(y).shape(), seed));
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}

/// Keeps values away from the activation kinks at 0.
fn off_zero(t: Tensor<f64>) -> Tensor<f64> {
    t.map(|v| if v.abs() < 0.1 { v.signum() * 0.1 + v } else { v })
}

type Case = (&'static str, Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>, Vec<Tensor<f64>>);

/// One finite-difference case per differentiable tape operation.
pub fn op_cases() -> Vec<Case> {
    let same = Padding::Same;
    let valid = Padding::Valid;
    let mut cases: Vec<Case> = Vec::new();
    cases.push((
        "conv3d",
        Box::new(move |t, v| {
            let y = t.conv3d(v[0], v[1], v[2], [1, 2, 1], same)?;
            probe(t, y, 1)
        }),
        vec![randn(&[2, 3, 4, 3, 2], 1), randn(&[3, 2, 2, 2, 3], 2), randn(&[3], 3)],
    ));
    cases.push((
        "conv2d",
        Box::new(move |t, v| {
            let y = t.conv2d(v[0], v[1], v[2], [2, 1], valid)?;
            probe(t, y, 2)
        }),
        vec![randn(&[2, 5, 4, 2], 4), randn(&[3, 2, 2, 3], 5), randn(&[3], 6)],
    ));
    cases.push((
        "depthwise_conv2d",
        Box::new(move |t, v| {
            let y = t.depthwise_conv2d(v[0], v[1], v[2], [2, 2], same)?;
            probe(t, y, 3)
        }),
        vec![randn(&[2, 5, 5, 3], 7), randn(&[3, 3, 3], 8), randn(&[3], 9)],
    ));
    cases.push((
        "batch_norm_train",
        Box::new(|t, v| {
            let (y, _stats): (Var, BatchStats<f64>) = t.batch_norm_train(v[0], v[1], v[2], 1e-5)?;
            probe(t, y, 4)
        }),
        vec![randn(&[3, 2, 2, 2], 10), randn(&[2], 11), randn(&[2], 12)],
    ));
    cases.push((
        "batch_norm_eval",
        Box::new(|t, v| {
            let y = t.batch_norm_eval(v[0], v[1], v[2], &[0.3, -0.2], &[1.5, 0.7], 1e-5)?;
            probe(t, y, 5)
        }),
        vec![randn(&[2, 2, 2, 2], 13), randn(&[2], 14), randn(&[2], 15)],
    ));
    cases.push((
        "selu",
        Box::new(|t, v| {
            let y = t.selu(v[0]);
            probe(t, y, 6)
        }),
        vec![off_zero(randn(&[3, 4], 16))],
    ));
    cases.push((
        "relu",
        Box::new(|t, v| {
            let y = t.relu(v[0]);
            probe(t, y, 7)
        }),
        vec![off_zero(randn(&[3, 4], 17))],
    ));
    cases.push((
        "add",
        Box::new(|t, v| {
            let y = t.add(v[0], v[1])?;
            probe(t, y, 8)
        }),
        vec![randn(&[2, 3], 18), randn(&[2, 3], 19)],
    ));
    cases.push((
        "mul",
        Box::new(|t, v| {
            let y = t.mul(v[0], v[1])?;
            probe(t, y, 9)
        }),
        vec![randn(&[2, 3], 20), randn(&[2, 3], 21)],
    ));
    cases.push((
        "scale",
        Box::new(|t, v| {
            let y = t.scale(v[0], -1.7);
            probe(t, y, 10)
        }),
        vec![randn(&[4], 22)],
    ));
    cases.push((
        "concat_channels",
        Box::new(|t, v| {
            let y = t.concat_channels(v[0], v[1])?;
            probe(t, y, 11)
        }),
        vec![randn(&[2, 2, 2], 23), randn(&[2, 2, 3], 24)],
    ));
    cases.push((
        "fold_time",
        Box::new(|t, v| {
            let y = t.fold_time(v[0])?;
            probe(t, y, 12)
        }),
        vec![randn(&[1, 3, 2, 2, 2], 25)],
    ));
    cases.push((
        "temporal_fuse",
        Box::new(|t, v| {
            let y = t.temporal_fuse(v[0], v[1])?;
            probe(t, y, 13)
        }),
        vec![randn(&[2, 3, 2, 2, 2], 26), randn(&[2, 2, 2, 2, 2], 27)],
    ));
    cases.push((
        "global_avg_pool",
        Box::new(|t, v| {
            let y = t.global_avg_pool(v[0])?;
            probe(t, y, 14)
        }),
        vec![randn(&[2, 3, 3, 2], 28)],
    ));
    cases.push((
        "dense",
        Box::new(|t, v| {
            let y = t.dense(v[0], v[1], v[2])?;
            probe(t, y, 15)
        }),
        vec![randn(&[3, 4], 29), randn(&[4, 2], 30), randn(&[2], 31)],
    ));
    cases.push((
        "softmax_cross_entropy",
        Box::new(|t, v| t.softmax_cross_entropy(v[0], &[2, 0, 4])),
        vec![randn(&[3, 5], 32)],
    ));
    cases.push(("sum", Box::new(|t, v| Ok(t.sum(v[0]))), vec![randn(&[2, 2], 33)]));
    cases
}

pub fn check_case(case: &Case) -> GradCheckReport {
    grad_check(&case.1, &case.2, &GradCheckConfig::default()).unwrap()
}
