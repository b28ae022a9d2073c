use super::*;
use crate::gradcheck::{grad_check, GradCheckConfig};
use crate::tensor::ops::{activation, concat_channels, Activation, SeluParams, BN_EPSILON};
use crate::tensor::{init_tensor, InitScheme};

const KINDS: [fn() -> BlockKind; 3] = [|| BlockKind::Vanilla, BlockKind::mobilenet, BlockKind::mobilenet_v2];

fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
    init_tensor(shape, InitScheme::LecunNormal { fan_in: 1 }, seed).unwrap()
}

fn zero_kernels<T: Scalar>(store: &mut ParamStore<T>) {
    for (i, name) in store.names().to_vec().iter().enumerate() {
        if name.ends_with(".kernel") {
            store.values_mut()[i].data_mut().fill(T::zero());
        }
    }
}

/// Weighted sum so that the loss is not invariant under BN's normalization.
fn probe(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let w = tape.constant(randn(tape.value(y).shape(), seed));
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}

fn check_store<F>(store: &ParamStore<f64>, input: &Tensor<f64>, body: F) -> crate::gradcheck::GradCheckReport
where
    F: Fn(&mut Forward<'_, f64>, Var) -> Result<Var>,
{
    let mut params = store.values().to_vec();
    params.push(input.clone());
    let n = store.len();
    let f = |tape: &mut Tape<f64>, vars: &[Var]| -> Result<Var> {
        let mut fw = Forward::with_vars(tape, vars[..n].to_vec(), store.stats(), Mode::Train);
        let y = body(&mut fw, vars[n])?;
        drop(fw);
        probe(tape, y, 99)
    };
    let cfg = GradCheckConfig {
        coords_per_param: Some(12),
        ..Default::default()
    };
    grad_check(f, &params, &cfg).unwrap()
}

#[test]
fn closed_form_param_counts() {
    let mut s = ParamStore::<f32>::new(0);
    let v = CnnBlock::new(&mut s, "v", BlockKind::Vanilla, 16, 32, 1).unwrap();
    assert_eq!(v.param_count(), 3 * 3 * 16 * 32 + 32 + 2 * 32);
    assert_eq!(v.param_count(), 4704);
    let m = CnnBlock::new(&mut s, "m", BlockKind::mobilenet(), 16, 32, 1).unwrap();
    assert_eq!(m.param_count(), (3 * 3 * 16 + 16 + 2 * 16) + (16 * 32 + 32 + 2 * 32));
    assert_eq!(m.param_count(), 800);
    assert_eq!(s.scalar_count(), 4704 + 800);
    let v2 = CnnBlock::new(&mut s, "v2", BlockKind::mobilenet_v2(), 4, 4, 1).unwrap();
    let h = 24;
    assert_eq!(
        v2.param_count(),
        (4 * h + h + 2 * h) + (9 * h + h + 2 * h) + (h * 4 + 4 + 2 * 4)
    );
}

#[test]
fn empty_store_counts_zero() {
    let s = ParamStore::<f32>::new(0);
    assert_eq!(s.scalar_count(), 0);
}

#[test]
fn conv_flops_closed_form() {
    let mut s = ParamStore::<f32>::new(0);
    let c = Conv2d::new(&mut s, "c", 4, 8, 3, 1, Feeds::Relu).unwrap();
    let mut t = Trace::default();
    let out = c.trace(&[8, 8, 4], &mut t);
    assert_eq!(out, vec![8, 8, 8]);
    assert_eq!(t.flops, 2 * 8 * 8 * 8 * 3 * 3 * 4 + 512);
    assert_eq!(t.flops, 36864 + 512);

    let mut t2 = Trace::default();
    c.trace(&[16, 8, 4], &mut t2);
    assert_eq!(t2.flops, 2 * t.flops);
}

#[test]
fn mobilenet_cheaper_than_vanilla() {
    for n in [8usize, 16, 32, 64] {
        let mut s = ParamStore::<f32>::new(0);
        let v = CnnBlock::new(&mut s, "v", BlockKind::Vanilla, n, n, 1).unwrap();
        let m = CnnBlock::new(&mut s, "m", BlockKind::mobilenet(), n, n, 1).unwrap();
        let (mut tv, mut tm) = (Trace::default(), Trace::default());
        v.trace(&[12, 12, n], &mut tv);
        m.trace(&[12, 12, n], &mut tm);
        assert!(tm.flops < tv.flops, "n={n}: {} vs {}", tm.flops, tv.flops);
        // closed forms: params (n+15)n vs (9n+3)n
        assert_eq!(m.param_count(), n * n + 15 * n);
        assert_eq!(v.param_count(), 9 * n * n + 3 * n);
    }
}

#[test]
fn stride_two_halves_block_output() {
    for kind in KINDS {
        let mut s = ParamStore::<f64>::new(1);
        let b = CnnBlock::new(&mut s, "b", kind(), 3, 5, 2).unwrap();
        let x = randn(&[2, 6, 7, 3], 4);
        let y = run_layer(&s, Mode::Train, &x, |f, x| b.forward(f, x)).unwrap();
        assert_eq!(y.shape(), &[2, 3, 4, 5]);
        let mut t = Trace::default();
        assert_eq!(b.trace(&[6, 7, 3], &mut t), vec![3, 4, 5]);
    }
}

#[test]
fn zero_input_gives_zero_output() {
    for kind in KINDS {
        let mut s = ParamStore::<f64>::new(2);
        let b = CnnBlock::new(&mut s, "b", kind(), 4, 4, 1).unwrap();
        let x = Tensor::zeros(&[1, 5, 5, 4]).unwrap();
        let y = run_layer(&s, Mode::Eval, &x, |f, x| b.forward(f, x)).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0), "{:?}", kind());
    }
}

#[test]
fn channel_mismatch_is_shape_error() {
    let mut s = ParamStore::<f64>::new(0);
    let b = CnnBlock::new(&mut s, "b", BlockKind::Vanilla, 4, 4, 1).unwrap();
    let x = Tensor::zeros(&[1, 3, 3, 3]).unwrap();
    let r = run_layer(&s, Mode::Eval, &x, |f, x| b.forward(f, x));
    assert!(matches!(r, Err(crate::Error::Shape { .. })));
}

#[test]
fn transparent_mobilenet_is_bn_relu() {
    let c = 3;
    let mut s = ParamStore::<f64>::new(0);
    let b = CnnBlock::new(&mut s, "m", BlockKind::mobilenet(), c, c, 1).unwrap();
    let convs: Vec<_> = b.convs().cloned().collect();
    let dw = s.get_mut(convs[0].kernel).data_mut();
    dw.fill(0.0);
    // centre tap of a [3,3,C] kernel
    for ch in 0..c {
        dw[4 * c + ch] = 1.0;
    }
    let pw = s.get_mut(convs[1].kernel).data_mut();
    pw.fill(0.0);
    for ch in 0..c {
        pw[ch * c + ch] = 1.0;
    }
    let x = randn(&[2, 4, 4, c], 8);
    let y = run_layer(&s, Mode::Eval, &x, |f, x| b.forward(f, x)).unwrap();
    let k = 1.0 / (1.0 + BN_EPSILON).sqrt();
    let bn_relu = |t: &Tensor<f64>| activation(&t.map(|v| v * k), Activation::Relu, SeluParams::STANDARD);
    let want = bn_relu(&bn_relu(&x));
    assert!(y.max_abs_diff(&want) < 1e-12);
}

#[test]
fn zeroed_v2_block_is_identity() {
    let mut s = ParamStore::<f64>::new(5);
    let b = CnnBlock::new(&mut s, "v2", BlockKind::mobilenet_v2(), 4, 4, 1).unwrap();
    assert!(b.has_skip());
    zero_kernels(&mut s);
    let x = randn(&[2, 5, 5, 4], 3);
    let y = run_layer(&s, Mode::Eval, &x, |f, x| b.forward(f, x)).unwrap();
    assert!(y.bitwise_eq(&x));

    let mut s = ParamStore::<f64>::new(5);
    assert!(!CnnBlock::new(&mut s, "a", BlockKind::mobilenet_v2(), 4, 4, 2).unwrap().has_skip());
    assert!(!CnnBlock::new(&mut s, "b", BlockKind::mobilenet_v2(), 4, 8, 1).unwrap().has_skip());
}

#[test]
fn v2_projection_stage_is_linear() {
    let mut s = ParamStore::<f64>::new(6);
    let b = CnnBlock::new(&mut s, "v2", BlockKind::mobilenet_v2(), 2, 2, 1).unwrap();
    let conv = b.convs().last().unwrap().clone();
    let bn = b.norms().last().unwrap().clone();
    let h = randn(&[1, 3, 3, conv.cin], 10);
    let stage = |input: &Tensor<f64>| {
        run_layer(&s, Mode::Eval, input, |f, x| {
            let y = conv.forward(f, x)?;
            bn.forward(f, y)
        })
        .unwrap()
    };
    let base = stage(&h);
    for scale in [-2.0, 0.5, 3.0] {
        let scaled = stage(&h.map(|v| v * scale));
        assert!(scaled.max_abs_diff(&base.map(|v| v * scale)) < 1e-12);
    }
}

#[test]
fn cnn3d_zero_and_lower_bound() {
    let mut s = ParamStore::<f64>::new(3);
    let b = Cnn3dBlock::new(&mut s, "c3", 2, 3).unwrap();
    let z = Tensor::zeros(&[1, 3, 4, 4, 2]).unwrap();
    let y = run_layer(&s, Mode::Eval, &z, |f, x| b.forward(f, x)).unwrap();
    assert!(y.data().iter().all(|&v| v == 0.0));

    let x = randn(&[2, 4, 5, 5, 2], 11).map(|v| 4.0 * v);
    let y = run_layer(&s, Mode::Train, &x, |f, x| b.forward(f, x)).unwrap();
    assert_eq!(y.shape(), &[2, 4, 5, 5, 3]);
    let lb = SeluParams::STANDARD.lower_bound();
    assert!((lb + 1.7581).abs() < 1e-3);
    assert!(y.data().iter().all(|&v| v >= lb));
    assert!(y.data().iter().any(|&v| v < -1.0));
}

#[test]
fn spatial_fuse_identity_antisymmetric_and_stride() {
    let c = 3;
    let a = randn(&[1, 4, 4, c], 1);
    let b = randn(&[1, 4, 4, c], 2);
    let eye = Tensor::from_fn(&[1, 1, 2 * c, 2 * c], |i| if i / (2 * c) == i % (2 * c) { 1.0 } else { 0.0 }).unwrap();
    let bias = Tensor::zeros(&[2 * c]).unwrap();
    let y = spatial_fuse(&a, &b, &eye, &bias, 1).unwrap();
    assert!(y.bitwise_eq(&concat_channels(&a, &b).unwrap()));

    let half = randn(&[c, 2 * c], 5);
    let anti = Tensor::from_fn(&[1, 1, 2 * c, 2 * c], |i| {
        let (row, col) = (i / (2 * c), i % (2 * c));
        let v = half.data()[(row % c) * 2 * c + col];
        if row < c {
            v
        } else {
            -v
        }
    })
    .unwrap();
    let z = spatial_fuse(&a, &a, &anti, &bias, 1).unwrap();
    assert!(z.data().iter().all(|v| v.abs() < 1e-12));

    let s2 = spatial_fuse(&a, &b, &eye, &bias, 2).unwrap();
    assert_eq!(s2.shape(), &[1, 2, 2, 2 * c]);
    assert!(spatial_fuse(&a, &randn(&[1, 4, 2, c], 3), &eye, &bias, 1).is_err());
}

#[test]
fn zeroed_interweave_is_identity() {
    for kind in KINDS {
        let mut s = ParamStore::<f64>::new(4);
        let m = InterweavingModule::new(&mut s, "iw", kind(), 3, 3, 1).unwrap();
        assert!(m.project.is_none());
        zero_kernels(&mut s);
        let x1 = randn(&[2, 4, 4, 3], 1);
        let x2 = randn(&[2, 4, 4, 3], 2);
        let both = concat_channels(&x1, &x2).unwrap();
        let y = run_layer(&s, Mode::Eval, &both, |f, x| {
            let v = f.tape.value(x).clone();
            let (a, b) = crate::tensor::ops::split_channels(&v, 3)?;
            let (a, b) = (f.tape.constant(a), f.tape.constant(b));
            let (y1, y2) = m.forward(f, a, b)?;
            f.tape.concat_channels(y1, y2)
        })
        .unwrap();
        assert!(y.max_abs_diff(&both) == 0.0, "{:?}", kind());
    }
}

#[test]
fn occluded_stream_keeps_first_path_live() {
    let mut s = ParamStore::<f64>::new(7);
    let m = InterweavingModule::new(&mut s, "iw", BlockKind::Vanilla, 2, 4, 2).unwrap();
    let run = |x1: &Tensor<f64>| {
        run_layer(&s, Mode::Eval, x1, |f, a| {
            let b = f.tape.constant(Tensor::zeros(&[1, 4, 4, 2])?);
            Ok(m.forward(f, a, b)?.0)
        })
        .unwrap()
    };
    let x1 = randn(&[1, 4, 4, 2], 1);
    let y = run(&x1);
    assert_eq!(y.shape(), &[1, 2, 2, 4]);
    assert!(y.is_finite());
    let mut bumped = x1.clone();
    bumped.data_mut()[5] += 0.5;
    assert!(run(&bumped).max_abs_diff(&y) > 1e-6);
}

#[test]
fn interweave_trace_matches_forward() {
    let mut s = ParamStore::<f64>::new(7);
    let m = InterweavingModule::new(&mut s, "iw", BlockKind::mobilenet(), 2, 4, 2).unwrap();
    let mut t = Trace::default();
    assert_eq!(m.trace(&[5, 5, 2], &mut t), vec![3, 3, 4]);
    assert!(t.flops > 0);
    assert_eq!(m.param_count(), s.scalar_count());
}

#[test]
fn grad_check_blocks() {
    for (i, kind) in KINDS.iter().enumerate() {
        for stride in [1, 2] {
            let mut s = ParamStore::<f64>::new(20 + i as u64);
            let b = CnnBlock::new(&mut s, "b", kind(), 2, 2, stride).unwrap();
            let x = randn(&[2, 4, 4, 2], 30);
            let r = check_store(&s, &x, |f, x| b.forward(f, x));
            assert!(r.passed, "{:?} stride {stride}: {r:?}", kind());
        }
    }
}

#[test]
fn grad_check_cnn3d_block() {
    let mut s = ParamStore::<f64>::new(40);
    let b = Cnn3dBlock::new(&mut s, "c3", 2, 2).unwrap();
    let x = randn(&[2, 3, 3, 3, 2], 41);
    let r = check_store(&s, &x, |f, x| b.forward(f, x));
    assert!(r.passed, "{r:?}");
}

#[test]
fn grad_check_fuse_and_interweave() {
    let mut s = ParamStore::<f64>::new(50);
    let fuse = SpatialFuse::new(&mut s, "fuse", 2, 2).unwrap();
    let x = randn(&[1, 4, 4, 4], 51);
    let split = |f: &mut Forward<'_, f64>, x: Var| -> Result<(Var, Var)> {
        Ok((x_part(f, x, 0)?, x_part(f, x, 2)?))
    };
    let r = check_store(&s, &x, |f, x| {
        let (a, b) = split(f, x)?;
        fuse.forward(f, a, b)
    });
    assert!(r.passed, "fuse: {r:?}");

    for kind in KINDS {
        let mut s = ParamStore::<f64>::new(60);
        let m = InterweavingModule::new(&mut s, "iw", kind(), 2, 4, 2).unwrap();
        let r = check_store(&s, &x, |f, x| {
            let (a, b) = split(f, x)?;
            let (y1, y2) = m.forward(f, a, b)?;
            f.tape.concat_channels(y1, y2)
        });
        assert!(r.passed, "interweave {:?}: {r:?}", kind());
    }
}

/// Selects channels `from..from+2` of a 4-channel var through a constant 1x1 conv.
fn x_part(f: &mut Forward<'_, f64>, x: Var, from: usize) -> Result<Var> {
    let k = Tensor::from_fn(&[1, 1, 4, 2], |i| {
        let (row, col) = (i / 2, i % 2);
        if row == from + col {
            1.0
        } else {
            0.0
        }
    })?;
    let k = f.tape.constant(k);
    let b = f.tape.constant(Tensor::zeros(&[2])?);
    f.tape.conv2d(x, k, b, [1, 1], crate::tensor::ops::Padding::Same)
}
