use super::*;
use crate::models::{build_model, ModelKind};
use crate::testutil::{tiny_datasets, tiny_model};

fn names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("p{i}")).collect()
}

#[test]
fn zero_gradient_leaves_params_and_decays_moments() {
    let mut p = vec![Tensor::new(&[3], vec![1.0f64, -2.0, 0.5]).unwrap()];
    let mut st = AdamState::new(&p, AdamConfig::default());
    adam_step(&mut p, &[Tensor::new(&[3], vec![1.0, 1.0, -1.0]).unwrap()], &names(1), &mut st).unwrap();
    let after_first = p.clone();
    let m1 = st.m[0].clone();
    adam_step(&mut p, &[Tensor::zeros(&[3]).unwrap()], &names(1), &mut st).unwrap();
    for (a, b) in st.m[0].data().iter().zip(m1.data()) {
        assert!((a - 0.9 * b).abs() < 1e-15);
    }
    // with fresh moments a zero gradient moves nothing
    let mut q = after_first.clone();
    let mut fresh = AdamState::new(&q, AdamConfig::default());
    adam_step(&mut q, &[Tensor::zeros(&[3]).unwrap()], &names(1), &mut fresh).unwrap();
    assert!(q[0].bitwise_eq(&after_first[0]));
    assert!(fresh.v[0].data().iter().all(|&v| v == 0.0));
    assert_eq!(fresh.step, 1);
}

#[test]
fn first_step_moves_by_lr() {
    let lr = 1e-3;
    let mut p = vec![Tensor::new(&[4], vec![0.0f64, 1.0, -3.0, 2.0]).unwrap()];
    let before = p[0].clone();
    let g = Tensor::new(&[4], vec![0.5, -2.0, 7.0, 1e-2]).unwrap();
    let mut st = AdamState::new(&p, AdamConfig { lr, ..AdamConfig::default() });
    adam_step(&mut p, &[g.clone()], &names(1), &mut st).unwrap();
    for ((a, b), gi) in p[0].data().iter().zip(before.data()).zip(g.data()) {
        let want = -lr * gi.signum();
        assert!(((a - b) - want).abs() < 1e-8, "{} vs {want}", a - b);
    }
}

#[test]
fn quadratic_converges() {
    let init: Vec<f64> = (0..10).map(|i| (i as f64 - 4.5) * 2.0).collect();
    let mut p = vec![Tensor::new(&[10], init).unwrap()];
    let start = p[0].data().iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut st = AdamState::new(&p, AdamConfig { lr: 0.1, ..AdamConfig::default() });
    for _ in 0..200 {
        let g = p[0].map(|v| 2.0 * v);
        adam_step(&mut p, &[g], &names(1), &mut st).unwrap();
        assert!(st.v[0].data().iter().all(|&v| v >= 0.0 && v.is_finite()));
    }
    let end = p[0].data().iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(end * 100.0 <= start, "{start} -> {end}");
}

#[test]
fn non_finite_gradient_names_param() {
    let mut p = vec![Tensor::zeros(&[2]).unwrap(), Tensor::zeros(&[2]).unwrap()];
    let g = vec![Tensor::zeros(&[2]).unwrap(), Tensor::new(&[2], vec![0.0f32, f32::NAN]).unwrap()];
    let mut st = AdamState::new(&p, AdamConfig::default());
    match adam_step(&mut p, &g, &["a".into(), "b.kernel".into()], &mut st) {
        Err(Error::NonFiniteGradient { param }) => assert_eq!(param, "b.kernel"),
        other => panic!("{other:?}"),
    }
    assert_eq!(st.step, 0);
}

#[test]
fn stream_dropout_contract() {
    let (train, _) = tiny_datasets(4);
    let w = train.sample(0).unwrap();
    assert_eq!(apply_stream_dropout(w.clone(), 0.0, 1), w);
    let blocked = apply_stream_dropout(w.clone(), 1.0, 1);
    assert!(blocked.front_frames.data().iter().all(|&v| v == 0.0));
    assert!(blocked.front_flows.data().iter().all(|&v| v == 0.0));
    assert!(blocked.side_frames.bitwise_eq(&w.side_frames) && blocked.side_flows.bitwise_eq(&w.side_flows));
    let hits = (0..10_000u64).filter(|&s| dropout_coin(0.5, s)).count();
    assert!((4700..=5300).contains(&hits), "{hits}");
    assert_eq!(dropout_coin(0.5, 42), dropout_coin(0.5, 42));
}

#[test]
fn initial_loss_near_ln_k() {
    let (train, _) = tiny_datasets(2);
    let model = build_model::<f32>(&tiny_model(ModelKind::Intercnn), 0).unwrap();
    let ids: Vec<usize> = (0..train.len().min(16)).collect();
    let (b, y) = train.batch(&ids).unwrap();
    let loss = model.train_pass(&b, &y).unwrap().loss as f64;
    assert!((loss - 9f64.ln()).abs() < 0.5, "{loss}");
}

#[test]
fn overfits_one_batch() {
    let (train, _) = tiny_datasets(3);
    let mut model = build_model::<f32>(&tiny_model(ModelKind::Intercnn), 1).unwrap();
    let (b, y) = train.batch(&[0, 4, 8, 12]).unwrap();
    let mut adam = AdamState::new(model.params.values(), AdamConfig { lr: 1e-2, ..AdamConfig::default() });
    let mut last = f32::INFINITY;
    for _ in 0..500 {
        last = train_step(&mut model, &b, &y, &mut adam).unwrap();
        if last < 0.1 {
            break;
        }
    }
    assert!(last < 0.1, "{last}");
}

#[test]
fn fifty_steps_are_bitwise_reproducible() {
    let (train, _) = tiny_datasets(2);
    let run = || {
        let mut model = build_model::<f32>(&tiny_model(ModelKind::Intercnn), 7).unwrap();
        let mut adam = AdamState::new(model.params.values(), AdamConfig { lr: 1e-3, ..AdamConfig::default() });
        let mut losses = Vec::new();
        for step in 0..50u64 {
            let ids: Vec<usize> = (0..4).map(|j| (step as usize * 4 + j) % train.len()).collect();
            let windows: Vec<_> = ids
                .iter()
                .map(|&i| apply_stream_dropout(train.sample(i).unwrap(), 0.5, step * 100 + i as u64))
                .collect();
            let b = collate(&windows.iter().collect::<Vec<_>>()).unwrap();
            let y: Vec<usize> = ids.iter().map(|&i| train.labels_at(i)).collect();
            losses.push(train_step(&mut model, &b, &y, &mut adam).unwrap().to_bits());
        }
        (losses, model.params)
    };
    let (a, pa) = run();
    let (b, pb) = run();
    assert_eq!(a, b);
    assert!(pa.values().iter().zip(pb.values()).all(|(x, y)| x.bitwise_eq(y)));
}

#[test]
fn early_stop_after_patience() {
    let (train, val) = tiny_datasets(4);
    let mut model = build_model::<f32>(&tiny_model(ModelKind::Tscnn), 0).unwrap();
    let cfg = TrainConfig {
        lr: 0.0,
        patience: 1,
        max_epochs: 10,
        min_delta: f64::INFINITY,
        ..TrainConfig::default()
    };
    let mut sink = Vec::new();
    let r = fit(&mut model, &train, &val, &cfg, None, Some(&mut sink)).unwrap();
    assert_eq!(r.evaluations, 2);
    assert_eq!(r.epochs, 2);
    let text = String::from_utf8(sink).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.lines().nth(1).unwrap().contains(", validation, "));
}

#[test]
fn fit_returns_best_checkpoint() {
    let (train, val) = tiny_datasets(4);
    let mut model = build_model::<f32>(&tiny_model(ModelKind::Intercnn), 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        lr: 3e-3,
        max_epochs: 4,
        ..TrainConfig::default()
    };
    let r = fit(&mut model, &train, &val, &cfg, Some(dir.path()), None).unwrap();
    assert!(r.early_stop.best_loss <= r.final_val_loss);
    let (vl, _) = dataset_metrics(&model, &val, 8, false).unwrap();
    assert!((vl - r.early_stop.best_loss).abs() < 1e-9);
    let back = Model::<f32>::load(dir.path()).unwrap();
    assert!(back.params.values().iter().zip(model.params.values()).all(|(a, b)| a.bitwise_eq(b)));
    let bests: Vec<f64> = r
        .history
        .iter()
        .filter(|h| h.split == "validation")
        .scan(f64::INFINITY, |b, h| {
            *b = b.min(h.loss);
            Some(*b)
        })
        .collect();
    assert_eq!(*bests.last().unwrap(), r.early_stop.best_loss);
}

#[test]
fn fit_rejects_empty_split_and_bad_config() {
    let (train, _) = tiny_datasets(4);
    let empty = Dataset::new(Vec::new(), 5, 1).unwrap();
    let mut model = build_model::<f32>(&tiny_model(ModelKind::Intercnn), 0).unwrap();
    assert!(matches!(
        fit(&mut model, &train, &empty, &TrainConfig::default(), None, None),
        Err(Error::Config(_))
    ));
    let bad = TrainConfig { stream_dropout_p: 1.5, ..TrainConfig::default() };
    assert!(fit(&mut model, &train, &train, &bad, None, None).is_err());
}
