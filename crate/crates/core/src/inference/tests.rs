use super::*;
use crate::data::Split;
use crate::models::{build_model, ModelKind};
use crate::testutil::{tiny_datasets, tiny_model};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn argmax_prefers_lowest_on_ties() {
    assert_eq!(argmax(&[0.1, 2.3, 0.1, -1.0]), 1);
    assert_eq!(argmax(&[0.5, 1.0, 1.0]), 1);
    assert_eq!(argmax(&[3.0f32, 3.0]), 0);
}

#[test]
fn poll_examples() {
    let (a, b, c) = (0, 1, 2);
    let mut p = VotePoll::new(15).unwrap();
    for l in [a, a, b] {
        temporal_vote(&mut p, l);
    }
    assert_eq!(temporal_vote(&mut p, a), a);

    let mut p = VotePoll::new(15).unwrap();
    assert_eq!(temporal_vote(&mut p, c), c);

    let mut p = VotePoll::new(15).unwrap();
    for l in [a, a, b] {
        temporal_vote(&mut p, l);
    }
    assert_eq!(temporal_vote(&mut p, b), b);
}

#[test]
fn poll_evicts_oldest_first() {
    let mut p = VotePoll::new(3).unwrap();
    for l in [4, 5, 6, 7] {
        temporal_vote(&mut p, l);
    }
    assert_eq!(p.contents(), vec![5, 6, 7]);
    assert_eq!(p.mode(), Some(7));
    assert!(VotePoll::new(0).is_err());
}

#[test]
fn poll_of_one_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let raw: Vec<usize> = (0..500).map(|_| rng.random_range(0..9)).collect();
    assert_eq!(vote_stream(&raw, 1).unwrap(), raw);
}

#[test]
fn vote_follows_label_switch_within_n() {
    let n = 15;
    let raw: Vec<usize> = [vec![2; 40], vec![6; 40]].concat();
    let voted = vote_stream(&raw, n).unwrap();
    let first = voted.iter().skip(40).position(|&v| v == 6).unwrap();
    assert!(first < n);
    assert!(voted[40 + first..].iter().all(|&v| v == 6));
    assert_eq!(first + 1, n / 2 + 1);
}

#[test]
fn voting_reduces_symmetric_noise() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth = 3;
        let raw: Vec<usize> = (0..1000)
            .map(|_| {
                if rng.random_bool(0.3) {
                    [0, 1, 2, 4, 5, 6, 7, 8][rng.random_range(0..8)]
                } else {
                    truth
                }
            })
            .collect();
        let voted = vote_stream(&raw, 15).unwrap();
        let err = |s: &[usize]| s.iter().filter(|&&l| l != truth).count();
        assert!(err(&voted) < err(&raw));
    }
}

#[test]
fn perfect_predictions_score_one() {
    let truth = vec![vec![0, 0, 4, 4, 8], vec![1, 2, 3]];
    let (c, cv) = score_streams(&truth, &truth, 9, LabelSpace::Full9, 3).unwrap();
    assert_eq!(accuracy(&c), 1.0);
    assert!(accuracy(&cv) >= 0.75);
    let (c, cv) = score_streams(&truth, &truth, 9, LabelSpace::Full9, 1).unwrap();
    assert_eq!((accuracy(&c), accuracy(&cv)), (1.0, 1.0));
    assert!(score_streams(&truth, &truth, 5, LabelSpace::Full9, 1).is_err());
}

#[test]
fn aggregation_never_lowers_accuracy() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..50 {
        let truth: Vec<Vec<usize>> = (0..3).map(|_| (0..40).map(|_| rng.random_range(0..9)).collect()).collect();
        let raw: Vec<Vec<usize>> = truth
            .iter()
            .map(|t| t.iter().map(|&l| if rng.random_bool(0.5) { l } else { rng.random_range(0..9) }).collect())
            .collect();
        let (f, fv) = score_streams(&raw, &truth, 9, LabelSpace::Full9, 5).unwrap();
        let (a, av) = score_streams(&raw, &truth, 9, LabelSpace::Agg5, 5).unwrap();
        assert!(accuracy(&a) >= accuracy(&f));
        assert!(accuracy(&av) >= accuracy(&fv));
        let rows: usize = a.iter().flatten().sum();
        assert_eq!(rows, 120);
    }
}

#[test]
fn percentiles() {
    let s: Vec<f64> = (1..=100).map(f64::from).collect();
    assert_eq!(percentile(&s, 50.0), 50.0);
    assert_eq!(percentile(&s, 95.0), 95.0);
    assert_eq!(percentile(&[7.0], 95.0), 7.0);
}

#[test]
fn block_front_ignores_front_content() {
    let (train, _) = tiny_datasets(4);
    let model = build_model::<f32>(&tiny_model(ModelKind::Intercnn), 3).unwrap();
    let w = train.sample(2).unwrap();
    let mut zeroed = w.clone();
    crate::training::block_front(&mut zeroed);
    let (l1, y1) = classify_window(&model, &w, Occlusion::BlockFront).unwrap();
    let (l2, y2) = classify_window(&model, &zeroed, Occlusion::None).unwrap();
    assert!(y1.bitwise_eq(&y2));
    assert_eq!(l1, l2);
    let mut other = w.clone();
    other.front_frames = other.front_frames.map(|v| 1.0 - v);
    let (_, y3) = classify_window(&model, &other, Occlusion::BlockFront).unwrap();
    assert!(y3.bitwise_eq(&y1));
    let (_, y4) = classify_window(&model, &w, Occlusion::None).unwrap();
    assert_eq!(y4.shape(), &[9]);
    assert_eq!(run_sliding(&model, &[w.clone(), other], 1, Occlusion::None).unwrap().len(), 2);
}

#[test]
fn evaluate_report_is_consistent() {
    let (_, val) = tiny_datasets(2);
    let model = build_model::<f32>(&tiny_model(ModelKind::Intercnn), 3).unwrap();
    let opts = EvalOptions { vote_n: 1, ..EvalOptions::default() };
    let (r, stats) = evaluate(&model, &val, &opts).unwrap();
    assert_eq!(r.params, model.param_count());
    assert_eq!(r.flops, model.flop_count());
    assert_eq!(r.accuracy_raw, r.accuracy_voted);
    assert_eq!(stats.latencies_ms.len(), val.len());
    assert!(stats.latencies_ms.iter().all(|&l| l > 0.0));
    let per_class: Vec<usize> = (0..9).map(|k| val.labels().iter().filter(|&&l| l == k).count()).collect();
    let row_sums: Vec<usize> = stats.confusion.iter().map(|r| r.iter().sum()).collect();
    assert_eq!(row_sums, per_class);
    let (agg, _) = evaluate(&model, &val, &EvalOptions { labels: LabelSpace::Agg5, ..opts.clone() }).unwrap();
    assert!(agg.accuracy_raw >= r.accuracy_raw);
    let json = serde_json::to_value(&r).unwrap();
    for key in ["accuracy_raw", "accuracy_voted", "confusion", "latency_ms", "params", "flops"] {
        assert!(json.get(key).is_some(), "{key}");
    }
    assert_eq!(json["labels"], "full9");
    assert!(val.clips.iter().all(|c| c.split == Split::Validation));
}

#[test]
fn activation_export_round_trips() {
    let (train, _) = tiny_datasets(4);
    let model = build_model::<f32>(&tiny_model(ModelKind::Intercnn), 3).unwrap();
    let w = train.sample(1).unwrap();
    let before = classify_window(&model, &w, Occlusion::None).unwrap().1;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("acts.ictn");
    let tags = vec!["side_fused".to_string(), "hidden".to_string()];
    let acts = export_activations(&model, &w, &tags, &path).unwrap();
    let back = crate::data::read_container(&path).unwrap();
    assert_eq!(back.len(), 2);
    let trace = model.trace();
    for ((n, t), (bn, bt)) in acts.iter().zip(&back) {
        assert_eq!(n, bn);
        assert!(bt.bitwise_eq(&AnyTensor::from(t.clone())));
        assert_eq!(&t.shape()[1..], trace.shape_of(n).unwrap());
    }
    assert!(classify_window(&model, &w, Occlusion::None).unwrap().1.bitwise_eq(&before));
    assert!(matches!(
        export_activations(&model, &w, &["nope".into()], &path),
        Err(Error::UnknownTag(_))
    ));
}
