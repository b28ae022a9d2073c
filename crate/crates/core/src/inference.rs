//! Window classification, temporal voting and evaluation reports.

use std::collections::VecDeque;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{collate, write_container, AnyTensor, Dataset, SampleWindow};
use crate::error::{Error, Result};
use crate::models::{aggregate_id, Model};
use crate::tensor::ops::Mode;
use crate::tensor::Tensor;
use crate::training::{block_front, dropout_coin};

pub const DEFAULT_POLL: usize = 15;
const WARM_UP_CALLS: usize = 10;

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Occlusion {
    None,
    BlockFront,
}

/// Eval-mode logits for one window and their argmax.
pub fn classify_window(model: &Model<f32>, window: &SampleWindow, occlusion: Occlusion) -> Result<(usize, Tensor<f32>)> {
    let batch = if occlusion == Occlusion::BlockFront {
        let mut w = window.clone();
        block_front(&mut w);
        collate(&[&w])?
    } else {
        collate(&[window])?
    };
    let logits = model.logits(&batch, Mode::Eval)?;
    let k = logits.shape()[1];
    let logits = logits.reshape(&[k])?;
    Ok((argmax(logits.data()), logits))
}

/// Majority poll over the most recent predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct VotePoll {
    capacity: usize,
    recent: VecDeque<usize>,
}

impl VotePoll {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("poll size must be ≥ 1".into()));
        }
        Ok(VotePoll {
            capacity,
            recent: VecDeque::with_capacity(capacity),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.recent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.recent.is_empty()
    }

    /// Oldest first.
    pub fn contents(&self) -> Vec<usize> {
        self.recent.iter().copied().collect()
    }

    /// Modal label; among tied labels the most recently pushed wins.
    pub fn mode(&self) -> Option<usize> {
        let mut best: Option<(usize, usize, usize)> = None; // (count, last position, label)
        for (pos, &l) in self.recent.iter().enumerate() {
            let count = self.recent.iter().filter(|&&x| x == l).count();
            let last = self.recent.iter().rposition(|&x| x == l).unwrap();
            if pos == last && best.is_none_or(|(c, p, _)| (count, last) > (c, p)) {
                best = Some((count, last, l));
            }
        }
        best.map(|(_, _, l)| l)
    }
}

/// Pushes `label` (evicting the oldest when full) and returns the vote.
pub fn temporal_vote(poll: &mut VotePoll, label: usize) -> usize {
    if poll.recent.len() == poll.capacity {
        poll.recent.pop_front();
    }
    poll.recent.push_back(label);
    poll.mode().expect("poll holds the pushed label")
}

/// Voted labels for a time-ordered raw prediction stream.
pub fn vote_stream(raw: &[usize], n: usize) -> Result<Vec<usize>> {
    let mut poll = VotePoll::new(n)?;
    Ok(raw.iter().map(|&l| temporal_vote(&mut poll, l)).collect())
}

/// Classifies time-ordered windows one by one, returning `(raw, voted)` labels.
pub fn run_sliding(
    model: &Model<f32>,
    windows: &[SampleWindow],
    n: usize,
    occlusion: Occlusion,
) -> Result<Vec<(usize, usize)>> {
    let mut poll = VotePoll::new(n)?;
    windows
        .iter()
        .map(|w| {
            let (raw, _) = classify_window(model, w, occlusion)?;
            Ok((raw, temporal_vote(&mut poll, raw)))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelSpace {
    #[serde(rename = "full9")]
    Full9,
    #[serde(rename = "agg5")]
    Agg5,
}

impl LabelSpace {
    pub fn classes(self) -> usize {
        match self {
            LabelSpace::Full9 => 9,
            LabelSpace::Agg5 => 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    pub labels: LabelSpace,
    pub occlusion: Occlusion,
    /// Chance that a window is blocked under `BlockFront`; 1 blocks every window.
    pub occlusion_p: f64,
    pub vote_n: usize,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            labels: LabelSpace::Full9,
            occlusion: Occlusion::None,
            occlusion_p: 1.0,
            vote_n: DEFAULT_POLL,
            seed: 0,
        }
    }
}

/// Raw counts gathered while evaluating.
#[derive(Debug, Clone, PartialEq)]
pub struct InferenceStats {
    /// `confusion[truth][prediction]` over raw predictions.
    pub confusion: Vec<Vec<usize>>,
    pub confusion_voted: Vec<Vec<usize>>,
    pub latencies_ms: Vec<f64>,
    pub params: usize,
    pub flops: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Latency {
    pub p50: f64,
    pub p95: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub block: String,
    pub labels: LabelSpace,
    pub occlusion: Occlusion,
    pub occlusion_p: f64,
    pub vote_n: usize,
    pub windows: usize,
    pub accuracy_raw: f64,
    pub accuracy_voted: f64,
    pub confusion: Vec<Vec<usize>>,
    pub confusion_voted: Vec<Vec<usize>>,
    pub latency_ms: Latency,
    pub params: usize,
    pub flops: u64,
}

/// Nearest-rank percentile of unsorted samples.
pub fn percentile(samples: &[f64], q: f64) -> f64 {
    if samples.is_empty() {
        return f64::NAN;
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let rank = ((q / 100.0) * s.len() as f64).ceil().max(1.0) as usize;
    s[rank.min(s.len()) - 1]
}

fn accuracy(confusion: &[Vec<usize>]) -> f64 {
    let total: usize = confusion.iter().flatten().sum();
    let hits: usize = confusion.iter().enumerate().map(|(i, r)| r[i]).sum();
    hits as f64 / total as f64
}

/// Confusion matrices for per-clip prediction streams.
///
/// Voting runs in the prediction space the streams are given in; the label
/// space mapping applies afterwards, so coarsening never splits a correct
/// prediction of either kind.
pub fn score_streams(
    raw: &[Vec<usize>],
    truth: &[Vec<usize>],
    classes: usize,
    labels: LabelSpace,
    vote_n: usize,
) -> Result<(Vec<Vec<usize>>, Vec<Vec<usize>>)> {
    let map = |l: usize| -> Result<usize> {
        match (labels, classes) {
            (LabelSpace::Agg5, 9) => aggregate_id(l),
            (LabelSpace::Full9, 5) => Err(Error::Config("a 5-class model cannot be scored on full9 labels".into())),
            _ => Ok(l),
        }
    };
    let k = labels.classes();
    let mut conf = vec![vec![0; k]; k];
    let mut conf_voted = vec![vec![0; k]; k];
    for (r, t) in raw.iter().zip(truth) {
        let voted = vote_stream(r, vote_n)?;
        for ((&p, &v), &y) in r.iter().zip(&voted).zip(t) {
            let y = map(y)?;
            conf[y][map(p)?] += 1;
            conf_voted[y][map(v)?] += 1;
        }
    }
    Ok((conf, conf_voted))
}

/// Classifies every window of `ds` clip by clip and scores raw and voted
/// predictions.
pub fn evaluate(model: &Model<f32>, ds: &Dataset, opts: &EvalOptions) -> Result<(EvalReport, InferenceStats)> {
    if ds.is_empty() {
        return Err(Error::Config("empty evaluation set".into()));
    }
    if ds.classes() != model.config.classes {
        return Err(Error::Config(format!(
            "dataset labels have {} classes, model predicts {}",
            ds.classes(),
            model.config.classes
        )));
    }
    let first = ds.sample(0)?;
    for _ in 0..WARM_UP_CALLS {
        classify_window(model, &first, opts.occlusion)?;
    }
    let mut latencies = Vec::with_capacity(ds.len());
    let (mut raw, mut truth) = (Vec::new(), Vec::new());
    for ids in ds.by_clip() {
        let (mut r, mut t) = (Vec::new(), Vec::new());
        for i in ids {
            let w = ds.sample(i)?;
            let occ = match opts.occlusion {
                Occlusion::BlockFront if opts.occlusion_p >= 1.0 || dropout_coin(opts.occlusion_p, opts.seed ^ i as u64) => {
                    Occlusion::BlockFront
                }
                _ => Occlusion::None,
            };
            let start = Instant::now();
            let (label, _) = classify_window(model, &w, occ)?;
            latencies.push(start.elapsed().as_secs_f64() * 1e3);
            r.push(label);
            t.push(ds.labels_at(i));
        }
        raw.push(r);
        truth.push(t);
    }
    let (confusion, confusion_voted) = score_streams(&raw, &truth, model.config.classes, opts.labels, opts.vote_n)?;
    let stats = InferenceStats {
        confusion,
        confusion_voted,
        latencies_ms: latencies,
        params: model.param_count(),
        flops: model.flop_count(),
    };
    let report = EvalReport {
        model: model.config.model.name().into(),
        block: model.config.block.name().into(),
        labels: opts.labels,
        occlusion: opts.occlusion,
        occlusion_p: opts.occlusion_p,
        vote_n: opts.vote_n,
        windows: ds.len(),
        accuracy_raw: accuracy(&stats.confusion),
        accuracy_voted: accuracy(&stats.confusion_voted),
        confusion: stats.confusion.clone(),
        confusion_voted: stats.confusion_voted.clone(),
        latency_ms: Latency {
            p50: percentile(&stats.latencies_ms, 50.0),
            p95: percentile(&stats.latencies_ms, 95.0),
            mean: stats.latencies_ms.iter().sum::<f64>() / stats.latencies_ms.len() as f64,
        },
        params: stats.params,
        flops: stats.flops,
    };
    Ok((report, stats))
}

/// Captures eval-mode activations at `tags` and writes them to `path`.
pub fn export_activations(
    model: &Model<f32>,
    window: &SampleWindow,
    tags: &[String],
    path: &Path,
) -> Result<Vec<(String, Tensor<f32>)>> {
    let (_, captured) = model.forward_capture(&collate(&[window])?, Mode::Eval, tags)?;
    let entries: Vec<(String, AnyTensor)> = captured
        .iter()
        .map(|(n, t)| (n.clone(), AnyTensor::from(t.clone())))
        .collect();
    write_container(&entries, path)?;
    Ok(captured)
}

#[cfg(test)]
mod tests;
