//! Clip sequences and the fixed-length windows cut from them.

use crate::error::{Error, Result};
use crate::flow::{flow_sequence, grayscale, FlowParams};
use crate::models::{aggregate_id, BehaviorLabel, WindowBatch};
use crate::tensor::Tensor;

use super::manifest::Split;

pub const WINDOW_FRAMES: usize = 15;
/// Keep one source frame out of this many.
pub const DECIMATION: usize = 3;

/// Keeps items `0, 3, 6, ...`.
pub fn temporal_downsample<T: Clone>(items: &[T]) -> Vec<T> {
    items.iter().step_by(DECIMATION).cloned().collect()
}

/// Most frequent label; ties go to the one that appears first.
pub fn majority_label(labels: &[usize]) -> Option<usize> {
    let mut counts: Vec<(usize, usize)> = Vec::new();
    for &l in labels {
        match counts.iter_mut().find(|(k, _)| *k == l) {
            Some((_, c)) => *c += 1,
            None => counts.push((l, 1)),
        }
    }
    // max_by_key keeps the last maximum, so scan in reverse
    counts.iter().rev().max_by_key(|(_, c)| *c).map(|&(k, _)| k)
}

/// A preprocessed clip: both views at model resolution plus their flows.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipSequence {
    pub clip_id: String,
    pub split: Split,
    /// `[T, H, W, 3]` per view, side first.
    pub frames: [Tensor<f32>; 2],
    /// `[T-1, H, W, 2]` per view.
    pub flows: [Tensor<f32>; 2],
    /// Behavior id per frame.
    pub labels: Vec<usize>,
}

/// Flows of a `[T, H, W, 3]` sequence as a `[T-1, H, W, 2]` tensor.
pub fn sequence_flows(frames: &Tensor<f32>, params: FlowParams) -> Result<Tensor<f32>> {
    let s = frames.shape();
    if s.len() != 4 || s[3] != 3 {
        return Err(Error::shape("sequence_flows", format!("expected [T,H,W,3], got {s:?}")));
    }
    let gray: Vec<f32> = (0..s[0])
        .map(|t| grayscale(&frames.slice_outer(t, 1)?.reshape(&s[1..])?).map(Tensor::into_data))
        .collect::<Result<Vec<_>>>()?
        .concat();
    let gray = Tensor::new(&s[..3], gray)?;
    let fields = flow_sequence(&gray, params)?;
    let tensors: Vec<Tensor<f32>> = fields.iter().map(|f| f.to_tensor()).collect();
    Tensor::stack(&tensors.iter().collect::<Vec<_>>())
}

impl ClipSequence {
    /// Builds a sequence from frames at model resolution, computing flows.
    pub fn from_frames(
        clip_id: impl Into<String>,
        split: Split,
        side: Tensor<f32>,
        front: Tensor<f32>,
        labels: Vec<usize>,
        flow: FlowParams,
    ) -> Result<Self> {
        if side.shape() != front.shape() {
            return Err(Error::shape(
                "clip",
                format!("side {:?} and front {:?} differ", side.shape(), front.shape()),
            ));
        }
        if labels.len() != side.shape()[0] {
            return Err(Error::shape(
                "clip",
                format!("{} labels for {} frames", labels.len(), side.shape()[0]),
            ));
        }
        for &l in &labels {
            BehaviorLabel::from_id(l)?;
        }
        let flows = [sequence_flows(&side, flow)?, sequence_flows(&front, flow)?];
        Ok(ClipSequence {
            clip_id: clip_id.into(),
            split,
            frames: [side, front],
            flows,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Start indices of windows of `window` frames every `stride` frames.
    pub fn window_starts(&self, window: usize, stride: usize) -> Vec<usize> {
        if window == 0 || stride == 0 || self.len() < window {
            return Vec::new();
        }
        (0..=self.len() - window).step_by(stride).collect()
    }

    /// The window of `window` frames beginning at `start`.
    pub fn window(&self, start: usize, window: usize) -> Result<SampleWindow> {
        if window < 2 || start + window > self.len() {
            return Err(Error::InsufficientFrames {
                needed: start + window.max(2),
                got: self.len(),
            });
        }
        let label = majority_label(&self.labels[start..start + window]).expect("non-empty window");
        Ok(SampleWindow {
            side_frames: self.frames[0].slice_outer(start, window)?,
            side_flows: self.flows[0].slice_outer(start, window - 1)?,
            front_frames: self.frames[1].slice_outer(start, window)?,
            front_flows: self.flows[1].slice_outer(start, window - 1)?,
            label: BehaviorLabel::from_id(label)?,
        })
    }
}

/// One training or evaluation sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleWindow {
    /// `[T, H, W, 3]`.
    pub side_frames: Tensor<f32>,
    /// `[T-1, H, W, 2]`.
    pub side_flows: Tensor<f32>,
    pub front_frames: Tensor<f32>,
    pub front_flows: Tensor<f32>,
    pub label: BehaviorLabel,
}

/// Every window of `window` frames at the given stride.
pub fn assemble_windows(clip: &ClipSequence, window: usize, stride: usize) -> Result<Vec<SampleWindow>> {
    if window < 2 || clip.len() < window {
        return Err(Error::InsufficientFrames {
            needed: window.max(2),
            got: clip.len(),
        });
    }
    if stride == 0 {
        return Err(Error::Config("window stride must be positive".into()));
    }
    clip.window_starts(window, stride)
        .into_iter()
        .map(|s| clip.window(s, window))
        .collect()
}

/// Stacks windows into a batch.
pub fn collate(windows: &[&SampleWindow]) -> Result<WindowBatch<f32>> {
    let pick = |f: fn(&SampleWindow) -> &Tensor<f32>| {
        Tensor::stack(&windows.iter().map(|w| f(w)).collect::<Vec<_>>())
    };
    Ok(WindowBatch {
        side_frames: pick(|w| &w.side_frames)?,
        side_flows: pick(|w| &w.side_flows)?,
        front_frames: pick(|w| &w.front_frames)?,
        front_flows: pick(|w| &w.front_flows)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowRef {
    pub clip: usize,
    pub start: usize,
    pub label: usize,
}

/// Lazily windowed view over a set of clips.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub clips: Vec<ClipSequence>,
    pub window: usize,
    index: Vec<WindowRef>,
    classes: usize,
}

impl Dataset {
    pub fn new(clips: Vec<ClipSequence>, window: usize, stride: usize) -> Result<Self> {
        if window < 2 || stride == 0 {
            return Err(Error::Config(format!("bad window {window} / stride {stride}")));
        }
        let mut index = Vec::new();
        for (ci, c) in clips.iter().enumerate() {
            for start in c.window_starts(window, stride) {
                let label = majority_label(&c.labels[start..start + window]).expect("non-empty");
                index.push(WindowRef { clip: ci, start, label });
            }
        }
        Ok(Dataset {
            clips,
            window,
            index,
            classes: BehaviorLabel::COUNT,
        })
    }

    /// Switches the labels returned by [`Dataset::labels`] and
    /// [`Dataset::batch`] to the 9- or 5-class space.
    pub fn with_classes(mut self, classes: usize) -> Result<Self> {
        if classes != 9 && classes != 5 {
            return Err(Error::Config(format!("classes must be 9 or 5, got {classes}")));
        }
        self.classes = classes;
        Ok(self)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn index(&self) -> &[WindowRef] {
        &self.index
    }

    fn target(&self, behavior: usize) -> usize {
        if self.classes == 5 {
            aggregate_id(behavior).expect("validated label")
        } else {
            behavior
        }
    }

    /// Class id of every window in the current label space.
    pub fn labels(&self) -> Vec<usize> {
        self.index.iter().map(|r| self.target(r.label)).collect()
    }

    /// Class id of window `i` in the current label space.
    pub fn labels_at(&self, i: usize) -> usize {
        self.target(self.index[i].label)
    }

    pub fn sample(&self, i: usize) -> Result<SampleWindow> {
        let r = self.index[i];
        self.clips[r.clip].window(r.start, self.window)
    }

    /// Collated batch of the given window indices plus their class ids.
    pub fn batch(&self, ids: &[usize]) -> Result<(WindowBatch<f32>, Vec<usize>)> {
        let windows = ids.iter().map(|&i| self.sample(i)).collect::<Result<Vec<_>>>()?;
        let batch = collate(&windows.iter().collect::<Vec<_>>())?;
        Ok((batch, ids.iter().map(|&i| self.target(self.index[i].label)).collect()))
    }

    /// Window indices grouped by clip, each group in time order.
    pub fn by_clip(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.clips.len()];
        for (i, r) in self.index.iter().enumerate() {
            out[r.clip].push(i);
        }
        out
    }
}
