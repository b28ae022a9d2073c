//! Source clips to model-ready sequences: decimate, crop, resize, flow.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::container::{read_container, write_container, AnyTensor};
use super::crop::{crop_resize, CropSpec, View};
use super::manifest::{ClipEntry, DatasetManifest, Split};
use super::synth::{default_crops, render_dataset, RenderedClip, SynthConfig};
use super::windows::{temporal_downsample, ClipSequence};
use crate::error::{Error, Result};
use crate::flow::FlowParams;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Side crop, then front crop.
    pub crops: [CropSpec; 2],
    #[serde(default)]
    pub flow: FlowParams,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            crops: default_crops([18, 32], [32, 32]),
            flow: FlowParams::default(),
        }
    }
}

impl PreprocessConfig {
    /// Default crops for `source` dims resized to `target`.
    pub fn for_dims(source: [usize; 2], target: [usize; 2]) -> Self {
        PreprocessConfig {
            crops: default_crops(source, target),
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.crops[0].view != View::Side || self.crops[1].view != View::Front {
            return Err(Error::Config("crops must be listed side first, then front".into()));
        }
        if self.crops[0].target != self.crops[1].target {
            return Err(Error::Config("side and front crops must share a target size".into()));
        }
        Ok(())
    }
}

/// Index file written next to preprocessed clips.
pub const INDEX_FILE: &str = "index.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub clip_id: String,
    pub split: Split,
    pub file: String,
}

fn frames_entry(path: &Path) -> Result<Tensor<f32>> {
    read_container(path)?
        .into_iter()
        .find(|(n, _)| n == "frames")
        .ok_or_else(|| Error::Config(format!("{}: no `frames` entry", path.display())))?
        .1
        .into_typed()
}

/// Decimates, crops and resizes one clip, then computes its flows.
pub fn preprocess_clip(entry: &ClipEntry, root: &Path, cfg: &PreprocessConfig) -> Result<ClipSequence> {
    let mut views = Vec::with_capacity(2);
    for spec in &cfg.crops {
        let file = entry
            .files
            .get(&spec.view)
            .ok_or_else(|| Error::Config(format!("clip `{}` has no {} view", entry.clip_id, spec.view.name())))?;
        views.push(frames_entry(&root.join(file))?);
    }
    sequence_from_source(&entry.clip_id, entry.split, [&views[0], &views[1]], &entry.frame_labels(), cfg)
}

/// Same as [`preprocess_clip`] for clips already in memory.
pub fn preprocess_rendered(clip: &RenderedClip, cfg: &PreprocessConfig) -> Result<ClipSequence> {
    let mut labels = Vec::new();
    for r in &clip.labels {
        labels.resize(r.end, r.label_id);
    }
    sequence_from_source(&clip.clip_id, clip.split, [&clip.views[0], &clip.views[1]], &labels, cfg)
}

fn sequence_from_source(
    clip_id: &str,
    split: Split,
    views: [&Tensor<f32>; 2],
    frame_labels: &[usize],
    cfg: &PreprocessConfig,
) -> Result<ClipSequence> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(2);
    for (src, spec) in views.into_iter().zip(&cfg.crops) {
        let s = src.shape().to_vec();
        if s.len() != 4 || s[0] != frame_labels.len() {
            return Err(Error::shape(
                "preprocess",
                format!("{clip_id}: frames {s:?} for {} labels", frame_labels.len()),
            ));
        }
        spec.check(s[1], s[2])?;
        let kept = temporal_downsample(&(0..s[0]).collect::<Vec<_>>());
        let frames = kept
            .iter()
            .map(|&t| crop_resize(&src.slice_outer(t, 1)?.reshape(&s[1..])?, spec))
            .collect::<Result<Vec<_>>>()?;
        out.push(Tensor::stack(&frames.iter().collect::<Vec<_>>())?);
    }
    let front = out.pop().expect("two views");
    let side = out.pop().expect("two views");
    ClipSequence::from_frames(clip_id, split, side, front, temporal_downsample(frame_labels), cfg.flow)
}

/// Renders and preprocesses a synthetic dataset without touching disk.
pub fn synthetic_sequences(synth: &SynthConfig, cfg: &PreprocessConfig) -> Result<Vec<ClipSequence>> {
    render_dataset(synth)?.iter().map(|c| preprocess_rendered(c, cfg)).collect()
}

pub fn save_sequence(clip: &ClipSequence, path: &Path) -> Result<()> {
    let labels = Tensor::new(&[clip.len()], clip.labels.iter().map(|&l| l as f32).collect())?;
    let mut entries = Vec::new();
    for (i, view) in View::BOTH.into_iter().enumerate() {
        entries.push((format!("{}/frames", view.name()), AnyTensor::from(clip.frames[i].clone())));
        entries.push((format!("{}/flows", view.name()), AnyTensor::from(clip.flows[i].clone())));
    }
    entries.push(("labels".to_string(), AnyTensor::from(labels)));
    write_container(&entries, path)
}

pub fn load_sequence(path: &Path, clip_id: &str, split: Split) -> Result<ClipSequence> {
    let mut map: std::collections::HashMap<String, AnyTensor> = read_container(path)?.into_iter().collect();
    let mut take = |name: &str| -> Result<Tensor<f32>> {
        map.remove(name)
            .ok_or_else(|| Error::Config(format!("{}: missing entry `{name}`", path.display())))?
            .into_typed()
    };
    let frames = [take("side/frames")?, take("front/frames")?];
    let flows = [take("side/flows")?, take("front/flows")?];
    let labels = take("labels")?.data().iter().map(|&l| l as usize).collect();
    Ok(ClipSequence {
        clip_id: clip_id.to_string(),
        split,
        frames,
        flows,
        labels,
    })
}

/// Preprocesses every clip of a manifest into `out`, one container per clip.
pub fn preprocess_dataset(manifest: &DatasetManifest, root: &Path, cfg: &PreprocessConfig, out: &Path) -> Result<Vec<IndexEntry>> {
    fs::create_dir_all(out)?;
    let mut index = Vec::new();
    for entry in &manifest.clips {
        let seq = preprocess_clip(entry, root, cfg)?;
        let file = format!("{}.ictn", entry.clip_id);
        save_sequence(&seq, &out.join(&file))?;
        index.push(IndexEntry {
            clip_id: entry.clip_id.clone(),
            split: entry.split,
            file,
        });
    }
    fs::write(out.join(INDEX_FILE), serde_json::to_string_pretty(&index)?)?;
    Ok(index)
}

/// Loads the preprocessed clips of one split.
pub fn load_dataset(dir: &Path, split: Split) -> Result<Vec<ClipSequence>> {
    let index: Vec<IndexEntry> = serde_json::from_str(&fs::read_to_string(dir.join(INDEX_FILE))?)?;
    index
        .iter()
        .filter(|e| e.split == split)
        .map(|e| load_sequence(&dir.join(&e.file), &e.clip_id, e.split))
        .collect()
}
