use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::container::read_container;
use super::crop::View;
use crate::error::{Error, Result};
use crate::models::BehaviorLabel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

/// Frames `start..end` (source frame indices, end exclusive) carry `label_id`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelRun {
    pub label_id: usize,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipEntry {
    pub clip_id: String,
    pub split: Split,
    /// Views recorded for this clip.
    pub view: Vec<View>,
    pub fps: f64,
    pub frames: usize,
    pub labels: Vec<LabelRun>,
    /// Container path per view, relative to the manifest directory.
    pub files: BTreeMap<View, String>,
}

impl ClipEntry {
    /// Label id of every source frame.
    pub fn frame_labels(&self) -> Vec<usize> {
        let mut out = vec![0; self.frames];
        for r in &self.labels {
            out[r.start..r.end].fill(r.label_id);
        }
        out
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("clip `{}`: {m}", self.clip_id)));
        if self.frames == 0 || !(self.fps > 0.0) {
            return bad("needs frames > 0 and fps > 0".into());
        }
        let mut next = 0;
        for r in &self.labels {
            if r.start != next || r.end <= r.start || r.end > self.frames {
                return bad(format!("label run {}..{} breaks coverage at frame {next}", r.start, r.end));
            }
            BehaviorLabel::from_id(r.label_id)?;
            next = r.end;
        }
        if next != self.frames {
            return bad(format!("label runs cover {next} of {} frames", self.frames));
        }
        for v in &self.view {
            if !self.files.contains_key(v) {
                return bad(format!("no file for view {}", v.name()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    /// `[height, width]` of the source frames.
    pub source_dims: [usize; 2],
    pub clips: Vec<ClipEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        let mut ids = std::collections::HashSet::new();
        for c in &self.clips {
            if !ids.insert(&c.clip_id) {
                return Err(Error::Config(format!("duplicate clip id `{}`", c.clip_id)));
            }
            c.validate()?;
        }
        Ok(())
    }

    /// Also checks that every referenced container exists, parses and holds
    /// `frames [T,H,W,3]` matching the entry.
    pub fn validate_files(&self, root: &Path) -> Result<()> {
        self.validate()?;
        let [h, w] = self.source_dims;
        for c in &self.clips {
            for (v, f) in &c.files {
                let entries = read_container(&root.join(f))?;
                let frames = entries.iter().find(|(n, _)| n == "frames").ok_or_else(|| {
                    Error::Config(format!("{f}: no `frames` entry for view {}", v.name()))
                })?;
                if frames.1.shape() != [c.frames, h, w, 3] {
                    return Err(Error::Config(format!(
                        "{f}: frames shape {:?}, manifest says [{}, {h}, {w}, 3]",
                        frames.1.shape(),
                        c.frames
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ClipEntry> {
        self.clips.iter().filter(move |c| c.split == split)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let m: DatasetManifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}
