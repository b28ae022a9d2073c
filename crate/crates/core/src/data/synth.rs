//! Procedural two-view driver clips.
//!
//! Each behavior class is a colored blob with its own resting position,
//! oscillation direction and frequency. The side view alone identifies the
//! class; the front view shows the same motion mirrored with rotated colors.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::container::{write_container, AnyTensor};
use super::crop::{CropBox, CropSpec, View};
use super::manifest::{ClipEntry, DatasetManifest, LabelRun, Split};
use crate::error::{Error, Result};
use crate::models::BehaviorLabel;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub seed: u64,
    /// Clips in the train, validation and test splits.
    pub clips: [usize; 3],
    /// Source `[height, width]`.
    pub dims: [usize; 2],
    pub fps: f64,
    /// Labeled segments per clip.
    pub segments: usize,
    /// Source frames per segment.
    pub segment_frames: usize,
    /// Standard deviation of the additive pixel noise.
    pub noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            clips: [30, 10, 10],
            dims: [18, 32],
            fps: 24.0,
            segments: 3,
            segment_frames: 144,
            noise: 0.02,
        }
    }
}

/// Region of the source frame each view's crop covers, as fractions of
/// `(x0, y0, width, height)`.
const SIDE_REGION: [f64; 4] = [0.0625, 0.0556, 0.5, 0.8889];
const FRONT_REGION: [f64; 4] = [0.375, 0.0, 0.5625, 1.0];

fn region_box(r: [f64; 4], dims: [usize; 2]) -> CropBox {
    let [h, w] = dims;
    let x0 = (r[0] * w as f64).round() as usize;
    let y0 = (r[1] * h as f64).round() as usize;
    let width = ((r[2] * w as f64).round() as usize).clamp(1, w - x0);
    let height = ((r[3] * h as f64).round() as usize).clamp(1, h - y0);
    CropBox { x0, y0, width, height }
}

/// Crop specs matching the regions the generator renders into.
pub fn default_crops(dims: [usize; 2], target: [usize; 2]) -> [CropSpec; 2] {
    [
        CropSpec {
            view: View::Side,
            crop: region_box(SIDE_REGION, dims),
            target,
        },
        CropSpec {
            view: View::Front,
            crop: region_box(FRONT_REGION, dims),
            target,
        },
    ]
}

/// Rendered source frames of one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedClip {
    pub clip_id: String,
    pub split: Split,
    /// `[T, H, W, 3]`, side first.
    pub views: [Tensor<f32>; 2],
    pub labels: Vec<LabelRun>,
}

fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let i = (h * 6.0).floor();
    let f = h * 6.0 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - f * s), v * (1.0 - (1.0 - f) * s));
    match i as i64 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

struct ClassLook {
    color: [f64; 3],
    /// Resting offset in units of the region size.
    offset: [f64; 2],
    direction: f64,
    hz: f64,
}

fn class_look(k: usize) -> ClassLook {
    ClassLook {
        color: hsv(k as f64 / 9.0, 0.85, 0.95),
        offset: [((k % 3) as f64 - 1.0) * 0.25, ((k / 3) as f64 - 1.0) * 0.25],
        direction: k as f64 * TAU / 9.0,
        hz: 0.3 + 0.15 * (k % 4) as f64,
    }
}

/// Per-clip nuisance parameters.
struct Jitter {
    shift: [f64; 2],
    brightness: f64,
    contrast: f64,
    amplitude: f64,
    phase: f64,
}

fn segment_classes(cfg: &SynthConfig, split: Split, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let n = cfg.clips[split as usize] * cfg.segments;
    let mut order = Vec::with_capacity(n + 9);
    while order.len() < n {
        let mut block: Vec<usize> = (0..BehaviorLabel::COUNT).collect();
        block.shuffle(rng);
        order.extend(block);
    }
    order.truncate(n);
    order.chunks(cfg.segments.max(1)).map(<[usize]>::to_vec).collect()
}

fn render_view(
    cfg: &SynthConfig,
    view: View,
    classes: &[usize],
    jitter: &Jitter,
    rng: &mut ChaCha8Rng,
) -> Tensor<f32> {
    let [h, w] = cfg.dims;
    let region = match view {
        View::Side => region_box(SIDE_REGION, cfg.dims),
        View::Front => region_box(FRONT_REGION, cfg.dims),
    };
    let center = [
        region.x0 as f64 + (region.width - 1) as f64 / 2.0,
        region.y0 as f64 + (region.height - 1) as f64 / 2.0,
    ];
    let scale = region.width.min(region.height) as f64;
    let sigma = scale / 8.0;
    let noise = Normal::new(0.0, cfg.noise.max(0.0)).expect("finite noise");
    let t_total = classes.len() * cfg.segment_frames;
    let mut data = Vec::with_capacity(t_total * h * w * 3);
    for f in 0..t_total {
        let look = class_look(classes[f / cfg.segment_frames]);
        let (color, mirror) = match view {
            View::Side => (look.color, 1.0),
            View::Front => ([look.color[1], look.color[2], look.color[0]], -1.0),
        };
        let secs = f as f64 / cfg.fps;
        let swing = jitter.amplitude * scale * 0.12 * (TAU * look.hz * secs + jitter.phase).sin();
        let bx = center[0] + mirror * (look.offset[0] * scale + swing * look.direction.cos()) + jitter.shift[0];
        let by = center[1] + look.offset[1] * scale + swing * look.direction.sin() + jitter.shift[1];
        for y in 0..h {
            for x in 0..w {
                let d2 = (x as f64 - bx).powi(2) + (y as f64 - by).powi(2);
                let g = jitter.contrast * (-d2 / (2.0 * sigma * sigma)).exp();
                let bg = jitter.brightness + 0.1 * x as f64 / w as f64;
                for c in color {
                    let v = bg * (1.0 - g) + c * g + noise.sample(rng);
                    data.push(v.clamp(0.0, 1.0) as f32);
                }
            }
        }
    }
    Tensor::new(&[t_total, h, w, 3], data).expect("render dims")
}

fn clip_id(split: Split, i: usize) -> String {
    format!("{}_{i:03}", split.name())
}

/// Renders every clip of the dataset in manifest order.
pub fn render_dataset(cfg: &SynthConfig) -> Result<Vec<RenderedClip>> {
    validate(cfg)?;
    let mut out = Vec::new();
    for split in Split::ALL {
        let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        order_rng.set_stream(split as u64 + 1);
        for (i, classes) in segment_classes(cfg, split, &mut order_rng).into_iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(((split as u64 + 1) << 32) + i as u64 + 1);
            let jitter = Jitter {
                shift: [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
                brightness: rng.random_range(0.15..0.3),
                contrast: rng.random_range(0.8..1.0),
                amplitude: rng.random_range(0.8..1.2),
                phase: rng.random_range(0.0..TAU),
            };
            let views = [
                render_view(cfg, View::Side, &classes, &jitter, &mut rng),
                render_view(cfg, View::Front, &classes, &jitter, &mut rng),
            ];
            let labels = classes
                .iter()
                .enumerate()
                .map(|(s, &label_id)| LabelRun {
                    label_id,
                    start: s * cfg.segment_frames,
                    end: (s + 1) * cfg.segment_frames,
                })
                .collect();
            out.push(RenderedClip {
                clip_id: clip_id(split, i),
                split,
                views,
                labels,
            });
        }
    }
    Ok(out)
}

fn validate(cfg: &SynthConfig) -> Result<()> {
    let [h, w] = cfg.dims;
    if h < 4 || w < 8 || cfg.segments == 0 || cfg.segment_frames == 0 || !(cfg.fps > 0.0) {
        return Err(Error::Config(format!("invalid synthetic dataset settings {cfg:?}")));
    }
    Ok(())
}

/// Writes `manifest.json` plus one container per clip and view under `dir`.
pub fn generate_synthetic_dataset(cfg: &SynthConfig, dir: &Path) -> Result<DatasetManifest> {
    fs::create_dir_all(dir.join("clips"))?;
    let mut clips = Vec::new();
    for clip in render_dataset(cfg)? {
        let mut files = BTreeMap::new();
        for (view, frames) in View::BOTH.into_iter().zip(clip.views) {
            let rel = format!("clips/{}_{}.ictn", clip.clip_id, view.name());
            write_container(&[("frames".to_string(), AnyTensor::from(frames))], &dir.join(&rel))?;
            files.insert(view, rel);
        }
        clips.push(ClipEntry {
            clip_id: clip.clip_id,
            split: clip.split,
            view: View::BOTH.to_vec(),
            fps: cfg.fps,
            frames: cfg.segments * cfg.segment_frames,
            labels: clip.labels,
            files,
        });
    }
    let manifest = DatasetManifest {
        version: 1,
        source_dims: cfg.dims,
        clips,
    };
    manifest.validate()?;
    manifest.save(dir)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::windows::{majority_label, temporal_downsample, WINDOW_FRAMES};

    fn small() -> SynthConfig {
        SynthConfig {
            seed: 3,
            clips: [3, 2, 2],
            segment_frames: 24,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn crops_fit_and_differ() {
        let [side, front] = default_crops([18, 32], [16, 16]);
        side.check(18, 32).unwrap();
        front.check(18, 32).unwrap();
        assert_ne!(side.crop, front.crop);
        assert_eq!(side.crop, CropBox { x0: 2, y0: 1, width: 16, height: 16 });
    }

    #[test]
    fn same_seed_same_tree() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let ma = generate_synthetic_dataset(&small(), a.path()).unwrap();
        let mb = generate_synthetic_dataset(&small(), b.path()).unwrap();
        assert_eq!(ma, mb);
        ma.validate_files(a.path()).unwrap();
        for c in &ma.clips {
            for f in c.files.values() {
                assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap());
            }
        }
        let mc = render_dataset(&SynthConfig { seed: 4, ..small() }).unwrap();
        assert!(!mc[0].views[0].bitwise_eq(&render_dataset(&small()).unwrap()[0].views[0]));
    }

    #[test]
    fn pixels_in_unit_range() {
        for c in render_dataset(&small()).unwrap() {
            for v in &c.views {
                assert!(v.data().iter().all(|p| (0.0..=1.0).contains(p)));
            }
        }
    }

    #[test]
    fn window_counts_balanced() {
        let cfg = SynthConfig::default();
        let clips = render_dataset(&SynthConfig { noise: 0.0, ..cfg.clone() }).unwrap();
        let mut counts = [0usize; 9];
        for c in clips.iter().filter(|c| c.split == Split::Train) {
            let mut frames = vec![0; cfg.segments * cfg.segment_frames];
            for r in &c.labels {
                frames[r.start..r.end].fill(r.label_id);
            }
            let ds = temporal_downsample(&frames);
            for s in 0..=ds.len() - WINDOW_FRAMES {
                counts[majority_label(&ds[s..s + WINDOW_FRAMES]).unwrap()] += 1;
            }
        }
        let (lo, hi) = (*counts.iter().min().unwrap(), *counts.iter().max().unwrap());
        assert!((hi - lo) as f64 <= 0.1 * hi as f64, "{counts:?}");
    }

    #[test]
    fn centroid_classifier_beats_chance() {
        let cfg = SynthConfig { clips: [6, 3, 0], ..SynthConfig::default() };
        let clips = render_dataset(&cfg).unwrap();
        // mean side frame of each segment as the feature vector
        let features = |c: &RenderedClip| -> Vec<(usize, Vec<f64>)> {
            let v = &c.views[0];
            let per: usize = v.shape()[1..].iter().product();
            c.labels
                .iter()
                .map(|r| {
                    let mut m = vec![0.0; per];
                    for t in r.start..r.end {
                        for (acc, &p) in m.iter_mut().zip(&v.data()[t * per..(t + 1) * per]) {
                            *acc += p as f64 / (r.end - r.start) as f64;
                        }
                    }
                    (r.label_id, m)
                })
                .collect()
        };
        let mut sums = vec![(0usize, Vec::<f64>::new()); 9];
        for c in clips.iter().filter(|c| c.split == Split::Train) {
            for (l, f) in features(c) {
                let s = &mut sums[l];
                if s.1.is_empty() {
                    s.1 = vec![0.0; f.len()];
                }
                s.0 += 1;
                s.1.iter_mut().zip(&f).for_each(|(a, b)| *a += b);
            }
        }
        let centroids: Vec<Vec<f64>> = sums.iter().map(|(n, s)| s.iter().map(|v| v / *n as f64).collect()).collect();
        let (mut hit, mut total) = (0, 0);
        for c in clips.iter().filter(|c| c.split == Split::Validation) {
            for (l, f) in features(c) {
                let dist = |k: usize| centroids[k].iter().zip(&f).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
                let best = (0..9).min_by(|&a, &b| dist(a).total_cmp(&dist(b))).unwrap();
                hit += usize::from(best == l);
                total += 1;
            }
        }
        let acc = hit as f64 / total as f64;
        assert!(acc > 1.0 / 9.0, "centroid accuracy {acc}");
    }
}
