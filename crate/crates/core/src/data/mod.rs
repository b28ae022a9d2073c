//! On-disk formats, preprocessing and the synthetic dataset.

pub mod container;
pub mod crop;
pub mod manifest;
pub mod preprocess;
pub mod synth;
pub mod windows;

pub use container::{read_container, write_container, AnyTensor};
pub use crop::{crop_resize, CropBox, CropSpec, View};
pub use manifest::{ClipEntry, DatasetManifest, LabelRun, Split};
pub use preprocess::{load_dataset, preprocess_clip, preprocess_dataset, synthetic_sequences, PreprocessConfig};
pub use synth::{default_crops, generate_synthetic_dataset, render_dataset, SynthConfig};
pub use windows::{assemble_windows, collate, temporal_downsample, ClipSequence, Dataset, SampleWindow, WINDOW_FRAMES};
