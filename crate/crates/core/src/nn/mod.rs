//! Layers, composite blocks and parameter/FLOP accounting.

mod blocks;
mod interweave;
mod layers;
mod params;

pub use blocks::{BlockKind, Cnn3dBlock, CnnBlock, KERNEL};
pub use interweave::{spatial_fuse, InterweavingModule, SpatialFuse};
pub use layers::{BatchNorm, Conv2d, Conv3d, ConvKind, Dense, Feeds};
pub use params::{bn_momentum, Forward, ParamId, ParamStore, RunningStats, StatId};

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::tensor::ops::Mode;
use crate::tensor::{Scalar, Tensor};

/// Per-sample shape propagation that accumulates FLOPs and records the
/// shapes of named activations.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    pub flops: u64,
    pub shapes: Vec<(String, Vec<usize>)>,
}

impl Trace {
    pub fn record(&mut self, tag: impl Into<String>, shape: &[usize]) {
        self.shapes.push((tag.into(), shape.to_vec()));
    }

    pub fn shape_of(&self, tag: &str) -> Option<&[usize]> {
        self.shapes
            .iter()
            .find(|(t, _)| t == tag)
            .map(|(_, s)| s.as_slice())
    }
}

/// Runs `body` on a fresh tape with every parameter bound and `input` as a
/// constant, returning the output value. Batch-stat updates are discarded.
pub fn run_layer<T, F>(store: &ParamStore<T>, mode: Mode, input: &Tensor<T>, body: F) -> Result<Tensor<T>>
where
    T: Scalar,
    F: FnOnce(&mut Forward<'_, T>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let x = tape.constant(input.clone());
    let mut f = Forward::bind(&mut tape, store, mode);
    let y = body(&mut f, x)?;
    drop(f);
    Ok(tape.value(y).clone())
}

#[cfg(test)]
mod tests;
