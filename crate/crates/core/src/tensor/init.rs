use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{check_shape, Scalar, Tensor};
use crate::error::{Error, Result};

/// Parameter initialization schemes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitScheme {
    Zeros,
    Ones,
    /// N(0, 1/fan_in); pairs with SELU.
    LecunNormal { fan_in: usize },
    /// N(0, 2/fan_in); pairs with ReLU.
    HeNormal { fan_in: usize },
}

pub fn init_tensor<T: Scalar>(shape: &[usize], scheme: InitScheme, seed: u64) -> Result<Tensor<T>> {
    check_shape(shape)?;
    let variance = match scheme {
        InitScheme::Zeros => return Tensor::zeros(shape),
        InitScheme::Ones => return Tensor::full(shape, T::one()),
        InitScheme::LecunNormal { fan_in } | InitScheme::HeNormal { fan_in } if fan_in == 0 => {
            return Err(Error::Config("fan_in must be at least 1".into()))
        }
        InitScheme::LecunNormal { fan_in } => 1.0 / fan_in as f64,
        InitScheme::HeNormal { fan_in } => 2.0 / fan_in as f64,
    };
    let normal = Normal::new(0.0, variance.sqrt()).expect("positive std");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| T::of(normal.sample(&mut rng)))
}
