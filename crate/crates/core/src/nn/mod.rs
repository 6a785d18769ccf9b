//! Layer stacks with named parameters and taps, plus the builders for every
//! architecture in the pipeline.

mod builders;
mod kind;
mod network;

pub use builders::{
    build_classifier, build_dcgan_generator, build_decoder, build_discriminator, build_encoder, build_from_kind,
    ENCODER_WIDTHS, MAX_LEVEL,
};
pub use kind::{Head, NetKind};
#[cfg(test)]
pub(crate) use network::tiny_mlp;
pub use network::{BnStats, Forward, Init, Layer, Mode, Network, NetworkBuilder, Param};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Real, Tensor};

pub const DEFAULT_LATENT_DIM: usize = 100;

/// Seeded standard-normal latent vectors.
#[derive(Clone, Debug)]
pub struct LatentSampler {
    dim: usize,
    rng: ChaCha8Rng,
}

impl LatentSampler {
    pub fn new(dim: usize, seed: u64) -> Self {
        LatentSampler {
            dim,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `n × dim` draws from `N(0, 1)`.
    pub fn sample<T: Real>(&mut self, n: usize) -> Tensor<T> {
        Tensor::randn(&[n, self.dim], 1.0, &mut self.rng)
    }
}
