//! Randomised primitives of MaskDP-SGD: L2 clipping, spherical Gaussian
//! noise and Poisson batch sampling.
//!
//! Randomness comes from ChaCha20 (`rand_chacha::ChaCha20Rng`). A run seed is
//! expanded into a key with `SeedableRng::seed_from_u64`, and each consumer
//! gets its own ChaCha stream id ([`Stream`]), so batch sampling and noise
//! never share draws. Gaussian variates use the ziggurat sampler of
//! `rand_distr::StandardNormal`, scaled by `sigma`.
//!
//! This is research code: the generator is not a vetted source of randomness
//! for deploying differential privacy, and floating-point Gaussian noise has
//! known side channels.

use std::ops::{AddAssign, Index};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Dense gradient over the flattened parameter vector of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GradientVector {
    values: Vec<f64>,
}

impl GradientVector {
    pub fn zeros(dim: usize) -> Self {
        Self {
            values: vec![0.0; dim],
        }
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Self) -> f64 {
        assert_eq!(self.len(), other.len(), "gradient dimension mismatch");
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|v| *v *= factor);
    }
}

impl AddAssign<&GradientVector> for GradientVector {
    fn add_assign(&mut self, rhs: &GradientVector) {
        assert_eq!(self.len(), rhs.len(), "gradient dimension mismatch");
        self.values
            .iter_mut()
            .zip(&rhs.values)
            .for_each(|(a, b)| *a += b);
    }
}

impl Index<usize> for GradientVector {
    type Output = f64;
    fn index(&self, index: usize) -> &f64 {
        &self.values[index]
    }
}

/// Seed of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RandomSeed(pub u64);

/// Independent random sub-streams derived from one [`RandomSeed`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    ModelInit = 1,
    BatchSampling = 2,
    GradientNoise = 3,
    DataGeneration = 4,
}

impl RandomSeed {
    /// Fresh generator for `stream`. Two calls with equal arguments yield the
    /// same sequence of draws.
    pub fn stream(self, stream: Stream) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.0);
        rng.set_stream(stream as u64);
        rng
    }
}

/// Scales `g` by `min(1, threshold / ||g||_2)`.
///
/// Gradients already inside the ball are returned untouched, including the
/// zero vector. `threshold = +inf` never clips.
pub fn clip_to_norm(mut g: GradientVector, threshold: f64) -> GradientVector {
    debug_assert!(threshold > 0.0, "clip threshold must be positive");
    let norm = g.l2_norm();
    if norm > threshold {
        g.scale(threshold / norm);
    }
    g
}

/// `dim` i.i.d. draws from `N(0, sigma^2)`. `sigma = 0` consumes no randomness.
pub fn gaussian_noise<R: Rng + ?Sized>(dim: usize, sigma: f64, rng: &mut R) -> GradientVector {
    debug_assert!(sigma >= 0.0);
    if sigma == 0.0 {
        return GradientVector::zeros(dim);
    }
    let values = (0..dim)
        .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    GradientVector::from_vec(values)
}

/// Poisson subsampling: each index in `0..n` is kept independently with
/// probability `q`. The result is sorted and may be empty.
pub fn poisson_sample<R: Rng + ?Sized>(n: usize, q: f64, rng: &mut R) -> Vec<usize> {
    debug_assert!((0.0..=1.0).contains(&q));
    (0..n).filter(|_| rng.random::<f64>() < q).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_scales_long_vectors_to_threshold() {
        let g = GradientVector::from_vec(vec![6.0, 8.0]);
        let c = clip_to_norm(g, 1.0);
        assert!((c[0] - 0.6).abs() < 1e-15 && (c[1] - 0.8).abs() < 1e-15);
        assert!((c.l2_norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn clip_is_identity_inside_ball() {
        let g = GradientVector::from_vec(vec![0.3, 0.4]);
        assert_eq!(clip_to_norm(g.clone(), 1.0), g);
        assert_eq!(clip_to_norm(g.clone(), f64::INFINITY), g);
    }

    #[test]
    fn clip_of_zero_is_zero() {
        let g = GradientVector::zeros(5);
        assert_eq!(clip_to_norm(g.clone(), 1.0), g);
    }

    #[test]
    fn zero_sigma_is_exact_zero() {
        let mut rng = RandomSeed(1).stream(Stream::GradientNoise);
        assert_eq!(gaussian_noise(4, 0.0, &mut rng), GradientVector::zeros(4));
    }

    #[test]
    fn sampling_extremes() {
        let mut rng = RandomSeed(3).stream(Stream::BatchSampling);
        assert!(poisson_sample(100, 0.0, &mut rng).is_empty());
        assert_eq!(
            poisson_sample(100, 1.0, &mut rng),
            (0..100).collect::<Vec<_>>()
        );
    }

    #[test]
    fn streams_are_independent_and_reproducible() {
        let seed = RandomSeed(42);
        let a: Vec<u64> = (0..4)
            .map(|_| seed.stream(Stream::GradientNoise).random())
            .collect();
        assert!(a.windows(2).all(|w| w[0] == w[1]));
        let noise: u64 = seed.stream(Stream::GradientNoise).random();
        let batch: u64 = seed.stream(Stream::BatchSampling).random();
        assert_ne!(noise, batch);
    }
}
