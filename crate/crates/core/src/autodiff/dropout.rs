//! Counter-keyed dropout masks.
//!
//! A mask is a pure function of its key and shape, so a forward pass can be
//! replayed exactly (finite differences, checkpoint resume) and two passes
//! over the same input with different pass indices draw different masks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::TensorError;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a sequence of words into one 64-bit key.
pub fn mix_words(words: &[u64]) -> u64 {
    words.iter().fold(0x51_7C_C1_B7_27_22_0A_95, |h, &w| mix64(h ^ mix64(w)))
}

/// Identifies one dropout site in one forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct DropoutKey {
    pub seed: u64,
    pub step: u64,
    /// Sample slot within the step.
    pub stream: u64,
    /// Layer/site index inside the network.
    pub site: u64,
    /// Forward-pass index; the two consistency passes use different values.
    pub pass: u64,
}

impl DropoutKey {
    pub fn derive(&self) -> u64 {
        mix_words(&[self.seed, self.step, self.stream, self.site, self.pass])
    }
}

/// Binary keep-mask with inverted-dropout scaling baked in.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMask {
    keep_prob: f64,
    seed: u64,
    shape: Vec<usize>,
    scales: Vec<f64>,
}

impl DropoutMask {
    pub fn generate(seed: u64, shape: &[usize], keep_prob: f64) -> Result<Self, TensorError> {
        if !(keep_prob > 0.0 && keep_prob <= 1.0) {
            return Err(TensorError::InvalidArgument(format!(
                "keep probability {keep_prob} outside (0, 1]"
            )));
        }
        let numel: usize = shape.iter().product();
        let scales = if keep_prob == 1.0 {
            vec![1.0; numel]
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let inv = 1.0 / keep_prob;
            (0..numel)
                .map(|_| if rng.random::<f64>() < keep_prob { inv } else { 0.0 })
                .collect()
        };
        Ok(Self {
            keep_prob,
            seed,
            shape: shape.to_vec(),
            scales,
        })
    }

    pub fn from_key(key: DropoutKey, shape: &[usize], keep_prob: f64) -> Result<Self, TensorError> {
        Self::generate(key.derive(), shape, keep_prob)
    }

    pub fn keep_prob(&self) -> f64 {
        self.keep_prob
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// Per-element multipliers: `0` or `1 / keep_prob`.
    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn kept(&self) -> impl Iterator<Item = bool> + '_ {
        self.scales.iter().map(|&s| s != 0.0)
    }
}
