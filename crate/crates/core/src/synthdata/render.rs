use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::compute::Tensor2D;
use crate::error::{Error, Result};

/// How token strings become "speech" feature frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderSpec {
    /// Inclusive range of frames each token occupies.
    pub frames_per_token: (usize, usize),
    pub feature_dim: usize,
    pub noise_std: f64,
    /// Std of the per-utterance scalar offset added to every feature.
    pub speaker_offset_std: f64,
    /// Seed of the token prototype table.
    pub prototype_seed: u64,
}

impl Default for RenderSpec {
    fn default() -> Self {
        Self { frames_per_token: (12, 20), feature_dim: 16, noise_std: 0.6, speaker_offset_std: 0.3, prototype_seed: 7 }
    }
}

impl RenderSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.frames_per_token;
        if lo < 1 || hi < lo {
            return Err(Error::Config(format!("frames_per_token range [{lo}, {hi}] is invalid")));
        }
        if self.noise_std < 0.0 || self.speaker_offset_std < 0.0 || self.feature_dim == 0 {
            return Err(Error::Config("render noise must be non-negative and feature_dim positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rendered {
    pub features: Tensor2D,
    pub frames_per_token: Vec<usize>,
}

/// Fixed unit-variance Gaussian prototype of a token.
pub fn prototype(token: usize, dim: usize, prototype_seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(prototype_seed ^ (token as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    (0..dim).map(|_| normal.sample(&mut rng)).collect()
}

/// Each token's prototype repeated a random number of frames, plus frame
/// noise and a per-utterance offset. Deterministic in `(tokens, spec, seed)`.
pub fn render_speech(tokens: &[usize], spec: &RenderSpec, seed: u64) -> Result<Rendered> {
    if tokens.is_empty() {
        return Err(Error::Input("cannot render an empty token sequence".into()));
    }
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = spec.frames_per_token;
    let frames_per_token: Vec<usize> = tokens.iter().map(|_| rng.gen_range(lo..=hi)).collect();
    let offset = if spec.speaker_offset_std > 0.0 {
        Normal::new(0.0, spec.speaker_offset_std).expect("std").sample(&mut rng)
    } else {
        0.0
    };
    let noise = (spec.noise_std > 0.0).then(|| Normal::new(0.0, spec.noise_std).expect("std"));
    let total: usize = frames_per_token.iter().sum();
    let mut data = Vec::with_capacity(total * spec.feature_dim);
    for (&tok, &n) in tokens.iter().zip(&frames_per_token) {
        let proto = prototype(tok, spec.feature_dim, spec.prototype_seed);
        for _ in 0..n {
            for &p in &proto {
                let eps = noise.as_ref().map_or(0.0, |d| d.sample(&mut rng));
                data.push(p + offset + eps);
            }
        }
    }
    Ok(Rendered { features: Tensor2D::new(total, spec.feature_dim, data)?, frames_per_token })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_single_frames_reproduce_prototypes() {
        let spec = RenderSpec { frames_per_token: (1, 1), noise_std: 0.0, speaker_offset_std: 0.0, ..Default::default() };
        let r = render_speech(&[5, 9, 5], &spec, 3).unwrap();
        assert_eq!(r.frames_per_token, vec![1, 1, 1]);
        assert_eq!(r.features.row(0), prototype(5, 16, spec.prototype_seed).as_slice());
        assert_eq!(r.features.row(1), prototype(9, 16, spec.prototype_seed).as_slice());
        assert_eq!(r.features.row(0), r.features.row(2));
    }

    #[test]
    fn rendering_is_deterministic() {
        let spec = RenderSpec::default();
        assert_eq!(render_speech(&[4, 5, 6], &spec, 11).unwrap(), render_speech(&[4, 5, 6], &spec, 11).unwrap());
        assert_ne!(render_speech(&[4, 5, 6], &spec, 11).unwrap(), render_speech(&[4, 5, 6], &spec, 12).unwrap());
    }

    #[test]
    fn mean_frame_count_matches_range_midpoint() {
        let spec = RenderSpec::default();
        let mut total = 0;
        let mut tokens = 0;
        for seed in 0..400 {
            let r = render_speech(&[1, 2, 3, 4, 5], &spec, seed).unwrap();
            total += r.features.rows();
            tokens += 5;
        }
        let mean = total as f64 / tokens as f64;
        assert!((mean - 16.0).abs() < 0.3, "{mean}");
    }

    #[test]
    fn empty_input_and_bad_ranges_are_rejected() {
        assert!(render_speech(&[], &RenderSpec::default(), 0).is_err());
        let bad = RenderSpec { frames_per_token: (0, 3), ..Default::default() };
        assert!(render_speech(&[1], &bad, 0).is_err());
    }
}
