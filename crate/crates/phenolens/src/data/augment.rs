//! Stochastic image augmentation for contrastive view creation.
//!
//! One [`augment`] call draws its parameters from the supplied stream in a
//! fixed order (crop scale, crop offsets, flip, rotation angle, brightness,
//! contrast, then per-pixel noise), then applies only the operations whose
//! drawn parameter differs from the identity. An identity policy therefore
//! returns the input bit-for-bit, and flips plus quarter-turn rotations are
//! exact pixel permutations.

use ndarray::Array2;

use crate::data::ImageGrid;
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentPolicy {
    /// Side-length scale of the random crop, in (0, 1]; the crop is resized
    /// back to the input side (nearest neighbor).
    pub crop_scale_range: [f64; 2],
    pub hflip_prob: f64,
    /// Rotation angle drawn uniformly from [-max, max] degrees.
    pub rotation_max_degrees: f64,
    /// Multiplicative intensity factor range.
    pub brightness_range: [f64; 2],
    /// Multiplicative contrast factor range, applied about mid-gray 0.5.
    pub contrast_range: [f64; 2],
    pub gauss_noise_sigma: f64,
    pub salt_pepper_prob: f64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        // Calibrated for the synthetic generator: photometric jitter is kept
        // mild so intensity-gradient phenotypes stay distinguishable, and
        // rotations moderate so positive pairs remain matchable for a small
        // encoder.
        AugmentPolicy {
            crop_scale_range: [0.8, 1.0],
            hflip_prob: 0.5,
            rotation_max_degrees: 45.0,
            brightness_range: [0.95, 1.05],
            contrast_range: [0.95, 1.05],
            gauss_noise_sigma: 0.01,
            salt_pepper_prob: 0.005,
        }
    }
}

impl AugmentPolicy {
    /// Policy that leaves every input unchanged.
    pub fn identity() -> Self {
        AugmentPolicy {
            crop_scale_range: [1.0, 1.0],
            hflip_prob: 0.0,
            rotation_max_degrees: 0.0,
            brightness_range: [1.0, 1.0],
            contrast_range: [1.0, 1.0],
            gauss_noise_sigma: 0.0,
            salt_pepper_prob: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ordered = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && r[0] <= r[1];
        if !ordered(self.crop_scale_range)
            || self.crop_scale_range[0] <= 0.0
            || self.crop_scale_range[1] > 1.0
        {
            return Err(Error::invalid_config("crop_scale_range", "must satisfy 0 < lo <= hi <= 1"));
        }
        if !(0.0..=1.0).contains(&self.hflip_prob) {
            return Err(Error::invalid_config("hflip_prob", "must be in [0, 1]"));
        }
        if !(0.0..=360.0).contains(&self.rotation_max_degrees) {
            return Err(Error::invalid_config("rotation_max_degrees", "must be in [0, 360]"));
        }
        if !ordered(self.brightness_range) || self.brightness_range[0] < 0.0 {
            return Err(Error::invalid_config("brightness_range", "must satisfy 0 <= lo <= hi"));
        }
        if !ordered(self.contrast_range) || self.contrast_range[0] < 0.0 {
            return Err(Error::invalid_config("contrast_range", "must satisfy 0 <= lo <= hi"));
        }
        if !(self.gauss_noise_sigma.is_finite() && self.gauss_noise_sigma >= 0.0) {
            return Err(Error::invalid_config("gauss_noise_sigma", "must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.salt_pepper_prob) {
            return Err(Error::invalid_config("salt_pepper_prob", "must be in [0, 1]"));
        }
        Ok(())
    }
}

/// Crop the `len`-sided window at (r0, c0) and resize it back to `side`
/// using nearest-neighbor sampling (integer arithmetic, no rounding drift).
fn crop_resize(px: &Array2<f32>, r0: usize, c0: usize, len: usize) -> Array2<f32> {
    let side = px.nrows();
    Array2::from_shape_fn((side, side), |(r, c)| {
        let sr = r0 + ((2 * r + 1) * len) / (2 * side);
        let sc = c0 + ((2 * c + 1) * len) / (2 * side);
        px[[sr, sc]]
    })
}

fn hflip(px: &Array2<f32>) -> Array2<f32> {
    let side = px.nrows();
    Array2::from_shape_fn((side, side), |(r, c)| px[[r, side - 1 - c]])
}

/// One exact quarter turn; the direction matches the trig path below.
fn quarter_turn(px: &Array2<f32>) -> Array2<f32> {
    let side = px.nrows();
    Array2::from_shape_fn((side, side), |(r, c)| px[[side - 1 - c, r]])
}

/// Rotate about the image center with nearest-neighbor resampling;
/// out-of-bounds sources fill with 0. Exact multiples of 90 degrees take the
/// lattice-permutation path so the 4x90 identity holds bit-for-bit.
fn rotate(px: &Array2<f32>, degrees: f64) -> Array2<f32> {
    let side = px.nrows();
    let normalized = degrees.rem_euclid(360.0);
    if normalized % 90.0 == 0.0 {
        let turns = (normalized / 90.0) as usize % 4;
        let mut out = px.clone();
        for _ in 0..turns {
            out = quarter_turn(&out);
        }
        return out;
    }
    let theta = normalized.to_radians();
    let (sin, cos) = theta.sin_cos();
    let center = (side as f64 - 1.0) / 2.0;
    Array2::from_shape_fn((side, side), |(r, c)| {
        let x = c as f64 - center;
        let y = r as f64 - center;
        let sc = (cos * x + sin * y + center).round();
        let sr = (-sin * x + cos * y + center).round();
        if sr >= 0.0 && sc >= 0.0 && (sr as usize) < side && (sc as usize) < side {
            px[[sr as usize, sc as usize]]
        } else {
            0.0
        }
    })
}

/// Apply one stochastic augmentation pass. Same-size output, values clamped
/// to [0, 1], fully determined by `(img, policy, rng state)`.
pub fn augment(img: &ImageGrid, policy: &AugmentPolicy, rng: &mut SplitMix64) -> ImageGrid {
    let side = img.side();

    // Fixed draw order; all geometric/photometric parameters come first.
    let scale = rng.uniform(policy.crop_scale_range[0], policy.crop_scale_range[1]);
    let crop_len = ((scale * side as f64).round() as usize).clamp(1, side);
    let r0 = rng.below(side - crop_len + 1);
    let c0 = rng.below(side - crop_len + 1);
    let flip = rng.next_f64() < policy.hflip_prob;
    let angle = rng.uniform(-policy.rotation_max_degrees, policy.rotation_max_degrees);
    let brightness = rng.uniform(policy.brightness_range[0], policy.brightness_range[1]);
    let contrast = rng.uniform(policy.contrast_range[0], policy.contrast_range[1]);

    let mut px = img.pixels().clone();
    if crop_len != side || r0 != 0 || c0 != 0 {
        px = crop_resize(&px, r0, c0, crop_len);
    }
    if flip {
        px = hflip(&px);
    }
    if angle != 0.0 {
        px = rotate(&px, angle);
    }
    if brightness != 1.0 {
        let f = brightness as f32;
        px.mapv_inplace(|p| p * f);
    }
    if contrast != 1.0 {
        let f = contrast as f32;
        px.mapv_inplace(|p| (p - 0.5) * f + 0.5);
    }
    if policy.gauss_noise_sigma > 0.0 {
        let sigma = policy.gauss_noise_sigma;
        for p in px.iter_mut() {
            *p += (sigma * rng.normal()) as f32;
        }
    }
    if policy.salt_pepper_prob > 0.0 {
        let prob = policy.salt_pepper_prob;
        for p in px.iter_mut() {
            let u = rng.next_f64();
            if u < prob / 2.0 {
                *p = 0.0;
            } else if u < prob {
                *p = 1.0;
            }
        }
    }
    px.mapv_inplace(|p| p.clamp(0.0, 1.0));
    ImageGrid::new(px).expect("augmented image stays square and clamped")
}

/// Two independent augmentation draws of the same source image.
pub fn make_views(
    img: &ImageGrid,
    policy: &AugmentPolicy,
    rng: &mut SplitMix64,
) -> (ImageGrid, ImageGrid) {
    let a = augment(img, policy, rng);
    let b = augment(img, policy, rng);
    (a, b)
}
