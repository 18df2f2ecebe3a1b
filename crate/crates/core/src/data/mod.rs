//! Paired MR/PET samples: synthetic generation, directory loading and
//! subject-level cross-validation splits.

mod folds;
mod load;
mod synth;

pub use folds::{epoch_order, iterate, kfold_split, FoldAssignment, Split};
pub use load::load_dataset;
pub use synth::{oracle_transform, synth_generate, synth_mr, SYNTH_Q};

use crate::error::{FreaError, Result};
use crate::image_ops::{freq_split, normalize, ImageFile, DEFAULT_KERNEL_SIZE, DEFAULT_SIGMA};
use crate::tensor::Tensor;

/// Settings for preparing network inputs and band targets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrepOptions {
    pub size: usize,
    pub sigma: f64,
    pub kernel_size: usize,
}

impl Default for PrepOptions {
    fn default() -> Self {
        PrepOptions {
            size: 64,
            sigma: DEFAULT_SIGMA,
            kernel_size: DEFAULT_KERNEL_SIZE,
        }
    }
}

/// One subject: raw images plus normalized tensors and band targets.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair {
    pub subject_id: String,
    pub mr_image: ImageFile,
    pub pet_image: ImageFile,
    /// `1×1×S×S`, intensities mapped onto `[-1, 1]`.
    pub mr: Tensor,
    pub pet: Tensor,
    /// Low band of `pet` divided by `low_scale`.
    pub pet_low: Tensor,
    /// High band of `pet` divided by `high_scale`.
    pub pet_high: Tensor,
    /// Shared by every sample of a [`Dataset`]; 1 for a standalone pair.
    pub low_scale: f64,
    pub high_scale: f64,
    pub q: f64,
}

impl SamplePair {
    pub fn new(subject_id: impl Into<String>, mr_image: ImageFile, pet_image: ImageFile, opts: &PrepOptions) -> Result<Self> {
        let subject_id = subject_id.into();
        let dims = |i: &ImageFile| (i.height, i.width, i.channels);
        if dims(&mr_image) != dims(&pet_image) {
            return Err(FreaError::Dataset(format!(
                "subject {subject_id}: MR is {:?} but PET is {:?}",
                dims(&mr_image),
                dims(&pet_image)
            )));
        }
        if mr_image.channels != 1 {
            return Err(FreaError::Dataset(format!(
                "subject {subject_id}: expected single-channel images"
            )));
        }
        let mr = normalize(&mr_image)?;
        let pet = normalize(&pet_image)?;
        let bands = freq_split(&pet, opts.sigma, opts.kernel_size)?;
        Ok(SamplePair {
            subject_id,
            q: pet_image.q,
            mr_image,
            pet_image,
            mr,
            pet,
            pet_low: bands.low,
            pet_high: bands.high,
            low_scale: 1.0,
            high_scale: 1.0,
        })
    }

    /// Band targets mapped back to network space.
    pub fn unscaled_bands(&self) -> (Tensor, Tensor) {
        (self.pet_low.scale(self.low_scale), self.pet_high.scale(self.high_scale))
    }
}

fn max_abs(t: &Tensor) -> f64 {
    t.data().iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

/// Samples ordered by subject id, with band targets rescaled so the largest
/// magnitude of each band across the whole set is 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<SamplePair>,
}

impl Dataset {
    pub fn new(mut samples: Vec<SamplePair>) -> Result<Self> {
        samples.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
        if let Some(w) = samples.windows(2).find(|w| w[0].subject_id == w[1].subject_id) {
            return Err(FreaError::Dataset(format!("duplicate subject {}", w[0].subject_id)));
        }
        let (mut low, mut high) = (0.0f64, 0.0f64);
        for s in &samples {
            let (l, h) = s.unscaled_bands();
            low = low.max(max_abs(&l));
            high = high.max(max_abs(&h));
        }
        let low = if low > 0.0 { low } else { 1.0 };
        let high = if high > 0.0 { high } else { 1.0 };
        for s in &mut samples {
            let (l, h) = s.unscaled_bands();
            s.pet_low = l.map(|v| v / low);
            s.pet_high = h.map(|v| v / high);
            s.low_scale = low;
            s.high_scale = high;
        }
        Ok(Dataset { samples })
    }

    pub fn samples(&self) -> &[SamplePair] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn subject_ids(&self) -> Vec<&str> {
        self.samples.iter().map(|s| s.subject_id.as_str()).collect()
    }

    pub fn get(&self, subject_id: &str) -> Option<&SamplePair> {
        self.samples
            .binary_search_by(|s| s.subject_id.as_str().cmp(subject_id))
            .ok()
            .map(|i| &self.samples[i])
    }
}

/// SplitMix64 finalizer over `base`, `stream` and `index`.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut z = base
        ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ index.wrapping_mul(0xd1b5_4a32_d192_ed03);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
