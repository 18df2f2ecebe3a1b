use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{derive_seed, Dataset, PrepOptions, SamplePair};
use crate::error::{FreaError, Result};
use crate::image_ops::{gaussian_blur, gaussian_kernel, ImageFile};
use crate::tensor::Tensor;

/// Intensity range of generated images.
pub const SYNTH_Q: f64 = 255.0;

const MR_SMOOTH_SIGMA: f64 = 1.0;
const PET_BLUR_SIGMA: f64 = 1.5;
const PET_GAMMA: f64 = 1.5;

/// Generates `n` subjects named `subj000`, `subj001`, ... Subject `i`
/// depends only on `(seed, i, size)`, so smaller sets are prefixes of larger ones.
pub fn synth_generate(n: usize, opts: &PrepOptions, seed: u64) -> Result<Dataset> {
    if n < 3 {
        return Err(FreaError::InvalidArgument(format!("need at least 3 subjects, got {n}")));
    }
    let size = opts.size;
    if size == 0 || size % 64 != 0 {
        return Err(FreaError::InvalidArgument(format!(
            "size must be a positive multiple of 64, got {size}"
        )));
    }
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let mr = synth_mr(size, derive_seed(seed, 1, i as u64))?;
        let pet = oracle_transform(&mr)?;
        samples.push(SamplePair::new(format!("subj{i:03}"), mr, pet, opts)?);
    }
    Dataset::new(samples)
}

/// Procedural head-like slice: a smoothed stack of random ellipses with
/// fine texture inside the outer one.
pub fn synth_mr(size: usize, seed: u64) -> Result<ImageFile> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = size as f64;
    let mut img = vec![0.0; size * size];
    let head = Ellipse {
        cy: s * (0.5 + rng.random_range(-0.04..0.04)),
        cx: s * (0.5 + rng.random_range(-0.04..0.04)),
        ry: s * rng.random_range(0.36..0.44),
        rx: s * rng.random_range(0.30..0.38),
        angle: rng.random_range(-0.2..0.2),
    };
    head.paint(&mut img, size, 0.35 * SYNTH_Q);
    let inner = rng.random_range(4..8);
    for _ in 0..inner {
        let e = Ellipse {
            cy: head.cy + head.ry * rng.random_range(-0.5..0.5),
            cx: head.cx + head.rx * rng.random_range(-0.5..0.5),
            ry: head.ry * rng.random_range(0.1..0.4),
            rx: head.rx * rng.random_range(0.1..0.4),
            angle: rng.random_range(0.0..std::f64::consts::PI),
        };
        let v = SYNTH_Q * rng.random_range(-0.2..0.4);
        e.paint(&mut img, size, v);
    }
    let t = Tensor::new(vec![1, 1, size, size], img)?;
    let smooth = gaussian_blur(&t, &gaussian_kernel(MR_SMOOTH_SIGMA, 7)?)?;
    let mut pixels = smooth.into_data();
    for y in 0..size {
        for x in 0..size {
            if head.contains(y as f64 + 0.5, x as f64 + 0.5) {
                pixels[y * size + x] += SYNTH_Q * rng.random_range(-0.03..0.03);
            }
        }
    }
    for p in &mut pixels {
        *p = p.clamp(0.0, SYNTH_Q);
    }
    ImageFile::new(size, size, 1, SYNTH_Q, pixels)
}

struct Ellipse {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    angle: f64,
}

impl Ellipse {
    fn contains(&self, y: f64, x: f64) -> bool {
        let (sin, cos) = self.angle.sin_cos();
        let (dy, dx) = (y - self.cy, x - self.cx);
        let u = dx * cos + dy * sin;
        let v = -dx * sin + dy * cos;
        (u / self.rx).powi(2) + (v / self.ry).powi(2) <= 1.0
    }

    fn paint(&self, img: &mut [f64], size: usize, value: f64) {
        for y in 0..size {
            for x in 0..size {
                if self.contains(y as f64 + 0.5, x as f64 + 0.5) {
                    img[y * size + x] += value;
                }
            }
        }
    }
}

/// The fixed MR-to-PET mapping behind the synthetic pairs: a gamma remap,
/// a Gaussian blur and a smooth multiplicative bias field.
pub fn oracle_transform(mr: &ImageFile) -> Result<ImageFile> {
    if mr.channels != 1 {
        return Err(FreaError::InvalidArgument("oracle transform needs one channel".into()));
    }
    let (h, w, q) = (mr.height, mr.width, mr.q);
    let remapped: Vec<f64> = mr
        .pixels
        .iter()
        .map(|&v| q * (v / q).clamp(0.0, 1.0).powf(PET_GAMMA))
        .collect();
    let t = Tensor::new(vec![1, 1, h, w], remapped)?;
    let blurred = gaussian_blur(&t, &gaussian_kernel(PET_BLUR_SIGMA, 9)?)?;
    let mut pixels = blurred.into_data();
    let pi = std::f64::consts::PI;
    for y in 0..h {
        for x in 0..w {
            let fy = (y as f64 + 0.5) / h as f64 - 0.5;
            let fx = (x as f64 + 0.5) / w as f64 - 0.5;
            let bias = 0.8 + 0.2 * (pi * fy).cos() * (pi * (fx + 0.15)).cos();
            let v = &mut pixels[y * w + x];
            *v = (*v * bias).clamp(0.0, q);
        }
    }
    ImageFile::new(h, w, 1, q, pixels)
}
