//! Gaussian low/high band decomposition, intensity normalization and image I/O.

mod io;

pub use io::{read_image, write_image, write_pgm, write_raw, ImageFile, RAW_MAGIC};

use crate::error::{FreaError, Result};
use crate::tensor::Tensor;

pub const DEFAULT_SIGMA: f64 = 3.0;
pub const DEFAULT_KERNEL_SIZE: usize = 13;

/// Normalized 2D Gaussian weights on an odd `size × size` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianKernel {
    pub sigma: f64,
    pub size: usize,
    pub weights: Vec<f64>,
}

impl GaussianKernel {
    pub fn radius(&self) -> usize {
        self.size / 2
    }

    pub fn weight(&self, dy: usize, dx: usize) -> f64 {
        self.weights[dy * self.size + dx]
    }
}

pub fn gaussian_kernel(sigma: f64, size: usize) -> Result<GaussianKernel> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(FreaError::InvalidArgument(format!(
            "gaussian sigma must be positive, got {sigma}"
        )));
    }
    if size == 0 || size % 2 == 0 {
        return Err(FreaError::InvalidArgument(format!(
            "gaussian kernel size must be odd and positive, got {size}"
        )));
    }
    let r = (size / 2) as f64;
    let mut weights = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let (dy, dx) = (y as f64 - r, x as f64 - r);
            weights.push((-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp());
        }
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Ok(GaussianKernel {
        sigma,
        size,
        weights,
    })
}

/// Mirror index without edge repetition: `-1 -> 1`, `n -> n - 2`.
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - m }) as usize
}

/// 2D correlation of every plane of an NCHW tensor with `kernel`, using
/// reflect padding so the output keeps the input size.
pub fn gaussian_blur(img: &Tensor, kernel: &GaussianKernel) -> Result<Tensor> {
    let (n, c, h, w) = img.nchw()?;
    if kernel.size > 2 * h || kernel.size > 2 * w {
        return Err(FreaError::shape(
            "gaussian_blur",
            format!("kernel {} exceeds twice the image extent {h}x{w}", kernel.size),
        ));
    }
    let r = kernel.radius() as isize;
    let row_idx: Vec<Vec<usize>> = (0..h as isize)
        .map(|y| (-r..=r).map(|d| reflect(y + d, h)).collect())
        .collect();
    let col_idx: Vec<Vec<usize>> = (0..w as isize)
        .map(|x| (-r..=r).map(|d| reflect(x + d, w)).collect())
        .collect();
    let mut out = vec![0.0; img.len()];
    for p in 0..n * c {
        let src = &img.data()[p * h * w..][..h * w];
        let dst = &mut out[p * h * w..][..h * w];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (ky, &sy) in row_idx[y].iter().enumerate() {
                    let row = &src[sy * w..][..w];
                    let krow = &kernel.weights[ky * kernel.size..][..kernel.size];
                    for (kw, &sx) in krow.iter().zip(&col_idx[x]) {
                        acc += kw * row[sx];
                    }
                }
                dst[y * w + x] = acc;
            }
        }
    }
    Tensor::new(img.shape().to_vec(), out)
}

/// Low band (Gaussian blur) and high band (exact residual) of an image.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyPair {
    pub low: Tensor,
    pub high: Tensor,
    pub sigma: f64,
}

pub fn freq_split(img: &Tensor, sigma: f64, size: usize) -> Result<FrequencyPair> {
    let kernel = gaussian_kernel(sigma, size)?;
    let low = gaussian_blur(img, &kernel)?;
    let high = img.sub(&low)?;
    Ok(FrequencyPair { low, high, sigma })
}

pub fn freq_merge(pair: &FrequencyPair) -> Result<Tensor> {
    pair.low.add(&pair.high)
}

/// Maps intensities `[0, Q]` linearly onto `[-1, 1]`, as a `1×C×H×W` tensor.
pub fn normalize(img: &ImageFile) -> Result<Tensor> {
    if !(img.q > 0.0) {
        return Err(FreaError::InvalidArgument(format!(
            "intensity range Q must be positive, got {}",
            img.q
        )));
    }
    let (h, w, c) = (img.height, img.width, img.channels);
    let mut data = vec![0.0; h * w * c];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let v = img.pixels[(y * w + x) * c + ch];
                data[(ch * h + y) * w + x] = 2.0 * v / img.q - 1.0;
            }
        }
    }
    Tensor::new(vec![1, c, h, w], data)
}

/// Inverse of [`normalize`], clamping to `[0, Q]`.
pub fn denormalize(t: &Tensor, q: f64) -> Result<ImageFile> {
    if !(q > 0.0) {
        return Err(FreaError::InvalidArgument(format!(
            "intensity range Q must be positive, got {q}"
        )));
    }
    let (n, c, h, w) = t.nchw()?;
    if n != 1 {
        return Err(FreaError::shape("denormalize", format!("expected batch 1, got {n}")));
    }
    let mut pixels = vec![0.0; h * w * c];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let v = (t.data()[(ch * h + y) * w + x] + 1.0) * 0.5 * q;
                pixels[(y * w + x) * c + ch] = v.clamp(0.0, q);
            }
        }
    }
    ImageFile::new(h, w, c, q, pixels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_indexing() {
        let idx: Vec<usize> = (-3..8).map(|i| reflect(i, 5)).collect();
        assert_eq!(idx, vec![3, 2, 1, 0, 1, 2, 3, 4, 3, 2, 1]);
        assert_eq!(reflect(-2, 1), 0);
    }

    #[test]
    fn kernel_argument_errors() {
        assert!(gaussian_kernel(1.0, 4).is_err());
        assert!(gaussian_kernel(1.0, 0).is_err());
        assert!(gaussian_kernel(0.0, 3).is_err());
        assert!(gaussian_kernel(-1.0, 3).is_err());
    }

    #[test]
    fn size_one_kernel_is_unit() {
        let k = gaussian_kernel(2.0, 1).unwrap();
        assert_eq!(k.weights, vec![1.0]);
    }

    #[test]
    fn blur_rejects_oversized_kernel() {
        let img = Tensor::zeros(&[1, 1, 3, 3]);
        let k = gaussian_kernel(1.0, 7).unwrap();
        assert!(gaussian_blur(&img, &k).is_err());
    }

    #[test]
    fn normalize_endpoints_and_clamp() {
        let img = ImageFile::new(1, 3, 1, 200.0, vec![0.0, 200.0, 100.0]).unwrap();
        let t = normalize(&img).unwrap();
        assert_eq!(t.data(), &[-1.0, 1.0, 0.0]);
        let back = denormalize(&t, 200.0).unwrap();
        assert_eq!(back.pixels, img.pixels);

        let over = Tensor::new(vec![1, 1, 1, 2], vec![1.3, -1.4]).unwrap();
        let img = denormalize(&over, 50.0).unwrap();
        assert_eq!(img.pixels, vec![50.0, 0.0]);
        assert!(denormalize(&over, 0.0).is_err());
    }
}
