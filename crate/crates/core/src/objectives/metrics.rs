use crate::error::{FreaError, Result};
use crate::image_ops::{gaussian_kernel, ImageFile};

pub const DEFAULT_MASK_THRESHOLD: f64 = 0.01;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.02;

/// Pixels of `real` strictly above `threshold_frac` times its maximum.
#[derive(Debug, Clone, PartialEq)]
pub struct BodyMask {
    pub threshold_frac: f64,
    pub mask: Vec<bool>,
    pub count: usize,
}

pub fn body_mask(real: &ImageFile, threshold_frac: f64) -> Result<BodyMask> {
    if !(0.0..1.0).contains(&threshold_frac) {
        return Err(FreaError::InvalidArgument(format!(
            "mask threshold must lie in [0, 1), got {threshold_frac}"
        )));
    }
    let max = real.max_value();
    if !(max > 0.0) {
        return Err(FreaError::EmptyMask);
    }
    let cut = threshold_frac * max;
    let mask: Vec<bool> = real.pixels.iter().map(|&v| v > cut).collect();
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(FreaError::EmptyMask);
    }
    Ok(BodyMask {
        threshold_frac,
        mask,
        count,
    })
}

fn same_dims(a: &ImageFile, b: &ImageFile, op: &'static str) -> Result<()> {
    if (a.height, a.width, a.channels) != (b.height, b.width, b.channels) {
        return Err(FreaError::shape(
            op,
            format!(
                "{}x{}x{} vs {}x{}x{}",
                a.height, a.width, a.channels, b.height, b.width, b.channels
            ),
        ));
    }
    if a.pixels.is_empty() {
        return Err(FreaError::InvalidArgument(format!("{op}: empty image")));
    }
    Ok(())
}

/// Mean absolute error over the masked pixels.
pub fn metric_mae(real: &ImageFile, syn: &ImageFile, mask: &BodyMask) -> Result<f64> {
    same_dims(real, syn, "metric_mae")?;
    if mask.mask.len() != real.pixels.len() {
        return Err(FreaError::shape("metric_mae", "mask size differs from image"));
    }
    if mask.count == 0 {
        return Err(FreaError::EmptyMask);
    }
    let s: f64 = real
        .pixels
        .iter()
        .zip(&syn.pixels)
        .zip(&mask.mask)
        .filter(|(_, &m)| m)
        .map(|((a, b), _)| (a - b).abs())
        .sum();
    Ok(s / mask.count as f64)
}

fn joint_max(a: &ImageFile, b: &ImageFile) -> f64 {
    a.max_value().max(b.max_value())
}

/// Peak signal-to-noise ratio in dB, peak being the larger maximum of the
/// two images. Identical images give `+inf`.
pub fn metric_psnr(real: &ImageFile, syn: &ImageFile) -> Result<f64> {
    same_dims(real, syn, "metric_psnr")?;
    let n = real.pixels.len() as f64;
    let mse: f64 = real
        .pixels
        .iter()
        .zip(&syn.pixels)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    let q = joint_max(real, syn);
    Ok(10.0 * (q * q / mse).log10())
}

fn ssim_terms(mx: f64, my: f64, vx: f64, vy: f64, cov: f64, c1: f64, c2: f64) -> f64 {
    let num = (2.0 * mx * my + c1) * (2.0 * cov + c2);
    let den = (mx * mx + my * my + c1) * (vx + vy + c2);
    if den == 0.0 {
        1.0
    } else {
        num / den
    }
}

/// SSIM from whole-image means, variances and covariance.
pub fn metric_ssim(real: &ImageFile, syn: &ImageFile) -> Result<f64> {
    same_dims(real, syn, "metric_ssim")?;
    let q = joint_max(real, syn);
    let (c1, c2) = ((SSIM_K1 * q).powi(2), (SSIM_K2 * q).powi(2));
    let n = real.pixels.len() as f64;
    let mx = real.pixels.iter().sum::<f64>() / n;
    let my = syn.pixels.iter().sum::<f64>() / n;
    let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
    for (a, b) in real.pixels.iter().zip(&syn.pixels) {
        let (dx, dy) = (a - mx, b - my);
        vx += dx * dx;
        vy += dy * dy;
        cov += dx * dy;
    }
    Ok(ssim_terms(mx, my, vx / n, vy / n, cov / n, c1, c2))
}

/// Mean SSIM over 11×11 Gaussian windows (sigma 1.5), valid positions only.
pub fn metric_ssim_windowed(real: &ImageFile, syn: &ImageFile) -> Result<f64> {
    same_dims(real, syn, "metric_ssim_windowed")?;
    if real.channels != 1 {
        return Err(FreaError::InvalidArgument("windowed SSIM needs one channel".into()));
    }
    let k = gaussian_kernel(1.5, 11)?;
    let (h, w) = (real.height, real.width);
    if h < k.size || w < k.size {
        return Err(FreaError::shape("metric_ssim_windowed", "image smaller than 11x11"));
    }
    let q = joint_max(real, syn);
    let (c1, c2) = ((SSIM_K1 * q).powi(2), (SSIM_K2 * q).powi(2));
    let mut total = 0.0;
    let mut count = 0usize;
    for y in 0..=h - k.size {
        for x in 0..=w - k.size {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for dy in 0..k.size {
                for dx in 0..k.size {
                    let wt = k.weight(dy, dx);
                    let i = (y + dy) * w + x + dx;
                    let (a, b) = (real.pixels[i], syn.pixels[i]);
                    mx += wt * a;
                    my += wt * b;
                    sxx += wt * a * a;
                    syy += wt * b * b;
                    sxy += wt * a * b;
                }
            }
            total += ssim_terms(mx, my, sxx - mx * mx, syy - my * my, sxy - mx * my, c1, c2);
            count += 1;
        }
    }
    Ok(total / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleMetrics {
    pub mae: f64,
    pub psnr: f64,
    pub ssim: f64,
}

pub fn evaluate_pair(real: &ImageFile, syn: &ImageFile, threshold_frac: f64) -> Result<SampleMetrics> {
    let mask = body_mask(real, threshold_frac)?;
    Ok(SampleMetrics {
        mae: metric_mae(real, syn, &mask)?,
        psnr: metric_psnr(real, syn)?,
        ssim: metric_ssim(real, syn)?,
    })
}
