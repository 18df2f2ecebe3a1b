use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::metrics::SampleMetrics;
use crate::error::{FreaError, Result};

pub const CSV_HEADER: &str = "sample_id,fold,mae,psnr,ssim";

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub sample_id: String,
    pub fold: usize,
    pub metrics: SampleMetrics,
}

/// Per-sample metrics with their aggregates.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<MetricRow>,
    pub mean: SampleMetrics,
    /// Population standard deviation over samples.
    pub std: SampleMetrics,
    /// Population standard deviation of the per-fold means.
    pub fold_std: SampleMetrics,
    pub mask_threshold: f64,
}

fn stat(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if !mean.is_finite() {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn per_metric(rows: &[&SampleMetrics], f: impl Fn(&[f64]) -> (f64, f64)) -> (SampleMetrics, SampleMetrics) {
    let col = |g: fn(&SampleMetrics) -> f64| f(&rows.iter().map(|m| g(m)).collect::<Vec<_>>());
    let (mae, psnr, ssim) = (col(|m| m.mae), col(|m| m.psnr), col(|m| m.ssim));
    (
        SampleMetrics {
            mae: mae.0,
            psnr: psnr.0,
            ssim: ssim.0,
        },
        SampleMetrics {
            mae: mae.1,
            psnr: psnr.1,
            ssim: ssim.1,
        },
    )
}

impl MetricsReport {
    /// Aggregates rows, sorting them by fold and sample id.
    pub fn from_rows(mut rows: Vec<MetricRow>, mask_threshold: f64) -> Result<Self> {
        if rows.is_empty() {
            return Err(FreaError::Dataset("no samples to report".into()));
        }
        rows.sort_by(|a, b| (a.fold, &a.sample_id).cmp(&(b.fold, &b.sample_id)));
        let all: Vec<&SampleMetrics> = rows.iter().map(|r| &r.metrics).collect();
        let (mean, std) = per_metric(&all, stat);
        let mut folds: BTreeMap<usize, Vec<&SampleMetrics>> = BTreeMap::new();
        for r in &rows {
            folds.entry(r.fold).or_default().push(&r.metrics);
        }
        let fold_means: Vec<SampleMetrics> = folds.values().map(|v| per_metric(v, stat).0).collect();
        let (_, fold_std) = per_metric(&fold_means.iter().collect::<Vec<_>>(), stat);
        Ok(MetricsReport {
            rows,
            mean,
            std,
            fold_std,
            mask_threshold,
        })
    }

    pub fn merge(reports: &[MetricsReport]) -> Result<Self> {
        let rows = reports.iter().flat_map(|r| r.rows.iter().cloned()).collect();
        let threshold = reports.first().map_or(0.0, |r| r.mask_threshold);
        Self::from_rows(rows, threshold)
    }

    /// Header, one line per sample, then `mean` and `std` rows with an empty
    /// fold column.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{CSV_HEADER}\n");
        let line = |out: &mut String, id: &str, fold: &str, m: &SampleMetrics| {
            let _ = writeln!(
                out,
                "{id},{fold},{},{},{}",
                format_g6(m.mae),
                format_g6(m.psnr),
                format_g6(m.ssim)
            );
        };
        for r in &self.rows {
            line(&mut out, &r.sample_id, &r.fold.to_string(), &r.metrics);
        }
        line(&mut out, "mean", "", &self.mean);
        line(&mut out, "std", "", &self.std);
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| FreaError::io(path, e))
    }
}

/// `printf("%g")` with six significant digits; infinities print as `inf`.
pub fn format_g6(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{v:.5e}");
    let (mant, exp) = sci.split_once('e').unwrap();
    let exp: i32 = exp.parse().unwrap();
    if !(-4..6).contains(&exp) {
        let mant = trim_zeros(mant);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mant}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (5 - exp).max(0) as usize;
        trim_zeros(&format!("{v:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g6_matches_printf() {
        let cases = [
            (46.26, "46.26"),
            (0.87, "0.87"),
            (123456.0, "123456"),
            (1234567.0, "1.23457e+06"),
            (0.0001, "0.0001"),
            (0.00001234, "1.234e-05"),
            (28.4499999, "28.45"),
            (999999.5, "1e+06"),
            (-2.5, "-2.5"),
            (1.0, "1"),
            (0.0, "0"),
            (f64::INFINITY, "inf"),
        ];
        for (v, s) in cases {
            assert_eq!(format_g6(v), s, "{v}");
        }
    }
}
