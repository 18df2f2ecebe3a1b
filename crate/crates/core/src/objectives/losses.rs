use crate::error::{FreaError, Result};
use crate::frea_unet::{ForwardGraph, ModelConfig};
use crate::tensor::{Tape, Tensor, Var};

/// Loss weights for the low band, high band and reconstruction terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub low: f64,
    pub high: f64,
    pub rec: f64,
}

impl LossWeights {
    pub fn from_config(c: &ModelConfig) -> Self {
        LossWeights {
            low: c.lambda_low,
            high: c.lambda_high,
            rec: c.lambda_rec,
        }
    }

    fn check(&self) -> Result<()> {
        for (name, v) in [("low", self.low), ("high", self.high), ("rec", self.rec)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(FreaError::InvalidArgument(format!(
                    "loss weight {name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub l_low: f64,
    pub l_high: f64,
    pub l_rec: f64,
    pub total: f64,
    pub weights: LossWeights,
}

impl LossBreakdown {
    /// Mean of several breakdowns, with the total recomputed from the means.
    pub fn average(items: &[LossBreakdown]) -> Option<LossBreakdown> {
        let first = items.first()?;
        let n = items.len() as f64;
        let mean = |f: fn(&LossBreakdown) -> f64| items.iter().map(f).sum::<f64>() / n;
        Some(
            loss_total(
                mean(|b| b.l_low),
                mean(|b| b.l_high),
                mean(|b| b.l_rec),
                first.weights,
                true,
            )
            .expect("weights already validated"),
        )
    }
}

/// Mean squared error.
pub fn loss_low(pred: &Tensor, target: &Tensor) -> Result<f64> {
    pred.expect_same_shape(target, "loss_low")?;
    let s: f64 = pred.data().iter().zip(target.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(s / pred.len() as f64)
}

/// Mean absolute error.
pub fn loss_high(pred: &Tensor, target: &Tensor) -> Result<f64> {
    pred.expect_same_shape(target, "loss_high")?;
    let s: f64 = pred.data().iter().zip(target.data()).map(|(a, b)| (a - b).abs()).sum();
    Ok(s / pred.len() as f64)
}

/// Weighted combination of the three terms. Without frequency branches only
/// the reconstruction term counts, and the band components are reported as 0.
pub fn loss_total(
    l_low: f64,
    l_high: f64,
    l_rec: f64,
    weights: LossWeights,
    use_freq_branches: bool,
) -> Result<LossBreakdown> {
    weights.check()?;
    let (l_low, l_high) = if use_freq_branches { (l_low, l_high) } else { (0.0, 0.0) };
    Ok(LossBreakdown {
        l_low,
        l_high,
        l_rec,
        total: weights.low * l_low + weights.high * l_high + weights.rec * l_rec,
        weights,
    })
}

/// Training targets of one sample, all `1×1×S×S` in network space.
#[derive(Debug, Clone, Copy)]
pub struct Targets<'a> {
    pub pet: &'a Tensor,
    pub pet_low: &'a Tensor,
    pub pet_high: &'a Tensor,
}

/// Records the objective on `tape` and returns its scalar node with the
/// component values.
pub fn record_loss(
    tape: &mut Tape,
    graph: &ForwardGraph,
    targets: Targets<'_>,
    weights: LossWeights,
) -> Result<(Var, LossBreakdown)> {
    weights.check()?;
    let rec = tape.mae_loss(graph.final_out, targets.pet)?;
    let mut terms = vec![(rec, weights.rec)];
    let (mut l_low, mut l_high) = (0.0, 0.0);
    let branches = match (graph.low_pred, graph.high_pred) {
        (Some(lo), Some(hi)) => {
            let lo = tape.mse_loss(lo, targets.pet_low)?;
            let hi = tape.mae_loss(hi, targets.pet_high)?;
            l_low = tape.value(lo).item();
            l_high = tape.value(hi).item();
            terms.push((lo, weights.low));
            terms.push((hi, weights.high));
            true
        }
        _ => false,
    };
    let l_rec = tape.value(rec).item();
    let total = tape.weighted_sum(&terms)?;
    Ok((total, loss_total(l_low, l_high, l_rec, weights, branches)?))
}
