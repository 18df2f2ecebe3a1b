//! Spatial attention from compatibility scores.
//!
//! A branch's features `f` (`C×h×w`) are scored against a global descriptor
//! `g` brought to the same shape: the score of position `i` is the channel
//! dot product `<f_i, g_i>`, softmax-normalized over all `h·w` positions.
//! Gating multiplies the features by `h·w` times the scores, so a uniform
//! map leaves them untouched.

use crate::error::{FreaError, Result};
use crate::tensor::{Tape, Var};

/// Pools the full-resolution penultimate activation down to `size × size`
/// and projects it to the branch width with a 1×1 convolution.
pub fn global_descriptor(
    tape: &mut Tape,
    penultimate: Var,
    proj_w: Var,
    proj_b: Var,
    size: usize,
) -> Result<Var> {
    let (_, _, h, _) = tape.value(penultimate).nchw()?;
    if size == 0 || h % size != 0 {
        return Err(FreaError::shape(
            "global_descriptor",
            format!("cannot pool {h} down to {size}"),
        ));
    }
    let pooled = tape.avg_pool(penultimate, h / size)?;
    tape.conv2d(pooled, proj_w, Some(proj_b), 1, 0)
}

/// Softmax-normalized compatibility scores, `N×1×h×w`.
pub fn attention_scores(tape: &mut Tape, f: Var, g: Var) -> Result<Var> {
    let logits = tape.channel_dot(f, g)?;
    tape.spatial_softmax(logits)
}

/// Reweights `f` by its scores, broadcast over channels.
pub fn attention_apply(tape: &mut Tape, f: Var, scores: Var) -> Result<Var> {
    tape.gate(f, scores)
}
