use lgseg_models::SegmentationOutput;
use lgseg_tensor::{Float, Var};

use crate::data::IGNORE_INDEX;
use crate::error::{invalid, Result};

/// Weight of every auxiliary-head term.
pub const AUX_WEIGHT: f64 = 0.4;

/// Pixel-wise cross-entropy of the main logits plus `aux_weight` times the sum
/// of auxiliary cross-entropies. `labels` covers `N·H·W` pixels in row-major
/// order; [`IGNORE_INDEX`] pixels are skipped.
pub fn seg_loss<'g, T: Float>(
    out: &SegmentationOutput<'g, T>,
    labels: &[usize],
    aux_weight: f64,
) -> Result<Var<'g, T>> {
    let main = pixel_ce(&out.logits, labels)?;
    if aux_weight == 0.0 || out.aux.is_empty() {
        return Ok(main);
    }
    let mut total = main;
    for aux in &out.aux {
        total = total.add(&pixel_ce(aux, labels)?.mul_scalar(aux_weight)?)?;
    }
    Ok(total)
}

fn pixel_ce<'g, T: Float>(logits: &Var<'g, T>, labels: &[usize]) -> Result<Var<'g, T>> {
    let shape = logits.shape();
    let k = *shape.last().ok_or_else(|| invalid("logits must have a class axis"))?;
    let pixels: usize = shape[..shape.len() - 1].iter().product();
    if pixels != labels.len() {
        return Err(invalid(format!(
            "logits {shape:?} cover {pixels} pixels, mask has {}",
            labels.len()
        )));
    }
    Ok(logits
        .reshape(&[pixels, k])?
        .cross_entropy(labels, Some(IGNORE_INDEX as usize))?)
}
