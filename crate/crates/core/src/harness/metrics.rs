use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Result};
use crate::forward::VideoVolume;

pub const PEAK: f64 = 255.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsnrReport {
    /// One value per frame; `f64::INFINITY` where the frame is error-free.
    pub per_frame: Vec<f64>,
    /// Arithmetic mean of `per_frame`.
    pub mean: f64,
}

/// `10 log10(255^2 / MSE)` for two equally sized sample slices.
pub fn psnr_frame(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    if reference.len() != estimate.len() || reference.is_empty() {
        return dim_err(format!(
            "frame sizes differ or are empty: {} vs {}",
            reference.len(),
            estimate.len()
        ));
    }
    let mse = reference
        .iter()
        .zip(estimate)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / reference.len() as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (PEAK * PEAK / mse).log10()
    })
}

pub fn psnr(reference: &VideoVolume, estimate: &VideoVolume) -> Result<PsnrReport> {
    if reference.dims() != estimate.dims() {
        return dim_err(format!(
            "volumes differ: {:?} vs {:?}",
            reference.dims(),
            estimate.dims()
        ));
    }
    let per_frame = (0..reference.frames())
        .map(|t| psnr_frame(&reference.frame(t), &estimate.frame(t)))
        .collect::<Result<Vec<_>>>()?;
    let mean = per_frame.iter().sum::<f64>() / per_frame.len() as f64;
    Ok(PsnrReport { per_frame, mean })
}
