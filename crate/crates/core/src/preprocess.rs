//! Grayscale cleanup and interline normalization of a sheet-music photo.

use serde::{Deserialize, Serialize};

use crate::cv::{self, GrayImage};
use crate::error::{invalid, Error, Result};
use crate::par;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessParams {
    pub background_subtract: bool,
    /// Blur radius for the background estimate; 0 means 4x the largest candidate spacing.
    pub background_radius: usize,
    pub spacing_min: f64,
    pub spacing_max: f64,
    pub spacing_step: f64,
    pub num_columns: usize,
    pub target_spacing: f64,
    /// Below this best/median comb score the estimate is flagged.
    pub min_confidence: f64,
    pub adaptive_resize: bool,
    /// Output width used when adaptive resizing is off.
    pub fixed_width: usize,
    pub min_output_dim: usize,
}

impl Default for PreprocessParams {
    fn default() -> Self {
        PreprocessParams {
            background_subtract: true,
            background_radius: 0,
            spacing_min: 5.0,
            spacing_max: 50.0,
            spacing_step: 1.0,
            num_columns: 10,
            target_spacing: 10.0,
            min_confidence: 1.5,
            adaptive_resize: true,
            fixed_width: 1000,
            min_output_dim: 50,
        }
    }
}

impl PreprocessParams {
    pub fn spacings(&self) -> Vec<f64> {
        spacing_grid(self.spacing_min, self.spacing_max, self.spacing_step)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.spacing_min > 0.0 && self.spacing_min <= self.spacing_max && self.spacing_step > 0.0) {
            return Err(Error::Config("spacing range must be positive and nonempty".into()));
        }
        if self.num_columns == 0 || self.target_spacing <= 0.0 || self.fixed_width == 0 {
            return Err(Error::Config("preprocess sizes must be positive".into()));
        }
        Ok(())
    }
}

pub(crate) fn spacing_grid(min: f64, max: f64, step: f64) -> Vec<f64> {
    let n = ((max - min) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| min + i as f64 * step).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessedImage {
    pub gray: GrayImage,
    pub scale_factor: f64,
    /// Interline of the input; with adaptive resizing off this is the value
    /// implied by the fixed scale rather than a measurement.
    pub estimated_raw_spacing: f64,
    pub confidence: f64,
    pub low_confidence: bool,
}

/// Subtracts a heavily blurred copy so slow illumination changes vanish:
/// `clamp(gray - blur(gray) + 1)`.
pub fn remove_background(gray: &GrayImage, radius: usize) -> GrayImage {
    let background = cv::blur(gray, radius);
    let mut out = gray.clone();
    par::for_each_row(out.data_mut(), gray.width(), |r, row| {
        for (v, &b) in row.iter_mut().zip(background.row(r)) {
            *v = (*v - b + 1.0).clamp(0.0, 1.0);
        }
    });
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpacingEstimate {
    pub spacing: f64,
    pub confidence: f64,
    /// Cumulative response per candidate spacing.
    pub scores: Vec<f64>,
}

/// Comb-filter search for the staff-line spacing of the raw image.
pub fn estimate_staff_spacing(gray: &GrayImage, num_columns: usize, spacings: &[f64]) -> Result<SpacingEstimate> {
    let max_spacing = spacings.iter().copied().fold(0.0, f64::max);
    if spacings.is_empty() {
        return Err(invalid("no candidate spacings"));
    }
    if (gray.height() as f64) < 4.0 * max_spacing {
        return Err(invalid(format!(
            "image height {} is below 4x the largest spacing {max_spacing}",
            gray.height()
        )));
    }
    let medians = cv::column_row_medians(gray, num_columns);
    let scores: Vec<f64> = par::map(spacings, |&s| {
        let mut response = vec![0f32; gray.height()];
        medians
            .iter()
            .map(|col| {
                cv::comb_response(col, s, &mut response);
                f64::from(response.iter().copied().fold(0.0, f32::max))
            })
            .sum()
    });
    let (best, best_score) = scores
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &s)| if s > acc.1 { (i, s) } else { acc });
    let mut sorted = scores.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let confidence = if median > 1e-9 { best_score / median } else { 0.0 };
    Ok(SpacingEstimate {
        spacing: spacings[best],
        confidence,
        scores,
    })
}

/// Rescales so the staff spacing becomes `target`.
pub fn normalize_interline(gray: &GrayImage, estimated_spacing: f64, target: f64, min_dim: usize) -> Result<(GrayImage, f64)> {
    if estimated_spacing <= 0.0 {
        return Err(invalid("estimated spacing must be positive"));
    }
    rescale(gray, target / estimated_spacing, min_dim)
}

fn rescale(gray: &GrayImage, scale: f64, min_dim: usize) -> Result<(GrayImage, f64)> {
    let w = (gray.width() as f64 * scale).round() as usize;
    let h = (gray.height() as f64 * scale).round() as usize;
    if w < min_dim || h < min_dim {
        return Err(Error::DegenerateImage(format!("resized image would be {w}x{h}")));
    }
    Ok((cv::resize_bilinear(gray, w, h)?, scale))
}

/// Background removal, spacing estimation and resizing.
pub fn preprocess(gray: &GrayImage, params: &PreprocessParams) -> Result<PreprocessedImage> {
    let spacings = params.spacings();
    let cleaned = if params.background_subtract {
        let radius = match params.background_radius {
            0 => (4.0 * params.spacing_max).round() as usize,
            r => r,
        };
        remove_background(gray, radius)
    } else {
        gray.clone()
    };
    if !params.adaptive_resize {
        let (out, scale) = rescale(&cleaned, params.fixed_width as f64 / cleaned.width() as f64, params.min_output_dim)?;
        return Ok(PreprocessedImage {
            gray: out,
            scale_factor: scale,
            estimated_raw_spacing: params.target_spacing / scale,
            confidence: 0.0,
            low_confidence: false,
        });
    }
    let estimate = estimate_staff_spacing(&cleaned, params.num_columns, &spacings)?;
    let low_confidence = estimate.confidence < params.min_confidence;
    if low_confidence {
        log::debug!("staff spacing {} has low confidence {:.2}", estimate.spacing, estimate.confidence);
    }
    let (out, scale) = normalize_interline(&cleaned, estimate.spacing, params.target_spacing, params.min_output_dim)?;
    Ok(PreprocessedImage {
        gray: out,
        scale_factor: scale,
        estimated_raw_spacing: estimate.spacing,
        confidence: estimate.confidence,
        low_confidence,
    })
}
