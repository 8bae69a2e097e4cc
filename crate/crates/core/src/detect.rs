//! Notehead, staff-line and bar-line evidence on an interline-normalized image.

use serde::{Deserialize, Serialize};

use crate::cv::{self, BBox, BinaryImage, BlobShape, ConnectedComponent, Element, GrayImage};
use crate::error::{Error, Result};
use crate::par;
use crate::preprocess::spacing_grid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoteheadParams {
    pub disk_diameter: usize,
    pub adaptive_template: bool,
    pub blob_min_area: usize,
    pub blob_max_area: usize,
    pub min_blobs: usize,
    /// Expected notehead size in pixels at the normalized interline.
    pub expected_size: f64,
    pub crop_factor: f64,
    pub fallback_height: f64,
    pub fallback_width: f64,
    pub fallback_area: f64,
    pub tolerance_low: f64,
    pub tolerance_high: f64,
    pub chord_blocks: bool,
    pub chord_min_notes: usize,
    pub chord_max_notes: usize,
    pub chord_area_tolerance_low: f64,
    pub chord_area_tolerance_high: f64,
    pub chord_max_width: f64,
    pub chord_max_height: f64,
}

impl Default for NoteheadParams {
    fn default() -> Self {
        NoteheadParams {
            disk_diameter: 5,
            adaptive_template: true,
            blob_min_area: 20,
            blob_max_area: 200,
            min_blobs: 5,
            expected_size: 10.0,
            crop_factor: 1.5,
            fallback_height: 10.0,
            fallback_width: 13.0,
            fallback_area: 110.0,
            tolerance_low: 0.5,
            tolerance_high: 1.6,
            chord_blocks: true,
            chord_min_notes: 2,
            chord_max_notes: 5,
            chord_area_tolerance_low: 0.8,
            chord_area_tolerance_high: 1.2,
            chord_max_width: 2.0,
            chord_max_height: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StaffFeatureParams {
    pub num_columns: usize,
    pub spacing_min: f64,
    pub spacing_max: f64,
    pub spacing_step: f64,
    pub horizontal_length: usize,
    pub beam_thickness: usize,
}

impl Default for StaffFeatureParams {
    fn default() -> Self {
        StaffFeatureParams {
            num_columns: 10,
            spacing_min: 8.0,
            spacing_max: 12.0,
            spacing_step: 0.5,
            horizontal_length: 41,
            beam_thickness: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BarlineParams {
    pub straighten_length: usize,
    pub vertical_length: usize,
    pub thick_length: usize,
    pub threshold: f32,
}

impl Default for BarlineParams {
    fn default() -> Self {
        BarlineParams {
            straighten_length: 5,
            vertical_length: 45,
            thick_length: 9,
            threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoteheadTemplate {
    pub height: f64,
    pub width: f64,
    pub area: f64,
}

impl NoteheadTemplate {
    /// Whether a component fits the template within the given ratio tolerance.
    pub fn matches(&self, c: &ConnectedComponent, low: f64, high: f64) -> bool {
        let within = |value: f64, reference: f64| value >= low * reference && value <= high * reference;
        let (h, w) = (c.bbox.height() as f64, c.bbox.width() as f64);
        within(h, self.height) && within(w, self.width) && within(h / w, self.height / self.width) && within(c.area as f64, self.area)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoteheadSource {
    Isolated,
    ChordSplit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoteheadBox {
    pub bbox: BBox,
    pub center: (f64, f64),
    pub source: NoteheadSource,
}

#[derive(Debug, Clone)]
pub struct NoteheadDetection {
    pub boxes: Vec<NoteheadBox>,
    pub template: NoteheadTemplate,
    pub adaptive: bool,
    /// Image after the circular opening.
    pub opened: GrayImage,
    pub binary: BinaryImage,
}

fn fallback_template(p: &NoteheadParams) -> NoteheadTemplate {
    NoteheadTemplate {
        height: p.fallback_height,
        width: p.fallback_width,
        area: p.fallback_area,
    }
}

/// Averages crops around blob keypoints and measures the dark core, cut at
/// the same threshold that binarizes the page.
fn estimate_template(opened: &GrayImage, threshold: f32, p: &NoteheadParams) -> Option<NoteheadTemplate> {
    let keypoints = cv::detect_blobs(opened, p.blob_min_area, p.blob_max_area, BlobShape::default());
    if keypoints.len() < p.min_blobs {
        return None;
    }
    let half = (p.crop_factor * p.expected_size).round() as usize;
    let side = 2 * half + 1;
    let mut sum = vec![0f64; side * side];
    let mut used = 0usize;
    for &(r, c) in &keypoints {
        let (r, c) = (r.round() as usize, c.round() as usize);
        if r < half || c < half || r + half >= opened.height() || c + half >= opened.width() {
            continue;
        }
        for dr in 0..side {
            let row = &opened.row(r - half + dr)[c - half..=c + half];
            for (s, &v) in sum[dr * side..(dr + 1) * side].iter_mut().zip(row) {
                *s += f64::from(v);
            }
        }
        used += 1;
    }
    if used < p.min_blobs {
        return None;
    }
    let mask: Vec<u8> = sum.iter().map(|&s| u8::from(s / (used as f64) < f64::from(threshold))).collect();
    let mask = BinaryImage::new(side, side, mask).ok()?;
    let comps = cv::connected_components(&mask);
    let center = half as f64;
    let core = comps
        .iter()
        .find(|c| c.bbox.contains(center, center))
        .or_else(|| comps.iter().max_by_key(|c| c.area))?;
    Some(NoteheadTemplate {
        height: core.bbox.height() as f64,
        width: core.bbox.width() as f64,
        area: core.area as f64,
    })
}

fn is_chord_block(c: &ConnectedComponent, t: &NoteheadTemplate, p: &NoteheadParams) -> bool {
    let area = c.area as f64;
    area >= p.chord_min_notes as f64 * t.area * p.chord_area_tolerance_low
        && area <= p.chord_max_notes as f64 * t.area * p.chord_area_tolerance_high
        && c.bbox.width() as f64 <= p.chord_max_width * t.width
        && c.bbox.height() as f64 <= p.chord_max_height * t.height
}

/// Splits a chord block into individual noteheads with k-means on its
/// pixel coordinates. Returns `None` if the component is not a chord block.
pub fn split_chord_block(c: &ConnectedComponent, template: &NoteheadTemplate, params: &NoteheadParams) -> Option<Vec<NoteheadBox>> {
    if !is_chord_block(c, template, params) {
        return None;
    }
    let n = ((c.area as f64 / template.area).round() as usize).clamp(params.chord_min_notes, params.chord_max_notes);
    let points: Vec<[f64; 2]> = c.pixels.iter().map(|&(r, col)| [r as f64, col as f64]).collect();
    let km = cv::kmeans(&points, n.min(points.len())).ok()?;
    let mut boxes: Vec<Option<BBox>> = vec![None; km.centroids.len()];
    for (&(r, col), &a) in c.pixels.iter().zip(&km.assignments) {
        match &mut boxes[a] {
            Some(b) => b.include(r, col),
            slot => *slot = Some(BBox::point(r, col)),
        }
    }
    Some(
        boxes
            .into_iter()
            .zip(&km.centroids)
            .filter_map(|(b, centroid)| {
                b.map(|bbox| NoteheadBox {
                    bbox,
                    center: (centroid[0], centroid[1]),
                    source: NoteheadSource::ChordSplit,
                })
            })
            .collect(),
    )
}

pub fn detect_noteheads(img: &GrayImage, params: &NoteheadParams) -> Result<NoteheadDetection> {
    let opened = cv::open(img, Element::Disk(params.disk_diameter))?;
    let binarized = cv::otsu_threshold(&opened);
    let adaptive_template = if params.adaptive_template {
        estimate_template(&opened, binarized.threshold, params)
    } else {
        None
    };
    let adaptive = adaptive_template.is_some();
    let template = adaptive_template.unwrap_or_else(|| fallback_template(params));
    if template.height <= 0.0 || template.width <= 0.0 || template.area <= 0.0 {
        return Err(Error::Config("notehead template must be positive".into()));
    }
    let binary = binarized.binary;
    let mut boxes = Vec::new();
    for comp in cv::connected_components(&binary) {
        if template.matches(&comp, params.tolerance_low, params.tolerance_high) {
            boxes.push(NoteheadBox {
                bbox: comp.bbox,
                center: comp.bbox.center(),
                source: NoteheadSource::Isolated,
            });
        } else if params.chord_blocks {
            if let Some(split) = split_chord_block(&comp, &template, params) {
                boxes.extend(split);
            }
        }
    }
    Ok(NoteheadDetection {
        boxes,
        template,
        adaptive,
        opened,
        binary,
    })
}

/// Ink difference `a - b` written back as an intensity image.
fn subtract_ink(a: &GrayImage, b: &GrayImage) -> GrayImage {
    let mut out = a.clone();
    par::for_each_row(out.data_mut(), a.width(), |r, row| {
        for (v, &bv) in row.iter_mut().zip(b.row(r)) {
            *v = (1.0 + *v - bv).clamp(0.0, 1.0);
        }
    });
    out
}

/// Comb-filter activations indexed by (spacing k, row h, column c).
#[derive(Debug, Clone, PartialEq)]
pub struct StaffFeatureTensor {
    activations: Vec<f32>,
    pub spacings: Vec<f64>,
    pub height: usize,
    pub num_columns: usize,
    pub image_width: usize,
    /// Horizontal structure after beam removal.
    pub lines: GrayImage,
}

impl StaffFeatureTensor {
    pub fn get(&self, k: usize, h: usize, c: usize) -> f32 {
        self.activations[(k * self.num_columns + c) * self.height + h]
    }

    pub fn column_width(&self) -> f64 {
        self.image_width as f64 / self.num_columns as f64
    }

    /// Column strip that contains image column `x`.
    pub fn column_of(&self, x: f64) -> usize {
        ((x.max(0.0) * self.num_columns as f64 / self.image_width as f64) as usize).min(self.num_columns - 1)
    }

    /// Argmax over spacings and rows `[row_lo, row_hi]` in column `c`.
    /// Ties go to the smaller row, then the smaller spacing.
    pub fn argmax(&self, c: usize, row_lo: usize, row_hi: usize) -> Option<(usize, usize, f32)> {
        let row_hi = row_hi.min(self.height - 1);
        let mut best: Option<(usize, usize, f32)> = None;
        for h in row_lo..=row_hi {
            for k in 0..self.spacings.len() {
                let v = self.get(k, h, c);
                if best.is_none_or(|(_, _, b)| v > b) {
                    best = Some((k, h, v));
                }
            }
        }
        best
    }

    pub fn max_activation(&self) -> f32 {
        self.activations.iter().copied().fold(0.0, f32::max)
    }
}

pub fn compute_staff_features(img: &GrayImage, params: &StaffFeatureParams) -> Result<StaffFeatureTensor> {
    let spacings = spacing_grid(params.spacing_min, params.spacing_max, params.spacing_step);
    let horizontal = cv::open(img, Element::Horizontal(params.horizontal_length.min(img.width())))?;
    let beams = cv::open(&horizontal, Element::Vertical(params.beam_thickness.min(img.height())))?;
    let lines = subtract_ink(&horizontal, &beams);
    let medians = cv::column_row_medians(&lines, params.num_columns);
    let num_columns = medians.len();
    let height = img.height();
    let mut activations = vec![0f32; spacings.len() * num_columns * height];
    par::for_each_row(&mut activations, height, |idx, out| {
        let (k, c) = (idx / num_columns, idx % num_columns);
        cv::comb_response(&medians[c], spacings[k], out);
    });
    Ok(StaffFeatureTensor {
        activations,
        spacings,
        height,
        num_columns,
        image_width: img.width(),
        lines,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarlineFeatures {
    pub rowsum: Vec<u32>,
    /// Isolated bar lines.
    pub isolated: GrayImage,
}

pub fn compute_barline_features(img: &GrayImage, params: &BarlineParams) -> Result<BarlineFeatures> {
    let straight = cv::dilate(img, Element::Horizontal(params.straighten_length.min(img.width())))?;
    let vertical = cv::open(&straight, Element::Vertical(params.vertical_length.min(img.height())))?;
    let thick = cv::open(&vertical, Element::Horizontal(params.thick_length.min(img.width())))?;
    let isolated = subtract_ink(&vertical, &thick);
    let rowsum = (0..isolated.height())
        .map(|r| isolated.row(r).iter().filter(|&&v| 1.0 - v > params.threshold).count() as u32)
        .collect();
    Ok(BarlineFeatures { rowsum, isolated })
}
