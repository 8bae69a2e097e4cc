//! End-to-end query: photo in, matching MIDI time interval out.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::align::{columns_to_interval, subsequence_dtw, AlignmentResult, TimeInterval};
use crate::config::HyperParams;
use crate::cv::{self, GrayImage};
use crate::detect::{compute_barline_features, compute_staff_features, detect_noteheads, BarlineFeatures, NoteheadDetection, StaffFeatureTensor};
use crate::error::{Error, Result};
use crate::midi::{midi_to_bootleg, MidiBootleg};
use crate::preprocess::{preprocess, PreprocessedImage};
use crate::project::{project, Projection};
use crate::score::{BootlegScore, NUM_ROWS};

pub const STAGE_LOAD_MIDI: &str = "Load MIDI Bootleg Score";
pub const STAGE_PREPROCESS: &str = "Pre-Processing";
pub const STAGE_NOTEHEADS: &str = "Notehead Detection";
pub const STAGE_STAFF: &str = "Staff Line Features";
pub const STAGE_BARLINES: &str = "Bar Line Features";
pub const STAGE_PROJECTION: &str = "Query Bootleg Projection";
pub const STAGE_DTW: &str = "Subsequence DTW";

pub const STAGES: [&str; 7] = [
    STAGE_LOAD_MIDI,
    STAGE_PREPROCESS,
    STAGE_NOTEHEADS,
    STAGE_STAFF,
    STAGE_BARLINES,
    STAGE_PROJECTION,
    STAGE_DTW,
];

/// Wall-clock seconds per stage, in execution order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub stages: Vec<(String, f64)>,
}

impl StageTimings {
    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.stages.push((stage.to_string(), start.elapsed().as_secs_f64()));
        out
    }

    pub fn get(&self, stage: &str) -> Option<f64> {
        self.stages.iter().find(|(s, _)| s == stage).map(|(_, t)| *t)
    }

    pub fn total(&self) -> f64 {
        self.stages.iter().map(|(_, t)| t).sum()
    }

    /// Adds zero entries for stages that never ran so every run reports all of them.
    fn complete(&mut self) {
        for stage in STAGES {
            if self.get(stage).is_none() {
                self.stages.push((stage.to_string(), 0.0));
            }
        }
        self.stages
            .sort_by_key(|(s, _)| STAGES.iter().position(|x| x == s).unwrap_or(STAGES.len()));
    }
}

/// Intermediate results of the image side.
#[derive(Debug, Clone)]
pub struct QueryFeatures {
    pub preprocessed: PreprocessedImage,
    pub noteheads: NoteheadDetection,
    pub staff: StaffFeatureTensor,
    pub bars: BarlineFeatures,
    pub projection: Projection,
}

#[derive(Debug, Clone)]
pub struct Extraction {
    /// Present when the image could be turned into a bootleg score.
    pub features: Option<QueryFeatures>,
    pub failure: Option<String>,
    /// Partial stage outputs kept for debugging even when projection fails.
    pub preprocessed: Option<PreprocessedImage>,
    pub noteheads: Option<NoteheadDetection>,
}

impl Extraction {
    pub fn query(&self) -> Option<&BootlegScore> {
        self.features.as_ref().map(|f| &f.projection.query.score)
    }
}

fn is_degenerate(e: &Error) -> bool {
    matches!(e, Error::DegenerateImage(_) | Error::Projection(_))
}

/// Decodes PNG/JPEG bytes into a luma image.
pub fn decode_image(bytes: &[u8]) -> Result<GrayImage> {
    let img = image::load_from_memory(bytes)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        image::DynamicImage::ImageLuma8(luma) => GrayImage::from_luma8(&luma),
        other => cv::to_grayscale(w, h, other.to_rgb8().as_raw()),
    }
}

/// Runs preprocessing, detection and projection, recording stage times.
pub fn extract_query(gray: &GrayImage, params: &HyperParams, timings: &mut StageTimings) -> Result<Extraction> {
    let mut out = Extraction {
        features: None,
        failure: None,
        preprocessed: None,
        noteheads: None,
    };
    let pre = match timings.time(STAGE_PREPROCESS, || preprocess(gray, &params.preprocess)) {
        Ok(p) => p,
        Err(e) if is_degenerate(&e) => {
            out.failure = Some(e.to_string());
            return Ok(out);
        }
        Err(e) => return Err(e),
    };
    let img = &pre.gray;
    let noteheads = timings.time(STAGE_NOTEHEADS, || detect_noteheads(img, &params.notehead))?;
    let staff = timings.time(STAGE_STAFF, || compute_staff_features(img, &params.staff))?;
    let bars = timings.time(STAGE_BARLINES, || compute_barline_features(img, &params.barline))?;
    match timings.time(STAGE_PROJECTION, || project(&noteheads.boxes, &staff, &bars, &params.project)) {
        Ok(projection) => {
            out.features = Some(QueryFeatures {
                preprocessed: pre,
                noteheads,
                staff,
                bars,
                projection,
            });
        }
        Err(e) if is_degenerate(&e) => {
            out.failure = Some(e.to_string());
            out.preprocessed = Some(pre);
            out.noteheads = Some(noteheads);
        }
        Err(e) => return Err(e),
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub interval: TimeInterval,
    pub alignment: Option<AlignmentResult>,
    /// Serialized query bootleg (empty on no-match before projection).
    #[serde(skip)]
    pub features: Vec<u8>,
    pub no_match: Option<String>,
    pub timings: StageTimings,
}

/// Where the reference comes from; MIDI bytes are converted inside the
/// timed load stage.
#[derive(Debug, Clone, Copy)]
pub enum Reference<'a> {
    Bootleg(&'a MidiBootleg),
    Midi(&'a [u8]),
}

/// Aligns a query bootleg against a reference and maps the match to time.
pub fn align_query(query: &BootlegScore, midi: &MidiBootleg, params: &HyperParams) -> Result<(AlignmentResult, TimeInterval)> {
    let alignment = subsequence_dtw(query, &midi.score, params.align.step_pattern)?;
    let interval = columns_to_interval(&alignment, midi)?;
    Ok((alignment, interval))
}

pub fn run_query_gray(gray: &GrayImage, reference: Reference<'_>, params: &HyperParams) -> Result<QueryResult> {
    let mut timings = StageTimings::default();
    let owned;
    let midi = match reference {
        Reference::Bootleg(m) => timings.time(STAGE_LOAD_MIDI, || m),
        Reference::Midi(bytes) => {
            owned = timings.time(STAGE_LOAD_MIDI, || midi_to_bootleg(bytes, &params.midi))?;
            &owned
        }
    };
    let extraction = extract_query(gray, params, &mut timings)?;
    let Some(query) = extraction.query() else {
        timings.complete();
        return Ok(QueryResult {
            interval: TimeInterval::zero(),
            alignment: None,
            features: Vec::new(),
            no_match: extraction.failure,
            timings,
        });
    };
    let (alignment, interval) = timings.time(STAGE_DTW, || align_query(query, midi, params))?;
    timings.complete();
    Ok(QueryResult {
        interval,
        alignment: Some(alignment),
        features: query.serialize(),
        no_match: None,
        timings,
    })
}

/// Decodes the photo and runs the full query. Decoding counts toward pre-processing.
pub fn run_query(image_bytes: &[u8], reference: Reference<'_>, params: &HyperParams) -> Result<QueryResult> {
    let start = Instant::now();
    let gray = decode_image(image_bytes)?;
    let decode = start.elapsed().as_secs_f64();
    let mut result = run_query_gray(&gray, reference, params)?;
    if let Some(slot) = result.timings.stages.iter_mut().find(|(s, _)| s == STAGE_PREPROCESS) {
        slot.1 += decode;
    }
    Ok(result)
}

/// Renders a bootleg score as an image, 4x4 pixels per cell, with the
/// staff lines of both hands drawn faintly for orientation.
pub fn render_bootleg(score: &BootlegScore) -> image::GrayImage {
    const CELL: u32 = 4;
    let cols = score.len().max(1) as u32;
    let mut img = image::GrayImage::from_pixel(cols * CELL, NUM_ROWS as u32 * CELL, image::Luma([255]));
    let staff_rows = [13usize, 15, 17, 19, 21, 35, 37, 39, 41, 43];
    for &row in &staff_rows {
        let y = (NUM_ROWS - 1 - row) as u32 * CELL + CELL / 2;
        for x in 0..img.width() {
            img.put_pixel(x, y, image::Luma([190]));
        }
    }
    for (c, col) in score.columns().iter().enumerate() {
        for row in col.rows() {
            let y0 = (NUM_ROWS - 1 - row) as u32 * CELL;
            for dy in 0..CELL {
                for dx in 0..CELL {
                    img.put_pixel(c as u32 * CELL + dx, y0 + dy, image::Luma([0]));
                }
            }
        }
    }
    img
}

/// Writes the intermediate images of one extraction as PNG files.
pub fn write_debug_images(extraction: &Extraction, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut save = |name: &str, img: &image::GrayImage| -> Result<()> {
        let path = dir.join(name);
        img.save(&path)?;
        written.push(path);
        Ok(())
    };
    let (pre, heads) = match &extraction.features {
        Some(f) => (Some(&f.preprocessed), Some(&f.noteheads)),
        None => (extraction.preprocessed.as_ref(), extraction.noteheads.as_ref()),
    };
    if let Some(pre) = pre {
        save("preprocessed.png", &pre.gray.to_luma8())?;
    }
    if let Some(h) = heads {
        save("notehead_opened.png", &h.opened.to_luma8())?;
        save("notehead_binary.png", &h.binary.to_gray().to_luma8())?;
        if let Some(pre) = pre {
            let mut overlay = pre.gray.to_luma8();
            for b in &h.boxes {
                let bb = b.bbox;
                for c in bb.col_min..=bb.col_max {
                    overlay.put_pixel(c as u32, bb.row_min as u32, image::Luma([128]));
                    overlay.put_pixel(c as u32, bb.row_max as u32, image::Luma([128]));
                }
                for r in bb.row_min..=bb.row_max {
                    overlay.put_pixel(bb.col_min as u32, r as u32, image::Luma([128]));
                    overlay.put_pixel(bb.col_max as u32, r as u32, image::Luma([128]));
                }
            }
            save("noteheads.png", &overlay)?;
        }
    }
    if let Some(f) = &extraction.features {
        save("staff_lines.png", &f.staff.lines.to_luma8())?;
        save("barlines.png", &f.bars.isolated.to_luma8())?;
        save("query_bootleg.png", &render_bootleg(&f.projection.query.score))?;
    }
    Ok(written)
}
