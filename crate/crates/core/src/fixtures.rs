//! Synthetic sheet-music photos with exact ground truth, plus the matching
//! MIDI performance.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::align::TimeInterval;
use crate::cv::{self, GrayImage};
use crate::error::{Error, Result};
use crate::evaluate::ManifestEntry;
use crate::midi::{write_midi, NoteSpan};
use crate::score::Hand;

const TICKS_PER_QUARTER: u16 = 480;
const TEMPO_US: u32 = 500_000;
const TICKS_PER_SECOND: f64 = 960.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Distortion {
    /// Counterclockwise rotation about the page center.
    pub rotation_deg: f64,
    /// Brightness factor at the left edge, rising linearly to 1 at the right edge.
    pub ramp_min: f64,
    pub blur_radius: usize,
    pub noise_sigma: f64,
    /// Width of a dark band along the left edge.
    pub dark_margin: usize,
}

impl Default for Distortion {
    fn default() -> Self {
        Distortion {
            rotation_deg: 0.0,
            ramp_min: 1.0,
            blur_radius: 0,
            noise_sigma: 0.0,
            dark_margin: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureNote {
    pub hand: Hand,
    /// Half-spaces above the staff's bottom line.
    pub position: i32,
}

impl FixtureNote {
    pub fn row(&self) -> usize {
        (self.hand.bottom_line_row() + self.position) as usize
    }

    /// MIDI pitch of the natural note at this position.
    pub fn pitch(&self) -> u8 {
        natural_pitch(self.hand.bottom_line_diatonic() + self.position)
    }
}

fn natural_pitch(diatonic: i32) -> u8 {
    const PC: [i32; 7] = [0, 2, 4, 5, 7, 9, 11];
    (12 * (diatonic.div_euclid(7) + 1) + PC[diatonic.rem_euclid(7) as usize]) as u8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureEvent {
    pub x: f64,
    pub notes: Vec<FixtureNote>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureSystem {
    /// Row of the treble staff's top line.
    pub top: f64,
    pub x_start: f64,
    pub x_end: f64,
    pub events: Vec<FixtureEvent>,
    /// Interior bar-line columns; the system is also closed at both ends.
    pub barlines: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureSpec {
    pub width: usize,
    pub height: usize,
    pub spacing: f64,
    /// Distance from the treble bottom line to the bass top line, in spacings.
    pub staff_gap: f64,
    pub line_thickness: f64,
    /// Notehead size relative to the spacing.
    pub notehead_height: f64,
    pub notehead_width: f64,
    pub stems: bool,
    pub systems: Vec<FixtureSystem>,
    pub distortion: Distortion,
    /// Random events played before and after the page.
    pub events_before: usize,
    pub events_after: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthNote {
    pub system: usize,
    pub event: usize,
    pub hand: Hand,
    pub position: i32,
    pub row: usize,
    /// (row, col) in the rendered image.
    pub center: (f64, f64),
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub spec: FixtureSpec,
    pub image: GrayImage,
    pub notes: Vec<GroundTruthNote>,
    pub midi: Vec<u8>,
    /// Time span of the page within the performance.
    pub interval: TimeInterval,
    /// Onset of every performed event.
    pub event_times: Vec<f64>,
}

impl FixtureSpec {
    fn staff_tops(&self, system: &FixtureSystem) -> (f64, f64) {
        (system.top, system.top + (4.0 + self.staff_gap) * self.spacing)
    }

    /// Image row of a note center before distortion.
    pub fn note_row(&self, system: &FixtureSystem, note: &FixtureNote) -> f64 {
        let (treble, bass) = self.staff_tops(system);
        let top = match note.hand {
            Hand::Right => treble,
            Hand::Left => bass,
        };
        top + 4.0 * self.spacing - note.position as f64 * self.spacing / 2.0
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::FixtureSpec(msg));
        if self.width < 64 || self.height < 64 {
            return bad(format!("page {}x{} is too small", self.width, self.height));
        }
        if !(self.spacing >= 4.0 && self.notehead_height > 0.0 && self.notehead_width > 0.0 && self.line_thickness > 0.0) {
            return bad("spacing and drawing sizes must be positive".into());
        }
        if !(self.distortion.ramp_min > 0.0 && self.distortion.ramp_min <= 1.0) {
            return bad("ramp_min must be in (0, 1]".into());
        }
        let (nh, nw) = (self.notehead_height * self.spacing, self.notehead_width * self.spacing);
        let mut prev_bottom = f64::NEG_INFINITY;
        for (si, sys) in self.systems.iter().enumerate() {
            let (treble, bass) = self.staff_tops(sys);
            let (top, bottom) = (treble - 3.5 * self.spacing, bass + 7.5 * self.spacing);
            if top < 0.0 || bottom > self.height as f64 || sys.x_start < 0.0 || sys.x_end > self.width as f64 || sys.x_start >= sys.x_end {
                return bad(format!("system {si} does not fit on the page"));
            }
            if top < prev_bottom {
                return bad(format!("system {si} overlaps the previous one"));
            }
            prev_bottom = bottom;
            let mut prev_x = f64::NEG_INFINITY;
            for (ei, ev) in sys.events.iter().enumerate() {
                if ev.notes.is_empty() {
                    return bad(format!("system {si} event {ei} has no notes"));
                }
                if ev.x - nw < sys.x_start || ev.x + nw > sys.x_end {
                    return bad(format!("system {si} event {ei} lies outside the staff"));
                }
                if ev.x - prev_x < nw + 0.5 * self.spacing {
                    return bad(format!("system {si} event {ei} overlaps the previous event"));
                }
                prev_x = ev.x;
                let mut rows: Vec<f64> = Vec::new();
                for note in &ev.notes {
                    if !(-6..=14).contains(&note.position) {
                        return bad(format!("system {si} event {ei} position {} is out of range", note.position));
                    }
                    let r = self.note_row(sys, note);
                    if rows.iter().any(|&o| (o - r).abs() < nh - 1e-9) {
                        return bad(format!("system {si} event {ei} has overlapping noteheads"));
                    }
                    rows.push(r);
                }
            }
        }
        Ok(())
    }
}

/// Ink coverage canvas; 0 is paper, 1 is full ink.
struct Canvas {
    width: usize,
    height: usize,
    ink: Vec<f32>,
}

fn span_overlap(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    (a1.min(b1) - a0.max(b0)).max(0.0)
}

impl Canvas {
    fn new(width: usize, height: usize) -> Self {
        Canvas {
            width,
            height,
            ink: vec![0.0; width * height],
        }
    }

    fn add(&mut self, r: usize, c: usize, v: f64) {
        let p = &mut self.ink[r * self.width + c];
        *p = p.max(v.min(1.0) as f32);
    }

    /// Axis-aligned rectangle `[r0, r1] x [c0, c1]` in continuous coordinates,
    /// where pixel `i` covers `[i - 0.5, i + 0.5]`.
    fn rect(&mut self, r0: f64, r1: f64, c0: f64, c1: f64) {
        let rs = (r0 + 0.5).floor().max(0.0) as usize;
        let re = ((r1 + 0.5).ceil().max(0.0) as usize).min(self.height);
        let cs = (c0 + 0.5).floor().max(0.0) as usize;
        let ce = ((c1 + 0.5).ceil().max(0.0) as usize).min(self.width);
        for r in rs..re {
            let fy = span_overlap(r as f64 - 0.5, r as f64 + 0.5, r0, r1);
            if fy <= 0.0 {
                continue;
            }
            for c in cs..ce {
                let fx = span_overlap(c as f64 - 0.5, c as f64 + 0.5, c0, c1);
                self.add(r, c, fx * fy);
            }
        }
    }

    fn ellipse(&mut self, cr: f64, cc: f64, h: f64, w: f64) {
        const SUB: usize = 4;
        let (ry, rx) = (h / 2.0, w / 2.0);
        let rs = (cr - ry - 1.0).floor().max(0.0) as usize;
        let re = ((cr + ry + 1.0).ceil().max(0.0) as usize).min(self.height);
        let cs = (cc - rx - 1.0).floor().max(0.0) as usize;
        let ce = ((cc + rx + 1.0).ceil().max(0.0) as usize).min(self.width);
        for r in rs..re {
            for c in cs..ce {
                let mut hits = 0;
                for sy in 0..SUB {
                    for sx in 0..SUB {
                        let y = r as f64 - 0.5 + (sy as f64 + 0.5) / SUB as f64;
                        let x = c as f64 - 0.5 + (sx as f64 + 0.5) / SUB as f64;
                        let (dy, dx) = ((y - cr) / ry, (x - cc) / rx);
                        if dy * dy + dx * dx <= 1.0 {
                            hits += 1;
                        }
                    }
                }
                if hits > 0 {
                    self.add(r, c, hits as f64 / (SUB * SUB) as f64);
                }
            }
        }
    }
}

fn draw(spec: &FixtureSpec) -> Canvas {
    let s = spec.spacing;
    let t = (spec.line_thickness * s).max(1.0);
    let (nh, nw) = (spec.notehead_height * s, spec.notehead_width * s);
    let mut canvas = Canvas::new(spec.width, spec.height);
    for sys in &spec.systems {
        let (treble, bass) = spec.staff_tops(sys);
        for top in [treble, bass] {
            for j in 0..5 {
                let y = top + j as f64 * s;
                canvas.rect(y - t / 2.0, y + t / 2.0, sys.x_start, sys.x_end);
            }
        }
        let bar_t = 1.3 * t;
        for x in std::iter::once(sys.x_start + bar_t / 2.0)
            .chain(sys.barlines.iter().copied())
            .chain(std::iter::once(sys.x_end - bar_t / 2.0))
        {
            canvas.rect(treble - t / 2.0, bass + 4.0 * s + t / 2.0, x - bar_t / 2.0, x + bar_t / 2.0);
        }
        for ev in &sys.events {
            for hand in [Hand::Right, Hand::Left] {
                let notes: Vec<&FixtureNote> = ev.notes.iter().filter(|n| n.hand == hand).collect();
                if notes.is_empty() {
                    continue;
                }
                let top = if hand == Hand::Right { treble } else { bass };
                for n in &notes {
                    let y = spec.note_row(sys, n);
                    canvas.ellipse(y, ev.x, nh, nw);
                    let ledgers: Vec<i32> = if n.position <= -2 {
                        (n.position..=-2).filter(|p| p % 2 == 0).collect()
                    } else if n.position >= 10 {
                        (10..=n.position).filter(|p| p % 2 == 0).collect()
                    } else {
                        Vec::new()
                    };
                    for p in ledgers {
                        let ly = top + 4.0 * s - p as f64 * s / 2.0;
                        canvas.rect(ly - t / 2.0, ly + t / 2.0, ev.x - 0.8 * nw, ev.x + 0.8 * nw);
                    }
                }
                if spec.stems {
                    let rows: Vec<f64> = notes.iter().map(|n| spec.note_row(sys, n)).collect();
                    let (lo, hi) = rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &r| (a.min(r), b.max(r)));
                    let mean_pos = notes.iter().map(|n| n.position as f64).sum::<f64>() / notes.len() as f64;
                    if mean_pos < 4.0 {
                        let x = ev.x + nw / 2.0 - t / 2.0;
                        canvas.rect(lo - 3.5 * s, hi, x - t / 2.0, x + t / 2.0);
                    } else {
                        let x = ev.x - nw / 2.0 + t / 2.0;
                        canvas.rect(lo, hi + 3.5 * s, x - t / 2.0, x + t / 2.0);
                    }
                }
            }
        }
    }
    canvas
}

fn rotate_point(spec: &FixtureSpec, (r, c): (f64, f64)) -> (f64, f64) {
    let theta = spec.distortion.rotation_deg.to_radians();
    let (cy, cx) = ((spec.height as f64 - 1.0) / 2.0, (spec.width as f64 - 1.0) / 2.0);
    let (dy, dx) = (r - cy, c - cx);
    // Counterclockwise on screen, where rows grow downward.
    (cy + dy * theta.cos() - dx * theta.sin(), cx + dx * theta.cos() + dy * theta.sin())
}

fn rotate_image(ink: &[f32], width: usize, height: usize, degrees: f64) -> Vec<f32> {
    if degrees == 0.0 {
        return ink.to_vec();
    }
    let theta = degrees.to_radians();
    let (sin, cos) = theta.sin_cos();
    let (cy, cx) = ((height as f64 - 1.0) / 2.0, (width as f64 - 1.0) / 2.0);
    let sample = |r: isize, c: isize| -> f64 {
        if r < 0 || c < 0 || r >= height as isize || c >= width as isize {
            0.0
        } else {
            f64::from(ink[r as usize * width + c as usize])
        }
    };
    let mut out = vec![0f32; width * height];
    for (r, row) in out.chunks_mut(width).enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            let (dy, dx) = (r as f64 - cy, c as f64 - cx);
            let sy = cy + dy * cos + dx * sin;
            let sx = cx + dx * cos - dy * sin;
            let (y0, x0) = (sy.floor(), sx.floor());
            let (fy, fx) = (sy - y0, sx - x0);
            let (y0, x0) = (y0 as isize, x0 as isize);
            let top = sample(y0, x0) * (1.0 - fx) + sample(y0, x0 + 1) * fx;
            let bottom = sample(y0 + 1, x0) * (1.0 - fx) + sample(y0 + 1, x0 + 1) * fx;
            *v = (top * (1.0 - fy) + bottom * fy) as f32;
        }
    }
    out
}

fn photograph(spec: &FixtureSpec, canvas: Canvas, rng: &mut ChaCha8Rng) -> Result<GrayImage> {
    let d = &spec.distortion;
    let (w, h) = (canvas.width, canvas.height);
    let ink = rotate_image(&canvas.ink, w, h, d.rotation_deg);
    let mut data: Vec<f32> = ink.iter().map(|&v| 1.0 - v).collect();
    if d.ramp_min < 1.0 {
        for row in data.chunks_mut(w) {
            for (c, v) in row.iter_mut().enumerate() {
                let f = d.ramp_min + (1.0 - d.ramp_min) * c as f64 / (w - 1) as f64;
                *v *= f as f32;
            }
        }
    }
    for row in data.chunks_mut(w) {
        for v in &mut row[..d.dark_margin.min(w)] {
            *v = v.min(0.15);
        }
    }
    let mut img = GrayImage::new(w, h, data)?;
    if d.blur_radius > 0 {
        img = cv::blur(&img, d.blur_radius);
    }
    if d.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, d.noise_sigma).map_err(|e| Error::FixtureSpec(e.to_string()))?;
        let noisy: Vec<f32> = img.data().iter().map(|&v| v + normal.sample(rng) as f32).collect();
        img = GrayImage::new(w, h, noisy)?;
    }
    Ok(img)
}

fn random_event_notes(rng: &mut ChaCha8Rng, chords: bool) -> Vec<FixtureNote> {
    let mut notes = Vec::new();
    for (hand, single, chord) in [(Hand::Right, 0.7, 0.15), (Hand::Left, 0.45, 0.1)] {
        let u: f64 = rng.random();
        let n = if u < single {
            1
        } else if chords && u < single + chord {
            rng.random_range(2..=3)
        } else {
            0
        };
        if n > 0 {
            let base = rng.random_range(-3..=11 - 2 * (n as i32 - 1));
            notes.extend((0..n).map(|i| FixtureNote { hand, position: base + 2 * i as i32 }));
        }
    }
    if notes.is_empty() {
        notes.push(FixtureNote {
            hand: Hand::Right,
            position: rng.random_range(-3..=11),
        });
    }
    notes
}

/// Knobs for [`random_page`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PageOptions {
    pub width: usize,
    pub height: usize,
    pub spacing: f64,
    /// Relative spread of the interline; the actual value is drawn uniformly.
    pub spacing_jitter: f64,
    /// The system count is drawn uniformly from 1 up to this (and what fits).
    pub max_systems: usize,
    /// Notes per page are drawn uniformly from this range; events stop once
    /// the drawn count is reached or the systems are full.
    pub min_notes: usize,
    pub max_notes: usize,
    pub chords: bool,
    /// Maximum rotation magnitude; the actual angle is drawn uniformly.
    pub max_rotation_deg: f64,
    pub ramp_min: f64,
    pub blur_radius: usize,
    pub noise_sigma: f64,
    pub dark_margin: usize,
}

impl Default for PageOptions {
    fn default() -> Self {
        PageOptions {
            width: 1000,
            height: 800,
            spacing: 12.0,
            spacing_jitter: 0.0,
            max_systems: 3,
            min_notes: 20,
            max_notes: 60,
            chords: true,
            max_rotation_deg: 0.5,
            ramp_min: 0.8,
            blur_radius: 1,
            noise_sigma: 0.02,
            dark_margin: 0,
        }
    }
}

/// Lays out a random page of grand staves.
pub fn random_page(seed: u64, opts: &PageOptions) -> FixtureSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = if opts.spacing_jitter > 0.0 {
        opts.spacing * rng.random_range(1.0 - opts.spacing_jitter..=1.0 + opts.spacing_jitter)
    } else {
        opts.spacing
    };
    let staff_gap = 6.0;
    let system_height = (8.0 + staff_gap) * s;
    let pitch = system_height + 7.5 * s;
    let fit = ((opts.height as f64 - s) / pitch).floor().max(1.0) as usize;
    let num_systems = rng.random_range(1..=fit.min(opts.max_systems.max(1)));
    let target = rng.random_range(opts.min_notes.max(1)..=opts.max_notes.max(opts.min_notes.max(1)));
    let mut placed = 0;
    let (x_start, x_end) = (4.0 * s, opts.width as f64 - 4.0 * s);
    let mut systems = Vec::with_capacity(num_systems);
    for i in 0..num_systems {
        if placed >= target {
            break;
        }
        let top = 5.0 * s + i as f64 * pitch;
        let mut events = Vec::new();
        let mut barlines = Vec::new();
        let mut x = x_start + 5.0 * s;
        let mut in_bar = 0;
        while x + 2.0 * s < x_end && placed < target {
            let notes = random_event_notes(&mut rng, opts.chords);
            placed += notes.len();
            events.push(FixtureEvent { x, notes });
            in_bar += 1;
            let step = rng.random_range(3.0..4.0) * s;
            if in_bar == 4 && x + step + 2.0 * s < x_end {
                barlines.push(x + step / 2.0);
                x += step + 1.0 * s;
                in_bar = 0;
            } else {
                x += step;
            }
        }
        systems.push(FixtureSystem {
            top,
            x_start,
            x_end,
            events,
            barlines,
        });
    }
    let rotation = if opts.max_rotation_deg > 0.0 {
        rng.random_range(-opts.max_rotation_deg..=opts.max_rotation_deg)
    } else {
        0.0
    };
    FixtureSpec {
        width: opts.width,
        height: opts.height,
        spacing: s,
        staff_gap,
        line_thickness: 0.12,
        notehead_height: 1.0,
        notehead_width: 1.3,
        stems: true,
        systems,
        distortion: Distortion {
            rotation_deg: rotation,
            ramp_min: opts.ramp_min,
            blur_radius: opts.blur_radius,
            noise_sigma: opts.noise_sigma,
            dark_margin: opts.dark_margin,
        },
        events_before: rng.random_range(5..=30),
        events_after: rng.random_range(5..=30),
        seed,
    }
}

fn random_context_event(rng: &mut ChaCha8Rng) -> Vec<u8> {
    let n = rng.random_range(1..=3);
    (0..n)
        .map(|_| {
            let hand = if rng.random_bool(0.6) { Hand::Right } else { Hand::Left };
            FixtureNote {
                hand,
                position: rng.random_range(-3..=11),
            }
            .pitch()
        })
        .collect()
}

/// Renders the page, its ground truth, and a performance containing it.
pub fn render_fixture(spec: &FixtureSpec) -> Result<Fixture> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed_f1a7);
    let image = photograph(spec, draw(spec), &mut rng)?;
    let mut notes = Vec::new();
    for (si, sys) in spec.systems.iter().enumerate() {
        for (ei, ev) in sys.events.iter().enumerate() {
            for n in &ev.notes {
                notes.push(GroundTruthNote {
                    system: si,
                    event: ei,
                    hand: n.hand,
                    position: n.position,
                    row: n.row(),
                    center: rotate_point(spec, (spec.note_row(sys, n), ev.x)),
                });
            }
        }
    }

    let mut performed: Vec<Vec<u8>> = (0..spec.events_before).map(|_| random_context_event(&mut rng)).collect();
    let page_start = performed.len();
    for sys in &spec.systems {
        for ev in &sys.events {
            performed.push(ev.notes.iter().map(FixtureNote::pitch).collect());
        }
    }
    let page_end = performed.len();
    performed.extend((0..spec.events_after.max(1)).map(|_| random_context_event(&mut rng)));

    let mut spans = Vec::new();
    let mut event_times = Vec::with_capacity(performed.len());
    let mut tick = 0u64;
    for pitches in &performed {
        let duration = rng.random_range(240..=576u64);
        let (start, end) = (tick as f64 / TICKS_PER_SECOND, (tick + duration) as f64 / TICKS_PER_SECOND);
        event_times.push(start);
        spans.extend(pitches.iter().map(|&pitch| NoteSpan { start, end, pitch }));
        tick += duration;
    }
    let midi = write_midi(&spans, TICKS_PER_QUARTER, TEMPO_US);
    let interval = TimeInterval::new(event_times[page_start], event_times[page_end])?;
    Ok(Fixture {
        spec: spec.clone(),
        image,
        notes,
        midi,
        interval,
        event_times,
    })
}

impl Fixture {
    pub fn png_bytes(&self) -> Result<Vec<u8>> {
        let mut bytes = Vec::new();
        self.image
            .to_luma8()
            .write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)?;
        Ok(bytes)
    }
}

/// Writes `n` random fixtures (image, MIDI, ground-truth JSON) into `dir`
/// and returns the path of the JSONL manifest listing them.
pub fn write_fixture_set(dir: &Path, n: usize, seed: u64, opts: &PageOptions) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    for i in 0..n {
        let id = format!("page{i:03}");
        let fixture = render_fixture(&random_page(seed.wrapping_add(i as u64), opts))?;
        let image = PathBuf::from(format!("{id}.png"));
        let midi = PathBuf::from(format!("{id}.mid"));
        std::fs::write(dir.join(&image), fixture.png_bytes()?)?;
        std::fs::write(dir.join(&midi), &fixture.midi)?;
        let truth = serde_json::json!({ "spec": fixture.spec, "notes": fixture.notes, "interval": fixture.interval });
        std::fs::write(dir.join(format!("{id}.json")), serde_json::to_vec_pretty(&truth).expect("ground truth serializes"))?;
        let entry = ManifestEntry {
            id,
            image,
            midi,
            intervals: vec![fixture.interval],
        };
        manifest.push_str(&serde_json::to_string(&entry).expect("manifest entry serializes"));
        manifest.push('\n');
    }
    let path = dir.join("manifest.jsonl");
    std::fs::write(&path, manifest)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::midi::{midi_to_bootleg, MidiBootlegParams};

    #[test]
    fn natural_pitches() {
        assert_eq!(FixtureNote { hand: Hand::Right, position: 0 }.pitch(), 64);
        assert_eq!(FixtureNote { hand: Hand::Right, position: -2 }.pitch(), 60);
        assert_eq!(FixtureNote { hand: Hand::Left, position: 0 }.pitch(), 43);
        assert_eq!(FixtureNote { hand: Hand::Left, position: 10 }.pitch(), 60);
        assert_eq!(FixtureNote { hand: Hand::Left, position: 10 }.row(), 23);
    }

    #[test]
    fn rendering_is_deterministic() {
        let opts = PageOptions {
            width: 400,
            height: 300,
            ..PageOptions::default()
        };
        let a = render_fixture(&random_page(3, &opts)).unwrap();
        let b = render_fixture(&random_page(3, &opts)).unwrap();
        assert_eq!(a.image, b.image);
        assert_eq!(a.midi, b.midi);
        let c = render_fixture(&random_page(4, &opts)).unwrap();
        assert_ne!(a.image, c.image);
    }

    #[test]
    fn notehead_centers_are_dark() {
        let opts = PageOptions {
            width: 600,
            height: 400,
            noise_sigma: 0.0,
            ramp_min: 1.0,
            ..PageOptions::default()
        };
        let f = render_fixture(&random_page(9, &opts)).unwrap();
        assert!(!f.notes.is_empty());
        for n in &f.notes {
            let v = f.image.get(n.center.0.round() as usize, n.center.1.round() as usize);
            assert!(v < 0.3, "{n:?} {v}");
        }
    }

    #[test]
    fn performance_contains_page_interval() {
        let f = render_fixture(&random_page(1, &PageOptions::default())).unwrap();
        let midi = midi_to_bootleg(&f.midi, &MidiBootlegParams::default()).unwrap();
        assert_eq!(midi.num_events(), f.event_times.len());
        for (a, b) in midi.event_times.iter().zip(&f.event_times) {
            assert!((a - b).abs() < 1e-9);
        }
        let page: usize = f.spec.systems.iter().map(|s| s.events.len()).sum();
        let first = f.spec.events_before;
        assert_eq!(f.interval.start, f.event_times[first]);
        assert_eq!(f.interval.end, f.event_times[first + page]);
    }

    #[test]
    fn overlapping_specs_are_rejected() {
        let mut spec = random_page(2, &PageOptions::default());
        let ev = &mut spec.systems[0].events[0];
        ev.notes = vec![
            FixtureNote { hand: Hand::Right, position: 4 },
            FixtureNote { hand: Hand::Right, position: 5 },
        ];
        assert!(matches!(render_fixture(&spec), Err(Error::FixtureSpec(_))));
        let mut spec = random_page(2, &PageOptions::default());
        spec.systems[0].events[1].x = spec.systems[0].events[0].x + 1.0;
        assert!(matches!(spec.validate(), Err(Error::FixtureSpec(_))));
        let mut spec = random_page(2, &PageOptions::default());
        spec.height = 100;
        assert!(spec.validate().is_err());
    }
}
