//! Classical image-processing primitives.
//!
//! Images are stored row-major as `f32` intensities in `[0, 1]` with
//! 0 = black ink and 1 = white paper. Because ink is dark, *erosion* here
//! is a max filter (it eats away ink) and *dilation* a min filter.

use std::collections::HashMap;

use crate::error::{invalid, Result};
use crate::par;

#[derive(Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl std::fmt::Debug for GrayImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "GrayImage({}x{})", self.width, self.height)
    }
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(invalid(format!("image dimensions {width}x{height} must be positive")));
        }
        if data.len() != width * height {
            return Err(invalid(format!(
                "buffer of {} values does not match {width}x{height}",
                data.len()
            )));
        }
        let data = data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Ok(GrayImage { width, height, data })
    }

    /// Panics on zero dimensions.
    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        assert!(width > 0 && height > 0);
        GrayImage {
            width,
            height,
            data: vec![value.clamp(0.0, 1.0); width * height],
        }
    }

    pub(crate) fn from_raw(width: usize, height: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), width * height);
        GrayImage { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f32) {
        self.data[row * self.width + col] = value.clamp(0.0, 1.0);
    }

    pub fn row(&self, row: usize) -> &[f32] {
        &self.data[row * self.width..(row + 1) * self.width]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| f64::from(v)).sum::<f64>() / self.data.len() as f64
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> GrayImage {
        GrayImage::from_raw(self.width, self.height, self.data.iter().map(|&v| f(v).clamp(0.0, 1.0)).collect())
    }

    pub fn invert(&self) -> GrayImage {
        self.map(|v| 1.0 - v)
    }

    pub fn to_luma8(&self) -> image::GrayImage {
        let bytes = self.data.iter().map(|&v| (v * 255.0).round() as u8).collect();
        image::GrayImage::from_raw(self.width as u32, self.height as u32, bytes).expect("dimensions match")
    }

    pub fn from_luma8(img: &image::GrayImage) -> Result<Self> {
        GrayImage::new(
            img.width() as usize,
            img.height() as usize,
            img.as_raw().iter().map(|&b| f32::from(b) / 255.0).collect(),
        )
    }
}

/// Binary mask; 1 = foreground (ink).
#[derive(Clone, PartialEq, Eq)]
pub struct BinaryImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl std::fmt::Debug for BinaryImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "BinaryImage({}x{}, {} set)", self.width, self.height, self.count())
    }
}

impl BinaryImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(invalid("mask buffer size mismatch"));
        }
        Ok(BinaryImage {
            width,
            height,
            data: data.into_iter().map(|b| u8::from(b != 0)).collect(),
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col] == 1
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&b| b as usize).sum()
    }

    pub fn to_gray(&self) -> GrayImage {
        GrayImage::from_raw(
            self.width,
            self.height,
            self.data.iter().map(|&b| if b == 1 { 0.0 } else { 1.0 }).collect(),
        )
    }
}

/// Inclusive pixel bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct BBox {
    pub row_min: usize,
    pub col_min: usize,
    pub row_max: usize,
    pub col_max: usize,
}

impl BBox {
    pub fn point(row: usize, col: usize) -> Self {
        BBox {
            row_min: row,
            col_min: col,
            row_max: row,
            col_max: col,
        }
    }

    pub fn height(&self) -> usize {
        self.row_max - self.row_min + 1
    }

    pub fn width(&self) -> usize {
        self.col_max - self.col_min + 1
    }

    pub fn area(&self) -> usize {
        self.height() * self.width()
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.row_min + self.row_max) as f64 / 2.0,
            (self.col_min + self.col_max) as f64 / 2.0,
        )
    }

    pub fn include(&mut self, row: usize, col: usize) {
        self.row_min = self.row_min.min(row);
        self.row_max = self.row_max.max(row);
        self.col_min = self.col_min.min(col);
        self.col_max = self.col_max.max(col);
    }

    pub fn contains(&self, row: f64, col: f64) -> bool {
        row >= self.row_min as f64 && row <= self.row_max as f64 && col >= self.col_min as f64 && col <= self.col_max as f64
    }

    pub fn intersection_area(&self, other: &BBox) -> usize {
        let rows = self.row_max.min(other.row_max) as isize - self.row_min.max(other.row_min) as isize + 1;
        let cols = self.col_max.min(other.col_max) as isize - self.col_min.max(other.col_min) as isize + 1;
        (rows.max(0) * cols.max(0)) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConnectedComponent {
    pub bbox: BBox,
    pub area: usize,
    /// (row, col) pairs
    pub pixels: Vec<(usize, usize)>,
}

impl ConnectedComponent {
    pub fn fill_ratio(&self) -> f64 {
        self.area as f64 / self.bbox.area() as f64
    }
}

/// Converts packed 8-bit RGB to luma.
pub fn to_grayscale(width: usize, height: usize, rgb: &[u8]) -> Result<GrayImage> {
    if width == 0 || height == 0 {
        return Err(invalid("empty image"));
    }
    if rgb.len() != width * height * 3 {
        return Err(invalid("RGB buffer size mismatch"));
    }
    let mut data = vec![0f32; width * height];
    par::for_each_row(&mut data, width, |r, row| {
        let src = &rgb[r * width * 3..(r + 1) * width * 3];
        for (dst, px) in row.iter_mut().zip(src.chunks_exact(3)) {
            let luma = 0.299 * f64::from(px[0]) + 0.587 * f64::from(px[1]) + 0.114 * f64::from(px[2]);
            *dst = ((luma / 255.0) as f32).clamp(0.0, 1.0);
        }
    });
    Ok(GrayImage::from_raw(width, height, data))
}

/// Box blur over a `(2r+1)^2` window with edge-replicated borders.
pub fn blur(img: &GrayImage, radius: usize) -> GrayImage {
    if radius == 0 {
        return img.clone();
    }
    let (w, h) = (img.width, img.height);
    let norm = 1.0 / (2 * radius + 1) as f64;
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;

    let mut horiz = vec![0f32; w * h];
    par::for_each_row(&mut horiz, w, |r, out| {
        let src = img.row(r);
        let mut acc: f64 = (-(radius as isize)..=radius as isize)
            .map(|k| f64::from(src[clamp(k, w)]))
            .sum();
        for (c, slot) in out.iter_mut().enumerate() {
            *slot = (acc * norm) as f32;
            let c = c as isize;
            acc += f64::from(src[clamp(c + radius as isize + 1, w)]) - f64::from(src[clamp(c - radius as isize, w)]);
        }
    });

    // Vertical pass in independent column bands.
    const BAND: usize = 64;
    let bands = w.div_ceil(BAND);
    let band_out: Vec<Vec<f32>> = par::map_range(0..bands, |b| {
        let c0 = b * BAND;
        let bw = BAND.min(w - c0);
        let mut out = vec![0f32; bw * h];
        let mut acc = vec![0f64; bw];
        for k in -(radius as isize)..=radius as isize {
            let row = clamp(k, h);
            for (a, &v) in acc.iter_mut().zip(&horiz[row * w + c0..row * w + c0 + bw]) {
                *a += f64::from(v);
            }
        }
        for r in 0..h {
            for (dst, &a) in out[r * bw..(r + 1) * bw].iter_mut().zip(&acc) {
                *dst = ((a * norm) as f32).clamp(0.0, 1.0);
            }
            let add = clamp(r as isize + radius as isize + 1, h);
            let sub = clamp(r as isize - radius as isize, h);
            for (i, a) in acc.iter_mut().enumerate() {
                *a += f64::from(horiz[add * w + c0 + i]) - f64::from(horiz[sub * w + c0 + i]);
            }
        }
        out
    });
    let mut data = vec![0f32; w * h];
    for (b, band) in band_out.iter().enumerate() {
        let c0 = b * BAND;
        let bw = BAND.min(w - c0);
        for r in 0..h {
            data[r * w + c0..r * w + c0 + bw].copy_from_slice(&band[r * bw..(r + 1) * bw]);
        }
    }
    GrayImage::from_raw(w, h, data)
}

/// Structuring element for grayscale morphology.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Element {
    /// Discrete disk of the given diameter.
    Disk(usize),
    /// `length` pixels wide, 1 pixel tall.
    Horizontal(usize),
    /// 1 pixel wide, `length` pixels tall.
    Vertical(usize),
}

impl Element {
    fn check(self, img: &GrayImage) -> Result<()> {
        let (size_w, size_h) = match self {
            Element::Disk(d) => (d, d),
            Element::Horizontal(l) => (l, 1),
            Element::Vertical(l) => (1, l),
        };
        if size_w == 0 || size_h == 0 {
            return Err(invalid(format!("{self:?} has zero size")));
        }
        if size_w > img.width || size_h > img.height {
            return Err(invalid(format!(
                "{self:?} larger than {}x{} image",
                img.width, img.height
            )));
        }
        Ok(())
    }

    /// Offsets `(dy, dx)` covered by the element.
    pub fn offsets(self) -> Vec<(isize, isize)> {
        match self {
            Element::Disk(d) => {
                let (lo, hi) = span(d);
                let r2 = (d as f64 / 2.0).powi(2);
                let mut out = Vec::new();
                for dy in -(lo as isize)..=hi as isize {
                    for dx in -(lo as isize)..=hi as isize {
                        if ((dy * dy + dx * dx) as f64) <= r2 {
                            out.push((dy, dx));
                        }
                    }
                }
                out
            }
            Element::Horizontal(l) => {
                let (lo, hi) = span(l);
                (-(lo as isize)..=hi as isize).map(|dx| (0, dx)).collect()
            }
            Element::Vertical(l) => {
                let (lo, hi) = span(l);
                (-(lo as isize)..=hi as isize).map(|dy| (dy, 0)).collect()
            }
        }
    }
}

/// Offsets before and after the anchor for a run of `len` pixels.
fn span(len: usize) -> (usize, usize) {
    ((len - 1) / 2, (len - 1) - (len - 1) / 2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Extreme {
    Max,
    Min,
}

impl Extreme {
    fn identity(self) -> f32 {
        match self {
            Extreme::Max => f32::NEG_INFINITY,
            Extreme::Min => f32::INFINITY,
        }
    }

    #[inline]
    fn apply(self, a: f32, b: f32) -> f32 {
        match self {
            Extreme::Max => a.max(b),
            Extreme::Min => a.min(b),
        }
    }
}

/// van Herk / Gil-Werman running extreme over `[x - lo, x + hi]`,
/// ignoring positions outside the signal.
fn sliding_extreme(src: &[f32], dst: &mut [f32], lo: usize, hi: usize, op: Extreme, scratch: &mut Vec<f32>) {
    let n = src.len();
    let w = lo + hi + 1;
    if w == 1 {
        dst.copy_from_slice(src);
        return;
    }
    let m = n + lo + hi;
    scratch.clear();
    scratch.resize(3 * m, op.identity());
    let (padded, rest) = scratch.split_at_mut(m);
    let (g, h) = rest.split_at_mut(m);
    padded[lo..lo + n].copy_from_slice(src);
    for i in 0..m {
        g[i] = if i % w == 0 { padded[i] } else { op.apply(g[i - 1], padded[i]) };
    }
    for i in (0..m).rev() {
        h[i] = if i == m - 1 || (i + 1) % w == 0 {
            padded[i]
        } else {
            op.apply(h[i + 1], padded[i])
        };
    }
    for x in 0..n {
        dst[x] = op.apply(h[x], g[x + w - 1]);
    }
}

fn horizontal_pass(img: &GrayImage, lo: usize, hi: usize, op: Extreme) -> GrayImage {
    let w = img.width;
    let mut data = vec![0f32; img.data.len()];
    par::for_each_band(&mut data, w, 16, |r0, band| {
        let mut scratch = Vec::new();
        for (i, out) in band.chunks_mut(w).enumerate() {
            sliding_extreme(img.row(r0 + i), out, lo, hi, op, &mut scratch);
        }
    });
    GrayImage::from_raw(w, img.height, data)
}

/// Vertical van Herk pass using whole rows as vectors.
fn vertical_pass(img: &GrayImage, lo: usize, hi: usize, op: Extreme) -> GrayImage {
    let (w, n) = (img.width, img.height);
    let win = lo + hi + 1;
    if win == 1 {
        return img.clone();
    }
    let m = n + lo + hi;
    let ident = op.identity();
    let padded_row = |i: usize| -> Option<&[f32]> { (i >= lo && i < lo + n).then(|| img.row(i - lo)) };

    let mut g = vec![0f32; m * w];
    par::for_each_band(&mut g, w, win, |start, band| {
        let rows = band.len() / w;
        for k in 0..rows {
            let i = start + k;
            let (prev, cur) = band.split_at_mut(k * w);
            let cur = &mut cur[..w];
            match padded_row(i) {
                Some(src) if k == 0 => cur.copy_from_slice(src),
                None if k == 0 => cur.fill(ident),
                Some(src) => {
                    let prev = &prev[(k - 1) * w..];
                    for ((c, &p), &s) in cur.iter_mut().zip(prev).zip(src) {
                        *c = op.apply(p, s);
                    }
                }
                None => cur.copy_from_slice(&prev[(k - 1) * w..k * w]),
            }
        }
    });
    let mut hbuf = vec![0f32; m * w];
    par::for_each_band(&mut hbuf, w, win, |start, band| {
        let rows = band.len() / w;
        for k in (0..rows).rev() {
            let i = start + k;
            let (cur, next) = band.split_at_mut((k + 1) * w);
            let cur = &mut cur[k * w..];
            let last = k == rows - 1;
            match padded_row(i) {
                Some(src) if last => cur.copy_from_slice(src),
                None if last => cur.fill(ident),
                Some(src) => {
                    for ((c, &nx), &s) in cur.iter_mut().zip(&next[..w]).zip(src) {
                        *c = op.apply(nx, s);
                    }
                }
                None => cur.copy_from_slice(&next[..w]),
            }
        }
    });
    let mut data = vec![0f32; n * w];
    par::for_each_row(&mut data, w, |x, out| {
        let hrow = &hbuf[x * w..(x + 1) * w];
        let grow = &g[(x + win - 1) * w..(x + win) * w];
        for ((o, &a), &b) in out.iter_mut().zip(hrow).zip(grow) {
            *o = op.apply(a, b);
        }
    });
    GrayImage::from_raw(w, n, data)
}

fn disk_pass(img: &GrayImage, diameter: usize, op: Extreme) -> GrayImage {
    let (lo, hi) = span(diameter);
    let r2 = (diameter as f64 / 2.0).powi(2);
    // Horizontal half-extent (left, right) of the disk at each vertical offset.
    let rows: Vec<(isize, usize, usize)> = (-(lo as isize)..=hi as isize)
        .filter_map(|dy| {
            let xs: Vec<isize> = (-(lo as isize)..=hi as isize)
                .filter(|dx| ((dy * dy + dx * dx) as f64) <= r2)
                .collect();
            let (first, last) = (*xs.first()?, *xs.last()?);
            Some((dy, (-first) as usize, last as usize))
        })
        .collect();
    let mut cache: HashMap<(usize, usize), GrayImage> = HashMap::new();
    for &(_, l, r) in &rows {
        cache.entry((l, r)).or_insert_with(|| horizontal_pass(img, l, r, op));
    }
    let (w, h) = (img.width, img.height);
    let mut data = vec![0f32; w * h];
    par::for_each_row(&mut data, w, |y, out| {
        out.fill(op.identity());
        for &(dy, l, r) in &rows {
            let src_row = y as isize + dy;
            if src_row < 0 || src_row >= h as isize {
                continue;
            }
            let src = cache[&(l, r)].row(src_row as usize);
            for (o, &s) in out.iter_mut().zip(src) {
                *o = op.apply(*o, s);
            }
        }
    });
    GrayImage::from_raw(w, h, data)
}

fn morph(img: &GrayImage, element: Element, op: Extreme) -> Result<GrayImage> {
    element.check(img)?;
    Ok(match element {
        Element::Disk(d) => disk_pass(img, d, op),
        Element::Horizontal(l) => {
            let (lo, hi) = span(l);
            horizontal_pass(img, lo, hi, op)
        }
        Element::Vertical(l) => {
            let (lo, hi) = span(l);
            vertical_pass(img, lo, hi, op)
        }
    })
}

/// Replaces each pixel with the whitest pixel under the element.
pub fn erode(img: &GrayImage, element: Element) -> Result<GrayImage> {
    morph(img, element, Extreme::Max)
}

/// Replaces each pixel with the blackest pixel under the element.
pub fn dilate(img: &GrayImage, element: Element) -> Result<GrayImage> {
    morph(img, element, Extreme::Min)
}

/// Erosion followed by dilation: keeps only ink structures that contain the element.
pub fn open(img: &GrayImage, element: Element) -> Result<GrayImage> {
    dilate(&erode(img, element)?, element)
}

/// Histogram bin (0..=255) of an intensity.
pub fn intensity_bin(v: f32) -> usize {
    (f64::from(v.clamp(0.0, 1.0)) * 255.0).round() as usize
}

pub fn histogram(img: &GrayImage) -> [u64; 256] {
    let mut hist = [0u64; 256];
    for &v in &img.data {
        hist[intensity_bin(v)] += 1;
    }
    hist
}

/// Otsu's split over a 256-bin histogram: bins `0..=t` form the dark class.
/// Returns `None` when the histogram has fewer than two occupied bins. Scores
/// are compared exactly, so ties go to the smallest `t`.
pub fn otsu_bin(hist: &[u64; 256]) -> Option<usize> {
    let total: u64 = hist.iter().sum();
    let sum: u128 = hist.iter().enumerate().map(|(i, &h)| i as u128 * u128::from(h)).sum();
    let mut dark = 0u64;
    let mut dark_sum = 0u128;
    // Between-class variance scaled by total^2 is num^2 / den with
    // num = N*S0 - N0*S and den = N0*N1.
    let mut best: Option<(usize, u128, u128)> = None;
    for (t, &h) in hist.iter().enumerate().take(255) {
        dark += h;
        dark_sum += t as u128 * u128::from(h);
        let light = total - dark;
        if dark == 0 || light == 0 {
            continue;
        }
        let num = (u128::from(total) * dark_sum).abs_diff(u128::from(dark) * sum);
        let num_sq = num * num;
        let den = u128::from(dark) * u128::from(light);
        if best.is_none_or(|(_, b_num_sq, b_den)| mul_wide(num_sq, b_den) > mul_wide(b_num_sq, den)) {
            best = Some((t, num_sq, den));
        }
    }
    best.map(|(t, _, _)| t)
}

/// Full 256-bit product as (high, low) halves.
fn mul_wide(a: u128, b: u128) -> (u128, u128) {
    const MASK: u128 = u64::MAX as u128;
    let (a_hi, a_lo) = (a >> 64, a & MASK);
    let (b_hi, b_lo) = (b >> 64, b & MASK);
    let lo_lo = a_lo * b_lo;
    let hi_lo = a_hi * b_lo;
    let lo_hi = a_lo * b_hi;
    let hi_hi = a_hi * b_hi;
    let mid = (lo_lo >> 64) + (hi_lo & MASK) + (lo_hi & MASK);
    let low = (lo_lo & MASK) | (mid << 64);
    let high = hi_hi + (hi_lo >> 64) + (lo_hi >> 64) + (mid >> 64);
    (high, low)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Binarized {
    /// Intensity threshold; foreground is `value < threshold`.
    pub threshold: f32,
    pub binary: BinaryImage,
}

/// Otsu binarization; dark pixels become foreground. A constant image has
/// no split and yields an all-background mask.
pub fn otsu_threshold(img: &GrayImage) -> Binarized {
    let hist = histogram(img);
    let (threshold, cut) = match otsu_bin(&hist) {
        Some(t) => (((t as f64 + 0.5) / 255.0) as f32, Some(t)),
        None => {
            let only = hist.iter().position(|&h| h > 0).unwrap_or(0);
            ((only as f64 / 255.0) as f32, None)
        }
    };
    let data = img
        .data
        .iter()
        .map(|&v| u8::from(cut.is_some_and(|t| intensity_bin(v) <= t)))
        .collect();
    Binarized {
        threshold,
        binary: BinaryImage {
            width: img.width,
            height: img.height,
            data,
        },
    }
}

pub fn threshold_below(img: &GrayImage, threshold: f32) -> BinaryImage {
    BinaryImage {
        width: img.width,
        height: img.height,
        data: img.data.iter().map(|&v| u8::from(v < threshold)).collect(),
    }
}

/// 8-connected components ordered by (top row, left column).
pub fn connected_components(bin: &BinaryImage) -> Vec<ConnectedComponent> {
    let (w, h) = (bin.width, bin.height);
    let mut visited = vec![false; w * h];
    let mut stack = Vec::new();
    let mut out = Vec::new();
    for start in 0..w * h {
        if bin.data[start] == 0 || visited[start] {
            continue;
        }
        visited[start] = true;
        stack.push(start);
        let mut pixels = Vec::new();
        let mut bbox = BBox::point(start / w, start % w);
        while let Some(idx) = stack.pop() {
            let (r, c) = (idx / w, idx % w);
            pixels.push((r, c));
            bbox.include(r, c);
            for dr in -1isize..=1 {
                for dc in -1isize..=1 {
                    let (nr, nc) = (r as isize + dr, c as isize + dc);
                    if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                        continue;
                    }
                    let n = nr as usize * w + nc as usize;
                    if bin.data[n] == 1 && !visited[n] {
                        visited[n] = true;
                        stack.push(n);
                    }
                }
            }
        }
        pixels.sort_unstable();
        out.push(ConnectedComponent {
            bbox,
            area: pixels.len(),
            pixels,
        });
    }
    out.sort_by_key(|c| (c.bbox.row_min, c.bbox.col_min));
    out
}

/// Shape rules that stand in for a circularity test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlobShape {
    pub min_fill: f64,
    pub min_aspect: f64,
    pub max_aspect: f64,
}

impl Default for BlobShape {
    fn default() -> Self {
        BlobShape {
            min_fill: 0.55,
            min_aspect: 0.5,
            max_aspect: 2.0,
        }
    }
}

/// Centers (row, col) of dark blobs whose area is in `[min_area, max_area]`
/// and whose box is filled and roughly square.
pub fn detect_blobs(img: &GrayImage, min_area: usize, max_area: usize, shape: BlobShape) -> Vec<(f64, f64)> {
    let bin = otsu_threshold(img).binary;
    connected_components(&bin)
        .into_iter()
        .filter(|c| {
            let aspect = c.bbox.height() as f64 / c.bbox.width() as f64;
            (min_area..=max_area).contains(&c.area)
                && c.fill_ratio() >= shape.min_fill
                && (shape.min_aspect..=shape.max_aspect).contains(&aspect)
        })
        .map(|c| c.bbox.center())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans<const D: usize> {
    /// Sorted ascending (lexicographically).
    pub centroids: Vec<[f64; D]>,
    pub assignments: Vec<usize>,
    /// Objective after every Lloyd iteration.
    pub objective: Vec<f64>,
}

fn dist2<const D: usize>(a: &[f64; D], b: &[f64; D]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn lex_cmp<const D: usize>(a: &[f64; D], b: &[f64; D]) -> std::cmp::Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

/// Seeds at the quantiles of the lexicographically sorted points.
pub fn quantile_seeds<const D: usize>(points: &[[f64; D]], k: usize) -> Vec<[f64; D]> {
    let mut sorted = points.to_vec();
    sorted.sort_by(lex_cmp);
    let n = sorted.len();
    (0..k)
        .map(|i| sorted[(((i as f64 + 0.5) * n as f64 / k as f64) as usize).min(n - 1)])
        .collect()
}

/// Deterministic farthest-first seeds starting from the smallest point.
pub fn farthest_seeds<const D: usize>(points: &[[f64; D]], k: usize) -> Vec<[f64; D]> {
    let mut sorted = points.to_vec();
    sorted.sort_by(lex_cmp);
    let mut seeds = vec![sorted[0]];
    let mut nearest: Vec<f64> = sorted.iter().map(|p| dist2(p, &sorted[0])).collect();
    while seeds.len() < k {
        let (idx, _) = nearest
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &d)| if d > best.1 { (i, d) } else { best });
        let seed = sorted[idx];
        seeds.push(seed);
        for (d, p) in nearest.iter_mut().zip(&sorted) {
            *d = d.min(dist2(p, &seed));
        }
    }
    seeds
}

pub const KMEANS_MAX_ITERS: usize = 100;

/// Lloyd's algorithm from quantile seeds.
pub fn kmeans<const D: usize>(points: &[[f64; D]], k: usize) -> Result<KMeans<D>> {
    if k == 0 || k > points.len() {
        return Err(invalid(format!("k = {k} with {} points", points.len())));
    }
    Ok(kmeans_from_seeds(points, quantile_seeds(points, k)))
}

pub fn kmeans_from_seeds<const D: usize>(points: &[[f64; D]], seeds: Vec<[f64; D]>) -> KMeans<D> {
    let k = seeds.len();
    let mut centroids = seeds;
    let mut assignments = vec![usize::MAX; points.len()];
    let mut objective = Vec::new();
    for _ in 0..KMEANS_MAX_ITERS {
        let mut changed = false;
        for (a, p) in assignments.iter_mut().zip(points) {
            let best = (0..k)
                .min_by(|&i, &j| dist2(p, &centroids[i]).total_cmp(&dist2(p, &centroids[j])))
                .unwrap();
            if *a != best {
                *a = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![[0f64; D]; k];
        let mut counts = vec![0usize; k];
        for (&a, p) in assignments.iter().zip(points) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p) {
                *s += x;
            }
        }
        for ((c, s), &n) in centroids.iter_mut().zip(&sums).zip(&counts) {
            if n > 0 {
                for (ci, si) in c.iter_mut().zip(s) {
                    *ci = si / n as f64;
                }
            }
        }
        objective.push(
            assignments
                .iter()
                .zip(points)
                .map(|(&a, p)| dist2(p, &centroids[a]))
                .sum(),
        );
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| lex_cmp(&centroids[a], &centroids[b]));
    let mut rank = vec![0; k];
    for (new, &old) in order.iter().enumerate() {
        rank[old] = new;
    }
    KMeans {
        centroids: order.iter().map(|&i| centroids[i]).collect(),
        assignments: assignments.into_iter().map(|a| rank[a]).collect(),
        objective,
    }
}

/// Per-output-sample contributing source indices and weights.
fn resample_weights(src_len: usize, dst_len: usize) -> Vec<(usize, Vec<f32>)> {
    let scale = dst_len as f64 / src_len as f64;
    let support = (1.0 / scale).max(1.0);
    (0..dst_len)
        .map(|x| {
            let center = (x as f64 + 0.5) / scale - 0.5;
            let lo = (center - support).floor() as isize + 1;
            let hi = (center + support).ceil() as isize - 1;
            let lo = lo.max(0);
            let hi = hi.min(src_len as isize - 1).max(lo);
            let mut weights: Vec<f64> = (lo..=hi)
                .map(|i| (1.0 - (i as f64 - center).abs() / support).max(0.0))
                .collect();
            let total: f64 = weights.iter().sum();
            if total <= 0.0 {
                weights = vec![0.0; weights.len()];
                let nearest = center.round().clamp(lo as f64, hi as f64) as isize;
                weights[(nearest - lo) as usize] = 1.0;
            } else {
                weights.iter_mut().for_each(|w| *w /= total);
            }
            (lo as usize, weights.into_iter().map(|w| w as f32).collect())
        })
        .collect()
}

/// Separable triangle-filter (bilinear) resampling; the filter widens when
/// downscaling so thin lines are averaged rather than skipped.
pub fn resize_bilinear(img: &GrayImage, new_width: usize, new_height: usize) -> Result<GrayImage> {
    if new_width == 0 || new_height == 0 {
        return Err(invalid("resize target must be non-empty"));
    }
    if new_width == img.width && new_height == img.height {
        return Ok(img.clone());
    }
    let hw = resample_weights(img.width, new_width);
    let mut horiz = vec![0f32; new_width * img.height];
    par::for_each_row(&mut horiz, new_width, |r, out| {
        let src = img.row(r);
        for (o, (start, weights)) in out.iter_mut().zip(&hw) {
            *o = weights.iter().zip(&src[*start..]).map(|(w, v)| w * v).sum();
        }
    });
    let vw = resample_weights(img.height, new_height);
    let mut data = vec![0f32; new_width * new_height];
    par::for_each_row(&mut data, new_width, |y, out| {
        let (start, weights) = &vw[y];
        out.fill(0.0);
        for (k, wgt) in weights.iter().enumerate() {
            let row = &horiz[(start + k) * new_width..(start + k + 1) * new_width];
            for (o, v) in out.iter_mut().zip(row) {
                *o += wgt * v;
            }
        }
        out.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    });
    Ok(GrayImage::from_raw(new_width, new_height, data))
}

/// Median of a slice (upper median for even lengths); reorders the slice.
pub fn median_in_place(values: &mut [f32]) -> f32 {
    let mid = values.len() / 2;
    *values.select_nth_unstable_by(mid, f32::total_cmp).1
}

/// Splits the width into `num_columns` equal strips and returns, for each
/// strip, the per-row median of `1 - pixel` (ink is positive).
pub fn column_row_medians(img: &GrayImage, num_columns: usize) -> Vec<Vec<f32>> {
    let num_columns = num_columns.clamp(1, img.width);
    let bounds: Vec<(usize, usize)> = (0..num_columns)
        .map(|c| (c * img.width / num_columns, (c + 1) * img.width / num_columns))
        .collect();
    par::map(&bounds, |&(c0, c1)| {
        let mut buf = Vec::with_capacity(c1 - c0);
        (0..img.height)
            .map(|r| {
                buf.clear();
                buf.extend_from_slice(&img.row(r)[c0..c1]);
                1.0 - median_in_place(&mut buf)
            })
            .collect()
    })
}

/// Correlates `signal` with a 5-tap comb whose taps sit at `round(j * spacing)`,
/// treating samples past the end as zero.
pub fn comb_response(signal: &[f32], spacing: f64, out: &mut [f32]) {
    let taps: [usize; 5] = std::array::from_fn(|j| (j as f64 * spacing).round() as usize);
    for (h, o) in out.iter_mut().enumerate() {
        *o = taps.iter().filter_map(|&t| signal.get(h + t)).sum();
    }
}
