//! Shuttlecock localisation from a detection heatmap.
//!
//! The heatmap is thresholded into a black/white map, circles are found with
//! a Hough gradient transform and the frame is reported as containing a
//! shuttlecock only when exactly one circle survives. An argmax mode is kept
//! for callers that prefer the peak-pixel rule.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heatmap::Heatmap;
use crate::types::{format_coord, PixelPoint};

const SET: u8 = 255;

/// Components with fewer pixels than this are treated as speckle.
pub const MIN_COMPONENT_PIXELS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMap {
    width: usize,
    height: usize,
    values: Vec<u8>,
}

impl BinaryMap {
    pub fn from_values(width: usize, height: usize, values: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || values.len() != width * height {
            return Err(Error::Spec(format!(
                "binary map of {width}x{height} needs {} values, got {}",
                width * height,
                values.len()
            )));
        }
        if values.iter().any(|&v| v != 0 && v != SET) {
            return Err(Error::Spec("binary map values must be 0 or 255".into()));
        }
        Ok(Self { width, height, values })
    }

    /// Builds a map from a predicate over pixel coordinates.
    pub fn from_fn(width: usize, height: usize, mut set: impl FnMut(usize, usize) -> bool) -> Self {
        let mut values = vec![0; width * height];
        for y in 0..height {
            for x in 0..width {
                if set(x, y) {
                    values[y * width + x] = SET;
                }
            }
        }
        Self { width, height, values }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn value(&self, x: usize, y: usize) -> u8 {
        self.values[y * self.width + x]
    }

    pub fn is_set(&self, x: usize, y: usize) -> bool {
        self.value(x, y) == SET
    }

    pub fn count_set(&self) -> usize {
        self.values.iter().filter(|&&v| v == SET).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Circle {
    pub x: f64,
    pub y: f64,
    pub radius: f64,
    pub votes: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    Circle,
    Argmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoderConfig {
    pub threshold: u8,
    pub min_radius: u32,
    pub max_radius: u32,
    /// Sobel magnitude normalised so that a straight 0→255 step gives 1.0.
    pub gradient_threshold: f64,
    pub accumulator_threshold: u32,
    pub min_center_distance: f64,
    pub mode: DecodeMode,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            threshold: 128,
            min_radius: 2,
            max_radius: 10,
            gradient_threshold: 0.2,
            accumulator_threshold: 8,
            min_center_distance: 5.0,
            mode: DecodeMode::Circle,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.threshold == 0 || self.threshold == 255 {
            return Err(Error::Spec(format!(
                "decoder threshold must lie strictly between 0 and 255, got {}",
                self.threshold
            )));
        }
        if self.min_radius == 0 || self.min_radius > self.max_radius {
            return Err(Error::Spec(format!(
                "radius window [{}, {}] is invalid",
                self.min_radius, self.max_radius
            )));
        }
        if !(self.gradient_threshold.is_finite() && self.gradient_threshold >= 0.0) {
            return Err(Error::Spec("gradient threshold must be finite and non-negative".into()));
        }
        if !(self.min_center_distance.is_finite() && self.min_center_distance >= 0.0) {
            return Err(Error::Spec("minimum centre distance must be finite and non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectionStatus {
    Found,
    Absent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BallDetection {
    pub frame: u64,
    position: Option<PixelPoint>,
}

impl BallDetection {
    pub fn found(frame: u64, position: PixelPoint) -> Self {
        Self { frame, position: Some(position) }
    }

    pub fn absent(frame: u64) -> Self {
        Self { frame, position: None }
    }

    pub fn status(&self) -> DetectionStatus {
        if self.position.is_some() {
            DetectionStatus::Found
        } else {
            DetectionStatus::Absent
        }
    }

    pub fn position(&self) -> Option<PixelPoint> {
        self.position
    }

    pub const CSV_HEADER: &'static str = "frame,status,x,y";

    /// `frame,status,x,y` with empty coordinates when absent.
    pub fn csv_row(&self) -> String {
        match self.position {
            Some(p) => format!("{},found,{},{}", self.frame, format_coord(p.x), format_coord(p.y)),
            None => format!("{},absent,,", self.frame),
        }
    }
}

/// 255 where the heatmap value is strictly greater than `threshold`.
pub fn binarize(heatmap: &Heatmap, threshold: u8) -> BinaryMap {
    BinaryMap {
        width: heatmap.width(),
        height: heatmap.height(),
        values: heatmap
            .values()
            .iter()
            .map(|&v| if v > threshold { SET } else { 0 })
            .collect(),
    }
}

// Inclusive pixel rectangle.
#[derive(Debug, Clone, Copy)]
struct Region {
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
}

impl Region {
    fn grow(self, by: usize, width: usize, height: usize) -> Region {
        Region {
            x0: self.x0.saturating_sub(by),
            y0: self.y0.saturating_sub(by),
            x1: (self.x1 + by).min(width - 1),
            y1: (self.y1 + by).min(height - 1),
        }
    }
}

/// Removes 8-connected components smaller than `min_pixels`. Returns the
/// cleaned mask and the bounding rectangle of what remains.
fn drop_small_components(map: &BinaryMap, min_pixels: usize) -> (Vec<bool>, Option<Region>) {
    let (w, h) = (map.width, map.height);
    let mut mask: Vec<bool> = map.values.iter().map(|&v| v == SET).collect();
    let mut seen = vec![false; w * h];
    let mut bounds: Option<Region> = None;
    let mut queue = VecDeque::new();
    let mut component = Vec::new();
    for start in 0..w * h {
        if !mask[start] || seen[start] {
            continue;
        }
        component.clear();
        seen[start] = true;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            component.push(i);
            let (x, y) = (i % w, i / w);
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let j = ny * w + nx;
                    if mask[j] && !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
        if component.len() < min_pixels {
            for &i in &component {
                mask[i] = false;
            }
            continue;
        }
        for &i in &component {
            let (x, y) = (i % w, i / w);
            bounds = Some(match bounds {
                None => Region { x0: x, y0: y, x1: x, y1: y },
                Some(r) => Region {
                    x0: r.x0.min(x),
                    y0: r.y0.min(y),
                    x1: r.x1.max(x),
                    y1: r.y1.max(y),
                },
            });
        }
    }
    (mask, bounds)
}

#[derive(Debug, Clone, Copy)]
struct EdgePixel {
    x: usize,
    y: usize,
    // Unit gradient direction.
    dx: f64,
    dy: f64,
}

/// 3×3 Sobel over `region` with replicated borders; keeps pixels whose
/// normalised magnitude exceeds `threshold`.
fn sobel_edges(mask: &[bool], width: usize, height: usize, region: Region, threshold: f64) -> Vec<EdgePixel> {
    let sample = |x: isize, y: isize| -> f64 {
        let cx = x.clamp(0, width as isize - 1) as usize;
        let cy = y.clamp(0, height as isize - 1) as usize;
        if mask[cy * width + cx] {
            1.0
        } else {
            0.0
        }
    };
    let mut edges = Vec::new();
    for y in region.y0..=region.y1 {
        for x in region.x0..=region.x1 {
            let (xi, yi) = (x as isize, y as isize);
            let gx = (sample(xi + 1, yi - 1) + 2.0 * sample(xi + 1, yi) + sample(xi + 1, yi + 1))
                - (sample(xi - 1, yi - 1) + 2.0 * sample(xi - 1, yi) + sample(xi - 1, yi + 1));
            let gy = (sample(xi - 1, yi + 1) + 2.0 * sample(xi, yi + 1) + sample(xi + 1, yi + 1))
                - (sample(xi - 1, yi - 1) + 2.0 * sample(xi, yi - 1) + sample(xi + 1, yi - 1));
            let magnitude = (gx * gx + gy * gy).sqrt();
            if magnitude / 4.0 > threshold {
                edges.push(EdgePixel {
                    x,
                    y,
                    dx: gx / magnitude,
                    dy: gy / magnitude,
                });
            }
        }
    }
    edges
}

/// Hough gradient circle search on a binary map.
///
/// Edge pixels vote along both directions of their gradient line for every
/// integer radius in the configured window. Accumulator peaks above the vote
/// threshold become centres (strongest first, suppressing any closer than
/// `min_center_distance` to an accepted one); each centre's radius is the most
/// common rounded distance among the edge pixels whose gradient line passes
/// through it. Output is sorted by votes, then by `(y, x)`.
pub fn find_circles(binary: &BinaryMap, config: &DecoderConfig) -> Vec<Circle> {
    let (w, h) = (binary.width, binary.height);
    let (mask, bounds) = drop_small_components(binary, MIN_COMPONENT_PIXELS);
    let Some(bounds) = bounds else {
        return Vec::new();
    };
    let edges = sobel_edges(&mask, w, h, bounds.grow(1, w, h), config.gradient_threshold);
    if edges.is_empty() {
        return Vec::new();
    }

    let votes_region = bounds.grow(1 + config.max_radius as usize, w, h);
    let aw = votes_region.x1 - votes_region.x0 + 1;
    let ah = votes_region.y1 - votes_region.y0 + 1;
    let mut acc = vec![0u32; aw * ah];
    let cell = |x: f64, y: f64| -> Option<usize> {
        let cx = x.round() as isize - votes_region.x0 as isize;
        let cy = y.round() as isize - votes_region.y0 as isize;
        (cx >= 0 && cy >= 0 && (cx as usize) < aw && (cy as usize) < ah).then(|| cy as usize * aw + cx as usize)
    };
    for e in &edges {
        for sign in [1.0, -1.0] {
            let mut last = None;
            for r in config.min_radius..=config.max_radius {
                let r = sign * f64::from(r);
                let c = cell(e.x as f64 + r * e.dx, e.y as f64 + r * e.dy);
                if let Some(i) = c.filter(|_| c != last) {
                    acc[i] += 1;
                }
                last = c;
            }
        }
    }

    // Local maxima; on plateaus the first cell in row-major order wins.
    let mut peaks = Vec::new();
    for cy in 0..ah {
        for cx in 0..aw {
            let v = acc[cy * aw + cx];
            if v < config.accumulator_threshold.max(1) {
                continue;
            }
            let mut is_peak = true;
            'nbr: for ny in cy.saturating_sub(1)..=(cy + 1).min(ah - 1) {
                for nx in cx.saturating_sub(1)..=(cx + 1).min(aw - 1) {
                    if (nx, ny) == (cx, cy) {
                        continue;
                    }
                    let n = acc[ny * aw + nx];
                    let earlier = (ny, nx) < (cy, cx);
                    if n > v || (n == v && earlier) {
                        is_peak = false;
                        break 'nbr;
                    }
                }
            }
            if is_peak {
                peaks.push((v, cy, cx));
            }
        }
    }
    peaks.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut circles: Vec<Circle> = Vec::new();
    for (votes, cy, cx) in peaks {
        let (x, y) = refine_center(&acc, aw, ah, cx, cy);
        let (x, y) = (x + votes_region.x0 as f64, y + votes_region.y0 as f64);
        if circles
            .iter()
            .any(|c| (c.x - x).hypot(c.y - y) < config.min_center_distance)
        {
            continue;
        }
        let Some(radius) = radius_mode(&edges, x, y, config) else {
            continue;
        };
        circles.push(Circle { x, y, radius, votes });
    }
    circles.sort_by(|a, b| {
        b.votes
            .cmp(&a.votes)
            .then(a.y.total_cmp(&b.y))
            .then(a.x.total_cmp(&b.x))
    });
    circles
}

const REFINE_RADIUS: usize = 2;
const REFINE_STEPS: usize = 4;

// Sub-pixel centre: vote-weighted centroid of a 5×5 window, re-centred on
// the rounded centroid until it settles. Symmetric vote plateaus put the
// integer peak half a cell off, so a single fixed window would be biased.
fn refine_center(acc: &[u32], aw: usize, ah: usize, cx: usize, cy: usize) -> (f64, f64) {
    let (mut wx, mut wy) = (cx, cy);
    let mut centre = (cx as f64, cy as f64);
    for _ in 0..REFINE_STEPS {
        let (mut sx, mut sy, mut sw) = (0.0, 0.0, 0.0);
        for ny in wy.saturating_sub(REFINE_RADIUS)..=(wy + REFINE_RADIUS).min(ah - 1) {
            for nx in wx.saturating_sub(REFINE_RADIUS)..=(wx + REFINE_RADIUS).min(aw - 1) {
                let wgt = f64::from(acc[ny * aw + nx]);
                sx += wgt * nx as f64;
                sy += wgt * ny as f64;
                sw += wgt;
            }
        }
        if sw == 0.0 {
            break;
        }
        centre = (sx / sw, sy / sw);
        let next = (centre.0.round() as usize, centre.1.round() as usize);
        if next == (wx, wy) {
            break;
        }
        (wx, wy) = next;
    }
    centre
}

// Most frequent rounded distance of edge pixels whose gradient line passes
// within one pixel of the centre. Ties go to the smaller radius.
fn radius_mode(edges: &[EdgePixel], cx: f64, cy: f64, config: &DecoderConfig) -> Option<f64> {
    let lo = config.min_radius.saturating_sub(1);
    let hi = config.max_radius + 1;
    let mut histogram = vec![0u32; (hi + 1) as usize];
    for e in edges {
        let (vx, vy) = (e.x as f64 - cx, e.y as f64 - cy);
        let d = vx.hypot(vy);
        let off_line = (vx * e.dy - vy * e.dx).abs();
        if off_line > 1.0 {
            continue;
        }
        let bin = d.round() as u32;
        if bin >= lo && bin <= hi {
            histogram[bin as usize] += 1;
        }
    }
    let (bin, count) = histogram
        .iter()
        .enumerate()
        .fold((0, 0), |best, (i, &c)| if c > best.1 { (i, c) } else { best });
    (count > 0 && bin > 0).then_some(bin as f64)
}

/// Location of the maximum value, ties to the smallest row-major index.
pub fn argmax(heatmap: &Heatmap) -> (usize, usize, u8) {
    let mut best = (0usize, 0u8);
    for (i, &v) in heatmap.values().iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    (best.0 % heatmap.width(), best.0 / heatmap.width(), best.1)
}

/// Decides whether `heatmap` shows a shuttlecock and where.
pub fn decode_ball(frame: u64, heatmap: &Heatmap, config: &DecoderConfig) -> Result<BallDetection> {
    config.validate()?;
    let detection = match config.mode {
        DecodeMode::Circle => {
            let circles = find_circles(&binarize(heatmap, config.threshold), config);
            match circles.as_slice() {
                [only] => BallDetection::found(frame, PixelPoint::new(only.x, only.y)),
                _ => BallDetection::absent(frame),
            }
        }
        DecodeMode::Argmax => {
            let (x, y, v) = argmax(heatmap);
            if v > config.threshold {
                BallDetection::found(frame, PixelPoint::new(x as f64, y as f64))
            } else {
                BallDetection::absent(frame)
            }
        }
    };
    Ok(detection)
}
