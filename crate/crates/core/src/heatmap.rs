//! Ground-truth heatmaps for shuttlecock tracking networks.
//!
//! A heatmap is an 8-bit grid holding a scaled isotropic Gaussian centred on
//! the labelled shuttlecock head. The network output is modelled as a 256-way
//! classification per pixel (one class per grayscale value), so this module
//! also provides the one-hot target encoding, a pixel-wise softmax and the
//! pixel-wise cross-entropy between a predicted probability volume and the
//! one-hot target. Everything here is a pure function of its inputs and is
//! meant to be used as a reference oracle by external training code.

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::PixelPoint;

/// Number of grayscale classes per pixel.
pub const DEPTH: usize = 256;

/// Probabilities below this are clamped before taking the logarithm.
pub const DEFAULT_LOG_EPSILON: f64 = 1e-12;

/// Tolerance on the per-pixel probability sum.
const PROBABILITY_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeatmapSpec {
    pub width: usize,
    pub height: usize,
    /// Gaussian variance σ² in pixels².
    pub variance: f64,
    /// Peak value written at the centre pixel.
    pub amplitude: u8,
}

impl Default for HeatmapSpec {
    fn default() -> Self {
        Self {
            width: 640,
            height: 480,
            variance: 10.0,
            amplitude: 255,
        }
    }
}

impl HeatmapSpec {
    pub fn new(width: usize, height: usize, variance: f64) -> Result<Self> {
        let spec = Self {
            width,
            height,
            variance,
            ..Self::default()
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_amplitude(mut self, amplitude: u8) -> Self {
        self.amplitude = amplitude;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Spec(format!(
                "heatmap dimensions must be positive, got {}x{}",
                self.width, self.height
            )));
        }
        if !(self.variance.is_finite() && self.variance > 0.0) {
            return Err(Error::Spec(format!(
                "heatmap variance must be positive and finite, got {}",
                self.variance
            )));
        }
        if self.amplitude == 0 {
            return Err(Error::Spec("heatmap amplitude must be in [1, 255]".into()));
        }
        Ok(())
    }
}

/// An 8-bit grayscale grid stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Heatmap {
    width: usize,
    height: usize,
    values: Vec<u8>,
}

impl Heatmap {
    pub fn from_values(width: usize, height: usize, values: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Spec(format!(
                "heatmap dimensions must be positive, got {width}x{height}"
            )));
        }
        if values.len() != width * height {
            return Err(Error::Spec(format!(
                "heatmap of {width}x{height} needs {} values, got {}",
                width * height,
                values.len()
            )));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Result<Self> {
        Self::from_values(width, height, vec![0; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Value at column `x`, row `y`.
    pub fn value(&self, x: usize, y: usize) -> u8 {
        self.values[y * self.width + x]
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    /// Pixel-wise saturating sum, used to compose multi-spot test maps.
    pub fn saturating_add(&self, other: &Heatmap) -> Result<Heatmap> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(Error::Spec("heatmap dimensions differ".into()));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a.saturating_add(*b))
            .collect();
        Heatmap::from_values(self.width, self.height, values)
    }

    /// Writes the map as a binary (P5) PGM with maxval 255.
    pub fn write_pgm<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(out, "P5\n{} {}\n255\n", self.width, self.height)?;
        out.write_all(&self.values)
    }

    pub fn read_pgm<R: BufRead>(mut input: R) -> Result<Heatmap> {
        let mut header = Vec::with_capacity(4);
        while header.len() < 4 {
            let token = read_pgm_token(&mut input)?;
            header.push(token);
        }
        if header[0] != "P5" {
            return Err(Error::Spec(format!("expected P5 PGM, found magic `{}`", header[0])));
        }
        let parse = |s: &str, what: &str| -> Result<usize> {
            s.parse()
                .map_err(|_| Error::Spec(format!("invalid PGM {what} `{s}`")))
        };
        let width = parse(&header[1], "width")?;
        let height = parse(&header[2], "height")?;
        let maxval = parse(&header[3], "maxval")?;
        if maxval != 255 {
            return Err(Error::Spec(format!("only 8-bit PGM supported, maxval {maxval}")));
        }
        let mut values = vec![0u8; width * height];
        input
            .read_exact(&mut values)
            .map_err(|e| Error::Spec(format!("truncated PGM raster: {e}")))?;
        Heatmap::from_values(width, height, values)
    }
}

// Reads one whitespace-delimited header token, skipping `#` comments. The
// single whitespace byte after the token is consumed, as PGM requires.
fn read_pgm_token<R: BufRead>(input: &mut R) -> Result<String> {
    let mut token = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        if input
            .read(&mut byte)
            .map_err(|e| Error::Spec(format!("PGM header: {e}")))?
            == 0
        {
            return Err(Error::Spec("unexpected end of PGM header".into()));
        }
        match byte[0] {
            b'#' if token.is_empty() => {
                let mut comment = Vec::new();
                input
                    .read_until(b'\n', &mut comment)
                    .map_err(|e| Error::Spec(format!("PGM header: {e}")))?;
            }
            b if b.is_ascii_whitespace() => {
                if !token.is_empty() {
                    break;
                }
            }
            b => token.push(b),
        }
    }
    String::from_utf8(token).map_err(|_| Error::Spec("non-ASCII PGM header".into()))
}

/// JSON sidecar describing how a ground-truth heatmap was generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapDescriptor {
    pub width: usize,
    pub height: usize,
    pub variance: f64,
    pub center: [f64; 2],
    #[serde(default = "default_amplitude", skip_serializing_if = "is_default_amplitude")]
    pub amplitude: u8,
}

fn default_amplitude() -> u8 {
    255
}

fn is_default_amplitude(a: &u8) -> bool {
    *a == 255
}

impl HeatmapDescriptor {
    pub fn new(center: PixelPoint, spec: &HeatmapSpec) -> Self {
        Self {
            width: spec.width,
            height: spec.height,
            variance: spec.variance,
            center: [center.x, center.y],
            amplitude: spec.amplitude,
        }
    }

    pub fn spec(&self) -> HeatmapSpec {
        HeatmapSpec {
            width: self.width,
            height: self.height,
            variance: self.variance,
            amplitude: self.amplitude,
        }
    }
}

/// Heatmap value at squared distance `r2` from the centre, evaluated in the
/// reduced form `floor(amplitude · exp(−r²/2σ²))`.
pub fn gaussian_value(r2: f64, variance: f64, amplitude: u8) -> u8 {
    let v = (-r2 / (2.0 * variance)).exp() * f64::from(amplitude);
    v.floor() as u8
}

/// The same value evaluated as the unreduced product of the normalised
/// Gaussian density and the `2πσ²·amplitude` rescaling factor.
pub fn gaussian_value_unreduced(r2: f64, variance: f64, amplitude: u8) -> u8 {
    let density = (1.0 / (2.0 * PI * variance)) * (-r2 / (2.0 * variance)).exp();
    let v = density * (2.0 * PI * variance * f64::from(amplitude));
    v.floor() as u8
}

/// Renders the ground-truth heatmap for a (possibly sub-pixel, possibly
/// off-grid) shuttlecock centre.
pub fn generate_heatmap(center: PixelPoint, spec: &HeatmapSpec) -> Result<Heatmap> {
    spec.validate()?;
    if !center.is_finite() {
        return Err(Error::Spec("heatmap centre must be finite".into()));
    }
    let mut values = vec![0u8; spec.width * spec.height];
    // Beyond this squared radius amplitude·exp(−r²/2σ²) < 1, so the floor is 0.
    let cutoff = 2.0 * spec.variance * f64::from(spec.amplitude).ln() * (1.0 + 1e-9) + 1e-9;
    let reach = cutoff.sqrt();
    let Some((x_lo, x_hi)) = pixel_span(center.x - reach, center.x + reach, spec.width) else {
        return Heatmap::from_values(spec.width, spec.height, values);
    };
    let Some((y_lo, y_hi)) = pixel_span(center.y - reach, center.y + reach, spec.height) else {
        return Heatmap::from_values(spec.width, spec.height, values);
    };
    for y in y_lo..=y_hi {
        let dy = y as f64 - center.y;
        for x in x_lo..=x_hi {
            let dx = x as f64 - center.x;
            let r2 = dx * dx + dy * dy;
            if r2 <= cutoff {
                values[y * spec.width + x] = gaussian_value(r2, spec.variance, spec.amplitude);
            }
        }
    }
    Heatmap::from_values(spec.width, spec.height, values)
}

fn pixel_span(lo: f64, hi: f64, len: usize) -> Option<(usize, usize)> {
    let lo = lo.ceil().max(0.0);
    let hi = hi.floor().min(len as f64 - 1.0);
    (lo <= hi).then_some((lo as usize, hi as usize))
}

/// Pixels where the reduced and unreduced evaluations of the Gaussian
/// disagree after flooring.
pub fn evaluation_divergences(center: PixelPoint, spec: &HeatmapSpec) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for y in 0..spec.height {
        for x in 0..spec.width {
            let dx = x as f64 - center.x;
            let dy = y as f64 - center.y;
            let r2 = dx * dx + dy * dy;
            if gaussian_value(r2, spec.variance, spec.amplitude)
                != gaussian_value_unreduced(r2, spec.variance, spec.amplitude)
            {
                out.push((x, y));
            }
        }
    }
    out
}

/// Per-pixel class indices; the implicit one-hot target over 256 classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OneHotVolume {
    width: usize,
    height: usize,
    indices: Vec<u8>,
}

impl OneHotVolume {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn index(&self, x: usize, y: usize) -> u8 {
        self.indices[y * self.width + x]
    }

    /// `Q(i, j, k)`: 1 when `k` is the target class at the pixel, else 0.
    pub fn indicator(&self, x: usize, y: usize, k: usize) -> f64 {
        if usize::from(self.index(x, y)) == k {
            1.0
        } else {
            0.0
        }
    }

    /// Maps each pixel's class back to its grayscale value.
    pub fn to_heatmap(&self) -> Heatmap {
        Heatmap {
            width: self.width,
            height: self.height,
            values: self.indices.clone(),
        }
    }
}

pub fn encode_onehot(heatmap: &Heatmap) -> OneHotVolume {
    OneHotVolume {
        width: heatmap.width,
        height: heatmap.height,
        indices: heatmap.values.clone(),
    }
}

/// Anything that can report `P(i, j, k)` for a grid of pixels.
pub trait PixelProbabilities {
    fn width(&self) -> usize;
    fn height(&self) -> usize;
    fn probability(&self, x: usize, y: usize, k: usize) -> f64;
}

/// Dense W×H×256 probability volume, pixel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVolume {
    width: usize,
    height: usize,
    bins: Vec<f64>,
}

impl ProbabilityVolume {
    pub fn new(width: usize, height: usize, bins: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || bins.len() != width * height * DEPTH {
            return Err(Error::Spec(format!(
                "probability volume of {width}x{height}x{DEPTH} needs {} bins, got {}",
                width * height * DEPTH,
                bins.len()
            )));
        }
        for (pixel, chunk) in bins.chunks_exact(DEPTH).enumerate() {
            if chunk.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::Spec(format!(
                    "pixel {pixel} has a negative or non-finite probability"
                )));
            }
            let sum: f64 = chunk.iter().sum();
            if (sum - 1.0).abs() > PROBABILITY_SUM_TOLERANCE {
                return Err(Error::Spec(format!(
                    "pixel {pixel} probabilities sum to {sum}, expected 1"
                )));
            }
        }
        Ok(Self {
            width,
            height,
            bins,
        })
    }

    /// Probability 1 on each pixel's target class.
    pub fn one_hot(target: &OneHotVolume) -> Self {
        let mut bins = vec![0.0; target.indices.len() * DEPTH];
        for (pixel, &k) in target.indices.iter().enumerate() {
            bins[pixel * DEPTH + usize::from(k)] = 1.0;
        }
        Self {
            width: target.width,
            height: target.height,
            bins,
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let start = (y * self.width + x) * DEPTH;
        &self.bins[start..start + DEPTH]
    }

    pub fn bins(&self) -> &[f64] {
        &self.bins
    }
}

impl PixelProbabilities for ProbabilityVolume {
    fn width(&self) -> usize {
        self.width
    }

    fn height(&self) -> usize {
        self.height
    }

    fn probability(&self, x: usize, y: usize, k: usize) -> f64 {
        self.bins[(y * self.width + x) * DEPTH + k]
    }
}

/// The uniform prediction `1/256` everywhere, without materialising it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UniformPrediction {
    pub width: usize,
    pub height: usize,
}

impl PixelProbabilities for UniformPrediction {
    fn width(&self) -> usize {
        self.width
    }

    fn height(&self) -> usize {
        self.height
    }

    fn probability(&self, _x: usize, _y: usize, _k: usize) -> f64 {
        1.0 / DEPTH as f64
    }
}

/// Pixel-wise softmax over 256 scores per pixel (pixel-major layout).
pub fn softmax_normalize(width: usize, height: usize, logits: &[f64]) -> Result<ProbabilityVolume> {
    if width == 0 || height == 0 || logits.len() != width * height * DEPTH {
        return Err(Error::Spec(format!(
            "logit volume of {width}x{height}x{DEPTH} needs {} scores, got {}",
            width * height * DEPTH,
            logits.len()
        )));
    }
    if let Some(pos) = logits.iter().position(|s| !s.is_finite()) {
        return Err(Error::Computation(format!(
            "non-finite score at pixel {} bin {}",
            pos / DEPTH,
            pos % DEPTH
        )));
    }
    let mut bins = Vec::with_capacity(logits.len());
    for scores in logits.chunks_exact(DEPTH) {
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let start = bins.len();
        bins.extend(scores.iter().map(|s| (s - max).exp()));
        let total: f64 = bins[start..].iter().sum();
        for p in &mut bins[start..] {
            *p /= total;
        }
    }
    Ok(ProbabilityVolume {
        width,
        height,
        bins,
    })
}

/// Pixel-wise cross-entropy `−Σ Q log P` with the default clamping epsilon.
pub fn cross_entropy_loss<P: PixelProbabilities + ?Sized>(pred: &P, truth: &OneHotVolume) -> Result<f64> {
    cross_entropy_loss_with_epsilon(pred, truth, DEFAULT_LOG_EPSILON)
}

/// Natural-log cross-entropy; probabilities are clamped to `epsilon` before
/// the logarithm so degenerate predictions give a large finite loss.
pub fn cross_entropy_loss_with_epsilon<P: PixelProbabilities + ?Sized>(
    pred: &P,
    truth: &OneHotVolume,
    epsilon: f64,
) -> Result<f64> {
    if (pred.width(), pred.height()) != (truth.width, truth.height) {
        return Err(Error::Spec(format!(
            "prediction is {}x{} but target is {}x{}",
            pred.width(),
            pred.height(),
            truth.width,
            truth.height
        )));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Spec(format!("log epsilon must be in (0, 1), got {epsilon}")));
    }
    let mut loss = 0.0;
    for y in 0..truth.height {
        for x in 0..truth.width {
            let k = usize::from(truth.index(x, y));
            let p = pred.probability(x, y, k).max(epsilon);
            loss -= p.ln();
        }
    }
    // -0.0 when every term is exactly zero.
    Ok(loss.max(0.0))
}

/// Reads a raw probability volume: an ASCII header line `PVOL <w> <h> 256`
/// followed by `w·h·256` little-endian f64 values, pixel-major.
pub fn read_probability_volume<R: BufRead>(mut input: R) -> Result<ProbabilityVolume> {
    let mut header = String::new();
    input
        .read_line(&mut header)
        .map_err(|e| Error::Spec(format!("probability volume header: {e}")))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let dims = match fields.as_slice() {
        ["PVOL", w, h, d] => (w.parse::<usize>().ok(), h.parse::<usize>().ok(), d.parse::<usize>().ok()),
        _ => (None, None, None),
    };
    let (Some(width), Some(height), Some(DEPTH)) = dims else {
        return Err(Error::Spec(format!("bad probability volume header `{}`", header.trim())));
    };
    let mut raw = vec![0u8; width * height * DEPTH * 8];
    input
        .read_exact(&mut raw)
        .map_err(|e| Error::Spec(format!("truncated probability volume: {e}")))?;
    let bins = raw
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
        .collect();
    ProbabilityVolume::new(width, height, bins)
}

pub fn write_probability_volume<W: Write>(volume: &ProbabilityVolume, mut out: W) -> std::io::Result<()> {
    writeln!(out, "PVOL {} {} {}", volume.width, volume.height, DEPTH)?;
    for p in &volume.bins {
        out.write_all(&p.to_le_bytes())?;
    }
    Ok(())
}
