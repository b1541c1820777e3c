//! Smart-racket IMU streams: stroke segmentation, window features and a
//! nearest-centroid stroke classifier.

use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rally::BallType;
use crate::types::format_significant;

pub const IMU_CSV_HEADER: [&str; 7] = ["t_ms", "ax", "ay", "az", "gx", "gy", "gz"];

/// Length of [`extract_features`] output.
pub const FEATURE_DIM: usize = 26;

/// One accelerometer (g) + gyroscope (deg/s) reading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuSample {
    pub t_ms: f64,
    pub ax: f64,
    pub ay: f64,
    pub az: f64,
    pub gx: f64,
    pub gy: f64,
    pub gz: f64,
}

impl ImuSample {
    pub fn at(t_ms: f64, axes: [f64; 6]) -> Self {
        let [ax, ay, az, gx, gy, gz] = axes;
        Self { t_ms, ax, ay, az, gx, gy, gz }
    }

    pub fn axes(&self) -> [f64; 6] {
        [self.ax, self.ay, self.az, self.gx, self.gy, self.gz]
    }

    /// Acceleration magnitude in g.
    pub fn magnitude(&self) -> f64 {
        (self.ax * self.ax + self.ay * self.ay + self.az * self.az).sqrt()
    }
}

pub fn validate_stream(stream: &[ImuSample]) -> Result<()> {
    for (i, s) in stream.iter().enumerate() {
        if !s.t_ms.is_finite() || s.axes().iter().any(|v| !v.is_finite()) {
            return Err(Error::Stream(format!("sample {i} has non-finite values")));
        }
        if i > 0 && s.t_ms <= stream[i - 1].t_ms {
            return Err(Error::Stream(format!(
                "timestamps not strictly increasing at sample {i} ({} after {})",
                s.t_ms,
                stream[i - 1].t_ms
            )));
        }
    }
    Ok(())
}

/// Parses an IMU log with the mandatory `t_ms,ax,ay,az,gx,gy,gz` header.
pub fn read_imu_csv<R: Read>(input: R) -> Result<Vec<ImuSample>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = reader
        .headers()
        .map_err(|e| Error::Stream(format!("IMU CSV header: {e}")))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != IMU_CSV_HEADER {
        return Err(Error::Stream(format!(
            "IMU CSV header must be `{}`, found `{}`",
            IMU_CSV_HEADER.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Stream(format!("IMU CSV line {}: {e}", row + 2)))?;
        let mut v = [0.0; 7];
        for (i, slot) in v.iter_mut().enumerate() {
            let field = record.get(i).unwrap_or("");
            *slot = field.parse().map_err(|_| {
                Error::Stream(format!(
                    "IMU CSV line {}, column {}: `{field}` is not a number",
                    row + 2,
                    IMU_CSV_HEADER[i]
                ))
            })?;
        }
        out.push(ImuSample::at(v[0], [v[1], v[2], v[3], v[4], v[5], v[6]]));
    }
    validate_stream(&out)?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentParams {
    pub threshold_g: f64,
    pub window_ms: f64,
    pub refractory_ms: f64,
}

impl Default for SegmentParams {
    fn default() -> Self {
        Self {
            threshold_g: 3.0,
            window_ms: 400.0,
            refractory_ms: 300.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrokeWindow {
    pub samples: Vec<ImuSample>,
    pub peak_time: f64,
    pub peak_magnitude: f64,
}

impl StrokeWindow {
    pub const CSV_HEADER: &'static str = "peak_t_ms,peak_magnitude,start_t_ms,end_t_ms,samples";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.peak_time,
            format_significant(self.peak_magnitude, 9),
            self.samples.first().map_or(self.peak_time, |s| s.t_ms),
            self.samples.last().map_or(self.peak_time, |s| s.t_ms),
            self.samples.len()
        )
    }
}

/// Finds acceleration-magnitude peaks above the threshold and cuts a window
/// centred on each.
///
/// Peaks closer than the refractory period compete: the stronger one wins
/// (earlier on ties). Windows are returned in time order and are truncated
/// at the stream edges.
pub fn segment_strokes(stream: &[ImuSample], params: &SegmentParams) -> Result<Vec<StrokeWindow>> {
    validate_stream(stream)?;
    if !(params.window_ms > 0.0 && params.refractory_ms >= 0.0 && params.threshold_g.is_finite()) {
        return Err(Error::Stream("invalid segmentation parameters".into()));
    }
    let mags: Vec<f64> = stream.iter().map(ImuSample::magnitude).collect();
    let mut peaks: Vec<usize> = (0..mags.len())
        .filter(|&i| {
            mags[i] > params.threshold_g
                && (i == 0 || mags[i] > mags[i - 1])
                && (i + 1 == mags.len() || mags[i] >= mags[i + 1])
        })
        .collect();
    peaks.sort_by(|&a, &b| mags[b].total_cmp(&mags[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for p in peaks {
        let t = stream[p].t_ms;
        if kept
            .iter()
            .all(|&k| (stream[k].t_ms - t).abs() >= params.refractory_ms)
        {
            kept.push(p);
        }
    }
    kept.sort_unstable();
    let half = params.window_ms / 2.0;
    Ok(kept
        .into_iter()
        .map(|p| {
            let t = stream[p].t_ms;
            StrokeWindow {
                samples: stream
                    .iter()
                    .filter(|s| s.t_ms >= t - half && s.t_ms <= t + half)
                    .copied()
                    .collect(),
                peak_time: t,
                peak_magnitude: mags[p],
            }
        })
        .collect())
}

/// 26 features: for each of the six axes its mean, population standard
/// deviation, minimum and maximum; then the peak magnitude and the window
/// energy `Σ |a|² · Δt` (g²·s, forward sample intervals, the last sample
/// reusing the previous interval).
pub fn extract_features(w: &StrokeWindow) -> Result<Vec<f64>> {
    if w.samples.is_empty() {
        return Err(Error::Stream("cannot featurise an empty window".into()));
    }
    let n = w.samples.len() as f64;
    let mut out = Vec::with_capacity(FEATURE_DIM);
    for axis in 0..6 {
        let values: Vec<f64> = w.samples.iter().map(|s| s.axes()[axis]).collect();
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        out.push(mean);
        out.push(var.sqrt());
        out.push(values.iter().copied().fold(f64::INFINITY, f64::min));
        out.push(values.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    }
    out.push(w.peak_magnitude);
    let mut energy = 0.0;
    let len = w.samples.len();
    for i in 0..len {
        let dt_ms = if i + 1 < len {
            w.samples[i + 1].t_ms - w.samples[i].t_ms
        } else if len > 1 {
            w.samples[i].t_ms - w.samples[i - 1].t_ms
        } else {
            0.0
        };
        energy += w.samples[i].magnitude().powi(2) * dt_ms / 1000.0;
    }
    out.push(energy);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledCentroid {
    pub label: BallType,
    pub centroid: Vec<f64>,
}

/// Per-class centroids in z-normalised feature space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrokeModel {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// One per stroke type, in canonical order.
    pub centroids: Vec<LabeledCentroid>,
}

impl StrokeModel {
    pub fn validate(&self) -> Result<()> {
        let dim = self.mean.len();
        if dim == 0 || self.scale.len() != dim {
            return Err(Error::Training("normalisation statistics have inconsistent lengths".into()));
        }
        if self.scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Training("normalisation scales must be positive".into()));
        }
        if self.centroids.len() != BallType::ALL.len()
            || self
                .centroids
                .iter()
                .zip(BallType::ALL)
                .any(|(c, b)| c.label != b || c.centroid.len() != dim)
        {
            return Err(Error::Training(
                "model must hold exactly one centroid per stroke type in canonical order".into(),
            ));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, f: &[f64]) -> Vec<f64> {
        f.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: StrokeModel =
            serde_json::from_str(text).map_err(|e| Error::Training(format!("model JSON: {e}")))?;
        m.validate()?;
        Ok(m)
    }
}

pub fn train_centroids(labeled: &[(Vec<f64>, BallType)]) -> Result<StrokeModel> {
    let Some((first, _)) = labeled.first() else {
        return Err(Error::Training("no training examples".into()));
    };
    let dim = first.len();
    if dim == 0 || labeled.iter().any(|(f, _)| f.len() != dim) {
        return Err(Error::Training("training features must share a positive dimension".into()));
    }
    if labeled.iter().any(|(f, _)| f.iter().any(|v| !v.is_finite())) {
        return Err(Error::Training("training features must be finite".into()));
    }
    for b in BallType::ALL {
        if !labeled.iter().any(|(_, l)| *l == b) {
            return Err(Error::Training(format!("no training examples for class `{b}`")));
        }
    }
    let n = labeled.len() as f64;
    let mut mean = vec![0.0; dim];
    for (f, _) in labeled {
        for (m, v) in mean.iter_mut().zip(f) {
            *m += v / n;
        }
    }
    let mut scale = vec![0.0; dim];
    for (f, _) in labeled {
        for ((s, v), m) in scale.iter_mut().zip(f).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    for s in &mut scale {
        *s = if *s > 1e-24 { s.sqrt() } else { 1.0 };
    }
    let mut model = StrokeModel {
        mean,
        scale,
        centroids: Vec::with_capacity(7),
    };
    for b in BallType::ALL {
        let members: Vec<Vec<f64>> = labeled
            .iter()
            .filter(|(_, l)| *l == b)
            .map(|(f, _)| model.normalize(f))
            .collect();
        let count = members.len() as f64;
        let mut centroid = vec![0.0; dim];
        for m in &members {
            for (c, v) in centroid.iter_mut().zip(m) {
                *c += v / count;
            }
        }
        model.centroids.push(LabeledCentroid { label: b, centroid });
    }
    Ok(model)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Classification {
    pub label: BallType,
    pub confidence: f64,
    /// Softmin over centroid distances, canonical class order.
    pub confidences: [f64; 7],
}

/// Nearest centroid in normalised space; ties go to the earlier class.
pub fn classify_stroke(model: &StrokeModel, f: &[f64]) -> Result<Classification> {
    if f.len() != model.dim() {
        return Err(Error::Classification(format!(
            "feature has {} dimensions, model expects {}",
            f.len(),
            model.dim()
        )));
    }
    if f.iter().any(|v| !v.is_finite()) {
        return Err(Error::Classification("feature vector has non-finite entries".into()));
    }
    let z = model.normalize(f);
    let mut distances = [0.0; 7];
    for (d, c) in distances.iter_mut().zip(&model.centroids) {
        *d = z
            .iter()
            .zip(&c.centroid)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
    }
    let mut best = 0;
    for i in 1..7 {
        if distances[i] < distances[best] {
            best = i;
        }
    }
    let dmin = distances[best];
    let weights = distances.map(|d| (-(d - dmin)).exp());
    let total: f64 = weights.iter().sum();
    let confidences = weights.map(|w| w / total);
    Ok(Classification {
        label: BallType::ALL[best],
        confidence: confidences[best],
        confidences,
    })
}

/// One line of the classification log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifiedStroke {
    pub peak_t_ms: f64,
    pub label: BallType,
    pub confidence: f64,
}

impl ClassifiedStroke {
    pub const CSV_HEADER: &'static str = "peak_t_ms,label,confidence";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{}",
            self.peak_t_ms,
            self.label,
            format_significant(self.confidence, 9)
        )
    }
}

/// Pairs each window with the closest label time within `tolerance_ms` of
/// its peak. Unmatched windows are dropped.
pub fn match_labels(
    windows: &[StrokeWindow],
    labels: &[(f64, BallType)],
    tolerance_ms: f64,
) -> Vec<(usize, BallType)> {
    windows
        .iter()
        .enumerate()
        .filter_map(|(i, w)| {
            labels
                .iter()
                .filter(|(t, _)| (t - w.peak_time).abs() <= tolerance_ms)
                .min_by(|a, b| (a.0 - w.peak_time).abs().total_cmp(&(b.0 - w.peak_time).abs()))
                .map(|&(_, l)| (i, l))
        })
        .collect()
}
