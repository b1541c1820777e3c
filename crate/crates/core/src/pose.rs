//! Player skeletons and clustering-based quality assurance.
//!
//! Skeletons from an off-the-shelf pose estimator are normalised into their
//! player box, clustered with seeded k-means and the ones far from their
//! centroid are listed for manual relabelling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::court::BoundingBox;
use crate::error::{Error, Result};
use crate::types::{PixelPoint, Player};

/// Default keypoint order of the 15-point skeleton.
pub const DEFAULT_KEYPOINT_NAMES: [&str; 15] = [
    "head_top",
    "upper_neck",
    "thorax",
    "r_shoulder",
    "r_elbow",
    "r_wrist",
    "l_shoulder",
    "l_elbow",
    "l_wrist",
    "pelvis",
    "r_hip",
    "r_knee",
    "r_ankle",
    "l_hip",
    "l_knee",
];

pub fn default_keypoint_names() -> Vec<String> {
    DEFAULT_KEYPOINT_NAMES.iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub visible: bool,
}

impl Keypoint {
    pub fn visible(x: f64, y: f64) -> Self {
        Self { x, y, visible: true }
    }

    pub fn hidden() -> Self {
        Self { x: 0.0, y: 0.0, visible: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    pub frame: u64,
    pub player_slot: Player,
    pub keypoints: Vec<Keypoint>,
    /// Racket neck/face joint, when labelled. Not used for clustering.
    pub racket: Option<PixelPoint>,
}

impl Skeleton {
    pub fn validate(&self, expected_keypoints: usize) -> Result<()> {
        if self.keypoints.len() != expected_keypoints {
            return Err(Error::Spec(format!(
                "skeleton at frame {} has {} keypoints, expected {expected_keypoints}",
                self.frame,
                self.keypoints.len()
            )));
        }
        if self
            .keypoints
            .iter()
            .any(|k| k.visible && !(k.x.is_finite() && k.y.is_finite()))
        {
            return Err(Error::Spec(format!(
                "skeleton at frame {} has a visible keypoint with non-finite coordinates",
                self.frame
            )));
        }
        if self.racket.is_some_and(|r| !r.is_finite()) {
            return Err(Error::Spec(format!("skeleton at frame {} has a non-finite racket point", self.frame)));
        }
        Ok(())
    }

    /// Tight box around the visible keypoints, if it has positive area.
    pub fn keypoint_extent(&self) -> Option<BoundingBox> {
        let vis: Vec<_> = self.keypoints.iter().filter(|k| k.visible).collect();
        let x0 = vis.iter().map(|k| k.x).fold(f64::INFINITY, f64::min);
        let x1 = vis.iter().map(|k| k.x).fold(f64::NEG_INFINITY, f64::max);
        let y0 = vis.iter().map(|k| k.y).fold(f64::INFINITY, f64::min);
        let y1 = vis.iter().map(|k| k.y).fold(f64::NEG_INFINITY, f64::max);
        BoundingBox::with_meta(x0, y0, x1 - x0, y1 - y0, 1.0, self.frame).ok()
    }
}

/// Box-normalised keypoint coordinates, `None` where the keypoint is hidden.
pub fn normalize_keypoints(s: &Skeleton, b: &BoundingBox) -> Result<Vec<Option<[f64; 2]>>> {
    if !(b.w > 0.0 && b.h > 0.0) {
        return Err(Error::Feature(format!("frame {}: box has no area", s.frame)));
    }
    if s.keypoints.iter().all(|k| !k.visible) {
        return Err(Error::Feature(format!(
            "frame {} ({}): every keypoint is invisible",
            s.frame, s.player_slot
        )));
    }
    Ok(s.keypoints
        .iter()
        .map(|k| k.visible.then(|| [(k.x - b.x) / b.w, (k.y - b.y) / b.h]))
        .collect())
}

/// Dataset-wide mean normalised position of each keypoint, used to fill in
/// hidden keypoints. A keypoint never observed falls back to the box centre.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointMeans(pub Vec<[f64; 2]>);

impl KeypointMeans {
    pub fn from_partials(partials: &[Vec<Option<[f64; 2]>>], keypoints: usize) -> Self {
        let mut sums = vec![[0.0, 0.0]; keypoints];
        let mut counts = vec![0usize; keypoints];
        for p in partials {
            for (i, kp) in p.iter().enumerate().take(keypoints) {
                if let Some([x, y]) = kp {
                    sums[i][0] += x;
                    sums[i][1] += y;
                    counts[i] += 1;
                }
            }
        }
        KeypointMeans(
            sums.iter()
                .zip(&counts)
                .map(|(s, &c)| if c == 0 { [0.5, 0.5] } else { [s[0] / c as f64, s[1] / c as f64] })
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonFeature {
    pub frame: u64,
    pub player_slot: Player,
    /// Interleaved `x0, y0, x1, y1, ...`.
    pub values: Vec<f64>,
}

pub fn normalize_skeleton(s: &Skeleton, b: &BoundingBox, means: &KeypointMeans) -> Result<SkeletonFeature> {
    let partial = normalize_keypoints(s, b)?;
    if means.0.len() != partial.len() {
        return Err(Error::Feature(format!(
            "imputation table has {} keypoints, skeleton has {}",
            means.0.len(),
            partial.len()
        )));
    }
    Ok(assemble(s, &partial, means))
}

fn assemble(s: &Skeleton, partial: &[Option<[f64; 2]>], means: &KeypointMeans) -> SkeletonFeature {
    let values = partial
        .iter()
        .zip(&means.0)
        .flat_map(|(kp, mean)| kp.unwrap_or(*mean))
        .collect();
    SkeletonFeature {
        frame: s.frame,
        player_slot: s.player_slot,
        values,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub features: Vec<SkeletonFeature>,
    pub means: KeypointMeans,
    /// Skeletons that could not be featurised, with the reason.
    pub rejected: Vec<(u64, Player, String)>,
}

/// Normalises a batch of skeletons, imputing hidden keypoints with the
/// batch mean.
pub fn build_features(items: &[(Skeleton, BoundingBox)]) -> FeatureSet {
    let keypoints = items.first().map_or(0, |(s, _)| s.keypoints.len());
    let mut partials = Vec::with_capacity(items.len());
    let mut kept = Vec::with_capacity(items.len());
    let mut rejected = Vec::new();
    for (s, b) in items {
        match normalize_keypoints(s, b) {
            Ok(p) if p.len() == keypoints => {
                partials.push(p);
                kept.push(s);
            }
            Ok(p) => rejected.push((
                s.frame,
                s.player_slot,
                format!("has {} keypoints, expected {keypoints}", p.len()),
            )),
            Err(e) => rejected.push((s.frame, s.player_slot, e.to_string())),
        }
    }
    let means = KeypointMeans::from_partials(&partials, keypoints);
    let features = kept
        .iter()
        .zip(&partials)
        .map(|(s, p)| assemble(s, p, &means))
        .collect();
    FeatureSet {
        features,
        means,
        rejected,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterParams {
    pub k: usize,
    pub outlier_percentile: f64,
    pub seed: u64,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self {
            k: 8,
            outlier_percentile: 0.95,
            seed: 0,
            max_iterations: 300,
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterReport {
    pub keys: Vec<(u64, Player)>,
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub distances: Vec<f64>,
    pub outliers: Vec<bool>,
    pub threshold: f64,
    /// Sum of squared distances after each assignment step.
    pub objective_history: Vec<f64>,
    pub iterations: usize,
}

impl ClusterReport {
    pub fn outlier_count(&self) -> usize {
        self.outliers.iter().filter(|&&o| o).count()
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = squared_distance(point, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn kmeans_plus_plus(points: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = vec![points[rng.gen_range(0..n)].to_vec()];
    let mut d2: Vec<f64> = points.iter().map(|p| squared_distance(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            // Guard against landing on a zero-weight tail through rounding.
            if d2[chosen] == 0.0 {
                chosen = d2.iter().rposition(|&w| w > 0.0).unwrap_or(chosen);
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        let c = points[pick].to_vec();
        for (slot, p) in d2.iter_mut().zip(points) {
            *slot = slot.min(squared_distance(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Linear-interpolation quantile of an unsorted sample.
pub fn quantile(values: &[f64], p: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Seeded k-means++ followed by Lloyd iterations; skeletons farther from
/// their centroid than the `outlier_percentile` quantile are outliers.
pub fn cluster_skeletons(features: &[SkeletonFeature], params: &ClusterParams) -> Result<ClusterReport> {
    let n = features.len();
    if params.k == 0 {
        return Err(Error::Clustering("k must be at least 1".into()));
    }
    if params.k > n {
        return Err(Error::Clustering(format!(
            "k = {} exceeds the number of skeletons ({n})",
            params.k
        )));
    }
    if !(0.0..=1.0).contains(&params.outlier_percentile) {
        return Err(Error::Clustering(format!(
            "outlier percentile {} outside [0, 1]",
            params.outlier_percentile
        )));
    }
    let dim = features[0].values.len();
    if features.iter().any(|f| f.values.len() != dim) {
        return Err(Error::Clustering("features have differing dimensions".into()));
    }
    if features.iter().any(|f| f.values.iter().any(|v| !v.is_finite())) {
        return Err(Error::Clustering("features must be finite".into()));
    }
    let points: Vec<&[f64]> = features.iter().map(|f| f.values.as_slice()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut centroids = kmeans_plus_plus(&points, params.k, &mut rng);

    let mut assignments = vec![0usize; n];
    let mut objective_history = Vec::new();
    let mut iterations = 0;
    loop {
        let mut objective = 0.0;
        for (a, p) in assignments.iter_mut().zip(&points) {
            let (i, d) = nearest(p, &centroids);
            *a = i;
            objective += d;
        }
        objective_history.push(objective);
        if iterations == params.max_iterations {
            break;
        }
        iterations += 1;

        // Running means keep a cluster of identical points exactly on them.
        let mut means = vec![vec![0.0; dim]; params.k];
        let mut counts = vec![0usize; params.k];
        for (&a, p) in assignments.iter().zip(&points) {
            counts[a] += 1;
            let c = counts[a] as f64;
            for (m, v) in means[a].iter_mut().zip(p.iter()) {
                *m += (v - *m) / c;
            }
        }
        let mut shift: f64 = 0.0;
        for ((c, next), &count) in centroids.iter_mut().zip(means).zip(&counts) {
            // An empty cluster keeps its previous centroid.
            if count == 0 {
                continue;
            }
            shift = shift.max(squared_distance(c, &next).sqrt());
            *c = next;
        }
        if shift < params.tolerance {
            // Final assignment against the converged centroids.
            let mut objective = 0.0;
            for (a, p) in assignments.iter_mut().zip(&points) {
                let (i, d) = nearest(p, &centroids);
                *a = i;
                objective += d;
            }
            objective_history.push(objective);
            break;
        }
    }

    let distances: Vec<f64> = points
        .iter()
        .zip(&assignments)
        .map(|(p, &a)| squared_distance(p, &centroids[a]).sqrt())
        .collect();
    let threshold = quantile(&distances, params.outlier_percentile);
    let outliers = distances.iter().map(|&d| d > threshold).collect();
    Ok(ClusterReport {
        keys: features.iter().map(|f| (f.frame, f.player_slot)).collect(),
        assignments,
        centroids,
        distances,
        outliers,
        threshold,
        objective_history,
        iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OutlierEntry {
    pub frame: u64,
    pub player_slot: Player,
    pub distance: f64,
}

impl OutlierEntry {
    pub const CSV_HEADER: &'static str = "frame,player_slot,distance";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{}",
            self.frame,
            self.player_slot,
            crate::types::format_significant(self.distance, 9)
        )
    }
}

/// The manual relabelling worklist: outliers, farthest first.
pub fn outlier_report(report: &ClusterReport) -> Vec<OutlierEntry> {
    let mut out: Vec<OutlierEntry> = report
        .keys
        .iter()
        .zip(&report.distances)
        .zip(&report.outliers)
        .filter(|(_, &o)| o)
        .map(|((&(frame, player_slot), &distance), _)| OutlierEntry {
            frame,
            player_slot,
            distance,
        })
        .collect();
    out.sort_by(|a, b| {
        b.distance
            .total_cmp(&a.distance)
            .then(a.frame.cmp(&b.frame))
            .then(a.player_slot.cmp(&b.player_slot))
    });
    out
}
