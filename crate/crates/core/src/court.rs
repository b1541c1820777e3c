//! Image-to-court registration and player box filtering.
//!
//! Court coordinates are metres with the origin at the near-left doubles
//! corner, `x` running across the court width and `y` running along its
//! length towards the far baseline.

use nalgebra::{DMatrix, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{format_coord, PixelPoint, Player};

/// Singles sidelines sit this far inside the doubles sidelines.
pub const SINGLES_SIDELINE_INSET: f64 = 0.46;
/// Short service line distance from the net.
pub const SHORT_SERVICE_FROM_NET: f64 = 1.98;
/// Doubles long service line distance from the baseline.
pub const DOUBLES_LONG_SERVICE_FROM_BASELINE: f64 = 0.76;

/// Smallest-to-second-smallest singular value ratio above which the
/// least-squares solution is reported as poorly separated.
const CONDITIONING_WARN_RATIO: f64 = 0.5;
/// Second-smallest singular value (relative to the largest) below which the
/// null space is not one-dimensional and the configuration is degenerate.
const DEGENERATE_RATIO: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CourtBoundary {
    #[default]
    Doubles,
    Singles,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CourtModel {
    pub length: f64,
    pub width: f64,
    pub margin: f64,
    pub boundary: CourtBoundary,
}

impl Default for CourtModel {
    fn default() -> Self {
        Self {
            length: 13.40,
            width: 6.10,
            margin: 0.0,
            boundary: CourtBoundary::Doubles,
        }
    }
}

impl CourtModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.length > 0.0 && self.width > 0.0 && self.length.is_finite() && self.width.is_finite()) {
            return Err(Error::Spec(format!(
                "court dimensions must be positive, got {} x {}",
                self.width, self.length
            )));
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(Error::Spec(format!("court margin must be non-negative, got {}", self.margin)));
        }
        if self.boundary == CourtBoundary::Singles && self.width <= 2.0 * SINGLES_SIDELINE_INSET {
            return Err(Error::Spec("court too narrow for singles sidelines".into()));
        }
        Ok(())
    }

    /// Accepted region `[x_min, x_max] × [y_min, y_max]`, margin included.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        let inset = match self.boundary {
            CourtBoundary::Doubles => 0.0,
            CourtBoundary::Singles => SINGLES_SIDELINE_INSET,
        };
        (
            inset - self.margin,
            self.width - inset + self.margin,
            -self.margin,
            self.length + self.margin,
        )
    }

    pub fn contains(&self, p: CourtPoint) -> bool {
        let (x0, x1, y0, y1) = self.bounds();
        p.x >= x0 && p.x <= x1 && p.y >= y0 && p.y <= y1
    }

    /// Which half a court point is on: the near half belongs to the player
    /// drawn at the bottom of the broadcast frame.
    pub fn side_of(&self, p: CourtPoint) -> Player {
        if p.y < self.length / 2.0 {
            Player::Bottom
        } else {
            Player::Top
        }
    }

    /// Named line intersections usable as calibration landmarks.
    pub fn landmarks(&self) -> Vec<(&'static str, CourtPoint)> {
        let (w, l) = (self.width, self.length);
        let net = l / 2.0;
        let (sl, sr) = (SINGLES_SIDELINE_INSET, w - SINGLES_SIDELINE_INSET);
        let near_short = net - SHORT_SERVICE_FROM_NET;
        let far_short = net + SHORT_SERVICE_FROM_NET;
        let near_long = DOUBLES_LONG_SERVICE_FROM_BASELINE;
        let far_long = l - DOUBLES_LONG_SERVICE_FROM_BASELINE;
        let p = CourtPoint::new;
        vec![
            ("near_left_corner", p(0.0, 0.0)),
            ("near_right_corner", p(w, 0.0)),
            ("far_left_corner", p(0.0, l)),
            ("far_right_corner", p(w, l)),
            ("near_left_singles_corner", p(sl, 0.0)),
            ("near_right_singles_corner", p(sr, 0.0)),
            ("far_left_singles_corner", p(sl, l)),
            ("far_right_singles_corner", p(sr, l)),
            ("net_left", p(0.0, net)),
            ("net_right", p(w, net)),
            ("near_short_service_left", p(0.0, near_short)),
            ("near_short_service_right", p(w, near_short)),
            ("far_short_service_left", p(0.0, far_short)),
            ("far_short_service_right", p(w, far_short)),
            ("near_short_service_center", p(w / 2.0, near_short)),
            ("far_short_service_center", p(w / 2.0, far_short)),
            ("near_long_service_left", p(0.0, near_long)),
            ("near_long_service_right", p(w, near_long)),
            ("far_long_service_left", p(0.0, far_long)),
            ("far_long_service_right", p(w, far_long)),
            ("near_center_baseline", p(w / 2.0, 0.0)),
            ("far_center_baseline", p(w / 2.0, l)),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CourtPoint {
    pub x: f64,
    pub y: f64,
}

impl CourtPoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub score: f64,
    pub source_frame: u64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        Self::with_meta(x, y, w, h, 1.0, 0)
    }

    pub fn with_meta(x: f64, y: f64, w: f64, h: f64, score: f64, source_frame: u64) -> Result<Self> {
        let b = Self { x, y, w, h, score, source_frame };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if ![self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite()) {
            return Err(Error::Spec("bounding box coordinates must be finite".into()));
        }
        if !(self.w > 0.0 && self.h > 0.0) {
            return Err(Error::Spec(format!(
                "bounding box needs positive size, got {} x {}",
                self.w, self.h
            )));
        }
        if !(0.0..=1.0).contains(&self.score) {
            return Err(Error::Spec(format!("box score {} outside [0, 1]", self.score)));
        }
        Ok(())
    }

    pub fn center(&self) -> PixelPoint {
        PixelPoint::new(self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }
}

/// Midpoint of the box's lower edge: where the player stands on the court.
pub fn ground_point(b: &BoundingBox) -> PixelPoint {
    PixelPoint::new(b.x + b.w / 2.0, b.y + b.h)
}

/// Scales a box about its centre by `factor` and clips it to the frame.
pub fn enlarge_box(b: &BoundingBox, factor: f64, frame_width: f64, frame_height: f64) -> Result<BoundingBox> {
    if !(factor.is_finite() && factor >= 1.0) {
        return Err(Error::Spec(format!("enlargement factor must be >= 1, got {factor}")));
    }
    let c = b.center();
    let (hw, hh) = (b.w * factor / 2.0, b.h * factor / 2.0);
    let x0 = (c.x - hw).max(0.0);
    let y0 = (c.y - hh).max(0.0);
    let x1 = (c.x + hw).min(frame_width);
    let y1 = (c.y + hh).min(frame_height);
    if x1 <= x0 || y1 <= y0 {
        return Err(Error::Spec("box lies outside the frame".into()));
    }
    Ok(BoundingBox {
        x: x0,
        y: y0,
        w: x1 - x0,
        h: y1 - y0,
        ..*b
    })
}

/// A pixel ↔ court point pair used for calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub px: [f64; 2],
    pub court: [f64; 2],
}

impl Correspondence {
    pub fn new(pixel: PixelPoint, court: CourtPoint) -> Self {
        Self {
            px: [pixel.x, pixel.y],
            court: [court.x, court.y],
        }
    }
}

/// `{"points": [{"px": [u, v], "court": [x, y]}, ...]}`
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CalibrationFile {
    pub points: Vec<Correspondence>,
}

/// Projective map from image pixels to court metres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    matrix: Matrix3<f64>,
}

impl Homography {
    /// Normalises so the bottom-right entry is 1 (or to unit Frobenius norm
    /// when that entry vanishes) and rejects degenerate maps.
    pub fn from_matrix(matrix: Matrix3<f64>) -> Result<Self> {
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::Estimation("homography has non-finite entries".into()));
        }
        let norm = matrix.norm();
        if norm == 0.0 {
            return Err(Error::Estimation("homography is the zero matrix".into()));
        }
        let matrix = if matrix[(2, 2)].abs() > 1e-12 * norm {
            matrix / matrix[(2, 2)]
        } else {
            matrix / norm
        };
        let scale = matrix.norm();
        let upper = matrix[(0, 0)] * matrix[(1, 1)] - matrix[(0, 1)] * matrix[(1, 0)];
        if upper.abs() <= 1e-12 * scale * scale {
            return Err(Error::Estimation("homography has a singular linear part".into()));
        }
        if matrix.determinant().abs() <= 1e-12 * scale.powi(3) {
            return Err(Error::Estimation("homography is singular".into()));
        }
        Ok(Self { matrix })
    }

    pub fn identity() -> Self {
        Self { matrix: Matrix3::identity() }
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.matrix
    }

    /// Row-major entries, as exported to JSON.
    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.matrix;
        [
            m[(0, 0)], m[(0, 1)], m[(0, 2)],
            m[(1, 0)], m[(1, 1)], m[(1, 2)],
            m[(2, 0)], m[(2, 1)], m[(2, 2)],
        ]
    }

    pub fn from_row_major(values: &[f64]) -> Result<Self> {
        if values.len() != 9 {
            return Err(Error::Spec(format!("homography needs 9 numbers, got {}", values.len())));
        }
        Self::from_matrix(Matrix3::from_row_slice(values))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_row_major()).expect("array of floats serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let values: Vec<f64> = serde_json::from_str(text)
            .map_err(|e| Error::Spec(format!("homography JSON: {e}")))?;
        Self::from_row_major(&values)
    }
}

/// Perspective division of `H·(x, y, 1)`.
pub fn project_point(h: &Homography, p: PixelPoint) -> Result<CourtPoint> {
    let v = h.matrix * Vector3::new(p.x, p.y, 1.0);
    let scale = v.x.abs().max(v.y.abs()).max(1.0);
    if v.z.abs() <= 1e-12 * scale {
        return Err(Error::Projection(format!(
            "pixel ({}, {}) maps to the line at infinity",
            p.x, p.y
        )));
    }
    let out = CourtPoint::new(v.x / v.z, v.y / v.z);
    if !(out.x.is_finite() && out.y.is_finite()) {
        return Err(Error::Projection(format!("pixel ({}, {}) projects to a non-finite point", p.x, p.y)));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HomographyFit {
    pub homography: Homography,
    /// Smallest over second-smallest singular value of the normalised system.
    pub singular_ratio: f64,
    /// Root-mean-square court-space reprojection error over the inputs.
    pub rms_error: f64,
    pub warning: Option<String>,
}

// Translate to the centroid and scale so the mean distance is √2.
fn hartley(points: &[[f64; 2]]) -> Result<(Vec<[f64; 2]>, Matrix3<f64>)> {
    let n = points.len() as f64;
    let cx = points.iter().map(|p| p[0]).sum::<f64>() / n;
    let cy = points.iter().map(|p| p[1]).sum::<f64>() / n;
    let mean = points.iter().map(|p| (p[0] - cx).hypot(p[1] - cy)).sum::<f64>() / n;
    if !(mean > 0.0 && mean.is_finite()) {
        return Err(Error::Estimation("all points coincide".into()));
    }
    let s = std::f64::consts::SQRT_2 / mean;
    let t = Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0);
    let normed = points.iter().map(|p| [s * (p[0] - cx), s * (p[1] - cy)]).collect();
    Ok((normed, t))
}

fn collinear(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> bool {
    let cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
    let scale = ((b[0] - a[0]).hypot(b[1] - a[1])) * ((c[0] - a[0]).hypot(c[1] - a[1]));
    cross.abs() <= 1e-9 * scale.max(f64::MIN_POSITIVE)
}

/// Normalised direct linear transform over `N ≥ 4` correspondences.
pub fn estimate_homography(correspondences: &[Correspondence]) -> Result<HomographyFit> {
    let n = correspondences.len();
    if n < 4 {
        return Err(Error::Estimation(format!("need at least 4 correspondences, got {n}")));
    }
    if correspondences
        .iter()
        .any(|c| c.px.iter().chain(&c.court).any(|v| !v.is_finite()))
    {
        return Err(Error::Estimation("correspondences must be finite".into()));
    }
    let src: Vec<[f64; 2]> = correspondences.iter().map(|c| c.px).collect();
    let dst: Vec<[f64; 2]> = correspondences.iter().map(|c| c.court).collect();
    if n == 4 {
        for pts in [&src, &dst] {
            for (i, j, k) in [(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)] {
                if collinear(pts[i], pts[j], pts[k]) {
                    return Err(Error::Estimation(format!(
                        "points {i}, {j} and {k} are collinear"
                    )));
                }
            }
        }
    }
    let (src_n, t_src) = hartley(&src)?;
    let (dst_n, t_dst) = hartley(&dst)?;

    // Zero rows pad the system to at least 9×9 so the SVD exposes the full
    // right null space.
    let rows = (2 * n).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, (s, d)) in src_n.iter().zip(&dst_n).enumerate() {
        let (x, y) = (s[0], s[1]);
        let (u, v) = (d[0], d[1]);
        let r = 2 * i;
        a.row_mut(r).copy_from_slice(&[-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u]);
        a.row_mut(r + 1).copy_from_slice(&[0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v]);
    }
    let svd = a.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Estimation("SVD did not converge".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    let smallest = svd.singular_values[order[0]];
    let second = svd.singular_values[order[1]];
    let largest = svd.singular_values[order[order.len() - 1]];
    if second <= DEGENERATE_RATIO * largest {
        return Err(Error::Estimation(
            "degenerate configuration: solution is not unique".into(),
        ));
    }
    let h = v_t.row(order[0]);
    let h_norm = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let t_dst_inv = t_dst
        .try_inverse()
        .ok_or_else(|| Error::Estimation("court normalisation is singular".into()))?;
    let homography = Homography::from_matrix(t_dst_inv * h_norm * t_src)?;

    let singular_ratio = smallest / second;
    let warning = (n > 4 && singular_ratio > CONDITIONING_WARN_RATIO).then(|| {
        format!("weak singular value gap (ratio {singular_ratio:.3}); homography is poorly determined")
    });
    if let Some(w) = &warning {
        log::warn!("{w}");
    }
    let mut sq = 0.0;
    for c in correspondences {
        let p = project_point(&homography, PixelPoint::new(c.px[0], c.px[1]))?;
        sq += (p.x - c.court[0]).powi(2) + (p.y - c.court[1]).powi(2);
    }
    Ok(HomographyFit {
        homography,
        singular_ratio,
        rms_error: (sq / n as f64).sqrt(),
        warning,
    })
}

/// A box that survived court filtering, with its grounded court position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlacedBox {
    pub bbox: BoundingBox,
    pub court: CourtPoint,
}

/// Keeps boxes whose ground point projects inside the court (plus margin).
/// Boxes that cannot be projected are dropped with a warning.
pub fn filter_players(boxes: &[BoundingBox], h: &Homography, court: &CourtModel) -> Vec<PlacedBox> {
    boxes
        .iter()
        .filter_map(|b| match project_point(h, ground_point(b)) {
            Ok(p) => court.contains(p).then_some(PlacedBox { bbox: *b, court: p }),
            Err(e) => {
                log::warn!("dropping box in frame {}: {e}", b.source_frame);
                None
            }
        })
        .collect()
}

/// One row of the filtered-players CSV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlayerRow {
    pub frame: u64,
    pub player_slot: Player,
    pub placed: PlacedBox,
}

impl PlayerRow {
    pub const CSV_HEADER: &'static str = "frame,player_slot,x,y,w,h,court_x,court_y";

    pub fn csv_row(&self) -> String {
        let b = &self.placed.bbox;
        format!(
            "{},{},{},{},{},{},{},{}",
            self.frame,
            self.player_slot,
            format_coord(b.x),
            format_coord(b.y),
            format_coord(b.w),
            format_coord(b.h),
            format_coord(self.placed.court.x),
            format_coord(self.placed.court.y)
        )
    }
}
