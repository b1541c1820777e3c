//! Rally- and match-level tactical statistics.
//!
//! Matches are lists of annotated rallies. The histogram and series
//! functions here are pure folds over that data; their JSON payloads feed an
//! external plotting layer. Trajectory helpers derive hit times and speeds
//! from per-frame shuttlecock detections.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::court::{project_point, Homography};
use crate::decoder::BallDetection;
use crate::error::{Error, Result};
use crate::types::{PixelPoint, Player};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BallType {
    Cut,
    Drive,
    Lob,
    Long,
    Netplay,
    Rush,
    Smash,
}

impl BallType {
    /// Canonical order; every per-type vector in this crate uses it.
    pub const ALL: [BallType; 7] = [
        BallType::Cut,
        BallType::Drive,
        BallType::Lob,
        BallType::Long,
        BallType::Netplay,
        BallType::Rush,
        BallType::Smash,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BallType::Cut => "cut",
            BallType::Drive => "drive",
            BallType::Lob => "lob",
            BallType::Long => "long",
            BallType::Netplay => "netplay",
            BallType::Rush => "rush",
            BallType::Smash => "smash",
        }
    }

    pub fn labels() -> Vec<String> {
        Self::ALL.iter().map(|b| b.as_str().to_string()).collect()
    }
}

impl fmt::Display for BallType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BallType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|b| b.as_str() == lower)
            .ok_or_else(|| Error::Spec(format!("unknown ball type `{}`", s.trim())))
    }
}

pub const DEFAULT_LOSS_REASONS: [&str; 5] = ["net", "out", "opponent_winner", "body_touch", "fault"];

pub fn default_loss_reasons() -> Vec<String> {
    DEFAULT_LOSS_REASONS.iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stroke {
    pub hit_frame: u64,
    pub player: Player,
    pub ball_type: BallType,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rally {
    pub rally_id: u64,
    pub start_frame: u64,
    pub end_frame: u64,
    pub strokes: Vec<Stroke>,
    pub winner: Player,
    pub loss_reason: String,
}

impl Rally {
    /// Every invariant breach, described for humans.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.start_frame > self.end_frame {
            out.push(format!(
                "rally {} starts at frame {} after it ends at {}",
                self.rally_id, self.start_frame, self.end_frame
            ));
        }
        for s in &self.strokes {
            if s.hit_frame < self.start_frame || s.hit_frame > self.end_frame {
                out.push(format!(
                    "rally {}: stroke at frame {} lies outside [{}, {}]",
                    self.rally_id, s.hit_frame, self.start_frame, self.end_frame
                ));
            }
        }
        for pair in self.strokes.windows(2) {
            if pair[1].hit_frame <= pair[0].hit_frame {
                out.push(format!(
                    "rally {}: stroke frames {} and {} are not strictly increasing",
                    self.rally_id, pair[0].hit_frame, pair[1].hit_frame
                ));
            }
            if pair[1].player == pair[0].player {
                out.push(format!(
                    "rally {}: consecutive strokes at frames {} and {} by the same player",
                    self.rally_id, pair[0].hit_frame, pair[1].hit_frame
                ));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.violations().into_iter().next() {
            Some(v) => Err(Error::Spec(v)),
            None => Ok(()),
        }
    }

    pub fn loser(&self) -> Player {
        self.winner.opponent()
    }
}

/// One vertex of the stroke-count-per-rally series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RallyCount {
    pub rally_id: u64,
    pub count: usize,
    pub winner: Player,
}

/// Number of strokes in each rally, serve included.
pub fn stroke_count_per_rally(rallies: &[Rally]) -> Vec<RallyCount> {
    rallies
        .iter()
        .map(|r| RallyCount {
            rally_id: r.rally_id,
            count: r.strokes.len(),
            winner: r.winner,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BallTypeHistogram {
    pub counts: [u64; 7],
}

impl BallTypeHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn count(&self, b: BallType) -> u64 {
        self.counts[b.index()]
    }

    /// Shares per type, or `None` when there are no strokes.
    pub fn fractions(&self) -> Option<[f64; 7]> {
        let total = self.total();
        (total > 0).then(|| self.counts.map(|c| c as f64 / total as f64))
    }

    pub fn is_empty(&self) -> bool {
        self.total() == 0
    }
}

pub fn ball_type_distribution(rallies: &[Rally], player: Option<Player>) -> BallTypeHistogram {
    let mut h = BallTypeHistogram::default();
    for s in rallies.iter().flat_map(|r| &r.strokes) {
        if player.is_none_or(|p| p == s.player) {
            h.counts[s.ball_type.index()] += 1;
        }
    }
    h
}

/// Rallies lost per `(losing player, reason)`.
pub fn loss_reason_distribution(rallies: &[Rally]) -> BTreeMap<(Player, String), u64> {
    let mut out = BTreeMap::new();
    for r in rallies {
        *out.entry((r.loser(), r.loss_reason.clone())).or_insert(0) += 1;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RadarData {
    pub top: [u64; 7],
    pub bottom: [u64; 7],
}

impl RadarData {
    pub fn for_player(&self, p: Player) -> &[u64; 7] {
        match p {
            Player::Top => &self.top,
            Player::Bottom => &self.bottom,
        }
    }
}

/// Per-player ball type usage within one rally.
pub fn rally_radar_data(rally: &Rally) -> RadarData {
    let mut d = RadarData::default();
    for s in &rally.strokes {
        let bins = match s.player {
            Player::Top => &mut d.top,
            Player::Bottom => &mut d.bottom,
        };
        bins[s.ball_type.index()] += 1;
    }
    d
}

/// `{labels: [...], series: {player: [counts]}}`
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BarChart {
    pub labels: Vec<String>,
    pub series: BTreeMap<String, Vec<u64>>,
}

/// `{rally_id, axes: [7 ball types], top: [...], bottom: [...]}`
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RadarChart {
    pub rally_id: u64,
    pub axes: Vec<String>,
    pub top: Vec<u64>,
    pub bottom: Vec<u64>,
}

pub fn ball_type_chart(rallies: &[Rally]) -> BarChart {
    let series = Player::ALL
        .iter()
        .map(|&p| {
            (
                p.as_str().to_string(),
                ball_type_distribution(rallies, Some(p)).counts.to_vec(),
            )
        })
        .collect();
    BarChart {
        labels: BallType::labels(),
        series,
    }
}

/// Loss reasons per losing player. Labels follow `vocabulary`, with any
/// reason outside it appended in sorted order.
pub fn loss_reason_chart(rallies: &[Rally], vocabulary: &[String]) -> BarChart {
    let dist = loss_reason_distribution(rallies);
    let mut labels: Vec<String> = vocabulary.to_vec();
    let mut extra: Vec<String> = dist
        .keys()
        .map(|(_, r)| r.clone())
        .filter(|r| !vocabulary.contains(r))
        .collect();
    extra.sort();
    extra.dedup();
    labels.extend(extra);
    let series = Player::ALL
        .iter()
        .map(|&p| {
            let counts = labels
                .iter()
                .map(|l| dist.get(&(p, l.clone())).copied().unwrap_or(0))
                .collect();
            (p.as_str().to_string(), counts)
        })
        .collect();
    BarChart { labels, series }
}

pub fn radar_charts(rallies: &[Rally]) -> Vec<RadarChart> {
    rallies
        .iter()
        .map(|r| {
            let d = rally_radar_data(r);
            RadarChart {
                rally_id: r.rally_id,
                axes: BallType::labels(),
                top: d.top.to_vec(),
                bottom: d.bottom.to_vec(),
            }
        })
        .collect()
}

/// Per-frame shuttlecock detections at a known frame rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    fps: f64,
    samples: Vec<BallDetection>,
}

impl Trajectory {
    pub fn new(fps: f64, samples: Vec<BallDetection>) -> Result<Self> {
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::Spec(format!("frame rate must be positive, got {fps}")));
        }
        if let Some(w) = samples.windows(2).find(|w| w[1].frame <= w[0].frame) {
            return Err(Error::Spec(format!(
                "trajectory frames must be strictly increasing ({} then {})",
                w[0].frame, w[1].frame
            )));
        }
        Ok(Self { fps, samples })
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn samples(&self) -> &[BallDetection] {
        &self.samples
    }

    fn found(&self) -> Vec<(u64, PixelPoint)> {
        self.samples
            .iter()
            .filter_map(|d| d.position().map(|p| (d.frame, p)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HitParams {
    /// Centred moving-average length in frames (1 disables smoothing).
    pub smoothing_window: usize,
    pub angle_threshold_deg: f64,
    pub refractory_frames: u64,
    /// Longest run of missing frames bridged by interpolation.
    pub max_gap: u64,
}

impl Default for HitParams {
    fn default() -> Self {
        Self {
            smoothing_window: 3,
            angle_threshold_deg: 60.0,
            refractory_frames: 5,
            max_gap: 3,
        }
    }
}

// Splits found detections into runs whose holes are at most `max_gap`
// frames, filling the holes by linear interpolation.
fn dense_segments(found: &[(u64, PixelPoint)], max_gap: u64) -> Vec<Vec<(u64, PixelPoint)>> {
    let mut segments: Vec<Vec<(u64, PixelPoint)>> = Vec::new();
    for &(frame, p) in found {
        match segments.last_mut() {
            Some(seg) if frame - seg.last().unwrap().0 - 1 <= max_gap => {
                let (f0, p0) = *seg.last().unwrap();
                let span = (frame - f0) as f64;
                for f in f0 + 1..frame {
                    let t = (f - f0) as f64 / span;
                    seg.push((f, PixelPoint::new(p0.x + t * (p.x - p0.x), p0.y + t * (p.y - p0.y))));
                }
                seg.push((frame, p));
            }
            _ => segments.push(vec![(frame, p)]),
        }
    }
    segments
}

fn smooth(points: &[PixelPoint], window: usize) -> Vec<PixelPoint> {
    let half = window / 2;
    (0..points.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(points.len() - 1);
            let n = (hi - lo + 1) as f64;
            let (sx, sy) = points[lo..=hi].iter().fold((0.0, 0.0), |a, p| (a.0 + p.x, a.1 + p.y));
            PixelPoint::new(sx / n, sy / n)
        })
        .collect()
}

/// Frames where the smoothed shuttlecock velocity reverses its vertical
/// direction or turns by more than the angle threshold.
///
/// This is a heuristic baseline. Returns an empty list (and logs a warning)
/// when fewer than three detections are available.
pub fn detect_hit_times(traj: &Trajectory, params: &HitParams) -> Vec<u64> {
    let found = traj.found();
    if found.len() < 3 {
        log::warn!("hit detection needs at least 3 detections, got {}", found.len());
        return Vec::new();
    }
    let cos_limit = params.angle_threshold_deg.to_radians().cos();
    let mut candidates = Vec::new();
    for seg in dense_segments(&found, params.max_gap) {
        if seg.len() < 3 {
            continue;
        }
        let pts: Vec<PixelPoint> = seg.iter().map(|s| s.1).collect();
        let smoothed = smooth(&pts, params.smoothing_window.max(1));
        let vel: Vec<(f64, f64)> = smoothed
            .windows(2)
            .map(|w| (w[1].x - w[0].x, w[1].y - w[0].y))
            .collect();
        // vel[i] arrives at point i+1; vel[i+1] leaves it. A vertical
        // reversal is a sign change against the last non-flat velocity, so
        // a flat step at the apex still counts; the hit goes mid-plateau.
        let mut last_vy: Option<(usize, f64)> = None;
        for i in 0..vel.len() {
            let vy = vel[i].1;
            if vy.abs() > 1e-9 {
                if let Some((j, prev)) = last_vy {
                    if prev * vy < 0.0 {
                        candidates.push(seg[(j + 1 + i) / 2].0);
                    }
                }
                last_vy = Some((i, vy));
            }
            if i + 1 == vel.len() {
                break;
            }
            let (a, b) = (vel[i], vel[i + 1]);
            let (na, nb) = (a.0.hypot(a.1), b.0.hypot(b.1));
            if na >= 1e-9 && nb >= 1e-9 && (a.0 * b.0 + a.1 * b.1) / (na * nb) < cos_limit {
                candidates.push(seg[i + 1].0);
            }
        }
    }
    candidates.sort_unstable();
    let mut hits: Vec<u64> = Vec::new();
    for f in candidates {
        if hits.last().is_none_or(|&last| f >= last + params.refractory_frames.max(1)) {
            hits.push(f);
        }
    }
    hits
}

fn speeds_from(points: &[(u64, PixelPoint)], fps: f64, max_gap: u64) -> Vec<(u64, f64)> {
    let near = |a: u64, b: u64| b - a - 1 <= max_gap;
    let mut out = Vec::new();
    for i in 0..points.len() {
        let (f, p) = points[i];
        let prev = (i > 0 && near(points[i - 1].0, f)).then(|| points[i - 1]);
        let next = (i + 1 < points.len() && near(f, points[i + 1].0)).then(|| points[i + 1]);
        let (a, b) = match (prev, next) {
            (Some(a), Some(b)) => (a, b),
            (Some(a), None) => (a, (f, p)),
            (None, Some(b)) => ((f, p), b),
            (None, None) => continue,
        };
        let dist = (b.1.x - a.1.x).hypot(b.1.y - a.1.y);
        out.push((f, dist / (b.0 - a.0) as f64 * fps));
    }
    out
}

/// Speed in pixels per second at each detection: central differences where
/// both neighbours are close, one-sided at run ends, nothing across gaps of
/// more than three missing frames.
pub fn estimate_speed(traj: &Trajectory) -> Vec<(u64, f64)> {
    speeds_from(&traj.found(), traj.fps, HitParams::default().max_gap)
}

/// Speed in court units per second after projecting detections through `h`.
///
/// Approximate: the shuttlecock is rarely on the court plane the homography
/// was fitted to. Detections that fail to project are skipped.
pub fn estimate_court_speed(traj: &Trajectory, h: &Homography) -> Vec<(u64, f64)> {
    let projected: Vec<(u64, PixelPoint)> = traj
        .found()
        .into_iter()
        .filter_map(|(f, p)| project_point(h, p).ok().map(|c| (f, PixelPoint::new(c.x, c.y))))
        .collect();
    speeds_from(&projected, traj.fps, HitParams::default().max_gap)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stroke(hit_frame: u64, player: Player, ball_type: BallType) -> Stroke {
        Stroke { hit_frame, player, ball_type }
    }

    fn rally(id: u64, strokes: Vec<Stroke>, winner: Player, reason: &str) -> Rally {
        Rally {
            rally_id: id,
            start_frame: 0,
            end_frame: 1000,
            strokes,
            winner,
            loss_reason: reason.into(),
        }
    }

    fn alternating(n: usize, first: Player, types: &[BallType]) -> Vec<Stroke> {
        let mut p = first;
        (0..n)
            .map(|i| {
                let s = stroke(10 + 10 * i as u64, p, types[i % types.len()]);
                p = p.opponent();
                s
            })
            .collect()
    }

    #[test]
    fn ball_type_parsing() {
        assert_eq!("SMASH".parse::<BallType>().unwrap(), BallType::Smash);
        assert_eq!("NetPlay".parse::<BallType>().unwrap(), BallType::Netplay);
        assert!("clear".parse::<BallType>().is_err());
        assert_eq!(BallType::ALL.iter().map(|b| b.index()).collect::<Vec<_>>(), (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn rally_invariants() {
        let mut r = rally(1, alternating(3, Player::Top, &[BallType::Long]), Player::Top, "net");
        assert!(r.validate().is_ok());
        r.strokes[1].player = Player::Top;
        assert!(r.validate().is_err());
        let mut r2 = rally(2, alternating(2, Player::Top, &[BallType::Long]), Player::Top, "net");
        r2.strokes[1].hit_frame = 5;
        assert_eq!(r2.violations().len(), 1);
        r2.end_frame = 8;
        assert!(r2.violations().iter().any(|v| v.contains("outside")));
    }

    #[test]
    fn counts_per_rally() {
        assert!(stroke_count_per_rally(&[]).is_empty());
        let r = rally(4, alternating(7, Player::Bottom, &[BallType::Drive]), Player::Top, "out");
        assert_eq!(
            stroke_count_per_rally(&[r]),
            vec![RallyCount { rally_id: 4, count: 7, winner: Player::Top }]
        );
    }

    #[test]
    fn distributions() {
        let empty = ball_type_distribution(&[], None);
        assert!(empty.is_empty());
        assert_eq!(empty.fractions(), None);
        let smashes = rally(1, alternating(10, Player::Top, &[BallType::Smash]), Player::Top, "net");
        let h = ball_type_distribution(std::slice::from_ref(&smashes), None);
        assert_eq!(h.fractions().unwrap()[BallType::Smash.index()], 1.0);
        assert_eq!(ball_type_distribution(&[smashes], Some(Player::Bottom)).total(), 5);
    }

    #[test]
    fn loss_reasons() {
        assert!(loss_reason_distribution(&[]).is_empty());
        let rs: Vec<_> = (0..3).map(|i| rally(i, vec![], Player::Top, "net")).collect();
        let d = loss_reason_distribution(&rs);
        assert_eq!(d.len(), 1);
        assert_eq!(d[&(Player::Bottom, "net".to_string())], 3);
    }

    #[test]
    fn radar() {
        assert_eq!(rally_radar_data(&rally(1, vec![], Player::Top, "net")), RadarData::default());
        let r = rally(
            1,
            vec![
                stroke(1, Player::Top, BallType::Smash),
                stroke(2, Player::Bottom, BallType::Lob),
                stroke(3, Player::Top, BallType::Smash),
                stroke(4, Player::Bottom, BallType::Lob),
                stroke(5, Player::Top, BallType::Drive),
            ],
            Player::Top,
            "net",
        );
        let d = rally_radar_data(&r);
        assert_eq!(d.top, [0, 1, 0, 0, 0, 0, 2]);
        assert_eq!(d.bottom, [0, 0, 2, 0, 0, 0, 0]);
    }

    #[test]
    fn chart_payload_shapes() {
        let r = rally(3, alternating(2, Player::Top, &[BallType::Cut]), Player::Bottom, "net");
        let bar = ball_type_chart(std::slice::from_ref(&r));
        assert_eq!(
            serde_json::to_string(&bar).unwrap(),
            r#"{"labels":["cut","drive","lob","long","netplay","rush","smash"],"series":{"bottom":[1,0,0,0,0,0,0],"top":[1,0,0,0,0,0,0]}}"#
        );
        let loss = loss_reason_chart(std::slice::from_ref(&r), &default_loss_reasons());
        assert_eq!(loss.series["top"][0], 1);
        assert_eq!(loss.series["bottom"].iter().sum::<u64>(), 0);
        let radar = radar_charts(&[r]);
        assert_eq!(radar[0].rally_id, 3);
        assert_eq!(radar[0].axes.len(), 7);
    }

    fn traj(points: &[(u64, f64, f64)]) -> Trajectory {
        Trajectory::new(
            30.0,
            points
                .iter()
                .map(|&(f, x, y)| BallDetection::found(f, PixelPoint::new(x, y)))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn straight_line_has_no_hits() {
        let t = traj(&(0..50).map(|f| (f, 3.0 * f as f64, 100.0 + 2.0 * f as f64)).collect::<Vec<_>>());
        assert!(detect_hit_times(&t, &HitParams::default()).is_empty());
    }

    #[test]
    fn single_reversal() {
        let pts: Vec<_> = (0..40)
            .map(|f| {
                let y = if f <= 20 { 10.0 * f as f64 } else { 200.0 - 10.0 * (f - 20) as f64 };
                (f, 300.0, y)
            })
            .collect();
        assert_eq!(detect_hit_times(&traj(&pts), &HitParams::default()), vec![20]);
    }

    #[test]
    fn too_few_detections() {
        let t = traj(&[(0, 0.0, 0.0), (1, 1.0, 1.0)]);
        assert!(detect_hit_times(&t, &HitParams::default()).is_empty());
    }

    #[test]
    fn trajectory_validation() {
        let d = |f| BallDetection::absent(f);
        assert!(Trajectory::new(30.0, vec![d(2), d(2)]).is_err());
        assert!(Trajectory::new(0.0, vec![]).is_err());
    }

    #[test]
    fn speeds() {
        let static_ball = traj(&(0..5).map(|f| (f, 5.0, 5.0)).collect::<Vec<_>>());
        assert!(estimate_speed(&static_ball).iter().all(|&(_, s)| s == 0.0));
        let moving = traj(&(0..5).map(|f| (f, 10.0 * f as f64, 0.0)).collect::<Vec<_>>());
        let s = estimate_speed(&moving);
        assert_eq!(s.len(), 5);
        assert!(s.iter().all(|&(_, v)| (v - 300.0).abs() < 1e-9));
        // A five-frame hole splits the run; isolated points give no sample.
        let split = traj(&[(0, 0.0, 0.0), (10, 5.0, 0.0), (20, 9.0, 0.0)]);
        assert!(estimate_speed(&split).is_empty());
    }

    #[test]
    fn court_speed_scales_with_homography() {
        let moving = traj(&(0..5).map(|f| (f, 10.0 * f as f64, 0.0)).collect::<Vec<_>>());
        let h = Homography::from_row_major(&[0.01, 0.0, 0.0, 0.0, 0.01, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let s = estimate_court_speed(&moving, &h);
        assert!(s.iter().all(|&(_, v)| (v - 3.0).abs() < 1e-9));
    }
}
