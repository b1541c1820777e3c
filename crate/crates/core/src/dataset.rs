//! On-disk label schemas for a match directory and their loader/saver.
//!
//! A match directory holds:
//!
//! | file              | content                                              |
//! |-------------------|------------------------------------------------------|
//! | `meta.json`       | schema version, resolutions, fps, vocabularies       |
//! | `ball.csv`        | `frame,visible,x,y`                                  |
//! | `boxes.csv`       | `frame,player_slot,x,y,w,h,score`                    |
//! | `skeletons.jsonl` | one skeleton per line                                |
//! | `rallies.csv`     | `rally_id,start_frame,end_frame,winner,loss_reason`  |
//! | `strokes.csv`     | `rally_id,hit_frame,player,ball_type`                |
//! | `calibration.json`| `{"points": [{"px": [u,v], "court": [x,y]}, ...]}`   |
//!
//! Only `meta.json` is required. Pixel coordinates are stored at the original
//! video resolution; the `working_*` accessors rescale each axis to the
//! working grid.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::court::{BoundingBox, CalibrationFile, Correspondence};
use crate::decoder::BallDetection;
use crate::error::{Error, Result};
use crate::pose::{default_keypoint_names, Keypoint, Skeleton};
use crate::rally::{default_loss_reasons, BallType, Rally, Stroke};
use crate::types::{PixelPoint, Player};

pub const SCHEMA_VERSION: u32 = 1;

pub const META_FILE: &str = "meta.json";
pub const BALL_FILE: &str = "ball.csv";
pub const BOXES_FILE: &str = "boxes.csv";
pub const SKELETONS_FILE: &str = "skeletons.jsonl";
pub const RALLIES_FILE: &str = "rallies.csv";
pub const STROKES_FILE: &str = "strokes.csv";
pub const CALIBRATION_FILE: &str = "calibration.json";

const BALL_HEADER: [&str; 4] = ["frame", "visible", "x", "y"];
const BOXES_HEADER: [&str; 7] = ["frame", "player_slot", "x", "y", "w", "h", "score"];
const RALLIES_HEADER: [&str; 5] = ["rally_id", "start_frame", "end_frame", "winner", "loss_reason"];
const STROKES_HEADER: [&str; 4] = ["rally_id", "hit_frame", "player", "ball_type"];

/// One schema problem, located as precisely as the file format allows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub file: String,
    pub line: Option<usize>,
    pub column: Option<String>,
    pub message: String,
}

impl Violation {
    fn new(file: &str, line: Option<usize>, column: Option<&str>, message: impl Into<String>) -> Self {
        Self {
            file: file.to_string(),
            line,
            column: column.map(str::to_string),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.file)?;
        if let Some(line) = self.line {
            write!(f, ":{line}")?;
        }
        if let Some(col) = &self.column {
            write!(f, " [{col}]")?;
        }
        write!(f, ": {}", self.message)
    }
}

fn default_working_resolution() -> [u32; 2] {
    [640, 480]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoMeta {
    pub schema_version: u32,
    pub original_resolution: [u32; 2],
    #[serde(default = "default_working_resolution")]
    pub working_resolution: [u32; 2],
    pub fps: f64,
    #[serde(default = "default_loss_reasons")]
    pub loss_reasons: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keypoint_names: Option<Vec<String>>,
}

impl VideoMeta {
    pub fn new(original: [u32; 2], fps: f64) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            original_resolution: original,
            working_resolution: default_working_resolution(),
            fps,
            loss_reasons: default_loss_reasons(),
            keypoint_names: None,
        }
    }

    pub fn keypoint_names(&self) -> Vec<String> {
        self.keypoint_names.clone().unwrap_or_else(default_keypoint_names)
    }

    fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut bad = |field: &str, msg: String| out.push(Violation::new(META_FILE, None, Some(field), msg));
        if self.schema_version != SCHEMA_VERSION {
            bad(
                "schema_version",
                format!("unsupported schema version {} (expected {SCHEMA_VERSION})", self.schema_version),
            );
        }
        if self.original_resolution.contains(&0) {
            bad("original_resolution", "resolution must be positive".into());
        }
        if self.working_resolution.contains(&0) {
            bad("working_resolution", "resolution must be positive".into());
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            bad("fps", format!("fps must be positive, got {}", self.fps));
        }
        let unique: BTreeSet<_> = self.loss_reasons.iter().collect();
        if self.loss_reasons.is_empty() || unique.len() != self.loss_reasons.len() {
            bad("loss_reasons", "vocabulary must be non-empty without duplicates".into());
        }
        if self.loss_reasons.iter().any(|r| r.is_empty() || r.contains([',', '"', '\n'])) {
            bad("loss_reasons", "reasons must be non-empty plain tokens".into());
        }
        if let Some(names) = &self.keypoint_names {
            if names.is_empty() {
                bad("keypoint_names", "keypoint name list is empty".into());
            }
        }
        out
    }
}

/// Ball annotation for one frame: visible at a position, or labelled absent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BallLabel {
    Visible(PixelPoint),
    Hidden,
}

/// A player box; the slot is empty for unassigned detector candidates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledBox {
    pub player_slot: Option<Player>,
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameLabel {
    pub frame: u64,
    pub ball: Option<BallLabel>,
    pub boxes: Vec<LabeledBox>,
    pub skeletons: Vec<Skeleton>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchDataset {
    pub meta: VideoMeta,
    pub frames: BTreeMap<u64, FrameLabel>,
    pub rallies: Vec<Rally>,
    pub calibration: Vec<Correspondence>,
}

impl MatchDataset {
    pub fn new(meta: VideoMeta) -> Self {
        Self {
            meta,
            frames: BTreeMap::new(),
            rallies: Vec::new(),
            calibration: Vec::new(),
        }
    }

    pub fn frame_mut(&mut self, frame: u64) -> &mut FrameLabel {
        self.frames.entry(frame).or_insert_with(|| FrameLabel {
            frame,
            ..FrameLabel::default()
        })
    }

    /// Per-axis factors from original to working pixels.
    pub fn working_scale(&self) -> (f64, f64) {
        let [ow, oh] = self.meta.original_resolution;
        let [ww, wh] = self.meta.working_resolution;
        (ww as f64 / ow as f64, wh as f64 / oh as f64)
    }

    pub fn to_working(&self, p: PixelPoint) -> PixelPoint {
        let (sx, sy) = self.working_scale();
        PixelPoint::new(p.x * sx, p.y * sy)
    }

    pub fn working_box(&self, b: &BoundingBox) -> BoundingBox {
        let (sx, sy) = self.working_scale();
        BoundingBox {
            x: b.x * sx,
            y: b.y * sy,
            w: b.w * sx,
            h: b.h * sy,
            ..*b
        }
    }

    pub fn working_skeleton(&self, s: &Skeleton) -> Skeleton {
        let (sx, sy) = self.working_scale();
        Skeleton {
            keypoints: s
                .keypoints
                .iter()
                .map(|k| Keypoint { x: k.x * sx, y: k.y * sy, ..*k })
                .collect(),
            racket: s.racket.map(|r| self.to_working(r)),
            ..s.clone()
        }
    }

    /// Labelled ball track in working pixels, one entry per labelled frame.
    pub fn working_ball_track(&self) -> Vec<BallDetection> {
        self.frames
            .values()
            .filter_map(|f| {
                f.ball.map(|b| match b {
                    BallLabel::Visible(p) => BallDetection::found(f.frame, self.to_working(p)),
                    BallLabel::Hidden => BallDetection::absent(f.frame),
                })
            })
            .collect()
    }

    /// All boxes in working pixels, frame order.
    pub fn working_boxes(&self) -> Vec<(u64, LabeledBox)> {
        self.frames
            .values()
            .flat_map(|f| {
                f.boxes.iter().map(move |b| {
                    (
                        f.frame,
                        LabeledBox {
                            player_slot: b.player_slot,
                            bbox: self.working_box(&b.bbox),
                        },
                    )
                })
            })
            .collect()
    }

    /// Skeletons paired with their player's box in working pixels. A
    /// skeleton without a matching box uses its keypoint extent; one with
    /// neither is skipped.
    pub fn working_skeleton_pairs(&self) -> Vec<(Skeleton, BoundingBox)> {
        let mut out = Vec::new();
        for f in self.frames.values() {
            for s in &f.skeletons {
                let ws = self.working_skeleton(s);
                let bbox = f
                    .boxes
                    .iter()
                    .find(|b| b.player_slot == Some(s.player_slot))
                    .map(|b| self.working_box(&b.bbox))
                    .or_else(|| ws.keypoint_extent());
                if let Some(b) = bbox {
                    out.push((ws, b));
                }
            }
        }
        out
    }

    pub fn working_calibration(&self) -> Vec<Correspondence> {
        self.calibration
            .iter()
            .map(|c| {
                let p = self.to_working(PixelPoint::new(c.px[0], c.px[1]));
                Correspondence { px: [p.x, p.y], court: c.court }
            })
            .collect()
    }

    /// Cross-file invariants; per-row checks happen while parsing.
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = self.meta.violations();
        let [ow, oh] = self.meta.original_resolution;
        let keypoints = self.meta.keypoint_names().len();
        for f in self.frames.values() {
            if let Some(BallLabel::Visible(p)) = f.ball {
                if !(p.is_finite() && (0.0..=ow as f64).contains(&p.x) && (0.0..=oh as f64).contains(&p.y)) {
                    out.push(Violation::new(
                        BALL_FILE,
                        None,
                        None,
                        format!("frame {}: ball ({}, {}) lies outside the {ow}x{oh} frame", f.frame, p.x, p.y),
                    ));
                }
            }
            for b in &f.boxes {
                if let Err(e) = b.bbox.validate() {
                    out.push(Violation::new(BOXES_FILE, None, None, format!("frame {}: {e}", f.frame)));
                }
            }
            let mut slots = BTreeSet::new();
            for s in &f.skeletons {
                if !slots.insert(s.player_slot) {
                    out.push(Violation::new(
                        SKELETONS_FILE,
                        None,
                        None,
                        format!("frame {}: duplicate skeleton for {}", f.frame, s.player_slot),
                    ));
                }
                if let Err(e) = s.validate(keypoints) {
                    out.push(Violation::new(SKELETONS_FILE, None, None, e.to_string()));
                }
            }
        }
        let mut ids = BTreeSet::new();
        for (i, r) in self.rallies.iter().enumerate() {
            if !ids.insert(r.rally_id) {
                out.push(Violation::new(RALLIES_FILE, None, None, format!("duplicate rally_id {}", r.rally_id)));
            }
            if !self.meta.loss_reasons.contains(&r.loss_reason) {
                out.push(Violation::new(
                    RALLIES_FILE,
                    None,
                    Some("loss_reason"),
                    format!("rally {}: unknown loss reason `{}`", r.rally_id, r.loss_reason),
                ));
            }
            if i > 0 && r.start_frame <= self.rallies[i - 1].end_frame {
                out.push(Violation::new(
                    RALLIES_FILE,
                    None,
                    None,
                    format!(
                        "rally {} overlaps or precedes rally {}",
                        r.rally_id,
                        self.rallies[i - 1].rally_id
                    ),
                ));
            }
            for v in r.violations() {
                out.push(Violation::new(STROKES_FILE, None, None, v));
            }
            if !self.frames.is_empty() {
                for s in &r.strokes {
                    if !self.frames.contains_key(&s.hit_frame) {
                        out.push(Violation::new(
                            STROKES_FILE,
                            None,
                            None,
                            format!("rally {}: hit frame {} has no frame label", r.rally_id, s.hit_frame),
                        ));
                    }
                }
            }
        }
        for c in &self.calibration {
            if c.px.iter().chain(&c.court).any(|v| !v.is_finite()) {
                out.push(Violation::new(CALIBRATION_FILE, None, None, "non-finite correspondence"));
            }
        }
        out
    }
}

fn read_optional(root: &Path, name: &str) -> Result<Option<String>> {
    let path = root.join(name);
    match fs::read_to_string(&path) {
        Ok(text) => Ok(Some(text)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(Error::io(path, e)),
    }
}

/// Typed CSV walker that records problems instead of stopping at the first.
struct CsvRows<'a> {
    file: &'static str,
    violations: &'a mut Vec<Violation>,
}

impl CsvRows<'_> {
    fn read(&mut self, text: &str, header: &[&str]) -> Vec<(usize, csv::StringRecord)> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(text.as_bytes());
        match reader.headers() {
            Ok(h) if h.iter().eq(header.iter().copied()) => {}
            Ok(h) => {
                self.violations.push(Violation::new(
                    self.file,
                    Some(1),
                    None,
                    format!("header must be `{}`, found `{}`", header.join(","), h.iter().collect::<Vec<_>>().join(",")),
                ));
                return Vec::new();
            }
            Err(e) => {
                self.violations.push(Violation::new(self.file, Some(1), None, e.to_string()));
                return Vec::new();
            }
        }
        let mut rows = Vec::new();
        for record in reader.records() {
            match record {
                Ok(r) => {
                    let line = r.position().map_or(0, |p| p.line() as usize);
                    if r.len() != header.len() {
                        self.violations.push(Violation::new(
                            self.file,
                            Some(line),
                            None,
                            format!("expected {} fields, found {}", header.len(), r.len()),
                        ));
                    } else {
                        rows.push((line, r));
                    }
                }
                Err(e) => {
                    let line = e.position().map(|p| p.line() as usize);
                    self.violations.push(Violation::new(self.file, line, None, e.to_string()));
                }
            }
        }
        rows
    }

    fn field<T: std::str::FromStr>(&mut self, line: usize, rec: &csv::StringRecord, idx: usize, col: &str) -> Option<T> {
        let raw = rec.get(idx).unwrap_or("");
        match raw.parse() {
            Ok(v) => Some(v),
            Err(_) => {
                self.violations.push(Violation::new(self.file, Some(line), Some(col), format!("cannot parse `{raw}`")));
                None
            }
        }
    }

    fn finite(&mut self, line: usize, rec: &csv::StringRecord, idx: usize, col: &str) -> Option<f64> {
        let v: f64 = self.field(line, rec, idx, col)?;
        if v.is_finite() {
            Some(v)
        } else {
            self.violations.push(Violation::new(self.file, Some(line), Some(col), "value must be finite"));
            None
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SkeletonRecord {
    frame: u64,
    player_slot: Player,
    keypoints: Vec<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    racket: Option<[f64; 2]>,
}

/// Reads and validates a match directory. Every problem found is reported
/// together in [`Error::Validation`].
pub fn load_dataset(root: &Path) -> Result<MatchDataset> {
    let meta_path = root.join(META_FILE);
    let meta_text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: VideoMeta = serde_json::from_str(&meta_text).map_err(|e| Error::Parse {
        path: meta_path.clone(),
        line: e.line(),
        column: e.column().to_string(),
        message: e.to_string(),
    })?;
    let mut ds = MatchDataset::new(meta);
    let mut violations = Vec::new();

    if let Some(text) = read_optional(root, BALL_FILE)? {
        let mut rows = CsvRows { file: BALL_FILE, violations: &mut violations };
        for (line, rec) in rows.read(&text, &BALL_HEADER) {
            let Some(frame) = rows.field::<u64>(line, &rec, 0, "frame") else { continue };
            let label = match rec.get(1) {
                Some("1") => {
                    let (Some(x), Some(y)) = (rows.finite(line, &rec, 2, "x"), rows.finite(line, &rec, 3, "y")) else {
                        continue;
                    };
                    BallLabel::Visible(PixelPoint::new(x, y))
                }
                Some("0") => {
                    if rec.get(2) != Some("") || rec.get(3) != Some("") {
                        rows.violations.push(Violation::new(
                            BALL_FILE,
                            Some(line),
                            Some("x"),
                            "hidden ball rows must leave x and y empty",
                        ));
                        continue;
                    }
                    BallLabel::Hidden
                }
                other => {
                    rows.violations.push(Violation::new(
                        BALL_FILE,
                        Some(line),
                        Some("visible"),
                        format!("expected 0 or 1, found `{}`", other.unwrap_or("")),
                    ));
                    continue;
                }
            };
            let f = ds.frame_mut(frame);
            if f.ball.is_some() {
                rows.violations.push(Violation::new(
                    BALL_FILE,
                    Some(line),
                    Some("frame"),
                    format!("second ball label for frame {frame}"),
                ));
            } else {
                f.ball = Some(label);
            }
        }
    }

    if let Some(text) = read_optional(root, BOXES_FILE)? {
        let mut rows = CsvRows { file: BOXES_FILE, violations: &mut violations };
        for (line, rec) in rows.read(&text, &BOXES_HEADER) {
            let frame = rows.field::<u64>(line, &rec, 0, "frame");
            let slot = match rec.get(1) {
                Some("") => Some(None),
                Some(s) => rows.field::<Player>(line, &rec, 1, "player_slot").map(Some).filter(|_| !s.is_empty()),
                None => None,
            };
            let nums: Vec<Option<f64>> = ["x", "y", "w", "h", "score"]
                .iter()
                .enumerate()
                .map(|(i, c)| rows.finite(line, &rec, i + 2, c))
                .collect();
            let (Some(frame), Some(slot), [Some(x), Some(y), Some(w), Some(h), Some(score)]) =
                (frame, slot, nums.as_slice())
            else {
                continue;
            };
            match BoundingBox::with_meta(*x, *y, *w, *h, *score, frame) {
                Ok(bbox) => ds.frame_mut(frame).boxes.push(LabeledBox { player_slot: slot, bbox }),
                Err(e) => rows.violations.push(Violation::new(BOXES_FILE, Some(line), None, e.to_string())),
            }
        }
    }

    if let Some(text) = read_optional(root, SKELETONS_FILE)? {
        let expected = ds.meta.keypoint_names().len();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let rec: SkeletonRecord = match serde_json::from_str(raw) {
                Ok(r) => r,
                Err(e) => {
                    violations.push(Violation::new(
                        SKELETONS_FILE,
                        Some(line),
                        Some(&format!("char {}", e.column())),
                        e.to_string(),
                    ));
                    continue;
                }
            };
            let mut keypoints = Vec::with_capacity(rec.keypoints.len());
            let mut ok = true;
            for (k, [x, y, v]) in rec.keypoints.iter().copied().enumerate() {
                if v != 0.0 && v != 1.0 {
                    violations.push(Violation::new(
                        SKELETONS_FILE,
                        Some(line),
                        Some(&format!("keypoints[{k}]")),
                        format!("visibility must be 0 or 1, found {v}"),
                    ));
                    ok = false;
                }
                keypoints.push(Keypoint { x, y, visible: v == 1.0 });
            }
            let s = Skeleton {
                frame: rec.frame,
                player_slot: rec.player_slot,
                keypoints,
                racket: rec.racket.map(|[x, y]| PixelPoint::new(x, y)),
            };
            if let Err(e) = s.validate(expected) {
                violations.push(Violation::new(SKELETONS_FILE, Some(line), Some("keypoints"), e.to_string()));
                ok = false;
            }
            let f = ds.frame_mut(rec.frame);
            if f.skeletons.iter().any(|o| o.player_slot == s.player_slot) {
                violations.push(Violation::new(
                    SKELETONS_FILE,
                    Some(line),
                    Some("player_slot"),
                    format!("second skeleton for {} in frame {}", s.player_slot, s.frame),
                ));
                ok = false;
            }
            if ok {
                f.skeletons.push(s);
            }
        }
    }

    if let Some(text) = read_optional(root, RALLIES_FILE)? {
        let vocab = ds.meta.loss_reasons.clone();
        let mut rows = CsvRows { file: RALLIES_FILE, violations: &mut violations };
        for (line, rec) in rows.read(&text, &RALLIES_HEADER) {
            let id = rows.field::<u64>(line, &rec, 0, "rally_id");
            let start = rows.field::<u64>(line, &rec, 1, "start_frame");
            let end = rows.field::<u64>(line, &rec, 2, "end_frame");
            let winner = rows.field::<Player>(line, &rec, 3, "winner");
            let reason = rec.get(4).unwrap_or("").to_string();
            if !vocab.contains(&reason) {
                rows.violations.push(Violation::new(
                    RALLIES_FILE,
                    Some(line),
                    Some("loss_reason"),
                    format!("unknown loss reason `{reason}`"),
                ));
                continue;
            }
            let (Some(rally_id), Some(start_frame), Some(end_frame), Some(winner)) = (id, start, end, winner) else {
                continue;
            };
            if start_frame > end_frame {
                rows.violations.push(Violation::new(
                    RALLIES_FILE,
                    Some(line),
                    Some("end_frame"),
                    format!("rally {rally_id} ends before it starts"),
                ));
                continue;
            }
            if let Some(prev) = ds.rallies.last() {
                if rally_id == prev.rally_id || ds.rallies.iter().any(|r| r.rally_id == rally_id) {
                    rows.violations.push(Violation::new(
                        RALLIES_FILE,
                        Some(line),
                        Some("rally_id"),
                        format!("duplicate rally_id {rally_id}"),
                    ));
                    continue;
                }
                if start_frame <= prev.end_frame {
                    rows.violations.push(Violation::new(
                        RALLIES_FILE,
                        Some(line),
                        Some("start_frame"),
                        format!("rally {rally_id} overlaps or precedes rally {}", prev.rally_id),
                    ));
                    continue;
                }
            }
            ds.rallies.push(Rally {
                rally_id,
                start_frame,
                end_frame,
                strokes: Vec::new(),
                winner,
                loss_reason: reason,
            });
        }
    }

    if let Some(text) = read_optional(root, STROKES_FILE)? {
        let mut rows = CsvRows { file: STROKES_FILE, violations: &mut violations };
        for (line, rec) in rows.read(&text, &STROKES_HEADER) {
            let id = rows.field::<u64>(line, &rec, 0, "rally_id");
            let frame = rows.field::<u64>(line, &rec, 1, "hit_frame");
            let player = rows.field::<Player>(line, &rec, 2, "player");
            let ball_type = rows.field::<BallType>(line, &rec, 3, "ball_type");
            let (Some(id), Some(hit_frame), Some(player), Some(ball_type)) = (id, frame, player, ball_type) else {
                continue;
            };
            let Some(rally) = ds.rallies.iter_mut().find(|r| r.rally_id == id) else {
                rows.violations.push(Violation::new(
                    STROKES_FILE,
                    Some(line),
                    Some("rally_id"),
                    format!("stroke references unknown rally {id}"),
                ));
                continue;
            };
            if hit_frame < rally.start_frame || hit_frame > rally.end_frame {
                rows.violations.push(Violation::new(
                    STROKES_FILE,
                    Some(line),
                    Some("hit_frame"),
                    format!(
                        "rally {id}: stroke at frame {hit_frame} lies outside [{}, {}]",
                        rally.start_frame, rally.end_frame
                    ),
                ));
                continue;
            }
            if let Some(prev) = rally.strokes.last() {
                if hit_frame <= prev.hit_frame {
                    rows.violations.push(Violation::new(
                        STROKES_FILE,
                        Some(line),
                        Some("hit_frame"),
                        format!("rally {id}: stroke frames {} and {hit_frame} are not strictly increasing", prev.hit_frame),
                    ));
                    continue;
                }
                if player == prev.player {
                    rows.violations.push(Violation::new(
                        STROKES_FILE,
                        Some(line),
                        Some("player"),
                        format!("rally {id}: {player} hits twice in a row at frame {hit_frame}"),
                    ));
                    continue;
                }
            }
            rally.strokes.push(Stroke { hit_frame, player, ball_type });
        }
    }

    if let Some(text) = read_optional(root, CALIBRATION_FILE)? {
        match serde_json::from_str::<CalibrationFile>(&text) {
            Ok(c) => ds.calibration = c.points,
            Err(e) => violations.push(Violation::new(
                CALIBRATION_FILE,
                Some(e.line()),
                Some(&format!("char {}", e.column())),
                e.to_string(),
            )),
        }
    }

    // Row-level problems first; cross-file checks only add what they alone
    // can see.
    for v in ds.violations() {
        if !violations.iter().any(|o| o.message == v.message) {
            violations.push(v);
        }
    }
    if violations.is_empty() {
        Ok(ds)
    } else {
        Err(Error::Validation(violations))
    }
}

fn write_file(path: PathBuf, content: &str) -> Result<()> {
    fs::write(&path, content).map_err(|e| Error::io(path, e))
}

fn opt_slot(p: Option<Player>) -> &'static str {
    p.map_or("", Player::as_str)
}

/// Writes every schema file, including empty ones, so that loading the
/// directory back yields an identical dataset.
pub fn save_dataset(ds: &MatchDataset, root: &Path) -> Result<()> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let meta = serde_json::to_string_pretty(&ds.meta).expect("meta serialises");
    write_file(root.join(META_FILE), &(meta + "\n"))?;

    let mut ball = BALL_HEADER.join(",") + "\n";
    let mut boxes = BOXES_HEADER.join(",") + "\n";
    let mut skeletons = String::new();
    for f in ds.frames.values() {
        match f.ball {
            Some(BallLabel::Visible(p)) => ball += &format!("{},1,{},{}\n", f.frame, p.x, p.y),
            Some(BallLabel::Hidden) => ball += &format!("{},0,,\n", f.frame),
            None => {}
        }
        for b in &f.boxes {
            boxes += &format!(
                "{},{},{},{},{},{},{}\n",
                f.frame,
                opt_slot(b.player_slot),
                b.bbox.x,
                b.bbox.y,
                b.bbox.w,
                b.bbox.h,
                b.bbox.score
            );
        }
        for s in &f.skeletons {
            let rec = SkeletonRecord {
                frame: s.frame,
                player_slot: s.player_slot,
                keypoints: s
                    .keypoints
                    .iter()
                    .map(|k| [k.x, k.y, if k.visible { 1.0 } else { 0.0 }])
                    .collect(),
                racket: s.racket.map(|r| [r.x, r.y]),
            };
            skeletons += &serde_json::to_string(&rec).expect("skeleton serialises");
            skeletons.push('\n');
        }
    }
    write_file(root.join(BALL_FILE), &ball)?;
    write_file(root.join(BOXES_FILE), &boxes)?;
    write_file(root.join(SKELETONS_FILE), &skeletons)?;

    let mut rallies = RALLIES_HEADER.join(",") + "\n";
    let mut strokes = STROKES_HEADER.join(",") + "\n";
    for r in &ds.rallies {
        rallies += &format!(
            "{},{},{},{},{}\n",
            r.rally_id, r.start_frame, r.end_frame, r.winner, r.loss_reason
        );
        for s in &r.strokes {
            strokes += &format!("{},{},{},{}\n", r.rally_id, s.hit_frame, s.player, s.ball_type);
        }
    }
    write_file(root.join(RALLIES_FILE), &rallies)?;
    write_file(root.join(STROKES_FILE), &strokes)?;

    let calib = CalibrationFile {
        points: ds.calibration.clone(),
    };
    let calib = serde_json::to_string_pretty(&calib).expect("calibration serialises");
    write_file(root.join(CALIBRATION_FILE), &(calib + "\n"))
}
