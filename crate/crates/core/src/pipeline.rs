//! Stage orchestration for `run` and the chart-data export.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::court::{estimate_homography, filter_players, Homography, PlayerRow};
use crate::dataset::MatchDataset;
use crate::decoder::{decode_ball, BallDetection};
use crate::error::{Error, Result};
use crate::heatmap::Heatmap;
use crate::pose::{build_features, cluster_skeletons, outlier_report, OutlierEntry};
use crate::rally::{
    ball_type_chart, detect_hit_times, estimate_court_speed, estimate_speed, loss_reason_chart, radar_charts,
    stroke_count_per_rally, Trajectory,
};
use crate::types::format_coord;

pub const DETECTIONS_FILE: &str = "detections.csv";
pub const HOMOGRAPHY_FILE: &str = "homography.json";
pub const PLAYERS_FILE: &str = "players.csv";
pub const OUTLIERS_FILE: &str = "outliers.csv";
pub const HITS_FILE: &str = "hits.csv";
pub const SPEEDS_FILE: &str = "speeds.csv";
pub const REPORT_FILE: &str = "run_report.json";
pub const BALL_TYPES_FILE: &str = "ball_types.json";
pub const LOSS_REASONS_FILE: &str = "loss_reasons.json";
pub const RADAR_FILE: &str = "radar.json";
pub const RALLY_SERIES_FILE: &str = "rally_series.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Decode,
    Filter,
    Qa,
    Analytics,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Decode, Stage::Filter, Stage::Qa, Stage::Analytics];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Decode => "decode",
            Stage::Filter => "filter",
            Stage::Qa => "qa",
            Stage::Analytics => "analytics",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Spec(format!("unknown stage `{s}` (expected decode, filter, qa or analytics)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Completed,
    Skipped,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageReport {
    pub stage: Stage,
    pub status: StageStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub counts: BTreeMap<String, u64>,
    pub warnings: Vec<String>,
    pub outputs: Vec<String>,
    /// Kept out of the JSON so reports stay byte-identical between runs.
    #[serde(skip)]
    pub wall_time: Duration,
}

impl StageReport {
    fn new(stage: Stage) -> Self {
        Self {
            stage,
            status: StageStatus::Completed,
            reason: None,
            counts: BTreeMap::new(),
            warnings: Vec::new(),
            outputs: Vec::new(),
            wall_time: Duration::ZERO,
        }
    }

    fn skipped(stage: Stage, reason: impl Into<String>) -> Self {
        Self {
            status: StageStatus::Skipped,
            reason: Some(reason.into()),
            ..Self::new(stage)
        }
    }

    fn count(&mut self, key: &str, n: usize) {
        self.counts.insert(key.to_string(), n as u64);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub seed: u64,
    pub stages: Vec<StageReport>,
}

impl RunReport {
    pub fn stage(&self, s: Stage) -> Option<&StageReport> {
        self.stages.iter().find(|r| r.stage == s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises") + "\n"
    }
}

/// Everything a run reads besides the configuration.
#[derive(Debug, Clone)]
pub struct PipelineInput<'a> {
    pub dataset: &'a MatchDataset,
    /// Directory of `*.pgm` heatmaps named by frame number.
    pub heatmap_dir: Option<PathBuf>,
}

fn write_output(out: &Path, name: &str, content: &str, report: &mut StageReport) -> Result<()> {
    let path = out.join(name);
    fs::write(&path, content).map_err(|e| Error::io(path, e))?;
    report.outputs.push(name.to_string());
    Ok(())
}

fn to_json_line<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("chart data serialises") + "\n"
}

/// Frame number from the last run of digits in a file stem, e.g.
/// `frame_000123.pgm` → 123.
pub fn frame_from_file_name(path: &Path) -> Option<u64> {
    let stem = path.file_stem()?.to_str()?;
    let end = stem.rfind(|c: char| c.is_ascii_digit())? + 1;
    let start = stem[..end]
        .rfind(|c: char| !c.is_ascii_digit())
        .map_or(0, |i| i + 1);
    stem[start..end].parse().ok()
}

/// `*.pgm` files in `dir` keyed by frame, plus warnings for names that
/// carry no usable frame number.
pub fn list_heatmaps(dir: &Path) -> Result<(BTreeMap<u64, PathBuf>, Vec<String>)> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")) {
            paths.push(path);
        }
    }
    paths.sort();
    let mut frames = BTreeMap::new();
    let mut warnings = Vec::new();
    for path in paths {
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        match frame_from_file_name(&path) {
            Some(f) if frames.contains_key(&f) => warnings.push(format!("{name}: duplicate frame {f}, ignored")),
            Some(f) => {
                frames.insert(f, path);
            }
            None => warnings.push(format!("{name}: no frame number in file name, ignored")),
        }
    }
    Ok((frames, warnings))
}

pub fn detections_csv(detections: &[BallDetection]) -> String {
    let mut s = format!("{}\n", BallDetection::CSV_HEADER);
    for d in detections {
        s += &d.csv_row();
        s.push('\n');
    }
    s
}

fn decode_stage(input: &PipelineInput, config: &Config, out: &Path) -> Result<(StageReport, Option<Vec<BallDetection>>)> {
    let Some(dir) = input.heatmap_dir.as_deref().filter(|d| d.is_dir()) else {
        return Ok((StageReport::skipped(Stage::Decode, "no heatmap directory"), None));
    };
    let (frames, warnings) = list_heatmaps(dir)?;
    if frames.is_empty() {
        let mut r = StageReport::skipped(Stage::Decode, format!("no .pgm heatmaps in {}", dir.display()));
        r.warnings = warnings;
        return Ok((r, None));
    }
    let mut report = StageReport::new(Stage::Decode);
    report.warnings = warnings;
    let mut detections = Vec::with_capacity(frames.len());
    for (&frame, path) in &frames {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let heatmap = Heatmap::read_pgm(std::io::BufReader::new(file))?;
        detections.push(decode_ball(frame, &heatmap, &config.decoder)?);
    }
    report.count("heatmaps", frames.len());
    report.count("found", detections.iter().filter(|d| d.position().is_some()).count());
    report.count("absent", detections.iter().filter(|d| d.position().is_none()).count());
    write_output(out, DETECTIONS_FILE, &detections_csv(&detections), &mut report)?;
    Ok((report, Some(detections)))
}

pub fn players_csv(rows: &[PlayerRow]) -> String {
    let mut s = format!("{}\n", PlayerRow::CSV_HEADER);
    for r in rows {
        s += &r.csv_row();
        s.push('\n');
    }
    s
}

/// Keeps on-court boxes per frame. Unlabelled boxes take the slot of the
/// court half they stand on.
pub fn place_players(ds: &MatchDataset, h: &Homography, config: &Config) -> Vec<PlayerRow> {
    let mut rows = Vec::new();
    let boxes = ds.working_boxes();
    let mut start = 0;
    while start < boxes.len() {
        let frame = boxes[start].0;
        let end = start + boxes[start..].iter().take_while(|(f, _)| *f == frame).count();
        let group = &boxes[start..end];
        let plain: Vec<_> = group.iter().map(|(_, b)| b.bbox).collect();
        for placed in filter_players(&plain, h, &config.court) {
            let slot = group
                .iter()
                .find(|(_, b)| b.bbox == placed.bbox)
                .and_then(|(_, b)| b.player_slot)
                .unwrap_or_else(|| config.court.side_of(placed.court));
            rows.push(PlayerRow {
                frame,
                player_slot: slot,
                placed,
            });
        }
        start = end;
    }
    rows
}

fn filter_stage(ds: &MatchDataset, config: &Config, out: &Path) -> Result<(StageReport, Option<Homography>)> {
    if ds.calibration.len() < 4 {
        return Ok((
            StageReport::skipped(
                Stage::Filter,
                format!("calibration has {} correspondences, at least 4 needed", ds.calibration.len()),
            ),
            None,
        ));
    }
    let fit = match estimate_homography(&ds.working_calibration()) {
        Ok(f) => f,
        Err(e) => {
            let mut r = StageReport::skipped(Stage::Filter, e.to_string());
            r.status = StageStatus::Failed;
            return Ok((r, None));
        }
    };
    let mut report = StageReport::new(Stage::Filter);
    report.warnings.extend(fit.warning.clone());
    let rows = place_players(ds, &fit.homography, config);
    report.count("correspondences", ds.calibration.len());
    report.count("boxes", ds.frames.values().map(|f| f.boxes.len()).sum());
    report.count("players", rows.len());
    write_output(out, HOMOGRAPHY_FILE, &(fit.homography.to_json() + "\n"), &mut report)?;
    write_output(out, PLAYERS_FILE, &players_csv(&rows), &mut report)?;
    Ok((report, Some(fit.homography)))
}

pub fn outliers_csv(entries: &[OutlierEntry]) -> String {
    let mut s = format!("{}\n", OutlierEntry::CSV_HEADER);
    for e in entries {
        s += &e.csv_row();
        s.push('\n');
    }
    s
}

fn qa_stage(ds: &MatchDataset, config: &Config, seed: u64, out: &Path) -> Result<StageReport> {
    let pairs = ds.working_skeleton_pairs();
    let set = build_features(&pairs);
    let params = crate::pose::ClusterParams { seed, ..config.cluster };
    if set.features.len() < params.k.max(1) {
        return Ok(StageReport::skipped(
            Stage::Qa,
            format!("{} usable skeletons, clustering needs at least {}", set.features.len(), params.k),
        ));
    }
    let mut report = StageReport::new(Stage::Qa);
    for (frame, slot, why) in &set.rejected {
        report.warnings.push(format!("frame {frame} {slot}: {why}"));
    }
    let clusters = cluster_skeletons(&set.features, &params)?;
    let entries = outlier_report(&clusters);
    report.count("skeletons", pairs.len());
    report.count("rejected", set.rejected.len());
    report.count("iterations", clusters.iterations);
    report.count("outliers", entries.len());
    write_output(out, OUTLIERS_FILE, &outliers_csv(&entries), &mut report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub records: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileManifest {
    pub files: Vec<ManifestEntry>,
}

/// Writes the bar, radar and rally-series chart payloads plus a manifest.
///
/// Record counts: strokes tallied for `ball_types.json`, rallies for the
/// other three.
pub fn export_chart_data(ds: &MatchDataset, out: &Path) -> Result<FileManifest> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let rallies = &ds.rallies;
    let strokes: usize = rallies.iter().map(|r| r.strokes.len()).sum();
    let payloads = [
        (BALL_TYPES_FILE, to_json_line(&ball_type_chart(rallies)), strokes),
        (
            LOSS_REASONS_FILE,
            to_json_line(&loss_reason_chart(rallies, &ds.meta.loss_reasons)),
            rallies.len(),
        ),
        (RADAR_FILE, to_json_line(&radar_charts(rallies)), rallies.len()),
        (RALLY_SERIES_FILE, to_json_line(&stroke_count_per_rally(rallies)), rallies.len()),
    ];
    let mut files = Vec::new();
    for (name, content, records) in payloads {
        let path = out.join(name);
        fs::write(&path, content).map_err(|e| Error::io(path, e))?;
        files.push(ManifestEntry {
            file: name.to_string(),
            records: records as u64,
        });
    }
    let manifest = FileManifest { files };
    let path = out.join(MANIFEST_FILE);
    fs::write(&path, to_json_line(&manifest)).map_err(|e| Error::io(path, e))?;
    Ok(manifest)
}

fn analytics_stage(
    ds: &MatchDataset,
    config: &Config,
    detections: Option<Vec<BallDetection>>,
    homography: Option<&Homography>,
    out: &Path,
) -> Result<StageReport> {
    let mut report = StageReport::new(Stage::Analytics);
    let manifest = export_chart_data(ds, out)?;
    report.outputs = manifest.files.iter().map(|f| f.file.clone()).collect();
    report.outputs.push(MANIFEST_FILE.to_string());
    report.count("rallies", ds.rallies.len());
    report.count("strokes", ds.rallies.iter().map(|r| r.strokes.len()).sum());

    let Some(detections) = detections else {
        report.warnings.push("trajectory outputs skipped: decode did not run".into());
        return Ok(report);
    };
    let traj = Trajectory::new(ds.meta.fps, detections)?;
    let hits = detect_hit_times(&traj, &config.hits);
    let mut hits_csv = String::from("hit_frame\n");
    for h in &hits {
        hits_csv += &format!("{h}\n");
    }
    report.count("hits", hits.len());
    write_output(out, HITS_FILE, &hits_csv, &mut report)?;

    let speeds = estimate_speed(&traj);
    let court: BTreeMap<u64, f64> = match homography {
        Some(h) => estimate_court_speed(&traj, h).into_iter().collect(),
        None => {
            report.warnings.push("court speeds skipped: filter did not run".into());
            BTreeMap::new()
        }
    };
    let mut speeds_csv = String::from("frame,speed_px_per_s,speed_m_per_s\n");
    for (f, v) in &speeds {
        let c = court.get(f).map(|v| format_coord(*v)).unwrap_or_default();
        speeds_csv += &format!("{f},{},{c}\n", format_coord(*v));
    }
    report.count("speed_samples", speeds.len());
    write_output(out, SPEEDS_FILE, &speeds_csv, &mut report)?;
    Ok(report)
}

/// Runs the requested stages in the fixed order decode, filter, qa,
/// analytics and writes `run_report.json` next to their outputs.
///
/// A stage whose inputs are missing is reported as skipped; outputs that
/// depend on it (hits and speeds on decode, court speeds on filter) are
/// left out. An empty stage set produces an empty report and no files.
pub fn run_pipeline(
    input: &PipelineInput,
    stages: &BTreeSet<Stage>,
    config: &Config,
    seed: u64,
    out: &Path,
) -> Result<RunReport> {
    let mut report = RunReport {
        seed,
        stages: Vec::new(),
    };
    if stages.is_empty() {
        return Ok(report);
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let ds = input.dataset;
    let mut detections = None;
    let mut homography = None;
    for &stage in stages {
        let started = Instant::now();
        let mut r = match stage {
            Stage::Decode => {
                let (r, d) = decode_stage(input, config, out)?;
                detections = d;
                r
            }
            Stage::Filter => {
                let (r, h) = filter_stage(ds, config, out)?;
                homography = h;
                r
            }
            Stage::Qa => qa_stage(ds, config, seed, out)?,
            Stage::Analytics => analytics_stage(ds, config, detections.take(), homography.as_ref(), out)?,
        };
        r.wall_time = started.elapsed();
        log::info!("stage {stage}: {:?} in {:?}", r.status, r.wall_time);
        report.stages.push(r);
    }
    let path = out.join(REPORT_FILE);
    fs::write(&path, report.to_json()).map_err(|e| Error::io(path, e))?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_numbers_from_names() {
        assert_eq!(frame_from_file_name(Path::new("frame_000123.pgm")), Some(123));
        assert_eq!(frame_from_file_name(Path::new("42.pgm")), Some(42));
        assert_eq!(frame_from_file_name(Path::new("cam2_f17.pgm")), Some(17));
        assert_eq!(frame_from_file_name(Path::new("blank.pgm")), None);
    }

    #[test]
    fn stage_parsing_and_order() {
        assert_eq!("QA".parse::<Stage>().unwrap(), Stage::Qa);
        assert!("render".parse::<Stage>().is_err());
        let set: BTreeSet<Stage> = [Stage::Analytics, Stage::Decode].into();
        assert_eq!(set.into_iter().collect::<Vec<_>>(), vec![Stage::Decode, Stage::Analytics]);
    }
}
