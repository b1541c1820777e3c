use std::collections::BTreeSet;
use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use rallyscope::config::Config;
use rallyscope::court::{estimate_homography, CalibrationFile, Homography};
use rallyscope::dataset::{load_dataset, MatchDataset};
use rallyscope::decoder::decode_ball;
use rallyscope::error::{Error, Result};
use rallyscope::heatmap::{
    cross_entropy_loss, encode_onehot, generate_heatmap, read_probability_volume, Heatmap, HeatmapDescriptor,
    UniformPrediction,
};
use rallyscope::imu::{
    classify_stroke, extract_features, match_labels, read_imu_csv, segment_strokes, train_centroids,
    ClassifiedStroke, StrokeModel, StrokeWindow,
};
use rallyscope::pipeline::{
    detections_csv, export_chart_data, list_heatmaps, outliers_csv, place_players, players_csv, run_pipeline,
    PipelineInput, Stage, StageStatus,
};
use rallyscope::pose::{build_features, cluster_skeletons, outlier_report, ClusterParams};
use rallyscope::rally::BallType;
use rallyscope::types::{format_significant, PixelPoint};

const EXIT_VALIDATION: u8 = 1;
const EXIT_IO: u8 = 2;
const EXIT_USAGE: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "rallyscope", version, about = "Badminton match analytics toolkit")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for clustering; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory. Single-table commands print to stdout without it.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Table format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate target heatmaps or score predictions against them.
    #[command(subcommand)]
    Heatmap(HeatmapCommand),
    /// Decode ball positions from a heatmap file or directory.
    Decode { input: PathBuf },
    /// Fit a court homography from a calibration file.
    Calibrate { calibration: PathBuf },
    /// Keep boxes whose ground point lies on the court.
    FilterPlayers {
        dataset: PathBuf,
        /// Row-major homography JSON; defaults to fitting the dataset calibration.
        #[arg(long)]
        homography: Option<PathBuf>,
    },
    /// Cluster skeletons and list outliers for review.
    QaSkeletons { dataset: PathBuf },
    /// Chart payload export.
    #[command(subcommand)]
    Stats(StatsCommand),
    /// Racket IMU stroke tools.
    #[command(subcommand)]
    Imu(ImuCommand),
    /// Check a match directory against the label schemas.
    Validate { dataset: PathBuf },
    /// Run pipeline stages over a match directory.
    Run(RunArgs),
}

#[derive(Debug, Subcommand)]
enum HeatmapCommand {
    /// Write a target heatmap (PGM plus JSON descriptor), or one per row of a
    /// `frame,x,y` CSV.
    Gen(GenArgs),
    /// Cross-entropy of a prediction volume against a target heatmap.
    Loss {
        target: PathBuf,
        /// PVOL prediction file; a uniform prediction when omitted.
        #[arg(long)]
        prediction: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long, allow_hyphen_values = true, required_unless_present = "centers")]
    x: Option<f64>,
    #[arg(long, allow_hyphen_values = true, required_unless_present = "centers")]
    y: Option<f64>,
    /// CSV with `frame,x,y`; empty x and y give a blank heatmap.
    #[arg(long, conflicts_with_all = ["x", "y"])]
    centers: Option<PathBuf>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    variance: Option<f64>,
    #[arg(long)]
    amplitude: Option<u8>,
    /// File stem for single-heatmap output.
    #[arg(long, default_value = "heatmap")]
    name: String,
}

#[derive(Debug, Subcommand)]
enum StatsCommand {
    /// Write ball-type, loss-reason, radar and rally-series payloads.
    Export { dataset: PathBuf },
}

#[derive(Debug, Subcommand)]
enum ImuCommand {
    /// List stroke windows found in an IMU log.
    Segment { imu: PathBuf },
    /// Train a centroid model from an IMU log and `peak_t_ms,label` labels.
    Train {
        imu: PathBuf,
        #[arg(long)]
        labels: PathBuf,
    },
    /// Classify every stroke window in an IMU log.
    Classify {
        imu: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    dataset: PathBuf,
    /// Heatmap directory for decode; defaults to `<dataset>/heatmaps`.
    #[arg(long)]
    heatmaps: Option<PathBuf>,
    /// Comma-separated subset of decode,filter,qa,analytics.
    #[arg(long, value_delimiter = ',', default_value = "decode,filter,qa,analytics")]
    stages: Vec<String>,
}

struct Ctx {
    config: Config,
    seed: u64,
    out: Option<PathBuf>,
    format: Format,
}

impl Ctx {
    fn require_out(&self, command: &str) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| Error::Spec(format!("`{command}` needs --out <dir>")))
    }

    fn out_dir(&self) -> Result<Option<&Path>> {
        if let Some(dir) = &self.out {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        Ok(self.out.as_deref())
    }

    /// Writes a table as `<out>/<stem>.csv|json`, or to stdout without `--out`.
    fn emit_table(&self, stem: &str, csv_text: &str) -> Result<()> {
        let body = match self.format {
            Format::Csv => csv_text.to_string(),
            Format::Json => csv_to_json(csv_text)?,
        };
        let ext = match self.format {
            Format::Csv => "csv",
            Format::Json => "json",
        };
        match self.out_dir()? {
            Some(dir) => {
                let path = dir.join(format!("{stem}.{ext}"));
                fs::write(&path, body).map_err(|e| Error::io(path, e))
            }
            None => io::stdout()
                .write_all(body.as_bytes())
                .map_err(|e| Error::io("<stdout>", e)),
        }
    }

    fn emit_text(&self, file: &str, text: &str) -> Result<()> {
        match self.out_dir()? {
            Some(dir) => {
                let path = dir.join(file);
                fs::write(&path, text).map_err(|e| Error::io(path, e))
            }
            None => io::stdout().write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e)),
        }
    }
}

/// CSV table to a JSON array of objects; numeric cells become numbers and
/// empty cells null.
fn csv_to_json(text: &str) -> Result<String> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::Computation(e.to_string()))?
        .clone();
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Computation(e.to_string()))?;
        let mut obj = serde_json::Map::new();
        for (h, v) in headers.iter().zip(rec.iter()) {
            let value = if v.is_empty() {
                serde_json::Value::Null
            } else if let Ok(n) = v.parse::<serde_json::Number>() {
                serde_json::Value::Number(n)
            } else {
                serde_json::Value::String(v.to_string())
            };
            obj.insert(h.to_string(), value);
        }
        rows.push(serde_json::Value::Object(obj));
    }
    Ok(serde_json::to_string_pretty(&rows).expect("rows serialise") + "\n")
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn read_heatmap(path: &Path) -> Result<Heatmap> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Heatmap::read_pgm(BufReader::new(file))
}

fn write_heatmap(dir: &Path, stem: &str, h: &Heatmap, descriptor: Option<&HeatmapDescriptor>) -> Result<()> {
    let path = dir.join(format!("{stem}.pgm"));
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = io::BufWriter::new(file);
    h.write_pgm(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(&path, e))?;
    if let Some(d) = descriptor {
        let path = dir.join(format!("{stem}.json"));
        let json = serde_json::to_string_pretty(d).expect("descriptor serialises") + "\n";
        fs::write(&path, json).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

fn heatmap_gen(ctx: &Ctx, args: &GenArgs) -> Result<()> {
    let mut spec = ctx.config.heatmap;
    spec.width = args.width.unwrap_or(spec.width);
    spec.height = args.height.unwrap_or(spec.height);
    spec.variance = args.variance.unwrap_or(spec.variance);
    spec.amplitude = args.amplitude.unwrap_or(spec.amplitude);
    spec.validate()?;
    let dir = ctx.require_out("heatmap gen")?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let Some(centers) = &args.centers else {
        let c = PixelPoint::new(args.x.unwrap_or_default(), args.y.unwrap_or_default());
        let h = generate_heatmap(c, &spec)?;
        return write_heatmap(dir, &args.name, &h, Some(&HeatmapDescriptor::new(c, &spec)));
    };
    let text = read_text(centers)?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let bad = |line: u64, col: &str, msg: String| Error::Parse {
        path: centers.clone(),
        line: line as usize,
        column: col.to_string(),
        message: msg,
    };
    let mut count = 0;
    for rec in reader.records() {
        let rec = rec.map_err(|e| bad(e.position().map_or(0, |p| p.line()), "", e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let frame: u64 = rec
            .get(0)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad(line, "frame", "expected a frame number".into()))?;
        let (x, y) = (rec.get(1).unwrap_or(""), rec.get(2).unwrap_or(""));
        let h = if x.is_empty() && y.is_empty() {
            Heatmap::zeros(spec.width, spec.height)?
        } else {
            let x: f64 = x.parse().map_err(|_| bad(line, "x", format!("`{x}` is not a number")))?;
            let y: f64 = y.parse().map_err(|_| bad(line, "y", format!("`{y}` is not a number")))?;
            generate_heatmap(PixelPoint::new(x, y), &spec)?
        };
        write_heatmap(dir, &format!("frame_{frame:06}"), &h, None)?;
        count += 1;
    }
    eprintln!("wrote {count} heatmaps to {}", dir.display());
    Ok(())
}

fn heatmap_loss(ctx: &Ctx, target: &Path, prediction: Option<&Path>) -> Result<()> {
    let truth = encode_onehot(&read_heatmap(target)?);
    let loss = match prediction {
        Some(p) => {
            let file = fs::File::open(p).map_err(|e| Error::io(p, e))?;
            let volume = read_probability_volume(BufReader::new(file))?;
            cross_entropy_loss(&volume, &truth)?
        }
        None => cross_entropy_loss(
            &UniformPrediction {
                width: truth.width(),
                height: truth.height(),
            },
            &truth,
        )?,
    };
    let value = format_significant(loss, 9);
    let text = match ctx.format {
        Format::Csv => format!("{value}\n"),
        Format::Json => format!("{{\"loss\": {value}}}\n"),
    };
    io::stdout().write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e))
}

fn decode(ctx: &Ctx, input: &Path) -> Result<()> {
    let mut detections = Vec::new();
    if input.is_dir() {
        let (frames, warnings) = list_heatmaps(input)?;
        for w in warnings {
            log::warn!("{w}");
        }
        for (frame, path) in frames {
            detections.push(decode_ball(frame, &read_heatmap(&path)?, &ctx.config.decoder)?);
        }
    } else {
        let frame = rallyscope::pipeline::frame_from_file_name(input).unwrap_or(0);
        detections.push(decode_ball(frame, &read_heatmap(input)?, &ctx.config.decoder)?);
    }
    ctx.emit_table("detections", &detections_csv(&detections))
}

fn calibrate(ctx: &Ctx, calibration: &Path) -> Result<()> {
    let file: CalibrationFile = serde_json::from_str(&read_text(calibration)?).map_err(|e| Error::Parse {
        path: calibration.to_path_buf(),
        line: e.line(),
        column: e.column().to_string(),
        message: e.to_string(),
    })?;
    let fit = estimate_homography(&file.points)?;
    if let Some(w) = &fit.warning {
        log::warn!("{w}");
    }
    eprintln!(
        "fitted {} correspondences, rms court-space residual {} m",
        file.points.len(),
        format_significant(fit.rms_error, 6)
    );
    ctx.emit_text("homography.json", &(fit.homography.to_json() + "\n"))
}

fn fitted_homography(ds: &MatchDataset) -> Result<Homography> {
    let fit = estimate_homography(&ds.working_calibration())?;
    if let Some(w) = &fit.warning {
        log::warn!("{w}");
    }
    Ok(fit.homography)
}

fn filter_players_cmd(ctx: &Ctx, dataset: &Path, homography: Option<&Path>) -> Result<()> {
    let ds = load_dataset(dataset)?;
    let h = match homography {
        Some(p) => Homography::from_json(&read_text(p)?)?,
        None => fitted_homography(&ds)?,
    };
    ctx.emit_table("players", &players_csv(&place_players(&ds, &h, &ctx.config)))
}

fn qa_skeletons(ctx: &Ctx, dataset: &Path) -> Result<()> {
    let ds = load_dataset(dataset)?;
    let set = build_features(&ds.working_skeleton_pairs());
    for (frame, slot, why) in &set.rejected {
        log::warn!("frame {frame} {slot}: {why}");
    }
    let params = ClusterParams {
        seed: ctx.seed,
        ..ctx.config.cluster
    };
    let report = cluster_skeletons(&set.features, &params)?;
    ctx.emit_table("outliers", &outliers_csv(&outlier_report(&report)))
}

fn stats_export(ctx: &Ctx, dataset: &Path) -> Result<()> {
    let ds = load_dataset(dataset)?;
    let out = ctx.require_out("stats export")?;
    let manifest = export_chart_data(&ds, out)?;
    for f in manifest.files {
        eprintln!("{}: {} records", f.file, f.records);
    }
    Ok(())
}

fn windows_csv(windows: &[StrokeWindow]) -> String {
    let mut s = format!("{}\n", StrokeWindow::CSV_HEADER);
    for w in windows {
        s += &w.csv_row();
        s.push('\n');
    }
    s
}

fn imu_windows(ctx: &Ctx, imu: &Path) -> Result<Vec<StrokeWindow>> {
    let file = fs::File::open(imu).map_err(|e| Error::io(imu, e))?;
    segment_strokes(&read_imu_csv(BufReader::new(file))?, &ctx.config.imu)
}

fn read_stroke_labels(path: &Path) -> Result<Vec<(f64, BallType)>> {
    let text = read_text(path)?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line() as usize),
            column: String::new(),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let bad = |column: &str, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            column: column.to_string(),
            message,
        };
        let t: f64 = rec
            .get(0)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad("peak_t_ms", "expected a time in ms".into()))?;
        let label: BallType = rec
            .get(1)
            .unwrap_or("")
            .parse()
            .map_err(|e: Error| bad("label", e.to_string()))?;
        out.push((t, label));
    }
    Ok(out)
}

fn imu_train(ctx: &Ctx, imu: &Path, labels: &Path) -> Result<()> {
    let windows = imu_windows(ctx, imu)?;
    let labels = read_stroke_labels(labels)?;
    let matched = match_labels(&windows, &labels, ctx.config.imu.window_ms / 2.0);
    if matched.len() < labels.len() {
        log::warn!("{} of {} labels matched no stroke window", labels.len() - matched.len(), labels.len());
    }
    let examples = matched
        .into_iter()
        .map(|(i, label)| Ok((extract_features(&windows[i])?, label)))
        .collect::<Result<Vec<_>>>()?;
    let model = train_centroids(&examples)?;
    ctx.emit_text("model.json", &(model.to_json() + "\n"))
}

fn imu_classify(ctx: &Ctx, imu: &Path, model: &Path) -> Result<()> {
    let model = StrokeModel::from_json(&read_text(model)?)?;
    let mut s = format!("{}\n", ClassifiedStroke::CSV_HEADER);
    for w in imu_windows(ctx, imu)? {
        let c = classify_stroke(&model, &extract_features(&w)?)?;
        let row = ClassifiedStroke {
            peak_t_ms: w.peak_time,
            label: c.label,
            confidence: c.confidence,
        };
        s += &row.csv_row();
        s.push('\n');
    }
    ctx.emit_table("classifications", &s)
}

fn validate(dataset: &Path) -> Result<()> {
    let ds = load_dataset(dataset)?;
    println!(
        "ok: {} labelled frames, {} rallies, {} strokes, {} calibration points",
        ds.frames.len(),
        ds.rallies.len(),
        ds.rallies.iter().map(|r| r.strokes.len()).sum::<usize>(),
        ds.calibration.len()
    );
    Ok(())
}

fn run(ctx: &Ctx, args: &RunArgs) -> Result<()> {
    let out = ctx.require_out("run")?;
    let stages = args
        .stages
        .iter()
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.parse::<Stage>())
        .collect::<Result<BTreeSet<_>>>()?;
    let ds = load_dataset(&args.dataset)?;
    let input = PipelineInput {
        dataset: &ds,
        heatmap_dir: Some(args.heatmaps.clone().unwrap_or_else(|| args.dataset.join("heatmaps"))),
    };
    let report = run_pipeline(&input, &stages, &ctx.config, ctx.seed, out)?;
    for s in &report.stages {
        let status = match s.status {
            StageStatus::Completed => "completed",
            StageStatus::Skipped => "skipped",
            StageStatus::Failed => "failed",
        };
        let reason = s.reason.as_deref().map(|r| format!(" ({r})")).unwrap_or_default();
        eprintln!("{:<10} {status}{reason} in {:.3}s", s.stage.as_str(), s.wall_time.as_secs_f64());
        for w in &s.warnings {
            eprintln!("  warning: {w}");
        }
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    let config = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    config.validate()?;
    let ctx = Ctx {
        seed: cli.seed.or(config.seed).unwrap_or(0),
        config,
        out: cli.out,
        format: cli.format,
    };
    match &cli.command {
        Command::Heatmap(HeatmapCommand::Gen(args)) => heatmap_gen(&ctx, args),
        Command::Heatmap(HeatmapCommand::Loss { target, prediction }) => {
            heatmap_loss(&ctx, target, prediction.as_deref())
        }
        Command::Decode { input } => decode(&ctx, input),
        Command::Calibrate { calibration } => calibrate(&ctx, calibration),
        Command::FilterPlayers { dataset, homography } => filter_players_cmd(&ctx, dataset, homography.as_deref()),
        Command::QaSkeletons { dataset } => qa_skeletons(&ctx, dataset),
        Command::Stats(StatsCommand::Export { dataset }) => stats_export(&ctx, dataset),
        Command::Imu(ImuCommand::Segment { imu }) => ctx.emit_table("windows", &windows_csv(&imu_windows(&ctx, imu)?)),
        Command::Imu(ImuCommand::Train { imu, labels }) => imu_train(&ctx, imu, labels),
        Command::Imu(ImuCommand::Classify { imu, model }) => imu_classify(&ctx, imu, model),
        Command::Validate { dataset } => validate(dataset),
        Command::Run(args) => run(&ctx, args),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } => EXIT_IO,
        Error::Spec(_) => EXIT_USAGE,
        _ => EXIT_VALIDATION,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Validation(violations) = &e {
                for v in violations {
                    eprintln!("  {v}");
                }
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
