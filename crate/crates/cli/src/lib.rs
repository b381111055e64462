//! `ordocc` command-line frontend.
//!
//! Each subcommand loads its inputs, runs one stage of the pipeline and
//! writes its outputs atomically. Exit codes: 0 ok, 1 processing error,
//! 2 input error, 3 config error.

use std::ffi::OsString;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use ordocc_core::bki::{complete_scene, observations_from_cloud};
use ordocc_core::eval::{confusion, loss_report, valid_voxels, CeSign, ClassWeights};
use ordocc_core::format::decode_grid;
use ordocc_core::geomfeat::write_features_csv;
use ordocc_core::ingest::load_frame;
use ordocc_core::{
    annotate, write_grid, write_ply, AnnotationStats, LabelSpace, MetricReport, Palette, PipelineConfig, PlyEncoding,
    ProbGrid, Sidecar, VoxelGrid,
};

mod output;
mod sequence;

pub use output::Staged;
pub use sequence::{FrameRange, Sequence, Window};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    Processing = 1,
    Input = 2,
    Config = 3,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub source: anyhow::Error,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let what = match self.kind {
            ErrorKind::Processing => "processing error",
            ErrorKind::Input => "input error",
            ErrorKind::Config => "config error",
        };
        write!(f, "{what}: {:#}", self.source)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        self.kind as i32
    }
}

pub(crate) trait Kind<T> {
    fn kind(self, kind: ErrorKind) -> Result<T, CliError>;
}

impl<T, E: Into<anyhow::Error>> Kind<T> for Result<T, E> {
    fn kind(self, kind: ErrorKind) -> Result<T, CliError> {
        self.map_err(|e| CliError {
            kind,
            source: e.into(),
        })
    }
}

pub(crate) fn input_err(msg: String) -> CliError {
    CliError {
        kind: ErrorKind::Input,
        source: anyhow::anyhow!(msg),
    }
}

#[derive(Debug, Parser)]
#[command(name = "ordocc", version, about = "Traversability-cost occupancy grids from labeled LiDAR sequences")]
pub struct Cli {
    /// Pipeline config (JSON); defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads; all cores when omitted.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Validate inputs and config, write nothing.
    #[arg(long, global = true)]
    pub dry_run: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Semantic and cost grids for one key frame of a sequence.
    Annotate(SequenceArgs),
    /// Elevation and geometric features of one key frame, as CSV.
    Features(SequenceArgs),
    /// Dense semantic grid from one labeled cloud by kernel inference.
    Bki(BkiArgs),
    /// Metric report comparing a predicted grid against ground truth.
    Eval(EvalArgs),
    /// Colored point file of the occupied voxels of a grid.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
pub struct SequenceArgs {
    /// Directory with velodyne/, labels/, poses.txt and optionally calib.json.
    pub sequence: PathBuf,
    /// Key frame index; outputs live in its coordinates.
    #[arg(long)]
    pub key: usize,
    /// Frame range `start:end` (end exclusive); key ± the configured window when omitted.
    #[arg(long)]
    pub frames: Option<FrameRange>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Poses map world → sensor; invert them before use.
    #[arg(long)]
    pub invert_poses: bool,
    /// Skip the camera field-of-view mask even when calib.json exists.
    #[arg(long)]
    pub no_camera: bool,
}

#[derive(Debug, Args)]
pub struct BkiArgs {
    /// Binary cloud, 4 × f32 per point.
    pub cloud: PathBuf,
    /// Label stream, one u32 per point.
    #[arg(long)]
    pub labels: PathBuf,
    /// Output grid file; the class table goes next to it as `.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub pred: PathBuf,
    pub gt: PathBuf,
    /// Expected label space of both grids.
    #[arg(long)]
    pub classes: Option<LabelSpace>,
    /// Little-endian f32 class scores, one row per valid ground-truth voxel in ascending order.
    #[arg(long)]
    pub probs: Option<PathBuf>,
    /// Treat `--probs` as raw logits and apply softmax.
    #[arg(long, requires = "probs")]
    pub logits: bool,
    /// Class weights as a JSON array; uniform when omitted.
    #[arg(long, requires = "probs")]
    pub weights: Option<PathBuf>,
    /// Cross-entropy without the leading minus.
    #[arg(long, requires = "probs")]
    pub ce_as_printed: bool,
    /// Report file; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    pub grid: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON object of class name → [r, g, b] overriding the default colors.
    #[arg(long)]
    pub palette: Option<PathBuf>,
    /// ASCII instead of binary little-endian.
    #[arg(long)]
    pub ascii: bool,
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code; diagnostics go to standard error.
pub fn run<I, T>(args: I, stdout: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { ErrorKind::Input as i32 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli, stdout) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("ordocc: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli, stdout: &mut dyn Write) -> Result<(), CliError> {
    let cfg = load_config(cli.config.as_deref())?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError {
                kind: ErrorKind::Config,
                source: anyhow::anyhow!("--threads must be at least 1"),
            });
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().kind(ErrorKind::Processing)?;
    let threads = pool.current_num_threads();
    let report = pool.install(|| match &cli.command {
        Command::Annotate(a) => cmd_annotate(a, cfg, cli.dry_run, threads).map(|_| None),
        Command::Features(a) => cmd_features(a, cfg, cli.dry_run).map(|_| None),
        Command::Bki(a) => cmd_bki(a, &cfg, cli.dry_run).map(|_| None),
        Command::Eval(a) => cmd_eval(a, cli.dry_run),
        Command::Export(a) => cmd_export(a, cli.dry_run).map(|_| None),
    })?;
    if let Some(text) = report {
        stdout.write_all(text.as_bytes()).kind(ErrorKind::Processing)?;
    }
    Ok(())
}

pub fn load_config(path: Option<&Path>) -> Result<PipelineConfig, CliError> {
    let Some(path) = path else {
        return Ok(PipelineConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))
        .kind(ErrorKind::Config)?;
    PipelineConfig::from_json(&text)
        .map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
        .kind(ErrorKind::Config)
}

fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| input_err(format!("cannot read {}: {e}", path.display())))
}

fn read_grid_file(path: &Path) -> Result<VoxelGrid, CliError> {
    let bytes = read_file(path)?;
    decode_grid(&bytes).map_err(|e| input_err(format!("{}: {e}", path.display())))
}

fn grid_bytes(g: &VoxelGrid) -> Vec<u8> {
    let mut buf = Vec::with_capacity(g.labels().len() + 64);
    write_grid(g, &mut buf).expect("writing to memory");
    buf
}

fn sidecar_path(grid: &Path) -> PathBuf {
    grid.with_extension("json")
}

#[derive(Serialize)]
struct Manifest<'a> {
    key: usize,
    frames: [usize; 2],
    camera_mask: bool,
    unmapped_labels: usize,
    threads: usize,
    outputs: Vec<String>,
    stats: &'a AnnotationStats,
    timing_ms: Timing,
    config: &'a PipelineConfig,
}

#[derive(Serialize)]
struct Timing {
    load: f64,
    annotate: f64,
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn cmd_annotate(a: &SequenceArgs, mut cfg: PipelineConfig, dry_run: bool, threads: usize) -> Result<(), CliError> {
    if a.invert_poses {
        cfg.ingest.invert_poses = true;
    }
    let t0 = Instant::now();
    let seq = Sequence::open(&a.sequence, !a.no_camera)?;
    let window = seq.window(a.key, a.frames, cfg.ingest.frame_window)?;
    let loaded = seq.load_frames(&window, &cfg, true)?;
    let load_ms = ms(t0);
    if dry_run {
        log::info!("dry run: {} frames validated", loaded.frames.len());
        return Ok(());
    }
    let t1 = Instant::now();
    let out = annotate(
        &loaded.frames,
        &loaded.poses,
        window.key_offset(),
        seq.camera.as_ref(),
        &cfg,
    )
    .kind(ErrorKind::Processing)?;
    let annotate_ms = ms(t1);

    let stem = format!("{:06}", a.key);
    let mut staged = Staged::new(&a.out);
    let sem = format!("{stem}_sem.ordg");
    let cost = format!("{stem}_cost.ordg");
    staged.add(&sem, grid_bytes(&out.semantic));
    staged.add(&format!("{stem}_sem.json"), Sidecar::for_space(LabelSpace::Semantic).to_json().into_bytes());
    staged.add(&cost, grid_bytes(&out.cost));
    staged.add(&format!("{stem}_cost.json"), Sidecar::for_space(LabelSpace::Cost).to_json().into_bytes());
    let manifest_name = format!("{stem}_manifest.json");
    let manifest = Manifest {
        key: a.key,
        frames: [window.start, window.end],
        camera_mask: seq.camera.is_some(),
        unmapped_labels: loaded.unmapped_labels,
        threads,
        outputs: vec![sem, cost],
        stats: &out.stats,
        timing_ms: Timing {
            load: load_ms,
            annotate: annotate_ms,
        },
        config: &cfg,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    staged.add(&manifest_name, json.into_bytes());
    staged.commit().kind(ErrorKind::Processing)?;
    log::info!(
        "key {}: {} points, {} occupied voxels, {} masked cells",
        a.key,
        out.stats.points,
        out.stats.occupied_voxels,
        out.stats.mask.masked
    );
    Ok(())
}

fn cmd_features(a: &SequenceArgs, mut cfg: PipelineConfig, dry_run: bool) -> Result<(), CliError> {
    if a.invert_poses {
        cfg.ingest.invert_poses = true;
    }
    let seq = Sequence::open(&a.sequence, false)?;
    let window = seq.window(a.key, a.frames, cfg.ingest.frame_window)?;
    let loaded = seq.load_frames(&window, &cfg, true)?;
    if dry_run {
        return Ok(());
    }
    let out = annotate(&loaded.frames, &loaded.poses, window.key_offset(), None, &cfg).kind(ErrorKind::Processing)?;
    let mut csv = Vec::new();
    write_features_csv(&out.elevation, &out.features, &mut csv).expect("writing to memory");
    let mut staged = Staged::new(&a.out);
    staged.add(&format!("{:06}_features.csv", a.key), csv);
    staged.commit().kind(ErrorKind::Processing)
}

fn cmd_bki(a: &BkiArgs, cfg: &PipelineConfig, dry_run: bool) -> Result<(), CliError> {
    let cloud = read_file(&a.cloud)?;
    let labels = read_file(&a.labels)?;
    let remap = cfg.ingest.remap().kind(ErrorKind::Config)?;
    let frame = load_frame(&cloud, Some(&labels), &remap, cfg.ingest.strict_labels, 0)
        .map_err(|e| input_err(format!("{}: {e}", a.cloud.display())))?
        .frame;
    let obs = observations_from_cloud(&frame).kind(ErrorKind::Input)?;
    if dry_run {
        return Ok(());
    }
    let grid = complete_scene(&obs, &cfg.grid, &cfg.bki).kind(ErrorKind::Processing)?;
    let mut staged = Staged::single(&a.out);
    staged.add_path(&a.out, grid_bytes(&grid));
    staged.add_path(&sidecar_path(&a.out), Sidecar::for_space(LabelSpace::Semantic).to_json().into_bytes());
    staged.commit().kind(ErrorKind::Processing)
}

fn read_f32s(path: &Path) -> Result<Vec<f64>, CliError> {
    let bytes = read_file(path)?;
    if bytes.len() % 4 != 0 {
        return Err(input_err(format!("{}: length {} is not a multiple of 4", path.display(), bytes.len())));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect())
}

/// Returns the report when it goes to standard output.
fn cmd_eval(a: &EvalArgs, dry_run: bool) -> Result<Option<String>, CliError> {
    let pred = read_grid_file(&a.pred)?;
    let gt = read_grid_file(&a.gt)?;
    if pred.space() != gt.space() {
        return Err(input_err(format!(
            "label spaces differ: prediction is {}, ground truth is {}",
            pred.space(),
            gt.space()
        )));
    }
    if let Some(expected) = a.classes {
        if gt.space() != expected {
            return Err(input_err(format!("--classes {expected} but the grids are {}", gt.space())));
        }
    }
    let cm = confusion(&pred, &gt).kind(ErrorKind::Input)?;
    let mut report = MetricReport::from_confusion(&cm, gt.labels().len());
    if let Some(probs) = &a.probs {
        let values = read_f32s(probs)?;
        let classes = gt.space().class_count();
        let voxels = valid_voxels(&gt);
        let p = if a.logits {
            ProbGrid::from_logits(voxels, &values, classes)
        } else {
            ProbGrid::from_probs(voxels, &values, classes)
        }
        .map_err(|e| input_err(format!("{}: {e}", probs.display())))?;
        let weights = match &a.weights {
            None => ClassWeights::uniform(classes),
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| input_err(format!("cannot read {}: {e}", path.display())))?;
                let w: Vec<f64> = serde_json::from_str(&text).kind(ErrorKind::Config)?;
                ClassWeights::new(w).kind(ErrorKind::Config)?
            }
        };
        let sign = if a.ce_as_printed { CeSign::AsPrinted } else { CeSign::Standard };
        report.loss = Some(loss_report(&p, &gt, &weights, sign).kind(ErrorKind::Processing)?);
    }
    if dry_run {
        return Ok(None);
    }
    let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    match &a.out {
        Some(path) => {
            let mut staged = Staged::single(path);
            staged.add_path(path, json.into_bytes());
            staged.commit().kind(ErrorKind::Processing)?;
            Ok(None)
        }
        None => Ok(Some(json)),
    }
}

fn cmd_export(a: &ExportArgs, dry_run: bool) -> Result<(), CliError> {
    let grid = read_grid_file(&a.grid)?;
    let palette = match &a.palette {
        None => Palette::default_for(grid.space()),
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| input_err(format!("cannot read {}: {e}", path.display())))?;
            Palette::from_json(&text, grid.space()).kind(ErrorKind::Config)?
        }
    };
    if dry_run {
        return Ok(());
    }
    let encoding = if a.ascii { PlyEncoding::Ascii } else { PlyEncoding::BinaryLittleEndian };
    let mut buf = Vec::new();
    let n = write_ply(&grid, &palette, encoding, &mut buf).kind(ErrorKind::Processing)?;
    let mut staged = Staged::single(&a.out);
    staged.add_path(&a.out, buf);
    staged.commit().kind(ErrorKind::Processing)?;
    log::info!("{n} points written to {}", a.out.display());
    Ok(())
}
