use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use radar3d::augmentation::apply_pipeline;
use radar3d::bev::{crop_cloud, rasterize, CHANNEL_ORDER};
use radar3d::codec::{assign_and_encode, decode_predictions, nms_rotated, TargetTensor, TensorHeader};
use radar3d::dataset::{
    build_gt_database, parse_point_cloud, serialize_point_cloud, write_frames, Manifest, ManifestEntry,
};
use radar3d::eval::{evaluate_dataset, DetectionSet};
use radar3d::io::{read_bytes, write_atomic};
use radar3d::lidar2radar::radarize;
use radar3d::report::{emit_report, summary_table, ReportFormat};
use radar3d::rng::frame_rng;
use radar3d::synth::{generate_scene, perturb_to_detections};
use radar3d::{AnchorGrid, ApMode, EvalReport, Frame, PipelineConfig, Point};

const EXIT_VALIDATION: u8 = 1;
const EXIT_IO: u8 = 2;
const EXIT_USAGE: u8 = 64;

#[derive(Parser, Debug)]
#[command(name = "radar3d", version, about = "Radar-centric 3D detection data pipeline")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// Pipeline configuration (JSON).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `--set radarization.max_points=5000`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Global seed; replaces the config's `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for per-frame processing (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Convert point clouds between ASCII `x y z intensity` rows and the binary format.
    Convert {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Target format; inferred from the output extension when omitted.
        #[arg(long, value_enum)]
        to: Option<CloudFormat>,
    },
    /// Turn LiDAR clouds into sparse radar-like clouds.
    Radarize(ManifestIo),
    /// Write augmented variants of manifest frames.
    Augment {
        #[command(flatten)]
        io: ManifestIo,
        /// Only augment this frame.
        #[arg(long)]
        frame: Option<String>,
        #[arg(long, default_value_t = 1)]
        variants: usize,
    },
    /// Rasterize clouds into bird's-eye-view tensors.
    Rasterize {
        #[command(flatten)]
        io: ManifestIo,
        /// Also write one greyscale PPM per channel.
        #[arg(long)]
        ppm: bool,
    },
    /// Encode labels into anchor target tensors.
    Encode(ManifestIo),
    /// Generate synthetic frames and matching simulated detections.
    Synth {
        #[arg(long)]
        objects: Option<usize>,
        #[arg(long, default_value_t = 1)]
        frames: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate detections against a ground-truth manifest.
    Eval {
        #[arg(long)]
        gt: PathBuf,
        /// Detections JSON keyed by frame id.
        #[arg(long, conflicts_with = "pred_dir", required_unless_present = "pred_dir")]
        det: Option<PathBuf>,
        /// Directory of `<frame>.targets.bin` prediction tensors with JSON headers.
        #[arg(long)]
        pred_dir: Option<PathBuf>,
        #[arg(long)]
        iou: Option<f64>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        score_threshold: Option<f64>,
        #[arg(long)]
        nms_iou: Option<f64>,
        #[arg(long, value_delimiter = ',', default_value = "json,csv,svg")]
        format: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-render a saved report.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "json,csv,svg")]
        format: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
struct ManifestIo {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum CloudFormat {
    Bin,
    Txt,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Eleven,
    Forty,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    let io = e.chain().any(|c| {
        c.is::<std::io::Error>() || c.downcast_ref::<radar3d::Error>().is_some_and(radar3d::Error::is_io)
    });
    if io {
        EXIT_IO
    } else {
        EXIT_VALIDATION
    }
}

fn load_config(g: &GlobalArgs) -> Result<PipelineConfig> {
    let text = match &g.config {
        Some(p) => Some(String::from_utf8(read_bytes(p)?).context("config is not UTF-8")?),
        None => None,
    };
    let mut cfg = PipelineConfig::load(text.as_deref(), &g.overrides)?;
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.global)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cli.global.jobs).build()?;
    pool.install(|| dispatch(cli.command, &cfg))
}

fn dispatch(cmd: Command, cfg: &PipelineConfig) -> Result<()> {
    match cmd {
        Command::Convert { input, output, to } => convert(&input, &output, to),
        Command::Radarize(io) => cmd_radarize(&io, cfg),
        Command::Augment { io, frame, variants } => cmd_augment(&io, frame.as_deref(), variants, cfg),
        Command::Rasterize { io, ppm } => cmd_rasterize(&io, ppm, cfg),
        Command::Encode(io) => cmd_encode(&io, cfg),
        Command::Synth { objects, frames, out } => cmd_synth(objects, frames, &out, cfg),
        Command::Eval { gt, det, pred_dir, iou, mode, score_threshold, nms_iou, format, out } => {
            let mut cfg = cfg.clone();
            if let Some(t) = iou {
                cfg.evaluation.iou_threshold = t;
            }
            if let Some(m) = mode {
                cfg.evaluation.mode = match m {
                    ModeArg::Eleven => ApMode::ElevenPoint,
                    ModeArg::Forty => ApMode::FortyPoint,
                };
            }
            if let Some(t) = score_threshold {
                cfg.targets.score_threshold = t;
            }
            if let Some(t) = nms_iou {
                cfg.targets.nms_iou_threshold = t;
            }
            cfg.validate()?;
            let formats = parse_formats(&format)?;
            cmd_eval(&gt, det.as_deref(), pred_dir.as_deref(), &formats, &out, &cfg)
        }
        Command::Report { input, format, out } => {
            let formats = parse_formats(&format)?;
            let report: EvalReport = serde_json::from_slice(&read_bytes(&input)?)
                .with_context(|| format!("{} is not an evaluation report", input.display()))?;
            write_report(&report, &formats, &out)
        }
    }
}

fn parse_formats(raw: &[String]) -> Result<Vec<ReportFormat>> {
    raw.iter().map(|s| s.parse::<ReportFormat>().map_err(|e| anyhow!(e))).collect()
}

/// Seed for one pipeline stage: the global seed mixed with the stage's own.
fn stage_seed(cfg: &PipelineConfig, module_seed: u64) -> u64 {
    cfg.seed ^ module_seed
}

fn load_frames(manifest: &Manifest) -> Result<Vec<Frame>> {
    manifest
        .entries
        .par_iter()
        .map(|e| manifest.load_frame(e).map_err(|err| anyhow::Error::new(radar3d::Error::from(err))))
        .collect::<Result<Vec<_>>>()
        .with_context(|| format!("loading frames from {}", manifest.base_dir.display()))
}

fn load_manifest(path: &Path) -> Result<Manifest> {
    Manifest::load(path).map_err(|e| radar3d::Error::from(e).into())
}

fn core<T, E: Into<radar3d::Error>>(r: std::result::Result<T, E>) -> Result<T> {
    r.map_err(|e| anyhow::Error::new(e.into()))
}

fn convert(input: &Path, output: &Path, to: Option<CloudFormat>) -> Result<()> {
    let to = match to {
        Some(t) => t,
        None => match output.extension().and_then(|e| e.to_str()) {
            Some("bin") => CloudFormat::Bin,
            Some("txt") | Some("xyz") => CloudFormat::Txt,
            _ => bail!("cannot infer target format from {}; pass --to", output.display()),
        },
    };
    let bytes = read_bytes(input)?;
    let out = match to {
        CloudFormat::Bin => serialize_point_cloud(&parse_ascii(&String::from_utf8_lossy(&bytes))?),
        CloudFormat::Txt => {
            let points = core(parse_point_cloud(&bytes))?;
            let mut s = String::with_capacity(points.len() * 32);
            for p in &points {
                s.push_str(&format!("{} {} {} {}\n", p.x as f32, p.y as f32, p.z as f32, p.intensity as f32));
            }
            s.into_bytes()
        }
    };
    write_atomic(output, &out)?;
    Ok(())
}

fn parse_ascii(text: &str) -> Result<Vec<Point>> {
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .with_context(|| format!("line {}: not a number", i + 1))?;
        if v.len() != 4 {
            bail!("line {}: expected 4 values (x y z intensity), found {}", i + 1, v.len());
        }
        let p = Point::new(v[0], v[1], v[2], v[3]);
        if !p.is_finite() {
            bail!("line {}: non-finite coordinate", i + 1);
        }
        points.push(p);
    }
    Ok(points)
}

fn cmd_radarize(io: &ManifestIo, cfg: &PipelineConfig) -> Result<()> {
    let manifest = load_manifest(&io.manifest)?;
    let frames = load_frames(&manifest)?;
    let seed = stage_seed(cfg, cfg.radarization.seed);
    let out: Vec<Frame> = frames
        .par_iter()
        .map(|f| {
            let mut rng = frame_rng(seed, &f.frame_id);
            Frame { cloud: radarize(&f.cloud, &cfg.radarization, &mut rng), ..f.clone() }
        })
        .collect();
    core(write_frames(&io.out, &out))?;
    Ok(())
}

fn cmd_augment(io: &ManifestIo, only: Option<&str>, variants: usize, cfg: &PipelineConfig) -> Result<()> {
    let manifest = load_manifest(&io.manifest)?;
    if let Some(id) = only {
        if !manifest.entries.iter().any(|e| e.frame_id == id) {
            bail!("frame {id:?} is not in the manifest");
        }
    }
    let frames = load_frames(&manifest)?;
    let db = build_gt_database(&frames, cfg.gt_min_points);
    let seed = stage_seed(cfg, cfg.augmentation.seed);
    let jobs: Vec<(&Frame, usize)> = frames
        .iter()
        .filter(|f| only.is_none_or(|id| f.frame_id == id))
        .flat_map(|f| (0..variants).map(move |v| (f, v)))
        .collect();
    let out: Vec<Frame> = jobs
        .par_iter()
        .map(|&(f, v)| {
            let id = format!("{}_aug{v}", f.frame_id);
            let mut rng = frame_rng(seed, &id);
            let mut g = apply_pipeline(f, &cfg.augmentation, Some(&db), &mut rng);
            g.frame_id = id.clone();
            g.cloud.frame_id = id;
            g
        })
        .collect();
    core(write_frames(&io.out, &out))?;
    Ok(())
}

fn file_stem(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

fn cmd_rasterize(io: &ManifestIo, ppm: bool, cfg: &PipelineConfig) -> Result<()> {
    let manifest = load_manifest(&io.manifest)?;
    manifest.entries.par_iter().try_for_each(|e| -> Result<()> {
        let frame = core(manifest.load_frame(e))?;
        let cloud = crop_cloud(&frame.cloud, &cfg.grid.crop);
        let grid = core(rasterize(&cloud, &cfg.grid))?;
        let stem = file_stem(&e.frame_id);
        core(grid.write(&io.out.join(format!("{stem}.bev.bin")), &io.out.join(format!("{stem}.bev.json"))))?;
        if ppm {
            for (c, name) in CHANNEL_ORDER.iter().enumerate() {
                write_atomic(&io.out.join(format!("{stem}_{name}.ppm")), &grid.channel_ppm(c))?;
            }
        }
        Ok(())
    })
}

fn cmd_encode(io: &ManifestIo, cfg: &PipelineConfig) -> Result<()> {
    let manifest = load_manifest(&io.manifest)?;
    let codec = cfg.codec();
    let grid = core(AnchorGrid::new(&codec))?;
    manifest.entries.par_iter().try_for_each(|e| -> Result<()> {
        let frame = core(manifest.load_frame(e))?;
        // Labels the grid cannot represent are not training targets.
        let labels: Vec<_> = frame
            .labels
            .into_iter()
            .filter(|l| codec.classes.contains(&l.class_name) && cfg.grid.crop.contains_xy(l.bbox.cx, l.bbox.cy))
            .collect();
        let enc = core(assign_and_encode(&labels, &grid))?;
        let stem = file_stem(&e.frame_id);
        core(enc.tensor.write(
            &io.out.join(format!("{stem}.targets.bin")),
            &io.out.join(format!("{stem}.targets.json")),
            &codec.classes,
        ))?;
        Ok(())
    })
}

fn cmd_synth(objects: Option<usize>, n_frames: usize, out: &Path, cfg: &PipelineConfig) -> Result<()> {
    let mut spec = cfg.synth.clone();
    if let Some(n) = objects {
        spec.n_objects = n;
    }
    core(spec.validate())?;
    let seed = stage_seed(cfg, spec.seed);
    let generated: Vec<(Frame, Vec<radar3d::Detection>)> = (0..n_frames)
        .into_par_iter()
        .map(|i| -> Result<_> {
            let id = format!("{i:06}");
            let mut rng = frame_rng(seed, &id);
            let frame = core(generate_scene(&spec, &id, &mut rng))?;
            let dets = perturb_to_detections(&frame, &cfg.detections, &spec.crop, &mut rng);
            Ok((frame, dets))
        })
        .collect::<Result<_>>()?;
    let (frames, dets): (Vec<Frame>, Vec<_>) = generated.into_iter().unzip();
    core(write_frames(out, &frames))?;
    let set: DetectionSet = frames.iter().map(|f| f.frame_id.clone()).zip(dets).collect();
    write_json(&out.join("detections.json"), &set)
}

fn write_json(path: &Path, value: &DetectionSet) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)?;
    Ok(())
}

fn load_predictions(dir: &Path, manifest: &Manifest, cfg: &PipelineConfig) -> Result<DetectionSet> {
    let grid = core(AnchorGrid::new(&cfg.codec()))?;
    let decoded: Vec<(String, Vec<radar3d::Detection>)> = manifest
        .entries
        .par_iter()
        .map(|e: &ManifestEntry| -> Result<_> {
            let stem = file_stem(&e.frame_id);
            let header_path = dir.join(format!("{stem}.targets.json"));
            let header: TensorHeader = serde_json::from_slice(&read_bytes(&header_path)?)
                .with_context(|| format!("bad tensor header {}", header_path.display()))?;
            let tensor = core(TargetTensor::from_bytes(&header, &read_bytes(&dir.join(format!("{stem}.targets.bin")))?))?;
            let dets = core(decode_predictions(&tensor, &grid, cfg.targets.score_threshold))?;
            Ok((e.frame_id.clone(), nms_rotated(&dets, cfg.targets.nms_iou_threshold)))
        })
        .collect::<Result<_>>()?;
    Ok(decoded.into_iter().collect())
}

fn cmd_eval(
    gt: &Path,
    det: Option<&Path>,
    pred_dir: Option<&Path>,
    formats: &[ReportFormat],
    out: &Path,
    cfg: &PipelineConfig,
) -> Result<()> {
    let manifest = load_manifest(gt)?;
    let frames = load_frames(&manifest)?;
    let detections: DetectionSet = match (det, pred_dir) {
        (Some(path), _) => {
            let parsed: BTreeMap<String, Vec<radar3d::Detection>> = serde_json::from_slice(&read_bytes(path)?)
                .with_context(|| format!("{} is not a detections file", path.display()))?;
            parsed
        }
        (None, Some(dir)) => load_predictions(dir, &manifest, cfg)?,
        (None, None) => bail!("one of --det or --pred-dir is required"),
    };
    let report = core(evaluate_dataset(&detections, &frames, &cfg.evaluation))?;
    write_report(&report, formats, out)
}

fn write_report(report: &EvalReport, formats: &[ReportFormat], out: &Path) -> Result<()> {
    core(emit_report(report, formats, out))?;
    let table = summary_table(report);
    write_atomic(&out.join("summary.txt"), table.as_bytes())?;
    print!("{table}");
    Ok(())
}
