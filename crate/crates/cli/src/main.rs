//! `occrender` command-line tool.
//!
//! Exit codes: 0 success, 2 input/config/IO error, 3 numerical failure,
//! 4 malformed file.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use serde_json::{json, Value};

use occrender::config::{apply_override, default_keys, from_value_with_path, RunConfig};
use occrender::evalio::{
    compare_image, decode_checkpoint, decode_occ, decode_pgm, decode_ppm, decode_sdf, label_pgms,
    load_dataset, load_manifest, load_occ, load_sdf, read_file, render_image, save_checkpoint,
    save_dataset, save_occ, save_pgm, save_ppm, save_sdf, semantic_preview, voxel_miou,
    RenderMetrics, MANIFEST_FILE,
};
use occrender::gradients::{fd_check, grad_check_problem};
use occrender::losses::LossReport;
use occrender::parallel::Workers;
use occrender::sdf::{extract_occupancy, OccupancyGrid, SemanticDensityField};
use occrender::synthworld::{gen_scene, render_dataset, LabelImage, SceneSpec};
use occrender::trainer::{fit, fit_from, FitObserver, MetricsRecord, TrainState};
use occrender::{Error, FormatError, Result};

#[derive(Parser)]
#[command(
    name = "occrender",
    version,
    about = "Train semantic density fields from 2D labels and extract 3D occupancy"
)]
struct Cli {
    /// Worker threads; 0 uses every available core.
    #[arg(long, global = true, env = "OCCRENDER_WORKERS", default_value_t = 1)]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene and write its labels and ground truth.
    GenScene {
        /// Scene spec JSON; the default street scene when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a field on a dataset directory.
    Train(TrainArgs),
    /// Threshold a field into an OCC1 occupancy grid.
    ExtractOcc {
        #[arg(long)]
        field: PathBuf,
        #[arg(long, default_value_t = 0.2)]
        tau: f64,
        #[arg(long)]
        out: PathBuf,
        /// Store voxels whose argmax is the free class (the last class) as empty.
        #[arg(long)]
        free_as_empty: bool,
    },
    /// Voxel IoU of a predicted grid against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Class count (empty label); inferred from the largest label if omitted.
        #[arg(long)]
        num_classes: Option<usize>,
    },
    /// Compare analytic gradients with finite differences on a random field.
    CheckGrad(ConfigArgs),
    /// Render one camera of a dataset frame with a trained field.
    Render {
        #[arg(long)]
        field: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        frame: usize,
        #[arg(long, default_value_t = 0)]
        cam: usize,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Describe a field, checkpoint, grid, image or dataset directory.
    Info {
        #[arg(long)]
        file: PathBuf,
    },
    /// Print every config key with its default value.
    ConfigSchema,
}

#[derive(Args)]
struct ConfigArgs {
    /// Run config JSON; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set raypool.m_aux=0`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Dataset directory written by `gen-scene`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides `trainer.iterations`.
    #[arg(long)]
    iterations: Option<u64>,
    /// Continue from a checkpoint file.
    #[arg(long)]
    resume: Option<PathBuf>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NonFinite { .. } => 3,
        Error::Format { .. } => 4,
        Error::Ray { source, .. } => exit_code(source),
        _ => 2,
    }
}

fn schema_text() -> String {
    let mut s = String::from("Config keys (default):\n");
    for (k, v) in default_keys() {
        s.push_str(&format!("  {k} = {v}\n"));
    }
    s
}

fn main() -> ExitCode {
    let matches = Cli::command().after_long_help(schema_text()).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let workers = Workers::new(cli.workers);
    match run(cli.command, &workers) {
        Ok(report) => {
            let text = serde_json::to_string_pretty(&report).expect("report serializes");
            // a closed pipe (e.g. `| head`) is not an error
            let _ = writeln!(std::io::stdout().lock(), "{text}");
            // a failed gradient check is a numerical failure
            if report.get("passed") == Some(&Value::Bool(false)) {
                ExitCode::from(3)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::NonFinite { iteration, rays } = &e {
                eprintln!(
                    "diagnostics: iteration {iteration}, {} offending rays",
                    rays.len()
                );
            }
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cmd: Command, workers: &Workers) -> Result<Value> {
    match cmd {
        Command::GenScene { spec, out, seed } => {
            gen_scene_cmd(spec.as_deref(), &out, seed, workers)
        }
        Command::Train(args) => train_cmd(args, workers),
        Command::ExtractOcc {
            field,
            tau,
            out,
            free_as_empty,
        } => {
            let field = load_sdf(&field)?;
            let mut grid = extract_occupancy(&field, tau);
            if free_as_empty {
                grid = grid.with_class_as_empty((field.num_classes() - 1) as u8);
            }
            save_occ(&out, &grid)?;
            let voxels = grid.labels().len();
            let occupied = grid.occupied_count();
            let mut per_class = vec![0usize; grid.num_classes()];
            for &l in grid.labels() {
                if let Some(c) = per_class.get_mut(l as usize) {
                    *c += 1;
                }
            }
            Ok(json!({
                "out": out,
                "tau": tau,
                "voxels": voxels,
                "occupied": occupied,
                "empty": voxels - occupied,
                "per_class": per_class,
            }))
        }
        Command::Eval {
            pred,
            gt,
            num_classes,
        } => {
            let pred = load_occ(&pred, num_classes)?;
            let gt = load_occ(&gt, num_classes)?;
            let l = pred.num_classes().max(gt.num_classes());
            let (pred, gt) = (widen(pred, l)?, widen(gt, l)?);
            Ok(serde_json::to_value(voxel_miou(&pred, &gt)?).expect("report serializes"))
        }
        Command::CheckGrad(args) => {
            let cfg = load_config(&args)?;
            let (field, rays) = grad_check_problem(&cfg.grad_check)?;
            let report = fd_check(&field, &rays, &cfg.render, &cfg.loss, cfg.grad_check.h)?;
            let mut v = serde_json::to_value(&report).expect("report serializes");
            v["passed"] = json!(report.passed());
            Ok(v)
        }
        Command::Render {
            field,
            data,
            frame,
            cam,
            out,
            config,
        } => {
            let cfg = load_config(&config)?;
            let field = load_sdf(&field)?;
            let data = load_dataset(&data)?;
            let img = render_image(
                &field,
                &data,
                frame,
                cam,
                &cfg.render,
                cfg.loss.opacity_min,
                workers,
            )?;
            let labels = LabelImage {
                width: img.width,
                height: img.height,
                sem: img.sem.clone(),
                depth: img
                    .sem
                    .iter()
                    .zip(&img.depth)
                    .map(|(&s, &d)| (s != data.free_class()).then_some(d.max(1e-3)))
                    .collect(),
            };
            let (sem, depth) = label_pgms(&labels);
            let stem = format!("frame_{frame:03}_cam_{cam}");
            save_pgm(&out.join(format!("{stem}_sem.pgm")), &sem)?;
            save_pgm(&out.join(format!("{stem}_depth.pgm")), &depth)?;
            save_ppm(
                &out.join(format!("{stem}_sem.ppm")),
                &semantic_preview(img.width, img.height, &img.sem, data.free_class()),
            )?;
            let mut metrics = RenderMetrics::default();
            let gt = data
                .frames
                .get(frame)
                .and_then(|f| f.labels.get(cam))
                .ok_or_else(|| {
                    Error::InvalidInput(format!("no labels for frame {frame} camera {cam}"))
                })?;
            compare_image(&img, gt, &mut metrics)?;
            Ok(json!({ "out": out, "metrics": metrics }))
        }
        Command::Info { file } => info_cmd(&file),
        Command::ConfigSchema => {
            let keys: Vec<Value> = default_keys()
                .into_iter()
                .map(|(k, v)| json!({ "key": k, "default": v }))
                .collect();
            Ok(json!({ "keys": keys, "defaults": RunConfig::default().to_value() }))
        }
    }
}

/// Moves the empty label of an inferred grid up to `num_classes`.
fn widen(grid: OccupancyGrid, num_classes: usize) -> Result<OccupancyGrid> {
    if grid.num_classes() == num_classes {
        return Ok(grid);
    }
    let empty = grid.empty_label();
    let labels = grid
        .labels()
        .iter()
        .map(|&l| if l == empty { num_classes as u8 } else { l })
        .collect();
    OccupancyGrid::new(grid.dims(), num_classes, labels)
}

fn read_json(path: &Path) -> Result<Value> {
    let bytes = read_file(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Config {
        path: format!(
            "{}: line {} column {}",
            path.display(),
            e.line(),
            e.column()
        ),
        message: e.to_string(),
    })
}

fn load_config(args: &ConfigArgs) -> Result<RunConfig> {
    let mut doc = match &args.config {
        Some(p) => read_json(p)?,
        None => RunConfig::default().to_value(),
    };
    for o in &args.overrides {
        apply_override(&mut doc, o)?;
    }
    RunConfig::from_value(doc)
}

fn gen_scene_cmd(spec: Option<&Path>, out: &Path, seed: u64, workers: &Workers) -> Result<Value> {
    let spec: SceneSpec = match spec {
        Some(p) => from_value_with_path(read_json(p)?)?,
        None => SceneSpec::default(),
    };
    let scene = gen_scene(&spec, seed)?;
    let data = render_dataset(&scene, workers)?;
    let manifest = save_dataset(out, &scene, &data, seed)?;
    Ok(json!({
        "out": out,
        "manifest": out.join(MANIFEST_FILE),
        "frames": manifest.frames.len(),
        "cameras": manifest.cameras.len(),
        "label_pairs": manifest.label_pairs(),
        "gt_occupied": data.gt.as_ref().map(|g| g.occupied_count()),
    }))
}

struct RunWriter {
    metrics: BufWriter<File>,
    checkpoints: PathBuf,
}

impl FitObserver for RunWriter {
    fn on_eval(&mut self, record: &MetricsRecord) -> Result<()> {
        let line = serde_json::to_string(record).expect("record serializes");
        writeln!(self.metrics, "{line}")
            .and_then(|_| self.metrics.flush())
            .map_err(|e| Error::Io {
                path: "metrics.jsonl".into(),
                source: e,
            })
    }

    fn on_checkpoint(&mut self, state: &TrainState) -> Result<()> {
        save_checkpoint(
            &self
                .checkpoints
                .join(format!("iter_{:06}.ckpt", state.iteration)),
            state,
        )
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn train_cmd(args: TrainArgs, workers: &Workers) -> Result<Value> {
    let mut cfg = load_config(&args.config)?;
    if let Some(n) = args.iterations {
        cfg.trainer.iterations = n;
    }
    cfg.validate()?;
    let data = load_dataset(&args.data)?;
    std::fs::create_dir_all(&args.out).map_err(|e| io_err(&args.out, e))?;
    let config_path = args.out.join("config.json");
    occrender::evalio::write_file(
        &config_path,
        serde_json::to_string_pretty(&cfg.to_value())
            .expect("config serializes")
            .as_bytes(),
    )?;
    let metrics_path = args.out.join("metrics.jsonl");
    let metrics = OpenOptions::new()
        .create(true)
        .write(true)
        .append(args.resume.is_some())
        .truncate(args.resume.is_none())
        .open(&metrics_path)
        .map_err(|e| io_err(&metrics_path, e))?;
    let mut writer = RunWriter {
        metrics: BufWriter::new(metrics),
        checkpoints: args.out.join("checkpoints"),
    };
    let output = match &args.resume {
        Some(p) => {
            let state = occrender::evalio::load_checkpoint(p)?;
            fit_from(state, &data, &cfg, workers, &mut writer)?
        }
        None => fit(&data, &cfg, workers, &mut writer)?,
    };
    let field_path = args.out.join("field.sdf");
    save_sdf(&field_path, &output.state.field)?;
    let final_ckpt = args.out.join("final.ckpt");
    save_checkpoint(&final_ckpt, &output.state)?;
    let last: Option<LossReport> = output.losses.last().copied();
    Ok(json!({
        "iterations": output.state.iteration,
        "field": field_path,
        "checkpoint": final_ckpt,
        "metrics": metrics_path,
        "config": config_path,
        "last_loss": last,
        "eval": output.history.last().and_then(|r| r.eval.clone()),
    }))
}

fn info_cmd(path: &Path) -> Result<Value> {
    if path.is_dir() {
        let m = load_manifest(path)?;
        return Ok(json!({
            "kind": "dataset",
            "frames": m.frames.len(),
            "cameras": m.cameras.len(),
            "label_pairs": m.label_pairs(),
            "current": m.current,
            "grid": m.grid,
            "classes": m.classes,
        }));
    }
    let bytes = read_file(path)?;
    let attach = |e: Error| match e {
        Error::Format { path: None, source } => Error::Format {
            path: Some(path.to_path_buf()),
            source,
        },
        other => other,
    };
    let field_info = |f: &SemanticDensityField| {
        json!({
            "dims": f.dims(),
            "num_classes": f.num_classes(),
            "origin": [f.origin().x, f.origin().y, f.origin().z],
            "voxel_size": f.voxel_size(),
            "params": f.param_count(),
        })
    };
    match bytes.get(..4) {
        Some(b"SDF1") => match decode_sdf(&bytes) {
            Ok(f) => Ok(json!({ "kind": "field", "field": field_info(&f) })),
            Err(Error::Format {
                source: FormatError::TrailingBytes { .. },
                ..
            }) => {
                let s = decode_checkpoint(&bytes).map_err(attach)?;
                Ok(json!({
                    "kind": "checkpoint",
                    "iteration": s.iteration,
                    "seed": s.seed,
                    "field": field_info(&s.field),
                }))
            }
            Err(e) => Err(attach(e)),
        },
        Some(b"OCC1") => {
            let g = decode_occ(&bytes, None).map_err(attach)?;
            Ok(json!({
                "kind": "occupancy",
                "dims": g.dims(),
                "max_label": g.num_classes(),
                "occupied_excluding_max_label": g.occupied_count(),
            }))
        }
        Some(m) if m.starts_with(b"P5") => {
            let p = decode_pgm(&bytes).map_err(attach)?;
            Ok(json!({ "kind": "pgm", "width": p.width, "height": p.height, "maxval": p.maxval }))
        }
        Some(m) if m.starts_with(b"P6") => {
            let p = decode_ppm(&bytes).map_err(attach)?;
            Ok(json!({ "kind": "ppm", "width": p.width, "height": p.height }))
        }
        _ => Err(Error::Format {
            path: Some(path.to_path_buf()),
            source: FormatError::MagicMismatch {
                expected: "SDF1, OCC1, P5 or P6".into(),
                found: String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned(),
            },
        }),
    }
}
