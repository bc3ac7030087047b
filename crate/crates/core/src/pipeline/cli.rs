//! Command-line front end. [`run`] returns the process exit code: 0 on
//! success, 1 on a fatal error (or error entries under `--strict`), 2 on a
//! usage error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use super::{run_manifest, BatchOptions, JobReport, Manifest, ManifestEntry, RefineConfig};
use crate::error::{Error, Result};
use crate::eval::{mmd_report, SampleSet};
use crate::io;
use crate::meshproc::{self, HandMesh};

#[derive(Debug, Parser)]
#[command(name = "meshrefine", version, about = "Mesh-guided hand refinement for generated images")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Global seed; overrides the config value.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Also write float outputs and per-step states.
    #[arg(long, global = true)]
    emit_intermediates: bool,
    /// Exit nonzero when any job ends in an error.
    #[arg(long, global = true)]
    strict: bool,
    /// Record per-job wall-clock time in the report.
    #[arg(long, global = true)]
    report_timing: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Refine one image, or every row of a manifest.
    Refine(RefineArgs),
    /// Repose the hand in an image after a reference hand.
    Transform(TransformArgs),
    /// Write the guidance map (and optionally the mask) for a mesh.
    Rasterize(RasterizeArgs),
    /// Unbiased MMD² between two JSON sample sets.
    Mmd(MmdArgs),
    /// Print the configured noise schedule as JSON.
    ScheduleDump,
}

#[derive(Debug, Args)]
struct RefineArgs {
    /// Batch mode: JSON manifest of jobs.
    #[arg(long, value_name = "PATH", conflicts_with_all = ["image", "mesh", "detectors"])]
    manifest: Option<PathBuf>,
    /// Detector sidecar used instead of a mesh file.
    #[arg(long, value_name = "PATH", conflicts_with = "mesh")]
    detectors: Option<PathBuf>,
    /// Output directory; defaults to the image's (or manifest's) directory.
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    #[arg(required_unless_present = "manifest")]
    image: Option<PathBuf>,
    #[arg(required_unless_present_any = ["manifest", "detectors"])]
    mesh: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TransformArgs {
    image: PathBuf,
    /// Pose of the hand in the image.
    pose: PathBuf,
    reference_mesh: PathBuf,
    reference_pose: PathBuf,
    /// Mesh of the hand in the image, whose region is regenerated too.
    #[arg(long, value_name = "PATH", conflicts_with = "detectors")]
    mesh: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    detectors: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RasterizeArgs {
    mesh: PathBuf,
    #[arg(long)]
    width: usize,
    #[arg(long)]
    height: usize,
    /// Guidance map output (PGM or PNG).
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
    /// Also write the padded box mask.
    #[arg(long, value_name = "PATH")]
    mask: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct MmdArgs {
    /// JSON array of sample vectors.
    x: PathBuf,
    y: PathBuf,
    /// Gaussian bandwidth; the median heuristic when omitted.
    #[arg(long)]
    bandwidth: Option<f64>,
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn load_config(cli: &Cli) -> Result<RefineConfig> {
    let mut config = match &cli.config {
        Some(path) => RefineConfig::load(path)?,
        None => RefineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(Path::new("<stdout>"), e))?;
    println!("{text}");
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<i32> {
    let config = load_config(cli)?;
    match &cli.command {
        Command::Refine(args) => {
            let (manifest, default_out, batch) = match &args.manifest {
                Some(path) => {
                    let m = Manifest::load(path)?;
                    let dir = m.base_dir.clone();
                    (m, dir, true)
                }
                None => {
                    let image = args.image.as_ref().expect("clap requires an image");
                    let entry = ManifestEntry {
                        mesh: args.mesh.clone(),
                        detectors: args.detectors.clone(),
                        ..Default::default()
                    };
                    let m = Manifest::single(image, entry);
                    let dir = m.base_dir.clone();
                    (m, dir, false)
                }
            };
            finish(cli, &config, &manifest, args.out_dir.clone().unwrap_or(default_out), batch)
        }
        Command::Transform(args) => {
            let entry = ManifestEntry {
                mesh: args.mesh.clone(),
                detectors: args.detectors.clone(),
                reference_mesh: Some(args.reference_mesh.clone()),
                reference_pose: Some(args.reference_pose.clone()),
                pose: Some(args.pose.clone()),
                ..Default::default()
            };
            let manifest = Manifest::single(&args.image, entry);
            let out = args.out_dir.clone().unwrap_or_else(|| manifest.base_dir.clone());
            finish(cli, &config, &manifest, out, false)
        }
        Command::Rasterize(args) => {
            let mesh = HandMesh::load(&args.mesh)?;
            let cam = config.camera.for_image(args.width, args.height)?;
            let guidance = meshproc::rasterize(&mesh, &cam)?;
            io::write_gray(&args.out, &guidance)?;
            if let Some(path) = &args.mask {
                let mask = meshproc::mask_with_rule(&guidance, config.mask.pad_rule()?)?;
                io::write_mask(path, &mask)?;
            }
            Ok(0)
        }
        Command::Mmd(args) => {
            let x = SampleSet::new(io::read_json(&args.x)?)?;
            let y = SampleSet::new(io::read_json(&args.y)?)?;
            print_json(&mmd_report(&x, &y, args.bandwidth)?)?;
            Ok(0)
        }
        Command::ScheduleDump => {
            #[derive(Serialize)]
            struct Dump<'a> {
                steps: usize,
                schedule_kind: crate::diffusion::ScheduleKind,
                tau: &'a [usize],
                alpha_bar: &'a [f64],
            }
            let s = config.noise_schedule()?;
            print_json(&Dump {
                steps: s.steps(),
                schedule_kind: config.schedule.schedule_kind,
                tau: s.tau(),
                alpha_bar: s.alpha_bars(),
            })?;
            Ok(0)
        }
    }
}

/// Runs the jobs, writes or prints the report, and maps it to an exit code.
fn finish(cli: &Cli, config: &RefineConfig, manifest: &Manifest, out_dir: PathBuf, batch: bool) -> Result<i32> {
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let opts = BatchOptions { out_dir, emit_intermediates: cli.emit_intermediates, report_timing: cli.report_timing };
    let report: JobReport = run_manifest(manifest, config, &opts);
    if batch {
        io::write_json(&opts.out_dir.join("report.json"), &report)?;
        let s = report.summary;
        eprintln!(
            "{} jobs: {} refined, {} skipped (no hand), {} errors",
            s.total, s.refined, s.skipped_no_hand, s.error
        );
    } else {
        print_json(&report)?;
    }
    for e in report.entries.iter().filter(|e| e.message.is_some()) {
        eprintln!("{}: {}", e.image.display(), e.message.as_deref().unwrap_or_default());
    }
    Ok(if cli.strict && report.has_errors() { 1 } else { 0 })
}
