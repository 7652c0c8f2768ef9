//! Command-line front end. Thin by design: argument parsing, config
//! loading and exit-code mapping; the work happens in the library.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sp4d::config::{threads_from_env, PipelineConfig};
use sp4d::error::Sp4dError;
use sp4d::io::{read_flowmap_csv, read_image_csv, read_velocity_csv};
use sp4d::pipeline;
use sp4d::reg::VelocityField3D;
use sp4d::synth::SceneSpec;

#[derive(Parser)]
#[command(
    name = "sp4d",
    version,
    about = "Decompose dynamic LiDAR sequences into 4D superpoints, instances and deformation tracks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// Config file (flat `key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override single config keys, e.g. `--set dbscan.eps_m=0.5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<PipelineConfig, Sp4dError> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::from_file(path)?,
            None => PipelineConfig::default(),
        };
        for kv in &self.set {
            let (k, v) = kv.split_once('=').ok_or_else(|| {
                Sp4dError::Config(format!("--set expects KEY=VALUE, got '{kv}'"))
            })?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Estimate (or copy) scene flow for every adjacent frame pair.
    Flow {
        /// Directory of frame_%04d.csv / .ply files.
        #[arg(long = "in")]
        input: PathBuf,
        /// Output directory for flow_%04d.csv files.
        #[arg(long)]
        out: PathBuf,
        /// Copy/validate existing flow files instead of estimating.
        #[arg(long)]
        flow: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Full decomposition: ground removal, clustering, flow, superpoints,
    /// instances, deformation tracks.
    Decompose {
        #[arg(long = "in")]
        input: PathBuf,
        /// Precomputed flow directory; estimated when omitted.
        #[arg(long)]
        flow: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Recompute canonical frames, deformation tracks and the
    /// static/dynamic split from existing label files.
    Init {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        flow: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Evaluate the smoothness losses and verify their analytic gradients
    /// against central finite differences.
    RegCheck {
        /// Dense flow map CSV (y,x,u,v).
        #[arg(long)]
        flowmap: PathBuf,
        /// Image CSV (y,x,c0[,c1,...]), intensities in [0,1].
        #[arg(long)]
        image: PathBuf,
        /// Velocity field CSV (px,py,pz,vx,vy,vz) for the 3D check.
        #[arg(long)]
        field: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Generate a synthetic scene with ground-truth labels and flow.
    Synth {
        /// Scene spec JSON.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare a predicted decomposition against ground truth.
    Eval {
        /// Directory with predicted labels_%04d.csv (and optional flow).
        #[arg(long)]
        pred: PathBuf,
        /// Directory with ground-truth labels (and optional flow).
        #[arg(long)]
        gt: PathBuf,
        /// Report JSON path.
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), Sp4dError> {
    let threads = threads_from_env();
    match cli.command {
        Command::Flow {
            input,
            out,
            flow,
            config,
        } => {
            let cfg = config.load()?;
            let pairs = pipeline::flow_dir_cmd(&input, flow.as_deref(), &out, &cfg, threads)?;
            println!("wrote {pairs} flow files to {}", out.display());
        }
        Command::Decompose {
            input,
            flow,
            out,
            config,
        } => {
            let cfg = config.load()?;
            let manifest = pipeline::decompose_dir(&input, flow.as_deref(), &out, &cfg, threads)?;
            let dynamic = manifest
                .instances
                .iter()
                .filter(|i| i.motion == "dynamic")
                .count();
            println!(
                "{} frames, {} instances ({dynamic} dynamic) -> {}",
                manifest.frame_count,
                manifest.instances.len(),
                out.display()
            );
        }
        Command::Init {
            input,
            labels,
            flow,
            out,
            config,
        } => {
            let cfg = config.load()?;
            let manifest =
                pipeline::init_dir(&input, &labels, flow.as_deref(), &out, &cfg, threads)?;
            println!(
                "initialized {} instances -> {}",
                manifest.instances.len(),
                out.display()
            );
        }
        Command::RegCheck {
            flowmap,
            image,
            field,
            config,
        } => {
            let cfg = config.load()?;
            let fm = read_flowmap_csv(&flowmap)?;
            let img = read_image_csv(&image)?;
            let velocity = match field {
                None => None,
                Some(path) => {
                    let (positions, velocities) = read_velocity_csv(&path)?;
                    Some(VelocityField3D::new(velocities, positions, cfg.reg_k3d)?)
                }
            };
            let report = pipeline::reg_check(&fm, &img, velocity.as_ref(), &cfg)?;
            println!("loss2d = {}", report.loss2d);
            println!("grad2d max rel err = {:e}", report.grad2d_max_rel_err);
            if let (Some(l3), Some(e3)) = (report.loss3d, report.grad3d_max_rel_err) {
                println!("loss3d = {l3}");
                println!("grad3d max rel err = {e3:e}");
            }
            if !report.pass {
                return Err(Sp4dError::Invariant(format!(
                    "gradient check exceeded tolerance {:e}",
                    report.tolerance
                )));
            }
        }
        Command::Synth { spec, out } => {
            let text = std::fs::read_to_string(&spec)?;
            let scene: SceneSpec = serde_json::from_str(&text)
                .map_err(|e| Sp4dError::format(spec.display().to_string(), e.to_string()))?;
            let (frames, points) = pipeline::synth_dir(&scene, &out)?;
            println!("wrote {frames} frames ({points} points) to {}", out.display());
        }
        Command::Eval { pred, gt, out } => {
            let report = pipeline::eval_dirs(&pred, &gt)?;
            let json = serde_json::to_string_pretty(&report)
                .map_err(|e| Sp4dError::Invariant(e.to_string()))?;
            sp4d::io::atomic_write(&out, json.as_bytes())?;
            println!(
                "accuracy = {:.4}, id consistency = {:.4}, instances {} vs {}",
                report.accuracy,
                report.id_consistency,
                report.pred_dynamic_instances,
                report.gt_dynamic_objects
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            // one machine-readable line on stderr
            let line = serde_json::json!({
                "error": { "kind": err.kind(), "message": err.to_string() }
            });
            eprintln!("{line}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
