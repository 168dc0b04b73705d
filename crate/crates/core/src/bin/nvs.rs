use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use serde_json::json;

use nvs_core::experiment::{
    build_denoiser, lambda_sweep, load_scene, render_synthetic_cmd, run_synthesize, ExperimentConfig, SweepParams,
};
use nvs_core::geometry::SyntheticScene;
use nvs_core::solver::{make_trajectory, TrajectorySpec};
use nvs_core::verify::{junit_xml, run_suite, Suite, Tolerances};
use nvs_core::wire::WireServer;
use nvs_core::Error;

#[derive(Parser)]
#[command(name = "nvs", version, about = "Guided diffusion sampling for novel view synthesis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write frames, traces and report.json.
    Synthesize {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        denoiser: Option<String>,
    },
    /// Print the guidance weight over a sigma by pose-distance grid as CSV.
    LambdaSweep {
        /// JSON file with any of the grid fields; flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        v1: Option<f64>,
        #[arg(long)]
        v2: Option<f64>,
        #[arg(long)]
        v3: Option<f64>,
        #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
        sigma_range: Option<Vec<f64>>,
        #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
        pose_range: Option<Vec<f64>>,
        #[arg(long)]
        sigma_points: Option<usize>,
        #[arg(long)]
        pose_points: Option<usize>,
        /// Also write `lambda_sweep.csv` here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run acceptance criteria; exit 0 only when all pass.
    Verify {
        #[arg(long, default_value = "all")]
        suite: Suite,
        /// JSON tolerance overrides.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory for the JUnit XML; printed to stdout otherwise.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a scene directory rendered along a trajectory.
    RenderSynthetic {
        #[arg(long, default_value = "plane")]
        scene: SyntheticScene,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long, default_value_t = 64)]
        height: usize,
        /// Trajectory as JSON, e.g. `{"kind":"line","frames":5,"extent":0.3,"direction":[1,0,0]}`.
        #[arg(long)]
        trajectory: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the built-in denoiser of a config over the wire protocol.
    #[command(hide = true)]
    Serve {
        #[arg(long)]
        config: PathBuf,
        /// `host:port`; stdin/stdout when absent.
        #[arg(long)]
        listen: Option<String>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidInput(_)
        | Error::ShapeMismatch { .. }
        | Error::UnknownScene(_)
        | Error::Json(_)
        | Error::Png(_)
        | Error::File { .. } => 2,
        _ => 1,
    }
}

fn kind(e: &Error) -> &'static str {
    match e {
        Error::InvalidInput(_) => "invalid_input",
        Error::ShapeMismatch { .. } => "shape_mismatch",
        Error::UnknownScene(_) => "unknown_scene",
        Error::Capability(_) => "capability",
        Error::NonFinite { .. } => "non_finite",
        Error::Stage { .. } => "stage",
        Error::Wire(_) => "wire",
        Error::File { .. } => "file",
        Error::Io(_) => "io",
        Error::Json(_) => "json",
        Error::Png(_) => "png",
    }
}

fn synthesize(config: &Path, seed: Option<u64>, out: Option<PathBuf>, denoiser: Option<String>) -> Result<(), Error> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(out) = out {
        cfg.out = out;
    }
    if let Some(uri) = denoiser {
        cfg.denoiser = uri;
    }
    cfg.validate()?;
    let result = run_synthesize(&cfg, &cfg.out)?;
    if let Some(mse) = result.mse {
        println!("mse vs ground truth: {mse:.6e}");
    }
    println!("wrote {}", cfg.out.display());
    Ok(())
}

fn sweep_params(config: Option<&Path>) -> Result<SweepParams, Error> {
    match config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::File {
                path: path.into(),
                source: e,
            })?;
            Ok(serde_json::from_str(&text)?)
        }
        None => Ok(SweepParams::default()),
    }
}

fn serve(config: &Path, listen: Option<String>) -> Result<(), Error> {
    let mut cfg = ExperimentConfig::load(config)?;
    if !cfg.denoiser.starts_with("builtin:") {
        cfg.denoiser = "builtin:gmm".into();
    }
    let scene = load_scene(&cfg.scene)?;
    let den = match &cfg.chain_360 {
        Some(chain) => build_denoiser(&cfg, &scene, None, chain.frames)?,
        None => {
            let traj = make_trajectory(&cfg.trajectory, &scene.input.views[0].pose)?;
            build_denoiser(&cfg, &scene, Some(&traj), traj.len())?
        }
    };
    let server = WireServer::new(Arc::from(den));
    match listen {
        Some(addr) => {
            let listener = std::net::TcpListener::bind(&addr)?;
            log::info!("serving on {}", listener.local_addr()?);
            server.serve_listener(listener)?;
        }
        None => server.serve_stdio()?,
    }
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Synthesize {
            config,
            seed,
            out,
            denoiser,
        } => synthesize(&config, seed, out, denoiser)?,
        Command::LambdaSweep {
            config,
            v1,
            v2,
            v3,
            sigma_range,
            pose_range,
            sigma_points,
            pose_points,
            out,
        } => {
            let mut p = sweep_params(config.as_deref())?;
            p.weights.v1 = v1.unwrap_or(p.weights.v1);
            p.weights.v2 = v2.unwrap_or(p.weights.v2);
            p.weights.v3 = v3.unwrap_or(p.weights.v3);
            if let Some(r) = sigma_range {
                p.sigma_range = [r[0], r[1]];
            }
            if let Some(r) = pose_range {
                p.pose_range = [r[0], r[1]];
            }
            p.sigma_points = sigma_points.unwrap_or(p.sigma_points);
            p.pose_points = pose_points.unwrap_or(p.pose_points);
            let mut csv = Vec::new();
            lambda_sweep(&p, &mut csv)?;
            if let Some(dir) = out {
                fs::create_dir_all(&dir).map_err(|e| Error::File {
                    path: dir.clone(),
                    source: e,
                })?;
                let path = dir.join("lambda_sweep.csv");
                fs::write(&path, &csv).map_err(|e| Error::File { path, source: e })?;
            }
            io::stdout().write_all(&csv)?;
        }
        Command::Verify { suite, config, out } => {
            let tol = match config {
                Some(path) => {
                    let text = fs::read_to_string(&path).map_err(|e| Error::File { path, source: e })?;
                    serde_json::from_str::<Tolerances>(&text)?
                }
                None => Tolerances::default(),
            };
            let results = run_suite(suite, &tol);
            for r in &results {
                println!("{r}");
            }
            let failed: Vec<_> = results.iter().filter(|r| !r.passed).collect();
            println!("{} of {} criteria passed", results.len() - failed.len(), results.len());
            let xml = junit_xml(suite, &results);
            match out {
                Some(dir) => {
                    fs::create_dir_all(&dir).map_err(|e| Error::File {
                        path: dir.clone(),
                        source: e,
                    })?;
                    let path = dir.join(format!("verify-{suite}.xml"));
                    fs::write(&path, xml).map_err(|e| Error::File { path, source: e })?;
                }
                None => print!("{xml}"),
            }
            if !failed.is_empty() {
                for r in failed {
                    eprintln!("failed: criterion {} {}", r.id, r.name);
                }
                return Ok(ExitCode::from(1));
            }
        }
        Command::RenderSynthetic {
            scene,
            width,
            height,
            trajectory,
            out,
        } => {
            let spec: TrajectorySpec = match trajectory {
                Some(text) => serde_json::from_str(&text)?,
                None => TrajectorySpec::Line {
                    frames: 5,
                    extent: 0.3,
                    direction: [1.0, 0.0, 0.0],
                },
            };
            let traj = render_synthetic_cmd(scene, width, height, &spec, &out)?;
            println!("wrote {} views to {}", traj.len(), out.display());
        }
        Command::Serve { config, listen } => serve(&config, listen)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("NVS_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{}", json!({"error": kind(&e), "message": e.to_string()}));
            ExitCode::from(exit_code(&e))
        }
    }
}
