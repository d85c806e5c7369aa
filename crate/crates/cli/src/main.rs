use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use eigenskin::mesh::HessianKind;
use eigenskin::solver::{ElasticEnergy, SolverConfig};

mod modes;
mod output;
mod precompute;
mod simulate;

#[derive(Parser)]
#[command(name = "eigenskin", version, about = "Rig-driven secondary motion in a skinning-eigenmode subspace")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the subspace and clustering for a mesh and rig, and save a cache.
    Precompute(PrecomputeArgs),
    /// Run an animation through the reduced solver.
    Simulate(SimulateArgs),
    /// Export one mesh per mode and affine parameter.
    Modes(ModesArgs),
    /// Stream a live session over websockets.
    Serve(ServeArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum Energy {
    Arap,
    Corot,
}

impl From<Energy> for ElasticEnergy {
    fn from(e: Energy) -> Self {
        match e {
            Energy::Arap => ElasticEnergy::Arap,
            Energy::Corot => ElasticEnergy::Corot,
        }
    }
}

impl From<Energy> for HessianKind {
    fn from(e: Energy) -> Self {
        match e {
            Energy::Arap => HessianKind::Arap,
            Energy::Corot => HessianKind::Corotational,
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct PrecomputeArgs {
    /// Tet mesh (.tet or .msh).
    #[arg(long)]
    mesh: PathBuf,
    /// Material JSON `{mu, lambda, density}`.
    #[arg(long)]
    material: PathBuf,
    /// Rig JSON `{kind, weights?}`.
    #[arg(long)]
    rig: PathBuf,
    #[arg(long, default_value_t = 8)]
    modes: usize,
    #[arg(long, default_value_t = 16)]
    clusters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Energy whose rest Hessian defines the modes.
    #[arg(long, value_enum, default_value_t = Energy::Arap)]
    hessian: Energy,
    /// Optional per-vertex momentum-leak field (JSON array).
    #[arg(long)]
    leak: Option<PathBuf>,
    /// Disable the thread pool.
    #[arg(long)]
    sequential: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize, Clone)]
struct SolverArgs {
    /// Timestep; defaults to the animation's `dt`.
    #[arg(long)]
    h: Option<f64>,
    #[arg(long, value_enum, default_value_t = Energy::Arap)]
    energy: Energy,
    #[arg(long, default_value_t = 30)]
    max_iters: usize,
    /// Convergence threshold on `max |dz|`, relative to the bounding box diagonal.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long)]
    sequential: bool,
}

impl SolverArgs {
    fn config(&self, fallback_h: f64) -> Result<SolverConfig> {
        let config = SolverConfig {
            h: self.h.unwrap_or(fallback_h),
            energy: self.energy.into(),
            max_iters: self.max_iters,
            tol: self.tol,
            execution: execution(self.sequential),
            ..Default::default()
        };
        if config.max_iters == 0 {
            bail!("--max-iters must be at least 1");
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args, Debug, Serialize)]
struct SimulateArgs {
    #[arg(long)]
    cache: PathBuf,
    /// Animation JSON `{dt, frames}`.
    #[arg(long)]
    anim: PathBuf,
    #[command(flatten)]
    solver: SolverArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Also run the full-space solver and report the per-frame difference.
    #[arg(long)]
    oracle: bool,
    /// Constant body acceleration `gx,gy,gz` applied through the lumped mass.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    gravity: Option<Vec<f64>>,
    /// Write a surface OBJ per frame.
    #[arg(long)]
    obj: bool,
    /// Write the full tet mesh per frame.
    #[arg(long)]
    tets: bool,
    /// Mesh the cache must have been built from (checked by hash, with --rig).
    #[arg(long, requires = "rig")]
    mesh: Option<PathBuf>,
    #[arg(long, requires = "mesh")]
    rig: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct ModesArgs {
    #[arg(long)]
    cache: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Largest vertex displacement as a fraction of the bounding box diagonal.
    #[arg(long, default_value_t = 0.1)]
    amplitude: f64,
}

#[derive(Args, Debug, Serialize)]
struct ServeArgs {
    #[arg(long)]
    cache: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 8765)]
    port: u16,
    #[arg(long, default_value_t = 1.0 / 60.0)]
    h: f64,
    #[arg(long, value_enum, default_value_t = Energy::Arap)]
    energy: Energy,
    #[arg(long, default_value_t = 30)]
    max_iters: usize,
    /// Step once per received `set_params` instead of on a wall clock.
    #[arg(long)]
    lockstep: bool,
}

fn execution(sequential: bool) -> eigenskin::Execution {
    if sequential {
        eigenskin::Execution::Sequential
    } else {
        eigenskin::Execution::Parallel
    }
}

fn serve(args: &ServeArgs) -> Result<()> {
    let pre = eigenskin::cache::read_cache(&args.cache).with_context(|| format!("loading {}", args.cache.display()))?;
    let config = SolverConfig {
        h: args.h,
        energy: args.energy.into(),
        max_iters: args.max_iters,
        ..Default::default()
    };
    config.validate()?;
    let addr = format!("{}:{}", args.host, args.port)
        .parse()
        .with_context(|| format!("bad address {}:{}", args.host, args.port))?;
    let options = eigenskin_service::ServeOptions {
        addr,
        pacing: if args.lockstep {
            eigenskin_service::Pacing::Lockstep
        } else {
            eigenskin_service::Pacing::RealTime
        },
    };
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let server = eigenskin_service::serve(&pre, config, options).await?;
        println!("listening on ws://{}", server.local_addr());
        tokio::signal::ctrl_c().await?;
        server.shutdown().await;
        Ok(())
    })
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Precompute(args) => precompute::run(&args),
        Command::Simulate(args) => simulate::run(&args),
        Command::Modes(args) => modes::run(&args),
        Command::Serve(args) => serve(&args),
    }
}
