use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use fogstore_core::placement::place_replicas;
use fogstore_core::topology::Topology;
use fogstore_core::GeoPoint;
use fogstore_sim::config::load_topology;
use fogstore_sim::experiment::{write_file, write_traces};
use fogstore_sim::{presets, render_csv, Experiment, ExperimentConfig, Overrides};

#[derive(Parser)]
#[command(name = "fogstore-sim", version, about = "Simulated fog key-value store experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment on its base topology only.
    Run(RunArgs),
    /// Run every latency setting listed in the experiment's sweep.
    Sweep(RunArgs),
    /// Write the star topologies, workloads, regions and experiment files.
    GenPaperConfigs {
        #[arg(long, default_value = "configs")]
        out: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        ops: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Print replica placements as CSV.
    Place {
        topology: PathBuf,
        #[arg(long, default_value_t = 3)]
        rf: usize,
        /// Data location `x,y` in metres; repeatable. Defaults to every
        /// storage node's position.
        #[arg(long = "at", value_parser = parse_point)]
        points: Vec<GeoPoint>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Load an experiment and every file it references without running it.
    Validate { config: PathBuf },
}

#[derive(Args)]
struct RunArgs {
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the workload's op count.
    #[arg(long)]
    ops: Option<usize>,
    /// Overrides the config's output path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory for per-cell event traces.
    #[arg(long)]
    trace: Option<PathBuf>,
}

fn parse_point(s: &str) -> Result<GeoPoint, String> {
    let (x, y) = s.split_once(',').ok_or("expected x,y")?;
    let num = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}"));
    Ok(GeoPoint::new(num(x)?, num(y)?))
}

fn run(args: &RunArgs, sweep: bool) -> Result<()> {
    let cfg = ExperimentConfig::load(&args.config)?;
    if sweep && cfg.sweep.is_empty() {
        bail!(
            "{}: field `sweep`: must not be empty for a sweep",
            args.config.display()
        );
    }
    let overrides = Overrides {
        seed: args.seed,
        ops: args.ops,
    };
    let exp = Experiment::load(&cfg, sweep, overrides)?;
    let reports = exp.run(args.trace.is_some())?;
    for r in reports.iter().filter(|r| r.failed > 0) {
        eprintln!("{}: {} queries failed", r.name(), r.failed);
    }
    let out = args.out.as_deref().unwrap_or(&cfg.output_path);
    write_file(out, &render_csv(&reports))?;
    if let Some(dir) = &args.trace {
        write_traces(dir, &reports)?;
    }
    let rows: usize = reports.iter().map(|r| r.rows.len()).sum();
    eprintln!("wrote {rows} rows to {}", out.display());
    Ok(())
}

fn place(topology: &Path, rf: usize, points: &[GeoPoint], out: Option<&Path>) -> Result<()> {
    let topo: Topology = load_topology(topology)?;
    let points: Vec<GeoPoint> = if points.is_empty() {
        topo.storage_nodes().map(|ix| topo.node(ix).geo).collect()
    } else {
        points.to_vec()
    };
    // one row per key: key, replicas in placement order, degraded flag
    let mut csv = String::new();
    for (i, p) in points.iter().enumerate() {
        let map = place_replicas(&format!("key{i}"), *p, &topo, rf).context("placement failed")?;
        csv.push_str(&map.csv_row(&topo));
        csv.push('\n');
    }
    match out {
        Some(path) => write_file(path, &csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn validate(config: &Path) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    let exp = Experiment::load(&cfg, true, Overrides::default())?;
    println!(
        "{}: {} settings, {} cells, {} ops per cell",
        config.display(),
        exp.settings.len(),
        exp.cells().len(),
        exp.workload.op_count
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => run(args, false),
        Command::Sweep(args) => run(args, true),
        Command::GenPaperConfigs { out, ops, seed } => presets::write_paper_configs(out, *ops, *seed)
            .map(|files| {
                for f in files {
                    println!("{}", f.display());
                }
            })
            .map_err(Into::into),
        Command::Place {
            topology,
            rf,
            points,
            out,
        } => place(topology, *rf, points, out.as_deref()),
        Command::Validate { config } => validate(config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
