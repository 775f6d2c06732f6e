use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hypoips::harness::clt::{clt_summary, oracle_variances};
use hypoips::harness::config::ExperimentConfig;
use hypoips::harness::io::{fmt_f64, write_manifest};
use hypoips::harness::replicate::{read_results, run_replications_to_dir, RunFiles};
use hypoips::harness::scaling::scaling_study;
use hypoips::hypocheck::{default_probes, rank_check, write_rank_csv};
use hypoips::simulate::InitLaw;
use hypoips::{fit, simulate_ips, EstimateReport, Error, ObservationMode, ObservationSet, Result};

#[derive(Parser)]
#[command(name = "hypoips", version, about = "Simulation and estimation for kinetic interacting particle systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the worker thread count.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the first grid cell and write trajectories and observations.
    Simulate(Common),
    /// Fit the contrast estimators to an observation file.
    Fit {
        #[command(flatten)]
        common: Common,
        /// Observations CSV; simulated from the first cell when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Restrict to one mode, `C` or `P`.
        #[arg(long)]
        mode: Option<String>,
    },
    /// Run the replication grid, resuming from the journal if present.
    Replicate {
        #[command(flatten)]
        common: Common,
        /// Stop after this many jobs in total.
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Summarize normalized errors of a replication run.
    Clt {
        #[command(flatten)]
        common: Common,
        /// Results CSV; defaults to `results.csv` in the output directory.
        #[arg(long)]
        results: Option<PathBuf>,
        /// Histogram bins in the plot data.
        #[arg(long, default_value_t = 40)]
        bins: usize,
        /// Skip the brute-force oracle variances.
        #[arg(long)]
        no_oracle: bool,
    },
    /// Log-log convergence slopes over the grid.
    Scaling(Common),
    /// Numeric Hörmander rank at random probe states.
    HypoCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 3)]
        particles: usize,
        #[arg(long, default_value_t = 10)]
        probes: usize,
        /// Extra probes of magnitude around 10.
        #[arg(long, default_value_t = 2)]
        stress: usize,
        #[arg(long, default_value_t = 1e-8)]
        rtol: f64,
    },
    /// Limiting variances from the brute-force mean-field average.
    Oracle(Common),
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Simulate(c) | Command::Scaling(c) | Command::Oracle(c) => c,
            Command::Fit { common, .. }
            | Command::Replicate { common, .. }
            | Command::Clt { common, .. }
            | Command::HypoCheck { common, .. } => common,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Fit { .. } => "fit",
            Command::Replicate { .. } => "replicate",
            Command::Clt { .. } => "clt",
            Command::Scaling(_) => "scaling",
            Command::HypoCheck { .. } => "hypo-check",
            Command::Oracle(_) => "oracle",
        }
    }
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(s) = common.seed {
        cfg.run.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.run.output_dir = o.clone();
    }
    if common.threads.is_some() {
        cfg.run.threads = common.threads;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load(cli.command.common())?;
    let out = cfg.run.output_dir.clone();
    std::fs::create_dir_all(&out)?;
    write_manifest(&out, cli.command.name(), &cfg)?;
    let model = cfg.model_spec()?;
    let theta0 = cfg.theta0();
    let first = cfg.cells()[0];
    match &cli.command {
        Command::Simulate(_) => {
            let sim = first.sim_config(cfg.run.seed);
            let grid = simulate_ips(&model, &theta0, &sim)?;
            grid.write_binary(create(&out.join("trajectories.bin"))?)?;
            hypoips::simulate::subsample(&grid, &sim)?.write_csv(create(&out.join("observations.csv"))?)?;
            println!("simulated N={} n={} m={} into {}", sim.n_particles, sim.obs_steps, sim.fine_factor, out.display());
        }
        Command::Fit { data, mode, .. } => {
            let obs = match data {
                Some(p) => ObservationSet::read_csv(File::open(p)?)?,
                None => hypoips::simulate_observations(&model, &theta0, &first.sim_config(cfg.run.seed))?,
            };
            let modes = match mode {
                Some(t) => vec![ObservationMode::from_tag(t)?],
                None if obs.x.is_some() => cfg.modes()?,
                None => vec![ObservationMode::Partial],
            };
            let mut w = csv::Writer::from_writer(create(&out.join("estimates.csv"))?);
            w.write_record(EstimateReport::csv_header(theta0.mu.len(), theta0.sigma.len()))?;
            for m in modes {
                let rep = fit(&model, &obs.view(m)?, m, &cfg.opt_config(cfg.run.seed))?;
                print!("{}", rep.to_kv());
                w.write_record(rep.csv_row())?;
            }
            w.flush()?;
        }
        Command::Replicate { stop_after, .. } => {
            let done = run_replications_to_dir(&cfg, &out, *stop_after)?;
            println!("{done} jobs complete in {}", RunFiles::in_dir(&out).results.display());
        }
        Command::Clt { results, bins, no_oracle, .. } => {
            let path = results.clone().unwrap_or_else(|| RunFiles::in_dir(&out).results);
            let rows = read_results(&path, theta0.dim())?;
            let oracle = if *no_oracle {
                None
            } else {
                Some(oracle_variances(&model, &theta0, cfg.grid.horizon, InitLaw::StandardNormal, &cfg.oracle_config())?)
            };
            let s = clt_summary(&rows, theta0.mu.len(), oracle.as_ref())?;
            s.write_csv(create(&out.join("clt_summary.csv"))?)?;
            s.write_plot_data(&out.join("plots"), *bins)?;
            for (cell, r) in &s.sigma_ratios {
                println!("cell {cell}: partial/complete sigma variance ratio {r:?}");
            }
        }
        Command::Scaling(_) => {
            let table = scaling_study(&cfg)?;
            table.write_csv(create(&out.join("scaling.csv"))?)?;
            for r in &table.rows {
                let slope = r.slope().map_or("degenerate".into(), |s| format!("{s:.4}"));
                println!("{}: slope {slope}{}", r.quantity, if r.degenerate { " (flagged)" } else { "" });
            }
        }
        Command::HypoCheck { particles, probes, stress, rtol, .. } => {
            let z = default_probes(*particles, cfg.run.seed, *probes, *stress);
            let reports = rank_check(&model, &theta0, *particles, &z, *rtol)?;
            write_rank_csv(&reports, create(&out.join("rank.csv"))?)?;
            let full = reports.iter().filter(|r| r.full_rank).count();
            println!("full rank at {full} of {} probes (dimension {})", reports.len(), 2 * particles);
        }
        Command::Oracle(_) => {
            let o = oracle_variances(&model, &theta0, cfg.grid.horizon, InitLaw::StandardNormal, &cfg.oracle_config())?;
            let mut w = csv::Writer::from_writer(create(&out.join("oracle.csv"))?);
            w.write_record(["mode", "component", "variance"])?;
            for m in [ObservationMode::Complete, ObservationMode::Partial] {
                for (k, v) in o.diagonal(m).iter().enumerate() {
                    let name = if k < theta0.mu.len() { format!("mu{}", k + 1) } else { format!("sigma{}", k - theta0.mu.len() + 1) };
                    w.write_record([m.tag().to_string(), name.clone(), fmt_f64(*v)])?;
                    println!("{} {name} {}", m.tag(), fmt_f64(*v));
                }
            }
            w.flush()?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> ExitCode {
    ExitCode::from(e.exit_code() as u8)
}
