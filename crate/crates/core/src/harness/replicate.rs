//! Monte Carlo replications over a grid of cells, streamed to CSV in a
//! fixed order with a journal for resuming interrupted runs.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use super::config::{Cell, ExperimentConfig};
use super::io::{fmt_f64, parse_f64};
use crate::error::{Error, Result};
use crate::estimate::fit;
use crate::model::{ModelSpec, Params};
use crate::observe::ObservationMode;
use crate::rng::derive_seed;
use crate::simulate::simulate_observations;

/// One fit of one replicate in one mode.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplicationRow {
    pub cell: usize,
    pub replicate: usize,
    pub seed: u64,
    pub mode: ObservationMode,
    pub n_particles: usize,
    pub obs_steps: usize,
    pub fine_factor: usize,
    pub n_delta: f64,
    pub theta_hat: Vec<f64>,
    /// `√N(μ̂ − μ₀)` then `√(N/Δ)(σ̂ − σ₀)`.
    pub normalized_errors: Vec<f64>,
    /// Plug-in asymptotic variances on the same scale.
    pub plug_in_var: Vec<f64>,
    pub converged: bool,
    pub at_boundary: bool,
    /// `ok`, or the error that stopped this replicate.
    pub status: String,
}

impl ReplicationRow {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    pub fn header(p1: usize, p2: usize) -> Vec<String> {
        let mut h: Vec<String> = ["cell", "replicate", "seed", "mode", "n_particles", "obs_steps", "fine_factor", "n_delta"]
            .map(String::from)
            .to_vec();
        let names: Vec<String> = (1..=p1).map(|k| format!("mu{k}")).chain((1..=p2).map(|k| format!("sigma{k}"))).collect();
        h.extend(names.iter().cloned());
        h.extend(names.iter().map(|n| format!("err_{n}")));
        h.extend(names.iter().map(|n| format!("avar_{n}")));
        h.extend(["converged", "at_boundary", "status"].map(String::from));
        h
    }

    pub fn record(&self) -> Vec<String> {
        let mut r = vec![
            self.cell.to_string(),
            self.replicate.to_string(),
            self.seed.to_string(),
            self.mode.tag().to_string(),
            self.n_particles.to_string(),
            self.obs_steps.to_string(),
            self.fine_factor.to_string(),
            fmt_f64(self.n_delta),
        ];
        for block in [&self.theta_hat, &self.normalized_errors, &self.plug_in_var] {
            r.extend(block.iter().map(|v| fmt_f64(*v)));
        }
        r.push(self.converged.to_string());
        r.push(self.at_boundary.to_string());
        r.push(self.status.clone());
        r
    }

    pub fn from_record(rec: &csv::StringRecord, p: usize) -> Result<Self> {
        if rec.len() != 8 + 3 * p + 3 {
            return Err(Error::Argument(format!("row has {} fields, expected {}", rec.len(), 11 + 3 * p)));
        }
        let bad = |e: String| Error::Argument(format!("malformed replication row: {e}"));
        let int = |k: usize| rec[k].parse::<u64>().map_err(|e| bad(e.to_string()));
        let flag = |k: usize| rec[k].parse::<bool>().map_err(|e| bad(e.to_string()));
        let block = |start: usize| (start..start + p).map(|k| parse_f64(&rec[k])).collect::<Result<Vec<_>>>();
        Ok(Self {
            cell: int(0)? as usize,
            replicate: int(1)? as usize,
            seed: int(2)?,
            mode: ObservationMode::from_tag(&rec[3])?,
            n_particles: int(4)? as usize,
            obs_steps: int(5)? as usize,
            fine_factor: int(6)? as usize,
            n_delta: parse_f64(&rec[7])?,
            theta_hat: block(8)?,
            normalized_errors: block(8 + p)?,
            plug_in_var: block(8 + 2 * p)?,
            converged: flag(8 + 3 * p)?,
            at_boundary: flag(9 + 3 * p)?,
            status: rec[10 + 3 * p].to_string(),
        })
    }
}

/// Seed of replicate `rep` in `cell`.
pub fn replicate_seed(base: u64, cell: usize, rep: usize) -> u64 {
    derive_seed(base, &[cell as u64, rep as u64])
}

/// Simulates one replicate and fits it in every mode. Failures become rows
/// with a non-`ok` status.
pub fn run_job(model: &ModelSpec, theta0: &Params, cfg: &ExperimentConfig, modes: &[ObservationMode], cell: &Cell, rep: usize) -> Vec<ReplicationRow> {
    let seed = replicate_seed(cfg.run.seed, cell.index, rep);
    let p = theta0.dim();
    let blank = |mode: ObservationMode, status: String| ReplicationRow {
        cell: cell.index,
        replicate: rep,
        seed,
        mode,
        n_particles: cell.n_particles,
        obs_steps: cell.obs_steps,
        fine_factor: cell.fine_factor,
        n_delta: cell.n_delta(),
        theta_hat: vec![f64::NAN; p],
        normalized_errors: vec![f64::NAN; p],
        plug_in_var: vec![f64::NAN; p],
        converged: false,
        at_boundary: false,
        status,
    };
    let obs = match simulate_observations(model, theta0, &cell.sim_config(seed)) {
        Ok(o) => o,
        Err(e) => return modes.iter().map(|m| blank(*m, sanitize(&e.to_string()))).collect(),
    };
    modes
        .iter()
        .map(|&mode| {
            let opt = cfg.opt_config(derive_seed(seed, &[0x0f17]));
            match fit(model, &obs, mode, &opt) {
                Ok(rep_) => {
                    let rep_ = rep_.with_truth(theta0);
                    let (em, es) = rep_.normalized_errors.clone().unwrap_or_default();
                    let diag = |m: &Option<nalgebra::DMatrix<f64>>, k: usize| {
                        m.as_ref().map_or(vec![f64::NAN; k], |m| (0..k).map(|i| m[(i, i)]).collect())
                    };
                    let mut avar = diag(&rep_.sigma_blocks.mu_cov, theta0.mu.len());
                    avar.extend(diag(&rep_.sigma_blocks.sigma_cov, theta0.sigma.len()));
                    let mut row = blank(mode, "ok".into());
                    row.theta_hat = rep_.theta_hat.flat();
                    row.normalized_errors = em.into_iter().chain(es).collect();
                    row.plug_in_var = avar;
                    row.converged = rep_.converged;
                    row.at_boundary = rep_.at_boundary;
                    row
                }
                Err(e) => blank(mode, sanitize(&e.to_string())),
            }
        })
        .collect()
}

fn sanitize(s: &str) -> String {
    s.replace(['\n', '\r'], " ")
}

/// Every `(cell, replicate)` job in output order.
pub fn jobs(cfg: &ExperimentConfig) -> Vec<(Cell, usize)> {
    cfg.cells()
        .into_iter()
        .flat_map(|c| (0..cfg.run.replications).map(move |r| (c, r)))
        .collect()
}

fn pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        b = b.num_threads(t);
    }
    b.build().map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// All rows in memory, in job order.
pub fn run_replications(cfg: &ExperimentConfig) -> Result<Vec<ReplicationRow>> {
    cfg.validate()?;
    let model = cfg.model_spec()?;
    let theta0 = cfg.theta0();
    let modes = cfg.modes()?;
    let all = jobs(cfg);
    let pool = pool(cfg.run.threads)?;
    let rows: Vec<Vec<ReplicationRow>> =
        pool.install(|| all.par_iter().map(|(c, r)| run_job(&model, &theta0, cfg, &modes, c, *r)).collect());
    Ok(rows.into_iter().flatten().collect())
}

/// Paths of a streamed run inside its output directory.
#[derive(Clone, Debug)]
pub struct RunFiles {
    pub results: PathBuf,
    pub journal: PathBuf,
    pub timings: PathBuf,
}

impl RunFiles {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            results: dir.join("results.csv"),
            journal: dir.join("journal.txt"),
            timings: dir.join("timings.csv"),
        }
    }
}

/// Streams rows to `dir/results.csv` in job order. Completed jobs are
/// appended to `dir/journal.txt`; on restart, rows of jobs missing from the
/// journal are discarded and those jobs rerun, so the final file does not
/// depend on interruptions. Wall time per job goes to `dir/timings.csv`.
///
/// `stop_after` ends the run after that many jobs have been completed in
/// total, leaving a resumable state.
pub fn run_replications_to_dir(cfg: &ExperimentConfig, dir: &Path, stop_after: Option<usize>) -> Result<usize> {
    cfg.validate()?;
    std::fs::create_dir_all(dir)?;
    let files = RunFiles::in_dir(dir);
    let model = cfg.model_spec()?;
    let theta0 = cfg.theta0();
    let modes = cfg.modes()?;
    let all = jobs(cfg);

    let done = read_journal(&files.journal)?;
    if done > all.len() {
        return Err(Error::Config("journal lists more jobs than the configuration defines".into()));
    }
    let kept_rows = done * modes.len();
    rewrite_results(&files.results, theta0.mu.len(), theta0.sigma.len(), kept_rows)?;

    let mut results = OpenOptions::new().append(true).open(&files.results)?;
    let mut journal = OpenOptions::new().create(true).append(true).open(&files.journal)?;
    let new_timings = !files.timings.exists();
    let mut timings = OpenOptions::new().create(true).append(true).open(&files.timings)?;
    if new_timings {
        writeln!(timings, "cell,replicate,wall_seconds")?;
    }

    let pool = pool(cfg.run.threads)?;
    let chunk = 4 * pool.current_num_threads().max(1);
    let limit = stop_after.unwrap_or(usize::MAX).min(all.len());
    let mut next = done;
    while next < limit {
        let end = (next + chunk).min(limit);
        let batch: Vec<(Vec<ReplicationRow>, f64)> = pool.install(|| {
            all[next..end]
                .par_iter()
                .map(|(c, r)| {
                    let t = Instant::now();
                    let rows = run_job(&model, &theta0, cfg, &modes, c, *r);
                    (rows, t.elapsed().as_secs_f64())
                })
                .collect()
        });
        for ((rows, secs), (c, r)) in batch.into_iter().zip(&all[next..end]) {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
            for row in &rows {
                w.write_record(row.record())?;
            }
            let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
            results.write_all(&bytes)?;
            results.flush()?;
            writeln!(journal, "{},{}", c.index, r)?;
            journal.flush()?;
            writeln!(timings, "{},{},{}", c.index, r, secs)?;
        }
        next = end;
    }
    Ok(next)
}

fn read_journal(path: &Path) -> Result<usize> {
    if !path.exists() {
        return Ok(0);
    }
    let f = BufReader::new(File::open(path)?);
    let mut n = 0;
    for line in f.lines() {
        if line?.trim().is_empty() {
            continue;
        }
        n += 1;
    }
    Ok(n)
}

/// Keeps the header and the first `keep` complete rows of the results file,
/// creating it when absent.
fn rewrite_results(path: &Path, p1: usize, p2: usize, keep: usize) -> Result<()> {
    let p = p1 + p2;
    let mut rows = Vec::new();
    if path.exists() {
        let mut rdr = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
        for rec in rdr.records() {
            if rows.len() == keep {
                break;
            }
            match rec {
                Ok(r) if ReplicationRow::from_record(&r, p).is_ok() => rows.push(r),
                _ => break,
            }
        }
    }
    if rows.len() < keep {
        return Err(Error::Config(format!("results file holds {} rows, journal implies {keep}", rows.len())));
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(ReplicationRow::header(p1, p2))?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a results file written by [`run_replications_to_dir`].
pub fn read_results(path: &Path, p: usize) -> Result<Vec<ReplicationRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    rdr.records().map(|r| ReplicationRow::from_record(&r?, p)).collect()
}
