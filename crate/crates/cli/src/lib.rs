//! Command implementations behind the `kslab` binary.
//!
//! Each command reads one config file, runs, and reports through its exit
//! code: 0 for a clean result, 1 for usage or config problems, 2 when the
//! run itself raised a flag (suspected blowup, failed hypothesis check,
//! steady solve that found nothing), 3 for runtime failures.

pub mod config;

use anyhow::{anyhow, Context};
use config::{
    load_config, AxisKey, CheckConfig, EtaConfig, ScenarioConfig, SteadyConfig, SweepConfig,
};
use kslab::evolve::{self, DiagRecord, Outcome};
use kslab::motility::{check_hypotheses, Eta};
use kslab::steady::{
    continuation, empirical_threshold, write_branch_csv, BranchPoint, ConvergedFrom,
    SteadySolution,
};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_FLAGGED: u8 = 2;
pub const EXIT_RUNTIME: u8 = 3;

/// Command-line inputs shared by every subcommand.
#[derive(Debug, Clone)]
pub struct Invocation {
    pub config: PathBuf,
    /// Overrides the config's `output_dir` when set.
    pub out: Option<PathBuf>,
    pub seed: u64,
    pub threads: Option<usize>,
}

/// Failures split by which exit code they map to.
enum CmdError {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

type CmdResult = Result<u8, CmdError>;

fn conf<T, E: Into<anyhow::Error>>(r: Result<T, E>) -> Result<T, CmdError> {
    r.map_err(|e| CmdError::Config(e.into()))
}

fn runt<T, E: Into<anyhow::Error>>(r: Result<T, E>) -> Result<T, CmdError> {
    r.map_err(|e| CmdError::Runtime(e.into()))
}

fn finish(r: CmdResult) -> u8 {
    match r {
        Ok(code) => code,
        Err(CmdError::Config(e)) => {
            eprintln!("config error: {e:#}");
            EXIT_CONFIG
        }
        Err(CmdError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            EXIT_RUNTIME
        }
    }
}

/// Output directory: `--out` wins, then the config, then `./out`.
fn resolve_out(inv: &Invocation, from_config: Option<&Path>) -> PathBuf {
    inv.out
        .clone()
        .or_else(|| from_config.map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from("out"))
}

/// Unwritable output locations are config errors, so the directory is
/// created before any work starts.
fn prepare_out(inv: &Invocation, from_config: Option<&Path>) -> Result<PathBuf, CmdError> {
    let dir = resolve_out(inv, from_config);
    conf(
        fs::create_dir_all(&dir)
            .with_context(|| format!("creating output directory {}", dir.display())),
    )?;
    Ok(dir)
}

fn write_file(
    path: &Path,
    body: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>,
) -> anyhow::Result<()> {
    let mut out = BufWriter::new(
        fs::File::create(path).with_context(|| format!("creating {}", path.display()))?,
    );
    body(&mut out).and_then(|()| out.flush()).with_context(|| format!("writing {}", path.display()))
}

/// Largest density sup-norm over the second half of the recorded series,
/// the post-transient level a bounded run settles near.
pub fn linf_plateau(records: &[DiagRecord]) -> f64 {
    records[records.len() / 2..]
        .iter()
        .fold(f64::NEG_INFINITY, |acc, r| acc.max(r.linf_u))
}

pub fn cmd_simulate(inv: &Invocation) -> u8 {
    finish(simulate_impl(inv))
}

fn simulate_impl(inv: &Invocation) -> CmdResult {
    let cfg: ScenarioConfig = conf(load_config(&inv.config))?;
    let (_grid, pair, u0) = conf(cfg.build(inv.seed, None))?;
    let out_dir = prepare_out(inv, cfg.output_dir.as_deref())?;

    runt(write_file(&out_dir.join("u_initial.csv"), |f| u0.write_csv(f)))?;
    let result = runt(evolve::run(u0, pair, cfg.d, cfg.horizon, cfg.run.clone()))?;

    runt(write_file(&out_dir.join("trajectory.csv"), |f| {
        evolve::write_trajectory_csv(&result.records, f)
    }))?;
    runt(write_file(&out_dir.join("u_final.csv"), |f| result.final_u.write_csv(f)))?;
    runt(write_file(&out_dir.join("v_final.csv"), |f| result.final_v.write_csv(f)))?;

    let summary = serde_json::json!({
        "outcome": result.outcome,
        "final_mass": result.final_u.integrate(),
        "measured_eta": result.measured_eta,
        "linf_plateau": linf_plateau(&result.records),
    });
    runt(fs::write(
        out_dir.join("summary.json"),
        format!("{}\n", serde_json::to_string_pretty(&summary).expect("plain json")),
    ))?;

    match result.outcome {
        Outcome::Completed => {
            println!(
                "completed: {} records, final mass {}, measured eta {}",
                result.records.len(),
                result.final_u.integrate(),
                result.measured_eta
            );
            Ok(EXIT_OK)
        }
        Outcome::BlowupSuspected { t, reason } => {
            println!("blowup suspected at t = {t} ({reason:?})");
            Ok(EXIT_FLAGGED)
        }
    }
}

pub fn cmd_check(inv: &Invocation) -> u8 {
    finish(check_impl(inv))
}

fn check_impl(inv: &Invocation) -> CmdResult {
    let cfg: CheckConfig = conf(load_config(&inv.config))?;
    let pair = conf(cfg.motility.build())?;
    let out_dir = prepare_out(inv, cfg.output_dir.as_deref())?;

    let eta = match &cfg.eta {
        EtaConfig::UserSupplied { value } => Eta::user(*value),
        EtaConfig::Measured { scenario } => {
            let (_grid, spair, u0) = conf(scenario.build(inv.seed, None))?;
            let result = runt(evolve::run(
                u0,
                spair,
                scenario.d,
                scenario.horizon,
                scenario.run.clone(),
            ))?;
            Eta::measured(result.measured_eta)
        }
    };

    let report = conf(check_hypotheses(&pair, cfg.n, eta, cfg.d, cfg.m))?;
    let json = report.to_json();
    println!("{json}");
    runt(fs::write(out_dir.join("hypothesis_report.json"), format!("{json}\n")))?;

    Ok(if report.all_applicable_pass() { EXIT_OK } else { EXIT_FLAGGED })
}

pub fn cmd_steady(inv: &Invocation) -> u8 {
    finish(steady_impl(inv))
}

fn steady_impl(inv: &Invocation) -> CmdResult {
    let cfg: SteadyConfig = conf(load_config(&inv.config))?;
    let grid = conf(cfg.domain.build())?;
    let problem = conf(cfg.problem.build(&grid))?;
    let out_dir = prepare_out(inv, cfg.output_dir.as_deref())?;

    match &cfg.continuation {
        Some(c) => {
            let branch = match continuation(&problem, (c.start, c.stop), c.points) {
                Ok(b) => b,
                Err(e) => return steady_failure(e),
            };
            runt(write_file(&out_dir.join("branch.csv"), |f| {
                write_branch_csv(&branch.points, f)
            }))?;
            if let Some(sol) = &branch.final_solution {
                write_steady_snapshot(&out_dir, sol)?;
            }
            match empirical_threshold(&branch.points) {
                Some((lo, hi)) => println!(
                    "{} points; amplitude departs between {lo} and {hi}",
                    branch.points.len()
                ),
                None => println!(
                    "{} points; no amplitude departure in range",
                    branch.points.len()
                ),
            }
            if let Some(p) = branch.terminated_at {
                println!("march stopped early at parameter {p}");
            }
            Ok(EXIT_OK)
        }
        None => {
            let sol = match problem.solve() {
                Ok(s) => s,
                Err(e) => return steady_failure(e),
            };
            let point = BranchPoint {
                parameter: cfg.problem.parameter(),
                amplitude: sol.amplitude,
                residual: sol.residual,
                max_v: sol.v.max(),
                min_v: sol.v.min(),
                theta: sol.theta,
                converged_from: if sol.is_constant {
                    ConvergedFrom::ConstantGuess
                } else {
                    ConvergedFrom::PerturbedGuess
                },
            };
            runt(write_file(&out_dir.join("branch.csv"), |f| {
                write_branch_csv(std::slice::from_ref(&point), f)
            }))?;
            write_steady_snapshot(&out_dir, &sol)?;
            println!(
                "amplitude {}, theta {}, residual {}",
                sol.amplitude, sol.theta, sol.residual
            );
            Ok(EXIT_OK)
        }
    }
}

fn write_steady_snapshot(out_dir: &Path, sol: &SteadySolution) -> Result<(), CmdError> {
    runt(write_file(&out_dir.join("u_steady.csv"), |f| sol.u.write_csv(f)))?;
    runt(write_file(&out_dir.join("v_steady.csv"), |f| sol.v.write_csv(f)))?;
    Ok(())
}

/// Solver dead ends are findings about the problem, not about the tool:
/// they flag the run. Bad inputs stay config errors.
fn steady_failure(e: kslab::Error) -> CmdResult {
    use kslab::Error as E;
    match &e {
        E::NewtonDiverged { .. }
        | E::LineSearchFailed { .. }
        | E::SteadyOverflow { .. }
        | E::SingularSystem { .. }
        | E::SolverStall { .. }
        | E::NonFinite(_) => {
            eprintln!("steady solve failed: {e}");
            Ok(EXIT_FLAGGED)
        }
        E::Io(_) => Err(CmdError::Runtime(e.into())),
        _ => Err(CmdError::Config(anyhow!(e))),
    }
}

pub fn cmd_sweep(inv: &Invocation) -> u8 {
    finish(sweep_impl(inv))
}

/// One finished lattice point, in header order.
struct SweepRow {
    values: Vec<f64>,
    outcome: &'static str,
    plateau: f64,
}

fn sweep_impl(inv: &Invocation) -> CmdResult {
    let cfg: SweepConfig = conf(load_config(&inv.config))?;
    if cfg.axes.is_empty() {
        return Err(CmdError::Config(anyhow!("sweep declares no axes")));
    }
    for (i, ax) in cfg.axes.iter().enumerate() {
        if ax.values.is_empty() {
            return Err(CmdError::Config(anyhow!("axis {} has no values", ax.key.name())));
        }
        if cfg.axes[..i].iter().any(|other| other.key == ax.key) {
            return Err(CmdError::Config(anyhow!("axis {} declared twice", ax.key.name())));
        }
    }
    let dims: Vec<usize> = cfg.axes.iter().map(|ax| ax.values.len()).collect();
    let total: usize = dims.iter().product();
    let out_dir = prepare_out(inv, cfg.output_dir.as_deref())?;

    let workers = inv
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .clamp(1, total);

    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, SweepRow)>();
    std::thread::scope(|s| {
        for _ in 0..workers {
            let tx = tx.clone();
            let next = &next;
            let cfg = &cfg;
            s.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= total || tx.send((i, run_lattice_point(cfg, i, inv.seed))).is_err() {
                    break;
                }
            });
        }
    });
    drop(tx);
    let mut rows: Vec<(usize, SweepRow)> = rx.iter().collect();
    rows.sort_by_key(|(i, _)| *i);

    runt(write_file(&out_dir.join("sweep.csv"), |f| {
        let header: Vec<&str> = cfg.axes.iter().map(|ax| ax.key.name()).collect();
        writeln!(f, "{},outcome,linf_plateau", header.join(","))?;
        for (_, row) in &rows {
            let params: Vec<String> = row.values.iter().map(f64::to_string).collect();
            writeln!(f, "{},{},{}", params.join(","), row.outcome, row.plateau)?;
        }
        Ok(())
    }))?;

    let completed = rows.iter().filter(|(_, r)| r.outcome == "completed").count();
    let flagged = rows.iter().filter(|(_, r)| r.outcome == "blowup_suspected").count();
    let errored = rows.len() - completed - flagged;
    println!("{total} points: {completed} completed, {flagged} blowup_suspected, {errored} error");
    if completed + flagged == 0 {
        return Err(CmdError::Runtime(anyhow!("every lattice point failed")));
    }
    Ok(EXIT_OK)
}

/// Lattice order: first axis slowest, last axis fastest.
fn decode_lattice(mut index: usize, dims: &[usize]) -> Vec<usize> {
    let mut coords = vec![0; dims.len()];
    for (slot, &dim) in coords.iter_mut().zip(dims).rev() {
        *slot = index % dim;
        index /= dim;
    }
    coords
}

fn run_lattice_point(cfg: &SweepConfig, index: usize, base_seed: u64) -> SweepRow {
    let dims: Vec<usize> = cfg.axes.iter().map(|ax| ax.values.len()).collect();
    let coords = decode_lattice(index, &dims);
    let mut scenario = cfg.base.clone();
    let mut mass = None;
    let mut values = Vec::with_capacity(cfg.axes.len());
    for (ax, &j) in cfg.axes.iter().zip(&coords) {
        let v = ax.values[j];
        values.push(v);
        match ax.key {
            AxisKey::D => scenario.d = v,
            AxisKey::Mass => mass = Some(v),
        }
    }
    // Seeds differ per point so noisy initial data stays independent.
    let seed = base_seed.wrapping_add(index as u64);
    let outcome = scenario.build(seed, mass).ok().and_then(|(_, pair, u0)| {
        evolve::run(u0, pair, scenario.d, scenario.horizon, scenario.run.clone()).ok()
    });
    match outcome {
        Some(result) => SweepRow {
            values,
            outcome: match result.outcome {
                Outcome::Completed => "completed",
                Outcome::BlowupSuspected { .. } => "blowup_suspected",
            },
            plateau: linf_plateau(&result.records),
        },
        None => SweepRow { values, outcome: "error", plateau: f64::NAN },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lattice_decoding_runs_last_axis_fastest() {
        let dims = [2, 3];
        let coords: Vec<Vec<usize>> = (0..6).map(|i| decode_lattice(i, &dims)).collect();
        assert_eq!(coords[0], [0, 0]);
        assert_eq!(coords[1], [0, 1]);
        assert_eq!(coords[2], [0, 2]);
        assert_eq!(coords[3], [1, 0]);
        assert_eq!(coords[5], [1, 2]);
    }

    #[test]
    fn plateau_reads_the_second_half() {
        let mk = |linf_u: f64| DiagRecord {
            t: 0.0,
            mass: 1.0,
            linf_u,
            lp_u: 0.0,
            min_v: 1.0,
            max_v: 1.0,
            exp_moment: 0.0,
            phi_inv_moment: 0.0,
            dt: 1e-3,
        };
        let records = vec![mk(9.0), mk(5.0), mk(2.0), mk(3.0)];
        assert_eq!(linf_plateau(&records), 3.0);
    }
}
