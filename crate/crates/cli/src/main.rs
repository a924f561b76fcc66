#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use hbvdyn::experiments::{
    run_analysis, run_scenario, run_sweep, AnalysisOutcome, ParameterBox, SweepConfig,
};
use hbvdyn::integrator::{integrate, Trajectory};
use hbvdyn::model::analytic_bounds;
use hbvdyn::scenario::{lookup, registry, Analysis, Scenario};
use hbvdyn::stability::{condition_margins, r0_all, ConditionSet};
use hbvdyn::{Error, Result};

#[derive(Parser)]
#[command(
    name = "hbvdyn",
    version,
    about = "Within-host HBV model: simulation and stability diagnostics"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario config file (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Built-in scenario id.
    #[arg(long, global = true, value_name = "ID")]
    scenario: Option<String>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Seed for the sweep.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// Override both adaptive tolerances.
    #[arg(long, global = true, value_name = "TOL")]
    tol: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the scenario and emit the trajectory as CSV.
    Simulate,
    /// Disease-free and endemic equilibria with residuals.
    Equilibria,
    /// Eigenvalues, classification, R0 and margins at each equilibrium.
    Stability,
    /// Margins of the inequality condition sets.
    Conditions {
        /// lemma1, dfe, endemic or nonauto (default: all applicable).
        #[arg(long)]
        set: Option<ConditionSet>,
        /// Bound on z for the nonautonomous set.
        #[arg(long)]
        b1: Option<f64>,
    },
    /// The three reproduction numbers.
    R0,
    /// Decay of V = |u - u*|^2 along the trajectory.
    Lyapunov,
    /// Squared-distance decay between u0 and the contraction partner.
    Contraction,
    /// Pullback endpoints over increasing horizons.
    Pullback,
    /// Absorbing l1 ball check along the trajectory.
    Absorbing,
    /// Run a scenario with all its analyses and write the run directory.
    Scenario {
        /// Built-in scenario id (omit with --config).
        id: Option<String>,
        /// List the built-in scenarios and exit.
        #[arg(long)]
        list: bool,
        /// Print the scenario as a TOML config instead of running it.
        #[arg(long)]
        print_config: bool,
    },
    /// Randomized property sweep over a parameter box.
    Sweep {
        /// Number of draws.
        #[arg(long, short = 'n', default_value_t = 1000)]
        n: usize,
        /// Parameter box (TOML); defaults to rates in [0.01, 100], eta and epsilon in [0, 0.9].
        #[arg(long, value_name = "PATH")]
        r#box: Option<PathBuf>,
        /// Also integrate each draw from (1, 1, 1) over [0, HORIZON].
        #[arg(long)]
        horizon: Option<f64>,
    },
}

fn resolve(common: &Common, positional: Option<&str>) -> Result<Scenario> {
    let mut s = match (&common.config, positional.or(common.scenario.as_deref())) {
        (Some(path), None) => Scenario::load(path)?,
        (None, Some(id)) => lookup(id)?,
        (Some(_), Some(_)) => {
            return Err(Error::InvalidArgument(
                "give either --config or a scenario id, not both".into(),
            ))
        }
        (None, None) => {
            return Err(Error::InvalidArgument(
                "no scenario: pass --scenario <ID> or --config <PATH>".into(),
            ))
        }
    };
    if let Some(tol) = common.tol {
        if !(tol > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "--tol must be > 0, got {tol}"
            )));
        }
        s.ctl = s.ctl.with_tolerance(tol);
    }
    s.validate()?;
    Ok(s)
}

fn trajectory(s: &Scenario) -> Result<Trajectory> {
    let traj = integrate(
        &s.params,
        &s.forcing,
        s.u0,
        s.t_span[0],
        s.t_span[1],
        &s.ctl,
    )?;
    if let Some(ev) = traj.termination() {
        return Err(Error::Terminated(ev.clone()));
    }
    Ok(traj)
}

fn print_json(v: &Value) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, v)?;
    writeln!(out)?;
    Ok(())
}

fn print_outcome(o: &AnalysisOutcome) -> Result<i32> {
    print_json(&serde_json::to_value(o)?)?;
    Ok(match o {
        AnalysisOutcome::Failed { .. } => 3,
        _ => 0,
    })
}

fn analysis(common: &Common, a: Analysis) -> Result<i32> {
    let s = resolve(common, None)?;
    let traj = trajectory(&s)?;
    print_outcome(&run_analysis(&s, &traj, a))
}

fn simulate(common: &Common) -> Result<i32> {
    let s = resolve(common, None)?;
    let traj = integrate(
        &s.params,
        &s.forcing,
        s.u0,
        s.t_span[0],
        s.t_span[1],
        &s.ctl,
    )?;
    match &common.out {
        Some(dir) => {
            let dir = dir.join(&s.id);
            std::fs::create_dir_all(&dir)?;
            write_file(&dir.join("trajectory.csv"), |w| traj.write_csv(w))?;
            write_file(&dir.join("trajectory.dat"), |w| traj.write_gnuplot(w))?;
            eprintln!("wrote {}", dir.display());
        }
        None => traj.write_csv(BufWriter::new(io::stdout().lock()))?,
    }
    for ev in &traj.events {
        eprintln!("event: {ev}");
    }
    Ok(if traj.termination().is_some() { 3 } else { 0 })
}

fn write_file(
    path: &Path,
    f: impl FnOnce(&mut BufWriter<std::fs::File>) -> io::Result<()>,
) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

fn conditions(common: &Common, set: Option<ConditionSet>, b1: Option<f64>) -> Result<i32> {
    let s = resolve(common, None)?;
    let b1 = b1.or(s.b1);
    match set {
        None => {
            let mut s = s;
            s.b1 = b1;
            let traj = trajectory(&s)?;
            print_outcome(&run_analysis(&s, &traj, Analysis::Conditions))
        }
        Some(ConditionSet::Lemma1) => {
            let eq = hbvdyn::equilibria::disease_free(&s.params, &s.forcing)?.state;
            let m = condition_margins(ConditionSet::Lemma1, &s.params, &s.forcing, Some(&eq), b1)?;
            print_json(&serde_json::to_value(m)?)?;
            Ok(0)
        }
        Some(set) => {
            let m = condition_margins(set, &s.params, &s.forcing, None, b1)?;
            print_json(&serde_json::to_value(m)?)?;
            Ok(0)
        }
    }
}

fn scenario_cmd(common: &Common, id: Option<&str>, list: bool, print_config: bool) -> Result<i32> {
    if list {
        for s in registry() {
            println!("{}\t{}", s.id, s.description);
        }
        return Ok(0);
    }
    let s = resolve(common, id)?;
    if print_config {
        print!("{}", s.to_toml()?);
        return Ok(0);
    }
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from("runs"));
    let (report, dir) = run_scenario(&s, &out)?;
    eprintln!(
        "{}: {} samples, final state ({:.6e}, {:.6e}, {:.6e}), {:.3} s",
        report.scenario,
        report.samples,
        report.final_state.x,
        report.final_state.y,
        report.final_state.z,
        report.wall_clock_seconds
    );
    for ev in &report.events {
        eprintln!("event: {ev}");
    }
    println!("{}", dir.display());
    Ok(report.exit_code())
}

fn sweep_cmd(
    common: &Common,
    n: usize,
    box_path: Option<&Path>,
    horizon: Option<f64>,
) -> Result<i32> {
    let bounds = match box_path {
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            toml::from_str::<ParameterBox>(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => ParameterBox::default(),
    };
    let mut cfg = SweepConfig {
        bounds,
        n_draws: n,
        seed: common.seed,
        horizon,
        ..Default::default()
    };
    if let Some(tol) = common.tol {
        cfg.ctl = cfg.ctl.with_tolerance(tol);
    }
    let out = common
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("sweep-out"));
    let summary = run_sweep(&cfg, &out)?;
    print_json(&serde_json::to_value(&summary)?)?;
    Ok(0)
}

fn dispatch(cli: &Cli) -> Result<i32> {
    let c = &cli.common;
    match &cli.command {
        Command::Simulate => simulate(c),
        Command::Equilibria => analysis(c, Analysis::Equilibria),
        Command::Stability => analysis(c, Analysis::Stability),
        Command::Conditions { set, b1 } => conditions(c, *set, *b1),
        Command::R0 => {
            let s = resolve(c, None)?;
            print_json(&json!({
                "r0": serde_json::to_value(r0_all(&s.params, &s.forcing))?,
                "bounds": serde_json::to_value(analytic_bounds(&s.params, &s.forcing, &s.u0))?,
                "lambda_used": s.forcing.upper(),
            }))?;
            Ok(0)
        }
        Command::Lyapunov => analysis(c, Analysis::Lyapunov),
        Command::Contraction => analysis(c, Analysis::Contraction),
        Command::Pullback => analysis(c, Analysis::Pullback),
        Command::Absorbing => analysis(c, Analysis::Absorbing),
        Command::Scenario {
            id,
            list,
            print_config,
        } => scenario_cmd(c, id.as_deref(), *list, *print_config),
        Command::Sweep { n, r#box, horizon } => sweep_cmd(c, *n, r#box.as_deref(), *horizon),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
