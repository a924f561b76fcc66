//! Scenario runs with file output, and seeded randomized property sweeps.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::equilibria::{disease_free, endemic};
use crate::error::{Error, Result};
use crate::integrator::{integrate, EventKind, MonitorEvent, StepControl, Trajectory};
use crate::model::{analytic_bounds, jacobian, BoundsReport, Forcing, Parameters, State};
use crate::process::{absorbing_check, pullback_estimate};
use crate::scenario::{Analysis, Scenario};
use crate::stability::{
    condition_margins, contraction_certificate, contraction_fit, eigenvalues_3x3, lyapunov_fit,
    r0_all, routh_hurwitz_stable, stability_report, Classification, ConditionSet,
    ReproductionNumbers, MARGINAL_BAND,
};

/// Outcome of one requested analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum AnalysisOutcome {
    Done { result: Value },
    Skipped { reason: String },
    Failed { error: String },
}

impl AnalysisOutcome {
    pub fn result(&self) -> Option<&Value> {
        match self {
            AnalysisOutcome::Done { result } => Some(result),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub description: String,
    pub trajectory_file: String,
    pub params: Parameters,
    pub forcing: Forcing,
    pub u0: State,
    pub t_span: [f64; 2],
    pub ctl: StepControl,
    pub samples: usize,
    pub final_time: f64,
    pub final_state: State,
    pub events: Vec<MonitorEvent>,
    pub bounds: BoundsReport,
    pub r0: ReproductionNumbers,
    /// Sweep property flags for this parameter set (constant supply only).
    pub properties: Option<PropertyFlags>,
    pub analyses: BTreeMap<String, AnalysisOutcome>,
    /// Kept out of the report file so reruns are byte-identical.
    #[serde(skip)]
    pub wall_clock_seconds: f64,
}

impl RunReport {
    pub fn termination(&self) -> Option<&MonitorEvent> {
        self.events.iter().find(|e| e.kind.terminates())
    }

    /// 0 for a complete run, 3 when the integration ended early.
    pub fn exit_code(&self) -> i32 {
        if self.termination().is_some() {
            3
        } else {
            0
        }
    }

    pub fn analysis(&self, a: Analysis) -> Option<&AnalysisOutcome> {
        self.analyses.get(a.name())
    }
}

fn to_value<T: Serialize>(v: &T) -> Result<Value> {
    Ok(serde_json::to_value(v)?)
}

fn skipped(reason: &str) -> AnalysisOutcome {
    AnalysisOutcome::Skipped {
        reason: reason.to_string(),
    }
}

const NEEDS_CONSTANT: &str =
    "needs constant supply (equilibria are undefined for time-varying forcing)";

/// Runs one analysis for a scenario whose trajectory is `traj`.
pub fn run_analysis(scenario: &Scenario, traj: &Trajectory, analysis: Analysis) -> AnalysisOutcome {
    let outcome = match analysis {
        Analysis::Equilibria => analysis_equilibria(scenario),
        Analysis::Stability => analysis_stability(scenario),
        Analysis::Conditions => analysis_conditions(scenario),
        Analysis::Lyapunov => analysis_lyapunov(scenario, traj),
        Analysis::Contraction => analysis_contraction(scenario, traj),
        Analysis::Pullback => analysis_pullback(scenario),
        Analysis::Absorbing => analysis_absorbing(scenario, traj),
    };
    match outcome {
        Ok(o) => o,
        Err(Error::Precondition(reason)) => AnalysisOutcome::Skipped { reason },
        Err(e) => AnalysisOutcome::Failed {
            error: e.to_string(),
        },
    }
}

fn analysis_equilibria(s: &Scenario) -> Result<AnalysisOutcome> {
    if !s.forcing.is_constant() {
        return Ok(skipped(NEEDS_CONSTANT));
    }
    let dfe = disease_free(&s.params, &s.forcing)?;
    let end = endemic(&s.params, &s.forcing)?;
    Ok(AnalysisOutcome::Done {
        result: json!({ "disease_free": to_value(&dfe)?, "endemic": to_value(&end)? }),
    })
}

fn analysis_stability(s: &Scenario) -> Result<AnalysisOutcome> {
    if !s.forcing.is_constant() {
        return Ok(skipped(NEEDS_CONSTANT));
    }
    let dfe = disease_free(&s.params, &s.forcing)?;
    let end = endemic(&s.params, &s.forcing)?;
    let mut result = json!({
        "disease_free": to_value(&stability_report(&s.params, &s.forcing, &dfe.state, s.b1)?)?,
    });
    result["endemic"] = if end.feasible == Some(true) {
        to_value(&stability_report(&s.params, &s.forcing, &end.state, s.b1)?)?
    } else {
        Value::Null
    };
    Ok(AnalysisOutcome::Done { result })
}

fn analysis_conditions(s: &Scenario) -> Result<AnalysisOutcome> {
    let mut out = serde_json::Map::new();
    for set in [
        ConditionSet::Dfe,
        ConditionSet::Endemic,
        ConditionSet::Nonauto,
    ] {
        let m = condition_margins(set, &s.params, &s.forcing, None, s.b1)?;
        out.insert(
            to_value(&set)?.as_str().unwrap_or("?").to_string(),
            to_value(&m)?,
        );
    }
    if s.forcing.is_constant() {
        let dfe = disease_free(&s.params, &s.forcing)?.state;
        let m = condition_margins(
            ConditionSet::Lemma1,
            &s.params,
            &s.forcing,
            Some(&dfe),
            s.b1,
        )?;
        out.insert("lemma1_at_disease_free".into(), to_value(&m)?);
        let end = endemic(&s.params, &s.forcing)?;
        if end.feasible == Some(true) {
            let m = condition_margins(
                ConditionSet::Lemma1,
                &s.params,
                &s.forcing,
                Some(&end.state),
                s.b1,
            )?;
            out.insert("lemma1_at_endemic".into(), to_value(&m)?);
        }
    }
    Ok(AnalysisOutcome::Done {
        result: Value::Object(out),
    })
}

/// The endemic state when it exists and is linearly stable, else the DFE.
fn attracting_equilibrium(s: &Scenario) -> Result<(&'static str, State)> {
    let end = endemic(&s.params, &s.forcing)?;
    if end.feasible == Some(true) {
        let r = stability_report(&s.params, &s.forcing, &end.state, s.b1)?;
        if r.classification == Classification::Stable {
            return Ok(("endemic", end.state));
        }
    }
    Ok(("disease_free", disease_free(&s.params, &s.forcing)?.state))
}

fn analysis_lyapunov(s: &Scenario, traj: &Trajectory) -> Result<AnalysisOutcome> {
    if !s.forcing.is_constant() {
        return Ok(skipped(NEEDS_CONSTANT));
    }
    let (kind, reference) = attracting_equilibrium(s)?;
    let trace = lyapunov_fit(traj, &reference)?;
    let margins = condition_margins(
        ConditionSet::Lemma1,
        &s.params,
        &s.forcing,
        Some(&reference),
        s.b1,
    )?;
    let k = margins.intermediates["k"];
    let v_max = trace.values.iter().copied().fold(0.0, f64::max);
    Ok(AnalysisOutcome::Done {
        result: json!({
            "reference_kind": kind,
            "reference": to_value(&reference)?,
            "rate": trace.rate,
            "fit_quality": trace.fit_quality,
            "degenerate": trace.degenerate,
            "v0": trace.values[0],
            "v_final": trace.values.last().copied(),
            "v_max": v_max,
            "k_candidate": k,
            "lemma1_all_satisfied": margins.all_satisfied,
            "bound_ratio_at_k": trace.bound_ratio(k),
            "nonincreasing_after_first_quarter":
                trace.nonincreasing_after(traj.t0() + 0.25 * (traj.final_time() - traj.t0())),
        }),
    })
}

fn analysis_contraction(s: &Scenario, traj: &Trajectory) -> Result<AnalysisOutcome> {
    let partner = integrate(
        &s.params,
        &s.forcing,
        s.contraction_partner,
        s.t_span[0],
        s.t_span[1],
        &s.ctl,
    )?;
    if let Some(ev) = partner.termination() {
        return Err(Error::Terminated(ev.clone()));
    }
    let fit = contraction_fit(traj, &partner)?;
    let cert = contraction_certificate(traj, &partner);
    Ok(AnalysisOutcome::Done {
        result: json!({
            "partner_u0": to_value(&s.contraction_partner)?,
            "fit": to_value(&fit)?,
            "certificate": to_value(&cert)?,
        }),
    })
}

fn analysis_pullback(s: &Scenario) -> Result<AnalysisOutcome> {
    let mut seeds = vec![s.u0];
    seeds.extend(s.pullback.seeds.iter().copied());
    let est = pullback_estimate(
        &s.params,
        &s.forcing,
        s.pullback.t_star,
        &s.pullback.horizons,
        &seeds,
        s.pullback.tol,
        &s.ctl,
    )?;
    Ok(AnalysisOutcome::Done {
        result: to_value(&est)?,
    })
}

fn analysis_absorbing(s: &Scenario, traj: &Trajectory) -> Result<AnalysisOutcome> {
    let r = absorbing_check(&s.params, &s.forcing, traj, s.absorbing_slack)?;
    Ok(AnalysisOutcome::Done {
        result: to_value(&r)?,
    })
}

/// Integrates the scenario and runs every requested analysis. A run that
/// terminates early skips the analyses and still produces a report.
pub fn build_report(scenario: &Scenario) -> Result<(RunReport, Trajectory)> {
    scenario.validate()?;
    let start = Instant::now();
    let [t0, t1] = scenario.t_span;
    let traj = integrate(
        &scenario.params,
        &scenario.forcing,
        scenario.u0,
        t0,
        t1,
        &scenario.ctl,
    )?;
    let mut analyses = BTreeMap::new();
    for &a in &scenario.analyses {
        let outcome = match traj.termination() {
            Some(ev) => skipped(&format!("integration terminated: {ev}")),
            None => run_analysis(scenario, &traj, a),
        };
        analyses.insert(a.name().to_string(), outcome);
    }
    let properties = scenario
        .forcing
        .constant_value()
        .map(|lambda| property_flags(&scenario.params, lambda, Some(&traj)));
    let report = RunReport {
        scenario: scenario.id.clone(),
        description: scenario.description.clone(),
        trajectory_file: "trajectory.csv".into(),
        params: scenario.params,
        forcing: scenario.forcing.clone(),
        u0: scenario.u0,
        t_span: scenario.t_span,
        ctl: scenario.ctl,
        samples: traj.len(),
        final_time: traj.final_time(),
        final_state: traj.final_state(),
        events: traj.events.clone(),
        bounds: analytic_bounds(&scenario.params, &scenario.forcing, &scenario.u0),
        r0: r0_all(&scenario.params, &scenario.forcing),
        properties,
        analyses,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    Ok((report, traj))
}

const GNUPLOT_SCRIPT: &str = "\
set xlabel 't'
set key outside
set multiplot layout 3,1
plot 'trajectory.dat' using 1:2 with lines title 'x (uninfected)'
plot 'trajectory.dat' using 1:3 with lines title 'y (infected)'
plot 'trajectory.dat' using 1:4 with lines title 'z (free virus)'
unset multiplot
";

/// Runs the scenario and writes `out_dir/<id>/{trajectory.csv, trajectory.dat,
/// plot.gp, report.json}`.
pub fn run_scenario(scenario: &Scenario, out_dir: &Path) -> Result<(RunReport, PathBuf)> {
    let (report, traj) = build_report(scenario)?;
    let dir = out_dir.join(&scenario.id);
    fs::create_dir_all(&dir)?;
    let mut csv = BufWriter::new(fs::File::create(dir.join("trajectory.csv"))?);
    traj.write_csv(&mut csv)?;
    csv.flush()?;
    let mut dat = BufWriter::new(fs::File::create(dir.join("trajectory.dat"))?);
    traj.write_gnuplot(&mut dat)?;
    dat.flush()?;
    fs::write(dir.join("plot.gp"), GNUPLOT_SCRIPT)?;
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    fs::write(dir.join("report.json"), json)?;
    Ok((report, dir))
}

/// Closed interval for one sweep coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub const fn point(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    fn sample_log(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.lo == self.hi {
            return self.lo;
        }
        rng.gen_range(self.lo.ln()..=self.hi.ln())
            .exp()
            .clamp(self.lo, self.hi)
    }

    fn sample_uniform(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.lo == self.hi {
            return self.lo;
        }
        rng.gen_range(self.lo..=self.hi)
    }
}

/// Sampling box. Rates and Λ are drawn log-uniformly, η and ε uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterBox {
    pub mu1: Range,
    pub mu2: Range,
    pub mu3: Range,
    pub beta: Range,
    pub eta: Range,
    pub epsilon: Range,
    pub p: Range,
    pub q: Range,
    pub lambda: Range,
}

impl Default for ParameterBox {
    fn default() -> Self {
        let rate = Range::new(1e-2, 1e2);
        let frac = Range::new(0.0, 0.9);
        Self {
            mu1: rate,
            mu2: rate,
            mu3: rate,
            beta: rate,
            eta: frac,
            epsilon: frac,
            p: rate,
            q: rate,
            lambda: rate,
        }
    }
}

impl ParameterBox {
    /// Box collapsed to a single parameter set.
    pub fn point(params: &Parameters, lambda: f64) -> Self {
        Self {
            mu1: Range::point(params.mu1),
            mu2: Range::point(params.mu2),
            mu3: Range::point(params.mu3),
            beta: Range::point(params.beta),
            eta: Range::point(params.eta),
            epsilon: Range::point(params.epsilon),
            p: Range::point(params.p),
            q: Range::point(params.q),
            lambda: Range::point(lambda),
        }
    }

    fn coordinates(&self) -> [(&'static str, Range, bool); 9] {
        [
            ("mu1", self.mu1, true),
            ("mu2", self.mu2, true),
            ("mu3", self.mu3, true),
            ("beta", self.beta, true),
            ("eta", self.eta, false),
            ("epsilon", self.epsilon, false),
            ("p", self.p, true),
            ("q", self.q, true),
            ("lambda", self.lambda, true),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, r, positive) in self.coordinates() {
            if !(r.lo.is_finite() && r.hi.is_finite()) || r.lo > r.hi {
                return Err(Error::Config(format!(
                    "empty sweep range for {name}: [{}, {}]",
                    r.lo, r.hi
                )));
            }
            let valid = if positive {
                r.lo > 0.0
            } else {
                r.lo >= 0.0 && r.hi < 1.0
            };
            if !valid {
                return Err(Error::Config(format!(
                    "sweep range for {name} leaves the valid domain: [{}, {}]",
                    r.lo, r.hi
                )));
            }
        }
        Ok(())
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> Result<(Parameters, f64)> {
        let params = Parameters::new(
            self.mu1.sample_log(rng),
            self.mu2.sample_log(rng),
            self.mu3.sample_log(rng),
            self.beta.sample_log(rng),
            self.eta.sample_uniform(rng),
            self.epsilon.sample_uniform(rng),
            self.p.sample_log(rng),
            self.q.sample_log(rng),
        )?;
        Ok((params, self.lambda.sample_log(rng)))
    }
}

/// Band around r0_ngm = 1 excluded from the feasibility test.
pub const FEASIBILITY_BAND: f64 = 1e-6;
/// Band around r0_ngm = 1 excluded from the eigenvalue threshold test.
pub const EIGEN_BAND: f64 = 1e-3;

/// Pass/fail flags of the property suite for one parameter set. `None`
/// means the check was excluded (threshold band, marginal spectrum,
/// infeasible endemic state or no integration).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropertyFlags {
    pub r0_ngm: f64,
    pub endemic_feasible: bool,
    pub dfe_residual: f64,
    pub endemic_residual: Option<f64>,
    pub dfe_max_real_part: f64,
    pub dfe_residual_ok: bool,
    pub endemic_residual_ok: Option<bool>,
    pub feasibility_matches_threshold: Option<bool>,
    pub eigen_matches_threshold: Option<bool>,
    pub routh_hurwitz_agrees: Option<bool>,
    pub positivity_ok: Option<bool>,
    pub bounds_ok: Option<bool>,
}

impl PropertyFlags {
    pub fn all_ok(&self) -> bool {
        self.dfe_residual_ok
            && [
                self.endemic_residual_ok,
                self.feasibility_matches_threshold,
                self.eigen_matches_threshold,
                self.routh_hurwitz_agrees,
                self.positivity_ok,
                self.bounds_ok,
            ]
            .iter()
            .all(|f| f.unwrap_or(true))
    }
}

/// Evaluates the property suite; `traj`, when given, supplies the
/// positivity and bound monitor counts.
pub fn property_flags(
    params: &Parameters,
    lambda: f64,
    traj: Option<&Trajectory>,
) -> PropertyFlags {
    let forcing = Forcing::Constant { value: lambda };
    let r0 = r0_all(params, &forcing).r0_ngm;
    let dfe = disease_free(params, &forcing).expect("constant supply");
    let end = endemic(params, &forcing).expect("constant supply");
    let feasible = end.feasible == Some(true);
    let endemic_residual = feasible.then_some(end.residual_norm);

    let j = jacobian(params, &dfe.state);
    let max_re = eigenvalues_3x3(&j)
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max);
    let gap = r0 - 1.0;
    PropertyFlags {
        r0_ngm: r0,
        endemic_feasible: feasible,
        dfe_residual: dfe.residual_norm,
        endemic_residual,
        dfe_max_real_part: max_re,
        dfe_residual_ok: dfe.residual_norm <= 1e-14 * lambda.max(1.0),
        endemic_residual_ok: endemic_residual.map(|r| r <= 1e-10),
        feasibility_matches_threshold: (gap.abs() >= FEASIBILITY_BAND)
            .then_some(feasible == (r0 > 1.0)),
        eigen_matches_threshold: (gap.abs() >= EIGEN_BAND).then_some((max_re > 0.0) == (gap > 0.0)),
        routh_hurwitz_agrees: (max_re.abs() >= MARGINAL_BAND)
            .then_some((max_re < 0.0) == routh_hurwitz_stable(&j)),
        positivity_ok: traj.map(|t| t.count(EventKind::PositivityViolation) == 0),
        bounds_ok: traj.map(|t| t.count(EventKind::BoundViolation) == 0),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub bounds: ParameterBox,
    pub n_draws: usize,
    pub seed: u64,
    /// Length of the positivity/bounds integration from `u0`; `None` skips it.
    pub horizon: Option<f64>,
    pub u0: State,
    pub ctl: StepControl,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            bounds: ParameterBox::default(),
            n_draws: 1000,
            seed: 42,
            horizon: None,
            u0: State::new(1.0, 1.0, 1.0),
            ctl: StepControl::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub draw: usize,
    pub params: Parameters,
    pub lambda: f64,
    pub flags: PropertyFlags,
    /// Set when the positivity/bounds integration terminated early.
    pub terminated: Option<EventKind>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckCount {
    pub checked: usize,
    pub excluded: usize,
    pub violations: usize,
}

impl CheckCount {
    fn add(&mut self, flag: Option<bool>) {
        match flag {
            Some(true) => self.checked += 1,
            Some(false) => {
                self.checked += 1;
                self.violations += 1;
            }
            None => self.excluded += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub draws: usize,
    pub seed: u64,
    pub checks: BTreeMap<String, CheckCount>,
    pub terminated_runs: usize,
}

impl SweepSummary {
    pub fn total_violations(&self) -> usize {
        self.checks.values().map(|c| c.violations).sum()
    }
}

/// Draws `n_draws` parameter sets from the seeded stream and evaluates the
/// property suite on each. Rows come back in draw order.
pub fn sweep(cfg: &SweepConfig) -> Result<(Vec<SweepRow>, SweepSummary)> {
    cfg.bounds.validate()?;
    if cfg.n_draws == 0 {
        return Err(Error::Config("sweep needs at least one draw".into()));
    }
    if let Some(h) = cfg.horizon {
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::Config(format!("sweep horizon must be > 0, got {h}")));
        }
        cfg.ctl.validate()?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let draws = (0..cfg.n_draws)
        .map(|_| cfg.bounds.draw(&mut rng))
        .collect::<Result<Vec<_>>>()?;

    let rows = draws
        .into_par_iter()
        .enumerate()
        .map(|(i, (params, lambda))| {
            let traj = match cfg.horizon {
                Some(h) => Some(integrate(
                    &params,
                    &Forcing::Constant { value: lambda },
                    cfg.u0,
                    0.0,
                    h,
                    &cfg.ctl,
                )?),
                None => None,
            };
            Ok(SweepRow {
                draw: i,
                params,
                lambda,
                flags: property_flags(&params, lambda, traj.as_ref()),
                terminated: traj.as_ref().and_then(|t| t.termination()).map(|e| e.kind),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut checks: BTreeMap<String, CheckCount> = BTreeMap::new();
    for row in &rows {
        let f = &row.flags;
        for (name, flag) in [
            ("dfe_residual", Some(f.dfe_residual_ok)),
            ("endemic_residual", f.endemic_residual_ok),
            ("feasibility_threshold", f.feasibility_matches_threshold),
            ("eigen_threshold", f.eigen_matches_threshold),
            ("routh_hurwitz", f.routh_hurwitz_agrees),
            ("positivity", f.positivity_ok),
            ("bounds", f.bounds_ok),
        ] {
            checks.entry(name.to_string()).or_default().add(flag);
        }
    }
    let summary = SweepSummary {
        draws: rows.len(),
        seed: cfg.seed,
        checks,
        terminated_runs: rows.iter().filter(|r| r.terminated.is_some()).count(),
    };
    Ok((rows, summary))
}

pub const SWEEP_CSV_HEADER: &str = "draw,mu1,mu2,mu3,beta,eta,epsilon,p,q,lambda,r0_ngm,\
endemic_feasible,dfe_residual,endemic_residual,dfe_max_real_part,dfe_residual_ok,\
endemic_residual_ok,feasibility_threshold_ok,eigen_threshold_ok,routh_hurwitz_ok,\
positivity_ok,bounds_ok,terminated";

fn flag(f: Option<bool>) -> &'static str {
    match f {
        Some(true) => "pass",
        Some(false) => "FAIL",
        None => "excluded",
    }
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{SWEEP_CSV_HEADER}")?;
    for r in rows {
        let p = &r.params;
        let f = &r.flags;
        write!(w, "{}", r.draw)?;
        for v in [
            p.mu1, p.mu2, p.mu3, p.beta, p.eta, p.epsilon, p.p, p.q, r.lambda, f.r0_ngm,
        ] {
            write!(w, ",{v:.16e}")?;
        }
        writeln!(
            w,
            ",{},{:.16e},{},{:.16e},{},{},{},{},{},{},{},{}",
            f.endemic_feasible,
            f.dfe_residual,
            f.endemic_residual
                .map_or(String::new(), |v| format!("{v:.16e}")),
            f.dfe_max_real_part,
            flag(Some(f.dfe_residual_ok)),
            flag(f.endemic_residual_ok),
            flag(f.feasibility_matches_threshold),
            flag(f.eigen_matches_threshold),
            flag(f.routh_hurwitz_agrees),
            flag(f.positivity_ok),
            flag(f.bounds_ok),
            r.terminated
                .map_or(String::new(), |k| serde_json::to_string(&k)
                    .unwrap_or_default()
                    .replace('"', "")),
        )?;
    }
    Ok(())
}

/// Runs the sweep and writes `sweep.csv` and `sweep_summary.json` to `out_dir`.
pub fn run_sweep(cfg: &SweepConfig, out_dir: &Path) -> Result<SweepSummary> {
    let (rows, summary) = sweep(cfg)?;
    fs::create_dir_all(out_dir)?;
    let mut w = BufWriter::new(fs::File::create(out_dir.join("sweep.csv"))?);
    write_sweep_csv(&rows, &mut w)?;
    w.flush()?;
    let mut json = serde_json::to_string_pretty(&summary)?;
    json.push('\n');
    fs::write(out_dir.join("sweep_summary.json"), json)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::lookup;

    #[test]
    fn table2_report_contents() {
        let (report, _) = build_report(&lookup("table2-dfe").unwrap()).unwrap();
        assert!(report.final_state.max_dist(&State::new(4.90675, 0.0, 0.0)) <= 1e-5);
        assert!((report.r0.r0_ngm - 7.0096e-5).abs() < 1e-8);
        let cond = report
            .analysis(Analysis::Conditions)
            .unwrap()
            .result()
            .unwrap();
        let margin = cond["dfe"]["lines"][0]["margin"].as_f64().unwrap();
        assert!((margin + 1.78508).abs() < 1e-5);
        assert_eq!(cond["dfe"]["lines"][0]["satisfied"], false);
        let lyap = report
            .analysis(Analysis::Lyapunov)
            .unwrap()
            .result()
            .unwrap();
        let rate = lyap["rate"].as_f64().unwrap();
        assert!((rate - 4.0).abs() <= 0.8, "rate {rate}");
        assert_eq!(report.exit_code(), 0);
        assert!(report.properties.unwrap().all_ok());
    }

    #[test]
    fn nonautonomous_analyses_are_skipped_with_reason() {
        let (report, _) = build_report(&lookup("set1-nonauto").unwrap()).unwrap();
        for a in [
            Analysis::Equilibria,
            Analysis::Stability,
            Analysis::Lyapunov,
        ] {
            assert!(matches!(
                report.analysis(a),
                Some(AnalysisOutcome::Skipped { .. })
            ));
        }
        for a in [
            Analysis::Conditions,
            Analysis::Contraction,
            Analysis::Pullback,
            Analysis::Absorbing,
        ] {
            assert!(
                matches!(report.analysis(a), Some(AnalysisOutcome::Done { .. })),
                "{a:?}"
            );
        }
        assert!(report.properties.is_none());
    }

    #[test]
    fn absorbing_precondition_becomes_skip() {
        let mut s = lookup("table2-dfe").unwrap();
        s.params = Parameters::new(1.0, 1.0, 1.0, 0.1, 0.0, 0.0, 2.0, 1.0).unwrap();
        s.analyses = vec![Analysis::Absorbing];
        let (report, _) = build_report(&s).unwrap();
        assert!(matches!(
            report.analysis(Analysis::Absorbing),
            Some(AnalysisOutcome::Skipped { .. })
        ));
    }

    #[test]
    fn blow_up_run_reports_exit_three() {
        let mut s = lookup("table3-dfe-check").unwrap();
        s.ctl = StepControl::fixed(1.0);
        let (report, _) = build_report(&s).unwrap();
        assert_eq!(report.exit_code(), 3);
        assert!(report
            .analyses
            .values()
            .all(|o| matches!(o, AnalysisOutcome::Skipped { .. })));
    }

    #[test]
    fn sweep_draws_are_deterministic() {
        let cfg = SweepConfig {
            n_draws: 50,
            ..Default::default()
        };
        let (a, sa) = sweep(&cfg).unwrap();
        let (b, sb) = sweep(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(sa, sb);
        let (c, _) = sweep(&SweepConfig { seed: 43, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn sweep_respects_box() {
        let cfg = SweepConfig {
            n_draws: 200,
            ..Default::default()
        };
        let (rows, _) = sweep(&cfg).unwrap();
        for r in rows {
            let p = r.params;
            for v in [p.mu1, p.mu2, p.mu3, p.beta, p.p, p.q, r.lambda] {
                assert!((1e-2..=1e2).contains(&v));
            }
            assert!((0.0..=0.9).contains(&p.eta) && (0.0..=0.9).contains(&p.epsilon));
        }
    }

    #[test]
    fn empty_box_is_a_config_error() {
        let mut cfg = SweepConfig::default();
        cfg.bounds.mu1 = Range::new(2.0, 1.0);
        let err = sweep(&cfg).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let mut cfg = SweepConfig::default();
        cfg.bounds.eta = Range::new(0.0, 1.0);
        assert!(sweep(&cfg).is_err());
        let cfg = SweepConfig {
            n_draws: 0,
            ..Default::default()
        };
        assert!(sweep(&cfg).is_err());
    }

    #[test]
    fn collapsed_box_matches_scenario_flags() {
        let s = lookup("table2-dfe").unwrap();
        let lambda = s.forcing.constant_value().unwrap();
        let cfg = SweepConfig {
            bounds: ParameterBox::point(&s.params, lambda),
            n_draws: 1,
            horizon: Some(s.t_span[1]),
            u0: s.u0,
            ctl: s.ctl,
            ..Default::default()
        };
        let (rows, _) = sweep(&cfg).unwrap();
        let (report, _) = build_report(&s).unwrap();
        assert_eq!(rows[0].params, s.params);
        assert_eq!(Some(rows[0].flags), report.properties);
    }
}
