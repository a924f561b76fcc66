//! Two-parameter process φ(t, t0, u0) for time-varying production: semigroup
//! checks, pullback estimates and the absorbing ℓ1 ball.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::{integrate, StepControl, Trajectory};
use crate::model::{l1_decay_rate, Forcing, Parameters, State};

pub const DEFAULT_HORIZONS: [f64; 4] = [5.0, 10.0, 20.0, 40.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessQuery {
    pub t: f64,
    pub t0: f64,
    pub u0: State,
    pub params: Parameters,
    pub forcing: Forcing,
}

impl ProcessQuery {
    pub fn validate(&self) -> Result<()> {
        if !(self.t.is_finite() && self.t0.is_finite() && self.t >= self.t0) {
            return Err(Error::InvalidArgument(format!(
                "process query needs finite t >= t0, got t = {}, t0 = {}",
                self.t, self.t0
            )));
        }
        Ok(())
    }
}

/// φ(t, t0, u0). Returns `u0` itself when `t == t0`; a run that terminates
/// early has no endpoint and is reported as an error.
pub fn process_solve(q: &ProcessQuery, ctl: &StepControl) -> Result<State> {
    q.validate()?;
    if q.t == q.t0 {
        return Ok(q.u0);
    }
    let traj = integrate(&q.params, &q.forcing, q.u0, q.t0, q.t, ctl)?;
    if let Some(ev) = traj.termination() {
        return Err(Error::Terminated(ev.clone()));
    }
    Ok(traj.final_state())
}

/// |φ(t2, t0, u0) − φ(t2, t1, φ(t1, t0, u0))| in the max-norm.
pub fn semigroup_check(
    params: &Parameters,
    forcing: &Forcing,
    u0: State,
    times: [f64; 3],
    ctl: &StepControl,
) -> Result<f64> {
    let [t0, t1, t2] = times;
    if !(t0 <= t1 && t1 <= t2) {
        return Err(Error::InvalidArgument(format!(
            "semigroup check needs t0 <= t1 <= t2, got {times:?}"
        )));
    }
    let query = |t: f64, t0: f64, u0: State| ProcessQuery {
        t,
        t0,
        u0,
        params: *params,
        forcing: forcing.clone(),
    };
    let direct = process_solve(&query(t2, t0, u0), ctl)?;
    let mid = process_solve(&query(t1, t0, u0), ctl)?;
    let composed = process_solve(&query(t2, t1, mid), ctl)?;
    Ok(direct.max_dist(&composed))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PullbackEstimate {
    pub t_star: f64,
    pub horizons: Vec<f64>,
    pub seeds: Vec<State>,
    /// `endpoints[seed][horizon]` = φ(t*, t* − T, seed).
    pub endpoints: Vec<Vec<State>>,
    /// Per seed, max-norm distance between endpoints of successive horizons.
    pub cauchy_gaps: Vec<Vec<f64>>,
    /// Largest pairwise max-norm distance between seeds at the longest horizon.
    pub cross_seed_gap: f64,
    pub tol: f64,
    pub converged: bool,
}

impl PullbackEstimate {
    /// Largest final Cauchy gap over all seeds.
    pub fn final_gap(&self) -> f64 {
        self.cauchy_gaps
            .iter()
            .filter_map(|g| g.last().copied())
            .fold(0.0, f64::max)
    }

    /// Endpoint of the first seed at the longest horizon.
    pub fn point(&self) -> State {
        *self.endpoints[0].last().expect("at least two horizons")
    }
}

pub fn pullback_estimate(
    params: &Parameters,
    forcing: &Forcing,
    t_star: f64,
    horizons: &[f64],
    seeds: &[State],
    tol: f64,
    ctl: &StepControl,
) -> Result<PullbackEstimate> {
    if horizons.len() < 2 {
        return Err(Error::InvalidArgument(
            "pullback needs at least two horizons".into(),
        ));
    }
    if !horizons.iter().all(|h| h.is_finite() && *h > 0.0)
        || !horizons.windows(2).all(|w| w[1] > w[0])
    {
        return Err(Error::InvalidArgument(format!(
            "pullback horizons must be positive and strictly increasing, got {horizons:?}"
        )));
    }
    if seeds.len() < 2 {
        return Err(Error::InvalidArgument(
            "pullback needs at least two seeds".into(),
        ));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tol must be positive, got {tol}"
        )));
    }
    if !t_star.is_finite() {
        return Err(Error::InvalidArgument("t_star must be finite".into()));
    }

    let jobs: Vec<(usize, usize)> = (0..seeds.len())
        .flat_map(|s| (0..horizons.len()).map(move |h| (s, h)))
        .collect();
    let flat = jobs
        .par_iter()
        .map(|&(s, h)| {
            process_solve(
                &ProcessQuery {
                    t: t_star,
                    t0: t_star - horizons[h],
                    u0: seeds[s],
                    params: *params,
                    forcing: forcing.clone(),
                },
                ctl,
            )
        })
        .collect::<Result<Vec<State>>>()?;
    let endpoints: Vec<Vec<State>> = flat.chunks(horizons.len()).map(<[State]>::to_vec).collect();

    let cauchy_gaps: Vec<Vec<f64>> = endpoints
        .iter()
        .map(|row| row.windows(2).map(|w| w[0].max_dist(&w[1])).collect())
        .collect();
    let mut cross_seed_gap: f64 = 0.0;
    for i in 0..endpoints.len() {
        for j in i + 1..endpoints.len() {
            let a = endpoints[i].last().unwrap();
            let b = endpoints[j].last().unwrap();
            cross_seed_gap = cross_seed_gap.max(a.max_dist(b));
        }
    }
    let final_gap = cauchy_gaps
        .iter()
        .filter_map(|g| g.last().copied())
        .fold(0.0, f64::max);
    Ok(PullbackEstimate {
        t_star,
        horizons: horizons.to_vec(),
        seeds: seeds.to_vec(),
        endpoints,
        cauchy_gaps,
        cross_seed_gap,
        tol,
        converged: final_gap <= tol && cross_seed_gap <= tol,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbsorbingSetReport {
    /// min{μ1, μ2 − (1−ε)p, μ3}.
    pub alpha: f64,
    /// Λ_M / α.
    pub ceiling: f64,
    pub slack: f64,
    /// max{‖u0‖₁, ceiling}: the ℓ1 norm may never exceed this.
    pub envelope: f64,
    pub max_l1: f64,
    /// First sample time after which ‖u‖₁ ≤ ceiling + slack for good.
    pub entry_time: Option<f64>,
    pub holds: bool,
}

/// Checks the ℓ1 bound along `traj`. `slack` defaults to 1e-6 · ceiling.
pub fn absorbing_check(
    params: &Parameters,
    forcing: &Forcing,
    traj: &Trajectory,
    slack: Option<f64>,
) -> Result<AbsorbingSetReport> {
    let alpha = l1_decay_rate(params).ok_or_else(|| {
        Error::Precondition(format!(
            "absorbing ball needs mu2 > (1 - epsilon) p, got {} <= {}",
            params.mu2,
            params.production()
        ))
    })?;
    if traj.is_empty() {
        return Err(Error::InvalidArgument("empty trajectory".into()));
    }
    let ceiling = forcing.upper() / alpha;
    let slack = slack.unwrap_or(1e-6 * ceiling);
    if !(slack > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "slack must be positive, got {slack}"
        )));
    }
    let norms: Vec<f64> = traj.states.iter().map(State::l1).collect();
    let envelope = norms[0].max(ceiling);
    let max_l1 = norms.iter().copied().fold(0.0, f64::max);
    let inside = ceiling + slack;
    let entry_time = match norms.iter().rposition(|&n| n > inside) {
        None => Some(traj.times[0]),
        Some(i) if i + 1 < norms.len() => Some(traj.times[i + 1]),
        Some(_) => None,
    };
    Ok(AbsorbingSetReport {
        alpha,
        ceiling,
        slack,
        envelope,
        max_l1,
        entry_time,
        holds: max_l1 <= envelope * (1.0 + 1e-6),
    })
}
