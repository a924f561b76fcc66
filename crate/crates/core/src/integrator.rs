//! Explicit Runge–Kutta integration of the model with runtime monitors.
//!
//! Fixed-step runs use classical RK4; adaptive runs use the Dormand–Prince
//! 5(4) pair with a PI step-size controller. After every accepted step the
//! state is checked for positivity, for the analytic ceilings of
//! [`analytic_bounds`], and for blow-up. Blow-up and non-finite values end the
//! run; the partial trajectory is still returned because it is the diagnostic.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{analytic_bounds, vector_field, BoundsReport, Forcing, Parameters, State};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum StepMode {
    Fixed {
        h: f64,
    },
    Adaptive {
        abs_tol: f64,
        rel_tol: f64,
        h_init: f64,
        h_min: f64,
        h_max: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepControl {
    #[serde(flatten)]
    pub mode: StepMode,
    #[serde(default = "default_blow_up")]
    pub blow_up_threshold: f64,
    #[serde(default = "default_positivity_tol")]
    pub positivity_tol: f64,
}

fn default_blow_up() -> f64 {
    1e12
}

fn default_positivity_tol() -> f64 {
    1e-9
}

impl Default for StepControl {
    fn default() -> Self {
        Self::adaptive(1e-10, 1e-8)
    }
}

impl StepControl {
    pub fn fixed(h: f64) -> Self {
        Self {
            mode: StepMode::Fixed { h },
            blow_up_threshold: default_blow_up(),
            positivity_tol: default_positivity_tol(),
        }
    }

    pub fn adaptive(abs_tol: f64, rel_tol: f64) -> Self {
        Self {
            mode: StepMode::Adaptive {
                abs_tol,
                rel_tol,
                h_init: 1e-3,
                h_min: 1e-12,
                h_max: 1.0,
            },
            blow_up_threshold: default_blow_up(),
            positivity_tol: default_positivity_tol(),
        }
    }

    /// Replaces both adaptive tolerances; fixed-step controls are unchanged.
    pub fn with_tolerance(mut self, tol: f64) -> Self {
        if let StepMode::Adaptive {
            abs_tol, rel_tol, ..
        } = &mut self.mode
        {
            *abs_tol = tol;
            *rel_tol = tol;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        match self.mode {
            StepMode::Fixed { h } => {
                if !(h.is_finite() && h > 0.0) {
                    return bad(format!("fixed step h must be > 0, got {h}"));
                }
            }
            StepMode::Adaptive {
                abs_tol,
                rel_tol,
                h_init,
                h_min,
                h_max,
            } => {
                if !(abs_tol > 0.0 && rel_tol > 0.0) {
                    return bad("adaptive tolerances must be > 0".into());
                }
                if !(h_min > 0.0 && h_min <= h_init && h_init <= h_max && h_max.is_finite()) {
                    return bad(format!(
                        "need 0 < h_min <= h_init <= h_max, got {h_min}, {h_init}, {h_max}"
                    ));
                }
            }
        }
        if !(self.blow_up_threshold > 0.0) {
            return bad("blow_up_threshold must be > 0".into());
        }
        if !(self.positivity_tol >= 0.0) {
            return bad("positivity_tol must be >= 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    PositivityViolation,
    BoundViolation,
    BlowUp,
    Nonfinite,
    StepFloor,
}

impl EventKind {
    pub fn terminates(self) -> bool {
        matches!(
            self,
            EventKind::BlowUp | EventKind::Nonfinite | EventKind::StepFloor
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorEvent {
    pub kind: EventKind,
    pub time: f64,
    pub detail: String,
}

impl fmt::Display for MonitorEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} at t = {}: {}", self.kind, self.time, self.detail)
    }
}

/// Accepted steps of one integration, with the slopes needed for Hermite
/// dense output and the model that produced it.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub params: Parameters,
    pub forcing: Forcing,
    pub times: Vec<f64>,
    pub states: Vec<State>,
    pub slopes: Vec<[f64; 3]>,
    pub events: Vec<MonitorEvent>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn t0(&self) -> f64 {
        self.times[0]
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("trajectory has an initial record")
    }

    pub fn final_state(&self) -> State {
        *self
            .states
            .last()
            .expect("trajectory has an initial record")
    }

    /// The event that ended the run early, if any.
    pub fn termination(&self) -> Option<&MonitorEvent> {
        self.events.iter().find(|e| e.kind.terminates())
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    /// Cubic Hermite interpolation on the accepted steps; `None` outside the span.
    pub fn state_at(&self, t: f64) -> Option<State> {
        let (first, last) = (self.t0(), self.final_time());
        if !(t >= first && t <= last) {
            return None;
        }
        let i = self.times.partition_point(|&ti| ti <= t);
        if i == self.times.len() {
            return Some(self.final_state());
        }
        let (t0, t1) = (self.times[i - 1], self.times[i]);
        let h = t1 - t0;
        let s = (t - t0) / h;
        let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        let (y0, y1) = (self.states[i - 1].to_array(), self.states[i].to_array());
        let (d0, d1) = (self.slopes[i - 1], self.slopes[i]);
        let mut out = [0.0; 3];
        for c in 0..3 {
            out[c] = h00 * y0[c] + h10 * h * d0[c] + h01 * y1[c] + h11 * h * d1[c];
        }
        Some(State::from_array(out))
    }

    pub fn resample(&self, times: &[f64]) -> Result<Vec<State>> {
        times
            .iter()
            .map(|&t| {
                self.state_at(t).ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "t = {t} outside trajectory span [{}, {}]",
                        self.t0(),
                        self.final_time()
                    ))
                })
            })
            .collect()
    }

    /// CSV with header `t,x,y,z`, one row per accepted step, 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,x,y,z")?;
        for (t, s) in self.times.iter().zip(&self.states) {
            writeln!(w, "{:.16e},{:.16e},{:.16e},{:.16e}", t, s.x, s.y, s.z)?;
        }
        Ok(())
    }

    /// Whitespace-separated columns for gnuplot.
    pub fn write_gnuplot<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# t x y z")?;
        for (t, s) in self.times.iter().zip(&self.states) {
            writeln!(w, "{:.16e} {:.16e} {:.16e} {:.16e}", t, s.x, s.y, s.z)?;
        }
        Ok(())
    }
}

/// Tracks monitor state between steps so each violation is reported at onset.
struct Monitors {
    bounds: BoundsReport,
    l1_limit: Option<f64>,
    blow_up: f64,
    positivity_tol: f64,
    negative: [bool; 3],
    over: [bool; 3],
}

impl Monitors {
    fn new(params: &Parameters, forcing: &Forcing, u0: &State, ctl: &StepControl) -> Self {
        let bounds = analytic_bounds(params, forcing, u0);
        Self {
            l1_limit: bounds.l1_ceiling.map(|c| c.max(u0.l1())),
            bounds,
            blow_up: ctl.blow_up_threshold,
            positivity_tol: ctl.positivity_tol,
            negative: [false; 3],
            over: [false; 3],
        }
    }

    /// Returns true when the run must stop.
    fn check(&mut self, t: f64, s: &State, events: &mut Vec<MonitorEvent>) -> bool {
        const NAMES: [&str; 3] = ["x", "y", "z"];
        let v = s.to_array();
        if let Some(c) = v.iter().position(|c| !c.is_finite()) {
            events.push(MonitorEvent {
                kind: EventKind::Nonfinite,
                time: t,
                detail: format!("{} = {}", NAMES[c], v[c]),
            });
            return true;
        }
        if let Some(c) = v.iter().position(|c| c.abs() > self.blow_up) {
            events.push(MonitorEvent {
                kind: EventKind::BlowUp,
                time: t,
                detail: format!(
                    "|{}| = {:e} exceeds {:e}",
                    NAMES[c],
                    v[c].abs(),
                    self.blow_up
                ),
            });
            return true;
        }
        for c in 0..3 {
            let neg = v[c] < -self.positivity_tol;
            if neg && !self.negative[c] {
                events.push(MonitorEvent {
                    kind: EventKind::PositivityViolation,
                    time: t,
                    detail: format!("{} = {:e}", NAMES[c], v[c]),
                });
            }
            self.negative[c] = neg;
        }
        let checks = [
            ("x + y", s.x + s.y, Some(self.bounds.m * (1.0 + 1e-6))),
            ("z", s.z, Some(self.bounds.z_ceiling * (1.0 + 1e-3))),
            ("|u|_1", s.l1(), self.l1_limit.map(|l| l * (1.0 + 1e-6))),
        ];
        for (i, (name, value, limit)) in checks.into_iter().enumerate() {
            let Some(limit) = limit else { continue };
            let over = value > limit;
            if over && !self.over[i] {
                events.push(MonitorEvent {
                    kind: EventKind::BoundViolation,
                    time: t,
                    detail: format!("{name} = {value:e} exceeds {limit:e}"),
                });
            }
            self.over[i] = over;
        }
        false
    }
}

fn axpy(y: &[f64; 3], h: f64, terms: &[(f64, &[f64; 3])]) -> State {
    let mut out = *y;
    for (c, k) in terms {
        for i in 0..3 {
            out[i] += h * c * k[i];
        }
    }
    State::from_array(out)
}

/// Integrates from `(t0, u0)` to `t_end`.
pub fn integrate(
    params: &Parameters,
    forcing: &Forcing,
    u0: State,
    t0: f64,
    t_end: f64,
    ctl: &StepControl,
) -> Result<Trajectory> {
    params.validate()?;
    forcing.validate()?;
    ctl.validate()?;
    if !(t0.is_finite() && t_end.is_finite() && t_end > t0) {
        return Err(Error::InvalidArgument(format!(
            "need finite t_end > t0, got [{t0}, {t_end}]"
        )));
    }
    if !(u0.is_finite() && u0.is_nonnegative()) {
        return Err(Error::InvalidArgument(format!(
            "initial state must be finite and nonnegative, got {u0:?}"
        )));
    }
    if let Some((lo, hi)) = forcing.domain() {
        if t0 < lo || t_end > hi {
            return Err(Error::OutOfDomain {
                t: if t0 < lo { t0 } else { t_end },
                lo,
                hi,
            });
        }
    }

    let mut traj = Trajectory {
        params: *params,
        forcing: forcing.clone(),
        times: vec![t0],
        states: vec![u0],
        slopes: vec![vector_field(params, forcing, t0, &u0)],
        events: Vec::new(),
    };
    let mut monitors = Monitors::new(params, forcing, &u0, ctl);
    match ctl.mode {
        StepMode::Fixed { h } => rk4_run(&mut traj, &mut monitors, t_end, h),
        StepMode::Adaptive {
            abs_tol,
            rel_tol,
            h_init,
            h_min,
            h_max,
        } => dopri_run(
            &mut traj,
            &mut monitors,
            t_end,
            Tolerances {
                abs_tol,
                rel_tol,
                h_init,
                h_min,
                h_max,
            },
        ),
    }
    Ok(traj)
}

fn rk4_run(traj: &mut Trajectory, monitors: &mut Monitors, t_end: f64, h: f64) {
    let params = traj.params;
    let forcing = traj.forcing.clone();
    let f = |t: f64, s: &State| vector_field(&params, &forcing, t, s);
    let t0 = traj.t0();
    let n = (((t_end - t0) / h) - 1e-9).ceil().max(1.0) as usize;
    let mut y = traj.states[0];
    let mut t = t0;
    for k in 1..=n {
        let t_next = if k == n { t_end } else { t0 + k as f64 * h };
        let step = t_next - t;
        let ya = y.to_array();
        let k1 = f(t, &y);
        let k2 = f(t + 0.5 * step, &axpy(&ya, step, &[(0.5, &k1)]));
        let k3 = f(t + 0.5 * step, &axpy(&ya, step, &[(0.5, &k2)]));
        let k4 = f(t + step, &axpy(&ya, step, &[(1.0, &k3)]));
        y = axpy(
            &ya,
            step,
            &[
                (1.0 / 6.0, &k1),
                (1.0 / 3.0, &k2),
                (1.0 / 3.0, &k3),
                (1.0 / 6.0, &k4),
            ],
        );
        t = t_next;
        traj.times.push(t);
        traj.states.push(y);
        traj.slopes.push(f(t, &y));
        if monitors.check(t, &y, &mut traj.events) {
            return;
        }
    }
}

struct Tolerances {
    abs_tol: f64,
    rel_tol: f64,
    h_init: f64,
    h_min: f64,
    h_max: f64,
}

// Dormand–Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// b - b̂ for the embedded 4th-order error estimate.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

// PI controller constants.
const SAFETY: f64 = 0.9;
const BETA: f64 = 0.04;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;

fn dopri_run(traj: &mut Trajectory, monitors: &mut Monitors, t_end: f64, tol: Tolerances) {
    let params = traj.params;
    let forcing = traj.forcing.clone();
    let f = |t: f64, s: &State| vector_field(&params, &forcing, t, s);
    let expo = 0.2 - 0.75 * BETA;

    let mut t = traj.t0();
    let mut y = traj.states[0];
    let mut k1 = traj.slopes[0];
    let mut h = tol.h_init.min(tol.h_max);
    let mut err_old: f64 = 1e-4;
    let mut rejected_last = false;

    loop {
        let remaining = t_end - t;
        // Within rounding of t_end: finish exactly there.
        if remaining <= 1e-14 * t_end.abs().max(1.0) {
            break;
        }
        let last = h >= remaining;
        let step = if last { remaining } else { h };

        let ya = y.to_array();
        let k2 = f(t + C2 * step, &axpy(&ya, step, &[(A21, &k1)]));
        let k3 = f(t + C3 * step, &axpy(&ya, step, &[(A31, &k1), (A32, &k2)]));
        let k4 = f(
            t + C4 * step,
            &axpy(&ya, step, &[(A41, &k1), (A42, &k2), (A43, &k3)]),
        );
        let k5 = f(
            t + C5 * step,
            &axpy(&ya, step, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
        );
        let k6 = f(
            t + step,
            &axpy(
                &ya,
                step,
                &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
            ),
        );
        let y_new = axpy(
            &ya,
            step,
            &[(B1, &k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)],
        );
        let t_new = if last { t_end } else { t + step };
        let k7 = f(t_new, &y_new);

        let yn = y_new.to_array();
        let mut sum = 0.0;
        for i in 0..3 {
            let e = step
                * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sc = tol.abs_tol + tol.rel_tol * ya[i].abs().max(yn[i].abs());
            sum += (e / sc) * (e / sc);
        }
        let err = (sum / 3.0).sqrt();

        if err.is_finite() && err <= 1.0 {
            t = t_new;
            y = y_new;
            k1 = k7;
            traj.times.push(t);
            traj.states.push(y);
            traj.slopes.push(k7);
            if monitors.check(t, &y, &mut traj.events) {
                return;
            }
            let fac11 = err.max(1e-300).powf(expo);
            let mut fac = (fac11 / err_old.powf(BETA)) / SAFETY;
            fac = fac.clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
            let mut h_new = step / fac;
            if rejected_last {
                h_new = h_new.min(step);
            }
            err_old = err.max(1e-4);
            rejected_last = false;
            // A clipped final step says nothing about the natural step size.
            h = if last { h } else { h_new.min(tol.h_max) };
        } else {
            let shrink = if err.is_finite() {
                (SAFETY / err.powf(expo)).max(FAC_MIN)
            } else {
                FAC_MIN
            };
            h = step * shrink.min(1.0);
            rejected_last = true;
            if h < tol.h_min {
                traj.events.push(MonitorEvent {
                    kind: EventKind::StepFloor,
                    time: t,
                    detail: format!("step {h:e} fell below h_min {:e}", tol.h_min),
                });
                return;
            }
        }
    }
}

/// Observed order of the fixed-step scheme: `log2(err(h) / err(h/2))` with
/// errors measured at `t_end` against an `h/8` reference run.
pub fn richardson_order(
    params: &Parameters,
    forcing: &Forcing,
    u0: State,
    t0: f64,
    t_end: f64,
    h: f64,
) -> Result<f64> {
    let run = |step: f64| -> Result<State> {
        let traj = integrate(params, forcing, u0, t0, t_end, &StepControl::fixed(step))?;
        if let Some(ev) = traj.termination() {
            return Err(Error::Terminated(ev.clone()));
        }
        Ok(traj.final_state())
    };
    let coarse = run(h)?;
    let fine = run(h / 2.0)?;
    let reference = run(h / 8.0)?;
    let e_coarse = coarse.max_dist(&reference);
    let e_fine = fine.max_dist(&reference);
    if !(e_fine > 0.0) {
        return Err(Error::InvalidArgument(
            "fine-step error vanished; order undefined".into(),
        ));
    }
    Ok((e_coarse / e_fine).log2())
}
