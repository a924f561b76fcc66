//! Local stability, reproduction numbers, inequality-condition margins and the
//! empirical decay fits (Lyapunov function and trajectory contraction).
//!
//! Every inequality is evaluated exactly as written, left side against right
//! side; margins are reported whether or not they hold and nothing is
//! corrected. `μ* = min(μ1, μ2)` throughout.

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::Trajectory;
use crate::linalg::{characteristic_polynomial, cubic_roots};
use crate::model::{jacobian, Forcing, Matrix3, Parameters, State};

/// Band around zero in which the leading real part counts as marginal.
pub const MARGINAL_BAND: f64 = 1e-9;

/// Squared distances below this are treated as numerically zero.
const SQ_DIST_FLOOR: f64 = 1e-28;

/// Eigenvalues of `j` sorted by real part, then imaginary part.
pub fn eigenvalues_3x3(j: &Matrix3) -> [Complex64; 3] {
    let mut roots = cubic_roots(&characteristic_polynomial(j));
    roots.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    roots
}

/// Routh–Hurwitz test on λ³ + c2λ² + c1λ + c0: c2 > 0, c0 > 0, c2·c1 > c0.
pub fn routh_hurwitz_stable(j: &Matrix3) -> bool {
    let [c2, c1, c0] = characteristic_polynomial(j);
    c2 > 0.0 && c0 > 0.0 && c2 * c1 > c0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Stable,
    Unstable,
    Marginal,
}

pub fn classify(max_real_part: f64) -> Classification {
    if max_real_part.abs() < MARGINAL_BAND {
        Classification::Marginal
    } else if max_real_part < 0.0 {
        Classification::Stable
    } else {
        Classification::Unstable
    }
}

/// Three reproduction-number expressions evaluated side by side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReproductionNumbers {
    /// (1−η)β(Λ/μ1)/(μ2+q)
    pub r0_simple: f64,
    /// Λβp(1−ε)(1−η)/(μ1μ2(μ1+(1−ε)p))
    pub r0_alt: f64,
    /// Spectral radius of the next-generation matrix on (y, z):
    /// (1−η)(1−ε)βpΛ/(μ1μ3(μ2+q)). This is the one that decides DFE stability.
    pub r0_ngm: f64,
}

/// Uses Λ for constant forcing and Λ_M otherwise.
pub fn r0_all(params: &Parameters, forcing: &Forcing) -> ReproductionNumbers {
    let lambda = forcing.upper();
    let Parameters {
        mu1,
        mu2,
        mu3,
        beta,
        eta,
        epsilon,
        p,
        q,
    } = *params;
    ReproductionNumbers {
        r0_simple: (1.0 - eta) * beta * (lambda / mu1) / (mu2 + q),
        r0_alt: lambda * beta * p * (1.0 - epsilon) * (1.0 - eta)
            / (mu1 * mu2 * (mu1 + (1.0 - epsilon) * p)),
        r0_ngm: (1.0 - eta) * (1.0 - epsilon) * beta * p * lambda / (mu1 * mu3 * (mu2 + q)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionSet {
    /// Exponential stability at a given equilibrium (needs the equilibrium).
    Lemma1,
    /// The same inequalities at the disease-free point.
    Dfe,
    /// Polynomial form at the endemic point.
    Endemic,
    /// Time-varying production, in terms of Λ_M and a bound b1 on z.
    Nonauto,
}

impl ConditionSet {
    pub const ALL: [ConditionSet; 4] = [
        ConditionSet::Lemma1,
        ConditionSet::Dfe,
        ConditionSet::Endemic,
        ConditionSet::Nonauto,
    ];
}

impl std::str::FromStr for ConditionSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lemma1" => Ok(Self::Lemma1),
            "dfe" => Ok(Self::Dfe),
            "endemic" => Ok(Self::Endemic),
            "nonauto" => Ok(Self::Nonauto),
            other => Err(Error::InvalidArgument(format!(
                "unknown condition set `{other}` (lemma1, dfe, endemic, nonauto)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginLine {
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub satisfied: bool,
}

impl MarginLine {
    fn new(lhs: f64, rhs: f64) -> Self {
        let margin = lhs - rhs;
        Self {
            lhs,
            rhs,
            margin,
            satisfied: margin > 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionMargins {
    pub condition_set: ConditionSet,
    pub lines: Vec<MarginLine>,
    pub all_satisfied: bool,
    /// Named intermediate quantities (μ*, Λ, b1, ν1..ν3, k, ...).
    pub intermediates: BTreeMap<String, f64>,
}

impl ConditionMargins {
    fn from_lines(
        condition_set: ConditionSet,
        lines: Vec<MarginLine>,
        intermediates: BTreeMap<String, f64>,
    ) -> Self {
        Self {
            condition_set,
            all_satisfied: lines.iter().all(|l| l.satisfied),
            lines,
            intermediates,
        }
    }
}

/// Margins of one condition set. Λ is the constant rate or Λ_M; `b1`
/// defaults to 0 for the nonautonomous set.
pub fn condition_margins(
    set: ConditionSet,
    params: &Parameters,
    forcing: &Forcing,
    equilibrium: Option<&State>,
    b1: Option<f64>,
) -> Result<ConditionMargins> {
    let Parameters {
        mu1,
        mu2,
        mu3,
        beta,
        eta,
        epsilon,
        p,
        q,
    } = *params;
    let lambda = forcing.upper();
    let mu_star = params.mu_star();
    let b = params.infection();
    let prod = params.production();
    let x_bound = lambda / mu_star;
    let mut inter = BTreeMap::new();
    inter.insert("mu_star".to_string(), mu_star);
    inter.insert("lambda".to_string(), lambda);

    let lines = match set {
        ConditionSet::Lemma1 => {
            let eq = equilibrium.ok_or_else(|| {
                Error::InvalidArgument("the lemma1 condition set needs an equilibrium".into())
            })?;
            let zb = eq.z;
            // ν-certificate with the state x replaced by its bound Λ/μ*.
            let nu1 = 2.0 * mu1 + b * zb - b * x_bound - q;
            let nu2 = mu2 + q - b * zb - b * x_bound - prod;
            let nu3 = 2.0 * mu3 - prod - b * x_bound;
            inter.insert("z_bar".into(), zb);
            inter.insert("nu1".into(), nu1);
            inter.insert("nu2".into(), nu2);
            inter.insert("nu3".into(), nu3);
            inter.insert("k".into(), nu1.min(nu2).min(nu3));
            vec![
                MarginLine::new(2.0 * mu1 + b * zb, b * x_bound + q),
                MarginLine::new(2.0 * mu2 + q, b * (zb + x_bound) + prod),
                MarginLine::new(2.0 * mu3, prod + (1.0 - eta) * lambda * beta / mu_star),
            ]
        }
        ConditionSet::Dfe => vec![
            MarginLine::new(2.0 * mu1, b * x_bound + q),
            MarginLine::new(2.0 * mu2 + q, b * x_bound + prod),
            MarginLine::new(2.0 * mu3, prod + (1.0 - eta) * lambda * beta / mu_star),
        ],
        ConditionSet::Endemic => vec![
            MarginLine::new(
                mu1 * mu2 * mu3 + (1.0 - epsilon) * (1.0 - eta) * lambda * beta * q,
                (1.0 - eta) * lambda * beta * mu2 * mu3 / mu_star + q * mu2 * mu3 + p * mu1 * mu3,
            ),
            MarginLine::new(
                2.0 * mu2 * mu2 + mu1 * mu2 + p * mu1 + q,
                (1.0 - eta) * (1.0 - epsilon) * beta * lambda * q / mu3
                    + (1.0 - eta) * lambda * beta / mu_star,
            ),
            MarginLine::new(2.0 * mu3, prod + (1.0 - eta) * lambda * beta / mu_star),
        ],
        ConditionSet::Nonauto => {
            let b1 = b1.unwrap_or(0.0);
            inter.insert("b1".into(), b1);
            vec![
                MarginLine::new(2.0 * mu1 + b * b1, b * x_bound + q),
                MarginLine::new(2.0 * mu2 + q, b * (b1 + x_bound) + prod),
                MarginLine::new(2.0 * mu3, prod + b * x_bound),
            ]
        }
    };
    Ok(ConditionMargins::from_lines(set, lines, inter))
}

/// ν-certificate for two concrete runs: γ1 = max z of the first, γ2 = max x of
/// the second.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContractionCertificate {
    pub gamma1: f64,
    pub gamma2: f64,
    pub nu1: f64,
    pub nu2: f64,
    pub nu3: f64,
    /// min(ν1, ν2, ν3); a positive value is a candidate contraction rate.
    pub alpha: f64,
}

pub fn contraction_certificate(traj1: &Trajectory, traj2: &Trajectory) -> ContractionCertificate {
    let params = &traj1.params;
    let gamma1 = traj1.states.iter().fold(0.0f64, |m, s| m.max(s.z));
    let gamma2 = traj2.states.iter().fold(0.0f64, |m, s| m.max(s.x));
    let b = params.infection();
    let prod = params.production();
    let nu1 = 2.0 * params.mu1 + b * gamma1 - b * gamma2 - params.q;
    let nu2 = params.mu2 + params.q - b * gamma1 - b * gamma2 - prod;
    let nu3 = 2.0 * params.mu3 - prod - b * gamma2;
    ContractionCertificate {
        gamma1,
        gamma2,
        nu1,
        nu2,
        nu3,
        alpha: nu1.min(nu2).min(nu3),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub at: State,
    pub eigenvalues: [Complex64; 3],
    pub max_real_part: f64,
    pub classification: Classification,
    pub routh_hurwitz_stable: bool,
    pub r0: ReproductionNumbers,
    pub margins: Vec<ConditionMargins>,
}

/// Linearisation at `at` plus R0 and the margins of every condition set.
pub fn stability_report(
    params: &Parameters,
    forcing: &Forcing,
    at: &State,
    b1: Option<f64>,
) -> Result<StabilityReport> {
    let j = jacobian(params, at);
    let eigenvalues = eigenvalues_3x3(&j);
    let max_real_part = eigenvalues
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max);
    let margins = ConditionSet::ALL
        .iter()
        .map(|&set| condition_margins(set, params, forcing, Some(at), b1))
        .collect::<Result<Vec<_>>>()?;
    Ok(StabilityReport {
        at: *at,
        eigenvalues,
        max_real_part,
        classification: classify(max_real_part),
        routh_hurwitz_stable: routh_hurwitz_stable(&j),
        r0: r0_all(params, forcing),
        margins,
    })
}

/// Least-squares line through `(t, y)`: returns (slope, intercept, R²).
fn linear_fit(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = points.len() as f64;
    let mt = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut stt, mut sty, mut syy) = (0.0, 0.0, 0.0);
    for &(t, y) in points {
        stt += (t - mt) * (t - mt);
        sty += (t - mt) * (y - my);
        syy += (y - my) * (y - my);
    }
    let slope = if stt > 0.0 { sty / stt } else { 0.0 };
    let intercept = my - slope * mt;
    let ss_res: f64 = points
        .iter()
        .map(|&(t, y)| {
            let e = y - (intercept + slope * t);
            e * e
        })
        .sum();
    let r2 = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    (slope, intercept, r2)
}

/// V(t) = |x − x̄|² + |y − ȳ|² + |z − z̄|² along a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovTrace {
    pub reference: State,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// Decay rate fitted to log V over the second half of the run.
    pub rate: Option<f64>,
    pub fit_quality: Option<f64>,
    /// V is below 1e-300 everywhere.
    pub degenerate: bool,
}

impl LyapunovTrace {
    /// Largest ratio V(t) / (V(t0)·e^{−k(t−t0)}); at most 1 when the
    /// exponential bound with rate `k` holds at every sample.
    pub fn bound_ratio(&self, k: f64) -> f64 {
        let (t0, v0) = (self.times[0], self.values[0]);
        if v0 == 0.0 {
            return if self.values.iter().all(|&v| v == 0.0) {
                0.0
            } else {
                f64::INFINITY
            };
        }
        self.times
            .iter()
            .zip(&self.values)
            .map(|(&t, &v)| v / (v0 * (-k * (t - t0)).exp()))
            .fold(0.0, f64::max)
    }

    /// True when V never increases after time `from`.
    pub fn nonincreasing_after(&self, from: f64) -> bool {
        self.times
            .iter()
            .zip(&self.values)
            .skip_while(|(t, _)| **t < from)
            .map(|(_, v)| *v)
            .collect::<Vec<_>>()
            .windows(2)
            .all(|w| w[1] <= w[0])
    }
}

pub fn lyapunov_fit(traj: &Trajectory, reference: &State) -> Result<LyapunovTrace> {
    if traj.is_empty() {
        return Err(Error::InvalidArgument("empty trajectory".into()));
    }
    let values: Vec<f64> = traj.states.iter().map(|s| s.dist_sq(reference)).collect();
    let degenerate = values.iter().all(|&v| v < 1e-300);
    let t_mid = 0.5 * (traj.t0() + traj.final_time());
    let points: Vec<(f64, f64)> = traj
        .times
        .iter()
        .zip(&values)
        .filter(|(t, v)| **t >= t_mid && **v >= 1e-300)
        .map(|(t, v)| (*t, v.ln()))
        .collect();
    let (rate, fit_quality) = if !degenerate && points.len() >= 2 {
        let (slope, _, r2) = linear_fit(&points);
        (Some(-slope), Some(r2))
    } else {
        (None, None)
    };
    Ok(LyapunovTrace {
        reference: *reference,
        times: traj.times.clone(),
        values,
        rate,
        fit_quality,
        degenerate,
    })
}

/// Empirical (K, α) with |u¹(t) − u²(t)|² ≤ K e^{−α(t−t0)} |u¹(t0) − u²(t0)|².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContractionFit {
    pub k: f64,
    pub alpha: f64,
    /// R² of the log-linear fit.
    pub fit_quality: f64,
    /// Initial separation below 1e-14.
    pub degenerate: bool,
    /// Samples used; later samples fell below the distance resolution.
    pub samples: usize,
    /// Last time included in the fit.
    pub window_end: f64,
}

/// Fits the squared-distance decay between two runs of the same model. The
/// second run is interpolated onto the first run's grid when they differ.
pub fn contraction_fit(traj1: &Trajectory, traj2: &Trajectory) -> Result<ContractionFit> {
    if traj1.params != traj2.params || traj1.forcing != traj2.forcing {
        return Err(Error::InvalidArgument(
            "contraction fit needs two runs of the same model".into(),
        ));
    }
    if traj1.is_empty() || traj2.is_empty() || traj1.t0() != traj2.t0() {
        return Err(Error::InvalidArgument(
            "contraction fit needs runs with a common initial time".into(),
        ));
    }
    let t0 = traj1.t0();
    let end = traj1.final_time().min(traj2.final_time());
    let times: Vec<f64> = traj1.times.iter().copied().filter(|&t| t <= end).collect();
    let second = if traj1.times == traj2.times {
        traj2.states.clone()
    } else {
        traj2.resample(&times)?
    };
    let d2: Vec<f64> = traj1
        .states
        .iter()
        .zip(&second)
        .map(|(a, b)| a.dist_sq(b))
        .collect();
    let d0 = d2[0];
    if d0 < SQ_DIST_FLOOR {
        return Ok(ContractionFit {
            k: 1.0,
            alpha: 0.0,
            fit_quality: 0.0,
            degenerate: true,
            samples: 1,
            window_end: t0,
        });
    }
    let points: Vec<(f64, f64)> = times
        .iter()
        .zip(&d2)
        .take_while(|(_, d)| **d >= SQ_DIST_FLOOR)
        .map(|(t, d)| (t - t0, (d / d0).ln()))
        .collect();
    let (alpha, r2) = if points.len() >= 2 {
        let (slope, _, r2) = linear_fit(&points);
        (-slope, r2)
    } else {
        (0.0, 0.0)
    };
    let k = points
        .iter()
        .map(|&(s, ln_ratio)| (ln_ratio + alpha * s).exp())
        .fold(1.0f64, f64::max);
    Ok(ContractionFit {
        k,
        alpha,
        fit_quality: r2,
        degenerate: false,
        samples: points.len(),
        window_end: t0 + points.last().map_or(0.0, |p| p.0),
    })
}
