//! Model definition: rate constants, production forcing, state, vector field,
//! Jacobian and the a-priori bounds that every solution from a nonnegative
//! initial point must respect.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 3×3 matrix stored row-major.
pub type Matrix3 = [[f64; 3]; 3];

/// Rate constants of the within-host model. The production rate lives in
/// [`Forcing`] so the autonomous and nonautonomous systems share one field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Parameters {
    /// Death rate of uninfected cells.
    pub mu1: f64,
    /// Death rate of infected cells.
    pub mu2: f64,
    /// Clearance rate of free virions.
    pub mu3: f64,
    /// Infection rate per cell per virion.
    pub beta: f64,
    /// Treatment efficacy against infection, in [0, 1).
    pub eta: f64,
    /// Treatment efficacy against virion production, in [0, 1).
    pub epsilon: f64,
    /// Virion production rate per infected cell.
    pub p: f64,
    /// Non-cytolytic cure rate.
    pub q: f64,
}

impl Parameters {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        mu1: f64,
        mu2: f64,
        mu3: f64,
        beta: f64,
        eta: f64,
        epsilon: f64,
        p: f64,
        q: f64,
    ) -> Result<Self> {
        let params = Self {
            mu1,
            mu2,
            mu3,
            beta,
            eta,
            epsilon,
            p,
            q,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("mu1", self.mu1),
            ("mu2", self.mu2),
            ("mu3", self.mu3),
            ("beta", self.beta),
            ("p", self.p),
            ("q", self.q),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameters(format!(
                    "{name} must be finite and > 0, got {v}"
                )));
            }
        }
        for (name, v) in [("eta", self.eta), ("epsilon", self.epsilon)] {
            if !(v.is_finite() && (0.0..1.0).contains(&v)) {
                return Err(Error::InvalidParameters(format!(
                    "{name} must lie in [0, 1), got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Effective infection rate (1−η)β.
    pub fn infection(&self) -> f64 {
        (1.0 - self.eta) * self.beta
    }

    /// Effective virion production (1−ε)p.
    pub fn production(&self) -> f64 {
        (1.0 - self.epsilon) * self.p
    }

    /// μ* = min(μ1, μ2).
    pub fn mu_star(&self) -> f64 {
        self.mu1.min(self.mu2)
    }
}

/// Production rate of uninfected cells, Λ(t).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Forcing {
    Constant {
        value: f64,
    },
    /// `amplitude · cos(omega · t + phase) + offset`
    Sinusoid {
        amplitude: f64,
        omega: f64,
        phase: f64,
        offset: f64,
    },
    /// Linear interpolation between `(t, Λ)` knots with strictly increasing `t`.
    PiecewiseLinear {
        knots: Vec<[f64; 2]>,
    },
}

impl Forcing {
    pub fn constant(value: f64) -> Result<Self> {
        let f = Forcing::Constant { value };
        f.validate()?;
        Ok(f)
    }

    pub fn sinusoid(amplitude: f64, omega: f64, phase: f64, offset: f64) -> Result<Self> {
        let f = Forcing::Sinusoid {
            amplitude,
            omega,
            phase,
            offset,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn piecewise_linear(knots: Vec<[f64; 2]>) -> Result<Self> {
        let f = Forcing::PiecewiseLinear { knots };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Forcing::Constant { value } => {
                if !(value.is_finite() && *value > 0.0) {
                    return Err(Error::InvalidForcing(format!(
                        "constant production rate must be finite and > 0, got {value}"
                    )));
                }
            }
            Forcing::Sinusoid {
                amplitude,
                omega,
                phase,
                offset,
            } => {
                if ![amplitude, omega, phase, offset]
                    .iter()
                    .all(|v| v.is_finite())
                {
                    return Err(Error::InvalidForcing(
                        "sinusoid coefficients must be finite".into(),
                    ));
                }
                if offset - amplitude.abs() <= 0.0 {
                    return Err(Error::InvalidForcing(format!(
                        "sinusoid lower bound {} must be > 0",
                        offset - amplitude.abs()
                    )));
                }
            }
            Forcing::PiecewiseLinear { knots } => {
                if knots.len() < 2 {
                    return Err(Error::InvalidForcing(
                        "piecewise-linear forcing needs at least two knots".into(),
                    ));
                }
                for w in knots.windows(2) {
                    if !(w[1][0] > w[0][0]) {
                        return Err(Error::InvalidForcing(
                            "knot times must be strictly increasing".into(),
                        ));
                    }
                }
                for [t, v] in knots {
                    if !t.is_finite() || !(v.is_finite() && *v > 0.0) {
                        return Err(Error::InvalidForcing(format!(
                            "knot ({t}, {v}) must be finite with a positive rate"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Λ(t). Piecewise-linear tables reject `t` outside their knot range.
    pub fn eval(&self, t: f64) -> Result<f64> {
        if let Some((lo, hi)) = self.domain() {
            if !(t >= lo && t <= hi) {
                return Err(Error::OutOfDomain { t, lo, hi });
            }
        }
        Ok(self.rate(t))
    }

    /// Λ(t) without the domain check; tables are held constant past their ends.
    pub(crate) fn rate(&self, t: f64) -> f64 {
        match self {
            Forcing::Constant { value } => *value,
            Forcing::Sinusoid {
                amplitude,
                omega,
                phase,
                offset,
            } => amplitude * (omega * t + phase).cos() + offset,
            Forcing::PiecewiseLinear { knots } => {
                let first = knots[0];
                let last = knots[knots.len() - 1];
                if t <= first[0] {
                    return first[1];
                }
                if t >= last[0] {
                    return last[1];
                }
                let i = knots.partition_point(|k| k[0] <= t);
                let [t0, v0] = knots[i - 1];
                let [t1, v1] = knots[i];
                let w = (t - t0) / (t1 - t0);
                v0 + w * (v1 - v0)
            }
        }
    }

    /// Declared interval `[Λ_m, Λ_M]`.
    pub fn bounds(&self) -> (f64, f64) {
        match self {
            Forcing::Constant { value } => (*value, *value),
            Forcing::Sinusoid {
                amplitude, offset, ..
            } => (offset - amplitude.abs(), offset + amplitude.abs()),
            Forcing::PiecewiseLinear { knots } => knots
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), k| {
                    (lo.min(k[1]), hi.max(k[1]))
                }),
        }
    }

    /// Λ_M, the upper production bound.
    pub fn upper(&self) -> f64 {
        self.bounds().1
    }

    /// Time range over which the forcing is defined, if restricted.
    pub fn domain(&self) -> Option<(f64, f64)> {
        match self {
            Forcing::PiecewiseLinear { knots } => Some((knots[0][0], knots[knots.len() - 1][0])),
            _ => None,
        }
    }

    pub fn constant_value(&self) -> Option<f64> {
        match self {
            Forcing::Constant { value } => Some(*value),
            _ => None,
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Forcing::Constant { .. })
    }
}

/// Compartment values: uninfected cells `x`, infected cells `y`, free virions `z`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct State {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl State {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub const fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub const fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn is_nonnegative(&self) -> bool {
        self.x >= 0.0 && self.y >= 0.0 && self.z >= 0.0
    }

    pub fn l1(&self) -> f64 {
        self.x.abs() + self.y.abs() + self.z.abs()
    }

    pub fn max_abs(&self) -> f64 {
        self.x.abs().max(self.y.abs()).max(self.z.abs())
    }

    pub fn max_dist(&self, other: &State) -> f64 {
        (self.x - other.x)
            .abs()
            .max((self.y - other.y).abs())
            .max((self.z - other.z).abs())
    }

    pub fn dist_sq(&self, other: &State) -> f64 {
        let (dx, dy, dz) = (self.x - other.x, self.y - other.y, self.z - other.z);
        dx * dx + dy * dy + dz * dz
    }
}

/// Right-hand side with the production rate already evaluated.
pub fn field_at_rate(params: &Parameters, lambda: f64, s: &State) -> [f64; 3] {
    let infection = params.infection() * s.x * s.z;
    [
        lambda - params.mu1 * s.x - infection + params.q * s.y,
        infection - params.mu2 * s.y - params.q * s.y,
        params.production() * s.y - params.mu3 * s.z,
    ]
}

/// Time derivative `(dx/dt, dy/dt, dz/dt)` at `(t, s)`.
pub fn vector_field(params: &Parameters, forcing: &Forcing, t: f64, s: &State) -> [f64; 3] {
    field_at_rate(params, forcing.rate(t), s)
}

/// Analytic Jacobian of the vector field (independent of Λ).
pub fn jacobian(params: &Parameters, s: &State) -> Matrix3 {
    let b = params.infection();
    [
        [-params.mu1 - b * s.z, params.q, -b * s.x],
        [b * s.z, -(params.mu2 + params.q), b * s.x],
        [0.0, params.production(), -params.mu3],
    ]
}

/// A-priori ceilings for a solution started at `u0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    /// Ceiling on x + y.
    pub m: f64,
    /// Ceiling on z.
    pub z_ceiling: f64,
    /// Decay rate of the ℓ1 norm; present only when μ2 > (1−ε)p.
    pub l1_alpha: Option<f64>,
    /// Λ_M / α.
    pub l1_ceiling: Option<f64>,
}

pub fn analytic_bounds(params: &Parameters, forcing: &Forcing, u0: &State) -> BoundsReport {
    let lambda_max = forcing.upper();
    let m = (u0.x + u0.y).max(lambda_max / params.mu_star());
    // z' ≤ (1−ε)p·M − μ3·z, so z stays below max{z0, (1−ε)pM/μ3}.
    let z_ceiling = u0.z.max(params.production() * m / params.mu3);
    let (l1_alpha, l1_ceiling) = match l1_decay_rate(params) {
        Some(alpha) => (Some(alpha), Some(lambda_max / alpha)),
        None => (None, None),
    };
    BoundsReport {
        m,
        z_ceiling,
        l1_alpha,
        l1_ceiling,
    }
}

/// α = min{μ1, μ2 − (1−ε)p, μ3}, defined only when μ2 > (1−ε)p.
pub fn l1_decay_rate(params: &Parameters) -> Option<f64> {
    let gap = params.mu2 - params.production();
    (gap > 0.0).then(|| params.mu1.min(gap).min(params.mu3))
}

/// Central-difference Jacobian with step `1e-6 · max(1, |component|)`.
pub fn central_difference_jacobian(params: &Parameters, s: &State) -> Matrix3 {
    let base = s.to_array();
    let mut out = [[0.0; 3]; 3];
    for c in 0..3 {
        let h = 1e-6 * base[c].abs().max(1.0);
        let (mut plus, mut minus) = (base, base);
        plus[c] += h;
        minus[c] -= h;
        // Λ does not enter the Jacobian.
        let fp = field_at_rate(params, 0.0, &State::from_array(plus));
        let fm = field_at_rate(params, 0.0, &State::from_array(minus));
        for r in 0..3 {
            out[r][c] = (fp[r] - fm[r]) / (plus[c] - minus[c]);
        }
    }
    out
}

/// `max |a − b|` over entries divided by `max(1, max |a|)`.
pub fn jacobian_relative_error(a: &Matrix3, b: &Matrix3) -> f64 {
    let mut diff: f64 = 0.0;
    let mut scale: f64 = 1.0;
    for r in 0..3 {
        for c in 0..3 {
            diff = diff.max((a[r][c] - b[r][c]).abs());
            scale = scale.max(a[r][c].abs());
        }
    }
    diff / scale
}
