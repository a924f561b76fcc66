//! Steady states of the autonomous system and their residual certificates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::solve3;
use crate::model::{field_at_rate, jacobian, Forcing, Parameters, State};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EquilibriumKind {
    DiseaseFree,
    Endemic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    pub kind: EquilibriumKind,
    pub state: State,
    /// Max-norm of the vector field at `state`.
    pub residual_norm: f64,
    /// Endemic only: ȳ > 0.
    pub feasible: Option<bool>,
    /// Endemic only: the alternative closed form
    /// x̄ = μ1μ3(μ2+p)/(qβμ2(1−η)(1−ε)), ȳ = Λ/μ2 − x̄,
    /// z̄ = qΛ(1−ε)/(μ2μ3) − μ1(μ2+p)/(βμ2(1−η)), kept for comparison.
    pub alt_formula_state: Option<State>,
    pub alt_formula_residual: Option<f64>,
    /// Newton iterations spent refining the endemic state.
    pub newton_iterations: Option<usize>,
}

fn constant_rate(forcing: &Forcing) -> Result<f64> {
    forcing.constant_value().ok_or(Error::UnsupportedForcing)
}

/// Max-norm of the autonomous vector field at `s`.
pub fn residual(params: &Parameters, lambda: f64, s: &State) -> f64 {
    field_at_rate(params, lambda, s)
        .iter()
        .fold(0.0, |m, v| m.max(v.abs()))
}

/// (Λ/μ1, 0, 0).
pub fn disease_free(params: &Parameters, forcing: &Forcing) -> Result<EquilibriumReport> {
    let lambda = constant_rate(forcing)?;
    let state = State::new(lambda / params.mu1, 0.0, 0.0);
    Ok(EquilibriumReport {
        kind: EquilibriumKind::DiseaseFree,
        state,
        residual_norm: residual(params, lambda, &state),
        feasible: None,
        alt_formula_state: None,
        alt_formula_residual: None,
        newton_iterations: None,
    })
}

/// Endemic steady state by elimination: the y-equation fixes x̄, the
/// z-equation ties z̄ to ȳ and the sum of the x- and y-equations gives ȳ.
pub fn endemic_by_elimination(params: &Parameters, lambda: f64) -> State {
    let x = params.mu3 * (params.mu2 + params.q) / (params.infection() * params.production());
    let y = (lambda - params.mu1 * x) / params.mu2;
    let z = params.production() * y / params.mu3;
    State::new(x, y, z)
}

pub fn endemic_alt_formula(params: &Parameters, lambda: f64) -> State {
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
    let x = mu1 * mu3 * (mu2 + p) / (q * beta * mu2 * (1.0 - eta) * (1.0 - epsilon));
    let y = lambda / mu2 - x;
    let z =
        q * lambda * (1.0 - epsilon) / (mu2 * mu3) - mu1 * (mu2 + p) / (beta * mu2 * (1.0 - eta));
    State::new(x, y, z)
}

pub fn endemic(params: &Parameters, forcing: &Forcing) -> Result<EquilibriumReport> {
    let lambda = constant_rate(forcing)?;
    let mut state = endemic_by_elimination(params, lambda);
    let mut residual_norm = residual(params, lambda, &state);
    let feasible = state.y > 0.0;
    let mut newton_iterations = None;
    if feasible {
        let refined = match newton_refine(params, forcing, state, 1e-12, 50) {
            Ok(r) => r,
            // Rounding can stall Newton above 1e-12; keep its best iterate.
            Err(Error::NoConvergence {
                iterations,
                residual,
                best,
            }) => Refined {
                state: best,
                residual,
                iterations,
            },
            Err(e) => return Err(e),
        };
        if refined.residual <= residual_norm {
            state = refined.state;
            residual_norm = refined.residual;
        }
        newton_iterations = Some(refined.iterations);
    }
    let alt = endemic_alt_formula(params, lambda);
    Ok(EquilibriumReport {
        kind: EquilibriumKind::Endemic,
        state,
        residual_norm,
        feasible: Some(feasible),
        alt_formula_state: Some(alt),
        alt_formula_residual: Some(residual(params, lambda, &alt)),
        newton_iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Refined {
    pub state: State,
    pub residual: f64,
    pub iterations: usize,
}

/// Damped Newton on the vector field. Each step is halved until the residual
/// decreases, down to a factor of 2⁻²⁰.
pub fn newton_refine(
    params: &Parameters,
    forcing: &Forcing,
    guess: State,
    tol: f64,
    max_iter: usize,
) -> Result<Refined> {
    let lambda = constant_rate(forcing)?;
    if !(tol > 0.0) || max_iter == 0 {
        return Err(Error::InvalidArgument(
            "Newton needs tol > 0 and max_iter >= 1".into(),
        ));
    }
    let mut s = guess;
    let mut r = residual(params, lambda, &s);
    for it in 0..max_iter {
        if r <= tol {
            return Ok(Refined {
                state: s,
                residual: r,
                iterations: it,
            });
        }
        let f = field_at_rate(params, lambda, &s);
        let j = jacobian(params, &s);
        let delta = solve3(&j, &[-f[0], -f[1], -f[2]]).ok_or(Error::SingularJacobian(s))?;
        let base = s.to_array();
        let mut damping = 1.0;
        let accepted = loop {
            let trial = State::from_array([
                base[0] + damping * delta[0],
                base[1] + damping * delta[1],
                base[2] + damping * delta[2],
            ]);
            let rt = residual(params, lambda, &trial);
            if rt < r {
                break Some((trial, rt));
            }
            damping *= 0.5;
            if damping < 2f64.powi(-20) {
                break None;
            }
        };
        match accepted {
            Some((trial, rt)) => {
                s = trial;
                r = rt;
            }
            None => {
                return Err(Error::NoConvergence {
                    iterations: it,
                    residual: r,
                    best: s,
                })
            }
        }
    }
    if r <= tol {
        return Ok(Refined {
            state: s,
            residual: r,
            iterations: max_iter,
        });
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        residual: r,
        best: s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::*;

    fn custom() -> (Parameters, Forcing) {
        (
            Parameters::new(0.5, 1.0, 1.0, 0.5, 0.0, 0.0, 1.0, 1.0).unwrap(),
            Forcing::constant(10.0).unwrap(),
        )
    }

    #[test]
    fn disease_free_examples() {
        let (p, f) = table2();
        let r = disease_free(&p, &f).unwrap();
        assert!((r.state.x - 4.90675).abs() < 1e-12);
        assert!(r.residual_norm <= 1e-14 * 9.8135);
        let (p, f) = table3();
        assert_eq!(
            disease_free(&p, &f).unwrap().state,
            State::new(20.0, 0.0, 0.0)
        );
        let p = Parameters::new(0.7, 1.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0).unwrap();
        let f = Forcing::constant(0.7).unwrap();
        assert_eq!(
            disease_free(&p, &f).unwrap().state,
            State::new(1.0, 0.0, 0.0)
        );
    }

    #[test]
    fn time_varying_forcing_is_rejected() {
        let (p, f) = table4_sinusoid();
        assert!(matches!(
            disease_free(&p, &f),
            Err(Error::UnsupportedForcing)
        ));
        assert!(matches!(endemic(&p, &f), Err(Error::UnsupportedForcing)));
    }

    #[test]
    fn custom_endemic_point_is_exact() {
        let (p, f) = custom();
        // Hand substitution: 10 − 2 − 8 + 8 = 0, 8 − 8 − 8 + 8 = 0, 8 − 8 = 0.
        let r = endemic(&p, &f).unwrap();
        assert_eq!(r.feasible, Some(true));
        assert!(r.state.max_dist(&State::new(4.0, 8.0, 8.0)) < 1e-12);
        assert!(r.residual_norm <= 1e-12);
    }

    #[test]
    fn table3_endemic_is_infeasible() {
        let (p, f) = table3();
        let r = endemic(&p, &f).unwrap();
        assert_eq!(r.feasible, Some(false));
        assert!((r.state.y - (-6.4413)).abs() < 1e-4, "{}", r.state.y);
        assert!(r.newton_iterations.is_none());
    }

    #[test]
    fn table5_endemic_is_feasible_and_certified() {
        let (p, f) = table5();
        let r = endemic(&p, &f).unwrap();
        assert_eq!(r.feasible, Some(true));
        assert!(r.state.max_dist(&State::new(2.5185, 0.6984, 31.4286)) < 1e-3);
        assert!(r.residual_norm <= 1e-10);
        // The alternative closed form does not solve the steady-state equations.
        assert!(r.alt_formula_residual.unwrap() > 1e-3);
    }

    #[test]
    fn alt_formula_fails_on_table3() {
        let (p, f) = table3();
        assert!(endemic(&p, &f).unwrap().alt_formula_residual.unwrap() > 1e-3);
    }

    #[test]
    fn newton_recovers_perturbed_root() {
        let (p, f) = custom();
        let guess = State::new(4.001, 7.999, 8.001);
        let r = newton_refine(&p, &f, guess, 1e-12, 50).unwrap();
        assert!(r.residual <= 1e-12);
        assert!(r.state.max_dist(&State::new(4.0, 8.0, 8.0)) < 1e-10);
    }

    #[test]
    fn newton_on_exact_root_takes_no_steps() {
        let (p, f) = table2();
        let dfe = disease_free(&p, &f).unwrap().state;
        let r = newton_refine(&p, &f, dfe, 1e-12, 50).unwrap();
        assert_eq!(r.iterations, 0);
        assert_eq!(r.state, dfe);
    }

    #[test]
    fn newton_argument_checks() {
        let (p, f) = table2();
        assert!(newton_refine(&p, &f, State::default(), 0.0, 5).is_err());
        assert!(newton_refine(&p, &f, State::default(), 1e-12, 0).is_err());
    }

    #[test]
    fn newton_reports_exhausted_iterations() {
        let (p, f) = table5();
        let err = newton_refine(&p, &f, State::new(100.0, 100.0, 100.0), 1e-12, 1).unwrap_err();
        assert!(matches!(err, Error::NoConvergence { iterations: 1, .. }));
    }
}
