//! Scenario definitions: built-in registry and TOML configuration files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::StepControl;
use crate::model::{Forcing, Parameters, State};
use crate::process::DEFAULT_HORIZONS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Analysis {
    Equilibria,
    Stability,
    Conditions,
    Lyapunov,
    Contraction,
    Pullback,
    Absorbing,
}

impl Analysis {
    pub const ALL: [Analysis; 7] = [
        Analysis::Equilibria,
        Analysis::Stability,
        Analysis::Conditions,
        Analysis::Lyapunov,
        Analysis::Contraction,
        Analysis::Pullback,
        Analysis::Absorbing,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Analysis::Equilibria => "equilibria",
            Analysis::Stability => "stability",
            Analysis::Conditions => "conditions",
            Analysis::Lyapunov => "lyapunov",
            Analysis::Contraction => "contraction",
            Analysis::Pullback => "pullback",
            Analysis::Absorbing => "absorbing",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PullbackSettings {
    pub t_star: f64,
    pub horizons: Vec<f64>,
    /// Extra seeds; the scenario's own `u0` is always the first seed.
    pub seeds: Vec<State>,
    pub tol: f64,
}

impl Default for PullbackSettings {
    fn default() -> Self {
        Self {
            t_star: 0.0,
            horizons: DEFAULT_HORIZONS.to_vec(),
            seeds: vec![State::new(4.0, 1.0, 2.0)],
            tol: 1e-6,
        }
    }
}

fn default_partner() -> State {
    State::new(2.0, 2.0, 2.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub id: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub params: Parameters,
    pub forcing: Forcing,
    pub u0: State,
    pub t_span: [f64; 2],
    #[serde(default)]
    pub ctl: StepControl,
    #[serde(default = "all_analyses")]
    pub analyses: Vec<Analysis>,
    /// Bound on z used by the nonautonomous condition set (defaults to 0).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b1: Option<f64>,
    /// Second initial state for the contraction fit.
    #[serde(default = "default_partner")]
    pub contraction_partner: State,
    #[serde(default)]
    pub pullback: PullbackSettings,
    /// Slack of the absorbing-ball entry test (defaults to 1e-6 · ceiling).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub absorbing_slack: Option<f64>,
}

fn all_analyses() -> Vec<Analysis> {
    Analysis::ALL.to_vec()
}

impl Scenario {
    fn builtin(
        id: &str,
        description: &str,
        params: Parameters,
        forcing: Forcing,
        t_end: f64,
    ) -> Self {
        Self {
            id: id.to_string(),
            description: description.to_string(),
            params,
            forcing,
            u0: State::new(1.0, 1.0, 1.0),
            t_span: [0.0, t_end],
            ctl: StepControl::default(),
            analyses: all_analyses(),
            b1: None,
            contraction_partner: default_partner(),
            pullback: PullbackSettings::default(),
            absorbing_slack: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.trim().is_empty() {
            return Err(Error::Config("scenario id must not be empty".into()));
        }
        self.params.validate()?;
        self.forcing.validate()?;
        self.ctl.validate()?;
        let [t0, t1] = self.t_span;
        if !(t0.is_finite() && t1.is_finite() && t1 > t0) {
            return Err(Error::Config(format!(
                "t_span must satisfy t0 < t1, got [{t0}, {t1}]"
            )));
        }
        for (name, s) in [
            ("u0", &self.u0),
            ("contraction_partner", &self.contraction_partner),
        ] {
            if !(s.is_finite() && s.is_nonnegative()) {
                return Err(Error::Config(format!(
                    "{name} must be finite and nonnegative"
                )));
            }
        }
        if let Some(b1) = self.b1 {
            if !(b1.is_finite() && b1 >= 0.0) {
                return Err(Error::Config(format!("b1 must be >= 0, got {b1}")));
            }
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let scenario: Scenario = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

fn table2_params() -> Parameters {
    Parameters::new(2.0, 3.0, 7.0, 0.2, 0.2, 0.5, 0.01, 5.0).expect("valid")
}

fn table3_params() -> Parameters {
    Parameters::new(5.0, 7.0, 2.0, 0.7, 0.2, 0.2, 2.0, 6.0).expect("valid")
}

fn table5_params() -> Parameters {
    Parameters::new(6.0, 7.0, 0.1, 0.3, 0.5, 0.1, 5.0, 10.0).expect("valid")
}

/// Λ(t) = cos(2t + π/3) + 10.
pub fn oscillating_supply() -> Forcing {
    Forcing::sinusoid(1.0, 2.0, std::f64::consts::FRAC_PI_3, 10.0).expect("valid")
}

pub const REGISTRY_IDS: [&str; 5] = [
    "table2-dfe",
    "table3-dfe-check",
    "set1-nonauto",
    "set2-nonauto",
    "set2-auto-boundcheck",
];

/// Built-in scenarios. Every one starts at u0 = (1, 1, 1).
pub fn registry() -> Vec<Scenario> {
    let mut table2 = Scenario::builtin(
        "table2-dfe",
        "low-infectivity rates, constant supply 9.8135; converges to the disease-free state",
        table2_params(),
        Forcing::constant(9.8135).expect("valid"),
        15.0,
    );
    // V falls to 1e-26 by t = 15; a looser tolerance floors the decay fit.
    table2.ctl = StepControl::adaptive(1e-14, 1e-13);
    vec![
        table2,
        Scenario::builtin(
            "table3-dfe-check",
            "high-supply rates, constant supply 100; r0_ngm = 0.689 so the disease-free state attracts",
            table3_params(),
            Forcing::constant(100.0).expect("valid"),
            30.0,
        ),
        Scenario::builtin(
            "set1-nonauto",
            "low-infectivity rates with supply cos(2t + pi/3) + 10 on [0, 5]",
            table2_params(),
            oscillating_supply(),
            5.0,
        ),
        Scenario::builtin(
            "set2-nonauto",
            "slow-clearance rates with supply cos(2t + pi/3) + 10 on [0, 50]",
            table5_params(),
            oscillating_supply(),
            50.0,
        ),
        Scenario::builtin(
            "set2-auto-boundcheck",
            "slow-clearance rates, constant supply 20 on [0, 200]; z stays below its analytic ceiling",
            table5_params(),
            Forcing::constant(20.0).expect("valid"),
            200.0,
        ),
    ]
}

pub fn lookup(id: &str) -> Result<Scenario> {
    registry()
        .into_iter()
        .find(|s| s.id == id)
        .ok_or_else(|| Error::UnknownScenario(id.to_string()))
}
