//! Named terminal payoffs for the lattice commands.

use std::collections::BTreeMap;

use asymrisk::lattice::Payoff;
use serde::Serialize;

use crate::error::CliError;

/// Registry entries as `(name, [(parameter, default)])`.
pub const REGISTRY: &[(&str, &[(&str, f64)])] = &[
    ("constant", &[("c", 1.0)]),
    ("linear", &[("a", 1.0), ("b", 0.0), ("c", 0.0)]),
    ("quadratic", &[("q1", 1.0), ("q2", 0.0)]),
    ("product", &[("k", 1.0)]),
    ("call", &[("w1", 1.0), ("w2", 0.0), ("strike", 0.0)]),
    ("sin1", &[]),
    ("sin2", &[]),
];

#[derive(Debug, Clone, Serialize)]
pub struct PayoffChoice {
    pub name: String,
    /// Every parameter of the payoff, defaults filled in.
    pub params: BTreeMap<String, f64>,
}

impl PayoffChoice {
    pub fn resolve(name: Option<&str>, given: &BTreeMap<String, f64>) -> Result<Self, CliError> {
        let name = name.ok_or_else(|| {
            let names: Vec<&str> = REGISTRY.iter().map(|(n, _)| *n).collect();
            CliError::Config(format!("--payoff is required (one of {})", names.join(", ")))
        })?;
        let (_, defaults) = REGISTRY
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| CliError::Config(format!("unknown payoff '{name}'")))?;
        for key in given.keys() {
            if !defaults.iter().any(|(k, _)| k == key) {
                return Err(CliError::Config(format!("payoff '{name}' has no parameter '{key}'")));
            }
        }
        let params = defaults
            .iter()
            .map(|(k, d)| (k.to_string(), *given.get(*k).unwrap_or(d)))
            .collect();
        Ok(Self { name: name.to_string(), params })
    }

    fn p(&self, key: &str) -> f64 {
        self.params[key]
    }

    pub fn payoff(&self) -> Payoff<f64> {
        match self.name.as_str() {
            "constant" => Payoff::constant(self.p("c")),
            "linear" => Payoff::linear(self.p("a"), self.p("b"), self.p("c")),
            "quadratic" => Payoff::quadratic(self.p("q1"), self.p("q2")),
            "product" => Payoff::product(self.p("k")),
            "call" => Payoff::call(self.p("w1"), self.p("w2"), self.p("strike")),
            "sin1" => Payoff::sin_first(),
            "sin2" => Payoff::sin_second(),
            other => unreachable!("payoff '{other}' passed resolution"),
        }
    }

    /// Closed-form `Y(0)` where one is known. For payoffs separable in the
    /// two drivers the value is the sum of one-dimensional values, each given
    /// by `Y = log E[exp(2γξ)]/(2γ)`.
    pub fn exact_value(&self, g1: f64, g2: f64, horizon: f64) -> Option<f64> {
        let quad = |q: f64, g: f64| {
            if g == 0.0 {
                Some(q * horizon)
            } else if 4.0 * g * q * horizon < 1.0 {
                Some(-(1.0 - 4.0 * g * q * horizon).ln() / (4.0 * g))
            } else {
                None
            }
        };
        match self.name.as_str() {
            "constant" => Some(self.p("c")),
            "linear" => {
                let (a, b) = (self.p("a"), self.p("b"));
                Some(self.p("c") + (g1 * a * a + g2 * b * b) * horizon)
            }
            "quadratic" => Some(quad(self.p("q1"), g1)? + quad(self.p("q2"), g2)?),
            "product" | "sin1" | "sin2" if g1 == 0.0 && g2 == 0.0 => Some(0.0),
            _ => None,
        }
    }
}
