//! Quantum speed limit bounds for a pair of qubits decaying into
//! zero-temperature Lorentzian reservoirs.
//!
//! Two reservoir topologies are covered:
//!
//! * [`independent`]: each qubit has its own reservoir and the dynamics is the
//!   exact amplitude-damping map driven by the decoherence function `G(t)`.
//! * [`common`]: both qubits share one reservoir, represented by a single
//!   damped pseudomode; the qubit+pseudomode system obeys a Lindblad equation
//!   that is integrated numerically.
//!
//! [`qsl`] turns a trajectory into the fidelity-based speed-limit time and
//! [`cli`] drives sweeps over the coupling strength.

pub mod cli;
pub mod common;
pub mod error;
pub mod independent;
pub mod qmath;
pub mod qsl;
pub mod states;

use serde::{Deserialize, Serialize};

pub use error::{QslError, Result};

/// Memory regime of a reservoir at a given coupling strength.
///
/// A coupling exactly on the boundary is labelled [`Regime::Markovian`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Markovian,
    NonMarkovian,
}

impl Regime {
    /// Classifies `gamma0` against the regime `boundary`.
    pub fn classify(gamma0: f64, boundary: f64) -> Self {
        if gamma0 > boundary {
            Regime::NonMarkovian
        } else {
            Regime::Markovian
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Markovian => "markovian",
            Regime::NonMarkovian => "non_markovian",
        }
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Regime {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "markovian" => Ok(Regime::Markovian),
            "non_markovian" => Ok(Regime::NonMarkovian),
            other => Err(format!("unknown regime `{other}`")),
        }
    }
}
