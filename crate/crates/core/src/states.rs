//! Initial two-qubit states and the basis changes used by the
//! common-reservoir model.
//!
//! Two-qubit matrices are stored in the computational basis
//! `{|00⟩, |01⟩, |10⟩, |11⟩}` with the left label as the most significant
//! Kronecker factor; label `1` is the excited level.

use std::f64::consts::FRAC_1_SQRT_2;

use serde::{Deserialize, Serialize};

use crate::error::{out_of_range, QslError, Result};
use crate::qmath::{tensor, ComplexMatrix, DensityMatrix, C64, ONE, ZERO};

/// Which Bell-like state the Werner-like mixture is built on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// `α|01⟩ + e^{iθ}√(1-α²)|10⟩` (one excitation).
    Psi1,
    /// `α|00⟩ + e^{iθ}√(1-α²)|11⟩` (zero or two excitations).
    Psi2,
}

impl std::str::FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "psi1" => Ok(Family::Psi1),
            "psi2" => Ok(Family::Psi2),
            other => Err(format!("unknown family `{other}` (expected psi1 or psi2)")),
        }
    }
}

/// Parameters of an extended Werner-like state
/// `r|Ψ⟩⟨Ψ| + (1-r)/4 · I`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EwlParams {
    pub family: Family,
    /// Purity parameter, in `[0, 1]`.
    pub r: f64,
    /// Amplitude of the first basis component, in `[0, 1]`.
    pub alpha: f64,
    /// Relative phase in radians.
    pub theta: f64,
}

impl EwlParams {
    pub fn new(family: Family, r: f64, alpha: f64, theta: f64) -> Result<Self> {
        let p = Self {
            family,
            r,
            alpha,
            theta,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.r) {
            return Err(out_of_range("r", format!("{} is outside [0, 1]", self.r)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(out_of_range(
                "alpha",
                format!("{} is outside [0, 1]", self.alpha),
            ));
        }
        if !self.theta.is_finite() {
            return Err(out_of_range("theta", "must be finite"));
        }
        Ok(())
    }

    /// The Bell-like pure component as a computational-basis ket.
    pub fn ket(&self) -> [C64; 4] {
        let a = C64::new(self.alpha, 0.0);
        let b = C64::from_polar((1.0 - self.alpha * self.alpha).max(0.0).sqrt(), self.theta);
        match self.family {
            Family::Psi1 => [ZERO, a, b, ZERO],
            Family::Psi2 => [a, ZERO, ZERO, b],
        }
    }
}

/// Builds the extended Werner-like state for `p`.
pub fn ewl_state(p: &EwlParams) -> Result<DensityMatrix> {
    p.validate()?;
    let pure = ComplexMatrix::outer(&p.ket());
    let mut rho = ComplexMatrix::identity(4).scale_real((1.0 - p.r) / 4.0);
    rho.axpy(C64::new(p.r, 0.0), &pure);
    DensityMatrix::new(rho)
}

/// Dressed-basis index of `|0̄⟩ = |00⟩`.
pub const GROUND: usize = 0;
/// Dressed-basis index of the superradiant state `|+⟩ = (|10⟩ + |01⟩)/√2`.
pub const PLUS: usize = 1;
/// Dressed-basis index of the subradiant state `|−⟩ = (|10⟩ − |01⟩)/√2`.
pub const MINUS: usize = 2;
/// Dressed-basis index of `|2̄⟩ = |11⟩`.
pub const DOUBLE: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    ToDressed,
    ToComputational,
}

/// Unitary whose columns are the dressed states written in the
/// computational basis.
#[derive(Clone, Debug, PartialEq)]
pub struct DressedBasisMap {
    unitary: ComplexMatrix,
}

impl Default for DressedBasisMap {
    fn default() -> Self {
        Self::new()
    }
}

impl DressedBasisMap {
    pub fn new() -> Self {
        let s = C64::new(FRAC_1_SQRT_2, 0.0);
        #[rustfmt::skip]
        let unitary = ComplexMatrix::from_row_slice(&[
            //  |0̄⟩  |+⟩  |−⟩  |2̄⟩
            ONE,  ZERO, ZERO, ZERO, // |00⟩
            ZERO, s,    -s,   ZERO, // |01⟩
            ZERO, s,    s,    ZERO, // |10⟩
            ZERO, ZERO, ZERO, ONE,  // |11⟩
        ]);
        Self { unitary }
    }

    pub fn unitary(&self) -> &ComplexMatrix {
        &self.unitary
    }

    /// Conjugates an arbitrary 4x4 operator into the requested basis.
    pub fn apply(&self, m: &ComplexMatrix, direction: Direction) -> Result<ComplexMatrix> {
        if m.dim() != 4 {
            return Err(QslError::DimensionMismatch(format!(
                "dressed transform needs a 4x4 operator, got {}x{}",
                m.dim(),
                m.dim()
            )));
        }
        let u = &self.unitary;
        Ok(match direction {
            Direction::ToDressed => &(&u.adjoint() * m) * u,
            Direction::ToComputational => &(u * m) * &u.adjoint(),
        })
    }
}

/// Moves a two-qubit state between the computational and dressed bases.
pub fn dressed_transform(rho: &DensityMatrix, direction: Direction) -> Result<DensityMatrix> {
    let out = DressedBasisMap::new().apply(rho.matrix(), direction)?;
    DensityMatrix::new(out.hermitian_part())
}

/// `ρ ⊗ |0⟩⟨0|` with the pseudomode truncated at `n_fock` quanta.
pub fn embed_pseudomode(rho_dressed: &DensityMatrix, n_fock: usize) -> Result<DensityMatrix> {
    if n_fock < 2 {
        return Err(out_of_range(
            "fock_n",
            format!("truncation {n_fock} cannot hold two excitations"),
        ));
    }
    if rho_dressed.dim() != 4 {
        return Err(QslError::DimensionMismatch(format!(
            "expected a 4x4 system state, got {}x{}",
            rho_dressed.dim(),
            rho_dressed.dim()
        )));
    }
    let mut vacuum = ComplexMatrix::zeros(n_fock + 1);
    vacuum[(0, 0)] = ONE;
    Ok(DensityMatrix::new_unchecked(tensor(
        rho_dressed.matrix(),
        &vacuum,
    )))
}
