//! Two qubits sharing one Lorentzian reservoir, treated with a single
//! damped pseudomode.
//!
//! In the dressed basis `{|0̄⟩, |+⟩, |−⟩, |2̄⟩}` only the superradiant state
//! `|+⟩` couples to the reservoir; `|−⟩` is dark. The qubits plus the
//! pseudomode evolve under the Lindblad equation
//!
//! ```text
//! dρ̃/dt = -i[V, ρ̃] - (Γ/2)(a†a ρ̃ + ρ̃ a†a - 2 a ρ̃ a†)
//! V = √2 γ₀ (a |+⟩⟨0̄| + a† |0̄⟩⟨+| + a |2̄⟩⟨+| + a† |+⟩⟨2̄|)
//! ```
//!
//! written in the frame rotating at the qubit frequency. The extended space is
//! ordered dressed-system ⊗ pseudomode Fock states `|0⟩..|N⟩`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{out_of_range, QslError, Result};
use crate::independent::DampedAmplitude;
use crate::qmath::{
    hermitian_eigenvalues, partial_trace_matrix, ComplexMatrix, DensityMatrix, Keep, C64, I, ONE,
    POSITIVITY_TOL, TRACE_TOL, ZERO,
};
use crate::states::{
    dressed_transform, embed_pseudomode, Direction, DressedBasisMap, DOUBLE, GROUND, MINUS, PLUS,
};
use crate::Regime;

/// Default pseudomode truncation; exact for at most two excitations.
pub const DEFAULT_FOCK_N: usize = 2;
/// Tolerance on the conserved subradiant population.
pub const SUBRADIANT_TOL: f64 = 1e-8;
/// Hermiticity tolerance for integrated states.
pub const EXTENDED_HERMITIAN_TOL: f64 = 1e-10;
/// Positivity is checked on every `POSITIVITY_STRIDE`-th sample.
pub const POSITIVITY_STRIDE: usize = 10;
/// Default bound on `h · rate` for the internal RK4 step.
pub const DEFAULT_STEP_PHASE: f64 = 0.02;

/// Common Lorentzian reservoir seen through one pseudomode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommonReservoir {
    /// Lorentzian width Γ, in units of ω₀.
    pub big_gamma: f64,
    /// Coupling strength γ₀, in units of ω₀.
    pub gamma0: f64,
    /// Highest pseudomode Fock state kept.
    pub fock_n: usize,
}

impl CommonReservoir {
    pub fn new(big_gamma: f64, gamma0: f64, fock_n: usize) -> Result<Self> {
        let p = Self {
            big_gamma,
            gamma0,
            fock_n,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.big_gamma > 0.0 && self.big_gamma.is_finite()) {
            return Err(out_of_range(
                "big_gamma",
                format!("{} must be > 0", self.big_gamma),
            ));
        }
        if !(self.gamma0 > 0.0 && self.gamma0.is_finite()) {
            return Err(out_of_range(
                "gamma0",
                format!("{} must be > 0", self.gamma0),
            ));
        }
        if self.fock_n < 2 {
            return Err(out_of_range(
                "fock_n",
                format!("truncation {} cannot hold two excitations", self.fock_n),
            ));
        }
        Ok(())
    }

    /// Regime boundary `Γ/4` used for labelling.
    pub fn regime_boundary(&self) -> f64 {
        self.big_gamma / 4.0
    }

    /// Coupling where the single-excitation amplitude starts to oscillate,
    /// `Γ/(4√2)`. Differs from [`Self::regime_boundary`].
    pub fn oscillation_threshold(&self) -> f64 {
        self.big_gamma / (4.0 * std::f64::consts::SQRT_2)
    }

    pub fn regime(&self) -> Regime {
        Regime::classify(self.gamma0, self.regime_boundary())
    }

    pub fn fock_dim(&self) -> usize {
        self.fock_n + 1
    }

    pub fn extended_dim(&self) -> usize {
        4 * self.fock_dim()
    }

    /// Amplitude of `|+,0⟩` for a single initial excitation in `|+⟩`:
    /// kernel `2γ₀² e^{-Γ|τ|/2}`.
    pub fn single_excitation_amplitude(&self) -> DampedAmplitude {
        DampedAmplitude {
            mu: self.big_gamma / 2.0,
            coupling: 2.0 * self.gamma0 * self.gamma0,
        }
    }

    /// Upper estimate of the generator's fastest rate within the two-excitation
    /// sector. Independent of the truncation, so N = 2 and N = 3 runs use the
    /// same step.
    pub fn rate_bound(&self) -> f64 {
        5.0 * self.gamma0 + 2.0 * self.big_gamma
    }

    fn index(&self, system: usize, quanta: usize) -> usize {
        system * self.fock_dim() + quanta
    }
}

/// Sparse operator as a list of `(row, col, value)` entries.
#[derive(Clone, Debug)]
struct SparseOp {
    dim: usize,
    entries: Vec<(usize, usize, C64)>,
}

impl SparseOp {
    fn to_dense(&self) -> ComplexMatrix {
        let mut m = ComplexMatrix::zeros(self.dim);
        for &(i, j, v) in &self.entries {
            m[(i, j)] += v;
        }
        m
    }
}

/// `I₄ ⊗ a`.
fn annihilation(p: &CommonReservoir) -> SparseOp {
    let mut entries = Vec::new();
    for s in 0..4 {
        for n in 1..=p.fock_n {
            entries.push((
                p.index(s, n - 1),
                p.index(s, n),
                C64::new((n as f64).sqrt(), 0.0),
            ));
        }
    }
    SparseOp {
        dim: p.extended_dim(),
        entries,
    }
}

fn coupling(p: &CommonReservoir) -> SparseOp {
    let g = std::f64::consts::SQRT_2 * p.gamma0;
    let mut entries = Vec::new();
    for n in 1..=p.fock_n {
        let v = C64::new(g * (n as f64).sqrt(), 0.0);
        // a |+⟩⟨0̄| and its conjugate a† |0̄⟩⟨+|
        entries.push((p.index(PLUS, n - 1), p.index(GROUND, n), v));
        entries.push((p.index(GROUND, n), p.index(PLUS, n - 1), v));
        // a |2̄⟩⟨+| and its conjugate a† |+⟩⟨2̄|
        entries.push((p.index(DOUBLE, n - 1), p.index(PLUS, n), v));
        entries.push((p.index(PLUS, n), p.index(DOUBLE, n - 1), v));
    }
    SparseOp {
        dim: p.extended_dim(),
        entries,
    }
}

/// Builds the dense exchange operator `V`.
pub fn build_v(p: &CommonReservoir) -> Result<ComplexMatrix> {
    p.validate()?;
    Ok(coupling(p).to_dense())
}

/// Precomputed pieces of the Lindblad generator for one parameter set.
#[derive(Clone, Debug)]
pub struct Generator {
    params: CommonReservoir,
    v: SparseOp,
    a: SparseOp,
    quanta: Vec<f64>,
}

impl Generator {
    pub fn new(p: &CommonReservoir) -> Result<Self> {
        p.validate()?;
        let quanta = (0..p.extended_dim())
            .map(|i| (i % p.fock_dim()) as f64)
            .collect();
        Ok(Self {
            params: *p,
            v: coupling(p),
            a: annihilation(p),
            quanta,
        })
    }

    pub fn params(&self) -> &CommonReservoir {
        &self.params
    }

    /// Applies the generator to an arbitrary operator on the extended space.
    pub fn apply(&self, rho: &ComplexMatrix) -> ComplexMatrix {
        let dim = self.params.extended_dim();
        assert_eq!(
            rho.dim(),
            dim,
            "operator dimension does not match the generator"
        );
        // Column-major storage: entry (i, j) lives at i + j * dim.
        let r = rho.as_dmatrix().as_slice();
        let mut out = vec![ZERO; dim * dim];
        let half_gamma = self.params.big_gamma / 2.0;

        // -(Γ/2)(n ρ + ρ n)
        for j in 0..dim {
            for i in 0..dim {
                out[i + j * dim] =
                    r[i + j * dim] * (-half_gamma * (self.quanta[i] + self.quanta[j]));
            }
        }
        // -i (V ρ - ρ V)
        for &(i, k, v) in &self.v.entries {
            let w = -I * v;
            for j in 0..dim {
                out[i + j * dim] += w * r[k + j * dim];
                out[j + k * dim] -= w * r[j + i * dim];
            }
        }
        // Γ a ρ a†
        for &(i, k, s) in &self.a.entries {
            for &(j, l, t) in &self.a.entries {
                out[i + j * dim] += r[k + l * dim] * (s * t.conj() * self.params.big_gamma);
            }
        }
        ComplexMatrix::from_dmatrix(DMatrix::from_vec(dim, dim, out))
            .expect("generator output is square")
    }
}

/// Density matrix of the qubits plus pseudomode.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtendedState {
    rho: ComplexMatrix,
    fock_n: usize,
}

impl ExtendedState {
    /// Wraps an already-validated extended density matrix.
    pub fn new(rho: DensityMatrix, fock_n: usize) -> Result<Self> {
        if fock_n < 2 {
            return Err(out_of_range(
                "fock_n",
                format!("truncation {fock_n} is below 2"),
            ));
        }
        if rho.dim() != 4 * (fock_n + 1) {
            return Err(QslError::DimensionMismatch(format!(
                "extended state needs dimension {}, got {}",
                4 * (fock_n + 1),
                rho.dim()
            )));
        }
        Ok(Self {
            rho: rho.into_matrix(),
            fock_n,
        })
    }

    /// Dressed-basis embedding of a computational-basis two-qubit state with
    /// the pseudomode in vacuum.
    pub fn from_system(rho: &DensityMatrix, fock_n: usize) -> Result<Self> {
        let dressed = dressed_transform(rho, Direction::ToDressed)?;
        Self::new(embed_pseudomode(&dressed, fock_n)?, fock_n)
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.rho
    }

    pub fn fock_n(&self) -> usize {
        self.fock_n
    }

    /// `Σ_n ⟨−,n|ρ̃|−,n⟩`.
    pub fn subradiant_population(&self) -> f64 {
        let d = self.fock_n + 1;
        (0..d)
            .map(|n| self.rho[(MINUS * d + n, MINUS * d + n)].re)
            .sum()
    }
}

fn check_state_dim(rho: &ExtendedState, p: &CommonReservoir) -> Result<()> {
    if rho.fock_n != p.fock_n {
        return Err(QslError::DimensionMismatch(format!(
            "state truncated at N = {} but reservoir uses N = {}",
            rho.fock_n, p.fock_n
        )));
    }
    Ok(())
}

/// Right-hand side of the extended master equation.
pub fn lindblad_rhs(rho: &ExtendedState, p: &CommonReservoir) -> Result<ComplexMatrix> {
    check_state_dim(rho, p)?;
    Ok(Generator::new(p)?.apply(&rho.rho))
}

/// Reduced two-qubit state in the computational basis.
pub fn reduced_state(rho: &ExtendedState) -> Result<DensityMatrix> {
    let dressed = partial_trace_matrix(&rho.rho, (4, rho.fock_n + 1), Keep::A)?;
    let comp = DressedBasisMap::new().apply(&dressed, Direction::ToComputational)?;
    DensityMatrix::new(comp.hermitian_part())
}

fn reduce_operator(m: &ComplexMatrix, fock_n: usize) -> Result<ComplexMatrix> {
    let dressed = partial_trace_matrix(m, (4, fock_n + 1), Keep::A)?;
    Ok(DressedBasisMap::new()
        .apply(&dressed, Direction::ToComputational)?
        .hermitian_part())
}

/// Time derivative of the reduced computational-basis state.
pub fn reduced_derivative(rho: &ExtendedState, p: &CommonReservoir) -> Result<ComplexMatrix> {
    reduce_operator(&lindblad_rhs(rho, p)?, rho.fock_n)
}

/// Closed-form amplitude `G₊(t)` of `|+,0⟩` when the system starts in `|+⟩`
/// and the pseudomode in vacuum.
pub fn single_excitation_oracle(t: f64, p: &CommonReservoir) -> Result<C64> {
    p.validate()?;
    p.single_excitation_amplitude().value(t)
}

/// Step control for [`integrate_master_with`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntegratorOptions {
    /// Number of recorded intervals on `[0, t_end]`.
    pub steps: usize,
    /// RK4 substeps per recorded interval. `None` picks the smallest count
    /// with `h · rate_bound <= step_phase`.
    pub substeps: Option<usize>,
    pub step_phase: f64,
}

impl IntegratorOptions {
    pub fn new(steps: usize) -> Self {
        Self {
            steps,
            substeps: None,
            step_phase: DEFAULT_STEP_PHASE,
        }
    }
}

/// Samples of an integrated extended-state trajectory.
#[derive(Clone, Debug)]
pub struct MasterTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<ExtendedState>,
    /// RK4 substeps taken per recorded interval.
    pub substeps: usize,
}

/// Integrates the extended master equation with fixed-step classical RK4.
pub fn integrate_master(
    rho0: &ExtendedState,
    p: &CommonReservoir,
    t_end: f64,
    steps: usize,
) -> Result<MasterTrajectory> {
    integrate_master_with(rho0, p, t_end, &IntegratorOptions::new(steps))
}

pub fn integrate_master_with(
    rho0: &ExtendedState,
    p: &CommonReservoir,
    t_end: f64,
    opts: &IntegratorOptions,
) -> Result<MasterTrajectory> {
    check_state_dim(rho0, p)?;
    if opts.steps < 100 {
        return Err(out_of_range(
            "steps",
            format!("{} is below the minimum of 100", opts.steps),
        ));
    }
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(out_of_range("tau", format!("{t_end} must be > 0")));
    }
    let gen = Generator::new(p)?;
    let dt = t_end / opts.steps as f64;
    let substeps = match opts.substeps {
        Some(0) => return Err(out_of_range("substeps", "must be >= 1")),
        Some(k) => k,
        None => ((dt * p.rate_bound() / opts.step_phase).ceil() as usize).max(1),
    };
    let h = dt / substeps as f64;

    let sub0 = rho0.subradiant_population();
    let mut times = Vec::with_capacity(opts.steps + 1);
    let mut states = Vec::with_capacity(opts.steps + 1);
    let mut rho = rho0.rho.clone();
    check_sample(&rho, sub0, 0)?;
    times.push(0.0);
    states.push(rho0.clone());

    for step in 1..=opts.steps {
        for _ in 0..substeps {
            rho = rk4_step(&gen, &rho, h);
        }
        check_sample(&rho, sub0, step)?;
        times.push(if step == opts.steps {
            t_end
        } else {
            step as f64 * dt
        });
        states.push(ExtendedState {
            rho: rho.clone(),
            fock_n: p.fock_n,
        });
    }
    Ok(MasterTrajectory {
        times,
        states,
        substeps,
    })
}

fn rk4_step(gen: &Generator, rho: &ComplexMatrix, h: f64) -> ComplexMatrix {
    let half = C64::new(h / 2.0, 0.0);
    let k1 = gen.apply(rho);
    let mut y = rho.clone();
    y.axpy(half, &k1);
    let k2 = gen.apply(&y);
    let mut y = rho.clone();
    y.axpy(half, &k2);
    let k3 = gen.apply(&y);
    let mut y = rho.clone();
    y.axpy(C64::new(h, 0.0), &k3);
    let k4 = gen.apply(&y);

    let mut next = rho.clone();
    next.axpy(C64::new(h / 6.0, 0.0), &k1);
    next.axpy(C64::new(h / 3.0, 0.0), &k2);
    next.axpy(C64::new(h / 3.0, 0.0), &k3);
    next.axpy(C64::new(h / 6.0, 0.0), &k4);
    next
}

fn check_sample(rho: &ComplexMatrix, subradiant0: f64, step: usize) -> Result<()> {
    let fail = |detail: String| Err(QslError::Integration { step, detail });
    let tr = rho.trace();
    if (tr - ONE).norm() > TRACE_TOL {
        return fail(format!("trace {tr} deviates from 1"));
    }
    let herm = rho.hermiticity_error();
    if herm > EXTENDED_HERMITIAN_TOL {
        return fail(format!("Hermiticity error {herm:.3e}"));
    }
    let d = rho.dim() / 4;
    let sub: f64 = (0..d).map(|n| rho[(MINUS * d + n, MINUS * d + n)].re).sum();
    if (sub - subradiant0).abs() > SUBRADIANT_TOL {
        return fail(format!(
            "subradiant population drifted from {subradiant0} to {sub}"
        ));
    }
    if step.is_multiple_of(POSITIVITY_STRIDE) {
        let min =
            hermitian_eigenvalues(&rho.hermitian_part()).map_err(|e| QslError::Integration {
                step,
                detail: e.to_string(),
            })?[0];
        if min < -POSITIVITY_TOL {
            return fail(format!("minimum eigenvalue {min:.3e}"));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qmath::{tensor, test_util::random_density};
    use crate::states::{ewl_state, EwlParams, Family};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_1_SQRT_2, PI};

    fn res(big_gamma: f64, gamma0: f64) -> CommonReservoir {
        CommonReservoir::new(big_gamma, gamma0, 2).unwrap()
    }

    fn basis_state(p: &CommonReservoir, system: usize, quanta: usize) -> ExtendedState {
        let mut v = vec![ZERO; p.extended_dim()];
        v[p.index(system, quanta)] = ONE;
        ExtendedState::new(DensityMatrix::pure(&v).unwrap(), p.fock_n).unwrap()
    }

    fn system_state(family: Family, r: f64, theta: f64) -> DensityMatrix {
        ewl_state(&EwlParams::new(family, r, FRAC_1_SQRT_2, theta).unwrap()).unwrap()
    }

    /// Dense Lindblad right-hand side built from full matrices.
    fn dense_rhs(rho: &ComplexMatrix, p: &CommonReservoir) -> ComplexMatrix {
        let v = build_v(p).unwrap();
        let a_pm = ComplexMatrix::from_fn(p.fock_dim(), |i, j| {
            if j == i + 1 {
                C64::new((j as f64).sqrt(), 0.0)
            } else {
                ZERO
            }
        });
        let a = tensor(&ComplexMatrix::identity(4), &a_pm);
        let n = &a.adjoint() * &a;
        let mut out = v.commutator(rho).scale(-I);
        let mut diss = &(&n * rho) + &(rho * &n);
        diss.axpy(C64::new(-2.0, 0.0), &(&(&a * rho) * &a.adjoint()));
        out.axpy(C64::new(-p.big_gamma / 2.0, 0.0), &diss);
        out
    }

    #[test]
    fn parameter_validation_and_regime() {
        assert!(CommonReservoir::new(0.0, 1.0, 2).is_err());
        assert!(CommonReservoir::new(50.0, 0.0, 2).is_err());
        assert!(CommonReservoir::new(50.0, 1.0, 1).is_err());
        assert_eq!(res(50.0, 12.5).regime(), Regime::Markovian);
        assert_eq!(res(50.0, 12.6).regime(), Regime::NonMarkovian);
        assert!(res(50.0, 1.0).oscillation_threshold() < res(50.0, 1.0).regime_boundary());
    }

    #[test]
    fn exchange_operator_structure() {
        let p = res(50.0, 3.0);
        let v = build_v(&p).unwrap();
        assert!(v.hermiticity_error() < 1e-14);
        for n in 0..=p.fock_n {
            for j in 0..p.extended_dim() {
                assert_eq!(v[(p.index(MINUS, n), j)], ZERO);
                assert_eq!(v[(j, p.index(MINUS, n))], ZERO);
            }
        }
        for i in 0..p.extended_dim() {
            assert_eq!(v[(i, p.index(GROUND, 0))], ZERO);
        }
        let elem = v[(p.index(PLUS, 0), p.index(GROUND, 1))];
        assert!((elem.re - std::f64::consts::SQRT_2 * 3.0).abs() < 1e-15);
    }

    #[test]
    fn stationary_states_have_zero_rhs() {
        let p = res(50.0, 7.0);
        for system in [MINUS, GROUND] {
            let rhs = lindblad_rhs(&basis_state(&p, system, 0), &p).unwrap();
            assert_eq!(rhs.max_abs(), 0.0);
            assert_eq!(
                reduced_derivative(&basis_state(&p, system, 0), &p)
                    .unwrap()
                    .max_abs(),
                0.0
            );
        }
    }

    #[test]
    fn sparse_generator_matches_dense_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for fock_n in [2, 3] {
            let p = CommonReservoir::new(13.0, 4.0, fock_n).unwrap();
            let rho = random_density(&mut rng, p.extended_dim());
            let state = ExtendedState::new(rho.clone(), fock_n).unwrap();
            let rhs = lindblad_rhs(&state, &p).unwrap();
            assert!(rhs.max_abs_diff(&dense_rhs(rho.matrix(), &p)) < 1e-12);
            assert!(rhs.trace().norm() <= 1e-12);
            assert!(rhs.hermiticity_error() <= 1e-12);
            let red = reduced_derivative(&state, &p).unwrap();
            assert!(red.trace().norm() <= 1e-12);
        }
    }

    #[test]
    fn subradiant_state_is_frozen() {
        let p = res(50.0, 20.0);
        let rho0 = ExtendedState::from_system(&system_state(Family::Psi1, 1.0, PI), 2).unwrap();
        let traj = integrate_master(&rho0, &p, 1.0, 200).unwrap();
        for s in &traj.states {
            assert!(s.matrix().max_abs_diff(rho0.matrix()) < 1e-10);
        }
    }

    #[test]
    fn superradiant_population_decays_monotonically_when_weak() {
        let p = res(50.0, 1.0);
        let rho0 = ExtendedState::from_system(&system_state(Family::Psi1, 1.0, 0.0), 2).unwrap();
        let traj = integrate_master(&rho0, &p, 1.0, 200).unwrap();
        let map = DressedBasisMap::new();
        let pops: Vec<f64> = traj
            .states
            .iter()
            .map(|s| {
                let r = reduced_state(s).unwrap();
                map.apply(r.matrix(), Direction::ToDressed).unwrap()[(PLUS, PLUS)].re
            })
            .collect();
        assert!(pops.windows(2).all(|w| w[1] < w[0]));
        for (t, pop) in traj.times.iter().zip(&pops) {
            let g = single_excitation_oracle(*t, &p).unwrap();
            assert!((pop - g.norm_sqr()).abs() < 1e-6);
        }
        for s in &traj.states {
            assert!((s.matrix().trace().re - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn oracle_shapes() {
        assert_eq!(single_excitation_oracle(0.0, &res(50.0, 1.0)).unwrap(), ONE);
        assert!(single_excitation_oracle(-1.0, &res(50.0, 1.0)).is_err());
        let weak: Vec<f64> = (0..=100)
            .map(|k| {
                single_excitation_oracle(k as f64 / 100.0, &res(50.0, 1.0))
                    .unwrap()
                    .norm()
            })
            .collect();
        assert!(weak.windows(2).all(|w| w[1] < w[0]));
        let strong: Vec<f64> = (0..=1000)
            .map(|k| {
                single_excitation_oracle(k as f64 / 1000.0, &res(1.0, 10.0))
                    .unwrap()
                    .re
            })
            .collect();
        assert!(strong.windows(2).any(|w| w[0] > 0.0 && w[1] <= 0.0));
    }

    #[test]
    fn long_time_state_lives_on_ground_and_dark_state() {
        let p = res(50.0, 8.0);
        let rho0 = ExtendedState::from_system(&system_state(Family::Psi1, 0.6, 0.4), 2).unwrap();
        let traj = integrate_master(&rho0, &p, 3.0, 600).unwrap();
        let last = reduced_state(traj.states.last().unwrap()).unwrap();
        assert!((last.matrix().trace().re - 1.0).abs() < 1e-12);
        let d = DressedBasisMap::new()
            .apply(last.matrix(), Direction::ToDressed)
            .unwrap();
        let keep = [GROUND, MINUS];
        for i in 0..4 {
            for j in 0..4 {
                if !(keep.contains(&i) && keep.contains(&j)) {
                    assert!(d[(i, j)].norm() < 1e-6, "({i},{j}) = {}", d[(i, j)]);
                }
            }
        }
    }

    #[test]
    fn reduced_state_of_embedding_is_identity() {
        let rho = system_state(Family::Psi2, 0.7, 0.3);
        let ext = ExtendedState::from_system(&rho, 2).unwrap();
        let back = reduced_state(&ext).unwrap();
        assert!(back.matrix().max_abs_diff(rho.matrix()) < 1e-14);
    }

    #[test]
    fn reduced_derivative_matches_trajectory_differences() {
        let p = res(50.0, 20.0);
        let rho0 = ExtendedState::from_system(&system_state(Family::Psi2, 0.5, 0.0), 2).unwrap();
        let opts = IntegratorOptions {
            steps: 4000,
            substeps: None,
            step_phase: DEFAULT_STEP_PHASE,
        };
        let traj = integrate_master_with(&rho0, &p, 1.0, &opts).unwrap();
        // Fine local trajectory around each mid-trajectory point; five-point
        // centred stencil at its third sample.
        let delta = 1e-4;
        for k in [100, 500, 2000, 3000] {
            let local = integrate_master(&traj.states[k], &p, 100.0 * delta, 100).unwrap();
            let red = |i: usize| reduced_state(&local.states[i]).unwrap().into_matrix();
            let mut fd = (&red(3) - &red(1)).scale_real(8.0);
            fd.axpy(C64::new(-1.0, 0.0), &(&red(4) - &red(0)));
            let fd = fd.scale_real(1.0 / (12.0 * delta));
            let an = reduced_derivative(&local.states[2], &p).unwrap();
            assert!(
                fd.max_abs_diff(&an) <= 1e-6,
                "k={k}: {}",
                fd.max_abs_diff(&an)
            );
            assert!(an.trace().norm() < 1e-12);
        }
    }

    #[test]
    fn truncation_beyond_two_quanta_changes_nothing() {
        let p2 = CommonReservoir::new(50.0, 30.0, 2).unwrap();
        let p3 = CommonReservoir::new(50.0, 30.0, 3).unwrap();
        let sys = system_state(Family::Psi2, 0.8, 0.0);
        let t2 =
            integrate_master(&ExtendedState::from_system(&sys, 2).unwrap(), &p2, 1.0, 200).unwrap();
        let t3 =
            integrate_master(&ExtendedState::from_system(&sys, 3).unwrap(), &p3, 1.0, 200).unwrap();
        for (a, b) in t2.states.iter().zip(&t3.states) {
            let ra = reduced_state(a).unwrap();
            let rb = reduced_state(b).unwrap();
            assert!(ra.matrix().max_abs_diff(rb.matrix()) < 1e-10);
        }
    }

    #[test]
    fn halving_the_step_converges() {
        let p = res(50.0, 60.0);
        let rho0 = ExtendedState::from_system(&system_state(Family::Psi2, 1.0, 0.0), 2).unwrap();
        let coarse = integrate_master(&rho0, &p, 1.0, 1000).unwrap();
        let fine_opts = IntegratorOptions {
            steps: 1000,
            substeps: Some(coarse.substeps * 2),
            step_phase: DEFAULT_STEP_PHASE,
        };
        let fine = integrate_master_with(&rho0, &p, 1.0, &fine_opts).unwrap();
        let a = coarse.states.last().unwrap().matrix();
        let b = fine.states.last().unwrap().matrix();
        assert!(a.max_abs_diff(b) < 1e-8, "{}", a.max_abs_diff(b));
    }

    #[test]
    fn integrator_rejects_bad_input() {
        let p = res(50.0, 1.0);
        let rho0 = ExtendedState::from_system(&DensityMatrix::maximally_mixed(4), 2).unwrap();
        assert!(integrate_master(&rho0, &p, 1.0, 99).is_err());
        assert!(integrate_master(&rho0, &p, 0.0, 200).is_err());
        let p3 = CommonReservoir::new(50.0, 1.0, 3).unwrap();
        assert!(integrate_master(&rho0, &p3, 1.0, 200).is_err());
    }
}
