//! Fidelity-based quantum speed limit.
//!
//! For a trajectory `ρ_t` on `[0, τ]` the bound is
//! `τ_QSL = |1 - F(ρ₀, ρ_τ)| / X(τ)` with
//! `X(τ) = (2/τ) ∫₀^τ sqrt(Tr(ρ̇_t²) / Tr(ρ_t²)) dt`, and `F` the normalised
//! Hilbert–Schmidt overlap from [`crate::qmath::fidelity`].

use serde::{Deserialize, Serialize};

use crate::common::{
    integrate_master_with, CommonReservoir, ExtendedState, Generator, IntegratorOptions,
};
use crate::error::{out_of_range, QslError, Result};
use crate::independent::{
    g_derivative, g_exact, two_qubit_map, two_qubit_map_derivative, IndependentReservoir,
};
use crate::qmath::{fidelity, partial_trace_matrix, purity, ComplexMatrix, DensityMatrix, Keep};
use crate::states::{ewl_state, Direction, DressedBasisMap, EwlParams};
use crate::Regime;

/// Minimum number of samples accepted by [`x_tau`].
pub const MIN_POINTS: usize = 100;
/// Slack on the bound `τ_QSL <= τ`.
pub const BOUND_SLACK: f64 = 1e-9;
/// Speed integrals below this are treated as "no motion".
pub const ZERO_SPEED: f64 = 1e-14;
/// Fidelity deficits below this are treated as "no motion".
pub const ZERO_DEFICIT: f64 = 1e-12;
/// Default number of RK4/trajectory intervals on `[0, τ]`.
pub const DEFAULT_STEPS: usize = 2000;

const DERIVATIVE_TOL: f64 = 1e-10;
const SPACING_TOL: f64 = 1e-12;

/// States and their time derivatives on a uniform grid over `[0, τ]`.
#[derive(Clone, Debug)]
pub struct Trajectory {
    times: Vec<f64>,
    states: Vec<DensityMatrix>,
    derivatives: Vec<ComplexMatrix>,
}

impl Trajectory {
    pub fn new(
        times: Vec<f64>,
        states: Vec<DensityMatrix>,
        derivatives: Vec<ComplexMatrix>,
    ) -> Result<Self> {
        let n = times.len();
        if n < 2 || states.len() != n || derivatives.len() != n {
            return Err(QslError::Trajectory(format!(
                "need matching samples (times {n}, states {}, derivatives {})",
                states.len(),
                derivatives.len()
            )));
        }
        if times[0] != 0.0 {
            return Err(QslError::Trajectory(format!(
                "first time is {}, expected 0",
                times[0]
            )));
        }
        let tau = times[n - 1];
        if !(tau > 0.0) {
            return Err(QslError::Trajectory(format!(
                "final time {tau} must be > 0"
            )));
        }
        let dt = tau / (n - 1) as f64;
        for (k, &t) in times.iter().enumerate() {
            if (t - k as f64 * dt).abs() > SPACING_TOL * tau.max(1.0) {
                return Err(QslError::Trajectory(format!(
                    "time grid is not uniform at sample {k}"
                )));
            }
        }
        let dim = states[0].dim();
        for (k, (s, d)) in states.iter().zip(&derivatives).enumerate() {
            if s.dim() != dim || d.dim() != dim {
                return Err(QslError::Trajectory(format!(
                    "sample {k} has inconsistent dimension"
                )));
            }
            let tr = d.trace().norm();
            let herm = d.hermiticity_error();
            if tr > DERIVATIVE_TOL || herm > DERIVATIVE_TOL {
                return Err(QslError::Trajectory(format!(
                    "derivative at sample {k} has trace {tr:.3e}, Hermiticity error {herm:.3e}"
                )));
            }
        }
        Ok(Self {
            times,
            states,
            derivatives,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[DensityMatrix] {
        &self.states
    }

    pub fn derivatives(&self) -> &[ComplexMatrix] {
        &self.derivatives
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn tau(&self) -> f64 {
        *self.times.last().expect("trajectory has samples")
    }
}

/// Result of one speed-limit evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QslResult {
    pub fidelity_end: f64,
    pub x_tau: f64,
    pub tau_qsl: f64,
    pub tau: f64,
}

/// Samples per interpolation window.
const WINDOW: usize = 6;
/// Coarse scan resolution when locating the minimum of `‖ρ̇‖` in an interval.
const SCAN: usize = 16;

const GAUSS_LEGENDRE_8: [(f64, f64); 4] = [
    (0.183_434_642_495_649_8, 0.362_683_783_378_362),
    (0.525_532_409_916_329, 0.313_706_645_877_887_3),
    (0.796_666_477_413_626_7, 0.222_381_034_453_374_5),
    (0.960_289_856_497_536_3, 0.101_228_536_290_376_3),
];

fn gauss_legendre(a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    GAUSS_LEGENDRE_8
        .iter()
        .map(|&(x, w)| w * (f(mid - half * x) + f(mid + half * x)))
        .sum::<f64>()
        * half
}

fn gram_entry(gram: &[[f64; WINDOW]], a: usize, b: usize) -> f64 {
    if a <= b {
        gram[a][b - a]
    } else {
        gram[b][a - b]
    }
}

/// Lagrange basis through `nodes`, evaluated at `x`.
fn lagrange(nodes: &[f64; WINDOW], x: f64) -> [f64; WINDOW] {
    let mut out = [1.0; WINDOW];
    for (k, l) in out.iter_mut().enumerate() {
        for (j, &o) in nodes.iter().enumerate() {
            if j != k {
                *l *= (x - o) / (nodes[k] - o);
            }
        }
    }
    out
}

/// `∫ sqrt(Tr(ρ̇²)/Tr(ρ²)) dt` over `[t_i, t_{i+1}]`.
///
/// `ρ̇` and the purity are interpolated through the `WINDOW` samples around
/// the interval. `Tr(ρ̇²)` of the interpolant is a quadratic form in the
/// Lagrange weights, so it stays non-negative. The integral is split at the
/// minimum of that norm: where `ρ̇` passes through zero the integrand has a
/// kink, and each side of it is smooth.
fn interval_integral(gram: &[[f64; WINDOW]], purities: &[f64], i: usize, h: f64) -> f64 {
    let n = purities.len();
    let start = i.saturating_sub(WINDOW / 2 - 1).min(n - WINDOW);
    let nodes: [f64; WINDOW] = std::array::from_fn(|k| (start + k) as f64 - i as f64);
    let local: [[f64; WINDOW]; WINDOW] =
        std::array::from_fn(|a| std::array::from_fn(|b| gram_entry(gram, start + a, start + b)));
    let norm_sq = |l: &[f64; WINDOW]| -> f64 {
        let mut acc = 0.0;
        for a in 0..WINDOW {
            let row: f64 = (0..WINDOW).map(|b| local[a][b] * l[b]).sum();
            acc += l[a] * row;
        }
        acc.max(0.0)
    };
    let norm_at = |x: f64| norm_sq(&lagrange(&nodes, x));
    let integrand = |x: f64| -> f64 {
        let l = lagrange(&nodes, x);
        let p: f64 = (0..WINDOW).map(|k| l[k] * purities[start + k]).sum();
        (norm_sq(&l) / p).sqrt()
    };

    let (mut best, mut best_val) = (0.0, norm_at(0.0));
    for k in 1..=SCAN {
        let x = k as f64 / SCAN as f64;
        let v = norm_at(x);
        if v < best_val {
            best = x;
            best_val = v;
        }
    }
    let step = 1.0 / SCAN as f64;
    let (mut lo, mut hi) = ((best - step).max(0.0), (best + step).min(1.0));
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (hi - ratio * (hi - lo), lo + ratio * (hi - lo));
    let (mut fa, mut fb) = (norm_at(a), norm_at(b));
    for _ in 0..40 {
        if fa < fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - ratio * (hi - lo);
            fa = norm_at(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + ratio * (hi - lo);
            fb = norm_at(b);
        }
    }
    let split = 0.5 * (lo + hi);
    h * (gauss_legendre(0.0, split, integrand) + gauss_legendre(split, 1.0, integrand))
}

/// `X(τ) = (2/τ) ∫₀^τ sqrt(Tr(ρ̇²)/Tr(ρ²)) dt`.
///
/// Each interval is integrated on a degree-5 interpolant of the sampled
/// `ρ̇`, which keeps sixth-order accuracy through the kinks of the speed.
pub fn x_tau(traj: &Trajectory) -> Result<f64> {
    let n = traj.len();
    if n < MIN_POINTS {
        return Err(QslError::Quadrature(format!(
            "{n} samples, at least {MIN_POINTS} required"
        )));
    }
    let derivs = &traj.derivatives;
    // Banded Gram matrix: gram[a][k] = Re Tr(ρ̇_a ρ̇_{a+k}).
    let gram: Vec<[f64; WINDOW]> = (0..n)
        .map(|a| {
            std::array::from_fn(|k| match derivs.get(a + k) {
                Some(b) => derivs[a].trace_product(b).re,
                None => 0.0,
            })
        })
        .collect();
    for (k, row) in gram.iter().enumerate() {
        if row[0] < -1e-14 {
            return Err(QslError::Quadrature(format!(
                "Tr(ρ̇²) = {:.3e} is negative at sample {k}",
                row[0]
            )));
        }
    }
    let purities: Vec<f64> = traj.states.iter().map(purity).collect();
    let tau = traj.tau();
    let h = tau / (n - 1) as f64;
    let total: f64 = (0..n - 1)
        .map(|i| interval_integral(&gram, &purities, i, h))
        .sum();
    Ok(2.0 / tau * total)
}

/// `τ_QSL = |1 - F(ρ₀, ρ_τ)| / X`, with `0/0` defined as zero.
pub fn tau_qsl(rho0: &DensityMatrix, rho_tau: &DensityMatrix, x: f64, tau: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(out_of_range("tau", format!("{tau} must be > 0")));
    }
    if !(x >= 0.0) {
        return Err(out_of_range("x_tau", format!("{x} must be >= 0")));
    }
    let deficit = (1.0 - fidelity(rho0, rho_tau)?).abs();
    if x < ZERO_SPEED {
        if deficit < ZERO_DEFICIT {
            return Ok(0.0);
        }
        return Err(QslError::InconsistentQsl(format!(
            "state moved (|1 - F| = {deficit:.3e}) but the speed integral is {x:.3e}"
        )));
    }
    let bound = deficit / x;
    if bound > tau + BOUND_SLACK {
        return Err(QslError::InconsistentQsl(format!(
            "bound {bound} exceeds the driving time {tau}"
        )));
    }
    Ok(bound)
}

/// Speed-limit quantities for a finished trajectory.
pub fn evaluate_trajectory(traj: &Trajectory) -> Result<QslResult> {
    let x = x_tau(traj)?;
    let tau = traj.tau();
    let rho0 = &traj.states[0];
    let rho_tau = traj.states.last().expect("trajectory has samples");
    Ok(QslResult {
        fidelity_end: fidelity(rho0, rho_tau)?,
        x_tau: x,
        tau_qsl: tau_qsl(rho0, rho_tau, x, tau)?,
        tau,
    })
}

/// Which reservoir topology to evaluate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Reservoir {
    Independent(IndependentReservoir),
    Common(CommonReservoir),
}

impl Reservoir {
    pub fn gamma0(&self) -> f64 {
        match self {
            Reservoir::Independent(p) => p.gamma0,
            Reservoir::Common(p) => p.gamma0,
        }
    }

    pub fn regime(&self) -> Regime {
        match self {
            Reservoir::Independent(p) => p.regime(),
            Reservoir::Common(p) => p.regime(),
        }
    }
}

fn check_grid(tau: f64, steps: usize) -> Result<()> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(out_of_range("tau", format!("{tau} must be > 0")));
    }
    if steps + 1 < MIN_POINTS {
        return Err(out_of_range(
            "steps",
            format!("{steps} intervals give fewer than {MIN_POINTS} samples"),
        ));
    }
    Ok(())
}

/// Independent reservoirs: analytic `G(t)` through the product channel, with
/// `ρ̇` from the chain rule.
pub fn independent_trajectory(
    ewl: &EwlParams,
    p: &IndependentReservoir,
    tau: f64,
    steps: usize,
) -> Result<Trajectory> {
    check_grid(tau, steps)?;
    let rho0 = ewl_state(ewl)?;
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut derivatives = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let t = k as f64 / steps as f64 * tau;
        let g = g_exact(t, p)?;
        let gdot = g_derivative(t, p)?;
        times.push(t);
        states.push(two_qubit_map(&rho0, g)?);
        derivatives.push(two_qubit_map_derivative(&rho0, g, gdot)?);
    }
    Trajectory::new(times, states, derivatives)
}

/// Common reservoir: master-equation integration, then partial trace over
/// the pseudomode. `ρ̇` comes from the generator, not from differences.
pub fn common_trajectory(
    ewl: &EwlParams,
    p: &CommonReservoir,
    tau: f64,
    opts: &IntegratorOptions,
) -> Result<Trajectory> {
    check_grid(tau, opts.steps)?;
    let rho0 = ExtendedState::from_system(&ewl_state(ewl)?, p.fock_n)?;
    let run = integrate_master_with(&rho0, p, tau, opts)?;
    let generator = Generator::new(p)?;
    let map = DressedBasisMap::new();
    let reduce = |m: &ComplexMatrix| -> Result<ComplexMatrix> {
        let dressed = partial_trace_matrix(m, (4, p.fock_dim()), Keep::A)?;
        Ok(map
            .apply(&dressed, Direction::ToComputational)?
            .hermitian_part())
    };
    let mut states = Vec::with_capacity(run.states.len());
    let mut derivatives = Vec::with_capacity(run.states.len());
    for s in &run.states {
        states.push(DensityMatrix::new(reduce(s.matrix())?)?);
        derivatives.push(reduce(&generator.apply(s.matrix()))?);
    }
    Trajectory::new(run.times, states, derivatives)
}

/// Builds the trajectory for `reservoir` and evaluates the speed limit.
pub fn evaluate_point(
    ewl: &EwlParams,
    reservoir: &Reservoir,
    tau: f64,
    steps: usize,
) -> Result<QslResult> {
    let traj = match reservoir {
        Reservoir::Independent(p) => independent_trajectory(ewl, p, tau, steps)?,
        Reservoir::Common(p) => common_trajectory(ewl, p, tau, &IntegratorOptions::new(steps))?,
    };
    evaluate_trajectory(&traj)
}
