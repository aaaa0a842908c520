//! Dependence of the solution `x_a` of `V(x) = a` on the right-hand side.
//!
//! The derivative of `a ↦ x_a` in direction `h` is the solution `s` of the
//! linearised equation `s + T s = h` with `T` built at `x_a`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::function_space::GridFunction;
use crate::kernel::KernelSpec;
use crate::linear_solver::{neumann_solve, NeumannReport};
use crate::nonlinear_solver::{solve_newton, SolveReport};
use crate::operator::check_pair;

/// Seed for the unit probe directions of [`robustness_modulus`].
pub const PROBE_SEED: u64 = 0x0b0e_5eed;

const NEWTON_MAX_ITER: usize = 100;
const NEUMANN_MAX_ITER: usize = 1000;
/// Residual target for the inner nonlinear solves.
const SOLVE_TOL: f64 = 1e-12;

/// Everything produced on the way to a directional sensitivity.
#[derive(Debug, Clone)]
pub struct Sensitivity {
    pub direction: GridFunction,
    pub solution: GridFunction,
    pub solve: SolveReport,
    pub linear: NeumannReport,
}

/// Solves `V(x) = a` from `start` (or `a`) and insists on convergence.
pub fn solve_point(
    kernel: &KernelSpec,
    a: &GridFunction,
    start: Option<&GridFunction>,
) -> Result<(GridFunction, SolveReport)> {
    let (x, report) = solve_newton(kernel, a, start, SOLVE_TOL, NEWTON_MAX_ITER)?;
    report.ensure_converged()?;
    Ok((x, report))
}

/// `s = V′(x_a)⁻¹ h` with `‖s + T s − h‖_{AC₀²} ≤ tol`.
pub fn directional_sensitivity(
    kernel: &KernelSpec,
    a: &GridFunction,
    h: &GridFunction,
    tol: f64,
) -> Result<GridFunction> {
    Ok(sensitivity_with_reports(kernel, a, h, tol)?.direction)
}

/// [`directional_sensitivity`] keeping the solution `x_a` and both solver
/// reports.
pub fn sensitivity_with_reports(
    kernel: &KernelSpec,
    a: &GridFunction,
    h: &GridFunction,
    tol: f64,
) -> Result<Sensitivity> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument("tolerance must be positive".into()));
    }
    check_pair(a, h)?;
    let (x, solve) = solve_point(kernel, a, None)?;
    sensitivity_at(kernel, x, solve, h, tol)
}

/// Sensitivity at an already computed solution `x_a`.
pub fn sensitivity_at(
    kernel: &KernelSpec,
    solution: GridFunction,
    solve: SolveReport,
    h: &GridFunction,
    tol: f64,
) -> Result<Sensitivity> {
    check_pair(&solution, h)?;
    let (direction, linear) = neumann_solve(kernel, &solution, h, tol, NEUMANN_MAX_ITER)?;
    linear.ensure_converged()?;
    Ok(Sensitivity {
        direction,
        solution,
        solve,
        linear,
    })
}

/// `(x_{a+εh} − x_{a−εh}) / 2ε`.
///
/// Evaluated as `h + ((x₊ − a₊) − (x₋ − a₋)) / 2ε` so that the identity part
/// of the operator does not cancel catastrophically.
pub fn central_difference(
    kernel: &KernelSpec,
    a: &GridFunction,
    h: &GridFunction,
    epsilon: f64,
) -> Result<GridFunction> {
    let ap = GridFunction::axpy(epsilon, h, a)?;
    let am = GridFunction::axpy(-epsilon, h, a)?;
    let (xp, _) = solve_point(kernel, &ap, None)?;
    let (xm, _) = solve_point(kernel, &am, None)?;
    let gap = xp.sub(&ap)?.sub(&xm.sub(&am)?)?;
    GridFunction::axpy(0.5 / epsilon, &gap, h)
}

/// `‖s − D_ε‖ / ‖s‖` where `D_ε` is the central difference quotient of the
/// solution map at step `epsilon`.
pub fn fd_sensitivity_check(
    kernel: &KernelSpec,
    a: &GridFunction,
    h: &GridFunction,
    epsilon: f64,
) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument("epsilon must be positive".into()));
    }
    let sens = sensitivity_with_reports(kernel, a, h, 1e-10)?;
    fd_discrepancy(kernel, a, &sens, h, epsilon)
}

/// [`fd_sensitivity_check`] reusing a computed [`Sensitivity`].
pub fn fd_discrepancy(
    kernel: &KernelSpec,
    a: &GridFunction,
    sens: &Sensitivity,
    h: &GridFunction,
    epsilon: f64,
) -> Result<f64> {
    let fd = central_difference(kernel, a, h, epsilon)?;
    let diff = sens.direction.ac_distance(&fd)?;
    let scale = sens.direction.ac_norm();
    Ok(if scale > 0.0 { diff / scale } else { diff })
}

/// Unit-norm probe direction number `index`.
pub fn probe_direction(a: &GridFunction, index: usize) -> Result<GridFunction> {
    const MODES: usize = 5;
    let dim = a.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(PROBE_SEED);
    rng.set_stream(index as u64);
    let c: Vec<f64> = (0..MODES * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let grid = *a.grid();
    let (alpha, len) = (grid.alpha(), grid.length());
    let h = GridFunction::from_callable(grid, dim, |t, out| {
        let s = (t - alpha) / len;
        out.fill(0.0);
        for m in 0..MODES {
            let mode = ((m as f64 + 0.5) * std::f64::consts::PI * s).sin();
            for (k, o) in out.iter_mut().enumerate() {
                *o += c[m * dim + k] * mode;
            }
        }
    })?;
    let n = h.ac_norm();
    if n == 0.0 {
        return Err(Error::InvalidArgument("degenerate probe direction".into()));
    }
    Ok(h.scale(1.0 / n))
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Probe {
    /// `‖x_{a+δh} − x_a‖ / δ`.
    pub ratio: f64,
    /// `‖V′(x_a)⁻¹ h‖`.
    pub sensitivity_norm: f64,
}

/// Difference quotients and linearised responses for `n_probes` seeded unit
/// directions.
pub fn robustness_probes(
    kernel: &KernelSpec,
    a: &GridFunction,
    n_probes: usize,
    delta: f64,
) -> Result<Vec<Probe>> {
    if !(delta > 0.0) || n_probes == 0 {
        return Err(Error::InvalidArgument(
            "robustness probes need delta > 0 and at least one probe".into(),
        ));
    }
    let (x_a, solve) = solve_point(kernel, a, None)?;
    (0..n_probes)
        .into_par_iter()
        .map(|k| {
            let h = probe_direction(a, k)?;
            let (xp, _) = solve_point(kernel, &GridFunction::axpy(delta, &h, a)?, None)?;
            let s = sensitivity_at(kernel, x_a.clone(), solve.clone(), &h, 1e-10)?;
            Ok(Probe {
                ratio: xp.ac_distance(&x_a)? / delta,
                sensitivity_norm: s.direction.ac_norm(),
            })
        })
        .collect()
}

/// `max_k ‖x_{a+δh_k} − x_a‖ / δ` over seeded unit directions `h_k`.
pub fn robustness_modulus(
    kernel: &KernelSpec,
    a: &GridFunction,
    n_probes: usize,
    delta: f64,
) -> Result<f64> {
    Ok(robustness_probes(kernel, a, n_probes, delta)?
        .iter()
        .map(|p| p.ratio)
        .fold(0.0, f64::max))
}
