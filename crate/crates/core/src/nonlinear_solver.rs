//! Solving `V(x) = y`.
//!
//! [`solve_newton`] is the workhorse: every step solves the linearised
//! equation by collocation, which is the exact Jacobian of the discrete
//! operator, so convergence is quadratic near the solution.
//! [`solve_gradient`] minimises the least-squares functional with nonlinear
//! conjugate gradients in the `AC₀²` metric and needs no second solve.
//! [`multistart_uniqueness`] runs Newton from scattered starts and measures
//! how far apart the answers land.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::function_space::{Grid, GridFunction};
use crate::kernel::KernelSpec;
use crate::linear_solver::{collocation_solve_with, Linearization, Termination};
use crate::operator::{apply_v, check_kernel, check_pair, functional_f, functional_gradient};

/// Backtracking gives up once the step length falls below this.
pub const MIN_STEP: f64 = 1.0 / (1u64 << 20) as f64;

/// Seed of the multistart generator (ChaCha8, one stream per start).
pub const MULTISTART_SEED: u64 = 0x005e_ed0f_f5e7;

/// Largest `AC₀²` norm of a multistart initial function.
pub const MULTISTART_RADIUS: f64 = 10.0;

const ARMIJO: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Newton,
    Gradient,
}

/// One multistart run.
#[derive(Debug, Clone, Serialize)]
pub struct StartOutcome {
    pub index: usize,
    pub initial_norm: f64,
    pub converged: bool,
    pub iterations: usize,
    pub residual: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub method: Method,
    pub iterations: usize,
    /// `‖V(x_k) − y‖_{AC₀²}` for the initial guess and every accepted step.
    /// For multistart: the final residual of each start.
    pub residual_history: Vec<f64>,
    /// The least-squares functional at the same iterates.
    pub functional_history: Vec<f64>,
    pub converged: bool,
    pub termination: Termination,
    pub tolerance: f64,
    pub multistart_spread: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub starts: Option<Vec<StartOutcome>>,
}

impl SolveReport {
    pub fn final_residual(&self) -> f64 {
        self.residual_history
            .last()
            .copied()
            .unwrap_or(f64::INFINITY)
    }

    /// Turns a non-converged report into the matching error.
    pub fn ensure_converged(&self) -> Result<()> {
        let residual = self.final_residual();
        match self.termination {
            Termination::Converged => Ok(()),
            Termination::MaxIterExceeded => Err(Error::MaxIterExceeded {
                iterations: self.iterations,
                residual,
            }),
            Termination::LineSearchStalled => Err(Error::LineSearchStalled {
                iteration: self.iterations,
                residual,
            }),
        }
    }
}

fn validate(kernel: &KernelSpec, y: &GridFunction, x_init: &GridFunction, tol: f64) -> Result<()> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument("tolerance must be positive".into()));
    }
    check_pair(y, x_init)?;
    check_kernel(kernel, y)
}

/// Newton's method with backtracking on `½‖V(x) − y‖²_{AC₀²}`.
///
/// `x_init = None` starts from `y`. Non-convergence is reported through
/// [`SolveReport::termination`], not as an error.
pub fn solve_newton(
    kernel: &KernelSpec,
    y: &GridFunction,
    x_init: Option<&GridFunction>,
    tol: f64,
    max_iter: usize,
) -> Result<(GridFunction, SolveReport)> {
    let mut x = x_init.unwrap_or(y).clone();
    validate(kernel, y, &x, tol)?;
    let mut r = y.sub(&apply_v(kernel, &x)?)?;
    let mut res = r.ac_norm();
    let mut residuals = vec![res];
    let mut functionals = vec![0.5 * res * res];
    let mut iterations = 0;
    let mut termination = Termination::MaxIterExceeded;
    loop {
        if res <= tol {
            termination = Termination::Converged;
            break;
        }
        if iterations == max_iter {
            break;
        }
        let lin = Linearization::new(kernel, &x)?;
        let delta = collocation_solve_with(&lin, &r)?;
        let mut s = 1.0;
        let accepted = loop {
            let trial = GridFunction::axpy(s, &delta, &x)?;
            let trial_r = y.sub(&apply_v(kernel, &trial)?)?;
            let trial_res = trial_r.ac_norm();
            if trial_res < res {
                break Some((trial, trial_r, trial_res));
            }
            s *= 0.5;
            if s < MIN_STEP {
                break None;
            }
        };
        let Some((xn, rn, resn)) = accepted else {
            termination = Termination::LineSearchStalled;
            break;
        };
        x = xn;
        r = rn;
        res = resn;
        iterations += 1;
        residuals.push(res);
        functionals.push(0.5 * res * res);
    }
    let report = SolveReport {
        method: Method::Newton,
        iterations,
        residual_history: residuals,
        functional_history: functionals,
        converged: termination == Termination::Converged,
        termination,
        tolerance: tol,
        multistart_spread: None,
        starts: None,
    };
    Ok((x, report))
}

/// Minimises the least-squares functional by Polak–Ribière conjugate
/// gradients in the `AC₀²` inner product.
///
/// Step lengths come from the Gauss–Newton model along the search direction
/// and are safeguarded by Armijo backtracking. Converged means
/// `(2F)^{1/2} ≤ tol`, hence also `F ≤ tol²`.
pub fn solve_gradient(
    kernel: &KernelSpec,
    y: &GridFunction,
    x_init: Option<&GridFunction>,
    tol: f64,
    max_iter: usize,
) -> Result<(GridFunction, SolveReport)> {
    let mut x = x_init.unwrap_or(y).clone();
    validate(kernel, y, &x, tol)?;
    let (mut f, mut g, mut jac) = functional_gradient(kernel, &x, y)?;
    let mut d = g.scale(-1.0);
    let mut residuals = vec![(2.0 * f).sqrt()];
    let mut functionals = vec![f];
    let mut iterations = 0;
    let mut termination = Termination::MaxIterExceeded;
    loop {
        if (2.0 * f).sqrt() <= tol {
            termination = Termination::Converged;
            break;
        }
        if iterations == max_iter {
            break;
        }
        let gg = g.ac_inner(&g)?;
        let mut slope = g.ac_inner(&d)?;
        if !(slope < 0.0) {
            d = g.scale(-1.0);
            slope = -gg;
        }
        let curvature = jac.apply(&d)?.l2_norm_squared();
        let mut s = if curvature > 0.0 {
            -slope / curvature
        } else {
            1.0
        };
        let s0 = s;
        let accepted = loop {
            let trial = GridFunction::axpy(s, &d, &x)?;
            let ft = functional_f(kernel, &trial, y)?;
            if ft <= f + ARMIJO * s * slope && ft < f {
                break Some(trial);
            }
            s *= 0.5;
            if s < MIN_STEP * s0 {
                break None;
            }
        };
        let Some(xn) = accepted else {
            termination = Termination::LineSearchStalled;
            break;
        };
        x = xn;
        let (fn_, gn, jn) = functional_gradient(kernel, &x, y)?;
        let beta = (gn.ac_inner(&gn.sub(&g)?)? / gg).max(0.0);
        d = GridFunction::axpy(beta, &d, &gn.scale(-1.0))?;
        f = fn_;
        g = gn;
        jac = jn;
        iterations += 1;
        residuals.push((2.0 * f).sqrt());
        functionals.push(f);
    }
    let report = SolveReport {
        method: Method::Gradient,
        iterations,
        residual_history: residuals,
        functional_history: functionals,
        converged: termination == Termination::Converged,
        termination,
        tolerance: tol,
        multistart_spread: None,
        starts: None,
    };
    Ok((x, report))
}

/// Deterministic pseudo-random initial function number `index`: a few sine
/// modes vanishing at `α`, rescaled to an `AC₀²` norm drawn from
/// `(0, MULTISTART_RADIUS]`.
pub fn multistart_initial(grid: Grid, dim: usize, seed: u64, index: usize) -> Result<GridFunction> {
    const MODES: usize = 6;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let coeffs: Vec<f64> = (0..MODES * dim)
        .map(|m| rng.gen_range(-1.0..1.0) / (1 + m / dim) as f64)
        .collect();
    let radius = MULTISTART_RADIUS * (1.0 - rng.gen::<f64>());
    let (alpha, len) = (grid.alpha(), grid.length());
    let x = GridFunction::from_callable(grid, dim, |t, out| {
        let s = (t - alpha) / len;
        out.fill(0.0);
        for m in 0..MODES {
            let mode = ((m as f64 + 0.5) * std::f64::consts::PI * s).sin();
            for (k, o) in out.iter_mut().enumerate() {
                *o += coeffs[m * dim + k] * mode;
            }
        }
    })?;
    let norm = x.ac_norm();
    Ok(if norm > 0.0 {
        x.scale(radius / norm)
    } else {
        x
    })
}

/// Newton from `n_starts` seeded initial functions (see
/// [`multistart_initial`]); the spread is the largest pairwise `AC₀²`
/// distance between converged solutions.
pub fn multistart_uniqueness(
    kernel: &KernelSpec,
    y: &GridFunction,
    n_starts: usize,
    tol: f64,
) -> Result<SolveReport> {
    multistart_uniqueness_seeded(kernel, y, n_starts, tol, 100, MULTISTART_SEED)
}

/// [`multistart_uniqueness`] with an explicit iteration cap and seed.
pub fn multistart_uniqueness_seeded(
    kernel: &KernelSpec,
    y: &GridFunction,
    n_starts: usize,
    tol: f64,
    max_iter: usize,
    seed: u64,
) -> Result<SolveReport> {
    if n_starts < 2 {
        return Err(Error::InvalidArgument(
            "multistart needs at least 2 starts".into(),
        ));
    }
    validate(kernel, y, y, tol)?;
    let runs: Vec<(StartOutcome, Option<GridFunction>)> = (0..n_starts)
        .into_par_iter()
        .map(|index| {
            let start = multistart_initial(*y.grid(), y.dim(), seed, index).and_then(|x0| {
                Ok((
                    x0.ac_norm(),
                    solve_newton(kernel, y, Some(&x0), tol, max_iter)?,
                ))
            });
            match start {
                Ok((initial_norm, (x, report))) => (
                    StartOutcome {
                        index,
                        initial_norm,
                        converged: report.converged,
                        iterations: report.iterations,
                        residual: report.final_residual(),
                        error: report.ensure_converged().err().map(|e| e.to_string()),
                    },
                    report.converged.then_some(x),
                ),
                Err(e) => (
                    StartOutcome {
                        index,
                        initial_norm: f64::NAN,
                        converged: false,
                        iterations: 0,
                        residual: f64::INFINITY,
                        error: Some(e.to_string()),
                    },
                    None,
                ),
            }
        })
        .collect();
    let solutions: Vec<&GridFunction> = runs.iter().filter_map(|(_, x)| x.as_ref()).collect();
    let mut spread = None;
    if solutions.len() >= 2 {
        let mut worst = 0.0f64;
        for i in 0..solutions.len() {
            for j in i + 1..solutions.len() {
                worst = worst.max(solutions[i].ac_distance(solutions[j])?);
            }
        }
        spread = Some(worst);
    }
    let starts: Vec<StartOutcome> = runs.into_iter().map(|(s, _)| s).collect();
    let converged = starts.iter().all(|s| s.converged);
    Ok(SolveReport {
        method: Method::Newton,
        iterations: starts.iter().map(|s| s.iterations).sum(),
        residual_history: starts.iter().map(|s| s.residual).collect(),
        functional_history: starts
            .iter()
            .map(|s| 0.5 * s.residual * s.residual)
            .collect(),
        converged,
        termination: if converged {
            Termination::Converged
        } else {
            Termination::MaxIterExceeded
        },
        tolerance: tol,
        multistart_spread: spread,
        starts: Some(starts),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{example1_kernel, example2_linw_atan, linear_kernel, zero_kernel};

    fn grid(n: usize) -> Grid {
        Grid::new(0.0, 1.0, n).unwrap()
    }

    fn ident(g: Grid) -> GridFunction {
        GridFunction::from_scalar_fn(g, |t| t).unwrap()
    }

    #[test]
    fn newton_zero_kernel_is_immediate() {
        let g = grid(40);
        let y = GridFunction::from_scalar_fn(g, f64::sin).unwrap();
        let (x, report) = solve_newton(&zero_kernel(), &y, None, 1e-12, 10).unwrap();
        assert_eq!(x, y);
        assert_eq!(report.iterations, 0);
        assert!(report.converged);
        let x0 = GridFunction::zero(g, 1);
        let (x, report) = solve_newton(&zero_kernel(), &y, Some(&x0), 1e-12, 10).unwrap();
        assert!(x.ac_distance(&y).unwrap() < 1e-14);
        assert_eq!(report.iterations, 1);
    }

    #[test]
    fn newton_linear_resolvent() {
        let g = grid(500);
        let (x, report) = solve_newton(&linear_kernel(0.5), &ident(g), None, 1e-11, 20).unwrap();
        assert!(report.converged);
        let exact = GridFunction::from_scalar_fn(g, |t| 2.0 * (1.0 - (-t / 2.0).exp())).unwrap();
        assert!((x.at(500)[0] - 0.786939).abs() < 1e-4);
        assert!(x.ac_distance(&exact).unwrap() <= 1e-4 * exact.ac_norm());
    }

    #[test]
    fn newton_example1_round_trip() {
        let g = grid(200);
        let k = example1_kernel(1.0);
        let y = ident(g);
        let (x, report) = solve_newton(&k, &y, None, 1e-10, 30).unwrap();
        assert!(report.converged);
        let back = apply_v(&k, &x).unwrap();
        assert!(back.ac_distance(&y).unwrap() <= 1e-8);
        assert!((back.ac_distance(&y).unwrap() - report.final_residual()).abs() < 1e-15);
        for w in report.residual_history.windows(2) {
            assert!(w[1] < w[0]);
        }
    }

    #[test]
    fn newton_reports_exhausted_iterations() {
        let g = grid(50);
        let x0 = GridFunction::zero(g, 1);
        let (_, report) =
            solve_newton(&example1_kernel(1.0), &ident(g), Some(&x0), 1e-300, 2).unwrap();
        assert!(!report.converged);
        assert_eq!(report.termination, Termination::MaxIterExceeded);
        assert!(matches!(
            report.ensure_converged(),
            Err(Error::MaxIterExceeded { .. })
        ));
        assert!(solve_newton(&zero_kernel(), &ident(g), None, 0.0, 2).is_err());
    }

    #[test]
    fn gradient_matches_newton() {
        let g = grid(200);
        let y = ident(g);
        let x0 = GridFunction::zero(g, 1);
        let (xz, rz) = solve_gradient(&zero_kernel(), &y, Some(&x0), 1e-10, 50).unwrap();
        assert!(rz.converged && rz.iterations <= 2);
        assert!(xz.ac_distance(&y).unwrap() < 1e-9);
        for k in [linear_kernel(0.5), example1_kernel(1.0)] {
            let (xg, rg) = solve_gradient(&k, &y, Some(&x0), 1e-9, 500).unwrap();
            assert!(rg.converged, "{}", k.name());
            let (xn, _) = solve_newton(&k, &y, None, 1e-11, 30).unwrap();
            assert!(xg.ac_distance(&xn).unwrap() < 1e-4, "{}", k.name());
        }
    }

    #[test]
    fn multistart_spreads() {
        let g = grid(100);
        let y = ident(g);
        let zero = multistart_uniqueness(&zero_kernel(), &y, 3, 1e-10).unwrap();
        assert!(zero.multistart_spread.unwrap() < 1e-12);
        for k in [linear_kernel(0.5), example1_kernel(1.0)] {
            let report = multistart_uniqueness(&k, &y, 5, 1e-10).unwrap();
            assert!(report.converged, "{}", k.name());
            assert!(report.multistart_spread.unwrap() <= 1e-6);
        }
        let g9 = Grid::new(0.0, 0.9, 100).unwrap();
        let report =
            multistart_uniqueness(&example2_linw_atan(0.9).unwrap(), &ident(g9), 5, 1e-10).unwrap();
        assert!(report.multistart_spread.unwrap() <= 1e-6);
        assert!(multistart_uniqueness(&zero_kernel(), &y, 1, 1e-10).is_err());
    }

    #[test]
    fn multistart_initials_are_seeded_and_bounded() {
        let g = grid(64);
        for i in 0..20 {
            let a = multistart_initial(g, 2, 7, i).unwrap();
            let b = multistart_initial(g, 2, 7, i).unwrap();
            assert_eq!(a, b);
            let n = a.ac_norm();
            assert!(n > 0.0 && n <= MULTISTART_RADIUS * (1.0 + 1e-12));
        }
        assert_ne!(
            multistart_initial(g, 1, 7, 0).unwrap(),
            multistart_initial(g, 1, 7, 1).unwrap()
        );
    }
}
