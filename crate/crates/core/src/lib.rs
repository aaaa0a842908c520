//! Nonlinear Volterra integral equations of the second kind,
//! `x(t) + ∫_α^t v(t, τ, x(τ)) dτ = a(t)`, posed on the space `AC₀²` of
//! absolutely continuous functions with `x(α) = 0` and square-integrable
//! derivative.
//!
//! Functions are piecewise linear on a uniform grid ([`GridFunction`]).
//! Kernels bundle `v` with its partial derivatives and declared growth
//! bounds ([`KernelSpec`]). On top of those sit the operator and its
//! derivative ([`operator`]), the linearised equation ([`linear_solver`]),
//! the nonlinear solvers ([`nonlinear_solver`]), numerical checks of the
//! well-posedness conditions ([`hypothesis`]) and the derivative of the
//! solution map ([`sensitivity`]).

// `!(x > 0.0)` style checks are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod function_space;
pub mod hypothesis;
pub mod kernel;
pub mod linear_solver;
pub mod nonlinear_solver;
pub mod operator;
pub mod sensitivity;

pub use error::{Error, Result};
pub use function_space::{Grid, GridFunction, SampledTable};
pub use hypothesis::{check_a3, check_a4, check_example1, check_example2, HypothesisReport};
pub use kernel::{
    example1_kernel, example2_kernel, example2_linw_atan, linear_kernel, zero_kernel, KernelSpec,
};
pub use linear_solver::{collocation_solve, neumann_solve, NeumannReport, Termination};
pub use nonlinear_solver::{multistart_uniqueness, solve_gradient, solve_newton, SolveReport};
pub use operator::{apply_v, frechet_apply, functional_f};
pub use sensitivity::{directional_sensitivity, fd_sensitivity_check, robustness_modulus};
