//! Numerical checks of the two sufficient conditions for well-posedness:
//! a kernel that vanishes on the diagonal with a small `c₀`, or a kernel with
//! a small combined growth modulus `c̃`.
//!
//! Integrals over the triangle `P_Δ` use the product midpoint rule of the
//! operator module: outer midpoints `mᵢ`, inner midpoints `m_j < mᵢ` plus the
//! quarter point of the cell containing `mᵢ`. Each check repeats the
//! quadrature on a grid with half as many cells and subtracts the difference
//! from the margin, so a check only passes when the inequality survives the
//! discretisation error. Failing a check means "not certified", nothing more.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::function_space::{Grid, PREDICATE_SLACK};
use crate::kernel::{KernelSpec, TriangleFn};

/// Side of the `(t, x)` lattice used to sample `v(t, t, x)`.
pub const DIAGONAL_LATTICE: usize = 50;
/// The lattice spans `x ∈ [−DIAGONAL_X_RANGE, DIAGONAL_X_RANGE]`.
pub const DIAGONAL_X_RANGE: f64 = 10.0;
/// Largest `|v(t, t, x)|` still counted as zero.
pub const DIAGONAL_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Variant {
    A3,
    A4,
}

#[derive(Debug, Clone, Serialize)]
pub struct HypothesisReport {
    pub variant: Variant,
    /// What `norm_value` measures.
    pub metric: String,
    pub diagonal_zero_ok: bool,
    pub norm_value: f64,
    pub threshold: f64,
    /// `threshold − norm_value − quadrature_error`.
    pub margin: f64,
    pub passed: bool,
    /// Kernel and bound evaluations spent on the check.
    pub samples_used: usize,
    /// `|Q_N − Q_{N/2}|` for the quadrature behind `norm_value`.
    pub quadrature_error: f64,
}

impl HypothesisReport {
    fn new(
        variant: Variant,
        metric: &str,
        diagonal_zero_ok: bool,
        norm_value: f64,
        threshold: f64,
        quadrature_error: f64,
        samples_used: usize,
    ) -> Self {
        let margin = threshold - norm_value - quadrature_error;
        let passed = margin > PREDICATE_SLACK * threshold.abs().max(1.0)
            && (variant == Variant::A4 || diagonal_zero_ok);
        Self {
            variant,
            metric: metric.to_string(),
            diagonal_zero_ok,
            norm_value,
            threshold,
            margin,
            passed,
            samples_used,
            quadrature_error,
        }
    }

    pub fn verdict(&self) -> &'static str {
        if self.passed {
            "certified"
        } else {
            "not certified"
        }
    }
}

/// `∫_α^{mᵢ} f(mᵢ, τ) dτ` for every cell midpoint `mᵢ`.
fn inner_integrals(grid: &Grid, f: &(dyn Fn(f64, f64) -> f64 + Sync)) -> Vec<f64> {
    let step = grid.step();
    (0..grid.n_cells())
        .map(|i| {
            let t = grid.midpoint(i);
            let below: f64 = (0..i).map(|j| f(t, grid.midpoint(j))).sum();
            step * below + 0.5 * step * f(t, grid.node(i) + 0.25 * step)
        })
        .collect()
}

/// `∬_{P_Δ} f` and the same with half the cells.
fn triangle_integral(
    grid: &Grid,
    f: &(dyn Fn(f64, f64) -> f64 + Sync),
) -> Result<(f64, f64, usize)> {
    let coarse = grid.with_cells((grid.n_cells() / 2).max(1))?;
    let full = |g: &Grid| inner_integrals(g, f).iter().sum::<f64>() * g.step();
    let n = grid.n_cells();
    let m = coarse.n_cells();
    Ok((full(grid), full(&coarse), n * (n + 1) / 2 + m * (m + 1) / 2))
}

fn check_domain(kernel: &KernelSpec, grid: &Grid) -> Result<()> {
    if !kernel.domain().covers(grid) {
        return Err(Error::GridOutsideDomain {
            alpha: grid.alpha(),
            beta: grid.beta(),
        });
    }
    Ok(())
}

/// Samples `v(t, t, x)` on a `DIAGONAL_LATTICE²` lattice of
/// `[α, β] × [−DIAGONAL_X_RANGE, DIAGONAL_X_RANGE]` (every component of `x`
/// set to the lattice value). Returns whether all samples vanish and the
/// sample count.
pub fn sample_diagonal(kernel: &KernelSpec, grid: &Grid) -> (bool, usize) {
    let n = kernel.dim();
    let mut x = vec![0.0; n];
    let mut out = vec![0.0; n];
    let last = (DIAGONAL_LATTICE - 1) as f64;
    let mut ok = true;
    for i in 0..DIAGONAL_LATTICE {
        let t = grid.alpha() + grid.length() * i as f64 / last;
        for j in 0..DIAGONAL_LATTICE {
            x.fill(DIAGONAL_X_RANGE * (2.0 * j as f64 / last - 1.0));
            kernel.v(t, t, &x, &mut out);
            ok &= out.iter().all(|v| v.abs() <= DIAGONAL_TOLERANCE);
        }
    }
    (ok, DIAGONAL_LATTICE * DIAGONAL_LATTICE)
}

/// Vanishing diagonal and `‖c₀‖_{L²(P_Δ)} < √2 / (2(β−α))`.
pub fn check_a3(kernel: &KernelSpec, grid: &Grid) -> Result<HypothesisReport> {
    check_domain(kernel, grid)?;
    let c0 = kernel
        .bounds()
        .c0
        .clone()
        .ok_or(Error::MissingBounds("c0"))?;
    let (diag_ok, diag_samples) = sample_diagonal(kernel, grid);
    let sq = |t: f64, tau: f64| c0(t, tau).powi(2);
    let (fine, coarse, quad_samples) = triangle_integral(grid, &sq)?;
    let norm = fine.sqrt();
    Ok(HypothesisReport::new(
        Variant::A3,
        "L2 norm of c0 over the triangle",
        diag_ok,
        norm,
        2f64.sqrt() / (2.0 * grid.length()),
        (norm - coarse.sqrt()).abs(),
        diag_samples + quad_samples,
    ))
}

/// `c̃` at the cell midpoints of `grid`.
fn c_tilde(kernel: &KernelSpec, grid: &Grid) -> Result<(Vec<f64>, usize)> {
    let b = kernel.bounds();
    let c1 = b.c1.clone().ok_or(Error::MissingBounds("c1"))?;
    let c2: TriangleFn = b.c2.clone().ok_or(Error::MissingBounds("c2"))?;
    let len = grid.length();
    let sq = |t: f64, tau: f64| c2(t, tau).powi(2);
    let inner = inner_integrals(grid, &sq);
    let values = inner
        .iter()
        .enumerate()
        .map(|(i, &q)| {
            let t = grid.midpoint(i);
            (t - grid.alpha()).sqrt() * c1(t) + std::f64::consts::FRAC_1_SQRT_2 * len * q.sqrt()
        })
        .collect();
    let n = grid.n_cells();
    Ok((values, n * (n + 1) / 2 + n))
}

/// `d̃(t) = d₁(t) + ∫_α^t d₂(t, τ) dτ` at the cell midpoints.
fn d_tilde(kernel: &KernelSpec, grid: &Grid) -> Result<Vec<f64>> {
    let b = kernel.bounds();
    let d1 = b.d1.clone().ok_or(Error::MissingBounds("d1"))?;
    let d2 = b.d2.clone().ok_or(Error::MissingBounds("d2"))?;
    let f = |t: f64, tau: f64| d2(t, tau);
    Ok(inner_integrals(grid, &f)
        .iter()
        .enumerate()
        .map(|(i, q)| d1(grid.midpoint(i)) + q)
        .collect())
}

fn l2_of_midpoint_samples(values: &[f64], grid: &Grid) -> f64 {
    (values.iter().map(|v| v * v).sum::<f64>() * grid.step()).sqrt()
}

/// `‖c̃‖_{L²[α,β]} < ½` with
/// `c̃(t) = (t−α)^{1/2} c₁(t) + 2^{−1/2}(β−α)(∫_α^t c₂²(t,τ) dτ)^{1/2}`.
pub fn check_a4(kernel: &KernelSpec, grid: &Grid) -> Result<HypothesisReport> {
    check_domain(kernel, grid)?;
    let coarse = grid.with_cells((grid.n_cells() / 2).max(1))?;
    let (fine_vals, s1) = c_tilde(kernel, grid)?;
    let (coarse_vals, s2) = c_tilde(kernel, &coarse)?;
    let norm = l2_of_midpoint_samples(&fine_vals, grid);
    let err = (norm - l2_of_midpoint_samples(&coarse_vals, &coarse)).abs();
    let (diag_ok, _) = sample_diagonal(kernel, grid);
    Ok(HypothesisReport::new(
        Variant::A4,
        "L2 norm of c-tilde on the interval",
        diag_ok,
        norm,
        0.5,
        err,
        s1 + s2,
    ))
}

/// `‖c̃‖` and `‖d̃‖`, the constants of the lower bound
/// `F₀(x) ≥ (½ − ‖c̃‖)‖x‖² − ‖d̃‖‖x‖`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoercivityBound {
    pub c_tilde: f64,
    pub d_tilde: f64,
}

impl CoercivityBound {
    pub fn lower_bound(&self, norm: f64) -> f64 {
        (0.5 - self.c_tilde) * norm * norm - self.d_tilde * norm
    }
}

pub fn coercivity_bound(kernel: &KernelSpec, grid: &Grid) -> Result<CoercivityBound> {
    check_domain(kernel, grid)?;
    let (c, _) = c_tilde(kernel, grid)?;
    let d = d_tilde(kernel, grid)?;
    Ok(CoercivityBound {
        c_tilde: l2_of_midpoint_samples(&c, grid),
        d_tilde: l2_of_midpoint_samples(&d, grid),
    })
}

/// Closed form for `v = ā(t−τ)^{2/3} ln(1 + 2(t−τ)²x²)` on `[0, 1]`:
/// `‖c₀‖² = 4ā²/35` against the threshold `√2/2`, i.e. `ā² < 35/8`.
pub fn check_example1(a_bar: f64) -> HypothesisReport {
    let norm = (4.0 / 35.0f64).sqrt() * a_bar.abs();
    HypothesisReport::new(
        Variant::A3,
        "L2 norm of c0 over the triangle (closed form)",
        true,
        norm,
        std::f64::consts::FRAC_1_SQRT_2,
        0.0,
        0,
    )
}

/// Feedback kernel `w(t−τ) z(x)` with `|z(x)| ≤ A|x| + B` on `[0, T]`:
/// `∬_{0≤τ≤t≤T} |w′(t−τ)|² < 1/(2A²T²)`.
///
/// `norm_value` holds the double integral itself. The quadrature uses
/// `grid.n_cells()` cells on `[0, T]`.
pub fn check_example2(
    w_prime: &(dyn Fn(f64) -> f64 + Sync),
    growth_a: f64,
    horizon: f64,
    grid: &Grid,
) -> Result<HypothesisReport> {
    if !(growth_a > 0.0 && horizon > 0.0) {
        return Err(Error::InvalidArgument(
            "check_example2 needs A > 0 and T > 0".into(),
        ));
    }
    let g = Grid::new(0.0, horizon, grid.n_cells())?;
    let sq = |t: f64, tau: f64| w_prime(t - tau).powi(2);
    let (fine, coarse, samples) = triangle_integral(&g, &sq)?;
    Ok(HypothesisReport::new(
        Variant::A3,
        "double integral of |w'(t-tau)|^2 over the triangle",
        true,
        fine,
        1.0 / (2.0 * growth_a * growth_a * horizon * horizon),
        (fine - coarse).abs(),
        samples,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{example1_kernel, example2_linw_atan, linear_kernel, zero_kernel};
    use approx::assert_relative_eq;

    fn grid(n: usize) -> Grid {
        Grid::new(0.0, 1.0, n).unwrap()
    }

    #[test]
    fn a3_example1_constant() {
        let r = check_a3(&example1_kernel(1.0), &grid(200)).unwrap();
        assert_relative_eq!(r.norm_value.powi(2), 4.0 / 35.0, max_relative = 1e-3);
        assert_relative_eq!(r.threshold.powi(2), 0.5, max_relative = 1e-15);
        assert!(r.diagonal_zero_ok && r.passed);
        assert_eq!(r.variant, Variant::A3);
        assert!(r.quadrature_error > 0.0 && r.quadrature_error < 1e-3);
    }

    #[test]
    fn a3_quadrature_converges() {
        let exact = (4.0f64 / 35.0).sqrt();
        let errs: Vec<f64> = [50, 100, 200]
            .iter()
            .map(|&n| {
                (check_a3(&example1_kernel(1.0), &grid(n))
                    .unwrap()
                    .norm_value
                    - exact)
                    .abs()
            })
            .collect();
        assert!(errs[1] < errs[0] && errs[2] < errs[1]);
        // at least the O(Δ^{2/3}) rate
        assert!(errs[2] / errs[1] < 2f64.powf(-2.0 / 3.0));
    }

    #[test]
    fn a3_boundary_straddle_matches_closed_form() {
        let g = grid(200);
        for a2 in [1.0f64, 4.0, 4.374, 4.376] {
            let a = a2.sqrt();
            let numeric = check_a3(&example1_kernel(a), &g).unwrap();
            let closed = check_example1(a);
            assert_eq!(numeric.passed, closed.passed, "a^2 = {a2}");
            assert_eq!(closed.passed, a2 < 35.0 / 8.0);
        }
        let edge = (35.0f64 / 8.0).sqrt();
        assert!(!check_example1(edge).passed);
        assert!(!check_a3(&example1_kernel(edge), &g).unwrap().passed);
    }

    #[test]
    fn a3_other_kernels() {
        let g = grid(64);
        let z = check_a3(&zero_kernel(), &g).unwrap();
        assert_eq!(z.norm_value, 0.0);
        assert!(z.passed);
        assert!(matches!(
            check_a3(&linear_kernel(0.5), &g),
            Err(Error::MissingBounds("c0"))
        ));
        // example2 on [0, 0.9]: ‖c₀‖² = T²/2
        let g9 = Grid::new(0.0, 0.9, 100).unwrap();
        let e2 = check_a3(&example2_linw_atan(0.9).unwrap(), &g9).unwrap();
        assert_relative_eq!(e2.norm_value.powi(2), 0.405, max_relative = 1e-12);
        assert!(e2.passed);
        // a kernel that does not vanish on the diagonal fails A3a
        let mut k = linear_kernel(0.5);
        k = k.with_bounds(crate::kernel::GrowthBounds::vanishing_diagonal(
            std::sync::Arc::new(|_, _| 0.0),
            std::sync::Arc::new(|_, _| 0.0),
        ));
        let r = check_a3(&k, &g).unwrap();
        assert!(!r.diagonal_zero_ok && !r.passed && r.margin > 0.0);
    }

    #[test]
    fn a4_examples() {
        let g = grid(100);
        let r = check_a4(&linear_kernel(0.5), &g).unwrap();
        assert_relative_eq!(r.norm_value.powi(2), 0.125, max_relative = 1e-12);
        assert!(r.passed);
        let big = check_a4(&linear_kernel(2f64.sqrt()), &g).unwrap();
        assert_relative_eq!(big.norm_value, 1.0, max_relative = 1e-12);
        assert!(!big.passed);
        let z = check_a4(&zero_kernel(), &g).unwrap();
        assert_eq!(z.norm_value, 0.0);
        assert!(z.passed);
        // example1: ‖c̃‖² = 2ā²/35
        let e1 = check_a4(&example1_kernel(1.0), &grid(400)).unwrap();
        assert_relative_eq!(e1.norm_value.powi(2), 2.0 / 35.0, max_relative = 2e-3);
    }

    #[test]
    fn coercivity_constants() {
        let b = coercivity_bound(&linear_kernel(0.5), &grid(100)).unwrap();
        assert_relative_eq!(b.c_tilde, 0.125f64.sqrt(), max_relative = 1e-12);
        assert_eq!(b.d_tilde, 0.0);
        // example1: d̃(t) = 3t^{2/3}, ‖d̃‖² = 27/7
        let e = coercivity_bound(&example1_kernel(1.0), &grid(400)).unwrap();
        assert_relative_eq!(e.d_tilde.powi(2), 27.0 / 7.0, max_relative = 1e-2);
        assert_eq!(b.lower_bound(0.0), 0.0);
    }

    #[test]
    fn example1_closed_form() {
        let r = check_example1(1.0);
        assert_relative_eq!(r.norm_value.powi(2), 4.0 / 35.0, max_relative = 1e-15);
        assert!(r.passed);
        let zero = check_example1(0.0);
        assert!(zero.passed);
        assert_eq!(zero.margin, zero.threshold);
        assert!(!check_example1(3.0).passed);
        // homogeneity in ā
        assert_relative_eq!(
            check_example1(-2.5).norm_value,
            2.5 * r.norm_value,
            max_relative = 1e-15
        );
    }

    #[test]
    fn example2_closed_form() {
        let one = |_: f64| 1.0;
        let r = check_example2(&one, 1.0, 0.9, &grid(500)).unwrap();
        assert!((r.norm_value - 0.405).abs() < 1e-6);
        assert!((r.threshold - 1.0 / 1.62).abs() < 1e-6);
        assert!(r.passed);
        let edge = check_example2(&one, 1.0, 1.0, &grid(500)).unwrap();
        assert!((edge.norm_value - 0.5).abs() < 1e-6);
        assert!(!edge.passed);
        let flat = check_example2(&|_| 0.0, 1.0, 0.9, &grid(10)).unwrap();
        assert_eq!(flat.norm_value, 0.0);
        assert!(flat.passed);
        assert!(check_example2(&one, 0.0, 1.0, &grid(10)).is_err());
        assert_eq!(r.verdict(), "certified");
        assert_eq!(edge.verdict(), "not certified");
    }
}
