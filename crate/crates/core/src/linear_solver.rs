//! The linearised equation `h + Th = g` with
//! `(Tg)(t) = ∫_α^t v_x(t, τ, x₀(τ)) g(τ) dτ`.
//!
//! [`neumann_solve`] runs the successive approximations `h_{k+1} = g − T h_k`
//! and reports the a-priori factorial tail bound next to the discrete
//! residual. [`collocation_solve`] solves the same discrete system directly by
//! forward substitution and serves as an independent check.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::function_space::{Grid, GridFunction};
use crate::kernel::KernelSpec;
use crate::operator::{check_kernel, check_pair, matvec_add, midpoint_values};

/// Safety factor applied to the sampled maximum in [`estimate_l_rho`].
pub const L_RHO_SAFETY: f64 = 1.1;

/// Default number of low-discrepancy samples used for `l_ρ`.
pub const L_RHO_SAMPLES: usize = 4096;

/// Discrete `T` at a fixed `x₀`: the blocks `v_x(tᵢ, m_j, x₀(m_j))` for
/// `j < i`, evaluated once.
#[derive(Debug, Clone)]
pub struct Linearization {
    grid: Grid,
    dim: usize,
    /// Row `i` (node `tᵢ`) holds `i` blocks starting at block `i(i−1)/2`.
    blocks: Vec<f64>,
}

impl Linearization {
    pub fn new(kernel: &KernelSpec, x0: &GridFunction) -> Result<Self> {
        check_kernel(kernel, x0)?;
        let grid = *x0.grid();
        let n = x0.dim();
        let nn = n * n;
        let nodes = grid.n_nodes();
        let xm = midpoint_values(x0);
        let mut blocks = vec![0.0; nodes * (nodes - 1) / 2 * nn];
        let mut rows: Vec<&mut [f64]> = Vec::with_capacity(nodes);
        let mut rest = blocks.as_mut_slice();
        for i in 0..nodes {
            let (row, tail) = std::mem::take(&mut rest).split_at_mut(i * nn);
            rows.push(row);
            rest = tail;
        }
        rows.into_par_iter().enumerate().for_each(|(i, row)| {
            let t = grid.node(i);
            for j in 0..i {
                kernel.vx(
                    t,
                    grid.midpoint(j),
                    &xm[j * n..(j + 1) * n],
                    &mut row[j * nn..(j + 1) * nn],
                );
            }
        });
        Ok(Self {
            grid,
            dim: n,
            blocks,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    fn block(&self, i: usize, j: usize) -> &[f64] {
        let nn = self.dim * self.dim;
        let start = (i * (i - 1) / 2 + j) * nn;
        &self.blocks[start..start + nn]
    }

    /// `Tg` at the nodes: `Δ Σ_{j<i} v_x(tᵢ, m_j, x₀(m_j)) g(m_j)`.
    pub fn apply(&self, g: &GridFunction) -> Result<GridFunction> {
        if g.grid() != &self.grid {
            return Err(Error::GridMismatch);
        }
        if g.dim() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                found: g.dim(),
            });
        }
        let n = self.dim;
        let step = self.grid.step();
        let gm = midpoint_values(g);
        let mut out = vec![0.0; self.grid.n_nodes() * n];
        out.par_chunks_mut(n)
            .enumerate()
            .skip(1)
            .for_each(|(i, row)| {
                for j in 0..i {
                    matvec_add(self.block(i, j), &gm[j * n..(j + 1) * n], step, row);
                }
            });
        GridFunction::from_values(self.grid, n, out)
    }

    /// `‖h + Th − g‖_{AC₀²}`.
    pub fn residual(&self, h: &GridFunction, g: &GridFunction) -> Result<f64> {
        Ok(h.add(&self.apply(h)?)?.sub(g)?.ac_norm())
    }
}

/// `(Tg)(t) = ∫_α^t v_x(t, τ, x₀(τ)) g(τ) dτ` by midpoint product quadrature.
pub fn apply_t(kernel: &KernelSpec, x0: &GridFunction, g: &GridFunction) -> Result<GridFunction> {
    check_pair(x0, g)?;
    Linearization::new(kernel, x0)?.apply(g)
}

/// Constants of the factorial bound `‖Tᵏg‖ ≤ D·A^{k−1}/(k−1)!`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NeumannBound {
    /// Local bound on the linearised kernel over `P_Δ × B_ρ`.
    pub l_rho: f64,
    /// `sup |g|`.
    #[serde(rename = "M")]
    pub m: f64,
    /// `(β−α)^{1/2}(1 + β − α)`.
    #[serde(rename = "C")]
    pub c: f64,
    /// `C·M·l_ρ`.
    #[serde(rename = "D")]
    pub d: f64,
    /// `l_ρ(β−α)`.
    #[serde(rename = "A")]
    pub a: f64,
}

impl NeumannBound {
    pub fn new(l_rho: f64, m: f64, interval_length: f64) -> Self {
        let c = interval_length.sqrt() * (1.0 + interval_length);
        Self {
            l_rho,
            m,
            c,
            d: c * m * l_rho,
            a: l_rho * interval_length,
        }
    }
}

/// `D·A^{k−1}/(k−1)!`, the bound on the AC₀² norm of the `k`-th Neumann term.
pub fn iterate_bound(k: usize, bound: &NeumannBound) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidArgument("iterate_bound needs k >= 1".into()));
    }
    let mut term = bound.d;
    for m in 1..k {
        term *= bound.a / m as f64;
        if term == 0.0 {
            break;
        }
    }
    Ok(term)
}

/// `Σ_{j ≥ k} D·A^{j−1}/(j−1)!`: bounds the distance from the iterate that
/// sums `T⁰g … T^{k−1}g` to the exact solution.
pub fn tail_bound(k: usize, bound: &NeumannBound) -> Result<f64> {
    let mut term = iterate_bound(k, bound)?;
    let mut sum = 0.0;
    let mut j = k;
    while term > 0.0 {
        sum += term;
        // past the peak of the series, stop once the remaining terms cannot matter
        if (j as f64) > bound.a && term <= f64::EPSILON * 1e-3 * sum {
            break;
        }
        term *= bound.a / j as f64;
        j += 1;
        if j > k + 100_000 {
            break;
        }
    }
    Ok(sum)
}

/// Outcome of an iterative solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIterExceeded,
    LineSearchStalled,
}

#[derive(Debug, Clone, Serialize)]
pub struct NeumannReport {
    pub iterations: usize,
    pub residual_ac: f64,
    pub tail_bound: f64,
    pub converged: bool,
    pub termination: Termination,
    pub tolerance: f64,
    pub bound: NeumannBound,
    pub residual_history: Vec<f64>,
}

impl NeumannReport {
    /// Turns a non-converged report into [`Error::MaxIterExceeded`].
    pub fn ensure_converged(&self) -> Result<()> {
        if self.converged {
            Ok(())
        } else {
            Err(Error::MaxIterExceeded {
                iterations: self.iterations,
                residual: self.residual_ac,
            })
        }
    }
}

/// Successive approximations `h₀ = 0`, `h_{k+1} = g − T h_k`.
///
/// Stops as soon as `‖h_k + T h_k − g‖_{AC₀²} ≤ tol`; the a-priori tail bound
/// is reported alongside. `l_ρ` is estimated with `ρ = sup|x₀| + 1` and `M`
/// is `sup|g|`. Running out of iterations is not an error here: the report
/// comes back with `converged = false` (see [`NeumannReport::ensure_converged`]).
pub fn neumann_solve(
    kernel: &KernelSpec,
    x0: &GridFunction,
    g: &GridFunction,
    tol: f64,
    max_iter: usize,
) -> Result<(GridFunction, NeumannReport)> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument("tolerance must be positive".into()));
    }
    check_pair(x0, g)?;
    let lin = Linearization::new(kernel, x0)?;
    let l_rho = estimate_l_rho(kernel, x0.sup_norm() + 1.0, L_RHO_SAMPLES)?;
    let bound = NeumannBound::new(l_rho, g.sup_norm(), g.grid().length());

    let mut h = GridFunction::zero(*g.grid(), g.dim());
    let mut th = h.clone();
    let mut history = Vec::new();
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        h = g.sub(&th)?;
        th = lin.apply(&h)?;
        residual = h.add(&th)?.sub(g)?.ac_norm();
        history.push(residual);
        if residual <= tol {
            break;
        }
    }
    let converged = residual <= tol;
    let report = NeumannReport {
        iterations,
        residual_ac: residual,
        tail_bound: tail_bound(iterations.max(1), &bound)?,
        converged,
        termination: if converged {
            Termination::Converged
        } else {
            Termination::MaxIterExceeded
        },
        tolerance: tol,
        bound,
        residual_history: history,
    };
    Ok((h, report))
}

/// Direct solve of the discrete system
/// `h(tᵢ) + Δ Σ_{j<i} v_x(tᵢ, m_j, x₀(m_j)) h(m_j) = g(tᵢ)`,
/// `h(m_j) = ½(h(t_j) + h(t_{j+1}))`, by forward substitution over `i`.
pub fn collocation_solve(
    kernel: &KernelSpec,
    x0: &GridFunction,
    g: &GridFunction,
) -> Result<GridFunction> {
    check_pair(x0, g)?;
    let lin = Linearization::new(kernel, x0)?;
    collocation_solve_with(&lin, g)
}

/// [`collocation_solve`] reusing an assembled [`Linearization`].
pub fn collocation_solve_with(lin: &Linearization, g: &GridFunction) -> Result<GridFunction> {
    if g.grid() != &lin.grid {
        return Err(Error::GridMismatch);
    }
    let n = lin.dim;
    let nn = n * n;
    let grid = lin.grid;
    let step = grid.step();
    let nodes = grid.n_nodes();
    let mut h = vec![0.0; nodes * n];
    let mut hm = vec![0.0; grid.n_cells() * n];
    let mut rhs = vec![0.0; n];
    for i in 1..nodes {
        rhs.copy_from_slice(g.at(i));
        let mut acc = vec![0.0; n];
        for j in 0..i - 1 {
            matvec_add(lin.block(i, j), &hm[j * n..(j + 1) * n], step, &mut acc);
        }
        // the last cell couples to the unknown h(tᵢ)
        let last = lin.block(i, i - 1);
        matvec_add(last, &h[(i - 1) * n..i * n], 0.5 * step, &mut acc);
        for k in 0..n {
            rhs[k] -= acc[k];
        }
        let solved =
            solve_block(last, 0.5 * step, &rhs).ok_or(Error::SingularBlock { index: i })?;
        h[i * n..(i + 1) * n].copy_from_slice(&solved);
        for k in 0..n {
            hm[(i - 1) * n + k] = 0.5 * (h[(i - 1) * n + k] + h[i * n + k]);
        }
    }
    debug_assert_eq!(lin.blocks.len() % nn.max(1), 0);
    GridFunction::from_values(grid, n, h)
}

/// Solves `(I + s·B) u = rhs`.
fn solve_block(b: &[f64], s: f64, rhs: &[f64]) -> Option<Vec<f64>> {
    const PIVOT_FLOOR: f64 = 1e-12;
    let n = rhs.len();
    if n == 1 {
        let d = 1.0 + s * b[0];
        return (d.abs() > PIVOT_FLOOR && d.is_finite()).then(|| vec![rhs[0] / d]);
    }
    let m = DMatrix::from_fn(
        n,
        n,
        |r, c| if r == c { 1.0 } else { 0.0 } + s * b[r * n + c],
    );
    let lu = m.lu();
    let u = lu.u();
    if (0..n).any(|k| !(u[(k, k)].abs() > PIVOT_FLOOR)) {
        return None;
    }
    lu.solve(&nalgebra::DVector::from_column_slice(rhs))
        .map(|v| v.as_slice().to_vec())
}

/// Radical inverse of `i` in `base` (van der Corput).
fn radical_inverse(mut i: usize, base: usize) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    r
}

const PRIMES: [usize; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

/// Sampled `l_ρ`: the largest matrix norm of `v_x` and `v_tx` over a Halton
/// sample of `P_Δ × B_ρ`, times [`L_RHO_SAFETY`].
///
/// Both partials are included because the factorial bound controls the
/// time derivative of `Tᵏg`, which involves `v_tx` under the integral.
/// Matrix norms are Frobenius, an upper bound for the spectral norm.
pub fn estimate_l_rho(kernel: &KernelSpec, rho: f64, samples: usize) -> Result<f64> {
    if !(rho > 0.0) || samples == 0 {
        return Err(Error::InvalidArgument(
            "estimate_l_rho needs rho > 0 and samples >= 1".into(),
        ));
    }
    let n = kernel.dim();
    if n + 2 > PRIMES.len() {
        return Err(Error::InvalidArgument(format!(
            "l_rho sampling supports dimension up to {}",
            PRIMES.len() - 2
        )));
    }
    let dom = kernel.domain();
    let len = dom.beta - dom.alpha;
    let mut x = vec![0.0; n];
    let mut buf = vec![0.0; n * n];
    let mut best = 0.0f64;
    let mut probe = |t: f64, tau: f64, x: &[f64], buf: &mut [f64]| {
        kernel.vx(t, tau, x, buf);
        let a = frobenius(buf);
        kernel.vtx(t, tau, x, buf);
        let b = frobenius(buf);
        best = best.max(a).max(b);
    };
    // corners of the triangle and of the ball
    for &(t, tau) in &[
        (dom.beta, dom.alpha),
        (dom.beta, dom.beta),
        (dom.alpha, dom.alpha),
    ] {
        for sign in [-1.0, 0.0, 1.0] {
            x.fill(sign * rho / (n as f64).sqrt());
            probe(t, tau, &x, &mut buf);
        }
    }
    for s in 1..=samples {
        let u1 = radical_inverse(s, PRIMES[0]);
        let u2 = radical_inverse(s, PRIMES[1]);
        let (hi, lo) = if u1 >= u2 { (u1, u2) } else { (u2, u1) };
        let (t, tau) = (dom.alpha + hi * len, dom.alpha + lo * len);
        for k in 0..n {
            x[k] = rho * (2.0 * radical_inverse(s, PRIMES[k + 2]) - 1.0);
        }
        let r = crate::function_space::norm(&x);
        if r > rho {
            x.iter_mut().for_each(|v| *v *= rho / r);
        }
        probe(t, tau, &x, &mut buf);
    }
    if !best.is_finite() {
        return Err(Error::KernelContract(
            "linearised kernel is not locally bounded on the sample".into(),
        ));
    }
    Ok(L_RHO_SAFETY * best)
}

fn frobenius(m: &[f64]) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}
