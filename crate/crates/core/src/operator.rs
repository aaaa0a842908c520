//! The Volterra operator `V(x)(t) = x(t) + ∫_α^t v(t, τ, x(τ)) dτ`, its time
//! derivative, its Fréchet derivative and the least-squares functional
//! `F_y(x) = ½‖V(x) − y‖²`.
//!
//! Every inner integral over `[α, t]` is discretised by the midpoint rule on
//! the grid cells lying below `t`. At a node `tᵢ` that is exactly the `i`
//! cell midpoints; at a cell midpoint `mᵢ` the half cell `[tᵢ, mᵢ]` adds one
//! more point at `tᵢ + Δ/4` with weight `Δ/2`. No integrand is ever
//! evaluated at `τ = t`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::function_space::{Grid, GridFunction};
use crate::kernel::KernelSpec;
use crate::linear_solver::Linearization;

/// Per-cell samples (one vector in ℝⁿ per grid cell), e.g. derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct CellField {
    pub grid: Grid,
    pub dim: usize,
    /// Cell-major values, `values[i * dim + k]`.
    pub values: Vec<f64>,
}

impl CellField {
    pub fn at(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// `∫ |f|²` with `f` piecewise constant on the cells.
    pub fn l2_norm_squared(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>() * self.grid.step()
    }
}

pub(crate) fn check_kernel(kernel: &KernelSpec, x: &GridFunction) -> Result<()> {
    if kernel.dim() != x.dim() {
        return Err(Error::DimMismatch {
            expected: kernel.dim(),
            found: x.dim(),
        });
    }
    let grid = x.grid();
    if !kernel.domain().covers(grid) {
        return Err(Error::GridOutsideDomain {
            alpha: grid.alpha(),
            beta: grid.beta(),
        });
    }
    Ok(())
}

pub(crate) fn check_pair(a: &GridFunction, b: &GridFunction) -> Result<()> {
    if a.grid() != b.grid() {
        return Err(Error::GridMismatch);
    }
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    Ok(())
}

/// Interpolated values at all cell midpoints, cell-major.
pub(crate) fn midpoint_values(x: &GridFunction) -> Vec<f64> {
    let n = x.dim();
    let mut out = vec![0.0; x.grid().n_cells() * n];
    for (i, chunk) in out.chunks_exact_mut(n).enumerate() {
        x.midpoint_value(i, chunk);
    }
    out
}

/// Interpolated values at the quarter points `tᵢ + Δ/4`, cell-major.
fn quarter_values(x: &GridFunction) -> Vec<f64> {
    let n = x.dim();
    let mut out = vec![0.0; x.grid().n_cells() * n];
    for (i, chunk) in out.chunks_exact_mut(n).enumerate() {
        x.cell_value(i, 0.25, chunk);
    }
    out
}

/// `V(x)` at the nodes: `x(tᵢ) + Δ Σ_{j<i} v(tᵢ, m_j, x(m_j))`.
pub fn apply_v(kernel: &KernelSpec, x: &GridFunction) -> Result<GridFunction> {
    check_kernel(kernel, x)?;
    let grid = *x.grid();
    let n = x.dim();
    let h = grid.step();
    let xm = midpoint_values(x);
    let mut out = x.values().to_vec();
    out.par_chunks_mut(n)
        .enumerate()
        .skip(1)
        .for_each(|(i, row)| {
            let t = grid.node(i);
            let mut sum = vec![0.0; n];
            let mut buf = vec![0.0; n];
            for j in 0..i {
                kernel.v(t, grid.midpoint(j), &xm[j * n..(j + 1) * n], &mut buf);
                for k in 0..n {
                    sum[k] += buf[k];
                }
            }
            for k in 0..n {
                row[k] += h * sum[k];
            }
        });
    GridFunction::from_values(grid, n, out)
}

/// `d/dt V(x)` at every cell midpoint, from the expansion
/// `x′(t) + v(t, t, x(t)) + ∫_α^t v_t(t, τ, x(τ)) dτ`.
pub fn apply_v_dt(kernel: &KernelSpec, x: &GridFunction) -> Result<CellField> {
    check_kernel(kernel, x)?;
    let grid = *x.grid();
    let n = x.dim();
    let h = grid.step();
    let xm = midpoint_values(x);
    let xq = quarter_values(x);
    let mut values = x.slopes();
    values.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        let m = grid.midpoint(i);
        let mut buf = vec![0.0; n];
        let mut sum = vec![0.0; n];
        let xmi = &xm[i * n..(i + 1) * n];
        kernel.v(m, m, xmi, &mut buf);
        for k in 0..n {
            row[k] += buf[k];
        }
        for j in 0..i {
            kernel.vt(m, grid.midpoint(j), &xm[j * n..(j + 1) * n], &mut buf);
            for k in 0..n {
                sum[k] += h * buf[k];
            }
        }
        kernel.vt(
            m,
            grid.node(i) + 0.25 * h,
            &xq[i * n..(i + 1) * n],
            &mut buf,
        );
        for k in 0..n {
            sum[k] += 0.5 * h * buf[k];
            row[k] += sum[k];
        }
    });
    Ok(CellField {
        grid,
        dim: n,
        values,
    })
}

/// `V′(x₀)h = h + ∫_α^t v_x(t, τ, x₀(τ)) h(τ) dτ`.
pub fn frechet_apply(
    kernel: &KernelSpec,
    x0: &GridFunction,
    h: &GridFunction,
) -> Result<GridFunction> {
    check_pair(x0, h)?;
    let lin = Linearization::new(kernel, x0)?;
    h.add(&lin.apply(h)?)
}

/// Discrete `F_y(x) = ½ Σᵢ |d/dt V(x)(mᵢ) − y′ᵢ|² Δ`.
pub fn functional_f(kernel: &KernelSpec, x: &GridFunction, y: &GridFunction) -> Result<f64> {
    check_pair(x, y)?;
    Ok(0.5 * dt_residual(kernel, x, y)?.l2_norm_squared())
}

/// `d/dt V(x) − y′` per cell.
pub fn dt_residual(kernel: &KernelSpec, x: &GridFunction, y: &GridFunction) -> Result<CellField> {
    check_pair(x, y)?;
    let mut r = apply_v_dt(kernel, x)?;
    for (ri, yi) in r.values.iter_mut().zip(y.slopes()) {
        *ri -= yi;
    }
    Ok(r)
}

/// Gâteaux derivative of [`functional_f`] at `x` in direction `h`:
/// `⟨d/dt V(x) − y′, d/dt (V′(x)h)⟩_{L²}`.
pub fn directional_df(
    kernel: &KernelSpec,
    x: &GridFunction,
    y: &GridFunction,
    h: &GridFunction,
) -> Result<f64> {
    check_pair(x, y)?;
    check_pair(x, h)?;
    let r = dt_residual(kernel, x, y)?;
    let jh = DtJacobian::new(kernel, x)?.apply(h)?;
    Ok(dot(&r.values, &jh.values) * x.grid().step())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

/// Jacobian of `x ↦ d/dt V(x)` (cell samples) with respect to the node
/// values, frozen at one `x`. Holds every kernel evaluation it needs, so
/// forward and adjoint products cost no further kernel calls.
pub struct DtJacobian {
    grid: Grid,
    dim: usize,
    /// `v_x(mᵢ, mᵢ, x(mᵢ))`, one `n × n` block per cell.
    diag: Vec<f64>,
    /// `v_tx(mᵢ, m_j, x(m_j))` for `j < i`, row `i` packed at `i(i−1)/2`.
    lower: Vec<f64>,
    /// `v_tx(mᵢ, tᵢ + Δ/4, x(tᵢ + Δ/4))`.
    quarter: Vec<f64>,
}

impl DtJacobian {
    pub fn new(kernel: &KernelSpec, x: &GridFunction) -> Result<Self> {
        check_kernel(kernel, x)?;
        let grid = *x.grid();
        let n = x.dim();
        let nn = n * n;
        let cells = grid.n_cells();
        let h = grid.step();
        let xm = midpoint_values(x);
        let xq = quarter_values(x);

        let mut diag = vec![0.0; cells * nn];
        let mut quarter = vec![0.0; cells * nn];
        for i in 0..cells {
            let m = grid.midpoint(i);
            kernel.vx(
                m,
                m,
                &xm[i * n..(i + 1) * n],
                &mut diag[i * nn..(i + 1) * nn],
            );
            kernel.vtx(
                m,
                grid.node(i) + 0.25 * h,
                &xq[i * n..(i + 1) * n],
                &mut quarter[i * nn..(i + 1) * nn],
            );
        }
        let mut lower = vec![0.0; cells * cells.saturating_sub(1) / 2 * nn];
        let mut rows: Vec<&mut [f64]> = Vec::with_capacity(cells);
        let mut rest = lower.as_mut_slice();
        for i in 0..cells {
            let (row, tail) = std::mem::take(&mut rest).split_at_mut(i * nn);
            rows.push(row);
            rest = tail;
        }
        rows.into_par_iter().enumerate().for_each(|(i, row)| {
            let m = grid.midpoint(i);
            for j in 0..i {
                kernel.vtx(
                    m,
                    grid.midpoint(j),
                    &xm[j * n..(j + 1) * n],
                    &mut row[j * nn..(j + 1) * nn],
                );
            }
        });
        Ok(Self {
            grid,
            dim: n,
            diag,
            lower,
            quarter,
        })
    }

    fn row_offset(&self, i: usize) -> usize {
        i * i.saturating_sub(1) / 2 * self.dim * self.dim
    }

    /// Directional derivative `d/dε [d/dt V(x + εh)]` at `ε = 0`.
    pub fn apply(&self, h: &GridFunction) -> Result<CellField> {
        if h.grid() != &self.grid {
            return Err(Error::GridMismatch);
        }
        if h.dim() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                found: h.dim(),
            });
        }
        let n = self.dim;
        let nn = n * n;
        let step = self.grid.step();
        let hm = midpoint_values(h);
        let hq = quarter_values(h);
        let mut values = h.slopes();
        values.par_chunks_mut(n).enumerate().for_each(|(i, out)| {
            matvec_add(
                &self.diag[i * nn..(i + 1) * nn],
                &hm[i * n..(i + 1) * n],
                1.0,
                out,
            );
            let base = self.row_offset(i);
            for j in 0..i {
                let block = &self.lower[base + j * nn..base + (j + 1) * nn];
                matvec_add(block, &hm[j * n..(j + 1) * n], step, out);
            }
            matvec_add(
                &self.quarter[i * nn..(i + 1) * nn],
                &hq[i * n..(i + 1) * n],
                0.5 * step,
                out,
            );
        });
        Ok(CellField {
            grid: self.grid,
            dim: n,
            values,
        })
    }

    /// Adjoint product: node-space coefficients `G` with
    /// `Σ_k G_k · h_k = Σ_i u_i · (J h)_i` for every `h` (node 0 excluded).
    pub fn adjoint(&self, u: &[f64]) -> Vec<f64> {
        let n = self.dim;
        let nn = n * n;
        let cells = self.grid.n_cells();
        let step = self.grid.step();
        let mut g = vec![0.0; (cells + 1) * n];
        let mut tmp = vec![0.0; n];
        for i in 0..cells {
            let ui = &u[i * n..(i + 1) * n];
            for k in 0..n {
                g[(i + 1) * n + k] += ui[k] / step;
                g[i * n + k] -= ui[k] / step;
            }
            tmp.fill(0.0);
            matvec_t_add(&self.diag[i * nn..(i + 1) * nn], ui, 1.0, &mut tmp);
            spread(&mut g, i, &tmp, 0.5, 0.5);
            let base = self.row_offset(i);
            for j in 0..i {
                tmp.fill(0.0);
                matvec_t_add(
                    &self.lower[base + j * nn..base + (j + 1) * nn],
                    ui,
                    step,
                    &mut tmp,
                );
                spread(&mut g, j, &tmp, 0.5, 0.5);
            }
            tmp.fill(0.0);
            matvec_t_add(
                &self.quarter[i * nn..(i + 1) * nn],
                ui,
                0.5 * step,
                &mut tmp,
            );
            spread(&mut g, i, &tmp, 0.75, 0.25);
        }
        g[..n].fill(0.0);
        g
    }
}

/// Adds `a·w` to node `cell` and `b·w` to node `cell + 1`.
fn spread(g: &mut [f64], cell: usize, w: &[f64], a: f64, b: f64) {
    let n = w.len();
    for k in 0..n {
        g[cell * n + k] += a * w[k];
        g[(cell + 1) * n + k] += b * w[k];
    }
}

/// `out += s · M v` for row-major `M`.
#[inline]
pub(crate) fn matvec_add(m: &[f64], v: &[f64], s: f64, out: &mut [f64]) {
    let n = v.len();
    for r in 0..n {
        let row = &m[r * n..(r + 1) * n];
        out[r] += s * dot(row, v);
    }
}

/// `out += s · Mᵀ v` for row-major `M`.
#[inline]
fn matvec_t_add(m: &[f64], v: &[f64], s: f64, out: &mut [f64]) {
    let n = v.len();
    for r in 0..n {
        for c in 0..n {
            out[c] += s * m[r * n + c] * v[r];
        }
    }
}

/// Riesz representer in AC₀² of the linear form `h ↦ Σ_k G_k · h_k`.
///
/// Solves `⟨g, h⟩_{AC₀²} = Σ_k G_k · h_k` for all `h`: the slopes of `g` are
/// the suffix sums of `G`.
pub fn riesz_representer(grid: Grid, dim: usize, coeffs: &[f64]) -> Result<GridFunction> {
    let n = dim;
    let cells = grid.n_cells();
    let step = grid.step();
    let mut slope = vec![0.0; n];
    let mut values = vec![0.0; (cells + 1) * n];
    let mut slopes = vec![0.0; cells * n];
    for i in (0..cells).rev() {
        for k in 0..n {
            slope[k] += coeffs[(i + 1) * n + k];
            slopes[i * n + k] = slope[k];
        }
    }
    for i in 0..cells {
        for k in 0..n {
            values[(i + 1) * n + k] = values[i * n + k] + step * slopes[i * n + k];
        }
    }
    GridFunction::from_values(grid, n, values)
}

/// Value and AC₀²-gradient of [`functional_f`] at `x`.
pub fn functional_gradient(
    kernel: &KernelSpec,
    x: &GridFunction,
    y: &GridFunction,
) -> Result<(f64, GridFunction, DtJacobian)> {
    let r = dt_residual(kernel, x, y)?;
    let step = x.grid().step();
    let value = 0.5 * r.l2_norm_squared();
    let jac = DtJacobian::new(kernel, x)?;
    let weighted: Vec<f64> = r.values.iter().map(|v| v * step).collect();
    let coeffs = jac.adjoint(&weighted);
    let grad = riesz_representer(*x.grid(), x.dim(), &coeffs)?;
    Ok((value, grad, jac))
}
