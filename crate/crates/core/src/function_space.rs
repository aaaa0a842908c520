//! Discrete elements of AC₀²([α, β], ℝⁿ).
//!
//! A [`GridFunction`] stores the node values of a continuous piecewise-linear
//! function on a uniform [`Grid`], with the value at `α` pinned to zero. Such
//! functions form an exact finite-dimensional subspace of AC₀², so every norm
//! computed here is the exact norm of the interpolant, not an approximation.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute slack used by boolean predicates on floating-point inequalities.
pub const PREDICATE_SLACK: f64 = 1e-12;

/// Tolerance on `|f(α)|` accepted by [`GridFunction::from_callable`].
pub const ANCHOR_TOLERANCE: f64 = 1e-10;

/// Uniform partition `α = t₀ < t₁ < … < t_N = β`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    alpha: f64,
    beta: f64,
    n_cells: usize,
}

impl Grid {
    pub fn new(alpha: f64, beta: f64, n_cells: usize) -> Result<Self> {
        if !alpha.is_finite() || !beta.is_finite() {
            return Err(Error::InvalidGrid(
                "interval endpoints must be finite".into(),
            ));
        }
        if beta <= alpha {
            return Err(Error::InvalidGrid(format!(
                "beta ({beta}) must exceed alpha ({alpha})"
            )));
        }
        if n_cells == 0 {
            return Err(Error::InvalidGrid("at least one cell is required".into()));
        }
        Ok(Self {
            alpha,
            beta,
            n_cells,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn n_nodes(&self) -> usize {
        self.n_cells + 1
    }

    /// Interval length `β − α`.
    pub fn length(&self) -> f64 {
        self.beta - self.alpha
    }

    /// Cell width Δ.
    pub fn step(&self) -> f64 {
        self.length() / self.n_cells as f64
    }

    /// Node `tᵢ`; the last node is exactly `β`.
    pub fn node(&self, i: usize) -> f64 {
        if i == self.n_cells {
            self.beta
        } else {
            self.alpha + i as f64 * self.step()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_nodes()).map(|i| self.node(i)).collect()
    }

    /// Midpoint of cell `i`, i.e. of `[tᵢ, tᵢ₊₁]`.
    pub fn midpoint(&self, i: usize) -> f64 {
        self.alpha + (i as f64 + 0.5) * self.step()
    }

    /// Same grid with `n_cells` replaced.
    pub fn with_cells(&self, n_cells: usize) -> Result<Self> {
        Self::new(self.alpha, self.beta, n_cells)
    }
}

/// Piecewise-linear element of AC₀² stored by its node values.
///
/// Values are laid out node-major: component `k` of node `i` sits at
/// `values[i * dim + k]`. The first node is always exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: Grid,
    dim: usize,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn zero(grid: Grid, dim: usize) -> Self {
        assert!(dim >= 1, "dimension must be positive");
        Self {
            grid,
            dim,
            values: vec![0.0; grid.n_nodes() * dim],
        }
    }

    /// Builds a function from flattened node values.
    ///
    /// The first node must vanish within [`ANCHOR_TOLERANCE`]; it is then
    /// overwritten with an exact zero.
    pub fn from_values(grid: Grid, dim: usize, mut values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("dimension must be positive".into()));
        }
        if values.len() != grid.n_nodes() * dim {
            return Err(Error::InvalidArgument(format!(
                "expected {} values for {} nodes of dimension {dim}, got {}",
                grid.n_nodes() * dim,
                grid.n_nodes(),
                values.len()
            )));
        }
        let anchor = norm(&values[..dim]);
        if !(anchor <= ANCHOR_TOLERANCE) {
            return Err(Error::NotAnchoredAtAlpha { value: anchor });
        }
        values[..dim].fill(0.0);
        Ok(Self { grid, dim, values })
    }

    /// Samples a vector-valued `f` at the nodes. `f(t, out)` writes `f(t)`.
    pub fn from_callable<F>(grid: Grid, dim: usize, f: F) -> Result<Self>
    where
        F: Fn(f64, &mut [f64]),
    {
        let mut values = vec![0.0; grid.n_nodes() * dim];
        for (i, chunk) in values.chunks_exact_mut(dim).enumerate() {
            f(grid.node(i), chunk);
        }
        Self::from_values(grid, dim, values)
    }

    /// Samples a scalar `f` at the nodes (dimension 1).
    pub fn from_scalar_fn<F>(grid: Grid, f: F) -> Result<Self>
    where
        F: Fn(f64) -> f64,
    {
        Self::from_callable(grid, 1, |t, out| out[0] = f(t))
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Flattened node values.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Value at node `i`.
    pub fn at(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// Value of the interpolant at the midpoint of cell `i`.
    pub fn midpoint_value(&self, i: usize, out: &mut [f64]) {
        let (a, b) = (self.at(i), self.at(i + 1));
        for k in 0..self.dim {
            out[k] = 0.5 * (a[k] + b[k]);
        }
    }

    /// Value of the interpolant at `tᵢ + θΔ`, `θ ∈ [0, 1]`.
    pub fn cell_value(&self, i: usize, theta: f64, out: &mut [f64]) {
        let (a, b) = (self.at(i), self.at(i + 1));
        for k in 0..self.dim {
            out[k] = (1.0 - theta) * a[k] + theta * b[k];
        }
    }

    /// Value of the interpolant at an arbitrary `t ∈ [α, β]` (clamped).
    pub fn eval(&self, t: f64, out: &mut [f64]) {
        let n = self.grid.n_cells();
        let s = ((t - self.grid.alpha()) / self.grid.step()).clamp(0.0, n as f64);
        let i = (s.floor() as usize).min(n - 1);
        self.cell_value(i, s - i as f64, out);
    }

    /// Difference quotient `(x_{i+1} − x_i)/Δ` on cell `i`.
    pub fn slope(&self, i: usize, out: &mut [f64]) {
        let (a, b) = (self.at(i), self.at(i + 1));
        let h = self.grid.step();
        for k in 0..self.dim {
            out[k] = (b[k] - a[k]) / h;
        }
    }

    /// All cell slopes, flattened cell-major.
    pub fn slopes(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.n_cells() * self.dim];
        for (i, chunk) in out.chunks_exact_mut(self.dim).enumerate() {
            self.slope(i, chunk);
        }
        out
    }

    /// `‖x‖_{AC₀²} = (∫|x′|²)^{1/2}`, exact for the interpolant.
    pub fn ac_norm(&self) -> f64 {
        let h = self.grid.step();
        let sum: f64 = (0..self.grid.n_cells())
            .map(|i| {
                let (a, b) = (self.at(i), self.at(i + 1));
                a.iter().zip(b).map(|(p, q)| (q - p) * (q - p)).sum::<f64>()
            })
            .sum();
        (sum / h).sqrt()
    }

    /// Maximum Euclidean norm over the nodes.
    pub fn sup_norm(&self) -> f64 {
        self.values
            .chunks_exact(self.dim)
            .map(norm)
            .fold(0.0, f64::max)
    }

    /// L² norm of the interpolant, integrating the per-cell quadratic exactly.
    pub fn l2_norm(&self) -> f64 {
        let h = self.grid.step();
        let sum: f64 = (0..self.grid.n_cells())
            .map(|i| {
                let (a, b) = (self.at(i), self.at(i + 1));
                a.iter()
                    .zip(b)
                    .map(|(p, q)| p * p + p * q + q * q)
                    .sum::<f64>()
                    / 3.0
            })
            .sum();
        (sum * h).sqrt()
    }

    /// Checks the embeddings `|x(t)| ≤ (t−α)^{1/2}‖x‖` at every node and
    /// `‖x‖²_{L²} ≤ ½(β−α)²‖x‖²`, each with slack [`PREDICATE_SLACK`].
    pub fn verify_embedding(&self) -> bool {
        let ac = self.ac_norm();
        let pointwise = (0..self.grid.n_nodes()).all(|i| {
            let bound = (self.grid.node(i) - self.grid.alpha()).max(0.0).sqrt() * ac;
            norm(self.at(i)) <= bound + PREDICATE_SLACK
        });
        let l2 = self.l2_norm();
        let len = self.grid.length();
        pointwise && l2 * l2 <= 0.5 * len * len * ac * ac + PREDICATE_SLACK
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        if self.dim != other.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                found: other.dim,
            });
        }
        Ok(())
    }

    /// `a·x + y`.
    pub fn axpy(a: f64, x: &Self, y: &Self) -> Result<Self> {
        x.check_compatible(y)?;
        let values = x
            .values
            .iter()
            .zip(&y.values)
            .map(|(p, q)| a * p + q)
            .collect();
        Ok(Self {
            grid: x.grid,
            dim: x.dim,
            values,
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        Self::axpy(1.0, other, self)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        Self::axpy(-1.0, other, self)
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            grid: self.grid,
            dim: self.dim,
            values: self.values.iter().map(|v| c * v).collect(),
        }
    }

    /// `⟨x, y⟩_{AC₀²} = ∫ x′·y′`.
    pub fn ac_inner(&self, other: &Self) -> Result<f64> {
        self.check_compatible(other)?;
        let h = self.grid.step();
        let mut sum = 0.0;
        for i in 0..self.grid.n_cells() {
            for k in 0..self.dim {
                let dx = self.values[(i + 1) * self.dim + k] - self.values[i * self.dim + k];
                let dy = other.values[(i + 1) * self.dim + k] - other.values[i * self.dim + k];
                sum += dx * dy;
            }
        }
        Ok(sum / h)
    }

    /// `‖x − y‖_{AC₀²}`.
    pub fn ac_distance(&self, other: &Self) -> Result<f64> {
        Ok(self.sub(other)?.ac_norm())
    }

    /// Writes the CSV form: header `t,x_1,…,x_n`, one row per node, `%.17g`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.dim).map(|k| format!("x_{k}")));
        w.write_record(&header)?;
        let mut row = Vec::with_capacity(self.dim + 1);
        for i in 0..self.grid.n_nodes() {
            row.clear();
            row.push(format_g17(self.grid.node(i)));
            row.extend(self.at(i).iter().map(|&v| format_g17(v)));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)
            .expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("CSV output is ASCII")
    }

    /// Reads a CSV written by [`write_csv`](Self::write_csv). The grid is
    /// inferred from the `t` column, which must be uniform.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let table = SampledTable::read_csv(reader)?;
        let n = table.t.len() - 1;
        let grid = Grid::new(table.t[0], table.t[n], n)?;
        let tol = 1e-9 * grid.length().max(1.0);
        for (i, &t) in table.t.iter().enumerate() {
            if (t - grid.node(i)).abs() > tol {
                return Err(Error::Parse(format!(
                    "t column is not uniform at row {}",
                    i + 1
                )));
            }
        }
        Self::from_values(grid, table.dim, table.values)
    }
}

/// Raw samples `(tᵢ, x(tᵢ))` read from CSV, possibly on a foreign grid.
#[derive(Debug, Clone)]
pub struct SampledTable {
    pub t: Vec<f64>,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl SampledTable {
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.len() < 2 || &headers[0] != "t" {
            return Err(Error::Parse("expected header `t,x_1,...,x_n`".into()));
        }
        for (k, name) in headers.iter().skip(1).enumerate() {
            if name != format!("x_{}", k + 1) {
                return Err(Error::Parse(format!("unexpected column name `{name}`")));
            }
        }
        let dim = headers.len() - 1;
        let mut t = Vec::new();
        let mut values = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let mut fields = record.iter().map(|s| {
                s.parse::<f64>()
                    .map_err(|_| Error::Parse(format!("not a number: `{s}`")))
            });
            t.push(fields.next().transpose()?.unwrap_or(f64::NAN));
            for v in fields {
                values.push(v?);
            }
        }
        if t.len() < 2 {
            return Err(Error::Parse("at least two rows are required".into()));
        }
        if t.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Parse("t column must be strictly increasing".into()));
        }
        Ok(Self { t, dim, values })
    }

    /// Piecewise-linear resampling onto `grid`, which must lie inside the
    /// sampled range (up to `1e-9` relative slack).
    pub fn resample(&self, grid: Grid) -> Result<GridFunction> {
        let (lo, hi) = (self.t[0], *self.t.last().unwrap());
        let slack = 1e-9 * (hi - lo).abs().max(1.0);
        if grid.alpha() < lo - slack || grid.beta() > hi + slack {
            return Err(Error::InvalidArgument(format!(
                "samples cover [{lo}, {hi}] but the grid is [{}, {}]",
                grid.alpha(),
                grid.beta()
            )));
        }
        let dim = self.dim;
        GridFunction::from_callable(grid, dim, |t, out| {
            let j = match self.t.partition_point(|&s| s <= t) {
                0 => 0,
                p => (p - 1).min(self.t.len() - 2),
            };
            let theta = ((t - self.t[j]) / (self.t[j + 1] - self.t[j])).clamp(0.0, 1.0);
            let lo = &self.values[j * dim..(j + 1) * dim];
            let hi = &self.values[(j + 1) * dim..(j + 2) * dim];
            for ((o, a), b) in out.iter_mut().zip(lo).zip(hi) {
                *o = (1.0 - theta) * a + theta * b;
            }
        })
    }
}

/// Euclidean norm of a slice.
pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Formats like C's `printf("%.17g", v)`.
pub fn format_g17(v: f64) -> String {
    const P: i32 = 17;
    if v == 0.0 {
        return if v.is_sign_negative() {
            "-0".into()
        } else {
            "0".into()
        };
    }
    if !v.is_finite() {
        return if v.is_nan() {
            "nan".into()
        } else if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let sci = format!("{:.*e}", (P - 1) as usize, v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent marker");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..P).contains(&exp) {
        let mantissa = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        strip_zeros(&format!("{:.*}", (P - 1 - exp) as usize, v)).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}
