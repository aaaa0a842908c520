//! Kernel evaluators `v, v_t, v_x, v_tx` on `P_Δ × ℝⁿ` with declared growth
//! bounds, plus the built-in kernels used by the examples and test oracles.
//!
//! Evaluators write into caller-provided buffers: vectors of length `n` for
//! `v` and `v_t`, row-major `n × n` matrices for `v_x` and `v_tx`.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::function_space::{Grid, ANCHOR_TOLERANCE};

/// Evaluator `(t, τ, x, out)`.
pub type KernelFn = Arc<dyn Fn(f64, f64, &[f64], &mut [f64]) + Send + Sync>;
/// Nonnegative function on `P_Δ`.
pub type TriangleFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
/// Nonnegative function on `[α, β]`.
pub type IntervalFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
/// Scalar function of one variable.
pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// The triangle `P_Δ = {(t, τ) : α ≤ τ ≤ t ≤ β}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriangularDomain {
    pub alpha: f64,
    pub beta: f64,
}

impl TriangularDomain {
    pub fn new(alpha: f64, beta: f64) -> Self {
        Self { alpha, beta }
    }

    pub fn contains(&self, t: f64, tau: f64) -> bool {
        self.alpha <= tau && tau <= t && t <= self.beta
    }

    pub fn covers(&self, grid: &Grid) -> bool {
        let slack = 1e-12 * (self.beta - self.alpha).abs().max(1.0);
        grid.alpha() >= self.alpha - slack && grid.beta() <= self.beta + slack
    }
}

/// Declared growth bounds used by the hypothesis checks.
///
/// `c0, d0` bound `|v_t| ≤ c0|x| + d0` on `P_Δ`. `c1, d1` bound the diagonal
/// `|v(t,t,x)| ≤ c1|x| + d1`. `c2, d2` are the off-diagonal bounds on `v_t`
/// used together with `c1, d1`.
#[derive(Clone, Default)]
pub struct GrowthBounds {
    pub c0: Option<TriangleFn>,
    pub d0: Option<TriangleFn>,
    pub c1: Option<IntervalFn>,
    pub d1: Option<IntervalFn>,
    pub c2: Option<TriangleFn>,
    pub d2: Option<TriangleFn>,
}

impl GrowthBounds {
    /// Bounds on `v_t` only; if the kernel vanishes on the diagonal the same
    /// functions serve as `c2, d2` with `c1 = d1 = 0`.
    pub fn vanishing_diagonal(c0: TriangleFn, d0: TriangleFn) -> Self {
        Self {
            c0: Some(c0.clone()),
            d0: Some(d0.clone()),
            c1: Some(Arc::new(|_| 0.0)),
            d1: Some(Arc::new(|_| 0.0)),
            c2: Some(c0),
            d2: Some(d0),
        }
    }

    pub fn has_diagonal_form(&self) -> bool {
        self.c0.is_some() && self.d0.is_some()
    }

    pub fn has_growth_form(&self) -> bool {
        self.c1.is_some() && self.d1.is_some() && self.c2.is_some() && self.d2.is_some()
    }
}

impl fmt::Debug for GrowthBounds {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GrowthBounds")
            .field("c0", &self.c0.is_some())
            .field("d0", &self.d0.is_some())
            .field("c1", &self.c1.is_some())
            .field("d1", &self.d1.is_some())
            .field("c2", &self.c2.is_some())
            .field("d2", &self.d2.is_some())
            .finish()
    }
}

/// Which partial derivative to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Partial {
    V,
    Vt,
    Vx,
    Vtx,
}

/// A bundle of kernel evaluators. Immutable and cheap to clone.
#[derive(Clone)]
pub struct KernelSpec {
    name: String,
    dim: usize,
    domain: TriangularDomain,
    v: KernelFn,
    vt: KernelFn,
    vx: KernelFn,
    vtx: KernelFn,
    diagonal_zero: bool,
    bounds: GrowthBounds,
}

impl fmt::Debug for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KernelSpec")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("domain", &self.domain)
            .field("diagonal_zero", &self.diagonal_zero)
            .field("bounds", &self.bounds)
            .finish()
    }
}

impl KernelSpec {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        domain: TriangularDomain,
        v: KernelFn,
        vt: KernelFn,
        vx: KernelFn,
        vtx: KernelFn,
    ) -> Self {
        assert!(dim >= 1, "kernel dimension must be positive");
        Self {
            name: name.into(),
            dim,
            domain,
            v,
            vt,
            vx,
            vtx,
            diagonal_zero: false,
            bounds: GrowthBounds::default(),
        }
    }

    /// Scalar (`n = 1`) kernel from plain closures `f(t, τ, x)`.
    pub fn scalar<V, Vt, Vx, Vtx>(
        name: impl Into<String>,
        domain: TriangularDomain,
        v: V,
        vt: Vt,
        vx: Vx,
        vtx: Vtx,
    ) -> Self
    where
        V: Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
        Vt: Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
        Vx: Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
        Vtx: Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
    {
        fn lift<F>(f: F) -> KernelFn
        where
            F: Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
        {
            Arc::new(move |t, tau, x: &[f64], out: &mut [f64]| out[0] = f(t, tau, x[0]))
        }
        Self::new(name, 1, domain, lift(v), lift(vt), lift(vx), lift(vtx))
    }

    pub fn with_diagonal_zero(mut self, flag: bool) -> Self {
        self.diagonal_zero = flag;
        self
    }

    pub fn with_bounds(mut self, bounds: GrowthBounds) -> Self {
        self.bounds = bounds;
        self
    }

    /// Same evaluators on a different interval.
    pub fn on_interval(mut self, alpha: f64, beta: f64) -> Self {
        self.domain = TriangularDomain::new(alpha, beta);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn domain(&self) -> TriangularDomain {
        self.domain
    }

    pub fn diagonal_zero(&self) -> bool {
        self.diagonal_zero
    }

    pub fn bounds(&self) -> &GrowthBounds {
        &self.bounds
    }

    #[inline]
    pub fn v(&self, t: f64, tau: f64, x: &[f64], out: &mut [f64]) {
        (self.v)(t, tau, x, out)
    }

    #[inline]
    pub fn vt(&self, t: f64, tau: f64, x: &[f64], out: &mut [f64]) {
        (self.vt)(t, tau, x, out)
    }

    #[inline]
    pub fn vx(&self, t: f64, tau: f64, x: &[f64], out: &mut [f64]) {
        (self.vx)(t, tau, x, out)
    }

    #[inline]
    pub fn vtx(&self, t: f64, tau: f64, x: &[f64], out: &mut [f64]) {
        (self.vtx)(t, tau, x, out)
    }

    /// Evaluates one partial after checking `(t, τ) ∈ P_Δ` and `x ∈ ℝⁿ`.
    pub fn eval_checked(&self, which: Partial, t: f64, tau: f64, x: &[f64]) -> Result<Vec<f64>> {
        if !self.domain.contains(t, tau) {
            return Err(Error::OutsideTriangle { t, tau });
        }
        if x.len() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                found: x.len(),
            });
        }
        let n = self.dim;
        let mut out = match which {
            Partial::V | Partial::Vt => vec![0.0; n],
            Partial::Vx | Partial::Vtx => vec![0.0; n * n],
        };
        match which {
            Partial::V => self.v(t, tau, x, &mut out),
            Partial::Vt => self.vt(t, tau, x, &mut out),
            Partial::Vx => self.vx(t, tau, x, &mut out),
            Partial::Vtx => self.vtx(t, tau, x, &mut out),
        }
        Ok(out)
    }
}

/// `v ≡ 0` on `[0, 1]`: the operator is the identity.
pub fn zero_kernel() -> KernelSpec {
    let zero: KernelFn = Arc::new(|_, _, _, out: &mut [f64]| out.fill(0.0));
    KernelSpec::new(
        "zero",
        1,
        TriangularDomain::new(0.0, 1.0),
        zero.clone(),
        zero.clone(),
        zero.clone(),
        zero,
    )
    .with_diagonal_zero(true)
    .with_bounds(GrowthBounds::vanishing_diagonal(
        Arc::new(|_, _| 0.0),
        Arc::new(|_, _| 0.0),
    ))
}

/// `v(t, τ, x) = λx` on `[0, 1]`.
pub fn linear_kernel(lambda: f64) -> KernelSpec {
    KernelSpec::scalar(
        "linear",
        TriangularDomain::new(0.0, 1.0),
        move |_, _, x| lambda * x,
        |_, _, _| 0.0,
        move |_, _, _| lambda,
        |_, _, _| 0.0,
    )
    .with_diagonal_zero(false)
    .with_bounds(GrowthBounds {
        c1: Some(Arc::new(move |_| lambda.abs())),
        d1: Some(Arc::new(|_| 0.0)),
        c2: Some(Arc::new(|_, _| 0.0)),
        d2: Some(Arc::new(|_, _| 0.0)),
        ..GrowthBounds::default()
    })
}

/// `v(t, τ, x) = ā (t−τ)^{2/3} ln(1 + 2(t−τ)²x²)` on `[0, 1]`.
///
/// `v_t` carries the integrable factor `(t−τ)^{−1/3}`; on the diagonal it is
/// reported as zero when `x = 0` and as infinite otherwise. Quadrature never
/// evaluates it there.
pub fn example1_kernel(a_bar: f64) -> KernelSpec {
    let v = move |t: f64, tau: f64, x: f64| {
        let s = t - tau;
        a_bar * s.powf(2.0 / 3.0) * (2.0 * s * s * x * x).ln_1p()
    };
    let vt = move |t: f64, tau: f64, x: f64| {
        let s = t - tau;
        let q = 2.0 * s * s * x * x;
        if s <= 0.0 {
            return if x == 0.0 || a_bar == 0.0 {
                0.0
            } else {
                f64::INFINITY * a_bar.signum()
            };
        }
        2.0 / 3.0 * a_bar * s.powf(-1.0 / 3.0) * q.ln_1p()
            + a_bar * s.powf(2.0 / 3.0) * 4.0 * s * x * x / (1.0 + q)
    };
    let vx = move |t: f64, tau: f64, x: f64| {
        let s = t - tau;
        a_bar * s.powf(8.0 / 3.0) * 4.0 * x / (1.0 + 2.0 * s * s * x * x)
    };
    let vtx = move |t: f64, tau: f64, x: f64| {
        let s = t - tau;
        let q = 2.0 * s * s * x * x;
        a_bar * 4.0 * x * s.powf(5.0 / 3.0) * (8.0 / 3.0 + 4.0 / 3.0 * s * s * x * x)
            / ((1.0 + q) * (1.0 + q))
    };
    let abs = a_bar.abs();
    KernelSpec::scalar("example1", TriangularDomain::new(0.0, 1.0), v, vt, vx, vtx)
        .with_diagonal_zero(true)
        .with_bounds(GrowthBounds::vanishing_diagonal(
            Arc::new(move |t, tau| 2.0 * 2f64.sqrt() / 3.0 * abs * (t - tau).powf(2.0 / 3.0)),
            Arc::new(move |t, tau| 2.0 * abs * (t - tau).powf(-1.0 / 3.0)),
        ))
}

/// Feedback-loop kernel `v(t, τ, x) = w(t−τ) z(x)` on `[0, horizon]`.
///
/// `w_prime` and `z_prime` are the derivatives of `w` and `z`; `growth_a`,
/// `growth_b` are the constants in `|z(x)| ≤ A|x| + B`.
#[allow(clippy::too_many_arguments)]
pub fn example2_kernel(
    w: ScalarFn,
    w_prime: ScalarFn,
    z: ScalarFn,
    z_prime: ScalarFn,
    growth_a: f64,
    growth_b: f64,
    horizon: f64,
) -> Result<KernelSpec> {
    let w0 = w(0.0);
    if !(w0.abs() <= ANCHOR_TOLERANCE) {
        return Err(Error::KernelContract(format!(
            "w(0) must vanish, got {w0:e}"
        )));
    }
    if !(growth_a >= 0.0 && growth_b >= 0.0) {
        return Err(Error::KernelContract(
            "growth constants A, B must be nonnegative".into(),
        ));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::KernelContract("horizon T must be positive".into()));
    }
    let (w1, z1) = (w.clone(), z.clone());
    let (wp1, z2) = (w_prime.clone(), z.clone());
    let (w2, zp1) = (w.clone(), z_prime.clone());
    let (wp2, zp2) = (w_prime.clone(), z_prime);
    let (wc, wd) = (w_prime.clone(), w_prime);
    Ok(KernelSpec::scalar(
        "example2",
        TriangularDomain::new(0.0, horizon),
        move |t, tau, x| w1(t - tau) * z1(x),
        move |t, tau, x| wp1(t - tau) * z2(x),
        move |t, tau, x| w2(t - tau) * zp1(x),
        move |t, tau, x| wp2(t - tau) * zp2(x),
    )
    .with_diagonal_zero(true)
    .with_bounds(GrowthBounds::vanishing_diagonal(
        Arc::new(move |t, tau| growth_a * wc(t - tau).abs()),
        Arc::new(move |t, tau| growth_b * wd(t - tau).abs()),
    )))
}

/// The demo feedback kernel: `w(t) = t`, `z = arctan` (so `A = 1`, `B = 0`).
pub fn example2_linw_atan(horizon: f64) -> Result<KernelSpec> {
    example2_kernel(
        Arc::new(|s| s),
        Arc::new(|_| 1.0),
        Arc::new(f64::atan),
        Arc::new(|x| 1.0 / (1.0 + x * x)),
        1.0,
        0.0,
        horizon,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn builtins() -> Vec<KernelSpec> {
        vec![
            zero_kernel(),
            linear_kernel(0.5),
            linear_kernel(-1.3),
            example1_kernel(1.0),
            example1_kernel(-2.0),
            example2_linw_atan(0.9).unwrap(),
        ]
    }

    fn scalar(k: &KernelSpec, which: Partial, t: f64, tau: f64, x: f64) -> f64 {
        k.eval_checked(which, t, tau, &[x]).unwrap()[0]
    }

    fn sample(rng: &mut ChaCha8Rng, k: &KernelSpec, min_gap: f64) -> (f64, f64, f64) {
        let d = k.domain();
        let len = d.beta - d.alpha;
        loop {
            let t = d.alpha + len * rng.gen::<f64>();
            let tau = d.alpha + len * rng.gen::<f64>();
            if t - tau >= min_gap * len {
                return (t, tau, rng.gen_range(-2.0..2.0));
            }
        }
    }

    #[test]
    fn example1_values() {
        let k = example1_kernel(1.0);
        assert_relative_eq!(
            scalar(&k, Partial::V, 1.0, 0.0, 1.0),
            3f64.ln(),
            max_relative = 1e-15
        );
        assert_eq!(scalar(&k, Partial::V, 0.5, 0.5, 3.0), 0.0);
        let flat = example1_kernel(0.0);
        assert_eq!(scalar(&flat, Partial::V, 1.0, 0.2, 5.0), 0.0);
        assert_eq!(scalar(&flat, Partial::Vx, 1.0, 0.2, 5.0), 0.0);
    }

    #[test]
    fn example2_values_and_contract() {
        let k = example2_linw_atan(1.0).unwrap();
        assert_relative_eq!(
            scalar(&k, Partial::V, 1.0, 0.5, 1.0),
            0.5 * 1f64.atan(),
            max_relative = 1e-15
        );
        assert_eq!(scalar(&k, Partial::V, 0.3, 0.3, 7.0), 0.0);

        let zero_z = example2_kernel(
            Arc::new(|s| s),
            Arc::new(|_| 1.0),
            Arc::new(|_| 0.0),
            Arc::new(|_| 0.0),
            0.0,
            0.0,
            1.0,
        )
        .unwrap();
        assert_eq!(scalar(&zero_z, Partial::V, 1.0, 0.1, 2.0), 0.0);

        let bad = example2_kernel(
            Arc::new(|s| s + 1.0),
            Arc::new(|_| 1.0),
            Arc::new(f64::atan),
            Arc::new(|x| 1.0 / (1.0 + x * x)),
            1.0,
            0.0,
            1.0,
        );
        assert!(matches!(bad, Err(Error::KernelContract(_))));
    }

    #[test]
    fn linear_kernel_values() {
        let k = linear_kernel(0.5);
        assert_eq!(scalar(&k, Partial::V, 0.9, 0.1, 2.0), 1.0);
        assert_eq!(
            scalar(&linear_kernel(2.0), Partial::Vx, 0.4, 0.0, -7.0),
            2.0
        );
        assert_eq!(scalar(&linear_kernel(0.0), Partial::V, 0.4, 0.0, -7.0), 0.0);
    }

    #[test]
    fn eval_checked_guards_the_triangle() {
        let k = example1_kernel(1.0);
        assert!(matches!(
            k.eval_checked(Partial::V, 0.5, 0.7, &[1.0]),
            Err(Error::OutsideTriangle { .. })
        ));
        assert!(matches!(
            k.eval_checked(Partial::V, 1.5, 0.7, &[1.0]),
            Err(Error::OutsideTriangle { .. })
        ));
        assert!(matches!(
            k.eval_checked(Partial::V, 0.5, 0.1, &[1.0, 2.0]),
            Err(Error::DimMismatch { .. })
        ));
        assert_eq!(scalar(&k, Partial::V, 0.5, 0.5, 1.0), 0.0);
    }

    #[test]
    fn finite_difference_consistency() {
        let eps = 1e-5;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for k in builtins() {
            for _ in 0..100 {
                let (t, tau, x) = sample(&mut rng, &k, 0.05);
                // stay inside the triangle for the t-stencil
                let (t, tau) = (t.min(k.domain().beta - eps), tau);
                let tol = |exact: f64| 1e-6_f64.max(1e-6 * exact.abs());
                let v = |a, b, c| scalar(&k, Partial::V, a, b, c);
                let vx = |a, b, c| scalar(&k, Partial::Vx, a, b, c);

                let fd_t = (v(t + eps, tau, x) - v(t - eps, tau, x)) / (2.0 * eps);
                let exact = scalar(&k, Partial::Vt, t, tau, x);
                assert!(
                    (fd_t - exact).abs() <= tol(exact),
                    "{} v_t {fd_t} {exact}",
                    k.name()
                );

                let fd_x = (v(t, tau, x + eps) - v(t, tau, x - eps)) / (2.0 * eps);
                let exact = vx(t, tau, x);
                assert!(
                    (fd_x - exact).abs() <= tol(exact),
                    "{} v_x {fd_x} {exact}",
                    k.name()
                );

                let fd_tx = (vx(t + eps, tau, x) - vx(t - eps, tau, x)) / (2.0 * eps);
                let exact = scalar(&k, Partial::Vtx, t, tau, x);
                assert!(
                    (fd_tx - exact).abs() <= tol(exact),
                    "{} v_tx {fd_tx} {exact}",
                    k.name()
                );
            }
        }
    }

    #[test]
    fn growth_bounds_are_honest() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for k in builtins() {
            let b = k.bounds();
            for _ in 0..1000 {
                let (t, tau, x) = sample(&mut rng, &k, 1e-9);
                let vt = scalar(&k, Partial::Vt, t, tau, x).abs();
                if let (Some(c0), Some(d0)) = (&b.c0, &b.d0) {
                    assert!(
                        vt <= c0(t, tau) * x.abs() + d0(t, tau) + 1e-10,
                        "{}",
                        k.name()
                    );
                }
                if let (Some(c2), Some(d2)) = (&b.c2, &b.d2) {
                    assert!(
                        vt <= c2(t, tau) * x.abs() + d2(t, tau) + 1e-10,
                        "{}",
                        k.name()
                    );
                }
                if let (Some(c1), Some(d1)) = (&b.c1, &b.d1) {
                    let diag = scalar(&k, Partial::V, t, t, x).abs();
                    assert!(diag <= c1(t) * x.abs() + d1(t) + 1e-10, "{}", k.name());
                }
            }
        }
    }

    #[test]
    fn diagonal_zero_flag_is_truthful() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for k in builtins() {
            let d = k.domain();
            let mut all_zero = true;
            for _ in 0..1000 {
                let t = d.alpha + (d.beta - d.alpha) * rng.gen::<f64>();
                let x = rng.gen_range(-5.0..5.0);
                all_zero &= scalar(&k, Partial::V, t, t, x) == 0.0;
            }
            if k.diagonal_zero() {
                assert!(all_zero, "{}", k.name());
            }
        }
        assert!(!linear_kernel(0.5).diagonal_zero());
    }
}
