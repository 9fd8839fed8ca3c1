//! Product kernels on [-1/2, 1/2]^d and the overlap machinery.
//!
//! Every axis kernel lives on [-1/2, 1/2], integrates to one, and is bounded;
//! the product kernel multiplies the axis factors. Besides evaluation, this
//! module supplies the two kernel functionals the test needs: `∫K²` (the scale
//! of the local variance) and the normalized overlap
//!
//! ```text
//! t(u) = ∫K(x)K(x+u)dx / ∫K²(x)dx ,
//! ```
//!
//! the correlation between kernel smoothers evaluated `u` bandwidths apart.
//! By Cauchy–Schwarz `t(u) ∈ [-1, 1]`, with `t(0) = 1` and `t(u) = 0` once any
//! axis separation reaches one.

use crate::quad::QuadRule;
use crate::{Error, Result};
use std::sync::Arc;

/// Half-width of the common support interval: every axis kernel vanishes
/// outside [-1/2, 1/2].
pub const SUPPORT_HALFWIDTH: f64 = 0.5;

/// Quadrature order for kernel moments. The builtin kernels are polynomials of
/// degree ≤ 2, so 64 nodes are exact (and stay accurate for custom kernels).
const MOMENT_QUAD_NODES: usize = 64;

/// Number of sample points used to screen custom kernels for sign changes.
const SIGN_SCAN_POINTS: usize = 1025;

type KernelFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A single-axis kernel: an evaluation rule plus the metadata the pipeline
/// needs without re-deriving it in hot loops.
#[derive(Clone)]
pub struct Kernel1D {
    name: String,
    eval: KernelFn,
    sup_norm: f64,
    signed: bool,
    int_k2: f64,
}

impl std::fmt::Debug for Kernel1D {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Kernel1D")
            .field("name", &self.name)
            .field("sup_norm", &self.sup_norm)
            .field("signed", &self.signed)
            .field("int_k2", &self.int_k2)
            .finish()
    }
}

impl Kernel1D {
    /// Look up a registered kernel by name.
    ///
    /// * `quartic2u` — `(3/2)(1 - (2u)²)` on [-1/2, 1/2]
    /// * `uniform`   — `1` on [-1/2, 1/2]
    /// * `triangular` — `2(1 - 2|u|)` on [-1/2, 1/2]
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "quartic2u" => Self::from_fn("quartic2u", |u| 1.5 * (1.0 - 4.0 * u * u), 1.5),
            "uniform" => Self::from_fn("uniform", |_| 1.0, 1.0),
            "triangular" => Self::from_fn("triangular", |u| 2.0 * (1.0 - 2.0 * u.abs()), 2.0),
            other => Err(Error::UnknownKernel(other.to_string())),
        }
    }

    /// Wrap a custom kernel. The callable is only consulted inside the support
    /// interval — the wrapper hard-zeroes everything outside, so the compact
    /// support invariant holds by construction. `sup_norm` is the caller's
    /// declared bound; it is checked against the sampled values.
    pub fn custom(
        name: &str,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        sup_norm: f64,
    ) -> Result<Self> {
        Self::new(name.to_string(), Arc::new(f), sup_norm)
    }

    fn from_fn(name: &str, f: impl Fn(f64) -> f64 + Send + Sync + 'static, sup: f64) -> Result<Self> {
        Self::new(name.to_string(), Arc::new(f), sup)
    }

    /// Validation happens here, once, rather than at every evaluation.
    /// Gauss–Legendre integration of `f` over [lo, hi] with panels split at
    /// the interior breakpoints, where the integrand may only be continuous.
    fn panel_integrate(f: impl Fn(f64) -> f64, lo: f64, hi: f64, breaks: &[f64]) -> f64 {
        let mut cuts = vec![lo];
        cuts.extend(breaks.iter().copied().filter(|&b| b > lo && b < hi));
        cuts.push(hi);
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let rule = QuadRule::gauss_legendre(MOMENT_QUAD_NODES);
        cuts.windows(2).map(|w| rule.scaled_to(w[0], w[1]).integrate(&f)).sum()
    }

    fn new(name: String, raw: KernelFn, sup_norm: f64) -> Result<Self> {
        if !sup_norm.is_finite() || sup_norm <= 0.0 {
            return Err(Error::InvalidKernel(format!(
                "kernel '{name}': declared sup-norm must be positive and finite"
            )));
        }
        let inner = raw.clone();
        let eval: KernelFn = Arc::new(move |u: f64| {
            if u.abs() > SUPPORT_HALFWIDTH {
                0.0
            } else {
                inner(u)
            }
        });

        // Split panels at the origin: several builtin kernels are only
        // piecewise-smooth there (|u| terms), which a single Gauss panel
        // would integrate at badly degraded order.
        let mass = Self::panel_integrate(
            |u| eval(u),
            -SUPPORT_HALFWIDTH,
            SUPPORT_HALFWIDTH,
            &[0.0],
        );
        if (mass - 1.0).abs() > 1e-8 {
            return Err(Error::InvalidKernel(format!(
                "kernel '{name}' integrates to {mass:.10}, not 1"
            )));
        }
        let int_k2 = Self::panel_integrate(
            |u| eval(u) * eval(u),
            -SUPPORT_HALFWIDTH,
            SUPPORT_HALFWIDTH,
            &[0.0],
        );

        let mut signed = false;
        let mut observed_sup: f64 = 0.0;
        for i in 0..SIGN_SCAN_POINTS {
            let u = -SUPPORT_HALFWIDTH
                + (i as f64) / (SIGN_SCAN_POINTS - 1) as f64 * (2.0 * SUPPORT_HALFWIDTH);
            let v = eval(u);
            if !v.is_finite() {
                return Err(Error::InvalidKernel(format!(
                    "kernel '{name}' is non-finite at u = {u}"
                )));
            }
            signed |= v < 0.0;
            observed_sup = observed_sup.max(v.abs());
        }
        if observed_sup > sup_norm * (1.0 + 1e-9) {
            return Err(Error::InvalidKernel(format!(
                "kernel '{name}' exceeds its declared sup-norm ({observed_sup:.6} > {sup_norm})"
            )));
        }

        Ok(Kernel1D {
            name,
            eval,
            sup_norm,
            signed,
            int_k2,
        })
    }

    #[inline]
    pub fn eval(&self, u: f64) -> f64 {
        (self.eval)(u)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Declared bound on |K|.
    pub fn sup_norm(&self) -> f64 {
        self.sup_norm
    }

    /// True if the kernel takes negative values anywhere. Signed kernels are
    /// accepted, but reports flag them: validity of the level of the test
    /// relies on nonnegativity.
    pub fn is_signed(&self) -> bool {
        self.signed
    }

    /// ∫ K(u)² du over the support.
    pub fn int_k2(&self) -> f64 {
        self.int_k2
    }

    /// ∫ K(x) K(x + u) dx — unnormalized overlap of two copies offset by `u`
    /// (in kernel support units). Zero once |u| ≥ 1.
    pub fn overlap(&self, u: f64) -> f64 {
        let lo = (-SUPPORT_HALFWIDTH).max(-SUPPORT_HALFWIDTH - u);
        let hi = SUPPORT_HALFWIDTH.min(SUPPORT_HALFWIDTH - u);
        if hi <= lo {
            return 0.0;
        }
        // The product's kinks sit where either factor has one: x = 0, x = −u.
        Self::panel_integrate(|x| self.eval(x) * self.eval(x + u), lo, hi, &[0.0, -u])
    }

    /// `overlap(u) / ∫K²` — the per-axis normalized overlap, in [-1, 1].
    pub fn overlap_t(&self, u: f64) -> f64 {
        (self.overlap(u) / self.int_k2).clamp(-1.0, 1.0)
    }
}

/// A `d`-dimensional product kernel `K(u) = Π_s K_s(u_s)`.
#[derive(Debug, Clone)]
pub struct ProductKernel {
    factors: Vec<Kernel1D>,
}

impl ProductKernel {
    pub fn new(factors: Vec<Kernel1D>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::InvalidKernel("product kernel needs ≥ 1 factor".into()));
        }
        Ok(ProductKernel { factors })
    }

    /// `d` copies of the same axis kernel.
    pub fn isotropic(axis: Kernel1D, d: usize) -> Result<Self> {
        Self::new(vec![axis; d.max(1)])
    }

    /// Registry lookup, replicated over `d` axes.
    pub fn by_name(name: &str, d: usize) -> Result<Self> {
        Self::isotropic(Kernel1D::by_name(name)?, d)
    }

    pub fn dim(&self) -> usize {
        self.factors.len()
    }

    pub fn factors(&self) -> &[Kernel1D] {
        &self.factors
    }

    /// True if any axis factor is signed.
    pub fn is_signed(&self) -> bool {
        self.factors.iter().any(Kernel1D::is_signed)
    }

    /// K(u), checking the argument dimension.
    pub fn eval(&self, u: &[f64]) -> Result<f64> {
        if u.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: u.len(),
            });
        }
        Ok(self.eval_unchecked(u))
    }

    /// K(u) without the dimension check — for hot loops that have already
    /// validated shapes.
    #[inline]
    pub fn eval_unchecked(&self, u: &[f64]) -> f64 {
        let mut prod = 1.0;
        for (k, &us) in self.factors.iter().zip(u) {
            if us.abs() > SUPPORT_HALFWIDTH {
                return 0.0;
            }
            prod *= k.eval(us);
        }
        prod
    }

    /// ∫ K(u)² du over the support box (separable product of axis moments).
    pub fn int_k2(&self) -> f64 {
        self.factors.iter().map(Kernel1D::int_k2).product()
    }

    /// Normalized overlap `t(u) = ∫K(x)K(x+u)dx / ∫K²dx ∈ [-1, 1]`,
    /// a product of the per-axis normalized overlaps.
    pub fn overlap_t(&self, u: &[f64]) -> Result<f64> {
        if u.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: u.len(),
            });
        }
        let mut t = 1.0;
        for (k, &us) in self.factors.iter().zip(u) {
            t *= k.overlap_t(us);
            if t == 0.0 {
                break;
            }
        }
        Ok(t.clamp(-1.0, 1.0))
    }

    /// Largest possible |K| value, from the declared axis sup-norms.
    pub fn sup_norm(&self) -> f64 {
        self.factors.iter().map(Kernel1D::sup_norm).product()
    }
}
