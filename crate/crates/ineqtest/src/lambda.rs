//! Moments of Λ_p applied to standard normals.
//!
//! Three ingredients of the statistic's centering and scale live here:
//!
//! * `mean_lambda` — E Λ_p(Z), the centering mean;
//! * `cov_lambda_pair` — c_p(t) = Cov(Λ_p(√(1−t²)Z₁ + tZ₂), Λ_p(Z₂)), the
//!   covariance kernel the variance estimator integrates;
//! * `q_constant` — ∫_{[−1,1]^d} c_p(t_scale·t̄(u)) du, the overlap integral
//!   that multiplies ∫ρ^{2p}w² in the single-outcome variance.
//!
//! c_p has closed forms for p = 1 (both modes), one-sided p = 2, and
//! two-sided integer even p (polynomial in t via product-moment
//! identities). Everywhere else it is estimated once by
//! common-random-number Monte Carlo on a fixed 201-point t-grid,
//! interpolated with a monotone cubic, and memoized, so repeated
//! evaluations are deterministic and cheap.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::gaussian;
use crate::kernel::ProductKernel;
use crate::quad::QuadRule;
use crate::{Error, Result};

/// Hypothesis form, which fixes the transform Λ_p.
///
/// Inequality testing uses the one-sided power Λ_p(v) = max{v, 0}^p; the
/// equality variant replaces it with |v|^p.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "inequality")]
    OneSided,
    #[serde(rename = "equality")]
    TwoSided,
}

/// Exponent and sidedness of the Λ_p transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaSpec {
    pub p: f64,
    pub mode: Mode,
}

impl LambdaSpec {
    pub fn new(p: f64, mode: Mode) -> Result<Self> {
        if !p.is_finite() || p < 1.0 {
            return Err(Error::InvalidConfig(format!("exponent p must be ≥ 1, got {p}")));
        }
        Ok(Self { p, mode })
    }

    /// p as an integer when it is one (pow can then use the fast path).
    pub(crate) fn integer_p(&self) -> Option<i32> {
        if self.p.fract() == 0.0 && self.p <= i32::MAX as f64 {
            Some(self.p as i32)
        } else {
            None
        }
    }

    /// Λ_p(v).
    #[inline]
    pub fn lambda(&self, v: f64) -> f64 {
        let base = match self.mode {
            Mode::OneSided => v.max(0.0),
            Mode::TwoSided => v.abs(),
        };
        match self.integer_p() {
            Some(k) => base.powi(k),
            None => base.powf(self.p),
        }
    }
}

/// Settings for the Monte Carlo fallbacks.
///
/// `draws` counts individual normal pairs; with `antithetic` set, draws are
/// consumed as ±pairs (an odd count is rounded down to the nearest even).
/// Defaults: 200 000 draws, antithetic, fixed seed — accurate to ~1e−3 for
/// the covariance values, which enter only as fixed multiplicative
/// constants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct McSettings {
    pub draws: usize,
    pub seed: u64,
    pub antithetic: bool,
}

pub const DEFAULT_MC_DRAWS: usize = 200_000;
pub const DEFAULT_MC_SEED: u64 = 271_828_182_845;
/// Node count of the t-grid backing interpolated c_p curves (odd, so that
/// t = 0 and t = ±1 are grid points).
pub const DEFAULT_T_GRID: usize = 201;

impl Default for McSettings {
    fn default() -> Self {
        Self { draws: DEFAULT_MC_DRAWS, seed: DEFAULT_MC_SEED, antithetic: true }
    }
}

impl McSettings {
    pub fn validate(&self) -> Result<()> {
        if self.draws < 10_000 {
            return Err(Error::InvalidConfig(format!(
                "mc draws must be ≥ 10000 for usable constants, got {}",
                self.draws
            )));
        }
        Ok(())
    }
}

/// (m)!! with (−1)!! = 0!! = 1.
fn double_factorial(m: i64) -> f64 {
    let mut acc = 1.0;
    let mut k = m;
    while k > 1 {
        acc *= k as f64;
        k -= 2;
    }
    acc
}

/// E|Z|^p for integer p ≥ 0: (p−1)!! for even p, (p−1)!!·√(2/π) for odd p.
fn abs_moment_int(p: i32) -> f64 {
    let df = double_factorial(p as i64 - 1);
    if p % 2 == 0 {
        df
    } else {
        df * (2.0 / std::f64::consts::PI).sqrt()
    }
}

/// E Λ_p(Z) for standard normal Z: closed form at integer p, Monte Carlo
/// (default settings) otherwise.
pub fn mean_lambda(spec: &LambdaSpec) -> Result<f64> {
    LambdaSpec::new(spec.p, spec.mode)?;
    if let Some(k) = spec.integer_p() {
        let full = abs_moment_int(k);
        return Ok(match spec.mode {
            Mode::OneSided => 0.5 * full,
            Mode::TwoSided => full,
        });
    }
    Ok(mean_lambda_mc(spec, &McSettings::default())?.0)
}

/// Monte Carlo estimate of E Λ_p(Z) with its standard error.
pub fn mean_lambda_mc(spec: &LambdaSpec, mc: &McSettings) -> Result<(f64, f64)> {
    LambdaSpec::new(spec.p, spec.mode)?;
    mc.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(mc.seed);
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    let units = if mc.antithetic { mc.draws / 2 } else { mc.draws };
    for _ in 0..units {
        let z = standard_normal(&mut rng);
        let v = if mc.antithetic {
            0.5 * (spec.lambda(z) + spec.lambda(-z))
        } else {
            spec.lambda(z)
        };
        sum += v;
        sum_sq += v * v;
    }
    let m = units as f64;
    let mean = sum / m;
    let var = (sum_sq / m - mean * mean).max(0.0);
    Ok((mean, (var / (m - 1.0)).sqrt()))
}

/// One uniform-to-normal draw via the inverse CDF; reproducible across
/// platforms because both the generator and the quantile are fixed
/// algorithms.
#[inline]
fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // 53-bit mantissa, centered: u ∈ (0, 1) strictly.
    let u = ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0);
    gaussian::quantile(u)
}

/// Accepts a correlation that may have drifted past ±1 by floating-point
/// error (≤ 1e−9), clamping it; anything farther out is an error at this
/// layer.
fn clamp_correlation(t: f64) -> Result<f64> {
    if t.is_finite() && t.abs() <= 1.0 {
        Ok(t)
    } else if t.is_finite() && t.abs() <= 1.0 + 1e-9 {
        Ok(t.signum())
    } else {
        Err(Error::CorrelationOutOfRange(t))
    }
}

/// c_1(t) for the one-sided transform: [t(π/2 + arcsin t) + √(1−t²) − 1]/(2π).
fn c1_one_sided(t: f64) -> f64 {
    use std::f64::consts::PI;
    (t * (PI / 2.0 + t.asin()) + (1.0 - t * t).sqrt() - 1.0) / (2.0 * PI)
}

/// c_1(t) for the two-sided transform: (2/π)(√(1−t²) + t·arcsin t − 1).
fn c1_two_sided(t: f64) -> f64 {
    use std::f64::consts::PI;
    (2.0 / PI) * ((1.0 - t * t).sqrt() + t * t.asin() - 1.0)
}

/// c_2(t) for the one-sided transform:
/// t²/2 + ((1+2t²)·arcsin t + 3t√(1−t²))/(2π).
///
/// Obtained by integrating the Gaussian pair identity
/// d/dt E[f(X)g(Y)] = E[f′(X)g′(Y)] from independence, with
/// f = g = Λ_2 and E[Λ_2′(X)Λ_2′(Y)] = 4·E[X⁺Y⁺] known in closed form.
/// Endpoints: c_2(1) = 5/4 = Var Λ_2(Z), c_2(−1) = −1/4 = −(EΛ_2)².
fn c2_one_sided(t: f64) -> f64 {
    use std::f64::consts::PI;
    t * t / 2.0
        + ((1.0 + 2.0 * t * t) * t.asin() + 3.0 * t * (1.0 - t * t).sqrt()) / (2.0 * PI)
}

/// E[X^p Y^p] for a standard bivariate normal with correlation t and even
/// integer p, as polynomial coefficients in t (index = power of t):
/// Σ_k C(p,k)² k! μ_{p−k}² t^k with μ_m the centered normal moments.
fn even_product_moment_coeffs(p: i32) -> Vec<f64> {
    let p = p as usize;
    let mut coeffs = vec![0.0; p + 1];
    let binom = |n: usize, k: usize| -> f64 {
        let mut acc = 1.0;
        for i in 0..k {
            acc = acc * (n - i) as f64 / (i + 1) as f64;
        }
        acc
    };
    let factorial = |k: usize| -> f64 { (1..=k).map(|i| i as f64).product() };
    for k in 0..=p {
        if (p - k) % 2 != 0 {
            continue;
        }
        let mu = double_factorial((p - k) as i64 - 1);
        coeffs[k] = binom(p, k).powi(2) * factorial(k) * mu * mu;
    }
    coeffs
}

/// Var Λ_p(Z) for integer p (the c_p(1) endpoint).
fn variance_lambda_int(spec: &LambdaSpec, p: i32) -> f64 {
    let second = match spec.mode {
        Mode::OneSided => 0.5 * abs_moment_int(2 * p),
        Mode::TwoSided => abs_moment_int(2 * p),
    };
    let mean = match spec.mode {
        Mode::OneSided => 0.5 * abs_moment_int(p),
        Mode::TwoSided => abs_moment_int(p),
    };
    second - mean * mean
}

// ----- interpolated Monte Carlo curve --------------------------------------

#[derive(PartialEq, Eq, Hash, Clone)]
struct CurveKey {
    mode: Mode,
    p_bits: u64,
    mc: McSettings,
    grid: usize,
}

/// c_p(t) tabulated on a uniform t-grid with monotone cubic (Fritsch–Carlson)
/// interpolation. Known-exact values are pinned: c_p(0) = 0 always, and the
/// t = ±1 endpoints at integer p.
struct CpCurve {
    ys: Vec<f64>,
    slopes: Vec<f64>,
    /// Two-sided c_p is even in t; the curve then tabulates |t| and mirrors.
    even: bool,
}

impl CpCurve {
    fn eval(&self, t: f64) -> f64 {
        let t = if self.even { t.abs() } else { t };
        let n = self.ys.len();
        let pos = (t + 1.0) * ((n - 1) as f64) / 2.0;
        let k = (pos.floor() as usize).min(n - 2);
        let s = pos - k as f64;
        let (y0, y1) = (self.ys[k], self.ys[k + 1]);
        let h = 2.0 / (n - 1) as f64;
        let (d0, d1) = (self.slopes[k] * h, self.slopes[k + 1] * h);
        let s2 = s * s;
        let s3 = s2 * s;
        y0 * (2.0 * s3 - 3.0 * s2 + 1.0)
            + y1 * (-2.0 * s3 + 3.0 * s2)
            + d0 * (s3 - 2.0 * s2 + s)
            + d1 * (s3 - s2)
    }
}

/// Fritsch–Carlson slopes for uniformly spaced data: harmonic mean of
/// neighboring secants when they agree in sign, zero otherwise, with
/// shape-limited one-sided endpoint formulas.
fn monotone_slopes(ys: &[f64], h: f64) -> Vec<f64> {
    let n = ys.len();
    let sec: Vec<f64> = ys.windows(2).map(|w| (w[1] - w[0]) / h).collect();
    let mut d = vec![0.0; n];
    for k in 1..n - 1 {
        let (a, b) = (sec[k - 1], sec[k]);
        if a * b > 0.0 {
            d[k] = 2.0 * a * b / (a + b);
        }
    }
    let endpoint = |s0: f64, s1: f64| -> f64 {
        let mut e = 1.5 * s0 - 0.5 * s1;
        if e * s0 <= 0.0 {
            e = 0.0;
        } else if s0 * s1 < 0.0 && e.abs() > 3.0 * s0.abs() {
            e = 3.0 * s0;
        }
        e
    };
    d[0] = endpoint(sec[0], sec[if n > 2 { 1 } else { 0 }]);
    d[n - 1] = endpoint(sec[n - 2], sec[if n > 2 { n - 3 } else { n - 2 }]);
    d
}

fn curve_cache() -> &'static Mutex<HashMap<CurveKey, Arc<CpCurve>>> {
    static CACHE: OnceLock<Mutex<HashMap<CurveKey, Arc<CpCurve>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Draws the shared normal pairs used for every node of one curve (common
/// random numbers: node-to-node differences are then smooth in t).
fn draw_pairs(mc: &McSettings) -> Vec<(f64, f64)> {
    let units = if mc.antithetic { mc.draws / 2 } else { mc.draws };
    let mut rng = ChaCha8Rng::seed_from_u64(mc.seed);
    (0..units)
        .map(|_| {
            let z1 = standard_normal(&mut rng);
            let z2 = standard_normal(&mut rng);
            (z1, z2)
        })
        .collect()
}

/// Sample covariance of (Λ_p(√(1−t²)z₁ + t z₂), Λ_p(z₂)) over fixed pairs.
fn mc_cov_at(spec: &LambdaSpec, t: f64, pairs: &[(f64, f64)], antithetic: bool) -> f64 {
    let c = (1.0 - t * t).max(0.0).sqrt();
    let m = pairs.len() as f64;
    let (mut s_ab, mut s_a, mut s_b) = (0.0, 0.0, 0.0);
    for &(z1, z2) in pairs {
        let x = c * z1 + t * z2;
        if antithetic {
            let (a, b) = (spec.lambda(x), spec.lambda(z2));
            let (a2, b2) = (spec.lambda(-x), spec.lambda(-z2));
            s_ab += 0.5 * (a * b + a2 * b2);
            s_a += 0.5 * (a + a2);
            s_b += 0.5 * (b + b2);
        } else {
            let (a, b) = (spec.lambda(x), spec.lambda(z2));
            s_ab += a * b;
            s_a += a;
            s_b += b;
        }
    }
    s_ab / m - (s_a / m) * (s_b / m)
}

fn build_curve(spec: &LambdaSpec, mc: &McSettings, grid: usize) -> Result<Arc<CpCurve>> {
    if grid < 5 || grid % 2 == 0 {
        return Err(Error::InvalidConfig(format!(
            "t-grid size must be odd and ≥ 5, got {grid}"
        )));
    }
    let key = CurveKey { mode: spec.mode, p_bits: spec.p.to_bits(), mc: *mc, grid };
    if let Some(curve) = curve_cache().lock().unwrap().get(&key) {
        return Ok(curve.clone());
    }

    let even = spec.mode == Mode::TwoSided;
    let pairs = draw_pairs(mc);
    let mid = grid / 2;
    let mut ys = vec![0.0; grid];
    for k in 0..grid {
        if even && k < mid {
            continue; // filled by mirroring below
        }
        let t = -1.0 + 2.0 * k as f64 / (grid - 1) as f64;
        ys[k] = if k == mid {
            0.0 // independence: exact zero
        } else {
            mc_cov_at(spec, t, &pairs, mc.antithetic)
        };
    }
    if let Some(p) = spec.integer_p() {
        ys[grid - 1] = variance_lambda_int(spec, p);
        ys[0] = match spec.mode {
            Mode::TwoSided => ys[grid - 1],
            Mode::OneSided => {
                // Λ_p(−Z)Λ_p(Z) ≡ 0, so the covariance is −(E Λ_p)².
                let m = 0.5 * abs_moment_int(p);
                -m * m
            }
        };
    }
    if even {
        for k in 0..mid {
            ys[k] = ys[grid - 1 - k];
        }
    }
    let slopes = monotone_slopes(&ys, 2.0 / (grid - 1) as f64);
    let curve = Arc::new(CpCurve { ys, slopes, even });
    curve_cache().lock().unwrap().insert(key, curve.clone());
    Ok(curve)
}

// ----- public covariance interface -----------------------------------------

enum CpRoute {
    ClosedOneSidedP1,
    ClosedOneSidedP2,
    ClosedTwoSidedP1,
    /// Two-sided even integer p: polynomial coefficients of E[X^pY^p] in t,
    /// minus the squared mean.
    EvenPolynomial { coeffs: Vec<f64>, mean_sq: f64 },
    Curve(Arc<CpCurve>),
}

/// Evaluator for c_p(t), routed to a closed form when one exists and to the
/// memoized Monte Carlo curve otherwise. Construct once per test run; `eval`
/// is lock-free.
pub struct CpFunction {
    route: CpRoute,
}

impl CpFunction {
    pub fn new(spec: &LambdaSpec, mc: &McSettings, t_grid: usize) -> Result<Self> {
        LambdaSpec::new(spec.p, spec.mode)?;
        mc.validate()?;
        let route = match (spec.mode, spec.integer_p()) {
            (Mode::OneSided, Some(1)) => CpRoute::ClosedOneSidedP1,
            (Mode::OneSided, Some(2)) => CpRoute::ClosedOneSidedP2,
            (Mode::TwoSided, Some(1)) => CpRoute::ClosedTwoSidedP1,
            (Mode::TwoSided, Some(p)) if p % 2 == 0 => {
                let mean = abs_moment_int(p);
                CpRoute::EvenPolynomial {
                    coeffs: even_product_moment_coeffs(p),
                    mean_sq: mean * mean,
                }
            }
            _ => CpRoute::Curve(build_curve(spec, mc, t_grid)?),
        };
        Ok(Self { route })
    }

    pub fn with_defaults(spec: &LambdaSpec) -> Result<Self> {
        Self::new(spec, &McSettings::default(), DEFAULT_T_GRID)
    }

    /// c_p(t); t is validated and floating-point drift past ±1 clamped.
    pub fn eval(&self, t: f64) -> Result<f64> {
        Ok(self.eval_clamped(clamp_correlation(t)?))
    }

    /// c_p(t) assuming t ∈ [−1, 1] already.
    #[inline]
    pub(crate) fn eval_clamped(&self, t: f64) -> f64 {
        match &self.route {
            CpRoute::ClosedOneSidedP1 => c1_one_sided(t),
            CpRoute::ClosedOneSidedP2 => c2_one_sided(t),
            CpRoute::ClosedTwoSidedP1 => c1_two_sided(t),
            CpRoute::EvenPolynomial { coeffs, mean_sq } => {
                let mut acc = 0.0;
                for &c in coeffs.iter().rev() {
                    acc = acc * t + c;
                }
                acc - mean_sq
            }
            CpRoute::Curve(curve) => curve.eval(t),
        }
    }
}

/// c_p(t) = Cov(Λ_p(√(1−t²)Z₁ + tZ₂), Λ_p(Z₂)) with default Monte Carlo
/// settings on the routes that need simulation.
pub fn cov_lambda_pair(spec: &LambdaSpec, t: f64) -> Result<f64> {
    CpFunction::with_defaults(spec)?.eval(t)
}

/// Forced Monte Carlo estimate of c_p(t), with a linearization-based
/// standard error; used to cross-check the closed forms.
pub fn cov_lambda_pair_mc(spec: &LambdaSpec, t: f64, mc: &McSettings) -> Result<(f64, f64)> {
    LambdaSpec::new(spec.p, spec.mode)?;
    mc.validate()?;
    let t = clamp_correlation(t)?;
    let pairs = draw_pairs(mc);
    let c = (1.0 - t * t).max(0.0).sqrt();
    let m = pairs.len() as f64;
    // Per antithetic unit: u = mean of products, s/r = means of the factors.
    let (mut su, mut ss, mut sr) = (0.0, 0.0, 0.0);
    let (mut suu, mut sss, mut srr) = (0.0, 0.0, 0.0);
    let (mut sus, mut sur, mut ssr) = (0.0, 0.0, 0.0);
    for &(z1, z2) in &pairs {
        let x = c * z1 + t * z2;
        let (u, s, r) = if mc.antithetic {
            let (a, b) = (spec.lambda(x), spec.lambda(z2));
            let (a2, b2) = (spec.lambda(-x), spec.lambda(-z2));
            (0.5 * (a * b + a2 * b2), 0.5 * (a + a2), 0.5 * (b + b2))
        } else {
            let (a, b) = (spec.lambda(x), spec.lambda(z2));
            (a * b, a, b)
        };
        su += u;
        ss += s;
        sr += r;
        suu += u * u;
        sss += s * s;
        srr += r * r;
        sus += u * s;
        sur += u * r;
        ssr += s * r;
    }
    let (mu, ms, mr) = (su / m, ss / m, sr / m);
    let est = mu - ms * mr;
    // Influence of unit i on est: ψ_i = u_i − m̄s·r_i − m̄r·s_i + m̄s·m̄r.
    let var_u = suu / m - mu * mu;
    let var_s = sss / m - ms * ms;
    let var_r = srr / m - mr * mr;
    let cov_us = sus / m - mu * ms;
    let cov_ur = sur / m - mu * mr;
    let cov_sr = ssr / m - ms * mr;
    let var_psi = (var_u + ms * ms * var_r + mr * mr * var_s - 2.0 * ms * cov_ur
        - 2.0 * mr * cov_us
        + 2.0 * ms * mr * cov_sr)
        .max(0.0);
    Ok((est, (var_psi / (m - 1.0)).sqrt()))
}

// ----- overlap-contracted q integrals --------------------------------------

/// Quadrature rule for ∫_{[−1,1]^d} f(Π_k t̄_k(u_k)) du, precontracted to the
/// overlap values: `contract(f) = Σ_i w_i · f(tprod_i)`.
///
/// The integrand is even in every coordinate (each t̄_k is), so the rule
/// folds to [0,1] per axis — 41 Gauss–Legendre nodes each — and doubles the
/// weights, which also keeps the |u|-type kinks of non-smooth kernels at a
/// panel edge where Gauss nodes handle them best.
pub(crate) struct OverlapRule {
    tprod: Vec<f64>,
    weight: Vec<f64>,
}

pub(crate) const OVERLAP_NODES_PER_AXIS: usize = 41;

impl OverlapRule {
    pub fn new(kernel: &ProductKernel) -> Self {
        let rule = QuadRule::gauss_legendre(OVERLAP_NODES_PER_AXIS).scaled_to(0.0, 1.0);
        let d = kernel.dim();
        let per_axis: Vec<Vec<f64>> = kernel
            .factors()
            .iter()
            .map(|k1| rule.nodes.iter().map(|&u| k1.overlap_t(u)).collect())
            .collect();
        let n = OVERLAP_NODES_PER_AXIS;
        let total = n.pow(d as u32);
        let mut tprod = Vec::with_capacity(total);
        let mut weight = Vec::with_capacity(total);
        let mut index = vec![0usize; d];
        for _ in 0..total {
            let mut t = 1.0;
            let mut w = 1.0;
            for k in 0..d {
                t *= per_axis[k][index[k]];
                w *= 2.0 * rule.weights[index[k]];
            }
            tprod.push(t);
            weight.push(w);
            for k in (0..d).rev() {
                index[k] += 1;
                if index[k] < n {
                    break;
                }
                index[k] = 0;
            }
        }
        Self { tprod, weight }
    }

    #[inline]
    pub fn contract(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.tprod.iter().zip(&self.weight).map(|(&t, &w)| w * f(t)).sum()
    }
}

/// q_p(t_scale) = ∫_{[−1,1]^d} c_p(t_scale · t̄(u)) du for the given kernel,
/// where t̄(u) is the product of per-axis overlap correlations. With
/// t_scale = 1 this is the q_p (one-sided) or q̄_p (two-sided) constant of
/// the single-outcome variance; intermediate t_scale values are the
/// cross-outcome correlation factors.
pub fn q_constant(spec: &LambdaSpec, kernel: &ProductKernel, t_scale: f64) -> Result<f64> {
    let ts = clamp_correlation(t_scale)?;
    let cp = CpFunction::with_defaults(spec)?;
    let rule = OverlapRule::new(kernel);
    Ok(rule.contract(|t| cp.eval_clamped(ts * t)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn one_sided(p: f64) -> LambdaSpec {
        LambdaSpec::new(p, Mode::OneSided).unwrap()
    }

    fn two_sided(p: f64) -> LambdaSpec {
        LambdaSpec::new(p, Mode::TwoSided).unwrap()
    }

    #[test]
    fn lambda_transform_definitions() {
        let s1 = one_sided(2.0);
        assert_eq!(s1.lambda(-3.0), 0.0);
        assert_eq!(s1.lambda(3.0), 9.0);
        let s2 = two_sided(2.0);
        assert_eq!(s2.lambda(-3.0), 9.0);
        assert_eq!(two_sided(1.5).lambda(-4.0), 8.0);
        assert!(LambdaSpec::new(0.9, Mode::OneSided).is_err());
        assert!(LambdaSpec::new(f64::NAN, Mode::OneSided).is_err());
    }

    #[test]
    fn mean_lambda_integer_closed_forms() {
        // Half-moments of |Z|, frozen from 30-digit arithmetic.
        let expect = [
            (1.0, 0.39894228040143268),
            (2.0, 0.5),
            (3.0, 0.79788456080286536),
            (4.0, 1.5),
        ];
        for (p, v) in expect {
            assert_abs_diff_eq!(mean_lambda(&one_sided(p)).unwrap(), v, epsilon = 1e-15);
            assert_abs_diff_eq!(mean_lambda(&two_sided(p)).unwrap(), 2.0 * v, epsilon = 1e-15);
        }
    }

    #[test]
    fn mean_lambda_mc_route_and_mode_doubling() {
        // Non-integer p goes through MC; antithetic pairing makes the
        // two-sided mean exactly double the one-sided one draw by draw.
        let a = mean_lambda(&one_sided(2.5)).unwrap();
        let b = mean_lambda(&two_sided(2.5)).unwrap();
        assert_eq!(b, 2.0 * a);
        // And the MC value must sit near the Γ-function truth
        // E(Z⁺)^2.5 = 2^{1.25}Γ(1.75)/(2√π) ≈ 0.61663.
        let (est, se) = mean_lambda_mc(&one_sided(2.5), &McSettings::default()).unwrap();
        assert!((est - 0.6166342).abs() < 4.0 * se.max(1e-4), "est {est}, se {se}");
    }

    #[test]
    fn closed_form_c1_spot_values() {
        let cases = [
            (0.0, 0.0),
            (0.25, 0.067499995830375396),
            (0.5, 0.14534394743021934),
            (-0.5, -0.10465605256978066),
            (1.0, 0.34084505690810466),
        ];
        let spec = one_sided(1.0);
        for (t, v) in cases {
            assert_abs_diff_eq!(cov_lambda_pair(&spec, t).unwrap(), v, epsilon = 1e-15);
        }
        // t = −1: products vanish, covariance = −(EΛ₁)².
        let m = 0.39894228040143268f64;
        assert_abs_diff_eq!(cov_lambda_pair(&spec, -1.0).unwrap(), -m * m, epsilon = 1e-15);
    }

    #[test]
    fn closed_form_two_sided_p1() {
        let spec = two_sided(1.0);
        assert_abs_diff_eq!(
            cov_lambda_pair(&spec, 0.5).unwrap(),
            0.081375789720877373,
            epsilon = 1e-15
        );
        // Endpoint is Var|Z| = 1 − 2/π on both sides (even function).
        for t in [1.0, -1.0] {
            assert_abs_diff_eq!(
                cov_lambda_pair(&spec, t).unwrap(),
                0.36338022763241866,
                epsilon = 1e-15
            );
        }
        for t in [0.3, 0.77] {
            assert_eq!(
                cov_lambda_pair(&spec, t).unwrap(),
                cov_lambda_pair(&spec, -t).unwrap()
            );
        }
    }

    #[test]
    fn two_sided_even_p_is_polynomial_in_t() {
        let spec = two_sided(2.0);
        for t in [-1.0, -0.3, 0.0, 0.5, 0.9, 1.0] {
            assert_abs_diff_eq!(cov_lambda_pair(&spec, t).unwrap(), 2.0 * t * t, epsilon = 1e-13);
        }
        // p = 4: E[X⁴Y⁴] = 9 + 72t² + 24t⁴ ⇒ c̄₄(t) = 72t² + 24t⁴.
        let spec4 = two_sided(4.0);
        assert_abs_diff_eq!(cov_lambda_pair(&spec4, 0.5).unwrap(), 19.5, epsilon = 1e-12);
        assert_abs_diff_eq!(cov_lambda_pair(&spec4, 1.0).unwrap(), 96.0, epsilon = 1e-12);
    }

    #[test]
    fn closed_form_c2_spot_values() {
        // One-sided p = 2 spot values frozen from a high-precision polar
        // integral for E[(X⁺)²(Y⁺)²].
        let spec = one_sided(2.0);
        let cases = [
            (0.25, 0.19206805884256223),
            (0.5, 0.45674833578317202),
            (0.75, 0.80492817746035384),
            (0.9, 1.0592380405930802),
            (-0.5, -0.20674833578317202),
            (-0.25, -0.12956805884256223),
            (-0.75, -0.24242817746035384),
            (0.0, 0.0),
            (1.0, 1.25),
            (-1.0, -0.25),
        ];
        for (t, v) in cases {
            assert_abs_diff_eq!(cov_lambda_pair(&spec, t).unwrap(), v, epsilon = 2e-15);
        }
    }

    #[test]
    fn mc_curve_pins_exact_endpoints_and_zero() {
        // Odd one-sided powers have no closed form here; the interpolated
        // curve route still pins endpoints and t=0 exactly:
        // c₃(1) = 15/2 − 2/π, c₃(−1) = −(EΛ₃)² = −2/π.
        let spec = one_sided(3.0);
        let two_over_pi = 2.0 / std::f64::consts::PI;
        assert_abs_diff_eq!(
            cov_lambda_pair(&spec, 1.0).unwrap(),
            7.5 - two_over_pi,
            epsilon = 1e-13
        );
        assert_abs_diff_eq!(
            cov_lambda_pair(&spec, -1.0).unwrap(),
            -two_over_pi,
            epsilon = 1e-13
        );
        assert_eq!(cov_lambda_pair(&spec, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn mc_curve_tracks_an_independent_mc_run() {
        // Curve route (p = 3) against a fresh direct Monte Carlo estimate at
        // off-node points: interpolation plus common-random-number noise must
        // stay inside the fresh run's own error band plus slack.
        let spec = one_sided(3.0);
        let mc = McSettings { draws: 120_000, seed: 777, antithetic: true };
        for t in [-0.83, -0.41, 0.17, 0.58, 0.94] {
            let curve = cov_lambda_pair(&spec, t).unwrap();
            let (est, se) = cov_lambda_pair_mc(&spec, t, &mc).unwrap();
            assert!(
                (curve - est).abs() <= 4.0 * se + 0.02,
                "t = {t}: curve {curve}, fresh {est}, se {se}"
            );
        }
    }

    #[test]
    fn closed_form_agrees_with_forced_mc_within_three_ses() {
        let mc = McSettings { draws: 60_000, seed: 91, antithetic: true };
        for spec in [one_sided(1.0), one_sided(2.0)] {
            for t in [-0.9, -0.5, 0.0, 0.5, 0.9] {
                let truth = cov_lambda_pair(&spec, t).unwrap();
                let (est, se) = cov_lambda_pair_mc(&spec, t, &mc).unwrap();
                assert!(
                    (est - truth).abs() <= 3.0 * se.max(1e-6),
                    "p = {}, t = {t}: est {est}, truth {truth}, se {se}",
                    spec.p
                );
            }
        }
    }

    #[test]
    fn correlation_clamping_rules() {
        let spec = one_sided(1.0);
        assert!(cov_lambda_pair(&spec, 1.0 + 5e-10).is_ok());
        assert!(cov_lambda_pair(&spec, -1.0 - 5e-10).is_ok());
        assert!(matches!(
            cov_lambda_pair(&spec, 1.1),
            Err(Error::CorrelationOutOfRange(_))
        ));
        assert!(cov_lambda_pair(&spec, f64::NAN).is_err());
    }

    #[test]
    fn q_constants_match_frozen_oracles() {
        let k1 = ProductKernel::by_name("quartic2u", 1).unwrap();
        // One-sided p=1: quadrature of the closed form against the overlap
        // polynomial, frozen from 30-digit arithmetic.
        let q1 = q_constant(&one_sided(1.0), &k1, 1.0).unwrap();
        assert_abs_diff_eq!(q1, 0.26042144623627378, epsilon = 1e-12);
        // One-sided p=2, same construction over the p=2 closed form.
        let q2 = q_constant(&one_sided(2.0), &k1, 1.0).unwrap();
        assert_abs_diff_eq!(q2, 0.88659976646733801, epsilon = 1e-12);
        // Two-sided p=1.
        let q1bar = q_constant(&two_sided(1.0), &k1, 1.0).unwrap();
        assert_abs_diff_eq!(q1bar, 0.2083524516117618, epsilon = 1e-12);
        // Two-sided p=2 is exactly 2∫t̄², a rational number.
        let q2bar = q_constant(&two_sided(2.0), &k1, 1.0).unwrap();
        assert_abs_diff_eq!(q2bar, 1.2049062049062049, epsilon = 1e-13);
    }

    #[test]
    fn q_constant_other_kernels_and_dimensions() {
        // Uniform kernel: t̄(u) = 1 − |u|, so the two-sided p=2 constant is
        // 2∫(1−|u|)²du = 4/3.
        let ku = ProductKernel::by_name("uniform", 1).unwrap();
        assert_abs_diff_eq!(
            q_constant(&two_sided(2.0), &ku, 1.0).unwrap(),
            4.0 / 3.0,
            epsilon = 1e-12
        );
        // d=2 separability for the polynomial route: 2(∫t̄²)².
        let k2 = ProductKernel::by_name("quartic2u", 2).unwrap();
        let int_tbar_sq = 1.2049062049062049f64 / 2.0;
        assert_abs_diff_eq!(
            q_constant(&two_sided(2.0), &k2, 1.0).unwrap(),
            2.0 * int_tbar_sq * int_tbar_sq,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            q_constant(&two_sided(2.0), &k2, 1.0).unwrap(),
            0.72589948131181065,
            epsilon = 1e-10
        );
        // One-sided p=1 in two dimensions, frozen oracle value.
        assert_abs_diff_eq!(
            q_constant(&one_sided(1.0), &k2, 1.0).unwrap(),
            0.20409579569,
            epsilon = 1e-8
        );
    }

    #[test]
    fn q_constant_scaling_behavior() {
        let k1 = ProductKernel::by_name("quartic2u", 1).unwrap();
        let spec = one_sided(1.0);
        let q_full = q_constant(&spec, &k1, 1.0).unwrap();
        let q_half = q_constant(&spec, &k1, 0.5).unwrap();
        assert!(q_full > q_half && q_half > 0.0);
        assert_eq!(q_constant(&spec, &k1, 0.0).unwrap(), 0.0);
        // MC-backed spec: pinned zero at t=0 keeps this exact too.
        assert_eq!(q_constant(&one_sided(2.5), &k1, 0.0).unwrap(), 0.0);
        assert!(q_constant(&spec, &k1, 1.2).is_err());
    }

    #[test]
    fn curve_interpolation_stays_between_bracketing_nodes() {
        let spec = one_sided(3.0);
        let f = CpFunction::with_defaults(&spec).unwrap();
        let grid = DEFAULT_T_GRID;
        let h = 2.0 / (grid - 1) as f64;
        let mut worst: f64 = 0.0;
        for k in 0..grid - 1 {
            let t0 = -1.0 + k as f64 * h;
            let (y0, y1) = (f.eval(t0).unwrap(), f.eval(t0 + h).unwrap());
            let (lo, hi) = (y0.min(y1), y0.max(y1));
            for frac in [0.25, 0.5, 0.75] {
                let y = f.eval(t0 + frac * h).unwrap();
                // Monotone interpolation never overshoots its bracket.
                worst = worst.max((y - hi).max(lo - y));
            }
        }
        assert!(worst <= 1e-12, "overshoot {worst}");
    }

    #[test]
    fn mc_settings_validation_and_determinism() {
        assert!(McSettings { draws: 5000, seed: 1, antithetic: true }.validate().is_err());
        let spec = one_sided(2.5);
        let a = cov_lambda_pair(&spec, 0.37).unwrap();
        let b = cov_lambda_pair(&spec, 0.37).unwrap();
        assert_eq!(a, b);
    }
}
