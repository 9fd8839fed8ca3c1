//! Assembly of the studentized test statistic.
//!
//! Pipeline: evaluate the kernel estimates on a grid over the evaluation
//! domain, turn them into the J penalized integrals `gamma`, subtract the
//! centering terms `a_hat`, studentize by the plug-in standard deviation
//! built from the pairwise asymptotic-covariance matrix, and compare against
//! the upper-tail normal critical value.
//!
//! Everything here is deterministic for a fixed config: parallel sections
//! write into indexed buffers and are reduced in a fixed order, so repeated
//! runs produce bit-identical reports.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{support_margin, Dataset, DomainBox, EvalGrid};
use crate::estimators::{evaluate_grid, GridEstimates, KahanSum};
use crate::gaussian;
use crate::kernel::ProductKernel;
use crate::lambda::{
    mean_lambda, mean_lambda_mc, CpFunction, LambdaSpec, McSettings, Mode, OverlapRule,
    DEFAULT_T_GRID,
};
use crate::{Error, Result, VERSION};

/// Cells where the estimated conditional second moment falls at or below
/// this threshold are treated as empty: they contribute nothing to the
/// centering term or the variance and are tallied in the diagnostics.
pub const DEGENERATE_RHO_SQ_TOL: f64 = 1e-12;

/// Variance estimates at or below this threshold abort the test: the
/// studentized statistic would be dominated by rounding noise.
pub const DEGENERATE_SIGMA_SQ_TOL: f64 = 1e-12;

/// Pointwise inverse-SE weights are capped where the local scale estimate
/// drops below this fraction of its maximum over the grid.
pub const INVERSE_SE_FLOOR_FRACTION: f64 = 1e-3;

/// Bandwidth selection: either a literal value or the scaling rule
/// `c * sd(X_1) * n^{-1/5}` evaluated on the data at hand.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Bandwidth {
    /// Use this bandwidth as given.
    Absolute(f64),
    /// Scale the rule-of-thumb bandwidth by `c_h`.
    Rule { c_h: f64 },
}

impl Bandwidth {
    /// Resolve to a concrete bandwidth for `data`.
    pub fn resolve(&self, data: &Dataset) -> Result<f64> {
        match *self {
            Bandwidth::Absolute(h) => {
                if !h.is_finite() || h <= 0.0 {
                    return Err(Error::InvalidConfig(format!(
                        "bandwidth must be positive and finite, got {h}"
                    )));
                }
                Ok(h)
            }
            Bandwidth::Rule { c_h } => crate::simulation::bandwidth_rule(c_h, data),
        }
    }
}

/// Base weight function, before any standard-error rescaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaseWeight {
    /// w ≡ 1 on the evaluation domain.
    Uniform,
    /// w(x) = 1 / rho_hat(x), capped on near-empty cells.
    InverseSe,
    /// Caller-supplied tables, one per outcome, aligned with the evaluation
    /// grid. Values must be finite and non-negative.
    Custom(Vec<Vec<f64>>),
}

/// Weight configuration: a base weight, optionally rescaled per outcome by
/// the inverse square root of the plug-in variance it induces, so each
/// outcome contributes on a comparable scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightScheme {
    pub base: BaseWeight,
    #[serde(default)]
    pub se_rescale: bool,
}

impl WeightScheme {
    pub fn uniform() -> Self {
        WeightScheme { base: BaseWeight::Uniform, se_rescale: false }
    }

    pub fn inverse_se() -> Self {
        WeightScheme { base: BaseWeight::InverseSe, se_rescale: false }
    }

    pub fn custom(tables: Vec<Vec<f64>>) -> Self {
        WeightScheme { base: BaseWeight::Custom(tables), se_rescale: false }
    }
}

impl Default for WeightScheme {
    fn default() -> Self {
        WeightScheme::uniform()
    }
}

/// Full configuration of a single test run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestConfig {
    /// Exponent of the penalty; p >= 1.
    pub p: f64,
    /// One-sided (inequality) or two-sided (equality) penalty.
    pub mode: Mode,
    /// Kernel registry name ("quartic2u", "uniform", "triangular").
    pub kernel: String,
    pub bandwidth: Bandwidth,
    /// Closed box over which the hypothesis is evaluated.
    pub domain: DomainBox,
    #[serde(default)]
    pub weights: WeightScheme,
    /// Nominal level of the test.
    pub alpha: f64,
    /// Grid points per axis; `None` picks a dimension-based default.
    #[serde(default)]
    pub grid: Option<Vec<usize>>,
    /// Monte Carlo settings for penalty moments without a closed form.
    #[serde(default)]
    pub mc: McSettings,
}

impl TestConfig {
    /// Baseline configuration: p = 1 inequality test with the quartic
    /// kernel, rule bandwidth with unit scaling, uniform weights, 5% level.
    pub fn baseline(domain: DomainBox) -> Self {
        TestConfig {
            p: 1.0,
            mode: Mode::OneSided,
            kernel: "quartic2u".to_string(),
            bandwidth: Bandwidth::Rule { c_h: 1.0 },
            domain,
            weights: WeightScheme::uniform(),
            alpha: 0.05,
            grid: None,
            mc: McSettings::default(),
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "alpha must lie strictly between 0 and 1, got {}",
                self.alpha
            )));
        }
        if let Some(per_axis) = &self.grid {
            if per_axis.len() != self.domain.dim() {
                return Err(Error::InvalidConfig(format!(
                    "grid spec has {} axes but the domain has {}",
                    per_axis.len(),
                    self.domain.dim()
                )));
            }
            if per_axis.iter().any(|&m| m == 0) {
                return Err(Error::InvalidConfig(
                    "grid must have at least one point per axis".to_string(),
                ));
            }
        }
        self.mc.validate()
    }
}

/// Counters and resolved quantities describing how the computation went.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Bandwidth actually used, after resolving a rule if one was configured.
    pub effective_h: f64,
    /// (outcome, cell) pairs whose second-moment estimate was below the
    /// degeneracy threshold and therefore dropped from the integrals.
    pub degenerate_cell_count: usize,
    /// Estimated cross-correlations clamped into [-1, 1].
    pub clamp_count: usize,
    /// Grid cells where an inverse-SE weight hit its cap.
    pub weight_cap_count: usize,
    /// Smallest margin by which the sample's empirical range extends past
    /// the evaluation domain; negative when the data do not cover the
    /// domain. Less than h/2 signals boundary bias.
    pub support_margin: f64,
    /// Whether the kernel takes negative values (penalty moments assume a
    /// non-negative kernel; the report flags violations rather than error).
    pub signed_kernel: bool,
}

/// Complete result of a test run. Field names are stable: downstream
/// tooling parses these reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub t_stat: f64,
    pub p_value: f64,
    pub reject: bool,
    pub gamma: Vec<f64>,
    pub a_hat: Vec<f64>,
    pub sigma_hat_sq: f64,
    pub sigma_matrix: Vec<Vec<f64>>,
    pub diagnostics: Diagnostics,
    pub config: TestConfig,
    pub version: String,
}

/// Both flavors of inverse-standard-error weights for a dataset, so callers
/// can inspect either without rerunning the estimation.
#[derive(Debug, Clone)]
pub struct InverseSeWeights {
    /// Variant (a): the base weight rescaled per outcome by the inverse
    /// square root of its plug-in variance. Constant multiple of the base
    /// weight within each outcome.
    pub rescaled: Vec<Vec<f64>>,
    /// Variant (b): pointwise 1 / rho_hat(x), capped on near-empty cells.
    pub pointwise: Vec<Vec<f64>>,
    /// Plug-in variances backing variant (a), one per outcome.
    pub sigma_tilde: Vec<f64>,
    /// Number of grid cells where variant (b) hit its cap.
    pub cap_count: usize,
}

/// E[penalty(Z)] for standard normal Z, honoring the run's Monte Carlo
/// settings on exponents without a closed form.
pub(crate) fn mean_penalty(spec: &LambdaSpec, mc: &McSettings) -> Result<f64> {
    if spec.integer_p().is_some() {
        mean_lambda(spec)
    } else {
        Ok(mean_lambda_mc(spec, mc)?.0)
    }
}

/// Penalized integral of a function given by its values on a grid:
/// the integral of `penalty(g) * w` over the grid's domain.
///
/// Non-negative whenever the weights are (the penalty itself is
/// non-negative by construction).
pub fn gamma_functional(
    gvals: &[f64],
    wvals: &[f64],
    grid: &EvalGrid,
    spec: &LambdaSpec,
) -> Result<f64> {
    if gvals.len() != grid.len() {
        return Err(Error::DimensionMismatch { expected: grid.len(), got: gvals.len() });
    }
    if wvals.len() != grid.len() {
        return Err(Error::DimensionMismatch { expected: grid.len(), got: wvals.len() });
    }
    let mut acc = KahanSum::default();
    for g in 0..grid.len() {
        acc.add(spec.lambda(gvals[g]) * wvals[g] * grid.cell_weight(g));
    }
    Ok(acc.value())
}

/// Everything `run_test` needs, resolved once.
struct Pipeline {
    spec: LambdaSpec,
    kernel: ProductKernel,
    h: f64,
    grid: EvalGrid,
    est: GridEstimates,
    /// One weight table per outcome, aligned with the grid.
    weights: Vec<Vec<f64>>,
    cp: CpFunction,
    rule: OverlapRule,
    cap_count: usize,
    support_margin: f64,
}

pub(crate) fn build_grid(cfg: &TestConfig) -> Result<EvalGrid> {
    match &cfg.grid {
        Some(per_axis) => EvalGrid::midpoint(&cfg.domain, per_axis),
        None => Ok(EvalGrid::default_for(&cfg.domain)),
    }
}

fn prepare(data: &Dataset, cfg: &TestConfig) -> Result<Pipeline> {
    if data.n() < 2 {
        return Err(Error::InvalidData(
            "the test needs at least two observations".to_string(),
        ));
    }
    cfg.validate()?;
    if cfg.domain.dim() != data.dim() {
        return Err(Error::DimensionMismatch { expected: data.dim(), got: cfg.domain.dim() });
    }
    let spec = LambdaSpec::new(cfg.p, cfg.mode)?;
    let kernel = ProductKernel::by_name(&cfg.kernel, data.dim())?;
    let h = cfg.bandwidth.resolve(data)?;
    let grid = build_grid(cfg)?;
    let est = evaluate_grid(data, &kernel, h, &grid)?;
    let cp = CpFunction::new(&spec, &cfg.mc, DEFAULT_T_GRID)?;
    let rule = OverlapRule::new(&kernel);
    let (weights, cap_count) = resolve_weights(&cfg.weights, &spec, &est, &grid, &cp, &rule)?;
    let margin = support_margin(data, &cfg.domain)?;
    Ok(Pipeline {
        spec,
        kernel,
        h,
        grid,
        est,
        weights,
        cp,
        rule,
        cap_count,
        support_margin: margin,
    })
}

/// Pointwise inverse-SE weight table for one outcome, with its cap count.
fn pointwise_inverse_weights(rho_sq: &[f64], j: usize) -> Result<(Vec<f64>, usize)> {
    let max_rho_sq = rho_sq.iter().fold(0.0_f64, |a, &b| a.max(b));
    if max_rho_sq <= DEGENERATE_RHO_SQ_TOL {
        return Err(Error::DegenerateVariance(format!(
            "outcome {j}: the scale estimate vanishes everywhere on the grid; \
             inverse-SE weights are undefined (is Y identically zero, or the \
             domain empty of data?)"
        )));
    }
    let floor = INVERSE_SE_FLOOR_FRACTION * max_rho_sq.sqrt();
    let mut caps = 0usize;
    let table = rho_sq
        .iter()
        .map(|&rs| {
            let rho = rs.sqrt();
            if rho < floor {
                caps += 1;
                1.0 / floor
            } else {
                1.0 / rho
            }
        })
        .collect();
    Ok((table, caps))
}

/// Materialize the weight tables for every outcome, applying the optional
/// per-outcome standard-error rescale on top of the base weight.
fn resolve_weights(
    scheme: &WeightScheme,
    spec: &LambdaSpec,
    est: &GridEstimates,
    grid: &EvalGrid,
    cp: &CpFunction,
    rule: &OverlapRule,
) -> Result<(Vec<Vec<f64>>, usize)> {
    let nj = est.n_outcomes();
    let mut cap_count = 0usize;
    let mut tables: Vec<Vec<f64>> = Vec::with_capacity(nj);
    match &scheme.base {
        BaseWeight::Uniform => {
            for _ in 0..nj {
                tables.push(vec![1.0; grid.len()]);
            }
        }
        BaseWeight::InverseSe => {
            for j in 0..nj {
                let (table, caps) = pointwise_inverse_weights(est.rho_sq(j), j)?;
                cap_count += caps;
                tables.push(table);
            }
        }
        BaseWeight::Custom(user) => {
            if user.len() != nj {
                return Err(Error::InvalidConfig(format!(
                    "custom weights cover {} outcomes but the data has {nj}",
                    user.len()
                )));
            }
            for (j, table) in user.iter().enumerate() {
                if table.len() != grid.len() {
                    return Err(Error::InvalidConfig(format!(
                        "custom weight table for outcome {j} has {} entries, \
                         expected one per grid point ({})",
                        table.len(),
                        grid.len()
                    )));
                }
                if table.iter().any(|w| !w.is_finite() || *w < 0.0) {
                    return Err(Error::InvalidConfig(format!(
                        "custom weight table for outcome {j} must be finite \
                         and non-negative"
                    )));
                }
                tables.push(table.clone());
            }
        }
    }
    if scheme.se_rescale {
        let q_self = rule.contract(|t| cp.eval_clamped(t));
        for (j, table) in tables.iter_mut().enumerate() {
            let var = plugin_variance(est.rho_sq(j), table, grid, spec.p, q_self);
            if var <= DEGENERATE_SIGMA_SQ_TOL {
                return Err(Error::DegenerateVariance(format!(
                    "outcome {j}: plug-in variance under the base weight is \
                     numerically zero; cannot rescale by its standard error"
                )));
            }
            let scale = var.sqrt().recip();
            for w in table.iter_mut() {
                *w *= scale;
            }
        }
    }
    Ok((tables, cap_count))
}

/// q * integral of rho^{2p} w^2 over the grid, skipping degenerate cells.
fn plugin_variance(rho_sq: &[f64], w: &[f64], grid: &EvalGrid, p: f64, q: f64) -> f64 {
    let mut acc = KahanSum::default();
    for g in 0..grid.len() {
        if rho_sq[g] > DEGENERATE_RHO_SQ_TOL {
            acc.add(rho_sq[g].powf(p) * w[g] * w[g] * grid.cell_weight(g));
        }
    }
    q * acc.value()
}

/// Centering term for one outcome:
/// `h^{-d/2} * E[penalty(Z)] * integral of rho_hat^p w`.
fn a_hat_from(
    rho_sq: &[f64],
    w: &[f64],
    grid: &EvalGrid,
    p: f64,
    h: f64,
    d: usize,
    mean_penalty: f64,
) -> f64 {
    let mut acc = KahanSum::default();
    for g in 0..grid.len() {
        if rho_sq[g] > DEGENERATE_RHO_SQ_TOL {
            acc.add(rho_sq[g].powf(0.5 * p) * w[g] * grid.cell_weight(g));
        }
    }
    h.powf(-0.5 * d as f64) * mean_penalty * acc.value()
}

/// One entry of the asymptotic covariance matrix, plus the number of
/// correlation clamps it performed.
///
/// On the diagonal the estimated correlation is identically one, so the
/// overlap contraction is a single constant and the entry collapses to
/// `q * integral of rho^{2p} w^2`.
fn sigma_entry(
    est: &GridEstimates,
    grid: &EvalGrid,
    spec: &LambdaSpec,
    cp: &CpFunction,
    rule: &OverlapRule,
    weights: &[Vec<f64>],
    j: usize,
    k: usize,
) -> (f64, usize) {
    let p = spec.p;
    if j == k {
        let q_self = rule.contract(|t| cp.eval_clamped(t));
        return (plugin_variance(est.rho_sq(j), &weights[j], grid, p, q_self), 0);
    }
    let rho_sq_j = est.rho_sq(j);
    let rho_sq_k = est.rho_sq(k);
    let cross = est.cross(j, k);
    let wj = &weights[j];
    let wk = &weights[k];
    // One overlap contraction per grid point; independent across points.
    let per_cell: Vec<(f64, bool)> = (0..grid.len())
        .into_par_iter()
        .map(|g| {
            if rho_sq_j[g] <= DEGENERATE_RHO_SQ_TOL || rho_sq_k[g] <= DEGENERATE_RHO_SQ_TOL {
                return (0.0, false);
            }
            let rho_j = rho_sq_j[g].sqrt();
            let rho_k = rho_sq_k[g].sqrt();
            let t_raw = cross[g] / (rho_j * rho_k);
            let clamped = t_raw.abs() > 1.0;
            let t_hat = t_raw.clamp(-1.0, 1.0);
            let q_jk = rule.contract(|t| cp.eval_clamped(t_hat * t));
            let value = q_jk
                * rho_sq_j[g].powf(0.5 * p)
                * rho_sq_k[g].powf(0.5 * p)
                * wj[g]
                * wk[g]
                * grid.cell_weight(g);
            (value, clamped)
        })
        .collect();
    let mut acc = KahanSum::default();
    let mut clamps = 0usize;
    for (value, clamped) in per_cell {
        acc.add(value);
        clamps += clamped as usize;
    }
    (acc.value(), clamps)
}

fn degenerate_cells(est: &GridEstimates) -> usize {
    (0..est.n_outcomes())
        .map(|j| {
            est.rho_sq(j)
                .iter()
                .filter(|&&rs| rs <= DEGENERATE_RHO_SQ_TOL)
                .count()
        })
        .sum()
}

/// Centering term for outcome `j` under `cfg`, on `cfg`'s evaluation grid.
pub fn a_hat(data: &Dataset, j: usize, cfg: &TestConfig) -> Result<f64> {
    let pl = prepare(data, cfg)?;
    if j >= data.n_outcomes() {
        return Err(Error::IndexOutOfRange { index: j, n_outcomes: data.n_outcomes() });
    }
    let mean = mean_penalty(&pl.spec, &cfg.mc)?;
    Ok(a_hat_from(
        pl.est.rho_sq(j),
        &pl.weights[j],
        &pl.grid,
        pl.spec.p,
        pl.h,
        data.dim(),
        mean,
    ))
}

/// One entry of the plug-in asymptotic covariance matrix under `cfg`.
pub fn sigma_hat(data: &Dataset, j: usize, k: usize, cfg: &TestConfig) -> Result<f64> {
    let pl = prepare(data, cfg)?;
    let nj = data.n_outcomes();
    if j >= nj {
        return Err(Error::IndexOutOfRange { index: j, n_outcomes: nj });
    }
    if k >= nj {
        return Err(Error::IndexOutOfRange { index: k, n_outcomes: nj });
    }
    let (lo, hi) = if j <= k { (j, k) } else { (k, j) };
    let (value, _) = sigma_entry(&pl.est, &pl.grid, &pl.spec, &pl.cp, &pl.rule, &pl.weights, lo, hi);
    Ok(value)
}

/// Compute both inverse-standard-error weight variants for `data` under
/// `cfg`; `cfg.weights` is ignored except as the base for variant (a).
pub fn inverse_se_weights(data: &Dataset, cfg: &TestConfig) -> Result<InverseSeWeights> {
    let base_cfg = TestConfig {
        weights: WeightScheme { base: cfg.weights.base.clone(), se_rescale: false },
        ..cfg.clone()
    };
    let pl = prepare(data, &base_cfg)?;
    let nj = data.n_outcomes();
    let q_self = pl.rule.contract(|t| pl.cp.eval_clamped(t));

    let mut pointwise = Vec::with_capacity(nj);
    let mut cap_count = 0usize;
    for j in 0..nj {
        let (table, caps) = pointwise_inverse_weights(pl.est.rho_sq(j), j)?;
        cap_count += caps;
        pointwise.push(table);
    }

    let mut rescaled = Vec::with_capacity(nj);
    let mut sigma_tilde = Vec::with_capacity(nj);
    for j in 0..nj {
        let var = plugin_variance(pl.est.rho_sq(j), &pl.weights[j], &pl.grid, pl.spec.p, q_self);
        if var <= DEGENERATE_SIGMA_SQ_TOL {
            return Err(Error::DegenerateVariance(format!(
                "outcome {j}: plug-in variance under the base weight is \
                 numerically zero; cannot form inverse-SE weights"
            )));
        }
        let scale = var.sqrt().recip();
        rescaled.push(pl.weights[j].iter().map(|w| w * scale).collect());
        sigma_tilde.push(var);
    }
    Ok(InverseSeWeights { rescaled, pointwise, sigma_tilde, cap_count })
}

/// Run the full test and assemble the report.
///
/// Errors with a degenerate-variance message when the plug-in variance is
/// numerically zero — typically because Y is identically zero or no data
/// falls near the evaluation domain.
pub fn run_test(data: &Dataset, cfg: &TestConfig) -> Result<TestReport> {
    let pl = prepare(data, cfg)?;
    let nj = data.n_outcomes();
    let d = data.dim();
    let n = data.n() as f64;
    let p = pl.spec.p;
    let mean = mean_penalty(&pl.spec, &cfg.mc)?;

    let mut gamma = Vec::with_capacity(nj);
    let mut a_hats = Vec::with_capacity(nj);
    for j in 0..nj {
        gamma.push(gamma_functional(pl.est.g(j), &pl.weights[j], &pl.grid, &pl.spec)?);
        a_hats.push(a_hat_from(
            pl.est.rho_sq(j),
            &pl.weights[j],
            &pl.grid,
            p,
            pl.h,
            d,
            mean,
        ));
    }

    let mut sigma_matrix = vec![vec![0.0; nj]; nj];
    let mut clamp_count = 0usize;
    for j in 0..nj {
        for k in j..nj {
            let (value, clamps) =
                sigma_entry(&pl.est, &pl.grid, &pl.spec, &pl.cp, &pl.rule, &pl.weights, j, k);
            clamp_count += clamps;
            sigma_matrix[j][k] = value;
            sigma_matrix[k][j] = value;
        }
    }

    let mut var_acc = KahanSum::default();
    for row in &sigma_matrix {
        for &v in row {
            var_acc.add(v);
        }
    }
    let sigma_hat_sq = var_acc.value();
    if sigma_hat_sq <= DEGENERATE_SIGMA_SQ_TOL {
        return Err(Error::DegenerateVariance(format!(
            "plug-in variance is {sigma_hat_sq:.3e}; the statistic is \
             undefined. Likely causes: Y is (numerically) identically zero, \
             or no observations fall near the evaluation domain."
        )));
    }
    let sigma = sigma_hat_sq.sqrt();

    let scale = n.powf(0.5 * p) * pl.h.powf(0.5 * (p - 1.0) * d as f64);
    let mut num = KahanSum::default();
    for j in 0..nj {
        num.add(scale * gamma[j] - a_hats[j]);
    }
    let t_stat = num.value() / sigma;

    let p_value = gaussian::upper_tail(t_stat);
    let critical = gaussian::quantile(1.0 - cfg.alpha);
    let reject = t_stat > critical;

    Ok(TestReport {
        t_stat,
        p_value,
        reject,
        gamma,
        a_hat: a_hats,
        sigma_hat_sq,
        sigma_matrix,
        diagnostics: Diagnostics {
            effective_h: pl.h,
            degenerate_cell_count: degenerate_cells(&pl.est),
            clamp_count,
            weight_cap_count: pl.cap_count,
            support_margin: pl.support_margin,
            signed_kernel: pl.kernel.is_signed(),
        },
        config: cfg.clone(),
        version: VERSION.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DomainBox;
    use crate::lambda::q_constant;
    use rand_chacha::ChaCha8Rng;
    use rand_core::{RngCore, SeedableRng};

    fn unit_domain() -> DomainBox {
        DomainBox::parse("0.05:0.95").unwrap()
    }

    fn uniform01(rng: &mut ChaCha8Rng) -> f64 {
        ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    fn normal(rng: &mut ChaCha8Rng) -> f64 {
        gaussian::quantile(uniform01(rng))
    }

    /// X uniform on [0,1], Y = m(X) + noise, single outcome.
    fn synth(n: usize, seed: u64, m: impl Fn(f64) -> f64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let xi = uniform01(&mut rng);
            x.push(xi);
            y.push(m(xi) + normal(&mut rng));
        }
        Dataset::new(x, 1, y, 1).unwrap()
    }

    fn base_cfg() -> TestConfig {
        let mut cfg = TestConfig::baseline(unit_domain());
        cfg.bandwidth = Bandwidth::Absolute(0.1);
        cfg
    }

    #[test]
    fn gamma_zero_when_profile_nonpositive() {
        let grid = EvalGrid::midpoint(&unit_domain(), &[128]).unwrap();
        let spec = LambdaSpec::new(1.0, Mode::OneSided).unwrap();
        let gvals = vec![-1.0; grid.len()];
        let wvals = vec![1.0; grid.len()];
        let gamma = gamma_functional(&gvals, &wvals, &grid, &spec).unwrap();
        assert_eq!(gamma, 0.0);
    }

    #[test]
    fn gamma_of_constant_profile_is_length_times_constant() {
        let grid = EvalGrid::midpoint(&unit_domain(), &[128]).unwrap();
        let spec = LambdaSpec::new(1.0, Mode::OneSided).unwrap();
        let gvals = vec![0.7; grid.len()];
        let wvals = vec![1.0; grid.len()];
        let gamma = gamma_functional(&gvals, &wvals, &grid, &spec).unwrap();
        assert!((gamma - 0.7 * 0.9).abs() < 1e-12, "gamma = {gamma}");
    }

    #[test]
    fn gamma_matches_fine_riemann_sum_for_sine_profile() {
        // Both the grid functional and a one-million-point Riemann sum
        // approximate the same integral of max(sin(2 pi x), 0) over [0, 1]
        // (which is 1/pi); they must agree to the coarser quadrature's
        // error.
        let domain = DomainBox::parse("0:1").unwrap();
        let grid = EvalGrid::midpoint(&domain, &[4096]).unwrap();
        let spec = LambdaSpec::new(1.0, Mode::OneSided).unwrap();
        let gvals: Vec<f64> = (0..grid.len())
            .map(|g| (2.0 * std::f64::consts::PI * grid.point(g)[0]).sin())
            .collect();
        let wvals = vec![1.0; grid.len()];
        let gamma = gamma_functional(&gvals, &wvals, &grid, &spec).unwrap();

        let m = 1_000_000usize;
        let dx = 1.0 / m as f64;
        let mut oracle = 0.0;
        for i in 0..m {
            let x = (i as f64 + 0.5) * dx;
            oracle += (2.0 * std::f64::consts::PI * x).sin().max(0.0) * dx;
        }
        assert!(
            (gamma - oracle).abs() < 1e-6 * oracle.abs(),
            "gamma = {gamma}, oracle = {oracle}"
        );
        assert!((oracle - std::f64::consts::FRAC_1_PI).abs() < 1e-9);
    }

    #[test]
    fn gamma_rejects_mismatched_lengths() {
        let grid = EvalGrid::midpoint(&unit_domain(), &[16]).unwrap();
        let spec = LambdaSpec::new(1.0, Mode::OneSided).unwrap();
        let err = gamma_functional(&[0.0; 8], &[1.0; 16], &grid, &spec);
        assert!(err.is_err());
    }

    #[test]
    fn centering_term_matches_manual_integral() {
        let data = synth(400, 11, |_| 0.0);
        let cfg = base_cfg();
        let a = a_hat(&data, 0, &cfg).unwrap();

        // Rebuild the same integral from the pointwise estimator.
        let kernel = ProductKernel::by_name("quartic2u", 1).unwrap();
        let grid = EvalGrid::default_for(&cfg.domain);
        let mut acc = 0.0;
        for g in 0..grid.len() {
            let rs = crate::estimators::rho_hat_sq(&data, 0, &kernel, 0.1, grid.point(g)).unwrap();
            if rs > DEGENERATE_RHO_SQ_TOL {
                acc += rs.sqrt() * grid.cell_weight(g);
            }
        }
        let expect = (0.1f64).powf(-0.5) * mean_lambda(&LambdaSpec::new(1.0, Mode::OneSided).unwrap()).unwrap() * acc;
        assert!((a - expect).abs() <= 1e-10 * expect.abs(), "a = {a}, expect = {expect}");
    }

    #[test]
    fn single_outcome_sigma_collapses_to_q_times_power_integral() {
        let data = synth(300, 5, |x| x);
        let cfg = base_cfg();
        let sig = sigma_hat(&data, 0, 0, &cfg).unwrap();

        let kernel = ProductKernel::by_name("quartic2u", 1).unwrap();
        let spec = LambdaSpec::new(1.0, Mode::OneSided).unwrap();
        let q = q_constant(&spec, &kernel, 1.0).unwrap();
        let grid = EvalGrid::default_for(&cfg.domain);
        let est = evaluate_grid(&data, &kernel, 0.1, &grid).unwrap();
        let mut acc = 0.0;
        for g in 0..grid.len() {
            let rs = est.rho_sq(0)[g];
            if rs > DEGENERATE_RHO_SQ_TOL {
                acc += rs * grid.cell_weight(g);
            }
        }
        let expect = q * acc;
        assert!((sig - expect).abs() <= 1e-12 * expect.abs(), "sigma = {sig}, expect = {expect}");
    }

    #[test]
    fn opposite_outcomes_have_perfectly_negative_correlation_entry() {
        // With Y2 = -Y1 the estimated cross-correlation is -1 everywhere,
        // so the off-diagonal entry equals the contraction at full negative
        // overlap times the same power integral as the diagonal.
        let n = 300;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let xi = uniform01(&mut rng);
            let yi = 1.0 + normal(&mut rng);
            x.push(xi);
            y.push(yi);
            y.push(-yi);
        }
        let data = Dataset::new(x, 1, y, 2).unwrap();
        let cfg = base_cfg();
        let off = sigma_hat(&data, 0, 1, &cfg).unwrap();

        let kernel = ProductKernel::by_name("quartic2u", 1).unwrap();
        let spec = LambdaSpec::new(1.0, Mode::OneSided).unwrap();
        let cp = CpFunction::with_defaults(&spec).unwrap();
        let rule = OverlapRule::new(&kernel);
        let q_neg = rule.contract(|t| cp.eval_clamped(-t));
        let grid = EvalGrid::default_for(&cfg.domain);
        let est = evaluate_grid(&data, &kernel, 0.1, &grid).unwrap();
        let mut acc = 0.0;
        for g in 0..grid.len() {
            let rs = est.rho_sq(0)[g];
            if rs > DEGENERATE_RHO_SQ_TOL {
                acc += rs * grid.cell_weight(g);
            }
        }
        let expect = q_neg * acc;
        assert!(
            (off - expect).abs() <= 1e-9 * expect.abs().max(1.0),
            "off = {off}, expect = {expect}"
        );
        // And the matrix is symmetric by construction.
        let flipped = sigma_hat(&data, 1, 0, &cfg).unwrap();
        assert_eq!(off, flipped);
    }

    #[test]
    fn report_fields_are_on_stated_scales() {
        let data = synth(500, 3, |_| 0.0);
        let cfg = base_cfg();
        let report = run_test(&data, &cfg).unwrap();
        assert!(report.sigma_hat_sq > 0.0);
        assert!(report.gamma[0] >= 0.0);
        assert!(report.a_hat[0] > 0.0);
        assert!((report.p_value - gaussian::upper_tail(report.t_stat)).abs() < 1e-15);
        assert_eq!(report.reject, report.t_stat > gaussian::quantile(0.95));
        assert_eq!(report.version, VERSION);
        assert_eq!(report.config, cfg);
        // sigma_hat_sq aggregates the matrix.
        let total: f64 = report.sigma_matrix.iter().flatten().sum();
        assert!((report.sigma_hat_sq - total).abs() <= 1e-12 * total.abs());
        assert!((report.diagnostics.effective_h - 0.1).abs() < 1e-15);
        assert!(!report.diagnostics.signed_kernel);
    }

    #[test]
    fn strong_violation_rejects_and_null_profile_mostly_does_not() {
        let alt = synth(800, 21, |_| 1.0);
        let cfg = base_cfg();
        let report = run_test(&alt, &cfg).unwrap();
        assert!(report.reject, "flat m = 1 should reject, t = {}", report.t_stat);
        assert!(report.p_value < 0.05);

        let null = synth(800, 22, |_| -1.0);
        let report = run_test(&null, &cfg).unwrap();
        assert!(
            report.t_stat < 0.0,
            "deep inside the null the statistic should be negative, t = {}",
            report.t_stat
        );
    }

    #[test]
    fn statistic_is_invariant_to_outcome_scaling_with_fixed_weights() {
        let data = synth(250, 9, |x| 0.5 - x);
        let cfg = base_cfg();
        let base = run_test(&data, &cfg).unwrap();

        let c = 37.5;
        let scaled_y: Vec<f64> = data.y_raw().iter().map(|y| c * y).collect();
        let scaled = Dataset::new(data.x_raw().to_vec(), 1, scaled_y, 1).unwrap();
        let scaled_report = run_test(&scaled, &cfg).unwrap();
        assert!(
            (base.t_stat - scaled_report.t_stat).abs()
                <= 1e-9 * base.t_stat.abs().max(1.0),
            "t = {} vs scaled t = {}",
            base.t_stat,
            scaled_report.t_stat
        );
    }

    #[test]
    fn statistic_is_invariant_to_scaling_with_se_rescaled_weights() {
        let data = synth(250, 13, |x| x - 0.5);
        let mut cfg = base_cfg();
        cfg.weights = WeightScheme { base: BaseWeight::Uniform, se_rescale: true };
        let base = run_test(&data, &cfg).unwrap();

        let c = 4.0;
        let scaled_y: Vec<f64> = data.y_raw().iter().map(|y| c * y).collect();
        let scaled = Dataset::new(data.x_raw().to_vec(), 1, scaled_y, 1).unwrap();
        let rep = run_test(&scaled, &cfg).unwrap();
        assert!(
            (base.t_stat - rep.t_stat).abs() <= 1e-9 * base.t_stat.abs().max(1.0),
            "t = {} vs scaled t = {}",
            base.t_stat,
            rep.t_stat
        );
    }

    #[test]
    fn equality_mode_is_invariant_to_sign_flip() {
        let data = synth(250, 17, |x| (6.0 * x).sin());
        let mut cfg = base_cfg();
        cfg.mode = Mode::TwoSided;
        let base = run_test(&data, &cfg).unwrap();

        let flipped_y: Vec<f64> = data.y_raw().iter().map(|y| -y).collect();
        let flipped = Dataset::new(data.x_raw().to_vec(), 1, flipped_y, 1).unwrap();
        let rep = run_test(&flipped, &cfg).unwrap();
        assert!(
            (base.t_stat - rep.t_stat).abs() <= 1e-9 * base.t_stat.abs().max(1.0),
            "t = {} vs flipped t = {}",
            base.t_stat,
            rep.t_stat
        );
    }

    #[test]
    fn penalized_integral_grows_when_a_positive_constant_is_added() {
        let data = synth(250, 19, |_| 0.0);
        let cfg = base_cfg();
        let base = run_test(&data, &cfg).unwrap();

        let shifted_y: Vec<f64> = data.y_raw().iter().map(|y| y + 0.75).collect();
        let shifted = Dataset::new(data.x_raw().to_vec(), 1, shifted_y, 1).unwrap();
        let rep = run_test(&shifted, &cfg).unwrap();
        assert!(
            rep.gamma[0] >= base.gamma[0],
            "gamma fell from {} to {} after adding a positive constant",
            base.gamma[0],
            rep.gamma[0]
        );
    }

    #[test]
    fn zero_outcomes_error_mentions_degenerate_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let x: Vec<f64> = (0..100).map(|_| uniform01(&mut rng)).collect();
        let y = vec![0.0; 100];
        let data = Dataset::new(x, 1, y, 1).unwrap();
        let err = run_test(&data, &base_cfg()).unwrap_err();
        match err {
            Error::DegenerateVariance(msg) => {
                assert!(msg.contains("identically zero"), "message: {msg}");
            }
            other => panic!("expected a degenerate-variance error, got {other:?}"),
        }
    }

    #[test]
    fn inverse_se_weights_expose_both_variants() {
        let data = synth(300, 31, |_| 0.0);
        let cfg = base_cfg();
        let w = inverse_se_weights(&data, &cfg).unwrap();
        assert_eq!(w.pointwise.len(), 1);
        assert_eq!(w.rescaled.len(), 1);
        let grid = EvalGrid::default_for(&cfg.domain);
        assert_eq!(w.pointwise[0].len(), grid.len());

        // Variant (a) with a uniform base is a constant table.
        let first = w.rescaled[0][0];
        assert!(w.rescaled[0].iter().all(|&v| (v - first).abs() < 1e-15));
        assert!((first - w.sigma_tilde[0].sqrt().recip()).abs() < 1e-15);

        // Variant (b) inverts the local scale wherever it is healthy.
        let kernel = ProductKernel::by_name("quartic2u", 1).unwrap();
        let est = evaluate_grid(&data, &kernel, 0.1, &grid).unwrap();
        let mut checked = 0;
        for g in 0..grid.len() {
            let rho = est.rho_sq(0)[g].sqrt();
            if rho > 0.5 {
                assert!((w.pointwise[0][g] - 1.0 / rho).abs() < 1e-12);
                checked += 1;
            }
        }
        assert!(checked > 100, "too few healthy cells to make the check meaningful");
    }

    #[test]
    fn inverse_se_weights_cap_in_empty_regions() {
        // Data confined to [0, 0.4] leaves the upper half of the domain
        // empty; pointwise weights there must be capped, not infinite.
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for _ in 0..200 {
            x.push(0.4 * uniform01(&mut rng));
            y.push(1.0 + 0.1 * normal(&mut rng));
        }
        let data = Dataset::new(x, 1, y, 1).unwrap();
        let w = inverse_se_weights(&data, &base_cfg()).unwrap();
        assert!(w.cap_count > 0);
        assert!(w.pointwise[0].iter().all(|v| v.is_finite()));
    }

    #[test]
    fn config_validation_rejects_bad_settings() {
        let data = synth(50, 41, |_| 0.0);
        let mut cfg = base_cfg();
        cfg.alpha = 0.0;
        assert!(run_test(&data, &cfg).is_err());

        let mut cfg = base_cfg();
        cfg.grid = Some(vec![64, 64]);
        assert!(run_test(&data, &cfg).is_err());

        let mut cfg = base_cfg();
        cfg.bandwidth = Bandwidth::Absolute(-0.1);
        assert!(run_test(&data, &cfg).is_err());

        let mut cfg = base_cfg();
        cfg.kernel = "nonexistent".to_string();
        assert!(run_test(&data, &cfg).is_err());
    }

    #[test]
    fn custom_weights_must_match_grid_and_be_nonnegative() {
        let data = synth(50, 43, |_| 0.0);
        let mut cfg = base_cfg();
        cfg.grid = Some(vec![32]);
        cfg.weights = WeightScheme::custom(vec![vec![1.0; 31]]);
        assert!(run_test(&data, &cfg).is_err());

        cfg.weights = WeightScheme::custom(vec![vec![-1.0; 32]]);
        assert!(run_test(&data, &cfg).is_err());

        cfg.weights = WeightScheme::custom(vec![vec![2.0; 32]]);
        assert!(run_test(&data, &cfg).is_ok());
    }

    #[test]
    fn config_round_trips_through_json() {
        let mut cfg = base_cfg();
        cfg.weights = WeightScheme { base: BaseWeight::InverseSe, se_rescale: true };
        cfg.grid = Some(vec![256]);
        let text = serde_json::to_string(&cfg).unwrap();
        let back: TestConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, back);

        // Rule bandwidths round-trip through the untagged representation.
        let mut cfg = base_cfg();
        cfg.bandwidth = Bandwidth::Rule { c_h: 1.5 };
        let text = serde_json::to_string(&cfg).unwrap();
        let back: TestConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn report_serializes_with_stable_field_names() {
        let data = synth(200, 47, |_| 0.0);
        let report = run_test(&data, &base_cfg()).unwrap();
        let value: serde_json::Value = serde_json::to_value(&report).unwrap();
        for key in [
            "t_stat",
            "p_value",
            "reject",
            "gamma",
            "a_hat",
            "sigma_hat_sq",
            "sigma_matrix",
            "diagnostics",
            "config",
            "version",
        ] {
            assert!(value.get(key).is_some(), "missing report field {key}");
        }
        let diag = value.get("diagnostics").unwrap();
        for key in [
            "effective_h",
            "degenerate_cell_count",
            "clamp_count",
            "weight_cap_count",
            "support_margin",
            "signed_kernel",
        ] {
            assert!(diag.get(key).is_some(), "missing diagnostics field {key}");
        }
    }

    #[test]
    fn repeated_runs_are_bit_identical() {
        let data = synth(400, 53, |x| 0.25 - x);
        let cfg = base_cfg();
        let a = run_test(&data, &cfg).unwrap();
        let b = run_test(&data, &cfg).unwrap();
        assert_eq!(a.t_stat.to_bits(), b.t_stat.to_bits());
        assert_eq!(a.sigma_hat_sq.to_bits(), b.sigma_hat_sq.to_bits());
    }
}
