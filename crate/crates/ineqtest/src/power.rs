//! Local asymptotic power against Pitman drifts, and the optimal
//! directional weight for a single inequality or equality.
//!
//! The calculators work with population quantities: direction functions
//! delta_j, conditional scales rho_j, weights w_j, and the asymptotic
//! standard deviation sigma. Power is `1 - Phi(z_{1-alpha} - drift)` with
//! the drift assembled from weighted moment integrals
//! `eta_{s,z} = sum_j integral delta_j^s rho_j^z w_j`.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::{DomainBox, EvalGrid};
use crate::estimators::KahanSum;
use crate::gaussian;
use crate::kernel::ProductKernel;
use crate::lambda::{q_constant, LambdaSpec, Mode};
use crate::{Error, Result};

/// Below this threshold a scale function counts as vanished where a
/// negative power of it is required.
const RHO_FLOOR: f64 = 1e-12;

/// First-order drift terms within this tolerance of zero satisfy the
/// faster-rate preconditions.
pub const DRIFT_PRECONDITION_TOL: f64 = 1e-8;

/// A function of the covariate, given either as a callable or as a table
/// aligned with the query's evaluation grid.
#[derive(Clone)]
pub enum Field {
    Func(Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>),
    Table(Vec<f64>),
}

impl std::fmt::Debug for Field {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Field::Func(_) => f.write_str("Field::Func(..)"),
            Field::Table(t) => f.debug_tuple("Field::Table").field(&t.len()).finish(),
        }
    }
}

impl Field {
    pub fn func(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Field::Func(Arc::new(f))
    }

    pub fn constant(c: f64) -> Self {
        Field::Func(Arc::new(move |_: &[f64]| c))
    }

    pub fn table(values: Vec<f64>) -> Self {
        Field::Table(values)
    }

    /// Values on `grid`; a table must match its length.
    fn values(&self, grid: &EvalGrid) -> Result<Vec<f64>> {
        match self {
            Field::Func(f) => Ok((0..grid.len()).map(|g| f(grid.point(g))).collect()),
            Field::Table(t) => {
                if t.len() != grid.len() {
                    return Err(Error::DimensionMismatch {
                        expected: grid.len(),
                        got: t.len(),
                    });
                }
                Ok(t.clone())
            }
        }
    }
}

/// Which local alternative rate the drift formula targets: `RootN` for
/// n^{-1/2} drifts, `RootNh` for the faster n^{-1/2} h^{-d/4} drifts that
/// apply once the first-order term vanishes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rate {
    RootN,
    RootNh,
}

/// Inputs to a power calculation.
#[derive(Debug, Clone)]
pub struct PowerQuery {
    pub delta: Vec<Field>,
    pub rho: Vec<Field>,
    pub weights: Vec<Field>,
    /// Asymptotic standard deviation of the statistic's numerator.
    pub sigma: f64,
    pub alpha: f64,
    /// Penalty exponent; the closed-form drifts cover p = 1 and p = 2.
    pub p: f64,
    pub rate: Rate,
    pub domain: DomainBox,
    pub grid: Option<Vec<usize>>,
}

impl PowerQuery {
    /// Single-inequality query with unit weight, to be filled in.
    pub fn single(
        domain: DomainBox,
        delta: Field,
        rho: Field,
        sigma: f64,
        alpha: f64,
        p: f64,
        rate: Rate,
    ) -> Self {
        PowerQuery {
            delta: vec![delta],
            rho: vec![rho],
            weights: vec![Field::constant(1.0)],
            sigma,
            alpha,
            p,
            rate,
            domain,
            grid: None,
        }
    }

    fn check(&self) -> Result<usize> {
        let j = self.delta.len();
        if j == 0 || self.rho.len() != j || self.weights.len() != j {
            return Err(Error::InvalidConfig(format!(
                "delta, rho, and weights must have the same nonzero length; \
                 got {}, {}, {}",
                j,
                self.rho.len(),
                self.weights.len()
            )));
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "sigma must be positive and finite, got {}",
                self.sigma
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "alpha must lie strictly between 0 and 1, got {}",
                self.alpha
            )));
        }
        if self.p != 1.0 && self.p != 2.0 {
            return Err(Error::InvalidConfig(format!(
                "closed-form power is available for p = 1 or p = 2 only, got {}",
                self.p
            )));
        }
        Ok(j)
    }

    fn grid(&self) -> Result<EvalGrid> {
        match &self.grid {
            Some(per_axis) => EvalGrid::midpoint(&self.domain, per_axis),
            None => Ok(EvalGrid::default_for(&self.domain)),
        }
    }
}

/// The weighted moment integral `sum_j integral delta_j^s rho_j^z w_j`.
///
/// Negative `z` requires the scale to stay away from zero wherever the
/// weight is nonzero.
pub fn eta(s: u32, z: i32, q: &PowerQuery) -> Result<f64> {
    if !(s == 1 || s == 2) {
        return Err(Error::InvalidConfig(format!("eta: s must be 1 or 2, got {s}")));
    }
    if !(-1..=1).contains(&z) {
        return Err(Error::InvalidConfig(format!("eta: z must be -1, 0, or 1, got {z}")));
    }
    let j_count = q.check()?;
    let grid = q.grid()?;
    let mut total = KahanSum::default();
    for j in 0..j_count {
        let delta = q.delta[j].values(&grid)?;
        let rho = q.rho[j].values(&grid)?;
        let w = q.weights[j].values(&grid)?;
        for g in 0..grid.len() {
            if z < 0 && rho[g].abs() <= RHO_FLOOR && w[g] != 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "eta with z = {z}: rho vanishes at grid point {g} where \
                     the weight is nonzero"
                )));
            }
            let ds = if s == 1 { delta[g] } else { delta[g] * delta[g] };
            let rz = match z {
                0 => 1.0,
                1 => rho[g],
                _ => {
                    if w[g] == 0.0 {
                        continue;
                    }
                    1.0 / rho[g]
                }
            };
            total.add(ds * rz * w[g] * grid.cell_weight(g));
        }
    }
    Ok(total.value())
}

/// Drift, power, and the moment integrals behind them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PowerReport {
    pub drift: f64,
    pub power: f64,
    pub eta_values: BTreeMap<String, f64>,
}

fn eta_key(s: u32, z: i32) -> String {
    format!("eta_{s}_{z}")
}

/// Drift for the requested (mode, p, rate) cell, without checking the
/// faster-rate preconditions. Internal: the public calculators enforce
/// them.
fn drift_unchecked(
    mode: Mode,
    p: f64,
    rate: Rate,
    q: &PowerQuery,
) -> Result<(f64, BTreeMap<String, f64>)> {
    let mut etas = BTreeMap::new();
    let mut record = |s: u32, z: i32, q: &PowerQuery| -> Result<f64> {
        let v = eta(s, z, q)?;
        etas.insert(eta_key(s, z), v);
        Ok(v)
    };
    let drift = match (mode, p as i32, rate) {
        (Mode::OneSided, 1, Rate::RootN) => record(1, 0, q)? / (2.0 * q.sigma),
        (Mode::OneSided, 2, Rate::RootN) => {
            record(1, 1, q)? / (q.sigma * (std::f64::consts::PI / 2.0).sqrt())
        }
        (Mode::OneSided, 1, Rate::RootNh) => {
            record(2, -1, q)? / ((8.0 * std::f64::consts::PI).sqrt() * q.sigma)
        }
        (Mode::OneSided, 2, Rate::RootNh) => record(2, 0, q)? / (2.0 * q.sigma),
        (Mode::TwoSided, 1, _) => {
            record(2, -1, q)? / ((2.0 * std::f64::consts::PI).sqrt() * q.sigma)
        }
        (Mode::TwoSided, 2, _) => record(2, 0, q)? / q.sigma,
        _ => unreachable!("p validated to 1 or 2"),
    };
    Ok((drift, etas))
}

fn power_from_drift(drift: f64, alpha: f64) -> f64 {
    gaussian::upper_tail(gaussian::quantile(1.0 - alpha) - drift)
}

/// Local power of the one-sided test under the drift selected by
/// `(p, rate)`.
///
/// The faster `RootNh` rate applies only when the corresponding
/// slower-rate drift term vanishes; queries violating that precondition
/// beyond tolerance are rejected rather than silently evaluated.
pub fn local_power_inequality(q: &PowerQuery) -> Result<PowerReport> {
    q.check()?;
    if q.rate == Rate::RootNh {
        let (first, key) = match q.p as i32 {
            1 => (eta(1, 0, q)?, eta_key(1, 0)),
            _ => (eta(1, 1, q)?, eta_key(1, 1)),
        };
        if first.abs() > DRIFT_PRECONDITION_TOL {
            return Err(Error::PreconditionViolated(format!(
                "the n^(-1/2) h^(-d/4) rate requires the first-order drift \
                 term {key} to vanish, but it is {first:.6e}; use the root-n \
                 rate for this direction"
            )));
        }
    }
    let (drift, etas) = drift_unchecked(Mode::OneSided, q.p, q.rate, q)?;
    Ok(PowerReport { drift, power: power_from_drift(drift, q.alpha), eta_values: etas })
}

/// Local power of the two-sided test. The rate is the faster one by
/// construction, so `q.rate` is not consulted.
pub fn local_power_equality(q: &PowerQuery) -> Result<PowerReport> {
    q.check()?;
    let (drift, etas) = drift_unchecked(Mode::TwoSided, q.p, Rate::RootNh, q)?;
    Ok(PowerReport { drift, power: power_from_drift(drift, q.alpha), eta_values: etas })
}

/// The direction-optimal weight for a single function, with its predicted
/// power.
#[derive(Debug, Clone)]
pub struct OptimalWeight {
    /// The displayed-formula weight on the grid: direction numerator over
    /// the square root of its own norm integral.
    pub weight: Vec<f64>,
    /// `weight` scaled so the normalization `integral w rho^{2p} = 1`
    /// holds exactly.
    pub normalized_weight: Vec<f64>,
    /// |integral of weight * rho^{2p} - 1|: how far the displayed formula
    /// itself sits from the normalization it is quoted under.
    pub constraint_residual: f64,
    pub drift: f64,
    pub power: f64,
}

/// Optimal weight for one inequality (direction `max(delta, 0)`) or one
/// equality (direction `delta^2`), on the evaluation grid over `domain`.
///
/// The weight follows the displayed closed form verbatim; because that
/// form does not satisfy its quoted normalization for every input, the
/// residual is reported and an exactly normalized copy is included.
pub fn optimal_weight(
    delta: &Field,
    rho: &Field,
    spec: &LambdaSpec,
    kernel: &ProductKernel,
    domain: &DomainBox,
    grid_spec: Option<&[usize]>,
    alpha: f64,
) -> Result<OptimalWeight> {
    if spec.p != 1.0 && spec.p != 2.0 {
        return Err(Error::InvalidConfig(format!(
            "optimal weights are closed-form for p = 1 or p = 2 only, got {}",
            spec.p
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "alpha must lie strictly between 0 and 1, got {alpha}"
        )));
    }
    let grid = match grid_spec {
        Some(per_axis) => EvalGrid::midpoint(domain, per_axis)?,
        None => EvalGrid::default_for(domain),
    };
    let delta_vals = delta.values(&grid)?;
    let rho_vals = rho.values(&grid)?;
    if rho_vals.iter().any(|&r| r <= RHO_FLOOR || !r.is_finite()) {
        return Err(Error::InvalidConfig(
            "optimal weights need a strictly positive, finite scale function"
                .to_string(),
        ));
    }

    // Direction numerator and the norm integral it is divided by:
    //   one-sided:  d+ rho^{-(p+1)},  norm = integral (d+)^2 rho^{-2}
    //   two-sided:  d^2 rho^{-(p+2)}, norm = integral d^4 rho^{-4}
    let one_sided = spec.mode == Mode::OneSided;
    let mut norm = KahanSum::default();
    let mut numerator = Vec::with_capacity(grid.len());
    for g in 0..grid.len() {
        let r = rho_vals[g];
        if one_sided {
            let dp = delta_vals[g].max(0.0);
            numerator.push(dp * r.powi(-(spec.p as i32 + 1)));
            norm.add(dp * dp / (r * r) * grid.cell_weight(g));
        } else {
            let d2 = delta_vals[g] * delta_vals[g];
            numerator.push(d2 * r.powi(-(spec.p as i32 + 2)));
            norm.add(d2 * d2 / (r * r * r * r) * grid.cell_weight(g));
        }
    }
    let norm = norm.value();
    if norm <= 0.0 {
        return Err(Error::NoDirection(if one_sided {
            "the positive part of delta vanishes everywhere; no direction to \
             weight toward"
                .to_string()
        } else {
            "delta vanishes everywhere; no direction to weight toward".to_string()
        }));
    }
    let scale = norm.sqrt().recip();
    let weight: Vec<f64> = numerator.iter().map(|v| v * scale).collect();

    // How far the displayed formula sits from `integral w rho^{2p} = 1`.
    let mut constraint = KahanSum::default();
    for g in 0..grid.len() {
        constraint.add(weight[g] * rho_vals[g].powi(2 * spec.p as i32) * grid.cell_weight(g));
    }
    let constraint_value = constraint.value();
    let constraint_residual = (constraint_value - 1.0).abs();
    let normalized_weight: Vec<f64> =
        weight.iter().map(|w| w / constraint_value).collect();

    // Under the optimal weight the drift collapses to sqrt(norm) over a
    // kernel constant:
    //   one-sided p=1: / (2 sqrt(q_1))      p=2: / sqrt(q_2 pi/2)
    //   two-sided p=1: / sqrt(2 pi qbar_1)  p=2: / sqrt(qbar_2)
    let q = q_constant(spec, kernel, 1.0)?;
    let drift = match (one_sided, spec.p as i32) {
        (true, 1) => norm.sqrt() / (2.0 * q.sqrt()),
        (true, _) => norm.sqrt() / (q * std::f64::consts::PI / 2.0).sqrt(),
        (false, 1) => norm.sqrt() / (2.0 * std::f64::consts::PI * q).sqrt(),
        (false, _) => norm.sqrt() / q.sqrt(),
    };
    Ok(OptimalWeight {
        weight,
        normalized_weight,
        constraint_residual,
        drift,
        power: power_from_drift(drift, alpha),
    })
}

/// Serializable form of a field for query files: a constant or a grid
/// table.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldSpec {
    Constant(f64),
    Table(Vec<f64>),
}

impl From<&FieldSpec> for Field {
    fn from(spec: &FieldSpec) -> Field {
        match spec {
            FieldSpec::Constant(c) => Field::constant(*c),
            FieldSpec::Table(t) => Field::table(t.clone()),
        }
    }
}

/// Serializable power query, as read from a query file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerQuerySpec {
    pub mode: Mode,
    pub p: f64,
    pub alpha: f64,
    pub sigma: f64,
    pub rate: Rate,
    pub domain: DomainBox,
    #[serde(default)]
    pub grid: Option<Vec<usize>>,
    pub delta: Vec<FieldSpec>,
    pub rho: Vec<FieldSpec>,
    pub weights: Vec<FieldSpec>,
}

impl PowerQuerySpec {
    pub fn into_query(&self) -> (PowerQuery, Mode) {
        (
            PowerQuery {
                delta: self.delta.iter().map(Field::from).collect(),
                rho: self.rho.iter().map(Field::from).collect(),
                weights: self.weights.iter().map(Field::from).collect(),
                sigma: self.sigma,
                alpha: self.alpha,
                p: self.p,
                rate: self.rate,
                domain: self.domain.clone(),
                grid: self.grid.clone(),
            },
            self.mode,
        )
    }
}

/// Evaluate a deserialized query: inequality or equality per its mode.
pub fn evaluate_query(spec: &PowerQuerySpec) -> Result<PowerReport> {
    let (query, mode) = spec.into_query();
    match mode {
        Mode::OneSided => local_power_inequality(&query),
        Mode::TwoSided => local_power_equality(&query),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn std_domain() -> DomainBox {
        DomainBox::segment(0.05, 0.95).unwrap()
    }

    fn const_query(delta: f64, rho: f64, sigma: f64, p: f64, rate: Rate) -> PowerQuery {
        PowerQuery::single(
            std_domain(),
            Field::constant(delta),
            Field::constant(rho),
            sigma,
            0.05,
            p,
            rate,
        )
    }

    #[test]
    fn eta_of_unit_fields_is_the_domain_length() {
        let q = const_query(1.0, 1.0, 1.0, 1.0, Rate::RootN);
        for s in [1u32, 2] {
            for z in [-1i32, 0, 1] {
                let v = eta(s, z, &q).unwrap();
                assert!((v - 0.9).abs() < 1e-12, "eta({s},{z}) = {v}");
            }
        }
    }

    #[test]
    fn eta_of_odd_profile_cancels() {
        let mut q = const_query(0.0, 1.0, 1.0, 1.0, Rate::RootN);
        q.domain = DomainBox::segment(0.0, 1.0).unwrap();
        q.delta = vec![Field::func(|x: &[f64]| (2.0 * std::f64::consts::PI * x[0]).sin())];
        let v = eta(1, 0, &q).unwrap();
        assert!(v.abs() < 1e-12, "eta = {v}");
    }

    #[test]
    fn eta_of_quadratic_profile_matches_the_antiderivative() {
        // integral over [0.05, 0.95] of x(1-x) - 0.15 = 117/4000.
        let mut q = const_query(0.0, 1.0, 1.0, 1.0, Rate::RootN);
        q.delta = vec![Field::func(|x: &[f64]| x[0] * (1.0 - x[0]) - 0.15)];
        q.grid = Some(vec![4096]);
        let v = eta(1, 0, &q).unwrap();
        assert!((v - 0.02925).abs() < 1e-8, "eta = {v}");
    }

    #[test]
    fn eta_validates_its_arguments() {
        let q = const_query(1.0, 1.0, 1.0, 1.0, Rate::RootN);
        assert!(eta(3, 0, &q).is_err());
        assert!(eta(1, 2, &q).is_err());

        let zero_rho = {
            let mut q = const_query(1.0, 0.0, 1.0, 1.0, Rate::RootN);
            q.rho = vec![Field::constant(0.0)];
            q
        };
        assert!(eta(1, -1, &zero_rho).is_err());
        // With zero weight the vanishing scale never matters.
        let mut harmless = zero_rho;
        harmless.weights = vec![Field::constant(0.0)];
        assert_eq!(eta(1, -1, &harmless).unwrap(), 0.0);
    }

    #[test]
    fn zero_drift_recovers_the_nominal_level() {
        let q = const_query(0.0, 1.0, 1.0, 1.0, Rate::RootN);
        let rep = local_power_inequality(&q).unwrap();
        assert_eq!(rep.drift, 0.0);
        assert!((rep.power - 0.05).abs() < 1e-12, "power = {}", rep.power);
    }

    #[test]
    fn drift_equal_to_the_critical_value_gives_half() {
        // Pick delta so eta_{1,0}/(2 sigma) equals z_{0.95}.
        let z = gaussian::quantile(0.95);
        let delta = 2.0 * z / 0.9;
        let q = const_query(delta, 1.0, 1.0, 1.0, Rate::RootN);
        let rep = local_power_inequality(&q).unwrap();
        assert!((rep.drift - z).abs() < 1e-12);
        assert!((rep.power - 0.5).abs() < 1e-12, "power = {}", rep.power);
    }

    #[test]
    fn negative_drift_pushes_power_below_the_level() {
        let q = const_query(-1.0, 1.0, 1.0, 1.0, Rate::RootN);
        let rep = local_power_inequality(&q).unwrap();
        assert!(rep.drift < 0.0);
        assert!(rep.power < 0.05, "power = {}", rep.power);
    }

    #[test]
    fn faster_rate_requires_vanishing_first_order_term() {
        let q = const_query(1.0, 1.0, 1.0, 1.0, Rate::RootNh);
        let err = local_power_inequality(&q).unwrap_err();
        match err {
            Error::PreconditionViolated(msg) => {
                assert!(msg.contains("eta_1_0"), "message: {msg}");
            }
            other => panic!("expected a precondition error, got {other:?}"),
        }

        // An odd direction integrates to zero at first order, so the
        // faster rate is legitimate.
        let mut odd = const_query(0.0, 1.0, 1.0, 1.0, Rate::RootNh);
        odd.domain = DomainBox::segment(0.0, 1.0).unwrap();
        odd.delta = vec![Field::func(|x: &[f64]| (2.0 * std::f64::consts::PI * x[0]).sin())];
        let rep = local_power_inequality(&odd).unwrap();
        assert!(rep.drift > 0.0);
        assert!(rep.power > 0.05);
    }

    /// Population sigma for the flat-null homoskedastic benchmark
    /// (rho^2 = 1.2 on [0.05, 0.95]) at the given (p, mode).
    fn benchmark_sigma(p: f64, mode: Mode) -> f64 {
        let spec = LambdaSpec::new(p, mode).unwrap();
        let kernel = ProductKernel::by_name("quartic2u", 1).unwrap();
        let q = q_constant(&spec, &kernel, 1.0).unwrap();
        (q * 1.2f64.powf(p) * 0.9).sqrt()
    }

    #[test]
    fn root_n_drifts_match_frozen_benchmark_values() {
        // Unit direction against the flat-null benchmark: the four
        // precondition-free cells, frozen from closed-form composition.
        let rho = 1.2f64.sqrt();

        let sigma = benchmark_sigma(1.0, Mode::OneSided);
        assert!((sigma - 0.530334952587).abs() < 1e-9);
        let q = const_query(1.0, rho, sigma, 1.0, Rate::RootN);
        let rep = local_power_inequality(&q).unwrap();
        assert!((rep.drift - 0.84852035078).abs() < 1e-9, "drift = {}", rep.drift);
        assert!((rep.power - 0.212919174587).abs() < 1e-9, "power = {}", rep.power);

        let sigma = benchmark_sigma(2.0, Mode::OneSided);
        let q = const_query(1.0, rho, sigma, 2.0, Rate::RootN);
        let rep = local_power_inequality(&q).unwrap();
        assert!((rep.power - 0.181146548064).abs() < 1e-9, "power = {}", rep.power);

        let sigma = benchmark_sigma(1.0, Mode::TwoSided);
        let q = const_query(1.0, rho, sigma, 1.0, Rate::RootNh);
        let rep = local_power_equality(&q).unwrap();
        assert!((rep.power - 0.170067883238).abs() < 1e-9, "power = {}", rep.power);

        let sigma = benchmark_sigma(2.0, Mode::TwoSided);
        assert!((sigma - 1.24962331987).abs() < 1e-9);
        let q = const_query(1.0, rho, sigma, 2.0, Rate::RootNh);
        let rep = local_power_equality(&q).unwrap();
        assert!((rep.drift - 0.720217033158).abs() < 1e-9, "drift = {}", rep.drift);
        assert!((rep.power - 0.17757748571).abs() < 1e-9, "power = {}", rep.power);
    }

    #[test]
    fn faster_rate_drift_formulas_match_frozen_values() {
        // The faster-rate formulas themselves, evaluated on the benchmark
        // unit direction via the internal dispatcher (the public entry
        // point would reject the unit direction's nonzero first-order
        // term, by design).
        let rho = 1.2f64.sqrt();

        let sigma = benchmark_sigma(1.0, Mode::OneSided);
        let q = const_query(1.0, rho, sigma, 1.0, Rate::RootNh);
        let (drift, _) = drift_unchecked(Mode::OneSided, 1.0, Rate::RootNh, &q).unwrap();
        let power = power_from_drift(drift, 0.05);
        assert!((drift - 0.3090165258568527).abs() < 1e-9, "drift = {drift}");
        assert!((power - 0.09080126169092972).abs() < 1e-9, "power = {power}");

        let sigma = benchmark_sigma(2.0, Mode::OneSided);
        let q = const_query(1.0, rho, sigma, 2.0, Rate::RootNh);
        let (drift, _) = drift_unchecked(Mode::OneSided, 2.0, Rate::RootNh, &q).unwrap();
        let power = power_from_drift(drift, 0.05);
        assert!((power - 0.110278194835).abs() < 1e-9, "power = {power}");
    }

    #[test]
    fn equality_power_ignores_the_direction_sign() {
        let mut q = const_query(0.0, 1.0, 1.0, 2.0, Rate::RootNh);
        q.delta = vec![Field::func(|x: &[f64]| x[0] - 0.4)];
        let plus = local_power_equality(&q).unwrap();
        q.delta = vec![Field::func(|x: &[f64]| 0.4 - x[0])];
        let minus = local_power_equality(&q).unwrap();
        assert_eq!(plus.drift.to_bits(), minus.drift.to_bits());
    }

    #[test]
    fn faster_rate_constant_agrees_with_the_density_identity() {
        // 1/sqrt(8 pi) is half the standard normal density at zero.
        let lhs = 1.0 / (8.0 * std::f64::consts::PI).sqrt();
        let rhs = gaussian::pdf(0.0) / 2.0;
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn report_records_the_etas_it_used() {
        let q = const_query(0.5, 1.0, 1.0, 1.0, Rate::RootN);
        let rep = local_power_inequality(&q).unwrap();
        assert_eq!(rep.eta_values.len(), 1);
        let v = rep.eta_values.get("eta_1_0").unwrap();
        assert!((v - 0.45).abs() < 1e-12);
    }

    #[test]
    fn optimal_weight_for_flat_direction_is_the_displayed_constant() {
        let spec = LambdaSpec::new(1.0, Mode::OneSided).unwrap();
        let kernel = ProductKernel::by_name("quartic2u", 1).unwrap();
        let out = optimal_weight(
            &Field::constant(1.0),
            &Field::constant(1.0),
            &spec,
            &kernel,
            &std_domain(),
            None,
            0.05,
        )
        .unwrap();
        let expect = 1.0 / 0.9f64.sqrt();
        for w in &out.weight {
            assert!((w - expect).abs() < 1e-9, "w = {w}");
        }
        // The displayed formula misses its quoted normalization here by
        // |sqrt(L) - 1|; the normalized copy restores it exactly.
        assert!((out.constraint_residual - (1.0 - 0.9f64.sqrt())).abs() < 1e-9);
        for w in &out.normalized_weight {
            assert!((w - 1.0 / 0.9).abs() < 1e-9);
        }
        // Drift: sqrt(0.9) / (2 sqrt(q_1)).
        let q1 = q_constant(&spec, &kernel, 1.0).unwrap();
        let drift = 0.9f64.sqrt() / (2.0 * q1.sqrt());
        assert!((out.drift - drift).abs() < 1e-12);
        assert!(out.power > 0.05);
    }

    #[test]
    fn optimal_weight_is_scale_invariant_in_the_direction() {
        let spec = LambdaSpec::new(2.0, Mode::OneSided).unwrap();
        let kernel = ProductKernel::by_name("quartic2u", 1).unwrap();
        let delta = Field::func(|x: &[f64]| x[0] * (1.0 - x[0]) - 0.1);
        let scaled = Field::func(|x: &[f64]| 7.25 * (x[0] * (1.0 - x[0]) - 0.1));
        let rho = Field::func(|x: &[f64]| 0.8 + x[0]);
        let a = optimal_weight(&delta, &rho, &spec, &kernel, &std_domain(), None, 0.05).unwrap();
        let b = optimal_weight(&scaled, &rho, &spec, &kernel, &std_domain(), None, 0.05).unwrap();
        for (wa, wb) in a.weight.iter().zip(&b.weight) {
            assert!((wa - wb).abs() <= 1e-9 * wa.abs().max(1.0), "{wa} vs {wb}");
        }
    }

    #[test]
    fn optimal_weight_needs_a_direction() {
        let spec = LambdaSpec::new(1.0, Mode::OneSided).unwrap();
        let kernel = ProductKernel::by_name("quartic2u", 1).unwrap();
        let err = optimal_weight(
            &Field::constant(-1.0),
            &Field::constant(1.0),
            &spec,
            &kernel,
            &std_domain(),
            None,
            0.05,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NoDirection(_)));

        let eq_spec = LambdaSpec::new(1.0, Mode::TwoSided).unwrap();
        let err = optimal_weight(
            &Field::constant(0.0),
            &Field::constant(1.0),
            &eq_spec,
            &kernel,
            &std_domain(),
            None,
            0.05,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NoDirection(_)));
    }

    #[test]
    fn optimal_weight_rejects_vanishing_scale() {
        let spec = LambdaSpec::new(1.0, Mode::OneSided).unwrap();
        let kernel = ProductKernel::by_name("quartic2u", 1).unwrap();
        // Negative on the left half of the domain, so no inverse power
        // of it is usable there.
        let rho = Field::func(|x: &[f64]| x[0] - 0.5);
        assert!(optimal_weight(
            &Field::constant(1.0),
            &rho,
            &spec,
            &kernel,
            &std_domain(),
            None,
            0.05
        )
        .is_err());
    }

    #[test]
    fn query_spec_round_trips_and_evaluates() {
        let text = r#"{
            "mode": "inequality",
            "p": 1.0,
            "alpha": 0.05,
            "sigma": 0.530334952587,
            "rate": "root_n",
            "domain": "0.05:0.95",
            "delta": [{"constant": 1.0}],
            "rho": [{"constant": 1.0954451150103321}],
            "weights": [{"constant": 1.0}]
        }"#;
        let spec: PowerQuerySpec = serde_json::from_str(text).unwrap();
        let rep = evaluate_query(&spec).unwrap();
        assert!((rep.power - 0.212919174587).abs() < 1e-9, "power = {}", rep.power);

        let back = serde_json::to_string(&spec).unwrap();
        let again: PowerQuerySpec = serde_json::from_str(&back).unwrap();
        let rep2 = evaluate_query(&again).unwrap();
        assert_eq!(rep.power.to_bits(), rep2.power.to_bits());
    }
}
