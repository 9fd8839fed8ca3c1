//! Data-generating processes, the bandwidth scaling rule, and Monte Carlo
//! experiment campaigns over (process, sample size, bandwidth scale, weight)
//! grids.
//!
//! Campaigns are reproducible to the bit for a fixed base seed: every
//! replication derives its own seed from (base seed, cell id, replication
//! index), so the worker count and scheduling order cannot change any
//! number in the result.

use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, DomainBox};
use crate::estimators::KahanSum;
use crate::gaussian;
use crate::lambda::{LambdaSpec, McSettings, Mode};
use crate::statistic::{run_test, Bandwidth, BaseWeight, TestConfig, WeightScheme};
use crate::{Error, Result};

type FieldFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// A regression data-generating process: Y = m(X) + s(X) * noise, with X
/// uniform on a box and standard normal noise independent of X.
#[derive(Clone)]
pub struct DgpSpec {
    name: String,
    mean: FieldFn,
    noise: FieldFn,
    support: DomainBox,
}

impl std::fmt::Debug for DgpSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DgpSpec")
            .field("name", &self.name)
            .field("support", &self.support)
            .finish()
    }
}

impl DgpSpec {
    /// A process with caller-supplied mean and noise-scale functions.
    /// Both must be finite on the support; the noise scale non-negative.
    pub fn custom(
        name: impl Into<String>,
        support: DomainBox,
        mean: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        noise: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        DgpSpec {
            name: name.into(),
            mean: Arc::new(mean),
            noise: Arc::new(noise),
            support,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.support.dim()
    }

    pub fn support(&self) -> &DomainBox {
        &self.support
    }

    /// Regression function m(x).
    pub fn mean(&self, x: &[f64]) -> f64 {
        (self.mean)(x)
    }

    /// Conditional noise scale s(x).
    pub fn noise_scale(&self, x: &[f64]) -> f64 {
        (self.noise)(x)
    }

    /// Covariate density: uniform on the support box.
    pub fn density(&self, x: &[f64]) -> f64 {
        if self.support.contains(x) {
            1.0 / self.support.volume()
        } else {
            0.0
        }
    }
}

/// Default offsets for the quadratic alternatives `m(x) = x(1-x) - c`,
/// indexed by process number 1..=5.
const QUADRATIC_OFFSETS: [f64; 5] = [0.25, 0.20, 0.15, 0.10, 0.05];

/// Build a named benchmark process.
///
/// Names are `dgp0`..`dgp5` or `sine`, suffixed with `-homo` (unit noise)
/// or `-hetero` (noise scale x). `dgp0` is the flat null m = 0; `dgp1`
/// through `dgp5` are `m(x) = x(1-x) - c` with c walking down from 0.25 to
/// 0.05; `sine` is `m(x) = sin(2 pi x)`. All use X uniform on [0, 1].
///
/// `c_m` overrides the offset for the quadratic processes and is rejected
/// for the others.
pub fn make_dgp(name: &str, c_m: Option<f64>) -> Result<DgpSpec> {
    let (family, noise_kind) = name.split_once('-').ok_or_else(|| {
        Error::InvalidConfig(format!(
            "unknown process '{name}'; expected e.g. 'dgp0-homo', 'dgp3-hetero', 'sine-homo'"
        ))
    })?;
    let noise: FieldFn = match noise_kind {
        "homo" => Arc::new(|_: &[f64]| 1.0),
        "hetero" => Arc::new(|x: &[f64]| x[0]),
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown noise suffix '{other}' in '{name}'; use 'homo' or 'hetero'"
            )))
        }
    };
    let mean: FieldFn = match family {
        "dgp0" => {
            if c_m.is_some() {
                return Err(Error::InvalidConfig(
                    "dgp0 has no offset parameter; drop c_m".to_string(),
                ));
            }
            Arc::new(|_: &[f64]| 0.0)
        }
        "sine" => {
            if c_m.is_some() {
                return Err(Error::InvalidConfig(
                    "the sine process has no offset parameter; drop c_m".to_string(),
                ));
            }
            Arc::new(|x: &[f64]| (2.0 * std::f64::consts::PI * x[0]).sin())
        }
        _ => {
            let idx: usize = family
                .strip_prefix("dgp")
                .and_then(|s| s.parse().ok())
                .filter(|k| (1..=5).contains(k))
                .ok_or_else(|| {
                    Error::InvalidConfig(format!(
                        "unknown process family '{family}'; known: dgp0..dgp5, sine"
                    ))
                })?;
            let c = c_m.unwrap_or(QUADRATIC_OFFSETS[idx - 1]);
            if !c.is_finite() {
                return Err(Error::InvalidConfig(format!("offset c_m must be finite, got {c}")));
            }
            Arc::new(move |x: &[f64]| x[0] * (1.0 - x[0]) - c)
        }
    };
    Ok(DgpSpec {
        name: name.to_string(),
        mean,
        noise,
        support: DomainBox::segment(0.0, 1.0)?,
    })
}

fn uniform01(rng: &mut rand_chacha::ChaCha8Rng) -> f64 {
    use rand_core::RngCore;
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Draw `n` observations from `dgp`. Deterministic in `seed`, independent
/// of platform: uniforms come from a counter-based generator and normals
/// from the inverse CDF.
pub fn draw(dgp: &DgpSpec, n: usize, seed: u64) -> Result<Dataset> {
    use rand_core::SeedableRng;
    if n == 0 {
        return Err(Error::InvalidData("cannot draw an empty sample".to_string()));
    }
    let d = dgp.dim();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::with_capacity(n * d);
    let mut y = Vec::with_capacity(n);
    let mut point = vec![0.0; d];
    for _ in 0..n {
        for (axis, slot) in point.iter_mut().enumerate() {
            let u = uniform01(&mut rng);
            *slot = dgp.support.lo()[axis] + u * dgp.support.side(axis);
        }
        let eps = gaussian::quantile(uniform01(&mut rng));
        x.extend_from_slice(&point);
        y.push(dgp.mean(&point) + dgp.noise_scale(&point) * eps);
    }
    Dataset::new(x, d, y, 1)
}

/// Rule-of-thumb bandwidth: `c_h * sd(X first axis) * n^{-1/5}`.
///
/// Multi-dimensional data still keys off the first axis; pick an absolute
/// bandwidth instead if the axes have very different scales.
pub fn bandwidth_rule(c_h: f64, data: &Dataset) -> Result<f64> {
    if !c_h.is_finite() || c_h <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "bandwidth scale must be positive and finite, got {c_h}"
        )));
    }
    let sd = data.sample_sd_axis(0)?;
    if sd <= 0.0 {
        return Err(Error::InvalidData(
            "the first covariate axis has zero sample variance; the bandwidth \
             rule is undefined (supply an absolute bandwidth instead)"
                .to_string(),
        ));
    }
    // c_h multiplies last so scaling it rescales the result exactly.
    Ok(c_h * (sd * (data.n() as f64).powf(-0.2)))
}

/// One campaign: every process crossed with every sample size, bandwidth
/// scale, and weight scheme.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub dgps: Vec<DgpSpec>,
    pub sample_sizes: Vec<usize>,
    pub bandwidth_scales: Vec<f64>,
    pub weight_schemes: Vec<WeightScheme>,
    pub p: f64,
    pub mode: Mode,
    pub kernel: String,
    pub domain: DomainBox,
    pub alpha: f64,
    pub replications: usize,
    pub base_seed: u64,
    pub grid: Option<Vec<usize>>,
    pub mc: McSettings,
}

impl ExperimentConfig {
    /// The benchmark defaults: quartic kernel, domain [0.05, 0.95],
    /// p = 1 inequality test at the 5% level, 1000 replications.
    pub fn baseline() -> Self {
        ExperimentConfig {
            dgps: Vec::new(),
            sample_sizes: Vec::new(),
            bandwidth_scales: Vec::new(),
            weight_schemes: vec![WeightScheme::uniform()],
            p: 1.0,
            mode: Mode::OneSided,
            kernel: "quartic2u".to_string(),
            domain: DomainBox::segment(0.05, 0.95).expect("static segment"),
            alpha: 0.05,
            replications: 1000,
            base_seed: 12345,
            grid: None,
            mc: McSettings::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.dgps.is_empty()
            || self.sample_sizes.is_empty()
            || self.bandwidth_scales.is_empty()
            || self.weight_schemes.is_empty()
        {
            return Err(Error::InvalidConfig(
                "experiment needs at least one process, sample size, bandwidth \
                 scale, and weight scheme"
                    .to_string(),
            ));
        }
        if self.replications == 0 {
            return Err(Error::InvalidConfig("replications must be at least 1".to_string()));
        }
        LambdaSpec::new(self.p, self.mode)?;
        for dgp in &self.dgps {
            if dgp.dim() != self.domain.dim() {
                return Err(Error::DimensionMismatch {
                    expected: self.domain.dim(),
                    got: dgp.dim(),
                });
            }
        }
        Ok(())
    }
}

/// Outcome of one campaign cell.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CellResult {
    pub dgp: String,
    pub n: usize,
    pub c_h: f64,
    pub weight: String,
    pub p: f64,
    pub mode: String,
    /// Fraction of replications rejecting; failed replications count as
    /// non-rejections.
    pub reject_rate: f64,
    /// Binomial Monte Carlo standard error, sqrt(r(1-r)/R).
    pub mc_se: f64,
    /// Mean statistic over the replications that completed.
    pub mean_t: f64,
    pub failures: usize,
    pub replications: usize,
    pub runtime_secs: f64,
}

/// All cells of a campaign, in deterministic configuration order.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub cells: Vec<CellResult>,
    pub total_runtime_secs: f64,
}

/// Curve of rejection rates against the bandwidth scale, for plotting.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FigureCurve {
    pub dgp: String,
    pub n: usize,
    pub weight: String,
    pub points: Vec<FigurePoint>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FigurePoint {
    pub c_h: f64,
    pub reject_rate: f64,
    pub mc_se: f64,
}

fn fnv1a64(s: &str) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for b in s.as_bytes() {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for replication `r` of the cell identified by `cell`: mixes the
/// base seed with the cell id and the replication counter so streams never
/// collide across cells and never depend on execution order.
fn replication_seed(base_seed: u64, cell: &str, r: usize) -> u64 {
    splitmix64(splitmix64(base_seed ^ fnv1a64(cell)).wrapping_add(r as u64))
}

/// Human-readable label for a weight scheme, used in cell keys and CSV.
pub fn weight_label(scheme: &WeightScheme) -> String {
    let base = match &scheme.base {
        BaseWeight::Uniform => "uniform",
        BaseWeight::InverseSe => "inverse-se",
        BaseWeight::Custom(_) => "custom",
    };
    if scheme.se_rescale {
        format!("{base}+rescale")
    } else {
        base.to_string()
    }
}

fn mode_label(mode: Mode) -> &'static str {
    match mode {
        Mode::OneSided => "inequality",
        Mode::TwoSided => "equality",
    }
}

/// Run the full campaign. Cells execute in configuration order;
/// replications within a cell run in parallel but aggregate in index
/// order, so results are identical for any worker count.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let start = Instant::now();
    let mut cells = Vec::new();
    for dgp in &cfg.dgps {
        for &n in &cfg.sample_sizes {
            for &c_h in &cfg.bandwidth_scales {
                for scheme in &cfg.weight_schemes {
                    cells.push(run_cell(cfg, dgp, n, c_h, scheme)?);
                }
            }
        }
    }
    Ok(ExperimentResult { cells, total_runtime_secs: start.elapsed().as_secs_f64() })
}

fn run_cell(
    cfg: &ExperimentConfig,
    dgp: &DgpSpec,
    n: usize,
    c_h: f64,
    scheme: &WeightScheme,
) -> Result<CellResult> {
    let started = Instant::now();
    let weight = weight_label(scheme);
    let cell_id = format!("{}|n={}|c_h={}|w={}", dgp.name(), n, c_h, weight);
    let test_cfg = TestConfig {
        p: cfg.p,
        mode: cfg.mode,
        kernel: cfg.kernel.clone(),
        bandwidth: Bandwidth::Rule { c_h },
        domain: cfg.domain.clone(),
        weights: scheme.clone(),
        alpha: cfg.alpha,
        grid: cfg.grid.clone(),
        mc: cfg.mc.clone(),
    };

    // Option per replication: reject flag and statistic, or a failure.
    let outcomes: Vec<Option<(bool, f64)>> = (0..cfg.replications)
        .into_par_iter()
        .map(|r| {
            let seed = replication_seed(cfg.base_seed, &cell_id, r);
            let data = draw(dgp, n, seed).ok()?;
            let report = run_test(&data, &test_cfg).ok()?;
            Some((report.reject, report.t_stat))
        })
        .collect();

    let mut rejects = 0usize;
    let mut failures = 0usize;
    let mut t_sum = KahanSum::default();
    for outcome in &outcomes {
        match outcome {
            Some((reject, t)) => {
                rejects += usize::from(*reject);
                t_sum.add(*t);
            }
            None => failures += 1,
        }
    }
    let r_total = cfg.replications as f64;
    let completed = cfg.replications - failures;
    let reject_rate = rejects as f64 / r_total;
    let mc_se = (reject_rate * (1.0 - reject_rate) / r_total).sqrt();
    let mean_t = if completed > 0 { t_sum.value() / completed as f64 } else { f64::NAN };

    Ok(CellResult {
        dgp: dgp.name().to_string(),
        n,
        c_h,
        weight,
        p: cfg.p,
        mode: mode_label(cfg.mode).to_string(),
        reject_rate,
        mc_se,
        mean_t,
        failures,
        replications: cfg.replications,
        runtime_secs: started.elapsed().as_secs_f64(),
    })
}

impl ExperimentResult {
    /// CSV with one row per cell. Stable column set; numbers print in
    /// Rust's shortest round-trip form, so output is byte-reproducible.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("dgp,n,c_h,weight,p,mode,reject_rate,mc_se,failures\n");
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                c.dgp, c.n, c.c_h, c.weight, c.p, c.mode, c.reject_rate, c.mc_se, c.failures
            ));
        }
        out
    }

    /// Rejection-rate curves against the bandwidth scale, grouped per
    /// (process, sample size, weight scheme) in first-seen order.
    pub fn figure_data(&self) -> Vec<FigureCurve> {
        let mut curves: Vec<FigureCurve> = Vec::new();
        for c in &self.cells {
            let found = curves
                .iter_mut()
                .find(|cv| cv.dgp == c.dgp && cv.n == c.n && cv.weight == c.weight);
            let curve = match found {
                Some(cv) => cv,
                None => {
                    curves.push(FigureCurve {
                        dgp: c.dgp.clone(),
                        n: c.n,
                        weight: c.weight.clone(),
                        points: Vec::new(),
                    });
                    curves.last_mut().unwrap()
                }
            };
            curve.points.push(FigurePoint {
                c_h: c.c_h,
                reject_rate: c.reject_rate,
                mc_se: c.mc_se,
            });
        }
        curves
    }
}

/// Population variance of the statistic's numerator under `dgp`:
/// the overlap constant times the grid integral of the population
/// `rho^{2p}` against the squared weights from `cfg`.
///
/// With standard-error rescaling configured this is identically 1 by
/// construction.
pub fn pop_sigma_sq(dgp: &DgpSpec, cfg: &TestConfig) -> Result<f64> {
    use crate::data::EvalGrid;
    use crate::estimators::pop_rho_sq;
    use crate::kernel::ProductKernel;
    use crate::lambda::q_constant;

    if dgp.dim() != cfg.domain.dim() {
        return Err(Error::DimensionMismatch { expected: dgp.dim(), got: cfg.domain.dim() });
    }
    let spec = LambdaSpec::new(cfg.p, cfg.mode)?;
    let kernel = ProductKernel::by_name(&cfg.kernel, dgp.dim())?;
    let q = q_constant(&spec, &kernel, 1.0)?;
    let grid = match &cfg.grid {
        Some(per_axis) => EvalGrid::midpoint(&cfg.domain, per_axis)?,
        None => EvalGrid::default_for(&cfg.domain),
    };

    let custom = match &cfg.weights.base {
        BaseWeight::Custom(tables) => {
            if tables.len() != 1 || tables[0].len() != grid.len() {
                return Err(Error::InvalidConfig(
                    "population variance with custom weights needs exactly one \
                     table aligned with the evaluation grid"
                        .to_string(),
                ));
            }
            Some(&tables[0])
        }
        _ => None,
    };

    let mut acc = KahanSum::default();
    for g in 0..grid.len() {
        let rho_sq = pop_rho_sq(dgp, &kernel, grid.point(g))?;
        if rho_sq <= 0.0 {
            continue;
        }
        let integrand = match &cfg.weights.base {
            // w = 1.
            BaseWeight::Uniform => rho_sq.powf(cfg.p),
            // w = 1/rho, so rho^{2p} w^2 = rho^{2(p-1)}.
            BaseWeight::InverseSe => rho_sq.powf(cfg.p - 1.0),
            BaseWeight::Custom(_) => {
                let w = custom.unwrap()[g];
                rho_sq.powf(cfg.p) * w * w
            }
        };
        acc.add(integrand * grid.cell_weight(g));
    }
    let base = q * acc.value();
    if cfg.weights.se_rescale {
        if base <= 0.0 {
            return Err(Error::DegenerateVariance(
                "population variance under the base weight is zero; cannot \
                 rescale"
                    .to_string(),
            ));
        }
        return Ok(1.0);
    }
    Ok(base)
}
